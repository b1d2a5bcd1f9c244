//! The trainable CTR network: wiring resolution from an architecture,
//! weight allocation, forward prediction, and exact parameter/FLOP
//! accounting. Gradients live in [`backward`], the Adam training loop in
//! [`train`].

mod backward;
mod train;

pub use backward::{loss_and_grads, BlockGrads, ModelGrads};
pub use train::{train, EvalPoint, TrainConfig, TrainOutcome};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CtrDataset;
use crate::error::{Error, Result};
use crate::search_space::{validate, Architecture, BlockType, FeatureSpec, N_BLOCKS};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// One draw from a normal distribution via Box-Muller; deterministic for a
/// given rng stream.
pub fn sample_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sample_uniform_init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.gen_range(-bound..=bound)
}

/// Where a block's dense-side input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseSource {
    RawDense,
    Block(usize),
}

/// Resolved operator shape of a non-empty block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Mlp { units: usize, fan_in: usize },
    /// Pairwise inner-product sum over `k` aligned vectors (scalar out).
    Fm { k: usize },
    /// All pairwise dots including self-interactions, `k(k+1)/2` wide.
    DpPairs { k: usize },
    /// Dot-product block fed only the dense-side group: element-wise
    /// square of the aligned vector.
    DpSquare,
}

/// Resolved input plan of one non-empty block.
#[derive(Debug, Clone)]
pub struct BlockWiring {
    pub index: usize,
    /// Dense-side inputs in concatenation order: raw dense first when
    /// selected, then predecessor outputs ascending. Zero-width sources
    /// are dropped.
    pub dense_sources: Vec<(DenseSource, usize)>,
    pub dense_width: usize,
    pub takes_sparse: bool,
    /// FM/DP only: the dense-side group is linearly projected to the
    /// embedding width whenever its width differs from it.
    pub aligned: bool,
    pub kind: BlockKind,
    pub out_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalSource {
    RawDense,
    SparseField(usize),
    Block(usize),
}

/// Full input plan: per-block wiring plus the final linear block's
/// collection of untouched raw groups and sink outputs.
#[derive(Debug, Clone)]
pub struct Wiring {
    pub blocks: Vec<Option<BlockWiring>>,
    pub final_sources: Vec<(FinalSource, usize)>,
    pub final_width: usize,
    pub n_dense: usize,
    pub n_sparse: usize,
    pub embedding_dim: usize,
}

/// Resolves the dataflow of `arch` under `spec`: who consumes the raw
/// feature groups, each block's input widths and operator shape, and what
/// the final linear block collects.
pub fn resolve_wiring(arch: &Architecture, spec: &FeatureSpec) -> Result<Wiring> {
    let violations = validate(arch);
    if !violations.is_empty() {
        return Err(Error::InvalidArchitecture(violations));
    }
    let dim = spec.embedding_dim;
    let n_sparse = spec.n_sparse();
    let mut out_widths = vec![0usize; N_BLOCKS + 1];
    let mut blocks: Vec<Option<BlockWiring>> = Vec::with_capacity(N_BLOCKS);

    for index in 1..=N_BLOCKS {
        let b = arch.block(index);
        if b.is_empty() {
            blocks.push(None);
            continue;
        }
        let mut dense_sources = Vec::new();
        if b.raw_input.takes_dense() && spec.n_dense > 0 {
            dense_sources.push((DenseSource::RawDense, spec.n_dense));
        }
        for &p in &b.predecessors {
            if out_widths[p] > 0 {
                dense_sources.push((DenseSource::Block(p), out_widths[p]));
            }
        }
        let dense_width: usize = dense_sources.iter().map(|&(_, w)| w).sum();
        let takes_sparse = b.raw_input.takes_sparse() && n_sparse > 0;

        let (kind, aligned, out_width) = match b.block_type {
            BlockType::Mlp => {
                let units = b.mlp_units.unwrap() as usize;
                let fan_in = dense_width + if takes_sparse { n_sparse * dim } else { 0 };
                (BlockKind::Mlp { units, fan_in }, false, units)
            }
            BlockType::Fm => {
                let k = usize::from(dense_width > 0) + if takes_sparse { n_sparse } else { 0 };
                let aligned = dense_width > 0 && dense_width != dim;
                (BlockKind::Fm { k }, aligned, 1)
            }
            BlockType::Dp => {
                let has_dense = dense_width > 0;
                let k = usize::from(has_dense) + if takes_sparse { n_sparse } else { 0 };
                let aligned = has_dense && dense_width != dim;
                if k == 1 && has_dense {
                    (BlockKind::DpSquare, aligned, dim)
                } else {
                    (BlockKind::DpPairs { k }, aligned, k * (k + 1) / 2)
                }
            }
            BlockType::Empty => unreachable!(),
        };
        out_widths[index] = out_width;
        blocks.push(Some(BlockWiring {
            index,
            dense_sources,
            dense_width,
            takes_sparse,
            aligned,
            kind,
            out_width,
        }));
    }

    // Untouched raw groups and sink outputs flow into the final linear.
    let dense_touched = (1..=N_BLOCKS)
        .any(|i| !arch.block(i).is_empty() && arch.block(i).raw_input.takes_dense());
    let sparse_touched = (1..=N_BLOCKS)
        .any(|i| !arch.block(i).is_empty() && arch.block(i).raw_input.takes_sparse());
    let mut consumed = vec![false; N_BLOCKS + 1];
    for i in 1..=N_BLOCKS {
        for &p in &arch.block(i).predecessors {
            consumed[p] = true;
        }
    }
    let mut final_sources = Vec::new();
    if !dense_touched && spec.n_dense > 0 {
        final_sources.push((FinalSource::RawDense, spec.n_dense));
    }
    if !sparse_touched {
        for f in 0..n_sparse {
            final_sources.push((FinalSource::SparseField(f), dim));
        }
    }
    for index in 1..=N_BLOCKS {
        if !arch.block(index).is_empty() && !consumed[index] {
            final_sources.push((FinalSource::Block(index), out_widths[index]));
        }
    }
    let final_width = final_sources.iter().map(|&(_, w)| w).sum();

    Ok(Wiring {
        blocks,
        final_sources,
        final_width,
        n_dense: spec.n_dense,
        n_sparse,
        embedding_dim: dim,
    })
}

/// Per-block trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockParams {
    Empty,
    Mlp { w: Matrix, b: Vec<f64> },
    /// FM/DP: the optional dense-side alignment projection
    /// (`embedding_dim x dense_width`, no bias).
    Interaction { align: Option<Matrix> },
}

/// A built CTR network: embedding tables, per-block weights, and the final
/// linear layer over the collected feature vector.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub arch: Architecture,
    pub spec: FeatureSpec,
    pub wiring: Wiring,
    /// Per sparse field: `effective_cardinality x embedding_dim`.
    pub embeddings: Vec<Matrix>,
    pub blocks: Vec<BlockParams>,
    pub final_w: Vec<f64>,
    pub final_b: f64,
}

/// Allocates and initializes a model: embedding tables from
/// normal(0, 0.01), MLP and alignment weights uniform in
/// `±sqrt(6 / (fan_in + fan_out))`, biases zero. The rng draw order is
/// fixed (embeddings by field, blocks by index, final layer last), so a
/// fixed seed gives bitwise-identical weights.
pub fn build<R: Rng>(arch: &Architecture, spec: &FeatureSpec, rng: &mut R) -> Result<TrainedModel> {
    let wiring = resolve_wiring(arch, spec)?;
    let dim = spec.embedding_dim;

    let embeddings: Vec<Matrix> = spec
        .sparse_fields
        .iter()
        .map(|f| {
            let rows = f.effective_cardinality() as usize;
            let mut m = Matrix::zeros(rows, dim);
            for v in &mut m.data {
                *v = sample_normal(rng, 0.0, 0.01);
            }
            m
        })
        .collect();

    let mut blocks = Vec::with_capacity(N_BLOCKS);
    for wb in &wiring.blocks {
        let Some(wb) = wb else {
            blocks.push(BlockParams::Empty);
            continue;
        };
        match wb.kind {
            BlockKind::Mlp { units, fan_in } => {
                let mut w = Matrix::zeros(units, fan_in);
                for v in &mut w.data {
                    *v = sample_uniform_init(rng, fan_in, units);
                }
                blocks.push(BlockParams::Mlp {
                    w,
                    b: vec![0.0; units],
                });
            }
            _ => {
                let align = wb.aligned.then(|| {
                    let mut m = Matrix::zeros(dim, wb.dense_width);
                    for v in &mut m.data {
                        *v = sample_uniform_init(rng, wb.dense_width, dim);
                    }
                    m
                });
                blocks.push(BlockParams::Interaction { align });
            }
        }
    }

    let final_w: Vec<f64> = (0..wiring.final_width)
        .map(|_| sample_uniform_init(rng, wiring.final_width, 1))
        .collect();

    Ok(TrainedModel {
        arch: arch.clone(),
        spec: spec.clone(),
        wiring,
        embeddings,
        blocks,
        final_w,
        final_b: 0.0,
    })
}

/// A minibatch view over dataset storage.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub dense: &'a [f64],
    pub sparse: &'a [u32],
    pub labels: &'a [u8],
    pub rows: usize,
    pub n_dense: usize,
    pub n_sparse: usize,
}

impl<'a> Batch<'a> {
    pub fn from_dataset(ds: &'a CtrDataset, start: usize, end: usize) -> Batch<'a> {
        let nd = ds.spec.n_dense;
        let ns = ds.spec.n_sparse();
        Batch {
            dense: &ds.dense[start * nd..end * nd],
            sparse: &ds.sparse[start * ns..end * ns],
            labels: &ds.labels[start..end],
            rows: end - start,
            n_dense: nd,
            n_sparse: ns,
        }
    }

    pub fn full(ds: &'a CtrDataset) -> Batch<'a> {
        Batch::from_dataset(ds, 0, ds.n_rows)
    }

    #[inline]
    pub fn dense_row(&self, r: usize) -> &[f64] {
        &self.dense[r * self.n_dense..(r + 1) * self.n_dense]
    }

    #[inline]
    pub fn sparse_row(&self, r: usize) -> &[u32] {
        &self.sparse[r * self.n_sparse..(r + 1) * self.n_sparse]
    }
}

/// Single-vector MLP block operation: `ReLU(W x + b)`.
pub fn mlp_block_forward(w: &Matrix, bias: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != w.cols || bias.len() != w.rows {
        return Err(Error::ShapeMismatch(format!(
            "mlp expects input {} and bias {}, got {} and {}",
            w.cols,
            w.rows,
            input.len(),
            bias.len()
        )));
    }
    Ok((0..w.rows)
        .map(|o| {
            let z: f64 = w.row(o).iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias[o];
            z.max(0.0)
        })
        .collect())
}

/// FM block operation: the sum of inner products over all unordered input
/// pairs; a single input degenerates to sum pooling of its entries.
pub fn fm_block_forward(inputs: &[&[f64]]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::ShapeMismatch("fm block needs at least one input".into()));
    }
    let d = inputs[0].len();
    if inputs.iter().any(|v| v.len() != d) {
        return Err(Error::ShapeMismatch("fm inputs must share their width".into()));
    }
    if inputs.len() == 1 {
        return Ok(inputs[0].iter().sum());
    }
    // sum_{i<j} <e_i, e_j> = (|S|^2 - sum_i |e_i|^2) / 2
    let mut sum = vec![0.0; d];
    let mut sq = 0.0;
    for v in inputs {
        for (s, &x) in sum.iter_mut().zip(*v) {
            *s += x;
        }
        sq += v.iter().map(|x| x * x).sum::<f64>();
    }
    let total: f64 = sum.iter().map(|x| x * x).sum();
    Ok((total - sq) / 2.0)
}

/// DP block operation: every pairwise inner product including
/// self-interactions, concatenated in lexicographic order over `i <= j`.
pub fn dp_block_forward(inputs: &[&[f64]]) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::ShapeMismatch("dp block needs at least one input".into()));
    }
    let d = inputs[0].len();
    if inputs.iter().any(|v| v.len() != d) {
        return Err(Error::ShapeMismatch("dp inputs must share their width".into()));
    }
    let k = inputs.len();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in i..k {
            out.push(inputs[i].iter().zip(inputs[j]).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

/// Per-batch intermediate activations kept for the backward pass.
pub(crate) struct ForwardCache {
    /// Looked-up embeddings per sparse field, `rows x dim`.
    pub emb: Vec<Matrix>,
    /// MLP blocks: the concatenated input and pre-activation.
    pub mlp_in: Vec<Option<Matrix>>,
    pub pre: Vec<Option<Matrix>>,
    /// FM/DP blocks: the concatenated dense-side group and, when a
    /// projection applies, the aligned vector.
    pub dense_in: Vec<Option<Matrix>>,
    pub aligned: Vec<Option<Matrix>>,
    pub out: Vec<Option<Matrix>>,
    pub final_in: Matrix,
    pub probs: Vec<f64>,
}

impl ForwardCache {
    /// The block's `s`-th interaction vector for example `r`: index 0 is
    /// the aligned dense group when present, then the sparse embeddings.
    pub(crate) fn interaction_vec<'a>(
        &'a self,
        wb: &BlockWiring,
        batch: &Batch<'_>,
        s: usize,
        r: usize,
    ) -> &'a [f64] {
        let has_dense = wb.dense_width > 0;
        if has_dense && s == 0 {
            return match &self.aligned[wb.index - 1] {
                Some(a) => a.row(r),
                None => self.dense_in[wb.index - 1].as_ref().unwrap().row(r),
            };
        }
        let field = s - usize::from(has_dense);
        let _ = batch;
        self.emb[field].row(r)
    }
}

fn gather_dense_group(
    wb: &BlockWiring,
    batch: &Batch<'_>,
    out: &[Option<Matrix>],
) -> Matrix {
    let rows = batch.rows;
    let mut m = Matrix::zeros(rows, wb.dense_width);
    for r in 0..rows {
        let dst = m.row_mut(r);
        let mut off = 0;
        for &(src, w) in &wb.dense_sources {
            match src {
                DenseSource::RawDense => dst[off..off + w].copy_from_slice(batch.dense_row(r)),
                DenseSource::Block(p) => {
                    dst[off..off + w].copy_from_slice(out[p - 1].as_ref().unwrap().row(r))
                }
            }
            off += w;
        }
    }
    m
}

pub(crate) fn forward_cached(model: &TrainedModel, batch: &Batch<'_>) -> Result<ForwardCache> {
    let wiring = &model.wiring;
    if batch.n_dense != wiring.n_dense || batch.n_sparse != wiring.n_sparse {
        return Err(Error::ShapeMismatch(format!(
            "batch shape ({}, {}) does not match the model ({}, {})",
            batch.n_dense, batch.n_sparse, wiring.n_dense, wiring.n_sparse
        )));
    }
    let rows = batch.rows;
    let dim = wiring.embedding_dim;

    // Embedding lookups.
    let mut emb = Vec::with_capacity(wiring.n_sparse);
    for f in 0..wiring.n_sparse {
        let table = &model.embeddings[f];
        let mut m = Matrix::zeros(rows, dim);
        for r in 0..rows {
            let idx = batch.sparse_row(r)[f];
            if idx as usize >= table.rows {
                return Err(Error::SparseIndexOutOfRange {
                    field: f,
                    index: idx,
                    cardinality: table.rows as u32,
                });
            }
            m.row_mut(r).copy_from_slice(table.row(idx as usize));
        }
        emb.push(m);
    }

    let mut cache = ForwardCache {
        emb,
        mlp_in: vec![None; N_BLOCKS],
        pre: vec![None; N_BLOCKS],
        dense_in: vec![None; N_BLOCKS],
        aligned: vec![None; N_BLOCKS],
        out: vec![None; N_BLOCKS],
        final_in: Matrix::zeros(rows, wiring.final_width),
        probs: vec![0.0; rows],
    };

    for wb in wiring.blocks.iter().flatten() {
        let i0 = wb.index - 1;
        match wb.kind {
            BlockKind::Mlp { units, fan_in } => {
                let BlockParams::Mlp { w, b } = &model.blocks[i0] else {
                    unreachable!()
                };
                let mut input = Matrix::zeros(rows, fan_in);
                for r in 0..rows {
                    let dst = input.row_mut(r);
                    let mut off = 0;
                    for &(src, width) in &wb.dense_sources {
                        match src {
                            DenseSource::RawDense => {
                                dst[off..off + width].copy_from_slice(batch.dense_row(r))
                            }
                            DenseSource::Block(p) => dst[off..off + width]
                                .copy_from_slice(cache.out[p - 1].as_ref().unwrap().row(r)),
                        }
                        off += width;
                    }
                    if wb.takes_sparse {
                        for f in 0..wiring.n_sparse {
                            dst[off..off + dim].copy_from_slice(cache.emb[f].row(r));
                            off += dim;
                        }
                    }
                }
                let mut pre = Matrix::zeros(rows, units);
                let mut out = Matrix::zeros(rows, units);
                for r in 0..rows {
                    let x = input.row(r);
                    let pr = pre.row_mut(r);
                    for o in 0..units {
                        pr[o] =
                            w.row(o).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[o];
                    }
                    let or = out.row_mut(r);
                    for o in 0..units {
                        or[o] = pr[o].max(0.0);
                    }
                }
                cache.mlp_in[i0] = Some(input);
                cache.pre[i0] = Some(pre);
                cache.out[i0] = Some(out);
            }
            BlockKind::Fm { k } | BlockKind::DpPairs { k } => {
                if wb.dense_width > 0 {
                    let dense_in = gather_dense_group(wb, batch, &cache.out);
                    if wb.aligned {
                        let BlockParams::Interaction { align: Some(p) } = &model.blocks[i0]
                        else {
                            unreachable!()
                        };
                        let mut aligned = Matrix::zeros(rows, dim);
                        for r in 0..rows {
                            let x = dense_in.row(r);
                            let ar = aligned.row_mut(r);
                            for o in 0..dim {
                                ar[o] = p.row(o).iter().zip(x).map(|(a, b)| a * b).sum();
                            }
                        }
                        cache.aligned[i0] = Some(aligned);
                    }
                    cache.dense_in[i0] = Some(dense_in);
                }
                let is_fm = matches!(wb.kind, BlockKind::Fm { .. });
                let mut out = Matrix::zeros(rows, wb.out_width);
                for r in 0..rows {
                    let vecs: Vec<&[f64]> =
                        (0..k).map(|s| cache.interaction_vec(wb, batch, s, r)).collect();
                    if is_fm {
                        out.row_mut(r)[0] = if k == 0 {
                            0.0
                        } else {
                            fm_block_forward(&vecs)?
                        };
                    } else if k > 0 {
                        let dots = dp_block_forward(&vecs)?;
                        out.row_mut(r).copy_from_slice(&dots);
                    }
                }
                cache.out[i0] = Some(out);
            }
            BlockKind::DpSquare => {
                let dense_in = gather_dense_group(wb, batch, &cache.out);
                let mut out = Matrix::zeros(rows, dim);
                if wb.aligned {
                    let BlockParams::Interaction { align: Some(p) } = &model.blocks[i0] else {
                        unreachable!()
                    };
                    let mut aligned = Matrix::zeros(rows, dim);
                    for r in 0..rows {
                        let x = dense_in.row(r);
                        let ar = aligned.row_mut(r);
                        for o in 0..dim {
                            ar[o] = p.row(o).iter().zip(x).map(|(a, b)| a * b).sum();
                        }
                        let or = out.row_mut(r);
                        for o in 0..dim {
                            or[o] = ar[o] * ar[o];
                        }
                    }
                    cache.aligned[i0] = Some(aligned);
                } else {
                    for r in 0..rows {
                        let x = dense_in.row(r);
                        let or = out.row_mut(r);
                        for (o, &v) in or.iter_mut().zip(x) {
                            *o = v * v;
                        }
                    }
                }
                cache.dense_in[i0] = Some(dense_in);
                cache.out[i0] = Some(out);
            }
        }
    }

    // Final linear over untouched raw groups and sink outputs.
    for r in 0..rows {
        let mut off = 0;
        let dst = cache.final_in.row_mut(r);
        for &(src, w) in &wiring.final_sources {
            match src {
                FinalSource::RawDense => dst[off..off + w].copy_from_slice(batch.dense_row(r)),
                FinalSource::SparseField(f) => {
                    dst[off..off + w].copy_from_slice(cache.emb[f].row(r))
                }
                FinalSource::Block(i) => {
                    dst[off..off + w].copy_from_slice(cache.out[i - 1].as_ref().unwrap().row(r))
                }
            }
            off += w;
        }
        let logit: f64 = model
            .final_w
            .iter()
            .zip(cache.final_in.row(r))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + model.final_b;
        cache.probs[r] = 1.0 / (1.0 + (-logit).exp());
    }
    Ok(cache)
}

/// Batch prediction: probabilities in (0, 1).
pub fn forward(model: &TrainedModel, batch: &Batch<'_>) -> Result<Vec<f64>> {
    Ok(forward_cached(model, batch)?.probs)
}

/// Smallest absolute MLP pre-activation across the batch (infinity when
/// the model has no MLP blocks). Finite-difference gradient checks use
/// this to skip configurations sitting on a ReLU kink, where a central
/// difference straddles the nondifferentiable point.
pub fn relu_kink_margin(model: &TrainedModel, batch: &Batch<'_>) -> Result<f64> {
    let cache = forward_cached(model, batch)?;
    let mut margin = f64::INFINITY;
    for pre in cache.pre.iter().flatten() {
        for &z in &pre.data {
            margin = margin.min(z.abs());
        }
    }
    Ok(margin)
}

/// Prediction over a whole dataset, chunked to bound memory.
pub fn predict_dataset(model: &TrainedModel, data: &CtrDataset, chunk: usize) -> Result<Vec<f64>> {
    let mut probs = Vec::with_capacity(data.n_rows);
    let mut start = 0;
    while start < data.n_rows {
        let end = (start + chunk).min(data.n_rows);
        let batch = Batch::from_dataset(data, start, end);
        probs.extend(forward(model, &batch)?);
        start = end;
    }
    Ok(probs)
}

/// Exact parameter and per-example FLOP accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub n_params: u64,
    pub flops: u64,
}

/// Counting rules: a linear layer `in -> out` costs `2*in*out + out`
/// plus `out` for an activation when present; a dot product of width `d`
/// costs `2d - 1`; FM over `k` inputs costs `k(k-1)/2` dots plus
/// `k(k-1)/2 - 1` adds (sum pooling of `d - 1` adds when `k = 1`); the DP
/// square case costs `d` multiplies; embedding lookups are free.
/// Parameter counts include the embedding tables at their effective
/// (hash-capped) cardinalities.
pub fn complexity(arch: &Architecture, spec: &FeatureSpec) -> Result<ComplexityReport> {
    let wiring = resolve_wiring(arch, spec)?;
    let dim = spec.embedding_dim as u64;
    let mut n_params: u64 = spec
        .sparse_fields
        .iter()
        .map(|f| f.effective_cardinality() as u64 * dim)
        .sum();
    let mut flops: u64 = 0;

    for wb in wiring.blocks.iter().flatten() {
        let dw = wb.dense_width as u64;
        if wb.aligned {
            n_params += dim * dw;
            flops += 2 * dw * dim;
        }
        match wb.kind {
            BlockKind::Mlp { units, fan_in } => {
                let (u, fi) = (units as u64, fan_in as u64);
                n_params += u * fi + u;
                flops += 2 * fi * u + u + u;
            }
            BlockKind::Fm { k } => {
                let k = k as u64;
                if k >= 2 {
                    let pairs = k * (k - 1) / 2;
                    flops += pairs * (2 * dim - 1) + (pairs - 1);
                } else if k == 1 {
                    flops += dim - 1;
                }
            }
            BlockKind::DpPairs { k } => {
                let k = k as u64;
                let pairs = k * (k + 1) / 2;
                flops += pairs * (2 * dim - 1);
            }
            BlockKind::DpSquare => {
                flops += dim;
            }
        }
    }

    let fw = wiring.final_width as u64;
    n_params += fw + 1;
    flops += 2 * fw + 2;

    Ok(ComplexityReport { n_params, flops })
}

/// Flat parameter order: embeddings by field (row-major), blocks
/// ascending (MLP weight then bias; interaction projection), final weight
/// vector, final bias. Used by checkpointing and the finite-difference
/// test harness.
impl TrainedModel {
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &self.embeddings {
            out.extend_from_slice(&m.data);
        }
        for b in &self.blocks {
            match b {
                BlockParams::Empty => {}
                BlockParams::Mlp { w, b } => {
                    out.extend_from_slice(&w.data);
                    out.extend_from_slice(b);
                }
                BlockParams::Interaction { align } => {
                    if let Some(a) = align {
                        out.extend_from_slice(&a.data);
                    }
                }
            }
        }
        out.extend_from_slice(&self.final_w);
        out.push(self.final_b);
        out
    }

    pub fn assign_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut cursor = 0;
        let mut take = |n: usize| -> Result<std::ops::Range<usize>> {
            if cursor + n > flat.len() {
                return Err(Error::ShapeMismatch("flat parameter vector too short".into()));
            }
            let r = cursor..cursor + n;
            cursor += n;
            Ok(r)
        };
        for m in &mut self.embeddings {
            let r = take(m.data.len())?;
            m.data.copy_from_slice(&flat[r]);
        }
        for b in &mut self.blocks {
            match b {
                BlockParams::Empty => {}
                BlockParams::Mlp { w, b } => {
                    let r = take(w.data.len())?;
                    w.data.copy_from_slice(&flat[r]);
                    let r = take(b.len())?;
                    b.copy_from_slice(&flat[r]);
                }
                BlockParams::Interaction { align } => {
                    if let Some(a) = align {
                        let r = take(a.data.len())?;
                        a.data.copy_from_slice(&flat[r]);
                    }
                }
            }
        }
        let r = take(self.final_w.len())?;
        self.final_w.copy_from_slice(&flat[r]);
        self.final_b = flat[take(1)?.start];
        if cursor != flat.len() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} extra values",
                flat.len() - cursor
            )));
        }
        Ok(())
    }

    /// Swaps in pretrained embedding tables; shapes must match.
    pub fn inject_embeddings(&mut self, tables: &[Matrix]) -> Result<()> {
        if tables.len() != self.embeddings.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} embedding tables, got {}",
                self.embeddings.len(),
                tables.len()
            )));
        }
        for (own, new) in self.embeddings.iter_mut().zip(tables) {
            if own.rows != new.rows || own.cols != new.cols {
                return Err(Error::ShapeMismatch(format!(
                    "embedding table shape {}x{} does not match {}x{}",
                    new.rows, new.cols, own.rows, own.cols
                )));
            }
            own.data.copy_from_slice(&new.data);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        let mut blocks = BTreeMap::new();
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                BlockParams::Empty => {}
                BlockParams::Mlp { w, b } => {
                    blocks.insert(
                        i + 1,
                        BlockCheckpoint::Mlp {
                            weight: w.clone(),
                            bias: b.clone(),
                        },
                    );
                }
                BlockParams::Interaction { align } => {
                    blocks.insert(
                        i + 1,
                        BlockCheckpoint::Interaction {
                            align: align.clone(),
                        },
                    );
                }
            }
        }
        ModelCheckpoint {
            blocks,
            final_weight: self.final_w.clone(),
            final_bias: self.final_b,
        }
    }

    pub fn restore(&mut self, ckpt: &ModelCheckpoint) -> Result<()> {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            match (b, ckpt.blocks.get(&(i + 1))) {
                (BlockParams::Empty, None) => {}
                (BlockParams::Mlp { w, b }, Some(BlockCheckpoint::Mlp { weight, bias })) => {
                    if weight.rows != w.rows || weight.cols != w.cols || bias.len() != b.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "checkpoint block {} shape mismatch",
                            i + 1
                        )));
                    }
                    w.data.copy_from_slice(&weight.data);
                    b.copy_from_slice(bias);
                }
                (
                    BlockParams::Interaction { align },
                    Some(BlockCheckpoint::Interaction { align: ck }),
                ) => match (align, ck) {
                    (None, None) => {}
                    (Some(a), Some(c)) if a.rows == c.rows && a.cols == c.cols => {
                        a.data.copy_from_slice(&c.data);
                    }
                    _ => {
                        return Err(Error::ShapeMismatch(format!(
                            "checkpoint block {} alignment mismatch",
                            i + 1
                        )))
                    }
                },
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "checkpoint block {} kind mismatch",
                        i + 1
                    )))
                }
            }
        }
        if ckpt.final_weight.len() != self.final_w.len() {
            return Err(Error::ShapeMismatch("checkpoint final layer mismatch".into()));
        }
        self.final_w.copy_from_slice(&ckpt.final_weight);
        self.final_b = ckpt.final_bias;
        Ok(())
    }
}

/// JSON weight dump keyed by block index; embedding tables are persisted
/// separately (see [`save_embeddings`]) to support warm-start injection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub blocks: BTreeMap<usize, BlockCheckpoint>,
    pub final_weight: Vec<f64>,
    pub final_bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlockCheckpoint {
    Mlp { weight: Matrix, bias: Vec<f64> },
    Interaction { align: Option<Matrix> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingDump {
    pub fields: Vec<(String, Matrix)>,
}

pub fn save_embeddings(model: &TrainedModel, path: &std::path::Path) -> Result<()> {
    let dump = EmbeddingDump {
        fields: model
            .spec
            .sparse_fields
            .iter()
            .zip(&model.embeddings)
            .map(|(f, m)| (f.name.clone(), m.clone()))
            .collect(),
    };
    std::fs::write(path, serde_json::to_string(&dump)?)?;
    Ok(())
}

pub fn load_embeddings(path: &std::path::Path) -> Result<Vec<Matrix>> {
    let dump: EmbeddingDump = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(dump.fields.into_iter().map(|(_, m)| m).collect())
}
