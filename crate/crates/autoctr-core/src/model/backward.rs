//! Reverse-mode gradients through every block type, the alignment
//! projections, the embedding lookups, and the final layer.

use super::{
    forward_cached, Batch, BlockKind, BlockParams, BlockWiring, DenseSource, FinalSource, Matrix,
    TrainedModel,
};
use crate::error::Result;
use crate::metrics::{logloss, PROB_CLAMP};
use crate::search_space::N_BLOCKS;

#[derive(Debug, Clone)]
pub enum BlockGrads {
    None,
    Mlp { w: Matrix, b: Vec<f64> },
    Interaction { align: Option<Matrix> },
}

/// Gradients for every parameter, shaped like the model. Embedding
/// gradients are dense buffers plus the list of rows actually touched by
/// the batch; untouched rows stay zero and receive no update.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub embeddings: Vec<Matrix>,
    pub emb_touched: Vec<Vec<u32>>,
    pub blocks: Vec<BlockGrads>,
    pub final_w: Vec<f64>,
    pub final_b: f64,
}

impl ModelGrads {
    fn zeros_like(model: &TrainedModel) -> Self {
        ModelGrads {
            embeddings: model
                .embeddings
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
            emb_touched: vec![Vec::new(); model.embeddings.len()],
            blocks: model
                .blocks
                .iter()
                .map(|b| match b {
                    BlockParams::Empty => BlockGrads::None,
                    BlockParams::Mlp { w, b } => BlockGrads::Mlp {
                        w: Matrix::zeros(w.rows, w.cols),
                        b: vec![0.0; b.len()],
                    },
                    BlockParams::Interaction { align } => BlockGrads::Interaction {
                        align: align.as_ref().map(|a| Matrix::zeros(a.rows, a.cols)),
                    },
                })
                .collect(),
            final_w: vec![0.0; model.final_w.len()],
            final_b: 0.0,
        }
    }

    /// Same order as [`TrainedModel::flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &self.embeddings {
            out.extend_from_slice(&m.data);
        }
        for b in &self.blocks {
            match b {
                BlockGrads::None => {}
                BlockGrads::Mlp { w, b } => {
                    out.extend_from_slice(&w.data);
                    out.extend_from_slice(b);
                }
                BlockGrads::Interaction { align } => {
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
}

/// Mean binary cross-entropy over the batch and analytic gradients for
/// every parameter. The loss clamps probabilities to keep it finite; the
/// logit gradient uses the exact `p - y` form, which matches the clamped
/// loss everywhere outside the (unreachable at init scale) clamp region.
pub fn loss_and_grads(model: &TrainedModel, batch: &Batch<'_>) -> Result<(f64, ModelGrads)> {
    let cache = forward_cached(model, batch)?;
    let rows = batch.rows;
    let loss = logloss(batch.labels, &cache.probs)?;
    debug_assert!(PROB_CLAMP > 0.0);

    let mut grads = ModelGrads::zeros_like(model);
    let wiring = &model.wiring;
    let dim = wiring.embedding_dim;

    // d loss / d block output, accumulated from every consumer.
    let mut d_out: Vec<Option<Matrix>> = wiring
        .blocks
        .iter()
        .map(|wb| {
            wb.as_ref()
                .map(|wb| Matrix::zeros(rows, wb.out_width))
        })
        .collect();
    // d loss / d embedding vector per field (before the scatter into the
    // tables), accumulated from every consumer of the raw sparse group.
    let mut d_emb: Vec<Matrix> = (0..wiring.n_sparse)
        .map(|_| Matrix::zeros(rows, dim))
        .collect();

    // Final layer: d logit = (p - y) / rows for the mean loss.
    for r in 0..rows {
        let g = (cache.probs[r] - batch.labels[r] as f64) / rows as f64;
        grads.final_b += g;
        let fin = cache.final_in.row(r);
        for (gw, &x) in grads.final_w.iter_mut().zip(fin) {
            *gw += g * x;
        }
        let mut off = 0;
        for &(src, w) in &wiring.final_sources {
            match src {
                FinalSource::RawDense => {}
                FinalSource::SparseField(f) => {
                    let dst = d_emb[f].row_mut(r);
                    for o in 0..w {
                        dst[o] += g * model.final_w[off + o];
                    }
                }
                FinalSource::Block(i) => {
                    let dst = d_out[i - 1].as_mut().unwrap().row_mut(r);
                    for o in 0..w {
                        dst[o] += g * model.final_w[off + o];
                    }
                }
            }
            off += w;
        }
    }

    // Blocks in reverse topological order: all consumers are processed
    // before their producer.
    for index in (1..=N_BLOCKS).rev() {
        let Some(wb) = &wiring.blocks[index - 1] else {
            continue;
        };
        let i0 = index - 1;
        let g_out = d_out[i0].take().unwrap();
        match wb.kind {
            BlockKind::Mlp { units, fan_in } => {
                let BlockParams::Mlp { w, .. } = &model.blocks[i0] else {
                    unreachable!()
                };
                let BlockGrads::Mlp { w: gw, b: gb } = &mut grads.blocks[i0] else {
                    unreachable!()
                };
                let pre = cache.pre[i0].as_ref().unwrap();
                let input = cache.mlp_in[i0].as_ref().unwrap();
                let mut d_input = Matrix::zeros(rows, fan_in);
                for r in 0..rows {
                    let pr = pre.row(r);
                    let go = g_out.row(r);
                    let x = input.row(r);
                    let dx = d_input.row_mut(r);
                    for o in 0..units {
                        if pr[o] <= 0.0 {
                            continue;
                        }
                        let dz = go[o];
                        if dz == 0.0 {
                            continue;
                        }
                        gb[o] += dz;
                        let wrow = w.row(o);
                        let gwrow = gw.row_mut(o);
                        for c in 0..fan_in {
                            gwrow[c] += dz * x[c];
                            dx[c] += dz * wrow[c];
                        }
                    }
                }
                // Split the input gradient back into its sources.
                let mut off = 0;
                for &(src, width) in &wb.dense_sources {
                    if let DenseSource::Block(p) = src {
                        let dst = d_out[p - 1].as_mut().unwrap();
                        for r in 0..rows {
                            let dx = d_input.row(r);
                            let d = dst.row_mut(r);
                            for c in 0..width {
                                d[c] += dx[off + c];
                            }
                        }
                    }
                    off += width;
                }
                if wb.takes_sparse {
                    for f in 0..wiring.n_sparse {
                        let dst = &mut d_emb[f];
                        for r in 0..rows {
                            let dx = d_input.row(r);
                            let d = dst.row_mut(r);
                            for c in 0..dim {
                                d[c] += dx[off + c];
                            }
                        }
                        off += dim;
                    }
                }
            }
            BlockKind::Fm { k } => {
                if k == 0 {
                    continue;
                }
                let has_dense = wb.dense_width > 0;
                let mut d_aligned = has_dense.then(|| Matrix::zeros(rows, dim));
                for r in 0..rows {
                    let g = g_out.row(r)[0];
                    if g == 0.0 {
                        continue;
                    }
                    if k == 1 {
                        // Sum pooling: unit gradient into the single vector.
                        if let Some(da) = &mut d_aligned {
                            for v in da.row_mut(r) {
                                *v += g;
                            }
                        } else {
                            for v in d_emb[0].row_mut(r) {
                                *v += g;
                            }
                        }
                        continue;
                    }
                    // d e_s = g * (S - e_s).
                    let mut sum = vec![0.0; dim];
                    for s in 0..k {
                        let e = cache.interaction_vec(wb, batch, s, r);
                        for (acc, &v) in sum.iter_mut().zip(e) {
                            *acc += v;
                        }
                    }
                    for s in 0..k {
                        let e = cache.interaction_vec(wb, batch, s, r);
                        let target: &mut [f64] = if has_dense && s == 0 {
                            d_aligned.as_mut().unwrap().row_mut(r)
                        } else {
                            d_emb[s - usize::from(has_dense)].row_mut(r)
                        };
                        for c in 0..dim {
                            target[c] += g * (sum[c] - e[c]);
                        }
                    }
                }
                if let Some(da) = d_aligned {
                    scatter_dense_group(model, wb, &cache, &da, &mut grads, &mut d_out, rows);
                }
            }
            BlockKind::DpPairs { k } => {
                if k == 0 {
                    continue;
                }
                let has_dense = wb.dense_width > 0;
                let mut d_aligned = has_dense.then(|| Matrix::zeros(rows, dim));
                for r in 0..rows {
                    let go = g_out.row(r);
                    let mut col = 0;
                    for i in 0..k {
                        for j in i..k {
                            let g = go[col];
                            col += 1;
                            if g == 0.0 {
                                continue;
                            }
                            let ei = cache.interaction_vec(wb, batch, i, r);
                            let ej = cache.interaction_vec(wb, batch, j, r);
                            // Accumulate d e_i += g * e_j and d e_j += g * e_i
                            // (doubling on the diagonal).
                            for (s, other) in [(i, ej), (j, ei)] {
                                let target: &mut [f64] = if has_dense && s == 0 {
                                    d_aligned.as_mut().unwrap().row_mut(r)
                                } else {
                                    d_emb[s - usize::from(has_dense)].row_mut(r)
                                };
                                for c in 0..dim {
                                    target[c] += g * other[c];
                                }
                            }
                        }
                    }
                }
                if let Some(da) = d_aligned {
                    scatter_dense_group(model, wb, &cache, &da, &mut grads, &mut d_out, rows);
                }
            }
            BlockKind::DpSquare => {
                let aligned_or_input: &Matrix = match &cache.aligned[i0] {
                    Some(a) => a,
                    None => cache.dense_in[i0].as_ref().unwrap(),
                };
                let mut d_aligned = Matrix::zeros(rows, dim);
                for r in 0..rows {
                    let go = g_out.row(r);
                    let v = aligned_or_input.row(r);
                    let da = d_aligned.row_mut(r);
                    for c in 0..dim {
                        da[c] += 2.0 * go[c] * v[c];
                    }
                }
                scatter_dense_group(model, wb, &cache, &d_aligned, &mut grads, &mut d_out, rows);
            }
        }
    }

    // Scatter per-example embedding-vector gradients into the tables.
    for f in 0..wiring.n_sparse {
        let table_grad = &mut grads.embeddings[f];
        let touched = &mut grads.emb_touched[f];
        for r in 0..rows {
            let g = d_emb[f].row(r);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let idx = batch.sparse_row(r)[f];
            let dst = table_grad.row_mut(idx as usize);
            for c in 0..dim {
                dst[c] += g[c];
            }
            touched.push(idx);
        }
        touched.sort_unstable();
        touched.dedup();
    }

    Ok((loss, grads))
}

/// Backprop through the FM/DP dense-side group: through the alignment
/// projection when present, then split by source into predecessor output
/// gradients (raw dense input receives none).
#[allow(clippy::too_many_arguments)]
fn scatter_dense_group(
    model: &TrainedModel,
    wb: &BlockWiring,
    cache: &super::ForwardCache,
    d_aligned: &Matrix,
    grads: &mut ModelGrads,
    d_out: &mut [Option<Matrix>],
    rows: usize,
) {
    let i0 = wb.index - 1;
    let dim = model.wiring.embedding_dim;
    let d_dense: Matrix = if wb.aligned {
        let BlockParams::Interaction { align: Some(p) } = &model.blocks[i0] else {
            unreachable!()
        };
        let BlockGrads::Interaction { align: Some(gp) } = &mut grads.blocks[i0] else {
            unreachable!()
        };
        let dense_in = cache.dense_in[i0].as_ref().unwrap();
        let mut d_dense = Matrix::zeros(rows, wb.dense_width);
        for r in 0..rows {
            let da = d_aligned.row(r);
            let x = dense_in.row(r);
            let dx = d_dense.row_mut(r);
            for o in 0..dim {
                let g = da[o];
                if g == 0.0 {
                    continue;
                }
                let prow = p.row(o);
                let gprow = gp.row_mut(o);
                for c in 0..wb.dense_width {
                    gprow[c] += g * x[c];
                    dx[c] += g * prow[c];
                }
            }
        }
        d_dense
    } else {
        d_aligned.clone()
    };

    let mut off = 0;
    for &(src, width) in &wb.dense_sources {
        if let DenseSource::Block(p) = src {
            let dst = d_out[p - 1].as_mut().unwrap();
            for r in 0..rows {
                let dx = d_dense.row(r);
                let d = dst.row_mut(r);
                for c in 0..width {
                    d[c] += dx[off + c];
                }
            }
        }
        off += width;
    }
}
