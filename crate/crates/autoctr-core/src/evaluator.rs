//! Low-fidelity performance estimation: subsampling, feature hashing,
//! positional splitting, warm-start embeddings, and end-to-end
//! architecture evaluation feeding the searchers' evaluation logs.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CtrDataset;
use crate::error::{Error, Result};
use crate::metrics::{auc, logloss};
use crate::model::{
    build, complexity, predict_dataset, sample_normal, train, Matrix, TrainConfig,
};
use crate::search_space::{preset, Architecture, FeatureSpec, PresetName};

/// One completed evaluation: the unit of search history. A failed
/// (diverged) evaluation carries `val_logloss = +inf`; it stays in the log
/// but never enters a population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub arch: Architecture,
    #[serde(with = "inf_as_null")]
    pub val_logloss: f64,
    pub val_auc: f64,
    pub flops: u64,
    pub n_params: u64,
    pub birth_index: usize,
    pub seed: u64,
}

impl EvalRecord {
    pub fn is_failed(&self) -> bool {
        !self.val_logloss.is_finite()
    }

    /// Completion of a pool job: evaluator errors become failure
    /// sentinels so a search tolerates degenerate offspring.
    pub fn from_job_result(result: EvalJobResult, birth_index: usize) -> EvalRecord {
        match result.outcome {
            Ok(outcome) => EvalRecord {
                arch: result.arch,
                val_logloss: outcome.val_logloss,
                val_auc: outcome.val_auc,
                flops: outcome.flops,
                n_params: outcome.n_params,
                birth_index,
                seed: result.seed,
            },
            Err(_) => EvalRecord {
                arch: result.arch,
                val_logloss: f64::INFINITY,
                val_auc: 0.5,
                flops: 0,
                n_params: 0,
                birth_index,
                seed: result.seed,
            },
        }
    }
}

/// JSON has no infinity literal; the failure sentinel serializes as null.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SubsampleMode {
    /// Take the first rows.
    Head,
    /// Uniform without replacement; original row order is preserved.
    Random { seed: u64 },
}

/// Low-fidelity strategy for one run: row subsampling, cardinality
/// hashing, warm-start embeddings, and the train/val/test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityConfig {
    /// `None` uses every row.
    pub subsample_rows: Option<usize>,
    pub subsample_mode: SubsampleMode,
    /// Fields above this cardinality are hashed down to it.
    pub hash_cap: Option<u32>,
    pub warm_start: bool,
    pub split_ratios: (f64, f64, f64),
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            subsample_rows: None,
            subsample_mode: SubsampleMode::Head,
            hash_cap: Some(10_000),
            warm_start: false,
            split_ratios: (0.8, 0.1, 0.1),
        }
    }
}

impl FidelityConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_ratios;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(format!(
                "split ratios ({a}, {b}, {c}) must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Row subsampling. Head mode takes the first `rows` examples; random
/// mode samples without replacement, keeping the surviving rows in their
/// original order so the positional split stays meaningful.
pub fn subsample(data: &CtrDataset, rows: usize, mode: SubsampleMode) -> Result<CtrDataset> {
    if rows > data.n_rows {
        return Err(Error::SubsampleTooLarge {
            rows,
            size: data.n_rows,
        });
    }
    match mode {
        SubsampleMode::Head => Ok(data.slice_rows(0, rows)),
        SubsampleMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut indices: Vec<usize> = (0..data.n_rows).collect();
            indices.shuffle(&mut rng);
            let mut keep = indices[..rows].to_vec();
            keep.sort_unstable();
            let nd = data.spec.n_dense;
            let ns = data.spec.n_sparse();
            let mut dense = Vec::with_capacity(rows * nd);
            let mut sparse = Vec::with_capacity(rows * ns);
            let mut labels = Vec::with_capacity(rows);
            for &i in &keep {
                dense.extend_from_slice(data.dense_row(i));
                sparse.extend_from_slice(data.sparse_row(i));
                labels.push(data.labels[i]);
            }
            CtrDataset::new(data.spec.clone(), dense, sparse, labels)
        }
    }
}

/// Modulo-hashes every sparse field whose cardinality exceeds `cap`; the
/// field's effective cardinality becomes `cap`. Fields at or below the
/// cap are untouched.
pub fn hash_sparse(data: &CtrDataset, cap: u32) -> CtrDataset {
    let needs_hash: Vec<bool> = data
        .spec
        .sparse_fields
        .iter()
        .map(|f| f.cardinality > cap)
        .collect();
    let ns = data.spec.n_sparse();
    let mut sparse = data.sparse.clone();
    for (i, v) in sparse.iter_mut().enumerate() {
        if needs_hash[i % ns.max(1)] {
            *v %= cap;
        }
    }
    CtrDataset {
        spec: data.spec.hashed(cap),
        dense: data.dense.clone(),
        sparse,
        labels: data.labels.clone(),
        n_rows: data.n_rows,
    }
}

/// Positional split on the (already subsampled) row order.
pub fn split(
    data: &CtrDataset,
    ratios: (f64, f64, f64),
) -> Result<(CtrDataset, CtrDataset, CtrDataset)> {
    let n = data.n_rows;
    let n_train = (n as f64 * ratios.0).floor() as usize;
    let n_val = (n as f64 * ratios.1).floor() as usize;
    if n_train == 0 || n_val == 0 {
        return Err(Error::TooFewRecords { got: n, need: 10 });
    }
    Ok((
        data.slice_rows(0, n_train),
        data.slice_rows(n_train, n_train + n_val),
        data.slice_rows(n_train + n_val, n),
    ))
}

/// Applies the full fidelity pipeline in its fixed order:
/// subsample, then hash, then split.
pub fn apply_fidelity(
    data: &CtrDataset,
    fidelity: &FidelityConfig,
) -> Result<(CtrDataset, CtrDataset, CtrDataset)> {
    fidelity.validate()?;
    let sub = match fidelity.subsample_rows {
        Some(rows) => subsample(data, rows, fidelity.subsample_mode)?,
        None => data.clone(),
    };
    let hashed = match fidelity.hash_cap {
        Some(cap) => hash_sparse(&sub, cap),
        None => sub,
    };
    split(&hashed, fidelity.split_ratios)
}

/// Pretrains the fixed 128-1024-128 MLP chain on the given (already
/// hashed) dataset and returns only its embedding tables, for injection
/// into candidate models before low-fidelity training.
pub fn pretrain_warm_embeddings(
    data: &CtrDataset,
    train_cfg: &TrainConfig,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Matrix>> {
    let (train_data, val_data, _) = split(data, ratios)?;
    let arch = preset(PresetName::MlpWarmstart);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = build(&arch, &data.spec, &mut rng)?;
    let outcome = train(model, &train_data, &val_data, train_cfg)?;
    Ok(outcome.model.embeddings)
}

/// Metrics of one evaluation before the coordinator assigns a birth
/// index.
#[derive(Debug, Clone, Copy)]
pub struct EvalOutcome {
    pub val_logloss: f64,
    pub val_auc: f64,
    pub flops: u64,
    pub n_params: u64,
}

/// Runs the full pipeline for one architecture: subsample, hash, split,
/// build (with optional warm tables), train, and measure validation
/// logloss/AUC plus the complexity report. Training divergence yields a
/// failed outcome (`val_logloss = +inf`) rather than an error.
pub fn evaluate_arch(
    arch: &Architecture,
    data: &CtrDataset,
    fidelity: &FidelityConfig,
    train_cfg: &TrainConfig,
    warm_tables: Option<&[Matrix]>,
    seed: u64,
) -> Result<EvalOutcome> {
    let (train_data, val_data, _test) = apply_fidelity(data, fidelity)?;
    evaluate_on_split(arch, &train_data, &val_data, train_cfg, warm_tables, seed)
}

/// As [`evaluate_arch`] over a pre-split dataset (the pipeline output is
/// deterministic per fidelity, so long runs hoist it).
pub fn evaluate_on_split(
    arch: &Architecture,
    train_data: &CtrDataset,
    val_data: &CtrDataset,
    train_cfg: &TrainConfig,
    warm_tables: Option<&[Matrix]>,
    seed: u64,
) -> Result<EvalOutcome> {
    let report = complexity(arch, &train_data.spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build(arch, &train_data.spec, &mut rng)?;
    if let Some(tables) = warm_tables {
        model.inject_embeddings(tables)?;
    }
    match train(model, train_data, val_data, train_cfg) {
        Ok(outcome) => {
            let probs = predict_dataset(&outcome.model, val_data, train_cfg.batch_size.max(1))?;
            let val_auc = match auc(&val_data.labels, &probs) {
                Ok(a) => a,
                // A single-class validation slice leaves AUC undefined;
                // selection only consumes logloss ranks.
                Err(Error::SingleClassAuc) => 0.5,
                Err(e) => return Err(e),
            };
            Ok(EvalOutcome {
                val_logloss: outcome.best_val_logloss,
                val_auc,
                flops: report.flops,
                n_params: report.n_params,
            })
        }
        Err(Error::Divergence { .. }) => Ok(EvalOutcome {
            val_logloss: f64::INFINITY,
            val_auc: 0.5,
            flops: report.flops,
            n_params: report.n_params,
        }),
        Err(e) => Err(e),
    }
}

/// Logistic regression on the dense features alone, trained with Adam
/// under the same fidelity pipeline; the comparison floor for searched
/// architectures.
pub fn dense_logistic_baseline(
    data: &CtrDataset,
    fidelity: &FidelityConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let (train_data, val_data, _) = apply_fidelity(data, fidelity)?;
    let nd = train_data.spec.n_dense;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..nd).map(|_| sample_normal(&mut rng, 0.0, 0.01)).collect();
    let mut b = 0.0f64;
    let (mut mw, mut vw) = (vec![0.0; nd], vec![0.0; nd]);
    let (mut mb, mut vb) = (0.0f64, 0.0f64);
    let mut t = 0u64;

    let predict = |w: &[f64], b: f64, ds: &CtrDataset| -> Vec<f64> {
        (0..ds.n_rows)
            .map(|r| {
                let z: f64 =
                    ds.dense_row(r).iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + b;
                1.0 / (1.0 + (-z).exp())
            })
            .collect()
    };

    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _epoch in 0..train_cfg.max_epochs {
        let mut start = 0;
        while start < train_data.n_rows {
            let end = (start + train_cfg.batch_size).min(train_data.n_rows);
            let rows = end - start;
            let mut gw = vec![0.0; nd];
            let mut gb = 0.0;
            for r in start..end {
                let x = train_data.dense_row(r);
                let z: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
                let p = 1.0 / (1.0 + (-z).exp());
                let g = (p - train_data.labels[r] as f64) / rows as f64;
                gb += g;
                for (gi, &xi) in gw.iter_mut().zip(x) {
                    *gi += g * xi;
                }
            }
            t += 1;
            let bias1 = 1.0 - train_cfg.beta1.powi(t as i32);
            let bias2 = 1.0 - train_cfg.beta2.powi(t as i32);
            for i in 0..nd {
                mw[i] = train_cfg.beta1 * mw[i] + (1.0 - train_cfg.beta1) * gw[i];
                vw[i] = train_cfg.beta2 * vw[i] + (1.0 - train_cfg.beta2) * gw[i] * gw[i];
                w[i] -= train_cfg.learning_rate * (mw[i] / bias1)
                    / ((vw[i] / bias2).sqrt() + train_cfg.epsilon);
            }
            mb = train_cfg.beta1 * mb + (1.0 - train_cfg.beta1) * gb;
            vb = train_cfg.beta2 * vb + (1.0 - train_cfg.beta2) * gb * gb;
            b -= train_cfg.learning_rate * (mb / bias1) / ((vb / bias2).sqrt() + train_cfg.epsilon);
            start = end;
        }
        let val = logloss(&val_data.labels, &predict(&w, b, &val_data))?;
        if val < best {
            best = val;
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}

/// An architecture-scoring backend the searchers dispatch to: either real
/// dataset training or the synthetic oracle.
pub trait ArchEvaluator: Send + Sync {
    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<EvalOutcome>;
}

/// Real training under a fixed fidelity; the pipeline is applied once at
/// construction since it is deterministic per fidelity.
pub struct DatasetEvaluator {
    train_data: CtrDataset,
    val_data: CtrDataset,
    train_cfg: TrainConfig,
    warm_tables: Option<Vec<Matrix>>,
}

impl DatasetEvaluator {
    pub fn new(
        data: &CtrDataset,
        fidelity: &FidelityConfig,
        train_cfg: TrainConfig,
        warm_seed: u64,
    ) -> Result<Self> {
        let (train_data, val_data, _) = apply_fidelity(data, fidelity)?;
        let warm_tables = if fidelity.warm_start {
            // Warm embeddings are pretrained on the hashed full dataset,
            // before subsampling, mirroring the full-data pretrain.
            let hashed = match fidelity.hash_cap {
                Some(cap) => hash_sparse(data, cap),
                None => data.clone(),
            };
            Some(pretrain_warm_embeddings(
                &hashed,
                &train_cfg,
                fidelity.split_ratios,
                warm_seed,
            )?)
        } else {
            None
        };
        Ok(DatasetEvaluator {
            train_data,
            val_data,
            train_cfg,
            warm_tables,
        })
    }

    pub fn feature_spec(&self) -> &FeatureSpec {
        &self.train_data.spec
    }
}

impl ArchEvaluator for DatasetEvaluator {
    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<EvalOutcome> {
        evaluate_on_split(
            arch,
            &self.train_data,
            &self.val_data,
            &self.train_cfg,
            self.warm_tables.as_deref(),
            seed,
        )
    }
}

/// Deterministic pseudo-logloss evaluation for searcher tests and
/// ablations; complexity comes from the real accounting under a fixed
/// feature spec.
pub struct OracleEvaluator {
    pub spec: FeatureSpec,
}

impl OracleEvaluator {
    pub fn with_default_spec() -> Self {
        OracleEvaluator {
            spec: crate::data::SyntheticRecipe::default().feature_spec(),
        }
    }
}

impl ArchEvaluator for OracleEvaluator {
    fn evaluate(&self, arch: &Architecture, _seed: u64) -> Result<EvalOutcome> {
        let report = complexity(arch, &self.spec)?;
        Ok(EvalOutcome {
            val_logloss: crate::metrics::synthetic_arch_oracle(arch)?,
            val_auc: 0.5,
            flops: report.flops,
            n_params: report.n_params,
        })
    }
}

pub struct EvalJob {
    pub dispatch_index: usize,
    pub arch: Architecture,
    pub seed: u64,
}

pub struct EvalJobResult {
    pub dispatch_index: usize,
    pub arch: Architecture,
    pub seed: u64,
    pub outcome: Result<EvalOutcome>,
    pub duration_ms: f64,
}

/// Fixed-size worker pool evaluating architectures concurrently. With one
/// worker, results return in submission order, which is what makes
/// single-worker runs byte-replayable.
pub struct EvalPool {
    job_tx: Option<mpsc::Sender<EvalJob>>,
    result_rx: mpsc::Receiver<EvalJobResult>,
    handles: Vec<JoinHandle<()>>,
}

impl EvalPool {
    pub fn new(evaluator: Arc<dyn ArchEvaluator>, workers: usize) -> Self {
        let workers = workers.max(1);
        let (job_tx, job_rx) = mpsc::channel::<EvalJob>();
        let job_rx = Arc::new(Mutex::new(job_rx));
        let (result_tx, result_rx) = mpsc::channel::<EvalJobResult>();
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            let job_rx = Arc::clone(&job_rx);
            let result_tx = result_tx.clone();
            let evaluator = Arc::clone(&evaluator);
            handles.push(std::thread::spawn(move || loop {
                let job = {
                    let guard = job_rx.lock().expect("job queue poisoned");
                    guard.recv()
                };
                let Ok(job) = job else { break };
                let started = std::time::Instant::now();
                let outcome = evaluator.evaluate(&job.arch, job.seed);
                let _ = result_tx.send(EvalJobResult {
                    dispatch_index: job.dispatch_index,
                    arch: job.arch,
                    seed: job.seed,
                    outcome,
                    duration_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }));
        }
        EvalPool {
            job_tx: Some(job_tx),
            result_rx,
            handles,
        }
    }

    pub fn submit(&self, job: EvalJob) {
        self.job_tx
            .as_ref()
            .expect("pool already shut down")
            .send(job)
            .expect("worker pool hung up");
    }

    /// Blocks until the next completion.
    pub fn recv(&self) -> EvalJobResult {
        self.result_rx.recv().expect("worker pool hung up")
    }
}

impl Drop for EvalPool {
    fn drop(&mut self) {
        self.job_tx.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

/// Deterministic per-dispatch seed stream (splitmix64 over the run seed).
pub fn derive_seed(run_seed: u64, dispatch_index: usize) -> u64 {
    let mut z = run_seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(dispatch_index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// FIFO helper that throttles dispatch to the pool's width.
pub struct ThrottledDispatch {
    pub in_flight: usize,
    pub capacity: usize,
    pending: VecDeque<EvalJob>,
}

impl ThrottledDispatch {
    pub fn new(capacity: usize) -> Self {
        ThrottledDispatch {
            in_flight: 0,
            capacity: capacity.max(1),
            pending: VecDeque::new(),
        }
    }

    pub fn push(&mut self, pool: &EvalPool, job: EvalJob) {
        self.pending.push_back(job);
        self.pump(pool);
    }

    pub fn complete_one(&mut self, pool: &EvalPool) {
        self.in_flight -= 1;
        self.pump(pool);
    }

    fn pump(&mut self, pool: &EvalPool) {
        while self.in_flight < self.capacity {
            let Some(job) = self.pending.pop_front() else {
                break;
            };
            pool.submit(job);
            self.in_flight += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_ctr, SyntheticRecipe};
    use crate::search_space::{preset, PresetName, SparseFieldSpec};

    fn small_data() -> CtrDataset {
        synthetic_ctr(&SyntheticRecipe {
            n_rows: 600,
            sparse_cardinalities: vec![15, 15, 15, 15],
            planted_pairs: vec![(0, 1), (2, 3)],
            ..SyntheticRecipe::default()
        })
    }

    fn fast_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 128,
            learning_rate: 0.01,
            max_epochs: 3,
            patience: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn subsample_modes() {
        let data = small_data();
        let all = subsample(&data, data.n_rows, SubsampleMode::Head).unwrap();
        assert_eq!(all.dense, data.dense);
        assert_eq!(all.labels, data.labels);

        let head = subsample(&data, 100, SubsampleMode::Head).unwrap();
        assert_eq!(head.n_rows, 100);
        assert_eq!(head.labels[..], data.labels[..100]);

        let r1 = subsample(&data, 100, SubsampleMode::Random { seed: 7 }).unwrap();
        let r2 = subsample(&data, 100, SubsampleMode::Random { seed: 7 }).unwrap();
        assert_eq!(r1.sparse, r2.sparse);
        assert_ne!(r1.labels[..], data.labels[..100]);

        assert!(matches!(
            subsample(&data, data.n_rows + 1, SubsampleMode::Head),
            Err(Error::SubsampleTooLarge { .. })
        ));
    }

    #[test]
    fn hash_sparse_caps_only_large_fields() {
        let spec = FeatureSpec::new(
            1,
            vec![
                SparseFieldSpec::new("small", 5),
                SparseFieldSpec::new("large", 30_000),
            ],
            4,
        )
        .unwrap();
        let data = CtrDataset::new(
            spec,
            vec![0.0, 0.0],
            vec![3, 10_007, 4, 29_999],
            vec![0, 1],
        )
        .unwrap();
        let hashed = hash_sparse(&data, 10_000);
        // Small field untouched; 10,007 mod 10,000 = 7.
        assert_eq!(hashed.sparse, vec![3, 7, 4, 9_999]);
        assert_eq!(hashed.spec.sparse_fields[0].cardinality, 5);
        assert_eq!(hashed.spec.sparse_fields[1].cardinality, 10_000);
        let max = hashed.sparse.iter().skip(1).step_by(2).max().unwrap();
        assert!(*max < 10_000);
    }

    #[test]
    fn pipeline_hash_and_split_commute_under_head_subsampling() {
        let data = small_data();
        let cap = 8u32;
        let sub = subsample(&data, 200, SubsampleMode::Head).unwrap();
        let a = split(&hash_sparse(&sub, cap), (0.8, 0.1, 0.1)).unwrap();
        let b = split(&sub, (0.8, 0.1, 0.1)).unwrap();
        let b = (
            hash_sparse(&b.0, cap),
            hash_sparse(&b.1, cap),
            hash_sparse(&b.2, cap),
        );
        for (x, y) in [(&a.0, &b.0), (&a.1, &b.1), (&a.2, &b.2)] {
            assert_eq!(x.dense, y.dense);
            assert_eq!(x.sparse, y.sparse);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.spec, y.spec);
        }
    }

    #[test]
    fn warm_tables_have_right_shapes_and_move_from_init() {
        let data = small_data();
        let cfg = fast_train_cfg();
        let tables = pretrain_warm_embeddings(&data, &cfg, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!(tables.len(), data.spec.n_sparse());
        for (t, f) in tables.iter().zip(&data.spec.sparse_fields) {
            assert_eq!(t.rows, f.effective_cardinality() as usize);
            assert_eq!(t.cols, data.spec.embedding_dim);
        }
        // Trained tables drift from the normal(0, 0.01) init: their spread
        // should exceed the init scale.
        let spread: f64 = tables
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            / tables.iter().map(|t| t.data.len()).sum::<usize>() as f64;
        assert!(spread > 1e-4, "warm tables look untrained: {spread}");

        // Injection changes embeddings only.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = preset(PresetName::DeepFmLike);
        let fresh = build(&arch, &data.spec, &mut rng).unwrap();
        let mut warm = fresh.clone();
        warm.inject_embeddings(&tables).unwrap();
        assert_eq!(warm.final_w, fresh.final_w);
        assert_eq!(warm.blocks.len(), fresh.blocks.len());
        for (a, b) in warm.blocks.iter().zip(&fresh.blocks) {
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
        assert_ne!(warm.embeddings[0].data, fresh.embeddings[0].data);
    }

    #[test]
    fn evaluate_arch_is_deterministic_and_beats_constant_predictor() {
        let data = small_data();
        let fidelity = FidelityConfig {
            hash_cap: None,
            ..FidelityConfig::default()
        };
        let cfg = fast_train_cfg();
        let arch = preset(PresetName::DlrmLike);
        let a = evaluate_arch(&arch, &data, &fidelity, &cfg, None, 17).unwrap();
        let b = evaluate_arch(&arch, &data, &fidelity, &cfg, None, 17).unwrap();
        assert_eq!(a.val_logloss, b.val_logloss);
        assert_eq!(a.val_auc, b.val_auc);
        assert_eq!(a.flops, b.flops);

        // The all-constant predictor's logloss is the label entropy of the
        // validation slice.
        let (_, val, _) = apply_fidelity(&data, &fidelity).unwrap();
        let prev = val.label_prevalence();
        let constant = -(prev * prev.ln() + (1.0 - prev) * (1.0 - prev).ln());
        assert!(
            a.val_logloss < constant,
            "model {} vs constant predictor {constant}",
            a.val_logloss
        );
    }

    #[test]
    fn dense_baseline_beats_constant_on_dense_signal() {
        let data = small_data();
        let fidelity = FidelityConfig {
            hash_cap: None,
            ..FidelityConfig::default()
        };
        let cfg = TrainConfig {
            max_epochs: 10,
            ..fast_train_cfg()
        };
        let baseline = dense_logistic_baseline(&data, &fidelity, &cfg, 3).unwrap();
        let (_, val, _) = apply_fidelity(&data, &fidelity).unwrap();
        let prev = val.label_prevalence();
        let constant = -(prev * prev.ln() + (1.0 - prev) * (1.0 - prev).ln());
        assert!(baseline < constant);
    }

    #[test]
    fn pool_single_worker_preserves_order() {
        let evaluator = Arc::new(OracleEvaluator::with_default_spec());
        let pool = EvalPool::new(evaluator, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10 {
            let arch = crate::search_space::random_arch(&mut rng, true);
            pool.submit(EvalJob {
                dispatch_index: i,
                arch,
                seed: derive_seed(1, i),
            });
        }
        for i in 0..10 {
            let result = pool.recv();
            assert_eq!(result.dispatch_index, i);
            assert!(result.outcome.is_ok());
        }
    }

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(42, 0), derive_seed(42, 0));
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }

    #[test]
    fn eval_record_inf_roundtrips_as_null() {
        let record = EvalRecord {
            arch: preset(PresetName::DlrmLike),
            val_logloss: f64::INFINITY,
            val_auc: 0.5,
            flops: 10,
            n_params: 20,
            birth_index: 3,
            seed: 7,
        };
        let json = serde_json::to_string(&record).unwrap();
        assert!(json.contains("\"val_logloss\":null"));
        let back: EvalRecord = serde_json::from_str(&json).unwrap();
        assert!(back.is_failed());
    }
}
