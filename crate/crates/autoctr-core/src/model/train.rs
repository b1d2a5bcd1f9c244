//! Adam training loop with lazy embedding updates and early stopping on
//! validation logloss.

use serde::{Deserialize, Serialize};

use super::backward::{loss_and_grads, BlockGrads, ModelGrads};
use super::{predict_dataset, Batch, BlockParams, Matrix, TrainedModel};
use crate::data::CtrDataset;
use crate::error::{Error, Result};
use crate::metrics::logloss;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving validation evaluations before stopping.
    pub patience: usize,
    /// Steps between validation evaluations; `None` evaluates once per
    /// epoch.
    pub eval_interval_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4096,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 10,
            patience: 2,
            eval_interval_steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub val_logloss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub best_val_logloss: f64,
    pub history: Vec<EvalPoint>,
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamSlot {
    fn new(n: usize) -> Self {
        AdamSlot {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    #[inline]
    fn update_range(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        offset: usize,
        cfg: &TrainConfig,
        bias1: f64,
        bias2: f64,
    ) {
        for i in 0..params.len() {
            let g = grads[i];
            let m = &mut self.m[offset + i];
            let v = &mut self.v[offset + i];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Adam moments shaped like the model. Embedding rows are updated lazily:
/// only rows touched by a batch advance their moments, so an untouched
/// row's moments are stale relative to the global step (documented
/// behavior of the sparse update).
struct AdamState {
    t: u64,
    embeddings: Vec<AdamSlot>,
    blocks: Vec<Option<(AdamSlot, AdamSlot)>>,
    final_w: AdamSlot,
    final_b: AdamSlot,
}

impl AdamState {
    fn new(model: &TrainedModel) -> Self {
        AdamState {
            t: 0,
            embeddings: model
                .embeddings
                .iter()
                .map(|m| AdamSlot::new(m.data.len()))
                .collect(),
            blocks: model
                .blocks
                .iter()
                .map(|b| match b {
                    BlockParams::Empty => None,
                    BlockParams::Mlp { w, b } => {
                        Some((AdamSlot::new(w.data.len()), AdamSlot::new(b.len())))
                    }
                    BlockParams::Interaction { align } => align
                        .as_ref()
                        .map(|a| (AdamSlot::new(a.data.len()), AdamSlot::new(0))),
                })
                .collect(),
            final_w: AdamSlot::new(model.final_w.len()),
            final_b: AdamSlot::new(1),
        }
    }

    fn apply(&mut self, model: &mut TrainedModel, grads: &ModelGrads, cfg: &TrainConfig) {
        self.t += 1;
        let bias1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bias2 = 1.0 - cfg.beta2.powi(self.t as i32);

        for (f, slot) in self.embeddings.iter_mut().enumerate() {
            let table: &mut Matrix = &mut model.embeddings[f];
            let gtable = &grads.embeddings[f];
            let cols = table.cols;
            for &row in &grads.emb_touched[f] {
                let r = row as usize;
                let offset = r * cols;
                slot.update_range(
                    table.row_mut(r),
                    gtable.row(r),
                    offset,
                    cfg,
                    bias1,
                    bias2,
                );
            }
        }
        for (i, entry) in self.blocks.iter_mut().enumerate() {
            let Some((ws, bs)) = entry else { continue };
            match (&mut model.blocks[i], &grads.blocks[i]) {
                (BlockParams::Mlp { w, b }, BlockGrads::Mlp { w: gw, b: gb }) => {
                    ws.update_range(&mut w.data, &gw.data, 0, cfg, bias1, bias2);
                    bs.update_range(b, gb, 0, cfg, bias1, bias2);
                }
                (
                    BlockParams::Interaction { align: Some(a) },
                    BlockGrads::Interaction { align: Some(ga) },
                ) => {
                    ws.update_range(&mut a.data, &ga.data, 0, cfg, bias1, bias2);
                }
                _ => {}
            }
        }
        self.final_w
            .update_range(&mut model.final_w, &grads.final_w, 0, cfg, bias1, bias2);
        let mut b = [model.final_b];
        self.final_b
            .update_range(&mut b, &[grads.final_b], 0, cfg, bias1, bias2);
        model.final_b = b[0];
    }
}

/// Trains with Adam, evaluating validation logloss on the configured
/// cadence and stopping once it fails to improve for `patience`
/// consecutive evaluations or `max_epochs` is reached. Returns the
/// checkpoint with the best validation logloss. Batches walk the training
/// set in storage order (no shuffling), so a run is fully determined by
/// the initial weights.
pub fn train(
    mut model: TrainedModel,
    train_data: &CtrDataset,
    val_data: &CtrDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_data.n_rows == 0 || val_data.n_rows == 0 {
        return Err(Error::TooFewRecords { got: 0, need: 1 });
    }
    let mut adam = AdamState::new(&model);
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_ckpt = model.checkpoint();
    let mut best_emb = model.embeddings.clone();
    let mut stale_evals = 0usize;
    let mut step = 0usize;
    let eval_chunk = cfg.batch_size.max(1);

    'outer: for _epoch in 0..cfg.max_epochs {
        let mut start = 0;
        while start < train_data.n_rows {
            let end = (start + cfg.batch_size).min(train_data.n_rows);
            let batch = Batch::from_dataset(train_data, start, end);
            let (loss, grads) = loss_and_grads(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            adam.apply(&mut model, &grads, cfg);
            step += 1;
            start = end;

            let eval_now = match cfg.eval_interval_steps {
                Some(interval) => interval > 0 && step % interval == 0,
                None => start >= train_data.n_rows,
            };
            if eval_now {
                let probs = predict_dataset(&model, val_data, eval_chunk)?;
                let val = logloss(&val_data.labels, &probs)?;
                if !val.is_finite() {
                    return Err(Error::Divergence { step });
                }
                history.push(EvalPoint {
                    step,
                    val_logloss: val,
                });
                if val < best_val {
                    best_val = val;
                    best_ckpt = model.checkpoint();
                    best_emb = model.embeddings.clone();
                    stale_evals = 0;
                } else {
                    stale_evals += 1;
                    if stale_evals >= cfg.patience {
                        break 'outer;
                    }
                }
            }
        }
    }

    // Evaluate at least once even if no eval point fired.
    if history.is_empty() {
        let probs = predict_dataset(&model, val_data, eval_chunk)?;
        let val = logloss(&val_data.labels, &probs)?;
        history.push(EvalPoint {
            step,
            val_logloss: val,
        });
        best_val = val;
        best_ckpt = model.checkpoint();
        best_emb = model.embeddings.clone();
    }

    model.restore(&best_ckpt)?;
    model.embeddings = best_emb;
    Ok(TrainOutcome {
        model,
        best_val_logloss: best_val,
        history,
    })
}
