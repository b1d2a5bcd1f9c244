//! The evolutionary search loop: multi-objective survivor selection over
//! age, fitness rank, and complexity rank; rank-based parent selection
//! with tunable intensity; and guided mutation through the rank surrogate.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{
    derive_seed, ArchEvaluator, EvalJob, EvalPool, EvalRecord,
};
use crate::guider::{
    make_relevance, train_rank_guider, train_regression_guider, ArchScorer, GuiderConfig,
    GuiderModel,
};
use crate::search_space::{mutate_with, random_arch_with, unique_neighbors, Architecture, SpaceOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuiderMode {
    /// The learning-to-rank surrogate.
    Rank,
    /// Fitness regression on `-logloss`.
    Regression,
    /// No surrogate: offspring is a single random mutation.
    Random,
}

impl std::str::FromStr for GuiderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(GuiderMode::Rank),
            "regression" => Ok(GuiderMode::Regression),
            "random" => Ok(GuiderMode::Random),
            other => Err(Error::UnknownPreset(format!("guider mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Population size p.
    pub population_size: usize,
    /// Survivor window q; records older than this leave the pool.
    pub survivor_window: usize,
    /// Objective weights over (age, fitness rank, complexity rank).
    pub mu: [f64; 3],
    /// Selection intensity of the parent distribution.
    pub lambda: usize,
    /// Unique neighbors generated per guided mutation.
    pub n_neighbors: usize,
    pub init_size: usize,
    /// Total evaluations, initialization included.
    pub budget: usize,
    pub guider_mode: GuiderMode,
    pub guider: GuiderConfig,
    /// The guider retrains every iteration while the log holds at most
    /// this many records, and every `retrain_sparse_every` iterations
    /// beyond.
    pub retrain_dense_limit: usize,
    pub retrain_sparse_every: usize,
    /// Age-window eligibility filter; disabled only by the objective
    /// ablation.
    pub use_age_threshold: bool,
    pub workers: usize,
    pub space: SpaceOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 100,
            survivor_window: 200,
            mu: [1.0, 0.1, 0.1],
            lambda: 10,
            n_neighbors: 100,
            init_size: 100,
            budget: 1500,
            guider_mode: GuiderMode::Rank,
            guider: GuiderConfig::default(),
            retrain_dense_limit: 500,
            retrain_sparse_every: 10,
            use_age_threshold: true,
            workers: 3,
            space: SpaceOptions::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.survivor_window < self.population_size {
            return Err(Error::ShapeMismatch(format!(
                "need q >= p >= 1, got p = {}, q = {}",
                self.population_size, self.survivor_window
            )));
        }
        if self.mu.iter().any(|&m| m < 0.0) {
            return Err(Error::ShapeMismatch("objective weights must be nonnegative".into()));
        }
        if self.budget < self.init_size || self.init_size == 0 {
            return Err(Error::ShapeMismatch(format!(
                "need budget >= init_size >= 1, got {} and {}",
                self.budget, self.init_size
            )));
        }
        Ok(())
    }
}

/// Age of a record after `current_count` completed evaluations: the
/// number of architectures evaluated after it. The whole initial batch
/// shares one age.
pub fn age_of(birth_index: usize, init_size: usize, current_count: usize) -> usize {
    if birth_index < init_size {
        current_count.saturating_sub(init_size)
    } else {
        current_count - 1 - birth_index
    }
}

/// Survival score of one record already ranked inside the window:
/// `mu1 * age + mu2 * fitness_rank + mu3 * complexity_rank`, lower is
/// better; `None` when the age filter excludes the record.
pub fn survival_score(
    age: usize,
    fitness_rank: usize,
    complexity_rank: usize,
    mu: &[f64; 3],
    q: usize,
    use_age_threshold: bool,
) -> Option<f64> {
    if use_age_threshold && age > q {
        return None;
    }
    Some(mu[0] * age as f64 + mu[1] * fitness_rank as f64 + mu[2] * complexity_rank as f64)
}

#[derive(Debug, Clone)]
pub struct PopMember {
    pub record: EvalRecord,
    pub age: usize,
    pub fitness_rank: usize,
    pub complexity_rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PopulationView {
    pub members: Vec<PopMember>,
}

/// Shared-minimum ranks (1 = smallest): tied values share the rank of
/// their first position in sorted order.
fn shared_min_rank_f64(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| sorted.partition_point(|x| x < v) + 1)
        .collect()
}

fn shared_min_rank_u64(values: &[u64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    values
        .iter()
        .map(|v| sorted.partition_point(|x| x < v) + 1)
        .collect()
}

/// Filters the log to the age window, ranks logloss and FLOPs inside it,
/// scores each record, and keeps the `p` best scores (ties prefer the
/// younger record).
pub fn survivor_select(
    log: &[EvalRecord],
    p: usize,
    q: usize,
    mu: &[f64; 3],
    init_size: usize,
    use_age_threshold: bool,
    current_count: usize,
) -> PopulationView {
    let eligible: Vec<&EvalRecord> = log
        .iter()
        .filter(|r| !r.is_failed())
        .filter(|r| {
            !use_age_threshold || age_of(r.birth_index, init_size, current_count) <= q
        })
        .collect();
    if eligible.is_empty() {
        return PopulationView::default();
    }
    let losses: Vec<f64> = eligible.iter().map(|r| r.val_logloss).collect();
    let flops: Vec<u64> = eligible.iter().map(|r| r.flops).collect();
    let fitness_ranks = shared_min_rank_f64(&losses);
    let complexity_ranks = shared_min_rank_u64(&flops);
    let mut members: Vec<PopMember> = eligible
        .iter()
        .zip(fitness_ranks.iter().zip(&complexity_ranks))
        .map(|(r, (&fr, &cr))| {
            let age = age_of(r.birth_index, init_size, current_count);
            let score = survival_score(age, fr, cr, mu, q, use_age_threshold)
                .expect("eligibility already filtered");
            PopMember {
                record: (*r).clone(),
                age,
                fitness_rank: fr,
                complexity_rank: cr,
                score,
            }
        })
        .collect();
    members.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(b.record.birth_index.cmp(&a.record.birth_index))
    });
    members.truncate(p);
    PopulationView { members }
}

/// The parent-selection distribution over quality ranks `1..=p`, where
/// rank `p` is the best member: `C(r + lambda - 1, lambda) /
/// C(p + lambda, 1 + lambda)`. Computed through the stable recurrence
/// `w_{r+1} = w_r * (r + lambda) / r` and normalized, which reproduces the
/// closed form exactly for the degenerate cases (`lambda = 0` uniform,
/// `lambda = 1` linear in rank).
pub fn parent_distribution(p: usize, lambda: usize) -> Vec<f64> {
    assert!(p >= 1);
    let mut weights = Vec::with_capacity(p);
    let mut w = 1.0f64;
    weights.push(w);
    for r in 1..p {
        w *= (r + lambda) as f64 / r as f64;
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Probability of quality rank `r_star` under the distribution above.
pub fn parent_prob(r_star: usize, p: usize, lambda: usize) -> Result<f64> {
    if r_star == 0 || r_star > p {
        return Err(Error::RankOutOfRange { rank: r_star, p });
    }
    Ok(parent_distribution(p, lambda)[r_star - 1])
}

/// Samples one population member under the rank distribution; every
/// member has strictly positive probability. Members tied on logloss
/// rank the younger one better.
pub fn parent_select<'a, R: Rng>(
    pop: &'a PopulationView,
    lambda: usize,
    rng: &mut R,
) -> Result<&'a PopMember> {
    if pop.members.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let p = pop.members.len();
    // Quality order: position k (1-based) carries rank r* = k, so the
    // best (lowest logloss) member sits last.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&pop.members[a].record, &pop.members[b].record);
        rb.val_logloss
            .total_cmp(&ra.val_logloss)
            .then(ra.birth_index.cmp(&rb.birth_index))
    });
    let weights = parent_distribution(p, lambda);
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (pos, &idx) in order.iter().enumerate() {
        acc += weights[pos];
        if draw < acc {
            return Ok(&pop.members[idx]);
        }
    }
    Ok(&pop.members[*order.last().unwrap()])
}

/// Generates unique neighbors of the parent and returns the one the
/// scorer ranks highest (first occurrence wins ties). With a single
/// neighbor requested or no scorer, this is a plain random mutation.
pub fn guided_offspring<R: Rng>(
    parent: &Architecture,
    scorer: Option<&dyn ArchScorer>,
    n_neighbors: usize,
    rng: &mut R,
    opts: &SpaceOptions,
) -> Result<Architecture> {
    let Some(scorer) = scorer else {
        return mutate_with(parent, rng, opts);
    };
    if n_neighbors <= 1 {
        return mutate_with(parent, rng, opts);
    }
    let mut neighbors = unique_neighbors(parent, n_neighbors, rng, opts);
    if neighbors.is_empty() {
        return Err(Error::NeighborsExhausted {
            found: 0,
            requested: n_neighbors,
        });
    }
    let scores = scorer.score(&neighbors)?;
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(neighbors.swap_remove(best))
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub log: Vec<EvalRecord>,
    pub best: EvalRecord,
    /// Best validation logloss after each completed evaluation.
    pub curve: Vec<f64>,
    /// Wall-clock evaluation time per record, in completion order. Kept
    /// out of the records themselves so logs replay byte-for-byte.
    pub timings_ms: Vec<f64>,
}

/// Streaming observer of completed evaluations, called in completion
/// order with each record and its wall-clock duration.
pub type RecordSink<'a> = &'a mut dyn FnMut(&EvalRecord, f64);

fn finish(log: Vec<EvalRecord>, timings_ms: Vec<f64>) -> Result<SearchResult> {
    let mut curve = Vec::with_capacity(log.len());
    let mut best_so_far = f64::INFINITY;
    let mut best: Option<&EvalRecord> = None;
    for r in &log {
        if r.val_logloss < best_so_far {
            best_so_far = r.val_logloss;
            best = Some(r);
        }
        curve.push(best_so_far);
    }
    let best = best.ok_or(Error::InitFailed)?.clone();
    Ok(SearchResult {
        log,
        best,
        curve,
        timings_ms,
    })
}

fn run_init_phase(
    pool: &EvalPool,
    config: &SearchConfig,
    run_seed: u64,
    rng: &mut ChaCha8Rng,
    timings_ms: &mut Vec<f64>,
    sink: &mut Option<RecordSink<'_>>,
) -> Result<Vec<EvalRecord>> {
    let mut log: Vec<EvalRecord> = Vec::with_capacity(config.budget);
    let mut dispatched = 0usize;
    let mut in_flight = 0usize;
    while dispatched < config.init_size || in_flight > 0 {
        if in_flight < config.workers.max(1) && dispatched < config.init_size {
            let arch = random_arch_with(rng, &config.space);
            pool.submit(EvalJob {
                dispatch_index: dispatched,
                arch,
                seed: derive_seed(run_seed, dispatched),
            });
            dispatched += 1;
            in_flight += 1;
        } else {
            let result = pool.recv();
            in_flight -= 1;
            let birth = log.len();
            let duration = result.duration_ms;
            let record = EvalRecord::from_job_result(result, birth);
            if let Some(sink) = sink.as_mut() {
                sink(&record, duration);
            }
            timings_ms.push(duration);
            log.push(record);
        }
    }
    if log.iter().all(EvalRecord::is_failed) {
        return Err(Error::InitFailed);
    }
    Ok(log)
}

fn fit_guider(
    log: &[EvalRecord],
    config: &SearchConfig,
    retrain_counter: usize,
) -> Option<GuiderModel> {
    let mut guider_cfg = config.guider.clone();
    guider_cfg.seed = guider_cfg.seed.wrapping_add(retrain_counter as u64);
    let trained = match config.guider_mode {
        GuiderMode::Random => return None,
        GuiderMode::Rank => {
            make_relevance(log).and_then(|set| train_rank_guider(&set, &guider_cfg))
        }
        GuiderMode::Regression => train_regression_guider(log, &guider_cfg),
    };
    // Degenerate logs (all-tied losses, too few records) fall back to
    // random mutation for this dispatch.
    trained.ok()
}

/// The full search loop: evaluate `init_size` random architectures, then
/// repeat survivor selection, parent selection, guider-scored mutation,
/// and evaluation until `budget` evaluations complete. Failed evaluations
/// stay in the log as sentinels; the best-so-far curve is monotone by
/// construction. Up to `workers` evaluations run concurrently, and
/// selection always reads the latest completed log; single-worker runs
/// are bitwise replayable from the seed.
pub fn search(
    evaluator: Arc<dyn ArchEvaluator>,
    config: &SearchConfig,
    run_seed: u64,
) -> Result<SearchResult> {
    search_with_sink(evaluator, config, run_seed, None)
}

pub fn search_with_sink(
    evaluator: Arc<dyn ArchEvaluator>,
    config: &SearchConfig,
    run_seed: u64,
    mut sink: Option<RecordSink<'_>>,
) -> Result<SearchResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let pool = EvalPool::new(evaluator, config.workers);
    let mut timings_ms = Vec::with_capacity(config.budget);
    let mut log = run_init_phase(&pool, config, run_seed, &mut rng, &mut timings_ms, &mut sink)?;

    let mut dispatched = config.init_size;
    let mut in_flight = 0usize;
    let mut iteration = 0usize;
    let mut retrains = 0usize;
    let mut guider: Option<GuiderModel> = None;

    while log.len() < config.budget {
        while in_flight < config.workers.max(1) && dispatched < config.budget {
            let retrain_due = log.len() <= config.retrain_dense_limit
                || iteration % config.retrain_sparse_every == 0;
            if retrain_due && config.guider_mode != GuiderMode::Random {
                guider = fit_guider(&log, config, retrains);
                retrains += 1;
            }
            let pop = survivor_select(
                &log,
                config.population_size,
                config.survivor_window,
                &config.mu,
                config.init_size,
                config.use_age_threshold,
                log.len(),
            );
            let offspring = match parent_select(&pop, config.lambda, &mut rng) {
                Ok(parent) => {
                    let scorer = guider.as_ref().map(|g| g as &dyn ArchScorer);
                    guided_offspring(
                        &parent.record.arch,
                        scorer,
                        config.n_neighbors,
                        &mut rng,
                        &config.space,
                    )
                    .unwrap_or_else(|_| random_arch_with(&mut rng, &config.space))
                }
                // An empty window (every recent record failed) falls back
                // to random sampling.
                Err(_) => random_arch_with(&mut rng, &config.space),
            };
            pool.submit(EvalJob {
                dispatch_index: dispatched,
                arch: offspring,
                seed: derive_seed(run_seed, dispatched),
            });
            dispatched += 1;
            in_flight += 1;
            iteration += 1;
        }
        let result = pool.recv();
        in_flight -= 1;
        let birth = log.len();
        let duration = result.duration_ms;
        let record = EvalRecord::from_job_result(result, birth);
        if let Some(sink) = sink.as_mut() {
            sink(&record, duration);
        }
        timings_ms.push(duration);
        log.push(record);
    }
    finish(log, timings_ms)
}

/// Pure random search at the same budget, through the same evaluation
/// machinery and logging.
pub fn random_search(
    evaluator: Arc<dyn ArchEvaluator>,
    config: &SearchConfig,
    run_seed: u64,
) -> Result<SearchResult> {
    random_search_with_sink(evaluator, config, run_seed, None)
}

pub fn random_search_with_sink(
    evaluator: Arc<dyn ArchEvaluator>,
    config: &SearchConfig,
    run_seed: u64,
    mut sink: Option<RecordSink<'_>>,
) -> Result<SearchResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let pool = EvalPool::new(evaluator, config.workers);
    let mut log: Vec<EvalRecord> = Vec::with_capacity(config.budget);
    let mut timings_ms = Vec::with_capacity(config.budget);
    let mut dispatched = 0usize;
    let mut in_flight = 0usize;
    while dispatched < config.budget || in_flight > 0 {
        if in_flight < config.workers.max(1) && dispatched < config.budget {
            let arch = random_arch_with(&mut rng, &config.space);
            pool.submit(EvalJob {
                dispatch_index: dispatched,
                arch,
                seed: derive_seed(run_seed, dispatched),
            });
            dispatched += 1;
            in_flight += 1;
        } else {
            let result = pool.recv();
            in_flight -= 1;
            let birth = log.len();
            let duration = result.duration_ms;
            let record = EvalRecord::from_job_result(result, birth);
            if let Some(sink) = sink.as_mut() {
                sink(&record, duration);
            }
            timings_ms.push(duration);
            log.push(record);
        }
    }
    finish(log, timings_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::OracleEvaluator;
    use crate::search_space::{preset, BlockType, PresetName};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn record(logloss: f64, flops: u64, birth: usize) -> EvalRecord {
        EvalRecord {
            arch: preset(PresetName::DlrmLike),
            val_logloss: logloss,
            val_auc: 0.5,
            flops,
            n_params: flops,
            birth_index: birth,
            seed: 0,
        }
    }

    #[test]
    fn age_semantics() {
        // Newest record has age zero.
        assert_eq!(age_of(149, 100, 150), 0);
        // After 150 evaluations with init 100, every init record ages 50.
        for b in 0..100 {
            assert_eq!(age_of(b, 100, 150), 50);
        }
        // Ages weakly decrease with birth index.
        let ages: Vec<usize> = (0..150).map(|b| age_of(b, 100, 150)).collect();
        assert!(ages.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn survival_score_cases() {
        // Excluded beyond the window.
        assert_eq!(survival_score(250, 1, 1, &[1.0, 0.1, 0.1], 200, true), None);
        assert_eq!(
            survival_score(250, 1, 1, &[1.0, 0.1, 0.1], 200, false),
            Some(250.2)
        );
        // a = 0, r = 1, c = 1 under the default weights scores 0.2.
        let s = survival_score(0, 1, 1, &[1.0, 0.1, 0.1], 200, true).unwrap();
        assert!((s - 0.2).abs() < 1e-12);
        // Equal terms give equal scores.
        assert_eq!(
            survival_score(3, 5, 7, &[1.0, 0.1, 0.1], 200, true),
            survival_score(3, 5, 7, &[1.0, 0.1, 0.1], 200, true)
        );
    }

    /// Independent selection oracle: classify eligibility, rank by pair
    /// counting, sort the scores.
    fn survivor_oracle(
        log: &[EvalRecord],
        p: usize,
        q: usize,
        mu: &[f64; 3],
        init_size: usize,
        use_thr: bool,
        count: usize,
    ) -> Vec<usize> {
        let eligible: Vec<&EvalRecord> = log
            .iter()
            .filter(|r| !r.is_failed())
            .filter(|r| !use_thr || age_of(r.birth_index, init_size, count) <= q)
            .collect();
        let mut scored: Vec<(f64, usize)> = eligible
            .iter()
            .map(|r| {
                let fr = 1 + eligible
                    .iter()
                    .filter(|o| o.val_logloss < r.val_logloss)
                    .count();
                let cr = 1 + eligible.iter().filter(|o| o.flops < r.flops).count();
                let age = age_of(r.birth_index, init_size, count);
                let score =
                    mu[0] * age as f64 + mu[1] * fr as f64 + mu[2] * cr as f64;
                (score, r.birth_index)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        scored.into_iter().take(p).map(|(_, b)| b).collect()
    }

    #[test]
    fn survivor_select_matches_oracle_on_random_logs() {
        let mut r = rng(7);
        for _ in 0..100 {
            let n = r.gen_range(1..200);
            let init = r.gen_range(1..=n);
            let log: Vec<EvalRecord> = (0..n)
                .map(|b| {
                    let loss = if r.gen_bool(0.05) {
                        f64::INFINITY
                    } else {
                        // Coarse grid to force ties.
                        r.gen_range(0..20) as f64 / 20.0
                    };
                    record(loss, r.gen_range(0..8) as u64, b)
                })
                .collect();
            let p = r.gen_range(1..50);
            let q = p + r.gen_range(0..100);
            let mu = [r.gen_range(0..3) as f64, 0.1, 0.1];
            let use_thr = r.gen_bool(0.8);
            let got: Vec<usize> = survivor_select(&log, p, q, &mu, init, use_thr, n)
                .members
                .iter()
                .map(|m| m.record.birth_index)
                .collect();
            let expected = survivor_oracle(&log, p, q, &mu, init, use_thr, n);
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn survivor_select_edge_behaviors() {
        // Exactly p eligible records: all selected regardless of scores.
        let log: Vec<EvalRecord> = (0..5).map(|b| record(0.5 - b as f64 * 0.01, b as u64, b)).collect();
        let pop = survivor_select(&log, 5, 200, &[1.0, 0.1, 0.1], 5, true, 5);
        assert_eq!(pop.members.len(), 5);

        // Pure age objective selects the p youngest.
        let pop = survivor_select(&log, 2, 200, &[1.0, 0.0, 0.0], 1, true, 5);
        let births: Vec<usize> = pop.members.iter().map(|m| m.record.birth_index).collect();
        assert_eq!(births, vec![4, 3]);

        // Aging liveness: a record outside the top-p never re-enters once
        // q further evaluations pass.
        let mut log: Vec<EvalRecord> = vec![record(0.1, 1, 0)];
        for b in 1..=20 {
            log.push(record(0.5, 1, b));
        }
        // init 1, q = 10: after 21 evaluations the first record has age 20.
        let pop = survivor_select(&log, 5, 10, &[1.0, 0.1, 0.1], 1, true, 21);
        assert!(pop.members.iter().all(|m| m.record.birth_index != 0));
    }

    #[test]
    fn survivor_select_is_scale_invariant() {
        let mut r = rng(9);
        let log: Vec<EvalRecord> = (0..60)
            .map(|b| record(r.gen_range(0..30) as f64 / 30.0, r.gen_range(0..6) as u64, b))
            .collect();
        let shifted: Vec<EvalRecord> = log
            .iter()
            .map(|rec| {
                let mut rec = rec.clone();
                rec.val_logloss += 17.5;
                rec
            })
            .collect();
        let a: Vec<usize> = survivor_select(&log, 10, 40, &[1.0, 0.1, 0.1], 10, true, 60)
            .members
            .iter()
            .map(|m| m.record.birth_index)
            .collect();
        let b: Vec<usize> = survivor_select(&shifted, 10, 40, &[1.0, 0.1, 0.1], 10, true, 60)
            .members
            .iter()
            .map(|m| m.record.birth_index)
            .collect();
        assert_eq!(a, b);

        // Parent selection is rank-based too: identical draws.
        let pop_a = survivor_select(&log, 10, 40, &[1.0, 0.1, 0.1], 10, true, 60);
        let pop_b = survivor_select(&shifted, 10, 40, &[1.0, 0.1, 0.1], 10, true, 60);
        let pa = parent_select(&pop_a, 10, &mut rng(5)).unwrap();
        let pb = parent_select(&pop_b, 10, &mut rng(5)).unwrap();
        assert_eq!(pa.record.birth_index, pb.record.birth_index);
    }

    #[test]
    fn parent_prob_degenerate_cases() {
        // lambda = 0: uniform.
        for p in [1usize, 7, 100] {
            let dist = parent_distribution(p, 0);
            assert!(dist.iter().all(|&w| w == 1.0 / p as f64));
        }
        // lambda = 1, p = 3: probabilities 1/6, 2/6, 3/6.
        let dist = parent_distribution(3, 1);
        assert!((dist[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((dist[1] - 2.0 / 6.0).abs() < 1e-15);
        assert!((dist[2] - 3.0 / 6.0).abs() < 1e-15);
        // lambda = 10, p = 100 sums to 1.
        let sum: f64 = parent_distribution(100, 10).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);

        assert!(matches!(
            parent_prob(0, 10, 5),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(matches!(
            parent_prob(11, 10, 5),
            Err(Error::RankOutOfRange { .. })
        ));
        // Nondecreasing in rank for lambda >= 1.
        for lambda in [1usize, 5, 25] {
            let dist = parent_distribution(50, lambda);
            assert!(dist.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn parent_select_frequencies() {
        let log: Vec<EvalRecord> = (0..10)
            .map(|b| record(0.9 - 0.05 * b as f64, 1, b))
            .collect();
        let pop = survivor_select(&log, 10, 20, &[1.0, 0.1, 0.1], 10, true, 10);

        // Singleton population always selected.
        let single = survivor_select(&log[..1], 1, 20, &[1.0, 0.1, 0.1], 1, true, 1);
        let mut r = rng(11);
        assert_eq!(
            parent_select(&single, 10, &mut r).unwrap().record.birth_index,
            0
        );

        // lambda = 0: empirical frequencies uniform within 3 sigma.
        let mut counts = [0usize; 10];
        let mut r = rng(13);
        let draws = 100_000;
        for _ in 0..draws {
            let m = parent_select(&pop, 0, &mut r).unwrap();
            counts[m.record.birth_index] += 1;
        }
        let sigma = (0.1 * 0.9 / draws as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.1).abs() < 3.0 * sigma + 1e-3, "freq {freq}");
        }

        // Higher intensity concentrates on the best member (birth 9 has
        // the lowest logloss).
        let freq_at = |lambda: usize, seed: u64| {
            let mut r = rng(seed);
            let mut hits = 0;
            for _ in 0..100_000 {
                if parent_select(&pop, lambda, &mut r).unwrap().record.birth_index == 9 {
                    hits += 1;
                }
            }
            hits as f64 / 100_000.0
        };
        assert!(freq_at(25, 17) > freq_at(1, 19));
    }

    struct PlantedScorer;

    impl ArchScorer for PlantedScorer {
        fn score(&self, archs: &[Architecture]) -> Result<Vec<f64>> {
            Ok(archs
                .iter()
                .map(|a| {
                    a.blocks
                        .iter()
                        .filter(|b| b.block_type == BlockType::Dp)
                        .count() as f64
                })
                .collect())
        }
    }

    struct ConstantScorer;

    impl ArchScorer for ConstantScorer {
        fn score(&self, archs: &[Architecture]) -> Result<Vec<f64>> {
            Ok(vec![1.0; archs.len()])
        }
    }

    struct PanicScorer;

    impl ArchScorer for PanicScorer {
        fn score(&self, _archs: &[Architecture]) -> Result<Vec<f64>> {
            panic!("scorer must not be consulted for a single neighbor");
        }
    }

    #[test]
    fn guided_offspring_contracts() {
        let parent = preset(PresetName::DeepFmLike);
        let opts = SpaceOptions::default();

        // Constant scorer: first generated neighbor wins the tie.
        let mut r1 = rng(23);
        let first = {
            let mut r = rng(23);
            unique_neighbors(&parent, 50, &mut r, &opts)[0].clone()
        };
        let picked =
            guided_offspring(&parent, Some(&ConstantScorer), 50, &mut r1, &opts).unwrap();
        assert_eq!(picked, first);

        // Planted scorer: the offspring maximizes the planted property
        // over the generated neighborhood.
        let mut r = rng(29);
        let neighbors = {
            let mut r2 = rng(29);
            unique_neighbors(&parent, 100, &mut r2, &opts)
        };
        let picked =
            guided_offspring(&parent, Some(&PlantedScorer), 100, &mut r, &opts).unwrap();
        let count_dp = |a: &Architecture| {
            a.blocks
                .iter()
                .filter(|b| b.block_type == BlockType::Dp)
                .count()
        };
        let max = neighbors.iter().map(count_dp).max().unwrap();
        assert_eq!(count_dp(&picked), max);

        // Single neighbor: plain mutation, scorer untouched.
        let mut r = rng(31);
        let child = guided_offspring(&parent, Some(&PanicScorer), 1, &mut r, &opts).unwrap();
        assert_ne!(child, parent);
    }

    #[test]
    fn search_budget_equal_init_is_pure_random() {
        let evaluator = Arc::new(OracleEvaluator::with_default_spec());
        let config = SearchConfig {
            init_size: 30,
            budget: 30,
            workers: 1,
            ..SearchConfig::default()
        };
        let result = search(Arc::clone(&evaluator) as _, &config, 5).unwrap();
        assert_eq!(result.log.len(), 30);
        // Identical to random search at the same seed and budget.
        let random = random_search(evaluator as _, &config, 5).unwrap();
        let json = |log: &[EvalRecord]| serde_json::to_string(log).unwrap();
        assert_eq!(json(&result.log), json(&random.log));
    }

    #[test]
    fn search_replays_bitwise_with_one_worker() {
        let evaluator = Arc::new(OracleEvaluator::with_default_spec());
        let config = SearchConfig {
            init_size: 20,
            budget: 45,
            population_size: 10,
            survivor_window: 20,
            n_neighbors: 8,
            workers: 1,
            ..SearchConfig::default()
        };
        let a = search(Arc::clone(&evaluator) as _, &config, 42).unwrap();
        let b = search(evaluator as _, &config, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a.log).unwrap(),
            serde_json::to_string(&b.log).unwrap()
        );
        // Best-so-far curve is monotone nonincreasing.
        assert!(a.curve.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.curve.len(), 45);
    }

    #[test]
    fn random_arch_fallback_mutation_never_panics() {
        // Oracle evaluation on a tiny budget with aggressive windows.
        let evaluator = Arc::new(OracleEvaluator::with_default_spec());
        let config = SearchConfig {
            init_size: 5,
            budget: 15,
            population_size: 2,
            survivor_window: 2,
            workers: 2,
            ..SearchConfig::default()
        };
        let result = search(evaluator as _, &config, 3).unwrap();
        assert_eq!(result.log.len(), 15);
    }
}
