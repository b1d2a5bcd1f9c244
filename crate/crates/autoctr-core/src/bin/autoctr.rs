//! Command-line entry point: drives searches, rank-consistency
//! experiments, ablations, and importance extraction, persisting
//! replayable run artifacts (manifest, JSONL evaluation log, CSV series).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use autoctr_core::ablation::{guider_ablation, lambda_sweep, objective_ablation, AblationOutcome};
use autoctr_core::data::{load_csv, synthetic_ctr, CsvSchema, CtrDataset, SyntheticRecipe};
use autoctr_core::evaluator::{
    DatasetEvaluator, EvalRecord, FidelityConfig, OracleEvaluator, SubsampleMode,
};
use autoctr_core::guider::{feature_importance, make_relevance, train_rank_guider, GuiderConfig};
use autoctr_core::lanas::{lanas_search_with_sink, LanasConfig};
use autoctr_core::metrics::{
    rank_consistency_experiment, synthetic_arch_oracle, ConsistencyConfig, Strategy,
};
use autoctr_core::model::TrainConfig;
use autoctr_core::search_space::{random_arch, Architecture};
use autoctr_core::searcher::{
    random_search_with_sink, search_with_sink, GuiderMode, SearchConfig, SearchResult,
};

#[derive(Parser)]
#[command(
    name = "autoctr",
    version,
    about = "Architecture search over block-based CTR models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a searcher and persist its evaluation log.
    Search(SearchArgs),
    /// Rank-consistency analysis across subsample sizes and strategies.
    RankConsistency(RankConsistencyArgs),
    /// Sweep one search stage and summarize the outcomes.
    Ablation(AblationArgs),
    /// Train the rank guider and export coordinate importances.
    Importance(ImportanceArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset: a CSV path (requires --schema), `synthetic:default`,
    /// `synthetic:<recipe.json>`, or inline
    /// `synthetic:rows=N,seed=S,dense=D,fields=F,card=C,strength=X`.
    #[arg(long)]
    data: String,
    /// Column-role schema JSON for CSV data.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Embedding width for CSV ingestion.
    #[arg(long, default_value_t = 16)]
    embedding_dim: usize,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    patience: usize,
}

impl TrainArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.lr,
            max_epochs: self.epochs,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Searcher: autoctr, random, or lanas+.
    #[arg(long, default_value = "autoctr")]
    searcher: String,
    #[arg(long, default_value_t = 1500)]
    budget: usize,
    #[arg(long, default_value_t = 100)]
    init: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    workers: usize,
    /// Subsample row count; omit to use every row.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    hash_cap: u32,
    #[arg(long, default_value_t = false)]
    warm_start: bool,
    #[arg(long, default_value_t = 10)]
    lambda: usize,
    #[arg(long, default_value_t = 100)]
    population: usize,
    #[arg(long, default_value_t = 200)]
    q_window: usize,
    /// Objective weights over (age, fitness rank, complexity rank).
    #[arg(long, num_args = 3, default_values_t = [1.0, 0.1, 0.1])]
    mu: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    n_neighbors: usize,
    /// Mutation guider: rank, regression, or random.
    #[arg(long, default_value = "rank")]
    guider: String,
    #[command(flatten)]
    train: TrainArgs,
    /// Output directory; defaults under $AUTOCTR_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RankConsistencyArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Architecture count to sample, or a JSONL file of architectures.
    #[arg(long, default_value = "100")]
    archs: String,
    /// Subsample sizes; the largest is the reference fidelity.
    #[arg(long, value_delimiter = ',', default_values_t = [5_000, 20_000, 80_000])]
    sizes: Vec<usize>,
    /// Strategies: any of es, es+hash, es+warm.
    #[arg(long, value_delimiter = ',', default_value = "es")]
    strategies: Vec<String>,
    #[arg(long, default_value_t = 30)]
    window: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 10_000)]
    hash_cap: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    workers: usize,
    #[command(flatten)]
    train: TrainArgs,
    /// Output directory; defaults under $AUTOCTR_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblationArgs {
    /// Sweep axis: lambda, guider, or objectives.
    #[arg(long)]
    axis: String,
    /// `oracle` (default) or any --data source accepted by search.
    #[arg(long, default_value = "oracle")]
    data: String,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 400)]
    budget: usize,
    #[arg(long, default_value_t = 100)]
    init: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    workers: usize,
    #[arg(long, default_value_t = 10_000)]
    hash_cap: u32,
    #[arg(long)]
    subsample: Option<usize>,
    #[command(flatten)]
    train: TrainArgs,
    /// Output directory; defaults under $AUTOCTR_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportanceArgs {
    /// Existing JSONL evaluation log to train on.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Or: sample this many random architectures scored by the synthetic
    /// oracle.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory; defaults under $AUTOCTR_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Resolves the output directory: an explicit `--out`, else
/// `$AUTOCTR_OUT_ROOT/<command>-<seed>`.
fn resolve_out(out: Option<PathBuf>, command: &str, seed: u64) -> Result<PathBuf> {
    if let Some(out) = out {
        return Ok(out);
    }
    let root = std::env::var_os("AUTOCTR_OUT_ROOT")
        .map(PathBuf::from)
        .context("pass --out or set AUTOCTR_OUT_ROOT")?;
    Ok(root.join(format!("{command}-{seed}")))
}

/// One line of the persisted evaluation log: the record plus the run's
/// fidelity settings. Wall-clock durations live in timings.csv so the
/// log replays byte-for-byte.
#[derive(Serialize)]
struct LogLine<'a> {
    #[serde(flatten)]
    record: &'a EvalRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    fidelity: Option<&'a FidelityConfig>,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    code_version: String,
    seed: u64,
    data: serde_json::Value,
    search_config: Option<SearchConfig>,
    lanas_config: Option<LanasConfig>,
    fidelity: Option<FidelityConfig>,
    train_config: Option<TrainConfig>,
    started_unix: u64,
    finished_unix: Option<u64>,
    status: String,
    outputs: Vec<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

enum DataSource {
    Synthetic(SyntheticRecipe),
    Csv { path: PathBuf, schema: PathBuf },
    Oracle,
}

impl DataSource {
    fn describe(&self) -> serde_json::Value {
        match self {
            DataSource::Synthetic(recipe) => serde_json::json!({
                "kind": "synthetic",
                "recipe": recipe,
            }),
            DataSource::Csv { path, schema } => serde_json::json!({
                "kind": "csv",
                "path": path.display().to_string(),
                "schema": schema.display().to_string(),
            }),
            DataSource::Oracle => serde_json::json!({ "kind": "oracle" }),
        }
    }
}

fn parse_inline_recipe(spec: &str) -> Result<SyntheticRecipe> {
    let mut recipe = SyntheticRecipe::default();
    let mut fields: Option<usize> = None;
    let mut card: Option<u32> = None;
    for pair in spec.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .with_context(|| format!("bad recipe field `{pair}` (expected key=value)"))?;
        match key {
            "rows" => recipe.n_rows = value.parse()?,
            "seed" => recipe.seed = value.parse()?,
            "dense" => recipe.n_dense = value.parse()?,
            "fields" => fields = Some(value.parse()?),
            "card" => card = Some(value.parse()?),
            "strength" => recipe.interaction_strength = value.parse()?,
            "noise" => recipe.noise_sd = value.parse()?,
            other => bail!("unknown recipe field `{other}`"),
        }
    }
    if fields.is_some() || card.is_some() {
        let n = fields.unwrap_or(recipe.sparse_cardinalities.len());
        let c = card.unwrap_or(40);
        recipe.sparse_cardinalities = vec![c; n];
        recipe.planted_pairs = (0..n / 2).map(|i| (2 * i, 2 * i + 1)).collect();
    }
    Ok(recipe)
}

fn parse_data_spec(spec: &str, schema: Option<&Path>) -> Result<DataSource> {
    if spec == "oracle" {
        return Ok(DataSource::Oracle);
    }
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        if rest == "default" {
            return Ok(DataSource::Synthetic(SyntheticRecipe::default()));
        }
        if rest.ends_with(".json") {
            let text =
                std::fs::read_to_string(rest).with_context(|| format!("reading recipe {rest}"))?;
            return Ok(DataSource::Synthetic(serde_json::from_str(&text)?));
        }
        return Ok(DataSource::Synthetic(parse_inline_recipe(rest)?));
    }
    let path = PathBuf::from(spec);
    let schema = schema
        .map(Path::to_path_buf)
        .context("CSV data needs --schema")?;
    Ok(DataSource::Csv { path, schema })
}

fn parse_data_source(args: &DataArgs) -> Result<DataSource> {
    parse_data_spec(&args.data, args.schema.as_deref())
}

fn load_dataset(source: &DataSource, embedding_dim: usize, out: &Path) -> Result<CtrDataset> {
    match source {
        DataSource::Synthetic(recipe) => {
            // Persist the recipe next to the run so it can be regenerated.
            std::fs::write(
                out.join("synthetic_recipe.json"),
                serde_json::to_string_pretty(recipe)?,
            )?;
            Ok(synthetic_ctr(recipe))
        }
        DataSource::Csv { path, schema } => {
            let schema = CsvSchema::from_json_file(schema)?;
            Ok(load_csv(path, &schema, embedding_dim)?)
        }
        DataSource::Oracle => bail!("this command needs a real dataset"),
    }
}

/// Streaming writers for the per-evaluation artifacts; every line is
/// flushed on completion so an interrupted run leaves a valid prefix.
struct RunWriters {
    log: BufWriter<File>,
    timings: BufWriter<File>,
    completed: usize,
}

impl RunWriters {
    fn new(dir: &Path) -> Result<Self> {
        let log = BufWriter::new(File::create(dir.join("eval_log.jsonl"))?);
        let mut timings = BufWriter::new(File::create(dir.join("timings.csv"))?);
        writeln!(timings, "birth_index,duration_ms")?;
        Ok(RunWriters {
            log,
            timings,
            completed: 0,
        })
    }

    fn write(&mut self, record: &EvalRecord, duration_ms: f64, fidelity: Option<&FidelityConfig>) {
        let line = LogLine { record, fidelity };
        if let Ok(json) = serde_json::to_string(&line) {
            let _ = writeln!(self.log, "{json}");
            let _ = self.log.flush();
        }
        let _ = writeln!(self.timings, "{},{:.3}", record.birth_index, duration_ms);
        let _ = self.timings.flush();
        self.completed += 1;
        if self.completed % 50 == 0 {
            eprintln!("  completed {} evaluations", self.completed);
        }
    }
}

fn write_curve(dir: &Path, name: &str, curve: &[f64]) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join(name))?);
    writeln!(f, "eval_index,best_val_logloss")?;
    for (i, v) in curve.iter().enumerate() {
        writeln!(f, "{i},{v:.6}")?;
    }
    Ok(())
}

fn cmd_search(args: SearchArgs) -> Result<()> {
    let out = resolve_out(args.out.clone(), "search", args.seed)?;
    std::fs::create_dir_all(&out)?;
    let source = parse_data_source(&args.data)?;
    if args.mu.len() != 3 {
        bail!("--mu takes exactly three weights");
    }

    let fidelity = FidelityConfig {
        subsample_rows: args.subsample,
        subsample_mode: SubsampleMode::Head,
        hash_cap: Some(args.hash_cap),
        warm_start: args.warm_start,
        split_ratios: (0.8, 0.1, 0.1),
    };
    let train_cfg = args.train.to_config();
    let search_cfg = SearchConfig {
        population_size: args.population,
        survivor_window: args.q_window,
        mu: [args.mu[0], args.mu[1], args.mu[2]],
        lambda: args.lambda,
        n_neighbors: args.n_neighbors,
        init_size: args.init,
        budget: args.budget,
        guider_mode: GuiderMode::from_str(&args.guider)?,
        workers: args.workers,
        ..SearchConfig::default()
    };
    let lanas_cfg = LanasConfig {
        init_size: args.init,
        budget: args.budget,
        workers: args.workers,
        ..LanasConfig::default()
    };

    let is_oracle = matches!(source, DataSource::Oracle);
    let mut manifest = RunManifest {
        command: format!("search --searcher {}", args.searcher),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: args.seed,
        data: source.describe(),
        search_config: Some(search_cfg.clone()),
        lanas_config: (args.searcher == "lanas+").then(|| lanas_cfg.clone()),
        fidelity: (!is_oracle).then(|| fidelity.clone()),
        train_config: (!is_oracle).then(|| train_cfg.clone()),
        started_unix: now_unix(),
        finished_unix: None,
        status: "running".to_string(),
        outputs: vec![
            "manifest.json".into(),
            "eval_log.jsonl".into(),
            "best_arch.json".into(),
            "best_curve.csv".into(),
            "timings.csv".into(),
        ],
    };
    write_manifest(&out, &manifest)?;

    let evaluator: Arc<dyn autoctr_core::evaluator::ArchEvaluator> = match &source {
        DataSource::Oracle => Arc::new(OracleEvaluator::with_default_spec()),
        _ => {
            let dataset = load_dataset(&source, args.data.embedding_dim, &out)?;
            eprintln!(
                "dataset: {} rows, {} dense, {} sparse fields",
                dataset.n_rows,
                dataset.spec.n_dense,
                dataset.spec.n_sparse()
            );
            Arc::new(DatasetEvaluator::new(
                &dataset,
                &fidelity,
                train_cfg.clone(),
                args.seed,
            )?)
        }
    };

    let mut writers = RunWriters::new(&out)?;
    let line_fidelity = (!is_oracle).then_some(&fidelity);
    let mut sink = |record: &EvalRecord, duration: f64| {
        writers.write(record, duration, line_fidelity);
    };

    let result: SearchResult = match args.searcher.as_str() {
        "autoctr" => search_with_sink(evaluator, &search_cfg, args.seed, Some(&mut sink))?,
        "random" => random_search_with_sink(evaluator, &search_cfg, args.seed, Some(&mut sink))?,
        "lanas+" => lanas_search_with_sink(evaluator, &lanas_cfg, args.seed, Some(&mut sink))?,
        other => bail!("unknown searcher `{other}` (expected autoctr, random, or lanas+)"),
    };

    std::fs::write(
        out.join("best_arch.json"),
        serde_json::to_string_pretty(&result.best)?,
    )?;
    write_curve(&out, "best_curve.csv", &result.curve)?;

    manifest.finished_unix = Some(now_unix());
    manifest.status = "complete".to_string();
    write_manifest(&out, &manifest)?;
    println!(
        "best val_logloss {:.6} after {} evaluations",
        result.best.val_logloss,
        result.log.len(),
    );
    Ok(())
}

fn cmd_rank_consistency(args: RankConsistencyArgs) -> Result<()> {
    let out = resolve_out(args.out.clone(), "rank-consistency", args.seed)?;
    std::fs::create_dir_all(&out)?;
    let source = parse_data_source(&args.data)?;
    let dataset = load_dataset(&source, args.data.embedding_dim, &out)?;

    let archs: Vec<Architecture> = if let Ok(n) = args.archs.parse::<usize>() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
        (0..n).map(|_| random_arch(&mut rng, true)).collect()
    } else {
        let text = std::fs::read_to_string(&args.archs)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(Architecture::from_json)
            .collect::<autoctr_core::Result<_>>()?
    };

    let strategies: Vec<Strategy> = args
        .strategies
        .iter()
        .map(|s| Strategy::from_str(s))
        .collect::<autoctr_core::Result<_>>()?;
    let cfg = ConsistencyConfig {
        sizes: args.sizes.clone(),
        strategies,
        seeds: args.seeds.clone(),
        window: args.window,
        hash_cap: args.hash_cap,
        train_cfg: args.train.to_config(),
        workers: args.workers,
        ..ConsistencyConfig::default()
    };

    let mut manifest = RunManifest {
        command: "rank-consistency".to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: args.seed,
        data: source.describe(),
        search_config: None,
        lanas_config: None,
        fidelity: None,
        train_config: Some(cfg.train_cfg.clone()),
        started_unix: now_unix(),
        finished_unix: None,
        status: "running".to_string(),
        outputs: vec![
            "manifest.json".into(),
            "global_tau.csv".into(),
            "sliding_tau.csv".into(),
            "ndcg.csv".into(),
        ],
    };
    write_manifest(&out, &manifest)?;

    let report = rank_consistency_experiment(&archs, &dataset, &cfg)?;

    let fmt_tau = |t: Option<f64>| t.map_or("nan".to_string(), |v| format!("{v:.6}"));
    let mut f = BufWriter::new(File::create(out.join("global_tau.csv"))?);
    writeln!(f, "size,strategy,seed,tau_b")?;
    for row in &report.global {
        writeln!(
            f,
            "{},{},{},{}",
            row.size,
            row.strategy,
            row.seed,
            fmt_tau(row.tau_b)
        )?;
    }
    let mut f = BufWriter::new(File::create(out.join("sliding_tau.csv"))?);
    writeln!(f, "strategy,seed,center,tau_b")?;
    for row in &report.sliding {
        writeln!(
            f,
            "{},{},{},{}",
            row.strategy,
            row.seed,
            row.center,
            fmt_tau(row.tau_b)
        )?;
    }
    let mut f = BufWriter::new(File::create(out.join("ndcg.csv"))?);
    writeln!(f, "strategy,seed,k,ndcg")?;
    for row in &report.ndcg {
        writeln!(f, "{},{},{},{:.6}", row.strategy, row.seed, row.k, row.ndcg)?;
    }
    if !report.excluded.is_empty() {
        eprintln!(
            "excluded {} architectures with failed evaluations: {:?}",
            report.excluded.len(),
            report.excluded
        );
    }

    manifest.finished_unix = Some(now_unix());
    manifest.status = "complete".to_string();
    write_manifest(&out, &manifest)?;
    println!(
        "wrote {} global rows, {} sliding rows, {} ndcg rows",
        report.global.len(),
        report.sliding.len(),
        report.ndcg.len()
    );
    Ok(())
}

fn cmd_ablation(args: AblationArgs) -> Result<()> {
    let out = resolve_out(args.out.clone(), "ablation", args.seed)?;
    std::fs::create_dir_all(&out)?;
    let source = parse_data_spec(&args.data, args.schema.as_deref())?;
    let train_cfg = args.train.to_config();
    let fidelity = FidelityConfig {
        subsample_rows: args.subsample,
        hash_cap: Some(args.hash_cap),
        ..FidelityConfig::default()
    };
    let evaluator: Arc<dyn autoctr_core::evaluator::ArchEvaluator> = match &source {
        DataSource::Oracle => Arc::new(OracleEvaluator::with_default_spec()),
        _ => {
            let dataset = load_dataset(&source, args.embedding_dim, &out)?;
            Arc::new(DatasetEvaluator::new(
                &dataset,
                &fidelity,
                train_cfg.clone(),
                args.seed,
            )?)
        }
    };
    let base = SearchConfig {
        init_size: args.init,
        budget: args.budget,
        workers: args.workers,
        ..SearchConfig::default()
    };

    let mut manifest = RunManifest {
        command: format!("ablation --axis {}", args.axis),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: args.seed,
        data: source.describe(),
        search_config: Some(base.clone()),
        lanas_config: None,
        fidelity: Some(fidelity.clone()),
        train_config: Some(train_cfg),
        started_unix: now_unix(),
        finished_unix: None,
        status: "running".to_string(),
        outputs: vec!["manifest.json".into(), "summary.csv".into()],
    };
    write_manifest(&out, &manifest)?;

    let outcomes: Vec<AblationOutcome> = match args.axis.as_str() {
        "lambda" => lambda_sweep(evaluator, &base, &[1, 5, 10, 25, 50], args.seed)?,
        "guider" => guider_ablation(evaluator, &base, args.seed)?,
        "objectives" => objective_ablation(evaluator, &base, args.seed)?,
        other => bail!("unknown ablation axis `{other}`"),
    };

    let mut summary = BufWriter::new(File::create(out.join("summary.csv"))?);
    writeln!(summary, "setting,best_val_logloss,n_params,flops")?;
    for outcome in &outcomes {
        write_curve(
            &out,
            &format!("curve_{}.csv", outcome.label),
            &outcome.result.curve,
        )?;
        manifest.outputs.push(format!("curve_{}.csv", outcome.label));
        writeln!(
            summary,
            "{},{:.6},{},{}",
            outcome.label,
            outcome.result.best.val_logloss,
            outcome.result.best.n_params,
            outcome.result.best.flops
        )?;
    }
    drop(summary);

    manifest.finished_unix = Some(now_unix());
    manifest.status = "complete".to_string();
    write_manifest(&out, &manifest)?;
    println!("wrote {} ablation settings", outcomes.len());
    Ok(())
}

fn cmd_importance(args: ImportanceArgs) -> Result<()> {
    let out = resolve_out(args.out.clone(), "importance", args.seed)?;
    std::fs::create_dir_all(&out)?;
    let records: Vec<EvalRecord> = match (&args.log, args.random) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()?
        }
        (None, Some(n)) => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
            (0..n)
                .map(|i| {
                    let arch = random_arch(&mut rng, true);
                    let score = synthetic_arch_oracle(&arch)?;
                    Ok(EvalRecord {
                        arch,
                        val_logloss: score,
                        val_auc: 0.5,
                        flops: 0,
                        n_params: 0,
                        birth_index: i,
                        seed: args.seed,
                    })
                })
                .collect::<autoctr_core::Result<_>>()?
        }
        (None, None) => bail!("importance needs --log or --random"),
    };

    let set = make_relevance(&records)?;
    let guider_cfg = GuiderConfig {
        seed: args.seed,
        ..GuiderConfig::default()
    };
    let model = train_rank_guider(&set, &guider_cfg)?;
    let ranking = feature_importance(&model, args.top);

    let mut f = BufWriter::new(File::create(out.join("importance.csv"))?);
    writeln!(f, "label,normalized_gain")?;
    for (label, gain) in &ranking {
        writeln!(f, "{label},{gain:.6}")?;
    }
    std::fs::write(out.join("guider.json"), model.to_json())?;
    println!("wrote {} importance rows", ranking.len());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search(args) => cmd_search(args),
        Command::RankConsistency(args) => cmd_rank_consistency(args),
        Command::Ablation(args) => cmd_ablation(args),
        Command::Importance(args) => cmd_importance(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
