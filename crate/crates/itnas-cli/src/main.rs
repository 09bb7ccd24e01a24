//! Experiment CLI. Subcommands generate synthetic metaknowledge, fit and
//! checkpoint the surrogate, rank architectures for a dataset, and replay
//! the search and early-stopping protocols. Every command is deterministic
//! under a fixed `--seed`; outputs are canonical CSV/JSON only, and no
//! environment variables are read.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use itnas::earlystop::{accelerated_random_search, StopDecisionConfig};
use itnas::harness::{rank_correlation_experiment, ExperimentConfig};
use itnas::iojson::{
    to_canonical_json, write_acceleration_csv, write_canonical_json, write_rank_csv,
    write_trace_csv, AccelerationSummary, RankSummary, SearchSummary,
};
use itnas::selector::{run_it_nas, run_random_search, ReplayEvaluator, SearchConfig};
use itnas::vbmf::{fit, init_variational, LikelihoodMode, ModelCheckpoint, ModelHyperparams};
use itnas::{
    expected_improvement, generate_synthetic, predict, ArchitectureId, DatasetId, Incumbent,
    MetaknowledgeStore, SyntheticConfig,
};

#[derive(Parser)]
#[command(
    name = "itnas",
    about = "Transfer-based architecture selection and learning-curve early stopping on replayed results",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StoreArgs {
    /// Directory holding observations.csv and (optionally) curves.csv.
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON file overriding any subset of the model hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic store (observations.csv, curves.csv, truth.json).
    GenSynthetic {
        /// Generator config JSON: n_archs, n_datasets, latent_dim, horizon,
        /// noise_scale, seed.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the seed inside the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the surrogate on a store and write a model checkpoint.
    Fit {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Train on curve prefixes of this length instead of final
        /// accuracies (requires curves.csv).
        #[arg(long)]
        curve_prefix: Option<usize>,
        /// Hold this dataset out of the fit.
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank architectures for a dataset: by expected improvement when the
    /// dataset has observations, otherwise by the cold-start rule.
    Recommend {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        dataset: usize,
        /// Keep only the best K rows.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a sequential search against a held-out dataset.
    SimulateSearch {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        holdout: usize,
        #[arg(long)]
        budget: usize,
        /// `transfer` (default) or `random`.
        #[arg(long, default_value = "transfer")]
        method: String,
        /// Trace CSV path; a JSON summary lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON path (default: the trace path with .json).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Replay early stopping over the held-out dataset's curves.
    SimulateEarlystop {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        holdout: usize,
        /// Stop once the probability of improvement is <= delta.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        min_epochs: usize,
        /// Report JSON path; a per-run CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Per-run CSV path (default: the report path with .csv).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rank-correlation experiment over curve prefixes.
    EvalRank {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        holdout: usize,
        /// Comma-separated prefix lengths, e.g. 1,5,10,25,49.
        #[arg(long, value_delimiter = ',')]
        prefixes: Vec<usize>,
        /// Full curves of the held dataset revealed per repetition.
        #[arg(long, default_value_t = 5)]
        known: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Row CSV path; a JSON summary lands next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_store(args: &StoreArgs) -> anyhow::Result<MetaknowledgeStore> {
    let obs = args.store.join("observations.csv");
    let curves = args.store.join("curves.csv");
    let curves_path = curves.exists().then_some(curves.as_path());
    MetaknowledgeStore::load(&obs, curves_path)
        .with_context(|| format!("loading store from {}", args.store.display()))
}

fn load_hyper(model: &ModelArgs) -> anyhow::Result<ModelHyperparams> {
    let mut hyper = match &model.config {
        None => ModelHyperparams::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
    };
    hyper.seed = model.seed;
    hyper.validate()?;
    Ok(hyper)
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenSynthetic { config, out_dir, seed } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: SyntheticConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (store, truth) = generate_synthetic(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            store.save(&out_dir.join("observations.csv"), &out_dir.join("curves.csv"))?;
            write_canonical_json(&truth, &out_dir.join("truth.json"))?;
            println!(
                "wrote {} observations and {} curves to {}",
                store.observed_count(),
                store.curve_count(),
                out_dir.display()
            );
        }
        Command::Fit { store, model, curve_prefix, holdout, out } => {
            let hyper = load_hyper(&model)?;
            let mut data = load_store(&store)?;
            if let Some(d) = holdout {
                data = data.holdout_dataset(DatasetId(d))?.0;
            }
            let mode = match curve_prefix {
                None => LikelihoodMode::FinalAccuracy,
                Some(t) => LikelihoodMode::CurvePrefix(t),
            };
            let with_curve = curve_prefix.is_some();
            let start = init_variational(&hyper, data.n_archs(), data.n_datasets(), with_curve);
            let fitted = fit(&start, &data, &hyper, mode)?;
            write_canonical_json(&ModelCheckpoint::from_model(&fitted, &hyper), &out)?;
            println!("fitted {} weights on {} rows -> {}", fitted.len(), data.observed_count(), out.display());
        }
        Command::Recommend { store, model, dataset, top, out } => {
            let hyper = load_hyper(&model)?;
            let mut data = load_store(&store)?;
            data.ensure_capacity(data.n_archs(), dataset + 1);
            let rows = recommend_rows(&data, DatasetId(dataset), &hyper)?;
            let keep = top.unwrap_or(rows.len()).min(rows.len());
            let mut text = String::from("rank,arch_id,score,kind\n");
            for (i, (arch, score, kind)) in rows.iter().take(keep).enumerate() {
                text.push_str(&format!("{},{},{:.16e},{}\n", i + 1, arch.0, score, kind));
            }
            std::fs::write(&out, text)?;
            println!("wrote {keep} recommendations to {}", out.display());
        }
        Command::SimulateSearch { store, model, holdout, budget, method, out, summary } => {
            let hyper = load_hyper(&model)?;
            let data = load_store(&store)?;
            let held_id = DatasetId(holdout);
            let (train, held) = data.holdout_dataset(held_id)?;
            let candidates = held.observed_archs();
            if candidates.is_empty() {
                bail!("held-out dataset {holdout} has no observations to replay");
            }
            let mut evaluator = ReplayEvaluator::new(&held, held_id);
            let pool_best = evaluator.pool_best(&candidates).unwrap();
            let config = SearchConfig::new(budget, hyper, model.seed);
            let trace = match method.as_str() {
                "transfer" => run_it_nas(&train, held_id, &candidates, &mut evaluator, &config)?,
                "random" => run_random_search(&candidates, &mut evaluator, &config)?,
                other => bail!("unknown method {other:?} (expected transfer or random)"),
            };
            let mut csv = Vec::new();
            write_trace_csv(&trace, &mut csv)?;
            std::fs::write(&out, csv)?;
            let summary_path = summary.unwrap_or_else(|| sibling(&out, "json"));
            let s = SearchSummary::from_trace(&trace, &method, holdout, model.seed, pool_best);
            write_canonical_json(&s, &summary_path)?;
            println!(
                "{} search: best arch {} at {:.4} after {} evaluations -> {}",
                method,
                s.best_arch,
                s.best_accuracy,
                s.evaluations,
                out.display()
            );
        }
        Command::SimulateEarlystop { store, model, holdout, delta, min_epochs, out, csv } => {
            let hyper = load_hyper(&model)?;
            let data = load_store(&store)?;
            let held_id = DatasetId(holdout);
            let (train, held) = data.holdout_dataset(held_id)?;
            let curves: Vec<_> = held.curves().collect();
            if curves.is_empty() {
                bail!("held-out dataset {holdout} has no curves to replay");
            }
            let cfg = StopDecisionConfig { delta, min_epochs };
            let report = accelerated_random_search(&train, &curves, model.seed, &cfg, &hyper)?;
            write_canonical_json(&AccelerationSummary::from_report(&report, &cfg, model.seed), &out)?;
            let csv_path = csv.unwrap_or_else(|| sibling(&out, "csv"));
            let mut buf = Vec::new();
            write_acceleration_csv(&report, &mut buf)?;
            std::fs::write(&csv_path, buf)?;
            println!(
                "early stopping: speedup {:.2}x, regret {:.4} -> {}",
                report.speedup_factor,
                report.regret,
                out.display()
            );
        }
        Command::EvalRank { store, model, holdout, prefixes, known, reps, out, summary } => {
            let hyper = load_hyper(&model)?;
            let data = load_store(&store)?;
            let held_id = DatasetId(holdout);
            let (train, held) = data.holdout_dataset(held_id)?;
            let cfg = ExperimentConfig {
                n_known_curves: known,
                prefix_lengths: prefixes,
                repetitions: reps,
                seed: model.seed,
            };
            let report = rank_correlation_experiment(&train, &held, &cfg, &hyper)?;
            let mut buf = Vec::new();
            write_rank_csv(&report, &mut buf)?;
            std::fs::write(&out, buf)?;
            let summary_path = summary.unwrap_or_else(|| sibling(&out, "json"));
            let s = RankSummary::from_report(&report, holdout, model.seed, reps, known);
            write_canonical_json(&s, &summary_path)?;
            let shown = to_canonical_json(&s.mean)?;
            println!("mean spearman per prefix: {}", shown.trim_end());
        }
    }
    Ok(())
}

/// EI ranking against the dataset's incumbent when it has observations;
/// otherwise the cold-start normalized-accuracy ranking.
fn recommend_rows(
    data: &MetaknowledgeStore,
    d: DatasetId,
    hyper: &ModelHyperparams,
) -> anyhow::Result<Vec<(ArchitectureId, f64, &'static str)>> {
    let mut incumbent = Incumbent::Unobserved;
    let mut evaluated = Vec::new();
    for n in 0..data.n_archs() {
        if let Some(a) = data.observation(ArchitectureId(n), d) {
            incumbent.observe(a);
            evaluated.push(n);
        }
    }
    match incumbent.value() {
        None => {
            // Nothing observed on this dataset: rank by normalized mean
            // accuracy across the datasets we do know (the single-shot
            // recommendation).
            let mut rows: Vec<_> =
                itnas::acquisition::normalized_scores(data, None, itnas::ScoreNormalization::ZScore)?
                    .into_iter()
                    .map(|(arch, score)| (arch, score, "cold_start"))
                    .collect();
            rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            Ok(rows)
        }
        Some(best_seen) => {
            let start = init_variational(hyper, data.n_archs(), data.n_datasets(), false);
            let fitted = fit(&start, data, hyper, LikelihoodMode::FinalAccuracy)?;
            let mut rows = Vec::new();
            for n in 0..data.n_archs() {
                if evaluated.contains(&n) {
                    continue;
                }
                let moments = predict(&fitted, hyper, ArchitectureId(n), d, None)?;
                rows.push((
                    ArchitectureId(n),
                    expected_improvement(&moments, best_seen)?,
                    "expected_improvement",
                ));
            }
            rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            Ok(rows)
        }
    }
}
