//! Experiment protocols and the statistics they report: rank correlation
//! of extrapolated final accuracies against the truth, and paired
//! transfer-search versus random-search comparisons. All repetitions are
//! seeded through `derive_seed(seed, repetition)` so results are
//! reproducible and order-independent.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::earlystop::fit_prefix_models;
use crate::metaknowledge::{DatasetId, LearningCurve, MetaknowledgeStore};
use crate::rng::{derive_seed, seeded};
use crate::selector::{run_it_nas, run_random_search, ReplayEvaluator, SearchConfig, SearchTrace};
use crate::vbmf::ModelHyperparams;

/// Assign 1-based ranks, sharing the average rank across exact ties.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean rank.
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFewValues { need: 2, got: x.len() });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Full curves of the new dataset revealed to the models per repetition.
    pub n_known_curves: usize,
    pub prefix_lengths: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCorrelationRow {
    pub prefix_t: usize,
    pub repetition: usize,
    pub spearman: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSummaryRow {
    pub prefix_t: usize,
    pub mean: f64,
    /// Population standard deviation over repetitions (0 for a single one).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankCorrelationReport {
    /// One row per (prefix length, repetition), sorted by (T, repetition).
    pub rows: Vec<RankCorrelationRow>,
    pub summary: Vec<RankSummaryRow>,
}

fn unique_held_dataset(held: &MetaknowledgeStore) -> Result<DatasetId> {
    let datasets = held.observed_datasets();
    match datasets.as_slice() {
        [d] => Ok(*d),
        [] => Err(Error::EmptyStore),
        _ => Err(Error::InvalidConfig(format!(
            "held store spans {} datasets, expected exactly one",
            datasets.len()
        ))),
    }
}

/// Per repetition: reveal `n_known_curves` random full curves of the held
/// dataset to the training corpus, fit a prefix-model bank, extrapolate
/// every remaining architecture's final accuracy from each prefix length,
/// and score the ranking against the true finals.
pub fn rank_correlation_experiment(
    train_store: &MetaknowledgeStore,
    held: &MetaknowledgeStore,
    cfg: &ExperimentConfig,
    hyper: &ModelHyperparams,
) -> Result<RankCorrelationReport> {
    if cfg.n_known_curves < 1 || cfg.repetitions < 1 || cfg.prefix_lengths.is_empty() {
        return Err(Error::InvalidConfig(
            "need n_known_curves >= 1, repetitions >= 1 and at least one prefix length".to_string(),
        ));
    }
    let dataset = unique_held_dataset(held)?;
    let archs = held.observed_archs();
    let curves: Vec<LearningCurve> = archs
        .iter()
        .map(|&n| {
            held.curve(n, dataset)
                .map(|v| LearningCurve { arch: n, dataset, values: v.to_vec() })
                .ok_or(Error::MissingCurve { arch: n.0, dataset: dataset.0 })
        })
        .collect::<Result<_>>()?;
    let horizon = curves[0].values.len();
    let t_max = *cfg.prefix_lengths.iter().max().unwrap();
    for &t in &cfg.prefix_lengths {
        if t < 1 || t >= horizon {
            return Err(Error::EpochOutOfRange { t, horizon });
        }
    }
    if archs.len() < cfg.n_known_curves + 2 {
        return Err(Error::TooFewValues { need: cfg.n_known_curves + 2, got: archs.len() });
    }

    let mut rows = Vec::with_capacity(cfg.repetitions * cfg.prefix_lengths.len());
    for rep in 0..cfg.repetitions {
        let rep_seed = derive_seed(cfg.seed, rep as u64);
        let mut shuffled: Vec<usize> = (0..curves.len()).collect();
        shuffled.shuffle(&mut seeded(rep_seed));
        let (known_idx, rest_idx) = shuffled.split_at(cfg.n_known_curves);

        let mut corpus = train_store.clone();
        let max_arch = archs.iter().map(|a| a.0).max().unwrap();
        corpus.ensure_capacity(max_arch + 1, dataset.0 + 1);
        for &i in known_idx {
            corpus.add_completed_run(curves[i].clone())?;
        }

        let bank = fit_prefix_models(&corpus, &hyper.with_seed(rep_seed), t_max)?;

        let mut remaining: Vec<&LearningCurve> = rest_idx.iter().map(|&i| &curves[i]).collect();
        remaining.sort_by_key(|c| c.arch.0);
        let truths: Vec<f64> = remaining.iter().map(|c| c.final_accuracy()).collect();
        for &t in &cfg.prefix_lengths {
            let preds: Vec<f64> = remaining
                .iter()
                .map(|c| Ok(bank.predict_final(c.arch, dataset, &c.values[..t])?.mean))
                .collect::<Result<_>>()?;
            rows.push(RankCorrelationRow {
                prefix_t: t,
                repetition: rep,
                spearman: spearman(&preds, &truths)?,
            });
        }
    }
    rows.sort_by_key(|r| (r.prefix_t, r.repetition));

    let mut summary = Vec::new();
    let mut ts: Vec<usize> = cfg.prefix_lengths.clone();
    ts.sort_unstable();
    ts.dedup();
    for t in ts {
        let vals: Vec<f64> =
            rows.iter().filter(|r| r.prefix_t == t).map(|r| r.spearman).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        summary.push(RankSummaryRow { prefix_t: t, mean, std: var.sqrt() });
    }
    Ok(RankCorrelationReport { rows, summary })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Incumbent accuracy per budget per method, aggregated over repetitions
/// that replay identical held-out results.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchComparison {
    pub budgets: Vec<usize>,
    pub transfer: Vec<MeanStd>,
    pub random: Vec<MeanStd>,
}

pub fn search_comparison(
    train_store: &MetaknowledgeStore,
    held: &MetaknowledgeStore,
    budgets: &[usize],
    repetitions: usize,
    hyper: &ModelHyperparams,
) -> Result<SearchComparison> {
    if budgets.is_empty() || repetitions < 1 {
        return Err(Error::InvalidConfig("need at least one budget and one repetition".to_string()));
    }
    let dataset = unique_held_dataset(held)?;
    let candidates = held.observed_archs();
    let max_budget = *budgets.iter().max().unwrap();

    let mut transfer_incumbents: Vec<Vec<f64>> = vec![Vec::new(); budgets.len()];
    let mut random_incumbents: Vec<Vec<f64>> = vec![Vec::new(); budgets.len()];
    for rep in 0..repetitions {
        let transfer_trace = {
            let mut eval = ReplayEvaluator::new(held, dataset);
            let config = SearchConfig::new(
                max_budget,
                hyper.clone(),
                derive_seed(hyper.seed, 2 * rep as u64),
            );
            run_it_nas(train_store, dataset, &candidates, &mut eval, &config)?
        };
        let random_trace = {
            let mut eval = ReplayEvaluator::new(held, dataset);
            let config = SearchConfig::new(
                max_budget,
                hyper.clone(),
                derive_seed(hyper.seed, 2 * rep as u64 + 1),
            );
            run_random_search(&candidates, &mut eval, &config)?
        };
        record_incumbents(&transfer_trace, budgets, &mut transfer_incumbents);
        record_incumbents(&random_trace, budgets, &mut random_incumbents);
    }
    Ok(SearchComparison {
        budgets: budgets.to_vec(),
        transfer: transfer_incumbents.iter().map(|v| mean_std(v)).collect(),
        random: random_incumbents.iter().map(|v| mean_std(v)).collect(),
    })
}

fn record_incumbents(trace: &SearchTrace, budgets: &[usize], out: &mut [Vec<f64>]) {
    for (i, &b) in budgets.iter().enumerate() {
        if let Some(v) = trace.incumbent_at(b) {
            out[i].push(v);
        }
    }
}
