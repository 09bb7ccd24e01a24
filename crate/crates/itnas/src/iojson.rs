//! Canonical report serialization. Every JSON float is written with 17
//! significant digits (`{:.16e}`) and CSV accuracy columns use the same
//! format, so identical values always produce identical bytes and
//! save/load round-trips are exact.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::earlystop::{AccelerationReport, StopDecisionConfig};
use crate::harness::{RankCorrelationReport, SearchComparison};
use crate::selector::SearchTrace;

struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize with the canonical float format, plus a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFigFormatter);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn write_canonical_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

fn fmt_accuracy(a: f64) -> String {
    format!("{a:.16e}")
}

// ---------------------------------------------------------------------------
// Search traces
// ---------------------------------------------------------------------------

/// CSV with header `step,arch_id,accuracy,cumulative_epochs,incumbent`.
pub fn write_trace_csv<W: Write>(trace: &SearchTrace, out: &mut W) -> Result<()> {
    writeln!(out, "step,arch_id,accuracy,cumulative_epochs,incumbent")?;
    for s in &trace.steps {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.step,
            s.arch.0,
            fmt_accuracy(s.accuracy),
            s.cumulative_epochs,
            fmt_accuracy(s.incumbent_after)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSummary {
    pub method: String,
    pub dataset_id: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub total_epochs: u64,
    pub best_arch: usize,
    pub best_accuracy: f64,
    /// Best accuracy any candidate in the pool reaches.
    pub pool_best: f64,
    /// Simple regret after each step.
    pub regret_curve: Vec<f64>,
}

impl SearchSummary {
    pub fn from_trace(
        trace: &SearchTrace,
        method: &str,
        dataset_id: usize,
        seed: u64,
        pool_best: f64,
    ) -> SearchSummary {
        SearchSummary {
            method: method.to_string(),
            dataset_id,
            seed,
            evaluations: trace.steps.len(),
            total_epochs: trace.total_epochs(),
            best_arch: trace.best_arch.map(|a| a.0).unwrap_or(usize::MAX),
            best_accuracy: trace.best_accuracy,
            pool_best,
            regret_curve: crate::selector::regret_curve(trace, pool_best),
        }
    }
}

// ---------------------------------------------------------------------------
// Early-stopping reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccelerationRun {
    pub arch_id: usize,
    pub stop_epoch: usize,
    pub stopped_early: bool,
    pub final_or_last_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccelerationSummary {
    pub dataset_id: usize,
    pub order_seed: u64,
    pub delta: f64,
    pub min_epochs: usize,
    pub total_epochs: u64,
    pub baseline_epochs: u64,
    pub speedup_factor: f64,
    pub regret: f64,
    pub best_final_accuracy_found: f64,
    pub runs: Vec<AccelerationRun>,
}

impl AccelerationSummary {
    pub fn from_report(
        report: &AccelerationReport,
        cfg: &StopDecisionConfig,
        order_seed: u64,
    ) -> AccelerationSummary {
        AccelerationSummary {
            dataset_id: report.dataset.0,
            order_seed,
            delta: cfg.delta,
            min_epochs: cfg.min_epochs,
            total_epochs: report.total_epochs,
            baseline_epochs: report.baseline_epochs,
            speedup_factor: report.speedup_factor,
            regret: report.regret,
            best_final_accuracy_found: report.best_final_accuracy_found,
            runs: report
                .runs
                .iter()
                .map(|r| AccelerationRun {
                    arch_id: r.arch.0,
                    stop_epoch: r.stop_epoch,
                    stopped_early: r.stopped_early,
                    final_or_last_accuracy: r.last_accuracy(),
                })
                .collect(),
        }
    }
}

/// CSV with header `arch_id,stop_epoch,final_or_last_accuracy,stopped_early`.
pub fn write_acceleration_csv<W: Write>(report: &AccelerationReport, out: &mut W) -> Result<()> {
    writeln!(out, "arch_id,stop_epoch,final_or_last_accuracy,stopped_early")?;
    for r in &report.runs {
        writeln!(
            out,
            "{},{},{},{}",
            r.arch.0,
            r.stop_epoch,
            fmt_accuracy(r.last_accuracy()),
            r.stopped_early
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rank-correlation reports
// ---------------------------------------------------------------------------

/// CSV with header `prefix_T,repetition,spearman`.
pub fn write_rank_csv<W: Write>(report: &RankCorrelationReport, out: &mut W) -> Result<()> {
    writeln!(out, "prefix_T,repetition,spearman")?;
    for r in &report.rows {
        writeln!(out, "{},{},{}", r.prefix_t, r.repetition, fmt_accuracy(r.spearman))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankSummary {
    pub dataset_id: usize,
    pub seed: u64,
    pub repetitions: usize,
    pub n_known_curves: usize,
    pub prefix_lengths: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RankSummary {
    pub fn from_report(
        report: &RankCorrelationReport,
        dataset_id: usize,
        seed: u64,
        repetitions: usize,
        n_known_curves: usize,
    ) -> RankSummary {
        RankSummary {
            dataset_id,
            seed,
            repetitions,
            n_known_curves,
            prefix_lengths: report.summary.iter().map(|s| s.prefix_t).collect(),
            mean: report.summary.iter().map(|s| s.mean).collect(),
            std: report.summary.iter().map(|s| s.std).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Search-comparison table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub budgets: Vec<usize>,
    pub transfer_mean: Vec<f64>,
    pub transfer_std: Vec<f64>,
    pub random_mean: Vec<f64>,
    pub random_std: Vec<f64>,
}

impl ComparisonSummary {
    pub fn from_comparison(cmp: &SearchComparison) -> ComparisonSummary {
        ComparisonSummary {
            budgets: cmp.budgets.clone(),
            transfer_mean: cmp.transfer.iter().map(|m| m.mean).collect(),
            transfer_std: cmp.transfer.iter().map(|m| m.std).collect(),
            random_mean: cmp.random.iter().map(|m| m.mean).collect(),
            random_std: cmp.random.iter().map(|m| m.std).collect(),
        }
    }
}
