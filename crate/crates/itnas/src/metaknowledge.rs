//! The metaknowledge store: every observed (architecture, dataset) final
//! validation accuracy and learning curve gathered on previous tasks, plus
//! loading, saving, partitioning and a synthetic generator for benchmarks.
//!
//! Architectures and datasets are opaque dense integer ids. Curve epochs
//! are 1-based at every interface; a curve of horizon `T` stores the
//! accuracy after epoch `t` at `values[t - 1]`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::standard_normal;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArchitectureId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DatasetId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyObservation {
    pub arch: ArchitectureId,
    pub dataset: DatasetId,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub arch: ArchitectureId,
    pub dataset: DatasetId,
    pub values: Vec<f64>,
}

impl LearningCurve {
    /// Accuracy after the last epoch of the full run.
    pub fn final_accuracy(&self) -> f64 {
        *self.values.last().expect("curve is never empty")
    }
}

/// Best accuracy over the first `t` epochs (1-based `t`).
pub fn prefix_max(curve: &LearningCurve, t: usize) -> Result<f64> {
    if t < 1 || t > curve.values.len() {
        return Err(Error::EpochOutOfRange { t, horizon: curve.values.len() });
    }
    Ok(curve.values[..t].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// The corpus of prior runs. Immutable once handed to fitting or search
/// code; rows are only appended single-threaded inside search loops.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaknowledgeStore {
    n_archs: usize,
    n_datasets: usize,
    horizon: Option<usize>,
    observations: BTreeMap<(usize, usize), f64>,
    curves: BTreeMap<(usize, usize), Vec<f64>>,
}

impl MetaknowledgeStore {
    pub fn new(n_archs: usize, n_datasets: usize) -> Self {
        MetaknowledgeStore { n_archs, n_datasets, ..Default::default() }
    }

    pub fn n_archs(&self) -> usize {
        self.n_archs
    }

    pub fn n_datasets(&self) -> usize {
        self.n_datasets
    }

    /// Uniform curve length, once any curve is present.
    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn observed_count(&self) -> usize {
        self.observations.len()
    }

    pub fn curve_count(&self) -> usize {
        self.curves.len()
    }

    pub fn observation(&self, arch: ArchitectureId, dataset: DatasetId) -> Option<f64> {
        self.observations.get(&(arch.0, dataset.0)).copied()
    }

    pub fn curve(&self, arch: ArchitectureId, dataset: DatasetId) -> Option<&[f64]> {
        self.curves.get(&(arch.0, dataset.0)).map(|v| v.as_slice())
    }

    /// Observed pairs in (arch, dataset) order: the index set of everything
    /// with a final accuracy on record.
    pub fn observations(&self) -> impl Iterator<Item = AccuracyObservation> + '_ {
        self.observations.iter().map(|(&(n, d), &a)| AccuracyObservation {
            arch: ArchitectureId(n),
            dataset: DatasetId(d),
            accuracy: a,
        })
    }

    pub fn curves(&self) -> impl Iterator<Item = LearningCurve> + '_ {
        self.curves.iter().map(|(&(n, d), v)| LearningCurve {
            arch: ArchitectureId(n),
            dataset: DatasetId(d),
            values: v.clone(),
        })
    }

    /// Ids (sorted) of architectures with at least one observation.
    pub fn observed_archs(&self) -> Vec<ArchitectureId> {
        let mut out: Vec<usize> = self.observations.keys().map(|&(n, _)| n).collect();
        out.dedup();
        out.sort_unstable();
        out.dedup();
        out.into_iter().map(ArchitectureId).collect()
    }

    /// Ids (sorted) of datasets with at least one observation.
    pub fn observed_datasets(&self) -> Vec<DatasetId> {
        let mut out: Vec<usize> = self.observations.keys().map(|&(_, d)| d).collect();
        out.sort_unstable();
        out.dedup();
        out.into_iter().map(DatasetId).collect()
    }

    /// Append one final-accuracy row. Ids beyond the current counts grow the
    /// store (ids stay dense by definition: counts are max id + 1).
    pub fn add_observation(&mut self, obs: AccuracyObservation) -> Result<()> {
        if !(0.0..=1.0).contains(&obs.accuracy) {
            return Err(Error::AccuracyOutOfRange {
                value: obs.accuracy,
                context: format!("observation for arch {}, dataset {}", obs.arch.0, obs.dataset.0),
            });
        }
        let key = (obs.arch.0, obs.dataset.0);
        if self.observations.contains_key(&key) {
            return Err(Error::DuplicateEntry {
                arch: obs.arch.0,
                dataset: obs.dataset.0,
                detail: String::new(),
            });
        }
        if let Some(curve) = self.curves.get(&key) {
            let last = *curve.last().unwrap();
            if last != obs.accuracy {
                return Err(Error::CurveObservationMismatch {
                    arch: obs.arch.0,
                    dataset: obs.dataset.0,
                    curve_final: last,
                    observation: obs.accuracy,
                });
            }
        }
        self.n_archs = self.n_archs.max(obs.arch.0 + 1);
        self.n_datasets = self.n_datasets.max(obs.dataset.0 + 1);
        self.observations.insert(key, obs.accuracy);
        Ok(())
    }

    /// Append one full learning curve. The curve length must match the
    /// store horizon, and its final value must agree with any existing
    /// observation for the pair.
    pub fn add_curve(&mut self, curve: LearningCurve) -> Result<()> {
        if curve.values.is_empty() {
            return Err(Error::NonUniformHorizon {
                arch: curve.arch.0,
                dataset: curve.dataset.0,
                len: 0,
                expected: self.horizon.unwrap_or(1),
            });
        }
        if let Some(h) = self.horizon {
            if curve.values.len() != h {
                return Err(Error::NonUniformHorizon {
                    arch: curve.arch.0,
                    dataset: curve.dataset.0,
                    len: curve.values.len(),
                    expected: h,
                });
            }
        }
        for (i, &v) in curve.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::AccuracyOutOfRange {
                    value: v,
                    context: format!(
                        "curve for arch {}, dataset {}, epoch {}",
                        curve.arch.0,
                        curve.dataset.0,
                        i + 1
                    ),
                });
            }
        }
        let key = (curve.arch.0, curve.dataset.0);
        if self.curves.contains_key(&key) {
            return Err(Error::DuplicateEntry {
                arch: curve.arch.0,
                dataset: curve.dataset.0,
                detail: " (curve)".to_string(),
            });
        }
        if let Some(&obs) = self.observations.get(&key) {
            let last = curve.final_accuracy();
            if last != obs {
                return Err(Error::CurveObservationMismatch {
                    arch: curve.arch.0,
                    dataset: curve.dataset.0,
                    curve_final: last,
                    observation: obs,
                });
            }
        }
        self.horizon.get_or_insert(curve.values.len());
        self.n_archs = self.n_archs.max(curve.arch.0 + 1);
        self.n_datasets = self.n_datasets.max(curve.dataset.0 + 1);
        self.curves.insert(key, curve.values);
        Ok(())
    }

    /// Convenience for search loops: record a completed run as both the
    /// curve and its final-accuracy observation.
    pub fn add_completed_run(&mut self, curve: LearningCurve) -> Result<()> {
        let obs = AccuracyObservation {
            arch: curve.arch,
            dataset: curve.dataset,
            accuracy: curve.final_accuracy(),
        };
        self.add_curve(curve)?;
        self.add_observation(obs)
    }

    /// Widen the declared id spaces without adding rows, so models built on
    /// this store can host queries for ids that have no data yet.
    pub fn ensure_capacity(&mut self, n_archs: usize, n_datasets: usize) {
        self.n_archs = self.n_archs.max(n_archs);
        self.n_datasets = self.n_datasets.max(n_datasets);
    }

    /// Split into (train, held): train keeps everything except dataset `d`,
    /// held keeps only dataset `d`. Id spaces are unchanged on both sides so
    /// the union of rows equals the input.
    pub fn holdout_dataset(&self, d: DatasetId) -> Result<(MetaknowledgeStore, MetaknowledgeStore)> {
        if d.0 >= self.n_datasets {
            return Err(Error::UnknownDataset(d.0));
        }
        let mut train = MetaknowledgeStore::new(self.n_archs, self.n_datasets);
        let mut held = MetaknowledgeStore::new(self.n_archs, self.n_datasets);
        train.horizon = self.horizon;
        held.horizon = self.horizon;
        for (&(n, dd), &a) in &self.observations {
            let target = if dd == d.0 { &mut held } else { &mut train };
            target.observations.insert((n, dd), a);
        }
        for (&(n, dd), v) in &self.curves {
            let target = if dd == d.0 { &mut held } else { &mut train };
            target.curves.insert((n, dd), v.clone());
        }
        Ok((train, held))
    }
}

// ---------------------------------------------------------------------------
// CSV formats
//
// observations.csv: header `dataset_id,arch_id,accuracy`
// curves.csv:       header `dataset_id,arch_id,epoch,accuracy`, epoch 1-based
//
// Canonical files sort rows by (dataset_id, arch_id[, epoch]) and print
// accuracies with 17 significant digits so save(load(x)) is byte-identical.
// ---------------------------------------------------------------------------

fn fmt_accuracy(a: f64) -> String {
    format!("{a:.16e}")
}

fn parse_field<T: std::str::FromStr>(raw: &str, path: &str, line: u64, what: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        msg: format!("invalid {what}: {raw:?}"),
    })
}

fn check_header(got: &csv::StringRecord, want: &[&str], path: &str) -> Result<()> {
    let fields: Vec<&str> = got.iter().map(|s| s.trim()).collect();
    if fields != want {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: format!("expected header {:?}, got {:?}", want.join(","), fields.join(",")),
        });
    }
    Ok(())
}

impl MetaknowledgeStore {
    pub fn load(observations_path: &Path, curves_path: Option<&Path>) -> Result<MetaknowledgeStore> {
        let obs_file = std::fs::File::open(observations_path)?;
        let mut store = MetaknowledgeStore::default();
        store.read_observations(obs_file, &observations_path.display().to_string())?;
        if let Some(cp) = curves_path {
            let curve_file = std::fs::File::open(cp)?;
            store.read_curves(curve_file, &cp.display().to_string())?;
        }
        Ok(store)
    }

    pub fn read_observations<R: Read>(&mut self, reader: R, path: &str) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        check_header(rdr.headers().map_err(io_to_parse(path))?, &["dataset_id", "arch_id", "accuracy"], path)?;
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(io_to_parse_line(path, line))?;
            if rec.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("expected 3 fields, got {}", rec.len()),
                });
            }
            let dataset: usize = parse_field(&rec[0], path, line, "dataset_id")?;
            let arch: usize = parse_field(&rec[1], path, line, "arch_id")?;
            let accuracy: f64 = parse_field(&rec[2], path, line, "accuracy")?;
            self.add_observation(AccuracyObservation {
                arch: ArchitectureId(arch),
                dataset: DatasetId(dataset),
                accuracy,
            })?;
        }
        Ok(())
    }

    pub fn read_curves<R: Read>(&mut self, reader: R, path: &str) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        check_header(
            rdr.headers().map_err(io_to_parse(path))?,
            &["dataset_id", "arch_id", "epoch", "accuracy"],
            path,
        )?;
        // Collect per pair, then validate contiguity and the shared horizon.
        let mut per_pair: BTreeMap<(usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(io_to_parse_line(path, line))?;
            if rec.len() != 4 {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("expected 4 fields, got {}", rec.len()),
                });
            }
            let dataset: usize = parse_field(&rec[0], path, line, "dataset_id")?;
            let arch: usize = parse_field(&rec[1], path, line, "arch_id")?;
            let epoch: usize = parse_field(&rec[2], path, line, "epoch")?;
            let accuracy: f64 = parse_field(&rec[3], path, line, "accuracy")?;
            if epoch == 0 {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: "epoch must be >= 1".to_string(),
                });
            }
            if per_pair.entry((arch, dataset)).or_default().insert(epoch, accuracy).is_some() {
                return Err(Error::DuplicateEntry {
                    arch,
                    dataset,
                    detail: format!(" at epoch {epoch}"),
                });
            }
        }
        let horizon = per_pair
            .values()
            .flat_map(|m| m.keys().copied())
            .max()
            .unwrap_or(0);
        for ((arch, dataset), epochs) in per_pair {
            if epochs.len() != horizon || *epochs.keys().last().unwrap() != horizon {
                return Err(Error::NonUniformHorizon {
                    arch,
                    dataset,
                    len: epochs.len(),
                    expected: horizon,
                });
            }
            let values: Vec<f64> = epochs.into_values().collect();
            self.add_curve(LearningCurve {
                arch: ArchitectureId(arch),
                dataset: DatasetId(dataset),
                values,
            })?;
        }
        Ok(())
    }

    pub fn save(&self, observations_path: &Path, curves_path: &Path) -> Result<()> {
        let mut obs = Vec::new();
        self.write_observations(&mut obs)?;
        std::fs::write(observations_path, obs)?;
        let mut cur = Vec::new();
        self.write_curves(&mut cur)?;
        std::fs::write(curves_path, cur)?;
        Ok(())
    }

    pub fn write_observations<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "dataset_id,arch_id,accuracy")?;
        let mut rows: Vec<(usize, usize, f64)> =
            self.observations.iter().map(|(&(n, d), &a)| (d, n, a)).collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (d, n, a) in rows {
            writeln!(out, "{},{},{}", d, n, fmt_accuracy(a))?;
        }
        Ok(())
    }

    pub fn write_curves<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "dataset_id,arch_id,epoch,accuracy")?;
        let mut keys: Vec<(usize, usize)> = self.curves.keys().map(|&(n, d)| (d, n)).collect();
        keys.sort_unstable();
        for (d, n) in keys {
            for (i, &a) in self.curves[&(n, d)].iter().enumerate() {
                writeln!(out, "{},{},{},{}", d, n, i + 1, fmt_accuracy(a))?;
            }
        }
        Ok(())
    }
}

fn io_to_parse(path: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.to_string(), line: 1, msg: e.to_string() }
}

fn io_to_parse_line(path: &str, line: u64) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.to_string(), line, msg: e.to_string() }
}

// ---------------------------------------------------------------------------
// Synthetic metaknowledge
// ---------------------------------------------------------------------------

/// Generator configuration. `noise_scale` is the standard deviation of the
/// final-accuracy noise and of the per-epoch curve noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_archs: usize,
    pub n_datasets: usize,
    pub latent_dim: usize,
    pub horizon: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

/// The latent parameters a synthetic store was generated from. Serves as
/// the oracle for recovery and protocol tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub global_bias: f64,
    pub arch_bias: Vec<f64>,
    pub dataset_bias: Vec<f64>,
    pub arch_latent: Vec<Vec<f64>>,
    pub dataset_latent: Vec<Vec<f64>>,
    /// Saturation rate of the curve shape, one per (arch, dataset) pair,
    /// arch-major.
    pub rates: Vec<Vec<f64>>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticGroundTruth {
    /// Noise-free affine score b0 + b_n + b_d + v_n.u_d, before clipping.
    pub fn affine_score(&self, arch: ArchitectureId, dataset: DatasetId) -> f64 {
        let dot: f64 = self.arch_latent[arch.0]
            .iter()
            .zip(&self.dataset_latent[dataset.0])
            .map(|(v, u)| v * u)
            .sum();
        self.global_bias + self.arch_bias[arch.0] + self.dataset_bias[dataset.0] + dot
    }

    /// Fraction of the final accuracy reached after epoch `t` of `horizon`.
    /// Saturating exponential, normalized so the final epoch reaches 1.
    pub fn curve_shape(&self, arch: ArchitectureId, dataset: DatasetId, t: usize, horizon: usize) -> f64 {
        let k = self.rates[arch.0][dataset.0];
        (-(k * t as f64 / horizon as f64)).exp_m1() / (-k).exp_m1()
    }
}

pub(crate) fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Generate a fully observed synthetic store plus its ground truth.
/// Deterministic given the seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(MetaknowledgeStore, SyntheticGroundTruth)> {
    if cfg.n_archs < 1 || cfg.n_datasets < 1 || cfg.horizon < 1 {
        return Err(Error::InvalidConfig(
            "n_archs, n_datasets and horizon must all be >= 1".to_string(),
        ));
    }
    if cfg.noise_scale < 0.0 {
        return Err(Error::InvalidConfig("noise_scale must be >= 0".to_string()));
    }
    let mut rng = rng::seeded(cfg.seed);
    let global_bias = 0.55 + 0.05 * standard_normal(&mut rng);
    let arch_bias: Vec<f64> = (0..cfg.n_archs).map(|_| 0.08 * standard_normal(&mut rng)).collect();
    let dataset_bias: Vec<f64> =
        (0..cfg.n_datasets).map(|_| 0.08 * standard_normal(&mut rng)).collect();
    let arch_latent: Vec<Vec<f64>> = (0..cfg.n_archs)
        .map(|_| (0..cfg.latent_dim).map(|_| 0.15 * standard_normal(&mut rng)).collect())
        .collect();
    let dataset_latent: Vec<Vec<f64>> = (0..cfg.n_datasets)
        .map(|_| (0..cfg.latent_dim).map(|_| 0.15 * standard_normal(&mut rng)).collect())
        .collect();
    let rates: Vec<Vec<f64>> = (0..cfg.n_archs)
        .map(|_| (0..cfg.n_datasets).map(|_| 2.0 + 6.0 * rng.gen::<f64>()).collect())
        .collect();
    use rand::Rng;

    let truth = SyntheticGroundTruth {
        global_bias,
        arch_bias,
        dataset_bias,
        arch_latent,
        dataset_latent,
        rates,
        noise_scale: cfg.noise_scale,
        seed: cfg.seed,
    };

    let mut store = MetaknowledgeStore::new(cfg.n_archs, cfg.n_datasets);
    for n in 0..cfg.n_archs {
        for d in 0..cfg.n_datasets {
            let (arch, dataset) = (ArchitectureId(n), DatasetId(d));
            let score = truth.affine_score(arch, dataset);
            let final_acc = clip01(score + cfg.noise_scale * standard_normal(&mut rng));
            let mut values = Vec::with_capacity(cfg.horizon);
            for t in 1..cfg.horizon {
                let shape = truth.curve_shape(arch, dataset, t, cfg.horizon);
                values.push(clip01(final_acc * shape + cfg.noise_scale * standard_normal(&mut rng)));
            }
            // The last epoch equals the recorded final accuracy exactly.
            values.push(final_acc);
            store.add_curve(LearningCurve { arch, dataset, values })?;
            store.add_observation(AccuracyObservation { arch, dataset, accuracy: final_acc })?;
        }
    }
    Ok((store, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_curve(vals: &[f64]) -> LearningCurve {
        LearningCurve { arch: ArchitectureId(0), dataset: DatasetId(0), values: vals.to_vec() }
    }

    #[test]
    fn prefix_max_basics() {
        let c = tiny_curve(&[0.2, 0.5, 0.4]);
        assert_eq!(prefix_max(&c, 3).unwrap(), 0.5);
        assert_eq!(prefix_max(&c, 1).unwrap(), 0.2);
        assert!(matches!(prefix_max(&c, 0), Err(Error::EpochOutOfRange { .. })));
        assert!(matches!(prefix_max(&c, 4), Err(Error::EpochOutOfRange { .. })));
    }

    #[test]
    fn prefix_max_of_monotone_curve_is_last_value() {
        let c = tiny_curve(&[0.1, 0.2, 0.3, 0.5]);
        for t in 1..=4 {
            assert_eq!(prefix_max(&c, t).unwrap(), c.values[t - 1]);
        }
    }

    #[test]
    fn load_two_rows() {
        let mut store = MetaknowledgeStore::default();
        store
            .read_observations("dataset_id,arch_id,accuracy\n0,0,0.91\n0,1,0.88\n".as_bytes(), "mem")
            .unwrap();
        assert_eq!(store.n_archs(), 2);
        assert_eq!(store.n_datasets(), 1);
        assert_eq!(store.observed_count(), 2);
        assert_eq!(store.observation(ArchitectureId(0), DatasetId(0)), Some(0.91));
    }

    #[test]
    fn load_empty_observations() {
        let mut store = MetaknowledgeStore::default();
        store.read_observations("dataset_id,arch_id,accuracy\n".as_bytes(), "mem").unwrap();
        assert_eq!(store.observed_count(), 0);
        assert_eq!(store.n_archs(), 0);
    }

    #[test]
    fn load_rejects_bad_rows() {
        let mut store = MetaknowledgeStore::default();
        let err = store
            .read_observations("dataset_id,arch_id,accuracy\n0,0,oops\n".as_bytes(), "mem")
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }

        let mut store = MetaknowledgeStore::default();
        let err = store
            .read_observations("dataset_id,arch_id,accuracy\n0,0,1.5\n".as_bytes(), "mem")
            .unwrap_err();
        assert!(matches!(err, Error::AccuracyOutOfRange { .. }));

        let mut store = MetaknowledgeStore::default();
        let err = store
            .read_observations("dataset_id,arch_id,accuracy\n0,0,0.5\n0,0,0.5\n".as_bytes(), "mem")
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { .. }));
    }

    #[test]
    fn load_rejects_non_uniform_horizon() {
        let mut store = MetaknowledgeStore::default();
        let mut body = String::from("dataset_id,arch_id,epoch,accuracy\n");
        for t in 1..=3 {
            body.push_str(&format!("0,0,{t},0.5\n"));
        }
        for t in 1..=2 {
            body.push_str(&format!("0,1,{t},0.5\n"));
        }
        let err = store.read_curves(body.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::NonUniformHorizon { arch: 1, .. }));
    }

    #[test]
    fn load_rejects_duplicate_epoch() {
        let mut store = MetaknowledgeStore::default();
        let body = "dataset_id,arch_id,epoch,accuracy\n0,0,1,0.5\n0,0,1,0.6\n";
        let err = store.read_curves(body.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { .. }));
    }

    #[test]
    fn curve_and_observation_must_agree() {
        let mut store = MetaknowledgeStore::default();
        store
            .add_observation(AccuracyObservation {
                arch: ArchitectureId(0),
                dataset: DatasetId(0),
                accuracy: 0.9,
            })
            .unwrap();
        let err = store.add_curve(tiny_curve(&[0.1, 0.8])).unwrap_err();
        assert!(matches!(err, Error::CurveObservationMismatch { .. }));
    }

    #[test]
    fn holdout_partitions_rows() {
        let (store, _) = generate_synthetic(&SyntheticConfig {
            n_archs: 4,
            n_datasets: 2,
            latent_dim: 1,
            horizon: 3,
            noise_scale: 0.0,
            seed: 9,
        })
        .unwrap();
        let (train, held) = store.holdout_dataset(DatasetId(1)).unwrap();
        assert!(train.observations().all(|o| o.dataset.0 == 0));
        assert!(held.observations().all(|o| o.dataset.0 == 1));
        assert_eq!(train.observed_count() + held.observed_count(), store.observed_count());
        assert!(matches!(store.holdout_dataset(DatasetId(7)), Err(Error::UnknownDataset(7))));
    }

    #[test]
    fn holdout_of_empty_dataset_keeps_everything() {
        let mut store = MetaknowledgeStore::new(2, 3);
        store
            .add_observation(AccuracyObservation {
                arch: ArchitectureId(0),
                dataset: DatasetId(0),
                accuracy: 0.5,
            })
            .unwrap();
        let (train, held) = store.holdout_dataset(DatasetId(2)).unwrap();
        assert_eq!(train.observed_count(), 1);
        assert_eq!(held.observed_count(), 0);
    }

    #[test]
    fn exhaustive_holdout_union_recovers_store() {
        let (store, _) = generate_synthetic(&SyntheticConfig {
            n_archs: 6,
            n_datasets: 5,
            latent_dim: 2,
            horizon: 4,
            noise_scale: 0.02,
            seed: 31,
        })
        .unwrap();
        // Union over all held parts must equal the original row multiset.
        let mut union = MetaknowledgeStore::new(store.n_archs(), store.n_datasets());
        for d in 0..store.n_datasets() {
            let (_, held) = store.holdout_dataset(DatasetId(d)).unwrap();
            for c in held.curves() {
                union.add_curve(c).unwrap();
            }
            for o in held.observations() {
                union.add_observation(o).unwrap();
            }
        }
        assert_eq!(union, store);
    }

    #[test]
    fn synthetic_noise_free_bias_only_scores() {
        let cfg = SyntheticConfig {
            n_archs: 5,
            n_datasets: 3,
            latent_dim: 0,
            horizon: 4,
            noise_scale: 0.0,
            seed: 2,
        };
        let (store, truth) = generate_synthetic(&cfg).unwrap();
        for o in store.observations() {
            let expected = clip01(
                truth.global_bias + truth.arch_bias[o.arch.0] + truth.dataset_bias[o.dataset.0],
            );
            assert_eq!(o.accuracy, expected);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig {
            n_archs: 3,
            n_datasets: 2,
            latent_dim: 2,
            horizon: 5,
            noise_scale: 0.05,
            seed: 77,
        };
        let (a, _) = generate_synthetic(&cfg).unwrap();
        let (b, _) = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_curve_matches_closed_form_and_final() {
        let cfg = SyntheticConfig {
            n_archs: 2,
            n_datasets: 2,
            latent_dim: 1,
            horizon: 6,
            noise_scale: 0.0,
            seed: 5,
        };
        let (store, truth) = generate_synthetic(&cfg).unwrap();
        for c in store.curves() {
            let final_acc = store.observation(c.arch, c.dataset).unwrap();
            assert_eq!(c.final_accuracy(), final_acc);
            for t in 1..c.values.len() {
                let expected = clip01(final_acc * truth.curve_shape(c.arch, c.dataset, t, 6));
                assert!((c.values[t - 1] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn save_load_roundtrip_is_byte_identical() {
        let (store, _) = generate_synthetic(&SyntheticConfig {
            n_archs: 3,
            n_datasets: 2,
            latent_dim: 1,
            horizon: 3,
            noise_scale: 0.01,
            seed: 11,
        })
        .unwrap();
        let mut obs1 = Vec::new();
        let mut cur1 = Vec::new();
        store.write_observations(&mut obs1).unwrap();
        store.write_curves(&mut cur1).unwrap();

        let mut reloaded = MetaknowledgeStore::default();
        reloaded.read_observations(obs1.as_slice(), "mem").unwrap();
        reloaded.read_curves(cur1.as_slice(), "mem").unwrap();

        let mut obs2 = Vec::new();
        let mut cur2 = Vec::new();
        reloaded.write_observations(&mut obs2).unwrap();
        reloaded.write_curves(&mut cur2).unwrap();
        assert_eq!(obs1, obs2);
        assert_eq!(cur1, cur2);
    }
}
