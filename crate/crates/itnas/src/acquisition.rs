//! Closed-form acquisition scores over Gaussian predictive moments, plus
//! the cold-start rule that ranks architectures by normalized accuracy
//! across the datasets they were tested on.

use crate::error::{Error, Result};
use crate::metaknowledge::{ArchitectureId, DatasetId, MetaknowledgeStore};
use crate::numeric::{normal_cdf, normal_pdf};
use crate::vbmf::PredictiveMoments;

/// Best accuracy seen so far on the current dataset, if any. With nothing
/// observed the callers take the cold-start or always-continue paths
/// instead of scoring against a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Incumbent {
    Unobserved,
    Observed(f64),
}

impl Incumbent {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Incumbent::Unobserved => None,
            Incumbent::Observed(v) => Some(v),
        }
    }

    /// Raise the incumbent to `v` if it improves on the current best.
    pub fn observe(&mut self, v: f64) {
        *self = match *self {
            Incumbent::Unobserved => Incumbent::Observed(v),
            Incumbent::Observed(best) => Incumbent::Observed(best.max(v)),
        };
    }
}

fn check_finite(pred: &PredictiveMoments, incumbent: f64) -> Result<()> {
    if !pred.mean.is_finite() || !pred.variance.is_finite() || !incumbent.is_finite() {
        return Err(Error::NonFinite(format!(
            "mean {}, variance {}, incumbent {}",
            pred.mean, pred.variance, incumbent
        )));
    }
    if !(pred.variance > 0.0) {
        return Err(Error::NonFinite(format!("variance must be > 0, got {}", pred.variance)));
    }
    Ok(())
}

/// Expected improvement over the incumbent under a Gaussian predictive:
/// `(mean - inc) Phi(z) + s phi(z)` with `z = (mean - inc)/s`. Never
/// negative.
pub fn expected_improvement(pred: &PredictiveMoments, incumbent: f64) -> Result<f64> {
    check_finite(pred, incumbent)?;
    let s = pred.variance.sqrt();
    let z = (pred.mean - incumbent) / s;
    Ok(((pred.mean - incumbent) * normal_cdf(z) + s * normal_pdf(z)).max(0.0))
}

/// Probability that the final accuracy exceeds the incumbent:
/// `Phi((mean - inc)/s)`.
pub fn probability_of_improvement(pred: &PredictiveMoments, incumbent: f64) -> Result<f64> {
    check_finite(pred, incumbent)?;
    Ok(normal_cdf((pred.mean - incumbent) / pred.variance.sqrt()))
}

/// How per-dataset accuracies are normalized before averaging across
/// datasets in the cold-start ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreNormalization {
    /// Subtract the dataset mean and divide by the dataset standard
    /// deviation (population form).
    #[default]
    ZScore,
    /// Map the dataset's observed range onto [0, 1].
    MinMax,
}

/// The architecture with the best normalized mean accuracy across all
/// datasets it was tested on. Ties break toward the lowest id.
pub fn global_best_architecture(store: &MetaknowledgeStore) -> Result<ArchitectureId> {
    global_best_among(store, None, ScoreNormalization::ZScore)
}

/// Same ranking restricted to `candidates` when given.
pub fn global_best_among(
    store: &MetaknowledgeStore,
    candidates: Option<&[ArchitectureId]>,
    normalization: ScoreNormalization,
) -> Result<ArchitectureId> {
    let scores = normalized_scores(store, candidates, normalization)?;
    let mut best = scores[0];
    for &(arch, score) in &scores[1..] {
        if score > best.1 {
            best = (arch, score);
        }
    }
    Ok(best.0)
}

/// Every candidate's mean normalized accuracy across the datasets it was
/// observed on, in id order.
pub fn normalized_scores(
    store: &MetaknowledgeStore,
    candidates: Option<&[ArchitectureId]>,
    normalization: ScoreNormalization,
) -> Result<Vec<(ArchitectureId, f64)>> {
    let pool: Vec<ArchitectureId> = match candidates {
        Some(c) => {
            let mut v = c.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => (0..store.n_archs()).map(ArchitectureId).collect(),
    };
    if pool.is_empty() {
        return Err(Error::NoCandidates);
    }

    // Per-dataset normalization statistics over all observed entries.
    let mut stats: Vec<Option<(f64, f64)>> = vec![None; store.n_datasets()];
    for d in 0..store.n_datasets() {
        let column: Vec<f64> = store
            .observations()
            .filter(|o| o.dataset.0 == d)
            .map(|o| o.accuracy)
            .collect();
        if column.is_empty() {
            continue;
        }
        if column.len() < 2 {
            return Err(Error::DegenerateDataset {
                dataset: d,
                reason: "needs at least 2 observations to normalize".to_string(),
            });
        }
        let params = match normalization {
            ScoreNormalization::ZScore => {
                let mean = column.iter().sum::<f64>() / column.len() as f64;
                let var =
                    column.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / column.len() as f64;
                let std = var.sqrt();
                if std == 0.0 {
                    return Err(Error::DegenerateDataset {
                        dataset: d,
                        reason: "zero variance".to_string(),
                    });
                }
                (mean, std)
            }
            ScoreNormalization::MinMax => {
                let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi == lo {
                    return Err(Error::DegenerateDataset {
                        dataset: d,
                        reason: "zero range".to_string(),
                    });
                }
                (lo, hi - lo)
            }
        };
        stats[d] = Some(params);
    }

    let mut scores = Vec::with_capacity(pool.len());
    for &arch in &pool {
        let mut sum = 0.0;
        let mut count = 0usize;
        for d in 0..store.n_datasets() {
            if let (Some(a), Some((shift, scale))) =
                (store.observation(arch, DatasetId(d)), stats[d])
            {
                sum += (a - shift) / scale;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::UnobservedArchitecture(arch.0));
        }
        scores.push((arch, sum / count as f64));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaknowledge::AccuracyObservation;

    fn pred(mean: f64, s: f64) -> PredictiveMoments {
        PredictiveMoments { mean, variance: s * s }
    }

    #[test]
    fn ei_at_incumbent_is_phi_zero() {
        let got = expected_improvement(&pred(0.5, 1.0), 0.5).unwrap();
        assert!((got - 0.3989422804014327).abs() < 1e-12);
    }

    #[test]
    fn ei_vanishes_with_tiny_scale_below_incumbent() {
        let got = expected_improvement(&pred(0.4, 1e-12), 0.7).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn ei_rejects_non_finite() {
        assert!(expected_improvement(&pred(f64::NAN, 1.0), 0.5).is_err());
        assert!(expected_improvement(&PredictiveMoments { mean: 0.0, variance: 0.0 }, 0.5).is_err());
    }

    #[test]
    fn ei_monotone_in_mean_and_scale() {
        let inc = 0.6;
        let mut prev = -1.0;
        for i in 0..50 {
            let mean = 0.2 + 0.02 * i as f64;
            let v = expected_improvement(&pred(mean, 0.1), inc).unwrap();
            assert!(v > prev, "EI not increasing in mean at {mean}");
            prev = v;
        }
        let mut prev = -1.0;
        for i in 1..50 {
            let s = 0.02 * i as f64;
            let v = expected_improvement(&pred(0.5, s), inc).unwrap();
            assert!(v > prev, "EI not increasing in scale at {s}");
            prev = v;
        }
    }

    #[test]
    fn pi_reference_points() {
        assert!((probability_of_improvement(&pred(0.7, 0.2), 0.7).unwrap() - 0.5).abs() < 1e-15);
        // mean - incumbent = 2 s.
        let got = probability_of_improvement(&pred(0.9, 0.1), 0.7).unwrap();
        assert!((got - 0.9772498680518208).abs() < 1e-12);
        let tail = probability_of_improvement(&pred(0.4, 1e-9), 0.7).unwrap();
        assert_eq!(tail, 0.0);
    }

    fn store_from(rows: &[(usize, usize, f64)]) -> MetaknowledgeStore {
        let mut store = MetaknowledgeStore::default();
        for &(n, d, a) in rows {
            store
                .add_observation(AccuracyObservation {
                    arch: ArchitectureId(n),
                    dataset: DatasetId(d),
                    accuracy: a,
                })
                .unwrap();
        }
        store
    }

    #[test]
    fn global_best_single_dataset_is_argmax() {
        let store = store_from(&[(0, 0, 0.9), (1, 0, 0.8)]);
        assert_eq!(global_best_architecture(&store).unwrap(), ArchitectureId(0));
    }

    #[test]
    fn global_best_ignores_dataset_scale() {
        // Arch 1 wins on both datasets despite very different scales.
        let store = store_from(&[
            (0, 0, 0.50),
            (1, 0, 0.60),
            (2, 0, 0.40),
            (0, 1, 0.91),
            (1, 1, 0.93),
            (2, 1, 0.90),
        ]);
        assert_eq!(global_best_architecture(&store).unwrap(), ArchitectureId(1));
    }

    #[test]
    fn global_best_affine_invariance() {
        let base = &[(0usize, 0usize, 0.52), (1, 0, 0.61), (2, 0, 0.43), (0, 1, 0.71), (1, 1, 0.74), (2, 1, 0.78)];
        let store = store_from(base);
        let pick = global_best_architecture(&store).unwrap();
        // Rescale each dataset column with its own positive affine map.
        let rescaled: Vec<(usize, usize, f64)> = base
            .iter()
            .map(|&(n, d, a)| (n, d, if d == 0 { 0.3 * a + 0.2 } else { 0.08 * a + 0.9 }))
            .collect();
        let store2 = store_from(&rescaled);
        assert_eq!(global_best_architecture(&store2).unwrap(), pick);
    }

    #[test]
    fn global_best_matches_brute_force() {
        // Independent recomputation of the z-score average.
        let (store, _) = crate::metaknowledge::generate_synthetic(&crate::metaknowledge::SyntheticConfig {
            n_archs: 10,
            n_datasets: 4,
            latent_dim: 2,
            horizon: 3,
            noise_scale: 0.03,
            seed: 17,
        })
        .unwrap();
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for n in 0..10 {
            let mut scores = Vec::new();
            for d in 0..4 {
                let col: Vec<f64> = (0..10)
                    .filter_map(|m| store.observation(ArchitectureId(m), DatasetId(d)))
                    .collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let std = (col.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / col.len() as f64)
                    .sqrt();
                let a = store.observation(ArchitectureId(n), DatasetId(d)).unwrap();
                scores.push((a - mean) / std);
            }
            let avg = scores.iter().sum::<f64>() / scores.len() as f64;
            if avg > best.0 {
                best = (avg, n);
            }
        }
        assert_eq!(global_best_architecture(&store).unwrap(), ArchitectureId(best.1));
    }

    #[test]
    fn global_best_rejects_degenerate_columns() {
        let store = store_from(&[(0, 0, 0.5), (1, 0, 0.5)]);
        assert!(matches!(
            global_best_architecture(&store),
            Err(Error::DegenerateDataset { dataset: 0, .. })
        ));
        let store = store_from(&[(0, 0, 0.5)]);
        assert!(matches!(global_best_architecture(&store), Err(Error::DegenerateDataset { .. })));
    }

    #[test]
    fn incumbent_tracks_running_max() {
        let mut inc = Incumbent::Unobserved;
        assert_eq!(inc.value(), None);
        inc.observe(0.4);
        inc.observe(0.3);
        assert_eq!(inc.value(), Some(0.4));
    }
}
