//! Variational Bayesian biased matrix factorization over the metaknowledge.
//!
//! The predictor for a final accuracy is
//!
//! ```text
//! a_hat(n, d) = b0 + b_n + b_d + v_n . u_d            (+ r * prefix_max)
//! ```
//!
//! with a global bias, one bias per architecture and per dataset, latent
//! vectors of dimension `latent_dim` on both sides, and optionally one
//! extra weight `r` on the best accuracy seen in the first `T` epochs of a
//! learning curve. All weights carry independent Gaussian priors and a
//! diagonal Gaussian variational posterior parameterized as
//! `(mean, softplus(raw_scale))`. Fitting minimizes
//! `KL(q || prior) - E_q[log likelihood]` by plain full-batch SGD with
//! reparameterized samples, and prediction moment-matches the posterior in
//! closed form.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metaknowledge::{prefix_max, ArchitectureId, DatasetId, MetaknowledgeStore};
use crate::numeric::{sigmoid, softplus, softplus_inv, standard_normal, LN_2PI};
use crate::rng;

/// Initial posterior scale; raw scales start at softplus_inv of this.
const INIT_SIGMA: f64 = 0.05;
/// Standard deviation of the random initial posterior means.
const INIT_MEAN_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelHyperparams {
    /// Latent dimension f (0 gives the pure bias model).
    pub latent_dim: usize,
    pub prior_var_global_bias: f64,
    pub prior_var_bias: f64,
    pub prior_var_latent: f64,
    pub prior_var_curve_weight: f64,
    /// Fixed likelihood noise variance; not learned.
    pub obs_noise_var: f64,
    pub learning_rate: f64,
    pub sgd_epochs: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        ModelHyperparams {
            latent_dim: 8,
            prior_var_global_bias: 1.0,
            prior_var_bias: 1.0,
            prior_var_latent: 1.0,
            prior_var_curve_weight: 1.0,
            obs_noise_var: 1e-3,
            // The data term is an unnormalized sum over rows with noise
            // variance 1e-3, so its curvature is ~1e3 per row; this step
            // size stays stable up to roughly 800-row stores.
            learning_rate: 2e-6,
            sgd_epochs: 500,
            mc_samples: 1,
            seed: 0,
        }
    }
}

impl ModelHyperparams {
    pub fn validate(&self) -> Result<()> {
        let vars = [
            ("prior_var_global_bias", self.prior_var_global_bias),
            ("prior_var_bias", self.prior_var_bias),
            ("prior_var_latent", self.prior_var_latent),
            ("prior_var_curve_weight", self.prior_var_curve_weight),
            ("obs_noise_var", self.obs_noise_var),
            ("learning_rate", self.learning_rate),
        ];
        for (name, v) in vars {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.mc_samples < 1 {
            return Err(Error::InvalidConfig("mc_samples must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Copy with a derived seed, for independent fits inside loops.
    pub fn with_seed(&self, seed: u64) -> Self {
        ModelHyperparams { seed, ..self.clone() }
    }
}

/// Flat index layout over every scalar weight of one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_archs: usize,
    pub n_datasets: usize,
    pub latent_dim: usize,
    pub with_curve_term: bool,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        1 + self.n_archs
            + self.n_datasets
            + self.latent_dim * (self.n_archs + self.n_datasets)
            + usize::from(self.with_curve_term)
    }

    pub fn global_bias(&self) -> usize {
        0
    }

    pub fn arch_bias(&self, n: usize) -> usize {
        1 + n
    }

    pub fn dataset_bias(&self, d: usize) -> usize {
        1 + self.n_archs + d
    }

    pub fn arch_latent(&self, n: usize, k: usize) -> usize {
        1 + self.n_archs + self.n_datasets + n * self.latent_dim + k
    }

    pub fn dataset_latent(&self, d: usize, k: usize) -> usize {
        1 + self.n_archs + self.n_datasets + self.latent_dim * self.n_archs + d * self.latent_dim + k
    }

    pub fn curve_weight(&self) -> Option<usize> {
        self.with_curve_term.then(|| self.len() - 1)
    }

    /// Prior variance of the weight at flat index `i`.
    pub fn prior_var(&self, hyper: &ModelHyperparams, i: usize) -> f64 {
        let biases_end = 1 + self.n_archs + self.n_datasets;
        if i == 0 {
            hyper.prior_var_global_bias
        } else if i < biases_end {
            hyper.prior_var_bias
        } else if i < biases_end + self.latent_dim * (self.n_archs + self.n_datasets) {
            hyper.prior_var_latent
        } else {
            hyper.prior_var_curve_weight
        }
    }

    fn check_ids(&self, arch: ArchitectureId, dataset: DatasetId) -> Result<()> {
        if arch.0 >= self.n_archs {
            return Err(Error::ArchOutOfRange { id: arch.0, bound: self.n_archs });
        }
        if dataset.0 >= self.n_datasets {
            return Err(Error::DatasetOutOfRange { id: dataset.0, bound: self.n_datasets });
        }
        Ok(())
    }

    fn check_feature(&self, feature: Option<f64>) -> Result<()> {
        if self.with_curve_term != feature.is_some() {
            return Err(Error::CurveTermMismatch {
                has_term: self.with_curve_term,
                feature_given: feature.is_some(),
            });
        }
        Ok(())
    }
}

/// Mean and raw scale of the diagonal Gaussian posterior over every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    layout: ParamLayout,
    mean: Vec<f64>,
    raw_scale: Vec<f64>,
}

impl VariationalParams {
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_mut(&mut self) -> &mut [f64] {
        &mut self.mean
    }

    pub fn raw_scale(&self) -> &[f64] {
        &self.raw_scale
    }

    pub fn raw_scale_mut(&mut self) -> &mut [f64] {
        &mut self.raw_scale
    }

    /// Posterior scale of weight `i`.
    pub fn sigma(&self, i: usize) -> f64 {
        softplus(self.raw_scale[i])
    }

    pub fn from_parts(layout: ParamLayout, mean: Vec<f64>, raw_scale: Vec<f64>) -> Result<Self> {
        if mean.len() != layout.len() || raw_scale.len() != layout.len() {
            return Err(Error::InvalidConfig(format!(
                "parameter vectors of length {}/{} do not match layout length {}",
                mean.len(),
                raw_scale.len(),
                layout.len()
            )));
        }
        Ok(VariationalParams { layout, mean, raw_scale })
    }

    /// Extend to a larger id space. New weights start at mean 0 with the
    /// standard initial scale, deterministically.
    pub fn grow(&self, n_archs: usize, n_datasets: usize) -> VariationalParams {
        let layout = ParamLayout {
            n_archs: self.layout.n_archs.max(n_archs),
            n_datasets: self.layout.n_datasets.max(n_datasets),
            ..self.layout
        };
        let rho0 = softplus_inv(INIT_SIGMA);
        let mut mean = vec![0.0; layout.len()];
        let mut raw_scale = vec![rho0; layout.len()];
        let old = &self.layout;
        let copy = |src_idx: usize, dst_idx: usize, mean: &mut [f64], raw: &mut [f64]| {
            mean[dst_idx] = self.mean[src_idx];
            raw[dst_idx] = self.raw_scale[src_idx];
        };
        copy(old.global_bias(), layout.global_bias(), &mut mean, &mut raw_scale);
        for n in 0..old.n_archs {
            copy(old.arch_bias(n), layout.arch_bias(n), &mut mean, &mut raw_scale);
            for k in 0..old.latent_dim {
                copy(old.arch_latent(n, k), layout.arch_latent(n, k), &mut mean, &mut raw_scale);
            }
        }
        for d in 0..old.n_datasets {
            copy(old.dataset_bias(d), layout.dataset_bias(d), &mut mean, &mut raw_scale);
            for k in 0..old.latent_dim {
                copy(old.dataset_latent(d, k), layout.dataset_latent(d, k), &mut mean, &mut raw_scale);
            }
        }
        if let (Some(src), Some(dst)) = (old.curve_weight(), layout.curve_weight()) {
            copy(src, dst, &mut mean, &mut raw_scale);
        }
        VariationalParams { layout, mean, raw_scale }
    }
}

/// Fresh posterior: means drawn iid N(0, 0.01^2) from the seed, scales all
/// starting at 0.05.
pub fn init_variational(
    hyper: &ModelHyperparams,
    n_archs: usize,
    n_datasets: usize,
    with_curve_term: bool,
) -> VariationalParams {
    let layout = ParamLayout { n_archs, n_datasets, latent_dim: hyper.latent_dim, with_curve_term };
    let mut rng = rng::seeded(hyper.seed);
    let mean: Vec<f64> = (0..layout.len()).map(|_| INIT_MEAN_STD * standard_normal(&mut rng)).collect();
    let raw_scale = vec![softplus_inv(INIT_SIGMA); layout.len()];
    VariationalParams { layout, mean, raw_scale }
}

/// One concrete reparameterized draw `w = mean + sigma * eps`.
#[derive(Debug, Clone)]
pub struct WeightSample {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl WeightSample {
    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn from_eps(vp: &VariationalParams, eps: &[f64]) -> WeightSample {
        assert_eq!(eps.len(), vp.len());
        let values = vp
            .mean
            .iter()
            .zip(&vp.raw_scale)
            .zip(eps)
            .map(|((&m, &r), &e)| m + softplus(r) * e)
            .collect();
        WeightSample { layout: vp.layout, values }
    }

    /// The posterior mean treated as a point estimate.
    pub fn at_mean(vp: &VariationalParams) -> WeightSample {
        WeightSample { layout: vp.layout, values: vp.mean.clone() }
    }
}

/// Point prediction from one weight sample.
pub fn point_predict(
    weights: &WeightSample,
    arch: ArchitectureId,
    dataset: DatasetId,
    prefix_feature: Option<f64>,
) -> Result<f64> {
    let l = &weights.layout;
    l.check_ids(arch, dataset)?;
    l.check_feature(prefix_feature)?;
    let w = &weights.values;
    let mut m = w[l.global_bias()] + w[l.arch_bias(arch.0)] + w[l.dataset_bias(dataset.0)];
    for k in 0..l.latent_dim {
        m += w[l.arch_latent(arch.0, k)] * w[l.dataset_latent(dataset.0, k)];
    }
    if let Some(f) = prefix_feature {
        m += w[l.curve_weight().unwrap()] * f;
    }
    Ok(m)
}

/// Which likelihood the model is trained on: the recorded final accuracy,
/// or the end-of-curve accuracy with the best-of-first-T-epochs feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    FinalAccuracy,
    CurvePrefix(usize),
}

/// One training row: target accuracy and optional prefix feature.
#[derive(Debug, Clone, Copy)]
pub struct Row {
    pub arch: usize,
    pub dataset: usize,
    pub feature: Option<f64>,
    pub target: f64,
}

/// Materialize the likelihood rows for a store under the given mode.
pub fn training_rows(store: &MetaknowledgeStore, mode: LikelihoodMode) -> Result<Vec<Row>> {
    let mut rows = Vec::with_capacity(store.observed_count());
    for obs in store.observations() {
        let row = match mode {
            LikelihoodMode::FinalAccuracy => {
                Row { arch: obs.arch.0, dataset: obs.dataset.0, feature: None, target: obs.accuracy }
            }
            LikelihoodMode::CurvePrefix(t) => {
                let values = store.curve(obs.arch, obs.dataset).ok_or(Error::MissingCurve {
                    arch: obs.arch.0,
                    dataset: obs.dataset.0,
                })?;
                let curve = crate::metaknowledge::LearningCurve {
                    arch: obs.arch,
                    dataset: obs.dataset,
                    values: values.to_vec(),
                };
                Row {
                    arch: obs.arch.0,
                    dataset: obs.dataset.0,
                    feature: Some(prefix_max(&curve, t)?),
                    target: *values.last().unwrap(),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn point_predict_row(l: &ParamLayout, w: &[f64], row: &Row) -> f64 {
    let mut m = w[l.global_bias()] + w[l.arch_bias(row.arch)] + w[l.dataset_bias(row.dataset)];
    for k in 0..l.latent_dim {
        m += w[l.arch_latent(row.arch, k)] * w[l.dataset_latent(row.dataset, k)];
    }
    if let Some(f) = row.feature {
        m += w[l.curve_weight().unwrap()] * f;
    }
    m
}

fn log_likelihood_rows(l: &ParamLayout, w: &[f64], rows: &[Row], noise_var: f64) -> f64 {
    let log_norm = 0.5 * (LN_2PI + noise_var.ln());
    rows.iter()
        .map(|row| {
            let resid = row.target - point_predict_row(l, w, row);
            -0.5 * resid * resid / noise_var - log_norm
        })
        .sum()
}

/// Sum of Gaussian log densities of the observed targets under one weight
/// sample. Empty stores give 0.
pub fn log_likelihood(
    weights: &WeightSample,
    store: &MetaknowledgeStore,
    mode: LikelihoodMode,
    hyper: &ModelHyperparams,
) -> Result<f64> {
    if let LikelihoodMode::CurvePrefix(_) = mode {
        weights.layout.check_feature(Some(0.0))?;
    } else {
        weights.layout.check_feature(None)?;
    }
    let rows = training_rows(store, mode)?;
    Ok(log_likelihood_rows(&weights.layout, &weights.values, &rows, hyper.obs_noise_var))
}

/// KL(q || prior) summed over all weights, each term
/// `0.5 ((sigma^2 + mu^2)/tau^2 - 1 + ln tau^2 - ln sigma^2)`.
pub fn kl_to_prior(vp: &VariationalParams, hyper: &ModelHyperparams) -> f64 {
    let mut total = 0.0;
    for i in 0..vp.len() {
        let tau2 = vp.layout.prior_var(hyper, i);
        let mu = vp.mean[i];
        let sigma = vp.sigma(i);
        let sigma2 = sigma * sigma;
        total += 0.5 * ((sigma2 + mu * mu) / tau2 - 1.0 + tau2.ln() - sigma2.ln());
    }
    total
}

/// Standard-normal draws backing the reparameterized samples of one loss
/// evaluation; kept explicit so gradients can be checked against finite
/// differences under common random numbers.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    samples: Vec<Vec<f64>>,
}

impl NoiseDraws {
    pub fn draw(n_weights: usize, mc_samples: usize, rng: &mut ChaCha8Rng) -> NoiseDraws {
        let samples = (0..mc_samples)
            .map(|_| (0..n_weights).map(|_| standard_normal(rng)).collect())
            .collect();
        NoiseDraws { samples }
    }

    pub fn mc_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.samples[s]
    }
}

/// The quantity minimized: `KL(q || prior) - mean_s log_likelihood(w_s)`.
pub fn elbo_loss_with(
    vp: &VariationalParams,
    store: &MetaknowledgeStore,
    hyper: &ModelHyperparams,
    mode: LikelihoodMode,
    draws: &NoiseDraws,
) -> Result<f64> {
    let rows = training_rows(store, mode)?;
    Ok(elbo_loss_rows(vp, &rows, hyper, draws))
}

fn elbo_loss_rows(
    vp: &VariationalParams,
    rows: &[Row],
    hyper: &ModelHyperparams,
    draws: &NoiseDraws,
) -> f64 {
    let mut data = 0.0;
    for s in 0..draws.mc_samples() {
        let w = WeightSample::from_eps(vp, draws.sample(s));
        data += log_likelihood_rows(&vp.layout, &w.values, rows, hyper.obs_noise_var);
    }
    kl_to_prior(vp, hyper) - data / draws.mc_samples() as f64
}

/// Fresh draws from `rng`, then the loss.
pub fn elbo_loss(
    vp: &VariationalParams,
    store: &MetaknowledgeStore,
    hyper: &ModelHyperparams,
    mode: LikelihoodMode,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let draws = NoiseDraws::draw(vp.len(), hyper.mc_samples, rng);
    elbo_loss_with(vp, store, hyper, mode, &draws)
}

#[derive(Debug, Clone)]
pub struct ElboGradient {
    pub loss: f64,
    pub wrt_mean: Vec<f64>,
    pub wrt_raw_scale: Vec<f64>,
}

/// Analytic gradient of the loss at `vp` under the given draws; exact for
/// those draws, which is what the finite-difference oracle checks.
pub fn elbo_gradient_with(
    vp: &VariationalParams,
    store: &MetaknowledgeStore,
    hyper: &ModelHyperparams,
    mode: LikelihoodMode,
    draws: &NoiseDraws,
) -> Result<ElboGradient> {
    let rows = training_rows(store, mode)?;
    Ok(elbo_gradient_rows(vp, &rows, hyper, draws, &mut GradBuffers::new(vp.len())))
}

struct GradBuffers {
    w: Vec<f64>,
    dll: Vec<f64>,
}

impl GradBuffers {
    fn new(len: usize) -> GradBuffers {
        GradBuffers { w: vec![0.0; len], dll: vec![0.0; len] }
    }
}

fn elbo_gradient_rows(
    vp: &VariationalParams,
    rows: &[Row],
    hyper: &ModelHyperparams,
    draws: &NoiseDraws,
    buf: &mut GradBuffers,
) -> ElboGradient {
    let l = &vp.layout;
    let p = vp.len();
    let inv_s = 1.0 / draws.mc_samples() as f64;
    let noise_var = hyper.obs_noise_var;
    let log_norm = 0.5 * (LN_2PI + noise_var.ln());

    let mut wrt_mean = vec![0.0; p];
    let mut wrt_raw_scale = vec![0.0; p];
    let mut data = 0.0;

    for s in 0..draws.mc_samples() {
        let eps = draws.sample(s);
        for i in 0..p {
            buf.w[i] = vp.mean[i] + softplus(vp.raw_scale[i]) * eps[i];
            buf.dll[i] = 0.0;
        }
        for row in rows {
            let m = point_predict_row(l, &buf.w, row);
            let resid = row.target - m;
            data += -0.5 * resid * resid / noise_var - log_norm;
            let g = resid / noise_var; // d loglik / d prediction
            buf.dll[l.global_bias()] += g;
            buf.dll[l.arch_bias(row.arch)] += g;
            buf.dll[l.dataset_bias(row.dataset)] += g;
            for k in 0..l.latent_dim {
                let vi = l.arch_latent(row.arch, k);
                let ui = l.dataset_latent(row.dataset, k);
                buf.dll[vi] += g * buf.w[ui];
                buf.dll[ui] += g * buf.w[vi];
            }
            if let Some(f) = row.feature {
                buf.dll[l.curve_weight().unwrap()] += g * f;
            }
        }
        for i in 0..p {
            let g = buf.dll[i] * inv_s;
            wrt_mean[i] -= g;
            wrt_raw_scale[i] -= g * eps[i] * sigmoid(vp.raw_scale[i]);
        }
    }

    // KL part and its gradient.
    let mut kl = 0.0;
    for i in 0..p {
        let tau2 = l.prior_var(hyper, i);
        let mu = vp.mean[i];
        let sigma = softplus(vp.raw_scale[i]);
        let sigma2 = sigma * sigma;
        kl += 0.5 * ((sigma2 + mu * mu) / tau2 - 1.0 + tau2.ln() - sigma2.ln());
        wrt_mean[i] += mu / tau2;
        wrt_raw_scale[i] += (sigma / tau2 - 1.0 / sigma) * sigmoid(vp.raw_scale[i]);
    }

    ElboGradient { loss: kl - data * inv_s, wrt_mean, wrt_raw_scale }
}

/// Plain SGD on the loss: `sgd_epochs` full-batch steps with one fresh set
/// of draws per step. Deterministic given `hyper.seed`; errors out on the
/// first non-finite loss or parameter.
pub fn fit(
    vp: &VariationalParams,
    store: &MetaknowledgeStore,
    hyper: &ModelHyperparams,
    mode: LikelihoodMode,
) -> Result<VariationalParams> {
    hyper.validate()?;
    if store.observed_count() == 0 {
        return Err(Error::EmptyStore);
    }
    let rows = training_rows(store, mode)?;
    let mut current = vp.clone();
    let mut rng = rng::seeded(hyper.seed);
    let mut buf = GradBuffers::new(current.len());
    for step in 0..hyper.sgd_epochs {
        let draws = NoiseDraws::draw(current.len(), hyper.mc_samples, &mut rng);
        let grad = elbo_gradient_rows(&current, &rows, hyper, &draws, &mut buf);
        if !grad.loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        let lr = hyper.learning_rate;
        let mut finite = true;
        for i in 0..current.len() {
            current.mean[i] -= lr * grad.wrt_mean[i];
            current.raw_scale[i] -= lr * grad.wrt_raw_scale[i];
            finite &= current.mean[i].is_finite() && current.raw_scale[i].is_finite();
        }
        if !finite {
            return Err(Error::Divergence { step });
        }
    }
    Ok(current)
}

/// Gaussian predictive moments for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Closed-form moment matching under the diagonal posterior. The variance
/// always includes the observation noise, so it is strictly positive.
pub fn predict(
    vp: &VariationalParams,
    hyper: &ModelHyperparams,
    arch: ArchitectureId,
    dataset: DatasetId,
    prefix_feature: Option<f64>,
) -> Result<PredictiveMoments> {
    let l = &vp.layout;
    l.check_ids(arch, dataset)?;
    l.check_feature(prefix_feature)?;

    let sig = |i: usize| softplus(vp.raw_scale[i]);
    let b0 = l.global_bias();
    let bn = l.arch_bias(arch.0);
    let bd = l.dataset_bias(dataset.0);

    let mut mean = vp.mean[b0] + vp.mean[bn] + vp.mean[bd];
    let mut variance = sig(b0).powi(2) + sig(bn).powi(2) + sig(bd).powi(2);
    for k in 0..l.latent_dim {
        let vi = l.arch_latent(arch.0, k);
        let ui = l.dataset_latent(dataset.0, k);
        let (mv, mu) = (vp.mean[vi], vp.mean[ui]);
        let (sv2, su2) = (sig(vi).powi(2), sig(ui).powi(2));
        mean += mv * mu;
        variance += mv * mv * su2 + mu * mu * sv2 + sv2 * su2;
    }
    if let Some(f) = prefix_feature {
        let ri = l.curve_weight().unwrap();
        mean += vp.mean[ri] * f;
        variance += f * f * sig(ri).powi(2);
    }
    variance += hyper.obs_noise_var;
    Ok(PredictiveMoments { mean, variance })
}

// ---------------------------------------------------------------------------
// Checkpoint format: hyperparams, shapes, and the flat mean/raw-scale
// arrays per parameter group. Serialized with 17-significant-digit floats
// (see iojson) so save/load round-trips byte for byte.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub mean: Vec<f64>,
    pub raw_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub hyperparams: ModelHyperparams,
    pub n_archs: usize,
    pub n_datasets: usize,
    pub with_curve_term: bool,
    pub global_bias: ParamGroup,
    pub arch_bias: ParamGroup,
    pub dataset_bias: ParamGroup,
    pub arch_latent: ParamGroup,
    pub dataset_latent: ParamGroup,
    pub curve_weight: ParamGroup,
}

impl ModelCheckpoint {
    pub fn from_model(vp: &VariationalParams, hyper: &ModelHyperparams) -> ModelCheckpoint {
        let l = vp.layout;
        let slice = |from: usize, len: usize| ParamGroup {
            mean: vp.mean[from..from + len].to_vec(),
            raw_scale: vp.raw_scale[from..from + len].to_vec(),
        };
        let f = l.latent_dim;
        ModelCheckpoint {
            hyperparams: hyper.clone(),
            n_archs: l.n_archs,
            n_datasets: l.n_datasets,
            with_curve_term: l.with_curve_term,
            global_bias: slice(l.global_bias(), 1),
            arch_bias: slice(l.arch_bias(0), l.n_archs),
            dataset_bias: slice(l.dataset_bias(0), l.n_datasets),
            arch_latent: if f > 0 { slice(l.arch_latent(0, 0), l.n_archs * f) } else { empty_group() },
            dataset_latent: if f > 0 {
                slice(l.dataset_latent(0, 0), l.n_datasets * f)
            } else {
                empty_group()
            },
            curve_weight: match l.curve_weight() {
                Some(i) => slice(i, 1),
                None => empty_group(),
            },
        }
    }

    pub fn into_model(self) -> Result<(VariationalParams, ModelHyperparams)> {
        self.hyperparams.validate()?;
        let layout = ParamLayout {
            n_archs: self.n_archs,
            n_datasets: self.n_datasets,
            latent_dim: self.hyperparams.latent_dim,
            with_curve_term: self.with_curve_term,
        };
        let groups = [
            (&self.global_bias, 1),
            (&self.arch_bias, self.n_archs),
            (&self.dataset_bias, self.n_datasets),
            (&self.arch_latent, self.n_archs * layout.latent_dim),
            (&self.dataset_latent, self.n_datasets * layout.latent_dim),
            (&self.curve_weight, usize::from(self.with_curve_term)),
        ];
        let mut mean = Vec::with_capacity(layout.len());
        let mut raw = Vec::with_capacity(layout.len());
        for (g, want) in groups {
            if g.mean.len() != want || g.raw_scale.len() != want {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint group of length {}/{} does not match declared shape {}",
                    g.mean.len(),
                    g.raw_scale.len(),
                    want
                )));
            }
            mean.extend_from_slice(&g.mean);
            raw.extend_from_slice(&g.raw_scale);
        }
        let hyper = self.hyperparams;
        Ok((VariationalParams::from_parts(layout, mean, raw)?, hyper))
    }
}

fn empty_group() -> ParamGroup {
    ParamGroup { mean: Vec::new(), raw_scale: Vec::new() }
}
