//! ERM baseline and the channel-aware variational trainer.
//!
//! The channel-aware objective for a diagonal Gaussian posterior
//! `N(mu, softplus(rho)^2)` over the learnable weights is
//!
//! ```text
//! J = CE(mu + sigma * eps) + (eta1 / k) KL(P || N(0, sigma_p^2)) + K_hat * Omega
//! ```
//!
//! with `K_hat` the gradient norm of the empirical risk at the posterior mean
//! and `Omega` the closed-form channel penalty. Training runs on the
//! channel-free network; the channel enters only through `Omega`.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bound::{channel_omega, kl_diag_gaussian};
use crate::channel::ChannelSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{backward_op, l2, loss_01, Batch, NetworkSpec, ParamVector, SplitOp};
use crate::rng::{Rng, STREAM_INIT, STREAM_POSTERIOR, STREAM_SHUFFLE};

/// Lower clamp on `rho` after each step, keeping every deviation positive.
pub const RHO_MIN: f64 = -40.0;

/// `log(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Diagonal Gaussian over the learnable weights; `sigma = softplus(rho)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub mu: ParamVector,
    pub rho: Vec<f64>,
}

impl VariationalPosterior {
    pub fn new(mu: ParamVector, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::Shape(format!(
                "mu has {} entries, rho has {}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(VariationalPosterior { mu, rho })
    }

    /// Mean drawn like an ERM initialization, every deviation set to `sigma`.
    pub fn init(spec: &NetworkSpec, sigma_p: f64, sigma: f64, rng: &mut Rng) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("posterior deviation must be positive"));
        }
        let mu = ParamVector::init(spec, sigma_p, rng);
        let rho = vec![softplus_inverse(sigma); mu.len()];
        Ok(VariationalPosterior { mu, rho })
    }

    /// The prior itself: zero mean, deviation `sigma_p` everywhere.
    pub fn prior(spec: &NetworkSpec, sigma_p: f64) -> Self {
        let mu = ParamVector::zeros(spec);
        let rho = vec![softplus_inverse(sigma_p); mu.len()];
        VariationalPosterior { mu, rho }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// `mu + sigma * eps` for a given noise vector.
    pub fn weights_at(&self, eps: &[f64]) -> ParamVector {
        let values = self
            .mu
            .values
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((&m, &r), &e)| m + softplus(r) * e)
            .collect();
        ParamVector { values }
    }

    pub fn draw_noise(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.len()).map(|_| rng.normal()).collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> ParamVector {
        let eps = self.draw_noise(rng);
        self.weights_at(&eps)
    }

    pub fn kl(&self, sigma_p: f64) -> Result<f64> {
        kl_diag_gaussian(&self.mu.values, &self.sigma(), sigma_p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Erm,
    ChannelAware,
}

/// How the `K_hat * Omega` term is differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KhatGrad {
    /// Hessian-vector product `H g / |g|` by central differences of gradients.
    DoubleBackpropFd,
    /// `K_hat` is a constant; the penalty does not move the weights.
    StopGradient,
}

/// Which gradient `K_hat` measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KhatScope {
    /// Norm of the gradient of the empirical risk over every learnable weight.
    AllWeights,
    /// Norm of the gradient with respect to the feature entering the channel,
    /// scaled by `sqrt(batch)` so it is the RMS per-sample sensitivity.
    SplitInput,
    /// Like `SplitInput`, with each sample's sensitivity multiplied by the RMS
    /// of its feature. Channel perturbations scale with the feature power, so
    /// this is invariant to moving scale between the layers around the split.
    SplitInputRelative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub eta1: f64,
    /// Bound parameter `k`; `None` means `sqrt(n)`.
    pub k: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sigma_p: f64,
    /// Initial posterior deviation.
    pub sigma_init: f64,
    pub seed: u64,
    pub khat_grad: KhatGrad,
    pub khat_scope: KhatScope,
    /// Steps between `K_hat` refreshes.
    pub khat_refresh: usize,
    /// Refresh `K_hat` on the whole training set instead of the current batch.
    pub khat_full_dataset: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::ChannelAware,
            eta1: 1.0,
            k: None,
            lr: 0.05,
            epochs: 10,
            batch_size: 64,
            sigma_p: 0.1,
            sigma_init: 1e-3,
            seed: 0,
            khat_grad: KhatGrad::DoubleBackpropFd,
            khat_scope: KhatScope::AllWeights,
            khat_refresh: 10,
            khat_full_dataset: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, path: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be positive and finite, got {v}")))
            }
        };
        positive(self.eta1, "train.eta1")?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", format!("must be non-negative and finite, got {}", self.lr)));
        }
        positive(self.sigma_p, "train.sigma_p")?;
        positive(self.sigma_init, "train.sigma_init")?;
        if let Some(k) = self.k {
            positive(k, "train.k")?;
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.khat_refresh == 0 {
            return Err(Error::config("train.khat_refresh", "must be at least 1"));
        }
        Ok(())
    }

    pub fn k_for(&self, n: usize) -> f64 {
        self.k.unwrap_or((n as f64).sqrt())
    }
}

/// Values of the objective's terms at one posterior sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    /// Mean cross-entropy at the sampled weights.
    pub empirical_risk: f64,
    pub kl: f64,
    /// `(eta1 / k) * kl`.
    pub kl_term: f64,
    pub khat: f64,
    pub omega: f64,
    /// `khat * omega`.
    pub penalty: f64,
    pub total: f64,
}

/// `K_hat` and, when requested, its gradient with respect to the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct KhatValue {
    pub value: f64,
    pub grad: Option<Vec<f64>>,
}

/// Relative finite-difference step used for the `K_hat` gradient.
pub const KHAT_FD_STEP: f64 = 1e-4;

/// `K_hat` at `params` on `(x, labels)`; the gradient is a central difference
/// of gradients with step `step * (1 + |params|)`.
pub fn khat(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    scope: KhatScope,
    with_grad: Option<f64>,
) -> Result<KhatValue> {
    match scope {
        KhatScope::AllWeights => {
            let g = backward_op(spec, params, x, labels, SplitOp::None, false)?.grads.values;
            let value = l2(&g);
            let grad = match with_grad {
                Some(step) if value > 0.0 => {
                    let h = step * (1.0 + params.norm());
                    let shifted = |sign: f64| -> Result<Vec<f64>> {
                        let values = params
                            .values
                            .iter()
                            .zip(&g)
                            .map(|(&w, &gi)| w + sign * h * gi / value)
                            .collect();
                        Ok(backward_op(spec, &ParamVector { values }, x, labels, SplitOp::None, false)?
                            .grads
                            .values)
                    };
                    let plus = shifted(1.0)?;
                    let minus = shifted(-1.0)?;
                    Some(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
                }
                Some(_) => Some(vec![0.0; params.len()]),
                None => None,
            };
            Ok(KhatValue { value, grad })
        }
        KhatScope::SplitInput => {
            let rows = labels.len() as f64;
            let out = backward_op(spec, params, x, labels, SplitOp::None, true)?;
            let gf = out.split_grad.expect("split gradient requested");
            let norm = gf.iter().map(|v| v * v).sum::<f64>().sqrt();
            let value = norm * rows.sqrt();
            let grad = match with_grad {
                Some(step) if norm > 0.0 => {
                    let feature_scale = 1.0 + gf.len() as f64;
                    let h = step * feature_scale.sqrt();
                    let u: Array2<f64> = gf.mapv(|v| v / norm);
                    let shifted = |sign: f64| -> Result<Vec<f64>> {
                        let delta = u.mapv(|v| sign * h * v);
                        Ok(backward_op(spec, params, x, labels, SplitOp::Additive(delta.view()), false)?
                            .grads
                            .values)
                    };
                    let plus = shifted(1.0)?;
                    let minus = shifted(-1.0)?;
                    Some(
                        plus.iter()
                            .zip(&minus)
                            .map(|(p, m)| rows.sqrt() * (p - m) / (2.0 * h))
                            .collect(),
                    )
                }
                Some(_) => Some(vec![0.0; params.len()]),
                None => None,
            };
            Ok(KhatValue { value, grad })
        }
        KhatScope::SplitInputRelative => khat_relative(spec, params, x, labels, with_grad),
    }
}

/// `K_hat = sqrt(B) |R G|` with `G` the split gradient of the mean loss and
/// `R = diag(|F_i| / sqrt(d))`. Its weight gradient has a curvature part,
/// probed by finite differences along `R^2 G`, and a part through `R`, which
/// is an exact pull-back through the prefix.
fn khat_relative(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    with_grad: Option<f64>,
) -> Result<KhatValue> {
    let rows = labels.len() as f64;
    let d = spec.split_dim() as f64;
    let out = backward_op(spec, params, x, labels, SplitOp::None, true)?;
    let gf = out.split_grad.expect("split gradient requested");
    let feature = crate::nn::forward_prefix(spec, params, x)?;
    let r2: Vec<f64> = feature.rows().into_iter().map(|f| f.dot(&f) / d).collect();
    let g2: Vec<f64> = gf.rows().into_iter().map(|g| g.dot(&g)).collect();
    let rg = r2.iter().zip(&g2).map(|(r, g)| r * g).sum::<f64>().sqrt();
    let value = rows.sqrt() * rg;
    let grad = match with_grad {
        Some(step) if rg > 0.0 => {
            let mut u = gf.clone();
            for (mut row, &r) in u.rows_mut().into_iter().zip(&r2) {
                row *= r;
            }
            let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = step * (1.0 + gf.len() as f64).sqrt();
            let dir = u.mapv(|v| v / u_norm);
            let shifted = |sign: f64| -> Result<Vec<f64>> {
                let delta = dir.mapv(|v| sign * h * v);
                Ok(backward_op(spec, params, x, labels, SplitOp::Additive(delta.view()), false)?
                    .grads
                    .values)
            };
            let plus = shifted(1.0)?;
            let minus = shifted(-1.0)?;
            let curvature = rows.sqrt() * u_norm / rg / (2.0 * h);
            let mut seed = feature;
            for (mut row, &g) in seed.rows_mut().into_iter().zip(&g2) {
                row *= rows.sqrt() * g / (d * rg);
            }
            let through_scale = crate::nn::prefix_vjp(spec, params, x, seed.view())?.values;
            Some(
                plus.iter()
                    .zip(&minus)
                    .zip(&through_scale)
                    .map(|((p, m), s)| curvature * (p - m) + s)
                    .collect(),
            )
        }
        Some(_) => Some(vec![0.0; params.len()]),
        None => None,
    };
    Ok(KhatValue { value, grad })
}

fn check_batch(spec: &NetworkSpec, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    if batch.inputs.cols() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, network expects {}",
            batch.inputs.cols(),
            spec.input_dim()
        )));
    }
    Ok(())
}

/// Objective at a fixed noise vector `eps`.
///
/// `khat_value` overrides the `K_hat` computed at the posterior mean; passing
/// it holds the penalty constant, as in the `stop_gradient` mode.
#[allow(clippy::too_many_arguments)]
pub fn objective_at(
    posterior: &VariationalPosterior,
    eps: &[f64],
    spec: &NetworkSpec,
    batch: &Batch,
    channel: &ChannelSpec,
    cfg: &TrainConfig,
    k: f64,
    khat_value: Option<f64>,
) -> Result<ObjectiveParts> {
    check_batch(spec, batch)?;
    let omega = channel_omega(channel)?;
    let w = posterior.weights_at(eps);
    let empirical_risk = backward_op(spec, &w, batch.inputs.as_batch(), &batch.labels, SplitOp::None, false)?.loss;
    let kl = posterior.kl(cfg.sigma_p)?;
    let kl_term = cfg.eta1 / k * kl;
    let khat_v = match khat_value {
        Some(v) => v,
        None => khat(spec, &posterior.mu, batch.inputs.as_batch(), &batch.labels, cfg.khat_scope, None)?.value,
    };
    let penalty = khat_v * omega;
    Ok(ObjectiveParts {
        empirical_risk,
        kl,
        kl_term,
        khat: khat_v,
        omega,
        penalty,
        total: empirical_risk + kl_term + penalty,
    })
}

/// Objective at a fresh posterior sample drawn from `rng`, with `k = sqrt(n)`
/// unless the config fixes it.
pub fn objective(
    posterior: &VariationalPosterior,
    spec: &NetworkSpec,
    batch: &Batch,
    channel: &ChannelSpec,
    cfg: &TrainConfig,
    n: usize,
    rng: &mut Rng,
) -> Result<ObjectiveParts> {
    let eps = posterior.draw_noise(rng);
    objective_at(posterior, &eps, spec, batch, channel, cfg, cfg.k_for(n), None)
}

/// Gradient of the objective with respect to `(mu, rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGradient {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Pathwise gradient at fixed `eps`; `khat_grad`, when present, is the
/// gradient of `K_hat` at the mean and is scaled by `Omega`.
#[allow(clippy::too_many_arguments)]
pub fn objective_gradient(
    posterior: &VariationalPosterior,
    eps: &[f64],
    spec: &NetworkSpec,
    batch: &Batch,
    omega: f64,
    cfg: &TrainConfig,
    k: f64,
    khat_grad: Option<&[f64]>,
) -> Result<(f64, PosteriorGradient)> {
    check_batch(spec, batch)?;
    let w = posterior.weights_at(eps);
    let out = backward_op(spec, &w, batch.inputs.as_batch(), &batch.labels, SplitOp::None, false)?;
    let scale = cfg.eta1 / k;
    let inv_var_p = 1.0 / (cfg.sigma_p * cfg.sigma_p);
    let n = posterior.len();
    let mut mu = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for i in 0..n {
        let g = out.grads.values[i];
        let m = posterior.mu.values[i];
        let r = posterior.rho[i];
        let s = softplus(r);
        let ds = sigmoid(r);
        let mut gm = g + scale * m * inv_var_p;
        if let Some(kg) = khat_grad {
            gm += omega * kg[i];
        }
        mu.push(gm);
        rho.push((g * eps[i] + scale * (s * inv_var_p - 1.0 / s)) * ds);
    }
    Ok((out.loss, PosteriorGradient { mu, rho }))
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective over the epoch's steps.
    pub objective: f64,
    /// Running 0-1 risk of the epoch's mini-batch predictions.
    pub empirical_risk: f64,
    /// KL to the prior at the end of the epoch (0 for ERM).
    pub kl: f64,
    /// Mean `K_hat` over the epoch.
    pub khat: f64,
    pub omega: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
}

impl TrainStats {
    pub const CSV_COLUMNS: [&'static str; 7] =
        ["epoch", "objective", "empirical_risk", "kl", "khat", "omega", "seconds"];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_COLUMNS)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                crate::bound::fmt_num(e.objective),
                crate::bound::fmt_num(e.empirical_risk),
                crate::bound::fmt_num(e.kl),
                crate::bound::fmt_num(e.khat),
                crate::bound::fmt_num(e.omega),
                format!("{:.3}", e.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Same records with the wall-clock column zeroed, for replay comparisons.
    pub fn without_timing(&self) -> TrainStats {
        TrainStats {
            epochs: self
                .epochs
                .iter()
                .map(|e| EpochStats { seconds: 0.0, ..e.clone() })
                .collect(),
        }
    }
}

/// A trained model: deterministic weights or a posterior over them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    Params(ParamVector),
    Posterior(VariationalPosterior),
}

impl Model {
    /// Weights for one draw; deterministic models ignore `rng`.
    pub fn draw(&self, rng: &mut Rng) -> ParamVector {
        match self {
            Model::Params(p) => p.clone(),
            Model::Posterior(q) => q.sample(rng),
        }
    }

    /// Posterior mean, or the weights themselves.
    pub fn mean(&self) -> &ParamVector {
        match self {
            Model::Params(p) => p,
            Model::Posterior(q) => &q.mu,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Model::Posterior(_))
    }
}

/// Channel-aware SGD state: the cached `K_hat` and its gradient.
pub struct ChannelAwareTrainer<'a> {
    spec: &'a NetworkSpec,
    cfg: &'a TrainConfig,
    omega: f64,
    k: f64,
    step: usize,
    cached: Option<KhatValue>,
}

/// What a single step saw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub objective: f64,
    pub cross_entropy: f64,
    pub errors: usize,
    pub khat: f64,
}

impl<'a> ChannelAwareTrainer<'a> {
    /// `n` is the training-set size, used for the default `k = sqrt(n)`.
    pub fn new(spec: &'a NetworkSpec, channel: &ChannelSpec, cfg: &'a TrainConfig, n: usize) -> Result<Self> {
        cfg.validate()?;
        spec.check_channel(channel)?;
        Ok(ChannelAwareTrainer {
            spec,
            cfg,
            omega: channel_omega(channel)?,
            k: cfg.k_for(n),
            step: 0,
            cached: None,
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    fn refresh(&mut self, posterior: &VariationalPosterior, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        let want_grad = self.omega > 0.0 && self.cfg.khat_grad == KhatGrad::DoubleBackpropFd;
        self.cached = Some(khat(
            self.spec,
            &posterior.mu,
            x,
            labels,
            self.cfg.khat_scope,
            want_grad.then_some(KHAT_FD_STEP),
        )?);
        Ok(())
    }

    /// One SGD step on `(mu, rho)` with a single posterior sample.
    pub fn step(
        &mut self,
        posterior: &mut VariationalPosterior,
        batch: &Batch,
        full: Option<&Dataset>,
        rng: &mut Rng,
    ) -> Result<StepReport> {
        if self.step % self.cfg.khat_refresh == 0 || self.cached.is_none() {
            match full {
                Some(d) if self.cfg.khat_full_dataset => self.refresh(posterior, d.features(), d.labels())?,
                _ => self.refresh(posterior, batch.inputs.as_batch(), &batch.labels)?,
            }
        }
        let cached = self.cached.as_ref().expect("refreshed");
        let eps = posterior.draw_noise(rng);
        let w = posterior.weights_at(&eps);
        let (ce, grad) = objective_gradient(
            posterior,
            &eps,
            self.spec,
            batch,
            self.omega,
            self.cfg,
            self.k,
            cached.grad.as_deref(),
        )?;
        let kl = posterior.kl(self.cfg.sigma_p)?;
        let objective = ce + self.cfg.eta1 / self.k * kl + cached.value * self.omega;
        let khat_value = cached.value;

        let lr = self.cfg.lr;
        for (m, g) in posterior.mu.values.iter_mut().zip(&grad.mu) {
            *m -= lr * g;
        }
        for (r, g) in posterior.rho.iter_mut().zip(&grad.rho) {
            *r = (*r - lr * g).max(RHO_MIN);
        }
        if posterior.mu.values.iter().chain(&posterior.rho).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("in the posterior after step {}", self.step),
            });
        }
        self.step += 1;
        Ok(StepReport {
            objective,
            cross_entropy: ce,
            errors: count_errors(self.spec, &w, batch)?,
            khat: khat_value,
        })
    }
}

fn count_errors(spec: &NetworkSpec, params: &ParamVector, batch: &Batch) -> Result<usize> {
    let (logits, _) = crate::nn::forward_op(spec, params, batch.inputs.as_batch(), SplitOp::None, false)?;
    let mut wrong = 0;
    for (row, &y) in logits.rows().into_iter().zip(&batch.labels) {
        wrong += usize::from(loss_01(row.as_slice().expect("standard layout"), y)?);
    }
    Ok(wrong)
}

/// One channel-aware step with `K_hat` computed afresh on `batch`.
pub fn train_step(
    posterior: &mut VariationalPosterior,
    spec: &NetworkSpec,
    batch: &Batch,
    channel: &ChannelSpec,
    cfg: &TrainConfig,
    n: usize,
    rng: &mut Rng,
) -> Result<StepReport> {
    ChannelAwareTrainer::new(spec, channel, cfg, n)?.step(posterior, batch, None, rng)
}

/// One plain SGD step on mean cross-entropy.
pub fn erm_step(params: &mut ParamVector, spec: &NetworkSpec, batch: &Batch, lr: f64) -> Result<StepReport> {
    let out = backward_op(spec, params, batch.inputs.as_batch(), &batch.labels, SplitOp::None, false)?;
    let errors = count_errors(spec, params, batch)?;
    for (w, g) in params.values.iter_mut().zip(&out.grads.values) {
        *w -= lr * g;
    }
    if params.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "in the weights after an SGD step".into(),
        });
    }
    Ok(StepReport {
        objective: out.loss,
        cross_entropy: out.loss,
        errors,
        khat: l2(&out.grads.values),
    })
}

/// Trains on `data`: ERM returns weights, channel-aware returns a posterior.
///
/// Randomness comes from the config seed through the "init", "posterior" and
/// "shuffle" streams.
pub fn train(
    spec: &NetworkSpec,
    data: &Dataset,
    channel: &ChannelSpec,
    cfg: &TrainConfig,
) -> Result<(Model, TrainStats)> {
    cfg.validate()?;
    spec.check_channel(channel)?;
    if data.dim() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "dataset has {} features, network expects {}",
            data.dim(),
            spec.input_dim()
        )));
    }
    if data.classes() > spec.classes() {
        return Err(Error::Shape(format!(
            "dataset has {} classes, network outputs {}",
            data.classes(),
            spec.classes()
        )));
    }
    let mut init_rng = Rng::named(cfg.seed, STREAM_INIT);
    let mut shuffle_rng = Rng::named(cfg.seed, STREAM_SHUFFLE);
    let mut post_rng = Rng::named(cfg.seed, STREAM_POSTERIOR);
    let omega = channel_omega(channel)?;

    let mut model = match cfg.mode {
        TrainMode::Erm => Model::Params(ParamVector::init(spec, cfg.sigma_p, &mut init_rng)),
        TrainMode::ChannelAware => {
            Model::Posterior(VariationalPosterior::init(spec, cfg.sigma_p, cfg.sigma_init, &mut init_rng)?)
        }
    };
    let mut trainer = match cfg.mode {
        TrainMode::ChannelAware => Some(ChannelAwareTrainer::new(spec, channel, cfg, data.len())?),
        TrainMode::Erm => None,
    };

    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let (mut obj, mut errors, mut khat_sum, mut steps) = (0.0, 0usize, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk)?;
            let report = match (&mut model, trainer.as_mut()) {
                (Model::Params(p), _) => erm_step(p, spec, &batch, cfg.lr)?,
                (Model::Posterior(q), Some(t)) => t.step(q, &batch, Some(data), &mut post_rng)?,
                (Model::Posterior(_), None) => unreachable!("posterior models always have a trainer"),
            };
            obj += report.objective;
            errors += report.errors;
            khat_sum += report.khat;
            steps += 1;
        }
        let kl = match &model {
            Model::Params(_) => 0.0,
            Model::Posterior(q) => q.kl(cfg.sigma_p)?,
        };
        stats.epochs.push(EpochStats {
            epoch: epoch + 1,
            objective: obj / steps as f64,
            empirical_risk: errors as f64 / data.len() as f64,
            kl,
            khat: khat_sum / steps as f64,
            omega,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::omega_bec;
    use crate::data::make_blobs;
    use crate::nn::backward;

    fn blob_setup() -> (NetworkSpec, Dataset) {
        let spec = NetworkSpec::mlp(&[4, 6, 4, 2], 2).unwrap();
        let data = make_blobs(24, 4, 2, 0.7, 3).unwrap();
        (spec, data)
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-30.0) > 0.0);
        assert_eq!(softplus(800.0), 800.0);
        for y in [1e-6, 0.1, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn prior_posterior_has_zero_kl() {
        let (spec, data) = blob_setup();
        let cfg = TrainConfig::default();
        let q = VariationalPosterior::prior(&spec, cfg.sigma_p);
        let mut rng = Rng::new(1, 2);
        let parts = objective(&q, &spec, &data.as_batch(), &ChannelSpec::identity(6), &cfg, 24, &mut rng).unwrap();
        assert!(parts.kl.abs() < 1e-12);
    }

    #[test]
    fn vanishing_penalties_leave_the_risk() {
        let (spec, data) = blob_setup();
        let cfg = TrainConfig {
            eta1: 1e-300,
            ..TrainConfig::default()
        };
        let mut rng = Rng::new(1, 1);
        let q = VariationalPosterior::init(&spec, 0.1, 0.05, &mut rng).unwrap();
        let eps = q.draw_noise(&mut rng);
        let batch = data.as_batch();
        let parts = objective_at(&q, &eps, &spec, &batch, &ChannelSpec::identity(6), &cfg, 5.0, None).unwrap();
        let (ce, _) = backward(&spec, &q.weights_at(&eps), &batch, None).unwrap();
        assert_eq!(parts.penalty, 0.0);
        assert_eq!(parts.total, ce);
    }

    #[test]
    fn bec_penalty_is_khat_times_omega() {
        let spec = NetworkSpec::mlp(&[4, 16, 2], 2).unwrap();
        let data = make_blobs(20, 4, 2, 0.5, 5).unwrap();
        let cfg = TrainConfig::default();
        let mut rng = Rng::new(7, 0);
        let q = VariationalPosterior::init(&spec, 0.1, 0.01, &mut rng).unwrap();
        let channel = ChannelSpec::bec(16, 0.1).unwrap();
        let parts = objective(&q, &spec, &data.as_batch(), &channel, &cfg, 20, &mut rng).unwrap();
        let (_, g) = backward(&spec, &q.mu, &data.as_batch(), None).unwrap();
        let khat_direct = crate::nn::grad_norm(&g);
        assert_eq!(parts.khat, khat_direct);
        assert_eq!(parts.penalty, khat_direct * omega_bec(16, 0.1).unwrap());
    }

    #[test]
    fn zero_lr_step_leaves_posterior() {
        let (spec, data) = blob_setup();
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = Rng::new(3, 3);
        let mut q = VariationalPosterior::init(&spec, 0.1, 0.01, &mut rng).unwrap();
        let before = q.clone();
        let channel = ChannelSpec::bec(6, 0.4).unwrap();
        train_step(&mut q, &spec, &data.as_batch(), &channel, &cfg, 24, &mut rng).unwrap();
        assert_eq!(q, before);
        let bad = TrainConfig { lr: -1.0, ..cfg };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn kl_step_pulls_toward_the_prior() {
        // Zero inputs give the weights no cross-entropy gradient, leaving only
        // the KL force on them.
        let spec = NetworkSpec::mlp(&[2, 2], 2).unwrap();
        let batch = Batch::new(
            crate::tensor::Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
            vec![0, 1],
        )
        .unwrap();
        let cfg = TrainConfig {
            lr: 0.01,
            eta1: 1.0,
            ..TrainConfig::default()
        };
        let mut q = VariationalPosterior::new(
            ParamVector::from_vec(&spec, vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.0]).unwrap(),
            vec![softplus_inverse(0.02); 6],
        )
        .unwrap();
        let before = q.clone();
        let mut rng = Rng::new(0, 0);
        train_step(&mut q, &spec, &batch, &ChannelSpec::identity(2), &cfg, 4, &mut rng).unwrap();
        for i in 0..6 {
            if i < 4 {
                assert!(q.mu.values[i].abs() < before.mu.values[i].abs());
            }
            assert!(softplus(q.rho[i]) > softplus(before.rho[i]));
            assert!(softplus(q.rho[i]) < cfg.sigma_p);
        }
        assert!(q.mu.values[0] < 0.3 && q.mu.values[1] > -0.2);
    }

    fn fd_check(cfg: &TrainConfig, channel: &ChannelSpec) {
        let (spec, data) = blob_setup();
        let batch = data.as_batch();
        let mut rng = Rng::new(11, 3);
        let q = VariationalPosterior::init(&spec, 0.5, 0.2, &mut rng).unwrap();
        let eps = q.draw_noise(&mut rng);
        let k = 3.0;
        let fixed = khat(&spec, &q.mu, batch.inputs.as_batch(), &batch.labels, cfg.khat_scope, None)
            .unwrap()
            .value;
        let omega = channel_omega(channel).unwrap();
        let (_, g) = objective_gradient(&q, &eps, &spec, &batch, omega, cfg, k, None).unwrap();
        let j = |p: &VariationalPosterior| {
            objective_at(p, &eps, &spec, &batch, channel, cfg, k, Some(fixed))
                .unwrap()
                .total
        };
        for i in 0..q.len() {
            for which in 0..2 {
                let mut plus = q.clone();
                let mut minus = q.clone();
                let (slot_p, slot_m, analytic) = if which == 0 {
                    (&mut plus.mu.values[i], &mut minus.mu.values[i], g.mu[i])
                } else {
                    (&mut plus.rho[i], &mut minus.rho[i], g.rho[i])
                };
                let h = 1e-5 * (1.0 + slot_p.abs());
                *slot_p += h;
                *slot_m -= h;
                let numeric = (j(&plus) - j(&minus)) / (2.0 * h);
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(err < 1e-3, "param {i} ({which}): {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            khat_grad: KhatGrad::StopGradient,
            eta1: 0.7,
            ..TrainConfig::default()
        };
        fd_check(&cfg, &ChannelSpec::bec(6, 0.3).unwrap());
    }

    #[test]
    fn khat_gradient_matches_smaller_step() {
        let (spec, data) = blob_setup();
        let mut rng = Rng::new(2, 2);
        let p = ParamVector::init(&spec, 0.5, &mut rng);
        let x = data.features();
        for scope in [KhatScope::AllWeights, KhatScope::SplitInput, KhatScope::SplitInputRelative] {
            let a = khat(&spec, &p, x, data.labels(), scope, Some(1e-4)).unwrap();
            let b = khat(&spec, &p, x, data.labels(), scope, Some(1e-5)).unwrap();
            let (ga, gb) = (a.grad.unwrap(), b.grad.unwrap());
            let diff: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
            assert!(l2(&diff) <= 0.1 * l2(&gb), "{scope:?}");
        }
    }

    #[test]
    fn khat_gradient_matches_khat_differences() {
        let (spec, data) = blob_setup();
        let mut rng = Rng::new(4, 4);
        let p = ParamVector::init(&spec, 0.5, &mut rng);
        let x = data.features();
        for scope in [KhatScope::AllWeights, KhatScope::SplitInput, KhatScope::SplitInputRelative] {
            let g = khat(&spec, &p, x, data.labels(), scope, Some(KHAT_FD_STEP)).unwrap().grad.unwrap();
            let dir: Vec<f64> = g.iter().map(|v| v / l2(&g)).collect();
            let h = 1e-5;
            let at = |s: f64| {
                let values = p.values.iter().zip(&dir).map(|(w, d)| w + s * h * d).collect();
                khat(&spec, &ParamVector { values }, x, data.labels(), scope, None).unwrap().value
            };
            let numeric = (at(1.0) - at(-1.0)) / (2.0 * h);
            let analytic = l2(&g);
            assert!((numeric - analytic).abs() < 1e-3 * analytic, "{scope:?}: {numeric} vs {analytic}");
        }
    }

    #[test]
    fn stop_gradient_penalty_does_not_move_weights() {
        let (spec, data) = blob_setup();
        let batch = data.as_batch();
        let cfg = TrainConfig {
            khat_grad: KhatGrad::StopGradient,
            ..TrainConfig::default()
        };
        let mut rng = Rng::new(5, 5);
        let q = VariationalPosterior::init(&spec, 0.3, 0.05, &mut rng).unwrap();
        let eps = q.draw_noise(&mut rng);
        let (_, with) = objective_gradient(&q, &eps, &spec, &batch, 2.5, &cfg, 3.0, None).unwrap();
        let (_, without) = objective_gradient(&q, &eps, &spec, &batch, 0.0, &cfg, 3.0, None).unwrap();
        assert_eq!(with, without);

        let mut q1 = q.clone();
        let mut q2 = q.clone();
        let channel = ChannelSpec::bec(6, 0.5).unwrap();
        train_step(&mut q1, &spec, &batch, &channel, &cfg, 24, &mut Rng::new(9, 9)).unwrap();
        train_step(&mut q2, &spec, &batch, &ChannelSpec::identity(6), &cfg, 24, &mut Rng::new(9, 9)).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn erm_separates_blobs() {
        let spec = NetworkSpec::mlp(&[2, 2], 2).unwrap();
        let data = make_blobs(200, 2, 2, 0.5, 1).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Erm,
            epochs: 50,
            lr: 0.1,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let (model, stats) = train(&spec, &data, &ChannelSpec::identity(2), &cfg).unwrap();
        assert_eq!(stats.epochs.len(), 50);
        let (logits, _) = crate::nn::forward(&spec, model.mean(), &data.as_batch().inputs, None).unwrap();
        let risk = crate::nn::error_rate(&logits, data.labels()).unwrap();
        assert!(risk < 0.05, "training risk {risk}");
    }

    #[test]
    fn frozen_sigma_tracks_erm() {
        let (spec, data) = blob_setup();
        let base = TrainConfig {
            epochs: 3,
            lr: 0.1,
            batch_size: 8,
            seed: 21,
            ..TrainConfig::default()
        };
        let erm = TrainConfig {
            mode: TrainMode::Erm,
            ..base.clone()
        };
        let ours = TrainConfig {
            mode: TrainMode::ChannelAware,
            eta1: 1e-300,
            sigma_init: softplus(-12.0),
            ..base
        };
        let channel = ChannelSpec::identity(6);
        let (m_erm, _) = train(&spec, &data, &channel, &erm).unwrap();
        let (m_ours, _) = train(&spec, &data, &channel, &ours).unwrap();
        let diff: Vec<f64> = m_erm
            .mean()
            .values
            .iter()
            .zip(&m_ours.mean().values)
            .map(|(a, b)| a - b)
            .collect();
        assert!(l2(&diff) < 1e-4 * (1.0 + m_erm.mean().norm()), "{}", l2(&diff));
    }

    #[test]
    fn training_replays() {
        let (spec, data) = blob_setup();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 4,
            ..TrainConfig::default()
        };
        let channel = ChannelSpec::bec(6, 0.2).unwrap();
        let (m1, s1) = train(&spec, &data, &channel, &cfg).unwrap();
        let (m2, s2) = train(&spec, &data, &channel, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1.without_timing(), s2.without_timing());
        assert!(s1.epochs.iter().all(|e| e.kl >= 0.0));
    }
}
