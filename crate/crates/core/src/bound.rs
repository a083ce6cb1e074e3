//! PAC-Bayes bounds on the accuracy lost to the channel.
//!
//! With a channel-aware prior the generalization gap
//! `Delta = L(P_{W'|S}) - L_S(P_{W|S})` is bounded, with probability at least
//! `1 - epsilon`, by
//!
//! ```text
//! k sigma^2 / (2n) + (KL(P || Q) - log epsilon) / k + K * Omega
//! ```
//!
//! where `Omega = E[d(W', W)]` is the expected distance of the channel layer
//! from `(I, 0)`. The closed forms for `Omega` live here next to the oracles
//! that check them: exact binomial sums against Monte-Carlo, and the Rayleigh
//! expressions against radial quadrature of the `n / h` density.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::channel::{self, ChannelKind, ChannelSpec, Metric};
use crate::error::{Error, Result};
use crate::quad::{self, QuadOptions};
use crate::rng::Rng;

/// Default confidence level.
pub const DEFAULT_EPSILON: f64 = 0.025;
/// Default sub-Gaussian constant.
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Blocks used by the median-of-means estimator.
pub const MOM_BLOCKS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub n: usize,
    pub k: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Lipschitz constant `K`, or its local surrogate when `surrogate` is set.
    pub lipschitz: f64,
    pub surrogate: bool,
    pub channel: ChannelSpec,
}

impl BoundConfig {
    /// `k = sqrt(n)`, `epsilon = 0.025`, `sigma = 1`.
    pub fn with_defaults(n: usize, lipschitz: f64, channel: ChannelSpec) -> Self {
        BoundConfig {
            n,
            k: (n as f64).sqrt(),
            epsilon: DEFAULT_EPSILON,
            sigma: DEFAULT_SIGMA,
            lipschitz,
            surrogate: false,
            channel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::config("bound.n", "must be at least 1"));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::config("bound.k", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config("bound.epsilon", "must lie in (0, 1)"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("bound.sigma", "must be positive"));
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::config("bound.lipschitz", "must be non-negative"));
        }
        self.channel
            .validate()
            .map_err(|e| Error::config("bound.channel", e.to_string()))
    }
}

/// Additive decomposition of a bound on the population risk under the channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub label: String,
    pub empirical_risk: f64,
    /// `k sigma^2 / (2n)`
    pub concentration_term: f64,
    /// `-log(epsilon) / k`
    pub confidence_term: f64,
    /// `KL / k`
    pub kl_term: f64,
    /// `K * Omega`, or `d pi K / (4 sqrt(gamma))` for multi-block Rayleigh.
    pub penalty_term: f64,
    /// `(d / 2k) log(pi^2 / 8)`, multi-block Rayleigh only.
    pub extra_log_term: Option<f64>,
    pub total: f64,
}

impl BoundReport {
    pub const CSV_COLUMNS: [&'static str; 7] = [
        "bound",
        "empirical_risk",
        "khat_omega",
        "kl_over_k",
        "concentration",
        "confidence",
        "log_term",
    ];

    /// Sum of the components in the fixed order used to build `total`.
    pub fn resum(&self) -> f64 {
        let mut total = self.empirical_risk;
        total += self.concentration_term;
        total += self.confidence_term;
        total += self.kl_term;
        total += self.penalty_term;
        if let Some(extra) = self.extra_log_term {
            total += extra;
        }
        total
    }

    /// Upper bound on the gap `Delta` alone (the total minus the empirical risk).
    pub fn gap_bound(&self) -> f64 {
        let mut total = self.concentration_term;
        total += self.confidence_term;
        total += self.kl_term;
        total += self.penalty_term;
        if let Some(extra) = self.extra_log_term {
            total += extra;
        }
        total
    }

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            fmt_num(self.total),
            fmt_num(self.empirical_risk),
            fmt_num(self.penalty_term),
            fmt_num(self.kl_term),
            fmt_num(self.concentration_term),
            fmt_num(self.confidence_term),
            fmt_num(self.extra_log_term.unwrap_or(0.0)),
        ]
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.9}")
}

fn check_prob(p: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} outside [0, 1]")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("SNR gamma = {gamma} must be positive")))
    }
}

/// `E[sqrt(R)]` for `R ~ Bin(d, p_o)`: the erasure-channel penalty under the Frobenius metric.
pub fn omega_bec(d: usize, p_o: f64) -> Result<f64> {
    if d < 1 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    check_prob(p_o, "p_o")?;
    if p_o == 0.0 {
        return Ok(0.0);
    }
    if p_o == 1.0 {
        return Ok((d as f64).sqrt());
    }
    let dn = d as f64;
    let ln_p = p_o.ln();
    let ln_q = (-p_o).ln_1p();
    let ln_d_fact = ln_gamma(dn + 1.0);
    let total = (1..=d)
        .map(|r| {
            let rf = r as f64;
            let ln_coeff = ln_d_fact - ln_gamma(rf + 1.0) - ln_gamma(dn - rf + 1.0);
            (ln_coeff + rf * ln_p + (dn - rf) * ln_q).exp() * rf.sqrt()
        })
        .sum::<f64>();
    Ok(total)
}

/// Scalar Rayleigh penalty `pi / (2 sqrt(gamma))` (one complex sub-channel).
pub fn omega_rayleigh_scalar(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(PI / (2.0 * gamma.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayleighTerms {
    /// `d pi K / (4 sqrt(gamma))`
    pub penalty: f64,
    /// `(d / 2k) log(pi^2 / 8)`
    pub log_term: f64,
}

/// Channel terms of the bound for `d / 2` independent Rayleigh sub-channels
/// under a Laplace prior with the optimal rate.
pub fn rayleigh_full_terms(d: usize, k: f64, lipschitz: f64, gamma: f64) -> Result<RayleighTerms> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::Domain(format!("d = {d} must be even and at least 2")));
    }
    if !(k > 0.0) {
        return Err(Error::Domain("k must be positive".into()));
    }
    if !(lipschitz >= 0.0) {
        return Err(Error::Domain("K must be non-negative".into()));
    }
    check_gamma(gamma)?;
    let dn = d as f64;
    Ok(RayleighTerms {
        penalty: dn * PI * lipschitz / (4.0 * gamma.sqrt()),
        log_term: dn / (2.0 * k) * (PI * PI / 8.0).ln(),
    })
}

/// Optimal Laplace rate `lambda* = k K + 4 sqrt(gamma) / pi`.
pub fn lambda_star(k: f64, lipschitz: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(k * lipschitz + 4.0 * gamma.sqrt() / PI)
}

/// Per-sub-channel bound term as a function of the Laplace rate:
/// `pi lambda / (2 sqrt(gamma)) + log(2 gamma / (lambda - kK)^2) - 2`.
pub fn rayleigh_objective_of_lambda(lambda: f64, k: f64, lipschitz: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let gap = lambda - k * lipschitz;
    if !(gap > 0.0) {
        return Err(Error::Domain(format!(
            "lambda = {lambda} must exceed kK = {}",
            k * lipschitz
        )));
    }
    Ok(PI * lambda / (2.0 * gamma.sqrt()) + (2.0 * gamma / (gap * gap)).ln() - 2.0)
}

/// `KL(N(mu, diag(sigma^2)) || N(0, sigma_p^2 I))`.
pub fn kl_diag_gaussian(mu: &[f64], sigma: &[f64], sigma_p: f64) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "{} means but {} deviations",
            mu.len(),
            sigma.len()
        )));
    }
    if !(sigma_p > 0.0) {
        return Err(Error::Domain("prior deviation must be positive".into()));
    }
    let var_p = sigma_p * sigma_p;
    let mut kl = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("posterior deviation {s} must be positive")));
        }
        kl += (sigma_p / s).ln() + (s * s + m * m) / (2.0 * var_p) - 0.5;
    }
    Ok(kl.max(0.0))
}

/// Closed-form channel penalty used by training and bound composition.
///
/// Multi-block Rayleigh (`d > 2`) has no tractable `Omega`; the sub-channel
/// term `d pi / (4 sqrt(gamma))` stands in for it.
pub fn channel_omega(channel: &ChannelSpec) -> Result<f64> {
    channel.validate()?;
    match channel.kind {
        ChannelKind::Identity => Ok(0.0),
        ChannelKind::Bec { p_o } => omega_bec(channel.d, p_o),
        ChannelKind::RayleighZf { gamma } => {
            if channel.d == 2 {
                omega_rayleigh_scalar(gamma)
            } else {
                Ok(channel.d as f64 * PI / (4.0 * gamma.sqrt()))
            }
        }
    }
}

/// Assembles the bound from its parts.
pub fn compose_bound(cfg: &BoundConfig, empirical_risk: f64, kl_value: f64, d: usize) -> Result<BoundReport> {
    cfg.validate()?;
    if d != cfg.channel.d {
        return Err(Error::config(
            "bound.d",
            format!("d = {d} differs from the channel dimension {}", cfg.channel.d),
        ));
    }
    if !(empirical_risk >= 0.0 && empirical_risk.is_finite()) {
        return Err(Error::invalid("empirical risk must be finite and non-negative"));
    }
    if !(kl_value >= 0.0 && kl_value.is_finite()) {
        return Err(Error::invalid("KL divergence must be finite and non-negative"));
    }
    let n = cfg.n as f64;
    let concentration_term = cfg.k * cfg.sigma * cfg.sigma / (2.0 * n);
    let confidence_term = -cfg.epsilon.ln() / cfg.k;
    let kl_term = kl_value / cfg.k;
    let (penalty_term, extra_log_term) = match cfg.channel.kind {
        ChannelKind::Identity => (0.0, None),
        ChannelKind::Bec { p_o } => (cfg.lipschitz * omega_bec(d, p_o)?, None),
        ChannelKind::RayleighZf { gamma } if d == 2 => (cfg.lipschitz * omega_rayleigh_scalar(gamma)?, None),
        ChannelKind::RayleighZf { gamma } => {
            let t = rayleigh_full_terms(d, cfg.k, cfg.lipschitz, gamma)?;
            (t.penalty, Some(t.log_term))
        }
    };
    let mut report = BoundReport {
        label: if cfg.surrogate { "surrogate bound" } else { "bound" }.to_string(),
        empirical_risk,
        concentration_term,
        confidence_term,
        kl_term,
        penalty_term,
        extra_log_term,
        total: 0.0,
    };
    report.total = report.resum();
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of `Omega = E[distance(sample(spec), metric)]`.
///
/// Rayleigh distances have infinite variance, so they are summarized with a
/// median of [`MOM_BLOCKS`] block means; other channels use the plain mean.
pub fn mc_omega(spec: &ChannelSpec, metric: Metric, samples: usize, rng: &mut Rng) -> Result<McEstimate> {
    if samples < 1 {
        return Err(Error::invalid("need at least one sample"));
    }
    spec.validate()?;
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let s = channel::sample_unchecked(spec, rng);
        values.push(channel::distance(&s, metric)?);
    }
    let (estimate, stderr) = match spec.kind {
        ChannelKind::RayleighZf { .. } => median_of_means(&values, MOM_BLOCKS),
        _ => mean_and_stderr(&values),
    };
    Ok(McEstimate {
        estimate,
        stderr,
        samples,
    })
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Median of block means with the block-mean standard error.
pub fn median_of_means(values: &[f64], blocks: usize) -> (f64, f64) {
    let blocks = blocks.clamp(1, values.len().max(1));
    let size = values.len() / blocks;
    let mut means: Vec<f64> = (0..blocks)
        .map(|b| {
            let chunk = &values[b * size..(b + 1) * size];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let (_, stderr) = mean_and_stderr(&means);
    means.sort_by(f64::total_cmp);
    let median = if blocks % 2 == 1 {
        means[blocks / 2]
    } else {
        0.5 * (means[blocks / 2 - 1] + means[blocks / 2])
    };
    (median, stderr)
}

fn radial_quad_opts() -> QuadOptions {
    QuadOptions {
        rel_tol: 1e-8,
        abs_tol: 1e-13,
        max_intervals: 4000,
    }
}

/// `E|T|` for `T = N / (sqrt(P) H)` by radial quadrature of its density
/// `f(t) = alpha^2 / (pi (alpha^2 + |t|^2)^2)`, `alpha^2 = 1 / gamma`.
pub fn quad_omega_rayleigh(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let a2 = 1.0 / gamma;
    let alpha = a2.sqrt();
    // |t| * 2 pi r f(r)
    let integrand = |r: f64| {
        let q = a2 + r * r;
        2.0 * a2 * r * r / (q * q)
    };
    Ok(quad::integrate_half_line(integrand, alpha, radial_quad_opts())?.value)
}

/// Differential entropy of `T` (in nats) by radial quadrature of `-f log f`.
pub fn quad_entropy_t(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let a2 = 1.0 / gamma;
    let alpha = a2.sqrt();
    let integrand = |r: f64| {
        let q = a2 + r * r;
        let density = a2 / (PI * q * q);
        let log_density = a2.ln() - PI.ln() - 2.0 * q.ln();
        -2.0 * PI * r * density * log_density
    };
    Ok(quad::integrate_half_line(integrand, alpha, radial_quad_opts())?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::STREAM_CHANNEL;

    #[test]
    fn omega_bec_examples() {
        assert!((omega_bec(1, 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(omega_bec(4, 1.0).unwrap(), 2.0);
        assert_eq!(omega_bec(4, 0.0).unwrap(), 0.0);
        let hand = 2.0 * 0.5 * 0.5 * 1.0 + 0.25 * 2f64.sqrt();
        assert!((omega_bec(2, 0.5).unwrap() - hand).abs() < 1e-12);
        assert!(omega_bec(0, 0.5).is_err());
        assert!(omega_bec(3, 1.1).is_err());
    }

    #[test]
    fn omega_bec_is_stable_for_large_d() {
        let v = omega_bec(10_000, 0.3).unwrap();
        assert!(v.is_finite());
        // concentrates near sqrt(E R)
        assert!((v - 3000f64.sqrt()).abs() < 0.05, "{v}");
    }

    #[test]
    fn omega_bec_monotone_and_jensen() {
        for d in [1usize, 2, 5, 16, 64] {
            let mut prev = 0.0;
            for i in 0..=20 {
                let p = i as f64 / 20.0;
                let v = omega_bec(d, p).unwrap();
                assert!(v >= prev - 1e-12, "d={d} p={p}");
                assert!(v <= (d as f64 * p).sqrt() + 1e-12);
                assert!(v <= (d as f64).sqrt() + 1e-12);
                prev = v;
            }
        }
        for p in [0.05, 0.3, 0.8] {
            let mut prev = 0.0;
            for d in 1..40 {
                let v = omega_bec(d, p).unwrap();
                assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn rayleigh_scalar_examples() {
        assert_eq!(omega_rayleigh_scalar(1.0).unwrap(), PI / 2.0);
        assert!(omega_rayleigh_scalar(1e13).unwrap() < 1e-6);
        assert!((omega_rayleigh_scalar(10f64.powf(-0.5)).unwrap() - 2.793_315).abs() < 1e-6);
        assert!(omega_rayleigh_scalar(0.0).is_err());
        assert!(omega_rayleigh_scalar(-2.0).is_err());
        for g in [0.1, 1.0, 10.0, 100.0] {
            assert!((omega_rayleigh_scalar(g).unwrap() * g.sqrt() - PI / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rayleigh_full_terms_examples() {
        let t = rayleigh_full_terms(2, 1.0, 1.0, 1.0).unwrap();
        assert!((t.penalty - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((t.log_term - 0.210_018).abs() < 1e-6);
        let z = rayleigh_full_terms(2, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(z.penalty, 0.0);
        assert_eq!(z.log_term, t.log_term);
        let t4 = rayleigh_full_terms(4, 1.0, 1.0, 1.0).unwrap();
        assert!((t4.penalty - 2.0 * t.penalty).abs() < 1e-14);
        assert!((t4.log_term - 2.0 * t.log_term).abs() < 1e-14);
        assert!(rayleigh_full_terms(3, 1.0, 1.0, 1.0).is_err());
        assert!(rayleigh_full_terms(0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn lambda_star_examples() {
        assert!((lambda_star(1.0, 1.0, 1.0).unwrap() - 2.273_240).abs() < 1e-6);
        let l = lambda_star(1.0, 1.0, 1.0).unwrap();
        let lhs = rayleigh_objective_of_lambda(l, 1.0, 1.0, 1.0).unwrap();
        assert!((lhs - 1.780_815).abs() < 1e-6);
        assert!(rayleigh_objective_of_lambda(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(rayleigh_objective_of_lambda(0.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn objective_is_convex() {
        let (k, kk, g) = (3.0, 0.7, 0.5);
        let h = 1e-3;
        let mut lam = k * kk + 0.01;
        while lam < k * kk + 20.0 {
            let f = |x| rayleigh_objective_of_lambda(x, k, kk, g).unwrap();
            assert!(f(lam + 2.0 * h) - 2.0 * f(lam + h) + f(lam) > 0.0);
            lam += 0.1;
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_diag_gaussian(&[0.0, 0.0], &[0.3, 0.3], 0.3).unwrap(), 0.0);
        assert!((kl_diag_gaussian(&[1.0], &[1.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
        let expected = 2f64.ln() + 0.125 - 0.5;
        assert!((kl_diag_gaussian(&[0.0], &[0.5], 1.0).unwrap() - expected).abs() < 1e-15);
        assert!(kl_diag_gaussian(&[0.0], &[0.0], 1.0).is_err());
        assert!(kl_diag_gaussian(&[0.0], &[1.0], 0.0).is_err());
        assert!(kl_diag_gaussian(&[0.0, 1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn kl_matches_one_dimensional_quadrature() {
        let (m, s, sp) = (0.3, 0.5, 1.0);
        let log_n = |x: f64, mu: f64, sd: f64| -0.5 * ((x - mu) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * PI).ln();
        let integrand = |x: f64| {
            let lp = log_n(x, m, s);
            lp.exp() * (lp - log_n(x, 0.0, sp))
        };
        let q = quad::integrate(integrand, -12.0, 12.0, QuadOptions::default()).unwrap();
        let closed = kl_diag_gaussian(&[m], &[s], sp).unwrap();
        assert!((q.value - closed).abs() < 1e-9, "{} vs {closed}", q.value);
    }

    fn bec_cfg(n: usize, k: f64, p: f64, d: usize) -> BoundConfig {
        BoundConfig {
            n,
            k,
            epsilon: 0.025,
            sigma: 1.0,
            lipschitz: 1.0,
            surrogate: false,
            channel: ChannelSpec::bec(d, p).unwrap(),
        }
    }

    #[test]
    fn compose_examples() {
        let r = compose_bound(&bec_cfg(10_000, 100.0, 0.5, 2), 0.0, 0.0, 2).unwrap();
        assert!((r.concentration_term - 0.005).abs() < 1e-15);
        assert!((r.confidence_term - 0.036_888_794_541_139_36).abs() < 1e-12);
        assert!((r.penalty_term - 0.853_553).abs() < 1e-6);
        assert_eq!(r.total, r.resum());

        let id = BoundConfig {
            channel: ChannelSpec::identity(4),
            ..bec_cfg(10_000, 100.0, 0.5, 4)
        };
        let r = compose_bound(&id, 0.0, 0.0, 4).unwrap();
        assert_eq!(r.total, r.concentration_term + r.confidence_term);
        assert_eq!(r.penalty_term, 0.0);
        assert!(r.extra_log_term.is_none());
        assert_eq!(r.label, "bound");
    }

    #[test]
    fn compose_selects_rayleigh_form() {
        let mut cfg = bec_cfg(100, 10.0, 0.1, 2);
        cfg.channel = ChannelSpec::rayleigh_zf(2, 1.0).unwrap();
        cfg.lipschitz = 0.5;
        let r = compose_bound(&cfg, 0.1, 3.0, 2).unwrap();
        assert!((r.penalty_term - 0.5 * PI / 2.0).abs() < 1e-15);
        assert!(r.extra_log_term.is_none());

        cfg.channel = ChannelSpec::rayleigh_zf(8, 1.0).unwrap();
        let r = compose_bound(&cfg, 0.1, 3.0, 8).unwrap();
        let t = rayleigh_full_terms(8, 10.0, 0.5, 1.0).unwrap();
        assert_eq!(r.penalty_term, t.penalty);
        assert_eq!(r.extra_log_term, Some(t.log_term));
        assert_eq!(r.total, r.resum());
    }

    #[test]
    fn compose_rejects_bad_config() {
        let mut cfg = bec_cfg(100, 10.0, 0.1, 2);
        cfg.epsilon = 1.0;
        assert!(matches!(compose_bound(&cfg, 0.0, 0.0, 2), Err(Error::Config { .. })));
        let cfg = bec_cfg(100, 10.0, 0.1, 2);
        assert!(compose_bound(&cfg, 0.0, 0.0, 4).is_err());
        assert!(compose_bound(&cfg, -0.1, 0.0, 2).is_err());
    }

    #[test]
    fn mc_identity_and_deterministic_erasure() {
        let mut rng = Rng::named(1, STREAM_CHANNEL);
        let id = mc_omega(&ChannelSpec::identity(5), Metric::Frobenius, 100, &mut rng).unwrap();
        assert_eq!(id.estimate, 0.0);
        let all = mc_omega(&ChannelSpec::bec(9, 1.0).unwrap(), Metric::Frobenius, 100, &mut rng).unwrap();
        assert_eq!(all.estimate, 3.0);
        assert_eq!(all.stderr, 0.0);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        for g in [10f64.powf(-0.5), 0.5, 1.0, 4.0, 10.0] {
            let q = quad_omega_rayleigh(g).unwrap();
            assert!((q - PI / (2.0 * g.sqrt())).abs() < 1e-6, "gamma {g}: {q}");
            let h = quad_entropy_t(g).unwrap();
            let closed = (PI * 1f64.exp().powi(2) / g).ln();
            assert!((h - closed).abs() < 1e-6, "gamma {g}: {h} vs {closed}");
        }
        assert!((quad_entropy_t(1.0).unwrap() - 3.144_730).abs() < 1e-6);
        assert!((quad_omega_rayleigh(4.0).unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-6);
    }

    #[test]
    fn median_of_means_basics() {
        let v: Vec<f64> = (0..64).map(|i| (i % 2) as f64).collect();
        let (m, se) = median_of_means(&v, 32);
        assert_eq!(m, 0.5);
        assert_eq!(se, 0.0);
    }
}
