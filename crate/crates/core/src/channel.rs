//! Stochastic weights of the channel layer.
//!
//! The link between transmitter and receiver is an affine layer
//! `f -> M' f + B'` whose weights are random:
//!
//! * identity (training phase): `M' = I`, `B' = 0`;
//! * binary erasure: `M' = diag(U)` with `U_i ~ Bernoulli(1 - p_o)`, `B' = 0`;
//! * Rayleigh fading with zero-forcing: `M' = I`, `B' = H^{-1} N / sqrt(P)`
//!   built block-wise from `d/2` complex sub-channels.
//!
//! Transmit power is fixed at `P = 1` and the noise variance at
//! `sigma_0^2 = 1 / gamma`; only the ratio enters any formula.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Below this magnitude a fading gain is redrawn.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    Identity,
    Bec { p_o: f64 },
    RayleighZf { gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    #[serde(flatten)]
    pub kind: ChannelKind,
    pub d: usize,
}

impl ChannelSpec {
    pub fn identity(d: usize) -> Self {
        ChannelSpec {
            kind: ChannelKind::Identity,
            d,
        }
    }

    pub fn bec(d: usize, p_o: f64) -> Result<Self> {
        let spec = ChannelSpec {
            kind: ChannelKind::Bec { p_o },
            d,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rayleigh_zf(d: usize, gamma: f64) -> Result<Self> {
        let spec = ChannelSpec {
            kind: ChannelKind::RayleighZf { gamma },
            d,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rayleigh channel at an average SNR given in dB.
    pub fn rayleigh_zf_db(d: usize, snr_db: f64) -> Result<Self> {
        ChannelSpec::rayleigh_zf(d, db_to_linear(snr_db))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("channel dimension d must be positive"));
        }
        match self.kind {
            ChannelKind::Identity => Ok(()),
            ChannelKind::Bec { p_o } => {
                if (0.0..=1.0).contains(&p_o) {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "outage probability {p_o} outside [0, 1]"
                    )))
                }
            }
            ChannelKind::RayleighZf { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::invalid(format!("SNR gamma = {gamma} must be positive")));
                }
                if self.d % 2 != 0 {
                    return Err(Error::invalid(format!(
                        "Rayleigh channel needs an even feature dimension, got d = {}",
                        self.d
                    )));
                }
                Ok(())
            }
        }
    }

    /// Short human-readable scenario name, e.g. `BEC(p_o=0.1)`.
    pub fn label(&self) -> String {
        match self.kind {
            ChannelKind::Identity => "Identity".to_string(),
            ChannelKind::Bec { p_o } => format!("BEC(p_o={p_o})"),
            ChannelKind::RayleighZf { gamma } => {
                format!("Rayleigh({} dB)", format_db(linear_to_db(gamma)))
            }
        }
    }

    pub fn with_dim(self, d: usize) -> Self {
        ChannelSpec { d, ..self }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(gamma: f64) -> f64 {
    10.0 * gamma.log10()
}

fn format_db(db: f64) -> String {
    let rounded = (db * 1000.0).round() / 1000.0;
    if rounded == 0.0 {
        "0".to_string()
    } else {
        format!("{rounded}")
    }
}

/// One realization of the channel-layer weights `(M', B')`.
///
/// `M'` is always diagonal, so only its diagonal (the erasure mask) is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChannelSample {
    Identity { d: usize },
    Bec { mask: Vec<f64> },
    RayleighZf { bias: Vec<f64> },
}

impl ChannelSample {
    pub fn identity(d: usize) -> Self {
        ChannelSample::Identity { d }
    }

    pub fn dim(&self) -> usize {
        match self {
            ChannelSample::Identity { d } => *d,
            ChannelSample::Bec { mask } => mask.len(),
            ChannelSample::RayleighZf { bias } => bias.len(),
        }
    }

    /// Diagonal of `M'`, absent when `M' = I`.
    pub fn mask(&self) -> Option<&[f64]> {
        match self {
            ChannelSample::Bec { mask } => Some(mask),
            _ => None,
        }
    }

    /// `B'`, absent when it is identically zero.
    pub fn bias(&self) -> Option<&[f64]> {
        match self {
            ChannelSample::RayleighZf { bias } => Some(bias),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ChannelSample::Identity { .. } => "identity",
            ChannelSample::Bec { .. } => "BEC",
            ChannelSample::RayleighZf { .. } => "Rayleigh",
        }
    }

    /// Applies the channel to one feature vector in place.
    pub fn apply_in_place(&self, feature: &mut [f64]) -> Result<()> {
        self.check_dim(feature.len())?;
        match self {
            ChannelSample::Identity { .. } => {}
            ChannelSample::Bec { mask } => {
                for (f, m) in feature.iter_mut().zip(mask) {
                    *f *= m;
                }
            }
            ChannelSample::RayleighZf { bias } => {
                // Transmit f / s at unit power, receive f / s + b, descale by s.
                let s = symbol_rms(feature);
                for (f, b) in feature.iter_mut().zip(bias) {
                    *f += s * b;
                }
            }
        }
        Ok(())
    }

    /// Backpropagates `grad` (w.r.t. the channel output) to the channel input `feature`.
    pub(crate) fn backprop_in_place(&self, feature: &[f64], grad: &mut [f64]) {
        match self {
            ChannelSample::Identity { .. } => {}
            ChannelSample::Bec { mask } => {
                for (g, m) in grad.iter_mut().zip(mask) {
                    *g *= m;
                }
            }
            ChannelSample::RayleighZf { bias } => {
                // out = f + s(f) b, ds/df_i = 2 f_i / (d s)
                let s = symbol_rms(feature);
                if s > 0.0 {
                    let gb: f64 = grad.iter().zip(bias).map(|(g, b)| g * b).sum();
                    let scale = 2.0 * gb / (feature.len() as f64 * s);
                    for (g, f) in grad.iter_mut().zip(feature) {
                        *g += scale * f;
                    }
                }
            }
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape(format!(
                "channel of dimension {} applied to a feature of length {len}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Root of the mean complex-symbol power, pairing entries `(2i, 2i+1)`.
pub(crate) fn symbol_rms(feature: &[f64]) -> f64 {
    if feature.is_empty() {
        return 0.0;
    }
    let energy: f64 = feature.iter().map(|v| v * v).sum();
    (2.0 * energy / feature.len() as f64).sqrt()
}

/// Draws one realization of the channel weights.
pub fn sample(spec: &ChannelSpec, rng: &mut Rng) -> Result<ChannelSample> {
    spec.validate()?;
    Ok(sample_unchecked(spec, rng))
}

pub(crate) fn sample_unchecked(spec: &ChannelSpec, rng: &mut Rng) -> ChannelSample {
    match spec.kind {
        ChannelKind::Identity => ChannelSample::Identity { d: spec.d },
        ChannelKind::Bec { p_o } => {
            let mask = (0..spec.d)
                .map(|_| if rng.uniform() < p_o { 0.0 } else { 1.0 })
                .collect();
            ChannelSample::Bec { mask }
        }
        ChannelKind::RayleighZf { gamma } => {
            let noise_std = (0.5 / gamma).sqrt();
            let gain_std = 0.5f64.sqrt();
            let mut bias = Vec::with_capacity(spec.d);
            for _ in 0..spec.d / 2 {
                let (hr, hi) = loop {
                    let hr = gain_std * rng.normal();
                    let hi = gain_std * rng.normal();
                    if hr.hypot(hi) >= MIN_GAIN {
                        break (hr, hi);
                    }
                };
                let nr = noise_std * rng.normal();
                let ni = noise_std * rng.normal();
                let (tr, ti) = complex_div((nr, ni), (hr, hi));
                bias.push(tr);
                bias.push(ti);
            }
            ChannelSample::RayleighZf { bias }
        }
    }
}

/// `n / h` through the real 2x2 block of `h`: `[[hr, -hi], [hi, hr]]^{-1} (nr, ni)`.
fn complex_div(n: (f64, f64), h: (f64, f64)) -> (f64, f64) {
    let norm2 = h.0 * h.0 + h.1 * h.1;
    (
        (h.0 * n.0 + h.1 * n.1) / norm2,
        (h.0 * n.1 - h.1 * n.0) / norm2,
    )
}

/// Applies a channel sample to a single feature vector.
pub fn apply(sample: &ChannelSample, feature: &Tensor) -> Result<Tensor> {
    let mut out = feature.clone();
    sample.apply_in_place(out.data_mut())?;
    Ok(out)
}

/// Distance between the channel weights `(M', B')` and the noiseless `(I, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `||M' - I||_F`
    Frobenius,
    /// `||M' - I||_op + ||B'||_2`
    OperatorPlusL2,
    /// Sum of the `l2` norms of the 2-blocks of `B'`.
    SubChannel,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Frobenius => "frobenius",
            Metric::OperatorPlusL2 => "operator+l2",
            Metric::SubChannel => "sub-channel",
        }
    }

    /// The metric the penalty formulas use for a channel kind.
    pub fn natural_for(kind: &ChannelKind) -> Metric {
        match kind {
            ChannelKind::Identity | ChannelKind::Bec { .. } => Metric::Frobenius,
            ChannelKind::RayleighZf { .. } => Metric::SubChannel,
        }
    }
}

pub fn distance(sample: &ChannelSample, metric: Metric) -> Result<f64> {
    match (sample, metric) {
        (ChannelSample::Identity { .. }, _) => Ok(0.0),
        (ChannelSample::Bec { mask }, Metric::Frobenius) => {
            let erased = mask.iter().filter(|&&m| m == 0.0).count();
            Ok((erased as f64).sqrt())
        }
        (ChannelSample::RayleighZf { bias }, Metric::OperatorPlusL2) => {
            Ok(bias.iter().map(|b| b * b).sum::<f64>().sqrt())
        }
        (ChannelSample::RayleighZf { bias }, Metric::SubChannel) => Ok(bias
            .chunks_exact(2)
            .map(|c| c[0].hypot(c[1]))
            .sum()),
        (s, m) => Err(Error::IncompatibleMetric {
            metric: m.name(),
            kind: s.kind_name(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::STREAM_CHANNEL;

    fn rng() -> Rng {
        Rng::named(42, STREAM_CHANNEL)
    }

    #[test]
    fn identity_sample_has_no_weights() {
        let s = sample(&ChannelSpec::identity(4), &mut rng()).unwrap();
        assert!(s.mask().is_none());
        assert!(s.bias().is_none());
        let f = Tensor::vector(vec![0.1, -2.0, 3.5, 1e300]);
        assert_eq!(apply(&s, &f).unwrap(), f);
    }

    #[test]
    fn bec_degenerate_probabilities() {
        let mut r = rng();
        let all_on = sample(&ChannelSpec::bec(8, 0.0).unwrap(), &mut r).unwrap();
        assert_eq!(all_on.mask().unwrap(), &[1.0; 8]);
        let all_off = sample(&ChannelSpec::bec(8, 1.0).unwrap(), &mut r).unwrap();
        assert_eq!(all_off.mask().unwrap(), &[0.0; 8]);
        assert!(all_off.bias().is_none());
    }

    #[test]
    fn bec_mask_mean_matches_keep_probability() {
        let spec = ChannelSpec::bec(16, 0.3).unwrap();
        let mut r = rng();
        let draws = 100_000;
        let mut kept = 0.0;
        for _ in 0..draws {
            let s = sample(&spec, &mut r).unwrap();
            kept += s.mask().unwrap().iter().sum::<f64>();
        }
        let mean = kept / (draws * 16) as f64;
        assert!((mean - 0.7).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn bec_apply_masks() {
        let s = ChannelSample::Bec {
            mask: vec![1.0, 0.0, 1.0],
        };
        let out = apply(&s, &Tensor::vector(vec![2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[2.0, 0.0, 4.0]);
    }

    #[test]
    fn rayleigh_zero_bias_is_identity() {
        let s = ChannelSample::RayleighZf { bias: vec![0.0; 4] };
        let f = Tensor::vector(vec![0.3, -1.7, 2.2, 0.0]);
        assert_eq!(apply(&s, &f).unwrap(), f);
    }

    #[test]
    fn rayleigh_unit_power_adds_bias() {
        // symbols (1, 0) and (0, -1) both have unit power
        let f = Tensor::vector(vec![1.0, 0.0, 0.0, -1.0]);
        let b = vec![0.25, -0.5, 1.5, 2.0];
        let s = ChannelSample::RayleighZf { bias: b.clone() };
        let out = apply(&s, &f).unwrap();
        let expected: Vec<f64> = f.data().iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(out.data(), expected.as_slice());
    }

    #[test]
    fn rayleigh_sample_shape_and_finiteness() {
        let spec = ChannelSpec::rayleigh_zf(6, 1.0).unwrap();
        let s = sample(&spec, &mut rng()).unwrap();
        assert!(s.mask().is_none());
        let b = s.bias().unwrap();
        assert_eq!(b.len(), 6);
        assert!(b.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn complex_division_matches_definition() {
        let (tr, ti) = complex_div((1.0, 2.0), (3.0, -1.0));
        // (1 + 2i) / (3 - i) = (1 + 2i)(3 + i) / 10 = (1 + 7i) / 10
        assert!((tr - 0.1).abs() < 1e-15);
        assert!((ti - 0.7).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = ChannelSample::Bec {
            mask: vec![1.0, 0.0],
        };
        assert!(matches!(
            apply(&s, &Tensor::vector(vec![1.0, 2.0, 3.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn distances() {
        let bec = ChannelSample::Bec {
            mask: vec![1.0, 0.0, 1.0, 0.0],
        };
        assert!((distance(&bec, Metric::Frobenius).unwrap() - 2f64.sqrt()).abs() < 1e-15);

        let scalar = ChannelSample::RayleighZf {
            bias: vec![3.0, 4.0],
        };
        assert_eq!(distance(&scalar, Metric::OperatorPlusL2).unwrap(), 5.0);

        let blocks = ChannelSample::RayleighZf {
            bias: vec![1.0, 0.0, 0.0, 2.0],
        };
        assert_eq!(distance(&blocks, Metric::SubChannel).unwrap(), 3.0);

        assert!(matches!(
            distance(&bec, Metric::SubChannel),
            Err(Error::IncompatibleMetric { .. })
        ));
        assert!(matches!(
            distance(&scalar, Metric::Frobenius),
            Err(Error::IncompatibleMetric { .. })
        ));
        assert_eq!(
            distance(&ChannelSample::identity(3), Metric::SubChannel).unwrap(),
            0.0
        );
    }

    #[test]
    fn spec_validation() {
        assert!(ChannelSpec::bec(4, 1.5).is_err());
        assert!(ChannelSpec::bec(4, -0.1).is_err());
        assert!(ChannelSpec::rayleigh_zf(3, 1.0).is_err());
        assert!(ChannelSpec::rayleigh_zf(4, 0.0).is_err());
        assert!(ChannelSpec::rayleigh_zf(4, -1.0).is_err());
        assert!((ChannelSpec::rayleigh_zf_db(2, -5.0).unwrap().kind
            == ChannelKind::RayleighZf {
                gamma: 10f64.powf(-0.5)
            }));
    }

    #[test]
    fn labels() {
        assert_eq!(ChannelSpec::bec(4, 0.1).unwrap().label(), "BEC(p_o=0.1)");
        assert_eq!(
            ChannelSpec::rayleigh_zf_db(4, -5.0).unwrap().label(),
            "Rayleigh(-5 dB)"
        );
        assert_eq!(
            ChannelSpec::rayleigh_zf_db(4, 0.0).unwrap().label(),
            "Rayleigh(0 dB)"
        );
    }

    #[test]
    fn rayleigh_backprop_matches_finite_difference() {
        let s = ChannelSample::RayleighZf {
            bias: vec![0.3, -0.7, 1.1, 0.4],
        };
        let f = [0.5, -1.2, 0.8, 2.0];
        let w = [0.9, -0.4, 0.2, 1.3];
        let objective = |x: &[f64]| {
            let mut y = x.to_vec();
            s.apply_in_place(&mut y).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grad = w.to_vec();
        s.backprop_in_place(&f, &mut grad);
        for i in 0..4 {
            let h = 1e-6;
            let mut up = f;
            let mut dn = f;
            up[i] += h;
            dn[i] -= h;
            let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "{i}: {fd} vs {}", grad[i]);
        }
    }
}
