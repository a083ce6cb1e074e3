//! Central finite-difference checks of the analytic gradients.

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelSample, ChannelSpec};
use crate::error::Result;
use crate::nn::{backward, forward, Activation, Batch, DenseLayerSpec, NetworkSpec, ParamVector};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{khat, objective_at, objective_gradient, KhatGrad, KhatScope, TrainConfig, VariationalPosterior};

/// Tolerance for network gradients.
pub const NETWORK_TOLERANCE: f64 = 1e-4;
/// Tolerance for the variational objective gradient.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-3;
/// Magnitudes below this are compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub label: String,
    pub seed: u64,
    pub checked: usize,
    /// Coordinates left out because the difference crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Finite-difference step for weight `w`.
pub fn fd_step(w: f64) -> f64 {
    1e-5 * (1.0 + w.abs())
}

/// Signs of every ReLU pre-activation; a central difference is only valid
/// when both evaluation points share them.
fn relu_pattern(spec: &NetworkSpec, params: &ParamVector, batch: &Batch, channel: Option<&ChannelSample>) -> Result<Vec<bool>> {
    let (_, cache) = forward(spec, params, &batch.inputs, channel)?;
    let mut signs = Vec::new();
    for (l, layer) in spec.layers().iter().enumerate() {
        if layer.activation == Activation::Relu {
            signs.extend(cache.pre_activation(l).data().iter().map(|&z| z > 0.0));
        }
    }
    Ok(signs)
}

struct Problem {
    spec: NetworkSpec,
    params: ParamVector,
    batch: Batch,
    channel: Option<ChannelSample>,
}

fn random_problem(seed: u64) -> Result<Problem> {
    let mut rng = Rng::named(seed, "gradcheck");
    let depth = 2 + rng.below(2);
    let mut dims = vec![3 + rng.below(5)];
    for _ in 0..depth - 1 {
        dims.push(2 * (1 + rng.below(4)));
    }
    let classes = 2 + rng.below(3);
    dims.push(classes);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| DenseLayerSpec {
            in_dim: w[0],
            out_dim: w[1],
            activation: if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            },
        })
        .collect();
    let split = 1 + rng.below(depth + 1);
    let spec = NetworkSpec::new(layers, split)?;
    let params = ParamVector::init(&spec, 0.6, &mut rng);
    let rows = 3 + rng.below(4);
    let inputs: Vec<f64> = (0..rows * spec.input_dim()).map(|_| rng.normal()).collect();
    let labels = (0..rows).map(|_| rng.below(classes)).collect();
    let batch = Batch::new(Tensor::matrix(rows, spec.input_dim(), inputs)?, labels)?;
    let d = spec.split_dim();
    let channel = match seed % 3 {
        0 => None,
        1 => Some(channel::sample(&ChannelSpec::bec(d, 0.3)?, &mut rng)?),
        _ if d % 2 == 0 => Some(channel::sample(&ChannelSpec::rayleigh_zf(d, 2.0)?, &mut rng)?),
        _ => Some(channel::sample(&ChannelSpec::bec(d, 0.5)?, &mut rng)?),
    };
    Ok(Problem {
        spec,
        params,
        batch,
        channel,
    })
}

/// Backpropagation vs central differences on a seeded random network,
/// batch and channel realization.
pub fn check_network(seed: u64) -> Result<GradCheckReport> {
    let p = random_problem(seed)?;
    let (_, g) = backward(&p.spec, &p.params, &p.batch, p.channel.as_ref())?;
    let loss = |params: &ParamVector| -> Result<f64> { Ok(backward(&p.spec, params, &p.batch, p.channel.as_ref())?.0) };
    let pattern = |params: &ParamVector| relu_pattern(&p.spec, params, &p.batch, p.channel.as_ref());
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for i in 0..p.params.len() {
        let h = fd_step(p.params.values[i]);
        let mut plus = p.params.clone();
        let mut minus = p.params.clone();
        plus.values[i] += h;
        minus.values[i] -= h;
        if pattern(&plus)? != pattern(&minus)? {
            skipped += 1;
            continue;
        }
        let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
        worst = worst.max(relative_error(g.values[i], numeric));
    }
    Ok(GradCheckReport {
        label: format!(
            "network {:?} split {} channel {}",
            p.spec.layers().iter().map(|l| l.in_dim).chain([p.spec.classes()]).collect::<Vec<_>>(),
            p.spec.split_index(),
            p.channel.as_ref().map_or("none", ChannelSample::kind_name)
        ),
        seed,
        checked: p.params.len() - skipped,
        skipped,
        max_rel_error: worst,
        tolerance: NETWORK_TOLERANCE,
    })
}

/// Pathwise `(mu, rho)` gradient of the objective at fixed noise, with the
/// `K_hat` term held constant, vs central differences.
pub fn check_objective(seed: u64) -> Result<GradCheckReport> {
    let p = random_problem(seed)?;
    let mut rng = Rng::named(seed, "gradcheck-posterior");
    let q = VariationalPosterior::init(&p.spec, 0.6, 0.15, &mut rng)?;
    let eps = q.draw_noise(&mut rng);
    let cfg = TrainConfig {
        eta1: 0.5,
        khat_grad: KhatGrad::StopGradient,
        khat_scope: KhatScope::AllWeights,
        ..TrainConfig::default()
    };
    let channel = ChannelSpec::bec(p.spec.split_dim(), 0.2)?;
    let k = 4.0;
    let fixed = khat(&p.spec, &q.mu, p.batch.inputs.as_batch(), &p.batch.labels, cfg.khat_scope, None)?.value;
    let omega = crate::bound::channel_omega(&channel)?;
    let (_, g) = objective_gradient(&q, &eps, &p.spec, &p.batch, omega, &cfg, k, None)?;
    let j = |post: &VariationalPosterior| -> Result<f64> {
        Ok(objective_at(post, &eps, &p.spec, &p.batch, &channel, &cfg, k, Some(fixed))?.total)
    };
    let pattern = |post: &VariationalPosterior| relu_pattern(&p.spec, &post.weights_at(&eps), &p.batch, None);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for i in 0..q.len() {
        for on_rho in [false, true] {
            let mut plus = q.clone();
            let mut minus = q.clone();
            let (v, analytic) = if on_rho { (q.rho[i], g.rho[i]) } else { (q.mu.values[i], g.mu[i]) };
            let h = fd_step(v);
            if on_rho {
                plus.rho[i] += h;
                minus.rho[i] -= h;
            } else {
                plus.mu.values[i] += h;
                minus.mu.values[i] -= h;
            }
            if pattern(&plus)? != pattern(&minus)? {
                skipped += 1;
                continue;
            }
            let numeric = (j(&plus)? - j(&minus)?) / (2.0 * h);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(GradCheckReport {
        label: "variational objective (mu, rho)".into(),
        seed,
        checked: 2 * q.len() - skipped,
        skipped,
        max_rel_error: worst,
        tolerance: OBJECTIVE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_suite_passes() {
        for seed in 0..6 {
            let r = check_network(seed).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn objective_suite_passes() {
        for seed in 0..3 {
            let r = check_objective(seed).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn kink_crossings_are_skipped_not_failed() {
        let r = check_network(923_651_144_575_003_378).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.skipped >= 1 && r.skipped <= 8, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!(relative_error(1e-9, 0.0) < 1e-2);
    }
}
