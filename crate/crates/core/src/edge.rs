//! Split-inference simulation: risk of a model deployed across a channel.
//!
//! Features leave the device at the split, cross the channel and are finished
//! by the server-side layers. The device-side prefix is computed once per
//! weight draw; only the channel and the suffix are re-run per channel draw.

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelKind, ChannelSample, ChannelSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward_op, forward_prefix, forward_suffix, loss_01, NetworkSpec, ParamVector, SplitOp};
use crate::rng::{stream_id, Rng};
use crate::trainer::Model;

pub const DEFAULT_CHANNEL_DRAWS: usize = 32;
pub const DEFAULT_WEIGHT_DRAWS: usize = 8;

/// How channel realizations are shared between test inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// A fresh realization for every (input, draw) pair.
    #[default]
    PerInput,
    /// One realization per draw, shared by the whole test set.
    SessionStatic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub channel_draws: usize,
    pub weight_draws: usize,
    /// Weight draws used for the channel-free empirical risk of a posterior.
    pub empirical_weight_draws: usize,
    pub mode: ChannelMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            channel_draws: DEFAULT_CHANNEL_DRAWS,
            weight_draws: DEFAULT_WEIGHT_DRAWS,
            empirical_weight_draws: DEFAULT_WEIGHT_DRAWS,
            mode: ChannelMode::PerInput,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, path) in [
            (self.channel_draws, "eval.channel_draws"),
            (self.weight_draws, "eval.weight_draws"),
            (self.empirical_weight_draws, "eval.empirical_weight_draws"),
        ] {
            if v == 0 {
                return Err(Error::config(path, "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of the 0-1 risk under a channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean_01_loss: f64,
    /// Standard error from the per-(weight draw, channel draw) batch means.
    pub stderr: f64,
    pub n_data: usize,
    pub n_channel_draws: usize,
    pub n_weight_draws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub population_risk: RiskEstimate,
    /// Channel-free 0-1 risk on the training set.
    pub empirical_risk: f64,
    /// `population_risk.mean_01_loss - empirical_risk`.
    pub delta: f64,
}

fn check_data(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.dim() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, network expects {}",
            data.dim(),
            spec.input_dim()
        )));
    }
    Ok(())
}

fn errors_in(logits: &ndarray::Array2<f64>, labels: &[usize]) -> Result<usize> {
    let mut wrong = 0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        wrong += usize::from(loss_01(row.as_slice().expect("standard layout"), y)?);
    }
    Ok(wrong)
}

/// Weight stream for a model; deterministic models never consume it.
fn weight_stream(rng: &Rng) -> Rng {
    Rng::new(rng.seed(), rng.stream() ^ stream_id("weight-draws"))
}

/// Expected 0-1 risk of `model` on `test` with the channel at the split.
///
/// Input `i` draws its channel realizations from `rng.fork(i)` in
/// (weight draw, channel draw) order, so results do not depend on batching.
#[allow(clippy::too_many_arguments)]
pub fn estimate_population_risk(
    model: &Model,
    spec: &NetworkSpec,
    test: &Dataset,
    channel_spec: &ChannelSpec,
    n_channel_draws: usize,
    n_weight_draws: usize,
    mode: ChannelMode,
    rng: &Rng,
) -> Result<RiskEstimate> {
    if n_channel_draws == 0 || n_weight_draws == 0 {
        return Err(Error::invalid("draw counts must be at least 1"));
    }
    check_data(spec, test)?;
    spec.check_channel(channel_spec)?;
    let weight_draws = if model.is_stochastic() { n_weight_draws } else { 1 };
    let identity = matches!(channel_spec.kind, ChannelKind::Identity);
    let channel_draws = if identity { 1 } else { n_channel_draws };

    let n = test.len();
    let mut input_rngs: Vec<Rng> = (0..n as u64).map(|i| rng.fork(i)).collect();
    let mut session_rng = rng.fork(u64::MAX);
    let mut wrng = weight_stream(rng);
    let mut batch_means = Vec::with_capacity(weight_draws * channel_draws);
    let mut samples: Vec<ChannelSample> = Vec::with_capacity(n);
    for _ in 0..weight_draws {
        let params = model.draw(&mut wrng);
        let prefix = forward_prefix(spec, &params, test.features())?;
        for _ in 0..channel_draws {
            let logits = if identity {
                forward_suffix(spec, &params, prefix.clone(), SplitOp::None)?
            } else {
                match mode {
                    ChannelMode::PerInput => {
                        samples.clear();
                        for r in input_rngs.iter_mut() {
                            samples.push(channel::sample_unchecked(channel_spec, r));
                        }
                        forward_suffix(spec, &params, prefix.clone(), SplitOp::PerRow(&samples))?
                    }
                    ChannelMode::SessionStatic => {
                        let s = channel::sample_unchecked(channel_spec, &mut session_rng);
                        forward_suffix(spec, &params, prefix.clone(), SplitOp::Shared(&s))?
                    }
                }
            };
            batch_means.push(errors_in(&logits, test.labels())? as f64 / n as f64);
        }
    }
    let (mean, stderr) = crate::bound::mean_and_stderr(&batch_means);
    Ok(RiskEstimate {
        mean_01_loss: mean,
        stderr,
        n_data: n,
        n_channel_draws: channel_draws,
        n_weight_draws: weight_draws,
    })
}

/// Channel-free 0-1 risk, averaged over `weight_draws` posterior samples.
pub fn empirical_risk(model: &Model, spec: &NetworkSpec, data: &Dataset, weight_draws: usize, rng: &Rng) -> Result<f64> {
    if weight_draws == 0 {
        return Err(Error::invalid("weight draws must be at least 1"));
    }
    check_data(spec, data)?;
    let draws = if model.is_stochastic() { weight_draws } else { 1 };
    let mut wrng = weight_stream(rng);
    let mut wrong = 0usize;
    for _ in 0..draws {
        let params = model.draw(&mut wrng);
        let (logits, _) = forward_op(spec, &params, data.features(), SplitOp::None, false)?;
        wrong += errors_in(&logits, data.labels())?;
    }
    Ok(wrong as f64 / (draws * data.len()) as f64)
}

/// Plain test error of fixed weights, no channel.
pub fn test_error(spec: &NetworkSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    empirical_risk(&Model::Params(params.clone()), spec, data, 1, &Rng::new(0, 0))
}

/// Channel-deployed population risk minus channel-free training risk.
pub fn estimate_gap(
    model: &Model,
    spec: &NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    channel_spec: &ChannelSpec,
    cfg: &EvalConfig,
    rng: &Rng,
) -> Result<GapEstimate> {
    cfg.validate()?;
    let population_risk = estimate_population_risk(
        model,
        spec,
        test,
        channel_spec,
        cfg.channel_draws,
        cfg.weight_draws,
        cfg.mode,
        rng,
    )?;
    let empirical = empirical_risk(model, spec, train, cfg.empirical_weight_draws, rng)?;
    Ok(GapEstimate {
        population_risk,
        empirical_risk: empirical,
        delta: population_risk.mean_01_loss - empirical,
    })
}
