//! Experiment configuration and the ERM-vs-channel-aware comparison table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bound::{compose_bound, fmt_num, BoundConfig, BoundReport, DEFAULT_EPSILON, DEFAULT_SIGMA};
use crate::channel::ChannelSpec;
use crate::data::{self, Dataset, MnistSplit};
use crate::edge::{empirical_risk, estimate_population_risk, EvalConfig, RiskEstimate};
use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::rng::{Rng, STREAM_CHANNEL, STREAM_SHUFFLE};
use crate::trainer::{khat, train, KhatGrad, KhatScope, Model, TrainConfig, TrainMode, TrainStats};

pub const CONFIG_VERSION: u32 = 1;

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// MNIST IDX files; `dir` falls back to `CHANNEL_PAC_DATA_DIR`, then `data/mnist`.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        train: usize,
        test: usize,
    },
    /// Seeded Gaussian blobs; test samples come from `seed + 1`.
    Blobs {
        train: usize,
        test: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    },
}

impl DatasetSource {
    pub fn mnist_dir(dir: Option<&Path>) -> PathBuf {
        dir.map(Path::to_path_buf)
            .or_else(data::data_dir_from_env)
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    /// `(train, test)` datasets.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Mnist { dir, train, test } => {
                let dir = Self::mnist_dir(dir.as_deref());
                if !dir.is_dir() {
                    return Err(Error::config(
                        "dataset.dir",
                        format!(
                            "{} does not exist; point {} at the MNIST IDX files",
                            dir.display(),
                            data::DATA_DIR_ENV
                        ),
                    ));
                }
                let tr = data::load_mnist(&dir, MnistSplit::Train)?;
                let te = data::load_mnist(&dir, MnistSplit::Test)?;
                Ok((tr.first(*train)?, te.first(*test)?))
            }
            DatasetSource::Blobs {
                train,
                test,
                dim,
                classes,
                spread,
                seed,
            } => Ok((
                data::make_blobs(*train, *dim, *classes, *spread, *seed)?,
                data::make_blobs(*test, *dim, *classes, *spread, seed.wrapping_add(1))?,
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    pub epsilon: f64,
    pub sigma: f64,
    /// `None` means `sqrt(n)`.
    pub k: Option<f64>,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            epsilon: DEFAULT_EPSILON,
            sigma: DEFAULT_SIGMA,
            k: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub network: NetworkSpec,
    pub dataset: DatasetSource,
    pub scenarios: Vec<ChannelSpec>,
    pub seeds: Vec<u64>,
    /// Channel-aware settings; the ERM baseline shares lr, epochs, batch size
    /// and initialization scale.
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bound: BoundSettings,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(CONFIG_VERSION) => {}
            Some(v) => return Err(Error::config("version", format!("unsupported version {v}"))),
            None => return Err(Error::config("version", "missing integer `version` field")),
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::config("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<config>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config("version", format!("unsupported version {}", self.version)));
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("scenarios", "at least one channel scenario is needed"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            self.network
                .check_channel(s)
                .map_err(|e| Error::config(format!("scenarios[{i}]"), e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is needed"));
        }
        self.train.validate()?;
        self.eval.validate()?;
        if let DatasetSource::Mnist { dir: Some(dir), .. } = &self.dataset {
            if !dir.is_dir() {
                return Err(Error::config("dataset.dir", format!("{} does not exist", dir.display())));
            }
        }
        let probe = BoundConfig {
            k: self.bound.k.unwrap_or(1.0),
            epsilon: self.bound.epsilon,
            sigma: self.bound.sigma,
            ..BoundConfig::with_defaults(1, 1.0, self.scenarios[0])
        };
        probe.validate().map_err(|e| Error::config("bound", e.to_string()))?;
        Ok(())
    }

    /// The MNIST comparison: 5000 training digits, FCN 784-256-32-10 with the
    /// channel after the 32-wide layer, four channel scenarios, three seeds.
    pub fn mnist_default() -> Self {
        let d = 32;
        ExperimentConfig {
            version: CONFIG_VERSION,
            network: NetworkSpec::mlp(&[784, 256, d, 10], 3).expect("valid network"),
            dataset: DatasetSource::Mnist {
                dir: None,
                train: 5000,
                test: 2000,
            },
            scenarios: vec![
                ChannelSpec::bec(d, 0.1).expect("valid"),
                ChannelSpec::bec(d, 0.8).expect("valid"),
                ChannelSpec::rayleigh_zf_db(d, 0.0).expect("valid"),
                ChannelSpec::rayleigh_zf_db(d, -5.0).expect("valid"),
            ],
            seeds: vec![1, 2, 3],
            // Differentiating K_hat * Omega at these Omega values drives the
            // network to a constant predictor; the penalty is kept in the
            // objective value and the bound but not in the update.
            train: TrainConfig {
                eta1: 0.01,
                lr: 0.05,
                epochs: 10,
                batch_size: 64,
                sigma_init: 0.05,
                khat_grad: KhatGrad::StopGradient,
                khat_scope: KhatScope::AllWeights,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            bound: BoundSettings::default(),
            output: OutputPaths::default(),
        }
    }

    /// Small blobs setup that runs in seconds; used by tests and examples.
    pub fn blobs_demo() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            network: NetworkSpec::mlp(&[8, 16, 8, 4], 3).expect("valid demo network"),
            dataset: DatasetSource::Blobs {
                train: 200,
                test: 200,
                dim: 8,
                classes: 4,
                spread: 1.0,
                seed: 17,
            },
            scenarios: vec![
                ChannelSpec::bec(8, 0.1).expect("valid"),
                ChannelSpec::bec(8, 0.8).expect("valid"),
                ChannelSpec::rayleigh_zf_db(8, 0.0).expect("valid"),
                ChannelSpec::rayleigh_zf_db(8, -5.0).expect("valid"),
            ],
            seeds: vec![1, 2, 3],
            train: TrainConfig {
                eta1: 0.01,
                lr: 0.05,
                epochs: 60,
                batch_size: 20,
                sigma_init: 0.02,
                khat_grad: KhatGrad::StopGradient,
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                channel_draws: 8,
                weight_draws: 4,
                empirical_weight_draws: 4,
                ..EvalConfig::default()
            },
            bound: BoundSettings::default(),
            output: OutputPaths::default(),
        }
    }
}

/// One (scenario, seed) cell of the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub seed: u64,
    pub erm_risk: f64,
    pub erm_stderr: f64,
    pub ours_risk: f64,
    pub ours_stderr: f64,
    pub bound: BoundReport,
    /// `K_hat` behind the bound's penalty term.
    pub khat: f64,
    /// `ours_risk - bound.empirical_risk`.
    pub delta: f64,
    pub bound_holds: bool,
}

impl TableRow {
    pub const CSV_COLUMNS: [&'static str; 15] = [
        "scenario",
        "seed",
        "erm_risk",
        "ours_risk",
        "bound",
        "empirical_risk",
        "khat_omega",
        "kl_over_k",
        "concentration",
        "confidence",
        "log_term",
        "erm_stderr",
        "ours_stderr",
        "delta",
        "bound_holds",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.seed.to_string(),
            fmt_num(self.erm_risk),
            fmt_num(self.ours_risk),
            fmt_num(self.bound.total),
            fmt_num(self.bound.empirical_risk),
            fmt_num(self.bound.penalty_term),
            fmt_num(self.bound.kl_term),
            fmt_num(self.bound.concentration_term),
            fmt_num(self.bound.confidence_term),
            fmt_num(self.bound.extra_log_term.unwrap_or(0.0)),
            fmt_num(self.erm_stderr),
            fmt_num(self.ours_stderr),
            fmt_num(self.delta),
            self.bound_holds.to_string(),
        ]
    }
}

/// Seed-averaged comparison for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub seeds: usize,
    pub erm_risk: f64,
    pub ours_risk: f64,
    /// `erm_risk - ours_risk`.
    pub improvement: f64,
    /// Standard error of `improvement` from the per-run standard errors.
    pub pooled_stderr: f64,
    /// Improvement above twice the pooled standard error.
    pub significant: bool,
}

/// Training record of one run, without wall-clock times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: Option<String>,
    pub seed: u64,
    pub mode: TrainMode,
    pub stats: TrainStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableOutput {
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub rows: Vec<TableRow>,
    pub summaries: Vec<ScenarioSummary>,
    pub runs: Vec<RunLog>,
}

impl TableOutput {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TableRow::CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.csv_record())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes the CSV and JSON files named in the config.
    pub fn write_files(&self) -> Result<()> {
        if let Some(p) = &self.config.output.csv {
            fs::write(p, self.csv_string()?)?;
        }
        if let Some(p) = &self.config.output.json {
            fs::write(p, self.json_string()?)?;
        }
        Ok(())
    }
}

/// Surrogate bound for a trained posterior: `K_hat` on the whole training set
/// at the posterior mean, `k = sqrt(n)` unless fixed.
pub fn surrogate_bound(
    spec: &NetworkSpec,
    model: &Model,
    train_set: &Dataset,
    channel: &ChannelSpec,
    cfg: &ExperimentConfig,
    empirical: f64,
) -> Result<(BoundReport, f64)> {
    let khat_value = khat(
        spec,
        model.mean(),
        train_set.features(),
        train_set.labels(),
        cfg.train.khat_scope,
        None,
    )?
    .value;
    let kl = match model {
        Model::Posterior(q) => q.kl(cfg.train.sigma_p)?,
        Model::Params(_) => 0.0,
    };
    let n = train_set.len();
    let bcfg = BoundConfig {
        n,
        k: cfg.bound.k.unwrap_or((n as f64).sqrt()),
        epsilon: cfg.bound.epsilon,
        sigma: cfg.bound.sigma,
        lipschitz: khat_value,
        surrogate: true,
        channel: *channel,
    };
    Ok((compose_bound(&bcfg, empirical, kl, channel.d)?, khat_value))
}

fn summarize(scenario: &str, rows: &[&TableRow]) -> ScenarioSummary {
    let m = rows.len() as f64;
    let erm = rows.iter().map(|r| r.erm_risk).sum::<f64>() / m;
    let ours = rows.iter().map(|r| r.ours_risk).sum::<f64>() / m;
    let var: f64 = rows
        .iter()
        .map(|r| r.erm_stderr.powi(2) + r.ours_stderr.powi(2))
        .sum::<f64>();
    let pooled = var.sqrt() / m;
    ScenarioSummary {
        scenario: scenario.to_string(),
        seeds: rows.len(),
        erm_risk: erm,
        ours_risk: ours,
        improvement: erm - ours,
        pooled_stderr: pooled,
        significant: erm - ours > 2.0 * pooled,
    }
}

/// Progress messages from [`run_table`].
pub trait Progress {
    fn message(&mut self, text: &str);
}

impl Progress for () {
    fn message(&mut self, _text: &str) {}
}

impl<F: FnMut(&str)> Progress for F {
    fn message(&mut self, text: &str) {
        self(text)
    }
}

/// Trains ERM once per seed and the channel-aware model per (scenario, seed),
/// then evaluates both under each scenario's channel.
///
/// Both models see the same channel realizations (same evaluation stream).
pub fn run_table(cfg: &ExperimentConfig, progress: &mut dyn Progress) -> Result<TableOutput> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.dataset.load()?;
    let spec = &cfg.network;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let erm_cfg = TrainConfig {
            mode: TrainMode::Erm,
            seed,
            ..cfg.train.clone()
        };
        let (erm, erm_stats) = train(spec, &train_set, &ChannelSpec::identity(spec.split_dim()), &erm_cfg)?;
        progress.message(&format!(
            "seed {seed}: ERM trained, final epoch risk {:.4}",
            erm_stats.epochs.last().map_or(f64::NAN, |e| e.empirical_risk)
        ));
        runs.push(RunLog {
            scenario: None,
            seed,
            mode: TrainMode::Erm,
            stats: erm_stats.without_timing(),
        });
        for (si, channel) in cfg.scenarios.iter().enumerate() {
            let label = channel.label();
            let ours_cfg = TrainConfig {
                mode: TrainMode::ChannelAware,
                seed,
                ..cfg.train.clone()
            };
            let (ours, ours_stats) = train(spec, &train_set, channel, &ours_cfg)?;
            runs.push(RunLog {
                scenario: Some(label.clone()),
                seed,
                mode: TrainMode::ChannelAware,
                stats: ours_stats.without_timing(),
            });
            let eval_rng = Rng::named(seed, STREAM_CHANNEL).fork(si as u64);
            let risk = |m: &Model| -> Result<RiskEstimate> {
                estimate_population_risk(
                    m,
                    spec,
                    &test_set,
                    channel,
                    cfg.eval.channel_draws,
                    cfg.eval.weight_draws,
                    cfg.eval.mode,
                    &eval_rng,
                )
            };
            let erm_risk = risk(&erm)?;
            let ours_risk = risk(&ours)?;
            let emp_rng = Rng::named(seed, STREAM_SHUFFLE).fork(si as u64);
            let emp = empirical_risk(&ours, spec, &train_set, cfg.eval.empirical_weight_draws, &emp_rng)?;
            let (bound, khat_value) = surrogate_bound(spec, &ours, &train_set, channel, cfg, emp)?;
            let delta = ours_risk.mean_01_loss - emp;
            let bound_holds = delta <= bound.gap_bound();
            progress.message(&format!(
                "seed {seed} {label}: ERM {:.4} ours {:.4} bound {:.4}{}",
                erm_risk.mean_01_loss,
                ours_risk.mean_01_loss,
                bound.total,
                if bound_holds { "" } else { " (bound violated)" }
            ));
            rows.push(TableRow {
                scenario: label,
                seed,
                erm_risk: erm_risk.mean_01_loss,
                erm_stderr: erm_risk.stderr,
                ours_risk: ours_risk.mean_01_loss,
                ours_stderr: ours_risk.stderr,
                bound,
                khat: khat_value,
                delta,
                bound_holds,
            });
        }
    }
    let summaries = cfg
        .scenarios
        .iter()
        .map(|s| {
            let label = s.label();
            let mine: Vec<&TableRow> = rows.iter().filter(|r| r.scenario == label).collect();
            summarize(&label, &mine)
        })
        .collect();
    Ok(TableOutput {
        config: cfg.clone(),
        n_train: train_set.len(),
        n_test: test_set.len(),
        rows,
        summaries,
        runs,
    })
}
