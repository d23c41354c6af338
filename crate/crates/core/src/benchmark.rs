//! Seeded synthetic advection benchmark: two networks (with and without
//! wind) against persistence and optical flow on the same test windows.

use std::sync::Arc;

use crate::config::KeyValues;
use crate::dataset::{
    prepare_dataset, synth_generate, Dataset, DatasetOptions, SequenceSample, SplitPolicy, Stacks, SynthConfig,
    VelocitySpec, FRAMES_PER_WINDOW, STEP_SECONDS,
};
use crate::error::{bail, Result};
use crate::evaluate::{baseline_predictions, network_predictions, per_sample_counts, Baseline};
use crate::grid::ClassScheme;
use crate::metrics::{bootstrap_stats, score_rows, BootstrapStats, ConfusionCounts, Metric, ScoreRow};
use crate::nn::{UNet, UNetConfig};
use crate::optflow::FlowConfig;
use crate::training::{train, EpochRecord, TrainConfig, TrainOutcome};

pub const NN_WIND: &str = "nn_wind";
pub const NN_RAIN: &str = "nn_rain";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    /// Scene generator; `n_frames` and `t0` are derived from the calendar below.
    pub synth: SynthConfig,
    /// Hours of data before the first cut.
    pub train_hours: usize,
    /// Length of each alternating validation/test block after the cut.
    pub block_hours: usize,
    /// Number of blocks after the cut (half validation, half test).
    pub eval_blocks: usize,
    pub lead_steps: usize,
    pub eta: Option<f64>,
    pub base_width: usize,
    pub train: TrainConfig,
    pub flow: FlowConfig,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            synth: SynthConfig {
                velocity: VelocitySpec::Drifting { speed_min: 0.5, speed_max: 1.5, regime_frames: 8 },
                ..SynthConfig::default()
            },
            train_hours: 1500,
            block_hours: 24,
            eval_blocks: 8,
            lead_steps: 6,
            eta: None,
            base_width: 8,
            train: TrainConfig { epochs: 12, batch_size: 8, ..TrainConfig::default() },
            flow: FlowConfig::default(),
            n_boot: 100,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_hours == 0 || self.block_hours == 0 || self.eval_blocks < 2 {
            bail!(Config, "bench needs train_hours > 0, block_hours > 0 and at least two evaluation blocks");
        }
        if self.n_boot == 0 {
            bail!(Config, "bench.n_boot must be positive");
        }
        self.train.validate()?;
        self.flow.validate()
    }

    /// Frames generated: the whole calendar plus the lead of the last window.
    pub fn n_frames(&self) -> usize {
        (self.train_hours + self.block_hours * self.eval_blocks) * FRAMES_PER_WINDOW + self.lead_steps
    }

    pub fn policy(&self) -> SplitPolicy {
        SplitPolicy {
            training_end: self.synth.t0 + (self.train_hours * FRAMES_PER_WINDOW) as i64 * STEP_SECONDS,
            week_seconds: self.block_hours as i64 * 3600,
            gap_seconds: SplitPolicy::HOUR,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { n_frames: self.n_frames(), seed: self.seed, ..self.synth.clone() }
    }

    /// Reads `synth.*`, `dataset.*`, `train.*`, `of.*`, `model.base_width`,
    /// `eval.n_boot`, `bench.eval_blocks` and `seed`. `synth.n_frames`,
    /// `synth.seed` and `train.seed` are derived and ignored.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = BenchmarkConfig::default();
        let mut synth_kv = d.synth.to_kv();
        synth_kv.merge(kv);
        let seed = kv.get_or("seed", d.seed)?;
        let mut train = TrainConfig::from_kv(kv)?;
        train.seed = seed;
        let cfg = BenchmarkConfig {
            synth: SynthConfig::from_kv(&synth_kv)?,
            train_hours: kv.get_or("dataset.train_hours", d.train_hours)?,
            block_hours: kv.get_or("dataset.block_hours", d.block_hours)?,
            eval_blocks: kv.get_or("bench.eval_blocks", d.eval_blocks)?,
            lead_steps: lead_steps_from_minutes(kv.get_or("dataset.lead_minutes", d.lead_minutes())?)?,
            eta: parse_eta(kv.get_str("dataset.eta"), d.eta)?,
            base_width: kv.get_or("model.base_width", d.base_width)?,
            train,
            flow: FlowConfig::from_kv(kv)?,
            n_boot: kv.get_or("eval.n_boot", d.n_boot)?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.synth.to_kv();
        kv.set("synth.n_frames", self.n_frames());
        kv.remove("synth.seed");
        kv.merge(&self.train.to_kv());
        kv.remove("train.seed");
        kv.merge(&self.flow.to_kv());
        kv.set("dataset.train_hours", self.train_hours);
        kv.set("dataset.block_hours", self.block_hours);
        kv.set("bench.eval_blocks", self.eval_blocks);
        kv.set("dataset.lead_minutes", self.lead_minutes());
        kv.set("dataset.eta", render_eta(self.eta));
        kv.set("model.base_width", self.base_width);
        kv.set("eval.n_boot", self.n_boot);
        kv.set("seed", self.seed);
        kv
    }

    pub fn lead_minutes(&self) -> u32 {
        (self.lead_steps as i64 * STEP_SECONDS / 60) as u32
    }
}

/// Lead time in 5-minute steps; the minutes must be a positive multiple
/// of the step.
pub fn lead_steps_from_minutes(minutes: u32) -> Result<usize> {
    let step = (STEP_SECONDS / 60) as u32;
    if minutes == 0 || !minutes.is_multiple_of(step) {
        bail!(Config, "lead time must be a positive multiple of {step} minutes, got {minutes}");
    }
    Ok((minutes / step) as usize)
}

/// `natural` keeps the natural positive proportion; anything else must be
/// a number in [0, 1].
pub fn parse_eta(text: Option<&str>, default: Option<f64>) -> Result<Option<f64>> {
    match text {
        None => Ok(default),
        Some("natural") => Ok(None),
        Some(t) => match t.parse::<f64>() {
            Ok(eta) if (0.0..=1.0).contains(&eta) => Ok(Some(eta)),
            _ => bail!(Config, "eta must be `natural` or a number in [0, 1], got {t:?}"),
        },
    }
}

pub fn render_eta(eta: Option<f64>) -> String {
    eta.map_or_else(|| "natural".to_string(), |e| e.to_string())
}

/// Scores of one model on the test windows.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub name: String,
    pub per_sample: Vec<ConfusionCounts>,
    pub stats: BootstrapStats,
}

impl ModelScores {
    pub fn new(name: &str, per_sample: Vec<ConfusionCounts>, n_boot: usize, seed: u64) -> Result<Self> {
        let stats = bootstrap_stats(&per_sample, n_boot, seed)?;
        Ok(ModelScores { name: name.to_string(), per_sample, stats })
    }

    /// Bootstrap mean of `metric` for 0-based `class`.
    pub fn mean(&self, class: usize, metric: Metric) -> Option<f64> {
        self.stats.get(class, metric).map(|s| s.mean)
    }

    pub fn pooled(&self) -> ConfusionCounts {
        let m = self.per_sample.first().map_or(0, |c| c.n_classes());
        ConfusionCounts::pooled(m, &self.per_sample).expect("per-sample counts share a class count")
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub lead_minutes: u32,
    pub n_test: usize,
    pub models: Vec<ModelScores>,
    pub histories: Vec<(String, Vec<EpochRecord>)>,
}

impl BenchmarkReport {
    pub fn model(&self, name: &str) -> Option<&ModelScores> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn rows(&self) -> Vec<ScoreRow> {
        self.models.iter().flat_map(|m| score_rows(&m.name, self.lead_minutes, &m.stats)).collect()
    }
}

/// Builds the dataset for one input configuration.
pub fn benchmark_dataset(cfg: &BenchmarkConfig, stacks: &Stacks, use_wind: bool) -> Result<Dataset> {
    let opts = DatasetOptions {
        lead_steps: cfg.lead_steps,
        use_wind,
        eta: cfg.eta,
        seed: cfg.seed,
        policy: cfg.policy(),
        scheme: ClassScheme::default(),
    };
    prepare_dataset(stacks, &opts)
}

/// Trains a fresh network on `ds`.
pub fn train_network(ds: &Dataset, base_width: usize, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let net_cfg = UNetConfig {
        in_channels: ds.channels(),
        n_classes: ds.scheme.n_classes(),
        base_width,
        ..UNetConfig::default()
    };
    let net = UNet::<f32>::new(net_cfg, seed)?;
    train(net, &ds.split(), cfg)
}

/// Scores a network on `test`.
pub fn score_network(
    name: &str,
    net: &UNet<f32>,
    test: &[Arc<SequenceSample>],
    batch_size: usize,
    n_boot: usize,
    seed: u64,
) -> Result<ModelScores> {
    let preds = network_predictions(net, test, batch_size)?;
    ModelScores::new(name, per_sample_counts(&preds, test)?, n_boot, seed)
}

/// Scores a baseline on the test windows of `ds`.
pub fn score_baseline(
    baseline: Baseline,
    ds: &Dataset,
    flow: &FlowConfig,
    n_boot: usize,
    seed: u64,
) -> Result<ModelScores> {
    let test = ds.split().test;
    let preds = baseline_predictions(baseline, &test, &ds.stats, &ds.scheme, flow)?;
    ModelScores::new(baseline.as_str(), per_sample_counts(&preds, &test)?, n_boot, seed)
}

/// Runs the full benchmark. Both datasets are cut from the same scenes and
/// share their windows, so every model is scored on identical targets.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let stacks = synth_generate(&cfg.synth_config())?;
    let wind = benchmark_dataset(cfg, &stacks, true)?;
    let rain = benchmark_dataset(cfg, &stacks, false)?;
    let test = wind.split().test;
    if test.is_empty() {
        bail!(Empty, "benchmark calendar produced no test windows");
    }
    let t_wind: Vec<i64> = test.iter().map(|s| s.t_last).collect();
    let t_rain: Vec<i64> = rain.split().test.iter().map(|s| s.t_last).collect();
    if t_wind != t_rain {
        bail!(Contract, "wind and rain-only test windows differ");
    }

    let mut models = Vec::new();
    let mut histories = Vec::new();
    for (name, ds) in [(NN_WIND, &wind), (NN_RAIN, &rain)] {
        log::info!("training {name} on {} sequences", ds.split().train.len());
        let outcome = train_network(ds, cfg.base_width, &cfg.train, cfg.seed)?;
        models.push(score_network(name, &outcome.best, &ds.split().test, cfg.train.batch_size, cfg.n_boot, cfg.seed)?);
        histories.push((name.to_string(), outcome.history));
    }
    for b in [Baseline::Persistence, Baseline::OpticalFlow] {
        models.push(score_baseline(b, &wind, &cfg.flow, cfg.n_boot, cfg.seed)?);
    }
    Ok(BenchmarkReport { lead_minutes: cfg.lead_minutes(), n_test: test.len(), models, histories })
}
