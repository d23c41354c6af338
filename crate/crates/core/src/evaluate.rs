//! Scoring of the network and the two baselines on a list of samples.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::dataset::{SequenceSample, FRAMES_PER_WINDOW};
use crate::error::{bail, Error, Result};
use crate::grid::{denormalize_crf, ClassMap, ClassScheme, GridFrame, GridSpec, NormStats, ProbMap};
use crate::metrics::ConfusionCounts;
use crate::nn::UNet;
use crate::optflow::{of_forecast, persistence_forecast, FlowConfig};
use crate::training::predict_samples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Baseline {
    Persistence,
    OpticalFlow,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Persistence => "persistence",
            Baseline::OpticalFlow => "optflow",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persistence" => Ok(Baseline::Persistence),
            "optflow" | "optical-flow" | "of" => Ok(Baseline::OpticalFlow),
            _ => bail!(Config, "unknown baseline {s:?} (expected persistence or optflow)"),
        }
    }
}

/// The input rainfall frames of `sample`, back in mm per accumulation window.
pub fn input_rain_frames(sample: &SequenceSample, stats: &NormStats) -> Result<Vec<GridFrame>> {
    let spec = GridSpec::pixels(sample.height, sample.width);
    (0..FRAMES_PER_WINDOW).map(|k| denormalize_crf(&sample.rain_frame(k, &spec), stats)).collect()
}

/// Baseline probability maps (0/1) for each sample.
pub fn baseline_predictions(
    baseline: Baseline,
    samples: &[Arc<SequenceSample>],
    stats: &NormStats,
    scheme: &ClassScheme,
    flow: &FlowConfig,
) -> Result<Vec<ProbMap>> {
    samples
        .iter()
        .map(|s| {
            let frames = input_rain_frames(s, stats)?;
            let forecast = match baseline {
                Baseline::Persistence => persistence_forecast(frames.last().unwrap(), scheme, s.lead_steps)?,
                Baseline::OpticalFlow => of_forecast(&frames, stats, flow, s.lead_steps, scheme)?,
            };
            Ok(forecast.probs)
        })
        .collect()
}

/// Network probability maps for each sample.
pub fn network_predictions(
    net: &UNet<f32>,
    samples: &[Arc<SequenceSample>],
    batch_size: usize,
) -> Result<Vec<ProbMap>> {
    if let Some(s) = samples.first() {
        if s.channels != net.config().in_channels {
            bail!(Shape, "network expects {} input channels but samples have {}", net.config().in_channels, s.channels);
        }
    }
    predict_samples(net, samples, batch_size)
}

/// Confusion counts of each prediction against its sample's target.
pub fn per_sample_counts(preds: &[ProbMap], samples: &[Arc<SequenceSample>]) -> Result<Vec<ConfusionCounts>> {
    if preds.len() != samples.len() {
        bail!(Shape, "{} predictions for {} samples", preds.len(), samples.len());
    }
    preds
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            let mut c = ConfusionCounts::new(s.target.n_classes());
            c.accumulate(p, &s.target)?;
            Ok(c)
        })
        .collect()
}

/// Per-pixel outcome of a thresholded prediction for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
    FalseAlarm,
    CorrectNegative,
    Masked,
}

/// Hit/miss/false-alarm map of `pred` against `target` for `class`.
pub fn outcome_map(pred: &ProbMap, target: &ClassMap, class: usize) -> Vec<Outcome> {
    let p = pred.channel(class);
    let t = target.channel(class);
    p.iter()
        .zip(t)
        .zip(target.valid())
        .map(|((&p, &t), &ok)| match (ok, p >= 0.5, t != 0) {
            (false, _, _) => Outcome::Masked,
            (true, true, true) => Outcome::Hit,
            (true, false, true) => Outcome::Miss,
            (true, true, false) => Outcome::FalseAlarm,
            (true, false, false) => Outcome::CorrectNegative,
        })
        .collect()
}
