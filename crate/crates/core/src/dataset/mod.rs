//! Sequence datasets: one-hour input windows of rainfall (and optionally
//! wind) paired with thresholded targets, split by alternating weeks and
//! rebalanced by duplicating heavy-rain sequences.

mod oversample;
mod split;
mod store;
mod synth;

pub use oversample::{oversample, positive_fraction};
pub use split::{split_weeks, DatasetSplit, SplitPart, SplitPolicy};
pub use store::{render_sample_manifest, Dataset};
pub use synth::{synth_generate, SynthConfig, VelocitySpec};

use std::sync::Arc;

use crate::error::{bail, Result};
use crate::grid::{
    bilinear_resample, normalize_crf, standardize_wind, temporal_interpolate, threshold_classes, ClassMap, ClassScheme,
    GridFrame, GridSpec, GridStack, NormStats, Variable,
};

/// Frames per input window (one hour at 5-minute cadence).
pub const FRAMES_PER_WINDOW: usize = 12;
/// Radar cadence in seconds.
pub const STEP_SECONDS: i64 = 300;

/// Time-aligned per-variable stacks on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Stacks {
    pub crf: GridStack,
    pub u: Option<GridStack>,
    pub v: Option<GridStack>,
}

impl Stacks {
    pub fn rain_only(crf: GridStack) -> Self {
        Stacks { crf, u: None, v: None }
    }

    pub fn has_wind(&self) -> bool {
        self.u.is_some() && self.v.is_some()
    }

    /// Brings wind stacks onto the rainfall grid and timestamps: spatial
    /// bilinear resampling first, then linear interpolation in time.
    pub fn align_wind(self) -> Result<Self> {
        let target_spec = *self.crf.spec();
        let target_times = self.crf.timestamps().to_vec();
        let align = |s: Option<GridStack>| -> Result<Option<GridStack>> {
            match s {
                None => Ok(None),
                Some(s) if s.spec() == &target_spec && s.timestamps() == target_times.as_slice() => Ok(Some(s)),
                Some(s) => align_stack(&s, &target_spec, &target_times).map(Some),
            }
        };
        let u = align(self.u)?;
        let v = align(self.v)?;
        Ok(Stacks { crf: self.crf, u, v })
    }
}

/// Resamples `stack` onto `spec`, then interpolates it in time onto
/// `timestamps`.
pub fn align_stack(stack: &GridStack, spec: &GridSpec, timestamps: &[i64]) -> Result<GridStack> {
    if stack.is_empty() {
        bail!(Ingestion, "cannot align an empty {} stack", stack.variable());
    }
    let spatial: Vec<GridFrame> = stack.frames().map(|f| bilinear_resample(&f, spec)).collect::<Result<_>>()?;
    let src_times = stack.timestamps();
    let mut out = Vec::with_capacity(timestamps.len());
    for &t in timestamps {
        let k = src_times.partition_point(|&s| s <= t);
        if k == 0 {
            bail!(Ingestion, "{} stack starts after t={t}", stack.variable());
        }
        let lo = k - 1;
        if src_times[lo] == t {
            out.push(spatial[lo].clone());
            continue;
        }
        if k == src_times.len() {
            bail!(Ingestion, "{} stack ends before t={t}", stack.variable());
        }
        out.push(temporal_interpolate(&spatial[lo], &spatial[k], t)?);
    }
    GridStack::from_frames(&out)
}

/// One model input window with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// `channels x height x width`: normalized rainfall frames, then
    /// standardized U frames, then standardized V frames.
    pub input: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub target: ClassMap,
    /// Timestamp of the last input frame.
    pub t_last: i64,
    pub lead_steps: usize,
}

impl SequenceSample {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.input[c * n..(c + 1) * n]
    }

    /// Normalized rainfall of the last input frame.
    pub fn last_rain(&self) -> &[f32] {
        self.channel(FRAMES_PER_WINDOW - 1)
    }

    pub fn has_wind(&self) -> bool {
        self.channels == 3 * FRAMES_PER_WINDOW
    }

    /// Target contains at least one pixel of the highest class.
    pub fn is_positive(&self) -> bool {
        self.target.contains_class(self.target.n_classes() - 1)
    }

    /// First input timestamp and target timestamp.
    pub fn time_span(&self) -> (i64, i64) {
        (
            self.t_last - (FRAMES_PER_WINDOW as i64 - 1) * STEP_SECONDS,
            self.t_last + self.lead_steps as i64 * STEP_SECONDS,
        )
    }

    /// Normalized rainfall channels rebuilt as frames on `spec`.
    pub fn rain_frame(&self, k: usize, spec: &GridSpec) -> GridFrame {
        let t = self.t_last - (FRAMES_PER_WINDOW - 1 - k) as i64 * STEP_SECONDS;
        GridFrame::from_parts(*spec, Variable::Crf, t, self.channel(k).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Missing data in the input window or the target.
    UndefinedData,
    /// No rain in the last input frame.
    ClearLastFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Accept,
    Reject(RejectReason),
}

/// Screens a sample: missing data anywhere, or a last rainfall frame with
/// every cell below the lowest class cutoff, sets it aside.
pub fn validate_sequence(sample: &SequenceSample, scheme: &ClassScheme, stats: &NormStats) -> Validation {
    if sample.input.iter().any(|v| v.is_nan()) || !sample.target.all_valid() {
        return Validation::Reject(RejectReason::UndefinedData);
    }
    let cutoff = scheme.cutoffs()[0];
    let normalized_cutoff = ((1.0 + cutoff).ln() / (1.0 + stats.max_crf).ln()).min(1.0);
    if sample.last_rain().iter().all(|&x| (x as f64) < normalized_cutoff) {
        return Validation::Reject(RejectReason::ClearLastFrame);
    }
    Validation::Accept
}

/// Start index, target index and last-frame time of each candidate window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub start: usize,
    pub target: usize,
    pub t_last: i64,
    pub lead_steps: usize,
}

impl Window {
    pub fn time_span(&self) -> (i64, i64) {
        (
            self.t_last - (FRAMES_PER_WINDOW as i64 - 1) * STEP_SECONDS,
            self.t_last + self.lead_steps as i64 * STEP_SECONDS,
        )
    }
}

fn check_stacks(stacks: &Stacks, use_wind: bool) -> Result<()> {
    let ts = stacks.crf.timestamps();
    if stacks.crf.variable() != Variable::Crf {
        bail!(Ingestion, "rainfall stack holds {}", stacks.crf.variable());
    }
    if let Some(w) = ts.windows(2).find(|w| w[1] - w[0] != STEP_SECONDS) {
        bail!(Ingestion, "rainfall frames {} and {} are not {STEP_SECONDS} s apart", w[0], w[1]);
    }
    if use_wind {
        for (name, var, s) in [("U", Variable::U, &stacks.u), ("V", Variable::V, &stacks.v)] {
            let Some(s) = s else {
                bail!(Ingestion, "{name} stack required when wind is used");
            };
            if s.variable() != var {
                bail!(Ingestion, "{name} stack holds {}", s.variable());
            }
            if s.timestamps() != ts {
                bail!(Ingestion, "{name} timestamps are not aligned with rainfall");
            }
            if s.spec() != stacks.crf.spec() {
                bail!(Ingestion, "{name} grid differs from the rainfall grid");
            }
        }
    }
    Ok(())
}

/// Non-overlapping hourly windows in stack order.
pub(crate) fn windows(stacks: &Stacks, lead_steps: usize, use_wind: bool) -> Result<Vec<Window>> {
    check_stacks(stacks, use_wind)?;
    let n_frames = stacks.crf.len();
    let count = n_frames.saturating_sub(lead_steps) / FRAMES_PER_WINDOW;
    let ts = stacks.crf.timestamps();
    Ok((0..count)
        .map(|k| {
            let start = k * FRAMES_PER_WINDOW;
            let last = start + FRAMES_PER_WINDOW - 1;
            Window { start, target: last + lead_steps, t_last: ts[last], lead_steps }
        })
        .collect())
}

/// Raw-data screening equivalent to [`validate_sequence`], used before
/// normalization statistics exist.
pub(crate) fn window_is_usable(stacks: &Stacks, w: &Window, scheme: &ClassScheme, use_wind: bool) -> bool {
    let frames = w.start..w.start + FRAMES_PER_WINDOW;
    let stacks_used: Vec<&GridStack> = if use_wind {
        vec![&stacks.crf, stacks.u.as_ref().unwrap(), stacks.v.as_ref().unwrap()]
    } else {
        vec![&stacks.crf]
    };
    for s in &stacks_used {
        if frames.clone().any(|k| s.frame_values(k).iter().any(|v| v.is_nan())) {
            return false;
        }
    }
    if stacks.crf.frame_values(w.target).iter().any(|v| v.is_nan()) {
        return false;
    }
    let cutoff = scheme.cutoffs()[0];
    stacks.crf.frame_values(w.start + FRAMES_PER_WINDOW - 1).iter().any(|&x| x as f64 >= cutoff)
}

pub(crate) fn build_window(
    stacks: &Stacks,
    w: &Window,
    scheme: &ClassScheme,
    stats: &NormStats,
    use_wind: bool,
) -> Result<SequenceSample> {
    let spec = stacks.crf.spec();
    let n = spec.len();
    let channels = if use_wind { 3 * FRAMES_PER_WINDOW } else { FRAMES_PER_WINDOW };
    let mut input = Vec::with_capacity(channels * n);
    for k in w.start..w.start + FRAMES_PER_WINDOW {
        input.extend(normalize_crf(&stacks.crf.frame(k), stats)?.into_values());
    }
    if use_wind {
        for s in [stacks.u.as_ref().unwrap(), stacks.v.as_ref().unwrap()] {
            for k in w.start..w.start + FRAMES_PER_WINDOW {
                input.extend(standardize_wind(&s.frame(k), stats)?.into_values());
            }
        }
    }
    let target = threshold_classes(&stacks.crf.frame(w.target), scheme)?;
    Ok(SequenceSample {
        input,
        channels,
        height: spec.height,
        width: spec.width,
        target,
        t_last: w.t_last,
        lead_steps: w.lead_steps,
    })
}

/// Cuts stacks into non-overlapping one-hour windows, pairs each with the
/// thresholded frame `lead_steps` after its last frame, normalizes inputs
/// and drops windows rejected by [`validate_sequence`].
pub fn build_sequences(
    stacks: &Stacks,
    scheme: &ClassScheme,
    stats: &NormStats,
    lead_steps: usize,
    use_wind: bool,
) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::new();
    for w in windows(stacks, lead_steps, use_wind)? {
        let sample = build_window(stacks, &w, scheme, stats, use_wind)?;
        match validate_sequence(&sample, scheme, stats) {
            Validation::Accept => out.push(sample),
            Validation::Reject(reason) => log::debug!("window ending {} rejected: {reason:?}", w.t_last),
        }
    }
    Ok(out)
}

/// Options for [`prepare_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub lead_steps: usize,
    pub use_wind: bool,
    /// Target positive proportion; `None` keeps the natural one.
    pub eta: Option<f64>,
    pub seed: u64,
    pub policy: SplitPolicy,
    pub scheme: ClassScheme,
}

/// Full dataset construction: statistics from the usable training windows,
/// sequence building, week split and optional oversampling.
pub fn prepare_dataset(stacks: &Stacks, opts: &DatasetOptions) -> Result<Dataset> {
    let use_wind = opts.use_wind;
    let all = windows(stacks, opts.lead_steps, use_wind)?;
    let train_windows: Vec<&Window> = all
        .iter()
        .filter(|w| opts.policy.assign(w.time_span()) == Some(SplitPart::Train))
        .filter(|w| window_is_usable(stacks, w, &opts.scheme, use_wind))
        .collect();
    if train_windows.is_empty() {
        bail!(Empty, "no usable training windows before t={}", opts.policy.training_end);
    }
    let frames_of = |s: &GridStack| -> Vec<GridFrame> {
        train_windows.iter().flat_map(|w| (w.start..w.start + FRAMES_PER_WINDOW).map(|k| s.frame(k))).collect()
    };
    let crf = frames_of(&stacks.crf);
    let (u, v) = if use_wind {
        (frames_of(stacks.u.as_ref().unwrap()), frames_of(stacks.v.as_ref().unwrap()))
    } else {
        (Vec::new(), Vec::new())
    };
    let stats = NormStats::from_frames(&crf, &u, &v)?;

    let samples = build_sequences(stacks, &opts.scheme, &stats, opts.lead_steps, use_wind)?;
    let natural = split_weeks(samples, &opts.policy)?;
    let split = match opts.eta {
        Some(eta) => oversample(&natural, eta, opts.seed)?,
        None => natural.clone(),
    };
    Dataset::from_splits(stats, opts.scheme.clone(), use_wind, opts.lead_steps, opts.seed, &natural, &split)
}

pub(crate) fn shared(samples: Vec<SequenceSample>) -> Vec<Arc<SequenceSample>> {
    samples.into_iter().map(Arc::new).collect()
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::error::Error;

    #[test]
    fn count_is_floor_of_hours() {
        let s = stacks(24 + 6, 4, 4, |_| 0.5);
        let out = build_sequences(&s, &ClassScheme::default(), &stats(), 6, true).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].channels, 36);
        assert_eq!(out[0].t_last, T0 + 11 * STEP_SECONDS);
        assert_eq!(out[1].t_last, T0 + 23 * STEP_SECONDS);
        for f in [30usize, 41, 42, 53, 54] {
            let s = stacks(f, 2, 2, |_| 0.5);
            let n = build_sequences(&s, &ClassScheme::default(), &stats(), 6, false).unwrap().len();
            assert_eq!(n, (f - 6) / 12, "F={f}");
        }
    }

    #[test]
    fn rain_only_has_twelve_channels() {
        let s = stacks(12, 2, 2, |_| 0.5);
        let out = build_sequences(&Stacks::rain_only(s.crf), &ClassScheme::default(), &stats(), 0, false).unwrap();
        assert_eq!(out[0].channels, 12);
        assert_eq!(out[0].input.len(), 12 * 4);
    }

    #[test]
    fn wind_channels_are_standardized() {
        let s = stacks(13, 1, 1, |_| 0.5);
        let st = NormStats::new(1.0, 2.0, 4.0, 0.0, 2.0).unwrap();
        let out = build_sequences(&s, &ClassScheme::default(), &st, 1, true).unwrap();
        // U frame k holds k, so channel 12 + k is (k - 2) / 4.
        assert_eq!(out[0].channel(12 + 6), &[1.0]);
        assert_eq!(out[0].channel(24 + 4), &[-2.0]);
    }

    #[test]
    fn nan_in_window_drops_it() {
        let s = with_missing(&stacks(24 + 6, 3, 3, |_| 0.5), 3);
        let out = build_sequences(&s, &ClassScheme::default(), &stats(), 6, true).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].t_last, T0 + 23 * STEP_SECONDS);
    }

    #[test]
    fn clear_last_frame_drops_window() {
        // Rain in frames 0..11 of window 1 only, none in frame 11.
        let s = stacks(24 + 6, 2, 2, |k| if k == 11 { 0.0 } else { 0.5 });
        let out = build_sequences(&s, &ClassScheme::default(), &stats(), 6, true).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].t_last, T0 + 23 * STEP_SECONDS);
    }

    #[test]
    fn validate_reasons() {
        let s = stacks(13, 2, 2, |_| 0.5);
        let scheme = ClassScheme::default();
        let mut sample = build_sequences(&s, &scheme, &stats(), 1, false).unwrap().remove(0);
        assert_eq!(validate_sequence(&sample, &scheme, &stats()), Validation::Accept);

        let mut bad_target = sample.clone();
        let labels = bad_target.target.labels().to_vec();
        bad_target.target = ClassMap::new(3, 2, 2, labels, vec![true, false, true, true]).unwrap();
        assert_eq!(validate_sequence(&bad_target, &scheme, &stats()), Validation::Reject(RejectReason::UndefinedData));

        for x in sample.input[11 * 4..12 * 4].iter_mut() {
            *x = 0.0;
        }
        assert_eq!(validate_sequence(&sample, &scheme, &stats()), Validation::Reject(RejectReason::ClearLastFrame));
    }

    #[test]
    fn misaligned_timestamps_are_ingestion_errors() {
        let mut s = stacks(13, 2, 2, |_| 0.5);
        let spec = *s.crf.spec();
        let mut ts = s.crf.timestamps().to_vec();
        ts[5] += 1;
        s.u = Some(GridStack::new(Variable::U, spec, ts.clone(), s.u.unwrap().values().to_vec()).unwrap());
        assert!(matches!(build_sequences(&s, &ClassScheme::default(), &stats(), 1, true), Err(Error::Ingestion(_))));
        // Rain-only ignores the wind stacks.
        assert!(build_sequences(&s, &ClassScheme::default(), &stats(), 1, false).is_ok());
        let gap = Stacks::rain_only(GridStack::new(Variable::Crf, spec, ts, s.crf.values().to_vec()).unwrap());
        assert!(matches!(build_sequences(&gap, &ClassScheme::default(), &stats(), 1, false), Err(Error::Ingestion(_))));
    }

    #[test]
    fn align_resamples_then_interpolates() {
        // Hourly wind on a coarse grid, linear in lon and time.
        let coarse = GridSpec::new(3, 3, 0.0, 0.0, 0.5, 0.5).unwrap();
        let fine = GridSpec::new(5, 5, 0.0, 0.0, 0.25, 0.25).unwrap();
        let hours = [0i64, 3600];
        let mut values = Vec::new();
        for (h, _) in hours.iter().enumerate() {
            for _i in 0..3 {
                for j in 0..3 {
                    values.push(j as f32 * 0.5 * 10.0 + h as f32 * 12.0);
                }
            }
        }
        let wind = GridStack::new(Variable::U, coarse, hours.to_vec(), values).unwrap();
        let times: Vec<i64> = (0..13).map(|k| k * STEP_SECONDS).collect();
        let aligned = align_stack(&wind, &fine, &times).unwrap();
        assert_eq!(aligned.len(), 13);
        for (k, t) in times.iter().enumerate() {
            let f = aligned.frame(k);
            for j in 0..5 {
                let expect = j as f32 * 0.25 * 10.0 + *t as f32 / 3600.0 * 12.0;
                assert!((f.get(2, j) - expect).abs() < 1e-4);
            }
        }
        assert!(align_stack(&wind, &fine, &[7200]).is_err());
    }
}
