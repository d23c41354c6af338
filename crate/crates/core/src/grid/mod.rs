//! Gridded rainfall and wind fields, plus the unit conversions,
//! normalization, class thresholding and resampling shared by the rest of
//! the crate.

mod pgs;
mod resample;
mod transform;

pub use pgs::GridStack;
pub use resample::{bilinear_resample, temporal_interpolate};
pub use transform::{denormalize_crf, normalize_crf, standardize_wind, threshold_classes};

use std::fmt;
use std::str::FromStr;

use crate::error::{bail, Error, Result};

/// Physical quantity carried by a [`GridFrame`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variable {
    /// Cumulative rainfall over one accumulation window (mm).
    Crf,
    /// Eastward wind component (m/s).
    U,
    /// Northward wind component (m/s).
    V,
}

impl Variable {
    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Crf => "CRF",
            Variable::U => "U",
            Variable::V => "V",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CRF" => Ok(Variable::Crf),
            "U" => Ok(Variable::U),
            "V" => Ok(Variable::V),
            other => Err(Error::Format(format!("unknown variable {other:?}"))),
        }
    }
}

/// Regular lon/lat raster geometry. Row `i` sits at `lat0 + i * dlat`,
/// column `j` at `lon0 + j * dlon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub lon0: f64,
    pub lat0: f64,
    pub dlon: f64,
    pub dlat: f64,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, lon0: f64, lat0: f64, dlon: f64, dlat: f64) -> Result<Self> {
        let spec = GridSpec { height, width, lon0, lat0, dlon, dlat };
        spec.validate()?;
        Ok(spec)
    }

    /// Unit-spaced grid anchored at the origin, handy for synthetic data.
    pub fn pixels(height: usize, width: usize) -> Self {
        GridSpec { height, width, lon0: 0.0, lat0: 0.0, dlon: 0.01, dlat: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            bail!(Contract, "grid must be non-empty, got {}x{}", self.height, self.width);
        }
        if !(self.dlon > 0.0 && self.dlat > 0.0) {
            bail!(Contract, "grid spacing must be positive, got dlon={} dlat={}", self.dlon, self.dlat);
        }
        if !(self.lon0.is_finite() && self.lat0.is_finite()) {
            bail!(Contract, "grid origin must be finite");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lon_max(&self) -> f64 {
        self.lon0 + (self.width - 1) as f64 * self.dlon
    }

    pub fn lat_max(&self) -> f64 {
        self.lat0 + (self.height - 1) as f64 * self.dlat
    }
}

/// One 2-D scalar field with its geometry, time and validity mask.
///
/// Invalid cells hold `NaN` and `mask == false`; the two are kept in sync
/// by every constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    spec: GridSpec,
    variable: Variable,
    timestamp: i64,
    values: Vec<f32>,
    mask: Vec<bool>,
}

impl GridFrame {
    /// Builds a frame; `NaN` cells become masked. Rainfall must be
    /// non-negative on valid cells.
    pub fn new(spec: GridSpec, variable: Variable, timestamp: i64, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            bail!(
                Shape,
                "expected {} values for {}x{} grid, got {}",
                spec.len(),
                spec.height,
                spec.width,
                values.len()
            );
        }
        if let Some(v) = values.iter().find(|v| v.is_infinite()) {
            bail!(NonFinite, "infinite value {v} in {variable} frame");
        }
        if variable == Variable::Crf {
            if let Some(v) = values.iter().find(|v| **v < 0.0) {
                bail!(Contract, "negative rainfall {v}");
            }
        }
        let mask = values.iter().map(|v| !v.is_nan()).collect();
        Ok(GridFrame { spec, variable, timestamp, values, mask })
    }

    pub fn filled(spec: GridSpec, variable: Variable, timestamp: i64, value: f32) -> Result<Self> {
        Self::new(spec, variable, timestamp, vec![value; spec.len()])
    }

    /// Internal constructor for transforms that already keep values and
    /// mask consistent.
    pub(crate) fn from_parts(spec: GridSpec, variable: Variable, timestamp: i64, values: Vec<f32>) -> Self {
        let mask = values.iter().map(|v| !v.is_nan()).collect();
        GridFrame { spec, variable, timestamp, values, mask }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.spec.width + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.spec.width + col]
    }

    pub fn all_valid(&self) -> bool {
        self.mask.iter().all(|m| *m)
    }

    /// Marks a cell as missing.
    pub fn set_missing(&mut self, row: usize, col: usize) {
        let idx = row * self.spec.width + col;
        self.values[idx] = f32::NAN;
        self.mask[idx] = false;
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Training-split statistics used to bring inputs to a common scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    /// Largest rainfall accumulation seen in training (mm per window).
    pub max_crf: f64,
    pub mu_u: f64,
    pub sigma_u: f64,
    pub mu_v: f64,
    pub sigma_v: f64,
}

impl NormStats {
    pub fn new(max_crf: f64, mu_u: f64, sigma_u: f64, mu_v: f64, sigma_v: f64) -> Result<Self> {
        let stats = NormStats { max_crf, mu_u, sigma_u, mu_v, sigma_v };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_crf > 0.0 && self.max_crf.is_finite()) {
            bail!(Contract, "max_crf must be positive, got {}", self.max_crf);
        }
        if !(self.sigma_u > 0.0 && self.sigma_v > 0.0) {
            bail!(Contract, "wind sigmas must be positive, got {} / {}", self.sigma_u, self.sigma_v);
        }
        if !(self.mu_u.is_finite() && self.mu_v.is_finite()) {
            bail!(Contract, "wind means must be finite");
        }
        Ok(())
    }

    /// Computes statistics over the valid cells of the given frames.
    ///
    /// A wind component with zero spread (e.g. a perfectly uniform
    /// synthetic field) gets `sigma = 1` so that standardization reduces to
    /// centering. Without wind frames the wind statistics are `(0, 1)`.
    pub fn from_frames<'a>(
        crf: impl IntoIterator<Item = &'a GridFrame>,
        u: impl IntoIterator<Item = &'a GridFrame>,
        v: impl IntoIterator<Item = &'a GridFrame>,
    ) -> Result<Self> {
        let mut max_crf = 0.0f64;
        let mut seen = false;
        for f in crf {
            if f.variable() != Variable::Crf {
                bail!(Contract, "expected CRF frame, got {}", f.variable());
            }
            for (&x, &ok) in f.values.iter().zip(&f.mask) {
                if ok {
                    seen = true;
                    max_crf = max_crf.max(x as f64);
                }
            }
        }
        if !seen {
            bail!(Empty, "no valid rainfall cells to compute statistics from");
        }
        if max_crf <= 0.0 {
            bail!(Contract, "training rainfall is identically zero");
        }
        let (mu_u, sigma_u) = moments(u, Variable::U)?;
        let (mu_v, sigma_v) = moments(v, Variable::V)?;
        NormStats::new(max_crf, mu_u, sigma_u, mu_v, sigma_v)
    }
}

fn moments<'a>(frames: impl IntoIterator<Item = &'a GridFrame>, var: Variable) -> Result<(f64, f64)> {
    let mut n = 0u64;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for f in frames {
        if f.variable() != var {
            bail!(Contract, "expected {var} frame, got {}", f.variable());
        }
        for (&x, &ok) in f.values.iter().zip(&f.mask) {
            if ok {
                n += 1;
                sum += x as f64;
                sumsq += (x as f64) * (x as f64);
            }
        }
    }
    if n == 0 {
        return Ok((0.0, 1.0));
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    let sigma = var.sqrt();
    if sigma < 1e-9 {
        log::warn!("{var} wind has no spread in training data; using sigma=1");
        return Ok((mean, 1.0));
    }
    Ok((mean, sigma))
}

/// Ordered rain-rate thresholds defining the nested exceedance classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScheme {
    thresholds_mm_per_h: Vec<f64>,
    accumulation_minutes: f64,
}

impl Default for ClassScheme {
    fn default() -> Self {
        ClassScheme { thresholds_mm_per_h: vec![0.1, 1.0, 2.5], accumulation_minutes: 5.0 }
    }
}

impl ClassScheme {
    pub fn new(thresholds_mm_per_h: Vec<f64>, accumulation_minutes: f64) -> Result<Self> {
        if thresholds_mm_per_h.is_empty() {
            bail!(Contract, "at least one class threshold is required");
        }
        if thresholds_mm_per_h.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            bail!(Contract, "thresholds must be positive and finite");
        }
        if thresholds_mm_per_h.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Contract, "thresholds must be strictly increasing");
        }
        if !(accumulation_minutes > 0.0) {
            bail!(Contract, "accumulation window must be positive");
        }
        Ok(ClassScheme { thresholds_mm_per_h, accumulation_minutes })
    }

    pub fn n_classes(&self) -> usize {
        self.thresholds_mm_per_h.len()
    }

    pub fn thresholds_mm_per_h(&self) -> &[f64] {
        &self.thresholds_mm_per_h
    }

    pub fn accumulation_minutes(&self) -> f64 {
        self.accumulation_minutes
    }

    /// Thresholds converted to mm per accumulation window.
    pub fn cutoffs(&self) -> Vec<f64> {
        let factor = self.accumulation_minutes / 60.0;
        self.thresholds_mm_per_h.iter().map(|t| t * factor).collect()
    }
}

/// Binary per-class membership maps, class-major (`[m][row][col]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    n_classes: usize,
    height: usize,
    width: usize,
    labels: Vec<u8>,
    valid: Vec<bool>,
}

impl ClassMap {
    pub fn new(n_classes: usize, height: usize, width: usize, labels: Vec<u8>, valid: Vec<bool>) -> Result<Self> {
        if labels.len() != n_classes * height * width || valid.len() != height * width {
            bail!(Shape, "class map buffers do not match {n_classes}x{height}x{width}");
        }
        if labels.iter().any(|l| *l > 1) {
            bail!(Contract, "class labels must be 0 or 1");
        }
        Ok(ClassMap { n_classes, height, width, labels, valid })
    }

    pub fn zeros(n_classes: usize, height: usize, width: usize) -> Self {
        ClassMap {
            n_classes,
            height,
            width,
            labels: vec![0; n_classes * height * width],
            valid: vec![true; height * width],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn channel(&self, class: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.labels[class * n..(class + 1) * n]
    }

    pub fn get(&self, class: usize, row: usize, col: usize) -> u8 {
        self.labels[(class * self.height + row) * self.width + col]
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    /// True if any valid pixel belongs to `class`.
    pub fn contains_class(&self, class: usize) -> bool {
        self.channel(class).iter().zip(&self.valid).any(|(l, v)| *v && *l == 1)
    }

    /// Number of pixels where a higher class is set but a lower one is not.
    pub fn monotonicity_violations(&self) -> usize {
        let n = self.height * self.width;
        (0..n)
            .filter(|&p| (1..self.n_classes).any(|m| self.labels[m * n + p] == 1 && self.labels[(m - 1) * n + p] == 0))
            .count()
    }
}

/// Per-class, per-pixel probabilities, class-major like [`ClassMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    n_classes: usize,
    height: usize,
    width: usize,
    probs: Vec<f32>,
}

impl ProbMap {
    pub fn new(n_classes: usize, height: usize, width: usize, probs: Vec<f32>) -> Result<Self> {
        if probs.len() != n_classes * height * width {
            bail!(Shape, "probability buffer does not match {n_classes}x{height}x{width}");
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            bail!(Contract, "probabilities must lie in [0, 1]");
        }
        Ok(ProbMap { n_classes, height, width, probs })
    }

    /// Casts a binary class map to probabilities in {0, 1}.
    pub fn from_class_map(map: &ClassMap) -> Self {
        ProbMap {
            n_classes: map.n_classes,
            height: map.height,
            width: map.width,
            probs: map.labels.iter().map(|l| *l as f32).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn channel(&self, class: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.probs[class * n..(class + 1) * n]
    }

    /// Decision rule: a pixel belongs to a class when `P >= 0.5`.
    pub fn to_class_map(&self) -> ClassMap {
        ClassMap {
            n_classes: self.n_classes,
            height: self.height,
            width: self.width,
            labels: self.probs.iter().map(|p| u8::from(*p >= 0.5)).collect(),
            valid: vec![true; self.height * self.width],
        }
    }
}
