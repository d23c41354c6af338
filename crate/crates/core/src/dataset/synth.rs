//! Synthetic rain/wind scenes: Gaussian rain cells carried by a known
//! velocity field, with the same field written out as the wind stacks.
//!
//! Velocities are in pixels per frame; the U/V stacks carry them in those
//! units (columns for U, rows for V).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Stacks, STEP_SECONDS};
use crate::config::KeyValues;
use crate::error::{bail, Result};
use crate::grid::{GridSpec, GridStack, Variable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocitySpec {
    /// Constant `(u, v)` everywhere.
    Uniform { u: f64, v: f64 },
    /// Solid-body rotation about the grid centre, `omega` radians per frame.
    Rotational { omega: f64 },
    /// Spatially uniform flow that holds a random direction and speed for a
    /// regime of `regime_frames / 2 ..= 3 * regime_frames / 2` frames, then
    /// switches abruptly to a new one.
    Drifting { speed_min: f64, speed_max: f64, regime_frames: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_blobs: usize,
    /// Peak accumulation range (mm per 5 min).
    pub amplitude: (f64, f64),
    /// Gaussian radius range (pixels).
    pub sigma: (f64, f64),
    pub velocity: VelocitySpec,
    /// Standard deviation of additive noise before clipping at zero.
    pub noise: f64,
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub seed: u64,
    /// Timestamp of the first frame.
    pub t0: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_blobs: 4,
            amplitude: (0.05, 0.4),
            sigma: (2.0, 4.0),
            velocity: VelocitySpec::Uniform { u: 1.0, v: 0.0 },
            noise: 0.001,
            height: 32,
            width: 32,
            n_frames: 120,
            seed: 0,
            t0: 1_451_606_400,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (a0, a1) = self.amplitude;
        let (s0, s1) = self.sigma;
        if !(a0 >= 0.0 && a1 >= a0) {
            bail!(Config, "amplitude range must satisfy 0 <= min <= max");
        }
        if !(s0 > 0.0 && s1 >= s0) {
            bail!(Config, "sigma range must satisfy 0 < min <= max");
        }
        if !(self.noise >= 0.0) {
            bail!(Config, "noise must be non-negative");
        }
        if self.height == 0 || self.width == 0 || self.n_frames == 0 {
            bail!(Config, "grid and frame count must be positive");
        }
        if let VelocitySpec::Drifting { speed_min, speed_max, regime_frames } = self.velocity {
            if !(speed_min >= 0.0 && speed_max >= speed_min) || regime_frames == 0 {
                bail!(Config, "drifting velocity needs 0 <= speed_min <= speed_max and regime_frames > 0");
            }
        }
        Ok(())
    }

    /// Reads `synth.*` keys, falling back to defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = SynthConfig::default();
        let velocity = match kv.get_str("synth.velocity").unwrap_or("uniform") {
            "uniform" => VelocitySpec::Uniform { u: kv.get_or("synth.u", 1.0)?, v: kv.get_or("synth.v", 0.0)? },
            "rotational" => VelocitySpec::Rotational { omega: kv.get_or("synth.omega", 0.05)? },
            "drifting" => VelocitySpec::Drifting {
                speed_min: kv.get_or("synth.speed_min", 0.5)?,
                speed_max: kv.get_or("synth.speed_max", 1.5)?,
                regime_frames: kv.get_or("synth.regime_frames", 12)?,
            },
            other => bail!(Config, "unknown synth.velocity {other:?}"),
        };
        let cfg = SynthConfig {
            n_blobs: kv.get_or("synth.n_blobs", d.n_blobs)?,
            amplitude: (kv.get_or("synth.amp_min", d.amplitude.0)?, kv.get_or("synth.amp_max", d.amplitude.1)?),
            sigma: (kv.get_or("synth.sigma_min", d.sigma.0)?, kv.get_or("synth.sigma_max", d.sigma.1)?),
            velocity,
            noise: kv.get_or("synth.noise", d.noise)?,
            height: kv.get_or("synth.height", d.height)?,
            width: kv.get_or("synth.width", d.width)?,
            n_frames: kv.get_or("synth.n_frames", d.n_frames)?,
            seed: kv.get_or("synth.seed", d.seed)?,
            t0: kv.get_or("synth.t0", d.t0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("synth.n_blobs", self.n_blobs);
        kv.set("synth.amp_min", self.amplitude.0);
        kv.set("synth.amp_max", self.amplitude.1);
        kv.set("synth.sigma_min", self.sigma.0);
        kv.set("synth.sigma_max", self.sigma.1);
        match self.velocity {
            VelocitySpec::Uniform { u, v } => {
                kv.set("synth.velocity", "uniform");
                kv.set("synth.u", u);
                kv.set("synth.v", v);
            }
            VelocitySpec::Rotational { omega } => {
                kv.set("synth.velocity", "rotational");
                kv.set("synth.omega", omega);
            }
            VelocitySpec::Drifting { speed_min, speed_max, regime_frames } => {
                kv.set("synth.velocity", "drifting");
                kv.set("synth.speed_min", speed_min);
                kv.set("synth.speed_max", speed_max);
                kv.set("synth.regime_frames", regime_frames);
            }
        }
        kv.set("synth.noise", self.noise);
        kv.set("synth.height", self.height);
        kv.set("synth.width", self.width);
        kv.set("synth.n_frames", self.n_frames);
        kv.set("synth.seed", self.seed);
        kv.set("synth.t0", self.t0);
        kv
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    amplitude: f64,
    sigma: f64,
}

/// Velocity of the flow at pixel `(x, y)` and frame `k`.
struct Flow {
    spec: VelocitySpec,
    cx: f64,
    cy: f64,
    /// First frame and velocity of each drifting regime.
    regimes: Vec<(usize, (f64, f64))>,
}

impl Flow {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut regimes = Vec::new();
        if let VelocitySpec::Drifting { speed_min, speed_max, regime_frames } = cfg.velocity {
            let (lo, hi) = ((regime_frames / 2).max(1), (3 * regime_frames / 2).max(1));
            let mut start = 0;
            while start < cfg.n_frames {
                let speed = rng.random_range(speed_min..=speed_max);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                regimes.push((start, (speed * angle.cos(), speed * angle.sin())));
                start += rng.random_range(lo..=hi);
            }
        }
        Flow { spec: cfg.velocity, cx: (cfg.width as f64 - 1.0) / 2.0, cy: (cfg.height as f64 - 1.0) / 2.0, regimes }
    }

    /// Velocity acting between frames `k` and `k + 1`.
    fn at(&self, x: f64, y: f64, k: usize) -> (f64, f64) {
        match self.spec {
            VelocitySpec::Uniform { u, v } => (u, v),
            VelocitySpec::Rotational { omega } => (-omega * (y - self.cy), omega * (x - self.cx)),
            VelocitySpec::Drifting { .. } => {
                let r = self.regimes.partition_point(|&(start, _)| start <= k);
                self.regimes[r - 1].1
            }
        }
    }

    /// Moves a point from frame `k` to frame `k + 1`.
    fn step(&self, x: f64, y: f64, k: usize) -> (f64, f64) {
        match self.spec {
            VelocitySpec::Rotational { omega } => {
                let (dx, dy) = (x - self.cx, y - self.cy);
                let (s, c) = omega.sin_cos();
                (self.cx + c * dx - s * dy, self.cy + s * dx + c * dy)
            }
            _ => {
                let (u, v) = self.at(x, y, k);
                (x + u, y + v)
            }
        }
    }
}

/// Renders rainfall, U and V stacks for `cfg`. The same seed always yields
/// bit-identical stacks.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Stacks> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let flow = Flow::new(cfg, &mut rng);
    let (h, w) = (cfg.height, cfg.width);
    // Cells wrap around a margin outside the domain so the rain cover
    // stays roughly constant under translation.
    let margin = 3.0 * cfg.sigma.1;
    let span_x = w as f64 + 2.0 * margin;
    let span_y = h as f64 + 2.0 * margin;
    let mut blobs: Vec<Blob> = (0..cfg.n_blobs)
        .map(|_| Blob {
            x: rng.random_range(-margin..w as f64 + margin),
            y: rng.random_range(-margin..h as f64 + margin),
            amplitude: rng.random_range(cfg.amplitude.0..=cfg.amplitude.1),
            sigma: rng.random_range(cfg.sigma.0..=cfg.sigma.1),
        })
        .collect();
    let noise = (cfg.noise > 0.0).then(|| Normal::new(0.0, cfg.noise).unwrap());

    let n = h * w;
    let mut crf = Vec::with_capacity(cfg.n_frames * n);
    let mut u = Vec::with_capacity(cfg.n_frames * n);
    let mut v = Vec::with_capacity(cfg.n_frames * n);
    let wraps = !matches!(cfg.velocity, VelocitySpec::Rotational { .. });
    for k in 0..cfg.n_frames {
        for i in 0..h {
            for j in 0..w {
                let (x, y) = (j as f64, i as f64);
                let mut rain = 0.0;
                for b in &blobs {
                    let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                    rain += b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                }
                if let Some(dist) = &noise {
                    rain += dist.sample(&mut rng);
                }
                crf.push(rain.max(0.0) as f32);
                let (fu, fv) = flow.at(x, y, k);
                u.push(fu as f32);
                v.push(fv as f32);
            }
        }
        for b in &mut blobs {
            let (nx, ny) = flow.step(b.x, b.y, k);
            b.x = nx;
            b.y = ny;
            if wraps {
                b.x = (b.x + margin).rem_euclid(span_x) - margin;
                b.y = (b.y + margin).rem_euclid(span_y) - margin;
            }
        }
    }
    let spec = GridSpec::pixels(h, w);
    let ts: Vec<i64> = (0..cfg.n_frames).map(|k| cfg.t0 + k as i64 * STEP_SECONDS).collect();
    Ok(Stacks {
        crf: GridStack::new(Variable::Crf, spec, ts.clone(), crf)?,
        u: Some(GridStack::new(Variable::U, spec, ts.clone(), u)?),
        v: Some(GridStack::new(Variable::V, spec, ts, v)?),
    })
}
