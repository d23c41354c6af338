//! Persistence and variational optical-flow nowcasts.
//!
//! The flow solver minimizes the discrete energy
//! `sum (I_t + Ix u + Iy v)^2 + alpha * sum_edges |W_p - W_q|^2`
//! over 4-neighbour edges with a Jacobi fixed-point iteration, then the
//! forecast transports rain and velocity along the flow with a
//! semi-Lagrangian scheme.

use crate::config::KeyValues;
use crate::error::{bail, Result};
use crate::grid::{normalize_crf, threshold_classes, ClassMap, ClassScheme, GridFrame, NormStats, ProbMap, Variable};

/// Per-pixel velocity in pixels per time step; `u` along columns, `v`
/// along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            bail!(Shape, "flow components must hold {}x{} values", height, width);
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            bail!(NonFinite, "flow field has non-finite values");
        }
        Ok(FlowField { height, width, u, v })
    }

    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        FlowField { height, width, u: vec![u; height * width], v: vec![v; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn max_speed(&self) -> f64 {
        self.u.iter().zip(&self.v).map(|(u, v)| u.hypot(*v)).fold(0.0, f64::max)
    }

    /// Mean `(u, v)` over the pixels selected by `mask`.
    pub fn mean_over(&self, mask: &[bool]) -> Option<(f64, f64)> {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for p in (0..self.u.len()).filter(|&p| mask[p]) {
            su += self.u[p];
            sv += self.v[p];
            n += 1;
        }
        (n > 0).then(|| (su / n as f64, sv / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop once an iteration lowers the energy by less than this fraction.
    pub tol: f64,
    /// Largest displacement per advection sub-step, in pixels.
    pub cfl_max: f64,
    /// Average the flow over every consecutive pair of input frames
    /// instead of using only the last two.
    pub multi_pair: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { alpha: 0.1, max_iters: 500, tol: 1e-6, cfl_max: 1.0, multi_pair: false }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            bail!(Config, "of.alpha must be finite and >= 0");
        }
        if !(self.tol > 0.0) {
            bail!(Config, "of.tol must be > 0");
        }
        if !(self.cfl_max > 0.0 && self.cfl_max.is_finite()) {
            bail!(Config, "of.cfl_max must be finite and > 0");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = FlowConfig::default();
        let cfg = FlowConfig {
            alpha: kv.get_or("of.alpha", d.alpha)?,
            max_iters: kv.get_or("of.max_iters", d.max_iters)?,
            tol: kv.get_or("of.tol", d.tol)?,
            cfl_max: kv.get_or("of.cfl_max", d.cfl_max)?,
            multi_pair: kv.get_or("of.multi_pair", d.multi_pair)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("of.alpha", self.alpha);
        kv.set("of.max_iters", self.max_iters);
        kv.set("of.tol", self.tol);
        kv.set("of.cfl_max", self.cfl_max);
        kv.set("of.multi_pair", self.multi_pair);
        kv
    }
}

/// Recovered flow and the energy before each iteration plus the final one.
#[derive(Debug, Clone)]
pub struct FlowEstimate {
    pub flow: FlowField,
    pub energy: Vec<f64>,
}

struct Problem {
    h: usize,
    w: usize,
    ix: Vec<f64>,
    iy: Vec<f64>,
    it: Vec<f64>,
    alpha: f64,
}

impl Problem {
    fn new(prev: &[f64], next: &[f64], h: usize, w: usize, alpha: f64) -> Self {
        let avg: Vec<f64> = prev.iter().zip(next).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut ix = vec![0.0; h * w];
        let mut iy = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let (jl, jr) = (j.saturating_sub(1), (j + 1).min(w - 1));
                let (iu, id) = (i.saturating_sub(1), (i + 1).min(h - 1));
                ix[i * w + j] = (avg[i * w + jr] - avg[i * w + jl]) / 2.0;
                iy[i * w + j] = (avg[id * w + j] - avg[iu * w + j]) / 2.0;
            }
        }
        let it = prev.iter().zip(next).map(|(a, b)| b - a).collect();
        Problem { h, w, ix, iy, it, alpha }
    }

    fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let (h, w) = (self.h, self.w);
        let mut data = 0.0;
        let mut smooth = 0.0;
        for p in 0..h * w {
            let r = self.it[p] + self.ix[p] * u[p] + self.iy[p] * v[p];
            data += r * r;
            let (i, j) = (p / w, p % w);
            if j + 1 < w {
                smooth += (u[p] - u[p + 1]).powi(2) + (v[p] - v[p + 1]).powi(2);
            }
            if i + 1 < h {
                smooth += (u[p] - u[p + w]).powi(2) + (v[p] - v[p + w]).powi(2);
            }
        }
        data + self.alpha * smooth
    }

    /// Best spatially constant flow for the data term alone.
    fn constant_fit(&self) -> (f64, f64) {
        let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in 0..self.it.len() {
            let (x, y, t) = (self.ix[p], self.iy[p], self.it[p]);
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
            sxt += x * t;
            syt += y * t;
        }
        let det = sxx * syy - sxy * sxy;
        if det.abs() <= 1e-12 * (sxx * syy).max(f64::MIN_POSITIVE) || det == 0.0 {
            return (0.0, 0.0);
        }
        ((-syy * sxt + sxy * syt) / det, (sxy * sxt - sxx * syt) / det)
    }

    /// One simultaneous update of every pixel: each pixel's pair `(u, v)`
    /// is set to the exact minimizer of the energy with its neighbours
    /// held at their current values.
    fn jacobi(&self, u: &[f64], v: &[f64], nu: &mut [f64], nv: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
                let mut add = |q: usize| {
                    su += u[q];
                    sv += v[q];
                    n += 1;
                };
                if j > 0 {
                    add(p - 1);
                }
                if j + 1 < w {
                    add(p + 1);
                }
                if i > 0 {
                    add(p - w);
                }
                if i + 1 < h {
                    add(p + w);
                }
                let (ub, vb) = if n > 0 { (su / n as f64, sv / n as f64) } else { (u[p], v[p]) };
                let (ax, ay) = (self.ix[p], self.iy[p]);
                let denom = self.alpha * n as f64 + ax * ax + ay * ay;
                if denom == 0.0 {
                    nu[p] = u[p];
                    nv[p] = v[p];
                    continue;
                }
                let k = (ax * ub + ay * vb + self.it[p]) / denom;
                nu[p] = ub - ax * k;
                nv[p] = vb - ay * k;
            }
        }
    }
}

fn finite_values(frame: &GridFrame, what: &str) -> Result<Vec<f64>> {
    if !frame.all_valid() {
        bail!(NonFinite, "{what} frame has missing or non-finite cells");
    }
    Ok(frame.values().iter().map(|&x| x as f64).collect())
}

/// Estimates the apparent motion from `prev` to `next`, keeping the
/// energy history. The energy never increases between iterations.
pub fn estimate_flow_with_history(prev: &GridFrame, next: &GridFrame, cfg: &FlowConfig) -> Result<FlowEstimate> {
    cfg.validate()?;
    if prev.height() != next.height() || prev.width() != next.width() {
        bail!(Shape, "flow frames differ in shape");
    }
    let a = finite_values(prev, "previous")?;
    let b = finite_values(next, "next")?;
    let (h, w) = (prev.height(), prev.width());
    let prob = Problem::new(&a, &b, h, w, cfg.alpha);

    let (u0, v0) = prob.constant_fit();
    let mut u = vec![u0; h * w];
    let mut v = vec![v0; h * w];
    let mut nu = vec![0.0; h * w];
    let mut nv = vec![0.0; h * w];
    let mut energy = vec![prob.energy(&u, &v)];
    let slack = 1e-12 * energy[0] + 1e-300;
    for _ in 0..cfg.max_iters {
        let e = *energy.last().unwrap();
        if e == 0.0 {
            break;
        }
        prob.jacobi(&u, &v, &mut nu, &mut nv);
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
        let e_new = prob.energy(&u, &v);
        if !e_new.is_finite() || e_new > e + slack {
            bail!(Divergence, "flow energy rose from {e} to {e_new}");
        }
        energy.push(e_new);
        if (e - e_new) <= cfg.tol * e {
            break;
        }
    }
    Ok(FlowEstimate { flow: FlowField::new(h, w, u, v)?, energy })
}

pub fn estimate_flow(prev: &GridFrame, next: &GridFrame, cfg: &FlowConfig) -> Result<FlowField> {
    estimate_flow_with_history(prev, next, cfg).map(|e| e.flow)
}

/// Flow from the last two frames, or the average over every consecutive
/// pair when `cfg.multi_pair` is set.
pub fn estimate_sequence_flow(frames: &[GridFrame], cfg: &FlowConfig) -> Result<FlowField> {
    if frames.len() < 2 {
        bail!(Contract, "at least two frames are needed to estimate a flow");
    }
    let n = frames.len();
    let pairs = if cfg.multi_pair { 0..n - 1 } else { n - 2..n - 1 };
    let count = pairs.len() as f64;
    let mut acc: Option<FlowField> = None;
    for k in pairs {
        let f = estimate_flow(&frames[k], &frames[k + 1], cfg)?;
        acc = Some(match acc {
            None => f,
            Some(mut a) => {
                a.u.iter_mut().zip(&f.u).for_each(|(x, y)| *x += y);
                a.v.iter_mut().zip(&f.v).for_each(|(x, y)| *x += y);
                a
            }
        });
    }
    let mut f = acc.unwrap();
    f.u.iter_mut().chain(f.v.iter_mut()).for_each(|x| *x /= count);
    Ok(f)
}

/// What lies beyond the raster when a backtrace leaves it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Nothing flows in (rain).
    Zero,
    /// Edge values extend outward (velocity).
    Clamp,
}

fn sample(values: &[f64], h: usize, w: usize, y: f64, x: f64, boundary: Boundary) -> f64 {
    let (y, x) = match boundary {
        Boundary::Clamp => (y.clamp(0.0, (h - 1) as f64), x.clamp(0.0, (w - 1) as f64)),
        Boundary::Zero => (y, x),
    };
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i >= h as i64 || j >= w as i64 {
            match boundary {
                Boundary::Zero => 0.0,
                Boundary::Clamp => values[(i.clamp(0, h as i64 - 1) * w as i64 + j.clamp(0, w as i64 - 1)) as usize],
            }
        } else {
            values[(i * w as i64 + j) as usize]
        }
    };
    // Skip zero-weight corners so exact landings never read past the edge.
    let mut out = 0.0;
    for (di, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dj, wx) in [(0, 1.0 - fx), (1, fx)] {
            let wgt = wy * wx;
            if wgt != 0.0 {
                out += wgt * at(y0 + di, x0 + dj);
            }
        }
    }
    out
}

/// One semi-Lagrangian step of length `dt`: `out(x) = in(x - W(x) dt)`.
fn transport(values: &[f64], flow: &FlowField, dt: f64, boundary: Boundary) -> Vec<f64> {
    let (h, w) = (flow.height, flow.width);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let y = i as f64 - flow.v[p] * dt;
            let x = j as f64 - flow.u[p] * dt;
            out.push(sample(values, h, w, y, x, boundary));
        }
    }
    out
}

fn sub_steps(flow: &FlowField, dt: f64, cfl_max: f64) -> usize {
    ((flow.max_speed() * dt.abs() / cfl_max).ceil() as usize).max(1)
}

/// Transports `values` along a fixed `flow` for `dt_steps` time steps,
/// splitting into sub-steps no longer than `cfl_max` pixels.
pub fn advect_values(values: &[f64], flow: &FlowField, dt_steps: f64, cfl_max: f64, boundary: Boundary) -> Vec<f64> {
    assert_eq!(values.len(), flow.height * flow.width, "field and flow differ in shape");
    let n = sub_steps(flow, dt_steps, cfl_max);
    let h = dt_steps / n as f64;
    let mut cur = values.to_vec();
    for _ in 0..n {
        cur = transport(&cur, flow, h, boundary);
    }
    cur
}

/// Moves a rainfall frame along `flow` with zero inflow at the edges.
pub fn advect(frame: &GridFrame, flow: &FlowField, dt_steps: f64, cfg: &FlowConfig) -> Result<GridFrame> {
    if frame.height() != flow.height || frame.width() != flow.width {
        bail!(Shape, "frame and flow differ in shape");
    }
    let values = finite_values(frame, "advected")?;
    let boundary = if frame.variable() == Variable::Crf { Boundary::Zero } else { Boundary::Clamp };
    let out = advect_values(&values, flow, dt_steps, cfg.cfl_max, boundary);
    let ts = frame.timestamp() + (dt_steps * crate::dataset::STEP_SECONDS as f64).round() as i64;
    GridFrame::new(*frame.spec(), frame.variable(), ts, out.into_iter().map(|x| x as f32).collect())
}

/// Moves a flow field along itself for `dt_steps`.
pub fn advect_flow(flow: &FlowField, dt_steps: f64, cfl_max: f64) -> FlowField {
    let n = sub_steps(flow, dt_steps, cfl_max);
    let h = dt_steps / n as f64;
    let mut cur = flow.clone();
    for _ in 0..n {
        cur = self_transport(&cur, h);
    }
    cur
}

fn self_transport(flow: &FlowField, h: f64) -> FlowField {
    FlowField {
        height: flow.height,
        width: flow.width,
        u: transport(&flow.u, flow, h, Boundary::Clamp),
        v: transport(&flow.v, flow, h, Boundary::Clamp),
    }
}

/// Integrates rain and velocity together: each sub-step moves the rain and
/// both velocity components along the current velocity.
pub fn advect_coupled(values: &[f64], flow: &FlowField, steps: usize, cfl_max: f64) -> (Vec<f64>, FlowField) {
    let mut rain = values.to_vec();
    let mut w = flow.clone();
    for _ in 0..steps {
        let n = sub_steps(&w, 1.0, cfl_max);
        let h = 1.0 / n as f64;
        for _ in 0..n {
            rain = transport(&rain, &w, h, Boundary::Zero);
            w = self_transport(&w, h);
        }
    }
    (rain, w)
}

/// Deterministic forecast and its {0, 1} probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub classes: ClassMap,
    pub probs: ProbMap,
}

impl Forecast {
    fn from_classes(classes: ClassMap) -> Self {
        let probs = ProbMap::from_class_map(&classes);
        Forecast { classes, probs }
    }
}

/// Optical-flow nowcast from rainfall frames in mm (oldest first).
///
/// The flow is estimated on intensities normalized with `stats` from the
/// last two frames (or all pairs with `cfg.multi_pair`), then the last
/// frame and the flow are advected together for `lead_steps` steps and
/// thresholded.
pub fn of_forecast(
    frames: &[GridFrame],
    stats: &NormStats,
    cfg: &FlowConfig,
    lead_steps: usize,
    scheme: &ClassScheme,
) -> Result<Forecast> {
    if frames.len() < 2 {
        bail!(Contract, "optical-flow forecast needs at least two frames");
    }
    let last = frames.last().unwrap();
    if lead_steps == 0 {
        return Ok(Forecast::from_classes(threshold_classes(last, scheme)?));
    }
    let normalized: Vec<GridFrame> = frames.iter().map(|f| normalize_crf(f, stats)).collect::<Result<_>>()?;
    let flow = estimate_sequence_flow(&normalized, cfg)?;
    let rain = finite_values(last, "last")?;
    let (out, _) = advect_coupled(&rain, &flow, lead_steps, cfg.cfl_max);
    let ts = last.timestamp() + lead_steps as i64 * crate::dataset::STEP_SECONDS;
    let frame = GridFrame::new(*last.spec(), Variable::Crf, ts, out.into_iter().map(|x| x.max(0.0) as f32).collect())?;
    Ok(Forecast::from_classes(threshold_classes(&frame, scheme)?))
}

/// The last observed frame, thresholded; the lead time plays no role.
pub fn persistence_forecast(last_frame: &GridFrame, scheme: &ClassScheme, _lead_steps: usize) -> Result<Forecast> {
    Ok(Forecast::from_classes(threshold_classes(last_frame, scheme)?))
}
