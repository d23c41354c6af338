use super::{GridFrame, GridSpec};
use crate::error::{bail, Result};

// Fractional-index slack when a target node lands on the source edge.
const EDGE_EPS: f64 = 1e-9;

/// Bilinearly resamples `frame` onto `target`.
///
/// Target cells outside the source extent, or whose 2x2 source stencil
/// touches a masked cell, are masked.
pub fn bilinear_resample(frame: &GridFrame, target: &GridSpec) -> Result<GridFrame> {
    target.validate()?;
    let src = frame.spec();
    let overlaps_lon =
        target.lon0 <= src.lon_max() + EDGE_EPS * src.dlon && target.lon_max() >= src.lon0 - EDGE_EPS * src.dlon;
    let overlaps_lat =
        target.lat0 <= src.lat_max() + EDGE_EPS * src.dlat && target.lat_max() >= src.lat0 - EDGE_EPS * src.dlat;
    if !(overlaps_lon && overlaps_lat) {
        bail!(Domain, "target grid does not overlap the source grid");
    }

    let (sh, sw) = (src.height, src.width);
    let vals = frame.values();
    let mut out = Vec::with_capacity(target.len());
    for i in 0..target.height {
        let lat = target.lat0 + i as f64 * target.dlat;
        let y = (lat - src.lat0) / src.dlat;
        let yspan = fractional(y, sh);
        for j in 0..target.width {
            let lon = target.lon0 + j as f64 * target.dlon;
            let x = (lon - src.lon0) / src.dlon;
            let (Some((y0, y1, fy)), Some((x0, x1, fx))) = (yspan, fractional(x, sw)) else {
                out.push(f32::NAN);
                continue;
            };
            let q00 = vals[y0 * sw + x0] as f64;
            let q01 = vals[y0 * sw + x1] as f64;
            let q10 = vals[y1 * sw + x0] as f64;
            let q11 = vals[y1 * sw + x1] as f64;
            // NaN in any corner poisons the result, which masks the cell.
            let top = q00 + (q01 - q00) * fx;
            let bottom = q10 + (q11 - q10) * fx;
            out.push((top + (bottom - top) * fy) as f32);
        }
    }
    Ok(GridFrame::from_parts(*target, frame.variable(), frame.timestamp(), out))
}

/// Lower index, upper index and weight of a fractional coordinate, or
/// `None` outside `[0, n - 1]`.
fn fractional(pos: f64, n: usize) -> Option<(usize, usize, f64)> {
    let last = (n - 1) as f64;
    if pos < -EDGE_EPS || pos > last + EDGE_EPS {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let pos = pos.clamp(0.0, last);
    let i0 = (pos.floor() as usize).min(n - 2);
    Some((i0, i0 + 1, pos - i0 as f64))
}

/// Linear blend of two frames on the same grid at time `t`.
pub fn temporal_interpolate(a: &GridFrame, b: &GridFrame, t: i64) -> Result<GridFrame> {
    if a.spec() != b.spec() {
        bail!(Shape, "temporal interpolation requires identical grids");
    }
    if a.variable() != b.variable() {
        bail!(Contract, "cannot blend {} with {}", a.variable(), b.variable());
    }
    let (t0, t1) = (a.timestamp(), b.timestamp());
    if t0 > t1 || t < t0 || t > t1 {
        bail!(Domain, "time {t} outside [{t0}, {t1}]");
    }
    if t == t0 {
        return Ok(a.clone().with_timestamp(t));
    }
    if t == t1 {
        return Ok(b.clone().with_timestamp(t));
    }
    let w = (t - t0) as f64 / (t1 - t0) as f64;
    let values =
        a.values().iter().zip(b.values()).map(|(&x, &y)| ((1.0 - w) * x as f64 + w * y as f64) as f32).collect();
    Ok(GridFrame::from_parts(*a.spec(), a.variable(), t, values))
}
