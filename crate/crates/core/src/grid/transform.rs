use super::{ClassMap, ClassScheme, GridFrame, NormStats, Variable};
use crate::error::{bail, Result};

/// Log-scales rainfall into `[0, 1]`: `log(1 + x) / log(1 + max_crf)`.
/// Values above the training maximum saturate at 1.
pub fn normalize_crf(frame: &GridFrame, stats: &NormStats) -> Result<GridFrame> {
    if frame.variable() != Variable::Crf {
        bail!(Contract, "normalize_crf expects a CRF frame, got {}", frame.variable());
    }
    stats.validate()?;
    let scale = (1.0 + stats.max_crf).ln();
    let values = frame
        .values()
        .iter()
        .map(|&x| if x.is_nan() { f32::NAN } else { ((1.0 + x as f64).ln() / scale).min(1.0) as f32 })
        .collect();
    Ok(GridFrame::from_parts(*frame.spec(), Variable::Crf, frame.timestamp(), values))
}

/// Inverse of [`normalize_crf`] on `[0, 1]`.
pub fn denormalize_crf(frame: &GridFrame, stats: &NormStats) -> Result<GridFrame> {
    if frame.variable() != Variable::Crf {
        bail!(Contract, "denormalize_crf expects a CRF frame, got {}", frame.variable());
    }
    stats.validate()?;
    let scale = (1.0 + stats.max_crf).ln();
    let mut values = Vec::with_capacity(frame.values().len());
    for &y in frame.values() {
        if y.is_nan() {
            values.push(f32::NAN);
            continue;
        }
        if !(0.0..=1.0).contains(&y) {
            bail!(Contract, "normalized rainfall {y} outside [0, 1]");
        }
        values.push(((y as f64 * scale).exp() - 1.0).max(0.0) as f32);
    }
    Ok(GridFrame::from_parts(*frame.spec(), Variable::Crf, frame.timestamp(), values))
}

/// Standardizes a wind component with the training mean and spread.
pub fn standardize_wind(frame: &GridFrame, stats: &NormStats) -> Result<GridFrame> {
    let (mu, sigma) = match frame.variable() {
        Variable::U => (stats.mu_u, stats.sigma_u),
        Variable::V => (stats.mu_v, stats.sigma_v),
        Variable::Crf => bail!(Contract, "standardize_wind expects U or V, got CRF"),
    };
    if !(sigma > 0.0) {
        bail!(Contract, "wind sigma must be positive");
    }
    let values =
        frame.values().iter().map(|&x| if x.is_nan() { f32::NAN } else { ((x as f64 - mu) / sigma) as f32 }).collect();
    Ok(GridFrame::from_parts(*frame.spec(), frame.variable(), frame.timestamp(), values))
}

/// Thresholds physical rainfall into nested exceedance classes.
///
/// Channel `m` is set where `CRF >= L_m * accumulation / 60`. Masked cells
/// are marked invalid and carry zeros in every channel.
pub fn threshold_classes(frame: &GridFrame, scheme: &ClassScheme) -> Result<ClassMap> {
    if frame.variable() != Variable::Crf {
        bail!(Contract, "threshold_classes expects a CRF frame, got {}", frame.variable());
    }
    let cutoffs = scheme.cutoffs();
    let (h, w) = (frame.height(), frame.width());
    let n = h * w;
    let mut labels = vec![0u8; cutoffs.len() * n];
    for (p, (&x, &ok)) in frame.values().iter().zip(frame.mask()).enumerate() {
        if !ok {
            continue;
        }
        let x = x as f64;
        for (m, c) in cutoffs.iter().enumerate() {
            if x >= *c {
                labels[m * n + p] = 1;
            } else {
                break;
            }
        }
    }
    ClassMap::new(cutoffs.len(), h, w, labels, frame.mask().to_vec())
}
