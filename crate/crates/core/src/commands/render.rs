//! 8-bit grayscale PNG panels.
//!
//! Class maps use a fixed linear ramp: the highest exceeded class `c` of
//! `n` maps to `255 * c / n`, so the ramp follows the class thresholds.
//! Outcome maps use three levels on a black background.

use crate::error::{bail, Error, Result};
use crate::evaluate::Outcome;
use crate::grid::ClassMap;

pub const LEVEL_MISS: u8 = 85;
pub const LEVEL_HIT: u8 = 170;
pub const LEVEL_FALSE_ALARM: u8 = 255;

pub fn encode_gray_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height || pixels.is_empty() {
        bail!(Shape, "{} pixels for a {height}x{width} image", pixels.len());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(pixels).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

/// Gray level of the highest class reached at each pixel; masked cells
/// are black.
pub fn class_levels(map: &ClassMap) -> Vec<u8> {
    let n = map.n_classes();
    let p = map.height() * map.width();
    (0..p)
        .map(|i| {
            if !map.valid()[i] {
                return 0;
            }
            let c = (0..n).filter(|&m| map.channel(m)[i] != 0).count();
            (255 * c / n.max(1)) as u8
        })
        .collect()
}

pub fn outcome_levels(outcomes: &[Outcome]) -> Vec<u8> {
    outcomes
        .iter()
        .map(|o| match o {
            Outcome::Miss => LEVEL_MISS,
            Outcome::Hit => LEVEL_HIT,
            Outcome::FalseAlarm => LEVEL_FALSE_ALARM,
            Outcome::CorrectNegative | Outcome::Masked => 0,
        })
        .collect()
}
