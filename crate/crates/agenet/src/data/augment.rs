//! Data augmentation: horizontal flip, rotation about the image center, and
//! center zoom. `augment` composes them from exactly three RNG draws so that
//! downstream draw sequences stay aligned regardless of which effects fire.

use crate::data::image::RgbImage;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Probability of mirroring left-right.
    pub flip_prob: f64,
    /// Rotation angle is drawn uniformly from [-max, +max] degrees.
    pub max_rotation_deg: f64,
    /// Zoom factor is drawn uniformly from this range; 1.0 means unchanged.
    pub zoom_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> AugmentConfig {
        AugmentConfig { flip_prob: 0.5, max_rotation_deg: 15.0, zoom_range: (0.85, 1.15) }
    }
}

impl AugmentConfig {
    /// Configuration whose draws can never alter the image.
    pub fn identity() -> AugmentConfig {
        AugmentConfig { flip_prob: 0.0, max_rotation_deg: 0.0, zoom_range: (1.0, 1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config(format!(
                "flip probability must lie in [0, 1], got {}",
                self.flip_prob
            )));
        }
        if !(self.max_rotation_deg >= 0.0) {
            return Err(Error::config(format!(
                "max rotation must be >= 0 degrees, got {}",
                self.max_rotation_deg
            )));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && lo <= hi) {
            return Err(Error::config(format!(
                "zoom range must satisfy 0 < min <= 1 <= max, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Mirrors the image left-right.
pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(w - 1 - x, y));
        }
    }
    out
}

/// Rotates clockwise by `degrees` about the image center, sampling the source
/// with the inverse map and filling uncovered pixels with black. A zero angle
/// returns the input bit-exactly.
pub fn rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut out = RgbImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            // Inverse of clockwise rotation: rotate the destination
            // coordinate counter-clockwise back into the source frame.
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let src_x = cx + cos * dx + sin * dy;
            let src_y = cy - sin * dx + cos * dy;
            let sx = src_x.round();
            let sy = src_y.round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.set(x, y, img.get(sx as usize, sy as usize));
            }
        }
    }
    out
}

/// Zooms about the image center by `factor` (>1 magnifies, <1 shrinks with a
/// black border). A factor of exactly 1.0 returns the input bit-exactly.
pub fn zoom(img: &RgbImage, factor: f64) -> Result<RgbImage> {
    if !(factor > 0.0) {
        return Err(Error::config(format!("zoom factor must be > 0, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = RgbImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let src_x = (cx + (x as f64 - cx) / factor).round();
            let src_y = (cy + (y as f64 - cy) / factor).round();
            if src_x >= 0.0 && src_y >= 0.0 && (src_x as usize) < w && (src_y as usize) < h {
                out.set(x, y, img.get(src_x as usize, src_y as usize));
            }
        }
    }
    Ok(out)
}

/// Applies flip, then rotation, then zoom, drawing exactly three values from
/// `rng` in that order (flip coin, angle, zoom factor) on every call.
pub fn augment(img: &RgbImage, cfg: &AugmentConfig, rng: &mut Rng) -> Result<RgbImage> {
    cfg.validate()?;
    let flip = rng.bernoulli(cfg.flip_prob);
    let angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    let factor = rng.uniform(cfg.zoom_range.0, cfg.zoom_range.1);

    let flipped = if flip { flip_horizontal(img) } else { img.clone() };
    let rotated = rotate(&flipped, angle);
    zoom(&rotated, factor)
}
