//! Automated object-reconstruction check: does an image show a distinct
//! bright highlight with an adjacent acoustic shadow?
//!
//! Background level and spread are estimated robustly (median and scaled
//! MAD) on a 3×3 box-filtered copy of the image, which suppresses
//! single-pixel speckle. The same detector labels generated images.

use serde::{Deserialize, Serialize};

use crate::components::{components, dilate};
use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HighlightDetector {
    /// Candidate highlight pixels exceed `median + bright_k * spread`.
    pub bright_k: f64,
    /// Minimum highlight area, pixels.
    pub min_area: usize,
    /// Highlight mean must reach `median + highlight_k * spread`.
    pub highlight_k: f64,
    /// Candidate shadow pixels fall below `median - dark_k * spread`.
    pub dark_k: f64,
    pub min_shadow_area: usize,
    /// Shadow mean must not exceed `median - shadow_k * spread`.
    pub shadow_k: f64,
    /// Shadow must touch the highlight dilated by this many pixels.
    pub adjacency: usize,
    /// Raw-pixel threshold for annotation masks.
    pub annotate_k: f64,
}

impl Default for HighlightDetector {
    fn default() -> Self {
        Self {
            bright_k: 3.0,
            min_area: 6,
            highlight_k: 4.0,
            dark_k: 2.0,
            min_shadow_area: 4,
            shadow_k: 2.5,
            adjacency: 2,
            annotate_k: 2.0,
        }
    }
}

/// 3×3 mean filter, normalized by the number of in-bounds neighbours.
pub fn box_blur(img: &Image) -> Image {
    let (w, h) = img.shape();
    Image::from_fn(w, h, |x, y| {
        let mut s = 0.0;
        let mut n = 0.0;
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                s += img.get(xx, yy);
                n += 1.0;
            }
        }
        s / n
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `(median, 1.4826 * MAD)`, with the spread floored at a small positive
/// value so flat images do not divide by zero.
pub fn robust_stats(img: &Image) -> (f64, f64) {
    let mut v = img.pixels().to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = img.pixels().iter().map(|p| (p - med).abs()).collect();
    let mad = median(&mut dev);
    (med, (1.4826 * mad).max(1e-6))
}

fn region_mean(img: &Image, mask: &Mask) -> f64 {
    let (s, n) = img
        .pixels()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub highlight: Mask,
    pub shadow: Option<Mask>,
}

impl HighlightDetector {
    /// Largest qualifying highlight and, if present, its adjacent shadow.
    pub fn detect(&self, img: &Image) -> Option<Detection> {
        let smooth = box_blur(img);
        let (med, spread) = robust_stats(&smooth);
        let (w, h) = img.shape();
        let bright = Mask::from_fn(w, h, |x, y| smooth.get(x, y) > med + self.bright_k * spread);
        let highlight = components(&bright)
            .into_iter()
            .filter(|c| c.count() >= self.min_area)
            .filter(|c| region_mean(&smooth, c) >= med + self.highlight_k * spread)
            .max_by_key(|c| c.count())?;

        let near = dilate(&highlight, self.adjacency);
        let dark = Mask::from_fn(w, h, |x, y| smooth.get(x, y) < med - self.dark_k * spread);
        let shadow = components(&dark)
            .into_iter()
            .filter(|c| c.count() >= self.min_shadow_area && c.intersection_count(&near) > 0)
            .filter(|c| region_mean(&smooth, c) <= med - self.shadow_k * spread)
            .max_by_key(|c| c.count());
        Some(Detection { highlight, shadow })
    }

    /// Highlight with a shadow present.
    pub fn is_reconstructed(&self, img: &Image) -> bool {
        self.detect(img).is_some_and(|d| d.shadow.is_some())
    }

    /// Annotation mask: raw pixels above `median + annotate_k * spread`
    /// (statistics of the raw image) inside the detected highlight grown by
    /// one pixel, keeping the component that overlaps the detection most.
    pub fn annotate(&self, img: &Image) -> Mask {
        let (w, h) = img.shape();
        let Some(det) = self.detect(img) else {
            return Mask::empty(w, h);
        };
        let (med, spread) = robust_stats(img);
        let zone = dilate(&det.highlight, 1);
        let raw = Mask::from_fn(w, h, |x, y| zone.get(x, y) && img.get(x, y) > med + self.annotate_k * spread);
        components(&raw)
            .into_iter()
            .max_by_key(|c| (c.intersection_count(&det.highlight), c.count()))
            .unwrap_or_else(|| Mask::empty(w, h))
    }
}

/// Fraction of images with a detected highlight and adjacent shadow.
pub fn orr_proxy(images: &[Image], detector: &HighlightDetector) -> f64 {
    if images.is_empty() {
        return 0.0;
    }
    let hits = images.iter().filter(|i| detector.is_reconstructed(i)).count();
    hits as f64 / images.len() as f64
}
