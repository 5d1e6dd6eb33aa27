//! Edge-map extraction from rendered geometry channels.
//!
//! Target edge images come from per-view geometry buffers rather than photos:
//! a coverage (alpha) mask, a depth map, and/or a normal map. Each present
//! channel is run through a 3×3 Sobel operator with replicate padding; pixels
//! whose gradient magnitude exceeds the channel's threshold form a binary
//! mask, the channel masks are OR-ed together, and the union is softened with
//! a small normalized Gaussian blur so the loss sees a couple of pixels of
//! support around every edge.
//!
//! Useful calibration identities for the Sobel magnitude used here: an axis-
//! aligned step of height `h` reads `4h` on both pixels adjacent to the
//! boundary, and a linear ramp of slope `s` per pixel reads `8|s|` in the
//! interior.

use crate::error::{Error, Result};
use crate::image::{EdgeImage, NormalMap, ScalarField};

/// Depth-gradient magnitude above which a pixel is a depth edge (meters).
pub const DEPTH_EDGE_THRESHOLD: f64 = 0.01;

/// Normal-gradient magnitude above which a pixel is an orientation edge.
pub const NORMAL_EDGE_THRESHOLD: f64 = 0.4;

/// Alpha-gradient magnitude above which a pixel is a silhouette edge.
pub const ALPHA_EDGE_THRESHOLD: f64 = 0.5;

/// Standard deviation (pixels) of the softening blur.
pub const BLUR_SIGMA: f64 = 1.0;

/// Half-width (pixels) of the truncated blur kernel.
pub const BLUR_RADIUS: usize = 3;

/// Optional per-view geometry channels. All present channels must share one
/// size.
#[derive(Debug, Clone, Default)]
pub struct GeometryMaps {
    pub alpha: Option<ScalarField>,
    pub depth: Option<ScalarField>,
    pub normal: Option<NormalMap>,
}

#[derive(Debug, Clone)]
pub struct DetectorThresholds {
    pub alpha: f64,
    pub depth: f64,
    pub normal: f64,
}

impl Default for DetectorThresholds {
    fn default() -> Self {
        Self {
            alpha: ALPHA_EDGE_THRESHOLD,
            depth: DEPTH_EDGE_THRESHOLD,
            normal: NORMAL_EDGE_THRESHOLD,
        }
    }
}

/// Everything one detection produces; the intermediate masks are exposed so
/// channel behavior can be inspected and tested.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    /// Blurred union mask, clamped to [0,1] — the training target.
    pub edges: EdgeImage,
    /// Binary union of the channel masks, before blurring.
    pub mask: EdgeImage,
    pub alpha_mask: Option<EdgeImage>,
    pub depth_mask: Option<EdgeImage>,
    pub normal_mask: Option<EdgeImage>,
}

/// 3×3 Sobel gradient magnitude with replicate padding.
pub fn sobel_magnitude(field: &ScalarField) -> ScalarField {
    let (w, h) = (field.width(), field.height());
    let mut out = ScalarField::zeros(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let s = |dx: i64, dy: i64| field.get_clamped(x + dx, y + dy);
            let gx = (s(1, -1) + 2.0 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2.0 * s(-1, 0) + s(-1, 1));
            let gy = (s(-1, 1) + 2.0 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2.0 * s(0, -1) + s(1, -1));
            out.set(x as u32, y as u32, (gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Per-component Sobel magnitude of a normal map, reduced by max.
pub fn sobel_magnitude_normals(normals: &NormalMap) -> ScalarField {
    let (w, h) = (normals.width(), normals.height());
    let mut out = ScalarField::zeros(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut best = 0.0f64;
            for c in 0..3 {
                let s = |dx: i64, dy: i64| normals.get_clamped(x + dx, y + dy)[c];
                let gx =
                    (s(1, -1) + 2.0 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2.0 * s(-1, 0) + s(-1, 1));
                let gy =
                    (s(-1, 1) + 2.0 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2.0 * s(0, -1) + s(1, -1));
                best = best.max((gx * gx + gy * gy).sqrt());
            }
            out.set(x as u32, y as u32, best);
        }
    }
    out
}

fn threshold_mask(mag: &ScalarField, th: f64) -> EdgeImage {
    let (w, h) = (mag.width(), mag.height());
    let mut out = EdgeImage::zeros(w, h);
    for i in 0..(w as usize * h as usize) {
        if mag.as_slice()[i] > th {
            out.set_flat(i, 1.0);
        }
    }
    out
}

/// Separable normalized Gaussian blur with replicate padding, clamped to
/// [0,1].
pub fn gaussian_blur(img: &EdgeImage, sigma: f64, radius: usize) -> EdgeImage {
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for i in -(radius as i64)..=(radius as i64) {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let clamp_get = |data: &[f64], x: i64, y: i64| {
        data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize]
    };
    let mut horizontal = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                acc += k * clamp_get(img.as_slice(), x + ki as i64 - radius as i64, y);
            }
            horizontal[(y * w + x) as usize] = acc;
        }
    }
    let mut out = EdgeImage::zeros(img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                acc += k * clamp_get(&horizontal, x, y + ki as i64 - radius as i64);
            }
            out.set(x as u32, y as u32, acc.clamp(0.0, 1.0));
        }
    }
    out
}

fn union_into(mask: &mut EdgeImage, add: &EdgeImage) {
    for i in 0..mask.pixel_count() {
        if add.get_flat(i) > 0.0 {
            mask.set_flat(i, 1.0);
        }
    }
}

/// Detects edges from the present geometry channels. At least one channel is
/// required and all must share the same size.
pub fn detect_edges(maps: &GeometryMaps, th: &DetectorThresholds) -> Result<DetectionResult> {
    let mut size: Option<(u32, u32)> = None;
    let mut check = |w: u32, h: u32| -> Result<()> {
        match size {
            None => {
                size = Some((w, h));
                Ok(())
            }
            Some(s) if s == (w, h) => Ok(()),
            Some(s) => Err(Error::contract(format!(
                "geometry channels disagree on size: {s:?} vs ({w}, {h})"
            ))),
        }
    };
    if let Some(a) = &maps.alpha {
        check(a.width(), a.height())?;
    }
    if let Some(d) = &maps.depth {
        check(d.width(), d.height())?;
    }
    if let Some(n) = &maps.normal {
        check(n.width(), n.height())?;
    }
    let (w, h) = size.ok_or_else(|| Error::contract("edge detection needs at least one channel"))?;

    let alpha_mask = maps
        .alpha
        .as_ref()
        .map(|a| threshold_mask(&sobel_magnitude(a), th.alpha));
    let depth_mask = maps
        .depth
        .as_ref()
        .map(|d| threshold_mask(&sobel_magnitude(d), th.depth));
    let normal_mask = maps
        .normal
        .as_ref()
        .map(|n| threshold_mask(&sobel_magnitude_normals(n), th.normal));

    let mut mask = EdgeImage::zeros(w, h);
    for m in [&alpha_mask, &depth_mask, &normal_mask].into_iter().flatten() {
        union_into(&mut mask, m);
    }
    let edges = gaussian_blur(&mask, BLUR_SIGMA, BLUR_RADIUS);
    Ok(DetectionResult {
        edges,
        mask,
        alpha_mask,
        depth_mask,
        normal_mask,
    })
}
