//! Class-balanced sampled L1 loss between a rendered and a target edge image.
//!
//! Edge images are overwhelmingly background, so the loss is evaluated on a
//! balanced pixel sample: `n = min(|fg|, |bg|, n_max)` pixels drawn without
//! replacement from the foreground (`gt > 0.5`) and the same number from the
//! background, `L = (1/2n) Σ |I(p) − gt(p)|`. If either class is empty the
//! draw falls back to `2n` uniform pixels over the whole image (flagged on
//! the result and logged).
//!
//! Drawing depends only on the target image and the RNG — never on the
//! render — so a training step can draw first, render only the drawn pixels,
//! and reuse the identical draw for finite-difference re-evaluations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::EdgeImage;

/// Per-class cap on drawn pixels.
pub const DEFAULT_MAX_SAMPLES: usize = 4096;

/// Threshold separating foreground from background in the target image.
pub const FOREGROUND_THRESHOLD: f64 = 0.5;

/// A deterministic balanced pixel draw for one (target, RNG) pair.
#[derive(Debug, Clone)]
pub struct PixelDraw {
    /// Flat pixel indices; foreground block first unless `fallback`.
    pub pixels: Vec<u32>,
    /// Set when one class was empty and the draw was uniform instead.
    pub fallback: bool,
}

/// Draws `k` distinct elements from `pool` by partial Fisher–Yates shuffle.
fn draw_without_replacement(pool: &mut Vec<u32>, k: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    debug_assert!(k <= pool.len());
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool[..k].to_vec()
}

/// Draws the loss pixels for one target image.
pub fn draw_loss_pixels(target: &EdgeImage, n_max: usize, rng: &mut ChaCha8Rng) -> Result<PixelDraw> {
    let total = target.pixel_count();
    if total == 0 || n_max == 0 {
        return Err(Error::contract("loss draw needs a non-empty image and n_max > 0"));
    }
    let mut fg: Vec<u32> = Vec::new();
    let mut bg: Vec<u32> = Vec::new();
    for (i, &v) in target.as_slice().iter().enumerate() {
        if v > FOREGROUND_THRESHOLD {
            fg.push(i as u32);
        } else {
            bg.push(i as u32);
        }
    }
    if fg.is_empty() || bg.is_empty() {
        let n = (total / 2).min(n_max).max(1);
        log::warn!(
            "loss draw fallback: target has {} foreground / {} background pixels; \
             drawing {} uniform pixels",
            fg.len(),
            bg.len(),
            2 * n
        );
        let mut all: Vec<u32> = (0..total as u32).collect();
        let k = (2 * n).min(total);
        let pixels = draw_without_replacement(&mut all, k, rng);
        return Ok(PixelDraw { pixels, fallback: true });
    }
    let n = fg.len().min(bg.len()).min(n_max);
    let mut pixels = draw_without_replacement(&mut fg, n, rng);
    pixels.extend(draw_without_replacement(&mut bg, n, rng));
    Ok(PixelDraw { pixels, fallback: false })
}

/// L1 loss and its gradient over pre-rendered values at the drawn pixels.
///
/// `rendered[i]` must be the rendered intensity at `draw.pixels[i]`. Returns
/// the mean absolute error and sparse `(pixel, ∂L/∂I)` pairs; exact ties get
/// zero gradient and are omitted.
pub fn l1_loss_and_grad(
    rendered: &[f64],
    target: &EdgeImage,
    draw: &PixelDraw,
) -> Result<(f64, Vec<(u32, f64)>)> {
    if rendered.len() != draw.pixels.len() {
        return Err(Error::contract(format!(
            "rendered values ({}) must match drawn pixels ({})",
            rendered.len(),
            draw.pixels.len()
        )));
    }
    let n2 = draw.pixels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(draw.pixels.len());
    for (&p, &r) in draw.pixels.iter().zip(rendered) {
        if !r.is_finite() {
            return Err(Error::numerical(format!("non-finite rendered value at pixel {p}")));
        }
        let diff = r - target.get_flat(p as usize);
        loss += diff.abs();
        if diff != 0.0 {
            grad.push((p, diff.signum() / n2));
        }
    }
    Ok((loss / n2, grad))
}

/// Result of [`sampled_l1_loss`].
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    /// Sparse image gradient: `(flat pixel index, ∂L/∂I)`.
    pub dl_di: Vec<(u32, f64)>,
    pub draw: PixelDraw,
}

/// Convenience wrapper: draw, read the rendered image, and differentiate.
pub fn sampled_l1_loss(
    rendered: &EdgeImage,
    target: &EdgeImage,
    n_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossResult> {
    if rendered.width() != target.width() || rendered.height() != target.height() {
        return Err(Error::contract("rendered and target image sizes differ"));
    }
    let draw = draw_loss_pixels(target, n_max, rng)?;
    let values: Vec<f64> = draw.pixels.iter().map(|&p| rendered.get_flat(p as usize)).collect();
    let (loss, dl_di) = l1_loss_and_grad(&values, target, &draw)?;
    Ok(LossResult { loss, dl_di, draw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::HashSet;

    fn image_with_foreground(w: u32, h: u32, fg: &[(u32, u32)]) -> EdgeImage {
        let mut img = EdgeImage::zeros(w, h);
        for &(x, y) in fg {
            img.set(x, y, 1.0);
        }
        img
    }

    #[test]
    fn draw_is_deterministic_for_a_seed() {
        let gt = image_with_foreground(32, 32, &[(1, 1), (5, 9), (20, 20), (31, 0)]);
        let a = draw_loss_pixels(&gt, 4096, &mut crate::rng::seeded(9)).unwrap();
        let b = draw_loss_pixels(&gt, 4096, &mut crate::rng::seeded(9)).unwrap();
        assert_eq!(a.pixels, b.pixels);
        let c = draw_loss_pixels(&gt, 4096, &mut crate::rng::seeded(10)).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn draw_is_balanced_and_without_replacement() {
        let fg: Vec<(u32, u32)> = (0..40).map(|i| (i % 32, i / 32)).collect();
        let gt = image_with_foreground(32, 32, &fg);
        let draw = draw_loss_pixels(&gt, 4096, &mut crate::rng::seeded(3)).unwrap();
        assert!(!draw.fallback);
        // n = min(40, 1024-40, 4096) = 40 per class.
        assert_eq!(draw.pixels.len(), 80);
        let distinct: HashSet<u32> = draw.pixels.iter().copied().collect();
        assert_eq!(distinct.len(), 80);
        let n_fg = draw
            .pixels
            .iter()
            .filter(|&&p| gt.get_flat(p as usize) > FOREGROUND_THRESHOLD)
            .count();
        assert_eq!(n_fg, 40);
    }

    #[test]
    fn draw_respects_the_cap() {
        let fg: Vec<(u32, u32)> = (0..200).map(|i| (i % 64, i / 64)).collect();
        let gt = image_with_foreground(64, 64, &fg);
        let draw = draw_loss_pixels(&gt, 16, &mut crate::rng::seeded(4)).unwrap();
        assert_eq!(draw.pixels.len(), 32);
    }

    #[test]
    fn empty_foreground_falls_back_to_uniform() {
        let gt = EdgeImage::zeros(16, 16);
        let draw = draw_loss_pixels(&gt, 4096, &mut crate::rng::seeded(5)).unwrap();
        assert!(draw.fallback);
        // n = min(256/2, 4096) = 128 → 256 pixels = the whole image.
        assert_eq!(draw.pixels.len(), 256);
        let distinct: HashSet<u32> = draw.pixels.iter().copied().collect();
        assert_eq!(distinct.len(), 256);
    }

    #[test]
    fn loss_is_zero_on_identical_images() {
        let gt = image_with_foreground(16, 16, &[(2, 3), (10, 11)]);
        let res = sampled_l1_loss(&gt.clone(), &gt, 4096, &mut crate::rng::seeded(6)).unwrap();
        assert_eq!(res.loss, 0.0);
        assert!(res.dl_di.is_empty());
    }

    #[test]
    fn loss_matches_hand_computed_value() {
        // 2×2 target: one foreground pixel; rendered differs everywhere by
        // known amounts. n = min(1, 3, 4096) = 1 per class → 2n = 2 pixels.
        let gt = image_with_foreground(2, 2, &[(0, 0)]);
        let mut rendered = EdgeImage::zeros(2, 2);
        rendered.set(0, 0, 0.25); // |0.25 − 1| = 0.75 at the fg pixel
        rendered.set(1, 0, 0.5);
        rendered.set(0, 1, 0.5);
        rendered.set(1, 1, 0.5); // every bg pixel differs by 0.5
        let res = sampled_l1_loss(&rendered, &gt, 4096, &mut crate::rng::seeded(7)).unwrap();
        // Whichever bg pixel is drawn: L = (0.75 + 0.5)/2.
        assert_abs_diff_eq!(res.loss, 0.625, epsilon = 1e-15);
        assert_eq!(res.dl_di.len(), 2);
        for &(p, g) in &res.dl_di {
            let expect = if p == 0 { -0.5 } else { 0.5 };
            assert_abs_diff_eq!(g, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let fg: Vec<(u32, u32)> = (0..12).map(|i| (i, i)).collect();
        let gt = image_with_foreground(16, 16, &fg);
        let mut rendered = EdgeImage::zeros(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                rendered.set(x, y, ((x * 7 + y * 3) % 10) as f64 / 20.0 + 0.2);
            }
        }
        let draw = draw_loss_pixels(&gt, 4096, &mut crate::rng::seeded(8)).unwrap();
        let values: Vec<f64> = draw.pixels.iter().map(|&p| rendered.get_flat(p as usize)).collect();
        let (_, grads) = l1_loss_and_grad(&values, &gt, &draw).unwrap();
        let h = 1e-6;
        for &(p, g) in &grads {
            let i = draw.pixels.iter().position(|&q| q == p).unwrap();
            let mut hi = values.clone();
            let mut lo = values.clone();
            hi[i] += h;
            lo[i] -= h;
            let (lh, _) = l1_loss_and_grad(&hi, &gt, &draw).unwrap();
            let (ll, _) = l1_loss_and_grad(&lo, &gt, &draw).unwrap();
            assert_abs_diff_eq!(g, (lh - ll) / (2.0 * h), epsilon = 1e-9);
        }
    }

    #[test]
    fn mismatched_sizes_are_a_contract_error() {
        let a = EdgeImage::zeros(4, 4);
        let b = EdgeImage::zeros(4, 5);
        assert!(matches!(
            sampled_l1_loss(&a, &b, 64, &mut crate::rng::seeded(1)),
            Err(Error::Contract(_))
        ));
    }
}
