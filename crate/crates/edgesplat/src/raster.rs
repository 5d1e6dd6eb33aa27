//! Differentiable Gaussian splatting of sketch samples.
//!
//! Every arc-length sample becomes an anisotropic 3D Gaussian whose principal
//! axis is the local curve tangent: `Σ = R·diag(s²)·Rᵀ` with `R = [t | u | v]`
//! a deterministic tangent-aligned frame. Projection is the standard EWA
//! first-order approximation `cov2d = (J W Σ Wᵀ Jᵀ)₂ₓ₂` plus a fixed low-pass
//! term on the diagonal so splats never fall below pixel size. Rendering
//! composites splats per pixel in front-to-back depth order:
//!
//! `I(p) = Σ_i α_i Π_{j<i} (1 - α_j)`,  `α_i = o_i · exp(-½ dᵀ cov2d⁻¹ d)`
//!
//! with α clamped to 0.99 and contributions below 1/255 skipped. The forward
//! pass is tiled (16×16) but pixel-exact up to the skip threshold; the
//! backward pass replays each contributing pixel and propagates analytic
//! gradients back to the gaussian's generating parameters (mean, unit
//! tangent, log-scale, raw opacity).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::camera::{Camera, NEAR_PLANE};
use crate::error::{Error, Result};
use crate::image::EdgeImage;
use crate::sketch::SamplePoint;

/// Low-pass term added to both cov2d diagonal entries (pixels²).
pub const LOW_PASS: f64 = 0.3;

/// Per-pixel contributions with α below this are skipped by the tiled path.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;

/// Upper clamp on α.
pub const ALPHA_CLAMP: f64 = 0.99;

/// Tile edge length in pixels.
pub const TILE_SIZE: u32 = 16;

/// Ellipse radius (in standard deviations) used for image-rectangle culling.
pub const CULL_SIGMA: f64 = 3.0;

/// Beyond this Mahalanobis-squared distance `exp(-q/2)` underflows to exactly
/// 0.0 in f64, so skipping the evaluation is a bit-exact shortcut.
const Q_UNDERFLOW: f64 = 1500.0;

// ---------------------------------------------------------------------------
// Splat construction
// ---------------------------------------------------------------------------

/// A 3D splat plus the generating parameters needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    /// World-space covariance `R diag(s²) Rᵀ` (symmetric PSD).
    pub cov: Matrix3<f64>,
    /// Effective opacity in (0,1).
    pub opacity: f64,
    /// Owning sketch within its `SketchSet`.
    pub sketch_id: usize,
    /// Curve parameter the sample was taken at.
    pub sample_t: f64,
    /// Tangent the frame was built from (unit for non-degenerate samples).
    pub tangent: Vector3<f64>,
    /// Effective scale (meters).
    pub scale: Vector3<f64>,
    /// Degenerate samples get no tangent gradient (the fallback is constant).
    pub degenerate_tangent: bool,
}

/// Deterministic tangent-aligned frame: columns `[t | u | v]` with
/// `u = normalize(t × a)`, where `a = +z` unless `|t·z| > 0.9` (then `a = +x`),
/// and `v = t × u`.
pub fn tangent_frame(t: &Vector3<f64>) -> Matrix3<f64> {
    let a = frame_axis(t);
    let c = t.cross(&a);
    let u = c / c.norm();
    let v = t.cross(&u);
    Matrix3::from_columns(&[*t, u, v])
}

fn frame_axis(t: &Vector3<f64>) -> Vector3<f64> {
    if t.z.abs() > 0.9 {
        Vector3::x()
    } else {
        Vector3::z()
    }
}

/// Builds the tangent-aligned splat for one sample.
pub fn build_gaussian(sample: &SamplePoint, scale: Vector3<f64>, opacity: f64) -> Result<Gaussian3D> {
    if !(opacity > 0.0 && opacity < 1.0) {
        return Err(Error::contract(format!("opacity must lie in (0,1), got {opacity}")));
    }
    if !scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
        return Err(Error::contract(format!("scale must be positive and finite, got {scale:?}")));
    }
    let r = tangent_frame(&sample.tangent);
    let d = Matrix3::from_diagonal(&scale.component_mul(&scale));
    let cov = r * d * r.transpose();
    // Symmetrize to keep the invariant exact under roundoff.
    let cov = 0.5 * (cov + cov.transpose());
    Ok(Gaussian3D {
        mean: sample.position,
        cov,
        opacity,
        sketch_id: sample.sketch_id,
        sample_t: sample.t,
        tangent: sample.tangent,
        scale,
        degenerate_tangent: sample.degenerate,
    })
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// A projected splat. `cov2d` is stored as `[xx, xy, yy]`.
#[derive(Debug, Clone)]
pub struct Gaussian2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: [f64; 3],
    /// Camera-space z of the mean.
    pub depth: f64,
    pub opacity: f64,
}

impl Gaussian2D {
    pub fn cov2d_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov2d[0], self.cov2d[1], self.cov2d[1], self.cov2d[2])
    }
}

#[derive(Debug, Clone)]
pub enum Projection {
    Splat(Gaussian2D),
    /// Behind the near plane, or the 3σ ellipse misses the image rectangle.
    Culled,
}

/// Perspective Jacobian of the pinhole projection at camera-space point `pc`.
fn projection_jacobian(cam: &Camera, pc: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let z = pc.z;
    nalgebra::Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * pc.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * pc.y / (z * z),
    )
}

/// EWA projection of one splat; see the module docs for the formula.
pub fn project_gaussian(g: &Gaussian3D, cam: &Camera) -> Result<Projection> {
    if !g.mean.iter().all(|v| v.is_finite()) || !g.cov.iter().all(|v| v.is_finite()) {
        return Err(Error::contract("gaussian mean/cov must be finite"));
    }
    let pc = cam.to_cam(&g.mean);
    if pc.z <= NEAR_PLANE {
        return Ok(Projection::Culled);
    }
    let uv = cam.project_cam(&pc);
    let j = projection_jacobian(cam, &pc);
    let m = cam.rot * g.cov * cam.rot.transpose();
    let c2 = j * m * j.transpose();
    let cov2d = [
        c2[(0, 0)] + LOW_PASS,
        0.5 * (c2[(0, 1)] + c2[(1, 0)]),
        c2[(1, 1)] + LOW_PASS,
    ];
    if !cov2d.iter().all(|v| v.is_finite()) || !uv.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("projected gaussian is non-finite"));
    }
    // Axis-aligned extent of the 3σ ellipse: the q = (3σ)² level set of the
    // quadratic form spans exactly ±3√cov_xx horizontally (±3√cov_yy vertically).
    let rx = CULL_SIGMA * cov2d[0].sqrt();
    let ry = CULL_SIGMA * cov2d[2].sqrt();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if uv.x + rx < 0.0 || uv.x - rx > w || uv.y + ry < 0.0 || uv.y - ry > h {
        return Ok(Projection::Culled);
    }
    Ok(Projection::Splat(Gaussian2D {
        mean2d: uv,
        cov2d,
        depth: pc.z,
        opacity: g.opacity,
    }))
}

// ---------------------------------------------------------------------------
// Prepared splats and tiling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct PreparedSplat {
    /// Index into the caller's gaussian slice.
    src: u32,
    mean: Vector2<f64>,
    /// Conic (inverse cov2d) as `[a, b, c]`: `q = a·dx² + 2b·dx·dy + c·dy²`.
    conic: [f64; 3],
    opacity: f64,
    depth: f64,
    /// Skip threshold in Mahalanobis-squared form: `α < ALPHA_SKIP ⇔ q > q_skip`.
    q_skip: f64,
    /// Inclusive pixel bounds of the α ≥ ALPHA_SKIP support (conservative).
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

fn invert_cov2d(cov2d: &[f64; 3]) -> Result<[f64; 3]> {
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 1e-12) {
        return Err(Error::numerical(format!(
            "cov2d is not invertible after low-pass (det = {det:.3e})"
        )));
    }
    Ok([cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det])
}

/// Projection + conic + support box for every splat; culled entries dropped.
fn prepare_splats(gaussians: &[Gaussian3D], cam: &Camera) -> Result<Vec<PreparedSplat>> {
    let mut out = Vec::with_capacity(gaussians.len());
    // Support box margin: choose the box so that everything outside it has
    // α < ALPHA_SKIP/2 — strictly inside the skip threshold, so box
    // truncation changes nothing the in-loop α test would keep.
    let tau_box = 0.5 * ALPHA_SKIP;
    for (i, g) in gaussians.iter().enumerate() {
        let g2 = match project_gaussian(g, cam)? {
            Projection::Splat(g2) => g2,
            Projection::Culled => continue,
        };
        if g2.opacity <= tau_box {
            continue; // α < skip threshold everywhere
        }
        let conic = invert_cov2d(&g2.cov2d)?;
        let q_skip = 2.0 * (g2.opacity / ALPHA_SKIP).ln();
        let q_box = 2.0 * (g2.opacity / tau_box).ln();
        // Largest eigenvalue of cov2d bounds the support radius:
        // q ≥ |d|²/λmax, so |d| > √(q_box·λmax) ⇒ q > q_box.
        let (a, b, c) = (g2.cov2d[0], g2.cov2d[1], g2.cov2d[2]);
        let lam_max = 0.5 * ((a + c) + ((a - c) * (a - c) + 4.0 * b * b).sqrt());
        let r = (q_box * lam_max).sqrt();
        let (w, h) = (cam.width as i64, cam.height as i64);
        let x0 = (g2.mean2d.x - r).floor() as i64;
        let x1 = (g2.mean2d.x + r).floor() as i64;
        let y0 = (g2.mean2d.y - r).floor() as i64;
        let y1 = (g2.mean2d.y + r).floor() as i64;
        if x1 < 0 || y1 < 0 || x0 >= w || y0 >= h {
            continue;
        }
        out.push(PreparedSplat {
            src: i as u32,
            mean: g2.mean2d,
            conic,
            opacity: g2.opacity,
            depth: g2.depth,
            q_skip,
            x0: x0.clamp(0, w - 1) as u32,
            x1: x1.clamp(0, w - 1) as u32,
            y0: y0.clamp(0, h - 1) as u32,
            y1: y1.clamp(0, h - 1) as u32,
        });
    }
    Ok(out)
}

/// Tiled, depth-sorted view of a splat set — the unit the forward pixel
/// evaluations and the backward pass share.
pub struct RenderContext {
    width: u32,
    height: u32,
    tiles_x: u32,
    splats: Vec<PreparedSplat>,
    /// CSR layout: `tile_items[tile_off[t]..tile_off[t+1]]` are indices into
    /// `splats`, sorted by (depth, source index) ascending.
    tile_off: Vec<u32>,
    tile_items: Vec<u32>,
}

impl RenderContext {
    pub fn new(gaussians: &[Gaussian3D], cam: &Camera) -> Result<Self> {
        let splats = prepare_splats(gaussians, cam)?;
        let (width, height) = (cam.width, cam.height);
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let n_tiles = (tiles_x * tiles_y) as usize;

        let mut counts = vec![0u32; n_tiles];
        let tile_range = |s: &PreparedSplat| {
            (
                s.x0 / TILE_SIZE,
                s.x1 / TILE_SIZE,
                s.y0 / TILE_SIZE,
                s.y1 / TILE_SIZE,
            )
        };
        for s in &splats {
            let (tx0, tx1, ty0, ty1) = tile_range(s);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    counts[(ty * tiles_x + tx) as usize] += 1;
                }
            }
        }
        let mut tile_off = vec![0u32; n_tiles + 1];
        for t in 0..n_tiles {
            tile_off[t + 1] = tile_off[t] + counts[t];
        }
        let mut cursor: Vec<u32> = tile_off[..n_tiles].to_vec();
        let mut tile_items = vec![0u32; tile_off[n_tiles] as usize];
        for (i, s) in splats.iter().enumerate() {
            let (tx0, tx1, ty0, ty1) = tile_range(s);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    let t = (ty * tiles_x + tx) as usize;
                    tile_items[cursor[t] as usize] = i as u32;
                    cursor[t] += 1;
                }
            }
        }
        for t in 0..n_tiles {
            let seg = &mut tile_items[tile_off[t] as usize..tile_off[t + 1] as usize];
            seg.sort_unstable_by(|&l, &r| {
                let (a, b) = (&splats[l as usize], &splats[r as usize]);
                a.depth
                    .total_cmp(&b.depth)
                    .then_with(|| a.src.cmp(&b.src))
            });
        }
        Ok(Self {
            width,
            height,
            tiles_x,
            splats,
            tile_off,
            tile_items,
        })
    }

    #[inline]
    fn tile_of(&self, px: u32, py: u32) -> usize {
        ((py / TILE_SIZE) * self.tiles_x + px / TILE_SIZE) as usize
    }

    #[inline]
    fn tile_list(&self, tile: usize) -> &[u32] {
        &self.tile_items[self.tile_off[tile] as usize..self.tile_off[tile + 1] as usize]
    }

    /// Front-to-back composited intensity at one pixel.
    ///
    /// Evaluated as 1 − ∏(1−αᵢ), the telescoped form of Σ αᵢ·Tᵢ: identical in
    /// exact arithmetic, but structurally confined to [0, 1] where the running
    /// sum can drift a few ulps above 1 under hundreds of near-opaque splats.
    pub fn pixel(&self, px: u32, py: u32) -> f64 {
        let (cxp, cyp) = (px as f64 + 0.5, py as f64 + 0.5);
        let mut trans = 1.0;
        for &si in self.tile_list(self.tile_of(px, py)) {
            let s = &self.splats[si as usize];
            if px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1 {
                continue;
            }
            let dx = cxp - s.mean.x;
            let dy = cyp - s.mean.y;
            let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
            if q > s.q_skip {
                continue; // α < ALPHA_SKIP
            }
            let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP);
            trans *= 1.0 - alpha;
        }
        1.0 - trans
    }

    pub fn full_image(&self) -> EdgeImage {
        let mut img = EdgeImage::zeros(self.width, self.height);
        for py in 0..self.height {
            for px in 0..self.width {
                img.set(px, py, self.pixel(px, py));
            }
        }
        img
    }

    /// Number of splats that survived culling.
    pub fn live_splats(&self) -> usize {
        self.splats.len()
    }
}

// ---------------------------------------------------------------------------
// Public forward entry points
// ---------------------------------------------------------------------------

/// Tiled forward render of the full image.
pub fn render(gaussians: &[Gaussian3D], cam: &Camera) -> Result<EdgeImage> {
    Ok(RenderContext::new(gaussians, cam)?.full_image())
}

/// Tiled forward render restricted to the given flat pixel indices. Values
/// are bit-identical to the corresponding [`render`] pixels.
pub fn render_pixels(gaussians: &[Gaussian3D], cam: &Camera, pixels: &[u32]) -> Result<Vec<f64>> {
    let ctx = RenderContext::new(gaussians, cam)?;
    pixels
        .iter()
        .map(|&p| {
            if p >= cam.width * cam.height {
                return Err(Error::contract(format!("pixel index {p} out of range")));
            }
            Ok(ctx.pixel(p % cam.width, p / cam.width))
        })
        .collect()
}

/// Per-pixel reference renderer: mathematically identical compositing with no
/// tiling, no α skip threshold and exact global depth sorting. Used as the
/// oracle the tiled path must match to within the skip-threshold bound.
pub fn reference_render(gaussians: &[Gaussian3D], cam: &Camera) -> Result<EdgeImage> {
    struct Ref {
        mean: Vector2<f64>,
        conic: [f64; 3],
        opacity: f64,
    }
    let mut refs: Vec<(f64, u32, Ref)> = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        if let Projection::Splat(g2) = project_gaussian(g, cam)? {
            let conic = invert_cov2d(&g2.cov2d)?;
            refs.push((
                g2.depth,
                i as u32,
                Ref {
                    mean: g2.mean2d,
                    conic,
                    opacity: g2.opacity,
                },
            ));
        }
    }
    refs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut img = EdgeImage::zeros(cam.width, cam.height);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (cxp, cyp) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut trans = 1.0;
            for (_, _, s) in &refs {
                let dx = cxp - s.mean.x;
                let dy = cyp - s.mean.y;
                let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                if q > Q_UNDERFLOW {
                    continue; // exp(-q/2) is exactly 0.0 here
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP);
                trans *= 1.0 - alpha;
            }
            img.set(px, py, 1.0 - trans);
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Gradients w.r.t. one gaussian's generating parameters.
///
/// `d_tangent` is taken w.r.t. the tangent vector as consumed by
/// [`tangent_frame`] (callers chain through the curve-derivative
/// normalization); `d_log_scale` w.r.t. the raw log-scale; `d_raw_opacity`
/// w.r.t. the raw (pre-sigmoid) opacity.
#[derive(Debug, Clone, Default)]
pub struct GaussianGrad {
    pub d_mean: Vector3<f64>,
    pub d_tangent: Vector3<f64>,
    pub d_log_scale: Vector3<f64>,
    pub d_raw_opacity: f64,
}

fn cross_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[derive(Clone, Default)]
struct SplatAccum {
    d_opacity: f64,
    d_mean2d: Vector2<f64>,
    /// dL/dΛ in full-matrix convention (symmetric).
    d_conic: Matrix2<f64>,
    touched: bool,
}

impl RenderContext {
    /// Backward pass for a sparse image gradient `dl_di` (flat pixel index,
    /// ∂L/∂I). Returns one gradient record per input gaussian; culled or
    /// untouched splats get zeros.
    pub fn backward(
        &self,
        gaussians: &[Gaussian3D],
        cam: &Camera,
        dl_di: &[(u32, f64)],
    ) -> Result<Vec<GaussianGrad>> {
        let mut accum = vec![SplatAccum::default(); self.splats.len()];
        // Per-pixel replay buffer: (splat index, alpha, g, transmittance).
        let mut entries: Vec<(u32, f64, f64, f64)> = Vec::with_capacity(64);

        for &(pix, grad) in dl_di {
            if pix >= self.width * self.height {
                return Err(Error::contract(format!("pixel index {pix} out of range")));
            }
            if grad == 0.0 {
                continue;
            }
            let (px, py) = (pix % self.width, pix / self.width);
            let (cxp, cyp) = (px as f64 + 0.5, py as f64 + 0.5);

            entries.clear();
            let mut trans = 1.0;
            for &si in self.tile_list(self.tile_of(px, py)) {
                let s = &self.splats[si as usize];
                if px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1 {
                    continue;
                }
                let dx = cxp - s.mean.x;
                let dy = cyp - s.mean.y;
                let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                if q > s.q_skip {
                    continue;
                }
                let g = (-0.5 * q).exp();
                let alpha = (s.opacity * g).min(ALPHA_CLAMP);
                entries.push((si, alpha, g, trans));
                trans *= 1.0 - alpha;
            }

            // Suffix sums of the contributions give
            // ∂I/∂α_i = T_i − (Σ_{k>i} α_k T_k) / (1 − α_i).
            let mut suffix = 0.0;
            for &(si, alpha, g, t_i) in entries.iter().rev() {
                let di_dalpha = t_i - suffix / (1.0 - alpha);
                suffix += alpha * t_i;
                let dl_dalpha = grad * di_dalpha;
                if s_clamped(&self.splats[si as usize], g) {
                    continue; // α pinned at the clamp: zero local derivative
                }
                let s = &self.splats[si as usize];
                let a = &mut accum[si as usize];
                let dx = cxp - s.mean.x;
                let dy = cyp - s.mean.y;
                a.touched = true;
                a.d_opacity += dl_dalpha * g;
                // α = o·exp(-q/2) ⇒ ∂α/∂q = -α/2.
                let gq = dl_dalpha * s.opacity * g * (-0.5);
                // q = dᵀΛd with d = p − mean ⇒ ∂q/∂mean = −2Λd.
                let lam_d = Vector2::new(
                    s.conic[0] * dx + s.conic[1] * dy,
                    s.conic[1] * dx + s.conic[2] * dy,
                );
                a.d_mean2d += gq * -2.0 * lam_d;
                // ∂q/∂Λ = d dᵀ (full-matrix convention).
                a.d_conic += gq * Matrix2::new(dx * dx, dx * dy, dx * dy, dy * dy);
            }
        }

        let mut grads = vec![GaussianGrad::default(); gaussians.len()];
        for (si, acc) in accum.iter().enumerate() {
            if !acc.touched {
                continue;
            }
            let s = &self.splats[si];
            let g3 = &gaussians[s.src as usize];
            grads[s.src as usize] = backprop_splat(g3, cam, s, acc);
        }
        Ok(grads)
    }
}

#[inline]
fn s_clamped(s: &PreparedSplat, g: f64) -> bool {
    s.opacity * g > ALPHA_CLAMP
}

/// Chains accumulated 2D gradients back to the gaussian's parameters.
fn backprop_splat(
    g3: &Gaussian3D,
    cam: &Camera,
    s: &PreparedSplat,
    acc: &SplatAccum,
) -> GaussianGrad {
    let pc = cam.to_cam(&g3.mean);
    let z = pc.z;
    let lam = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);

    // Λ = C⁻¹ ⇒ dL/dC = −Λ · (dL/dΛ) · Λ (Λ symmetric).
    let d_cov2d = -lam * acc.d_conic * lam;

    let j = projection_jacobian(cam, &pc);
    let m = cam.rot * g3.cov * cam.rot.transpose();

    // C = J M Jᵀ (+ const): dL/dM = Jᵀ dC J, dL/dJ = 2 dC J M (dC, M symmetric).
    let d_m = j.transpose() * d_cov2d * j;
    let d_sigma = cam.rot.transpose() * d_m * cam.rot;
    let d_j = 2.0 * d_cov2d * j * m;

    // J's dependence on the camera-space mean.
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_pc = Vector3::new(
        d_j[(0, 2)] * (-cam.fx / z2),
        d_j[(1, 2)] * (-cam.fy / z2),
        d_j[(0, 0)] * (-cam.fx / z2)
            + d_j[(1, 1)] * (-cam.fy / z2)
            + d_j[(0, 2)] * (2.0 * cam.fx * pc.x / z3)
            + d_j[(1, 2)] * (2.0 * cam.fy * pc.y / z3),
    );
    // Pinhole mean: u = fx·x/z + cx, v = fy·y/z + cy.
    d_pc.x += acc.d_mean2d.x * cam.fx / z;
    d_pc.y += acc.d_mean2d.y * cam.fy / z;
    d_pc.z += -acc.d_mean2d.x * cam.fx * pc.x / z2 - acc.d_mean2d.y * cam.fy * pc.y / z2;

    let d_mean = cam.rot.transpose() * d_pc;

    // Σ = R diag(s²) Rᵀ.
    let r = tangent_frame(&g3.tangent);
    let s2 = g3.scale.component_mul(&g3.scale);
    let m_rd = r.transpose() * d_sigma * r;
    // d/d(log s_k): s_k = exp(raw) ⇒ dΣ/d raw_k chain gives 2 s_k² M_kk.
    let d_log_scale = Vector3::new(
        2.0 * s2.x * m_rd[(0, 0)],
        2.0 * s2.y * m_rd[(1, 1)],
        2.0 * s2.z * m_rd[(2, 2)],
    );
    let d_r = 2.0 * d_sigma * r * Matrix3::from_diagonal(&s2);

    // Frame chain: R = [t | u | v], u = (t×a)/|t×a|, v = t×u.
    let d_tangent = if g3.degenerate_tangent {
        Vector3::zeros()
    } else {
        let t = g3.tangent;
        let a = frame_axis(&t);
        let c = t.cross(&a);
        let n = c.norm();
        let u = c / n;
        let g1 = d_r.column(0).into_owned();
        let g2 = d_r.column(1).into_owned();
        let g3c = d_r.column(2).into_owned();
        // v = t×u = [t]×u ⇒ dL/du += [t]×ᵀ g3 = −[t]× g3.
        let d_u = g2 - cross_matrix(&t) * g3c;
        // u = c/|c| ⇒ dL/dc = (I − uuᵀ)/|c| · dL/du.
        let d_c = (Matrix3::identity() - u * u.transpose()) * d_u / n;
        // c = t×a = −[a]×t ⇒ dL/dt += [a]× dL/dc; v = −[u]×t ⇒ dL/dt += [u]× g3.
        g1 + cross_matrix(&a) * d_c + cross_matrix(&u) * g3c
    };

    let o = g3.opacity;
    GaussianGrad {
        d_mean,
        d_tangent,
        d_log_scale,
        d_raw_opacity: acc.d_opacity * o * (1.0 - o),
    }
}

/// Backward pass entry point matching [`render`]: `dl_di` holds
/// `(flat pixel index, ∂L/∂I)` pairs for the pixels with non-zero gradient.
pub fn render_backward(
    gaussians: &[Gaussian3D],
    cam: &Camera,
    dl_di: &[(u32, f64)],
) -> Result<Vec<GaussianGrad>> {
    RenderContext::new(gaussians, cam)?.backward(gaussians, cam, dl_di)
}

// ---------------------------------------------------------------------------
