//! Scene assembly: unit-cube normalization, synthetic edge sets with camera
//! rigs and rendered supervision views, and initialization perturbations.
//!
//! A [`Scene`] bundles the working sketch set with its cameras, per-view
//! target images, and (optionally) ground-truth sketches for evaluation.
//! [`normalize_scene`] rescales everything so the content's longest axis spans
//! 1 m centered in the unit cube; the similarity transform is stored so
//! exports can restore the original units. Because cameras are carried along
//! (same rotation, rescaled center) and splat thickness scales with the
//! geometry, rendered images are invariant under normalization.

use nalgebra::Vector3;
use rand::Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::EdgeImage;
use crate::optim::{build_splats, epoch_plans};
use crate::raster::render;
use crate::rng;
use crate::sketch::{Aabb, ControlPointPool, Sketch, SketchKind, SketchSet};

/// Default number of synthetic views.
pub const DEFAULT_VIEWS: usize = 50;
/// Default synthetic image side length in pixels.
pub const DEFAULT_IMAGE_SIZE: u32 = 256;
/// Effective opacity of ground-truth splats.
pub const DEFAULT_GT_OPACITY: f64 = 0.95;
/// Arc-length step for rendering supervision views. Finer than the training
/// step so the stroke is supersampled relative to the pixel grid and piecewise
/// re-parameterizations (fragmented initializations) render identically.
pub const GT_SAMPLE_STEP: f64 = 0.002;
/// Camera orbit radius around the scene center, in scene units (meters).
pub const CAMERA_RADIUS: f64 = 2.4;
/// Focal length per pixel of the smaller image dimension (280 px at 256²).
pub const FOCAL_SCALE: f64 = 280.0 / 256.0;

/// Ground-truth splat scale: 2 mm along the stroke, 0.5 mm across.
pub fn default_gt_scale() -> Vector3<f64> {
    Vector3::new(0.002, 0.0005, 0.0005)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Uniform scale-then-offset similarity: `p ↦ scale·p + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneTransform {
    pub scale: f64,
    pub offset: Vector3<f64>,
}

impl Default for SceneTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SceneTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, offset: Vector3::zeros() }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.offset == Vector3::zeros()
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.scale * p + self.offset
    }

    /// Exact inverse transform (maps normalized coordinates back to input).
    pub fn inverse(&self) -> SceneTransform {
        SceneTransform { scale: 1.0 / self.scale, offset: -self.offset / self.scale }
    }

    /// The transform equivalent to applying `self` first, then `next`.
    pub fn then(&self, next: &SceneTransform) -> SceneTransform {
        SceneTransform {
            scale: next.scale * self.scale,
            offset: next.scale * self.offset + next.offset,
        }
    }
}

/// Transforms a camera so it views the transformed scene identically: the
/// rotation is unchanged and the camera center moves with the similarity, so
/// camera-space points scale uniformly and projections are preserved.
pub fn transform_camera(cam: &Camera, t: &SceneTransform) -> Result<Camera> {
    let trans = t.scale * cam.trans - cam.rot * t.offset;
    // The rotation was validated when `cam` was built (possibly at the looser
    // file tolerance) and is untouched here, so revalidate at that tolerance.
    Camera::with_rotation_tolerance(
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        cam.rot,
        trans,
        crate::camera::ROT_ORTHO_TOL_FILE,
    )
}

/// Applies a similarity to a sketch set in place: live and dead points both
/// move, and every sketch's log-scale shifts by `ln(scale)` so splat thickness
/// stays proportional to the geometry.
pub fn transform_set(set: &mut SketchSet, t: &SceneTransform) {
    for idx in 0..set.pool.len() {
        let p = set.pool.pos(idx);
        set.pool.set(idx, t.apply(p));
    }
    let log_s = t.scale.ln();
    for sketch in &mut set.sketches {
        sketch.raw_log_scale += Vector3::repeat(log_s);
    }
}

/// A sketch set with its viewing rig, per-view target images, optional
/// ground-truth sketches, and the normalization applied since load.
#[derive(Debug, Clone)]
pub struct Scene {
    pub set: SketchSet,
    pub cameras: Vec<Camera>,
    /// Per-view supervision images, parallel to `cameras` (may be empty).
    pub targets: Vec<EdgeImage>,
    /// Ground-truth sketches for evaluation, if known.
    pub gt: Option<SketchSet>,
    /// Maps coordinates as loaded to the current (normalized) coordinates.
    pub transform: SceneTransform,
}

fn live_points_aabb(set: &SketchSet, aabb: &mut Aabb) {
    for idx in set.pool.live_indices() {
        aabb.include(set.pool.pos(idx));
    }
}

/// Rescales the scene so the content AABB's longest axis spans 1 m, centered
/// at (0.5, 0.5, 0.5). Points, splat scales, and cameras all move together,
/// so rendered views are unchanged. Returns the transform applied by this
/// call; the scene's stored transform accumulates it.
pub fn normalize_scene(scene: &mut Scene) -> Result<SceneTransform> {
    let mut aabb = Aabb::empty();
    live_points_aabb(&scene.set, &mut aabb);
    if let Some(gt) = &scene.gt {
        live_points_aabb(gt, &mut aabb);
    }
    if aabb.is_empty() {
        return Err(Error::contract("cannot normalize a scene with no live points"));
    }
    let extent = aabb.extent();
    let longest = extent.x.max(extent.y).max(extent.z);
    if !(longest > 0.0 && longest.is_finite()) {
        return Err(Error::contract(format!(
            "cannot normalize a zero-extent scene (extent {extent:?})"
        )));
    }

    let scale = 1.0 / longest;
    let offset = Vector3::repeat(0.5) - scale * aabb.center();
    let applied = SceneTransform { scale, offset };

    transform_set(&mut scene.set, &applied);
    if let Some(gt) = &mut scene.gt {
        transform_set(gt, &applied);
    }
    for cam in &mut scene.cameras {
        *cam = transform_camera(cam, &applied)?;
    }
    scene.transform = scene.transform.then(&applied);
    Ok(applied)
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Shape of the synthetic ground-truth edge set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticShape {
    /// 12 unit-cube edges (lines only).
    Cube,
    /// 9 edges of a triangular prism (lines only).
    Prism,
    /// 8 cubic Bézier spokes around the scene center.
    BezierStar,
    /// Cube and Bézier star combined.
    Mixed,
}

impl std::fmt::Display for SyntheticShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cube => "cube",
            Self::Prism => "prism",
            Self::BezierStar => "bezier_star",
            Self::Mixed => "mixed",
        })
    }
}

impl std::str::FromStr for SyntheticShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(Self::Cube),
            "prism" => Ok(Self::Prism),
            "bezier_star" => Ok(Self::BezierStar),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::contract(format!(
                "unknown shape '{other}' (expected cube, prism, bezier_star, or mixed)"
            ))),
        }
    }
}

/// Recipe for a synthetic scene: shape, viewing rig, and splat appearance.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub shape: SyntheticShape,
    pub n_views: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Splat scale of the ground-truth strokes (meters, along/across/across).
    pub gt_scale: Vector3<f64>,
    pub gt_opacity: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            shape: SyntheticShape::Cube,
            n_views: DEFAULT_VIEWS,
            width: DEFAULT_IMAGE_SIZE,
            height: DEFAULT_IMAGE_SIZE,
            seed: 0,
            gt_scale: default_gt_scale(),
            gt_opacity: DEFAULT_GT_OPACITY,
        }
    }
}

fn push_line(
    pool: &mut ControlPointPool,
    sketches: &mut Vec<Sketch>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    opacity: f64,
    scale: Vector3<f64>,
) -> Result<()> {
    let i = pool.add(a);
    let j = pool.add(b);
    sketches.push(Sketch::line(i, j, opacity, scale)?);
    Ok(())
}

fn cube_edges(pool: &mut ControlPointPool, out: &mut Vec<Sketch>, spec: &SyntheticSpec) -> Result<()> {
    let corner = |mask: usize| {
        Vector3::new(
            (mask & 1) as f64,
            ((mask >> 1) & 1) as f64,
            ((mask >> 2) & 1) as f64,
        )
    };
    // Every pair of corners differing in exactly one bit is a cube edge.
    for a in 0..8usize {
        for axis in 0..3 {
            let b = a ^ (1 << axis);
            if a < b {
                push_line(pool, out, corner(a), corner(b), spec.gt_opacity, spec.gt_scale)?;
            }
        }
    }
    Ok(())
}

fn prism_edges(pool: &mut ControlPointPool, out: &mut Vec<Sketch>, spec: &SyntheticSpec) -> Result<()> {
    let tri = [
        Vector3::new(0.08, 0.10, 0.0),
        Vector3::new(0.92, 0.10, 0.0),
        Vector3::new(0.50, 0.90, 0.0),
    ];
    let lift = |p: Vector3<f64>, z: f64| Vector3::new(p.x, p.y, z);
    let (z0, z1) = (0.08, 0.92);
    for k in 0..3 {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        push_line(pool, out, lift(a, z0), lift(b, z0), spec.gt_opacity, spec.gt_scale)?;
        push_line(pool, out, lift(a, z1), lift(b, z1), spec.gt_opacity, spec.gt_scale)?;
        push_line(pool, out, lift(a, z0), lift(a, z1), spec.gt_opacity, spec.gt_scale)?;
    }
    Ok(())
}

fn bezier_star_edges(
    pool: &mut ControlPointPool,
    out: &mut Vec<Sketch>,
    spec: &SyntheticSpec,
) -> Result<()> {
    let c = Vector3::new(0.5, 0.5, 0.5);
    let spoke = |radius: f64, theta: f64, dz: f64| {
        c + Vector3::new(radius * theta.cos(), radius * theta.sin(), dz)
    };
    for k in 0..8 {
        let theta = std::f64::consts::TAU * k as f64 / 8.0;
        // Inner endpoints sit on a 0.15 m ring, so adjacent spokes stay well
        // clear of the 10 mm endpoint-merge threshold.
        let p0 = spoke(0.15, theta, 0.08 * (2.0 * theta).sin());
        let p1 = spoke(0.26, theta + 0.35, 0.16 * (2.0 * theta + 0.9).sin());
        let p2 = spoke(0.37, theta - 0.25, -0.14 * (2.0 * theta + 0.4).sin());
        let p3 = spoke(0.46, theta, 0.18 * (2.0 * theta).cos());
        let i0 = pool.add(p0);
        let i1 = pool.add(p1);
        let i2 = pool.add(p2);
        let i3 = pool.add(p3);
        out.push(Sketch::bezier3(i0, i1, i2, i3, spec.gt_opacity, spec.gt_scale)?);
    }
    Ok(())
}

/// Ground-truth sketches for a synthetic shape. Construction is naive: every
/// edge owns fresh endpoints, so e.g. the cube carries 24 pool points over 8
/// distinct corners until an endpoint-merge pass unifies them.
pub fn synthetic_sketches(spec: &SyntheticSpec) -> Result<SketchSet> {
    let mut pool = ControlPointPool::new();
    let mut sketches = Vec::new();
    match spec.shape {
        SyntheticShape::Cube => cube_edges(&mut pool, &mut sketches, spec)?,
        SyntheticShape::Prism => prism_edges(&mut pool, &mut sketches, spec)?,
        SyntheticShape::BezierStar => bezier_star_edges(&mut pool, &mut sketches, spec)?,
        SyntheticShape::Mixed => {
            cube_edges(&mut pool, &mut sketches, spec)?;
            bezier_star_edges(&mut pool, &mut sketches, spec)?;
        }
    }
    let set = SketchSet::new(pool, sketches);
    set.validate()?;
    Ok(set)
}

/// Cameras on a Fibonacci sphere of radius [`CAMERA_RADIUS`] around the unit
/// cube center, all looking at the center. The seed rotates the whole
/// constellation about the vertical axis; everything else is deterministic.
pub fn fibonacci_cameras(n_views: usize, width: u32, height: u32, seed: u64) -> Result<Vec<Camera>> {
    if n_views < 2 {
        return Err(Error::contract(format!("need at least 2 views, got {n_views}")));
    }
    let center = Vector3::new(0.5, 0.5, 0.5);
    let f = FOCAL_SCALE * width.min(height) as f64;
    let phi0 = rng::derive(seed, 0xF1B0, 0).gen::<f64>() * std::f64::consts::TAU;
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());

    let mut cams = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n_views as f64;
        let ring = (1.0 - z * z).max(0.0).sqrt();
        let phi = phi0 + golden * i as f64;
        let pos = center + CAMERA_RADIUS * Vector3::new(ring * phi.cos(), ring * phi.sin(), z);
        cams.push(Camera::look_at(pos, center, Vector3::z(), f, f, width, height)?);
    }
    Ok(cams)
}

/// Renders one edge image per camera at the given arc-length sample step.
pub fn render_views(set: &SketchSet, cameras: &[Camera], step: f64) -> Result<Vec<EdgeImage>> {
    let plans = epoch_plans(set, step)?;
    let splats = build_splats(set, &plans)?;
    cameras.iter().map(|cam| render(&splats, cam)).collect()
}

/// Builds a full synthetic scene: ground-truth sketches, a camera rig, and
/// supervision views rendered by the forward rasterizer at [`GT_SAMPLE_STEP`].
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Scene> {
    if !(spec.gt_opacity > 0.0 && spec.gt_opacity < 1.0) {
        return Err(Error::contract(format!(
            "gt_opacity must lie strictly in (0,1), got {}",
            spec.gt_opacity
        )));
    }
    let set = synthetic_sketches(spec)?;
    let cameras = fibonacci_cameras(spec.n_views, spec.width, spec.height, spec.seed)?;
    let targets = render_views(&set, &cameras, GT_SAMPLE_STEP)?;
    Ok(Scene {
        gt: Some(set.clone()),
        set,
        cameras,
        targets,
        transform: SceneTransform::identity(),
    })
}

// ---------------------------------------------------------------------------
// Initialization perturbations
// ---------------------------------------------------------------------------

/// Copy of the set with i.i.d. Gaussian noise of standard deviation `sigma`
/// (scene units) added to every live control-point coordinate. Opacity and
/// scale are untouched; the same seed reproduces the same perturbation.
pub fn perturb_init(set: &SketchSet, sigma: f64, seed: u64) -> Result<SketchSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!("sigma must be non-negative, got {sigma}")));
    }
    let mut out = set.clone();
    let mut rng = rng::seeded(seed);
    for idx in 0..out.pool.len() {
        if !out.pool.is_alive(idx) {
            continue;
        }
        let mut p = out.pool.pos(idx);
        for axis in 0..3 {
            p[axis] += sigma * rng::standard_normal(&mut rng);
        }
        out.pool.set(idx, p);
    }
    Ok(out)
}

/// Cubic Bézier blossom: de Casteljau with a different parameter per level.
fn bezier3_blossom(c: &[Vector3<f64>; 4], t1: f64, t2: f64, t3: f64) -> Vector3<f64> {
    let a = [
        c[0].lerp(&c[1], t1),
        c[1].lerp(&c[2], t1),
        c[2].lerp(&c[3], t1),
    ];
    let b = [a[0].lerp(&a[1], t2), a[1].lerp(&a[2], t2)];
    b[0].lerp(&b[1], t3)
}

/// Control points of the cubic restricted to the parameter interval [a, b].
fn bezier3_restrict(c: &[Vector3<f64>; 4], a: f64, b: f64) -> [Vector3<f64>; 4] {
    [
        bezier3_blossom(c, a, a, a),
        bezier3_blossom(c, a, a, b),
        bezier3_blossom(c, a, b, b),
        bezier3_blossom(c, b, b, b),
    ]
}

/// Copy of the set with every live sketch split into `parts` pieces, each
/// owning fresh control points (no sharing even at the junctions). Lines
/// split into collinear sub-lines; Béziers by de Casteljau restriction at
/// uniform parameters. Piece geometry traces the original curve exactly, so
/// this emulates over-fragmented initializations for topology stress tests.
/// The seed is reserved for future randomized variants; splitting is uniform
/// and deterministic.
pub fn fragment_init(set: &SketchSet, parts: usize, _seed: u64) -> Result<SketchSet> {
    if parts < 1 {
        return Err(Error::contract("parts must be at least 1"));
    }
    let mut pool = ControlPointPool::new();
    let mut sketches = Vec::new();
    for si in set.live_sketch_indices() {
        let sketch = &set.sketches[si];
        let ctrl = sketch.ctrl_positions(&set.pool)?;
        for k in 0..parts {
            let a = k as f64 / parts as f64;
            let b = (k + 1) as f64 / parts as f64;
            let piece = match sketch.kind {
                SketchKind::Line => {
                    let (p, q) = (ctrl[0], ctrl[1]);
                    vec![p.lerp(&q, a), p.lerp(&q, b)]
                }
                SketchKind::Bezier3 => {
                    let c: [Vector3<f64>; 4] = [ctrl[0], ctrl[1], ctrl[2], ctrl[3]];
                    bezier3_restrict(&c, a, b).to_vec()
                }
            };
            let indices = piece.into_iter().map(|p| pool.add(p)).collect();
            sketches.push(Sketch::from_raw(
                sketch.kind,
                indices,
                sketch.raw_opacity,
                sketch.raw_log_scale,
            )?);
        }
    }
    let out = SketchSet::new(pool, sketches);
    out.validate()?;
    Ok(out)
}
