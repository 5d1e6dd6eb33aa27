//! Gradient accumulation and Adam-based training of a sketch set.
//!
//! One epoch: re-plan arc-length samples for every live sketch (the sample
//! parameters stay frozen for the rest of the step), splat the samples, and
//! for every view in order draw balanced loss pixels, render exactly those
//! pixels, and push the L1 image gradient through the renderer back to the
//! shared control points, per-sketch raw opacities and log-scales. Gradients
//! accumulate over all views; a single bias-corrected Adam step follows.
//!
//! Periodically the topology passes rewrite connectivity; optimizer moments
//! are carried over by index remapping (survivors keep their moments, new
//! slots start cold). After the last epoch, sketches the targets never
//! support are filtered out.
//!
//! Per-view randomness comes from a stream derived from (seed, epoch, view),
//! so results are reproducible and independent of execution order.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::EdgeImage;
use crate::loss::{draw_loss_pixels, l1_loss_and_grad, DEFAULT_MAX_SAMPLES};
use crate::raster::{build_gaussian, Gaussian3D, RenderContext};
use crate::rng;
use crate::sketch::{
    basis_deriv_weights, basis_weights, deriv_ctrl, plan_sample_ts, samples_from_plan,
    SamplePlan, SketchSet, DEFAULT_SAMPLE_STEP, DEGENERATE_DERIV_EPS,
};
use crate::topology::{filter_invisible, run_topology_step, TopologyConfig, TopologyOutcome};

/// Adam moment decay and stabilization constants.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter-group learning rates.
#[derive(Debug, Clone)]
pub struct LearningRates {
    pub points: f64,
    pub opacity: f64,
    pub log_scale: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { points: 2e-4, opacity: 1e-2, log_scale: 5e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Arc-length sampling step (meters).
    pub sample_step: f64,
    /// Per-class cap on loss pixels per view.
    pub loss_samples: usize,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    /// Epoch the topology passes first run at (0 disables them).
    pub topology_start: usize,
    /// Topology cadence in epochs thereafter.
    pub topology_every: usize,
    pub topology: TopologyConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            sample_step: DEFAULT_SAMPLE_STEP,
            loss_samples: DEFAULT_MAX_SAMPLES,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            topology_start: 100,
            topology_every: 50,
            topology: TopologyConfig::default(),
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Accumulated gradients, aligned with the set's current index spaces.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub points: Vec<Vector3<f64>>,
    pub opacity: Vec<f64>,
    pub log_scale: Vec<Vector3<f64>>,
}

impl ParamGrads {
    pub fn zeros(set: &SketchSet) -> Self {
        Self {
            points: vec![Vector3::zeros(); set.pool.len()],
            opacity: vec![0.0; set.sketches.len()],
            log_scale: vec![Vector3::zeros(); set.sketches.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|g| g.iter().all(|v| v.is_finite()))
            && self.opacity.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Frozen per-sketch sample plans for one epoch (`None` for dead sketches).
pub fn epoch_plans(set: &SketchSet, step: f64) -> Result<Vec<Option<SamplePlan>>> {
    let mut plans = vec![None; set.sketches.len()];
    for sid in set.live_sketch_indices().collect::<Vec<_>>() {
        plans[sid] = Some(plan_sample_ts(&set.sketches[sid], &set.pool, step)?);
    }
    Ok(plans)
}

/// Splats every live sketch under the given frozen plans.
pub fn build_splats(set: &SketchSet, plans: &[Option<SamplePlan>]) -> Result<Vec<Gaussian3D>> {
    let mut out = Vec::new();
    for (sid, plan) in plans.iter().enumerate() {
        let Some(plan) = plan else { continue };
        let sketch = &set.sketches[sid];
        let ctrl = sketch.ctrl_positions(&set.pool)?;
        let scale = sketch.scale();
        let opacity = sketch.opacity();
        for sp in samples_from_plan(sketch, &ctrl, plan, sid) {
            out.push(build_gaussian(&sp, scale, opacity)?);
        }
    }
    Ok(out)
}

fn view_rng(cfg_seed: u64, epoch: u64, view: usize, view_seeds: Option<&[u64]>) -> rand_chacha::ChaCha8Rng {
    match view_seeds {
        Some(seeds) => rng::derive(seeds[view], epoch, 0),
        None => rng::derive(cfg_seed, epoch, view as u64),
    }
}

/// The summed sampled loss over all views under frozen plans — exactly the
/// scalar [`epoch_gradients_with_plans`] differentiates (gradients accumulate
/// over views, so the objective is the per-view sum, not the mean). Finite-
/// difference probes must use this with the same epoch and seeds so they see
/// identical pixel draws and sample parameters.
pub fn epoch_loss_with_plans(
    set: &SketchSet,
    plans: &[Option<SamplePlan>],
    cameras: &[Camera],
    targets: &[EdgeImage],
    cfg: &TrainConfig,
    epoch: u64,
    view_seeds: Option<&[u64]>,
) -> Result<f64> {
    let gaussians = build_splats(set, plans)?;
    let mut total = 0.0;
    for v in 0..cameras.len() {
        let mut rng = view_rng(cfg.seed, epoch, v, view_seeds);
        let draw = draw_loss_pixels(&targets[v], cfg.loss_samples, &mut rng)?;
        let ctx = RenderContext::new(&gaussians, &cameras[v])?;
        let values: Vec<f64> = draw
            .pixels
            .iter()
            .map(|&p| ctx.pixel(p % cameras[v].width, p / cameras[v].width))
            .collect();
        let (loss, _) = l1_loss_and_grad(&values, &targets[v], &draw)?;
        total += loss;
    }
    Ok(total)
}

/// Accumulates parameter gradients over all views under frozen plans and
/// returns them with the summed loss they differentiate (matching
/// [`epoch_loss_with_plans`]). Callers that want a per-view figure for
/// reporting divide by the number of views themselves.
pub fn epoch_gradients_with_plans(
    set: &SketchSet,
    plans: &[Option<SamplePlan>],
    cameras: &[Camera],
    targets: &[EdgeImage],
    cfg: &TrainConfig,
    epoch: u64,
    view_seeds: Option<&[u64]>,
) -> Result<(ParamGrads, f64)> {
    let gaussians = build_splats(set, plans)?;
    let mut grads = ParamGrads::zeros(set);
    let mut total_loss = 0.0;

    for v in 0..cameras.len() {
        let mut rng = view_rng(cfg.seed, epoch, v, view_seeds);
        let draw = draw_loss_pixels(&targets[v], cfg.loss_samples, &mut rng)?;
        let ctx = RenderContext::new(&gaussians, &cameras[v])?;
        let values: Vec<f64> = draw
            .pixels
            .iter()
            .map(|&p| ctx.pixel(p % cameras[v].width, p / cameras[v].width))
            .collect();
        let (loss, dl_di) = l1_loss_and_grad(&values, &targets[v], &draw)?;
        total_loss += loss;
        let ggrads = ctx.backward(&gaussians, &cameras[v], &dl_di)?;

        for (g, gg) in gaussians.iter().zip(&ggrads) {
            let sketch = &set.sketches[g.sketch_id];
            grads.opacity[g.sketch_id] += gg.d_raw_opacity;
            grads.log_scale[g.sketch_id] += gg.d_log_scale;

            // Position: μ(t) = Σ_k w_k(t) P_k.
            let (w, arity) = basis_weights(sketch.kind, g.sample_t);
            for k in 0..arity {
                grads.points[sketch.ctrl[k]] += w[k] * gg.d_mean;
            }

            // Tangent: u = x'(t)/|x'(t)| with x'(t) = Σ_k w'_k(t) P_k.
            if !g.degenerate_tangent && gg.d_tangent != Vector3::zeros() {
                let ctrl = sketch.ctrl_positions(&set.pool)?;
                let d = deriv_ctrl(sketch.kind, &ctrl, g.sample_t);
                let n = d.norm();
                if n > DEGENERATE_DERIV_EPS {
                    let u = d / n;
                    let d_dvec =
                        (Matrix3::identity() - u * u.transpose()) * gg.d_tangent / n;
                    let (dw, arity) = basis_deriv_weights(sketch.kind, g.sample_t);
                    for k in 0..arity {
                        grads.points[sketch.ctrl[k]] += dw[k] * d_dvec;
                    }
                }
            }
        }
    }
    Ok((grads, total_loss))
}

/// Plans this epoch's samples and accumulates gradients over all views.
pub fn epoch_gradients(
    set: &SketchSet,
    cameras: &[Camera],
    targets: &[EdgeImage],
    cfg: &TrainConfig,
    epoch: u64,
    view_seeds: Option<&[u64]>,
) -> Result<(ParamGrads, f64)> {
    let plans = epoch_plans(set, cfg.sample_step)?;
    epoch_gradients_with_plans(set, &plans, cameras, targets, cfg, epoch, view_seeds)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First and second moment estimates for every parameter, aligned with the
/// set's index spaces.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    point_m: Vec<Vector3<f64>>,
    point_v: Vec<Vector3<f64>>,
    opacity_m: Vec<f64>,
    opacity_v: Vec<f64>,
    scale_m: Vec<Vector3<f64>>,
    scale_v: Vec<Vector3<f64>>,
}

impl AdamState {
    pub fn new(set: &SketchSet) -> Self {
        Self {
            step: 0,
            point_m: vec![Vector3::zeros(); set.pool.len()],
            point_v: vec![Vector3::zeros(); set.pool.len()],
            opacity_m: vec![0.0; set.sketches.len()],
            opacity_v: vec![0.0; set.sketches.len()],
            scale_m: vec![Vector3::zeros(); set.sketches.len()],
            scale_v: vec![Vector3::zeros(); set.sketches.len()],
        }
    }

    /// Carries moments across a compaction: `point_map[old] = Some(new)` for
    /// surviving slots. New slots start with zero moments; the step counter
    /// is retained.
    pub fn remap(
        &mut self,
        point_map: &[Option<usize>],
        sketch_map: &[Option<usize>],
        n_points: usize,
        n_sketches: usize,
    ) {
        let mut pm = vec![Vector3::zeros(); n_points];
        let mut pv = vec![Vector3::zeros(); n_points];
        for (old, new) in point_map.iter().enumerate() {
            if let Some(new) = *new {
                pm[new] = self.point_m[old];
                pv[new] = self.point_v[old];
            }
        }
        let mut om = vec![0.0; n_sketches];
        let mut ov = vec![0.0; n_sketches];
        let mut sm = vec![Vector3::zeros(); n_sketches];
        let mut sv = vec![Vector3::zeros(); n_sketches];
        for (old, new) in sketch_map.iter().enumerate() {
            if let Some(new) = *new {
                om[new] = self.opacity_m[old];
                ov[new] = self.opacity_v[old];
                sm[new] = self.scale_m[old];
                sv[new] = self.scale_v[old];
            }
        }
        self.point_m = pm;
        self.point_v = pv;
        self.opacity_m = om;
        self.opacity_v = ov;
        self.scale_m = sm;
        self.scale_v = sv;
    }
}

fn adam_update(m: &mut f64, v: &mut f64, g: f64, lr: f64, bc1: f64, bc2: f64, a: &AdamConfig) -> f64 {
    *m = a.beta1 * *m + (1.0 - a.beta1) * g;
    *v = a.beta2 * *v + (1.0 - a.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    -lr * m_hat / (v_hat.sqrt() + a.epsilon)
}

/// One bias-corrected Adam step over all live parameters.
///
/// Non-finite gradients abort with a numerical error before any parameter is
/// touched.
pub fn adam_step(
    set: &mut SketchSet,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.points.len() != set.pool.len() || grads.opacity.len() != set.sketches.len() {
        return Err(Error::contract("gradient buffers do not match the set"));
    }
    if state.point_m.len() != set.pool.len() || state.opacity_m.len() != set.sketches.len() {
        return Err(Error::contract("optimizer state does not match the set"));
    }
    if !grads.is_finite() {
        return Err(Error::numerical("non-finite gradient; aborting the epoch"));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.adam.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.adam.beta2.powi(state.step as i32);

    for p in 0..set.pool.len() {
        if !set.pool.is_alive(p) {
            continue;
        }
        let mut pos = set.pool.pos(p);
        for axis in 0..3 {
            pos[axis] += adam_update(
                &mut state.point_m[p][axis],
                &mut state.point_v[p][axis],
                grads.points[p][axis],
                cfg.lr.points,
                bc1,
                bc2,
                &cfg.adam,
            );
        }
        set.pool.set(p, pos);
    }
    for s in 0..set.sketches.len() {
        if !set.sketches[s].alive {
            continue;
        }
        let delta = adam_update(
            &mut state.opacity_m[s],
            &mut state.opacity_v[s],
            grads.opacity[s],
            cfg.lr.opacity,
            bc1,
            bc2,
            &cfg.adam,
        );
        set.sketches[s].raw_opacity += delta;
        for axis in 0..3 {
            let delta = adam_update(
                &mut state.scale_m[s][axis],
                &mut state.scale_v[s][axis],
                grads.log_scale[s][axis],
                cfg.lr.log_scale,
                bc1,
                bc2,
                &cfg.adam,
            );
            set.sketches[s].raw_log_scale[axis] += delta;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean sampled loss per view for this epoch.
    pub loss: f64,
    pub live_sketches: usize,
    pub live_points: usize,
    pub wall_ms: f64,
    pub topology: Option<TopologyOutcome>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Sketches removed by the final visibility filter.
    pub filtered_invisible: usize,
}

/// Trains the set in place against the target edge images.
pub fn train(
    set: &mut SketchSet,
    cameras: &[Camera],
    targets: &[EdgeImage],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cameras.len() != targets.len() || cameras.is_empty() {
        return Err(Error::contract("training needs matching, non-empty views"));
    }
    for (cam, img) in cameras.iter().zip(targets) {
        if cam.width != img.width() || cam.height != img.height() {
            return Err(Error::contract("camera and target image sizes differ"));
        }
    }
    set.validate()?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }

    let mut state = AdamState::new(set);
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let (grads, summed_loss) = epoch_gradients(set, cameras, targets, cfg, epoch as u64, None)?;
        let loss = summed_loss / cameras.len() as f64;
        adam_step(set, &grads, &mut state, cfg)?;

        let mut topology = None;
        if cfg.topology_start > 0 && epoch >= cfg.topology_start && epoch % cfg.topology_every == 0
        {
            let outcome = run_topology_step(set, &cfg.topology)?;
            let (point_map, sketch_map) = set.compact();
            state.remap(&point_map, &sketch_map, set.pool.len(), set.sketches.len());
            topology = Some(outcome);
        }

        report.epochs.push(EpochRecord {
            epoch,
            loss,
            live_sketches: set.live_sketch_count(),
            live_points: set.pool.live_count(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            topology,
        });
        log::debug!(
            "epoch {epoch}: loss {loss:.6}, {} sketches, {} points",
            set.live_sketch_count(),
            set.pool.live_count()
        );
    }

    report.filtered_invisible = filter_invisible(
        set,
        cameras,
        targets,
        cfg.topology.th_visibility,
        cfg.sample_step,
    )?;
    set.compact();
    set.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{ControlPointPool, Sketch};
    use approx::assert_abs_diff_eq;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn single_line_set(a: Vector3<f64>, b: Vector3<f64>) -> SketchSet {
        let mut pool = ControlPointPool::new();
        let ia = pool.add(a);
        let ib = pool.add(b);
        let s = Sketch::line(ia, ib, 0.9, v(0.004, 0.001, 0.001)).unwrap();
        SketchSet::new(pool, vec![s])
    }

    /// Cameras on a small arc around the origin-centered unit region.
    fn ring_cameras(n: usize, size: u32) -> Vec<Camera> {
        (0..n)
            .map(|i| {
                let ang = 0.5 + i as f64 * 0.7;
                let pos = v(0.5 + 1.6 * ang.cos(), 0.5 + 1.6 * ang.sin(), 0.9);
                Camera::look_at(pos, v(0.5, 0.5, 0.5), Vector3::z(), 120.0, 120.0, size, size)
                    .unwrap()
            })
            .collect()
    }

    fn render_targets(set: &SketchSet, cams: &[Camera], step: f64) -> Vec<EdgeImage> {
        let plans = epoch_plans(set, step).unwrap();
        let splats = build_splats(set, &plans).unwrap();
        cams.iter()
            .map(|c| crate::raster::render(&splats, c).unwrap())
            .collect()
    }

    #[test]
    fn adam_first_steps_match_the_closed_form() {
        let mut set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&set);
        let raw0 = set.sketches[0].raw_opacity;
        let g = 0.37;
        let mut grads = ParamGrads::zeros(&set);
        grads.opacity[0] = g;
        adam_step(&mut set, &grads, &mut state, &cfg).unwrap();
        // Step 1: m̂ = g, v̂ = g² → Δ = −lr·g/(|g| + ε).
        let want = -cfg.lr.opacity * g / (g.abs() + cfg.adam.epsilon);
        assert_abs_diff_eq!(set.sketches[0].raw_opacity - raw0, want, epsilon = 1e-15);
        // A second identical step: same bias-corrected direction.
        let raw1 = set.sketches[0].raw_opacity;
        let mut grads = ParamGrads::zeros(&set);
        grads.opacity[0] = g;
        adam_step(&mut set, &grads, &mut state, &cfg).unwrap();
        assert_abs_diff_eq!(set.sketches[0].raw_opacity - raw1, want, epsilon = 1e-12);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let before = set.clone();
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&set);
        let grads = ParamGrads::zeros(&set);
        adam_step(&mut set, &grads, &mut state, &cfg).unwrap();
        assert_eq!(set.pool.pos(0), before.pool.pos(0));
        assert_eq!(set.sketches[0].raw_opacity, before.sketches[0].raw_opacity);
    }

    #[test]
    fn non_finite_gradients_abort_numerically() {
        let mut set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&set);
        let mut grads = ParamGrads::zeros(&set);
        grads.points[0].x = f64::NAN;
        let err = adam_step(&mut set, &grads, &mut state, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn state_remap_preserves_survivor_moments() {
        let mut set = single_line_set(v(0.0, 0.0, 0.5), v(0.1, 0.0, 0.5));
        let b = set.pool.add(v(0.5, 0.5, 0.5));
        let c = set.pool.add(v(0.6, 0.5, 0.5));
        set.sketches.push(Sketch::line(b, c, 0.8, v(0.002, 0.001, 0.001)).unwrap());
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&set);
        let mut grads = ParamGrads::zeros(&set);
        grads.points[b] = v(1.0, 2.0, 3.0);
        grads.opacity[1] = 0.5;
        adam_step(&mut set, &grads, &mut state, &cfg).unwrap();
        let m_before = state.point_m[b];

        // Kill the first sketch; compaction shifts the second one down.
        set.sketches[0].alive = false;
        set.gc_unreferenced_points();
        let (pmap, smap) = set.compact();
        state.remap(&pmap, &smap, set.pool.len(), set.sketches.len());
        assert_eq!(set.pool.len(), 2);
        let new_b = pmap[b].unwrap();
        assert_eq!(state.point_m[new_b], m_before);
        assert!(state.opacity_m[0] > 0.0);
        // Another step still works against the compacted set.
        let grads = ParamGrads::zeros(&set);
        adam_step(&mut set, &grads, &mut state, &cfg).unwrap();
    }

    #[test]
    fn epoch_gradients_are_deterministic() {
        let set = single_line_set(v(0.35, 0.48, 0.5), v(0.68, 0.55, 0.5));
        let cams = ring_cameras(2, 64);
        let gt_set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let targets = render_targets(&gt_set, &cams, 0.005);
        let cfg = TrainConfig { seed: 11, ..Default::default() };
        let (g1, l1) = epoch_gradients(&set, &cams, &targets, &cfg, 4, None).unwrap();
        let (g2, l2) = epoch_gradients(&set, &cams, &targets, &cfg, 4, None).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.points.iter().zip(&g2.points) {
            assert_eq!(a, b);
        }
        // A different epoch draws different pixels.
        let (_, l3) = epoch_gradients(&set, &cams, &targets, &cfg, 5, None).unwrap();
        assert_ne!(l1.to_bits(), l3.to_bits());
    }

    #[test]
    fn duplicated_views_double_every_gradient() {
        let set = single_line_set(v(0.35, 0.48, 0.5), v(0.68, 0.55, 0.5));
        let cams = ring_cameras(1, 64);
        let gt_set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let targets = render_targets(&gt_set, &cams, 0.005);
        let cfg = TrainConfig { seed: 11, ..Default::default() };

        let (g1, l1) =
            epoch_gradients(&set, &cams, &targets, &cfg, 7, Some(&[42])).unwrap();
        let cams2 = vec![cams[0].clone(), cams[0].clone()];
        let targets2 = vec![targets[0].clone(), targets[0].clone()];
        let (g2, l2) =
            epoch_gradients(&set, &cams2, &targets2, &cfg, 7, Some(&[42, 42])).unwrap();

        // Both the loss and the gradients accumulate over views, so a
        // duplicated view doubles everything. The loss doubles bitwise
        // (x + x is exact in IEEE arithmetic); the gradients rerun the whole
        // accumulation, whose rounding differs slightly from scaling the
        // one-view result, so they get a tight relative tolerance.
        assert_eq!((2.0 * l1).to_bits(), l2.to_bits());
        for (a, b) in g1.points.iter().zip(&g2.points) {
            assert!((2.0 * a - b).norm() <= 1e-12 * b.norm().max(1e-12));
        }
        for (a, b) in g1.opacity.iter().zip(&g2.opacity) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
        for (a, b) in g1.log_scale.iter().zip(&g2.log_scale) {
            assert!((2.0 * a - b).norm() <= 1e-12 * b.norm().max(1e-12));
        }
    }

    #[test]
    fn epoch_gradients_match_finite_differences() {
        // A small scene with wide splats so the loss surface is smooth at the
        // probe scale.
        let mut set = single_line_set(v(0.35, 0.45, 0.5), v(0.62, 0.58, 0.45));
        set.sketches[0].raw_log_scale = v(0.006f64.ln(), 0.002f64.ln(), 0.002f64.ln());
        let b = set.pool.add(v(0.42, 0.62, 0.55));
        let c = set.pool.add(v(0.6, 0.35, 0.52));
        let mut second = Sketch::line(b, c, 0.7, v(0.006, 0.002, 0.002)).unwrap();
        second.raw_log_scale = v(0.006f64.ln(), 0.002f64.ln(), 0.002f64.ln());
        set.sketches.push(second);

        let cams = ring_cameras(2, 64);
        let gt_set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let targets = render_targets(&gt_set, &cams, 0.005);
        let cfg = TrainConfig { seed: 3, loss_samples: 512, ..Default::default() };
        let epoch = 2u64;
        let seeds = [5u64, 6u64];

        let plans = epoch_plans(&set, cfg.sample_step).unwrap();
        let (grads, _) = epoch_gradients_with_plans(
            &set, &plans, &cams, &targets, &cfg, epoch, Some(&seeds),
        )
        .unwrap();

        let h = 1e-5;
        let mut checked = 0;
        let eval = |s: &SketchSet| {
            epoch_loss_with_plans(s, &plans, &cams, &targets, &cfg, epoch, Some(&seeds)).unwrap()
        };
        for p in 0..set.pool.len() {
            for axis in 0..3 {
                let mut hi = set.clone();
                let mut lo = set.clone();
                let mut ph = hi.pool.pos(p);
                let mut pl = lo.pool.pos(p);
                ph[axis] += h;
                pl[axis] -= h;
                hi.pool.set(p, ph);
                lo.pool.set(p, pl);
                let fd = (eval(&hi) - eval(&lo)) / (2.0 * h);
                let an = grads.points[p][axis];
                let err = (an - fd).abs();
                let tol = 1e-3 * an.abs().max(fd.abs()) + 1e-8;
                assert!(err <= tol, "point {p} axis {axis}: analytic {an:.6e} vs fd {fd:.6e}");
                if an.abs() > 1e-9 {
                    checked += 1;
                }
            }
        }
        for s in 0..set.sketches.len() {
            let mut hi = set.clone();
            let mut lo = set.clone();
            hi.sketches[s].raw_opacity += h;
            lo.sketches[s].raw_opacity -= h;
            let fd = (eval(&hi) - eval(&lo)) / (2.0 * h);
            let an = grads.opacity[s];
            assert!((an - fd).abs() <= 1e-3 * an.abs().max(fd.abs()) + 1e-8);
            for axis in 0..3 {
                let mut hi = set.clone();
                let mut lo = set.clone();
                hi.sketches[s].raw_log_scale[axis] += h;
                lo.sketches[s].raw_log_scale[axis] -= h;
                let fd = (eval(&hi) - eval(&lo)) / (2.0 * h);
                let an = grads.log_scale[s][axis];
                assert!(
                    (an - fd).abs() <= 1e-3 * an.abs().max(fd.abs()) + 1e-8,
                    "sketch {s} log_scale[{axis}]: analytic {an:.6e} vs fd {fd:.6e}"
                );
            }
        }
        assert!(checked >= 6, "too few informative point gradients ({checked})");
    }

    #[test]
    fn zero_epochs_is_an_identity_run() {
        let mut set = single_line_set(v(0.35, 0.48, 0.5), v(0.68, 0.55, 0.5));
        let before = set.clone();
        let cams = ring_cameras(2, 64);
        let targets = render_targets(&set, &cams, 0.005);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let report = train(&mut set, &cams, &targets, &cfg).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(report.filtered_invisible, 0);
        assert_eq!(set.pool.pos(0), before.pool.pos(0));
        assert_eq!(set.live_sketch_count(), before.live_sketch_count());
    }

    #[test]
    fn training_reduces_the_loss_and_recovers_a_perturbed_line() {
        let gt_set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let cams = ring_cameras(3, 96);
        let targets = render_targets(&gt_set, &cams, 0.005);

        // Start 6–8 mm off the target.
        let mut set = single_line_set(v(0.306, 0.494, 0.504), v(0.694, 0.507, 0.495));
        let cfg = TrainConfig {
            epochs: 120,
            topology_start: 0,
            seed: 2,
            ..Default::default()
        };
        let initial_err = (set.pool.pos(0) - gt_set.pool.pos(0)).norm()
            + (set.pool.pos(1) - gt_set.pool.pos(1)).norm();
        let report = train(&mut set, &cams, &targets, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 120);
        let first = report.epochs[0].loss;
        let last = report.epochs.last().unwrap().loss;
        assert!(last < 0.5 * first, "loss did not improve: {first} → {last}");
        let final_err = (set.pool.pos(0) - gt_set.pool.pos(0)).norm()
            + (set.pool.pos(1) - gt_set.pool.pos(1)).norm();
        assert!(
            final_err < 0.4 * initial_err,
            "endpoints did not move toward the target: {initial_err:.4} → {final_err:.4}"
        );
    }

    #[test]
    fn training_runs_topology_on_schedule() {
        let gt_set = single_line_set(v(0.3, 0.5, 0.5), v(0.7, 0.5, 0.5));
        let cams = ring_cameras(2, 64);
        let targets = render_targets(&gt_set, &cams, 0.005);
        let mut set = single_line_set(v(0.31, 0.5, 0.5), v(0.69, 0.5, 0.5));
        let cfg = TrainConfig {
            epochs: 12,
            topology_start: 4,
            topology_every: 4,
            seed: 1,
            ..Default::default()
        };
        let report = train(&mut set, &cams, &targets, &cfg).unwrap();
        let ran: Vec<usize> = report
            .epochs
            .iter()
            .filter(|e| e.topology.is_some())
            .map(|e| e.epoch)
            .collect();
        assert_eq!(ran, vec![4, 8, 12]);
    }
}
