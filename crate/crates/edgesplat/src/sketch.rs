//! Parametric edge primitives.
//!
//! Edges are *sketches*: line segments (2 control indices) or cubic Bézier
//! curves (4 control indices) over a shared [`ControlPointPool`]. The pool is
//! the unit of optimization — merging topology passes make sketches share
//! points, and gradients accumulate per pool point. Each sketch additionally
//! carries a raw opacity (sigmoid-mapped to (0,1)) and a raw log-scale
//! 3-vector (exp-mapped to positive lengths in meters), so the optimizer
//! works on unconstrained reals.
//!
//! Sampling is arc-length uniform: a fixed 256-segment uniform-parameter
//! chordal subdivision approximates arc length per sketch and is inverted by
//! linear interpolation. Endpoints are always included. Sample parameters are
//! frozen per gradient step: gradients flow through `evaluate(t)` /
//! `tangent(t)` at fixed `t`, never through the reparameterization.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Segment count of the uniform-parameter chordal table used for arc length.
pub const ARC_TABLE_SEGMENTS: usize = 256;

/// Below this derivative magnitude a tangent is considered degenerate.
pub const DEGENERATE_DERIV_EPS: f64 = 1e-8;

/// Default arc-length sampling step in meters (scenes are normalized to 1 m).
pub const DEFAULT_SAMPLE_STEP: f64 = 0.005;

// ---------------------------------------------------------------------------
// Control point pool
// ---------------------------------------------------------------------------

/// Shared pool of optimizable 3D control points with liveness flags.
///
/// Indices are stable: killing a point never shifts others. Dead entries are
/// only removed by [`SketchSet::compact`], which remaps all references.
#[derive(Debug, Clone, Default)]
pub struct ControlPointPool {
    points: Vec<Vector3<f64>>,
    alive: Vec<bool>,
}

impl ControlPointPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let alive = vec![true; points.len()];
        Self { points, alive }
    }

    /// Appends a live point, returning its index.
    pub fn add(&mut self, p: Vector3<f64>) -> usize {
        self.points.push(p);
        self.alive.push(true);
        self.points.len() - 1
    }

    /// Position of a live point; `Structure` error if dead or out of range.
    pub fn get(&self, idx: usize) -> Result<Vector3<f64>> {
        match self.alive.get(idx) {
            Some(true) => Ok(self.points[idx]),
            Some(false) => Err(Error::structure(format!("control point {idx} is dead"))),
            None => Err(Error::structure(format!(
                "control point {idx} out of range (pool size {})",
                self.points.len()
            ))),
        }
    }

    /// Position without a liveness check (caller has validated the index).
    pub fn pos(&self, idx: usize) -> Vector3<f64> {
        self.points[idx]
    }

    pub fn set(&mut self, idx: usize, p: Vector3<f64>) {
        self.points[idx] = p;
    }

    pub fn is_alive(&self, idx: usize) -> bool {
        self.alive.get(idx).copied().unwrap_or(false)
    }

    pub fn kill(&mut self, idx: usize) {
        self.alive[idx] = false;
    }

    /// Number of live points.
    pub fn live_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    /// Total slots including dead ones.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn live_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.then_some(i))
    }
}

// ---------------------------------------------------------------------------
// Sketches
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchKind {
    Line,
    Bezier3,
}

impl SketchKind {
    /// Number of control indices the kind requires.
    pub fn arity(self) -> usize {
        match self {
            SketchKind::Line => 2,
            SketchKind::Bezier3 => 4,
        }
    }
}

/// One parametric edge over the shared pool.
#[derive(Debug, Clone)]
pub struct Sketch {
    pub kind: SketchKind,
    pub ctrl: Vec<usize>,
    /// Unconstrained opacity parameter; effective opacity is `sigmoid(raw)`.
    pub raw_opacity: f64,
    /// Unconstrained scale parameters; effective scale is `exp(raw)` (meters).
    pub raw_log_scale: Vector3<f64>,
    pub alive: bool,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Sketch {
    /// Builds a sketch from raw (unconstrained) parameters.
    pub fn from_raw(
        kind: SketchKind,
        ctrl: Vec<usize>,
        raw_opacity: f64,
        raw_log_scale: Vector3<f64>,
    ) -> Result<Self> {
        if ctrl.len() != kind.arity() {
            return Err(Error::contract(format!(
                "{kind:?} sketch needs {} control indices, got {}",
                kind.arity(),
                ctrl.len()
            )));
        }
        if !raw_opacity.is_finite() || !raw_log_scale.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("sketch parameters must be finite"));
        }
        Ok(Self {
            kind,
            ctrl,
            raw_opacity,
            raw_log_scale,
            alive: true,
        })
    }

    /// Line segment from mapped (effective) opacity in (0,1) and positive scale.
    pub fn line(i0: usize, i1: usize, opacity: f64, scale: Vector3<f64>) -> Result<Self> {
        Self::from_mapped(SketchKind::Line, vec![i0, i1], opacity, scale)
    }

    /// Cubic Bézier from mapped (effective) opacity and scale.
    pub fn bezier3(
        i0: usize,
        i1: usize,
        i2: usize,
        i3: usize,
        opacity: f64,
        scale: Vector3<f64>,
    ) -> Result<Self> {
        Self::from_mapped(SketchKind::Bezier3, vec![i0, i1, i2, i3], opacity, scale)
    }

    fn from_mapped(
        kind: SketchKind,
        ctrl: Vec<usize>,
        opacity: f64,
        scale: Vector3<f64>,
    ) -> Result<Self> {
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::contract(format!(
                "opacity must lie strictly in (0,1), got {opacity}"
            )));
        }
        if !scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::contract(format!("scale must be positive, got {scale:?}")));
        }
        Self::from_raw(kind, ctrl, logit(opacity), scale.map(f64::ln))
    }

    /// Effective opacity in (0,1).
    pub fn opacity(&self) -> f64 {
        sigmoid(self.raw_opacity)
    }

    /// Effective anisotropic scale in meters (all components positive).
    pub fn scale(&self) -> Vector3<f64> {
        self.raw_log_scale.map(f64::exp)
    }

    /// Pool indices of the two curve endpoints (`t = 0` and `t = 1`).
    pub fn endpoints(&self) -> (usize, usize) {
        (self.ctrl[0], *self.ctrl.last().unwrap())
    }

    /// Control positions fetched from the pool, validating liveness.
    pub fn ctrl_positions(&self, pool: &ControlPointPool) -> Result<Vec<Vector3<f64>>> {
        self.ctrl.iter().map(|&i| pool.get(i)).collect()
    }
}

/// A pool plus the sketches over it — the unit most passes operate on.
#[derive(Debug, Clone, Default)]
pub struct SketchSet {
    pub pool: ControlPointPool,
    pub sketches: Vec<Sketch>,
}

impl SketchSet {
    pub fn new(pool: ControlPointPool, sketches: Vec<Sketch>) -> Self {
        Self { pool, sketches }
    }

    pub fn live_sketch_count(&self) -> usize {
        self.sketches.iter().filter(|s| s.alive).count()
    }

    pub fn live_sketch_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.sketches
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.alive.then_some(i))
    }

    /// Checks referential integrity: every live sketch has the right control
    /// arity, references only live in-range points, and has finite parameters.
    pub fn validate(&self) -> Result<()> {
        for (id, s) in self.sketches.iter().enumerate() {
            if !s.alive {
                continue;
            }
            if s.ctrl.len() != s.kind.arity() {
                return Err(Error::structure(format!(
                    "sketch {id}: {:?} with {} control indices",
                    s.kind,
                    s.ctrl.len()
                )));
            }
            for &c in &s.ctrl {
                if !self.pool.is_alive(c) {
                    return Err(Error::structure(format!(
                        "sketch {id} references dead or out-of-range point {c}"
                    )));
                }
            }
            if !s.raw_opacity.is_finite() || !s.raw_log_scale.iter().all(|v| v.is_finite()) {
                return Err(Error::numerical(format!("sketch {id} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Kills pool points referenced by no live sketch. Returns how many died.
    pub fn gc_unreferenced_points(&mut self) -> usize {
        let mut referenced = vec![false; self.pool.len()];
        for s in self.sketches.iter().filter(|s| s.alive) {
            for &c in &s.ctrl {
                referenced[c] = true;
            }
        }
        let mut killed = 0;
        for i in 0..self.pool.len() {
            if self.pool.is_alive(i) && !referenced[i] {
                self.pool.kill(i);
                killed += 1;
            }
        }
        killed
    }

    /// Drops dead points and sketches, remapping control indices.
    ///
    /// Returns `(point_map, sketch_map)`: for each old index, the new index or
    /// `None` if the entry was dead. Used to carry optimizer state across
    /// topology edits.
    pub fn compact(&mut self) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let mut point_map = vec![None; self.pool.len()];
        let mut new_points = Vec::with_capacity(self.pool.live_count());
        for i in 0..self.pool.len() {
            if self.pool.is_alive(i) {
                point_map[i] = Some(new_points.len());
                new_points.push(self.pool.pos(i));
            }
        }
        let mut sketch_map = vec![None; self.sketches.len()];
        let mut new_sketches = Vec::with_capacity(self.live_sketch_count());
        for (i, s) in self.sketches.iter().enumerate() {
            if !s.alive {
                continue;
            }
            let mut s = s.clone();
            for c in s.ctrl.iter_mut() {
                *c = point_map[*c].expect("live sketch references dead point");
            }
            sketch_map[i] = Some(new_sketches.len());
            new_sketches.push(s);
        }
        self.pool = ControlPointPool::from_points(new_points);
        self.sketches = new_sketches;
        (point_map, sketch_map)
    }
}

// ---------------------------------------------------------------------------
// Basis functions and evaluation
// ---------------------------------------------------------------------------

/// Cubic Bernstein weights at `t`.
pub fn bernstein3(t: f64) -> [f64; 4] {
    let u = 1.0 - t;
    [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t]
}

/// Derivatives of the cubic Bernstein weights w.r.t. `t`.
pub fn bernstein3_deriv(t: f64) -> [f64; 4] {
    let u = 1.0 - t;
    [
        -3.0 * u * u,
        3.0 * u * u - 6.0 * u * t,
        6.0 * u * t - 3.0 * t * t,
        3.0 * t * t,
    ]
}

/// Basis weights of the position w.r.t. the control points: `x(t) = Σ w_k P_k`.
///
/// Returns the weights padded to 4 plus the number of valid entries.
pub fn basis_weights(kind: SketchKind, t: f64) -> ([f64; 4], usize) {
    match kind {
        SketchKind::Line => ([1.0 - t, t, 0.0, 0.0], 2),
        SketchKind::Bezier3 => (bernstein3(t), 4),
    }
}

/// Basis weights of the parameter derivative: `x'(t) = Σ w'_k P_k`.
pub fn basis_deriv_weights(kind: SketchKind, t: f64) -> ([f64; 4], usize) {
    match kind {
        SketchKind::Line => ([-1.0, 1.0, 0.0, 0.0], 2),
        SketchKind::Bezier3 => (bernstein3_deriv(t), 4),
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("curve parameter t={t} outside [0,1]")));
    }
    Ok(())
}

/// Evaluates position on validated control positions (hot path; no checks).
pub fn eval_ctrl(kind: SketchKind, ctrl: &[Vector3<f64>], t: f64) -> Vector3<f64> {
    let (w, n) = basis_weights(kind, t);
    let mut p = Vector3::zeros();
    for k in 0..n {
        p += w[k] * ctrl[k];
    }
    p
}

/// Parameter derivative on validated control positions (hot path; no checks).
pub fn deriv_ctrl(kind: SketchKind, ctrl: &[Vector3<f64>], t: f64) -> Vector3<f64> {
    let (w, n) = basis_deriv_weights(kind, t);
    let mut d = Vector3::zeros();
    for k in 0..n {
        d += w[k] * ctrl[k];
    }
    d
}

/// Position on the sketch at parameter `t ∈ [0,1]`.
pub fn evaluate(sketch: &Sketch, pool: &ControlPointPool, t: f64) -> Result<Vector3<f64>> {
    check_t(t)?;
    let ctrl = sketch.ctrl_positions(pool)?;
    Ok(eval_ctrl(sketch.kind, &ctrl, t))
}

/// Unit tangent at parameter `t`; `Numerical` error when the derivative
/// magnitude is at or below [`DEGENERATE_DERIV_EPS`].
pub fn tangent(sketch: &Sketch, pool: &ControlPointPool, t: f64) -> Result<Vector3<f64>> {
    check_t(t)?;
    let ctrl = sketch.ctrl_positions(pool)?;
    let d = deriv_ctrl(sketch.kind, &ctrl, t);
    let n = d.norm();
    if n <= DEGENERATE_DERIV_EPS {
        return Err(Error::numerical(format!(
            "degenerate tangent at t={t}: |x'(t)| = {n:.3e}"
        )));
    }
    Ok(d / n)
}

// ---------------------------------------------------------------------------
// Arc-length sampling
// ---------------------------------------------------------------------------

/// One arc-length sample on a sketch.
#[derive(Debug, Clone)]
pub struct SamplePoint {
    pub position: Vector3<f64>,
    /// Unit tangent; the fallback direction if the sample is degenerate.
    pub tangent: Vector3<f64>,
    /// Curve parameter the sample was taken at.
    pub t: f64,
    /// Index of the owning sketch within its `SketchSet`.
    pub sketch_id: usize,
    /// True when the tangent fell back (zero-derivative sample).
    pub degenerate: bool,
}

/// Frozen sample parameters for one sketch (one gradient step).
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub ts: Vec<f64>,
    /// Chordal arc length from the 256-segment table (meters).
    pub arclen: f64,
    /// True when the sketch has (numerically) zero length.
    pub degenerate: bool,
}

/// Computes frozen sample parameters: `⌈arclen/step⌉ + 1` values (at least 2),
/// arc-length-uniform, endpoints included.
pub fn plan_sample_ts(sketch: &Sketch, pool: &ControlPointPool, step: f64) -> Result<SamplePlan> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::contract(format!("sample step must be positive, got {step}")));
    }
    let ctrl = sketch.ctrl_positions(pool)?;
    match sketch.kind {
        SketchKind::Line => {
            // A segment's uniform parameter is exactly arc-length-uniform, so
            // the chordal table would only add rounding noise here.
            let arclen = (ctrl[1] - ctrl[0]).norm();
            if arclen == 0.0 {
                return Ok(SamplePlan { ts: vec![0.0, 1.0], arclen, degenerate: true });
            }
            let count = sample_count(arclen, step);
            let ts = (0..count).map(|k| k as f64 / (count - 1) as f64).collect();
            Ok(SamplePlan { ts, arclen, degenerate: false })
        }
        SketchKind::Bezier3 => {
            let n = ARC_TABLE_SEGMENTS;
            let mut cum = Vec::with_capacity(n + 1);
            cum.push(0.0);
            let mut prev = ctrl[0];
            let mut acc = 0.0;
            for j in 1..=n {
                let t = j as f64 / n as f64;
                let p = eval_ctrl(SketchKind::Bezier3, &ctrl, t);
                acc += (p - prev).norm();
                cum.push(acc);
                prev = p;
            }
            let arclen = acc;
            if arclen == 0.0 {
                return Ok(SamplePlan { ts: vec![0.0, 1.0], arclen, degenerate: true });
            }
            let count = sample_count(arclen, step);
            let mut ts = Vec::with_capacity(count);
            ts.push(0.0);
            let mut seg = 0usize;
            for k in 1..count - 1 {
                let s = arclen * k as f64 / (count - 1) as f64;
                while seg + 1 < n && cum[seg + 1] < s {
                    seg += 1;
                }
                let len = cum[seg + 1] - cum[seg];
                let frac = if len > 0.0 { (s - cum[seg]) / len } else { 1.0 };
                ts.push((seg as f64 + frac) / n as f64);
            }
            ts.push(1.0);
            Ok(SamplePlan { ts, arclen, degenerate: false })
        }
    }
}

fn sample_count(arclen: f64, step: f64) -> usize {
    (((arclen / step).ceil() as usize) + 1).max(2)
}

/// Arc-length-uniform samples with tangents.
///
/// Degenerate (zero-derivative) tangents fall back to the previous sample's
/// tangent — or `+x` at the first sample — and are flagged.
pub fn sample_points(
    sketch: &Sketch,
    pool: &ControlPointPool,
    sketch_id: usize,
    step: f64,
) -> Result<Vec<SamplePoint>> {
    let plan = plan_sample_ts(sketch, pool, step)?;
    let ctrl = sketch.ctrl_positions(pool)?;
    Ok(samples_from_plan(sketch, &ctrl, &plan, sketch_id))
}

/// Evaluates a frozen plan against current control positions (hot path).
pub fn samples_from_plan(
    sketch: &Sketch,
    ctrl: &[Vector3<f64>],
    plan: &SamplePlan,
    sketch_id: usize,
) -> Vec<SamplePoint> {
    let mut out = Vec::with_capacity(plan.ts.len());
    let mut prev_tan: Option<Vector3<f64>> = None;
    for &t in &plan.ts {
        let position = eval_ctrl(sketch.kind, ctrl, t);
        let d = deriv_ctrl(sketch.kind, ctrl, t);
        let norm = d.norm();
        let (tangent, degenerate) = if norm > DEGENERATE_DERIV_EPS {
            (d / norm, false)
        } else {
            (prev_tan.unwrap_or_else(|| Vector3::x()), true)
        };
        prev_tan = Some(tangent);
        out.push(SamplePoint { position, tangent, t, sketch_id, degenerate });
    }
    out
}

// ---------------------------------------------------------------------------
// Axis-aligned bounding boxes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    /// Empty box (min > max); the identity for [`Aabb::include`].
    pub fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn include(&mut self, p: Vector3<f64>) {
        self.min = self.min.inf(&p);
        self.max = self.max.sup(&p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: self.min.map(|v| v - pad),
            max: self.max.map(|v| v + pad),
        }
    }

    /// Closed-interval overlap test.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && self.max[i] >= other.min[i])
    }

    pub fn contains(&self, p: Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }
}

/// Axis-aligned bounding box over the sketch's control points, padded by
/// `pad` on every side. Control points bound the curve (convex hull property
/// of the Bernstein basis), so this also bounds every sample.
pub fn sketch_aabb(sketch: &Sketch, pool: &ControlPointPool, pad: f64) -> Result<Aabb> {
    let mut bb = Aabb::empty();
    for p in sketch.ctrl_positions(pool)? {
        bb.include(p);
    }
    Ok(bb.padded(pad))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn pool_with(pts: &[Vector3<f64>]) -> ControlPointPool {
        ControlPointPool::from_points(pts.to_vec())
    }

    fn default_scale() -> Vector3<f64> {
        v(0.002, 0.0005, 0.0005)
    }

    /// Independent Bernstein oracle: explicit binomial-coefficient sum.
    fn bernstein_oracle(ctrl: &[Vector3<f64>; 4], t: f64) -> Vector3<f64> {
        let binom = [1.0, 3.0, 3.0, 1.0];
        let mut p = Vector3::zeros();
        for (k, b) in binom.iter().enumerate() {
            p += b * (1.0 - t).powi(3 - k as i32) * t.powi(k as i32) * ctrl[k];
        }
        p
    }

    #[test]
    fn line_midpoint_is_endpoint_mean() {
        let pool = pool_with(&[v(0.0, 0.0, 0.0), v(1.0, 2.0, 3.0)]);
        let s = Sketch::line(0, 1, 0.9, default_scale()).unwrap();
        let p = evaluate(&s, &pool, 0.5).unwrap();
        assert_eq!(p, v(0.5, 1.0, 1.5));
    }

    #[test]
    fn bezier_with_equal_controls_is_constant() {
        let q = v(0.3, -0.2, 0.7);
        let pool = pool_with(&[q, q, q, q]);
        let s = Sketch::bezier3(0, 1, 2, 3, 0.9, default_scale()).unwrap();
        for t in [0.0, 0.123, 0.5, 0.999, 1.0] {
            let p = evaluate(&s, &pool, t).unwrap();
            assert_abs_diff_eq!((p - q).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn bezier_collinear_equispaced_third() {
        // Control points at 0,1,2,3 on x: the curve is the straight line
        // x(t) = 3t, so t = 1/3 must land on (1,0,0). Checked against the
        // independent binomial-sum oracle as well.
        let ctrl = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(3.0, 0.0, 0.0)];
        let pool = pool_with(&ctrl);
        let s = Sketch::bezier3(0, 1, 2, 3, 0.9, default_scale()).unwrap();
        let t = 1.0 / 3.0;
        let p = evaluate(&s, &pool, t).unwrap();
        let oracle = bernstein_oracle(&ctrl, t);
        assert_abs_diff_eq!((p - oracle).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((p - v(1.0, 0.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_rejects_out_of_range_t() {
        let pool = pool_with(&[v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)]);
        let s = Sketch::line(0, 1, 0.9, default_scale()).unwrap();
        assert!(matches!(evaluate(&s, &pool, -0.01), Err(Error::Contract(_))));
        assert!(matches!(evaluate(&s, &pool, 1.01), Err(Error::Contract(_))));
        assert!(matches!(evaluate(&s, &pool, f64::NAN), Err(Error::Contract(_))));
    }

    #[test]
    fn evaluate_rejects_dead_control_point() {
        let mut pool = pool_with(&[v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)]);
        let s = Sketch::line(0, 1, 0.9, default_scale()).unwrap();
        pool.kill(1);
        assert!(matches!(evaluate(&s, &pool, 0.5), Err(Error::Structure(_))));
    }

    #[test]
    fn line_tangent_is_constant_direction() {
        let pool = pool_with(&[v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0)]);
        let s = Sketch::line(0, 1, 0.9, default_scale()).unwrap();
        for t in [0.0, 0.4, 1.0] {
            assert_eq!(tangent(&s, &pool, t).unwrap(), v(1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn bezier_tangent_at_zero_points_along_first_leg() {
        let ctrl = [v(0.0, 0.0, 0.0), v(0.1, 0.2, 0.0), v(0.5, 0.1, 0.3), v(1.0, 0.0, 0.0)];
        let pool = pool_with(&ctrl);
        let s = Sketch::bezier3(0, 1, 2, 3, 0.9, default_scale()).unwrap();
        let expect = (ctrl[1] - ctrl[0]).normalize(); // x'(0) = 3 (P1 - P0)
        let got = tangent(&s, &pool, 0.0).unwrap();
        assert_abs_diff_eq!((got - expect).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tangent_matches_finite_difference_of_evaluate() {
        // Central differences of evaluate() with h = 1e-6, normalized, must
        // agree with the analytic unit tangent to 1e-5.
        let mut rng = crate::rng::seeded(42);
        for _ in 0..20 {
            let ctrl: Vec<Vector3<f64>> = (0..4)
                .map(|_| v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let pool = pool_with(&ctrl);
            let s = Sketch::bezier3(0, 1, 2, 3, 0.9, default_scale()).unwrap();
            for t in [0.1, 0.35, 0.5, 0.82] {
                let h = 1e-6;
                let fd = (evaluate(&s, &pool, t + h).unwrap() - evaluate(&s, &pool, t - h).unwrap())
                    / (2.0 * h);
                if fd.norm() < 1e-3 {
                    continue; // stay clear of near-degenerate derivatives
                }
                let fd = fd.normalize();
                let an = tangent(&s, &pool, t).unwrap();
                assert!((fd - an).norm() < 1e-5, "t={t}: fd={fd:?} analytic={an:?}");
            }
        }
    }

    #[test]
    fn line_20mm_samples_at_quarter_parameters() {
        let pool = pool_with(&[v(0.0, 0.0, 0.0), v(0.02, 0.0, 0.0)]);
        let s = Sketch::line(0, 1, 0.9, default_scale()).unwrap();
        let samples = sample_points(&s, &pool, 7, 0.005).unwrap();
        assert_eq!(samples.len(), 5);
        let expect_ts = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (sp, et) in samples.iter().zip(expect_ts) {
            assert_abs_diff_eq!(sp.t, et, epsilon = 1e-12);
            assert_eq!(sp.sketch_id, 7);
            assert!(!sp.degenerate);
        }
    }

    #[test]
    fn short_line_still_gets_both_endpoints() {
        let pool = pool_with(&[v(0.0, 0.0, 0.0), v(0.001, 0.0, 0.0)]);
        let s = Sketch::line(0, 1, 0.9, default_scale()).unwrap();
        let samples = sample_points(&s, &pool, 0, 0.005).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].t, 0.0);
        assert_eq!(samples[1].t, 1.0);
    }

    /// Dense-subdivision arc-length oracle (1024 uniform-parameter chords).
    fn arclen_oracle(ctrl: &[Vector3<f64>], kind: SketchKind) -> f64 {
        let n = 1024;
        let mut acc = 0.0;
        let mut prev = eval_ctrl(kind, ctrl, 0.0);
        for j in 1..=n {
            let p = eval_ctrl(kind, ctrl, j as f64 / n as f64);
            acc += (p - prev).norm();
            prev = p;
        }
        acc
    }

    #[test]
    fn bezier_arc_sample_count_and_spacing() {
        // Quarter-circle-like arc (the standard 0.5523 cubic approximation),
        // radius 50 mm, so the arc length is ≈ 78.6 mm and lands well away
        // from an integer multiple of the 5 mm step.
        let r = 0.05;
        let c = 0.5523 * r;
        let ctrl = [v(r, 0.0, 0.0), v(r, c, 0.0), v(c, r, 0.0), v(0.0, r, 0.0)];
        let pool = pool_with(&ctrl);
        let s = Sketch::bezier3(0, 1, 2, 3, 0.9, default_scale()).unwrap();
        let step = 0.005;

        let oracle_len = arclen_oracle(&ctrl, SketchKind::Bezier3);
        let samples = sample_points(&s, &pool, 0, step).unwrap();
        assert_eq!(samples.len(), (oracle_len / step).ceil() as usize + 1);

        // Consecutive chord lengths should all be within 10% of the step.
        for w in samples.windows(2) {
            let chord = (w[1].position - w[0].position).norm();
            assert!(
                (chord - step).abs() < 0.1 * step,
                "chord {chord} deviates more than 10% from step {step}"
            );
        }
        assert_eq!(samples[0].t, 0.0);
        assert_eq!(*samples.last().map(|s| &s.t).unwrap(), 1.0);
    }

    #[test]
    fn zero_length_sketch_yields_two_degenerate_samples() {
        let q = v(0.25, 0.5, 0.75);
        let pool = pool_with(&[q, q, q, q]);
        let s = Sketch::bezier3(0, 1, 2, 3, 0.9, default_scale()).unwrap();
        let samples = sample_points(&s, &pool, 3, 0.005).unwrap();
        assert_eq!(samples.len(), 2);
        for sp in &samples {
            assert_eq!(sp.position, q);
            assert!(sp.degenerate);
            assert_eq!(sp.tangent, v(1.0, 0.0, 0.0)); // +x fallback
        }
    }

    #[test]
    fn aabb_of_line_with_pad() {
        let pool = pool_with(&[v(0.1, 0.4, -0.2), v(-0.3, 0.6, 0.0)]);
        let s = Sketch::line(0, 1, 0.9, default_scale()).unwrap();
        let bb = sketch_aabb(&s, &pool, 0.01).unwrap();
        assert_abs_diff_eq!((bb.min - v(-0.31, 0.39, -0.21)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((bb.max - v(0.11, 0.61, 0.01)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bezier_samples_stay_inside_control_aabb() {
        let mut rng = crate::rng::seeded(3);
        for _ in 0..10 {
            let ctrl: Vec<Vector3<f64>> = (0..4)
                .map(|_| v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let pool = pool_with(&ctrl);
            let s = Sketch::bezier3(0, 1, 2, 3, 0.9, default_scale()).unwrap();
            let bb = sketch_aabb(&s, &pool, 1e-12).unwrap();
            for j in 0..=1000 {
                let p = evaluate(&s, &pool, j as f64 / 1000.0).unwrap();
                assert!(bb.contains(p), "sample {p:?} escapes control hull box {bb:?}");
            }
        }
    }

    #[test]
    fn evaluate_gradient_equals_basis_weight() {
        // d evaluate / d P_k must equal w_k(t) · I; verified against central
        // finite differences over 20 random (sketch, t) pairs.
        let mut rng = crate::rng::seeded(9);
        for case in 0..20 {
            let bezier = case % 2 == 0;
            let n = if bezier { 4 } else { 2 };
            let ctrl: Vec<Vector3<f64>> = (0..n)
                .map(|_| v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let t: f64 = rng.gen();
            let kind = if bezier { SketchKind::Bezier3 } else { SketchKind::Line };
            let (w, _) = basis_weights(kind, t);
            let h = 1e-6;
            for k in 0..n {
                for axis in 0..3 {
                    let mut hi = ctrl.clone();
                    let mut lo = ctrl.clone();
                    hi[k][axis] += h;
                    lo[k][axis] -= h;
                    let fd = (eval_ctrl(kind, &hi, t) - eval_ctrl(kind, &lo, t)) / (2.0 * h);
                    for out_axis in 0..3 {
                        let expect = if out_axis == axis { w[k] } else { 0.0 };
                        assert!(
                            (fd[out_axis] - expect).abs() < 1e-6 * (1.0 + expect.abs()),
                            "case {case}: dP[{k}][{axis}] -> {fd:?}, want weight {expect}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn compact_remaps_and_drops_dead_entries() {
        let mut set = SketchSet::new(
            pool_with(&[v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(3.0, 0.0, 0.0)]),
            vec![
                Sketch::line(0, 1, 0.9, default_scale()).unwrap(),
                Sketch::line(2, 3, 0.9, default_scale()).unwrap(),
            ],
        );
        set.sketches[0].alive = false;
        set.gc_unreferenced_points();
        assert_eq!(set.pool.live_count(), 2);
        let (point_map, sketch_map) = set.compact();
        assert_eq!(set.pool.len(), 2);
        assert_eq!(set.sketches.len(), 1);
        assert_eq!(set.sketches[0].ctrl, vec![0, 1]);
        assert_eq!(point_map, vec![None, None, Some(0), Some(1)]);
        assert_eq!(sketch_map, vec![None, Some(0)]);
        set.validate().unwrap();
        assert_eq!(set.pool.pos(0), v(2.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn bernstein_partition_of_unity(t in 0.0f64..=1.0) {
            let w = bernstein3(t);
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn bernstein_deriv_weights_sum_to_zero(t in 0.0f64..=1.0) {
            let w = bernstein3_deriv(t);
            let sum: f64 = w.iter().sum();
            prop_assert!(sum.abs() <= 1e-12);
        }

        #[test]
        fn sample_count_formula_holds(
            len in 1e-4f64..2.0,
            step in 1e-3f64..0.1,
        ) {
            let pool = pool_with(&[v(0.0, 0.0, 0.0), v(len, 0.0, 0.0)]);
            let s = Sketch::line(0, 1, 0.9, v(0.002, 0.0005, 0.0005)).unwrap();
            let plan = plan_sample_ts(&s, &pool, step).unwrap();
            let expect = (((plan.arclen / step).ceil() as usize) + 1).max(2);
            prop_assert_eq!(plan.ts.len(), expect);
            prop_assert_eq!(plan.ts[0], 0.0);
            prop_assert_eq!(*plan.ts.last().unwrap(), 1.0);
            // strictly increasing
            prop_assert!(plan.ts.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
