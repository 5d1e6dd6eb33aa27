//! Edge-cloud quality metrics against a ground-truth edge cloud.
//!
//! Both the reconstruction and the ground truth are resampled into dense
//! point clouds; the metrics are built from exact nearest-neighbor distances
//! between them:
//!
//! * **accuracy** — mean distance from each predicted point to its nearest
//!   ground-truth point,
//! * **completeness** — mean distance from each ground-truth point to its
//!   nearest predicted point,
//! * **precision / recall / F-score** at distance thresholds `τ`, where a
//!   point counts as matched when its nearest-neighbor distance is ≤ τ.
//!
//! Nearest neighbors come from a uniform hash grid queried in expanding
//! shells. The shell cutoff keeps a one-cell safety margin, so the returned
//! distances are *identical* to a brute-force scan, not approximations.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sketch::{sample_points, SketchSet};

/// Matching thresholds (meters) the standard report evaluates at.
pub const METRIC_THRESHOLDS: [f64; 3] = [0.005, 0.010, 0.020];

/// Dense resampling of every live sketch into a bag of points.
pub fn resample_edges(set: &SketchSet, step: f64) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::new();
    for sid in set.live_sketch_indices().collect::<Vec<_>>() {
        let pts = sample_points(&set.sketches[sid], &set.pool, sid, step)?;
        out.extend(pts.into_iter().map(|p| p.position));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exact nearest neighbors on a uniform hash grid
// ---------------------------------------------------------------------------

/// A uniform hash grid over a fixed point cloud, answering exact
/// nearest-neighbor distance queries.
pub struct PointGrid {
    cell: f64,
    points: Vec<Vector3<f64>>,
    map: HashMap<[i64; 3], Vec<u32>>,
    min_cell: [i64; 3],
    max_cell: [i64; 3],
}

impl PointGrid {
    pub fn build(points: &[Vector3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("cannot build a point grid from an empty cloud"));
        }
        if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::contract("point cloud contains non-finite coordinates"));
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        // Aim for a few samples per cell on curve-like clouds; any positive
        // cell size is correct, this only affects speed.
        let extent = (hi - lo).max();
        let cell = (extent / (points.len() as f64).cbrt()).max(1e-9);
        let mut map: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let mut min_cell = [i64::MAX; 3];
        let mut max_cell = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(p, cell);
            for a in 0..3 {
                min_cell[a] = min_cell[a].min(c[a]);
                max_cell[a] = max_cell[a].max(c[a]);
            }
            map.entry(c).or_default().push(i as u32);
        }
        Ok(Self { cell, points: points.to_vec(), map, min_cell, max_cell })
    }

    fn cell_of(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    fn scan_cell(&self, c: [i64; 3], q: &Vector3<f64>, best_sq: &mut f64) {
        if let Some(ids) = self.map.get(&c) {
            for &i in ids {
                let d = (q - self.points[i as usize]).norm_squared();
                if d < *best_sq {
                    *best_sq = d;
                }
            }
        }
    }

    /// Iterates the cells at Chebyshev distance exactly `k` from `qc`,
    /// clipped to the occupied bounding box.
    fn scan_shell(&self, qc: [i64; 3], k: i64, q: &Vector3<f64>, best_sq: &mut f64) {
        let clip = |a: usize, lo: i64, hi: i64| -> (i64, i64) {
            ((qc[a] + lo).max(self.min_cell[a]), (qc[a] + hi).min(self.max_cell[a]))
        };
        if k == 0 {
            self.scan_cell(qc, q, best_sq);
            return;
        }
        let (y0, y1) = clip(1, -k, k);
        let (z0, z1) = clip(2, -k, k);
        for &x in &[qc[0] - k, qc[0] + k] {
            if x < self.min_cell[0] || x > self.max_cell[0] {
                continue;
            }
            for y in y0..=y1 {
                for z in z0..=z1 {
                    self.scan_cell([x, y, z], q, best_sq);
                }
            }
        }
        let (x0, x1) = clip(0, -k + 1, k - 1);
        for &y in &[qc[1] - k, qc[1] + k] {
            if y < self.min_cell[1] || y > self.max_cell[1] {
                continue;
            }
            for x in x0..=x1 {
                for z in z0..=z1 {
                    self.scan_cell([x, y, z], q, best_sq);
                }
            }
        }
        let (y0, y1) = clip(1, -k + 1, k - 1);
        for &z in &[qc[2] - k, qc[2] + k] {
            if z < self.min_cell[2] || z > self.max_cell[2] {
                continue;
            }
            for x in x0..=x1 {
                for y in y0..=y1 {
                    self.scan_cell([x, y, z], q, best_sq);
                }
            }
        }
    }

    /// Exact distance from `q` to its nearest stored point.
    pub fn nearest_distance(&self, q: &Vector3<f64>) -> f64 {
        let qc = Self::cell_of(q, self.cell);
        // First shell that can contain any point, and the last that must.
        let mut k_start = 0i64;
        let mut k_end = 0i64;
        for a in 0..3 {
            let below = self.min_cell[a] - qc[a];
            let above = qc[a] - self.max_cell[a];
            k_start = k_start.max(below.max(above).max(0));
            k_end = k_end.max((qc[a] - self.min_cell[a]).abs().max((qc[a] - self.max_cell[a]).abs()));
        }
        let mut best_sq = f64::INFINITY;
        for k in k_start..=k_end {
            // Any point in shell k is at least (k−1) cells away; the extra
            // whole-cell margin absorbs floor/rounding at cell boundaries,
            // which keeps the result bit-identical to a brute-force scan.
            if best_sq.is_finite() {
                let bound = ((k - 2).max(0)) as f64 * self.cell;
                if bound * bound > best_sq {
                    break;
                }
            }
            self.scan_shell(qc, k, q, &mut best_sq);
        }
        best_sq.sqrt()
    }
}

/// Exact nearest-neighbor distance from every `from` point to the `to` cloud.
pub fn nearest_distances(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Result<Vec<f64>> {
    let grid = PointGrid::build(to)?;
    Ok(from.iter().map(|q| grid.nearest_distance(q)).collect())
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// F-score from precision and recall; zero when both are zero.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall and F-score of `pred` against `gt` at one threshold.
pub fn prf_at(pred_nn: &[f64], gt_nn: &[f64], tau: f64) -> (f64, f64, f64) {
    let frac_within = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let p = frac_within(pred_nn);
    let r = frac_within(gt_nn);
    (p, r, f_score(p, r))
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// Mean predicted-to-ground-truth nearest distance (meters).
    pub accuracy: f64,
    /// Mean ground-truth-to-predicted nearest distance (meters).
    pub completeness: f64,
    /// Thresholds (meters) the following triples are evaluated at.
    pub thresholds: [f64; 3],
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f_score: [f64; 3],
}

/// Full metric report between two non-empty point clouds.
pub fn evaluate_clouds(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<MetricsReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::contract(
            "metrics need non-empty predicted and ground-truth clouds",
        ));
    }
    let pred_nn = nearest_distances(pred, gt)?;
    let gt_nn = nearest_distances(gt, pred)?;
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f = [0.0; 3];
    for (i, tau) in METRIC_THRESHOLDS.iter().enumerate() {
        let (p, r, fv) = prf_at(&pred_nn, &gt_nn, *tau);
        precision[i] = p;
        recall[i] = r;
        f[i] = fv;
    }
    Ok(MetricsReport {
        accuracy: mean(&pred_nn),
        completeness: mean(&gt_nn),
        thresholds: METRIC_THRESHOLDS,
        precision,
        recall,
        f_score: f,
    })
}

/// Report for two sketch sets resampled at `step`.
pub fn evaluate_sets(pred: &SketchSet, gt: &SketchSet, step: f64) -> Result<MetricsReport> {
    evaluate_clouds(&resample_edges(pred, step)?, &resample_edges(gt, step)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn brute_nearest(q: &Vector3<f64>, cloud: &[Vector3<f64>]) -> f64 {
        cloud
            .iter()
            .map(|p| (q - p).norm_squared())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    fn random_cloud(rng: &mut rand_chacha::ChaCha8Rng, n: usize, spread: f64) -> Vec<Vector3<f64>> {
        // Mix of uniform scatter and tight clusters to stress the grid.
        let mut out = Vec::with_capacity(n);
        let center = v(
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
            rng.gen_range(-spread..spread),
        );
        for i in 0..n {
            if i % 3 == 0 {
                out.push(center + v(
                    rng.gen_range(-0.001..0.001),
                    rng.gen_range(-0.001..0.001),
                    rng.gen_range(-0.001..0.001),
                ));
            } else {
                out.push(v(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                ));
            }
        }
        out
    }

    #[test]
    fn grid_distances_equal_brute_force_bitwise() {
        let mut rng = crate::rng::seeded(13);
        for case in 0..50 {
            let nq = rng.gen_range(1..60);
            let nc = rng.gen_range(1..200);
            let spread = [1.0, 0.01, 100.0][case % 3];
            let cloud = random_cloud(&mut rng, nc, spread);
            let queries = random_cloud(&mut rng, nq, spread * 1.5);
            let grid = PointGrid::build(&cloud).unwrap();
            for q in &queries {
                let got = grid.nearest_distance(q);
                let want = brute_nearest(q, &cloud);
                assert_eq!(got.to_bits(), want.to_bits(), "case {case}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn degenerate_clouds_are_exact_too() {
        // All points identical, far-away query.
        let cloud = vec![v(0.5, 0.5, 0.5); 7];
        let grid = PointGrid::build(&cloud).unwrap();
        let q = v(100.0, -3.0, 0.25);
        assert_eq!(
            grid.nearest_distance(&q).to_bits(),
            brute_nearest(&q, &cloud).to_bits()
        );
        // Single point.
        let one = vec![v(-2.0, 0.1, 9.0)];
        let grid = PointGrid::build(&one).unwrap();
        assert_eq!(
            grid.nearest_distance(&q).to_bits(),
            brute_nearest(&q, &one).to_bits()
        );
    }

    #[test]
    fn hand_computed_report() {
        let pred = vec![v(0.0, 0.0, 0.0), v(0.01, 0.0, 0.0)];
        let gt = vec![v(0.0, 0.0, 0.0)];
        let rep = evaluate_clouds(&pred, &gt).unwrap();
        assert_abs_diff_eq!(rep.accuracy, 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.completeness, 0.0, epsilon = 1e-15);
        // τ = 5 mm: only the exact-match point is within; the 10 mm point
        // matches at τ = 10 mm inclusively.
        assert_abs_diff_eq!(rep.precision[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.precision[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.recall[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.f_score[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.f_score[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_clouds_score_perfectly() {
        let mut rng = crate::rng::seeded(14);
        let cloud = random_cloud(&mut rng, 100, 0.5);
        let rep = evaluate_clouds(&cloud, &cloud).unwrap();
        assert_eq!(rep.accuracy, 0.0);
        assert_eq!(rep.completeness, 0.0);
        for i in 0..3 {
            assert_eq!(rep.f_score[i], 1.0);
        }
    }

    #[test]
    fn disjoint_far_clouds_get_zero_f_without_nans() {
        let pred = vec![v(0.0, 0.0, 0.0)];
        let gt = vec![v(10.0, 0.0, 0.0)];
        let rep = evaluate_clouds(&pred, &gt).unwrap();
        for i in 0..3 {
            assert_eq!(rep.precision[i], 0.0);
            assert_eq!(rep.recall[i], 0.0);
            assert_eq!(rep.f_score[i], 0.0);
            assert!(rep.f_score[i].is_finite());
        }
    }

    #[test]
    fn f_score_closed_form_cases() {
        assert_eq!(f_score(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(f_score(0.25, 0.25), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(f_score(0.5, 1.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f_score(1.0, 1.0), 1.0, epsilon = 1e-15);
        assert_eq!(f_score(1.0, 0.0), 0.0);
    }

    #[test]
    fn distances_are_scale_covariant_for_powers_of_two() {
        let mut rng = crate::rng::seeded(15);
        let pred = random_cloud(&mut rng, 50, 0.4);
        let gt = random_cloud(&mut rng, 70, 0.4);
        let nn = nearest_distances(&pred, &gt).unwrap();
        let pred2: Vec<_> = pred.iter().map(|p| 2.0 * p).collect();
        let gt2: Vec<_> = gt.iter().map(|p| 2.0 * p).collect();
        let nn2 = nearest_distances(&pred2, &gt2).unwrap();
        for (a, b) in nn.iter().zip(&nn2) {
            assert_eq!((2.0 * a).to_bits(), b.to_bits());
        }
        // Matching at τ scales with the cloud.
        let gt_nn = nearest_distances(&gt, &pred).unwrap();
        let gt_nn2 = nearest_distances(&gt2, &pred2).unwrap();
        let (p1, r1, f1) = prf_at(&nn, &gt_nn, 0.01);
        let (p2, r2, f2) = prf_at(&nn2, &gt_nn2, 0.02);
        assert_eq!((p1, r1, f1), (p2, r2, f2));
    }

    #[test]
    fn empty_clouds_are_a_contract_error() {
        assert!(evaluate_clouds(&[], &[v(0.0, 0.0, 0.0)]).is_err());
        assert!(evaluate_clouds(&[v(0.0, 0.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn resampling_covers_every_live_sketch() {
        use crate::sketch::{ControlPointPool, Sketch, SketchSet};
        let mut pool = ControlPointPool::new();
        let a = pool.add(v(0.0, 0.0, 0.0));
        let b = pool.add(v(0.02, 0.0, 0.0));
        let c = pool.add(v(0.0, 0.1, 0.0));
        let d = pool.add(v(0.02, 0.1, 0.0));
        let s0 = Sketch::line(a, b, 0.9, v(0.002, 0.0005, 0.0005)).unwrap();
        let mut s1 = Sketch::line(c, d, 0.9, v(0.002, 0.0005, 0.0005)).unwrap();
        s1.alive = false;
        let set = SketchSet::new(pool, vec![s0, s1]);
        let pts = resample_edges(&set, 0.005).unwrap();
        // 20 mm / 5 mm + 1 = 5 samples, all from the live line.
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|p| p.y == 0.0));
    }
}
