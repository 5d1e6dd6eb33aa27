//! Structural clean-up passes over a sketch set.
//!
//! Optimization moves control points but cannot change connectivity; these
//! passes do. Three merging operations run periodically during training —
//! endpoint snapping, removal of sketches another sketch already covers, and
//! fusion of co-linear line segments — plus a final visibility filter that
//! drops sketches the target edge maps do not support. Every pass leaves the
//! set valid and garbage-collects control points no live sketch references.
//!
//! All decision rules are deterministic: candidates are processed in sorted
//! order with explicit tie-breaks, so a given input always produces the same
//! output.

use std::collections::HashSet;

use crate::camera::{Camera, NEAR_PLANE};
use crate::error::{Error, Result};
use crate::image::EdgeImage;
use crate::sketch::{
    sample_points, sketch_aabb, SketchKind, SketchSet, DEFAULT_SAMPLE_STEP,
};

/// Endpoints closer than this (meters) are snapped together.
pub const TH_CONNECT: f64 = 0.010;

/// Sample-to-curve distance (meters) that counts as "covered" in the overlap
/// test.
pub const TH_NEIGHBOR: f64 = 0.010;

/// Coverage ratio above which a sketch is considered redundant.
pub const TH_OVERLAP: f64 = 0.8;

/// Maximum angle (degrees) between two lines that can fuse.
pub const TH_COLINEAR_ANGLE_DEG: f64 = 5.0;

/// Maximum endpoint-to-line offset (meters) for co-linear fusion.
pub const TH_COLINEAR_OFFSET: f64 = 0.010;

/// Invisible-sample fraction above which a sketch is dropped.
pub const TH_VISIBILITY: f64 = 0.5;

/// Target-image intensity at or above which a projected point counts as
/// edge-supported.
pub const EDGE_SUPPORT_FLOOR: f64 = 0.25;

/// A point is invisible when it lacks support in more than this fraction of
/// views.
pub const INVISIBLE_VIEW_FRACTION: f64 = 0.9;

/// Thresholds shared by the periodic topology step.
#[derive(Debug, Clone)]
pub struct TopologyConfig {
    pub th_connect: f64,
    pub th_neighbor: f64,
    pub th_overlap: f64,
    pub th_visibility: f64,
    pub sample_step: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            th_connect: TH_CONNECT,
            th_neighbor: TH_NEIGHBOR,
            th_overlap: TH_OVERLAP,
            th_visibility: TH_VISIBILITY,
            sample_step: DEFAULT_SAMPLE_STEP,
        }
    }
}

/// Counts from one periodic topology step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TopologyOutcome {
    pub endpoint_merges: usize,
    pub overlap_removed: usize,
    pub colinear_merges: usize,
}

// ---------------------------------------------------------------------------
// Endpoint merging
// ---------------------------------------------------------------------------

/// Snaps endpoints of *different* sketches that lie closer than `th_connect`.
///
/// Candidate pairs are processed in ascending (distance, index) order; each
/// endpoint participates in at most one merge per pass, and passes repeat
/// until none applies. A merge moves the lower point index to the pair's
/// midpoint, redirects all references to the higher index, and retires it.
/// Returns the number of merges performed.
pub fn merge_endpoints(set: &mut SketchSet, th_connect: f64) -> Result<usize> {
    if !(th_connect > 0.0 && th_connect.is_finite()) {
        return Err(Error::contract(format!(
            "th_connect must be positive, got {th_connect}"
        )));
    }
    let mut total = 0usize;
    loop {
        // Endpoint owners: point index → sketches that end there.
        let mut owners: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut owner_of = std::collections::HashMap::<usize, usize>::new();
        for sid in set.live_sketch_indices().collect::<Vec<_>>() {
            let (a, b) = set.sketches[sid].endpoints();
            for p in [a, b] {
                let slot = *owner_of.entry(p).or_insert_with(|| {
                    owners.push((p, Vec::new()));
                    owners.len() - 1
                });
                owners[slot].1.push(sid);
            }
        }

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for ai in 0..owners.len() {
            for bi in ai + 1..owners.len() {
                let (pa, ref sa) = owners[ai];
                let (pb, ref sb) = owners[bi];
                // Endpoints must belong to at least two distinct sketches.
                let same_single =
                    sa.iter().chain(sb.iter()).collect::<HashSet<_>>().len() == 1;
                if same_single {
                    continue;
                }
                let dist = (set.pool.pos(pa) - set.pool.pos(pb)).norm();
                if dist < th_connect {
                    let (lo, hi) = if pa < pb { (pa, pb) } else { (pb, pa) };
                    candidates.push((dist, lo, hi));
                }
            }
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
        });

        let mut consumed: HashSet<usize> = HashSet::new();
        let mut merged_this_pass = 0usize;
        for (_, lo, hi) in candidates {
            if consumed.contains(&lo) || consumed.contains(&hi) {
                continue;
            }
            let mid = 0.5 * (set.pool.pos(lo) + set.pool.pos(hi));
            set.pool.set(lo, mid);
            for sketch in set.sketches.iter_mut().filter(|s| s.alive) {
                for c in sketch.ctrl.iter_mut() {
                    if *c == hi {
                        *c = lo;
                    }
                }
            }
            set.pool.kill(hi);
            consumed.insert(lo);
            consumed.insert(hi);
            merged_this_pass += 1;
        }
        total += merged_this_pass;
        if merged_this_pass == 0 {
            break;
        }
    }
    set.gc_unreferenced_points();
    Ok(total)
}

// ---------------------------------------------------------------------------
// Overlap removal
// ---------------------------------------------------------------------------

/// Fraction of `from` samples whose nearest `to` sample lies within `th`.
fn coverage(from: &[nalgebra::Vector3<f64>], to: &[nalgebra::Vector3<f64>], th: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let th2 = th * th;
    let covered = from
        .iter()
        .filter(|p| to.iter().any(|q| (*p - q).norm_squared() <= th2))
        .count();
    covered as f64 / from.len() as f64
}

/// Removes sketches that another sketch already covers.
///
/// For each candidate pair (bounding boxes padded by `th_neighbor` must
/// intersect), coverage ratios are computed from dense samples. A sketch
/// whose ratio exceeds `th_overlap` is removed; when both exceed it, the one
/// with the larger ratio goes (ties: shorter arc length, then higher index).
/// Returns the number removed.
pub fn merge_overlapping(
    set: &mut SketchSet,
    th_neighbor: f64,
    th_overlap: f64,
    sample_step: f64,
) -> Result<usize> {
    let ids: Vec<usize> = set.live_sketch_indices().collect();
    let mut samples = Vec::with_capacity(ids.len());
    let mut arclens = Vec::with_capacity(ids.len());
    let mut boxes = Vec::with_capacity(ids.len());
    for &sid in &ids {
        let pts = sample_points(&set.sketches[sid], &set.pool, sid, sample_step)?;
        let plan = crate::sketch::plan_sample_ts(&set.sketches[sid], &set.pool, sample_step)?;
        arclens.push(plan.arclen);
        boxes.push(sketch_aabb(&set.sketches[sid], &set.pool, th_neighbor)?);
        samples.push(pts.into_iter().map(|s| s.position).collect::<Vec<_>>());
    }

    let mut dead: HashSet<usize> = HashSet::new();
    let mut removed = 0usize;
    for a in 0..ids.len() {
        if dead.contains(&ids[a]) {
            continue;
        }
        for b in a + 1..ids.len() {
            if dead.contains(&ids[a]) {
                break;
            }
            if dead.contains(&ids[b]) || !boxes[a].intersects(&boxes[b]) {
                continue;
            }
            let r_ab = coverage(&samples[a], &samples[b], th_neighbor);
            let r_ba = coverage(&samples[b], &samples[a], th_neighbor);
            let kill = if r_ab > th_overlap && r_ba > th_overlap {
                if r_ab > r_ba {
                    Some(a)
                } else if r_ba > r_ab {
                    Some(b)
                } else if arclens[a] < arclens[b] {
                    Some(a)
                } else if arclens[b] < arclens[a] {
                    Some(b)
                } else {
                    Some(b) // equal ratio and length: drop the higher index
                }
            } else if r_ab > th_overlap {
                Some(a)
            } else if r_ba > th_overlap {
                Some(b)
            } else {
                None
            };
            if let Some(k) = kill {
                set.sketches[ids[k]].alive = false;
                dead.insert(ids[k]);
                removed += 1;
            }
        }
    }
    set.gc_unreferenced_points();
    Ok(removed)
}

// ---------------------------------------------------------------------------
// Co-linear fusion
// ---------------------------------------------------------------------------

fn point_line_offset(
    p: nalgebra::Vector3<f64>,
    base: nalgebra::Vector3<f64>,
    dir: nalgebra::Vector3<f64>,
) -> f64 {
    let d = p - base;
    (d - d.dot(&dir) * dir).norm()
}

/// Fuses nearly co-linear line segments (lines only; curves never fuse).
///
/// Two live lines fuse when their directions agree within
/// `th_angle_deg`, every endpoint of each lies within `th_offset` of the
/// other's infinite line, and their projections onto the longer line's
/// direction overlap or leave a gap of at most `th_connect`. The lower-index
/// line is rewritten in place to span the two projection-extreme original
/// endpoints (keeping its opacity and scale); the other line is removed.
/// Sweeps repeat until no fusion applies, so chains collapse fully. Returns
/// the number of fusions.
pub fn merge_colinear(
    set: &mut SketchSet,
    th_angle_deg: f64,
    th_offset: f64,
    th_connect: f64,
) -> Result<usize> {
    let cos_th = th_angle_deg.to_radians().cos();
    let mut total = 0usize;
    loop {
        let lines: Vec<usize> = set
            .live_sketch_indices()
            .filter(|&sid| set.sketches[sid].kind == SketchKind::Line)
            .collect();
        let mut merged_this_sweep = 0usize;
        for ai in 0..lines.len() {
            let i = lines[ai];
            if !set.sketches[i].alive {
                continue;
            }
            for &j in &lines[ai + 1..] {
                if !set.sketches[j].alive || !set.sketches[i].alive {
                    continue;
                }
                let (i0, i1) = set.sketches[i].endpoints();
                let (j0, j1) = set.sketches[j].endpoints();
                let (pi0, pi1) = (set.pool.pos(i0), set.pool.pos(i1));
                let (pj0, pj1) = (set.pool.pos(j0), set.pool.pos(j1));
                let (li, lj) = ((pi1 - pi0).norm(), (pj1 - pj0).norm());
                if li == 0.0 || lj == 0.0 {
                    continue;
                }
                let (ui, uj) = ((pi1 - pi0) / li, (pj1 - pj0) / lj);
                if ui.dot(&uj).abs() < cos_th {
                    continue;
                }
                let off = point_line_offset(pj0, pi0, ui)
                    .max(point_line_offset(pj1, pi0, ui))
                    .max(point_line_offset(pi0, pj0, uj))
                    .max(point_line_offset(pi1, pj0, uj));
                if off > th_offset {
                    continue;
                }
                // Project every endpoint onto the longer line's direction
                // (ties break to the lower-index line).
                let (base, dir) = if lj > li { (pj0, uj) } else { (pi0, ui) };
                let pts = [(i0, pi0), (i1, pi1), (j0, pj0), (j1, pj1)];
                let s: Vec<f64> = pts.iter().map(|(_, p)| (p - base).dot(&dir)).collect();
                let (ilo, ihi) = (s[0].min(s[1]), s[0].max(s[1]));
                let (jlo, jhi) = (s[2].min(s[3]), s[2].max(s[3]));
                let gap = (jlo - ihi).max(ilo - jhi);
                if gap > th_connect {
                    continue;
                }
                let mut k_min = 0;
                let mut k_max = 0;
                for k in 1..4 {
                    if s[k] < s[k_min] {
                        k_min = k;
                    }
                    if s[k] > s[k_max] {
                        k_max = k;
                    }
                }
                if pts[k_min].0 == pts[k_max].0 {
                    continue; // all four endpoints coincide
                }
                set.sketches[i].ctrl = vec![pts[k_min].0, pts[k_max].0];
                set.sketches[j].alive = false;
                merged_this_sweep += 1;
            }
        }
        total += merged_this_sweep;
        if merged_this_sweep == 0 {
            break;
        }
    }
    set.gc_unreferenced_points();
    Ok(total)
}

// ---------------------------------------------------------------------------
// Visibility
// ---------------------------------------------------------------------------

/// True when `p` projects inside the view and lands on a supported
/// (sufficiently bright) target pixel.
pub fn point_edge_supported(
    p: &nalgebra::Vector3<f64>,
    cam: &Camera,
    target: &EdgeImage,
) -> bool {
    let pc = cam.to_cam(p);
    if pc.z <= NEAR_PLANE {
        return false;
    }
    let uv = cam.project_cam(&pc);
    if !cam.in_image(&uv) {
        return false;
    }
    target.get(uv.x.floor() as u32, uv.y.floor() as u32) >= EDGE_SUPPORT_FLOOR
}

/// True when `p` lacks edge support in more than [`INVISIBLE_VIEW_FRACTION`]
/// of the views. The comparison is integer-exact (`10·unsupported > 9·n`), so
/// boundary counts behave predictably.
pub fn point_invisible(
    p: &nalgebra::Vector3<f64>,
    cameras: &[Camera],
    targets: &[EdgeImage],
) -> bool {
    let supported = cameras
        .iter()
        .zip(targets)
        .filter(|(c, t)| point_edge_supported(p, c, t))
        .count();
    let unsupported = cameras.len() - supported;
    10 * unsupported > 9 * cameras.len()
}

/// Removes sketches whose invisible-sample fraction strictly exceeds
/// `th_visibility` (a sketch at exactly the threshold is kept). Returns the
/// number removed.
pub fn filter_invisible(
    set: &mut SketchSet,
    cameras: &[Camera],
    targets: &[EdgeImage],
    th_visibility: f64,
    sample_step: f64,
) -> Result<usize> {
    if cameras.len() != targets.len() || cameras.is_empty() {
        return Err(Error::contract(
            "visibility filtering needs matching, non-empty camera and target lists",
        ));
    }
    for (cam, img) in cameras.iter().zip(targets) {
        if cam.width != img.width() || cam.height != img.height() {
            return Err(Error::contract("camera and target image sizes differ"));
        }
    }
    let mut removed = 0usize;
    for sid in set.live_sketch_indices().collect::<Vec<_>>() {
        let pts = sample_points(&set.sketches[sid], &set.pool, sid, sample_step)?;
        let invisible = pts
            .iter()
            .filter(|sp| point_invisible(&sp.position, cameras, targets))
            .count();
        if invisible as f64 / pts.len() as f64 > th_visibility {
            set.sketches[sid].alive = false;
            removed += 1;
        }
    }
    set.gc_unreferenced_points();
    Ok(removed)
}

/// The periodic topology step: endpoint merge, overlap removal, co-linear
/// fusion, in that order.
pub fn run_topology_step(set: &mut SketchSet, cfg: &TopologyConfig) -> Result<TopologyOutcome> {
    let endpoint_merges = merge_endpoints(set, cfg.th_connect)?;
    let overlap_removed =
        merge_overlapping(set, cfg.th_neighbor, cfg.th_overlap, cfg.sample_step)?;
    let colinear_merges =
        merge_colinear(set, TH_COLINEAR_ANGLE_DEG, TH_COLINEAR_OFFSET, cfg.th_connect)?;
    set.validate()?;
    Ok(TopologyOutcome {
        endpoint_merges,
        overlap_removed,
        colinear_merges,
    })
}
