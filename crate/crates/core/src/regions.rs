//! Geometry of the injectivity and stability regions: gradient streamlines,
//! level curves, and the per-node visibility tests that define them.

use crate::calculus::{gradient, interpolate_vector};
use crate::error::{CdiError, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::{BoundaryArcSet, DomainGrid};
use crate::mask::{Provenance, RegionMask, Side};
use crate::solver::G_MIN_DEFAULT;
use rayon::prelude::*;

/// Cosine threshold below which a boundary crossing counts as tangential
/// and the level is treated as not visible.
pub const TANGENCY_COS: f64 = 0.05;

/// How a streamline trace ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamlineEnd {
    /// Reached the boundary; carries the exit arc-length parameter.
    Exited { s_exit: f64 },
    /// Interpolated gradient magnitude fell below g_min.
    GminViolation,
}

/// A unit-speed integral curve of `±grad(v)/|grad(v)|`.
#[derive(Debug, Clone)]
pub struct Streamline {
    pub seed: [f64; 2],
    pub sign: f64,
    /// Polyline points, seed first.
    pub points: Vec<[f64; 2]>,
    /// Cumulative arc length at each point.
    pub t: Vec<f64>,
    /// Hit time t_p (last entry of `t` when exit succeeded).
    pub hit_time: f64,
    pub end: StreamlineEnd,
}

/// One connected component of a level set.
#[derive(Debug, Clone)]
pub struct CurveComponent {
    pub points: Vec<[f64; 2]>,
    /// Cumulative arc length.
    pub s: Vec<f64>,
    pub closed: bool,
    /// Boundary arc-length parameters of the two endpoints (open curves).
    pub endpoint_params: Option<(f64, f64)>,
}

impl CurveComponent {
    pub fn length(&self) -> f64 {
        *self.s.last().unwrap_or(&0.0)
    }
}

/// The level set `{v = level}`: the component through the query point plus
/// every other component (all of them matter for the visibility test).
#[derive(Debug, Clone)]
pub struct LevelCurve {
    pub level: f64,
    pub components: Vec<CurveComponent>,
    /// Index of the component passing through the query point.
    pub primary: Option<usize>,
}

/// Tracing parameters derived from the grid.
struct TraceParams {
    step: f64,
    max_steps: usize,
    g_min: f64,
}

impl TraceParams {
    fn new(grid: &DomainGrid, g_min: f64) -> Self {
        let step = grid.h / 2.0;
        TraceParams {
            step,
            max_steps: (10.0 * grid.diameter() / step).ceil() as usize,
            g_min,
        }
    }
}

fn unit_gradient(grad: &VectorField, p: [f64; 2], sign: f64, g_min: f64) -> Option<[f64; 2]> {
    // RK4 substeps can poke just past the boundary; sample the nearest
    // in-box point instead of failing.
    let grid = &grad.grid;
    let span = (grid.nx - 1) as f64 * grid.h;
    let p = [
        p[0].clamp(grid.origin[0], grid.origin[0] + span),
        p[1].clamp(grid.origin[1], grid.origin[1] + span),
    ];
    let g = interpolate_vector(grad, p).ok()?;
    let m = (g[0] * g[0] + g[1] * g[1]).sqrt();
    if m < g_min {
        return None;
    }
    Some([sign * g[0] / m, sign * g[1] / m])
}

fn rk4_step(grad: &VectorField, p: [f64; 2], sign: f64, dt: f64, g_min: f64) -> Option<[f64; 2]> {
    let k1 = unit_gradient(grad, p, sign, g_min)?;
    // Substeps can land in cells with no usable corners just before a
    // boundary crossing (curved boundaries); degrade to an Euler step there
    // so the crossing itself is still detected and bisected.
    let euler = [p[0] + dt * k1[0], p[1] + dt * k1[1]];
    let Some(k2) = unit_gradient(
        grad,
        [p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]],
        sign,
        g_min,
    ) else {
        return Some(euler);
    };
    let Some(k3) = unit_gradient(
        grad,
        [p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]],
        sign,
        g_min,
    ) else {
        return Some(euler);
    };
    let Some(k4) = unit_gradient(grad, [p[0] + dt * k3[0], p[1] + dt * k3[1]], sign, g_min)
    else {
        return Some(euler);
    };
    Some([
        p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ])
}

/// Trace the integral curve of the normalized gradient from `p`.
///
/// RK4 with step h/2; the boundary crossing is refined by bisection on the
/// step size to 1e-8 in the signed distance.
pub fn trace_streamline(p: [f64; 2], v: &ScalarField, sign: f64) -> Result<Streamline> {
    let grad = gradient(v)?;
    trace_streamline_with(p, &grad, sign, G_MIN_DEFAULT)
}

/// Same as [`trace_streamline`] with a precomputed gradient; used when many
/// streamlines share one field.
pub fn trace_streamline_with(
    p: [f64; 2],
    grad: &VectorField,
    sign: f64,
    g_min: f64,
) -> Result<Streamline> {
    let grid = &grad.grid;
    if grid.signed_distance(p) > 1e-12 {
        return Err(CdiError::SeedOutsideDomain(p[0], p[1]));
    }
    let params = TraceParams::new(grid, g_min);
    let mut points = vec![p];
    let mut t = vec![0.0];
    let mut cur = p;
    for _ in 0..params.max_steps {
        let next = match rk4_step(grad, cur, sign, params.step, params.g_min) {
            Some(q) => q,
            None => {
                return Ok(Streamline {
                    seed: p,
                    sign,
                    hit_time: *t.last().unwrap(),
                    points,
                    t,
                    end: StreamlineEnd::GminViolation,
                })
            }
        };
        if grid.signed_distance(next) >= 0.0 {
            // Crossed (or landed on) the boundary: bisect the step size.
            let mut lo = 0.0;
            let mut hi = params.step;
            let mut exit = next;
            for _ in 0..60 {
                if (grid.signed_distance(exit)).abs() <= 1e-8 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let q = rk4_step(grad, cur, sign, mid, params.g_min).unwrap_or(exit);
                if grid.signed_distance(q) >= 0.0 {
                    hi = mid;
                    exit = q;
                } else {
                    lo = mid;
                }
            }
            // Pull the refined point back onto the closed domain so callers
            // can evaluate fields there.
            let exit = match grid.shape {
                crate::grid::Shape::Square => [exit[0].clamp(0.0, 1.0), exit[1].clamp(0.0, 1.0)],
                crate::grid::Shape::Disk => {
                    let r = exit[0].hypot(exit[1]);
                    if r > 1.0 {
                        [exit[0] / r, exit[1] / r]
                    } else {
                        exit
                    }
                }
            };
            let dt = (exit[0] - cur[0]).hypot(exit[1] - cur[1]);
            let t_exit = t.last().unwrap() + dt;
            points.push(exit);
            t.push(t_exit);
            let s_exit = grid.boundary_param(exit);
            return Ok(Streamline {
                seed: p,
                sign,
                points,
                t,
                hit_time: t_exit,
                end: StreamlineEnd::Exited { s_exit },
            });
        }
        let dt = (next[0] - cur[0]).hypot(next[1] - cur[1]);
        t.push(t.last().unwrap() + dt);
        points.push(next);
        cur = next;
    }
    Err(CdiError::PathologicalField(params.max_steps))
}

impl Streamline {
    pub fn exited(&self) -> bool {
        matches!(self.end, StreamlineEnd::Exited { .. })
    }

    pub fn exit_param(&self) -> Option<f64> {
        match self.end {
            StreamlineEnd::Exited { s_exit } => Some(s_exit),
            StreamlineEnd::GminViolation => None,
        }
    }

    /// Point at arc length `tq`, linear between stored samples.
    pub fn position_at(&self, tq: f64) -> [f64; 2] {
        let t = &self.t;
        if tq <= t[0] {
            return self.points[0];
        }
        if tq >= *t.last().unwrap() {
            return *self.points.last().unwrap();
        }
        let k = t.partition_point(|&x| x < tq).max(1);
        let (t0, t1) = (t[k - 1], t[k]);
        let w = if t1 > t0 { (tq - t0) / (t1 - t0) } else { 0.0 };
        let (a, b) = (self.points[k - 1], self.points[k]);
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
    }
}

// ---------------------------------------------------------------------------
// Level curves (marching squares)
// ---------------------------------------------------------------------------

fn quantize(p: [f64; 2], h: f64) -> (i64, i64) {
    let q = h * 1e-7;
    ((p[0] / q).round() as i64, (p[1] / q).round() as i64)
}

/// Raw marching-squares segments of `{v = level}` over cells whose four
/// corners are domain nodes.
fn contour_segments(v: &ScalarField, level: f64) -> Vec<([f64; 2], [f64; 2])> {
    let grid = &v.grid;
    let nx = grid.nx;
    let h = grid.h;
    let mut segments = Vec::new();
    for cj in 0..grid.n_cells {
        for ci in 0..grid.n_cells {
            let idx00 = cj * nx + ci;
            let idx10 = idx00 + 1;
            let idx01 = idx00 + nx;
            let idx11 = idx01 + 1;
            if !(grid.in_domain(idx00)
                && grid.in_domain(idx10)
                && grid.in_domain(idx01)
                && grid.in_domain(idx11))
            {
                continue;
            }
            let z = [
                v.values[idx00] - level,
                v.values[idx10] - level,
                v.values[idx11] - level,
                v.values[idx01] - level,
            ];
            let code = (z[0] > 0.0) as usize
                | ((z[1] > 0.0) as usize) << 1
                | ((z[2] > 0.0) as usize) << 2
                | ((z[3] > 0.0) as usize) << 3;
            if code == 0 || code == 15 {
                continue;
            }
            let x0 = grid.origin[0] + ci as f64 * h;
            let y0 = grid.origin[1] + cj as f64 * h;
            // Edge order: bottom, right, top, left.
            let lerp = |za: f64, zb: f64| za / (za - zb);
            let edge_point = |e: usize| -> [f64; 2] {
                match e {
                    0 => [x0 + h * lerp(z[0], z[1]), y0],
                    1 => [x0 + h, y0 + h * lerp(z[1], z[2])],
                    2 => [x0 + h * lerp(z[3], z[2]), y0 + h],
                    _ => [x0, y0 + h * lerp(z[0], z[3])],
                }
            };
            let mut emit = |a: usize, b: usize| segments.push((edge_point(a), edge_point(b)));
            match code {
                1 | 14 => emit(3, 0),
                2 | 13 => emit(0, 1),
                3 | 12 => emit(3, 1),
                4 | 11 => emit(1, 2),
                6 | 9 => emit(0, 2),
                7 | 8 => emit(3, 2),
                5 | 10 => {
                    // Saddle: decide by the cell-center value.
                    let center = 0.25 * (z[0] + z[1] + z[2] + z[3]);
                    let flip = (center > 0.0) == (code == 5);
                    if flip {
                        emit(3, 0);
                        emit(1, 2);
                    } else {
                        emit(0, 1);
                        emit(3, 2);
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    segments
}

/// Chain raw segments into ordered polylines.
fn chain_segments(segments: Vec<([f64; 2], [f64; 2])>, h: f64) -> Vec<Vec<[f64; 2]>> {
    use std::collections::HashMap;
    let mut adjacency: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(quantize(*a, h)).or_default().push(k);
        adjacency.entry(quantize(*b, h)).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a, b) = segments[start];
        let mut line = std::collections::VecDeque::from([a, b]);
        // Grow from both ends.
        for forward in [true, false] {
            loop {
                let tip = if forward {
                    *line.back().unwrap()
                } else {
                    *line.front().unwrap()
                };
                let key = quantize(tip, h);
                let Some(cands) = adjacency.get(&key) else {
                    break;
                };
                let mut advanced = false;
                for &k in cands {
                    if used[k] {
                        continue;
                    }
                    let (sa, sb) = segments[k];
                    let next = if quantize(sa, h) == key {
                        sb
                    } else if quantize(sb, h) == key {
                        sa
                    } else {
                        continue;
                    };
                    used[k] = true;
                    if forward {
                        line.push_back(next);
                    } else {
                        line.push_front(next);
                    }
                    advanced = true;
                    break;
                }
                if !advanced {
                    break;
                }
            }
        }
        polylines.push(line.into_iter().collect());
    }
    polylines
}

fn build_component(grid: &DomainGrid, points: Vec<[f64; 2]>) -> CurveComponent {
    let closed = points.len() > 2
        && quantize(points[0], grid.h) == quantize(*points.last().unwrap(), grid.h);
    let mut s = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    s.push(0.0);
    for w in points.windows(2) {
        acc += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        s.push(acc);
    }
    let endpoint_params = if closed {
        None
    } else {
        Some((
            grid.boundary_param(points[0]),
            grid.boundary_param(*points.last().unwrap()),
        ))
    };
    CurveComponent {
        points,
        s,
        closed,
        endpoint_params,
    }
}

/// Critical values of `v`: values at interior nodes failing the g_min test.
pub fn critical_values(v: &ScalarField, g_min: f64) -> Result<Vec<f64>> {
    let grad = gradient(v)?;
    Ok((0..v.grid.node_count())
        .filter(|&idx| {
            v.grid.is_interior(idx)
                && (grad.vx[idx] * grad.vx[idx] + grad.vy[idx] * grad.vy[idx]).sqrt() < g_min
        })
        .map(|idx| v.values[idx])
        .collect())
}

/// Extract all components of `{v = v(p)}`; the component containing `p` is
/// marked primary. Errors if the level sits within the contour tolerance of
/// a critical value.
pub fn level_curve(p: [f64; 2], v: &ScalarField) -> Result<LevelCurve> {
    let level = crate::calculus::interpolate_scalar(v, p)?;
    level_curve_at(level, v, Some(p))
}

/// Level-set extraction at an explicit level value.
pub fn level_curve_at(level: f64, v: &ScalarField, query: Option<[f64; 2]>) -> Result<LevelCurve> {
    let grid = &v.grid;
    let grad = gradient(v)?;
    let gmax = (0..grid.node_count())
        .filter(|&i| grid.in_domain(i))
        .map(|i| (grad.vx[i] * grad.vx[i] + grad.vy[i] * grad.vy[i]).sqrt())
        .fold(0.0, f64::max);
    let tol = grid.h * gmax;
    for c in critical_values(v, G_MIN_DEFAULT)? {
        if (level - c).abs() <= tol {
            return Err(CdiError::NearCriticalLevel { level, critical: c });
        }
    }
    let components: Vec<CurveComponent> = chain_segments(contour_segments(v, level), grid.h)
        .into_iter()
        .map(|pts| build_component(grid, pts))
        .collect();
    let primary = query.and_then(|q| {
        components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let d = c
                    .points
                    .iter()
                    .map(|pt| (pt[0] - q[0]).hypot(pt[1] - q[1]))
                    .fold(f64::INFINITY, f64::min);
                (k, d)
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .filter(|&(_, d)| d <= 2.0 * grid.h)
            .map(|(k, _)| k)
    });
    Ok(LevelCurve {
        level,
        components,
        primary,
    })
}

// ---------------------------------------------------------------------------
// Injectivity region
// ---------------------------------------------------------------------------

/// Value intervals attained by `v` on the inaccessible part of the
/// boundary ring (plus tangential-contact levels inside Gamma). A level
/// whose value meets one of these intervals has a boundary intersection
/// outside Gamma and is not visible.
fn forbidden_level_intervals(
    v: &ScalarField,
    grad: &VectorField,
    gamma: &BoundaryArcSet,
    eta: f64,
) -> Vec<(f64, f64)> {
    let grid = &v.grid;
    let ring = grid.boundary_nodes();
    let shrunk = gamma.shrink(eta);
    let mut intervals = Vec::new();
    let m = ring.len();
    for k in 0..m {
        let a = &ring[k];
        let b = &ring[(k + 1) % m];
        let (va, vb) = (v.values[a.node], v.values[b.node]);
        let seg_ok = shrunk.contains(a.s) && shrunk.contains(b.s) && {
            // Guard against a segment spanning a gap of Gamma: its midpoint
            // must be accessible too.
            let mid = if k + 1 == m {
                (a.s + b.s + grid.perimeter) / 2.0
            } else {
                (a.s + b.s) / 2.0
            };
            shrunk.contains(mid)
        };
        if !seg_ok {
            intervals.push((va.min(vb), va.max(vb)));
            continue;
        }
        // Accessible segment: flag levels whose curve grazes the boundary
        // tangentially here (level tangent nearly parallel to the wall).
        for node in [a, b] {
            let g = grad.at(node.node);
            let gm = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if gm > 0.0 {
                let cross = (g[0] * node.normal[1] - g[1] * node.normal[0]).abs() / gm;
                if cross < TANGENCY_COS {
                    let val = v.values[node.node];
                    let pad = grid.h * gm;
                    intervals.push((val - pad, val + pad));
                }
            }
        }
    }
    intervals.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    // Merge overlaps.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in intervals {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

fn in_intervals(merged: &[(f64, f64)], x: f64) -> bool {
    let k = merged.partition_point(|&(lo, _)| lo <= x);
    k > 0 && x <= merged[k - 1].1
}

/// The injectivity region I(Gamma, v): nodes whose level set meets the
/// boundary only inside Gamma (shrunk by the eta = 2h safety margin).
///
/// A node is visible exactly when the boundary trace of `v` never attains
/// the node's level outside the shrunk Gamma; the test therefore scans the
/// level's boundary intersections through the boundary trace directly.
pub fn injectivity_region(gamma: &BoundaryArcSet, v: &ScalarField) -> Result<RegionMask> {
    let grid = v.grid.clone();
    let grad = gradient(v)?;
    let eta = 2.0 * grid.h;
    // With full boundary data every level is visible by definition; the
    // per-segment scan would only introduce spurious exclusions.
    let forbidden = if gamma.is_full() {
        Vec::new()
    } else {
        forbidden_level_intervals(v, &grad, gamma, eta)
    };
    let crits = critical_values(v, G_MIN_DEFAULT)?;
    let gmax = (0..grid.node_count())
        .filter(|&i| grid.in_domain(i))
        .map(|i| (grad.vx[i] * grad.vx[i] + grad.vy[i] * grad.vy[i]).sqrt())
        .fold(0.0, f64::max);
    let cell_tol = grid.h * gmax;
    let mask: Vec<bool> = (0..grid.node_count())
        .into_par_iter()
        .map(|idx| {
            if !grid.is_interior(idx) {
                return false;
            }
            let g = grad.at(idx);
            if (g[0] * g[0] + g[1] * g[1]).sqrt() < G_MIN_DEFAULT {
                return false;
            }
            let val = v.values[idx];
            if crits.iter().any(|&c| (val - c).abs() <= cell_tol) {
                return false;
            }
            !in_intervals(&forbidden, val)
        })
        .collect();
    Ok(RegionMask::new(grid, mask, Provenance::Injectivity))
}

// ---------------------------------------------------------------------------
// Stability region
// ---------------------------------------------------------------------------

/// The stability region S(Gamma, v) together with the winning streamline
/// side per node. A node of I enters S when at least one of the two
/// streamlines stays inside I (sampled away from the boundary) until its
/// boundary exit.
pub fn stability_region(
    gamma: &BoundaryArcSet,
    v: &ScalarField,
    injectivity: &RegionMask,
) -> Result<(RegionMask, Vec<Side>)> {
    let grid = v.grid.clone();
    let grad = gradient(v)?;
    let eta = 2.0 * grid.h;
    let shrunk = gamma.shrink(eta);
    // The eta shrink of Gamma removes a collar of width up to eta + h from
    // the injectivity mask next to the boundary; a trace approaching its
    // exit must not be penalized for crossing that collar.
    let edge_slack = 2.0 * eta;

    let side_of = |idx: usize| -> Side {
        if !injectivity.contains(idx) {
            return Side::None;
        }
        let p = grid.xy(idx);
        let mut plus_ok = false;
        let mut minus_ok = false;
        for sign in [1.0, -1.0] {
            let ok = match trace_streamline_with(p, &grad, sign, G_MIN_DEFAULT) {
                Ok(line) if line.exited() => {
                    // Reject tangential exits: the trace must leave the
                    // domain transversally for the exit point to be usable.
                    let exit = *line.points.last().unwrap();
                    let n = grid.boundary_normal(exit);
                    let transversal = match interpolate_vector(&grad, exit) {
                        Ok(g) => {
                            let gm = (g[0] * g[0] + g[1] * g[1]).sqrt();
                            gm > 0.0
                                && (g[0] * n[0] + g[1] * n[1]).abs() / gm >= TANGENCY_COS
                        }
                        Err(_) => false,
                    };
                    transversal && line.points.iter().all(|&q| {
                        if grid.signed_distance(q) > -edge_slack {
                            return true; // within the boundary collar
                        }
                        let i = (((q[0] - grid.origin[0]) / grid.h).round() as usize)
                            .min(grid.nx - 1);
                        let j = (((q[1] - grid.origin[1]) / grid.h).round() as usize)
                            .min(grid.nx - 1);
                        let node = grid.idx(i, j);
                        !grid.is_interior(node) || injectivity.contains(node)
                    })
                }
                _ => false,
            };
            if sign > 0.0 {
                plus_ok = ok;
            } else {
                minus_ok = ok;
            }
        }
        match (plus_ok, minus_ok) {
            (true, true) => Side::Both,
            (true, false) => Side::Plus,
            (false, true) => Side::Minus,
            (false, false) => Side::None,
        }
    };

    let sides: Vec<Side> = (0..grid.node_count()).into_par_iter().map(side_of).collect();
    let mask: Vec<bool> = sides.iter().map(|&s| s != Side::None).collect();
    let _ = &shrunk; // exit arcs are recorded per-node by the transport stage
    Ok((
        RegionMask::new(grid, mask, Provenance::Stability),
        sides,
    ))
}

/// Convenience: both regions for a potential `v` and accessible set Gamma.
pub fn regions(
    gamma: &BoundaryArcSet,
    v: &ScalarField,
) -> Result<(RegionMask, RegionMask, Vec<Side>)> {
    let inj = injectivity_region(gamma, v)?;
    let (stab, sides) = stability_region(gamma, v, &inj)?;
    Ok((inj, stab, sides))
}

pub use crate::mask::Side as StreamSide;
