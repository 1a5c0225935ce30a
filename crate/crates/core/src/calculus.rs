//! Discrete differential calculus on masked grids: second-order gradients,
//! divergence, Laplacian, bilinear interpolation, and masked norms.
//!
//! Central differences are used wherever the full stencil lies in the
//! domain mask; one-sided second-order stencils take over at
//! boundary-adjacent nodes so the field calculus stays O(h^2) up to the
//! mask edge.

use crate::error::{CdiError, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::DomainGrid;
use crate::mask::RegionMask;

/// First derivative of one value column along one axis at a single node.
///
/// `get(k)` returns the value at offset `k` from the node along the axis,
/// `ok(k)` whether that offset is inside the domain mask.
fn deriv_1d(get: impl Fn(isize) -> f64, ok: impl Fn(isize) -> bool, h: f64) -> f64 {
    if ok(-1) && ok(1) {
        (get(1) - get(-1)) / (2.0 * h)
    } else if ok(1) && ok(2) {
        (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
    } else if ok(-1) && ok(-2) {
        (3.0 * get(0) - 4.0 * get(-1) + get(-2)) / (2.0 * h)
    } else if ok(1) {
        (get(1) - get(0)) / h
    } else if ok(-1) {
        (get(0) - get(-1)) / h
    } else {
        0.0
    }
}

/// Second derivative along one axis; one-sided variants are second order.
fn deriv2_1d(get: impl Fn(isize) -> f64, ok: impl Fn(isize) -> bool, h: f64) -> f64 {
    let h2 = h * h;
    if ok(-1) && ok(1) {
        (get(1) - 2.0 * get(0) + get(-1)) / h2
    } else if ok(1) && ok(2) && ok(3) {
        (2.0 * get(0) - 5.0 * get(1) + 4.0 * get(2) - get(3)) / h2
    } else if ok(-1) && ok(-2) && ok(-3) {
        (2.0 * get(0) - 5.0 * get(-1) + 4.0 * get(-2) - get(-3)) / h2
    } else if ok(1) && ok(2) {
        (get(0) - 2.0 * get(1) + get(2)) / h2
    } else if ok(-1) && ok(-2) {
        (get(0) - 2.0 * get(-1) + get(-2)) / h2
    } else {
        0.0
    }
}

fn axis_derivative(
    grid: &DomainGrid,
    values: &[f64],
    idx: usize,
    axis: usize,
    second: bool,
) -> f64 {
    let nx = grid.nx as isize;
    let (i, j) = grid.ij(idx);
    let (i, j) = (i as isize, j as isize);
    let step = if axis == 0 { 1 } else { nx };
    let coord = if axis == 0 { i } else { j };
    let base = idx as isize;
    let ok = |k: isize| {
        let c = coord + k;
        c >= 0 && c < nx && grid.in_domain((base + k * step) as usize)
    };
    let get = |k: isize| values[(base + k * step) as usize];
    if second {
        deriv2_1d(get, ok, grid.h)
    } else {
        deriv_1d(get, ok, grid.h)
    }
}

/// Discrete gradient; defined on all domain nodes, zero elsewhere.
pub fn gradient(v: &ScalarField) -> Result<VectorField> {
    let grid = &v.grid;
    if grid.n_cells < 4 {
        return Err(CdiError::DegenerateGrid(grid.n_cells));
    }
    let mut out = VectorField::zeros(grid.clone());
    for idx in 0..grid.node_count() {
        if grid.in_domain(idx) {
            out.vx[idx] = axis_derivative(grid, &v.values, idx, 0, false);
            out.vy[idx] = axis_derivative(grid, &v.values, idx, 1, false);
        }
    }
    Ok(out)
}

/// Discrete divergence, symmetric in construction to [`gradient`].
pub fn divergence(w: &VectorField) -> Result<ScalarField> {
    let grid = &w.grid;
    if grid.n_cells < 4 {
        return Err(CdiError::DegenerateGrid(grid.n_cells));
    }
    let mut out = ScalarField::zeros(grid.clone());
    for idx in 0..grid.node_count() {
        if grid.in_domain(idx) {
            out.values[idx] = axis_derivative(grid, &w.vx, idx, 0, false)
                + axis_derivative(grid, &w.vy, idx, 1, false);
        }
    }
    Ok(out)
}

/// Five-point Laplacian (one-sided second derivatives at the mask edge).
pub fn laplacian(v: &ScalarField) -> Result<ScalarField> {
    let grid = &v.grid;
    if grid.n_cells < 4 {
        return Err(CdiError::DegenerateGrid(grid.n_cells));
    }
    let mut out = ScalarField::zeros(grid.clone());
    for idx in 0..grid.node_count() {
        if grid.in_domain(idx) {
            out.values[idx] = axis_derivative(grid, &v.values, idx, 0, true)
                + axis_derivative(grid, &v.values, idx, 1, true);
        }
    }
    Ok(out)
}

fn cell_of(grid: &DomainGrid, p: [f64; 2]) -> Result<(usize, usize, f64, f64)> {
    let n = grid.n_cells;
    let tx = (p[0] - grid.origin[0]) / grid.h;
    let ty = (p[1] - grid.origin[1]) / grid.h;
    if !(-1e-12..=n as f64 + 1e-12).contains(&tx) || !(-1e-12..=n as f64 + 1e-12).contains(&ty) {
        return Err(CdiError::PointOutsideBoundingBox(p[0], p[1]));
    }
    let ci = (tx.floor() as usize).min(n - 1);
    let cj = (ty.floor() as usize).min(n - 1);
    Ok((ci, cj, tx - ci as f64, ty - cj as f64))
}

fn interp_corners(grid: &DomainGrid, p: [f64; 2], corner: impl Fn(usize) -> f64) -> Result<f64> {
    let (ci, cj, fx, fy) = cell_of(grid, p)?;
    let idxs = [
        grid.idx(ci, cj),
        grid.idx(ci + 1, cj),
        grid.idx(ci, cj + 1),
        grid.idx(ci + 1, cj + 1),
    ];
    let avail = [
        grid.in_domain(idxs[0]),
        grid.in_domain(idxs[1]),
        grid.in_domain(idxs[2]),
        grid.in_domain(idxs[3]),
    ];
    if avail.iter().all(|&a| a) {
        let v00 = corner(idxs[0]);
        let v10 = corner(idxs[1]);
        let v01 = corner(idxs[2]);
        let v11 = corner(idxs[3]);
        return Ok(v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy);
    }
    // Inverse-distance weighting over the available corners.
    let offsets = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..4 {
        if !avail[k] {
            continue;
        }
        let dx = fx - offsets[k].0;
        let dy = fy - offsets[k].1;
        let d = (dx * dx + dy * dy).sqrt();
        if d < 1e-12 {
            return Ok(corner(idxs[k]));
        }
        num += corner(idxs[k]) / d;
        den += 1.0 / d;
    }
    if den == 0.0 {
        return Err(CdiError::PointOutsideDomain(p[0], p[1]));
    }
    Ok(num / den)
}

/// Bilinear interpolation of a scalar field at a point inside the bounding
/// box; cells with masked-out corners fall back to inverse-distance
/// weighting over the available corners.
pub fn interpolate_scalar(field: &ScalarField, p: [f64; 2]) -> Result<f64> {
    interp_corners(&field.grid, p, |idx| field.values[idx])
}

/// Vector analogue of [`interpolate_scalar`].
pub fn interpolate_vector(field: &VectorField, p: [f64; 2]) -> Result<[f64; 2]> {
    let x = interp_corners(&field.grid, p, |idx| field.vx[idx])?;
    let y = interp_corners(&field.grid, p, |idx| field.vy[idx])?;
    Ok([x, y])
}

/// sqrt( sum_{mask} v^2 h^2 ).
pub fn l2_norm(v: &ScalarField, mask: &RegionMask) -> f64 {
    let h2 = v.grid.h * v.grid.h;
    let mut acc = 0.0;
    for idx in 0..v.grid.node_count() {
        if mask.contains(idx) {
            acc += v.values[idx] * v.values[idx] * h2;
        }
    }
    acc.sqrt()
}

/// sqrt( ||v||^2 + |||grad v|||^2 ) over the mask.
pub fn h1_norm(v: &ScalarField, mask: &RegionMask) -> Result<f64> {
    let g = gradient(v)?;
    let l2 = l2_norm(v, mask);
    let g2 = l2_norm(&g.magnitude(), mask);
    Ok((l2 * l2 + g2 * g2).sqrt())
}

/// L2 inner product over the mask (used by duality tests).
pub fn inner_product(a: &ScalarField, b: &ScalarField, mask: &RegionMask) -> f64 {
    let h2 = a.grid.h * a.grid.h;
    let mut acc = 0.0;
    for idx in 0..a.grid.node_count() {
        if mask.contains(idx) {
            acc += a.values[idx] * b.values[idx] * h2;
        }
    }
    acc
}

/// Fill nodes outside `valid` with the value of the nearest valid node
/// (breadth-first by layers, deterministic in node-index order). Used to
/// extend derivative fields from an eroded mask over its collar before
/// interpolation.
pub fn extend_nearest(field: &ScalarField, valid: &[bool]) -> ScalarField {
    let grid = &field.grid;
    let nx = grid.nx;
    let mut values = field.values.clone();
    let mut filled = valid.to_vec();
    let mut frontier: Vec<usize> = (0..grid.node_count()).filter(|&i| valid[i]).collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &idx in &frontier {
            let (i, j) = grid.ij(idx);
            let mut visit = |n: usize| {
                if !filled[n] {
                    filled[n] = true;
                    values[n] = values[idx];
                    next.push(n);
                }
            };
            if i > 0 {
                visit(idx - 1);
            }
            if i + 1 < nx {
                visit(idx + 1);
            }
            if j > 0 {
                visit(idx - nx);
            }
            if j + 1 < nx {
                visit(idx + nx);
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
    ScalarField {
        grid: grid.clone(),
        values,
    }
}
