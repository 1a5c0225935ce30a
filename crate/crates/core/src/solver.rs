//! Forward solver for the conductivity equation with Dirichlet data.
//!
//! Conservative five-point discretization with harmonic-mean face
//! conductivities, solved by Jacobi-preconditioned conjugate gradient.

use crate::calculus::gradient;
use crate::error::{CdiError, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::DomainGrid;
use crate::mask::RegionMask;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Default gradient-magnitude floor for the nonsingularity guard.
pub const G_MIN_DEFAULT: f64 = 1e-3;

/// A Dirichlet problem for `div(sigma grad u) = 0`.
#[derive(Debug, Clone)]
pub struct DirichletProblem {
    pub sigma: ScalarField,
    /// One trace value per boundary-ring node, in ring order.
    pub f: Vec<f64>,
    pub grid: Arc<DomainGrid>,
}

impl DirichletProblem {
    pub fn new(sigma: ScalarField, f: Vec<f64>) -> Result<Self> {
        let grid = sigma.grid.clone();
        if f.len() != grid.boundary_nodes().len() {
            return Err(CdiError::ShapeMismatch);
        }
        let min_sigma = (0..grid.node_count())
            .filter(|&i| grid.in_domain(i))
            .map(|i| sigma.values[i])
            .fold(f64::INFINITY, f64::min);
        if !(min_sigma > 0.0) {
            return Err(CdiError::NonPositiveConductivity(min_sigma));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(CdiError::Parse("non-finite boundary trace".into()));
        }
        Ok(DirichletProblem { sigma, f, grid })
    }

    /// Convenience constructor evaluating the trace from the boundary
    /// parametrization.
    pub fn from_trace_fn(sigma: ScalarField, f: impl Fn(f64, f64, f64) -> f64) -> Result<Self> {
        let grid = sigma.grid.clone();
        let trace = grid
            .boundary_nodes()
            .iter()
            .map(|b| {
                let [x, y] = grid.xy(b.node);
                f(x, y, b.s)
            })
            .collect();
        Self::new(sigma, trace)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub unknowns: usize,
}

/// Sparse symmetric system in CSR form over the interior unknowns.
struct System {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
    diag: Vec<f64>,
    /// node index of each unknown
    nodes: Vec<usize>,
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn assemble(p: &DirichletProblem) -> System {
    let grid = &p.grid;
    let nx = grid.nx;
    let inv_h2 = 1.0 / (grid.h * grid.h);

    let nodes: Vec<usize> = (0..grid.node_count())
        .filter(|&i| grid.is_interior(i))
        .collect();
    let mut unknown_of = vec![usize::MAX; grid.node_count()];
    for (k, &n) in nodes.iter().enumerate() {
        unknown_of[n] = k;
    }
    let mut trace = vec![0.0; grid.node_count()];
    for (k, b) in grid.boundary_nodes().iter().enumerate() {
        trace[b.node] = p.f[k];
    }

    let mut row_ptr = Vec::with_capacity(nodes.len() + 1);
    let mut col_idx = Vec::new();
    let mut vals = Vec::new();
    let mut rhs = vec![0.0; nodes.len()];
    let mut diag = vec![0.0; nodes.len()];
    row_ptr.push(0);
    for (row, &idx) in nodes.iter().enumerate() {
        let neighbors = [idx - 1, idx + 1, idx - nx, idx + nx];
        let mut d = 0.0;
        for &nb in &neighbors {
            let face = harmonic_mean(p.sigma.values[idx], p.sigma.values[nb]) * inv_h2;
            d += face;
            if unknown_of[nb] != usize::MAX {
                col_idx.push(unknown_of[nb]);
                vals.push(-face);
            } else {
                // Dirichlet neighbor: contribution moves to the RHS.
                rhs[row] += face * trace[nb];
            }
        }
        col_idx.push(row);
        vals.push(d);
        diag[row] = d;
        row_ptr.push(col_idx.len());
    }
    System {
        row_ptr,
        col_idx,
        vals,
        rhs,
        diag,
        nodes,
    }
}

fn matvec(sys: &System, x: &[f64], out: &mut Vec<f64>) {
    // Row-parallel product; per-row sums are sequential, so the result is
    // bitwise independent of the thread count.
    *out = (0..sys.nodes.len())
        .into_par_iter()
        .map(|row| {
            let mut acc = 0.0;
            for k in sys.row_ptr[row]..sys.row_ptr[row + 1] {
                acc += sys.vals[k] * x[sys.col_idx[k]];
            }
            acc
        })
        .collect();
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the Dirichlet problem. Returns the potential (trace on boundary
/// nodes, CG solution at interior nodes) and a solver report.
pub fn solve_dirichlet(p: &DirichletProblem) -> Result<(ScalarField, SolverReport)> {
    let grid = &p.grid;
    let sys = assemble(p);
    let n = sys.nodes.len();
    let tol = 1e-10;
    let cap = 50 * grid.n_cells * grid.n_cells;

    let b_norm = dot(&sys.rhs, &sys.rhs).sqrt();
    let mut x = vec![0.0; n];
    let mut r = sys.rhs.clone();
    let mut iterations = 0;
    let mut residual = b_norm;
    if b_norm > 0.0 {
        let inv_diag: Vec<f64> = sys.diag.iter().map(|d| 1.0 / d).collect();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
        let mut pvec = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = Vec::new();
        loop {
            matvec(&sys, &pvec, &mut ap);
            let alpha = rz / dot(&pvec, &ap);
            for i in 0..n {
                x[i] += alpha * pvec[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            residual = dot(&r, &r).sqrt();
            if residual <= tol * b_norm {
                break;
            }
            if iterations >= cap {
                return Err(CdiError::CgNonConvergence {
                    iterations,
                    residual: residual / b_norm,
                    tolerance: tol,
                });
            }
            z = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                pvec[i] = z[i] + beta * pvec[i];
            }
        }
        residual /= b_norm;
    }

    let mut u = ScalarField::zeros(grid.clone());
    for (k, &idx) in sys.nodes.iter().enumerate() {
        u.values[idx] = x[k];
    }
    for (k, b) in grid.boundary_nodes().iter().enumerate() {
        u.values[b.node] = p.f[k];
    }
    Ok((
        u,
        SolverReport {
            iterations,
            residual,
            tolerance: tol,
            unknowns: n,
        },
    ))
}

/// J = -sigma grad(u).
pub fn current_density(sigma: &ScalarField, u: &ScalarField) -> Result<VectorField> {
    if sigma.grid.nx != u.grid.nx || sigma.grid.shape != u.grid.shape {
        return Err(CdiError::ShapeMismatch);
    }
    let g = gradient(u)?;
    Ok(g.scale_by(sigma).scale(-1.0))
}

/// Nodes of the mask where the gradient magnitude of `v` falls below
/// `g_min`. An empty result certifies the nonsingularity hypothesis.
pub fn min_gradient_check(v: &ScalarField, mask: &RegionMask, g_min: f64) -> Result<Vec<usize>> {
    let g = gradient(v)?;
    Ok((0..v.grid.node_count())
        .filter(|&idx| {
            mask.contains(idx) && (g.vx[idx] * g.vx[idx] + g.vy[idx] * g.vy[idx]).sqrt() < g_min
        })
        .collect())
}

/// Max-norm residual of the assembled operator applied to a potential,
/// relative to the RHS scale. Used as the discrete harmonicity check.
pub fn conservation_residual(p: &DirichletProblem, u: &ScalarField) -> f64 {
    let sys = assemble(p);
    let x: Vec<f64> = sys.nodes.iter().map(|&idx| u.values[idx]).collect();
    let mut ax = Vec::new();
    matvec(&sys, &x, &mut ax);
    let num: f64 = ax
        .iter()
        .zip(&sys.rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den = dot(&sys.rhs, &sys.rhs).sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}
