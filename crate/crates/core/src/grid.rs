//! Domain geometry: masked rectangular grids over the unit square or the
//! unit disk, with an ordered, arc-length parametrized boundary node ring.

use crate::error::{CdiError, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Concrete realizations of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// The unit square [0,1] x [0,1].
    Square,
    /// The unit disk centered at the origin.
    Disk,
}

/// One node of the ordered boundary ring.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryNode {
    /// Flat node index (j * nx + i).
    pub node: usize,
    /// Arc-length parameter in [0, perimeter).
    pub s: f64,
    /// Outward unit normal.
    pub normal: [f64; 2],
}

/// Node-centered grid over the bounding box of the domain.
///
/// Nodes live at `origin + (i, j) * h` for `0 <= i, j < nx`. Interior nodes
/// carry unknowns; boundary nodes carry Dirichlet traces; the remaining
/// nodes (outside a disk mask) are inert.
#[derive(Debug)]
pub struct DomainGrid {
    pub shape: Shape,
    pub n_cells: usize,
    pub h: f64,
    /// Nodes per axis (n_cells + 1).
    pub nx: usize,
    pub origin: [f64; 2],
    pub perimeter: f64,
    interior: Vec<bool>,
    domain: Vec<bool>,
    boundary: Vec<BoundaryNode>,
    boundary_of: Vec<Option<u32>>,
}

impl DomainGrid {
    pub fn new(shape: Shape, n_cells: usize) -> Result<Arc<Self>> {
        if n_cells < 4 {
            return Err(CdiError::DegenerateGrid(n_cells));
        }
        match shape {
            Shape::Square => Ok(Arc::new(Self::square(n_cells))),
            Shape::Disk => Ok(Arc::new(Self::disk(n_cells))),
        }
    }

    fn square(n: usize) -> Self {
        let nx = n + 1;
        let h = 1.0 / n as f64;
        let mut interior = vec![false; nx * nx];
        let mut domain = vec![false; nx * nx];
        for j in 0..nx {
            for i in 0..nx {
                domain[j * nx + i] = true;
                if i > 0 && i < n && j > 0 && j < n {
                    interior[j * nx + i] = true;
                }
            }
        }
        // Boundary ring, counterclockwise from (0,0); s in [0,4).
        let mut boundary = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary.push((i, 0, i as f64 * h, [0.0, -1.0]));
        }
        for j in 0..n {
            boundary.push((n, j, 1.0 + j as f64 * h, [1.0, 0.0]));
        }
        for i in 0..n {
            boundary.push((n - i, n, 2.0 + i as f64 * h, [0.0, 1.0]));
        }
        for j in 0..n {
            boundary.push((0, n - j, 3.0 + j as f64 * h, [-1.0, 0.0]));
        }
        let boundary: Vec<BoundaryNode> = boundary
            .into_iter()
            .map(|(i, j, s, normal)| BoundaryNode {
                node: j * nx + i,
                s,
                normal,
            })
            .collect();
        let mut boundary_of = vec![None; nx * nx];
        for (k, b) in boundary.iter().enumerate() {
            boundary_of[b.node] = Some(k as u32);
        }
        DomainGrid {
            shape: Shape::Square,
            n_cells: n,
            h,
            nx,
            origin: [0.0, 0.0],
            perimeter: 4.0,
            interior,
            domain,
            boundary,
            boundary_of,
        }
    }

    fn disk(n: usize) -> Self {
        let nx = n + 1;
        let h = 2.0 / n as f64;
        let origin = [-1.0, -1.0];
        let r_in = 1.0 - h / 2.0;
        let mut interior = vec![false; nx * nx];
        for j in 0..nx {
            for i in 0..nx {
                let x = origin[0] + i as f64 * h;
                let y = origin[1] + j as f64 * h;
                if x * x + y * y < r_in * r_in {
                    interior[j * nx + i] = true;
                }
            }
        }
        // Boundary ring: non-interior nodes 4-adjacent to an interior node,
        // parametrized by angle on the unit circle.
        let mut ring: Vec<(usize, f64, [f64; 2])> = Vec::new();
        for j in 0..nx {
            for i in 0..nx {
                let idx = j * nx + i;
                if interior[idx] {
                    continue;
                }
                let mut adj = false;
                if i > 0 && interior[idx - 1] {
                    adj = true;
                }
                if i + 1 < nx && interior[idx + 1] {
                    adj = true;
                }
                if j > 0 && interior[idx - nx] {
                    adj = true;
                }
                if j + 1 < nx && interior[idx + nx] {
                    adj = true;
                }
                if adj {
                    let x = origin[0] + i as f64 * h;
                    let y = origin[1] + j as f64 * h;
                    let r = (x * x + y * y).sqrt().max(1e-15);
                    let mut theta = y.atan2(x);
                    if theta < 0.0 {
                        theta += 2.0 * std::f64::consts::PI;
                    }
                    ring.push((idx, theta, [x / r, y / r]));
                }
            }
        }
        ring.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        // Enforce strictly increasing arc-length parameters.
        for k in 1..ring.len() {
            if ring[k].1 <= ring[k - 1].1 {
                ring[k].1 = ring[k - 1].1 + 1e-9;
            }
        }
        let mut domain = interior.clone();
        let boundary: Vec<BoundaryNode> = ring
            .into_iter()
            .map(|(node, s, normal)| BoundaryNode { node, s, normal })
            .collect();
        for b in &boundary {
            domain[b.node] = true;
        }
        let mut boundary_of = vec![None; nx * nx];
        for (k, b) in boundary.iter().enumerate() {
            boundary_of[b.node] = Some(k as u32);
        }
        DomainGrid {
            shape: Shape::Disk,
            n_cells: n,
            h,
            nx,
            origin,
            perimeter: 2.0 * std::f64::consts::PI,
            interior,
            domain,
            boundary,
            boundary_of,
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn xy(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
        ]
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.nx
    }

    #[inline]
    pub fn is_interior(&self, idx: usize) -> bool {
        self.interior[idx]
    }

    #[inline]
    pub fn in_domain(&self, idx: usize) -> bool {
        self.domain[idx]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn domain_mask(&self) -> &[bool] {
        &self.domain
    }

    pub fn boundary_nodes(&self) -> &[BoundaryNode] {
        &self.boundary
    }

    /// Boundary-ring index of a node, if the node is on the boundary.
    pub fn boundary_index_of(&self, idx: usize) -> Option<usize> {
        self.boundary_of[idx].map(|k| k as usize)
    }

    /// True if the point is inside the (continuous) domain shape.
    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        match self.shape {
            Shape::Square => p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0,
            Shape::Disk => p[0] * p[0] + p[1] * p[1] <= 1.0,
        }
    }

    /// Signed distance to the domain boundary (negative inside).
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        match self.shape {
            Shape::Square => {
                let dx = (-p[0]).max(p[0] - 1.0);
                let dy = (-p[1]).max(p[1] - 1.0);
                dx.max(dy)
            }
            Shape::Disk => (p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0,
        }
    }

    /// Arc-length parameter of a point at (or near) the boundary.
    pub fn boundary_param(&self, p: [f64; 2]) -> f64 {
        match self.shape {
            Shape::Square => {
                let x = p[0].clamp(0.0, 1.0);
                let y = p[1].clamp(0.0, 1.0);
                // Distance to each edge decides which one the point sits on.
                let d_bottom = y;
                let d_right = 1.0 - x;
                let d_top = 1.0 - y;
                let d_left = x;
                let m = d_bottom.min(d_right).min(d_top).min(d_left);
                if m == d_bottom {
                    x
                } else if m == d_right {
                    1.0 + y
                } else if m == d_top {
                    2.0 + (1.0 - x)
                } else {
                    3.0 + (1.0 - y)
                }
            }
            Shape::Disk => {
                let mut t = p[1].atan2(p[0]);
                if t < 0.0 {
                    t += 2.0 * std::f64::consts::PI;
                }
                t
            }
        }
    }

    /// Outward unit normal of the continuous boundary nearest to a point.
    pub fn boundary_normal(&self, p: [f64; 2]) -> [f64; 2] {
        match self.shape {
            Shape::Square => {
                let d_bottom = p[1];
                let d_right = 1.0 - p[0];
                let d_top = 1.0 - p[1];
                let d_left = p[0];
                let m = d_bottom.min(d_right).min(d_top).min(d_left);
                if m == d_bottom {
                    [0.0, -1.0]
                } else if m == d_right {
                    [1.0, 0.0]
                } else if m == d_top {
                    [0.0, 1.0]
                } else {
                    [-1.0, 0.0]
                }
            }
            Shape::Disk => {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt().max(1e-15);
                [p[0] / r, p[1] / r]
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Square => std::f64::consts::SQRT_2,
            Shape::Disk => 2.0,
        }
    }
}

/// An accessible boundary set: a finite union of half-open arc-length
/// intervals `[a, b)` on the boundary ring, possibly wrapping past 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryArcSet {
    /// Intervals with 0 <= a < perimeter; b may exceed perimeter to wrap.
    pub intervals: Vec<(f64, f64)>,
    pub perimeter: f64,
}

impl BoundaryArcSet {
    pub fn new(intervals: Vec<(f64, f64)>, perimeter: f64) -> Result<Self> {
        let mut norm = Vec::with_capacity(intervals.len());
        for (a, b) in intervals {
            if !(b > a) {
                return Err(CdiError::Config(format!("empty boundary arc [{a}, {b})")));
            }
            if b - a >= perimeter {
                // Full boundary.
                return Ok(BoundaryArcSet {
                    intervals: vec![(0.0, perimeter)],
                    perimeter,
                });
            }
            let a0 = a.rem_euclid(perimeter);
            norm.push((a0, a0 + (b - a)));
        }
        norm.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        for w in norm.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(CdiError::Config(format!(
                    "boundary arcs overlap: [{}, {}) and [{}, {})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        if norm.len() >= 2 {
            let last = norm[norm.len() - 1];
            if last.1 > perimeter && last.1 - perimeter > norm[0].0 {
                return Err(CdiError::Config("wrapping boundary arc overlaps".into()));
            }
        }
        Ok(BoundaryArcSet {
            intervals: norm,
            perimeter,
        })
    }

    pub fn full(perimeter: f64) -> Self {
        BoundaryArcSet {
            intervals: vec![(0.0, perimeter)],
            perimeter,
        }
    }

    pub fn is_full(&self) -> bool {
        self.intervals.len() == 1
            && self.intervals[0].0 == 0.0
            && self.intervals[0].1 >= self.perimeter
    }

    pub fn contains(&self, s: f64) -> bool {
        let s = s.rem_euclid(self.perimeter);
        self.intervals
            .iter()
            .any(|&(a, b)| (s >= a && s < b) || (s + self.perimeter >= a && s + self.perimeter < b))
    }

    /// Shrink every interval by `eta` at both ends. A full-cycle set is left
    /// untouched (it has no endpoints). Intervals shorter than `2 eta`
    /// disappear.
    pub fn shrink(&self, eta: f64) -> Self {
        if self.is_full() {
            return self.clone();
        }
        let intervals = self
            .intervals
            .iter()
            .filter_map(|&(a, b)| {
                let (a2, b2) = (a + eta, b - eta);
                (b2 > a2).then_some((a2, b2))
            })
            .collect();
        BoundaryArcSet {
            intervals,
            perimeter: self.perimeter,
        }
    }

    /// True if every point of `self` lies in `other` with the given margin.
    pub fn compactly_contained_in(&self, other: &Self, margin: f64) -> bool {
        if other.is_full() {
            return true;
        }
        let grown = other.shrink(margin);
        self.intervals.iter().all(|&(a, b)| {
            grown.intervals.iter().any(|&(ga, gb)| {
                // Compare on the universal cover; account for wrapping.
                for shift in [-self.perimeter, 0.0, self.perimeter] {
                    if a + shift >= ga && b + shift <= gb {
                        return true;
                    }
                }
                false
            })
        })
    }
}
