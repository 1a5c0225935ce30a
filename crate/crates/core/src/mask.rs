//! Node sets with discrete measure, used for the injectivity and stability
//! regions and for restricting norms.

use crate::grid::DomainGrid;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Injectivity,
    Stability,
    Custom,
}

/// Which streamline side(s) reach the boundary inside the injectivity
/// region, recorded per stability-region node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
    Both,
    None,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Plus => "+",
            Side::Minus => "-",
            Side::Both => "both",
            Side::None => "none",
        }
    }
}

/// A boolean mask over grid nodes, restricted to the interior.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub grid: Arc<DomainGrid>,
    pub mask: Vec<bool>,
    pub provenance: Provenance,
}

impl RegionMask {
    pub fn new(grid: Arc<DomainGrid>, mask: Vec<bool>, provenance: Provenance) -> Self {
        assert_eq!(mask.len(), grid.node_count());
        let mut mask = mask;
        for (idx, m) in mask.iter_mut().enumerate() {
            if !grid.is_interior(idx) {
                *m = false;
            }
        }
        RegionMask {
            grid,
            mask,
            provenance,
        }
    }

    /// Every interior node.
    pub fn full_interior(grid: Arc<DomainGrid>) -> Self {
        let mask = grid.interior_mask().to_vec();
        RegionMask {
            grid,
            mask,
            provenance: Provenance::Custom,
        }
    }

    pub fn empty(grid: Arc<DomainGrid>) -> Self {
        let mask = vec![false; grid.node_count()];
        RegionMask {
            grid,
            mask,
            provenance: Provenance::Custom,
        }
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Discrete measure: node count times cell area.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.grid.h * self.grid.h
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.mask
            .iter()
            .zip(&other.mask)
            .all(|(&a, &b)| !a || b)
    }

    pub fn intersect(&self, other: &RegionMask) -> RegionMask {
        RegionMask {
            grid: self.grid.clone(),
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| a && b)
                .collect(),
            provenance: Provenance::Custom,
        }
    }

    /// Remove `k` layers of nodes from the mask edge (4-neighborhood).
    pub fn erode(&self, k: usize) -> RegionMask {
        let nx = self.grid.nx;
        let mut cur = self.mask.clone();
        for _ in 0..k {
            let mut next = cur.clone();
            for j in 0..nx {
                for i in 0..nx {
                    let idx = j * nx + i;
                    if !cur[idx] {
                        continue;
                    }
                    let keep = i > 0
                        && i + 1 < nx
                        && j > 0
                        && j + 1 < nx
                        && cur[idx - 1]
                        && cur[idx + 1]
                        && cur[idx - nx]
                        && cur[idx + nx];
                    if !keep {
                        next[idx] = false;
                    }
                }
            }
            cur = next;
        }
        RegionMask {
            grid: self.grid.clone(),
            mask: cur,
            provenance: self.provenance,
        }
    }

    /// Export as CSV rows `i,j,in_region,side`.
    pub fn write_csv(&self, sides: Option<&[Side]>, path: &std::path::Path) -> crate::Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "i,j,in_region,side")?;
        for idx in 0..self.grid.node_count() {
            let (i, j) = self.grid.ij(idx);
            let side = match sides {
                Some(s) if self.mask[idx] => s[idx].as_str(),
                _ => "none",
            };
            writeln!(w, "{i},{j},{},{side}", if self.mask[idx] { 1 } else { 0 })?;
        }
        Ok(())
    }

    /// Export as an ASCII portable graymap for visual inspection.
    pub fn write_pgm(&self, path: &std::path::Path) -> crate::Result<()> {
        use std::io::Write;
        let nx = self.grid.nx;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "P2")?;
        writeln!(w, "{nx} {nx}")?;
        writeln!(w, "255")?;
        // Row 0 at the top of the image corresponds to j = nx-1.
        for j in (0..nx).rev() {
            let row: Vec<String> = (0..nx)
                .map(|i| {
                    let idx = j * nx + i;
                    if self.mask[idx] {
                        "255".to_string()
                    } else if self.grid.in_domain(idx) {
                        "96".to_string()
                    } else {
                        "0".to_string()
                    }
                })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}
