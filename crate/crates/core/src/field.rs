//! Scalar and vector fields on a masked grid, with CSV round-trip I/O.
//!
//! Fields are immutable after construction in normal use; every operation
//! on them is a pure function, so they are safe to share across threads.

use crate::error::{CdiError, Result};
use crate::grid::{DomainGrid, Shape};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

/// One real value per grid node.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<DomainGrid>,
    pub values: Vec<f64>,
}

/// One real pair per grid node.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub grid: Arc<DomainGrid>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<DomainGrid>) -> Self {
        let n = grid.node_count();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<DomainGrid>, c: f64) -> Self {
        let n = grid.node_count();
        ScalarField {
            grid,
            values: vec![c; n],
        }
    }

    /// Evaluate `f(x, y)` at every domain node; zero elsewhere.
    pub fn from_fn(grid: Arc<DomainGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = vec![0.0; grid.node_count()];
        for idx in 0..grid.node_count() {
            if grid.in_domain(idx) {
                let [x, y] = grid.xy(idx);
                values[idx] = f(x, y);
            }
        }
        let out = ScalarField { grid, values };
        debug_assert!(out.is_finite());
        out
    }

    pub fn from_values(grid: Arc<DomainGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(CdiError::ShapeMismatch);
        }
        Ok(ScalarField { grid, values })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Nodewise combination of two congruent fields.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert!(Arc::ptr_eq(&self.grid, &other.grid) || self.grid.nx == other.grid.nx);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(&self.grid, &[("value", &self.values)], path)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (grid, mut cols) = read_csv(path, 1)?;
        Ok(ScalarField {
            grid,
            values: cols.pop().unwrap(),
        })
    }
}

impl VectorField {
    pub fn zeros(grid: Arc<DomainGrid>) -> Self {
        let n = grid.node_count();
        VectorField {
            grid,
            vx: vec![0.0; n],
            vy: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Arc<DomainGrid>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut vx = vec![0.0; grid.node_count()];
        let mut vy = vec![0.0; grid.node_count()];
        for idx in 0..grid.node_count() {
            if grid.in_domain(idx) {
                let [x, y] = grid.xy(idx);
                let v = f(x, y);
                vx[idx] = v[0];
                vy[idx] = v[1];
            }
        }
        VectorField { grid, vx, vy }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.iter().all(|v| v.is_finite()) && self.vy.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 2] {
        [self.vx[idx], self.vy[idx]]
    }

    pub fn magnitude(&self) -> ScalarField {
        let values = self
            .vx
            .iter()
            .zip(&self.vy)
            .map(|(&x, &y)| (x * x + y * y).sqrt())
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            vx: self.vx.iter().zip(&other.vx).map(|(a, b)| a - b).collect(),
            vy: self.vy.iter().zip(&other.vy).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            vx: self.vx.iter().map(|v| c * v).collect(),
            vy: self.vy.iter().map(|v| c * v).collect(),
        }
    }

    /// Nodewise scaling by a scalar field.
    pub fn scale_by(&self, s: &ScalarField) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            vx: self.vx.iter().zip(&s.values).map(|(v, c)| v * c).collect(),
            vy: self.vy.iter().zip(&s.values).map(|(v, c)| v * c).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            &self.grid,
            &[("value_x", &self.vx), ("value_y", &self.vy)],
            path,
        )
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (grid, mut cols) = read_csv(path, 2)?;
        let vy = cols.pop().unwrap();
        let vx = cols.pop().unwrap();
        Ok(VectorField { grid, vx, vy })
    }
}

fn shape_name(shape: Shape) -> &'static str {
    match shape {
        Shape::Square => "square",
        Shape::Disk => "disk",
    }
}

fn write_csv(grid: &Arc<DomainGrid>, columns: &[(&str, &Vec<f64>)], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "nx,ny,h,shape")?;
    writeln!(
        w,
        "{},{},{},{}",
        grid.nx,
        grid.nx,
        grid.h,
        shape_name(grid.shape)
    )?;
    write!(w, "i,j,x,y")?;
    for (name, _) in columns {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for idx in 0..grid.node_count() {
        let (i, j) = grid.ij(idx);
        let [x, y] = grid.xy(idx);
        write!(w, "{i},{j},{x},{y}")?;
        for (_, col) in columns {
            write!(w, ",{}", col[idx])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn read_csv(path: &Path, n_cols: usize) -> Result<(Arc<DomainGrid>, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let expect = |line: Option<std::io::Result<String>>| -> Result<String> {
        line.ok_or_else(|| CdiError::Parse("unexpected end of CSV".into()))?
            .map_err(CdiError::Io)
    };
    let header = expect(lines.next())?;
    if header.trim() != "nx,ny,h,shape" {
        return Err(CdiError::Parse(format!("bad CSV header: {header}")));
    }
    let meta = expect(lines.next())?;
    let parts: Vec<&str> = meta.trim().split(',').collect();
    if parts.len() != 4 {
        return Err(CdiError::Parse(format!("bad CSV metadata: {meta}")));
    }
    let nx: usize = parts[0]
        .parse()
        .map_err(|e| CdiError::Parse(format!("nx: {e}")))?;
    let shape = match parts[3] {
        "square" => Shape::Square,
        "disk" => Shape::Disk,
        other => return Err(CdiError::Parse(format!("unknown shape: {other}"))),
    };
    let grid = DomainGrid::new(shape, nx - 1)?;
    let _cols_header = expect(lines.next())?;
    let mut cols = vec![vec![0.0; grid.node_count()]; n_cols];
    for line in lines {
        let line = line.map_err(CdiError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != 4 + n_cols {
            return Err(CdiError::Parse(format!("bad CSV row: {line}")));
        }
        let i: usize = parts[0]
            .parse()
            .map_err(|e| CdiError::Parse(format!("i: {e}")))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|e| CdiError::Parse(format!("j: {e}")))?;
        for (k, col) in cols.iter_mut().enumerate() {
            col[grid.idx(i, j)] = parts[4 + k]
                .parse()
                .map_err(|e| CdiError::Parse(format!("value: {e}")))?;
        }
    }
    Ok((grid, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_csv_round_trip_is_bit_exact() {
        let grid = DomainGrid::new(Shape::Square, 8).unwrap();
        let f = ScalarField::from_fn(grid, |x, y| (x * 17.0 + y * 0.3).sin() / 3.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        f.write_csv(&path).unwrap();
        let g = ScalarField::read_csv(&path).unwrap();
        assert_eq!(f.values, g.values);
        assert_eq!(f.grid.h, g.grid.h);
    }

    #[test]
    fn vector_csv_round_trip_is_bit_exact() {
        let grid = DomainGrid::new(Shape::Disk, 12).unwrap();
        let f = VectorField::from_fn(grid, |x, y| [x * y, (x - y).exp()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        f.write_csv(&path).unwrap();
        let g = VectorField::read_csv(&path).unwrap();
        assert_eq!(f.vx, g.vx);
        assert_eq!(f.vy, g.vy);
    }
}
