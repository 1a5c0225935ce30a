//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CdiError {
    #[error("degenerate grid: n_cells = {0} (need at least 4)")]
    DegenerateGrid(usize),

    #[error("conductivity must be positive on the domain mask (min = {0})")]
    NonPositiveConductivity(f64),

    #[error("field/grid shape mismatch")]
    ShapeMismatch,

    #[error("point ({0}, {1}) outside the grid bounding box")]
    PointOutsideBoundingBox(f64, f64),

    #[error("point ({0}, {1}) outside the domain (no valid interpolation corner)")]
    PointOutsideDomain(f64, f64),

    #[error("CG did not converge: {iterations} iterations, residual {residual:e} > tol {tolerance:e}")]
    CgNonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("streamline seed ({0}, {1}) outside the domain")]
    SeedOutsideDomain(f64, f64),

    #[error("streamline exceeded the step cap ({0} steps); pathological field")]
    PathologicalField(usize),

    #[error("level {level} is within tolerance of a critical value {critical} of the field")]
    NearCriticalLevel { level: f64, critical: f64 },

    #[error("level curve is closed: no boundary trace available for the BVP")]
    ClosedCurve,

    #[error("coefficient a(s) dropped below a_min: {0}")]
    CoefficientTooSmall(f64),

    #[error("gradient magnitude below g_min = {g_min} at {count} nodes")]
    GminViolation { g_min: f64, count: usize },

    #[error("field is not numerically sigma-harmonic (residual quotient {0:.3e})")]
    NotHarmonic(f64),

    #[error("boundary traces differ on Gamma: max |sigma - sigma_tilde| = {0:e}")]
    BoundaryTraceMismatch(f64),

    #[error("perturbation destroys positivity: min sigma_tilde = {0}")]
    PositivityViolated(f64),

    #[error("level curve endpoint at s = {0} falls outside Gamma': geometry inconsistency")]
    GeometryInconsistency(f64),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CdiError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),
}

impl CdiError {
    /// Wrap an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        CdiError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CdiError>;
