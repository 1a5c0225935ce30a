//! Plain-text run configuration: `key = value` lines with `#` comments,
//! arithmetic expressions for the coefficient and boundary-data fields.

use crate::error::{CdiError, Result};
use crate::expr::{Env, Expr};
use crate::grid::{BoundaryArcSet, DomainGrid, Shape};
use crate::harness::PerturbationSpec;
use std::fmt::Write as _;

/// An expression together with the text it was parsed from, so config
/// echoes stay verbatim.
#[derive(Debug, Clone)]
pub struct ExprSpec {
    pub src: String,
    pub expr: Expr,
}

impl ExprSpec {
    pub fn parse(src: &str) -> Result<ExprSpec> {
        Ok(ExprSpec {
            src: src.trim().to_string(),
            expr: Expr::parse(src)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Regions,
    Decompose,
    Reconstruct,
    Sweep,
    Ampere,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Regions => "regions",
            Command::Decompose => "decompose",
            Command::Reconstruct => "reconstruct",
            Command::Sweep => "sweep",
            Command::Ampere => "ampere",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "forward" => Command::Forward,
            "regions" => Command::Regions,
            "decompose" => Command::Decompose,
            "reconstruct" => Command::Reconstruct,
            "sweep" => Command::Sweep,
            "ampere" => Command::Ampere,
            other => {
                return Err(CdiError::Config(format!("unknown command '{other}'")));
            }
        })
    }
}

/// Everything a run needs, parsed but not yet evaluated on a grid.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub shape: Shape,
    pub resolution: usize,
    pub sigma: ExprSpec,
    /// Explicit second conductivity; exclusive with the perturbation spec.
    pub sigma_tilde: Option<ExprSpec>,
    pub f: ExprSpec,
    pub gamma: BoundaryArcSet,
    pub gamma_prime: BoundaryArcSet,
    pub perturbation: PerturbationSpec,
    pub epsilon: f64,
    pub epsilons: Vec<f64>,
    pub alpha: f64,
    pub seed: u64,
    pub output: String,
}

fn parse_intervals(text: &str, perimeter: f64) -> Result<BoundaryArcSet> {
    let t = text.trim();
    if t.is_empty() || t == "full" {
        return Ok(BoundaryArcSet::full(perimeter));
    }
    let mut iv = Vec::new();
    for part in t.split(',') {
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| CdiError::Config(format!("bad arc interval '{part}' (want a:b)")))?;
        let a: f64 = a
            .trim()
            .parse()
            .map_err(|_| CdiError::Config(format!("bad arc endpoint '{a}'")))?;
        let b: f64 = b
            .trim()
            .parse()
            .map_err(|_| CdiError::Config(format!("bad arc endpoint '{b}'")))?;
        iv.push((a, b));
    }
    BoundaryArcSet::new(iv, perimeter)
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CdiError::Config(format!("bad number '{p}'")))
        })
        .collect()
}

impl RunConfig {
    /// Parse the `key = value` text. Unknown keys are errors: configs are
    /// fixtures and silence hides typos.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut command = None;
        let mut shape = Shape::Square;
        let mut resolution = 64usize;
        let mut sigma = ExprSpec::parse("1")?;
        let mut sigma_tilde = None;
        let mut f = ExprSpec::parse("x")?;
        let mut gamma_text = String::from("full");
        let mut gamma_prime_text = String::from("full");
        let mut perturbation = PerturbationSpec::default();
        let mut epsilon = 0.1;
        let mut epsilons = Vec::new();
        let mut alpha = 0.5;
        let mut seed = 0u64;
        let mut output = String::from("out");

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CdiError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| CdiError::Config(format!("line {}: {what}", lineno + 1));
            match key {
                "command" => command = Some(Command::parse(value)?),
                "shape" => {
                    shape = match value {
                        "square" => Shape::Square,
                        "disk" => Shape::Disk,
                        _ => return Err(bad(&format!("unknown shape '{value}'"))),
                    }
                }
                "resolution" => {
                    resolution = value.parse().map_err(|_| bad("bad resolution"))?;
                }
                "sigma" => sigma = ExprSpec::parse(value)?,
                "sigma_tilde" => sigma_tilde = Some(ExprSpec::parse(value)?),
                "f" => f = ExprSpec::parse(value)?,
                "gamma" => gamma_text = value.to_string(),
                "gamma_prime" => gamma_prime_text = value.to_string(),
                "bump_center" => {
                    let c = parse_f64_list(value)?;
                    if c.len() != 2 {
                        return Err(bad("bump_center wants two numbers"));
                    }
                    perturbation.center = [c[0], c[1]];
                }
                "bump_radius" => {
                    perturbation.radius = value.parse().map_err(|_| bad("bad bump_radius"))?;
                }
                "bump_margin" => {
                    perturbation.margin = value.parse().map_err(|_| bad("bad bump_margin"))?;
                }
                "epsilon" => epsilon = value.parse().map_err(|_| bad("bad epsilon"))?,
                "epsilons" => epsilons = parse_f64_list(value)?,
                "alpha" => alpha = value.parse().map_err(|_| bad("bad alpha"))?,
                "seed" => seed = value.parse().map_err(|_| bad("bad seed"))?,
                "output" => output = value.to_string(),
                other => return Err(bad(&format!("unknown key '{other}'"))),
            }
        }

        let command =
            command.ok_or_else(|| CdiError::Config("missing required key 'command'".into()))?;
        let perimeter = match shape {
            Shape::Square => 4.0,
            Shape::Disk => 2.0 * std::f64::consts::PI,
        };
        let gamma = parse_intervals(&gamma_text, perimeter)?;
        let gamma_prime = if gamma_prime_text == "full" && !gamma.is_full() {
            // Unset gamma_prime with a partial gamma: default to gamma
            // pulled in by three cell widths so the containment margin
            // holds at the configured resolution.
            let h = match shape {
                Shape::Square => 1.0 / resolution as f64,
                Shape::Disk => 2.0 / resolution as f64,
            };
            gamma.shrink(3.0 * h)
        } else {
            parse_intervals(&gamma_prime_text, perimeter)?
        };
        Ok(RunConfig {
            command,
            shape,
            resolution,
            sigma,
            sigma_tilde,
            f,
            gamma,
            gamma_prime,
            perturbation,
            epsilon,
            epsilons,
            alpha,
            seed,
            output,
        })
    }

    /// Collect every validation failure rather than stopping at the first;
    /// callers report the whole list.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let n = self.resolution;
        if !(32..=512).contains(&n) || !n.is_power_of_two() {
            errs.push(format!(
                "resolution must be a power of two in [32, 512], got {n}"
            ));
        } else {
            let h = match self.shape {
                Shape::Square => 1.0 / n as f64,
                Shape::Disk => 2.0 / n as f64,
            };
            if !self.gamma_prime.compactly_contained_in(&self.gamma, 2.0 * h) {
                errs.push(
                    "gamma_prime must sit strictly inside gamma with margin >= 2h".to_string(),
                );
            }
        }
        if self.alpha <= 0.0 {
            errs.push(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.epsilon <= 0.0 && self.sigma_tilde.is_none() {
            errs.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.command == Command::Sweep && self.epsilons.len() < 4 {
            errs.push(format!(
                "sweep needs at least 4 epsilons, got {}",
                self.epsilons.len()
            ));
        }
        errs
    }

    pub fn grid(&self) -> Result<std::sync::Arc<DomainGrid>> {
        DomainGrid::new(self.shape, self.resolution)
    }

    /// Normalized echo of the effective configuration; parsing it again
    /// yields the same config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command.as_str());
        let _ = writeln!(
            s,
            "shape = {}",
            match self.shape {
                Shape::Square => "square",
                Shape::Disk => "disk",
            }
        );
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "sigma = {}", self.sigma.src);
        if let Some(st) = &self.sigma_tilde {
            let _ = writeln!(s, "sigma_tilde = {}", st.src);
        }
        let _ = writeln!(s, "f = {}", self.f.src);
        let _ = writeln!(s, "gamma = {}", arcs_text(&self.gamma));
        let _ = writeln!(s, "gamma_prime = {}", arcs_text(&self.gamma_prime));
        let _ = writeln!(
            s,
            "bump_center = {}, {}",
            self.perturbation.center[0], self.perturbation.center[1]
        );
        let _ = writeln!(s, "bump_radius = {}", self.perturbation.radius);
        let _ = writeln!(s, "bump_margin = {}", self.perturbation.margin);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        if !self.epsilons.is_empty() {
            let list: Vec<String> = self.epsilons.iter().map(|e| e.to_string()).collect();
            let _ = writeln!(s, "epsilons = {}", list.join(", "));
        }
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", self.output);
        s
    }

    /// Evaluate the boundary-data expression as a trace function.
    pub fn trace_fn(&self, perimeter: f64) -> impl Fn(f64, f64, f64) -> f64 + Sync + '_ {
        let f = self.f.expr.clone();
        move |x, y, s| {
            f.eval(&Env {
                x,
                y,
                s,
                theta: s * 2.0 * std::f64::consts::PI / perimeter,
            })
        }
    }
}

fn arcs_text(a: &BoundaryArcSet) -> String {
    if a.is_full() {
        return "full".into();
    }
    let parts: Vec<String> = a
        .intervals
        .iter()
        .map(|(lo, hi)| format!("{lo}:{hi}"))
        .collect();
    parts.join(", ")
}
