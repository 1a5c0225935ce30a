//! Command execution: turn a validated [`RunConfig`](crate::config::RunConfig)
//! into artifact files in an output directory.

use crate::calculus::gradient;
use crate::config::{Command, RunConfig};
use crate::decomposition::{decomposition_residual, scalar_component, ProjectionMode};
use crate::error::{CdiError, Result};
use crate::expr::Env;
use crate::field::ScalarField;
use crate::grid::DomainGrid;
use crate::harness::{
    ampere_trial, fit_exponent, make_perturbation, stability_trial, sweep, ExperimentRecord,
};
use crate::reconstruction::full_pipeline;
use crate::solver::{
    current_density, solve_dirichlet, DirichletProblem, G_MIN_DEFAULT,
};
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;

fn eval_coefficient(cfg_expr: &crate::config::ExprSpec, grid: &Arc<DomainGrid>) -> ScalarField {
    ScalarField::from_fn(grid.clone(), |x, y| {
        cfg_expr.expr.eval(&Env {
            x,
            y,
            s: 0.0,
            theta: 0.0,
        })
    })
}

/// The `(sigma, sigma_tilde)` pair: explicit expression if configured,
/// otherwise the bump perturbation at the configured epsilon.
fn sigma_pair(cfg: &RunConfig, grid: &Arc<DomainGrid>) -> Result<(ScalarField, ScalarField)> {
    let sigma = eval_coefficient(&cfg.sigma, grid);
    let sigma_t = match &cfg.sigma_tilde {
        Some(st) => eval_coefficient(st, grid),
        None => make_perturbation(&sigma, &cfg.perturbation, cfg.epsilon)?,
    };
    Ok((sigma, sigma_t))
}

fn records_json(records: &[ExperimentRecord]) -> Value {
    Value::Array(
        records
            .iter()
            .map(|r| {
                json!({
                    "epsilon": r.epsilon,
                    "lhs": r.lhs,
                    "rhs_div": r.rhs_div,
                    "rhs_h1": r.rhs_h1,
                    "ratio": r.ratio(),
                    "mode": r.mode.to_string(),
                    "alpha": r.alpha,
                    "injectivity_measure": r.injectivity_measure,
                    "stability_measure": r.stability_measure,
                })
            })
            .collect(),
    )
}

/// Execute the configured command, writing every artifact under `out`.
/// Returns the summary document (also written to `summary.json`).
pub fn run(cfg: &RunConfig, out: &Path, verbose: bool) -> Result<Value> {
    std::fs::create_dir_all(out)?;
    // Echo the effective config; it must still parse and validate.
    let echo = cfg.echo();
    let reparsed = RunConfig::parse(&echo)?;
    let errs = reparsed.validate();
    if !errs.is_empty() {
        return Err(CdiError::Config(format!(
            "config echo failed revalidation: {}",
            errs.join("; ")
        )));
    }
    std::fs::write(out.join("config.echo"), &echo)?;

    let grid = cfg.grid()?;
    let f = cfg.trace_fn(grid.perimeter);
    if verbose {
        eprintln!(
            "{} on {}x{} grid -> {}",
            cfg.command.as_str(),
            grid.nx,
            grid.nx,
            out.display()
        );
    }

    let summary = match cfg.command {
        Command::Forward => {
            let sigma = eval_coefficient(&cfg.sigma, &grid);
            let prob = DirichletProblem::from_trace_fn(sigma.clone(), &f)?;
            let (u, report) = solve_dirichlet(&prob)?;
            u.write_csv(&out.join("u.csv"))?;
            current_density(&sigma, &u)?.write_csv(&out.join("current.csv"))?;
            // Discrete maximum principle: interior values stay inside the
            // trace range.
            let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for b in grid.boundary_nodes() {
                tmin = tmin.min(u.values[b.node]);
                tmax = tmax.max(u.values[b.node]);
            }
            let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
            for idx in 0..grid.node_count() {
                if grid.in_domain(idx) {
                    umin = umin.min(u.values[idx]);
                    umax = umax.max(u.values[idx]);
                }
            }
            let slack = 1e-8 * (tmax - tmin).abs().max(1.0);
            json!({
                "command": "forward",
                "solver": report,
                "max_principle_ok": umin >= tmin - slack && umax <= tmax + slack,
                "u_min": umin,
                "u_max": umax,
                "trace_min": tmin,
                "trace_max": tmax,
            })
        }
        Command::Regions => {
            let (sigma, sigma_t) = sigma_pair(cfg, &grid)?;
            let (u, _) = solve_dirichlet(&DirichletProblem::from_trace_fn(sigma, &f)?)?;
            let (u_t, _) = solve_dirichlet(&DirichletProblem::from_trace_fn(sigma_t, &f)?)?;
            let v = u.add(&u_t);
            let (inj, stab, sides) = crate::regions::regions(&cfg.gamma, &v)?;
            inj.write_pgm(&out.join("injectivity.pgm"))?;
            stab.write_pgm(&out.join("stability.pgm"))?;
            inj.write_csv(None, &out.join("injectivity.csv"))?;
            stab.write_csv(Some(&sides), &out.join("stability.csv"))?;
            v.write_csv(&out.join("v.csv"))?;
            let ratio = if inj.measure() > 0.0 {
                stab.measure() / inj.measure()
            } else {
                0.0
            };
            json!({
                "command": "regions",
                "injectivity_count": inj.count(),
                "injectivity_measure": inj.measure(),
                "stability_count": stab.count(),
                "stability_measure": stab.measure(),
                "stability_to_injectivity": ratio,
                "stability_subset_of_injectivity": stab.is_subset_of(&inj),
            })
        }
        Command::Decompose => {
            let (sigma, sigma_t) = sigma_pair(cfg, &grid)?;
            let (u, ru) = solve_dirichlet(&DirichletProblem::from_trace_fn(sigma.clone(), &f)?)?;
            let (u_t, rt) =
                solve_dirichlet(&DirichletProblem::from_trace_fn(sigma_t.clone(), &f)?)?;
            let (residual, rel) = decomposition_residual(&sigma, &sigma_t, &u, &u_t)?;
            residual.write_csv(&out.join("residual.csv"))?;
            json!({
                "command": "decompose",
                "solver_u": ru,
                "solver_u_tilde": rt,
                "rel_residual": rel,
            })
        }
        Command::Reconstruct => {
            let (sigma, sigma_t) = sigma_pair(cfg, &grid)?;
            let p = full_pipeline(&sigma, &sigma_t, &f, &cfg.gamma_prime)?;
            p.delta_sigma.write_csv(&out.join("delta_sigma.csv"))?;
            p.delta_u.write_csv(&out.join("delta_u.csv"))?;
            sigma_t.sub(&sigma).write_csv(&out.join("delta_sigma_true.csv"))?;
            p.injectivity.write_pgm(&out.join("injectivity.pgm"))?;
            p.stability.write_pgm(&out.join("stability.pgm"))?;
            json!({
                "command": "reconstruct",
                "report": p.report,
            })
        }
        Command::Sweep => {
            let sigma = eval_coefficient(&cfg.sigma, &grid);
            let records = sweep(
                &sigma,
                &cfg.perturbation,
                &cfg.epsilons,
                &f,
                &cfg.gamma,
                ProjectionMode::SumGradient,
                cfg.alpha,
            )?;
            let fit = fit_exponent(&records)?;
            let mut csv = String::from("epsilon,lhs,rhs_div,rhs_h1,ratio\n");
            for r in &records {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.epsilon,
                    r.lhs,
                    r.rhs_div,
                    r.rhs_h1,
                    r.ratio()
                ));
            }
            std::fs::write(out.join("sweep.csv"), csv)?;
            json!({
                "command": "sweep",
                "records": records_json(&records),
                "fit": fit,
            })
        }
        Command::Ampere => {
            let (sigma, sigma_t) = sigma_pair(cfg, &grid)?;
            // Build the measured channel from the pair, then feed it through
            // the projected-data pathway and cross-check against the direct
            // trial.
            let (u, _) = solve_dirichlet(&DirichletProblem::from_trace_fn(sigma.clone(), &f)?)?;
            let (u_t, _) =
                solve_dirichlet(&DirichletProblem::from_trace_fn(sigma_t.clone(), &f)?)?;
            let w0 = gradient(&u)?;
            let dj = current_density(&sigma_t, &u_t)?.sub(&current_density(&sigma, &u)?);
            let (j, _) = scalar_component(&w0, &dj, G_MIN_DEFAULT);
            j.write_csv(&out.join("j_component.csv"))?;
            let rec = ampere_trial(&j, &sigma, &sigma_t, &f, &cfg.gamma, cfg.alpha)?;
            let direct = stability_trial(
                &sigma,
                &sigma_t,
                &f,
                &cfg.gamma,
                ProjectionMode::ExactGradient,
                cfg.alpha,
            )?;
            let max_diff = (rec.lhs - direct.lhs)
                .abs()
                .max((rec.rhs_div - direct.rhs_div).abs())
                .max((rec.rhs_h1 - direct.rhs_h1).abs());
            json!({
                "command": "ampere",
                "record": records_json(std::slice::from_ref(&rec))[0],
                "direct": records_json(std::slice::from_ref(&direct))[0],
                "channel_max_difference": max_diff,
            })
        }
    };

    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CdiError::Parse(e.to_string()))?;
    std::fs::write(out.join("summary.json"), text)?;
    Ok(summary)
}
