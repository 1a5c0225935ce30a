//! Command-line front end: parse a run configuration, validate it, execute
//! the requested command, and write artifacts.

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cdi-lab", about = "Conductivity imaging laboratory")]
struct Args {
    /// Path to the run configuration (key = value text).
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides the config's `output` key.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker thread count (default: all cores). Results are identical
    /// for any value.
    #[arg(long)]
    threads: Option<usize>,

    #[arg(long)]
    verbose: bool,
}

fn errors_json(errors: &[String]) -> String {
    serde_json::to_string_pretty(&serde_json::json!({ "errors": errors }))
        .unwrap_or_else(|_| "{\"errors\":[\"serialization failure\"]}".into())
}

fn main() -> ExitCode {
    let args = Args::parse();

    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", errors_json(&[format!("thread pool: {e}")]));
            return ExitCode::from(2);
        }
    }

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!(
                "{}",
                errors_json(&[format!("cannot read {}: {e}", args.config.display())])
            );
            return ExitCode::from(2);
        }
    };
    let cfg = match cdi_lab::config::RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", errors_json(&[e.to_string()]));
            return ExitCode::from(2);
        }
    };
    let errs = cfg.validate();
    if !errs.is_empty() {
        eprintln!("{}", errors_json(&errs));
        return ExitCode::from(2);
    }

    let out = args.out.unwrap_or_else(|| PathBuf::from(&cfg.output));
    match cdi_lab::cli::run(&cfg, &out, args.verbose) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", errors_json(&[e.to_string()]));
            ExitCode::from(1)
        }
    }
}
