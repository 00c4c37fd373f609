use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mfg_congestion::experiment::{run, write_reports, Emit, ExperimentConfig, ALL_EMITS, PRESET_NAMES};
use mfg_congestion::MfgError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmitArg {
    Csv,
    Json,
    Plt,
}

impl From<EmitArg> for Emit {
    fn from(e: EmitArg) -> Self {
        match e {
            EmitArg::Csv => Emit::Csv,
            EmitArg::Json => Emit::Json,
            EmitArg::Plt => Emit::Plt,
        }
    }
}

/// Stationary mean-field games with congestion: solvers, oracles, and the
/// reference experiments.
///
/// Exit status is 0 when every run converged, 2 when a run did not converge
/// or a numerical procedure failed, and 1 on configuration or I/O errors.
#[derive(Debug, Parser)]
#[command(name = "mfg", version)]
struct Args {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name; without --config this reproduces the preset.
    #[arg(long)]
    preset: Option<String>,
    /// Grid size override.
    #[arg(long)]
    n: Option<usize>,
    /// Output directory (default: out/<preset or mode>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random initial points.
    #[arg(long)]
    seed: Option<u64>,
    /// Files to write; repeat or comma-separate (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    emit: Vec<EmitArg>,
    /// Print the preset names and exit.
    #[arg(long)]
    list_presets: bool,
}

fn build_config(args: &Args) -> Result<ExperimentConfig, MfgError> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(_)) => ExperimentConfig::from_toml("mode = \"reproduce\"")?,
        (None, None) => return Err(MfgError::Config("pass --config PATH or --preset NAME".into())),
    };
    if let Some(p) = &args.preset {
        cfg.preset = Some(p.clone());
    }
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if !args.emit.is_empty() {
        cfg.emit = Some(args.emit.iter().map(|e| Emit::from(*e)).collect());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list_presets {
        for name in PRESET_NAMES {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.preset.clone().unwrap_or_else(|| cfg.mode.as_str().to_string())));
    let emit = cfg.emit.clone().unwrap_or_else(|| ALL_EMITS.to_vec());
    let reports = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                MfgError::Numeric(_) | MfgError::Degenerate(_) => 2,
                _ => 1,
            });
        }
    };
    if let Err(e) = write_reports(&reports, &out, &emit) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let mut all = true;
    for (label, r) in &reports {
        all &= r.converged;
        let hbar = r.summary.get("Hbar").and_then(|v| v.as_f64());
        let name = if label.is_empty() { "run" } else { label };
        match hbar {
            Some(h) => println!("{name}: converged={} Hbar={h:.10}", r.converged),
            None => println!("{name}: converged={}", r.converged),
        }
    }
    println!("wrote {}", out.display());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
