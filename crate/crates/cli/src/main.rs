use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcm_core::config::{Experiment, ExperimentConfig};
use dcm_core::error::DcmError;
use dcm_core::gksl::{integrate_master, positivity_monitor, IntegrateOptions, MasterEquationSpec};
use dcm_core::harness::{markov_diagnostics, run_point, run_sweep};
use dcm_core::noise::RngStream;
use dcm_core::output::{write_markov, write_point, write_reference, write_sweep, Provenance};

const DEFAULT_OUT: &str = "dcm-out";

/// Windowed double-covariance simulations and their reference dynamics.
#[derive(Parser)]
#[command(name = "dcm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one Monte-Carlo pipeline point and write the density series.
    Simulate(Common),
    /// Integrate the reference master equation on the tau grid.
    Reference(Common),
    /// Run the epsilon sweep and fit the error scaling law.
    Sweep(Common),
    /// Tabulate lagged increment correlations of the noise model.
    NoiseCheck(Common),
    /// Validate the configuration without computing anything.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
}

fn exit_code(err: &DcmError) -> u8 {
    match err {
        DcmError::Config(_)
        | DcmError::Dimension { .. }
        | DcmError::IndefiniteCovariance { .. }
        | DcmError::StepGuard { .. }
        | DcmError::WindowUnderflow { .. } => 2,
        DcmError::NumericalBlowup { .. } | DcmError::NormCollapse { .. } => 3,
        DcmError::InconclusiveSweep { .. } | DcmError::DegenerateTrace { .. } => 4,
        DcmError::Io(_) | DcmError::Serialize(_) | DcmError::TauMismatch { .. } => 1,
    }
}

fn load(common: &Common) -> dcm_core::error::Result<(Experiment, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.workers = Some(workers);
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((cfg.validate()?, out))
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn simulate(exp: &Experiment, out: &Path, prov: &Provenance) -> dcm_core::error::Result<()> {
    let point = run_point(&exp.spec, &exp.window, exp.ensemble, &exp.settings)?;
    report_files(&write_point(out, "series", &point, prov)?);
    println!(
        "epsilon = {}, trajectories = {}, sup error vs {} = {:.6e} (max SE {:.3e})",
        exp.window.epsilon,
        exp.ensemble,
        exp.settings.reference_variant.name(),
        point.error,
        point.max_se
    );
    Ok(())
}

fn reference(exp: &Experiment, out: &Path, prov: &Provenance) -> dcm_core::error::Result<()> {
    let master = MasterEquationSpec::from_system(&exp.spec, exp.settings.reference_variant)?;
    let rho0 = exp.settings.initial.reference_rho(exp.spec.dims().composite())?;
    let series = integrate_master(&rho0, &master, &exp.window.tau_grid, &IntegrateOptions::default())?;
    let monitor = positivity_monitor(&series);
    report_files(&write_reference(out, &series, &monitor, prov)?);
    if !monitor.is_clean() {
        eprintln!(
            "warning: monitor flags (negative eigenvalue: {}, trace drift: {}, non-Hermitian: {})",
            monitor.negative_eigenvalue, monitor.trace_drift, monitor.non_hermitian
        );
    }
    Ok(())
}

fn sweep(exp: &Experiment, out: &Path, prov: &Provenance) -> dcm_core::error::Result<()> {
    let sweep = exp
        .sweep
        .as_ref()
        .ok_or_else(|| DcmError::Config("the sweep command needs a [sweep] section".into()))?;
    let (report, points) = run_sweep(sweep, &exp.spec, &exp.settings)?;
    report_files(&write_sweep(out, &report, &points, prov)?);
    println!(
        "slope = {:.4} (95% CI [{:.4}, {:.4}]) from {} resolved points",
        report.fitted_slope, report.slope_ci.0, report.slope_ci.1, report.n_resolved
    );
    Ok(())
}

fn noise_check(exp: &Experiment, out: &Path, prov: &Provenance) -> dcm_core::error::Result<()> {
    let diag = &exp.config.diagnostics;
    let dt = diag.dt.unwrap_or(exp.window.dt_micro);
    let mut stream = RngStream::new(exp.settings.seed, 0);
    let table = markov_diagnostics(exp.spec.noise(), dt, diag.lags, diag.samples, &mut stream);
    let pass = table.within(3.0);
    report_files(&write_markov(out, &table, pass, prov)?);
    for row in &table.rows {
        println!("lag {}: max |deviation| / SE = {:.3}", row.lag, row.max_z());
    }
    println!("within 3 SE: {pass}");
    Ok(())
}

fn run(command: &Command) -> dcm_core::error::Result<()> {
    let (name, common) = match command {
        Command::Simulate(c) => ("simulate", c),
        Command::Reference(c) => ("reference", c),
        Command::Sweep(c) => ("sweep", c),
        Command::NoiseCheck(c) => ("noise-check", c),
        Command::Validate(c) => ("validate", c),
    };
    let (exp, out) = load(common)?;
    let prov = Provenance::new(name, exp.config.to_json());
    match command {
        Command::Simulate(_) => simulate(&exp, &out, &prov),
        Command::Reference(_) => reference(&exp, &out, &prov),
        Command::Sweep(_) => sweep(&exp, &out, &prov),
        Command::NoiseCheck(_) => noise_check(&exp, &out, &prov),
        Command::Validate(_) => {
            println!(
                "ok: dims {}x{}, {} noise channels, {} interaction terms, Δ = {}, δt = {}, Δ/δt = {:.1}",
                exp.spec.dims().dim_a,
                exp.spec.dims().dim_b,
                exp.spec.noise().n_channels(),
                exp.spec.interaction().len(),
                exp.window.delta,
                exp.window.dt_micro,
                exp.window.scale_ratio()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
