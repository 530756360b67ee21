use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fgl::error::FglError;
use fgl::harness::{
    dump_diagnostics, emit_plots, load_config, run_single, run_sweep, write_sweep_outputs,
    ExperimentConfig, Preset, SweepMode,
};

#[derive(Parser)]
#[command(
    name = "fgl",
    version,
    about = "Low-rank splitting solver for the 2D space-fractional Ginzburg-Landau equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML); overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment preset.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Output directory (default from config/preset).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rayon worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for randomized initial data.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PresetArg {
    Example1,
    Example2,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Preset {
        match p {
            PresetArg::Example1 => Preset::Example1,
            PresetArg::Example2 => Preset::Example2,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and print a summary.
    Run(CommonArgs),
    /// Run a convergence-table sweep and write CSV/JSON artifacts.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep axis when building from a preset.
        #[arg(long, value_enum, default_value_t = AxisArg::Temporal)]
        axis: AxisArg,
    },
    /// Integrate one configuration and dump per-step diagnostics.
    Diag(CommonArgs),
    /// Emit gnuplot scripts for previously written artifacts.
    Plot(CommonArgs),
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AxisArg {
    Temporal,
    Spatial,
}

fn resolve_config(
    common: &CommonArgs,
    default_mode: SweepMode,
    axis: Option<AxisArg>,
) -> Result<ExperimentConfig, FglError> {
    let mut cfg = match (&common.config, common.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(preset)) => {
            let preset: Preset = preset.into();
            match default_mode {
                SweepMode::SingleRun => ExperimentConfig::single_run_preset(preset),
                _ => match axis.unwrap_or(AxisArg::Temporal) {
                    AxisArg::Temporal => ExperimentConfig::temporal_preset(preset),
                    AxisArg::Spatial => ExperimentConfig::spatial_preset(preset),
                },
            }
        }
        (None, None) => {
            return Err(FglError::Config("provide --config <path> or --preset".into()));
        }
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // A second build_global in one process is a no-op; fine for a CLI.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn exit_code_for(err: &FglError) -> ExitCode {
    match err {
        FglError::Config(_) | FglError::InvalidParameter(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn cmd_run(common: &CommonArgs) -> Result<ExitCode, FglError> {
    let cfg = resolve_config(common, SweepMode::SingleRun, None)?;
    let run = run_single(&cfg)?;
    let sv = run.diagnostics.last().map(|d| d.singular_values.clone()).unwrap_or_default();
    println!(
        "run complete: N={}, M={}, r={}, |u(T)|_F = {:.6e}",
        cfg.n_fixed,
        cfg.m_values[0],
        cfg.ranks[0],
        run.final_field.norm()
    );
    if !sv.is_empty() {
        let formatted: Vec<String> = sv.iter().map(|s| format!("{s:.3e}")).collect();
        println!("final singular values: [{}]", formatted.join(", "));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(common: &CommonArgs, axis: AxisArg) -> Result<ExitCode, FglError> {
    let cfg = resolve_config(common, SweepMode::TemporalSweep, Some(axis))?;
    let table = run_sweep(&cfg)?;
    let paths = write_sweep_outputs(&cfg, &table)?;
    for p in &paths {
        println!("wrote {}", p.display());
    }
    let failed = table.failed_cells();
    let total = table.cells.len();
    if failed == total {
        eprintln!("all {total} cells failed");
        Ok(ExitCode::from(2))
    } else if failed > 0 {
        eprintln!("{failed} of {total} cells failed (markers in table)");
        Ok(ExitCode::from(3))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_diag(common: &CommonArgs) -> Result<ExitCode, FglError> {
    let cfg = resolve_config(common, SweepMode::SingleRun, None)?;
    let run = run_single(&cfg)?;
    for p in dump_diagnostics(&run, &cfg.out_dir)? {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(common: &CommonArgs) -> Result<ExitCode, FglError> {
    let cfg = resolve_config(common, SweepMode::SingleRun, None)?;
    let (alpha, beta) = cfg.alpha_beta[0];
    let d = cfg.params(alpha, beta).domain;
    for p in emit_plots(&cfg, (d.x_l, d.x_r, d.y_l, d.y_r))? {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, result) = match &cli.command {
        Command::Run(c) => {
            init_threads(c.threads);
            (c, cmd_run(c))
        }
        Command::Sweep { common, axis } => {
            init_threads(common.threads);
            (common, cmd_sweep(common, *axis))
        }
        Command::Diag(c) => {
            init_threads(c.threads);
            (c, cmd_diag(c))
        }
        Command::Plot(c) => {
            init_threads(c.threads);
            (c, cmd_plot(c))
        }
    };
    let _ = common;
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
