//! Experiment orchestration: configuration files, the Example-1/Example-2
//! presets, convergence-table sweeps, diagnostics dumps (singular values,
//! solution magnitude), and gnuplot script emission.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FglError, Result};
use crate::flows::BackendChoice;
use crate::fracgrid::{FglParams, Grid, InitialCondition};
use crate::lowrank::{
    diagnostics_csv, integrate_lowrank, truncate_svd, DiagSpec, LowRankStepper, StepDiagnostics,
};
use crate::matexp::DENSE_LIMIT;
use crate::reference::{observed_rate, reference_solution, relerr, restrict_field, RateAxis};
use crate::CMatrix;

pub const SCHEMA_VERSION: u32 = 1;

/// The paper-style (alpha, beta) sweep grid used by the presets.
pub const DEFAULT_ALPHA_BETA: [(f64, f64); 4] =
    [(1.2, 1.9), (1.5, 1.5), (1.7, 1.3), (1.9, 1.2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Example1,
    Example2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    TemporalSweep,
    SpatialSweep,
    SingleRun,
}

fn default_rk4_substeps() -> usize {
    crate::lowrank::DEFAULT_RK4_SUBSTEPS
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

/// Experiment description; serialized as TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub preset: Preset,
    pub mode: SweepMode,
    /// Fractional-order pairs swept as table blocks.
    pub alpha_beta: Vec<(f64, f64)>,
    /// Time-step counts, ascending (temporal sweeps and single runs).
    #[serde(default)]
    pub m_values: Vec<usize>,
    /// Grid sizes, ascending (spatial sweeps).
    #[serde(default)]
    pub n_values: Vec<usize>,
    /// Truncation ranks, ascending; table columns.
    pub ranks: Vec<usize>,
    /// Grid size held fixed during a temporal sweep.
    #[serde(default)]
    pub n_fixed: usize,
    /// Step count held fixed during a spatial sweep.
    #[serde(default)]
    pub m_fixed: usize,
    /// Reference grid size (spatial sweeps; must be a multiple of every
    /// test N).
    #[serde(default)]
    pub n_ref: usize,
    /// Reference step count.
    pub m_ref: usize,
    pub out_dir: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// Seed for RankR initial data (ignored by the analytic presets).
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rk4_substeps")]
    pub rk4_substeps: usize,
}

impl ExperimentConfig {
    /// Desk-scale temporal-order experiment (Table 1/3 analogue):
    /// N = 128 fixed, M in {16, 64, 256}, reference M = 4096.
    pub fn temporal_preset(preset: Preset) -> ExperimentConfig {
        let ranks = match preset {
            Preset::Example1 => vec![3, 4, 5],
            Preset::Example2 => vec![6, 8],
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            preset,
            mode: SweepMode::TemporalSweep,
            alpha_beta: DEFAULT_ALPHA_BETA.to_vec(),
            m_values: vec![16, 64, 256],
            n_values: vec![],
            ranks,
            n_fixed: 128,
            m_fixed: 0,
            n_ref: 0,
            m_ref: 4096,
            out_dir: PathBuf::from("out"),
            cache_dir: default_cache_dir(),
            seed: 0,
            rk4_substeps: default_rk4_substeps(),
        }
    }

    /// Desk-scale spatial-order experiment (Table 2/4 analogue):
    /// M = 2048 fixed, N in {16, 32, 64, 128}, reference N = 256.
    pub fn spatial_preset(preset: Preset) -> ExperimentConfig {
        let ranks = match preset {
            Preset::Example1 => vec![5],
            Preset::Example2 => vec![8],
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            preset,
            mode: SweepMode::SpatialSweep,
            alpha_beta: DEFAULT_ALPHA_BETA.to_vec(),
            m_values: vec![],
            n_values: vec![16, 32, 64, 128],
            ranks,
            n_fixed: 0,
            m_fixed: 2048,
            n_ref: 256,
            m_ref: 2048,
            out_dir: PathBuf::from("out"),
            cache_dir: default_cache_dir(),
            seed: 0,
            rk4_substeps: default_rk4_substeps(),
        }
    }

    /// Single run used by `run` and `diag`: first (alpha, beta) pair,
    /// moderate grid, rank 5/8 by preset.
    pub fn single_run_preset(preset: Preset) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::temporal_preset(preset);
        cfg.mode = SweepMode::SingleRun;
        cfg.alpha_beta = vec![(1.5, 1.5)];
        cfg.m_values = vec![256];
        cfg.n_fixed = 128;
        cfg.ranks = match preset {
            Preset::Example1 => vec![5],
            Preset::Example2 => vec![8],
        };
        cfg
    }

    /// Base physical parameters for this config's preset and one
    /// (alpha, beta) pair.
    pub fn params(&self, alpha: f64, beta: f64) -> FglParams {
        match self.preset {
            Preset::Example1 => FglParams::example1(alpha, beta),
            Preset::Example2 => FglParams::example2(alpha, beta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(FglError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.alpha_beta.is_empty() {
            return err("alpha_beta must list at least one (alpha, beta) pair".into());
        }
        for &(a, b) in &self.alpha_beta {
            if !(a > 1.0 && a <= 2.0 && b > 1.0 && b <= 2.0) {
                return err(format!("fractional orders ({a}, {b}) outside (1, 2]"));
            }
        }
        if self.ranks.is_empty() {
            return err("ranks must be non-empty".into());
        }
        let ascending = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&self.ranks) || self.ranks[0] == 0 {
            return err("ranks must be positive and strictly ascending".into());
        }
        match self.mode {
            SweepMode::TemporalSweep => {
                if self.m_values.is_empty() || !ascending(&self.m_values) || self.m_values[0] == 0 {
                    return err("temporal sweep needs positive ascending m_values".into());
                }
                if self.n_fixed < 4 {
                    return err("temporal sweep needs n_fixed >= 4".into());
                }
                if self.m_ref < 16 * self.m_values[self.m_values.len() - 1] {
                    return err(format!(
                        "m_ref = {} must be >= 16x the largest test M = {}",
                        self.m_ref,
                        self.m_values[self.m_values.len() - 1]
                    ));
                }
            }
            SweepMode::SpatialSweep => {
                if self.n_values.is_empty() || !ascending(&self.n_values) || self.n_values[0] < 4 {
                    return err("spatial sweep needs ascending n_values with N >= 4".into());
                }
                if self.m_fixed == 0 {
                    return err("spatial sweep needs m_fixed >= 1".into());
                }
                for &n in &self.n_values {
                    if self.n_ref % n != 0 || self.n_ref <= n {
                        return err(format!(
                            "n_ref = {} must be a strict multiple of every test N (violated by {n})",
                            self.n_ref
                        ));
                    }
                }
            }
            SweepMode::SingleRun => {
                if self.m_values.len() != 1 || self.m_values[0] == 0 {
                    return err("single run needs exactly one positive M".into());
                }
                if self.n_fixed < 4 {
                    return err("single run needs n_fixed >= 4".into());
                }
            }
        }
        if self.rk4_substeps == 0 {
            return err("rk4_substeps must be >= 1".into());
        }
        Ok(())
    }
}

/// Parses and validates a TOML config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| FglError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| FglError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| FglError::Config(format!("serialize config: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// One sweep cell: a (alpha, beta, refinement, rank) combination.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    pub rank: usize,
    /// Refinement parameter the rate is measured against (tau or h).
    pub level: f64,
    pub relerr: Option<f64>,
    pub rate: Option<f64>,
    pub error: Option<String>,
}

/// Sweep results in the layout of the paper-style tables: per-(alpha, beta)
/// blocks of refinement rows with one (relerr, rate) pair per rank.
#[derive(Debug, Clone, Serialize)]
pub struct TableArtifact {
    pub mode: SweepMode,
    pub ranks: Vec<usize>,
    pub cells: Vec<CellResult>,
}

impl TableArtifact {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    fn cell(&self, alpha: f64, beta: f64, n: usize, m: usize, rank: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.alpha == alpha && c.beta == beta && c.n == n && c.m == m && c.rank == rank
        })
    }

    /// Renders the table as RFC-4180 CSV: one row per (alpha, beta,
    /// refinement), and a (relerr, rate) column pair per rank. Missing
    /// rates (first rows) render as `--`; failed cells as `FAILED`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,level");
        for r in &self.ranks {
            out.push_str(&format!(",r={r} relerr,r={r} rate"));
        }
        out.push('\n');

        let mut keys: Vec<(f64, f64, usize, usize)> = Vec::new();
        for c in &self.cells {
            let k = (c.alpha, c.beta, c.n, c.m);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (alpha, beta, n, m) in keys {
            let label = match self.mode {
                SweepMode::SpatialSweep => format!("N={n}"),
                _ => format!("M={m}"),
            };
            out.push_str(&format!("{alpha},{beta},{label}"));
            for &r in &self.ranks {
                match self.cell(alpha, beta, n, m, r) {
                    Some(c) if c.error.is_none() => {
                        out.push_str(&format!(",{}", sci4(c.relerr.unwrap())));
                        match c.rate {
                            Some(rate) => out.push_str(&format!(",{rate:.4}")),
                            None => out.push_str(",--"),
                        }
                    }
                    _ => out.push_str(",FAILED,--"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Scientific notation in the four-fraction-digit table style, e.g.
/// `1.2361E-02`.
pub fn sci4(x: f64) -> String {
    if x == 0.0 {
        return "0.0000E+00".to_string();
    }
    let s = format!("{:.4E}", x);
    // Rust renders the exponent as `E-2`; pad to the two-digit `E-02`.
    let (mantissa, exp) = s.split_once('E').expect("always has exponent");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}E{sign}{digits:0>2}")
}

fn backend_for(n: usize) -> BackendChoice {
    if n - 1 <= DENSE_LIMIT {
        BackendChoice::Dense
    } else {
        BackendChoice::Krylov
    }
}

fn apply_seed(params: &mut FglParams, seed: u64) {
    if let InitialCondition::RankR { rank, .. } = params.initial_condition {
        params.initial_condition = InitialCondition::RankR { rank, seed };
    }
}

/// Integrates one low-rank cell to T and returns the reconstructed field.
fn run_cell(
    params: &FglParams,
    n: usize,
    m: usize,
    rank: usize,
    rk4_substeps: usize,
) -> Result<CMatrix> {
    let grid = Grid::square(params, n, m)?;
    let u0 = crate::fracgrid::initial_field(params, &grid)?;
    let (x0, _) = truncate_svd(&u0, rank)?;
    let stepper = LowRankStepper::new(params, &grid, backend_for(n))?
        .with_rk4_substeps(rk4_substeps);
    let traj = integrate_lowrank(&x0, &stepper, m, None)?;
    Ok(traj.final_state.reconstruct())
}

/// Runs the configured sweep: one reference per (alpha, beta), all
/// (refinement, rank) cells in parallel, rates filled per rank column.
/// Per-cell failures become in-table error markers; the sweep itself only
/// fails on config or reference errors.
pub fn run_sweep(config: &ExperimentConfig) -> Result<TableArtifact> {
    config.validate()?;
    let mut cells: Vec<CellResult> = Vec::new();

    for &(alpha, beta) in &config.alpha_beta {
        let mut params = config.params(alpha, beta);
        apply_seed(&mut params, config.seed);

        // (n, m, level) per refinement row, with the reference this row is
        // compared against.
        let (rows, reference): (Vec<(usize, usize, f64)>, CMatrix) = match config.mode {
            SweepMode::TemporalSweep | SweepMode::SingleRun => {
                let n = config.n_fixed;
                let rows = config
                    .m_values
                    .iter()
                    .map(|&m| (n, m, params.t_final / m as f64))
                    .collect();
                let u_ref = reference_solution(&params, n, config.m_ref, &config.cache_dir)?;
                (rows, u_ref)
            }
            SweepMode::SpatialSweep => {
                let d = &params.domain;
                let rows = config
                    .n_values
                    .iter()
                    .map(|&n| (n, config.m_fixed, (d.x_r - d.x_l) / n as f64))
                    .collect();
                let u_ref =
                    reference_solution(&params, config.n_ref, config.m_ref, &config.cache_dir)?;
                (rows, u_ref)
            }
        };

        let mut block: Vec<CellResult> = rows
            .par_iter()
            .flat_map(|&(n, m, level)| {
                config.ranks.par_iter().map(move |&rank| (n, m, level, rank))
            })
            .map(|(n, m, level, rank)| {
                let outcome = run_cell(&params, n, m, rank, config.rk4_substeps).and_then(|x| {
                    let u_ref = if config.mode == SweepMode::SpatialSweep {
                        restrict_field(&reference, config.n_ref, n)?
                    } else {
                        reference.clone()
                    };
                    relerr(&x, &u_ref)
                });
                match outcome {
                    Ok(e) => CellResult {
                        alpha,
                        beta,
                        n,
                        m,
                        rank,
                        level,
                        relerr: Some(e),
                        rate: None,
                        error: None,
                    },
                    Err(err) => CellResult {
                        alpha,
                        beta,
                        n,
                        m,
                        rank,
                        level,
                        relerr: None,
                        rate: None,
                        error: Some(err.to_string()),
                    },
                }
            })
            .collect();

        // Rates down each rank column.
        let axis = if config.mode == SweepMode::SpatialSweep { RateAxis::H } else { RateAxis::Tau };
        for &rank in &config.ranks {
            let mut col: Vec<(usize, f64, f64)> = block
                .iter()
                .enumerate()
                .filter(|(_, c)| c.rank == rank && c.relerr.is_some())
                .map(|(i, c)| (i, c.level, c.relerr.unwrap()))
                .collect();
            col.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            if col.len() >= 2 {
                let seq: Vec<(f64, f64)> = col.iter().map(|&(_, l, e)| (l, e)).collect();
                let rates = observed_rate(&seq, axis)?;
                for (k, rate) in rates.into_iter().enumerate() {
                    block[col[k + 1].0].rate = rate;
                }
            }
        }
        cells.extend(block);
    }

    Ok(TableArtifact { mode: config.mode, ranks: config.ranks.clone(), cells })
}

/// Writes the sweep CSV plus a machine-readable JSON of all cells; returns
/// the file paths.
pub fn write_sweep_outputs(
    config: &ExperimentConfig,
    table: &TableArtifact,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&config.out_dir)?;
    let stem = match config.mode {
        SweepMode::TemporalSweep => "temporal",
        SweepMode::SpatialSweep => "spatial",
        SweepMode::SingleRun => "single",
    };
    let csv_path = config.out_dir.join(format!("{stem}_table.csv"));
    fs::write(&csv_path, table.to_csv())?;
    let json_path = config.out_dir.join(format!("{stem}_table.json"));
    let payload = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "config": toml::to_string(config).map_err(|e| FglError::Config(e.to_string()))?,
        "cells": table.cells,
    });
    fs::write(&json_path, serde_json::to_string_pretty(&payload).expect("static json"))?;
    Ok(vec![csv_path, json_path])
}

/// Output of a single diagnosed run.
pub struct SingleRunOutput {
    pub params: FglParams,
    pub grid: Grid,
    pub final_field: CMatrix,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Runs the config's single-run cell with per-step diagnostics enabled.
pub fn run_single(config: &ExperimentConfig) -> Result<SingleRunOutput> {
    config.validate()?;
    if config.mode != SweepMode::SingleRun {
        return Err(FglError::Config("run_single requires mode = single_run".into()));
    }
    let (alpha, beta) = config.alpha_beta[0];
    let mut params = config.params(alpha, beta);
    apply_seed(&mut params, config.seed);
    let (n, m, rank) = (config.n_fixed, config.m_values[0], config.ranks[0]);
    let grid = Grid::square(&params, n, m)?;
    let u0 = crate::fracgrid::initial_field(&params, &grid)?;
    let (x0, _) = truncate_svd(&u0, rank)?;
    let stepper = LowRankStepper::new(&params, &grid, backend_for(n))?
        .with_rk4_substeps(config.rk4_substeps);
    let traj = integrate_lowrank(&x0, &stepper, m, Some(DiagSpec { tangent_residual: false }))?;
    Ok(SingleRunOutput {
        params,
        grid,
        final_field: traj.final_state.reconstruct(),
        diagnostics: traj.diagnostics,
    })
}

/// Writes (a) the per-step singular-value CSV, (b) the final-state singular
/// values (first min(60, rank) entries), and (c) the |u(T)| magnitude grid
/// with its coordinate vectors.
pub fn dump_diagnostics(run: &SingleRunOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let steps = out_dir.join("singular_values_steps.csv");
    fs::write(&steps, diagnostics_csv(&run.diagnostics))?;
    written.push(steps);

    let svd = run.final_field.clone().svd(false, false);
    let final_sv = out_dir.join("singular_values_final.csv");
    let mut text = String::from("index,sigma\n");
    for (i, s) in svd.singular_values.iter().take(60).enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, sci4(*s)));
    }
    fs::write(&final_sv, text)?;
    written.push(final_sv);

    let mag = out_dir.join("magnitude.csv");
    let mut text = String::new();
    for i in 0..run.final_field.nrows() {
        let row: Vec<String> =
            (0..run.final_field.ncols()).map(|j| sci4(run.final_field[(i, j)].norm())).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(&mag, text)?;
    written.push(mag);

    for (name, coords) in [("x_coords.csv", &run.grid.x), ("y_coords.csv", &run.grid.y)] {
        let path = out_dir.join(name);
        let mut text = String::new();
        for c in coords {
            text.push_str(&format!("{c}\n"));
        }
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Singular-value cutoff the plot script uses to mark the numerical rank.
pub const NUMERICAL_RANK_CUTOFF: f64 = 1e-10;

/// Emits self-contained gnuplot scripts next to the CSV artifacts. Returns
/// an error listing every missing input file.
pub fn emit_plots(config: &ExperimentConfig, domain: (f64, f64, f64, f64)) -> Result<Vec<PathBuf>> {
    let out = &config.out_dir;
    let convergence_inputs: Vec<PathBuf> = ["temporal_table.csv", "spatial_table.csv"]
        .iter()
        .map(|f| out.join(f))
        .filter(|p| p.exists())
        .collect();
    let diag_inputs: Vec<PathBuf> =
        ["singular_values_final.csv", "magnitude.csv", "x_coords.csv", "y_coords.csv"]
            .iter()
            .map(|f| out.join(f))
            .filter(|p| p.exists())
            .collect();
    if convergence_inputs.is_empty() && diag_inputs.len() < 4 {
        let missing: Vec<String> = ["temporal_table.csv", "spatial_table.csv", "magnitude.csv"]
            .iter()
            .map(|f| out.join(f).display().to_string())
            .filter(|p| !Path::new(p).exists())
            .collect();
        return Err(FglError::Config(format!("emit_plots: missing inputs: {}", missing.join(", "))));
    }

    fs::create_dir_all(out)?;
    let mut written = Vec::new();

    if !convergence_inputs.is_empty() {
        let path = out.join("convergence.gp");
        let mut s = String::from(
            "# Log-log convergence plot with order guide lines.\n\
             set logscale xy\n\
             set xlabel 'refinement parameter'\n\
             set ylabel 'relative error'\n\
             set key bottom right\n\
             set datafile separator ','\n\
             # slope-1 and slope-2 reference guides\n\
             guide1(x) = 0.5*x\n\
             guide2(x) = 0.5*x**2\n\
             plot guide1(x) title 'slope 1' dt 2, guide2(x) title 'slope 2' dt 3",
        );
        for input in &convergence_inputs {
            s.push_str(&format!(
                ", '{}' using 0:4 with linespoints title '{}'",
                input.display(),
                input.file_stem().unwrap().to_string_lossy()
            ));
        }
        s.push('\n');
        fs::write(&path, s)?;
        written.push(path);
    }

    if diag_inputs.iter().any(|p| p.ends_with("singular_values_final.csv")) {
        let path = out.join("singular_values.gp");
        let s = format!(
            "# Semilog singular-value scatter; numerical rank counts values\n\
             # above {NUMERICAL_RANK_CUTOFF:e} * sigma_1.\n\
             set logscale y\n\
             set xlabel 'index'\n\
             set ylabel 'singular value'\n\
             set datafile separator ','\n\
             plot '{}' every ::1 using 1:2 with points pt 7 title 'sigma_k'\n",
            out.join("singular_values_final.csv").display()
        );
        fs::write(&path, s)?;
        written.push(path);
    }

    if diag_inputs.iter().any(|p| p.ends_with("magnitude.csv")) {
        let (x_l, x_r, y_l, y_r) = domain;
        let path = out.join("heatmap.gp");
        let s = format!(
            "# |u(T)| magnitude heatmap over the physical domain.\n\
             set datafile separator ','\n\
             set xrange [{x_l}:{x_r}]\n\
             set yrange [{y_l}:{y_r}]\n\
             set view map\n\
             splot '{}' matrix with image title '|u(T)|'\n",
            out.join("magnitude.csv").display()
        );
        fs::write(&path, s)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_temporal() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        cfg.alpha_beta = vec![(1.5, 1.5)];
        cfg.m_values = vec![4, 8];
        cfg.n_fixed = 16;
        cfg.m_ref = 128;
        cfg.ranks = vec![2, 3];
        cfg
    }

    #[test]
    fn sci4_matches_table_style() {
        assert_eq!(sci4(1.2361e-2), "1.2361E-02");
        assert_eq!(sci4(6.1959e-3), "6.1959E-03");
        assert_eq!(sci4(2.5), "2.5000E+00");
        assert_eq!(sci4(-3.14159e5), "-3.1416E+05");
        assert_eq!(sci4(0.0), "0.0000E+00");
        assert_eq!(sci4(9.99999e-1), "1.0000E+00");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        save_config(&cfg, &path).unwrap();
        let back = load_config(&path).unwrap();
        assert_eq!(back.preset, cfg.preset);
        assert_eq!(back.mode, cfg.mode);
        assert_eq!(back.alpha_beta, cfg.alpha_beta);
        assert_eq!(back.m_values, cfg.m_values);
        assert_eq!(back.ranks, cfg.ranks);
        assert_eq!(back.m_ref, cfg.m_ref);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        cfg.m_values.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        cfg.ranks.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        cfg.m_ref = cfg.m_values[cfg.m_values.len() - 1] * 8;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::spatial_preset(Preset::Example2);
        cfg.n_values = vec![24];
        assert!(cfg.validate().is_err(), "n_ref not a multiple of 24");

        let mut cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        cfg.alpha_beta = vec![(2.5, 1.5)];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        cfg.schema_version = 99;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paper_alpha_beta_grid_accepted() {
        let mut cfg = ExperimentConfig::temporal_preset(Preset::Example1);
        cfg.alpha_beta = DEFAULT_ALPHA_BETA.to_vec();
        cfg.validate().unwrap();
    }

    #[test]
    fn degenerate_sweep_has_no_rates() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_temporal();
        cfg.m_values = vec![4];
        cfg.m_ref = 64;
        cfg.ranks = vec![2];
        cfg.cache_dir = dir.path().join("cache");
        cfg.out_dir = dir.path().join("out");
        let table = run_sweep(&cfg).unwrap();
        assert_eq!(table.cells.len(), 1);
        assert!(table.cells[0].relerr.is_some());
        assert!(table.cells[0].rate.is_none());
        let csv = table.to_csv();
        assert!(csv.contains(",--"), "first row renders -- for the rate: {csv}");
    }

    #[test]
    fn sweep_layout_and_rates() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_temporal();
        cfg.cache_dir = dir.path().join("cache");
        cfg.out_dir = dir.path().join("out");
        let table = run_sweep(&cfg).unwrap();
        // 1 block x 2 refinements x 2 ranks.
        assert_eq!(table.cells.len(), 4);
        assert_eq!(table.failed_cells(), 0);
        for c in &table.cells {
            let first_row = c.m == 4;
            assert_eq!(c.rate.is_none(), first_row, "rate only after the first row");
            assert!(c.relerr.unwrap() >= 0.0);
        }
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,beta,level,r=2 relerr,r=2 rate,r=3 relerr,r=3 rate");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1.5,1.5,M=4"));
    }

    #[test]
    fn sweep_outputs_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_temporal();
        cfg.cache_dir = dir.path().join("cache");
        cfg.out_dir = dir.path().join("out");
        let a = run_sweep(&cfg).unwrap().to_csv();
        let b = run_sweep(&cfg).unwrap().to_csv();
        assert_eq!(a, b, "byte-identical CSV across runs");
    }

    #[test]
    fn single_run_and_diagnostics_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::single_run_preset(Preset::Example1);
        cfg.n_fixed = 16;
        cfg.m_values = vec![8];
        cfg.ranks = vec![3];
        cfg.m_ref = 128;
        cfg.cache_dir = dir.path().join("cache");
        cfg.out_dir = dir.path().join("out");
        let run = run_single(&cfg).unwrap();
        assert_eq!(run.final_field.shape(), (15, 15));
        assert_eq!(run.diagnostics.len(), 8);
        for d in &run.diagnostics {
            assert_eq!(d.singular_values.len(), 3, "rank-r run emits r values per step");
        }
        let files = dump_diagnostics(&run, &cfg.out_dir).unwrap();
        assert_eq!(files.len(), 5);
        for f in &files {
            assert!(f.exists());
        }
        let mag = fs::read_to_string(cfg.out_dir.join("magnitude.csv")).unwrap();
        assert_eq!(mag.lines().count(), 15);
        assert_eq!(mag.lines().next().unwrap().split(',').count(), 15);
        let x = fs::read_to_string(cfg.out_dir.join("x_coords.csv")).unwrap();
        assert_eq!(x.lines().count(), 15);
    }

    #[test]
    fn plots_reference_guides_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::single_run_preset(Preset::Example1);
        cfg.n_fixed = 16;
        cfg.m_values = vec![4];
        cfg.ranks = vec![2];
        cfg.m_ref = 64;
        cfg.cache_dir = dir.path().join("cache");
        cfg.out_dir = dir.path().join("out");
        let run = run_single(&cfg).unwrap();
        dump_diagnostics(&run, &cfg.out_dir).unwrap();
        // Also a convergence table so all three scripts appear.
        let mut sweep_cfg = tiny_temporal();
        sweep_cfg.cache_dir = cfg.cache_dir.clone();
        sweep_cfg.out_dir = cfg.out_dir.clone();
        let table = run_sweep(&sweep_cfg).unwrap();
        write_sweep_outputs(&sweep_cfg, &table).unwrap();

        let d = &run.params.domain;
        let files = emit_plots(&cfg, (d.x_l, d.x_r, d.y_l, d.y_r)).unwrap();
        assert_eq!(files.len(), 3);
        let conv = fs::read_to_string(cfg.out_dir.join("convergence.gp")).unwrap();
        assert!(conv.contains("slope 1"));
        assert!(conv.contains("slope 2"));
        assert!(conv.contains("logscale xy"));
        let sv = fs::read_to_string(cfg.out_dir.join("singular_values.gp")).unwrap();
        assert!(sv.contains("logscale y"));
        let heat = fs::read_to_string(cfg.out_dir.join("heatmap.gp")).unwrap();
        assert!(heat.contains(&format!("set xrange [{}:{}]", d.x_l, d.x_r)));
        assert!(heat.contains(&format!("set yrange [{}:{}]", d.y_l, d.y_r)));
    }

    #[test]
    fn plots_list_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::single_run_preset(Preset::Example1);
        cfg.out_dir = dir.path().join("empty");
        match emit_plots(&cfg, (-10.0, 10.0, -10.0, 10.0)) {
            Err(FglError::Config(msg)) => assert!(msg.contains("missing inputs")),
            other => panic!("expected missing-input error, got {other:?}"),
        }
    }

    #[test]
    fn sweep_records_cell_failures_without_aborting() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_temporal();
        // Rank exceeding the interior dimension fails per cell.
        cfg.ranks = vec![2, 64];
        cfg.cache_dir = dir.path().join("cache");
        cfg.out_dir = dir.path().join("out");
        let table = run_sweep(&cfg).unwrap();
        assert_eq!(table.failed_cells(), 2);
        assert!(table.to_csv().contains("FAILED"));
        // The healthy column still carries its rate.
        let good: Vec<_> = table.cells.iter().filter(|c| c.rank == 2).collect();
        assert!(good.iter().any(|c| c.rate.is_some()));
    }
}
