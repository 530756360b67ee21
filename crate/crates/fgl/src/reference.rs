//! Independent oracles and error metrics: a brute-force RK4 integrator for
//! the full matrix ODE, disk-cached fine-step reference solutions, and the
//! relative-error / convergence-rate formulas used by the experiment tables.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{FglError, Result};
use crate::flows::{integrate_full, BackendChoice, NonlinearMethod, SplitStepper};
use crate::fracgrid::{build_operator, Axis, FglParams, Grid, InitialCondition, Side};
use crate::lowrank::g_dense;
use crate::matexp::DENSE_LIMIT;
use crate::CMatrix;

/// One cell of a convergence table: the measured error, the rate against
/// the previous refinement (absent on the first row), and the configuration
/// it belongs to.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ErrorReport {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    pub rank: usize,
    pub relerr: f64,
    pub rate: Option<f64>,
}

/// Classical RK4 on the full matrix ODE
/// `U' = A_x U + U A_y - (kappa + i xi)|U|^2 U + gamma U`
/// with `m` uniform steps over `[0, T]`. Operators are applied via their
/// FFT embedding, so the cost per step is O(N^2 log N).
///
/// This integrator shares no code path with the splitting steppers and
/// serves as the independent oracle.
pub fn rk4_full_ode(u0: &CMatrix, params: &FglParams, grid: &Grid, m: usize) -> Result<CMatrix> {
    if m < 1 {
        return Err(FglError::InvalidParameter("RK4 step count m must be >= 1".into()));
    }
    let opx = build_operator(params, grid, Axis::X)?;
    let opy = build_operator(params, grid, Axis::Y)?;
    let f = |u: &CMatrix| -> Result<CMatrix> {
        Ok(opx.apply(u, Side::Left)? + opy.apply(u, Side::Right)? + g_dense(u, params))
    };
    let h = params.t_final / m as f64;
    let mut u = u0.clone();
    for step in 1..=m {
        let half = crate::C64::new(0.5 * h, 0.0);
        let k1 = f(&u)?;
        let k2 = f(&(&u + &k1 * half))?;
        let k3 = f(&(&u + &k2 * half))?;
        let k4 = f(&(&u + &k3 * crate::C64::new(h, 0.0)))?;
        let two = crate::C64::new(2.0, 0.0);
        u += (k1 + k2 * two + k3 * two + k4) * crate::C64::new(h / 6.0, 0.0);
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FglError::NonFinite { step, context: "rk4_full_ode" });
        }
    }
    Ok(u)
}

fn hex_sha256(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Canonical text key of a reference configuration; hashed for the cache
/// file name and stored verbatim in the JSON sidecar.
fn config_key(params: &FglParams, n: usize, m_ref: usize) -> String {
    let d = &params.domain;
    let ic = match &params.initial_condition {
        InitialCondition::Example1 => "example1".to_string(),
        InitialCondition::Example2 => "example2".to_string(),
        InitialCondition::RankR { rank, seed } => format!("rankr:{rank}:{seed}"),
        InitialCondition::Custom(data) => {
            format!("custom:{}", hex_sha256(&field_to_bytes(data)))
        }
    };
    format!(
        "scheme=lie-trotter-closedform;nu={:e};eta={:e};kappa={:e};xi={:e};gamma={:e};\
         alpha={:e};beta={:e};domain=[{:e},{:e}]x[{:e},{:e}];T={:e};ic={};N={};M={}",
        params.nu,
        params.eta,
        params.kappa,
        params.xi,
        params.gamma,
        params.alpha,
        params.beta,
        d.x_l,
        d.x_r,
        d.y_l,
        d.y_r,
        params.t_final,
        ic,
        n,
        m_ref
    )
}

fn field_to_bytes(u: &CMatrix) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(u.len() * 16);
    for i in 0..u.nrows() {
        for j in 0..u.ncols() {
            bytes.extend_from_slice(&u[(i, j)].re.to_le_bytes());
            bytes.extend_from_slice(&u[(i, j)].im.to_le_bytes());
        }
    }
    bytes
}

fn field_from_bytes(bytes: &[u8], nrows: usize, ncols: usize) -> Option<CMatrix> {
    if bytes.len() != nrows * ncols * 16 {
        return None;
    }
    let mut u = CMatrix::zeros(nrows, ncols);
    let mut k = 0;
    for i in 0..nrows {
        for j in 0..ncols {
            let re = f64::from_le_bytes(bytes[k..k + 8].try_into().ok()?);
            let im = f64::from_le_bytes(bytes[k + 8..k + 16].try_into().ok()?);
            if !re.is_finite() || !im.is_finite() {
                return None;
            }
            u[(i, j)] = crate::C64::new(re, im);
            k += 16;
        }
    }
    Some(u)
}

fn try_load_cached(bin: &Path, json: &Path, key: &str, nrows: usize, ncols: usize) -> Option<CMatrix> {
    let sidecar = fs::read_to_string(json).ok()?;
    let meta: serde_json::Value = serde_json::from_str(&sidecar).ok()?;
    if meta.get("config")?.as_str()? != key {
        return None;
    }
    let bytes = fs::read(bin).ok()?;
    field_from_bytes(&bytes, nrows, ncols)
}

/// Atomic write: temp file in the destination directory, then rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, contents)?;
    tmp.persist(path).map_err(|e| FglError::Io(e.error))?;
    Ok(())
}

/// Fine-step full-rank reference solution on an N x N grid with `m_ref`
/// Lie-Trotter steps (closed-form nonlinear flow), cached on disk under
/// `cache_dir/<sha256(config)>.{bin,json}`. A corrupted or mismatched cache
/// entry is silently recomputed.
pub fn reference_solution(
    params: &FglParams,
    n: usize,
    m_ref: usize,
    cache_dir: &Path,
) -> Result<CMatrix> {
    let key = config_key(params, n, m_ref);
    let hash = hex_sha256(key.as_bytes());
    let bin = cache_dir.join(format!("{hash}.bin"));
    let json = cache_dir.join(format!("{hash}.json"));
    let (nrows, ncols) = (n - 1, n - 1);

    if let Some(u) = try_load_cached(&bin, &json, &key, nrows, ncols) {
        return Ok(u);
    }

    let grid = Grid::square(params, n, m_ref)?;
    let backend = if n - 1 <= DENSE_LIMIT { BackendChoice::Dense } else { BackendChoice::Krylov };
    let stepper = SplitStepper::new(params, &grid, NonlinearMethod::ClosedForm, backend)?;
    let u0 = crate::fracgrid::initial_field(params, &grid)?;
    let u = integrate_full(&u0, &stepper, m_ref, None)?.final_field;

    fs::create_dir_all(cache_dir)?;
    write_atomic(&bin, &field_to_bytes(&u))?;
    let sidecar = serde_json::json!({
        "hash": hash,
        "config": key,
        "nrows": nrows,
        "ncols": ncols,
    });
    write_atomic(&json, serde_json::to_string_pretty(&sidecar).expect("static json").as_bytes())?;
    Ok(u)
}

/// Cache file paths for a given configuration (exposed for tooling/tests).
pub fn cache_paths(params: &FglParams, n: usize, m_ref: usize, cache_dir: &Path) -> (PathBuf, PathBuf) {
    let key = config_key(params, n, m_ref);
    let hash = hex_sha256(key.as_bytes());
    (cache_dir.join(format!("{hash}.bin")), cache_dir.join(format!("{hash}.json")))
}

/// Frobenius relative error `|x - u_ref|_F / |u_ref|_F`.
pub fn relerr(x_final: &CMatrix, u_ref: &CMatrix) -> Result<f64> {
    if x_final.shape() != u_ref.shape() {
        return Err(FglError::ShapeMismatch {
            expected: format!("{} x {}", u_ref.nrows(), u_ref.ncols()),
            actual: format!("{} x {}", x_final.nrows(), x_final.ncols()),
            context: "relerr",
        });
    }
    let denom = u_ref.norm();
    if denom == 0.0 {
        return Err(FglError::InvalidParameter("relerr: zero reference norm".into()));
    }
    Ok((x_final - u_ref).norm() / denom)
}

/// Which refinement parameter a rate is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateAxis {
    Tau,
    H,
}

/// Pairwise observed convergence rates
/// `rate = log(e_i / e_{i+1}) / log(p_i / p_{i+1})` for a sequence of
/// `(refinement parameter, relerr)` entries sorted from coarse to fine.
/// A rate is `None` when either error underflows to zero.
pub fn observed_rate(errs: &[(f64, f64)], _axis: RateAxis) -> Result<Vec<Option<f64>>> {
    if errs.len() < 2 {
        return Err(FglError::InvalidParameter("observed_rate needs >= 2 entries".into()));
    }
    for w in errs.windows(2) {
        if !(w[1].0 < w[0].0) {
            return Err(FglError::InvalidParameter(
                "observed_rate: refinement must be strictly decreasing".into(),
            ));
        }
    }
    if errs.iter().any(|(p, e)| !(*p > 0.0) || *e < 0.0) {
        return Err(FglError::InvalidParameter(
            "observed_rate: refinements must be positive and errors nonnegative".into(),
        ));
    }
    Ok(errs
        .windows(2)
        .map(|w| {
            let ((p1, e1), (p2, e2)) = (w[0], w[1]);
            if e1 == 0.0 || e2 == 0.0 {
                None
            } else {
                Some((e1 / e2).ln() / (p1 / p2).ln())
            }
        })
        .collect())
}

/// Restricts a fine-grid interior field (from an `n_fine` x `n_fine` grid)
/// onto the interior of a coarser `n_coarse` grid by stride sampling.
/// Requires `n_coarse | n_fine`, so every coarse node is a fine node.
pub fn restrict_field(fine: &CMatrix, n_fine: usize, n_coarse: usize) -> Result<CMatrix> {
    if n_coarse < 2 || n_fine % n_coarse != 0 {
        return Err(FglError::InvalidParameter(format!(
            "restriction requires n_coarse | n_fine, got {n_coarse} and {n_fine}"
        )));
    }
    if fine.nrows() != n_fine - 1 || fine.ncols() != n_fine - 1 {
        return Err(FglError::ShapeMismatch {
            expected: format!("{} x {}", n_fine - 1, n_fine - 1),
            actual: format!("{} x {}", fine.nrows(), fine.ncols()),
            context: "restrict_field",
        });
    }
    let stride = n_fine / n_coarse;
    Ok(CMatrix::from_fn(n_coarse - 1, n_coarse - 1, |i, j| {
        fine[((i + 1) * stride - 1, (j + 1) * stride - 1)]
    }))
}
