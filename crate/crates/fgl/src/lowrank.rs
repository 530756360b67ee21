//! Rank-r manifold machinery: the factored state `X = S Sigma V*`,
//! tangent-space projection, the rank-preserving linear flow, and the
//! projector-splitting (KSL) integrator for the projected nonlinear flow.
//!
//! The nonlinear right-hand side `G(X) = -(kappa + i xi)|X|^2 X + gamma X`
//! has no exact low-rank form, so every `G` evaluation is streamed against
//! the skinny factors in row panels; dense `(N_x-1) x (N_y-1)` iterates are
//! never materialized inside a step.

use rayon::prelude::*;

use crate::error::{FglError, Result};
use crate::fracgrid::{build_operator, Axis, FglParams, Grid};
use crate::matexp::ExpBackend;
use crate::{C64, CMatrix};

/// Row-panel height for streamed nonlinear evaluations.
pub const DEFAULT_PANEL: usize = 256;

/// RK4 substeps per projector-splitting substep. The splitting error O(tau)
/// dominates, so one substep suffices for production runs; oracle tests
/// raise it.
pub const DEFAULT_RK4_SUBSTEPS: usize = 1;

/// Factored rank-r state `X = S Sigma V*` with orthonormal `S`, `V`.
/// `Sigma` is r x r and carries the singular values of `X`, but is not
/// necessarily diagonal.
#[derive(Debug, Clone)]
pub struct LowRankState {
    pub s: CMatrix,
    pub sigma: CMatrix,
    pub v: CMatrix,
}

impl LowRankState {
    pub fn rank(&self) -> usize {
        self.sigma.nrows()
    }

    /// Dense reconstruction `S Sigma V*`.
    pub fn reconstruct(&self) -> CMatrix {
        &self.s * &self.sigma * self.v.adjoint()
    }

    /// `max(|S*S - I|_F, |V*V - I|_F)`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        let id = CMatrix::identity(r, r);
        let es = (self.s.adjoint() * &self.s - &id).norm();
        let ev = (self.v.adjoint() * &self.v - &id).norm();
        es.max(ev)
    }

    /// Singular values of `Sigma` (equal to those of the reconstruction),
    /// sorted descending.
    pub fn singular_values(&self) -> Vec<f64> {
        self.sigma.clone().svd(false, false).singular_values.iter().copied().collect()
    }

    /// Condition number of `Sigma`; `inf` when the smallest singular value
    /// underflows.
    pub fn cond_sigma(&self) -> f64 {
        let sv = self.singular_values();
        let (max, min) = (sv[0], sv[sv.len() - 1]);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    fn is_finite(&self) -> bool {
        let ok = |m: &CMatrix| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        ok(&self.s) && ok(&self.sigma) && ok(&self.v)
    }
}

/// Thin QR with the diagonal of `R` normalized to be real nonnegative, so
/// factorizations are deterministic across runs and platforms.
pub fn qr_pos(m: &CMatrix) -> (CMatrix, CMatrix) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows() {
        let d = r[(i, i)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            let inv = phase.conj();
            for j in i..r.ncols() {
                r[(i, j)] *= inv;
            }
            for k in 0..q.nrows() {
                q[(k, i)] *= phase;
            }
        }
    }
    (q, r)
}

/// Best rank-r approximation of `u` in Frobenius norm plus the truncation
/// error `sigma_trunc = |X - u|_F` (root-sum-square of discarded singular
/// values).
pub fn truncate_svd(u: &CMatrix, r: usize) -> Result<(LowRankState, f64)> {
    let max_rank = u.nrows().min(u.ncols());
    if r < 1 || r > max_rank {
        return Err(FglError::InvalidParameter(format!(
            "truncation rank {r} out of range 1..={max_rank}"
        )));
    }
    let svd = u.clone().svd(true, true);
    let full_u = svd.u.expect("svd with u");
    let full_vt = svd.v_t.expect("svd with v_t");
    let sv = &svd.singular_values;
    let s = full_u.columns(0, r).into_owned();
    let v = full_vt.rows(0, r).into_owned().adjoint();
    let sigma = CMatrix::from_fn(r, r, |i, j| {
        if i == j {
            C64::new(sv[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let trunc = sv.iter().skip(r).map(|s| s * s).sum::<f64>().sqrt();
    Ok((LowRankState { s, sigma, v }, trunc))
}

/// The three components of the Eq.-style tangent projection
/// `P(X) W = S S* W - S S* W V V* + W V V*`, kept factored.
#[derive(Debug, Clone)]
pub struct TangentVector {
    s: CMatrix,
    v: CMatrix,
    /// `S* W`, r x (N_y - 1)
    sw: CMatrix,
    /// `W V`, (N_x - 1) x r
    wv: CMatrix,
    /// `S* W V`, r x r
    swv: CMatrix,
}

impl TangentVector {
    /// Dense reconstruction of the projected matrix.
    pub fn dense(&self) -> CMatrix {
        &self.s * &self.sw + (&self.wv - &self.s * &self.swv) * self.v.adjoint()
    }
}

/// Projects `w` onto the tangent space of the rank-r manifold at `x`.
pub fn tangent_project(x: &LowRankState, w: &CMatrix) -> Result<TangentVector> {
    if w.nrows() != x.s.nrows() || w.ncols() != x.v.nrows() {
        return Err(FglError::ShapeMismatch {
            expected: format!("{} x {}", x.s.nrows(), x.v.nrows()),
            actual: format!("{} x {}", w.nrows(), w.ncols()),
            context: "tangent_project",
        });
    }
    let sw = x.s.adjoint() * w;
    let wv = w * &x.v;
    let swv = &sw * &x.v;
    Ok(TangentVector { s: x.s.clone(), v: x.v.clone(), sw, wv, swv })
}

/// Entrywise nonlinear right-hand side on a dense block.
fn g_block(x: &CMatrix, kappa: f64, xi: f64, gamma: f64) -> CMatrix {
    x.map(|z| -C64::new(kappa, xi) * z.norm_sqr() * z + gamma * z)
}

/// Dense `G(u)`; used by diagnostics and oracles, not by the stepper.
pub fn g_dense(u: &CMatrix, params: &FglParams) -> CMatrix {
    g_block(u, params.kappa, params.xi, params.gamma)
}

/// Measurable tangent residual `|G(X) - P(X) G(X)|_F`, the epsilon
/// diagnostic of the model-reduction error.
pub fn tangent_residual(x: &LowRankState, params: &FglParams) -> f64 {
    let dense = x.reconstruct();
    let g = g_dense(&dense, params);
    let proj = tangent_project(x, &g).expect("shapes match by construction");
    (g - proj.dense()).norm()
}

/// Streamed evaluation of `G(A V*) V` over row panels of `A`.
fn g_action_v(a: &CMatrix, v: &CMatrix, params: &FglParams, panel: usize) -> CMatrix {
    let (kappa, xi, gamma) = (params.kappa, params.xi, params.gamma);
    let n = a.nrows();
    let r = v.ncols();
    let vh = v.adjoint();
    let chunks: Vec<(usize, CMatrix)> = (0..n)
        .step_by(panel.max(1))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let rows = panel.min(n - start);
            let ap = a.rows(start, rows);
            let xp = &ap * &vh;
            let gp = g_block(&xp, kappa, xi, gamma);
            (start, &gp * v)
        })
        .collect();
    let mut out = CMatrix::zeros(n, r);
    for (start, block) in chunks {
        out.rows_mut(start, block.nrows()).copy_from(&block);
    }
    out
}

/// Streamed evaluation of `G(S1 L*)* S1` over row panels of `S1`; the
/// L-step right-hand side.
fn g_adjoint_action_s(s1: &CMatrix, l: &CMatrix, params: &FglParams, panel: usize) -> CMatrix {
    let (kappa, xi, gamma) = (params.kappa, params.xi, params.gamma);
    let n = s1.nrows();
    let r = s1.ncols();
    let lh = l.adjoint();
    let z = (0..n)
        .step_by(panel.max(1))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let rows = panel.min(n - start);
            let sp = s1.rows(start, rows);
            let xp = &sp * &lh;
            let gp = g_block(&xp, kappa, xi, gamma);
            sp.adjoint() * gp
        })
        .reduce(|| CMatrix::zeros(r, l.nrows()), |acc, b| acc + b);
    z.adjoint()
}

fn rk4_matrix<F: Fn(&CMatrix) -> CMatrix>(y0: CMatrix, tau: f64, substeps: usize, f: F) -> CMatrix {
    let h = tau / substeps as f64;
    let mut y = y0;
    for _ in 0..substeps {
        let k1 = f(&y);
        let k2 = f(&(&y + &k1 * C64::new(0.5 * h, 0.0)));
        let k3 = f(&(&y + &k2 * C64::new(0.5 * h, 0.0)));
        let k4 = f(&(&y + &k3 * C64::new(h, 0.0)));
        y += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4)
            * C64::new(h / 6.0, 0.0);
    }
    y
}

/// One projector-splitting (KSL) step of size `tau` for the projected
/// nonlinear flow. The three substeps advance the factored
/// representation directly:
///
/// 1. K-step: `K = S Sigma` solves `K' = G(K V*) V`, refactor `K = S1 Sigma_hat`;
/// 2. S-step: `Sigma' = -S1* G(S1 Sigma V*) V` (the projected term runs
///    backward);
/// 3. L-step: `L = V Sigma*` solves `L' = G(S1 L*)* S1`, refactor and pull
///    `Sigma` back out of `L`.
///
/// Each substep ODE is integrated by `substeps` classical RK4 steps on its
/// own grid. `Sigma` is never inverted, which keeps the step well defined
/// for nearly rank-deficient states.
pub fn projector_split_nonlinear_step(
    x: &LowRankState,
    tau: f64,
    params: &FglParams,
    substeps: usize,
    panel: usize,
) -> Result<LowRankState> {
    if substeps < 1 {
        return Err(FglError::InvalidParameter("rk4_substeps must be >= 1".into()));
    }
    let v = x.v.clone();

    let k0 = &x.s * &x.sigma;
    let k1 = rk4_matrix(k0, tau, substeps, |k| g_action_v(k, &v, params, panel));
    let (s1, sigma_hat) = qr_pos(&k1);

    let sigma_tilde = rk4_matrix(sigma_hat, tau, substeps, |sig| {
        -(s1.adjoint() * g_action_v(&(&s1 * sig), &v, params, panel))
    });

    let l0 = &v * sigma_tilde.adjoint();
    let l1 = rk4_matrix(l0, tau, substeps, |l| g_adjoint_action_s(&s1, l, params, panel));
    let (v1, r_l) = qr_pos(&l1);

    let out = LowRankState { s: s1, sigma: r_l.adjoint(), v: v1 };
    if !out.is_finite() {
        return Err(FglError::NonFinite { step: 0, context: "projector_split_nonlinear_step" });
    }
    Ok(out)
}

/// Rank-preserving linear flow on the factored state:
/// `S <- e^{tau A_x} S`, `V <- e^{tau conj(A_y)} V` (valid because
/// `A_y^T = A_y`), followed by QR re-orthonormalization with the triangular
/// factors absorbed into `Sigma`.
///
/// `ayc` must be the backend for the conjugated y-operator.
pub fn lowrank_linear_flow(
    x: &LowRankState,
    ax: &ExpBackend,
    ayc: &ExpBackend,
) -> Result<LowRankState> {
    let s2 = ax.apply(&x.s)?;
    let v2 = ayc.apply(&x.v)?;
    let (qs, rs) = qr_pos(&s2);
    let (qv, rv) = qr_pos(&v2);
    let sigma = &rs * &x.sigma * rv.adjoint();
    Ok(LowRankState { s: qs, sigma, v: qv })
}

/// One-step low-rank Lie-Trotter stepper: the projector-splitting nonlinear
/// substep followed by the exact linear flow on the factors.
#[derive(Clone)]
pub struct LowRankStepper {
    /// Backend for `e^{tau A_x}`.
    pub ax: ExpBackend,
    /// Backend for `e^{tau conj(A_y)}`.
    pub ayc: ExpBackend,
    pub params: FglParams,
    pub tau: f64,
    pub rk4_substeps: usize,
    pub panel: usize,
}

impl LowRankStepper {
    pub fn new(
        params: &FglParams,
        grid: &Grid,
        backend: crate::flows::BackendChoice,
    ) -> Result<LowRankStepper> {
        let opx = build_operator(params, grid, Axis::X)?;
        let opy = build_operator(params, grid, Axis::Y)?;
        let tau = grid.tau;
        let (ax, ayc) = match backend {
            crate::flows::BackendChoice::Dense => (
                ExpBackend::dense(&opx, tau, false)?,
                ExpBackend::dense(&opy, tau, true)?,
            ),
            crate::flows::BackendChoice::Krylov => (
                ExpBackend::krylov(std::sync::Arc::new(opx), tau, false),
                ExpBackend::krylov(std::sync::Arc::new(opy), tau, true),
            ),
        };
        Ok(LowRankStepper {
            ax,
            ayc,
            params: params.clone(),
            tau,
            rk4_substeps: DEFAULT_RK4_SUBSTEPS,
            panel: DEFAULT_PANEL,
        })
    }

    pub fn with_rk4_substeps(mut self, substeps: usize) -> Self {
        self.rk4_substeps = substeps;
        self
    }
}

/// One low-rank Lie-Trotter step `Phi^L_tau(Phi-tilde^G_tau(x))`.
pub fn lowrank_step(x: &LowRankState, stepper: &LowRankStepper) -> Result<LowRankState> {
    let mid = projector_split_nonlinear_step(
        x,
        stepper.tau,
        &stepper.params,
        stepper.rk4_substeps,
        stepper.panel,
    )?;
    lowrank_linear_flow(&mid, &stepper.ax, &stepper.ayc)
}

/// Per-step diagnostics of a low-rank integration.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub singular_values: Vec<f64>,
    pub tangent_residual: Option<f64>,
    pub cond_sigma: f64,
}

/// What to record per step.
#[derive(Debug, Clone, Copy)]
pub struct DiagSpec {
    /// Also compute the (dense) tangent residual each step.
    pub tangent_residual: bool,
}

pub struct LowRankTrajectory {
    pub final_state: LowRankState,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Applies `m` low-rank Lie-Trotter steps, optionally recording per-step
/// diagnostics (singular values, tangent residual, cond(Sigma)).
pub fn integrate_lowrank(
    x0: &LowRankState,
    stepper: &LowRankStepper,
    m: usize,
    diag: Option<DiagSpec>,
) -> Result<LowRankTrajectory> {
    if m < 1 {
        return Err(FglError::InvalidParameter("step count m must be >= 1".into()));
    }
    let mut x = x0.clone();
    let mut diagnostics = Vec::new();
    for step in 1..=m {
        x = lowrank_step(&x, stepper).map_err(|e| match e {
            FglError::NonFinite { context, .. } => FglError::NonFinite { step, context },
            other => other,
        })?;
        if !x.is_finite() {
            return Err(FglError::NonFinite { step, context: "integrate_lowrank" });
        }
        if let Some(spec) = diag {
            diagnostics.push(StepDiagnostics {
                step,
                t: step as f64 * stepper.tau,
                singular_values: x.singular_values(),
                tangent_residual: spec
                    .tangent_residual
                    .then(|| tangent_residual(&x, &stepper.params)),
                cond_sigma: x.cond_sigma(),
            });
        }
    }
    Ok(LowRankTrajectory { final_state: x, diagnostics })
}

/// Writes the diagnostics stream as CSV rows
/// `step, t, sigma_1..sigma_r, tangent_residual, cond`.
pub fn diagnostics_csv(diags: &[StepDiagnostics]) -> String {
    let r = diags.first().map(|d| d.singular_values.len()).unwrap_or(0);
    let mut out = String::from("step,t");
    for k in 1..=r {
        out.push_str(&format!(",sigma{k}"));
    }
    out.push_str(",tangent_residual,cond\n");
    for d in diags {
        out.push_str(&format!("{},{:.12e}", d.step, d.t));
        for s in &d.singular_values {
            out.push_str(&format!(",{:.12e}", s));
        }
        match d.tangent_residual {
            Some(res) => out.push_str(&format!(",{:.12e}", res)),
            None => out.push(','),
        }
        out.push_str(&format!(",{:.12e}\n", d.cond_sigma));
    }
    out
}
