//! Full-rank subflows and their Lie-Trotter composition: the stiff linear
//! flow (delegated to [`crate::matexp`]) and the nonstiff nonlinear flow
//! `u' = -(kappa + i xi)|u|^2 u + gamma u`, which is diagonal in the entries
//! and admits a closed-form pointwise solution.

use crate::error::{FglError, Result};
use crate::fracgrid::{build_operator, Axis, FglParams, Grid};
use crate::matexp::{linear_flow, ExpBackend};
use crate::{C64, CMatrix};

/// How the nonlinear subflow is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinearMethod {
    /// Exact closed-form solution of the entrywise ODE (default).
    ClosedForm,
    /// Classical RK4 on the entrywise ODE; cross-check role.
    Rk4 { substeps: usize },
}

/// Exact solution of `u' = -(kappa + i xi)|u|^2 u + gamma u` at time `tau`.
///
/// With `rho = |u|^2`, the modulus obeys the logistic ODE
/// `rho' = 2 gamma rho - 2 kappa rho^2` and the phase drifts by
/// `-xi * integral_0^tau rho`. Both have closed forms; the amplitude and
/// phase factors below cover the `kappa = 0` and `gamma = 0` limits.
pub fn nonlinear_point_flow(u0: C64, kappa: f64, xi: f64, gamma: f64, tau: f64) -> Result<C64> {
    let rho0 = u0.norm_sqr();
    if rho0 == 0.0 {
        return Ok(u0);
    }
    let growth = (gamma * tau).exp();
    if kappa == 0.0 {
        let integral = if gamma != 0.0 {
            rho0 * ((2.0 * gamma * tau).exp() - 1.0) / (2.0 * gamma)
        } else {
            rho0 * tau
        };
        return Ok(u0 * C64::from_polar(growth, -xi * integral));
    }
    let denom = if gamma != 0.0 {
        1.0 + kappa * rho0 / gamma * ((2.0 * gamma * tau).exp() - 1.0)
    } else {
        1.0 + 2.0 * kappa * rho0 * tau
    };
    if denom <= 0.0 {
        return Err(FglError::NonlinearDegenerate { value: denom });
    }
    let integral = denom.ln() / (2.0 * kappa);
    Ok(u0 * C64::from_polar(growth / denom.sqrt(), -xi * integral))
}

fn g_point(u: C64, kappa: f64, xi: f64, gamma: f64) -> C64 {
    -C64::new(kappa, xi) * u.norm_sqr() * u + gamma * u
}

fn rk4_point_flow(u0: C64, kappa: f64, xi: f64, gamma: f64, tau: f64, substeps: usize) -> C64 {
    let h = tau / substeps as f64;
    let mut u = u0;
    for _ in 0..substeps {
        let k1 = g_point(u, kappa, xi, gamma);
        let k2 = g_point(u + 0.5 * h * k1, kappa, xi, gamma);
        let k3 = g_point(u + 0.5 * h * k2, kappa, xi, gamma);
        let k4 = g_point(u + h * k3, kappa, xi, gamma);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    u
}

/// Advances every entry of the field through the nonlinear subflow.
pub fn nonlinear_flow(
    u: &CMatrix,
    params: &FglParams,
    tau: f64,
    method: NonlinearMethod,
) -> Result<CMatrix> {
    if tau < 0.0 {
        return Err(FglError::InvalidParameter(format!("nonlinear flow needs tau >= 0, got {tau}")));
    }
    let (kappa, xi, gamma) = (params.kappa, params.xi, params.gamma);
    let out = match method {
        NonlinearMethod::ClosedForm => {
            let mut res = CMatrix::zeros(u.nrows(), u.ncols());
            for (o, &z) in res.iter_mut().zip(u.iter()) {
                *o = nonlinear_point_flow(z, kappa, xi, gamma, tau)?;
            }
            res
        }
        NonlinearMethod::Rk4 { substeps } => {
            if substeps < 1 {
                return Err(FglError::InvalidParameter("RK4 substeps must be >= 1".into()));
            }
            u.map(|z| rk4_point_flow(z, kappa, xi, gamma, tau, substeps))
        }
    };
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(FglError::NonFinite { step: 0, context: "nonlinear_flow" });
    }
    Ok(out)
}

/// Which exponential backend the steppers build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Dense,
    Krylov,
}

/// One-step full-rank Lie-Trotter stepper: nonlinear subflow first, then the
/// exact linear flow, both over the same `tau`.
#[derive(Clone)]
pub struct SplitStepper {
    pub ax: ExpBackend,
    pub ay: ExpBackend,
    pub params: FglParams,
    pub tau: f64,
    pub method: NonlinearMethod,
}

impl SplitStepper {
    pub fn new(
        params: &FglParams,
        grid: &Grid,
        method: NonlinearMethod,
        backend: BackendChoice,
    ) -> Result<SplitStepper> {
        let opx = build_operator(params, grid, Axis::X)?;
        let opy = build_operator(params, grid, Axis::Y)?;
        let tau = grid.tau;
        let (ax, ay) = match backend {
            BackendChoice::Dense => (
                ExpBackend::dense(&opx, tau, false)?,
                ExpBackend::dense(&opy, tau, false)?,
            ),
            BackendChoice::Krylov => (
                ExpBackend::krylov(std::sync::Arc::new(opx), tau, false),
                ExpBackend::krylov(std::sync::Arc::new(opy), tau, false),
            ),
        };
        Ok(SplitStepper { ax, ay, params: params.clone(), tau, method })
    }
}

/// One full-rank Lie-Trotter step `Phi^L_tau(Phi^G_tau(u))`.
pub fn lie_trotter_step(u: &CMatrix, stepper: &SplitStepper) -> Result<CMatrix> {
    let mid = nonlinear_flow(u, &stepper.params, stepper.tau, stepper.method)?;
    linear_flow(&mid, &stepper.ax, &stepper.ay)
}

/// Result of a full-rank integration.
pub struct Trajectory {
    pub final_field: CMatrix,
    /// `(step index, field)` pairs at the configured cadence.
    pub snapshots: Vec<(usize, CMatrix)>,
}

/// Applies `m` Lie-Trotter steps. `snapshot_every = Some(k)` stores every
/// k-th intermediate field; default none.
pub fn integrate_full(
    u0: &CMatrix,
    stepper: &SplitStepper,
    m: usize,
    snapshot_every: Option<usize>,
) -> Result<Trajectory> {
    if m < 1 {
        return Err(FglError::InvalidParameter("step count m must be >= 1".into()));
    }
    let mut u = u0.clone();
    let mut snapshots = Vec::new();
    for step in 1..=m {
        u = lie_trotter_step(&u, stepper).map_err(|e| match e {
            FglError::NonFinite { context, .. } => FglError::NonFinite { step, context },
            other => other,
        })?;
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FglError::NonFinite { step, context: "integrate_full" });
        }
        if let Some(k) = snapshot_every {
            if k > 0 && step % k == 0 {
                snapshots.push((step, u.clone()));
            }
        }
    }
    Ok(Trajectory { final_field: u, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracgrid::{initial_field, Domain, InitialCondition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_field(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, n, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(0.5 * re, 0.5 * im)
        })
    }

    #[test]
    fn linear_scalar_case() {
        // kappa = xi = 0: exact scalar exponential growth.
        let u0 = C64::new(0.3, -0.7);
        let got = nonlinear_point_flow(u0, 0.0, 0.0, 0.8, 0.5).unwrap();
        let want = u0 * (0.8f64 * 0.5).exp();
        assert!((got - want).norm() < 1e-15);
    }

    #[test]
    fn logistic_decay_value() {
        // u0 = 1, kappa = 1, xi = 0, gamma = 0, tau = 1: rho = 1/3.
        let got = nonlinear_point_flow(C64::new(1.0, 0.0), 1.0, 0.0, 0.0, 1.0).unwrap();
        assert!((got.norm() - 1.0 / 3.0f64.sqrt()).abs() < 1e-14);
        // Cross-check with RK4 at 1e4 substeps.
        let rk = rk4_point_flow(C64::new(1.0, 0.0), 1.0, 0.0, 0.0, 1.0, 10_000);
        assert!((got - rk).norm() < 1e-12);
    }

    #[test]
    fn closed_form_vs_rk4_example_params() {
        for params in [FglParams::example1(1.5, 1.5), FglParams::example2(1.5, 1.5)] {
            let u = random_field(12, 4);
            let cf = nonlinear_flow(&u, &params, 0.01, NonlinearMethod::ClosedForm).unwrap();
            let rk =
                nonlinear_flow(&u, &params, 0.01, NonlinearMethod::Rk4 { substeps: 1000 }).unwrap();
            let max_diff = cf
                .iter()
                .zip(rk.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            assert!(max_diff <= 1e-10, "max diff {max_diff}");
        }
    }

    #[test]
    fn semiflow_property() {
        let params = FglParams::example2(1.5, 1.5);
        let u = random_field(10, 8);
        let (t1, t2) = (0.013, 0.029);
        let two = nonlinear_flow(
            &nonlinear_flow(&u, &params, t1, NonlinearMethod::ClosedForm).unwrap(),
            &params,
            t2,
            NonlinearMethod::ClosedForm,
        )
        .unwrap();
        let one = nonlinear_flow(&u, &params, t1 + t2, NonlinearMethod::ClosedForm).unwrap();
        let max_diff = two
            .iter()
            .zip(one.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_diff <= 1e-10);
    }

    #[test]
    fn logistic_absorbing_bound() {
        // gamma > 0, kappa > 0: rho(tau) <= max(rho0, gamma/kappa).
        let params = FglParams::example2(1.5, 1.5); // gamma = 3, kappa = 1
        let u = random_field(16, 21).map(|z| z * 3.0);
        let out = nonlinear_flow(&u, &params, 0.4, NonlinearMethod::ClosedForm).unwrap();
        let bound_base = params.gamma / params.kappa;
        for (o, i) in out.iter().zip(u.iter()) {
            let bound = i.norm_sqr().max(bound_base);
            assert!(o.norm_sqr() <= bound * (1.0 + 1e-12));
        }
    }

    fn degenerate_params() -> FglParams {
        FglParams {
            nu: 1.0,
            eta: 1.0,
            kappa: 0.0,
            xi: 0.0,
            gamma: 0.0,
            alpha: 1.5,
            beta: 1.5,
            domain: Domain { x_l: -10.0, x_r: 10.0, y_l: -10.0, y_r: 10.0 },
            t_final: 0.5,
            initial_condition: InitialCondition::Example1,
        }
    }

    #[test]
    fn lie_trotter_reduces_to_linear_flow() {
        let params = degenerate_params();
        let grid = Grid::square(&params, 16, 8).unwrap();
        let stepper =
            SplitStepper::new(&params, &grid, NonlinearMethod::ClosedForm, BackendChoice::Dense)
                .unwrap();
        let u = initial_field(&params, &grid).unwrap();
        let step = lie_trotter_step(&u, &stepper).unwrap();
        let lin = linear_flow(&u, &stepper.ax, &stepper.ay).unwrap();
        assert!((step - &lin).norm() <= 1e-14 * lin.norm());
    }

    #[test]
    fn commuting_flows_exact() {
        // kappa = xi = 0, gamma != 0: scalar gain commutes with the linear
        // flow, so the splitting is exact: final = e^{gamma T} e^{T A_x} U0 e^{T A_y}.
        let mut params = degenerate_params();
        params.gamma = 1.0;
        let m = 8usize;
        let grid = Grid::square(&params, 16, m).unwrap();
        let stepper =
            SplitStepper::new(&params, &grid, NonlinearMethod::ClosedForm, BackendChoice::Dense)
                .unwrap();
        let u0 = initial_field(&params, &grid).unwrap();
        let traj = integrate_full(&u0, &stepper, m, None).unwrap();

        let t = params.t_final;
        let opx = build_operator(&params, &grid, Axis::X).unwrap();
        let opy = build_operator(&params, &grid, Axis::Y).unwrap();
        let ax = ExpBackend::dense(&opx, t, false).unwrap();
        let ay = ExpBackend::dense(&opy, t, false).unwrap();
        let exact = linear_flow(&u0, &ax, &ay).unwrap().map(|z| z * (params.gamma * t).exp());
        assert!((traj.final_field - &exact).norm() <= 1e-8 * exact.norm());
    }

    #[test]
    fn integrate_one_step_equals_single_step() {
        let params = FglParams::example1(1.5, 1.5);
        let grid = Grid::square(&params, 16, 4).unwrap();
        let stepper =
            SplitStepper::new(&params, &grid, NonlinearMethod::ClosedForm, BackendChoice::Dense)
                .unwrap();
        let u = initial_field(&params, &grid).unwrap();
        let a = integrate_full(&u, &stepper, 1, None).unwrap().final_field;
        let b = lie_trotter_step(&u, &stepper).unwrap();
        assert_eq!((a - b).norm(), 0.0);
    }

    #[test]
    fn snapshots_cadence() {
        let params = FglParams::example1(1.5, 1.5);
        let grid = Grid::square(&params, 16, 8).unwrap();
        let stepper =
            SplitStepper::new(&params, &grid, NonlinearMethod::ClosedForm, BackendChoice::Dense)
                .unwrap();
        let u = initial_field(&params, &grid).unwrap();
        let traj = integrate_full(&u, &stepper, 8, Some(2)).unwrap();
        let steps: Vec<usize> = traj.snapshots.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, vec![2, 4, 6, 8]);
    }

    #[test]
    fn negative_tau_rejected() {
        let params = FglParams::example1(1.5, 1.5);
        let u = CMatrix::zeros(4, 4);
        assert!(nonlinear_flow(&u, &params, -0.1, NonlinearMethod::ClosedForm).is_err());
    }
}
