//! Spatial discretization: fractional centered difference coefficients,
//! the one-axis Riesz-derivative Toeplitz operators `A_x` and `A_y`, and
//! their fast application through a circulant FFT embedding.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{FglError, Result};
use crate::{C64, CMatrix};

/// Rectangular domain bounds `(x_L, x_R) x (y_L, y_R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_l: f64,
    pub x_r: f64,
    pub y_l: f64,
    pub y_r: f64,
}

/// Initial condition selector.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    /// `2 sech(x) sech(y) e^{3i(x+y)}` (separable, exactly rank one).
    Example1,
    /// `e^{-2(x^2+y^2)} e^{i S_0}`, `S_0 = 1/(e^{x+y} + e^{-(x+y)})`.
    Example2,
    /// Deterministic random field of exact rank `r` with singular values
    /// `2^{1-k}`, k = 1..r; seeded for reproducibility.
    RankR { rank: usize, seed: u64 },
    /// A caller-sampled interior grid of values.
    Custom(CMatrix),
}

/// Physical and model parameters of the fractional Ginzburg-Landau equation.
#[derive(Debug, Clone)]
pub struct FglParams {
    /// Diffusion coefficient, `nu > 0`.
    pub nu: f64,
    /// Dispersion coefficient.
    pub eta: f64,
    /// Nonlinear dissipation, `kappa >= 0` (`> 0` for the proper equation).
    pub kappa: f64,
    /// Nonlinear dispersion.
    pub xi: f64,
    /// Linear gain.
    pub gamma: f64,
    /// Fractional order in x, `1 < alpha < 2` (`alpha = 2` admitted for
    /// classical-limit consistency tests).
    pub alpha: f64,
    /// Fractional order in y, same admissible range as `alpha`.
    pub beta: f64,
    pub domain: Domain,
    /// Final time `T > 0`.
    pub t_final: f64,
    pub initial_condition: InitialCondition,
}

impl FglParams {
    /// Example 1 preset: `Omega = [-10,10]^2`, `nu=eta=kappa=xi=gamma=1`, `T=1`.
    pub fn example1(alpha: f64, beta: f64) -> Self {
        FglParams {
            nu: 1.0,
            eta: 1.0,
            kappa: 1.0,
            xi: 1.0,
            gamma: 1.0,
            alpha,
            beta,
            domain: Domain {
                x_l: -10.0,
                x_r: 10.0,
                y_l: -10.0,
                y_r: 10.0,
            },
            t_final: 1.0,
            initial_condition: InitialCondition::Example1,
        }
    }

    /// Example 2 preset: `Omega = [-8,8]^2`, `nu=kappa=1`, `eta=0.5`,
    /// `xi=-5`, `gamma=3`, `T=1`.
    pub fn example2(alpha: f64, beta: f64) -> Self {
        FglParams {
            nu: 1.0,
            eta: 0.5,
            kappa: 1.0,
            xi: -5.0,
            gamma: 3.0,
            alpha,
            beta,
            domain: Domain {
                x_l: -8.0,
                x_r: 8.0,
                y_l: -8.0,
                y_r: 8.0,
            },
            t_final: 1.0,
            initial_condition: InitialCondition::Example2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(FglError::InvalidParameter(format!("nu must be > 0, got {}", self.nu)));
        }
        if self.kappa < 0.0 {
            return Err(FglError::InvalidParameter(format!(
                "kappa must be >= 0, got {}",
                self.kappa
            )));
        }
        for (name, mu) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(mu > 1.0 && mu <= 2.0) {
                return Err(FglError::InvalidParameter(format!(
                    "{name} must lie in (1, 2], got {mu}"
                )));
            }
        }
        if !(self.domain.x_l < self.domain.x_r) || !(self.domain.y_l < self.domain.y_r) {
            return Err(FglError::InvalidParameter("domain bounds must be ordered".into()));
        }
        if !(self.t_final > 0.0) {
            return Err(FglError::InvalidParameter(format!(
                "t_final must be > 0, got {}",
                self.t_final
            )));
        }
        Ok(())
    }
}

/// Uniform space-time grid. The unknowns live on the interior nodes only;
/// homogeneous Dirichlet values on the boundary are never stored.
#[derive(Debug, Clone)]
pub struct Grid {
    pub n_x: usize,
    pub n_y: usize,
    pub m: usize,
    pub h_x: f64,
    pub h_y: f64,
    pub tau: f64,
    /// Interior x coordinates `x_1 .. x_{N_x-1}`.
    pub x: Vec<f64>,
    /// Interior y coordinates `y_1 .. y_{N_y-1}`.
    pub y: Vec<f64>,
}

impl Grid {
    pub fn new(params: &FglParams, n_x: usize, n_y: usize, m: usize) -> Result<Grid> {
        params.validate()?;
        if n_x < 4 || n_y < 4 {
            return Err(FglError::InvalidParameter(format!(
                "grid needs N_x, N_y >= 4, got ({n_x}, {n_y})"
            )));
        }
        if m < 1 {
            return Err(FglError::InvalidParameter("time-step count M must be >= 1".into()));
        }
        let d = &params.domain;
        let h_x = (d.x_r - d.x_l) / n_x as f64;
        let h_y = (d.y_r - d.y_l) / n_y as f64;
        let tau = params.t_final / m as f64;
        let x = (1..n_x).map(|i| d.x_l + i as f64 * h_x).collect();
        let y = (1..n_y).map(|j| d.y_l + j as f64 * h_y).collect();
        Ok(Grid { n_x, n_y, m, h_x, h_y, tau, x, y })
    }

    /// Square grid `N_x = N_y = N`, the experiment default.
    pub fn square(params: &FglParams, n: usize, m: usize) -> Result<Grid> {
        Grid::new(params, n, n, m)
    }
}

/// Fractional centered difference coefficients `g_0 .. g_K` of order `mu`
/// (the symmetric half; `g_{-k} = g_k`).
#[derive(Debug, Clone)]
pub struct FracStencil {
    pub mu: f64,
    pub coeffs: Vec<f64>,
}

/// Coefficients `g_k = (-1)^k Gamma(1+mu) / (Gamma(mu/2-k+1) Gamma(mu/2+k+1))`
/// computed by the ratio recurrence
/// `g_{k+1} = g_k (k - mu/2) / (k + 1 + mu/2)` seeded with
/// `g_0 = Gamma(1+mu) / Gamma(mu/2+1)^2`.
///
/// Direct Gamma evaluation overflows near k ~ 170; the recurrence is exact
/// in real arithmetic and stable for all k.
pub fn stencil_coeffs(mu: f64, count: usize) -> Result<FracStencil> {
    if !(mu > 1.0 && mu <= 2.0) {
        return Err(FglError::InvalidParameter(format!(
            "stencil order mu must lie in (1, 2], got {mu}"
        )));
    }
    if count < 1 {
        return Err(FglError::InvalidParameter("stencil count K must be >= 1".into()));
    }
    let g0 = statrs::function::gamma::gamma(1.0 + mu)
        / statrs::function::gamma::gamma(mu / 2.0 + 1.0).powi(2);
    let mut coeffs = Vec::with_capacity(count + 1);
    coeffs.push(g0);
    let mut g = g0;
    for k in 0..count {
        let k = k as f64;
        g *= (k - mu / 2.0) / (k + 1.0 + mu / 2.0);
        coeffs.push(g);
    }
    Ok(FracStencil { mu, coeffs })
}

impl FracStencil {
    /// Partial sum `g_0 + 2 sum_{k=1}^{K} g_k`; converges to the symbol at
    /// zero frequency, which vanishes.
    pub fn partial_sum(&self) -> f64 {
        self.coeffs[0] + 2.0 * self.coeffs[1..].iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Which side of the field the operator multiplies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `A * U`
    Left,
    /// `U * A`
    Right,
}

/// One-axis Riesz-derivative operator: a complex symmetric Toeplitz matrix
/// with first column `-(nu + i eta)/h^mu [g_0, .., g_{n-1}]`, applied fast
/// through a circulant embedding of length `fft_len >= 2n - 1`.
#[derive(Clone)]
pub struct FracOperator {
    pub axis: Axis,
    pub size: usize,
    pub first_column: Vec<C64>,
    pub fft_len: usize,
    /// Forward FFT of the circulant extension's first column.
    pub symbol: Vec<C64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FracOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FracOperator")
            .field("axis", &self.axis)
            .field("size", &self.size)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

/// Builds the Toeplitz operator for one axis of the grid.
pub fn build_operator(params: &FglParams, grid: &Grid, axis: Axis) -> Result<FracOperator> {
    params.validate()?;
    let (n_nodes, h, mu) = match axis {
        Axis::X => (grid.n_x, grid.h_x, params.alpha),
        Axis::Y => (grid.n_y, grid.h_y, params.beta),
    };
    let n = n_nodes - 1;
    let stencil = stencil_coeffs(mu, n - 1)?;
    let scale = C64::new(-params.nu, -params.eta) / h.powf(mu);
    let first_column: Vec<C64> = stencil.coeffs.iter().map(|&g| scale * g).collect();
    FracOperator::from_first_column(axis, first_column)
}

impl FracOperator {
    /// Builds the circulant FFT embedding from a symmetric-Toeplitz first
    /// column. The embedding length is the smallest power of two `>= 2n-1`;
    /// padding entries are zero, so the embedding is exact.
    pub fn from_first_column(axis: Axis, first_column: Vec<C64>) -> Result<FracOperator> {
        let n = first_column.len();
        if n < 2 {
            return Err(FglError::InvalidParameter("operator size must be >= 2".into()));
        }
        let fft_len = (2 * n - 1).next_power_of_two();
        let mut circ = vec![C64::new(0.0, 0.0); fft_len];
        circ[0] = first_column[0];
        for k in 1..n {
            circ[k] = first_column[k];
            circ[fft_len - k] = first_column[k];
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_len);
        let inv = planner.plan_fft_inverse(fft_len);
        let mut symbol = circ;
        fwd.process(&mut symbol);
        Ok(FracOperator {
            axis,
            size: n,
            first_column,
            fft_len,
            symbol,
            fwd,
            inv,
        })
    }

    /// Dense Toeplitz reconstruction (oracle and small-size fallback).
    pub fn to_dense(&self) -> CMatrix {
        let n = self.size;
        DMatrix::from_fn(n, n, |i, j| self.first_column[i.abs_diff(j)])
    }

    /// `A * v` for a single vector, via the circulant embedding.
    pub fn apply_vec(&self, v: &[C64], out: &mut [C64]) {
        debug_assert_eq!(v.len(), self.size);
        let mut buf = vec![C64::new(0.0, 0.0); self.fft_len];
        buf[..self.size].copy_from_slice(v);
        self.fwd.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.symbol) {
            *b *= s;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.fft_len as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b * scale;
        }
    }

    /// Applies the operator to a field: `A*U` (Left) or `U*A` (Right).
    /// Right-application uses the Toeplitz symmetry `A^T = A`:
    /// `U A = (A U^T)^T`.
    pub fn apply(&self, field: &CMatrix, side: Side) -> Result<CMatrix> {
        match side {
            Side::Left => {
                if field.nrows() != self.size {
                    return Err(FglError::ShapeMismatch {
                        expected: format!("{} rows", self.size),
                        actual: format!("{} rows", field.nrows()),
                        context: "apply_operator Left",
                    });
                }
                let mut out = CMatrix::zeros(field.nrows(), field.ncols());
                for j in 0..field.ncols() {
                    let col: Vec<C64> = field.column(j).iter().copied().collect();
                    let mut res = vec![C64::new(0.0, 0.0); self.size];
                    self.apply_vec(&col, &mut res);
                    for (i, v) in res.into_iter().enumerate() {
                        out[(i, j)] = v;
                    }
                }
                Ok(out)
            }
            Side::Right => {
                if field.ncols() != self.size {
                    return Err(FglError::ShapeMismatch {
                        expected: format!("{} cols", self.size),
                        actual: format!("{} cols", field.ncols()),
                        context: "apply_operator Right",
                    });
                }
                Ok(self.apply(&field.transpose(), Side::Left)?.transpose())
            }
        }
    }
}

/// Samples the configured initial condition on the interior nodes of `grid`.
pub fn initial_field(params: &FglParams, grid: &Grid) -> Result<CMatrix> {
    let nx = grid.x.len();
    let ny = grid.y.len();
    match &params.initial_condition {
        InitialCondition::Example1 => Ok(CMatrix::from_fn(nx, ny, |i, j| {
            let (x, y) = (grid.x[i], grid.y[j]);
            let amp = 2.0 / (x.cosh() * y.cosh());
            C64::from_polar(amp, 3.0 * (x + y))
        })),
        InitialCondition::Example2 => Ok(CMatrix::from_fn(nx, ny, |i, j| {
            let (x, y) = (grid.x[i], grid.y[j]);
            let amp = (-2.0 * (x * x + y * y)).exp();
            let s0 = 1.0 / ((x + y).exp() + (-(x + y)).exp());
            C64::from_polar(amp, s0)
        })),
        InitialCondition::RankR { rank, seed } => {
            let r = *rank;
            if r < 1 || r > nx.min(ny) {
                return Err(FglError::InvalidParameter(format!(
                    "RankR rank {r} out of range 1..={}",
                    nx.min(ny)
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut sample = |rows: usize| {
                CMatrix::from_fn(rows, r, |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    C64::new(re, im)
                })
            };
            let a = sample(nx);
            let b = sample(ny);
            let qa = a.qr().q();
            let qb = b.qr().q();
            let weights = DMatrix::from_fn(r, r, |i, j| {
                if i == j {
                    C64::new((2.0f64).powi(-(i as i32)), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            Ok(qa * weights * qb.adjoint())
        }
        InitialCondition::Custom(field) => {
            if field.nrows() != nx || field.ncols() != ny {
                return Err(FglError::ShapeMismatch {
                    expected: format!("{nx} x {ny}"),
                    actual: format!("{} x {}", field.nrows(), field.ncols()),
                    context: "Custom initial condition",
                });
            }
            Ok(field.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    fn gamma_oracle(mu: f64, k: usize) -> f64 {
        // Direct Gamma evaluation; valid only for small k.
        let k = k as f64;
        let sign = if (k as i64) % 2 == 0 { 1.0 } else { -1.0 };
        sign * gamma(1.0 + mu) / (gamma(mu / 2.0 - k + 1.0) * gamma(mu / 2.0 + k + 1.0))
    }

    #[test]
    fn classical_limit_mu_2() {
        let s = stencil_coeffs(2.0, 4).unwrap();
        let expect = [2.0, -1.0, 0.0, 0.0, 0.0];
        for (a, b) in s.coeffs.iter().zip(expect) {
            assert!((a - b).abs() <= 1e-12, "got {:?}", s.coeffs);
        }
    }

    #[test]
    fn mu_1_5_matches_gamma_oracle() {
        let s = stencil_coeffs(1.5, 6).unwrap();
        // Frozen values from the Gamma-function oracle.
        assert!((s.coeffs[0] - 1.573787465354795).abs() < 1e-12);
        assert!((s.coeffs[1] - (-0.674480342294912)).abs() < 1e-12);
        for k in 0..=6 {
            assert!(
                (s.coeffs[k] - gamma_oracle(1.5, k)).abs() < 1e-12,
                "k={k}: {} vs {}",
                s.coeffs[k],
                gamma_oracle(1.5, k)
            );
        }
    }

    #[test]
    fn sign_symmetry_and_sums() {
        for mu in [1.2, 1.5, 1.7, 1.9] {
            let s = stencil_coeffs(mu, 1000).unwrap();
            assert!(s.coeffs[0] > 0.0);
            for k in 1..=10 {
                assert!(s.coeffs[k] < 0.0, "mu={mu} k={k}");
            }
            // Partial sums nonnegative and nonincreasing in K.
            let mut prev = f64::INFINITY;
            for kmax in [10, 100, 1000] {
                let partial =
                    s.coeffs[0] + 2.0 * s.coeffs[1..=kmax].iter().sum::<f64>();
                assert!(partial >= 0.0, "mu={mu} K={kmax} sum={partial}");
                assert!(partial <= prev);
                prev = partial;
            }
        }
    }

    #[test]
    fn partial_sum_vanishes() {
        for mu in [1.2, 1.5, 1.7, 1.9] {
            let s = stencil_coeffs(mu, 5000).unwrap();
            let sum = s.partial_sum();
            assert!(sum >= 0.0 && sum < 1e-3, "mu={mu}: {sum}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(stencil_coeffs(1.0, 4).is_err());
        assert!(stencil_coeffs(2.1, 4).is_err());
        assert!(stencil_coeffs(1.5, 0).is_err());
    }

    fn test_params(alpha: f64, beta: f64) -> FglParams {
        FglParams {
            nu: 1.0,
            eta: 1.0,
            kappa: 1.0,
            xi: 1.0,
            gamma: 1.0,
            alpha,
            beta,
            domain: Domain { x_l: 0.0, x_r: 1.0, y_l: 0.0, y_r: 1.0 },
            t_final: 1.0,
            initial_condition: InitialCondition::Example1,
        }
    }

    #[test]
    fn laplacian_first_column() {
        // nu=1, eta=0, alpha=2, h=1 -> first column [-2, 1, 0, ..].
        let mut p = test_params(2.0, 2.0);
        p.eta = 0.0;
        p.domain = Domain { x_l: 0.0, x_r: 8.0, y_l: 0.0, y_r: 8.0 };
        let grid = Grid::square(&p, 8, 1).unwrap();
        let op = build_operator(&p, &grid, Axis::X).unwrap();
        assert_eq!(op.size, 7);
        assert!((op.first_column[0] - C64::new(-2.0, 0.0)).norm() < 1e-12);
        assert!((op.first_column[1] - C64::new(1.0, 0.0)).norm() < 1e-12);
        for k in 2..op.size {
            assert!(op.first_column[k].norm() < 1e-12);
        }
    }

    #[test]
    fn dense_reconstruction_matches_formula() {
        // nu=1, eta=1, alpha=1.5, h=0.1, N=8.
        let mut p = test_params(1.5, 1.5);
        p.domain = Domain { x_l: 0.0, x_r: 0.8, y_l: 0.0, y_r: 0.8 };
        let grid = Grid::square(&p, 8, 1).unwrap();
        let op = build_operator(&p, &grid, Axis::X).unwrap();
        let dense = op.to_dense();
        let scale = C64::new(-1.0, -1.0) * 10.0f64.powf(1.5);
        for i in 0..7usize {
            for j in 0..7usize {
                let g = gamma_oracle(1.5, i.abs_diff(j));
                assert!((dense[(i, j)] - scale * g).norm() < 1e-9 * scale.norm());
            }
        }
        // Symmetric Toeplitz, not Hermitian.
        assert!((dense.transpose() - &dense).norm() < 1e-14);
    }

    #[test]
    fn example1_operator_size() {
        let p = FglParams::example1(1.5, 1.5);
        let grid = Grid::square(&p, 512, 1).unwrap();
        let op = build_operator(&p, &grid, Axis::X).unwrap();
        assert_eq!(op.size, 511);
        let d = op.to_dense();
        assert_eq!(d[(0, 3)], d[(3, 0)]);
        assert_eq!(d[(1, 4)], d[(0, 3)]);
    }

    #[test]
    fn build_operator_is_deterministic() {
        let p = FglParams::example1(1.7, 1.3);
        let grid = Grid::square(&p, 32, 1).unwrap();
        let a = build_operator(&p, &grid, Axis::X).unwrap();
        let b = build_operator(&p, &grid, Axis::X).unwrap();
        for (x, y) in a.first_column.iter().zip(&b.first_column) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    fn random_field(n: usize, m: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, m, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        })
    }

    #[test]
    fn fft_apply_matches_dense() {
        let p = test_params(1.5, 1.3);
        let grid = Grid::square(&p, 16, 1).unwrap();
        let op = build_operator(&p, &grid, Axis::X).unwrap();
        let dense = op.to_dense();
        for seed in 0..5 {
            let u = random_field(15, 15, seed);
            let fast = op.apply(&u, Side::Left).unwrap();
            let slow = &dense * &u;
            assert!((&fast - &slow).norm() <= 1e-12 * slow.norm());
            let fast_r = op.apply(&u, Side::Right).unwrap();
            let slow_r = &u * &dense;
            assert!((&fast_r - &slow_r).norm() <= 1e-12 * slow_r.norm());
        }
    }

    #[test]
    fn apply_zero_field() {
        let p = test_params(1.5, 1.3);
        let grid = Grid::square(&p, 8, 1).unwrap();
        let op = build_operator(&p, &grid, Axis::Y).unwrap();
        let z = CMatrix::zeros(7, 7);
        let out = op.apply(&z, Side::Left).unwrap();
        assert!(out.norm() == 0.0 || out.norm() < 1e-300);
    }

    #[test]
    fn apply_shape_mismatch() {
        let p = test_params(1.5, 1.3);
        let grid = Grid::square(&p, 8, 1).unwrap();
        let op = build_operator(&p, &grid, Axis::X).unwrap();
        let u = CMatrix::zeros(5, 7);
        assert!(op.apply(&u, Side::Left).is_err());
    }

    #[test]
    fn rank_r_initial_field_has_exact_rank() {
        let mut p = test_params(1.5, 1.5);
        p.initial_condition = InitialCondition::RankR { rank: 3, seed: 7 };
        let grid = Grid::square(&p, 16, 1).unwrap();
        let u = initial_field(&p, &grid).unwrap();
        let sv = u.clone().svd(false, false).singular_values;
        let tol = 1e-12 * sv[0];
        let rank = sv.iter().filter(|&&s| s > tol).count();
        assert_eq!(rank, 3);
        // Deterministic across calls.
        let u2 = initial_field(&p, &grid).unwrap();
        assert_eq!((&u - &u2).norm(), 0.0);
    }

    #[test]
    fn example1_field_is_rank_one() {
        let p = FglParams::example1(1.5, 1.5);
        let grid = Grid::square(&p, 32, 1).unwrap();
        let u = initial_field(&p, &grid).unwrap();
        let sv = u.clone().svd(false, false).singular_values;
        assert!(sv[1] / sv[0] < 1e-12);
    }
}
