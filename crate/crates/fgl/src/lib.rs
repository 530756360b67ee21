//! Low-rank Lie-Trotter splitting solver for the 2D space-fractional
//! complex Ginzburg-Landau equation
//!
//! ```text
//! u_t - (nu + i eta)(d^alpha/dx^alpha + d^beta/dy^beta) u
//!     + (kappa + i xi)|u|^2 u - gamma u = 0
//! ```
//!
//! on a rectangle with homogeneous Dirichlet boundary conditions and Riesz
//! fractional derivatives of orders `alpha, beta in (1, 2)`.
//!
//! The pipeline: fractional centered differences turn the PDE into the
//! matrix ODE `U' = A_x U + U A_y + G(U)` with complex symmetric Toeplitz
//! `A_x`, `A_y` ([`fracgrid`]). One time step splits into the exact linear
//! flow `e^{tau A_x} U e^{tau A_y}` ([`matexp`]) and the entrywise nonlinear
//! flow ([`flows`]). The low-rank variant keeps the state factored as
//! `S Sigma V*` on the rank-r manifold and advances the nonlinear subflow
//! with the projector-splitting (KSL) integrator ([`lowrank`]).
//!
//! [`reference`] holds independent oracles (dense RK4 on the full ODE,
//! fine-step self-reference) and the relative-error / convergence-rate
//! metrics; [`harness`] drives convergence sweeps and diagnostics dumps
//! for the `fgl` CLI.

pub mod error;
pub mod flows;
pub mod fracgrid;
pub mod harness;
pub mod lowrank;
pub mod matexp;
pub mod reference;

pub use error::FglError;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;

/// Dense complex matrix; the full-rank solution field is one of these with
/// `(n_x - 1) x (n_y - 1)` interior unknowns.
pub type CMatrix = nalgebra::DMatrix<C64>;
