//! Matrix exponential actions for the fractional operators: a dense
//! scaling-and-squaring backend (small sizes, oracle role) and an Arnoldi
//! Krylov backend that only needs the FFT matvec, plus the two-sided
//! linear flow `e^{tau A_x} U e^{tau A_y}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{FglError, Result};
use crate::fracgrid::FracOperator;
use crate::{C64, CMatrix};

/// Sizes above this are refused by the dense backend.
pub const DENSE_LIMIT: usize = 1024;

/// Default Krylov parameters.
pub const KRYLOV_M_MAX: usize = 60;
pub const KRYLOV_TOL: f64 = 1e-10;

/// Parallel gemm over output columns. nalgebra's generic complex matmul is
/// sequential; the dense exponential application dominates reference runs,
/// so this one is threaded.
pub fn par_matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, k) = a.shape();
    let (kb, m) = b.shape();
    assert_eq!(k, kb, "par_matmul inner dimensions");
    let mut c = CMatrix::zeros(n, m);
    let a_slice = a.as_slice();
    c.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, cj)| {
            for kk in 0..k {
                let coef = b[(kk, j)];
                if coef.re == 0.0 && coef.im == 0.0 {
                    continue;
                }
                let acol = &a_slice[kk * n..(kk + 1) * n];
                for (ci, &ai) in cj.iter_mut().zip(acol) {
                    *ci += coef * ai;
                }
            }
        });
    c
}

fn one_norm(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by Pade(13) scaling and squaring.
pub fn expm(a: &CMatrix) -> CMatrix {
    assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    const THETA13: f64 = 5.371920351148152;
    #[rustfmt::skip]
    const B: [f64; 14] = [
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ];
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.map(|z| z / 2.0f64.powi(s));
    let id = CMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let sc = |m: &CMatrix, b: f64| m.map(|z| z * b);
    let u_inner = &a6 * (sc(&a6, B[13]) + sc(&a4, B[11]) + sc(&a2, B[9]))
        + sc(&a6, B[7])
        + sc(&a4, B[5])
        + sc(&a2, B[3])
        + sc(&id, B[1]);
    let u = &a * u_inner;
    let v = &a6 * (sc(&a6, B[12]) + sc(&a4, B[10]) + sc(&a2, B[8]))
        + sc(&a6, B[6])
        + sc(&a4, B[4])
        + sc(&a2, B[2])
        + sc(&id, B[0]);
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut f = lhs
        .lu()
        .solve(&rhs)
        .expect("Pade denominator is nonsingular for scaled input");
    for _ in 0..s {
        f = par_matmul(&f, &f);
    }
    f
}

/// `e^{tau A}` of a fractional operator as a dense matrix.
///
/// Refuses sizes above [`DENSE_LIMIT`]. Used as the oracle backend and for
/// the precomputed dense flow at experiment scales.
pub fn dense_expm(op: &FracOperator, tau: f64) -> Result<CMatrix> {
    if op.size > DENSE_LIMIT {
        return Err(FglError::Capability(format!(
            "dense exponential limited to size {DENSE_LIMIT}, operator has size {}",
            op.size
        )));
    }
    let a = op.to_dense().map(|z| z * tau);
    Ok(expm(&a))
}

/// Backend for applying `e^{tau A}` (or `e^{tau conj(A)}`) to skinny blocks
/// and full fields.
#[derive(Clone)]
pub enum ExpBackend {
    /// Precomputed dense exponential, applied by gemm.
    Dense { exp: Arc<CMatrix> },
    /// Per-column Arnoldi approximation of the exponential action.
    Krylov {
        op: Arc<FracOperator>,
        tau: f64,
        /// Apply the exponential of the entrywise conjugate operator.
        /// `conj(A)` shares the Toeplitz structure, so no second operator
        /// is built: `e^{tau conj(A)} v = conj(e^{tau A} conj(v))`.
        conj: bool,
        m_max: usize,
        tol: f64,
    },
}

impl ExpBackend {
    /// Dense backend for `e^{tau A}`; `conj` selects the conjugated operator.
    pub fn dense(op: &FracOperator, tau: f64, conj: bool) -> Result<ExpBackend> {
        let mut exp = dense_expm(op, tau)?;
        if conj {
            exp = exp.map(|z| z.conj());
        }
        Ok(ExpBackend::Dense { exp: Arc::new(exp) })
    }

    pub fn krylov(op: Arc<FracOperator>, tau: f64, conj: bool) -> ExpBackend {
        ExpBackend::Krylov { op, tau, conj, m_max: KRYLOV_M_MAX, tol: KRYLOV_TOL }
    }

    pub fn size(&self) -> usize {
        match self {
            ExpBackend::Dense { exp } => exp.nrows(),
            ExpBackend::Krylov { op, .. } => op.size,
        }
    }

    /// Applies the exponential to each column of `block`.
    pub fn apply(&self, block: &CMatrix) -> Result<CMatrix> {
        if block.nrows() != self.size() {
            return Err(FglError::ShapeMismatch {
                expected: format!("{} rows", self.size()),
                actual: format!("{} rows", block.nrows()),
                context: "expm_action",
            });
        }
        match self {
            ExpBackend::Dense { exp } => Ok(par_matmul(exp, block)),
            ExpBackend::Krylov { op, tau, conj, m_max, tol } => {
                let n = op.size;
                let cols: Vec<Vec<C64>> = (0..block.ncols())
                    .into_par_iter()
                    .map(|j| {
                        let mut v: Vec<C64> = block.column(j).iter().copied().collect();
                        if *conj {
                            for z in v.iter_mut() {
                                *z = z.conj();
                            }
                        }
                        let mut out = krylov_expv(op, *tau, &v, *m_max, *tol)?;
                        if *conj {
                            for z in out.iter_mut() {
                                *z = z.conj();
                            }
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?;
                let mut out = CMatrix::zeros(n, block.ncols());
                for (j, col) in cols.iter().enumerate() {
                    for (i, &z) in col.iter().enumerate() {
                        out[(i, j)] = z;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Arnoldi approximation of `e^{tau A} v` with modified Gram-Schmidt and one
/// reorthogonalization pass. Converged when the standard a posteriori
/// estimate `|h_{m+1,m}| |[e^{tau H_m}]_{m,1}|` drops below `tol` (relative
/// to `|v|`), or on happy breakdown.
fn krylov_expv(op: &FracOperator, tau: f64, v: &[C64], m_max: usize, tol: f64) -> Result<Vec<C64>> {
    let n = v.len();
    let beta = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if beta == 0.0 {
        return Ok(vec![C64::new(0.0, 0.0); n]);
    }
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m_max + 1);
    basis.push(v.iter().map(|z| z / beta).collect());
    let mut h = DMatrix::<C64>::zeros(m_max + 1, m_max);
    let mut w = vec![C64::new(0.0, 0.0); n];
    for j in 0..m_max {
        op.apply_vec(&basis[j], &mut w);
        for _pass in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let hij: C64 = q.iter().zip(&w).map(|(qi, wi)| qi.conj() * wi).sum();
                h[(i, j)] += hij;
                for (wk, qk) in w.iter_mut().zip(q) {
                    *wk -= hij * qk;
                }
            }
        }
        let hnext = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        h[(j + 1, j)] = C64::new(hnext, 0.0);
        let m = j + 1;
        let hm = h.view((0, 0), (m, m)).map(|z| z * tau);
        let f = expm(&hm.into_owned());
        let err_est = hnext * f[(m - 1, 0)].norm();
        let breakdown = hnext <= 1e-14 * one_norm(&h.view((0, 0), (m, m)).into_owned()).max(1.0);
        if err_est <= tol || breakdown || m == m_max {
            if err_est > tol && !breakdown && m == m_max {
                return Err(FglError::KrylovNoConvergence { m_max, residual: err_est, tol });
            }
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (i, q) in basis.iter().take(m).enumerate() {
                let coef = beta * f[(i, 0)];
                for (o, qk) in out.iter_mut().zip(q) {
                    *o += coef * qk;
                }
            }
            return Ok(out);
        }
        basis.push(w.iter().map(|z| z / hnext).collect());
    }
    unreachable!("loop exits via convergence, breakdown, or error")
}

/// The stiff linear flow `e^{tau A_x} U e^{tau A_y}`.
///
/// The right factor is computed as `(e^{tau A_y} U^T)^T`, valid because the
/// operators are complex symmetric (`A^T = A` implies `(e^{tau A})^T = e^{tau A}`).
/// Pass plain (non-conjugated) backends for both axes.
pub fn linear_flow(u: &CMatrix, ax: &ExpBackend, ay: &ExpBackend) -> Result<CMatrix> {
    let left = ax.apply(u)?;
    Ok(ay.apply(&left.transpose())?.transpose())
}
