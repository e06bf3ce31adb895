//! Cholesky factorisation with the jitter policy used across the crate.
//!
//! Factorisation is first attempted on the matrix as given. Zero pivots are
//! accepted (the factor is then rank deficient and solves act on the range of
//! the matrix); a negative pivot triggers a retry with `ε·tr(A)/d` added to the
//! diagonal, `ε = 1e-10` then `ε = 1e-8`, after which factorisation fails.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

const JITTERS: [f64; 3] = [0.0, 1e-10, 1e-8];

/// Lower-triangular factor `L` with `L Lᵀ ≈ A`.
#[derive(Clone, Debug)]
pub struct Cholesky<R: Real> {
    l: DMatrix<R>,
    /// Columns whose pivot vanished.
    null: Vec<bool>,
}

/// Whether rank-deficient (PSD) input is accepted without jitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Definiteness {
    /// Semi-definite input is factorised exactly; zero pivots are kept.
    Semi,
    /// A rank-deficient factor triggers the jitter retries.
    Strict,
}

impl<R: Real> Cholesky<R> {
    pub fn new(a: &DMatrix<R>, mode: Definiteness) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("cholesky of {}x{} matrix", n, a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::factorization("non-finite entries"));
        }
        if n == 0 {
            return Ok(Self {
                l: DMatrix::zeros(0, 0),
                null: Vec::new(),
            });
        }
        let sym = symmetrize(a);
        let trace = sym.trace().max(R::zero());
        for (attempt, eps) in JITTERS.iter().enumerate() {
            let mut m = sym.clone();
            if attempt > 0 {
                let shift = R::of(*eps) * trace / R::of_usize(n);
                for i in 0..n {
                    m[(i, i)] += shift;
                }
            }
            if let Some(f) = factor(&m) {
                if mode == Definiteness::Strict && f.null.iter().any(|&z| z) {
                    continue;
                }
                return Ok(f);
            }
        }
        Err(Error::factorization(format!(
            "{n}x{n} matrix, trace {}",
            trace.as_f64()
        )))
    }

    pub fn l(&self) -> &DMatrix<R> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn is_full_rank(&self) -> bool {
        !self.null.iter().any(|&z| z)
    }

    /// `log det A`; `-∞` when rank deficient.
    pub fn log_det(&self) -> R {
        if !self.is_full_rank() {
            return R::of(f64::NEG_INFINITY);
        }
        (0..self.dim()).fold(R::zero(), |acc, i| acc + self.l[(i, i)].ln()) * R::of(2.0)
    }

    /// Solves `L y = b`, setting components on null pivots to zero.
    pub fn solve_lower(&self, b: &DVector<R>) -> DVector<R> {
        let n = self.dim();
        let mut y = b.clone();
        for i in 0..n {
            if self.null[i] {
                y[i] = R::zero();
                continue;
            }
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &DVector<R>) -> DVector<R> {
        let n = self.dim();
        let mut x = y.clone();
        for i in (0..n).rev() {
            if self.null[i] {
                x[i] = R::zero();
                continue;
            }
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// `A⁻¹ b` (a generalised inverse when rank deficient).
    pub fn solve(&self, b: &DVector<R>) -> DVector<R> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `A⁻¹ B` column by column.
    pub fn solve_mat(&self, b: &DMatrix<R>) -> DMatrix<R> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }

    /// Squared Mahalanobis norm `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &DVector<R>) -> R {
        self.solve_lower(b).norm_squared()
    }
}

fn factor<R: Real>(a: &DMatrix<R>) -> Option<Cholesky<R>> {
    let n = a.nrows();
    let max_diag = (0..n).fold(R::zero(), |m, i| m.max(a[(i, i)].abs()));
    let tol = R::of(16.0) * R::of_usize(n) * R::eps() * max_diag;
    let mut l = DMatrix::<R>::zeros(n, n);
    let mut null = vec![false; n];
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot > tol {
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        } else if pivot >= -tol {
            // zero pivot: the remaining column must vanish as well
            let col_tol = tol.sqrt() * max_diag.sqrt() + tol;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > col_tol {
                    return None;
                }
            }
            null[j] = true;
        } else {
            return None;
        }
    }
    Some(Cholesky { l, null })
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize<R: Real>(a: &DMatrix<R>) -> DMatrix<R> {
    (a + a.transpose()) * R::of(0.5)
}

/// `A B⁻¹` for symmetric PSD `B`, via a solve rather than an inverse.
pub fn right_solve_spd<R: Real>(a: &DMatrix<R>, b: &DMatrix<R>) -> Result<DMatrix<R>> {
    let chol = Cholesky::new(b, Definiteness::Semi)?;
    Ok(chol.solve_mat(&a.transpose()).transpose())
}
