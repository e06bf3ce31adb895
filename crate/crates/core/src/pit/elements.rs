use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::gauss::{
    labels, right_solve_spd, symmetrize, Cholesky, Definiteness, NoiseSource,
};
use crate::lgssm::{FilterResult, Lgssm};
use crate::scalar::Real;

/// Affine-Gaussian map `x ↦ g x + c + N(0, Λ)`.
///
/// `lambda = None` stands for a zero covariance (an element whose noise has
/// already been realised).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineGaussElement<R: Real> {
    pub g: DMatrix<R>,
    pub c: DVector<R>,
    pub lambda: Option<DMatrix<R>>,
}

impl<R: Real> AffineGaussElement<R> {
    pub fn identity(d: usize) -> Self {
        Self {
            g: DMatrix::identity(d, d),
            c: DVector::zeros(d),
            lambda: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `self ∘ inner`: apply `inner` first.
    /// `(G_a G_b, G_a c_b + c_a, G_a Λ_b G_aᵀ + Λ_a)`.
    pub fn compose(&self, inner: &Self) -> Self {
        let lambda = match (&self.lambda, &inner.lambda) {
            (None, None) => None,
            (Some(a), None) => Some(a.clone()),
            (outer, Some(b)) => {
                let pushed = &self.g * b * self.g.transpose();
                Some(symmetrize(&match outer {
                    Some(a) => pushed + a,
                    None => pushed,
                }))
            }
        };
        Self {
            g: &self.g * &inner.g,
            c: &self.g * &inner.c + &self.c,
            lambda,
        }
    }

    pub fn lambda_or_zero(&self) -> DMatrix<R> {
        self.lambda
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(self.dim(), self.dim()))
    }

    /// Deterministic part applied to `x`.
    pub fn apply(&self, x: &DVector<R>) -> DVector<R> {
        &self.g * x + &self.c
    }

    pub fn max_abs_diff(&self, other: &Self) -> R {
        let dl = (self.lambda_or_zero() - other.lambda_or_zero()).abs().max();
        (&self.g - &other.g)
            .abs()
            .max()
            .max((&self.c - &other.c).abs().max())
            .max(dl)
    }
}

/// One-step backward conditionals `x_t | x_{t+1}, y_{0:t}` for `t < T`.
pub fn build_backward_elements<R: Real>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
) -> Result<Vec<AffineGaussElement<R>>> {
    (0..model.horizon())
        .map(|t| backward_element(model, fr, t))
        .collect()
}

pub(crate) fn backward_element<R: Real>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    t: usize,
) -> Result<AffineGaussElement<R>> {
    let s = model.dynamics(t);
    let m = &fr.filtered[t].mean;
    let p = &fr.filtered[t].cov;
    let fp = &s.f * p;
    let pred_cov = symmetrize(&(&fp * s.f.transpose() + &s.q));
    let g = right_solve_spd(&fp.transpose(), &pred_cov)?;
    #[cfg(feature = "mutate-backward-gain")]
    let g = -g;
    let c = m - &g * (&s.f * m + &s.b);
    let lambda = symmetrize(&(p - &g * fp));
    Ok(AffineGaussElement {
        g,
        c,
        lambda: Some(lambda),
    })
}

/// Replaces each `Λ_t` by a draw `w_t ~ N(0, Λ_t)` added to `c_t`, using the
/// `(BACKWARD, t)` noise that sequential backward sampling consumes.
pub fn realize_noise<R: Real, N: NoiseSource<R> + ?Sized>(
    elements: &[AffineGaussElement<R>],
    noise: &N,
) -> Result<Vec<AffineGaussElement<R>>> {
    elements
        .iter()
        .enumerate()
        .map(|(t, e)| realize_one(e, t, noise))
        .collect()
}

pub(crate) fn realize_one<R: Real, N: NoiseSource<R> + ?Sized>(
    e: &AffineGaussElement<R>,
    t: usize,
    noise: &N,
) -> Result<AffineGaussElement<R>> {
    let Some(lambda) = &e.lambda else {
        return Ok(e.clone());
    };
    let chol = Cholesky::new(lambda, Definiteness::Semi)?;
    let xi = noise.normals(labels::BACKWARD, t as u64, e.dim());
    Ok(AffineGaussElement {
        g: e.g.clone(),
        c: &e.c + chol.l() * xi,
        lambda: None,
    })
}
