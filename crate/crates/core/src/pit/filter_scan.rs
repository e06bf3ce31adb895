//! Associative-scan Kalman filter.
//!
//! Element `t` describes `p(x_t | x_{t-1}, y_t) = N(A x_{t-1} + b, C)` together
//! with the likelihood of `y_t` as an information-form function of `x_{t-1}`,
//! `exp(-½ xᵀ J x + ηᵀ x)`.

use nalgebra::{DMatrix, DVector};

use super::scan::{inclusive_scan, ScanStats};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gauss::{logpdf_factored, symmetrize, Cholesky, Definiteness, GaussParams};
use crate::lgssm::{FilterResult, Lgssm};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterScanElement<R: Real> {
    pub a: DMatrix<R>,
    pub b: DVector<R>,
    pub c: DMatrix<R>,
    pub eta: DVector<R>,
    pub j: DMatrix<R>,
}

impl<R: Real> FilterScanElement<R> {
    /// `self ⊗ later`: `self` covers earlier time steps.
    pub fn combine(&self, later: &Self) -> Result<Self> {
        let d = self.b.len();
        let id = DMatrix::<R>::identity(d, d);
        // (I + C_i J_j)⁻¹ and (I + J_j C_i)⁻¹ = ((I + C_i J_j)⁻¹)ᵀ for symmetric C, J
        let lu = (&id + &self.c * &later.j).lu();
        let m = lu
            .try_inverse()
            .ok_or_else(|| Error::factorization("filter scan element combination"))?;
        let am = &later.a * &m;
        let mt = m.transpose();
        Ok(Self {
            a: &am * &self.a,
            b: &am * (&self.b + &self.c * &later.eta) + &later.b,
            c: symmetrize(&(&am * &self.c * later.a.transpose() + &later.c)),
            eta: self.a.transpose() * &mt * (&later.eta - &later.j * &self.b) + &self.eta,
            j: symmetrize(&(self.a.transpose() * &mt * &later.j * &self.a + &self.j)),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> R {
        [
            (&self.a - &other.a).abs().max(),
            (&self.b - &other.b).abs().max(),
            (&self.c - &other.c).abs().max(),
            (&self.eta - &other.eta).abs().max(),
            (&self.j - &other.j).abs().max(),
        ]
        .into_iter()
        .fold(R::zero(), |m, v| m.max(v))
    }
}

/// Builds the scan element of time step `t`.
pub fn filter_element<R: Real>(
    model: &Lgssm<R>,
    obs: &[DVector<R>],
    t: usize,
) -> Result<FilterScanElement<R>> {
    let d = model.state_dim();
    let id = DMatrix::<R>::identity(d, d);
    // x_t = f x_{t-1} + u + N(0, q); the first step has no predecessor
    let (f, u, q) = if t == 0 {
        (DMatrix::zeros(d, d), model.m0.clone(), model.p0.clone())
    } else {
        let s = model.dynamics(t - 1);
        (s.f.clone(), s.b.clone(), s.q.clone())
    };
    if !model.is_observed(t) {
        return Ok(FilterScanElement {
            a: f,
            b: u,
            c: q,
            eta: DVector::zeros(d),
            j: DMatrix::zeros(d, d),
        });
    }
    let o = model.observation(t);
    let s = symmetrize(&(&o.h * &q * o.h.transpose() + &o.r));
    let chol = Cholesky::new(&s, Definiteness::Strict)?;
    let resid = &obs[t] - &o.h * &u - &o.c;
    // K = Q Hᵀ S⁻¹
    let k = chol.solve_mat(&(&o.h * &q)).transpose();
    let i_kh = &id - &k * &o.h;
    let hf = &o.h * &f;
    let s_inv_hf = chol.solve_mat(&hf);
    Ok(FilterScanElement {
        a: &i_kh * &f,
        b: &u + &k * &resid,
        c: symmetrize(&(&i_kh * &q * i_kh.transpose() + &k * &o.r * k.transpose())),
        eta: hf.transpose() * chol.solve(&resid),
        j: symmetrize(&(hf.transpose() * s_inv_hf)),
    })
}

/// Kalman filter by parallel prefix scan. Agrees with
/// [`crate::lgssm::kalman_filter`] up to rounding.
pub fn parallel_filter<R: Real>(
    model: &Lgssm<R>,
    obs: &[DVector<R>],
    exec: &Exec,
) -> Result<FilterResult<R>> {
    parallel_filter_instrumented(model, obs, exec).map(|(fr, _)| fr)
}

pub fn parallel_filter_instrumented<R: Real>(
    model: &Lgssm<R>,
    obs: &[DVector<R>],
    exec: &Exec,
) -> Result<(FilterResult<R>, ScanStats)> {
    let t_max = model.horizon();
    if obs.len() != t_max + 1 {
        return Err(Error::dim("observation count"));
    }
    for t in 0..=t_max {
        if model.is_observed(t) && obs[t].len() != model.observation(t).dim() {
            return Err(Error::dim(format!("observation {t} length")));
        }
    }
    let elements: Vec<Result<FilterScanElement<R>>> =
        exec.install(|| exec.map(t_max + 1, |t| filter_element(model, obs, t)));
    let elements = elements.into_iter().collect::<Result<Vec<_>>>()?;
    // errors inside the combine are carried through the scan
    let wrapped: Vec<Result<FilterScanElement<R>>> = elements.into_iter().map(Ok).collect();
    let (prefix, stats) = inclusive_scan(
        wrapped,
        |a, b| match (a, b) {
            (Ok(a), Ok(b)) => a.combine(b),
            (Err(e), _) | (_, Err(e)) => Err(Error::factorization(e.to_string())),
        },
        exec,
    );
    let filtered = prefix
        .into_iter()
        .map(|e| e.map(|e| GaussParams { mean: e.b, cov: e.c }))
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<GaussParams<R>> = exec.install(|| {
        exec.map(t_max + 1, |t| {
            if t == 0 {
                model.prior()
            } else {
                let s = model.dynamics(t - 1);
                let prev = &filtered[t - 1];
                GaussParams {
                    mean: &s.f * &prev.mean + &s.b,
                    cov: symmetrize(&(&s.f * &prev.cov * s.f.transpose() + &s.q)),
                }
            }
        })
    });
    let terms: Vec<Result<R>> = exec.install(|| {
        exec.map(t_max + 1, |t| {
            if !model.is_observed(t) {
                return Ok(R::zero());
            }
            let o = model.observation(t);
            let p = &predicted[t];
            let s = symmetrize(&(&o.h * &p.cov * o.h.transpose() + &o.r));
            let chol = Cholesky::new(&s, Definiteness::Strict)?;
            Ok(logpdf_factored(&(&obs[t] - &o.h * &p.mean - &o.c), &chol))
        })
    });
    let mut log_marginal = R::zero();
    for term in terms {
        log_marginal += term?;
    }
    Ok((
        FilterResult {
            predicted,
            filtered,
            log_marginal,
        },
        stats,
    ))
}
