//! Multivariate Gaussian primitives.

mod linalg;
mod rng;

pub use linalg::{right_solve_spd, symmetrize, Cholesky, Definiteness};
pub use rng::{labels, Draws, Label, RngStream};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{ln_2pi, Real};

/// Source of standard normal vectors addressed by `(label, index)`.
///
/// Samplers consume all of their randomness through this trait, so the same
/// code path can run on random streams or on deterministic basis vectors.
pub trait NoiseSource<R: Real>: Sync {
    fn normals(&self, label: Label, index: u64, n: usize) -> DVector<R>;
}

impl<R: Real> NoiseSource<R> for RngStream {
    fn normals(&self, label: Label, index: u64, n: usize) -> DVector<R> {
        self.child(label, index).normals(n)
    }
}

/// Mean and (symmetric) covariance of a multivariate normal.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussParams<R: Real> {
    pub mean: DVector<R>,
    pub cov: DMatrix<R>,
}

impl<R: Real> GaussParams<R> {
    /// The covariance is symmetrised on construction.
    pub fn new(mean: DVector<R>, cov: DMatrix<R>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::dim(format!(
                "mean of length {d} with {}x{} covariance",
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
        })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `log N(x; mean, cov)`, including the `-(d/2) log 2π` constant.
pub fn logpdf<R: Real>(x: &DVector<R>, p: &GaussParams<R>) -> Result<R> {
    if x.len() != p.dim() {
        return Err(Error::dim(format!("point of length {} vs dimension {}", x.len(), p.dim())));
    }
    let chol = Cholesky::new(&p.cov, Definiteness::Strict)?;
    Ok(logpdf_factored(&(x - &p.mean), &chol))
}

/// Log density of a zero-mean Gaussian at `residual`, given a full-rank factor.
pub fn logpdf_factored<R: Real>(residual: &DVector<R>, chol: &Cholesky<R>) -> R {
    let d = R::of_usize(residual.len());
    -R::of(0.5) * (d * ln_2pi::<R>() + chol.log_det() + chol.quad_form(residual))
}

/// Log density of `N(x; mean, s·I)`.
pub fn logpdf_isotropic<R: Real>(x: &DVector<R>, mean: &DVector<R>, s: R) -> R {
    let d = R::of_usize(x.len());
    let sq = (x - mean).norm_squared();
    -R::of(0.5) * (d * (ln_2pi::<R>() + s.ln()) + sq / s)
}

/// `mean + L ξ` with `ξ` the first `d` normals of `rng`.
pub fn sample<R: Real>(p: &GaussParams<R>, rng: &RngStream) -> Result<DVector<R>> {
    let xi = rng.normals(p.dim());
    sample_with_noise(p, &xi)
}

/// `mean + L ξ` for a caller-supplied standard normal vector.
pub fn sample_with_noise<R: Real>(p: &GaussParams<R>, xi: &DVector<R>) -> Result<DVector<R>> {
    if xi.len() != p.dim() {
        return Err(Error::dim("noise length"));
    }
    let chol = Cholesky::new(&p.cov, Definiteness::Semi)?;
    Ok(&p.mean + chol.l() * xi)
}

/// Conditions the joint law of `(a, b)` (with `a` the leading `split`
/// coordinates) on `b = observed`.
pub fn condition<R: Real>(
    joint: &GaussParams<R>,
    split: usize,
    observed: &DVector<R>,
) -> Result<GaussParams<R>> {
    let d = joint.dim();
    if split > d || d - split != observed.len() {
        return Err(Error::dim(format!(
            "conditioning a {d}-dim Gaussian at split {split} on {} values",
            observed.len()
        )));
    }
    let nb = d - split;
    let mean_a = joint.mean.rows(0, split).into_owned();
    let mean_b = joint.mean.rows(split, nb).into_owned();
    let s_aa = joint.cov.view((0, 0), (split, split)).into_owned();
    let s_ab = joint.cov.view((0, split), (split, nb)).into_owned();
    let s_bb = joint.cov.view((split, split), (nb, nb)).into_owned();
    let chol = Cholesky::new(&s_bb, Definiteness::Strict)?;
    // Σ_bb⁻¹ Σ_ba
    let w = chol.solve_mat(&s_ab.transpose());
    let mean = mean_a + &s_ab * chol.solve(&(observed - mean_b));
    let cov = s_aa - &s_ab * w;
    GaussParams::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standard_normal_at_mode() {
        let p = GaussParams::<f64>::standard(1);
        let v = logpdf(&DVector::zeros(1), &p).unwrap();
        assert_relative_eq!(v, -0.918_938_533_204_672_7, epsilon = 1e-14);
        for d in 1..6 {
            let p = GaussParams::<f64>::standard(d);
            let v = logpdf(&DVector::zeros(d), &p).unwrap();
            assert_relative_eq!(v, -(d as f64) / 2.0 * std::f64::consts::TAU.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn scalar_logpdf_matches_direct_formula() {
        let p = GaussParams::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let v = logpdf(&DVector::from_element(1, 1.0), &p).unwrap();
        let direct = -0.5 * (std::f64::consts::TAU * 4.0).ln() - 1.0 / 8.0;
        assert_relative_eq!(v, direct, epsilon = 1e-14);
    }

    #[test]
    fn logpdf_dimension_mismatch() {
        let p = GaussParams::<f64>::standard(2);
        assert!(matches!(logpdf(&DVector::zeros(3), &p), Err(Error::Dimension(_))));
        assert!(GaussParams::new(DVector::<f64>::zeros(2), DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn logpdf_rejects_indefinite_covariance() {
        let p = GaussParams::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(matches!(logpdf(&DVector::zeros(2), &p), Err(Error::Factorization { .. })));
    }

    #[test]
    fn logpdf_integrates_to_one_on_grid() {
        let p = GaussParams::<f64>::standard(1);
        let h = 1e-3;
        let mut total = 0.0;
        let mut x = -8.0;
        while x <= 8.0 + 1e-12 {
            total += logpdf(&DVector::from_element(1, x), &p).unwrap().exp() * h;
            x += h;
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mean = DVector::from_vec(vec![1.5, -2.0]);
        let p = GaussParams::new(mean.clone(), DMatrix::zeros(2, 2)).unwrap();
        let x = sample(&p, &RngStream::new(5)).unwrap();
        assert_eq!(x, mean);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = GaussParams::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let s = RngStream::new(11).child(labels::AUX, 4);
        let a = sample(&p, &s).unwrap();
        let b = sample(&p, &s).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn sample_moments_within_standard_errors() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let p = GaussParams::new(mean.clone(), cov.clone()).unwrap();
        let root = RngStream::new(2024);
        let n = 100_000;
        let mut s1 = DVector::<f64>::zeros(2);
        let mut s2 = DMatrix::<f64>::zeros(2, 2);
        for i in 0..n {
            let x = sample(&p, &root.child(labels::SIMULATE, i)).unwrap() - &mean;
            s1 += &x;
            s2 += &x * x.transpose();
        }
        let nf = n as f64;
        let m = s1 / nf;
        let c = s2 / nf - &m * m.transpose();
        for i in 0..2 {
            assert!(m[i].abs() < 4.0 * (cov[(i, i)] / nf).sqrt());
            for j in 0..2 {
                // Var of x_i x_j for a Gaussian is Σ_ii Σ_jj + Σ_ij²
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / nf).sqrt();
                assert!((c[(i, j)] - cov[(i, j)]).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn independent_blocks_keep_marginal() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let joint = GaussParams::new(mean, cov).unwrap();
        let c = condition(&joint, 2, &DVector::from_element(1, 10.0)).unwrap();
        assert_eq!(c.mean.as_slice(), &[1.0, 2.0]);
        assert_eq!(c.cov, joint.cov.view((0, 0), (2, 2)).into_owned());
    }

    #[test]
    fn bivariate_textbook_conditioning() {
        let rho = 0.3;
        let joint = GaussParams::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])).unwrap();
        let c = condition(&joint, 1, &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(c.mean[0], rho, epsilon = 1e-14);
        assert_relative_eq!(c.cov[(0, 0)], 1.0 - rho * rho, epsilon = 1e-14);
    }

    /// Dense solve through nalgebra's LU as an independent route.
    fn condition_by_lu(joint: &GaussParams<f64>, split: usize, obs: &DVector<f64>) -> GaussParams<f64> {
        let d = joint.dim();
        let nb = d - split;
        let s_bb = joint.cov.view((split, split), (nb, nb)).into_owned();
        let s_ab = joint.cov.view((0, split), (split, nb)).into_owned();
        let inv = s_bb.lu().try_inverse().unwrap();
        let mean = joint.mean.rows(0, split) + &s_ab * &inv * (obs - joint.mean.rows(split, nb));
        let cov = joint.cov.view((0, 0), (split, split)) - &s_ab * inv * s_ab.transpose();
        GaussParams { mean, cov }
    }

    fn random_joint(d: usize, seed: u64) -> GaussParams<f64> {
        let s = RngStream::new(seed);
        let a = DMatrix::from_fn(d, d, |i, j| s.child(labels::SIMULATE, (i * d + j) as u64).normals::<f64>(1)[0]);
        let mean = s.child(labels::AUX, 0).normals(d);
        GaussParams::new(mean, &a * a.transpose() + DMatrix::identity(d, d) * 0.5).unwrap()
    }

    #[test]
    fn conditioning_matches_dense_solve() {
        for seed in 0..20 {
            let joint = random_joint(4, seed);
            let obs = RngStream::new(seed + 100).normals(2);
            let a = condition(&joint, 2, &obs).unwrap();
            let b = condition_by_lu(&joint, 2, &obs);
            assert!((a.mean - b.mean).abs().max() < 1e-10);
            assert!((a.cov - b.cov).abs().max() < 1e-10);
        }
    }

    #[test]
    fn sequential_conditioning_equals_joint() {
        for seed in 0..20 {
            let joint = random_joint(5, seed);
            let obs = RngStream::new(seed + 7).normals::<f64>(3);
            let once = condition(&joint, 2, &obs).unwrap();
            // condition on the last coordinate first, then the middle two
            let step = condition(&joint, 4, &obs.rows(2, 1).into_owned()).unwrap();
            let twice = condition(&step, 2, &obs.rows(0, 2).into_owned()).unwrap();
            assert!((once.mean - twice.mean).abs().max() < 1e-10);
            assert!((once.cov - twice.cov).abs().max() < 1e-10);
        }
    }

    #[test]
    fn single_precision_logpdf() {
        let p = GaussParams::<f32>::standard(2);
        let v = logpdf(&DVector::zeros(2), &p).unwrap();
        assert!((v + std::f32::consts::TAU.ln()).abs() < 1e-6);
    }
}
