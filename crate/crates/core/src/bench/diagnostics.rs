use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Minimum chain length accepted by [`ess`].
pub const MIN_ESS_LEN: usize = 100;

/// Normalised autocorrelations `ρ_0..ρ_{n-1}` (biased estimator, via FFT).
pub fn autocorrelation(chain: &[f64]) -> Result<Vec<f64>> {
    let n = chain.len();
    let mean = chain.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = chain
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 1e-300 * n as f64) || !c0.is_finite() {
        return Err(Error::Ess("chain is constant".into()));
    }
    Ok(buf[..n].iter().map(|c| c.re / c0).collect())
}

/// Effective sample size with Geyer's initial positive sequence estimator,
/// clamped to `(0, n]`.
pub fn ess(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < MIN_ESS_LEN {
        return Err(Error::Ess(format!("chain of length {n} is shorter than {MIN_ESS_LEN}")));
    }
    if chain.iter().any(|x| !x.is_finite()) {
        return Err(Error::Ess("chain has non-finite values".into()));
    }
    let rho = autocorrelation(chain)?;
    let mut sum = 0.0;
    for pair in rho.chunks_exact(2) {
        let gamma = pair[0] + pair[1];
        if gamma <= 0.0 {
            break;
        }
        sum += gamma;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ok((n as f64 / tau).min(n as f64))
}

/// Monte Carlo standard error of the chain mean, `sd / sqrt(ESS)`.
pub fn mcse(chain: &[f64]) -> Result<f64> {
    let n = chain.len() as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let var = chain.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var / ess(chain)?).sqrt())
}

/// Running mean and variance (Welford).
#[derive(Clone, Debug, Default)]
pub struct RunningMoments {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: impl IntoIterator<Item = f64>) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<&[f64]> {
        (self.n > 0).then_some(self.mean.as_slice())
    }

    /// Sample standard deviation (`n - 1` denominator).
    pub fn sd(&self) -> Option<Vec<f64>> {
        (self.n > 1).then(|| self.m2.iter().map(|s| (s / (self.n - 1) as f64).sqrt()).collect())
    }
}
