use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::auxk::{Dynamics, FnPotential, GenSsmTarget};
use crate::exec::Exec;
use crate::gauss::{labels, GaussParams, RngStream};
use crate::lgssm::{kalman_filter, random_model, rts_smoother, DynamicsStep, Lgssm, RandomModelSpec, Steps, Trajectory};

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn small_lgssm(seed: u64, t_max: usize) -> (Lgssm<f64>, Vec<DVector<f64>>) {
    let rng = RngStream::new(seed);
    let spec = RandomModelSpec {
        horizon: t_max,
        state_dim: 1,
        obs_dim: 1,
        time_varying: false,
        observed_fraction: 1.0,
    };
    let model = random_model(&spec, &rng).unwrap();
    let (_, obs) = model.simulate(&rng.child(labels::SIMULATE, 5)).unwrap();
    (model, obs)
}

fn potential_free(t_max: usize) -> GenSsmTarget<f64> {
    GenSsmTarget::new(
        t_max,
        DVector::zeros(1),
        scalar(1.0),
        Dynamics::Linear(Steps::constant(
            DynamicsStep {
                f: scalar(0.9),
                b: DVector::zeros(1),
                q: scalar(0.5),
            },
            t_max,
        )),
    )
    .unwrap()
}

fn chi2_pvalue(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let df = probs.iter().filter(|&&p| p > 0.0).count() - 1;
    1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat)
}

/// Mean and batch-means standard error.
fn mean_se(chain: &[f64]) -> (f64, f64) {
    let n = chain.len() as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let batches = 50;
    let size = chain.len() / batches;
    let var = chain
        .chunks_exact(size)
        .map(|c| (c.iter().sum::<f64>() / size as f64 - mean).powi(2))
        .sum::<f64>()
        / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

fn assert_matches_smoother(traces: &[Vec<f64>], smoothed: &[GaussParams<f64>], what: &str) {
    for (t, chain) in traces.iter().enumerate() {
        let (m, se) = mean_se(chain);
        let truth = smoothed[t].mean[0];
        assert!((m - truth).abs() < 4.0 * se, "{what} t={t}: {m} vs {truth} (se {se})");
        let sq: Vec<f64> = chain.iter().map(|x| x * x).collect();
        let (m2, se2) = mean_se(&sq);
        let truth2 = smoothed[t].cov[(0, 0)] + truth * truth;
        assert!((m2 - truth2).abs() < 4.0 * se2, "{what} t={t}: E[x²] {m2} vs {truth2} (se {se2})");
    }
}

#[test]
fn potential_free_smc_has_zero_log_likelihood() {
    let fk = potential_free(5);
    let ps = smc(&fk, 16, &RngStream::new(1), &Exec::sequential()).unwrap();
    assert_eq!(ps.log_likelihood, 0.0);
    for t in 0..=5 {
        for w in ps.weights(t) {
            assert_abs_diff_eq!(w, 1.0 / 16.0, epsilon = 1e-15);
        }
    }
    let single = smc(&fk, 1, &RngStream::new(2), &Exec::sequential()).unwrap();
    assert_eq!(single.num_particles(), 1);
    assert!(single.ancestors.iter().skip(1).all(|a| a == &[0]));
}

#[test]
fn smc_likelihood_is_unbiased() {
    let (model, obs) = small_lgssm(3, 8);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let truth = kalman_filter(&model, &obs).unwrap().log_marginal;
    let runs = 200;
    let root = RngStream::new(10);
    let exec = Exec::sequential();
    let lls: Vec<f64> = (0..runs)
        .map(|r| smc(&fk, 64, &root.child(labels::ITER, r), &exec).unwrap().log_likelihood)
        .collect();
    let ratios: Vec<f64> = lls.iter().map(|l| (l - truth).exp()).collect();
    let n = runs as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * sd / n.sqrt(), "{mean} ± {sd}");
    assert!(lls.iter().sum::<f64>() / n <= truth);
}

#[test]
fn degenerate_weights_are_reported() {
    let fk = potential_free(3).with_potential(Arc::new(FnPotential {
        log_g: |t: usize, _: &DVector<f64>| if t == 2 { f64::NEG_INFINITY } else { 0.0 },
        grad: |_: usize, _: &DVector<f64>| DVector::zeros(1),
    }));
    let err = smc(&fk, 8, &RngStream::new(0), &Exec::sequential()).unwrap_err();
    assert!(matches!(err, crate::Error::DegenerateWeights { t: 2 }), "{err}");
}

#[test]
fn single_particle_csmc_keeps_reference() {
    let fk = potential_free(4);
    let x = Trajectory::new((0..5).map(|t| DVector::from_element(1, t as f64)).collect());
    let (out, _) = csmc_step(&fk, &x, 1, &RngStream::new(3), &Exec::sequential()).unwrap();
    assert_eq!(out, x);
}

#[test]
fn terminal_index_is_uniform_without_potentials() {
    let fk = potential_free(1);
    let x = Trajectory::constant(DVector::from_element(1, 0.3), 2);
    let root = RngStream::new(8);
    let exec = Exec::sequential();
    let mut counts = [0u64; 2];
    for i in 0..100_000 {
        let (out, _) = csmc_step(&fk, &x, 2, &root.child(labels::ITER, i), &exec).unwrap();
        counts[usize::from(out.states[1] != x.states[1])] += 1;
    }
    assert!(chi2_pvalue(&counts, &[0.5, 0.5]) > 1e-3, "{counts:?}");
}

#[test]
fn backward_indices_follow_enumerated_probabilities() {
    let (model, obs) = small_lgssm(4, 1);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let ps = smc(&fk, 3, &RngStream::new(5), &Exec::sequential()).unwrap();
    let w1 = ps.weights(1);
    let mut probs = vec![0.0; 9];
    for j in 0..3 {
        let next = &ps.particles[1][j];
        let lw: Vec<f64> = (0..3)
            .map(|i| {
                let x = &ps.particles[0][i];
                ps.log_weights[0][i] + fk.log_m(1, x, next) + fk.log_g(1, x, next).unwrap()
            })
            .collect();
        let total: f64 = lw.iter().map(|v| v.exp()).sum();
        for i in 0..3 {
            probs[i * 3 + j] = w1[j] * lw[i].exp() / total;
        }
    }
    let root = RngStream::new(6);
    let mut counts = vec![0u64; 9];
    for k in 0..100_000 {
        let b = backward_indices(&fk, &ps, &root.child(labels::ITER, k)).unwrap();
        counts[b[0] * 3 + b[1]] += 1;
    }
    assert!(chi2_pvalue(&counts, &probs) > 1e-3, "{counts:?} vs {probs:?}");
}

#[test]
fn multinomial_frequencies() {
    let lw = [0.0f64, (2.0f64).ln(), f64::NEG_INFINITY, (3.0f64).ln()];
    let mut draws = RngStream::new(2).draws();
    let idx = multinomial(&lw, 60_000, &mut draws);
    let mut counts = vec![0u64; 4];
    for i in idx {
        counts[i] += 1;
    }
    assert_eq!(counts[2], 0);
    assert!(chi2_pvalue(&counts, &[1.0 / 6.0, 2.0 / 6.0, 0.0, 3.0 / 6.0]) > 1e-3);
}

fn run_csmc<F: FeynmanKac<f64>>(fk: &F, n: usize, iters: u64, seed: u64, project: impl Fn(&DVector<f64>) -> f64) -> Vec<Vec<f64>> {
    let t_max = fk.horizon();
    let mut x = Trajectory::constant(DVector::zeros(fk.state_dim()), t_max + 1);
    let root = RngStream::new(seed);
    let exec = Exec::sequential();
    let mut traces = vec![Vec::with_capacity(iters as usize); t_max + 1];
    for i in 0..iters {
        x = csmc_step(fk, &x, n, &root.child(labels::ITER, i), &exec).unwrap().0;
        for (t, s) in x.states.iter().enumerate() {
            traces[t].push(project(s));
        }
    }
    traces
}

#[test]
fn csmc_leaves_smoother_invariant() {
    let (model, obs) = small_lgssm(12, 4);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let smoothed = rts_smoother(&model, &kalman_filter(&model, &obs).unwrap()).unwrap();
    let traces = run_csmc(&fk, 8, 20_000, 3, |s| s[0]);
    assert_matches_smoother(&traces, &smoothed, "csmc");
}

fn run_aux(fk: &GenSsmTarget<f64>, mode: ProposalMode, n: usize, delta: f64, iters: u64, seed: u64) -> Vec<Vec<f64>> {
    run_aux_at(fk, mode, GradientPoint::AuxObs, n, delta, iters, seed)
}

fn run_aux_at(
    fk: &GenSsmTarget<f64>,
    mode: ProposalMode,
    at: GradientPoint,
    n: usize,
    delta: f64,
    iters: u64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let t_max = fk.horizon();
    let mut state = PGState::new(Trajectory::constant(DVector::zeros(1), t_max + 1), delta).unwrap();
    state.gradient_at = at;
    let root = RngStream::new(seed);
    let exec = Exec::sequential();
    let mut traces = vec![Vec::with_capacity(iters as usize); t_max + 1];
    for i in 0..iters {
        aux_pgibbs_step(fk, &mut state, n, mode, &root.child(labels::ITER, i), &exec).unwrap();
        for (t, s) in state.x.states.iter().enumerate() {
            traces[t].push(s[0]);
        }
    }
    traces
}

#[test]
fn every_proposal_mode_targets_the_posterior() {
    let (model, obs) = small_lgssm(21, 4);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let smoothed = rts_smoother(&model, &kalman_filter(&model, &obs).unwrap()).unwrap();
    for mode in ProposalMode::ALL {
        let traces = run_aux(&fk, mode, 8, 0.5, 20_000, 7);
        assert_matches_smoother(&traces, &smoothed, mode.name());
    }
}

#[test]
fn predicted_mean_linearization_targets_the_posterior() {
    let (model, obs) = small_lgssm(24, 4);
    let fk = GenSsmTarget::from_lgssm_as_potential(&model, &obs).unwrap();
    let smoothed = rts_smoother(&model, &kalman_filter(&model, &obs).unwrap()).unwrap();
    for mode in [ProposalMode::Gradient, ProposalMode::FullyAdapted] {
        let traces = run_aux_at(&fk, mode, GradientPoint::PredictedMean, 8, 0.5, 20_000, 13);
        assert_matches_smoother(&traces, &smoothed, mode.name());
    }
}

#[test]
fn huge_delta_reduces_to_particle_gibbs() {
    let (model, obs) = small_lgssm(22, 3);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let smoothed = rts_smoother(&model, &kalman_filter(&model, &obs).unwrap()).unwrap();
    let traces = run_aux(&fk, ProposalMode::Prior, 8, 1e12, 20_000, 9);
    assert_matches_smoother(&traces, &smoothed, "huge delta");
}

#[test]
fn tiny_delta_pins_the_reference() {
    let (model, obs) = small_lgssm(23, 5);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let x = Trajectory::new((0..6).map(|t| DVector::from_element(1, 0.1 * t as f64)).collect());
    for mode in ProposalMode::ALL {
        let mut state = PGState::new(x.clone(), 1e-10).unwrap();
        aux_pgibbs_step(&fk, &mut state, 2, mode, &RngStream::new(4), &Exec::sequential()).unwrap();
        assert!(state.x.max_abs_diff(&x) < 1e-4, "{mode:?}");
    }
}

#[test]
fn fully_adapted_scalar_proposal_matches_conjugate_formula() {
    let (a, q, delta, u) = (0.9, 0.5, 0.8, 1.7);
    let fk = potential_free(1);
    let prev = DVector::from_element(1, 2.0);
    let p = adapted_proposal(&fk, 1, &DVector::from_element(1, u), Some(&prev), delta, ProposalMode::FullyAdapted).unwrap();
    let StepProposal::Gaussian(p) = p else { panic!("expected a Gaussian proposal") };
    let mean = (a * 2.0 / q + 2.0 * u / delta) / (1.0 / q + 2.0 / delta);
    assert_abs_diff_eq!(p.mean[0], mean, epsilon = 1e-12);
    assert_abs_diff_eq!(p.cov[(0, 0)], 1.0 / (1.0 / q + 2.0 / delta), epsilon = 1e-12);
}

#[test]
fn gradient_proposal_without_gradient_is_centred_on_u() {
    let fk = potential_free(2);
    let u = DVector::from_element(1, -0.4);
    let StepProposal::Gaussian(p) = adapted_proposal(&fk, 1, &u, None, 0.6, ProposalMode::Gradient).unwrap() else {
        panic!("expected a Gaussian proposal")
    };
    assert_eq!(p.mean, u);
    assert_abs_diff_eq!(p.cov[(0, 0)], 0.3);
}

struct Opaque(GenSsmTarget<f64>);

impl FeynmanKac<f64> for Opaque {
    fn horizon(&self) -> usize {
        self.0.horizon()
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn sample_m0(&self, rng: &RngStream) -> crate::Result<DVector<f64>> {
        self.0.sample_m0(rng)
    }
    fn log_m0(&self, x: &DVector<f64>) -> f64 {
        self.0.log_m0(x)
    }
    fn sample_m(&self, t: usize, prev: &DVector<f64>, rng: &RngStream) -> crate::Result<DVector<f64>> {
        self.0.sample_m(t, prev, rng)
    }
    fn log_m(&self, t: usize, prev: &DVector<f64>, x: &DVector<f64>) -> f64 {
        self.0.log_m(t, prev, x)
    }
    fn log_g0(&self, x: &DVector<f64>) -> crate::Result<f64> {
        self.0.log_g0(x)
    }
    fn log_g(&self, t: usize, prev: &DVector<f64>, x: &DVector<f64>) -> crate::Result<f64> {
        FeynmanKac::log_g(&self.0, t, prev, x)
    }
}

#[test]
fn modes_needing_structure_are_rejected() {
    let fk = Opaque(potential_free(2));
    assert!(ProposalMode::Prior.check(&fk).is_ok());
    for mode in [ProposalMode::Gradient, ProposalMode::FullyAdapted] {
        let err = AuxFeynmanKac::new(&fk, vec![DVector::zeros(1); 3], 1.0, mode).err().unwrap();
        assert!(matches!(err, crate::Error::ModeMismatch { .. }), "{err}");
    }
}

/// `Ĝ = G · ε` with `ε = 0.5` or `1.5` depending on one uniform.
struct NoisyPotential<'a>(&'a GenSsmTarget<f64>, bool);

impl PotentialEstimator<f64> for NoisyPotential<'_> {
    fn extra_dim(&self) -> usize {
        1
    }
    fn estimate0(&self, x: &DVector<f64>, zeta: &[f64]) -> f64 {
        self.estimate(0, x, x, zeta)
    }
    fn estimate(&self, t: usize, _: &DVector<f64>, x: &DVector<f64>, zeta: &[f64]) -> f64 {
        let g = self.0.log_potential(t, x).exp();
        match (self.1, zeta[0] < 0.5) {
            (false, _) => g,
            (true, true) => 0.5 * g,
            (true, false) => 1.5 * g,
        }
    }
}

#[test]
fn deterministic_estimator_reproduces_plain_potential() {
    let (model, obs) = small_lgssm(30, 4);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let pm = PseudoMarginal::new(fk.clone(), NoisyPotential(&fk, false));
    let rng = RngStream::new(1);
    for t in 1..=4 {
        let x = rng.child(labels::ITER, t).normals::<f64>(1);
        let ext = DVector::from_vec(vec![x[0], 0.3]);
        assert_abs_diff_eq!(pm.log_g(t as usize, &ext, &ext).unwrap(), FeynmanKac::log_g(&fk, t as usize, &x, &x).unwrap(), epsilon = 1e-12);
    }
    let exec = Exec::sequential();
    let a = smc(&pm, 32, &rng, &exec).unwrap();
    let b = smc(&fk, 32, &rng, &exec).unwrap();
    assert_abs_diff_eq!(a.log_likelihood, b.log_likelihood, epsilon = 1e-10);
}

#[test]
fn noisy_estimator_is_unbiased() {
    let (model, obs) = small_lgssm(31, 2);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let est = NoisyPotential(&fk, true);
    let x = DVector::from_element(1, 0.2);
    let g = fk.log_potential(1, &x).exp();
    let rng = RngStream::new(2);
    let n = 100_000;
    let draws: Vec<f64> = (0..n)
        .map(|i| est.estimate(1, &x, &x, &[rng.child(labels::ESTIMATOR, i).uniform()]))
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!((mean - g).abs() < 4.0 * sd / (n as f64).sqrt());
}

#[test]
fn pseudo_marginal_csmc_targets_the_posterior() {
    let (model, obs) = small_lgssm(32, 3);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let smoothed = rts_smoother(&model, &kalman_filter(&model, &obs).unwrap()).unwrap();
    let pm = PseudoMarginal::new(fk.clone(), NoisyPotential(&fk, true));
    let traces = run_csmc(&pm, 8, 20_000, 5, |s| s[0]);
    assert_matches_smoother(&traces, &smoothed, "pseudo-marginal");
}

struct Negative;

impl PotentialEstimator<f64> for Negative {
    fn extra_dim(&self) -> usize {
        0
    }
    fn estimate0(&self, _: &DVector<f64>, _: &[f64]) -> f64 {
        1.0
    }
    fn estimate(&self, _: usize, _: &DVector<f64>, _: &DVector<f64>, _: &[f64]) -> f64 {
        -0.5
    }
}

#[test]
fn negative_estimates_are_errors() {
    let pm = PseudoMarginal::new(potential_free(2), Negative);
    let err = smc(&pm, 4, &RngStream::new(0), &Exec::sequential()).unwrap_err();
    assert!(matches!(err, crate::Error::NegativeEstimate { t: 1, .. }), "{err}");
}

#[test]
fn parallel_particles_match_sequential() {
    let (model, obs) = small_lgssm(40, 6);
    let fk = GenSsmTarget::from_lgssm(&model, &obs).unwrap();
    let x = Trajectory::constant(DVector::zeros(1), 7);
    let rng = RngStream::new(3);
    let seq = csmc_step(&fk, &x, 200, &rng, &Exec::sequential()).unwrap().0;
    let par = csmc_step(&fk, &x, 200, &rng, &Exec::with_workers(4).unwrap()).unwrap().0;
    assert_eq!(seq, par);
}
