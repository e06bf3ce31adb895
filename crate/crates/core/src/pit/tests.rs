use nalgebra::{DMatrix, DVector};

use super::*;
use crate::gauss::{labels, Cholesky, Definiteness};
use crate::lgssm::{
    backward_sample, dense_oracle, kalman_filter, random_model, rts_smoother, DynamicsStep,
    ObsStep, RandomModelSpec,
};

fn random_mat(rng: &RngStream, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(r, c, rng.normals::<f64>(r * c).as_slice())
}

fn random_element(rng: &RngStream, d: usize) -> AffineGaussElement<f64> {
    let a = random_mat(&rng.child(labels::SIMULATE, 2), d, d);
    AffineGaussElement {
        g: random_mat(&rng.child(labels::SIMULATE, 0), d, d) * 0.7,
        c: rng.child(labels::SIMULATE, 1).normals(d),
        lambda: Some(&a * a.transpose()),
    }
}

fn setup(seed: u64, spec: &RandomModelSpec) -> (Lgssm<f64>, Vec<DVector<f64>>, FilterResult<f64>) {
    let m = random_model(spec, &RngStream::new(seed)).unwrap();
    let (_, obs) = m.simulate(&RngStream::new(seed ^ 0xabc)).unwrap();
    let fr = kalman_filter(&m, &obs).unwrap();
    (m, obs, fr)
}

fn spec(horizon: usize, state_dim: usize) -> RandomModelSpec {
    RandomModelSpec {
        horizon,
        state_dim,
        obs_dim: 1,
        time_varying: true,
        observed_fraction: 0.8,
    }
}

#[test]
fn composition_is_associative_with_identity() {
    for seed in 0..50 {
        let root = RngStream::new(seed);
        let d = 1 + (seed as usize % 3);
        let a = random_element(&root.child(labels::ITER, 0), d);
        let b = random_element(&root.child(labels::ITER, 1), d);
        let c = random_element(&root.child(labels::ITER, 2), d);
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        assert!(left.max_abs_diff(&right) < 1e-10);
        let id = AffineGaussElement::identity(d);
        assert!(id.compose(&a).max_abs_diff(&a) < 1e-15);
        assert!(a.compose(&id).max_abs_diff(&a) < 1e-15);
    }
}

fn random_filter_element(rng: &RngStream, d: usize) -> FilterScanElement<f64> {
    let c = random_mat(&rng.child(labels::SIMULATE, 2), d, d);
    let j = random_mat(&rng.child(labels::SIMULATE, 4), d, d);
    FilterScanElement {
        a: random_mat(&rng.child(labels::SIMULATE, 0), d, d) * 0.5,
        b: rng.child(labels::SIMULATE, 1).normals(d),
        c: &c * c.transpose() * 0.5 + DMatrix::identity(d, d) * 0.1,
        eta: rng.child(labels::SIMULATE, 3).normals(d),
        j: &j * j.transpose() * 0.5,
    }
}

#[test]
fn filter_element_combination_is_associative() {
    for seed in 0..50 {
        let root = RngStream::new(seed + 1000);
        let d = 1 + (seed as usize % 3);
        let a = random_filter_element(&root.child(labels::ITER, 0), d);
        let b = random_filter_element(&root.child(labels::ITER, 1), d);
        let c = random_filter_element(&root.child(labels::ITER, 2), d);
        let left = a.combine(&b).unwrap().combine(&c).unwrap();
        let right = a.combine(&b.combine(&c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-8, "{}", left.max_abs_diff(&right));
    }
}

fn scalar_model(t_max: usize, q: f64, p0: f64) -> Lgssm<f64> {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    Lgssm::homogeneous(
        t_max,
        DVector::from_element(1, 0.3),
        one(p0),
        DynamicsStep {
            f: one(1.0),
            b: DVector::zeros(1),
            q: one(q),
        },
        ObsStep {
            h: one(1.0),
            c: DVector::zeros(1),
            r: one(0.5),
        },
    )
    .unwrap()
}

#[test]
fn uninformative_future_reduces_to_filtered_marginal() {
    let m = scalar_model(3, 1e12, 1.0);
    let obs: Vec<_> = (0..4).map(|t| DVector::from_element(1, t as f64)).collect();
    let fr = kalman_filter(&m, &obs).unwrap();
    for (t, e) in build_backward_elements(&m, &fr).unwrap().iter().enumerate() {
        assert!(e.g.abs().max() < 1e-10);
        assert!((&e.c - &fr.filtered[t].mean).abs().max() < 1e-9);
        assert!((e.lambda_or_zero() - &fr.filtered[t].cov).abs().max() < 1e-9);
    }
}

#[test]
fn deterministic_dynamics_give_perfect_copy() {
    let m = scalar_model(3, 0.0, 1.0);
    let obs: Vec<_> = (0..4).map(|t| DVector::from_element(1, t as f64)).collect();
    let fr = kalman_filter(&m, &obs).unwrap();
    for e in build_backward_elements(&m, &fr).unwrap() {
        assert!((e.g[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(e.c[0].abs() < 1e-12);
        assert!(e.lambda_or_zero()[(0, 0)].abs() < 1e-12);
    }
}

#[test]
fn sequential_application_of_elements_reproduces_backward_sample() {
    for seed in 0..10 {
        let (m, _, fr) = setup(seed, &spec(12, 2));
        let rng = RngStream::new(seed + 5);
        let reference = backward_sample(&m, &fr, &rng).unwrap();
        let elems = realize_noise(&build_backward_elements(&m, &fr).unwrap(), &rng).unwrap();
        let mut x = reference.states[12].clone();
        for t in (0..12).rev() {
            x = elems[t].apply(&x);
            assert!((&x - &reference.states[t]).abs().max() < 1e-12);
        }
    }
}

#[test]
fn realize_noise_without_covariance_is_identity() {
    let e = AffineGaussElement {
        g: DMatrix::identity(2, 2),
        c: DVector::from_vec(vec![1.0, 2.0]),
        lambda: Some(DMatrix::zeros(2, 2)),
    };
    let out = realize_noise(std::slice::from_ref(&e), &RngStream::new(1)).unwrap();
    assert_eq!(out[0].c, e.c);
    assert_eq!(out[0].g, e.g);
    assert!(out[0].lambda.is_none());
}

#[test]
fn realized_noise_uses_the_sequential_stream() {
    let (m, _, fr) = setup(3, &spec(6, 2));
    let rng = RngStream::new(77);
    let elems = build_backward_elements(&m, &fr).unwrap();
    let realized = realize_noise(&elems, &rng).unwrap();
    for (t, (e, r)) in elems.iter().zip(&realized).enumerate() {
        let chol = Cholesky::new(e.lambda.as_ref().unwrap(), Definiteness::Semi).unwrap();
        let w = chol.l() * rng.child(labels::BACKWARD, t as u64).normals::<f64>(2);
        assert_eq!(r.c, &e.c + w);
    }
}

#[test]
fn realized_noise_has_the_element_mean() {
    let (m, _, fr) = setup(4, &spec(3, 2));
    let elems = build_backward_elements(&m, &fr).unwrap();
    let n = 100_000;
    let mut sum = vec![DVector::<f64>::zeros(2); 3];
    let root = RngStream::new(5);
    for i in 0..n {
        let r = realize_noise(&elems, &root.child(labels::ITER, i)).unwrap();
        for t in 0..3 {
            sum[t] += &r[t].c;
        }
    }
    for t in 0..3 {
        let lam = elems[t].lambda_or_zero();
        for k in 0..2 {
            let se = (lam[(k, k)] / n as f64).sqrt();
            assert!((sum[t][k] / n as f64 - elems[t].c[k]).abs() < 4.0 * se);
        }
    }
}

#[test]
fn prefix_matches_sequential_pathwise() {
    for seed in 0..20 {
        let (m, _, fr) = setup(seed, &spec(1 + seed as usize * 3, 1 + seed as usize % 3));
        let rng = RngStream::new(seed + 99);
        let a = backward_sample(&m, &fr, &rng).unwrap();
        let b = prefix_sample(&m, &fr, &rng, &Exec::sequential()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-8);
    }
}

#[test]
fn single_step_prefix_is_exact() {
    let (m, _, fr) = setup(2, &spec(1, 2));
    let rng = RngStream::new(3);
    let a = backward_sample(&m, &fr, &rng).unwrap();
    let (b, stats) = prefix_sample_with(&m, &fr, &rng, &Exec::sequential()).unwrap();
    assert_eq!(stats.combines, 0);
    assert!(a.max_abs_diff(&b) < 1e-14);
}

#[test]
fn prefix_samples_match_smoother_moments() {
    let (m, _, fr) = setup(12, &spec(5, 2));
    let sm = rts_smoother(&m, &fr).unwrap();
    let n = 100_000;
    let root = RngStream::new(13);
    let exec = Exec::sequential();
    let mut s1 = vec![DVector::<f64>::zeros(2); 6];
    let mut s2 = vec![DVector::<f64>::zeros(2); 6];
    for i in 0..n {
        let x = prefix_sample(&m, &fr, &root.child(labels::ITER, i), &exec).unwrap();
        for t in 0..6 {
            let r = &x.states[t] - &sm[t].mean;
            s1[t] += &r;
            s2[t] += r.component_mul(&r);
        }
    }
    let nf = n as f64;
    for t in 0..6 {
        for k in 0..2 {
            let v = sm[t].cov[(k, k)];
            assert!((s1[t][k] / nf).abs() < 4.0 * (v / nf).sqrt());
            assert!((s2[t][k] / nf - v).abs() < 4.0 * (2.0 * v * v / nf).sqrt());
        }
    }
}

#[test]
fn parallel_filter_agrees_with_sequential() {
    for seed in 0..10 {
        let spec = RandomModelSpec {
            horizon: 50,
            state_dim: 1 + seed as usize % 3,
            obs_dim: 1 + seed as usize % 2,
            time_varying: seed % 2 == 0,
            observed_fraction: 0.7,
        };
        let (m, obs, fr) = setup(seed, &spec);
        let pf = parallel_filter(&m, &obs, &Exec::sequential()).unwrap();
        for t in 0..=50 {
            assert!((&pf.filtered[t].mean - &fr.filtered[t].mean).abs().max() < 1e-6);
            assert!((&pf.filtered[t].cov - &fr.filtered[t].cov).abs().max() < 1e-6);
            assert!((&pf.predicted[t].mean - &fr.predicted[t].mean).abs().max() < 1e-6);
        }
        assert!((pf.log_marginal - fr.log_marginal).abs() < 1e-6);
    }
}

#[test]
fn parallel_filter_edge_cases() {
    let (m, obs, fr) = setup(1, &spec(0, 2));
    let pf = parallel_filter(&m, &obs, &Exec::sequential()).unwrap();
    assert!((&pf.filtered[0].mean - &fr.filtered[0].mean).abs().max() < 1e-12);
    assert!((pf.log_marginal - fr.log_marginal).abs() < 1e-12);

    let (m, _, _) = setup(2, &spec(9, 2));
    let m = m.with_mask(vec![false; 10]).unwrap();
    let obs = vec![DVector::zeros(0); 10];
    let pf = parallel_filter(&m, &obs, &Exec::sequential()).unwrap();
    let fr = kalman_filter(&m, &obs).unwrap();
    assert_eq!(pf.log_marginal, 0.0);
    for t in 0..10 {
        assert!((&pf.filtered[t].mean - &fr.predicted[t].mean).abs().max() < 1e-10);
        assert!((&pf.filtered[t].cov - &fr.predicted[t].cov).abs().max() < 1e-10);
    }
}

#[test]
fn dnc_with_one_step_is_the_sequential_draw() {
    let (m, _, fr) = setup(6, &spec(1, 2));
    let rng = RngStream::new(8);
    let a = backward_sample(&m, &fr, &rng).unwrap();
    let b = dnc_sample(&m, &fr, &rng, &Exec::sequential()).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-14);
}

#[test]
fn dnc_on_deterministic_model_is_constant() {
    let m = scalar_model(9, 0.0, 0.0);
    let obs: Vec<_> = (0..10).map(|t| DVector::from_element(1, t as f64)).collect();
    let fr = kalman_filter(&m, &obs).unwrap();
    let x = dnc_sample(&m, &fr, &RngStream::new(1), &Exec::sequential()).unwrap();
    for s in &x.states {
        assert!((s[0] - 0.3).abs() < 1e-12);
    }
}

#[test]
fn dnc_pairwise_moments_match_dense_oracle() {
    let (m, obs, fr) = setup(21, &spec(8, 2));
    let joint = dense_oracle(&m, &obs).unwrap();
    let n = 100_000;
    let dim = 18;
    let root = RngStream::new(22);
    let exec = Exec::sequential();
    let mut s1 = DVector::<f64>::zeros(dim);
    let mut s2 = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        let x = dnc_sample(&m, &fr, &root.child(labels::ITER, i), &exec).unwrap().flatten() - &joint.mean;
        s1 += &x;
        s2 += &x * x.transpose();
    }
    let nf = n as f64;
    let c = &joint.cov;
    for i in 0..dim {
        assert!((s1[i] / nf).abs() < 4.0 * (c[(i, i)] / nf).sqrt(), "mean {i}");
        for j in 0..=i {
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / nf).sqrt();
            assert!((s2[(i, j)] / nf - c[(i, j)]).abs() < 4.0 * se, "cov ({i}, {j})");
        }
    }
}

#[test]
fn induced_laws_equal_dense_oracle() {
    for seed in 0..20 {
        let (m, obs, fr) = setup(seed, &spec(1 + seed as usize, 1 + seed as usize % 3));
        let joint = dense_oracle(&m, &obs).unwrap();
        for sampler in PathSampler::ALL {
            let law = extract_affine_law(sampler, &m, &fr, &Exec::sequential()).unwrap();
            assert!((&law.mean - &joint.mean).abs().max() < 1e-8, "{sampler:?} mean");
            assert!((&law.cov - &joint.cov).abs().max() < 1e-8, "{sampler:?} cov");
        }
    }
}

#[test]
fn deterministic_model_has_zero_induced_covariance() {
    let m = scalar_model(7, 0.0, 0.0);
    let obs: Vec<_> = (0..8).map(|t| DVector::from_element(1, t as f64)).collect();
    let fr = kalman_filter(&m, &obs).unwrap();
    for sampler in PathSampler::ALL {
        let law = extract_affine_law(sampler, &m, &fr, &Exec::sequential()).unwrap();
        assert_eq!(law.cov.abs().max(), 0.0, "{sampler:?}");
    }
}

#[test]
fn sequential_and_prefix_laws_coincide() {
    let (m, _, fr) = setup(31, &spec(15, 3));
    let a = extract_affine_law(PathSampler::Sequential, &m, &fr, &Exec::sequential()).unwrap();
    let b = extract_affine_law(PathSampler::Prefix, &m, &fr, &Exec::sequential()).unwrap();
    assert!((&a.mean - &b.mean).abs().max() < 1e-8);
    assert!((&a.cov - &b.cov).abs().max() < 1e-8);
}

#[test]
fn outputs_are_bit_identical_across_worker_counts() {
    let (m, obs, fr) = setup(41, &spec(200, 2));
    let rng = RngStream::new(42);
    let base_p = prefix_sample(&m, &fr, &rng, &Exec::sequential()).unwrap();
    let base_d = dnc_sample(&m, &fr, &rng, &Exec::sequential()).unwrap();
    let base_f = parallel_filter(&m, &obs, &Exec::sequential()).unwrap();
    for w in [2, 8] {
        let exec = Exec::with_workers(w).unwrap();
        assert_eq!(prefix_sample(&m, &fr, &rng, &exec).unwrap(), base_p);
        assert_eq!(dnc_sample(&m, &fr, &rng, &exec).unwrap(), base_d);
        let pf = parallel_filter(&m, &obs, &exec).unwrap();
        assert_eq!(pf.filtered, base_f.filtered);
        assert_eq!(pf.log_marginal.to_bits(), base_f.log_marginal.to_bits());
    }
}

#[test]
fn scan_span_is_logarithmic() {
    for t_max in [1usize, 2, 3, 7, 8, 100, 255, 256, 1000] {
        let (m, _, fr) = setup(t_max as u64, &spec(t_max, 1));
        let (_, stats) = prefix_sample_with(&m, &fr, &RngStream::new(0), &Exec::sequential()).unwrap();
        assert_eq!(stats.depth, ceil_log2(t_max), "T = {t_max}");
        assert!(stats.combines < 4 * t_max);
    }
}

#[test]
fn single_precision_prefix_tracks_sequential() {
    let (m, obs, _) = setup(5, &spec(20, 2));
    // rebuild the model in f32
    let cast_m = |a: &DMatrix<f64>| a.map(|v| v as f32);
    let cast_v = |a: &DVector<f64>| a.map(|v| v as f32);
    let dyns: Vec<_> = (0..20)
        .map(|t| {
            let s = m.dynamics(t);
            DynamicsStep { f: cast_m(&s.f), b: cast_v(&s.b), q: cast_m(&s.q) }
        })
        .collect();
    let obs_steps: Vec<_> = (0..=20)
        .map(|t| {
            let o = m.observation(t);
            ObsStep { h: cast_m(&o.h), c: cast_v(&o.c), r: cast_m(&o.r) }
        })
        .collect();
    let m32 = Lgssm::new(
        cast_v(&m.m0),
        cast_m(&m.p0),
        crate::lgssm::Steps::Varying(dyns),
        crate::lgssm::Steps::Varying(obs_steps),
    )
    .unwrap()
    .with_mask(m.mask().to_vec())
    .unwrap();
    let obs32: Vec<_> = obs.iter().map(cast_v).collect();
    let fr = kalman_filter(&m32, &obs32).unwrap();
    let rng = RngStream::new(6);
    let a = backward_sample(&m32, &fr, &rng).unwrap();
    let b = prefix_sample(&m32, &fr, &rng, &Exec::sequential()).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-3);
}
