//! Divide-and-conquer pathwise sampling.
//!
//! A balanced tree over `[0, T]` stores, for every segment `[l, r]`, the
//! composed backward conditional `x_l | x_r`. After drawing `x_T` and then
//! `x_0 | x_T`, each segment's midpoint is drawn from its Gaussian bridge
//! given both sampled endpoints; all segments of a level are independent.

use nalgebra::DVector;

use super::elements::{backward_element, AffineGaussElement};
use crate::error::Result;
use crate::exec::Exec;
use crate::gauss::{
    labels, right_solve_spd, sample_with_noise, symmetrize, GaussParams, NoiseSource,
};
use crate::lgssm::{FilterResult, Lgssm, Trajectory};
use crate::scalar::Real;

/// Node of the segment tree over `[l, r]`.
#[derive(Clone, Debug)]
pub struct SegmentNode<R: Real> {
    pub l: usize,
    pub r: usize,
    /// Law of `x_l` given `x_r`.
    pub element: AffineGaussElement<R>,
    pub children: Option<Box<(SegmentNode<R>, SegmentNode<R>)>>,
}

impl<R: Real> SegmentNode<R> {
    pub fn midpoint(&self) -> usize {
        (self.l + self.r) / 2
    }
}

#[derive(Clone, Debug)]
pub struct SegmentTree<R: Real> {
    /// `None` when `T = 0`.
    pub root: Option<SegmentNode<R>>,
}

fn build_node<R: Real>(leaves: &[AffineGaussElement<R>], l: usize, r: usize, exec: &Exec) -> SegmentNode<R> {
    if r - l == 1 {
        return SegmentNode {
            l,
            r,
            element: leaves[l].clone(),
            children: None,
        };
    }
    let m = (l + r) / 2;
    let (left, right) = exec.join(|| build_node(leaves, l, m, exec), || build_node(leaves, m, r, exec));
    SegmentNode {
        l,
        r,
        element: left.element.compose(&right.element),
        children: Some(Box::new((left, right))),
    }
}

impl<R: Real> SegmentTree<R> {
    pub fn build(model: &Lgssm<R>, fr: &FilterResult<R>, exec: &Exec) -> Result<Self> {
        let t_max = model.horizon();
        if t_max == 0 {
            return Ok(Self { root: None });
        }
        let leaves: Vec<Result<AffineGaussElement<R>>> =
            exec.install(|| exec.map(t_max, |t| backward_element(model, fr, t)));
        let leaves = leaves.into_iter().collect::<Result<Vec<_>>>()?;
        let root = exec.install(|| build_node(&leaves, 0, t_max, exec));
        Ok(Self { root: Some(root) })
    }
}

/// Bridge law of the midpoint given both endpoints of a segment.
fn bridge<R: Real>(
    left: &AffineGaussElement<R>,
    right: &AffineGaussElement<R>,
    x_l: &DVector<R>,
    x_r: &DVector<R>,
) -> Result<GaussParams<R>> {
    // prior x_m | x_r, then condition on x_l = G_lm x_m + c_lm + N(0, Λ_lm)
    let mu = right.apply(x_r);
    let sigma = right.lambda_or_zero();
    let g = &left.g;
    let s = symmetrize(&(g * &sigma * g.transpose() + left.lambda_or_zero()));
    let k = right_solve_spd(&(&sigma * g.transpose()), &s)?;
    let mean = &mu + &k * (x_l - g * &mu - &left.c);
    let cov = symmetrize(&(&sigma - &k * g * &sigma));
    Ok(GaussParams { mean, cov })
}

fn fill<R: Real, N: NoiseSource<R> + ?Sized>(
    node: &SegmentNode<R>,
    x_l: &DVector<R>,
    x_r: &DVector<R>,
    noise: &N,
    exec: &Exec,
) -> Result<Vec<(usize, DVector<R>)>> {
    let Some(children) = &node.children else {
        return Ok(Vec::new());
    };
    let (left, right) = &**children;
    let m = node.midpoint();
    let law = bridge(&left.element, &right.element, x_l, x_r)?;
    let x_m = sample_with_noise(&law, &noise.normals(labels::DNC, m as u64, x_l.len()))?;
    let (a, b) = exec.join(|| fill(left, x_l, &x_m, noise, exec), || fill(right, &x_m, x_r, noise, exec));
    let mut out = a?;
    out.push((m, x_m));
    out.extend(b?);
    Ok(out)
}

/// Draws `x_{0:T}` from the smoothing distribution via the segment tree.
///
/// Uses `(BACKWARD_TERMINAL, 0)` for `x_T`, `(BACKWARD, 0)` for `x_0 | x_T`
/// and `(DNC, m)` for the midpoint `m` of every segment.
pub fn dnc_sample_with<R: Real, N: NoiseSource<R> + ?Sized>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    noise: &N,
    exec: &Exec,
) -> Result<Trajectory<R>> {
    let t_max = model.horizon();
    let d = model.state_dim();
    let x_last = sample_with_noise(
        &fr.filtered[t_max],
        &noise.normals(labels::BACKWARD_TERMINAL, 0, d),
    )?;
    let tree = SegmentTree::build(model, fr, exec)?;
    let Some(root) = &tree.root else {
        return Ok(Trajectory::new(vec![x_last]));
    };
    let e = &root.element;
    let first_law = GaussParams {
        mean: e.apply(&x_last),
        cov: e.lambda_or_zero(),
    };
    let x_first = sample_with_noise(&first_law, &noise.normals(labels::BACKWARD, 0, d))?;
    let interior = exec.install(|| fill(root, &x_first, &x_last, noise, exec))?;
    let mut states = vec![DVector::zeros(d); t_max + 1];
    states[0] = x_first;
    states[t_max] = x_last;
    for (t, x) in interior {
        states[t] = x;
    }
    Ok(Trajectory::new(states))
}
