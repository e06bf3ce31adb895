//! Inclusive scan over a fixed Ladner–Fischer combination tree.
//!
//! For `n` inputs the tree has depth exactly `⌈log₂ n⌉` and fewer than `4n`
//! combine calls. Its shape depends on `n` only, so the floating-point result
//! is identical for every worker count.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::exec::Exec;

/// Instrumentation of one scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    /// Number of combine calls.
    pub combines: usize,
    /// Longest chain of dependent combine calls.
    pub depth: usize,
}

struct Node<T> {
    value: T,
    depth: usize,
}

struct Ctx<'a, T, F> {
    op: &'a F,
    exec: &'a Exec,
    combines: AtomicUsize,
    _t: std::marker::PhantomData<fn() -> T>,
}

impl<T, F> Ctx<'_, T, F>
where
    T: Send + Sync,
    F: Fn(&T, &T) -> T + Sync,
{
    fn combine(&self, a: &Node<T>, b: &Node<T>) -> Node<T> {
        self.combines.fetch_add(1, Ordering::Relaxed);
        Node {
            value: (self.op)(&a.value, &b.value),
            depth: a.depth.max(b.depth) + 1,
        }
    }

    /// Depth-optimal prefix circuit.
    fn p0(&self, mut xs: Vec<Node<T>>) -> Vec<Node<T>> {
        let n = xs.len();
        if n <= 1 {
            return xs;
        }
        let m = largest_pow2_below(n);
        let right = xs.split_off(m);
        let (mut left, right) = self.exec.join(|| self.p1(xs), || self.p0(right));
        let total = left.last().expect("nonempty");
        let fixed = self.exec.map(right.len(), |i| self.combine(total, &right[i]));
        left.extend(fixed);
        left
    }

    /// Prefix circuit whose last output is ready one level early.
    fn p1(&self, xs: Vec<Node<T>>) -> Vec<Node<T>> {
        let n = xs.len();
        if n <= 1 {
            return xs;
        }
        let pairs = self.exec.map(n / 2, |i| self.combine(&xs[2 * i], &xs[2 * i + 1]));
        let pair_prefix = self.p0(pairs);
        let mut evens = self.exec.map((n - 1) / 2, |i| self.combine(&pair_prefix[i], &xs[2 * i + 2]));
        let mut out = Vec::with_capacity(n);
        let mut first = Some(xs.into_iter().next().expect("nonempty"));
        let mut evens_iter = evens.drain(..);
        let mut odds_iter = pair_prefix.into_iter();
        for idx in 0..n {
            let node = if idx == 0 {
                first.take()
            } else if idx % 2 == 1 {
                odds_iter.next()
            } else {
                evens_iter.next()
            };
            out.push(node.expect("scan output"));
        }
        out
    }
}

fn largest_pow2_below(n: usize) -> usize {
    debug_assert!(n >= 2);
    1 << (usize::BITS - 1 - (n - 1).leading_zeros())
}

/// `out[i] = items[0] ⊕ items[1] ⊕ … ⊕ items[i]` for an associative `op`.
pub fn inclusive_scan<T, F>(items: Vec<T>, op: F, exec: &Exec) -> (Vec<T>, ScanStats)
where
    T: Send + Sync,
    F: Fn(&T, &T) -> T + Sync,
{
    let ctx = Ctx {
        op: &op,
        exec,
        combines: AtomicUsize::new(0),
        _t: std::marker::PhantomData,
    };
    let nodes = items.into_iter().map(|value| Node { value, depth: 0 }).collect();
    let out = exec.install(|| ctx.p0(nodes));
    let depth = out.iter().map(|n| n.depth).max().unwrap_or(0);
    let stats = ScanStats {
        combines: ctx.combines.load(Ordering::Relaxed),
        depth,
    };
    (out.into_iter().map(|n| n.value).collect(), stats)
}

/// `out[i] = items[i] ⊕ items[i+1] ⊕ … ⊕ items[n-1]`.
pub fn suffix_scan<T, F>(mut items: Vec<T>, op: F, exec: &Exec) -> (Vec<T>, ScanStats)
where
    T: Send + Sync,
    F: Fn(&T, &T) -> T + Sync,
{
    items.reverse();
    let (mut out, stats) = inclusive_scan(items, |later, earlier| op(earlier, later), exec);
    out.reverse();
    (out, stats)
}

/// `⌈log₂ n⌉`, with `0` for `n ≤ 1`.
pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}
