//! Shared numerical kernels: stable elementwise maps, covariance, power
//! iteration and a central-difference gradient checker.
//!
//! Random numbers come from [`RngStream`], a ChaCha8 generator keyed by a
//! `(seed, stream)` pair. ChaCha8 output is specified bit-for-bit, so a seed
//! reproduces the same sequence on every platform.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VsdeError};
use crate::scalar::Scalar;

/// Seeded random stream. Streams with the same seed but different stream ids
/// are independent ChaCha8 streams and never share state.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream seeded from the next draw of this one.
    pub fn fork(&mut self) -> RngStream {
        let seed = self.rng.next_u64();
        RngStream::new(seed, 0)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        items.shuffle(&mut self.rng);
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Logistic function without overflow; `t` must be finite.
pub fn stable_sigmoid<T: Scalar>(t: T) -> Result<T> {
    if !t.is_finite() {
        return Err(VsdeError::Domain(format!("sigmoid of non-finite value {t}")));
    }
    Ok(sigmoid(t))
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// `sigma(t) * (1 - sigma(t))` evaluated as `sigma(t) * sigma(-t)`, which keeps
/// full relative precision in both tails.
#[inline]
pub(crate) fn sigmoid_slope<T: Scalar>(t: T) -> T {
    sigmoid(t) * sigmoid(-t)
}

/// `log(1 + e^x)`, floored at the smallest positive normal so the result is
/// never exactly zero.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    let y = if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    y.max(T::min_positive_value())
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse<T: Scalar>(y: T) -> T {
    // log(e^y - 1) = y + log(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

pub fn softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(VsdeError::Domain("softmax of an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(VsdeError::Domain(format!("softmax of non-finite entry {bad}")));
    }
    let mut out = vec![T::zero(); v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into<T: Scalar>(v: &[T], out: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Inner product with four independent accumulators, so the adds pipeline
/// instead of forming one serial chain. Deterministic for a given length.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sum that depends only on the multiset of terms: terms are sorted before
/// accumulation, so any reordering of the input gives a bit-identical result.
pub(crate) fn order_free_sum<T: Scalar>(terms: &mut [T]) -> T {
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    terms.iter().copied().sum()
}

/// Unbiased (`N - 1`) sample covariance of the columns of an `N x K` matrix.
///
/// Exactly invariant under row permutations.
pub fn sample_covariance<T: Scalar>(s: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let (n, k) = s.dim();
    if n < 2 {
        return Err(VsdeError::InsufficientData {
            what: "sample covariance",
            got: n,
            need: 2,
        });
    }
    let nt = T::from_usize(n).unwrap();
    let mut buf = vec![T::zero(); n];
    let means: Vec<T> = (0..k)
        .map(|j| {
            buf.iter_mut().zip(s.column(j)).for_each(|(b, &x)| *b = x);
            order_free_sum(&mut buf) / nt
        })
        .collect();
    let denom = T::from_usize(n - 1).unwrap();
    let mut cov = Array2::zeros((k, k));
    for i in 0..k {
        for j in i..k {
            for (r, b) in buf.iter_mut().enumerate() {
                *b = (s[[r, i]] - means[i]) * (s[[r, j]] - means[j]);
            }
            let c = order_free_sum(&mut buf) / denom;
            cov[[i, j]] = c;
            cov[[j, i]] = c;
        }
    }
    Ok(cov)
}

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 10_000;

/// Unit eigenvector of the largest-magnitude eigenvalue by power iteration.
///
/// Starts from the normalized all-ones vector. If that start lies in the null
/// space, the standard basis vectors are tried in order. Iteration stops when
/// the iterate moves less than [`POWER_TOLERANCE`] (up to sign), or less than
/// 64 ulps when the scalar type cannot resolve that tolerance.
pub fn leading_eigenvector<T: Scalar>(m: ArrayView2<'_, T>) -> Result<Vec<T>> {
    let (rows, cols) = m.dim();
    if rows != cols || rows == 0 {
        return Err(VsdeError::Domain(format!(
            "leading eigenvector needs a non-empty square matrix, got {rows}x{cols}"
        )));
    }
    let k = rows;
    let scale = m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
    if !scale.is_finite() {
        return Err(VsdeError::Domain("matrix has non-finite entries".into()));
    }
    let sym_tol = T::lit(1e-9) * scale.max(T::one());
    for i in 0..k {
        for j in (i + 1)..k {
            if (m[[i, j]] - m[[j, i]]).abs() > sym_tol {
                return Err(VsdeError::Domain(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[[i, j]],
                    m[[j, i]]
                )));
            }
        }
    }

    let ones = vec![T::one() / T::from_usize(k).unwrap().sqrt(); k];
    if scale == T::zero() {
        return Ok(ones);
    }
    let starts = std::iter::once(ones).chain((0..k).map(|i| {
        let mut e = vec![T::zero(); k];
        e[i] = T::one();
        e
    }));
    let tol = T::lit(POWER_TOLERANCE).max(T::epsilon() * T::lit(64.0));
    let null_tol = T::lit(1e-14) * scale;
    for start in starts {
        let mut v = start;
        let mut next = vec![T::zero(); k];
        let mut change = T::infinity();
        let mut null_start = false;
        for iteration in 0..POWER_MAX_ITERATIONS {
            for (i, out) in next.iter_mut().enumerate() {
                *out = (0..k).map(|j| m[[i, j]] * v[j]).sum();
            }
            let norm = next.iter().map(|x| *x * *x).sum::<T>().sqrt();
            if norm <= null_tol {
                if iteration == 0 {
                    null_start = true;
                    break;
                }
                // Iterate collapsed after some steps; v is already an eigenvector of 0.
                return Ok(v);
            }
            next.iter_mut().for_each(|x| *x /= norm);
            let plus = distance(&next, &v, T::one());
            let minus = distance(&next, &v, -T::one());
            change = plus.min(minus);
            std::mem::swap(&mut v, &mut next);
            if change < tol {
                return Ok(v);
            }
        }
        if !null_start {
            return Err(VsdeError::Convergence {
                iterations: POWER_MAX_ITERATIONS,
                last_change: change.as_f64(),
            });
        }
    }
    // Every start is in the null space, so M v = 0 for the basis and M = 0.
    Ok(vec![T::one() / T::from_usize(k).unwrap().sqrt(); k])
}

fn distance<T: Scalar>(a: &[T], b: &[T], sign: T) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - sign * y) * (x - sign * y))
        .sum::<T>()
        .sqrt()
}

pub const FINITE_DIFF_STEP: f64 = 1e-5;

/// Largest relative disagreement between a claimed gradient `g` and central
/// differences of `f` at `theta`, using `|g_i - fd_i| / (|g_i| + 1e-8)`.
pub fn finite_diff_check<T, F>(mut f: F, theta: &[T], g: &[T]) -> Result<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    if theta.len() != g.len() {
        return Err(VsdeError::Shape(format!(
            "parameter length {} vs gradient length {}",
            theta.len(),
            g.len()
        )));
    }
    let h = T::lit(FINITE_DIFF_STEP);
    let mut probe = theta.to_vec();
    let mut worst = T::zero();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = eval_finite(&mut f, &probe, i)?;
        probe[i] = theta[i] - h;
        let down = eval_finite(&mut f, &probe, i)?;
        probe[i] = theta[i];
        let fd = (up - down) / (h + h);
        let rel = (g[i] - fd).abs() / (g[i].abs() + T::lit(1e-8));
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn eval_finite<T: Scalar, F: FnMut(&[T]) -> Result<T>>(f: &mut F, x: &[T], i: usize) -> Result<T> {
    let v = f(x)?;
    if !v.is_finite() {
        return Err(VsdeError::Evaluation(format!(
            "non-finite value {v} while perturbing coordinate {i}"
        )));
    }
    Ok(v)
}
