//! Dense f64 vectors/matrices, similarity and loss primitives, and the
//! finite-difference checker the test suite uses to validate every
//! hand-derived gradient. All math is raw `Vec<f64>`; no BLAS, no autodiff.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("temperature must be > 0, got {0}")]
    InvalidTau(f64),
    #[error("target index {index} out of range for {len} logits")]
    TargetOutOfRange { index: usize, len: usize },
}

/// Incremented whenever a similarity is requested against a zero-norm vector.
/// Freshly initialized or masked embeddings can legitimately be zero, so this
/// is an observability counter, not an error.
static ZERO_NORM_WARNINGS: AtomicU64 = AtomicU64::new(0);

pub fn zero_norm_warning_count() -> u64 {
    ZERO_NORM_WARNINGS.load(Ordering::Relaxed)
}

pub fn reset_zero_norm_warnings() {
    ZERO_NORM_WARNINGS.store(0, Ordering::Relaxed);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vec64 {
    pub data: Vec<f64>,
}

impl Vec64 {
    pub fn zeros(dim: usize) -> Self {
        Vec64 {
            data: vec![0.0; dim],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vec64 { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Deref for Vec64 {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vec64 {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Row-major dense matrix. Rows are the natural unit of access: the item
/// embedding table is indexed by item id, encoder weights by output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out = A x
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input dim");
        assert_eq!(out.len(), self.rows, "matvec output dim");
        for r in 0..self.rows {
            out[r] = dot(self.row(r), x);
        }
    }

    /// out += A^T dy (backward pass through a matvec)
    pub fn matvec_t_add(&self, dy: &[f64], out: &mut [f64]) {
        assert_eq!(dy.len(), self.rows, "matvec_t input dim");
        assert_eq!(out.len(), self.cols, "matvec_t output dim");
        for r in 0..self.rows {
            let row = self.row(r);
            let d = dy[r];
            for c in 0..self.cols {
                out[c] += row[c] * d;
            }
        }
    }

    /// self += dy ⊗ x (gradient of a matvec w.r.t. the matrix)
    pub fn add_outer(&mut self, dy: &[f64], x: &[f64]) {
        assert_eq!(dy.len(), self.rows, "add_outer row dim");
        assert_eq!(x.len(), self.cols, "add_outer col dim");
        for r in 0..self.rows {
            let d = dy[r];
            let row = self.row_mut(r);
            for (rc, xc) in row.iter_mut().zip(x.iter()) {
                *rc += d * xc;
            }
        }
    }

    /// self += a * other, elementwise
    pub fn axpy(&mut self, a: f64, other: &Mat64) {
        assert_eq!(self.data.len(), other.data.len(), "axpy shape");
        for (y, x) in self.data.iter_mut().zip(other.data.iter()) {
            *y += a * x;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.data.iter_mut() {
            *x *= a;
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += a * x
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

pub fn scale(y: &mut [f64], a: f64) {
    for yi in y.iter_mut() {
        *yi *= a;
    }
}

/// Cosine similarity, clamped to [-1, 1] to absorb rounding. A zero-norm
/// input yields 0.0 and bumps the warning counter instead of erroring.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_sim dims");
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        ZERO_NORM_WARNINGS.fetch_add(1, Ordering::Relaxed);
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Accumulates upstream * d(sim)/d(a) into `da` and upstream * d(sim)/d(b)
/// into `db`. Uses the unclamped similarity; the clamp in the forward pass
/// only absorbs last-ulp rounding so its zero-derivative region is ignored.
/// Zero-norm inputs contribute nothing (the forward value is the constant 0).
pub fn cosine_sim_backward(a: &[f64], b: &[f64], upstream: f64, da: &mut [f64], db: &mut [f64]) {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let c = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    for i in 0..a.len() {
        da[i] += upstream * (b[i] * inv - c * a[i] / (na * na));
        db[i] += upstream * (a[i] * inv - c * b[i] / (nb * nb));
    }
}

#[derive(Debug, Clone)]
pub struct InfoNceGrads {
    pub anchor: Vec64,
    pub positive: Vec64,
    pub negatives: Vec<Vec64>,
}

/// InfoNCE over cosine similarities with the positive pair included in the
/// denominator, which keeps the loss nonnegative:
///
///   loss = -log( exp(s_p/tau) / (exp(s_p/tau) + sum_i exp(s_i/tau)) )
///
/// An empty negative list is legal and gives exactly 0. Returns gradients
/// w.r.t. every input vector.
pub fn info_nce(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[Vec64],
    tau: f64,
) -> Result<(f64, InfoNceGrads), NumericsError> {
    if tau <= 0.0 {
        return Err(NumericsError::InvalidTau(tau));
    }
    let d = anchor.len();
    if positive.len() != d {
        return Err(NumericsError::DimMismatch {
            op: "info_nce positive",
            left: d,
            right: positive.len(),
        });
    }
    for n in negatives {
        if n.dim() != d {
            return Err(NumericsError::DimMismatch {
                op: "info_nce negative",
                left: d,
                right: n.dim(),
            });
        }
    }

    // logits[0] is the positive pair, logits[1..] the negatives
    let mut logits = Vec::with_capacity(1 + negatives.len());
    logits.push(cosine_sim(anchor, positive) / tau);
    for n in negatives {
        logits.push(cosine_sim(anchor, n) / tau);
    }

    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lse = m + sum_exp.ln();
    let loss = lse - logits[0];

    // d loss / d logit_i = softmax_i - [i == 0]
    let mut grads = InfoNceGrads {
        anchor: Vec64::zeros(d),
        positive: Vec64::zeros(d),
        negatives: negatives.iter().map(|_| Vec64::zeros(d)).collect(),
    };
    let p0 = (logits[0] - m).exp() / sum_exp;
    cosine_sim_backward(
        anchor,
        positive,
        (p0 - 1.0) / tau,
        &mut grads.anchor,
        &mut grads.positive,
    );
    for (i, n) in negatives.iter().enumerate() {
        let pi = (logits[1 + i] - m).exp() / sum_exp;
        cosine_sim_backward(anchor, n, pi / tau, &mut grads.anchor, &mut grads.negatives[i]);
    }

    Ok((loss, grads))
}

/// Stable log-sum-exp cross entropy. grad = softmax(logits) - one_hot(target).
pub fn softmax_cross_entropy(
    logits: &[f64],
    target: usize,
) -> Result<(f64, Vec64), NumericsError> {
    if target >= logits.len() {
        return Err(NumericsError::TargetOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lse = m + sum_exp.ln();
    let loss = lse - logits[target];

    let mut grad = Vec64::zeros(logits.len());
    for (g, l) in grad.data.iter_mut().zip(logits.iter()) {
        *g = (l - m).exp() / sum_exp;
    }
    grad.data[target] -= 1.0;
    Ok((loss, grad))
}

/// Standard normal draw via Box-Muller. Two uniform draws per sample keeps
/// the stream layout independent of any rejection loop, which matters for
/// reproducibility across platforms.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Flat coordinate access over a parameter bundle, so one finite-difference
/// checker covers plain vectors, matrices, and full model parameter sets.
pub trait Coordinates {
    fn num_coords(&self) -> usize;
    fn coord(&self, i: usize) -> f64;
    fn set_coord(&mut self, i: usize, v: f64);
}

impl Coordinates for Vec64 {
    fn num_coords(&self) -> usize {
        self.data.len()
    }
    fn coord(&self, i: usize) -> f64 {
        self.data[i]
    }
    fn set_coord(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }
}

impl Coordinates for Mat64 {
    fn num_coords(&self) -> usize {
        self.data.len()
    }
    fn coord(&self, i: usize) -> f64 {
        self.data[i]
    }
    fn set_coord(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }
}

fn finite_diff_over<P, F>(f: F, params: &P, analytic: &P, eps: f64, coords: &[usize]) -> f64
where
    P: Coordinates + Clone,
    F: Fn(&P) -> f64,
{
    assert!(
        (1e-7..=1e-3).contains(&eps),
        "step size {eps} outside the range where central differences are trustworthy in f64"
    );
    let mut p = params.clone();
    let mut max_err = 0.0f64;
    for &i in coords {
        let orig = p.coord(i);
        p.set_coord(i, orig + eps);
        let fp = f(&p);
        p.set_coord(i, orig - eps);
        let fm = f(&p);
        p.set_coord(i, orig);
        let fd = (fp - fm) / (2.0 * eps);
        let an = analytic.coord(i);
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
        if err > max_err {
            max_err = err;
        }
    }
    max_err
}

/// Central-difference check of `analytic` against `f` at every coordinate.
/// Returns max over coordinates of |fd - analytic| / max(1, |fd|, |analytic|).
pub fn finite_diff_check<P, F>(f: F, params: &P, analytic: &P, eps: f64) -> f64
where
    P: Coordinates + Clone,
    F: Fn(&P) -> f64,
{
    let coords: Vec<usize> = (0..params.num_coords()).collect();
    finite_diff_over(f, params, analytic, eps, &coords)
}

/// Same check restricted to `max_coords` coordinates sampled without
/// replacement, for parameter bundles too large to sweep exhaustively.
pub fn finite_diff_check_sampled<P, F>(
    f: F,
    params: &P,
    analytic: &P,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> f64
where
    P: Coordinates + Clone,
    F: Fn(&P) -> f64,
{
    let n = params.num_coords();
    if n <= max_coords {
        return finite_diff_check(f, params, analytic, eps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..max_coords {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(max_coords);
    finite_diff_over(f, params, analytic, eps, &idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_identical_unit_vectors() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn cosine_hand_computed() {
        // 32 / (sqrt(14) * sqrt(77))
        let s = cosine_sim(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        assert_abs_diff_eq!(s, 0.974631846, epsilon = 1e-9);
    }

    #[test]
    fn cosine_zero_norm_counts_warning() {
        reset_zero_norm_warnings();
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(zero_norm_warning_count(), 1);
    }

    #[test]
    fn cosine_backward_matches_finite_differences() {
        let a = Vec64::from_vec(vec![0.3, -1.2, 0.7, 2.0]);
        let b = Vec64::from_vec(vec![-0.5, 0.4, 1.1, -0.2]);
        let mut da = Vec64::zeros(4);
        let mut db = Vec64::zeros(4);
        cosine_sim_backward(&a, &b, 1.0, &mut da, &mut db);

        let b2 = b.clone();
        let err_a = finite_diff_check(|x: &Vec64| cosine_sim(x, &b2), &a, &da, 1e-5);
        assert!(err_a < 1e-8, "anchor grad error {err_a}");
        let a2 = a.clone();
        let err_b = finite_diff_check(|x: &Vec64| cosine_sim(&a2, x), &b, &db, 1e-5);
        assert!(err_b < 1e-8, "other grad error {err_b}");
    }

    #[test]
    fn info_nce_no_negatives_is_exactly_zero() {
        let a = Vec64::from_vec(vec![1.0, 2.0]);
        let p = Vec64::from_vec(vec![0.5, -1.0]);
        let (loss, grads) = info_nce(&a, &p, &[], 0.7).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.anchor.iter().all(|&g| g == 0.0));
        assert!(grads.positive.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn info_nce_equal_similarities_is_log_two() {
        let v = Vec64::from_vec(vec![1.0, 0.0]);
        let (loss, _) = info_nce(&v, &v, &[v.clone()], 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn info_nce_hand_evaluated_case() {
        // anchor=[1,0], positive=[1,0], negative=[0,1], tau=0.5:
        // -log(e^2 / (e^2 + e^0)) = ln(1 + e^-2)
        let a = Vec64::from_vec(vec![1.0, 0.0]);
        let n = Vec64::from_vec(vec![0.0, 1.0]);
        let (loss, _) = info_nce(&a, &a, &[n], 0.5).unwrap();
        assert_abs_diff_eq!(loss, (1.0 + (-2.0f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.126928, epsilon = 1e-6);
    }

    #[test]
    fn info_nce_rejects_bad_tau() {
        let v = Vec64::from_vec(vec![1.0]);
        assert_eq!(
            info_nce(&v, &v, &[], 0.0).unwrap_err(),
            NumericsError::InvalidTau(0.0)
        );
    }

    #[test]
    fn info_nce_grads_match_finite_differences() {
        let anchor = Vec64::from_vec(vec![0.2, -0.7, 1.3, 0.4, -0.1, 0.9, -1.5, 0.6]);
        let positive = Vec64::from_vec(vec![0.1, -0.5, 1.0, 0.2, 0.3, 0.8, -1.2, 0.5]);
        let negs = vec![
            Vec64::from_vec(vec![-0.9, 0.4, 0.3, -0.6, 1.1, -0.2, 0.7, -0.8]),
            Vec64::from_vec(vec![0.5, 0.5, -1.0, 0.9, -0.4, 0.1, 0.2, 1.3]),
        ];
        let tau = 0.4;
        let (_, grads) = info_nce(&anchor, &positive, &negs, tau).unwrap();

        let (p, ns) = (positive.clone(), negs.clone());
        let err = finite_diff_check(
            |x: &Vec64| info_nce(x, &p, &ns, tau).unwrap().0,
            &anchor,
            &grads.anchor,
            1e-5,
        );
        assert!(err < 1e-4, "anchor grad error {err}");

        let (a, ns) = (anchor.clone(), negs.clone());
        let err = finite_diff_check(
            |x: &Vec64| info_nce(&a, x, &ns, tau).unwrap().0,
            &positive,
            &grads.positive,
            1e-5,
        );
        assert!(err < 1e-4, "positive grad error {err}");

        for k in 0..negs.len() {
            let (a, p, ns) = (anchor.clone(), positive.clone(), negs.clone());
            let err = finite_diff_check(
                |x: &Vec64| {
                    let mut ns = ns.clone();
                    ns[k] = x.clone();
                    info_nce(&a, &p, &ns, tau).unwrap().0
                },
                &negs[k],
                &grads.negatives[k],
                1e-5,
            );
            assert!(err < 1e-4, "negative {k} grad error {err}");
        }
    }

    #[test]
    fn cross_entropy_uniform_two_way() {
        let (loss, _) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        // log(1 + 2 e^-10)
        let (loss, _) = softmax_cross_entropy(&[10.0, 0.0, 0.0], 0).unwrap();
        assert_abs_diff_eq!(loss, (1.0 + 2.0 * (-10.0f64).exp()).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(loss, 9.08e-5, epsilon = 1e-7);
    }

    #[test]
    fn cross_entropy_grad_sums_to_zero() {
        let logits = [3.0, -1.0, 0.5, 2.2, -4.0];
        let (_, grad) = softmax_cross_entropy(&logits, 2).unwrap();
        let s: f64 = grad.iter().sum();
        assert!(s.abs() < 1e-12, "grad sum {s}");
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        assert_eq!(
            softmax_cross_entropy(&[0.0, 0.0], 2).unwrap_err(),
            NumericsError::TargetOutOfRange { index: 2, len: 2 }
        );
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let logits = Vec64::from_vec(vec![3.0, -1.0, 0.5, 2.2, -4.0]);
        let (_, grad) = softmax_cross_entropy(&logits, 3).unwrap();
        let err = finite_diff_check(
            |x: &Vec64| softmax_cross_entropy(x, 3).unwrap().0,
            &logits,
            &grad,
            1e-5,
        );
        assert!(err < 1e-9, "CE grad error {err}");
    }

    #[test]
    fn finite_diff_check_quadratic() {
        let x = Vec64::from_vec(vec![3.0]);
        let g = Vec64::from_vec(vec![6.0]);
        let err = finite_diff_check(|p: &Vec64| p[0] * p[0], &x, &g, 1e-5);
        assert!(err < 1e-9, "quadratic fd error {err}");
    }

    #[test]
    fn finite_diff_sampled_subset_agrees() {
        let x = Vec64::from_vec((0..50).map(|i| i as f64 * 0.1).collect());
        let g = Vec64::from_vec(x.iter().map(|v| 2.0 * v).collect());
        let f = |p: &Vec64| dot(p, p);
        let err = finite_diff_check_sampled(f, &x, &g, 1e-5, 10, 7);
        assert!(err < 1e-8, "sampled fd error {err}");
    }

    #[test]
    fn standard_normal_moments_are_sane() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
