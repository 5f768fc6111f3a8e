//! Shifted orthonormal Legendre polynomials on `[0, 1]` and Gauss-Legendre rules.
//!
//! The basis satisfies `∫₀¹ P_i P_j = δ_ij`, with `P_j(x) = √(2j+1) L_j(2x − 1)` where
//! `L_j` is the classical Legendre polynomial on `[-1, 1]`. Everything is evaluated
//! through the three-term recurrence; no explicit monomial coefficients are formed.

use serde::Serialize;

use crate::error::{Error, Result};

/// Default highest supported degree.
pub const DEFAULT_MAX_DEGREE: usize = 64;

/// Largest supported Gauss-Legendre node count.
pub const MAX_NODES: usize = 64;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Classical Legendre values `L_0(t) ..= L_n(t)` written into `out[..=n]`.
fn classical_values(t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = t;
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0) * t * out[n] - nf * out[n - 1]) / (nf + 1.0);
    }
}

/// `(L_n(t), L_{n-1}(t))` by the recurrence, for `n >= 1`.
fn classical_pair(n: usize, t: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut curr = t;
    for j in 1..n {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * t * curr - jf * prev) / (jf + 1.0);
        prev = curr;
        curr = next;
    }
    (curr, prev)
}

/// Unevaluated sum `hi + lo` carrying about 106 bits.
#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Self { hi: s, lo: err }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        Self { hi: s, lo: lo - (s - hi) }
    }

    fn add(self, o: Self) -> Self {
        let s = Self::two_sum(self.hi, o.hi);
        Self::renorm(s.hi, s.lo + self.lo + o.lo)
    }

    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }

    fn mul_f64(self, b: f64) -> Self {
        let p = self.hi * b;
        let err = self.hi.mul_add(b, -p);
        Self::renorm(p, err + self.lo * b)
    }

    fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let err = self.hi.mul_add(o.hi, -p);
        Self::renorm(p, err + self.hi * o.lo + self.lo * o.hi)
    }

    fn div_f64(self, b: f64) -> Self {
        let q1 = self.hi / b;
        let r = self.add(Self::from_f64(q1).mul_f64(b).neg());
        Self::renorm(q1, r.hi / b)
    }

    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul_f64(q1).neg());
        Self::renorm(q1, r.hi / o.hi)
    }
}

/// Gauss weight on `[0, 1]` for the root `t` of `L_k`, as `1 / ((1 − t²) L_k'(t)²)`.
///
/// The derivative form has O(1) sensitivity to the last-ulp error of `t`; the recurrence
/// runs in double-double so the weight is correct to about one ulp.
fn unit_interval_weight(k: usize, t: f64) -> f64 {
    let td = DoubleDouble::from_f64(t);
    let mut prev = DoubleDouble::from_f64(1.0);
    let mut curr = td;
    for j in 1..k {
        let jf = j as f64;
        let next = curr
            .mul(td)
            .mul_f64(2.0 * jf + 1.0)
            .add(prev.mul_f64(-jf))
            .div_f64(jf + 1.0);
        prev = curr;
        curr = next;
    }
    let one_minus_t2 = DoubleDouble::from_f64(1.0).add(td.mul(td).neg());
    // L_k' = k (L_{k-1} − t L_k) / (1 − t²)
    let deriv = prev
        .add(curr.mul(td).neg())
        .mul_f64(k as f64)
        .div(one_minus_t2);
    let denom = one_minus_t2.mul(deriv).mul(deriv);
    DoubleDouble::from_f64(1.0).div(denom).hi
}

/// The orthonormal shifted Legendre basis up to `max_degree`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegendreBasis {
    max_degree: usize,
}

impl Default for LegendreBasis {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_DEGREE)
    }
}

impl LegendreBasis {
    pub fn new(max_degree: usize) -> Self {
        Self { max_degree }
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    fn check(&self, j: usize, x: f64) -> Result<()> {
        if j > self.max_degree {
            return Err(Error::DegreeOutOfRange {
                degree: j,
                max_degree: self.max_degree,
            });
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::AbscissaOutOfRange(x));
        }
        Ok(())
    }

    /// `P_j(x)`.
    pub fn eval(&self, j: usize, x: f64) -> Result<f64> {
        self.check(j, x)?;
        let t = 2.0 * x - 1.0;
        let lj = match j {
            0 => 1.0,
            _ => classical_pair(j, t).0,
        };
        Ok((2.0 * j as f64 + 1.0).sqrt() * lj)
    }

    /// `∫₀^c P_j(x) dx`, in closed form from `(2j+1) L_j = L'_{j+1} − L'_{j−1}`.
    pub fn integral(&self, j: usize, c: f64) -> Result<f64> {
        self.check(j, c)?;
        Ok(integral_unchecked(j, c))
    }

    /// `P_0(x) ..= P_{out.len()-1}(x)` in one recurrence sweep. No range checks.
    pub fn eval_all(x: f64, out: &mut [f64]) {
        classical_values(2.0 * x - 1.0, out);
        for (j, v) in out.iter_mut().enumerate() {
            *v *= (2.0 * j as f64 + 1.0).sqrt();
        }
    }

    /// `∫₀^c P_j` for `j = 0 .. out.len()`. No range checks.
    pub fn integral_all(c: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        let mut l = vec![0.0; out.len() + 1];
        classical_values(2.0 * c - 1.0, &mut l);
        out[0] = c;
        for j in 1..out.len() {
            out[j] = (l[j + 1] - l[j - 1]) / (2.0 * (2.0 * j as f64 + 1.0).sqrt());
        }
    }
}

fn integral_unchecked(j: usize, c: f64) -> f64 {
    if j == 0 {
        return c;
    }
    let t = 2.0 * c - 1.0;
    let (upper, _) = classical_pair(j + 1, t);
    let lower = if j == 1 { 1.0 } else { classical_pair(j - 1, t).0 };
    (upper - lower) / (2.0 * (2.0 * j as f64 + 1.0).sqrt())
}

/// Gauss-Legendre rule on `[0, 1]`: the `k` zeros of `P_k` and their weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureRule {
    k: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Approximates `∫₀¹ f`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&c, &b)| b * f(c))
            .sum()
    }
}

/// Gauss-Legendre rule with `k` nodes (order `2k`) on `[0, 1]`.
///
/// Nodes come from Newton's method on `L_k` started at Chebyshev-like points;
/// weights use `2 (1 − t²) / (k L_{k−1}(t))²` halved for the unit interval.
pub fn gauss_rule(k: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_NODES).contains(&k) {
        return Err(Error::NodeCountOutOfRange(k));
    }
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        // i-th largest root on [-1, 1]
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (lk, lkm1) = classical_pair(k, t);
            let deriv = kf * (lkm1 - t * lk) / (1.0 - t * t);
            let dt = lk / deriv;
            t -= dt;
            if dt.abs() <= NEWTON_TOL {
                break;
            }
        }
        let w = unit_interval_weight(k, t);
        // mirror pair: +t -> index k-1-i, -t -> index i
        let hi = 0.5 * (1.0 + t);
        let lo = 0.5 * (1.0 - t);
        nodes[k - 1 - i] = hi;
        nodes[i] = lo;
        weights[k - 1 - i] = w;
        weights[i] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.5;
    }
    Ok(QuadratureRule { k, nodes, weights })
}
