//! Clamped B-spline bases.
//!
//! A [`KnotVector`] holds a clamped knot sequence on `[a, b]` with `(M+1)`-fold
//! boundary knots and `K` interior knots, giving `L = K + M + 1` basis
//! functions. Evaluation uses the triangular Cox–de Boor recursion on the
//! knot span containing `u`; derivatives come from the degree-lowering
//! recurrence, and the Gram matrix `H = ∫ B Bᵀ` is integrated exactly with
//! per-span Gauss–Legendre quadrature.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spline degree. The recursion uses fixed-size scratch.
pub const MAX_DEGREE: usize = 10;

/// Relative padding applied to the data range by [`make_knots`].
pub const BOUNDARY_PAD: f64 = 1e-6;

/// Mesh-ratio bound used to check quasi-uniformity of generated knots.
pub const QUASI_UNIFORM_BOUND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    lower: f64,
    upper: f64,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Builds a clamped knot vector on `[lower, upper]` with the given interior knots.
    pub fn clamped(lower: f64, upper: f64, interior: Vec<f64>, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Config(format!(
                "spline degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::Domain(format!(
                "knot boundary must satisfy a < b, got [{lower}, {upper}]"
            )));
        }
        if interior.iter().any(|&c| !(c > lower && c < upper)) {
            return Err(Error::Domain(
                "interior knots must lie strictly inside (a, b)".into(),
            ));
        }
        if interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("interior knots must be non-decreasing".into()));
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * degree + 2);
        knots.extend(std::iter::repeat(lower).take(degree + 1));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat(upper).take(degree + 1));
        Ok(Self {
            degree,
            lower,
            upper,
            interior,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// The full clamped sequence including repeated boundary knots.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `L = K + M + 1`.
    pub fn n_basis(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    /// Ratio of the widest to the narrowest knot span.
    pub fn mesh_ratio(&self) -> f64 {
        let mut breaks = Vec::with_capacity(self.interior.len() + 2);
        breaks.push(self.lower);
        breaks.extend_from_slice(&self.interior);
        breaks.push(self.upper);
        let widths: Vec<f64> = breaks.windows(2).map(|w| w[1] - w[0]).collect();
        let max = widths.iter().cloned().fold(0.0, f64::max);
        let min = widths.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn is_quasi_uniform(&self) -> bool {
        self.mesh_ratio() <= QUASI_UNIFORM_BOUND
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lower && u <= self.upper
    }

    /// Clamps `u` into `[a, b]`; the flag reports whether clamping happened.
    pub fn clamp(&self, u: f64) -> (f64, bool) {
        if u < self.lower {
            (self.lower, true)
        } else if u > self.upper {
            (self.upper, true)
        } else {
            (u, false)
        }
    }

    /// Index `i` of the non-empty span `[t_i, t_{i+1})` used to evaluate at `u`.
    ///
    /// Values left of `a` map to the first span and values at or right of `b`
    /// to the last one, which is what polynomial extension needs.
    pub fn span(&self, u: f64) -> usize {
        let last = self.n_basis() - 1;
        let count = self.knots.partition_point(|&t| t <= u);
        count.saturating_sub(1).clamp(self.degree, last)
    }

    /// Fills `out[..=degree]` with the basis functions of the given degree
    /// that are nonzero on `span`, i.e. `B_{span-degree} .. B_{span}`.
    fn basis_funs(&self, span: usize, u: f64, degree: usize, out: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Nonzero basis values at a point already inside `[a, b]`.
    ///
    /// Writes `M+1` values into `out` and returns the index of the first one.
    pub fn local_basis(&self, u: f64, out: &mut [f64]) -> usize {
        let span = self.span(u);
        self.basis_funs(span, u, self.degree, out);
        span - self.degree
    }

    /// Nonzero basis derivatives at a point already inside `[a, b]`.
    pub fn local_basis_deriv(&self, u: f64, out: &mut [f64]) -> usize {
        let m = self.degree;
        let span = self.span(u);
        let first = span - m;
        out[..=m].iter_mut().for_each(|v| *v = 0.0);
        if m == 0 {
            return first;
        }
        let mut lower = [0.0; MAX_DEGREE + 1];
        // lower[r] holds B_{first+1+r, m-1}(u) for r in 0..m
        self.basis_funs(span, u, m - 1, &mut lower);
        let t = &self.knots;
        let mf = m as f64;
        for r in 0..=m {
            let j = first + r;
            let mut value = 0.0;
            if r >= 1 {
                let denom = t[j + m] - t[j];
                if denom > 0.0 {
                    value += mf * lower[r - 1] / denom;
                }
            }
            if r < m {
                let denom = t[j + m + 1] - t[j + 1];
                if denom > 0.0 {
                    value -= mf * lower[r] / denom;
                }
            }
            out[r] = value;
        }
        first
    }

    /// Full basis vector `B(u)` with `u` clamped into `[a, b]`.
    pub fn eval(&self, u: f64) -> DVector<f64> {
        let (u, _) = self.clamp(u);
        self.scatter(u, |kv, u, buf| kv.local_basis(u, buf))
    }

    /// Full derivative vector `Ḃ(u)`; zero outside `[a, b]` where the
    /// clamped basis is constant.
    pub fn eval_deriv(&self, u: f64) -> DVector<f64> {
        if !self.contains(u) {
            return DVector::zeros(self.n_basis());
        }
        self.scatter(u, |kv, u, buf| kv.local_basis_deriv(u, buf))
    }

    /// Basis vector with the boundary polynomial pieces extended beyond
    /// `[a, b]` instead of clamping. Used for reporting fitted curves on
    /// grids wider than the observed index range.
    pub fn eval_extended(&self, u: f64) -> DVector<f64> {
        self.scatter(u, |kv, u, buf| {
            let span = kv.span(u);
            kv.basis_funs(span, u, kv.degree, buf);
            span - kv.degree
        })
    }

    fn scatter(
        &self,
        u: f64,
        local: impl Fn(&Self, f64, &mut [f64]) -> usize,
    ) -> DVector<f64> {
        let mut buf = [0.0; MAX_DEGREE + 1];
        let first = local(self, u, &mut buf);
        let mut full = DVector::zeros(self.n_basis());
        for (r, v) in buf[..=self.degree].iter().enumerate() {
            full[first + r] = *v;
        }
        full
    }

    /// Exact Gram matrix `H = ∫_a^b B(u) Bᵀ(u) du`.
    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.degree;
        let l = self.n_basis();
        let (nodes, weights) = gauss_legendre(m + 1);
        let mut h = DMatrix::zeros(l, l);
        let mut buf = [0.0; MAX_DEGREE + 1];
        for span in m..l {
            let (t0, t1) = (self.knots[span], self.knots[span + 1]);
            if t1 <= t0 {
                continue;
            }
            let half = 0.5 * (t1 - t0);
            let mid = 0.5 * (t1 + t0);
            for (x, w) in nodes.iter().zip(&weights) {
                let u = mid + half * x;
                self.basis_funs(span, u, m, &mut buf);
                let first = span - m;
                for r in 0..=m {
                    for s in 0..=m {
                        h[(first + r, first + s)] += half * w * buf[r] * buf[s];
                    }
                }
            }
        }
        h
    }
}

/// Builds a clamped knot vector from observed index values.
///
/// The boundary is the observed range padded by [`BOUNDARY_PAD`] on each
/// side; the `k` interior knots are equally spaced over the unpadded range.
pub fn make_knots(index_values: &[f64], k: usize, degree: usize) -> Result<KnotVector> {
    if index_values.is_empty() {
        return Err(Error::Data("no index values to place knots on".into()));
    }
    let (min, max) = index_values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::Data("non-finite index values".into()));
    }
    if max <= min {
        return Err(Error::DegenerateIndexRange(min));
    }
    let width = max - min;
    let interior = (1..=k)
        .map(|j| min + width * j as f64 / (k + 1) as f64)
        .collect();
    let pad = BOUNDARY_PAD * width;
    KnotVector::clamped(min - pad, max + pad, interior, degree)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    if n == 0 {
        return (nodes, weights);
    }
    let half = n.div_ceil(2);
    for i in 0..half {
        // Chebyshev-like starting guess for the i-th largest root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            deriv = dp;
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        if dp != 0.0 {
            deriv = dp;
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
