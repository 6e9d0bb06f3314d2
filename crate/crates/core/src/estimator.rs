//! Penalized least-squares estimation by alternating a closed-form α step
//! with a damped Gauss–Newton φ step under a local quadratic approximation
//! of the penalty.
//!
//! Every outer iteration rebuilds the knots from the current index values,
//! solves the ridge-type system for `α = (θ, γ)`, moves `φ`, and zeroes
//! components that fall below the threshold `ε`. Zeroed components leave
//! the active set for good.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{beta_from_phi, h_norm, Coefficients, Dataset, IndexParam};
use crate::penalty::{build_weight_matrices, PenaltySpec};
use crate::spline::{make_knots, KnotVector, MAX_DEGREE};

/// Largest `‖φ‖` a φ step may reach.
pub const PHI_BALL_RADIUS: f64 = 1.0 - 1e-6;

/// Radius used when a starting direction has to be pulled into the ball.
const START_RADIUS: f64 = 0.99;

/// Number of multi-start candidates refined by full alternation.
const REFINED_STARTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Zero threshold `ε`.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Convergence tolerance on the max-abs change of `(φ, θ, γ)`.
    pub tol: f64,
    /// Relative ridge added to near-singular normal equations.
    pub jitter: f64,
    /// Resolved per-component penalty; `None` fits without penalty.
    pub penalty: Option<PenaltySpec>,
    /// Spline degree `M`.
    pub degree: usize,
    /// Interior knot count `K`.
    pub knots: usize,
    /// Gauss–Newton iterations inside one φ step.
    pub phi_iter: usize,
    pub max_halvings: usize,
    /// Points in the reporting grid for the fitted coefficient functions.
    pub report_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            max_iter: 50,
            tol: 1e-4,
            jitter: 1e-8,
            penalty: None,
            degree: 3,
            knots: 2,
            phi_iter: 1,
            max_halvings: 30,
            report_points: 20,
        }
    }
}

impl FitConfig {
    pub fn with_knots(mut self, knots: usize) -> Self {
        self.knots = knots;
        self
    }

    pub fn with_penalty(mut self, penalty: Option<PenaltySpec>) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config(
                "need ε > 0, tolerance > 0 and at least one iteration".into(),
            ));
        }
        if self.degree > MAX_DEGREE {
            return Err(Error::Config(format!("degree {} too large", self.degree)));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        if let Some(p) = &self.penalty {
            p.validate()?;
        }
        Ok(())
    }

    /// Basis dimension `L` implied by the knot count and degree.
    pub fn n_basis(&self) -> usize {
        self.knots + self.degree + 1
    }
}

/// Active (nonzero) components of `(φ, θ, γ)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub phi: Vec<bool>,
    pub theta: Vec<bool>,
    pub gamma: Vec<bool>,
}

impl Support {
    pub fn full(n_phi: usize, d: usize, q: usize) -> Self {
        Self {
            phi: vec![true; n_phi],
            theta: vec![true; d],
            gamma: vec![true; q],
        }
    }

    pub fn for_data(data: &Dataset) -> Self {
        Self::full(data.p() - 1, data.d(), data.q())
    }

    /// Support of `β`: the anchor coordinate `β₁` is always active.
    pub fn beta(&self) -> Vec<bool> {
        std::iter::once(true).chain(self.phi.iter().copied()).collect()
    }

    /// Builds a support from a `β` pattern; `β₁` must be active.
    pub fn from_beta(beta: &[bool], theta: Vec<bool>, gamma: Vec<bool>) -> Result<Self> {
        match beta.first() {
            Some(true) => Ok(Self {
                phi: beta[1..].to_vec(),
                theta,
                gamma,
            }),
            _ => Err(Error::Domain(
                "the first index coordinate anchors β and cannot be excluded".into(),
            )),
        }
    }

    fn alpha_len(&self, l: usize) -> usize {
        self.theta.iter().filter(|a| **a).count() + l * self.gamma.iter().filter(|a| **a).count()
    }

    /// Free parameters of a fit on this support.
    pub fn n_params(&self, l: usize) -> usize {
        self.alpha_len(l) + self.phi.iter().filter(|a| **a).count()
    }
}

/// Outcome of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Coefficients,
    /// Unit-norm index direction with first nonzero entry positive.
    pub beta: DVector<f64>,
    /// Knots the γ coefficients refer to.
    pub knots: KnotVector,
    pub support: Support,
    pub iterations: usize,
    pub converged: bool,
    /// φ steps that could not decrease the objective.
    pub stalled_steps: usize,
    pub rss: f64,
    /// Penalized objective `RSS + n Σ p_λ(·)` with the fitted penalty.
    pub objective: f64,
    /// Observations whose final index fell outside the knot range.
    pub clamped: usize,
    /// Surrogate objective before the α step, after it, and after the φ step,
    /// one triple per outer iteration.
    pub surrogate_trace: Vec<[f64; 3]>,
    pub grid: Vec<f64>,
    /// `ĝ_k` on [`FitResult::grid`], one column per coefficient function.
    pub g_on_grid: DMatrix<f64>,
}

impl FitResult {
    pub fn theta(&self) -> &DVector<f64> {
        &self.coefficients.theta
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.coefficients.gamma
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.coefficients.phi
    }

    /// `ĝ_k(u)`; the boundary polynomial pieces are extended beyond the knot range.
    pub fn eval_g(&self, k: usize, u: f64) -> f64 {
        self.knots.eval_extended(u).dot(&self.coefficients.gamma.column(k))
    }

    /// Fitted values `θ̂ᵀUᵢ + Σ_k ĝ_k(β̂ᵀXᵢ) Z_{ik}` with clamped basis evaluation.
    pub fn predict(&self, data: &Dataset) -> DVector<f64> {
        let (values, _) = fitted_values(data, &self.knots, &self.beta, &self.coefficients);
        values
    }

    pub fn residuals(&self, data: &Dataset) -> DVector<f64> {
        data.y() - self.predict(data)
    }

    /// `‖γ̂_k‖_H` for each coefficient function.
    pub fn gamma_norms(&self) -> Vec<f64> {
        let h = self.knots.gram();
        (0..self.coefficients.gamma.ncols())
            .map(|k| h_norm(&self.coefficients.gamma.column(k).into_owned(), &h))
            .collect()
    }
}

fn fitted_values(data: &Dataset, kv: &KnotVector, beta: &DVector<f64>, coef: &Coefficients) -> (DVector<f64>, usize) {
    let index = data.index_values(beta);
    let m = kv.degree();
    let mut buf = [0.0; MAX_DEGREE + 1];
    let mut clamped = 0;
    let mut out = if data.d() > 0 {
        data.u() * &coef.theta
    } else {
        DVector::zeros(data.n())
    };
    for i in 0..data.n() {
        let (u, was) = kv.clamp(index[i]);
        clamped += was as usize;
        let first = kv.local_basis(u, &mut buf);
        let mut f = 0.0;
        for k in 0..data.q() {
            let zk = data.z()[(i, k)];
            if zk == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for r in 0..=m {
                s += buf[r] * coef.gamma[(first + r, k)];
            }
            f += zk * s;
        }
        out[i] += f;
    }
    (out, clamped)
}

/// Normal equations `(Σ W̃ᵢW̃ᵢᵀ, Σ W̃ᵢYᵢ)` of the active-set design
/// `[U_active | Z_k B(βᵀX) for active k]`, accumulated row by row from the
/// `M+1` nonzero basis values per block.
fn normal_equations(
    data: &Dataset,
    kv: &KnotVector,
    beta: &DVector<f64>,
    support: &Support,
) -> (DMatrix<f64>, DVector<f64>) {
    let l = kv.n_basis();
    let m = kv.degree();
    let theta_cols: Vec<usize> = (0..data.d()).filter(|&h| support.theta[h]).collect();
    let gamma_blocks: Vec<usize> = (0..data.q()).filter(|&k| support.gamma[k]).collect();
    let ncol = theta_cols.len() + l * gamma_blocks.len();
    let mut a = DMatrix::zeros(ncol, ncol);
    let mut rhs = DVector::zeros(ncol);
    let index = data.index_values(beta);
    let mut buf = [0.0; MAX_DEGREE + 1];
    let mut cols: Vec<usize> = Vec::with_capacity(ncol);
    let mut vals: Vec<f64> = Vec::with_capacity(ncol);
    for i in 0..data.n() {
        cols.clear();
        vals.clear();
        for (c, &h) in theta_cols.iter().enumerate() {
            cols.push(c);
            vals.push(data.u()[(i, h)]);
        }
        let (u, _) = kv.clamp(index[i]);
        let first = kv.local_basis(u, &mut buf);
        for (b, &k) in gamma_blocks.iter().enumerate() {
            let zk = data.z()[(i, k)];
            let off = theta_cols.len() + b * l + first;
            for (r, bv) in buf.iter().enumerate().take(m + 1) {
                cols.push(off + r);
                vals.push(zk * bv);
            }
        }
        let yi = data.y()[i];
        for (s, (&cs, &vs)) in cols.iter().zip(&vals).enumerate() {
            rhs[cs] += vs * yi;
            for (&ct, &vt) in cols[s..].iter().zip(&vals[s..]) {
                a[(cs, ct)] += vs * vt;
            }
        }
    }
    // column indices increase within a row, so only the upper triangle was accumulated
    for c in 0..ncol {
        for r in c + 1..ncol {
            let upper = a[(c, r)];
            a[(r, c)] = upper;
        }
    }
    (a, rhs)
}

fn unpack_alpha(alpha: &DVector<f64>, d: usize, q: usize, l: usize, support: &Support) -> (DVector<f64>, DMatrix<f64>) {
    let mut theta = DVector::zeros(d);
    let mut gamma = DMatrix::zeros(l, q);
    let mut pos = 0;
    for h in 0..d {
        if support.theta[h] {
            theta[h] = alpha[pos];
            pos += 1;
        }
    }
    for k in 0..q {
        if support.gamma[k] {
            gamma.column_mut(k).copy_from(&alpha.rows(pos, l));
            pos += l;
        }
    }
    (theta, gamma)
}

/// Active-set block of `Σ(α)` scaled by `n/2`.
fn alpha_penalty(
    spec: Option<&PenaltySpec>,
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    h: &DMatrix<f64>,
    support: &Support,
    n: usize,
) -> Result<DMatrix<f64>> {
    let l = h.nrows();
    let dim = support.alpha_len(l);
    let mut pen = DMatrix::zeros(dim, dim);
    let Some(spec) = spec else { return Ok(pen) };
    if spec.is_zero() {
        return Ok(pen);
    }
    let w = build_weight_matrices(phi, theta, gamma, spec, h)?;
    let half_n = n as f64 / 2.0;
    let mut pos = 0;
    for (hh, active) in support.theta.iter().enumerate() {
        if *active {
            pen[(pos, pos)] = half_n * w.theta_weights[hh];
            pos += 1;
        }
    }
    for (k, active) in support.gamma.iter().enumerate() {
        if *active {
            pen.view_mut((pos, pos), (l, l)).copy_from(&(h * (half_n * w.gamma_weights[k])));
            pos += l;
        }
    }
    Ok(pen)
}

/// Cholesky solve, retrying once with a relative ridge when the system is
/// numerically singular.
fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, jitter: f64) -> Result<(DVector<f64>, bool)> {
    if a.nrows() == 0 {
        return Ok((DVector::zeros(0), false));
    }
    if let Some(ch) = a.clone().cholesky() {
        let diag = ch.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if lo > 0.0 && (lo / hi).powi(2) > 1e-14 {
            return Ok((ch.solve(b), false));
        }
    }
    let mean_diag = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / a.nrows() as f64;
    if !(mean_diag > 0.0) || !mean_diag.is_finite() {
        return Err(Error::SingularDesign(format!(
            "{}×{} system has no information",
            b.len(),
            b.len()
        )));
    }
    let ridge = jitter * mean_diag;
    let mut a = a;
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    match a.cholesky() {
        Some(ch) => Ok((ch.solve(b), true)),
        None => Err(Error::SingularDesign(format!(
            "{}×{} system after ridge {ridge:.3e}",
            b.len(),
            b.len()
        ))),
    }
}

/// Result of the closed-form α step.
#[derive(Debug, Clone)]
pub struct AlphaStep {
    pub theta: DVector<f64>,
    pub gamma: DMatrix<f64>,
    /// Whether the ridge jitter had to be added.
    pub jittered: bool,
}

/// Closed-form α step on the active set:
/// `α̂ = (Σ W̃ᵢW̃ᵢᵀ + (n/2) Σ(α⁰))⁻¹ Σ W̃ᵢYᵢ`, inactive components zero.
#[allow(clippy::too_many_arguments)]
pub fn step_alpha(
    data: &Dataset,
    kv: &KnotVector,
    phi0: &IndexParam,
    theta0: &DVector<f64>,
    gamma0: &DMatrix<f64>,
    spec: Option<&PenaltySpec>,
    support: &Support,
    jitter: f64,
) -> Result<AlphaStep> {
    let l = kv.n_basis();
    if gamma0.nrows() != l || gamma0.ncols() != data.q() || theta0.len() != data.d() {
        return Err(Error::Dimension("α⁰ does not match data and knots".into()));
    }
    let h = kv.gram();
    let beta = beta_from_phi(phi0);
    let (gram, b) = normal_equations(data, kv, &beta, support);
    let pen = alpha_penalty(spec, phi0.as_vector(), theta0, gamma0, &h, support, data.n())?;
    let a = gram + pen;
    let (alpha, jittered) = solve_spd(a, &b, jitter)?;
    let (theta, gamma) = unpack_alpha(&alpha, data.d(), data.q(), l, support);
    Ok(AlphaStep { theta, gamma, jittered })
}

/// The surrogate objective `Σ(Yᵢ − W̃ᵢᵀ(φ)α)² + (n/2)φᵀΣ(φ⁰)φ + (n/2)αᵀΣ(α⁰)α`
/// with the weights frozen at an expansion point.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_objective(
    data: &Dataset,
    kv: &KnotVector,
    phi: &IndexParam,
    theta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    spec: Option<&PenaltySpec>,
    expansion: &Coefficients,
) -> Result<f64> {
    let coef = Coefficients {
        phi: phi.as_vector().clone(),
        theta: theta.clone(),
        gamma: gamma.clone(),
    };
    let (fit, _) = fitted_values(data, kv, &beta_from_phi(phi), &coef);
    let rss = (data.y() - fit).norm_squared();
    let Some(spec) = spec else { return Ok(rss) };
    let h = kv.gram();
    let w = build_weight_matrices(&expansion.phi, &expansion.theta, &expansion.gamma, spec, &h)?;
    let half_n = data.n() as f64 / 2.0;
    let mut pen = 0.0;
    for (v, wt) in phi.as_vector().iter().zip(w.sigma_phi.iter()) {
        pen += wt * v * v;
    }
    for (v, wt) in theta.iter().zip(w.theta_weights.iter()) {
        pen += wt * v * v;
    }
    for k in 0..gamma.ncols() {
        let g = gamma.column(k).into_owned();
        pen += w.gamma_weights[k] * (&h * &g).dot(&g);
    }
    Ok(rss + half_n * pen)
}

/// `Q(φ) = Σ{Yᵢ − θᵀUᵢ − Wᵢᵀ(φ)γ}² + (n/2) Σ_l w_l φ_l²` for fixed α and knots.
pub struct PhiObjective<'a> {
    data: &'a Dataset,
    kv: &'a KnotVector,
    gamma: &'a DMatrix<f64>,
    partial: DVector<f64>,
    weights: DVector<f64>,
    active: Vec<bool>,
}

impl<'a> PhiObjective<'a> {
    /// `weights` is the diagonal of `Σ(φ⁰)`.
    pub fn new(
        data: &'a Dataset,
        kv: &'a KnotVector,
        theta: &DVector<f64>,
        gamma: &'a DMatrix<f64>,
        weights: DVector<f64>,
        active: Vec<bool>,
    ) -> Self {
        let partial = if data.d() > 0 {
            data.y() - data.u() * theta
        } else {
            data.y().clone()
        };
        Self {
            data,
            kv,
            gamma,
            partial,
            weights,
            active,
        }
    }

    fn penalty(&self, phi: &DVector<f64>) -> f64 {
        let half_n = self.data.n() as f64 / 2.0;
        half_n
            * phi
                .iter()
                .zip(self.weights.iter())
                .map(|(v, w)| w * v * v)
                .sum::<f64>()
    }

    pub fn value(&self, phi: &DVector<f64>) -> f64 {
        let beta = beta_from_phi(&IndexParam(phi.clone()));
        let index = self.data.index_values(&beta);
        let m = self.kv.degree();
        let mut buf = [0.0; MAX_DEGREE + 1];
        let mut rss = 0.0;
        for i in 0..self.data.n() {
            let (u, _) = self.kv.clamp(index[i]);
            let first = self.kv.local_basis(u, &mut buf);
            let r = self.partial[i] - self.row_fit(i, first, &buf[..=m]);
            rss += r * r;
        }
        rss + self.penalty(phi)
    }

    fn row_fit(&self, i: usize, first: usize, basis: &[f64]) -> f64 {
        let mut f = 0.0;
        for k in 0..self.data.q() {
            let zk = self.data.z()[(i, k)];
            if zk == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for (r, b) in basis.iter().enumerate() {
                s += b * self.gamma[(first + r, k)];
            }
            f += zk * s;
        }
        f
    }

    /// Gradient and Gauss–Newton Hessian over the active coordinates
    /// (inactive rows and columns are zero).
    pub fn gradient_and_gn(&self, phi: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let np = phi.len();
        let beta = beta_from_phi(&IndexParam(phi.clone()));
        let anchor = beta[0];
        let index = self.data.index_values(&beta);
        let m = self.kv.degree();
        let x = self.data.x();
        let mut buf = [0.0; MAX_DEGREE + 1];
        let mut dbuf = [0.0; MAX_DEGREE + 1];
        let mut grad = DVector::zeros(np);
        let mut hess = DMatrix::zeros(np, np);
        let mut du = DVector::zeros(np);
        for i in 0..self.data.n() {
            let (u, clamped) = self.kv.clamp(index[i]);
            let first = self.kv.local_basis(u, &mut buf);
            let r = self.partial[i] - self.row_fit(i, first, &buf[..=m]);
            if clamped {
                continue;
            }
            self.kv.local_basis_deriv(u, &mut dbuf);
            let slope = self.row_fit(i, first, &dbuf[..=m]);
            if slope == 0.0 {
                continue;
            }
            // ∂uᵢ/∂φ = J_φᵀ Xᵢ
            for l in 0..np {
                du[l] = if self.active[l] {
                    x[(i, l + 1)] - phi[l] / anchor * x[(i, 0)]
                } else {
                    0.0
                };
            }
            grad.axpy(-2.0 * r * slope, &du, 1.0);
            hess.ger(2.0 * slope * slope, &du, &du, 1.0);
        }
        let n = self.data.n() as f64;
        for l in 0..np {
            if self.active[l] {
                grad[l] += n * self.weights[l] * phi[l];
                hess[(l, l)] += n * self.weights[l];
            }
        }
        (grad, hess)
    }

    pub fn gradient(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.gradient_and_gn(phi).0
    }
}

/// Result of a φ step.
#[derive(Debug, Clone)]
pub struct PhiStep {
    pub phi: IndexParam,
    pub stalled: bool,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Damped Gauss–Newton minimization of `Q(φ)` starting at `φ⁰`, with the
/// LQA weights `Σ(φ⁰)` frozen at the start.
#[allow(clippy::too_many_arguments)]
pub fn step_phi(
    data: &Dataset,
    kv: &KnotVector,
    theta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    phi0: &IndexParam,
    spec: Option<&PenaltySpec>,
    support: &Support,
    config: &FitConfig,
) -> Result<PhiStep> {
    let np = phi0.len();
    let weights = match spec {
        Some(spec) if !spec.is_zero() => {
            let h = kv.gram();
            build_weight_matrices(
                phi0.as_vector(),
                &DVector::zeros(spec.theta.len()),
                &DMatrix::zeros(h.nrows(), spec.gamma.len()),
                spec,
                &h,
            )?
            .sigma_phi
        }
        _ => DVector::zeros(np),
    };
    let objective = PhiObjective::new(data, kv, theta, gamma, weights, support.phi.clone());
    let mut phi = phi0.as_vector().clone();
    let start = objective.value(&phi);
    let mut current = start;
    let mut stalled = false;
    for _ in 0..config.phi_iter.max(1) {
        let (grad, mut hess) = objective.gradient_and_gn(&phi);
        if grad.amax() == 0.0 {
            break;
        }
        // inactive coordinates stay fixed
        for l in 0..np {
            if !support.phi[l] {
                hess[(l, l)] = 1.0;
            }
        }
        let step = match solve_spd(hess, &(-&grad), config.jitter.max(1e-12)) {
            Ok((s, _)) => s,
            Err(_) => break,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=config.max_halvings {
            let trial = &phi + &step * t;
            if trial.norm() <= PHI_BALL_RADIUS {
                let value = objective.value(&trial);
                if value < current {
                    phi = trial;
                    let improvement = current - value;
                    current = value;
                    accepted = true;
                    if improvement <= 1e-14 * current.abs().max(1e-300) {
                        t = 0.0;
                    }
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            stalled = current == start;
            break;
        }
        if t == 0.0 || (&step * t).amax() < 1e-12 {
            break;
        }
    }
    Ok(PhiStep {
        phi: IndexParam::new(phi)?,
        stalled,
        objective_before: start,
        objective_after: current,
    })
}

/// Zeroes `|φ_l|`, `|θ_h|` and `‖γ_k‖_H` below `ε` and drops them from the support.
pub fn apply_threshold(coef: &mut Coefficients, support: &mut Support, h: &DMatrix<f64>, epsilon: f64) {
    for (l, v) in coef.phi.iter_mut().enumerate() {
        if v.abs() < epsilon {
            *v = 0.0;
            support.phi[l] = false;
        }
    }
    for (i, v) in coef.theta.iter_mut().enumerate() {
        if v.abs() < epsilon {
            *v = 0.0;
            support.theta[i] = false;
        }
    }
    for k in 0..coef.gamma.ncols() {
        if h_norm(&coef.gamma.column(k).into_owned(), h) < epsilon {
            coef.gamma.column_mut(k).fill(0.0);
            support.gamma[k] = false;
        }
    }
}

fn check_rows(data: &Dataset, config: &FitConfig, support: &Support) -> Result<()> {
    let required = support.n_params(config.n_basis());
    if data.n() < required {
        return Err(Error::InsufficientData {
            rows: data.n(),
            required,
        });
    }
    Ok(())
}

fn check_support(data: &Dataset, support: &Support) -> Result<()> {
    if support.phi.len() != data.p() - 1 || support.theta.len() != data.d() || support.gamma.len() != data.q() {
        return Err(Error::Dimension("support does not match the dataset".into()));
    }
    Ok(())
}

fn knots_at(data: &Dataset, phi: &DVector<f64>, config: &FitConfig) -> Result<KnotVector> {
    let beta = beta_from_phi(&IndexParam(phi.clone()));
    let index = data.index_values(&beta);
    make_knots(index.as_slice(), config.knots, config.degree)
}

/// Profile residual sum of squares at a fixed φ.
fn profile_rss(data: &Dataset, phi: &DVector<f64>, config: &FitConfig, support: &Support) -> Result<f64> {
    let kv = knots_at(data, phi, config)?;
    let l = kv.n_basis();
    let step = step_alpha(
        data,
        &kv,
        &IndexParam(phi.clone()),
        &DVector::zeros(data.d()),
        &DMatrix::zeros(l, data.q()),
        None,
        support,
        config.jitter,
    )?;
    let coef = Coefficients {
        phi: phi.clone(),
        theta: step.theta,
        gamma: step.gamma,
    };
    let (fit, _) = fitted_values(data, &kv, &beta_from_phi(&IndexParam(phi.clone())), &coef);
    Ok((data.y() - fit).norm_squared())
}

/// Maps a direction in `β` space to a point inside the ball, restricted to
/// the support.
fn direction_to_phi(beta: &DVector<f64>, support: &Support) -> Option<DVector<f64>> {
    let mut b = beta.clone();
    for (l, active) in support.phi.iter().enumerate() {
        if !active {
            b[l + 1] = 0.0;
        }
    }
    let norm = b.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    b /= norm;
    if b[0] < 0.0 {
        b.neg_mut();
    }
    let mut phi = b.rows(1, b.len() - 1).into_owned();
    let r = phi.norm();
    if r > START_RADIUS {
        phi *= START_RADIUS / r;
    }
    Some(phi)
}

/// Candidate starting directions: the least-squares direction of `Y` on
/// `X`, every active axis, and every signed pair of active axes.
fn start_candidates(data: &Dataset, support: &Support) -> Vec<DVector<f64>> {
    let p = data.p();
    let beta_active = support.beta();
    let active: Vec<usize> = (0..p).filter(|&j| beta_active[j]).collect();
    let mut dirs = Vec::new();

    let n = data.n();
    let mut design = DMatrix::from_element(n, active.len() + 1, 1.0);
    for (c, &j) in active.iter().enumerate() {
        design.column_mut(c + 1).copy_from(&data.x().column(j));
    }
    if let Ok(coef) = design.clone().svd(true, true).solve(data.y(), 1e-12) {
        let mut b = DVector::zeros(p);
        for (c, &j) in active.iter().enumerate() {
            b[j] = coef[c + 1];
        }
        dirs.push(b);
    }
    for &j in &active {
        let mut b = DVector::zeros(p);
        b[j] = 1.0;
        dirs.push(b);
    }
    if active.len() <= 12 {
        for (a, &i) in active.iter().enumerate() {
            for &j in &active[a + 1..] {
                for sign in [1.0, -1.0] {
                    let mut b = DVector::zeros(p);
                    b[i] = 1.0;
                    b[j] = sign;
                    dirs.push(b);
                }
            }
        }
    }
    dirs.into_iter().filter_map(|b| direction_to_phi(&b, support)).collect()
}

/// Picks deterministic starting points for the unpenalized fit, best
/// profile fit first.
fn initial_phis(data: &Dataset, config: &FitConfig, support: &Support) -> Result<Vec<DVector<f64>>> {
    let mut scored: Vec<(f64, usize, DVector<f64>)> = Vec::new();
    let mut last_err = None;
    for (i, phi) in start_candidates(data, support).into_iter().enumerate() {
        match profile_rss(data, &phi, config, support) {
            Ok(rss) if rss.is_finite() => scored.push((rss, i, phi)),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    if scored.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Domain("no usable starting direction".into())));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(REFINED_STARTS).map(|(_, _, phi)| phi).collect())
}

struct Alternation {
    coef: Coefficients,
    kv: KnotVector,
    support: Support,
    iterations: usize,
    converged: bool,
    stalled_steps: usize,
    trace: Vec<[f64; 3]>,
}

/// Runs the outer loop. With `threshold` the LQA weights are refreshed
/// every iteration and small components are zeroed.
fn alternate(
    data: &Dataset,
    config: &FitConfig,
    start: Coefficients,
    mut support: Support,
    threshold: bool,
) -> Result<Alternation> {
    let spec = config.penalty.as_ref();
    let mut coef = start;
    let mut kv = knots_at(data, &coef.phi, config)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut stalled_steps = 0;
    let mut trace = Vec::new();
    let mut first = true;
    if threshold {
        apply_threshold(&mut coef, &mut support, &kv.gram(), config.epsilon);
    }
    while iterations < config.max_iter {
        iterations += 1;
        kv = knots_at(data, &coef.phi, config)?;
        let phi0 = IndexParam::new(coef.phi.clone())?;
        let before = surrogate_objective(data, &kv, &phi0, &coef.theta, &coef.gamma, spec, &coef)?;
        let alpha = step_alpha(data, &kv, &phi0, &coef.theta, &coef.gamma, spec, &support, config.jitter)?;
        let phi_step = step_phi(data, &kv, &alpha.theta, &alpha.gamma, &phi0, spec, &support, config)?;
        stalled_steps += phi_step.stalled as usize;
        let mid = surrogate_objective(data, &kv, &phi0, &alpha.theta, &alpha.gamma, spec, &coef)?;
        let after = surrogate_objective(data, &kv, &phi_step.phi, &alpha.theta, &alpha.gamma, spec, &coef)?;
        trace.push([before, mid, after]);
        let mut next = Coefficients {
            phi: phi_step.phi.into_vector(),
            theta: alpha.theta,
            gamma: alpha.gamma,
        };
        if threshold {
            apply_threshold(&mut next, &mut support, &kv.gram(), config.epsilon);
        }
        let change = if first { f64::INFINITY } else { next.max_abs_change(&coef) };
        first = false;
        coef = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(Alternation {
        coef,
        kv,
        support,
        iterations,
        converged,
        stalled_steps,
        trace,
    })
}

fn finish(data: &Dataset, config: &FitConfig, run: Alternation) -> FitResult {
    let beta = run.coef.beta();
    let (fit, clamped) = fitted_values(data, &run.kv, &beta, &run.coef);
    let rss = (data.y() - fit).norm_squared();
    let h = run.kv.gram();
    let penalty = config
        .penalty
        .as_ref()
        .map(|s| s.total(&run.coef.phi, &run.coef.theta, &run.coef.gamma, &h, data.n()))
        .unwrap_or(0.0);
    let npts = config.report_points.max(2);
    let (a, b) = (run.kv.lower(), run.kv.upper());
    let grid: Vec<f64> = (0..npts).map(|j| a + (b - a) * j as f64 / (npts - 1) as f64).collect();
    let mut g_on_grid = DMatrix::zeros(npts, data.q());
    for (j, u) in grid.iter().enumerate() {
        let basis = run.kv.eval_extended(*u);
        for k in 0..data.q() {
            g_on_grid[(j, k)] = basis.dot(&run.coef.gamma.column(k));
        }
    }
    FitResult {
        beta,
        knots: run.kv,
        support: run.support,
        iterations: run.iterations,
        converged: run.converged,
        stalled_steps: run.stalled_steps,
        rss,
        objective: rss + penalty,
        clamped,
        surrogate_trace: run.trace,
        grid,
        g_on_grid,
        coefficients: run.coef,
    }
}

fn zero_start(data: &Dataset, config: &FitConfig, phi: DVector<f64>) -> Coefficients {
    Coefficients {
        phi,
        theta: DVector::zeros(data.d()),
        gamma: DMatrix::zeros(config.n_basis(), data.q()),
    }
}

/// Unpenalized fit: alternating least squares for α and Gauss–Newton for φ,
/// without thresholding.
pub fn fit_unpenalized(data: &Dataset, config: &FitConfig, phi_init: Option<&IndexParam>) -> Result<FitResult> {
    fit_unpenalized_on(data, config, &Support::for_data(data), phi_init)
}

/// [`fit_unpenalized`] restricted to a fixed support; excluded components are zero.
pub fn fit_unpenalized_on(
    data: &Dataset,
    config: &FitConfig,
    support: &Support,
    phi_init: Option<&IndexParam>,
) -> Result<FitResult> {
    config.validate()?;
    check_support(data, support)?;
    check_rows(data, config, support)?;
    let config = FitConfig {
        penalty: None,
        ..config.clone()
    };
    let starts = match phi_init {
        Some(phi) => {
            let mut v = phi.as_vector().clone();
            for (l, active) in support.phi.iter().enumerate() {
                if !active {
                    v[l] = 0.0;
                }
            }
            vec![v]
        }
        None => initial_phis(data, &config, support)?,
    };
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for phi in starts {
        let run = match alternate(data, &config, zero_start(data, &config, phi), support.clone(), false) {
            Ok(run) => run,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let fit = finish(data, &config, run);
        if best.as_ref().map_or(true, |b| fit.rss < b.rss) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Domain("no start converged".into())))
}

/// Penalized fit: unpenalized initialization followed by the LQA alternation.
pub fn fit_penalized(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    let init = fit_unpenalized(data, config, None)?;
    fit_penalized_from(data, config, &init)
}

/// Penalized fit started from an existing (usually unpenalized) fit.
pub fn fit_penalized_from(data: &Dataset, config: &FitConfig, init: &FitResult) -> Result<FitResult> {
    config.validate()?;
    check_rows(data, config, &Support::for_data(data))?;
    if let Some(spec) = &config.penalty {
        if spec.phi.len() != data.p() - 1 || spec.theta.len() != data.d() || spec.gamma.len() != data.q() {
            return Err(Error::Dimension("penalty spec does not match the dataset".into()));
        }
    }
    if init.coefficients.gamma.nrows() != config.n_basis() {
        return Err(Error::Dimension(
            "initial fit uses a different basis dimension".into(),
        ));
    }
    let run = alternate(data, config, init.coefficients.clone(), init.support.clone(), true)?;
    Ok(finish(data, config, run))
}

/// Fraction of variance explained, `1 − RSS/TSS`.
pub fn r_squared(y: &DVector<f64>, rss: f64) -> f64 {
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    1.0 - rss / tss
}
