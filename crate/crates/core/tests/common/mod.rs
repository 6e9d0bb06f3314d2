//! Reference computations shared by the integration tests. Nothing here
//! calls the library's own evaluation or quadrature routines.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use plsivc::spline::KnotVector;
use plsivc::Dataset;
use rand::Rng;

/// Textbook Cox–de Boor recursion for `B_{j,degree}` on a full knot vector,
/// with the right endpoint assigned to the last nonempty span.
pub fn cox_de_boor(knots: &[f64], j: usize, degree: usize, u: f64) -> f64 {
    if degree == 0 {
        let (lo, hi) = (knots[j], knots[j + 1]);
        let last = *knots.last().unwrap();
        let last_span = hi == last && lo < hi;
        return if (lo <= u && u < hi) || (last_span && u == last) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[j + degree] - knots[j];
    if d1 > 0.0 {
        v += (u - knots[j]) / d1 * cox_de_boor(knots, j, degree - 1, u);
    }
    let d2 = knots[j + degree + 1] - knots[j + 1];
    if d2 > 0.0 {
        v += (knots[j + degree + 1] - u) / d2 * cox_de_boor(knots, j + 1, degree - 1, u);
    }
    v
}

pub fn reference_basis(kv: &KnotVector, u: f64) -> DVector<f64> {
    DVector::from_fn(kv.n_basis(), |j, _| cox_de_boor(kv.knots(), j, kv.degree(), u))
}

/// Gram matrix by the composite trapezoid rule with `points` nodes per
/// span. The right end of each span is approached from inside so that
/// every span integrates a single polynomial piece.
pub fn trapezoid_gram(kv: &KnotVector, points: usize) -> DMatrix<f64> {
    let l = kv.n_basis();
    let m = kv.degree();
    let mut h = DMatrix::zeros(l, l);
    let mut breaks: Vec<f64> = kv.knots().to_vec();
    breaks.dedup();
    let mut buf = [0.0; 16];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let step = (b - a) / (points - 1) as f64;
        for i in 0..points {
            let u = if i == points - 1 { b - (b - a) * 1e-13 } else { a + step * i as f64 };
            let weight = if i == 0 || i == points - 1 { 0.5 * step } else { step };
            let first = kv.local_basis(u, &mut buf);
            for r in 0..=m {
                for s in 0..=m {
                    h[(first + r, first + s)] += weight * buf[r] * buf[s];
                }
            }
        }
    }
    h
}

/// Random clamped knot vector with sorted interior knots, occasionally
/// repeated, and a mesh ratio kept moderate.
pub fn random_knot_vector(rng: &mut impl Rng) -> KnotVector {
    let degree = rng.gen_range(0..=4);
    let k = rng.gen_range(0..=6);
    let lower = rng.gen_range(-3.0..1.0);
    let upper = lower + rng.gen_range(0.5..4.0);
    let mut interior: Vec<f64> = (0..k)
        .map(|_| lower + (upper - lower) * rng.gen_range(0.05..0.95))
        .collect();
    interior.sort_by(f64::total_cmp);
    if k >= 2 && degree >= 2 && rng.gen_bool(0.2) {
        interior[1] = interior[0];
    }
    KnotVector::clamped(lower, upper, interior, degree).expect("valid knot vector")
}

/// Central difference of `f` at `x`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Random dataset with independent standard normal `U`, `Z` and uniform `X`.
pub fn random_dataset(rng: &mut impl Rng, n: usize, d: usize, p: usize, q: usize) -> Dataset {
    use rand_distr::StandardNormal;
    let u = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
    let z = DMatrix::from_fn(n, q, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Dataset::new(y, u, x, z).unwrap()
}

/// Worst-case errors of the spline kernel against the reference routines.
#[derive(Debug, Default, Clone, Copy)]
pub struct SplineErrors {
    pub partition_of_unity: f64,
    pub cox_de_boor: f64,
    pub derivative: f64,
    pub gram: f64,
    pub gram_asymmetry: f64,
    pub support_violations: usize,
    pub not_positive_definite: usize,
}

/// Runs the spline checks on `count` random knot vectors.
pub fn spline_suite(seed: u64, count: usize) -> SplineErrors {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut e = SplineErrors::default();
    for _ in 0..count {
        let kv = random_knot_vector(&mut rng);
        let (a, b) = (kv.lower(), kv.upper());
        let m = kv.degree();
        for j in 0..1000 {
            let u = (a + (b - a) * j as f64 / 999.0).min(b);
            let basis = kv.eval(u);
            e.partition_of_unity = e.partition_of_unity.max((basis.sum() - 1.0).abs());
            e.cox_de_boor = e.cox_de_boor.max((&basis - reference_basis(&kv, u)).amax());
            let nonzero: Vec<usize> = (0..basis.len()).filter(|&i| basis[i] != 0.0).collect();
            if let (Some(lo), Some(hi)) = (nonzero.first(), nonzero.last()) {
                if hi - lo > m {
                    e.support_violations += 1;
                }
            }
        }
        let mut breaks: Vec<f64> = kv.knots().to_vec();
        breaks.dedup();
        for _ in 0..100 {
            let s = rng.gen_range(0..breaks.len() - 1);
            let (lo, hi) = (breaks[s], breaks[s + 1]);
            let h = 1e-5 * (hi - lo);
            let u = rng.gen_range(lo + 10.0 * h..hi - 10.0 * h);
            let analytic = kv.eval_deriv(u);
            for i in 0..kv.n_basis() {
                let fd = central_diff(|v| cox_de_boor(kv.knots(), i, m, v), u, h);
                e.derivative = e.derivative.max(relative_error(fd, analytic[i]));
            }
        }
        let gram = kv.gram();
        let reference = trapezoid_gram(&kv, 10_000);
        e.gram = e.gram.max((&gram - &reference).amax() / reference.amax());
        e.gram_asymmetry = e.gram_asymmetry.max((&gram - gram.transpose()).amax());
        if gram.clone().cholesky().is_none() {
            e.not_positive_definite += 1;
        }
    }
    e
}

/// Worst-case errors of the penalty calculus.
#[derive(Debug, Default, Clone, Copy)]
pub struct PenaltyErrors {
    /// Finite-difference slope of the value against the derivative.
    pub derivative: f64,
    /// `|q(ω₀) − p(ω₀)|` relative to `p(ω₀)`.
    pub tangency_value: f64,
    /// `|q′(ω₀) − ṗ(ω₀)|` relative to `λ`.
    pub tangency_slope: f64,
    pub checked: usize,
}

/// Runs the penalty checks on `count` random `(λ, a, ω)` triples.
pub fn penalty_suite(seed: u64, count: usize) -> PenaltyErrors {
    use plsivc::penalty::{lqa_weight, scad_deriv, scad_value};
    use plsivc::PenaltyFamily;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut e = PenaltyErrors::default();
    for _ in 0..count {
        let lambda = 10f64.powf(rng.gen_range(-3.0..1.0));
        let a = rng.gen_range(2.05..10.0);
        let omega = rng.gen_range(1e-3..1.5 * (a + 1.0)) * lambda;
        let h = 1e-6 * lambda;
        let near_kink = [0.0, lambda, a * lambda].iter().any(|k| (omega - k).abs() < 10.0 * h);
        if !near_kink {
            let fd = central_diff(|w| scad_value(lambda, a, w).unwrap(), omega, h);
            let exact = scad_deriv(lambda, a, omega).unwrap();
            e.derivative = e.derivative.max((fd - exact).abs() / lambda);
            e.checked += 1;
        }
        for family in [PenaltyFamily::Scad { a }, PenaltyFamily::Lasso] {
            let w = lqa_weight(family, lambda, omega).unwrap();
            let p0 = family.value(lambda, omega);
            let q = |x: f64| p0 + 0.5 * w * (x * x - omega * omega);
            e.tangency_value = e.tangency_value.max((q(omega) - p0).abs() / p0.max(f64::MIN_POSITIVE));
            e.tangency_slope = e.tangency_slope.max((w * omega - family.deriv(lambda, omega)).abs() / lambda);
        }
    }
    e
}

/// Random problem for the closed-form α step: data, knots, expansion point,
/// penalty and a support with some components removed.
pub struct AlphaProblem {
    pub data: Dataset,
    pub kv: KnotVector,
    pub phi: plsivc::IndexParam,
    pub theta: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub spec: plsivc::PenaltySpec,
    pub support: plsivc::Support,
}

pub fn random_alpha_problem(rng: &mut impl Rng, n: usize) -> AlphaProblem {
    use plsivc::model::beta_from_phi;
    use plsivc::{IndexParam, PenaltyFamily, PenaltySpec, Support};
    let (d, p, q) = (rng.gen_range(1..=4), rng.gen_range(2..=4), rng.gen_range(1..=3));
    let data = random_dataset(rng, n, d, p, q);
    let mut phi = DVector::from_fn(p - 1, |_, _| rng.gen_range(-1.0..1.0));
    phi *= rng.gen_range(0.1..0.9) / phi.norm();
    let phi = IndexParam::new(phi).unwrap();
    let index = data.index_values(&beta_from_phi(&phi));
    let kv = plsivc::spline::make_knots(index.as_slice(), rng.gen_range(0..=3), 3).unwrap();
    let l = kv.n_basis();
    let theta_active: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.7)).collect();
    let gamma_active: Vec<bool> = (0..q).map(|k| k == 0 || rng.gen_bool(0.6)).collect();
    let theta = DVector::from_fn(d, |h, _| if theta_active[h] { rng.gen_range(0.05..2.0) * sign(rng) } else { 0.0 });
    let gamma = DMatrix::from_fn(l, q, |_, k| if gamma_active[k] { rng.gen_range(-2.0..2.0) } else { 0.0 });
    let family = if rng.gen_bool(0.5) { PenaltyFamily::Scad { a: 3.7 } } else { PenaltyFamily::Lasso };
    let lambda = 10f64.powf(rng.gen_range(-3.0..0.0));
    let mut spec = PenaltySpec::uniform(family, lambda, p - 1, d, q);
    for v in spec.theta.iter_mut().chain(spec.gamma.iter_mut()) {
        *v = lambda * rng.gen_range(0.2..5.0);
    }
    let mut support = Support::full(p - 1, d, q);
    support.theta = theta_active;
    support.gamma = gamma_active;
    AlphaProblem { data, kv, phi, theta, gamma, spec, support }
}

fn sign(rng: &mut impl Rng) -> f64 {
    if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
}

/// Gradient of the surrogate objective in the active α coordinates, built
/// from the reference basis, relative to the norm of its data term.
pub fn alpha_gradient_residual(prob: &AlphaProblem, theta: &DVector<f64>, gamma: &DMatrix<f64>) -> f64 {
    use plsivc::model::{beta_from_phi, h_norm};
    let data = &prob.data;
    let n = data.n();
    let (d, q, l) = (data.d(), data.q(), prob.kv.n_basis());
    let h = prob.kv.gram();
    let index = data.index_values(&beta_from_phi(&prob.phi));
    let family = prob.spec.family;
    let weight = |lambda: f64, omega: f64| if omega == 0.0 { 0.0 } else { family.deriv(lambda, omega) / omega };
    let mut grad_theta = DVector::<f64>::zeros(d);
    let mut grad_gamma = DMatrix::<f64>::zeros(l, q);
    let mut data_theta = DVector::<f64>::zeros(d);
    let mut data_gamma = DMatrix::<f64>::zeros(l, q);
    for i in 0..n {
        let (u, _) = prob.kv.clamp(index[i]);
        let basis = reference_basis(&prob.kv, u);
        let mut fit = 0.0;
        for j in 0..d {
            fit += theta[j] * data.u()[(i, j)];
        }
        for k in 0..q {
            fit += data.z()[(i, k)] * basis.dot(&gamma.column(k));
        }
        let y = data.y()[i];
        let r = y - fit;
        for j in 0..d {
            grad_theta[j] -= 2.0 * data.u()[(i, j)] * r;
            data_theta[j] += 2.0 * data.u()[(i, j)] * y;
        }
        for k in 0..q {
            let zk = data.z()[(i, k)];
            for s in 0..l {
                grad_gamma[(s, k)] -= 2.0 * zk * basis[s] * r;
                data_gamma[(s, k)] += 2.0 * zk * basis[s] * y;
            }
        }
    }
    let nf = n as f64;
    for j in 0..d {
        grad_theta[j] += nf * weight(prob.spec.theta[j], prob.theta[j].abs()) * theta[j];
    }
    for k in 0..q {
        let w = weight(prob.spec.gamma[k], h_norm(&prob.gamma.column(k).into_owned(), &h));
        let hg = &h * gamma.column(k);
        for s in 0..l {
            grad_gamma[(s, k)] += nf * w * hg[s];
        }
    }
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for j in (0..d).filter(|&j| prob.support.theta[j]) {
        residual = residual.max(grad_theta[j].abs());
        scale = scale.max(data_theta[j].abs());
    }
    for k in (0..q).filter(|&k| prob.support.gamma[k]) {
        for s in 0..l {
            residual = residual.max(grad_gamma[(s, k)].abs());
            scale = scale.max(data_gamma[(s, k)].abs());
        }
    }
    residual / scale.max(f64::MIN_POSITIVE)
}

/// Worst relative stationarity residual of `step_alpha`, and the number of
/// steps that left an inactive component nonzero.
pub fn stationarity_suite(seed: u64, count: usize, n: usize) -> (f64, usize) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut leaks = 0;
    for _ in 0..count {
        let prob = random_alpha_problem(&mut rng, n);
        let step = plsivc::estimator::step_alpha(
            &prob.data,
            &prob.kv,
            &prob.phi,
            &prob.theta,
            &prob.gamma,
            Some(&prob.spec),
            &prob.support,
            0.0,
        )
        .expect("α step");
        worst = worst.max(alpha_gradient_residual(&prob, &step.theta, &step.gamma));
        let leak_theta = (0..prob.data.d()).any(|j| !prob.support.theta[j] && step.theta[j] != 0.0);
        let leak_gamma = (0..prob.data.q()).any(|k| !prob.support.gamma[k] && step.gamma.column(k).amax() != 0.0);
        if leak_theta || leak_gamma {
            leaks += 1;
        }
    }
    (worst, leaks)
}

/// Outcome of the noise-free recovery checks.
#[derive(Debug, Clone, Copy)]
pub struct NoiseFree {
    /// Max-abs error of `(β, θ, γ)` when the truth lies in the spline space.
    pub spline_truth_error: f64,
    /// RASE of `ĝ₁` and `ĝ₂` for the cosine and quadratic truths.
    pub rase1: f64,
    pub rase2: f64,
}

/// Penalized fits with `λ = 0` on `n` noiseless observations.
pub fn noise_free_suite(seed: u64, n: usize, knots: usize) -> NoiseFree {
    use plsivc::estimator::fit_penalized;
    use plsivc::simulation::{generate, metric_rase, replication_rng, reporting_grid, true_g, Truth, DIM};
    use plsivc::{FitConfig, PenaltyFamily, PenaltySpec};

    let truth = Truth::standard();
    let smooth = generate(n, 0.0, &truth, &mut replication_rng(seed, 0));
    let spec = PenaltySpec::uniform(PenaltyFamily::Scad { a: 3.7 }, 0.0, DIM - 1, DIM, DIM);
    let config = FitConfig::default().with_knots(knots).with_penalty(Some(spec));

    let (exact, gamma0) = spline_truth_dataset(&smooth, &truth, knots);
    let fit = fit_penalized(&exact, &config).expect("noise-free fit");
    let err = (&fit.beta - &truth.beta)
        .amax()
        .max((fit.theta() - &truth.theta).amax())
        .max((fit.gamma() - &gamma0).amax());

    // True curves on the true submodel, with the largest default knot count
    // since there is no variance to trade against approximation error.
    let support = truth.support();
    let cols = |mask: &[bool]| (0..mask.len()).filter(|&i| mask[i]).collect::<Vec<_>>();
    let submodel = smooth
        .select_columns(&cols(&support.theta), &cols(&support.beta()), &cols(&support.gamma))
        .unwrap();
    let top = *plsivc::tuning::default_knot_candidates(n).last().unwrap();
    let (p, d, q) = (submodel.p(), submodel.d(), submodel.q());
    let spec = PenaltySpec::uniform(PenaltyFamily::Scad { a: 3.7 }, 0.0, p - 1, d, q);
    let config = FitConfig::default().with_knots(top).with_penalty(Some(spec));
    let fit = fit_penalized(&submodel, &config).expect("noise-free fit");
    let grid = reporting_grid(20);
    let rase = |k: usize| {
        let est: Vec<f64> = grid.iter().map(|u| fit.eval_g(k, *u)).collect();
        let tru: Vec<f64> = grid.iter().map(|u| true_g(k, *u)).collect();
        metric_rase(&est, &tru)
    };
    NoiseFree {
        spline_truth_error: err,
        rase1: rase(0),
        rase2: rase(1),
    }
}

/// Replaces the response of a noiseless simulated dataset by one whose
/// coefficient functions lie exactly in the cubic spline space built at `β₀`:
/// `g₁`, `g₂` are least-squares projections of the true curves, the rest zero.
pub fn spline_truth_dataset(smooth: &Dataset, truth: &plsivc::simulation::Truth, knots: usize) -> (Dataset, DMatrix<f64>) {
    use plsivc::simulation::true_g;
    let (n, q) = (smooth.n(), smooth.q());
    let index = smooth.index_values(&truth.beta);
    let kv = plsivc::spline::make_knots(index.as_slice(), knots, 3).unwrap();
    let l = kv.n_basis();
    let grid: Vec<f64> = (0..400).map(|j| kv.lower() + (kv.upper() - kv.lower()) * j as f64 / 399.0).collect();
    let design = DMatrix::from_fn(grid.len(), l, |i, j| cox_de_boor(kv.knots(), j, 3, grid[i]));
    let mut gamma0 = DMatrix::zeros(l, q);
    for k in 0..2 {
        let target = DVector::from_iterator(grid.len(), grid.iter().map(|u| true_g(k, *u)));
        let coef = (design.transpose() * &design).cholesky().unwrap().solve(&(design.transpose() * target));
        gamma0.set_column(k, &coef);
    }
    let y = DVector::from_fn(n, |i, _| {
        let basis = reference_basis(&kv, index[i]);
        let vc: f64 = (0..q).map(|k| smooth.z()[(i, k)] * basis.dot(&gamma0.column(k))).sum();
        (smooth.u().row(i) * &truth.theta)[(0, 0)] + vc
    });
    let exact = Dataset::new(y, smooth.u().clone(), smooth.x().clone(), smooth.z().clone()).unwrap();
    (exact, gamma0)
}
