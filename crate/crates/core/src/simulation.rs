//! Monte Carlo design with sparse β, θ and g, the comparator methods and
//! the reported accuracy metrics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FitConfig, FitResult, Support};
use crate::model::Dataset;
use crate::penalty::PenaltyFamily;
use crate::tuning::{default_knot_candidates, select, select_knots_unpenalized, LambdaGrid, TuningGrid};

/// Dimension of `U`, `X` and `Z` in the design.
pub const DIM: usize = 10;
/// Half-width of the uniform support of `X`.
pub const X_HALF_WIDTH: f64 = 0.75;
/// Reporting grid range for `ĝ_k` and RASE.
pub const GRID_RANGE: (f64, f64) = (-1.2, 1.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Scad,
    Lasso,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Scad => "SCAD",
            Method::Lasso => "LASSO",
            Method::Oracle => "Oracle",
        }
    }

    pub fn family(self) -> Option<PenaltyFamily> {
        match self {
            Method::Scad => Some(PenaltyFamily::default()),
            Method::Lasso => Some(PenaltyFamily::Lasso),
            Method::Oracle => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub sigma: f64,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Number of reporting grid points `N`.
    pub grid_points: usize,
    pub lambdas: LambdaGrid,
    /// Knot candidates; empty means the default rate-based set.
    pub knots: Vec<usize>,
    pub folds: usize,
    pub fit: FitConfig,
}

impl SimConfig {
    pub fn new(n: usize, sigma: f64, reps: usize, seed: u64) -> Self {
        Self {
            n,
            sigma,
            reps,
            seed,
            methods: vec![Method::Scad, Method::Lasso, Method::Oracle],
            grid_points: 20,
            lambdas: LambdaGrid::default(),
            knots: Vec::new(),
            folds: 5,
            fit: FitConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::Config(format!("n must be at least 50, got {}", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::Config("at least one replication is required".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("σ must be finite and non-negative, got {}", self.sigma)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("reporting grid needs at least 2 points".into()));
        }
        self.tuning_grid().validate(self.n)?;
        self.fit.validate()
    }

    pub fn tuning_grid(&self) -> TuningGrid {
        TuningGrid {
            lambdas: self.lambdas.clone(),
            knots: if self.knots.is_empty() {
                default_knot_candidates(self.n)
            } else {
                self.knots.clone()
            },
            folds: self.folds,
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        reporting_grid(self.grid_points)
    }
}

/// `N` equally spaced points on [`GRID_RANGE`].
pub fn reporting_grid(points: usize) -> Vec<f64> {
    let (a, b) = GRID_RANGE;
    (0..points)
        .map(|j| a + (b - a) * j as f64 / (points - 1) as f64)
        .collect()
}

/// True parameters of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta: DVector<f64>,
    pub theta: DVector<f64>,
    /// Covariance of `U`, which equals `E(UUᵀ)`.
    pub sigma_u: DMatrix<f64>,
    pub sigma_z: DMatrix<f64>,
}

impl Truth {
    pub fn standard() -> Self {
        let mut beta = DVector::zeros(DIM);
        beta[0] = 1.0 / 3.0;
        beta[1] = 2.0 / 3.0;
        beta[2] = 2.0 / 3.0;
        let mut theta = DVector::zeros(DIM);
        theta[0] = 2.0;
        theta[1] = 1.6;
        theta[2] = 0.8;
        Self {
            beta,
            theta,
            sigma_u: ar1_covariance(DIM, 3.0, 0.5),
            sigma_z: ar1_covariance(DIM, 4.0, 0.5),
        }
    }

    /// True coefficient function `g_k` (0-based `k`).
    pub fn g(&self, k: usize, u: f64) -> f64 {
        true_g(k, u)
    }

    pub fn support(&self) -> Support {
        let nz = |v: &DVector<f64>| v.iter().map(|x| *x != 0.0).collect::<Vec<_>>();
        let beta = nz(&self.beta);
        let gamma = (0..DIM).map(|k| k < 2).collect();
        Support::from_beta(&beta, nz(&self.theta), gamma).expect("true β has a nonzero anchor")
    }
}

/// `g₁(u) = 2cos(πu)`, `g₂(u) = 1 + 3u²`, all others zero.
pub fn true_g(k: usize, u: f64) -> f64 {
    match k {
        0 => 2.0 * (PI * u).cos(),
        1 => 1.0 + 3.0 * u * u,
        _ => 0.0,
    }
}

/// `Σ[k,l] = scale · ρ^|k−l|`.
pub fn ar1_covariance(dim: usize, scale: f64, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |k, l| scale * rho.powi((k as i32 - l as i32).abs()))
}

/// Generator for replication `rep`: an independent ChaCha stream per index.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn mvn_rows(rng: &mut impl Rng, n: usize, chol: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = chol.nrows();
    let mut out = DMatrix::zeros(n, dim);
    let mut xi = DVector::zeros(dim);
    for i in 0..n {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let row = chol * &xi;
        for j in 0..dim {
            out[(i, j)] = row[j];
        }
    }
    out
}

/// Draws `n` observations of the design with noise level `sigma` from `rng`.
pub fn generate(n: usize, sigma: f64, truth: &Truth, rng: &mut impl Rng) -> Dataset {
    let lz = truth.sigma_z.clone().cholesky().expect("Σ_Z is positive definite").l();
    let lu = truth.sigma_u.clone().cholesky().expect("Σ_U is positive definite").l();
    let z = mvn_rows(rng, n, &lz);
    let u = mvn_rows(rng, n, &lu);
    let x = DMatrix::from_fn(n, DIM, |_, _| rng.gen_range(-X_HALF_WIDTH..X_HALF_WIDTH));
    let index = &x * &truth.beta;
    let linear = &u * &truth.theta;
    let y = DVector::from_fn(n, |i, _| {
        let vc: f64 = (0..DIM).map(|k| true_g(k, index[i]) * z[(i, k)]).sum();
        let eps: f64 = rng.sample(StandardNormal);
        linear[i] + vc + sigma * eps
    });
    Dataset::new(y, u, x, z).expect("generated dimensions agree")
}

/// Dataset for replication `rep` plus the truth and a fold seed.
pub fn gen_dataset(cfg: &SimConfig, rep: usize) -> (Dataset, Truth, u64) {
    let truth = Truth::standard();
    let mut rng = replication_rng(cfg.seed, rep);
    let data = generate(cfg.n, cfg.sigma, &truth, &mut rng);
    let fold_seed = rng.next_u64();
    (data, truth, fold_seed)
}

/// Unpenalized fit restricted to the true support, with `K` chosen by CV.
pub fn oracle_fit(data: &Dataset, truth: &Truth, cfg: &SimConfig, fold_seed: u64) -> Result<(usize, FitResult)> {
    let grid = cfg.tuning_grid();
    let (k, fit, _) = select_knots_unpenalized(data, &grid.knots, grid.folds, &truth.support(), &cfg.fit, fold_seed)?;
    Ok((k, fit))
}

/// `β̂ᵀβ₀`.
pub fn metric_inner_product(beta_hat: &DVector<f64>, beta0: &DVector<f64>) -> f64 {
    beta_hat.dot(beta0)
}

/// `(θ̂−θ₀)ᵀ Σ_U (θ̂−θ₀)`.
pub fn metric_gmse(theta_hat: &DVector<f64>, theta0: &DVector<f64>, sigma_u: &DMatrix<f64>) -> f64 {
    let diff = theta_hat - theta0;
    (diff.transpose() * sigma_u * &diff)[(0, 0)]
}

/// `{N⁻¹ Σⱼ [ĝ(uⱼ) − g(uⱼ)]²}^{1/2}`.
pub fn metric_rase(estimate: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimate.len(), truth.len());
    let n = estimate.len() as f64;
    (estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

/// `(C, I)`: true zeros estimated as zero, true nonzeros estimated as zero.
pub fn metric_counts(estimated_zero: &[bool], true_zero: &[bool]) -> (usize, usize) {
    assert_eq!(estimated_zero.len(), true_zero.len());
    let c = estimated_zero.iter().zip(true_zero).filter(|(e, t)| **e && **t).count();
    let i = estimated_zero.iter().zip(true_zero).filter(|(e, t)| **e && !**t).count();
    (c, i)
}

/// Metrics of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: Method,
    pub knots: usize,
    pub lambda: f64,
    pub inner_product: f64,
    pub gmse: f64,
    pub c_beta: usize,
    pub i_beta: usize,
    pub c_theta: usize,
    pub i_theta: usize,
    pub c_g: usize,
    pub i_g: usize,
    pub rase1: f64,
    pub rase2: f64,
    pub converged: bool,
    /// `ĝ₁` and `ĝ₂` on the reporting grid.
    pub g1_hat: Vec<f64>,
    pub g2_hat: Vec<f64>,
}

impl RepRecord {
    pub fn rase(&self) -> f64 {
        self.rase1 + self.rase2
    }
}

/// Metrics of a fit against the truth.
pub fn evaluate(
    fit: &FitResult,
    truth: &Truth,
    grid: &[f64],
    rep: usize,
    method: Method,
    knots: usize,
    lambda: f64,
) -> RepRecord {
    let zeros = |v: &DVector<f64>| v.iter().map(|x| *x == 0.0).collect::<Vec<_>>();
    let (c_beta, i_beta) = metric_counts(&zeros(&fit.beta), &zeros(&truth.beta));
    let (c_theta, i_theta) = metric_counts(&zeros(fit.theta()), &zeros(&truth.theta));
    let g_zero: Vec<bool> = fit.gamma_norms().iter().map(|v| *v == 0.0).collect();
    let g_true_zero: Vec<bool> = (0..DIM).map(|k| k >= 2).collect();
    let (c_g, i_g) = metric_counts(&g_zero, &g_true_zero);
    let curve = |k: usize| grid.iter().map(|u| fit.eval_g(k, *u)).collect::<Vec<_>>();
    let truth_curve = |k: usize| grid.iter().map(|u| true_g(k, *u)).collect::<Vec<_>>();
    let g1_hat = curve(0);
    let g2_hat = curve(1);
    RepRecord {
        rep,
        method,
        knots,
        lambda,
        inner_product: metric_inner_product(&fit.beta, &truth.beta),
        gmse: metric_gmse(fit.theta(), &truth.theta, &truth.sigma_u),
        c_beta,
        i_beta,
        c_theta,
        i_theta,
        c_g,
        i_g,
        rase1: metric_rase(&g1_hat, &truth_curve(0)),
        rase2: metric_rase(&g2_hat, &truth_curve(1)),
        converged: fit.converged,
        g1_hat,
        g2_hat,
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub method: Method,
    pub record: Option<RepRecord>,
    pub error: Option<String>,
}

/// Generates replication `rep` and runs every configured method on it.
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Vec<RepOutcome> {
    let (data, truth, fold_seed) = gen_dataset(cfg, rep);
    let grid = cfg.grid();
    let tuning = cfg.tuning_grid();
    cfg.methods
        .iter()
        .map(|&method| {
            let result = match method.family() {
                Some(family) => select(&data, &tuning, family, &cfg.fit, fold_seed)
                    .map(|s| evaluate(&s.fit, &truth, &grid, rep, method, s.knots, s.lambda)),
                None => oracle_fit(&data, &truth, cfg, fold_seed)
                    .map(|(k, fit)| evaluate(&fit, &truth, &grid, rep, method, k, 0.0)),
            };
            match result {
                Ok(record) => RepOutcome { rep, method, record: Some(record), error: None },
                Err(e) => RepOutcome { rep, method, record: None, error: Some(e.to_string()) },
            }
        })
        .collect()
}

/// JSON has no NaN and writes it as `null`; aggregates over zero successful
/// replications are NaN, so `null` reads back as NaN.
fn f64_or_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn vec_f64_or_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(Vec::<Option<f64>>::deserialize(d)?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect())
}

/// Aggregates for one method in the column layout of the summary tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub replications: usize,
    pub failures: usize,
    #[serde(deserialize_with = "f64_or_nan")]
    pub mean: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub bias: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub sd: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub c_beta: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub i_beta: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub gmse: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub c_theta: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub i_theta: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub c_g: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub i_g: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub rase1: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub rase2: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub rase: f64,
    /// Pointwise mean of `ĝ₁` and `ĝ₂` on the reporting grid.
    #[serde(deserialize_with = "vec_f64_or_nan")]
    pub g1_mean: Vec<f64>,
    #[serde(deserialize_with = "vec_f64_or_nan")]
    pub g2_mean: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl MethodSummary {
    pub fn from_records(method: Method, records: &[&RepRecord], failures: usize, grid_points: usize) -> Self {
        let col = |f: &dyn Fn(&RepRecord) -> f64| records.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let inner = col(&|r| r.inner_product);
        let m = mean(&inner);
        let curve_mean = |pick: &dyn Fn(&RepRecord) -> &Vec<f64>| {
            (0..grid_points)
                .map(|j| mean(&records.iter().map(|r| pick(r)[j]).collect::<Vec<_>>()))
                .collect()
        };
        Self {
            method,
            replications: records.len(),
            failures,
            mean: m,
            bias: m - 1.0,
            sd: sample_sd(&inner),
            c_beta: mean(&col(&|r| r.c_beta as f64)),
            i_beta: mean(&col(&|r| r.i_beta as f64)),
            gmse: mean(&col(&|r| r.gmse)),
            c_theta: mean(&col(&|r| r.c_theta as f64)),
            i_theta: mean(&col(&|r| r.i_theta as f64)),
            c_g: mean(&col(&|r| r.c_g as f64)),
            i_g: mean(&col(&|r| r.i_g as f64)),
            rase1: mean(&col(&|r| r.rase1)),
            rase2: mean(&col(&|r| r.rase2)),
            rase: mean(&col(&|r| r.rase())),
            g1_mean: curve_mean(&|r| &r.g1_hat),
            g2_mean: curve_mean(&|r| &r.g2_hat),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub config: SimConfig,
    pub grid: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    /// Per replication and method, ordered by replication then method.
    pub outcomes: Vec<RepOutcome>,
}

impl SimSummary {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn records(&self, method: Method) -> impl Iterator<Item = &RepRecord> {
        self.outcomes
            .iter()
            .filter(move |o| o.method == method)
            .filter_map(|o| o.record.as_ref())
    }
}

/// Runs all replications, in parallel on the current rayon pool, and
/// aggregates them in replication order.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<SimSummary> {
    cfg.validate()?;
    let per_rep: Vec<Vec<RepOutcome>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect();
    let outcomes: Vec<RepOutcome> = per_rep.into_iter().flatten().collect();
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let records: Vec<&RepRecord> = outcomes
                .iter()
                .filter(|o| o.method == method)
                .filter_map(|o| o.record.as_ref())
                .collect();
            let failures = outcomes.iter().filter(|o| o.method == method && o.record.is_none()).count();
            MethodSummary::from_records(method, &records, failures, cfg.grid_points)
        })
        .collect();
    Ok(SimSummary {
        config: cfg.clone(),
        grid: cfg.grid(),
        methods,
        outcomes,
    })
}
