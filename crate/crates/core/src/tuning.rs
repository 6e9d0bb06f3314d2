//! Adaptive tuning parameters and cross-validated choice of `(K, λ)`.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_penalized_from, fit_unpenalized_on, FitConfig, FitResult, Support};
use crate::model::{Dataset, IndexParam};
use crate::penalty::{PenaltyFamily, PenaltySpec};

/// Unpenalized magnitudes below this get the capped tuning parameter.
pub const SMALL_MAGNITUDE: f64 = 1e-8;
/// Cap on `λ_j / λ` for (near-)zero unpenalized estimates.
pub const LAMBDA_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaGrid {
    /// `count` log-spaced values over `[lo, hi]·σ̂`, with `σ̂` the unpenalized residual scale.
    Scaled { count: usize, lo: f64, hi: f64 },
    Explicit(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Scaled {
            count: 20,
            lo: 1e-3,
            hi: 2.0,
        }
    }
}

impl LambdaGrid {
    pub fn resolve(&self, sigma_hat: f64) -> Vec<f64> {
        match self {
            LambdaGrid::Explicit(v) => v.clone(),
            LambdaGrid::Scaled { count, lo, hi } => log_space(lo * sigma_hat, hi * sigma_hat, *count),
        }
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|j| (a + (b - a) * j as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// Knot counts centred on `⌊n^{1/5}⌋`, the cubic-spline rate.
pub fn default_knot_candidates(n: usize) -> Vec<usize> {
    let center = (n as f64).powf(0.2).floor() as usize;
    (center.saturating_sub(1).max(1)..=center + 2).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub lambdas: LambdaGrid,
    pub knots: Vec<usize>,
    /// Number of folds `V`; `V = n` is leave-one-out.
    pub folds: usize,
}

impl TuningGrid {
    pub fn default_for(n: usize) -> Self {
        Self {
            lambdas: LambdaGrid::default(),
            knots: default_knot_candidates(n),
            folds: 5,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Config("knot grid is empty".into()));
        }
        match &self.lambdas {
            LambdaGrid::Explicit(v) if v.is_empty() || v.iter().any(|l| !(*l > 0.0) || !l.is_finite()) => {
                return Err(Error::Config("λ grid must be non-empty and strictly positive".into()))
            }
            LambdaGrid::Scaled { count, lo, hi } if *count == 0 || !(*lo > 0.0) || !(hi >= lo) => {
                return Err(Error::Config("invalid scaled λ grid".into()))
            }
            _ => {}
        }
        if self.folds < 2 || self.folds > n {
            return Err(Error::Config(format!(
                "fold count must lie in [2, n={n}], got {}",
                self.folds
            )));
        }
        Ok(())
    }
}

/// `λ_{1l} = λ/|φ̂ᵘ_l|`, `λ_{2h} = λ/|θ̂ᵘ_h|`, `λ_{3k} = λ/‖γ̂ᵘ_k‖_H`.
pub fn adaptive_lambdas(lambda: f64, family: PenaltyFamily, unpenalized: &FitResult) -> PenaltySpec {
    let scale = |m: f64| {
        if lambda == 0.0 {
            0.0
        } else if m.abs() < SMALL_MAGNITUDE {
            lambda * LAMBDA_CAP
        } else {
            lambda / m.abs()
        }
    };
    PenaltySpec {
        family,
        lambda,
        phi: unpenalized.phi().iter().map(|v| scale(*v)).collect(),
        theta: unpenalized.theta().iter().map(|v| scale(*v)).collect(),
        gamma: unpenalized.gamma_norms().into_iter().map(scale).collect(),
    }
}

/// Fold label for each row; a deterministic function of `(seed, n, folds)`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (pos, row) in order.into_iter().enumerate() {
        labels[row] = pos % folds;
    }
    labels
}

struct Fold {
    train: Dataset,
    test: Dataset,
    unpenalized: FitResult,
}

/// Per-fold unpenalized fits for one knot count.
fn prepare_folds(
    data: &Dataset,
    config: &FitConfig,
    support: &Support,
    labels: &[usize],
    folds: usize,
    phi_start: Option<&IndexParam>,
) -> Result<Vec<Fold>> {
    (0..folds)
        .map(|v| {
            let train_rows: Vec<usize> = (0..data.n()).filter(|&i| labels[i] != v).collect();
            let test_rows: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == v).collect();
            let required = support.n_params(config.n_basis());
            if train_rows.len() < required {
                return Err(Error::InsufficientFoldSize {
                    rows: train_rows.len(),
                    required,
                });
            }
            let train = data.subset(&train_rows);
            let test = data.subset(&test_rows);
            let unpenalized = fit_unpenalized_on(&train, config, support, phi_start)?;
            Ok(Fold {
                train,
                test,
                unpenalized,
            })
        })
        .collect()
}

/// Held-out squared error summed over folds. Each fold starts from its own
/// unpenalized fit; `penalty` is shared across folds.
fn score_folds(folds: &[Fold], config: &FitConfig, penalty: Option<&PenaltySpec>) -> Result<f64> {
    let mut total = 0.0;
    for fold in folds {
        let fit = match penalty {
            Some(spec) => {
                let cfg = config.clone().with_penalty(Some(spec.clone()));
                fit_penalized_from(&fold.train, &cfg, &fold.unpenalized)?
            }
            None => fold.unpenalized.clone(),
        };
        total += fit.residuals(&fold.test).norm_squared();
    }
    Ok(total)
}

/// Cross-validation score `CV(K, λ) = Σᵢ {Yᵢ − Ŷᵢ^{[−fold(i)]}}²`.
///
/// The adaptive tuning parameters come from the unpenalized fit on all rows;
/// each fold reruns the penalized fit from its own unpenalized start.
/// `λ = 0` still thresholds.
pub fn cv_score(
    knots: usize,
    lambda: f64,
    family: PenaltyFamily,
    data: &Dataset,
    folds: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<f64> {
    if folds < 2 || folds > data.n() {
        return Err(Error::Config(format!("fold count {folds} outside [2, n]")));
    }
    let cfg = config.clone().with_knots(knots);
    let support = Support::for_data(data);
    let full = fit_unpenalized_on(data, &cfg, &support, None)?;
    let spec = adaptive_lambdas(lambda, family, &full);
    let start = IndexParam::new(full.phi().clone())?;
    let labels = fold_assignment(data.n(), folds, seed);
    let prepared = prepare_folds(data, &cfg, &support, &labels, folds, Some(&start))?;
    score_folds(&prepared, &cfg, Some(&spec))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub knots: usize,
    pub lambda: f64,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub knots: usize,
    pub lambda: f64,
    pub penalty: PenaltySpec,
    /// Final penalized fit on the full data.
    pub fit: FitResult,
    /// Full-data unpenalized fit at the chosen knot count.
    pub unpenalized: FitResult,
    /// Resolved λ candidates.
    pub lambdas: Vec<f64>,
    pub scores: Vec<GridPoint>,
}

/// Grid search over `(K, λ)` minimizing the CV score, then a refit on all rows.
///
/// Ties go to the smaller `K`, then the smaller λ.
pub fn select(
    data: &Dataset,
    grid: &TuningGrid,
    family: PenaltyFamily,
    config: &FitConfig,
    seed: u64,
) -> Result<Selection> {
    grid.validate(data.n())?;
    family.validate()?;
    let support = Support::for_data(data);
    let labels = fold_assignment(data.n(), grid.folds, seed);

    let mut knots_sorted = grid.knots.clone();
    knots_sorted.sort_unstable();
    knots_sorted.dedup();

    // Full-data unpenalized fits; the λ grid is scaled by the first usable one.
    let mut full: Vec<(usize, Result<FitResult>)> = Vec::new();
    for &k in &knots_sorted {
        let cfg = config.clone().with_knots(k);
        full.push((k, fit_unpenalized_on(data, &cfg, &support, None)));
    }
    let center = (data.n() as f64).powf(0.2).floor() as usize;
    let reference = full
        .iter()
        .filter_map(|(k, r)| r.as_ref().ok().map(|f| (*k, f)))
        .min_by_key(|(k, _)| k.abs_diff(center))
        .map(|(_, f)| f);
    let sigma_hat = match reference {
        Some(f) => (f.rss / data.n() as f64).sqrt(),
        None => {
            let failures = full
                .iter()
                .map(|(k, r)| format!("K={k}: {}", r.as_ref().err().map(|e| e.to_string()).unwrap_or_default()))
                .collect();
            return Err(Error::AllGridPointsFailed(failures));
        }
    };
    let lambdas = grid.lambdas.resolve(sigma_hat.max(f64::MIN_POSITIVE));

    let mut scores = Vec::new();
    let mut best: Option<(f64, usize, f64)> = None;
    for (k, full_fit) in &full {
        let cfg = config.clone().with_knots(*k);
        let prepared = match full_fit {
            Ok(f) => {
                let start = IndexParam::new(f.phi().clone())?;
                prepare_folds(data, &cfg, &support, &labels, grid.folds, Some(&start))
            }
            Err(e) => Err(Error::Domain(e.to_string())),
        };
        for &lambda in &lambdas {
            let outcome = prepared
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|folds| {
                    let full_fit = full_fit.as_ref().map_err(|e| e.to_string())?;
                    let spec = adaptive_lambdas(lambda, family, full_fit);
                    score_folds(folds, &cfg, Some(&spec)).map_err(|e| e.to_string())
                });
            match outcome {
                Ok(score) if score.is_finite() => {
                    if best.map_or(true, |(s, _, _)| score < s) {
                        best = Some((score, *k, lambda));
                    }
                    scores.push(GridPoint { knots: *k, lambda, score: Some(score), error: None });
                }
                Ok(score) => scores.push(GridPoint {
                    knots: *k,
                    lambda,
                    score: None,
                    error: Some(format!("non-finite score {score}")),
                }),
                Err(e) => scores.push(GridPoint { knots: *k, lambda, score: None, error: Some(e) }),
            }
        }
    }
    let Some((_, knots, lambda)) = best else {
        return Err(Error::AllGridPointsFailed(
            scores
                .iter()
                .map(|g| format!("K={} λ={:.4e}: {}", g.knots, g.lambda, g.error.clone().unwrap_or_default()))
                .collect(),
        ));
    };
    let unpenalized = full
        .into_iter()
        .find(|(k, _)| *k == knots)
        .and_then(|(_, r)| r.ok())
        .expect("winning knot count has a full-data fit");
    let penalty = adaptive_lambdas(lambda, family, &unpenalized);
    let cfg = config.clone().with_knots(knots).with_penalty(Some(penalty.clone()));
    let fit = fit_penalized_from(data, &cfg, &unpenalized)?;
    Ok(Selection {
        knots,
        lambda,
        penalty,
        fit,
        unpenalized,
        lambdas,
        scores,
    })
}

/// Cross-validated knot count for an unpenalized fit on a fixed support.
pub fn select_knots_unpenalized(
    data: &Dataset,
    knots: &[usize],
    folds: usize,
    support: &Support,
    config: &FitConfig,
    seed: u64,
) -> Result<(usize, FitResult, Vec<GridPoint>)> {
    if folds < 2 || folds > data.n() {
        return Err(Error::Config(format!("fold count {folds} outside [2, n]")));
    }
    let labels = fold_assignment(data.n(), folds, seed);
    let mut best: Option<(f64, usize, FitResult)> = None;
    let mut scores = Vec::new();
    let mut ks = knots.to_vec();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let cfg = config.clone().with_knots(k).with_penalty(None);
        let outcome = fit_unpenalized_on(data, &cfg, support, None).and_then(|full| {
            let start = IndexParam::new(full.phi().clone())?;
            let prepared = prepare_folds(data, &cfg, support, &labels, folds, Some(&start))?;
            let score = score_folds(&prepared, &cfg, None)?;
            Ok((score, full))
        });
        match outcome {
            Ok((score, full)) => {
                scores.push(GridPoint { knots: k, lambda: 0.0, score: Some(score), error: None });
                if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
                    best = Some((score, k, full));
                }
            }
            Err(e) => scores.push(GridPoint { knots: k, lambda: 0.0, score: None, error: Some(e.to_string()) }),
        }
    }
    match best {
        Some((_, k, fit)) => Ok((k, fit, scores)),
        None => Err(Error::AllGridPointsFailed(
            scores
                .iter()
                .map(|g| format!("K={}: {}", g.knots, g.error.clone().unwrap_or_default()))
                .collect(),
        )),
    }
}

/// Residual scale `√(RSS/n)` of a fit.
pub fn residual_scale(fit: &FitResult, y: &DVector<f64>) -> f64 {
    (fit.rss / y.len() as f64).sqrt()
}
