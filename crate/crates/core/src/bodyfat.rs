//! Body-fat application: loading and cleaning the circumference data, the
//! penalized fit and an ordinary least-squares baseline.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{r_squared, FitConfig, FitResult};
use crate::io::{read_table, Table};
use crate::model::Dataset;
use crate::penalty::PenaltyFamily;
use crate::tuning::{select, Selection, TuningGrid};

/// Circumference covariates forming the index, in model order.
pub const INDEX_COLUMNS: [&str; 10] = [
    "neck", "chest", "abdomen", "hip", "thigh", "knee", "ankle", "biceps", "forearm", "wrist",
];
/// Covariates entering linearly.
pub const LINEAR_COLUMNS: [&str; 2] = ["age", "weight"];
/// Covariates multiplying the varying coefficients, after the intercept.
pub const VARYING_COLUMNS: [&str; 1] = ["height"];
pub const MIN_CLEAN_ROWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyFatRecord {
    pub density: f64,
    pub bodyfat: f64,
    pub age: f64,
    pub weight: f64,
    pub height: f64,
    /// Circumferences in [`INDEX_COLUMNS`] order.
    pub circumferences: [f64; 10],
}

/// `|495/density − 450 − bodyfat|`: distance between the recorded body fat
/// and the Siri equation applied to the recorded density.
pub fn siri_consistency(density: f64, bodyfat: f64) -> f64 {
    (495.0 / density - 450.0 - bodyfat).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningRules {
    /// Records with body fat at or below this percentage are dropped.
    pub min_bodyfat: f64,
    /// Records with height below this many inches are dropped.
    pub min_height: f64,
    /// Records whose [`siri_consistency`] exceeds this are dropped.
    pub siri_tolerance: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            min_bodyfat: 1.0,
            min_height: 40.0,
            siri_tolerance: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    /// 1-based data row in the source file.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub total: usize,
    pub retained: usize,
    pub excluded: Vec<Exclusion>,
}

impl CleaningRules {
    /// Reason for dropping a record, if any.
    pub fn violation(&self, r: &BodyFatRecord) -> Option<String> {
        if !r.bodyfat.is_finite() || r.bodyfat <= self.min_bodyfat {
            return Some(format!("body fat {} ≤ {}", r.bodyfat, self.min_bodyfat));
        }
        if !r.height.is_finite() || r.height < self.min_height {
            return Some(format!("height {} < {}", r.height, self.min_height));
        }
        if !(r.density > 0.0) {
            return Some(format!("density {} is not positive", r.density));
        }
        let gap = siri_consistency(r.density, r.bodyfat);
        if !(gap <= self.siri_tolerance) {
            return Some(format!("Siri discrepancy {gap:.3} > {}", self.siri_tolerance));
        }
        None
    }

    pub fn apply(&self, records: &[BodyFatRecord]) -> (Vec<BodyFatRecord>, ExclusionReport) {
        let mut kept = Vec::with_capacity(records.len());
        let mut excluded = Vec::new();
        for (i, r) in records.iter().enumerate() {
            match self.violation(r) {
                Some(reason) => excluded.push(Exclusion { row: i + 1, reason }),
                None => kept.push(*r),
            }
        }
        let report = ExclusionReport {
            total: records.len(),
            retained: kept.len(),
            excluded,
        };
        (kept, report)
    }
}

pub fn records_from_table(table: &Table) -> Result<Vec<BodyFatRecord>> {
    let col = |name: &str| table.column(name);
    let density = col("density")?;
    let bodyfat = col("bodyfat")?;
    let age = col("age")?;
    let weight = col("weight")?;
    let height = col("height")?;
    let circ = INDEX_COLUMNS.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    Ok((0..table.n_rows())
        .map(|i| BodyFatRecord {
            density: density[i],
            bodyfat: bodyfat[i],
            age: age[i],
            weight: weight[i],
            height: height[i],
            circumferences: std::array::from_fn(|j| circ[j][i]),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Centre and scale each index covariate to unit sample variance.
    pub standardize_x: bool,
    /// Centre and scale Age and Weight.
    pub standardize_u: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            standardize_x: true,
            standardize_u: true,
        }
    }
}

/// Centres and scales every column to mean 0, sample variance 1.
pub fn standardize_columns(m: &mut DMatrix<f64>) -> Result<()> {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if !(var > 0.0) {
            return Err(Error::Data("cannot standardize a constant column".into()));
        }
        let sd = var.sqrt();
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(())
}

/// `Y = log(body fat)`, `U = (Age, Weight)`, `Z = (1, Height)`, `X` the ten
/// circumferences.
pub fn dataset_from_records(records: &[BodyFatRecord], prep: Preprocessing) -> Result<Dataset> {
    let n = records.len();
    if n < MIN_CLEAN_ROWS {
        return Err(Error::InsufficientData {
            rows: n,
            required: MIN_CLEAN_ROWS,
        });
    }
    if let Some(r) = records.iter().find(|r| !(r.bodyfat > 0.0)) {
        return Err(Error::Data(format!("body fat {} has no logarithm", r.bodyfat)));
    }
    let y = DVector::from_fn(n, |i, _| records[i].bodyfat.ln());
    let mut u = DMatrix::from_fn(n, 2, |i, j| if j == 0 { records[i].age } else { records[i].weight });
    let mut x = DMatrix::from_fn(n, 10, |i, j| records[i].circumferences[j]);
    let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { records[i].height });
    if prep.standardize_x {
        standardize_columns(&mut x)?;
    }
    if prep.standardize_u {
        standardize_columns(&mut u)?;
    }
    if x.iter().chain(u.iter()).chain(z.iter()).chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value after preprocessing".into()));
    }
    Dataset::new(y, u, x, z)
}

/// Reads, cleans and maps the body-fat CSV.
pub fn load_bodyfat(path: &Path, rules: &CleaningRules, prep: Preprocessing) -> Result<(Dataset, ExclusionReport)> {
    let records = records_from_table(&read_table(path)?)?;
    let (kept, report) = rules.apply(&records);
    Ok((dataset_from_records(&kept, prep)?, report))
}

/// Coefficient of determination of the least-squares fit of `y` on
/// `[1, columns]`.
pub fn ols_r_squared(y: &DVector<f64>, columns: &DMatrix<f64>) -> Result<f64> {
    let n = y.len();
    let mut design = DMatrix::from_element(n, columns.ncols() + 1, 1.0);
    design.columns_mut(1, columns.ncols()).copy_from(columns);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| Error::SingularDesign(e.to_string()))?;
    let rss = (y - design * coef).norm_squared();
    Ok(r_squared(y, rss))
}

/// Linear-model baseline: `log(body fat)` on every covariate.
pub fn lm_baseline_r_squared(data: &Dataset) -> Result<f64> {
    let n = data.n();
    let mut cols = DMatrix::zeros(n, data.d() + data.p() + 1);
    cols.columns_mut(0, data.d()).copy_from(data.u());
    cols.columns_mut(data.d(), data.p()).copy_from(data.x());
    cols.column_mut(data.d() + data.p()).copy_from(&data.z().column(1));
    ols_r_squared(data.y(), &cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyFatConfig {
    pub family: PenaltyFamily,
    pub grid: TuningGrid,
    pub fit: FitConfig,
    pub seed: u64,
}

impl BodyFatConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            family: PenaltyFamily::default(),
            grid: TuningGrid::default_for(n),
            fit: FitConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
}

/// Table-layout report of the body-fat analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodyFatReport {
    /// Age, Weight, Height, then the circumferences.
    pub coefficients: Vec<CoefficientRow>,
    pub selected: Vec<String>,
    pub r_squared: f64,
    pub lm_r_squared: f64,
    pub knots: usize,
    pub lambda: f64,
    /// `-1` when the index was reported with reversed orientation.
    pub orientation: f64,
    /// Whether the Height function is nonzero.
    pub height_selected: bool,
    pub selection: Selection,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
}

/// Orientation making the largest-magnitude index loading positive; the
/// index model is invariant under `(β, g(u)) ↦ (−β, g(−u))`.
pub fn dominant_orientation(beta: &DVector<f64>) -> f64 {
    let j = beta.iamax();
    if beta[j] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn fit_bodyfat(data: &Dataset, config: &BodyFatConfig) -> Result<BodyFatReport> {
    if data.d() != 2 || data.p() != 10 || data.q() != 2 {
        return Err(Error::Dimension(
            "body-fat data must have 2 linear, 10 index and 2 varying covariates".into(),
        ));
    }
    let selection = select(data, &config.grid, config.family, &config.fit, config.seed)?;
    let fit: &FitResult = &selection.fit;
    let sign = dominant_orientation(&fit.beta);
    let mut coefficients = Vec::new();
    for (name, v) in LINEAR_COLUMNS.iter().zip(fit.theta().iter()) {
        coefficients.push(CoefficientRow { name: capitalize(name), estimate: *v });
    }
    // Height enters through a varying coefficient, reported as selected or not.
    let height_norm = fit.gamma_norms()[1];
    coefficients.push(CoefficientRow {
        name: capitalize(VARYING_COLUMNS[0]),
        estimate: if height_norm == 0.0 { 0.0 } else { height_norm },
    });
    for (name, v) in INDEX_COLUMNS.iter().zip(fit.beta.iter()) {
        coefficients.push(CoefficientRow { name: capitalize(name), estimate: sign * v });
    }
    let selected = coefficients
        .iter()
        .filter(|c| c.estimate != 0.0)
        .map(|c| c.name.clone())
        .collect();
    Ok(BodyFatReport {
        coefficients,
        selected,
        r_squared: r_squared(data.y(), fit.rss),
        lm_r_squared: lm_baseline_r_squared(data)?,
        knots: selection.knots,
        lambda: selection.lambda,
        orientation: sign,
        height_selected: height_norm != 0.0,
        selection,
    })
}

impl BodyFatReport {
    /// Plain-text coefficient table.
    pub fn table(&self) -> String {
        let mut out = String::from("Covariate   PLSIVC\n");
        for c in &self.coefficients {
            out.push_str(&format!("{:<11} {:>9.5}\n", c.name, c.estimate));
        }
        out.push_str(&format!("R^2         {:>9.5}\n", self.r_squared));
        out.push_str(&format!("LM R^2      {:>9.5}\n", self.lm_r_squared));
        out
    }
}
