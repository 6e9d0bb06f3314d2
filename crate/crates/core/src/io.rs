//! CSV ingestion with column-role mapping, dataset round trips and fit
//! serialization.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::model::Dataset;

/// Column name standing for a constant `1` (an intercept function in `Z`).
pub const INTERCEPT: &str = "1";

/// A numeric table with case-insensitive column lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Position of `name`, ignoring ASCII case and surrounding whitespace.
    pub fn position(&self, name: &str) -> Option<usize> {
        let key = name.trim();
        self.headers.iter().position(|h| h.trim().eq_ignore_ascii_case(key))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if name == INTERCEPT {
            return Ok(vec![1.0; self.n_rows()]);
        }
        let j = self.position(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_table_from<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() {
        return Err(Error::Data("CSV has no header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "row {}, column `{}`: `{field}` is not a number",
                        i + 1,
                        headers[j]
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

pub fn read_table(path: &Path) -> Result<Table> {
    read_table_from(File::open(path)?)
}

/// Assignment of table columns to the model roles `Y`, `U`, `X`, `Z`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub y: String,
    pub u: Vec<String>,
    pub x: Vec<String>,
    pub z: Vec<String>,
}

impl ColumnRoles {
    /// Roles inferred from the `y`, `u<j>`, `x<j>`, `z<j>` naming used by
    /// [`write_dataset`].
    pub fn by_prefix(table: &Table) -> Result<Self> {
        let pick = |prefix: char| {
            let mut cols: Vec<(usize, String)> = table
                .headers
                .iter()
                .filter_map(|h| {
                    let h = h.trim();
                    let rest = h.strip_prefix(prefix)?;
                    rest.parse::<usize>().ok().map(|j| (j, h.to_string()))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, h)| h).collect::<Vec<_>>()
        };
        if table.position("y").is_none() {
            return Err(Error::MissingColumn("y".into()));
        }
        Ok(Self {
            y: "y".into(),
            u: pick('u'),
            x: pick('x'),
            z: pick('z'),
        })
    }

    fn all(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.y).chain(&self.u).chain(&self.x).chain(&self.z)
    }
}

fn matrix(table: &Table, names: &[String]) -> Result<DMatrix<f64>> {
    let cols = names.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(table.n_rows(), names.len(), |i, j| cols[j][i]))
}

/// Builds a [`Dataset`]; every role column must exist in the table.
pub fn dataset_from_table(table: &Table, roles: &ColumnRoles) -> Result<Dataset> {
    if let Some(missing) = roles.all().find(|c| c.as_str() != INTERCEPT && table.position(c).is_none()) {
        return Err(Error::MissingColumn(missing.clone()));
    }
    let y = DVector::from_vec(table.column(&roles.y)?);
    Dataset::new(y, matrix(table, &roles.u)?, matrix(table, &roles.x)?, matrix(table, &roles.z)?)
        .map_err(|e| Error::Data(e.to_string()))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn dataset_headers(data: &Dataset) -> Vec<String> {
    let mut h = vec!["y".to_string()];
    h.extend((1..=data.d()).map(|j| format!("u{j}")));
    h.extend((1..=data.p()).map(|j| format!("x{j}")));
    h.extend((1..=data.q()).map(|j| format!("z{j}")));
    h
}

pub fn write_dataset_to<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(dataset_headers(data))?;
    for i in 0..data.n() {
        let mut rec = vec![fmt_f64(data.y()[i])];
        rec.extend(data.u().row(i).iter().map(|v| fmt_f64(*v)));
        rec.extend(data.x().row(i).iter().map(|v| fmt_f64(*v)));
        rec.extend(data.z().row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset_to(data, File::create(path)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let table = read_table(path)?;
    let roles = ColumnRoles::by_prefix(&table)?;
    dataset_from_table(&table, &roles)
}

/// Names attached to the components of a fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Names {
    pub u: Vec<String>,
    pub x: Vec<String>,
    pub z: Vec<String>,
}

impl Names {
    pub fn from_roles(roles: &ColumnRoles) -> Self {
        Self {
            u: roles.u.clone(),
            x: roles.x.clone(),
            z: roles.z.clone(),
        }
    }

    pub fn generic(data: &Dataset) -> Self {
        Self {
            u: (1..=data.d()).map(|j| format!("u{j}")).collect(),
            x: (1..=data.p()).map(|j| format!("x{j}")).collect(),
            z: (1..=data.q()).map(|j| format!("z{j}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub x: Vec<String>,
    pub u: Vec<String>,
    pub z: Vec<String>,
}

/// Serializable summary of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    /// `L × q` spline coefficients, one inner vector per varying coefficient.
    pub gamma: Vec<Vec<f64>>,
    pub selected: Selected,
    pub converged: bool,
    pub iterations: usize,
    pub rss: f64,
    pub objective: f64,
    pub names: Names,
    pub knots: Vec<f64>,
    pub degree: usize,
}

impl FitReport {
    pub fn new(fit: &FitResult, names: &Names) -> Self {
        let keep = |names: &[String], values: &mut dyn Iterator<Item = bool>| {
            names
                .iter()
                .zip(values)
                .filter(|(_, nz)| *nz)
                .map(|(n, _)| n.clone())
                .collect::<Vec<_>>()
        };
        let gamma_norms = fit.gamma_norms();
        Self {
            beta: fit.beta.iter().copied().collect(),
            theta: fit.theta().iter().copied().collect(),
            gamma: (0..fit.gamma().ncols())
                .map(|k| fit.gamma().column(k).iter().copied().collect())
                .collect(),
            selected: Selected {
                x: keep(&names.x, &mut fit.beta.iter().map(|v| *v != 0.0)),
                u: keep(&names.u, &mut fit.theta().iter().map(|v| *v != 0.0)),
                z: keep(&names.z, &mut gamma_norms.iter().map(|v| *v != 0.0)),
            },
            converged: fit.converged,
            iterations: fit.iterations,
            rss: fit.rss,
            objective: fit.objective,
            names: names.clone(),
            knots: fit.knots.knots().to_vec(),
            degree: fit.knots.degree(),
        }
    }
}

/// Pretty JSON; `serde_json` writes shortest round-trip representations.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

/// Writes rows of numbers with a header, 17 significant digits per value.
pub fn write_numeric_csv<W: Write>(writer: W, headers: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(headers)?;
    for r in rows {
        w.write_record(r.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}
