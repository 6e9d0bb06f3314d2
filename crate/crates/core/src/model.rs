//! Data containers and the single-index reparameterization.
//!
//! The model is `Y = θᵀU + Σ_k g_k(βᵀX) Z_k + ε` with `‖β‖ = 1` and the first
//! nonzero entry of `β` positive. The index direction is stored through the
//! free coordinates `φ = (β₂, …, β_p)` in the open unit ball, with
//! `β(φ) = (√(1 − ‖φ‖²), φᵀ)ᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::KnotVector;

/// Entries smaller than this count as zero when applying the sign rule.
pub const SIGN_TOLERANCE: f64 = 1e-10;

/// Response plus the three covariate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    u: DMatrix<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, u: DMatrix<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        for (name, rows) in [("U", u.nrows()), ("X", x.nrows()), ("Z", z.nrows())] {
            if rows != n {
                return Err(Error::Dimension(format!(
                    "{name} has {rows} rows but Y has {n}"
                )));
            }
        }
        if x.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "index block X needs at least 2 columns, got {}",
                x.ncols()
            )));
        }
        if z.ncols() < 1 {
            return Err(Error::Dimension("Z needs at least one column".into()));
        }
        let finite = y.iter().chain(u.iter()).chain(x.iter()).chain(z.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Data("dataset contains non-finite entries".into()));
        }
        Ok(Self { y, u, x, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn d(&self) -> usize {
        self.u.ncols()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn q(&self) -> usize {
        self.z.ncols()
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Rows selected by `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: self.y.select_rows(rows),
            u: self.u.select_rows(rows),
            x: self.x.select_rows(rows),
            z: self.z.select_rows(rows),
        }
    }

    /// Keeps only the listed columns of each covariate block.
    pub fn select_columns(&self, u_cols: &[usize], x_cols: &[usize], z_cols: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.y.clone(),
            self.u.select_columns(u_cols),
            self.x.select_columns(x_cols),
            self.z.select_columns(z_cols),
        )
    }

    /// Index values `βᵀXᵢ` for every row.
    pub fn index_values(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }
}

/// Free index coordinates `φ` with `‖φ‖ < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexParam(pub(crate) DVector<f64>);

impl IndexParam {
    pub fn new(phi: DVector<f64>) -> Result<Self> {
        let norm = phi.norm();
        if !(norm < 1.0) {
            return Err(Error::Domain(format!(
                "index parameter must satisfy ‖φ‖ < 1, got {norm}"
            )));
        }
        Ok(Self(phi))
    }

    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `β(φ) = (√(1 − ‖φ‖²), φᵀ)ᵀ`.
pub fn beta_from_phi(phi: &IndexParam) -> DVector<f64> {
    let phi = phi.as_vector();
    let mut beta = DVector::zeros(phi.len() + 1);
    beta[0] = (1.0 - phi.norm_squared()).max(0.0).sqrt();
    beta.rows_mut(1, phi.len()).copy_from(phi);
    beta
}

/// Normalizes `β` to unit length with its first nonzero entry positive.
pub fn normalize_beta(beta: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = beta.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain("index direction must be a nonzero finite vector".into()));
    }
    let mut b = beta / norm;
    if let Some(first) = b.iter().find(|v| v.abs() > SIGN_TOLERANCE) {
        if *first < 0.0 {
            b.neg_mut();
        }
    }
    Ok(b)
}

/// Inverse of [`beta_from_phi`] after normalization and the sign rule.
///
/// Fails with a domain error when the normalized first entry is zero,
/// since such a direction sits on the boundary `‖φ‖ = 1`.
pub fn phi_from_beta(beta: &DVector<f64>) -> Result<IndexParam> {
    let b = normalize_beta(beta)?;
    IndexParam::new(b.rows(1, b.len() - 1).into_owned())
}

/// Jacobian `∂β/∂φ`, a `p × (p−1)` matrix.
pub fn jacobian(phi: &IndexParam) -> DMatrix<f64> {
    let v = phi.as_vector();
    let m = v.len();
    let scale = -(1.0 - v.norm_squared()).sqrt().recip();
    let mut j = DMatrix::zeros(m + 1, m);
    for c in 0..m {
        j[(0, c)] = scale * v[c];
        j[(c + 1, c)] = 1.0;
    }
    j
}

/// `Wᵢ = I_q ⊗ B(βᵀXᵢ) · Zᵢ`: block `k` is `Z_{ik} B(βᵀXᵢ)`.
pub fn design_row(kv: &KnotVector, beta: &DVector<f64>, x_row: &DVector<f64>, z_row: &DVector<f64>) -> DVector<f64> {
    let basis = kv.eval(beta.dot(x_row));
    let l = basis.len();
    let mut w = DVector::zeros(l * z_row.len());
    for (k, zk) in z_row.iter().enumerate() {
        w.rows_mut(k * l, l).copy_from(&(&basis * *zk));
    }
    w
}

/// `W̃ᵢ = (Uᵢ; Wᵢ)`.
pub fn augmented_row(u_row: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u_row.len() + w.len());
    out.rows_mut(0, u_row.len()).copy_from(u_row);
    out.rows_mut(u_row.len(), w.len()).copy_from(w);
    out
}

/// `‖γ_k‖_H = (γ_kᵀ H γ_k)^{1/2}`.
pub fn h_norm(gamma_k: &DVector<f64>, h: &DMatrix<f64>) -> f64 {
    (h * gamma_k).dot(gamma_k).max(0.0).sqrt()
}

/// Estimated parameters `(φ, θ, γ)`; `γ` is stored as an `L × q` matrix
/// whose column `k` holds the spline coefficients of `g_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub phi: DVector<f64>,
    pub theta: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

impl Coefficients {
    pub fn beta(&self) -> DVector<f64> {
        beta_from_phi(&IndexParam(self.phi.clone()))
    }

    /// Largest absolute difference across `(φ, θ, γ)`; shape changes count as infinite.
    pub fn max_abs_change(&self, other: &Coefficients) -> f64 {
        if self.phi.len() != other.phi.len()
            || self.theta.len() != other.theta.len()
            || self.gamma.shape() != other.gamma.shape()
        {
            return f64::INFINITY;
        }
        let a = (&self.phi - &other.phi).amax();
        let b = if self.theta.is_empty() { 0.0 } else { (&self.theta - &other.theta).amax() };
        let c = (&self.gamma - &other.gamma).amax();
        a.max(b).max(c)
    }
}
