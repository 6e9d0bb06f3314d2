//! SCAD and LASSO penalty calculus and the local quadratic approximation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::h_norm;

/// Default SCAD shape parameter.
pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PenaltyFamily {
    Scad { a: f64 },
    Lasso,
}

impl Default for PenaltyFamily {
    fn default() -> Self {
        PenaltyFamily::Scad { a: DEFAULT_SCAD_A }
    }
}

impl PenaltyFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltyFamily::Scad { a } if !(a > 2.0) => Err(Error::Config(format!(
                "SCAD parameter a must exceed 2, got {a}"
            ))),
            _ => Ok(()),
        }
    }

    /// First derivative `ṗ_λ(ω)` for `ω ≥ 0`.
    pub fn deriv(&self, lambda: f64, omega: f64) -> f64 {
        match *self {
            PenaltyFamily::Scad { a } => scad_deriv_unchecked(lambda, a, omega),
            PenaltyFamily::Lasso => lambda,
        }
    }

    /// Penalty value `p_λ(ω)` for `ω ≥ 0`.
    pub fn value(&self, lambda: f64, omega: f64) -> f64 {
        match *self {
            PenaltyFamily::Scad { a } => scad_value_unchecked(lambda, a, omega),
            PenaltyFamily::Lasso => lambda * omega,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltyFamily::Scad { .. } => "scad",
            PenaltyFamily::Lasso => "lasso",
        }
    }
}

fn check_scad(lambda: f64, a: f64, omega: f64) -> Result<()> {
    if !(a > 2.0) {
        return Err(Error::Config(format!("SCAD parameter a must exceed 2, got {a}")));
    }
    if !(lambda >= 0.0) || !(omega >= 0.0) {
        return Err(Error::Domain(format!(
            "SCAD needs λ ≥ 0 and ω ≥ 0, got λ={lambda}, ω={omega}"
        )));
    }
    Ok(())
}

fn scad_deriv_unchecked(lambda: f64, a: f64, omega: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else if omega <= lambda {
        lambda
    } else {
        (a * lambda - omega).max(0.0) / (a - 1.0)
    }
}

fn scad_value_unchecked(lambda: f64, a: f64, omega: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else if omega <= lambda {
        lambda * omega
    } else if omega <= a * lambda {
        -(omega * omega - 2.0 * a * lambda * omega + lambda * lambda) / (2.0 * (a - 1.0))
    } else {
        (a + 1.0) * lambda * lambda / 2.0
    }
}

/// SCAD derivative `λ{ I(ω ≤ λ) + (aλ − ω)₊ / ((a − 1)λ) · I(ω > λ) }`.
pub fn scad_deriv(lambda: f64, a: f64, omega: f64) -> Result<f64> {
    check_scad(lambda, a, omega)?;
    Ok(scad_deriv_unchecked(lambda, a, omega))
}

/// SCAD value, the integral of [`scad_deriv`] from 0.
pub fn scad_value(lambda: f64, a: f64, omega: f64) -> Result<f64> {
    check_scad(lambda, a, omega)?;
    Ok(scad_value_unchecked(lambda, a, omega))
}

/// LQA curvature `ṗ_λ(|ω₀|)/|ω₀|`.
pub fn lqa_weight(family: PenaltyFamily, lambda: f64, omega0: f64) -> Result<f64> {
    family.validate()?;
    if !(omega0 > 0.0) {
        return Err(Error::Domain(format!(
            "LQA expansion point must be positive, got {omega0}"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("λ must be non-negative, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(family.deriv(lambda, omega0) / omega0)
}

/// Penalty family with one tuning parameter per penalized component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    /// Base λ the per-component values were derived from.
    pub lambda: f64,
    /// `λ_{1l}` for each free index coordinate `φ_l`.
    pub phi: Vec<f64>,
    /// `λ_{2h}` for each linear coefficient `θ_h`.
    pub theta: Vec<f64>,
    /// `λ_{3k}` for each coefficient function `g_k`.
    pub gamma: Vec<f64>,
}

impl PenaltySpec {
    /// Same λ for every component.
    pub fn uniform(family: PenaltyFamily, lambda: f64, n_phi: usize, d: usize, q: usize) -> Self {
        Self {
            family,
            lambda,
            phi: vec![lambda; n_phi],
            theta: vec![lambda; d],
            gamma: vec![lambda; q],
        }
    }

    /// No penalty at all.
    pub fn none(n_phi: usize, d: usize, q: usize) -> Self {
        Self::uniform(PenaltyFamily::default(), 0.0, n_phi, d, q)
    }

    pub fn is_zero(&self) -> bool {
        self.phi
            .iter()
            .chain(&self.theta)
            .chain(&self.gamma)
            .all(|l| *l == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self
            .phi
            .iter()
            .chain(&self.theta)
            .chain(&self.gamma)
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::Config("tuning parameters must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    /// Penalty part of the objective, `n Σ p_λ(|·|)` over all components.
    pub fn total(&self, phi: &DVector<f64>, theta: &DVector<f64>, gamma: &DMatrix<f64>, h: &DMatrix<f64>, n: usize) -> f64 {
        let f = &self.family;
        let mut s = 0.0;
        for (l, v) in self.phi.iter().zip(phi.iter()) {
            s += f.value(*l, v.abs());
        }
        for (l, v) in self.theta.iter().zip(theta.iter()) {
            s += f.value(*l, v.abs());
        }
        for (k, l) in self.gamma.iter().enumerate() {
            s += f.value(*l, h_norm(&gamma.column(k).into_owned(), h));
        }
        n as f64 * s
    }
}

/// The diagonal `Σ(φ)` and block-diagonal `Σ(α)` LQA weight matrices.
#[derive(Debug, Clone)]
pub struct WeightMatrices {
    /// Diagonal of `Σ(φ)`.
    pub sigma_phi: DVector<f64>,
    /// Diagonal entries of `Σ(α)` for θ.
    pub theta_weights: DVector<f64>,
    /// Scalar multiplier of `H` for each γ block.
    pub gamma_weights: DVector<f64>,
    /// Assembled `Σ(α)` of size `d + qL`.
    pub sigma_alpha: DMatrix<f64>,
}

/// Builds `Σ(φ)` and `Σ(α)` at the expansion point `(φ, θ, γ)`.
///
/// Components that are exactly zero are inactive and receive weight zero;
/// the caller removes them from the system.
pub fn build_weight_matrices(
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    spec: &PenaltySpec,
    h: &DMatrix<f64>,
) -> Result<WeightMatrices> {
    let l = h.nrows();
    if h.ncols() != l || gamma.nrows() != l {
        return Err(Error::Dimension(format!(
            "γ blocks have length {} but H is {}×{}",
            gamma.nrows(),
            h.nrows(),
            h.ncols()
        )));
    }
    if spec.phi.len() != phi.len() || spec.theta.len() != theta.len() || spec.gamma.len() != gamma.ncols() {
        return Err(Error::Dimension(
            "penalty spec sizes do not match the coefficient vectors".into(),
        ));
    }
    let weight = |lambda: f64, omega: f64| -> Result<f64> {
        if omega == 0.0 {
            Ok(0.0)
        } else {
            lqa_weight(spec.family, lambda, omega)
        }
    };
    let sigma_phi = DVector::from_iterator(
        phi.len(),
        phi.iter()
            .zip(&spec.phi)
            .map(|(v, lam)| weight(*lam, v.abs()))
            .collect::<Result<Vec<_>>>()?,
    );
    let theta_weights = DVector::from_iterator(
        theta.len(),
        theta
            .iter()
            .zip(&spec.theta)
            .map(|(v, lam)| weight(*lam, v.abs()))
            .collect::<Result<Vec<_>>>()?,
    );
    let gamma_weights = DVector::from_iterator(
        gamma.ncols(),
        (0..gamma.ncols())
            .map(|k| weight(spec.gamma[k], h_norm(&gamma.column(k).into_owned(), h)))
            .collect::<Result<Vec<_>>>()?,
    );
    let d = theta.len();
    let dim = d + l * gamma.ncols();
    let mut sigma_alpha = DMatrix::zeros(dim, dim);
    for (i, w) in theta_weights.iter().enumerate() {
        sigma_alpha[(i, i)] = *w;
    }
    for (k, w) in gamma_weights.iter().enumerate() {
        let off = d + k * l;
        sigma_alpha.view_mut((off, off), (l, l)).copy_from(&(h * *w));
    }
    Ok(WeightMatrices {
        sigma_phi,
        theta_weights,
        gamma_weights,
        sigma_alpha,
    })
}
