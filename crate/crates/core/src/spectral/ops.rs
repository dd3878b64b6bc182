//! Diagonal operators of the spectral calculus and the Sobolev-type norms.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

use super::domain::Domain;
use super::field::ModeField;

/// `T_m = sqrt(-Delta + m^2) - m` acting coefficient-wise.
pub fn apply_kinetic(domain: &Domain, field: &ModeField) -> Result<ModeField> {
    field.check_domain(domain)?;
    let coeffs = field.coeffs().iter().zip(domain.kinetic_eigenvalues()).map(|(c, t)| c * t).collect();
    ModeField::from_coeffs(field.domain(), coeffs)
}

/// Kinetic quadratic form `<psi, T_m psi>` of a complex coefficient vector.
pub fn kinetic_form(domain: &Domain, psi: &[Complex64]) -> f64 {
    psi.iter().zip(domain.kinetic_eigenvalues()).map(|(c, t)| t * c.norm_sqr()).sum()
}

/// Solve `-Delta V = n` with Dirichlet conditions: `V_k = n_k / mu0_k`.
pub fn poisson_solve(domain: &Domain, density: &ModeField) -> Result<ModeField> {
    density.check_domain(domain)?;
    let coeffs = density.coeffs().iter().zip(domain.laplace_eigenvalues()).map(|(n, mu)| n / mu).collect();
    ModeField::from_coeffs(density.domain(), coeffs)
}

/// `-Delta u`, coefficient-wise.
pub fn apply_neg_laplacian(domain: &Domain, field: &ModeField) -> Result<ModeField> {
    field.check_domain(domain)?;
    let coeffs = field.coeffs().iter().zip(domain.laplace_eigenvalues()).map(|(c, mu)| c * mu).collect();
    ModeField::from_coeffs(field.domain(), coeffs)
}

/// `||u||_{H^-1} = (u, (-Delta)^-1 u)^(1/2)`.
pub fn hminus1_norm(domain: &Domain, u: &ModeField) -> f64 {
    u.coeffs().iter().zip(domain.laplace_eigenvalues()).map(|(c, mu)| c * c / mu).sum::<f64>().sqrt()
}

fn check_occupations(occupations: &[f64]) -> Result<()> {
    match occupations.iter().position(|&l| !(l >= 0.0)) {
        Some(index) => Err(Error::NegativeOccupation { index, value: occupations[index] }),
        None => Ok(()),
    }
}

fn weighted_norm(
    domain: &Domain,
    orbitals: &DMatrix<Complex64>,
    occupations: &[f64],
    weight: impl Fn(f64) -> f64,
) -> Result<f64> {
    check_occupations(occupations)?;
    if orbitals.nrows() != occupations.len() || orbitals.ncols() != domain.mode_count() {
        return Err(Error::InvalidState(format!(
            "{}x{} orbitals do not match {} occupations on {} modes",
            orbitals.nrows(),
            orbitals.ncols(),
            occupations.len(),
            domain.mode_count()
        )));
    }
    let w: Vec<f64> = domain.laplace_eigenvalues().iter().map(|&mu| weight(mu)).collect();
    let total: f64 = occupations
        .iter()
        .enumerate()
        .map(|(k, lam)| {
            let row: f64 = orbitals.row(k).iter().zip(&w).map(|(c, w)| w * c.norm_sqr()).sum();
            lam * row
        })
        .sum();
    Ok(total.sqrt())
}

/// Homogeneous norm `(sum_k lambda_k ||(-Delta)^(s/2) phi_k||^2)^(1/2)`.
pub fn sobolev_hs_norm(domain: &Domain, orbitals: &DMatrix<Complex64>, occupations: &[f64], s: f64) -> Result<f64> {
    weighted_norm(domain, orbitals, occupations, |mu| mu.powf(s))
}

/// Inhomogeneous norm `(sum_k lambda_k ||(1 - Delta)^(s/2) phi_k||^2)^(1/2)`.
pub fn sobolev_inhomogeneous_norm(
    domain: &Domain,
    orbitals: &DMatrix<Complex64>,
    occupations: &[f64],
    s: f64,
) -> Result<f64> {
    weighted_norm(domain, orbitals, occupations, |mu| (1.0 + mu).powf(s))
}
