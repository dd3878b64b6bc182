use std::sync::Arc;

use crate::error::{Error, Result};

use super::domain::Domain;

/// Real scalar field (potential or density) in the orthonormal sine basis.
#[derive(Debug, Clone)]
pub struct ModeField {
    domain: Arc<Domain>,
    coeffs: Vec<f64>,
}

impl ModeField {
    pub fn zeros(domain: &Arc<Domain>) -> Self {
        ModeField { domain: Arc::clone(domain), coeffs: vec![0.0; domain.mode_count()] }
    }

    pub fn from_coeffs(domain: &Arc<Domain>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != domain.mode_count() {
            return Err(Error::GridShape { expected: domain.mode_count(), got: coeffs.len() });
        }
        Ok(ModeField { domain: Arc::clone(domain), coeffs })
    }

    /// `c * e_slot`.
    pub fn basis(domain: &Arc<Domain>, slot: usize, c: f64) -> Self {
        let mut f = Self::zeros(domain);
        f.coeffs[slot] = c;
        f
    }

    /// Expand grid samples (quadrature projection onto the retained modes).
    pub fn from_grid(domain: &Arc<Domain>, grid: &[f64]) -> Result<Self> {
        if grid.len() != domain.grid_len() {
            return Err(Error::GridShape { expected: domain.grid_len(), got: grid.len() });
        }
        Ok(ModeField { domain: Arc::clone(domain), coeffs: domain.analyze(grid) })
    }

    pub fn to_grid(&self) -> Vec<f64> {
        self.domain.synthesize(&self.coeffs)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub(crate) fn check_domain(&self, domain: &Domain) -> Result<()> {
        if self.domain.same_as(domain) {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }

    /// L2 norm; equals the Euclidean norm of the coefficients.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// L2 inner product.
    pub fn dot(&self, other: &ModeField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ModeField) -> ModeField {
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + alpha * b).collect();
        ModeField { domain: Arc::clone(&self.domain), coeffs }
    }

    pub fn scaled(&self, s: f64) -> ModeField {
        ModeField { domain: Arc::clone(&self.domain), coeffs: self.coeffs.iter().map(|c| s * c).collect() }
    }

    /// Smallest grid sample.
    pub fn grid_min(&self) -> f64 {
        self.to_grid().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Dirichlet energy `int |grad u|^2 = sum mu0_k u_k^2`.
    pub fn dirichlet_energy(&self) -> f64 {
        self.coeffs.iter().zip(self.domain.laplace_eigenvalues()).map(|(c, mu)| mu * c * c).sum()
    }

    /// `||u||_{H^1}^2 = sum (1 + mu0_k) u_k^2`.
    pub fn h1_norm(&self) -> f64 {
        self.coeffs.iter().zip(self.domain.laplace_eigenvalues()).map(|(c, mu)| (1.0 + mu) * c * c).sum::<f64>().sqrt()
    }
}
