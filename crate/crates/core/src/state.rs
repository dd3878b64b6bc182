//! Truncated mixed states `(Psi, lambda)` and the functionals built on them.
//!
//! Orbitals are the rows of a `K x M` complex matrix of sine coefficients.
//! The discrete density is the quadrature projection of
//! `sum_k lambda_k |psi_k|^2` onto the retained modes, so `V = (-Delta)^-1 n`
//! and all energies below are exact algebraic identities of the discrete
//! model, not just approximations of each other.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::casimir::Casimir;
use crate::error::{Error, Result};
use crate::spectral::{eigendecompose, hamiltonian_matrix, poisson_solve, Domain, DomainSpec, Eigensystem, ModeField};

/// Allowed `||G - I||_max` for the orbital Gram matrix.
pub const GRAM_TOL: f64 = 1e-8;

/// Relative residual below which Gram-Schmidt reports rank loss.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MixedState {
    domain: Arc<Domain>,
    orbitals: DMatrix<Complex64>,
    occupations: Vec<f64>,
}

impl MixedState {
    /// Checked constructor: shapes, `lambda >= 0` and orthonormal rows.
    pub fn new(domain: &Arc<Domain>, orbitals: DMatrix<Complex64>, occupations: Vec<f64>) -> Result<Self> {
        if orbitals.ncols() != domain.mode_count() || orbitals.nrows() != occupations.len() {
            return Err(Error::InvalidState(format!(
                "{}x{} orbitals do not match {} occupations on {} modes",
                orbitals.nrows(),
                orbitals.ncols(),
                occupations.len(),
                domain.mode_count()
            )));
        }
        if orbitals.nrows() > domain.mode_count() {
            return Err(Error::InvalidState("more orbitals than modes".into()));
        }
        if let Some(index) = occupations.iter().position(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::NegativeOccupation { index, value: occupations[index] });
        }
        let state = MixedState { domain: Arc::clone(domain), orbitals, occupations };
        let defect = state.gram_defect();
        if !(defect <= GRAM_TOL) {
            return Err(Error::InvalidState(format!("orbitals not orthonormal (Gram defect {defect:e})")));
        }
        Ok(state)
    }

    /// Real orbitals (e.g. eigenvectors) as rows.
    pub fn from_real(domain: &Arc<Domain>, orbitals: &DMatrix<f64>, occupations: Vec<f64>) -> Result<Self> {
        Self::new(domain, orbitals.map(|x| Complex64::new(x, 0.0)), occupations)
    }

    /// Random orthonormal orbitals carrying the given occupations.
    pub fn random(domain: &Arc<Domain>, occupations: Vec<f64>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_complex(&mut rng, occupations.len(), domain.mode_count());
        Self::new(domain, gram_schmidt(&raw)?, occupations)
    }

    /// Same occupations, new orbitals; the caller guarantees orthonormality.
    pub(crate) fn with_orbitals(&self, orbitals: DMatrix<Complex64>) -> Self {
        MixedState { domain: Arc::clone(&self.domain), orbitals, occupations: self.occupations.clone() }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn orbitals(&self) -> &DMatrix<Complex64> {
        &self.orbitals
    }

    pub fn occupations(&self) -> &[f64] {
        &self.occupations
    }

    /// Number of tracked orbitals `K`.
    pub fn rank(&self) -> usize {
        self.occupations.len()
    }

    pub fn total_occupation(&self) -> f64 {
        self.occupations.iter().sum()
    }

    pub fn orbital(&self, k: usize) -> Vec<Complex64> {
        self.orbitals.row(k).iter().copied().collect()
    }

    /// `||Psi Psi^* - I||_max`.
    pub fn gram_defect(&self) -> f64 {
        gram_defect(&self.orbitals)
    }

    /// `sum_k lambda_k ||psi_k||^2`.
    pub fn mass(&self) -> f64 {
        self.occupations
            .iter()
            .enumerate()
            .map(|(k, l)| l * self.orbitals.row(k).iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Real part of the one-body matrix `rho_ab = sum_k lambda_k conj(psi_ka) psi_kb`.
    pub fn one_body_matrix(&self) -> DMatrix<f64> {
        let re = self.orbitals.map(|c| c.re);
        let im = self.orbitals.map(|c| c.im);
        let mut weighted_re = re.clone();
        let mut weighted_im = im.clone();
        for (k, l) in self.occupations.iter().enumerate() {
            weighted_re.row_mut(k).scale_mut(*l);
            weighted_im.row_mut(k).scale_mut(*l);
        }
        re.transpose() * weighted_re + im.transpose() * weighted_im
    }

    /// `sum_k lambda_k ||grad psi_k||^2`.
    pub fn kinetic_moment(&self) -> f64 {
        let mu = self.domain.laplace_eigenvalues();
        self.occupations
            .iter()
            .enumerate()
            .map(|(k, l)| l * self.orbitals.row(k).iter().zip(mu).map(|(c, m)| m * c.norm_sqr()).sum::<f64>())
            .sum()
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            domain: self.domain.spec().clone(),
            occupations: self.occupations.clone(),
            orbitals: (0..self.rank()).map(|k| self.orbitals.row(k).iter().map(|c| (c.re, c.im)).collect()).collect(),
        }
    }

    pub fn from_snapshot(snapshot: &StateSnapshot) -> Result<Self> {
        let domain = Domain::new(snapshot.domain.clone())?;
        Self::from_snapshot_on(&domain, snapshot)
    }

    /// Rebuild on an existing domain (must match the snapshot's spec).
    pub fn from_snapshot_on(domain: &Arc<Domain>, snapshot: &StateSnapshot) -> Result<Self> {
        if domain.spec() != &snapshot.domain {
            return Err(Error::DomainMismatch);
        }
        let k = snapshot.orbitals.len();
        let m = domain.mode_count();
        if let Some(row) = snapshot.orbitals.iter().find(|r| r.len() != m) {
            return Err(Error::GridShape { expected: m, got: row.len() });
        }
        let orbitals = DMatrix::from_fn(k, m, |i, j| {
            let (re, im) = snapshot.orbitals[i][j];
            Complex64::new(re, im)
        });
        Self::new(domain, orbitals, snapshot.occupations.clone())
    }
}

/// JSON form of a state: domain spec, occupations and orbital coefficients
/// as `[re, im]` pairs, one row per orbital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSnapshot {
    pub domain: DomainSpec,
    pub occupations: Vec<f64>,
    pub orbitals: Vec<Vec<(f64, f64)>>,
}

pub(crate) fn gram_defect(orbitals: &DMatrix<Complex64>) -> f64 {
    let k = orbitals.nrows();
    let gram = orbitals * orbitals.adjoint();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).norm());
        }
    }
    worst
}

fn random_complex(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<Complex64> {
    // filled row by row so the draw order does not depend on storage layout
    let mut out = DMatrix::<Complex64>::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    out
}

/// Modified Gram-Schmidt over the rows, with one re-orthogonalization pass.
pub fn gram_schmidt(rows: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let (k, m) = rows.shape();
    let mut q = DMatrix::<Complex64>::zeros(k, m);
    for i in 0..k {
        let mut v: DVector<Complex64> = rows.row(i).transpose();
        let original = v.norm();
        for _pass in 0..2 {
            for j in 0..i {
                let qj = q.row(j).transpose();
                let proj = qj.dotc(&v);
                v.axpy(-proj, &qj, Complex64::new(1.0, 0.0));
            }
        }
        let norm = v.norm();
        if !(norm > RANK_TOL * original) || !norm.is_finite() {
            return Err(Error::RankLoss { index: i });
        }
        q.set_row(i, &(v / Complex64::new(norm, 0.0)).transpose());
    }
    Ok(q)
}

/// Density `n = sum_k lambda_k |psi_k|^2`, projected onto the retained modes.
pub fn density(state: &MixedState) -> ModeField {
    let domain = state.domain();
    let coeffs = domain.pair_density(&state.one_body_matrix());
    ModeField::from_coeffs(domain, coeffs).expect("mode count matches")
}

/// `sum_k lambda_k |psi_k(x)|^2` on the grid (nonnegative by construction).
pub fn density_grid(state: &MixedState) -> Vec<f64> {
    let domain = state.domain();
    let mut n = vec![0.0; domain.grid_len()];
    for (k, lam) in state.occupations().iter().enumerate() {
        if *lam == 0.0 {
            continue;
        }
        let psi = domain.synthesize(&state.orbital(k));
        for (acc, p) in n.iter_mut().zip(&psi) {
            *acc += lam * p.norm_sqr();
        }
    }
    n
}

/// Self-consistent potential `V = (-Delta)^-1 n[Psi, lambda]`.
pub fn potential_of(state: &MixedState) -> ModeField {
    poisson_solve(state.domain(), &density(state)).expect("same domain")
}

/// Energy split into its kinetic part and the two forms of the field part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParts {
    pub kinetic: f64,
    /// `1/2 int |grad V|^2`
    pub field: f64,
    /// `1/2 int n V` by grid quadrature
    pub field_nv: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.field
    }
}

pub fn energy_parts(state: &MixedState) -> EnergyParts {
    let domain = state.domain();
    let kin = domain.kinetic_eigenvalues();
    let kinetic = state
        .occupations()
        .iter()
        .enumerate()
        .map(|(k, l)| l * state.orbitals().row(k).iter().zip(kin).map(|(c, t)| t * c.norm_sqr()).sum::<f64>())
        .sum();
    let v = potential_of(state);
    let field = 0.5 * v.dirichlet_energy();
    let n_grid = density_grid(state);
    let field_nv = 0.5 * domain.cell_volume() * n_grid.iter().zip(v.to_grid()).map(|(n, v)| n * v).sum::<f64>();
    EnergyParts { kinetic, field, field_nv }
}

/// Conserved energy `H = sum lambda_k <psi_k, T_m psi_k> + 1/2 int |grad V|^2`.
pub fn energy(state: &MixedState) -> f64 {
    let domain = state.domain();
    let kin = domain.kinetic_eigenvalues();
    let kinetic: f64 = state
        .occupations()
        .iter()
        .enumerate()
        .map(|(k, l)| l * state.orbitals().row(k).iter().zip(kin).map(|(c, t)| t * c.norm_sqr()).sum::<f64>())
        .sum();
    kinetic + 0.5 * potential_of(state).dirichlet_energy()
}

/// `sum_k F*(-lambda_k)`.
pub fn casimir_term(occupations: &[f64], dist: &dyn Casimir) -> Result<f64> {
    occupations.iter().map(|l| dist.f_star(-l)).sum()
}

/// Energy-Casimir functional `H_C = sum F*(-lambda_k) + H`.
pub fn casimir_energy(state: &MixedState, dist: &dyn Casimir) -> Result<f64> {
    Ok(casimir_term(state.occupations(), dist)? + energy(state))
}

/// `<psi_k, H psi_k>` for every orbital and a real symmetric `H`.
pub fn expectations(state: &MixedState, h: &DMatrix<f64>) -> Vec<f64> {
    (0..state.rank())
        .map(|k| {
            let re: DVector<f64> = state.orbitals().row(k).map(|c| c.re).transpose();
            let im: DVector<f64> = state.orbitals().row(k).map(|c| c.im).transpose();
            re.dot(&(h * &re)) + im.dot(&(h * &im))
        })
        .collect()
}

/// Lagrangian
/// `G = sum [F*(-lambda_k) + lambda_k <psi_k,(T_m+V)psi_k>] - 1/2 int |grad V|^2 + sigma (sum lambda - Lambda)`.
pub fn g_functional(
    state: &MixedState,
    potential: &ModeField,
    sigma: f64,
    dist: &dyn Casimir,
    total: f64,
) -> Result<f64> {
    let h = hamiltonian_matrix(state.domain(), potential)?;
    let coupling: f64 = expectations(state, &h.matrix).iter().zip(state.occupations()).map(|(e, l)| l * e).sum();
    Ok(casimir_term(state.occupations(), dist)? + coupling - 0.5 * potential.dirichlet_energy()
        + sigma * (state.total_occupation() - total))
}

/// Trace inequality for `H_V = T_m + V` shifted by `sigma`:
/// `lhs = sum [F*(-lambda_k) + lambda_k (<psi_k, H_V psi_k> + sigma)]`,
/// `rhs = -sum_j F(mu_j(H_V) + sigma)`, with `lhs >= rhs`.
pub fn trace_bound(state: &MixedState, potential: &ModeField, sigma: f64, dist: &dyn Casimir) -> Result<(f64, f64)> {
    let h = hamiltonian_matrix(state.domain(), potential)?;
    let eig = eigendecompose(&h.matrix)?;
    trace_bound_with(state, &h.matrix, &eig, sigma, dist)
}

/// [`trace_bound`] with a precomputed Hamiltonian and eigensystem.
pub fn trace_bound_with(
    state: &MixedState,
    h: &DMatrix<f64>,
    eig: &Eigensystem,
    sigma: f64,
    dist: &dyn Casimir,
) -> Result<(f64, f64)> {
    let lhs = casimir_term(state.occupations(), dist)?
        + expectations(state, h).iter().zip(state.occupations()).map(|(e, l)| l * (e + sigma)).sum::<f64>();
    let rhs = -eig.values.iter().map(|mu| dist.big_f(mu + sigma)).sum::<f64>();
    Ok((lhs, rhs))
}

/// Jensen-type trace inequality `F(<psi,Hpsi>) <= <psi, F(H) psi>` for `H = T_m + V`.
pub fn jensen_check(
    domain: &Domain,
    potential: &ModeField,
    dist: &dyn Casimir,
    psi: &[Complex64],
) -> Result<(f64, f64)> {
    let h = hamiltonian_matrix(domain, potential)?;
    let eig = eigendecompose(&h.matrix)?;
    jensen_check_with(&h.matrix, &eig, dist, psi)
}

/// [`jensen_check`] with a precomputed Hamiltonian and eigensystem.
pub fn jensen_check_with(
    h: &DMatrix<f64>,
    eig: &Eigensystem,
    dist: &dyn Casimir,
    psi: &[Complex64],
) -> Result<(f64, f64)> {
    if psi.len() != h.nrows() {
        return Err(Error::GridShape { expected: h.nrows(), got: psi.len() });
    }
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("psi is not normalized (|psi|^2 = {norm})")));
    }
    let re = DVector::from_iterator(psi.len(), psi.iter().map(|c| c.re));
    let im = DVector::from_iterator(psi.len(), psi.iter().map(|c| c.im));
    let expectation = re.dot(&(h * &re)) + im.dot(&(h * &im));
    let lhs = dist.big_f(expectation);
    let proj_re = eig.vectors.tr_mul(&re);
    let proj_im = eig.vectors.tr_mul(&im);
    let rhs =
        eig.values.iter().enumerate().map(|(j, mu)| dist.big_f(*mu) * (proj_re[j].powi(2) + proj_im[j].powi(2))).sum();
    Ok((lhs, rhs))
}

/// `GramSchmidt(Psi + eps G)` for a seeded random `G` with unit Frobenius norm.
/// Occupations are untouched.
pub fn perturb(state: &MixedState, eps: f64, seed: u64) -> Result<MixedState> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::OutOfDomain { what: "perturbation size", value: eps });
    }
    if eps == 0.0 {
        return Ok(state.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_complex(&mut rng, state.rank(), state.domain().mode_count());
    let g = &g / Complex64::new(g.norm(), 0.0);
    let moved = state.orbitals() + g * Complex64::new(eps, 0.0);
    Ok(state.with_orbitals(gram_schmidt(&moved)?))
}

/// Multiply each occupation by `1 + eps u_k`, `u_k` uniform in `[-1, 1]`.
pub fn perturb_occupations(state: &MixedState, eps: f64, seed: u64) -> Result<MixedState> {
    if !(eps.is_finite() && (0.0..1.0).contains(&eps)) {
        return Err(Error::OutOfDomain { what: "occupation perturbation size", value: eps });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f63_6375_7061_7469);
    let occupations = state.occupations().iter().map(|l| l * (1.0 + eps * rng.gen_range(-1.0..=1.0))).collect();
    Ok(MixedState { domain: Arc::clone(state.domain()), orbitals: state.orbitals().clone(), occupations })
}
