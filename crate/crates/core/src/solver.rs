//! Maximization of the dual functional
//! `Phi(V, sigma) = -1/2 int |grad V|^2 - Tr F(T_m + V + sigma) - sigma Lambda`
//! and assembly of the stationary state.
//!
//! The trace runs over the `M` retained eigenvalues of `T_m + V`. Since
//! `dPhi/dV = Delta V + n` holds exactly for the discrete model, the damped
//! update `V <- V + alpha ((-Delta)^-1 n - V)` is preconditioned gradient
//! ascent; `sigma` is re-solved exactly at every evaluation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::casimir::Casimir;
use crate::error::{Error, Result};
use crate::spectral::{eigendecompose, hamiltonian_matrix, Domain, Eigensystem, ModeField};
use crate::state::{casimir_energy, density, trace_bound, MixedState, StateSnapshot};

/// Potentials dipping below this on the grid are rejected by [`phi_eval`].
pub const NEGATIVE_V_TOL: f64 = 1e-8;
/// Floor on the backtracked damping before the solve is declared failed.
pub const MIN_DAMPING: f64 = 1.0 / (1u64 << 20) as f64;

fn default_damping() -> f64 {
    0.5
}
fn default_max_outer() -> usize {
    500
}
fn default_tol_poisson() -> f64 {
    1e-10
}
fn default_tol_constraint() -> f64 {
    1e-11
}
fn default_bracket() -> (f64, f64) {
    (-10.0, 10.0)
}
fn default_tail_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Total occupation `Lambda`.
    pub lambda: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_tol_poisson")]
    pub tol_poisson: f64,
    #[serde(default = "default_tol_constraint")]
    pub tol_constraint: f64,
    /// Starting bracket for `sigma`; expanded automatically.
    #[serde(default = "default_bracket")]
    pub sigma_bracket: (f64, f64),
    /// Orbitals are kept until the dropped occupation is at most `tail_tol * Lambda`.
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        SolverConfig {
            lambda,
            damping: default_damping(),
            max_outer: default_max_outer(),
            tol_poisson: default_tol_poisson(),
            tol_constraint: default_tol_constraint(),
            sigma_bracket: default_bracket(),
            tail_tol: default_tail_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda must be positive (got {})", self.lambda));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1] (got {})", self.damping));
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        for (name, tol) in
            [("tol_poisson", self.tol_poisson), ("tol_constraint", self.tol_constraint), ("tail_tol", self.tail_tol)]
        {
            if !(tol.is_finite() && tol > 0.0) {
                return bad(format!("{name} must be positive (got {tol})"));
            }
        }
        let (lo, hi) = self.sigma_bracket;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("sigma_bracket must be an increasing finite pair (got ({lo}, {hi}))"));
        }
        Ok(())
    }
}

fn check_nonnegative(potential: &ModeField) -> Result<()> {
    let min = potential.grid_min();
    if min < -NEGATIVE_V_TOL {
        return Err(Error::NegativePotential { min });
    }
    Ok(())
}

/// `Phi(V, sigma)` from a precomputed spectrum of `T_m + V`.
pub fn phi_from_spectrum(potential: &ModeField, spectrum: &[f64], sigma: f64, dist: &dyn Casimir, total: f64) -> f64 {
    -0.5 * potential.dirichlet_energy() - spectrum.iter().map(|mu| dist.big_f(mu + sigma)).sum::<f64>() - sigma * total
}

/// Dual functional; `V` must be nonnegative on the grid.
pub fn phi_eval(domain: &Domain, potential: &ModeField, sigma: f64, dist: &dyn Casimir, total: f64) -> Result<f64> {
    check_nonnegative(potential)?;
    let h = hamiltonian_matrix(domain, potential)?;
    let eig = eigendecompose(&h.matrix)?;
    Ok(phi_from_spectrum(potential, &eig.values, sigma, dist, total))
}

/// Solve `sum_j f(mu_j + sigma) = Lambda` for an ascending spectrum.
///
/// The bracket is doubled outward until the constraint changes sign, then
/// narrowed by safeguarded Newton/bisection.
pub fn solve_sigma(spectrum: &[f64], dist: &dyn Casimir, total: f64, bracket: (f64, f64)) -> Result<f64> {
    let g = |s: f64| spectrum.iter().map(|mu| dist.f(mu + s)).sum::<f64>() - total;
    let dg = |s: f64| spectrum.iter().map(|mu| dist.f_derivative(mu + s)).sum::<f64>();
    let (mut lo, mut hi) = bracket;
    let mut width = (hi - lo).max(1.0);
    let mut expansions = 0;
    while !(g(lo) > 0.0) {
        lo -= width;
        width *= 2.0;
        expansions += 1;
        if expansions > 60 || !lo.is_finite() {
            return Err(Error::ConstraintUnattainable(format!(
                "sum f(mu + sigma) stays below {total} down to sigma = {lo:e}"
            )));
        }
    }
    let mut width = (hi - lo).max(1.0);
    expansions = 0;
    while !(g(hi) < 0.0) {
        if g(hi) == 0.0 {
            return Ok(hi);
        }
        hi += width;
        width *= 2.0;
        expansions += 1;
        if expansions > 60 || !hi.is_finite() {
            return Err(Error::ConstraintUnattainable(format!(
                "sum f(mu + sigma) stays above {total} up to sigma = {hi:e}"
            )));
        }
    }
    let scale = total.max(f64::MIN_POSITIVE);
    let mut sigma = 0.5 * (lo + hi);
    for _ in 0..400 {
        let value = g(sigma);
        if value == 0.0 || value.abs() <= 1e-15 * scale {
            return Ok(sigma);
        }
        if value > 0.0 {
            lo = sigma;
        } else {
            hi = sigma;
        }
        if hi - lo <= 4.0 * f64::EPSILON * sigma.abs().max(1.0) {
            return Ok(sigma);
        }
        let slope = dg(sigma);
        let newton = sigma - value / slope;
        sigma = if slope < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Ok(sigma)
}

/// Multiplier `sigma` for a given potential.
pub fn sigma_solve(domain: &Domain, potential: &ModeField, dist: &dyn Casimir, total: f64) -> Result<f64> {
    let h = hamiltonian_matrix(domain, potential)?;
    let eig = eigendecompose(&h.matrix)?;
    solve_sigma(&eig.values, dist, total, default_bracket())
}

/// One row of the convergence log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScfIterate {
    pub iteration: usize,
    pub phi: f64,
    pub residual_poisson: f64,
    pub residual_constraint: f64,
    pub sigma: f64,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub potential: ModeField,
    pub sigma0: f64,
    /// Eigenvalues of the kept orbitals.
    pub mu0: Vec<f64>,
    /// Eigen-orbitals with `lambda_k = f(mu_k + sigma0)`.
    pub state: MixedState,
    /// Full retained spectrum of `T_m + V0`.
    pub spectrum: Vec<f64>,
    pub phi: f64,
    /// `||Delta V0 + n0||`
    pub residual_poisson: f64,
    /// `|sum lambda_k - Lambda|`
    pub residual_constraint: f64,
    /// Occupation dropped by truncating to `state.rank()` orbitals.
    pub truncated_tail: f64,
    pub duality_gap: f64,
    pub history: Vec<ScfIterate>,
}

impl StationarySolution {
    pub fn iterations(&self) -> usize {
        self.history.last().map_or(0, |h| h.iteration)
    }

    pub fn density(&self) -> ModeField {
        density(&self.state)
    }

    pub fn snapshot(&self) -> SolutionSnapshot {
        SolutionSnapshot {
            state: self.state.snapshot(),
            potential: self.potential.coeffs().to_vec(),
            sigma0: self.sigma0,
            mu0: self.mu0.clone(),
            phi: self.phi,
            residual_poisson: self.residual_poisson,
            residual_constraint: self.residual_constraint,
            truncated_tail: self.truncated_tail,
            duality_gap: self.duality_gap,
            iterations: self.iterations(),
        }
    }
}

/// JSON form of a stationary solution (state snapshot plus `V0`, `sigma0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSnapshot {
    pub state: StateSnapshot,
    /// Sine coefficients of `V0`.
    pub potential: Vec<f64>,
    pub sigma0: f64,
    pub mu0: Vec<f64>,
    pub phi: f64,
    pub residual_poisson: f64,
    pub residual_constraint: f64,
    pub truncated_tail: f64,
    pub duality_gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum ScfError {
    #[error(transparent)]
    Numerical(#[from] Error),
    /// Carries the last iterate, whose `history` is the residual log.
    #[error("SCF did not converge after {} iterations ({reason}); residuals poisson {:e}, constraint {:e}",
        .last.iterations(), .last.residual_poisson, .last.residual_constraint)]
    NotConverged { reason: String, last: Box<StationarySolution> },
}

/// Everything derived from one potential.
struct Evaluation {
    potential: ModeField,
    eig: Eigensystem,
    sigma: f64,
    phi: f64,
    state: MixedState,
    tail: f64,
    target: ModeField,
    residual_poisson: f64,
    residual_constraint: f64,
}

fn evaluate(
    domain: &Arc<Domain>,
    potential: ModeField,
    dist: &dyn Casimir,
    config: &SolverConfig,
) -> Result<Evaluation> {
    let h = hamiltonian_matrix(domain, &potential)?;
    let eig = eigendecompose(&h.matrix)?;
    let sigma = solve_sigma(&eig.values, dist, config.lambda, config.sigma_bracket)?;
    let phi = phi_from_spectrum(&potential, &eig.values, sigma, dist, config.lambda);
    let lam: Vec<f64> = eig.values.iter().map(|mu| dist.f(mu + sigma)).collect();
    // occupations decrease along the ascending spectrum; keep the head
    let mut kept = lam.len();
    let mut tail = 0.0;
    while kept > 1 && tail + lam[kept - 1] <= config.tail_tol * config.lambda {
        tail += lam[kept - 1];
        kept -= 1;
    }
    let orbitals = eig.vectors.columns(0, kept).transpose();
    let state = MixedState::from_real(domain, &orbitals, lam[..kept].to_vec())?;
    let n = density(&state);
    let target = crate::spectral::poisson_solve(domain, &n)?;
    let residual_poisson = potential
        .coeffs()
        .iter()
        .zip(domain.laplace_eigenvalues())
        .zip(n.coeffs())
        .map(|((v, mu), n)| (n - mu * v).powi(2))
        .sum::<f64>()
        .sqrt();
    let residual_constraint = (state.total_occupation() - config.lambda).abs();
    Ok(Evaluation { potential, eig, sigma, phi, state, tail, target, residual_poisson, residual_constraint })
}

fn assemble(e: Evaluation, history: Vec<ScfIterate>, dist: &dyn Casimir) -> Result<StationarySolution> {
    let mut sol = StationarySolution {
        mu0: e.eig.values[..e.state.rank()].to_vec(),
        spectrum: e.eig.values,
        potential: e.potential,
        sigma0: e.sigma,
        state: e.state,
        phi: e.phi,
        residual_poisson: e.residual_poisson,
        residual_constraint: e.residual_constraint,
        truncated_tail: e.tail,
        duality_gap: f64::NAN,
        history,
    };
    sol.duality_gap = duality_gap_of(&sol, dist)?;
    Ok(sol)
}

/// Damped SCF from `V = 0`.
pub fn scf_solve(
    domain: &Arc<Domain>,
    dist: &dyn Casimir,
    config: &SolverConfig,
) -> std::result::Result<StationarySolution, ScfError> {
    scf_solve_from(domain, dist, config, &ModeField::zeros(domain))
}

/// Damped SCF from a given nonnegative potential.
pub fn scf_solve_from(
    domain: &Arc<Domain>,
    dist: &dyn Casimir,
    config: &SolverConfig,
    initial: &ModeField,
) -> std::result::Result<StationarySolution, ScfError> {
    config.validate()?;
    if !initial.domain().same_as(domain) {
        return Err(Error::DomainMismatch.into());
    }
    check_nonnegative(initial)?;
    let mut current = evaluate(domain, initial.clone(), dist, config)?;
    let record = |it: usize, e: &Evaluation, damping: f64| ScfIterate {
        iteration: it,
        phi: e.phi,
        residual_poisson: e.residual_poisson,
        residual_constraint: e.residual_constraint,
        sigma: e.sigma,
        damping,
    };
    let mut history = vec![record(0, &current, 0.0)];
    let converged =
        |e: &Evaluation| e.residual_poisson <= config.tol_poisson && e.residual_constraint <= config.tol_constraint;
    let mut iteration = 0;
    while !converged(&current) {
        if iteration >= config.max_outer {
            let last = assemble(current, history, dist)?;
            return Err(ScfError::NotConverged { reason: "max_outer reached".into(), last: Box::new(last) });
        }
        iteration += 1;
        let mut alpha = config.damping;
        let direction = current.target.axpy(-1.0, &current.potential);
        let next = loop {
            let candidate = evaluate(domain, current.potential.axpy(alpha, &direction), dist, config)?;
            if candidate.phi >= current.phi - 1e-13 * (1.0 + current.phi.abs()) {
                break candidate;
            }
            alpha *= 0.5;
            if alpha < MIN_DAMPING {
                let last = assemble(current, history, dist)?;
                return Err(ScfError::NotConverged { reason: "damping underflow".into(), last: Box::new(last) });
            }
        };
        current = next;
        history.push(record(iteration, &current, alpha));
    }
    check_nonnegative(&current.potential)?;
    let min = current.potential.grid_min();
    if min < -1e-10 {
        return Err(Error::NegativePotential { min }.into());
    }
    Ok(assemble(current, history, dist)?)
}

fn duality_gap_of(sol: &StationarySolution, dist: &dyn Casimir) -> Result<f64> {
    let total = sol.state.total_occupation() + sol.truncated_tail;
    let phi = phi_from_spectrum(&sol.potential, &sol.spectrum, sol.sigma0, dist, total);
    let hc = casimir_energy(&sol.state, dist)?;
    Ok((phi - hc).abs() / (1.0 + phi.abs()))
}

/// `|Phi(V0, sigma0) - H_C(Psi0, lambda0)| / (1 + |Phi|)`.
pub fn duality_check(sol: &StationarySolution, dist: &dyn Casimir, total: f64) -> Result<f64> {
    let phi = phi_eval(sol.state.domain(), &sol.potential, sol.sigma0, dist, total)?;
    let hc = casimir_energy(&sol.state, dist)?;
    Ok((phi - hc).abs() / (1.0 + phi.abs()))
}

/// Trace inequality with multiplier: `lhs >= rhs` with equality at
/// eigen-configurations `lambda_k = f(mu_k + sigma)`.
pub fn shifted_trace_bound(
    state: &MixedState,
    potential: &ModeField,
    sigma: f64,
    dist: &dyn Casimir,
) -> Result<(f64, f64)> {
    trace_bound(state, potential, sigma, dist)
}
