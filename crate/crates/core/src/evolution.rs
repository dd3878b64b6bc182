//! Time integration of the orbital Schrödinger–Poisson system with fixed
//! occupations.
//!
//! One Strang step is `e^{-i T dt/2} e^{-i W(V_m) dt} e^{-i T dt/2}`. The
//! kinetic factor is an exact diagonal phase. `W(V)` is the Galerkin
//! potential matrix, and `V_m` is the symmetric midpoint potential
//! `V_m = V[e^{-i W(V_m) dt/2} psi]`, iterated to round-off. Exponentiating
//! `W` in the retained-mode space (rather than applying a pointwise phase on
//! the grid and projecting back) keeps every step unitary. The sign
//! convention is `i d/dt psi = (T_m + V) psi`, so the nonlinearity in
//! Duhamel form is `F[Psi] = -i W(V[Psi]) Psi`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::casimir::Casimir;
use crate::error::{Error, Result};
use crate::spectral::{hminus1_norm, poisson_solve, potential_matrix, Domain, ModeField};
use crate::state::{casimir_term, density, energy, gram_schmidt, MixedState};

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    /// `0` gives a single record of the initial state.
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Re-orthonormalize every this many steps; `0` never.
    #[serde(default)]
    pub renormalize_every: usize,
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        EvolutionConfig { dt, t_end, record_every: 1, renormalize_every: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::InvalidConfig(format!("t_end must be nonnegative (got {})", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }

    /// `floor(t_end / dt)`, tolerant to representation error in the ratio.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt * (1.0 + 1e-12)).floor() as usize
    }
}

/// Observables sampled along a trajectory (columns of the CSV).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub casimir: Vec<f64>,
    pub ortho_defect: Vec<f64>,
    /// `||n(t) - n0||_{H^-1}`; NaN without a reference density.
    pub hminus1_dist: Vec<f64>,
    pub mass: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,energy,casimir,ortho_defect,hminus1_dist,mass\n");
        for i in 0..self.len() {
            let row = [
                self.times[i],
                self.energy[i],
                self.casimir[i],
                self.ortho_defect[i],
                self.hminus1_dist[i],
                self.mass[i],
            ];
            let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Largest `|x(t) - x(0)| / |x(0)|` of a column.
    pub fn relative_drift(column: &[f64]) -> f64 {
        let Some(first) = column.first() else { return 0.0 };
        column.iter().map(|v| (v - first).abs()).fold(0.0, f64::max) / first.abs()
    }
}

/// Shortest round-trip decimal form (exponent notation for tiny/huge values).
pub fn format_number(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error(transparent)]
    Numerical(#[from] Error),
    /// The state became non-finite; `record` holds every valid row.
    #[error("non-finite state after t = {}", match .last_good_time { Some(t) => t.to_string(), None => "(no valid record)".to_string() })]
    NonFinite { last_good_time: Option<f64>, record: Box<TrajectoryRecord> },
}

/// `psi <- e^{-i T dt} psi` for every orbital.
pub fn kinetic_phase(domain: &Domain, orbitals: &DMatrix<Complex64>, dt: f64) -> DMatrix<Complex64> {
    let phases: Vec<Complex64> =
        domain.kinetic_eigenvalues().iter().map(|t| Complex64::from_polar(1.0, -t * dt)).collect();
    let mut out = orbitals.clone();
    for (j, phase) in phases.iter().enumerate() {
        for c in out.column_mut(j).iter_mut() {
            *c *= phase;
        }
    }
    out
}

/// Substep cap; larger `||W|| tau` is treated as a blow-up.
const MAX_SUBSTEPS: usize = 100_000;

/// `Psi <- Psi e^{-i W tau}` (rows are orbitals, `W` real symmetric) by
/// scaled Taylor series. Returns `None` if the exponent is not usable.
fn exp_potential(orbitals: &DMatrix<Complex64>, w: &DMatrix<f64>, tau: f64) -> Option<DMatrix<Complex64>> {
    let norm = w.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * tau.abs();
    if !norm.is_finite() {
        return None;
    }
    let substeps = (norm / 0.5).ceil().max(1.0);
    if substeps > MAX_SUBSTEPS as f64 {
        return None;
    }
    let substeps = substeps as usize;
    let h = tau / substeps as f64;
    let k = orbitals.nrows();
    // real and imaginary parts stacked, so each Taylor term is one product
    let mut x =
        DMatrix::from_fn(
            2 * k,
            orbitals.ncols(),
            |i, j| {
                if i < k {
                    orbitals[(i, j)].re
                } else {
                    orbitals[(i - k, j)].im
                }
            },
        );
    for _ in 0..substeps {
        let mut term = x.clone();
        let scale = x.amax().max(f64::MIN_POSITIVE);
        for n in 1..60 {
            // term <- term * (-i h W) / n, i.e. (re, im) <- (im, -re) W h / n
            let product = &term * w;
            let c = h / n as f64;
            for j in 0..product.ncols() {
                for i in 0..k {
                    term[(i, j)] = c * product[(i + k, j)];
                    term[(i + k, j)] = -c * product[(i, j)];
                }
            }
            x += &term;
            if term.amax() <= 1e-18 * scale {
                break;
            }
        }
    }
    Some(DMatrix::from_fn(k, x.ncols(), |i, j| Complex64::new(x[(i, j)], x[(i + k, j)])))
}

fn self_potential(state: &MixedState) -> ModeField {
    poisson_solve(state.domain(), &density(state)).expect("same domain")
}

fn all_finite(m: &DMatrix<Complex64>) -> bool {
    m.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

/// Potential substep with the symmetric midpoint potential.
fn potential_step(state: &MixedState, dt: f64) -> Option<MixedState> {
    let domain = state.domain();
    let mut v = self_potential(state);
    let mut w = potential_matrix(domain, &v).ok()?.0;
    let mut previous = f64::INFINITY;
    for _ in 0..12 {
        let half = state.with_orbitals(exp_potential(state.orbitals(), &w, 0.5 * dt)?);
        let v_next = self_potential(&half);
        let change = v_next.axpy(-1.0, &v).l2_norm();
        let scale = 1.0 + v_next.l2_norm();
        v = v_next;
        w = potential_matrix(domain, &v).ok()?.0;
        if !change.is_finite() {
            return None;
        }
        // converged, or stalled at round-off
        if change <= 1e-15 * scale || (change <= 1e-12 * scale && change >= 0.5 * previous) {
            break;
        }
        previous = change;
    }
    Some(state.with_orbitals(exp_potential(state.orbitals(), &w, dt)?))
}

fn try_step(state: &MixedState, dt: f64) -> Option<MixedState> {
    let a = state.with_orbitals(kinetic_phase(state.domain(), state.orbitals(), 0.5 * dt));
    let b = potential_step(&a, dt)?;
    let c = state.with_orbitals(kinetic_phase(state.domain(), b.orbitals(), 0.5 * dt));
    all_finite(c.orbitals()).then_some(c)
}

/// One Strang step; occupations are carried over untouched.
pub fn strang_step(state: &MixedState, dt: f64) -> Result<MixedState> {
    try_step(state, dt).ok_or(Error::InvalidState("non-finite state in Strang step".into()))
}

struct Observer<'a> {
    casimir_const: f64,
    reference: Option<&'a ModeField>,
}

impl Observer<'_> {
    fn push(&self, record: &mut TrajectoryRecord, t: f64, state: &MixedState) -> bool {
        let h = energy(state);
        let hm1 = match self.reference {
            Some(n0) => hminus1_norm(state.domain(), &density(state).axpy(-1.0, n0)),
            None => f64::NAN,
        };
        let row = [h, self.casimir_const + h, state.gram_defect(), state.mass()];
        if row.iter().any(|v| !v.is_finite()) || (self.reference.is_some() && !hm1.is_finite()) {
            return false;
        }
        record.times.push(t);
        record.energy.push(row[0]);
        record.casimir.push(row[1]);
        record.ortho_defect.push(row[2]);
        record.hminus1_dist.push(hm1);
        record.mass.push(row[3]);
        true
    }
}

/// Repeated Strang steps with observables every `record_every` steps.
///
/// `reference` is the stationary density `n0` for the `H^-1` distance.
pub fn evolve(
    state: &MixedState,
    config: &EvolutionConfig,
    dist: &dyn Casimir,
    reference: Option<&ModeField>,
) -> std::result::Result<(MixedState, TrajectoryRecord), EvolveError> {
    config.validate()?;
    if let Some(n0) = reference {
        if !n0.domain().same_as(state.domain()) {
            return Err(Error::DomainMismatch.into());
        }
    }
    let observer = Observer { casimir_const: casimir_term(state.occupations(), dist)?, reference };
    let mut record = TrajectoryRecord::default();
    let abort = |record: TrajectoryRecord| {
        let last_good_time = record.times.last().copied();
        EvolveError::NonFinite { last_good_time, record: Box::new(record) }
    };
    if !all_finite(state.orbitals()) || !observer.push(&mut record, 0.0, state) {
        return Err(abort(record));
    }
    let mut current = state.clone();
    for step in 1..=config.steps() {
        current = match try_step(&current, config.dt) {
            Some(next) => next,
            None => return Err(abort(record)),
        };
        if config.renormalize_every > 0 && step % config.renormalize_every == 0 {
            current = current.with_orbitals(gram_schmidt(current.orbitals())?);
        }
        if step % config.record_every == 0 && !observer.push(&mut record, step as f64 * config.dt, &current) {
            return Err(abort(record));
        }
    }
    Ok((current, record))
}

/// Duhamel residual of one step,
/// `||Psi(dt) - e^{-iT dt} Psi(0) - dt e^{-iT dt/2} F[(Psi(0) + Psi(dt)) / 2]||_F`,
/// i.e. the mild-solution identity with the integral by the midpoint rule.
pub fn mild_residual(state0: &MixedState, state_dt: &MixedState, dt: f64) -> Result<f64> {
    let domain = state0.domain();
    if !domain.same_as(state_dt.domain()) {
        return Err(Error::DomainMismatch);
    }
    if state0.occupations() != state_dt.occupations() || state0.orbitals().shape() != state_dt.orbitals().shape() {
        return Err(Error::InvalidState("states do not belong to the same trajectory".into()));
    }
    let mid = state0.with_orbitals((state0.orbitals() + state_dt.orbitals()) * Complex64::new(0.5, 0.0));
    let w = potential_matrix(domain, &self_potential(&mid))?.0;
    let mid_re = mid.orbitals().map(|c| c.re);
    let mid_im = mid.orbitals().map(|c| c.im);
    // F = -i W psi (rows: psi W)
    let (wr, wi) = (&mid_re * &w, &mid_im * &w);
    let f = DMatrix::from_fn(wr.nrows(), wr.ncols(), |i, j| Complex64::new(wi[(i, j)], -wr[(i, j)]));
    let duhamel = kinetic_phase(domain, &f, 0.5 * dt) * Complex64::new(dt, 0.0);
    let residual = state_dt.orbitals() - kinetic_phase(domain, state0.orbitals(), dt) - duhamel;
    Ok(residual.norm())
}
