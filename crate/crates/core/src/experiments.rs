//! Stability campaign (solve, perturb, evolve, compare with the Casimir gap)
//! and the property suites that check the class, state, solver and evolution
//! invariants on a concrete plan.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::casimir::{least_squares_slope, validate_casimir, Casimir, CasimirDistribution};
use crate::error::{Error, Result};
use crate::evolution::{evolve, format_number, mild_residual, strang_step, EvolutionConfig, TrajectoryRecord};
use crate::solver::{phi_eval, scf_solve, scf_solve_from, solve_sigma, ScfError, SolverConfig, StationarySolution};
use crate::spectral::{
    eigendecompose, hamiltonian_matrix, poisson_solve, semiclassical_constant, Domain, DomainSpec, ModeField,
};
use crate::state::{
    casimir_energy, density, density_grid, energy_parts, g_functional, jensen_check_with, perturb, perturb_occupations,
    potential_of, trace_bound, trace_bound_with, MixedState,
};

fn default_margin_tol() -> f64 {
    1e-6
}

/// Everything a stability or verification run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub domain: DomainSpec,
    pub distribution: CasimirDistribution,
    pub solver: SolverConfig,
    pub perturbation_sizes: Vec<f64>,
    pub evolution: EvolutionConfig,
    pub seeds: Vec<u64>,
    /// Also perturb the occupations (the gap then carries the `sigma0` shift).
    #[serde(default)]
    pub perturb_occupations: bool,
    /// A cell passes when `max_lhs - casimir_gap <= margin_tol`.
    #[serde(default = "default_margin_tol")]
    pub margin_tol: f64,
}

impl ExperimentPlan {
    /// 1D box of length pi, 64 modes, Boltzmann with beta = 1, Lambda = 1.
    pub fn desk(mass: f64) -> Self {
        ExperimentPlan {
            domain: DomainSpec::interval(std::f64::consts::PI, 64, mass),
            distribution: CasimirDistribution::boltzmann(1.0),
            solver: SolverConfig::new(1.0),
            perturbation_sizes: vec![1e-3, 3e-3, 1e-2],
            evolution: EvolutionConfig { dt: 1e-2, t_end: 5.0, record_every: 10, renormalize_every: 0 },
            seeds: vec![1, 2, 3],
            perturb_occupations: false,
            margin_tol: default_margin_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.distribution.validate()?;
        self.solver.validate()?;
        self.evolution.validate()?;
        if self.perturbation_sizes.is_empty() {
            return Err(Error::InvalidConfig("perturbation_sizes must not be empty".into()));
        }
        if let Some(e) = self.perturbation_sizes.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::InvalidConfig(format!("perturbation sizes must be nonnegative (got {e})")));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if !(self.margin_tol.is_finite() && self.margin_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("margin_tol must be nonnegative (got {})", self.margin_tol)));
        }
        Ok(())
    }

    /// `(epsilon, seed)` cells in report order.
    pub fn cells(&self) -> Vec<(f64, u64)> {
        self.perturbation_sizes.iter().flat_map(|&e| self.seeds.iter().map(move |&s| (e, s))).collect()
    }
}

/// Stationary state of a plan.
pub fn solve_stationary(
    plan: &ExperimentPlan,
    dist: &dyn Casimir,
) -> std::result::Result<StationarySolution, ScfError> {
    let domain = Domain::new(plan.domain.clone())?;
    scf_solve(&domain, dist, &plan.solver)
}

/// One `(epsilon, seed)` row of the stability report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub epsilon: f64,
    pub seed: u64,
    /// `H_C(Psi(0), lambda) - H_C(Psi0, lambda0) + sigma0 (sum lambda - sum lambda0)`
    pub casimir_gap: f64,
    /// `max_t 1/2 ||n(t) - n0||^2_{H^-1}`
    pub max_lhs: f64,
    pub violation_margin: f64,
    pub pass: bool,
    /// `||Psi(0) - Psi0||_F`, diagnostic only.
    pub orbital_distance: f64,
    /// `"ok"`, `"bound violated"`, or the error that produced this row.
    pub status: String,
}

impl StabilityCell {
    fn failed(epsilon: f64, seed: u64, status: String) -> Self {
        StabilityCell {
            epsilon,
            seed,
            casimir_gap: f64::NAN,
            max_lhs: f64::NAN,
            violation_margin: f64::NAN,
            pass: false,
            orbital_distance: f64::NAN,
            status,
        }
    }
}

/// Perturb, evolve and compare for one cell. Never fails: errors become rows.
pub fn run_cell(
    plan: &ExperimentPlan,
    stationary: &StationarySolution,
    dist: &dyn Casimir,
    epsilon: f64,
    seed: u64,
) -> StabilityCell {
    match try_cell(plan, stationary, dist, epsilon, seed) {
        Ok(cell) => cell,
        Err(message) => StabilityCell::failed(epsilon, seed, message),
    }
}

fn try_cell(
    plan: &ExperimentPlan,
    stationary: &StationarySolution,
    dist: &dyn Casimir,
    epsilon: f64,
    seed: u64,
) -> std::result::Result<StabilityCell, String> {
    let base = &stationary.state;
    let mut state = perturb(base, epsilon, seed).map_err(|e| format!("perturb: {e}"))?;
    if plan.perturb_occupations {
        state = perturb_occupations(&state, epsilon, seed).map_err(|e| format!("perturb: {e}"))?;
    }
    let h0 = casimir_energy(base, dist).map_err(|e| e.to_string())?;
    let h = casimir_energy(&state, dist).map_err(|e| e.to_string())?;
    let shift = stationary.sigma0 * (state.total_occupation() - base.total_occupation());
    let casimir_gap = h - h0 + shift;
    let n0 = density(base);
    let (_, record) = evolve(&state, &plan.evolution, dist, Some(&n0)).map_err(|e| format!("evolve: {e}"))?;
    let max_lhs = record.hminus1_dist.iter().map(|d| 0.5 * d * d).fold(0.0, f64::max);
    let violation_margin = max_lhs - casimir_gap;
    let pass = violation_margin <= plan.margin_tol && casimir_gap >= -1e-9;
    Ok(StabilityCell {
        epsilon,
        seed,
        casimir_gap,
        max_lhs,
        violation_margin,
        pass,
        orbital_distance: (state.orbitals() - base.orbitals()).norm(),
        status: if pass { "ok" } else { "bound violated" }.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub cells: Vec<StabilityCell>,
    /// Least-squares slope of `ln(mean gap)` against `ln(epsilon)`.
    pub fitted_slope: Option<f64>,
    /// Mean gap per epsilon is non-decreasing (reported, not enforced).
    pub gap_monotone: bool,
    pub all_pass: bool,
}

impl StabilityReport {
    /// Summarize cells given in plan order.
    pub fn assemble(cells: Vec<StabilityCell>) -> Self {
        let mut eps: Vec<f64> = cells.iter().map(|c| c.epsilon).collect();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        let means: Vec<(f64, f64)> = eps
            .iter()
            .map(|&e| {
                let gaps: Vec<f64> = cells.iter().filter(|c| c.epsilon == e).map(|c| c.casimir_gap).collect();
                (e, gaps.iter().sum::<f64>() / gaps.len() as f64)
            })
            .collect();
        let gap_monotone = means.windows(2).all(|w| w[1].1 >= w[0].1);
        let points: Vec<(f64, f64)> =
            means.iter().filter(|(e, g)| *e > 0.0 && *g > 0.0).map(|(e, g)| (e.ln(), g.ln())).collect();
        let fitted_slope = (points.len() >= 2).then(|| least_squares_slope(&points));
        let all_pass = cells.iter().all(|c| c.pass);
        StabilityReport { cells, fitted_slope, gap_monotone, all_pass }
    }

    /// `epsilon,seed,casimir_gap,max_lhs,violation_margin,pass`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,seed,casimir_gap,max_lhs,violation_margin,pass\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_number(c.epsilon),
                c.seed,
                format_number(c.casimir_gap),
                format_number(c.max_lhs),
                format_number(c.violation_margin),
                c.pass
            ));
        }
        out
    }
}

/// Sequential campaign over all cells.
pub fn run_stability(plan: &ExperimentPlan) -> std::result::Result<StabilityReport, ScfError> {
    plan.validate()?;
    let stationary = solve_stationary(plan, &plan.distribution)?;
    let cells = plan.cells().into_iter().map(|(e, s)| run_cell(plan, &stationary, &plan.distribution, e, s)).collect();
    Ok(StabilityReport::assemble(cells))
}

// ---------------------------------------------------------------------------
// property suites

/// Outcome of one named property over all its instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub count: usize,
    pub failures: usize,
    /// Smallest slack over the instances (negative means violated).
    pub worst_margin: f64,
    /// Why the check did not run or was aborted.
    pub note: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

/// Suite names accepted by [`run_lemma_suite`], in execution order.
pub const SUITES: [&str; 4] = ["casimir", "state", "solver", "evolution"];

struct Tally {
    result: CheckResult,
}

impl Tally {
    fn new(name: &str) -> Self {
        Tally {
            result: CheckResult { name: name.into(), count: 0, failures: 0, worst_margin: f64::INFINITY, note: None },
        }
    }

    /// Record one instance; `slack >= 0` is a pass.
    fn record(&mut self, slack: f64) {
        self.result.count += 1;
        if slack >= 0.0 {
            self.result.worst_margin = self.result.worst_margin.min(slack);
        } else {
            self.result.failures += 1;
            self.result.worst_margin =
                if slack.is_nan() { f64::NEG_INFINITY } else { self.result.worst_margin.min(slack) };
        }
    }

    fn finish(self) -> CheckResult {
        self.result
    }
}

/// Run `body` as a check; an error becomes a failed row with a note.
fn check(out: &mut Vec<CheckResult>, name: &str, body: impl FnOnce(&mut Tally) -> Result<()>) {
    let mut tally = Tally::new(name);
    if let Err(e) = body(&mut tally) {
        tally.result.failures += 1;
        tally.result.worst_margin = f64::NEG_INFINITY;
        tally.result.note = Some(format!("aborted: {e}"));
    }
    out.push(tally.finish());
}

fn skipped(out: &mut Vec<CheckResult>, name: &str, why: &str) {
    let mut result = Tally::new(name).finish();
    result.note = Some(why.into());
    out.push(result);
}

/// Run the named suites (all of [`SUITES`] when `names` is empty).
///
/// Numerical failures inside a suite are reported as failed checks; only an
/// invalid plan or an unknown suite name is an error.
pub fn run_lemma_suite(plan: &ExperimentPlan, dist: &dyn Casimir, names: &[String]) -> Result<VerificationReport> {
    plan.validate()?;
    if let Some(bad) = names.iter().find(|n| !SUITES.contains(&n.as_str())) {
        return Err(Error::InvalidConfig(format!("unknown suite '{bad}' (known: {})", SUITES.join(", "))));
    }
    let selected: Vec<&str> =
        SUITES.iter().copied().filter(|s| names.is_empty() || names.iter().any(|n| n == s)).collect();
    let domain = Domain::new(plan.domain.clone())?;
    let seed = plan.seeds[0];
    let needs_solution = selected.iter().any(|s| *s == "solver" || *s == "evolution");
    let solution = if needs_solution { Some(scf_solve(&domain, dist, &plan.solver)) } else { None };
    let mut suites = Vec::new();
    for name in selected {
        let mut checks = Vec::new();
        match name {
            "casimir" => casimir_suite(&mut checks, dist, seed),
            "state" => state_suite(&mut checks, &domain, dist, seed),
            "solver" | "evolution" => match solution.as_ref().expect("solved above") {
                Ok(sol) if name == "solver" => solver_suite(&mut checks, &domain, dist, &plan.solver, sol, seed),
                Ok(sol) => evolution_suite(&mut checks, plan, dist, sol),
                Err(e) => check(&mut checks, "stationary_solve", |_| Err(Error::InvalidState(e.to_string()))),
            },
            _ => unreachable!(),
        }
        suites.push(SuiteReport { name: name.into(), checks });
    }
    let passed = suites.iter().all(SuiteReport::passed);
    Ok(VerificationReport { suites, passed })
}

/// Adaptive Simpson rule on `[a, b]`.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 30)
}

/// `sup_x (x s - F(x))` by golden-section search (the objective is concave).
fn legendre_sup(dist: &dyn Casimir, s: f64) -> f64 {
    let g = |x: f64| x * s - dist.big_f(x);
    let (mut a, mut b) = (-200.0, dist.cutoff().min(200.0));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if g(c) >= g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    g(0.5 * (a + b))
}

fn casimir_suite(out: &mut Vec<CheckResult>, dist: &dyn Casimir, seed: u64) {
    let s0 = dist.cutoff();
    let upper = if s0.is_finite() { s0 + 10.0 } else { 60.0 };
    check(out, "class_properties", |t| {
        let report = validate_casimir(dist, (-10.0, upper), 20_001);
        t.result.count = report.samples;
        t.result.failures = report.violations.len();
        t.result.worst_margin = if report.passed() { 0.0 } else { -1.0 };
        if !report.violations.is_empty() {
            t.result.note = Some(report.violations.join("; "));
        }
        Ok(())
    });
    check(out, "fenchel_young", |t| {
        for i in 0..100 {
            let x = -5.0 + 10.0 * i as f64 / 99.0;
            for j in 0..100 {
                let s = -5.0 * j as f64 / 99.0;
                let rhs = x * s - dist.big_f(x);
                t.record(dist.f_star(s)? - rhs + 1e-12 * (1.0 + rhs.abs()));
            }
        }
        Ok(())
    });
    check(out, "legendre_sup", |t| {
        for s in [-0.05, -0.5, -1.0, -2.0, -4.0] {
            t.record(1e-6 - (dist.f_star(s)? - legendre_sup(dist, s)).abs());
        }
        Ok(())
    });
    check(out, "integral_representation", |t| {
        for s in [-0.05f64, -0.5, -1.0, -2.0, -4.0] {
            let lam = -s;
            // y = lam u^2 removes the endpoint singularity of f^-1 at 0
            let err = std::cell::Cell::new(false);
            let integral = simpson(
                &|u: f64| {
                    if u == 0.0 {
                        return 0.0;
                    }
                    match dist.f_inverse(lam * u * u) {
                        Ok(v) => v * 2.0 * lam * u,
                        Err(_) => {
                            err.set(true);
                            0.0
                        }
                    }
                },
                0.0,
                1.0,
                1e-13,
            );
            if err.get() {
                return Err(Error::OutOfDomain { what: "f^-1", value: lam });
            }
            t.record(1e-8 * (1.0 + integral.abs()) - (dist.f_star(s)? + integral).abs());
        }
        Ok(())
    });
    check(out, "equality_structure", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let mu = rng.gen_range(-4.0..s0.min(8.0) - 1e-3);
            let lam = dist.f(mu);
            let rhs = -mu * lam - dist.big_f(mu);
            t.record(1e-9 * (1.0 + rhs.abs()) - (dist.f_star(-lam)? - rhs).abs());
        }
        Ok(())
    });
    check(out, "tangent_lower_bound", |t| {
        for slope in [1.5, 2.0, 5.0, 10.0] {
            let tangent = dist.f_inverse(slope)?.min(0.0);
            let c = dist.big_f(tangent) + slope * tangent;
            for i in 0..=5000 {
                let s = -50.0 * i as f64 / 5000.0;
                t.record(dist.big_f(s) + slope * s - c + 1e-10 * (1.0 + c.abs()));
            }
        }
        Ok(())
    });
    check(out, "convexity_of_F", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..1000 {
            let a = rng.gen_range(-5.0..s0.min(5.0));
            let b = rng.gen_range(-5.0..s0.min(5.0));
            let mid = dist.big_f(0.5 * (a + b));
            let chord = 0.5 * (dist.big_f(a) + dist.big_f(b));
            t.record(chord - mid + 1e-12 * (1.0 + chord.abs()));
        }
        Ok(())
    });
}

fn random_occupations(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(1e-6..2.0)).collect()
}

fn state_suite(out: &mut Vec<CheckResult>, domain: &std::sync::Arc<Domain>, dist: &dyn Casimir, seed: u64) {
    let m = domain.mode_count();
    let kmax = m.min(16);
    check(out, "semiclassical_constant", |t| {
        // worst_margin carries the fitted constant
        t.record(semiclassical_constant(domain));
        Ok(())
    });
    check(out, "density_mass", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..50 {
            let k = rng.gen_range(1..=kmax);
            let s = MixedState::random(domain, random_occupations(&mut rng, k), seed + i)?;
            let n = density_grid(&s);
            t.record(n.iter().copied().fold(f64::INFINITY, f64::min) + 1e-10);
            let total = s.total_occupation();
            let integral = n.iter().sum::<f64>() * domain.cell_volume();
            t.record(1e-10 * (1.0 + total) - (integral - total).abs());
        }
        Ok(())
    });
    check(out, "energy_forms", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for i in 0..50 {
            let k = rng.gen_range(1..=kmax);
            let s = MixedState::random(domain, random_occupations(&mut rng, k), seed + 100 + i)?;
            let p = energy_parts(&s);
            t.record(1e-9 * p.field - (p.field - p.field_nv).abs());
        }
        Ok(())
    });
    let potential = MixedState::random(domain, vec![1.0, 0.5], seed + 7).map(|s| potential_of(&s));
    check(out, "jensen_random", |t| {
        let v = potential.clone()?;
        let h = hamiltonian_matrix(domain, &v)?.matrix;
        let eig = eigendecompose(&h)?;
        for i in 0..1000 {
            let psi = MixedState::random(domain, vec![1.0], seed + 1000 + i)?.orbital(0);
            let (lhs, rhs) = jensen_check_with(&h, &eig, dist, &psi)?;
            t.record(rhs - lhs + 1e-10);
        }
        Ok(())
    });
    check(out, "jensen_eigenstates", |t| {
        let v = potential.clone()?;
        let h = hamiltonian_matrix(domain, &v)?.matrix;
        let eig = eigendecompose(&h)?;
        for k in 0..m {
            let psi: Vec<Complex64> = eig.vectors.column(k).iter().map(|x| Complex64::new(*x, 0.0)).collect();
            let (lhs, rhs) = jensen_check_with(&h, &eig, dist, &psi)?;
            t.record(1e-12 * (1.0 + rhs.abs()) - (lhs - rhs).abs());
        }
        Ok(())
    });
    let s0 = dist.cutoff();
    let free = ModeField::zeros(domain);
    let outside: Vec<usize> = (0..m).filter(|&k| s0.is_finite() && domain.kinetic_eigenvalues()[k] >= s0).collect();
    if outside.len() >= 2 {
        check(out, "jensen_compact_support", |t| {
            let h = hamiltonian_matrix(domain, &free)?.matrix;
            let eig = eigendecompose(&h)?;
            let first = eig.values.iter().position(|mu| *mu >= s0).expect("nonempty");
            for k in first..m - 1 {
                let mut psi = vec![Complex64::new(0.0, 0.0); m];
                for (j, x) in eig.vectors.column(k).iter().enumerate() {
                    psi[j] += Complex64::new(x * 0.5f64.sqrt(), 0.0);
                }
                for (j, x) in eig.vectors.column(k + 1).iter().enumerate() {
                    psi[j] += Complex64::new(0.0, x * 0.5f64.sqrt());
                }
                let (lhs, rhs) = jensen_check_with(&h, &eig, dist, &psi)?;
                t.record(-(lhs.abs() + rhs.abs()));
            }
            Ok(())
        });
    } else {
        skipped(out, "jensen_compact_support", "no eigenvalues beyond the cutoff (or no cutoff)");
    }
    check(out, "trace_lower_bound", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let v = potential.clone()?;
        let h = hamiltonian_matrix(domain, &v)?.matrix;
        let eig = eigendecompose(&h)?;
        for i in 0..100 {
            let k = rng.gen_range(1..=m);
            let s = MixedState::random(domain, random_occupations(&mut rng, k), seed + 5000 + i)?;
            let (lhs, rhs) = trace_bound_with(&s, &h, &eig, 0.0, dist)?;
            t.record(lhs - rhs + 1e-9 * (1.0 + rhs.abs()));
        }
        Ok(())
    });
    check(out, "trace_equality", |t| {
        let v = potential.clone()?;
        let h = hamiltonian_matrix(domain, &v)?.matrix;
        let eig = eigendecompose(&h)?;
        let lam: Vec<f64> = eig.values.iter().map(|mu| dist.f(*mu)).collect();
        let s = MixedState::from_real(domain, &eig.vectors.transpose(), lam)?;
        let (lhs, rhs) = trace_bound_with(&s, &h, &eig, 0.0, dist)?;
        t.record(1e-9 * rhs.abs().max(f64::MIN_POSITIVE) - (lhs - rhs).abs());
        Ok(())
    });
    check(out, "lagrangian_deficit", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        for i in 0..20 {
            let k = rng.gen_range(1..=kmax);
            let s = MixedState::random(domain, random_occupations(&mut rng, k), seed + 9000 + i)?;
            let v_self = potential_of(&s);
            let v = ModeField::from_coeffs(domain, (0..m).map(|_| rng.gen_range(-0.1..0.1)).collect())?;
            let sigma = rng.gen_range(-1.0..1.0);
            let total = rng.gen_range(0.5..2.0);
            let g = g_functional(&s, &v, sigma, dist, total)?;
            let deficit = 0.5 * v_self.axpy(-1.0, &v).dirichlet_energy();
            let expected = casimir_energy(&s, dist)? + sigma * (s.total_occupation() - total) - deficit;
            t.record(1e-9 * (1.0 + expected.abs()) - (g - expected).abs());
        }
        Ok(())
    });
    check(out, "casimir_remix_invariance", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        for i in 0..10 {
            let lam = rng.gen_range(0.1..1.0);
            let s = MixedState::random(domain, vec![lam, lam, 0.3], seed + 20_000 + i)?;
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let phase = Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
            let mut u = DMatrix::<Complex64>::identity(3, 3);
            u[(0, 0)] = Complex64::new(angle.cos(), 0.0);
            u[(0, 1)] = phase * angle.sin();
            u[(1, 0)] = -phase.conj() * angle.sin();
            u[(1, 1)] = Complex64::new(angle.cos(), 0.0);
            let mixed = MixedState::new(domain, &u * s.orbitals(), s.occupations().to_vec())?;
            let (a, b) = (casimir_energy(&s, dist)?, casimir_energy(&mixed, dist)?);
            t.record(1e-12 * (1.0 + a.abs()) - (a - b).abs());
        }
        Ok(())
    });
}

fn solver_suite(
    out: &mut Vec<CheckResult>,
    domain: &std::sync::Arc<Domain>,
    dist: &dyn Casimir,
    config: &SolverConfig,
    sol: &StationarySolution,
    seed: u64,
) {
    let total = config.lambda;
    check(out, "stationary_residuals", |t| {
        t.record(config.tol_poisson - sol.residual_poisson);
        t.record(config.tol_constraint - sol.residual_constraint);
        t.record(sol.potential.grid_min() + 1e-10);
        t.record(config.tail_tol * total - sol.truncated_tail);
        for mu in &sol.mu0 {
            t.record(*mu);
        }
        Ok(())
    });
    check(out, "eigen_residuals", |t| {
        let h = hamiltonian_matrix(domain, &sol.potential)?.matrix;
        for k in 0..sol.state.rank() {
            let re: nalgebra::DVector<f64> = sol.state.orbitals().row(k).map(|c| c.re).transpose();
            t.record(1e-8 - (&h * &re - &re * sol.mu0[k]).norm());
        }
        Ok(())
    });
    check(out, "duality", |t| {
        t.record(1e-7 - crate::solver::duality_check(sol, dist, total)?);
        Ok(())
    });
    check(out, "ascent", |t| {
        for w in sol.history.windows(2) {
            t.record(w[1].phi - w[0].phi + 1e-12 * (1.0 + w[0].phi.abs()));
        }
        Ok(())
    });
    check(out, "one_more_sweep", |t| {
        let target = poisson_solve(domain, &density(&sol.state))?;
        let next = sol.potential.axpy(config.damping, &target.axpy(-1.0, &sol.potential));
        let eig = eigendecompose(&hamiltonian_matrix(domain, &next)?.matrix)?;
        let sigma = solve_sigma(&eig.values, dist, total, config.sigma_bracket)?;
        let phi = phi_eval(domain, &next, sigma, dist, total)?;
        t.record(1e-9 - (phi - sol.phi).abs());
        Ok(())
    });
    check(out, "maximizer_optimality", |t| {
        let phi0 = phi_eval(domain, &sol.potential, sol.sigma0, dist, total)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
        let mut tried = 0;
        while t.result.count < 100 && tried < 500 {
            tried += 1;
            let dir = potential_of(&MixedState::random(domain, vec![1.0], seed + 30_000 + tried)?);
            let v = sol.potential.axpy(rng.gen_range(-1e-3..1e-3), &dir);
            if v.grid_min() < 0.0 {
                continue;
            }
            t.record(phi0 + 1e-9 - phi_eval(domain, &v, sol.sigma0, dist, total)?);
            let sigma = sol.sigma0 + rng.gen_range(-1e-3..1e-3);
            t.record(phi0 + 1e-9 - phi_eval(domain, &sol.potential, sigma, dist, total)?);
        }
        Ok(())
    });
    check(out, "uniqueness", |t| {
        let start = potential_of(&MixedState::random(domain, vec![3.0 * total], seed + 40_000)?);
        let other = scf_solve_from(domain, dist, config, &start).map_err(|e| Error::InvalidState(e.to_string()))?;
        t.record(1e-6 - other.potential.axpy(-1.0, &sol.potential).h1_norm());
        Ok(())
    });
    check(out, "midpoint_concavity", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        for i in 0..100 {
            let va = potential_of(&MixedState::random(domain, vec![rng.gen_range(0.1..2.0)], seed + 50_000 + i)?);
            let vb = potential_of(&MixedState::random(domain, vec![rng.gen_range(0.1..2.0)], seed + 60_000 + i)?);
            let (sa, sb) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let pa = phi_eval(domain, &va, sa, dist, total)?;
            let pb = phi_eval(domain, &vb, sb, dist, total)?;
            let pm = phi_eval(domain, &va.axpy(1.0, &vb).scaled(0.5), 0.5 * (sa + sb), dist, total)?;
            t.record(pm - 0.5 * (pa + pb) + 1e-12 * (1.0 + pm.abs()));
        }
        Ok(())
    });
    check(out, "shifted_trace_bound", |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 8);
        let h = hamiltonian_matrix(domain, &sol.potential)?.matrix;
        let eig = eigendecompose(&h)?;
        let m = domain.mode_count();
        for i in 0..100 {
            let k = rng.gen_range(1..=m);
            let s = MixedState::random(domain, random_occupations(&mut rng, k), seed + 70_000 + i)?;
            let sigma = rng.gen_range(-1.0..1.0);
            let (lhs, rhs) = trace_bound_with(&s, &h, &eig, sigma, dist)?;
            t.record(lhs - rhs + 1e-9 * (1.0 + rhs.abs()));
        }
        let sigma = 0.37;
        let lam: Vec<f64> = eig.values.iter().map(|mu| dist.f(mu + sigma)).collect();
        let eigen_state = MixedState::from_real(domain, &eig.vectors.transpose(), lam)?;
        let (lhs, rhs) = trace_bound_with(&eigen_state, &h, &eig, sigma, dist)?;
        t.record(1e-9 * rhs.abs().max(f64::MIN_POSITIVE) - (lhs - rhs).abs());
        let empty = MixedState::random(domain, vec![0.0; 3], seed)?;
        let (lhs, rhs) = trace_bound(&empty, &sol.potential, -sigma, dist)?;
        t.record(lhs - rhs);
        Ok(())
    });
    check(out, "kinetic_bound", |t| {
        let kin = domain.kinetic_eigenvalues();
        for k in 0..sol.state.rank() {
            let moment: f64 = sol.state.orbitals().row(k).iter().zip(kin).map(|(c, t)| t * c.norm_sqr()).sum();
            t.record(sol.mu0[k] - moment + 1e-12);
        }
        t.record(if sol.state.kinetic_moment().is_finite() { 0.0 } else { -1.0 });
        Ok(())
    });
}

fn evolution_suite(out: &mut Vec<CheckResult>, plan: &ExperimentPlan, dist: &dyn Casimir, sol: &StationarySolution) {
    let seed = plan.seeds[0];
    let n0 = density(&sol.state);
    let perturbed = perturb(&sol.state, 1e-2, seed);
    check(out, "conservation", |t| {
        let s = perturbed.clone()?;
        let cfg = EvolutionConfig { dt: 1e-3, t_end: 1.0, record_every: 50, renormalize_every: 0 };
        let (end, rec) = evolve(&s, &cfg, dist, Some(&n0)).map_err(|e| Error::InvalidState(e.to_string()))?;
        t.record(1e-6 - TrajectoryRecord::relative_drift(&rec.energy));
        t.record(1e-6 - TrajectoryRecord::relative_drift(&rec.casimir));
        t.record(1e-8 - rec.ortho_defect.iter().copied().fold(0.0, f64::max));
        t.record(if end.occupations() == s.occupations() { 0.0 } else { -1.0 });
        let offset = rec.casimir[0] - rec.energy[0];
        for (h, c) in rec.energy.iter().zip(&rec.casimir) {
            t.record(1e-12 * (1.0 + c.abs()) - (c - h - offset).abs());
        }
        Ok(())
    });
    check(out, "global_order", |t| {
        let s = perturbed.clone()?;
        let runs: Vec<MixedState> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                evolve(&s, &EvolutionConfig::new(dt, 1.0), dist, None)
                    .map(|r| r.0)
                    .map_err(|e| Error::InvalidState(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let e1 = (runs[0].orbitals() - runs[1].orbitals()).norm();
        let e2 = (runs[1].orbitals() - runs[2].orbitals()).norm();
        t.record(0.3 - (e1 / e2 - 4.0).abs());
        Ok(())
    });
    check(out, "mild_residual_order", |t| {
        let s = perturb(&sol.state, 5e-2, seed)?;
        let r: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&dt| strang_step(&s, dt).and_then(|next| mild_residual(&s, &next, dt)))
            .collect::<Result<_>>()?;
        for w in r.windows(2) {
            t.record(1.0 - (w[0] / w[1] - 8.0).abs());
        }
        Ok(())
    });
    check(out, "stationary_fixed_point", |t| {
        let dt = plan.evolution.dt;
        let cfg = EvolutionConfig::new(dt, 10.0 * dt);
        let (_, rec) = evolve(&sol.state, &cfg, dist, Some(&n0)).map_err(|e| Error::InvalidState(e.to_string()))?;
        for d in &rec.hminus1_dist {
            t.record(1e-6 - d);
        }
        Ok(())
    });
    check(out, "stability_bound", |t| {
        let eps = plan.perturbation_sizes.iter().copied().fold(0.0, f64::max);
        let cell = run_cell(plan, sol, dist, eps, seed);
        if cell.casimir_gap.is_nan() {
            return Err(Error::InvalidState(cell.status));
        }
        t.record(plan.margin_tol - cell.violation_margin);
        t.record(cell.casimir_gap + 1e-9);
        Ok(())
    });
}
