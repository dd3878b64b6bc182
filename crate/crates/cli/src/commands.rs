//! The four experiment commands.

use std::path::PathBuf;

use rayon::prelude::*;
use relsp_core::casimir::{Casimir, OscillatingProbe};
use relsp_core::evolution::{evolve, EvolveError};
use relsp_core::experiments::{run_cell, run_lemma_suite, solve_stationary, StabilityReport, VerificationReport};
use relsp_core::solver::{duality_check, ScfError, StationarySolution};
use relsp_core::state::{density, perturb, MixedState};
use serde::Serialize;

use crate::config::InitialState;
use crate::output::{convergence_csv, profiles_csv, Manifest, OutputDir, SolutionFile};
use crate::{CliError, Command, CommonArgs, RunConfig};

const DEFAULT_OUTPUT: &str = "relsp-out";

/// A loaded config with command-line overrides applied.
pub struct Run {
    pub config: RunConfig,
    pub output: OutputDir,
    pub threads: Option<usize>,
}

impl Run {
    pub fn prepare(args: &CommonArgs) -> Result<Self, CliError> {
        let mut config = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if args.threads == Some(0) {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        let dir =
            args.output.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
        let output = OutputDir::create(&dir)?;
        Ok(Run { config, output, threads: args.threads })
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.threads {
            builder = builder.num_threads(n);
        }
        builder.build().map_err(|e| CliError::Io(format!("thread pool: {e}")))
    }
}

pub fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Stationary(args) => cmd_stationary(&Run::prepare(&args)?),
        Command::Evolve(args) => cmd_evolve(&Run::prepare(&args)?),
        Command::Stability(args) => cmd_stability(&Run::prepare(&args)?),
        Command::Verify { common, suites, inject_bad_distribution } => {
            cmd_verify(&Run::prepare(&common)?, &suites, inject_bad_distribution)
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Solve, writing the residual log even when the iteration fails.
fn solve_logged(run: &Run) -> Result<StationarySolution, CliError> {
    match solve_stationary(&run.config.plan(), &run.config.distribution) {
        Ok(sol) => {
            run.output.write("convergence.csv", &convergence_csv(&sol.history))?;
            Ok(sol)
        }
        Err(ScfError::NotConverged { reason, last }) => {
            run.output.write("convergence.csv", &convergence_csv(&last.history))?;
            Err(CliError::Numerical(format!(
                "stationary solve did not converge after {} iterations ({reason}); residuals poisson {:e}, constraint {:e}; log in {}",
                last.iterations(),
                last.residual_poisson,
                last.residual_constraint,
                run.output.path().join("convergence.csv").display()
            )))
        }
        Err(ScfError::Numerical(e)) => Err(numerical(e)),
    }
}

pub fn cmd_stationary(run: &Run) -> Result<String, CliError> {
    run.output.write_json("manifest.json", &Manifest::new("stationary", &run.config))?;
    let sol = solve_logged(run)?;
    let dist = &run.config.distribution;
    let gap = duality_check(&sol, dist, run.config.solver.lambda).map_err(numerical)?;
    let file = SolutionFile {
        distribution: *dist,
        solution: sol.snapshot(),
        spectrum: sol.spectrum.clone(),
        relative_duality_gap: gap,
    };
    run.output.write_json("solution.json", &file)?;
    let domain = sol.state.domain();
    run.output.write("profiles.csv", &profiles_csv(domain, &sol.potential, &sol.density()))?;
    Ok(format!(
        "converged in {} iterations: phi = {:?}, sigma0 = {:?}, {} orbitals, duality gap {:e}",
        sol.iterations(),
        sol.phi,
        sol.sigma0,
        sol.state.rank(),
        gap
    ))
}

pub fn cmd_evolve(run: &Run) -> Result<String, CliError> {
    run.output.write_json("manifest.json", &Manifest::new("evolve", &run.config))?;
    let config = &run.config;
    let (initial, reference) = match &config.initial_state {
        InitialState::Snapshot { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: SolutionFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: invalid snapshot: {e}", path.display())))?;
            let state = MixedState::from_snapshot(&file.solution.state).map_err(|e| CliError::Config(e.to_string()))?;
            let n0 = density(&state);
            (state, n0)
        }
        InitialState::Stationary => {
            let sol = solve_logged(run)?;
            let n0 = sol.density();
            (sol.state, n0)
        }
        InitialState::Perturbed { epsilon } => {
            let sol = solve_logged(run)?;
            let n0 = sol.density();
            (perturb(&sol.state, *epsilon, config.seed).map_err(numerical)?, n0)
        }
    };
    match evolve(&initial, &config.evolution, &config.distribution, Some(&reference)) {
        Ok((_, record)) => {
            run.output.write("trajectory.csv", &record.to_csv())?;
            Ok(format!(
                "{} records to t = {:?}; relative drift energy {:e}, casimir {:e}",
                record.len(),
                record.times.last().copied().unwrap_or(0.0),
                relsp_core::evolution::TrajectoryRecord::relative_drift(&record.energy),
                relsp_core::evolution::TrajectoryRecord::relative_drift(&record.casimir),
            ))
        }
        Err(EvolveError::NonFinite { last_good_time, record }) => {
            run.output.write("trajectory.csv", &record.to_csv())?;
            Err(CliError::Numerical(match last_good_time {
                Some(t) => format!("state became non-finite; last good time t = {t:?}"),
                None => "initial state is not finite".into(),
            }))
        }
        Err(EvolveError::Numerical(e)) => Err(numerical(e)),
    }
}

#[derive(Debug, Serialize)]
struct StationarySummary {
    sigma0: f64,
    phi: f64,
    iterations: usize,
    orbitals: usize,
    residual_poisson: f64,
    residual_constraint: f64,
}

#[derive(Debug, Serialize)]
struct StabilitySummary {
    stationary: StationarySummary,
    cells: usize,
    failures: usize,
    /// `(epsilon, seed, status)` of every failing cell.
    failed_cells: Vec<(f64, u64, String)>,
    fitted_slope: Option<f64>,
    gap_monotone: bool,
    all_pass: bool,
}

pub fn cmd_stability(run: &Run) -> Result<String, CliError> {
    run.output.write_json("manifest.json", &Manifest::new("stability", &run.config))?;
    let plan = run.config.plan();
    let sol = solve_logged(run)?;
    let dist = &run.config.distribution;
    let cells = run.pool()?.install(|| {
        plan.cells().par_iter().map(|&(eps, seed)| run_cell(&plan, &sol, dist, eps, seed)).collect::<Vec<_>>()
    });
    let report = StabilityReport::assemble(cells);
    run.output.write("stability.csv", &report.to_csv())?;
    let failures = report.cells.iter().filter(|c| !c.pass).count();
    let summary = StabilitySummary {
        stationary: StationarySummary {
            sigma0: sol.sigma0,
            phi: sol.phi,
            iterations: sol.iterations(),
            orbitals: sol.state.rank(),
            residual_poisson: sol.residual_poisson,
            residual_constraint: sol.residual_constraint,
        },
        cells: report.cells.len(),
        failures,
        failed_cells: report.cells.iter().filter(|c| !c.pass).map(|c| (c.epsilon, c.seed, c.status.clone())).collect(),
        fitted_slope: report.fitted_slope,
        gap_monotone: report.gap_monotone,
        all_pass: report.all_pass,
    };
    run.output.write_json("stability_summary.json", &summary)?;
    let slope = report.fitted_slope.map_or("n/a".to_string(), |s| format!("{s:.3}"));
    if report.all_pass {
        Ok(format!("{} cells passed; gap-vs-epsilon slope {slope}", report.cells.len()))
    } else {
        Err(CliError::Numerical(format!(
            "{failures} of {} stability cells failed (see stability.csv)",
            report.cells.len()
        )))
    }
}

pub fn cmd_verify(run: &Run, suites: &[String], inject_bad_distribution: bool) -> Result<String, CliError> {
    let mut manifest = Manifest::new("verify", &run.config);
    manifest.suites = Some(suites.to_vec());
    manifest.inject_bad_distribution = inject_bad_distribution;
    run.output.write_json("manifest.json", &manifest)?;
    let plan = run.config.plan();
    let dist: &dyn Casimir = if inject_bad_distribution { &OscillatingProbe } else { &run.config.distribution };
    let report: VerificationReport =
        run.pool()?.install(|| run_lemma_suite(&plan, dist, suites)).map_err(|e| CliError::Config(e.to_string()))?;
    run.output.write_json("verify.json", &report)?;
    let total: usize = report.suites.iter().map(|s| s.checks.len()).sum();
    let failed: Vec<String> = report
        .suites
        .iter()
        .flat_map(|s| s.checks.iter().filter(|c| !c.passed()).map(move |c| format!("{}/{}", s.name, c.name)))
        .collect();
    if report.passed {
        Ok(format!("{total} checks passed"))
    } else {
        Err(CliError::Numerical(format!("{} of {total} checks failed: {}", failed.len(), failed.join(", "))))
    }
}
