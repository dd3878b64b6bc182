//! Casimir-class distribution functions and their integrated forms.
//!
//! A member `f` is continuous, strictly decreasing up to a cutoff `s0`
//! (possibly infinite) where it vanishes, blows up as `s -> -inf`, and decays
//! at least like `(1 + s)^(-5 - eps)`. Derived objects:
//!
//! * `F(s) = int_s^inf f`
//! * `F*(s) = sup_x (x s - F(x)) = int_{-s}^0 f^-1`, for `s <= 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `(f, f^-1, F, F*)` contract every distribution provides.
pub trait Casimir: Send + Sync {
    fn f(&self, s: f64) -> f64;

    /// Inverse of `f` restricted to `(-inf, s0]`; defined for `y > 0`.
    fn f_inverse(&self, y: f64) -> Result<f64>;

    fn big_f(&self, s: f64) -> f64;

    /// Legendre-Fenchel transform of `F`, defined for `s <= 0`.
    fn f_star(&self, s: f64) -> Result<f64>;

    /// Cutoff `s0`; `f64::INFINITY` when `f` never vanishes.
    fn cutoff(&self) -> f64;

    fn f_derivative(&self, s: f64) -> f64 {
        let h = 1e-6 * (1.0 + s.abs());
        (self.f(s + h) - self.f(s - h)) / (2.0 * h)
    }

    /// Recorded `(C, eps)` with `f(s) <= C (1 + s)^(-5 - eps)` for `s >= 0`.
    fn decay_bound(&self) -> (f64, f64);
}

/// Built-in members of the class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CasimirDistribution {
    /// `f(s) = exp(-beta s)`, `s0 = inf`.
    Boltzmann { beta: f64 },
    /// `f(s) = ((s0 - s)_+)^p`.
    PowerCutoff { s0: f64, p: f64 },
}

impl CasimirDistribution {
    pub fn boltzmann(beta: f64) -> Self {
        CasimirDistribution::Boltzmann { beta }
    }

    pub fn power_cutoff(s0: f64, p: f64) -> Self {
        CasimirDistribution::PowerCutoff { s0, p }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CasimirDistribution::Boltzmann { beta } if !(beta.is_finite() && beta > 0.0) => {
                Err(Error::InvalidConfig(format!("boltzmann beta must be positive (got {beta})")))
            }
            CasimirDistribution::PowerCutoff { s0, .. } if !(s0.is_finite() && s0 > 0.0) => {
                Err(Error::InvalidConfig(format!("power_cutoff s0 must be positive (got {s0})")))
            }
            CasimirDistribution::PowerCutoff { p, .. } if !(p.is_finite() && p >= 1.0) => {
                Err(Error::InvalidConfig(format!("power_cutoff p must be >= 1 (got {p})")))
            }
            _ => Ok(()),
        }
    }
}

impl Casimir for CasimirDistribution {
    fn f(&self, s: f64) -> f64 {
        match *self {
            CasimirDistribution::Boltzmann { beta } => (-beta * s).exp(),
            CasimirDistribution::PowerCutoff { s0, p } => {
                if s >= s0 {
                    0.0
                } else {
                    (s0 - s).powf(p)
                }
            }
        }
    }

    fn f_inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::OutOfDomain { what: "f^-1", value: y });
        }
        Ok(match *self {
            CasimirDistribution::Boltzmann { beta } => -y.ln() / beta,
            CasimirDistribution::PowerCutoff { s0, p } => s0 - y.powf(1.0 / p),
        })
    }

    fn big_f(&self, s: f64) -> f64 {
        match *self {
            CasimirDistribution::Boltzmann { beta } => (-beta * s).exp() / beta,
            CasimirDistribution::PowerCutoff { s0, p } => {
                if s >= s0 {
                    0.0
                } else {
                    (s0 - s).powf(p + 1.0) / (p + 1.0)
                }
            }
        }
    }

    fn f_star(&self, s: f64) -> Result<f64> {
        if !(s <= 0.0) {
            return Err(Error::OutOfDomain { what: "F*", value: s });
        }
        let lambda = -s;
        if lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(match *self {
            CasimirDistribution::Boltzmann { beta } => (lambda * lambda.ln() - lambda) / beta,
            CasimirDistribution::PowerCutoff { s0, p } => -s0 * lambda + lambda.powf(1.0 + 1.0 / p) * p / (p + 1.0),
        })
    }

    fn cutoff(&self) -> f64 {
        match *self {
            CasimirDistribution::Boltzmann { .. } => f64::INFINITY,
            CasimirDistribution::PowerCutoff { s0, .. } => s0,
        }
    }

    fn f_derivative(&self, s: f64) -> f64 {
        match *self {
            CasimirDistribution::Boltzmann { beta } => -beta * (-beta * s).exp(),
            CasimirDistribution::PowerCutoff { s0, p } => {
                if s >= s0 {
                    0.0
                } else {
                    -p * (s0 - s).powf(p - 1.0)
                }
            }
        }
    }

    fn decay_bound(&self) -> (f64, f64) {
        match *self {
            CasimirDistribution::Boltzmann { beta } => {
                // max_{s>=0} exp(-beta s)(1+s)^6 sits at s = 6/beta - 1
                let s_star = (6.0 / beta - 1.0).max(0.0);
                ((-beta * s_star).exp() * (1.0 + s_star).powi(6), 1.0)
            }
            CasimirDistribution::PowerCutoff { s0, p } => (s0.powf(p) * (1.0 + s0).powi(6), 1.0),
        }
    }
}

/// Outcome of sampling the class properties (i)-(iii).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CasimirReport {
    pub samples: usize,
    pub positivity_ok: bool,
    pub monotone_ok: bool,
    pub blow_up_ok: bool,
    pub cutoff_ok: bool,
    pub decay_ok: bool,
    /// Smallest `C` making the recorded-`eps` decay bound hold on the sample.
    pub fitted_c: f64,
    /// Log-log decay exponent of `f` on the sampled tail (`inf` for compact support).
    pub fitted_exponent: f64,
    pub violations: Vec<String>,
}

impl CasimirReport {
    pub fn passed(&self) -> bool {
        self.positivity_ok && self.monotone_ok && self.blow_up_ok && self.cutoff_ok && self.decay_ok
    }
}

/// Check the class properties on `n_samples` uniform points of `range`.
///
/// Never panics; violations are collected in the report.
pub fn validate_casimir(dist: &dyn Casimir, range: (f64, f64), n_samples: usize) -> CasimirReport {
    let (a, b) = range;
    let n = n_samples.max(2);
    let s0 = dist.cutoff();
    let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&s| dist.f(s)).collect();
    let mut violations = Vec::new();

    let mut positivity_ok = true;
    let mut cutoff_ok = true;
    for (&s, &v) in xs.iter().zip(&fs) {
        if s < s0 && !(v > 0.0) {
            if positivity_ok {
                violations.push(format!("(i) f({s}) = {v} is not positive below the cutoff"));
            }
            positivity_ok = false;
        }
        if s >= s0 && v != 0.0 {
            if cutoff_ok {
                violations.push(format!("(i) f({s}) = {v} does not vanish beyond the cutoff"));
            }
            cutoff_ok = false;
        }
    }

    let mut monotone_ok = true;
    for i in 1..n {
        if xs[i] <= s0 && !(fs[i] < fs[i - 1]) {
            violations.push(format!("(ii) f is not strictly decreasing between {} and {}", xs[i - 1], xs[i]));
            monotone_ok = false;
            break;
        }
    }

    let left = a.min(0.0);
    let probes: Vec<f64> = (1..=8).map(|j| dist.f(left - 10f64.powi(j))).collect();
    let blow_up_ok =
        probes.windows(2).all(|w| w[1] > w[0] || w[1] == f64::INFINITY) && probes.last().is_some_and(|&v| v >= 1e6);
    if !blow_up_ok {
        violations.push("(ii) f does not blow up as s -> -inf".into());
    }

    let (c_rec, eps) = dist.decay_bound();
    let mut fitted_c: f64 = 0.0;
    let mut decay_ok = true;
    let mut tail = Vec::new();
    for (&s, &v) in xs.iter().zip(&fs) {
        if s < 0.0 {
            continue;
        }
        let scaled = v * (1.0 + s).powf(5.0 + eps);
        fitted_c = fitted_c.max(scaled);
        if v > c_rec * (1.0 + s).powf(-5.0 - eps) * (1.0 + 1e-12) {
            if decay_ok {
                violations.push(format!("(iii) decay bound fails at s = {s}"));
            }
            decay_ok = false;
        }
        if v > 0.0 && v.is_finite() {
            tail.push(((1.0 + s).ln(), v.ln()));
        }
    }
    let tail_start = tail.len() / 2;
    let fitted_exponent = if tail.len() - tail_start >= 2 && s0.is_infinite() {
        -least_squares_slope(&tail[tail_start..])
    } else {
        f64::INFINITY
    };

    CasimirReport {
        samples: n,
        positivity_ok,
        monotone_ok,
        blow_up_ok,
        cutoff_ok,
        decay_ok,
        fitted_c,
        fitted_exponent,
        violations,
    }
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// A deliberately non-monotone function, used as a negative control for the
/// class validator. It is not a member of the Casimir class.
#[derive(Debug, Clone, Copy, Default)]
pub struct OscillatingProbe;

impl Casimir for OscillatingProbe {
    fn f(&self, s: f64) -> f64 {
        (-s).exp() * (1.0 + 0.5 * (5.0 * s).sin())
    }

    fn f_inverse(&self, y: f64) -> Result<f64> {
        Err(Error::OutOfDomain { what: "f^-1 of a non-monotone probe", value: y })
    }

    fn big_f(&self, s: f64) -> f64 {
        (-s).exp() * (1.0 + 0.5 * ((5.0 * s).sin() + 5.0 * (5.0 * s).cos()) / 26.0)
    }

    fn f_star(&self, s: f64) -> Result<f64> {
        Err(Error::OutOfDomain { what: "F* of a non-monotone probe", value: s })
    }

    fn cutoff(&self) -> f64 {
        f64::INFINITY
    }

    fn decay_bound(&self) -> (f64, f64) {
        CasimirDistribution::boltzmann(1.0).decay_bound()
    }
}
