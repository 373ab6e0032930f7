//! Run configuration: one JSON document, with command-line flags overriding
//! its top-level scalar fields.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use schouten_core::certify::SampleSpec;
use schouten_core::grid::{Background, Mode};
use schouten_core::solver::SolverConfig;
use schouten_core::symfun::SymMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Certify,
    Solve,
    Geodesic,
    Identities,
    Report,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Certify => "certify",
            Command::Solve => "solve",
            Command::Geodesic => "geodesic",
            Command::Identities => "identities",
            Command::Report => "report",
        };
        f.write_str(s)
    }
}

/// Background geometry as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    pub mode: Mode,
    pub n: usize,
    pub d: usize,
    pub period: f64,
    /// Rows of `A0` in synthetic mode; `½ I` when absent.
    pub a0: Option<Vec<Vec<f64>>>,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            mode: Mode::Synthetic,
            n: 4,
            d: 1,
            period: 2.0 * PI,
            a0: None,
        }
    }
}

impl BackgroundConfig {
    pub fn build(&self) -> Result<Background, String> {
        let bg = match self.mode {
            Mode::Geometric => {
                if self.d != self.n {
                    return Err(format!("geometric mode needs d = n, got d = {} and n = {}", self.d, self.n));
                }
                Background::geometric(self.n, self.period)
            }
            Mode::Synthetic => {
                let a0 = match &self.a0 {
                    Some(rows) => SymMatrix::from_rows(rows).map_err(|e| e.to_string())?,
                    None => SymMatrix::scaled_identity(self.n, 0.5),
                };
                Background::synthetic(self.n, self.d, self.period, a0)
            }
        };
        bg.map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// `u0 = u1 = value`.
    Constant,
    /// `u0 = a sin x_1`, `u1 = a cos x_1`.
    Sinusoidal,
}

/// Boundary value problem for `solve`, `geodesic` and `report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub nt: usize,
    pub nx: usize,
    pub s: f64,
    pub boundary: Boundary,
    /// Constant boundary value.
    pub value: f64,
    /// Amplitude of the sinusoidal boundary data.
    pub amplitude: f64,
    /// Right-hand side `f = 1 + rhs_amplitude · t · cos x_1`.
    pub rhs_amplitude: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            nt: 64,
            nx: 16,
            s: 1.0,
            boundary: Boundary::Constant,
            value: 0.3,
            amplitude: 0.05,
            rhs_amplitude: 0.0,
        }
    }
}

impl ProblemConfig {
    fn validate(&self) -> Result<(), String> {
        if self.nt < 2 || self.nx < 3 {
            return Err("problem needs nt ≥ 2 and nx ≥ 3".into());
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err("problem s must be positive".into());
        }
        if ![self.value, self.amplitude, self.rhs_amplitude].iter().all(|v| v.is_finite()) {
            return Err("problem parameters must be finite".into());
        }
        Ok(())
    }
}

/// Everything a run needs.  `n`, `k`, `trials`, `seed` and `suite` are
/// top-level so that flags can override them; the remaining sampling
/// parameters live in `sample`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub seed: u64,
    pub out: PathBuf,
    pub suite: String,
    pub trials: usize,
    /// Trials for the finite-difference Hessian suites; `min(trials, 1000)`
    /// when absent.
    pub hessian_trials: Option<usize>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub sample: SampleSpec,
    pub background: BackgroundConfig,
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            seed: 0,
            out: PathBuf::from("out"),
            suite: "all".into(),
            trials: 1000,
            hessian_trials: None,
            n: None,
            k: None,
            sample: SampleSpec::default(),
            background: BackgroundConfig::default(),
            problem: ProblemConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Flag values; `None` leaves the config untouched.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub suite: Option<String>,
    pub n: Option<usize>,
    pub k: Option<usize>,
}

pub const SUITES: &[&str] = &[
    "all",
    "concavity",
    "convexity",
    "lorentz",
    "mixed_bounds",
    "positivity",
    "grad",
    "identities",
    "conjecture",
];

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", p.display()))
            }
        }
    }

    pub fn apply(&mut self, command: Command, o: &Overrides) {
        self.command = Some(command);
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.trials {
            self.trials = v;
        }
        if let Some(v) = &o.suite {
            self.suite = v.clone();
        }
        if o.n.is_some() {
            self.n = o.n;
        }
        if o.k.is_some() {
            self.k = o.k;
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !SUITES.contains(&self.suite.as_str()) {
            return Err(format!("unknown suite {:?}; expected one of {}", self.suite, SUITES.join(", ")));
        }
        self.spec(self.default_n(), self.default_k())
            .validate()
            .map_err(|e| e.to_string())?;
        self.background.build()?;
        self.problem.validate()?;
        self.solver.validate().map_err(|e| e.to_string())?;
        if self.hessian_trials == Some(0) {
            return Err("hessian_trials must be at least 1".into());
        }
        Ok(())
    }

    pub fn default_n(&self) -> usize {
        self.n.unwrap_or(if self.suite == "conjecture" { 5 } else { 4 })
    }

    pub fn default_k(&self) -> usize {
        self.k.unwrap_or(if self.suite == "conjecture" { 3 } else { 2 })
    }

    /// Sampling parameters with the top-level fields applied.
    pub fn spec(&self, n: usize, k: usize) -> SampleSpec {
        SampleSpec {
            n,
            k,
            trials: self.trials,
            seed: self.seed,
            ..self.sample.clone()
        }
    }

    pub fn hessian_trials(&self) -> usize {
        self.hessian_trials.unwrap_or(self.trials.min(1000))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_top_level_fields() {
        let mut c: RunConfig = serde_json::from_str(r#"{"seed": 3, "trials": 10, "sample": {"eigen_scale": 2.0}}"#).unwrap();
        c.apply(
            Command::Certify,
            &Overrides {
                seed: Some(9),
                n: Some(5),
                ..Default::default()
            },
        );
        assert_eq!(c.seed, 9);
        assert_eq!(c.trials, 10);
        let s = c.spec(c.default_n(), c.default_k());
        assert_eq!((s.n, s.k, s.seed, s.eigen_scale), (5, 2, 9, 2.0));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn conjecture_defaults() {
        let c = RunConfig {
            suite: "conjecture".into(),
            ..Default::default()
        };
        assert_eq!((c.default_n(), c.default_k()), (5, 3));
    }

    #[test]
    fn geometric_background_needs_full_dimension() {
        let b = BackgroundConfig {
            mode: Mode::Geometric,
            n: 3,
            d: 1,
            ..Default::default()
        };
        assert!(b.build().is_err());
    }
}
