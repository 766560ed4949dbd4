use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{BoxConstraintSet, LinearSystem};
use crate::linalg::Mat;
use crate::problems::{self, LinearProblem, NonlinearProblem};
use crate::sim::GridSpec;

use super::CliError;

/// Problem description read from JSON. Every key is checked; an unknown key
/// fails with its path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub plant: PlantSpec,
    #[serde(default)]
    pub constraints: Option<ConstraintsConfig>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub q: Option<Mat>,
    #[serde(default)]
    pub r: Option<Mat>,
    #[serde(default)]
    pub gain: Option<Mat>,
    #[serde(default)]
    pub scan: Option<GridSpec>,
    #[serde(default)]
    pub disturbance: Option<DisturbanceConfig>,
    /// Source of every random draw (disturbances, Monte Carlo streams).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub runs: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSpec {
    /// `"si_linear"`, `"mi_linear"` or `"nonlinear"`.
    Named(String),
    Matrices(PlantMatrices),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantMatrices {
    pub a: Mat,
    pub b: Mat,
}

/// Box bounds; `null` (or an omitted vector) means unbounded on that side.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsConfig {
    #[serde(default)]
    pub x_lo: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub x_hi: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub u_lo: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub u_hi: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    /// Per-coordinate bound of the uniform input-channel noise.
    pub bound: f64,
}

/// The configured problem after defaults and overrides are applied.
#[derive(Debug, Clone)]
pub enum Problem {
    SingleInput(LinearProblem),
    MultiInput(LinearProblem),
    Nonlinear(NonlinearProblem),
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::SingleInput(_) => "single_input",
            Problem::MultiInput(_) => "multi_input",
            Problem::Nonlinear(_) => "nonlinear",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Problem::SingleInput(p) | Problem::MultiInput(p) => p.sys.n(),
            Problem::Nonlinear(p) => p.model.n(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Problem::SingleInput(p) | Problem::MultiInput(p) => p.sys.m(),
            Problem::Nonlinear(p) => p.model.m(),
        }
    }

    pub fn bounds(&self) -> &BoxConstraintSet {
        match self {
            Problem::SingleInput(p) | Problem::MultiInput(p) => &p.bounds,
            Problem::Nonlinear(p) => &p.bounds,
        }
    }
}

/// Default scan window: `[-3, 3]` per axis, 61 cells per axis.
pub fn default_scan(n: usize) -> GridSpec {
    GridSpec { lo: vec![-3.0; n], hi: vec![3.0; n], resolution: vec![61; n] }
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Strict parse; the error names the offending key path.
    pub fn parse(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("at `{path}`: {}", e.into_inner())
        })
    }

    pub fn builtin(name: &str) -> Self {
        Self {
            plant: PlantSpec::Named(name.into()),
            constraints: None,
            horizon: None,
            q: None,
            r: None,
            gain: None,
            scan: None,
            disturbance: None,
            seed: 0,
            x0: None,
            steps: None,
            runs: None,
            output: None,
        }
    }

    /// Applies the configured overrides to the named or explicit plant and
    /// checks every dimension.
    pub fn resolve(&self) -> Result<Problem, CliError> {
        let problem = match &self.plant {
            PlantSpec::Named(name) => match name.as_str() {
                "si_linear" => Problem::SingleInput(self.override_linear(problems::si_linear())?),
                "mi_linear" => Problem::MultiInput(self.override_linear(problems::mi_linear())?),
                "nonlinear" => {
                    if self.gain.is_some() {
                        return Err(CliError::Usage("`gain` is not configurable for the nonlinear plant".into()));
                    }
                    let mut p = problems::nonlinear();
                    if let Some(h) = self.horizon {
                        p.horizon = h;
                    }
                    p.q = self.weight("q", self.q.as_ref(), p.q, 2)?;
                    p.r = self.weight("r", self.r.as_ref(), p.r, 1)?;
                    p.bounds = self.bounds_over(p.bounds)?;
                    Problem::Nonlinear(p)
                }
                other => return Err(CliError::Usage(format!("unknown built-in plant `{other}` (expected si_linear, mi_linear or nonlinear)"))),
            },
            PlantSpec::Matrices(pm) => {
                let sys = LinearSystem::new(pm.a.clone(), pm.b.clone()).map_err(|e| CliError::Usage(format!("plant: {e}")))?;
                let (n, m) = (sys.n(), sys.m());
                let horizon = self.horizon.ok_or_else(|| CliError::Usage("`horizon` is required for an explicit plant".into()))?;
                let base =
                    LinearProblem { sys, bounds: BoxConstraintSet::unbounded(n, m), horizon, q: Mat::identity(n), r: Mat::identity(m), gain: None };
                let p = self.override_linear(base)?;
                if m == 1 {
                    Problem::SingleInput(p)
                } else {
                    Problem::MultiInput(p)
                }
            }
        };
        if let Some(x0) = &self.x0 {
            check_len("x0", x0.len(), problem.state_dim())?;
        }
        if let Some(scan) = &self.scan {
            let n = problem.state_dim();
            check_len("scan.lo", scan.lo.len(), n)?;
            check_len("scan.hi", scan.hi.len(), n)?;
            check_len("scan.resolution", scan.resolution.len(), n)?;
            if scan.resolution.iter().any(|&r| r == 0) || scan.lo.iter().zip(&scan.hi).any(|(l, h)| !(l < h)) {
                return Err(CliError::Usage("scan window must have lo < hi and a positive resolution".into()));
            }
        }
        if let Some(d) = &self.disturbance {
            if !(d.bound >= 0.0 && d.bound.is_finite()) {
                return Err(CliError::Usage("disturbance.bound must be finite and non-negative".into()));
            }
        }
        Ok(problem)
    }

    fn override_linear(&self, mut p: LinearProblem) -> Result<LinearProblem, CliError> {
        let (n, m) = (p.sys.n(), p.sys.m());
        if let Some(h) = self.horizon {
            p.horizon = h;
        }
        p.q = self.weight("q", self.q.as_ref(), p.q, n)?;
        p.r = self.weight("r", self.r.as_ref(), p.r, m)?;
        if let Some(k) = &self.gain {
            if k.rows() != m || k.cols() != n {
                return Err(CliError::Usage(format!("gain: expected {m}x{n}, found {}x{}", k.rows(), k.cols())));
            }
            p.gain = Some(k.clone());
        }
        p.bounds = self.bounds_over(p.bounds)?;
        Ok(p)
    }

    fn weight(&self, key: &str, given: Option<&Mat>, default: Mat, dim: usize) -> Result<Mat, CliError> {
        match given {
            Some(w) if w.rows() != dim || w.cols() != dim => {
                Err(CliError::Usage(format!("{key}: expected {dim}x{dim}, found {}x{}", w.rows(), w.cols())))
            }
            Some(w) => Ok(w.clone()),
            None => Ok(default),
        }
    }

    fn bounds_over(&self, base: BoxConstraintSet) -> Result<BoxConstraintSet, CliError> {
        let Some(c) = &self.constraints else {
            return Ok(base);
        };
        let (n, m) = (base.n(), base.m());
        let side = |key: &str, v: &Option<Vec<Option<f64>>>, len: usize, inf: f64| -> Result<Vec<f64>, CliError> {
            match v {
                None => Ok(vec![inf; len]),
                Some(v) => {
                    check_len(key, v.len(), len)?;
                    Ok(v.iter().map(|b| b.unwrap_or(inf)).collect())
                }
            }
        };
        BoxConstraintSet::new(
            side("constraints.x_lo", &c.x_lo, n, f64::NEG_INFINITY)?,
            side("constraints.x_hi", &c.x_hi, n, f64::INFINITY)?,
            side("constraints.u_lo", &c.u_lo, m, f64::NEG_INFINITY)?,
            side("constraints.u_hi", &c.u_hi, m, f64::INFINITY)?,
        )
        .map_err(|e| CliError::Usage(format!("constraints: {e}")))
    }
}

fn check_len(key: &str, got: usize, expected: usize) -> Result<(), CliError> {
    if got == expected {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{key}: expected length {expected}, found {got}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misspelled_key_is_rejected_with_its_path() {
        let err = ProblemConfig::parse(r#"{"plant": "si_linear", "constraints": {"u_hi": [5], "x_high": [1, 1]}}"#).unwrap_err();
        assert!(err.contains("constraints") && err.contains("x_high"), "{err}");
        let err = ProblemConfig::parse(r#"{"plant": "si_linear", "horzion": 4}"#).unwrap_err();
        assert!(err.contains("horzion"), "{err}");
    }

    #[test]
    fn null_bounds_are_infinite() {
        let cfg =
            ProblemConfig::parse(r#"{"plant": "si_linear", "constraints": {"x_lo": [null, -1], "x_hi": [null, 1], "u_lo": [-5], "u_hi": [5]}}"#)
                .unwrap();
        let p = cfg.resolve().unwrap();
        let b = p.bounds();
        assert_eq!(b.x_lo, vec![f64::NEG_INFINITY, -1.0]);
        assert_eq!(b.x_hi, vec![f64::INFINITY, 1.0]);
    }

    #[test]
    fn explicit_plant_with_two_inputs_is_multi_input() {
        let text = r#"{
            "plant": {"a": {"rows": 2, "cols": 2, "data": [[1, 1], [0, 1]]},
                      "b": {"rows": 2, "cols": 2, "data": [[1, 0], [0, 1]]}},
            "horizon": 4,
            "constraints": {"u_lo": [-1, -1], "u_hi": [1, 1]}
        }"#;
        let p = ProblemConfig::parse(text).unwrap().resolve().unwrap();
        assert_eq!(p.kind(), "multi_input");
    }

    #[test]
    fn dimension_errors_are_usage_errors() {
        let cfg = ProblemConfig::parse(r#"{"plant": "si_linear", "x0": [1, 2, 3]}"#).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Usage(_))));
        let cfg = ProblemConfig::parse(r#"{"plant": "si_linear", "q": {"rows": 1, "cols": 1, "data": [[1]]}}"#).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Usage(_))));
        let cfg = ProblemConfig::parse(r#"{"plant": "pendulum"}"#).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Usage(_))));
    }
}
