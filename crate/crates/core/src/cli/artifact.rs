use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{interval_image, validate_design, BoxConstraintSet, ControllerDesign, LinearSystem, MultiInputDesign, ValidationReport};
use crate::sim::{FeasibilityMap, MonteCarloSummary, Trajectory};

use super::config::Problem;
use super::CliError;

/// Offline design written by `design` and read back by the online commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignArtifact {
    pub problem: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub design: DesignPayload,
    /// One report per designed block.
    pub validation: Vec<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignPayload {
    SingleInput(ControllerDesign),
    MultiInput(MultiInputDesign),
    Nonlinear(ControllerDesign),
}

impl DesignArtifact {
    pub fn new(problem: &Problem, design: DesignPayload) -> Result<Self, CliError> {
        let validation = validation_reports(problem, &design)?;
        Ok(Self { problem: problem.kind().into(), state_dim: problem.state_dim(), input_dim: problem.input_dim(), design, validation })
    }

    pub fn passed(&self) -> bool {
        self.validation.iter().all(|r| r.passed)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Usage(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        write_file(path, &(text + "\n"))
    }

    /// Rejects a design produced for a different plant: kind and dimensions
    /// must agree and the stored `P` must solve the Lyapunov equation of the
    /// configured dynamics.
    pub fn check_matches(&self, problem: &Problem) -> Result<(), CliError> {
        if self.problem != problem.kind() || self.state_dim != problem.state_dim() || self.input_dim != problem.input_dim() {
            return Err(CliError::Usage(format!(
                "design is for a {} plant with n = {}, m = {}; the configuration describes a {} plant with n = {}, m = {}",
                self.problem,
                self.state_dim,
                self.input_dim,
                problem.kind(),
                problem.state_dim(),
                problem.input_dim()
            )));
        }
        let fresh = validation_reports(problem, &self.design)?;
        for report in &fresh {
            if report.failures.iter().any(|f| f.starts_with("Lyapunov")) {
                return Err(CliError::Usage(format!("design does not match the configured plant: {}", report.failures.join("; "))));
            }
        }
        Ok(())
    }
}

fn validation_reports(problem: &Problem, design: &DesignPayload) -> Result<Vec<ValidationReport>, CliError> {
    let report = match (problem, design) {
        (Problem::SingleInput(p), DesignPayload::SingleInput(d)) => vec![validate_design(&p.sys, &p.bounds, d)?],
        (Problem::Nonlinear(p), DesignPayload::Nonlinear(d)) => {
            // Linear certificates on the Jacobian at the origin; the level
            // itself was certified on the nonlinear map during design.
            let (a, b) = p.model.jacobians(&vec![0.0; p.model.n()], &vec![0.0; p.model.m()]);
            let sys = LinearSystem::new(a, b)?;
            vec![validate_design(&sys, &p.bounds, d)?]
        }
        (Problem::MultiInput(p), DesignPayload::MultiInput(d)) => {
            let dec = &d.decoupled;
            if dec.m.rows() != p.sys.n() {
                return Err(CliError::Usage("design transformation does not match the plant dimension".into()));
            }
            let z_bounds = interval_image(&dec.m, &p.bounds.x_lo, &p.bounds.x_hi);
            let mut out = Vec::with_capacity(d.blocks.len());
            for (j, block) in d.blocks.iter().enumerate() {
                let (fjj, gj) = dec.block(j);
                let off = dec.block_offset(j);
                let nj = dec.block_dims[j];
                let input = dec.active_inputs[j];
                let block_box = BoxConstraintSet::new(
                    z_bounds.0[off..off + nj].to_vec(),
                    z_bounds.1[off..off + nj].to_vec(),
                    vec![p.bounds.u_lo[input]],
                    vec![p.bounds.u_hi[input]],
                )?;
                let block_sys = LinearSystem::new(fjj, gj)?;
                out.push(validate_design(&block_sys, &block_box, block)?);
            }
            // The decoupled form must reproduce the configured dynamics.
            let fm = &dec.f * &dec.m;
            let ma = &dec.m * p.sys.a();
            let drift = (&fm - &ma).max_abs().max((&dec.g - &(&dec.m * p.sys.b())).max_abs());
            if drift > 1e-9 * (1.0 + ma.max_abs()) {
                return Err(CliError::Usage(format!("decoupling data does not match the configured plant (mismatch {drift:e})")));
            }
            out
        }
        _ => return Err(CliError::Usage(format!("design kind does not match the {} plant", problem.kind()))),
    };
    Ok(report)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// `k, x_1..x_n, u_1..u_m, objective, status, iterations`, one row per
/// recorded state; the final state has empty input columns. A trailing
/// comment reports the settle step.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states.first().map_or(0, Vec::len);
    let m = traj.inputs.first().map_or(0, Vec::len);
    let mut out = String::from("k");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    for j in 1..=m {
        let _ = write!(out, ",u_{j}");
    }
    out.push_str(",objective,status,iterations\n");
    for (k, x) in traj.states.iter().enumerate() {
        let _ = write!(out, "{k}");
        for v in x {
            let _ = write!(out, ",{}", num(*v));
        }
        match traj.inputs.get(k) {
            Some(u) => {
                for v in u {
                    let _ = write!(out, ",{}", num(*v));
                }
                let _ = write!(out, ",{},{},{}", num(traj.costs[k]), traj.statuses[k], traj.iterations[k]);
            }
            None => out.push_str(&",".repeat(m + 3)),
        }
        out.push('\n');
    }
    match traj.settle_step {
        Some(t) => {
            let _ = writeln!(out, "# T={t}");
        }
        None => out.push_str("# T=none\n"),
    }
    if let Some(reason) = &traj.halted {
        let _ = writeln!(out, "# halted: {reason}");
    }
    out
}

/// `x1, .., xn, label` per cell center in row-major order, followed by the
/// window and label counts.
pub fn feasibility_csv(map: &FeasibilityMap) -> String {
    let n = map.grid.resolution.len();
    let mut out = (1..=n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push_str(",label\n");
    for (x, label) in map.cells() {
        for v in &x {
            let _ = write!(out, "{},", num(*v));
        }
        let _ = writeln!(out, "{label}");
    }
    let c = &map.counts;
    let _ = writeln!(out, "# window lo={:?} hi={:?} resolution={:?}", map.grid.lo, map.grid.hi, map.grid.resolution);
    let _ = writeln!(
        out,
        "# proposed={} baseline={} both={} proposed_only={} baseline_only={} infeasible={}",
        c.proposed(),
        c.baseline(),
        c.both,
        c.proposed_only,
        c.baseline_only,
        c.infeasible
    );
    out
}

/// One row per run, then the aggregate tail bound.
pub fn monte_carlo_csv(summary: &MonteCarloSummary) -> String {
    let mut out = String::from("run,steps,max_abs_u,tail_sup,max_violation,halted\n");
    for (r, t) in summary.runs.iter().enumerate() {
        let tail = t.states.iter().skip(summary.tail_start).map(|x| crate::linalg::norm_inf(x)).fold(0.0, f64::max);
        let _ = writeln!(out, "{r},{},{},{},{},{}", t.steps(), num(t.max_input_abs()), num(tail), num(t.max_violation), t.halted.is_some());
    }
    let _ = writeln!(out, "# tail_start={} tail_bound={} infeasible_runs={}", summary.tail_start, num(summary.tail_bound), summary.infeasible_runs);
    out
}
