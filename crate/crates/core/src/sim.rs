//! Closed-loop simulation, bounded-disturbance Monte Carlo and feasibility
//! grid scans.

use log::{debug, warn};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, NonlinearModel};
use crate::design::{BoxConstraintSet, LinearSystem};
use crate::linalg::norm_inf;
use crate::qp::{check_feasible, CondensedProgram, SolveStatus};

/// States with `|x|_inf` at or below this count as the origin.
pub const SETTLE_TOL: f64 = 1e-9;

pub trait Plant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn advance(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
}

impl Plant for LinearSystem {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn input_dim(&self) -> usize {
        self.m()
    }

    fn advance(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.step(x, u)
    }
}

impl Plant for NonlinearModel {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn input_dim(&self) -> usize {
        self.m()
    }

    fn advance(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.step(x, u)
    }
}

/// Uniform input-channel noise `w_i ~ U[-bound, bound]`, added to the applied input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub bound: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x(0), ..., x(K)`; one longer than `inputs`.
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub statuses: Vec<SolveStatus>,
    pub iterations: Vec<usize>,
    pub settle_step: Option<usize>,
    /// Largest box violation over recorded states and inputs.
    pub max_violation: f64,
    /// Reason the run stopped early, if it did.
    pub halted: Option<String>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn max_input_abs(&self) -> f64 {
        self.inputs.iter().map(|u| norm_inf(u)).fold(0.0, f64::max)
    }
}

/// Runs the loop measure, solve, apply for `steps` steps.
pub fn simulate<C: Controller + ?Sized, P: Plant + ?Sized>(
    controller: &mut C,
    plant: &P,
    bounds: &BoxConstraintSet,
    x0: &[f64],
    steps: usize,
    disturbance: Option<Disturbance>,
) -> Trajectory {
    let mut rng = disturbance.map(|d| ChaCha8Rng::seed_from_u64(d.seed));
    let noise = disturbance.filter(|d| d.bound > 0.0).map(|d| Uniform::new_inclusive(-d.bound, d.bound));
    let mut traj = Trajectory {
        states: vec![x0.to_vec()],
        inputs: Vec::new(),
        costs: Vec::new(),
        statuses: Vec::new(),
        iterations: Vec::new(),
        settle_step: None,
        max_violation: bounds.state_violation(x0),
        halted: None,
    };
    let mut x = x0.to_vec();
    for k in 0..steps {
        let step = match controller.step(&x) {
            Ok(step) => step,
            Err(e) => {
                warn!("trajectory halted at step {k}: {e}");
                traj.halted = Some(e.to_string());
                break;
            }
        };
        let mut applied = step.u.clone();
        if let (Some(rng), Some(dist)) = (rng.as_mut(), noise.as_ref()) {
            for v in applied.iter_mut() {
                *v += dist.sample(rng);
            }
        }
        x = plant.advance(&x, &applied);
        traj.max_violation = traj.max_violation.max(bounds.input_violation(&step.u)).max(bounds.state_violation(&x));
        traj.inputs.push(step.u);
        traj.costs.push(step.predicted_cost);
        traj.statuses.push(step.status);
        traj.iterations.push(step.solve_iterations);
        traj.states.push(x.clone());
    }
    traj.settle_step = finite_time_check(&traj, SETTLE_TOL);
    traj
}

/// Smallest `T` with `|x(k)|_inf <= tol` for every recorded `k >= T`, provided
/// at least `n` recorded steps follow `T`.
pub fn finite_time_check(traj: &Trajectory, tol: f64) -> Option<usize> {
    let n = traj.states.first()?.len();
    let last = traj.states.len() - 1;
    let settle = traj.states.iter().rposition(|x| norm_inf(x) > tol).map_or(0, |k| k + 1);
    (settle <= last && last - settle >= n).then_some(settle)
}

/// Simulates from every initial state in parallel, each with a fresh controller.
pub fn simulate_many<C, F, P>(make: F, plant: &P, bounds: &BoxConstraintSet, starts: &[Vec<f64>], steps: usize) -> Vec<Trajectory>
where
    C: Controller,
    F: Fn() -> C + Sync,
    P: Plant + Sync + ?Sized,
{
    starts.par_iter().map(|x0| simulate(&mut make(), plant, bounds, x0, steps, None)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn square(half_width: f64, resolution: usize) -> Self {
        Self { lo: vec![-half_width; 2], hi: vec![half_width; 2], resolution: vec![resolution; 2] }
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Center of cell `index`, with the last axis varying fastest.
    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        let mut out = vec![0.0; self.resolution.len()];
        for axis in (0..self.resolution.len()).rev() {
            let res = self.resolution[axis];
            let i = rem % res;
            rem /= res;
            let width = (self.hi[axis] - self.lo[axis]) / res as f64;
            out[axis] = self.lo[axis] + (i as f64 + 0.5) * width;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellLabel {
    FeasibleBoth,
    FeasibleProposedOnly,
    /// Never expected: the proposed region contains the baseline region.
    FeasibleBaselineOnly,
    Infeasible,
}

impl CellLabel {
    pub fn proposed_feasible(self) -> bool {
        matches!(self, CellLabel::FeasibleBoth | CellLabel::FeasibleProposedOnly)
    }

    pub fn baseline_feasible(self) -> bool {
        matches!(self, CellLabel::FeasibleBoth | CellLabel::FeasibleBaselineOnly)
    }
}

impl std::fmt::Display for CellLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CellLabel::FeasibleBoth => "feasible_both",
            CellLabel::FeasibleProposedOnly => "feasible_proposed_only",
            CellLabel::FeasibleBaselineOnly => "feasible_baseline_only",
            CellLabel::Infeasible => "infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub both: usize,
    pub proposed_only: usize,
    pub baseline_only: usize,
    pub infeasible: usize,
}

impl LabelCounts {
    pub fn proposed(&self) -> usize {
        self.both + self.proposed_only
    }

    pub fn baseline(&self) -> usize {
        self.both + self.baseline_only
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityMap {
    pub grid: GridSpec,
    /// Row-major labels, one per cell.
    pub labels: Vec<CellLabel>,
    pub counts: LabelCounts,
}

impl FeasibilityMap {
    pub fn cells(&self) -> impl Iterator<Item = (Vec<f64>, CellLabel)> + '_ {
        self.labels.iter().enumerate().map(|(i, l)| (self.grid.cell_center(i), *l))
    }

    pub fn proposed_feasible_points(&self) -> Vec<Vec<f64>> {
        self.cells().filter(|(_, l)| l.proposed_feasible()).map(|(x, _)| x).collect()
    }
}

/// Labels every grid cell center by feasibility under the two programs.
pub fn feasibility_scan(proposed: &CondensedProgram, baseline: &CondensedProgram, grid: &GridSpec) -> FeasibilityMap {
    let labels: Vec<CellLabel> = (0..grid.cell_count())
        .into_par_iter()
        .map(|i| {
            let x0 = grid.cell_center(i);
            match (check_feasible(proposed, &x0), check_feasible(baseline, &x0)) {
                (true, true) => CellLabel::FeasibleBoth,
                (true, false) => CellLabel::FeasibleProposedOnly,
                (false, true) => CellLabel::FeasibleBaselineOnly,
                (false, false) => CellLabel::Infeasible,
            }
        })
        .collect();
    let mut counts = LabelCounts::default();
    for l in &labels {
        match l {
            CellLabel::FeasibleBoth => counts.both += 1,
            CellLabel::FeasibleProposedOnly => counts.proposed_only += 1,
            CellLabel::FeasibleBaselineOnly => counts.baseline_only += 1,
            CellLabel::Infeasible => counts.infeasible += 1,
        }
    }
    if counts.baseline_only > 0 {
        warn!("{} cells are feasible for the baseline only", counts.baseline_only);
    }
    debug!("feasibility scan: {counts:?}");
    FeasibilityMap { grid: grid.clone(), labels, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs: Vec<Trajectory>,
    /// First step of the tail window.
    pub tail_start: usize,
    /// `max` over runs of `max_{k >= tail_start} |x(k)|_inf`.
    pub tail_bound: f64,
    pub infeasible_runs: usize,
}

/// Seeded disturbed runs from one initial state. Run `r` draws its noise from
/// stream `r` of the generator seeded with `seed`.
pub fn monte_carlo<C, F, P>(
    make: F,
    plant: &P,
    bounds: &BoxConstraintSet,
    x0: &[f64],
    steps: usize,
    runs: usize,
    seed: u64,
    w_bound: f64,
) -> MonteCarloSummary
where
    C: Controller,
    F: Fn() -> C + Sync,
    P: Plant + Sync + ?Sized,
{
    let runs: Vec<Trajectory> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let run_seed = seed_for_run(seed, r);
            simulate(&mut make(), plant, bounds, x0, steps, Some(Disturbance { bound: w_bound, seed: run_seed }))
        })
        .collect();
    let tail_start = steps / 2;
    let tail_bound = runs.iter().flat_map(|t| t.states.iter().skip(tail_start)).map(|x| norm_inf(x)).fold(0.0, f64::max);
    let infeasible_runs = runs.iter().filter(|t| t.halted.is_some()).count();
    MonteCarloSummary { runs, tail_start, tail_bound, infeasible_runs }
}

fn seed_for_run(seed: u64, run: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rand::Rng::gen(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{LinearFeedback, LinearMpc};
    use crate::design::build_design;
    use crate::linalg::Mat;
    use crate::qp::build_condensed;

    fn plant() -> LinearSystem {
        LinearSystem::new(Mat::from_rows(&[&[1.1, 2.0], &[0.0, 0.95]]), Mat::column(&[0.0, 0.079])).unwrap()
    }

    fn bounds() -> BoxConstraintSet {
        BoxConstraintSet::input_only(2, &[5.0]).unwrap()
    }

    fn mpc(horizon: usize) -> LinearMpc {
        let k = Mat::row_vector(&[4.3, 24.7]);
        let design = build_design(&plant(), &bounds(), horizon, &Mat::identity(2), &Mat::scalar(0.1), Some(&k)).unwrap();
        LinearMpc::new(&plant(), &bounds(), design).unwrap()
    }

    #[test]
    fn origin_trajectory_is_all_zero() {
        let traj = simulate(&mut mpc(8), &plant(), &bounds(), &[0.0, 0.0], 6, None);
        assert!(traj.states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
        assert_eq!(traj.settle_step, Some(0));
        assert_eq!(traj.states.len(), traj.inputs.len() + 1);
    }

    #[test]
    fn finite_time_needs_n_steps_after_settling() {
        let mut traj = simulate(&mut mpc(8), &plant(), &bounds(), &[0.0, 0.0], 1, None);
        assert_eq!(finite_time_check(&traj, SETTLE_TOL), None);
        traj = simulate(&mut mpc(8), &plant(), &bounds(), &[0.0, 0.0], 2, None);
        assert_eq!(finite_time_check(&traj, SETTLE_TOL), Some(0));
    }

    #[test]
    fn linear_feedback_is_only_asymptotic_while_mpc_is_finite_time() {
        // The plant's stabilizing gain; its closed loop has spectral radius ~0.70.
        let k = Mat::row_vector(&[4.3, 24.7]);
        let x0 = [1.0, -0.4];
        let linear = simulate(&mut LinearFeedback::new(k), &plant(), &BoxConstraintSet::unbounded(2, 1), &x0, 50, None);
        let (first, last) = (norm_inf(&linear.states[0]), norm_inf(linear.states.last().unwrap()));
        assert!(last < 0.5 * first && last > 0.0, "linear loop should decay without reaching zero: {first} -> {last}");
        assert_eq!(finite_time_check(&linear, SETTLE_TOL), None, "{:?}", linear.states.last());
        let fin = simulate(&mut mpc(8), &plant(), &bounds(), &x0, 50, None);
        assert!(fin.settle_step.is_some());
    }

    #[test]
    fn grid_scan_labels_origin_and_far_field() {
        let grid = GridSpec { lo: vec![-101.5, -3.0], hi: vec![2.5, 3.0], resolution: vec![104, 3] };
        let proposed = build_condensed(&plant(), &bounds(), mpc(8).design()).unwrap();
        let baseline = build_condensed(&plant(), &bounds(), mpc(2).design()).unwrap();
        let map = feasibility_scan(&proposed, &baseline, &grid);
        let origin = map.cells().find(|(x, _)| norm_inf(x) < 1e-12).unwrap();
        assert_eq!(origin.1, CellLabel::FeasibleBoth);
        assert_eq!(map.labels[0], CellLabel::Infeasible);
        assert_eq!(map.counts.baseline_only, 0);
    }

    #[test]
    fn zero_disturbance_reproduces_the_nominal_run() {
        let x0 = [1.0, 0.2];
        let nominal = simulate(&mut mpc(8), &plant(), &bounds(), &x0, 20, None);
        let mc = monte_carlo(|| mpc(8), &plant(), &bounds(), &x0, 20, 3, 11, 0.0);
        for run in &mc.runs {
            assert_eq!(run.states, nominal.states);
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let x0 = [1.0, 0.2];
        let a = monte_carlo(|| mpc(8), &plant(), &bounds(), &x0, 30, 3, 5, 1.0);
        let b = monte_carlo(|| mpc(8), &plant(), &bounds(), &x0, 30, 3, 5, 1.0);
        assert_eq!(a, b);
        assert_ne!(a.runs[0].states, a.runs[1].states);
        assert!(a.runs.iter().all(|t| t.max_input_abs() <= 5.0));
    }
}
