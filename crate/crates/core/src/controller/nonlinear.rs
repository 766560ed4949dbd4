use std::fmt;
use std::sync::Arc;

use log::{debug, trace};

use crate::design::{build_design, ellipsoid_boundary_samples, BoxConstraintSet, ControllerDesign, LinearSystem, INVARIANCE_SAMPLES};
use crate::linalg::{dot, norm_inf, Mat};
use crate::qp::{weight_schedule, CondensedParts, CondensedProgram, SolveStatus, TerminalBlock, WarmStart};

use super::{check_dim, clamp_into, ControlError, ControlStep, Controller};

pub type StepFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64], &[f64]) -> (Mat, Mat) + Send + Sync>;

/// Discrete-time plant `x+ = f(x, u)` with `f(0, 0) = 0`.
#[derive(Clone)]
pub struct NonlinearModel {
    n: usize,
    m: usize,
    step: StepFn,
    jacobians: Option<JacobianFn>,
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel").field("n", &self.n).field("m", &self.m).field("analytic_jacobians", &self.jacobians.is_some()).finish()
    }
}

impl NonlinearModel {
    pub fn new(n: usize, m: usize, step: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { n, m, step: Arc::new(step), jacobians: None }
    }

    pub fn with_jacobians(mut self, jac: impl Fn(&[f64], &[f64]) -> (Mat, Mat) + Send + Sync + 'static) -> Self {
        self.jacobians = Some(Arc::new(jac));
        self
    }

    /// The linear plant viewed as a nonlinear model (finite-difference Jacobians).
    pub fn from_linear(sys: &LinearSystem) -> Self {
        let sys = sys.clone();
        Self::new(sys.n(), sys.m(), move |x, u| sys.step(x, u))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.step)(x, u)
    }

    /// `(df/dx, df/du)` at `(x, u)`; central differences with step
    /// `1e-6 (1 + |coordinate|)` unless analytic Jacobians were supplied.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> (Mat, Mat) {
        if let Some(jac) = &self.jacobians {
            return jac(x, u);
        }
        let mut a = Mat::zeros(self.n, self.n);
        let mut xp = x.to_vec();
        for j in 0..self.n {
            let h = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let hi = self.step(&xp, u);
            xp[j] = x[j] - h;
            let lo = self.step(&xp, u);
            xp[j] = x[j];
            for i in 0..self.n {
                a[(i, j)] = (hi[i] - lo[i]) / (2.0 * h);
            }
        }
        let mut b = Mat::zeros(self.n, self.m);
        let mut up = u.to_vec();
        for j in 0..self.m {
            let h = 1e-6 * (1.0 + u[j].abs());
            up[j] = u[j] + h;
            let hi = self.step(x, &up);
            up[j] = u[j] - h;
            let lo = self.step(x, &up);
            up[j] = u[j];
            for i in 0..self.n {
                b[(i, j)] = (hi[i] - lo[i]) / (2.0 * h);
            }
        }
        (a, b)
    }

    /// `|f(0, 0)|_inf`, zero for a valid model.
    pub fn origin_residual(&self) -> f64 {
        norm_inf(&self.step(&vec![0.0; self.n], &vec![0.0; self.m]))
    }
}

/// Linearized design at the origin with the terminal level halved until every
/// sampled boundary point satisfies the nonlinear invariance conditions.
pub fn nl_terminal_design(
    model: &NonlinearModel,
    bounds: &BoxConstraintSet,
    q: &Mat,
    r: &Mat,
    horizon: usize,
) -> Result<ControllerDesign, ControlError> {
    const LEVEL_FLOOR: f64 = 1e-10;
    let (a, b) = model.jacobians(&vec![0.0; model.n], &vec![0.0; model.m]);
    let sys = LinearSystem::new(a, b)?;
    let mut design = build_design(&sys, bounds, horizon, q, r, None)?;
    let mut eps = design.eps;
    while eps >= LEVEL_FLOOR {
        if nonlinear_invariance_holds(model, bounds, &design, eps)? {
            debug!("nonlinear terminal level {eps:e} (linear level {:e})", design.eps);
            design.eps = eps;
            return Ok(design);
        }
        eps *= 0.5;
    }
    Err(ControlError::NoInvariantSetFound { floor: LEVEL_FLOOR })
}

fn nonlinear_invariance_holds(model: &NonlinearModel, bounds: &BoxConstraintSet, design: &ControllerDesign, eps: f64) -> Result<bool, ControlError> {
    let samples = ellipsoid_boundary_samples(&design.p, eps, INVARIANCE_SAMPLES, 0)?;
    Ok(samples.iter().all(|x| {
        let u: Vec<f64> = design.k.mul_vec(x).into_iter().map(|v| -v).collect();
        let next = model.step(x, &u);
        bounds.input_violation(&u) <= 0.0 && bounds.state_violation(x) <= 0.0 && design.p.quad_form(&next) <= eps
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpSettings {
    pub max_iter: usize,
    pub step_tol: f64,
    pub defect_tol: f64,
    /// Sufficient-decrease constant of the merit line search.
    pub armijo: f64,
    pub min_step: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self { max_iter: 50, step_tol: 1e-8, defect_tol: 1e-8, armijo: 1e-4, min_step: 1e-10 }
    }
}

/// Converged SQP iterate.
#[derive(Debug, Clone)]
pub struct SqpSolution {
    pub step: ControlStep,
    /// Stacked `u(0..N)`.
    pub inputs: Vec<f64>,
    /// `x(0..=N)`.
    pub states: Vec<Vec<f64>>,
    pub sqp_iterations: usize,
    pub defect: f64,
}

struct Shooting<'a> {
    model: &'a NonlinearModel,
    state_weights: Vec<Mat>,
    input_weights: Vec<Mat>,
}

impl Shooting<'_> {
    fn cost(&self, inputs: &[f64], states: &[Vec<f64>]) -> f64 {
        let m = self.model.m;
        let mut j = 0.0;
        for (i, (wx, wu)) in self.state_weights.iter().zip(&self.input_weights).enumerate() {
            j += wx.quad_form(&states[i + 1]) + wu.quad_form(&inputs[i * m..(i + 1) * m]);
        }
        j
    }

    /// Directional derivative of the cost along `(du, dx)`.
    fn cost_slope(&self, inputs: &[f64], states: &[Vec<f64>], du: &[f64], dx: &[Vec<f64>]) -> f64 {
        let m = self.model.m;
        let mut d = 0.0;
        for (i, (wx, wu)) in self.state_weights.iter().zip(&self.input_weights).enumerate() {
            d += 2.0 * dot(&wx.mul_vec(&states[i + 1]), &dx[i + 1]);
            let ui = &inputs[i * m..(i + 1) * m];
            d += 2.0 * dot(&wu.mul_vec(ui), &du[i * m..(i + 1) * m]);
        }
        d
    }

    /// Per-step dynamics defects `x(i+1) - f(x(i), u(i))`.
    fn defects(&self, inputs: &[f64], states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = self.model.m;
        (0..states.len() - 1)
            .map(|i| {
                let f = self.model.step(&states[i], &inputs[i * m..(i + 1) * m]);
                states[i + 1].iter().zip(&f).map(|(a, b)| a - b).collect()
            })
            .collect()
    }

    fn rollout(&self, x0: &[f64], inputs: &[f64]) -> Vec<Vec<f64>> {
        let m = self.model.m;
        let mut states = vec![x0.to_vec()];
        for ui in inputs.chunks(m) {
            let next = self.model.step(states.last().expect("non-empty"), ui);
            states.push(next);
        }
        states
    }
}

fn l1(defects: &[Vec<f64>]) -> f64 {
    defects.iter().flatten().map(|d| d.abs()).sum()
}

fn max_defect(defects: &[Vec<f64>]) -> f64 {
    defects.iter().map(|d| norm_inf(d)).fold(0.0, f64::max)
}

/// One step of the nonlinear finite-time controller: SQP over inputs and
/// shooting states with time-varying linearizations, merit line search and
/// an exact-penalty weight kept above the dynamics multipliers.
pub fn nl_step(
    model: &NonlinearModel,
    design: &ControllerDesign,
    bounds: &BoxConstraintSet,
    x: &[f64],
    warm_inputs: Option<&[f64]>,
    settings: &SqpSettings,
) -> Result<SqpSolution, ControlError> {
    let (n, m, horizon) = (model.n, model.m, design.horizon);
    check_dim(n, x)?;
    let (state_weights, input_weights) = weight_schedule(design, n);
    let shooting = Shooting { model, state_weights, input_weights };

    let mut inputs = match warm_inputs {
        Some(u) if u.len() == horizon * m => u.to_vec(),
        _ => vec![0.0; horizon * m],
    };
    let mut states = shooting.rollout(x, &inputs);
    let mut penalty = 0.0_f64;
    let mut duals: Option<Vec<f64>> = None;
    let mut qp_iterations = 0;
    let (mut step_norm, mut defect) = (f64::INFINITY, f64::INFINITY);

    for iteration in 0..settings.max_iter {
        let mut dynamics = Vec::with_capacity(horizon);
        let mut free = vec![x.to_vec()];
        for i in 0..horizon {
            let ui = &inputs[i * m..(i + 1) * m];
            let (a, b) = model.jacobians(&states[i], ui);
            let f = model.step(&states[i], ui);
            let ax = a.mul_vec(&states[i]);
            let bu = b.mul_vec(ui);
            let prev = free.last().expect("non-empty");
            let next: Vec<f64> = a.mul_vec(prev).iter().enumerate().map(|(k, v)| v + f[k] - ax[k] - bu[k]).collect();
            free.push(next);
            dynamics.push((a, b));
        }
        let prog = CondensedProgram::from_parts(CondensedParts {
            dynamics,
            state_weights: shooting.state_weights.clone(),
            input_weights: shooting.input_weights.clone(),
            input_lo: bounds.u_lo.clone(),
            input_hi: bounds.u_hi.clone(),
            state_map: Mat::identity(n),
            state_lo: bounds.x_lo.clone(),
            state_hi: bounds.x_hi.clone(),
            terminal: vec![TerminalBlock { selector: Mat::identity(n), p: design.p.clone(), eps: design.eps }],
        })?;
        let stacked_free: Vec<f64> = free[1..].concat();
        let warm = WarmStart { u: inputs.clone(), duals: duals.clone() };
        let qp = prog.solve_free(x, &stacked_free, Some(&warm));
        qp_iterations += qp.iterations;
        if qp.status == SolveStatus::Infeasible {
            return Err(ControlError::InfeasibleAtState { state: x.to_vec() });
        }

        let du: Vec<f64> = qp.u_opt.iter().zip(&inputs).map(|(a, b)| a - b).collect();
        let dx: Vec<Vec<f64>> = qp.x_pred.iter().zip(&states).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect();
        let defects = shooting.defects(&inputs, &states);
        step_norm = norm_inf(&du).max(dx.iter().map(|d| norm_inf(d)).fold(0.0, f64::max));
        defect = max_defect(&defects);
        trace!("SQP iteration {iteration}: step {step_norm:e}, defect {defect:e}");
        if step_norm <= settings.step_tol && defect <= settings.defect_tol {
            // Take the full QP step: near the origin the iterate itself can be
            // within tolerance while still off the optimum by a relative O(1).
            let states = shooting.rollout(x, &qp.u_opt);
            let defect = max_defect(&shooting.defects(&qp.u_opt, &states));
            return Ok(finish(bounds, qp.u_opt, states, m, iteration, qp_iterations, defect, &shooting));
        }

        // Adjoint of the linearized dynamics: lambda_i = 2 W_i x_i + C^T y_i + A_i^T lambda_{i+1}.
        let state_mult = prog.state_multipliers(&qp.duals);
        let mut lambda = vec![0.0; n];
        let mut lambda_max: f64 = 0.0;
        for i in (1..=horizon).rev() {
            let w = shooting.state_weights[i - 1].mul_vec(&qp.x_pred[i]);
            let carry = if i < horizon { prog.parts().dynamics[i].0.tr_mul_vec(&lambda) } else { vec![0.0; n] };
            lambda = (0..n).map(|k| 2.0 * w[k] + state_mult[i - 1][k] + carry[k]).collect();
            lambda_max = lambda_max.max(norm_inf(&lambda));
        }
        if penalty <= lambda_max {
            penalty = 1.1 * lambda_max + 1e-8;
        }

        let merit = |u: &[f64], s: &[Vec<f64>]| shooting.cost(u, s) + penalty * l1(&shooting.defects(u, s));
        let current = merit(&inputs, &states);
        let slope = shooting.cost_slope(&inputs, &states, &du, &dx) - penalty * l1(&defects);
        let mut alpha = 1.0;
        loop {
            let trial_u: Vec<f64> = inputs.iter().zip(&du).map(|(u, d)| u + alpha * d).collect();
            let trial_x: Vec<Vec<f64>> = states.iter().zip(&dx).map(|(s, d)| s.iter().zip(d).map(|(a, b)| a + alpha * b).collect()).collect();
            let accept = slope >= 0.0 || merit(&trial_u, &trial_x) <= current + settings.armijo * alpha * slope || alpha <= settings.min_step;
            if accept {
                inputs = trial_u;
                states = trial_x;
                break;
            }
            alpha *= 0.5;
        }
        duals = Some(qp.duals);
    }
    Err(ControlError::SqpNoConvergence { iterations: settings.max_iter, step_norm, defect })
}

fn finish(
    bounds: &BoxConstraintSet,
    inputs: Vec<f64>,
    states: Vec<Vec<f64>>,
    m: usize,
    iteration: usize,
    qp_iterations: usize,
    defect: f64,
    shooting: &Shooting<'_>,
) -> SqpSolution {
    let mut u = inputs[..m].to_vec();
    clamp_into(&mut u, &bounds.u_lo, &bounds.u_hi);
    SqpSolution {
        step: ControlStep { u, predicted_cost: shooting.cost(&inputs, &states), status: SolveStatus::Optimal, solve_iterations: qp_iterations },
        inputs,
        states,
        sqp_iterations: iteration + 1,
        defect,
    }
}

/// Nonlinear finite-time controller. The first solve starts from zero inputs;
/// later solves start from the previous inputs shifted by one step and
/// extended with the terminal feedback.
#[derive(Debug, Clone)]
pub struct NonlinearMpc {
    model: NonlinearModel,
    design: ControllerDesign,
    bounds: BoxConstraintSet,
    settings: SqpSettings,
    warm: Option<Vec<f64>>,
    last: Option<SqpSolution>,
}

impl NonlinearMpc {
    pub fn new(model: NonlinearModel, design: ControllerDesign, bounds: BoxConstraintSet) -> Self {
        Self { model, design, bounds, settings: SqpSettings::default(), warm: None, last: None }
    }

    pub fn with_settings(mut self, settings: SqpSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn design(&self) -> &ControllerDesign {
        &self.design
    }

    pub fn model(&self) -> &NonlinearModel {
        &self.model
    }

    pub fn last_solution(&self) -> Option<&SqpSolution> {
        self.last.as_ref()
    }
}

impl Controller for NonlinearMpc {
    fn state_dim(&self) -> usize {
        self.model.n
    }

    fn input_dim(&self) -> usize {
        self.model.m
    }

    fn step(&mut self, x: &[f64]) -> Result<ControlStep, ControlError> {
        let result = nl_step(&self.model, &self.design, &self.bounds, x, self.warm.as_deref(), &self.settings);
        match result {
            Ok(sol) => {
                let m = self.model.m;
                let x_n = sol.states.last().expect("non-empty");
                let mut shifted = sol.inputs[m..].to_vec();
                shifted.extend(self.design.k.mul_vec(x_n).into_iter().map(|v| -v));
                self.warm = Some(shifted);
                let step = sol.step.clone();
                self.last = Some(sol);
                Ok(step)
            }
            Err(e) => {
                self.warm = None;
                self.last = None;
                Err(e)
            }
        }
    }

    fn reset(&mut self) {
        self.warm = None;
        self.last = None;
    }
}
