use crate::design::{BoxConstraintSet, ControllerDesign, DesignError, LinearSystem};
use crate::qp::{build_condensed, solve, CondensedProgram, SolveResult};

use super::{check_dim, check_status, clamp_into, ControlError, ControlStep, Controller};

/// Previous optimizer kept for the shifted warm start.
#[derive(Debug, Clone, Default)]
pub struct WarmState {
    pub previous: Option<SolveResult>,
}

/// One step of the single-input finite-time controller: solve at `x`, apply
/// the first input. The warm start is the previous optimizer shifted by one
/// step and extended with `-K x(N)`.
pub fn lin_step(prog: &CondensedProgram, design: &ControllerDesign, x: &[f64], warm: &mut WarmState) -> Result<ControlStep, ControlError> {
    check_dim(prog.n_sys, x)?;
    let start = warm.previous.as_ref().map(|prev| {
        let tail: Vec<f64> = design.k.mul_vec(prev.terminal_state()).into_iter().map(|v| -v).collect();
        prog.shifted_warm_start(prev, &tail)
    });
    let res = solve(prog, x, start.as_ref());
    if let Err(e) = check_status(res.status, x) {
        warm.previous = None;
        return Err(e);
    }
    let mut u = res.first_input(prog.m_sys).to_vec();
    clamp_into(&mut u, &prog.parts().input_lo, &prog.parts().input_hi);
    let step = ControlStep { u, predicted_cost: res.cost, status: res.status, solve_iterations: res.iterations };
    warm.previous = Some(res);
    Ok(step)
}

/// Single-input (or any linear) finite-time receding-horizon controller.
#[derive(Debug, Clone)]
pub struct LinearMpc {
    design: ControllerDesign,
    program: CondensedProgram,
    warm: WarmState,
    warm_start: bool,
}

impl LinearMpc {
    pub fn new(sys: &LinearSystem, bounds: &BoxConstraintSet, design: ControllerDesign) -> Result<Self, DesignError> {
        let program = build_condensed(sys, bounds, &design)?;
        Ok(Self { design, program, warm: WarmState::default(), warm_start: true })
    }

    /// Disables the shifted warm start (every solve starts cold).
    pub fn cold(mut self) -> Self {
        self.warm_start = false;
        self
    }

    pub fn design(&self) -> &ControllerDesign {
        &self.design
    }

    pub fn program(&self) -> &CondensedProgram {
        &self.program
    }

    /// Optimizer of the most recent successful step.
    pub fn last_solution(&self) -> Option<&SolveResult> {
        self.warm.previous.as_ref()
    }
}

impl Controller for LinearMpc {
    fn state_dim(&self) -> usize {
        self.program.n_sys
    }

    fn input_dim(&self) -> usize {
        self.program.m_sys
    }

    fn step(&mut self, x: &[f64]) -> Result<ControlStep, ControlError> {
        if !self.warm_start {
            self.warm.previous = None;
        }
        lin_step(&self.program, &self.design, x, &mut self.warm)
    }

    fn reset(&mut self) {
        self.warm = WarmState::default();
    }
}
