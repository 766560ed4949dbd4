//! Receding-horizon controllers built on the condensed programs.

mod linear;
mod multi;
mod nonlinear;

pub use linear::{lin_step, LinearMpc, WarmState};
pub use multi::{mi_step, MultiInputMpc};
pub use nonlinear::{nl_step, nl_terminal_design, JacobianFn, NonlinearModel, NonlinearMpc, SqpSettings, StepFn};

use thiserror::Error;

use crate::design::DesignError;
use crate::linalg::Mat;
use crate::qp::SolveStatus;

/// Result of one receding-horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    /// First input block of the optimizer, in physical coordinates.
    pub u: Vec<f64>,
    pub predicted_cost: f64,
    pub status: SolveStatus,
    pub solve_iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("optimization is infeasible at state {state:?}")]
    InfeasibleAtState { state: Vec<f64> },
    #[error("SQP did not converge in {iterations} iterations (step {step_norm:e}, defect {defect:e})")]
    SqpNoConvergence { iterations: usize, step_norm: f64, defect: f64 },
    #[error("no invariant terminal level above {floor:e} passed the sampled check")]
    NoInvariantSetFound { floor: f64 },
    #[error("expected a state of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// A state-feedback law that may keep internal state between calls.
pub trait Controller {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&mut self, x: &[f64]) -> Result<ControlStep, ControlError>;
    /// Forgets warm-start information.
    fn reset(&mut self);
}

/// Static linear feedback `u = -K x`, used as an asymptotic reference loop.
#[derive(Debug, Clone)]
pub struct LinearFeedback {
    gain: Mat,
}

impl LinearFeedback {
    pub fn new(gain: Mat) -> Self {
        Self { gain }
    }
}

impl Controller for LinearFeedback {
    fn state_dim(&self) -> usize {
        self.gain.cols()
    }

    fn input_dim(&self) -> usize {
        self.gain.rows()
    }

    fn step(&mut self, x: &[f64]) -> Result<ControlStep, ControlError> {
        check_dim(self.state_dim(), x)?;
        Ok(ControlStep {
            u: self.gain.mul_vec(x).into_iter().map(|v| -v).collect(),
            predicted_cost: 0.0,
            status: SolveStatus::Optimal,
            solve_iterations: 0,
        })
    }

    fn reset(&mut self) {}
}

fn check_dim(expected: usize, x: &[f64]) -> Result<(), ControlError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(ControlError::DimensionMismatch { expected, got: x.len() })
    }
}

/// An iteration-capped solve still yields a usable (clamped) input; only a
/// certified infeasible program is an error.
fn check_status(status: SolveStatus, x: &[f64]) -> Result<(), ControlError> {
    match status {
        SolveStatus::Infeasible => Err(ControlError::InfeasibleAtState { state: x.to_vec() }),
        SolveStatus::MaxIters => {
            log::warn!("solver hit its iteration cap at {x:?}; applying the clamped iterate");
            Ok(())
        }
        SolveStatus::Optimal => Ok(()),
    }
}

fn clamp_into(u: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in u.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}
