//! Reference problems: an unstable single-input plant, a three-state plant
//! with two inputs, and a scalar-input nonlinear model that is feedback
//! linearizable near the origin.

use std::f64::consts::FRAC_PI_2;

use crate::controller::{nl_terminal_design, ControlError, NonlinearModel};
use crate::design::{
    build_design, build_multi_input_design, decouple, BoxConstraintSet, ControllerDesign, DesignError, LinearSystem, MultiInputDesign,
};
use crate::linalg::Mat;

/// Linear plant plus the tunables of the offline design.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    pub sys: LinearSystem,
    pub bounds: BoxConstraintSet,
    pub horizon: usize,
    pub q: Mat,
    pub r: Mat,
    /// Terminal feedback; the LQR gain is used when absent.
    pub gain: Option<Mat>,
}

impl LinearProblem {
    pub fn design(&self) -> Result<ControllerDesign, DesignError> {
        self.design_with_horizon(self.horizon)
    }

    /// Same plant, weights and gain with the shortest admissible horizon `N = n`:
    /// the terminal-cost scheme the finite-time controller is compared against.
    pub fn baseline_design(&self) -> Result<ControllerDesign, DesignError> {
        self.design_with_horizon(self.sys.n())
    }

    fn design_with_horizon(&self, horizon: usize) -> Result<ControllerDesign, DesignError> {
        build_design(&self.sys, &self.bounds, horizon, &self.q, &self.r, self.gain.as_ref())
    }

    /// Block designs in decoupled coordinates. `Q_j` is the diagonal block of
    /// `q` at block `j` (so `q` weights `z = M x`) and `R_j = r[l, l]` for the
    /// active input `l`.
    pub fn multi_input_design(&self) -> Result<MultiInputDesign, DesignError> {
        self.multi_input_design_with_horizon(self.horizon)
    }

    pub fn multi_input_baseline_design(&self) -> Result<MultiInputDesign, DesignError> {
        self.multi_input_design_with_horizon(self.sys.n())
    }

    fn multi_input_design_with_horizon(&self, horizon: usize) -> Result<MultiInputDesign, DesignError> {
        if self.gain.is_some() {
            return Err(DesignError::InvalidInput("a fixed gain is only supported for single-input plants".into()));
        }
        let dec = decouple(&self.sys)?;
        let q_blocks: Vec<Mat> = (0..dec.q)
            .map(|j| {
                let off = dec.block_offset(j);
                let nj = dec.block_dims[j];
                self.q.block(off, off, nj, nj)
            })
            .collect();
        let r_blocks: Vec<Mat> = dec.active_inputs.iter().map(|&l| Mat::scalar(self.r[(l, l)])).collect();
        build_multi_input_design(&self.sys, &self.bounds, horizon, &q_blocks, &r_blocks)
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearProblem {
    pub model: NonlinearModel,
    pub bounds: BoxConstraintSet,
    pub horizon: usize,
    pub q: Mat,
    pub r: Mat,
}

impl NonlinearProblem {
    pub fn design(&self) -> Result<ControllerDesign, ControlError> {
        nl_terminal_design(&self.model, &self.bounds, &self.q, &self.r, self.horizon)
    }
}

/// `x+ = [[1.1, 2], [0, 0.95]] x + [0, 0.079] u`, `|u| <= 5`, `N = 8`,
/// `Q = I`, `R = 0.1`, `K = [4.3, 24.7]`.
pub fn si_linear() -> LinearProblem {
    let a = Mat::from_rows(&[&[1.1, 2.0], &[0.0, 0.95]]);
    let b = Mat::column(&[0.0, 0.079]);
    LinearProblem {
        sys: LinearSystem::new(a, b).expect("built-in plant is well formed"),
        bounds: BoxConstraintSet::input_only(2, &[5.0]).expect("built-in bounds are well formed"),
        horizon: 8,
        q: Mat::identity(2),
        r: Mat::scalar(0.1),
        gain: Some(Mat::row_vector(&[4.3, 24.7])),
    }
}

/// Three states, two inputs sharing one controllability chain, `|u_i| <= 5`.
pub fn mi_linear() -> LinearProblem {
    let a = Mat::from_rows(&[&[1.1, 2.0, -0.4], &[0.0, 0.95, -0.8], &[0.0, 0.1, 1.0]]);
    let b = Mat::from_rows(&[&[0.0, 0.0], &[0.079, 0.0], &[-0.1, 0.1]]);
    LinearProblem {
        sys: LinearSystem::new(a, b).expect("built-in plant is well formed"),
        bounds: BoxConstraintSet::input_only(3, &[5.0, 5.0]).expect("built-in bounds are well formed"),
        horizon: 8,
        q: Mat::identity(3),
        r: Mat::diag(&[0.1, 0.1]),
        gain: None,
    }
}

/// `x1+ = -1.1 x1 + 2 sin x2`, `x2+ = 0.2 x1 x2 + 0.79 u`, with
/// `|x2| < pi/2` (kept by a `1e-9` margin) and `|u| <= 2`.
pub fn nonlinear_model() -> NonlinearModel {
    NonlinearModel::new(2, 1, |x, u| vec![-1.1 * x[0] + 2.0 * x[1].sin(), 0.2 * x[0] * x[1] + 0.79 * u[0]]).with_jacobians(|x, _| {
        let a = Mat::from_rows(&[&[-1.1, 2.0 * x[1].cos()], &[0.2 * x[1], 0.2 * x[0]]]);
        (a, Mat::column(&[0.0, 0.79]))
    })
}

pub fn nonlinear() -> NonlinearProblem {
    let x2_max = FRAC_PI_2 - 1e-9;
    NonlinearProblem {
        model: nonlinear_model(),
        bounds: BoxConstraintSet::new(vec![f64::NEG_INFINITY, -x2_max], vec![f64::INFINITY, x2_max], vec![-2.0], vec![2.0])
            .expect("built-in bounds are well formed"),
        horizon: 8,
        q: Mat::identity(2),
        r: Mat::scalar(0.1),
    }
}
