use crate::design::{BoxConstraintSet, DesignError, LinearSystem, MultiInputDesign};
use crate::qp::{build_multi_input_condensed, solve, CondensedProgram};

use super::{check_dim, check_status, clamp_into, ControlError, ControlStep, Controller, WarmState};

/// One step of the multi-input controller. The program lives in `z = M x`
/// over the active inputs; inputs outside the decoupled structure stay at zero.
pub fn mi_step(prog: &CondensedProgram, design: &MultiInputDesign, x: &[f64], warm: &mut WarmState) -> Result<ControlStep, ControlError> {
    let dec = &design.decoupled;
    check_dim(dec.m.rows(), x)?;
    let z = dec.m.mul_vec(x);
    let start = warm.previous.as_ref().map(|prev| {
        let z_n = prev.terminal_state();
        let tail: Vec<f64> = design
            .blocks
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let off = dec.block_offset(j);
                -b.k.mul_vec(&z_n[off..off + dec.block_dims[j]])[0]
            })
            .collect();
        prog.shifted_warm_start(prev, &tail)
    });
    let res = solve(prog, &z, start.as_ref());
    if let Err(e) = check_status(res.status, x) {
        warm.previous = None;
        return Err(e);
    }
    let mut active = res.first_input(prog.m_sys).to_vec();
    clamp_into(&mut active, &prog.parts().input_lo, &prog.parts().input_hi);
    let mut u = vec![0.0; dec.g.cols()];
    for (slot, value) in dec.active_inputs.iter().zip(active) {
        u[*slot] = value;
    }
    let step = ControlStep { u, predicted_cost: res.cost, status: res.status, solve_iterations: res.iterations };
    warm.previous = Some(res);
    Ok(step)
}

#[derive(Debug, Clone)]
pub struct MultiInputMpc {
    design: MultiInputDesign,
    program: CondensedProgram,
    warm: WarmState,
}

impl MultiInputMpc {
    pub fn new(sys: &LinearSystem, bounds: &BoxConstraintSet, design: MultiInputDesign) -> Result<Self, DesignError> {
        let program = build_multi_input_condensed(sys, bounds, &design)?;
        Ok(Self { design, program, warm: WarmState::default() })
    }

    pub fn design(&self) -> &MultiInputDesign {
        &self.design
    }

    pub fn program(&self) -> &CondensedProgram {
        &self.program
    }
}

impl Controller for MultiInputMpc {
    fn state_dim(&self) -> usize {
        self.design.decoupled.m.rows()
    }

    fn input_dim(&self) -> usize {
        self.design.decoupled.g.cols()
    }

    fn step(&mut self, x: &[f64]) -> Result<ControlStep, ControlError> {
        mi_step(&self.program, &self.design, x, &mut self.warm)
    }

    fn reset(&mut self) {
        self.warm = WarmState::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::LinearMpc;
    use crate::design::{build_design, build_multi_input_design};
    use crate::linalg::{norm_inf, Mat};

    #[test]
    fn decoupled_blocks_behave_like_independent_controllers() {
        let a = Mat::from_rows(&[&[1.2, 1.0, 0.0], &[0.0, 0.9, 0.0], &[0.0, 0.0, 1.3]]);
        let b = Mat::from_rows(&[&[0.0, 0.0], &[0.5, 0.0], &[0.0, 1.0]]);
        let sys = LinearSystem::new(a.clone(), b).unwrap();
        let bounds = BoxConstraintSet::input_only(3, &[2.0, 2.0]).unwrap();
        let design =
            build_multi_input_design(&sys, &bounds, 6, &[Mat::identity(2), Mat::identity(1)], &[Mat::scalar(0.1), Mat::scalar(0.1)]).unwrap();
        assert_eq!(design.decoupled.q, 2);
        let mut joint = MultiInputMpc::new(&sys, &bounds, design.clone()).unwrap();

        // Each block as its own plant, in its own coordinates.
        let dec = &design.decoupled;
        let mut singles: Vec<LinearMpc> = (0..2)
            .map(|j| {
                let (fjj, gj) = dec.block(j);
                let block_sys = LinearSystem::new(fjj, gj).unwrap();
                let nj = dec.block_dims[j];
                let block_bounds = BoxConstraintSet::input_only(nj, &[2.0]).unwrap();
                let mut d = build_design(&block_sys, &block_bounds, 6, &design.blocks[j].q, &design.blocks[j].r, Some(&design.blocks[j].k)).unwrap();
                d.eps = design.blocks[j].eps;
                LinearMpc::new(&block_sys, &block_bounds, d).unwrap()
            })
            .collect();

        let mut x = vec![0.8, -0.6, 0.7];
        for _ in 0..12 {
            let z = dec.m.mul_vec(&x);
            let u = joint.step(&x).unwrap().u;
            for (j, mpc) in singles.iter_mut().enumerate() {
                let off = dec.block_offset(j);
                let zj = &z[off..off + dec.block_dims[j]];
                let uj = mpc.step(zj).unwrap().u[0];
                assert!((u[dec.active_inputs[j]] - uj).abs() <= 1e-6, "block {j}: {} vs {uj}", u[dec.active_inputs[j]]);
            }
            x = sys.step(&x, &u);
        }
        assert!(norm_inf(&x) <= 1e-9);
    }

    #[test]
    fn redundant_input_stays_exactly_zero() {
        // Second input duplicates the first direction, so only one input is active.
        let a = Mat::from_rows(&[&[1.1, 2.0], &[0.0, 0.95]]);
        let b = Mat::from_rows(&[&[0.0, 0.0], &[0.079, 0.158]]);
        let sys = LinearSystem::new(a, b).unwrap();
        let bounds = BoxConstraintSet::input_only(2, &[5.0, 5.0]).unwrap();
        let design = build_multi_input_design(&sys, &bounds, 8, &[Mat::identity(2)], &[Mat::scalar(0.1)]).unwrap();
        let mut mpc = MultiInputMpc::new(&sys, &bounds, design).unwrap();
        let inactive = mpc.design().decoupled.inactive_inputs(2);
        assert_eq!(inactive.len(), 1);
        let mut x = vec![1.0, -0.4];
        for _ in 0..10 {
            let step = mpc.step(&x).unwrap();
            assert_eq!(step.u[inactive[0]], 0.0);
            x = sys.step(&x, &step.u);
        }
        assert!(norm_inf(&x) <= 1e-9);
    }
}
