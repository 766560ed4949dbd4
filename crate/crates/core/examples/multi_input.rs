//! Two-input plant whose inputs share one controllability chain: the
//! decoupled form keeps one input and the other stays exactly zero.

use ftmpc::controller::MultiInputMpc;
use ftmpc::design::decouple;
use ftmpc::problems::mi_linear;
use ftmpc::sim::simulate;

fn main() {
    env_logger::init();
    let prob = mi_linear();
    let dec = decouple(&prob.sys).expect("controllable plant");
    println!("blocks q = {}, dims {:?}, active inputs {:?}", dec.q, dec.block_dims, dec.active_inputs);
    println!("M = {:?}", dec.m);

    let design = prob.multi_input_design().expect("block designs");
    for (j, b) in design.blocks.iter().enumerate() {
        println!("block {j}: K = {:?}, level {:.4}", b.k.as_slice(), b.eps);
    }
    let mut mpc = MultiInputMpc::new(&prob.sys, &prob.bounds, design).expect("joint program");
    let traj = simulate(&mut mpc, &prob.sys, &prob.bounds, &[1.0, -0.4, 0.5], 20, None);
    for (k, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate().take(12) {
        println!("k={k:>2} x=[{:>10.3e} {:>10.3e} {:>10.3e}] u=[{:>8.4} {}]", x[0], x[1], x[2], u[0], u[1]);
    }
    println!("settles at T = {:?}", traj.settle_step);
}
