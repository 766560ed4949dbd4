//! Receding-horizon loop on the two-state plant. The state reaches the
//! origin exactly once it enters the terminal set, unlike a static LQR loop.

use ftmpc::controller::{LinearFeedback, LinearMpc};
use ftmpc::problems::si_linear;
use ftmpc::sim::simulate;

fn main() {
    env_logger::init();
    let prob = si_linear();
    let design = prob.design().expect("reference design");
    let mut mpc = LinearMpc::new(&prob.sys, &prob.bounds, design.clone()).expect("condensed program");

    let x0 = [2.0, -0.7];
    let traj = simulate(&mut mpc, &prob.sys, &prob.bounds, &x0, 20, None);
    println!("{:>3} {:>12} {:>12} {:>10} {:>12}", "k", "x1", "x2", "u", "cost");
    for k in 0..traj.steps() {
        let x = &traj.states[k];
        println!("{k:>3} {:>12.3e} {:>12.3e} {:>10.4} {:>12.4}", x[0], x[1], traj.inputs[k][0], traj.costs[k]);
    }
    println!("finite-time MPC settles at T = {:?}", traj.settle_step);

    let mut lqr = LinearFeedback::new(design.k.clone());
    let reference = simulate(&mut lqr, &prob.sys, &prob.bounds, &x0, 50, None);
    println!(
        "static feedback after 50 steps: |x|_inf = {:.2e}, settle = {:?}",
        ftmpc::linalg::norm_inf(reference.states.last().unwrap()),
        reference.settle_step
    );
}
