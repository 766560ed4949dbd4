//! Bounded input-channel noise |w| <= 1 (a tenth of the input bound): the
//! loop no longer settles but stays in a small neighbourhood of the origin.

use ftmpc::controller::LinearMpc;
use ftmpc::linalg::inverse;
use ftmpc::problems::si_linear;
use ftmpc::sim::monte_carlo;

fn main() {
    env_logger::init();
    let prob = si_linear();
    let design = prob.design().unwrap();
    let mpc = LinearMpc::new(&prob.sys, &prob.bounds, design.clone()).unwrap();

    let summary = monte_carlo(|| mpc.clone(), &prob.sys, &prob.bounds, &[1.0, -0.4], 80, 10, 7, 1.0);
    for (r, t) in summary.runs.iter().enumerate() {
        println!("run {r}: max |u| {:.3}, settle {:?}, halted {}", t.max_input_abs(), t.settle_step, t.halted.is_some());
    }
    let pinv = inverse(&design.p).unwrap();
    let radius = (0..2).map(|i| (design.eps * pinv[(i, i)]).sqrt()).fold(0.0, f64::max);
    println!("tail sup-norm from step {}: {:.4} (terminal-set radius {:.4})", summary.tail_start, summary.tail_bound, radius);
}
