//! Shooting SQP controller on a feedback-linearizable nonlinear model with
//! a state band |x2| < pi/2 and |u| <= 2.

use ftmpc::controller::{Controller, NonlinearMpc};
use ftmpc::problems::nonlinear;

fn main() {
    env_logger::init();
    let prob = nonlinear();
    let design = prob.design().expect("terminal level passes the sampled check");
    println!("terminal gain {:?}, level {:.4e}", design.k.as_slice(), design.eps);

    let mut mpc = NonlinearMpc::new(prob.model.clone(), design, prob.bounds.clone());
    let mut x = vec![0.5, -0.3];
    for k in 0..8 {
        let step = mpc.step(&x).expect("feasible start");
        let sol = mpc.last_solution().unwrap();
        println!("k={k} x=[{:>10.3e} {:>10.3e}] u={:>9.5} SQP iterations {} defect {:.1e}", x[0], x[1], step.u[0], sol.sqp_iterations, sol.defect);
        x = prob.model.step(&x, &step.u);
    }
    println!("final |x|_inf = {:.2e}", ftmpc::linalg::norm_inf(&x));
}
