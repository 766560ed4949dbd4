//! Offline synthesis for the unstable two-state plant: Lyapunov terminal
//! weight, terminal level, deadbeat gain and their certificates.

use ftmpc::design::{closed_loop, validate_design};
use ftmpc::linalg::mat_pow;
use ftmpc::problems::si_linear;

fn main() {
    env_logger::init();
    let prob = si_linear();
    let design = prob.design().expect("reference plant is designable");

    println!("terminal gain K   = {:?}", design.k.as_slice());
    println!("terminal weight P = {:?}", design.p);
    println!("terminal level    = {:.6}", design.eps);
    let k_db = design.k_db.as_ref().expect("single-input plants carry a deadbeat gain");
    println!("deadbeat gain     = {:?}", k_db.as_slice());

    let nilpotent = mat_pow(&closed_loop(&prob.sys, k_db), prob.sys.n());
    println!("|(A - B K_db)^n|  = {:.2e}", nilpotent.frobenius_norm());

    let report = validate_design(&prob.sys, &prob.bounds, &design).expect("validation runs");
    println!(
        "Lyapunov residual {:.2e}, invariance samples {}/{} passed",
        report.lyapunov_residual,
        report.invariance_samples - report.invariance_failures,
        report.invariance_samples
    );

    // Without a supplied gain the LQR gain is used instead.
    let lqr = ftmpc::problems::LinearProblem { gain: None, ..prob };
    let d = lqr.design().expect("LQR design");
    println!("LQR gain {:?} gives level {:.4}", d.k.as_slice(), d.eps);
}
