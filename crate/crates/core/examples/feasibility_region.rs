//! Feasible initial states of the horizon-8 controller against the
//! shortest-horizon (N = n) terminal-cost scheme, printed as a character map.

use ftmpc::problems::si_linear;
use ftmpc::qp::build_condensed;
use ftmpc::sim::{feasibility_scan, CellLabel, GridSpec};

fn main() {
    env_logger::init();
    let prob = si_linear();
    let proposed = build_condensed(&prob.sys, &prob.bounds, &prob.design().unwrap()).unwrap();
    let baseline = build_condensed(&prob.sys, &prob.bounds, &prob.baseline_design().unwrap()).unwrap();

    let res = 41;
    let map = feasibility_scan(&proposed, &baseline, &GridSpec::square(3.0, res));
    // Rows are x2 (top = +3), columns x1.
    for j in (0..res).rev() {
        let line: String = (0..res)
            .map(|i| match map.labels[i * res + j] {
                CellLabel::FeasibleBoth => '#',
                CellLabel::FeasibleProposedOnly => '+',
                CellLabel::FeasibleBaselineOnly => '!',
                CellLabel::Infeasible => '.',
            })
            .collect();
        println!("{line}");
    }
    let c = map.counts;
    println!("'#' both: {}, '+' horizon 8 only: {}, '!' baseline only: {}", c.both, c.proposed_only, c.baseline_only);
    println!("enlargement factor {:.2}", c.proposed() as f64 / c.baseline() as f64);
}
