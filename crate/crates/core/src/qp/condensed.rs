//! Condensed finite-horizon program: predicted states are eliminated through
//! `X = F x0 + Phi U`, leaving a program in the stacked input sequence `U`.
//!
//! Stage weights are scheduled per step, so the cost window may start later
//! than step 0 (zero blocks at the head of the horizon).

use log::debug;

use crate::design::{BoxConstraintSet, ControllerDesign, DesignError, LinearSystem, MultiInputDesign};
use crate::linalg::{cholesky, dot, LinalgError, Mat};

use super::ellipsoid::Ellipsoid;
use super::splitting::{ConeBlock, ConicProgram, QpSettings, SolveStatus, WarmStart};

/// Weight on the regularizer that makes the phase-1 program strictly convex.
const PHASE1_REG: f64 = 1e-8;
/// Relative slack on the terminal level when deciding feasibility.
const PHASE1_LEVEL_TOL: f64 = 1e-9;
/// Absolute constraint violation accepted by the feasibility check.
const FEASIBILITY_TOL: f64 = 1e-6;
/// Iterations after which a slow solve first asks the phase-1 program whether
/// the problem is feasible at all.
const PHASE1_TRIGGER: usize = 200;

/// One ellipsoidal terminal constraint `(S x(N))^T P (S x(N)) <= eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalBlock {
    /// Rows selecting the constrained coordinates of `x(N)`.
    pub selector: Mat,
    pub p: Mat,
    pub eps: f64,
}

/// Everything needed to condense a (possibly time-varying) horizon.
#[derive(Debug, Clone)]
pub struct CondensedParts {
    /// `(A_i, B_i)` for `x(i+1) = A_i x(i) + B_i u(i)`, `i = 0..N`.
    pub dynamics: Vec<(Mat, Mat)>,
    /// Weight on `x(i+1)`; the last entry is the terminal weight.
    pub state_weights: Vec<Mat>,
    /// Weight on `u(i)`.
    pub input_weights: Vec<Mat>,
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
    /// Constrained outputs `C x(i)` for `i = 1..N`, bounded by `[state_lo, state_hi]`.
    pub state_map: Mat,
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub terminal: Vec<TerminalBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowTag {
    Input { step: usize, index: usize },
    State { step: usize, index: usize },
    Terminal { block: usize, index: usize },
}

impl RowTag {
    fn is_terminal(&self) -> bool {
        matches!(self, RowTag::Terminal { .. })
    }
}

#[derive(Debug, Clone)]
pub struct CondensedProgram {
    /// Objective Hessian `Phi^T Qhat Phi + Rhat`.
    pub h: Mat,
    /// `Phi^T Qhat F`, so the linear term is `f = f_map x0`.
    pub f_map: Mat,
    /// `F^T Qhat F`, the constant `x0^T const_map x0`.
    pub const_map: Mat,
    pub f: Mat,
    pub phi: Mat,
    pub n_sys: usize,
    pub m_sys: usize,
    pub horizon: usize,
    parts: CondensedParts,
    row_tags: Vec<RowTag>,
    conic: ConicProgram,
    phase1: Phase1,
}

#[derive(Debug, Clone)]
enum Phase1 {
    /// Minimize the terminal value over the box rows only.
    TerminalValue { conic: ConicProgram, terminal_rows: Mat, p: Mat, eps: f64 },
    /// Regularized solve with every constraint kept.
    Regularized(ConicProgram),
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u_opt: Vec<f64>,
    /// `x(0), ..., x(N)` along the optimizer.
    pub x_pred: Vec<Vec<f64>>,
    pub status: SolveStatus,
    /// `U^T H U + 2 f^T U`.
    pub objective: f64,
    /// Objective plus the constant term: the predicted finite-horizon cost.
    pub cost: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duals: Vec<f64>,
    pub cone_multipliers: Vec<f64>,
    pub polished: bool,
}

impl SolveResult {
    pub fn first_input(&self, m: usize) -> &[f64] {
        &self.u_opt[..m]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.x_pred.last().expect("prediction includes x(0)")
    }
}

/// Weight schedule for one block whose cost window starts at `start`.
fn windowed(step: usize, start: usize, weight: &Mat) -> Mat {
    if step >= start {
        weight.clone()
    } else {
        Mat::zeros(weight.rows(), weight.cols())
    }
}

fn block_diag(blocks: &[Mat]) -> Mat {
    let rows = blocks.iter().map(Mat::rows).sum();
    let cols = blocks.iter().map(Mat::cols).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.set_block(r, c, b);
        r += b.rows();
        c += b.cols();
    }
    out
}

/// Condensed program for a single-input (or per-block) design: zero weights on
/// `x(1..n)` and `u(0..n)`, `Q` and `R` on steps `n..N`, `P` on `x(N)`.
pub fn build_condensed(sys: &LinearSystem, bounds: &BoxConstraintSet, design: &ControllerDesign) -> Result<CondensedProgram, DesignError> {
    let (n, m, horizon) = (sys.n(), sys.m(), design.horizon);
    if horizon < n {
        return Err(DesignError::HorizonTooShort { horizon, n });
    }
    if bounds.n() != n || bounds.m() != m {
        return Err(DesignError::InvalidInput("constraint dimensions do not match the plant".into()));
    }
    let (state_weights, input_weights) = weight_schedule(design, n);
    CondensedProgram::from_parts(CondensedParts {
        dynamics: vec![(sys.a().clone(), sys.b().clone()); horizon],
        state_weights,
        input_weights,
        input_lo: bounds.u_lo.clone(),
        input_hi: bounds.u_hi.clone(),
        state_map: Mat::identity(n),
        state_lo: bounds.x_lo.clone(),
        state_hi: bounds.x_hi.clone(),
        terminal: vec![TerminalBlock { selector: Mat::identity(n), p: design.p.clone(), eps: design.eps }],
    })
}

/// Per-step weights `(on x(1..=N), on u(0..N))` of the shifted cost window
/// starting at step `n`, with `P` on `x(N)`.
pub fn weight_schedule(design: &ControllerDesign, n: usize) -> (Vec<Mat>, Vec<Mat>) {
    let horizon = design.horizon;
    let states = (1..=horizon).map(|i| if i == horizon { design.p.clone() } else { windowed(i, n, &design.q) }).collect();
    let inputs = (0..horizon).map(|i| windowed(i, n, &design.r)).collect();
    (states, inputs)
}

/// Joint program in decoupled coordinates `z = M x` over the active inputs.
/// Block `j` is weighted from step `n_j` on and carries its own terminal ellipsoid.
pub fn build_multi_input_condensed(
    sys: &LinearSystem,
    bounds: &BoxConstraintSet,
    design: &MultiInputDesign,
) -> Result<CondensedProgram, DesignError> {
    let dec = &design.decoupled;
    let n = sys.n();
    let horizon = design.horizon;
    if let Some(&nj) = dec.block_dims.iter().max() {
        if horizon < nj {
            return Err(DesignError::HorizonTooShort { horizon, n: nj });
        }
    }
    let g_active = dec.g.select_cols(&dec.active_inputs);
    let state_weights = (1..=horizon)
        .map(|i| {
            let blocks: Vec<Mat> =
                design.blocks.iter().zip(&dec.block_dims).map(|(b, &nj)| if i == horizon { b.p.clone() } else { windowed(i, nj, &b.q) }).collect();
            block_diag(&blocks)
        })
        .collect();
    let input_weights = (0..horizon)
        .map(|i| {
            let blocks: Vec<Mat> = design.blocks.iter().zip(&dec.block_dims).map(|(b, &nj)| windowed(i, nj, &b.r)).collect();
            block_diag(&blocks)
        })
        .collect();
    let terminal = (0..dec.q)
        .map(|j| {
            let off = dec.block_offset(j);
            let nj = dec.block_dims[j];
            let mut selector = Mat::zeros(nj, n);
            for k in 0..nj {
                selector[(k, off + k)] = 1.0;
            }
            TerminalBlock { selector, p: design.blocks[j].p.clone(), eps: design.blocks[j].eps }
        })
        .collect();
    CondensedProgram::from_parts(CondensedParts {
        dynamics: vec![(dec.f.clone(), g_active); horizon],
        state_weights,
        input_weights,
        input_lo: dec.active_inputs.iter().map(|&l| bounds.u_lo[l]).collect(),
        input_hi: dec.active_inputs.iter().map(|&l| bounds.u_hi[l]).collect(),
        state_map: dec.m_inv.clone(),
        state_lo: bounds.x_lo.clone(),
        state_hi: bounds.x_hi.clone(),
        terminal,
    })
}

impl CondensedProgram {
    pub fn from_parts(parts: CondensedParts) -> Result<Self, DesignError> {
        let horizon = parts.dynamics.len();
        if horizon == 0 || parts.state_weights.len() != horizon || parts.input_weights.len() != horizon {
            return Err(DesignError::InvalidInput("horizon-length sequences disagree".into()));
        }
        let n = parts.dynamics[0].0.rows();
        let m = parts.dynamics[0].1.cols();
        if parts.input_lo.len() != m || parts.input_hi.len() != m {
            return Err(DesignError::InvalidInput("input bounds do not match the input dimension".into()));
        }
        if parts.state_map.cols() != n || parts.state_lo.len() != parts.state_map.rows() || parts.state_hi.len() != parts.state_map.rows() {
            return Err(DesignError::InvalidInput("state constraint rows do not match the state dimension".into()));
        }

        let (f, phi) = prediction_maps(&parts.dynamics);
        let q_hat = block_diag(&parts.state_weights);
        let r_hat = block_diag(&parts.input_weights);
        let qphi = &q_hat * &phi;
        let h = (&(&phi.transpose() * &qphi) + &r_hat).symmetrize();
        let f_map = &qphi.transpose() * &f;
        let const_map = (&(&f.transpose() * &q_hat) * &f).symmetrize();

        // Certify the regularized Hessian.
        let reg = 1e-9 * h.trace().abs() / h.rows() as f64;
        cholesky(&(&h + &Mat::identity(h.rows()).scale(reg))).map_err(|_| DesignError::NotPositiveDefinite("condensed Hessian"))?;

        let (row_map, lo, hi, row_tags, cone_specs) = constraint_rows(&parts, &phi, n, m, horizon)?;
        let cones = cone_specs
            .iter()
            .map(|(start, blk)| Ok(ConeBlock { start: *start, set: Ellipsoid::new(&blk.p, blk.eps)? }))
            .collect::<Result<Vec<_>, LinalgError>>()?;
        let settings = QpSettings::default();
        let conic = ConicProgram::new(h.clone(), row_map.clone(), lo.clone(), hi.clone(), cones.clone(), settings)?;

        let phase1 = if cones.len() == 1 {
            let (start, blk) = &cone_specs[0];
            let k = blk.selector.rows();
            let terminal_rows = row_map.block(*start, 0, k, row_map.cols());
            let box_rows: Vec<usize> = (0..row_tags.len()).filter(|i| !row_tags[*i].is_terminal()).collect();
            let mut rows = Mat::zeros(box_rows.len(), row_map.cols());
            for (r, &i) in box_rows.iter().enumerate() {
                for j in 0..row_map.cols() {
                    rows[(r, j)] = row_map[(i, j)];
                }
            }
            let hp = (&(&terminal_rows.transpose() * &blk.p) * &terminal_rows).symmetrize();
            let hp = &hp + &Mat::identity(hp.rows()).scale(PHASE1_REG);
            let conic = ConicProgram::new(
                hp,
                rows,
                box_rows.iter().map(|&i| lo[i]).collect(),
                box_rows.iter().map(|&i| hi[i]).collect(),
                Vec::new(),
                settings,
            )?;
            Phase1::TerminalValue { conic, terminal_rows, p: blk.p.clone(), eps: blk.eps }
        } else {
            let hr = Mat::identity(h.rows()).scale(PHASE1_REG);
            Phase1::Regularized(ConicProgram::new(hr, row_map.clone(), lo, hi, cones, settings)?)
        };

        Ok(Self { h, f_map, const_map, f, phi, n_sys: n, m_sys: m, horizon, parts, row_tags, conic, phase1 })
    }

    pub fn parts(&self) -> &CondensedParts {
        &self.parts
    }

    pub fn conic(&self) -> &ConicProgram {
        &self.conic
    }

    /// Offsets of the constraint rows for a given free response `F x0 (+ drift)`.
    fn row_offset(&self, free: &[f64]) -> Vec<f64> {
        let n = self.n_sys;
        let x_n = &free[(self.horizon - 1) * n..];
        self.row_tags
            .iter()
            .map(|tag| match *tag {
                RowTag::Input { .. } => 0.0,
                RowTag::State { step, index } => dot(self.parts.state_map.row(index), &free[(step - 1) * n..step * n]),
                RowTag::Terminal { block, index } => dot(self.parts.terminal[block].selector.row(index), x_n),
            })
            .collect()
    }

    /// Free response `F x0` stacked over `x(1..N)`.
    pub fn free_response(&self, x0: &[f64]) -> Vec<f64> {
        self.f.mul_vec(x0)
    }

    /// Stacked `x(1..N)` for inputs `U` and free response.
    fn predict(&self, free: &[f64], u: &[f64]) -> Vec<f64> {
        let mut x = self.phi.mul_vec(u);
        x.iter_mut().zip(free).for_each(|(a, b)| *a += b);
        x
    }

    fn quadratic_terms(&self, free: &[f64]) -> (Vec<f64>, f64) {
        let q_free = self.weighted_states(free);
        (self.phi.tr_mul_vec(&q_free), dot(free, &q_free))
    }

    fn weighted_states(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_sys;
        let mut out = Vec::with_capacity(x.len());
        for (i, w) in self.parts.state_weights.iter().enumerate() {
            out.extend(w.mul_vec(&x[i * n..(i + 1) * n]));
        }
        out
    }

    /// Solves with the prediction driven by an explicit free response, which
    /// lets affine (linearized) dynamics reuse the program.
    pub fn solve_free(&self, x0: &[f64], free: &[f64], warm: Option<&WarmStart>) -> SolveResult {
        let (f_lin, constant) = self.quadratic_terms(free);
        let offset = self.row_offset(free);
        let cap = self.conic.settings().max_iter;
        let mut sol = self.conic.solve_limited(&f_lin, &offset, warm, PHASE1_TRIGGER.min(cap));
        if sol.status == SolveStatus::MaxIters && sol.iterations < cap {
            if self.phase1_feasible(&offset) == Some(false) {
                sol.status = SolveStatus::Infeasible;
            } else {
                let resume = WarmStart { u: sol.u.clone(), duals: Some(sol.duals.clone()) };
                let spent = sol.iterations;
                sol = self.conic.solve_limited(&f_lin, &offset, Some(&resume), cap - spent);
                sol.iterations += spent;
            }
        }
        let stacked = self.predict(free, &sol.u);
        let mut x_pred = vec![x0.to_vec()];
        x_pred.extend(stacked.chunks(self.n_sys).map(<[f64]>::to_vec));
        if sol.status != SolveStatus::Optimal {
            debug!("condensed solve ended with {} after {} iterations", sol.status, sol.iterations);
        }
        SolveResult {
            cost: sol.objective + constant,
            u_opt: sol.u,
            x_pred,
            status: sol.status,
            objective: sol.objective,
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            duals: sol.duals,
            cone_multipliers: sol.cone_multipliers,
            polished: sol.polished,
        }
    }

    /// Exact feasibility verdict from the terminal-value program; `None` when
    /// the program has no such certificate (several or no terminal blocks).
    fn phase1_feasible(&self, offset: &[f64]) -> Option<bool> {
        let Phase1::TerminalValue { conic, terminal_rows, p, eps } = &self.phase1 else {
            return None;
        };
        let box_offset: Vec<f64> = offset.iter().zip(&self.row_tags).filter(|(_, t)| !t.is_terminal()).map(|(o, _)| *o).collect();
        let start = self.row_tags.iter().position(RowTag::is_terminal).expect("one cone block");
        let t_free = &offset[start..start + terminal_rows.rows()];
        let f_lin = terminal_rows.tr_mul_vec(&p.mul_vec(t_free));
        let sol = conic.solve(&f_lin, &box_offset, None);
        if sol.status != SolveStatus::Optimal {
            if sol.status == SolveStatus::MaxIters {
                debug!("phase-1 solve hit the iteration cap");
            }
            return Some(false);
        }
        let mut t = terminal_rows.mul_vec(&sol.u);
        t.iter_mut().zip(t_free).for_each(|(a, b)| *a += b);
        Some(p.quad_form(&t) <= eps * (1.0 + PHASE1_LEVEL_TOL) && conic.violation(&sol.u, &box_offset) <= FEASIBILITY_TOL)
    }

    /// Constraint multipliers mapped back onto the predicted states: entry
    /// `i` is the sum of `row^T y` over every state and terminal row acting
    /// on `x(i+1)`.
    pub fn state_multipliers(&self, duals: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n_sys;
        let mut out = vec![vec![0.0; n]; self.horizon];
        for (tag, y) in self.row_tags.iter().zip(duals) {
            let (step, row) = match *tag {
                RowTag::Input { .. } => continue,
                RowTag::State { step, index } => (step, self.parts.state_map.row(index)),
                RowTag::Terminal { block, index } => (self.horizon, self.parts.terminal[block].selector.row(index)),
            };
            for (o, r) in out[step - 1].iter_mut().zip(row) {
                *o += r * y;
            }
        }
        out
    }

    /// Largest constraint violation of `U` at `x0`.
    pub fn violation(&self, x0: &[f64], u: &[f64]) -> f64 {
        let free = self.free_response(x0);
        self.conic.violation(u, &self.row_offset(&free))
    }

    /// Warm start from the previous solution shifted by one step, with `tail`
    /// appended as the last input.
    pub fn shifted_warm_start(&self, prev: &SolveResult, tail: &[f64]) -> WarmStart {
        let m = self.m_sys;
        let mut u = prev.u_opt[m..].to_vec();
        u.extend_from_slice(tail);
        let index_of = |want: RowTag| self.row_tags.iter().position(|t| *t == want);
        let duals = (prev.duals.len() == self.row_tags.len()).then(|| {
            self.row_tags
                .iter()
                .map(|tag| {
                    let next = match *tag {
                        RowTag::Input { step, index } => index_of(RowTag::Input { step: step + 1, index }),
                        RowTag::State { step, index } => index_of(RowTag::State { step: step + 1, index }),
                        RowTag::Terminal { .. } => None,
                    };
                    next.map_or(0.0, |i| prev.duals[i])
                })
                .collect()
        });
        WarmStart { u, duals }
    }
}

fn prediction_maps(dynamics: &[(Mat, Mat)]) -> (Mat, Mat) {
    let horizon = dynamics.len();
    let n = dynamics[0].0.rows();
    let m = dynamics[0].1.cols();
    let mut f = Mat::zeros(horizon * n, n);
    let mut phi = Mat::zeros(horizon * n, horizon * m);
    let mut transition = Mat::identity(n);
    for (i, (a, b)) in dynamics.iter().enumerate() {
        transition = a * &transition;
        f.set_block(i * n, 0, &transition);
        // Row block i: A_i * (row block i-1) + B_i in column block i.
        if i > 0 {
            let prev = phi.block((i - 1) * n, 0, n, i * m);
            phi.set_block(i * n, 0, &(a * &prev));
        }
        phi.set_block(i * n, i * m, b);
    }
    (f, phi)
}

type RowLayout = (Mat, Vec<f64>, Vec<f64>, Vec<RowTag>, Vec<(usize, TerminalBlock)>);

/// Stacks input rows, state rows for `x(1..N)` and terminal rows. Rows with
/// two infinite bounds are dropped.
fn constraint_rows(parts: &CondensedParts, phi: &Mat, n: usize, m: usize, horizon: usize) -> Result<RowLayout, DesignError> {
    let dim = horizon * m;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let (mut lo, mut hi, mut tags) = (Vec::new(), Vec::new(), Vec::new());
    let bounded = |l: f64, h: f64| l.is_finite() || h.is_finite();
    for step in 0..horizon {
        for index in 0..m {
            if !bounded(parts.input_lo[index], parts.input_hi[index]) {
                continue;
            }
            let mut row = vec![0.0; dim];
            row[step * m + index] = 1.0;
            rows.push(row);
            lo.push(parts.input_lo[index]);
            hi.push(parts.input_hi[index]);
            tags.push(RowTag::Input { step, index });
        }
    }
    for step in 1..=horizon {
        let phi_block = phi.block((step - 1) * n, 0, n, dim);
        let mapped = &parts.state_map * &phi_block;
        for index in 0..parts.state_map.rows() {
            if !bounded(parts.state_lo[index], parts.state_hi[index]) {
                continue;
            }
            rows.push(mapped.row(index).to_vec());
            lo.push(parts.state_lo[index]);
            hi.push(parts.state_hi[index]);
            tags.push(RowTag::State { step, index });
        }
    }
    let phi_n = phi.block((horizon - 1) * n, 0, n, dim);
    let mut cones = Vec::new();
    for (block, blk) in parts.terminal.iter().enumerate() {
        if blk.selector.cols() != n || blk.p.rows() != blk.selector.rows() {
            return Err(DesignError::InvalidInput("terminal block dimensions".into()));
        }
        if !(blk.eps > 0.0) {
            return Err(DesignError::InvalidInput(format!("terminal level must be positive, got {}", blk.eps)));
        }
        if !blk.eps.is_finite() {
            continue;
        }
        cones.push((rows.len(), blk.clone()));
        let mapped = &blk.selector * &phi_n;
        for k in 0..blk.selector.rows() {
            rows.push(mapped.row(k).to_vec());
            lo.push(f64::NEG_INFINITY);
            hi.push(f64::INFINITY);
            tags.push(RowTag::Terminal { block, index: k });
        }
    }
    let flat: Vec<f64> = rows.concat();
    Ok((Mat::from_vec(rows.len(), dim, flat), lo, hi, tags, cones))
}

/// Solves the program at `x0`.
pub fn solve(prog: &CondensedProgram, x0: &[f64], warm: Option<&WarmStart>) -> SolveResult {
    prog.solve_free(x0, &prog.free_response(x0), warm)
}

/// Whether some admissible input sequence steers `x0` into the terminal set
/// while honoring every path constraint.
pub fn check_feasible(prog: &CondensedProgram, x0: &[f64]) -> bool {
    let free = prog.free_response(x0);
    let offset = prog.row_offset(&free);
    if let Some(verdict) = prog.phase1_feasible(&offset) {
        return verdict;
    }
    let Phase1::Regularized(conic) = &prog.phase1 else { unreachable!("terminal-value phase 1 handled above") };
    let sol = conic.solve(&vec![0.0; conic.dim()], &offset, None);
    if sol.status == SolveStatus::MaxIters {
        debug!("feasibility solve hit the iteration cap at {x0:?}");
    }
    sol.status == SolveStatus::Optimal && conic.violation(&sol.u, &offset) <= FEASIBILITY_TOL
}

/// Finite-horizon cost of `U` at `x0` evaluated by forward simulation.
pub fn true_cost(prog: &CondensedProgram, x0: &[f64], u: &[f64]) -> f64 {
    let m = prog.m_sys;
    let mut x = x0.to_vec();
    let mut cost = 0.0;
    for (i, (a, b)) in prog.parts.dynamics.iter().enumerate() {
        let ui = &u[i * m..(i + 1) * m];
        cost += prog.parts.input_weights[i].quad_form(ui);
        let ax = a.mul_vec(&x);
        let bu = b.mul_vec(ui);
        x = ax.iter().zip(&bu).map(|(p, q)| p + q).collect();
        cost += prog.parts.state_weights[i].quad_form(&x);
    }
    cost
}
