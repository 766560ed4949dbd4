//! Operator-splitting solver for
//!
//! ```text
//!     minimize    U^T H U + 2 f^T U
//!     subject to  lo <= (A U + o)_i <= hi      for box rows
//!                 (A_b U + o_b) in E_b         for ellipsoid blocks b
//! ```
//!
//! The iteration follows the OSQP scheme (one pre-factored linear solve plus
//! closed-form projections per step). Every few iterations the current dual
//! estimate is used to guess the active set, and an equality-constrained KKT
//! solve (with a scalar multiplier search per active ellipsoid) "polishes" the
//! iterate. A polished point that passes the full KKT test is the exact
//! optimum of the convex problem and ends the solve.

use crate::linalg::{cholesky, cholesky_solve, norm_inf, LinalgError, Lu, Mat};

use super::ellipsoid::Ellipsoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::Infeasible => "infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Threshold for the primal infeasibility certificate.
    pub eps_infeasible: f64,
    pub max_iter: usize,
    /// Residuals, certificates and polishing are evaluated every `check_every` iterations.
    pub check_every: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-8,
            eps_rel: 1e-6,
            eps_infeasible: 1e-6,
            max_iter: 20_000,
            check_every: 10,
            polish: true,
        }
    }
}

/// A block of consecutive constraint rows confined to an ellipsoid.
#[derive(Debug, Clone)]
pub struct ConeBlock {
    pub start: usize,
    pub set: Ellipsoid,
}

impl ConeBlock {
    pub fn len(&self) -> usize {
        self.set.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

/// Problem structure shared by every solve; the per-solve data is the linear
/// term `f` and the constraint offset `o`.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    hessian: Mat,
    rows: Mat,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cones: Vec<ConeBlock>,
    /// Row equilibration factors; rows of a cone block share one factor.
    row_scale: Vec<f64>,
    cost_scale: f64,
    /// Cholesky factor of `c 2H + sigma I + rho A~^T A~`.
    factor: Mat,
    settings: QpSettings,
    /// Whether `rows[i]` belongs to a cone block.
    in_cone: Vec<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub u: Vec<f64>,
    /// Unscaled constraint multipliers, one per row.
    pub duals: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub status: SolveStatus,
    /// `U^T H U + 2 f^T U` (no constant term).
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Row multipliers: positive at an upper bound, negative at a lower bound,
    /// `2 mu P t` on cone rows.
    pub duals: Vec<f64>,
    /// Multiplier of each ellipsoid constraint `t^T P t <= eps`.
    pub cone_multipliers: Vec<f64>,
    pub polished: bool,
}

/// KKT residuals of a candidate primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual_sign)
    }
}

impl ConicProgram {
    /// `hessian` is `H` of `U^T H U`; `rows` the stacked constraint rows.
    /// Rows covered by a cone block must carry infinite box bounds.
    pub fn new(hessian: Mat, rows: Mat, lo: Vec<f64>, hi: Vec<f64>, cones: Vec<ConeBlock>, settings: QpSettings) -> Result<Self, LinalgError> {
        let dim = hessian.rows();
        if rows.cols() != dim || lo.len() != rows.rows() || hi.len() != rows.rows() {
            return Err(LinalgError::DimensionMismatch("conic program rows/bounds".into()));
        }
        let mut in_cone = vec![false; rows.rows()];
        for c in &cones {
            for i in c.range() {
                in_cone[i] = true;
            }
        }
        let mut row_scale: Vec<f64> = (0..rows.rows())
            .map(|i| {
                let nrm = rows.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if nrm > 0.0 {
                    1.0 / nrm
                } else {
                    1.0
                }
            })
            .collect();
        for c in &cones {
            let s = c.range().map(|i| row_scale[i]).fold(f64::INFINITY, f64::min);
            for i in c.range() {
                row_scale[i] = s;
            }
        }
        let diag_mean = (0..dim).map(|i| 2.0 * hessian[(i, i)]).sum::<f64>() / dim.max(1) as f64;
        let cost_scale = if diag_mean > 0.0 { 1.0 / diag_mean } else { 1.0 };

        let mut scaled_rows = rows.clone();
        for i in 0..rows.rows() {
            for j in 0..dim {
                scaled_rows[(i, j)] *= row_scale[i];
            }
        }
        let mut k = &hessian.scale(2.0 * cost_scale) + &Mat::identity(dim).scale(settings.sigma);
        k = &k + &(&scaled_rows.transpose() * &scaled_rows).scale(settings.rho);
        let factor = cholesky(&k.symmetrize())?;
        Ok(Self { hessian, rows, lo, hi, cones, row_scale, cost_scale, factor, settings, in_cone })
    }

    pub fn dim(&self) -> usize {
        self.hessian.rows()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.rows()
    }

    pub fn hessian(&self) -> &Mat {
        &self.hessian
    }

    pub fn rows(&self) -> &Mat {
        &self.rows
    }

    pub fn cones(&self) -> &[ConeBlock] {
        &self.cones
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn objective(&self, u: &[f64], f: &[f64]) -> f64 {
        self.hessian.quad_form(u) + 2.0 * crate::linalg::dot(f, u)
    }

    /// Largest violation of any constraint at `u` (cone rows measured as `t^T P t - eps`).
    pub fn violation(&self, u: &[f64], offset: &[f64]) -> f64 {
        let s = self.constraint_values(u, offset);
        let mut worst: f64 = 0.0;
        for i in 0..s.len() {
            if !self.in_cone[i] {
                worst = worst.max(self.lo[i] - s[i]).max(s[i] - self.hi[i]);
            }
        }
        for c in &self.cones {
            let t = &s[c.range()];
            worst = worst.max(c.set.value(t) - c.set.eps());
        }
        worst
    }

    fn constraint_values(&self, u: &[f64], offset: &[f64]) -> Vec<f64> {
        let mut s = self.rows.mul_vec(u);
        s.iter_mut().zip(offset).for_each(|(a, b)| *a += b);
        s
    }

    /// KKT residuals for a primal point with row multipliers `duals` and cone multipliers `mus`.
    pub fn kkt_residuals(&self, u: &[f64], f: &[f64], offset: &[f64], duals: &[f64], mus: &[f64]) -> KktResiduals {
        let mut grad = self.hessian.mul_vec(u);
        grad.iter_mut().zip(f).for_each(|(g, fi)| *g = 2.0 * *g + 2.0 * fi);
        let s = self.constraint_values(u, offset);
        let mut y = duals.to_vec();
        for (c, mu) in self.cones.iter().zip(mus) {
            let t = &s[c.range()];
            let pt = c.set.p().mul_vec(t);
            for (k, i) in c.range().enumerate() {
                y[i] = 2.0 * mu * pt[k];
            }
        }
        let aty = self.rows.tr_mul_vec(&y);
        let stationarity = grad.iter().zip(&aty).map(|(g, a)| (g + a).abs()).fold(0.0, f64::max);
        let primal = self.violation(u, offset).max(0.0);
        let mut complementarity: f64 = 0.0;
        let mut dual_sign: f64 = 0.0;
        for i in 0..s.len() {
            if self.in_cone[i] {
                continue;
            }
            if y[i] > 0.0 {
                complementarity = complementarity.max(y[i] * (self.hi[i] - s[i]).abs());
            } else if y[i] < 0.0 {
                complementarity = complementarity.max(-y[i] * (s[i] - self.lo[i]).abs());
            }
            if self.hi[i].is_infinite() {
                dual_sign = dual_sign.max(y[i]);
            }
            if self.lo[i].is_infinite() {
                dual_sign = dual_sign.max(-y[i]);
            }
        }
        for (c, mu) in self.cones.iter().zip(mus) {
            let t = &s[c.range()];
            complementarity = complementarity.max(mu * (c.set.value(t) - c.set.eps()).abs());
            dual_sign = dual_sign.max(-mu);
        }
        KktResiduals { stationarity, primal, complementarity, dual_sign }
    }

    pub fn solve(&self, f: &[f64], offset: &[f64], warm: Option<&WarmStart>) -> QpSolution {
        Admm::new(self, f, offset, warm).run(self.settings.max_iter)
    }

    /// As [`ConicProgram::solve`] but stopping after `max_iter` iterations.
    pub fn solve_limited(&self, f: &[f64], offset: &[f64], warm: Option<&WarmStart>, max_iter: usize) -> QpSolution {
        Admm::new(self, f, offset, warm).run(max_iter)
    }

    /// Projection of the scaled slack `v` onto the scaled constraint set.
    fn project(&self, v: &mut [f64], offset: &[f64]) {
        for i in 0..v.len() {
            if self.in_cone[i] {
                continue;
            }
            let d = self.row_scale[i];
            let lo = d * (self.lo[i] - offset[i]);
            let hi = d * (self.hi[i] - offset[i]);
            v[i] = v[i].clamp(lo, hi);
        }
        for c in &self.cones {
            let d = self.row_scale[c.start];
            let shifted: Vec<f64> = c.range().map(|i| v[i] / d + offset[i]).collect();
            let proj = c.set.project(&shifted);
            for (k, i) in c.range().enumerate() {
                v[i] = d * (proj[k] - offset[i]);
            }
        }
    }
}

struct Admm<'a> {
    prog: &'a ConicProgram,
    f: &'a [f64],
    offset: &'a [f64],
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

impl<'a> Admm<'a> {
    fn new(prog: &'a ConicProgram, f: &'a [f64], offset: &'a [f64], warm: Option<&WarmStart>) -> Self {
        let (dim, rows) = (prog.dim(), prog.num_rows());
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; rows];
        if let Some(w) = warm {
            if w.u.len() == dim {
                x.clone_from(&w.u);
            }
            if let Some(d) = w.duals.as_ref().filter(|d| d.len() == rows) {
                for i in 0..rows {
                    y[i] = d[i] * prog.cost_scale / prog.row_scale[i];
                }
            }
        }
        let mut z = prog.rows.mul_vec(&x);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi *= prog.row_scale[i];
        }
        prog.project(&mut z, offset);
        Self { prog, f, offset, x, z, y }
    }

    fn unscaled_duals(&self) -> Vec<f64> {
        let p = self.prog;
        self.y.iter().enumerate().map(|(i, yi)| yi * p.row_scale[i] / p.cost_scale).collect()
    }

    fn run(mut self, max_iter: usize) -> QpSolution {
        let p = self.prog;
        let s = p.settings;
        let (dim, rows) = (p.dim(), p.num_rows());
        let q_scaled: Vec<f64> = self.f.iter().map(|v| 2.0 * v * p.cost_scale).collect();
        let mut rhs = vec![0.0; dim];
        let mut y_prev = self.y.clone();
        let mut iterations = 0;
        let mut last = (f64::INFINITY, f64::INFINITY);

        if s.polish {
            if let Some(sol) = self.try_polish(0) {
                return sol;
            }
        }

        while iterations < max_iter {
            iterations += 1;
            // rhs = sigma x - q + A~^T (rho z - y)
            let mut v: Vec<f64> = (0..rows).map(|i| s.rho * self.z[i] - self.y[i]).collect();
            for (i, vi) in v.iter_mut().enumerate() {
                *vi *= p.row_scale[i];
            }
            let atv = p.rows.tr_mul_vec(&v);
            for j in 0..dim {
                rhs[j] = s.sigma * self.x[j] - q_scaled[j] + atv[j];
            }
            let x_tilde = cholesky_solve(&p.factor, &rhs);
            let mut z_tilde = p.rows.mul_vec(&x_tilde);
            for (i, zt) in z_tilde.iter_mut().enumerate() {
                *zt *= p.row_scale[i];
            }
            for j in 0..dim {
                self.x[j] = s.alpha * x_tilde[j] + (1.0 - s.alpha) * self.x[j];
            }
            y_prev.clone_from(&self.y);
            let relaxed: Vec<f64> = (0..rows).map(|i| s.alpha * z_tilde[i] + (1.0 - s.alpha) * self.z[i]).collect();
            let mut z_new: Vec<f64> = (0..rows).map(|i| relaxed[i] + self.y[i] / s.rho).collect();
            p.project(&mut z_new, self.offset);
            for i in 0..rows {
                self.y[i] += s.rho * (relaxed[i] - z_new[i]);
            }
            self.z = z_new;

            if iterations % s.check_every != 0 {
                continue;
            }
            let (rp, rd, converged) = self.residuals();
            last = (rp, rd);
            if converged {
                if s.polish {
                    if let Some(sol) = self.try_polish(iterations) {
                        return sol;
                    }
                }
                return self.finish(SolveStatus::Optimal, iterations, rp, rd);
            }
            if self.infeasibility_certificate(&y_prev) {
                return self.finish(SolveStatus::Infeasible, iterations, rp, rd);
            }
            if s.polish {
                if let Some(sol) = self.try_polish(iterations) {
                    return sol;
                }
            }
        }
        self.finish(SolveStatus::MaxIters, iterations, last.0, last.1)
    }

    /// Unscaled primal and dual residuals and the convergence verdict.
    fn residuals(&self) -> (f64, f64, bool) {
        let p = self.prog;
        let s = p.settings;
        let ax = p.rows.mul_vec(&self.x);
        let z_unscaled: Vec<f64> = self.z.iter().enumerate().map(|(i, z)| z / p.row_scale[i]).collect();
        let rp = ax.iter().zip(&z_unscaled).map(|(a, z)| (a - z).abs()).fold(0.0, f64::max);
        let y = self.unscaled_duals();
        let hx: Vec<f64> = p.hessian.mul_vec(&self.x).iter().map(|v| 2.0 * v).collect();
        let aty = p.rows.tr_mul_vec(&y);
        let q: Vec<f64> = self.f.iter().map(|v| 2.0 * v).collect();
        let rd = (0..p.dim()).map(|j| (hx[j] + q[j] + aty[j]).abs()).fold(0.0, f64::max);
        let eps_p = s.eps_abs + s.eps_rel * norm_inf(&ax).max(norm_inf(&z_unscaled));
        let eps_d = s.eps_abs + s.eps_rel * norm_inf(&hx).max(norm_inf(&aty)).max(norm_inf(&q));
        (rp, rd, rp <= eps_p && rd <= eps_d)
    }

    /// Primal infeasibility certificate from the dual increment `dy`:
    /// `A^T dy ~ 0` and the support function of the shifted set at `dy` negative.
    fn infeasibility_certificate(&self, y_prev: &[f64]) -> bool {
        let p = self.prog;
        let dy: Vec<f64> = self.y.iter().zip(y_prev).enumerate().map(|(i, (a, b))| (a - b) * p.row_scale[i] / p.cost_scale).collect();
        let nrm = norm_inf(&dy);
        if nrm <= 1e-300 {
            return false;
        }
        let tol = p.settings.eps_infeasible * nrm;
        if norm_inf(&p.rows.tr_mul_vec(&dy)) > tol {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            if p.in_cone[i] {
                continue;
            }
            let d = dy[i];
            if d > tol {
                if p.hi[i].is_infinite() {
                    return false;
                }
                support += (p.hi[i] - self.offset[i]) * d;
            } else if d < -tol {
                if p.lo[i].is_infinite() {
                    return false;
                }
                support += (p.lo[i] - self.offset[i]) * d;
            }
        }
        for c in &p.cones {
            let d: Vec<f64> = c.range().map(|i| dy[i]).collect();
            let sup = c.set.support(&d);
            if !sup.is_finite() {
                return false;
            }
            support += sup - c.range().map(|i| self.offset[i] * dy[i]).sum::<f64>();
        }
        support < -tol
    }

    fn finish(&self, status: SolveStatus, iterations: usize, rp: f64, rd: f64) -> QpSolution {
        let p = self.prog;
        let duals = self.unscaled_duals();
        let s = p.constraint_values(&self.x, self.offset);
        let cone_multipliers = p
            .cones
            .iter()
            .map(|c| {
                let t = &s[c.range()];
                let pt = c.set.p().mul_vec(t);
                let yb: Vec<f64> = c.range().map(|i| duals[i]).collect();
                let denom = 2.0 * crate::linalg::dot(&pt, &pt);
                if denom > 0.0 {
                    (crate::linalg::dot(&yb, &pt) * 2.0 / denom).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        QpSolution {
            objective: p.objective(&self.x, self.f),
            u: self.x.clone(),
            status,
            iterations,
            primal_residual: rp,
            dual_residual: rd,
            duals,
            cone_multipliers,
            polished: false,
        }
    }

    fn try_polish(&self, iterations: usize) -> Option<QpSolution> {
        let p = self.prog;
        let y = self.unscaled_duals();
        let z_unscaled: Vec<f64> = self.z.iter().enumerate().map(|(i, z)| z / p.row_scale[i] + self.offset[i]).collect();
        let mut active: Vec<Side> = (0..p.num_rows())
            .map(|i| {
                if p.in_cone[i] {
                    return Side::Free;
                }
                if z_unscaled[i] - p.lo[i] < -y[i] {
                    Side::Lower
                } else if p.hi[i] - z_unscaled[i] < y[i] {
                    Side::Upper
                } else {
                    Side::Free
                }
            })
            .collect();
        let mut cone_active: Vec<bool> = p.cones.iter().map(|c| c.range().any(|i| y[i].abs() > 0.0)).collect();
        let polisher = Polisher { prog: p, f: self.f, offset: self.offset };
        for _ in 0..6 {
            match polisher.attempt(&active, &cone_active) {
                Attempt::Certified(u, duals, mus) => {
                    let kkt = p.kkt_residuals(&u, self.f, self.offset, &duals, &mus);
                    return Some(QpSolution {
                        objective: p.objective(&u, self.f),
                        u,
                        status: SolveStatus::Optimal,
                        iterations,
                        primal_residual: kkt.primal,
                        dual_residual: kkt.stationarity,
                        duals,
                        cone_multipliers: mus,
                        polished: true,
                    });
                }
                Attempt::Refine(next_active, next_cones) => {
                    if next_active == active && next_cones == cone_active {
                        return None;
                    }
                    active = next_active;
                    cone_active = next_cones;
                }
                Attempt::Failed => return None,
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Free,
    Lower,
    Upper,
}

enum Attempt {
    Certified(Vec<f64>, Vec<f64>, Vec<f64>),
    Refine(Vec<Side>, Vec<bool>),
    Failed,
}

/// Equality-constrained KKT solves for a guessed active set.
struct Polisher<'a> {
    prog: &'a ConicProgram,
    f: &'a [f64],
    offset: &'a [f64],
}

struct KktSolve {
    u: Vec<f64>,
    lambda: Vec<f64>,
    lu: Lu,
}

const POLISH_FEAS_TOL: f64 = 1e-9;

impl<'a> Polisher<'a> {
    fn active_rows(active: &[Side]) -> Vec<usize> {
        active.iter().enumerate().filter(|(_, s)| **s != Side::Free).map(|(i, _)| i).collect()
    }

    /// Solves the KKT system for fixed cone multipliers `mus`.
    fn kkt(&self, act: &[usize], active: &[Side], mus: &[f64]) -> Option<KktSolve> {
        self.kkt_with(act, active, mus, 0.0).or_else(|| {
            let h = &self.prog.hessian;
            let reg = 1e-9 * h.trace().abs() / h.rows().max(1) as f64;
            self.kkt_with(act, active, mus, reg)
        })
    }

    /// KKT solve with `reg` added to the diagonal of `H`; a zero `reg` keeps the exact problem.
    fn kkt_with(&self, act: &[usize], active: &[Side], mus: &[f64], reg: f64) -> Option<KktSolve> {
        let p = self.prog;
        let dim = p.dim();
        let k = act.len();
        let mut mat = Mat::zeros(dim + k, dim + k);
        let mut h = (&p.hessian + &Mat::identity(dim).scale(reg)).scale(2.0);
        let mut rhs = vec![0.0; dim + k];
        for j in 0..dim {
            rhs[j] = -2.0 * self.f[j];
        }
        for (c, mu) in p.cones.iter().zip(mus) {
            if *mu == 0.0 {
                continue;
            }
            let ab = p.rows.block(c.start, 0, c.len(), dim);
            let pa = c.set.p() * &ab;
            h = &h + &(&ab.transpose() * &pa).scale(2.0 * mu);
            let ob: Vec<f64> = c.range().map(|i| self.offset[i]).collect();
            let g = pa.tr_mul_vec(&ob);
            for j in 0..dim {
                rhs[j] -= 2.0 * mu * g[j];
            }
        }
        mat.set_block(0, 0, &h);
        for (r, &i) in act.iter().enumerate() {
            let bound = if active[i] == Side::Lower { p.lo[i] } else { p.hi[i] };
            for j in 0..dim {
                mat[(dim + r, j)] = p.rows[(i, j)];
                mat[(j, dim + r)] = p.rows[(i, j)];
            }
            rhs[dim + r] = bound - self.offset[i];
        }
        let lu = Lu::new(&mat).ok()?;
        let sol = lu.solve_vec(&rhs);
        Some(KktSolve { u: sol[..dim].to_vec(), lambda: sol[dim..].to_vec(), lu })
    }

    fn cone_gap(&self, c: &ConeBlock, u: &[f64]) -> (f64, Vec<f64>) {
        let t: Vec<f64> = c.range().map(|i| crate::linalg::dot(self.prog.rows.row(i), u) + self.offset[i]).collect();
        (c.set.value(&t) - c.set.eps(), t)
    }

    /// `d/dmu_b` of the gap of cone `b` at the current solve.
    fn gap_derivative(&self, sol: &KktSolve, b: usize) -> f64 {
        let p = self.prog;
        let dim = p.dim();
        let c = &p.cones[b];
        let (_, t) = self.cone_gap(c, &sol.u);
        let ab = p.rows.block(c.start, 0, c.len(), dim);
        let pt = c.set.p().mul_vec(&t);
        let grad_u = ab.tr_mul_vec(&pt);
        let mut rhs = vec![0.0; sol.lu.dim()];
        for j in 0..dim {
            rhs[j] = -2.0 * grad_u[j];
        }
        let du = sol.lu.solve_vec(&rhs);
        let adu = ab.mul_vec(&du[..dim]);
        2.0 * crate::linalg::dot(&pt, &adu)
    }

    /// Scalar multiplier search for cone `b`, others held fixed.
    fn solve_cone(&self, act: &[usize], active: &[Side], mus: &mut [f64], b: usize) -> Option<()> {
        let c = &self.prog.cones[b];
        let eps = c.set.eps();
        let tol = 1e-12 * eps.max(1e-300);
        mus[b] = 0.0;
        let sol = self.kkt(act, active, mus)?;
        if self.cone_gap(c, &sol.u).0 <= 0.0 {
            return Some(());
        }
        let scale = self.prog.hessian.max_abs().max(1e-12) / c.set.p().max_abs().max(1e-300);
        let mut lo = 0.0;
        let mut hi = scale;
        loop {
            mus[b] = hi;
            let sol = self.kkt(act, active, mus)?;
            if self.cone_gap(c, &sol.u).0 <= 0.0 {
                break;
            }
            lo = hi;
            hi *= 4.0;
            if hi > 1e14 * scale {
                return None;
            }
        }
        let mut mu = hi;
        for _ in 0..100 {
            mus[b] = mu;
            let sol = self.kkt(act, active, mus)?;
            let g = self.cone_gap(c, &sol.u).0;
            if g.abs() <= tol {
                return Some(());
            }
            if g > 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            let d = self.gap_derivative(&sol, b);
            let newton = if d < 0.0 { mu - g / d } else { f64::NAN };
            mu = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else if lo > 0.0 && hi / lo > 1e3 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * hi {
                mus[b] = hi;
                return Some(());
            }
        }
        mus[b] = hi;
        Some(())
    }

    fn attempt(&self, active: &[Side], cone_active: &[bool]) -> Attempt {
        let p = self.prog;
        let act = Self::active_rows(active);
        if act.len() > p.dim() {
            return Attempt::Failed;
        }
        let mut mus = vec![0.0; p.cones.len()];
        // Gauss-Seidel sweeps over the active cones.
        let sweeps = if cone_active.iter().filter(|a| **a).count() > 1 { 50 } else { 1 };
        for _ in 0..sweeps {
            for b in 0..p.cones.len() {
                if cone_active[b] && self.solve_cone(&act, active, &mut mus, b).is_none() {
                    return Attempt::Failed;
                }
            }
            if sweeps > 1 {
                let Some(sol) = self.kkt(&act, active, &mus) else { return Attempt::Failed };
                let settled = p.cones.iter().enumerate().all(|(b, c)| {
                    let g = self.cone_gap(c, &sol.u).0;
                    !cone_active[b] || (mus[b] == 0.0 && g <= 0.0) || g.abs() <= 1e-11 * c.set.eps()
                });
                if settled {
                    break;
                }
            }
        }
        let Some(sol) = self.kkt(&act, active, &mus) else { return Attempt::Failed };
        let u = sol.u;
        let s = p.constraint_values(&u, self.offset);

        let mut duals = vec![0.0; p.num_rows()];
        for (r, &i) in act.iter().enumerate() {
            duals[i] = sol.lambda[r];
        }
        let mut next_active = active.to_vec();
        let mut ok = true;
        for i in 0..s.len() {
            if p.in_cone[i] {
                continue;
            }
            let tol_lo = POLISH_FEAS_TOL * (1.0 + p.lo[i].abs().min(1e300));
            let tol_hi = POLISH_FEAS_TOL * (1.0 + p.hi[i].abs().min(1e300));
            match active[i] {
                Side::Free => {
                    if s[i] < p.lo[i] - tol_lo {
                        next_active[i] = Side::Lower;
                        ok = false;
                    } else if s[i] > p.hi[i] + tol_hi {
                        next_active[i] = Side::Upper;
                        ok = false;
                    }
                }
                Side::Upper => {
                    if duals[i] < -1e-10 * (1.0 + norm_inf(self.f)) {
                        next_active[i] = Side::Free;
                        ok = false;
                    }
                }
                Side::Lower => {
                    if duals[i] > 1e-10 * (1.0 + norm_inf(self.f)) {
                        next_active[i] = Side::Free;
                        ok = false;
                    }
                }
            }
        }
        let mut next_cones = cone_active.to_vec();
        for (b, c) in p.cones.iter().enumerate() {
            let t = &s[c.range()];
            let gap = c.set.value(t) - c.set.eps();
            if gap > 1e-10 * c.set.eps() {
                next_cones[b] = true;
                ok = false;
            }
            if cone_active[b] && mus[b] == 0.0 {
                next_cones[b] = false;
            }
            if mus[b] > 0.0 {
                let pt = c.set.p().mul_vec(t);
                for (k, i) in c.range().enumerate() {
                    duals[i] = 2.0 * mus[b] * pt[k];
                }
            }
        }
        if ok {
            Attempt::Certified(u, duals, mus)
        } else {
            Attempt::Refine(next_active, next_cones)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_program(h: Mat, lo: Vec<f64>, hi: Vec<f64>) -> ConicProgram {
        let n = h.rows();
        ConicProgram::new(h, Mat::identity(n), lo, hi, Vec::new(), QpSettings::default()).unwrap()
    }

    #[test]
    fn unconstrained_matches_normal_equations() {
        let h = Mat::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let prog = box_program(h.clone(), vec![f64::NEG_INFINITY; 2], vec![f64::INFINITY; 2]);
        let f = [1.0, -2.0];
        let sol = prog.solve(&f, &[0.0, 0.0], None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let exact = crate::linalg::solve_linear(&h, &Mat::column(&[-1.0, 2.0])).unwrap();
        assert!((sol.u[0] - exact[(0, 0)]).abs() < 1e-9 && (sol.u[1] - exact[(1, 0)]).abs() < 1e-9);
    }

    #[test]
    fn box_active_solution() {
        // min (u0 - 3)^2 + (u1 + 1)^2 on [-1, 1]^2 -> (1, -1)
        let prog = box_program(Mat::identity(2), vec![-1.0; 2], vec![1.0; 2]);
        let sol = prog.solve(&[-3.0, 1.0], &[0.0, 0.0], None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.u[0] - 1.0).abs() < 1e-12 && (sol.u[1] + 1.0).abs() < 1e-12);
        let kkt = prog.kkt_residuals(&sol.u, &[-3.0, 1.0], &[0.0, 0.0], &sol.duals, &sol.cone_multipliers);
        assert!(kkt.max() < 1e-9, "{kkt:?}");
        assert!(sol.duals[0] > 0.0);
    }

    #[test]
    fn ellipsoid_constraint_active() {
        // min ||u - (3, 0)||^2 s.t. ||u||^2 <= 1 -> (1, 0)
        let cone = ConeBlock { start: 0, set: Ellipsoid::new(&Mat::identity(2), 1.0).unwrap() };
        let prog = ConicProgram::new(
            Mat::identity(2),
            Mat::identity(2),
            vec![f64::NEG_INFINITY; 2],
            vec![f64::INFINITY; 2],
            vec![cone],
            QpSettings::default(),
        )
        .unwrap();
        let f = [-3.0, 0.0];
        let sol = prog.solve(&f, &[0.0, 0.0], None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.u[0] - 1.0).abs() < 1e-9 && sol.u[1].abs() < 1e-9);
        assert!((sol.cone_multipliers[0] - 2.0).abs() < 1e-6);
        let kkt = prog.kkt_residuals(&sol.u, &f, &[0.0, 0.0], &sol.duals, &sol.cone_multipliers);
        assert!(kkt.max() < 1e-8, "{kkt:?}");
    }

    #[test]
    fn infeasible_box_and_ball() {
        // u0 >= 2 but ||u||^2 <= 1.
        let cone = ConeBlock { start: 1, set: Ellipsoid::new(&Mat::identity(2), 1.0).unwrap() };
        let rows = Mat::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let prog = ConicProgram::new(
            Mat::identity(2),
            rows,
            vec![2.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            vec![f64::INFINITY; 3],
            vec![cone],
            QpSettings::default(),
        )
        .unwrap();
        let sol = prog.solve(&[0.0, 0.0], &[0.0; 3], None);
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn without_polish_admm_still_converges() {
        let settings = QpSettings { polish: false, ..QpSettings::default() };
        let prog = ConicProgram::new(Mat::identity(2), Mat::identity(2), vec![-1.0; 2], vec![1.0; 2], Vec::new(), settings).unwrap();
        let sol = prog.solve(&[-3.0, 1.0], &[0.0, 0.0], None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(!sol.polished);
        assert!((sol.u[0] - 1.0).abs() < 1e-6 && (sol.u[1] + 1.0).abs() < 1e-6);
    }
}
