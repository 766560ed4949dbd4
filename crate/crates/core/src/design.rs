//! Offline synthesis: terminal weight, stabilizing and deadbeat gains,
//! terminal ellipsoid level and the multi-input decoupling transform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, cholesky, dot, inverse, kron, mat_pow, norm2, solve_linear, spectral_radius_below_one, LinalgError, Mat, DEFAULT_DOUBLINGS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("pair (A, B) is not controllable (controllability rank {rank} < {n})")]
    NotControllable { rank: usize, n: usize },
    #[error("closed-loop matrix is not certified contractive")]
    NotContractive,
    #[error("supplied gain is not stabilizing: rho(A - BK) < 1 certificate failed")]
    NotStabilizing,
    #[error("control horizon must be greater than or equal to the system dimension (N = {horizon}, n = {n})")]
    HorizonTooShort { horizon: usize, n: usize },
    #[error("{0} must be positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("Riccati iteration did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("terminal level is unbounded: no constraint restricts the ellipsoid")]
    Unbounded,
    #[error("degenerate constraint set: {0}")]
    Degenerate(String),
    #[error("decoupled form violates block structure: {0}")]
    StructureViolation(String),
}

/// Discrete-time plant `x+ = A x + B u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    a: Mat,
    b: Mat,
}

/// Tolerance for rank decisions on controllability and decoupling.
pub const INDEPENDENCE_TOL: f64 = 1e-9;

impl LinearSystem {
    /// Builds the plant and checks that `(A, B)` is controllable.
    pub fn new(a: Mat, b: Mat) -> Result<Self, DesignError> {
        if !a.is_square() || b.rows() != a.rows() || b.cols() == 0 {
            return Err(DesignError::InvalidInput(format!(
                "A must be n x n and B n x m, got {}x{} and {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(DesignError::InvalidInput("non-finite plant entries".into()));
        }
        let sys = Self { a, b };
        let rank = linalg::rank(&sys.controllability_matrix(), INDEPENDENCE_TOL);
        if rank < sys.n() {
            return Err(DesignError::NotControllable { rank, n: sys.n() });
        }
        Ok(sys)
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    /// `[B, AB, ..., A^(n-1) B]`.
    pub fn controllability_matrix(&self) -> Mat {
        let mut blocks = Vec::with_capacity(self.n());
        let mut cur = self.b.clone();
        for _ in 0..self.n() {
            let next = &self.a * &cur;
            blocks.push(cur);
            cur = next;
        }
        Mat::hstack(&blocks.iter().collect::<Vec<_>>())
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let ax = self.a.mul_vec(x);
        let bu = self.b.mul_vec(u);
        ax.iter().zip(&bu).map(|(a, b)| a + b).collect()
    }
}

/// Elementwise bounds on states and inputs. Unbounded sides are `±inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraintSet {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
}

impl BoxConstraintSet {
    pub fn new(x_lo: Vec<f64>, x_hi: Vec<f64>, u_lo: Vec<f64>, u_hi: Vec<f64>) -> Result<Self, DesignError> {
        if x_lo.len() != x_hi.len() || u_lo.len() != u_hi.len() {
            return Err(DesignError::InvalidInput("bound vectors differ in length".into()));
        }
        for (name, lo, hi) in [("x", &x_lo, &x_hi), ("u", &u_lo, &u_hi)] {
            for (i, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
                if l.is_nan() || h.is_nan() || l > h {
                    return Err(DesignError::InvalidInput(format!("{name}[{i}]: lower bound exceeds upper")));
                }
                if !(*l < 0.0 && *h > 0.0) {
                    return Err(DesignError::Degenerate(format!("origin is not interior to the {name}[{i}] bounds [{l}, {h}]")));
                }
            }
        }
        Ok(Self { x_lo, x_hi, u_lo, u_hi })
    }

    /// Symmetric input bounds `|u_i| <= u_max[i]`, states unbounded.
    pub fn input_only(n: usize, u_max: &[f64]) -> Result<Self, DesignError> {
        Self::new(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n], u_max.iter().map(|u| -u).collect(), u_max.to_vec())
    }

    pub fn unbounded(n: usize, m: usize) -> Self {
        Self { x_lo: vec![f64::NEG_INFINITY; n], x_hi: vec![f64::INFINITY; n], u_lo: vec![f64::NEG_INFINITY; m], u_hi: vec![f64::INFINITY; m] }
    }

    pub fn n(&self) -> usize {
        self.x_lo.len()
    }

    pub fn m(&self) -> usize {
        self.u_lo.len()
    }

    /// Largest violation of the state bounds by `x` (zero when inside).
    pub fn state_violation(&self, x: &[f64]) -> f64 {
        violation(x, &self.x_lo, &self.x_hi)
    }

    pub fn input_violation(&self, u: &[f64]) -> f64 {
        violation(u, &self.u_lo, &self.u_hi)
    }
}

fn violation(v: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    v.iter().zip(lo.iter().zip(hi)).fold(0.0, |w, (x, (l, h))| w.max(l - x).max(x - h))
}

/// Offline artifacts for one single-input (or per-block) receding-horizon controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerDesign {
    pub horizon: usize,
    pub q: Mat,
    pub r: Mat,
    /// Terminal feedback `u = -K x`.
    pub k: Mat,
    /// Terminal weight solving the closed-loop Lyapunov equation.
    pub p: Mat,
    /// Deadbeat gain; present for single-input plants.
    pub k_db: Option<Mat>,
    /// Terminal set level: `x^T P x <= eps`.
    pub eps: f64,
}

impl ControllerDesign {
    /// `Q + K^T R K`.
    pub fn stage_weight(&self) -> Mat {
        &self.q + &(&(&self.k.transpose() * &self.r) * &self.k)
    }
}

/// Solves `Acl^T P Acl - P = -W` through the vectorized Kronecker system.
pub fn solve_discrete_lyapunov(acl: &Mat, w: &Mat) -> Result<Mat, DesignError> {
    let n = acl.rows();
    if !acl.is_square() || w.rows() != n || w.cols() != n {
        return Err(DesignError::InvalidInput("Lyapunov operands must be square and conformant".into()));
    }
    if !spectral_radius_below_one(acl, DEFAULT_DOUBLINGS) {
        return Err(DesignError::NotContractive);
    }
    let at = acl.transpose();
    let lhs = &Mat::identity(n * n) - &kron(&at, &at);
    let rhs = Mat::column(w.as_slice());
    let vec_p = solve_linear(&lhs, &rhs)?;
    Ok(Mat::from_vec(n, n, vec_p.into_vec()).symmetrize())
}

/// Deadbeat gain `K_db = e1^T S^-1 A^n` with `S = [A^(n-1) b, ..., A b, b]`.
pub fn deadbeat_gain(sys: &LinearSystem) -> Result<Mat, DesignError> {
    if sys.m() != 1 {
        return Err(DesignError::InvalidInput("deadbeat gain needs a single-input plant".into()));
    }
    let n = sys.n();
    let mut s = Mat::zeros(n, n);
    let mut v = sys.b().clone();
    for j in (0..n).rev() {
        s.set_block(0, j, &v);
        v = sys.a() * &v;
    }
    let s_inv = inverse(&s)?;
    let first_row = s_inv.block(0, 0, 1, n);
    Ok(&first_row * &mat_pow(sys.a(), n))
}

/// Result of the discrete Riccati fixed-point iteration.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub k: Mat,
    pub p: Mat,
    pub iterations: usize,
}

/// LQR gain `K = (R + B^T P B)^-1 B^T P A` from the Riccati recursion started at `P = Q`.
pub fn riccati_gain(sys: &LinearSystem, q: &Mat, r: &Mat, max_iter: usize, tol: f64) -> Result<Mat, DesignError> {
    Ok(riccati(sys, q, r, max_iter, tol)?.k)
}

pub fn riccati(sys: &LinearSystem, q: &Mat, r: &Mat, max_iter: usize, tol: f64) -> Result<RiccatiSolution, DesignError> {
    check_weights(sys, q, r)?;
    let (a, b) = (sys.a(), sys.b());
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for it in 1..=max_iter {
        let (_, next) = riccati_update(a, b, &at, &bt, q, r, &p)?;
        let diff = (&next - &p).frobenius_norm();
        let scale = p.frobenius_norm();
        p = next;
        if diff <= tol * scale {
            let (k, _) = riccati_update(a, b, &at, &bt, q, r, &p)?;
            return Ok(RiccatiSolution { k, p, iterations: it });
        }
    }
    Err(DesignError::NoConvergence { iterations: max_iter })
}

fn riccati_update(a: &Mat, b: &Mat, at: &Mat, bt: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<(Mat, Mat), DesignError> {
    let btp = bt * p;
    let gram = r + &(&btp * b);
    let k = solve_linear(&gram, &(&btp * a))?;
    let atp = at * p;
    let next = &(q + &(&atp * a)) - &(&(&atp * b) * &k);
    Ok((k, next.symmetrize()))
}

pub const RICCATI_MAX_ITER: usize = 10_000;
pub const RICCATI_TOL: f64 = 1e-10;

fn check_weights(sys: &LinearSystem, q: &Mat, r: &Mat) -> Result<(), DesignError> {
    if q.rows() != sys.n() || q.cols() != sys.n() || r.rows() != sys.m() || r.cols() != sys.m() {
        return Err(DesignError::InvalidInput("weight dimensions do not match the plant".into()));
    }
    cholesky(q).map_err(|_| DesignError::NotPositiveDefinite("Q"))?;
    cholesky(r).map_err(|_| DesignError::NotPositiveDefinite("R"))?;
    Ok(())
}

/// Largest level `eps` with `{x^T P x <= eps}` inside the state box and
/// `-K {x^T P x <= eps}` inside the input box.
///
/// Each constraint becomes a symmetric slab `|a^T x| <= c`, with `c` the
/// nearer bound for asymmetric boxes; the level is then
/// `min c^2 / (a^T P^-1 a)` over all slabs.
pub fn terminal_level(p: &Mat, k: &Mat, bounds: &BoxConstraintSet) -> Result<f64, DesignError> {
    let n = p.rows();
    if bounds.n() != n || k.cols() != n || k.rows() != bounds.m() {
        return Err(DesignError::InvalidInput("terminal_level operand dimensions".into()));
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rows.push((e, slab_half_width(bounds.x_lo[i], bounds.x_hi[i])?));
    }
    for i in 0..k.rows() {
        rows.push((k.row(i).to_vec(), slab_half_width(bounds.u_lo[i], bounds.u_hi[i])?));
    }
    let p_inv = inverse(p)?;
    let mut eps = f64::INFINITY;
    for (a, c) in rows {
        if !c.is_finite() || a.iter().all(|v| *v == 0.0) {
            continue;
        }
        let spread = p_inv.quad_form(&a);
        eps = eps.min(c * c / spread);
    }
    if eps.is_infinite() {
        return Err(DesignError::Unbounded);
    }
    Ok(eps)
}

fn slab_half_width(lo: f64, hi: f64) -> Result<f64, DesignError> {
    if !(lo < 0.0 && hi > 0.0) {
        return Err(DesignError::Degenerate(format!("origin not interior to [{lo}, {hi}]")));
    }
    Ok(lo.abs().min(hi.abs()))
}

/// Block upper-triangular coordinates `z = M x` obtained from a
/// Luenberger-style controllability-index column selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledForm {
    /// `z = M x`.
    pub m: Mat,
    /// `M^-1`, whose columns are the selected controllability vectors.
    pub m_inv: Mat,
    pub f: Mat,
    pub g: Mat,
    /// Number of inputs that contribute directions.
    pub q: usize,
    pub block_dims: Vec<usize>,
    /// Physical input index driving each block, in block order.
    pub active_inputs: Vec<usize>,
}

impl DecoupledForm {
    pub fn block_offset(&self, j: usize) -> usize {
        self.block_dims[..j].iter().sum()
    }

    /// Diagonal block `F_jj` and its input column `g_j`.
    pub fn block(&self, j: usize) -> (Mat, Mat) {
        let off = self.block_offset(j);
        let nj = self.block_dims[j];
        let fjj = self.f.block(off, off, nj, nj);
        let gj = self.g.block(off, self.active_inputs[j], nj, 1);
        (fjj, gj)
    }

    pub fn inactive_inputs(&self, m: usize) -> Vec<usize> {
        (0..m).filter(|l| !self.active_inputs.contains(l)).collect()
    }
}

pub fn decouple(sys: &LinearSystem) -> Result<DecoupledForm, DesignError> {
    let (n, m) = (sys.n(), sys.m());
    if m < 2 {
        return Err(DesignError::InvalidInput("decoupling needs a multi-input plant".into()));
    }
    // Orthonormal basis of the selected span, used only for independence tests.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut selected: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut block_dims = Vec::new();
    let mut active_inputs = Vec::new();
    for j in 0..m {
        let mut v = sys.b().col(j);
        let mut count = 0;
        while selected.len() < n {
            let scale = norm2(&v);
            let mut resid = v.clone();
            // Two Gram-Schmidt passes for stability.
            for _ in 0..2 {
                for e in &basis {
                    let c = dot(&resid, e);
                    resid.iter_mut().zip(e).for_each(|(r, ei)| *r -= c * ei);
                }
            }
            let rn = norm2(&resid);
            if scale == 0.0 || rn <= INDEPENDENCE_TOL * scale {
                break;
            }
            basis.push(resid.iter().map(|r| r / rn).collect());
            selected.push(v.clone());
            count += 1;
            v = sys.a().mul_vec(&v);
        }
        if count > 0 {
            block_dims.push(count);
            active_inputs.push(j);
        }
    }
    if selected.len() < n {
        return Err(DesignError::NotControllable { rank: selected.len(), n });
    }
    let mut m_inv = Mat::zeros(n, n);
    for (c, v) in selected.iter().enumerate() {
        m_inv.set_block(0, c, &Mat::column(v));
    }
    let m_mat = inverse(&m_inv)?;
    let f = &(&m_mat * sys.a()) * &m_inv;
    let g = &m_mat * sys.b();
    let form = DecoupledForm { m: m_mat, m_inv, f, g, q: active_inputs.len(), block_dims, active_inputs };
    check_structure(&form)?;
    Ok(form)
}

fn check_structure(form: &DecoupledForm) -> Result<(), DesignError> {
    let f_tol = INDEPENDENCE_TOL * form.f.frobenius_norm().max(f64::MIN_POSITIVE);
    let g_tol = INDEPENDENCE_TOL * form.g.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut offending = Vec::new();
    for (bj, _) in form.block_dims.iter().enumerate() {
        let col0 = form.block_offset(bj);
        let cols = form.block_dims[bj];
        for bi in (bj + 1)..form.q {
            let row0 = form.block_offset(bi);
            for i in row0..row0 + form.block_dims[bi] {
                for c in col0..col0 + cols {
                    if form.f[(i, c)].abs() > f_tol {
                        offending.push(format!("F[{i},{c}]={:e}", form.f[(i, c)]));
                    }
                }
                let gc = form.active_inputs[bj];
                if form.g[(i, gc)].abs() > g_tol {
                    offending.push(format!("G[{i},{gc}]={:e}", form.g[(i, gc)]));
                }
            }
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(DesignError::StructureViolation(offending.join(", ")))
    }
}

/// Offline design for a single-input plant (or one decoupled block).
///
/// Uses `k_opt` when given (after certifying `rho(A - BK) < 1`), otherwise the
/// LQR gain. The deadbeat gain is only computed for single-input plants.
pub fn build_design(
    sys: &LinearSystem,
    bounds: &BoxConstraintSet,
    horizon: usize,
    q: &Mat,
    r: &Mat,
    k_opt: Option<&Mat>,
) -> Result<ControllerDesign, DesignError> {
    let n = sys.n();
    if horizon < n {
        return Err(DesignError::HorizonTooShort { horizon, n });
    }
    if bounds.n() != n || bounds.m() != sys.m() {
        return Err(DesignError::InvalidInput("constraint dimensions do not match the plant".into()));
    }
    check_weights(sys, q, r)?;
    let k = match k_opt {
        Some(k) => {
            if k.rows() != sys.m() || k.cols() != n {
                return Err(DesignError::InvalidInput("gain must be m x n".into()));
            }
            if !spectral_radius_below_one(&closed_loop(sys, k), DEFAULT_DOUBLINGS) {
                return Err(DesignError::NotStabilizing);
            }
            k.clone()
        }
        None => riccati_gain(sys, q, r, RICCATI_MAX_ITER, RICCATI_TOL)?,
    };
    let w = q + &(&(&k.transpose() * r) * &k);
    let p = solve_discrete_lyapunov(&closed_loop(sys, &k), &w)?;
    let k_db = if sys.m() == 1 { Some(deadbeat_gain(sys)?) } else { None };
    let eps = terminal_level(&p, &k, bounds)?;
    Ok(ControllerDesign { horizon, q: q.clone(), r: r.clone(), k, p, k_db, eps })
}

pub fn closed_loop(sys: &LinearSystem, k: &Mat) -> Mat {
    sys.a() - &(sys.b() * k)
}

/// Numerical certificates attached to a produced design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub lyapunov_residual: f64,
    pub nilpotency_residual: Option<f64>,
    pub invariance_samples: usize,
    pub invariance_failures: usize,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Number of boundary samples used by the sampled terminal-set checks.
pub const INVARIANCE_SAMPLES: usize = 256;

/// Boundary points of `{x^T P x = eps}` along deterministic pseudo-random directions.
pub fn ellipsoid_boundary_samples(p: &Mat, eps: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, DesignError> {
    let n = p.rows();
    let l = cholesky(p)?;
    let lt = l.transpose();
    let lu = linalg::Lu::new(&lt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(unit_sphere_samples(&mut rng, n, count).into_iter().map(|d| lu.solve_vec(&d).into_iter().map(|v| v * eps.sqrt()).collect()).collect())
}

/// Checks the Lyapunov residual, deadbeat nilpotency and sampled terminal-set invariance.
pub fn validate_design(sys: &LinearSystem, bounds: &BoxConstraintSet, design: &ControllerDesign) -> Result<ValidationReport, DesignError> {
    let mut failures = Vec::new();
    let acl = closed_loop(sys, &design.k);
    let w = design.stage_weight();
    let resid = &(&(&(&acl.transpose() * &design.p) * &acl) - &design.p) + &w;
    let lyapunov_residual = resid.frobenius_norm();
    if lyapunov_residual > 1e-8 * design.p.frobenius_norm() {
        failures.push(format!("Lyapunov residual {lyapunov_residual:e} exceeds 1e-8 ||P||"));
    }
    let nilpotency_residual = match &design.k_db {
        Some(kdb) => {
            let r = mat_pow(&closed_loop(sys, kdb), sys.n()).frobenius_norm();
            let bound = 1e-8 * sys.a().frobenius_norm().powi(sys.n() as i32).max(1.0);
            if r > bound {
                failures.push(format!("deadbeat nilpotency residual {r:e} exceeds {bound:e}"));
            }
            Some(r)
        }
        None => None,
    };
    let mut invariance_failures = 0;
    let samples = if design.eps.is_finite() { ellipsoid_boundary_samples(&design.p, design.eps, INVARIANCE_SAMPLES, 7)? } else { Vec::new() };
    for x in &samples {
        let u: Vec<f64> = design.k.mul_vec(x).iter().map(|v| -v).collect();
        let next = acl.mul_vec(x);
        let decrease = design.eps - w.quad_form(x) + 1e-9;
        let ok = bounds.input_violation(&u) <= 1e-9 && bounds.state_violation(x) <= 1e-9 && design.p.quad_form(&next) <= decrease;
        if !ok {
            invariance_failures += 1;
        }
    }
    if invariance_failures > 0 {
        failures.push(format!("{invariance_failures} terminal-set invariance samples failed"));
    }
    Ok(ValidationReport {
        lyapunov_residual,
        nilpotency_residual,
        invariance_samples: samples.len(),
        invariance_failures,
        passed: failures.is_empty(),
        failures,
    })
}

/// Per-block designs for a multi-input plant in decoupled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiInputDesign {
    pub horizon: usize,
    pub decoupled: DecoupledForm,
    pub blocks: Vec<ControllerDesign>,
    /// Common factor applied to every block level so the product of the
    /// block ellipsoids fits the physical state box.
    pub level_shrink: f64,
}

/// Builds the decoupled form and one terminal design per active block.
///
/// `q_blocks[j]` is `n_j x n_j`; `r_blocks[j]` is `1 x 1`.
pub fn build_multi_input_design(
    sys: &LinearSystem,
    bounds: &BoxConstraintSet,
    horizon: usize,
    q_blocks: &[Mat],
    r_blocks: &[Mat],
) -> Result<MultiInputDesign, DesignError> {
    let dec = decouple(sys)?;
    if q_blocks.len() != dec.q || r_blocks.len() != dec.q {
        return Err(DesignError::InvalidInput(format!("expected {} block weights, got {} Q and {} R", dec.q, q_blocks.len(), r_blocks.len())));
    }
    let z_bounds = interval_image(&dec.m, &bounds.x_lo, &bounds.x_hi);
    let mut blocks = Vec::with_capacity(dec.q);
    for j in 0..dec.q {
        let (fjj, gj) = dec.block(j);
        let block_sys = LinearSystem::new(fjj, gj)?;
        let off = dec.block_offset(j);
        let nj = dec.block_dims[j];
        let input = dec.active_inputs[j];
        let block_box = BoxConstraintSet::new(
            z_bounds.0[off..off + nj].to_vec(),
            z_bounds.1[off..off + nj].to_vec(),
            vec![bounds.u_lo[input]],
            vec![bounds.u_hi[input]],
        )?;
        blocks.push(build_design(&block_sys, &block_box, horizon, &q_blocks[j], &r_blocks[j], None)?);
    }
    let level_shrink = product_shrink_factor(&dec, &blocks, bounds)?;
    for b in &mut blocks {
        b.eps *= level_shrink;
    }
    Ok(MultiInputDesign { horizon, decoupled: dec, blocks, level_shrink })
}

/// Interval-arithmetic image of the box `[lo, hi]` under `x -> M x`.
pub fn interval_image(m: &Mat, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out_lo = vec![0.0; m.rows()];
    let mut out_hi = vec![0.0; m.rows()];
    for i in 0..m.rows() {
        for (k, c) in m.row(i).iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let (a, b) = (c * lo[k], c * hi[k]);
            out_lo[i] += a.min(b);
            out_hi[i] += a.max(b);
        }
    }
    (out_lo, out_hi)
}

/// Exact common factor `s <= 1` such that scaling every block level by `s`
/// puts the product of block ellipsoids inside the physical state box.
fn product_shrink_factor(dec: &DecoupledForm, blocks: &[ControllerDesign], bounds: &BoxConstraintSet) -> Result<f64, DesignError> {
    let p_invs: Vec<Mat> = blocks.iter().map(|b| inverse(&b.p)).collect::<Result<_, _>>()?;
    let mut s: f64 = 1.0;
    for i in 0..bounds.n() {
        let c = bounds.x_lo[i].abs().min(bounds.x_hi[i].abs());
        if !c.is_finite() {
            continue;
        }
        let row = dec.m_inv.row(i);
        let support: f64 = (0..dec.q)
            .map(|j| {
                let off = dec.block_offset(j);
                let t = &row[off..off + dec.block_dims[j]];
                (blocks[j].eps * p_invs[j].quad_form(t)).sqrt()
            })
            .sum();
        if support > 0.0 {
            s = s.min((c / support).powi(2));
        }
    }
    Ok(s)
}

/// Unit directions with normally distributed components, normalized.
fn unit_sphere_samples<R: Rng>(rng: &mut R, n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = norm2(&v);
        if norm > 1e-12 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}
