use crate::linalg::{dot, sym_eig, LinalgError, Mat};

/// The set `{x : x^T P x <= eps}` with a cached eigen-decomposition of `P`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    p: Mat,
    eps: f64,
    eigvals: Vec<f64>,
    eigvecs: Mat,
}

/// Relative accuracy of the boundary condition after projection.
const BOUNDARY_TOL: f64 = 1e-10;

impl Ellipsoid {
    pub fn new(p: &Mat, eps: f64) -> Result<Self, LinalgError> {
        let (eigvals, eigvecs) = sym_eig(p)?;
        if eigvals.first().is_some_and(|l| *l <= 0.0) {
            return Err(LinalgError::NotPositiveDefinite { index: 0, pivot: eigvals[0] });
        }
        Ok(Self { p: p.clone(), eps, eigvals, eigvecs })
    }

    pub fn p(&self) -> &Mat {
        &self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.p.quad_form(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.value(x) <= self.eps
    }

    /// Support function `max_{x in E} d^T x = sqrt(eps d^T P^-1 d)`.
    pub fn support(&self, d: &[f64]) -> f64 {
        if self.eps.is_infinite() {
            return if d.iter().all(|v| *v == 0.0) { 0.0 } else { f64::INFINITY };
        }
        let w = self.eigvecs.tr_mul_vec(d);
        let q: f64 = w.iter().zip(&self.eigvals).map(|(wi, l)| wi * wi / l).sum();
        (self.eps * q).sqrt()
    }

    /// Euclidean projection onto the ellipsoid.
    ///
    /// Outside points map to `x(mu) = V (I + mu L)^-1 V^T z` with `mu >= 0`
    /// chosen so that `x(mu)` lies on the boundary. `g(mu) = x^T P x - eps`
    /// is convex and decreasing, so Newton from `mu = 0` approaches the root
    /// monotonically from the left.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        if self.eps.is_infinite() || self.value(z) <= self.eps {
            return z.to_vec();
        }
        let w = self.eigvecs.tr_mul_vec(z);
        let g = |mu: f64| -> (f64, f64) {
            let mut val = -self.eps;
            let mut der = 0.0;
            for (wi, l) in w.iter().zip(&self.eigvals) {
                let d = 1.0 + mu * l;
                let t = l * wi * wi / (d * d);
                val += t;
                der -= 2.0 * t * l / d;
            }
            (val, der)
        };
        let mut mu = 0.0;
        for _ in 0..500 {
            let (val, der) = g(mu);
            if val.abs() <= BOUNDARY_TOL * self.eps || der == 0.0 {
                break;
            }
            let next = mu - val / der;
            if !(next > mu) {
                break;
            }
            mu = next;
        }
        let scaled: Vec<f64> = w.iter().zip(&self.eigvals).map(|(wi, l)| wi / (1.0 + mu * l)).collect();
        self.eigvecs.mul_vec(&scaled)
    }
}

/// Projection of `z` onto `{x : x^T P x <= eps}`.
pub fn project_ellipsoid(z: &[f64], p: &Mat, eps: f64) -> Result<Vec<f64>, LinalgError> {
    Ok(Ellipsoid::new(p, eps)?.project(z))
}

/// Residual of the projection optimality conditions at a boundary point `x`
/// projected from `z`: `x - z + mu P x = 0` for the best `mu >= 0`.
pub fn projection_kkt_residual(z: &[f64], x: &[f64], p: &Mat) -> f64 {
    let px = p.mul_vec(x);
    let diff: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
    let denom = dot(&px, &px);
    let mu = if denom > 0.0 { dot(&diff, &px) / denom } else { 0.0 };
    diff.iter().zip(&px).map(|(d, pxi)| (d - mu * pxi).abs()).fold(0.0, f64::max)
}
