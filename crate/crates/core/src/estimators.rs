//! Constrained min-norm least squares for both tasks, and exact risks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sample_standard_gaussian, MinNormSolver, Matrix, Selector, Vector, DEFAULT_REL_TOL};
use crate::model::CoordinateLayout;

/// θ̂ = Q_Sᵀ Z_S⁺ v; zero off S.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceFit {
    pub theta_hat: Vector,
}

/// β̂ with β̂_T = θ̂_T, β̂_Z = 0 and β̂_F the min-norm fit of the residual.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFit {
    pub beta_hat: Vector,
}

pub fn fit_source(z: &Matrix, v: &Vector, s: &Selector) -> Result<SourceFit> {
    if v.len() != z.nrows() {
        return Err(Error::DimensionMismatch(format!("Z has {} rows but v has length {}", z.nrows(), v.len())));
    }
    let z_s = s.select_columns(z)?;
    let w = MinNormSolver::new(&z_s, DEFAULT_REL_TOL)?.solve(v)?;
    Ok(SourceFit { theta_hat: s.embed(&w)? })
}

/// Factorizes X_F once; `fit` can then be called for several transfer sets T
/// that share the same F (e.g. with and without transfer).
#[derive(Clone, Debug)]
pub struct TargetSolver<'a> {
    x: &'a Matrix,
    y: &'a Vector,
    f: Selector,
    solver: MinNormSolver,
}

impl<'a> TargetSolver<'a> {
    pub fn new(x: &'a Matrix, y: &'a Vector, f: &Selector) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!("X has {} rows but y has length {}", x.nrows(), y.len())));
        }
        let x_f = f.select_columns(x)?;
        let solver = MinNormSolver::new(&x_f, DEFAULT_REL_TOL)?;
        Ok(Self { x, y, f: f.clone(), solver })
    }

    /// β̂ = Q_Fᵀ X_F⁺ (y − X_T θ̂_T) + Q_Tᵀ θ̂_T. `t` must be disjoint from F.
    pub fn fit(&self, source: &SourceFit, t: &Selector) -> Result<TargetFit> {
        let d = self.x.ncols();
        if source.theta_hat.len() != d || t.ambient_dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "θ̂ has length {} and T lives in dimension {}, X has {d} columns",
                source.theta_hat.len(),
                t.ambient_dim()
            )));
        }
        if !t.is_disjoint(&self.f) {
            return Err(Error::InvalidLayout("T overlaps F".into()));
        }
        let mut residual = self.y.clone();
        for &c in t.coords() {
            residual.axpy(-source.theta_hat[c - 1], &self.x.column(c - 1), 1.0);
        }
        let w = self.solver.solve(&residual)?;
        let mut beta_hat = self.f.embed(&w)?;
        for &c in t.coords() {
            beta_hat[c - 1] = source.theta_hat[c - 1];
        }
        Ok(TargetFit { beta_hat })
    }
}

pub fn fit_target(x: &Matrix, y: &Vector, source: &SourceFit, layout: &CoordinateLayout) -> Result<TargetFit> {
    if x.ncols() != layout.d() {
        return Err(Error::DimensionMismatch(format!("X has {} columns, layout has d = {}", x.ncols(), layout.d())));
    }
    TargetSolver::new(x, y, layout.f())?.fit(source, layout.t())
}

/// E(zᵀθ̂ − v)² over a fresh pair = σ_ξ² + ‖θ̂ − θ‖².
pub fn source_risk(theta_hat: &Vector, theta: &Vector, sigma_xi_sq: f64) -> Result<f64> {
    excess_risk(theta_hat, theta, sigma_xi_sq)
}

/// E(xᵀβ̂ − y)² over a fresh pair = σ_ε² + ‖β̂ − β‖².
pub fn target_risk(beta_hat: &Vector, beta: &Vector, sigma_eps_sq: f64) -> Result<f64> {
    excess_risk(beta_hat, beta, sigma_eps_sq)
}

fn excess_risk(estimate: &Vector, truth: &Vector, noise_var: f64) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {}, truth has length {}",
            estimate.len(),
            truth.len()
        )));
    }
    Ok(noise_var + (estimate - truth).norm_squared())
}

/// Averages (xᵀ estimate − y)² over `pairs` fresh Gaussian test pairs.
/// An unbiased but noisy alternative to the exact risk identities.
pub fn test_pair_risk<R: Rng + ?Sized>(
    estimate: &Vector,
    truth: &Vector,
    noise_var: f64,
    pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch("estimate and truth differ in length".into()));
    }
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one test pair".into()));
    }
    let diff = estimate - truth;
    let sd = noise_var.max(0.0).sqrt();
    let x = sample_standard_gaussian(pairs, estimate.len(), rng);
    let noise = sample_standard_gaussian(pairs, 1, rng);
    let pred_err = &x * &diff;
    let total: f64 = pred_err.iter().zip(noise.iter()).map(|(e, n)| (e - sd * n).powi(2)).sum();
    Ok(total / pairs as f64)
}
