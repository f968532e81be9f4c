//! Damped Gauss-Newton fusion of a local prior with weighted range constraints.
//!
//! The cost minimized per UAV is
//!
//! ```text
//! 1/2 (p - p~)^T S~^-1 (p - p~) + 1/2 sum_j w_j r_j(p)^2,   w_j = omega_j / sigma_j^2
//! r_j(p) = ||p - p_j|| - d_j
//! ```
//!
//! Each step solves the 3x3 system `(H + eps I) delta = g`, and the refined
//! covariance is `(H + eps I)^-1` from the last normal matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cov3, Estimate, Mat3, UavId, Vec3};
use crate::trust::RangeObservation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborConstraint {
    pub id: UavId,
    /// Position reported by the neighbor.
    pub p_j: Vec3,
    pub obs: RangeObservation,
    /// Influence weight; zero removes the constraint.
    pub omega: f64,
}

impl NeighborConstraint {
    /// Normal-equation weight `omega / sigma_d^2`.
    pub fn weight(&self) -> f64 {
        self.omega / (self.obs.sigma_d() * self.obs.sigma_d())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub max_iters: usize,
    pub damping: f64,
    /// Stop once `||delta|| < step_tol` (meters).
    pub step_tol: f64,
    /// Floor on the distance used to normalize the range direction.
    pub min_dist: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iters: 5,
            damping: 1e-6,
            step_tol: 1e-4,
            min_dist: 1e-6,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        for (name, v) in [
            ("damping", self.damping),
            ("step_tol", self.step_tol),
            ("min_dist", self.min_dist),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// `||p - p_j|| - d_hat`
pub fn residual(p: Vec3, c: &NeighborConstraint) -> f64 {
    p.distance(c.p_j) - c.obs.d_hat()
}

/// Linearized direction of the range residual at `p`.
fn range_direction(p: Vec3, p_j: Vec3, min_dist: f64) -> Vec3 {
    let d = p - p_j;
    let n = d.norm();
    if n == 0.0 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        d.scale(1.0 / n.max(min_dist))
    }
}

/// One damped Gauss-Newton step. Returns the update and the undamped normal
/// matrix `H` it was computed from. Constraints with zero weight are skipped.
pub fn gauss_newton_step(
    p: Vec3,
    prior_pos: Vec3,
    prior_info: &Mat3,
    constraints: &[NeighborConstraint],
    params: &SolverParams,
) -> Result<(Vec3, Mat3)> {
    let mut h = *prior_info;
    let mut g = prior_info.mul_vec(prior_pos - p);
    for c in constraints {
        let w = c.weight();
        if w == 0.0 {
            continue;
        }
        let u = range_direction(p, c.p_j, params.min_dist);
        let r = residual(p, c);
        h += u.outer(u).scale(w);
        g = g - u.scale(w * r);
    }
    let damped = h.add_diag(params.damping);
    let chol = damped
        .cholesky()
        .ok_or(Error::Solver { matrix: damped })?;
    Ok((chol.solve(g), h))
}

/// Result of [`refine_position`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub estimate: Estimate,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates [`gauss_newton_step`] from the prior position.
pub fn refine_position(
    prior: &Estimate,
    constraints: &[NeighborConstraint],
    params: &SolverParams,
) -> Result<Refinement> {
    params.validate()?;
    let prior_info = prior.covariance.inverse();
    let mut p = prior.position;
    let mut h = prior_info;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..params.max_iters {
        let (delta, normal) = gauss_newton_step(p, prior.position, &prior_info, constraints, params)?;
        p += delta;
        h = normal;
        iterations += 1;
        if delta.norm() < params.step_tol {
            converged = true;
            break;
        }
    }
    if !p.is_finite() {
        return Err(Error::Solver { matrix: h });
    }
    let damped = h.add_diag(params.damping);
    let covariance = damped
        .cholesky()
        .map(|c| c.inverse())
        .and_then(|m| Cov3::new(m).ok())
        .ok_or(Error::Solver { matrix: damped })?;
    Ok(Refinement {
        estimate: Estimate::new(p, covariance),
        iterations,
        converged,
    })
}

/// The weighted cost minimized by [`refine_position`], evaluated at `p`.
pub fn weighted_cost(p: Vec3, prior: &Estimate, constraints: &[NeighborConstraint]) -> f64 {
    let e = p - prior.position;
    let prior_term = 0.5 * e.dot(prior.covariance.inverse().mul_vec(e));
    let range_term: f64 = constraints
        .iter()
        .map(|c| 0.5 * c.weight() * residual(p, c).powi(2))
        .sum();
    prior_term + range_term
}
