//! SAT penalty assembly: the penalized matrices Q-tilde (advection) and
//! A-tilde (heat), their modified forcing maps, and the stability /
//! dual-consistency classification of penalty choices.

use crate::grid::Grid;
use crate::matrix::DenseMatrix;
use crate::operators::{FirstVariant, SbpFirstOp, SbpSecondOp, SecondVariant};

/// Tolerance under which a duality defect counts as zero.
pub const DUAL_TOL: f64 = 1e-12;

/// Penalty for the advection scheme: a single inflow parameter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SatFirst {
    pub sigma_l: f64,
}

impl SatFirst {
    pub fn new(sigma_l: f64) -> Self {
        Self { sigma_l }
    }

    /// The dual-consistent choice sigma_L = -1.
    pub fn dual_consistent() -> Self {
        Self { sigma_l: -1.0 }
    }
}

/// Stability / duality verdict for the advection penalty.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FirstVerdict {
    pub stable: bool,
    pub dual_consistent: bool,
}

/// Energy stability needs sigma_L <= -1/2; dual consistency sigma_L = -1.
pub fn stability_first(sat: &SatFirst) -> FirstVerdict {
    FirstVerdict {
        stable: sat.sigma_l <= -0.5,
        dual_consistent: (sat.sigma_l + 1.0).abs() <= DUAL_TOL,
    }
}

/// Robin penalty parameters for the heat scheme. The boundary
/// conditions are `alpha_L u - beta_L u_x = g_L` at x = 0 and
/// `alpha_R u + beta_R u_x = g_R` at x = ell.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SatSecond {
    pub sigma_l: f64,
    pub sigma_r: f64,
    pub tau_l: f64,
    pub tau_r: f64,
    pub alpha_l: f64,
    pub alpha_r: f64,
    pub beta_l: f64,
    pub beta_r: f64,
}

impl SatSecond {
    /// Dirichlet data on both sides (alpha = 1, beta = 0).
    pub fn dirichlet(sigma: f64, tau: f64) -> Self {
        Self {
            sigma_l: sigma,
            sigma_r: sigma,
            tau_l: tau,
            tau_r: tau,
            alpha_l: 1.0,
            alpha_r: 1.0,
            beta_l: 0.0,
            beta_r: 0.0,
        }
    }

    /// Neumann data on both sides (alpha = 0, beta = 1).
    pub fn neumann(sigma: f64, tau: f64) -> Self {
        Self {
            sigma_l: sigma,
            sigma_r: sigma,
            tau_l: tau,
            tau_r: tau,
            alpha_l: 0.0,
            alpha_r: 0.0,
            beta_l: 1.0,
            beta_r: 1.0,
        }
    }

    /// Duality defects, recomputed from the parameters each call.
    pub fn delta_l(&self) -> f64 {
        1.0 + self.sigma_l * self.beta_l - self.tau_l * self.alpha_l
    }

    pub fn delta_r(&self) -> f64 {
        1.0 + self.sigma_r * self.beta_r - self.tau_r * self.alpha_r
    }

    pub fn dual_consistent(&self) -> bool {
        self.delta_l().abs() <= DUAL_TOL && self.delta_r().abs() <= DUAL_TOL
    }
}

/// Assembled steady operator `K` with its norm and forcing map.
#[derive(Debug, Clone)]
pub struct AssembledFirst {
    pub variant: FirstVariant,
    pub grid: Grid,
    pub sat: SatFirst,
    /// K = Q - sigma_L e_L e_L^T.
    pub k: DenseMatrix,
    pub h_diag: Vec<f64>,
}

impl AssembledFirst {
    /// Modified forcing: `f - H^{-1} sigma_L e_L g_L`.
    pub fn forcing(&self, f: &[f64], g_l: f64) -> Vec<f64> {
        let mut out = f.to_vec();
        out[0] -= self.sat.sigma_l * g_l / self.h_diag[0];
        out
    }
}

/// Assembles the penalized advection matrix.
pub fn assemble_first(op: &SbpFirstOp, sat: SatFirst) -> AssembledFirst {
    let mut k = op.q.clone();
    k[(0, 0)] -= sat.sigma_l;
    AssembledFirst {
        variant: op.variant,
        grid: op.grid.clone(),
        sat,
        k,
        h_diag: op.h_diag.clone(),
    }
}

/// Assembled heat operator; keeps the pieces of the underlying bundle
/// needed by the inverse construction.
#[derive(Debug, Clone)]
pub struct AssembledSecond {
    pub variant: SecondVariant,
    pub grid: Grid,
    pub sat: SatSecond,
    /// The penalized matrix A-tilde.
    pub k: DenseMatrix,
    pub h_diag: Vec<f64>,
    pub a: DenseMatrix,
    pub dl: Vec<f64>,
    pub dr: Vec<f64>,
}

impl AssembledSecond {
    /// Modified forcing:
    /// `f - H^{-1}(sigma_L e_L - tau_L d_L) g_L - H^{-1}(sigma_R e_R + tau_R d_R) g_R`.
    pub fn forcing(&self, f: &[f64], g_l: f64, g_r: f64) -> Vec<f64> {
        let n = self.grid.n();
        let mut out = f.to_vec();
        for i in 0..out.len() {
            let mut sat_i = 0.0;
            if i == 0 {
                sat_i += self.sat.sigma_l * g_l;
            }
            sat_i -= self.sat.tau_l * self.dl[i] * g_l;
            if i == n {
                sat_i += self.sat.sigma_r * g_r;
            }
            sat_i += self.sat.tau_r * self.dr[i] * g_r;
            out[i] -= sat_i / self.h_diag[i];
        }
        out
    }
}

/// Assembles the penalized heat matrix from its rank-one pieces.
pub fn assemble_second(op: &SbpSecondOp, sat: SatSecond) -> AssembledSecond {
    let np = op.num_nodes();
    let el = op.e_l();
    let er = op.e_r();
    let mut k = op.a.clone();

    let add_outer = |coeff: f64, u: &[f64], v: &[f64], k: &mut DenseMatrix| {
        if coeff == 0.0 {
            return;
        }
        for i in 0..np {
            if u[i] == 0.0 {
                continue;
            }
            for j in 0..np {
                k[(i, j)] += coeff * u[i] * v[j];
            }
        }
    };

    // Left boundary: subtract
    //   sigma_L alpha_L e_L e_L^T - (1 + sigma_L beta_L) e_L d_L^T
    //   - tau_L alpha_L d_L e_L^T + tau_L beta_L d_L d_L^T.
    add_outer(-sat.sigma_l * sat.alpha_l, &el, &el, &mut k);
    add_outer(1.0 + sat.sigma_l * sat.beta_l, &el, &op.dl, &mut k);
    add_outer(sat.tau_l * sat.alpha_l, &op.dl, &el, &mut k);
    add_outer(-sat.tau_l * sat.beta_l, &op.dl, &op.dl, &mut k);

    // Right boundary: subtract
    //   sigma_R alpha_R e_R e_R^T + (1 + sigma_R beta_R) e_R d_R^T
    //   + tau_R alpha_R d_R e_R^T + tau_R beta_R d_R d_R^T.
    add_outer(-sat.sigma_r * sat.alpha_r, &er, &er, &mut k);
    add_outer(-(1.0 + sat.sigma_r * sat.beta_r), &er, &op.dr, &mut k);
    add_outer(-sat.tau_r * sat.alpha_r, &op.dr, &er, &mut k);
    add_outer(-sat.tau_r * sat.beta_r, &op.dr, &op.dr, &mut k);

    AssembledSecond {
        variant: op.variant,
        grid: op.grid.clone(),
        sat,
        k,
        h_diag: op.h_diag.clone(),
        a: op.a.clone(),
        dl: op.dl.clone(),
        dr: op.dr.clone(),
    }
}

/// Per-side evaluation of the three heat stability inequalities in
/// their borrowing-limit form:
///   sigma*alpha <= 0,
///   tau*beta <= 1/xi_T,
///   delta^2 <= -4*alpha*(sigma/xi_T + tau).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SideStability {
    pub penalty_sign: bool,
    pub borrowing_bound: bool,
    pub coupling: bool,
}

impl SideStability {
    pub fn all(&self) -> bool {
        self.penalty_sign && self.borrowing_bound && self.coupling
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SecondVerdict {
    pub left: SideStability,
    pub right: SideStability,
    pub dual_consistent: bool,
    pub stable: bool,
}

fn side_stability(sigma: f64, tau: f64, alpha: f64, beta: f64, delta: f64, xi_t: f64) -> SideStability {
    let slack = |bound: f64| 1e-12 * (1.0 + bound.abs());
    let penalty_sign = sigma * alpha <= slack(0.0);
    let borrowing_bound = tau * beta <= 1.0 / xi_t + slack(1.0 / xi_t);
    let rhs = -4.0 * alpha * (sigma / xi_t + tau);
    let coupling = delta * delta <= rhs + slack(rhs);
    SideStability {
        penalty_sign,
        borrowing_bound,
        coupling,
    }
}

/// Evaluates the heat stability inequalities at a given boundary
/// capacity `xi_t` (from the inverse construction or the borrowing
/// route; this module does not recompute it).
pub fn stability_second(sat: &SatSecond, xi_t: f64) -> SecondVerdict {
    assert!(xi_t > 0.0, "xi_T must be positive");
    let left = side_stability(
        sat.sigma_l,
        sat.tau_l,
        sat.alpha_l,
        sat.beta_l,
        sat.delta_l(),
        xi_t,
    );
    let right = side_stability(
        sat.sigma_r,
        sat.tau_r,
        sat.alpha_r,
        sat.beta_r,
        sat.delta_r(),
        xi_t,
    );
    SecondVerdict {
        left,
        right,
        dual_consistent: sat.dual_consistent(),
        stable: left.all() && right.all(),
    }
}

/// The pre-substitution form of the stability inequalities, taking a
/// user-supplied borrowing amount `h*gamma` instead of `1/xi_T`:
///   2*sigma*alpha <= 0,
///   2*(tau*beta - h*gamma) <= 0,
///   (1 + tau*alpha + sigma*beta)^2 <= 4*sigma*alpha*(tau*beta - h*gamma).
pub fn stability_second_with_gamma(sat: &SatSecond, h_gamma: f64) -> SecondVerdict {
    let side = |sigma: f64, tau: f64, alpha: f64, beta: f64| {
        let slack = |bound: f64| 1e-12 * (1.0 + bound.abs());
        let penalty_sign = 2.0 * sigma * alpha <= slack(0.0);
        let borrowing_bound = 2.0 * (tau * beta - h_gamma) <= slack(h_gamma);
        let lhs = 1.0 + tau * alpha + sigma * beta;
        let rhs = 4.0 * sigma * alpha * (tau * beta - h_gamma);
        let coupling = lhs * lhs <= rhs + slack(rhs);
        SideStability {
            penalty_sign,
            borrowing_bound,
            coupling,
        }
    };
    let left = side(sat.sigma_l, sat.tau_l, sat.alpha_l, sat.beta_l);
    let right = side(sat.sigma_r, sat.tau_r, sat.alpha_r, sat.beta_r);
    SecondVerdict {
        left,
        right,
        dual_consistent: sat.dual_consistent(),
        stable: left.all() && right.all(),
    }
}
