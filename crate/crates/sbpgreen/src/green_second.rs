//! Inverses of the penalized heat matrix A-tilde under general Robin
//! penalties, and the boundary-capacity scalars that control both the
//! inverse and the stability limits.

use num_bigint::BigInt;
use num_traits::Zero;

use crate::error::{Error, Result, SingularCondition};
use crate::exact::{exact_div, rational_to_f64, Precision, QuadInt, Rational};
use crate::grid::Grid;
use crate::linalg::{rank_deficient, LuFactors};
use crate::matrix::{dot, DenseMatrix};
use crate::operators::{SbpSecondOp, SecondVariant};
use crate::sat::{assemble_second, AssembledSecond, SatSecond};

/// Boundary capacity scalars:
///   xi_L = -d_L^T b_L, xi_R = d_R^T b_R, xi_C = d_L^T b_R.
/// `xi_t` is xi_LR + |xi_C|, defined only when the closures are
/// equivalent (xi_L = xi_R).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct XiScalars {
    pub xi_l: f64,
    pub xi_r: f64,
    pub xi_c: f64,
    xi_t: Option<f64>,
}

impl XiScalars {
    pub fn from_contractions(xi_l: f64, xi_r: f64, xi_c: f64) -> Self {
        let scale = xi_l.abs().max(xi_r.abs()).max(1.0);
        let xi_t = if (xi_l - xi_r).abs() <= 1e-10 * scale {
            Some(0.5 * (xi_l + xi_r) + xi_c.abs())
        } else {
            None
        };
        Self {
            xi_l,
            xi_r,
            xi_c,
            xi_t,
        }
    }

    /// Total capacity xi_T; refuses for non-equivalent closures.
    pub fn total(&self) -> Result<f64> {
        self.xi_t.ok_or(Error::NotCentrosymmetric)
    }
}

/// Interior pieces shared by the inverse and the capacity scalars.
struct InteriorParts {
    g2: DenseMatrix,
    b_l: Vec<f64>,
    b_r: Vec<f64>,
    xi: XiScalars,
}

fn interior_parts(
    a: &DenseMatrix,
    dl: &[f64],
    dr: &[f64],
    grid: &Grid,
) -> Result<InteriorParts> {
    let np = grid.num_nodes();
    let n = grid.n();
    let ell = grid.ell();
    let abar = a.block(1, n, 1, n);
    let abar_inv = LuFactors::new(&abar)
        .map_err(|_| Error::SingularAbar)?
        .inverse();

    let mut g2 = DenseMatrix::zeros(np, np);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            g2[(i + 1, j + 1)] = abar_inv[(i, j)];
        }
    }

    let x = grid.nodes();
    let g2_dl = g2.matvec(dl);
    let g2_dr = g2.matvec(dr);
    let b_l: Vec<f64> = (0..np).map(|i| 1.0 - x[i] / ell - g2_dl[i]).collect();
    let b_r: Vec<f64> = (0..np).map(|i| x[i] / ell + g2_dr[i]).collect();

    let xi_l = -dot(dl, &b_l);
    let xi_r = dot(dr, &b_r);
    let xi_c = dot(dl, &b_r);
    let xi_c_alt = -dot(dr, &b_l);
    let scale = xi_l.abs().max(xi_r.abs()).max(1.0 / grid.h());
    debug_assert!(
        (xi_c - xi_c_alt).abs() <= 1e-9 * scale,
        "xi_C contraction mismatch: {xi_c} vs {xi_c_alt}"
    );

    // Alternative form xi_LR = 1/ell + d^T G2 d; both routes must agree.
    let alt_l = 1.0 / ell + dot(dl, &g2_dl);
    let alt_r = 1.0 / ell + dot(dr, &g2_dr);
    debug_assert!((alt_l - xi_l).abs() <= 1e-9 * scale, "{alt_l} vs {xi_l}");
    debug_assert!((alt_r - xi_r).abs() <= 1e-9 * scale, "{alt_r} vs {xi_r}");

    Ok(InteriorParts {
        g2,
        b_l,
        b_r,
        xi: XiScalars::from_contractions(xi_l, xi_r, xi_c),
    })
}

/// Capacity scalars of a second-derivative bundle.
pub fn xi_scalars(op: &SbpSecondOp) -> Result<XiScalars> {
    Ok(interior_parts(&op.a, &op.dl, &op.dr, &op.grid)?.xi)
}

/// The 4x4 coupling matrix of the inverse formula:
/// rows couple the penalty directions (b_L, b_R) and the two linear
/// boundary modes (1 - x/ell, x/ell).
pub fn sigma_matrix(sat: &SatSecond, xi: &XiScalars, ell: f64) -> DenseMatrix {
    let mut s = DenseMatrix::zeros(4, 4);
    s[(0, 0)] = sat.sigma_l + sat.tau_l * xi.xi_l;
    s[(0, 1)] = -sat.tau_r * xi.xi_c;
    s[(1, 0)] = -sat.tau_l * xi.xi_c;
    s[(1, 1)] = sat.sigma_r + sat.tau_r * xi.xi_r;
    s[(2, 0)] = sat.delta_l();
    s[(2, 2)] = sat.alpha_l + sat.beta_l / ell;
    s[(2, 3)] = -sat.beta_l / ell;
    s[(3, 1)] = sat.delta_r();
    s[(3, 2)] = -sat.beta_r / ell;
    s[(3, 3)] = sat.alpha_r + sat.beta_r / ell;
    s
}

fn det3(m: &DenseMatrix, r: [usize; 3], c: [usize; 3]) -> f64 {
    m[(r[0], c[0])] * (m[(r[1], c[1])] * m[(r[2], c[2])] - m[(r[1], c[2])] * m[(r[2], c[1])])
        - m[(r[0], c[1])] * (m[(r[1], c[0])] * m[(r[2], c[2])] - m[(r[1], c[2])] * m[(r[2], c[0])])
        + m[(r[0], c[2])] * (m[(r[1], c[0])] * m[(r[2], c[1])] - m[(r[1], c[1])] * m[(r[2], c[0])])
}

/// Determinant and adjugate-based inverse of a 4x4 matrix; the system
/// is tiny and fixed-size, so no factorization is warranted.
fn inverse4(m: &DenseMatrix, det_threshold: f64) -> Option<(f64, DenseMatrix)> {
    let rows = |skip: usize| -> [usize; 3] {
        let mut out = [0; 3];
        let mut k = 0;
        for r in 0..4 {
            if r != skip {
                out[k] = r;
                k += 1;
            }
        }
        out
    };
    let mut det = 0.0;
    for j in 0..4 {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[(0, j)] * det3(m, rows(0), rows(j));
    }
    if det.abs() <= det_threshold {
        return None;
    }
    let mut inv = DenseMatrix::zeros(4, 4);
    for i in 0..4 {
        for j in 0..4 {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // Adjugate: cofactor of (j, i).
            inv[(i, j)] = sign * det3(m, rows(j), rows(i)) / det;
        }
    }
    Some((det, inv))
}

/// Analytic singularity classification of the coupling matrix.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SingularityVerdict {
    pub singular: bool,
    /// Boundary-condition determinant
    /// (alpha_L + beta_L/ell)(alpha_R + beta_R/ell) - beta_L beta_R/ell^2.
    pub bc_det: f64,
    pub bc_fires: bool,
    /// Penalty determinant
    /// (sigma_L + tau_L xi_L)(sigma_R + tau_R xi_R) - tau_L tau_R xi_C^2.
    pub penalty_det: f64,
    pub penalty_fires: bool,
    /// Witness for the penalty locus
    /// sigma_L = -(xi_L + zeta |xi_C|) tau_L, when recoverable.
    pub zeta: Option<f64>,
}

impl SingularityVerdict {
    pub fn condition(&self) -> Option<SingularCondition> {
        if self.bc_fires {
            Some(SingularCondition::Bc)
        } else if self.penalty_fires {
            Some(SingularCondition::Penalty)
        } else {
            None
        }
    }
}

/// Evaluates the two singularity conditions of the coupling matrix.
pub fn singularity_check(sat: &SatSecond, xi: &XiScalars, ell: f64) -> SingularityVerdict {
    let bc_l = sat.alpha_l + sat.beta_l / ell;
    let bc_r = sat.alpha_r + sat.beta_r / ell;
    let bc_det = bc_l * bc_r - sat.beta_l * sat.beta_r / (ell * ell);
    let bc_scale = (sat.alpha_l.abs() + sat.beta_l.abs() / ell)
        * (sat.alpha_r.abs() + sat.beta_r.abs() / ell)
        + (sat.beta_l * sat.beta_r).abs() / (ell * ell);
    let bc_fires = bc_det.abs() <= 1e-9 * bc_scale.max(1e-300);

    let pen_l = sat.sigma_l + sat.tau_l * xi.xi_l;
    let pen_r = sat.sigma_r + sat.tau_r * xi.xi_r;
    let penalty_det = pen_l * pen_r - sat.tau_l * sat.tau_r * xi.xi_c * xi.xi_c;
    let pen_scale = (sat.sigma_l.abs() + (sat.tau_l * xi.xi_l).abs())
        * (sat.sigma_r.abs() + (sat.tau_r * xi.xi_r).abs())
        + (sat.tau_l * sat.tau_r * xi.xi_c * xi.xi_c).abs();
    let penalty_fires = penalty_det.abs() <= 1e-9 * pen_scale.max(1e-300);

    let zeta = if penalty_fires && sat.tau_l != 0.0 && xi.xi_c.abs() > 0.0 {
        Some(-(sat.sigma_l / sat.tau_l + xi.xi_l) / xi.xi_c.abs())
    } else {
        None
    };

    SingularityVerdict {
        singular: bc_fires || penalty_fires,
        bc_det,
        bc_fires,
        penalty_det,
        penalty_fires,
        zeta,
    }
}

/// Analytic verdict plus the numerical rank witness on the assembled
/// matrix. The two must agree; a disagreement is surfaced, not hidden.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SingularityReport {
    pub verdict: SingularityVerdict,
    pub rank_deficient: bool,
    pub agree: bool,
}

pub fn singularity_check_with_witness(
    op: &SbpSecondOp,
    sat: &SatSecond,
) -> Result<SingularityReport> {
    let xi = xi_scalars(op)?;
    let verdict = singularity_check(sat, &xi, op.grid.ell());
    let sys = assemble_second(op, *sat);
    let deficient = rank_deficient(&sys.k);
    Ok(SingularityReport {
        verdict,
        rank_deficient: deficient,
        agree: verdict.singular == deficient,
    })
}

/// The assembled inverse of A-tilde and its structural parts.
#[derive(Debug, Clone)]
pub struct GreenSecond {
    pub g2: DenseMatrix,
    pub b_l: Vec<f64>,
    pub b_r: Vec<f64>,
    pub xi: XiScalars,
    pub sigma: DenseMatrix,
    pub sigma_det: f64,
    pub kinv: DenseMatrix,
}

impl GreenSecond {
    pub fn residual(&self, k: &DenseMatrix) -> f64 {
        k.residual_vs_identity(&self.kinv)
    }
}

/// General Robin inverse:
/// `Kinv = G2 + [-tau_L b_L, -tau_R b_R, 1-x/ell, x/ell] Sigma^{-1}
///              [b_L^T; b_R^T; beta_L (1-x/ell)^T; beta_R x^T/ell]`.
pub fn invert_general_second(sys: &AssembledSecond) -> Result<GreenSecond> {
    let grid = &sys.grid;
    let np = grid.num_nodes();
    let ell = grid.ell();
    let parts = interior_parts(&sys.a, &sys.dl, &sys.dr, grid)?;
    let sat = &sys.sat;

    let sigma = sigma_matrix(sat, &parts.xi, ell);
    let threshold = 1e-12 * sigma.norm_inf();
    let Some((det, sigma_inv)) = inverse4(&sigma, threshold) else {
        let verdict = singularity_check(sat, &parts.xi, ell);
        let condition = verdict.condition().unwrap_or(SingularCondition::Penalty);
        return Err(Error::SingularSigma { condition });
    };

    let x = grid.nodes();
    // Left factor: (n+1) x 4.
    let mut lf = DenseMatrix::zeros(np, 4);
    for i in 0..np {
        lf[(i, 0)] = -sat.tau_l * parts.b_l[i];
        lf[(i, 1)] = -sat.tau_r * parts.b_r[i];
        lf[(i, 2)] = 1.0 - x[i] / ell;
        lf[(i, 3)] = x[i] / ell;
    }
    // Right factor: 4 x (n+1).
    let mut rf = DenseMatrix::zeros(4, np);
    for j in 0..np {
        rf[(0, j)] = parts.b_l[j];
        rf[(1, j)] = parts.b_r[j];
        rf[(2, j)] = sat.beta_l * (1.0 - x[j] / ell);
        rf[(3, j)] = sat.beta_r * x[j] / ell;
    }

    let kinv = parts.g2.add(&lf.matmul(&sigma_inv).matmul(&rf));
    Ok(GreenSecond {
        g2: parts.g2,
        b_l: parts.b_l,
        b_r: parts.b_r,
        xi: parts.xi,
        sigma,
        sigma_det: det,
        kinv,
    })
}

/// Closed-form interior parts for a built-in variant.
#[derive(Debug, Clone)]
pub struct ClosedFormSecond {
    pub g2: DenseMatrix,
    pub b_l: Vec<f64>,
    pub b_r: Vec<f64>,
    pub xi: XiScalars,
}

fn green_kernel(xi: f64, xj: f64, ell: f64) -> f64 {
    let (lo, hi) = if xj <= xi { (xj, xi) } else { (xi, xj) };
    lo * (1.0 - hi / ell)
}

/// Integer sequences behind the fourth-order narrow closed form:
/// `P_i` and `Q_n` built from psi = 7 + sqrt(48). Returns P_i for
/// i = 2..=n-2 (index i) and Q_n.
pub fn n42_sequences(n: usize) -> Result<(Vec<BigInt>, BigInt)> {
    if n < 8 {
        return Err(Error::GridTooSmall {
            variant: "n42 closed form",
            n,
            min: 8,
        });
    }
    let psi = QuadInt::psi();
    let four = BigInt::from(4);
    // P_i = (8a + 37b)/4 with psi^{i-2} = a + b sqrt(3); the division is
    // exact for every power of psi.
    let mut p = vec![BigInt::zero(); n - 1];
    let mut power = QuadInt::new(1, 0, 3);
    for i in 2..=n - 2 {
        let num = BigInt::from(8) * &power.a + BigInt::from(37) * &power.b;
        p[i] = exact_div(&num, &four)?;
        power = power.mul(&psi);
    }
    // Q_n = (592a + 1561b)/4 with psi^{n-4} = a + b sqrt(3).
    let power = psi.pow((n - 4) as u32);
    let q_num = BigInt::from(592) * &power.a + BigInt::from(1561) * &power.b;
    let q_n = exact_div(&q_num, &four)?;
    Ok((p, q_n))
}

/// Exact mesh-scaled capacities for the fourth-order narrow operator:
/// `(h xi_LR, h xi_C) = (2417/354 - 289 P_{n-2} / (2 Q_n), 289 / Q_n)`.
pub fn n42_xi_scaled_rational(n: usize) -> Result<(Rational, Rational)> {
    let (p, q_n) = n42_sequences(n)?;
    let q = Rational::from_integer(q_n);
    let p_n2 = Rational::from_integer(p[n - 2].clone());
    let c289 = Rational::from_integer(289.into());
    let h_xi_lr = Rational::new(2417.into(), 354.into())
        - &c289 * p_n2 / (Rational::from_integer(2.into()) * &q);
    let h_xi_c = c289 / q;
    Ok((h_xi_lr, h_xi_c))
}

fn closed_form_n42(grid: &Grid, precision: Precision) -> Result<ClosedFormSecond> {
    let n = grid.n();
    let np = grid.num_nodes();
    let (p, q_n) = n42_sequences(n)?;
    let h = grid.h();
    let ell = grid.ell();
    let x = grid.nodes();

    // Q_n grows like psi^{n-4}, so the exact path forms every ratio
    // over the integers before lowering; the double path lowers the
    // sequence values first.
    let ratio: Box<dyn Fn(&BigInt, &BigInt) -> f64> = match precision {
        Precision::Exact => Box::new(|num: &BigInt, den: &BigInt| {
            rational_to_f64(&Rational::new(num.clone(), den.clone()))
        }),
        Precision::Double => Box::new(|num: &BigInt, den: &BigInt| {
            rational_to_f64(&Rational::from_integer(num.clone()))
                / rational_to_f64(&Rational::from_integer(den.clone()))
        }),
    };
    let p_over_q = |i: usize| ratio(&p[i], &q_n);
    let pp_over_q = |i: usize, j: usize| match precision {
        Precision::Exact => ratio(&(&p[i] * &p[j]), &q_n),
        Precision::Double => p_over_q(i) * rational_to_f64(&Rational::from_integer(p[j].clone())),
    };

    // kappa correction to the piecewise-linear kernel, block indices
    // 1..n-1.
    let kappa = |i: usize, j: usize| -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if (i == 1 && j == 1) || (i == n - 1 && j == n - 1) {
            -h * p_over_q(n - 2) / 2.0 - h * 11.0 / 118.0
        } else if i == 1 && j == n - 1 {
            -h * p_over_q(2) / 2.0
        } else if i == 1 {
            // 2 <= j <= n-2
            -h * p_over_q(n - j)
        } else if j == n - 1 {
            // 2 <= i <= n-2
            -h * p_over_q(i)
        } else {
            // both in 2..=n-2, i <= j
            -h * pp_over_q(i, n - j)
        }
    };

    let mut g2 = DenseMatrix::zeros(np, np);
    for i in 1..n {
        for j in 1..n {
            g2[(i, j)] = kappa(i, j) + green_kernel(x[i], x[j], ell);
        }
    }

    let one = BigInt::from(1);
    let mut b_l = vec![0.0; np];
    b_l[0] = 1.0;
    b_l[1] = -85.0 / 118.0 + 8.5 * p_over_q(n - 2);
    for i in 2..=n - 2 {
        b_l[i] = 17.0 * p_over_q(n - i);
    }
    b_l[n - 1] = 17.0 * ratio(&one, &q_n);
    let b_r: Vec<f64> = (0..np).map(|i| b_l[np - 1 - i]).collect();

    let (h_xi_lr, h_xi_c) = n42_xi_scaled_rational(n)?;
    let xi_lr = rational_to_f64(&h_xi_lr) / h;
    let xi_c = rational_to_f64(&h_xi_c) / h;
    Ok(ClosedFormSecond {
        g2,
        b_l,
        b_r,
        xi: XiScalars::from_contractions(xi_lr, xi_lr, xi_c),
    })
}

/// Explicit G2, b vectors and capacities for the built-in variants.
pub fn closed_form_second(
    variant: SecondVariant,
    grid: &Grid,
    precision: Precision,
) -> Result<ClosedFormSecond> {
    let n = grid.n();
    if n < variant.min_n() {
        return Err(Error::GridTooSmall {
            variant: variant.name(),
            n,
            min: variant.min_n(),
        });
    }
    let np = grid.num_nodes();
    let h = grid.h();
    let ell = grid.ell();
    let x = grid.nodes();
    match variant {
        SecondVariant::N20 => {
            let mut g2 = DenseMatrix::zeros(np, np);
            for i in 1..n {
                for j in 1..n {
                    g2[(i, j)] = green_kernel(x[i], x[j], ell);
                }
            }
            let mut b_l = vec![0.0; np];
            b_l[0] = 1.0;
            let mut b_r = vec![0.0; np];
            b_r[n] = 1.0;
            Ok(ClosedFormSecond {
                g2,
                b_l,
                b_r,
                xi: XiScalars::from_contractions(1.0 / h, 1.0 / h, 0.0),
            })
        }
        SecondVariant::N21 => {
            let mut g2 = DenseMatrix::zeros(np, np);
            for i in 1..n {
                for j in 1..n {
                    g2[(i, j)] = green_kernel(x[i], x[j], ell);
                }
            }
            let mut b_l = vec![0.0; np];
            b_l[0] = 1.0;
            b_l[1] = -0.5;
            let b_r: Vec<f64> = (0..np).map(|i| b_l[np - 1 - i]).collect();
            Ok(ClosedFormSecond {
                g2,
                b_l,
                b_r,
                xi: XiScalars::from_contractions(2.5 / h, 2.5 / h, 0.0),
            })
        }
        SecondVariant::N42 => closed_form_n42(grid, precision),
        SecondVariant::W20 => {
            // The wide kernel oscillates between zero and twice the
            // exact value.
            let mut g2 = DenseMatrix::zeros(np, np);
            for i in 1..n {
                for j in 1..n {
                    let parity = if (i + j) % 2 == 0 { 2.0 } else { 0.0 };
                    g2[(i, j)] = green_kernel(x[i], x[j], ell) * parity;
                }
            }
            let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
            let b_l: Vec<f64> = (0..np)
                .map(|i| sign(i) * (1.0 - i as f64 / n as f64))
                .collect();
            let b_r: Vec<f64> = (0..np).map(|i| b_l[np - 1 - i]).collect();
            let xi_lr = 2.0 / h - 1.0 / ell;
            let xi_c = -sign(n) / ell;
            Ok(ClosedFormSecond {
                g2,
                b_l,
                b_r,
                xi: XiScalars::from_contractions(xi_lr, xi_lr, xi_c),
            })
        }
        SecondVariant::External => Err(Error::InvalidArgument(
            "no closed form for external operators".into(),
        )),
    }
}

/// Full inverse assembled from the closed-form parts; shares no
/// factorization with the general path, so the two are independent
/// routes to the same matrix.
pub fn closed_form_kinv_second(
    variant: SecondVariant,
    grid: &Grid,
    sat: &SatSecond,
    precision: Precision,
) -> Result<DenseMatrix> {
    let cf = closed_form_second(variant, grid, precision)?;
    let np = grid.num_nodes();
    let ell = grid.ell();
    let x = grid.nodes();
    let sigma = sigma_matrix(sat, &cf.xi, ell);
    let threshold = 1e-12 * sigma.norm_inf();
    let Some((_, sigma_inv)) = inverse4(&sigma, threshold) else {
        let verdict = singularity_check(sat, &cf.xi, ell);
        let condition = verdict.condition().unwrap_or(SingularCondition::Penalty);
        return Err(Error::SingularSigma { condition });
    };
    let mut lf = DenseMatrix::zeros(np, 4);
    for i in 0..np {
        lf[(i, 0)] = -sat.tau_l * cf.b_l[i];
        lf[(i, 1)] = -sat.tau_r * cf.b_r[i];
        lf[(i, 2)] = 1.0 - x[i] / ell;
        lf[(i, 3)] = x[i] / ell;
    }
    let mut rf = DenseMatrix::zeros(4, np);
    for j in 0..np {
        rf[(0, j)] = cf.b_l[j];
        rf[(1, j)] = cf.b_r[j];
        rf[(2, j)] = sat.beta_l * (1.0 - x[j] / ell);
        rf[(3, j)] = sat.beta_r * x[j] / ell;
    }
    Ok(cf.g2.add(&lf.matmul(&sigma_inv).matmul(&rf)))
}

/// Residuals of the preliminary identities behind the inverse theorem:
/// consistency of the d stencils, the action of A on linear functions,
/// the bordered-inverse relations and the pickup identities.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PrelimReport {
    pub variant: String,
    pub n: usize,
    pub entries: Vec<(String, f64)>,
}

impl PrelimReport {
    fn push(&mut self, name: &str, residual: f64) {
        self.entries.push((name.to_string(), residual));
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, (_, r)| m.max(*r))
    }
}

pub fn verify_preliminaries(op: &SbpSecondOp) -> Result<PrelimReport> {
    let grid = &op.grid;
    let np = grid.num_nodes();
    let n = grid.n();
    let ell = grid.ell();
    let x = grid.nodes();
    let parts = interior_parts(&op.a, &op.dl, &op.dr, grid)?;
    let mut report = PrelimReport {
        variant: op.variant.name().into(),
        n,
        entries: vec![],
    };

    let ell_one_minus_x: Vec<f64> = x.iter().map(|&xi| ell - xi).collect();
    report.push(
        "dl_on_ell_one_minus_x",
        (dot(&op.dl, &ell_one_minus_x) + 1.0).abs(),
    );
    report.push("dl_on_x", (dot(&op.dl, x) - 1.0).abs());
    report.push(
        "dr_on_ell_one_minus_x",
        (dot(&op.dr, &ell_one_minus_x) + 1.0).abs(),
    );
    report.push("dr_on_x", (dot(&op.dr, x) - 1.0).abs());

    // A(ell 1 - x) = e_L - e_R and A x = e_R - e_L.
    let a_lin = op.a.matvec(&ell_one_minus_x);
    let mut worst = 0.0f64;
    for i in 0..np {
        let want = if i == 0 {
            1.0
        } else if i == n {
            -1.0
        } else {
            0.0
        };
        worst = worst.max((a_lin[i] - want).abs());
    }
    report.push("a_on_ell_one_minus_x", worst);
    let ax = op.a.matvec(x);
    let mut worst = 0.0f64;
    for i in 0..np {
        let want = if i == 0 {
            -1.0
        } else if i == n {
            1.0
        } else {
            0.0
        };
        worst = worst.max((ax[i] - want).abs());
    }
    report.push("a_on_x", worst);

    // Interior relations: 1 - x/ell = -Abar^{-1} a_L and
    // x/ell = -Abar^{-1} a_R, expressed through G2's interior block.
    let a_col_l: Vec<f64> = (0..np).map(|i| op.a[(i, 0)]).collect();
    let a_col_r: Vec<f64> = (0..np).map(|i| op.a[(i, n)]).collect();
    let g2_al = parts.g2.matvec(&a_col_l);
    let g2_ar = parts.g2.matvec(&a_col_r);
    let mut worst_lin = 0.0f64;
    for i in 1..n {
        worst_lin = worst_lin.max((g2_al[i] + 1.0 - x[i] / ell).abs());
        worst_lin = worst_lin.max((g2_ar[i] + x[i] / ell).abs());
    }
    report.push("interior_linear_modes", worst_lin);

    // Corner relations: a_L = aL^T Abar^{-1} aL + 1/ell, likewise on the
    // right, and a_C = aR^T Abar^{-1} aL - 1/ell. Scaled by h to stay
    // comparable across mesh sizes (A carries a 1/h).
    let quad_ll = dot(&a_col_l, &g2_al);
    let quad_rr = dot(&a_col_r, &g2_ar);
    let quad_rl = dot(&a_col_r, &g2_al);
    let h = grid.h();
    report.push(
        "corner_al",
        (op.a[(0, 0)] - (quad_ll + 1.0 / ell)).abs() * h,
    );
    report.push(
        "corner_ar",
        (op.a[(n, n)] - (quad_rr + 1.0 / ell)).abs() * h,
    );
    report.push(
        "corner_ac",
        (op.a[(0, n)] - (quad_rl - 1.0 / ell)).abs() * h,
    );

    // A G2 = I - e_L (1 - x/ell)^T - e_R x^T/ell.
    let ag = op.a.matmul(&parts.g2);
    let mut worst = 0.0f64;
    for i in 0..np {
        for j in 0..np {
            let mut want = if i == j { 1.0 } else { 0.0 };
            if i == 0 {
                want -= 1.0 - x[j] / ell;
            }
            if i == n {
                want -= x[j] / ell;
            }
            worst = worst.max((ag[(i, j)] - want).abs());
        }
    }
    report.push("a_g2", worst);

    // A b_L = -d_L and A b_R = d_R, h-scaled (both sides carry 1/h).
    let abl = op.a.matvec(&parts.b_l);
    let abr = op.a.matvec(&parts.b_r);
    let mut worst = 0.0f64;
    for i in 0..np {
        worst = worst.max((abl[i] + op.dl[i]).abs() * h);
        worst = worst.max((abr[i] - op.dr[i]).abs() * h);
    }
    report.push("pickup", worst);

    // Endpoint selections of the b vectors and linear modes.
    let mut worst = (parts.b_l[0] - 1.0).abs();
    worst = worst.max((parts.b_r[n] - 1.0).abs());
    worst = worst.max(parts.b_l[n].abs());
    worst = worst.max(parts.b_r[0].abs());
    worst = worst.max((1.0 - x[0] / ell - 1.0).abs());
    worst = worst.max(x[0].abs() / ell);
    worst = worst.max(x[n] / ell - 1.0);
    worst = worst.max(1.0 - x[n] / ell);
    report.push("endpoint_selection", worst);

    // Rows of G2 against the b vectors: e_{L,R}^T G2 = 0,
    // d_L^T G2 = (1 - x/ell - b_L)^T, d_R^T G2 = (b_R - x/ell)^T.
    let mut worst = 0.0f64;
    for j in 0..np {
        worst = worst.max(parts.g2[(0, j)].abs());
        worst = worst.max(parts.g2[(n, j)].abs());
    }
    let g2t_dl = parts.g2.transpose().matvec(&op.dl);
    let g2t_dr = parts.g2.transpose().matvec(&op.dr);
    for j in 0..np {
        worst = worst.max((g2t_dl[j] - (1.0 - x[j] / ell - parts.b_l[j])).abs());
        worst = worst.max((g2t_dr[j] - (parts.b_r[j] - x[j] / ell)).abs());
    }
    report.push("g2_rows_vs_b", worst);

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lu_inverse;
    use crate::operators::build_second;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 1.0).unwrap()
    }

    fn op(variant: SecondVariant, n: usize) -> SbpSecondOp {
        build_second(variant, &grid(n)).unwrap()
    }

    #[test]
    fn xi_values_builtins() {
        // (2,0): h xi = 1, xi_C = 0.
        let o = op(SecondVariant::N20, 8);
        let xi = xi_scalars(&o).unwrap();
        let h = o.grid.h();
        assert!((xi.xi_l * h - 1.0).abs() < 1e-12);
        assert!((xi.xi_r * h - 1.0).abs() < 1e-12);
        assert!(xi.xi_c.abs() < 1e-12);

        // (2,1): h xi = 2.5, xi_C = 0 for n >= 4.
        let o = op(SecondVariant::N21, 10);
        let xi = xi_scalars(&o).unwrap();
        let h = o.grid.h();
        assert!((xi.xi_l * h - 2.5).abs() < 1e-12);
        assert!(xi.xi_c.abs() < 1e-12);

        // Wide (2,0): xi = 2/h - 1/ell, xi_C = -(-1)^n / ell.
        for n in [9usize, 10] {
            let o = op(SecondVariant::W20, n);
            let xi = xi_scalars(&o).unwrap();
            let h = o.grid.h();
            assert!((xi.xi_l - (2.0 / h - 1.0)).abs() < 1e-10, "n={n}");
            let want_c = if n % 2 == 0 { -1.0 } else { 1.0 };
            assert!((xi.xi_c - want_c).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn n42_table_values() {
        // Mesh-scaled capacities for n = 8 from the exact path.
        let (h_xi_lr, h_xi_c) = n42_xi_scaled_rational(8).unwrap();
        assert!((rational_to_f64(&h_xi_lr) - 3.986350339808304).abs() < 1e-13);
        assert!((rational_to_f64(&h_xi_c) - 0.000041141179445).abs() < 1e-13);
        // And the contraction route agrees.
        let o = op(SecondVariant::N42, 8);
        let xi = xi_scalars(&o).unwrap();
        let h = o.grid.h();
        assert!((xi.xi_l * h - rational_to_f64(&h_xi_lr)).abs() < 1e-11);
        assert!((xi.xi_c * h - rational_to_f64(&h_xi_c)).abs() < 1e-11);
    }

    #[test]
    fn n42_sequence_identity() {
        // Q_n + 2 P_{n-3} = 51 P_{n-2}.
        for n in [8usize, 9, 12, 17] {
            let (p, q) = n42_sequences(n).unwrap();
            assert_eq!(
                &q + BigInt::from(2) * &p[n - 3],
                BigInt::from(51) * &p[n - 2],
                "n = {n}"
            );
        }
    }

    #[test]
    fn closed_forms_match_general_parts() {
        for variant in [
            SecondVariant::N20,
            SecondVariant::N21,
            SecondVariant::N42,
            SecondVariant::W20,
        ] {
            let n = if variant == SecondVariant::N42 { 10 } else { 9 };
            let o = op(variant, n);
            let cf = closed_form_second(variant, &o.grid, Precision::Exact).unwrap();
            let parts = interior_parts(&o.a, &o.dl, &o.dr, &o.grid).unwrap();
            assert!(
                cf.g2.sub(&parts.g2).max_abs() < 1e-9,
                "{variant:?} G2 mismatch {}",
                cf.g2.sub(&parts.g2).max_abs()
            );
            for i in 0..o.num_nodes() {
                assert!((cf.b_l[i] - parts.b_l[i]).abs() < 1e-9, "{variant:?} b_l");
                assert!((cf.b_r[i] - parts.b_r[i]).abs() < 1e-9, "{variant:?} b_r");
            }
            assert!((cf.xi.xi_l - parts.xi.xi_l).abs() < 1e-9 * parts.xi.xi_l.abs());
            assert!((cf.xi.xi_c - parts.xi.xi_c).abs() < 1e-9);
        }
    }

    #[test]
    fn n20_g2_is_exact_kernel() {
        let o = op(SecondVariant::N20, 4);
        let parts = interior_parts(&o.a, &o.dl, &o.dr, &o.grid).unwrap();
        // (G2)_{2,1} = x_1 (1 - x_2) = 0.25 * 0.5.
        assert!((parts.g2[(2, 1)] - 0.125).abs() < 1e-14);
        assert!((parts.b_l[0] - 1.0).abs() < 1e-14);
        assert!(parts.b_l[1].abs() < 1e-14);
    }

    #[test]
    fn w20_kernel_parity() {
        let o = op(SecondVariant::W20, 6);
        let parts = interior_parts(&o.a, &o.dl, &o.dr, &o.grid).unwrap();
        for i in 1..6 {
            for j in 1..6 {
                if (i + j) % 2 == 1 {
                    assert!(parts.g2[(i, j)].abs() < 1e-12, "odd parity nonzero");
                }
            }
        }
    }

    #[test]
    fn sigma_matrix_layouts() {
        // tau = 0, Dirichlet: block diag(sigma_L, sigma_R) with unit
        // lower-right block and delta entries equal to one.
        let xi = XiScalars::from_contractions(2.5, 2.5, 0.0);
        let sat = SatSecond::dirichlet(-3.0, 0.0);
        let s = sigma_matrix(&sat, &xi, 1.0);
        assert_eq!(s[(0, 0)], -3.0);
        assert_eq!(s[(1, 1)], -3.0);
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(s[(2, 0)], 1.0);
        assert_eq!(s[(3, 1)], 1.0);
        assert_eq!(s[(2, 2)], 1.0);
        assert_eq!(s[(3, 3)], 1.0);
        assert_eq!(s[(2, 3)], 0.0);

        // Dual-consistent penalties empty the coupling column, making
        // the matrix block diagonal in the 2+2 partition.
        let sat = SatSecond::dirichlet(-3.0, 1.0);
        let s2 = sigma_matrix(&sat, &xi, 1.0);
        assert_eq!(s2[(2, 0)], 0.0);
        assert_eq!(s2[(3, 1)], 0.0);
        assert_eq!(s2[(0, 2)], 0.0);
        assert_eq!(s2[(1, 3)], 0.0);

        // Double Neumann: singular lower-right block.
        let sat = SatSecond::neumann(-1.0, 0.0);
        let s = sigma_matrix(&sat, &xi, 2.0);
        let lr = s.block(2, 4, 2, 4);
        assert!((lr[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((lr[(0, 1)] + 0.5).abs() < 1e-15);
        assert!(crate::linalg::rank_deficient(&lr));
    }

    #[test]
    fn inverse4_roundtrip() {
        let m = DenseMatrix::from_row_major(
            4,
            4,
            vec![
                2.0, 1.0, 0.0, 0.5, -1.0, 3.0, 0.2, 0.0, 0.0, 0.1, 1.5, -0.3, 0.7, 0.0, 0.0, 2.0,
            ],
        )
        .unwrap();
        let (_, inv) = inverse4(&m, 1e-14).unwrap();
        assert!(m.residual_vs_identity(&inv) < 1e-13);
    }

    #[test]
    fn theorem2_roundtrip_dirichlet() {
        for variant in [
            SecondVariant::N20,
            SecondVariant::N21,
            SecondVariant::N42,
            SecondVariant::W20,
        ] {
            let o = op(variant, 12);
            let xi = xi_scalars(&o).unwrap();
            let xi_t = xi.total().unwrap();
            let sat = SatSecond::dirichlet(-2.0 * xi_t, 1.0);
            let sys = assemble_second(&o, sat);
            let gs = invert_general_second(&sys).unwrap();
            assert!(gs.residual(&sys.k) < 1e-9, "{variant:?}");
            let lu = lu_inverse(&sys.k).unwrap();
            assert!(
                gs.kinv.sub(&lu).max_abs() <= 1e-9 * lu.max_abs().max(1.0),
                "{variant:?}"
            );
            // Dual consistent => symmetric inverse.
            assert!(gs.kinv.asymmetry() <= 1e-10 * gs.kinv.max_abs().max(1.0));
        }
    }

    #[test]
    fn roundtrip_large_grid() {
        let o = op(SecondVariant::N21, 64);
        let xi_t = xi_scalars(&o).unwrap().total().unwrap();
        let sat = SatSecond::dirichlet(-1.3 * xi_t, 0.5);
        let sys = assemble_second(&o, sat);
        let gs = invert_general_second(&sys).unwrap();
        assert!(gs.residual(&sys.k) < 1e-9);
    }

    #[test]
    fn n20_dirichlet_interior_is_g2() {
        // tau = 0 keeps the penalty correction out of the interior rows.
        let o = op(SecondVariant::N20, 4);
        let sat = SatSecond::dirichlet(-4.0 / o.grid.h(), 0.0);
        let sys = assemble_second(&o, sat);
        let gs = invert_general_second(&sys).unwrap();
        for i in 1..4 {
            for j in 1..4 {
                assert!(
                    (gs.kinv[(i, j)] - gs.g2[(i, j)]).abs() < 1e-12,
                    "interior touched at ({i},{j})"
                );
            }
        }
        assert!(gs.residual(&sys.k) < 1e-10);
    }

    #[test]
    fn double_neumann_is_singular() {
        let o = op(SecondVariant::N21, 8);
        let sat = SatSecond::neumann(-1.0, 0.0);
        let sys = assemble_second(&o, sat);
        match invert_general_second(&sys) {
            Err(Error::SingularSigma { condition }) => {
                assert_eq!(condition, SingularCondition::Bc)
            }
            other => panic!("expected BC singularity, got {other:?}"),
        }
        let report = singularity_check_with_witness(&o, &sat).unwrap();
        assert!(report.verdict.singular && report.rank_deficient && report.agree);
    }

    #[test]
    fn robin_roundtrip_n42() {
        let o = op(SecondVariant::N42, 10);
        let xi = xi_scalars(&o).unwrap();
        let xi_t = xi.total().unwrap();
        let tau = 1.0 / (xi_t + 1.0);
        let sat = SatSecond {
            sigma_l: -xi_t / (xi_t + 1.0) + 0.1,
            sigma_r: -xi_t / (xi_t + 1.0) + 0.1,
            tau_l: tau,
            tau_r: tau,
            alpha_l: 1.0,
            alpha_r: 1.0,
            beta_l: 1.0,
            beta_r: 1.0,
        };
        let sys = assemble_second(&o, sat);
        let gs = invert_general_second(&sys).unwrap();
        assert!(gs.residual(&sys.k) < 1e-9);
        let lu = lu_inverse(&sys.k).unwrap();
        assert!(gs.kinv.sub(&lu).max_abs() <= 1e-9 * lu.max_abs().max(1.0));
    }

    #[test]
    fn penalty_locus_singular_and_perturbation_recovers() {
        let o = op(SecondVariant::N21, 8);
        let xi = xi_scalars(&o).unwrap();
        let xi_t = xi.total().unwrap();
        // sigma = -xi_T tau with Dirichlet data: stable yet singular.
        let sat = SatSecond::dirichlet(-xi_t, 1.0);
        let report = singularity_check_with_witness(&o, &sat).unwrap();
        assert!(report.verdict.singular);
        assert!(report.verdict.penalty_fires && !report.verdict.bc_fires);
        assert!(report.rank_deficient && report.agree);

        let off = SatSecond::dirichlet(-xi_t + 0.5, 1.0);
        let report = singularity_check_with_witness(&o, &off).unwrap();
        assert!(!report.verdict.singular && !report.rank_deficient && report.agree);
    }

    #[test]
    fn zeta_witness_on_wide_operator() {
        // Unequal penalty strengths on the singular locus with zeta = 2;
        // the wide operator has xi_C != 0 so the witness is recoverable.
        let o = op(SecondVariant::W20, 9);
        let xi = xi_scalars(&o).unwrap();
        let zeta = 2.0;
        let sat = SatSecond {
            sigma_l: -(xi.xi_l + zeta * xi.xi_c.abs()) * 0.8,
            sigma_r: -(xi.xi_r + xi.xi_c.abs() / zeta) * 0.7,
            tau_l: 0.8,
            tau_r: 0.7,
            alpha_l: 1.0,
            alpha_r: 1.0,
            beta_l: 0.0,
            beta_r: 0.0,
        };
        let report = singularity_check_with_witness(&o, &sat).unwrap();
        assert!(report.verdict.singular && report.rank_deficient && report.agree);
        let got = report.verdict.zeta.unwrap();
        assert!((got - zeta).abs() < 1e-6, "zeta witness {got}");
    }

    #[test]
    fn preliminaries_residuals_small() {
        for variant in [
            SecondVariant::N20,
            SecondVariant::N21,
            SecondVariant::N42,
            SecondVariant::W20,
        ] {
            let o = op(variant, 12);
            let report = verify_preliminaries(&o).unwrap();
            assert!(
                report.max_residual() <= 1e-10,
                "{variant:?}: {:?}",
                report.entries
            );
        }
        // N20 at small n: residuals at rounding level.
        let o = op(SecondVariant::N20, 6);
        let report = verify_preliminaries(&o).unwrap();
        assert!(report.max_residual() <= 1e-13);
    }

    #[test]
    fn centrosymmetric_b_mirror() {
        for variant in [
            SecondVariant::N20,
            SecondVariant::N21,
            SecondVariant::N42,
            SecondVariant::W20,
        ] {
            let o = op(variant, 11);
            let parts = interior_parts(&o.a, &o.dl, &o.dr, &o.grid).unwrap();
            let np = o.num_nodes();
            for i in 0..np {
                assert!(
                    (parts.b_r[i] - parts.b_l[np - 1 - i]).abs() < 1e-11,
                    "{variant:?}"
                );
            }
        }
    }

    #[test]
    fn closed_form_kinv_matches_general() {
        for variant in [
            SecondVariant::N20,
            SecondVariant::N21,
            SecondVariant::N42,
            SecondVariant::W20,
        ] {
            let o = op(variant, 10);
            let xi_t = xi_scalars(&o).unwrap().total().unwrap();
            let sat = SatSecond::dirichlet(-1.5 * xi_t, 0.8);
            let sys = assemble_second(&o, sat);
            let gs = invert_general_second(&sys).unwrap();
            let cf = closed_form_kinv_second(variant, &o.grid, &sat, Precision::Exact).unwrap();
            let scale = gs.kinv.max_abs().max(1.0);
            assert!(
                cf.sub(&gs.kinv).max_abs() <= 1e-9 * scale,
                "{variant:?}: {}",
                cf.sub(&gs.kinv).max_abs()
            );
            assert!(sys.k.residual_vs_identity(&cf) <= 1e-9, "{variant:?}");
        }
    }

    #[test]
    fn general_path_handles_non_centrosymmetric_operator() {
        // Mixed boundary closures loaded through the external-coefficient
        // path: same tridiagonal A, but a first-order d on the left and a
        // second-order d on the right. The closures are inequivalent, so
        // the total capacity is undefined, yet the general inverse and
        // the per-side scalars still work.
        use crate::operators::{build_second_external, parse_coeff_csv};
        let n = 8usize;
        let g = grid(n);
        let mut h_csv = String::from("mixed,1,9
0,0,1/2
0,8,1/2
");
        for j in 1..8 {
            h_csv.push_str(&format!("0,{j},1
"));
        }
        let mut a_csv = String::from("mixed,9,9
");
        for i in 0..=n {
            let diag = if i == 0 || i == n { 1 } else { 2 };
            a_csv.push_str(&format!("{i},{i},{diag}
"));
            if i > 0 {
                a_csv.push_str(&format!("{i},{},-1
", i - 1));
            }
            if i < n {
                a_csv.push_str(&format!("{i},{},-1
", i + 1));
            }
        }
        let dl_csv = "mixed,1,9
0,0,-1
0,1,1
";
        let dr_csv = "mixed,1,9
0,6,1/2
0,7,-2
0,8,3/2
";
        let op = build_second_external(
            &g,
            &parse_coeff_csv(&h_csv).unwrap(),
            &parse_coeff_csv(&a_csv).unwrap(),
            &parse_coeff_csv(dl_csv).unwrap(),
            &parse_coeff_csv(dr_csv).unwrap(),
        )
        .unwrap();
        let xi = xi_scalars(&op).unwrap();
        let h = g.h();
        assert!((xi.xi_l * h - 1.0).abs() < 1e-12);
        assert!((xi.xi_r * h - 2.5).abs() < 1e-12);
        assert!(matches!(xi.total(), Err(Error::NotCentrosymmetric)));

        let sat = SatSecond::dirichlet(-3.0 / h, 1.0);
        let sys = assemble_second(&op, sat);
        let gs = invert_general_second(&sys).unwrap();
        assert!(gs.residual(&sys.k) < 1e-10);
        let lu = lu_inverse(&sys.k).unwrap();
        assert!(gs.kinv.sub(&lu).max_abs() <= 1e-10 * lu.max_abs().max(1.0));
    }

    #[test]
    fn n42_b_limit_values() {
        // Large-n limit of the left pickup vector.
        let o = op(SecondVariant::N42, 40);
        let parts = interior_parts(&o.a, &o.dl, &o.dr, &o.grid).unwrap();
        assert!((parts.b_l[1] - -0.5532).abs() < 1e-3);
        assert!((parts.b_l[2] - 0.3342).abs() < 1e-3);
        assert!((parts.b_l[3] - 0.0239).abs() < 1e-3);
    }
}
