//! SBP operator bundles: first derivative (H, Q, D1) and second
//! derivative (H, A, D2, d_L, d_R).
//!
//! Coefficients are stored as exact rationals (scale-free, with the
//! mesh factors 1/h, 1/h^2 kept symbolic) and lowered to doubles on
//! assembly. This keeps the SBP identities exact and the golden tests
//! stable.

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::exact::{parse_rational, rational_to_f64, RatMatrix, Rational};
use crate::grid::Grid;
use crate::matrix::{unit_vec, DenseMatrix};

fn rat(num: i64, den: i64) -> Rational {
    Rational::new(num.into(), den.into())
}

/// First-derivative operator family: (interior order, boundary order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FirstVariant {
    /// (2,1) order accurate.
    D121,
    /// (4,2) order accurate.
    D142,
    /// Coefficients supplied via CSV.
    External,
}

impl FirstVariant {
    pub fn name(&self) -> &'static str {
        match self {
            FirstVariant::D121 => "d1_21",
            FirstVariant::D142 => "d1_42",
            FirstVariant::External => "d1_external",
        }
    }

    pub fn min_n(&self) -> usize {
        match self {
            FirstVariant::D121 => 4,
            FirstVariant::D142 => 8,
            FirstVariant::External => 4,
        }
    }
}

/// Second-derivative operator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SecondVariant {
    /// Narrow stencil, (2,0): inconsistent boundary rows.
    N20,
    /// Narrow stencil, (2,1).
    N21,
    /// Narrow stencil, (4,2).
    N42,
    /// Wide stencil (2,0): the square of the (2,1) first derivative.
    W20,
    /// Coefficients supplied via CSV.
    External,
}

impl SecondVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SecondVariant::N20 => "n20",
            SecondVariant::N21 => "n21",
            SecondVariant::N42 => "n42",
            SecondVariant::W20 => "w20",
            SecondVariant::External => "d2_external",
        }
    }

    pub fn min_n(&self) -> usize {
        match self {
            SecondVariant::N42 => 8,
            _ => 4,
        }
    }

    pub fn is_wide(&self) -> bool {
        matches!(self, SecondVariant::W20)
    }
}

/// First-derivative bundle. `D1 = H^{-1} Q` approximates d/dx.
#[derive(Debug, Clone)]
pub struct SbpFirstOp {
    pub variant: FirstVariant,
    pub grid: Grid,
    /// Diagonal norm, including the h factor.
    pub h_diag: Vec<f64>,
    /// Dimensionless Q lowered to doubles.
    pub q: DenseMatrix,
    /// H^{-1} Q, including the 1/h factor.
    pub d1: DenseMatrix,
    h_weights: Vec<Rational>,
    q_rat: RatMatrix,
}

impl SbpFirstOp {
    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn h_matrix(&self) -> DenseMatrix {
        DenseMatrix::diag(&self.h_diag)
    }

    pub fn e_l(&self) -> Vec<f64> {
        unit_vec(self.num_nodes(), 0)
    }

    pub fn e_r(&self) -> Vec<f64> {
        unit_vec(self.num_nodes(), self.grid.n())
    }

    /// Dimensionless exact Q.
    pub fn q_rational(&self) -> &RatMatrix {
        &self.q_rat
    }

    /// Exact dimensionless norm weights; `H = h * diag(w)`.
    pub fn h_weights(&self) -> &[Rational] {
        &self.h_weights
    }
}

/// Second-derivative bundle.
/// `D2 = H^{-1}(-A + e_R d_R^T - e_L d_L^T)` with `A = A^T >= 0`.
#[derive(Debug, Clone)]
pub struct SbpSecondOp {
    pub variant: SecondVariant,
    pub grid: Grid,
    pub h_diag: Vec<f64>,
    /// A, including the 1/h factor.
    pub a: DenseMatrix,
    /// D2, including the 1/h^2 factor.
    pub d2: DenseMatrix,
    /// Boundary derivative stencils, including the 1/h factor.
    pub dl: Vec<f64>,
    pub dr: Vec<f64>,
    h_weights: Vec<Rational>,
    a_rat: RatMatrix,
    dl_rat: Vec<Rational>,
    dr_rat: Vec<Rational>,
}

impl SbpSecondOp {
    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn h_matrix(&self) -> DenseMatrix {
        DenseMatrix::diag(&self.h_diag)
    }

    pub fn e_l(&self) -> Vec<f64> {
        unit_vec(self.num_nodes(), 0)
    }

    pub fn e_r(&self) -> Vec<f64> {
        unit_vec(self.num_nodes(), self.grid.n())
    }

    /// Interior block of A (rows and columns 1..n).
    pub fn abar(&self) -> DenseMatrix {
        let n = self.grid.n();
        self.a.block(1, n, 1, n)
    }

    /// Dimensionless exact A; the real A is this over h.
    pub fn a_rational(&self) -> &RatMatrix {
        &self.a_rat
    }

    pub fn dl_rational(&self) -> &[Rational] {
        &self.dl_rat
    }

    pub fn dr_rational(&self) -> &[Rational] {
        &self.dr_rat
    }

    pub fn h_weights(&self) -> &[Rational] {
        &self.h_weights
    }
}

fn norm_weights(variant_order4: bool, num_nodes: usize) -> Vec<Rational> {
    if variant_order4 {
        let closure = [rat(17, 48), rat(59, 48), rat(43, 48), rat(49, 48)];
        let mut w = vec![Rational::one(); num_nodes];
        for (i, c) in closure.iter().enumerate() {
            w[i] = c.clone();
            w[num_nodes - 1 - i] = c.clone();
        }
        w
    } else {
        let mut w = vec![Rational::one(); num_nodes];
        w[0] = rat(1, 2);
        w[num_nodes - 1] = rat(1, 2);
        w
    }
}

fn q_rational_21(n: usize) -> RatMatrix {
    let mut q = RatMatrix::zeros(n + 1, n + 1);
    let half = rat(1, 2);
    q[(0, 0)] = -half.clone();
    q[(0, 1)] = half.clone();
    for i in 1..n {
        q[(i, i - 1)] = -half.clone();
        q[(i, i + 1)] = half.clone();
    }
    q[(n, n - 1)] = -half.clone();
    q[(n, n)] = half;
    q
}

fn q_rational_42(n: usize) -> RatMatrix {
    let mut q = RatMatrix::zeros(n + 1, n + 1);
    // Boundary closure, rows 0..=3 over columns 0..=5.
    let block: [[Rational; 6]; 4] = [
        [
            rat(-1, 2),
            rat(59, 96),
            rat(-1, 12),
            rat(-1, 32),
            Rational::zero(),
            Rational::zero(),
        ],
        [
            rat(-59, 96),
            Rational::zero(),
            rat(59, 96),
            Rational::zero(),
            Rational::zero(),
            Rational::zero(),
        ],
        [
            rat(1, 12),
            rat(-59, 96),
            Rational::zero(),
            rat(59, 96),
            rat(-1, 12),
            Rational::zero(),
        ],
        [
            rat(1, 32),
            Rational::zero(),
            rat(-59, 96),
            Rational::zero(),
            rat(2, 3),
            rat(-1, 12),
        ],
    ];
    for (i, row) in block.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            q[(i, j)] = v.clone();
            // First-derivative closures mirror with a sign flip.
            q[(n - i, n - j)] = -v.clone();
        }
    }
    let interior = [rat(1, 12), rat(-2, 3), Rational::zero(), rat(2, 3), rat(-1, 12)];
    for i in 4..=n - 4 {
        for (k, v) in interior.iter().enumerate() {
            q[(i, i - 2 + k)] = v.clone();
        }
    }
    q
}

fn lower_first(
    variant: FirstVariant,
    grid: Grid,
    h_weights: Vec<Rational>,
    q_rat: RatMatrix,
) -> SbpFirstOp {
    let np = grid.num_nodes();
    let h = grid.h();
    let h_diag: Vec<f64> = h_weights.iter().map(|w| rational_to_f64(w) * h).collect();
    let q = q_rat.to_dense();
    let mut d1 = DenseMatrix::zeros(np, np);
    for i in 0..np {
        for j in 0..np {
            if !q_rat[(i, j)].is_zero() {
                let entry = &q_rat[(i, j)] / &h_weights[i];
                d1[(i, j)] = rational_to_f64(&entry) / h;
            }
        }
    }
    SbpFirstOp {
        variant,
        grid,
        h_diag,
        q,
        d1,
        h_weights,
        q_rat,
    }
}

/// Builds a first-derivative SBP bundle.
pub fn build_first(variant: FirstVariant, grid: &Grid) -> Result<SbpFirstOp> {
    let n = grid.n();
    if n < variant.min_n() {
        return Err(Error::GridTooSmall {
            variant: variant.name(),
            n,
            min: variant.min_n(),
        });
    }
    let np = grid.num_nodes();
    let (weights, q_rat) = match variant {
        FirstVariant::D121 => (norm_weights(false, np), q_rational_21(n)),
        FirstVariant::D142 => (norm_weights(true, np), q_rational_42(n)),
        FirstVariant::External => {
            return Err(Error::InvalidArgument(
                "external operators are built via build_first_external".into(),
            ))
        }
    };
    Ok(lower_first(variant, grid.clone(), weights, q_rat))
}

fn a_rational_tridiag(n: usize) -> RatMatrix {
    let mut a = RatMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        a[(i, i)] = rat(2, 1);
        if i > 0 {
            a[(i, i - 1)] = rat(-1, 1);
        }
        if i < n {
            a[(i, i + 1)] = rat(-1, 1);
        }
    }
    a[(0, 0)] = Rational::one();
    a[(n, n)] = Rational::one();
    a
}

fn a_rational_42(n: usize) -> RatMatrix {
    let mut a = RatMatrix::zeros(n + 1, n + 1);
    let block: [[Rational; 6]; 4] = [
        [
            rat(9, 8),
            rat(-59, 48),
            rat(1, 12),
            rat(1, 48),
            Rational::zero(),
            Rational::zero(),
        ],
        [
            rat(-59, 48),
            rat(59, 24),
            rat(-59, 48),
            Rational::zero(),
            Rational::zero(),
            Rational::zero(),
        ],
        [
            rat(1, 12),
            rat(-59, 48),
            rat(55, 24),
            rat(-59, 48),
            rat(1, 12),
            Rational::zero(),
        ],
        [
            rat(1, 48),
            Rational::zero(),
            rat(-59, 48),
            rat(59, 24),
            rat(-4, 3),
            rat(1, 12),
        ],
    ];
    for (i, row) in block.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = v.clone();
            a[(n - i, n - j)] = v.clone();
        }
    }
    let interior = [rat(1, 12), rat(-4, 3), rat(5, 2), rat(-4, 3), rat(1, 12)];
    for i in 4..=n - 4 {
        for (k, v) in interior.iter().enumerate() {
            a[(i, i - 2 + k)] = v.clone();
        }
    }
    a
}

fn mirror_d(dl: &[Rational]) -> Vec<Rational> {
    dl.iter().rev().map(|v| -v.clone()).collect()
}

fn d_vectors(stencil: &[Rational], np: usize) -> (Vec<Rational>, Vec<Rational>) {
    let mut dl = vec![Rational::zero(); np];
    for (i, v) in stencil.iter().enumerate() {
        dl[i] = v.clone();
    }
    let dr = mirror_d(&dl);
    (dl, dr)
}

fn lower_second(
    variant: SecondVariant,
    grid: Grid,
    h_weights: Vec<Rational>,
    a_rat: RatMatrix,
    dl_rat: Vec<Rational>,
    dr_rat: Vec<Rational>,
) -> SbpSecondOp {
    let np = grid.num_nodes();
    let n = grid.n();
    let h = grid.h();
    let h_diag: Vec<f64> = h_weights.iter().map(|w| rational_to_f64(w) * h).collect();
    let a = {
        let mut m = DenseMatrix::zeros(np, np);
        for i in 0..np {
            for j in 0..np {
                if !a_rat[(i, j)].is_zero() {
                    m[(i, j)] = rational_to_f64(&a_rat[(i, j)]) / h;
                }
            }
        }
        m
    };
    // D2 = H^{-1}(-A + e_R d_R^T - e_L d_L^T), assembled entrywise over
    // rationals before lowering.
    let mut d2 = DenseMatrix::zeros(np, np);
    let h2 = h * h;
    for i in 0..np {
        for j in 0..np {
            let mut entry = -a_rat[(i, j)].clone();
            if i == n {
                entry += &dr_rat[j];
            }
            if i == 0 {
                entry -= &dl_rat[j];
            }
            if !entry.is_zero() {
                d2[(i, j)] = rational_to_f64(&(&entry / &h_weights[i])) / h2;
            }
        }
    }
    let dl: Vec<f64> = dl_rat.iter().map(|v| rational_to_f64(v) / h).collect();
    let dr: Vec<f64> = dr_rat.iter().map(|v| rational_to_f64(v) / h).collect();
    SbpSecondOp {
        variant,
        grid,
        h_diag,
        a,
        d2,
        dl,
        dr,
        h_weights,
        a_rat,
        dl_rat,
        dr_rat,
    }
}

/// Builds a second-derivative SBP bundle.
pub fn build_second(variant: SecondVariant, grid: &Grid) -> Result<SbpSecondOp> {
    let n = grid.n();
    if n < variant.min_n() {
        return Err(Error::GridTooSmall {
            variant: variant.name(),
            n,
            min: variant.min_n(),
        });
    }
    let np = grid.num_nodes();
    let (weights, a_rat, dl_rat, dr_rat) = match variant {
        SecondVariant::N20 => {
            let (dl, dr) = d_vectors(&[rat(-1, 1), rat(1, 1)], np);
            (norm_weights(false, np), a_rational_tridiag(n), dl, dr)
        }
        SecondVariant::N21 => {
            let (dl, dr) = d_vectors(&[rat(-3, 2), rat(2, 1), rat(-1, 2)], np);
            (norm_weights(false, np), a_rational_tridiag(n), dl, dr)
        }
        SecondVariant::N42 => {
            let (dl, dr) = d_vectors(&[rat(-11, 6), rat(3, 1), rat(-3, 2), rat(1, 3)], np);
            (norm_weights(true, np), a_rational_42(n), dl, dr)
        }
        SecondVariant::W20 => {
            let weights = norm_weights(false, np);
            let q = q_rational_21(n);
            // D1 (dimensionless): rows of Q scaled by the norm weights.
            let mut d1 = RatMatrix::zeros(np, np);
            for i in 0..np {
                for j in 0..np {
                    if !q[(i, j)].is_zero() {
                        d1[(i, j)] = &q[(i, j)] / &weights[i];
                    }
                }
            }
            let d2 = d1.matmul(&d1);
            let d1t = d1.transpose();
            let dl: Vec<Rational> = (0..np).map(|i| d1t[(i, 0)].clone()).collect();
            let dr: Vec<Rational> = (0..np).map(|i| d1t[(i, n)].clone()).collect();
            // A = -W D2 + e_R d_R^T - e_L d_L^T (dimensionless form).
            let mut a = RatMatrix::zeros(np, np);
            for i in 0..np {
                for j in 0..np {
                    let mut entry = -(&weights[i] * &d2[(i, j)]);
                    if i == n {
                        entry += &dr[j];
                    }
                    if i == 0 {
                        entry -= &dl[j];
                    }
                    a[(i, j)] = entry;
                }
            }
            (weights, a, dl, dr)
        }
        SecondVariant::External => {
            return Err(Error::InvalidArgument(
                "external operators are built via build_second_external".into(),
            ))
        }
    };
    Ok(lower_second(
        variant,
        grid.clone(),
        weights,
        a_rat,
        dl_rat,
        dr_rat,
    ))
}

/// One named residual from an operator verification.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualEntry {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

/// Residual report over the SBP identities of a bundle.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SbpReport {
    pub variant: String,
    pub n: usize,
    pub entries: Vec<ResidualEntry>,
    /// Smallest eigenvalue of A for second-derivative bundles.
    pub min_eig: Option<f64>,
}

impl SbpReport {
    fn push(&mut self, name: &str, residual: f64, tolerance: f64) {
        self.entries.push(ResidualEntry {
            name: name.to_string(),
            residual,
            tolerance,
        });
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.residual))
    }

    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.residual <= e.tolerance)
    }
}

fn vec_residual(v: &[f64], target: impl Fn(usize) -> f64) -> f64 {
    v.iter()
        .enumerate()
        .fold(0.0, |m, (i, x)| m.max((x - target(i)).abs()))
}

/// Runs every first-derivative SBP invariant and reports max violations.
pub fn verify_first(op: &SbpFirstOp) -> SbpReport {
    let n = op.grid.n();
    let np = op.num_nodes();
    let mut report = SbpReport {
        variant: op.variant.name().into(),
        n,
        entries: vec![],
        min_eig: None,
    };

    let pos = op.h_diag.iter().cloned().fold(f64::INFINITY, f64::min);
    report.push("h_positive", if pos > 0.0 { 0.0 } else { 1.0 }, 0.0);

    // Q + Q^T = e_R e_R^T - e_L e_L^T, exact for the built-in variants.
    let mut qq = op.q.add(&op.q.transpose());
    qq[(0, 0)] += 1.0;
    qq[(n, n)] -= 1.0;
    report.push("sbp_identity", qq.max_abs(), 1e-12);

    // D1 = H^{-1} Q.
    let mut worst = 0.0f64;
    let scale = op.d1.max_abs();
    for i in 0..np {
        for j in 0..np {
            worst = worst.max((op.d1[(i, j)] - op.q[(i, j)] / op.h_diag[i]).abs());
        }
    }
    report.push("d1_is_hinv_q", worst / scale.max(1.0), 1e-12);

    // Consistency: D1 1 = 0 and D1 x = 1.
    let ones = vec![1.0; np];
    report.push(
        "d1_annihilates_constants",
        vec_residual(&op.d1.matvec(&ones), |_| 0.0) / scale.max(1.0),
        1e-12,
    );
    report.push(
        "d1_differentiates_x",
        vec_residual(&op.d1.matvec(op.grid.nodes()), |_| 1.0),
        1e-12,
    );

    // Q_{ij} = -Q_{n-i,n-j}: equivalent left/right closures.
    let mut centro = 0.0f64;
    for i in 0..np {
        for j in 0..np {
            centro = centro.max((op.q[(i, j)] + op.q[(n - i, n - j)]).abs());
        }
    }
    report.push("q_anticentrosymmetric", centro, 0.0);

    report
}

/// Runs every second-derivative SBP invariant and reports max violations.
pub fn verify_second(op: &SbpSecondOp) -> SbpReport {
    let n = op.grid.n();
    let np = op.num_nodes();
    let mut report = SbpReport {
        variant: op.variant.name().into(),
        n,
        entries: vec![],
        min_eig: None,
    };

    let pos = op.h_diag.iter().cloned().fold(f64::INFINITY, f64::min);
    report.push("h_positive", if pos > 0.0 { 0.0 } else { 1.0 }, 0.0);
    report.push("a_symmetric", op.a.asymmetry(), 1e-12 * op.a.max_abs());

    let min_eig = crate::linalg::min_eig_sym(&op.a).expect("A just checked symmetric");
    report.min_eig = Some(min_eig);
    report.push(
        "a_positive_semidefinite",
        (-min_eig).max(0.0),
        1e-10 * op.a.max_abs().max(1.0),
    );

    // D2 = H^{-1}(-A + e_R d_R^T - e_L d_L^T).
    let scale = op.d2.max_abs();
    let mut worst = 0.0f64;
    for i in 0..np {
        for j in 0..np {
            let mut num = -op.a[(i, j)];
            if i == n {
                num += op.dr[j];
            }
            if i == 0 {
                num -= op.dl[j];
            }
            worst = worst.max((op.d2[(i, j)] - num / op.h_diag[i]).abs());
        }
    }
    report.push("d2_is_hinv_form", worst / scale.max(1.0), 1e-12);

    let ones = vec![1.0; np];
    report.push(
        "d2_annihilates_constants",
        vec_residual(&op.d2.matvec(&ones), |_| 0.0) / scale.max(1.0),
        1e-12,
    );
    report.push(
        "d2_annihilates_x",
        vec_residual(&op.d2.matvec(op.grid.nodes()), |_| 0.0) / scale.max(1.0),
        1e-12,
    );

    let d_scale = crate::matrix::norm_inf_vec(&op.dl).max(1.0);
    report.push(
        "dl_annihilates_constants",
        op.dl.iter().sum::<f64>().abs() / d_scale,
        1e-13,
    );
    report.push(
        "dl_differentiates_x",
        (crate::matrix::dot(&op.dl, op.grid.nodes()) - 1.0).abs(),
        1e-12,
    );
    report.push(
        "dr_annihilates_constants",
        op.dr.iter().sum::<f64>().abs() / d_scale,
        1e-13,
    );
    report.push(
        "dr_differentiates_x",
        (crate::matrix::dot(&op.dr, op.grid.nodes()) - 1.0).abs(),
        1e-12,
    );

    report.push("a_centrosymmetric", op.a.centrosymmetry_defect(), 0.0);
    let mut d_mirror = 0.0f64;
    for i in 0..np {
        d_mirror = d_mirror.max((op.dl[i] + op.dr[np - 1 - i]).abs());
    }
    report.push("d_mirror", d_mirror, 0.0);

    if op.variant == SecondVariant::W20 {
        // Wide stencil: D2 = D1 D1 and d_{L,R} = D1^T e_{L,R}, exactly.
        let grid = &op.grid;
        let d1op = build_first(FirstVariant::D121, grid).expect("valid grid");
        let sq = d1op.d1.matmul(&d1op.d1);
        report.push("wide_is_d1_squared", sq.sub(&op.d2).max_abs() / scale, 1e-13);
        let d1t = d1op.d1.transpose();
        let mut worst = 0.0f64;
        for i in 0..np {
            worst = worst.max((op.dl[i] - d1t[(i, 0)]).abs());
            worst = worst.max((op.dr[i] - d1t[(i, n)]).abs());
        }
        report.push("wide_d_from_d1", worst, 0.0);
    }

    report
}

/// One coefficient table from the external-operator CSV format:
/// a `variant,rows,cols` header line followed by `i,j,value` triplets,
/// values in exact decimal or `p/q` rational syntax.
#[derive(Debug, Clone)]
pub struct CoeffTable {
    pub variant: String,
    pub matrix: RatMatrix,
}

pub fn parse_coeff_csv(text: &str) -> Result<CoeffTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidCoefficients("empty file".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(Error::InvalidCoefficients(format!(
            "header must be `variant,rows,cols`, got {header:?}"
        )));
    }
    let variant = fields[0].to_string();
    let rows: usize = fields[1]
        .parse()
        .map_err(|_| Error::InvalidCoefficients(format!("bad row count {:?}", fields[1])))?;
    let cols: usize = fields[2]
        .parse()
        .map_err(|_| Error::InvalidCoefficients(format!("bad col count {:?}", fields[2])))?;
    let mut matrix = RatMatrix::zeros(rows, cols);
    for line in lines {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidCoefficients(format!(
                "expected `i,j,value`, got {line:?}"
            )));
        }
        let i: usize = parts[0]
            .parse()
            .map_err(|_| Error::InvalidCoefficients(format!("bad row index {:?}", parts[0])))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|_| Error::InvalidCoefficients(format!("bad col index {:?}", parts[1])))?;
        if i >= rows || j >= cols {
            return Err(Error::InvalidCoefficients(format!(
                "index ({i},{j}) outside {rows}x{cols}"
            )));
        }
        matrix[(i, j)] = parse_rational(parts[2])?;
    }
    Ok(CoeffTable { variant, matrix })
}

pub fn load_coeff_csv(path: &std::path::Path) -> Result<CoeffTable> {
    parse_coeff_csv(&std::fs::read_to_string(path)?)
}

/// Builds a first-derivative bundle from externally supplied exact
/// coefficients: `h_table` is 1 x (n+1) dimensionless norm weights,
/// `q_table` the (n+1) x (n+1) dimensionless Q.
pub fn build_first_external(
    grid: &Grid,
    h_table: &CoeffTable,
    q_table: &CoeffTable,
) -> Result<SbpFirstOp> {
    let np = grid.num_nodes();
    if h_table.matrix.rows() != 1 || h_table.matrix.cols() != np {
        return Err(Error::InvalidCoefficients(format!(
            "norm table must be 1x{np}"
        )));
    }
    if q_table.matrix.rows() != np || q_table.matrix.cols() != np {
        return Err(Error::InvalidCoefficients(format!(
            "Q table must be {np}x{np}"
        )));
    }
    let weights: Vec<Rational> = (0..np).map(|j| h_table.matrix[(0, j)].clone()).collect();
    if weights.iter().any(|w| !w.is_positive()) {
        return Err(Error::InvalidCoefficients(
            "norm weights must be positive".into(),
        ));
    }
    Ok(lower_first(
        FirstVariant::External,
        grid.clone(),
        weights,
        q_table.matrix.clone(),
    ))
}

/// Builds a second-derivative bundle from external exact coefficients:
/// dimensionless norm weights (1 x (n+1)), A ((n+1) x (n+1)) and the
/// two boundary derivative stencils (1 x (n+1) each).
pub fn build_second_external(
    grid: &Grid,
    h_table: &CoeffTable,
    a_table: &CoeffTable,
    dl_table: &CoeffTable,
    dr_table: &CoeffTable,
) -> Result<SbpSecondOp> {
    let np = grid.num_nodes();
    for (name, t, rows, cols) in [
        ("norm", h_table, 1, np),
        ("A", a_table, np, np),
        ("dL", dl_table, 1, np),
        ("dR", dr_table, 1, np),
    ] {
        if t.matrix.rows() != rows || t.matrix.cols() != cols {
            return Err(Error::InvalidCoefficients(format!(
                "{name} table must be {rows}x{cols}"
            )));
        }
    }
    let weights: Vec<Rational> = (0..np).map(|j| h_table.matrix[(0, j)].clone()).collect();
    if weights.iter().any(|w| !w.is_positive()) {
        return Err(Error::InvalidCoefficients(
            "norm weights must be positive".into(),
        ));
    }
    let dl: Vec<Rational> = (0..np).map(|j| dl_table.matrix[(0, j)].clone()).collect();
    let dr: Vec<Rational> = (0..np).map(|j| dr_table.matrix[(0, j)].clone()).collect();
    Ok(lower_second(
        SecondVariant::External,
        grid.clone(),
        weights,
        a_table.matrix.clone(),
        dl,
        dr,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 1.0).unwrap()
    }

    #[test]
    fn d1_21_row0() {
        let op = build_first(FirstVariant::D121, &grid(4)).unwrap();
        let h = op.grid.h();
        let row: Vec<f64> = op.d1.row(0).to_vec();
        assert_eq!(row, vec![-1.0 / h, 1.0 / h, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn d1_21_norm_matrix() {
        let op = build_first(FirstVariant::D121, &grid(6)).unwrap();
        let h = op.grid.h();
        assert_eq!(op.h_diag[0], h / 2.0);
        assert_eq!(op.h_diag[3], h);
        assert_eq!(op.h_diag[6], h / 2.0);
    }

    #[test]
    fn d1_42_golden_entries() {
        let op = build_first(FirstVariant::D142, &grid(8)).unwrap();
        assert_eq!(op.q[(0, 1)], 59.0 / 96.0);
        assert_eq!(op.q[(0, 0)], -0.5);
        assert_eq!(op.q[(3, 4)], 2.0 / 3.0);
        assert_eq!(op.q[(8, 5)], 1.0 / 32.0);
        // Norm closure weights.
        let h = op.grid.h();
        assert_eq!(op.h_diag[0], 17.0 / 48.0 * h);
        assert_eq!(op.h_diag[1], 59.0 / 48.0 * h);
        assert_eq!(op.h_diag[2], 43.0 / 48.0 * h);
        assert_eq!(op.h_diag[3], 49.0 / 48.0 * h);
        assert_eq!(op.h_diag[4], h);
    }

    #[test]
    fn first_verify_clean() {
        for (variant, n) in [(FirstVariant::D121, 10), (FirstVariant::D142, 12)] {
            let op = build_first(variant, &grid(n)).unwrap();
            let report = verify_first(&op);
            assert!(report.all_ok(), "{report:?}");
        }
        // On a dyadic mesh every entry and node is a dyadic rational,
        // so all residuals vanish exactly.
        let op = build_first(FirstVariant::D121, &grid(8)).unwrap();
        assert_eq!(verify_first(&op).max_residual(), 0.0);
    }

    #[test]
    fn corrupted_q_is_reported() {
        let mut op = build_first(FirstVariant::D121, &grid(8)).unwrap();
        op.q[(2, 3)] += 1e-3;
        let report = verify_first(&op);
        assert!(!report.all_ok());
        let sbp = report
            .entries
            .iter()
            .find(|e| e.name == "sbp_identity")
            .unwrap();
        assert!((sbp.residual - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn grid_too_small_errors() {
        assert!(matches!(
            build_first(FirstVariant::D142, &grid(7)),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(matches!(
            build_second(SecondVariant::N42, &grid(7)),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn n20_matrix_a() {
        let op = build_second(SecondVariant::N20, &grid(4)).unwrap();
        let h = op.grid.h();
        let expect = [
            [1.0, -1.0, 0.0, 0.0, 0.0],
            [-1.0, 2.0, -1.0, 0.0, 0.0],
            [0.0, -1.0, 2.0, -1.0, 0.0],
            [0.0, 0.0, -1.0, 2.0, -1.0],
            [0.0, 0.0, 0.0, -1.0, 1.0],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(op.a[(i, j)], expect[i][j] / h, "({i},{j})");
            }
        }
        // (2,0) boundary rows of D2 are zero.
        assert!(op.d2.row(0).iter().all(|&v| v == 0.0));
        assert!(op.d2.row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn w20_d2_row2() {
        let op = build_second(SecondVariant::W20, &grid(6)).unwrap();
        let h2 = op.grid.h() * op.grid.h();
        let row: Vec<f64> = op.d2.row(2).to_vec();
        let expect = [0.25, 0.0, -0.5, 0.0, 0.25, 0.0, 0.0];
        for (got, want) in row.iter().zip(expect.iter()) {
            assert!((got - want / h2).abs() < 1e-12 / h2, "{row:?}");
        }
    }

    #[test]
    fn n42_abar_corner() {
        let op = build_second(SecondVariant::N42, &grid(8)).unwrap();
        let h = op.grid.h();
        let abar = op.abar();
        assert!((abar[(0, 0)] - 59.0 / (24.0 * h)).abs() < 1e-12 / h);
    }

    #[test]
    fn second_verify_clean_all_variants() {
        for (variant, n) in [
            (SecondVariant::N20, 4),
            (SecondVariant::N20, 9),
            (SecondVariant::N21, 4),
            (SecondVariant::N21, 10),
            (SecondVariant::N42, 8),
            (SecondVariant::N42, 12),
            (SecondVariant::W20, 4),
            (SecondVariant::W20, 5),
            (SecondVariant::W20, 10),
        ] {
            let op = build_second(variant, &grid(n)).unwrap();
            let report = verify_second(&op);
            assert!(report.all_ok(), "{variant:?}: {report:?}");
            assert!(report.min_eig.unwrap() >= -1e-10);
        }
    }

    #[test]
    fn n20_a_annihilates_constants() {
        // A 1 = 0, so the smallest eigenvalue sits at zero exactly.
        let op = build_second(SecondVariant::N20, &grid(8)).unwrap();
        let ones = vec![1.0; 9];
        assert!(crate::matrix::norm_inf_vec(&op.a.matvec(&ones)) == 0.0);
        let min_eig = crate::linalg::min_eig_sym(&op.a).unwrap();
        assert!(min_eig.abs() <= 1e-10);
    }

    #[test]
    fn n21_d_vectors() {
        let op = build_second(SecondVariant::N21, &grid(5)).unwrap();
        let h = op.grid.h();
        assert_eq!(op.dl[0], -1.5 / h);
        assert_eq!(op.dl[1], 2.0 / h);
        assert_eq!(op.dl[2], -0.5 / h);
        assert_eq!(op.dr[5], 1.5 / h);
        assert_eq!(op.dr[4], -2.0 / h);
        assert_eq!(op.dr[3], 0.5 / h);
    }

    fn accuracy_first(variant: FirstVariant, n: usize, p_max: u32) {
        let g = grid(n);
        let op = build_first(variant, &g).unwrap();
        // Interior rows differentiate monomials up to the interior order
        // exactly (up to roundoff).
        for p in 0..=p_max {
            let u: Vec<f64> = g.nodes().iter().map(|&x| x.powi(p as i32)).collect();
            let du = op.d1.matvec(&u);
            for i in 4..=n - 4 {
                let want = if p == 0 {
                    0.0
                } else {
                    p as f64 * g.nodes()[i].powi(p as i32 - 1)
                };
                assert!(
                    (du[i] - want).abs() < 1e-11 / g.h(),
                    "{variant:?} p={p} i={i}: {} vs {}",
                    du[i],
                    want
                );
            }
        }
    }

    #[test]
    fn interior_accuracy() {
        accuracy_first(FirstVariant::D121, 16, 2);
        accuracy_first(FirstVariant::D142, 16, 4);
        // Second derivative: monomials up to p = 2 interior for all
        // variants; order-4 interior for N42 handles p = 3, 4 too.
        for (variant, p_max) in [
            (SecondVariant::N20, 3),
            (SecondVariant::N21, 3),
            (SecondVariant::W20, 2),
            (SecondVariant::N42, 4),
        ] {
            let g = grid(16);
            let op = build_second(variant, &g).unwrap();
            for p in 0..=p_max {
                let u: Vec<f64> = g.nodes().iter().map(|&x| x.powi(p)).collect();
                let ddu = op.d2.matvec(&u);
                for i in 4..=12 {
                    let want = if p < 2 {
                        0.0
                    } else {
                        (p * (p - 1)) as f64 * g.nodes()[i].powi(p - 2)
                    };
                    assert!(
                        (ddu[i] - want).abs() < 1e-10 / (g.h() * g.h()),
                        "{variant:?} p={p} i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn coeff_csv_roundtrip() {
        // Rebuild the (2,1) first-derivative operator through the
        // external loader and compare against the built-in path.
        let g = grid(6);
        let builtin = build_first(FirstVariant::D121, &g).unwrap();
        let mut h_csv = String::from("d1_21,1,7\n");
        h_csv.push_str("0,0,1/2\n0,6,0.5\n");
        for j in 1..6 {
            h_csv.push_str(&format!("0,{j},1\n"));
        }
        let mut q_csv = String::from("d1_21,7,7\n");
        for i in 0..7 {
            for j in 0..7 {
                let v = &builtin.q_rational()[(i, j)];
                if !v.is_zero() {
                    q_csv.push_str(&format!("{i},{j},{}/{}\n", v.numer(), v.denom()));
                }
            }
        }
        let h_table = parse_coeff_csv(&h_csv).unwrap();
        let q_table = parse_coeff_csv(&q_csv).unwrap();
        let external = build_first_external(&g, &h_table, &q_table).unwrap();
        assert_eq!(external.q, builtin.q);
        assert_eq!(external.h_diag, builtin.h_diag);
        assert!(verify_first(&external).all_ok());
    }

    #[test]
    fn bundles_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<SbpFirstOp>();
        assert_send_sync::<SbpSecondOp>();
        assert_send_sync::<crate::matrix::DenseMatrix>();
        assert_send_sync::<crate::exact::RatMatrix>();
    }

    #[test]
    fn coeff_csv_rejects_malformed() {
        assert!(parse_coeff_csv("").is_err());
        assert!(parse_coeff_csv("v,2,2\n5,0,1\n").is_err());
        assert!(parse_coeff_csv("v,2\n").is_err());
        assert!(parse_coeff_csv("v,2,2\n0,0,1/0\n").is_err());
    }
}
