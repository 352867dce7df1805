//! Steady solves through the structural inverses or LU, method-of-lines
//! time integration with the classical RK4 scheme, energy monitoring,
//! and manufactured-solution convergence studies.

use crate::error::{Error, Result};
use crate::green_first::invert_general_first;
use crate::green_second::invert_general_second;
use crate::linalg::LuFactors;
use crate::matrix::{norm_inf_vec, DenseMatrix};
use crate::operators::{build_first, build_second, FirstVariant, SecondVariant};
use crate::sat::{AssembledFirst, AssembledSecond, SatFirst, SatSecond};

/// Which path produced a steady solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyRoute {
    /// Structural inverse (the Green's-function formula).
    ClosedForm,
    /// Plain dense LU on the assembled system.
    Lu,
}

#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub v: Vec<f64>,
    /// `‖K v − H f̃‖_∞ / max(1, ‖H f̃‖_∞)`.
    pub residual: f64,
    pub route: SteadyRoute,
}

fn steady_residual(k: &DenseMatrix, v: &[f64], rhs: &[f64]) -> f64 {
    let kv = k.matvec(v);
    let mut worst = 0.0f64;
    for i in 0..rhs.len() {
        worst = worst.max((kv[i] - rhs[i]).abs());
    }
    worst / norm_inf_vec(rhs).max(1.0)
}

/// Steady advection solve `K v = H f̃` with inflow data `g_l`.
pub fn solve_steady_first(
    sys: &AssembledFirst,
    f: impl Fn(f64) -> f64,
    g_l: f64,
    route: SteadyRoute,
) -> Result<SteadySolution> {
    let f_vec: Vec<f64> = sys.grid.nodes().iter().map(|&x| f(x)).collect();
    let ft = sys.forcing(&f_vec, g_l);
    let rhs: Vec<f64> = ft
        .iter()
        .zip(&sys.h_diag)
        .map(|(v, h)| v * h)
        .collect();
    let v = match route {
        SteadyRoute::ClosedForm => invert_general_first(sys)?.kinv.matvec(&rhs),
        SteadyRoute::Lu => LuFactors::new(&sys.k)
            .map_err(|_| Error::SingularSystem)?
            .solve(&rhs),
    };
    let residual = steady_residual(&sys.k, &v, &rhs);
    Ok(SteadySolution { v, residual, route })
}

/// Steady heat solve `K v = H f̃` with Robin data `g_l`, `g_r`.
pub fn solve_steady_second(
    sys: &AssembledSecond,
    f: impl Fn(f64) -> f64,
    g_l: f64,
    g_r: f64,
    route: SteadyRoute,
) -> Result<SteadySolution> {
    let f_vec: Vec<f64> = sys.grid.nodes().iter().map(|&x| f(x)).collect();
    let ft = sys.forcing(&f_vec, g_l, g_r);
    let rhs: Vec<f64> = ft
        .iter()
        .zip(&sys.h_diag)
        .map(|(v, h)| v * h)
        .collect();
    let v = match route {
        SteadyRoute::ClosedForm => invert_general_second(sys)?.kinv.matvec(&rhs),
        SteadyRoute::Lu => LuFactors::new(&sys.k)
            .map_err(|_| Error::SingularSystem)?
            .solve(&rhs),
    };
    let residual = steady_residual(&sys.k, &v, &rhs);
    Ok(SteadySolution { v, residual, route })
}

/// A method-of-lines trajectory with its H-norm energy series.
#[derive(Debug, Clone)]
pub struct TransientRun {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
}

/// Time-dependent data for a transient run; `None` means zero.
pub struct TransientData<'a> {
    /// Forcing f(t, x).
    pub f: Option<&'a dyn Fn(f64, f64) -> f64>,
    /// Left boundary data g_L(t).
    pub g_l: Option<&'a dyn Fn(f64) -> f64>,
    /// Right boundary data g_R(t); ignored by the advection scheme.
    pub g_r: Option<&'a dyn Fn(f64) -> f64>,
}

impl TransientData<'_> {
    pub fn homogeneous() -> Self {
        TransientData {
            f: None,
            g_l: None,
            g_r: None,
        }
    }

    fn is_homogeneous(&self) -> bool {
        self.f.is_none() && self.g_l.is_none() && self.g_r.is_none()
    }
}

/// Default CFL constant for the dt caps `c h` (advection), `c h^2` (heat).
pub const DEFAULT_CFL: f64 = 0.25;

/// Energy growth beyond this relative factor per step aborts the run.
pub const ENERGY_GROWTH_TOL: f64 = 1e-6;

struct Rk4System<'a> {
    /// The spatial operator `L = H^{-1} K`.
    l: DenseMatrix,
    h_diag: &'a [f64],
    forcing: Box<dyn Fn(f64) -> Vec<f64> + 'a>,
    homogeneous: bool,
}

fn rk4_run(
    sys: Rk4System<'_>,
    v0: &[f64],
    t_end: f64,
    dt_cap: f64,
    dt: Option<f64>,
) -> Result<TransientRun> {
    // Within the cap, keep lambda*dt inside the RK4 real-axis stability
    // region using a Gershgorin bound on the spatial operator.
    let gersh = sys.l.norm_inf().max(f64::MIN_POSITIVE);
    let auto = dt_cap.min(2.5 / gersh);
    let dt = dt.unwrap_or(auto);
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("bad time step {dt}")));
    }
    let steps = (t_end / dt).ceil() as usize;
    let steps = steps.max(1);

    let energy_of = |v: &[f64]| -> f64 {
        v.iter()
            .zip(sys.h_diag)
            .map(|(vi, hi)| hi * vi * vi)
            .sum()
    };

    let rhs = |t: f64, v: &[f64]| -> Vec<f64> {
        let mut out = sys.l.matvec(v);
        for o in out.iter_mut() {
            *o = -*o;
        }
        let ft = (sys.forcing)(t);
        for (o, f) in out.iter_mut().zip(&ft) {
            *o += f;
        }
        out
    };

    let np = v0.len();
    let mut v = v0.to_vec();
    let mut t = 0.0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut energy = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(v.clone());
    energy.push(energy_of(&v));

    for step in 0..steps {
        let k1 = rhs(t, &v);
        let mut stage = vec![0.0; np];
        for i in 0..np {
            stage[i] = v[i] + 0.5 * dt * k1[i];
        }
        let k2 = rhs(t + 0.5 * dt, &stage);
        for i in 0..np {
            stage[i] = v[i] + 0.5 * dt * k2[i];
        }
        let k3 = rhs(t + 0.5 * dt, &stage);
        for i in 0..np {
            stage[i] = v[i] + dt * k3[i];
        }
        let k4 = rhs(t + dt, &stage);
        for i in 0..np {
            v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += dt;

        let e = energy_of(&v);
        let e_prev = *energy.last().unwrap();
        if sys.homogeneous && e > e_prev * (1.0 + ENERGY_GROWTH_TOL) && e_prev > 0.0 {
            return Err(Error::UnstableStep {
                step,
                ratio: e / e_prev,
            });
        }
        times.push(t);
        states.push(v.clone());
        energy.push(e);
    }

    Ok(TransientRun {
        times,
        states,
        energy,
        dt,
        steps,
    })
}

/// RK4 integration of the advection scheme `v_t + H^{-1} K v = f̃(t)`.
pub fn integrate_first(
    sys: &AssembledFirst,
    data: &TransientData<'_>,
    v0: &[f64],
    t_end: f64,
    dt: Option<f64>,
) -> Result<TransientRun> {
    let np = sys.grid.num_nodes();
    assert_eq!(v0.len(), np, "initial state length mismatch");
    let mut l = DenseMatrix::zeros(np, np);
    for i in 0..np {
        for j in 0..np {
            l[(i, j)] = sys.k[(i, j)] / sys.h_diag[i];
        }
    }
    let nodes = sys.grid.nodes().to_vec();
    let forcing = move |t: f64| -> Vec<f64> {
        let f_vec: Vec<f64> = nodes
            .iter()
            .map(|&x| data.f.map_or(0.0, |f| f(t, x)))
            .collect();
        let g_l = data.g_l.map_or(0.0, |g| g(t));
        sys.forcing(&f_vec, g_l)
    };
    let dt_cap = DEFAULT_CFL * sys.grid.h();
    rk4_run(
        Rk4System {
            l,
            h_diag: &sys.h_diag,
            forcing: Box::new(forcing),
            homogeneous: data.is_homogeneous(),
        },
        v0,
        t_end,
        dt_cap,
        dt,
    )
}

/// RK4 integration of the heat scheme `v_t + H^{-1} K v = f̃(t)`.
pub fn integrate_second(
    sys: &AssembledSecond,
    data: &TransientData<'_>,
    v0: &[f64],
    t_end: f64,
    dt: Option<f64>,
) -> Result<TransientRun> {
    let np = sys.grid.num_nodes();
    assert_eq!(v0.len(), np, "initial state length mismatch");
    let mut l = DenseMatrix::zeros(np, np);
    for i in 0..np {
        for j in 0..np {
            l[(i, j)] = sys.k[(i, j)] / sys.h_diag[i];
        }
    }
    let nodes = sys.grid.nodes().to_vec();
    let forcing = move |t: f64| -> Vec<f64> {
        let f_vec: Vec<f64> = nodes
            .iter()
            .map(|&x| data.f.map_or(0.0, |f| f(t, x)))
            .collect();
        let g_l = data.g_l.map_or(0.0, |g| g(t));
        let g_r = data.g_r.map_or(0.0, |g| g(t));
        sys.forcing(&f_vec, g_l, g_r)
    };
    let dt_cap = DEFAULT_CFL * sys.grid.h() * sys.grid.h();
    rk4_run(
        Rk4System {
            l,
            h_diag: &sys.h_diag,
            forcing: Box::new(forcing),
            homogeneous: data.is_homogeneous(),
        },
        v0,
        t_end,
        dt_cap,
        dt,
    )
}

/// A manufactured solution with the derivatives the studies need.
pub struct Manufactured<'a> {
    pub u: &'a dyn Fn(f64) -> f64,
    pub du: &'a dyn Fn(f64) -> f64,
    pub d2u: &'a dyn Fn(f64) -> f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub error: f64,
    pub rate: Option<f64>,
}

fn l2h_error(v: &[f64], exact: &[f64], h_diag: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..v.len() {
        let d = v[i] - exact[i];
        s += h_diag[i] * d * d;
    }
    s.sqrt()
}

fn rates(rows: &mut [ConvergenceRow]) {
    for k in 1..rows.len() {
        let r = (rows[k - 1].error / rows[k].error).ln()
            / (rows[k].h / rows[k - 1].h).recip().ln();
        rows[k].rate = Some(r);
    }
}

/// Steady advection convergence against a manufactured solution:
/// solves `u_x = f` with `f = u'` and inflow `g_L = u(0)`.
pub fn convergence_study_first(
    variant: FirstVariant,
    sat: SatFirst,
    ms: &Manufactured<'_>,
    ell: f64,
    sizes: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    assert!(sizes.len() >= 3, "need at least three grid sizes");
    assert!(sizes.windows(2).all(|w| w[0] < w[1]), "sizes must increase");
    let mut rows = Vec::new();
    for &n in sizes {
        let grid = crate::grid::Grid::new(n, ell)?;
        let op = build_first(variant, &grid)?;
        let sys = crate::sat::assemble_first(&op, sat);
        let sol = solve_steady_first(&sys, ms.du, (ms.u)(0.0), SteadyRoute::Lu)?;
        let exact: Vec<f64> = grid.nodes().iter().map(|&x| (ms.u)(x)).collect();
        rows.push(ConvergenceRow {
            n,
            h: grid.h(),
            error: l2h_error(&sol.v, &exact, &sys.h_diag),
            rate: None,
        });
    }
    rates(&mut rows);
    Ok(rows)
}

/// Steady heat convergence: solves `-u_xx = f` with `f = -u''` and
/// Robin data derived from the manufactured solution.
pub fn convergence_study_second(
    variant: SecondVariant,
    sat_for: impl Fn(&crate::operators::SbpSecondOp) -> SatSecond,
    ms: &Manufactured<'_>,
    ell: f64,
    sizes: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    assert!(sizes.len() >= 3, "need at least three grid sizes");
    assert!(sizes.windows(2).all(|w| w[0] < w[1]), "sizes must increase");
    let mut rows = Vec::new();
    for &n in sizes {
        let grid = crate::grid::Grid::new(n, ell)?;
        let op = build_second(variant, &grid)?;
        let sat = sat_for(&op);
        let g_l = sat.alpha_l * (ms.u)(0.0) - sat.beta_l * (ms.du)(0.0);
        let g_r = sat.alpha_r * (ms.u)(ell) + sat.beta_r * (ms.du)(ell);
        let sys = crate::sat::assemble_second(&op, sat);
        let sol = solve_steady_second(&sys, |x| -(ms.d2u)(x), g_l, g_r, SteadyRoute::Lu)?;
        let exact: Vec<f64> = grid.nodes().iter().map(|&x| (ms.u)(x)).collect();
        rows.push(ConvergenceRow {
            n,
            h: grid.h(),
            error: l2h_error(&sol.v, &exact, &sys.h_diag),
            rate: None,
        });
    }
    rates(&mut rows);
    Ok(rows)
}
