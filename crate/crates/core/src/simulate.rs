//! Forward state solves, the independent costate march, the closed-form
//! terminal profile, and discrete residuals of the optimality system.

use serde::Serialize;

use crate::cost::CostReport;
use crate::error::{Error, Result};
use crate::grid::{Field, UniformGrid};
use crate::problem::{ResolvedProblem, TargetMode};
use crate::synthesis::{self, FeedbackLaw};

/// One right-neighbour upwind step of `x_t - c x_z = source`.
///
/// Shared with the oracle so that both march the same discrete dynamics.
#[inline]
pub(crate) fn upwind_forward(x: f64, right: f64, mu: f64, tau: f64, source: f64) -> f64 {
    x + mu * (right - x) + tau * source
}

/// One left-neighbour upwind step of `y_s + c y_z = source` in reversed time.
#[inline]
fn upwind_backward(y: f64, left: f64, mu: f64, tau: f64, source: f64) -> f64 {
    y - mu * (y - left) + tau * source
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResidualReport {
    pub state_pde_resid: f64,
    pub costate_pde_resid: f64,
    pub terminal_costate_resid: f64,
    pub stationarity_resid: f64,
    pub transform_resid: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Field,
    pub u: Field,
    pub lambda: Field,
    pub terminal_error_inf: f64,
    pub costs: Option<CostReport>,
    pub residuals: Option<ResidualReport>,
}

fn check_level(level: &[f64], grid: &UniformGrid, k: usize, what: &'static str) -> Result<()> {
    match level.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            what,
            z: grid.z(i),
            t: grid.t(k),
        }),
        None => Ok(()),
    }
}

/// Marches the state forward with `source(i, k, x_i)` evaluated at the known level.
fn march_forward(problem: &ResolvedProblem, source: impl Fn(usize, usize, f64) -> f64) -> Result<Field> {
    let grid = problem.grid;
    grid.check_cfl(problem.spec.c)?;
    let (nz, nt, tau) = (grid.nz(), grid.nt(), grid.tau());
    let mu = grid.cfl(problem.spec.c);
    let mut values = vec![0.0; nz * nt];
    let mut level = problem.varphi_samples.clone();
    let mut next = vec![0.0; nz];
    for (i, &v) in level.iter().enumerate() {
        values[i * nt] = v;
    }
    for k in 0..nt - 1 {
        for i in 0..nz - 1 {
            next[i] = upwind_forward(level[i], level[i + 1], mu, tau, source(i, k, level[i]));
        }
        next[nz - 1] = problem.phi_samples[k + 1];
        check_level(&next, &grid, k + 1, "state")?;
        std::mem::swap(&mut level, &mut next);
        for (i, &v) in level.iter().enumerate() {
            values[i * nt + k + 1] = v;
        }
    }
    Field::from_values(grid, values, None)
}

pub fn closed_loop(problem: &ResolvedProblem, law: &FeedbackLaw) -> Result<SolveResult> {
    let grid = problem.grid;
    law.psi.same_grid(&Field::zeros(grid))?;
    let bbar = problem.bbar;
    let abar = &law.riccati.abar;
    let psi = &law.psi;
    let x = march_forward(problem, |i, k, x| abar.get(i, k) * x + bbar * psi.get(i, k))?;
    let lambda = Field::from_fn(grid, |i, k| law.costate(i, k, x.get(i, k)));
    let gain = problem.spec.b / problem.spec.r;
    let u = lambda.map(|l| -gain * l);
    let last = grid.nt() - 1;
    let terminal_error_inf = (0..grid.nz())
        .map(|i| (x.get(i, last) - law.eta_samples[i]).abs())
        .fold(0.0, f64::max);
    Ok(SolveResult {
        x,
        u,
        lambda,
        terminal_error_inf,
        costs: None,
        residuals: None,
    })
}

/// State driven by a prescribed control field.
pub fn open_loop(problem: &ResolvedProblem, u: &Field) -> Result<Field> {
    u.same_grid(&Field::zeros(problem.grid))?;
    let (a, b) = (problem.spec.a, problem.spec.b);
    march_forward(problem, |i, k, x| a * x + b * u.get(i, k))
}

/// Independent backward march of the adjoint equation from `p x(T) + gamma`.
pub fn costate_solve(x: &Field, problem: &ResolvedProblem, gamma: &[f64]) -> Result<Field> {
    let grid = problem.grid;
    grid.check_cfl(problem.spec.c)?;
    x.same_grid(&Field::zeros(grid))?;
    let (nz, nt, tau) = (grid.nz(), grid.nt(), grid.tau());
    let mu = grid.cfl(problem.spec.c);
    let (a, q) = (problem.spec.a, problem.spec.q);
    let last = nt - 1;
    let mut values = vec![0.0; nz * nt];
    let mut level: Vec<f64> = (0..nz)
        .map(|i| problem.p_samples[i] * x.get(i, last) + gamma[i])
        .collect();
    level[0] = 0.0;
    for (i, &v) in level.iter().enumerate() {
        values[i * nt + last] = v;
    }
    let mut next = vec![0.0; nz];
    for k in (0..last).rev() {
        for i in 1..nz {
            let y = level[i];
            next[i] = upwind_backward(y, level[i - 1], mu, tau, a * y + q * x.get(i, k + 1));
        }
        check_level(&next, &grid, k, "costate")?;
        std::mem::swap(&mut level, &mut next);
        for (i, &v) in level.iter().enumerate() {
            values[i * nt + k] = v;
        }
    }
    Field::from_values(grid, values, None)
}

/// Terminal state predicted by integrating the closed loop along characteristics.
pub fn closed_form_terminal(law: &FeedbackLaw, problem: &ResolvedProblem) -> Result<Vec<f64>> {
    let grid = problem.grid;
    let spec = &problem.spec;
    let e = &law.riccati.e;
    let last = grid.nt() - 1;
    let denominators = synthesis::gamma_denominators(e, spec.c, problem.bbar)?;
    (0..grid.nz())
        .map(|i| {
            let e_t = e.get(i, last);
            let phi = problem.phi_at(spec.horizon - (spec.length - grid.z(i)) / spec.c)?;
            Ok(phi / e_t + law.gamma[i] * denominators[i] / (spec.c * e_t * e_t))
        })
        .collect()
}

/// `|f_t - c f_z - rhs|` by centred differences, two layers in from every edge.
fn centred_residual(
    f: &Field,
    c: f64,
    valid: impl Fn(usize, usize) -> bool,
    rhs: impl Fn(usize, usize) -> f64,
) -> f64 {
    let grid = f.grid();
    let (nz, nt, h, tau) = (grid.nz(), grid.nt(), grid.h(), grid.tau());
    let mut worst: f64 = 0.0;
    for i in 2..nz.saturating_sub(2) {
        for k in 2..nt.saturating_sub(2) {
            if !(valid(i, k) && valid(i - 1, k) && valid(i + 1, k) && valid(i, k - 1) && valid(i, k + 1)) {
                continue;
            }
            let ft = (f.get(i, k + 1) - f.get(i, k - 1)) / (2.0 * tau);
            let fz = (f.get(i + 1, k) - f.get(i - 1, k)) / (2.0 * h);
            worst = worst.max((ft - c * fz - rhs(i, k)).abs());
        }
    }
    worst
}

pub fn residuals(result: &SolveResult, law: &FeedbackLaw, problem: &ResolvedProblem) -> ResidualReport {
    let spec = &problem.spec;
    let (x, u, lambda) = (&result.x, &result.u, &result.lambda);
    let grid = problem.grid;
    let last = grid.nt() - 1;
    let all = |_: usize, _: usize| true;
    let state_pde_resid = centred_residual(x, spec.c, all, |i, k| {
        spec.a * x.get(i, k) + spec.b * u.get(i, k)
    });
    // -lambda_t = -c lambda_z + a lambda + q x
    let costate_pde_resid = centred_residual(lambda, spec.c, all, |i, k| {
        -(spec.a * lambda.get(i, k) + spec.q * x.get(i, k))
    });
    let terminal_costate_resid = (0..grid.nz())
        .map(|i| (lambda.get(i, last) - problem.p_samples[i] * x.get(i, last) - law.gamma[i]).abs())
        .fold(0.0, f64::max);
    let stationarity_resid = u
        .values()
        .iter()
        .zip(lambda.values())
        .map(|(&u, &l)| (spec.r * u + spec.b * l).abs())
        .fold(0.0, f64::max);
    let e = &law.riccati.e;
    let w = Field::from_fn(grid, |i, k| if e.is_valid(i, k) { e.get(i, k) * x.get(i, k) } else { 0.0 });
    let transform_resid = centred_residual(&w, spec.c, |i, k| e.is_valid(i, k), |i, k| {
        e.get(i, k) * problem.bbar * law.psi.get(i, k)
    });
    ResidualReport {
        state_pde_resid,
        costate_pde_resid,
        terminal_costate_resid,
        stationarity_resid,
        transform_resid,
    }
}

/// Closed loop on `[0, T]` followed by zero control up to `t_end`.
pub fn extended_stabilization(problem: &ResolvedProblem, law: &FeedbackLaw, t_end: f64) -> Result<Field> {
    if problem.spec.target_mode != TargetMode::ZeroCase {
        return Err(Error::Usage(
            "holding the state at zero after T requires a zero-case problem".into(),
        ));
    }
    let grid = problem.grid;
    let horizon = grid.horizon();
    if !(t_end > horizon && t_end <= 3.0 * horizon) {
        return Err(Error::Usage(format!(
            "extension end {t_end} must lie in ({horizon}, {}]",
            3.0 * horizon
        )));
    }
    let tau = grid.tau();
    let extra = ((t_end - horizon) / tau).round() as usize;
    if extra == 0 || (extra as f64 * tau - (t_end - horizon)).abs() > 1e-9 * t_end {
        return Err(Error::Grid(format!(
            "extension {} is not a whole number of time steps {tau}",
            t_end - horizon
        )));
    }
    let base = closed_loop(problem, law)?;
    let (nz, nt) = (grid.nz(), grid.nt());
    let ext = UniformGrid::new(nz, nt + extra, grid.length(), horizon + extra as f64 * tau)?;
    let mu = grid.cfl(problem.spec.c);
    let a = problem.spec.a;
    let ext_nt = ext.nt();
    let mut values = vec![0.0; nz * ext_nt];
    for i in 0..nz {
        values[i * ext_nt..i * ext_nt + nt].copy_from_slice(base.x.column(i));
    }
    let mut level = base.x.level(nt - 1);
    let mut next = vec![0.0; nz];
    for k in nt - 1..ext_nt - 1 {
        for i in 0..nz - 1 {
            next[i] = upwind_forward(level[i], level[i + 1], mu, tau, a * level[i]);
        }
        next[nz - 1] = problem.phi_at(ext.t(k + 1))?;
        check_level(&next, &ext, k + 1, "state")?;
        std::mem::swap(&mut level, &mut next);
        for (i, &v) in level.iter().enumerate() {
            values[i * ext_nt + k + 1] = v;
        }
    }
    Field::from_values(ext, values, None)
}
