//! Brute-force check: the discretized problem as an equality-constrained QP.
//!
//! States are eliminated through the upwind dynamics, leaving the controls at
//! the free spatial nodes as the only unknowns. The terminal rows pin every
//! free node to the target. The reduced KKT system is solved with a Cholesky
//! factorization of the Hessian and of the terminal Schur complement.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{trapezoid_weights, Field, UniformGrid};
use crate::problem::ResolvedProblem;
use crate::simulate::upwind_forward;

/// Largest number of control unknowns the dense solve accepts.
pub const VARIABLE_BUDGET: usize = 20_000;
/// Relative KKT residual above which the solve is reported as failed.
pub const KKT_TOL: f64 = 1e-8;

/// Discrete dynamics and cost on a coarse lattice.
///
/// Node `n` (the right neighbour of the last free node) is pinned to
/// `boundary[k]` at every level. Controls are stored level by level.
#[derive(Debug, Clone)]
pub struct DiscreteLQ {
    /// Number of free spatial nodes.
    pub n: usize,
    pub steps: usize,
    pub mu: f64,
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    pub boundary: Vec<f64>,
    pub initial: Vec<f64>,
    pub target: Vec<f64>,
    /// Coefficient of `x^2 / 2` for each free node at levels `0..=steps`.
    pub state_weights: Vec<f64>,
    /// Coefficient of `u^2 / 2` for each control.
    pub control_weights: Vec<f64>,
    /// Cost contribution of the pinned node.
    pub constant: f64,
    pub grid: Option<UniformGrid>,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Controls, level-major.
    pub u: Vec<f64>,
    /// States at the free nodes, level-major, levels `0..=steps`.
    pub x: Vec<f64>,
    pub cost: f64,
    pub multipliers: Vec<f64>,
    /// Max-norm KKT residual relative to the system scale.
    pub kkt_residual: f64,
    pub terminal_residual: f64,
    /// Stationarity of the reduced gradient on the constraint null space.
    pub projected_gradient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub oracle_cost: f64,
    pub analytic_cost: f64,
    pub cost_gap: f64,
    pub control_rms_gap: f64,
    pub multiplier_correlation: f64,
    pub multiplier_scale: f64,
    pub kkt_residual: f64,
}

impl DiscreteLQ {
    pub fn unknowns(&self) -> usize {
        self.n * self.steps
    }

    fn right(&self, level: &[f64], i: usize, k: usize) -> f64 {
        if i + 1 < self.n {
            level[i + 1]
        } else {
            self.boundary[k]
        }
    }

    /// States at the free nodes for a control sequence, levels `0..=steps`.
    pub fn simulate(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = Vec::with_capacity(n * (self.steps + 1));
        x.extend_from_slice(&self.initial);
        for k in 0..self.steps {
            let (done, _) = x.split_at(n * (k + 1));
            let level = &done[n * k..];
            let next: Vec<f64> = (0..n)
                .map(|i| {
                    let src = self.a * level[i] + self.b * u[k * n + i];
                    upwind_forward(level[i], self.right(level, i, k), self.mu, self.tau, src)
                })
                .collect();
            x.extend(next);
        }
        x
    }

    pub fn cost_of(&self, u: &[f64]) -> f64 {
        let x = self.simulate(u);
        let states: f64 = x.iter().zip(&self.state_weights).map(|(x, w)| w * x * x).sum();
        let controls: f64 = u.iter().zip(&self.control_weights).map(|(u, w)| w * u * u).sum();
        0.5 * (states + controls) + self.constant
    }

    /// Sensitivity of the states at levels `1..=steps` to every control.
    fn sensitivity(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.unknowns());
        // the same stencil, applied to unit inputs, gives its coefficients
        let diag = upwind_forward(1.0, 0.0, self.mu, self.tau, self.a);
        let coupling = upwind_forward(0.0, 1.0, self.mu, self.tau, 0.0);
        let gain = upwind_forward(0.0, 0.0, self.mu, self.tau, self.b);
        let mut s = DMatrix::zeros(n * self.steps, m);
        for k in 0..self.steps {
            for i in 0..n {
                let row = k * n + i;
                if k > 0 {
                    let prev = (k - 1) * n;
                    // only controls before level k matter
                    for col in 0..k * n {
                        let mut v = diag * s[(prev + i, col)];
                        if i + 1 < n {
                            v += coupling * s[(prev + i + 1, col)];
                        }
                        s[(row, col)] = v;
                    }
                }
                s[(row, k * n + i)] = gain;
            }
        }
        s
    }
}

/// Assembles the QP on the grid of `problem` with terminal target `eta`.
pub fn discretize(problem: &ResolvedProblem, eta: &[f64]) -> Result<DiscreteLQ> {
    let grid = problem.grid;
    grid.check_cfl(problem.spec.c)?;
    let (nz, nt) = (grid.nz(), grid.nt());
    let n = nz - 1;
    let steps = nt - 1;
    if n * steps > VARIABLE_BUDGET {
        return Err(Error::Budget {
            count: n * steps,
            limit: VARIABLE_BUDGET,
        });
    }
    if eta.len() != nz {
        return Err(Error::GridMismatch);
    }
    let s = &problem.spec;
    let wz = trapezoid_weights(nz, grid.h());
    let wt = trapezoid_weights(nt, grid.tau());
    let mut state_weights = Vec::with_capacity(n * nt);
    for k in 0..nt {
        for i in 0..n {
            let mut w = s.q * wt[k] * wz[i];
            if k == steps {
                w += problem.p_samples[i] * wz[i];
            }
            state_weights.push(w);
        }
    }
    // controls act over one step each
    let control_weights = (0..steps)
        .flat_map(|_| (0..n).map(|i| s.r * grid.tau() * wz[i]))
        .collect();
    let pinned = problem.phi_samples.iter().zip(&wt).map(|(v, w)| s.q * w * v * v).sum::<f64>() * wz[n]
        + problem.p_samples[n] * wz[n] * problem.phi_samples[steps].powi(2);
    Ok(DiscreteLQ {
        n,
        steps,
        mu: grid.cfl(s.c),
        tau: grid.tau(),
        a: s.a,
        b: s.b,
        boundary: problem.phi_samples.clone(),
        initial: problem.varphi_samples[..n].to_vec(),
        target: eta[..n].to_vec(),
        state_weights,
        control_weights,
        constant: 0.5 * pinned,
        grid: Some(grid),
    })
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn solve_kkt(dlq: &DiscreteLQ) -> Result<OracleResult> {
    let (n, m) = (dlq.n, dlq.unknowns());
    let s = dlq.sensitivity();
    let free = dlq.simulate(&vec![0.0; m]);
    let x0 = DVector::from_column_slice(&free[n..]);
    let d = DVector::from_column_slice(&dlq.state_weights[n..]);

    let mut ds = s.clone();
    for (r, mut row) in ds.row_iter_mut().enumerate() {
        row *= d[r];
    }
    let mut hess = s.tr_mul(&ds);
    for (j, w) in dlq.control_weights.iter().enumerate() {
        hess[(j, j)] += w;
    }
    let lin = ds.tr_mul(&x0);
    let terminal = s.rows(n * (dlq.steps - 1), n).into_owned();
    let rhs = DVector::from_iterator(n, (0..n).map(|i| dlq.target[i] - x0[n * (dlq.steps - 1) + i]));

    let chol = Cholesky::new(hess.clone())
        .ok_or_else(|| Error::Numerical("reduced Hessian is not positive definite".into()))?;
    let hinv_ct = chol.solve(&terminal.transpose());
    let hinv_f = chol.solve(&lin);
    let schur = &terminal * &hinv_ct;
    let eig = SymmetricEigen::new(schur.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if !(lo > 1e-13 * hi) {
        return Err(Error::Unreachable(format!(
            "terminal Schur complement is singular (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    let schur_chol = Cholesky::new(schur).ok_or_else(|| Error::Unreachable("terminal Schur complement".into()))?;
    let nu = schur_chol.solve(&(-(&rhs + &terminal * &hinv_f)));
    let u = -(hinv_f + &hinv_ct * &nu);

    let grad = &hess * &u + &lin;
    let r1 = &grad + terminal.tr_mul(&nu);
    let r2 = &terminal * &u - &rhs;
    let hmax = hess.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = (hmax * inf_norm(&u)).max(inf_norm(&lin)).max(inf_norm(&rhs)).max(f64::MIN_POSITIVE);
    let kkt_residual = inf_norm(&r1).max(inf_norm(&r2)) / scale;
    // reduced gradient on the null space of the terminal rows
    let proj_coef = Cholesky::new(&terminal * terminal.transpose())
        .map(|c| c.solve(&(&terminal * &grad)))
        .ok_or_else(|| Error::Unreachable("terminal rows are rank deficient".into()))?;
    let projected = &grad - terminal.tr_mul(&proj_coef);
    let projected_gradient = inf_norm(&projected) / scale;
    if !(kkt_residual <= KKT_TOL) {
        return Err(Error::Numerical(format!("KKT residual {kkt_residual:e} exceeds {KKT_TOL:e}")));
    }
    let u: Vec<f64> = u.iter().copied().collect();
    let x = dlq.simulate(&u);
    let terminal_residual = (0..n)
        .map(|i| (x[n * dlq.steps + i] - dlq.target[i]).abs())
        .fold(0.0, f64::max);
    Ok(OracleResult {
        cost: dlq.cost_of(&u),
        u,
        x,
        multipliers: nu.iter().copied().collect(),
        kkt_residual,
        terminal_residual,
        projected_gradient,
    })
}

impl OracleResult {
    /// Controls as a field on the oracle grid; the pinned column is zero.
    pub fn control_field(&self, dlq: &DiscreteLQ) -> Option<Field> {
        let grid = dlq.grid?;
        let n = dlq.n;
        Some(Field::from_fn(grid, |i, k| {
            if i < n && k < dlq.steps {
                self.u[k * n + i]
            } else {
                0.0
            }
        }))
    }
}

/// Euclidean projection of a control sequence onto the terminal constraint.
pub fn project_feasible(dlq: &DiscreteLQ, u: &[f64]) -> Result<Vec<f64>> {
    let n = dlq.n;
    let s = dlq.sensitivity();
    let terminal = s.rows(n * (dlq.steps - 1), n).into_owned();
    let x = dlq.simulate(u);
    let miss = DVector::from_iterator(n, (0..n).map(|i| x[n * dlq.steps + i] - dlq.target[i]));
    let coef = Cholesky::new(&terminal * terminal.transpose())
        .ok_or_else(|| Error::Unreachable("terminal rows are rank deficient".into()))?
        .solve(&miss);
    let shift = terminal.tr_mul(&coef);
    Ok(u.iter().zip(shift.iter()).map(|(u, s)| u - s).collect())
}

/// Controls of `u` at the free nodes of the oracle lattice, level-major.
pub fn restrict_controls(u: &Field, dlq: &DiscreteLQ) -> Result<Vec<f64>> {
    let grid = dlq
        .grid
        .ok_or_else(|| Error::Usage("oracle lattice has no grid".into()))?;
    let mut out = Vec::with_capacity(dlq.unknowns());
    for k in 0..dlq.steps {
        for i in 0..dlq.n {
            out.push(u.sample_at(grid.z(i), grid.t(k))?);
        }
    }
    Ok(out)
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = v.fold((0.0, 0usize), |(s, c), x| (s + x * x, c + 1));
    (sum / count.max(1) as f64).sqrt()
}

/// Pearson correlation and least-squares scale of `y` against `x`.
pub fn fitted_correlation(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let norm: f64 = x.iter().map(|a| a * a).sum();
    let scale = if norm > 0.0 { dot / norm } else { 0.0 };
    let corr = if sxx > 0.0 && syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else if sxx == 0.0 && syy == 0.0 {
        1.0
    } else {
        0.0
    };
    (corr, scale)
}

/// Gaps between the oracle and an analytic control on the oracle lattice.
///
/// The correlation is reported with the sign of the fitted scale removed,
/// since the discrete multipliers carry a convention-dependent sign.
pub fn compare(oracle: &OracleResult, analytic_u: &[f64], analytic_cost: f64, gamma: &[f64]) -> GapReport {
    let diff = rms(oracle.u.iter().zip(analytic_u).map(|(a, b)| a - b));
    let base = rms(analytic_u.iter().copied());
    let (corr, scale) = fitted_correlation(&gamma[..oracle.multipliers.len()], &oracle.multipliers);
    GapReport {
        oracle_cost: oracle.cost,
        analytic_cost,
        cost_gap: crate::cost::relative_gap(oracle.cost, analytic_cost),
        control_rms_gap: if base > 0.0 { diff / base } else { diff },
        multiplier_correlation: corr * scale.signum(),
        multiplier_scale: scale,
        kkt_residual: oracle.kkt_residual,
    }
}
