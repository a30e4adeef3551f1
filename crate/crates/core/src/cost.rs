//! Quadratic cost by quadrature and the closed-form optimal cost.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{trapezoid_z, trapezoid_zt, Field};
use crate::problem::{ResolvedProblem, TargetMode};
use crate::simulate::SolveResult;
use crate::synthesis::FeedbackLaw;

/// Floor on the denominator of relative gaps.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    #[serde(rename = "J_quadrature")]
    pub j_quadrature: f64,
    #[serde(rename = "J_closed_form")]
    pub j_closed_form: f64,
    pub relative_gap: f64,
}

pub fn relative_gap(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(GAP_FLOOR)
}

/// Cost of fixed fields under arbitrary weights.
pub fn cost_quadrature_with(x: &Field, u: &Field, q: f64, r: f64, p: &[f64]) -> Result<f64> {
    let running = x.zip_map(u, |x, u| q * x * x + r * u * u)?;
    let last = x.grid().nt() - 1;
    let terminal: Vec<f64> = p.iter().enumerate().map(|(i, p)| p * x.get(i, last).powi(2)).collect();
    Ok(0.5 * trapezoid_zt(&running)? + 0.5 * trapezoid_z(&terminal, x.grid().h())?)
}

pub fn cost_quadrature(x: &Field, u: &Field, problem: &ResolvedProblem) -> Result<f64> {
    let s = &problem.spec;
    cost_quadrature_with(x, u, s.q, s.r, &problem.p_samples)
}

/// Optimal cost from boundary, initial and target data alone.
pub fn optimal_cost_closed(law: &FeedbackLaw, problem: &ResolvedProblem) -> Result<f64> {
    let grid = problem.grid;
    let (nz, h, tau) = (grid.nz(), grid.h(), grid.tau());
    let c = problem.spec.c;
    let g = &law.riccati.g;
    let boundary: Vec<f64> = problem
        .phi_samples
        .iter()
        .enumerate()
        .map(|(k, &phi)| c * phi * (g.get(nz - 1, k) * phi + law.psi.get(nz - 1, k)))
        .collect();
    let initial: Vec<f64> = problem
        .varphi_samples
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (g.get(i, 0) * v + law.psi.get(i, 0)))
        .collect();
    let target: Vec<f64> = law.eta_samples.iter().zip(&law.gamma).map(|(e, g)| e * g).collect();
    Ok(0.5 * (trapezoid_z(&boundary, tau)? + trapezoid_z(&initial, h)? - trapezoid_z(&target, h)?))
}

/// Optimal cost when the target and boundary data vanish.
pub fn optimal_cost_zero_case(law: &FeedbackLaw, problem: &ResolvedProblem) -> Result<f64> {
    if problem.spec.target_mode != TargetMode::ZeroCase {
        return Err(Error::Usage("zero-case cost requested for a constrained problem".into()));
    }
    let g = &law.riccati.g;
    let initial: Vec<f64> = problem
        .varphi_samples
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (g.get(i, 0) * v + law.psi.get(i, 0)))
        .collect();
    Ok(0.5 * trapezoid_z(&initial, problem.grid.h())?)
}

pub fn cost_report(result: &SolveResult, law: &FeedbackLaw, problem: &ResolvedProblem) -> Result<CostReport> {
    let j_quadrature = cost_quadrature(&result.x, &result.u, problem)?;
    let j_closed_form = match problem.spec.target_mode {
        TargetMode::ZeroCase => optimal_cost_zero_case(law, problem)?,
        TargetMode::Constrained => optimal_cost_closed(law, problem)?,
    };
    Ok(CostReport {
        j_quadrature,
        j_closed_form,
        relative_gap: relative_gap(j_quadrature, j_closed_form),
    })
}
