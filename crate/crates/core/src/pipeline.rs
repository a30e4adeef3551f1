//! End-to-end orchestration shared by the command-line front end and tests.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::cost::{self, CostReport};
use crate::error::{Error, Result};
use crate::grid::{Field, UniformGrid};
use crate::oracle::{self, DiscreteLQ, GapReport, OracleResult};
use crate::problem::{self, ProblemSpec, ResolvedProblem, TargetMode};
use crate::riccati::{self, ExponentRule, RiccatiMethod};
use crate::simulate::{self, ResidualReport, SolveResult};
use crate::synthesis::{self, FeedbackLaw, PsiMethod};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Methods {
    pub riccati: RiccatiMethod,
    pub psi: PsiMethod,
    pub exponent_rule: ExponentRule,
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings(pub BTreeMap<String, f64>);

impl Timings {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.0
            .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub problem: ResolvedProblem,
    pub law: FeedbackLaw,
    pub result: SolveResult,
    pub methods: Methods,
    pub timings: Timings,
}

impl PipelineRun {
    pub fn costs(&self) -> CostReport {
        self.result.costs.expect("pipeline fills costs")
    }

    pub fn residuals(&self) -> &ResidualReport {
        self.result.residuals.as_ref().expect("pipeline fills residuals")
    }
}

/// Default lattice: 1000 spatial cells with `tau = h`, or `tau = h/c` when
/// the speed exceeds one.
pub fn default_grid(spec: &ProblemSpec) -> Result<UniformGrid> {
    let h = spec.length / 1000.0;
    let tau = if spec.c <= 1.0 { h } else { h / spec.c };
    let nt = (spec.horizon / tau).round() as usize + 1;
    UniformGrid::new(1001, nt.max(3), spec.length, spec.horizon)
}

pub fn run(spec: &ProblemSpec, grid: UniformGrid, methods: Methods) -> Result<PipelineRun> {
    let mut timings = Timings::default();
    let problem = timings.time("resolve", || problem::resolve(spec, grid))?;
    let ric = timings.time("riccati", || riccati::solve(&problem, methods.riccati, methods.exponent_rule))?;
    let law = timings.time("synthesis", || synthesis::synthesize(&problem, ric, methods.psi))?;
    let mut result = timings.time("simulate", || simulate::closed_loop(&problem, &law))?;
    result.costs = Some(timings.time("cost", || cost::cost_report(&result, &law, &problem))?);
    result.residuals = Some(timings.time("residuals", || Ok(simulate::residuals(&result, &law, &problem)))?);
    Ok(PipelineRun {
        problem,
        law,
        result,
        methods,
        timings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub nz: usize,
    pub nt: usize,
    pub h: f64,
    pub tau: f64,
    pub l: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub cfl: f64,
}

impl GridInfo {
    pub fn new(grid: &UniformGrid, c: f64) -> Self {
        Self {
            nz: grid.nz(),
            nt: grid.nt(),
            h: grid.h(),
            tau: grid.tau(),
            l: grid.length(),
            horizon: grid.horizon(),
            cfl: grid.cfl(c),
        }
    }
}

/// Keys other than `timings_ms` are deterministic for a fixed input.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub version: &'static str,
    pub problem: String,
    pub target_mode: TargetMode,
    pub grid: GridInfo,
    pub methods: Methods,
    pub eta0: f64,
    pub gamma_0: f64,
    pub gamma_l: f64,
    pub max_abs_g: f64,
    pub riccati_stability: f64,
    pub terminal_error_inf: f64,
    #[serde(flatten)]
    pub costs: CostReport,
    pub residuals: ResidualReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<GapReport>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl Summary {
    pub fn new(run: &PipelineRun, label: &str) -> Self {
        let law = &run.law;
        Summary {
            version: env!("CARGO_PKG_VERSION"),
            problem: label.to_string(),
            target_mode: run.problem.spec.target_mode,
            grid: GridInfo::new(&run.problem.grid, run.problem.spec.c),
            methods: run.methods,
            eta0: law.eta0,
            gamma_0: law.gamma[0],
            gamma_l: law.gamma[law.gamma.len() - 1],
            max_abs_g: law.riccati.max_abs_g,
            riccati_stability: law.riccati.stability,
            terminal_error_inf: run.result.terminal_error_inf,
            costs: run.costs(),
            residuals: run.residuals().clone(),
            oracle: None,
            timings_ms: run.timings.0.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Tolerances {
    /// Terminal error relative to the data scale.
    pub terminal: f64,
    /// Closed-form terminal profile against the target, relative to max|eta|.
    pub closed_form_terminal: f64,
    /// Independent costate against `g x + psi`, relative to its max.
    pub costate: f64,
    pub cost: f64,
    /// Constructional identities, relative to max|lambda|.
    pub identity: f64,
    pub oracle_cost: f64,
    pub oracle_control: f64,
    pub oracle_kkt: f64,
}

impl Tolerances {
    pub fn for_mode(mode: TargetMode) -> Self {
        Tolerances {
            terminal: 0.05,
            closed_form_terminal: 1e-3,
            costate: 0.01,
            cost: match mode {
                TargetMode::Constrained => 0.01,
                TargetMode::ZeroCase => 0.02,
            },
            identity: 1e-12,
            oracle_cost: 0.05,
            oracle_control: 0.1,
            oracle_kkt: oracle::KKT_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub residuals: ResidualReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<GapReport>,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} = {:e} > {:e}", c.name, c.value, c.tolerance))
            .collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Scale for the terminal error: the target, or the initial data when the target is zero.
pub fn terminal_scale(run: &PipelineRun) -> f64 {
    let eta = max_abs(&run.law.eta_samples);
    if eta > 0.0 {
        eta
    } else {
        max_abs(&run.problem.varphi_samples).max(f64::MIN_POSITIVE)
    }
}

/// Max-norm gap between the independently marched costate and `g x + psi`,
/// relative to the former.
pub fn costate_gap(run: &PipelineRun) -> Result<(Field, f64)> {
    let lam = simulate::costate_solve(&run.result.x, &run.problem, &run.law.gamma)?;
    let gap = lam.max_abs_diff(&run.result.lambda)?;
    let rel = gap / lam.max_abs().max(f64::MIN_POSITIVE);
    Ok((lam, rel))
}

pub fn verify(run: &PipelineRun, tol: &Tolerances, oracle_grid: Option<UniformGrid>) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.push(Check::new(
        "terminal_error",
        run.result.terminal_error_inf / terminal_scale(run),
        tol.terminal,
    ));
    if run.problem.spec.target_mode == TargetMode::Constrained {
        let predicted = simulate::closed_form_terminal(&run.law, &run.problem)?;
        let gap = predicted
            .iter()
            .zip(&run.law.eta_samples)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        checks.push(Check::new(
            "closed_form_terminal",
            gap / max_abs(&run.law.eta_samples).max(f64::MIN_POSITIVE),
            tol.closed_form_terminal,
        ));
    }
    let (_, costate) = costate_gap(run)?;
    checks.push(Check::new("costate_relation", costate, tol.costate));
    checks.push(Check::new("cost_identity", run.costs().relative_gap, tol.cost));
    let res = run.residuals();
    let lam_scale = run.result.lambda.max_abs().max(f64::MIN_POSITIVE);
    checks.push(Check::new("stationarity", res.stationarity_resid / lam_scale, tol.identity));
    checks.push(Check::new(
        "terminal_costate",
        res.terminal_costate_resid / lam_scale,
        tol.identity,
    ));
    let oracle = match oracle_grid {
        None => None,
        Some(grid) => {
            let cmp = oracle_compare(&run.problem.spec, grid, run.methods)?;
            checks.push(Check::new("oracle_cost_gap", cmp.gaps.cost_gap, tol.oracle_cost));
            checks.push(Check::new("oracle_control_gap", cmp.gaps.control_rms_gap, tol.oracle_control));
            checks.push(Check::new("oracle_kkt_residual", cmp.gaps.kkt_residual, tol.oracle_kkt));
            Some(cmp.gaps)
        }
    };
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        residuals: res.clone(),
        oracle,
    })
}

#[derive(Debug, Clone)]
pub struct OracleComparison {
    pub coarse: PipelineRun,
    pub dlq: DiscreteLQ,
    pub oracle: OracleResult,
    pub gaps: GapReport,
    /// Cost of the analytic control, projected onto the terminal constraint,
    /// minus the oracle cost. Nonnegative when the oracle is optimal.
    pub domination_margin: f64,
}

/// Synthesizes on the coarse grid and solves the same lattice as a QP.
pub fn oracle_compare(spec: &ProblemSpec, coarse: UniformGrid, methods: Methods) -> Result<OracleComparison> {
    let run = run(spec, coarse, methods)?;
    let dlq = oracle::discretize(&run.problem, &run.law.eta_samples)?;
    let result = oracle::solve_kkt(&dlq)?;
    let analytic_u = oracle::restrict_controls(&run.result.u, &dlq)?;
    let gaps = oracle::compare(&result, &analytic_u, run.costs().j_closed_form, &run.law.gamma);
    let projected = oracle::project_feasible(&dlq, &analytic_u)?;
    let domination_margin = dlq.cost_of(&projected) - result.cost;
    Ok(OracleComparison {
        coarse: run,
        dlq,
        oracle: result,
        gaps,
        domination_margin,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub tau: f64,
    pub terminal_error_inf: f64,
    pub cost_gap: f64,
    pub state_resid: f64,
    /// Observed order of the terminal error against the previous rung.
    pub order: Order,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Order {
    None,
    Exact,
    Value(f64),
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Order::None => Ok(()),
            Order::Exact => f.write_str("exact"),
            Order::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Errors below this, relative to the data scale, count as rounding noise.
pub const ROUNDING_LEVEL: f64 = 1e-12;

pub fn converge(spec: &ProblemSpec, ladder: &[(f64, f64)], methods: Methods) -> Result<Vec<ConvergenceRow>> {
    if ladder.len() < 3 {
        return Err(Error::Usage(format!(
            "a convergence ladder needs at least 3 rungs, got {}",
            ladder.len()
        )));
    }
    let ratio = ladder[0].1 / ladder[0].0;
    if ladder.iter().any(|(h, tau)| ((tau / h) - ratio).abs() > 1e-9 * ratio) {
        return Err(Error::Usage("every rung must share the same tau/h ratio".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ladder.len());
    for &(h, tau) in ladder {
        let grid = UniformGrid::from_steps(h, tau, spec.length, spec.horizon)?;
        let run = run(spec, grid, methods)?;
        let scale = terminal_scale(&run);
        let err = run.result.terminal_error_inf;
        let order = match rows.last() {
            None => Order::None,
            Some(prev) => {
                if err <= ROUNDING_LEVEL * scale && prev.terminal_error_inf <= ROUNDING_LEVEL * scale {
                    Order::Exact
                } else {
                    Order::Value((prev.terminal_error_inf / err).ln() / (prev.h / h).ln())
                }
            }
        };
        rows.push(ConvergenceRow {
            h,
            tau,
            terminal_error_inf: err,
            cost_gap: run.costs().relative_gap,
            state_resid: run.residuals().state_pde_resid,
            order,
        });
    }
    Ok(rows)
}
