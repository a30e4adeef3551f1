//! Terminal multiplier profile, the compatible left endpoint of the target,
//! the offset field `psi`, and the assembled feedback law.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{trapezoid_weights, Backshift, Field};
use crate::problem::{ResolvedProblem, TargetMode, COMPAT_TOL};
use crate::riccati::RiccatiSolution;

/// Relative tolerance on `|gamma(0)|` against `max |gamma|`.
pub const GAMMA0_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMethod {
    #[default]
    Characteristics,
    UpwindEuler,
}

impl PsiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PsiMethod::Characteristics => "characteristics",
            PsiMethod::UpwindEuler => "upwind_euler",
        }
    }
}

impl fmt::Display for PsiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PsiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "characteristics" => Ok(PsiMethod::Characteristics),
            "upwind_euler" => Ok(PsiMethod::UpwindEuler),
            other => Err(Error::Usage(format!("unknown psi method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub riccati: RiccatiSolution,
    pub eta0: f64,
    pub eta_samples: Vec<f64>,
    pub gamma: Vec<f64>,
    pub psi: Field,
    pub psi_method: PsiMethod,
}

impl FeedbackLaw {
    /// `g x + psi` at a node.
    #[inline]
    pub fn costate(&self, i: usize, k: usize, x: f64) -> f64 {
        self.riccati.g.get(i, k) * x + self.psi.get(i, k)
    }

    /// `-(b/r)(g x + psi)` at a node.
    #[inline]
    pub fn control(&self, b: f64, r: f64, i: usize, k: usize, x: f64) -> f64 {
        -(b / r) * self.costate(i, k, x)
    }
}

/// `e(0,T)^{-1} phi(T - l/c)`.
pub fn compute_eta0(riccati: &RiccatiSolution, problem: &ResolvedProblem) -> Result<f64> {
    let grid = problem.grid;
    let last = grid.nt() - 1;
    if !riccati.e.is_valid(0, last) {
        return Err(Error::Masked { i: 0, k: last });
    }
    let spec = &problem.spec;
    let phi = problem.phi_at(spec.horizon - spec.length / spec.c)?;
    Ok(phi / riccati.e.get(0, last))
}

/// `e(xi, T - (xi - z_i)/c)` for every column `xi = z_j`, `j >= i`.
fn e_on_terminal_characteristic(e: &Field, c: f64, i: usize) -> Result<Vec<f64>> {
    let grid = e.grid();
    let (nz, nt, h, tau) = (grid.nz(), grid.nt(), grid.h(), grid.tau());
    let last = nt - 1;
    (i..nz)
        .map(|j| {
            let bs = Backshift::new((j - i) as f64 * h / c, tau);
            if bs.back > last || !e.is_valid(j, last - bs.back) {
                return Err(Error::Masked {
                    i: j,
                    k: last.saturating_sub(bs.back),
                });
            }
            Ok(bs.apply(e.column(j), last))
        })
        .collect()
}

/// `int_z^l bbar e(xi, T - (xi - z)/c)^2 dxi` by trapezoid, for each node.
pub(crate) fn gamma_denominators(e: &Field, c: f64, bbar: f64) -> Result<Vec<f64>> {
    let grid = e.grid();
    let (nz, h) = (grid.nz(), grid.h());
    (0..nz)
        .map(|i| {
            if i == nz - 1 {
                return Ok(0.0);
            }
            let samples = e_on_terminal_characteristic(e, c, i)?;
            let w = trapezoid_weights(samples.len(), h);
            Ok(bbar * samples.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>())
        })
        .collect()
}

fn extrapolate_end(gamma: &mut [f64]) {
    let n = gamma.len();
    gamma[n - 1] = if n >= 4 {
        3.0 * gamma[n - 2] - 3.0 * gamma[n - 3] + gamma[n - 4]
    } else {
        2.0 * gamma[n - 2] - gamma[n - 3]
    };
}

/// Multiplier profile that makes the closed loop land on `eta_samples`.
pub fn compute_gamma(eta_samples: &[f64], problem: &ResolvedProblem, riccati: &RiccatiSolution) -> Result<Vec<f64>> {
    let grid = problem.grid;
    let spec = &problem.spec;
    let (nz, h) = (grid.nz(), grid.h());
    if eta_samples.len() != nz {
        return Err(Error::GridMismatch);
    }
    let denominators = gamma_denominators(&riccati.e, spec.c, problem.bbar)?;
    let last = grid.nt() - 1;
    let mut gamma = vec![0.0; nz];
    for i in 0..nz - 1 {
        let e_t = riccati.e.get(i, last);
        let z = grid.z(i);
        let phi = problem.phi_at(spec.horizon - (spec.length - z) / spec.c)?;
        let numerator = (e_t * eta_samples[i] - phi) * e_t * spec.c;
        let d = denominators[i];
        if !(d.abs() >= 1e-14 * problem.bbar.abs() * h) {
            return Err(Error::Numerical(format!(
                "degenerate multiplier denominator {d:e} at z = {z}"
            )));
        }
        gamma[i] = numerator / d;
    }
    extrapolate_end(&mut gamma);
    Ok(gamma)
}

fn interp_space(values: &[f64], h: f64, z: f64) -> f64 {
    let n = values.len();
    let pos = (z / h).clamp(0.0, (n - 1) as f64);
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-9 {
        return values[nearest as usize];
    }
    let j = (pos.floor() as usize).min(n - 2);
    let theta = pos - j as f64;
    (1.0 - theta) * values[j] + theta * values[j + 1]
}

/// Offset field: terminal data `gamma`, zero on `z = 0`, transported with rate `abar`.
pub fn solve_psi(gamma: &[f64], riccati: &RiccatiSolution, problem: &ResolvedProblem, method: PsiMethod) -> Result<Field> {
    let grid = problem.grid;
    let (nz, nt, h, tau) = (grid.nz(), grid.nt(), grid.h(), grid.tau());
    let c = problem.spec.c;
    if gamma.len() != nz {
        return Err(Error::GridMismatch);
    }
    if gamma.iter().all(|&v| v == 0.0) {
        return Ok(Field::zeros(grid));
    }
    let last = nt - 1;
    let mut values = vec![0.0; nz * nt];
    match method {
        PsiMethod::Characteristics => {
            let e = &riccati.e;
            let e_t = e.level(last);
            for i in 0..nz {
                for k in 0..nt {
                    let foot = grid.z(i) - c * (grid.horizon() - grid.t(k));
                    if k == last {
                        values[i * nt + k] = gamma[i];
                    } else if foot >= -1e-9 * h && i > 0 {
                        if !e.is_valid(i, k) {
                            return Err(Error::Masked { i, k });
                        }
                        let foot = foot.max(0.0);
                        let v = interp_space(gamma, h, foot) / interp_space(&e_t, h, foot);
                        values[i * nt + k] = e.get(i, k) * v;
                    }
                }
            }
        }
        PsiMethod::UpwindEuler => {
            grid.check_cfl(c)?;
            let mu = grid.cfl(c);
            let abar = &riccati.abar;
            let mut level = gamma.to_vec();
            for (i, &v) in gamma.iter().enumerate() {
                values[i * nt + last] = v;
            }
            level[0] = 0.0;
            let mut next = vec![0.0; nz];
            for k in (0..last).rev() {
                for i in 1..nz {
                    let p = level[i];
                    next[i] = p - mu * (p - level[i - 1]) + tau * abar.get(i, k + 1) * p;
                }
                std::mem::swap(&mut level, &mut next);
                for (i, &v) in level.iter().enumerate() {
                    values[i * nt + k] = v;
                }
            }
        }
    }
    let psi = Field::from_values(grid, values, None)?;
    psi.check_finite("psi")?;
    Ok(psi)
}

pub fn build_feedback(
    riccati: RiccatiSolution,
    eta0: f64,
    eta_samples: Vec<f64>,
    gamma: Vec<f64>,
    psi: Field,
    psi_method: PsiMethod,
) -> Result<FeedbackLaw> {
    riccati.g.same_grid(&psi)?;
    let nz = psi.grid().nz();
    if eta_samples.len() != nz || gamma.len() != nz {
        return Err(Error::GridMismatch);
    }
    Ok(FeedbackLaw {
        riccati,
        eta0,
        eta_samples,
        gamma,
        psi,
        psi_method,
    })
}

/// Runs the synthesis stage on a solved Riccati problem.
pub fn synthesize(problem: &ResolvedProblem, riccati: RiccatiSolution, psi_method: PsiMethod) -> Result<FeedbackLaw> {
    let nz = problem.grid.nz();
    if problem.spec.target_mode == TargetMode::ZeroCase {
        let psi = Field::zeros(problem.grid);
        return build_feedback(riccati, 0.0, vec![0.0; nz], vec![0.0; nz], psi, psi_method);
    }
    let eta0 = compute_eta0(&riccati, problem)?;
    let eta = problem.eta_samples(eta0)?;
    let phi_t = problem.phi_samples[problem.phi_samples.len() - 1];
    if (eta[nz - 1] - phi_t).abs() > COMPAT_TOL {
        return Err(Error::Validation(vec![format!(
            "eta(l) = {} differs from phi(T) = {phi_t} once eta0 = {eta0} is substituted",
            eta[nz - 1]
        )]));
    }
    let gamma = compute_gamma(&eta, problem, &riccati)?;
    let scale = gamma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gamma[0].abs() > GAMMA0_REL_TOL * scale {
        return Err(Error::Validation(vec![format!(
            "gamma(0) = {} is not zero: eta(0) = {} but compatibility requires {eta0}",
            gamma[0], eta[0]
        )]));
    }
    let psi = solve_psi(&gamma, &riccati, problem, psi_method)?;
    build_feedback(riccati, eta0, eta, gamma, psi, psi_method)
}

/// Largest spread of `psi / e` along any characteristic `z - c (T - t) = const`
/// through a grid node of the final level.
pub fn transport_spread(psi: &Field, e: &Field, c: f64) -> Result<f64> {
    psi.same_grid(e)?;
    let grid = psi.grid();
    let (nz, nt) = (grid.nz(), grid.nt());
    let mut worst: f64 = 0.0;
    for j in 0..nz {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in (0..nt).rev() {
            let z = grid.z(j) + c * (grid.horizon() - grid.t(k));
            if z > grid.length() {
                break;
            }
            let t = grid.t(k);
            let v = match (psi.sample_at(z, t), e.sample_at(z, t)) {
                (Ok(p), Ok(ev)) => p / ev,
                _ => continue,
            };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi >= lo {
            worst = worst.max(hi - lo);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use crate::grid::UniformGrid;
    use crate::problem::{builtin_example, resolve, ProblemSpec};
    use crate::riccati::{self, ExponentRule, RiccatiMethod};
    use approx::assert_relative_eq;

    pub(crate) fn unit_problem(nz: usize, nt: usize) -> ResolvedProblem {
        let spec = ProblemSpec {
            a: 0.0,
            b: 1.0,
            c: 1.0,
            q: 0.0,
            r: 1.0,
            length: 1.0,
            horizon: 3.0,
            p: parse("0").unwrap(),
            varphi: parse("0").unwrap(),
            phi: parse("0").unwrap(),
            eta: parse("z*(1-z)").unwrap(),
            target_mode: TargetMode::Constrained,
        };
        resolve(&spec, UniformGrid::new(nz, nt, 1.0, 3.0).unwrap()).unwrap()
    }

    fn stage(rp: &ResolvedProblem) -> RiccatiSolution {
        riccati::solve(rp, RiccatiMethod::UpwindEuler, ExponentRule::default()).unwrap()
    }

    #[test]
    fn unit_case_gamma_is_minus_z() {
        let rp = unit_problem(41, 241);
        let ric = stage(&rp);
        assert_eq!(ric.e.max_abs(), 1.0);
        assert_eq!(compute_eta0(&ric, &rp).unwrap(), 0.0);
        let eta = rp.eta_samples(0.0).unwrap();
        let gamma = compute_gamma(&eta, &rp, &ric).unwrap();
        for (i, g) in gamma.iter().enumerate() {
            assert_relative_eq!(*g, -rp.grid.z(i), epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_case_psi_is_transported_gamma() {
        let rp = unit_problem(41, 241);
        let law = synthesize(&rp, stage(&rp), PsiMethod::Characteristics).unwrap();
        let grid = rp.grid;
        for i in 0..41 {
            for k in 0..241 {
                let (z, t) = (grid.z(i), grid.t(k));
                let exact = if t >= 3.0 - z { -(z - (3.0 - t)) } else { 0.0 };
                assert!((law.psi.get(i, k) - exact).abs() < 1e-12, "({z},{t})");
            }
        }
        // c tau / h = 0.5 here; the upwind march only agrees to first order
        let up = solve_psi(&law.gamma, &law.riccati, &rp, PsiMethod::UpwindEuler).unwrap();
        assert!(up.max_abs_diff(&law.psi).unwrap() < 0.1);
        assert_eq!(up.level(240), law.gamma);
        assert!(up.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_factor_returns_boundary_value() {
        let spec = ProblemSpec {
            a: 0.0,
            q: 0.0,
            p: parse("0").unwrap(),
            varphi: parse("7").unwrap(),
            phi: parse("7").unwrap(),
            eta: parse("eta0").unwrap(),
            ..builtin_example("ex1").unwrap()
        };
        let rp = resolve(&spec, UniformGrid::new(21, 241, 1.0, 6.0).unwrap()).unwrap();
        assert_eq!(compute_eta0(&stage(&rp), &rp).unwrap(), 7.0);
    }

    #[test]
    fn zero_gamma_gives_zero_psi() {
        let rp = unit_problem(21, 121);
        let ric = stage(&rp);
        for method in [PsiMethod::Characteristics, PsiMethod::UpwindEuler] {
            let psi = solve_psi(&[0.0; 21], &ric, &rp, method).unwrap();
            assert_eq!(psi.max_abs(), 0.0);
        }
    }

    #[test]
    fn ex1_coarse_law() {
        let rp = resolve(&builtin_example("ex1").unwrap(), UniformGrid::new(101, 601, 1.0, 6.0).unwrap()).unwrap();
        let law = synthesize(&rp, stage(&rp), PsiMethod::Characteristics).unwrap();
        assert!(law.eta0 > 2.0 && law.eta0 < 2.5, "{}", law.eta0);
        let scale = law.gamma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(law.gamma[0].abs() <= 1e-6 * scale);
        assert_eq!(law.eta_samples[100], 10.0);
        assert_eq!(law.psi.level(600), law.gamma);
        assert!(law.psi.column(0).iter().all(|&v| v == 0.0));
        // where the state is zero the control is the offset alone
        let u = law.control(1.3, 3.0, 50, 300, 0.0);
        assert_relative_eq!(u, -(1.3 / 3.0) * law.psi.get(50, 300), epsilon = 1e-15);
        // support: zero ahead of the corner characteristic
        for i in 0..101 {
            for k in 0..601 {
                if rp.grid.z(i) - 0.5 * (6.0 - rp.grid.t(k)) < -rp.grid.h() {
                    assert_eq!(law.psi.get(i, k), 0.0);
                }
            }
        }
        // the multiplier denominator carries the sign of bbar
        let d = gamma_denominators(&law.riccati.e, 0.5, rp.bbar).unwrap();
        assert!(d[..100].iter().all(|&v| v < 0.0));
        let spread = transport_spread(&law.psi, &law.riccati.e, 0.5).unwrap();
        assert!(spread < 0.05 * scale, "{spread}");
    }

    #[test]
    fn zero_case_law() {
        let rp = resolve(&builtin_example("zero_demo").unwrap(), UniformGrid::new(21, 241, 1.0, 6.0).unwrap()).unwrap();
        let law = synthesize(&rp, stage(&rp), PsiMethod::Characteristics).unwrap();
        assert!(law.gamma.iter().all(|&v| v == 0.0));
        assert!(law.eta_samples.iter().all(|&v| v == 0.0));
        assert_eq!(law.psi.max_abs(), 0.0);
        assert_eq!(law.control(1.3, 3.0, 3, 3, 0.0), 0.0);
    }

    #[test]
    fn incompatible_target_is_reported() {
        let spec = ProblemSpec {
            eta: parse("1+9*z").unwrap(),
            ..builtin_example("ex1").unwrap()
        };
        let rp = resolve(&spec, UniformGrid::new(51, 301, 1.0, 6.0).unwrap()).unwrap();
        let err = synthesize(&rp, stage(&rp), PsiMethod::Characteristics).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let mut v: Vec<f64> = (0..6).map(|j| (j * j) as f64).collect();
        v[5] = 0.0;
        extrapolate_end(&mut v);
        assert_eq!(v[5], 25.0);
    }
}
