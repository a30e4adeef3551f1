//! Backward Riccati PDE for the feedback gain, the effective reaction rate,
//! and the characteristic exponential factor.
//!
//! In reversed time `s = T - t` the gain satisfies
//!
//! ```text
//!     g_s + c g_z = q + 2a g + bbar g^2,   g|_{s=0} = p(z),   g(0, s) = 0
//! ```
//!
//! so information moves toward larger `z` and the upwind stencil takes the
//! left neighbour.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Backshift, Field, UniformGrid};
use crate::problem::ResolvedProblem;

/// Magnitude at which the gain is declared to have blown up.
pub const G_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiMethod {
    #[default]
    UpwindEuler,
    CharacteristicsRk4,
}

impl RiccatiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RiccatiMethod::UpwindEuler => "upwind_euler",
            RiccatiMethod::CharacteristicsRk4 => "characteristics_rk4",
        }
    }
}

impl fmt::Display for RiccatiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiccatiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind_euler" => Ok(RiccatiMethod::UpwindEuler),
            "characteristics_rk4" => Ok(RiccatiMethod::CharacteristicsRk4),
            other => Err(Error::Usage(format!("unknown riccati method `{other}`"))),
        }
    }
}

/// Quadrature used for the exponent of the characteristic factor.
///
/// `LeftEndpoint` samples `abar` at every grid column from `z` up to but not
/// including `l`. On the upwind gain it reproduces the published `eta(0)`
/// values; `Trapezoid` is the symmetric alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentRule {
    #[default]
    LeftEndpoint,
    Trapezoid,
}

impl ExponentRule {
    fn weights(self, nz: usize, i: usize, h: f64) -> Vec<f64> {
        let n = nz - i;
        match self {
            ExponentRule::LeftEndpoint => (0..n).map(|m| if m + 1 < n { h } else { 0.0 }).collect(),
            ExponentRule::Trapezoid if n == 1 => vec![0.0],
            ExponentRule::Trapezoid => crate::grid::trapezoid_weights(n, h),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub g: Field,
    /// `a + bbar g`.
    pub abar: Field,
    /// Characteristic factor, masked where `t < (l - z)/c`.
    pub e: Field,
    pub method: RiccatiMethod,
    pub max_abs_g: f64,
    /// `tau |2a + 2|bbar| max g|`; the explicit source update is stable below 1.
    pub stability: f64,
}

/// Right-hand side of the Riccati ODE along a characteristic.
#[derive(Debug, Clone, Copy)]
struct Source {
    q: f64,
    a: f64,
    bbar: f64,
}

impl Source {
    #[inline]
    fn eval(self, g: f64) -> f64 {
        self.q + 2.0 * self.a * g + self.bbar * g * g
    }

    #[inline]
    fn rk4(self, g: f64, dt: f64) -> f64 {
        let k1 = self.eval(g);
        let k2 = self.eval(g + 0.5 * dt * k1);
        let k3 = self.eval(g + 0.5 * dt * k2);
        let k4 = self.eval(g + dt * k3);
        g + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    /// Solution after `duration` starting from `g0`, with steps no longer than `max_step`.
    fn flow(self, g0: f64, duration: f64, max_step: f64) -> f64 {
        if duration <= 0.0 {
            return g0;
        }
        let n = (duration / max_step - 1e-9).ceil().max(1.0) as usize;
        let dt = duration / n as f64;
        (0..n).fold(g0, |g, _| self.rk4(g, dt))
    }
}

fn stability_number(tau: f64, a: f64, bbar: f64, max_g: f64) -> f64 {
    tau * (2.0 * a + 2.0 * bbar.abs() * max_g).abs()
}

fn check_level(level: &[f64], t: f64, tau: f64, src: Source) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &v in level {
        if !v.is_finite() {
            worst = f64::INFINITY;
            break;
        }
        worst = worst.max(v.abs());
    }
    if worst > G_MAX {
        return Err(Error::RiccatiBlowup {
            max_abs_g: worst,
            limit: G_MAX,
            t,
            stability: stability_number(tau, src.a, src.bbar, worst),
        });
    }
    Ok(worst)
}

/// Solves for the gain on the problem grid. Returns the field and max|g|.
pub fn solve_g(problem: &ResolvedProblem, method: RiccatiMethod) -> Result<(Field, f64)> {
    let grid = problem.grid;
    let src = Source {
        q: problem.spec.q,
        a: problem.spec.a,
        bbar: problem.bbar,
    };
    match method {
        RiccatiMethod::UpwindEuler => {
            grid.check_cfl(problem.spec.c)?;
            upwind(grid, problem.spec.c, &problem.p_samples, src)
        }
        RiccatiMethod::CharacteristicsRk4 => characteristics(grid, problem.spec.c, &problem.p_samples, src),
    }
}

fn upwind(grid: UniformGrid, c: f64, p: &[f64], src: Source) -> Result<(Field, f64)> {
    let (nz, nt, tau) = (grid.nz(), grid.nt(), grid.tau());
    let mu = grid.cfl(c);
    let mut values = vec![0.0; nz * nt];
    let mut level = p.to_vec();
    level[0] = 0.0;
    let mut max_g = check_level(&level, grid.horizon(), tau, src)?;
    let store = |values: &mut Vec<f64>, level: &[f64], k: usize| {
        for (i, &v) in level.iter().enumerate() {
            values[i * nt + k] = v;
        }
    };
    // the final level keeps p exactly, including p(0)
    for (i, &v) in p.iter().enumerate() {
        values[i * nt + nt - 1] = v;
    }
    let mut next = vec![0.0; nz];
    for k in (0..nt - 1).rev() {
        next[0] = 0.0;
        for i in 1..nz {
            let gi = level[i];
            next[i] = gi - mu * (gi - level[i - 1]) + tau * src.eval(gi);
        }
        max_g = max_g.max(check_level(&next, grid.t(k), tau, src)?);
        std::mem::swap(&mut level, &mut next);
        store(&mut values, &level, k);
    }
    Ok((Field::from_values(grid, values, None)?, max_g))
}

fn characteristics(grid: UniformGrid, c: f64, p: &[f64], src: Source) -> Result<(Field, f64)> {
    let (nz, nt, tau, h) = (grid.nz(), grid.nt(), grid.tau(), grid.h());
    // boundary region: the characteristic leaves z = 0 with g = 0 and
    // travels z/c, independent of where along the boundary it started
    let from_boundary: Vec<f64> = (0..nz).map(|i| src.flow(0.0, grid.z(i) / c, tau)).collect();
    check_level(&from_boundary, 0.0, tau, src)?;

    let mut values = vec![0.0; nz * nt];
    let mut carried = p.to_vec();
    let mut max_g = check_level(&carried, grid.horizon(), tau, src)?;
    for (i, &v) in p.iter().enumerate() {
        values[i * nt + nt - 1] = v;
    }
    for step in 1..nt {
        let k = nt - 1 - step;
        let s = grid.horizon() - grid.t(k);
        for v in carried.iter_mut() {
            *v = src.rk4(*v, tau);
        }
        max_g = max_g.max(check_level(&carried, grid.t(k), tau, src)?);
        // foot of node i sits at fractional index i - d
        let d = c * s / h;
        let snapped = (d - d.round()).abs() < 1e-9;
        for i in 0..nz {
            let pos = i as f64 - d;
            let v = if i == 0 {
                0.0
            } else if snapped && pos.round() >= 0.0 {
                carried[pos.round() as usize]
            } else if pos < 0.0 {
                from_boundary[i]
            } else {
                let j = pos.floor() as usize;
                let theta = pos - j as f64;
                if j + 1 < nz {
                    (1.0 - theta) * carried[j] + theta * carried[j + 1]
                } else {
                    carried[j]
                }
            };
            values[i * nt + k] = v;
        }
    }
    Ok((Field::from_values(grid, values, None)?, max_g))
}

pub fn form_abar(g: &Field, a: f64, bbar: f64) -> Field {
    g.map(|v| a + bbar * v)
}

/// Whether `(z_i, t_k)` lies on or after the characteristic through `(l, 0)`.
pub fn e_valid(grid: &UniformGrid, c: f64, i: usize, k: usize) -> bool {
    k >= e_first_level(grid, c, i)
}

fn e_first_level(grid: &UniformGrid, c: f64, i: usize) -> usize {
    let travel = (grid.nz() - 1 - i) as f64 * grid.h() / c;
    Backshift::new(travel, grid.tau()).back
}

/// `exp(-(1/c) int_z^l abar(xi, t - (xi - z)/c) dxi)` on the valid region.
pub fn exponential_factor(abar: &Field, c: f64, rule: ExponentRule) -> Result<Field> {
    let grid = *abar.grid();
    let (nz, nt, h, tau) = (grid.nz(), grid.nt(), grid.h(), grid.tau());
    let shifts: Vec<Backshift> = (0..nz).map(|m| Backshift::new(m as f64 * h / c, tau)).collect();
    let columns: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|i| {
            let first = shifts[nz - 1 - i].back;
            let mut acc = vec![0.0; nt];
            for (m, w) in rule.weights(nz, i, h).into_iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let col = abar.column(i + m);
                let bs = shifts[m];
                for (k, slot) in acc.iter_mut().enumerate().skip(first) {
                    *slot += w * bs.apply(col, k);
                }
            }
            acc.iter()
                .enumerate()
                .map(|(k, &s)| if k >= first { (-s / c).exp() } else { f64::NAN })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(nz * nt);
    let mut mask = Vec::with_capacity(nz * nt);
    for (i, col) in columns.into_iter().enumerate() {
        let first = shifts[nz - 1 - i].back;
        mask.extend((0..nt).map(|k| k >= first));
        values.extend(col);
    }
    let e = Field::from_values(grid, values, Some(mask))?;
    e.check_finite("e")?;
    Ok(e)
}

/// Full Riccati stage: gain, effective rate, and characteristic factor.
pub fn solve(problem: &ResolvedProblem, method: RiccatiMethod, rule: ExponentRule) -> Result<RiccatiSolution> {
    let (g, max_abs_g) = solve_g(problem, method)?;
    let abar = form_abar(&g, problem.spec.a, problem.bbar);
    let e = exponential_factor(&abar, problem.spec.c, rule)?;
    Ok(RiccatiSolution {
        stability: stability_number(problem.grid.tau(), problem.spec.a, problem.bbar, max_abs_g),
        g,
        abar,
        e,
        method,
        max_abs_g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use crate::problem::{builtin_example, resolve, ProblemSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn transport_only(q: f64, a: f64, b: f64, p: &str) -> ProblemSpec {
        ProblemSpec {
            a,
            b,
            q,
            p: parse(p).unwrap(),
            ..builtin_example("ex1").unwrap()
        }
    }

    fn resolved(spec: &ProblemSpec, nz: usize, nt: usize) -> ResolvedProblem {
        resolve(spec, UniformGrid::new(nz, nt, spec.length, spec.horizon).unwrap()).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_gain() {
        let spec = transport_only(0.0, 1.8, 1.3, "0");
        let rp = resolved(&spec, 41, 481);
        for method in [RiccatiMethod::UpwindEuler, RiccatiMethod::CharacteristicsRk4] {
            let (g, max) = solve_g(&rp, method).unwrap();
            assert_eq!(max, 0.0);
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn unit_source_gain_is_travel_time() {
        // b = 0 is rejected by validation, so assemble the resolved data directly
        let spec = transport_only(1.0, 0.0, 1.3, "0");
        let mut rp = resolved(&spec, 51, 1201);
        rp.bbar = 0.0;
        // c tau / h = 0.5 * 0.005 / 0.02 = 0.125 for upwind; characteristics are exact
        let (g, _) = solve_g(&rp, RiccatiMethod::CharacteristicsRk4).unwrap();
        let grid = rp.grid;
        let exact = Field::from_fn(grid, |i, k| (6.0 - grid.t(k)).min(2.0 * grid.z(i)));
        assert!(g.max_abs_diff(&exact).unwrap() < 1e-10);

        // at c tau = h the upwind stencil becomes an exact shift
        let aligned = resolve(&spec, UniformGrid::new(51, 151, 1.0, 6.0).unwrap()).unwrap();
        let aligned = ResolvedProblem { bbar: 0.0, ..aligned };
        assert_relative_eq!(aligned.cfl(), 1.0, epsilon = 1e-12);
        let (g, _) = solve_g(&aligned, RiccatiMethod::UpwindEuler).unwrap();
        let grid = aligned.grid;
        let exact = Field::from_fn(grid, |i, k| (6.0 - grid.t(k)).min(2.0 * grid.z(i)));
        assert!(g.max_abs_diff(&exact).unwrap() < 1e-10);

        let abar = form_abar(&g, 0.0, 0.0);
        assert_eq!(abar.max_abs(), 0.0);
    }

    #[test]
    fn data_rows_are_exact() {
        let rp = resolved(&builtin_example("ex1").unwrap(), 51, 601);
        for method in [RiccatiMethod::UpwindEuler, RiccatiMethod::CharacteristicsRk4] {
            let (g, _) = solve_g(&rp, method).unwrap();
            assert_eq!(g.level(600), rp.p_samples);
            assert!(g.column(0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn abar_final_level() {
        let rp = resolved(&builtin_example("ex1").unwrap(), 101, 1201);
        let sol = solve(&rp, RiccatiMethod::UpwindEuler, ExponentRule::default()).unwrap();
        for i in 0..101 {
            let z = rp.grid.z(i);
            assert_relative_eq!(sol.abar.get(i, 1200), 1.8 - 0.563_333_333_333_333_3 * z, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_rate_factor() {
        let grid = UniformGrid::new(101, 1201, 1.0, 6.0).unwrap();
        for rule in [ExponentRule::LeftEndpoint, ExponentRule::Trapezoid] {
            let e = exponential_factor(&Field::filled(grid, 1.8), 0.5, rule).unwrap();
            assert_relative_eq!(e.get(0, 1200), (-3.6f64).exp(), epsilon = 1e-12);
            assert_relative_eq!(e.get(0, 1200), 0.027_324, epsilon = 1e-6);
            let ones = exponential_factor(&Field::zeros(grid), 0.5, rule).unwrap();
            assert_eq!(ones.max_abs(), 1.0);
            assert!(e.column(100).iter().all(|&v| v == 1.0));
            // t < (l - z)/c is masked: at z = 0 the first valid level is t = 2
            assert!(!e.is_valid(0, 399));
            assert!(e.is_valid(0, 400));
            assert!(e_valid(&grid, 0.5, 0, 400));
        }
    }

    #[test]
    fn factor_is_multiplicative_along_characteristics() {
        let rp = resolved(&builtin_example("ex1").unwrap(), 101, 1201);
        let sol = solve(&rp, RiccatiMethod::UpwindEuler, ExponentRule::Trapezoid).unwrap();
        // node (z=0.2, t=5) and (z=0.6, t=5-0.8) share a characteristic
        let (i1, k1, i2, k2) = (20, 1000, 60, 840);
        let inner: Vec<f64> = (i1..=i2)
            .map(|j| sol.abar.get(j, k1 - 4 * (j - i1)))
            .collect();
        let integral = crate::grid::trapezoid_z(&inner, 0.01).unwrap();
        let predicted = sol.e.get(i2, k2) * (-integral / 0.5).exp();
        assert_relative_eq!(sol.e.get(i1, k1), predicted, max_relative = 1e-12);
    }

    #[test]
    fn methods_converge_together_on_smooth_region() {
        // away from the corner characteristic the gap is first order in h
        let smooth_gap = |n: usize| {
            let rp = resolved(&builtin_example("ex1").unwrap(), n, 6 * (n - 1) + 1);
            let (up, _) = solve_g(&rp, RiccatiMethod::UpwindEuler).unwrap();
            let (ch, _) = solve_g(&rp, RiccatiMethod::CharacteristicsRk4).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for k in 0..rp.grid.nt() {
                    let foot = rp.grid.z(i) - 0.5 * (6.0 - rp.grid.t(k));
                    if foot.abs() > 0.1 {
                        worst = worst.max((up.get(i, k) - ch.get(i, k)).abs());
                    }
                }
            }
            worst
        };
        let (coarse, fine) = (smooth_gap(51), smooth_gap(101));
        assert!(coarse / fine >= 1.5, "{coarse} {fine}");
    }

    #[test]
    fn large_weights_blow_up() {
        let mut spec = builtin_example("ex1").unwrap();
        spec.q *= 1e6;
        spec.p = parse("1000000*z").unwrap();
        let rp = resolved(&spec, 101, 1201);
        let err = solve_g(&rp, RiccatiMethod::UpwindEuler).unwrap_err();
        assert!(matches!(err, Error::RiccatiBlowup { .. }), "{err}");
        assert!(err.to_string().contains("small enough"));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [RiccatiMethod::UpwindEuler, RiccatiMethod::CharacteristicsRk4] {
            assert_eq!(m.as_str().parse::<RiccatiMethod>().unwrap(), m);
        }
        assert!("euler".parse::<RiccatiMethod>().is_err());
    }

    #[test]
    fn scalar_flow_matches_closed_form() {
        // dg/ds = 1 - g^2 from 0 is tanh(s)
        let src = Source { q: 1.0, a: 0.0, bbar: -1.0 };
        assert_relative_eq!(src.flow(0.0, 2.0, 0.01), 2.0f64.tanh(), epsilon = 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gain_is_nonnegative(q in 0.0f64..3.0, a in -2.0f64..2.0, b in 0.2f64..2.0, pk in 0.0f64..3.0) {
            let spec = transport_only(q, a, b, &format!("{pk}*z"));
            let rp = resolved(&spec, 41, 481);
            let h = rp.grid.h();
            for method in [RiccatiMethod::UpwindEuler, RiccatiMethod::CharacteristicsRk4] {
                let (g, _) = solve_g(&rp, method).unwrap();
                prop_assert!(g.values().iter().all(|&v| v >= -10.0 * h));
            }
        }
    }
}
