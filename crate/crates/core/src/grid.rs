//! Uniform space-time lattice, sampled fields and the quadrature and
//! interpolation primitives every solver shares.
//!
//! Node `(i, k)` sits at `(z_i, t_k) = (i h, k tau)`. Values are stored
//! space-major (`i * nt + k`) so each spatial node's time history is
//! contiguous; the characteristic integrals walk those columns.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformGrid {
    nz: usize,
    nt: usize,
    length: f64,
    horizon: f64,
}

impl UniformGrid {
    pub fn new(nz: usize, nt: usize, length: f64, horizon: f64) -> Result<Self> {
        if nz < 3 || nt < 3 {
            return Err(Error::Grid(format!(
                "need at least 3 nodes per axis, got nz={nz}, nt={nt}"
            )));
        }
        if !(length.is_finite() && length > 0.0 && horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Grid(format!(
                "length and horizon must be positive, got l={length}, T={horizon}"
            )));
        }
        Ok(Self {
            nz,
            nt,
            length,
            horizon,
        })
    }

    /// Builds the grid whose spacings are `h` and `tau`; both must divide the
    /// domain into a whole number of cells.
    pub fn from_steps(h: f64, tau: f64, length: f64, horizon: f64) -> Result<Self> {
        let cells = |step: f64, extent: f64, name: &str| -> Result<usize> {
            if !(step.is_finite() && step > 0.0) {
                return Err(Error::Grid(format!("{name} must be positive, got {step}")));
            }
            let n = (extent / step).round();
            if n < 1.0 || (n * step - extent).abs() > 1e-9 * extent {
                return Err(Error::Grid(format!(
                    "{name}={step} does not divide the extent {extent} evenly"
                )));
            }
            Ok(n as usize)
        };
        let nz = cells(h, length, "h")? + 1;
        let nt = cells(tau, horizon, "tau")? + 1;
        Self::new(nz, nt, length, horizon)
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn h(&self) -> f64 {
        self.length / (self.nz - 1) as f64
    }

    pub fn tau(&self) -> f64 {
        self.horizon / (self.nt - 1) as f64
    }

    pub fn z(&self, i: usize) -> f64 {
        if i == self.nz - 1 {
            self.length
        } else {
            i as f64 * self.h()
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.nt - 1 {
            self.horizon
        } else {
            k as f64 * self.tau()
        }
    }

    pub fn z_nodes(&self) -> Vec<f64> {
        (0..self.nz).map(|i| self.z(i)).collect()
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        (0..self.nt).map(|k| self.t(k)).collect()
    }

    /// Courant number `c tau / h`.
    pub fn cfl(&self, c: f64) -> f64 {
        c * self.tau() / self.h()
    }

    pub fn check_cfl(&self, c: f64) -> Result<()> {
        let cfl = self.cfl(c);
        if cfl > 1.0 + 1e-12 {
            Err(Error::Cfl { cfl })
        } else {
            Ok(())
        }
    }

    pub(crate) fn index(&self, i: usize, k: usize) -> usize {
        debug_assert!(i < self.nz && k < self.nt);
        i * self.nt + k
    }
}

/// Linear-interpolation stencil for looking `shift` time units back from a
/// time level: `t_k - shift` lies at fractional index `(k - back) + theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Backshift {
    pub back: usize,
    pub theta: f64,
}

impl Backshift {
    pub fn new(shift: f64, tau: f64) -> Self {
        let d = (shift / tau).max(0.0);
        let nearest = d.round();
        if (d - nearest).abs() < 1e-9 {
            return Self {
                back: nearest as usize,
                theta: 0.0,
            };
        }
        let back = d.ceil();
        Self {
            back: back as usize,
            theta: back - d,
        }
    }

    /// Interpolated value of `column` at `t_k - shift`; requires `k >= back`.
    #[inline]
    pub fn apply(&self, column: &[f64], k: usize) -> f64 {
        let lo = k - self.back;
        if self.theta == 0.0 {
            column[lo]
        } else {
            (1.0 - self.theta) * column[lo] + self.theta * column[lo + 1]
        }
    }
}

/// A scalar function sampled on a grid, with an optional validity mask for
/// functions that are only defined on part of the rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: UniformGrid,
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl Field {
    pub fn filled(grid: UniformGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.nz * grid.nt],
            mask: None,
        }
    }

    pub fn zeros(grid: UniformGrid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn from_fn(grid: UniformGrid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.nz * grid.nt);
        for i in 0..grid.nz {
            for k in 0..grid.nt {
                values.push(f(i, k));
            }
        }
        Self {
            grid,
            values,
            mask: None,
        }
    }

    /// Wraps raw space-major values (`i * nt + k`).
    pub fn from_values(grid: UniformGrid, values: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        let n = grid.nz * grid.nt;
        if values.len() != n || mask.as_ref().is_some_and(|m| m.len() != n) {
            return Err(Error::Grid(format!(
                "expected {n} values for a {}x{} grid",
                grid.nz, grid.nt
            )));
        }
        Ok(Self { grid, values, mask })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(Error::Grid("mask size does not match the grid".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, value: f64) {
        let idx = self.grid.index(i, k);
        self.values[idx] = value;
    }

    pub fn is_valid(&self, i: usize, k: usize) -> bool {
        self.mask
            .as_ref()
            .map_or(true, |m| m[self.grid.index(i, k)])
    }

    /// Time history of spatial node `i`.
    pub fn column(&self, i: usize) -> &[f64] {
        let nt = self.grid.nt;
        &self.values[i * nt..(i + 1) * nt]
    }

    pub fn column_mut(&mut self, i: usize) -> &mut [f64] {
        let nt = self.grid.nt;
        &mut self.values[i * nt..(i + 1) * nt]
    }

    /// Spatial profile at time level `k`.
    pub fn level(&self, k: usize) -> Vec<f64> {
        (0..self.grid.nz).map(|i| self.get(i, k)).collect()
    }

    pub fn set_level(&mut self, k: usize, profile: &[f64]) {
        debug_assert_eq!(profile.len(), self.grid.nz);
        for (i, &v) in profile.iter().enumerate() {
            self.set(i, k, v);
        }
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Maximum absolute value over valid nodes.
    pub fn max_abs(&self) -> f64 {
        match &self.mask {
            None => self.values.iter().fold(0.0, |m, v| m.max(v.abs())),
            Some(mask) => self
                .values
                .iter()
                .zip(mask)
                .filter(|(_, &ok)| ok)
                .fold(0.0, |m, (v, _)| m.max(v.abs())),
        }
    }

    /// Max-norm distance over nodes valid in both fields.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        let mut worst: f64 = 0.0;
        for idx in 0..self.values.len() {
            let ok = self.mask.as_ref().map_or(true, |m| m[idx])
                && other.mask.as_ref().map_or(true, |m| m[idx]);
            if ok {
                worst = worst.max((self.values[idx] - other.values[idx]).abs());
            }
        }
        Ok(worst)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }

    /// Pointwise combination; the result is valid where both inputs are.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.same_grid(other)?;
        let mask = match (&self.mask, &other.mask) {
            (None, None) => None,
            (Some(m), None) | (None, Some(m)) => Some(m.clone()),
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| *x && *y).collect()),
        };
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            mask,
        })
    }

    /// First valid non-finite node, reported with coordinates.
    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        for i in 0..self.grid.nz {
            for k in 0..self.grid.nt {
                if self.is_valid(i, k) && !self.get(i, k).is_finite() {
                    return Err(Error::NonFinite {
                        what,
                        z: self.grid.z(i),
                        t: self.grid.t(k),
                    });
                }
            }
        }
        Ok(())
    }

    /// Bilinear interpolation at an arbitrary point of the rectangle.
    pub fn sample_at(&self, z: f64, t: f64) -> Result<f64> {
        let g = &self.grid;
        let (i0, a) = bracket(z, g.h(), g.nz, g.length).ok_or(Error::OutOfRange {
            t: z,
            horizon: g.length,
        })?;
        let (k0, b) = bracket(t, g.tau(), g.nt, g.horizon).ok_or(Error::OutOfRange {
            t,
            horizon: g.horizon,
        })?;
        let corner = |di: usize, dk: usize| -> Result<f64> {
            let (i, k) = (i0 + di, k0 + dk);
            if !self.is_valid(i, k) {
                return Err(Error::Masked { i, k });
            }
            Ok(self.get(i, k))
        };
        let mut value = 0.0;
        for (di, wz) in [(0, 1.0 - a), (1, a)] {
            for (dk, wt) in [(0, 1.0 - b), (1, b)] {
                let w = wz * wt;
                if w != 0.0 {
                    value += w * corner(di, dk)?;
                }
            }
        }
        Ok(value)
    }

    /// Long-format `z,t,value` rows, masked nodes omitted, every `stride`-th
    /// node in each axis plus the last one.
    pub fn write_csv<W: Write>(&self, out: &mut W, stride: usize) -> std::io::Result<()> {
        writeln!(out, "z,t,value")?;
        for i in strided(self.grid.nz, stride) {
            for k in strided(self.grid.nt, stride) {
                if self.is_valid(i, k) {
                    writeln!(out, "{},{},{}", self.grid.z(i), self.grid.t(k), self.get(i, k))?;
                }
            }
        }
        Ok(())
    }
}

fn strided(n: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    (0..n)
        .filter(move |&i| i % stride == 0 || i == n - 1)
}

/// Locates `x` in a uniform axis: lower index and fractional weight.
fn bracket(x: f64, step: f64, n: usize, extent: f64) -> Option<(usize, f64)> {
    let tol = 1e-12 * extent.max(1.0);
    if !(x >= -tol && x <= extent + tol) {
        return None;
    }
    let pos = (x / step).clamp(0.0, (n - 1) as f64);
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-9 {
        let k = nearest as usize;
        return Some(if k == n - 1 { (n - 2, 1.0) } else { (k, 0.0) });
    }
    let lo = (pos.floor() as usize).min(n - 2);
    Some((lo, pos - lo as f64))
}

/// Composite trapezoid weights for `n` uniformly spaced samples.
pub fn trapezoid_weights(n: usize, step: f64) -> Vec<f64> {
    (0..n)
        .map(|j| if j == 0 || j == n - 1 { 0.5 * step } else { step })
        .collect()
}

/// Composite trapezoid rule over uniformly spaced samples.
pub fn trapezoid_z(samples: &[f64], h: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Numerical(
            "trapezoid rule needs at least two samples".into(),
        ));
    }
    if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite quadrature sample at index {bad}")));
    }
    let n = samples.len();
    let interior: f64 = samples[1..n - 1].iter().sum();
    Ok(h * (0.5 * (samples[0] + samples[n - 1]) + interior))
}

/// Tensor-product trapezoid rule over the whole rectangle.
pub fn trapezoid_zt(field: &Field) -> Result<f64> {
    let g = field.grid();
    let tau = g.tau();
    let mut per_node = Vec::with_capacity(g.nz());
    for i in 0..g.nz() {
        if let Some(k) = (0..g.nt()).find(|&k| !field.is_valid(i, k)) {
            return Err(Error::Masked { i, k });
        }
        per_node.push(trapezoid_z(field.column(i), tau)?);
    }
    trapezoid_z(&per_node, g.h())
}

/// Linear interpolation in time at spatial node `i`.
pub fn interp_time(field: &Field, i: usize, t: f64) -> Result<f64> {
    let g = field.grid();
    let (k0, theta) = bracket(t, g.tau(), g.nt(), g.horizon()).ok_or(Error::OutOfRange {
        t,
        horizon: g.horizon(),
    })?;
    if !field.is_valid(i, k0) {
        return Err(Error::Masked { i, k: k0 });
    }
    if theta == 0.0 {
        return Ok(field.get(i, k0));
    }
    if !field.is_valid(i, k0 + 1) {
        return Err(Error::Masked { i, k: k0 + 1 });
    }
    if theta == 1.0 {
        return Ok(field.get(i, k0 + 1));
    }
    Ok((1.0 - theta) * field.get(i, k0) + theta * field.get(i, k0 + 1))
}
