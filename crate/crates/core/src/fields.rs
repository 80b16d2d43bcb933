//! Grids, field types, trapezoid quadrature and parabolic profiles.
//!
//! Nodes are numbered with the first axis running fastest, so in two
//! dimensions node `i + n_x * j` sits at `(x_i, y_j)`. Vector fields are
//! stored interleaved: component `a` of node `n` lives at `n * d + a`.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Uniform Cartesian grid on a box in space and on `[0, 1]` in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_x: usize,
    n_t: usize,
    spacing: Vec<f64>,
    dt: f64,
    weights: Vec<f64>,
}

impl SpaceTimeGrid {
    pub fn new(dim: usize, lower: &[f64], upper: &[f64], n_x: usize, n_t: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::SizeMismatch { expected: dim, actual: lower.len().min(upper.len()) });
        }
        for axis in 0..dim {
            let (a, b) = (lower[axis], upper[axis]);
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::DegenerateBox { axis, lower: a, upper: b });
            }
        }
        if n_x < 4 {
            return Err(Error::GridTooCoarse(format!("n_x = {n_x} < 4")));
        }
        if n_t < 2 {
            return Err(Error::GridTooCoarse(format!("n_t = {n_t} < 2")));
        }
        let spacing: Vec<f64> = (0..dim).map(|a| (upper[a] - lower[a]) / (n_x - 1) as f64).collect();
        let axis_weights: Vec<Vec<f64>> = spacing
            .iter()
            .map(|&h| (0..n_x).map(|i| if i == 0 || i == n_x - 1 { 0.5 * h } else { h }).collect())
            .collect();
        let n_nodes = n_x.pow(dim as u32);
        let weights = (0..n_nodes)
            .map(|node| {
                let mut w = 1.0;
                let mut rest = node;
                for aw in &axis_weights {
                    w *= aw[rest % n_x];
                    rest /= n_x;
                }
                w
            })
            .collect();
        Ok(Self {
            dim,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            n_x,
            n_t,
            spacing,
            dt: 1.0 / (n_t - 1) as f64,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// Spatial trapezoid weights, one per node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.upper[a] - self.lower[a]).product()
    }

    /// Time of slice `k`; the last slice sits exactly at 1.
    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.n_t {
            1.0
        } else {
            k as f64 * self.dt
        }
    }

    /// Trapezoid weights in time, including the factor `dt`.
    pub fn time_weights(&self) -> Vec<f64> {
        (0..self.n_t).map(|k| if k == 0 || k + 1 == self.n_t { 0.5 * self.dt } else { self.dt }).collect()
    }

    /// Index of node `node` along `axis`.
    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.n_x.pow(axis as u32)) % self.n_x
    }

    /// Distance between consecutive node numbers along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n_x.pow(axis as u32)
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        let i = self.axis_index(node, axis);
        if i + 1 == self.n_x {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn point(&self, node: usize, out: &mut [f64]) {
        for (axis, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.coord(node, axis);
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        (0..self.dim).any(|a| {
            let i = self.axis_index(node, a);
            i == 0 || i + 1 == self.n_x
        })
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lower[a] - slack && x[a] <= self.upper[a] + slack)
    }

    /// Evaluate a scalar function at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        (0..self.n_nodes())
            .map(|n| {
                self.point(n, &mut x);
                f(&x)
            })
            .collect()
    }
}

/// Builds a grid on `[lower, upper]` with `n_x` nodes per axis and `n_t` slices.
pub fn make_grid(dim: usize, lower: &[f64], upper: &[f64], n_x: usize, n_t: usize) -> Result<SpaceTimeGrid> {
    SpaceTimeGrid::new(dim, lower, upper, n_x, n_t)
}

/// Trapezoid-rule integral of a nodal field.
pub fn quadrature(field: &[f64], grid: &SpaceTimeGrid) -> Result<f64> {
    check_len(field.len(), grid.n_nodes())?;
    Ok(field.iter().zip(grid.weights()).map(|(f, w)| f * w).sum())
}

pub(crate) fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::SizeMismatch { expected, actual });
    }
    Ok(())
}

/// Tolerance on the mass of a density at construction.
pub const MASS_TOLERANCE: f64 = 1e-8;

/// Nonnegative nodal density with unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    values: Vec<f64>,
}

impl DensityField {
    /// Wraps values that already integrate to one.
    pub fn new(values: Vec<f64>, grid: &SpaceTimeGrid) -> Result<Self> {
        check_len(values.len(), grid.n_nodes())?;
        validate_values(&values)?;
        let mass = quadrature(&values, grid)?;
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDensity(format!("mass {mass} differs from 1")));
        }
        Ok(Self { values })
    }

    /// Divides nonnegative values by their quadrature.
    pub fn normalized(mut values: Vec<f64>, grid: &SpaceTimeGrid) -> Result<Self> {
        check_len(values.len(), grid.n_nodes())?;
        validate_values(&values)?;
        let mass = quadrature(&values, grid)?;
        if mass <= 0.0 {
            return Err(Error::InvalidDensity("zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { values })
    }

    /// Uniform density on the grid's box.
    pub fn uniform(grid: &SpaceTimeGrid) -> Self {
        let value = 1.0 / quadrature(&vec![1.0; grid.n_nodes()], grid).unwrap_or(1.0);
        Self { values: vec![value; grid.n_nodes()] }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

fn validate_values(values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidDensity(format!("value {} at node {i}", values[i])));
    }
    Ok(())
}

/// Nodal vector field, components interleaved per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    dim: usize,
    values: Vec<f64>,
}

impl VelocityField {
    pub fn new(values: Vec<f64>, grid: &SpaceTimeGrid) -> Result<Self> {
        check_len(values.len(), grid.n_nodes() * grid.dim())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite velocity at entry {i}")));
        }
        Ok(Self { dim: grid.dim(), values })
    }

    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self { dim: grid.dim(), values: vec![0.0; grid.n_nodes() * grid.dim()] }
    }

    pub fn constant(grid: &SpaceTimeGrid, value: &[f64]) -> Self {
        let values = (0..grid.n_nodes()).flat_map(|_| value.iter().cloned()).collect();
        Self { dim: grid.dim(), values }
    }

    /// Samples `f(x, out)` at every node.
    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let d = grid.dim();
        let mut values = vec![0.0; grid.n_nodes() * d];
        let mut x = vec![0.0; d];
        for n in 0..grid.n_nodes() {
            grid.point(n, &mut x);
            f(&x, &mut values[n * d..(n + 1) * d]);
        }
        Self { dim: d, values }
    }

    pub(crate) fn from_raw(dim: usize, values: Vec<f64>) -> Self {
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }
    pub fn component(&self, node: usize, axis: usize) -> f64 {
        self.values[node * self.dim + axis]
    }
    pub fn norm_at(&self, node: usize) -> f64 {
        self.at(node).iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Volume of the unit ball: 2 on the line, pi in the plane.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => PI.powf(dim as f64 / 2.0) / gamma_half_integer(dim as f64 / 2.0 + 1.0),
    }
}

fn gamma_half_integer(x: f64) -> f64 {
    if x == 1.0 {
        1.0
    } else if x == 0.5 {
        PI.sqrt()
    } else {
        (x - 1.0) * gamma_half_integer(x - 1.0)
    }
}

/// Profile `A (R^p - |x - c|^p)_+` with unit mass in the continuum.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicProfile {
    pub dim: usize,
    pub radius: f64,
    pub center: Vec<f64>,
    pub exponent: f64,
    pub normalization: f64,
}

impl ParabolicProfile {
    pub fn new(dim: usize, radius: f64, center: &[f64], exponent: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if center.len() != dim {
            return Err(Error::SizeMismatch { expected: dim, actual: center.len() });
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
        }
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidParameter(format!("profile exponent {exponent} must be positive")));
        }
        let d = dim as f64;
        let normalization = (exponent + d) / (exponent * unit_ball_volume(dim) * radius.powf(exponent + d));
        Ok(Self { dim, radius, center: center.to_vec(), exponent, normalization })
    }

    /// Peak value `A R^p`.
    pub fn peak(&self) -> f64 {
        self.normalization * self.radius.powf(self.exponent)
    }

    /// Coefficient of `|x - c|^p`, equal to `A`.
    pub fn slope(&self) -> f64 {
        self.normalization
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
        let top = self.radius.powf(self.exponent);
        let s = top - r.powf(self.exponent);
        // Values at round-off level on the sphere are treated as zero.
        if s > 1e-12 * top {
            self.normalization * s
        } else {
            0.0
        }
    }

    pub fn check_support(&self, grid: &SpaceTimeGrid) -> Result<()> {
        let slack = 1e-12 * (1.0 + self.radius);
        for a in 0..self.dim {
            if self.center[a] - self.radius < grid.lower()[a] - slack
                || self.center[a] + self.radius > grid.upper()[a] + slack
            {
                return Err(Error::SupportExitsDomain(format!(
                    "ball of radius {} around {:?} leaves the box on axis {a}",
                    self.radius, self.center
                )));
            }
        }
        Ok(())
    }

    /// Samples the profile and divides by its grid quadrature.
    pub fn sample(&self, grid: &SpaceTimeGrid) -> Result<DensityField> {
        if grid.dim() != self.dim {
            return Err(Error::SizeMismatch { expected: grid.dim(), actual: self.dim });
        }
        self.check_support(grid)?;
        DensityField::normalized(grid.sample(|x| self.value(x)), grid)
    }

    /// Averages of the profile over the dual cells of the grid.
    ///
    /// The trapezoid quadrature of the result equals the exact mass, so no
    /// slice-dependent renormalization factor is introduced.
    pub fn sample_cell_average(&self, grid: &SpaceTimeGrid) -> Result<DensityField> {
        if grid.dim() != self.dim {
            return Err(Error::SizeMismatch { expected: grid.dim(), actual: self.dim });
        }
        self.check_support(grid)?;
        let n = grid.n_nodes();
        let mut values = vec![0.0; n];
        for (node, out) in values.iter_mut().enumerate() {
            let cell: Vec<(f64, f64)> = (0..self.dim)
                .map(|a| {
                    let x = grid.coord(node, a);
                    let h = 0.5 * grid.spacing(a);
                    ((x - h).max(grid.lower()[a]), (x + h).min(grid.upper()[a]))
                })
                .collect();
            let volume: f64 = cell.iter().map(|(l, r)| r - l).product();
            *out = self.cell_integral(&cell) / volume;
        }
        DensityField::normalized(values, grid)
    }

    /// Exact antiderivative along one axis of `A (rho^p - |s|^p)_+`.
    fn line_integral(&self, rho: f64, l: f64, r: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let p = self.exponent;
        let g = |s: f64| {
            let s = s.clamp(-rho, rho);
            rho.powf(p) * s - s.signum() * s.abs().powf(p + 1.0) / (p + 1.0)
        };
        self.normalization * (g(r) - g(l))
    }

    fn cell_integral(&self, cell: &[(f64, f64)]) -> f64 {
        let (lx, rx) = (cell[0].0 - self.center[0], cell[0].1 - self.center[0]);
        if self.dim == 1 {
            return self.line_integral(self.radius, lx, rx);
        }
        let (ly, ry) = (cell[1].0 - self.center[1], cell[1].1 - self.center[1]);
        let rp = self.radius.powf(self.exponent);
        if (self.exponent - 2.0).abs() < 1e-15 {
            // Outer Gauss-Legendre in y over the exact inner integral in x.
            let integrand = |y: f64| {
                let rho2 = rp - y * y;
                if rho2 <= 0.0 {
                    0.0
                } else {
                    self.line_integral(rho2.sqrt(), lx, rx)
                }
            };
            return composite_gauss(integrand, ly.max(-self.radius), ry.min(self.radius), 8);
        }
        let sub = 16;
        let (hx, hy) = ((rx - lx) / sub as f64, (ry - ly) / sub as f64);
        let mut acc = 0.0;
        for j in 0..sub {
            for i in 0..sub {
                let x = lx + (i as f64 + 0.5) * hx;
                let y = ly + (j as f64 + 0.5) * hy;
                let s = rp - (x * x + y * y).sqrt().powf(self.exponent);
                if s > 0.0 {
                    acc += self.normalization * s;
                }
            }
        }
        acc * hx * hy
    }
}

/// Composite five-point Gauss-Legendre rule with `panels` panels.
fn composite_gauss(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    const NODES: [f64; 5] =
        [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const WEIGHTS: [f64; 5] = [
        128.0 / 225.0,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * acc
}

/// How a profile is turned into nodal values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Point values divided by their grid quadrature.
    Point,
    /// Dual-cell averages.
    #[default]
    CellAverage,
}

impl ParabolicProfile {
    pub fn sample_with(&self, grid: &SpaceTimeGrid, sampling: Sampling) -> Result<DensityField> {
        match sampling {
            Sampling::Point => self.sample(grid),
            Sampling::CellAverage => self.sample_cell_average(grid),
        }
    }
}

/// Samples `A (R^p - |x - c|^p)_+` on the grid, renormalized to unit mass.
pub fn parabolic_profile(
    dim: usize,
    radius: f64,
    center: &[f64],
    exponent: f64,
    grid: &SpaceTimeGrid,
) -> Result<DensityField> {
    ParabolicProfile::new(dim, radius, center, exponent)?.sample(grid)
}
