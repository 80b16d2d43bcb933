//! Continuity equation, pushforwards, velocity transport and tangent velocities.

use crate::curve::{Curve, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::fields::{check_len, DensityField, SpaceTimeGrid, VelocityField};
use crate::interp::Interpolator;
use crate::linalg::{det, pcg, solve_small};

/// Time-dependent diffeomorphism `T(t, .)` of the domain.
///
/// Jacobians are row-major: `out[i * d + j] = dT_i / dx_j`.
pub trait DiffeoPath {
    fn dim(&self) -> usize;
    fn map(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn time_derivative(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn jacobian_det(&self, t: f64, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut m = vec![0.0; d * d];
        self.jacobian(t, x, &mut m);
        det(&m, d)
    }
}

/// `T(t, x) = x + t e`.
#[derive(Debug, Clone)]
pub struct Translation {
    pub shift: Vec<f64>,
}

impl DiffeoPath for Translation {
    fn dim(&self) -> usize {
        self.shift.len()
    }
    fn map(&self, t: f64, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i] + t * self.shift[i];
        }
    }
    fn jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity(out, self.dim());
    }
    fn time_derivative(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.shift);
    }
}

/// Time-independent `T(x) = A x + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn dilation(dim: usize, factor: f64, center: &[f64]) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        identity(&mut matrix, dim);
        matrix.iter_mut().for_each(|m| *m *= factor);
        let offset = center.iter().map(|c| c * (1.0 - factor)).collect();
        Self { matrix, offset }
    }
}

impl DiffeoPath for AffineMap {
    fn dim(&self) -> usize {
        self.offset.len()
    }
    fn map(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = self.offset[i] + (0..d).map(|j| self.matrix[i * d + j] * x[j]).sum::<f64>();
        }
    }
    fn jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }
    fn time_derivative(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// Composition `second(t, first(t, x))`.
pub struct Composed<'a> {
    pub first: &'a dyn DiffeoPath,
    pub second: &'a dyn DiffeoPath,
}

impl DiffeoPath for Composed<'_> {
    fn dim(&self) -> usize {
        self.first.dim()
    }
    fn map(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut y = vec![0.0; self.dim()];
        self.first.map(t, x, &mut y);
        self.second.map(t, &y, out);
    }
    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut y = vec![0.0; d];
        let (mut a, mut b) = (vec![0.0; d * d], vec![0.0; d * d]);
        self.first.map(t, x, &mut y);
        self.first.jacobian(t, x, &mut a);
        self.second.jacobian(t, &y, &mut b);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| b[i * d + k] * a[k * d + j]).sum();
            }
        }
    }
    fn time_derivative(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut y = vec![0.0; d];
        let (mut ta, mut tb, mut b) = (vec![0.0; d], vec![0.0; d], vec![0.0; d * d]);
        self.first.map(t, x, &mut y);
        self.first.time_derivative(t, x, &mut ta);
        self.second.time_derivative(t, &y, &mut tb);
        self.second.jacobian(t, &y, &mut b);
        for i in 0..d {
            out[i] = tb[i] + (0..d).map(|k| b[i * d + k] * ta[k]).sum::<f64>();
        }
    }
}

pub(crate) fn identity(out: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = if i == j { 1.0 } else { 0.0 };
        }
    }
}

const NEWTON_MAX_ITER: usize = 50;

/// Solves `T(t, x) = y` by Newton iteration seeded at `y`.
pub fn invert(path: &dyn DiffeoPath, t: f64, y: &[f64], node: usize) -> Result<Vec<f64>> {
    let d = path.dim();
    let scale = 1.0 + y.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let mut x = y.to_vec();
    let (mut tx, mut jac, mut step, mut rhs) = (vec![0.0; d], vec![0.0; d * d], vec![0.0; d], vec![0.0; d]);
    for _ in 0..NEWTON_MAX_ITER {
        path.map(t, &x, &mut tx);
        for i in 0..d {
            rhs[i] = tx[i] - y[i];
        }
        if rhs.iter().all(|r| r.abs() <= 1e-15 * scale) {
            return Ok(x);
        }
        path.jacobian(t, &x, &mut jac);
        if !solve_small(&jac, &rhs, d, &mut step) {
            return Err(Error::NotDiffeomorphism { node, jacobian: det(&jac, d) });
        }
        for i in 0..d {
            x[i] -= step[i];
        }
        if step.iter().all(|s| s.abs() <= 1e-15 * scale) {
            return Ok(x);
        }
    }
    path.map(t, &x, &mut tx);
    if tx.iter().zip(y).all(|(a, b)| (a - b).abs() <= 1e-12 * scale) {
        return Ok(x);
    }
    Err(Error::InversionFailed { node, iterations: NEWTON_MAX_ITER })
}

/// Density of `T(t, .)_# (u dx)`, renormalized to unit mass.
pub fn pushforward(u: &DensityField, path: &dyn DiffeoPath, t: f64, grid: &SpaceTimeGrid) -> Result<DensityField> {
    check_len(u.len(), grid.n_nodes())?;
    let values = pushforward_values(u.values(), path, t, grid)?;
    DensityField::normalized(values, grid)
}

pub(crate) fn pushforward_values(u: &[f64], path: &dyn DiffeoPath, t: f64, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    let d = grid.dim();
    let interp = Interpolator::new(grid);
    let slack = 1e-12 * grid.spacing(0);
    let mut y = vec![0.0; d];
    (0..grid.n_nodes())
        .map(|node| {
            grid.point(node, &mut y);
            let x = invert(path, t, &y, node)?;
            if !grid.contains(&x, slack) {
                return Ok(0.0);
            }
            let jac = path.jacobian_det(t, &x);
            if jac <= 0.0 {
                return Err(Error::NotDiffeomorphism { node, jacobian: jac });
            }
            Ok((interp.scalar(u, &x) / jac).max(0.0))
        })
        .collect()
}

/// Velocity `(grad T v + dT/dt)` evaluated at `T^{-1}(y)`.
pub fn transformed_velocity(
    v: &VelocityField,
    path: &dyn DiffeoPath,
    t: f64,
    grid: &SpaceTimeGrid,
) -> Result<VelocityField> {
    let d = grid.dim();
    check_len(v.values().len(), grid.n_nodes() * d)?;
    let interp = Interpolator::new(grid);
    let mut out = vec![0.0; grid.n_nodes() * d];
    let (mut y, mut vx, mut jac, mut dt) = (vec![0.0; d], vec![0.0; d], vec![0.0; d * d], vec![0.0; d]);
    for node in 0..grid.n_nodes() {
        grid.point(node, &mut y);
        let x = invert(path, t, &y, node)?;
        if !grid.contains(&x, 1e-12 * grid.spacing(0)) {
            continue;
        }
        interp.vector(v.values(), &x, &mut vx);
        path.jacobian(t, &x, &mut jac);
        path.time_derivative(t, &x, &mut dt);
        for i in 0..d {
            out[node * d + i] = dt[i] + (0..d).map(|j| jac[i * d + j] * vx[j]).sum::<f64>();
        }
    }
    VelocityField::new(out, grid)
}

/// Options for [`continuity_residual_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityOptions {
    /// Drop stencils that mix nodes above and below `threshold * max u`.
    pub free_boundary_threshold: Option<f64>,
}

impl Default for ContinuityOptions {
    fn default() -> Self {
        Self { free_boundary_threshold: Some(1e-3) }
    }
}

/// Space-time L2 norm of `D_t u + div(u v)` with the default options.
pub fn continuity_residual(curve: &Curve) -> f64 {
    continuity_residual_with(curve, &ContinuityOptions::default())
}

/// Space-time L2 norm of `D_t u + div(u v)`.
///
/// Second-order differences everywhere: centered in the interior, one-sided
/// at `t = 0, 1` and at the walls, where the normal flux is set to zero.
pub fn continuity_residual_with(curve: &Curve, opts: &ContinuityOptions) -> f64 {
    let field = continuity_field(curve, opts);
    let grid = curve.grid();
    let tw = grid.time_weights();
    let mut acc = 0.0;
    for (k, r) in field.iter().enumerate() {
        acc += tw[k] * r.iter().zip(grid.weights()).map(|(r, w)| w * r * r).sum::<f64>();
    }
    acc.sqrt()
}

/// Pointwise continuity residual per slice; masked nodes hold zero.
pub fn continuity_field(curve: &Curve, opts: &ContinuityOptions) -> Vec<Vec<f64>> {
    let grid = curve.grid();
    let (nt, nn, d) = (curve.n_slices(), grid.n_nodes(), grid.dim());
    let flux: Vec<Vec<f64>> = (0..nt)
        .map(|k| {
            let u = curve.density(k).values();
            let v = curve.velocity(k);
            v.values().iter().enumerate().map(|(i, c)| c * u[i / d]).collect()
        })
        .collect();
    let zones = opts.free_boundary_threshold.map(|delta| classify_zones(curve.densities(), grid, delta));
    let dt = grid.dt();
    (0..nt)
        .map(|k| {
            let times: Vec<(usize, f64)> = time_stencil(k, nt, dt);
            let mut out = vec![0.0; nn];
            for (node, o) in out.iter_mut().enumerate() {
                if let Some(zones) = &zones {
                    let mut points: Vec<(usize, usize)> = times.iter().map(|&(kk, _)| (kk, node)).collect();
                    for axis in 0..d {
                        points.extend(space_stencil(grid, node, axis).into_iter().map(|(j, _)| (k, j)));
                    }
                    if !stencil_is_clean(zones, &points) {
                        continue;
                    }
                }
                let mut r: f64 = times.iter().map(|&(kk, c)| c * curve.density(kk).values()[node]).sum();
                for axis in 0..d {
                    let i = grid.axis_index(node, axis);
                    let at_wall = i == 0 || i + 1 == grid.n_x();
                    r += space_stencil(grid, node, axis)
                        .into_iter()
                        .map(|(j, c)| if at_wall && j == node { 0.0 } else { c * flux[k][j * d + axis] })
                        .sum::<f64>();
                }
                *o = r;
            }
            out
        })
        .collect()
}

/// Position of a node relative to the free boundary `{u = delta max u}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    /// The node and its axis neighbours lie above the threshold.
    Interior,
    /// The node and its axis neighbours lie at or below the threshold.
    Exterior,
    Edge,
}

/// Classifies every node of every slice.
pub fn classify_zones(densities: &[DensityField], grid: &SpaceTimeGrid, delta: f64) -> Vec<Vec<Zone>> {
    densities
        .iter()
        .map(|u| {
            let cut = delta * u.max();
            let vals = u.values();
            (0..grid.n_nodes())
                .map(|node| {
                    let above = vals[node] > cut;
                    let mut same = true;
                    for axis in 0..grid.dim() {
                        let i = grid.axis_index(node, axis);
                        let st = grid.stride(axis);
                        if i > 0 && (vals[node - st] > cut) != above {
                            same = false;
                        }
                        if i + 1 < grid.n_x() && (vals[node + st] > cut) != above {
                            same = false;
                        }
                    }
                    match (same, above) {
                        (true, true) => Zone::Interior,
                        (true, false) => Zone::Exterior,
                        _ => Zone::Edge,
                    }
                })
                .collect()
        })
        .collect()
}

/// True when all `(slice, node)` points are interior, or all exterior.
pub fn stencil_is_clean(zones: &[Vec<Zone>], points: &[(usize, usize)]) -> bool {
    let first = zones[points[0].0][points[0].1];
    first != Zone::Edge && points.iter().all(|&(k, j)| zones[k][j] == first)
}

/// Second-order first-derivative stencil in time at slice `k`.
pub(crate) fn time_stencil(k: usize, nt: usize, dt: f64) -> Vec<(usize, f64)> {
    let s = 0.5 / dt;
    if nt == 2 {
        return vec![(0, -1.0 / dt), (1, 1.0 / dt)];
    }
    if k == 0 {
        vec![(0, -3.0 * s), (1, 4.0 * s), (2, -s)]
    } else if k + 1 == nt {
        vec![(k, 3.0 * s), (k - 1, -4.0 * s), (k - 2, s)]
    } else {
        vec![(k + 1, s), (k - 1, -s)]
    }
}

/// Second-order first-derivative stencil along `axis` at `node`.
pub(crate) fn space_stencil(grid: &SpaceTimeGrid, node: usize, axis: usize) -> Vec<(usize, f64)> {
    let i = grid.axis_index(node, axis);
    let st = grid.stride(axis);
    let s = 0.5 / grid.spacing(axis);
    if i == 0 {
        vec![(node, -3.0 * s), (node + st, 4.0 * s), (node + 2 * st, -s)]
    } else if i + 1 == grid.n_x() {
        vec![(node, 3.0 * s), (node - st, -4.0 * s), (node - 2 * st, s)]
    } else {
        vec![(node + st, s), (node - st, -s)]
    }
}

/// Tangent field of one slice, stored on faces and at nodes.
#[derive(Debug, Clone)]
pub struct TangentSlice {
    pub potential: Vec<f64>,
    /// Per axis, the gradient on the face between `node` and `node + stride`.
    pub face_velocity: Vec<Vec<f64>>,
    pub velocity: VelocityField,
    pub cg_iterations: usize,
}

/// Tolerance of the weighted Poisson solve.
pub const TANGENT_CG_TOL: f64 = 1e-10;

/// Faces as `(axis, lower node, upper node, dual area)`.
pub(crate) fn faces(grid: &SpaceTimeGrid) -> Vec<(usize, usize, usize, f64)> {
    let d = grid.dim();
    let mut out = Vec::new();
    for axis in 0..d {
        let st = grid.stride(axis);
        for node in 0..grid.n_nodes() {
            if grid.axis_index(node, axis) + 1 == grid.n_x() {
                continue;
            }
            let area: f64 = (0..d)
                .filter(|&b| b != axis)
                .map(|b| {
                    let i = grid.axis_index(node, b);
                    let h = grid.spacing(b);
                    if i == 0 || i + 1 == grid.n_x() {
                        0.5 * h
                    } else {
                        h
                    }
                })
                .product();
            out.push((axis, node, node + st, area));
        }
    }
    out
}

/// Face density `max(mean, floor)`.
fn face_density(u: &[f64], a: usize, b: usize, floor: f64) -> f64 {
    (0.5 * (u[a] + u[b])).max(floor)
}

/// Discrete kinetic energy `sum_f area h u_f g_f^2` of a face velocity.
pub fn face_kinetic(u: &DensityField, face_velocity: &[Vec<f64>], grid: &SpaceTimeGrid) -> f64 {
    let floor = DENSITY_FLOOR * u.max();
    faces(grid)
        .into_iter()
        .map(|(axis, a, b, area)| {
            let g = face_velocity[axis][a];
            area * grid.spacing(axis) * face_density(u.values(), a, b, floor) * g * g
        })
        .sum()
}

/// Net outflow `sum_f area u_f g_f` of each dual cell.
pub fn face_divergence(u: &DensityField, face_velocity: &[Vec<f64>], grid: &SpaceTimeGrid) -> Vec<f64> {
    let floor = DENSITY_FLOOR * u.max();
    let mut out = vec![0.0; grid.n_nodes()];
    for (axis, a, b, area) in faces(grid) {
        let flux = area * face_density(u.values(), a, b, floor) * face_velocity[axis][a];
        out[a] += flux;
        out[b] -= flux;
    }
    out
}

/// Time derivative of a density path by second-order differences.
pub fn density_rate(path: &[DensityField], k: usize, dt: f64) -> Vec<f64> {
    let stencil = time_stencil(k, path.len(), dt);
    let n = path[0].len();
    (0..n).map(|j| stencil.iter().map(|&(kk, c)| c * path[kk].values()[j]).sum()).collect()
}

/// Solves `div(u grad phi) = -rate` with no-flux walls on the dual mesh.
pub fn tangent_slice(u: &DensityField, rate: &[f64], grid: &SpaceTimeGrid) -> Result<TangentSlice> {
    check_len(u.len(), grid.n_nodes())?;
    check_len(rate.len(), grid.n_nodes())?;
    let umax = u.max();
    if umax <= 0.0 {
        return Err(Error::InvalidDensity("density vanishes identically".into()));
    }
    let floor = DENSITY_FLOOR * umax;
    let nn = grid.n_nodes();
    let list: Vec<(usize, usize, f64)> = faces(grid)
        .into_iter()
        .map(|(axis, a, b, area)| (a, b, area * face_density(u.values(), a, b, floor) / grid.spacing(axis)))
        .collect();
    let mut diag = vec![0.0; nn];
    for &(a, b, c) in &list {
        diag[a] += c;
        diag[b] += c;
    }
    let precond: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut rhs: Vec<f64> = rate.iter().zip(grid.weights()).map(|(r, w)| r * w).collect();
    let mean = rhs.iter().sum::<f64>() / nn as f64;
    rhs.iter_mut().for_each(|r| *r -= mean);
    let apply = |x: &[f64], y: &mut [f64]| {
        y.iter_mut().for_each(|v| *v = 0.0);
        for &(a, b, c) in &list {
            let f = c * (x[a] - x[b]);
            y[a] += f;
            y[b] -= f;
        }
    };
    let mut phi = vec![0.0; nn];
    let outcome = pcg(apply, &precond, &rhs, &mut phi, TANGENT_CG_TOL, 50 * nn + 1000);
    if !outcome.converged {
        return Err(Error::CgFailed { iterations: outcome.iterations, residual: outcome.relative_residual });
    }
    let d = grid.dim();
    let mut face_velocity = vec![vec![0.0; nn]; d];
    for (axis, a, b, _) in faces(grid) {
        face_velocity[axis][a] = (phi[b] - phi[a]) / grid.spacing(axis);
    }
    let mut nodal = vec![0.0; nn * d];
    for node in 0..nn {
        for axis in 0..d {
            let i = grid.axis_index(node, axis);
            let st = grid.stride(axis);
            let right = if i + 1 < grid.n_x() { face_velocity[axis][node] } else { 0.0 };
            let left = if i > 0 { face_velocity[axis][node - st] } else { 0.0 };
            nodal[node * d + axis] = 0.5 * (left + right);
        }
    }
    Ok(TangentSlice {
        potential: phi,
        face_velocity,
        velocity: VelocityField::from_raw(d, nodal),
        cg_iterations: outcome.iterations,
    })
}

/// Minimal-norm velocities (p = 2) of a density path, one per slice.
pub fn tangent_velocity(path: &[DensityField], p: f64, grid: &SpaceTimeGrid) -> Result<Vec<VelocityField>> {
    if (p - 2.0).abs() > 1e-12 {
        return Err(Error::UnsupportedForm { form: "tangent_velocity", requirement: "p = 2" });
    }
    check_len(path.len(), grid.n_t())?;
    (0..path.len()).map(|k| Ok(tangent_slice(&path[k], &density_rate(path, k, grid.dt()), grid)?.velocity)).collect()
}
