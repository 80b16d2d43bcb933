//! First variations of `F`, `V` and the action along `T = id + eps xi`.
//!
//! Analytic derivatives are evaluated by trapezoid quadrature on the grid.
//! The [`oracle`] submodule rebuilds the perturbed functionals from
//! [`pushforward`](crate::transport::pushforward) and
//! [`transformed_velocity`](crate::transport::transformed_velocity) and
//! differentiates them numerically.

pub mod oracle;

use rayon::prelude::*;

use crate::curve::Curve;
use crate::energy::{kinetic_values, lq_values, EnergyParams};
use crate::error::{Error, Result};
use crate::fields::{check_len, DensityField, SpaceTimeGrid, VelocityField};
use crate::linalg::det;
use crate::transport::DiffeoPath;

/// Smooth vector field `xi(t, x)` with analytic derivatives.
///
/// Gradients are row-major: `out[i * d + j] = d xi_i / d x_j`.
pub trait PerturbationField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn time_derivative(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn divergence(&self, t: f64, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut g = vec![0.0; d * d];
        self.gradient(t, x, &mut g);
        (0..d).map(|i| g[i * d + i]).sum()
    }
}

/// One product-of-sines term of a [`SineModeField`].
#[derive(Debug, Clone, PartialEq)]
pub struct SineMode {
    pub component: usize,
    /// Wavenumber per axis, counted in half periods across the box.
    pub wavenumbers: Vec<u32>,
    pub amplitude: f64,
}

/// `xi_c(t, x) = tau(t) sum a prod_b sin(k_b pi (x_b - lower_b) / L_b)`.
///
/// Every component vanishes on the boundary of the box. The time factor is
/// `sin(n pi t)` for `time_mode = n > 0` and `1` for `time_mode = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineModeField {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub time_mode: u32,
    pub modes: Vec<SineMode>,
}

impl SineModeField {
    pub fn new(grid: &SpaceTimeGrid, time_mode: u32, modes: Vec<SineMode>) -> Result<Self> {
        for m in &modes {
            if m.component >= grid.dim() || m.wavenumbers.len() != grid.dim() {
                return Err(Error::InvalidParameter(format!("mode {m:?} does not fit dimension {}", grid.dim())));
            }
        }
        Ok(Self { lower: grid.lower().to_vec(), upper: grid.upper().to_vec(), time_mode, modes })
    }

    fn time_factor(&self, t: f64) -> (f64, f64) {
        if self.time_mode == 0 {
            return (1.0, 0.0);
        }
        let w = self.time_mode as f64 * std::f64::consts::PI;
        ((w * t).sin(), w * (w * t).cos())
    }

    fn phases(&self, mode: &SineMode, x: &[f64]) -> Vec<(f64, f64, f64)> {
        mode.wavenumbers
            .iter()
            .enumerate()
            .map(|(b, &k)| {
                let w = k as f64 * std::f64::consts::PI / (self.upper[b] - self.lower[b]);
                let a = w * (x[b] - self.lower[b]);
                (a.sin(), a.cos(), w)
            })
            .collect()
    }

    /// Bound on `|d xi_i / d x_j|` over space and time.
    pub fn gradient_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let top = m
                    .wavenumbers
                    .iter()
                    .enumerate()
                    .map(|(b, &k)| k as f64 * std::f64::consts::PI / (self.upper[b] - self.lower[b]))
                    .fold(0.0, f64::max);
                m.amplitude.abs() * top
            })
            .sum()
    }

    fn accumulate(&self, x: &[f64], scale: f64, mut term: impl FnMut(&SineMode, f64, &[(f64, f64, f64)])) {
        for mode in &self.modes {
            let ph = self.phases(mode, x);
            term(mode, scale * mode.amplitude, &ph);
        }
    }
}

impl PerturbationField for SineModeField {
    fn dim(&self) -> usize {
        self.lower.len()
    }
    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.accumulate(x, self.time_factor(t).0, |mode, a, ph| {
            out[mode.component] += a * ph.iter().map(|p| p.0).product::<f64>();
        });
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        self.accumulate(x, self.time_factor(t).0, |mode, a, ph| {
            for j in 0..d {
                let mut g = a;
                for (b, p) in ph.iter().enumerate() {
                    g *= if b == j { p.2 * p.1 } else { p.0 };
                }
                out[mode.component * d + j] += g;
            }
        });
    }
    fn time_derivative(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.accumulate(x, self.time_factor(t).1, |mode, a, ph| {
            out[mode.component] += a * ph.iter().map(|p| p.0).product::<f64>();
        });
    }
}

type VectorFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Perturbation given by closures.
pub struct FnField {
    dim: usize,
    value: VectorFn,
    gradient: VectorFn,
    time_derivative: Option<VectorFn>,
}

impl FnField {
    pub fn new(
        dim: usize,
        value: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        gradient: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        time_derivative: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Box::new(value),
            gradient: Box::new(gradient),
            time_derivative: Some(Box::new(time_derivative)),
        }
    }

    /// Time-independent field.
    pub fn stationary(
        dim: usize,
        value: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Box::new(move |_, x, o| value(x, o)),
            gradient: Box::new(move |_, x, o| gradient(x, o)),
            time_derivative: None,
        }
    }
}

impl PerturbationField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.value)(t, x, out)
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.gradient)(t, x, out)
    }
    fn time_derivative(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.time_derivative {
            Some(f) => f(t, x, out),
            None => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }
}

/// `sum_i c_i xi_i`.
pub struct Combination<'a> {
    pub terms: Vec<(f64, &'a dyn PerturbationField)>,
}

impl Combination<'_> {
    fn sum(&self, len: usize, out: &mut [f64], eval: impl Fn(&dyn PerturbationField, &mut [f64])) {
        let mut buf = vec![0.0; len];
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(c, f) in &self.terms {
            eval(f, &mut buf);
            out.iter_mut().zip(&buf).for_each(|(o, b)| *o += c * b);
        }
    }
}

impl PerturbationField for Combination<'_> {
    fn dim(&self) -> usize {
        self.terms.first().map_or(1, |t| t.1.dim())
    }
    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.sum(out.len(), out, |f, b| f.value(t, x, b));
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.sum(out.len(), out, |f, b| f.gradient(t, x, b));
    }
    fn time_derivative(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.sum(out.len(), out, |f, b| f.time_derivative(t, x, b));
    }
}

/// `T(t, x) = x + eps xi(t, x)`.
pub struct PerturbedMap<'a> {
    pub field: &'a dyn PerturbationField,
    pub eps: f64,
}

impl DiffeoPath for PerturbedMap<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn map(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.field.value(t, x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + self.eps * *o;
        }
    }
    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        self.field.gradient(t, x, out);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = if i == j { 1.0 } else { 0.0 } + self.eps * out[i * d + j];
            }
        }
    }
    fn time_derivative(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.field.time_derivative(t, x, out);
        out.iter_mut().for_each(|o| *o *= self.eps);
    }
}

/// A perturbation sampled at the nodes of one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSlice {
    dim: usize,
    values: Vec<f64>,
    gradients: Vec<f64>,
    divergence: Vec<f64>,
    time_derivative: Vec<f64>,
}

impl PerturbationSlice {
    pub fn sample(field: &dyn PerturbationField, t: f64, grid: &SpaceTimeGrid) -> Result<Self> {
        let d = grid.dim();
        check_len(field.dim(), d)?;
        let n = grid.n_nodes();
        let mut s = Self {
            dim: d,
            values: vec![0.0; n * d],
            gradients: vec![0.0; n * d * d],
            divergence: vec![0.0; n],
            time_derivative: vec![0.0; n * d],
        };
        let mut x = vec![0.0; d];
        for node in 0..n {
            grid.point(node, &mut x);
            field.value(t, &x, &mut s.values[node * d..(node + 1) * d]);
            field.gradient(t, &x, &mut s.gradients[node * d * d..(node + 1) * d * d]);
            field.time_derivative(t, &x, &mut s.time_derivative[node * d..(node + 1) * d]);
            s.divergence[node] = field.divergence(t, &x);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.divergence.len()
    }
    pub fn is_empty(&self) -> bool {
        self.divergence.is_empty()
    }
    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }
    pub fn gradient(&self, node: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.gradients[node * dd..(node + 1) * dd]
    }
    pub fn divergence(&self, node: usize) -> f64 {
        self.divergence[node]
    }
    pub fn time_derivative(&self, node: usize) -> &[f64] {
        &self.time_derivative[node * self.dim..(node + 1) * self.dim]
    }

    /// Largest `|div xi - tr grad xi|` over the nodes.
    pub fn divergence_mismatch(&self) -> f64 {
        let d = self.dim;
        (0..self.len())
            .map(|n| {
                let g = self.gradient(n);
                (self.divergence[n] - (0..d).map(|i| g[i * d + i]).sum::<f64>()).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Tolerance for [`check_perturbation`].
pub const PERTURBATION_TOLERANCE: f64 = 1e-10;

/// Checks that `xi` vanishes on the boundary and at `t = 0, 1`, and that the
/// supplied divergence is the trace of the supplied gradient.
pub fn check_perturbation(field: &dyn PerturbationField, grid: &SpaceTimeGrid) -> Result<()> {
    let last = grid.n_t() - 1;
    for k in 0..grid.n_t() {
        let s = PerturbationSlice::sample(field, grid.time(k), grid)?;
        let mismatch = s.divergence_mismatch();
        if mismatch > PERTURBATION_TOLERANCE {
            return Err(Error::InvariantViolated(format!(
                "divergence differs from the gradient trace by {mismatch:e} at slice {k}"
            )));
        }
        for node in 0..grid.n_nodes() {
            let at_end = k == 0 || k == last;
            if (at_end || grid.is_boundary(node)) && s.value(node).iter().any(|c| c.abs() > PERTURBATION_TOLERANCE) {
                return Err(Error::InvariantViolated(format!(
                    "perturbation does not vanish at node {node} of slice {k}"
                )));
            }
        }
    }
    Ok(())
}

/// `(1 - q) sum_j w_j (div xi)_j u_j^q`.
pub fn df_at_zero(u: &DensityField, xi: &PerturbationSlice, q: f64, grid: &SpaceTimeGrid) -> Result<f64> {
    check_len(u.len(), grid.n_nodes())?;
    check_len(xi.len(), grid.n_nodes())?;
    let sum: f64 = (0..grid.n_nodes()).map(|j| grid.weights()[j] * xi.divergence(j) * u.values()[j].powf(q)).sum();
    Ok((1.0 - q) * sum)
}

/// `det(I + eps G)` and its derivative in `eps`.
fn jacobian_and_rate(g: &[f64], d: usize, eps: f64) -> (f64, f64) {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = if i == j { 1.0 } else { 0.0 } + eps * g[i * d + j];
        }
    }
    let trace: f64 = (0..d).map(|i| g[i * d + i]).sum();
    let rate = match d {
        1 => trace,
        _ => trace + 2.0 * eps * det(g, 2),
    };
    (det(&m, d), rate)
}

/// `(1 - q) sum_j w_j J'_j (u_j / J_j)^q` with `J = det(I + eps grad xi)`.
pub fn df_at_eps(u: &DensityField, xi: &PerturbationSlice, q: f64, eps: f64, grid: &SpaceTimeGrid) -> Result<f64> {
    check_len(u.len(), grid.n_nodes())?;
    check_len(xi.len(), grid.n_nodes())?;
    let d = grid.dim();
    let mut sum = 0.0;
    for j in 0..grid.n_nodes() {
        let (jac, rate) = jacobian_and_rate(xi.gradient(j), d, eps);
        if jac <= 0.0 {
            return Err(Error::NotDiffeomorphism { node: j, jacobian: jac });
        }
        sum += grid.weights()[j] * rate * (u.values()[j] / jac).powf(q);
    }
    Ok((1.0 - q) * sum)
}

/// `p sum_j w_j u_j |v_j|^(p-2) v_j . (grad xi_j v_j + dxi/dt_j)`.
pub fn dv_at_zero(
    u: &DensityField,
    v: &VelocityField,
    xi: &PerturbationSlice,
    p: f64,
    grid: &SpaceTimeGrid,
) -> Result<f64> {
    check_len(u.len(), grid.n_nodes())?;
    check_len(v.values().len(), grid.n_nodes() * grid.dim())?;
    check_len(xi.len(), grid.n_nodes())?;
    Ok(p * dv_sum(u.values(), v.values(), xi, p, grid))
}

fn dv_sum(u: &[f64], v: &[f64], xi: &PerturbationSlice, p: f64, grid: &SpaceTimeGrid) -> f64 {
    let d = grid.dim();
    (0..grid.n_nodes())
        .map(|j| {
            let vj = &v[j * d..(j + 1) * d];
            let s: f64 = vj.iter().map(|c| c * c).sum();
            if s == 0.0 || u[j] == 0.0 {
                return 0.0;
            }
            let g = xi.gradient(j);
            let dt = xi.time_derivative(j);
            let inner: f64 = (0..d).map(|i| vj[i] * (dt[i] + (0..d).map(|k| g[i * d + k] * vj[k]).sum::<f64>())).sum();
            grid.weights()[j] * u[j] * s.powf(0.5 * p - 1.0) * inner
        })
        .sum()
}

/// Directional derivative of the action along `xi`, using the stored velocity.
///
/// Fails when some slice has `V < v_floor` or `F = 0`.
pub fn gateaux_action(curve: &Curve, xi: &dyn PerturbationField, params: &EnergyParams, v_floor: f64) -> Result<f64> {
    let grid = curve.grid();
    check_len(xi.dim(), grid.dim())?;
    let tw = grid.time_weights();
    let terms = (0..curve.n_slices())
        .into_par_iter()
        .map(|k| {
            let u = curve.density(k).values();
            let v = curve.velocity(k);
            let f = lq_values(u, params.q, grid);
            let kin = kinetic_values(u, v.values(), params.p, grid);
            if kin < v_floor {
                return Err(Error::SpeedBelowFloor { slice: k, value: kin, floor: v_floor });
            }
            if f <= 0.0 {
                return Err(Error::ZeroCongestion { slice: k });
            }
            let s = PerturbationSlice::sample(xi, grid.time(k), grid)?;
            let df = df_at_zero(curve.density(k), &s, params.q, grid)?;
            let dv = params.p * dv_sum(u, v.values(), &s, params.p, grid);
            let (a, b) = (params.alpha, params.beta);
            let mut term = a * f.powf(a - 1.0) * kin.powf(b) * df;
            if dv != 0.0 {
                term += b * f.powf(a) * kin.powf(b - 1.0) * dv;
            }
            Ok(tw[k] * term)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}
