//! Coefficients `H`, `K` and residuals of the optimality system.
//!
//! The weak residual is the largest Gateaux derivative over a battery of test
//! fields. Strong residuals are pointwise forms of the momentum equation,
//! evaluated with centered differences at interior slices and measured in a
//! discrete `L^2` norm over the nodes whose whole stencil lies inside the
//! support (see [`classify_zones`]).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::curve::Curve;
use crate::energy::{slice_energies, EnergyParams};
use crate::error::{Error, Result};
use crate::transport::{classify_zones, space_stencil, time_stencil, Zone};
use crate::variation::{gateaux_action, PerturbationField};

/// Per-slice `F`, `V`, `H = alpha (1-q) F^(alpha-1) V^beta` and `K = p beta F^alpha V^(beta-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub congestion: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub h: Vec<f64>,
    pub k: Vec<f64>,
}

/// `(H, K)` for given `F` and `V`.
pub fn coefficient_values(f: f64, v: f64, params: &EnergyParams) -> (f64, f64) {
    let EnergyParams { p, q, alpha, beta } = *params;
    (alpha * (1.0 - q) * f.powf(alpha - 1.0) * v.powf(beta), p * beta * f.powf(alpha) * v.powf(beta - 1.0))
}

impl Coefficients {
    /// Coefficients from per-slice `F` and `V`.
    pub fn from_energies(congestion: Vec<f64>, kinetic: Vec<f64>, params: &EnergyParams, v_floor: f64) -> Result<Self> {
        let mut h = Vec::with_capacity(congestion.len());
        let mut k = Vec::with_capacity(congestion.len());
        for (slice, (&f, &v)) in congestion.iter().zip(&kinetic).enumerate() {
            if !(v >= v_floor) {
                return Err(Error::SpeedBelowFloor { slice, value: v, floor: v_floor });
            }
            if !(f > 0.0) {
                return Err(Error::ZeroCongestion { slice });
            }
            let (hh, kk) = coefficient_values(f, v, params);
            h.push(hh);
            k.push(kk);
        }
        Ok(Self { congestion, kinetic, h, k })
    }

    /// Largest `|K_i / mean(K) - 1|`.
    pub fn k_spread(&self) -> f64 {
        let mean = self.k.iter().sum::<f64>() / self.k.len() as f64;
        self.k.iter().map(|k| (k / mean - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Evaluates the coefficients on every slice of `curve`.
pub fn coefficients(curve: &Curve, params: &EnergyParams, v_floor: f64) -> Result<Coefficients> {
    let (f, v) = slice_energies(curve, params.p, params.q);
    Coefficients::from_energies(f, v, params, v_floor)
}

/// Largest `|gateaux_action|` over `battery`.
pub fn weak_optimality_residual<F: PerturbationField>(
    curve: &Curve,
    battery: &[F],
    params: &EnergyParams,
    v_floor: f64,
) -> Result<f64> {
    let values = battery
        .par_iter()
        .map(|xi| gateaux_action(curve, xi, params, v_floor).map(f64::abs))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Pointwise form of the momentum equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrongForm {
    /// `H grad u^q + K div(u |v|^(p-2) v (x) v) + d/dt(K u |v|^(p-2) v)`.
    Conservative,
    /// The conservative form with every product differentiated out.
    Expanded,
    /// The expanded form without the continuity term, divided by `u`.
    Simplified,
    /// `-2 V^(1/2) grad u + K (v . grad v + dv/dt)`; needs `p = q = 2`, `alpha = 1`, `beta = 1/2`
    /// and holds for the constant-`K` parametrization.
    P2Q2,
    /// [`StrongForm::P2Q2`] plus `v dK/dt`, for any parametrization.
    P2Q2Unconstrained,
}

impl StrongForm {
    pub const ALL: [StrongForm; 5] =
        [Self::Conservative, Self::Expanded, Self::Simplified, Self::P2Q2, Self::P2Q2Unconstrained];

    pub fn name(self) -> &'static str {
        match self {
            Self::Conservative => "conservative",
            Self::Expanded => "expanded",
            Self::Simplified => "simplified",
            Self::P2Q2 => "p2q2",
            Self::P2Q2Unconstrained => "p2q2-unconstrained",
        }
    }

    fn check(self, params: &EnergyParams) -> Result<()> {
        let quadratic = params.p == 2.0 && params.q == 2.0 && params.alpha == 1.0 && params.beta == 0.5;
        match self {
            Self::P2Q2 | Self::P2Q2Unconstrained if !quadratic => {
                Err(Error::UnsupportedForm { form: self.name(), requirement: "p = q = 2, alpha = 1, beta = 1/2" })
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for StrongForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrongForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown residual form '{s}'")))
    }
}

/// Relative threshold `delta` of the support mask `{u > delta max u}`.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

/// Strong residual norms on the interior slices.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongResidual {
    pub form: StrongForm,
    pub slices: Vec<usize>,
    /// `sqrt(sum_j w_j |r_j|^2)` over the masked nodes of each slice.
    pub norms: Vec<f64>,
    /// `sqrt(sum_k dt norm_k^2)`.
    pub total: f64,
    /// Number of masked nodes over all slices.
    pub active_nodes: usize,
}

/// Strong residual with coefficients evaluated on the curve.
pub fn strong_residual(curve: &Curve, params: &EnergyParams, form: StrongForm, v_floor: f64) -> Result<StrongResidual> {
    form.check(params)?;
    let coeffs = coefficients(curve, params, v_floor)?;
    strong_residual_with(curve, &coeffs, params, form, SUPPORT_THRESHOLD)
}

struct SliceFields {
    u: Vec<f64>,
    v: Vec<f64>,
    /// `|v|^(p-2)`, zero where `v = 0`.
    w: Vec<f64>,
}

/// Strong residual with externally supplied coefficients and mask threshold.
pub fn strong_residual_with(
    curve: &Curve,
    coeffs: &Coefficients,
    params: &EnergyParams,
    form: StrongForm,
    threshold: f64,
) -> Result<StrongResidual> {
    form.check(params)?;
    let grid = curve.grid();
    let (nt, nn, d) = (curve.n_slices(), grid.n_nodes(), grid.dim());
    if coeffs.h.len() != nt || coeffs.k.len() != nt || coeffs.kinetic.len() != nt {
        return Err(Error::SizeMismatch { expected: nt, actual: coeffs.h.len() });
    }
    if nt < 3 {
        return Ok(StrongResidual { form, slices: vec![], norms: vec![], total: 0.0, active_nodes: 0 });
    }
    let (p, q) = (params.p, params.q);
    let data: Vec<SliceFields> = (0..nt)
        .map(|k| {
            let u = curve.density(k).values().to_vec();
            let v = curve.velocity(k).into_values();
            let w = (0..nn)
                .map(|j| {
                    let s: f64 = v[j * d..(j + 1) * d].iter().map(|c| c * c).sum();
                    if s == 0.0 {
                        0.0
                    } else {
                        s.powf(0.5 * p - 1.0)
                    }
                })
                .collect();
            SliceFields { u, v, w }
        })
        .collect();
    let zones = classify_zones(curve.densities(), grid, threshold);
    let dt = grid.dt();
    let kc = &coeffs.k;
    let results: Vec<(f64, usize)> = (1..nt - 1)
        .into_par_iter()
        .map(|k| {
            let times = time_stencil(k, nt, dt);
            let dk: f64 = times.iter().map(|&(kk, c)| c * kc[kk]).sum();
            let s = &data[k];
            let (hk, kk) = (coeffs.h[k], kc[k]);
            let mut sum = 0.0;
            let mut active = 0;
            let mut r = vec![0.0; d];
            for node in 0..nn {
                let spaces: Vec<Vec<(usize, f64)>> = (0..d).map(|b| space_stencil(grid, node, b)).collect();
                let inside = times.iter().all(|&(t, _)| zones[t][node] == Zone::Interior)
                    && spaces.iter().flatten().all(|&(j, _)| zones[k][j] == Zone::Interior);
                if !inside {
                    continue;
                }
                let dx = |b: usize, f: &dyn Fn(usize) -> f64| spaces[b].iter().map(|&(j, c)| c * f(j)).sum::<f64>();
                let dtt = |f: &dyn Fn(usize) -> f64| times.iter().map(|&(t, c)| c * f(t)).sum::<f64>();
                let (u, v, w) = (s.u[node], &s.v[node * d..(node + 1) * d], s.w[node]);
                // (v . grad) applied to a scalar nodal function
                let advect = |f: &dyn Fn(usize) -> f64| (0..d).map(|b| v[b] * dx(b, f)).sum::<f64>();
                for (a, ra) in r.iter_mut().enumerate() {
                    *ra = match form {
                        StrongForm::Conservative => {
                            let pressure = dx(a, &|j| s.u[j].powf(q));
                            let flux: f64 =
                                (0..d).map(|b| dx(b, &|j| s.u[j] * s.w[j] * s.v[j * d + a] * s.v[j * d + b])).sum();
                            let momentum = dtt(&|t| {
                                let f = &data[t];
                                kc[t] * f.u[node] * f.w[node] * f.v[node * d + a]
                            });
                            hk * pressure + kk * flux + momentum
                        }
                        StrongForm::Expanded => {
                            let pressure = dx(a, &|j| s.u[j].powf(q));
                            let transport = u * w * advect(&|j| s.v[j * d + a]);
                            let div_flux: f64 = (0..d).map(|b| dx(b, &|j| s.u[j] * s.v[j * d + b])).sum();
                            let weight_advect = u * advect(&|j| s.w[j]) * v[a];
                            let du = dtt(&|t| data[t].u[node]);
                            let dvw = dtt(&|t| data[t].v[node * d + a] * data[t].w[node]);
                            hk * pressure
                                + kk * (transport + v[a] * w * div_flux + weight_advect)
                                + kk * (v[a] * w * du + u * dvw)
                                + dk * u * w * v[a]
                        }
                        StrongForm::Simplified => {
                            let pressure = q * u.powf(q - 2.0) * dx(a, &|j| s.u[j]);
                            let transport = w * advect(&|j| s.v[j * d + a]);
                            let weight_advect = advect(&|j| s.w[j]) * v[a];
                            let dvw = dtt(&|t| data[t].v[node * d + a] * data[t].w[node]);
                            hk * pressure + kk * (transport + weight_advect) + kk * dvw + dk * w * v[a]
                        }
                        StrongForm::P2Q2 | StrongForm::P2Q2Unconstrained => {
                            let pressure = -2.0 * coeffs.kinetic[k].sqrt() * dx(a, &|j| s.u[j]);
                            let accel = advect(&|j| s.v[j * d + a]) + dtt(&|t| data[t].v[node * d + a]);
                            let drift = if form == StrongForm::P2Q2Unconstrained { v[a] * dk } else { 0.0 };
                            pressure + kk * accel + drift
                        }
                    };
                }
                sum += grid.weights()[node] * r.iter().map(|c| c * c).sum::<f64>();
                active += 1;
            }
            (sum.sqrt(), active)
        })
        .collect();
    let norms: Vec<f64> = results.iter().map(|r| r.0).collect();
    let total = norms.iter().map(|n| dt * n * n).sum::<f64>().sqrt();
    Ok(StrongResidual {
        form,
        slices: (1..nt - 1).collect(),
        norms,
        total,
        active_nodes: results.iter().map(|r| r.1).sum(),
    })
}
