//! Finite-difference reference values for the first variations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{df_at_eps, df_at_zero, dv_at_zero, gateaux_action, PerturbationField, PerturbationSlice, PerturbedMap};
use super::{SineMode, SineModeField};
use crate::curve::Curve;
use crate::energy::{integrand, kinetic, lq_values, EnergyParams};
use crate::error::Result;
use crate::fields::{make_grid, DensityField, SpaceTimeGrid, VelocityField};
use crate::transport::{pushforward_values, transformed_velocity};

/// Default finite-difference step in `eps`.
pub const FD_STEP: f64 = 1e-4;

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Richardson combination of central differences with steps `h` and `h/2`.
pub fn richardson(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let coarse = central_difference(&f, x, h)?;
    let fine = central_difference(&f, x, 0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// `F` of the pushforward of `u` by `id + eps xi(t, .)`.
///
/// The pushed density is not renormalized, so `eps = 0` returns `F(u)` exactly.
pub fn perturbed_lq(
    u: &DensityField,
    xi: &dyn PerturbationField,
    t: f64,
    eps: f64,
    q: f64,
    grid: &SpaceTimeGrid,
) -> Result<f64> {
    let pushed = pushforward_values(u.values(), &PerturbedMap { field: xi, eps }, t, grid)?;
    Ok(lq_values(&pushed, q, grid))
}

/// `int |grad T v + dT/dt|^p d(T_# mu)` evaluated on the grid after transport.
pub fn perturbed_kinetic(
    u: &DensityField,
    v: &VelocityField,
    xi: &dyn PerturbationField,
    t: f64,
    eps: f64,
    p: f64,
    grid: &SpaceTimeGrid,
) -> Result<f64> {
    let map = PerturbedMap { field: xi, eps };
    let pushed = DensityField::from_raw(pushforward_values(u.values(), &map, t, grid)?);
    let moved = transformed_velocity(v, &map, t, grid)?;
    kinetic(&pushed, &moved, p, grid)
}

/// Action of the perturbed curve, slice by slice.
pub fn perturbed_action(curve: &Curve, xi: &dyn PerturbationField, params: &EnergyParams, eps: f64) -> Result<f64> {
    let grid = curve.grid();
    let tw = grid.time_weights();
    let mut total = 0.0;
    for k in 0..curve.n_slices() {
        let t = grid.time(k);
        let u = curve.density(k);
        let f = perturbed_lq(u, xi, t, eps, params.q, grid)?;
        let v = perturbed_kinetic(u, &curve.velocity(k), xi, t, eps, params.p, grid)?;
        total += tw[k] * integrand(f, v, params);
    }
    Ok(total)
}

/// Seeded battery of smooth test fields vanishing on the boundary and at `t = 0, 1`.
pub fn standard_battery(grid: &SpaceTimeGrid, count: usize, seed: u64) -> Vec<SineModeField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let modes = (0..2)
                .map(|_| SineMode {
                    component: rng.gen_range(0..grid.dim()),
                    wavenumbers: (0..grid.dim()).map(|_| rng.gen_range(1..=3)).collect(),
                    amplitude: rng.gen_range(-1.0..1.0),
                })
                .collect();
            SineModeField { lower: grid.lower().to_vec(), upper: grid.upper().to_vec(), time_mode: 1, modes }
        })
        .collect()
}

/// Parameter sets cycled through by [`seeded_cases`].
pub const CASE_PARAMS: [(f64, f64, f64, f64); 5] =
    [(2.0, 2.0, 1.0, 0.5), (2.0, 1.5, 1.0, 1.0), (3.0, 2.0, 0.5, 0.5), (1.5, 3.0, 2.0, 0.8), (2.0, 3.0, 1.5, 0.5)];

/// One seeded `(u, v, xi)` configuration on `[0, 1]`.
pub struct VariationCase {
    pub curve: Curve,
    /// Slice used by the single-slice checks.
    pub slice: usize,
    /// Base point for the `dF_at_eps` check.
    pub eps: f64,
    pub field: SineModeField,
    pub params: EnergyParams,
}

/// Number of slices of the curves built by [`seeded_cases`].
pub const CASE_SLICES: usize = 9;

/// Builds `count` random smooth cases with `n_x` nodes in `d = 1`.
///
/// Densities and velocities are cosine series, so their normal derivatives
/// vanish at the walls; together with `xi'' = 0` there this keeps the
/// trapezoid rule fourth-order accurate for every integrand involved.
pub fn seeded_cases(seed: u64, count: usize, n_x: usize) -> Result<Vec<VariationCase>> {
    let grid = make_grid(1, &[0.0], &[1.0], n_x, CASE_SLICES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    (0..count)
        .map(|i| {
            let ua: Vec<[f64; 2]> = (0..2).map(|_| [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)]).collect();
            let vb: Vec<[f64; 2]> = (0..2).map(|_| [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)]).collect();
            let base = [rng.gen_range(0.6..1.2), rng.gen_range(-0.3..0.3)];
            let mut densities = Vec::new();
            let mut velocities = Vec::new();
            for k in 0..grid.n_t() {
                let t = grid.time(k);
                let u = grid.sample(|x| {
                    1.0 + ua
                        .iter()
                        .enumerate()
                        .map(|(m, a)| (a[0] + a[1] * t) * ((m + 1) as f64 * pi * x[0]).cos())
                        .sum::<f64>()
                });
                densities.push(DensityField::normalized(u, &grid)?);
                velocities.push(VelocityField::from_fn(&grid, |x, o| {
                    o[0] = base[0]
                        + base[1] * t
                        + vb.iter()
                            .enumerate()
                            .map(|(m, b)| (b[0] + b[1] * t) * ((m + 1) as f64 * pi * x[0]).cos())
                            .sum::<f64>();
                }));
            }
            let curve = Curve::from_velocities(grid.clone(), densities, &velocities)?;
            let modes: Vec<SineMode> = (1..=3)
                .map(|k| SineMode {
                    component: 0,
                    wavenumbers: vec![k],
                    amplitude: rng.gen_range(-0.6..0.6) / (k as f64 * pi),
                })
                .collect();
            let field = SineModeField { lower: vec![0.0], upper: vec![1.0], time_mode: 1, modes };
            let (p, q, a, b) = CASE_PARAMS[i % CASE_PARAMS.len()];
            Ok(VariationCase { curve, slice: 2, eps: 0.05, field, params: EnergyParams::new(p, q, a, b)? })
        })
        .collect()
}

/// Analytic value next to its finite-difference reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub quantity: &'static str,
    pub case: usize,
    pub analytic: f64,
    pub finite_difference: f64,
}

impl Comparison {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.finite_difference.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.finite_difference).abs() / scale
        }
    }
}

/// Checks `dF` at zero and at `eps`, `dV` at zero and the full Gateaux derivative.
pub fn compare_case(case: &VariationCase, index: usize, step: f64) -> Result<Vec<Comparison>> {
    let curve = &case.curve;
    let grid = curve.grid();
    let (k, xi, params) = (case.slice, &case.field, &case.params);
    let t = grid.time(k);
    let u = curve.density(k);
    let v = curve.velocity(k);
    let s = PerturbationSlice::sample(xi, t, grid)?;
    let row = |quantity, analytic, finite_difference| Comparison { quantity, case: index, analytic, finite_difference };
    Ok(vec![
        row(
            "dF_at_zero",
            df_at_zero(u, &s, params.q, grid)?,
            richardson(|e| perturbed_lq(u, xi, t, e, params.q, grid), 0.0, step)?,
        ),
        row(
            "dF_at_eps",
            df_at_eps(u, &s, params.q, case.eps, grid)?,
            richardson(|e| perturbed_lq(u, xi, t, e, params.q, grid), case.eps, step)?,
        ),
        row(
            "dV_at_zero",
            dv_at_zero(u, &v, &s, params.p, grid)?,
            richardson(|e| perturbed_kinetic(u, &v, xi, t, e, params.p, grid), 0.0, step)?,
        ),
        row(
            "gateaux_action",
            gateaux_action(curve, xi, params, 0.0)?,
            richardson(|e| perturbed_action(curve, xi, params, e), 0.0, step)?,
        ),
    ])
}

/// Runs [`compare_case`] over [`seeded_cases`].
pub fn run_suite(seed: u64, count: usize, n_x: usize) -> Result<Vec<Comparison>> {
    let mut rows = Vec::new();
    for (i, case) in seeded_cases(seed, count, n_x)?.iter().enumerate() {
        rows.extend(compare_case(case, i, FD_STEP)?);
    }
    Ok(rows)
}
