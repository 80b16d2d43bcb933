//! Self-similar solutions built from parabolic profiles.
//!
//! A fixed-center solution dilates one profile about a point with radius
//! `R(t)`; its velocity is `(x - c) R'/R`. A moving solution also translates
//! the center along `c(t) = c0 + t e` and requires
//! `R'' = -C R^(-2d-1)` with `C = R^(2d) (d R'^2 + (d+4)|e|^2)` conserved.

use crate::curve::Curve;
use crate::energy::{lq_energy, slice_energies};
use crate::error::{Error, Result};
use crate::fields::{unit_ball_volume, ParabolicProfile, Sampling, SpaceTimeGrid, VelocityField};

/// Radius of a self-similar family as a function of time.
pub trait RadiusPath: Send + Sync {
    fn radius(&self, t: f64) -> f64;
    fn rate(&self, t: f64) -> f64;
    fn accel(&self, t: f64) -> f64;
}

/// `R(t) = sum_i c_i t^i`.
#[derive(Debug, Clone)]
pub struct PolynomialRadius {
    pub coeffs: Vec<f64>,
}

impl PolynomialRadius {
    pub fn constant(r: f64) -> Self {
        Self { coeffs: vec![r] }
    }
    pub fn linear(r0: f64, r1: f64) -> Self {
        Self { coeffs: vec![r0, r1 - r0] }
    }
}

impl RadiusPath for PolynomialRadius {
    fn radius(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
    fn rate(&self, t: f64) -> f64 {
        self.coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (i, c)| acc * t + i as f64 * c)
    }
    fn accel(&self, t: f64) -> f64 {
        self.coeffs.iter().enumerate().skip(2).rev().fold(0.0, |acc, (i, c)| acc * t + (i * (i - 1)) as f64 * c)
    }
}

/// `R(t) = (R0^(d+1) + k t)^(1/(d+1))`, the family along which `K` is constant.
#[derive(Debug, Clone)]
pub struct PowerLawRadius {
    pub r0: f64,
    pub k: f64,
    pub dim: usize,
}

impl PowerLawRadius {
    /// Member of the family joining `r0` at `t = 0` to `r1` at `t = 1`.
    pub fn between(r0: f64, r1: f64, dim: usize) -> Self {
        let n = dim as i32 + 1;
        Self { r0, k: r1.powi(n) - r0.powi(n), dim }
    }
    fn base(&self, t: f64) -> f64 {
        self.r0.powi(self.dim as i32 + 1) + self.k * t
    }
}

impl RadiusPath for PowerLawRadius {
    fn radius(&self, t: f64) -> f64 {
        self.base(t).powf(1.0 / (self.dim as f64 + 1.0))
    }
    fn rate(&self, t: f64) -> f64 {
        let e = 1.0 / (self.dim as f64 + 1.0);
        e * self.k * self.base(t).powf(e - 1.0)
    }
    fn accel(&self, t: f64) -> f64 {
        let e = 1.0 / (self.dim as f64 + 1.0);
        e * (e - 1.0) * self.k * self.k * self.base(t).powf(e - 2.0)
    }
}

/// Description of one self-similar curve.
pub struct SelfSimilarSpec {
    pub dim: usize,
    pub exponent: f64,
    pub radius: Box<dyn RadiusPath>,
    pub center: Vec<f64>,
    /// Center velocity `e`; zero for the fixed-center family.
    pub drift: Vec<f64>,
    pub sampling: Sampling,
}

impl SelfSimilarSpec {
    pub fn fixed(dim: usize, radius: impl RadiusPath + 'static, center: &[f64]) -> Self {
        Self {
            dim,
            exponent: 2.0,
            radius: Box::new(radius),
            center: center.to_vec(),
            drift: vec![0.0; dim],
            sampling: Sampling::default(),
        }
    }

    pub fn center_at(&self, t: f64) -> Vec<f64> {
        self.center.iter().zip(&self.drift).map(|(c, e)| c + t * e).collect()
    }

    /// Invariant `R^(2d) (d R'^2 + (d+4)|e|^2)` at time `t`.
    pub fn invariant(&self, t: f64) -> f64 {
        moving_invariant(self.radius.radius(t), self.radius.rate(t), &self.drift, self.dim)
    }
}

/// Closed forms `(A, F, V)` of the quadratic profile with radius `r` and rate `rate`.
pub fn closed_form_fva(r: f64, rate: f64, dim: usize) -> (f64, f64, f64) {
    let d = dim as f64;
    let w = unit_ball_volume(dim);
    let a = (d + 2.0) / (2.0 * w * r.powf(d + 2.0));
    let f = r.powf(-d) * 2.0 * (d + 2.0) / ((d + 4.0) * w);
    let v = d / (d + 4.0) * rate * rate;
    (a, f, v)
}

/// `C = R^(2d) (d R'^2 + (d+4)|e|^2)`.
pub fn moving_invariant(r: f64, rate: f64, drift: &[f64], dim: usize) -> f64 {
    let d = dim as f64;
    let e2: f64 = drift.iter().map(|e| e * e).sum();
    r.powf(2.0 * d) * (d * rate * rate + (d + 4.0) * e2)
}

/// RK4 solution of `R'' = -C R^(-2d-1)` on `[0, 1]` with an affine center.
#[derive(Debug, Clone)]
pub struct MovingTrajectory {
    pub dim: usize,
    pub invariant: f64,
    pub center0: Vec<f64>,
    pub drift: Vec<f64>,
    pub radius: Vec<f64>,
    pub rate: Vec<f64>,
    steps: usize,
}

impl MovingTrajectory {
    pub fn n_steps(&self) -> usize {
        self.steps
    }
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }

    fn state_at(&self, t: f64) -> (f64, f64) {
        let h = 1.0 / self.steps as f64;
        let i = ((t / h).floor().max(0.0) as usize).min(self.steps);
        let dt = t - i as f64 * h;
        if dt == 0.0 {
            return (self.radius[i], self.rate[i]);
        }
        rk4_step(self.radius[i], self.rate[i], dt, self.invariant, self.dim)
    }

    pub fn center_at(&self, t: f64) -> Vec<f64> {
        self.center0.iter().zip(&self.drift).map(|(c, e)| c + t * e).collect()
    }

    /// Maximum of `|C(t_i) - C|` over the samples.
    pub fn invariant_drift(&self) -> f64 {
        (0..=self.steps)
            .map(|i| (moving_invariant(self.radius[i], self.rate[i], &self.drift, self.dim) - self.invariant).abs())
            .fold(0.0, f64::max)
    }

    pub fn spec(&self) -> SelfSimilarSpec {
        SelfSimilarSpec {
            dim: self.dim,
            exponent: 2.0,
            radius: Box::new(self.clone()),
            center: self.center0.clone(),
            drift: self.drift.clone(),
            sampling: Sampling::default(),
        }
    }
}

impl RadiusPath for MovingTrajectory {
    fn radius(&self, t: f64) -> f64 {
        self.state_at(t).0
    }
    fn rate(&self, t: f64) -> f64 {
        self.state_at(t).1
    }
    fn accel(&self, t: f64) -> f64 {
        -self.invariant * self.radius(t).powf(-2.0 * self.dim as f64 - 1.0)
    }
}

fn rk4_step(r: f64, s: f64, h: f64, c: f64, dim: usize) -> (f64, f64) {
    let e = -2.0 * dim as f64 - 1.0;
    let acc = |r: f64| -c * r.powf(e);
    let (k1r, k1s) = (s, acc(r));
    let (k2r, k2s) = (s + 0.5 * h * k1s, acc(r + 0.5 * h * k1r));
    let (k3r, k3s) = (s + 0.5 * h * k2s, acc(r + 0.5 * h * k2r));
    let (k4r, k4s) = (s + h * k3s, acc(r + h * k3r));
    (r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r), s + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s))
}

/// Integrates the moving-solution system from `(R0, R0')` with drift `e`.
pub fn moving_ode_solve(
    r0: f64,
    rate0: f64,
    drift: &[f64],
    center0: &[f64],
    dim: usize,
    n_steps: usize,
) -> Result<MovingTrajectory> {
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if drift.len() != dim || center0.len() != dim {
        return Err(Error::SizeMismatch { expected: dim, actual: drift.len().min(center0.len()) });
    }
    if !(r0 > 0.0 && r0.is_finite() && rate0.is_finite()) {
        return Err(Error::InvalidParameter(format!("initial radius {r0} must be positive")));
    }
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be positive".into()));
    }
    let c = moving_invariant(r0, rate0, drift, dim);
    let moving = rate0 != 0.0 || drift.iter().any(|e| *e != 0.0);
    if c == 0.0 && moving {
        return Err(Error::InvalidParameter("vanishing invariant with nonzero motion".into()));
    }
    let h = 1.0 / n_steps as f64;
    let mut radius = Vec::with_capacity(n_steps + 1);
    let mut rate = Vec::with_capacity(n_steps + 1);
    radius.push(r0);
    rate.push(rate0);
    let (mut r, mut s) = (r0, rate0);
    for i in 0..n_steps {
        let (nr, ns) = rk4_step(r, s, h, c, dim);
        if !(nr > 0.0 && nr.is_finite() && ns.is_finite()) {
            return Err(Error::RadiusCollapse { t: (i + 1) as f64 * h });
        }
        // Near a collapse RK4 can step over the singularity; the invariant exposes it.
        let drift = (moving_invariant(nr, ns, drift, dim) - c).abs();
        if drift > 1e-6 * c.max(f64::MIN_POSITIVE) {
            return Err(Error::RadiusCollapse { t: (i + 1) as f64 * h });
        }
        r = nr;
        s = ns;
        radius.push(r);
        rate.push(s);
    }
    Ok(MovingTrajectory {
        dim,
        invariant: c,
        center0: center0.to_vec(),
        drift: drift.to_vec(),
        radius,
        rate,
        steps: n_steps,
    })
}

fn check_path(spec: &SelfSimilarSpec, require_monotone: bool) -> Result<()> {
    let n = 512;
    let mut sign = 0.0;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let r = spec.radius.radius(t);
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::RadiusCollapse { t });
        }
        let s = spec.radius.rate(t);
        if require_monotone && s != 0.0 {
            if sign * s < 0.0 {
                return Err(Error::NotMonotone { t });
            }
            sign = s.signum();
        }
    }
    Ok(())
}

fn build_curve(spec: &SelfSimilarSpec, grid: &SpaceTimeGrid) -> Result<Curve> {
    if grid.dim() != spec.dim {
        return Err(Error::SizeMismatch { expected: grid.dim(), actual: spec.dim });
    }
    let d = spec.dim;
    let mut densities = Vec::with_capacity(grid.n_t());
    let mut velocities = Vec::with_capacity(grid.n_t());
    for k in 0..grid.n_t() {
        let t = grid.time(k);
        let (r, rate) = (spec.radius.radius(t), spec.radius.rate(t));
        let center = spec.center_at(t);
        let profile = ParabolicProfile::new(d, r, &center, spec.exponent)?;
        let u = profile.sample_with(grid, spec.sampling)?;
        let ratio = rate / r;
        let vals = u.values();
        let node_of = |x: &[f64]| -> usize {
            (0..d).map(|a| ((x[a] - grid.lower()[a]) / grid.spacing(a)).round() as usize * grid.stride(a)).sum()
        };
        let v = VelocityField::from_fn(grid, |x, out| {
            if vals[node_of(x)] > 0.0 {
                for a in 0..d {
                    out[a] = (x[a] - center[a]) * ratio + spec.drift[a];
                }
            }
        });
        densities.push(u);
        velocities.push(v);
    }
    Curve::from_velocities(grid.clone(), densities, &velocities)
}

/// Dilation of a parabolic profile about a fixed center.
pub fn fixed_center_curve(spec: &SelfSimilarSpec, grid: &SpaceTimeGrid) -> Result<Curve> {
    if spec.drift.iter().any(|e| *e != 0.0) {
        return Err(Error::InvalidParameter("fixed-center family requires zero drift".into()));
    }
    check_path(spec, true)?;
    build_curve(spec, grid)
}

/// Relative spread `(max - min) / mean` of `K = F / sqrt(V)` over slices with `V > 0`.
pub fn k_variation(curve: &Curve) -> f64 {
    let (f, v) = slice_energies(curve, 2.0, 2.0);
    let ks: Vec<f64> = f.iter().zip(&v).filter(|(_, v)| **v > 0.0).map(|(f, v)| f / v.sqrt()).collect();
    if ks.is_empty() {
        return 0.0;
    }
    let mean = ks.iter().sum::<f64>() / ks.len() as f64;
    let (lo, hi) = ks.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), k| (a.min(*k), b.max(*k)));
    (hi - lo) / mean
}

/// Tolerance on the spread of `K` along a moving solution.
pub const K_SPREAD_TOLERANCE: f64 = 0.02;

/// Moving self-similar curve sampled on the grid.
pub fn moving_curve(trajectory: &MovingTrajectory, grid: &SpaceTimeGrid) -> Result<Curve> {
    let spec = trajectory.spec();
    check_path(&spec, false)?;
    let curve = build_curve(&spec, grid)?;
    let spread = k_variation(&curve);
    if spread > K_SPREAD_TOLERANCE {
        return Err(Error::InvariantViolated(format!("K varies by {:.3}% across slices", 100.0 * spread)));
    }
    Ok(curve)
}

/// Grid value of `F` for the quadratic profile, for cross-checks against [`closed_form_fva`].
pub fn grid_congestion(dim: usize, radius: f64, center: &[f64], grid: &SpaceTimeGrid) -> Result<f64> {
    let u = ParabolicProfile::new(dim, radius, center, 2.0)?.sample(grid)?;
    lq_energy(&u, 2.0, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::kinetic;
    use crate::fields::make_grid;
    use crate::transport::continuity_residual;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        let (a, f, v) = closed_form_fva(1.0, 1.0, 1);
        assert_abs_diff_eq!(a, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(f, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        let (a, f, v) = closed_form_fva(1.0, 0.0, 2);
        assert_abs_diff_eq!(a, 2.0 / std::f64::consts::PI, epsilon = 1e-15);
        assert_abs_diff_eq!(f, 4.0 / (3.0 * std::f64::consts::PI), epsilon = 1e-15);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn invariant_examples() {
        assert_eq!(moving_invariant(1.0, 1.0, &[0.0], 1), 1.0);
        assert_eq!(moving_invariant(1.0, 0.0, &[1.0], 1), 5.0);
    }

    #[test]
    fn ode_reproduces_square_root_law() {
        let tr = moving_ode_solve(1.0, 1.0, &[0.0], &[0.0], 1, 1000).unwrap();
        for i in 0..=1000 {
            let t = tr.time(i);
            assert!((tr.radius[i] - (1.0 + 2.0 * t).sqrt()).abs() < 1e-8);
        }
        assert!(tr.invariant_drift() < 1e-8);
    }

    #[test]
    fn static_ode() {
        let tr = moving_ode_solve(0.7, 0.0, &[0.0], &[0.0], 1, 50).unwrap();
        assert_eq!(tr.invariant, 0.0);
        assert!(tr.radius.iter().all(|r| *r == 0.7));
    }

    #[test]
    fn collapsing_trajectory_is_rejected() {
        // With R0 = 0.5, R0' = 0 and e = 0.3 the radius reaches zero near t = 0.745.
        let err = moving_ode_solve(0.5, 0.0, &[0.3], &[0.0], 1, 1000).unwrap_err();
        assert!(matches!(err, Error::RadiusCollapse { t } if (0.7..0.76).contains(&t)));
    }

    #[test]
    fn moving_ode_conserves_invariant_and_is_concave() {
        let tr = moving_ode_solve(0.5, 0.5, &[0.3], &[0.0], 1, 1000).unwrap();
        assert!(tr.invariant_drift() < 1e-8);
        for i in 1..1000 {
            let h = 1e-3;
            let fd = (tr.radius[i + 1] - 2.0 * tr.radius[i] + tr.radius[i - 1]) / (h * h);
            let exact = -tr.invariant * tr.radius[i].powi(-3);
            assert!(exact < 0.0);
            assert!((fd - exact).abs() < 1e-5 * exact.abs());
        }
    }

    #[test]
    fn dense_output_matches_samples() {
        let tr = moving_ode_solve(1.0, 0.2, &[0.1, -0.2], &[0.0, 0.0], 2, 200).unwrap();
        let fine = moving_ode_solve(1.0, 0.2, &[0.1, -0.2], &[0.0, 0.0], 2, 2000).unwrap();
        let t = 0.3217;
        let i = (t * 2000.0) as usize;
        assert!((tr.radius(t) - fine.radius(i as f64 / 2000.0)).abs() < 1e-3);
        assert!((tr.radius(0.5) - fine.radius[1000]).abs() < 1e-9);
    }

    #[test]
    fn fixed_center_examples() {
        let g = make_grid(1, &[-1.2], &[1.2], 97, 9).unwrap();
        let c = fixed_center_curve(&SelfSimilarSpec::fixed(1, PolynomialRadius::constant(1.0), &[0.0]), &g).unwrap();
        assert!(c.velocities().iter().all(|v| v.values().iter().all(|x| *x == 0.0)));
        let c = fixed_center_curve(&SelfSimilarSpec::fixed(1, PolynomialRadius::linear(1.0, 0.5), &[0.0]), &g).unwrap();
        let v = c.velocity(0);
        for node in 0..g.n_nodes() {
            let x = g.coord(node, 0);
            let expect = if c.density(0).values()[node] > 1e-9 * c.density(0).max() { -0.5 * x } else { 0.0 };
            assert_abs_diff_eq!(v.values()[node], expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn fixed_center_rejects_bad_paths() {
        let g = make_grid(1, &[-1.0], &[1.0], 33, 5).unwrap();
        let big = SelfSimilarSpec::fixed(1, PolynomialRadius::linear(0.5, 1.5), &[0.0]);
        assert!(matches!(fixed_center_curve(&big, &g), Err(Error::SupportExitsDomain(_))));
        let wobble = SelfSimilarSpec::fixed(1, PolynomialRadius { coeffs: vec![0.5, 1.0, -1.0] }, &[0.0]);
        assert!(matches!(fixed_center_curve(&wobble, &g), Err(Error::NotMonotone { .. })));
    }

    #[test]
    fn power_law_has_constant_k() {
        let g = make_grid(1, &[-1.1], &[1.1], 513, 17).unwrap();
        let spec = SelfSimilarSpec::fixed(1, PowerLawRadius::between(1.0, 0.6, 1), &[0.0]);
        let c = fixed_center_curve(&spec, &g).unwrap();
        assert!(k_variation(&c) < 1e-3);
        let p = PowerLawRadius::between(1.0, 0.6, 1);
        assert_abs_diff_eq!(p.radius(1.0), 0.6, epsilon = 1e-15);
        let h = 1e-5;
        assert_abs_diff_eq!(p.rate(0.4), (p.radius(0.4 + h) - p.radius(0.4 - h)) / (2.0 * h), epsilon = 1e-8);
        assert_abs_diff_eq!(p.accel(0.4), (p.rate(0.4 + h) - p.rate(0.4 - h)) / (2.0 * h), epsilon = 1e-7);
    }

    #[test]
    fn moving_curve_with_zero_drift_matches_fixed_center() {
        let g = make_grid(1, &[-1.6], &[1.6], 129, 11).unwrap();
        let tr = moving_ode_solve(1.0, 0.3, &[0.0], &[0.1], 1, 1000).unwrap();
        let moving = moving_curve(&tr, &g).unwrap();
        let spec = SelfSimilarSpec::fixed(1, tr.clone(), &[0.1]);
        let fixed = fixed_center_curve(&spec, &g).unwrap();
        for k in 0..11 {
            for (a, b) in moving.density(k).values().iter().zip(fixed.density(k).values()) {
                assert!((a - b).abs() <= 1e-12);
            }
            for (a, b) in moving.momentum(k).iter().zip(fixed.momentum(k)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn moving_curve_keeps_k_constant() {
        let g = make_grid(1, &[-1.1], &[1.1], 257, 33).unwrap();
        let tr = moving_ode_solve(0.8, 0.2, &[0.3], &[-0.15], 1, 1000).unwrap();
        let c = moving_curve(&tr, &g).unwrap();
        assert!(k_variation(&c) < K_SPREAD_TOLERANCE);
    }

    #[test]
    fn grid_energies_match_closed_forms() {
        let g = make_grid(1, &[-1.0], &[1.0], 256, 2).unwrap();
        let u = ParabolicProfile::new(1, 1.0, &[0.0], 2.0).unwrap().sample(&g).unwrap();
        let v = VelocityField::from_fn(&g, |x, o| o[0] = x[0]);
        assert_abs_diff_eq!(lq_energy(&u, 2.0, &g).unwrap(), 0.6, epsilon = 1e-4);
        assert_abs_diff_eq!(kinetic(&u, &v, 2.0, &g).unwrap(), 0.2, epsilon = 1e-4);
    }

    #[test]
    fn continuity_residual_converges_at_second_order() {
        let tr = moving_ode_solve(0.8, 0.2, &[0.3], &[-0.15], 1, 1000).unwrap();
        let residuals = |n_x: usize, n_t: usize| {
            let g = make_grid(1, &[-1.1], &[1.1], n_x, n_t).unwrap();
            let spec = SelfSimilarSpec::fixed(1, PowerLawRadius::between(1.0, 0.6, 1), &[0.0]);
            let fixed = continuity_residual(&fixed_center_curve(&spec, &g).unwrap());
            let moving = continuity_residual(&moving_curve(&tr, &g).unwrap());
            (fixed, moving)
        };
        let coarse = residuals(128, 64);
        let fine = residuals(256, 128);
        for ratio in [coarse.0 / fine.0, coarse.1 / fine.1] {
            assert!((3.2..4.8).contains(&ratio), "ratio {ratio}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn congestion_matches_closed_form(d in 1usize..3, r in 0.3..0.9f64) {
            let n = if d == 1 { 1025 } else { 257 };
            let g = make_grid(d, &vec![-1.0; d], &vec![1.0; d], n, 2).unwrap();
            let f = grid_congestion(d, r, &vec![0.0; d], &g).unwrap();
            let (_, exact, _) = closed_form_fva(r, 0.0, d);
            prop_assert!((f - exact).abs() < 2e-3 * exact);
        }
    }
}
