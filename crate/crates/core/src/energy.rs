//! Congestion energy, kinetic energy and the two actions.
//!
//! | quantity | discrete form |
//! |---|---|
//! | `F(t)` | `sum_j w_j u_j^q` |
//! | `V(t)` | `sum_j w_j u_j |v_j|^p` |
//! | multiplicative action | time trapezoid of `F^alpha V^beta` |
//! | additive action | time trapezoid of `sum_j w_j (lambda u_j^q + u_j |v_j|^2)` |

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::fields::{check_len, DensityField, SpaceTimeGrid, VelocityField};

/// Exponents of the multiplicative action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl EnergyParams {
    pub fn new(p: f64, q: f64, alpha: f64, beta: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(p > 1.0 && p.is_finite()) {
            return bad(format!("p = {p} must satisfy p > 1"));
        }
        if !(q > 1.0 && q.is_finite()) {
            return bad(format!("q = {q} must satisfy q > 1"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return bad(format!("alpha = {alpha} must be positive"));
        }
        if !(beta.is_finite() && beta >= 1.0 / p - 1e-12) {
            return bad(format!("beta = {beta} must satisfy beta >= 1/p = {}", 1.0 / p));
        }
        Ok(Self { p, q, alpha, beta })
    }

    /// `p = q = 2`, `alpha = 1`, `beta = 1/2`.
    pub fn quadratic() -> Self {
        Self { p: 2.0, q: 2.0, alpha: 1.0, beta: 0.5 }
    }

    /// True when the action is invariant under reparametrization.
    pub fn is_length_like(&self) -> bool {
        (self.beta * self.p - 1.0).abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionModel {
    Multiplicative,
    Additive,
}

/// Per-slice energies and the integrated action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionReport {
    pub model: ActionModel,
    pub congestion: Vec<f64>,
    pub kinetic: Vec<f64>,
    /// Metric derivative `V^(1/p)`.
    pub speed: Vec<f64>,
    pub total: f64,
    /// Slices where `V = 0`.
    pub flagged: Vec<usize>,
}

pub(crate) fn lq_values(u: &[f64], q: f64, grid: &SpaceTimeGrid) -> f64 {
    u.iter().zip(grid.weights()).map(|(u, w)| w * u.powf(q)).sum()
}

pub(crate) fn kinetic_values(u: &[f64], v: &[f64], p: f64, grid: &SpaceTimeGrid) -> f64 {
    let d = grid.dim();
    u.iter()
        .zip(grid.weights())
        .enumerate()
        .map(|(n, (u, w))| {
            let s: f64 = v[n * d..(n + 1) * d].iter().map(|c| c * c).sum();
            w * u * s.powf(0.5 * p)
        })
        .sum()
}

/// `sum_j w_j u_j^q`.
pub fn lq_energy(u: &DensityField, q: f64, grid: &SpaceTimeGrid) -> Result<f64> {
    check_len(u.len(), grid.n_nodes())?;
    Ok(lq_values(u.values(), q, grid))
}

/// `sum_j w_j u_j |v_j|^p`.
pub fn kinetic(u: &DensityField, v: &VelocityField, p: f64, grid: &SpaceTimeGrid) -> Result<f64> {
    check_len(u.len(), grid.n_nodes())?;
    check_len(v.values().len(), grid.n_nodes() * grid.dim())?;
    Ok(kinetic_values(u.values(), v.values(), p, grid))
}

/// `F^alpha V^beta`, with `V = 0` mapped to zero.
pub fn integrand(f: f64, v: f64, params: &EnergyParams) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        f.powf(params.alpha) * v.powf(params.beta)
    }
}

/// Per-slice `F` and `V` of a curve.
pub fn slice_energies(curve: &Curve, p: f64, q: f64) -> (Vec<f64>, Vec<f64>) {
    let grid = curve.grid();
    (0..curve.n_slices())
        .map(|k| {
            let u = curve.density(k).values();
            (lq_values(u, q, grid), kinetic_values(u, curve.velocity(k).values(), p, grid))
        })
        .unzip()
}

/// Time trapezoid of `F^alpha V^beta`.
pub fn action(curve: &Curve, params: &EnergyParams) -> Result<ActionReport> {
    let (congestion, kinetic) = slice_energies(curve, params.p, params.q);
    let tw = curve.grid().time_weights();
    let mut total = 0.0;
    let mut flagged = Vec::new();
    for k in 0..congestion.len() {
        let value = integrand(congestion[k], kinetic[k], params);
        if !value.is_finite() || !congestion[k].is_finite() || !kinetic[k].is_finite() {
            return Err(Error::NonFinite { slice: k });
        }
        if kinetic[k] == 0.0 {
            flagged.push(k);
        }
        total += tw[k] * value;
    }
    let speed = kinetic.iter().map(|v| v.powf(1.0 / params.p)).collect();
    Ok(ActionReport { model: ActionModel::Multiplicative, congestion, kinetic, speed, total, flagged })
}

/// Space-time trapezoid of `u^q + |v|^2 u`.
pub fn additive_action(curve: &Curve, q: f64) -> Result<f64> {
    Ok(additive_report(curve, q, 1.0)?.total)
}

/// Additive action with the congestion term scaled by `weight`.
pub fn additive_report(curve: &Curve, q: f64, weight: f64) -> Result<ActionReport> {
    let (congestion, kinetic) = slice_energies(curve, 2.0, q);
    let tw = curve.grid().time_weights();
    let mut total = 0.0;
    let mut flagged = Vec::new();
    for k in 0..congestion.len() {
        let value = weight * congestion[k] + kinetic[k];
        if !value.is_finite() {
            return Err(Error::NonFinite { slice: k });
        }
        if kinetic[k] == 0.0 {
            flagged.push(k);
        }
        total += tw[k] * value;
    }
    let speed = kinetic.iter().map(|v| v.sqrt()).collect();
    Ok(ActionReport { model: ActionModel::Additive, congestion, kinetic, speed, total, flagged })
}

/// Minimizer and minimum of `delta F + V / delta` over `delta > 0`.
pub fn amgm_split(f: f64, v: f64) -> (f64, f64) {
    let delta = (v / f).sqrt();
    (delta, 2.0 * (f * v).sqrt())
}

/// Minimum of `delta F + V / delta` over the dyadic family `2^k sqrt(V/F)`, `|k| <= span`.
pub fn amgm_dyadic_min(f: f64, v: f64, span: i32) -> f64 {
    let base = (v / f).sqrt();
    (-span..=span)
        .map(|k| {
            let delta = base * 2f64.powi(k);
            delta * f + v / delta
        })
        .fold(f64::INFINITY, f64::min)
}

/// Golden-section minimum of `delta F + V / delta` over `log delta`.
pub fn amgm_golden_min(f: f64, v: f64) -> f64 {
    let phi = |s: f64| {
        let delta = s.exp();
        delta * f + v / delta
    };
    let centre = 0.5 * (v.ln() - f.ln());
    let (mut a, mut b) = (centre - 10.0, centre + 10.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = phi(d);
        }
    }
    fc.min(fd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_grid, parabolic_profile};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn params_validation() {
        assert!(EnergyParams::new(2.0, 2.0, 1.0, 0.5).is_ok());
        let err = EnergyParams::new(2.0, 2.0, 1.0, 0.3).unwrap_err();
        assert!(err.to_string().contains("beta >= 1/p"));
        assert!(EnergyParams::new(1.0, 2.0, 1.0, 1.0).is_err());
        assert!(EnergyParams::new(2.0, 1.0, 1.0, 1.0).is_err());
        assert!(EnergyParams::new(2.0, 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn lq_examples() {
        let g = make_grid(1, &[-1.0], &[1.0], 2049, 2).unwrap();
        let u = parabolic_profile(1, 1.0, &[0.0], 2.0, &g).unwrap();
        assert_abs_diff_eq!(lq_energy(&u, 2.0, &g).unwrap(), 0.6, epsilon = 1e-5);
        assert_abs_diff_eq!(lq_energy(&u, 1.0, &g).unwrap(), 1.0, epsilon = 1e-13);
        let g = make_grid(1, &[0.0], &[1.0], 33, 2).unwrap();
        assert_abs_diff_eq!(lq_energy(&DensityField::uniform(&g), 2.0, &g).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn kinetic_examples() {
        let g = make_grid(1, &[-1.0], &[1.0], 2049, 2).unwrap();
        let u = parabolic_profile(1, 1.0, &[0.0], 2.0, &g).unwrap();
        let v = VelocityField::from_fn(&g, |x, o| o[0] = x[0]);
        assert_abs_diff_eq!(kinetic(&u, &v, 2.0, &g).unwrap(), 0.2, epsilon = 1e-5);
        assert_eq!(kinetic(&u, &VelocityField::zeros(&g), 2.0, &g).unwrap(), 0.0);
        let c = VelocityField::constant(&g, &[2.0]);
        assert_abs_diff_eq!(kinetic(&u, &c, 2.0, &g).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn static_curve_has_zero_action() {
        let g = make_grid(1, &[-1.0], &[1.0], 65, 5).unwrap();
        let u = parabolic_profile(1, 0.7, &[0.1], 2.0, &g).unwrap();
        let c = Curve::stationary(g, u);
        let r = action(&c, &EnergyParams::quadratic()).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.flagged.len(), 5);
    }

    #[test]
    fn additive_examples() {
        let g = make_grid(1, &[0.0], &[1.0], 17, 4).unwrap();
        let c = Curve::stationary(g.clone(), DensityField::uniform(&g));
        assert_abs_diff_eq!(additive_action(&c, 2.0).unwrap(), 1.0, epsilon = 1e-14);
        let g = make_grid(1, &[-1.0], &[1.0], 129, 4).unwrap();
        let u = parabolic_profile(1, 1.0, &[0.0], 2.0, &g).unwrap();
        let f = lq_energy(&u, 2.0, &g).unwrap();
        let c = Curve::stationary(g, u);
        assert_abs_diff_eq!(additive_action(&c, 2.0).unwrap(), f, epsilon = 1e-14);
    }

    #[test]
    fn amgm_family() {
        assert_abs_diff_eq!(amgm_dyadic_min(0.6, 0.2, 20), 2.0 * 0.12f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(amgm_golden_min(0.6, 0.2), 2.0 * 0.12f64.sqrt(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn lq_is_convex(a in prop::collection::vec(0.0..3.0f64, 16), b in prop::collection::vec(0.0..3.0f64, 16), q in 1.1..4.0f64) {
            let g = make_grid(1, &[0.0], &[1.0], 16, 2).unwrap();
            let u1 = DensityField::normalized(a.iter().map(|x| x + 0.01).collect(), &g).unwrap();
            let u2 = DensityField::normalized(b.iter().map(|x| x + 0.01).collect(), &g).unwrap();
            let mid: Vec<f64> = u1.values().iter().zip(u2.values()).map(|(x, y)| 0.5 * (x + y)).collect();
            let lhs = lq_values(&mid, q, &g);
            let rhs = 0.5 * (lq_values(u1.values(), q, &g) + lq_values(u2.values(), q, &g));
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn kinetic_vanishes_iff_velocity_vanishes_on_support(
            mask in prop::collection::vec(prop::bool::ANY, 12),
            vel in prop::collection::vec(-1.0..1.0f64, 12),
        ) {
            let g = make_grid(1, &[0.0], &[1.0], 12, 2).unwrap();
            let mut raw: Vec<f64> = mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
            raw[5] = 1.0;
            let u = DensityField::normalized(raw, &g).unwrap();
            let v = VelocityField::new(vel.clone(), &g).unwrap();
            let k = kinetic(&u, &v, 2.0, &g).unwrap();
            let moving = (0..12).any(|i| u.values()[i] > 0.0 && vel[i] != 0.0);
            prop_assert_eq!(k == 0.0, !moving);
        }

        #[test]
        fn amgm_identity(f in 1e-3..1e3f64, v in 1e-3..1e3f64) {
            let exact = 2.0 * (f * v).sqrt();
            prop_assert!((amgm_dyadic_min(f, v, 30) - exact).abs() <= 1e-10 * exact);
            prop_assert!((amgm_golden_min(f, v) - exact).abs() <= 1e-10 * exact);
            let (delta, value) = amgm_split(f, v);
            prop_assert!((delta * f + v / delta - value).abs() <= 1e-12 * exact);
        }
    }
}
