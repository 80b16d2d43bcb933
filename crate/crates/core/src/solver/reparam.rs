//! Time reparametrizations of a discrete curve.

use crate::curve::Curve;
use crate::energy::{slice_energies, EnergyParams};
use crate::error::{Error, Result};
use crate::fields::DensityField;

/// Relative speed below which a slice counts as stopped.
const STOPPED: f64 = 1e-12;

/// Densities and momenta per slice.
type Slices = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Resamples `(u, m)` on a uniform grid in `theta = int speed / weight dt`.
///
/// Momenta are normalized to unit speed per slice, interpolated, then scaled
/// to the new speed `Theta * weight`. Directions of stopped slices come from
/// linear inter- or extrapolation of their moving neighbours.
pub(crate) fn resample(us: &[Vec<f64>], ms: &[Vec<f64>], speed: &[f64], weight: &[f64], dt: f64) -> Result<Slices> {
    let nt = us.len();
    let smax = speed.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::ZeroLength);
    }
    let mut theta = vec![0.0; nt];
    for k in 1..nt {
        theta[k] = theta[k - 1] + 0.5 * dt * (speed[k - 1] / weight[k - 1] + speed[k] / weight[k]);
    }
    let total = theta[nt - 1];
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroLength);
    }
    let moving: Vec<usize> = (0..nt).filter(|&k| speed[k] > STOPPED * smax).collect();
    let unit = |k: usize| -> Vec<f64> { ms[k].iter().map(|m| m / speed[k]).collect() };
    let lerp =
        |a: &[f64], b: &[f64], r: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| (1.0 - r) * a + r * b).collect() };
    let directions: Vec<Vec<f64>> = (0..nt)
        .map(|k| {
            if speed[k] > STOPPED * smax {
                return unit(k);
            }
            let left = moving.iter().rev().find(|&&i| i < k).copied();
            let right = moving.iter().find(|&&i| i > k).copied();
            let (a, b) = match (left, right) {
                (Some(a), Some(b)) => (a, b),
                (None, Some(a)) => (a, moving.get(1).copied().unwrap_or(a)),
                (Some(b), None) => (moving.get(moving.len().wrapping_sub(2)).copied().unwrap_or(b), b),
                (None, None) => unreachable!("at least one slice moves"),
            };
            if a == b {
                return unit(a);
            }
            let r = (k as f64 - a as f64) / (b as f64 - a as f64);
            lerp(&unit(a), &unit(b), r)
        })
        .collect();
    let mut u_out = Vec::with_capacity(nt);
    let mut m_out = Vec::with_capacity(nt);
    for i in 0..nt {
        let target = total * i as f64 / (nt - 1) as f64;
        let (k, r) = if i + 1 == nt {
            (nt - 2, 1.0)
        } else if i == 0 {
            (0, 0.0)
        } else {
            let k = (0..nt - 1).find(|&k| theta[k + 1] >= target).unwrap_or(nt - 2);
            let span = theta[k + 1] - theta[k];
            (k, if span > 0.0 { ((target - theta[k]) / span).clamp(0.0, 1.0) } else { 0.0 })
        };
        let u = if r == 0.0 {
            us[k].clone()
        } else if r == 1.0 {
            us[k + 1].clone()
        } else {
            lerp(&us[k], &us[k + 1], r)
        };
        let g = (1.0 - r) * weight[k] + r * weight[k + 1];
        let dir = lerp(&directions[k], &directions[k + 1], r);
        u_out.push(u);
        m_out.push(dir.iter().map(|d| total * g * d).collect());
    }
    Ok((u_out, m_out))
}

fn rebuild(curve: &Curve, us: Vec<Vec<f64>>, ms: Vec<Vec<f64>>) -> Result<Curve> {
    let grid = curve.grid().clone();
    let densities = us
        .into_iter()
        .enumerate()
        .map(|(k, u)| {
            if k == 0 || k + 1 == curve.n_slices() {
                Ok(curve.density(k).clone())
            } else {
                DensityField::new(u, &grid)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Curve::new(grid, densities, ms)
}

/// Resamples the curve so that its metric speed `V^(1/p)` is constant in time.
///
/// Endpoints are kept; a slice with zero speed takes its direction of motion
/// from its neighbours.
pub fn reparametrize_constant_speed(curve: &Curve, p: f64) -> Result<Curve> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must exceed 1")));
    }
    let (_, kinetic) = slice_energies(curve, p, 2.0);
    let speed: Vec<f64> = kinetic.iter().map(|v| v.powf(1.0 / p)).collect();
    let weight = vec![1.0; speed.len()];
    let (us, ms) = resample(&curve_values(curve), curve.momenta(), &speed, &weight, curve.grid().dt())?;
    rebuild(curve, us, ms)
}

/// Resamples the curve so that `K = p beta F^alpha V^(beta - 1)` is constant.
///
/// Requires `beta = 1/p`, for which the action is invariant under
/// reparametrization and `K` constant means speed proportional to
/// `F^(alpha / (p - 1))`.
pub fn reparametrize_constant_k(curve: &Curve, params: &EnergyParams) -> Result<Curve> {
    if !params.is_length_like() {
        return Err(Error::InvalidParameter(format!("beta = {} must equal 1/p = {}", params.beta, 1.0 / params.p)));
    }
    let (congestion, kinetic) = slice_energies(curve, params.p, params.q);
    if let Some(k) = congestion.iter().position(|f| !(*f > 0.0)) {
        return Err(Error::ZeroCongestion { slice: k });
    }
    let speed: Vec<f64> = kinetic.iter().map(|v| v.powf(1.0 / params.p)).collect();
    let weight: Vec<f64> = congestion.iter().map(|f| f.powf(params.alpha / (params.p - 1.0))).collect();
    let (us, ms) = resample(&curve_values(curve), curve.momenta(), &speed, &weight, curve.grid().dt())?;
    rebuild(curve, us, ms)
}

fn curve_values(curve: &Curve) -> Vec<Vec<f64>> {
    curve.densities().iter().map(|u| u.values().to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::action;
    use crate::fields::make_grid;
    use crate::residual::coefficients;
    use crate::selfsimilar::{fixed_center_curve, PolynomialRadius, PowerLawRadius, SelfSimilarSpec};

    fn spread(values: &[f64]) -> f64 {
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / max.abs()
    }

    fn curve(radius: PolynomialRadius, n_x: usize, n_t: usize) -> Curve {
        let g = make_grid(1, &[-1.5], &[1.5], n_x, n_t).unwrap();
        fixed_center_curve(&SelfSimilarSpec::fixed(1, radius, &[0.0]), &g).unwrap()
    }

    #[test]
    fn stopped_endpoint_gets_constant_speed() {
        let c = curve(PolynomialRadius { coeffs: vec![1.0, 0.0, -0.5] }, 401, 33);
        let out = reparametrize_constant_speed(&c, 2.0).unwrap();
        let (_, v) = slice_energies(&out, 2.0, 2.0);
        assert!(spread(&v.iter().map(|v| v.sqrt()).collect::<Vec<_>>()) < 0.02, "{v:?}");
        assert_eq!(out.density(0), c.density(0));
        assert_eq!(out.density(32), c.density(32));
    }

    #[test]
    fn constant_k_family_is_left_in_place() {
        let g = make_grid(1, &[-1.5], &[1.5], 401, 17).unwrap();
        let c =
            fixed_center_curve(&SelfSimilarSpec::fixed(1, PowerLawRadius::between(1.0, 0.6, 1), &[0.0]), &g).unwrap();
        let params = EnergyParams::quadratic();
        let out = reparametrize_constant_k(&c, &params).unwrap();
        for k in 0..17 {
            let diff = out
                .density(k)
                .values()
                .iter()
                .zip(c.density(k).values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-3 * c.density(k).max(), "slice {k}: {diff}");
        }
        let before = action(&c, &params).unwrap().total;
        let after = action(&out, &params).unwrap().total;
        assert!((before - after).abs() < 1e-4 * before);
    }

    #[test]
    fn constant_k_output_has_flat_k() {
        let c = curve(PolynomialRadius { coeffs: vec![1.0, -0.2, -0.3] }, 401, 33);
        let params = EnergyParams::quadratic();
        let out = reparametrize_constant_k(&c, &params).unwrap();
        let k = coefficients(&out, &params, 0.0).unwrap().k_spread();
        assert!(k < 0.02, "{k}");
    }

    #[test]
    fn rejects_non_length_like_parameters() {
        let c = curve(PolynomialRadius::linear(1.0, 0.7), 101, 9);
        let params = EnergyParams::new(2.0, 2.0, 1.0, 1.0).unwrap();
        assert!(matches!(reparametrize_constant_k(&c, &params), Err(Error::InvalidParameter(_))));
        assert!(matches!(reparametrize_constant_speed(&c, 1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn static_curve_has_zero_length() {
        let c = curve(PolynomialRadius::constant(1.0), 101, 9);
        assert_eq!(reparametrize_constant_speed(&c, 2.0), Err(Error::ZeroLength));
    }
}
