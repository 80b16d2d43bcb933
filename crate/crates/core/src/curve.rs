//! Discrete curves of densities stored as `(u, m = u v)` per time slice.

use crate::error::{Error, Result};
use crate::fields::{check_len, quadrature, DensityField, SpaceTimeGrid, VelocityField};

/// Relative density floor used when recovering `v = m / u`.
pub const DENSITY_FLOOR: f64 = 1e-9;

/// A curve of probability densities on every slice of a grid, with momenta.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: SpaceTimeGrid,
    densities: Vec<DensityField>,
    momenta: Vec<Vec<f64>>,
}

impl Curve {
    pub fn new(grid: SpaceTimeGrid, densities: Vec<DensityField>, momenta: Vec<Vec<f64>>) -> Result<Self> {
        check_len(densities.len(), grid.n_t())?;
        check_len(momenta.len(), grid.n_t())?;
        for (u, m) in densities.iter().zip(&momenta) {
            check_len(u.len(), grid.n_nodes())?;
            check_len(m.len(), grid.n_nodes() * grid.dim())?;
        }
        for (k, m) in momenta.iter().enumerate() {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { slice: k });
            }
        }
        Ok(Self { grid, densities, momenta })
    }

    /// Builds momenta `m = u v` from nodal velocities.
    pub fn from_velocities(
        grid: SpaceTimeGrid,
        densities: Vec<DensityField>,
        velocities: &[VelocityField],
    ) -> Result<Self> {
        check_len(velocities.len(), grid.n_t())?;
        let d = grid.dim();
        let momenta = densities
            .iter()
            .zip(velocities)
            .map(|(u, v)| {
                check_len(v.values().len(), grid.n_nodes() * d)?;
                Ok(v.values().iter().enumerate().map(|(i, c)| c * u.values()[i / d]).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, densities, momenta)
    }

    /// Curve that stays at `u` with zero momentum.
    pub fn stationary(grid: SpaceTimeGrid, u: DensityField) -> Self {
        let n = grid.n_t();
        let m = vec![0.0; grid.n_nodes() * grid.dim()];
        Self { densities: vec![u; n], momenta: vec![m; n], grid }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }
    pub fn n_slices(&self) -> usize {
        self.densities.len()
    }
    pub fn density(&self, k: usize) -> &DensityField {
        &self.densities[k]
    }
    pub fn densities(&self) -> &[DensityField] {
        &self.densities
    }
    pub fn momentum(&self, k: usize) -> &[f64] {
        &self.momenta[k]
    }
    pub fn momenta(&self) -> &[Vec<f64>] {
        &self.momenta
    }
    pub fn momentum_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.momenta[k]
    }

    /// Velocity `m / max(u, u_min)` with `u_min = 1e-9 max u`.
    pub fn velocity(&self, k: usize) -> VelocityField {
        let u = self.densities[k].values();
        let floor = DENSITY_FLOOR * self.densities[k].max();
        let d = self.grid.dim();
        let values = self.momenta[k]
            .iter()
            .enumerate()
            .map(|(i, m)| if *m == 0.0 { 0.0 } else { m / u[i / d].max(floor) })
            .collect();
        VelocityField::from_raw(d, values)
    }

    pub fn velocities(&self) -> Vec<VelocityField> {
        (0..self.n_slices()).map(|k| self.velocity(k)).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.densities.iter().map(|u| quadrature(u.values(), &self.grid).unwrap_or(f64::NAN)).collect()
    }

    pub fn into_parts(self) -> (SpaceTimeGrid, Vec<DensityField>, Vec<Vec<f64>>) {
        (self.grid, self.densities, self.momenta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_grid;

    #[test]
    fn velocity_recovery_uses_floor() {
        let g = make_grid(1, &[0.0], &[1.0], 5, 2).unwrap();
        let u = DensityField::normalized(vec![0.0, 1.0, 1.0, 1.0, 0.0], &g).unwrap();
        let mut m = vec![0.0, 0.5, 0.2, -0.1, 0.0];
        m[0] = 1e-12;
        let c = Curve::new(g.clone(), vec![u.clone(), u.clone()], vec![m.clone(), m]).unwrap();
        let v = c.velocity(0);
        assert_eq!(v.values()[4], 0.0);
        assert!((v.values()[1] - 0.5 / u.values()[1]).abs() < 1e-15);
        assert!((v.values()[0] - 1e-12 / (1e-9 * u.max())).abs() < 1e-12);
    }

    #[test]
    fn from_velocities_round_trip() {
        let g = make_grid(2, &[0.0, 0.0], &[1.0, 1.0], 6, 3).unwrap();
        let u = DensityField::uniform(&g);
        let v = VelocityField::from_fn(&g, |x, o| {
            o[0] = x[1];
            o[1] = -x[0];
        });
        let c = Curve::from_velocities(g, vec![u; 3], &[v.clone(), v.clone(), v.clone()]).unwrap();
        for (a, b) in c.velocity(1).values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_wrong_slice_count() {
        let g = make_grid(1, &[0.0], &[1.0], 5, 3).unwrap();
        let u = DensityField::uniform(&g);
        assert!(Curve::new(g, vec![u], vec![vec![0.0; 5]]).is_err());
    }
}
