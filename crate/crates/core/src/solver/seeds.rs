//! Initial density paths.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fields::{quadrature, SpaceTimeGrid};
use crate::transport::{pushforward, AffineMap};
use crate::DensityField;

/// Strategy for the initial density path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Seed {
    /// `(1 - t) u0 + t u1`.
    #[default]
    LinearDensity,
    /// Blend of both endpoints dilated and shifted to interpolated moments.
    SelfSimilar,
    /// Displacement interpolation of the quantile functions; `d = 1` only.
    McCann,
}

impl Seed {
    pub const ALL: [Seed; 3] = [Seed::LinearDensity, Seed::SelfSimilar, Seed::McCann];

    pub fn name(self) -> &'static str {
        match self {
            Seed::LinearDensity => "linear-density",
            Seed::SelfSimilar => "self-similar",
            Seed::McCann => "mccann",
        }
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Seed {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Seed::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown seed '{s}'")))
    }
}

/// Densities of every slice; the endpoints are copied verbatim.
pub fn seed_path(u0: &DensityField, u1: &DensityField, grid: &SpaceTimeGrid, seed: Seed) -> Result<Vec<Vec<f64>>> {
    let nt = grid.n_t();
    let mut path = Vec::with_capacity(nt);
    let quantiles = match seed {
        Seed::McCann => {
            if grid.dim() != 1 {
                return Err(Error::UnsupportedDimension(grid.dim()));
            }
            Some((Quantile::new(u0.values(), grid), Quantile::new(u1.values(), grid)))
        }
        _ => None,
    };
    for k in 0..nt {
        let t = grid.time(k);
        let values = if k == 0 {
            u0.values().to_vec()
        } else if k + 1 == nt {
            u1.values().to_vec()
        } else {
            match seed {
                Seed::LinearDensity => {
                    u0.values().iter().zip(u1.values()).map(|(a, b)| (1.0 - t) * a + t * b).collect()
                }
                Seed::SelfSimilar => moment_blend(u0, u1, t, grid)?,
                Seed::McCann => {
                    let (q0, q1) = quantiles.as_ref().expect("quantiles built for this seed");
                    displacement(q0, q1, t, grid)
                }
            }
        };
        path.push(values);
    }
    Ok(path)
}

/// Mean and root-mean-square radius of a density.
fn moments(u: &DensityField, grid: &SpaceTimeGrid) -> Result<(Vec<f64>, f64)> {
    let d = grid.dim();
    let n = grid.n_nodes();
    let mut x = vec![0.0; d];
    let mut center = vec![0.0; d];
    for a in 0..d {
        let f: Vec<f64> = (0..n).map(|j| grid.coord(j, a) * u.values()[j]).collect();
        center[a] = quadrature(&f, grid)?;
    }
    let spread: Vec<f64> = (0..n)
        .map(|j| {
            grid.point(j, &mut x);
            x.iter().zip(&center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>() * u.values()[j]
        })
        .collect();
    Ok((center, quadrature(&spread, grid)?.sqrt()))
}

fn moment_blend(u0: &DensityField, u1: &DensityField, t: f64, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    let (c0, s0) = moments(u0, grid)?;
    let (c1, s1) = moments(u1, grid)?;
    if s0 <= 0.0 || s1 <= 0.0 {
        return Err(Error::InvalidDensity("endpoint concentrated at a point".into()));
    }
    let st = (1.0 - t) * s0 + t * s1;
    let ct: Vec<f64> = c0.iter().zip(&c1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    let moved = |u: &DensityField, c: &[f64], s: f64| -> Result<DensityField> {
        let factor = st / s;
        let offset = ct.iter().zip(c).map(|(ct, c)| ct - factor * c).collect();
        let mut matrix = vec![0.0; c.len() * c.len()];
        for a in 0..c.len() {
            matrix[a * c.len() + a] = factor;
        }
        pushforward(u, &AffineMap { matrix, offset }, t, grid)
    };
    let a = moved(u0, &c0, s0)?;
    let b = moved(u1, &c1, s1)?;
    Ok(a.values().iter().zip(b.values()).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// Piecewise-linear cumulative mass of a density spread evenly over dual cells.
struct Quantile {
    /// Dual cell boundaries.
    edges: Vec<f64>,
    /// Cumulative mass at each boundary.
    cdf: Vec<f64>,
}

impl Quantile {
    fn new(u: &[f64], grid: &SpaceTimeGrid) -> Self {
        let edges = dual_edges(grid);
        let mut cdf = vec![0.0];
        for (j, w) in grid.weights().iter().enumerate() {
            let last = cdf[j];
            cdf.push(last + w * u[j]);
        }
        let total = *cdf.last().unwrap_or(&1.0);
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { edges, cdf }
    }

    /// Smallest position carrying cumulative mass `s`.
    fn position(&self, s: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < s);
        if i == 0 {
            return self.edges[0];
        }
        if i >= self.cdf.len() {
            return *self.edges.last().unwrap();
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let r = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        self.edges[i - 1] + r * (self.edges[i] - self.edges[i - 1])
    }
}

fn dual_edges(grid: &SpaceTimeGrid) -> Vec<f64> {
    let n = grid.n_x();
    let h = grid.spacing(0);
    let mut edges = vec![grid.lower()[0]];
    edges.extend((0..n - 1).map(|j| grid.coord(j, 0) + 0.5 * h));
    edges.push(grid.upper()[0]);
    edges
}

/// Density of `((1 - t) X0 + t X1)_# ds` averaged over each dual cell.
fn displacement(q0: &Quantile, q1: &Quantile, t: f64, grid: &SpaceTimeGrid) -> Vec<f64> {
    let position = |s: f64| (1.0 - t) * q0.position(s) + t * q1.position(s);
    // cumulative mass below x: sup { s : X_t(s) <= x }
    let cdf = |x: f64| -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        if position(1.0) <= x {
            return 1.0;
        }
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if position(mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let edges = dual_edges(grid);
    let last = edges.len() - 1;
    let c: Vec<f64> = edges
        .iter()
        .enumerate()
        .map(|(i, &x)| match i {
            0 => 0.0,
            i if i == last => 1.0,
            _ => cdf(x),
        })
        .collect();
    grid.weights().iter().enumerate().map(|(j, w)| (c[j + 1] - c[j]).max(0.0) / w).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_grid;

    fn bump(grid: &SpaceTimeGrid, c: f64, r: f64) -> DensityField {
        let v = grid.sample(|x| {
            let s = (x[0] - c) / r;
            if s.abs() < 1.0 {
                (0.5 * std::f64::consts::PI * s).cos().powi(2)
            } else {
                0.0
            }
        });
        DensityField::normalized(v, grid).unwrap()
    }

    #[test]
    fn seeds_keep_endpoints_and_mass() {
        let g = make_grid(1, &[-1.0], &[1.0], 81, 6).unwrap();
        let (a, b) = (bump(&g, -0.4, 0.3), bump(&g, 0.3, 0.45));
        for seed in Seed::ALL {
            let path = seed_path(&a, &b, &g, seed).unwrap();
            assert_eq!(path[0], a.values());
            assert_eq!(path[5], b.values());
            for u in &path {
                assert!((quadrature(u, &g).unwrap() - 1.0).abs() < 1e-9, "{seed}");
                assert!(u.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn mccann_translates_a_bump() {
        let g = make_grid(1, &[-1.0], &[1.0], 201, 5).unwrap();
        let (a, b) = (bump(&g, -0.4, 0.3), bump(&g, 0.4, 0.3));
        let path = seed_path(&a, &b, &g, Seed::McCann).unwrap();
        let mid = bump(&g, 0.0, 0.3);
        let err = path[2].iter().zip(mid.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 0.02 * mid.max(), "{err}");
    }

    #[test]
    fn self_similar_seed_is_exact_for_a_translation() {
        let g = make_grid(1, &[-1.0], &[1.0], 201, 3).unwrap();
        let (a, b) = (bump(&g, -0.3, 0.3), bump(&g, 0.3, 0.3));
        let path = seed_path(&a, &b, &g, Seed::SelfSimilar).unwrap();
        let mid = bump(&g, 0.0, 0.3);
        let err = path[1].iter().zip(mid.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3 * mid.max(), "{err}");
    }

    #[test]
    fn mccann_needs_one_dimension() {
        let g = make_grid(2, &[-1.0, -1.0], &[1.0, 1.0], 9, 3).unwrap();
        let u = DensityField::uniform(&g);
        assert_eq!(seed_path(&u, &u, &g, Seed::McCann), Err(Error::UnsupportedDimension(2)));
    }

    #[test]
    fn names_round_trip() {
        for s in Seed::ALL {
            assert_eq!(s.name().parse::<Seed>().unwrap(), s);
        }
        assert!("quadratic".parse::<Seed>().is_err());
    }
}
