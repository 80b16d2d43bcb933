//! Local tensor-product Lagrange interpolation of nodal fields.

use crate::fields::SpaceTimeGrid;

const POINTS: usize = 6;
/// Queries this close to a node, in cell widths, return the nodal value.
const NODE_SNAP: f64 = 1e-12;

/// Degree-five local interpolation (six nodes per axis, shifted near the edges).
pub struct Interpolator<'g> {
    grid: &'g SpaceTimeGrid,
    points: usize,
}

struct Stencil {
    start: usize,
    weights: [f64; POINTS],
}

impl<'g> Interpolator<'g> {
    pub fn new(grid: &'g SpaceTimeGrid) -> Self {
        Self { grid, points: POINTS.min(grid.n_x()) }
    }

    fn stencil(&self, axis: usize, x: f64) -> Stencil {
        let n = self.grid.n_x();
        let mut s = (x - self.grid.lower()[axis]) / self.grid.spacing(axis);
        if (s - s.round()).abs() < NODE_SNAP {
            s = s.round();
        }
        let cell = (s.floor().max(0.0) as usize).min(n - 2);
        let half = self.points / 2 - 1;
        let start = cell.saturating_sub(half).min(n - self.points);
        let mut weights = [0.0; POINTS];
        for (k, w) in weights.iter_mut().enumerate().take(self.points) {
            let mut l = 1.0;
            for j in 0..self.points {
                if j != k {
                    l *= (s - (start + j) as f64) / (k as f64 - j as f64);
                }
            }
            *w = l;
        }
        Stencil { start, weights }
    }

    /// Interpolates a scalar nodal field at `x`.
    pub fn scalar(&self, field: &[f64], x: &[f64]) -> f64 {
        match self.grid.dim() {
            1 => {
                let s = self.stencil(0, x[0]);
                (0..self.points).map(|k| s.weights[k] * field[s.start + k]).sum()
            }
            _ => {
                let sx = self.stencil(0, x[0]);
                let sy = self.stencil(1, x[1]);
                let n = self.grid.n_x();
                let mut acc = 0.0;
                for j in 0..self.points {
                    let row = (sy.start + j) * n + sx.start;
                    let mut line = 0.0;
                    for i in 0..self.points {
                        line += sx.weights[i] * field[row + i];
                    }
                    acc += sy.weights[j] * line;
                }
                acc
            }
        }
    }

    /// Interpolates an interleaved vector field at `x`.
    pub fn vector(&self, field: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        match d {
            1 => {
                let s = self.stencil(0, x[0]);
                for k in 0..self.points {
                    out[0] += s.weights[k] * field[s.start + k];
                }
            }
            _ => {
                let sx = self.stencil(0, x[0]);
                let sy = self.stencil(1, x[1]);
                let n = self.grid.n_x();
                for j in 0..self.points {
                    for i in 0..self.points {
                        let node = (sy.start + j) * n + sx.start + i;
                        let w = sx.weights[i] * sy.weights[j];
                        for a in 0..d {
                            out[a] += w * field[node * d + a];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_grid;

    #[test]
    fn reproduces_quintics_exactly() {
        let g = make_grid(1, &[-1.0], &[2.0], 17, 2).unwrap();
        let f = |x: f64| 1.0 - 2.0 * x + x.powi(3) - 0.5 * x.powi(5);
        let vals = g.sample(|x| f(x[0]));
        let it = Interpolator::new(&g);
        for &x in &[-1.0, -0.93, 0.111, 1.5, 1.999, 2.0] {
            assert!((it.scalar(&vals, &[x]) - f(x)).abs() < 1e-11);
        }
    }

    #[test]
    fn two_dimensional_product() {
        let g = make_grid(2, &[0.0, 0.0], &[1.0, 1.0], 12, 2).unwrap();
        let f = |x: &[f64]| x[0].powi(4) * x[1] - 3.0 * x[1].powi(5) + x[0] * x[1];
        let vals = g.sample(f);
        let it = Interpolator::new(&g);
        let p = [0.37, 0.81];
        assert!((it.scalar(&vals, &p) - f(&p)).abs() < 1e-12);
        let vec_vals: Vec<f64> = vals.iter().flat_map(|v| [*v, 2.0 * v]).collect();
        let mut out = [0.0; 2];
        it.vector(&vec_vals, &p, &mut out);
        assert!((out[1] - 2.0 * f(&p)).abs() < 1e-12);
    }

    #[test]
    fn nodes_are_reproduced() {
        let g = make_grid(1, &[0.0], &[1.0], 9, 2).unwrap();
        let vals: Vec<f64> = (0..9).map(|i| (i * i) as f64 % 7.0).collect();
        let it = Interpolator::new(&g);
        for i in 0..9 {
            assert!((it.scalar(&vals, &[g.coord(i, 0)]) - vals[i]).abs() < 1e-12);
        }
    }
}
