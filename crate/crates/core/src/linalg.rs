//! Conjugate gradients, Cholesky factorizations and small dense helpers.

/// Outcome of a conjugate-gradient run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` for symmetric positive semidefinite `A` given as a closure.
///
/// `precond` holds the inverse of a diagonal preconditioner. `x` carries the
/// initial guess on entry. Singular systems are fine when `b` is consistent.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(precond).map(|(a, p)| a * p).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = norm(&r) / b_norm;
    let mut it = 0;
    while rel > tol && it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        rel = norm(&r) / b_norm;
        for i in 0..n {
            z[i] = r[i] * precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome { iterations: it, relative_residual: rel, converged: rel <= tol }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Determinant of a row-major `d x d` matrix, `d` in 1..=3.
pub fn det(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => panic!("det: unsupported size {d}"),
    }
}

/// Solves `m x = rhs` for `d` in 1..=2 by Cramer's rule.
pub fn solve_small(m: &[f64], rhs: &[f64], d: usize, out: &mut [f64]) -> bool {
    let det = det(m, d);
    if det == 0.0 || !det.is_finite() {
        return false;
    }
    match d {
        1 => out[0] = rhs[0] / det,
        2 => {
            out[0] = (rhs[0] * m[3] - m[1] * rhs[1]) / det;
            out[1] = (m[0] * rhs[1] - rhs[0] * m[2]) / det;
        }
        _ => return false,
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_tridiagonal_system() {
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut v = 3.0 * x[i];
                if i > 0 {
                    v -= x[i - 1];
                }
                if i + 1 < n {
                    v -= x[i + 1];
                }
                y[i] = v;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let out = pcg(apply, &vec![1.0 / 3.0; n], &b, &mut x, 1e-12, 200);
        assert!(out.converged);
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        assert!(ax.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn cg_handles_consistent_singular_system() {
        // Neumann Laplacian on a path graph; rhs sums to zero.
        let n = 30;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut v = 0.0;
                if i > 0 {
                    v += x[i] - x[i - 1];
                }
                if i + 1 < n {
                    v += x[i] - x[i + 1];
                }
                y[i] = v;
            }
        };
        let mut b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mean = b.iter().sum::<f64>() / n as f64;
        b.iter_mut().for_each(|v| *v -= mean);
        let mut x = vec![0.0; n];
        assert!(pcg(apply, &vec![0.5; n], &b, &mut x, 1e-11, 500).converged);
    }

    #[test]
    fn small_solves() {
        let m = [2.0, 1.0, 1.0, 3.0];
        let mut x = [0.0; 2];
        assert!(solve_small(&m, &[3.0, 5.0], 2, &mut x));
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        assert_eq!(det(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0], 3), -3.0);
    }
}
