//! Staggered discretization of the two-endpoint problem.
//!
//! Densities live on the nodes of every time slice. Momenta live on the
//! faces between neighbouring nodes (one normal component per face) and at
//! the midpoints of the time intervals. Interval `b` carries the continuity
//! constraint
//! `w_j (u^{b+1}_j - u^b_j) + dt (div m^{b+1/2})_j = 0`,
//! whose divergence is the net face outflow of the dual cell of node `j`.
//! The kinetic density of a face is `|m|^p / ubar^(p-1)` with `ubar` the
//! mean of its two nodes over both slices of the interval.
//!
//! Newton systems are ordered interval by interval: the momenta of interval
//! `b`, the densities of slice `b + 1` and the multipliers of interval `b`
//! form one block, and the system is block tridiagonal.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::energy::EnergyParams;
use crate::fields::SpaceTimeGrid;
use crate::transport::faces;

/// Relative floor on `|m| / ubar` in the momentum curvature when `p != 2`.
const CURVATURE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Face {
    pub axis: usize,
    pub lower: usize,
    pub upper: usize,
    /// Dual area used by the divergence.
    pub area: f64,
    /// Quadrature volume of the face term in the kinetic energy.
    pub volume: f64,
}

/// One term `weight psi(ubar, mbar)` of the kinetic energy of an interval,
/// with `ubar` and `mbar` linear in the densities and face momenta.
#[derive(Debug, Clone)]
pub(crate) struct Term {
    weight: f64,
    /// `(slice offset in the interval, node, coefficient)`.
    nodes: Vec<(usize, usize, f64)>,
    /// `(face, coefficient)`.
    faces: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Model {
    Additive { q: f64, weight: f64 },
    Multiplicative(EnergyParams),
}

impl Model {
    pub fn p(&self) -> f64 {
        match self {
            Model::Additive { .. } => 2.0,
            Model::Multiplicative(e) => e.p,
        }
    }
    pub fn q(&self) -> f64 {
        match self {
            Model::Additive { q, .. } => *q,
            Model::Multiplicative(e) => e.q,
        }
    }

    /// Powers `(a, c)` of the minimized sum of `dt F^a V^c`. When
    /// `beta = 1/p` the action is the length of a conformal metric, and its
    /// energy `(alpha p, 1)` has the same minimizers in the parametrization
    /// where `F^(alpha p) V` is constant.
    fn powers(&self) -> (f64, f64) {
        match self {
            Model::Additive { .. } => (1.0, 1.0),
            Model::Multiplicative(e) if e.is_length_like() => (e.alpha * e.p, 1.0),
            Model::Multiplicative(e) => (e.alpha, e.beta),
        }
    }
}

/// Densities of every slice and face momenta of every interval. Also used
/// for steps and gradients, whose endpoint densities are zero.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State {
    pub u: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
}

/// `|m|^p / ubar^(p-1)`, zero when `m = 0`.
pub(crate) fn psi(p: f64, ubar: f64, m: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        m.abs().powf(p) * ubar.powf(1.0 - p)
    }
}

/// Gradient of `psi` in `(ubar, m)` and the entries `(uu, um, mm)` of a
/// positive semidefinite curvature, exact except that the `mm` entry is
/// bounded below when `p != 2`.
fn psi_derivatives(p: f64, ubar: f64, m: f64) -> ([f64; 2], [f64; 3]) {
    let am = m.abs();
    let sg = if m == 0.0 { 0.0 } else { m.signum() };
    let grad = [(1.0 - p) * am.powf(p) * ubar.powf(-p), p * sg * am.powf(p - 1.0) * ubar.powf(1.0 - p)];
    let uu = p * (p - 1.0) * am.powf(p) * ubar.powf(-p - 1.0);
    let um = -p * (p - 1.0) * sg * am.powf(p - 1.0) * ubar.powf(-p);
    let mm = if p == 2.0 {
        2.0 / ubar
    } else {
        p * (p - 1.0) * am.max(CURVATURE_FLOOR * ubar).powf(p - 2.0) * ubar.powf(1.0 - p)
    };
    (grad, [uu, um, mm])
}

/// Face terms: `ubar` is the mean of the two nodes of the face over both
/// slices of the interval.
fn kinetic_terms(faces: &[Face]) -> Vec<Term> {
    faces
        .iter()
        .enumerate()
        .map(|(f, face)| Term {
            weight: face.volume,
            nodes: vec![(0, face.lower, 0.25), (0, face.upper, 0.25), (1, face.lower, 0.25), (1, face.upper, 0.25)],
            faces: vec![(f, 1.0)],
        })
        .collect()
}

/// Unknown of the Newton system: block and position inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    block: usize,
    index: usize,
}

/// Symmetric block tridiagonal matrix in interval-block order.
///
/// `lower[b]` couples block `b` with the densities of block `b - 1`, the
/// only unknowns of that block it touches.
pub(crate) struct Assembly {
    diag: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
    n_nodes: usize,
    n_faces: usize,
}

impl Assembly {
    fn add(&mut self, a: Slot, b: Slot, v: f64) {
        if a.block == b.block {
            self.diag[a.block][(a.index, b.index)] += v;
            if a.index != b.index {
                self.diag[a.block][(b.index, a.index)] += v;
            }
        } else if a.block == b.block + 1 {
            self.lower[a.block][(a.index, b.index - self.n_faces)] += v;
        } else if b.block == a.block + 1 {
            self.lower[b.block][(b.index, a.index - self.n_faces)] += v;
        } else {
            unreachable!("unknowns {a:?} and {b:?} are not coupled");
        }
    }

    /// Block elimination from the first interval; `None` if a pivot block
    /// is singular.
    pub fn factor(self) -> Option<Factor> {
        let (nf, nn) = (self.n_faces, self.n_nodes);
        let mut lus: Vec<LU<f64, Dyn, Dyn>> = Vec::with_capacity(self.diag.len());
        for (b, mut d) in self.diag.into_iter().enumerate() {
            if b > 0 {
                let prev = &lus[b - 1];
                let mut e = DMatrix::zeros(prev.l().nrows(), nn);
                for j in 0..nn {
                    e[(nf + j, j)] = 1.0;
                }
                let inv = prev.solve(&e)?;
                let l = &self.lower[b];
                d -= l * inv.rows(nf, nn) * l.transpose();
            }
            let lu = d.lu();
            if !lu.is_invertible() || !lu.u().diagonal().iter().all(|v| v.is_finite()) {
                return None;
            }
            lus.push(lu);
        }
        Some(Factor { lus, lower: self.lower, n_faces: nf, n_nodes: nn })
    }
}

pub(crate) struct Factor {
    lus: Vec<LU<f64, Dyn, Dyn>>,
    lower: Vec<DMatrix<f64>>,
    n_faces: usize,
    n_nodes: usize,
}

impl Factor {
    fn solve(&self, mut z: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
        let nb = self.lus.len();
        let (nf, nn) = (self.n_faces, self.n_nodes);
        for b in 1..nb {
            let y = self.lus[b - 1].solve(&z[b - 1]).expect("factored blocks are invertible");
            let shift = &self.lower[b] * y.rows(nf, nn);
            z[b] -= shift;
        }
        let mut x: Vec<DVector<f64>> = vec![DVector::zeros(0); nb];
        for b in (0..nb).rev() {
            let mut r = z[b].clone();
            if b + 1 < nb {
                let back = self.lower[b + 1].transpose() * &x[b + 1];
                let mut rows = r.rows_mut(nf, nn);
                rows -= back;
            }
            x[b] = self.lus[b].solve(&r).expect("factored blocks are invertible");
        }
        x
    }
}

pub(crate) struct Problem<'a> {
    pub grid: &'a SpaceTimeGrid,
    pub model: Model,
    pub faces: Vec<Face>,
    terms: Vec<Term>,
    /// Trapezoid weights of the slices.
    pub tau: Vec<f64>,
    pub dt: f64,
}

impl<'a> Problem<'a> {
    pub fn new(grid: &'a SpaceTimeGrid, model: Model) -> Self {
        let faces: Vec<Face> = faces(grid)
            .into_iter()
            .map(|(axis, lower, upper, area)| Face { axis, lower, upper, area, volume: area * grid.spacing(axis) })
            .collect();
        let terms = kinetic_terms(&faces);
        Self { grid, model, faces, terms, tau: grid.time_weights(), dt: grid.dt() }
    }

    fn term_values(&self, st: &State, b: usize, t: &Term) -> (f64, f64) {
        let ubar = t.nodes.iter().map(|&(o, j, c)| c * st.u[b + o][j]).sum();
        let mbar = t.faces.iter().map(|&(f, c)| c * st.m[b][f]).sum();
        (ubar, mbar)
    }

    pub fn n_slices(&self) -> usize {
        self.tau.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.n_slices() - 1
    }

    fn is_interior(&self, k: usize) -> bool {
        k > 0 && k + 1 < self.n_slices()
    }

    /// `F` of every slice.
    pub fn congestion(&self, u: &[Vec<f64>]) -> Vec<f64> {
        let q = self.model.q();
        let w = self.grid.weights();
        u.iter().map(|u| u.iter().zip(w).map(|(u, w)| w * u.powf(q)).sum()).collect()
    }

    /// `V` of every interval; infinite if a face carries momentum over vacuum.
    pub fn kinetic(&self, st: &State) -> Vec<f64> {
        let p = self.model.p();
        (0..self.n_intervals())
            .map(|b| {
                let mut v = 0.0;
                for t in &self.terms {
                    let (ubar, mbar) = self.term_values(st, b, t);
                    if mbar == 0.0 {
                        continue;
                    }
                    if !(ubar > 0.0) {
                        return f64::INFINITY;
                    }
                    v += t.weight * psi(p, ubar, mbar);
                }
                v
            })
            .collect()
    }

    /// Mean congestion of each interval.
    fn interval_congestion(f: &[f64]) -> Vec<f64> {
        f.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Minimized functional.
    pub fn objective(&self, st: &State) -> f64 {
        self.sum_of_powers(st, self.model.powers())
    }

    /// Discrete action: the objective except that the multiplicative model
    /// always uses `(alpha, beta)`.
    pub fn action(&self, st: &State) -> f64 {
        match self.model {
            Model::Additive { .. } => self.objective(st),
            Model::Multiplicative(e) => self.sum_of_powers(st, (e.alpha, e.beta)),
        }
    }

    fn sum_of_powers(&self, st: &State, (a, c): (f64, f64)) -> f64 {
        let f = self.congestion(&st.u);
        let v = self.kinetic(st);
        match self.model {
            Model::Additive { weight, .. } => {
                let fc: f64 = f.iter().zip(&self.tau).map(|(f, t)| t * f).sum();
                weight * fc + self.dt * v.iter().sum::<f64>()
            }
            Model::Multiplicative(_) => Self::interval_congestion(&f)
                .iter()
                .zip(&v)
                .map(|(&f, &v)| if v == 0.0 { 0.0 } else { self.dt * f.powf(a) * v.powf(c) })
                .sum(),
        }
    }

    /// Number of barrier terms, one per interior density.
    pub fn barrier_mass(&self) -> f64 {
        (self.n_slices().saturating_sub(2) * self.grid.n_nodes()) as f64
    }

    /// Objective plus `mu` times the log barrier; infinite outside the domain.
    pub fn merit(&self, st: &State, mu: f64) -> f64 {
        let mut total = self.objective(st);
        for k in 1..self.n_slices() - 1 {
            for &u in &st.u[k] {
                if !(u > 0.0) {
                    return f64::INFINITY;
                }
                total -= mu * u.ln();
            }
        }
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }

    /// Weights of `grad F_k` per slice and of `grad V_b` per interval in the
    /// gradient of the objective.
    pub fn coefficients(&self, st: &State) -> (Vec<f64>, Vec<f64>) {
        let f = self.congestion(&st.u);
        let v = self.kinetic(st);
        match self.model {
            Model::Additive { weight, .. } => (self.tau.iter().map(|t| t * weight).collect(), vec![self.dt; v.len()]),
            Model::Multiplicative(_) => {
                let (pa, pc) = self.model.powers();
                let fb = Self::interval_congestion(&f);
                let mut a = vec![0.0; f.len()];
                let mut bv = vec![0.0; v.len()];
                for b in 0..v.len() {
                    let da = self.dt * pa * fb[b].powf(pa - 1.0) * v[b].powf(pc);
                    a[b] += 0.5 * da;
                    a[b + 1] += 0.5 * da;
                    bv[b] = self.dt * pc * fb[b].powf(pa) * v[b].powf(pc - 1.0);
                }
                (a, bv)
            }
        }
    }

    fn u_slot(&self, k: usize, j: usize) -> Option<Slot> {
        self.is_interior(k).then(|| Slot { block: k - 1, index: self.faces.len() + j })
    }

    fn m_slot(&self, b: usize, f: usize) -> Slot {
        Slot { block: b, index: f }
    }

    /// Unknowns of block `b` before its multipliers.
    fn block_vars(&self, b: usize) -> usize {
        self.faces.len() + if self.is_interior(b + 1) { self.grid.n_nodes() } else { 0 }
    }

    /// Multiplier rows of block `b`. The last row of the last interval is
    /// dropped: all rows sum to the mass balance of the endpoints.
    fn block_rows(&self, b: usize) -> usize {
        self.grid.n_nodes() - usize::from(b + 1 == self.n_intervals())
    }

    fn empty_assembly(&self) -> Assembly {
        let nn = self.grid.n_nodes();
        let size = |b: usize| self.block_vars(b) + self.block_rows(b);
        let diag = (0..self.n_intervals()).map(|b| DMatrix::zeros(size(b), size(b))).collect();
        let lower = (0..self.n_intervals())
            .map(|b| if b == 0 { DMatrix::zeros(0, 0) } else { DMatrix::zeros(size(b), nn) })
            .collect();
        Assembly { diag, lower, n_nodes: nn, n_faces: self.faces.len() }
    }

    fn add_constraints(&self, asm: &mut Assembly) {
        let w = self.grid.weights();
        for b in 0..self.n_intervals() {
            let base = self.block_vars(b);
            let rows = self.block_rows(b);
            let row = |j: usize| Slot { block: b, index: base + j };
            for (j, &wj) in w.iter().enumerate().take(rows) {
                if let Some(s) = self.u_slot(b + 1, j) {
                    asm.add(row(j), s, wj);
                }
                if let Some(s) = self.u_slot(b, j) {
                    asm.add(row(j), s, -wj);
                }
            }
            for (fi, face) in self.faces.iter().enumerate() {
                let c = self.dt * face.area;
                if face.lower < rows {
                    asm.add(row(face.lower), self.m_slot(b, fi), c);
                }
                if face.upper < rows {
                    asm.add(row(face.upper), self.m_slot(b, fi), -c);
                }
            }
        }
    }

    /// Continuity defect of every interval, one value per node.
    pub fn constraint(&self, st: &State) -> Vec<Vec<f64>> {
        let w = self.grid.weights();
        (0..self.n_intervals())
            .map(|b| {
                let mut c: Vec<f64> = (0..w.len()).map(|j| w[j] * (st.u[b + 1][j] - st.u[b][j])).collect();
                for (face, &mf) in self.faces.iter().zip(&st.m[b]) {
                    let flux = self.dt * face.area * mf;
                    c[face.lower] += flux;
                    c[face.upper] -= flux;
                }
                c
            })
            .collect()
    }

    /// Gradient of the merit and the Newton system with barrier curvature
    /// `dual / u` and the diagonal scaled by `1 + shift`.
    ///
    /// The curvature keeps `a grad^2 F + b grad^2 V` and drops the rank-two
    /// terms of the multiplicative objective.
    pub fn newton_system(&self, st: &State, dual: &[Vec<f64>], mu: f64, shift: f64) -> Option<(State, Assembly)> {
        let (p, q) = (self.model.p(), self.model.q());
        let w = self.grid.weights();
        let (a, bcoef) = self.coefficients(st);
        if !a.iter().chain(&bcoef).all(|c| c.is_finite()) {
            return None;
        }
        let mut grad = self.zero_like(st);
        let mut asm = self.empty_assembly();
        for k in 1..self.n_slices() - 1 {
            for j in 0..w.len() {
                let u = st.u[k][j];
                if !(u > 0.0) {
                    return None;
                }
                let s = self.u_slot(k, j)?;
                grad.u[k][j] += a[k] * w[j] * q * u.powf(q - 1.0) - mu / u;
                asm.add(s, s, a[k] * w[j] * q * (q - 1.0) * u.powf(q - 2.0) + dual[k][j] / u);
            }
        }
        for b in 0..self.n_intervals() {
            for t in &self.terms {
                let (ubar, mbar) = self.term_values(st, b, t);
                if !(ubar > 0.0) {
                    return None;
                }
                let ([du, dm], [huu, hum, hmm]) = psi_derivatives(p, ubar, mbar);
                let c = bcoef[b] * t.weight;
                for (x, &(f, cf)) in t.faces.iter().enumerate() {
                    let sf = self.m_slot(b, f);
                    grad.m[b][f] += c * cf * dm;
                    for &(g, cg) in &t.faces[..=x] {
                        asm.add(sf, self.m_slot(b, g), c * cf * cg * hmm);
                    }
                }
                for (x, &(o, j, cu)) in t.nodes.iter().enumerate() {
                    let Some(sx) = self.u_slot(b + o, j) else { continue };
                    grad.u[b + o][j] += c * cu * du;
                    for &(f, cf) in &t.faces {
                        asm.add(sx, self.m_slot(b, f), c * cu * cf * hum);
                    }
                    for &(o2, j2, cv) in &t.nodes[..=x] {
                        if let Some(sy) = self.u_slot(b + o2, j2) {
                            asm.add(sx, sy, c * cu * cv * huu);
                        }
                    }
                }
            }
        }
        for b in 0..self.n_intervals() {
            let d = &mut asm.diag[b];
            for i in 0..self.block_vars(b) {
                d[(i, i)] *= 1.0 + shift;
            }
        }
        self.add_constraints(&mut asm);
        Some((grad, asm))
    }

    /// System of the least-squares correction in the diagonal metric
    /// `stiffness w_j` on densities and `volume / ubar` on momenta.
    pub fn projection_system(&self, st: &State, stiffness: f64) -> Assembly {
        let w = self.grid.weights();
        let mut asm = self.empty_assembly();
        for k in 1..self.n_slices() - 1 {
            for (j, &wj) in w.iter().enumerate() {
                if let Some(s) = self.u_slot(k, j) {
                    asm.add(s, s, stiffness * wj);
                }
            }
        }
        for b in 0..self.n_intervals() {
            for (fi, face) in self.faces.iter().enumerate() {
                let ubar = 0.25
                    * (st.u[b][face.lower] + st.u[b][face.upper] + st.u[b + 1][face.lower] + st.u[b + 1][face.upper]);
                asm.add(self.m_slot(b, fi), self.m_slot(b, fi), face.volume / ubar.max(f64::MIN_POSITIVE));
            }
        }
        self.add_constraints(&mut asm);
        asm
    }

    pub fn zero_like(&self, st: &State) -> State {
        State {
            u: st.u.iter().map(|u| vec![0.0; u.len()]).collect(),
            m: st.m.iter().map(|m| vec![0.0; m.len()]).collect(),
        }
    }

    /// Step `d` with `H d + A^T l = -grad` and `A (st + d) = 0`.
    pub fn kkt_step(&self, factor: &Factor, grad: &State, st: &State) -> State {
        let nf = self.faces.len();
        let nn = self.grid.n_nodes();
        let defect = self.constraint(st);
        let rhs = (0..self.n_intervals())
            .map(|b| {
                let nv = self.block_vars(b);
                let mut r = DVector::zeros(nv + self.block_rows(b));
                for f in 0..nf {
                    r[f] = -grad.m[b][f];
                }
                if self.is_interior(b + 1) {
                    for j in 0..nn {
                        r[nf + j] = -grad.u[b + 1][j];
                    }
                }
                for j in 0..self.block_rows(b) {
                    r[nv + j] = -defect[b][j];
                }
                r
            })
            .collect();
        let x = factor.solve(rhs);
        let mut step = self.zero_like(st);
        for (b, xb) in x.iter().enumerate() {
            step.m[b].copy_from_slice(&xb.as_slice()[..nf]);
            if self.is_interior(b + 1) {
                step.u[b + 1].copy_from_slice(&xb.as_slice()[nf..nf + nn]);
            }
        }
        step
    }

    /// `st + scale * step`.
    pub fn apply(&self, st: &State, step: &State, scale: f64) -> State {
        let add = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter().zip(b).map(|(a, b)| a.iter().zip(b).map(|(a, b)| a + scale * b).collect()).collect()
        };
        State { u: add(&st.u, &step.u), m: add(&st.m, &step.m) }
    }

    /// Largest step in `(0, 1]` covering at most `fraction` of the distance
    /// of any interior density to zero.
    pub fn max_step(&self, st: &State, step: &State, fraction: f64) -> f64 {
        let mut smax: f64 = 1.0;
        for k in 1..self.n_slices() - 1 {
            for (u, du) in st.u[k].iter().zip(&step.u[k]) {
                if *du < 0.0 {
                    smax = smax.min(fraction * u / -du);
                }
            }
        }
        smax
    }
}

/// Face momenta at the slices from interval momenta: means inside, linear
/// extrapolation at the endpoints.
pub(crate) fn slice_momenta(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let nb = m.len();
    let mix =
        |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| s * a + (1.0 - s) * b).collect() };
    (0..=nb)
        .map(|k| {
            if nb == 1 {
                m[0].clone()
            } else if k == 0 {
                mix(&m[0], &m[1], 1.5)
            } else if k == nb {
                mix(&m[nb - 1], &m[nb - 2], 1.5)
            } else {
                mix(&m[k - 1], &m[k], 0.5)
            }
        })
        .collect()
}

/// Interval momenta from slice momenta.
pub(crate) fn interval_momenta(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect()).collect()
}

impl Problem<'_> {
    /// Nodal momenta `u v` of one slice, with `v` the mean of the face
    /// velocities `m / ubar` adjacent along each axis.
    pub fn nodal_momenta(&self, u: &[f64], m: &[f64]) -> Vec<f64> {
        let d = self.grid.dim();
        let mut out = vec![0.0; self.grid.n_nodes() * d];
        for (face, &mf) in self.faces.iter().zip(m) {
            let ubar = 0.5 * (u[face.lower] + u[face.upper]);
            let v = if ubar > 0.0 { mf / ubar } else { 0.0 };
            out[face.lower * d + face.axis] += 0.5 * v;
            out[face.upper * d + face.axis] += 0.5 * v;
        }
        for (j, &uj) in u.iter().enumerate() {
            out[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= uj);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_grid;

    fn problem(grid: &SpaceTimeGrid, model: Model) -> (Problem<'_>, State) {
        let u0 = grid.sample(|x| 1.0 + 0.3 * (x[0] - 0.5));
        let u1 = grid.sample(|x| 1.0 - 0.3 * (x[0] - 0.5));
        let pr = Problem::new(grid, model);
        let u: Vec<Vec<f64>> = (0..grid.n_t())
            .map(|k| {
                let t = grid.time(k);
                u0.iter()
                    .zip(&u1)
                    .enumerate()
                    .map(|(j, (a, b))| (1.0 - t) * a + t * b + 0.01 * ((j * 7 + k) % 3) as f64)
                    .collect()
            })
            .collect();
        let m = (0..grid.n_t() - 1)
            .map(|b| (0..pr.faces.len()).map(|f| 0.01 * ((b + 2 * f) % 5) as f64 - 0.02).collect())
            .collect();
        (pr, State { u, m })
    }

    fn multiplicative() -> Model {
        Model::Multiplicative(EnergyParams::new(2.0, 2.0, 1.0, 0.75).unwrap())
    }

    /// Global position of the first entry of each block.
    fn offsets(asm: &Assembly) -> Vec<usize> {
        let mut out = vec![0];
        for d in &asm.diag {
            out.push(out.last().unwrap() + d.nrows());
        }
        out
    }

    fn dense(asm: &Assembly) -> DMatrix<f64> {
        let off = offsets(asm);
        let n = *off.last().unwrap();
        let mut a = DMatrix::zeros(n, n);
        for (b, d) in asm.diag.iter().enumerate() {
            a.view_mut((off[b], off[b]), d.shape()).copy_from(d);
            if b > 0 {
                let l = &asm.lower[b];
                a.view_mut((off[b], off[b - 1] + asm.n_faces), l.shape()).copy_from(l);
                a.view_mut((off[b - 1] + asm.n_faces, off[b]), (l.ncols(), l.nrows())).copy_from(&l.transpose());
            }
        }
        a
    }

    #[test]
    fn kinetic_derivatives_match_differences() {
        for p in [2.0, 1.5, 3.0] {
            let (ubar, m) = (0.7, -0.4);
            let h = 1e-6;
            let (g, [uu, um, mm]) = psi_derivatives(p, ubar, m);
            let fd_u = (psi(p, ubar + h, m) - psi(p, ubar - h, m)) / (2.0 * h);
            let fd_m = (psi(p, ubar, m + h) - psi(p, ubar, m - h)) / (2.0 * h);
            assert!((fd_u - g[0]).abs() < 1e-7 && (fd_m - g[1]).abs() < 1e-7, "p {p}");
            let d = |a: [f64; 2], b: [f64; 2], i: usize| (a[i] - b[i]) / (2.0 * h);
            let (gu, _) = psi_derivatives(p, ubar + h, m);
            let (gl, _) = psi_derivatives(p, ubar - h, m);
            let (gm, _) = psi_derivatives(p, ubar, m + h);
            let (gn, _) = psi_derivatives(p, ubar, m - h);
            assert!((d(gu, gl, 0) - uu).abs() < 1e-5);
            assert!((d(gm, gn, 0) - um).abs() < 1e-5);
            assert!((d(gm, gn, 1) - mm).abs() < 1e-5);
            assert!(uu * mm - um * um >= -1e-12 * uu * mm);
        }
        let (_, [_, _, mm]) = psi_derivatives(3.0, 1.0, 0.0);
        assert!(mm > 0.0);
    }

    #[test]
    fn divergence_conserves_mass() {
        let g = make_grid(2, &[0.0, 0.0], &[1.0, 1.0], 5, 4).unwrap();
        let (pr, st) = problem(&g, multiplicative());
        let flux_only = State { u: vec![vec![0.0; g.n_nodes()]; 4], ..st };
        for c in pr.constraint(&flux_only) {
            assert!(c.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn newton_gradient_matches_merit() {
        for d in [1, 2] {
            let g = make_grid(d, &vec![0.0; d], &vec![1.0; d], 4, 4).unwrap();
            let (pr, st) = problem(&g, multiplicative());
            let mu = 0.1;
            let dual: Vec<Vec<f64>> = st.u.iter().map(|u| u.iter().map(|u| mu / u).collect()).collect();
            let (grad, _) = pr.newton_system(&st, &dual, mu, 0.0).unwrap();
            let h = 1e-6;
            let fd = |a: State, b: State| (pr.merit(&a, mu) - pr.merit(&b, mu)) / (2.0 * h);
            for k in 1..3 {
                for j in 0..g.n_nodes() {
                    let (mut a, mut b) = (st.clone(), st.clone());
                    a.u[k][j] += h;
                    b.u[k][j] -= h;
                    let v = fd(a, b);
                    assert!((v - grad.u[k][j]).abs() < 1e-6 * (1.0 + v.abs()), "u {k} {j}: {v} vs {}", grad.u[k][j]);
                }
            }
            for bi in 0..3 {
                for f in 0..pr.faces.len() {
                    let (mut a, mut b) = (st.clone(), st.clone());
                    a.m[bi][f] += h;
                    b.m[bi][f] -= h;
                    let v = fd(a, b);
                    assert!((v - grad.m[bi][f]).abs() < 1e-6 * (1.0 + v.abs()), "m {bi} {f}");
                }
            }
        }
    }

    #[test]
    fn additive_curvature_is_the_gradient_jacobian() {
        let g = make_grid(1, &[0.0], &[1.0], 4, 4).unwrap();
        let (pr, st) = problem(&g, Model::Additive { q: 3.0, weight: 0.7 });
        let mu = 0.1;
        let dual: Vec<Vec<f64>> = st.u.iter().map(|u| u.iter().map(|u| mu / u).collect()).collect();
        let (grad, asm) = pr.newton_system(&st, &dual, mu, 0.0).unwrap();
        let a = dense(&asm);
        let off = offsets(&asm);
        let h = 1e-6;
        let probe = |slot: Slot, bump: &dyn Fn(&mut State, f64)| {
            let mut moved = st.clone();
            bump(&mut moved, h);
            let dual_moved: Vec<Vec<f64>> = moved.u.iter().map(|u| u.iter().map(|u| mu / u).collect()).collect();
            let (g2, _) = pr.newton_system(&moved, &dual_moved, mu, 0.0).unwrap();
            let col = off[slot.block] + slot.index;
            for b in 0..pr.n_intervals() {
                for f in 0..pr.faces.len() {
                    let fd = (g2.m[b][f] - grad.m[b][f]) / h;
                    let s = pr.m_slot(b, f);
                    assert!((fd - a[(off[s.block] + s.index, col)]).abs() < 1e-4 * (1.0 + fd.abs()));
                }
                if let Some(s) = pr.u_slot(b + 1, 0) {
                    for j in 0..g.n_nodes() {
                        let fd = (g2.u[b + 1][j] - grad.u[b + 1][j]) / h;
                        let row = off[s.block] + s.index + j;
                        assert!((fd - a[(row, col)]).abs() < 1e-4 * (1.0 + fd.abs()), "{fd} vs {}", a[(row, col)]);
                    }
                }
            }
        };
        for k in 1..3 {
            for j in 0..g.n_nodes() {
                probe(pr.u_slot(k, j).unwrap(), &|s: &mut State, h| s.u[k][j] += h);
            }
        }
        for b in 0..3 {
            for f in 0..pr.faces.len() {
                probe(pr.m_slot(b, f), &|s: &mut State, h| s.m[b][f] += h);
            }
        }
    }

    #[test]
    fn block_factor_solves_the_assembled_system() {
        for d in [1, 2] {
            let g = make_grid(d, &vec![0.0; d], &vec![1.0; d], 4, 5).unwrap();
            let (pr, st) = problem(&g, multiplicative());
            let dual: Vec<Vec<f64>> = st.u.iter().map(|u| u.iter().map(|u| 0.05 / u).collect()).collect();
            let (_, asm) = pr.newton_system(&st, &dual, 0.05, 0.0).unwrap();
            let a = dense(&asm);
            let off = offsets(&asm);
            let rhs: Vec<DVector<f64>> = asm
                .diag
                .iter()
                .enumerate()
                .map(|(b, d)| DVector::from_fn(d.nrows(), |i, _| ((i * 13 + b * 7) % 11) as f64 - 5.0))
                .collect();
            let flat = DVector::from_iterator(a.nrows(), rhs.iter().flat_map(|r| r.iter().copied()));
            let x = asm.factor().unwrap().solve(rhs);
            let flat_x = DVector::from_iterator(a.nrows(), x.iter().flat_map(|r| r.iter().copied()));
            let res = (&a * &flat_x - &flat).amax();
            assert!(res < 1e-9 * flat.amax() * (1.0 + flat_x.amax()), "{res}");
            assert_eq!(off.len(), pr.n_intervals() + 1);
        }
    }

    #[test]
    fn kkt_step_restores_feasibility() {
        let g = make_grid(2, &[0.0, 0.0], &[1.0, 1.0], 4, 5).unwrap();
        let (pr, st) = problem(&g, multiplicative());
        let dual: Vec<Vec<f64>> = st.u.iter().map(|u| u.iter().map(|u| 0.05 / u).collect()).collect();
        let (grad, asm) = pr.newton_system(&st, &dual, 0.05, 0.0).unwrap();
        let step = pr.kkt_step(&asm.factor().unwrap(), &grad, &st);
        assert!(step.u[0].iter().chain(&step.u[4]).all(|v| *v == 0.0));
        for row in pr.constraint(&pr.apply(&st, &step, 1.0)) {
            assert!(row.iter().all(|v| v.abs() < 1e-12), "{row:?}");
        }
    }

    #[test]
    fn projection_moves_densities_little() {
        let g = make_grid(1, &[0.0], &[1.0], 7, 6).unwrap();
        let (pr, st) = problem(&g, multiplicative());
        let factor = pr.projection_system(&st, 1e8).factor().unwrap();
        let next = pr.apply(&st, &pr.kkt_step(&factor, &pr.zero_like(&st), &st), 1.0);
        for row in pr.constraint(&next) {
            assert!(row.iter().all(|v| v.abs() < 1e-13));
        }
        let du = next.u.iter().flatten().zip(st.u.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(du < 1e-6, "{du}");
    }

    #[test]
    fn momenta_conversions_are_consistent() {
        let slices: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64, 2.0 * k as f64, 1.0]).collect();
        assert_eq!(slice_momenta(&interval_momenta(&slices)), slices);
        let g = make_grid(1, &[0.0], &[1.0], 4, 2).unwrap();
        let pr = Problem::new(&g, multiplicative());
        assert_eq!(pr.nodal_momenta(&[2.0; 4], &[2.0, 4.0, 6.0]), vec![1.0, 3.0, 5.0, 3.0]);
    }
}
