//! Two-endpoint solvers for the additive and multiplicative actions, and
//! time reparametrizations of discrete curves.
//!
//! Both solvers minimize over paths `(u, m)` that satisfy a discrete
//! continuity equation exactly. Momenta live on the faces of the grid and
//! at the midpoints of the time intervals. Positivity of the interior
//! densities is kept by a logarithmic barrier driven to zero; every Newton
//! step solves the equality-constrained system, which is block tridiagonal
//! in time.
//!
//! For `d = 2` only `p = 2` is supported: each face carries one momentum
//! component, which separates `|m|^p` only when `p = 2`.

mod discrete;
mod reparam;
mod seeds;

pub use reparam::{reparametrize_constant_k, reparametrize_constant_speed};
pub use seeds::{seed_path, Seed};

use crate::curve::Curve;
use crate::energy::{action, additive_report, ActionReport, EnergyParams};
use crate::error::{Error, Result};
use crate::fields::{check_len, quadrature, DensityField, SpaceTimeGrid, MASS_TOLERANCE};
use crate::residual::weak_optimality_residual;
use crate::variation::oracle::standard_battery;
use discrete::{interval_momenta, slice_momenta, Factor, Model, Problem, State};

/// What to do when an interval of the multiplicative model nearly stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlowSlices {
    /// Fail with [`Error::SpeedBelowFloor`], reporting the first slice of
    /// the interval.
    #[default]
    Abort,
    /// Resample the iterate at constant speed and continue.
    Reparametrize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub seed: Seed,
    /// Total Newton iterations over all barrier stages.
    pub max_iterations: usize,
    /// Relative accuracy of the final objective.
    pub tolerance: f64,
    /// Initial barrier weight relative to `objective / barrier mass`.
    pub barrier_start: f64,
    /// Factor applied to the barrier weight after each stage.
    pub barrier_factor: f64,
    pub armijo: f64,
    pub backtrack: f64,
    /// Floor on `V` for the multiplicative model.
    pub v_floor: f64,
    pub slow_slices: SlowSlices,
    /// Weight of the congestion term in the additive model.
    pub congestion_weight: f64,
    /// Fraction of the uniform density mixed into interior seed slices.
    pub seed_mixing: f64,
    /// Size of the test-field battery logged after each barrier stage; 0 disables it.
    pub stationarity_battery: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            seed: Seed::default(),
            max_iterations: 400,
            tolerance: 1e-9,
            barrier_start: 1.0,
            barrier_factor: 0.1,
            armijo: 1e-4,
            backtrack: 0.5,
            v_floor: 1e-10,
            slow_slices: SlowSlices::default(),
            congestion_weight: 1.0,
            seed_mixing: 1e-3,
            stationarity_battery: 0,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if !(self.barrier_start > 0.0) {
            return bad("barrier_start must be positive");
        }
        if !(self.barrier_factor > 0.0 && self.barrier_factor < 1.0) {
            return bad("barrier_factor must lie in (0, 1)");
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return bad("armijo must lie in (0, 0.5)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.v_floor >= 0.0) {
            return bad("v_floor must be nonnegative");
        }
        if !(self.congestion_weight >= 0.0 && self.congestion_weight.is_finite()) {
            return bad("congestion_weight must be nonnegative");
        }
        if !(self.seed_mixing > 0.0 && self.seed_mixing < 1.0) {
            return bad("seed_mixing must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One accepted Newton iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub barrier: f64,
    /// Minimized functional; for `beta = 1/p` the energy `sum dt F^(alpha p) V`.
    pub objective: f64,
    pub merit: f64,
    pub step: f64,
    /// Newton decrement `-grad . step` before the step.
    pub decrement: f64,
    /// Largest `|gateaux_action|` over the logged battery, at stage ends.
    pub stationarity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub curve: Curve,
    /// Face momenta per time interval, in the order of the grid's faces.
    pub face_momenta: Vec<Vec<f64>>,
    /// Energy-module report of `curve` (nodal momenta).
    pub report: ActionReport,
    /// Discrete action on the staggered grid.
    pub objective: f64,
    /// Discrete action of the feasible starting path.
    pub seed_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest pointwise defect `|du/dt + div m|` of the discrete constraint.
    pub constraint_residual: f64,
    pub history: Vec<IterationRecord>,
}

/// Minimizes `int (weight int u^q + int |m|^2 / u) dt` between `u0` and `u1`.
///
/// The congestion weight comes from `opts`; with weight 0 the minimum is the
/// squared Wasserstein distance.
pub fn solve_additive(
    u0: &DensityField,
    u1: &DensityField,
    q: f64,
    grid: &SpaceTimeGrid,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::InvalidParameter(format!("q = {q} must satisfy q > 1")));
    }
    let model = Model::Additive { q, weight: opts.congestion_weight };
    let mut out = solve(model, u0, u1, grid, opts)?;
    out.report = additive_report(&out.curve, q, opts.congestion_weight)?;
    Ok(out)
}

/// Minimizes `int F^alpha V^beta dt` between `u0` and `u1`.
///
/// Identical endpoints return the static curve, whose action is zero.
pub fn solve_multiplicative(
    u0: &DensityField,
    u1: &DensityField,
    params: &EnergyParams,
    grid: &SpaceTimeGrid,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if u0 == u1 {
        check_endpoints(u0, u1, grid)?;
        let curve = Curve::stationary(grid.clone(), u0.clone());
        let report = action(&curve, params)?;
        let faces = Problem::new(grid, Model::Multiplicative(*params)).faces.len();
        return Ok(SolveResult {
            face_momenta: vec![vec![0.0; faces]; grid.n_t() - 1],
            report,
            objective: 0.0,
            seed_objective: 0.0,
            iterations: 0,
            converged: true,
            constraint_residual: 0.0,
            history: Vec::new(),
            curve,
        });
    }
    let mut out = solve(Model::Multiplicative(*params), u0, u1, grid, opts)?;
    out.report = action(&out.curve, params)?;
    Ok(out)
}

fn check_endpoints(u0: &DensityField, u1: &DensityField, grid: &SpaceTimeGrid) -> Result<()> {
    check_len(u0.len(), grid.n_nodes())?;
    check_len(u1.len(), grid.n_nodes())?;
    let m0 = quadrature(u0.values(), grid)?;
    let m1 = quadrature(u1.values(), grid)?;
    if (m0 - m1).abs() > MASS_TOLERANCE {
        return Err(Error::MassMismatch { m0, m1 });
    }
    Ok(())
}

/// Scale of `w_j / eta` on densities in the seed projection; tiny `eta`
/// leaves the densities essentially untouched.
const SEED_DENSITY_STIFFNESS: f64 = 1e8;
/// Fraction of the distance to the boundary a step may cover.
const BOUNDARY_FRACTION: f64 = 0.995;
/// Bound on `z u / mu` for the barrier multipliers `z`.
const DUAL_SPREAD: f64 = 1e10;
/// Resamplings allowed by [`SlowSlices::Reparametrize`].
const MAX_RESAMPLINGS: usize = 5;

fn solve(
    model: Model,
    u0: &DensityField,
    u1: &DensityField,
    grid: &SpaceTimeGrid,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    check_endpoints(u0, u1, grid)?;
    if grid.dim() == 2 && model.p() != 2.0 {
        return Err(Error::UnsupportedForm { form: "solver", requirement: "p = 2 when d = 2" });
    }
    let pr = Problem::new(grid, model);
    let (mut st, projector) = initial_state(&pr, u0, u1, opts)?;
    let seed_objective = pr.action(&st);
    let barrier_mass = pr.barrier_mass();
    let battery = standard_battery(grid, opts.stationarity_battery, 0);

    let scale = |f: f64| f.abs().max(f64::MIN_POSITIVE);
    let mut mu = if barrier_mass > 0.0 { opts.barrier_start * scale(pr.objective(&st)) / barrier_mass } else { 0.0 };
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut resamplings = 0;
    let mut dual: Vec<Vec<f64>> = st.u.iter().map(|u| u.iter().map(|u| mu / u).collect()).collect();
    while iterations < opts.max_iterations {
        if let Model::Multiplicative(_) = model {
            let kinetic = pr.kinetic(&st);
            if let Some(b) = kinetic.iter().position(|v| !(*v >= opts.v_floor)) {
                if opts.slow_slices == SlowSlices::Reparametrize && resamplings < MAX_RESAMPLINGS {
                    resamplings += 1;
                    st = projector.project(&pr, &resample_state(&pr, &st, &kinetic)?);
                    continue;
                }
                return Err(Error::SpeedBelowFloor { slice: b, value: kinetic[b], floor: opts.v_floor });
            }
        }
        let objective = pr.objective(&st);
        let mu_end = opts.tolerance * scale(objective) / barrier_mass.max(f64::MIN_POSITIVE);
        let Some((step, slope)) = newton_step(&pr, &st, &dual, mu) else {
            break;
        };
        let decrement = -slope;
        let stage_tol = 0.5 * (mu * barrier_mass).max(opts.tolerance * scale(objective));
        if decrement <= stage_tol {
            let stationarity = stage_stationarity(&pr, &st, &battery, opts)?;
            if let Some(last) = history.last_mut() {
                let last: &mut IterationRecord = last;
                last.stationarity = stationarity;
            }
            if mu <= mu_end {
                converged = true;
                break;
            }
            mu = (mu * opts.barrier_factor).max(0.5 * mu_end);
            continue;
        }
        let merit = pr.merit(&st, mu);
        let mut s = pr.max_step(&st, &step, BOUNDARY_FRACTION);
        let mut accepted = None;
        while s > 1e-14 {
            let trial = projector.project(&pr, &pr.apply(&st, &step, s));
            let m = pr.merit(&trial, mu);
            if m <= merit + opts.armijo * s * slope {
                accepted = Some((trial, m));
                break;
            }
            s *= opts.backtrack;
        }
        iterations += 1;
        match accepted {
            Some((trial, m)) => {
                update_dual(&mut dual, &st, &trial, &step, mu);
                st = trial;
                history.push(IterationRecord {
                    iteration: iterations,
                    barrier: mu,
                    objective: pr.objective(&st),
                    merit: m,
                    step: s,
                    decrement,
                    stationarity: None,
                });
            }
            None => {
                // No further decrease representable at this barrier weight.
                if mu <= mu_end {
                    converged = true;
                    break;
                }
                mu = (mu * opts.barrier_factor).max(0.5 * mu_end);
            }
        }
    }
    finish(&pr, st, seed_objective, iterations, converged, history)
}

/// Primal-dual update of the barrier multipliers after an accepted step,
/// kept within a bounded ratio of `mu / u`.
fn update_dual(dual: &mut [Vec<f64>], st: &State, trial: &State, step: &State, mu: f64) {
    let mut dz = vec![Vec::new(); dual.len()];
    let mut ds: f64 = 1.0;
    for k in 0..dual.len() {
        for j in 0..dual[k].len() {
            let (z, u) = (dual[k][j], st.u[k][j]);
            let d = mu / u - z - z / u * step.u[k][j];
            if d < 0.0 {
                ds = ds.min(BOUNDARY_FRACTION * z / -d);
            }
            dz[k].push(d);
        }
    }
    for k in 0..dual.len() {
        for j in 0..dual[k].len() {
            let z = dual[k][j] + ds * dz[k][j];
            let u = trial.u[k][j];
            dual[k][j] = z.clamp(mu / (DUAL_SPREAD * u), DUAL_SPREAD * mu / u);
        }
    }
}

/// Feasible, strictly positive starting path.
fn initial_state(
    pr: &Problem<'_>,
    u0: &DensityField,
    u1: &DensityField,
    opts: &SolverOptions,
) -> Result<(State, Projector)> {
    let grid = pr.grid;
    let mut u = seed_path(u0, u1, grid, opts.seed)?;
    let mass = quadrature(u0.values(), grid)?;
    let uniform = mass / grid.volume();
    let nt = u.len();
    for slice in u.iter_mut().take(nt - 1).skip(1) {
        let m = quadrature(slice, grid)?;
        let r = if m > 0.0 { mass / m } else { 0.0 };
        for v in slice.iter_mut() {
            *v = (1.0 - opts.seed_mixing) * r * *v + opts.seed_mixing * uniform;
        }
    }
    let m = vec![vec![0.0; pr.faces.len()]; nt - 1];
    let st = State { u, m };
    let factor = pr
        .projection_system(&st, SEED_DENSITY_STIFFNESS)
        .factor()
        .ok_or_else(|| Error::Solver("seed projection failed".into()))?;
    let projector = Projector { factor, zero: pr.zero_like(&st) };
    let st = projector.project(pr, &st);
    if let Some(k) = (1..nt - 1).find(|&k| st.u[k].iter().any(|v| !(*v > 0.0))) {
        return Err(Error::Solver(format!("seed density not positive in slice {k}")));
    }
    Ok((st, projector))
}

/// Relative diagonal shifts tried in turn on the Hessian model. The kinetic
/// term is flat along rays `(u, m) -> (c u, c m)`, which leaves the model
/// nearly singular once the barrier weight is small.
const DIAGONAL_SHIFTS: [f64; 4] = [1e-8, 1e-6, 1e-4, 1e-2];

/// Newton step of the barrier problem and its directional derivative;
/// `None` if no shifted model could be factored.
fn newton_step(pr: &Problem<'_>, st: &State, dual: &[Vec<f64>], mu: f64) -> Option<(State, f64)> {
    DIAGONAL_SHIFTS.iter().find_map(|&shift| {
        let (grad, asm) = pr.newton_system(st, dual, mu, shift)?;
        let step = pr.kkt_step(&asm.factor()?, &grad, st);
        let dot = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
            a.iter().flatten().zip(b.iter().flatten()).map(|(a, b)| a * b).sum()
        };
        let slope = dot(&grad.u, &step.u) + dot(&grad.m, &step.m);
        slope.is_finite().then_some((step, slope))
    })
}

/// Restores the continuity constraint after a step.
///
/// The correction is the least-squares one in a fixed diagonal metric that
/// moves momenta and barely touches densities; its factorization is well
/// conditioned, unlike the Newton system near convergence.
struct Projector {
    factor: Factor,
    zero: State,
}

impl Projector {
    fn project(&self, pr: &Problem<'_>, st: &State) -> State {
        pr.apply(st, &pr.kkt_step(&self.factor, &self.zero, st), 1.0)
    }
}

/// Resamples the path at constant metric speed.
fn resample_state(pr: &Problem<'_>, st: &State, kinetic: &[f64]) -> Result<State> {
    let p = pr.model.p();
    let interval_speed: Vec<f64> = kinetic.iter().map(|v| v.max(0.0).powf(1.0 / p)).collect();
    let nb = interval_speed.len();
    let speed: Vec<f64> = (0..=nb)
        .map(|k| match k {
            0 => interval_speed[0],
            k if k == nb => interval_speed[nb - 1],
            k => 0.5 * (interval_speed[k - 1] + interval_speed[k]),
        })
        .collect();
    let weight = vec![1.0; speed.len()];
    let (mut u, m) = reparam::resample(&st.u, &slice_momenta(&st.m), &speed, &weight, pr.grid.dt())?;
    let nt = u.len();
    u[0] = st.u[0].clone();
    u[nt - 1] = st.u[nt - 1].clone();
    Ok(State { u, m: interval_momenta(&m) })
}

fn to_curve(pr: &Problem<'_>, st: &State) -> Result<Curve> {
    let grid = pr.grid.clone();
    let densities = st.u.iter().map(|u| DensityField::new(u.clone(), &grid)).collect::<Result<Vec<_>>>()?;
    let momenta = st.u.iter().zip(slice_momenta(&st.m)).map(|(u, m)| pr.nodal_momenta(u, &m)).collect();
    Curve::new(grid, densities, momenta)
}

fn stage_stationarity(
    pr: &Problem<'_>,
    st: &State,
    battery: &[crate::variation::SineModeField],
    opts: &SolverOptions,
) -> Result<Option<f64>> {
    let Model::Multiplicative(params) = pr.model else {
        return Ok(None);
    };
    if battery.is_empty() {
        return Ok(None);
    }
    let curve = to_curve(pr, st)?;
    weak_optimality_residual(&curve, battery, &params, opts.v_floor).map(Some)
}

fn finish(
    pr: &Problem<'_>,
    st: State,
    seed_objective: f64,
    iterations: usize,
    converged: bool,
    history: Vec<IterationRecord>,
) -> Result<SolveResult> {
    let w = pr.grid.weights();
    let dt = pr.grid.dt();
    let constraint_residual =
        pr.constraint(&st).iter().flat_map(|c| c.iter().zip(w).map(|(c, w)| (c / (w * dt)).abs())).fold(0.0, f64::max);
    let objective = pr.action(&st);
    let curve = to_curve(pr, &st)?;
    Ok(SolveResult {
        report: action(&curve, &EnergyParams::quadratic())?,
        curve,
        face_momenta: st.m,
        objective,
        seed_objective,
        iterations,
        converged,
        constraint_residual,
        history,
    })
}
