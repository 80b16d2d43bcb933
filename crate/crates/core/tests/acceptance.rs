//! Acceptance criteria AC1 to AC8, one line each.
//!
//! Runs without the libtest harness so that every criterion reports even when
//! an earlier one fails; the process exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wgeo_core::energy::{action, amgm_dyadic_min, amgm_golden_min, amgm_split, kinetic, lq_energy, slice_energies};
use wgeo_core::fields::parabolic_profile;
use wgeo_core::residual::{coefficients, strong_residual, weak_optimality_residual, StrongForm};
use wgeo_core::selfsimilar::{
    fixed_center_curve, moving_curve, moving_ode_solve, PolynomialRadius, PowerLawRadius, SelfSimilarSpec,
};
use wgeo_core::solver::{
    reparametrize_constant_k, reparametrize_constant_speed, solve_additive, solve_multiplicative, Seed, SolverOptions,
};
use wgeo_core::variation::oracle::{run_suite, standard_battery};
use wgeo_core::{make_grid, Curve, DensityField, EnergyParams, Result, SpaceTimeGrid, VelocityField};

const V_FLOOR: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[0] / w[1]).collect()
}

fn in_band(ratios: &[f64]) -> bool {
    ratios.iter().all(|r| (3.2..=4.8).contains(r))
}

fn cosine_bump(grid: &SpaceTimeGrid, center: f64, radius: f64) -> DensityField {
    let v = grid.sample(|x| {
        let s = (x[0] - center) / radius;
        if s.abs() < 1.0 {
            (0.5 * std::f64::consts::PI * s).cos().powi(2)
        } else {
            0.0
        }
    });
    DensityField::normalized(v, grid).expect("bump has positive mass")
}

fn homothetic(n_x: usize, n_t: usize) -> Result<Curve> {
    let g = make_grid(1, &[-1.1], &[1.1], n_x, n_t)?;
    fixed_center_curve(&SelfSimilarSpec::fixed(1, PowerLawRadius::between(1.0, 0.6, 1), &[0.0]), &g)
}

fn ac1() -> Result<Outcome> {
    let g = make_grid(1, &[-1.0], &[1.0], 256, 2)?;
    let u = parabolic_profile(1, 1.0, &[0.0], 2.0, &g)?;
    let f = lq_energy(&u, 2.0, &g)?;
    let v = kinetic(&u, &VelocityField::from_fn(&g, |x, o| o[0] = x[0]), 2.0, &g)?;
    let (ef, ev) = ((f - 0.6).abs(), (v - 0.2).abs());
    outcome(ef < 1e-4 && ev < 1e-4, format!("lq_energy={f:.8} (err {ef:.2e}), kinetic={v:.8} (err {ev:.2e})"))
}

fn ac2() -> Result<Outcome> {
    let rows = run_suite(0, 10, 128)?;
    let worst = rows.iter().map(|r| r.relative_error()).fold(0.0, f64::max);
    outcome(worst < 1e-5, format!("{} comparisons over 10 cases, max relative error {worst:.2e}", rows.len()))
}

fn ac3() -> Result<Outcome> {
    let params = EnergyParams::quadratic();
    let levels = [(128, 64), (256, 128), (512, 256)];
    let trajectory = moving_ode_solve(0.8, 0.2, &[0.3], &[-0.15], 1, 2000)?;
    let mut fixed = (Vec::new(), Vec::new());
    let mut moving = (Vec::new(), Vec::new());
    for &(n_x, n_t) in &levels {
        let c = homothetic(n_x, n_t)?;
        fixed.0.push(weak_optimality_residual(&c, &standard_battery(c.grid(), 10, 0), &params, V_FLOOR)?);
        fixed.1.push(strong_residual(&c, &params, StrongForm::P2Q2, V_FLOOR)?.total);
        let g = make_grid(1, &[-1.1], &[1.1], n_x, n_t)?;
        let c = moving_curve(&trajectory, &g)?;
        moving.0.push(weak_optimality_residual(&c, &standard_battery(&g, 10, 0), &params, V_FLOOR)?);
        moving.1.push(strong_residual(&c, &params, StrongForm::P2Q2, V_FLOOR)?.total);
    }
    let all = [ratios(&fixed.0), ratios(&fixed.1), ratios(&moving.0), ratios(&moving.1)];
    let fmt = |r: &[f64]| r.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    outcome(
        all.iter().all(|r| in_band(r)),
        format!(
            "ratios fixed weak {} strong {}, moving weak {} strong {}",
            fmt(&all[0]),
            fmt(&all[1]),
            fmt(&all[2]),
            fmt(&all[3])
        ),
    )
}

fn ac4() -> Result<Outcome> {
    let tr = moving_ode_solve(1.0, 1.0, &[0.0], &[0.0], 1, 1000)?;
    let err = (0..=tr.n_steps()).map(|i| (tr.radius[i] - (1.0 + 2.0 * tr.time(i)).sqrt()).abs()).fold(0.0, f64::max);
    let drift = tr.invariant_drift();
    outcome(err < 1e-8 && drift < 1e-8, format!("max |R - sqrt(1+2t)| = {err:.2e}, invariant drift {drift:.2e}"))
}

fn ac5() -> Result<Outcome> {
    let g = make_grid(1, &[-1.0], &[1.0], 64, 32)?;
    let (a, b) = (cosine_bump(&g, -0.35, 0.4), cosine_bump(&g, 0.3, 0.55));
    let mut values = Vec::new();
    for seed in [Seed::LinearDensity, Seed::McCann] {
        let r = solve_additive(&a, &b, 2.0, &g, &SolverOptions { seed, ..Default::default() })?;
        values.push((r.objective, r.converged));
    }
    let spread = (values[0].0 - values[1].0).abs() / values[0].0.abs();
    let (a, b) = (cosine_bump(&g, -0.3, 0.4), cosine_bump(&g, 0.3, 0.4));
    let r = solve_additive(&a, &b, 2.0, &g, &SolverOptions { congestion_weight: 0.0, ..Default::default() })?;
    let shift = 0.36;
    let gap = (r.objective - shift).abs() / shift;
    outcome(
        values.iter().all(|v| v.1) && spread < 1e-4 && gap < 0.02,
        format!(
            "seeds {:.10}/{:.10} (relative gap {spread:.1e}); translation action {:.6} vs |e|^2 = {shift} ({:.2}%)",
            values[0].0,
            values[1].0,
            r.objective,
            100.0 * gap
        ),
    )
}

fn ac6() -> Result<Outcome> {
    let params = EnergyParams::quadratic();
    let exact = homothetic(64, 32)?;
    let g = exact.grid().clone();
    let battery = standard_battery(&g, 10, 0);
    let r = solve_multiplicative(exact.density(0), exact.density(31), &params, &g, &SolverOptions::default())?;
    let reference = weak_optimality_residual(&exact, &battery, &params, V_FLOOR)?;
    let achieved = weak_optimality_residual(&r.curve, &battery, &params, V_FLOOR)?;
    let candidate = action(&exact, &params)?.total;
    let stationary = achieved <= 5.0 * reference;
    let lower = r.report.total <= candidate * (1.0 + 1e-3);
    outcome(
        stationary && lower,
        format!(
            "stationarity {achieved:.3e} vs 5 x {reference:.3e} [{}]; action {:.7} vs candidate {candidate:.7} [{}]",
            if stationary { "ok" } else { "exceeds" },
            r.report.total,
            if lower { "ok" } else { "exceeds" }
        ),
    )
}

fn ac7() -> Result<Outcome> {
    let params = EnergyParams::quadratic();
    let exponent = params.p / (params.p - 1.0);
    let mut speed_errors = Vec::new();
    let mut k_errors = Vec::new();
    let mut worst_speed: f64 = 0.0;
    let mut worst_k: f64 = 0.0;
    for n_t in [33, 65, 129] {
        let g = make_grid(1, &[-1.5], &[1.5], 801, n_t)?;
        let spec = SelfSimilarSpec::fixed(1, PolynomialRadius { coeffs: vec![1.0, -0.2, -0.3] }, &[0.0]);
        let c = fixed_center_curve(&spec, &g)?;
        let before = action(&c, &params)?.total;
        let by_speed = reparametrize_constant_speed(&c, params.p)?;
        let by_k = reparametrize_constant_k(&c, &params)?;
        speed_errors.push((action(&by_speed, &params)?.total - before).abs() / before);
        k_errors.push((action(&by_k, &params)?.total - before).abs() / before);
        let (_, v) = slice_energies(&by_speed, params.p, params.q);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        worst_speed = v.iter().map(|v| (v - mean).abs() / mean).fold(worst_speed, f64::max);
        let coeffs = coefficients(&by_k, &params, V_FLOOR)?;
        let k = coeffs.k.iter().sum::<f64>() / coeffs.k.len() as f64;
        for (f, v) in coeffs.congestion.iter().zip(&coeffs.kinetic) {
            let predicted = (f.powf(params.alpha) / k).powf(exponent);
            worst_k = worst_k.max((v - predicted).abs() / predicted);
        }
    }
    let (rs, rk) = (ratios(&speed_errors), ratios(&k_errors));
    outcome(
        in_band(&rs) && in_band(&rk) && worst_speed < 0.02 && worst_k < 0.02,
        format!(
            "action error ratios speed {:.2}/{:.2}, K {:.2}/{:.2}; per-slice deviation speed {:.2}%, K {:.2}%",
            rs[0],
            rs[1],
            rk[0],
            rk[1],
            100.0 * worst_speed,
            100.0 * worst_k
        ),
    )
}

fn ac8() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pairs: Vec<(f64, f64)> = (0..100).map(|_| (rng.gen_range(0.01..10.0), rng.gen_range(0.01..10.0))).collect();
    let exact = homothetic(33, 12)?;
    let g = exact.grid().clone();
    let r = solve_multiplicative(
        exact.density(0),
        exact.density(11),
        &EnergyParams::quadratic(),
        &g,
        &SolverOptions::default(),
    )?;
    pairs.extend(r.report.congestion.iter().zip(&r.report.kinetic).map(|(f, v)| (*f, *v)));
    let worst = pairs
        .iter()
        .map(|&(f, v)| {
            let target = 2.0 * (f * v).sqrt();
            let (delta, min) = amgm_split(f, v);
            [delta * f + v / delta, min, amgm_golden_min(f, v), amgm_dyadic_min(f, v, 8)]
                .iter()
                .map(|x| (x - target).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    outcome(
        worst < 1e-10,
        format!("{} pairs ({} from solver slices), max error {worst:.2e}", pairs.len(), r.report.kinetic.len()),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("AC1", ac1, Duration::from_secs(1)),
        ("AC2", ac2, Duration::from_secs(10)),
        ("AC3", ac3, Duration::from_secs(60)),
        ("AC4", ac4, Duration::from_secs(1)),
        ("AC5", ac5, Duration::from_secs(120)),
        ("AC6", ac6, Duration::from_secs(300)),
        ("AC7", ac7, Duration::from_secs(30)),
        ("AC8", ac8, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed < limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let slow = if elapsed < limit { "" } else { " over limit" };
        println!(
            "{name} {} {detail} [{:.2}s of {}s{slow}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        failed += usize::from(!pass);
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
