//! The four subcommands.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use serde_json::{json, Map, Value};
use wgeo_core::energy::action;
use wgeo_core::residual::{coefficients, strong_residual, StrongForm};
use wgeo_core::selfsimilar::{fixed_center_curve, moving_curve, moving_invariant};
use wgeo_core::solver::{solve_additive, solve_multiplicative, SolveResult};
use wgeo_core::transport::continuity_residual;
use wgeo_core::variation::gateaux_action;
use wgeo_core::variation::oracle::{run_suite, standard_battery};
use wgeo_core::{Curve, EnergyParams, SpaceTimeGrid};

use crate::config::{Family, GridSpec, ModelKind, RunConfig, VerifyConfig};
use crate::persist::{format_table, params_json, read_curve, write_curve, write_json};
use crate::plot::{line_chart, Series};

pub const OK: u8 = 0;
pub const NOT_CONVERGED: u8 = 2;
pub const VERIFICATION_FAILED: u8 = 3;

/// JSON builder that turns non-finite numbers into `null` and remembers where.
#[derive(Default)]
struct Json {
    warnings: Vec<String>,
}

impl Json {
    fn num(&mut self, key: &str, x: f64) -> Value {
        if x.is_finite() {
            json!(x)
        } else {
            self.warnings.push(format!("{key}: non-finite value {x} written as null"));
            Value::Null
        }
    }

    fn nums(&mut self, key: &str, xs: &[f64]) -> Value {
        Value::Array(xs.iter().enumerate().map(|(i, x)| self.num(&format!("{key}[{i}]"), *x)).collect())
    }

    /// `null` with a warning when `value` failed.
    fn fallible(&mut self, key: &str, value: Result<Value>) -> Value {
        value.unwrap_or_else(|e| {
            self.warnings.push(format!("{key}: {e}"));
            Value::Null
        })
    }

    fn finish(self, mut summary: Map<String, Value>) -> Value {
        for w in &self.warnings {
            eprintln!("warning: {w}");
        }
        summary.insert("warnings".into(), json!(self.warnings));
        Value::Object(summary)
    }
}

/// Residual norms and energies of a curve.
struct Diagnostics {
    continuity: f64,
    stationarity: Result<Vec<f64>>,
    strong: Vec<(StrongForm, Result<f64>)>,
}

impl Diagnostics {
    fn compute(curve: &Curve, params: &EnergyParams, verify: &VerifyConfig) -> Self {
        let battery = standard_battery(curve.grid(), verify.battery, verify.battery_seed);
        let stationarity = battery
            .iter()
            .map(|xi| gateaux_action(curve, xi, params, verify.v_floor).map_err(Into::into))
            .collect::<Result<Vec<f64>>>();
        let strong = StrongForm::ALL
            .into_iter()
            .map(|form| {
                (form, strong_residual(curve, params, form, verify.v_floor).map(|r| r.total).map_err(Into::into))
            })
            .collect();
        Self { continuity: continuity_residual(curve), stationarity, strong }
    }

    fn weak(&self) -> Option<f64> {
        self.stationarity.as_ref().ok().map(|v| v.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
    }

    fn strong_of(&self, form: StrongForm) -> Option<f64> {
        self.strong.iter().find(|(f, _)| *f == form).and_then(|(_, r)| r.as_ref().ok().copied())
    }

    fn write(&self, out: &mut Map<String, Value>, json: &mut Json, verify: &VerifyConfig) {
        out.insert("continuity_residual".into(), json.num("continuity_residual", self.continuity));
        let battery = match &self.stationarity {
            Ok(values) => json!({
                "size": verify.battery,
                "seed": verify.battery_seed,
                "values": json.nums("stationarity.values", values),
                "max": json.num("stationarity.max", self.weak().unwrap_or(f64::NAN)),
            }),
            Err(e) => {
                json.warnings.push(format!("stationarity: {e}"));
                Value::Null
            }
        };
        out.insert("stationarity".into(), battery);
        let mut strong = Map::new();
        for (form, r) in &self.strong {
            let v = match r {
                Ok(x) => json.num(&format!("strong_residual.{form}"), *x),
                Err(_) => Value::Null,
            };
            strong.insert(form.name().into(), v);
        }
        out.insert("strong_residual".into(), Value::Object(strong));
    }
}

fn grid_json(grid: &SpaceTimeGrid) -> Value {
    json!({ "d": grid.dim(), "lower": grid.lower(), "upper": grid.upper(), "n_x": grid.n_x(), "n_t": grid.n_t() })
}

/// Energies, coefficients and residuals shared by every summary.
fn curve_summary(
    command: &str,
    curve: &Curve,
    params: &EnergyParams,
    verify: &VerifyConfig,
    json: &mut Json,
) -> (Map<String, Value>, Diagnostics) {
    let grid = curve.grid();
    let mut out = Map::new();
    out.insert("command".into(), json!(command));
    out.insert("grid".into(), grid_json(grid));
    out.insert("params".into(), params_json(params));
    let times: Vec<f64> = (0..grid.n_t()).map(|k| grid.time(k)).collect();
    out.insert("t".into(), json!(times));
    match action(curve, params) {
        Ok(report) => {
            out.insert("action".into(), json.num("action", report.total));
            out.insert("F".into(), json.nums("F", &report.congestion));
            out.insert("V".into(), json.nums("V", &report.kinetic));
            out.insert("speed".into(), json.nums("speed", &report.speed));
        }
        Err(e) => {
            json.warnings.push(format!("action: {e}"));
            for key in ["action", "F", "V", "speed"] {
                out.insert(key.into(), Value::Null);
            }
        }
    }
    let coeffs = coefficients(curve, params, verify.v_floor).map_err(anyhow::Error::from);
    let (h, k) = match coeffs {
        Ok(c) => (json.nums("H", &c.h), json.nums("K", &c.k)),
        Err(e) => (json.fallible("H, K", Err(e)), Value::Null),
    };
    out.insert("H".into(), h);
    out.insert("K".into(), k);
    let diagnostics = Diagnostics::compute(curve, params, verify);
    diagnostics.write(&mut out, json, verify);
    (out, diagnostics)
}

fn write_plots(dir: &Path, curve: &Curve, summary: &Map<String, Value>) -> Result<()> {
    let grid = curve.grid();
    let n_x = grid.n_x();
    // d = 2 shows the row through the middle of the box
    let offset = if grid.dim() == 2 { (grid.n_x() / 2) * grid.stride(1) } else { 0 };
    let xs: Vec<f64> = (0..n_x).map(|i| grid.coord(offset + i, 0)).collect();
    let nt = grid.n_t();
    let picks: Vec<usize> = {
        let mut p: Vec<usize> = (0..5).map(|i| i * (nt - 1) / 4).collect();
        p.dedup();
        p
    };
    let snapshots: Vec<Series> = picks
        .iter()
        .map(|&k| Series {
            label: format!("t = {:.3}", grid.time(k)),
            x: xs.clone(),
            y: (0..n_x).map(|i| curve.density(k).values()[offset + i]).collect(),
        })
        .collect();
    std::fs::write(dir.join("snapshots.svg"), line_chart("density snapshots", "x", &snapshots))?;
    let times: Vec<f64> = (0..nt).map(|k| grid.time(k)).collect();
    let trace = |key: &str| -> Option<Series> {
        let values = summary.get(key)?.as_array()?;
        Some(Series {
            label: key.into(),
            x: times.clone(),
            y: values.iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect(),
        })
    };
    let traces: Vec<Series> = ["F", "V"].into_iter().filter_map(trace).collect();
    std::fs::write(dir.join("energies.svg"), line_chart("F(t) and V(t)", "t", &traces))?;
    Ok(())
}

fn output_dir(config: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("wgeo-out"))
}

fn solve_summary(result: &SolveResult, json: &mut Json, out: &mut Map<String, Value>) {
    out.insert("objective".into(), json.num("objective", result.objective));
    out.insert("seed_objective".into(), json.num("seed_objective", result.seed_objective));
    out.insert("converged".into(), json!(result.converged));
    out.insert("iterations".into(), json!(result.iterations));
    out.insert("constraint_residual".into(), json.num("constraint_residual", result.constraint_residual));
    let history: Vec<Value> = result
        .history
        .iter()
        .map(|r| {
            json!({
                "iteration": r.iteration,
                "barrier": json.num("history.barrier", r.barrier),
                "objective": json.num("history.objective", r.objective),
                "merit": json.num("history.merit", r.merit),
                "step": json.num("history.step", r.step),
                "decrement": json.num("history.decrement", r.decrement),
                "stationarity": r.stationarity.map(|s| json.num("history.stationarity", s)),
            })
        })
        .collect();
    out.insert("history".into(), Value::Array(history));
}

pub fn solve(config_path: &Path, out: Option<PathBuf>) -> Result<u8> {
    let config = RunConfig::load(config_path)?;
    let grid = config.grid()?.build()?;
    let start = config.start.as_ref().ok_or_else(|| anyhow!("missing [start] endpoint keys"))?;
    let end = config.end.as_ref().ok_or_else(|| anyhow!("missing [end] endpoint keys"))?;
    let (u0, u1) = (start.density(&grid)?, end.density(&grid)?);
    let (result, model, params) = match config.model {
        ModelKind::Multiplicative => {
            (solve_multiplicative(&u0, &u1, &config.params, &grid, &config.solver)?, "multiplicative", config.params)
        }
        ModelKind::Additive => {
            (solve_additive(&u0, &u1, config.params.q, &grid, &config.solver)?, "additive", config.params)
        }
    };
    let dir = output_dir(&config, out);
    write_curve(&dir, &result.curve, &params, model)?;
    let mut json = Json::default();
    let (mut summary, _) = curve_summary("solve", &result.curve, &params, &config.verify, &mut json);
    summary.insert("model".into(), json!(model));
    if config.model == ModelKind::Additive {
        summary.insert("congestion_weight".into(), json.num("congestion_weight", config.solver.congestion_weight));
        summary.insert("additive_action".into(), json.num("additive_action", result.report.total));
    }
    solve_summary(&result, &mut json, &mut summary);
    if config.svg {
        write_plots(&dir, &result.curve, &summary)?;
    }
    write_json(&dir.join("summary.json"), &json.finish(summary))?;
    println!(
        "{model} solve: objective {:.10e}, {} iterations, {}; output in {}",
        result.objective,
        result.iterations,
        if result.converged { "converged" } else { "iteration limit reached" },
        dir.display()
    );
    Ok(if result.converged { OK } else { NOT_CONVERGED })
}

/// Residual norms of the configured self-similar curve on `spec`.
fn verification_level(config: &RunConfig, spec: &GridSpec, json: &mut Json) -> Result<Value> {
    let (curve, _) = self_similar_curve(config, &spec.build()?)?;
    let d = Diagnostics::compute(&curve, &config.params, &config.verify);
    let mut strong = Map::new();
    for (form, r) in &d.strong {
        if let Ok(x) = r {
            strong.insert(form.name().into(), json.num(&format!("verification.strong.{form}"), *x));
        }
    }
    Ok(json!({
        "n_x": spec.n_x,
        "n_t": spec.n_t,
        "continuity": json.num("verification.continuity", d.continuity),
        "weak": d.weak().map(|w| json.num("verification.weak", w)),
        "strong": strong,
    }))
}

/// Curve and trajectory rows `(t, R, R', center..., C(t) - C(0))`.
fn self_similar_curve(config: &RunConfig, grid: &SpaceTimeGrid) -> Result<(Curve, Vec<Vec<f64>>)> {
    let ss = config.selfsimilar.as_ref().ok_or_else(|| anyhow!("missing [selfsimilar] keys"))?;
    let d = grid.dim();
    match ss.family {
        Family::Fixed => {
            let spec = ss.fixed_spec(d)?;
            let curve = fixed_center_curve(&spec, grid)?;
            let c0 = spec.invariant(0.0);
            let rows = (0..grid.n_t())
                .map(|k| {
                    let t = grid.time(k);
                    let mut row = vec![t, spec.radius.radius(t), spec.radius.rate(t)];
                    row.extend(spec.center_at(t));
                    row.push(spec.invariant(t) - c0);
                    row
                })
                .collect();
            Ok((curve, rows))
        }
        Family::Moving => {
            let tr = ss.trajectory(d)?;
            let curve = moving_curve(&tr, grid)?;
            let rows = (0..=tr.n_steps())
                .map(|i| {
                    let t = tr.time(i);
                    let mut row = vec![t, tr.radius[i], tr.rate[i]];
                    row.extend(tr.center_at(t));
                    row.push(moving_invariant(tr.radius[i], tr.rate[i], &tr.drift, d) - tr.invariant);
                    row
                })
                .collect();
            Ok((curve, rows))
        }
    }
}

pub fn selfsimilar(config_path: &Path, out: Option<PathBuf>) -> Result<u8> {
    let config = RunConfig::load(config_path)?;
    let spec = config.grid()?.clone();
    let grid = spec.build()?;
    let (curve, rows) = self_similar_curve(&config, &grid)?;
    let dir = output_dir(&config, out);
    let family = match config.selfsimilar.as_ref().map(|s| &s.family) {
        Some(Family::Moving) => "moving",
        _ => "fixed",
    };
    write_curve(&dir, &curve, &config.params, &format!("selfsimilar-{family}"))?;
    let d = grid.dim();
    let mut header = vec!["t".to_string(), "R".into(), "R_rate".into()];
    header.extend(["x", "y"][..d].iter().map(|a| format!("center_{a}")));
    header.push("invariant_drift".into());
    let mut text = header.join(",") + "\n";
    for row in &rows {
        text += &row.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",");
        text.push('\n');
    }
    std::fs::write(dir.join("trajectory.csv"), text)?;
    let mut json = Json::default();
    let (mut summary, _) = curve_summary("selfsimilar", &curve, &config.params, &config.verify, &mut json);
    summary.insert("family".into(), json!(family));
    let max_drift = rows.iter().map(|r| r[r.len() - 1].abs()).fold(0.0, f64::max);
    summary.insert("invariant_drift".into(), json.num("invariant_drift", max_drift));
    let refinements = config.selfsimilar.as_ref().map_or(0, |s| s.refinements);
    let levels = (0..=refinements)
        .map(|level| verification_level(&config, &spec.refined(level), &mut json))
        .collect::<Result<Vec<_>>>()?;
    let ratio = |a: &Value, b: &Value| -> Value {
        match (a.as_f64(), b.as_f64()) {
            (Some(a), Some(b)) if b > 0.0 => json!(a / b),
            _ => Value::Null,
        }
    };
    let ratios: Vec<Value> = levels
        .windows(2)
        .map(|w| {
            let mut strong = Map::new();
            if let (Some(a), Some(b)) = (w[0]["strong"].as_object(), w[1]["strong"].as_object()) {
                for (form, x) in a {
                    if let Some(y) = b.get(form) {
                        strong.insert(form.clone(), ratio(x, y));
                    }
                }
            }
            json!({
                "continuity": ratio(&w[0]["continuity"], &w[1]["continuity"]),
                "weak": ratio(&w[0]["weak"], &w[1]["weak"]),
                "strong": strong,
            })
        })
        .collect();
    summary.insert("verification".into(), json!({ "levels": levels, "ratios": ratios }));
    if config.svg {
        write_plots(&dir, &curve, &summary)?;
    }
    write_json(&dir.join("summary.json"), &json.finish(summary))?;
    println!("{family} self-similar curve on {}x{} written to {}", spec.n_x, spec.n_t, dir.display());
    Ok(OK)
}

pub fn verify(curve_dir: &Path, config_path: &Path) -> Result<u8> {
    let config = RunConfig::load(config_path)?;
    let stored = read_curve(curve_dir)?;
    let params = if config.params_given { config.params } else { stored.params };
    let v = &config.verify;
    let grid = stored.curve.grid();
    println!(
        "{} curve, {}x{} grid, p = {}, q = {}, alpha = {}, beta = {}",
        stored.model,
        grid.n_x(),
        grid.n_t(),
        params.p,
        params.q,
        params.alpha,
        params.beta
    );
    let d = Diagnostics::compute(&stored.curve, &params, v);
    let cell = |x: Option<f64>| x.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
    let verdict = |x: Option<f64>, limit: f64| if x.is_some_and(|x| x <= limit) { "ok" } else { "FAIL" };
    let weak = d.weak();
    let strong = d.strong_of(v.form);
    let mut rows = vec![
        vec![
            "continuity".into(),
            cell(Some(d.continuity)),
            format!("{:.1e}", v.continuity),
            verdict(Some(d.continuity), v.continuity).into(),
        ],
        vec!["weak (battery max)".into(), cell(weak), format!("{:.1e}", v.weak), verdict(weak, v.weak).into()],
        vec![format!("strong {}", v.form), cell(strong), format!("{:.1e}", v.strong), verdict(strong, v.strong).into()],
    ];
    for (form, r) in &d.strong {
        if *form != v.form {
            rows.push(vec![format!("strong {form}"), cell(r.as_ref().ok().copied()), "-".into(), "-".into()]);
        }
    }
    print!("{}", format_table(&["residual", "value", "threshold", "status"], &rows));
    match &d.stationarity {
        Ok(values) => {
            let rows: Vec<Vec<String>> =
                values.iter().enumerate().map(|(i, x)| vec![i.to_string(), format!("{x:.6e}")]).collect();
            print!("{}", format_table(&["field", "gateaux_action"], &rows));
        }
        Err(e) => println!("stationarity battery unavailable: {e}"),
    }
    let pass =
        d.continuity <= v.continuity && weak.is_some_and(|w| w <= v.weak) && strong.is_some_and(|s| s <= v.strong);
    println!("{}", if pass { "verification passed" } else { "verification failed" });
    Ok(if pass { OK } else { VERIFICATION_FAILED })
}

pub fn varcheck(config_path: Option<&Path>, seed: Option<u64>) -> Result<u8> {
    let mut config = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse("", Path::new("."))?,
    };
    if let Some(s) = seed {
        config.varcheck.seed = s;
    }
    let vc = &config.varcheck;
    let comparisons = run_suite(vc.seed, vc.count, vc.n_x)?;
    let rows: Vec<Vec<String>> = comparisons
        .iter()
        .map(|c| {
            vec![
                c.case.to_string(),
                c.quantity.to_string(),
                format!("{:.12e}", c.analytic),
                format!("{:.12e}", c.finite_difference),
                format!("{:.3e}", c.relative_error()),
            ]
        })
        .collect();
    print!("{}", format_table(&["case", "quantity", "analytic", "finite difference", "relative error"], &rows));
    let worst = comparisons.iter().map(|c| c.relative_error()).fold(0.0, f64::max);
    let pass = worst < vc.tolerance;
    println!(
        "seed {}, {} cases, n_x = {}: max relative error {worst:.3e} {} tolerance {:.1e}",
        vc.seed,
        vc.count,
        vc.n_x,
        if pass { "within" } else { "exceeds" },
        vc.tolerance
    );
    Ok(if pass { OK } else { VERIFICATION_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_numbers_become_null_with_a_warning() {
        let mut json = Json::default();
        let v = json.nums("F", &[1.0, f64::NAN, f64::INFINITY]);
        assert_eq!(v, json!([1.0, null, null]));
        assert_eq!(json.warnings.len(), 2);
        assert!(json.warnings[0].starts_with("F[1]"));
        let mut summary = Map::new();
        summary.insert("F".into(), v);
        let out = json.finish(summary);
        assert_eq!(out["warnings"].as_array().unwrap().len(), 2);
        let text = serde_json::to_string(&out["F"]).unwrap();
        assert_eq!(text, "[1.0,null,null]");
    }
}
