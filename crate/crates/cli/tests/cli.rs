use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgeo")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn shipped(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn config(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn solve_writes_curve_summary_and_plots() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "run");
    let run = wgeo(&["solve", "--config", &shipped("homothetic.cfg"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let s = summary(&out);
    for key in ["action", "F", "V", "H", "K", "continuity_residual", "stationarity"] {
        assert!(!s[key].is_null(), "{key}");
    }
    assert_eq!(s["F"].as_array().unwrap().len(), 32);
    assert!(s["converged"].as_bool().unwrap());
    for file in ["u_0000.csv", "u_0031.csv", "m_0031.csv", "meta.json", "snapshots.svg", "energies.svg"] {
        assert!(out.join(file).is_file(), "{file}");
    }
    let header = fs::read_to_string(out.join("u_0000.csv")).unwrap();
    assert!(header.starts_with("x,u,v\n"));

    let again = path(&tmp, "again");
    assert_eq!(code(&wgeo(&["solve", "--config", &shipped("homothetic.cfg"), "--out", again.to_str().unwrap()])), 0);
    for k in [0, 7, 31] {
        for prefix in ["u", "m"] {
            let name = format!("{prefix}_{k:04}.csv");
            assert_eq!(fs::read(out.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn additive_translation_recovers_the_squared_distance() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "run");
    let run = wgeo(&["solve", "--config", &shipped("translation.cfg"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let objective = summary(&out)["objective"].as_f64().unwrap();
    assert!((objective - 0.36).abs() < 0.02 * 0.36, "{objective}");
}

#[test]
fn iteration_limit_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let text =
        fs::read_to_string(shipped("homothetic.cfg")).unwrap() + "solver.max_iterations = 3\noutput.svg = false\n";
    let cfg = config(&tmp, "short.cfg", &text);
    let out = path(&tmp, "run");
    let run = wgeo(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    assert!(!out.join("snapshots.svg").exists());
    assert!(!summary(&out)["converged"].as_bool().unwrap());
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(shipped("homothetic.cfg")).unwrap().replace("params.beta = 0.5", "params.beta = 0.3");
    let run = wgeo(&["solve", "--config", &config(&tmp, "beta.cfg", &text)]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("beta >= 1/p"), "{}", stderr(&run));

    let run = wgeo(&["solve", "--config", &config(&tmp, "typo.cfg", "grid.nx = 3\n")]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("unknown key 'grid.nx'"));

    let run = wgeo(&["solve", "--config", &path(&tmp, "absent.cfg").display().to_string()]);
    assert_eq!(code(&run), 1);
    assert_eq!(code(&wgeo(&[])), 1);
    assert_eq!(code(&wgeo(&["solve"])), 1);
    assert_eq!(code(&wgeo(&["--help"])), 0);
}

#[test]
fn fixed_family_records_second_order_ratios() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "fixed");
    let run = wgeo(&["selfsimilar", "--config", &shipped("fixed.cfg"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let s = summary(&out);
    let ratios = s["verification"]["ratios"].as_array().unwrap();
    assert_eq!(ratios.len(), 2);
    for r in ratios {
        for value in [&r["continuity"], &r["weak"], &r["strong"]["conservative"]] {
            let x = value.as_f64().unwrap();
            assert!((3.2..4.8).contains(&x), "{x}");
        }
    }
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(text.starts_with("t,R,R_rate,center_x,invariant_drift\n"));
}

#[test]
fn moving_family_follows_the_square_root_law() {
    let tmp = TempDir::new().unwrap();
    let out = path(&tmp, "moving");
    let run = wgeo(&["selfsimilar", "--config", &shipped("moving.cfg"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 1001);
    for row in &rows {
        assert!((row[1] - (1.0 + 2.0 * row[0]).sqrt()).abs() < 1e-8);
        assert!(row[4].abs() < 1e-8);
    }

    let text = fs::read_to_string(shipped("moving.cfg")).unwrap().replace("selfsimilar.r0 = 1\n", "");
    let run = wgeo(&["selfsimilar", "--config", &config(&tmp, "no_r0.cfg", &text)]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("selfsimilar.r0"), "{}", stderr(&run));
}

fn fixed_curve_at_256(tmp: &TempDir) -> PathBuf {
    let text = fs::read_to_string(shipped("fixed.cfg"))
        .unwrap()
        .replace("grid.n_x = 128", "grid.n_x = 256")
        .replace("selfsimilar.refinements = 2", "output.svg = false");
    let out = path(tmp, "fixed256");
    let run = wgeo(&["selfsimilar", "--config", &config(tmp, "fixed256.cfg", &text), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    out
}

#[test]
fn verify_accepts_self_similar_and_rejects_corruption() {
    let tmp = TempDir::new().unwrap();
    let dir = fixed_curve_at_256(&tmp);
    let empty = config(&tmp, "empty.cfg", "# defaults\n");
    let run = wgeo(&["verify", "--curve", dir.to_str().unwrap(), "--config", &empty]);
    assert_eq!(code(&run), 0, "{}", stdout(&run));
    assert!(stdout(&run).contains("gateaux_action"));

    let file = dir.join("m_0020.csv");
    let text = fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    let mut corrupted = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let (x, m) = line.split_once(',').unwrap();
        corrupted += &format!("{x},{:.16e}\n", 1.5 * m.parse::<f64>().unwrap());
    }
    fs::write(&file, corrupted).unwrap();
    let run = wgeo(&["verify", "--curve", dir.to_str().unwrap(), "--config", &empty]);
    assert_eq!(code(&run), 3, "{}", stdout(&run));

    let strict = config(&tmp, "strict.cfg", "verify.weak = 1e-30\n");
    let run = wgeo(&["verify", "--curve", fixed_curve_at_256(&tmp).to_str().unwrap(), "--config", &strict]);
    assert_eq!(code(&run), 3);
}

#[test]
fn verify_reports_unreadable_curves() {
    let tmp = TempDir::new().unwrap();
    let empty = config(&tmp, "empty.cfg", "");
    fs::create_dir(path(&tmp, "nothing")).unwrap();
    let run = wgeo(&["verify", "--curve", path(&tmp, "nothing").to_str().unwrap(), "--config", &empty]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("meta.json"));

    let dir = fixed_curve_at_256(&tmp);
    let file = dir.join("u_0003.csv");
    let text = fs::read_to_string(&file).unwrap();
    let broken: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 4 { l.replacen(',', ",oops", 1) } else { l.to_string() })
        .collect();
    fs::write(&file, broken.join("\n")).unwrap();
    let run = wgeo(&["verify", "--curve", dir.to_str().unwrap(), "--config", &empty]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("u_0003.csv row 5 column 2 (u)"), "{}", stderr(&run));
}

#[test]
fn varcheck_thresholds_and_determinism() {
    let first = wgeo(&["varcheck", "--seed", "3"]);
    assert_eq!(code(&first), 0, "{}", stdout(&first));
    assert!(stdout(&first).contains("dF_at_zero"));
    let second = wgeo(&["varcheck", "--seed", "3"]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(code(&wgeo(&["varcheck"])), 0);

    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "tight.cfg", "varcheck.tolerance = 1e-16\nvarcheck.count = 2\n");
    let run = wgeo(&["varcheck", "--config", &cfg]);
    assert_eq!(code(&run), 3);
}
