//! Curve directories: `meta.json`, `u_%04d.csv`, `m_%04d.csv`.
//!
//! Values are written with 17 significant digits, so a save and load
//! reproduces every field bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};
use wgeo_core::{Curve, DensityField, EnergyParams, SpaceTimeGrid};

use crate::config::GridSpec;

const AXES: [&str; 2] = ["x", "y"];

fn coordinate_headers(dim: usize) -> Vec<String> {
    AXES[..dim].iter().map(|s| s.to_string()).collect()
}

fn component_headers(name: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![name.to_string()]
    } else {
        AXES[..dim].iter().map(|a| format!("{name}_{a}")).collect()
    }
}

fn write_table(path: &Path, headers: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = headers.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

pub fn slice_name(prefix: &str, k: usize) -> String {
    format!("{prefix}_{k:04}.csv")
}

/// Writes every slice of `curve` and `meta.json` into `dir`.
pub fn write_curve(dir: &Path, curve: &Curve, params: &EnergyParams, model: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let grid = curve.grid();
    let d = grid.dim();
    let mut x = vec![0.0; d];
    let u_headers: Vec<String> =
        coordinate_headers(d).into_iter().chain(["u".to_string()]).chain(component_headers("v", d)).collect();
    let m_headers: Vec<String> = coordinate_headers(d).into_iter().chain(component_headers("m", d)).collect();
    for k in 0..curve.n_slices() {
        let u = curve.density(k).values();
        let m = curve.momentum(k);
        let v = curve.velocity(k);
        let rows = (0..grid.n_nodes()).map(|j| {
            grid.point(j, &mut x);
            let mut row = x.clone();
            row.push(u[j]);
            row.extend_from_slice(v.at(j));
            row
        });
        write_table(&dir.join(slice_name("u", k)), &u_headers, rows)?;
        let rows = (0..grid.n_nodes()).map(|j| {
            grid.point(j, &mut x);
            let mut row = x.clone();
            row.extend_from_slice(&m[j * d..(j + 1) * d]);
            row
        });
        write_table(&dir.join(slice_name("m", k)), &m_headers, rows)?;
    }
    let meta = json!({
        "format": "wgeo-curve",
        "version": 1,
        "model": model,
        "grid": {
            "d": d,
            "lower": grid.lower(),
            "upper": grid.upper(),
            "n_x": grid.n_x(),
            "n_t": grid.n_t(),
        },
        "params": params_json(params),
    });
    write_json(&dir.join("meta.json"), &meta)
}

pub fn params_json(params: &EnergyParams) -> Value {
    json!({ "p": params.p, "q": params.q, "alpha": params.alpha, "beta": params.beta })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// A table read back from CSV, with the column index of each header.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let name = path.display();
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {name}"))?;
        let mut lines = text.lines();
        let headers: Vec<String> = lines
            .next()
            .ok_or_else(|| anyhow!("{name}: empty file"))?
            .split(',')
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != headers.len() {
                bail!("{name} row {row_no}: {} columns, expected {}", cells.len(), headers.len());
            }
            let row = cells
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        anyhow!("{name} row {row_no} column {} ({}): cannot parse '{}'", c + 1, headers[c], cell.trim())
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, header: &str, path: &Path) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == header)
            .ok_or_else(|| anyhow!("{}: missing column '{header}'", path.display()))
    }

    /// Checks the row count and the coordinate columns against `grid`.
    fn check_nodes(&self, grid: &SpaceTimeGrid, path: &Path) -> Result<()> {
        if self.rows.len() != grid.n_nodes() {
            bail!("{}: {} data rows, expected {}", path.display(), self.rows.len(), grid.n_nodes());
        }
        let d = grid.dim();
        let columns = coordinate_headers(d).iter().map(|h| self.column(h, path)).collect::<Result<Vec<_>>>()?;
        let mut x = vec![0.0; d];
        for (j, row) in self.rows.iter().enumerate() {
            grid.point(j, &mut x);
            for (a, &c) in columns.iter().enumerate() {
                let tol = 1e-9 * (grid.upper()[a] - grid.lower()[a]);
                if (row[c] - x[a]).abs() > tol {
                    bail!(
                        "{} row {} column {} ({}): coordinate {} does not match grid node {}",
                        path.display(),
                        j + 2,
                        c + 1,
                        AXES[a],
                        row[c],
                        x[a]
                    );
                }
            }
        }
        Ok(())
    }
}

/// Reads the `u` column of a slice file laid out on `grid`.
pub fn read_density(path: &Path, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    let table = Table::read(path)?;
    table.check_nodes(grid, path)?;
    let c = table.column("u", path)?;
    Ok(table.rows.iter().map(|r| r[c]).collect())
}

fn read_momentum(path: &Path, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    let table = Table::read(path)?;
    table.check_nodes(grid, path)?;
    let columns =
        component_headers("m", grid.dim()).iter().map(|h| table.column(h, path)).collect::<Result<Vec<_>>>()?;
    Ok(table.rows.iter().flat_map(|r| columns.iter().map(move |&c| r[c])).collect())
}

/// Curve stored in `dir` together with the metadata it was written with.
pub struct Stored {
    pub curve: Curve,
    pub params: EnergyParams,
    pub model: String,
}

pub fn read_curve(dir: &Path) -> Result<Stored> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let meta_path = dir.join("meta.json");
    if !meta_path.is_file() {
        bail!("no meta.json in {}", dir.display());
    }
    let meta: Value = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .with_context(|| format!("{}: invalid JSON", meta_path.display()))?;
    let field = |path: &[&str]| -> Result<&Value> {
        path.iter()
            .try_fold(&meta, |v, k| v.get(k))
            .ok_or_else(|| anyhow!("{}: missing '{}'", meta_path.display(), path.join(".")))
    };
    let number = |path: &[&str]| -> Result<f64> {
        field(path)?.as_f64().ok_or_else(|| anyhow!("{}: '{}' is not a number", meta_path.display(), path.join(".")))
    };
    let list = |path: &[&str]| -> Result<Vec<f64>> {
        field(path)?
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| anyhow!("{}: '{}' is not a list of numbers", meta_path.display(), path.join(".")))
    };
    let spec = GridSpec {
        dim: number(&["grid", "d"])? as usize,
        lower: list(&["grid", "lower"])?,
        upper: list(&["grid", "upper"])?,
        n_x: number(&["grid", "n_x"])? as usize,
        n_t: number(&["grid", "n_t"])? as usize,
    };
    let grid = spec.build()?;
    let params = EnergyParams::new(
        number(&["params", "p"])?,
        number(&["params", "q"])?,
        number(&["params", "alpha"])?,
        number(&["params", "beta"])?,
    )?;
    let model = field(&["model"])?.as_str().unwrap_or("unknown").to_string();
    let mut densities = Vec::with_capacity(grid.n_t());
    let mut momenta = Vec::with_capacity(grid.n_t());
    for k in 0..grid.n_t() {
        let path = dir.join(slice_name("u", k));
        let values = read_density(&path, &grid)?;
        densities.push(DensityField::new(values, &grid).with_context(|| format!("{}", path.display()))?);
        momenta.push(read_momentum(&dir.join(slice_name("m", k)), &grid)?);
    }
    Ok(Stored { curve: Curve::new(grid, densities, momenta)?, params, model })
}

/// Plain-text table with right-aligned columns.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([headers[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  "));
    };
    line(headers.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
