//! CSV readers and writers for series, fields and coefficients, plus the
//! `key=value` sidecar files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LoadField, SpaceTimeGrid};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, detail: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        detail,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Numeric rows of a CSV file with a header; every row must have `width` fields.
pub fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    if !path.exists() {
        return Err(Error::Config(format!("file not found: {}", path.display())));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != width {
            return Err(parse_err(path, format!("row {}: expected {width} columns, found {}", k + 2, rec.len())));
        }
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(path, format!("row {}: `{s}`: {e}", k + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `t,<a>,<b>` rows.
pub fn write_series(
    path: &Path,
    grid: &SpaceTimeGrid,
    header: [&str; 3],
    a: &[f64],
    b: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err(path))?;
    for (n, (x, y)) in a.iter().zip(b).enumerate() {
        w.write_record([fmt(grid.time(n)), fmt(*x), fmt(*y)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the end-slope series as `t,theta0,thetaL`.
pub fn write_measurements(path: &Path, grid: &SpaceTimeGrid, theta0: &[f64], theta_l: &[f64]) -> Result<()> {
    write_series(path, grid, ["t", "theta0", "thetaL"], theta0, theta_l)
}

/// Reads `t,theta0,thetaL`, checking the time column against `grid`.
pub fn read_measurements(path: &Path, grid: &SpaceTimeGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = read_rows(path, 3)?;
    if rows.len() != grid.n_times() {
        return Err(parse_err(
            path,
            format!("expected {} time instants, found {}", grid.n_times(), rows.len()),
        ));
    }
    let tol = 1e-9 * grid.final_time();
    for (n, r) in rows.iter().enumerate() {
        if (r[0] - grid.time(n)).abs() > tol {
            return Err(parse_err(path, format!("time {} does not match grid instant {}", r[0], grid.time(n))));
        }
    }
    Ok((rows.iter().map(|r| r[1]).collect(), rows.iter().map(|r| r[2]).collect()))
}

/// Writes a space–time field as `x,t,<name>` rows, time-major.
pub fn write_field(path: &Path, name: &str, field: &LoadField) -> Result<()> {
    let grid = field.grid();
    let xs = grid.nodes();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x", "t", name]).map_err(csv_err(path))?;
    for n in 0..grid.n_times() {
        let t = fmt(grid.time(n));
        for (i, &x) in xs.iter().enumerate() {
            w.write_record([fmt(x), t.clone(), fmt(field.get(i, n))])
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads `x,t,value` rows covering every grid node and instant (any order).
pub fn read_field(path: &Path, grid: &SpaceTimeGrid) -> Result<LoadField> {
    let rows = read_rows(path, 3)?;
    let (h, dt) = (grid.h(), grid.dt());
    let mut field = LoadField::zeros(grid);
    let mut seen = vec![false; grid.n_nodes() * grid.n_times()];
    for r in &rows {
        let (i, n) = ((r[0] / h).round(), (r[1] / dt).round());
        let on_grid = i >= 0.0
            && n >= 0.0
            && (r[0] - i * h).abs() <= 1e-9 * grid.length()
            && (r[1] - n * dt).abs() <= 1e-9 * grid.final_time()
            && (i as usize) < grid.n_nodes()
            && (n as usize) < grid.n_times();
        if !on_grid {
            return Err(parse_err(path, format!("point ({}, {}) is not a grid point", r[0], r[1])));
        }
        let (i, n) = (i as usize, n as usize);
        field.set(i, n, r[2]);
        seen[n * grid.n_nodes() + i] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let (n, i) = (k / grid.n_nodes(), k % grid.n_nodes());
        return Err(parse_err(path, format!("missing value at x = {}, t = {}", grid.node(i), grid.time(n))));
    }
    Ok(field)
}

/// Writes node samples as `x,value`.
pub fn write_profile(path: &Path, grid: &SpaceTimeGrid, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x", "value"]).map_err(csv_err(path))?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([fmt(grid.node(i)), fmt(*v)]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads `x,value` samples at the grid nodes.
pub fn read_profile(path: &Path, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    let rows = read_rows(path, 2)?;
    if rows.len() != grid.n_nodes() {
        return Err(parse_err(
            path,
            format!("expected {} nodes, found {}", grid.n_nodes(), rows.len()),
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        if (r[0] - grid.node(i)).abs() > 1e-9 * grid.length() {
            return Err(parse_err(path, format!("x = {} does not match node {}", r[0], grid.node(i))));
        }
    }
    Ok(rows.into_iter().map(|r| r[1]).collect())
}

/// Writes equal-length columns under `header`.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err(path))?;
    let rows = columns.first().map_or(0, |c| c.len());
    for n in 0..rows {
        w.write_record(columns.iter().map(|c| fmt(c[n]))).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `key=value` lines in the given order.
pub fn write_key_values(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut w = create(path)?;
    for (k, v) in pairs {
        writeln!(w, "{k}={v}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes plain text.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_exact() {
        let g = SpaceTimeGrid::new(2.0, 0.5, 4, 6).unwrap();
        let f = LoadField::from_fn(&g, |x, t| (x * 1.7).sin() / (1.0 + t) + 1e-300);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_field(&p, "value", &f).unwrap();
        assert_eq!(read_field(&p, &g).unwrap(), f);
    }

    #[test]
    fn series_and_profiles_round_trip() {
        let g = SpaceTimeGrid::new(1.0, 1.0, 4, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let a = vec![0.0, 0.1, -0.2, 1.0 / 3.0, 4.0];
        let b: Vec<f64> = a.iter().map(|x| -x).collect();
        write_measurements(&p, &g, &a, &b).unwrap();
        assert_eq!(read_measurements(&p, &g).unwrap(), (a.clone(), b));
        let q = dir.path().join("c.csv");
        write_profile(&q, &g, &a).unwrap();
        assert_eq!(read_profile(&q, &g).unwrap(), a);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("t,theta0,thetaL\n"));
    }

    #[test]
    fn malformed_inputs_are_reported_with_the_path() {
        let g = SpaceTimeGrid::new(1.0, 1.0, 4, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        match read_profile(&missing, &g) {
            Err(Error::Config(msg)) => assert!(msg.contains("nope.csv")),
            other => panic!("{other:?}"),
        }
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "x,value\n0,1\n0.25,abc\n").unwrap();
        assert!(matches!(read_profile(&p, &g), Err(Error::Parse { .. })));
        std::fs::write(&p, "x,t,value\n0,0,1\n").unwrap();
        assert!(matches!(read_field(&p, &g), Err(Error::Parse { .. })));
    }
}
