//! CSV export.
//!
//! Every table has a header row and writes floats with Rust's shortest
//! round-trip formatting, so `parse::<f64>()` recovers each value exactly.

use std::io::{Read, Write};

use crate::error::{invalid, Result};
use crate::oja::Trajectory;
use crate::sde::{MomentRow, OuPath, OuSpec};

/// A rectangular table of floats with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; panics if its width differs from the header.
    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        let mut buf = Vec::with_capacity(self.columns.len());
        for row in &self.rows {
            buf.clear();
            buf.extend(row.iter().map(|x| format_float(*x)));
            w.write_record(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut table = Table::new(r.headers()?.iter());
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| invalid("csv", format!("bad float {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != table.columns.len() {
                return Err(invalid("csv", "ragged row"));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

/// Columns `step, [v1 … vd,] sin2_angle`.
pub fn trajectory_table(traj: &Trajectory, with_coords: bool) -> Table {
    let d = traj.config.spec.dim();
    let mut cols = vec!["step".to_string()];
    if with_coords {
        cols.extend((1..=d).map(|i| format!("v{i}")));
    }
    cols.push("sin2_angle".into());
    let mut t = Table::new(cols);
    for j in 0..traj.len() {
        let mut row = vec![traj.times[j] as f64];
        if with_coords {
            row.extend_from_slice(traj.states[j].coords());
        }
        row.push(traj.sin2_angle[j]);
        t.push(row);
    }
    t
}

/// Columns `t, V1_sq … Vd_sq` from [`crate::ode::ode_curve`] rows.
pub fn ode_curve_table(rows: &[(f64, Vec<f64>)]) -> Table {
    let d = rows.first().map_or(0, |r| r.1.len());
    let mut t = Table::new(std::iter::once("t".to_string()).chain((1..=d).map(|i| format!("V{i}_sq"))));
    for (time, sq) in rows {
        let mut row = vec![*time];
        row.extend_from_slice(sq);
        t.push(row);
    }
    t
}

/// Columns `t, u<i>` for each OU coordinate `i ≠ k`.
pub fn ou_path_table(ou: &OuSpec, path: &OuPath) -> Table {
    let coords = ou.coordinates();
    let mut t = Table::new(std::iter::once("t".to_string()).chain(coords.iter().map(|i| format!("u{i}"))));
    for (time, u) in path.times.iter().zip(&path.states) {
        let mut row = vec![*time];
        row.extend_from_slice(u);
        t.push(row);
    }
    t
}

/// Columns `t` then `mean_i, var_i, closed_mean_i, closed_var_i` per coordinate.
pub fn moment_table(ou: &OuSpec, rows: &[MomentRow]) -> Table {
    let coords = ou.coordinates();
    let mut cols = vec!["t".to_string()];
    for i in &coords {
        cols.extend([
            format!("mean_{i}"),
            format!("var_{i}"),
            format!("closed_mean_{i}"),
            format!("closed_var_{i}"),
        ]);
    }
    let mut t = Table::new(cols);
    for r in rows {
        let mut row = vec![r.t];
        for c in 0..coords.len() {
            row.extend([r.mean[c], r.var[c], r.closed_mean[c], r.closed_var[c]]);
        }
        t.push(row);
    }
    t
}
