//! CSV and JSON emitters. Numbers are serialized with 17 significant
//! digits so identical invocations produce byte-identical files and
//! every double round-trips.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::matrix::DenseMatrix;
use crate::solver::{ConvergenceRow, TransientRun};

/// 17 significant digits; round-trip exact for f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn vector_to_csv(v: &[f64]) -> String {
    let mut out = String::new();
    for &x in v {
        out.push_str(&fmt_f64(x));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    write_text(path, &matrix_to_csv(m))
}

pub fn write_vector_csv(path: &Path, v: &[f64]) -> Result<()> {
    write_text(path, &vector_to_csv(v))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    write_text(path, &(text + "\n"))
}

/// Trajectory CSV: `t, v_0..v_n, energy` per step.
pub fn trajectory_to_csv(run: &TransientRun) -> String {
    let np = run.states.first().map_or(0, |s| s.len());
    let mut out = String::from("t");
    for i in 0..np {
        out.push_str(&format!(",v{i}"));
    }
    out.push_str(",energy\n");
    for k in 0..run.times.len() {
        out.push_str(&fmt_f64(run.times[k]));
        for v in &run.states[k] {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push(',');
        out.push_str(&fmt_f64(run.energy[k]));
        out.push('\n');
    }
    out
}

/// Convergence CSV: `n, h, error, rate` per grid.
pub fn convergence_to_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("n,h,error,rate\n");
    for row in rows {
        let rate = row.rate.map_or(String::from(""), fmt_f64);
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.n,
            fmt_f64(row.h),
            fmt_f64(row.error),
            rate
        ));
    }
    out
}

/// Discrete vs continuous Green's function sample file:
/// `x_i, y_j, kinv_ij, g_continuous`.
pub fn green_compare_csv(
    nodes: &[f64],
    kinv: &DenseMatrix,
    continuous: impl Fn(f64, f64) -> f64,
) -> String {
    let mut out = String::from("x,y,kinv,continuous\n");
    for i in 0..kinv.rows() {
        for j in 0..kinv.cols() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(nodes[i]),
                fmt_f64(nodes[j]),
                fmt_f64(kinv[(i, j)]),
                fmt_f64(continuous(nodes[i], nodes[j]))
            ));
        }
    }
    out
}

/// Aligned text table for the capacity report.
pub fn table1_to_text(rows: &[crate::borrowing::Table1Row]) -> String {
    let mut out = format!(
        "{:<12} {:>6} {:>22} {:>22}\n",
        "variant", "n", "h*qt_T", "1/gamma"
    );
    for row in rows {
        let inv_gamma = row
            .inv_gamma
            .map_or(String::from("--"), |g| format!("{g:.9}"));
        let mark = if row.external { " (external)" } else { "" };
        out.push_str(&format!(
            "{:<12} {:>6} {:>22.15} {:>22}{}\n",
            row.variant, row.n, row.h_qt, inv_gamma, mark
        ));
    }
    out
}

pub fn table1_to_csv(rows: &[crate::borrowing::Table1Row]) -> String {
    let mut out = String::from("variant,n,h_qt,inv_gamma,external\n");
    for row in rows {
        let inv_gamma = row.inv_gamma.map_or(String::from(""), fmt_f64);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.variant,
            row.n,
            fmt_f64(row.h_qt),
            inv_gamma,
            row.external
        ));
    }
    out
}
