//! CSV writers. Header row, `.` decimal point, shortest round-trip float
//! formatting, so identical values always produce identical bytes.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::fluct::SdePath;
use crate::jump::Trajectory;
use crate::ode::{EquilibriumProfile, OdeSolution};
use crate::verify::ExperimentReport;

fn state_header(n: usize) -> String {
    let mut h = String::from("t");
    for i in 1..=n {
        h.push_str(&format!(",E{i}"));
    }
    h
}

fn write_rows<W: Write>(w: &mut W, header: &str, rows: impl Iterator<Item = (f64, Vec<f64>)>) -> io::Result<()> {
    writeln!(w, "{header}")?;
    for (t, s) in rows {
        write!(w, "{t}")?;
        for v in s {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `t,E1..EN`: the initial state and the state after every logged event,
/// or the snapshots when the event log was dropped.
pub fn write_trajectory<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    let n = traj.initial_state.len();
    let header = state_header(n);
    if traj.log_complete {
        let first = std::iter::once((0.0, traj.initial_state.as_slice().to_vec()));
        let rest = traj.events.iter().map(|e| (e.time, e.state_after.as_slice().to_vec()));
        let mut rows: Vec<(f64, Vec<f64>)> = first.chain(rest).collect();
        rows.push((traj.t_end, traj.final_state.as_slice().to_vec()));
        write_rows(w, &header, rows.into_iter())
    } else {
        let rows = traj.snapshots.iter().map(|(t, s)| (*t, s.as_slice().to_vec()));
        write_rows(w, &header, rows)
    }
}

/// `t,clock,flux`.
pub fn write_events<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "t,clock,flux")?;
    for e in &traj.events {
        writeln!(w, "{},{},{}", e.time, e.clock_index, e.flux)?;
    }
    Ok(())
}

/// `t,E1..EN` on the ODE grid.
pub fn write_ode<W: Write>(w: &mut W, sol: &OdeSolution) -> io::Result<()> {
    let n = sol.states.first().map_or(0, Vec::len);
    let rows = sol.times.iter().copied().zip(sol.states.iter().cloned());
    write_rows(w, &state_header(n), rows)
}

/// `t,E1..EN` (or `t,G1..GN` for fluctuation paths, same layout).
pub fn write_sde_path<W: Write>(w: &mut W, path: &SdePath) -> io::Result<()> {
    let n = path.states.first().map_or(0, Vec::len);
    let rows = path.times.iter().copied().zip(path.states.iter().cloned());
    write_rows(w, &state_header(n), rows)
}

/// `i,E_star` with 1-based cell index.
pub fn write_equilibrium<W: Write>(w: &mut W, prof: &EquilibriumProfile) -> io::Result<()> {
    writeln!(w, "i,E_star")?;
    for (i, v) in prof.e_star.as_slice().iter().enumerate() {
        writeln!(w, "{},{v}", i + 1)?;
    }
    Ok(())
}

/// `i,j,value` for every entry, 1-based.
pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(w, "i,j,value")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            writeln!(w, "{},{},{}", i + 1, j + 1, m[(i, j)])?;
        }
    }
    Ok(())
}

/// Ensemble samples, one row per path.
pub fn write_samples<W: Write>(w: &mut W, samples: &[Vec<f64>]) -> io::Result<()> {
    let n = samples.first().map_or(0, Vec::len);
    let mut h = String::from("path");
    for i in 1..=n {
        h.push_str(&format!(",E{i}"));
    }
    writeln!(w, "{h}")?;
    for (p, s) in samples.iter().enumerate() {
        write!(w, "{p}")?;
        for v in s {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes `report.txt` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> io::Result<()> {
    fs::write(dir.join("report.txt"), report.to_text())?;
    fs::write(dir.join("report.csv"), report.to_csv())
}

/// Buffers `f` into a string-backed writer and saves it at `path`.
pub fn save<F>(path: &Path, f: F) -> io::Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)
}
