//! Plain-data exports: grid frames, trajectory CSVs and JSON reports.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mglc_core::dynamics::ControllerParams;
use mglc_core::grid::GridField;
use mglc_core::guidance::SynthesisTrace;
use mglc_core::verify::{ConvergenceReport, Trajectory};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channels exported per trace step; `f1 = x2` on every benchmark and is
/// left out.
pub const FRAME_CHANNELS: [(usize, &str); 2] = [(1, "f2"), (2, "v")];

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = crate::format::create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// One channel as `G` comma-separated rows, row 0 at `y_min`.
pub fn write_grid_csv(path: &Path, field: &GridField, channel: usize) -> Result<()> {
    let g = field.spec().resolution;
    write_file(path, |w| {
        for row in field.channel(channel).chunks(g) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::format(path, format!("{v:?}: {e}"))))
                .collect()
        })
        .collect()
}

/// Binary greyscale pixmap, min–max scaled, top row at `y_max`.
pub fn write_grid_pgm(path: &Path, field: &GridField, channel: usize) -> Result<()> {
    let g = field.spec().resolution;
    let values = field.channel(channel);
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    write_file(path, |w| {
        write!(w, "P5\n{g} {g}\n255\n")?;
        for row in values.chunks(g).rev() {
            let px: Vec<u8> = row.iter().map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8).collect();
            w.write_all(&px)?;
        }
        Ok(())
    })
}

/// Writes `f2_NNN` and `v_NNN` frames (CSV and PGM) of every step's `x_t`
/// in raw units and returns the number of frames per channel.
pub fn export_trace(trace: &SynthesisTrace, dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if trace.steps.is_empty() {
        log::warn!("trace has no steps; nothing to export");
    }
    for (k, step) in trace.steps.iter().enumerate() {
        let raw = trace.codec.decode(&step.x_t);
        for (c, name) in FRAME_CHANNELS {
            write_grid_csv(&dir.join(format!("{name}_{k:03}.csv")), &raw, c)?;
            write_grid_pgm(&dir.join(format!("{name}_{k:03}.pgm")), &raw, c)?;
        }
    }
    Ok(trace.steps.len())
}

/// `t,x1,x2,u` rows.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    write_file(path, |w| {
        writeln!(w, "t,x1,x2,u")?;
        for ((t, x), u) in traj.times.iter().zip(&traj.states).zip(&traj.controls) {
            writeln!(w, "{t},{},{},{u}", x[0], x[1])?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub index: usize,
    pub x0: [f64; 2],
    pub final_norm: f64,
    pub tail_max_norm: f64,
    pub converged: bool,
    pub time_to_converge: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub system: String,
    pub controller: ControllerParams,
    pub count: usize,
    pub converged: usize,
    pub fraction: f64,
    pub r_conv: f64,
    pub margin: f64,
    pub failures: usize,
    pub trajectories: Vec<TrajectorySummary>,
}

impl VerifyReport {
    pub fn new(system: &str, controller: ControllerParams, report: &ConvergenceReport) -> Self {
        Self {
            system: system.into(),
            controller,
            count: report.outcomes.len(),
            converged: report.converged,
            fraction: report.fraction,
            r_conv: report.r_conv,
            margin: report.margin(),
            failures: report.failures(),
            trajectories: report
                .outcomes
                .iter()
                .map(|o| TrajectorySummary {
                    index: o.index,
                    x0: o.x0,
                    final_norm: o.final_norm,
                    tail_max_norm: o.tail_max_norm,
                    converged: o.converged,
                    time_to_converge: o.time_to_converge,
                    failure: o.failure.as_ref().map(|e| e.to_string()),
                })
                .collect(),
        }
    }
}

/// Report JSON plus `trajectories/traj_NNN.csv`; returns the report path.
pub fn write_verify_outputs(dir: &Path, report: &VerifyReport, outcomes: &ConvergenceReport) -> Result<PathBuf> {
    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(|e| Error::io(&traj_dir, e))?;
    for o in &outcomes.outcomes {
        write_trajectory_csv(&traj_dir.join(format!("traj_{:03}.csv", o.index)), &o.trajectory)?;
    }
    let path = dir.join("report.json");
    write_json(&path, report)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, |w| writeln!(w, "{text}"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
