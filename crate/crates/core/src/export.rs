//! Trace and report writers. Column names carry units.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::Trace;

const AXES: [&str; 3] = ["x", "y", "z"];

/// CSV header for a trace of `dof` joints and `events` perturbations.
pub fn trace_columns(dof: usize, events: usize) -> Vec<String> {
    let mut cols = vec!["t_s".to_string()];
    cols.extend((1..=dof).map(|i| format!("q{i}_rad")));
    cols.extend((1..=dof).map(|i| format!("qd{i}_rad_per_s")));
    cols.extend(AXES.iter().map(|a| format!("ee_{a}_m")));
    cols.extend(AXES.iter().map(|a| format!("ee_v{a}_m_per_s")));
    cols.extend(AXES.iter().map(|a| format!("fhat_{a}_n")));
    cols.extend((1..=dof).map(|i| format!("tau{i}_nm")));
    cols.extend((1..=events).map(|i| format!("perturbation{i}_active")));
    cols.extend(["mechanical_energy_j", "work_in_j", "friction_loss_j"].map(String::from));
    cols
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialize(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_trace_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let events = trace.rows.first().map(|r| r.perturbation_active.len()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(trace_columns(trace.dof, events))
        .map_err(|e| csv_err(path, e))?;
    for r in &trace.rows {
        let mut rec: Vec<String> = Vec::with_capacity(4 * trace.dof + 12 + events);
        rec.push(r.t.to_string());
        rec.extend(r.q.iter().map(f64::to_string));
        rec.extend(r.qd.iter().map(f64::to_string));
        rec.extend(r.x.iter().map(f64::to_string));
        rec.extend(r.xd.iter().map(f64::to_string));
        rec.extend(r.f_hat_d.iter().map(f64::to_string));
        rec.extend(r.tau.iter().map(f64::to_string));
        rec.extend(r.perturbation_active.iter().map(|&b| u8::from(b).to_string()));
        rec.push(r.mechanical_energy.to_string());
        rec.push(r.work_in.to_string());
        rec.push(r.friction_loss.to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TraceDocument<'a> {
    scenario: &'a str,
    scenario_hash: &'a str,
    dt_s: f64,
    dof: usize,
    t_s: Vec<f64>,
    q_rad: Vec<Vec<f64>>,
    qd_rad_per_s: Vec<Vec<f64>>,
    ee_m: Vec<[f64; 3]>,
    ee_velocity_m_per_s: Vec<[f64; 3]>,
    fhat_n: Vec<[f64; 3]>,
    tau_nm: Vec<Vec<f64>>,
    perturbation_active: Vec<Vec<bool>>,
    mechanical_energy_j: Vec<f64>,
    work_in_j: Vec<f64>,
    friction_loss_j: Vec<f64>,
}

pub fn trace_to_json(trace: &Trace) -> Result<String> {
    let rows = &trace.rows;
    let doc = TraceDocument {
        scenario: &trace.scenario,
        scenario_hash: &trace.scenario_hash,
        dt_s: trace.dt,
        dof: trace.dof,
        t_s: rows.iter().map(|r| r.t).collect(),
        q_rad: rows.iter().map(|r| r.q.as_slice().to_vec()).collect(),
        qd_rad_per_s: rows.iter().map(|r| r.qd.as_slice().to_vec()).collect(),
        ee_m: rows.iter().map(|r| r.x.into()).collect(),
        ee_velocity_m_per_s: rows.iter().map(|r| r.xd.into()).collect(),
        fhat_n: rows.iter().map(|r| r.f_hat_d.into()).collect(),
        tau_nm: rows.iter().map(|r| r.tau.as_slice().to_vec()).collect(),
        perturbation_active: rows.iter().map(|r| r.perturbation_active.clone()).collect(),
        mechanical_energy_j: rows.iter().map(|r| r.mechanical_energy).collect(),
        work_in_j: rows.iter().map(|r| r.work_in).collect(),
        friction_loss_j: rows.iter().map(|r| r.friction_loss).collect(),
    };
    serde_json::to_string(&doc).map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_trace_json(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace_to_json(trace)?).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

/// One quantity to plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotSelection {
    /// One-based joint index.
    Joint(usize),
    EeAxis(usize),
    EePath3d,
    Estimate(usize),
}

impl PlotSelection {
    pub fn parse(key: &str, dof: usize) -> Result<Self> {
        let unknown = || Error::UnknownSelection(key.to_string());
        let (kind, arg) = key.split_once(':').ok_or_else(unknown)?;
        let axis = |a: &str| AXES.iter().position(|&n| n == a);
        match kind {
            "joint" => match arg.parse::<usize>() {
                Ok(i) if (1..=dof).contains(&i) => Ok(Self::Joint(i)),
                _ => Err(unknown()),
            },
            "ee" if arg == "path3d" => Ok(Self::EePath3d),
            "ee" => axis(arg).map(Self::EeAxis).ok_or_else(unknown),
            "fhat" => axis(arg).map(Self::Estimate).ok_or_else(unknown),
            _ => Err(unknown()),
        }
    }

    fn file_stem(&self) -> String {
        match self {
            Self::Joint(i) => format!("joint{i}"),
            Self::EeAxis(a) => format!("ee_{}", AXES[*a]),
            Self::EePath3d => "ee_path3d".into(),
            Self::Estimate(a) => format!("fhat_{}", AXES[*a]),
        }
    }
}

/// Writes one CSV series per selection into `dir`. All keys are checked
/// before anything is written.
pub fn emit_plot_data(trace: &Trace, selections: &[String], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let parsed = selections
        .iter()
        .map(|s| PlotSelection::parse(s, trace.dof))
        .collect::<Result<Vec<_>>>()?;
    if parsed.is_empty() {
        return Ok(Vec::new());
    }
    let dir = ensure_dir(dir)?;
    let mut written = Vec::new();
    for sel in parsed {
        let path = dir.join(format!("{}.csv", sel.file_stem()));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let header: Vec<String> = match sel {
            PlotSelection::Joint(i) => vec!["t_s".into(), format!("q{i}_rad")],
            PlotSelection::EeAxis(a) => vec!["t_s".into(), format!("ee_{}_m", AXES[a])],
            PlotSelection::EePath3d => vec!["ee_x_m".into(), "ee_y_m".into(), "ee_z_m".into()],
            PlotSelection::Estimate(a) => vec!["t_s".into(), format!("fhat_{}_n", AXES[a])],
        };
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        for r in &trace.rows {
            let rec: Vec<String> = match sel {
                PlotSelection::Joint(i) => vec![r.t.to_string(), r.q[i - 1].to_string()],
                PlotSelection::EeAxis(a) => vec![r.t.to_string(), r.x[a].to_string()],
                PlotSelection::EePath3d => r.x.iter().map(f64::to_string).collect(),
                PlotSelection::Estimate(a) => vec![r.t.to_string(), r.f_hat_d[a].to_string()],
            };
            w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
