//! Single runs and paired comparisons, with their reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::export::{ensure_dir, write_json, write_trace_csv, write_trace_json};
use crate::metrics::{
    max_joint_deviation, max_synchronous_distance, movement_deviation, path_distance, reduction_percent, straightness,
    DeviationMetrics,
};
use crate::scenario::{ControllerConfig, ObserverVariant, Scenario};
use crate::sim::{run, Trace};

/// A reach counts as arriving when its final error is within this fraction
/// of the chord.
pub const REACH_TOLERANCE_FRACTION: f64 = 0.1;

fn reaching_target(scenario: &Scenario) -> Option<Vector3<f64>> {
    match &scenario.controller {
        ControllerConfig::Reaching { target, .. } => Some(*target),
        ControllerConfig::PdRegulation(_) => None,
    }
}

fn max_joint_excursion(trace: &Trace) -> f64 {
    let Some(first) = trace.rows.first() else { return 0.0 };
    trace.rows.iter().map(|r| (&r.q - &first.q).amax()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub observer_variant: ObserverVariant,
    pub seed: u64,
    pub rows: usize,
    pub duration_s: f64,
    pub deviation: DeviationMetrics,
    pub max_joint_excursion_rad: f64,
    pub final_position_m: [f64; 3],
    pub energy_residual: f64,
    pub runtime_s: f64,
}

pub struct RunOutput {
    pub trace: Trace,
    pub report: RunReport,
}

pub fn run_single(scenario: &Scenario) -> Result<RunOutput> {
    let started = Instant::now();
    let trace = run(scenario)?;
    let runtime_s = started.elapsed().as_secs_f64();
    let dev = movement_deviation(&trace)?;
    let first = &trace.rows[0];
    let last = trace.rows.last().expect("nonempty trace");
    let (straightness_m, chord_length_m) = match reaching_target(scenario) {
        Some(target) if (target - first.x).norm() > 0.0 => (
            Some(straightness(&trace, &first.x, &target)?),
            Some((target - first.x).norm()),
        ),
        _ => (None, None),
    };
    let report = RunReport {
        scenario: scenario.name().to_string(),
        scenario_hash: trace.scenario_hash.clone(),
        observer_variant: scenario.observer.variant,
        seed: scenario.doc.seed,
        rows: trace.len(),
        duration_s: trace.duration(),
        deviation: DeviationMetrics {
            movement_deviation_m: dev.into(),
            max_joint_deviation_rad: None,
            straightness_m,
            chord_length_m,
        },
        max_joint_excursion_rad: max_joint_excursion(&trace),
        final_position_m: last.x.into(),
        energy_residual: trace.energy_residual()?,
        runtime_s,
    };
    Ok(RunOutput { trace, report })
}

impl RunOutput {
    /// Writes `trace.csv`, `trace.json` and `metrics.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = ensure_dir(dir)?;
        let paths = [dir.join("trace.csv"), dir.join("trace.json"), dir.join("metrics.json")];
        write_trace_csv(&self.trace, &paths[0])?;
        write_trace_json(&self.trace, &paths[1])?;
        write_json(&self.report, &paths[2])?;
        Ok(paths.to_vec())
    }
}

fn run_pair(a: &Scenario, b: &Scenario) -> Result<(Trace, Trace)> {
    let (ra, rb) = std::thread::scope(|s| {
        let ha = s.spawn(|| run(a));
        let rb = run(b);
        (ha.join().expect("simulation thread panicked"), rb)
    });
    Ok((ra?, rb?))
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub baseline_variant: ObserverVariant,
    pub improved_variant: ObserverVariant,
    pub baseline_hash: String,
    pub improved_hash: String,
    pub deviation_baseline_m: [f64; 3],
    pub deviation_improved_m: [f64; 3],
    /// `100 (1 - improved / baseline)` per axis.
    pub reduction_percent: [f64; 3],
    /// Largest joint excursion from the start pose in each run; similar
    /// values mean the pushes moved both arms comparably.
    pub joint_excursion_baseline_rad: f64,
    pub joint_excursion_improved_rad: f64,
    pub max_joint_deviation_between_runs_rad: f64,
    pub energy_residual_baseline: f64,
    pub energy_residual_improved: f64,
    pub runtime_s: f64,
}

impl ComparisonReport {
    pub fn recomputed_reductions(&self) -> [f64; 3] {
        reduction_percent(
            &Vector3::from(self.deviation_baseline_m),
            &Vector3::from(self.deviation_improved_m),
        )
        .into()
    }
}

pub struct ComparisonOutput {
    pub baseline: Trace,
    pub improved: Trace,
    pub report: ComparisonReport,
}

/// Checks that two scenarios differ at most in their observer variant.
pub fn check_pairing(a: &Scenario, b: &Scenario) -> Result<()> {
    if a.doc.perturbations != b.doc.perturbations {
        return Err(Error::ComparisonMismatch("perturbation schedules differ".into()));
    }
    let mut da = a.doc.clone();
    da.observer.variant = b.doc.observer.variant;
    if da != b.doc {
        return Err(Error::ComparisonMismatch(
            "scenarios differ in more than the observer variant".into(),
        ));
    }
    if format!("{:?}", a.model) != format!("{:?}", b.model) {
        return Err(Error::ComparisonMismatch("robot models differ".into()));
    }
    Ok(())
}

/// Runs `baseline` and `improved` concurrently and compares their
/// end-effector deviations.
pub fn compare_regulation(baseline: &Scenario, improved: &Scenario) -> Result<ComparisonOutput> {
    check_pairing(baseline, improved)?;
    let started = Instant::now();
    let (tb, ti) = run_pair(baseline, improved)?;
    let runtime_s = started.elapsed().as_secs_f64();
    let db = movement_deviation(&tb)?;
    let di = movement_deviation(&ti)?;
    let report = ComparisonReport {
        scenario: baseline.name().to_string(),
        baseline_variant: baseline.observer.variant,
        improved_variant: improved.observer.variant,
        baseline_hash: tb.scenario_hash.clone(),
        improved_hash: ti.scenario_hash.clone(),
        deviation_baseline_m: db.into(),
        deviation_improved_m: di.into(),
        reduction_percent: reduction_percent(&db, &di).into(),
        joint_excursion_baseline_rad: max_joint_excursion(&tb),
        joint_excursion_improved_rad: max_joint_excursion(&ti),
        max_joint_deviation_between_runs_rad: max_joint_deviation(&tb, &ti)?,
        energy_residual_baseline: tb.energy_residual()?,
        energy_residual_improved: ti.energy_residual()?,
        runtime_s,
    };
    Ok(ComparisonOutput {
        baseline: tb,
        improved: ti,
        report,
    })
}

/// Mass-damper against nonlinear nominal model on one scenario.
pub fn run_regulation_comparison(scenario: &Scenario) -> Result<ComparisonOutput> {
    compare_regulation(
        &scenario.with_variant(ObserverVariant::MassDamper),
        &scenario.with_variant(ObserverVariant::Nonlinear),
    )
}

impl ComparisonOutput {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = ensure_dir(dir)?;
        let b = self.report.baseline_variant;
        let i = self.report.improved_variant;
        let paths = vec![
            dir.join(format!("trace_baseline_{b}.csv")),
            dir.join(format!("trace_improved_{i}.csv")),
            dir.join("comparison.json"),
        ];
        write_trace_csv(&self.baseline, &paths[0])?;
        write_trace_csv(&self.improved, &paths[1])?;
        write_json(&self.report, &paths[2])?;
        Ok(paths)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReachingReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub start_m: [f64; 3],
    pub target_m: [f64; 3],
    pub chord_length_m: f64,
    pub max_joint_deviation_rad: f64,
    pub straightness_perturbed_m: f64,
    pub straightness_unperturbed_m: f64,
    pub straightness_ratio_perturbed: f64,
    pub straightness_ratio_unperturbed: f64,
    /// Symmetric Hausdorff distance between the two paths.
    pub path_distance_m: f64,
    pub max_synchronous_distance_m: f64,
    pub final_error_perturbed_m: f64,
    pub final_error_unperturbed_m: f64,
    pub target_reached_perturbed: bool,
    pub target_reached_unperturbed: bool,
    pub energy_residual_perturbed: f64,
    pub energy_residual_unperturbed: f64,
    pub runtime_s: f64,
}

pub struct ReachingOutput {
    pub perturbed: Trace,
    pub unperturbed: Trace,
    pub report: ReachingReport,
}

/// Runs the scenario as given and with its perturbations removed.
pub fn run_reaching_comparison(scenario: &Scenario) -> Result<ReachingOutput> {
    let target = reaching_target(scenario)
        .ok_or_else(|| Error::ComparisonMismatch("reaching comparison needs a reaching controller".into()))?;
    let x0 = crate::model::forward_kinematics(&scenario.model, &scenario.q0)?.end_effector;
    let chord = (target - x0).norm();
    if !(chord > 0.0) {
        return Err(Error::DegenerateChord(chord));
    }
    let free = scenario.without_perturbations();
    let started = Instant::now();
    let (tp, tu) = run_pair(scenario, &free)?;
    let runtime_s = started.elapsed().as_secs_f64();
    let start = tu.rows[0].x;
    let sp = straightness(&tp, &start, &target)?;
    let su = straightness(&tu, &start, &target)?;
    let final_err = |t: &Trace| (t.rows.last().expect("nonempty trace").x - target).norm();
    let (ep, eu) = (final_err(&tp), final_err(&tu));
    let report = ReachingReport {
        scenario: scenario.name().to_string(),
        scenario_hash: tp.scenario_hash.clone(),
        start_m: start.into(),
        target_m: target.into(),
        chord_length_m: chord,
        max_joint_deviation_rad: max_joint_deviation(&tp, &tu)?,
        straightness_perturbed_m: sp,
        straightness_unperturbed_m: su,
        straightness_ratio_perturbed: sp / chord,
        straightness_ratio_unperturbed: su / chord,
        path_distance_m: path_distance(&tp, &tu)?,
        max_synchronous_distance_m: max_synchronous_distance(&tp, &tu)?,
        final_error_perturbed_m: ep,
        final_error_unperturbed_m: eu,
        target_reached_perturbed: ep <= REACH_TOLERANCE_FRACTION * chord,
        target_reached_unperturbed: eu <= REACH_TOLERANCE_FRACTION * chord,
        energy_residual_perturbed: tp.energy_residual()?,
        energy_residual_unperturbed: tu.energy_residual()?,
        runtime_s,
    };
    Ok(ReachingOutput {
        perturbed: tp,
        unperturbed: tu,
        report,
    })
}

impl ReachingOutput {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = ensure_dir(dir)?;
        let paths = vec![
            dir.join("trace_perturbed.csv"),
            dir.join("trace_unperturbed.csv"),
            dir.join("reaching.json"),
        ];
        write_trace_csv(&self.perturbed, &paths[0])?;
        write_trace_csv(&self.unperturbed, &paths[1])?;
        write_json(&self.report, &paths[2])?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(s: &Scenario, secs: f64) -> Scenario {
        let mut doc = s.doc.clone();
        doc.duration_s = secs;
        Scenario::with_model(doc, s.model.clone()).unwrap()
    }

    #[test]
    fn identical_variants_give_zero_reduction() {
        let s = short(&Scenario::regulation_fixture(), 0.15);
        let out = compare_regulation(&s, &s).unwrap();
        assert_eq!(out.report.reduction_percent, [0.0; 3]);
        assert_eq!(out.report.max_joint_deviation_between_runs_rad, 0.0);
    }

    #[test]
    fn mismatched_schedules_refused() {
        let s = short(&Scenario::regulation_fixture(), 0.05);
        let other = s.without_perturbations().with_variant(ObserverVariant::MassDamper);
        assert!(matches!(
            compare_regulation(&other, &s),
            Err(Error::ComparisonMismatch(_))
        ));
        assert!(matches!(
            compare_regulation(&s.with_seed(99), &s),
            Err(Error::ComparisonMismatch(_))
        ));
    }

    #[test]
    fn zero_duration_run_has_zero_deviation() {
        let s = short(&Scenario::regulation_fixture(), 0.0);
        let out = run_single(&s).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.report.deviation.movement_deviation_m, [0.0; 3]);
    }

    #[test]
    fn reaching_without_perturbations_matches_itself() {
        let s = short(&Scenario::reaching_fixture(), 0.2).without_perturbations();
        let out = run_reaching_comparison(&s).unwrap();
        assert_eq!(out.report.max_joint_deviation_rad, 0.0);
        assert_eq!(out.report.path_distance_m, 0.0);
        assert_eq!(out.report.max_synchronous_distance_m, 0.0);
    }

    #[test]
    fn reaching_needs_reaching_controller() {
        let s = short(&Scenario::regulation_fixture(), 0.01);
        assert!(matches!(run_reaching_comparison(&s), Err(Error::ComparisonMismatch(_))));
    }
}
