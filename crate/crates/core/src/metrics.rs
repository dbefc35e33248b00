//! Deviation statistics over traces.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::Trace;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationMetrics {
    /// Per-axis RMS displacement of the end effector from its first sample, m.
    pub movement_deviation_m: [f64; 3],
    /// Largest joint difference against a reference run, rad.
    pub max_joint_deviation_rad: Option<f64>,
    /// Largest distance from the start-target chord, m.
    pub straightness_m: Option<f64>,
    pub chord_length_m: Option<f64>,
}

/// Per-axis RMS of `x(t) - x(0)` over every row.
pub fn movement_deviation(trace: &Trace) -> Result<Vector3<f64>> {
    let first = trace.rows.first().ok_or(Error::EmptyTrace)?;
    let mut acc = Vector3::zeros();
    for r in &trace.rows {
        let d = r.x - first.x;
        acc += d.component_mul(&d);
    }
    Ok((acc / trace.rows.len() as f64).map(f64::sqrt))
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (a + ab * t - p).norm()
}

/// Largest distance of the end-effector path from the chord `[start, target]`.
pub fn straightness(trace: &Trace, start: &Vector3<f64>, target: &Vector3<f64>) -> Result<f64> {
    let chord = (target - start).norm();
    if !(chord > 0.0) {
        return Err(Error::DegenerateChord(chord));
    }
    if trace.rows.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(trace
        .rows
        .iter()
        .map(|r| point_segment_distance(&r.x, start, target))
        .fold(0.0, f64::max))
}

fn check_pair(a: &Trace, b: &Trace) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if a.dof != b.dof {
        return Err(Error::ComparisonMismatch(format!(
            "traces have {} and {} joints",
            a.dof, b.dof
        )));
    }
    Ok(())
}

/// Max over joints and common time samples of `|q_a - q_b|`.
pub fn max_joint_deviation(a: &Trace, b: &Trace) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| (&ra.q - &rb.q).amax())
        .fold(0.0, f64::max))
}

/// Max over common time samples of `|x_a(t) - x_b(t)|`.
pub fn max_synchronous_distance(a: &Trace, b: &Trace) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| (ra.x - rb.x).norm())
        .fold(0.0, f64::max))
}

fn directed_path_distance(from: &Trace, to: &Trace) -> f64 {
    let pts: Vec<Vector3<f64>> = to.rows.iter().map(|r| r.x).collect();
    from.rows
        .iter()
        .map(|r| {
            if pts.len() == 1 {
                return (r.x - pts[0]).norm();
            }
            pts.windows(2)
                .map(|w| point_segment_distance(&r.x, &w[0], &w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between the two end-effector paths taken
/// as polylines, so a perturbed run that falls behind in time but stays on
/// the same curve is not penalized.
pub fn path_distance(a: &Trace, b: &Trace) -> Result<f64> {
    check_pair(a, b)?;
    Ok(directed_path_distance(a, b).max(directed_path_distance(b, a)))
}

/// `100 (1 - improved / baseline)` per axis.
pub fn reduction_percent(baseline: &Vector3<f64>, improved: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        if baseline[i] == 0.0 {
            if improved[i] == 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            100.0 * (1.0 - improved[i] / baseline[i])
        }
    })
}
