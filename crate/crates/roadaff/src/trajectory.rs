//! Multi-run trajectory ingestion and spatially synchronized angular-speed
//! statistics.
//!
//! Every demonstration run is reduced to an angular-speed profile over arc
//! length, resampled onto a common grid anchored to the first run, and
//! aggregated across runs. The aggregate series is what the segmentation
//! stage consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::wrap_to_pi;

/// A timestamped planar vehicle pose. Heading is normalized into (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub timestamp: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64, timestamp: f64) -> Self {
        Pose {
            x,
            y,
            heading: wrap_to_pi(heading),
            timestamp,
        }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub run_id: String,
    pub poses: Vec<Pose>,
}

impl Trajectory {
    /// Validates the run invariants: at least two poses, strictly increasing
    /// timestamps, nonzero spacing. Headings are normalized on the way in.
    pub fn new(run_id: impl Into<String>, mut poses: Vec<Pose>) -> Result<Self> {
        let run_id = run_id.into();
        if poses.len() < 2 {
            return Err(Error::TooFewPoses {
                run_id,
                count: poses.len(),
            });
        }
        for p in &mut poses {
            p.heading = wrap_to_pi(p.heading);
        }
        for i in 1..poses.len() {
            if poses[i].timestamp <= poses[i - 1].timestamp {
                return Err(Error::NonMonotoneTimestamp { run_id, index: i });
            }
            if poses[i].distance_to(&poses[i - 1]) == 0.0 {
                return Err(Error::ZeroSpacing {
                    run_id,
                    index: i - 1,
                });
            }
        }
        Ok(Trajectory { run_id, poses })
    }

    /// Total Euclidean arc length over consecutive poses.
    pub fn arc_length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance_to(&w[1])).sum()
    }
}

/// Angular speed as a function of arc position along a reference route.
///
/// `per_run_values` holds one resampled row per run when the series came out
/// of [`synchronize`]; a single-run estimate leaves it empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngularSpeedSeries {
    pub arc_positions: Vec<f64>,
    pub values: Vec<f64>,
    pub per_run_values: Option<Vec<Vec<f64>>>,
}

impl AngularSpeedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-interval angular speed: wrapped heading difference over timestamp
/// difference, anchored at the interval's starting arc position.
///
/// Output length is `poses.len() - 1`. Wrapping guarantees |value * dt| <= pi,
/// so a heading crossing the pi seam reads as a small rotation, not a 2 pi jump.
pub fn estimate_angular_speed(traj: &Trajectory) -> Result<AngularSpeedSeries> {
    let n = traj.poses.len();
    let mut arc_positions = Vec::with_capacity(n - 1);
    let mut values = Vec::with_capacity(n - 1);
    let mut arc = 0.0;
    for i in 0..n - 1 {
        let a = &traj.poses[i];
        let b = &traj.poses[i + 1];
        let dt = b.timestamp - a.timestamp;
        if dt <= 0.0 {
            return Err(Error::DegenerateTimestep {
                run_id: traj.run_id.clone(),
                index: i + 1,
            });
        }
        arc_positions.push(arc);
        values.push(wrap_to_pi(b.heading - a.heading) / dt);
        arc += a.distance_to(b);
    }
    Ok(AngularSpeedSeries {
        arc_positions,
        values,
        per_run_values: None,
    })
}

/// Cross-run aggregation statistic for [`synchronize_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Mean,
    Median,
}

/// Spatially synchronize runs onto the first run's arc-length grid and
/// aggregate with the mean. See [`synchronize_with`].
pub fn synchronize(trajs: &[Trajectory], grid_spacing: f64) -> Result<AngularSpeedSeries> {
    synchronize_with(trajs, grid_spacing, Aggregate::Mean)
}

/// Resample every run's angular-speed profile by linear interpolation onto a
/// common arc-length grid spanning the first run's route, then aggregate
/// per position across runs.
///
/// A run whose total arc length differs from the reference by more than 20%
/// did not drive the same route and is rejected.
pub fn synchronize_with(
    trajs: &[Trajectory],
    grid_spacing: f64,
    aggregate: Aggregate,
) -> Result<AngularSpeedSeries> {
    if trajs.is_empty() {
        return Err(Error::NoTrajectories);
    }
    if !(grid_spacing > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid_spacing must be positive, got {grid_spacing}"
        )));
    }
    let reference_m = trajs[0].arc_length();
    for t in trajs {
        let actual_m = t.arc_length();
        if (actual_m - reference_m).abs() > 0.20 * reference_m {
            return Err(Error::RouteMismatch {
                run_id: t.run_id.clone(),
                reference_m,
                actual_m,
            });
        }
    }

    let n_grid = (reference_m / grid_spacing).floor() as usize + 1;
    let grid: Vec<f64> = (0..n_grid).map(|i| i as f64 * grid_spacing).collect();

    let mut rows = Vec::with_capacity(trajs.len());
    for t in trajs {
        let series = estimate_angular_speed(t)?;
        rows.push(resample_linear(
            &series.arc_positions,
            &series.values,
            &grid,
        ));
    }

    let values = grid
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            match aggregate {
                Aggregate::Mean => col.iter().sum::<f64>() / col.len() as f64,
                Aggregate::Median => {
                    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let m = col.len() / 2;
                    if col.len() % 2 == 1 {
                        col[m]
                    } else {
                        0.5 * (col[m - 1] + col[m])
                    }
                }
            }
        })
        .collect();

    Ok(AngularSpeedSeries {
        arc_positions: grid,
        values,
        per_run_values: Some(rows),
    })
}

/// Piecewise-linear resampling with clamp extrapolation beyond the anchors.
/// Exact at anchor positions.
fn resample_linear(xs: &[f64], ys: &[f64], queries: &[f64]) -> Vec<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(!xs.is_empty());
    queries
        .iter()
        .map(|&q| {
            if q <= xs[0] {
                return ys[0];
            }
            if q >= xs[xs.len() - 1] {
                return ys[ys.len() - 1];
            }
            // partition_point: first anchor strictly above q.
            let hi = xs.partition_point(|&x| x <= q);
            let lo = hi - 1;
            if xs[lo] == q {
                return ys[lo];
            }
            let t = (q - xs[lo]) / (xs[hi] - xs[lo]);
            ys[lo] + t * (ys[hi] - ys[lo])
        })
        .collect()
}
