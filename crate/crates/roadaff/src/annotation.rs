//! Trajectory-to-image annotation: project future poses into the current
//! camera frame and derive the per-frame partial affordance label.
//!
//! The label is partial in the positive-unlabeled sense. A frame asserts one
//! drivable direction (the one the demonstration actually took within the
//! prediction window), the attention center for it, and the remaining
//! distance; the other directions stay unknown, never negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdphmm::Action;
use crate::trajectory::Pose;

/// Planar-world pinhole camera on a fixed vehicle mount.
///
/// Vehicle frame: x forward, y left, z up, origin on the ground under the
/// rear axle reference point. The camera sits `mount_offset` meters forward,
/// `mount_height` meters up, pitched `mount_pitch` radians downward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point: (f64, f64),
    /// (width, height) in pixels.
    pub image_size: (usize, usize),
    pub mount_height: f64,
    pub mount_pitch: f64,
    pub mount_offset: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            focal_px: 300.0,
            principal_point: (314.0, 157.0),
            image_size: (628, 314),
            mount_height: 1.2,
            mount_pitch: 0.15,
            mount_offset: 0.5,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        let (u0, v0) = self.principal_point;
        if !(self.focal_px > 0.0) {
            return Err(Error::InvalidConfig("focal_px must be positive".into()));
        }
        if !(self.mount_height > 0.0) {
            return Err(Error::InvalidConfig("mount_height must be positive".into()));
        }
        if u0 < 0.0 || u0 >= w as f64 || v0 < 0.0 || v0 >= h as f64 {
            return Err(Error::InvalidConfig(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Ground point (vehicle frame) into the camera frame.
    /// Camera axes: X right, Y down, Z along the optical axis.
    fn ground_to_camera(&self, xv: f64, yv: f64) -> (f64, f64, f64) {
        let (s, c) = self.mount_pitch.sin_cos();
        let dx = xv - self.mount_offset;
        let xc = -yv;
        let yc = -s * dx + self.mount_height * c;
        let zc = c * dx + self.mount_height * s;
        (xc, yc, zc)
    }
}

/// Project a world-frame ground point seen from `ego` into pixels.
///
/// Absent when the point is behind the camera or lands outside
/// [0, width-1] x [0, height-1].
pub fn project_pose(cam: &CameraModel, ego: &Pose, target: &Pose) -> Option<(f64, f64)> {
    let dx = target.x - ego.x;
    let dy = target.y - ego.y;
    let (s, c) = ego.heading.sin_cos();
    let xv = c * dx + s * dy;
    let yv = -s * dx + c * dy;
    let (xc, yc, zc) = cam.ground_to_camera(xv, yv);
    if zc <= 0.0 {
        return None;
    }
    let u = cam.principal_point.0 + cam.focal_px * xc / zc;
    let v = cam.principal_point.1 + cam.focal_px * yc / zc;
    let (w, h) = cam.image_size;
    if u < 0.0 || u > (w - 1) as f64 || v < 0.0 || v > (h - 1) as f64 {
        return None;
    }
    Some((u, v))
}

/// One frame's partial label: exactly one class asserted positive, the rest
/// unknown (0), never negative at this stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialAffordance {
    pub frame_id: String,
    pub known_class: Action,
    pub label_vector: [i8; 3],
    pub attention_center: (f64, f64),
    pub distance: f64,
    pub distance_valid: bool,
}

impl PartialAffordance {
    pub fn validate(&self, cam: &CameraModel) -> Result<()> {
        let ones: Vec<usize> = (0..3).filter(|&k| self.label_vector[k] == 1).collect();
        if ones != [self.known_class.index()] {
            return Err(Error::InvalidLabel(format!(
                "label vector {:?} does not single out {:?}",
                self.label_vector, self.known_class
            )));
        }
        if self.label_vector.iter().any(|&v| v != 0 && v != 1) {
            return Err(Error::InvalidLabel(
                "partial labels may only contain 0 and 1".into(),
            ));
        }
        let (w, h) = cam.image_size;
        let (u, v) = self.attention_center;
        if u < 0.0 || u > (w - 1) as f64 || v < 0.0 || v > (h - 1) as f64 {
            return Err(Error::InvalidLabel("attention center out of bounds".into()));
        }
        Ok(())
    }
}

/// Test-time prediction: independent presence per class, with localization
/// and distance only where present.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub present: bool,
    pub score: f64,
    pub attention_center: Option<(f64, f64)>,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteAffordance {
    pub frame_id: String,
    /// Indexed by [`crate::hdphmm::CLASSES`] order.
    pub classes: [ClassPrediction; 3],
}

fn one_hot(class: Action) -> [i8; 3] {
    let mut v = [0i8; 3];
    v[class.index()] = 1;
    v
}

/// Derive the partial affordance for one frame.
///
/// `future` is the demonstration's upcoming poses in route order, each
/// tagged with its segmented action. A turning class is asserted when any of
/// its poses projects into view within `max_dist` meters (straight-line);
/// the nearest such segment supplies the attention center (mean projected
/// pixel) and the remaining distance (to its first in-window pose, or 0
/// when the frame itself sits inside the segment). Otherwise the class is
/// Straight, centered on the last projectable pose within `max_dist` of
/// route arc.
pub fn annotate_frame(
    cam: &CameraModel,
    frame_id: &str,
    ego: &Pose,
    future: &[(Pose, Action)],
    max_dist: f64,
) -> Result<PartialAffordance> {
    debug_assert!(max_dist > 0.0);

    // Contiguous action runs, in route order.
    let mut runs: Vec<(Action, usize, usize)> = Vec::new(); // (action, start, end exclusive)
    for (i, (_, a)) in future.iter().enumerate() {
        match runs.last_mut() {
            Some((ra, _, end)) if *ra == *a && *end == i => *end = i + 1,
            _ => runs.push((*a, i, i + 1)),
        }
    }

    let projected: Vec<Option<(f64, f64)>> = future
        .iter()
        .map(|(p, _)| project_pose(cam, ego, p))
        .collect();
    let in_window: Vec<bool> = future
        .iter()
        .zip(&projected)
        .map(|((p, _), px)| px.is_some() && ego.distance_to(p) <= max_dist)
        .collect();

    // Nearest turning run with at least one projected in-window pose.
    for (run_idx, &(action, start, end)) in runs.iter().enumerate() {
        if action == Action::Straight {
            continue;
        }
        let hits: Vec<usize> = (start..end).filter(|&i| in_window[i]).collect();
        if hits.is_empty() {
            continue;
        }
        let mut cu = 0.0;
        let mut cv = 0.0;
        for &i in &hits {
            let (u, v) = projected[i].unwrap();
            cu += u;
            cv += v;
        }
        let n = hits.len() as f64;
        // Inside the turn itself the remaining distance is zero; on
        // approach it is the straight-line gap to the turn's entry.
        let distance = if run_idx == 0 {
            0.0
        } else {
            ego.distance_to(&future[hits[0]].0)
        };
        return Ok(PartialAffordance {
            frame_id: frame_id.to_string(),
            known_class: action,
            label_vector: one_hot(action),
            attention_center: (cu / n, cv / n),
            distance,
            distance_valid: true,
        });
    }

    // Straight: last projectable pose within max_dist of arc length.
    let mut arc = 0.0;
    let mut prev = ego;
    let mut chosen: Option<usize> = None;
    for (i, (p, _)) in future.iter().enumerate() {
        arc += prev.distance_to(p);
        if arc > max_dist {
            break;
        }
        if projected[i].is_some() {
            chosen = Some(i);
        }
        prev = p;
    }
    match chosen {
        Some(i) => Ok(PartialAffordance {
            frame_id: frame_id.to_string(),
            known_class: Action::Straight,
            label_vector: one_hot(Action::Straight),
            attention_center: projected[i].unwrap(),
            distance: ego.distance_to(&future[i].0),
            distance_valid: true,
        }),
        None => Err(Error::FrameUnlabelable {
            frame_id: frame_id.to_string(),
        }),
    }
}

/// A capture point on a drive: the pose index whose timestamp the image was
/// rendered at.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub pose_index: usize,
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub annotations: Vec<PartialAffordance>,
    pub skipped: usize,
}

/// Annotate every frame of every drive. Frames with no projectable future
/// pose are dropped and counted, not errored.
pub fn build_dataset(
    cam: &CameraModel,
    drives: &[(
        crate::trajectory::Trajectory,
        crate::hdphmm::ActionSequence,
        Vec<Frame>,
    )],
    max_dist: f64,
) -> BuildOutcome {
    let mut out = BuildOutcome::default();
    for (traj, actions, frames) in drives {
        let future = future_with_actions(traj, actions);
        for frame in frames {
            if frame.pose_index + 1 >= traj.poses.len() {
                out.skipped += 1;
                continue;
            }
            let ego = &traj.poses[frame.pose_index];
            match annotate_frame(
                cam,
                &frame.frame_id,
                ego,
                &future[frame.pose_index + 1..],
                max_dist,
            ) {
                Ok(a) => out.annotations.push(a),
                Err(Error::FrameUnlabelable { .. }) => out.skipped += 1,
                Err(_) => out.skipped += 1,
            }
        }
    }
    out
}

/// Pair every trajectory pose with the action of the segment its arc
/// position falls into.
pub fn future_with_actions(
    traj: &crate::trajectory::Trajectory,
    actions: &crate::hdphmm::ActionSequence,
) -> Vec<(Pose, Action)> {
    let mut out = Vec::with_capacity(traj.poses.len());
    let mut arc = 0.0;
    for (i, p) in traj.poses.iter().enumerate() {
        if i > 0 {
            arc += traj.poses[i - 1].distance_to(p);
        }
        out.push((*p, action_at(actions, arc)));
    }
    out
}

/// Segment lookup, half-open on the shared boundaries; positions beyond the
/// last boundary inherit the final segment.
fn action_at(actions: &crate::hdphmm::ActionSequence, arc: f64) -> Action {
    for seg in &actions.segments {
        if arc < seg.end_arc {
            return seg.action;
        }
    }
    actions
        .segments
        .last()
        .map(|s| s.action)
        .unwrap_or(Action::Straight)
}
