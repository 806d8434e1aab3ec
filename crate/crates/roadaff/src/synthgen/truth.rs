//! Ground-truth affordances from world geometry.
//!
//! The reference labels come straight from the road graph and the smoothed
//! route, not from noisy trajectories, so evaluation measures the predictor
//! against what is actually drivable from each frame. The windowing rules
//! mirror the trajectory-derived annotations: a class counts as present when
//! drivable points for it both project into the image and lie within the
//! distance window.

use super::drive::{PathKind, SmoothedPath};
use super::world::RoadGraph;
use crate::annotation::{project_pose, CameraModel, ClassPrediction, CompleteAffordance};
use crate::geom::Vec2;
use crate::trajectory::Pose;

/// Spacing of candidate points sampled along drivable lines.
const SAMPLE_STEP: f64 = 0.5;

/// In-window test: visible in the image and within `max_dist` of the ego.
fn in_window(cam: &CameraModel, ego: &Pose, p: Vec2, max_dist: f64) -> Option<((f64, f64), f64)> {
    let d = Vec2::new(ego.x, ego.y).dist(p);
    if d > max_dist {
        return None;
    }
    let target = Pose::new(p.x, p.y, 0.0, 0.0);
    project_pose(cam, ego, &target).map(|uv| (uv, d))
}

/// The drivable affordances visible from `ego`, derived from geometry alone.
///
/// Turning classes: the nearest upcoming fillet of that direction, if any of
/// its points fall in the window. Distance is zero while inside the fillet,
/// otherwise the straight-line gap to its first windowed point; attention is
/// the mean projection of the windowed points. The straight class follows
/// the route until the next turn entry and continues through the junction
/// along its stub; its attention sits on the farthest windowed point.
pub fn ground_truth_frame(
    world: &RoadGraph,
    path: &SmoothedPath,
    cam: &CameraModel,
    frame_id: &str,
    ego: &Pose,
    max_dist: f64,
) -> CompleteAffordance {
    let ego_pt = Vec2::new(ego.x, ego.y);
    let s_ego = path.project(ego_pt);
    let spans = path.turn_spans();
    let mut classes: [ClassPrediction; 3] = Default::default();

    for span in &spans {
        if span.end_arc <= s_ego {
            continue; // already completed
        }
        // Arc distance bounds straight-line distance from a point near the
        // path, so spans far past the window can't contribute.
        if span.start_arc - s_ego > 2.0 * max_dist + 10.0 {
            continue;
        }
        let idx = span.action.index();
        if classes[idx].present {
            continue; // a nearer fillet of this direction already matched
        }
        let from = span.start_arc.max(s_ego);
        let mut uvs: Vec<(f64, f64)> = Vec::new();
        let mut first_dist = None;
        let mut s = from;
        while s <= span.end_arc + 1e-9 {
            let (p, _) = path.sample(s.min(span.end_arc));
            if let Some((uv, d)) = in_window(cam, ego, p, max_dist) {
                uvs.push(uv);
                first_dist.get_or_insert(d);
            }
            s += SAMPLE_STEP;
        }
        if let Some(first) = first_dist {
            let inside = s_ego >= span.start_arc - 1e-9;
            let n = uvs.len() as f64;
            let mean = uvs
                .iter()
                .fold((0.0, 0.0), |acc, uv| (acc.0 + uv.0 / n, acc.1 + uv.1 / n));
            classes[idx] = ClassPrediction {
                present: true,
                score: 1.0,
                attention_center: Some(mean),
                distance: Some(if inside { 0.0 } else { first }),
            };
        }
    }

    // Straight candidates: route points up to the next turn entry, then the
    // continuation line through that junction onto its stub.
    let next_entry = spans
        .iter()
        .find(|sp| sp.start_arc > s_ego + 1e-9)
        .map(|sp| sp.start_arc);
    let route_limit = next_entry
        .unwrap_or(path.total_len())
        .min(s_ego + max_dist + 15.0);
    let mut best: Option<((f64, f64), f64)> = None;
    let mut s = s_ego + SAMPLE_STEP;
    while s <= route_limit + 1e-9 {
        let (p, _) = path.sample(s.min(route_limit));
        if matches!(path.kind_at(s.min(route_limit)), PathKind::Straight) {
            if let Some((uv, d)) = in_window(cam, ego, p, max_dist) {
                if best.as_ref().is_none_or(|(_, bd)| d > *bd) {
                    best = Some((uv, d));
                }
            }
        }
        s += SAMPLE_STEP;
    }
    if let Some(entry) = next_entry {
        let span = spans.iter().find(|sp| sp.start_arc == entry).unwrap();
        let (entry_pt, heading) = path.sample(entry);
        let dir = Vec2::from_angle(heading);
        if let Some(stub_len) = stub_length(world, span.junction, dir) {
            let node = world.nodes[span.junction];
            let reach = node.sub(entry_pt).norm() + stub_len;
            let mut t = SAMPLE_STEP;
            while t <= reach + 1e-9 {
                let p = entry_pt.add(dir.scale(t.min(reach)));
                if let Some((uv, d)) = in_window(cam, ego, p, max_dist) {
                    if best.as_ref().is_none_or(|(_, bd)| d > *bd) {
                        best = Some((uv, d));
                    }
                }
                t += SAMPLE_STEP;
            }
        }
    }
    if let Some((uv, d)) = best {
        classes[1] = ClassPrediction {
            present: true,
            score: 1.0,
            attention_center: Some(uv),
            distance: Some(d),
        };
    }

    CompleteAffordance {
        frame_id: frame_id.to_string(),
        classes,
    }
}

/// Length of the non-route edge leaving `junction` in direction `dir`,
/// if one exists (the straight-through stub of a T junction).
fn stub_length(world: &RoadGraph, junction: usize, dir: Vec2) -> Option<f64> {
    let node = world.nodes[junction];
    for (i, e) in world.edges.iter().enumerate() {
        if world.route_edges.contains(&i) {
            continue;
        }
        let other = if e.a == junction {
            e.b
        } else if e.b == junction {
            e.a
        } else {
            continue;
        };
        let arm = world.nodes[other].sub(node);
        let len = arm.norm();
        if len > 1e-9 && arm.scale(1.0 / len).dot(dir) > 0.9 {
            return Some(len);
        }
    }
    None
}

/// Ground truth for every listed pose of a trajectory.
pub fn ground_truth_for_frames(
    world: &RoadGraph,
    path: &SmoothedPath,
    cam: &CameraModel,
    poses: &[(String, Pose)],
    max_dist: f64,
) -> Vec<CompleteAffordance> {
    poses
        .iter()
        .map(|(frame_id, pose)| ground_truth_frame(world, path, cam, frame_id, pose, max_dist))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdphmm::Action;
    use crate::synthgen::world::{generate_world, WorldSpec};

    const TURN_RADIUS: f64 = 6.0;
    const MAX_DIST: f64 = 15.0;

    fn setup(seed: u64, junctions: usize) -> (RoadGraph, SmoothedPath) {
        let spec = WorldSpec {
            junctions,
            ..WorldSpec::default()
        };
        let world = generate_world(seed, &spec).unwrap();
        let route = world.route_edges.clone();
        let path = SmoothedPath::from_route(&world, &route, TURN_RADIUS).unwrap();
        (world, path)
    }

    fn ego_at(path: &SmoothedPath, s: f64) -> Pose {
        let (p, heading) = path.sample(s);
        Pose::new(p.x, p.y, heading, 0.0)
    }

    #[test]
    fn approach_sees_turn_and_straight() {
        let (world, path) = setup(11, 4);
        let cam = CameraModel::default();
        let span = path.turn_spans()[0];
        let ego = ego_at(&path, span.start_arc - 10.0);
        let gt = ground_truth_frame(&world, &path, &cam, "f0", &ego, MAX_DIST);

        let turn = &gt.classes[span.action.index()];
        assert!(turn.present);
        let d = turn.distance.unwrap();
        assert!((9.5..=10.5).contains(&d), "turn distance {d}");
        let (u, _) = turn.attention_center.unwrap();
        match span.action {
            Action::Left => assert!(u < cam.principal_point.0),
            Action::Right => assert!(u > cam.principal_point.0),
            Action::Straight => unreachable!(),
        }

        assert!(gt.classes[1].present, "straight-through stub in window");
        let other = span.action.mirrored().index();
        assert!(!gt.classes[other].present, "opposite turn out of range");
    }

    #[test]
    fn inside_turn_distance_is_zero() {
        let (world, path) = setup(12, 4);
        let cam = CameraModel::default();
        let span = path.turn_spans()[0];
        let mid = 0.5 * (span.start_arc + span.end_arc);
        let gt = ground_truth_frame(&world, &path, &cam, "f0", &ego_at(&path, mid), MAX_DIST);
        let turn = &gt.classes[span.action.index()];
        assert!(turn.present);
        assert_eq!(turn.distance.unwrap(), 0.0);
    }

    #[test]
    fn distant_turn_is_absent() {
        let (world, path) = setup(13, 4);
        let cam = CameraModel::default();
        let span = path.turn_spans()[0];
        let ego = ego_at(&path, span.start_arc - 25.0);
        let gt = ground_truth_frame(&world, &path, &cam, "f0", &ego, MAX_DIST);
        assert!(!gt.classes[0].present);
        assert!(!gt.classes[2].present);
        let straight = &gt.classes[1];
        assert!(straight.present);
        // Attention sits on the farthest windowed point of a clear leg.
        let d = straight.distance.unwrap();
        assert!(
            (5.0..=MAX_DIST + 1e-9).contains(&d),
            "straight distance {d}"
        );
    }

    #[test]
    fn past_last_junction_only_straight_remains() {
        let (world, path) = setup(14, 2);
        let cam = CameraModel::default();
        let last = *path.turn_spans().last().unwrap();
        let ego = ego_at(&path, last.end_arc + 5.0);
        let gt = ground_truth_frame(&world, &path, &cam, "f0", &ego, MAX_DIST);
        assert!(!gt.classes[0].present);
        assert!(!gt.classes[2].present);
        assert!(gt.classes[1].present);
    }

    #[test]
    fn zero_junction_world_is_straight_everywhere() {
        let (world, path) = setup(15, 0);
        let cam = CameraModel::default();
        for k in 0..5 {
            let s = path.total_len() * k as f64 / 6.0;
            let gt = ground_truth_frame(&world, &path, &cam, "f", &ego_at(&path, s), MAX_DIST);
            assert!(gt.classes[1].present, "sample {k}");
            assert!(!gt.classes[0].present && !gt.classes[2].present);
        }
    }
}
