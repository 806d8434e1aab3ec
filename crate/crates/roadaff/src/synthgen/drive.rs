//! Drive simulation over a road graph.
//!
//! A route (edge list) becomes a smoothed path: straight legs joined by
//! circular fillets at the bends. The simulated vehicle tracks the path at a
//! nominal speed with slowly varying lateral, heading, and speed noise, so
//! repeated runs differ the way human demonstrations do.

use serde::{Deserialize, Serialize};

use super::world::RoadGraph;
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, wrap_to_pi, Vec2};
use crate::hdphmm::Action;
use crate::rng::seeded_rng;
use crate::trajectory::{Pose, Trajectory};
use rand_distr::{Distribution, Normal};

/// Fillet radius every demonstration uses to round route corners.
pub const TURN_RADIUS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathKind {
    Straight,
    Turn(Action),
}

#[derive(Debug, Clone)]
enum SegGeom {
    Line {
        a: Vec2,
        b: Vec2,
    },
    /// Circular fillet: `sweep` is the signed swept angle from `start_angle`
    /// (positive = counter-clockwise = left).
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

#[derive(Debug, Clone)]
struct PathSeg {
    start_arc: f64,
    end_arc: f64,
    kind: PathKind,
    geom: SegGeom,
    /// Junction node a turn fillet belongs to.
    junction: Option<usize>,
}

/// Fillet-smoothed centerline of a route, parameterized by arc length.
#[derive(Debug, Clone)]
pub struct SmoothedPath {
    segs: Vec<PathSeg>,
    total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnSpan {
    pub start_arc: f64,
    pub end_arc: f64,
    pub action: Action,
    pub junction: usize,
}

impl SmoothedPath {
    /// Orient the route's edges into a node polyline and fillet every bend.
    pub fn from_route(world: &RoadGraph, route: &[usize], turn_radius: f64) -> Result<Self> {
        if route.is_empty() {
            return Err(Error::DisconnectedRoute("route has no edges".into()));
        }
        for &e in route {
            if e >= world.edges.len() {
                return Err(Error::DisconnectedRoute(format!("edge {e} out of range")));
            }
        }
        let mut nodes: Vec<usize> = Vec::with_capacity(route.len() + 1);
        if route.len() == 1 {
            nodes.push(world.edges[route[0]].a);
            nodes.push(world.edges[route[0]].b);
        } else {
            let first = &world.edges[route[0]];
            let second = &world.edges[route[1]];
            let shared = if first.b == second.a || first.b == second.b {
                first.b
            } else if first.a == second.a || first.a == second.b {
                first.a
            } else {
                return Err(Error::DisconnectedRoute(
                    "first two route edges share no node".into(),
                ));
            };
            nodes.push(first.a + first.b - shared);
            nodes.push(shared);
            for (i, &e) in route.iter().enumerate().skip(1) {
                let edge = &world.edges[e];
                let head = *nodes.last().unwrap();
                let next = if edge.a == head {
                    edge.b
                } else if edge.b == head {
                    edge.a
                } else {
                    return Err(Error::DisconnectedRoute(format!(
                        "route edge {i} does not continue from node {head}"
                    )));
                };
                nodes.push(next);
            }
        }

        let pts: Vec<Vec2> = nodes.iter().map(|&n| world.nodes[n]).collect();
        let mut segs: Vec<PathSeg> = Vec::new();
        let mut arc = 0.0;
        let mut cursor = pts[0];
        for i in 1..pts.len() {
            let leg_end = pts[i];
            let is_last = i == pts.len() - 1;
            let (trim, bend) = if is_last {
                (0.0, None)
            } else {
                let d_in = leg_end.sub(pts[i - 1]);
                let d_out = pts[i + 1].sub(leg_end);
                let h_in = d_in.angle();
                let sweep = wrap_to_pi(d_out.angle() - h_in);
                if sweep.abs() < 1e-9 {
                    (0.0, None)
                } else {
                    (turn_radius * (sweep.abs() / 2.0).tan(), Some((h_in, sweep)))
                }
            };

            let dir = leg_end.sub(cursor);
            let len = dir.norm();
            if len <= trim + 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "route leg {i} too short for turn radius {turn_radius}"
                )));
            }
            let dir = dir.scale(1.0 / len);
            let line_end = leg_end.sub(dir.scale(trim));
            let line_len = line_end.sub(cursor).norm();
            segs.push(PathSeg {
                start_arc: arc,
                end_arc: arc + line_len,
                kind: PathKind::Straight,
                geom: SegGeom::Line {
                    a: cursor,
                    b: line_end,
                },
                junction: None,
            });
            arc += line_len;
            cursor = line_end;

            if let Some((h_in, sweep)) = bend {
                let side = if sweep > 0.0 { 1.0 } else { -1.0 };
                let entry = cursor;
                let center = entry.add(Vec2::from_angle(h_in).perp().scale(turn_radius * side));
                let start_angle = entry.sub(center).angle();
                let arc_len = turn_radius * sweep.abs();
                let action = if sweep > 0.0 {
                    Action::Left
                } else {
                    Action::Right
                };
                segs.push(PathSeg {
                    start_arc: arc,
                    end_arc: arc + arc_len,
                    kind: PathKind::Turn(action),
                    geom: SegGeom::Arc {
                        center,
                        radius: turn_radius,
                        start_angle,
                        sweep,
                    },
                    junction: Some(nodes[i]),
                });
                arc += arc_len;
                cursor = center.add(Vec2::from_angle(start_angle + sweep).scale(turn_radius));
            }
        }
        Ok(SmoothedPath { segs, total: arc })
    }

    pub fn total_len(&self) -> f64 {
        self.total
    }

    /// Position and tangent heading at arc position `s` (clamped).
    pub fn sample(&self, s: f64) -> (Vec2, f64) {
        let s = s.clamp(0.0, self.total);
        let seg = self.seg_at(s);
        let t = s - seg.start_arc;
        match &seg.geom {
            SegGeom::Line { a, b } => {
                let d = b.sub(*a);
                let len = d.norm();
                let dir = d.scale(1.0 / len);
                (a.add(dir.scale(t)), dir.angle())
            }
            SegGeom::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let ang = start_angle + sweep.signum() * t / radius;
                let pos = center.add(Vec2::from_angle(ang).scale(*radius));
                let heading = ang + sweep.signum() * std::f64::consts::FRAC_PI_2;
                (pos, wrap_to_pi(heading))
            }
        }
    }

    pub fn kind_at(&self, s: f64) -> PathKind {
        self.seg_at(s.clamp(0.0, self.total)).kind
    }

    fn seg_at(&self, s: f64) -> &PathSeg {
        for seg in &self.segs {
            if s < seg.end_arc {
                return seg;
            }
        }
        self.segs.last().unwrap()
    }

    pub fn turn_spans(&self) -> Vec<TurnSpan> {
        self.segs
            .iter()
            .filter_map(|seg| match seg.kind {
                PathKind::Turn(action) => Some(TurnSpan {
                    start_arc: seg.start_arc,
                    end_arc: seg.end_arc,
                    action,
                    junction: seg.junction.unwrap(),
                }),
                PathKind::Straight => None,
            })
            .collect()
    }

    /// Arc position of the point on the path closest to `p`.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::MAX, 0.0);
        for seg in &self.segs {
            let (dist, s) = match &seg.geom {
                SegGeom::Line { a, b } => {
                    let (d, t) = point_segment_distance(p, *a, *b);
                    (d, seg.start_arc + t * (seg.end_arc - seg.start_arc))
                }
                SegGeom::Arc {
                    center,
                    radius,
                    start_angle,
                    sweep,
                } => {
                    let rel = wrap_to_pi(p.sub(*center).angle() - start_angle);
                    let along = if *sweep > 0.0 {
                        rel.clamp(0.0, *sweep)
                    } else {
                        rel.clamp(*sweep, 0.0)
                    };
                    let closest = center.add(Vec2::from_angle(start_angle + along).scale(*radius));
                    (p.dist(closest), seg.start_arc + along.abs() * radius)
                }
            };
            if dist < best.0 {
                best = (dist, s);
            }
        }
        best.1
    }
}

/// Standard deviations of the slowly varying disturbance processes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveNoise {
    pub lateral_std: f64,
    pub heading_std: f64,
    pub speed_std: f64,
}

impl Default for DriveNoise {
    fn default() -> Self {
        DriveNoise {
            lateral_std: 0.15,
            heading_std: 0.02,
            speed_std: 0.3,
        }
    }
}

impl DriveNoise {
    pub fn zero() -> Self {
        DriveNoise {
            lateral_std: 0.0,
            heading_std: 0.0,
            speed_std: 0.0,
        }
    }
}

pub const DRIVE_DT: f64 = 0.1;
pub const NOMINAL_SPEED: f64 = 3.0;

/// Drive the route at 10 Hz. Disturbances follow AR(1) processes
/// (persistence 0.95) so they wander like steering corrections instead of
/// flickering per sample; speed never drops below 0.5 m/s, keeping pose
/// spacing positive.
pub fn simulate_drive(
    world: &RoadGraph,
    route: &[usize],
    noise: &DriveNoise,
    seed: u64,
    run_id: &str,
) -> Result<Trajectory> {
    let path = SmoothedPath::from_route(world, route, TURN_RADIUS)?;
    let mut rng = seeded_rng(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let rho: f64 = 0.95;
    let innov = (1.0 - rho * rho).sqrt();
    // Start each disturbance at its stationary distribution.
    let mut e_lat = noise.lateral_std * std_normal.sample(&mut rng);
    let mut e_head = noise.heading_std * std_normal.sample(&mut rng);
    let mut e_speed = noise.speed_std * std_normal.sample(&mut rng);

    let mut poses = Vec::new();
    let mut s = 0.0;
    let mut step = 0usize;
    while s <= path.total_len() {
        let (pos, heading) = path.sample(s);
        let offset = Vec2::from_angle(heading).perp().scale(e_lat);
        poses.push(Pose::new(
            pos.x + offset.x,
            pos.y + offset.y,
            heading + e_head,
            step as f64 * DRIVE_DT,
        ));
        let v = (NOMINAL_SPEED + e_speed).max(0.5);
        s += v * DRIVE_DT;
        step += 1;
        e_lat = rho * e_lat + noise.lateral_std * innov * std_normal.sample(&mut rng);
        e_head = rho * e_head + noise.heading_std * innov * std_normal.sample(&mut rng);
        e_speed = rho * e_speed + noise.speed_std * innov * std_normal.sample(&mut rng);
    }
    Trajectory::new(run_id, poses)
}
