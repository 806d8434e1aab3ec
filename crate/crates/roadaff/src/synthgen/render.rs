//! Analytic ground-plane rendering.
//!
//! Each pixel's ray is intersected with the ground plane and the hit point
//! is scored against the road graph. No rasterizer, no textures: channel 0
//! is the road mask, channel 1 shades distance to the nearest centerline,
//! channel 2 encodes proximity to a junction. The channels are simple on
//! purpose; what the learning stage has to discover is where to look, not
//! how to see.

use serde::{Deserialize, Serialize};

use super::world::RoadGraph;
use crate::annotation::CameraModel;
use crate::geom::{point_segment_distance, Vec2};
use crate::trajectory::Pose;

/// Ground radius around a junction node with a nonzero proximity signal.
pub const JUNCTION_RADIUS: f64 = 12.0;
/// Ground hits beyond this range render as background.
const MAX_GROUND_RANGE: f64 = 300.0;

/// Channel-planar image: `values[(c * height + y) * width + x]`, all values
/// in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.values[i] = v;
    }

    /// Copy the `w` x `h` window with top-left corner (`left`, `top`).
    pub fn crop(&self, left: usize, top: usize, w: usize, h: usize) -> Image {
        assert!(left + w <= self.width && top + h <= self.height);
        let mut out = Image::new(w, h, self.channels);
        for c in 0..self.channels {
            for y in 0..h {
                let src = self.idx(c, top + y, left);
                let dst = out.idx(c, y, 0);
                out.values[dst..dst + w].copy_from_slice(&self.values[src..src + w]);
            }
        }
        out
    }

    /// Horizontal flip.
    pub fn mirrored(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    let v = self.get(c, y, x);
                    out.set(c, y, self.width - 1 - x, v);
                }
            }
        }
        out
    }

    pub fn mean_channel(&self, c: usize) -> f64 {
        let plane = &self.values[c * self.width * self.height..(c + 1) * self.width * self.height];
        plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64
    }
}

/// Render the world as seen from `ego` through the mounted camera.
///
/// Per pixel: back-project through the pinhole onto the ground plane,
/// transform into world coordinates, and evaluate road distance fields.
/// Rays at or above the horizon (or past the range cap) stay zero.
pub fn render_frame(cam: &CameraModel, world: &RoadGraph, ego: &Pose) -> Image {
    let (w, h) = cam.image_size;
    let mut img = Image::new(w, h, 3);
    let (sp, cp) = cam.mount_pitch.sin_cos();
    let (se, ce) = ego.heading.sin_cos();
    let f = cam.focal_px;
    let (u0, v0) = cam.principal_point;

    let segments: Vec<(Vec2, Vec2, f64)> = world
        .edges
        .iter()
        .map(|e| (world.nodes[e.a], world.nodes[e.b], e.width))
        .collect();
    let junction_pts: Vec<Vec2> = world.junctions.iter().map(|&j| world.nodes[j]).collect();

    let plane = w * h;
    for y in 0..h {
        let yc = (y as f64 - v0) / f;
        let denom = cp * yc + sp;
        if denom <= 1e-9 {
            continue; // horizon and sky
        }
        let t = cam.mount_height / denom;
        if t > MAX_GROUND_RANGE {
            continue;
        }
        // Forward ground coordinate is shared by the whole row.
        let xv = cam.mount_offset + t * (cp - sp * yc);
        let row = y * w;
        for x in 0..w {
            let xc = (x as f64 - u0) / f;
            let yv = -t * xc;
            let p = Vec2::new(ego.x + ce * xv - se * yv, ego.y + se * xv + ce * yv);

            let mut d_road = f64::MAX;
            let mut width_at = 1.0f64;
            for (a, b, width) in &segments {
                let (d, _) = point_segment_distance(p, *a, *b);
                if d < d_road {
                    d_road = d;
                    width_at = *width;
                }
            }
            let half = width_at / 2.0;
            if d_road <= half {
                img.values[row + x] = 1.0;
                img.values[plane + row + x] = (1.0 - d_road / half) as f32;
                let mut d_junction = f64::MAX;
                for jp in &junction_pts {
                    d_junction = d_junction.min(p.dist(*jp));
                }
                if d_junction < JUNCTION_RADIUS {
                    img.values[2 * plane + row + x] = (1.0 - d_junction / JUNCTION_RADIUS) as f32;
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::project_pose;
    use crate::synthgen::world::{generate_world, WorldSpec};

    fn cam() -> CameraModel {
        CameraModel::default()
    }

    fn ego_at_route_start(world: &RoadGraph) -> Pose {
        let a = world.nodes[world.edges[0].a];
        let b = world.nodes[world.edges[0].b];
        let heading = b.sub(a).angle();
        Pose::new(a.x, a.y, heading, 0.0)
    }

    #[test]
    fn straight_world_has_no_junction_signal() {
        let spec = WorldSpec {
            junctions: 0,
            ..WorldSpec::default()
        };
        let w = generate_world(1, &spec).unwrap();
        let img = render_frame(&cam(), &w, &ego_at_route_start(&w));
        assert_eq!(img.mean_channel(2), 0.0);
        // But the road itself is in view.
        assert!(img.mean_channel(0) > 0.05);
    }

    #[test]
    fn road_points_project_onto_road_pixels() {
        let spec = WorldSpec {
            junctions: 0,
            ..WorldSpec::default()
        };
        let w = generate_world(2, &spec).unwrap();
        let ego = ego_at_route_start(&w);
        let c = cam();
        let img = render_frame(&c, &w, &ego);
        let dir = Vec2::from_angle(ego.heading);
        for k in 0..30 {
            let ahead = 5.0 + 0.5 * k as f64;
            // A point on the centerline, and one 1.5 m to the side (still
            // half a lane inside the 3 m half-width).
            for lateral in [0.0, 1.5, -1.5] {
                let p = Vec2::new(ego.x, ego.y)
                    .add(dir.scale(ahead))
                    .add(dir.perp().scale(lateral));
                let target = Pose::new(p.x, p.y, 0.0, 0.0);
                let (u, v) = project_pose(&c, &ego, &target).expect("point visible");
                let (px, py) = (u.round() as usize, v.round() as usize);
                assert_eq!(
                    img.get(0, py, px),
                    1.0,
                    "road point {ahead} m ahead, {lateral} m lateral -> ({px},{py})"
                );
            }
        }
    }

    #[test]
    fn sky_rows_stay_zero() {
        let w = generate_world(3, &WorldSpec::default()).unwrap();
        let c = cam();
        let img = render_frame(&c, &w, &ego_at_route_start(&w));
        // Horizon row for the default mount: v0 - f*tan(pitch) = 111.7.
        for y in 0..100 {
            for x in (0..img.width).step_by(17) {
                for ch in 0..3 {
                    assert_eq!(img.get(ch, y, x), 0.0, "sky pixel ({x},{y}) ch {ch}");
                }
            }
        }
    }

    #[test]
    fn junction_ahead_raises_channel_two() {
        let w = generate_world(4, &WorldSpec::default()).unwrap();
        let c = cam();
        let far = ego_at_route_start(&w);
        let img_far = render_frame(&c, &w, &far);

        // 10 m short of the first junction, looking straight at it.
        let j = w.nodes[w.junctions[0]];
        let a = w.nodes[w.edges[0].a];
        let dir = j.sub(a).scale(1.0 / j.sub(a).norm());
        let near_pt = j.sub(dir.scale(10.0));
        let near = Pose::new(near_pt.x, near_pt.y, dir.angle(), 0.0);
        let img_near = render_frame(&c, &w, &near);

        assert!(img_near.mean_channel(2) > 4.0 * img_far.mean_channel(2) + 1e-6);
    }

    #[test]
    fn rendering_is_deterministic() {
        let w = generate_world(5, &WorldSpec::default()).unwrap();
        let ego = ego_at_route_start(&w);
        let a = render_frame(&cam(), &w, &ego);
        let b = render_frame(&cam(), &w, &ego);
        assert_eq!(a, b);
    }

    #[test]
    fn crop_and_mirror_roundtrip() {
        let w = generate_world(6, &WorldSpec::default()).unwrap();
        let img = render_frame(&cam(), &w, &ego_at_route_start(&w));
        let crop = img.crop(100, 90, 224, 224);
        assert_eq!(crop.width, 224);
        assert_eq!(crop.height, 224);
        assert_eq!(crop.get(1, 10, 20), img.get(1, 100, 120));
        let twice = img.mirrored().mirrored();
        assert_eq!(img, twice);
        let m = img.mirrored();
        assert_eq!(m.get(0, 150, 0), img.get(0, 150, img.width - 1));
    }
}
