//! Small planar geometry helpers shared across modules.

use std::f64::consts::{PI, TAU};

/// Wrap an angle into (-pi, pi].
pub fn wrap_to_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Serialized as a plain `(x, y)` pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<(f64, f64)> for Vec2 {
    fn from((x, y): (f64, f64)) -> Self {
        Vec2 { x, y }
    }
}

impl From<Vec2> for (f64, f64) {
    fn from(v: Vec2) -> Self {
        (v.x, v.y)
    }
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_angle(a: f64) -> Vec2 {
        Vec2::new(a.cos(), a.sin())
    }
}

/// Distance from point `p` to the segment `a`..`b`, together with the
/// clamped parameter t in [0, 1] of the closest point.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (p.dist(a), 0.0);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    let closest = a.add(ab.scale(t));
    (p.dist(closest), t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        // Oracle: the wrapped angle is the complex argument of e^{i a}.
        let cases = [
            0.0, 0.5, -0.5, 3.0, -3.0, 3.2, -3.2, 6.4, -6.4, 12.9, -12.9, 100.0,
        ];
        for &a in &cases {
            let w = wrap_to_pi(a);
            assert!(w > -PI && w <= PI, "wrap({a}) = {w} out of range");
            let oracle = a.sin().atan2(a.cos());
            assert!(
                (w - oracle).abs() < 1e-12,
                "wrap({a}) = {w}, oracle {oracle}"
            );
        }
    }

    #[test]
    fn wrap_keeps_pi_positive() {
        assert_eq!(wrap_to_pi(PI), PI);
        assert_eq!(wrap_to_pi(-PI), PI);
    }

    #[test]
    fn segment_distance_clamps_to_endpoints() {
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(10.0, 0.0);
        let (d, t) = point_segment_distance(Vec2::new(5.0, 3.0), a, b);
        assert!((d - 3.0).abs() < 1e-12);
        assert!((t - 0.5).abs() < 1e-12);
        let (d, t) = point_segment_distance(Vec2::new(-4.0, 3.0), a, b);
        assert!((d - 5.0).abs() < 1e-12);
        assert_eq!(t, 0.0);
        let (d, t) = point_segment_distance(Vec2::new(13.0, 4.0), a, b);
        assert!((d - 5.0).abs() < 1e-12);
        assert_eq!(t, 1.0);
    }
}
