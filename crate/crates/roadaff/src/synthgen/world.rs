//! Synthetic road-network generation.
//!
//! Worlds are staircase corridors: straight legs joined at T-junctions where
//! the route bends 90 degrees while a stub road continues straight through.
//! Alternating bend directions keep the corridor self-intersection free, and
//! every junction meets the pairwise 30-degree branch-angle floor by
//! construction (arms at 90/90/180 degrees).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_to_pi, Vec2};
use crate::rng::seeded_rng;
use rand::Rng;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadGraph {
    pub nodes: Vec<Vec2>,
    pub edges: Vec<Edge>,
    /// Node indices with at least three incident edges.
    pub junctions: Vec<usize>,
    /// Edge indices of the demonstration corridor, in drive order. The
    /// generator lays these out first; stubs follow.
    pub route_edges: Vec<usize>,
}

impl RoadGraph {
    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.a == node || e.b == node)
            .count()
    }

    /// Directions of incident edges, pointing away from the node.
    fn arm_directions(&self, node: usize) -> Vec<Vec2> {
        let mut dirs = Vec::new();
        for e in &self.edges {
            let (from, to) = if e.a == node {
                (e.a, e.b)
            } else if e.b == node {
                (e.b, e.a)
            } else {
                continue;
            };
            let d = self.nodes[to].sub(self.nodes[from]);
            let n = d.norm();
            if n > 0.0 {
                dirs.push(d.scale(1.0 / n));
            }
        }
        dirs
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() < 2 || self.edges.is_empty() {
            return Err(Error::InvalidConfig("world needs at least one road".into()));
        }
        if self.edges.iter().any(|e| !(e.width > 0.0)) {
            return Err(Error::InvalidConfig("edge widths must be positive".into()));
        }
        // Connectivity by flood fill over shared nodes.
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.edges[0].a];
        seen[self.edges[0].a] = true;
        while let Some(n) = stack.pop() {
            for e in &self.edges {
                for m in [e.a, e.b] {
                    if (e.a == n || e.b == n) && !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidConfig("road graph is disconnected".into()));
        }
        // Junction bookkeeping and branch-angle floor.
        let computed: Vec<usize> = (0..self.nodes.len())
            .filter(|&n| self.degree(n) >= 3)
            .collect();
        if computed != self.junctions {
            return Err(Error::InvalidConfig(
                "junction list does not match node degrees".into(),
            ));
        }
        let min_angle = 30.0f64.to_radians() - 1e-9;
        for &j in &self.junctions {
            let dirs = self.arm_directions(j);
            for i in 0..dirs.len() {
                for k in i + 1..dirs.len() {
                    let angle = wrap_to_pi(dirs[k].angle() - dirs[i].angle()).abs();
                    if angle < min_angle {
                        return Err(Error::InvalidConfig(format!(
                            "junction {j}: branch angle {:.1} deg below 30",
                            angle.to_degrees()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub junctions: usize,
    pub leg_min: f64,
    pub leg_max: f64,
    pub stub_len: f64,
    pub road_width: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            junctions: 4,
            leg_min: 40.0,
            leg_max: 55.0,
            stub_len: 12.0,
            road_width: 6.0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.leg_min > 0.0) || self.leg_max < self.leg_min {
            return Err(Error::InvalidConfig(
                "leg length range must satisfy 0 < min <= max".into(),
            ));
        }
        if !(self.road_width > 0.0) || !(self.stub_len > 0.0) {
            return Err(Error::InvalidConfig(
                "road width and stub length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic staircase world. Junction k sits at the end of leg k; the
/// route turns 90 degrees there (sides alternate, first side from the seed)
/// and a stub carries the incoming direction straight through.
pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<RoadGraph> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let first_left = rng.random::<bool>();

    let mut heading: f64 = 0.0;
    let mut nodes = vec![Vec2::new(0.0, 0.0)];
    let mut headings_in = Vec::new(); // incoming heading at each junction
    for k in 0..=spec.junctions {
        let len = rng.random_range(spec.leg_min..=spec.leg_max);
        let tail = *nodes.last().unwrap();
        nodes.push(tail.add(Vec2::from_angle(heading).scale(len)));
        if k < spec.junctions {
            headings_in.push(heading);
            let left = first_left == (k % 2 == 0);
            heading += if left {
                std::f64::consts::FRAC_PI_2
            } else {
                -std::f64::consts::FRAC_PI_2
            };
        }
    }

    let mut edges: Vec<Edge> = (0..=spec.junctions)
        .map(|k| Edge {
            a: k,
            b: k + 1,
            width: spec.road_width,
        })
        .collect();
    let route_edges: Vec<usize> = (0..edges.len()).collect();

    for k in 0..spec.junctions {
        let junction_node = k + 1;
        let tip = nodes[junction_node].add(Vec2::from_angle(headings_in[k]).scale(spec.stub_len));
        nodes.push(tip);
        edges.push(Edge {
            a: junction_node,
            b: nodes.len() - 1,
            width: spec.road_width,
        });
    }

    let junctions: Vec<usize> = if spec.junctions > 0 {
        (1..=spec.junctions).collect()
    } else {
        Vec::new()
    };
    let world = RoadGraph {
        nodes,
        edges,
        junctions,
        route_edges,
    };
    world.validate()?;
    Ok(world)
}
