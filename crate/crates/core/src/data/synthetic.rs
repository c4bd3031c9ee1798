//! Synthetic corpora from shortest paths between random boundary points.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::{obstacle_shapes, GridGraph, ObstacleShape};
use super::{DataError, Result, TrajectoryDataset};
use crate::topology::{h_signature_with, Environment, Obstacle, Point2, Rect, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub resolution: f64,
    pub num_trajs: usize,
    pub seed: u64,
    /// Waypoint noise std in meters. `None` means 0.05 x resolution.
    pub noise_std: Option<f64>,
    /// Disc radius for obstacles without a polygon.
    pub obstacle_radius: f64,
    /// Walking speed used to turn arc length into timestamps (m/s).
    pub speed: f64,
    /// Endpoint pairs tried per trajectory before giving up.
    pub max_retries: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { resolution: 0.25, num_trajs: 500, seed: 0, noise_std: None, obstacle_radius: 0.5, speed: 1.2, max_retries: 100 }
    }
}

impl SyntheticConfig {
    pub fn effective_noise_std(&self) -> f64 {
        self.noise_std.unwrap_or(0.05 * self.resolution)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.resolution > 0.0
            && self.resolution.is_finite()
            && self.effective_noise_std() >= 0.0
            && self.obstacle_radius >= 0.0
            && self.speed > 0.0
            && self.max_retries > 0;
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidParameter(format!("bad synthetic config {self:?}")))
        }
    }
}

fn segment_blocked(shapes: &[ObstacleShape], a: &Point2, b: &Point2) -> bool {
    shapes.iter().any(|s| s.intersects_segment(a, b))
}

/// Jitters interior waypoints. A perturbation is kept only if the point stays
/// inside the boundary and both adjacent segments stay clear of obstacles.
fn perturb(
    points: &mut [Point2],
    shapes: &[ObstacleShape],
    boundary: &Rect,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) {
    const ATTEMPTS: usize = 5;
    for i in 1..points.len().saturating_sub(1) {
        for _ in 0..ATTEMPTS {
            let q = Point2::new(points[i].x + noise.sample(rng), points[i].y + noise.sample(rng));
            if boundary.contains(&q)
                && !segment_blocked(shapes, &points[i - 1], &q)
                && !segment_blocked(shapes, &q, &points[i + 1])
            {
                points[i] = q;
                break;
            }
        }
    }
}

fn timestamps_by_arc_length(points: &[Point2], speed: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    t.push(0.0);
    for w in points.windows(2) {
        acc += w[0].distance(&w[1]).max(1e-9) / speed;
        t.push(acc);
    }
    t
}

/// Shortest lattice paths from random left-boundary nodes to random nodes on
/// the other three boundaries, with jittered interior waypoints, labelled by
/// their h-signatures.
pub fn generate_synthetic(env: &Environment, config: &SyntheticConfig) -> Result<TrajectoryDataset> {
    config.validate()?;
    let shapes = obstacle_shapes(env, config.obstacle_radius);
    let graph = GridGraph::new(env, config.resolution, &shapes);
    let starts = graph.left_boundary_nodes();
    let ends = graph.other_boundary_nodes();
    if config.num_trajs > 0 && (starts.is_empty() || ends.is_empty()) {
        return Err(DataError::Disconnected(0));
    }
    let noise_std = config.effective_noise_std();
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trajectories = Vec::with_capacity(config.num_trajs);
    for _ in 0..config.num_trajs {
        let mut path = None;
        for _ in 0..config.max_retries {
            let s = starts[rng.gen_range(0..starts.len())];
            let e = ends[rng.gen_range(0..ends.len())];
            if let Some(p) = graph.dijkstra(s).path_to(e) {
                path = Some(p);
                break;
            }
        }
        let path = path.ok_or(DataError::Disconnected(config.max_retries))?;
        let mut points: Vec<Point2> = path.iter().map(|&i| graph.position(i)).collect();
        if noise_std > 0.0 {
            perturb(&mut points, &shapes, env.boundary(), &noise, &mut rng);
        }
        let times = timestamps_by_arc_length(&points, config.speed);
        trajectories.push(Trajectory::new(points, times)?);
    }
    let labels = trajectories
        .iter()
        .map(|t| h_signature_with(t, env, None))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(TrajectoryDataset {
        environment: env.clone(),
        ids: (0..trajectories.len() as u64).collect(),
        trajectories,
        labels,
    })
}

fn rect_obstacle(id: u32, min: (f64, f64), max: (f64, f64)) -> Obstacle {
    Obstacle {
        id,
        center: Point2::new(0.5 * (min.0 + max.0), 0.5 * (min.1 + max.1)),
        polygon: Some(vec![
            Point2::new(min.0, min.1),
            Point2::new(max.0, min.1),
            Point2::new(max.0, max.1),
            Point2::new(min.0, max.1),
        ]),
    }
}

/// Two-obstacle layout whose left-to-right traffic only produces the classes
/// (), (1) and (1,2): obstacle 1 is a wall standing on the bottom edge, so
/// every path reaching its far side passes over it and crosses ray 1 first.
pub fn toy_environment() -> Environment {
    Environment::new(
        Rect::new(Point2::new(0.0, 0.0), Point2::new(10.0, 10.0)),
        vec![rect_obstacle(1, (3.0, 0.0), (4.0, 5.5)), rect_obstacle(2, (6.0, 2.5), (7.5, 4.5))],
    )
    .expect("valid preset")
}

/// Two stacked blocks near the left edge. Ray 2 runs up through obstacle 1,
/// so it can only be crossed in the gap between the blocks, and traffic
/// splits into the classes (), (2) and (1,2) right after entering.
pub fn crossroads_environment() -> Environment {
    let mut upper = rect_obstacle(1, (1.5, 5.0), (4.0, 7.0));
    upper.center = Point2::new(2.2, 6.0);
    Environment::new(
        Rect::new(Point2::new(0.0, 0.0), Point2::new(10.0, 10.0)),
        vec![upper, rect_obstacle(2, (2.8, 1.0), (3.6, 3.0))],
    )
    .expect("valid preset")
}
