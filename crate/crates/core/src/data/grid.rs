//! Free-space lattice over an environment and shortest paths on it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::topology::{Environment, Point2};

/// How an obstacle occupies space on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleShape {
    Polygon(Vec<Point2>),
    Disc { center: Point2, radius: f64 },
}

impl ObstacleShape {
    pub fn contains(&self, p: &Point2) -> bool {
        match self {
            ObstacleShape::Polygon(poly) => point_in_polygon(p, poly),
            ObstacleShape::Disc { center, radius } => center.distance(p) < *radius,
        }
    }

    /// Whether the closed segment `a -> b` touches the obstacle interior or
    /// crosses its outline.
    pub fn intersects_segment(&self, a: &Point2, b: &Point2) -> bool {
        match self {
            ObstacleShape::Polygon(poly) => {
                if self.contains(a) || self.contains(b) {
                    return true;
                }
                let n = poly.len();
                (0..n).any(|i| segments_cross(a, b, &poly[i], &poly[(i + 1) % n]))
                    || self.contains(&a.lerp(b, 0.5))
            }
            ObstacleShape::Disc { center, radius } => point_segment_distance(center, a, b) < *radius,
        }
    }
}

/// Obstacle shapes of an environment: polygons where given, else discs of
/// `default_radius` around the centers.
pub fn obstacle_shapes(env: &Environment, default_radius: f64) -> Vec<ObstacleShape> {
    env.obstacles()
        .iter()
        .map(|o| match &o.polygon {
            Some(p) if p.len() >= 3 => ObstacleShape::Polygon(p.clone()),
            _ => ObstacleShape::Disc { center: o.center, radius: default_radius },
        })
        .collect()
}

/// Even-odd ray casting. Points on the outline may land on either side.
pub fn point_in_polygon(p: &Point2, poly: &[Point2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Proper crossing of two segments (shared endpoints and collinear touching
/// do not count).
fn segments_cross(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.distance(&a.lerp(b, s))
}

/// 8-connected lattice of free points spanning the boundary exactly.
#[derive(Debug, Clone)]
pub struct GridGraph {
    origin: Point2,
    step_x: f64,
    step_y: f64,
    nx: usize,
    ny: usize,
    free: Vec<bool>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

const NEIGHBOURS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

impl GridGraph {
    /// Lattice with spacing close to `resolution` so that the outermost rows
    /// and columns sit exactly on the boundary.
    pub fn new(env: &Environment, resolution: f64, shapes: &[ObstacleShape]) -> Self {
        let b = env.boundary();
        let cells_x = (b.width() / resolution).round().max(1.0) as usize;
        let cells_y = (b.height() / resolution).round().max(1.0) as usize;
        let (nx, ny) = (cells_x + 1, cells_y + 1);
        let step_x = b.width() / cells_x as f64;
        let step_y = b.height() / cells_y as f64;
        let mut g = GridGraph {
            origin: b.min,
            step_x,
            step_y,
            nx,
            ny,
            free: vec![false; nx * ny],
            adjacency: vec![Vec::new(); nx * ny],
        };
        for i in 0..nx * ny {
            let p = g.position(i);
            g.free[i] = !shapes.iter().any(|s| s.contains(&p));
        }
        for i in 0..nx * ny {
            if !g.free[i] {
                continue;
            }
            let (ix, iy) = g.coords(i);
            let p = g.position(i);
            for (dx, dy) in NEIGHBOURS {
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                    continue;
                }
                let j = g.index(jx as usize, jy as usize);
                if !g.free[j] {
                    continue;
                }
                let q = g.position(j);
                if shapes.iter().any(|s| s.intersects_segment(&p, &q)) {
                    continue;
                }
                g.adjacency[i].push((j, p.distance(&q)));
            }
        }
        g
    }

    pub fn num_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    pub fn position(&self, i: usize) -> Point2 {
        let (ix, iy) = self.coords(i);
        let x = if ix + 1 == self.nx { self.origin.x + self.step_x * (self.nx - 1) as f64 } else { self.origin.x + self.step_x * ix as f64 };
        let y = if iy + 1 == self.ny { self.origin.y + self.step_y * (self.ny - 1) as f64 } else { self.origin.y + self.step_y * iy as f64 };
        Point2::new(x, y)
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free[i]
    }

    pub fn neighbours(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Free nodes on the left boundary column, bottom to top.
    pub fn left_boundary_nodes(&self) -> Vec<usize> {
        (0..self.ny).map(|iy| self.index(0, iy)).filter(|&i| self.free[i]).collect()
    }

    /// Free nodes on the bottom, top and right boundaries, excluding the left
    /// column, in index order.
    pub fn other_boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| {
                let (ix, iy) = self.coords(i);
                self.free[i] && ix > 0 && (iy == 0 || iy + 1 == self.ny || ix + 1 == self.nx)
            })
            .collect()
    }

    /// Single-source Dijkstra.
    pub fn dijkstra(&self, source: usize) -> ShortestPaths {
        let n = self.num_nodes();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(QueueEntry { cost: 0.0, node: source });
        while let Some(QueueEntry { cost, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            for &(next, w) in &self.adjacency[node] {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    prev[next] = node;
                    heap.push(QueueEntry { cost: c, node: next });
                }
            }
        }
        ShortestPaths { source, dist, prev }
    }
}

/// Min-heap entry ordered by cost, then node index.
#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    cost: f64,
    node: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub source: usize,
    pub dist: Vec<f64>,
    prev: Vec<usize>,
}

impl ShortestPaths {
    /// Node sequence from the source to `target`, if reachable.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        if !self.dist[target].is_finite() {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while cur != self.source {
            cur = self.prev[cur];
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}
