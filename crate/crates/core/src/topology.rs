//! Planar environments, trajectories and h-signatures.
//!
//! Every obstacle carries a vertical ray pointing in +y from its center. A
//! path's word is the sequence of signed ray crossings in path order: `+id`
//! when the ray is crossed left-to-right, `-id` right-to-left. Freely reducing
//! the word (cancelling adjacent `a, -a` pairs) gives the h-signature, which
//! identifies the homotopy class of a boundary-to-boundary path.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("obstacle ids must be 1..=n in order; found id {found} at position {position}")]
    BadObstacleId { position: usize, found: u32 },
    #[error("obstacle {0} center lies outside the boundary")]
    CenterOutsideBoundary(u32),
    #[error("obstacles {0} and {1} share a center x-coordinate; rays would overlap")]
    SharedRayColumn(u32, u32),
    #[error("boundary is empty or inverted")]
    DegenerateBoundary,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("trajectory needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("points and timestamps differ in length ({points} vs {times})")]
    LengthMismatch { points: usize, times: usize },
    #[error("timestamps must be strictly increasing (index {0})")]
    NonIncreasingTime(usize),
    #[error("trajectory {which} point ({x}, {y}) is not on the boundary")]
    BoundaryViolation { which: &'static str, x: f64, y: f64 },
    #[error("letter must be nonzero")]
    ZeroLetter,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TopologyError>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Point2, s: f64) -> Point2 {
        Point2::new(self.x + s * (other.x - self.x), self.y + s * (other.y - self.y))
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn extent(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn strictly_contains(&self, p: &Point2) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    /// Distance from `p` to the rectangle's perimeter (zero on the edge,
    /// positive both inside and outside).
    pub fn distance_to_edge(&self, p: &Point2) -> f64 {
        if self.contains(p) {
            (p.x - self.min.x)
                .min(self.max.x - p.x)
                .min(p.y - self.min.y)
                .min(self.max.y - p.y)
        } else {
            let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
            let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
            dx.hypot(dy)
        }
    }

    pub fn expanded(&self, margin: f64) -> Rect {
        Rect::new(
            Point2::new(self.min.x - margin, self.min.y - margin),
            Point2::new(self.max.x + margin, self.max.y + margin),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u32,
    pub center: Point2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<Point2>>,
}

/// Vertical ray from an obstacle center towards +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub obstacle_id: u32,
    pub origin: Point2,
}

/// A validated planar environment. Construct with [`Environment::new`] or
/// [`Environment::from_json_file`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    boundary: Rect,
    obstacles: Vec<Obstacle>,
}

#[derive(Deserialize)]
struct EnvironmentFile {
    boundary: Rect,
    obstacles: Vec<Obstacle>,
}

impl<'de> Deserialize<'de> for Environment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = EnvironmentFile::deserialize(d)?;
        Environment::new(raw.boundary, raw.obstacles).map_err(serde::de::Error::custom)
    }
}

impl Environment {
    pub fn new(boundary: Rect, obstacles: Vec<Obstacle>) -> Result<Self> {
        if !boundary.min.is_finite() || !boundary.max.is_finite() {
            return Err(TopologyError::NonFinite);
        }
        if boundary.width() <= 0.0 || boundary.height() <= 0.0 {
            return Err(TopologyError::DegenerateBoundary);
        }
        for (i, ob) in obstacles.iter().enumerate() {
            if ob.id as usize != i + 1 {
                return Err(TopologyError::BadObstacleId { position: i, found: ob.id });
            }
            if !ob.center.is_finite() {
                return Err(TopologyError::NonFinite);
            }
            if !boundary.strictly_contains(&ob.center) {
                return Err(TopologyError::CenterOutsideBoundary(ob.id));
            }
            if let Some(poly) = &ob.polygon {
                if poly.iter().any(|p| !p.is_finite()) {
                    return Err(TopologyError::NonFinite);
                }
            }
        }
        for (i, a) in obstacles.iter().enumerate() {
            for b in &obstacles[i + 1..] {
                if a.center.x == b.center.x {
                    return Err(TopologyError::SharedRayColumn(a.id, b.id));
                }
            }
        }
        Ok(Self { boundary, obstacles })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment serializes")
    }

    pub fn boundary(&self) -> &Rect {
        &self.boundary
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn num_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    /// Size of the signed letter alphabet, `2n`.
    pub fn alphabet_size(&self) -> usize {
        2 * self.obstacles.len()
    }

    pub fn rays(&self) -> impl Iterator<Item = Ray> + '_ {
        self.obstacles.iter().map(|o| Ray { obstacle_id: o.id, origin: o.center })
    }

    /// Whether `p` lies within `tolerance` meters of the boundary edge.
    pub fn on_boundary(&self, p: &Point2, tolerance: f64) -> bool {
        self.boundary.distance_to_edge(p) <= tolerance
    }

    /// Default endpoint tolerance: 1% of the larger boundary side.
    pub fn default_boundary_tolerance(&self) -> f64 {
        0.01 * self.boundary.extent()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Point2>,
    timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>, timestamps: Vec<f64>) -> Result<Self> {
        if points.len() != timestamps.len() {
            return Err(TopologyError::LengthMismatch {
                points: points.len(),
                times: timestamps.len(),
            });
        }
        if points.len() < 2 {
            return Err(TopologyError::TooShort(points.len()));
        }
        if points.iter().any(|p| !p.is_finite()) || timestamps.iter().any(|t| !t.is_finite()) {
            return Err(TopologyError::NonFinite);
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(TopologyError::NonIncreasingTime(i + 1));
        }
        Ok(Self { points, timestamps })
    }

    /// Timestamps 0, 1, 2, ... seconds.
    pub fn from_points(points: Vec<Point2>) -> Result<Self> {
        let times = (0..points.len()).map(|i| i as f64).collect();
        Self::new(points, times)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.timestamps[self.timestamps.len() - 1] - self.timestamps[0]
    }

    pub fn reversed(&self) -> Trajectory {
        let end = self.timestamps[self.timestamps.len() - 1];
        let points = self.points.iter().rev().copied().collect();
        let times = self.timestamps.iter().rev().map(|t| end - t).collect();
        Trajectory { points, timestamps: times }
    }

    /// Flattened `[x1, y1, ..., xT, yT]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// A signed obstacle index. Positive for left-to-right crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct Letter(i32);

impl Letter {
    pub fn new(value: i32) -> Result<Self> {
        if value == 0 {
            Err(TopologyError::ZeroLetter)
        } else {
            Ok(Letter(value))
        }
    }

    pub fn value(self) -> i32 {
        self.0
    }

    pub fn obstacle(self) -> u32 {
        self.0.unsigned_abs()
    }

    pub fn inverse(self) -> Letter {
        Letter(-self.0)
    }

    /// All `2n` letters in the order `1..=n, -1..=-n`.
    pub fn alphabet(num_obstacles: usize) -> Vec<Letter> {
        let n = num_obstacles as i32;
        (1..=n).chain((1..=n).map(|v| -v)).map(Letter).collect()
    }
}

impl TryFrom<i32> for Letter {
    type Error = TopologyError;
    fn try_from(v: i32) -> Result<Self> {
        Letter::new(v)
    }
}

impl From<Letter> for i32 {
    fn from(l: Letter) -> i32 {
        l.0
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A word over signed obstacle letters. Reducedness is a property of the
/// content (see [`Word::is_reduced`]), so equal letter sequences compare
/// equal regardless of how they were produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn from_letters(letters: Vec<Letter>) -> Self {
        Word(letters)
    }

    /// Panics on a zero entry; meant for literals and tests.
    pub fn from_values(values: &[i32]) -> Self {
        Word(values.iter().map(|&v| Letter::new(v).expect("nonzero letter")).collect())
    }

    pub fn try_from_values(values: &[i32]) -> Result<Self> {
        values.iter().map(|&v| Letter::new(v)).collect::<Result<Vec<_>>>().map(Word)
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn values(&self) -> Vec<i32> {
        self.0.iter().map(|l| l.0).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, letter: Letter) {
        self.0.push(letter);
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    /// `a` prepended to this word.
    pub fn prepend(&self, a: Letter) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(a);
        v.extend_from_slice(&self.0);
        Word(v)
    }

    pub fn appended(&self, a: Letter) -> Word {
        let mut v = self.0.clone();
        v.push(a);
        Word(v)
    }

    /// Drops the first letter. Empty stays empty.
    pub fn proper_suffix(&self) -> Word {
        Word(self.0.get(1..).unwrap_or(&[]).to_vec())
    }

    /// Drops the last letter. Empty stays empty.
    pub fn proper_prefix(&self) -> Word {
        let n = self.0.len().saturating_sub(1);
        Word(self.0[..n].to_vec())
    }

    /// Last `k` letters (the whole word if shorter).
    pub fn suffix(&self, k: usize) -> Word {
        let start = self.0.len().saturating_sub(k);
        Word(self.0[start..].to_vec())
    }

    pub fn ends_with(&self, other: &Word) -> bool {
        self.0.ends_with(&other.0)
    }

    pub fn starts_with(&self, other: &Word) -> bool {
        self.0.starts_with(&other.0)
    }

    /// Reverse order with every letter inverted.
    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|l| l.inverse()).collect())
    }

    pub fn is_reduced(&self) -> bool {
        self.0.windows(2).all(|w| w[0].0 != -w[1].0)
    }

    /// Free reduction.
    pub fn reduce(&self) -> Word {
        let mut stack: Vec<Letter> = Vec::with_capacity(self.0.len());
        for &l in &self.0 {
            push_reducing(&mut stack, l);
        }
        Word(stack)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", l.0)?;
        }
        write!(f, ")")
    }
}

impl FromIterator<Letter> for Word {
    fn from_iter<I: IntoIterator<Item = Letter>>(iter: I) -> Self {
        Word(iter.into_iter().collect())
    }
}

fn push_reducing(stack: &mut Vec<Letter>, l: Letter) {
    if stack.last().is_some_and(|top| top.0 == -l.0) {
        stack.pop();
    } else {
        stack.push(l);
    }
}

pub fn reduce(word: &Word) -> Word {
    word.reduce()
}

/// Signed crossing of the segment `start -> end` with `ray`, if any.
///
/// The ray column is half-open: a point with `x == origin.x` counts as being
/// on the right, so a path that touches the ray and turns back produces a
/// cancelling pair rather than a spurious single crossing.
pub fn crossing_letter(start: Point2, end: Point2, ray: &Ray) -> Option<Letter> {
    crossing_param(start, end, ray).map(|(l, _)| l)
}

fn crossing_param(start: Point2, end: Point2, ray: &Ray) -> Option<(Letter, f64)> {
    let ox = ray.origin.x;
    let sign = if start.x < ox && ox <= end.x {
        1
    } else if end.x < ox && ox <= start.x {
        -1
    } else {
        return None;
    };
    let s = (ox - start.x) / (end.x - start.x);
    let y = if s >= 1.0 { end.y } else if s <= 0.0 { start.y } else { start.y + s * (end.y - start.y) };
    if y >= ray.origin.y {
        Some((Letter(sign * ray.obstacle_id as i32), s))
    } else {
        None
    }
}

/// Crossing letters of one segment, ordered along the segment.
pub fn segment_letters(start: Point2, end: Point2, env: &Environment) -> Vec<Letter> {
    let mut hits: Vec<(f64, Letter)> = env
        .rays()
        .filter_map(|r| crossing_param(start, end, &r).map(|(l, s)| (s, l)))
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    hits.into_iter().map(|(_, l)| l).collect()
}

/// Unreduced crossing word of a polyline.
pub fn word_of_points(points: &[Point2], env: &Environment) -> Word {
    points
        .windows(2)
        .flat_map(|w| segment_letters(w[0], w[1], env))
        .collect()
}

pub fn compute_word(traj: &Trajectory, env: &Environment) -> Word {
    word_of_points(traj.points(), env)
}

/// Full h-signature. `boundary_tolerance` of `None` skips the endpoint check.
pub fn h_signature_with(
    traj: &Trajectory,
    env: &Environment,
    boundary_tolerance: Option<f64>,
) -> Result<Word> {
    if let Some(tol) = boundary_tolerance {
        for (which, p) in [("start", traj.first()), ("end", traj.last())] {
            if !env.on_boundary(&p, tol) {
                return Err(TopologyError::BoundaryViolation { which, x: p.x, y: p.y });
            }
        }
    }
    Ok(compute_word(traj, env).reduce())
}

/// Full h-signature with the default 1% boundary tolerance.
pub fn h_signature(traj: &Trajectory, env: &Environment) -> Result<Word> {
    h_signature_with(traj, env, Some(env.default_boundary_tolerance()))
}

/// Partial h-signature of an incomplete trajectory. No boundary requirement.
pub fn partial_h_signature(prefix: &Trajectory, env: &Environment) -> Word {
    compute_word(prefix, env).reduce()
}

/// Same as [`partial_h_signature`] for a raw polyline; fewer than two points
/// give the empty word.
pub fn partial_h_signature_of_points(points: &[Point2], env: &Environment) -> Word {
    word_of_points(points, env).reduce()
}

/// Incrementally maintained partial h-signature.
#[derive(Debug, Clone)]
pub struct PartialSignature<'e> {
    env: &'e Environment,
    last: Option<Point2>,
    stack: Vec<Letter>,
}

impl<'e> PartialSignature<'e> {
    pub fn new(env: &'e Environment) -> Self {
        Self { env, last: None, stack: Vec::new() }
    }

    pub fn push(&mut self, p: Point2) {
        if let Some(prev) = self.last {
            for l in segment_letters(prev, p, self.env) {
                push_reducing(&mut self.stack, l);
            }
        }
        self.last = Some(p);
    }

    pub fn word(&self) -> Word {
        Word(self.stack.clone())
    }
}

/// `p` is a literal prefix of `h`.
pub fn is_compatible(h: &Word, p: &Word) -> bool {
    h.starts_with(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env2() -> Environment {
        Environment::new(
            Rect::new(Point2::new(0.0, 0.0), Point2::new(10.0, 10.0)),
            vec![
                Obstacle { id: 1, center: Point2::new(3.0, 5.0), polygon: None },
                Obstacle { id: 2, center: Point2::new(7.0, 5.0), polygon: None },
            ],
        )
        .unwrap()
    }

    fn ray(x: f64, y: f64) -> Ray {
        Ray { obstacle_id: 1, origin: Point2::new(x, y) }
    }

    #[test]
    fn crossing_examples() {
        let r = ray(1.0, 1.0);
        let p = Point2::new;
        assert_eq!(crossing_letter(p(0.0, 2.0), p(2.0, 2.0), &r), Some(Letter(1)));
        assert_eq!(crossing_letter(p(0.0, 0.0), p(2.0, 0.0), &r), None);
        assert_eq!(crossing_letter(p(2.0, 2.0), p(0.0, 2.0), &r), Some(Letter(-1)));
    }

    #[test]
    fn vertex_on_ray_counts_once() {
        let r = ray(1.0, 1.0);
        let p = Point2::new;
        let through = [p(0.0, 2.0), p(1.0, 2.0), p(2.0, 2.0)];
        let w: Vec<_> = through.windows(2).filter_map(|s| crossing_letter(s[0], s[1], &r)).collect();
        assert_eq!(w, vec![Letter(1)]);
        let touch = [p(0.0, 2.0), p(1.0, 2.0), p(0.0, 3.0)];
        let w: Vec<_> = touch.windows(2).filter_map(|s| crossing_letter(s[0], s[1], &r)).collect();
        assert_eq!(Word(w).reduce(), Word::empty());
        let from_right = [p(2.0, 2.0), p(1.0, 2.0), p(2.0, 3.0)];
        let w: Vec<_> =
            from_right.windows(2).filter_map(|s| crossing_letter(s[0], s[1], &r)).collect();
        assert!(w.is_empty());
    }

    #[test]
    fn word_examples() {
        let env = env2();
        let p = Point2::new;
        let below = Trajectory::from_points(vec![p(0.0, 1.0), p(10.0, 1.0)]).unwrap();
        assert_eq!(compute_word(&below, &env), Word::empty());
        let over = Trajectory::from_points(vec![p(0.0, 8.0), p(10.0, 8.0)]).unwrap();
        assert_eq!(compute_word(&over, &env), Word::from_values(&[1, 2]));
        let back =
            Trajectory::from_points(vec![p(0.0, 8.0), p(5.0, 8.0), p(0.0, 9.0)]).unwrap();
        assert_eq!(compute_word(&back, &env), Word::from_values(&[1, -1]));
        assert_eq!(h_signature(&back, &env).unwrap(), Word::empty());
    }

    #[test]
    fn reversed_segment_orders_by_parameter() {
        let env = env2();
        let p = Point2::new;
        let w = segment_letters(p(10.0, 8.0), p(0.0, 8.0), &env);
        assert_eq!(w, vec![Letter(-2), Letter(-1)]);
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(Word::from_values(&[1, 2, -2, 3]).reduce(), Word::from_values(&[1, 3]));
        assert_eq!(Word::empty().reduce(), Word::empty());
        assert_eq!(Word::from_values(&[1, -1, 1, -1]).reduce(), Word::empty());
        assert!(Word::from_values(&[1, 2, -2, 3]).reduce().is_reduced());
        assert!(!Word::from_values(&[1, 2, -2, 3]).is_reduced());
    }

    #[test]
    fn boundary_check() {
        let env = env2();
        let p = Point2::new;
        let inside = Trajectory::from_points(vec![p(0.0, 8.0), p(5.0, 8.0)]).unwrap();
        assert!(matches!(
            h_signature(&inside, &env),
            Err(TopologyError::BoundaryViolation { which: "end", .. })
        ));
        assert_eq!(h_signature_with(&inside, &env, None).unwrap(), Word::from_values(&[1]));
        let near = Trajectory::from_points(vec![p(0.05, 8.0), p(9.95, 8.0)]).unwrap();
        assert!(h_signature(&near, &env).is_ok());
    }

    #[test]
    fn partial_examples() {
        let env = env2();
        let p = Point2::new;
        let pre = Trajectory::from_points(vec![p(0.0, 8.0), p(2.0, 8.0)]).unwrap();
        assert_eq!(partial_h_signature(&pre, &env), Word::empty());
        let crossed = Trajectory::from_points(vec![p(0.0, 8.0), p(4.0, 8.0)]).unwrap();
        assert_eq!(partial_h_signature(&crossed, &env), Word::from_values(&[1]));
        let mut inc = PartialSignature::new(&env);
        for q in [p(0.0, 8.0), p(4.0, 8.0), p(8.0, 8.0), p(6.0, 9.0)] {
            inc.push(q);
        }
        assert_eq!(inc.word(), Word::from_values(&[1]));
    }

    #[test]
    fn compatibility_examples() {
        let w = Word::from_values;
        assert!(is_compatible(&w(&[1, 2]), &w(&[1])));
        assert!(!is_compatible(&Word::empty(), &w(&[1])));
        assert!(is_compatible(&w(&[1, 2]), &Word::empty()));
    }

    #[test]
    fn environment_validation() {
        let b = Rect::new(Point2::new(0.0, 0.0), Point2::new(10.0, 10.0));
        let ob = |id, x, y| Obstacle { id, center: Point2::new(x, y), polygon: None };
        assert!(matches!(
            Environment::new(b, vec![ob(2, 1.0, 1.0)]),
            Err(TopologyError::BadObstacleId { .. })
        ));
        assert!(matches!(
            Environment::new(b, vec![ob(1, 1.0, 1.0), ob(2, 1.0, 5.0)]),
            Err(TopologyError::SharedRayColumn(1, 2))
        ));
        assert!(matches!(
            Environment::new(b, vec![ob(1, 10.0, 1.0)]),
            Err(TopologyError::CenterOutsideBoundary(1))
        ));
    }

    #[test]
    fn environment_json() {
        let s = r#"{"boundary": {"min": [0,0], "max": [10,5]},
            "obstacles": [{"id": 1, "center": [2,2], "polygon": [[1,1],[3,1],[3,3],[1,3]]},
                          {"id": 2, "center": [6,2]}]}"#;
        let env = Environment::from_json_str(s).unwrap();
        assert_eq!(env.num_obstacles(), 2);
        assert_eq!(env.obstacles()[0].polygon.as_ref().unwrap().len(), 4);
        let back = Environment::from_json_str(&env.to_json_string()).unwrap();
        assert_eq!(back, env);
        let bad = r#"{"boundary": {"min": [0,0], "max": [10,5]},
            "obstacles": [{"id": 1, "center": [2,2]}, {"id": 2, "center": [2,3]}]}"#;
        assert!(Environment::from_json_str(bad).is_err());
    }

    #[test]
    fn letter_rejects_zero() {
        assert!(Letter::new(0).is_err());
        assert!(serde_json::from_str::<Word>("[1,0]").is_err());
        assert_eq!(serde_json::from_str::<Word>("[1,-2]").unwrap(), Word::from_values(&[1, -2]));
    }
}
