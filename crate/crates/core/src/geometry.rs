//! Areas, coverage patterns and schedule cost arithmetic.
//!
//! Corners are always indexed SW, SE, NE, NW. A coverage pattern started at
//! a corner traces a deterministic polyline inside the square and leaves the
//! agent at its exit point; the next area's entry corner is reached by a
//! straight flight from there.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapgen::AreaMap;

/// Number of entry corners per area.
pub const CORNER_COUNT: usize = 4;
/// Number of coverage patterns.
pub const PATTERN_COUNT: usize = 3;
pub const DEFAULT_LANES: usize = 5;

const SQUARE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("corners do not form an axis-aligned square in SW, SE, NE, NW order: {0}")]
    NotSquare(String),
    #[error("invalid schedule: {}", join_violations(.0))]
    InvalidSchedule(Vec<Violation>),
    #[error("pattern needs at least 2 lanes, got {0}")]
    TooFewLanes(usize),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Euclidean flight length from the exit of one area to the entry of the next.
pub fn inter_area_distance(exit: Point, entry: Point) -> f64 {
    exit.distance(entry)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    corners: [Point; 4],
}

impl Area {
    pub fn from_corners(corners: [Point; 4]) -> Result<Self, GeometryError> {
        let [sw, se, ne, nw] = corners;
        if corners.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::NotSquare("non-finite coordinate".into()));
        }
        let side = se.x - sw.x;
        let tol = SQUARE_TOL * side.abs().max(1.0);
        let checks = [
            (sw.x - nw.x, "SW.x != NW.x"),
            (se.x - ne.x, "SE.x != NE.x"),
            (sw.y - se.y, "SW.y != SE.y"),
            (nw.y - ne.y, "NW.y != NE.y"),
            ((nw.y - sw.y) - side, "height != width"),
        ];
        for (delta, what) in checks {
            if delta.abs() > tol {
                return Err(GeometryError::NotSquare(what.into()));
            }
        }
        if side <= 0.0 {
            return Err(GeometryError::NotSquare(format!("side {side} is not positive")));
        }
        Ok(Self { corners })
    }

    /// The square `center ± half` on both axes.
    pub fn square(center: Point, half: f64) -> Result<Self, GeometryError> {
        let (x0, x1) = (center.x - half, center.x + half);
        let (y0, y1) = (center.y - half, center.y + half);
        Self::from_corners([
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    pub fn corner(&self, k: usize) -> Point {
        self.corners[k]
    }

    pub fn center(&self) -> Point {
        let sx: f64 = self.corners.iter().map(|p| p.x).sum();
        let sy: f64 = self.corners.iter().map(|p| p.y).sum();
        Point::new(sx / 4.0, sy / 4.0)
    }

    pub fn side(&self) -> f64 {
        self.corners[1].x - self.corners[0].x
    }

    pub fn min(&self) -> Point {
        self.corners[0]
    }

    pub fn max(&self) -> Point {
        self.corners[2]
    }

    /// Closed-rectangle test: touching boundaries count as overlap.
    pub fn intersects(&self, other: &Area) -> bool {
        let (a0, a1, b0, b1) = (self.min(), self.max(), other.min(), other.max());
        a0.x <= b1.x && b0.x <= a1.x && a0.y <= b1.y && b0.y <= a1.y
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let (lo, hi) = (self.min(), self.max());
        p.x >= lo.x - tol && p.x <= hi.x + tol && p.y >= lo.y - tol && p.y <= hi.y + tol
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Self, GeometryError> {
        Self::from_corners(self.corners.map(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternKind {
    VerticalZigZag,
    HorizontalZigZag,
    Spiral,
}

impl PatternKind {
    /// Pattern index order used by decisions and the policy.
    pub const ALL: [PatternKind; PATTERN_COUNT] = [
        PatternKind::VerticalZigZag,
        PatternKind::HorizontalZigZag,
        PatternKind::Spiral,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub kind: PatternKind,
    /// Zig-zag pass count, or the spiral's gap divisor.
    pub lanes: usize,
}

impl Pattern {
    pub fn new(kind: PatternKind, lanes: usize) -> Result<Self, GeometryError> {
        if lanes < 2 {
            return Err(GeometryError::TooFewLanes(lanes));
        }
        Ok(Self { kind, lanes })
    }
}

/// Unit axes pointing from corner `k` into the square.
fn inward_axes(corner: usize) -> (f64, f64) {
    match corner {
        0 => (1.0, 1.0),
        1 => (-1.0, 1.0),
        2 => (-1.0, -1.0),
        3 => (1.0, -1.0),
        _ => panic!("corner index {corner} out of range"),
    }
}

fn to_world(area: &Area, corner: usize, local: (f64, f64)) -> Point {
    let origin = area.corner(corner);
    let (ux, uy) = inward_axes(corner);
    Point::new(origin.x + ux * local.0, origin.y + uy * local.1)
}

/// Vertices of the coverage path, from the entry corner to the exit point.
pub fn pattern_polyline(area: &Area, corner: usize, pattern: Pattern) -> Vec<Point> {
    let side = area.side();
    let k = pattern.lanes;
    let mut local = Vec::new();
    match pattern.kind {
        PatternKind::VerticalZigZag | PatternKind::HorizontalZigZag => {
            let gap = side / (k - 1) as f64;
            for lane in 0..k {
                let across = if lane == k - 1 { side } else { lane as f64 * gap };
                let (from, to) = if lane % 2 == 0 { (0.0, side) } else { (side, 0.0) };
                let pts = [(across, from), (across, to)];
                for (a, b) in pts {
                    local.push(if pattern.kind == PatternKind::VerticalZigZag {
                        (a, b)
                    } else {
                        (b, a)
                    });
                }
            }
        }
        PatternKind::Spiral => {
            let gap = side / k as f64;
            let (mut x, mut y) = (0.0, 0.0);
            local.push((x, y));
            for seg in 0..2 * k {
                let len = side - (seg / 2) as f64 * gap;
                match seg % 4 {
                    0 => x += len,
                    1 => y += len,
                    2 => x -= len,
                    _ => y -= len,
                }
                local.push((x, y));
            }
        }
    }
    let mut pts: Vec<Point> = local.into_iter().map(|l| to_world(area, corner, l)).collect();
    if pattern.kind == PatternKind::Spiral {
        // The spiral ends within half a gap of the center; close onto it.
        let center = area.center();
        let last = pts.last_mut().expect("spiral has vertices");
        if last.distance(center) <= 1e-9 * side.max(1.0) {
            *last = center;
        } else {
            pts.push(center);
        }
    }
    pts
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Where the agent stands after covering `area` from `corner` with `pattern`.
pub fn pattern_exit_point(area: &Area, corner: usize, pattern: Pattern) -> Point {
    let side = area.side();
    let odd = pattern.lanes % 2 == 1;
    match pattern.kind {
        PatternKind::VerticalZigZag => {
            to_world(area, corner, (side, if odd { side } else { 0.0 }))
        }
        PatternKind::HorizontalZigZag => {
            to_world(area, corner, (if odd { side } else { 0.0 }, side))
        }
        PatternKind::Spiral => area.center(),
    }
}

/// Length of the coverage path inside the area.
pub fn pattern_path_length(area: &Area, corner: usize, pattern: Pattern) -> f64 {
    match pattern.kind {
        PatternKind::VerticalZigZag | PatternKind::HorizontalZigZag => {
            (pattern.lanes + 1) as f64 * area.side()
        }
        PatternKind::Spiral => polyline_length(&pattern_polyline(area, corner, pattern)),
    }
}

/// One scheduling step: which area, from which corner, with which pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub area: usize,
    pub corner: usize,
    pub pattern: usize,
}

impl Decision {
    pub const fn new(area: usize, corner: usize, pattern: usize) -> Self {
        Self {
            area,
            corner,
            pattern,
        }
    }

    /// `(area, corner, pattern)` flattened; orders decisions lexicographically.
    pub fn composite(&self) -> usize {
        (self.area * CORNER_COUNT + self.corner) * PATTERN_COUNT + self.pattern
    }
}

/// Parameters of the tour cost: lane count of every pattern, the weight of
/// in-area path length, and whether the tour returns to its first entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub lanes: usize,
    pub lambda_intra: f64,
    pub closed: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            lanes: DEFAULT_LANES,
            lambda_intra: 0.0,
            closed: true,
        }
    }
}

impl CostModel {
    pub fn pattern(&self, index: usize) -> Pattern {
        Pattern {
            kind: PatternKind::ALL[index],
            lanes: self.lanes.max(2),
        }
    }

    pub fn entry(&self, area: &Area, corner: usize) -> Point {
        area.corner(corner)
    }

    pub fn exit(&self, area: &Area, corner: usize, pattern: usize) -> Point {
        pattern_exit_point(area, corner, self.pattern(pattern))
    }

    /// Weighted in-area cost `lambda * path length`; exactly 0 when lambda is 0.
    pub fn service(&self, area: &Area, corner: usize, pattern: usize) -> f64 {
        if self.lambda_intra == 0.0 {
            0.0
        } else {
            self.lambda_intra * pattern_path_length(area, corner, self.pattern(pattern))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    AreaRepeated { area: usize },
    AreaMissing { area: usize },
    AreaOutOfRange { position: usize, area: usize },
    CornerOutOfRange { position: usize, corner: usize },
    PatternOutOfRange { position: usize, pattern: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AreaRepeated { area } => write!(f, "area {area} visited twice"),
            Violation::AreaMissing { area } => write!(f, "area {area} never visited"),
            Violation::AreaOutOfRange { position, area } => {
                write!(f, "area index out of range: {area} at step {position}")
            }
            Violation::CornerOutOfRange { position, corner } => {
                write!(f, "corner index out of range: {corner} at step {position}")
            }
            Violation::PatternOutOfRange { position, pattern } => {
                write!(f, "pattern index out of range: {pattern} at step {position}")
            }
        }
    }
}

/// Every way `decisions` fails to be a permutation of the map's areas with
/// valid corner and pattern indices. Empty means valid.
pub fn validate_schedule(map: &AreaMap, decisions: &[Decision]) -> Vec<Violation> {
    let n = map.len();
    let mut seen = vec![0usize; n];
    let mut out = Vec::new();
    for (position, d) in decisions.iter().enumerate() {
        if d.area >= n {
            out.push(Violation::AreaOutOfRange {
                position,
                area: d.area,
            });
        } else {
            seen[d.area] += 1;
            if seen[d.area] == 2 {
                out.push(Violation::AreaRepeated { area: d.area });
            }
        }
        if d.corner >= CORNER_COUNT {
            out.push(Violation::CornerOutOfRange {
                position,
                corner: d.corner,
            });
        }
        if d.pattern >= PATTERN_COUNT {
            out.push(Violation::PatternOutOfRange {
                position,
                pattern: d.pattern,
            });
        }
    }
    for (area, &count) in seen.iter().enumerate() {
        if count == 0 {
            out.push(Violation::AreaMissing { area });
        }
    }
    out
}

/// Total tour cost: flights between consecutive decisions, the closing
/// flight for closed tours, and `lambda_intra` times the in-area paths.
pub fn schedule_cost(
    map: &AreaMap,
    decisions: &[Decision],
    cost: &CostModel,
) -> Result<f64, GeometryError> {
    let violations = validate_schedule(map, decisions);
    if !violations.is_empty() {
        return Err(GeometryError::InvalidSchedule(violations));
    }
    Ok(unchecked_cost(map, decisions, cost))
}

/// [`schedule_cost`] without validation; callers guarantee a valid schedule.
pub(crate) fn unchecked_cost(map: &AreaMap, decisions: &[Decision], cost: &CostModel) -> f64 {
    let areas = map.areas();
    let exit = |d: &Decision| cost.exit(&areas[d.area], d.corner, d.pattern);
    let entry = |d: &Decision| cost.entry(&areas[d.area], d.corner);
    let mut total: f64 = decisions
        .windows(2)
        .map(|w| inter_area_distance(exit(&w[0]), entry(&w[1])))
        .sum();
    if cost.closed {
        if let (Some(first), Some(last)) = (decisions.first(), decisions.last()) {
            total += inter_area_distance(exit(last), entry(first));
        }
    }
    total
        + decisions
            .iter()
            .map(|d| cost.service(&areas[d.area], d.corner, d.pattern))
            .sum::<f64>()
}

/// A validated tour with its derived points and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub decisions: Vec<Decision>,
    pub entry_points: Vec<Point>,
    pub exit_points: Vec<Point>,
    pub total_cost: f64,
    pub closed: bool,
}

impl Schedule {
    pub fn evaluate(
        map: &AreaMap,
        decisions: Vec<Decision>,
        cost: &CostModel,
    ) -> Result<Self, GeometryError> {
        let total_cost = schedule_cost(map, &decisions, cost)?;
        let areas = map.areas();
        let entry_points = decisions
            .iter()
            .map(|d| cost.entry(&areas[d.area], d.corner))
            .collect();
        let exit_points = decisions
            .iter()
            .map(|d| cost.exit(&areas[d.area], d.corner, d.pattern))
            .collect();
        Ok(Self {
            decisions,
            entry_points,
            exit_points,
            total_cost,
            closed: cost.closed,
        })
    }

    pub fn order(&self) -> Vec<usize> {
        self.decisions.iter().map(|d| d.area).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Area {
        Area::from_corners([
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap()
    }

    fn pat(kind: PatternKind, lanes: usize) -> Pattern {
        Pattern::new(kind, lanes).unwrap()
    }

    #[test]
    fn vertical_zigzag_odd_lanes_exits_diagonally() {
        let p = pat(PatternKind::VerticalZigZag, 5);
        assert_eq!(pattern_exit_point(&unit(), 0, p), Point::new(1.0, 1.0));
        assert_eq!(*pattern_polyline(&unit(), 0, p).last().unwrap(), Point::new(1.0, 1.0));
        assert_eq!(pattern_path_length(&unit(), 0, p), 6.0);
        assert_eq!(polyline_length(&pattern_polyline(&unit(), 0, p)), 6.0);
    }

    #[test]
    fn spiral_exits_at_center() {
        for lanes in [2, 3, 5, 8] {
            let p = pat(PatternKind::Spiral, lanes);
            assert_eq!(pattern_exit_point(&unit(), 0, p), Point::new(0.5, 0.5));
        }
    }

    #[test]
    fn horizontal_zigzag_even_lanes_from_ne() {
        let p = pat(PatternKind::HorizontalZigZag, 4);
        assert_eq!(pattern_exit_point(&unit(), 2, p), Point::new(1.0, 0.0));
        assert_eq!(*pattern_polyline(&unit(), 2, p).last().unwrap(), Point::new(1.0, 0.0));
    }

    #[test]
    fn spiral_length_by_hand() {
        // gap 0.25: legs 1, 1, .75, .75, .5, .5, .25, .25 end on the center
        let p = pat(PatternKind::Spiral, 4);
        assert!((pattern_path_length(&unit(), 0, p) - 5.0).abs() < 1e-12);
        // gap 0.2: legs 1, 1, .8, .8, .6, .6, .4, .4, .2, .2 end at (.6, .6),
        // then a diagonal hop of 0.1*sqrt(2) onto the center
        let p = pat(PatternKind::Spiral, 5);
        let expect = 6.0 + 0.1 * 2f64.sqrt();
        assert!((pattern_path_length(&unit(), 3, p) - expect).abs() < 1e-12);
    }

    #[test]
    fn distances() {
        assert_eq!(inter_area_distance(Point::new(0.0, 0.0), Point::new(3.0, 4.0)), 5.0);
        assert_eq!(inter_area_distance(Point::new(0.2, 0.7), Point::new(0.2, 0.7)), 0.0);
    }

    #[test]
    fn rejects_non_squares() {
        let bad = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        assert!(matches!(Area::from_corners(bad), Err(GeometryError::NotSquare(_))));
        assert!(Area::square(Point::new(0.5, 0.5), 0.0).is_err());
        assert_eq!(Pattern::new(PatternKind::Spiral, 1), Err(GeometryError::TooFewLanes(1)));
    }

    #[test]
    fn touching_squares_intersect() {
        let a = Area::square(Point::new(0.2, 0.2), 0.1).unwrap();
        let b = Area::square(Point::new(0.4, 0.2), 0.1).unwrap();
        let c = Area::square(Point::new(0.41, 0.2), 0.1).unwrap();
        let far = Area::square(Point::new(0.8, 0.8), 0.1).unwrap();
        assert!(a.intersects(&b));
        assert!(!a.intersects(&c));
        assert!(!a.intersects(&far));
    }
}
