//! Random map generation, normalization and the JSON-lines map format.

use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Area, GeometryError, Point};

/// Consecutive rejected draws after which generation gives up.
pub const MAX_REJECTIONS: usize = 10_000;
const BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gave up after {MAX_REJECTIONS} consecutive rejections placing area {placed} of {n}")]
    GenerationTimeout { placed: usize, n: usize },
    #[error("bounding box has zero extent")]
    DegenerateMap,
    #[error("areas {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("area {0} lies outside the unit square")]
    OutOfBounds(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// n square areas plus the matrices the encoder reads.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaMap {
    pub id: u64,
    areas: Vec<Area>,
    features: Vec<[f64; 8]>,
    positions: Vec<Point>,
}

impl AreaMap {
    /// Builds a map and checks the unit-square and non-overlap invariants.
    pub fn new(areas: Vec<Area>) -> Result<Self, MapError> {
        for (i, a) in areas.iter().enumerate() {
            let inside = a
                .corners()
                .iter()
                .all(|p| (-BOUND_TOL..=1.0 + BOUND_TOL).contains(&p.x) && (-BOUND_TOL..=1.0 + BOUND_TOL).contains(&p.y));
            if !inside {
                return Err(MapError::OutOfBounds(i));
            }
        }
        for i in 0..areas.len() {
            for j in i + 1..areas.len() {
                if areas[i].intersects(&areas[j]) {
                    return Err(MapError::Overlap(i, j));
                }
            }
        }
        Self::unnormalized(areas)
    }

    /// Builds a map in arbitrary coordinates without bounds or overlap checks.
    pub fn unnormalized(areas: Vec<Area>) -> Result<Self, MapError> {
        if areas.is_empty() {
            return Err(MapError::InvalidArgument("a map needs at least one area".into()));
        }
        let features = areas
            .iter()
            .map(|a| {
                let c = a.corners();
                [c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y]
            })
            .collect();
        let positions = areas.iter().map(Area::center).collect();
        Ok(Self {
            id: 0,
            areas,
            features,
            positions,
        })
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn area(&self, i: usize) -> &Area {
        &self.areas[i]
    }

    /// Row i: corners of area i flattened as SW.x, SW.y, SE.x, ..., NW.y.
    pub fn features(&self) -> &[[f64; 8]] {
        &self.features
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    /// Complete graph without self-loops.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).map(|j| u8::from(i != j)).collect())
            .collect()
    }

    /// Same areas in a new order: area `k` of the result is area `perm[k]` here.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, MapError> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(MapError::InvalidArgument("not a permutation of the areas".into()));
        }
        Ok(Self::unnormalized(perm.iter().map(|&p| self.areas[p]).collect())?.with_id(self.id))
    }
}

/// Half-side range of generated squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusRange {
    pub min: f64,
    pub max: f64,
}

impl Default for RadiusRange {
    fn default() -> Self {
        Self {
            min: 0.01,
            max: 0.03,
        }
    }
}

impl RadiusRange {
    fn check(&self) -> Result<(), MapError> {
        if !(self.min > 0.0 && self.min <= self.max && 2.0 * self.max < 0.5) {
            return Err(MapError::InvalidArgument(format!(
                "radius range [{}, {}] needs 0 < min <= max and 2*max < 0.5",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Places `n` non-overlapping squares with uniform centers and half-sides.
pub fn generate_map<R: Rng + ?Sized>(
    n: usize,
    radius: RadiusRange,
    rng: &mut R,
) -> Result<AreaMap, MapError> {
    if n == 0 {
        return Err(MapError::InvalidArgument("n must be at least 1".into()));
    }
    radius.check()?;
    let mut areas: Vec<Area> = Vec::with_capacity(n);
    while areas.len() < n {
        let mut rejections = 0;
        let area = loop {
            let c = Point::new(rng.gen::<f64>(), rng.gen::<f64>());
            let r = if radius.min == radius.max {
                radius.min
            } else {
                rng.gen_range(radius.min..=radius.max)
            };
            let fits = c.x - r >= 0.0 && c.x + r <= 1.0 && c.y - r >= 0.0 && c.y + r <= 1.0;
            if fits {
                let candidate = Area::square(c, r)?;
                if !areas.iter().any(|a| a.intersects(&candidate)) {
                    break candidate;
                }
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(MapError::GenerationTimeout {
                    placed: areas.len(),
                    n,
                });
            }
        };
        areas.push(area);
    }
    AreaMap::new(areas)
}

pub fn generate_map_seeded(n: usize, radius: RadiusRange, seed: u64) -> Result<AreaMap, MapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate_map(n, radius, &mut rng)?.with_id(seed))
}

/// `count` maps where map `i` comes from seed `seed + i` and carries id `i`.
pub fn generate_maps(
    count: usize,
    n: usize,
    radius: RadiusRange,
    seed: u64,
) -> Result<Vec<AreaMap>, MapError> {
    (0..count as u64)
        .map(|i| Ok(generate_map_seeded(n, radius, seed.wrapping_add(i))?.with_id(i)))
        .collect()
}

/// Writes [`generate_maps`] output to `path`; the file is removed on failure.
pub fn generate_dataset(
    count: usize,
    n: usize,
    radius: RadiusRange,
    seed: u64,
    path: &Path,
) -> Result<usize, MapError> {
    if count == 0 {
        return Err(MapError::InvalidArgument("count must be at least 1".into()));
    }
    let result = (|| {
        let mut out = BufWriter::new(File::create(path)?);
        for i in 0..count as u64 {
            let map = generate_map_seeded(n, radius, seed.wrapping_add(i))?.with_id(i);
            write_map(&mut out, &map)?;
        }
        out.flush()?;
        Ok(count)
    })();
    if result.is_err() {
        let _ = fs::remove_file(path);
    }
    result
}

/// Uniform scale plus offset; `apply(p) = p * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapTransform {
    pub scale: f64,
    pub offset: Point,
}

impl MapTransform {
    pub fn apply(&self, p: Point) -> Point {
        Point::new(p.x * self.scale + self.offset.x, p.y * self.scale + self.offset.y)
    }

    pub fn invert(&self, p: Point) -> Point {
        Point::new((p.x - self.offset.x) / self.scale, (p.y - self.offset.y) / self.scale)
    }
}

/// Fits the bounding box of `raw` into the unit square, keeping aspect ratio.
pub fn normalize_map(raw: &[[Point; 4]]) -> Result<(AreaMap, MapTransform), MapError> {
    if raw.is_empty() {
        return Err(MapError::InvalidArgument("a map needs at least one area".into()));
    }
    let pts = raw.iter().flatten();
    if pts.clone().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(MapError::InvalidArgument("non-finite coordinate".into()));
    }
    let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in pts {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    if extent <= 0.0 {
        return Err(MapError::DegenerateMap);
    }
    let scale = 1.0 / extent;
    let t = MapTransform {
        scale,
        offset: Point::new(-lo.x * scale, -lo.y * scale),
    };
    let areas = raw
        .iter()
        .map(|c| Area::from_corners(c.map(|p| t.apply(p))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((AreaMap::new(areas)?, t))
}

#[derive(Serialize, Deserialize)]
struct MapRecord {
    id: u64,
    n: usize,
    areas: Vec<AreaRecord>,
}

#[derive(Serialize, Deserialize)]
struct AreaRecord {
    corners: Vec<[f64; 2]>,
}

fn write_map<W: Write>(out: &mut W, map: &AreaMap) -> Result<(), MapError> {
    let record = MapRecord {
        id: map.id,
        n: map.len(),
        areas: map
            .areas()
            .iter()
            .map(|a| AreaRecord {
                corners: a.corners().iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut *out, &record).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn save_maps<W: Write>(maps: &[AreaMap], out: W) -> Result<(), MapError> {
    let mut out = BufWriter::new(out);
    for map in maps {
        write_map(&mut out, map)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_line(text: &str) -> Result<AreaMap, String> {
    let record: MapRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if record.n != record.areas.len() {
        return Err(format!("n = {} but {} areas listed", record.n, record.areas.len()));
    }
    let mut areas = Vec::with_capacity(record.n);
    for (i, a) in record.areas.iter().enumerate() {
        let corners: [[f64; 2]; 4] = a
            .corners
            .as_slice()
            .try_into()
            .map_err(|_| format!("area {i} has {} corners, expected 4", a.corners.len()))?;
        let area = Area::from_corners(corners.map(|[x, y]| Point::new(x, y)))
            .map_err(|e| format!("area {i}: {e}"))?;
        areas.push(area);
    }
    AreaMap::new(areas)
        .map(|m| m.with_id(record.id))
        .map_err(|e| e.to_string())
}

/// Reads one map per non-blank line; line numbers in errors are 1-based.
pub fn load_maps<R: BufRead>(input: R) -> Result<Vec<AreaMap>, MapError> {
    let mut maps = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        maps.push(parse_line(&line).map_err(|reason| MapError::ParseError { line: i + 1, reason })?);
    }
    Ok(maps)
}

pub fn load_maps_file(path: &Path) -> Result<Vec<AreaMap>, MapError> {
    load_maps(io::BufReader::new(File::open(path)?))
}
