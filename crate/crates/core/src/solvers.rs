//! Reference solvers: an exact subset DP over order, corner and pattern, an
//! exhaustive enumerator, nearest-neighbor and 2-opt heuristics, and the
//! asymmetric-to-symmetric matrix reduction used for external TSP tools.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    inter_area_distance, unchecked_cost, CostModel, Decision, GeometryError, Point, Schedule,
    CORNER_COUNT, PATTERN_COUNT,
};
use crate::mapgen::AreaMap;

/// Largest map the subset DP accepts.
pub const EXACT_MAX_AREAS: usize = 12;
/// Largest map the enumerator accepts.
pub const BRUTE_FORCE_MAX_AREAS: usize = 5;
/// Scale applied before rounding in [`symmetrize`].
pub const SYMMETRIZE_SCALE: f64 = 100.0;
const OPTIONS: usize = CORNER_COUNT * PATTERN_COUNT;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("{solver} solver supports n <= {cap}, got n = {n}")]
    TooLarge {
        solver: &'static str,
        n: usize,
        cap: usize,
    },
    #[error("scaled edge weights do not fit in 32-bit integers (largest magnitude {0})")]
    Overflow(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Entry point, exit point and weighted service cost of one (corner, pattern)
/// choice for one area.
#[derive(Debug, Clone, Copy)]
struct Choice {
    corner: usize,
    pattern: usize,
    entry: Point,
    exit: Point,
    service: f64,
}

fn choices_for(map: &AreaMap, cost: &CostModel, area: usize) -> Vec<Choice> {
    let a = map.area(area);
    (0..CORNER_COUNT)
        .flat_map(|corner| (0..PATTERN_COUNT).map(move |pattern| (corner, pattern)))
        .map(|(corner, pattern)| Choice {
            corner,
            pattern,
            entry: cost.entry(a, corner),
            exit: cost.exit(a, corner, pattern),
            service: cost.service(a, corner, pattern),
        })
        .collect()
}

fn finish(map: &AreaMap, decisions: Vec<Decision>, cost: &CostModel) -> Result<(Schedule, f64), SolverError> {
    let s = Schedule::evaluate(map, decisions, cost)?;
    let c = s.total_cost;
    Ok((s, c))
}

/// Globally optimal schedule by dynamic programming over (visited subset,
/// last area, last choice).
pub fn exact_schedule(map: &AreaMap, cost: &CostModel) -> Result<(Schedule, f64), SolverError> {
    let n = map.len();
    if n > EXACT_MAX_AREAS {
        return Err(SolverError::TooLarge {
            solver: "exact",
            n,
            cap: EXACT_MAX_AREAS,
        });
    }
    let options: Vec<Vec<Choice>> = (0..n).map(|i| choices_for(map, cost, i)).collect();
    let decisions = subset_dp(&options, cost.closed);
    finish(map, decisions, cost)
}

/// [`exact_schedule`] with each area pinned to one (corner, pattern).
pub fn exact_schedule_fixed(
    map: &AreaMap,
    fixed: &[(usize, usize)],
    cost: &CostModel,
) -> Result<(Schedule, f64), SolverError> {
    let n = map.len();
    if n > EXACT_MAX_AREAS {
        return Err(SolverError::TooLarge {
            solver: "exact",
            n,
            cap: EXACT_MAX_AREAS,
        });
    }
    check_fixed(map, fixed)?;
    let options: Vec<Vec<Choice>> = (0..n)
        .map(|i| {
            let (c, p) = fixed[i];
            let a = map.area(i);
            vec![Choice {
                corner: c,
                pattern: p,
                entry: cost.entry(a, c),
                exit: cost.exit(a, c, p),
                service: cost.service(a, c, p),
            }]
        })
        .collect();
    finish(map, subset_dp(&options, cost.closed), cost)
}

fn check_fixed(map: &AreaMap, fixed: &[(usize, usize)]) -> Result<(), SolverError> {
    if fixed.len() != map.len() {
        return Err(SolverError::InvalidArgument(format!(
            "{} fixed points for {} areas",
            fixed.len(),
            map.len()
        )));
    }
    if let Some((c, p)) = fixed.iter().find(|(c, p)| *c >= CORNER_COUNT || *p >= PATTERN_COUNT) {
        return Err(SolverError::InvalidArgument(format!(
            "fixed point (corner {c}, pattern {p}) out of range"
        )));
    }
    Ok(())
}

/// Core DP. State index is `area * m + option` with `m` options per area.
/// Closed tours start at area 0; since only the entry corner of the first
/// decision feeds the closing flight, one pass runs per distinct first entry.
fn subset_dp(options: &[Vec<Choice>], closed: bool) -> Vec<Decision> {
    let n = options.len();
    let m = options[0].len();
    let states = n * m;
    let full = (1usize << n) - 1;
    let flat: Vec<&Choice> = options.iter().flatten().collect();
    let flights: Vec<f64> = flat
        .iter()
        .flat_map(|a| flat.iter().map(move |b| inter_area_distance(a.exit, b.entry)))
        .collect();

    // Each pass seeds a set of first options; returns (cost, decisions).
    let run = |starts: &[(usize, usize)], close_to: Option<Point>| -> (f64, Vec<Decision>) {
        let mut dp = vec![f64::INFINITY; (full + 1) * states];
        let mut parent = vec![usize::MAX; (full + 1) * states];
        for &(a, o) in starts {
            dp[(1 << a) * states + a * m + o] = options[a][o].service;
        }
        for mask in 1..=full {
            for last in 0..states {
                let cur = dp[mask * states + last];
                if !cur.is_finite() {
                    continue;
                }
                let row = &flights[last * states..(last + 1) * states];
                for next in 0..n {
                    if mask & (1 << next) != 0 {
                        continue;
                    }
                    let nmask = mask | (1 << next);
                    for o in 0..m {
                        let to = next * m + o;
                        let c = cur + row[to] + flat[to].service;
                        let slot = nmask * states + to;
                        if c < dp[slot] {
                            dp[slot] = c;
                            parent[slot] = last;
                        }
                    }
                }
            }
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for last in 0..states {
            let mut c = dp[full * states + last];
            if let Some(p) = close_to {
                c += inter_area_distance(options[last / m][last % m].exit, p);
            }
            if c < best.0 {
                best = (c, last);
            }
        }
        let mut seq = Vec::with_capacity(n);
        let (mut mask, mut state) = (full, best.1);
        while state != usize::MAX {
            let ch = &options[state / m][state % m];
            seq.push(Decision::new(state / m, ch.corner, ch.pattern));
            let prev = parent[mask * states + state];
            mask &= !(1 << (state / m));
            state = prev;
        }
        seq.reverse();
        (best.0, seq)
    };

    if !closed {
        let starts: Vec<_> = (0..n).flat_map(|a| (0..m).map(move |o| (a, o))).collect();
        return run(&starts, None).1;
    }
    let mut best: Option<(f64, Vec<Decision>)> = None;
    let mut entries: Vec<usize> = options[0].iter().map(|c| c.corner).collect();
    entries.dedup();
    for corner in entries {
        let starts: Vec<_> = (0..m)
            .filter(|&o| options[0][o].corner == corner)
            .map(|o| (0, o))
            .collect();
        let close = options[0][starts[0].1].entry;
        let (c, seq) = run(&starts, Some(close));
        if best.as_ref().map_or(true, |(b, _)| c < *b) {
            best = Some((c, seq));
        }
    }
    best.expect("at least one corner").1
}

/// Exhaustive search over every order and every (corner, pattern) per area.
/// Returns the best schedule, its cost and the number of sequences scored.
pub fn brute_force_enumerate(
    map: &AreaMap,
    cost: &CostModel,
) -> Result<(Schedule, f64, u64), SolverError> {
    let n = map.len();
    if n > BRUTE_FORCE_MAX_AREAS {
        return Err(SolverError::TooLarge {
            solver: "brute-force",
            n,
            cap: BRUTE_FORCE_MAX_AREAS,
        });
    }
    // Flights between every pair of (area, corner, pattern) choices, indexed
    // by composite index; the tour cost is accumulated along the search.
    let choices: Vec<Choice> = (0..n).flat_map(|a| choices_for(map, cost, a)).collect();
    let k = choices.len();
    let flights: Vec<f64> = choices
        .iter()
        .flat_map(|a| choices.iter().map(move |b| inter_area_distance(a.exit, b.entry)))
        .collect();
    struct Search<'a> {
        n: usize,
        closed: bool,
        choices: &'a [Choice],
        flights: &'a [f64],
        seq: Vec<usize>,
        used: Vec<bool>,
        best: (f64, Vec<usize>),
        count: u64,
    }
    fn dfs(s: &mut Search, so_far: f64) {
        let k = s.choices.len();
        if s.seq.len() == s.n {
            s.count += 1;
            let total = if s.closed {
                so_far + s.flights[s.seq[s.n - 1] * k + s.seq[0]]
            } else {
                so_far
            };
            if total < s.best.0 {
                s.best = (total, s.seq.clone());
            }
            return;
        }
        for a in 0..s.n {
            if s.used[a] {
                continue;
            }
            s.used[a] = true;
            for opt in 0..OPTIONS {
                let c = a * OPTIONS + opt;
                let step = s.seq.last().map_or(0.0, |&p| s.flights[p * k + c]);
                s.seq.push(c);
                dfs(s, so_far + step + s.choices[c].service);
                s.seq.pop();
            }
            s.used[a] = false;
        }
    }
    let mut s = Search {
        n,
        closed: cost.closed,
        choices: &choices,
        flights: &flights,
        seq: Vec::with_capacity(n),
        used: vec![false; n],
        best: (f64::INFINITY, Vec::new()),
        count: 0,
    };
    debug_assert_eq!(k, n * OPTIONS);
    dfs(&mut s, 0.0);
    let decisions = s
        .best
        .1
        .iter()
        .map(|&c| Decision::new(c / OPTIONS, choices[c].corner, choices[c].pattern))
        .collect();
    let count = s.count;
    let (schedule, c) = finish(map, decisions, cost)?;
    Ok((schedule, c, count))
}

/// Greedy construction from a fixed first decision: repeatedly append the
/// unvisited (area, corner, pattern) with the smallest flight plus service.
/// Ties go to the lowest composite index.
pub fn nearest_neighbor(map: &AreaMap, start: Decision, cost: &CostModel) -> Result<Schedule, SolverError> {
    let n = map.len();
    if start.area >= n || start.corner >= CORNER_COUNT || start.pattern >= PATTERN_COUNT {
        return Err(SolverError::InvalidArgument(format!("start {start:?} out of range")));
    }
    let options: Vec<Vec<Choice>> = (0..n).map(|i| choices_for(map, cost, i)).collect();
    let mut used = vec![false; n];
    used[start.area] = true;
    let mut seq = vec![start];
    let mut here = cost.exit(map.area(start.area), start.corner, start.pattern);
    while seq.len() < n {
        let mut best = (f64::INFINITY, Decision::new(0, 0, 0));
        for (a, opts) in options.iter().enumerate() {
            if used[a] {
                continue;
            }
            for ch in opts {
                let c = inter_area_distance(here, ch.entry) + ch.service;
                if c < best.0 {
                    best = (c, Decision::new(a, ch.corner, ch.pattern));
                }
            }
        }
        let d = best.1;
        used[d.area] = true;
        here = options[d.area][d.corner * PATTERN_COUNT + d.pattern].exit;
        seq.push(d);
    }
    Ok(Schedule::evaluate(map, seq, cost)?)
}

/// Best [`nearest_neighbor`] tour over every first area, each started with
/// its cheapest-service option.
pub fn nearest_neighbor_best(map: &AreaMap, cost: &CostModel) -> Result<Schedule, SolverError> {
    let mut best: Option<Schedule> = None;
    for a in 0..map.len() {
        let opts = choices_for(map, cost, a);
        let first = opts
            .iter()
            .enumerate()
            .fold(0, |b, (i, c)| if c.service < opts[b].service { i } else { b });
        let start = Decision::new(a, opts[first].corner, opts[first].pattern);
        let s = nearest_neighbor(map, start, cost)?;
        if best.as_ref().map_or(true, |b| s.total_cost < b.total_cost) {
            best = Some(s);
        }
    }
    Ok(best.expect("map has at least one area"))
}

/// Picks the cheapest (corner, pattern) for position `pos`, others fixed.
fn reoptimize(map: &AreaMap, seq: &mut [Decision], pos: usize, cost: &CostModel) {
    let mut best = (unchecked_cost(map, seq, cost), seq[pos]);
    let area = seq[pos].area;
    for corner in 0..CORNER_COUNT {
        for pattern in 0..PATTERN_COUNT {
            seq[pos] = Decision::new(area, corner, pattern);
            let c = unchecked_cost(map, seq, cost);
            if c < best.0 {
                best = (c, seq[pos]);
            }
        }
    }
    seq[pos] = best.1;
}

/// Best-improvement segment reversal. Each pass scans every segment
/// `i..=j`, reverses it, re-picks corner and pattern at both ends, and
/// applies the single best strictly improving move.
pub fn two_opt(
    map: &AreaMap,
    schedule: &Schedule,
    cost: &CostModel,
    max_passes: usize,
) -> Result<Schedule, SolverError> {
    let mut seq = schedule.decisions.clone();
    let mut current = crate::geometry::schedule_cost(map, &seq, cost)?;
    let n = seq.len();
    for _ in 0..max_passes {
        let mut best: Option<(f64, Vec<Decision>)> = None;
        for i in 0..n {
            for j in i..n {
                let mut cand = seq.clone();
                cand[i..=j].reverse();
                reoptimize(map, &mut cand, i, cost);
                if j != i {
                    reoptimize(map, &mut cand, j, cost);
                }
                let c = unchecked_cost(map, &cand, cost);
                let threshold = best.as_ref().map_or(current - 1e-12, |b| b.0);
                if c < threshold {
                    best = Some((c, cand));
                }
            }
        }
        match best {
            Some((c, cand)) => {
                current = c;
                seq = cand;
            }
            None => break,
        }
    }
    Ok(Schedule::evaluate(map, seq, cost)?)
}

/// Square matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightMatrix {
    pub n: usize,
    pub weights: Vec<f64>,
    /// Entries were multiplied by [`SYMMETRIZE_SCALE`] and rounded.
    pub scaled: bool,
    pub symmetrized: bool,
}

impl EdgeWeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, SolverError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(SolverError::InvalidArgument("matrix is not square".into()));
        }
        Ok(Self {
            n,
            weights: rows.into_iter().flatten().collect(),
            scaled: false,
            symmetrized: false,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Length of the closed tour visiting `order`.
    pub fn tour_cost(&self, order: &[usize]) -> f64 {
        let k = order.len();
        (0..k).map(|t| self.get(order[t], order[(t + 1) % k])).sum()
    }
}

/// `a_ij` = flight from the exit of area i to the entry of area j under the
/// pinned (corner, pattern) of each area; zero diagonal.
pub fn build_edge_matrix(
    map: &AreaMap,
    fixed: &[(usize, usize)],
    cost: &CostModel,
) -> Result<EdgeWeightMatrix, SolverError> {
    check_fixed(map, fixed)?;
    let n = map.len();
    let exits: Vec<Point> = (0..n)
        .map(|i| cost.exit(map.area(i), fixed[i].0, fixed[i].1))
        .collect();
    let entries: Vec<Point> = (0..n).map(|i| cost.entry(map.area(i), fixed[i].0)).collect();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                weights[i * n + j] = inter_area_distance(exits[i], entries[j]);
            }
        }
    }
    Ok(EdgeWeightMatrix {
        n,
        weights,
        scaled: false,
        symmetrized: false,
    })
}

/// Link constant placed on every city/ghost pair: one more than the sum of
/// all entries, so any tour using every link beats any tour that does not.
pub fn link_constant(e: &EdgeWeightMatrix) -> f64 {
    e.weights.iter().map(|w| w.abs()).sum::<f64>() + 1.0
}

/// Node doubling. City i becomes nodes i (arrival) and n+i (departure);
/// `d(i, n+i) = -M`, `d(n+i, j) = a_ij`, all other pairs cost `2M`.
/// An optimal symmetric tour has cost `asym_opt - n*M`.
pub fn node_doubling(e: &EdgeWeightMatrix) -> EdgeWeightMatrix {
    let n = e.n;
    let big = link_constant(e);
    let size = 2 * n;
    let mut w = vec![2.0 * big; size * size];
    for i in 0..size {
        w[i * size + i] = 0.0;
    }
    for i in 0..n {
        w[i * size + n + i] = -big;
        w[(n + i) * size + i] = -big;
        for j in 0..n {
            if i != j {
                w[(n + i) * size + j] = e.get(i, j);
                w[j * size + n + i] = e.get(i, j);
            }
        }
    }
    EdgeWeightMatrix {
        n: size,
        weights: w,
        scaled: e.scaled,
        symmetrized: true,
    }
}

/// Scale by 100, round to integers, then [`node_doubling`].
pub fn symmetrize(e: &EdgeWeightMatrix) -> Result<EdgeWeightMatrix, SolverError> {
    let rounded = EdgeWeightMatrix {
        n: e.n,
        weights: e.weights.iter().map(|w| (w * SYMMETRIZE_SCALE).round()).collect(),
        scaled: true,
        symmetrized: false,
    };
    let out = node_doubling(&rounded);
    let largest = out.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if largest > i32::MAX as f64 {
        return Err(SolverError::Overflow(largest));
    }
    Ok(out)
}

/// Optimal closed tour of a matrix by Held-Karp from node 0.
/// Returns the visiting order (starting at 0) and its cost.
pub fn held_karp(e: &EdgeWeightMatrix) -> Result<(Vec<usize>, f64), SolverError> {
    let n = e.n;
    if n == 0 {
        return Err(SolverError::InvalidArgument("empty matrix".into()));
    }
    if n > 20 {
        return Err(SolverError::TooLarge {
            solver: "held-karp",
            n,
            cap: 20,
        });
    }
    if n == 1 {
        return Ok((vec![0], e.get(0, 0)));
    }
    let full = (1usize << n) - 1;
    let mut dp = vec![f64::INFINITY; (full + 1) * n];
    let mut parent = vec![usize::MAX; (full + 1) * n];
    dp[n] = 0.0;
    for mask in (1..=full).filter(|m| m & 1 == 1) {
        for last in 0..n {
            let cur = dp[mask * n + last];
            if !cur.is_finite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let slot = (mask | 1 << next) * n + next;
                let c = cur + e.get(last, next);
                if c < dp[slot] {
                    dp[slot] = c;
                    parent[slot] = last;
                }
            }
        }
    }
    let mut best = (f64::INFINITY, 0);
    for last in 1..n {
        let c = dp[full * n + last] + e.get(last, 0);
        if c < best.0 {
            best = (c, last);
        }
    }
    let mut order = Vec::with_capacity(n);
    let (mut mask, mut node) = (full, best.1);
    while node != usize::MAX {
        order.push(node);
        let prev = parent[mask * n + node];
        mask &= !(1 << node);
        node = prev;
    }
    order.reverse();
    Ok((order, best.0))
}

/// Optimal closed tour by trying every order that starts at node 0.
pub fn brute_force_tour(e: &EdgeWeightMatrix) -> Result<(Vec<usize>, f64), SolverError> {
    let n = e.n;
    if n == 0 {
        return Err(SolverError::InvalidArgument("empty matrix".into()));
    }
    if n > 12 {
        return Err(SolverError::TooLarge {
            solver: "brute-force",
            n,
            cap: 12,
        });
    }
    struct Search<'a> {
        e: &'a EdgeWeightMatrix,
        order: Vec<usize>,
        used: Vec<bool>,
        best: (f64, Vec<usize>),
    }
    fn dfs(s: &mut Search, so_far: f64) {
        let n = s.e.n;
        let last = *s.order.last().expect("starts at node 0");
        if s.order.len() == n {
            let total = so_far + s.e.get(last, 0);
            if total < s.best.0 {
                s.best = (total, s.order.clone());
            }
            return;
        }
        for next in 1..n {
            if s.used[next] {
                continue;
            }
            s.used[next] = true;
            s.order.push(next);
            dfs(s, so_far + s.e.get(last, next));
            s.order.pop();
            s.used[next] = false;
        }
    }
    let mut used = vec![false; n];
    used[0] = true;
    let mut s = Search {
        e,
        order: vec![0],
        used,
        best: (f64::INFINITY, Vec::new()),
    };
    dfs(&mut s, 0.0);
    Ok((s.best.1, s.best.0))
}

/// Collapses a tour of a node-doubled matrix back to city order, starting at
/// city 0 and oriented so each city precedes its ghost.
pub fn undouble_tour(order: &[usize]) -> Vec<usize> {
    let n = order.len() / 2;
    let k = order.len();
    let start = order.iter().position(|&v| v == 0).expect("node 0 present");
    let forward = order[(start + 1) % k] == n;
    (0..k)
        .map(|t| {
            if forward {
                order[(start + t) % k]
            } else {
                order[(start + k - t) % k]
            }
        })
        .filter(|&v| v < n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Area;

    fn dot(x: f64, y: f64) -> Area {
        Area::square(Point::new(x, y), 1e-4).unwrap()
    }

    #[test]
    fn single_area() {
        let map = AreaMap::new(vec![dot(0.5, 0.5)]).unwrap();
        let open = CostModel {
            closed: false,
            ..Default::default()
        };
        assert_eq!(exact_schedule(&map, &open).unwrap().1, 0.0);
        let (s, c) = exact_schedule(&map, &CostModel::default()).unwrap();
        assert_eq!(s.decisions.len(), 1);
        let b = brute_force_enumerate(&map, &CostModel::default()).unwrap();
        assert_eq!(b.1, c);
    }

    #[test]
    fn two_areas_enumerate_288() {
        let map = AreaMap::new(vec![dot(0.2, 0.2), dot(0.8, 0.8)]).unwrap();
        let (_, _, count) = brute_force_enumerate(&map, &CostModel::default()).unwrap();
        assert_eq!(count, 288);
    }

    #[test]
    fn size_caps() {
        let areas: Vec<Area> = (0..13).map(|i| dot(0.05 + 0.07 * i as f64, 0.5)).collect();
        let map = AreaMap::new(areas).unwrap();
        let err = exact_schedule(&map, &CostModel::default()).unwrap_err();
        assert!(err.to_string().contains("n <= 12"), "{err}");
        assert!(brute_force_enumerate(&map, &CostModel::default()).is_err());
    }

    #[test]
    fn zero_passes_is_identity() {
        let map = AreaMap::new(vec![dot(0.2, 0.2), dot(0.8, 0.1), dot(0.5, 0.9)]).unwrap();
        let cm = CostModel::default();
        let s = Schedule::evaluate(
            &map,
            vec![Decision::new(2, 1, 0), Decision::new(0, 3, 2), Decision::new(1, 0, 1)],
            &cm,
        )
        .unwrap();
        assert_eq!(two_opt(&map, &s, &cm, 0).unwrap(), s);
    }

    #[test]
    fn doubling_is_symmetric_and_integral() {
        let e = EdgeWeightMatrix::from_rows(vec![
            vec![0.0, 0.123, 0.5],
            vec![0.7, 0.0, 0.25],
            vec![0.3, 0.9, 0.0],
        ])
        .unwrap();
        let s = symmetrize(&e).unwrap();
        assert_eq!(s.n, 6);
        assert!(s.is_symmetric());
        assert!(s.weights.iter().all(|w| w.fract() == 0.0));
        assert!(s.scaled && s.symmetrized);
    }

    #[test]
    fn huge_weights_overflow() {
        let e = EdgeWeightMatrix::from_rows(vec![vec![0.0, 1e9], vec![1e9, 0.0]]).unwrap();
        assert!(matches!(symmetrize(&e), Err(SolverError::Overflow(_))));
    }

    #[test]
    fn undouble_either_direction() {
        // cities 0,1,2 with ghosts 3,4,5; tour 0 3 1 4 2 5 and its reverse
        assert_eq!(undouble_tour(&[0, 3, 1, 4, 2, 5]), vec![0, 1, 2]);
        assert_eq!(undouble_tour(&[3, 0, 5, 2, 4, 1]), vec![0, 1, 2]);
    }
}
