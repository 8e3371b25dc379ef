//! Three-stage attention decoder: next area, then its entry corner, then its
//! coverage pattern. Every stage produces clipped logits `M * tanh(q.k / sqrt(d))`
//! and a log-softmax over its candidates.

use gradtape::{ParamId, ParamStore, Tape, TapeError, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{init_uniform, Embeddings};
use crate::geometry::{Area, CostModel, Decision, Point, CORNER_COUNT, PATTERN_COUNT};

/// Logit assigned to visited areas before the softmax.
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("every area is already visited")]
    AllVisited,
    #[error("replayed decision {step} ({decision:?}) is not available")]
    BadReplay { step: usize, decision: Decision },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub heads: usize,
    pub clip: f64,
    // area stage
    pub w_f: ParamId,
    pub w_c1: ParamId,
    pub w_a1: ParamId,
    pub w_a2: ParamId,
    pub w_q1: ParamId,
    pub w_k1: ParamId,
    pub v_first: ParamId,
    pub v_last: ParamId,
    // corner stage
    pub w_c2: ParamId,
    pub w_lambda: ParamId,
    pub w_lambda1: ParamId,
    pub w_lambda2: ParamId,
    pub w_q2: ParamId,
    pub w_k2: ParamId,
    // pattern stage
    pub w_c3: ParamId,
    pub w_psi1: ParamId,
    pub w_psi2: ParamId,
    pub w_q3: ParamId,
    pub w_k3: ParamId,
}

impl DecoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        (d1, d2, d3): (usize, usize, usize),
        heads: usize,
        clip: f64,
        rng: &mut R,
    ) -> Self {
        let mut add = |name: &str, rows: usize, cols: usize| {
            store.add(format!("{prefix}.{name}"), init_uniform(rng, rows, cols, cols), true)
        };
        Self {
            d1,
            d2,
            d3,
            heads,
            clip,
            w_f: add("w_f", d1, 3 * d1),
            w_c1: add("w_c1", d1, d1),
            w_a1: add("w_a1", d1, d1),
            w_a2: add("w_a2", d1, d1),
            w_q1: add("w_q1", d1, d1),
            w_k1: add("w_k1", d1, d1),
            v_first: add("v_first", 1, d1),
            v_last: add("v_last", 1, d1),
            w_c2: add("w_c2", d2, 2),
            w_lambda: add("w_lambda", d2, 2),
            w_lambda1: add("w_lambda1", d2, 2),
            w_lambda2: add("w_lambda2", d2, 2),
            w_q2: add("w_q2", d2, d2),
            w_k2: add("w_k2", d2, d2),
            w_c3: add("w_c3", d3, 2),
            w_psi1: add("w_psi1", d3, 2),
            w_psi2: add("w_psi2", d3, 2),
            w_q3: add("w_q3", d3, d3),
            w_k3: add("w_k3", d3, 2),
        }
    }
}

/// Partial tour, visited mask and current position during decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    pub partial: Vec<Decision>,
    pub visited: Vec<bool>,
    /// Exit point of the last decision; `None` before the first step.
    pub current: Option<Point>,
}

impl DecodeState {
    pub fn new(n: usize) -> Self {
        Self {
            partial: Vec::new(),
            visited: vec![false; n],
            current: None,
        }
    }

    /// 1-based index of the step about to be decoded.
    pub fn step(&self) -> usize {
        self.partial.len() + 1
    }
}

/// One stage's distribution.
#[derive(Debug, Clone)]
pub struct StageOutput {
    /// `1 x k` log-probabilities on the tape.
    pub log_probs: Var,
    /// Clipped logits before masking.
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Node-side tensors reused by every decoding step of one rollout.
#[derive(Debug, Clone)]
pub struct AreaCache {
    nodes: Var,
    graph: Var,
    keys: Var,
    values: Var,
    logit_keys: Var,
}

impl AreaCache {
    pub fn new(
        tape: &mut Tape,
        store: &ParamStore,
        p: &DecoderParams,
        emb: &Embeddings,
    ) -> Result<Self, TapeError> {
        let nodes = emb.nodes;
        let graph = tape.mean(nodes, 0)?;
        let [a1, a2, k1] = [p.w_a1, p.w_a2, p.w_k1].map(|id| tape.param(store, id));
        Ok(Self {
            nodes,
            graph,
            keys: tape.linear(a1, nodes, None)?,
            values: tape.linear(a2, nodes, None)?,
            logit_keys: tape.linear(k1, nodes, None)?,
        })
    }
}

/// `M * tanh(q K^T / sqrt(d))` followed by an optional additive mask and a
/// row log-softmax.
fn clipped_head(
    tape: &mut Tape,
    q: Var,
    keys: Var,
    clip: f64,
    mask: Option<&[bool]>,
) -> Result<StageOutput, TapeError> {
    let d = tape.shape(q)[1];
    let kt = tape.transpose(keys);
    let compat = tape.matmul(q, kt)?;
    let compat = tape.scale(compat, 1.0 / (d as f64).sqrt());
    let squashed = tape.tanh(compat);
    let logits_var = tape.scale(squashed, clip);
    let logits = tape.value(logits_var).data().to_vec();
    let masked = match mask {
        Some(visited) => {
            let row: Vec<f64> = visited.iter().map(|&v| if v { MASK_LOGIT } else { 0.0 }).collect();
            let m = tape.constant(Tensor::row(&row));
            tape.add(logits_var, m)?
        }
        None => logits_var,
    };
    let log_probs = tape.log_softmax(masked, 1)?;
    let probs = tape.value(log_probs).data().iter().map(|l| l.exp()).collect();
    Ok(StageOutput {
        log_probs,
        logits,
        probs,
    })
}

/// Context `W_F [h_G ; h_first ; h_last]`, with learned placeholders before
/// the first decision.
pub fn area_context(
    tape: &mut Tape,
    store: &ParamStore,
    p: &DecoderParams,
    cache: &AreaCache,
    state: &DecodeState,
) -> Result<Var, TapeError> {
    let (first, last) = match (state.partial.first(), state.partial.last()) {
        (Some(f), Some(l)) => (
            tape.gather_rows(cache.nodes, &[f.area])?,
            tape.gather_rows(cache.nodes, &[l.area])?,
        ),
        _ => (tape.param(store, p.v_first), tape.param(store, p.v_last)),
    };
    let joined = tape.concat(&[cache.graph, first, last], 1)?;
    let w_f = tape.param(store, p.w_f);
    tape.linear(w_f, joined, None)
}

pub fn select_area(
    tape: &mut Tape,
    store: &ParamStore,
    p: &DecoderParams,
    cache: &AreaCache,
    state: &DecodeState,
) -> Result<StageOutput, DecodeError> {
    if state.visited.iter().all(|&v| v) {
        return Err(DecodeError::AllVisited);
    }
    let ctx = area_context(tape, store, p, cache, state)?;
    let [c1, q1] = [p.w_c1, p.w_q1].map(|id| tape.param(store, id));
    let query = tape.linear(c1, ctx, None)?;
    let glimpse = tape.multi_head_attention(query, cache.keys, cache.values, p.heads)?;
    let q = tape.linear(q1, glimpse, None)?;
    Ok(clipped_head(tape, q, cache.logit_keys, p.clip, Some(&state.visited))?)
}

fn points_tensor(points: &[Point]) -> Tensor {
    Tensor::from_vec(points.len(), 2, points.iter().flat_map(|p| [p.x, p.y]).collect())
        .expect("two columns per point")
}

pub fn select_start(
    tape: &mut Tape,
    store: &ParamStore,
    p: &DecoderParams,
    current: Point,
    area: &Area,
) -> Result<StageOutput, TapeError> {
    let here = tape.constant(points_tensor(&[current]));
    let corners = tape.constant(points_tensor(area.corners()));
    let [c2, lam, lam1, lam2, q2, k2] =
        [p.w_c2, p.w_lambda, p.w_lambda1, p.w_lambda2, p.w_q2, p.w_k2].map(|id| tape.param(store, id));
    let query = tape.linear(c2, here, None)?;
    let keys = tape.linear(lam1, corners, None)?;
    let values = tape.linear(lam2, corners, None)?;
    let glimpse = tape.multi_head_attention(query, keys, values, 1)?;
    let q = tape.linear(q2, glimpse, None)?;
    let embedded = tape.linear(lam, corners, None)?;
    let logit_keys = tape.linear(k2, embedded, None)?;
    clipped_head(tape, q, logit_keys, p.clip, None)
}

pub fn select_pattern(
    tape: &mut Tape,
    store: &ParamStore,
    p: &DecoderParams,
    start: Point,
    stops: &[Point],
) -> Result<StageOutput, TapeError> {
    let here = tape.constant(points_tensor(&[start]));
    let stops = tape.constant(points_tensor(stops));
    let [c3, psi1, psi2, q3, k3] = [p.w_c3, p.w_psi1, p.w_psi2, p.w_q3, p.w_k3].map(|id| tape.param(store, id));
    let query = tape.linear(c3, here, None)?;
    let keys = tape.linear(psi1, stops, None)?;
    let values = tape.linear(psi2, stops, None)?;
    let glimpse = tape.multi_head_attention(query, keys, values, 1)?;
    let q = tape.linear(q3, glimpse, None)?;
    let logit_keys = tape.linear(k3, stops, None)?;
    clipped_head(tape, q, logit_keys, p.clip, None)
}

/// How each stage turns its distribution into a choice.
pub enum Chooser<'a, R: Rng + ?Sized> {
    /// Highest probability, lowest index on ties.
    Greedy,
    Sample(&'a mut R),
    /// Follow a given schedule (for scoring a known trajectory).
    Replay(&'a [Decision]),
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw that never returns a zero-probability index.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = argmax(probs);
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i;
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub area_logits: Vec<f64>,
    pub area_probs: Vec<f64>,
    pub corner_probs: Vec<f64>,
    pub pattern_probs: Vec<f64>,
}

/// Output of a full decode.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub decisions: Vec<Decision>,
    /// Sum of the chosen log-probabilities of all stages, on the tape.
    pub log_prob: Var,
    pub log_prob_value: f64,
    pub trace: Vec<StepTrace>,
}

/// Decodes a complete schedule from precomputed embeddings.
pub fn decode<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    p: &DecoderParams,
    emb: &Embeddings,
    areas: &[Area],
    cost: &CostModel,
    mut chooser: Chooser<'_, R>,
) -> Result<Rollout, DecodeError> {
    let n = areas.len();
    let cache = AreaCache::new(tape, store, p, emb)?;
    let mut state = DecodeState::new(n);
    let mut log_prob: Option<Var> = None;
    let mut trace = Vec::with_capacity(n);

    for step in 0..n {
        let replay = match &chooser {
            Chooser::Replay(d) => Some(*d.get(step).ok_or(DecodeError::BadReplay {
                step,
                decision: Decision::new(usize::MAX, 0, 0),
            })?),
            _ => None,
        };
        let mut choose = |probs: &[f64], replayed: Option<usize>, limit: usize| -> Result<usize, DecodeError> {
            let idx = match (&mut chooser, replayed) {
                (Chooser::Replay(_), Some(i)) => i,
                (Chooser::Sample(rng), _) => sample_index(probs, &mut **rng),
                _ => argmax(probs),
            };
            if idx >= limit || probs[idx] <= 0.0 {
                return Err(DecodeError::BadReplay {
                    step,
                    decision: replay.unwrap_or(Decision::new(idx, 0, 0)),
                });
            }
            Ok(idx)
        };

        let area_out = select_area(tape, store, p, &cache, &state)?;
        let j = choose(&area_out.probs, replay.map(|d| d.area), n)?;
        let area = &areas[j];
        let current = state.current.unwrap_or_else(|| area.center());

        let corner_out = select_start(tape, store, p, current, area)?;
        let k = choose(&corner_out.probs, replay.map(|d| d.corner), CORNER_COUNT)?;

        let stops: Vec<Point> = (0..PATTERN_COUNT).map(|z| cost.exit(area, k, z)).collect();
        let pattern_out = select_pattern(tape, store, p, area.corner(k), &stops)?;
        let z = choose(&pattern_out.probs, replay.map(|d| d.pattern), PATTERN_COUNT)?;

        let picked = [
            tape.pick(area_out.log_probs, 0, j)?,
            tape.pick(corner_out.log_probs, 0, k)?,
            tape.pick(pattern_out.log_probs, 0, z)?,
        ];
        for term in picked {
            log_prob = Some(match log_prob {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        trace.push(StepTrace {
            area_logits: area_out.logits,
            area_probs: area_out.probs,
            corner_probs: corner_out.probs,
            pattern_probs: pattern_out.probs,
        });
        state.partial.push(Decision::new(j, k, z));
        state.visited[j] = true;
        state.current = Some(stops[z]);
    }
    let log_prob = log_prob.expect("maps have at least one area");
    Ok(Rollout {
        decisions: state.partial,
        log_prob,
        log_prob_value: tape.value(log_prob).item(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(d: usize) -> (ParamStore, DecoderParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = DecoderParams::register(&mut store, "dec", (d, d, d), 2, 10.0, &mut rng);
        (store, p)
    }

    #[test]
    fn argmax_takes_lowest_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn sampling_skips_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let i = sample_index(&[0.0, 0.5, 0.0, 0.5, 0.0], &mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn zero_query_weights_give_uniform_corners() {
        let (mut store, p) = params(4);
        store.get_mut(p.w_q2).data_mut().fill(0.0);
        let area = Area::square(Point::new(0.5, 0.5), 0.1).unwrap();
        let mut tape = Tape::new();
        let out = select_start(&mut tape, &store, &p, Point::new(0.1, 0.9), &area).unwrap();
        for &pr in &out.probs {
            assert!((pr - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_or_duplicate_patterns() {
        let (store, p) = params(4);
        let mut tape = Tape::new();
        let s = Point::new(0.2, 0.3);
        let one = select_pattern(&mut tape, &store, &p, s, &[Point::new(0.4, 0.4)]).unwrap();
        assert_eq!(one.probs, vec![1.0]);
        let q = Point::new(0.25, 0.35);
        let two = select_pattern(&mut tape, &store, &p, s, &[q, q]).unwrap();
        assert_eq!(two.probs[0], two.probs[1]);
        assert!((two.probs[0] - 0.5).abs() < 1e-12);
    }
}
