//! Gated graph convolution encoder over the complete area graph.
//!
//! Node features are the eight corner coordinates; edge features are center
//! distances. Each layer gates neighbor messages by a sigmoid of the edge
//! embedding, averages them over the other nodes, and updates both node and
//! edge embeddings residually through a per-graph batch norm and ReLU.

use gradtape::{NormMode, ParamId, ParamStore, Tape, TapeError, Tensor, Var};
use rand::Rng;

use crate::mapgen::AreaMap;

pub const FEATURE_DIM: usize = 8;

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn init_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

/// Affine batch-norm parameters plus the running statistics used in eval mode.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl NormParams {
    fn register(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full(1, d, 1.0), true),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(1, d), true),
            running_mean: store.add(format!("{prefix}.running_mean"), Tensor::zeros(1, d), false),
            running_var: store.add(format!("{prefix}.running_var"), Tensor::full(1, d, 1.0), false),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GgcnLayer {
    pub u: ParamId,
    pub v: ParamId,
    pub a: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub node_norm: NormParams,
    pub edge_norm: NormParams,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub dim: usize,
    pub node_w: ParamId,
    pub node_b: ParamId,
    pub edge_w: ParamId,
    pub edge_b: ParamId,
    pub layers: Vec<GgcnLayer>,
}

impl EncoderParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let node_w = store.add(format!("{prefix}.node_w"), init_uniform(rng, dim, FEATURE_DIM, FEATURE_DIM), true);
        let node_b = store.add(format!("{prefix}.node_b"), init_uniform(rng, 1, dim, FEATURE_DIM), true);
        let edge_w = store.add(format!("{prefix}.edge_w"), init_uniform(rng, dim, 1, 1), true);
        let edge_b = store.add(format!("{prefix}.edge_b"), init_uniform(rng, 1, dim, 1), true);
        let layers = (0..layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                let mut mat = |name: &str| store.add(format!("{p}.{name}"), init_uniform(rng, dim, dim, dim), true);
                let (u, v, a, b, c) = (mat("u"), mat("v"), mat("a"), mat("b"), mat("c"));
                GgcnLayer {
                    u,
                    v,
                    a,
                    b,
                    c,
                    node_norm: NormParams::register(store, &format!("{p}.node_norm"), dim),
                    edge_norm: NormParams::register(store, &format!("{p}.edge_norm"), dim),
                }
            })
            .collect();
        Self {
            dim,
            node_w,
            node_b,
            edge_w,
            edge_b,
            layers,
        }
    }

    /// Norm layers in the order [`encode`] applies them.
    pub fn norms(&self) -> impl Iterator<Item = &NormParams> {
        self.layers.iter().flat_map(|l| [&l.node_norm, &l.edge_norm])
    }
}

/// Which statistics the batch norms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormUse {
    /// Statistics of the current graph (training).
    Batch,
    /// Stored running statistics (evaluation).
    Running,
}

/// Per-column `(mean, variance)` observed by one batch-norm application.
pub type NormStats = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone)]
pub struct Embeddings {
    /// `n x d`
    pub nodes: Var,
    /// `n*n x d`, row `i*n + j` is edge (i, j)
    pub edges: Var,
    /// Statistics seen by each norm in batch mode, in [`EncoderParams::norms`] order.
    pub stats: Vec<NormStats>,
}

struct Topology {
    from: Vec<usize>,
    to: Vec<usize>,
    target: Vec<Option<usize>>,
}

impl Topology {
    fn complete(n: usize) -> Self {
        let from = (0..n * n).map(|r| r / n).collect();
        let to = (0..n * n).map(|r| r % n).collect();
        let target = (0..n * n)
            .map(|r| (r / n != r % n).then_some(r / n))
            .collect();
        Self { from, to, target }
    }
}

/// Initial projections: `h0 = X W + b` from corner features and
/// `e0_ij = |p_i - p_j| w + b` from center distances.
pub fn init_embeddings(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    map: &AreaMap,
) -> Result<(Var, Var), TapeError> {
    let n = map.len();
    let x = Tensor::from_vec(n, FEATURE_DIM, map.features().iter().flatten().copied().collect())?;
    let pos = map.positions();
    let dist = Tensor::from_vec(
        n * n,
        1,
        (0..n * n).map(|r| pos[r / n].distance(pos[r % n])).collect(),
    )?;
    let x = tape.constant(x);
    let dist = tape.constant(dist);
    let (nw, nb) = (tape.param(store, params.node_w), tape.param(store, params.node_b));
    let (ew, eb) = (tape.param(store, params.edge_w), tape.param(store, params.edge_b));
    let h = tape.linear(nw, x, Some(nb))?;
    let e = tape.linear(ew, dist, Some(eb))?;
    Ok((h, e))
}

fn norm(
    tape: &mut Tape,
    store: &ParamStore,
    p: &NormParams,
    x: Var,
    mode: NormUse,
    stats: &mut Vec<NormStats>,
) -> Result<Var, TapeError> {
    let (g, b) = (tape.param(store, p.gamma), tape.param(store, p.beta));
    match mode {
        NormUse::Batch => {
            let out = tape.batch_norm(x, g, b, NormMode::Batch)?;
            let (m, v) = tape.batch_stats(out).expect("batch-mode norm records stats");
            stats.push((m.to_vec(), v.to_vec()));
            Ok(out)
        }
        NormUse::Running => tape.batch_norm(
            x,
            g,
            b,
            NormMode::Fixed {
                mean: store.get(p.running_mean).data(),
                var: store.get(p.running_var).data(),
            },
        ),
    }
}

fn layer_forward(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &GgcnLayer,
    topo: &Topology,
    (h, e): (Var, Var),
    mode: NormUse,
    stats: &mut Vec<NormStats>,
) -> Result<(Var, Var), TapeError> {
    let n = tape.shape(h)[0];
    let [u, v, a, b, c] = [layer.u, layer.v, layer.a, layer.b, layer.c].map(|id| tape.param(store, id));

    let uh = tape.linear(u, h, None)?;
    let vh = tape.linear(v, h, None)?;
    let gate = tape.sigmoid(e);
    let vh_j = tape.gather_rows(vh, &topo.to)?;
    let msg = tape.hadamard(gate, vh_j)?;
    let agg = tape.scatter_mean(msg, &topo.target, n)?;
    let node_in = tape.add(uh, agg)?;
    let node_bn = norm(tape, store, &layer.node_norm, node_in, mode, stats)?;
    let node_act = tape.relu(node_bn);
    let h_next = tape.add(h, node_act)?;

    let ae = tape.linear(a, e, None)?;
    let bh = tape.linear(b, h, None)?;
    let ch = tape.linear(c, h, None)?;
    let bh_i = tape.gather_rows(bh, &topo.from)?;
    let ch_j = tape.gather_rows(ch, &topo.to)?;
    let edge_in = tape.add(ae, bh_i)?;
    let edge_in = tape.add(edge_in, ch_j)?;
    let edge_bn = norm(tape, store, &layer.edge_norm, edge_in, mode, stats)?;
    let edge_act = tape.relu(edge_bn);
    let e_next = tape.add(e, edge_act)?;
    Ok((h_next, e_next))
}

/// One gated graph convolution layer applied to `(h, e)`.
pub fn ggcn_layer(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &GgcnLayer,
    (h, e): (Var, Var),
    mode: NormUse,
) -> Result<(Var, Var, Vec<NormStats>), TapeError> {
    let n = tape.shape(h)[0];
    if tape.shape(e)[0] != n * n {
        return Err(TapeError::ShapeMismatch {
            op: "ggcn_layer",
            left: tape.shape(h),
            right: tape.shape(e),
        });
    }
    let mut stats = Vec::new();
    let (h, e) = layer_forward(tape, store, layer, &Topology::complete(n), (h, e), mode, &mut stats)?;
    Ok((h, e, stats))
}

pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    map: &AreaMap,
    mode: NormUse,
) -> Result<Embeddings, TapeError> {
    let topo = Topology::complete(map.len());
    let mut state = init_embeddings(tape, store, params, map)?;
    let mut stats = Vec::new();
    for layer in &params.layers {
        state = layer_forward(tape, store, layer, &topo, state, mode, &mut stats)?;
    }
    Ok(Embeddings {
        nodes: state.0,
        edges: state.1,
        stats,
    })
}

/// Moves running statistics toward the batch average of `observed`
/// (one entry per graph, each in [`EncoderParams::norms`] order).
pub fn update_running_stats(
    store: &mut ParamStore,
    params: &EncoderParams,
    observed: &[Vec<NormStats>],
    momentum: f64,
) {
    if observed.is_empty() {
        return;
    }
    let count = observed.len() as f64;
    for (k, p) in params.norms().enumerate() {
        for (id, pick) in [(p.running_mean, 0), (p.running_var, 1)] {
            let running = store.get_mut(id).data_mut();
            for (c, r) in running.iter_mut().enumerate() {
                let avg: f64 = observed
                    .iter()
                    .map(|g| if pick == 0 { g[k].0[c] } else { g[k].1[c] })
                    .sum::<f64>()
                    / count;
                *r = (1.0 - momentum) * *r + momentum * avg;
            }
        }
    }
}
