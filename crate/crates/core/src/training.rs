//! REINFORCE training with a greedy-rollout or learned-critic baseline.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gradtape::{AdamConfig, AdamState, CheckpointError, Grads, ParamId, ParamStore, Tape, TapeError, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::decoder::{Chooser, DecodeError};
use crate::encoder::{encode, init_uniform, update_running_stats, EncoderParams, NormStats, NormUse};
use crate::geometry::{schedule_cost, CostModel, GeometryError};
use crate::mapgen::{generate_map, AreaMap, MapError, RadiusRange};
use crate::policy::{Policy, PolicyConfig};

const MAP_STREAM: u64 = 0x6d61_7073;
const SAMPLE_STREAM: u64 = 0x7361_6d70;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Rollout,
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub n_areas: usize,
    pub radius: RadiusRange,
    pub lr: f64,
    pub policy: PolicyConfig,
    pub baseline: BaselineKind,
    /// Steps between rollout-baseline snapshot refreshes.
    pub baseline_interval: usize,
    pub seed: u64,
    pub lanes: usize,
    pub lambda_intra: f64,
    pub closed: bool,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub norm_momentum: f64,
    /// Single-threaded, with `wall_ms` logged as 0 so logs are byte-identical.
    pub strict: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            steps_per_epoch: 1000,
            batch_size: 128,
            n_areas: 20,
            radius: RadiusRange::default(),
            lr: 1e-4,
            policy: PolicyConfig::full_size(),
            baseline: BaselineKind::Rollout,
            baseline_interval: 1000,
            seed: 1,
            lanes: crate::geometry::DEFAULT_LANES,
            lambda_intra: 0.0,
            closed: true,
            grad_clip: 1.0,
            checkpoint_every: 0,
            norm_momentum: 0.1,
            strict: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let counts = [
            (self.steps_per_epoch, "steps_per_epoch"),
            (self.batch_size, "batch_size"),
            (self.n_areas, "n_areas"),
            (self.baseline_interval, "baseline_interval"),
        ];
        if let Some((_, name)) = counts.iter().find(|(v, _)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be at least 1")));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        if self.lanes < 2 {
            return Err(TrainError::Config("lanes must be at least 2".into()));
        }
        if !(self.lambda_intra >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(TrainError::Config("lambda_intra and grad_clip must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.norm_momentum) {
            return Err(TrainError::Config("norm_momentum must lie in [0, 1]".into()));
        }
        self.policy.validate().map_err(TrainError::Config)
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            lanes: self.lanes,
            lambda_intra: self.lambda_intra,
            closed: self.closed,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

/// ChaCha stream `index` of a generator keyed by `seed` and `purpose`.
pub fn derived_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.rotate_left(32));
    rng.set_stream(index);
    rng
}

/// Surrogate whose gradient is the policy-gradient estimate
/// `mean((L - b) * grad log p)`: the mean of `(L - b) * log p` with the
/// advantage held constant. Descending it lowers the expected cost.
/// Items are `(log_prob, cost, baseline)`.
pub fn reinforce_loss(tape: &mut Tape, items: &[(Var, f64, f64)]) -> Result<Var, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let k = items.len() as f64;
    let mut total: Option<Var> = None;
    for &(logp, cost, base) in items {
        let term = tape.scale(logp, (cost - base) / k);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty batch"))
}

/// Value network: the graph encoder, mean pooling, then two linear layers.
#[derive(Debug, Clone)]
pub struct Critic {
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl Critic {
    pub fn new(dim: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&mut store, "critic.encoder", dim, layers, &mut rng);
        let hidden_w = store.add("critic.hidden_w", init_uniform(&mut rng, dim, dim, dim), true);
        let hidden_b = store.add("critic.hidden_b", init_uniform(&mut rng, 1, dim, dim), true);
        let out_w = store.add("critic.out_w", init_uniform(&mut rng, 1, dim, dim), true);
        let out_b = store.add("critic.out_b", init_uniform(&mut rng, 1, 1, dim), true);
        Self {
            store,
            encoder,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        }
    }

    /// `1 x 1` value estimate. Norms always use the graph's own statistics.
    pub fn value(&self, tape: &mut Tape, map: &AreaMap) -> Result<Var, TapeError> {
        let emb = encode(tape, &self.store, &self.encoder, map, NormUse::Batch)?;
        let pooled = tape.mean(emb.nodes, 0)?;
        let [hw, hb, ow, ob] = [self.hidden_w, self.hidden_b, self.out_w, self.out_b].map(|id| tape.param(&self.store, id));
        let hidden = tape.linear(hw, pooled, Some(hb))?;
        let hidden = tape.relu(hidden);
        tape.linear(ow, hidden, Some(ob))
    }

    pub fn predict(&self, map: &AreaMap) -> Result<f64, TapeError> {
        let mut tape = Tape::new();
        let v = self.value(&mut tape, map)?;
        Ok(tape.value(v).item())
    }

    /// Value and gradient of `(v - target)^2` for one map.
    pub fn squared_error_grads(&self, map: &AreaMap, target: f64) -> Result<(f64, f64, Grads), TapeError> {
        let mut tape = Tape::new();
        let v = self.value(&mut tape, map)?;
        let t = tape.constant(Tensor::scalar(-target));
        let diff = tape.add(v, t)?;
        let sq = tape.hadamard(diff, diff)?;
        tape.backward(sq)?;
        let value = tape.value(v).item();
        Ok((value, tape.value(sq).item(), tape.param_grads(&self.store)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: u64,
    pub mean_cost: f64,
    pub mean_advantage: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "step,epoch,mean_cost,mean_advantage,grad_norm,wall_ms";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.epoch, self.mean_cost, self.mean_advantage, self.grad_norm, self.wall_ms
        )
    }
}

/// Parses a metrics log written by [`train`].
pub fn read_metrics(text: &str) -> Result<Vec<MetricsRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err("missing metrics header".into());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("line {}: expected 6 fields", i + 2));
            }
            let bad = |e: &dyn std::fmt::Display| format!("line {}: {e}", i + 2);
            Ok(MetricsRow {
                step: f[0].parse().map_err(|e| bad(&e))?,
                epoch: f[1].parse().map_err(|e| bad(&e))?,
                mean_cost: f[2].parse().map_err(|e| bad(&e))?,
                mean_advantage: f[3].parse().map_err(|e| bad(&e))?,
                grad_norm: f[4].parse().map_err(|e| bad(&e))?,
                wall_ms: f[5].parse().map_err(|e| bad(&e))?,
            })
        })
        .collect()
}

enum Baseline {
    Rollout(Box<Policy>),
    Critic { critic: Box<Critic>, adam: AdamState },
}

struct Sampled {
    cost: f64,
    baseline: f64,
    grads: Grads,
    stats: Vec<NormStats>,
    critic_grads: Option<Grads>,
}

/// Where training batches come from.
#[derive(Debug, Clone)]
pub enum MapSource {
    /// Fresh maps from seeds derived from the config seed.
    Generated,
    /// Cycle through a fixed dataset.
    Dataset(Vec<AreaMap>),
}

pub struct Trainer {
    pub config: TrainConfig,
    pub policy: Policy,
    adam: AdamState,
    baseline: Baseline,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let policy = Policy::new(config.policy, config.seed);
        let adam = AdamState::new(&policy.store, adam_config(&config));
        let baseline = match config.baseline {
            BaselineKind::Rollout => Baseline::Rollout(Box::new(policy.clone())),
            BaselineKind::Critic => {
                let critic = Critic::new(config.policy.d1, config.policy.layers, config.seed.wrapping_add(1));
                let adam = AdamState::new(&critic.store, adam_config(&config));
                Baseline::Critic {
                    critic: Box::new(critic),
                    adam,
                }
            }
        };
        Ok(Self {
            config,
            policy,
            adam,
            baseline,
            step: 0,
        })
    }

    /// Maps for global step `step` from `source`.
    pub fn batch(&self, source: &MapSource, step: u64) -> Result<Vec<AreaMap>, TrainError> {
        let b = self.config.batch_size as u64;
        match source {
            MapSource::Generated => (0..b)
                .map(|i| {
                    let mut rng = derived_rng(self.config.seed, MAP_STREAM, step * b + i);
                    Ok(generate_map(self.config.n_areas, self.config.radius, &mut rng)?.with_id(step * b + i))
                })
                .collect(),
            MapSource::Dataset(maps) if maps.is_empty() => Err(TrainError::EmptyBatch),
            MapSource::Dataset(maps) => Ok((0..b)
                .map(|i| maps[((step * b + i) % maps.len() as u64) as usize].clone())
                .collect()),
        }
    }

    fn sample_one(&self, map: &AreaMap, index: u64) -> Result<Sampled, TrainError> {
        let cm = self.config.cost_model();
        let mut rng = derived_rng(self.config.seed, SAMPLE_STREAM, index);
        let mut tape = Tape::new();
        let (rollout, emb) = self
            .policy
            .rollout(&mut tape, map, &cm, Chooser::Sample(&mut rng), NormUse::Batch)?;
        let cost = schedule_cost(map, &rollout.decisions, &cm)?;
        let (baseline, critic_grads) = match &self.baseline {
            Baseline::Rollout(frozen) => {
                let (d, _) = frozen.greedy(map, &cm)?;
                (schedule_cost(map, &d, &cm)?, None)
            }
            Baseline::Critic { critic, .. } => {
                let (v, _, g) = critic.squared_error_grads(map, cost)?;
                (v, Some(g))
            }
        };
        let loss = reinforce_loss(&mut tape, &[(rollout.log_prob, cost, baseline)])?;
        tape.backward(loss)?;
        Ok(Sampled {
            cost,
            baseline,
            grads: tape.param_grads(&self.policy.store),
            stats: emb.stats,
            critic_grads,
        })
    }

    /// One optimizer step on `maps`.
    pub fn train_step(&mut self, maps: &[AreaMap]) -> Result<MetricsRow, TrainError> {
        if maps.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let start = Instant::now();
        let base = self.step * maps.len() as u64;
        let work = |(i, m): (usize, &AreaMap)| self.sample_one(m, base + i as u64);
        let results: Vec<Sampled> = if self.config.strict {
            maps.iter().enumerate().map(work).collect::<Result<_, _>>()?
        } else {
            maps.par_iter().enumerate().map(work).collect::<Result<_, _>>()?
        };

        let k = results.len() as f64;
        let mut grads = Grads::zeros_like(&self.policy.store);
        for r in &results {
            grads.add_assign(&r.grads)?;
        }
        grads.scale(1.0 / k);
        let grad_norm = if self.config.grad_clip > 0.0 {
            grads.clip_global_norm(self.config.grad_clip)
        } else {
            grads.global_norm()
        };
        self.adam.step(&mut self.policy.store, &grads)?;
        let stats: Vec<Vec<NormStats>> = results.iter().map(|r| r.stats.clone()).collect();
        update_running_stats(&mut self.policy.store, &self.policy.encoder, &stats, self.config.norm_momentum);

        if let Baseline::Critic { critic, adam } = &mut self.baseline {
            let mut cg = Grads::zeros_like(&critic.store);
            for r in &results {
                cg.add_assign(r.critic_grads.as_ref().expect("critic grads present"))?;
            }
            cg.scale(1.0 / k);
            if self.config.grad_clip > 0.0 {
                cg.clip_global_norm(self.config.grad_clip);
            }
            adam.step(&mut critic.store, &cg)?;
        }

        let step = self.step;
        self.step += 1;
        if let Baseline::Rollout(frozen) = &mut self.baseline {
            if self.step % self.config.baseline_interval as u64 == 0 {
                **frozen = self.policy.clone();
            }
        }
        Ok(MetricsRow {
            step,
            epoch: step / self.config.steps_per_epoch as u64,
            mean_cost: results.iter().map(|r| r.cost).sum::<f64>() / k,
            mean_advantage: results.iter().map(|r| r.cost - r.baseline).sum::<f64>() / k,
            grad_norm,
            wall_ms: if self.config.strict {
                0
            } else {
                start.elapsed().as_millis() as u64
            },
        })
    }

    fn checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let tmp = path.with_extension("tmp");
        self.policy.save_file(
            &tmp,
            self.config.seed,
            self.step,
            json!({ "train": self.config }),
        )?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

fn adam_config(c: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: c.lr,
        ..AdamConfig::default()
    }
}

pub struct TrainOutcome {
    /// Final weights, rounded to the checkpoint's `f32` precision.
    pub policy: Policy,
    pub metrics: Vec<MetricsRow>,
    pub final_checkpoint: Option<PathBuf>,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Runs `epochs * steps_per_epoch` steps. With `out_dir`, writes
/// `metrics.csv` (flushed every step), periodic `step-NNNNNN.ckpt` files and
/// `final.ckpt`; checkpoints are written via rename so an aborted run leaves
/// the previous one intact.
pub fn train(config: TrainConfig, source: &MapSource, out_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config)?;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
            writeln!(w, "{METRICS_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut metrics = Vec::with_capacity(trainer.config.total_steps());
    for _ in 0..trainer.config.total_steps() {
        let maps = trainer.batch(source, trainer.step)?;
        let row = trainer.train_step(&maps)?;
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", row.csv_line())?;
            w.flush()?;
        }
        metrics.push(row);
        let every = trainer.config.checkpoint_every as u64;
        if let (Some(dir), true) = (out_dir, every > 0 && trainer.step % every == 0) {
            trainer.checkpoint(&dir.join(format!("step-{:06}.ckpt", trainer.step)))?;
        }
    }
    trainer.policy.store.round_to_f32();
    let final_checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            trainer.checkpoint(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        policy: trainer.policy,
        metrics,
        final_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_batch_is_rejected() {
        let mut tape = Tape::new();
        assert!(matches!(reinforce_loss(&mut tape, &[]), Err(TrainError::EmptyBatch)));
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"n_areas": 5, "baseline": "critic"}"#).unwrap();
        assert_eq!(c.n_areas, 5);
        assert_eq!(c.baseline, BaselineKind::Critic);
        assert_eq!(c.batch_size, 128);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let row = MetricsRow {
            step: 3,
            epoch: 0,
            mean_cost: 1.25,
            mean_advantage: -0.1,
            grad_norm: 0.5,
            wall_ms: 7,
        };
        let text = format!("{METRICS_HEADER}\n{}\n", row.csv_line());
        assert_eq!(read_metrics(&text).unwrap(), vec![row]);
    }
}
