//! Encoder and decoder weights bundled into one scheduling policy, with
//! checkpoint I/O.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use gradtape::{read_checkpoint, write_checkpoint, CheckpointError, CheckpointHeader, Dtype, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::decoder::{decode, Chooser, DecodeError, DecoderParams, Rollout};
use crate::encoder::{encode, Embeddings, EncoderParams, NormUse};
use crate::geometry::{CostModel, Decision};
use crate::mapgen::AreaMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub layers: usize,
    pub heads: usize,
    /// Logit clipping constant M.
    pub clip: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::full_size()
    }
}

impl PolicyConfig {
    /// Full-size network: width 128, three encoder layers, eight heads.
    pub const fn full_size() -> Self {
        Self {
            d1: 128,
            d2: 128,
            d3: 128,
            layers: 3,
            heads: 8,
            clip: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d1 == 0 || self.d2 == 0 || self.d3 == 0 || self.heads == 0 {
            return Err("widths and head count must be positive".into());
        }
        if self.d1 % self.heads != 0 {
            return Err(format!("heads ({}) must divide d1 ({})", self.heads, self.d1));
        }
        if !(self.clip > 0.0) {
            return Err("clip must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub config: PolicyConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&mut store, "encoder", config.d1, config.layers, &mut rng);
        let decoder = DecoderParams::register(
            &mut store,
            "decoder",
            (config.d1, config.d2, config.d3),
            config.heads,
            config.clip,
            &mut rng,
        );
        Self {
            config,
            store,
            encoder,
            decoder,
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn encode(&self, tape: &mut Tape, map: &AreaMap, norm: NormUse) -> Result<Embeddings, DecodeError> {
        Ok(encode(tape, &self.store, &self.encoder, map, norm)?)
    }

    /// Encodes `map` and decodes one schedule on `tape`.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        map: &AreaMap,
        cost: &CostModel,
        chooser: Chooser<'_, R>,
        norm: NormUse,
    ) -> Result<(Rollout, Embeddings), DecodeError> {
        let emb = self.encode(tape, map, norm)?;
        let r = decode(tape, &self.store, &self.decoder, &emb, map.areas(), cost, chooser)?;
        Ok((r, emb))
    }

    /// Greedy schedule with its log-probability. Norms use the map's own
    /// statistics, exactly as during training.
    pub fn greedy(&self, map: &AreaMap, cost: &CostModel) -> Result<(Vec<Decision>, f64), DecodeError> {
        self.greedy_with(map, cost, NormUse::Batch)
    }

    pub fn greedy_with(
        &self,
        map: &AreaMap,
        cost: &CostModel,
        norm: NormUse,
    ) -> Result<(Vec<Decision>, f64), DecodeError> {
        let mut tape = Tape::new();
        let (r, _) = self.rollout::<ChaCha8Rng>(&mut tape, map, cost, Chooser::Greedy, norm)?;
        Ok((r.decisions, r.log_prob_value))
    }

    /// Writes an `f32` checkpoint whose header carries the policy config
    /// under `"policy"` plus any `extra` hyperparameters.
    pub fn save<W: Write>(
        &self,
        out: W,
        seed: u64,
        step: u64,
        extra: serde_json::Value,
    ) -> Result<(), CheckpointError> {
        let mut hyper = json!({ "policy": self.config });
        if let (Some(h), serde_json::Value::Object(more)) = (hyper.as_object_mut(), extra) {
            h.extend(more);
        }
        let header = CheckpointHeader::new(&self.store, Dtype::F32, seed, step, hyper);
        let mut out = BufWriter::new(out);
        write_checkpoint(&mut out, &header, &self.store)?;
        out.flush()?;
        Ok(())
    }

    pub fn save_file(&self, path: &Path, seed: u64, step: u64, extra: serde_json::Value) -> Result<(), CheckpointError> {
        self.save(File::create(path)?, seed, step, extra)
    }

    pub fn load<R: io::BufRead>(input: R) -> Result<(Self, CheckpointHeader), CheckpointError> {
        let (header, loaded) = read_checkpoint(input)?;
        let config: PolicyConfig = header
            .hyperparameters
            .get("policy")
            .cloned()
            .ok_or_else(|| CheckpointError::Mismatch("header has no policy config".into()))
            .and_then(|v| serde_json::from_value(v).map_err(CheckpointError::Header))?;
        config.validate().map_err(CheckpointError::Mismatch)?;
        let mut policy = Self::new(config, 0);
        policy
            .store
            .copy_from(&loaded)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        Ok((policy, header))
    }

    pub fn load_file(path: &Path) -> Result<(Self, CheckpointHeader), CheckpointError> {
        Self::load(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::validate_schedule;
    use crate::mapgen::{generate_map_seeded, RadiusRange};

    fn tiny() -> PolicyConfig {
        PolicyConfig {
            d1: 8,
            d2: 8,
            d3: 8,
            layers: 1,
            heads: 2,
            clip: 10.0,
        }
    }

    #[test]
    fn greedy_is_valid_and_repeatable() {
        let policy = Policy::new(tiny(), 1);
        let map = generate_map_seeded(6, RadiusRange::default(), 2).unwrap();
        let cm = CostModel::default();
        let a = policy.greedy(&map, &cm).unwrap();
        let b = policy.greedy(&map, &cm).unwrap();
        assert_eq!(a, b);
        assert!(validate_schedule(&map, &a.0).is_empty());
        assert!(a.1 <= 0.0);
    }

    #[test]
    fn load_rejects_config_mismatch() {
        let policy = Policy::new(tiny(), 1);
        let mut buf = Vec::new();
        policy.save(&mut buf, 1, 0, json!({})).unwrap();
        let (back, header) = Policy::load(&buf[..]).unwrap();
        assert_eq!(back.config, tiny());
        assert_eq!(header.seed, 1);
        let split = buf.iter().position(|&b| b == b'\n').unwrap();
        let header = String::from_utf8(buf[..split].to_vec()).unwrap().replacen("\"d1\":8", "\"d1\":4", 1);
        let mut edited = header.into_bytes();
        edited.extend_from_slice(&buf[split..]);
        assert!(Policy::load(&edited[..]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::full_size().validate().is_ok());
        let bad = PolicyConfig { heads: 3, ..tiny() };
        assert!(bad.validate().is_err());
    }
}
