use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, CheckpointHeader};
use crate::nn::{uniform_init, AttentionConfig, EncoderBlock, Linear, Matrix, MultiHeadAttention, NamedTensor, Parameters};
use crate::rng;

pub const DEFAULT_GAMMA: f64 = 10.0;

/// Everything needed to rebuild the shapes of a [`PolicyParams`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub domain: Domain,
    pub attention: AttentionConfig,
    /// Logit clipping scale: logits are `gamma * tanh(u)`.
    pub gamma: f64,
}

impl ModelConfig {
    pub fn new(domain: Domain, attention: AttentionConfig) -> ModelConfig {
        ModelConfig { domain, attention, gamma: DEFAULT_GAMMA }
    }

    pub fn input_dim(&self) -> usize {
        self.domain.feature_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            input_dim: self.input_dim(),
            attention: self.attention,
            gamma: self.gamma,
            domain_tag: self.domain.tag(),
        }
    }

    fn from_header(h: &CheckpointHeader) -> Result<ModelConfig> {
        let domain = Domain::from_tag(h.domain_tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown domain tag {}", h.domain_tag)))?;
        if domain.feature_dim() != h.input_dim {
            return Err(Error::Checkpoint(format!("input width {} does not match domain {domain}", h.input_dim)));
        }
        let config = ModelConfig { domain, attention: h.attention, gamma: h.gamma };
        config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(config)
    }
}

/// All learnable tensors of the encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub config: ModelConfig,
    pub embed: Linear,
    pub encoder: Vec<EncoderBlock>,
    /// Cross-attention from the collective summary onto the pool.
    pub glimpse: MultiHeadAttention,
    pub query_proj: Matrix,
    pub key_proj: Matrix,
    /// Stands in for the collective summary while the collective is empty.
    pub placeholder: Matrix,
    /// Embedding of the STOP action, appended to the encoded pool.
    pub stop: Matrix,
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<PolicyParams> {
        config.validate()?;
        let d = config.attention.d_h;
        let embed = Linear::init(config.input_dim(), d, rng);
        let encoder =
            (0..config.attention.blocks).map(|_| EncoderBlock::init(&config.attention, rng)).collect::<Result<_>>()?;
        let glimpse = MultiHeadAttention::init(d, config.attention.heads, rng)?;
        Ok(PolicyParams {
            config,
            embed,
            encoder,
            glimpse,
            query_proj: uniform_init(d, d, d, rng),
            key_proj: uniform_init(d, d, d, rng),
            placeholder: uniform_init(1, d, d, rng),
            stop: uniform_init(1, d, d, rng),
        })
    }

    pub fn seeded(config: ModelConfig, seed: u64) -> Result<PolicyParams> {
        PolicyParams::init(config, &mut rng::stream(seed, &[]))
    }

    pub fn d_h(&self) -> usize {
        self.config.attention.d_h
    }

    /// A checkpoint holding only these parameters.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.config.header());
        c.push_all("", self);
        c
    }

    pub fn from_checkpoint(checkpoint: &mut Checkpoint, prefix: &str) -> Result<PolicyParams> {
        let config = ModelConfig::from_header(&checkpoint.header)?;
        let mut params = PolicyParams::seeded(config, 0)?;
        checkpoint.take_all(prefix, &mut params)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<PolicyParams> {
        let mut c = Checkpoint::load(path)?;
        PolicyParams::from_checkpoint(&mut c, "")
    }
}

impl Parameters for PolicyParams {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out: Vec<NamedTensor<'_>> =
            self.embed.tensors().into_iter().map(|(n, t)| (format!("embed.{n}"), t)).collect();
        for (i, block) in self.encoder.iter().enumerate() {
            out.extend(block.tensors().into_iter().map(|(n, t)| (format!("encoder.{i}.{n}"), t)));
        }
        out.extend(self.glimpse.tensors().into_iter().map(|(n, t)| (format!("glimpse.{n}"), t)));
        out.push(("query_proj".into(), &self.query_proj));
        out.push(("key_proj".into(), &self.key_proj));
        out.push(("placeholder".into(), &self.placeholder));
        out.push(("stop".into(), &self.stop));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.embed.tensors_mut();
        for block in &mut self.encoder {
            out.extend(block.tensors_mut());
        }
        out.extend(self.glimpse.tensors_mut());
        out.push(&mut self.query_proj);
        out.push(&mut self.key_proj);
        out.push(&mut self.placeholder);
        out.push(&mut self.stop);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, parameter_count};

    fn tiny() -> ModelConfig {
        ModelConfig::new(Domain::Ridesharing, AttentionConfig { d_h: 8, heads: 2, d_ff: 16, blocks: 2 })
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(PolicyParams::seeded(tiny(), 3).unwrap(), PolicyParams::seeded(tiny(), 3).unwrap());
        assert_ne!(PolicyParams::seeded(tiny(), 3).unwrap(), PolicyParams::seeded(tiny(), 4).unwrap());
    }

    #[test]
    fn names_and_mut_views_line_up() {
        let mut p = PolicyParams::seeded(tiny(), 1).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), p.tensors_mut().len());
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.contains(&"encoder.1.attention.query.weight".to_string()));
        assert!(parameter_count(&p) > 0);
    }

    #[test]
    fn initial_values_respect_fan_in_bounds() {
        let p = PolicyParams::seeded(tiny(), 2).unwrap();
        let bound = 1.0 / (4f64).sqrt();
        assert!(p.embed.weight.data().iter().all(|x| x.abs() < bound));
        let bound = 1.0 / (8f64).sqrt();
        assert!(p.query_proj.data().iter().all(|x| x.abs() < bound));
        assert!(p.encoder[0].norm1.gain.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn checkpoint_round_trip_rounds_to_f32() {
        let p = PolicyParams::seeded(tiny(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        p.save(&path).unwrap();
        let q = PolicyParams::load(&path).unwrap();
        assert_eq!(q.config, p.config);
        for (a, b) in flatten(&p).iter().zip(flatten(&q)) {
            assert_eq!(*a as f32 as f64, b);
        }
        // second round trip is lossless
        q.save(&path).unwrap();
        assert_eq!(PolicyParams::load(&path).unwrap(), q);
    }

    #[test]
    fn mismatched_checkpoint_is_rejected() {
        let p = PolicyParams::seeded(tiny(), 5).unwrap();
        let mut c = p.to_checkpoint();
        c.tensors.pop();
        assert!(PolicyParams::from_checkpoint(&mut c, "").is_err());
        let mut c = p.to_checkpoint();
        c.header.domain_tag = 9;
        assert!(PolicyParams::from_checkpoint(&mut c, "").is_err());
    }
}
