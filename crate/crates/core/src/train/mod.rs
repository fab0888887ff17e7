//! Entropy-regularized REINFORCE with a greedy rollout baseline.
//!
//! Each iteration samples one collective per fresh random instance, compares
//! its value with a greedy rollout of the baseline policy on the same
//! instance, and ascends `advantage * log p + tau * entropy`. At the end of
//! every epoch the current policy replaces the baseline if a one-sided
//! paired t-test on a fixed evaluation set says it is better.

mod adam;
mod stats;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{generate_instance, Domain, DomainRules, Instance};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{accumulate, l2_norm, scale, zero_like, AttentionConfig, Matrix};
use crate::policy::{greedy_packing_value, rollout, sample_traced, ModelConfig, PolicyParams, Selection, State};
use crate::rng;

pub use adam::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use stats::{paired_ttest_improves, paired_ttest_pvalue, regularized_incomplete_beta, student_t_upper_tail};

const MODEL_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub domain: Domain,
    /// Agents per training instance.
    pub agents: usize,
    /// Overrides the domain's cardinality cap.
    pub max_cardinality: Option<usize>,
    pub attention: AttentionConfig,
    pub gamma: f64,
    pub epochs: usize,
    pub iterations: usize,
    pub batch_size: usize,
    /// Significance level of the baseline replacement test.
    pub alpha: f64,
    /// Entropy temperature.
    pub tau: f64,
    pub learning_rate: f64,
    /// Gradients with a larger global norm are rescaled to this norm.
    pub max_grad_norm: Option<f64>,
    pub eval_size: usize,
    pub seed: u64,
    pub threads: usize,
    /// When false, logged wall times are zero so logs are reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            domain: Domain::Ridesharing,
            agents: 10,
            max_cardinality: None,
            attention: AttentionConfig::paper(),
            gamma: crate::policy::DEFAULT_GAMMA,
            epochs: 100,
            iterations: 400,
            batch_size: 256,
            alpha: 0.05,
            tau: 0.05,
            learning_rate: 1e-4,
            max_grad_norm: None,
            eval_size: 100,
            seed: 0,
            threads: 1,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    /// A configuration that trains in minutes on one core.
    pub fn desk(domain: Domain, agents: usize) -> TrainConfig {
        TrainConfig {
            domain,
            agents,
            attention: AttentionConfig::desk(),
            epochs: 20,
            iterations: 50,
            batch_size: 64,
            learning_rate: 3e-4,
            max_grad_norm: Some(5.0),
            eval_size: 100,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be nonnegative, got {}", self.tau));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.agents == 0 || self.batch_size == 0 || self.iterations == 0 || self.eval_size < 2 {
            return bad("agents, batch size and iterations must be positive and the eval set needs 2 instances".into());
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0 && g.is_finite())) {
            return bad("max_grad_norm must be positive".into());
        }
        if self.max_cardinality == Some(0) {
            return bad("max_cardinality must be positive".into());
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig { domain: self.domain, attention: self.attention, gamma: self.gamma }
    }

    pub fn rules(&self) -> DomainRules {
        let mut rules = self.domain.default_rules();
        if let Some(cap) = self.max_cardinality {
            rules.max_cardinality = cap;
        }
        rules
    }

    fn instance(&self, path: &[u64]) -> Result<Instance> {
        generate_instance(self.domain, self.agents, rng::derive_seed(self.seed, path))?.with_rules(self.rules())
    }

    /// The fixed evaluation instances.
    pub fn eval_set(&self) -> Result<Vec<Instance>> {
        (0..self.eval_size as u64).map(|k| self.instance(&[EVAL_STREAM, k])).collect()
    }

    /// The untrained model this configuration starts from.
    pub fn initial_params(&self) -> Result<PolicyParams> {
        PolicyParams::init(self.model(), &mut rng::stream(self.seed, &[MODEL_STREAM]))
    }
}

/// Batch diagnostics of [`loss_gradient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub mean_value: f64,
    pub mean_advantage: f64,
    pub mean_entropy: f64,
}

/// Gradient of the batch loss `-(1/B) sum_i [adv_i * log p(S_i) + tau * H_i]`.
///
/// `seeds[i]` keys the sampling stream of item `i`. Items are processed in
/// fixed-size chunks and the chunk gradients summed in order, so the result
/// does not depend on the number of threads used.
pub fn loss_gradient(
    params: &PolicyParams,
    baseline: &PolicyParams,
    instances: &[Instance],
    seeds: &[u64],
    tau: f64,
) -> Result<(PolicyParams, BatchStats)> {
    if instances.is_empty() || instances.len() != seeds.len() {
        return Err(Error::InvalidArgument("batch must be nonempty with one seed per instance".into()));
    }
    const CHUNK: usize = 8;
    let b = instances.len() as f64;
    let items: Vec<(&Instance, u64)> = instances.iter().zip(seeds.iter().copied()).collect();
    let parts = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = zero_like(params);
            let mut sums = [0.0; 3];
            for &(inst, seed) in chunk {
                let start = State::empty(inst.len());
                let mut r = rng::stream(seed, &[]);
                let trace = sample_traced(params, inst, &start, &mut r)?;
                let value = trace.rollout().collective.value();
                let reference = rollout(baseline, inst, &start, Selection::Greedy)?.collective.value();
                let advantage = value - reference;
                trace.backward(params, -advantage / b, -tau / b, &mut grads)?;
                sums[0] += value;
                sums[1] += advantage;
                sums[2] += trace.rollout().entropy();
            }
            Ok((grads, sums))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = zero_like(params);
    let mut sums = [0.0; 3];
    for (g, s) in parts {
        accumulate(&mut grads, &g)?;
        sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    let stats = BatchStats { mean_value: sums[0] / b, mean_advantage: sums[1] / b, mean_entropy: sums[2] / b };
    Ok((grads, stats))
}

/// Greedy sequential packing value of every instance.
pub fn evaluate(params: &PolicyParams, instances: &[Instance]) -> Result<Vec<f64>> {
    instances.par_iter().map(|inst| greedy_packing_value(params, inst)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// The rollout baseline: best policy so far and its evaluation values.
#[derive(Clone, Debug)]
pub struct BaselineState {
    pub params: PolicyParams,
    pub eval_set: Vec<Instance>,
    pub eval_values: Vec<f64>,
}

impl BaselineState {
    pub fn new(params: PolicyParams, eval_set: Vec<Instance>) -> Result<BaselineState> {
        let eval_values = evaluate(&params, &eval_set)?;
        Ok(BaselineState { params, eval_set, eval_values })
    }

    /// Replaces the baseline with `candidate` if the t-test passes.
    pub fn challenge(&mut self, candidate: &PolicyParams, alpha: f64) -> Result<(bool, Vec<f64>)> {
        let values = evaluate(candidate, &self.eval_set)?;
        let swap = paired_ttest_improves(&values, &self.eval_values, alpha)?;
        if swap {
            self.params = candidate.clone();
            self.eval_values = values.clone();
        }
        Ok((swap, values))
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_value: f64,
    pub mean_advantage: f64,
    pub mean_entropy: f64,
    /// Eval-set mean packing value of the current policy.
    pub eval_model_value: f64,
    /// Eval-set mean packing value of the baseline after this epoch's test.
    pub eval_baseline_value: f64,
    pub baseline_swapped: bool,
    pub wall_ms: u64,
}

/// Training state that can be checkpointed and resumed.
pub struct Trainer {
    config: TrainConfig,
    params: PolicyParams,
    optimizer: OptimizerState<PolicyParams>,
    baseline: BaselineState,
    epochs_done: usize,
    pool: rayon::ThreadPool,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let pool = thread_pool(config.threads)?;
        let params = config.initial_params()?;
        let eval_set = config.eval_set()?;
        let baseline = pool.install(|| BaselineState::new(params.clone(), eval_set))?;
        let optimizer = OptimizerState::new(&params);
        Ok(Trainer { config, params, optimizer, baseline, epochs_done: 0, pool })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn baseline(&self) -> &BaselineState {
        &self.baseline
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epochs_done as u64;
        let b = self.config.batch_size;
        let mut sums = [0.0; 3];
        for it in 0..self.config.iterations as u64 {
            let instances = (0..b as u64)
                .map(|k| self.config.instance(&[TRAIN_STREAM, epoch, it, k]))
                .collect::<Result<Vec<_>>>()?;
            let seeds: Vec<u64> =
                (0..b as u64).map(|k| rng::derive_seed(self.config.seed, &[SAMPLE_STREAM, epoch, it, k])).collect();
            let (mut grads, stats) = self.pool.install(|| {
                loss_gradient(&self.params, &self.baseline.params, &instances, &seeds, self.config.tau)
            })?;
            if let Some(limit) = self.config.max_grad_norm {
                let norm = l2_norm(&grads);
                if norm > limit {
                    scale(&mut grads, limit / norm);
                }
            }
            adam_step(&mut self.params, &grads, &mut self.optimizer, self.config.learning_rate)?;
            sums[0] += stats.mean_value;
            sums[1] += stats.mean_advantage;
            sums[2] += stats.mean_entropy;
        }
        let (swapped, values) = self.pool.install(|| self.baseline.challenge(&self.params, self.config.alpha))?;
        self.epochs_done += 1;
        let iters = self.config.iterations as f64;
        Ok(EpochLog {
            epoch: self.epochs_done,
            mean_value: sums[0] / iters,
            mean_advantage: sums[1] / iters,
            mean_entropy: sums[2] / iters,
            eval_model_value: mean(&values),
            eval_baseline_value: mean(&self.baseline.eval_values),
            baseline_swapped: swapped,
            wall_ms: if self.config.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 },
        })
    }

    /// Model, baseline and optimizer state in one file.
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let mut c = self.params.to_checkpoint();
        c.tensors.clear();
        c.push_all("model.", &self.params);
        c.push_all("baseline.", &self.baseline.params);
        c.push_all("adam.first.", &self.optimizer.first);
        c.push_all("adam.second.", &self.optimizer.second);
        let meta = vec![self.epochs_done as f64, self.optimizer.step as f64];
        c.push("meta", Matrix::row_vector(meta));
        c.save(path)
    }

    /// Continues a run saved with [`Trainer::save_state`]. Parameters come
    /// back rounded to f32, as stored.
    pub fn resume(config: TrainConfig, path: &Path) -> Result<Trainer> {
        config.validate()?;
        let mut c = Checkpoint::load(path)?;
        let params = PolicyParams::from_checkpoint(&mut c, "model.")?;
        let expected = config.model();
        if params.config.domain != expected.domain
            || params.config.attention != expected.attention
            || params.config.gamma as f32 != expected.gamma as f32
        {
            return Err(Error::Config("checkpoint was written for a different model".into()));
        }
        let baseline_params = PolicyParams::from_checkpoint(&mut c, "baseline.")?;
        let mut optimizer = OptimizerState::new(&params);
        c.take_all("adam.first.", &mut optimizer.first)?;
        c.take_all("adam.second.", &mut optimizer.second)?;
        let meta = c.take("meta", (1, 2))?;
        let epochs_done = meta.data()[0] as usize;
        optimizer.step = meta.data()[1] as u64;
        let pool = thread_pool(config.threads)?;
        let eval_set = config.eval_set()?;
        let baseline = pool.install(|| BaselineState::new(baseline_params, eval_set))?;
        Ok(Trainer { config, params, optimizer, baseline, epochs_done, pool })
    }
}

pub const STATE_FILE: &str = "train_state.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// Final parameters and the log of every epoch run in this call.
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub logs: Vec<EpochLog>,
}

/// Runs (or resumes) training to `config.epochs` epochs.
///
/// With a checkpoint directory, each epoch writes `epoch_NNN.ckpt`, the
/// resumable `train_state.ckpt` and appends a line to `train_log.jsonl`; an
/// existing state file there is resumed.
pub fn train(
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let state_path: Option<PathBuf> = checkpoint_dir.map(|d| d.join(STATE_FILE));
    let mut trainer = match &state_path {
        Some(p) if p.exists() => Trainer::resume(config.clone(), p)?,
        _ => Trainer::new(config.clone())?,
    };
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut logs = Vec::new();
    while !trainer.is_finished() {
        let log = trainer.run_epoch()?;
        if let Some(dir) = checkpoint_dir {
            trainer.params.save(&dir.join(epoch_checkpoint_name(log.epoch)))?;
            trainer.save_state(&dir.join(STATE_FILE))?;
            let mut line = serde_json::to_string(&log)?;
            line.push('\n');
            use std::io::Write;
            fs::OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?.write_all(line.as_bytes())?;
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome { params: trainer.params, logs })
}

#[cfg(test)]
mod tests;
