use rand::RngCore;

use super::{decode, encode_traced, Chooser, Decoded, EncoderTrace, PolicyParams, PoolEncoding, Rollout, State};
use crate::domain::Instance;
use crate::error::Result;
use crate::nn::Matrix;

/// A rollout together with every intermediate needed to differentiate its
/// log-probability and entropy.
pub struct Trace {
    encoder: EncoderTrace,
    encoding: PoolEncoding,
    decoded: Decoded,
}

/// Samples a rollout from `start` and keeps its trace.
pub fn sample_traced(params: &PolicyParams, instance: &Instance, start: &State, rng: &mut dyn RngCore) -> Result<Trace> {
    traced(params, instance, start, Chooser::Sample(rng))
}

/// Re-runs a given action sequence and keeps its trace.
pub fn replay(params: &PolicyParams, instance: &Instance, start: &State, actions: &[usize]) -> Result<Trace> {
    traced(params, instance, start, Chooser::Forced(actions))
}

fn traced(params: &PolicyParams, instance: &Instance, start: &State, chooser: Chooser<'_, '_>) -> Result<Trace> {
    let (encoding, encoder) = encode_traced(params, instance)?;
    let decoded = decode(params, instance, &encoding, start, chooser, true)?;
    Ok(Trace { encoder, encoding, decoded })
}

impl Trace {
    pub fn rollout(&self) -> &Rollout {
        &self.decoded.rollout
    }

    /// Adds to `grads` the gradient of
    /// `log_prob_weight * sum_t log p(a_t) + entropy_weight * sum_t H_t`.
    pub fn backward(
        &self,
        params: &PolicyParams,
        log_prob_weight: f64,
        entropy_weight: f64,
        grads: &mut PolicyParams,
    ) -> Result<()> {
        let enc = &self.encoding;
        let (n, d) = (enc.pool.rows(), params.d_h());
        let scale = 1.0 / (d as f64).sqrt();
        let gamma = params.config.gamma;
        let mut dkeys = Matrix::zeros(n + 1, d);
        let mut dkv_keys = Matrix::zeros(n + 1, d);
        let mut dkv_values = Matrix::zeros(n + 1, d);
        let mut dpool = Matrix::zeros(n, d);

        for ((members, step), &action) in self.decoded.steps.iter().zip(&self.decoded.rollout.actions) {
            let out = &step.output;
            let mut dq = vec![0.0; d];
            let q = step.query.data();
            for i in 0..=n {
                let p = out.probs[i];
                if out.log_probs[i] == f64::NEG_INFINITY {
                    continue;
                }
                let indicator = if i == action { 1.0 } else { 0.0 };
                let dz = log_prob_weight * (indicator - p) - entropy_weight * p * (out.log_probs[i] + out.entropy);
                let t = step.u[i].tanh();
                let du = dz * gamma * (1.0 - t * t) * scale;
                if du == 0.0 {
                    continue;
                }
                for ((g, k), (dk, qv)) in
                    dq.iter_mut().zip(enc.keys.row(i)).zip(dkeys.row_mut(i).iter_mut().zip(q))
                {
                    *g += du * k;
                    *dk += du * qv;
                }
            }
            let dq = Matrix::row_vector(dq);
            grads.query_proj.add_assign(&step.glimpse.t_matmul(&dq)?)?;
            let dglimpse = dq.matmul_t(&params.query_proj)?;
            let (dh_s, dk, dv) =
                params.glimpse.backward_attend(&step.glimpse_cache, &enc.kv, &dglimpse, &mut grads.glimpse)?;
            dkv_keys.add_assign(&dk)?;
            dkv_values.add_assign(&dv)?;
            if members.is_empty() {
                grads.placeholder.add_assign(&dh_s)?;
            } else {
                let share = 1.0 / members.len() as f64;
                for &m in members {
                    for (a, b) in dpool.row_mut(m).iter_mut().zip(dh_s.data()) {
                        *a += share * b;
                    }
                }
            }
        }

        grads.key_proj.add_assign(&enc.memory.t_matmul(&dkeys)?)?;
        let mut dmemory = dkeys.matmul_t(&params.key_proj)?;
        dmemory.add_assign(&params.glimpse.backward_project(&enc.memory, &dkv_keys, &dkv_values, &mut grads.glimpse)?)?;
        dpool.add_assign(&dmemory.slice_rows(0, n))?;
        grads.stop.add_assign(&dmemory.slice_rows(n, n + 1))?;

        let mut dh = dpool;
        for ((block, cache), g) in params.encoder.iter().zip(&self.encoder.blocks).zip(&mut grads.encoder).rev() {
            dh = block.backward(cache, &dh, g)?;
        }
        params.embed.backward(&self.encoder.input, &dh, &mut grads.embed)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate_instance, Domain, DomainRules};
    use crate::nn::gradcheck::{central_difference, relative_error};
    use crate::nn::{flatten, zero_like, AttentionConfig};
    use crate::policy::{ModelConfig, Selection};
    use crate::rng;

    fn model(domain: Domain, seed: u64) -> PolicyParams {
        let attention = AttentionConfig { d_h: 8, heads: 2, d_ff: 12, blocks: 2 };
        PolicyParams::seeded(ModelConfig::new(domain, attention), seed).unwrap()
    }

    fn objective(p: &PolicyParams, inst: &Instance, start: &State, actions: &[usize], a: f64, b: f64) -> f64 {
        let r = replay(p, inst, start, actions).unwrap();
        a * r.rollout().log_prob() + b * r.rollout().entropy()
    }

    fn check(domain: Domain, n: usize, seed: u64, a: f64, b: f64) {
        let inst = generate_instance(domain, n, seed).unwrap();
        // small gamma keeps tanh away from saturation so differences are well conditioned
        let mut p = model(domain, seed);
        p.config.gamma = 2.0;
        let start = State::empty(n);
        let mut r = rng::stream(seed, &[1]);
        let trace = sample_traced(&p, &inst, &start, &mut r).unwrap();
        let actions = trace.rollout().actions.clone();
        let mut grads = zero_like(&p);
        trace.backward(&p, a, b, &mut grads).unwrap();
        let fd = central_difference(&p, |q| objective(q, &inst, &start, &actions, a, b), 1e-5);
        let err = relative_error(&flatten(&grads), &fd);
        assert!(err < 1e-4, "relative error {err} for {actions:?}");
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        check(Domain::Ridesharing, 5, 11, 1.0, 0.0);
        check(Domain::TeamFormation, 4, 12, -0.7, 0.0);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        check(Domain::Ridesharing, 5, 13, 0.0, 1.0);
        check(Domain::TeamFormation, 6, 14, 0.3, -0.05);
    }

    #[test]
    fn replay_reproduces_the_sampled_rollout() {
        let inst = generate_instance(Domain::Ridesharing, 7, 3).unwrap();
        let p = model(Domain::Ridesharing, 3);
        let start = State::empty(7);
        let mut r = rng::stream(4, &[]);
        let t = sample_traced(&p, &inst, &start, &mut r).unwrap();
        let again = replay(&p, &inst, &start, &t.rollout().actions).unwrap();
        assert_eq!(again.rollout(), t.rollout());
        let mut r = rng::stream(4, &[]);
        let plain = crate::policy::rollout(&p, &inst, &start, Selection::Sample(&mut r)).unwrap();
        assert_eq!(&plain, t.rollout());
    }

    #[test]
    fn invalid_replays_are_rejected() {
        let inst = generate_instance(Domain::Ridesharing, 3, 3)
            .unwrap()
            .with_rules(DomainRules { max_cardinality: 2, partition_required: false })
            .unwrap();
        let p = model(Domain::Ridesharing, 3);
        let start = State::empty(3);
        // STOP while empty
        assert!(replay(&p, &inst, &start, &[3]).is_err());
        // same agent twice
        assert!(replay(&p, &inst, &start, &[0, 0]).is_err());
        // continues past the cap
        assert!(replay(&p, &inst, &start, &[0, 1, 3]).is_err());
        // stops too early
        assert!(replay(&p, &inst, &start, &[0]).is_err());
        assert!(replay(&p, &inst, &start, &[0, 3]).is_ok());
        assert!(replay(&p, &inst, &start, &[2, 0]).is_ok());
    }
}
