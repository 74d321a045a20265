//! Supervised cold start on plan-augmented oracle data.
//!
//! Dataset construction samples tasks across a difficulty mix and pairs each
//! question with the deterministic oracle's tagged response. Training
//! minimizes the negative log-likelihood of the tagged continuation given
//! the question prefix; the question tokens themselves are masked out of the
//! loss. Plain full-batch gradient descent with optional momentum — the
//! objective is convex in the logits, so small learning rates descend
//! monotonically.

use crate::error::{CoreError, Result};
use crate::policy::PolicyTable;
use crate::tagged::TaggedResponse;
use crate::task::{generate_task, oracle_plan_and_cot, DomainConfig, Task};
use crate::vocab::{TokenId, Vocab};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One supervised example: a question plus the oracle's tagged response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartRecord {
    pub question: Vec<TokenId>,
    pub plan: Vec<TokenId>,
    pub think: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    /// Full training sequence: question ++ tagged response tokens.
    pub serialized: Vec<TokenId>,
    /// Human-readable rendering for dataset inspection.
    pub text: String,
    pub truth: u64,
    pub difficulty: usize,
}

impl ColdStartRecord {
    pub fn new(task: &Task, response: &TaggedResponse, vocab: &Vocab) -> Self {
        let mut serialized = task.question.clone();
        serialized.extend_from_slice(&response.raw);
        Self {
            question: task.question.clone(),
            plan: response.plan.clone(),
            think: response.think.clone(),
            answer: response.answer.clone(),
            text: vocab.render(&serialized),
            serialized,
            truth: task.truth,
            difficulty: task.difficulty,
        }
    }

    /// The response portion of `serialized` (everything after the question).
    pub fn response_tokens(&self) -> &[TokenId] {
        &self.serialized[self.question.len()..]
    }
}

/// Relative weights per difficulty level, e.g. `{2: 0.5, 3: 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyMix(pub BTreeMap<usize, f64>);

impl Default for DifficultyMix {
    fn default() -> Self {
        Self(BTreeMap::from([(2, 0.5), (3, 0.5)]))
    }
}

impl DifficultyMix {
    pub fn single(difficulty: usize) -> Self {
        Self(BTreeMap::from([(difficulty, 1.0)]))
    }

    /// Draws a difficulty according to the weights.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let total: f64 = self.0.values().sum();
        let mut u = rng.random::<f64>() * total;
        for (&d, &w) in &self.0 {
            u -= w;
            if u < 0.0 {
                return d;
            }
        }
        *self.0.keys().next_back().expect("non-empty mix")
    }
}

/// Cold-start schedule. `batch_size: None` means full batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub momentum: f64,
    /// Dataset size n used by the pipeline when it builds the dataset.
    pub dataset_size: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 0.1,
            batch_size: None,
            momentum: 0.0,
            dataset_size: 500,
        }
    }
}

/// Builds n oracle-labelled records, deterministic in `seed`.
pub fn build_dataset(
    seed: u64,
    n: usize,
    mix: &DifficultyMix,
    domain: &DomainConfig,
    vocab: &Vocab,
) -> Result<Vec<ColdStartRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let difficulty = mix.sample(&mut rng);
        let task_seed = rng.next_u64();
        let task = generate_task(task_seed, difficulty, domain)?;
        let response = oracle_plan_and_cot(&task, domain, vocab);
        records.push(ColdStartRecord::new(&task, &response, vocab));
    }
    Ok(records)
}

/// Negative log-likelihood of the tagged continuation given the question:
/// `-sum_t log pi(token_t | prefix)`, question tokens masked out.
pub fn sft_loss(policy: &PolicyTable, record: &ColdStartRecord) -> Result<f64> {
    let mut state = policy.context_after(&record.question)?;
    let mut loss = 0.0;
    for &t in record.response_tokens() {
        let dist = policy.distribution_at(&state);
        loss -= dist.log_probs[t];
        state.push(t);
    }
    Ok(loss)
}

/// Accumulates the gradient of `sft_loss` for one record into a dense
/// buffer over the full logit table. Returns the record's loss.
pub fn accumulate_sft_grad(
    policy: &PolicyTable,
    record: &ColdStartRecord,
    grad: &mut [f64],
    scale: f64,
) -> Result<f64> {
    let v = policy.vocab_size();
    let inv_temp = 1.0 / policy.temperature();
    let mut state = policy.context_after(&record.question)?;
    let mut loss = 0.0;
    for &t in record.response_tokens() {
        let dist = policy.distribution_at(&state);
        loss -= dist.log_probs[t];
        // d(-log pi)/d logits = (softmax - onehot) / T on this context row.
        let row = &mut grad[state.id() * v..(state.id() + 1) * v];
        for (g, &p) in row.iter_mut().zip(&dist.probs) {
            *g += scale * p * inv_temp;
        }
        row[t] -= scale * inv_temp;
        state.push(t);
    }
    Ok(loss)
}

/// Per-epoch mean losses from a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftTrace {
    pub epoch_losses: Vec<f64>,
}

/// Gradient descent on the mean cold-start loss. The trace records each
/// epoch's mean loss as evaluated during that epoch's gradient pass.
pub fn sft_train(
    policy: &mut PolicyTable,
    dataset: &[ColdStartRecord],
    config: &SftConfig,
) -> Result<SftTrace> {
    if dataset.is_empty() {
        return Err(CoreError::Config("empty cold-start dataset".into()));
    }
    let table_len = policy.logits().len();
    let mut grad = vec![0.0f64; table_len];
    let mut velocity = if config.momentum > 0.0 {
        vec![0.0f64; table_len]
    } else {
        Vec::new()
    };
    let batch = config.batch_size.unwrap_or(dataset.len()).max(1);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for chunk in dataset.chunks(batch) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for record in chunk {
                epoch_loss += accumulate_sft_grad(policy, record, &mut grad, scale)?;
            }
            if config.momentum > 0.0 {
                for (vel, g) in velocity.iter_mut().zip(&grad) {
                    *vel = config.momentum * *vel + g;
                }
                for (l, vel) in policy.logits_mut().iter_mut().zip(&velocity) {
                    *l -= config.learning_rate * vel;
                }
            } else {
                for (l, g) in policy.logits_mut().iter_mut().zip(&grad) {
                    *l -= config.learning_rate * g;
                }
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(CoreError::NonFinite {
                quantity: "mean cold-start loss",
                stage: "sft_train",
            });
        }
        epoch_losses.push(mean);
    }
    Ok(SftTrace { epoch_losses })
}

/// Greedy decode from a question prefix: argmax token at each step until a
/// stop token or `max_len`. Used to probe cold-start competence.
pub fn greedy_decode(
    policy: &PolicyTable,
    prefix: &[TokenId],
    stop: &[TokenId],
    max_len: usize,
) -> Result<Vec<TokenId>> {
    let mut state = policy.context_after(prefix)?;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let dist = policy.distribution_at(&state);
        let t = dist
            .probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        out.push(t);
        state.push(t);
        if stop.contains(&t) {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagged::parse_tagged;
    use crate::task::verify;
    use crate::vocab::{ANSWER_CLOSE, EOS};

    fn setup() -> (Vocab, DomainConfig) {
        (Vocab::standard(), DomainConfig::default())
    }

    #[test]
    fn single_record_is_well_formed() {
        let (v, d) = setup();
        let recs = build_dataset(41, 1, &DifficultyMix::default(), &d, &v).unwrap();
        assert_eq!(recs.len(), 1);
        let parsed = parse_tagged(recs[0].response_tokens(), &v);
        assert!(parsed.well_formed);
    }

    #[test]
    fn five_hundred_records_all_verify() {
        let (v, d) = setup();
        let recs = build_dataset(7, 500, &DifficultyMix::default(), &d, &v).unwrap();
        assert_eq!(recs.len(), 500);
        for r in &recs {
            let parsed = parse_tagged(r.response_tokens(), &v);
            let task = crate::task::TaskRecord {
                question: r.question.clone(),
                truth: r.truth,
                difficulty: r.difficulty,
            }
            .into_task();
            assert!(verify(&task, &parsed, &v));
        }
    }

    #[test]
    fn difficulty_mix_is_binomially_plausible() {
        let (v, d) = setup();
        let mix = DifficultyMix(BTreeMap::from([(2, 0.5), (3, 0.5)]));
        let recs = build_dataset(123, 1000, &mix, &d, &v).unwrap();
        let d2 = recs.iter().filter(|r| r.difficulty == 2).count();
        // n = 1000, p = 0.5: 3 sigma is ~47, so [450, 550] is a safe band.
        assert!((450..=550).contains(&d2), "difficulty-2 count {d2}");
    }

    #[test]
    fn dataset_is_deterministic_in_seed() {
        let (v, d) = setup();
        let a = build_dataset(9, 50, &DifficultyMix::default(), &d, &v).unwrap();
        let b = build_dataset(9, 50, &DifficultyMix::default(), &d, &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_is_zero_for_a_policy_that_fits_perfectly() {
        let (v, d) = setup();
        let recs = build_dataset(5, 1, &DifficultyMix::single(2), &d, &v).unwrap();
        let mut policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        // Push ~all probability onto each target token along the sequence.
        let mut state = policy.context_after(&recs[0].question).unwrap();
        for &t in recs[0].response_tokens() {
            policy.logit_row_mut(state.id())[t] = 500.0;
            state.push(t);
        }
        let loss = sft_loss(&policy, &recs[0]).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn uniform_policy_loss_is_length_times_log_vocab() {
        let (v, d) = setup();
        let recs = build_dataset(5, 3, &DifficultyMix::default(), &d, &v).unwrap();
        let policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        for r in &recs {
            let expect = r.response_tokens().len() as f64 * (v.size() as f64).ln();
            let loss = sft_loss(&policy, r).unwrap();
            assert!((loss - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn log_space_loss_matches_linear_space_oracle() {
        let (v, d) = setup();
        let recs = build_dataset(21, 5, &DifficultyMix::default(), &d, &v).unwrap();
        let mut policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for l in policy.logits_mut().iter_mut().take(5000) {
            *l = rng.random::<f64>() * 2.0 - 1.0;
        }
        for r in &recs {
            // Independent route: multiply raw probabilities, then -log.
            let mut state = policy.context_after(&r.question).unwrap();
            let mut product = 1.0f64;
            for &t in r.response_tokens() {
                product *= policy.distribution_at(&state).probs[t];
                state.push(t);
            }
            let oracle = -product.ln();
            let loss = sft_loss(&policy, r).unwrap();
            assert!(
                (loss - oracle).abs() < 1e-9,
                "log-space {loss} vs linear-space {oracle}"
            );
        }
    }

    #[test]
    fn full_batch_gradient_equals_mean_of_per_record_gradients() {
        let (v, d) = setup();
        let recs = build_dataset(3, 8, &DifficultyMix::default(), &d, &v).unwrap();
        let policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        let len = policy.logits().len();
        let mut full = vec![0.0; len];
        for r in &recs {
            accumulate_sft_grad(&policy, r, &mut full, 1.0 / recs.len() as f64).unwrap();
        }
        let mut mean = vec![0.0; len];
        for r in &recs {
            let mut single = vec![0.0; len];
            accumulate_sft_grad(&policy, r, &mut single, 1.0).unwrap();
            for (m, s) in mean.iter_mut().zip(&single) {
                *m += s / recs.len() as f64;
            }
        }
        for (a, b) in full.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_trace_constant() {
        let (v, d) = setup();
        let recs = build_dataset(13, 20, &DifficultyMix::default(), &d, &v).unwrap();
        let mut policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        let cfg = SftConfig {
            epochs: 4,
            learning_rate: 0.0,
            ..Default::default()
        };
        let trace = sft_train(&mut policy, &recs, &cfg).unwrap();
        for w in trace.epoch_losses.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn single_record_converges_to_near_zero_loss() {
        let (v, d) = setup();
        let recs = build_dataset(17, 1, &DifficultyMix::single(2), &d, &v).unwrap();
        let mut policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        // Momentum is what makes 50 epochs enough here: plain descent on a
        // softmax row closes the gap at O(1/(lr * epochs)) per token.
        let cfg = SftConfig {
            epochs: 50,
            learning_rate: 0.5,
            momentum: 0.9,
            ..Default::default()
        };
        let trace = sft_train(&mut policy, &recs, &cfg).unwrap();
        let final_loss = sft_loss(&policy, &recs[0]).unwrap();
        assert!(final_loss < 0.05, "final loss {final_loss}");
        assert!(trace.epoch_losses[0] > final_loss);
    }

    #[test]
    fn mean_loss_is_non_increasing_at_small_learning_rate() {
        let (v, d) = setup();
        let recs = build_dataset(29, 500, &DifficultyMix::default(), &d, &v).unwrap();
        let mut policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        let cfg = SftConfig {
            epochs: 10,
            learning_rate: 0.1,
            ..Default::default()
        };
        let trace = sft_train(&mut policy, &recs, &cfg).unwrap();
        for w in trace.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn trained_policy_greedy_decodes_well_formed_responses() {
        let (v, d) = setup();
        let recs = build_dataset(31, 200, &DifficultyMix::default(), &d, &v).unwrap();
        let mut policy = PolicyTable::for_vocab(&v, 3, 1.0).unwrap();
        let cfg = SftConfig {
            epochs: 120,
            learning_rate: 0.8,
            ..Default::default()
        };
        sft_train(&mut policy, &recs, &cfg).unwrap();
        let ok = recs
            .iter()
            .filter(|r| {
                let out = greedy_decode(&policy, &r.question, &[ANSWER_CLOSE, EOS], 64).unwrap();
                parse_tagged(&out, &v).well_formed
            })
            .count();
        let frac = ok as f64 / recs.len() as f64;
        assert!(frac >= 0.9, "well-formed fraction {frac}");
    }
}
