//! Group-relative policy optimization.
//!
//! Advantages standardize each response's total reward against its own
//! group: `A = (r - mean) / std` with the population std over all m*z
//! totals, and `A = 0` everywhere when the group is flat. The surrogate is
//! the clipped ratio objective
//!
//! ```text
//! J = mean_resp [ norm * sum_t min(rho_t A, clip(rho_t, 1-e, 1+e) A) ]
//!     - kl_coeff * mean_resp mean_t (rho'_t - ln rho'_t - 1)
//! ```
//!
//! with `rho_t = pi_theta / pi_old` on the realized token, the advantage
//! broadcast to every token of its response, and `rho'_t = pi_ref /
//! pi_theta` the nonnegative per-token KL estimator against the frozen
//! reference. Gradients are exact through the softmax rows; ascent is plain
//! gradient steps with optional momentum and weight decay. The old policy is
//! re-frozen once per optimization step.

use crate::cold_start::DifficultyMix;
use crate::error::{CoreError, Result};
use crate::policy::{PolicySnapshot, PolicyTable, SnapshotRole};
use crate::reward::{total_reward, RewardBreakdown, RewardConfig};
use crate::rollout::{build_group, RolloutGroup, RolloutShape, ScoredResponse};
use crate::task::{generate_task, DomainConfig};
use crate::vocab::{TokenId, Vocab};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How a response's token sum enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenNorm {
    /// Divide each response's token sum by its token count.
    PerResponseMean,
    /// Raw token sum.
    RawSum,
}

/// Optimizer schedule and objective knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    /// Clipping range epsilon, in (0, 1).
    pub clip_eps: f64,
    /// Weight of the KL regularizer against the frozen reference.
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Questions (groups) per optimization step.
    pub groups_per_step: usize,
    pub token_norm: TokenNorm,
    /// Score the shared plan tokens as part of each continuation's sequence.
    pub include_plan_tokens: bool,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Adaptive-moment updates (Adam) instead of plain ascent.
    pub adaptive: bool,
    /// Emit a checkpoint every N steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_coeff: 0.01,
            learning_rate: 1.0,
            steps: 200,
            groups_per_step: 8,
            token_norm: TokenNorm::PerResponseMean,
            include_plan_tokens: true,
            momentum: 0.0,
            weight_decay: 0.0,
            adaptive: false,
            checkpoint_every: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(CoreError::Config("clip_eps must lie in (0, 1)".into()));
        }
        if self.kl_coeff < 0.0 {
            return Err(CoreError::Config("kl_coeff must be nonnegative".into()));
        }
        if self.groups_per_step == 0 {
            return Err(CoreError::Config("groups_per_step must be positive".into()));
        }
        Ok(())
    }
}

/// Group-standardized advantages with their moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// `A_i = (r_i - mean) / std` with the population std; all zeros when the
/// group is flat.
pub fn advantages(totals: &[f64]) -> AdvantageSet {
    assert!(!totals.is_empty(), "advantages need at least one reward");
    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    // A flat group has sigma = 0 by definition; detect it structurally so
    // rounding in the mean cannot manufacture spurious advantages.
    if totals.iter().all(|&r| r == totals[0]) {
        return AdvantageSet {
            values: vec![0.0; totals.len()],
            mean,
            std: 0.0,
        };
    }
    let var = totals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let values = if std == 0.0 {
        vec![0.0; totals.len()]
    } else {
        totals.iter().map(|r| (r - mean) / std).collect()
    };
    AdvantageSet { values, mean, std }
}

/// The pessimistic clipped surrogate for one token:
/// `min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-token KL estimator `rho - ln rho - 1` with `rho = pi_ref / pi_theta`
/// on the realized tokens, averaged over the sequence. Nonnegative by
/// construction; exactly zero when the policies agree on every token.
pub fn kl_penalty(
    policy: &PolicyTable,
    reference: &PolicyTable,
    prefix: &[TokenId],
    tokens: &[TokenId],
) -> Result<f64> {
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let mut state = policy.context_after(prefix)?;
    let mut acc = 0.0;
    for &t in tokens {
        let lp_cur = policy.distribution_at(&state).log_probs[t];
        let lp_ref = reference.distribution_at(&state).log_probs[t];
        let log_rho = lp_ref - lp_cur;
        acc += log_rho.exp() - log_rho - 1.0;
        state.push(t);
    }
    Ok(acc / tokens.len() as f64)
}

/// Mutable optimizer state carried across steps: momentum velocity and
/// adaptive first/second moments, allocated lazily.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    velocity: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    t: usize,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one ascent step of `grad` to the policy under the configured
    /// update rule. Weight decay is folded into the gradient first.
    fn apply(&mut self, policy: &mut PolicyTable, grad: &mut [f64], config: &RlConfig) {
        let lr = config.learning_rate;
        if config.weight_decay > 0.0 {
            let wd = config.weight_decay;
            for (g, &l) in grad.iter_mut().zip(policy.logits().iter()) {
                *g -= wd * l;
            }
        }
        if config.adaptive {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            if self.adam_m.len() != grad.len() {
                self.adam_m = vec![0.0; grad.len()];
                self.adam_v = vec![0.0; grad.len()];
                self.t = 0;
            }
            self.t += 1;
            let bc1 = 1.0 - B1.powi(self.t as i32);
            let bc2 = 1.0 - B2.powi(self.t as i32);
            for ((l, g), (m, v)) in policy
                .logits_mut()
                .iter_mut()
                .zip(grad.iter())
                .zip(self.adam_m.iter_mut().zip(self.adam_v.iter_mut()))
            {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *l += lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
            }
        } else if config.momentum > 0.0 {
            if self.velocity.len() != grad.len() {
                self.velocity = vec![0.0; grad.len()];
            }
            for ((l, g), vel) in policy
                .logits_mut()
                .iter_mut()
                .zip(grad.iter())
                .zip(self.velocity.iter_mut())
            {
                *vel = config.momentum * *vel + g;
                *l += lr * *vel;
            }
        } else {
            for (l, g) in policy.logits_mut().iter_mut().zip(grad.iter()) {
                *l += lr * g;
            }
        }
    }
}

/// One group prepared for the optimizer: flattened responses, their reward
/// breakdowns, and the group's advantages.
#[derive(Debug, Clone)]
pub struct ScoredGroup {
    pub responses: Vec<ScoredResponse>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub advantages: AdvantageSet,
}

impl ScoredGroup {
    /// Flattens a rollout group with its reward breakdowns.
    pub fn from_rollout(
        group: &RolloutGroup,
        breakdowns: Vec<RewardBreakdown>,
        include_plan_tokens: bool,
    ) -> Self {
        let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let mut responses = Vec::with_capacity(group.m * group.z);
        for i in 0..group.m {
            for k in 0..group.z {
                responses.push(group.scored_response(i, k, include_plan_tokens));
            }
        }
        Self {
            responses,
            breakdowns,
            advantages: advantages(&totals),
        }
    }
}

/// Summary statistics for one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_total_reward: f64,
    pub mean_outcome: f64,
    pub mean_analytic: f64,
    pub mean_length: f64,
    pub policy_entropy: f64,
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub mean_abs_advantage: f64,
}

/// One ascent step on the clipped surrogate over a batch of scored groups.
///
/// The advantage of each response is broadcast to its tokens; the clipped
/// branch contributes zero gradient. Returns the step metrics; parameters
/// are updated in place. A non-finite gradient aborts before any update.
pub fn policy_gradient_step(
    policy: &mut PolicyTable,
    old: &PolicyTable,
    reference: Option<&PolicyTable>,
    groups: &[ScoredGroup],
    config: &RlConfig,
    opt_state: &mut OptimizerState,
) -> Result<StepMetrics> {
    config.validate()?;
    let v = policy.vocab_size();
    let inv_temp = 1.0 / policy.temperature();
    let total_responses: usize = groups.iter().map(|g| g.responses.len()).sum();
    if total_responses == 0 {
        return Err(CoreError::Config("empty optimization batch".into()));
    }
    let batch_scale = 1.0 / total_responses as f64;

    let mut grad = vec![0.0f64; policy.logits().len()];
    let mut clipped_tokens = 0usize;
    let mut token_count = 0usize;
    let mut entropy_acc = 0.0;
    let mut kl_acc = 0.0;
    let mut reward_acc = (0.0, 0.0, 0.0, 0.0); // total, outcome, analytic, length
    let mut abs_adv_acc = 0.0;

    for group in groups {
        for (r_idx, resp) in group.responses.iter().enumerate() {
            let advantage = group.advantages.values[r_idx];
            let b = &group.breakdowns[r_idx];
            reward_acc.0 += b.total;
            reward_acc.1 += b.outcome;
            reward_acc.2 += b.analytic;
            reward_acc.3 += resp.response_len as f64;
            abs_adv_acc += advantage.abs();

            let norm = match config.token_norm {
                TokenNorm::PerResponseMean => 1.0 / resp.tokens.len().max(1) as f64,
                TokenNorm::RawSum => 1.0,
            };
            let scale = batch_scale * norm;
            let mut state = policy.context_after(&resp.prefix)?;
            let mut resp_kl = 0.0;
            for (&t, &old_lp) in resp.tokens.iter().zip(&resp.old_log_probs) {
                let dist = policy.distribution_at(&state);
                entropy_acc += dist.entropy_nats();
                token_count += 1;
                let lp_new = dist.log_probs[t];
                let ratio = (lp_new - old_lp).exp();
                let clipped_ratio = ratio.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps);
                let unclipped = ratio * advantage;
                if unclipped <= clipped_ratio * advantage {
                    // Unclipped branch active: d(ratio*A)/dθ = A*ratio*∇logπ.
                    let coef = scale * advantage * ratio * inv_temp;
                    if coef != 0.0 {
                        let row = &mut grad[state.id() * v..(state.id() + 1) * v];
                        for (g, &p) in row.iter_mut().zip(&dist.probs) {
                            *g -= coef * p;
                        }
                        row[t] += coef;
                    }
                } else {
                    clipped_tokens += 1;
                }
                if let Some(reference) = reference {
                    if config.kl_coeff > 0.0 {
                        let lp_ref = reference.distribution_at(&state).log_probs[t];
                        let log_rho = lp_ref - lp_new;
                        let rho = log_rho.exp();
                        resp_kl += rho - log_rho - 1.0;
                        // d(rho - ln rho - 1)/dθ = (1 - rho)∇logπ; the KL term
                        // enters J with a negative sign.
                        let coef = -config.kl_coeff
                            * batch_scale
                            * (1.0 / resp.tokens.len().max(1) as f64)
                            * (1.0 - rho)
                            * inv_temp;
                        let row = &mut grad[state.id() * v..(state.id() + 1) * v];
                        for (g, &p) in row.iter_mut().zip(&dist.probs) {
                            *g -= coef * p;
                        }
                        row[t] += coef;
                    }
                }
                state.push(t);
            }
            kl_acc += resp_kl / resp.tokens.len().max(1) as f64;
        }
    }

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::NonFinite {
            quantity: "policy gradient",
            stage: "policy_gradient_step",
        });
    }

    opt_state.apply(policy, &mut grad, config);
    let _ = old; // ratios use the stored old log-probs; `old` kept for parity

    let n = total_responses as f64;
    Ok(StepMetrics {
        step: 0,
        mean_total_reward: reward_acc.0 / n,
        mean_outcome: reward_acc.1 / n,
        mean_analytic: reward_acc.2 / n,
        mean_length: reward_acc.3 / n,
        policy_entropy: entropy_acc / token_count.max(1) as f64,
        clip_fraction: clipped_tokens as f64 / token_count.max(1) as f64,
        mean_kl: kl_acc / n,
        mean_abs_advantage: abs_adv_acc / n,
    })
}

/// Hook invoked after every optimization step with the updated policy, the
/// raw rollouts, their rewards, and the step metrics. Drives trace sinks
/// and periodic checkpointing.
pub trait StepObserver {
    fn on_step(
        &mut self,
        step: usize,
        policy: &PolicyTable,
        groups: &[RolloutGroup],
        breakdowns: &[Vec<RewardBreakdown>],
        metrics: &StepMetrics,
    ) -> Result<()>;
}

/// No-op observer.
pub struct NullObserver;

impl StepObserver for NullObserver {
    fn on_step(
        &mut self,
        _step: usize,
        _policy: &PolicyTable,
        _groups: &[RolloutGroup],
        _breakdowns: &[Vec<RewardBreakdown>],
        _metrics: &StepMetrics,
    ) -> Result<()> {
        Ok(())
    }
}

/// The full optimization loop: draw questions, roll out groups under the
/// frozen step snapshot, score rewards, standardize advantages, and ascend.
/// The reference snapshot for the KL term is frozen once at entry.
#[allow(clippy::too_many_arguments)]
pub fn rl_train(
    policy: &mut PolicyTable,
    reward_config: &RewardConfig,
    rl_config: &RlConfig,
    shape: &RolloutShape,
    mix: &DifficultyMix,
    domain: &DomainConfig,
    vocab: &Vocab,
    seed: u64,
    observer: &mut dyn StepObserver,
) -> Result<Vec<StepMetrics>> {
    rl_config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = PolicySnapshot::freeze(policy, SnapshotRole::Reference);
    let mut old = PolicySnapshot::freeze(policy, SnapshotRole::Old);
    let mut opt_state = OptimizerState::new();
    let mut trace = Vec::with_capacity(rl_config.steps);

    for step in 0..rl_config.steps {
        old.refreeze(policy);
        let mut groups = Vec::with_capacity(rl_config.groups_per_step);
        let mut scored = Vec::with_capacity(rl_config.groups_per_step);
        let mut breakdowns_per_group = Vec::with_capacity(rl_config.groups_per_step);
        for _ in 0..rl_config.groups_per_step {
            let difficulty = mix.sample(&mut rng);
            let task_seed = rng.next_u64();
            let task = generate_task(task_seed, difficulty, domain)?;
            let group = build_group(old.table(), &task, shape, vocab, &mut rng)?;
            let breakdowns = total_reward(&group, reward_config, vocab)?;
            scored.push(ScoredGroup::from_rollout(
                &group,
                breakdowns.clone(),
                rl_config.include_plan_tokens,
            ));
            breakdowns_per_group.push(breakdowns);
            groups.push(group);
        }
        let mut metrics = policy_gradient_step(
            policy,
            old.table(),
            Some(reference.table()),
            &scored,
            rl_config,
            &mut opt_state,
        )?;
        metrics.step = step;
        observer.on_step(step, policy, &groups, &breakdowns_per_group, &metrics)?;
        trace.push(metrics);
    }
    Ok(trace)
}

/// Writes the metrics trace as CSV with one row per step.
pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "mean_total_reward",
        "mean_outcome",
        "mean_analytic",
        "mean_length",
        "policy_entropy",
        "clip_fraction",
        "mean_kl",
    ])?;
    for m in metrics {
        w.write_record([
            m.step.to_string(),
            m.mean_total_reward.to_string(),
            m.mean_outcome.to_string(),
            m.mean_analytic.to_string(),
            m.mean_length.to_string(),
            m.policy_entropy.to_string(),
            m.clip_fraction.to_string(),
            m.mean_kl.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
