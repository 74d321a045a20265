//! Two-level response groups: m sampled plans per question, z chain-of-
//! thought continuations per plan.
//!
//! Plans are sampled from `question ++ <plan>` and halt at `</plan>` or the
//! length cap; a capped plan gets `</plan>` appended with its teacher-forced
//! log-probability so every continuation's conditioning prefix is exactly
//! `question ++ <plan> ++ plan ++ </plan>`. Continuations halt at
//! `</answer>`, `<eos>`, or their own cap, and the reassembled raw sequence
//! is parsed against the tag grammar. Malformed output stays in the group —
//! it is a value the reward pipeline scores, not an error.

use crate::error::Result;
use crate::policy::PolicyTable;
use crate::tagged::{parse_tagged, TaggedResponse};
use crate::task::Task;
use crate::vocab::{TokenId, Vocab, ANSWER_CLOSE, EOS, PLAN_CLOSE, PLAN_OPEN};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Rollout dimensions and caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutShape {
    /// Number of sampled plans per question.
    pub m: usize,
    /// Continuations per plan.
    pub z: usize,
    /// Cap on plan span length (excluding the closing tag).
    pub max_plan_len: usize,
    /// Cap on continuation length.
    pub max_cont_len: usize,
}

impl Default for RolloutShape {
    fn default() -> Self {
        Self {
            m: 3,
            z: 3,
            max_plan_len: 8,
            max_cont_len: 64,
        }
    }
}

impl RolloutShape {
    /// Largest possible raw response length under these caps:
    /// `<plan> span </plan>` plus the continuation.
    pub fn max_response_len(&self) -> usize {
        2 + self.max_plan_len + self.max_cont_len
    }
}

/// One sampled plan with per-token log-probs under the sampling policy.
///
/// `scored` is `span ++ [</plan>]`; the closing tag is sampled when the stop
/// fired naturally and teacher-forced at the cap, its log-prob recorded
/// either way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSample {
    pub span: Vec<TokenId>,
    pub scored: Vec<TokenId>,
    pub log_probs: Vec<f64>,
}

/// One continuation, parsed against the grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub plan_index: usize,
    pub cont_index: usize,
    /// Continuation tokens (everything sampled after `</plan>`).
    pub tokens: Vec<TokenId>,
    pub log_probs: Vec<f64>,
    /// Parse of `<plan> span </plan> ++ tokens`.
    pub parsed: TaggedResponse,
}

impl ResponseSample {
    /// Total token length of the raw response, tags included.
    pub fn response_len(&self) -> usize {
        self.parsed.raw.len()
    }
}

/// The hierarchical sample for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task: Task,
    pub plans: Vec<PlanSample>,
    /// m * z responses in (plan, continuation) order.
    pub responses: Vec<ResponseSample>,
    pub m: usize,
    pub z: usize,
}

impl RolloutGroup {
    pub fn response(&self, plan_index: usize, cont_index: usize) -> &ResponseSample {
        &self.responses[plan_index * self.z + cont_index]
    }
}

/// Samples m plans from `question ++ <plan>`, with replacement.
pub fn sample_plans(
    policy: &PolicyTable,
    task: &Task,
    m: usize,
    max_plan_len: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PlanSample>> {
    let mut prefix = task.question.clone();
    prefix.push(PLAN_OPEN);
    let mut plans = Vec::with_capacity(m);
    for _ in 0..m {
        let s = policy.sample_sequence(&prefix, &[PLAN_CLOSE], max_plan_len, rng)?;
        let (span, mut scored, mut log_probs) = if s.hit_stop {
            let span = s.tokens[..s.tokens.len() - 1].to_vec();
            (span, s.tokens, s.log_probs)
        } else {
            (s.tokens.clone(), s.tokens, s.log_probs)
        };
        if scored.last() != Some(&PLAN_CLOSE) {
            // Cap reached: force the closing tag, scoring it under the policy.
            let mut state = policy.context_after(&prefix)?;
            for &t in &scored {
                state.push(t);
            }
            log_probs.push(policy.distribution_at(&state).log_probs[PLAN_CLOSE]);
            scored.push(PLAN_CLOSE);
        }
        plans.push(PlanSample {
            span,
            scored,
            log_probs,
        });
    }
    Ok(plans)
}

/// Samples z continuations conditioned on a plan. The conditioning prefix is
/// `question ++ <plan> ++ span ++ </plan>`.
#[allow(clippy::too_many_arguments)]
pub fn sample_continuations(
    policy: &PolicyTable,
    task: &Task,
    plan: &PlanSample,
    plan_index: usize,
    z: usize,
    max_cont_len: usize,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Result<Vec<ResponseSample>> {
    let mut prefix = task.question.clone();
    prefix.push(PLAN_OPEN);
    prefix.extend_from_slice(&plan.span);
    prefix.push(PLAN_CLOSE);

    let mut out = Vec::with_capacity(z);
    for cont_index in 0..z {
        let s = policy.sample_sequence(&prefix, &[ANSWER_CLOSE, EOS], max_cont_len, rng)?;
        let mut raw = Vec::with_capacity(2 + plan.span.len() + s.tokens.len());
        raw.push(PLAN_OPEN);
        raw.extend_from_slice(&plan.span);
        raw.push(PLAN_CLOSE);
        raw.extend_from_slice(&s.tokens);
        out.push(ResponseSample {
            plan_index,
            cont_index,
            tokens: s.tokens,
            log_probs: s.log_probs,
            parsed: parse_tagged(&raw, vocab),
        });
    }
    Ok(out)
}

/// Builds the full m x z group for one question. Always returns a complete
/// group; garbage output is represented, never rejected.
pub fn build_group(
    policy: &PolicyTable,
    task: &Task,
    shape: &RolloutShape,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Result<RolloutGroup> {
    let plans = sample_plans(policy, task, shape.m, shape.max_plan_len, rng)?;
    let mut responses = Vec::with_capacity(shape.m * shape.z);
    for (i, plan) in plans.iter().enumerate() {
        responses.extend(sample_continuations(
            policy,
            task,
            plan,
            i,
            shape.z,
            shape.max_cont_len,
            vocab,
            rng,
        )?);
    }
    Ok(RolloutGroup {
        task: task.clone(),
        plans,
        responses,
        m: shape.m,
        z: shape.z,
    })
}

/// Flat view of one response for the optimizer: a conditioning prefix
/// followed by the contiguous scored tokens with their sampling-time
/// log-probs.
#[derive(Debug, Clone)]
pub struct ScoredResponse {
    pub prefix: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub old_log_probs: Vec<f64>,
    /// Raw response length (tags included) for metrics.
    pub response_len: usize,
}

impl RolloutGroup {
    /// Extracts the optimizer view of response (i, k). With
    /// `include_plan_tokens` the plan tokens (shared across the plan's z
    /// continuations) are part of the optimized sequence; otherwise they
    /// move into the conditioning prefix.
    pub fn scored_response(
        &self,
        plan_index: usize,
        cont_index: usize,
        include_plan_tokens: bool,
    ) -> ScoredResponse {
        let plan = &self.plans[plan_index];
        let resp = self.response(plan_index, cont_index);
        let mut prefix = self.task.question.clone();
        prefix.push(PLAN_OPEN);
        if include_plan_tokens {
            let mut tokens = plan.scored.clone();
            tokens.extend_from_slice(&resp.tokens);
            let mut lps = plan.log_probs.clone();
            lps.extend_from_slice(&resp.log_probs);
            ScoredResponse {
                prefix,
                tokens,
                old_log_probs: lps,
                response_len: resp.response_len(),
            }
        } else {
            prefix.extend_from_slice(&plan.span);
            prefix.push(PLAN_CLOSE);
            ScoredResponse {
                prefix,
                tokens: resp.tokens.clone(),
                old_log_probs: resp.log_probs.clone(),
                response_len: resp.response_len(),
            }
        }
    }
}

/// Recomputes per-token log-probs of a scored sequence under a policy,
/// through the same arithmetic path used at sampling time.
pub fn recompute_log_probs(policy: &PolicyTable, scored: &ScoredResponse) -> Result<Vec<f64>> {
    let mut state = policy.context_after(&scored.prefix)?;
    let mut out = Vec::with_capacity(scored.tokens.len());
    for &t in &scored.tokens {
        out.push(policy.distribution_at(&state).log_probs[t]);
        state.push(t);
    }
    Ok(out)
}
