//! JSONL trace records shared by the rollout, evaluation, and theory-check
//! stages. One line per response; reward breakdowns are appended as a
//! nested object so traces can be re-scored offline.

use crate::error::Result;
use crate::reward::RewardBreakdown;
use crate::rollout::RolloutGroup;
use crate::theory::JointCounts;
use crate::vocab::{TokenId, Vocab};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Optimization step or evaluation snapshot index.
    pub step: usize,
    pub question_id: usize,
    pub plan_index: usize,
    pub cont_index: usize,
    pub question: Vec<TokenId>,
    /// Raw response tokens, tags included.
    pub raw: Vec<TokenId>,
    /// Sampled plan span (empty when the response is malformed).
    pub plan: Vec<TokenId>,
    pub plan_log_probs: Vec<f64>,
    pub cont_log_probs: Vec<f64>,
    pub well_formed: bool,
    pub answer: Option<u64>,
    pub truth: u64,
    pub difficulty: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward: Option<RewardBreakdown>,
}

/// Flattens one rollout group into trace records.
pub fn records_from_group(
    step: usize,
    question_id: usize,
    group: &RolloutGroup,
    breakdowns: &[RewardBreakdown],
    vocab: &Vocab,
) -> Vec<TraceRecord> {
    let mut out = Vec::with_capacity(group.responses.len());
    for (idx, resp) in group.responses.iter().enumerate() {
        let plan = &group.plans[resp.plan_index];
        out.push(TraceRecord {
            step,
            question_id,
            plan_index: resp.plan_index,
            cont_index: resp.cont_index,
            question: group.task.question.clone(),
            raw: resp.parsed.raw.clone(),
            plan: plan.span.clone(),
            plan_log_probs: plan.log_probs.clone(),
            cont_log_probs: resp.log_probs.clone(),
            well_formed: resp.parsed.well_formed,
            answer: resp.parsed.answer_value(vocab),
            truth: group.task.truth,
            difficulty: group.task.difficulty,
            reward: breakdowns.get(idx).copied(),
        });
    }
    out
}

pub fn write_trace_jsonl(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<TraceRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Accumulates a joint count table over `(q, t, yhat, y)` from traces.
pub fn counts_from_traces(records: &[TraceRecord]) -> JointCounts {
    let mut counts = JointCounts::new();
    for r in records {
        counts.record(&r.question, &r.plan, r.answer, r.truth);
    }
    counts
}
