//! The tagged-output grammar and its parser.
//!
//! A well-formed response is exactly
//!
//! ```text
//! <plan> ... </plan> <think> ... </think> <answer> ... </answer>
//! ```
//!
//! with each tag appearing exactly once, in that order, no tag tokens inside
//! any span, and nothing before `<plan>` or after `</answer>`. Anything else
//! is a value with `well_formed == false`, never a parse failure: the policy
//! emits garbage early in training and the reward pipeline scores it as-is.

use crate::vocab::{
    TokenId, Vocab, ANSWER_CLOSE, ANSWER_OPEN, PLAN_CLOSE, PLAN_OPEN, THINK_CLOSE, THINK_OPEN,
};
use serde::{Deserialize, Serialize};

/// A token sequence segmented into plan / think / answer spans.
///
/// When `well_formed` is false the spans are empty and only `raw` is
/// meaningful.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedResponse {
    pub raw: Vec<TokenId>,
    pub plan: Vec<TokenId>,
    pub think: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    pub well_formed: bool,
}

impl TaggedResponse {
    /// Builds a well-formed response from its spans. The spans must not
    /// contain tag tokens; this is the inverse of [`parse_tagged`] on
    /// well-formed input.
    pub fn assemble(plan: &[TokenId], think: &[TokenId], answer: &[TokenId]) -> Self {
        let mut raw = Vec::with_capacity(plan.len() + think.len() + answer.len() + 6);
        raw.push(PLAN_OPEN);
        raw.extend_from_slice(plan);
        raw.push(PLAN_CLOSE);
        raw.push(THINK_OPEN);
        raw.extend_from_slice(think);
        raw.push(THINK_CLOSE);
        raw.push(ANSWER_OPEN);
        raw.extend_from_slice(answer);
        raw.push(ANSWER_CLOSE);
        Self {
            raw,
            plan: plan.to_vec(),
            think: think.to_vec(),
            answer: answer.to_vec(),
            well_formed: true,
        }
    }

    /// Serialized token form; identical to `raw`.
    pub fn serialize_tokens(&self) -> Vec<TokenId> {
        self.raw.clone()
    }

    /// Decoded answer ŷ. Absent when malformed, empty, or non-numeric.
    pub fn answer_value(&self, vocab: &Vocab) -> Option<u64> {
        if !self.well_formed {
            return None;
        }
        vocab.decode_digits(&self.answer)
    }

    /// Total token length of the response (tags included).
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Parses a raw token sequence against the tag grammar.
///
/// Pure and total: malformed input yields `well_formed == false` with the
/// raw tokens preserved.
pub fn parse_tagged(raw: &[TokenId], vocab: &Vocab) -> TaggedResponse {
    let malformed = |raw: &[TokenId]| TaggedResponse {
        raw: raw.to_vec(),
        plan: Vec::new(),
        think: Vec::new(),
        answer: Vec::new(),
        well_formed: false,
    };

    // The six tags must appear exactly once each, in grammar order, with the
    // first token being <plan> and the last </answer>.
    let expected = [
        PLAN_OPEN,
        PLAN_CLOSE,
        THINK_OPEN,
        THINK_CLOSE,
        ANSWER_OPEN,
        ANSWER_CLOSE,
    ];
    let tag_positions: Vec<(usize, TokenId)> = raw
        .iter()
        .enumerate()
        .filter(|(_, &t)| vocab.is_tag(t))
        .map(|(i, &t)| (i, t))
        .collect();
    if tag_positions.len() != 6 {
        return malformed(raw);
    }
    for (k, (_, tag)) in tag_positions.iter().enumerate() {
        if *tag != expected[k] {
            return malformed(raw);
        }
    }
    if tag_positions[0].0 != 0 || tag_positions[5].0 != raw.len() - 1 {
        return malformed(raw);
    }
    // Spans must be contiguous: </plan><think> and </think><answer> adjacent.
    if tag_positions[2].0 != tag_positions[1].0 + 1 || tag_positions[4].0 != tag_positions[3].0 + 1
    {
        return malformed(raw);
    }

    let plan = raw[tag_positions[0].0 + 1..tag_positions[1].0].to_vec();
    let think = raw[tag_positions[2].0 + 1..tag_positions[3].0].to_vec();
    let answer = raw[tag_positions[4].0 + 1..tag_positions[5].0].to_vec();
    TaggedResponse {
        raw: raw.to_vec(),
        plan,
        think,
        answer,
        well_formed: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{EOS, MOD, PLUS, SEP};

    fn v() -> Vocab {
        Vocab::standard()
    }

    #[test]
    fn parses_the_canonical_example() {
        // <plan> 3 + 4 </plan> <think> 7 </think> <answer> 7 </answer>
        let raw = vec![
            PLAN_OPEN,
            3,
            PLUS,
            4,
            PLAN_CLOSE,
            THINK_OPEN,
            7,
            THINK_CLOSE,
            ANSWER_OPEN,
            7,
            ANSWER_CLOSE,
        ];
        let r = parse_tagged(&raw, &v());
        assert!(r.well_formed);
        assert_eq!(r.plan, vec![3, PLUS, 4]);
        assert_eq!(r.think, vec![7]);
        assert_eq!(r.answer, vec![7]);
        assert_eq!(r.answer_value(&v()), Some(7));
    }

    #[test]
    fn duplicate_plan_open_is_malformed() {
        let raw = vec![
            PLAN_OPEN,
            PLAN_OPEN,
            PLAN_CLOSE,
            THINK_OPEN,
            THINK_CLOSE,
            ANSWER_OPEN,
            ANSWER_CLOSE,
        ];
        assert!(!parse_tagged(&raw, &v()).well_formed);
    }

    #[test]
    fn out_of_order_tags_are_malformed() {
        let raw = vec![
            THINK_OPEN,
            THINK_CLOSE,
            PLAN_OPEN,
            PLAN_CLOSE,
            ANSWER_OPEN,
            ANSWER_CLOSE,
        ];
        assert!(!parse_tagged(&raw, &v()).well_formed);
    }

    #[test]
    fn missing_answer_close_is_malformed() {
        let raw = vec![
            PLAN_OPEN,
            PLAN_CLOSE,
            THINK_OPEN,
            THINK_CLOSE,
            ANSWER_OPEN,
            7,
        ];
        let r = parse_tagged(&raw, &v());
        assert!(!r.well_formed);
        assert_eq!(r.answer_value(&v()), None);
    }

    #[test]
    fn trailing_tokens_after_answer_close_are_malformed() {
        let mut raw = TaggedResponse::assemble(&[PLUS], &[7], &[7]).raw;
        raw.push(EOS);
        assert!(!parse_tagged(&raw, &v()).well_formed);
    }

    #[test]
    fn leading_tokens_before_plan_open_are_malformed() {
        let mut raw = vec![3];
        raw.extend(TaggedResponse::assemble(&[], &[], &[7]).raw);
        assert!(!parse_tagged(&raw, &v()).well_formed);
    }

    #[test]
    fn gap_between_spans_is_malformed() {
        // stray digit between </plan> and <think>
        let raw = vec![
            PLAN_OPEN,
            PLUS,
            PLAN_CLOSE,
            5,
            THINK_OPEN,
            THINK_CLOSE,
            ANSWER_OPEN,
            7,
            ANSWER_CLOSE,
        ];
        assert!(!parse_tagged(&raw, &v()).well_formed);
    }

    #[test]
    fn empty_spans_are_well_formed_but_answer_absent() {
        let r = parse_tagged(&TaggedResponse::assemble(&[], &[], &[]).raw, &v());
        assert!(r.well_formed);
        assert_eq!(r.answer_value(&v()), None);
    }

    #[test]
    fn roundtrip_through_serialize() {
        let r = TaggedResponse::assemble(&[MOD, PLUS], &[6, SEP, 1], &[1, 0]);
        let reparsed = parse_tagged(&r.serialize_tokens(), &v());
        assert_eq!(reparsed.raw, r.raw);
        assert_eq!(reparsed, r);
    }
}
