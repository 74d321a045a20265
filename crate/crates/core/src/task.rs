//! Synthetic arithmetic tasks with exactly computable answers.
//!
//! A task encodes a left-to-right modular reduction `((a ⊕₁ b) ⊕₂ c) mod p`
//! with single-digit operands and operators drawn from `+ - *`. The running
//! value is reduced mod p after every step, so with the default p = 10 every
//! intermediate value and the final answer are single digit tokens. The
//! question is the bare expression `a ⊕₁ b [⊕₂ c …]`; the trailing `mod p`
//! is fixed per run by [`DomainConfig`] and appears in plans as the `%`
//! operator rather than in the question.

use crate::error::{CoreError, Result};
use crate::tagged::TaggedResponse;
use crate::vocab::{TokenId, Vocab, MINUS, MOD, PLUS, SEP, STAR};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Binary operator applied between consecutive operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub fn token(self) -> TokenId {
        match self {
            Op::Add => PLUS,
            Op::Sub => MINUS,
            Op::Mul => STAR,
        }
    }

    pub fn apply_mod(self, lhs: u64, rhs: u64, modulus: u64) -> u64 {
        match self {
            Op::Add => (lhs + rhs) % modulus,
            Op::Sub => (lhs as i64 - rhs as i64).rem_euclid(modulus as i64) as u64,
            Op::Mul => (lhs * rhs) % modulus,
        }
    }
}

const OPS: [Op; 3] = [Op::Add, Op::Sub, Op::Mul];

/// Task-domain parameters, fixed for the lifetime of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    /// Modulus p applied after every reduction step. Answers lie in [0, p).
    pub modulus: u64,
    /// Relative sampling weights for `+ - *` in generated expressions.
    pub operator_weights: [f64; 3],
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            modulus: 10,
            operator_weights: [1.0, 1.0, 1.0],
        }
    }
}

/// A question with its exactly computed ground-truth answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    /// Token encoding of the expression: `a op b [op c [op d]]`.
    pub question: Vec<TokenId>,
    /// Exact evaluation result, in [0, p).
    pub truth: u64,
    /// Operand count, 2..=4.
    pub difficulty: usize,
    #[serde(skip)]
    operands: Vec<u64>,
    #[serde(skip)]
    operators: Vec<Op>,
}

impl Task {
    /// Builds a task from explicit operands and operators, computing the
    /// ground truth by exact left-to-right evaluation mod p.
    pub fn from_expression(operands: &[u64], operators: &[Op], domain: &DomainConfig) -> Self {
        assert_eq!(operators.len() + 1, operands.len(), "one op per gap");
        assert!(operands.iter().all(|&x| x < 10), "single-digit operands");
        let mut question = Vec::with_capacity(operands.len() * 2 - 1);
        question.push(Vocab::digit(operands[0] as u32));
        for (op, &rhs) in operators.iter().zip(&operands[1..]) {
            question.push(op.token());
            question.push(Vocab::digit(rhs as u32));
        }
        let truth = *intermediate_values(operands, operators, domain.modulus)
            .last()
            .expect("at least one reduction step");
        Self {
            question,
            truth,
            difficulty: operands.len(),
            operands: operands.to_vec(),
            operators: operators.to_vec(),
        }
    }

    /// Recovers operands/operators from the question tokens. Used when a
    /// task was deserialized and the private fields were skipped.
    pub fn hydrate(&mut self) {
        if !self.operands.is_empty() {
            return;
        }
        let mut operands = Vec::new();
        let mut operators = Vec::new();
        for (i, &t) in self.question.iter().enumerate() {
            if i % 2 == 0 {
                operands.push(t as u64);
            } else {
                operators.push(match t {
                    PLUS => Op::Add,
                    MINUS => Op::Sub,
                    STAR => Op::Mul,
                    _ => unreachable!("question alternates digit/operator"),
                });
            }
        }
        self.operands = operands;
        self.operators = operators;
    }

    pub fn operands(&self) -> &[u64] {
        &self.operands
    }

    pub fn operators(&self) -> &[Op] {
        &self.operators
    }
}

fn intermediate_values(operands: &[u64], operators: &[Op], modulus: u64) -> Vec<u64> {
    let mut values = Vec::with_capacity(operators.len());
    let mut acc = operands[0] % modulus;
    for (op, &rhs) in operators.iter().zip(&operands[1..]) {
        acc = op.apply_mod(acc, rhs, modulus);
        values.push(acc);
    }
    values
}

/// Deterministically generates a task: identical `(seed, difficulty, domain)`
/// yields a byte-identical task.
pub fn generate_task(seed: u64, difficulty: usize, domain: &DomainConfig) -> Result<Task> {
    if !(2..=4).contains(&difficulty) {
        return Err(CoreError::UnsupportedDifficulty(difficulty));
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (difficulty as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let weights = WeightedIndex::new(domain.operator_weights)
        .map_err(|e| CoreError::Config(format!("bad operator_weights: {e}")))?;
    let operands: Vec<u64> = (0..difficulty).map(|_| rng.random_range(0..10)).collect();
    let operators: Vec<Op> = (0..difficulty - 1)
        .map(|_| OPS[weights.sample(&mut rng)])
        .collect();
    Ok(Task::from_expression(&operands, &operators, domain))
}

/// The indicator 1[ŷ = y]: true iff the response is well-formed and its
/// decoded answer equals the ground truth. Total: malformed or missing
/// answers are simply false.
pub fn verify(task: &Task, response: &TaggedResponse, vocab: &Vocab) -> bool {
    response.answer_value(vocab) == Some(task.truth)
}

/// Deterministic oracle standing in for a teacher model: emits the operator
/// schedule as the plan, the running reduction values as the think span, and
/// the exact answer. Always verifies.
pub fn oracle_plan_and_cot(task: &Task, domain: &DomainConfig, vocab: &Vocab) -> TaggedResponse {
    let plan = oracle_plan(task);
    let values = intermediate_values(task.operands(), task.operators(), domain.modulus);
    let mut think = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if i > 0 && domain.modulus > 10 {
            // Multi-digit values would be ambiguous without a separator.
            think.push(SEP);
        }
        think.extend(vocab.encode_digits(v));
    }
    let answer = vocab.encode_digits(task.truth);
    TaggedResponse::assemble(&plan, &think, &answer)
}

/// Operator schedule in evaluation order, ending with the modular reduction.
pub fn oracle_plan(task: &Task) -> Vec<TokenId> {
    let mut plan: Vec<TokenId> = task.operators().iter().map(|op| op.token()).collect();
    plan.push(MOD);
    plan
}

/// JSONL record for serialized task sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub question: Vec<TokenId>,
    pub truth: u64,
    pub difficulty: usize,
}

impl From<&Task> for TaskRecord {
    fn from(t: &Task) -> Self {
        Self {
            question: t.question.clone(),
            truth: t.truth,
            difficulty: t.difficulty,
        }
    }
}

impl TaskRecord {
    pub fn into_task(self) -> Task {
        let mut task = Task {
            question: self.question,
            truth: self.truth,
            difficulty: self.difficulty,
            operands: Vec::new(),
            operators: Vec::new(),
        };
        task.hydrate();
        task
    }
}
