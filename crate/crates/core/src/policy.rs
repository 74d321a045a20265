//! Tabular autoregressive softmax policy.
//!
//! The policy is a logit matrix indexed `[context_id x vocab_size]` where a
//! context id enumerates the last K tokens of the prefix (short prefixes are
//! padded with a reserved begin token). Everything is exact 64-bit
//! arithmetic: sampling, log-probabilities, and the analytic gradient of
//! `log pi(token | context)`, which for a softmax row is simply
//!
//! ```text
//! d/d logits  log pi(t | ctx) = (onehot(t) - softmax(logits/T)) / T
//! ```
//!
//! Log-probabilities are always produced through [`TokenDistribution`], a
//! single arithmetic path, so recomputing them over a stored sequence
//! reproduces the sampled values bitwise.

use crate::error::{CoreError, Result};
use crate::vocab::{TokenId, Vocab, BOS};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Sampling-time knobs. `top_p >= 1` disables nucleus truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
        }
    }
}

/// A context-conditional token distribution with matching log-probabilities.
#[derive(Debug, Clone)]
pub struct TokenDistribution {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl TokenDistribution {
    fn from_row(row: &[f64], temperature: f64) -> Self {
        let scaled: Vec<f64> = row.iter().map(|l| l / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let ln_z = z.ln();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let log_probs: Vec<f64> = scaled.iter().map(|s| s - max - ln_z).collect();
        Self { probs, log_probs }
    }

    /// Nucleus truncation: keeps the smallest set of highest-probability
    /// tokens whose mass reaches `top_p`, renormalized. Ties break by token
    /// id so the result is deterministic.
    pub fn truncate_top_p(&self, top_p: f64) -> Self {
        if top_p >= 1.0 {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut kept = vec![false; self.probs.len()];
        let mut mass = 0.0;
        for &i in &order {
            kept[i] = true;
            mass += self.probs[i];
            if mass >= top_p {
                break;
            }
        }
        let ln_mass = mass.ln();
        let probs = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if kept[i] { p / mass } else { 0.0 })
            .collect();
        let log_probs = self
            .log_probs
            .iter()
            .enumerate()
            .map(|(i, &lp)| {
                if kept[i] {
                    lp - ln_mass
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Self { probs, log_probs }
    }

    /// Draws a token by inverse-CDF walk in token-id order.
    pub fn sample(&self, rng: &mut impl Rng) -> TokenId {
        let u: f64 = rng.random::<f64>();
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            cum += p;
            if u < cum {
                return i;
            }
        }
        last_positive
    }

    /// Shannon entropy in nats, with 0 log 0 = 0.
    pub fn entropy_nats(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Rolling context id over the last K tokens, base-`vocab_size`.
#[derive(Debug, Clone, Copy)]
pub struct ContextState {
    id: usize,
    stride: usize,
    vocab_size: usize,
}

impl ContextState {
    pub fn push(&mut self, token: TokenId) {
        self.id = (self.id % self.stride) * self.vocab_size + token;
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

/// Context-indexed logit parameters of the autoregressive policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    vocab_size: usize,
    vocab_hash: String,
    context_order: usize,
    temperature: f64,
    pad_token: TokenId,
    logits: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    vocab_size: usize,
    vocab_hash: String,
    context_order: usize,
    temperature: f64,
    pad_token: TokenId,
    logit_count: usize,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PLRLCKPT";
const CHECKPOINT_VERSION: u32 = 1;

impl PolicyTable {
    /// Zero-initialized table (uniform policy over every context).
    pub fn new(
        vocab_size: usize,
        context_order: usize,
        temperature: f64,
        pad_token: TokenId,
        vocab_hash: impl Into<String>,
    ) -> Result<Self> {
        if context_order == 0 {
            return Err(CoreError::Config("context_order must be >= 1".into()));
        }
        if pad_token >= vocab_size {
            return Err(CoreError::UnknownToken {
                id: pad_token,
                vocab_size,
            });
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(CoreError::Config("temperature must be positive".into()));
        }
        let context_count = vocab_size
            .checked_pow(context_order as u32)
            .ok_or_else(|| CoreError::Config("context table too large".into()))?;
        let len = context_count
            .checked_mul(vocab_size)
            .ok_or_else(|| CoreError::Config("context table too large".into()))?;
        Ok(Self {
            vocab_size,
            vocab_hash: vocab_hash.into(),
            context_order,
            temperature,
            pad_token,
            logits: vec![0.0; len],
        })
    }

    /// Standard-vocabulary table padded with the reserved begin token.
    pub fn for_vocab(vocab: &Vocab, context_order: usize, temperature: f64) -> Result<Self> {
        Self::new(
            vocab.size(),
            context_order,
            temperature,
            BOS,
            vocab.manifest_hash(),
        )
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn context_count(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: f64) {
        assert!(temperature > 0.0);
        self.temperature = temperature;
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn logit_row(&self, context_id: usize) -> &[f64] {
        &self.logits[context_id * self.vocab_size..(context_id + 1) * self.vocab_size]
    }

    pub fn logit_row_mut(&mut self, context_id: usize) -> &mut [f64] {
        &mut self.logits[context_id * self.vocab_size..(context_id + 1) * self.vocab_size]
    }

    fn check_token(&self, t: TokenId) -> Result<()> {
        if t >= self.vocab_size {
            return Err(CoreError::UnknownToken {
                id: t,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// Context state for the empty prefix: K copies of the pad token.
    pub fn context_start(&self) -> ContextState {
        let stride = self.vocab_size.pow(self.context_order as u32 - 1);
        let mut state = ContextState {
            id: 0,
            stride,
            vocab_size: self.vocab_size,
        };
        for _ in 0..self.context_order {
            state.push(self.pad_token);
        }
        state
    }

    /// Context state after rolling an entire prefix through.
    pub fn context_after(&self, prefix: &[TokenId]) -> Result<ContextState> {
        let mut state = self.context_start();
        for &t in prefix {
            self.check_token(t)?;
            state.push(t);
        }
        Ok(state)
    }

    /// Distribution at a context, `softmax(logits[ctx] / temperature)`.
    pub fn distribution_at(&self, state: &ContextState) -> TokenDistribution {
        TokenDistribution::from_row(self.logit_row(state.id()), self.temperature)
    }

    /// Distribution at a temperature other than the table's own.
    pub fn distribution_at_temperature(
        &self,
        state: &ContextState,
        temperature: f64,
    ) -> TokenDistribution {
        TokenDistribution::from_row(self.logit_row(state.id()), temperature)
    }

    /// Probability vector conditioned on the last K tokens of `context`.
    pub fn token_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        let state = self.context_after(context)?;
        Ok(self.distribution_at(&state))
    }

    /// `log pi(token | context)` through the canonical distribution path.
    pub fn log_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        self.check_token(token)?;
        Ok(self.token_distribution(context)?.log_probs[token])
    }

    /// Analytic gradient of `log pi(token | context)` with respect to the
    /// context's logit row; zero elsewhere.
    pub fn grad_log_prob(&self, context: &[TokenId], token: TokenId) -> Result<(usize, Vec<f64>)> {
        self.check_token(token)?;
        let state = self.context_after(context)?;
        let dist = self.distribution_at(&state);
        let mut grad: Vec<f64> = dist.probs.iter().map(|&p| -p / self.temperature).collect();
        grad[token] += 1.0 / self.temperature;
        Ok((state.id(), grad))
    }

    /// Samples until a stop token is emitted (included in the output) or
    /// `max_len` tokens have been drawn. Deterministic given the rng state.
    pub fn sample_sequence(
        &self,
        prefix: &[TokenId],
        stop: &[TokenId],
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Result<SampledSequence> {
        self.sample_sequence_with(SamplingParams::default(), prefix, stop, max_len, rng)
    }

    /// As [`sample_sequence`](Self::sample_sequence) with explicit sampling
    /// parameters (evaluation uses a lower temperature and nucleus cutoff).
    pub fn sample_sequence_with(
        &self,
        params: SamplingParams,
        prefix: &[TokenId],
        stop: &[TokenId],
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Result<SampledSequence> {
        let mut state = self.context_after(prefix)?;
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        let mut hit_stop = false;
        for _ in 0..max_len {
            let base = self.distribution_at_temperature(&state, params.temperature);
            let dist = if params.top_p < 1.0 {
                base.truncate_top_p(params.top_p)
            } else {
                base
            };
            let t = dist.sample(rng);
            tokens.push(t);
            log_probs.push(dist.log_probs[t]);
            state.push(t);
            if stop.contains(&t) {
                hit_stop = true;
                break;
            }
        }
        Ok(SampledSequence {
            tokens,
            log_probs,
            hit_stop,
        })
    }

    /// Mean entropy (nats) over every context row; the summary statistic
    /// logged as "policy entropy" when no visit weighting is wanted.
    pub fn mean_entropy_nats(&self) -> f64 {
        let n = self.context_count();
        (0..n)
            .map(|c| {
                TokenDistribution::from_row(self.logit_row(c), self.temperature).entropy_nats()
            })
            .sum::<f64>()
            / n as f64
    }

    /// Writes a checkpoint: magic, version, JSON header, raw little-endian
    /// logits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            vocab_size: self.vocab_size,
            vocab_hash: self.vocab_hash.clone(),
            context_order: self.context_order,
            temperature: self.temperature,
            pad_token: self.pad_token,
            logit_count: self.logits.len(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for l in &self.logits {
            w.write_all(&l.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a checkpoint, rejecting vocab-hash mismatches.
    pub fn load(path: &Path, expected_vocab_hash: &str) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CoreError::BadCheckpoint("bad magic".into()));
        }
        let mut version = [0u8; 4];
        r.read_exact(&mut version)?;
        if u32::from_le_bytes(version) != CHECKPOINT_VERSION {
            return Err(CoreError::BadCheckpoint(format!(
                "unsupported version {}",
                u32::from_le_bytes(version)
            )));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
        if header.vocab_hash != expected_vocab_hash {
            return Err(CoreError::VocabHashMismatch {
                found: header.vocab_hash,
                expected: expected_vocab_hash.to_string(),
            });
        }
        let mut logits = vec![0.0f64; header.logit_count];
        let mut buf = [0u8; 8];
        for l in logits.iter_mut() {
            r.read_exact(&mut buf)?;
            *l = f64::from_le_bytes(buf);
        }
        Ok(Self {
            vocab_size: header.vocab_size,
            vocab_hash: header.vocab_hash,
            context_order: header.context_order,
            temperature: header.temperature,
            pad_token: header.pad_token,
            logits,
        })
    }
}

/// Output of [`PolicyTable::sample_sequence`]: tokens plus the realized
/// per-token log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub tokens: Vec<TokenId>,
    pub log_probs: Vec<f64>,
    pub hit_stop: bool,
}

/// Role tag for frozen copies of the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotRole {
    Old,
    Reference,
}

/// Immutable frozen copy of a policy table.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    table: PolicyTable,
}

impl PolicySnapshot {
    pub fn freeze(table: &PolicyTable, role: SnapshotRole) -> Self {
        Self {
            role,
            table: table.clone(),
        }
    }

    /// Re-freezes in place, reusing the existing allocation.
    pub fn refreeze(&mut self, table: &PolicyTable) {
        self.table.clone_from(table);
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn table(&self) -> &PolicyTable {
        &self.table
    }
}
