//! Composite reward: analytic plan reward, outcome reward, structure bonus,
//! and length shaping.
//!
//! Per response (i, k) of a rollout group the total is the exact linear
//! composition
//!
//! ```text
//! total = analytic_i + outcome_weight * outcome_{i,k}
//!       + structure_{i,k} + length_{i,k}
//! ```
//!
//! where `analytic = softmax` over the m per-plan empirical accuracies
//! (every response sharing plan i receives entry i), `outcome` is the 0/1
//! verification indicator, `structure` pays a fixed bonus for grammatical
//! output, and `length` decays exponentially with distance from the
//! shortest correct response length in the group.

use crate::error::{CoreError, Result};
use crate::rollout::RolloutGroup;
use crate::tagged::TaggedResponse;
use crate::task::{verify, Task};
use crate::vocab::Vocab;
use serde::{Deserialize, Serialize};

/// Reward weights and the length-normalization constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Scale of the length reward.
    pub alpha: f64,
    /// Weight of the outcome indicator in the total.
    pub outcome_weight: f64,
    /// Bonus paid for strictly grammatical output.
    pub structure_bonus: f64,
    /// Length-normalization constant; must exceed any achievable reference
    /// length. This is an independent knob, not the rollout length cap.
    pub t_max: usize,
    /// Apply the softmax to per-plan accuracies (raw accuracies otherwise).
    pub softmax_enabled: bool,
    /// Ablation switch: zero the analytic component everywhere.
    pub analytic_enabled: bool,
    /// Ablation switch: zero structure and length components everywhere.
    pub format_enabled: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            outcome_weight: 1.0,
            structure_bonus: 0.2,
            // One past the default rollout cap (max response length 74), so
            // exp(-|len-T|/(t_max-T)) stays well defined for any reference.
            t_max: 75,
            softmax_enabled: true,
            analytic_enabled: true,
            format_enabled: true,
        }
    }
}

/// Per-response reward components and their exact sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub analytic: f64,
    pub outcome: f64,
    pub structure: f64,
    pub length: f64,
    pub total: f64,
}

/// Per-plan empirical accuracy: entry i is `(1/z) sum_k 1[verify(c_{i,k})]`.
pub fn plan_accuracies(group: &RolloutGroup, vocab: &Vocab) -> Vec<f64> {
    (0..group.m)
        .map(|i| {
            let correct = (0..group.z)
                .filter(|&k| verify(&group.task, &group.response(i, k).parsed, vocab))
                .count();
            correct as f64 / group.z as f64
        })
        .collect()
}

/// Softmax over the m per-plan accuracies; exponentially amplifies gaps so
/// high-scoring plans stand out.
pub fn analytic_reward(accuracies: &[f64]) -> Vec<f64> {
    let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = accuracies.iter().map(|a| (a - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// The 0/1 verification indicator.
pub fn outcome_reward(task: &Task, response: &TaggedResponse, vocab: &Vocab) -> f64 {
    if verify(task, response, vocab) {
        1.0
    } else {
        0.0
    }
}

/// Fixed bonus iff the response strictly follows the tag template.
pub fn structure_reward(response: &TaggedResponse, bonus: f64) -> f64 {
    if response.well_formed {
        bonus
    } else {
        0.0
    }
}

/// Shortest correct response length in the group; `None` when nothing
/// verifies.
pub fn reference_length(group: &RolloutGroup, vocab: &Vocab) -> Option<usize> {
    group
        .responses
        .iter()
        .filter(|r| verify(&group.task, &r.parsed, vocab))
        .map(|r| r.response_len())
        .min()
}

/// Length reward `alpha * exp(-|len - T| / (t_max - T))`. Zero for every
/// response when the group has no correct response (T absent).
pub fn length_reward(
    response_len: usize,
    reference: Option<usize>,
    config: &RewardConfig,
) -> Result<f64> {
    let Some(t) = reference else {
        return Ok(0.0);
    };
    if config.t_max <= t {
        return Err(CoreError::Config(format!(
            "t_max ({}) must exceed the reference length ({t})",
            config.t_max
        )));
    }
    let gap = response_len.abs_diff(t) as f64;
    Ok(config.alpha * (-gap / (config.t_max - t) as f64).exp())
}

/// Composes the full m x z breakdown matrix in (plan, continuation) order.
pub fn total_reward(
    group: &RolloutGroup,
    config: &RewardConfig,
    vocab: &Vocab,
) -> Result<Vec<RewardBreakdown>> {
    let accuracies = plan_accuracies(group, vocab);
    let analytic = if !config.analytic_enabled {
        vec![0.0; group.m]
    } else if config.softmax_enabled {
        analytic_reward(&accuracies)
    } else {
        accuracies.clone()
    };
    let reference = reference_length(group, vocab);

    let mut out = Vec::with_capacity(group.m * group.z);
    for (i, &analytic_i) in analytic.iter().enumerate() {
        for k in 0..group.z {
            let r = group.response(i, k);
            let outcome = outcome_reward(&group.task, &r.parsed, vocab);
            let structure = if config.format_enabled {
                structure_reward(&r.parsed, config.structure_bonus)
            } else {
                0.0
            };
            let length = if config.format_enabled {
                length_reward(r.response_len(), reference, config)?
            } else {
                0.0
            };
            out.push(RewardBreakdown {
                analytic: analytic_i,
                outcome,
                structure,
                length,
                total: analytic_i + config.outcome_weight * outcome + structure + length,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{PlanSample, ResponseSample};
    use crate::task::{DomainConfig, Op};
    use crate::vocab::{MOD, PLUS};

    /// Hand-built group: per plan i, a list of (answer, well_formed, pad)
    /// where pad inflates the response length.
    fn synthetic_group(task: Task, specs: &[Vec<(Option<u64>, bool, usize)>]) -> RolloutGroup {
        let vocab = Vocab::standard();
        let m = specs.len();
        let z = specs[0].len();
        let plans: Vec<PlanSample> = (0..m)
            .map(|_| PlanSample {
                span: vec![PLUS, MOD],
                scored: vec![PLUS, MOD, crate::vocab::PLAN_CLOSE],
                log_probs: vec![-0.1, -0.1, -0.1],
            })
            .collect();
        let mut responses = Vec::new();
        for (i, plan_specs) in specs.iter().enumerate() {
            for (k, &(answer, well_formed, pad)) in plan_specs.iter().enumerate() {
                let parsed = if well_formed {
                    let think: Vec<usize> = vec![0; pad];
                    let ans = answer.map(|a| vocab.encode_digits(a)).unwrap_or_default();
                    TaggedResponse::assemble(&plans[i].span, &think, &ans)
                } else {
                    // Missing closing tag: malformed by construction.
                    let mut raw = vec![crate::vocab::PLAN_OPEN];
                    raw.extend(vec![0; pad]);
                    crate::tagged::parse_tagged(&raw, &vocab)
                };
                let tokens = parsed
                    .raw
                    .get(plans[i].span.len() + 2..)
                    .unwrap_or_default()
                    .to_vec();
                let n = tokens.len();
                responses.push(ResponseSample {
                    plan_index: i,
                    cont_index: k,
                    tokens,
                    log_probs: vec![-0.2; n],
                    parsed,
                });
            }
        }
        RolloutGroup {
            task,
            plans,
            responses,
            m,
            z,
        }
    }

    fn task_truth_7() -> Task {
        Task::from_expression(&[3, 4], &[Op::Add], &DomainConfig::default())
    }

    #[test]
    fn accuracies_count_correct_continuations() {
        let task = task_truth_7();
        let g = synthetic_group(
            task,
            &[
                vec![(Some(7), true, 0), (Some(7), true, 0), (Some(7), true, 0)],
                vec![(Some(7), true, 0), (Some(3), true, 0), (None, false, 0)],
                vec![(Some(1), true, 0), (None, false, 0), (None, false, 0)],
            ],
        );
        let acc = plan_accuracies(&g, &Vocab::standard());
        assert_eq!(acc, vec![1.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn all_malformed_gives_zero_accuracies() {
        let task = task_truth_7();
        let g = synthetic_group(
            task,
            &[vec![(None, false, 0); 3], vec![(None, false, 0); 3]],
        );
        assert_eq!(plan_accuracies(&g, &Vocab::standard()), vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_symmetry_and_exact_two_point_values() {
        let r = analytic_reward(&[1.0, 1.0, 1.0]);
        for &x in &r {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        // Independent exponential-sum computation for (1, 0).
        let r = analytic_reward(&[1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((r[0] - e / (e + 1.0)).abs() < 1e-9);
        assert!((r[1] - 1.0 / (e + 1.0)).abs() < 1e-9);
        assert!((r[0] - 0.731059).abs() < 1e-6);
        assert!((r[1] - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn softmax_three_point_values_match_exponential_sums() {
        let acc = [1.0, 1.0 / 3.0, 0.0];
        let r = analytic_reward(&acc);
        let z: f64 = acc.iter().map(|a| a.exp()).sum();
        for (ri, ai) in r.iter().zip(&acc) {
            assert!((ri - ai.exp() / z).abs() < 1e-12);
        }
        // Entry for accuracy 1 is the maximum; sums to 1.
        assert!(r[0] > r[1] && r[0] > r[2]);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outcome_and_structure_rewards() {
        let v = Vocab::standard();
        let task = task_truth_7();
        let good = TaggedResponse::assemble(&[PLUS, MOD], &[7], &[7]);
        let wrong = TaggedResponse::assemble(&[PLUS, MOD], &[7], &[3]);
        assert_eq!(outcome_reward(&task, &good, &v), 1.0);
        assert_eq!(outcome_reward(&task, &wrong, &v), 0.0);
        assert_eq!(structure_reward(&good, 0.2), 0.2);
        let mut truncated = good.raw.clone();
        truncated.pop();
        let malformed = crate::tagged::parse_tagged(&truncated, &v);
        assert_eq!(structure_reward(&malformed, 0.2), 0.0);
        assert_eq!(outcome_reward(&task, &malformed, &v), 0.0);
    }

    #[test]
    fn reference_length_is_min_over_correct() {
        let task = task_truth_7();
        // Lengths via think padding: correct responses at pads 1 and 6,
        // incorrect in between.
        let g = synthetic_group(
            task,
            &[
                vec![(Some(7), true, 1)],
                vec![(Some(3), true, 3)],
                vec![(Some(7), true, 6)],
            ],
        );
        let v = Vocab::standard();
        let lens: Vec<usize> = g.responses.iter().map(|r| r.response_len()).collect();
        assert_eq!(reference_length(&g, &v), Some(lens[0]));
        assert!(lens[2] > lens[0]);
        // No correct responses: absent.
        let g = synthetic_group(task_truth_7(), &[vec![(Some(3), true, 0)]]);
        assert_eq!(reference_length(&g, &v), None);
    }

    #[test]
    fn length_reward_peak_and_t_max_point() {
        let cfg = RewardConfig {
            alpha: 0.5,
            t_max: 30,
            ..Default::default()
        };
        // At the reference length: exactly alpha.
        assert_eq!(length_reward(10, Some(10), &cfg).unwrap(), 0.5);
        // At t_max: alpha / e.
        let at_tmax = length_reward(30, Some(10), &cfg).unwrap();
        assert!((at_tmax - 0.5 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((at_tmax - 0.5 * 0.367879).abs() < 1e-6);
        // Absent reference: zero.
        assert_eq!(length_reward(10, None, &cfg).unwrap(), 0.0);
        // Strictly decreasing in |len - T|.
        let mut prev = length_reward(10, Some(10), &cfg).unwrap();
        for len in 11..25 {
            let cur = length_reward(len, Some(10), &cfg).unwrap();
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn length_reward_rejects_bad_t_max() {
        let cfg = RewardConfig {
            t_max: 10,
            ..Default::default()
        };
        assert!(length_reward(5, Some(10), &cfg).is_err());
        assert!(length_reward(5, Some(12), &cfg).is_err());
    }

    #[test]
    fn total_composes_components_exactly() {
        let task = task_truth_7();
        let g = synthetic_group(task, &[vec![(Some(7), true, 0)], vec![(Some(3), true, 0)]]);
        let v = Vocab::standard();
        let cfg = RewardConfig {
            alpha: 0.0,
            outcome_weight: 1.0,
            ..Default::default()
        };
        let b = total_reward(&g, &cfg, &v).unwrap();
        let e = std::f64::consts::E;
        // Correct response: softmax(1,0) + outcome + structure.
        assert!((b[0].total - (e / (e + 1.0) + 1.0 + 0.2)).abs() < 1e-9);
        assert!((b[1].total - (1.0 / (e + 1.0) + 0.0 + 0.2)).abs() < 1e-9);
        for x in &b {
            let composed = x.analytic + cfg.outcome_weight * x.outcome + x.structure + x.length;
            assert_eq!(x.total, composed, "total is the exact composition");
        }
    }

    #[test]
    fn zero_weights_all_malformed_gives_uniform_analytic_only() {
        let task = task_truth_7();
        let g = synthetic_group(
            task,
            &[vec![(None, false, 0); 2], vec![(None, false, 1); 2]],
        );
        let cfg = RewardConfig {
            alpha: 0.0,
            outcome_weight: 0.0,
            ..Default::default()
        };
        let b = total_reward(&g, &cfg, &Vocab::standard()).unwrap();
        for x in &b {
            assert!((x.total - 0.5).abs() < 1e-12, "uniform softmax over m=2");
            assert_eq!(x.outcome, 0.0);
            assert_eq!(x.structure, 0.0);
            assert_eq!(x.length, 0.0);
        }
    }

    #[test]
    fn doubling_outcome_weight_doubles_outcome_contribution() {
        let task = task_truth_7();
        let g = synthetic_group(
            task,
            &[
                vec![(Some(7), true, 0), (Some(2), true, 1)],
                vec![(None, false, 2), (Some(7), true, 0)],
            ],
        );
        let v = Vocab::standard();
        let b1 = total_reward(
            &g,
            &RewardConfig {
                outcome_weight: 1.0,
                ..Default::default()
            },
            &v,
        )
        .unwrap();
        let b2 = total_reward(
            &g,
            &RewardConfig {
                outcome_weight: 2.0,
                ..Default::default()
            },
            &v,
        )
        .unwrap();
        for (x1, x2) in b1.iter().zip(&b2) {
            assert!((x2.total - x1.total - x1.outcome).abs() < 1e-12);
        }
    }

    #[test]
    fn responses_sharing_a_plan_carry_identical_analytic() {
        let task = task_truth_7();
        let g = synthetic_group(
            task,
            &[
                vec![(Some(7), true, 0), (None, false, 0), (Some(3), true, 0)],
                vec![(Some(7), true, 0), (Some(7), true, 0), (None, false, 0)],
            ],
        );
        let b = total_reward(&g, &RewardConfig::default(), &Vocab::standard()).unwrap();
        for i in 0..2 {
            for k in 1..3 {
                assert_eq!(b[i * 3 + k].analytic, b[i * 3].analytic);
            }
        }
    }

    #[test]
    fn ablation_flags_zero_only_their_components() {
        let task = task_truth_7();
        let g = synthetic_group(
            task,
            &[
                vec![(Some(7), true, 0), (Some(1), true, 2)],
                vec![(None, false, 1), (Some(7), true, 3)],
            ],
        );
        let v = Vocab::standard();
        let full = total_reward(&g, &RewardConfig::default(), &v).unwrap();
        let no_analytic = total_reward(
            &g,
            &RewardConfig {
                analytic_enabled: false,
                ..Default::default()
            },
            &v,
        )
        .unwrap();
        let no_format = total_reward(
            &g,
            &RewardConfig {
                format_enabled: false,
                ..Default::default()
            },
            &v,
        )
        .unwrap();
        for ((f, na), nf) in full.iter().zip(&no_analytic).zip(&no_format) {
            assert_eq!(na.analytic, 0.0);
            assert_eq!(na.outcome, f.outcome);
            assert_eq!(na.structure, f.structure);
            assert_eq!(na.length, f.length);
            assert_eq!(nf.structure, 0.0);
            assert_eq!(nf.length, 0.0);
            assert_eq!(nf.analytic, f.analytic);
            assert_eq!(nf.outcome, f.outcome);
        }
    }
}
