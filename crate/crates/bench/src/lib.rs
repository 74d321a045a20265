//! Shared fixtures for the criterion benchmarks.

use planrl_core::cold_start::{
    build_dataset, sft_train, ColdStartRecord, DifficultyMix, SftConfig,
};
use planrl_core::task::DomainConfig;
use planrl_core::{PolicyTable, Vocab};

/// A cold-started policy plus its dataset, shared across benchmarks.
pub fn trained_fixture() -> (PolicyTable, Vec<ColdStartRecord>, Vocab, DomainConfig) {
    let vocab = Vocab::standard();
    let domain = DomainConfig::default();
    let records = build_dataset(7, 200, &DifficultyMix::default(), &domain, &vocab).unwrap();
    let mut policy = PolicyTable::for_vocab(&vocab, 3, 1.0).unwrap();
    sft_train(
        &mut policy,
        &records,
        &SftConfig {
            epochs: 20,
            learning_rate: 0.5,
            batch_size: Some(32),
            momentum: 0.9,
            ..Default::default()
        },
    )
    .unwrap();
    (policy, records, vocab, domain)
}
