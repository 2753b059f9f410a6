//! Benchmark-only crate; see the `benches/` directory.

use svaudit_core::synth::SubgroupScoreSpec;
use svaudit_core::{MetadataSet, SubgroupKey, TrialSet};

/// Synthetic Gaussian trial set shared by the benchmarks.
pub fn benchmark_set(n_groups: usize, trials_per_side: u64) -> (TrialSet, MetadataSet) {
    let specs: Vec<SubgroupScoreSpec> = (0..n_groups)
        .map(|i| SubgroupScoreSpec {
            key: SubgroupKey::known(vec![("group".to_string(), format!("g{i}"))]),
            target_mean: 1.5 + 0.2 * i as f64,
            target_sd: 1.0,
            nontarget_mean: 0.0,
            nontarget_sd: 1.0,
            n_target: trials_per_side,
            n_nontarget: trials_per_side,
            seed: 1000 + i as u64,
        })
        .collect();
    svaudit_core::generate(&specs).unwrap()
}
