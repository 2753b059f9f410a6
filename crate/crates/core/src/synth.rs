//! Synthetic score generation with analytically known error behaviour,
//! plus brute-force oracles used to validate the metric implementations.
//!
//! Scores are Gaussian per label per subgroup, drawn with Box-Muller over
//! a ChaCha8 stream seeded from the spec, so generation is reproducible
//! byte-for-byte from the seed. The oracles share no code with the
//! `metrics` module.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::det::normal_cdf;
use crate::error::AuditError;
use crate::metrics::{DcfConfig, OperatingPoint};
use crate::trial::{
    Label, MetadataSet, Provenance, SpeakerIdRule, SpeakerMetadata, SubgroupKey, TrialRecord,
    TrialSet,
};

/// Gaussian score model for one synthetic subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupScoreSpec {
    pub key: SubgroupKey,
    pub target_mean: f64,
    pub target_sd: f64,
    pub nontarget_mean: f64,
    pub nontarget_sd: f64,
    pub n_target: u64,
    pub n_nontarget: u64,
    pub seed: u64,
}

impl SubgroupScoreSpec {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.target_sd <= 0.0 || self.nontarget_sd <= 0.0 {
            return Err(AuditError::InvalidConfig(
                "score standard deviations must be positive".to_string(),
            ));
        }
        if self.n_target == 0 || self.n_nontarget == 0 {
            return Err(AuditError::InvalidConfig(
                "trial counts must be positive".to_string(),
            ));
        }
        if self.key.is_unknown() {
            return Err(AuditError::InvalidConfig(
                "synthetic subgroup key must be known".to_string(),
            ));
        }
        Ok(())
    }
}

struct GaussianSampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSampler {
    fn new(seed: u64) -> Self {
        GaussianSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        // 53 random bits mapped into (0, 1].
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw via Box-Muller.
    fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }
}

/// Number of synthetic enrollment speakers per subgroup; above the default
/// low-support floor so synthetic audits are not flagged spuriously.
pub const SPEAKERS_PER_SUBGROUP: u64 = 10;

/// Generates a trial set plus matching metadata from the specs. Speaker
/// and utterance ids follow the `speaker/clip` layout so the default
/// parsing and subgroup-assignment path runs unmodified; the returned set
/// already has subgroups assigned over the specs' attribute schema.
pub fn generate(specs: &[SubgroupScoreSpec]) -> Result<(TrialSet, MetadataSet), AuditError> {
    if specs.is_empty() {
        return Err(AuditError::InvalidConfig("no subgroup specs".to_string()));
    }
    for spec in specs {
        spec.validate()?;
    }
    let attributes: Vec<String> = match &specs[0].key {
        SubgroupKey::Known(pairs) => pairs.iter().map(|(name, _)| name.clone()).collect(),
        SubgroupKey::Unknown => unreachable!(),
    };
    for spec in specs {
        let SubgroupKey::Known(pairs) = &spec.key else {
            unreachable!()
        };
        let names: Vec<&String> = pairs.iter().map(|(name, _)| name).collect();
        if names.iter().map(|n| n.as_str()).ne(attributes.iter().map(String::as_str)) {
            return Err(AuditError::InvalidConfig(format!(
                "subgroup `{}` does not match the attribute schema [{}]",
                spec.key,
                attributes.join(",")
            )));
        }
    }

    let mut metadata = MetadataSet::new(attributes.clone());
    let mut records = Vec::new();
    for (sg_idx, spec) in specs.iter().enumerate() {
        let SubgroupKey::Known(pairs) = &spec.key else {
            unreachable!()
        };
        let speakers: Vec<String> = (0..SPEAKERS_PER_SUBGROUP)
            .map(|i| format!("sg{sg_idx:03}spk{i:03}"))
            .collect();
        for speaker in &speakers {
            metadata.insert(SpeakerMetadata {
                speaker_id: speaker.clone(),
                attributes: pairs.iter().cloned().collect(),
            })?;
        }
        let n_speakers = speakers.len();
        let mut sampler = GaussianSampler::new(spec.seed);
        for i in 0..spec.n_target {
            let speaker = &speakers[(i as usize) % n_speakers];
            let clip = i as usize / n_speakers;
            records.push(TrialRecord {
                label: Label::Target,
                enroll: format!("{speaker}/t{clip:06}a.wav"),
                test: format!("{speaker}/t{clip:06}b.wav"),
                score: sampler.normal(spec.target_mean, spec.target_sd),
            });
        }
        for i in 0..spec.n_nontarget {
            let enroll_speaker = &speakers[(i as usize) % n_speakers];
            let test_speaker = &speakers[(i as usize + 1) % n_speakers];
            let clip = i as usize / n_speakers;
            records.push(TrialRecord {
                label: Label::Nontarget,
                enroll: format!("{enroll_speaker}/n{clip:06}a.wav"),
                test: format!("{test_speaker}/n{clip:06}b.wav"),
                score: sampler.normal(spec.nontarget_mean, spec.nontarget_sd),
            });
        }
    }

    let mut set = TrialSet::from_records(
        records,
        Provenance {
            sources: vec!["synthetic".into()],
            sha256: String::new(),
        },
    );
    set.assign_subgroups(&metadata, &attributes, &SpeakerIdRule::PathPrefix)?;
    Ok((set, metadata))
}

/// Closed-form EER for an equal-sd Gaussian spec:
/// `Phi(-(target_mean - nontarget_mean) / (2 * sd))`.
pub fn analytic_eer(spec: &SubgroupScoreSpec) -> Result<f64, AuditError> {
    spec.validate()?;
    if (spec.target_sd - spec.nontarget_sd).abs() > 1e-12 {
        return Err(AuditError::Eval(
            "analytic EER requires equal standard deviations; use the brute-force oracle"
                .to_string(),
        ));
    }
    Ok(normal_cdf(
        -(spec.target_mean - spec.nontarget_mean) / (2.0 * spec.target_sd),
    ))
}

/// Independent min-DCF oracle: exhaustive O(n^2) counting at every
/// distinct score and both virtual endpoints, with no shared code with
/// the metrics module. Ties break toward the smallest threshold.
pub fn brute_force_min_dcf(
    targets: &[f64],
    nontargets: &[f64],
    config: &DcfConfig,
) -> Result<OperatingPoint, AuditError> {
    if targets.is_empty() {
        return Err(AuditError::EmptyScoreSide { side: "target" });
    }
    if nontargets.is_empty() {
        return Err(AuditError::EmptyScoreSide { side: "nontarget" });
    }
    if targets.len() + nontargets.len() > 10_000 {
        return Err(AuditError::Eval(
            "brute-force oracle is limited to 10,000 trials".to_string(),
        ));
    }
    let mut best: Option<OperatingPoint> = None;
    for threshold in candidate_thresholds(targets, nontargets) {
        let op = brute_force_operating_point(targets, nontargets, threshold, config);
        match &best {
            Some(b) if op.cost >= b.cost => {}
            _ => best = Some(op),
        }
    }
    Ok(best.unwrap())
}

/// Independent counting of FPR/FNR/cost at one threshold under the
/// accept-iff-score>=threshold rule.
pub fn brute_force_operating_point(
    targets: &[f64],
    nontargets: &[f64],
    threshold: f64,
    config: &DcfConfig,
) -> OperatingPoint {
    let mut false_positives = 0u64;
    for &s in nontargets {
        if s >= threshold {
            false_positives += 1;
        }
    }
    let mut false_negatives = 0u64;
    for &s in targets {
        if s < threshold {
            false_negatives += 1;
        }
    }
    let fpr = false_positives as f64 / nontargets.len() as f64;
    let fnr = false_negatives as f64 / targets.len() as f64;
    let cost = config.c_fn * config.p_target * fnr + config.c_fp * (1.0 - config.p_target) * fpr;
    OperatingPoint {
        threshold,
        fpr,
        fnr,
        cost,
    }
}

/// Independent EER oracle: scans the enumerated (FPR, FNR) sequence for
/// the sign change of FNR - FPR and linearly interpolates.
pub fn brute_force_eer(targets: &[f64], nontargets: &[f64]) -> Result<f64, AuditError> {
    if targets.is_empty() {
        return Err(AuditError::EmptyScoreSide { side: "target" });
    }
    if nontargets.is_empty() {
        return Err(AuditError::EmptyScoreSide { side: "nontarget" });
    }
    let config = DcfConfig::default();
    let mut prev: Option<(f64, f64)> = None;
    for threshold in candidate_thresholds(targets, nontargets) {
        let op = brute_force_operating_point(targets, nontargets, threshold, &config);
        let diff = op.fnr - op.fpr;
        if diff >= 0.0 {
            if diff == 0.0 {
                return Ok(op.fpr);
            }
            let (prev_fpr, prev_fnr) = prev.expect("first candidate has fnr 0, fpr 1");
            let prev_diff = prev_fnr - prev_fpr;
            if prev_diff == 0.0 {
                return Ok(prev_fpr);
            }
            let t = -prev_diff / (diff - prev_diff);
            return Ok((1.0 - t) * prev_fpr + t * op.fpr);
        }
        prev = Some((op.fpr, op.fnr));
    }
    unreachable!("the +inf endpoint has fnr 1, fpr 0")
}

fn candidate_thresholds(targets: &[f64], nontargets: &[f64]) -> Vec<f64> {
    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    thresholds
}
