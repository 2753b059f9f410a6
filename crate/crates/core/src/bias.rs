//! Subgroup-level bias measures: subgroup bias and threshold bias cost
//! ratios, FPR/FNR ratios at the shared operating threshold, equalized-odds
//! gaps, and cross-run comparison.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::AuditError;
use crate::metrics::{DcfConfig, ErrorCurve, OperatingPoint};
use crate::trial::{Label, SubgroupKey, TrialSet};

/// A ratio that may be undefined when its denominator is zero. Undefined
/// values serialize as explicit sentinels, never as infinities or NaN.
#[derive(Debug, Clone, PartialEq)]
pub enum Ratio {
    Defined(f64),
    Undefined(String),
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(*v),
            Ratio::Undefined(_) => None,
        }
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ratio::Defined(v) => write!(f, "{v:.4}"),
            Ratio::Undefined(_) => f.write_str("undefined"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Ratio::Defined(v) => serializer.serialize_f64(*v),
            Ratio::Undefined(reason) => serializer.serialize_str(&format!("undefined ({reason})")),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RatioVisitor;
        impl Visitor<'_> for RatioVisitor {
            type Value = Ratio;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or an `undefined (...)` string")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Ratio, E> {
                Ok(Ratio::Defined(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Ratio, E> {
                Ok(Ratio::Defined(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Ratio, E> {
                Ok(Ratio::Defined(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Ratio, E> {
                let reason = v
                    .strip_prefix("undefined (")
                    .and_then(|s| s.strip_suffix(')'))
                    .unwrap_or(v);
                Ok(Ratio::Undefined(reason.to_string()))
            }
        }
        deserializer.deserialize_any(RatioVisitor)
    }
}

/// Ratio of a subgroup's cost at the overall operating threshold to the
/// overall cost at that threshold. Greater than 1 means the model performs
/// worse than average for the subgroup.
pub fn subgroup_bias(sg_cost: f64, overall_cost: f64) -> Ratio {
    if overall_cost == 0.0 {
        Ratio::Undefined("perfect overall system".to_string())
    } else {
        Ratio::Defined(sg_cost / overall_cost)
    }
}

/// Ratio of a subgroup's cost at the overall minimum threshold to its cost
/// at its own minimum threshold. Greater than 1 means the subgroup would
/// benefit from being tuned to its own threshold.
pub fn threshold_bias(cost_at_overall_min: f64, cost_at_sg_min: f64) -> Ratio {
    if cost_at_sg_min == 0.0 {
        Ratio::Undefined("subgroup minimum cost is zero".to_string())
    } else {
        Ratio::Defined(cost_at_overall_min / cost_at_sg_min)
    }
}

/// Componentwise (FPR, FNR) ratios of a subgroup against the overall
/// operating point at the shared threshold.
pub fn error_rate_ratios(sg: &OperatingPoint, overall: &OperatingPoint) -> (Ratio, Ratio) {
    let fpr = if overall.fpr == 0.0 {
        Ratio::Undefined("overall FPR is zero".to_string())
    } else {
        Ratio::Defined(sg.fpr / overall.fpr)
    };
    let fnr = if overall.fnr == 0.0 {
        Ratio::Undefined("overall FNR is zero".to_string())
    } else {
        Ratio::Defined(sg.fnr / overall.fnr)
    };
    (fpr, fnr)
}

/// Minimum support below which a subgroup's metrics are flagged as
/// statistically unreliable (but still reported).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportFloor {
    pub min_speakers: u64,
    pub min_trials_per_label: u64,
}

impl Default for SupportFloor {
    fn default() -> Self {
        SupportFloor {
            min_speakers: 5,
            min_trials_per_label: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub support_floor: SupportFloor,
    /// Tolerances for flagging the system unbiased at the operating
    /// threshold. Default 0 (strict equalized odds).
    pub eo_tolerance_fpr: f64,
    pub eo_tolerance_fnr: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            support_floor: SupportFloor::default(),
            eo_tolerance_fpr: 0.0,
            eo_tolerance_fnr: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub key: SubgroupKey,
    /// Canonical rendering, e.g. `ireland_f`.
    pub label: String,
    /// Unique enrollment-side speakers.
    pub n_speakers: u64,
    pub n_target: u64,
    pub n_nontarget: u64,
    pub op_at_overall: OperatingPoint,
    pub op_at_own_min: OperatingPoint,
    pub subgroup_bias: Ratio,
    pub threshold_bias: Ratio,
    pub fpr_ratio: Ratio,
    pub fnr_ratio: Ratio,
    pub low_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSubgroup {
    pub label: String,
    pub n_trials: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportDiagnostics {
    pub total_trials: u64,
    pub audited_trials: u64,
    pub unknown_trials: u64,
    pub unknown_target_trials: u64,
    pub unknown_nontarget_trials: u64,
    pub excluded: Vec<ExcludedSubgroup>,
    pub warnings: Vec<String>,
    /// Records the subgroup rule so readers know which side defines it.
    pub subgroup_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizedOdds {
    pub max_fpr_gap: f64,
    pub max_fnr_gap: f64,
    pub tolerance_fpr: f64,
    pub tolerance_fnr: f64,
    pub unbiased: bool,
}

/// Full audit output: overall operating point plus one result per
/// non-empty, evaluable subgroup, sorted by subgroup bias ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub attributes: Vec<String>,
    pub config: DcfConfig,
    pub overall: OperatingPoint,
    pub overall_eer: f64,
    pub subgroups: Vec<SubgroupResult>,
    pub equalized_odds: EqualizedOdds,
    pub diagnostics: ReportDiagnostics,
}

impl BiasReport {
    /// Flat CSV, one row per subgroup.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "subgroup,n_speakers,n_target,n_nontarget,fpr,fnr,cdet_at_overall,cdet_at_own_min,subgroup_bias,threshold_bias,fpr_ratio,fnr_ratio,low_support\n",
        );
        for sg in &self.subgroups {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}\n",
                sg.label,
                sg.n_speakers,
                sg.n_target,
                sg.n_nontarget,
                sg.op_at_overall.fpr,
                sg.op_at_overall.fnr,
                sg.op_at_overall.cost,
                sg.op_at_own_min.cost,
                sg.subgroup_bias,
                sg.threshold_bias,
                sg.fpr_ratio,
                sg.fnr_ratio,
                sg.low_support
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, AuditError> {
        serde_json::from_str(text).map_err(|e| AuditError::Eval(format!("invalid report JSON: {e}")))
    }
}

struct SubgroupInput {
    key: SubgroupKey,
    targets: Vec<f64>,
    nontargets: Vec<f64>,
    n_speakers: u64,
}

/// Runs the full bias evaluation over an assigned trial set: overall
/// min-DCF calibration, per-subgroup operating points at the overall
/// threshold and at each subgroup's own minimum, and all ratios.
pub fn audit(
    trials: &TrialSet,
    config: &DcfConfig,
    options: &AuditOptions,
) -> Result<BiasReport, AuditError> {
    config.validate()?;
    let assignment = trials
        .subgroups
        .as_ref()
        .ok_or_else(|| AuditError::Eval("subgroups not assigned".to_string()))?;

    let mut overall_targets = Vec::new();
    let mut overall_nontargets = Vec::new();
    let mut groups: BTreeMap<SubgroupKey, SubgroupInput> = BTreeMap::new();
    let mut speaker_sets: BTreeMap<SubgroupKey, std::collections::BTreeSet<&str>> =
        BTreeMap::new();
    let mut unknown_targets = 0u64;
    let mut unknown_nontargets = 0u64;

    for ((record, key), speaker) in trials
        .records
        .iter()
        .zip(&assignment.keys)
        .zip(&assignment.enroll_speakers)
    {
        match record.label {
            Label::Target => overall_targets.push(record.score),
            Label::Nontarget => overall_nontargets.push(record.score),
        }
        if key.is_unknown() {
            match record.label {
                Label::Target => unknown_targets += 1,
                Label::Nontarget => unknown_nontargets += 1,
            }
            continue;
        }
        let entry = groups.entry(key.clone()).or_insert_with(|| SubgroupInput {
            key: key.clone(),
            targets: Vec::new(),
            nontargets: Vec::new(),
            n_speakers: 0,
        });
        match record.label {
            Label::Target => entry.targets.push(record.score),
            Label::Nontarget => entry.nontargets.push(record.score),
        }
        speaker_sets
            .entry(key.clone())
            .or_default()
            .insert(speaker.as_str());
    }
    for (key, speakers) in &speaker_sets {
        if let Some(group) = groups.get_mut(key) {
            group.n_speakers = speakers.len() as u64;
        }
    }

    let overall_curve = ErrorCurve::compute(&overall_targets, &overall_nontargets)?;
    let overall = overall_curve.min_dcf(config);
    let overall_eer = overall_curve.eer();

    // Per-subgroup work is independent; results are re-sorted afterwards,
    // so the parallel evaluation order never shows in the output.
    let inputs: Vec<&SubgroupInput> = groups.values().collect();
    let evaluated: Vec<Result<SubgroupOutcome, AuditError>> = inputs
        .par_iter()
        .map(|group| evaluate_subgroup(group, &overall, config, &options.support_floor))
        .collect();

    let mut subgroups = Vec::new();
    let mut excluded = Vec::new();
    let mut audited_trials = 0u64;
    for (group, outcome) in inputs.iter().zip(evaluated) {
        match outcome? {
            SubgroupOutcome::Included(result) => {
                audited_trials += result.n_target + result.n_nontarget;
                subgroups.push(result);
            }
            SubgroupOutcome::Excluded(reason) => excluded.push(ExcludedSubgroup {
                label: group.key.label(),
                n_trials: (group.targets.len() + group.nontargets.len()) as u64,
                reason,
            }),
        }
    }
    if subgroups.is_empty() {
        return Err(AuditError::Eval(
            "no evaluable subgroup (every subgroup is missing a label class)".to_string(),
        ));
    }

    subgroups.sort_by(|a, b| {
        let va = a.subgroup_bias.value().unwrap_or(f64::MAX);
        let vb = b.subgroup_bias.value().unwrap_or(f64::MAX);
        va.total_cmp(&vb).then_with(|| a.label.cmp(&b.label))
    });

    let mut max_fpr_gap = 0.0f64;
    let mut max_fnr_gap = 0.0f64;
    for sg in &subgroups {
        max_fpr_gap = max_fpr_gap.max((sg.op_at_overall.fpr - overall.fpr).abs());
        max_fnr_gap = max_fnr_gap.max((sg.op_at_overall.fnr - overall.fnr).abs());
    }
    let equalized_odds = EqualizedOdds {
        max_fpr_gap,
        max_fnr_gap,
        tolerance_fpr: options.eo_tolerance_fpr,
        tolerance_fnr: options.eo_tolerance_fnr,
        unbiased: max_fpr_gap <= options.eo_tolerance_fpr
            && max_fnr_gap <= options.eo_tolerance_fnr,
    };

    let diagnostics = ReportDiagnostics {
        total_trials: trials.records.len() as u64,
        audited_trials,
        unknown_trials: unknown_targets + unknown_nontargets,
        unknown_target_trials: unknown_targets,
        unknown_nontarget_trials: unknown_nontargets,
        excluded,
        warnings: assignment.diagnostics.warnings.clone(),
        subgroup_rule:
            "subgroups and unique-speaker counts use enrollment-side speakers only".to_string(),
    };

    Ok(BiasReport {
        attributes: assignment.attributes.clone(),
        config: config.clone(),
        overall,
        overall_eer,
        subgroups,
        equalized_odds,
        diagnostics,
    })
}

enum SubgroupOutcome {
    Included(SubgroupResult),
    Excluded(String),
}

fn evaluate_subgroup(
    group: &SubgroupInput,
    overall: &OperatingPoint,
    config: &DcfConfig,
    floor: &SupportFloor,
) -> Result<SubgroupOutcome, AuditError> {
    let curve = match ErrorCurve::compute(&group.targets, &group.nontargets) {
        Ok(curve) => curve,
        Err(AuditError::EmptyScoreSide { side }) => {
            return Ok(SubgroupOutcome::Excluded(format!("no {side} trials")))
        }
        Err(other) => return Err(other),
    };
    let op_at_overall = curve.operating_point_at(overall.threshold, config);
    let op_at_own_min = curve.min_dcf(config);
    let (fpr_ratio, fnr_ratio) = error_rate_ratios(&op_at_overall, overall);
    let n_target = group.targets.len() as u64;
    let n_nontarget = group.nontargets.len() as u64;
    let low_support = group.n_speakers < floor.min_speakers
        || n_target.min(n_nontarget) < floor.min_trials_per_label;
    Ok(SubgroupOutcome::Included(SubgroupResult {
        key: group.key.clone(),
        label: group.key.label(),
        n_speakers: group.n_speakers,
        n_target,
        n_nontarget,
        subgroup_bias: subgroup_bias(op_at_overall.cost, overall.cost),
        threshold_bias: threshold_bias(op_at_overall.cost, op_at_own_min.cost),
        fpr_ratio,
        fnr_ratio,
        op_at_overall,
        op_at_own_min,
        low_support,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPair {
    pub label: String,
    pub bias_a: Ratio,
    pub bias_b: Ratio,
}

/// Paired subgroup-bias data for two audit runs over the same subgroup
/// schema (the scatter-comparison form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub pairs: Vec<BiasPair>,
    /// Subgroups where run A has strictly lower bias.
    pub a_lower: u64,
    /// Subgroups where run B has strictly lower bias.
    pub b_lower: u64,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
}

impl RunComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subgroup,bias_a,bias_b\n");
        for pair in &self.pairs {
            out.push_str(&format!("{},{},{}\n", pair.label, pair.bias_a, pair.bias_b));
        }
        out
    }
}

/// Pairs subgroup bias values across two reports, matching by canonical
/// key label.
pub fn compare_runs(a: &BiasReport, b: &BiasReport) -> Result<RunComparison, AuditError> {
    if a.attributes != b.attributes {
        return Err(AuditError::SchemaMismatch(format!(
            "attribute schemas differ: [{}] vs [{}]",
            a.attributes.join(","),
            b.attributes.join(",")
        )));
    }
    let biases_a: BTreeMap<&str, &Ratio> = a
        .subgroups
        .iter()
        .map(|sg| (sg.label.as_str(), &sg.subgroup_bias))
        .collect();
    let biases_b: BTreeMap<&str, &Ratio> = b
        .subgroups
        .iter()
        .map(|sg| (sg.label.as_str(), &sg.subgroup_bias))
        .collect();

    let mut pairs = Vec::new();
    let mut a_lower = 0u64;
    let mut b_lower = 0u64;
    let mut only_in_a = Vec::new();
    let mut only_in_b = Vec::new();
    for (label, bias_a) in &biases_a {
        match biases_b.get(label) {
            Some(bias_b) => {
                if let (Some(va), Some(vb)) = (bias_a.value(), bias_b.value()) {
                    if va < vb {
                        a_lower += 1;
                    } else if vb < va {
                        b_lower += 1;
                    }
                }
                pairs.push(BiasPair {
                    label: label.to_string(),
                    bias_a: (*bias_a).clone(),
                    bias_b: (*bias_b).clone(),
                });
            }
            None => only_in_a.push(label.to_string()),
        }
    }
    for label in biases_b.keys() {
        if !biases_a.contains_key(label) {
            only_in_b.push(label.to_string());
        }
    }
    if pairs.is_empty() {
        return Err(AuditError::SchemaMismatch(
            "reports share no subgroup".to_string(),
        ));
    }
    Ok(RunComparison {
        pairs,
        a_lower,
        b_lower,
        only_in_a,
        only_in_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subgroup_bias_identity_and_table_rows() {
        assert_eq!(subgroup_bias(0.154, 0.154), Ratio::Defined(1.0));
        // Published ratios use unrounded costs; with the table's rounded
        // 3-decimal costs the reproduction is coarser.
        let mexico = subgroup_bias(0.090, 0.154).value().unwrap();
        assert!((mexico - 0.584).abs() < 0.001);
        assert!((mexico - 0.5768).abs() < 0.01);
        let india = subgroup_bias(0.400, 0.154).value().unwrap();
        assert!((india - 2.597).abs() < 0.001);
    }

    #[test]
    fn subgroup_bias_zero_denominator() {
        match subgroup_bias(0.1, 0.0) {
            Ratio::Undefined(reason) => assert!(reason.contains("perfect overall")),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn threshold_bias_table_rows() {
        let ireland = threshold_bias(0.110, 0.070).value().unwrap();
        assert_eq!(format!("{ireland:.4}"), "1.5714");
        let newzealand = threshold_bias(0.104, 0.086).value().unwrap();
        assert_eq!(format!("{newzealand:.4}"), "1.2093");
        assert_eq!(threshold_bias(0.2, 0.2), Ratio::Defined(1.0));
    }

    #[test]
    fn error_rate_ratio_cases() {
        let overall = OperatingPoint {
            threshold: 0.0,
            fpr: 0.02,
            fnr: 0.1,
            cost: 0.0,
        };
        let same = error_rate_ratios(&overall, &overall);
        assert_eq!(same.0, Ratio::Defined(1.0));
        assert_eq!(same.1, Ratio::Defined(1.0));
        let zero_fp = OperatingPoint {
            threshold: 0.0,
            fpr: 0.0,
            fnr: 0.1,
            cost: 0.0,
        };
        assert_eq!(error_rate_ratios(&zero_fp, &overall).0, Ratio::Defined(0.0));
        let double = OperatingPoint {
            threshold: 0.0,
            fpr: 0.04,
            fnr: 0.2,
            cost: 0.0,
        };
        let (fpr, fnr) = error_rate_ratios(&double, &overall);
        assert_eq!(fpr, Ratio::Defined(2.0));
        assert_eq!(fnr, Ratio::Defined(2.0));
        let zero_overall = OperatingPoint {
            threshold: 0.0,
            fpr: 0.0,
            fnr: 0.0,
            cost: 0.0,
        };
        let (fpr, fnr) = error_rate_ratios(&overall, &zero_overall);
        assert!(matches!(fpr, Ratio::Undefined(_)));
        assert!(matches!(fnr, Ratio::Undefined(_)));
    }

    #[test]
    fn ratio_serde_roundtrip() {
        let defined = Ratio::Defined(1.25);
        let json = serde_json::to_string(&defined).unwrap();
        assert_eq!(json, "1.25");
        assert_eq!(serde_json::from_str::<Ratio>(&json).unwrap(), defined);
        let undefined = Ratio::Undefined("overall FPR is zero".to_string());
        let json = serde_json::to_string(&undefined).unwrap();
        assert_eq!(json, "\"undefined (overall FPR is zero)\"");
        assert_eq!(serde_json::from_str::<Ratio>(&json).unwrap(), undefined);
    }
}
