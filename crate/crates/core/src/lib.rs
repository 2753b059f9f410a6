//! Audits group bias in speaker-verification systems from their raw trial
//! scores.
//!
//! The pipeline treats the verifier as a black box: it ingests a scored
//! trial list and speaker metadata, calibrates an operating threshold by
//! minimizing a detection cost function, disaggregates false-positive and
//! false-negative behaviour by speaker subgroup, and reports per-subgroup
//! cost and error-rate ratios alongside DET curves.

pub mod bias;
pub mod det;
pub mod error;
pub mod metrics;
pub mod synth;
pub mod trial;

pub use bias::{
    audit, compare_runs, error_rate_ratios, subgroup_bias, threshold_bias, AuditOptions,
    BiasReport, Ratio, RunComparison, SubgroupResult, SupportFloor,
};
pub use det::{
    det_curve, probit, render_det_svg, render_scatter_svg, write_svg, DetCurve, DetPlotStyle,
    Marker, MarkerKind,
};
pub use error::AuditError;
pub use metrics::{dcf, DcfConfig, ErrorCurve, OperatingPoint};
pub use synth::{generate, SubgroupScoreSpec};
pub use trial::{
    composition_summary, metadata_to_csv, parse_metadata, parse_trials, speaker_of,
    CompositionReport, Label, MetadataSet, SpeakerIdRule, SubgroupKey, TrialFileFormat,
    TrialRecord, TrialSet,
};
