//! `svaudit`: audit group bias in speaker-verification score files.
//!
//! Subcommands: `audit` (full pipeline: parse, calibrate, disaggregate,
//! report), `compare` (two finished reports), `synth` (generate Gaussian
//! test data), `composition` (demographic makeup of a trial list).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svaudit_core::{
    audit, compare_runs, composition_summary, det_curve, parse_metadata, parse_trials,
    render_det_svg, AuditError, AuditOptions, BiasReport, DcfConfig, DetCurve,
    DetPlotStyle, ErrorCurve, Label, Marker, MarkerKind, SpeakerIdRule, SubgroupScoreSpec,
    TrialFileFormat, TrialSet,
};

/// Default output directory when neither `--out` nor config give one.
const OUT_ENV: &str = "SVAUDIT_OUT";

#[derive(Parser)]
#[command(name = "svaudit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full bias audit over a trial score file.
    Audit(AuditArgs),
    /// Compare subgroup bias across two audit reports.
    Compare(CompareArgs),
    /// Generate a synthetic trial file and metadata from a JSON spec.
    Synth(SynthArgs),
    /// Summarize demographic composition of a trial list.
    Composition(CompositionArgs),
}

#[derive(Args)]
struct AuditArgs {
    /// Trial score file (`label enroll test score` by default).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Speaker metadata CSV (header `speaker_id,<attr>,...`).
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Comma-separated metadata attributes defining the subgroup key.
    #[arg(long)]
    attributes: Option<String>,
    /// Target prior P_Target.
    #[arg(long)]
    p_target: Option<f64>,
    /// Cost of a false negative (miss).
    #[arg(long)]
    c_fn: Option<f64>,
    /// Cost of a false positive (false accept).
    #[arg(long)]
    c_fp: Option<f64>,
    /// Column order of the trial file, e.g. `enroll,test,score,label`.
    #[arg(long)]
    trial_format: Option<String>,
    /// Speaker-id rule: `path-prefix` or `delimited:<char>:<segment>`.
    #[arg(long)]
    speaker_rule: Option<String>,
    /// Minimum unique enrollment speakers before the low-support flag.
    #[arg(long)]
    support_min_speakers: Option<u64>,
    /// Minimum trials per label before the low-support flag.
    #[arg(long)]
    support_min_trials: Option<u64>,
    /// Equalized-odds FPR tolerance for the unbiased verdict.
    #[arg(long)]
    eo_tolerance_fpr: Option<f64>,
    /// Equalized-odds FNR tolerance for the unbiased verdict.
    #[arg(long)]
    eo_tolerance_fnr: Option<f64>,
    /// Output directory (default: $SVAUDIT_OUT, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Artifact formats, subset of json,csv,svg,det-csv.
    #[arg(long)]
    formats: Option<String>,
    /// key=value config file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// report.json from run A.
    report_a: PathBuf,
    /// report.json from run B.
    report_b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON array of per-subgroup Gaussian score specs.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompositionArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    metadata: PathBuf,
    /// Attributes to summarize (default: every metadata column).
    #[arg(long)]
    attributes: Option<String>,
    #[arg(long)]
    trial_format: Option<String>,
    #[arg(long)]
    speaker_rule: Option<String>,
    /// Categories listed as most-represented per attribute.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Write composition.csv here instead of printing to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Audit(args) => run_audit(args),
        Command::Compare(args) => run_compare(args),
        Command::Synth(args) => run_synth(args),
        Command::Composition(args) => run_composition(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("svaudit: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 = input/parse, 3 = evaluation, 4 = I/O.
fn exit_code(err: &AuditError) -> u8 {
    match err {
        AuditError::MalformedLine { .. }
        | AuditError::NonFiniteScore { .. }
        | AuditError::EmptyFile { .. }
        | AuditError::MissingHeader { .. }
        | AuditError::DuplicateSpeaker { .. }
        | AuditError::UnresolvableSpeaker(_)
        | AuditError::AllUnknown
        | AuditError::InvalidConfig(_)
        | AuditError::SchemaMismatch(_) => 2,
        AuditError::EmptyScoreSide { .. } | AuditError::Eval(_) => 3,
        AuditError::Io { .. } => 4,
    }
}

// ---------------------------------------------------------------------------
// config-file merging

/// Flat key=value config. `#` starts a comment; blank lines are ignored.
fn read_config(path: &Path) -> Result<BTreeMap<String, String>, AuditError> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
            None => {
                return Err(AuditError::InvalidConfig(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(map)
}

fn merge<T>(flag: Option<T>, config: &BTreeMap<String, String>, key: &str) -> Option<T>
where
    T: std::str::FromStr,
{
    flag.or_else(|| config.get(key).and_then(|v| v.parse().ok()))
}

fn parse_speaker_rule(spec: &str) -> Result<SpeakerIdRule, AuditError> {
    if spec == "path-prefix" {
        return Ok(SpeakerIdRule::PathPrefix);
    }
    if let Some(rest) = spec.strip_prefix("delimited:") {
        if let Some((delim, segment)) = rest.split_once(':') {
            let mut chars = delim.chars();
            if let (Some(delimiter), None) = (chars.next(), chars.next()) {
                if let Ok(segment) = segment.parse() {
                    return Ok(SpeakerIdRule::Delimited { delimiter, segment });
                }
            }
        }
    }
    Err(AuditError::InvalidConfig(format!(
        "speaker rule `{spec}` (expected `path-prefix` or `delimited:<char>:<segment>`)"
    )))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Svg,
    DetCsv,
}

fn parse_formats(spec: &str) -> Result<Vec<Format>, AuditError> {
    let mut formats = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let format = match name {
            "json" => Format::Json,
            "csv" => Format::Csv,
            "svg" => Format::Svg,
            "det-csv" => Format::DetCsv,
            other => {
                return Err(AuditError::InvalidConfig(format!(
                    "unknown format `{other}` (expected json,csv,svg,det-csv)"
                )))
            }
        };
        if !formats.contains(&format) {
            formats.push(format);
        }
    }
    if formats.is_empty() {
        return Err(AuditError::InvalidConfig("empty format list".to_string()));
    }
    Ok(formats)
}

fn output_dir(flag: Option<PathBuf>, config: &BTreeMap<String, String>) -> PathBuf {
    flag.or_else(|| config.get("out").map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

// ---------------------------------------------------------------------------
// artifact bookkeeping

/// Tracks files written during a run and removes them if the run fails,
/// so a failed audit never leaves partial outputs behind.
struct ArtifactGuard {
    written: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl ArtifactGuard {
    fn new() -> Self {
        ArtifactGuard {
            written: Vec::new(),
            dirs: Vec::new(),
            committed: false,
        }
    }

    fn write(&mut self, path: &Path, content: &str) -> Result<(), AuditError> {
        std::fs::write(path, content).map_err(|e| AuditError::io(path, e))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn track_dir(&mut self, path: &Path) {
        self.dirs.push(path.to_path_buf());
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for ArtifactGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for path in &self.written {
            let _ = std::fs::remove_file(path);
        }
        for dir in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir(dir);
        }
    }
}

/// Filesystem-safe rendering of a subgroup label.
fn sanitize_filename(label: &str) -> String {
    let name: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') {
                c
            } else {
                '-'
            }
        })
        .collect();
    if name.is_empty() {
        "unnamed".to_string()
    } else {
        name
    }
}

// ---------------------------------------------------------------------------
// audit

fn run_audit(args: AuditArgs) -> Result<(), AuditError> {
    let config = match &args.config {
        Some(path) => read_config(path)?,
        None => BTreeMap::new(),
    };

    let scores = merge(args.scores, &config, "scores")
        .ok_or_else(|| AuditError::InvalidConfig("missing --scores".to_string()))?;
    let metadata_path = merge(args.metadata, &config, "metadata")
        .ok_or_else(|| AuditError::InvalidConfig("missing --metadata".to_string()))?;
    let attributes: Vec<String> = merge(args.attributes, &config, "attributes")
        .ok_or_else(|| AuditError::InvalidConfig("missing --attributes".to_string()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if attributes.is_empty() {
        return Err(AuditError::InvalidConfig(
            "attribute list is empty".to_string(),
        ));
    }

    let mut dcf = DcfConfig::default();
    if let Some(p) = merge(args.p_target, &config, "p-target") {
        dcf.p_target = p;
        dcf.preset_name = None;
    }
    if let Some(c) = merge(args.c_fn, &config, "c-fn") {
        dcf.c_fn = c;
        dcf.preset_name = None;
    }
    if let Some(c) = merge(args.c_fp, &config, "c-fp") {
        dcf.c_fp = c;
        dcf.preset_name = None;
    }
    dcf.validate()?;

    let trial_format = match merge(args.trial_format, &config, "trial-format") {
        Some(spec) => TrialFileFormat::parse_spec(&spec)?,
        None => TrialFileFormat::default(),
    };
    let speaker_rule = match merge(args.speaker_rule, &config, "speaker-rule") {
        Some(spec) => parse_speaker_rule(&spec)?,
        None => SpeakerIdRule::default(),
    };

    let mut options = AuditOptions::default();
    if let Some(n) = merge(args.support_min_speakers, &config, "support-min-speakers") {
        options.support_floor.min_speakers = n;
    }
    if let Some(n) = merge(args.support_min_trials, &config, "support-min-trials") {
        options.support_floor.min_trials_per_label = n;
    }
    if let Some(t) = merge(args.eo_tolerance_fpr, &config, "eo-tolerance-fpr") {
        options.eo_tolerance_fpr = t;
    }
    if let Some(t) = merge(args.eo_tolerance_fnr, &config, "eo-tolerance-fnr") {
        options.eo_tolerance_fnr = t;
    }

    let formats = match merge(args.formats, &config, "formats") {
        Some(spec) => parse_formats(&spec)?,
        None => vec![Format::Json, Format::Csv, Format::Svg, Format::DetCsv],
    };
    let out_dir = output_dir(args.out, &config);

    // Fail fast before any computation.
    for path in [&scores, &metadata_path] {
        if !path.is_file() {
            return Err(AuditError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
    }

    let mut trials = parse_trials(&scores, &trial_format)?;
    let metadata = parse_metadata(&metadata_path)?;
    trials.assign_subgroups(&metadata, &attributes, &speaker_rule)?;

    let report = audit(&trials, &dcf, &options)?;
    let composition =
        composition_summary(&trials, &metadata, &attributes, &speaker_rule, 10)?;
    let curves = build_det_curves(&trials, &report)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| AuditError::io(&out_dir, e))?;
    let mut guard = ArtifactGuard::new();
    if formats.contains(&Format::Json) {
        guard.write(&out_dir.join("report.json"), &report.to_json())?;
    }
    if formats.contains(&Format::Csv) {
        guard.write(&out_dir.join("report.csv"), &report.to_csv())?;
        guard.write(&out_dir.join("composition.csv"), &composition.to_csv())?;
    }
    if formats.contains(&Format::DetCsv) {
        let det_dir = out_dir.join("det");
        std::fs::create_dir_all(&det_dir).map_err(|e| AuditError::io(&det_dir, e))?;
        guard.track_dir(&det_dir);
        for curve in &curves {
            let name = format!("{}.csv", sanitize_filename(&curve.source));
            guard.write(&det_dir.join(name), &curve.to_csv())?;
        }
    }
    if formats.contains(&Format::Svg) {
        let style = DetPlotStyle {
            title: format!("DET by {}", attributes.join("_")),
            ..DetPlotStyle::default()
        };
        let svg = render_det_svg(&curves, &style)?;
        guard.write(&out_dir.join("det.svg"), &svg)?;
    }
    guard.commit();

    print_summary(&report);
    Ok(())
}

/// Overall curve first (dotted in the plot), then the report's subgroups
/// in report order. Markers: triangle at the overall-minimum threshold,
/// cross at the subgroup's own minimum.
fn build_det_curves(
    trials: &TrialSet,
    report: &BiasReport,
) -> Result<Vec<DetCurve>, AuditError> {
    let assignment = trials
        .subgroups
        .as_ref()
        .ok_or_else(|| AuditError::Eval("subgroups not assigned".to_string()))?;

    let mut overall_targets = Vec::new();
    let mut overall_nontargets = Vec::new();
    let mut by_label: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let labels: Vec<String> = assignment.keys.iter().map(|k| k.label()).collect();
    for (record, label) in trials.records.iter().zip(&labels) {
        match record.label {
            Label::Target => overall_targets.push(record.score),
            Label::Nontarget => overall_nontargets.push(record.score),
        }
        let entry = by_label.entry(label.as_str()).or_default();
        match record.label {
            Label::Target => entry.0.push(record.score),
            Label::Nontarget => entry.1.push(record.score),
        }
    }

    let overall_curve = ErrorCurve::compute(&overall_targets, &overall_nontargets)?;
    let mut curves = vec![det_curve(
        &overall_curve,
        "overall",
        vec![Marker {
            label: "overall min".to_string(),
            kind: MarkerKind::Triangle,
            point: report.overall.clone(),
        }],
    )?];
    for sg in &report.subgroups {
        let (targets, nontargets) = by_label.get(sg.label.as_str()).ok_or_else(|| {
            AuditError::Eval(format!("subgroup `{}` missing from trial set", sg.label))
        })?;
        let curve = ErrorCurve::compute(targets, nontargets)?;
        curves.push(det_curve(
            &curve,
            &sg.label,
            vec![
                Marker {
                    label: format!("{} @ overall min", sg.label),
                    kind: MarkerKind::Triangle,
                    point: sg.op_at_overall.clone(),
                },
                Marker {
                    label: format!("{} @ own min", sg.label),
                    kind: MarkerKind::Cross,
                    point: sg.op_at_own_min.clone(),
                },
            ],
        )?);
    }
    Ok(curves)
}

fn print_summary(report: &BiasReport) {
    println!(
        "overall min-DCF: cost={:.6} threshold={:.6} fpr={:.6} fnr={:.6}",
        report.overall.cost, report.overall.threshold, report.overall.fpr, report.overall.fnr
    );
    println!("overall EER: {:.6}", report.overall_eer);
    // Subgroups are sorted by subgroup bias ascending.
    if let (Some(best), Some(worst)) = (report.subgroups.first(), report.subgroups.last()) {
        println!(
            "subgroup bias: best {} ({}), worst {} ({})",
            best.label, best.subgroup_bias, worst.label, worst.subgroup_bias
        );
    }
    println!(
        "subgroups: {} audited, {} excluded, {} unknown-bucket trials",
        report.subgroups.len(),
        report.diagnostics.excluded.len(),
        report.diagnostics.unknown_trials
    );
    if !report.equalized_odds.unbiased {
        println!(
            "equalized odds: max |dFPR|={:.6} max |dFNR|={:.6} (outside tolerance)",
            report.equalized_odds.max_fpr_gap, report.equalized_odds.max_fnr_gap
        );
    }
    for warning in &report.diagnostics.warnings {
        println!("warning: {warning}");
    }
}

// ---------------------------------------------------------------------------
// compare

fn run_compare(args: CompareArgs) -> Result<(), AuditError> {
    let out_dir = output_dir(args.out, &BTreeMap::new());
    let report_a = load_report(&args.report_a)?;
    let report_b = load_report(&args.report_b)?;
    let comparison = compare_runs(&report_a, &report_b)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| AuditError::io(&out_dir, e))?;
    let mut guard = ArtifactGuard::new();
    guard.write(&out_dir.join("compare.csv"), &comparison.to_csv())?;
    let pairs: Vec<(String, f64, f64)> = comparison
        .pairs
        .iter()
        .filter_map(|p| match (p.bias_a.value(), p.bias_b.value()) {
            (Some(a), Some(b)) => Some((p.label.clone(), a, b)),
            _ => None,
        })
        .collect();
    let svg = svaudit_core::render_scatter_svg(&pairs, "subgroup bias: A vs B");
    guard.write(&out_dir.join("compare.svg"), &svg)?;
    guard.commit();

    println!(
        "compared {} subgroups: A lower in {}, B lower in {}",
        comparison.pairs.len(),
        comparison.a_lower,
        comparison.b_lower
    );
    if !comparison.only_in_a.is_empty() {
        println!("only in A: {}", comparison.only_in_a.join(", "));
    }
    if !comparison.only_in_b.is_empty() {
        println!("only in B: {}", comparison.only_in_b.join(", "));
    }
    Ok(())
}

fn load_report(path: &Path) -> Result<BiasReport, AuditError> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    BiasReport::from_json(&text)
}

// ---------------------------------------------------------------------------
// synth

fn run_synth(args: SynthArgs) -> Result<(), AuditError> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| AuditError::io(&args.spec, e))?;
    let specs: Vec<SubgroupScoreSpec> = serde_json::from_str(&text).map_err(|e| {
        AuditError::InvalidConfig(format!("{}: {e}", args.spec.display()))
    })?;
    let (trials, metadata) = svaudit_core::generate(&specs)?;

    let out_dir = output_dir(args.out, &BTreeMap::new());
    std::fs::create_dir_all(&out_dir).map_err(|e| AuditError::io(&out_dir, e))?;
    let mut guard = ArtifactGuard::new();
    guard.write(
        &out_dir.join("trials.txt"),
        &trials.to_trial_lines(&TrialFileFormat::default()),
    )?;
    guard.write(
        &out_dir.join("metadata.csv"),
        &svaudit_core::metadata_to_csv(&metadata),
    )?;
    guard.commit();

    println!(
        "wrote {} trials over {} subgroups to {}",
        trials.records.len(),
        specs.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// composition

fn run_composition(args: CompositionArgs) -> Result<(), AuditError> {
    let trial_format = match &args.trial_format {
        Some(spec) => TrialFileFormat::parse_spec(spec)?,
        None => TrialFileFormat::default(),
    };
    let speaker_rule = match &args.speaker_rule {
        Some(spec) => parse_speaker_rule(spec)?,
        None => SpeakerIdRule::default(),
    };
    let trials = parse_trials(&args.scores, &trial_format)?;
    let metadata = parse_metadata(&args.metadata)?;
    let attributes: Vec<String> = match &args.attributes {
        Some(spec) => spec
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => metadata.attribute_names.clone(),
    };
    let report =
        composition_summary(&trials, &metadata, &attributes, &speaker_rule, args.top_k)?;
    let csv = report.to_csv();
    match args.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| AuditError::io(&dir, e))?;
            let path = dir.join("composition.csv");
            std::fs::write(&path, &csv).map_err(|e| AuditError::io(&path, e))?;
            println!(
                "{} speakers, {} utterance appearances -> {}",
                report.n_speakers,
                report.n_utterance_appearances,
                path.display()
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}
