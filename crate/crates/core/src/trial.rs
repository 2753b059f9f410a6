//! Trial and metadata ingestion: score file parsing, utterance-to-speaker
//! resolution and subgroup assignment.
//!
//! A trial compares an enrollment utterance against a test utterance and
//! carries the verifier's raw score plus a same-speaker label. Subgroups
//! are always derived from the enrollment-side speaker's attributes; the
//! test side only feeds diagnostics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::AuditError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Target,
    Nontarget,
}

/// One scored verification trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub label: Label,
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Label,
    Enroll,
    Test,
    Score,
}

/// Column layout of a trial file. The default matches the common
/// `label enroll test score` layout with label in {1, 0}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialFileFormat {
    pub columns: [Column; 4],
}

impl Default for TrialFileFormat {
    fn default() -> Self {
        TrialFileFormat {
            columns: [Column::Label, Column::Enroll, Column::Test, Column::Score],
        }
    }
}

impl TrialFileFormat {
    /// Parses a comma-separated column spec such as `label,enroll,test,score`.
    /// Every column name must appear exactly once.
    pub fn parse_spec(spec: &str) -> Result<Self, AuditError> {
        let names: Vec<&str> = spec.split(',').map(str::trim).collect();
        if names.len() != 4 {
            return Err(AuditError::InvalidConfig(format!(
                "trial format `{spec}` must name exactly 4 columns"
            )));
        }
        let mut columns = Vec::with_capacity(4);
        for name in &names {
            columns.push(match *name {
                "label" => Column::Label,
                "enroll" => Column::Enroll,
                "test" => Column::Test,
                "score" => Column::Score,
                other => {
                    return Err(AuditError::InvalidConfig(format!(
                        "unknown trial column `{other}` (expected label/enroll/test/score)"
                    )))
                }
            });
        }
        let mut seen = columns.clone();
        seen.sort_by_key(|c| *c as u8);
        seen.dedup();
        if seen.len() != 4 {
            return Err(AuditError::InvalidConfig(format!(
                "trial format `{spec}` repeats a column"
            )));
        }
        Ok(TrialFileFormat {
            columns: columns.try_into().unwrap(),
        })
    }
}

/// How an utterance id maps to its speaker id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpeakerIdRule {
    /// Prefix before the first `/` (VoxCeleb `speaker/video/clip` layout).
    PathPrefix,
    /// Split on `delimiter` and take segment `segment` (0-based).
    Delimited { delimiter: char, segment: usize },
}

impl Default for SpeakerIdRule {
    fn default() -> Self {
        SpeakerIdRule::PathPrefix
    }
}

/// Resolves an utterance id to a speaker id under the given rule.
pub fn speaker_of(utterance_id: &str, rule: &SpeakerIdRule) -> Result<String, AuditError> {
    match rule {
        SpeakerIdRule::PathPrefix => match utterance_id.split_once('/') {
            Some((prefix, _)) if !prefix.is_empty() => Ok(prefix.to_string()),
            _ => Err(AuditError::UnresolvableSpeaker(utterance_id.to_string())),
        },
        SpeakerIdRule::Delimited { delimiter, segment } => utterance_id
            .split(*delimiter)
            .nth(*segment)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or_else(|| AuditError::UnresolvableSpeaker(utterance_id.to_string())),
    }
}

/// Per-speaker categorical attributes, keyed by attribute name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerMetadata {
    pub speaker_id: String,
    pub attributes: BTreeMap<String, String>,
}

/// All speaker metadata rows from one file, indexed by speaker id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetadataSet {
    /// Attribute column names in header order.
    pub attribute_names: Vec<String>,
    speakers: HashMap<String, BTreeMap<String, String>>,
}

impl MetadataSet {
    pub fn new(attribute_names: Vec<String>) -> Self {
        MetadataSet {
            attribute_names,
            speakers: HashMap::new(),
        }
    }

    pub fn insert(&mut self, speaker: SpeakerMetadata) -> Result<(), AuditError> {
        if self.speakers.contains_key(&speaker.speaker_id) {
            return Err(AuditError::DuplicateSpeaker {
                path: PathBuf::new(),
                line: 0,
                id: speaker.speaker_id,
            });
        }
        self.speakers.insert(speaker.speaker_id, speaker.attributes);
        Ok(())
    }

    pub fn get(&self, speaker_id: &str) -> Option<&BTreeMap<String, String>> {
        self.speakers.get(speaker_id)
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, String>)> {
        self.speakers.iter()
    }
}

/// Subgroup identity: the enrollment speaker's values for the selected
/// attributes, in the user-specified attribute order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubgroupKey {
    Known(Vec<(String, String)>),
    /// Bucket for trials whose enrollment speaker has no usable metadata.
    Unknown,
}

impl SubgroupKey {
    pub fn known(pairs: Vec<(String, String)>) -> Self {
        SubgroupKey::Known(pairs)
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, SubgroupKey::Unknown)
    }

    /// Canonical label used in reports and file names, e.g. `ireland_f`.
    pub fn label(&self) -> String {
        match self {
            SubgroupKey::Unknown => "unknown".to_string(),
            SubgroupKey::Known(pairs) => pairs
                .iter()
                .map(|(_, v)| v.to_lowercase())
                .collect::<Vec<_>>()
                .join("_"),
        }
    }
}

impl fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Where a TrialSet came from, for report provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<PathBuf>,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignDiagnostics {
    pub unknown_trials: u64,
    pub unknown_missing_speaker: u64,
    pub unknown_missing_attribute: u64,
    /// Trials where the test-side subgroup (when resolvable) differs from
    /// the enrollment-side subgroup. Diagnostic only.
    pub test_side_mismatch: u64,
    pub warnings: Vec<String>,
}

/// Subgroup assignment parallel to `TrialSet::records`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupAssignment {
    pub attributes: Vec<String>,
    pub keys: Vec<SubgroupKey>,
    pub enroll_speakers: Vec<String>,
    pub diagnostics: AssignDiagnostics,
}

/// An immutable set of parsed trials, optionally partitioned into subgroups.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub records: Vec<TrialRecord>,
    pub subgroups: Option<SubgroupAssignment>,
    pub provenance: Provenance,
}

impl TrialSet {
    pub fn from_records(records: Vec<TrialRecord>, provenance: Provenance) -> Self {
        TrialSet {
            records,
            subgroups: None,
            provenance,
        }
    }

    /// Builds the subgroup of every trial from the enrollment-side speaker's
    /// values for `attributes`. Trials whose enrollment speaker is missing
    /// from the metadata, or lacks any selected attribute, go to the
    /// unknown bucket.
    pub fn assign_subgroups(
        &mut self,
        metadata: &MetadataSet,
        attributes: &[String],
        rule: &SpeakerIdRule,
    ) -> Result<(), AuditError> {
        if attributes.is_empty() {
            return Err(AuditError::InvalidConfig(
                "attribute list must be non-empty".to_string(),
            ));
        }
        let mut keys = Vec::with_capacity(self.records.len());
        let mut enroll_speakers = Vec::with_capacity(self.records.len());
        let mut diag = AssignDiagnostics::default();
        let mut missing_speakers: BTreeSet<String> = BTreeSet::new();

        for record in &self.records {
            let speaker = speaker_of(&record.enroll, rule)?;
            let key = key_for_speaker(metadata, &speaker, attributes);
            match &key {
                SubgroupKey::Unknown => {
                    diag.unknown_trials += 1;
                    if metadata.get(&speaker).is_none() {
                        diag.unknown_missing_speaker += 1;
                        missing_speakers.insert(speaker.clone());
                    } else {
                        diag.unknown_missing_attribute += 1;
                    }
                }
                SubgroupKey::Known(_) => {
                    // Test-side comparison is diagnostic only.
                    if let Ok(test_speaker) = speaker_of(&record.test, rule) {
                        let test_key = key_for_speaker(metadata, &test_speaker, attributes);
                        if !test_key.is_unknown() && test_key != key {
                            diag.test_side_mismatch += 1;
                        }
                    }
                }
            }
            enroll_speakers.push(speaker);
            keys.push(key);
        }

        if diag.unknown_trials == self.records.len() as u64 {
            return Err(AuditError::AllUnknown);
        }
        for speaker in missing_speakers.iter().take(10) {
            diag.warnings
                .push(format!("enrollment speaker `{speaker}` not in metadata"));
        }
        if missing_speakers.len() > 10 {
            diag.warnings.push(format!(
                "... and {} more speakers missing from metadata",
                missing_speakers.len() - 10
            ));
        }

        self.subgroups = Some(SubgroupAssignment {
            attributes: attributes.to_vec(),
            keys,
            enroll_speakers,
            diagnostics: diag,
        });
        Ok(())
    }

    /// Recomputes (n_target, n_nontarget) per subgroup, unknown included.
    pub fn subgroup_counts(&self) -> BTreeMap<SubgroupKey, (u64, u64)> {
        let mut counts: BTreeMap<SubgroupKey, (u64, u64)> = BTreeMap::new();
        if let Some(assignment) = &self.subgroups {
            for (record, key) in self.records.iter().zip(&assignment.keys) {
                let entry = counts.entry(key.clone()).or_default();
                match record.label {
                    Label::Target => entry.0 += 1,
                    Label::Nontarget => entry.1 += 1,
                }
            }
        }
        counts
    }

    /// Serializes the records back to the trial file format.
    pub fn to_trial_lines(&self, format: &TrialFileFormat) -> String {
        let mut out = String::new();
        for record in &self.records {
            let mut fields = Vec::with_capacity(4);
            for column in &format.columns {
                match column {
                    Column::Label => fields.push(
                        match record.label {
                            Label::Target => "1",
                            Label::Nontarget => "0",
                        }
                        .to_string(),
                    ),
                    Column::Enroll => fields.push(record.enroll.clone()),
                    Column::Test => fields.push(record.test.clone()),
                    Column::Score => fields.push(format_score(record.score)),
                }
            }
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }
}

fn key_for_speaker(
    metadata: &MetadataSet,
    speaker: &str,
    attributes: &[String],
) -> SubgroupKey {
    let Some(attrs) = metadata.get(speaker) else {
        return SubgroupKey::Unknown;
    };
    let mut pairs = Vec::with_capacity(attributes.len());
    for name in attributes {
        match attrs.get(name) {
            Some(value) if !value.is_empty() => pairs.push((name.clone(), value.clone())),
            _ => return SubgroupKey::Unknown,
        }
    }
    SubgroupKey::Known(pairs)
}

/// Shortest-roundtrip score formatting so serialized sets re-parse exactly.
fn format_score(score: f64) -> String {
    let mut buf = ryu_like(score);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("nan") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(score: f64) -> String {
    // `{}` on f64 is Rust's shortest-roundtrip formatter.
    format!("{score}")
}

/// Parses a trial file: one trial per line, ASCII whitespace separated,
/// columns per `format`, label in {1, 0}.
pub fn parse_trials(path: &Path, format: &TrialFileFormat) -> Result<TrialSet, AuditError> {
    let raw = fs::read(path).map_err(|e| AuditError::io(path, e))?;
    let checksum = hex_digest(&raw);
    let text = String::from_utf8_lossy(&raw);
    let records = parse_trial_text(&text, format, path)?;
    Ok(TrialSet::from_records(
        records,
        Provenance {
            sources: vec![path.to_path_buf()],
            sha256: checksum,
        },
    ))
}

/// Parses trial lines from in-memory text; `path` is only used for error
/// context.
pub fn parse_trial_text(
    text: &str,
    format: &TrialFileFormat,
    path: &Path,
) -> Result<Vec<TrialRecord>, AuditError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if fields.len() != 4 {
            return Err(AuditError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                text: trimmed.to_string(),
            });
        }
        let mut label = None;
        let mut enroll = None;
        let mut test = None;
        let mut score = None;
        for (column, field) in format.columns.iter().zip(&fields) {
            match column {
                Column::Label => {
                    label = Some(match *field {
                        "1" => Label::Target,
                        "0" => Label::Nontarget,
                        _ => {
                            return Err(AuditError::MalformedLine {
                                path: path.to_path_buf(),
                                line: line_no,
                                text: trimmed.to_string(),
                            })
                        }
                    })
                }
                Column::Enroll => enroll = Some(field.to_string()),
                Column::Test => test = Some(field.to_string()),
                Column::Score => {
                    let parsed: f64 = field.parse().map_err(|_| AuditError::MalformedLine {
                        path: path.to_path_buf(),
                        line: line_no,
                        text: trimmed.to_string(),
                    })?;
                    if !parsed.is_finite() {
                        return Err(AuditError::NonFiniteScore {
                            path: path.to_path_buf(),
                            line: line_no,
                            text: field.to_string(),
                        });
                    }
                    score = Some(parsed);
                }
            }
        }
        records.push(TrialRecord {
            label: label.unwrap(),
            enroll: enroll.unwrap(),
            test: test.unwrap(),
            score: score.unwrap(),
        });
    }
    if records.is_empty() {
        return Err(AuditError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(records)
}

/// Parses a comma-separated metadata file with header
/// `speaker_id,<attr1>,<attr2>,...`. Values are trimmed and compared
/// case-sensitively; duplicate speaker ids are rejected.
pub fn parse_metadata(path: &Path) -> Result<MetadataSet, AuditError> {
    let text = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break line,
            None => {
                return Err(AuditError::MissingHeader {
                    path: path.to_path_buf(),
                })
            }
        }
    };
    let header_cells: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    if header_cells.first().map(String::as_str) != Some("speaker_id") || header_cells.len() < 2 {
        return Err(AuditError::MissingHeader {
            path: path.to_path_buf(),
        });
    }
    let attribute_names: Vec<String> = header_cells[1..].to_vec();
    let mut set = MetadataSet::new(attribute_names.clone());
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header_cells.len() || cells[0].is_empty() {
            return Err(AuditError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                text: line.trim().to_string(),
            });
        }
        let speaker_id = cells[0].to_string();
        if set.get(&speaker_id).is_some() {
            return Err(AuditError::DuplicateSpeaker {
                path: path.to_path_buf(),
                line: line_no,
                id: speaker_id,
            });
        }
        let attributes = attribute_names
            .iter()
            .cloned()
            .zip(cells[1..].iter().map(|c| c.to_string()))
            .collect();
        set.insert(SpeakerMetadata {
            speaker_id,
            attributes,
        })?;
    }
    Ok(set)
}

/// Writes a metadata set back to its CSV form, rows sorted by speaker id.
pub fn metadata_to_csv(metadata: &MetadataSet) -> String {
    let mut out = String::from("speaker_id");
    for name in &metadata.attribute_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let mut speakers: Vec<_> = metadata.iter().collect();
    speakers.sort_by(|a, b| a.0.cmp(b.0));
    for (speaker, attrs) in speakers {
        out.push_str(speaker);
        for name in &metadata.attribute_names {
            out.push(',');
            out.push_str(attrs.get(name).map(String::as_str).unwrap_or(""));
        }
        out.push('\n');
    }
    out
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-category representation share at speaker and utterance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub value: String,
    pub n_speakers: u64,
    pub speaker_pct: f64,
    pub n_utterance_appearances: u64,
    pub utterance_pct: f64,
    /// speaker_pct - utterance_pct: positive means the category is thinner
    /// at the utterance level than its speaker count suggests.
    pub representation_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeComposition {
    pub name: String,
    pub categories: Vec<CategoryShare>,
    /// Top categories by speaker share, most represented first.
    pub top_categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub n_speakers: u64,
    pub n_utterance_appearances: u64,
    pub attributes: Vec<AttributeComposition>,
}

impl CompositionReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("attribute,category,n_speakers,speaker_pct,n_utterances,utterance_pct,gap\n");
        for attr in &self.attributes {
            for cat in &attr.categories {
                out.push_str(&format!(
                    "{},{},{},{:.4},{},{:.4},{:.4}\n",
                    attr.name,
                    cat.value,
                    cat.n_speakers,
                    cat.speaker_pct,
                    cat.n_utterance_appearances,
                    cat.utterance_pct,
                    cat.representation_gap
                ));
            }
        }
        out
    }
}

/// Summarizes demographic representation of the trial set at the speaker
/// and utterance level. Each utterance occurrence counts once per trial
/// side; speakers count once regardless of how often they appear.
pub fn composition_summary(
    trials: &TrialSet,
    metadata: &MetadataSet,
    attributes: &[String],
    rule: &SpeakerIdRule,
    top_k: usize,
) -> Result<CompositionReport, AuditError> {
    if attributes.is_empty() {
        return Err(AuditError::InvalidConfig(
            "attribute list must be non-empty".to_string(),
        ));
    }
    let mut speakers: BTreeSet<String> = BTreeSet::new();
    // speaker -> utterance appearance count (both sides)
    let mut appearances: BTreeMap<String, u64> = BTreeMap::new();
    for record in &trials.records {
        for utt in [&record.enroll, &record.test] {
            let speaker = speaker_of(utt, rule)?;
            *appearances.entry(speaker.clone()).or_default() += 1;
            speakers.insert(speaker);
        }
    }
    let n_speakers = speakers.len() as u64;
    let n_appearances: u64 = appearances.values().sum();

    let mut attr_reports = Vec::new();
    for name in attributes {
        // category -> (speaker count, utterance appearance count)
        let mut by_category: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for speaker in &speakers {
            let category = metadata
                .get(speaker)
                .and_then(|attrs| attrs.get(name))
                .filter(|v| !v.is_empty())
                .cloned()
                .unwrap_or_else(|| "unknown".to_string());
            let entry = by_category.entry(category).or_default();
            entry.0 += 1;
            entry.1 += appearances.get(speaker).copied().unwrap_or(0);
        }
        let mut categories: Vec<CategoryShare> = by_category
            .into_iter()
            .map(|(value, (n_spk, n_utt))| CategoryShare {
                value,
                n_speakers: n_spk,
                speaker_pct: 100.0 * n_spk as f64 / n_speakers as f64,
                n_utterance_appearances: n_utt,
                utterance_pct: 100.0 * n_utt as f64 / n_appearances as f64,
                representation_gap: 100.0 * n_spk as f64 / n_speakers as f64
                    - 100.0 * n_utt as f64 / n_appearances as f64,
            })
            .collect();
        categories.sort_by(|a, b| {
            b.n_speakers
                .cmp(&a.n_speakers)
                .then_with(|| a.value.cmp(&b.value))
        });
        let top_categories = categories
            .iter()
            .take(top_k)
            .map(|c| c.value.clone())
            .collect();
        attr_reports.push(AttributeComposition {
            name: name.clone(),
            categories,
            top_categories,
        });
    }
    Ok(CompositionReport {
        n_speakers,
        n_utterance_appearances: n_appearances,
        attributes: attr_reports,
    })
}
