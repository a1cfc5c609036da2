//! Append-only JSONL manifest and corpus statistics.
//!
//! Every pipeline stage appends a full snapshot entry per clip; the current
//! state of a clip is its last entry. Lines are canonical JSON (sorted keys,
//! compact, UTF-8) written with a single flushed write each, so concurrent
//! readers see only whole lines and equal states serialize to equal bytes.
//!
//! Status moves only forward: ingested, split, filtered, purified,
//! captioned. rejected and deferred are terminal from any stage, and a
//! rejected entry must say why.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::caption_engine::StructuredCaption;
use crate::clip_logic::ClipRecord;
use crate::frame_io::StreamMeta;
use crate::purification::ScoreSet;
use crate::scene_split::DissolveCheck;
use crate::stat_filters::FilterReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest schema violation: {0}")]
    SchemaViolation(String),
    #[error("manifest serialization: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Source,
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ingested,
    Split,
    Filtered,
    Purified,
    Captioned,
    Rejected,
    Deferred,
}

impl Status {
    /// Position along the forward pipeline; terminal states have none.
    pub fn stage_rank(self) -> Option<u8> {
        match self {
            Status::Ingested => Some(0),
            Status::Split => Some(1),
            Status::Filtered => Some(2),
            Status::Purified => Some(3),
            Status::Captioned => Some(4),
            Status::Rejected | Status::Deferred => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.stage_rank().is_none()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ingested => "ingested",
            Status::Split => "split",
            Status::Filtered => "filtered",
            Status::Purified => "purified",
            Status::Captioned => "captioned",
            Status::Rejected => "rejected",
            Status::Deferred => "deferred",
        }
    }
}

/// One manifest line: the full curation snapshot of a source or clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub schema_version: u32,
    pub kind: EntryKind,
    pub clip: ClipRecord,
    pub stream: StreamMeta,
    pub status: Status,
    #[serde(default)]
    pub filter: Option<FilterReport>,
    #[serde(default)]
    pub scores: Option<ScoreSet>,
    #[serde(default)]
    pub captions: Option<StructuredCaption>,
    #[serde(default)]
    pub dissolve: Option<DissolveCheck>,
    #[serde(default)]
    pub reject_reasons: Vec<String>,
    #[serde(default)]
    pub theme_tags: Vec<String>,
}

impl ManifestEntry {
    pub fn id(&self) -> &str {
        &self.clip.id
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::SchemaViolation(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.clip.end_frame <= self.clip.start_frame {
            return Err(ManifestError::SchemaViolation(format!(
                "{}: empty frame range [{}, {})",
                self.clip.id, self.clip.start_frame, self.clip.end_frame
            )));
        }
        if self.status == Status::Rejected && self.reject_reasons.is_empty() {
            return Err(ManifestError::SchemaViolation(format!(
                "{}: rejected entry must carry reject_reasons",
                self.clip.id
            )));
        }
        Ok(())
    }
}

/// Canonical form: sorted keys, no insignificant whitespace. Equality of
/// entries is equality of these bytes.
pub fn canonical_line(entry: &ManifestEntry) -> Result<String, ManifestError> {
    let value = serde_json::to_value(entry).map_err(|e| ManifestError::Serialize(e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| ManifestError::Serialize(e.to_string()))
}

/// Single-writer manifest handle. Reopening an existing manifest reloads the
/// latest status per id so forward-only transitions survive restarts.
pub struct ManifestStore {
    path: PathBuf,
    file: File,
    latest: BTreeMap<String, Status>,
}

impl ManifestStore {
    pub fn open(path: &Path) -> Result<Self, ManifestError> {
        let mut latest = BTreeMap::new();
        if path.exists() {
            let outcome = read_all(path)?;
            for entry in outcome.entries {
                latest.insert(entry.clip.id.clone(), entry.status);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ManifestStore {
            path: path.to_path_buf(),
            file,
            latest,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn latest_status(&self, id: &str) -> Option<Status> {
        self.latest.get(id).copied()
    }

    /// Append one validated entry as one canonical line plus newline,
    /// written and flushed as a unit.
    pub fn append(&mut self, entry: &ManifestEntry) -> Result<(), ManifestError> {
        entry.validate()?;
        if let Some(prev) = self.latest.get(entry.id()) {
            let regression = match (prev.stage_rank(), entry.status.stage_rank()) {
                (None, _) => true,
                (Some(_), None) => false,
                (Some(old), Some(new)) => new <= old,
            };
            if regression {
                return Err(ManifestError::SchemaViolation(format!(
                    "{}: status may not move {} -> {}",
                    entry.id(),
                    prev.as_str(),
                    entry.status.as_str()
                )));
            }
        }
        let mut line = canonical_line(entry)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.latest.insert(entry.id().to_string(), entry.status);
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub entries: Vec<ManifestEntry>,
    /// (1-based line number, error) for every line that failed to parse or
    /// validate; such lines are skipped, never aborting the read.
    pub malformed: Vec<(usize, String)>,
}

/// Parse a manifest line by line, collecting malformed lines instead of
/// failing the batch. Only I/O errors abort.
pub fn read_all(path: &Path) -> Result<ReadOutcome, ManifestError> {
    let file = File::open(path)?;
    let mut out = ReadOutcome::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ManifestEntry>(&line) {
            Ok(entry) => match entry.validate() {
                Ok(()) => out.entries.push(entry),
                Err(e) => out.malformed.push((i + 1, e.to_string())),
            },
            Err(e) => out.malformed.push((i + 1, e.to_string())),
        }
    }
    Ok(out)
}

/// Fold an entry log to current state: the last entry per id wins.
pub fn latest_by_id(entries: &[ManifestEntry]) -> BTreeMap<String, &ManifestEntry> {
    let mut map = BTreeMap::new();
    for entry in entries {
        map.insert(entry.clip.id.clone(), entry);
    }
    map
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub id: String,
    /// Byte offset of the id's last line in the manifest.
    pub offset: u64,
}

/// Derive `{manifest}.idx` (JSONL, sorted by id) from the manifest alone.
pub fn write_index(manifest_path: &Path) -> Result<PathBuf, ManifestError> {
    let file = File::open(manifest_path)?;
    let mut reader = BufReader::new(file);
    let mut offsets: BTreeMap<String, u64> = BTreeMap::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if let Ok(entry) = serde_json::from_str::<ManifestEntry>(line.trim_end()) {
            offsets.insert(entry.clip.id, offset);
        }
        offset += n as u64;
    }
    let idx_path = manifest_path.with_extension("jsonl.idx");
    let mut out = String::new();
    for (id, offset) in offsets {
        let row = serde_json::to_string(&IndexRow { id, offset })
            .map_err(|e| ManifestError::Serialize(e.to_string()))?;
        let _ = writeln!(out, "{row}");
    }
    std::fs::write(&idx_path, out)?;
    Ok(idx_path)
}

/// Read the single entry whose line starts at `offset`.
pub fn read_entry_at(manifest_path: &Path, offset: u64) -> Result<ManifestEntry, ManifestError> {
    let mut file = File::open(manifest_path)?;
    file.seek(SeekFrom::Start(offset))?;
    let mut line = String::new();
    BufReader::new(file.take(1 << 24)).read_line(&mut line)?;
    let entry: ManifestEntry = serde_json::from_str(line.trim_end())
        .map_err(|e| ManifestError::SchemaViolation(format!("at offset {offset}: {e}")))?;
    entry.validate()?;
    Ok(entry)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FpsBuckets {
    /// fps <= 30
    pub fps_le_30: u64,
    /// 30 < fps < 50
    pub fps_30_50: u64,
    /// fps >= 50
    pub fps_ge_50: u64,
}

impl FpsBuckets {
    pub fn total(&self) -> u64 {
        self.fps_le_30 + self.fps_30_50 + self.fps_ge_50
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResolutionBuckets {
    /// width >= 7680
    #[serde(rename = "8k")]
    pub r8k: FpsBuckets,
    /// 3840 <= width < 7680
    #[serde(rename = "4k")]
    pub r4k: FpsBuckets,
    pub other: FpsBuckets,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_ids: u64,
    pub non_rejected: u64,
    pub buckets: ResolutionBuckets,
    /// Categories counted per caption: nine fields plus the summary.
    pub caption_categories: u32,
    /// field -> word count -> entries (captioned, non-rejected entries only).
    pub caption_words: BTreeMap<String, BTreeMap<u64, u64>>,
    pub rejection_reasons: BTreeMap<String, u64>,
    pub status_counts: BTreeMap<String, u64>,
    pub theme_tags: BTreeMap<String, u64>,
}

fn fps_bucket(buckets: &mut FpsBuckets, fps_num: u32, fps_den: u32) {
    let num = fps_num as u64;
    let den = fps_den as u64;
    if num <= 30 * den {
        buckets.fps_le_30 += 1;
    } else if num < 50 * den {
        buckets.fps_30_50 += 1;
    } else {
        buckets.fps_ge_50 += 1;
    }
}

/// Summary statistics over current clip states (last entry per id).
pub fn compute_stats(entries: &[ManifestEntry]) -> StatsReport {
    let latest = latest_by_id(entries);
    let mut report = StatsReport {
        caption_categories: 10,
        ..StatsReport::default()
    };
    report.total_ids = latest.len() as u64;
    for entry in latest.values() {
        *report
            .status_counts
            .entry(entry.status.as_str().to_string())
            .or_default() += 1;
        for tag in &entry.theme_tags {
            *report.theme_tags.entry(tag.clone()).or_default() += 1;
        }
        if entry.status == Status::Rejected {
            for reason in &entry.reject_reasons {
                *report.rejection_reasons.entry(reason.clone()).or_default() += 1;
            }
            continue;
        }
        report.non_rejected += 1;
        // Source entries are bookkeeping; only clips enter the buckets.
        if entry.kind != EntryKind::Clip {
            continue;
        }
        let res = if entry.clip.width >= 7680 {
            &mut report.buckets.r8k
        } else if entry.clip.width >= 3840 {
            &mut report.buckets.r4k
        } else {
            &mut report.buckets.other
        };
        fps_bucket(res, entry.clip.fps_num, entry.clip.fps_den);
        if let Some(captions) = &entry.captions {
            for (field, words) in captions.word_counts() {
                *report
                    .caption_words
                    .entry(field.to_string())
                    .or_default()
                    .entry(words as u64)
                    .or_default() += 1;
            }
        }
    }
    report
}

impl StatsReport {
    /// Fixed-width table for standard output.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        let row = |name: &str, b: &FpsBuckets| {
            format!(
                "{name:<12} {:>10} {:>10} {:>10} {:>10}\n",
                b.fps_le_30,
                b.fps_30_50,
                b.fps_ge_50,
                b.total()
            )
        };
        out.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>10} {:>10}\n",
            "resolution", "fps<=30", "30<fps<50", "fps>=50", "total"
        ));
        out.push_str(&row("8K", &self.buckets.r8k));
        out.push_str(&row("4K", &self.buckets.r4k));
        out.push_str(&row("other", &self.buckets.other));
        let total = FpsBuckets {
            fps_le_30: self.buckets.r8k.fps_le_30
                + self.buckets.r4k.fps_le_30
                + self.buckets.other.fps_le_30,
            fps_30_50: self.buckets.r8k.fps_30_50
                + self.buckets.r4k.fps_30_50
                + self.buckets.other.fps_30_50,
            fps_ge_50: self.buckets.r8k.fps_ge_50
                + self.buckets.r4k.fps_ge_50
                + self.buckets.other.fps_ge_50,
        };
        out.push_str(&row("total", &total));
        let _ = writeln!(out, "entries: {} ({} non-rejected)", self.total_ids, self.non_rejected);
        if !self.status_counts.is_empty() {
            let statuses: Vec<String> = self
                .status_counts
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            let _ = writeln!(out, "status: {}", statuses.join(" "));
        }
        if !self.rejection_reasons.is_empty() {
            let reasons: Vec<String> = self
                .rejection_reasons
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            let _ = writeln!(out, "rejections: {}", reasons.join(" "));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("stats serialize");
        serde_json::to_string_pretty(&value).expect("stats serialize")
    }
}
