//! Stage orchestration over the manifest.
//!
//! Each stage selects its candidates by manifest status, runs the per-clip
//! work on a bounded worker pool, then appends results serially in clip-id
//! order. Scheduling therefore never reaches the output: a run with one
//! worker and a run with eight produce byte-identical manifests. Re-running
//! a stage skips clips that already advanced past it.
//!
//! Provider failure policy: an unreachable provider defers the affected
//! clips (terminal until a fresh ingest; curation fails closed), a provider
//! that answers with garbage aborts the stage, and `strict_providers`
//! upgrades deferrals to hard errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::caption_engine::{
    request_captions, sample_prompt, summarize, CaptionError, PromptOptions, StructuredCaption,
};
use crate::clip_logic::{classify, extract_shorts_from_long, ClipClass, ClipRecord};
use crate::config::PipelineConfig;
use crate::frame_io::{decode_y4m_range, probe_y4m, Frame};
use crate::manifest_store::{
    latest_by_id, read_all, EntryKind, ManifestEntry, ManifestStore, Status, SCHEMA_VERSION,
};
use crate::provider::{ProviderError, ProviderSet};
use crate::purification::{fetch_scores, gate_clip, FetchError, PurifyError};
use crate::rng::Rng;
use crate::scene_split::{content_scores, detect_cuts, dissolve_check};
use crate::stat_filters::{evaluate_frame, text_union_ratio, FrameFlags};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] crate::manifest_store::ManifestError),
    #[error(transparent)]
    FrameIo(#[from] crate::frame_io::FrameIoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no media file for source {0} (expected {0}.y4m in the media directory)")]
    MissingMedia(String),
    #[error("provider contract broken: {0}")]
    Provider(String),
    #[error("{0}")]
    Invalid(String),
}

/// Per-stage outcome counts. `examined` clips matched the stage's input
/// status; every examined clip ends up advanced, rejected, or deferred.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageSummary {
    pub stage: &'static str,
    pub examined: u64,
    pub advanced: u64,
    pub rejected: u64,
    pub deferred: u64,
    pub skipped: u64,
}

impl StageSummary {
    /// 0 = clean, 2 = completed with deferred clips.
    pub fn exit_code(&self) -> i32 {
        if self.deferred > 0 {
            2
        } else {
            0
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: examined {}, advanced {}, rejected {}, deferred {}, skipped {}",
            self.stage, self.examined, self.advanced, self.rejected, self.deferred, self.skipped
        )
    }
}

/// Everything a stage needs besides the manifest itself.
pub struct StageEnv<'a> {
    pub config: &'a PipelineConfig,
    pub media_dir: &'a Path,
    pub providers: &'a ProviderSet,
    pub strict_providers: bool,
}

fn worker_pool(workers: u32) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1) as usize)
        .build()
        .map_err(|e| PipelineError::Invalid(format!("cannot build worker pool: {e}")))
}

fn media_path(dir: &Path, source_id: &str) -> Result<PathBuf, PipelineError> {
    let path = dir.join(format!("{source_id}.y4m"));
    if !path.is_file() {
        return Err(PipelineError::MissingMedia(source_id.to_string()));
    }
    Ok(path)
}

/// Latest snapshot per id, in id order. A manifest with malformed lines is
/// refused: stages must not act on partially readable state.
fn latest_entries(path: &Path) -> Result<Vec<ManifestEntry>, PipelineError> {
    let outcome = read_all(path)?;
    if let Some((line, err)) = outcome.malformed.first() {
        return Err(PipelineError::Invalid(format!(
            "manifest has {} malformed line(s); first at line {line}: {err}",
            outcome.malformed.len()
        )));
    }
    let latest = latest_by_id(&outcome.entries);
    Ok(latest.into_values().cloned().collect())
}

fn clip_id(source_id: &str, start: u64, end: u64) -> String {
    format!("{source_id}:{start:06}-{end:06}")
}

fn decode_clip(env: &StageEnv, entry: &ManifestEntry) -> Result<Vec<Frame>, PipelineError> {
    let path = media_path(env.media_dir, &entry.clip.source_id)?;
    Ok(decode_y4m_range(
        &path,
        entry.clip.start_frame,
        entry.clip.end_frame,
    )?)
}

/// Run `work` over every candidate on the pool, then append all produced
/// entries in id order. Results are collected per candidate, so scheduling
/// order cannot influence the manifest.
fn run_stage<F>(
    store: &mut ManifestStore,
    env: &StageEnv,
    stage: &'static str,
    eligible: impl Fn(&ManifestEntry) -> bool,
    work: F,
) -> Result<StageSummary, PipelineError>
where
    F: Fn(&ManifestEntry) -> Result<Vec<ManifestEntry>, PipelineError> + Sync,
{
    let all = latest_entries(store.path())?;
    let (candidates, rest): (Vec<&ManifestEntry>, Vec<&ManifestEntry>) =
        all.iter().partition(|&e| eligible(e));
    let pool = worker_pool(env.config.worker_count)?;
    let results: Vec<Result<Vec<ManifestEntry>, PipelineError>> =
        pool.install(|| candidates.par_iter().map(|e| work(e)).collect());

    let mut summary = StageSummary {
        stage,
        examined: candidates.len() as u64,
        skipped: rest.len() as u64,
        ..StageSummary::default()
    };
    let mut produced = Vec::new();
    for result in results {
        produced.extend(result?);
    }
    produced.sort_by(|a, b| a.id().cmp(b.id()));
    for entry in &produced {
        match entry.status {
            Status::Rejected => summary.rejected += 1,
            Status::Deferred => summary.deferred += 1,
            _ => summary.advanced += 1,
        }
        store.append(entry)?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Register every `*.y4m` in the media directory. Sources normally enter at
/// `ingested` awaiting scene splitting; `as_clips` registers each file as an
/// already-split single-shot clip (pre-cut corpora, synthetic acceptance
/// clips), entering at `split` so filtering picks it up directly.
pub fn ingest(
    store: &mut ManifestStore,
    env: &StageEnv,
    as_clips: bool,
) -> Result<StageSummary, PipelineError> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for dirent in std::fs::read_dir(env.media_dir)? {
        let path = dirent?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("y4m") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    PipelineError::Invalid(format!("non-UTF-8 media name: {}", path.display()))
                })?
                .to_string();
            files.push((stem, path));
        }
    }
    files.sort();

    let mut summary = StageSummary {
        stage: "ingest",
        ..StageSummary::default()
    };
    for (id, path) in files {
        if store.latest_status(&id).is_some() {
            summary.skipped += 1;
            continue;
        }
        summary.examined += 1;
        let meta = probe_y4m(&path)?;
        let n = meta.frame_count.unwrap_or(0);
        if n == 0 {
            return Err(PipelineError::Invalid(format!(
                "{}: stream has no frames",
                path.display()
            )));
        }
        let duration = n as f64 * meta.fps_den as f64 / meta.fps_num as f64;
        let set = classify(duration)
            .map_err(|e| PipelineError::Invalid(format!("{id}: {e}")))?;
        let entry = ManifestEntry {
            schema_version: SCHEMA_VERSION,
            kind: if as_clips { EntryKind::Clip } else { EntryKind::Source },
            clip: ClipRecord {
                id: id.clone(),
                source_id: id.clone(),
                start_frame: 0,
                end_frame: n,
                fps_num: meta.fps_num,
                fps_den: meta.fps_den,
                width: meta.width,
                height: meta.height,
                set,
            },
            stream: meta,
            status: if as_clips { Status::Split } else { Status::Ingested },
            filter: None,
            scores: None,
            captions: None,
            dissolve: None,
            reject_reasons: Vec::new(),
            theme_tags: Vec::new(),
        };
        store.append(&entry)?;
        summary.advanced += 1;
    }
    Ok(summary)
}

/// Detect shot boundaries in each ingested source and emit one clip entry
/// per curatable window: short segments directly, 10 s windows cut from
/// long segments, and sub-3 s segments as rejected (reason "duration").
pub fn split(store: &mut ManifestStore, env: &StageEnv) -> Result<StageSummary, PipelineError> {
    let config = env.config;
    run_stage(
        store,
        env,
        "split",
        |e| e.kind == EntryKind::Source && e.status == Status::Ingested,
        |source| {
            let path = media_path(env.media_dir, &source.clip.source_id)?;
            let n = source.clip.end_frame - source.clip.start_frame;
            let frames = decode_y4m_range(&path, 0, n)?;
            let scores = content_scores(&frames)
                .map_err(|e| PipelineError::Invalid(format!("{}: {e}", source.id())))?;
            let cuts = detect_cuts(&scores, &config.split);

            let make_clip = |record: ClipRecord| -> Result<ManifestEntry, PipelineError> {
                let mut entry = source.clone();
                entry.kind = EntryKind::Clip;
                entry.status = Status::Split;
                entry.clip = record;

                let (a, b) = (entry.clip.start_frame as usize, entry.clip.end_frame as usize);
                if b - a >= 10 {
                    if let Some(embed) = &env.providers.embedding {
                        match dissolve_check(&entry.clip.id, &frames[a..b], embed.as_ref(), &config.split) {
                            Ok(check) => {
                                if check.flagged && config.split.reject_dissolved {
                                    entry.status = Status::Rejected;
                                    entry.reject_reasons = vec!["dissolve".to_string()];
                                }
                                entry.dissolve = Some(check);
                            }
                            // Annotation only: an unreachable embedding
                            // backend loses the annotation, not the clip.
                            Err(crate::scene_split::SceneSplitError::ProviderUnavailable(
                                ProviderError::Unavailable { .. },
                            )) if !env.strict_providers => {}
                            Err(e) => {
                                return Err(PipelineError::Provider(format!(
                                    "{}: {e}",
                                    entry.clip.id
                                )))
                            }
                        }
                    }
                }
                Ok(entry)
            };

            let mut out = Vec::new();
            for (a, b) in cuts.segments() {
                let (a, b) = (a as u64, b as u64);
                if a == b {
                    continue;
                }
                let record = ClipRecord {
                    id: clip_id(&source.clip.source_id, a, b),
                    source_id: source.clip.source_id.clone(),
                    start_frame: a,
                    end_frame: b,
                    fps_num: source.clip.fps_num,
                    fps_den: source.clip.fps_den,
                    width: source.clip.width,
                    height: source.clip.height,
                    set: ClipClass::Discard,
                };
                let duration = (b - a) as f64 * record.fps_den as f64 / record.fps_num as f64;
                let set = classify(duration)
                    .map_err(|e| PipelineError::Invalid(format!("{}: {e}", record.id)))?;
                match set {
                    ClipClass::Discard => {
                        let mut entry = source.clone();
                        entry.kind = EntryKind::Clip;
                        entry.status = Status::Rejected;
                        entry.clip = record;
                        entry.reject_reasons = vec!["duration".to_string()];
                        out.push(entry);
                    }
                    ClipClass::Short => {
                        out.push(make_clip(ClipRecord {
                            set: ClipClass::Short,
                            ..record
                        })?);
                    }
                    ClipClass::Long => {
                        let parent = ClipRecord {
                            set: ClipClass::Long,
                            ..record
                        };
                        let windows = extract_shorts_from_long(&parent, config.side_anchor)
                            .map_err(|e| PipelineError::Invalid(format!("{}: {e}", parent.id)))?;
                        for window in windows {
                            out.push(make_clip(window)?);
                        }
                    }
                }
            }
            let mut done = source.clone();
            done.status = Status::Split;
            out.push(done);
            Ok(out)
        },
    )
}

/// Text-detection outcome for one clip.
enum TextScan {
    /// No detector configured: the text filter is recorded as not evaluated.
    NoDetector,
    /// Detector configured but unreachable: the clip must be deferred.
    Unavailable,
    /// Per-frame verdicts, sampled every `ocr_sample_interval` frames and
    /// propagated forward across each sampling interval.
    Flags(Vec<bool>),
}

fn text_flags(
    env: &StageEnv,
    entry: &ManifestEntry,
    frames: &[Frame],
) -> Result<TextScan, PipelineError> {
    let t = &env.config.filters;
    let Some(detector) = &env.providers.textboxes else {
        if env.strict_providers {
            return Err(PipelineError::Provider(
                "text detection provider required under strict-providers".to_string(),
            ));
        }
        return Ok(TextScan::NoDetector);
    };
    let k = t.ocr_sample_interval as usize;
    let sampled: Vec<(u64, &Frame)> = frames
        .iter()
        .enumerate()
        .step_by(k)
        .map(|(i, f)| (i as u64, f))
        .collect();
    let boxes = match detector.detect(&entry.clip.id, &sampled) {
        Ok(boxes) => boxes,
        Err(ProviderError::Unavailable { .. }) if !env.strict_providers => {
            return Ok(TextScan::Unavailable)
        }
        Err(e) => return Err(PipelineError::Provider(format!("{}: {e}", entry.clip.id))),
    };
    let mut flags = vec![false; frames.len()];
    for ((i, _), frame_boxes) in sampled.iter().zip(boxes.iter()) {
        let ratio = text_union_ratio(frame_boxes, entry.clip.width, entry.clip.height)
            .map_err(|e| PipelineError::Invalid(format!("{}: {e}", entry.clip.id)))?;
        let flag = ratio > t.text_area_ratio;
        let i = *i as usize;
        for slot in flags.iter_mut().skip(i).take(k.min(frames.len() - i)) {
            *slot = flag;
        }
    }
    Ok(TextScan::Flags(flags))
}

/// Run the four statistical filters over every split short clip.
pub fn filter(store: &mut ManifestStore, env: &StageEnv) -> Result<StageSummary, PipelineError> {
    let t = &env.config.filters;
    run_stage(
        store,
        env,
        "filter",
        |e| e.kind == EntryKind::Clip && e.status == Status::Split && e.clip.set == ClipClass::Short,
        |entry| {
            let frames = decode_clip(env, entry)?;
            let text = match text_flags(env, entry, &frames)? {
                TextScan::NoDetector => None,
                TextScan::Unavailable => {
                    let mut deferred = entry.clone();
                    deferred.status = Status::Deferred;
                    deferred.reject_reasons = vec!["unavailable:textboxes".to_string()];
                    return Ok(vec![deferred]);
                }
                TextScan::Flags(flags) => Some(flags),
            };
            let mut flags: Vec<FrameFlags> = Vec::with_capacity(frames.len());
            for (i, frame) in frames.iter().enumerate() {
                let mut fl = evaluate_frame(frame, None, t)
                    .map_err(|e| PipelineError::Invalid(format!("{}: {e}", entry.clip.id)))?;
                fl.text = text.as_ref().map(|v| v[i]);
                flags.push(fl);
            }
            let report = crate::stat_filters::aggregate_clip(&flags, t)
                .map_err(|e| PipelineError::Invalid(format!("{}: {e}", entry.clip.id)))?;
            let mut next = entry.clone();
            next.filter = Some(report.clone());
            if report.pass {
                next.status = Status::Filtered;
            } else {
                next.status = Status::Rejected;
                next.reject_reasons = report
                    .failed_filters()
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
            }
            Ok(vec![next])
        },
    )
}

/// Model-based gates over every filtered clip. Clips whose scores cannot be
/// assembled are deferred, never passed.
pub fn purify(store: &mut ManifestStore, env: &StageEnv) -> Result<StageSummary, PipelineError> {
    let t = &env.config.purify;
    run_stage(
        store,
        env,
        "purify",
        |e| e.kind == EntryKind::Clip && e.status == Status::Filtered,
        |entry| {
            let frames = decode_clip(env, entry)?;
            // Whatever caption text exists at scoring time; none on the
            // standard stage order, where captioning follows purification.
            let caption = entry
                .captions
                .as_ref()
                .map(|c| c.fields.brief.clone())
                .unwrap_or_default();
            let mut next = entry.clone();
            match fetch_scores(&entry.clip.id, &frames, &caption, env.providers, t) {
                Ok(scores) => {
                    next.scores = Some(scores.clone());
                    match gate_clip(&scores, t) {
                        Ok(decision) if decision.pass => next.status = Status::Purified,
                        Ok(decision) => {
                            next.status = Status::Rejected;
                            next.reject_reasons = decision.reasons;
                        }
                        Err(PurifyError::IncompleteScores(missing)) => {
                            if env.strict_providers {
                                return Err(PipelineError::Provider(format!(
                                    "{}: no provider for {}",
                                    entry.clip.id,
                                    missing.join(", ")
                                )));
                            }
                            next.status = Status::Deferred;
                            next.reject_reasons = missing
                                .iter()
                                .map(|field| format!("unavailable:{field}"))
                                .collect();
                        }
                        Err(e) => {
                            return Err(PipelineError::Invalid(format!("{}: {e}", entry.clip.id)))
                        }
                    }
                }
                Err(FetchError::Provider(ProviderError::Unavailable { endpoint, .. }))
                    if !env.strict_providers =>
                {
                    next.status = Status::Deferred;
                    next.reject_reasons = vec![format!("unavailable:{endpoint}")];
                }
                Err(FetchError::Provider(e)) => {
                    return Err(PipelineError::Provider(format!("{}: {e}", entry.clip.id)))
                }
                Err(FetchError::Motion(e)) => {
                    return Err(PipelineError::Invalid(format!("{}: {e}", entry.clip.id)))
                }
            }
            Ok(vec![next])
        },
    )
}

/// Structured captioning plus summarization of every purified clip.
pub fn caption(store: &mut ManifestStore, env: &StageEnv) -> Result<StageSummary, PipelineError> {
    run_stage(
        store,
        env,
        "caption",
        |e| e.kind == EntryKind::Clip && e.status == Status::Purified,
        |entry| {
            let mut missing = Vec::new();
            if env.providers.caption.is_none() {
                missing.push("caption");
            }
            if env.providers.summary.is_none() {
                missing.push("summary");
            }
            if !missing.is_empty() {
                if env.strict_providers {
                    return Err(PipelineError::Provider(format!(
                        "{}: no provider for {}",
                        entry.clip.id,
                        missing.join(", ")
                    )));
                }
                let mut deferred = entry.clone();
                deferred.status = Status::Deferred;
                deferred.reject_reasons = missing
                    .iter()
                    .map(|kind| format!("unavailable:{kind}"))
                    .collect();
                return Ok(vec![deferred]);
            }
            let captioner = env.providers.caption.as_deref().unwrap();
            let summarizer = env.providers.summary.as_deref().unwrap();

            let frames = decode_clip(env, entry)?;
            let mut next = entry.clone();
            let outcome = request_captions(
                &entry.clip.id,
                &frames,
                captioner,
                env.config.caption_frames,
            )
            .and_then(|fields| {
                let summarized = summarize(&entry.clip.id, &fields, summarizer)?;
                Ok(StructuredCaption { fields, summarized })
            });
            match outcome {
                Ok(captions) => {
                    next.captions = Some(captions);
                    next.status = Status::Captioned;
                }
                Err(CaptionError::Provider(ProviderError::Unavailable { endpoint, .. }))
                    if !env.strict_providers =>
                {
                    next.status = Status::Deferred;
                    next.reject_reasons = vec![format!("unavailable:{endpoint}")];
                }
                Err(e) => {
                    return Err(PipelineError::Provider(format!("{}: {e}", entry.clip.id)))
                }
            }
            Ok(vec![next])
        },
    )
}

/// Draw training prompts for every captioned clip, one JSON line per draw.
/// Streams are keyed by (seed, clip id), so output is independent of clip
/// count and ordering, and two runs with one seed are byte-identical.
pub fn sample(
    manifest_path: &Path,
    config: &PipelineConfig,
    draws: u32,
    out: &mut dyn Write,
) -> Result<u64, PipelineError> {
    let entries = latest_entries(manifest_path)?;
    let opts = PromptOptions {
        labeled: config.labeled_prompts,
    };
    let mut written = 0u64;
    for entry in &entries {
        if entry.status != Status::Captioned {
            continue;
        }
        let Some(captions) = &entry.captions else {
            continue;
        };
        let mut rng = Rng::for_stream(config.seed, entry.id());
        for _ in 0..draws {
            let prompt = sample_prompt(captions, &mut rng, &opts)
                .map_err(|e| PipelineError::Invalid(format!("{}: {e}", entry.id())))?;
            let line = serde_json::json!({
                "clip_id": entry.id(),
                "base": prompt.base,
                "supplement": prompt.supplement,
                "text": prompt.text,
            });
            writeln!(out, "{line}")?;
            written += 1;
        }
    }
    Ok(written)
}

/// Latest-state snapshot per id, exposed for verdict extraction and tests.
pub fn manifest_snapshot(
    manifest_path: &Path,
) -> Result<BTreeMap<String, ManifestEntry>, PipelineError> {
    Ok(latest_entries(manifest_path)?
        .into_iter()
        .map(|e| (e.id().to_string(), e))
        .collect())
}
