//! Structured captions and training-prompt sampling.
//!
//! Each surviving clip carries nine category captions plus a summarized
//! paragraph. At training time, one prompt is sampled per clip: the base is
//! drawn uniformly from {brief, detailed, summarized}; a brief or detailed
//! base is extended with one of the remaining seven categories, drawn
//! uniformly. Sampling is keyed by (seed, clip id) through the portable rng
//! so corpora are bit-identical across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::frame_io::Frame;
use crate::provider::{sample_frame_indices, CaptionProvider, ProviderError, SummaryProvider};

/// Versioned instruction text sent to caption providers.
pub const STRUCTURED_CAPTION_PROMPT: &str =
    include_str!("../../../prompts/structured_caption_v1.txt");
/// Versioned instruction text sent to summary providers.
pub const SUMMARY_PROMPT: &str = include_str!("../../../prompts/summary_v1.txt");

/// The nine caption categories, in schema order.
pub const CATEGORY_NAMES: [&str; 9] = [
    "brief",
    "detailed",
    "background",
    "theme",
    "style",
    "shot_type",
    "camera_movement",
    "lighting",
    "atmosphere",
];

/// The seven categories eligible as prompt supplements, in draw order.
pub const SUPPLEMENT_CATEGORIES: [&str; 7] = [
    "background",
    "theme",
    "style",
    "shot_type",
    "camera_movement",
    "lighting",
    "atmosphere",
];

#[derive(Debug, thiserror::Error)]
pub enum CaptionError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("caption schema violation: {0}")]
    SchemaViolation(String),
    #[error("summary provider returned an empty summary")]
    EmptySummary,
    #[error("captions incomplete: {0}")]
    IncompleteCaptions(String),
}

/// The nine category captions. Serde enforces exact arity on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionFields {
    pub brief: String,
    pub detailed: String,
    pub background: String,
    pub theme: String,
    pub style: String,
    pub shot_type: String,
    pub camera_movement: String,
    pub lighting: String,
    pub atmosphere: String,
}

impl CaptionFields {
    /// (category, text) pairs in schema order.
    pub fn pairs(&self) -> [(&'static str, &str); 9] {
        [
            (CATEGORY_NAMES[0], self.brief.as_str()),
            (CATEGORY_NAMES[1], self.detailed.as_str()),
            (CATEGORY_NAMES[2], self.background.as_str()),
            (CATEGORY_NAMES[3], self.theme.as_str()),
            (CATEGORY_NAMES[4], self.style.as_str()),
            (CATEGORY_NAMES[5], self.shot_type.as_str()),
            (CATEGORY_NAMES[6], self.camera_movement.as_str()),
            (CATEGORY_NAMES[7], self.lighting.as_str()),
            (CATEGORY_NAMES[8], self.atmosphere.as_str()),
        ]
    }

    pub fn get(&self, category: &str) -> Option<&str> {
        self.pairs()
            .iter()
            .find(|(name, _)| *name == category)
            .map(|(_, text)| *text)
    }

    /// Strict parse from a JSON value: all nine categories, strings only,
    /// nothing extra.
    pub fn from_named_map(value: &serde_json::Value) -> Result<Self, String> {
        serde_json::from_value(value.clone()).map_err(|e| format!("caption object: {e}"))
    }

    /// Every category populated with non-whitespace text.
    pub fn validate_complete(&self) -> Result<(), CaptionError> {
        let empty: Vec<&str> = self
            .pairs()
            .iter()
            .filter(|(_, text)| text.trim().is_empty())
            .map(|(name, _)| *name)
            .collect();
        if empty.is_empty() {
            Ok(())
        } else {
            Err(CaptionError::SchemaViolation(format!(
                "empty fields: {}",
                empty.join(", ")
            )))
        }
    }
}

/// Nine category captions plus the integrated summary. `summarized` may be
/// empty only between captioning and summarization.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredCaption {
    #[serde(flatten)]
    pub fields: CaptionFields,
    pub summarized: String,
}

impl StructuredCaption {
    pub fn is_complete(&self) -> bool {
        self.fields.validate_complete().is_ok() && !self.summarized.trim().is_empty()
    }

    /// Whitespace-delimited word counts for all ten fields, schema order.
    pub fn word_counts(&self) -> [(&'static str, usize); 10] {
        let p = self.fields.pairs();
        let mut out = [("", 0usize); 10];
        for (i, (name, text)) in p.iter().enumerate() {
            out[i] = (name, text.split_whitespace().count());
        }
        out[9] = ("summarized", self.summarized.split_whitespace().count());
        out
    }

    pub fn total_words(&self) -> usize {
        self.word_counts().iter().map(|(_, n)| n).sum()
    }
}

/// Request the nine category captions for a clip. `frame_count` frames
/// spanning the clip are sent with the versioned prompt; every returned
/// field must be non-empty.
pub fn request_captions(
    clip_id: &str,
    frames: &[Frame],
    provider: &dyn CaptionProvider,
    frame_count: u32,
) -> Result<CaptionFields, CaptionError> {
    let indices = sample_frame_indices(frames.len() as u64, frame_count);
    let sampled: Vec<(u64, &Frame)> = indices.iter().map(|&i| (i, &frames[i as usize])).collect();
    let fields = provider.caption(clip_id, &sampled, STRUCTURED_CAPTION_PROMPT)?;
    fields.validate_complete()?;
    Ok(fields)
}

/// Integrate nine complete category captions into one summary paragraph.
pub fn summarize(
    clip_id: &str,
    fields: &CaptionFields,
    provider: &dyn SummaryProvider,
) -> Result<String, CaptionError> {
    fields.validate_complete()?;
    let summary = provider.summarize(clip_id, fields, SUMMARY_PROMPT)?;
    if summary.trim().is_empty() {
        return Err(CaptionError::EmptySummary);
    }
    Ok(summary)
}

/// Base caption drawn for a training prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptBase {
    Brief,
    Detailed,
    Summarized,
}

impl PromptBase {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptBase::Brief => "brief",
            PromptBase::Detailed => "detailed",
            PromptBase::Summarized => "summarized",
        }
    }
}

/// One sampled training prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSample {
    pub base: PromptBase,
    /// Present iff base is brief or detailed; one of the seven supplements.
    pub supplement: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptOptions {
    /// Prefix each part with "{Category}: " instead of bare concatenation.
    #[serde(default)]
    pub labeled: bool,
}

fn category_label(name: &str) -> &'static str {
    match name {
        "brief" => "Brief",
        "detailed" => "Detailed",
        "summarized" => "Summarized",
        "background" => "Background",
        "theme" => "Theme",
        "style" => "Style",
        "shot_type" => "ShotType",
        "camera_movement" => "CameraMovement",
        "lighting" => "Lighting",
        "atmosphere" => "Atmosphere",
        _ => unreachable!("category names are fixed"),
    }
}

/// Uniform draws for prompt sampling; implemented by the portable rng and by
/// forced-sequence test doubles.
pub trait SampleRng {
    fn next_below(&mut self, n: u64) -> u64;
}

impl SampleRng for crate::rng::Rng {
    fn next_below(&mut self, n: u64) -> u64 {
        crate::rng::Rng::next_below(self, n)
    }
}

/// Draw one training prompt. The base is uniform over brief, detailed and
/// summarized; a non-summarized base consumes a second draw, uniform over
/// the seven supplements, joined to the base text with one space.
pub fn sample_prompt(
    caption: &StructuredCaption,
    rng: &mut dyn SampleRng,
    opts: &PromptOptions,
) -> Result<PromptSample, CaptionError> {
    caption
        .fields
        .validate_complete()
        .map_err(|e| CaptionError::IncompleteCaptions(e.to_string()))?;
    if caption.summarized.trim().is_empty() {
        return Err(CaptionError::IncompleteCaptions(
            "empty fields: summarized".to_string(),
        ));
    }
    let part = |name: &str, text: &str| {
        if opts.labeled {
            format!("{}: {}", category_label(name), text)
        } else {
            text.to_string()
        }
    };
    let base = match rng.next_below(3) {
        0 => PromptBase::Brief,
        1 => PromptBase::Detailed,
        _ => PromptBase::Summarized,
    };
    if base == PromptBase::Summarized {
        return Ok(PromptSample {
            base,
            supplement: None,
            text: part("summarized", &caption.summarized),
        });
    }
    let base_text = match base {
        PromptBase::Brief => &caption.fields.brief,
        PromptBase::Detailed => &caption.fields.detailed,
        PromptBase::Summarized => unreachable!(),
    };
    let supplement = SUPPLEMENT_CATEGORIES[rng.next_below(7) as usize];
    let supplement_text = caption.fields.get(supplement).unwrap();
    Ok(PromptSample {
        base,
        supplement: Some(supplement.to_string()),
        text: format!(
            "{} {}",
            part(base.as_str(), base_text),
            part(supplement, supplement_text)
        ),
    })
}
