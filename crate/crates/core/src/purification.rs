//! Model-based purification gates.
//!
//! A clip survives purification only when four independent signals agree:
//! a video-text semantic score, a temporal motion score, a caption-to-video
//! similarity score, and sixteen named bad-video attribute flags. Scores the
//! pipeline cannot obtain leave the clip deferred, never silently passed.
//!
//! The motion score is computed natively by exhaustive block matching so it
//! is deterministic and oracle-verifiable; a flow provider endpoint can
//! override it when a learned model is available.

use serde::{Deserialize, Serialize};

use crate::frame_io::Frame;
use crate::provider::{sample_frame_indices, ProviderError, ProviderSet};

/// The fixed registry of bad-video attributes, in canonical order.
pub const ATTRIBUTE_NAMES: [&str; 16] = [
    "Subtitles",
    "AbnormalColorPatches",
    "GreenScreen",
    "BlueScreen",
    "TransitionEffects",
    "Watermarks",
    "Stickers",
    "Borders",
    "SplitScreens",
    "ScreenRecordings",
    "PictureInPicture",
    "StillVideo",
    "BlurredVideo",
    "ScrambledVideo",
    "SolidColorBackgrounds",
    "Other",
];

/// Exactly sixteen named boolean judgments. Serde enforces exact arity:
/// a missing, extra, or non-boolean field is a deserialization error.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeFlags {
    #[serde(rename = "Subtitles")]
    pub subtitles: bool,
    #[serde(rename = "AbnormalColorPatches")]
    pub abnormal_color_patches: bool,
    #[serde(rename = "GreenScreen")]
    pub green_screen: bool,
    #[serde(rename = "BlueScreen")]
    pub blue_screen: bool,
    #[serde(rename = "TransitionEffects")]
    pub transition_effects: bool,
    #[serde(rename = "Watermarks")]
    pub watermarks: bool,
    #[serde(rename = "Stickers")]
    pub stickers: bool,
    #[serde(rename = "Borders")]
    pub borders: bool,
    #[serde(rename = "SplitScreens")]
    pub split_screens: bool,
    #[serde(rename = "ScreenRecordings")]
    pub screen_recordings: bool,
    #[serde(rename = "PictureInPicture")]
    pub picture_in_picture: bool,
    #[serde(rename = "StillVideo")]
    pub still_video: bool,
    #[serde(rename = "BlurredVideo")]
    pub blurred_video: bool,
    #[serde(rename = "ScrambledVideo")]
    pub scrambled_video: bool,
    #[serde(rename = "SolidColorBackgrounds")]
    pub solid_color_backgrounds: bool,
    #[serde(rename = "Other")]
    pub other: bool,
}

impl AttributeFlags {
    pub fn none() -> Self {
        Self::default()
    }

    /// (name, value) pairs in registry order.
    pub fn pairs(&self) -> [(&'static str, bool); 16] {
        [
            (ATTRIBUTE_NAMES[0], self.subtitles),
            (ATTRIBUTE_NAMES[1], self.abnormal_color_patches),
            (ATTRIBUTE_NAMES[2], self.green_screen),
            (ATTRIBUTE_NAMES[3], self.blue_screen),
            (ATTRIBUTE_NAMES[4], self.transition_effects),
            (ATTRIBUTE_NAMES[5], self.watermarks),
            (ATTRIBUTE_NAMES[6], self.stickers),
            (ATTRIBUTE_NAMES[7], self.borders),
            (ATTRIBUTE_NAMES[8], self.split_screens),
            (ATTRIBUTE_NAMES[9], self.screen_recordings),
            (ATTRIBUTE_NAMES[10], self.picture_in_picture),
            (ATTRIBUTE_NAMES[11], self.still_video),
            (ATTRIBUTE_NAMES[12], self.blurred_video),
            (ATTRIBUTE_NAMES[13], self.scrambled_video),
            (ATTRIBUTE_NAMES[14], self.solid_color_backgrounds),
            (ATTRIBUTE_NAMES[15], self.other),
        ]
    }

    pub fn set(&mut self, name: &str, value: bool) -> Result<(), String> {
        let slot = match name {
            "Subtitles" => &mut self.subtitles,
            "AbnormalColorPatches" => &mut self.abnormal_color_patches,
            "GreenScreen" => &mut self.green_screen,
            "BlueScreen" => &mut self.blue_screen,
            "TransitionEffects" => &mut self.transition_effects,
            "Watermarks" => &mut self.watermarks,
            "Stickers" => &mut self.stickers,
            "Borders" => &mut self.borders,
            "SplitScreens" => &mut self.split_screens,
            "ScreenRecordings" => &mut self.screen_recordings,
            "PictureInPicture" => &mut self.picture_in_picture,
            "StillVideo" => &mut self.still_video,
            "BlurredVideo" => &mut self.blurred_video,
            "ScrambledVideo" => &mut self.scrambled_video,
            "SolidColorBackgrounds" => &mut self.solid_color_backgrounds,
            "Other" => &mut self.other,
            _ => return Err(format!("unknown attribute \"{name}\"")),
        };
        *slot = value;
        Ok(())
    }

    pub fn any(&self) -> bool {
        self.pairs().iter().any(|(_, v)| *v)
    }

    /// Names of raised flags, in registry order.
    pub fn flagged(&self) -> Vec<&'static str> {
        self.pairs()
            .iter()
            .filter(|(_, v)| *v)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Strict parse from a JSON object: all sixteen names, booleans only,
    /// nothing extra.
    pub fn from_named_map(map: &serde_json::Map<String, serde_json::Value>) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::Object(map.clone()))
            .map_err(|e| format!("attribute object: {e}"))
    }
}

/// The four purification signals for one clip. All must be present before
/// gating; absent signals defer the clip.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub vtss: Option<f64>,
    pub motion: Option<f64>,
    pub caption_sim: Option<f64>,
    pub attributes: Option<AttributeFlags>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurifyThresholds {
    /// Minimum video-text semantic score (inclusive).
    #[serde(default = "default_vtss_min")]
    pub vtss_min: f64,
    /// Retained motion band, inclusive on both ends.
    #[serde(default = "default_motion_min")]
    pub motion_min: f64,
    #[serde(default = "default_motion_max")]
    pub motion_max: f64,
    /// Minimum caption-to-video similarity (inclusive).
    #[serde(default = "default_caption_sim_min")]
    pub caption_sim_min: f64,
    /// Frame stride between motion-sampled pairs.
    #[serde(default = "default_flow_sample_interval")]
    pub flow_sample_interval: u32,
    /// Frames are downscaled so the long edge is at most this before matching.
    #[serde(default = "default_flow_downscale")]
    pub flow_downscale: u32,
}

fn default_vtss_min() -> f64 {
    0.01
}
fn default_motion_min() -> f64 {
    0.1
}
fn default_motion_max() -> f64 {
    100.0
}
fn default_caption_sim_min() -> f64 {
    0.2
}
fn default_flow_sample_interval() -> u32 {
    8
}
fn default_flow_downscale() -> u32 {
    512
}

impl Default for PurifyThresholds {
    fn default() -> Self {
        PurifyThresholds {
            vtss_min: default_vtss_min(),
            motion_min: default_motion_min(),
            motion_max: default_motion_max(),
            caption_sim_min: default_caption_sim_min(),
            flow_sample_interval: default_flow_sample_interval(),
            flow_downscale: default_flow_downscale(),
        }
    }
}

impl PurifyThresholds {
    pub fn validate(&self) -> Result<(), PurifyError> {
        if !(self.motion_min < self.motion_max) {
            return Err(PurifyError::InvalidThresholds(format!(
                "motion_min {} must be below motion_max {}",
                self.motion_min, self.motion_max
            )));
        }
        if self.flow_sample_interval == 0 || self.flow_downscale == 0 {
            return Err(PurifyError::InvalidThresholds(
                "flow_sample_interval and flow_downscale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Block matching operates on 16x16 tiles with an exhaustive +/-8 search.
/// These are part of the scoring contract, not tuning knobs: changing them
/// changes every recorded motion score.
pub const MOTION_BLOCK: u32 = 16;
pub const MOTION_SEARCH: i64 = 8;

#[derive(Debug, thiserror::Error)]
pub enum PurifyError {
    #[error("motion scoring needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frames differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("incomplete score set, missing: {}", .0.join(", "))]
    IncompleteScores(Vec<&'static str>),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateDecision {
    pub pass: bool,
    /// Every violated gate: "vtss", "motion", "caption_sim", "attribute:Name".
    pub reasons: Vec<String>,
}

/// Final accept/reject decision over a complete score set. Comparisons are
/// written so NaN scores fail their gate instead of passing it.
pub fn gate_clip(scores: &ScoreSet, t: &PurifyThresholds) -> Result<GateDecision, PurifyError> {
    let mut missing = Vec::new();
    if scores.vtss.is_none() {
        missing.push("vtss");
    }
    if scores.motion.is_none() {
        missing.push("motion");
    }
    if scores.caption_sim.is_none() {
        missing.push("caption_sim");
    }
    if scores.attributes.is_none() {
        missing.push("attributes");
    }
    if !missing.is_empty() {
        return Err(PurifyError::IncompleteScores(missing));
    }
    let vtss = scores.vtss.unwrap();
    let motion = scores.motion.unwrap();
    let sim = scores.caption_sim.unwrap();
    let attrs = scores.attributes.as_ref().unwrap();

    let mut reasons = Vec::new();
    if !(vtss >= t.vtss_min) {
        reasons.push("vtss".to_string());
    }
    if !(motion >= t.motion_min && motion <= t.motion_max) {
        reasons.push("motion".to_string());
    }
    if !(sim >= t.caption_sim_min) {
        reasons.push("caption_sim".to_string());
    }
    for name in attrs.flagged() {
        reasons.push(format!("attribute:{name}"));
    }
    Ok(GateDecision {
        pass: reasons.is_empty(),
        reasons,
    })
}

/// Nearest-neighbor luma downscale so the long edge is at most
/// `max_long_edge`; aspect preserved with half-up rounding, source pixels
/// chosen at destination pixel centers. Returns (width, height, luma).
pub fn downscale_luma(frame: &Frame, max_long_edge: u32) -> (u32, u32, Vec<u8>) {
    let luma = frame.luma_or_gray();
    let (w, h) = (frame.width, frame.height);
    let long = w.max(h);
    if long <= max_long_edge {
        return (w, h, luma);
    }
    let scale_dim = |dim: u32| -> u32 {
        // round-half-up of dim * max_long_edge / long
        let n = 2 * dim as u64 * max_long_edge as u64 + long as u64;
        ((n / (2 * long as u64)) as u32).max(1)
    };
    let (nw, nh) = if w >= h {
        (max_long_edge, scale_dim(h))
    } else {
        (scale_dim(w), max_long_edge)
    };
    let mut out = Vec::with_capacity(nw as usize * nh as usize);
    for y in 0..nh {
        let sy = (((2 * y as u64 + 1) * h as u64) / (2 * nh as u64)).min(h as u64 - 1);
        for x in 0..nw {
            let sx = (((2 * x as u64 + 1) * w as u64) / (2 * nw as u64)).min(w as u64 - 1);
            out.push(luma[(sy * w as u64 + sx) as usize]);
        }
    }
    (nw, nh, out)
}

/// Best displacement for the 16x16 block of `cur` at (x0, y0), searched
/// exhaustively in `prev` over dx, dy in [-8, 8]. Ties fall to the smaller
/// displacement magnitude, then to scan order (dy, then dx, ascending).
/// Caller guarantees the full search window is in bounds.
fn best_block_displacement(
    prev: &[u8],
    cur: &[u8],
    w: usize,
    x0: usize,
    y0: usize,
) -> (i64, i64) {
    let b = MOTION_BLOCK as usize;
    let mut best = (0i64, 0i64);
    let mut best_sad = u64::MAX;
    let mut best_mag = i64::MAX;
    for dy in -MOTION_SEARCH..=MOTION_SEARCH {
        for dx in -MOTION_SEARCH..=MOTION_SEARCH {
            let mut sad = 0u64;
            for j in 0..b {
                let cur_row = (y0 + j) * w + x0;
                let prev_row = ((y0 as i64 + dy) as usize + j) * w + (x0 as i64 + dx) as usize;
                for i in 0..b {
                    let a = cur[cur_row + i] as i64;
                    let p = prev[prev_row + i] as i64;
                    sad += (a - p).unsigned_abs();
                }
            }
            let mag = dx * dx + dy * dy;
            if sad < best_sad || (sad == best_sad && mag < best_mag) {
                best_sad = sad;
                best_mag = mag;
                best = (dx, dy);
            }
        }
    }
    best
}

/// Mean block displacement magnitude between two equally sized frames,
/// after downscaling. Only blocks whose full search window lies inside the
/// frame are scored, so a pure translation of at most the search radius is
/// recovered exactly on every scored block. No scorable blocks yields 0.0:
/// a frame too small to measure is treated as motionless rather than an
/// error, which the motion_min gate then rejects.
pub fn pair_motion_score(prev: &Frame, cur: &Frame, t: &PurifyThresholds) -> Result<f64, PurifyError> {
    if prev.width != cur.width || prev.height != cur.height {
        return Err(PurifyError::DimensionMismatch(
            prev.width,
            prev.height,
            cur.width,
            cur.height,
        ));
    }
    let (w, h, prev_luma) = downscale_luma(prev, t.flow_downscale);
    let (_, _, cur_luma) = downscale_luma(cur, t.flow_downscale);
    let (w, h) = (w as usize, h as usize);
    let b = MOTION_BLOCK as usize;
    let r = MOTION_SEARCH as usize;

    let mut total = 0.0f64;
    let mut count = 0u64;
    let mut y0 = 0usize;
    while y0 + b <= h {
        if y0 >= r && y0 + b + r <= h {
            let mut x0 = 0usize;
            while x0 + b <= w {
                if x0 >= r && x0 + b + r <= w {
                    let (dx, dy) = best_block_displacement(&prev_luma, &cur_luma, w, x0, y0);
                    total += ((dx * dx + dy * dy) as f64).sqrt();
                    count += 1;
                }
                x0 += b;
            }
        }
        y0 += b;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Clip motion score: mean pair score over frame pairs (i, i+e) for
/// i = 0, e, 2e, ... where e = min(flow_sample_interval, n-1).
pub fn clip_motion_score(frames: &[Frame], t: &PurifyThresholds) -> Result<f64, PurifyError> {
    let n = frames.len();
    if n < 2 {
        return Err(PurifyError::TooFewFrames(n));
    }
    let e = (t.flow_sample_interval.max(1) as usize).min(n - 1);
    let mut total = 0.0f64;
    let mut pairs = 0u64;
    let mut i = 0usize;
    while i + e < n {
        total += pair_motion_score(&frames[i], &frames[i + e], t)?;
        pairs += 1;
        i += e;
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Motion(PurifyError),
}

/// Assemble the score set for one clip. Eight frames spanning the clip go to
/// each provider; motion comes from the flow provider when configured and
/// the native block matcher otherwise. Roles with no provider stay None and
/// the pipeline defers the clip. `caption` is whatever caption text is
/// available at scoring time (possibly empty for mock similarity backends).
pub fn fetch_scores(
    clip_id: &str,
    frames: &[Frame],
    caption: &str,
    providers: &ProviderSet,
    t: &PurifyThresholds,
) -> Result<ScoreSet, FetchError> {
    let indices = sample_frame_indices(frames.len() as u64, 8);
    let sampled: Vec<(u64, &Frame)> = indices.iter().map(|&i| (i, &frames[i as usize])).collect();

    let vtss = match &providers.vtss {
        Some(p) => Some(p.vtss(clip_id, &sampled)?),
        None => None,
    };
    let motion = match &providers.flow {
        Some(p) => Some(p.motion(clip_id, &sampled)?),
        None => Some(clip_motion_score(frames, t).map_err(FetchError::Motion)?),
    };
    let caption_sim = match &providers.similarity {
        Some(p) => Some(p.similarity(clip_id, &sampled, caption)?),
        None => None,
    };
    let attributes = match &providers.attributes {
        Some(p) => Some(p.attributes(clip_id, &sampled)?),
        None => None,
    };
    Ok(ScoreSet {
        vtss,
        motion,
        caption_sim,
        attributes,
    })
}
