//! Shot boundary detection: per-frame HSV content change scores and a
//! two-pass adaptive cut detector, plus a gradual-transition (dissolve)
//! annotation based on frame embeddings.

use serde::{Deserialize, Serialize};

use crate::frame_io::Frame;
use crate::provider::{EmbeddingProvider, ProviderError};

#[derive(Debug, thiserror::Error)]
pub enum SceneSplitError {
    #[error("frame dimensions differ: {w0}x{h0} vs {w1}x{h1}")]
    DimensionMismatch { w0: u32, h0: u32, w1: u32, h1: u32 },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(#[from] ProviderError),
    #[error("clip of {n_frames} frames is too short for dissolve analysis (needs 10)")]
    ShortClip { n_frames: u64 },
}

/// Detector parameters. `adaptive_threshold` is the minimum ratio of a
/// frame's content score to its rolling neighborhood average for a cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitParams {
    pub adaptive_threshold: f64,
    /// Absolute content-score floor; spikes below it never cut.
    pub min_content_score: f64,
    /// Minimum frames between consecutive cuts (and before the first cut).
    pub min_scene_len: u32,
    /// Rolling average half-width in frames, center excluded.
    pub window_radius: u32,
    /// Clips whose first-5/last-5 embedding similarity is below this are
    /// flagged as containing a gradual transition.
    pub dissolve_similarity_max: f64,
    /// Annotation only by default; true also rejects flagged clips.
    pub reject_dissolved: bool,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            adaptive_threshold: 3.0,
            min_content_score: 15.0,
            min_scene_len: 15,
            window_radius: 2,
            dissolve_similarity_max: 0.5,
            reject_dissolved: false,
        }
    }
}

/// Cut positions over a stream of `n_frames` frames. A cut at index i means
/// a new shot begins at frame i. Cuts are strictly ascending, each in
/// (0, n_frames), and consecutive cuts (and frame 0 to the first cut) are at
/// least `min_scene_len` apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutList {
    pub cuts: Vec<u32>,
    pub n_frames: u32,
}

impl CutList {
    /// Half-open segments covering the whole stream, including the trailing
    /// remainder after the last cut.
    pub fn segments(&self) -> Vec<(u32, u32)> {
        let mut bounds = Vec::with_capacity(self.cuts.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.cuts);
        bounds.push(self.n_frames);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self, min_scene_len: u32) -> bool {
        let mut prev = 0u32;
        for &c in &self.cuts {
            if c <= prev && prev != 0 {
                return false;
            }
            if c == 0 || c >= self.n_frames || c - prev < min_scene_len {
                return false;
            }
            prev = c;
        }
        true
    }
}

/// HSV on the 8-bit hue circle: h in [0,256), s and v in [0,255].
/// Channel ties resolve in r, g, b priority order.
#[inline]
fn pixel_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (rf, gf, bf) = (r as f64, g as f64, b as f64);
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max * 255.0 } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else {
        let h6 = if max == rf {
            ((gf - bf) / delta).rem_euclid(6.0)
        } else if max == gf {
            (bf - rf) / delta + 2.0
        } else {
            (rf - gf) / delta + 4.0
        };
        h6 * (256.0 / 6.0)
    };
    (h, s, v)
}

/// Mean over pixels of (|dH| + |dS| + |dV|) / 3, hue difference wrapped on
/// the 8-bit circle. A hard black-to-white transition scores 85.0.
pub fn content_score(prev: &Frame, cur: &Frame) -> Result<f64, SceneSplitError> {
    if prev.width != cur.width || prev.height != cur.height {
        return Err(SceneSplitError::DimensionMismatch {
            w0: prev.width,
            h0: prev.height,
            w1: cur.width,
            h1: cur.height,
        });
    }
    let mut sum = 0.0f64;
    for (pa, pb) in prev.rgb.chunks_exact(3).zip(cur.rgb.chunks_exact(3)) {
        let (h0, s0, v0) = pixel_hsv(pa[0], pa[1], pa[2]);
        let (h1, s1, v1) = pixel_hsv(pb[0], pb[1], pb[2]);
        let dh = (h0 - h1).abs();
        let dh = dh.min(256.0 - dh);
        sum += (dh + (s0 - s1).abs() + (v0 - v1).abs()) / 3.0;
    }
    Ok(sum / (prev.width as u64 * prev.height as u64) as f64)
}

/// Content scores for a frame sequence; scores[0] is 0 by definition.
pub fn content_scores(frames: &[Frame]) -> Result<Vec<f64>, SceneSplitError> {
    let mut scores = Vec::with_capacity(frames.len());
    if frames.is_empty() {
        return Ok(scores);
    }
    scores.push(0.0);
    for pair in frames.windows(2) {
        scores.push(content_score(&pair[0], &pair[1])?);
    }
    Ok(scores)
}

/// Two-pass adaptive cut detection over precomputed content scores.
///
/// Pass 2 divides each score by the mean of its neighbors within
/// `window_radius` (center excluded, mean floored at 1e-9). A frame is a cut
/// when that ratio reaches `adaptive_threshold`, the raw score reaches
/// `min_content_score`, and the previous cut (or stream start) is at least
/// `min_scene_len` frames back. Each decision depends only on scores within
/// the window and on earlier cuts, so appending frames never changes cuts
/// outside the window's reach.
pub fn detect_cuts(scores: &[f64], params: &SplitParams) -> CutList {
    let n = scores.len();
    let w = params.window_radius as usize;
    let mut cuts = Vec::new();
    let mut prev_cut = 0usize;
    for i in 1..n {
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(n - 1);
        let mut sum = 0.0;
        let mut count = 0u32;
        for (j, &s) in scores.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i {
                sum += s;
                count += 1;
            }
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        let ratio = scores[i] / mean.max(1e-9);
        if ratio >= params.adaptive_threshold
            && scores[i] >= params.min_content_score
            && i - prev_cut >= params.min_scene_len as usize
        {
            cuts.push(i as u32);
            prev_cut = i;
        }
    }
    CutList {
        cuts,
        n_frames: n as u32,
    }
}

/// Dissolve annotation outcome, stored alongside the clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissolveCheck {
    pub similarity: f64,
    pub flagged: bool,
}

/// Mean pairwise cosine similarity between two embedding groups
/// (5 x 5 = 25 pairs for the standard first-5/last-5 comparison).
pub fn group_similarity(first: &[Vec<f64>], last: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0u32;
    for a in first {
        for b in last {
            sum += cosine(a, b);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Compare embeddings of a clip's first five and last five frames. A low
/// mean similarity marks a likely gradual transition inside the clip; the
/// flag annotates, it does not reject (see `SplitParams::reject_dissolved`).
pub fn dissolve_check(
    clip_id: &str,
    frames: &[Frame],
    provider: &dyn EmbeddingProvider,
    params: &SplitParams,
) -> Result<DissolveCheck, SceneSplitError> {
    if frames.len() < 10 {
        return Err(SceneSplitError::ShortClip {
            n_frames: frames.len() as u64,
        });
    }
    let head: Vec<(u64, &Frame)> = frames[..5].iter().enumerate().map(|(i, f)| (i as u64, f)).collect();
    let tail_start = frames.len() - 5;
    let tail: Vec<(u64, &Frame)> = frames[tail_start..]
        .iter()
        .enumerate()
        .map(|(i, f)| ((tail_start + i) as u64, f))
        .collect();
    let first = provider.embed(clip_id, &head)?;
    let last = provider.embed(clip_id, &tail)?;
    let similarity = group_similarity(&first, &last);
    Ok(DissolveCheck {
        similarity,
        flagged: similarity < params.dissolve_similarity_max,
    })
}
