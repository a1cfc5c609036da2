//! Statistical frame filters: text coverage, black borders, bad exposure and
//! gray (desaturated) frames, plus the per-clip aggregation rule.
//!
//! Every comparison against a threshold is strict ("higher than", "lower
//! than"); values exactly at a threshold pass. A clip fails a filter when the
//! fraction of flagged frames strictly exceeds `bad_frame_ratio`.

use serde::{Deserialize, Serialize};

use crate::frame_io::{bt601_gray, Frame};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid text box [{x0},{y0},{x1},{y1}) for {width}x{height} frame")]
    InvalidBox {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },
    #[error("frame {width}x{height} too small for border depth {depth_x}x{depth_y}")]
    FrameTooSmall {
        width: u32,
        height: u32,
        depth_x: u32,
        depth_y: u32,
    },
    #[error("clip has no frames to aggregate")]
    EmptyClip,
}

/// Detected text region, half-open pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl TextBox {
    pub fn area(&self) -> u64 {
        (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
    }
}

/// Filter thresholds. Defaults are the operating points the pipeline was
/// calibrated for; see the config documentation before changing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatThresholds {
    /// Frame is flagged when text union area / frame area exceeds this.
    pub text_area_ratio: f64,
    /// Clip fails a filter when flagged/total frames exceeds this.
    pub bad_frame_ratio: f64,
    /// Border strip depth as a fraction of each dimension.
    pub border_depth_frac: f64,
    /// Frame is flagged when the border strips' mean gray is below this.
    pub border_mean_max: f64,
    /// Pixel is badly exposed when gray < exposure_low or gray > exposure_high.
    pub exposure_low: u8,
    pub exposure_high: u8,
    /// Frame is flagged when the badly exposed pixel fraction exceeds this.
    pub exposure_ratio: f64,
    /// Frame is flagged when mean per-pixel channel variance is below this.
    pub gray_variance_min: f64,
    /// Population variance (divide by 3) by default; true divides by 2.
    pub variance_bessel: bool,
    /// Text detection runs every k-th frame; flags propagate across the span.
    /// 1 means every frame.
    pub ocr_sample_interval: u32,
}

impl Default for StatThresholds {
    fn default() -> Self {
        StatThresholds {
            text_area_ratio: 0.02,
            bad_frame_ratio: 0.05,
            border_depth_frac: 0.03,
            border_mean_max: 3.0,
            exposure_low: 5,
            exposure_high: 250,
            exposure_ratio: 0.12,
            gray_variance_min: 1.2,
            variance_bessel: false,
            ocr_sample_interval: 5,
        }
    }
}

/// Exact union area of a set of boxes (overlaps counted once), by coordinate
/// compression: sweep the distinct x edges and merge y intervals per slab.
pub fn text_union_area(boxes: &[TextBox]) -> Result<u64, FilterError> {
    for b in boxes {
        if b.x1 <= b.x0 || b.y1 <= b.y0 {
            return Err(FilterError::InvalidBox {
                x0: b.x0,
                y0: b.y0,
                x1: b.x1,
                y1: b.y1,
                width: u32::MAX,
                height: u32::MAX,
            });
        }
    }
    if boxes.is_empty() {
        return Ok(0);
    }
    let mut xs: Vec<u32> = boxes.iter().flat_map(|b| [b.x0, b.x1]).collect();
    xs.sort_unstable();
    xs.dedup();
    let mut area = 0u64;
    for slab in xs.windows(2) {
        let (xa, xb) = (slab[0], slab[1]);
        let mut intervals: Vec<(u32, u32)> = boxes
            .iter()
            .filter(|b| b.x0 <= xa && b.x1 >= xb)
            .map(|b| (b.y0, b.y1))
            .collect();
        intervals.sort_unstable();
        let mut covered = 0u64;
        let mut cur: Option<(u32, u32)> = None;
        for (y0, y1) in intervals {
            match cur {
                Some((s, e)) if y0 <= e => cur = Some((s, e.max(y1))),
                Some((s, e)) => {
                    covered += (e - s) as u64;
                    cur = Some((y0, y1));
                    let _ = s;
                }
                None => cur = Some((y0, y1)),
            }
        }
        if let Some((s, e)) = cur {
            covered += (e - s) as u64;
        }
        area += covered * (xb - xa) as u64;
    }
    Ok(area)
}

/// Union area of detected text divided by frame area. Boxes must lie within
/// the frame.
pub fn text_union_ratio(boxes: &[TextBox], width: u32, height: u32) -> Result<f64, FilterError> {
    for b in boxes {
        if b.x1 <= b.x0 || b.y1 <= b.y0 || b.x1 > width || b.y1 > height {
            return Err(FilterError::InvalidBox {
                x0: b.x0,
                y0: b.y0,
                x1: b.x1,
                y1: b.y1,
                width,
                height,
            });
        }
    }
    let area = text_union_area(boxes)?;
    Ok(area as f64 / (width as u64 * height as u64) as f64)
}

/// Border strip depth for one dimension: `max(1, round(frac * dim))`.
///
/// The fraction is applied at micro precision (parts per million) so the
/// rounding is decimal round-half-up, independent of binary representation.
pub fn border_depth(dim: u32, frac: f64) -> u32 {
    let ppm = (frac * 1e6).round() as u64;
    let d = (dim as u64 * ppm + 500_000) / 1_000_000;
    d.max(1) as u32
}

/// Mean BT.601 gray over the union of the four border strips.
pub fn border_mean(frame: &Frame, depth_frac: f64) -> Result<f64, FilterError> {
    let (w, h) = (frame.width, frame.height);
    let dx = border_depth(w, depth_frac);
    let dy = border_depth(h, depth_frac);
    if 2 * dx >= w || 2 * dy >= h {
        return Err(FilterError::FrameTooSmall {
            width: w,
            height: h,
            depth_x: dx,
            depth_y: dy,
        });
    }
    let mut sum = 0u64;
    let mut count = 0u64;
    let row_bytes = w as usize * 3;
    for y in 0..h as usize {
        let row = &frame.rgb[y * row_bytes..(y + 1) * row_bytes];
        if (y as u32) < dy || (y as u32) >= h - dy {
            let (s, c) = gray_run_sum(row);
            sum += s;
            count += c;
        } else {
            let (s0, c0) = gray_run_sum(&row[..dx as usize * 3]);
            let (s1, c1) = gray_run_sum(&row[(w - dx) as usize * 3..]);
            sum += s0 + s1;
            count += c0 + c1;
        }
    }
    Ok(sum as f64 / count as f64)
}

fn gray_run_sum(run: &[u8]) -> (u64, u64) {
    let mut sum = 0u64;
    for p in run.chunks_exact(3) {
        sum += bt601_gray(p[0], p[1], p[2]) as u64;
    }
    (sum, (run.len() / 3) as u64)
}

/// Fraction of pixels whose gray value is above `high` or below `low`.
pub fn exposure_bad_ratio(frame: &Frame, low: u8, high: u8) -> f64 {
    let mut bad = 0u64;
    for p in frame.rgb.chunks_exact(3) {
        let g = bt601_gray(p[0], p[1], p[2]);
        if g > high || g < low {
            bad += 1;
        }
    }
    bad as f64 / (frame.width as u64 * frame.height as u64) as f64
}

/// Mean per-pixel variance across the three color channels. Population
/// variance (divide by 3) by default; `bessel` divides by 2 instead.
pub fn graying_score(frame: &Frame, bessel: bool) -> f64 {
    // With s = r+g+b the per-pixel squared-deviation sum is exactly
    // ((3r-s)^2 + (3g-s)^2 + (3b-s)^2) / 9, so the whole score reduces to
    // one integer accumulation and a single division (by 27n or 18n).
    let divisor = if bessel { 18.0 } else { 27.0 };
    let mut num = 0u64;
    for p in frame.rgb.chunks_exact(3) {
        let (r, g, b) = (p[0] as i32, p[1] as i32, p[2] as i32);
        let s = r + g + b;
        let (tr, tg, tb) = (3 * r - s, 3 * g - s, 3 * b - s);
        num += (tr * tr + tg * tg + tb * tb) as u64;
    }
    num as f64 / (divisor * (frame.width as u64 * frame.height as u64) as f64)
}

/// Per-frame flag outcomes. `text` is None when no detector output was
/// available for the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameFlags {
    pub text: Option<bool>,
    pub border: bool,
    pub exposure: bool,
    pub graying: bool,
}

/// Evaluate the three pixel-statistics filters plus (when boxes are given)
/// the text filter on one frame.
pub fn evaluate_frame(
    frame: &Frame,
    boxes: Option<&[TextBox]>,
    t: &StatThresholds,
) -> Result<FrameFlags, FilterError> {
    let text = match boxes {
        Some(bs) => Some(text_union_ratio(bs, frame.width, frame.height)? > t.text_area_ratio),
        None => None,
    };
    Ok(FrameFlags {
        text,
        border: border_mean(frame, t.border_depth_frac)? < t.border_mean_max,
        exposure: exposure_bad_ratio(frame, t.exposure_low, t.exposure_high) > t.exposure_ratio,
        graying: graying_score(frame, t.variance_bessel) < t.gray_variance_min,
    })
}

/// One filter's aggregate over a clip. `flagged_runs` is the run-length
/// encoding of the per-frame flag bitmap: (start, length) pairs of flagged
/// spans, for audit without storing one bool per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub flagged: u32,
    pub total: u32,
    pub ratio: f64,
    pub pass: bool,
    pub flagged_runs: Vec<(u32, u32)>,
}

impl FilterCounts {
    fn from_bits(bits: &[bool], bad_frame_ratio: f64) -> Self {
        let total = bits.len() as u32;
        let flagged = bits.iter().filter(|&&b| b).count() as u32;
        let ratio = flagged as f64 / total as f64;
        FilterCounts {
            flagged,
            total,
            ratio,
            pass: !(ratio > bad_frame_ratio),
            flagged_runs: rle_encode(bits),
        }
    }
}

/// Aggregate filter verdicts for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub text: Option<FilterCounts>,
    pub border: FilterCounts,
    pub exposure: FilterCounts,
    pub graying: FilterCounts,
    pub pass: bool,
}

impl FilterReport {
    /// Names of the filters that failed, in fixed order.
    pub fn failed_filters(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.text.as_ref().is_some_and(|c| !c.pass) {
            out.push("text");
        }
        if !self.border.pass {
            out.push("border");
        }
        if !self.exposure.pass {
            out.push("exposure");
        }
        if !self.graying.pass {
            out.push("graying");
        }
        out
    }
}

/// Fold per-frame flags into a clip verdict. The text filter participates
/// only when at least one frame carried detector output; frames without
/// output inherit the most recent detection (sampling propagation) which the
/// caller encodes by supplying `Some` flags.
pub fn aggregate_clip(flags: &[FrameFlags], t: &StatThresholds) -> Result<FilterReport, FilterError> {
    if flags.is_empty() {
        return Err(FilterError::EmptyClip);
    }
    let text_bits: Option<Vec<bool>> = if flags.iter().any(|f| f.text.is_some()) {
        Some(flags.iter().map(|f| f.text.unwrap_or(false)).collect())
    } else {
        None
    };
    let border_bits: Vec<bool> = flags.iter().map(|f| f.border).collect();
    let exposure_bits: Vec<bool> = flags.iter().map(|f| f.exposure).collect();
    let graying_bits: Vec<bool> = flags.iter().map(|f| f.graying).collect();
    let text = text_bits.map(|b| FilterCounts::from_bits(&b, t.bad_frame_ratio));
    let border = FilterCounts::from_bits(&border_bits, t.bad_frame_ratio);
    let exposure = FilterCounts::from_bits(&exposure_bits, t.bad_frame_ratio);
    let graying = FilterCounts::from_bits(&graying_bits, t.bad_frame_ratio);
    let pass = text.as_ref().map(|c| c.pass).unwrap_or(true)
        && border.pass
        && exposure.pass
        && graying.pass;
    Ok(FilterReport {
        text,
        border,
        exposure,
        graying,
        pass,
    })
}

/// Run-length encode a flag bitmap as (start, length) pairs of set spans.
pub fn rle_encode(bits: &[bool]) -> Vec<(u32, u32)> {
    let mut runs = Vec::new();
    let mut i = 0usize;
    while i < bits.len() {
        if bits[i] {
            let start = i;
            while i < bits.len() && bits[i] {
                i += 1;
            }
            runs.push((start as u32, (i - start) as u32));
        } else {
            i += 1;
        }
    }
    runs
}

/// Expand (start, length) runs back into a bitmap of `total` frames.
pub fn rle_decode(runs: &[(u32, u32)], total: u32) -> Vec<bool> {
    let mut bits = vec![false; total as usize];
    for &(start, len) in runs {
        for b in bits.iter_mut().skip(start as usize).take(len as usize) {
            *b = true;
        }
    }
    bits
}
