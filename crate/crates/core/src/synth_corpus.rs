//! Synthetic defect corpus with analytic ground truth.
//!
//! Clips are rendered from a deterministic infinite value-noise world that
//! translates one pixel per frame, so every detector in the pipeline can be
//! scored against truth that is computed arithmetically, not measured.
//! Defect severities are expressed in the detector's own units (a target
//! area ratio, strip mean, graying score or displacement magnitude), and the
//! injected pixels are constructed so the exact threshold comparison the
//! filters perform can be replayed on integers.
//!
//! Base content properties that keep the detectors orthogonal:
//! luma spans [55, 190] (plus +/-2 dither), so clean frames never look over-
//! or underexposed and borders stay bright; chroma is strongly non-neutral,
//! so clean frames never look gray; the 1 px/frame drift keeps motion inside
//! the block matcher's search radius and under the cut detector's floor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::frame_io::{bt601_gray, yuv_to_rgb, Chroma, StreamMeta, Y4mWriter, YuvFrame};
use crate::rng::{fnv1a64, splitmix64};
use crate::stat_filters::TextBox;

const LATTICE: i64 = 16;
const LUMA_MIN: u64 = 55;
const LUMA_SPAN: u64 = 135; // values in [55, 190]
const VELOCITY: (i64, i64) = (1, 0);
const CHROMA_EVEN: (u8, u8) = (148, 108);
const CHROMA_ODD: (u8, u8) = (108, 148);
const GRAY_LUMA: u8 = 126;
const GRAY_PATCH_UV: (u8, u8) = (131, 125);
const TEXT_LUMA: u8 = 200;
const OVER_LUMA: u8 = 235;
const UNDER_LUMA: u8 = 16;
const LAYOUT_MARGIN: u32 = 16;
/// Pair stride assumed by the analytic motion truth; must match the motion
/// scorer's flow_sample_interval for truth to apply.
pub const MOTION_PAIR_INTERVAL: u64 = 8;
/// Minimum spacing between hard cuts (and from clip edges) so the default
/// min-scene-length never suppresses a planted cut.
pub const MIN_CUT_GAP: u64 = 15;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("contradictory spec: {0}")]
    ContradictorySpec(String),
    #[error("clip id mismatch: {0}")]
    IdMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    FrameIo(#[from] crate::frame_io::FrameIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    TextOverlay,
    BlackBorder,
    Overexposure,
    Underexposure,
    GrayFrames,
    StaticMotion,
    FastJitter,
    HardCut,
    Dissolve,
}

/// One injected defect. Severity units per kind:
/// TextOverlay: target text-box union area ratio (unless rects are given);
/// Overexposure/Underexposure: target bad-pixel ratio (>= 1.0 paints all);
/// BlackBorder: target border strip mean gray (rounded to an integer gray);
/// GrayFrames: target graying score; FastJitter: target per-pair
/// displacement magnitude; StaticMotion/HardCut/Dissolve: unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub severity: f64,
    /// Half-open frame range. A HardCut uses only the start frame.
    pub frame_range: (u64, u64),
    /// TextOverlay only: explicit boxes instead of severity-derived ones.
    #[serde(default)]
    pub rects: Option<Vec<TextBox>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    pub n_frames: u64,
    #[serde(default)]
    pub defects: Vec<DefectSpec>,
}

/// Everything the acceptance loop needs to score the pipeline, derived
/// arithmetically from the spec. `failed_filters` and per-frame flags hold
/// at the default statistical thresholds; `motion` is the exact expected
/// native motion score where the construction makes it analytic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub n_frames: u64,
    pub width: u32,
    pub height: u32,
    pub flagged_frames: BTreeMap<String, Vec<u64>>,
    pub failed_filters: Vec<String>,
    pub cuts: Vec<u64>,
    pub dissolve_flagged: bool,
    pub motion: Option<f64>,
    pub text_boxes: BTreeMap<u64, Vec<TextBox>>,
}

// ---------------------------------------------------------------------------
// Deterministic world
// ---------------------------------------------------------------------------

/// One-shot stateless mix of a 64-bit value.
fn mix64(v: u64) -> u64 {
    let mut state = v;
    splitmix64(&mut state)
}

fn hash2(key: u64, tag: u64, i: i64, j: i64) -> u64 {
    let mut v = key ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    v = mix64(v ^ (i as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    mix64(v ^ (j as u64).wrapping_mul(0x1656_67B1_9E37_79F9))
}

fn lattice_val(key: u64, tag: u64, i: i64, j: i64) -> f64 {
    (LUMA_MIN + hash2(key, tag, i, j) % (LUMA_SPAN + 1)) as f64
}

/// Smooth unbounded luma field: bilinear value noise over a 16 px lattice
/// plus +/-2 dither that travels with the content.
fn world_luma(key: u64, tag: u64, x: i64, y: i64) -> u8 {
    let (ci, fx) = (x.div_euclid(LATTICE), x.rem_euclid(LATTICE));
    let (cj, fy) = (y.div_euclid(LATTICE), y.rem_euclid(LATTICE));
    let v00 = lattice_val(key, tag, ci, cj);
    let v10 = lattice_val(key, tag, ci + 1, cj);
    let v01 = lattice_val(key, tag, ci, cj + 1);
    let v11 = lattice_val(key, tag, ci + 1, cj + 1);
    let u = fx as f64 / LATTICE as f64;
    let v = fy as f64 / LATTICE as f64;
    let base = v00 * (1.0 - u) * (1.0 - v) + v10 * u * (1.0 - v) + v01 * (1.0 - u) * v + v11 * u * v;
    let dither = (hash2(key, tag ^ 0xD17E, x, y) % 5) as i64 - 2;
    (base.round() as i64 + dither).clamp(53, 192) as u8
}

fn segment_chroma(segment: u64) -> (u8, u8) {
    if segment.is_multiple_of(2) {
        CHROMA_EVEN
    } else {
        CHROMA_ODD
    }
}

// ---------------------------------------------------------------------------
// Severity-to-geometry layout (exact areas)
// ---------------------------------------------------------------------------

/// Decompose an exact pixel area into at most two disjoint rectangles inside
/// the frame's interior margin. `unit` = 1 for pixel-precise rects, 2 for
/// rects aligned to the 2x2 chroma grid (coordinates and areas in multiples
/// of unit^2).
fn area_rects(area: u64, w: u32, h: u32, unit: u32) -> Result<Vec<TextBox>, SynthError> {
    assert!(unit == 1 || unit == 2);
    let cells = area / (unit as u64 * unit as u64);
    assert_eq!(cells * (unit as u64 * unit as u64), area, "area must be unit-aligned");
    let gw = w / unit;
    let gh = h / unit;
    let margin = LAYOUT_MARGIN / unit;
    let usable_w = (gw.saturating_sub(2 * margin)) as u64;
    let usable_h = (gh.saturating_sub(2 * margin)) as u64;
    if usable_w == 0 || usable_h == 0 {
        return Err(SynthError::ContradictorySpec(format!(
            "frame {w}x{h} too small for interior defects"
        )));
    }
    let main_w = usable_w.min(cells);
    if main_w == 0 {
        return Err(SynthError::ContradictorySpec("defect area is zero".into()));
    }
    let rows = cells / main_w;
    let rem = cells % main_w;
    if rows + u64::from(rem > 0) > usable_h {
        return Err(SynthError::ContradictorySpec(format!(
            "defect area {area} px does not fit the interior of {w}x{h}"
        )));
    }
    let mut rects = Vec::new();
    let scale = |v: u64| -> u32 { (v as u32 + margin) * unit };
    if rows > 0 {
        rects.push(TextBox {
            x0: scale(0),
            y0: scale(0),
            x1: scale(main_w),
            y1: scale(rows),
        });
    }
    if rem > 0 {
        rects.push(TextBox {
            x0: scale(0),
            y0: scale(rows),
            x1: scale(rem),
            y1: scale(rows + 1),
        });
    }
    Ok(rects)
}

/// Smallest luma whose neutral-chroma gray equals `target`.
fn luma_for_gray(target: u8) -> Option<u8> {
    (0u16..=255).map(|y| y as u8).find(|&y| {
        let (r, g, b) = yuv_to_rgb(y, 128, 128);
        bt601_gray(r, g, b) == target
    })
}

// ---------------------------------------------------------------------------
// Spec resolution
// ---------------------------------------------------------------------------

struct ResolvedDefects {
    text_range: Option<(u64, u64)>,
    text_boxes: Vec<TextBox>,
    text_area: u64,
    border_range: Option<(u64, u64)>,
    border_luma: u8,
    border_gray: u8,
    over_range: Option<(u64, u64)>,
    over_rects: Vec<TextBox>,
    over_count: u64,
    under_range: Option<(u64, u64)>,
    under_rects: Vec<TextBox>,
    under_count: u64,
    gray_range: Option<(u64, u64)>,
    gray_patch: Vec<TextBox>,
    gray_patch_px: u64,
    static_ranges: Vec<(u64, u64)>,
    jitter: Option<i64>, // amplitude a; range is the whole clip
    cuts: Vec<u64>,
    dissolves: Vec<(u64, u64)>,
}

fn overlaps(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn check_range(range: (u64, u64), n: u64, kind: &str) -> Result<(), SynthError> {
    if range.0 >= range.1 || range.1 > n {
        return Err(SynthError::ContradictorySpec(format!(
            "{kind} range [{}, {}) invalid for a {n}-frame clip",
            range.0, range.1
        )));
    }
    Ok(())
}

fn resolve(spec: &ClipSpec) -> Result<ResolvedDefects, SynthError> {
    let n = spec.n_frames;
    let (w, h) = (spec.width, spec.height);
    if w % 2 != 0 || h % 2 != 0 || w < 48 || h < 48 {
        return Err(SynthError::ContradictorySpec(format!(
            "frame size {w}x{h} must be even and at least 48x48"
        )));
    }
    if n < 2 {
        return Err(SynthError::ContradictorySpec("clips need at least 2 frames".into()));
    }
    if spec.fps_num == 0 || spec.fps_den == 0 {
        return Err(SynthError::ContradictorySpec("fps must be positive".into()));
    }
    let npx = w as u64 * h as u64;

    let mut r = ResolvedDefects {
        text_range: None,
        text_boxes: Vec::new(),
        text_area: 0,
        border_range: None,
        border_luma: 0,
        border_gray: 0,
        over_range: None,
        over_rects: Vec::new(),
        over_count: 0,
        under_range: None,
        under_rects: Vec::new(),
        under_count: 0,
        gray_range: None,
        gray_patch: Vec::new(),
        gray_patch_px: 0,
        static_ranges: Vec::new(),
        jitter: None,
        cuts: Vec::new(),
        dissolves: Vec::new(),
    };

    // Frame ranges that own interior pixels; any overlap is contradictory.
    let mut region_ranges: Vec<(u64, u64)> = Vec::new();
    // Frame ranges that alter apparent motion; any overlap is contradictory.
    let mut motion_ranges: Vec<(u64, u64)> = Vec::new();

    for d in &spec.defects {
        if !d.severity.is_finite() || d.severity < 0.0 {
            return Err(SynthError::ContradictorySpec(format!(
                "severity {} is not a finite non-negative number",
                d.severity
            )));
        }
        match d.kind {
            DefectKind::TextOverlay => {
                check_range(d.frame_range, n, "text")?;
                if r.text_range.is_some() {
                    return Err(SynthError::ContradictorySpec("duplicate TextOverlay".into()));
                }
                let boxes = match &d.rects {
                    Some(boxes) => boxes.clone(),
                    None => {
                        let area = (d.severity * npx as f64).round().max(1.0) as u64;
                        area_rects(area, w, h, 1)?
                    }
                };
                for b in &boxes {
                    if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > w || b.y1 > h {
                        return Err(SynthError::ContradictorySpec(format!(
                            "text box [{},{})x[{},{}) outside {w}x{h}",
                            b.x0, b.x1, b.y0, b.y1
                        )));
                    }
                }
                r.text_area = crate::stat_filters::text_union_area(&boxes)
                    .map_err(|e| SynthError::ContradictorySpec(e.to_string()))?;
                r.text_boxes = boxes;
                r.text_range = Some(d.frame_range);
                region_ranges.push(d.frame_range);
            }
            DefectKind::BlackBorder => {
                check_range(d.frame_range, n, "border")?;
                if r.border_range.is_some() {
                    return Err(SynthError::ContradictorySpec("duplicate BlackBorder".into()));
                }
                let gray = d.severity.round();
                if !(0.0..=100.0).contains(&gray) {
                    return Err(SynthError::ContradictorySpec(format!(
                        "border severity {} (target mean gray) out of range",
                        d.severity
                    )));
                }
                let gray = gray as u8;
                r.border_luma = luma_for_gray(gray).ok_or_else(|| {
                    SynthError::ContradictorySpec(format!("no luma produces gray {gray}"))
                })?;
                r.border_gray = gray;
                let dx = crate::stat_filters::border_depth(w, 0.03);
                let dy = crate::stat_filters::border_depth(h, 0.03);
                if !dx.is_multiple_of(2) || !dy.is_multiple_of(2) {
                    return Err(SynthError::ContradictorySpec(format!(
                        "border depths {dx}x{dy} not chroma-aligned; pick other dimensions"
                    )));
                }
                r.border_range = Some(d.frame_range);
            }
            DefectKind::Overexposure | DefectKind::Underexposure => {
                check_range(d.frame_range, n, "exposure")?;
                let (range_slot, rect_slot, count_slot) = match d.kind {
                    DefectKind::Overexposure => {
                        (&mut r.over_range, &mut r.over_rects, &mut r.over_count)
                    }
                    _ => (&mut r.under_range, &mut r.under_rects, &mut r.under_count),
                };
                if range_slot.is_some() {
                    return Err(SynthError::ContradictorySpec("duplicate exposure defect".into()));
                }
                if d.severity >= 1.0 {
                    *rect_slot = vec![TextBox { x0: 0, y0: 0, x1: w, y1: h }];
                    *count_slot = npx;
                } else {
                    let cells = ((d.severity * npx as f64) / 4.0).round().max(1.0) as u64;
                    *rect_slot = area_rects(cells * 4, w, h, 2)?;
                    *count_slot = cells * 4;
                }
                *range_slot = Some(d.frame_range);
                region_ranges.push(d.frame_range);
            }
            DefectKind::GrayFrames => {
                check_range(d.frame_range, n, "gray")?;
                if r.gray_range.is_some() {
                    return Err(SynthError::ContradictorySpec("duplicate GrayFrames".into()));
                }
                // Target score s needs s*9*npx/182 patch pixels of variance 182/9.
                let cells = ((d.severity * 9.0 * npx as f64) / (182.0 * 4.0)).round() as u64;
                if cells > 0 {
                    r.gray_patch = area_rects(cells * 4, w, h, 2)?;
                }
                r.gray_patch_px = cells * 4;
                r.gray_range = Some(d.frame_range);
                region_ranges.push(d.frame_range);
                motion_ranges.push(d.frame_range);
            }
            DefectKind::StaticMotion => {
                check_range(d.frame_range, n, "static")?;
                r.static_ranges.push(d.frame_range);
                motion_ranges.push(d.frame_range);
            }
            DefectKind::FastJitter => {
                if d.frame_range != (0, n) {
                    return Err(SynthError::ContradictorySpec(
                        "FastJitter must cover the whole clip for analytic motion truth".into(),
                    ));
                }
                if r.jitter.is_some() {
                    return Err(SynthError::ContradictorySpec("duplicate FastJitter".into()));
                }
                let a = (d.severity / std::f64::consts::SQRT_2).round().max(1.0) as i64;
                if a > 4 {
                    return Err(SynthError::ContradictorySpec(format!(
                        "jitter amplitude {a} px would register as scene cuts; keep magnitude <= {:.2}",
                        4.0 * std::f64::consts::SQRT_2
                    )));
                }
                r.jitter = Some(a);
                motion_ranges.push(d.frame_range);
            }
            DefectKind::HardCut => {
                let c = d.frame_range.0;
                if c < MIN_CUT_GAP || c + MIN_CUT_GAP > n {
                    return Err(SynthError::ContradictorySpec(format!(
                        "hard cut at {c} too close to the clip edges (gap {MIN_CUT_GAP})"
                    )));
                }
                r.cuts.push(c);
                motion_ranges.push((c, c + 1));
            }
            DefectKind::Dissolve => {
                check_range(d.frame_range, n, "dissolve")?;
                let (a, b) = d.frame_range;
                if a < 5 || b + 5 > n || b - a < 4 {
                    return Err(SynthError::ContradictorySpec(
                        "dissolve needs >= 5 clean frames on each side and >= 4 blend frames".into(),
                    ));
                }
                r.dissolves.push(d.frame_range);
                motion_ranges.push(d.frame_range);
            }
        }
    }

    for (i, a) in region_ranges.iter().enumerate() {
        for b in region_ranges.iter().skip(i + 1) {
            if overlaps(*a, *b) {
                return Err(SynthError::ContradictorySpec(format!(
                    "pixel-owning defects overlap on frames [{}, {})",
                    a.0.max(b.0),
                    a.1.min(b.1)
                )));
            }
        }
    }
    for (i, a) in motion_ranges.iter().enumerate() {
        for b in motion_ranges.iter().skip(i + 1) {
            if overlaps(*a, *b) {
                return Err(SynthError::ContradictorySpec(format!(
                    "motion-altering defects overlap on frames [{}, {})",
                    a.0.max(b.0),
                    a.1.min(b.1)
                )));
            }
        }
    }
    r.cuts.sort_unstable();
    for pair in r.cuts.windows(2) {
        if pair[1] - pair[0] < MIN_CUT_GAP {
            return Err(SynthError::ContradictorySpec(format!(
                "hard cuts at {} and {} closer than {MIN_CUT_GAP} frames",
                pair[0], pair[1]
            )));
        }
    }
    r.dissolves.sort_unstable();
    Ok(r)
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

fn in_range(k: u64, range: Option<(u64, u64)>) -> bool {
    range.is_some_and(|(a, b)| k >= a && k < b)
}

fn in_any(k: u64, ranges: &[(u64, u64)]) -> bool {
    ranges.iter().any(|&(a, b)| k >= a && k < b)
}

/// Render one clip and derive its ground truth. Deterministic in
/// (spec, seed): equal inputs give byte-identical Y4M output.
pub fn generate(spec: &ClipSpec, seed: u64) -> Result<(Vec<u8>, GroundTruth), SynthError> {
    let r = resolve(spec)?;
    let n = spec.n_frames;
    let (w, h) = (spec.width, spec.height);
    let npx = w as u64 * h as u64;
    let key = mix64(seed) ^ fnv1a64(spec.id.as_bytes());

    // Content origin per frame: drift suspended while any motion-altering
    // defect freezes the scene, plus the alternating jitter offset.
    let mut origin = vec![(0i64, 0i64); n as usize];
    let mut pos = (0i64, 0i64);
    for k in 0..n {
        if k > 0 {
            let suspended = |f: u64| {
                in_any(f, &r.static_ranges)
                    || r.jitter.is_some()
                    || in_range(f, r.gray_range)
            };
            if !suspended(k - 1) && !suspended(k) {
                pos.0 += VELOCITY.0;
                pos.1 += VELOCITY.1;
            }
        }
        let mut o = pos;
        if let Some(a) = r.jitter {
            if (k / MOTION_PAIR_INTERVAL) % 2 == 1 {
                o.0 += a;
                o.1 += a;
            }
        }
        origin[k as usize] = o;
    }

    // Texture segment per frame: hard cuts and dissolve starts advance it.
    let segment =
        |k: u64| -> u64 { r.cuts.iter().filter(|&&c| c <= k).count() as u64
            + r.dissolves.iter().filter(|&&(a, _)| a <= k).count() as u64 };

    let meta = StreamMeta {
        width: w,
        height: h,
        fps_num: spec.fps_num,
        fps_den: spec.fps_den,
        chroma: Chroma::C420,
        frame_count: None,
    };
    let mut writer = Y4mWriter::new(Vec::new(), &meta)?;
    let (w2, h2) = (w / 2, h / 2);

    for k in 0..n {
        let mut y_plane = vec![0u8; (w as u64 * h as u64) as usize];
        let mut u_plane = vec![128u8; (w2 as u64 * h2 as u64) as usize];
        let mut v_plane = vec![128u8; (w2 as u64 * h2 as u64) as usize];
        let gray = in_range(k, r.gray_range);
        let seg = segment(k);
        let blend = r
            .dissolves
            .iter()
            .find(|&&(a, b)| k >= a && k < b)
            .map(|&(a, b)| (k - a + 1, b - a));

        // Luma overlays painted after the base texture, chroma neutralized
        // on every 2x2 cell they touch.
        let mut overlays: Vec<(&TextBox, u8)> = Vec::new();
        if in_range(k, r.over_range) {
            overlays.extend(r.over_rects.iter().map(|b| (b, OVER_LUMA)));
        }
        if in_range(k, r.under_range) {
            overlays.extend(r.under_rects.iter().map(|b| (b, UNDER_LUMA)));
        }
        if in_range(k, r.text_range) {
            overlays.extend(r.text_boxes.iter().map(|b| (b, TEXT_LUMA)));
        }
        let border = in_range(k, r.border_range).then(|| {
            (
                crate::stat_filters::border_depth(w, 0.03),
                crate::stat_filters::border_depth(h, 0.03),
            )
        });

        if gray {
            y_plane.fill(GRAY_LUMA);
            for b in &r.gray_patch {
                for cy in b.y0 / 2..b.y1 / 2 {
                    for cx in b.x0 / 2..b.x1 / 2 {
                        u_plane[(cy * w2 + cx) as usize] = GRAY_PATCH_UV.0;
                        v_plane[(cy * w2 + cx) as usize] = GRAY_PATCH_UV.1;
                    }
                }
            }
        } else {
            let (ox, oy) = origin[k as usize];
            for py in 0..h as i64 {
                for px in 0..w as i64 {
                    let (sx, sy) = (px - ox, py - oy);
                    let val = match blend {
                        None => world_luma(key, seg, sx, sy),
                        Some((num, den)) => {
                            let a = world_luma(key, seg - 1, sx, sy) as u64;
                            let b = world_luma(key, seg, sx, sy) as u64;
                            (((den - num) * a + num * b + den / 2) / den) as u8
                        }
                    };
                    y_plane[(py * w as i64 + px) as usize] = val;
                }
            }
            // Chroma parity follows hard cuts only. A dissolve rebuilds the
            // luma world but keeps the chroma family: blending between the
            // two families would sweep saturation through zero and the hue
            // snap at that crossing registers as a spurious cut.
            let cut_parity = r.cuts.iter().filter(|&&c| c <= k).count() as u64;
            let base_uv = segment_chroma(cut_parity);
            for cy in 0..h2 {
                for cx in 0..w2 {
                    let (px0, py0) = (2 * cx, 2 * cy);
                    let neutral = overlays.iter().any(|(b, _)| {
                        px0 < b.x1 && px0 + 2 > b.x0 && py0 < b.y1 && py0 + 2 > b.y0
                    }) || border.is_some_and(|(dx, dy)| {
                        px0 < dx || px0 + 2 > w - dx || py0 < dy || py0 + 2 > h - dy
                    });
                    if !neutral {
                        u_plane[(cy * w2 + cx) as usize] = base_uv.0;
                        v_plane[(cy * w2 + cx) as usize] = base_uv.1;
                    }
                }
            }
            for (b, luma) in &overlays {
                for py in b.y0..b.y1 {
                    for px in b.x0..b.x1 {
                        y_plane[(py * w + px) as usize] = *luma;
                    }
                }
            }
            if let Some((dx, dy)) = border {
                for py in 0..h {
                    for px in 0..w {
                        if px < dx || px >= w - dx || py < dy || py >= h - dy {
                            y_plane[(py * w + px) as usize] = r.border_luma;
                        }
                    }
                }
            }
        }
        writer.write_planes(&YuvFrame {
            y: y_plane,
            u: u_plane,
            v: v_plane,
        })?;
    }
    let bytes = writer.finish()?;

    // ---- Ground truth, all integer comparisons mirroring the filters ----
    let range_flags = |range: Option<(u64, u64)>, flag: bool| -> Vec<u64> {
        match (range, flag) {
            (Some((a, b)), true) => (a..b).collect(),
            _ => Vec::new(),
        }
    };
    let mut flagged: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    // text flagged iff union ratio > 0.02  <=>  50*A > W*H
    flagged.insert(
        "text".to_string(),
        range_flags(r.text_range, 50 * r.text_area > npx),
    );
    // border flagged iff strip mean < 3.0 (strips are uniformly border_gray)
    flagged.insert(
        "border".to_string(),
        range_flags(r.border_range, (r.border_gray as f64) < 3.0),
    );
    // exposure flagged iff bad ratio > 0.12  <=>  25*C > 3*N
    let over_flag = in_flag_union(
        r.over_range.map(|rg| (rg, 25 * r.over_count > 3 * npx)),
        r.under_range.map(|rg| (rg, 25 * r.under_count > 3 * npx)),
    );
    flagged.insert("exposure".to_string(), over_flag);
    // graying flagged iff score < 1.2  <=>  910*P < 54*N
    flagged.insert(
        "graying".to_string(),
        range_flags(r.gray_range, 910 * r.gray_patch_px < 54 * npx),
    );

    let failed_filters: Vec<String> = ["text", "border", "exposure", "graying"]
        .iter()
        .filter(|name| 20 * flagged[**name].len() as u64 > n)
        .map(|s| s.to_string())
        .collect();

    let motion = analytic_motion(&r, &origin, n);

    let mut text_boxes = BTreeMap::new();
    if let Some((a, b)) = r.text_range {
        for k in a..b {
            text_boxes.insert(k, r.text_boxes.clone());
        }
    }

    let truth = GroundTruth {
        id: spec.id.clone(),
        n_frames: n,
        width: w,
        height: h,
        flagged_frames: flagged,
        failed_filters,
        cuts: r.cuts.clone(),
        dissolve_flagged: !r.dissolves.is_empty(),
        motion,
        text_boxes,
    };
    Ok((bytes, truth))
}

fn in_flag_union(a: Option<((u64, u64), bool)>, b: Option<((u64, u64), bool)>) -> Vec<u64> {
    let mut frames = Vec::new();
    for part in [a, b].into_iter().flatten() {
        if part.1 {
            frames.extend(part.0 .0..part.0 .1);
        }
    }
    frames.sort_unstable();
    frames.dedup();
    frames
}

/// Exact expected native motion score, or None where the construction does
/// not admit one (dissolves, partial gray spans, pairs straddling a cut).
fn analytic_motion(r: &ResolvedDefects, origin: &[(i64, i64)], n: u64) -> Option<f64> {
    if !r.dissolves.is_empty() {
        return None;
    }
    if let Some((a, b)) = r.gray_range {
        return if (a, b) == (0, n) { Some(0.0) } else { None };
    }
    let e = MOTION_PAIR_INTERVAL.min(n - 1);
    let mut total = 0.0;
    let mut pairs = 0u64;
    let mut i = 0u64;
    while i + e < n {
        if r.cuts.iter().any(|&c| i < c && c <= i + e) {
            return None;
        }
        let (x0, y0) = origin[i as usize];
        let (x1, y1) = origin[(i + e) as usize];
        let (dx, dy) = (x1 - x0, y1 - y0);
        if dx.abs() > 8 || dy.abs() > 8 {
            return None;
        }
        total += ((dx * dx + dy * dy) as f64).sqrt();
        pairs += 1;
        i += e;
    }
    Some(total / pairs as f64)
}

/// Write `{id}.y4m` per clip plus `truth.jsonl` into `dir`.
pub fn generate_corpus(
    specs: &[ClipSpec],
    seed: u64,
    dir: &Path,
) -> Result<(Vec<PathBuf>, Vec<GroundTruth>), SynthError> {
    let mut seen = std::collections::BTreeSet::new();
    for s in specs {
        if !seen.insert(&s.id) {
            return Err(SynthError::ContradictorySpec(format!("duplicate clip id {}", s.id)));
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut truths = Vec::new();
    let mut truth_lines = String::new();
    for spec in specs {
        let (bytes, truth) = generate(spec, seed)?;
        let path = dir.join(format!("{}.y4m", spec.id));
        std::fs::write(&path, bytes)?;
        let value = serde_json::to_value(&truth).expect("truth serializes");
        truth_lines.push_str(&serde_json::to_string(&value).expect("truth serializes"));
        truth_lines.push('\n');
        paths.push(path);
        truths.push(truth);
    }
    std::fs::write(dir.join("truth.jsonl"), truth_lines)?;
    Ok((paths, truths))
}

/// Load `truth.jsonl` back.
pub fn read_truths(path: &Path) -> Result<Vec<GroundTruth>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let truth: GroundTruth = serde_json::from_str(line).map_err(|e| {
            SynthError::IdMismatch(format!("truth line {}: {e}", i + 1))
        })?;
        out.push(truth);
    }
    Ok(out)
}

/// Per-clip text boxes keyed for the text-detection mock.
pub fn truth_text_boxes(
    truths: &[GroundTruth],
) -> std::collections::HashMap<String, std::collections::HashMap<u64, Vec<TextBox>>> {
    truths
        .iter()
        .map(|t| {
            (
                t.id.clone(),
                t.text_boxes.iter().map(|(k, v)| (*k, v.clone())).collect(),
            )
        })
        .collect()
}

/// Deterministic mixed corpus for closed-loop filter evaluation. Clips cycle
/// through the five pixel-statistics defects; even indices get a severity
/// 1.5x past the failing threshold, odd indices a clearly-passing 0.5x (for
/// below-threshold filters the factor divides instead, keeping "1.5x" =
/// "1.5x worse than the threshold" for every kind). All clips are 128x72 at
/// 24 fps, 80 frames, so they classify as Short and chroma cells align.
pub fn standard_corpus(count: usize, t: &crate::stat_filters::StatThresholds) -> Vec<ClipSpec> {
    (0..count)
        .map(|i| {
            let factor = if i % 2 == 0 { 1.5 } else { 0.5 };
            let (kind, severity, range) = match (i / 2) % 5 {
                0 => (DefectKind::TextOverlay, factor * t.text_area_ratio, (0, 16)),
                1 => (DefectKind::BlackBorder, t.border_mean_max / factor, (0, 16)),
                2 => (DefectKind::Overexposure, factor * t.exposure_ratio, (0, 16)),
                3 => (DefectKind::Underexposure, factor * t.exposure_ratio, (0, 16)),
                _ => (DefectKind::GrayFrames, t.gray_variance_min / factor, (0, 12)),
            };
            ClipSpec {
                id: format!("synth-{i:04}"),
                width: 128,
                height: 72,
                fps_num: 24,
                fps_den: 1,
                n_frames: 80,
                defects: vec![DefectSpec {
                    kind,
                    severity,
                    frame_range: range,
                    rects: None,
                }],
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// What the pipeline actually decided for one clip.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictSet {
    pub id: String,
    pub failed_filters: Vec<String>,
    pub cuts: Vec<u64>,
    #[serde(default)]
    pub dissolve_flagged: Option<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PrCounts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

/// Score verdicts against truth: one binary decision per statistical filter
/// per clip, cut detection with a +/-1 frame tolerance, and the dissolve
/// flag where the pipeline reported one.
pub fn evaluate(
    verdicts: &[VerdictSet],
    truths: &[GroundTruth],
) -> Result<BTreeMap<String, PrCounts>, SynthError> {
    let truth_by_id: BTreeMap<&str, &GroundTruth> =
        truths.iter().map(|t| (t.id.as_str(), t)).collect();
    if verdicts.len() != truths.len() {
        return Err(SynthError::IdMismatch(format!(
            "{} verdicts vs {} truths",
            verdicts.len(),
            truths.len()
        )));
    }
    let mut report: BTreeMap<String, PrCounts> = BTreeMap::new();
    for kind in ["text", "border", "exposure", "graying", "cuts", "dissolve"] {
        report.insert(kind.to_string(), PrCounts::default());
    }
    for v in verdicts {
        let truth = truth_by_id
            .get(v.id.as_str())
            .ok_or_else(|| SynthError::IdMismatch(format!("no truth for clip {}", v.id)))?;
        for kind in ["text", "border", "exposure", "graying"] {
            let t = truth.failed_filters.iter().any(|f| f == kind);
            let o = v.failed_filters.iter().any(|f| f == kind);
            let c = report.get_mut(kind).unwrap();
            match (t, o) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        let c = report.get_mut("cuts").unwrap();
        let mut observed: Vec<(u64, bool)> = v.cuts.iter().map(|&f| (f, false)).collect();
        observed.sort_unstable();
        for &t in &truth.cuts {
            let hit = observed
                .iter_mut()
                .find(|(f, used)| !*used && f.abs_diff(t) <= 1);
            match hit {
                Some(slot) => {
                    slot.1 = true;
                    c.tp += 1;
                }
                None => c.fn_ += 1,
            }
        }
        c.fp += observed.iter().filter(|(_, used)| !used).count() as u64;
        if let Some(flagged) = v.dissolve_flagged {
            let c = report.get_mut("dissolve").unwrap();
            match (truth.dissolve_flagged, flagged) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(report)
}
