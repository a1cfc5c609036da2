//! End-to-end acceptance suite. Each test prints one `acceptance N PASS/FAIL`
//! line for its criterion (visible with `--nocapture`) and enforces the
//! criterion's runtime budget. Tests share a lock so timings are measured
//! serially, never under each other's load.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use uvcurate_core::caption_engine::{
    sample_prompt, CaptionFields, PromptBase, PromptOptions, StructuredCaption,
    SUPPLEMENT_CATEGORIES,
};
use uvcurate_core::clip_logic::{classify, extract_shorts_from_long, ClipClass, ClipRecord, SideAnchor};
use uvcurate_core::config::PipelineConfig;
use uvcurate_core::frame_io::{bt601_gray, decode_y4m_range, Frame};
use uvcurate_core::manifest_store::{ManifestStore, Status};
use uvcurate_core::pipeline::{self, StageEnv};
use uvcurate_core::provider::{
    ConcatSummarizer, FixedAttributes, FixedSimilarity, FixedVtss, KnownBoxesTextDetection,
    LumaEmbedding, ProviderSet, TemplateCaptioner,
};
use uvcurate_core::purification::{
    clip_motion_score, gate_clip, pair_motion_score, AttributeFlags, PurifyThresholds, ScoreSet,
    ATTRIBUTE_NAMES,
};
use uvcurate_core::rng::Rng;
use uvcurate_core::scene_split::{content_scores, detect_cuts, SplitParams};
use uvcurate_core::stat_filters::{
    border_depth, border_mean, evaluate_frame, exposure_bad_ratio, graying_score,
    text_union_ratio, StatThresholds, TextBox,
};
use uvcurate_core::synth_corpus::{
    evaluate, generate_corpus, standard_corpus, truth_text_boxes, ClipSpec, DefectKind,
    DefectSpec, VerdictSet,
};

/// One criterion at a time: budgets are wall-clock promises and must not be
/// measured while another test saturates the cores.
static SERIAL: Mutex<()> = Mutex::new(());

fn criterion(
    n: u32,
    name: &str,
    budget: Option<Duration>,
    body: impl FnOnce() -> Result<String, String>,
) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let outcome = outcome.and_then(|detail| match budget {
        Some(b) if elapsed >= b => Err(format!(
            "runtime {:.2}s exceeded the {:.0}s budget",
            elapsed.as_secs_f64(),
            b.as_secs_f64()
        )),
        _ => Ok(detail),
    });
    match outcome {
        Ok(detail) => println!(
            "acceptance {n:2} PASS: {name} ({detail}; {:.2}s)",
            elapsed.as_secs_f64()
        ),
        Err(msg) => {
            println!("acceptance {n:2} FAIL: {name} ({msg})");
            panic!("acceptance criterion {n} ({name}) failed: {msg}");
        }
    }
}

macro_rules! check {
    ($cond:expr, $($arg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($arg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// 1. Threshold fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_threshold_fidelity() {
    criterion(1, "threshold fidelity", Some(Duration::from_secs(1)), || {
        let out = Command::new(env!("CARGO_BIN_EXE_uvcurate"))
            .args(["config", "dump"])
            .env_remove("UVCURATE_CONFIG")
            .output()
            .map_err(|e| format!("cannot run binary: {e}"))?;
        check!(out.status.success(), "config dump exited {:?}", out.status.code());

        let golden: &[u8] = include_bytes!("golden/default_config.toml");
        check!(
            out.stdout == golden,
            "config dump differs from the golden file ({} vs {} bytes)",
            out.stdout.len(),
            golden.len()
        );

        let text = String::from_utf8(out.stdout).map_err(|e| format!("non-UTF-8 dump: {e}"))?;
        let config = PipelineConfig::parse(&text).map_err(|e| format!("dump does not re-parse: {e}"))?;
        check!(config == PipelineConfig::default(), "dump round-trip is not the default config");

        let f = &config.filters;
        check!(
            f.text_area_ratio == 0.02
                && f.bad_frame_ratio == 0.05
                && f.border_depth_frac == 0.03
                && f.border_mean_max == 3.0
                && f.exposure_low == 5
                && f.exposure_high == 250
                && f.exposure_ratio == 0.12
                && f.gray_variance_min == 1.2,
            "statistical thresholds drifted: {f:?}"
        );
        let p = &config.purify;
        check!(
            p.vtss_min == 0.01
                && p.motion_min == 0.1
                && p.motion_max == 100.0
                && p.caption_sim_min == 0.2,
            "purification thresholds drifted: {p:?}"
        );
        Ok("ten pinned thresholds byte-identical to the golden dump".to_string())
    });
}

// ---------------------------------------------------------------------------
// 2. Filter oracle equivalence
// ---------------------------------------------------------------------------

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12)
}

/// Oracle: rasterize every box onto a bitmap and count covered pixels.
fn union_ratio_oracle(boxes: &[TextBox], w: u32, h: u32) -> f64 {
    let mut grid = vec![false; (w as usize) * (h as usize)];
    for b in boxes {
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                grid[y as usize * w as usize + x as usize] = true;
            }
        }
    }
    grid.iter().filter(|&&c| c).count() as f64 / (w as f64 * h as f64)
}

/// Oracle: walk every pixel and test border membership by coordinates.
fn border_mean_oracle(frame: &Frame, frac: f64) -> f64 {
    let dx = border_depth(frame.width, frac);
    let dy = border_depth(frame.height, frac);
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for y in 0..frame.height {
        for x in 0..frame.width {
            if x < dx || x >= frame.width - dx || y < dy || y >= frame.height - dy {
                let (r, g, b) = frame.pixel(x, y);
                sum += bt601_gray(r, g, b) as f64;
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn exposure_oracle(frame: &Frame, low: u8, high: u8) -> f64 {
    let mut bad = 0u64;
    for y in 0..frame.height {
        for x in 0..frame.width {
            let (r, g, b) = frame.pixel(x, y);
            let gray = bt601_gray(r, g, b);
            if gray > high || gray < low {
                bad += 1;
            }
        }
    }
    bad as f64 / (frame.width as f64 * frame.height as f64)
}

/// Oracle: per-channel variance via E[x^2] - m^2 instead of squared deviations.
fn graying_oracle(frame: &Frame) -> f64 {
    let mut sum = 0.0f64;
    for y in 0..frame.height {
        for x in 0..frame.width {
            let (r, g, b) = frame.pixel(x, y);
            let (r, g, b) = (r as f64, g as f64, b as f64);
            let m = (r + g + b) / 3.0;
            sum += (r * r + g * g + b * b) / 3.0 - m * m;
        }
    }
    sum / (frame.width as f64 * frame.height as f64)
}

#[test]
fn criterion_02_filter_oracle_equivalence() {
    criterion(2, "filter oracle equivalence", Some(Duration::from_secs(60)), || {
        let mut rng = Rng::for_stream(2, "filter-oracles");
        for i in 0..1000u32 {
            let w = 16 + rng.next_below(497) as u32;
            let h = 16 + rng.next_below(497) as u32;
            let rgb: Vec<u8> = (0..w as usize * h as usize * 3)
                .map(|_| rng.next_below(256) as u8)
                .collect();
            let frame = Frame::from_rgb(w, h, rgb);
            let boxes: Vec<TextBox> = (0..rng.next_below(6))
                .map(|_| {
                    let x0 = rng.next_below(w as u64 - 1) as u32;
                    let y0 = rng.next_below(h as u64 - 1) as u32;
                    let x1 = x0 + 1 + rng.next_below((w - x0 - 1).max(1) as u64) as u32;
                    let y1 = y0 + 1 + rng.next_below((h - y0 - 1).max(1) as u64) as u32;
                    TextBox { x0, y0, x1, y1 }
                })
                .collect();

            let tr = text_union_ratio(&boxes, w, h).map_err(|e| format!("frame {i}: {e}"))?;
            let to = union_ratio_oracle(&boxes, w, h);
            check!(close(tr, to), "frame {i} ({w}x{h}): text ratio {tr} vs oracle {to}");

            let bm = border_mean(&frame, 0.03).map_err(|e| format!("frame {i}: {e}"))?;
            let bo = border_mean_oracle(&frame, 0.03);
            check!(close(bm, bo), "frame {i} ({w}x{h}): border mean {bm} vs oracle {bo}");

            let er = exposure_bad_ratio(&frame, 5, 250);
            let eo = exposure_oracle(&frame, 5, 250);
            check!(close(er, eo), "frame {i} ({w}x{h}): exposure ratio {er} vs oracle {eo}");

            let gs = graying_score(&frame, false);
            let go = graying_oracle(&frame);
            check!(close(gs, go), "frame {i} ({w}x{h}): graying {gs} vs oracle {go}");
        }
        Ok("4 filters match naive oracles on 1000 random frames to 1e-9".to_string())
    });
}

// ---------------------------------------------------------------------------
// 3. Synthetic corpus closed loop
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_synthetic_corpus_closed_loop() {
    criterion(3, "synthetic corpus closed loop", Some(Duration::from_secs(300)), || {
        let config = PipelineConfig {
            worker_count: 8,
            ..PipelineConfig::default()
        };
        let specs = standard_corpus(200, &config.filters);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let media = dir.path().join("media");
        let (_, truths) = generate_corpus(&specs, 7, &media).map_err(|e| e.to_string())?;

        let providers = ProviderSet {
            textboxes: Some(Box::new(KnownBoxesTextDetection::new(truth_text_boxes(&truths)))),
            ..ProviderSet::default()
        };
        let env = StageEnv {
            config: &config,
            media_dir: &media,
            providers: &providers,
            strict_providers: false,
        };
        let manifest = dir.path().join("manifest.jsonl");
        let mut store = ManifestStore::open(&manifest).map_err(|e| e.to_string())?;
        pipeline::ingest(&mut store, &env, true).map_err(|e| e.to_string())?;
        let summary = pipeline::filter(&mut store, &env).map_err(|e| e.to_string())?;
        check!(summary.examined == 200, "filter examined {} of 200 clips", summary.examined);

        let snapshot = pipeline::manifest_snapshot(&manifest).map_err(|e| e.to_string())?;
        let verdicts: Vec<VerdictSet> = truths
            .iter()
            .map(|t| {
                let entry = &snapshot[&t.id];
                VerdictSet {
                    id: t.id.clone(),
                    failed_filters: if entry.status == Status::Rejected {
                        entry.reject_reasons.clone()
                    } else {
                        Vec::new()
                    },
                    cuts: Vec::new(),
                    dissolve_flagged: None,
                }
            })
            .collect();
        let report = evaluate(&verdicts, &truths).map_err(|e| e.to_string())?;
        for kind in ["text", "border", "exposure", "graying"] {
            let c = &report[kind];
            check!(c.tp > 0, "{kind} filter never fired on the defect corpus");
            check!(
                c.precision() == 1.0 && c.recall() == 1.0,
                "{kind}: precision {} recall {} (tp {} fp {} fn {})",
                c.precision(),
                c.recall(),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        Ok("200 clips at 1.5x/0.5x severities: precision=recall=1.0 for all 4 filters".to_string())
    });
}

// ---------------------------------------------------------------------------
// 4. Scene detection
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_scene_detection() {
    criterion(4, "scene detection", Some(Duration::from_secs(120)), || {
        let mut rng = Rng::for_stream(4, "cut-jitter");
        let mut specs = Vec::new();
        let mut planted = 0u64;
        for i in 0..50usize {
            let bases: &[u64] = match i % 3 {
                0 => &[90],
                1 => &[60, 120],
                _ => &[45, 90, 135],
            };
            planted += bases.len() as u64;
            let mut defects: Vec<DefectSpec> = bases
                .iter()
                .map(|&b| {
                    let c = (b as i64 + rng.next_below(17) as i64 - 8) as u64;
                    DefectSpec {
                        kind: DefectKind::HardCut,
                        severity: 0.0,
                        frame_range: (c, c + 1),
                        rects: None,
                    }
                })
                .collect();
            // Freeze the world drift over a late span on half the clips so
            // the no-false-cut claim covers static as well as slow-pan
            // segments. Planted cuts never reach past frame 143.
            if i % 2 == 0 {
                defects.push(DefectSpec {
                    kind: DefectKind::StaticMotion,
                    severity: 0.0,
                    frame_range: (152, 176),
                    rects: None,
                });
            }
            specs.push(ClipSpec {
                id: format!("cuts-{i:03}"),
                width: 128,
                height: 72,
                fps_num: 24,
                fps_den: 1,
                n_frames: 180,
                defects,
            });
        }
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (paths, truths) = generate_corpus(&specs, 13, dir.path()).map_err(|e| e.to_string())?;

        let params = SplitParams::default();
        let mut verdicts = Vec::new();
        for (path, truth) in paths.iter().zip(&truths) {
            let frames = decode_y4m_range(path, 0, truth.n_frames).map_err(|e| e.to_string())?;
            let scores = content_scores(&frames).map_err(|e| e.to_string())?;
            let cuts = detect_cuts(&scores, &params);
            verdicts.push(VerdictSet {
                id: truth.id.clone(),
                failed_filters: Vec::new(),
                cuts: cuts.cuts.iter().map(|&c| c as u64).collect(),
                dissolve_flagged: None,
            });
        }
        let report = evaluate(&verdicts, &truths).map_err(|e| e.to_string())?;
        let c = &report["cuts"];
        check!(c.fp == 0, "{} false cuts on static/slow-pan segments", c.fp);
        check!(c.fn_ == 0, "missed {} of {planted} planted cuts", c.fn_);
        check!(c.tp == planted, "matched {} of {planted} planted cuts", c.tp);
        Ok(format!("{planted} cuts across 50 clips found within ±1 frame, zero false cuts"))
    });
}

// ---------------------------------------------------------------------------
// 5. Motion scorer
// ---------------------------------------------------------------------------

/// Unbounded procedural texture; every frame is a crop of one infinite world,
/// so a shifted crop is an exact pure translation.
fn texture_at(x: i64, y: i64) -> u8 {
    let mut v = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    v ^= v >> 31;
    v = v.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    v ^= v >> 27;
    (v % 256) as u8
}

fn shifted_frame(w: u32, h: u32, dx: i64, dy: i64) -> Frame {
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let g = texture_at(x as i64 + dx, y as i64 + dy);
            rgb.extend_from_slice(&[g, g, g]);
        }
    }
    Frame::from_rgb(w, h, rgb)
}

#[test]
fn criterion_05_motion_scorer() {
    criterion(5, "motion scorer", Some(Duration::from_secs(60)), || {
        let t = PurifyThresholds::default();
        for d in 0..=4i64 {
            let a = shifted_frame(96, 64, 0, 0);
            let b = shifted_frame(96, 64, d, 0);
            let pair = pair_motion_score(&a, &b, &t).map_err(|e| e.to_string())?;
            check!(pair == d as f64, "x displacement {d}: pair score {pair}");
            let clip = clip_motion_score(&[a, b], &t).map_err(|e| e.to_string())?;
            check!(clip == d as f64, "x displacement {d}: clip score {clip}");
        }
        let a = shifted_frame(96, 64, 0, 0);
        let b = shifted_frame(96, 64, 0, 3);
        let pair = pair_motion_score(&a, &b, &t).map_err(|e| e.to_string())?;
        check!(pair == 3.0, "y displacement 3: pair score {pair}");

        // Per-frame displacement 2 across a six-frame clip, scored pairwise.
        let mut t1 = t.clone();
        t1.flow_sample_interval = 1;
        let frames: Vec<Frame> = (0..6).map(|k| shifted_frame(96, 64, 2 * k, 0)).collect();
        let clip = clip_motion_score(&frames, &t1).map_err(|e| e.to_string())?;
        check!(clip == 2.0, "per-frame displacement 2: clip score {clip}");

        let frames: Vec<Frame> = (0..4).map(|_| shifted_frame(96, 64, 5, 7)).collect();
        let clip = clip_motion_score(&frames, &t).map_err(|e| e.to_string())?;
        check!(clip == 0.0, "identical frames: clip score {clip}");
        Ok("translations d in 0..=4 recovered exactly; identical frames score 0".to_string())
    });
}

// ---------------------------------------------------------------------------
// 6. Caption sampling law
// ---------------------------------------------------------------------------

fn sampling_fixture() -> StructuredCaption {
    StructuredCaption {
        fields: CaptionFields {
            brief: "A kite climbs over the dunes.".to_string(),
            detailed: "A red kite climbs steadily over pale dunes under a hard wind.".to_string(),
            background: "Open dunes with sparse grass.".to_string(),
            theme: "Wind sports.".to_string(),
            style: "Documentary.".to_string(),
            shot_type: "Wide shot.".to_string(),
            camera_movement: "Slow pan.".to_string(),
            lighting: "Harsh midday sun.".to_string(),
            atmosphere: "Bracing.".to_string(),
        },
        summarized: "A red kite climbs over windswept dunes in harsh midday light.".to_string(),
    }
}

#[test]
fn criterion_06_caption_sampling_law() {
    criterion(6, "caption sampling law", Some(Duration::from_secs(30)), || {
        let caption = sampling_fixture();
        let opts = PromptOptions::default();
        let n = 30_000u32;
        let seed = 20260816u64;

        type DrawTally = (Vec<u8>, [u64; 3], BTreeMap<&'static str, u64>);
        // Streams are keyed by (seed, clip id), exactly as the pipeline keys
        // per-clip prompt draws.
        let render = |seed: u64| -> Result<DrawTally, String> {
            let mut bytes = Vec::new();
            let mut bases = [0u64; 3];
            let mut supplements: BTreeMap<&'static str, u64> =
                SUPPLEMENT_CATEGORIES.iter().map(|&c| (c, 0)).collect();
            for i in 0..n {
                let id = format!("clip-{i:06}");
                let mut rng = Rng::for_stream(seed, &id);
                let s = sample_prompt(&caption, &mut rng, &opts).map_err(|e| e.to_string())?;
                bases[match s.base {
                    PromptBase::Brief => 0,
                    PromptBase::Detailed => 1,
                    PromptBase::Summarized => 2,
                }] += 1;
                if let Some(supp) = &s.supplement {
                    *supplements
                        .get_mut(supp.as_str())
                        .ok_or_else(|| format!("unknown supplement {supp}"))? += 1;
                }
                let line = serde_json::json!({
                    "clip_id": id,
                    "base": s.base,
                    "supplement": s.supplement,
                    "text": s.text,
                });
                bytes.extend_from_slice(line.to_string().as_bytes());
                bytes.push(b'\n');
            }
            Ok((bytes, bases, supplements))
        };

        let (first, bases, supplements) = render(seed)?;
        let (second, _, _) = render(seed)?;
        check!(first == second, "identical seed produced different prompt byte streams");

        for (b, count) in ["brief", "detailed", "summarized"].iter().zip(bases) {
            let freq = count as f64 / n as f64;
            check!(
                (freq - 1.0 / 3.0).abs() < 0.02,
                "base {b} frequency {freq:.4} outside 1/3 ± 0.02"
            );
        }
        let non_summarized: u64 = supplements.values().sum();
        check!(non_summarized == bases[0] + bases[1], "supplement draws vs non-summarized bases");
        for (name, count) in &supplements {
            let freq = *count as f64 / non_summarized as f64;
            check!(
                (freq - 1.0 / 7.0).abs() < 0.03,
                "supplement {name} frequency {freq:.4} outside 1/7 ± 0.03"
            );
        }
        Ok(format!(
            "30000 draws: bases within 1/3 ± 0.02, supplements within 1/7 ± 0.03, {} stream bytes reproduced",
            first.len()
        ))
    });
}

// ---------------------------------------------------------------------------
// 7. Sub-clip / duration rules
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_duration_rules() {
    criterion(7, "sub-clip duration rules", Some(Duration::from_secs(1)), || {
        let class_table = [
            (2.9, ClipClass::Discard),
            (3.0, ClipClass::Short),
            (5.3, ClipClass::Short),
            (10.0, ClipClass::Short),
            (10.1, ClipClass::Long),
            (45.0, ClipClass::Long),
            (60.0, ClipClass::Long),
            (61.0, ClipClass::Long),
            (90.0, ClipClass::Long),
        ];
        for (duration, want) in class_table {
            let got = classify(duration).map_err(|e| e.to_string())?;
            check!(got == want, "classify({duration}) = {got:?}, want {want:?}");
        }

        let record = |frames: u64| ClipRecord {
            id: "t".to_string(),
            source_id: "t".to_string(),
            start_frame: 0,
            end_frame: frames,
            fps_num: 30,
            fps_den: 1,
            width: 1280,
            height: 720,
            set: classify(frames as f64 / 30.0).unwrap(),
        };

        // 30 fps frame counts for the long durations; windows are 300 frames.
        let window_table: [(u64, Vec<(u64, u64)>); 5] = [
            (303, vec![(1, 301)]),                              // 10.1 s
            (1350, vec![(525, 825)]),                           // 45 s
            (1800, vec![(750, 1050)]),                          // 60 s
            (1830, vec![(0, 300), (765, 1065), (1530, 1830)]),  // 61 s
            (2700, vec![(0, 300), (1200, 1500), (2400, 2700)]), // 90 s
        ];
        for (frames, want) in window_table {
            let clips = extract_shorts_from_long(&record(frames), SideAnchor::Edges)
                .map_err(|e| format!("{frames} frames: {e}"))?;
            let got: Vec<(u64, u64)> = clips.iter().map(|c| (c.start_frame, c.end_frame)).collect();
            check!(got == want, "{frames} frames: windows {got:?}, want {want:?}");
            for (k, c) in clips.iter().enumerate() {
                check!(c.set == ClipClass::Short, "{frames} frames: window {k} not Short");
                check!(c.id == format!("t.s{k}"), "{frames} frames: window id {}", c.id);
            }
            for pair in clips.windows(2) {
                check!(
                    pair[0].end_frame <= pair[1].start_frame,
                    "{frames} frames: windows overlap"
                );
            }
        }

        // Short and discard durations have no windows to extract.
        for frames in [87u64, 90, 159, 300] {
            check!(
                extract_shorts_from_long(&record(frames), SideAnchor::Edges).is_err(),
                "{frames} frames should not be extractable"
            );
        }
        Ok("9 durations classify per the rules; 90 s yields three disjoint windows".to_string())
    });
}

// ---------------------------------------------------------------------------
// 8. Manifest determinism
// ---------------------------------------------------------------------------

fn full_mock_providers(truths: &[uvcurate_core::synth_corpus::GroundTruth]) -> ProviderSet {
    ProviderSet {
        vtss: Some(Box::new(FixedVtss(0.5))),
        similarity: Some(Box::new(FixedSimilarity(0.9))),
        attributes: Some(Box::new(FixedAttributes(AttributeFlags::none()))),
        embedding: Some(Box::new(LumaEmbedding::default())),
        textboxes: Some(Box::new(KnownBoxesTextDetection::new(truth_text_boxes(truths)))),
        caption: Some(Box::new(TemplateCaptioner)),
        summary: Some(Box::new(ConcatSummarizer)),
        flow: None,
    }
}

#[test]
fn criterion_08_manifest_determinism() {
    criterion(8, "manifest determinism", Some(Duration::from_secs(300)), || {
        let base_config = PipelineConfig::default();
        // A mixed corpus: single-shot statistical clips, multi-cut sources
        // that exercise scene splitting, and one long source that exercises
        // window extraction.
        let mut specs = standard_corpus(16, &base_config.filters);
        for i in 0..4 {
            specs.push(ClipSpec {
                id: format!("cutsrc-{i}"),
                width: 128,
                height: 72,
                fps_num: 24,
                fps_den: 1,
                n_frames: 270,
                defects: [90u64, 180]
                    .iter()
                    .map(|&c| DefectSpec {
                        kind: DefectKind::HardCut,
                        severity: 0.0,
                        frame_range: (c, c + 1),
                        rects: None,
                    })
                    .collect(),
            });
        }
        specs.push(ClipSpec {
            id: "longsrc".to_string(),
            width: 128,
            height: 72,
            fps_num: 24,
            fps_den: 1,
            n_frames: 1560,
            defects: Vec::new(),
        });
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let media = dir.path().join("media");
        let (_, truths) = generate_corpus(&specs, 99, &media).map_err(|e| e.to_string())?;
        let providers = full_mock_providers(&truths);

        let run = |workers: u32, manifest: &Path| -> Result<(), String> {
            let mut config = base_config.clone();
            config.worker_count = workers;
            let env = StageEnv {
                config: &config,
                media_dir: &media,
                providers: &providers,
                strict_providers: false,
            };
            let mut store = ManifestStore::open(manifest).map_err(|e| e.to_string())?;
            pipeline::ingest(&mut store, &env, false).map_err(|e| e.to_string())?;
            pipeline::split(&mut store, &env).map_err(|e| e.to_string())?;
            pipeline::filter(&mut store, &env).map_err(|e| e.to_string())?;
            pipeline::purify(&mut store, &env).map_err(|e| e.to_string())?;
            pipeline::caption(&mut store, &env).map_err(|e| e.to_string())?;
            Ok(())
        };
        let m1: PathBuf = dir.path().join("workers1.jsonl");
        let m8: PathBuf = dir.path().join("workers8.jsonl");
        run(1, &m1)?;
        run(8, &m8)?;

        let b1 = std::fs::read(&m1).map_err(|e| e.to_string())?;
        let b8 = std::fs::read(&m8).map_err(|e| e.to_string())?;
        check!(!b1.is_empty(), "empty manifest");
        check!(b1 == b8, "manifests differ between workers=1 and workers=8");

        // The comparison must cover a pipeline that actually went deep.
        let snapshot = pipeline::manifest_snapshot(&m1).map_err(|e| e.to_string())?;
        let captioned = snapshot.values().filter(|e| e.status == Status::Captioned).count();
        let rejected = snapshot.values().filter(|e| e.status == Status::Rejected).count();
        check!(captioned > 0, "no clip reached captioned");
        check!(rejected > 0, "no clip was rejected");
        check!(
            snapshot.keys().any(|id| id.starts_with("longsrc") && id.contains(':')),
            "long source produced no windows"
        );
        Ok(format!(
            "{} manifest bytes identical across workers 1 and 8 ({captioned} captioned, {rejected} rejected)",
            b1.len()
        ))
    });
}

// ---------------------------------------------------------------------------
// 9. Gate monotonicity
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_gate_monotonicity() {
    criterion(9, "gate monotonicity", None, || {
        let t = PurifyThresholds::default();
        let gate = |vtss: f64, motion: f64, sim: f64, attrs: &AttributeFlags| -> Result<bool, String> {
            let s = ScoreSet {
                vtss: Some(vtss),
                motion: Some(motion),
                caption_sim: Some(sim),
                attributes: Some(attrs.clone()),
            };
            gate_clip(&s, &t).map(|d| d.pass).map_err(|e| e.to_string())
        };

        let mut rng = Rng::for_stream(9, "gate-monotonicity");
        let mut passes = 0u64;
        let mut fails = 0u64;
        for i in 0..10_000u32 {
            // Scores straddle their thresholds so both verdicts stay common.
            let vtss = -0.04 + 0.10 * rng.next_f64();
            let motion = 120.0 * rng.next_f64();
            let sim = -0.1 + 0.6 * rng.next_f64();
            let mut attrs = AttributeFlags::none();
            for name in ATTRIBUTE_NAMES {
                if rng.next_below(16) == 0 {
                    attrs.set(name, true)?;
                }
            }
            if gate(vtss, motion, sim, &attrs)? {
                passes += 1;
            } else {
                fails += 1;
            }

            // Degrading any one score past its threshold must fail the clip,
            // whatever the other scores say.
            let eps = 1e-9 + rng.next_f64();
            check!(
                !gate(t.vtss_min - eps * 0.01, motion, sim, &attrs)?,
                "case {i}: degraded vtss passed"
            );
            check!(
                !gate(vtss, t.motion_min - eps * 0.05, sim, &attrs)?,
                "case {i}: motion below band passed"
            );
            check!(
                !gate(vtss, t.motion_max + eps * 10.0, sim, &attrs)?,
                "case {i}: motion above band passed"
            );
            check!(
                !gate(vtss, motion, t.caption_sim_min - eps * 0.1, &attrs)?,
                "case {i}: degraded caption similarity passed"
            );
            if i % 97 == 0 {
                check!(!gate(f64::NAN, motion, sim, &attrs)?, "case {i}: NaN vtss passed");
                check!(!gate(vtss, f64::NAN, sim, &attrs)?, "case {i}: NaN motion passed");
                check!(!gate(vtss, motion, f64::NAN, &attrs)?, "case {i}: NaN similarity passed");
            }

            // Flipping any attribute to true must fail the clip.
            for name in ATTRIBUTE_NAMES {
                let mut flipped = attrs.clone();
                flipped.set(name, true)?;
                check!(
                    !gate(vtss, motion, sim, &flipped)?,
                    "case {i}: flipped attribute {name} passed"
                );
            }
        }
        check!(passes > 0 && fails > 0, "degenerate sample: {passes} passes, {fails} fails");
        Ok(format!(
            "10000 score sets ({passes} pass, {fails} fail): no degradation ever flipped fail to pass"
        ))
    });
}

// ---------------------------------------------------------------------------
// 10. Throughput goal (non-gating)
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_throughput_goal() {
    criterion(10, "throughput goal", None, || {
        let t = StatThresholds::default();
        let frames: Vec<Frame> = (0..12)
            .map(|k| {
                let mut rgb = vec![0u8; 1920 * 1080 * 3];
                let mut rng = Rng::for_stream(10, &format!("throughput-{k}"));
                for chunk in rgb.chunks_exact_mut(8) {
                    chunk.copy_from_slice(&rng.next_u64().to_le_bytes());
                }
                Frame::from_rgb(1920, 1080, rgb)
            })
            .collect();
        let boxes = [
            TextBox { x0: 100, y0: 900, x1: 700, y1: 980 },
            TextBox { x0: 650, y0: 920, x1: 1100, y1: 1000 },
            TextBox { x0: 1500, y0: 40, x1: 1880, y1: 120 },
        ];

        for frame in frames.iter().take(2) {
            evaluate_frame(frame, Some(&boxes), &t).map_err(|e| e.to_string())?;
        }

        let start = Instant::now();
        let mut evals = 0u64;
        let mut sink = 0u64;
        loop {
            let frame = &frames[(evals % frames.len() as u64) as usize];
            let flags = evaluate_frame(frame, Some(&boxes), &t).map_err(|e| e.to_string())?;
            sink ^= (flags.border as u64) << 1 | (flags.exposure as u64) << 2 | (flags.graying as u64) << 3;
            evals += 1;
            if (evals >= 48 && start.elapsed() >= Duration::from_millis(750)) || evals >= 2000 {
                break;
            }
        }
        std::hint::black_box(sink);
        let fps = evals as f64 / start.elapsed().as_secs_f64();
        let verdict = if fps >= 200.0 { "meets" } else { "below" };
        Ok(format!(
            "statistical filter stack at {fps:.0} frames/s/core on 1920x1080 ({verdict} the 200 fps goal; non-gating)"
        ))
    });
}
