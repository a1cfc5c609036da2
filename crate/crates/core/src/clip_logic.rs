//! Duration-based clip classification, short-window extraction from long
//! clips, and the centered sub-clip sampler used at training time.
//!
//! All window arithmetic happens in whole frames with round-half-up on the
//! rational frame rate, so results are identical regardless of float quirks.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ClipLogicError {
    #[error("clip duration {0} s is not positive")]
    NonPositiveDuration(f64),
    #[error("clip {id} ({duration_s} s) is not a long clip")]
    NotLongClip { id: String, duration_s: f64 },
}

/// Collection set a clip belongs to by duration:
/// [3, 10] s short, (10, inf) long, (0, 3) s discard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipClass {
    Short,
    Long,
    Discard,
}

pub fn classify(duration_s: f64) -> Result<ClipClass, ClipLogicError> {
    if !(duration_s > 0.0) {
        return Err(ClipLogicError::NonPositiveDuration(duration_s));
    }
    Ok(if duration_s < 3.0 {
        ClipClass::Discard
    } else if duration_s <= 10.0 {
        ClipClass::Short
    } else {
        ClipClass::Long
    })
}

/// One clip: a half-open frame range of a source stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub source_id: String,
    pub start_frame: u64,
    pub end_frame: u64,
    pub fps_num: u32,
    pub fps_den: u32,
    pub width: u32,
    pub height: u32,
    pub set: ClipClass,
}

impl ClipRecord {
    pub fn n_frames(&self) -> u64 {
        self.end_frame - self.start_frame
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 * self.fps_den as f64 / self.fps_num as f64
    }
}

/// Where the extra windows of very long clips are anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideAnchor {
    /// Flush against the clip's first and last frame.
    Edges,
    /// Centered on the first and last quarter points.
    QuarterCenters,
}

/// `round(seconds * fps)` in exact integer arithmetic, round half up.
fn frames_for_seconds(seconds: u64, fps_num: u32, fps_den: u32) -> u64 {
    (2 * seconds * fps_num as u64 + fps_den as u64) / (2 * fps_den as u64)
}

/// Cut 10-second windows out of a long clip.
///
/// (10, 60] s clips yield one window centered in the clip; clips longer than
/// 60 s additionally yield two side windows (see `SideAnchor`). Windows are
/// returned in chronological order, each exactly `round(10 * fps)` frames,
/// pairwise disjoint and inside the parent's frame range. When centering
/// leaves an odd frame remainder the window sits one frame earlier
/// (bias left).
pub fn extract_shorts_from_long(
    clip: &ClipRecord,
    anchor: SideAnchor,
) -> Result<Vec<ClipRecord>, ClipLogicError> {
    let duration = clip.duration_s();
    match classify(duration) {
        Ok(ClipClass::Long) => {}
        _ => {
            return Err(ClipLogicError::NotLongClip {
                id: clip.id.clone(),
                duration_s: duration,
            })
        }
    }
    let total = clip.n_frames();
    let window = frames_for_seconds(10, clip.fps_num, clip.fps_den).min(total);
    let middle_start = (total - window) / 2;
    let mut starts = vec![middle_start];
    if duration > 60.0 {
        match anchor {
            SideAnchor::Edges => {
                starts.push(0);
                starts.push(total - window);
            }
            SideAnchor::QuarterCenters => {
                let q1_center = total / 4;
                let q3_center = 3 * total / 4;
                starts.push(q1_center.saturating_sub(window / 2).min(total - window));
                starts.push(q3_center.saturating_sub(window / 2).min(total - window));
            }
        }
    }
    starts.sort_unstable();
    starts.dedup();
    let records = starts
        .iter()
        .enumerate()
        .map(|(k, &s)| ClipRecord {
            id: format!("{}.s{}", clip.id, k),
            source_id: clip.source_id.clone(),
            start_frame: clip.start_frame + s,
            end_frame: clip.start_frame + s + window,
            fps_num: clip.fps_num,
            fps_den: clip.fps_den,
            width: clip.width,
            height: clip.height,
            set: ClipClass::Short,
        })
        .collect();
    Ok(records)
}

/// Centered sub-clip of at most `target` frames: `[start, start+t)` with
/// `t = min(n_frames, target)` and `start = floor((n_frames - t) / 2)`.
/// An odd remainder leaves one more frame on the right (bias left).
pub fn subclip_sample(n_frames: u64, target: u64) -> (u64, u64) {
    let t = n_frames.min(target);
    let start = (n_frames - t) / 2;
    (start, start + t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn long_clip(n_frames: u64, fps_num: u32, fps_den: u32) -> ClipRecord {
        ClipRecord {
            id: "src#000".to_string(),
            source_id: "src".to_string(),
            start_frame: 0,
            end_frame: n_frames,
            fps_num,
            fps_den,
            width: 1920,
            height: 1080,
            set: ClipClass::Long,
        }
    }

    #[test]
    fn classification_boundaries() {
        assert_eq!(classify(2.9).unwrap(), ClipClass::Discard);
        assert_eq!(classify(3.0).unwrap(), ClipClass::Short);
        assert_eq!(classify(5.3).unwrap(), ClipClass::Short);
        assert_eq!(classify(10.0).unwrap(), ClipClass::Short);
        assert_eq!(classify(10.1).unwrap(), ClipClass::Long);
        assert!(matches!(
            classify(0.0),
            Err(ClipLogicError::NonPositiveDuration(_))
        ));
        assert!(matches!(
            classify(-1.0),
            Err(ClipLogicError::NonPositiveDuration(_))
        ));
        assert!(matches!(
            classify(f64::NAN),
            Err(ClipLogicError::NonPositiveDuration(_))
        ));
    }

    #[test]
    fn forty_five_seconds_yields_one_centered_window() {
        // 45 s at 30 fps = 1350 frames; window 300 frames at [525, 825).
        let clips = extract_shorts_from_long(&long_clip(1350, 30, 1), SideAnchor::Edges).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!((clips[0].start_frame, clips[0].end_frame), (525, 825));
        assert_eq!(clips[0].set, ClipClass::Short);
        assert_eq!(clips[0].id, "src#000.s0");
    }

    #[test]
    fn ninety_seconds_yields_three_disjoint_windows() {
        // 2700 frames: [0,300), [1200,1500), [2400,2700).
        let clips = extract_shorts_from_long(&long_clip(2700, 30, 1), SideAnchor::Edges).unwrap();
        let ranges: Vec<(u64, u64)> = clips.iter().map(|c| (c.start_frame, c.end_frame)).collect();
        assert_eq!(ranges, vec![(0, 300), (1200, 1500), (2400, 2700)]);
    }

    #[test]
    fn sixty_one_seconds_windows_do_not_overlap() {
        let clips = extract_shorts_from_long(&long_clip(1830, 30, 1), SideAnchor::Edges).unwrap();
        assert_eq!(clips.len(), 3);
        for pair in clips.windows(2) {
            assert!(pair[0].end_frame <= pair[1].start_frame);
        }
        for c in &clips {
            assert_eq!(c.n_frames(), 300);
            assert!(c.end_frame <= 1830);
        }
    }

    #[test]
    fn sixty_seconds_is_middle_only() {
        let clips = extract_shorts_from_long(&long_clip(1800, 30, 1), SideAnchor::Edges).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!((clips[0].start_frame, clips[0].end_frame), (750, 1050));
    }

    #[test]
    fn barely_long_clip_window_stays_in_bounds_biased_left() {
        // 10.1 s = 303 frames: remainder 3, start floor(3/2) = 1.
        let clips = extract_shorts_from_long(&long_clip(303, 30, 1), SideAnchor::Edges).unwrap();
        assert_eq!((clips[0].start_frame, clips[0].end_frame), (1, 301));
    }

    #[test]
    fn ntsc_rate_window_length_rounds_half_up() {
        // round(10 * 30000/1001) = round(299.7) = 300.
        let clips =
            extract_shorts_from_long(&long_clip(3300, 30000, 1001), SideAnchor::Edges).unwrap();
        assert_eq!(clips[0].n_frames(), 300);
    }

    #[test]
    fn quarter_center_windows_are_disjoint_and_in_bounds() {
        let clips =
            extract_shorts_from_long(&long_clip(2700, 30, 1), SideAnchor::QuarterCenters).unwrap();
        assert_eq!(clips.len(), 3);
        let ranges: Vec<(u64, u64)> = clips.iter().map(|c| (c.start_frame, c.end_frame)).collect();
        assert_eq!(ranges, vec![(525, 825), (1200, 1500), (1875, 2175)]);
    }

    #[test]
    fn offsets_are_relative_to_parent_start() {
        let mut clip = long_clip(1350, 30, 1);
        clip.start_frame = 1000;
        clip.end_frame = 2350;
        let clips = extract_shorts_from_long(&clip, SideAnchor::Edges).unwrap();
        assert_eq!((clips[0].start_frame, clips[0].end_frame), (1525, 1825));
    }

    #[test]
    fn short_clip_is_not_extractable() {
        let err = extract_shorts_from_long(&long_clip(300, 30, 1), SideAnchor::Edges).unwrap_err();
        assert!(matches!(err, ClipLogicError::NotLongClip { .. }));
    }

    #[test]
    fn subclip_examples() {
        assert_eq!(subclip_sample(100, 81), (9, 90));
        assert_eq!(subclip_sample(81, 81), (0, 81));
        assert_eq!(subclip_sample(50, 81), (0, 50));
        assert_eq!(subclip_sample(101, 81), (10, 91));
    }

    proptest! {
        #[test]
        fn subclip_is_centered_with_left_bias(n in 1u64..100_000, target in 1u64..100_000) {
            let (start, end) = subclip_sample(n, target);
            prop_assert!(end <= n);
            prop_assert_eq!(end - start, n.min(target));
            let left = start;
            let right = n - end;
            prop_assert!(left <= right);
            prop_assert!(right - left <= 1);
        }

        #[test]
        fn extracted_windows_invariants(n_frames in 304u64..20_000, num in 24u32..61, den in 1u32..3) {
            let clip = long_clip(n_frames, num, den);
            if classify(clip.duration_s()).ok() == Some(ClipClass::Long) {
                let clips = extract_shorts_from_long(&clip, SideAnchor::Edges).unwrap();
                let window = frames_for_seconds(10, num, den).min(n_frames);
                for c in &clips {
                    prop_assert_eq!(c.n_frames(), window);
                    prop_assert!(c.start_frame >= clip.start_frame);
                    prop_assert!(c.end_frame <= clip.end_frame);
                }
                for pair in clips.windows(2) {
                    prop_assert!(pair[0].end_frame <= pair[1].start_frame);
                }
            }
        }
    }
}
