//! Single TOML configuration carrying every pipeline threshold.
//!
//! Defaults reproduce the calibrated values the detectors were validated
//! against; `dump()` of the default config is byte-stable and serves as the
//! golden reference. Unknown keys are rejected everywhere so typos cannot
//! silently fall back to defaults. Missing keys take their default, so a
//! config file only needs the values it overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clip_logic::SideAnchor;
use crate::provider::EndpointConfig;
use crate::purification::PurifyThresholds;
use crate::scene_split::SplitParams;
use crate::stat_filters::StatThresholds;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Optional provider endpoints, one per scorer kind. A stage that needs a
/// provider with no endpoint configured (and no in-process substitute) defers
/// its clips rather than guessing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderEndpoints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vtss: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attributes: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub textboxes: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<EndpointConfig>,
}

impl ProviderEndpoints {
    /// HTTP-backed providers for every configured endpoint; roles without an
    /// endpoint stay empty (the pipeline defers or skips per stage policy).
    pub fn build(&self) -> crate::provider::ProviderSet {
        use crate::provider::{
            HttpAttributes, HttpCaption, HttpEmbedding, HttpFlow, HttpSimilarity, HttpSummary,
            HttpTextDetection, HttpVtss,
        };
        crate::provider::ProviderSet {
            vtss: self.vtss.clone().map(|c| Box::new(HttpVtss::new(c)) as _),
            similarity: self
                .similarity
                .clone()
                .map(|c| Box::new(HttpSimilarity::new(c)) as _),
            attributes: self
                .attributes
                .clone()
                .map(|c| Box::new(HttpAttributes::new(c)) as _),
            embedding: self
                .embedding
                .clone()
                .map(|c| Box::new(HttpEmbedding::new(c)) as _),
            textboxes: self
                .textboxes
                .clone()
                .map(|c| Box::new(HttpTextDetection::new(c)) as _),
            caption: self.caption.clone().map(|c| Box::new(HttpCaption::new(c)) as _),
            summary: self.summary.clone().map(|c| Box::new(HttpSummary::new(c)) as _),
            flow: self.flow.clone().map(|c| Box::new(HttpFlow::new(c)) as _),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Bounded clip-task parallelism; results are ordered by clip id before
    /// the manifest is written, so any worker count yields identical output.
    pub worker_count: u32,
    /// Root seed for every deterministic draw (corpus generation, prompt
    /// sampling). Streams are keyed by (seed, clip id).
    pub seed: u64,
    /// Placement of the two extra 10 s windows taken from >60 s videos.
    pub side_anchor: SideAnchor,
    /// Frames sampled per clip for caption and score providers.
    pub caption_frames: u32,
    /// Prefix sampled prompt parts with their category labels.
    pub labeled_prompts: bool,
    pub split: SplitParams,
    pub filters: StatThresholds,
    pub purify: PurifyThresholds,
    pub providers: ProviderEndpoints,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            worker_count: 1,
            seed: 0,
            side_anchor: SideAnchor::Edges,
            caption_frames: 8,
            labeled_prompts: false,
            split: SplitParams::default(),
            filters: StatThresholds::default(),
            purify: PurifyThresholds::default(),
            providers: ProviderEndpoints::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical TOML rendering; `parse(dump(c)) == c` for any valid config.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: String| Err(ConfigError::Invalid(msg));
        if self.worker_count == 0 {
            return err("worker_count must be at least 1".into());
        }
        if self.caption_frames == 0 {
            return err("caption_frames must be at least 1".into());
        }
        let s = &self.split;
        if !(s.adaptive_threshold > 0.0) || !(s.min_content_score >= 0.0) {
            return err("split thresholds must be positive".into());
        }
        if s.min_scene_len == 0 || s.window_radius == 0 {
            return err("split window and scene length must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&s.dissolve_similarity_max) {
            return err("dissolve_similarity_max must be in [0, 1]".into());
        }
        let f = &self.filters;
        for (name, v) in [
            ("text_area_ratio", f.text_area_ratio),
            ("bad_frame_ratio", f.bad_frame_ratio),
            ("exposure_ratio", f.exposure_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("filters.{name} must be in [0, 1]"));
            }
        }
        if !(0.0..0.5).contains(&f.border_depth_frac) {
            return err("filters.border_depth_frac must be in [0, 0.5)".into());
        }
        if !(f.border_mean_max >= 0.0) || !(f.gray_variance_min >= 0.0) {
            return err("filters thresholds must be non-negative".into());
        }
        if f.exposure_low >= f.exposure_high {
            return err("filters.exposure_low must be below exposure_high".into());
        }
        if f.ocr_sample_interval == 0 {
            return err("filters.ocr_sample_interval must be at least 1".into());
        }
        self.purify
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dump_carries_every_calibrated_threshold() {
        let dump = PipelineConfig::default().dump();
        for needle in [
            "text_area_ratio = 0.02",
            "bad_frame_ratio = 0.05",
            "border_depth_frac = 0.03",
            "border_mean_max = 3.0",
            "exposure_low = 5",
            "exposure_high = 250",
            "exposure_ratio = 0.12",
            "gray_variance_min = 1.2",
            "vtss_min = 0.01",
            "motion_min = 0.1",
            "motion_max = 100.0",
            "caption_sim_min = 0.2",
            "adaptive_threshold = 3.0",
            "min_content_score = 15.0",
            "min_scene_len = 15",
            "flow_sample_interval = 8",
            "flow_downscale = 512",
        ] {
            assert!(dump.contains(needle), "dump missing `{needle}`:\n{dump}");
        }
    }

    #[test]
    fn dump_parse_dump_is_a_fixed_point() {
        let config = PipelineConfig::default();
        let once = config.dump();
        let reparsed = PipelineConfig::parse(&once).unwrap();
        assert_eq!(reparsed, config);
        assert_eq!(reparsed.dump(), once);
    }

    #[test]
    fn empty_config_is_all_defaults() {
        let config = PipelineConfig::parse("").unwrap();
        assert_eq!(config, PipelineConfig::default());
    }

    #[test]
    fn partial_sections_override_only_named_keys() {
        let config = PipelineConfig::parse(
            "worker_count = 4\n[filters]\ntext_area_ratio = 0.05\n[purify]\nvtss_min = 0.5\n",
        )
        .unwrap();
        assert_eq!(config.worker_count, 4);
        assert_eq!(config.filters.text_area_ratio, 0.05);
        assert_eq!(config.filters.bad_frame_ratio, 0.05);
        assert_eq!(config.purify.vtss_min, 0.5);
        assert_eq!(config.purify.motion_max, 100.0);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            "frobnicate = 1\n",
            "[filters]\ntypo_ratio = 0.1\n",
            "[providers]\nunknown_kind = { url = \"http://x\" }\n",
            "[providers.vtss]\nurl = \"http://x\"\nretries = 3\n",
        ] {
            assert!(
                matches!(PipelineConfig::parse(text), Err(ConfigError::Parse(_))),
                "accepted: {text}"
            );
        }
    }

    #[test]
    fn provider_endpoints_round_trip_with_defaults() {
        let text = "[providers.vtss]\nurl = \"http://127.0.0.1:9000/score\"\n";
        let config = PipelineConfig::parse(text).unwrap();
        let ep = config.providers.vtss.as_ref().unwrap();
        assert_eq!(ep.url, "http://127.0.0.1:9000/score");
        assert_eq!(ep.timeout_ms, 30_000);
        assert_eq!(ep.max_retries, 2);
        assert_eq!(ep.max_inflight, 4);
        let reparsed = PipelineConfig::parse(&config.dump()).unwrap();
        assert_eq!(reparsed, config);
    }

    #[test]
    fn invalid_values_are_rejected_with_reasons() {
        for text in [
            "worker_count = 0\n",
            "caption_frames = 0\n",
            "[filters]\nexposure_low = 250\nexposure_high = 5\n",
            "[filters]\nbad_frame_ratio = 1.5\n",
            "[filters]\nocr_sample_interval = 0\n",
            "[split]\nmin_scene_len = 0\n",
            "[purify]\nmotion_min = 200.0\n",
        ] {
            assert!(
                matches!(PipelineConfig::parse(text), Err(ConfigError::Invalid(_))),
                "accepted: {text}"
            );
        }
    }
}
