//! Model-backed score and annotation providers.
//!
//! Every external model (text detection, embeddings, vtss, attributes,
//! captions, summaries, optical flow) sits behind a small trait so the
//! pipeline can run against HTTP endpoints in production and against
//! deterministic in-process implementations in tests.
//!
//! Wire protocol (HTTP POST, JSON both ways):
//!
//! ```text
//! request:  {"clip_id": "...", "kind": "vtss|similarity|attributes|embedding|
//!            textboxes|caption|summary", "frames": [{"index": 0,
//!            "png_base64": "..."}], "payload": {...}}
//! response: {"clip_id": "...", "kind": "...", "result": {...}}
//! ```
//!
//! The `result` object carries one key named after the kind; its schema is
//! validated strictly (exact attribute arity, one embedding per frame, unit
//! norms) and any deviation is a `MalformedResponse`, never a silent default.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::caption_engine::CaptionFields;
use crate::frame_io::Frame;
use crate::purification::AttributeFlags;
use crate::stat_filters::TextBox;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("provider {endpoint} unavailable after {attempts} attempts: {detail}")]
    Unavailable {
        endpoint: String,
        attempts: u32,
        detail: String,
    },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
}

/// Video-text semantic score in [0, 1]; clips below threshold are discarded.
pub trait VtssProvider: Send + Sync {
    fn vtss(&self, clip_id: &str, frames: &[(u64, &Frame)]) -> Result<f64, ProviderError>;
}

/// Caption-to-video similarity in [0, 1].
pub trait SimilarityProvider: Send + Sync {
    fn similarity(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
        caption: &str,
    ) -> Result<f64, ProviderError>;
}

/// The sixteen bad-video attribute flags.
pub trait AttributeProvider: Send + Sync {
    fn attributes(&self, clip_id: &str, frames: &[(u64, &Frame)])
        -> Result<AttributeFlags, ProviderError>;
}

/// Unit-norm embedding per frame.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, clip_id: &str, frames: &[(u64, &Frame)])
        -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// Text boxes per frame (one list per requested frame, same order).
pub trait TextDetectionProvider: Send + Sync {
    fn detect(&self, clip_id: &str, frames: &[(u64, &Frame)])
        -> Result<Vec<Vec<TextBox>>, ProviderError>;
}

/// Structured nine-field caption for a clip.
pub trait CaptionProvider: Send + Sync {
    fn caption(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
        prompt: &str,
    ) -> Result<CaptionFields, ProviderError>;
}

/// One-paragraph summary of a structured caption.
pub trait SummaryProvider: Send + Sync {
    fn summarize(
        &self,
        clip_id: &str,
        fields: &CaptionFields,
        prompt: &str,
    ) -> Result<String, ProviderError>;
}

/// External motion score, overriding the built-in block matcher when set.
pub trait FlowProvider: Send + Sync {
    fn motion(&self, clip_id: &str, frames: &[(u64, &Frame)]) -> Result<f64, ProviderError>;
}

/// The full provider wiring for a pipeline run. Roles left as None make the
/// dependent stages defer their clips instead of guessing.
#[derive(Default)]
pub struct ProviderSet {
    pub vtss: Option<Box<dyn VtssProvider>>,
    pub similarity: Option<Box<dyn SimilarityProvider>>,
    pub attributes: Option<Box<dyn AttributeProvider>>,
    pub embedding: Option<Box<dyn EmbeddingProvider>>,
    pub textboxes: Option<Box<dyn TextDetectionProvider>>,
    pub caption: Option<Box<dyn CaptionProvider>>,
    pub summary: Option<Box<dyn SummaryProvider>>,
    pub flow: Option<Box<dyn FlowProvider>>,
}

/// Evenly spaced frame indices spanning `[0, n)`: `count` indices including
/// both endpoints (fewer when the clip is shorter than `count`).
pub fn sample_frame_indices(n_frames: u64, count: u32) -> Vec<u64> {
    if n_frames == 0 {
        return Vec::new();
    }
    let count = count.max(1) as u64;
    if n_frames <= count {
        return (0..n_frames).collect();
    }
    if count == 1 {
        return vec![0];
    }
    (0..count)
        .map(|i| (2 * i * (n_frames - 1) + (count - 1)) / (2 * (count - 1)))
        .collect()
}

// ---------------------------------------------------------------------------
// Wire protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireFrame {
    pub index: u64,
    pub png_base64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub clip_id: String,
    pub kind: String,
    pub frames: Vec<WireFrame>,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub clip_id: String,
    pub kind: String,
    pub result: serde_json::Value,
}

/// Encode a frame as base64 PNG for the wire.
pub fn frame_to_png_base64(frame: &Frame) -> String {
    use image::ImageEncoder;
    let mut png = Vec::new();
    image::codecs::png::PngEncoder::new(&mut png)
        .write_image(
            &frame.rgb,
            frame.width,
            frame.height,
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory png encoding cannot fail");
    base64::engine::general_purpose::STANDARD.encode(&png)
}

fn wire_frames(frames: &[(u64, &Frame)]) -> Vec<WireFrame> {
    frames
        .iter()
        .map(|(index, f)| WireFrame {
            index: *index,
            png_base64: frame_to_png_base64(f),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// HTTP endpoint with bounded retries, exponential backoff and an in-flight cap
// ---------------------------------------------------------------------------

/// Connection settings for one provider endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_max_inflight() -> u32 {
    4
}

/// Counting semaphore; permits bound concurrent requests per endpoint.
struct Semaphore {
    available: Mutex<u32>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: u32) -> Self {
        Semaphore {
            available: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// One provider endpoint. Transport failures and 5xx/429 responses are
/// retried with exponential backoff up to `max_retries`; anything else fails
/// immediately (a healthy endpoint speaking the wrong schema will not heal
/// by retrying).
pub struct HttpEndpoint {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    gate: Semaphore,
}

impl HttpEndpoint {
    pub fn new(cfg: EndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        let gate = Semaphore::new(cfg.max_inflight);
        HttpEndpoint { cfg, agent, gate }
    }

    pub fn call(&self, req: &WireRequest) -> Result<WireResponse, ProviderError> {
        let _permit = self.gate.acquire();
        let body = serde_json::to_string(req).expect("wire request serializes");
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = self
                .agent
                .post(&self.cfg.url)
                .set("content-type", "application/json")
                .send_string(&body);
            let retryable = match outcome {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| {
                        ProviderError::MalformedResponse(format!("unreadable body: {e}"))
                    })?;
                    let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
                        ProviderError::MalformedResponse(format!("invalid response json: {e}"))
                    })?;
                    if parsed.clip_id != req.clip_id || parsed.kind != req.kind {
                        return Err(ProviderError::MalformedResponse(format!(
                            "response echo mismatch: got ({}, {}), want ({}, {})",
                            parsed.clip_id, parsed.kind, req.clip_id, req.kind
                        )));
                    }
                    return Ok(parsed);
                }
                Err(ureq::Error::Status(code, _)) if code >= 500 || code == 429 => {
                    format!("status {code}")
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(ProviderError::Unavailable {
                        endpoint: self.cfg.url.clone(),
                        attempts,
                        detail: format!("non-retryable status {code}"),
                    });
                }
                Err(ureq::Error::Transport(t)) => format!("transport: {t}"),
            };
            if attempts > self.cfg.max_retries {
                return Err(ProviderError::Unavailable {
                    endpoint: self.cfg.url.clone(),
                    attempts,
                    detail: retryable,
                });
            }
            let exp = attempts.min(16) - 1;
            std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << exp));
        }
    }
}

// ---------------------------------------------------------------------------
// Result validation per kind
// ---------------------------------------------------------------------------

fn result_field<'a>(
    result: &'a serde_json::Value,
    key: &str,
) -> Result<&'a serde_json::Value, ProviderError> {
    result
        .get(key)
        .ok_or_else(|| ProviderError::MalformedResponse(format!("result missing \"{key}\"")))
}

fn parse_score(result: &serde_json::Value, key: &str) -> Result<f64, ProviderError> {
    result_field(result, key)?
        .as_f64()
        .ok_or_else(|| ProviderError::MalformedResponse(format!("\"{key}\" is not a number")))
}

pub fn parse_attributes(result: &serde_json::Value) -> Result<AttributeFlags, ProviderError> {
    let obj = result_field(result, "attributes")?
        .as_object()
        .ok_or_else(|| ProviderError::MalformedResponse("attributes is not an object".into()))?;
    AttributeFlags::from_named_map(obj).map_err(ProviderError::MalformedResponse)
}

pub fn parse_embeddings(
    result: &serde_json::Value,
    expected_frames: usize,
) -> Result<Vec<Vec<f64>>, ProviderError> {
    let arr: Vec<Vec<f64>> = serde_json::from_value(result_field(result, "embedding")?.clone())
        .map_err(|e| ProviderError::MalformedResponse(format!("bad embedding array: {e}")))?;
    if arr.len() != expected_frames {
        return Err(ProviderError::MalformedResponse(format!(
            "expected {expected_frames} embeddings, got {}",
            arr.len()
        )));
    }
    for (i, e) in arr.iter().enumerate() {
        if e.is_empty() {
            return Err(ProviderError::MalformedResponse(format!(
                "embedding {i} is empty"
            )));
        }
        let norm: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ProviderError::MalformedResponse(format!(
                "embedding {i} norm {norm} is not unit"
            )));
        }
    }
    Ok(arr)
}

pub fn parse_textboxes(
    result: &serde_json::Value,
    expected_frames: usize,
) -> Result<Vec<Vec<TextBox>>, ProviderError> {
    let arr: Vec<Vec<TextBox>> = serde_json::from_value(result_field(result, "textboxes")?.clone())
        .map_err(|e| ProviderError::MalformedResponse(format!("bad textboxes array: {e}")))?;
    if arr.len() != expected_frames {
        return Err(ProviderError::MalformedResponse(format!(
            "expected {expected_frames} box lists, got {}",
            arr.len()
        )));
    }
    Ok(arr)
}

pub fn parse_caption(result: &serde_json::Value) -> Result<CaptionFields, ProviderError> {
    let value = result_field(result, "caption")?;
    CaptionFields::from_named_map(value).map_err(ProviderError::MalformedResponse)
}

pub fn parse_summary(result: &serde_json::Value) -> Result<String, ProviderError> {
    Ok(result_field(result, "summary")?
        .as_str()
        .ok_or_else(|| ProviderError::MalformedResponse("summary is not a string".into()))?
        .to_string())
}

// ---------------------------------------------------------------------------
// HTTP-backed providers
// ---------------------------------------------------------------------------

macro_rules! http_provider {
    ($name:ident) => {
        pub struct $name {
            endpoint: HttpEndpoint,
        }

        impl $name {
            pub fn new(cfg: EndpointConfig) -> Self {
                Self {
                    endpoint: HttpEndpoint::new(cfg),
                }
            }
        }
    };
}

http_provider!(HttpVtss);
http_provider!(HttpSimilarity);
http_provider!(HttpAttributes);
http_provider!(HttpEmbedding);
http_provider!(HttpTextDetection);
http_provider!(HttpCaption);
http_provider!(HttpSummary);
http_provider!(HttpFlow);

impl VtssProvider for HttpVtss {
    fn vtss(&self, clip_id: &str, frames: &[(u64, &Frame)]) -> Result<f64, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "vtss".to_string(),
            frames: wire_frames(frames),
            payload: serde_json::json!({}),
        })?;
        parse_score(&resp.result, "vtss")
    }
}

impl SimilarityProvider for HttpSimilarity {
    fn similarity(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
        caption: &str,
    ) -> Result<f64, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "similarity".to_string(),
            frames: wire_frames(frames),
            payload: serde_json::json!({ "caption": caption }),
        })?;
        parse_score(&resp.result, "similarity")
    }
}

impl AttributeProvider for HttpAttributes {
    fn attributes(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
    ) -> Result<AttributeFlags, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "attributes".to_string(),
            frames: wire_frames(frames),
            payload: serde_json::json!({}),
        })?;
        parse_attributes(&resp.result)
    }
}

impl EmbeddingProvider for HttpEmbedding {
    fn embed(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
    ) -> Result<Vec<Vec<f64>>, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "embedding".to_string(),
            frames: wire_frames(frames),
            payload: serde_json::json!({}),
        })?;
        parse_embeddings(&resp.result, frames.len())
    }
}

impl TextDetectionProvider for HttpTextDetection {
    fn detect(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
    ) -> Result<Vec<Vec<TextBox>>, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "textboxes".to_string(),
            frames: wire_frames(frames),
            payload: serde_json::json!({}),
        })?;
        parse_textboxes(&resp.result, frames.len())
    }
}

impl CaptionProvider for HttpCaption {
    fn caption(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
        prompt: &str,
    ) -> Result<CaptionFields, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "caption".to_string(),
            frames: wire_frames(frames),
            payload: serde_json::json!({ "prompt": prompt }),
        })?;
        parse_caption(&resp.result)
    }
}

impl SummaryProvider for HttpSummary {
    fn summarize(
        &self,
        clip_id: &str,
        fields: &CaptionFields,
        prompt: &str,
    ) -> Result<String, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "summary".to_string(),
            frames: Vec::new(),
            payload: serde_json::json!({ "prompt": prompt, "captions": fields }),
        })?;
        parse_summary(&resp.result)
    }
}

impl FlowProvider for HttpFlow {
    fn motion(&self, clip_id: &str, frames: &[(u64, &Frame)]) -> Result<f64, ProviderError> {
        let resp = self.endpoint.call(&WireRequest {
            clip_id: clip_id.to_string(),
            kind: "flow".to_string(),
            frames: wire_frames(frames),
            payload: serde_json::json!({}),
        })?;
        parse_score(&resp.result, "flow")
    }
}

// ---------------------------------------------------------------------------
// Deterministic in-process providers (tests, offline runs, synthetic corpora)
// ---------------------------------------------------------------------------

/// Returns the same score for every clip.
pub struct FixedVtss(pub f64);

impl VtssProvider for FixedVtss {
    fn vtss(&self, _clip_id: &str, _frames: &[(u64, &Frame)]) -> Result<f64, ProviderError> {
        Ok(self.0)
    }
}

pub struct FixedSimilarity(pub f64);

impl SimilarityProvider for FixedSimilarity {
    fn similarity(
        &self,
        _clip_id: &str,
        _frames: &[(u64, &Frame)],
        _caption: &str,
    ) -> Result<f64, ProviderError> {
        Ok(self.0)
    }
}

pub struct FixedAttributes(pub AttributeFlags);

impl AttributeProvider for FixedAttributes {
    fn attributes(
        &self,
        _clip_id: &str,
        _frames: &[(u64, &Frame)],
    ) -> Result<AttributeFlags, ProviderError> {
        Ok(self.0.clone())
    }
}

pub struct FixedFlow(pub f64);

impl FlowProvider for FixedFlow {
    fn motion(&self, _clip_id: &str, _frames: &[(u64, &Frame)]) -> Result<f64, ProviderError> {
        Ok(self.0)
    }
}

/// Content-derived embedding: a mean-centered, L2-normalized luma thumbnail.
/// Distinct textures map far apart, identical frames map identically, and a
/// flat frame falls back to a fixed basis vector.
pub struct LumaEmbedding {
    pub grid: u32,
}

impl Default for LumaEmbedding {
    fn default() -> Self {
        LumaEmbedding { grid: 8 }
    }
}

impl EmbeddingProvider for LumaEmbedding {
    fn embed(
        &self,
        _clip_id: &str,
        frames: &[(u64, &Frame)],
    ) -> Result<Vec<Vec<f64>>, ProviderError> {
        let g = self.grid.max(1);
        Ok(frames
            .iter()
            .map(|(_, frame)| {
                let luma = frame.luma_or_gray();
                let mut v: Vec<f64> = (0..g * g)
                    .map(|i| {
                        let gx = i % g;
                        let gy = i / g;
                        let x = ((2 * gx as u64 + 1) * frame.width as u64 / (2 * g as u64))
                            .min(frame.width as u64 - 1);
                        let y = ((2 * gy as u64 + 1) * frame.height as u64 / (2 * g as u64))
                            .min(frame.height as u64 - 1);
                        luma[(y * frame.width as u64 + x) as usize] as f64
                    })
                    .collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                for x in v.iter_mut() {
                    *x -= mean;
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for x in v.iter_mut() {
                        *x /= norm;
                    }
                } else {
                    v[0] = 1.0;
                }
                v
            })
            .collect())
    }
}

/// Text detection backed by known per-frame boxes (synthetic ground truth).
pub struct KnownBoxesTextDetection {
    boxes: HashMap<String, HashMap<u64, Vec<TextBox>>>,
}

impl KnownBoxesTextDetection {
    pub fn new(boxes: HashMap<String, HashMap<u64, Vec<TextBox>>>) -> Self {
        KnownBoxesTextDetection { boxes }
    }
}

impl TextDetectionProvider for KnownBoxesTextDetection {
    fn detect(
        &self,
        clip_id: &str,
        frames: &[(u64, &Frame)],
    ) -> Result<Vec<Vec<TextBox>>, ProviderError> {
        let per_clip = self.boxes.get(clip_id);
        Ok(frames
            .iter()
            .map(|(idx, _)| {
                per_clip
                    .and_then(|m| m.get(idx))
                    .cloned()
                    .unwrap_or_default()
            })
            .collect())
    }
}

/// Deterministic placeholder captions derived from the clip id.
pub struct TemplateCaptioner;

impl CaptionProvider for TemplateCaptioner {
    fn caption(
        &self,
        clip_id: &str,
        _frames: &[(u64, &Frame)],
        _prompt: &str,
    ) -> Result<CaptionFields, ProviderError> {
        Ok(CaptionFields {
            brief: format!("A short synthetic scene from {clip_id}."),
            detailed: format!(
                "A generated texture drifts steadily across the frame in {clip_id}, \
                 with smooth gradients and no recognizable objects."
            ),
            background: "An abstract field of soft noise.".to_string(),
            theme: "Abstract motion study.".to_string(),
            style: "Procedural, flat shading.".to_string(),
            shot_type: "Full frame.".to_string(),
            camera_movement: "Slow lateral pan.".to_string(),
            lighting: "Even, shadowless.".to_string(),
            atmosphere: "Neutral and calm.".to_string(),
        })
    }
}

/// Deterministic summary built from the structured caption.
pub struct ConcatSummarizer;

impl SummaryProvider for ConcatSummarizer {
    fn summarize(
        &self,
        _clip_id: &str,
        fields: &CaptionFields,
        _prompt: &str,
    ) -> Result<String, ProviderError> {
        Ok(format!("{} {}", fields.brief, fields.theme))
    }
}
