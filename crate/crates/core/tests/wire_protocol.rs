//! Wire-protocol contract tests against a scripted in-process HTTP server:
//! request shape, response validation, retry policy, backoff floors, and the
//! per-endpoint in-flight cap.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use uvcurate_core::frame_io::Frame;
use uvcurate_core::provider::{
    AttributeProvider, EmbeddingProvider, EndpointConfig, HttpAttributes, HttpEmbedding,
    HttpSimilarity, HttpVtss, SimilarityProvider, VtssProvider, WireRequest,
};
use uvcurate_core::provider::ProviderError;

/// One recorded request: arrival time and the parsed wire body.
struct Seen {
    at: Instant,
    request: WireRequest,
}

/// Minimal scripted HTTP/1.1 server. Each connection is handled on its own
/// thread; the script maps (request ordinal, request) to (status, body).
struct MockServer {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    live: Arc<AtomicU32>,
    peak: Arc<AtomicU32>,
}

impl MockServer {
    fn start(
        respond: impl Fn(usize, &WireRequest) -> (u16, String) + Send + Sync + 'static,
        hold: Duration,
    ) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let url = format!("http://{}/score", listener.local_addr().unwrap());
        let seen: Arc<Mutex<Vec<Seen>>> = Arc::new(Mutex::new(Vec::new()));
        let live = Arc::new(AtomicU32::new(0));
        let peak = Arc::new(AtomicU32::new(0));
        let respond = Arc::new(respond);
        {
            let (seen, live, peak) = (seen.clone(), live.clone(), peak.clone());
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { break };
                    let (seen, live, peak, respond) =
                        (seen.clone(), live.clone(), peak.clone(), respond.clone());
                    std::thread::spawn(move || {
                        handle(stream, &seen, &live, &peak, &*respond, hold);
                    });
                }
            });
        }
        MockServer {
            url,
            seen,
            live,
            peak,
        }
    }

    fn requests(&self) -> usize {
        self.seen.lock().unwrap().len()
    }

    fn request(&self, i: usize) -> WireRequest {
        self.seen.lock().unwrap()[i].request.clone()
    }

    fn arrival_gaps(&self) -> Vec<Duration> {
        let seen = self.seen.lock().unwrap();
        seen.windows(2).map(|w| w[1].at - w[0].at).collect()
    }
}

fn handle(
    mut stream: TcpStream,
    seen: &Mutex<Vec<Seen>>,
    live: &AtomicU32,
    peak: &AtomicU32,
    respond: &dyn Fn(usize, &WireRequest) -> (u16, String),
    hold: Duration,
) {
    if let Some(body) = read_http_request(&mut stream) {
        let request: WireRequest = serde_json::from_slice(&body).expect("wire request parses");
        let ordinal = {
            let mut log = seen.lock().unwrap();
            log.push(Seen {
                at: Instant::now(),
                request: request.clone(),
            });
            log.len() - 1
        };
        // The [request read, response write] window lies inside the client's
        // permit hold, so its peak overlap is bounded by the in-flight cap.
        let now = live.fetch_add(1, Ordering::SeqCst) + 1;
        peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(hold);
        live.fetch_sub(1, Ordering::SeqCst);
        let (status, body) = respond(ordinal, &request);
        let reason = match status {
            200 => "OK",
            404 => "Not Found",
            429 => "Too Many Requests",
            _ => "Error",
        };
        let reply = format!(
            "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let _ = stream.write_all(reply.as_bytes());
        let _ = stream.flush();
    }
}

/// Read one HTTP request, honoring content-length. Returns the body.
fn read_http_request(stream: &mut TcpStream) -> Option<Vec<u8>> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) | Err(_) => return None,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
        }
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
        if buf.len() > (1 << 24) {
            return None;
        }
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = head
        .lines()
        .find_map(|line| {
            let (key, value) = line.split_once(':')?;
            if key.trim().eq_ignore_ascii_case("content-length") {
                value.trim().parse::<usize>().ok()
            } else {
                None
            }
        })
        .unwrap_or(0);
    let mut body = buf[header_end..].to_vec();
    while body.len() < content_length {
        match stream.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => body.extend_from_slice(&chunk[..n]),
        }
    }
    body.truncate(content_length);
    Some(body)
}

fn endpoint_config(url: &str) -> EndpointConfig {
    EndpointConfig {
        url: url.to_string(),
        timeout_ms: 5_000,
        max_retries: 2,
        backoff_ms: 1,
        max_inflight: 4,
    }
}

fn test_frames() -> Vec<Frame> {
    (0..2)
        .map(|i| {
            let rgb: Vec<u8> = (0..6 * 4 * 3).map(|p| ((p * 7 + i * 31) % 256) as u8).collect();
            Frame::from_rgb(6, 4, rgb)
        })
        .collect()
}

fn as_refs(frames: &[Frame]) -> Vec<(u64, &Frame)> {
    frames.iter().enumerate().map(|(i, f)| (i as u64, f)).collect()
}

#[test]
fn round_trip_carries_frames_and_payload() {
    let server = MockServer::start(
        |_, req| {
            (
                200,
                serde_json::json!({
                    "clip_id": req.clip_id,
                    "kind": req.kind,
                    "result": {"similarity": 0.75},
                })
                .to_string(),
            )
        },
        Duration::ZERO,
    );
    let provider = HttpSimilarity::new(endpoint_config(&server.url));
    let frames = test_frames();
    let score = provider
        .similarity("clip-7", &as_refs(&frames), "a drifting texture")
        .unwrap();
    assert_eq!(score, 0.75);

    assert_eq!(server.requests(), 1);
    let req = server.request(0);
    assert_eq!(req.clip_id, "clip-7");
    assert_eq!(req.kind, "similarity");
    assert_eq!(req.payload["caption"], "a drifting texture");
    assert_eq!(req.frames.len(), 2);
    assert_eq!(req.frames[0].index, 0);
    assert_eq!(req.frames[1].index, 1);
    // Frame payloads are standard base64 PNG.
    let png = base64::engine::general_purpose::STANDARD
        .decode(&req.frames[0].png_base64)
        .unwrap();
    assert_eq!(&png[..8], &[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]);
}

#[test]
fn server_errors_are_retried_until_success() {
    let server = MockServer::start(
        |ordinal, req| {
            if ordinal == 0 {
                (500, String::new())
            } else {
                (
                    200,
                    serde_json::json!({
                        "clip_id": req.clip_id,
                        "kind": req.kind,
                        "result": {"vtss": 0.25},
                    })
                    .to_string(),
                )
            }
        },
        Duration::ZERO,
    );
    let provider = HttpVtss::new(endpoint_config(&server.url));
    let frames = test_frames();
    assert_eq!(provider.vtss("clip-1", &as_refs(&frames)).unwrap(), 0.25);
    assert_eq!(server.requests(), 2);
}

#[test]
fn throttling_is_retried_like_a_server_error() {
    let server = MockServer::start(
        |ordinal, req| {
            if ordinal == 0 {
                (429, String::new())
            } else {
                (
                    200,
                    serde_json::json!({
                        "clip_id": req.clip_id,
                        "kind": req.kind,
                        "result": {"vtss": 0.5},
                    })
                    .to_string(),
                )
            }
        },
        Duration::ZERO,
    );
    let provider = HttpVtss::new(endpoint_config(&server.url));
    let frames = test_frames();
    assert_eq!(provider.vtss("clip-1", &as_refs(&frames)).unwrap(), 0.5);
    assert_eq!(server.requests(), 2);
}

#[test]
fn exhausted_retries_surface_unavailable() {
    let server = MockServer::start(|_, _| (503, String::new()), Duration::ZERO);
    let mut cfg = endpoint_config(&server.url);
    cfg.max_retries = 1;
    let provider = HttpVtss::new(cfg);
    let frames = test_frames();
    match provider.vtss("clip-1", &as_refs(&frames)) {
        Err(ProviderError::Unavailable { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected Unavailable, got {other:?}"),
    }
    assert_eq!(server.requests(), 2);
}

#[test]
fn client_errors_fail_immediately() {
    let server = MockServer::start(|_, _| (404, String::new()), Duration::ZERO);
    let provider = HttpVtss::new(endpoint_config(&server.url));
    let frames = test_frames();
    match provider.vtss("clip-1", &as_refs(&frames)) {
        Err(ProviderError::Unavailable { attempts, detail, .. }) => {
            assert_eq!(attempts, 1);
            assert!(detail.contains("404"), "detail: {detail}");
        }
        other => panic!("expected Unavailable, got {other:?}"),
    }
    assert_eq!(server.requests(), 1);
}

#[test]
fn schema_violations_are_malformed_not_retried() {
    // One embedding for two frames: arity violation.
    let server = MockServer::start(
        |_, req| {
            (
                200,
                serde_json::json!({
                    "clip_id": req.clip_id,
                    "kind": req.kind,
                    "result": {"embedding": [[1.0, 0.0]]},
                })
                .to_string(),
            )
        },
        Duration::ZERO,
    );
    let provider = HttpEmbedding::new(endpoint_config(&server.url));
    let frames = test_frames();
    match provider.embed("clip-1", &as_refs(&frames)) {
        Err(ProviderError::MalformedResponse(msg)) => {
            assert!(msg.contains("expected 2 embeddings"), "msg: {msg}");
        }
        other => panic!("expected MalformedResponse, got {other:?}"),
    }
    assert_eq!(server.requests(), 1);
}

#[test]
fn non_unit_embeddings_are_rejected() {
    let server = MockServer::start(
        |_, req| {
            (
                200,
                serde_json::json!({
                    "clip_id": req.clip_id,
                    "kind": req.kind,
                    "result": {"embedding": [[3.0, 4.0], [0.0, 1.0]]},
                })
                .to_string(),
            )
        },
        Duration::ZERO,
    );
    let provider = HttpEmbedding::new(endpoint_config(&server.url));
    let frames = test_frames();
    assert!(matches!(
        provider.embed("clip-1", &as_refs(&frames)),
        Err(ProviderError::MalformedResponse(_))
    ));
}

#[test]
fn wrong_attribute_arity_is_rejected() {
    let server = MockServer::start(
        |_, req| {
            (
                200,
                serde_json::json!({
                    "clip_id": req.clip_id,
                    "kind": req.kind,
                    "result": {"attributes": {"Subtitles": false}},
                })
                .to_string(),
            )
        },
        Duration::ZERO,
    );
    let provider = HttpAttributes::new(endpoint_config(&server.url));
    let frames = test_frames();
    assert!(matches!(
        provider.attributes("clip-1", &as_refs(&frames)),
        Err(ProviderError::MalformedResponse(_))
    ));
}

#[test]
fn response_echo_mismatch_is_rejected() {
    let server = MockServer::start(
        |_, req| {
            (
                200,
                serde_json::json!({
                    "clip_id": "some-other-clip",
                    "kind": req.kind,
                    "result": {"vtss": 0.9},
                })
                .to_string(),
            )
        },
        Duration::ZERO,
    );
    let provider = HttpVtss::new(endpoint_config(&server.url));
    let frames = test_frames();
    match provider.vtss("clip-1", &as_refs(&frames)) {
        Err(ProviderError::MalformedResponse(msg)) => {
            assert!(msg.contains("echo mismatch"), "msg: {msg}");
        }
        other => panic!("expected MalformedResponse, got {other:?}"),
    }
}

#[test]
fn backoff_doubles_between_attempts() {
    let server = MockServer::start(|_, _| (500, String::new()), Duration::ZERO);
    let mut cfg = endpoint_config(&server.url);
    cfg.max_retries = 2;
    cfg.backoff_ms = 60;
    let provider = HttpVtss::new(cfg);
    let frames = test_frames();
    assert!(provider.vtss("clip-1", &as_refs(&frames)).is_err());
    let gaps = server.arrival_gaps();
    assert_eq!(gaps.len(), 2);
    // Sleeps are lower bounds: 60 ms before attempt 2, 120 ms before 3.
    assert!(gaps[0] >= Duration::from_millis(60), "gap {:?}", gaps[0]);
    assert!(gaps[1] >= Duration::from_millis(120), "gap {:?}", gaps[1]);
}

#[test]
fn in_flight_cap_bounds_concurrent_requests() {
    let server = MockServer::start(
        |_, req| {
            (
                200,
                serde_json::json!({
                    "clip_id": req.clip_id,
                    "kind": req.kind,
                    "result": {"vtss": 0.5},
                })
                .to_string(),
            )
        },
        Duration::from_millis(25),
    );
    let mut cfg = endpoint_config(&server.url);
    cfg.max_inflight = 2;
    let provider = Arc::new(HttpVtss::new(cfg));
    let mut handles = Vec::new();
    for t in 0..8 {
        let provider = provider.clone();
        handles.push(std::thread::spawn(move || {
            let frames = test_frames();
            provider
                .vtss(&format!("clip-{t}"), &as_refs(&frames))
                .unwrap()
        }));
    }
    for handle in handles {
        assert_eq!(handle.join().unwrap(), 0.5);
    }
    assert_eq!(server.requests(), 8);
    assert!(
        server.peak.load(Ordering::SeqCst) <= 2,
        "peak concurrency {}",
        server.peak.load(Ordering::SeqCst)
    );
    assert_eq!(server.live.load(Ordering::SeqCst), 0);
}
