//! Raw video ingestion: YUV4MPEG2 streams and numbered PPM/PGM sequences.
//!
//! All color math is integer-only with round-half-up so decoded pixels are
//! bit-identical on every platform. Compressed containers are out of scope;
//! the command line documents a shell-out recipe that produces Y4M.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Dimension guard: anything beyond 8K UHD is rejected as malformed input.
pub const MAX_WIDTH: u32 = 8192;
pub const MAX_HEIGHT: u32 = 4320;

#[derive(Debug, thiserror::Error)]
pub enum FrameIoError {
    #[error("missing YUV4MPEG2 signature")]
    MissingSignature,
    #[error("stream header is missing width or height")]
    MissingDimension,
    #[error("dimensions {width}x{height} out of supported range")]
    DimensionOutOfRange { width: u32, height: u32 },
    #[error("unsupported chroma layout: {0}")]
    UnsupportedChroma(String),
    #[error("malformed frame rate: {0}")]
    MalformedRational(String),
    #[error("truncated frame payload at frame {frame_index}")]
    TruncatedFrame { frame_index: u64 },
    #[error("bad frame marker at frame {frame_index}")]
    BadFrameMarker { frame_index: u64 },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Chroma subsampling layout of the source stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

impl Chroma {
    /// Header tag written for this layout.
    pub fn tag(self) -> &'static str {
        match self {
            Chroma::C420 => "420",
            Chroma::C422 => "422",
            Chroma::C444 => "444",
            Chroma::Mono => "mono",
        }
    }

    fn from_tag(tag: &str) -> Result<Self, FrameIoError> {
        // All 4:2:0 siting variants share the same plane geometry.
        if tag.starts_with("420") {
            return Ok(Chroma::C420);
        }
        match tag {
            "422" => Ok(Chroma::C422),
            "444" => Ok(Chroma::C444),
            "mono" => Ok(Chroma::Mono),
            other => Err(FrameIoError::UnsupportedChroma(other.to_string())),
        }
    }

    /// (y, u, v) plane lengths in bytes for a `width`x`height` frame.
    pub fn plane_sizes(self, width: u32, height: u32) -> (usize, usize, usize) {
        let (w, h) = (width as usize, height as usize);
        match self {
            Chroma::C420 => (w * h, w * h / 4, w * h / 4),
            Chroma::C422 => (w * h, w * h / 2, w * h / 2),
            Chroma::C444 => (w * h, w * h, w * h),
            Chroma::Mono => (w * h, 0, 0),
        }
    }

    /// Total frame payload length in bytes.
    pub fn frame_payload_len(self, width: u32, height: u32) -> usize {
        let (y, u, v) = self.plane_sizes(width, height);
        y + u + v
    }

    fn validate_dims(self, width: u32, height: u32) -> Result<(), FrameIoError> {
        let bad = match self {
            Chroma::C420 => !width.is_multiple_of(2) || !height.is_multiple_of(2),
            Chroma::C422 => !width.is_multiple_of(2),
            Chroma::C444 | Chroma::Mono => false,
        };
        if bad {
            Err(FrameIoError::UnsupportedChroma(format!(
                "{} requires even sampled dimensions, got {}x{}",
                self.tag(),
                width,
                height
            )))
        } else {
            Ok(())
        }
    }
}

impl fmt::Display for Chroma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Parsed stream-level metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    pub chroma: Chroma,
    /// Known only when the whole stream has been scanned.
    pub frame_count: Option<u64>,
}

impl StreamMeta {
    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    /// Canonical stream header line. Parsing it back yields an identical
    /// `StreamMeta` (with `frame_count` unset, which the header cannot carry).
    pub fn header_line(&self) -> String {
        format!(
            "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 C{}\n",
            self.width, self.height, self.fps_num, self.fps_den, self.chroma
        )
    }

    fn validate(&self) -> Result<(), FrameIoError> {
        if self.width == 0 || self.height == 0 || self.width > MAX_WIDTH || self.height > MAX_HEIGHT
        {
            return Err(FrameIoError::DimensionOutOfRange {
                width: self.width,
                height: self.height,
            });
        }
        self.chroma.validate_dims(self.width, self.height)
    }
}

/// Decoded frame. `rgb` is 3 bytes per pixel, row-major. `luma` carries the
/// native Y plane when the source was YUV so signal-level analysis can avoid
/// a lossy round trip through RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
    pub luma: Option<Vec<u8>>,
}

impl Frame {
    pub fn from_rgb(width: u32, height: u32, rgb: Vec<u8>) -> Self {
        assert_eq!(rgb.len(), width as usize * height as usize * 3);
        Frame {
            width,
            height,
            rgb,
            luma: None,
        }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> (u8, u8, u8) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        (self.rgb[i], self.rgb[i + 1], self.rgb[i + 2])
    }

    /// Native luma plane when present, otherwise BT.601 gray of the RGB data.
    pub fn luma_or_gray(&self) -> Vec<u8> {
        if let Some(l) = &self.luma {
            return l.clone();
        }
        self.rgb
            .chunks_exact(3)
            .map(|p| bt601_gray(p[0], p[1], p[2]))
            .collect()
    }
}

#[inline]
fn clamp8(v: i64) -> u8 {
    v.clamp(0, 255) as u8
}

/// Limited-range BT.601 YUV to full-range RGB.
///
/// Integer arithmetic scaled by 1000 with round-half-up, exactly
/// `round(1.164*(y-16) + 1.596*(v-128))` and friends. (16,128,128) maps to
/// black, (235,128,128) to white, and each channel is monotone in y.
#[inline]
pub fn yuv_to_rgb(y: u8, u: u8, v: u8) -> (u8, u8, u8) {
    let c = 1164 * (y as i64 - 16);
    let d = u as i64 - 128;
    let e = v as i64 - 128;
    let r = clamp8((c + 1596 * e + 500).div_euclid(1000));
    let g = clamp8((c - 813 * e - 391 * d + 500).div_euclid(1000));
    let b = clamp8((c + 2018 * d + 500).div_euclid(1000));
    (r, g, b)
}

/// BT.601 luma of an RGB pixel: `round(0.299R + 0.587G + 0.114B)`,
/// round-half-up in integer arithmetic.
#[inline]
pub fn bt601_gray(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// One frame of raw planes, sized according to the stream's chroma layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YuvFrame {
    pub y: Vec<u8>,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

/// Upsample chroma (nearest neighbor) and convert one plane set to RGB.
pub fn planes_to_frame(meta: &StreamMeta, planes: &YuvFrame) -> Frame {
    let (w, h) = (meta.width as usize, meta.height as usize);
    let mut rgb = vec![0u8; w * h * 3];
    match meta.chroma {
        Chroma::Mono => {
            for (i, &y) in planes.y.iter().enumerate() {
                let (r, g, b) = yuv_to_rgb(y, 128, 128);
                rgb[i * 3] = r;
                rgb[i * 3 + 1] = g;
                rgb[i * 3 + 2] = b;
            }
        }
        chroma => {
            let cw = match chroma {
                Chroma::C444 => w,
                _ => w / 2,
            };
            for yy in 0..h {
                let cy = match chroma {
                    Chroma::C420 => yy / 2,
                    _ => yy,
                };
                for xx in 0..w {
                    let cx = match chroma {
                        Chroma::C444 => xx,
                        _ => xx / 2,
                    };
                    let ci = cy * cw + cx;
                    let (r, g, b) = yuv_to_rgb(planes.y[yy * w + xx], planes.u[ci], planes.v[ci]);
                    let i = (yy * w + xx) * 3;
                    rgb[i] = r;
                    rgb[i + 1] = g;
                    rgb[i + 2] = b;
                }
            }
        }
    }
    Frame {
        width: meta.width,
        height: meta.height,
        rgb,
        luma: Some(planes.y.clone()),
    }
}

/// Streaming YUV4MPEG2 reader.
#[derive(Debug)]
pub struct Y4mReader<R> {
    meta: StreamMeta,
    inner: R,
    frame_index: u64,
}

impl Y4mReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, FrameIoError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> Y4mReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FrameIoError> {
        let meta = parse_header(&mut inner)?;
        Ok(Y4mReader {
            meta,
            inner,
            frame_index: 0,
        })
    }

    pub fn meta(&self) -> &StreamMeta {
        &self.meta
    }

    /// Next raw plane set, or None at a clean end of stream.
    pub fn next_planes(&mut self) -> Result<Option<YuvFrame>, FrameIoError> {
        if !read_frame_line(&mut self.inner, self.frame_index)? {
            return Ok(None);
        }
        let (ylen, ulen, vlen) = self.meta.chroma.plane_sizes(self.meta.width, self.meta.height);
        let mut y = vec![0u8; ylen];
        let mut u = vec![0u8; ulen];
        let mut v = vec![0u8; vlen];
        for buf in [&mut y, &mut u, &mut v] {
            self.inner.read_exact(buf).map_err(|e| {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    FrameIoError::TruncatedFrame {
                        frame_index: self.frame_index,
                    }
                } else {
                    FrameIoError::Io(e)
                }
            })?;
        }
        self.frame_index += 1;
        Ok(Some(YuvFrame { y, u, v }))
    }

    /// Next decoded RGB frame, or None at a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameIoError> {
        Ok(self
            .next_planes()?
            .map(|p| planes_to_frame(&self.meta, &p)))
    }

    /// Skip one frame without decoding. Returns false at end of stream.
    pub fn skip_frame(&mut self) -> Result<bool, FrameIoError> {
        if !read_frame_line(&mut self.inner, self.frame_index)? {
            return Ok(false);
        }
        let len = self
            .meta
            .chroma
            .frame_payload_len(self.meta.width, self.meta.height);
        let mut remaining = len as u64;
        let mut sink = [0u8; 8192];
        while remaining > 0 {
            let take = remaining.min(sink.len() as u64) as usize;
            self.inner.read_exact(&mut sink[..take]).map_err(|e| {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    FrameIoError::TruncatedFrame {
                        frame_index: self.frame_index,
                    }
                } else {
                    FrameIoError::Io(e)
                }
            })?;
            remaining -= take as u64;
        }
        self.frame_index += 1;
        Ok(true)
    }

    pub fn read_all_frames(&mut self) -> Result<Vec<Frame>, FrameIoError> {
        let mut frames = Vec::new();
        while let Some(f) = self.next_frame()? {
            frames.push(f);
        }
        Ok(frames)
    }
}

/// Scan a Y4M file and return its metadata with `frame_count` populated.
pub fn probe_y4m(path: &Path) -> Result<StreamMeta, FrameIoError> {
    let mut reader = Y4mReader::open(path)?;
    let mut count = 0u64;
    while reader.skip_frame()? {
        count += 1;
    }
    let mut meta = reader.meta.clone();
    meta.frame_count = Some(count);
    Ok(meta)
}

/// Decode frames `[start, end)` of a Y4M file.
pub fn decode_y4m_range(path: &Path, start: u64, end: u64) -> Result<Vec<Frame>, FrameIoError> {
    let mut reader = Y4mReader::open(path)?;
    for i in 0..start {
        if !reader.skip_frame()? {
            return Err(FrameIoError::TruncatedFrame { frame_index: i });
        }
    }
    let mut frames = Vec::with_capacity((end - start) as usize);
    for i in start..end {
        match reader.next_frame()? {
            Some(f) => frames.push(f),
            None => return Err(FrameIoError::TruncatedFrame { frame_index: i }),
        }
    }
    Ok(frames)
}

fn parse_header<R: BufRead>(inner: &mut R) -> Result<StreamMeta, FrameIoError> {
    let line = read_line_limited(inner, 2048)?.ok_or(FrameIoError::MissingSignature)?;
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(FrameIoError::MissingSignature);
    }
    let mut width = None;
    let mut height = None;
    let mut fps = None;
    let mut chroma = Chroma::C420; // spec default when the header omits C
    for token in tokens {
        let (key, val) = token.split_at(1);
        match key {
            "W" => width = Some(parse_dim(val)?),
            "H" => height = Some(parse_dim(val)?),
            "F" => fps = Some(parse_rational(val)?),
            "C" => chroma = Chroma::from_tag(val)?,
            // Interlace, aspect and extension tags are accepted and ignored.
            "I" | "A" | "X" => {}
            _ => {}
        }
    }
    let width = width.ok_or(FrameIoError::MissingDimension)?;
    let height = height.ok_or(FrameIoError::MissingDimension)?;
    let (fps_num, fps_den) =
        fps.ok_or_else(|| FrameIoError::MalformedRational("missing F tag".to_string()))?;
    let meta = StreamMeta {
        width,
        height,
        fps_num,
        fps_den,
        chroma,
        frame_count: None,
    };
    meta.validate()?;
    Ok(meta)
}

fn parse_dim(s: &str) -> Result<u32, FrameIoError> {
    s.parse::<u32>().map_err(|_| FrameIoError::MissingDimension)
}

fn parse_rational(s: &str) -> Result<(u32, u32), FrameIoError> {
    let bad = || FrameIoError::MalformedRational(s.to_string());
    let (num, den) = s.split_once(':').ok_or_else(bad)?;
    let num = num.parse::<u32>().map_err(|_| bad())?;
    let den = den.parse::<u32>().map_err(|_| bad())?;
    if num == 0 || den == 0 {
        return Err(bad());
    }
    Ok((num, den))
}

/// Read the FRAME marker line. Returns false on a clean end of stream.
fn read_frame_line<R: BufRead>(inner: &mut R, frame_index: u64) -> Result<bool, FrameIoError> {
    match read_line_limited(inner, 256)? {
        None => Ok(false),
        Some(line) => {
            if line == "FRAME" || line.starts_with("FRAME ") {
                Ok(true)
            } else {
                Err(FrameIoError::BadFrameMarker { frame_index })
            }
        }
    }
}

/// Read bytes up to `\n` (exclusive). None on immediate EOF; a line that hits
/// EOF or the length limit before the newline is an error.
fn read_line_limited<R: BufRead>(inner: &mut R, limit: usize) -> Result<Option<String>, FrameIoError> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match inner.read(&mut byte)? {
            0 => {
                if buf.is_empty() {
                    return Ok(None);
                }
                return Err(FrameIoError::Io(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "eof inside header line",
                )));
            }
            _ => {
                if byte[0] == b'\n' {
                    break;
                }
                buf.push(byte[0]);
                if buf.len() > limit {
                    return Err(FrameIoError::Io(io::Error::new(
                        io::ErrorKind::InvalidData,
                        "header line too long",
                    )));
                }
            }
        }
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| FrameIoError::MissingSignature)
}

/// Streaming YUV4MPEG2 writer. Writes the header immediately.
pub struct Y4mWriter<W: io::Write> {
    meta: StreamMeta,
    inner: W,
}

impl<W: io::Write> Y4mWriter<W> {
    pub fn new(mut inner: W, meta: &StreamMeta) -> Result<Self, FrameIoError> {
        meta.validate()?;
        inner.write_all(meta.header_line().as_bytes())?;
        Ok(Y4mWriter {
            meta: meta.clone(),
            inner,
        })
    }

    pub fn write_planes(&mut self, planes: &YuvFrame) -> Result<(), FrameIoError> {
        let (ylen, ulen, vlen) = self.meta.chroma.plane_sizes(self.meta.width, self.meta.height);
        assert_eq!(planes.y.len(), ylen, "luma plane size mismatch");
        assert_eq!(planes.u.len(), ulen, "u plane size mismatch");
        assert_eq!(planes.v.len(), vlen, "v plane size mismatch");
        self.inner.write_all(b"FRAME\n")?;
        self.inner.write_all(&planes.y)?;
        self.inner.write_all(&planes.u)?;
        self.inner.write_all(&planes.v)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, FrameIoError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Parse one binary PPM (P6) image with maxval 255.
pub fn read_ppm(bytes: &[u8]) -> Result<Frame, FrameIoError> {
    let (w, h, data) = read_netpbm(bytes, b"P6", 3)?;
    Ok(Frame::from_rgb(w, h, data))
}

/// Parse one binary PGM (P5) image with maxval 255. Gray is replicated into
/// RGB and kept as the luma plane.
pub fn read_pgm(bytes: &[u8]) -> Result<Frame, FrameIoError> {
    let (w, h, data) = read_netpbm(bytes, b"P5", 1)?;
    let rgb = data.iter().flat_map(|&g| [g, g, g]).collect();
    Ok(Frame {
        width: w,
        height: h,
        rgb,
        luma: Some(data),
    })
}

fn read_netpbm(
    bytes: &[u8],
    magic: &[u8],
    channels: usize,
) -> Result<(u32, u32, Vec<u8>), FrameIoError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(FrameIoError::MissingSignature);
    }
    let mut pos = 2usize;
    let mut fields = [0u32; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        // Skip whitespace and '#' comments between header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(FrameIoError::MissingDimension),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(FrameIoError::MissingDimension);
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(FrameIoError::MissingDimension)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(FrameIoError::UnsupportedFormat(format!(
            "netpbm maxval {maxval}, only 255 is supported"
        )));
    }
    if width == 0 || height == 0 || width > MAX_WIDTH || height > MAX_HEIGHT {
        return Err(FrameIoError::DimensionOutOfRange { width, height });
    }
    // Exactly one whitespace byte separates the header from binary data.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(FrameIoError::MissingDimension);
    }
    pos += 1;
    let need = width as usize * height as usize * channels;
    let data = bytes
        .get(pos..pos + need)
        .ok_or(FrameIoError::TruncatedFrame { frame_index: 0 })?;
    Ok((width, height, data.to_vec()))
}

/// Load a directory of `frame_NNNNNN.ppm` (or `.pgm`) images, sorted by frame
/// number. Image sequences carry no timing, so the frame rate is supplied by
/// the caller.
pub fn read_image_sequence(
    dir: &Path,
    fps_num: u32,
    fps_den: u32,
) -> Result<(StreamMeta, Vec<Frame>), FrameIoError> {
    let mut entries: Vec<(u64, std::path::PathBuf, bool)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some((index, is_ppm)) = parse_sequence_name(name) else {
            continue;
        };
        entries.push((index, path, is_ppm));
    }
    if entries.is_empty() {
        return Err(FrameIoError::UnsupportedFormat(format!(
            "no frame_NNNNNN.ppm/pgm files in {}",
            dir.display()
        )));
    }
    entries.sort_by_key(|(i, _, _)| *i);
    if entries.iter().any(|&(_, _, p)| p != entries[0].2) {
        return Err(FrameIoError::UnsupportedFormat(
            "mixed ppm and pgm frames in one sequence".to_string(),
        ));
    }
    let mut frames = Vec::with_capacity(entries.len());
    for (_, path, is_ppm) in &entries {
        let bytes = std::fs::read(path)?;
        let frame = if *is_ppm {
            read_ppm(&bytes)?
        } else {
            read_pgm(&bytes)?
        };
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if frame.width != first.width || frame.height != first.height {
                return Err(FrameIoError::DimensionOutOfRange {
                    width: frame.width,
                    height: frame.height,
                });
            }
        }
        frames.push(frame);
    }
    let meta = StreamMeta {
        width: frames[0].width,
        height: frames[0].height,
        fps_num,
        fps_den,
        chroma: if entries[0].2 { Chroma::C444 } else { Chroma::Mono },
        frame_count: Some(frames.len() as u64),
    };
    Ok((meta, frames))
}

fn parse_sequence_name(name: &str) -> Option<(u64, bool)> {
    let rest = name.strip_prefix("frame_")?;
    let (digits, ext) = rest.split_at(rest.len().checked_sub(4)?);
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let is_ppm = match ext {
        ".ppm" => true,
        ".pgm" => false,
        _ => return None,
    };
    Some((digits.parse().ok()?, is_ppm))
}
