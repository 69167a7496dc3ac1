//! File formats.
//!
//! Binary formats are little-endian.
//!
//! | format        | layout                                                              |
//! |---------------|---------------------------------------------------------------------|
//! | label grid    | binary PGM `P5`, values 0/255, `# resolution <m>` comment line      |
//! | real raster   | `"BEVR"`, u32 version, u32 side (cells), f32 resolution; f32 cells  |
//! | feature map   | `"FMAP"`, u32 C, u32 H, u32 W; f32 values channel-major             |
//! | points        | f32 `x y z` triples                                                 |
//!
//! Raster cells are row-major with row 0 at the front (+x) and column 0 at the
//! left (+y). JSON schemas are those of [`CameraCalibration`],
//! [`BoundingBox3D`] and [`LinearDecoder`].

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ground_truth::BoundingBox3D;
use crate::grid::{BevGrid, GridSpec};
use crate::projection::{CameraCalibration, Point3};
use crate::sampling::{FeatureMap, LinearDecoder};
use crate::sync::{StampedMessage, StreamId};

pub const RASTER_MAGIC: &[u8; 4] = b"BEVR";
pub const RASTER_VERSION: u32 = 1;
pub const FEATURE_MAP_MAGIC: &[u8; 4] = b"FMAP";
const HEADER_LEN: usize = 16;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len(),
                format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn push_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

/// Encodes a label grid as binary PGM.
pub fn encode_pgm(grid: &BevGrid<u8>) -> Vec<u8> {
    let n = grid.spec().cells_per_side();
    let mut out = format!("P5\n# resolution {}\n{n} {n}\n255\n", grid.spec().resolution()).into_bytes();
    out.extend(grid.as_slice().iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    out
}

/// Decodes a square binary PGM into 0/1 labels.
///
/// The resolution comment written by [`encode_pgm`] takes precedence over
/// `fallback_resolution`.
pub fn decode_pgm(bytes: &[u8], fallback_resolution: f64) -> Result<BevGrid<u8>> {
    let mut pos = 0usize;
    let mut resolution = fallback_resolution;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        match bytes.get(pos) {
            None => return Err(Error::format(pos, "truncated PGM header")),
            Some(b'#') => {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
                if let Some(v) = comment.trim().strip_prefix("resolution") {
                    resolution = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::format(pos, format!("bad resolution comment {:?}", comment.trim())))?;
                }
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let start = pos;
                while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                    pos += 1;
                }
                fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
            }
        }
    }
    if fields[0].1 != "P5" {
        return Err(Error::format(fields[0].0, format!("expected P5, found {:?}", fields[0].1)));
    }
    let number = |i: usize| -> Result<usize> {
        let (at, ref s) = fields[i];
        s.parse().map_err(|_| Error::format(at, format!("expected an integer, found {s:?}")))
    };
    let (width, height, maxval) = (number(1)?, number(2)?, number(3)?);
    if width != height {
        return Err(Error::format(fields[1].0, format!("BEV grid must be square, got {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(fields[3].0, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let expected = width * height;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != expected {
        return Err(Error::format(
            pos.min(bytes.len()),
            format!("expected {expected} pixel bytes, found {}", data.len()),
        ));
    }
    let spec = GridSpec::from_cells(width, resolution).map_err(|e| Error::format(fields[1].0, e.to_string()))?;
    let cells = data.iter().map(|&v| u8::from(usize::from(v) * 2 > maxval)).collect();
    BevGrid::from_vec(spec, cells)
}

/// Encodes a real-valued grid as an f32 raster.
pub fn encode_raster(grid: &BevGrid<f64>) -> Vec<u8> {
    let n = grid.spec().cells_per_side();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * n);
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    push_f32(&mut out, grid.spec().resolution());
    for &v in grid.as_slice() {
        push_f32(&mut out, v);
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<BevGrid<f64>> {
    let mut r = Reader::new(bytes);
    r.magic(RASTER_MAGIC)?;
    let version = r.u32("version")?;
    if version != RASTER_VERSION {
        return Err(Error::format(4, format!("unsupported raster version {version}")));
    }
    let side = r.u32("side")? as usize;
    let resolution = f64::from(r.f32("resolution")?);
    let spec = GridSpec::from_cells(side, resolution).map_err(|e| Error::format(8, e.to_string()))?;
    let mut cells = Vec::with_capacity(side * side);
    for _ in 0..side * side {
        cells.push(f64::from(r.f32("raster data")?));
    }
    r.finish()?;
    BevGrid::from_vec(spec, cells)
}

pub fn encode_feature_map(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * fm.as_slice().len());
    out.extend_from_slice(FEATURE_MAP_MAGIC);
    for d in [fm.channels(), fm.height(), fm.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in fm.as_slice() {
        push_f32(&mut out, v);
    }
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURE_MAP_MAGIC)?;
    let c = r.u32("channels")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format(4, "feature map dimensions overflow"))?;
    if bytes.len().saturating_sub(HEADER_LEN) != 4 * n {
        return Err(Error::format(
            HEADER_LEN.min(bytes.len()),
            format!("expected {} data bytes for {c}x{h}x{w}, found {}", 4 * n, bytes.len().saturating_sub(HEADER_LEN)),
        ));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let v = r.f32("feature data")?;
        if !v.is_finite() {
            return Err(Error::format(HEADER_LEN + 4 * i, format!("non-finite feature value {v}")));
        }
        data.push(f64::from(v));
    }
    FeatureMap::new(c, h, w, data).map_err(|e| Error::format(4, e.to_string()))
}

pub fn encode_points(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 * points.len());
    for p in points {
        push_f32(&mut out, p.x);
        push_f32(&mut out, p.y);
        push_f32(&mut out, p.z);
    }
    out
}

pub fn decode_points(bytes: &[u8]) -> Result<Vec<Point3>> {
    if !bytes.len().is_multiple_of(12) {
        return Err(Error::format(
            bytes.len() - bytes.len() % 12,
            format!("{} bytes is not a whole number of xyz float32 triples", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(12)
        .enumerate()
        .map(|(i, c)| {
            let f = |k: usize| f64::from(f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes")));
            let p = Point3::new(f(0), f(1), f(2));
            if p.is_finite() {
                Ok(p)
            } else {
                Err(Error::format(12 * i, "non-finite point coordinate"))
            }
        })
        .collect()
}

/// Byte offset of a serde_json error position.
fn json_offset(text: &str, err: &serde_json::Error) -> usize {
    if err.line() == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(err.line() - 1)
        .map(str::len)
        .sum();
    (line_start + err.column().saturating_sub(1)).min(text.len())
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::format(json_offset(text, &e), e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn decode_calibration(text: &str) -> Result<CameraCalibration> {
    let cal: CameraCalibration = parse_json(text)?;
    cal.validate()?;
    Ok(cal)
}

pub fn encode_calibration(cal: &CameraCalibration) -> String {
    to_json(cal)
}

pub fn decode_annotations(text: &str) -> Result<Vec<BoundingBox3D>> {
    let boxes: Vec<BoundingBox3D> = parse_json(text)?;
    for b in &boxes {
        b.validate()?;
    }
    Ok(boxes)
}

pub fn encode_annotations(boxes: &[BoundingBox3D]) -> String {
    to_json(&boxes)
}

pub fn decode_decoder(text: &str) -> Result<LinearDecoder> {
    parse_json(text)
}

pub fn encode_decoder(decoder: &LinearDecoder) -> String {
    to_json(decoder)
}

/// Parses a `stream_id,timestamp` CSV trace. A header line is optional.
///
/// The payload of each message is its zero-based data line number.
pub fn decode_trace(text: &str) -> Result<Vec<StampedMessage>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let at = offset;
        offset += line.len();
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("stream_id")) {
            continue;
        }
        let (stream, t) = line
            .split_once(',')
            .ok_or_else(|| Error::format(at, format!("expected `stream_id,timestamp`, found {line:?}")))?;
        let stream: StreamId = stream.parse().map_err(|e: Error| Error::format(at, e.to_string()))?;
        let timestamp: f64 = t
            .trim()
            .parse()
            .map_err(|_| Error::format(at, format!("bad timestamp {:?}", t.trim())))?;
        out.push(StampedMessage::new(stream, timestamp, out.len() as u64));
    }
    Ok(out)
}

pub fn encode_trace(trace: &[StampedMessage]) -> String {
    let mut s = String::from("stream_id,timestamp\n");
    for m in trace {
        let _ = writeln!(s, "{},{}", m.stream, m.timestamp);
    }
    s
}
