//! Event records and their text and binary file formats.
//!
//! Text: a header line `# events width=W height=H`, then `t x y p` per line
//! with `p` in {0, 1}. Binary: magic `EVT1`, `u32` width, `u32` height,
//! `u64` count, then 14-byte little-endian records
//! (`f64 t, u16 x, u16 y, i8 p, u8 pad`) with `p` in {-1, +1}.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const BINARY_MAGIC: &[u8; 4] = b"EVT1";
const RECORD_BYTES: usize = 14;
const HEADER_BYTES: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f64,
    /// +1 or -1
    pub polarity: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, polarity: i8) -> Self {
        Self { x, y, t, polarity }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub events: Vec<Event>,
}

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("binary event file: {0}")]
    Binary(String),
    #[error("event {index} at ({x}, {y}) outside the {width}x{height} sensor")]
    OutOfBounds { index: usize, x: u16, y: u16, width: u32, height: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EventIoError + '_ {
    move |source| EventIoError::Io { path: path.display().to_string(), source }
}

/// Load either format, detected by the binary magic.
pub fn load_events(path: &Path) -> Result<EventStream, EventIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| EventIoError::Parse { line: 0, message: e.to_string() })?;
        parse_text(&text)
    }
}

pub fn parse_text(text: &str) -> Result<EventStream, EventIoError> {
    let mut width = None;
    let mut height = None;
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for tok in rest.split_whitespace() {
                if let Some(v) = tok.strip_prefix("width=") {
                    width = Some(v.parse::<u32>().map_err(|e| EventIoError::Parse { line: line_no, message: e.to_string() })?);
                } else if let Some(v) = tok.strip_prefix("height=") {
                    height = Some(v.parse::<u32>().map_err(|e| EventIoError::Parse { line: line_no, message: e.to_string() })?);
                }
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(EventIoError::Parse { line: line_no, message: format!("expected 't x y p', got '{line}'") });
        }
        let bad = |what: &str, v: &str| EventIoError::Parse { line: line_no, message: format!("bad {what} '{v}'") };
        let t: f64 = parts[0].parse().map_err(|_| bad("time", parts[0]))?;
        if !t.is_finite() {
            return Err(bad("time", parts[0]));
        }
        let x: u16 = parts[1].parse().map_err(|_| bad("x", parts[1]))?;
        let y: u16 = parts[2].parse().map_err(|_| bad("y", parts[2]))?;
        let polarity = match parts[3] {
            "1" => 1,
            "0" => -1,
            other => return Err(bad("polarity", other)),
        };
        events.push(Event { x, y, t, polarity });
    }
    let (width, height) = match (width, height) {
        (Some(w), Some(h)) => (w, h),
        _ => return Err(EventIoError::Parse { line: 1, message: "missing '# events width=W height=H' header".into() }),
    };
    let stream = EventStream { width, height, events };
    check_bounds(&stream)?;
    Ok(stream)
}

pub fn parse_binary(bytes: &[u8]) -> Result<EventStream, EventIoError> {
    if bytes.len() < HEADER_BYTES || &bytes[..4] != BINARY_MAGIC {
        return Err(EventIoError::Binary("missing EVT1 header".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_BYTES..];
    if body.len() != count * RECORD_BYTES {
        return Err(EventIoError::Binary(format!(
            "expected {count} records ({} bytes), found {} bytes",
            count * RECORD_BYTES,
            body.len()
        )));
    }
    let mut events = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(RECORD_BYTES).enumerate() {
        let t = f64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let polarity = rec[12] as i8;
        if polarity != 1 && polarity != -1 {
            return Err(EventIoError::Binary(format!("record {i}: polarity {polarity}")));
        }
        events.push(Event { x, y, t, polarity });
    }
    let stream = EventStream { width, height, events };
    check_bounds(&stream)?;
    Ok(stream)
}

fn check_bounds(s: &EventStream) -> Result<(), EventIoError> {
    for (index, e) in s.events.iter().enumerate() {
        if e.x as u32 >= s.width || e.y as u32 >= s.height {
            return Err(EventIoError::OutOfBounds { index, x: e.x, y: e.y, width: s.width, height: s.height });
        }
    }
    Ok(())
}

pub fn format_text(stream: &EventStream) -> String {
    let mut out = String::with_capacity(32 * stream.events.len() + 64);
    let _ = writeln!(out, "# events width={} height={}", stream.width, stream.height);
    for e in &stream.events {
        let _ = writeln!(out, "{:.9} {} {} {}", e.t, e.x, e.y, if e.polarity > 0 { 1 } else { 0 });
    }
    out
}

pub fn encode_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + RECORD_BYTES * stream.events.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity as u8);
        out.push(0);
    }
    out
}

pub fn save_events_text(stream: &EventStream, path: &Path) -> Result<(), EventIoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_text(stream).as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn save_events_binary(stream: &EventStream, path: &Path) -> Result<(), EventIoError> {
    fs::write(path, encode_binary(stream)).map_err(io_err(path))
}
