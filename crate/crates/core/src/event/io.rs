//! The two on-disk event encodings.
//!
//! CSV: a `H W` header line, then one `t x y p` record per line.
//!
//! Packed binary: `EVS1`, u32 H, u32 W, u64 count, then `count` records of
//! (u64 t, u16 x, u16 y, u8 p), all little-endian.

use std::path::Path;

use super::{Event, EventError, EventStream, Geometry, Polarity};
use crate::fsutil::{write_atomic, Reader};

pub const BINARY_MAGIC: &[u8; 4] = b"EVS1";
pub const BINARY_RECORD_LEN: usize = 8 + 2 + 2 + 1;
const BINARY_HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

impl EventFormat {
    /// Binary when the payload starts with the packed magic, CSV otherwise.
    pub fn detect(bytes: &[u8]) -> Self {
        if bytes.starts_with(BINARY_MAGIC) {
            EventFormat::Binary
        } else {
            EventFormat::Csv
        }
    }
}

impl std::str::FromStr for EventFormat {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(EventFormat::Csv),
            "bin" | "binary" | "packed" => Ok(EventFormat::Binary),
            other => Err(EventError::Argument(format!("unknown event format '{other}'"))),
        }
    }
}

pub fn parse_events(bytes: &[u8], format: EventFormat) -> Result<EventStream, EventError> {
    match format {
        EventFormat::Csv => parse_csv(bytes),
        EventFormat::Binary => parse_binary(bytes),
    }
}

pub fn serialize_events(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    match format {
        EventFormat::Csv => to_csv(stream),
        EventFormat::Binary => to_binary(stream),
    }
}

/// Reads a stream, detecting the encoding from the file's first bytes.
pub fn read_stream(path: &Path) -> Result<EventStream, EventError> {
    let bytes = std::fs::read(path)?;
    parse_events(&bytes, EventFormat::detect(&bytes))
}

pub fn write_stream(path: &Path, stream: &EventStream, format: EventFormat) -> Result<(), EventError> {
    write_atomic(path, &serialize_events(stream, format))?;
    Ok(())
}

fn parse_err(offset: usize, reason: impl Into<String>) -> EventError {
    EventError::Parse {
        offset,
        reason: reason.into(),
    }
}

fn parse_csv(bytes: &[u8]) -> Result<EventStream, EventError> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(e.valid_up_to(), "invalid UTF-8"))?;

    let mut offset = 0usize;
    let mut geometry: Option<Geometry> = None;
    let mut events = Vec::new();

    for line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_ascii_whitespace().collect();
        let num = |i: usize| -> Result<u64, EventError> {
            fields[i]
                .parse::<u64>()
                .map_err(|_| parse_err(line_offset, format!("field '{}' is not a base-10 integer", fields[i])))
        };

        match geometry {
            None => {
                if fields.len() != 2 {
                    return Err(parse_err(line_offset, "header must be 'H W'"));
                }
                let (h, w) = (num(0)?, num(1)?);
                let h = u32::try_from(h).map_err(|_| parse_err(line_offset, "height too large"))?;
                let w = u32::try_from(w).map_err(|_| parse_err(line_offset, "width too large"))?;
                geometry = Some(Geometry::new(h, w)?);
            }
            Some(g) => {
                if fields.len() != 4 {
                    return Err(parse_err(line_offset, "record must be 't x y p'"));
                }
                let (t, x, y, p) = (num(0)?, num(1)?, num(2)?, num(3)?);
                let index = events.len();
                if x >= g.width as u64 || y >= g.height as u64 {
                    return Err(EventError::OutOfBounds {
                        index,
                        x: x.min(u32::MAX as u64) as u32,
                        y: y.min(u32::MAX as u64) as u32,
                        height: g.height,
                        width: g.width,
                    });
                }
                let polarity = u8::try_from(p)
                    .ok()
                    .and_then(Polarity::from_bit)
                    .ok_or_else(|| parse_err(line_offset, format!("polarity {p} not in {{0, 1}}")))?;
                events.push(Event::new(t, x as u16, y as u16, polarity));
            }
        }
    }

    let geometry = geometry.ok_or_else(|| parse_err(0, "missing 'H W' header"))?;
    EventStream::new(geometry, events)
}

fn parse_binary(bytes: &[u8]) -> Result<EventStream, EventError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4).ok_or_else(|| parse_err(0, "truncated magic"))?;
    if magic != BINARY_MAGIC {
        return Err(parse_err(0, "bad magic, expected EVS1"));
    }
    let h = r.u32().ok_or_else(|| parse_err(r.pos(), "truncated header"))?;
    let w = r.u32().ok_or_else(|| parse_err(r.pos(), "truncated header"))?;
    let count = r.u64().ok_or_else(|| parse_err(r.pos(), "truncated header"))?;
    let geometry = Geometry::new(h, w)?;

    let expected = (count as u128) * BINARY_RECORD_LEN as u128;
    if expected != r.remaining() as u128 {
        return Err(parse_err(
            BINARY_HEADER_LEN,
            format!(
                "header declares {count} records ({expected} bytes) but payload has {} bytes",
                r.remaining()
            ),
        ));
    }

    let mut events = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let offset = r.pos();
        // Length was checked above, so these reads cannot fail.
        let t = r.u64().unwrap();
        let x = r.u16().unwrap();
        let y = r.u16().unwrap();
        let p = r.u8().unwrap();
        let polarity =
            Polarity::from_bit(p).ok_or_else(|| parse_err(offset + 12, format!("polarity {p} not in {{0, 1}}")))?;
        events.push(Event::new(t, x, y, polarity));
    }
    EventStream::new(geometry, events)
}

fn to_csv(stream: &EventStream) -> Vec<u8> {
    use std::fmt::Write;
    let g = stream.geometry();
    let mut out = String::with_capacity(16 + stream.len() * 20);
    let _ = writeln!(out, "{} {}", g.height, g.width);
    for e in stream.events() {
        let _ = writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.polarity.bit());
    }
    out.into_bytes()
}

fn to_binary(stream: &EventStream) -> Vec<u8> {
    let g = stream.geometry();
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + stream.len() * BINARY_RECORD_LEN);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&g.height.to_le_bytes());
    out.extend_from_slice(&g.width.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity.bit());
    }
    out
}
