//! Event data model: single events, time-sorted streams with sensor geometry,
//! labeled clips, and the preprocessing filters that run before any dense
//! representation is built.

mod filter;
mod io;
mod manifest;

pub use filter::{crop_roi, refractory_filter, time_surface_denoise, DenoiseParams};
pub use io::{
    parse_events, read_stream, serialize_events, write_stream, EventFormat, BINARY_MAGIC,
    BINARY_RECORD_LEN,
};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};

use thiserror::Error;
use serde::{Deserialize, Serialize};

/// Largest timestamp an event may carry (timestamps fit in 63 bits).
pub const MAX_TIMESTAMP: u64 = i64::MAX as u64;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("record {index} at ({x}, {y}) lies outside the {height}x{width} sensor")]
    OutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        height: u32,
        width: u32,
    },
    #[error("record {index} has timestamp {t} which does not fit in 63 bits")]
    TimestampOverflow { index: usize, t: u64 },
    #[error("invalid geometry {height}x{width}")]
    Geometry { height: u32, width: u32 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sign of the brightness change that triggered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Polarity {
    Negative = 0,
    Positive = 1,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    /// Channel index used by the two-channel dense representations.
    pub fn index(self) -> usize {
        self as usize
    }

    /// +1 for positive, -1 for negative.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Negative => -1.0,
            Polarity::Positive => 1.0,
        }
    }
}

/// One event: timestamp in microseconds, pixel column `x`, pixel row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// Sensor size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub height: u32,
    pub width: u32,
}

impl Geometry {
    /// Coordinates are stored as `u16`, so each side is capped at 65536.
    pub fn new(height: u32, width: u32) -> Result<Self, EventError> {
        if height == 0 || width == 0 || height > 1 << 16 || width > 1 << 16 {
            return Err(EventError::Geometry { height, width });
        }
        Ok(Self { height, width })
    }

    pub fn pixels(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (x as u32) < self.width && (y as u32) < self.height
    }

    /// Row-major pixel index.
    pub fn pixel_index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

/// A validated, time-sorted event sequence over a fixed sensor geometry.
///
/// Immutable once built; every filter returns a new stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: Geometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and timestamps, then stably sorts by timestamp.
    pub fn new(geometry: Geometry, mut events: Vec<Event>) -> Result<Self, EventError> {
        for (index, e) in events.iter().enumerate() {
            if !geometry.contains(e.x, e.y) {
                return Err(EventError::OutOfBounds {
                    index,
                    x: e.x as u32,
                    y: e.y as u32,
                    height: geometry.height,
                    width: geometry.width,
                });
            }
            if e.t > MAX_TIMESTAMP {
                return Err(EventError::TimestampOverflow { index, t: e.t });
            }
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self { geometry, events })
    }

    /// Caller guarantees the events are valid for `geometry` and sorted.
    pub(crate) fn from_sorted(geometry: Geometry, events: Vec<Event>) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0].t <= w[1].t));
        debug_assert!(events.iter().all(|e| geometry.contains(e.x, e.y)));
        Self { geometry, events }
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_t(&self) -> Option<u64> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_t(&self) -> Option<u64> {
        self.events.last().map(|e| e.t)
    }
}

/// A labeled activity segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub stream: EventStream,
    pub label: usize,
    pub subject_id: String,
    pub config_id: String,
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl RoiRect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn validate(&self, geometry: Geometry) -> Result<(), EventError> {
        if self.x0 < self.x1
            && self.x1 <= geometry.width
            && self.y0 < self.y1
            && self.y1 <= geometry.height
        {
            Ok(())
        } else {
            Err(EventError::Argument(format!(
                "roi ({}, {}, {}, {}) is empty or exceeds the {}x{} sensor",
                self.x0, self.y0, self.x1, self.y1, geometry.height, geometry.width
            )))
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            height: self.y1 - self.y0,
            width: self.x1 - self.x0,
        }
    }
}

impl std::str::FromStr for RoiRect {
    type Err = EventError;

    /// `x0,y0,x1,y1`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<u32> = s
            .split(',')
            .map(|p| p.trim().parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|e| EventError::Argument(format!("roi '{s}': {e}")))?;
        match parts.as_slice() {
            [x0, y0, x1, y1] => Ok(RoiRect::new(*x0, *y0, *x1, *y1)),
            _ => Err(EventError::Argument(format!(
                "roi '{s}' must be x0,y0,x1,y1"
            ))),
        }
    }
}
