use super::{DenseFrame, ReprError};
use crate::event::{Event, EventStream};

const NO_EVENT: u64 = u64::MAX;

/// Two-channel frame holding, per (pixel, polarity), the normalized
/// timestamp of the latest event inside `[t_k - t_m, t_k]`. Cells with no
/// event in the window are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    /// `H x W x 2`, channel = polarity bit.
    pub values: DenseFrame,
    pub t_k: u64,
    pub t_m: u64,
}

impl EventFrame {
    pub fn value(&self, x: usize, y: usize, polarity: usize) -> Option<f32> {
        let v = self.values.get(y, x, polarity);
        (!v.is_nan()).then_some(v)
    }
}

/// Normalized recency of an event at `t` for the window ending at `t_k`.
#[inline]
pub(crate) fn normalize(t: u64, t_k: u64, t_m: u64) -> f32 {
    let start = t_k as i64 - t_m as i64;
    ((t as i64 - start) as f64 / t_m as f64) as f32
}

/// Streaming FIFO frame builder: one pass over the events, keeping the
/// latest timestamp per (pixel, polarity) and emitting a frame at every
/// `t_k = t0 + k * dt`, `k = 1..=N`, `N = floor((t_n - t0) / dt)`.
pub struct FrameBuilder<'a> {
    events: &'a [Event],
    cursor: usize,
    width: usize,
    height: usize,
    last: Vec<u64>,
    t0: u64,
    dt: u64,
    t_m: u64,
    k: u64,
    n: u64,
}

impl<'a> FrameBuilder<'a> {
    pub fn new(stream: &'a EventStream, dt: u64, t_m: u64) -> Result<Self, ReprError> {
        if dt == 0 || t_m == 0 {
            return Err(ReprError::Argument("dt and t_m must be positive".into()));
        }
        let (t0, tn) = match (stream.first_t(), stream.last_t()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(ReprError::NoEvents),
        };
        let g = stream.geometry();
        Ok(Self {
            events: stream.events(),
            cursor: 0,
            width: g.width as usize,
            height: g.height as usize,
            last: vec![NO_EVENT; g.pixels() * 2],
            t0,
            dt,
            t_m,
            k: 0,
            n: (tn - t0) / dt,
        })
    }

    /// Number of frames the builder will emit.
    pub fn frame_count(&self) -> usize {
        self.n as usize
    }

    pub fn t0(&self) -> u64 {
        self.t0
    }
}

impl Iterator for FrameBuilder<'_> {
    type Item = EventFrame;

    fn next(&mut self) -> Option<EventFrame> {
        if self.k >= self.n {
            return None;
        }
        self.k += 1;
        let t_k = self.t0 + self.k * self.dt;

        while let Some(e) = self.events.get(self.cursor) {
            if e.t > t_k {
                break;
            }
            let idx = (e.y as usize * self.width + e.x as usize) * 2 + e.polarity.index();
            self.last[idx] = e.t;
            self.cursor += 1;
        }

        let start = t_k as i64 - self.t_m as i64;
        let data = self
            .last
            .iter()
            .map(|&t| {
                if t != NO_EVENT && t as i64 >= start {
                    normalize(t, t_k, self.t_m)
                } else {
                    f32::NAN
                }
            })
            .collect();
        Some(EventFrame {
            values: DenseFrame {
                height: self.height,
                width: self.width,
                channels: 2,
                data,
            },
            t_k,
            t_m: self.t_m,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.n - self.k) as usize;
        (left, Some(left))
    }
}

/// Builds every frame of the stream. Memory grows with `N * H * W`; use
/// [`FrameBuilder`] directly to consume frames one at a time.
pub fn build_frames(stream: &EventStream, dt: u64, t_m: u64) -> Result<Vec<EventFrame>, ReprError> {
    Ok(FrameBuilder::new(stream, dt, t_m)?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Geometry, Polarity};

    fn stream(evs: &[(u64, u16, u16, u8)]) -> EventStream {
        let events = evs
            .iter()
            .map(|&(t, x, y, p)| Event::new(t, x, y, Polarity::from_bit(p).unwrap()))
            .collect();
        EventStream::new(Geometry::new(4, 4).unwrap(), events).unwrap()
    }

    #[test]
    fn event_at_frame_time_is_one() {
        // t0 = 0, dt = 100 -> t_1 = 100.
        let s = stream(&[(0, 0, 0, 0), (100, 1, 2, 1)]);
        let frames = build_frames(&s, 100, 512).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].value(1, 2, 1), Some(1.0));
    }

    #[test]
    fn event_at_window_start_is_zero() {
        let s = stream(&[(0, 0, 0, 0), (600, 3, 3, 1), (1000, 1, 1, 0)]);
        // t_1 = 1000 and t_m = 400, so the window is [600, 1000].
        let frames = build_frames(&s, 1000, 400).unwrap();
        assert_eq!(frames[0].value(3, 3, 1), Some(0.0));
        assert_eq!(frames[0].value(0, 0, 0), None);
    }

    #[test]
    fn latest_event_wins() {
        let t_k = 1_000_000u64;
        let s = stream(&[(0, 0, 0, 0), (t_k - 400_000, 2, 2, 1), (t_k - 100_000, 2, 2, 1), (t_k, 3, 3, 0)]);
        let frames = build_frames(&s, t_k, 512_000).unwrap();
        let v = frames[0].value(2, 2, 1).unwrap();
        assert_eq!(v, (412_000.0f64 / 512_000.0) as f32);
        assert!((v - 0.8047).abs() < 1e-4);
        // Polarity channels are independent.
        assert_eq!(frames[0].value(2, 2, 0), None);
    }

    #[test]
    fn frame_count_and_times() {
        let s = stream(&[(10, 0, 0, 0), (1009, 0, 0, 1)]);
        let frames = build_frames(&s, 100, 50).unwrap();
        assert_eq!(frames.len(), 9);
        assert_eq!(frames[0].t_k, 110);
        assert_eq!(frames[8].t_k, 910);
        // Stream shorter than dt gives no frames.
        assert!(build_frames(&stream(&[(0, 0, 0, 0)]), 10, 10).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        let empty = EventStream::empty(Geometry::new(2, 2).unwrap());
        assert!(matches!(build_frames(&empty, 1, 1), Err(ReprError::NoEvents)));
        let s = stream(&[(0, 0, 0, 0)]);
        assert!(matches!(build_frames(&s, 0, 1), Err(ReprError::Argument(_))));
    }
}
