use super::{Event, EventError, EventStream, Geometry, RoiRect};
use serde::{Deserialize, Serialize};

/// Keeps events inside `roi` and re-bases them onto the ROI's own geometry.
pub fn crop_roi(stream: &EventStream, roi: RoiRect) -> Result<EventStream, EventError> {
    roi.validate(stream.geometry())?;
    let events = stream
        .events()
        .iter()
        .filter(|e| {
            let (x, y) = (e.x as u32, e.y as u32);
            x >= roi.x0 && x < roi.x1 && y >= roi.y0 && y < roi.y1
        })
        .map(|e| Event {
            x: (e.x as u32 - roi.x0) as u16,
            y: (e.y as u32 - roi.y0) as u16,
            ..*e
        })
        .collect();
    Ok(EventStream::from_sorted(roi.geometry(), events))
}

/// Calls `f` with the row-major index of every pixel in the 3x3 block
/// around `(x, y)`, clipped to the sensor. The center is included.
#[inline]
fn for_each_in_block(g: Geometry, x: u16, y: u16, mut f: impl FnMut(usize)) {
    let (x, y) = (x as usize, y as usize);
    let (w, h) = (g.width as usize, g.height as usize);
    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            f(ny * w + nx);
        }
    }
}

/// Drops an event when an already retained event in its 3x3 neighborhood
/// (itself included) has a timestamp in `(t - dt_min, t)`.
///
/// Events sharing a timestamp never suppress each other, which makes the
/// filter idempotent.
pub fn refractory_filter(stream: &EventStream, dt_min: u64) -> EventStream {
    let g = stream.geometry();
    // Per pixel, the latest retained timestamp. Retained timestamps at one
    // pixel are either equal or at least dt_min apart, so the latest one
    // decides whether any retained event falls in the window.
    let mut last: Vec<Option<u64>> = vec![None; g.pixels()];
    let mut kept = Vec::with_capacity(stream.len());

    for e in stream.events() {
        let mut suppressed = false;
        for_each_in_block(g, e.x, e.y, |idx| {
            if let Some(lt) = last[idx] {
                if lt < e.t && e.t - lt < dt_min {
                    suppressed = true;
                }
            }
        });
        if !suppressed {
            last[g.pixel_index(e.x, e.y)] = Some(e.t);
            kept.push(*e);
        }
    }
    EventStream::from_sorted(g, kept)
}

/// Parameters of the neighbor-support denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseParams {
    /// Support window in microseconds.
    pub tau_d: u64,
    /// Minimum number of supporting neighbor pixels.
    pub k_min: u32,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self {
            tau_d: 10_000,
            k_min: 1,
        }
    }
}

/// Background-activity filter in the time-surface family: an event survives
/// when at least `k_min` of its 8 neighbors fired (any polarity) within
/// `[t - tau_d, t]`. Every incoming event refreshes its pixel's surface,
/// whether or not it survives.
///
/// This neighbor-support rule stands in for the time-surface denoiser of
/// the E-MLB benchmark, whose exact scoring rule is not published.
pub fn time_surface_denoise(stream: &EventStream, params: DenoiseParams) -> Result<EventStream, EventError> {
    if params.tau_d == 0 || params.k_min == 0 {
        return Err(EventError::Argument("time-surface denoise needs tau_d > 0 and k_min >= 1".into()));
    }
    let g = stream.geometry();
    let mut surface: Vec<Option<u64>> = vec![None; g.pixels()];
    let mut kept = Vec::with_capacity(stream.len());

    for e in stream.events() {
        let own = g.pixel_index(e.x, e.y);
        let mut support = 0u32;
        for_each_in_block(g, e.x, e.y, |idx| {
            if idx != own {
                if let Some(lt) = surface[idx] {
                    if lt + params.tau_d >= e.t {
                        support += 1;
                    }
                }
            }
        });
        if support >= params.k_min {
            kept.push(*e);
        }
        surface[own] = Some(e.t);
    }
    Ok(EventStream::from_sorted(g, kept))
}

#[cfg(test)]
mod tests {
    use super::super::Polarity;
    use super::*;
    use proptest::prelude::*;

    fn stream(h: u32, w: u32, evs: &[(u64, u16, u16)]) -> EventStream {
        let events = evs
            .iter()
            .map(|&(t, x, y)| Event::new(t, x, y, Polarity::Positive))
            .collect();
        EventStream::new(Geometry::new(h, w).unwrap(), events).unwrap()
    }

    #[test]
    fn crop_keeps_inside() {
        let s = stream(20, 20, &[(0, 5, 5)]);
        let out = crop_roi(&s, RoiRect::new(0, 0, 10, 10)).unwrap();
        assert_eq!(out.events()[0].x, 5);
        assert_eq!(out.events()[0].y, 5);
    }

    #[test]
    fn crop_removes_outside() {
        let s = stream(20, 20, &[(0, 5, 5)]);
        let out = crop_roi(&s, RoiRect::new(6, 0, 10, 10)).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn crop_shifts_coordinates() {
        let s = stream(20, 20, &[(0, 7, 3)]);
        let out = crop_roi(&s, RoiRect::new(6, 2, 10, 10)).unwrap();
        assert_eq!((out.events()[0].x, out.events()[0].y), (1, 1));
        assert_eq!(out.geometry(), Geometry::new(8, 4).unwrap());
    }

    #[test]
    fn crop_invalid_roi() {
        let s = stream(20, 20, &[(0, 7, 3)]);
        assert!(crop_roi(&s, RoiRect::new(0, 0, 21, 5)).is_err());
    }

    #[test]
    fn refractory_same_pixel_within_window() {
        let s = stream(10, 10, &[(0, 5, 5), (4000, 5, 5)]);
        assert_eq!(refractory_filter(&s, 5000).len(), 1);
    }

    #[test]
    fn refractory_same_pixel_outside_window() {
        let s = stream(10, 10, &[(0, 5, 5), (6000, 5, 5)]);
        assert_eq!(refractory_filter(&s, 5000).len(), 2);
    }

    #[test]
    fn refractory_diagonal_neighbor() {
        let s = stream(10, 10, &[(0, 5, 5), (1000, 6, 6)]);
        let out = refractory_filter(&s, 5000);
        assert_eq!(out.len(), 1);
        assert_eq!(out.events()[0].t, 0);
        // Two pixels away is outside the neighborhood.
        let s = stream(10, 10, &[(0, 5, 5), (1000, 7, 5)]);
        assert_eq!(refractory_filter(&s, 5000).len(), 2);
    }

    #[test]
    fn refractory_dropped_events_do_not_suppress() {
        // t=4000 is dropped, so it cannot suppress t=8000.
        let s = stream(10, 10, &[(0, 5, 5), (4000, 5, 5), (8000, 5, 5)]);
        let ts: Vec<u64> = refractory_filter(&s, 5000).events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![0, 8000]);
    }

    #[test]
    fn denoise_isolated_dropped() {
        let s = stream(10, 10, &[(0, 5, 5)]);
        assert!(time_surface_denoise(&s, DenoiseParams::default()).unwrap().is_empty());
    }

    #[test]
    fn denoise_supported_kept() {
        let s = stream(10, 10, &[(0, 4, 5), (1000, 5, 5)]);
        let out = time_surface_denoise(&s, DenoiseParams { tau_d: 10_000, k_min: 1 }).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.events()[0].t, 1000);
    }

    #[test]
    fn denoise_dense_burst() {
        // 3x3 block visited row-major, 100 us apart: every event after the
        // first has an already-active neighbor.
        let evs: Vec<(u64, u16, u16)> = (0..9u16).map(|i| (i as u64 * 100, 3 + i % 3, 3 + i / 3)).collect();
        let out = time_surface_denoise(&stream(10, 10, &evs), DenoiseParams::default()).unwrap();
        let ts: Vec<u64> = out.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, (1..9).map(|i| i * 100).collect::<Vec<_>>());
    }

    #[test]
    fn denoise_k_min_counts_distinct_neighbors() {
        let s = stream(10, 10, &[(0, 4, 5), (10, 6, 5), (20, 5, 5)]);
        let p = DenoiseParams { tau_d: 1000, k_min: 2 };
        let out = time_surface_denoise(&s, p).unwrap();
        assert_eq!(out.events().iter().map(|e| e.t).collect::<Vec<_>>(), vec![20]);
        // Stale support falls outside tau_d.
        let s = stream(10, 10, &[(0, 4, 5), (5000, 5, 5)]);
        assert!(time_surface_denoise(&s, p).unwrap().is_empty());
    }

    #[test]
    fn denoise_rejects_bad_params() {
        let s = stream(4, 4, &[]);
        assert!(time_surface_denoise(&s, DenoiseParams { tau_d: 0, k_min: 1 }).is_err());
        assert!(time_surface_denoise(&s, DenoiseParams { tau_d: 1, k_min: 0 }).is_err());
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        prop::collection::vec((0u64..50_000, 0u16..8, 0u16..8, 0u8..2), 0..300).prop_map(|raw| {
            let events = raw
                .into_iter()
                .map(|(t, x, y, p)| Event::new(t, x, y, Polarity::from_bit(p).unwrap()))
                .collect();
            EventStream::new(Geometry::new(8, 8).unwrap(), events).unwrap()
        })
    }

    fn is_subsequence(sub: &[Event], full: &[Event]) -> bool {
        let mut it = full.iter();
        sub.iter().all(|e| it.any(|f| f == e))
    }

    proptest! {
        #[test]
        fn refractory_idempotent_subsequence(s in arb_stream(), dt in 0u64..20_000) {
            let once = refractory_filter(&s, dt);
            let twice = refractory_filter(&once, dt);
            prop_assert_eq!(&once, &twice);
            prop_assert!(is_subsequence(once.events(), s.events()));
        }

        #[test]
        fn denoise_subsequence(s in arb_stream(), tau in 1u64..20_000, k in 1u32..4) {
            let out = time_surface_denoise(&s, DenoiseParams { tau_d: tau, k_min: k }).unwrap();
            prop_assert!(is_subsequence(out.events(), s.events()));
        }

        #[test]
        fn crop_conserves_count(s in arb_stream(), x0 in 0u32..4, y0 in 0u32..4, dx in 1u32..5, dy in 1u32..5) {
            let roi = RoiRect::new(x0, y0, x0 + dx, y0 + dy);
            let out = crop_roi(&s, roi).unwrap();
            let removed = s.events().iter().filter(|e| {
                let (x, y) = (e.x as u32, e.y as u32);
                !(x >= roi.x0 && x < roi.x1 && y >= roi.y0 && y < roi.y1)
            }).count();
            prop_assert_eq!(out.len() + removed, s.len());
        }
    }
}
