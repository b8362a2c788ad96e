//! Blob-based representation: events are clustered online into blobs with
//! a center, per-axis radius and decaying weight; each finished blob is
//! summarized as a fixed-length descriptor of its trajectory.

use thiserror::Error;

use crate::classifier::{argmax, SoftmaxHead};
use crate::event::EventStream;

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("blob has no history samples")]
    EmptyHistory,
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error("feature dimension {got} does not match head dimension {expected}")]
    Dimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobTrackerConfig {
    /// Weight of the previous value in every convex update, in (0, 1).
    pub alpha: f64,
    /// Minimum radius in pixels.
    pub r_min: f64,
    /// Resampled points per channel in the descriptor.
    pub n_samples: usize,
    /// A blob is retired once its decayed weight drops below this.
    pub w_min: f64,
    /// Weight decay time constant in microseconds.
    pub tau_w: f64,
}

impl Default for BlobTrackerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            r_min: 50.0,
            n_samples: 100,
            w_min: 1.0,
            tau_w: 500_000.0,
        }
    }
}

impl BlobTrackerConfig {
    pub fn validate(&self) -> Result<(), BlobError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(BlobError::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if !(self.r_min > 0.0) || !(self.tau_w > 0.0) || !(self.w_min > 0.0) {
            return Err(BlobError::Config("r_min, tau_w and w_min must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(BlobError::Config("n_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// One time-stamped snapshot of a blob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSample {
    pub t: u64,
    pub c_x: f64,
    pub c_y: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobState {
    pub id: usize,
    pub c_x: f64,
    pub c_y: f64,
    pub r_x: f64,
    pub r_y: f64,
    /// Weight as of `t_last`.
    pub w: f64,
    pub t_last: u64,
    pub birth: u64,
    /// Time the blob was retired; `None` while live.
    pub death: Option<u64>,
    /// Events absorbed after the seed event.
    pub assigned: usize,
    pub history: Vec<BlobSample>,
}

impl BlobState {
    fn spawn(id: usize, t: u64, x: f64, y: f64, r_min: f64) -> Self {
        let sample = BlobSample {
            t,
            c_x: x,
            c_y: y,
            r_x: r_min,
            r_y: r_min,
            w: 1.0,
        };
        Self {
            id,
            c_x: x,
            c_y: y,
            r_x: r_min,
            r_y: r_min,
            w: 1.0,
            t_last: t,
            birth: t,
            death: None,
            assigned: 0,
            history: vec![sample],
        }
    }

    fn decayed_weight(&self, t: u64, tau_w: f64) -> f64 {
        self.w * (-((t - self.t_last) as f64) / tau_w).exp()
    }

    /// Time at which the decayed weight crosses `w_min`, capped at `now`.
    fn retirement_time(&self, now: u64, cfg: &BlobTrackerConfig) -> u64 {
        if self.w <= cfg.w_min {
            return self.t_last;
        }
        let dt = cfg.tau_w * (self.w / cfg.w_min).ln();
        (self.t_last + dt as u64).min(now)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.c_x).abs() <= self.r_x && (y - self.c_y).abs() <= self.r_y
    }

    fn absorb(&mut self, t: u64, x: f64, y: f64, cfg: &BlobTrackerConfig) {
        let a = cfg.alpha;
        self.r_x = cfg.r_min.max(a * self.r_x + (1.0 - a) * (self.c_x - x).abs());
        self.r_y = cfg.r_min.max(a * self.r_y + (1.0 - a) * (self.c_y - y).abs());
        self.c_x = a * self.c_x + (1.0 - a) * x;
        self.c_y = a * self.c_y + (1.0 - a) * y;
        self.w = self.decayed_weight(t, cfg.tau_w) + 1.0;
        self.t_last = t;
        self.assigned += 1;
        self.history.push(BlobSample {
            t,
            c_x: self.c_x,
            c_y: self.c_y,
            r_x: self.r_x,
            r_y: self.r_y,
            w: self.w,
        });
    }
}

fn retire(
    live: &mut Vec<BlobState>,
    done: &mut Vec<BlobState>,
    cfg: &BlobTrackerConfig,
    dead: impl Fn(&BlobState) -> bool,
    now: u64,
) {
    let mut i = 0;
    while i < live.len() {
        if dead(&live[i]) {
            let mut b = live.remove(i);
            b.death = Some(b.retirement_time(now, cfg));
            done.push(b);
        } else {
            i += 1;
        }
    }
}

/// Clusters the stream into blobs and returns every blob, ordered by
/// retirement (ties by id). Live blobs are flushed at the end of the stream
/// with the last event time as their retirement time.
pub fn track(stream: &EventStream, cfg: &BlobTrackerConfig) -> Result<Vec<BlobState>, BlobError> {
    cfg.validate()?;
    let mut live: Vec<BlobState> = Vec::new();
    let mut done: Vec<BlobState> = Vec::new();
    let mut next_id = 0usize;

    for e in stream.events() {
        let (x, y) = (e.x as f64, e.y as f64);

        // Blobs that carried more than w_min retire once their decayed
        // weight crosses it, before they can absorb anything new.
        retire(&mut live, &mut done, cfg, |b| b.w > cfg.w_min && b.decayed_weight(e.t, cfg.tau_w) < cfg.w_min, e.t);

        let mut best: Option<(usize, f64)> = None;
        for (i, b) in live.iter().enumerate() {
            if b.contains(x, y) {
                let d = (x - b.c_x).hypot(y - b.c_y);
                // `live` is ordered by id, so strict < keeps the lowest id on ties.
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        match best {
            Some((i, _)) => live[i].absorb(e.t, x, y, cfg),
            None => {
                live.push(BlobState::spawn(next_id, e.t, x, y, cfg.r_min));
                next_id += 1;
            }
        }

        // Blobs sitting at or below w_min (fresh seeds) survive only as long
        // as events keep joining them.
        retire(&mut live, &mut done, cfg, |b| b.t_last < e.t && b.decayed_weight(e.t, cfg.tau_w) < cfg.w_min, e.t);
    }

    let end = stream.last_t().unwrap_or(0);
    for mut b in live {
        b.death = Some(end);
        done.push(b);
    }
    done.sort_by_key(|b| (b.death, b.id));
    Ok(done)
}

/// Fixed-length blob descriptor: `n_samples` values each of c_x, c_y, r_x,
/// r_y and w, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobFeatureVector {
    pub values: Vec<f64>,
}

/// The `n` query times, evenly spaced from `birth` to `death` inclusive.
pub fn query_times(birth: u64, death: u64, n: usize) -> Vec<u64> {
    if n == 1 {
        return vec![birth];
    }
    let span = (death - birth) as u128;
    (0..n)
        .map(|i| birth + (span * i as u128 / (n - 1) as u128) as u64)
        .collect()
}

/// Resamples the blob's history at evenly spaced times over its life using
/// zero-order hold.
pub fn extract_features(blob: &BlobState, cfg: &BlobTrackerConfig) -> Result<BlobFeatureVector, BlobError> {
    let first = blob.history.first().ok_or(BlobError::EmptyHistory)?;
    let n = cfg.n_samples;
    let death = blob.death.unwrap_or(blob.t_last).max(first.t);
    let times = query_times(first.t, death, n);

    let mut values = vec![0.0; 5 * n];
    let mut cursor = 0usize;
    for (i, &tq) in times.iter().enumerate() {
        while cursor + 1 < blob.history.len() && blob.history[cursor + 1].t <= tq {
            cursor += 1;
        }
        let s = &blob.history[cursor];
        for (ch, v) in [s.c_x, s.c_y, s.r_x, s.r_y, s.w].into_iter().enumerate() {
            values[ch * n + i] = v;
        }
    }
    Ok(BlobFeatureVector { values })
}

/// Clip-level decision from per-blob votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobClipPrediction {
    pub class: usize,
    /// True when the clip had no blobs and `class` is the fallback.
    pub fallback: bool,
}

/// Mode of per-blob argmax labels, ties to the lowest class index. A clip
/// with no blobs gets `fallback_class` and is flagged.
pub fn classify_blobs(
    features: &[BlobFeatureVector],
    head: &SoftmaxHead,
    fallback_class: usize,
) -> Result<BlobClipPrediction, BlobError> {
    if features.is_empty() {
        return Ok(BlobClipPrediction {
            class: fallback_class,
            fallback: true,
        });
    }
    let mut votes = vec![0usize; head.classes()];
    for f in features {
        if f.values.len() != head.dim() {
            return Err(BlobError::Dimension {
                got: f.values.len(),
                expected: head.dim(),
            });
        }
        votes[argmax(&head.logits(&f.values))] += 1;
    }
    Ok(BlobClipPrediction {
        class: crate::classifier::argmax_count(&votes),
        fallback: false,
    })
}
