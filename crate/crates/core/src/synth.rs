//! Deterministic synthetic activity clips.
//!
//! A bright disk moves over a dark background. Each pixel fires an event
//! whenever its log intensity drifts by `threshold` from the level at its
//! previous event, with the timestamp placed at the interpolated crossing.
//! Poisson background noise is added on top.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{write_manifest, write_stream, Clip, Event, EventError, EventFormat, EventStream, Geometry, ManifestEntry, Polarity};
use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthClass {
    TranslateLeft,
    TranslateRight,
    OscillateVertical,
    LocalJitter,
    /// Stationary body whose radius swells and shrinks slowly.
    StaticBreathing,
    /// Stationary body with a slow sub-pixel horizontal sway.
    StaticSway,
}

impl SynthClass {
    pub const ALL: [SynthClass; 6] = [
        SynthClass::TranslateLeft,
        SynthClass::TranslateRight,
        SynthClass::OscillateVertical,
        SynthClass::LocalJitter,
        SynthClass::StaticBreathing,
        SynthClass::StaticSway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::TranslateLeft => "translate-left",
            SynthClass::TranslateRight => "translate-right",
            SynthClass::OscillateVertical => "oscillate-vertical",
            SynthClass::LocalJitter => "local-jitter",
            SynthClass::StaticBreathing => "static-breathing",
            SynthClass::StaticSway => "static-sway",
        }
    }

    pub fn is_motion(self) -> bool {
        !matches!(self, SynthClass::StaticBreathing | SynthClass::StaticSway)
    }
}

impl std::str::FromStr for SynthClass {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SynthClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| SynthError::Config(format!("unknown class '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub class: SynthClass,
    pub duration_us: u64,
    pub height: u32,
    pub width: u32,
    /// Background events per pixel per second, both polarities together.
    pub noise_rate: f64,
    pub seed: u64,
    /// Translation speed in px/s.
    pub speed: f64,
    /// Vertical oscillation amplitude in px.
    pub amplitude: f64,
    /// Vertical oscillation frequency in Hz.
    pub frequency: f64,
    /// Jitter amplitude in px, per axis.
    pub jitter_amplitude: f64,
    /// Breathing / sway amplitude of the static classes in px.
    pub static_amplitude: f64,
    pub body_radius: f64,
    /// Body intensity over background intensity.
    pub contrast: f64,
    /// Log-intensity change that triggers an event.
    pub threshold: f64,
    pub render_step_us: u64,
    /// Maximum random offset of the body's rest position, in px.
    pub position_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class: SynthClass::TranslateRight,
            duration_us: 2_000_000,
            height: 64,
            width: 64,
            noise_rate: 0.05,
            seed: 0,
            speed: 16.0,
            amplitude: 10.0,
            frequency: 1.0,
            jitter_amplitude: 3.0,
            static_amplitude: 0.6,
            body_radius: 8.0,
            contrast: 4.0,
            threshold: 0.2,
            render_step_us: 1000,
            position_jitter: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.duration_us == 0 {
            return bad("duration must be positive");
        }
        if !(self.noise_rate >= 0.0) || !self.noise_rate.is_finite() {
            return bad("noise_rate must be a finite value >= 0");
        }
        if self.height == 0 || self.width == 0 || self.height > 65536 || self.width > 65536 {
            return bad("geometry must be within 1..=65536 per side");
        }
        if !(self.threshold > 0.0) || !(self.contrast > 0.0) || !(self.body_radius > 0.0) {
            return bad("threshold, contrast and body_radius must be positive");
        }
        if self.render_step_us == 0 {
            return bad("render_step_us must be positive");
        }
        for v in [self.speed, self.amplitude, self.frequency, self.jitter_amplitude, self.static_amplitude, self.position_jitter] {
            if !v.is_finite() || v < 0.0 {
                return bad("pattern parameters must be finite and >= 0");
            }
        }
        Ok(())
    }
}

/// Per-clip random draws that place and phase the pattern.
struct Pattern {
    cx0: f64,
    cy0: f64,
    phases: [f64; 4],
}

impl Pattern {
    /// Body center and radius at `t` seconds.
    fn body(&self, cfg: &SynthConfig, t: f64) -> (f64, f64, f64) {
        let (cx, cy, r) = (self.cx0, self.cy0, cfg.body_radius);
        let half = cfg.duration_us as f64 * 1e-6 / 2.0;
        let [p0, p1, p2, p3] = self.phases;
        match cfg.class {
            SynthClass::TranslateRight => (cx + cfg.speed * (t - half), cy, r),
            SynthClass::TranslateLeft => (cx - cfg.speed * (t - half), cy, r),
            SynthClass::OscillateVertical => (cx, cy + cfg.amplitude * (TAU * cfg.frequency * t + p0).sin(), r),
            SynthClass::LocalJitter => {
                let a = cfg.jitter_amplitude / 2.0;
                (
                    cx + a * ((TAU * 3.1 * t + p0).sin() + (TAU * 4.7 * t + p1).sin()),
                    cy + a * ((TAU * 3.7 * t + p2).sin() + (TAU * 5.3 * t + p3).sin()),
                    r,
                )
            }
            SynthClass::StaticBreathing => (cx, cy, r + cfg.static_amplitude * (TAU * 0.3 * t + p0).sin()),
            SynthClass::StaticSway => (cx + cfg.static_amplitude * (TAU * 0.25 * t + p0).sin(), cy, r),
        }
    }
}

/// Signal and noise events of one clip, each in generation order.
pub struct ClipParts {
    pub signal: Vec<Event>,
    pub noise: Vec<Event>,
}

fn log_intensity(cfg: &SynthConfig, x: f64, y: f64, body: (f64, f64, f64)) -> f64 {
    let (cx, cy, r) = body;
    let d = (x - cx).hypot(y - cy);
    let coverage = (r + 0.5 - d).clamp(0.0, 1.0);
    // Background intensity 1, body intensity `contrast`.
    (1.0 + (cfg.contrast - 1.0) * coverage).ln()
}

fn render_signal(cfg: &SynthConfig, pattern: &Pattern) -> Vec<Event> {
    let (h, w) = (cfg.height as usize, cfg.width as usize);
    let mut level = vec![0.0f64; h * w];
    let mut last = vec![0.0f64; h * w];
    let start = pattern.body(cfg, 0.0);
    for y in 0..h {
        for x in 0..w {
            let l = log_intensity(cfg, x as f64, y as f64, start);
            level[y * w + x] = l;
            last[y * w + x] = l;
        }
    }

    let mut events = Vec::new();
    let mut prev_body = start;
    let mut t_prev = 0u64;
    while t_prev < cfg.duration_us {
        let t = (t_prev + cfg.render_step_us).min(cfg.duration_us);
        let body = pattern.body(cfg, t as f64 * 1e-6);
        // Only pixels near the old or new disk can change.
        let reach = |b: (f64, f64, f64)| (b.0 - b.2 - 2.0, b.0 + b.2 + 2.0, b.1 - b.2 - 2.0, b.1 + b.2 + 2.0);
        let (a, b) = (reach(prev_body), reach(body));
        let x0 = a.0.min(b.0).floor().max(0.0) as usize;
        let x1 = (a.1.max(b.1).ceil().max(-1.0) as i64 + 1).clamp(0, w as i64) as usize;
        let y0 = a.2.min(b.2).floor().max(0.0) as usize;
        let y1 = (a.3.max(b.3).ceil().max(-1.0) as i64 + 1).clamp(0, h as i64) as usize;
        let step = (t - t_prev) as f64;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                let now = log_intensity(cfg, x as f64, y as f64, body);
                let before = last[i];
                last[i] = now;
                if now == before {
                    continue;
                }
                let mut emit = |lvl: f64, p: Polarity| {
                    let frac = ((lvl - before) / (now - before)).clamp(0.0, 1.0);
                    events.push(Event::new(t_prev + (frac * step).round() as u64, x as u16, y as u16, p));
                };
                while now - level[i] >= cfg.threshold {
                    level[i] += cfg.threshold;
                    emit(level[i], Polarity::Positive);
                }
                while level[i] - now >= cfg.threshold {
                    level[i] -= cfg.threshold;
                    emit(level[i], Polarity::Negative);
                }
            }
        }
        prev_body = body;
        t_prev = t;
    }
    events
}

fn sample_noise(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let mean = cfg.noise_rate * cfg.height as f64 * cfg.width as f64 * cfg.duration_us as f64 * 1e-6;
    if mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).expect("positive finite mean").sample(rng) as u64;
    (0..count)
        .map(|_| {
            let t = rng.random_range(0..cfg.duration_us);
            let x = rng.random_range(0..cfg.width) as u16;
            let y = rng.random_range(0..cfg.height) as u16;
            let p = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
            Event::new(t, x, y, p)
        })
        .collect()
}

pub fn generate_parts(cfg: &SynthConfig) -> Result<ClipParts, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let j = cfg.position_jitter;
    let mut offset = || if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let (ox, oy) = (offset(), offset());
    let pattern = Pattern {
        cx0: (cfg.width as f64 - 1.0) / 2.0 + ox,
        cy0: (cfg.height as f64 - 1.0) / 2.0 + oy,
        phases: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
    };
    let signal = render_signal(cfg, &pattern);
    let noise = sample_noise(cfg, &mut rng);
    Ok(ClipParts { signal, noise })
}

/// One labeled clip; the label is the class's position in `SynthClass::ALL`.
pub fn generate_clip(cfg: &SynthConfig) -> Result<Clip, SynthError> {
    let parts = generate_parts(cfg)?;
    let mut events = parts.signal;
    events.extend(parts.noise);
    let stream = EventStream::new(Geometry::new(cfg.height, cfg.width)?, events)?;
    Ok(Clip {
        stream,
        label: class_label(cfg.class),
        subject_id: format!("s{}", cfg.seed),
        config_id: "synth".into(),
    })
}

pub fn class_label(c: SynthClass) -> usize {
    SynthClass::ALL.iter().position(|&k| k == c).expect("class listed in ALL")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub classes: Vec<SynthClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    /// Shared clip parameters; `class` and `seed` are overridden per clip.
    pub clip: SynthConfig,
    /// Noise multiplier applied to the test split only.
    pub test_noise_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: SynthClass::ALL.to_vec(),
            train_per_class: 50,
            test_per_class: 20,
            train_seed: 0,
            test_seed: 1_000_000,
            clip: SynthConfig::default(),
            test_noise_scale: 1.0,
        }
    }
}

impl DatasetConfig {
    fn seed_range(&self, start: u64, per_class: usize) -> std::ops::Range<u64> {
        start..start + (per_class * self.classes.len()) as u64
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.clip.validate()?;
        if self.classes.is_empty() {
            return Err(SynthError::Config("at least one class is required".into()));
        }
        if !(self.test_noise_scale >= 0.0) || !self.test_noise_scale.is_finite() {
            return Err(SynthError::Config("test_noise_scale must be finite and >= 0".into()));
        }
        let a = self.seed_range(self.train_seed, self.train_per_class);
        let b = self.seed_range(self.test_seed, self.test_per_class);
        if !a.is_empty() && !b.is_empty() && a.start < b.end && b.start < a.end {
            return Err(SynthError::Config(format!(
                "train seeds {a:?} and test seeds {b:?} overlap"
            )));
        }
        Ok(())
    }

    /// Per-clip configs of one split, class-major.
    pub fn split_configs(&self, test: bool) -> Vec<SynthConfig> {
        let (start, per_class) = if test {
            (self.test_seed, self.test_per_class)
        } else {
            (self.train_seed, self.train_per_class)
        };
        let mut out = Vec::with_capacity(per_class * self.classes.len());
        for (ci, &class) in self.classes.iter().enumerate() {
            for i in 0..per_class {
                let mut c = self.clip.clone();
                c.class = class;
                c.seed = start + (ci * per_class + i) as u64;
                if test {
                    c.noise_rate *= self.test_noise_scale;
                }
                out.push(c);
            }
        }
        out
    }
}

/// Paths written by [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub classes: PathBuf,
}

/// `id,name,kind` for every class, in label order.
pub fn classes_csv(classes: &[SynthClass]) -> String {
    let mut out = String::from("id,name,kind\n");
    for &c in classes {
        let kind = if c.is_motion() { "motion" } else { "static" };
        out.push_str(&format!("{},{},{}\n", class_label(c), c.name(), kind));
    }
    out
}

/// Writes `train/`, `test/`, `train.csv`, `test.csv` and `classes.csv`
/// under `out`. Clips are generated in parallel and written in a fixed
/// order.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetFiles, SynthError> {
    cfg.validate()?;
    for split in ["train", "test"] {
        let dir = out.join(split);
        std::fs::create_dir_all(&dir)?;
        let configs = cfg.split_configs(split == "test");
        let entries = configs
            .par_iter()
            .map(|c| {
                let clip = generate_clip(c)?;
                let rel = PathBuf::from(split).join(format!("{}_{:07}.evs", c.class.name(), c.seed));
                write_stream(&out.join(&rel), &clip.stream, EventFormat::Binary)?;
                Ok(ManifestEntry {
                    path: rel,
                    label: clip.label,
                    subject_id: clip.subject_id,
                    config_id: clip.config_id,
                })
            })
            .collect::<Result<Vec<_>, SynthError>>()?;
        write_manifest(&out.join(format!("{split}.csv")), &entries)?;
    }
    write_atomic(&out.join("classes.csv"), classes_csv(&SynthClass::ALL).as_bytes())?;
    Ok(DatasetFiles {
        train_manifest: out.join("train.csv"),
        test_manifest: out.join("test.csv"),
        classes: out.join("classes.csv"),
    })
}
