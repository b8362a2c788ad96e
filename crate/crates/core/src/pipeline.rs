//! End-to-end plumbing shared by the command-line tool and the tests:
//! clip featurization, dataset loading, clip-level evaluation and
//! calibration per predictive method.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{ensemble_predict, posterior_predict, BayesError, Ensemble, EnsembleMode, GaussianPosterior, LinkApproximation};
use crate::calibration::{build_diagram, CalibrationError, CalibrationReport};
use crate::classifier::{ClassifierError, ClipRule, Samples, SoftmaxHead};
use crate::event::{crop_roi, parse_events, read_manifest, EventFormat, refractory_filter, time_surface_denoise, DenoiseParams, EventError, EventStream, RoiRect};
use crate::features::{FeatureError, FeatureSequence, FEATURE_MAGIC};
use crate::repr::{downsample, fill_undefined, DenseFrame, FrameBuilder, FrameFile, Pooling, ReprError, DEFAULT_DT_US, DEFAULT_T_M_US, FRAME_MAGIC};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("clip {clip}: {source}")]
    Clip {
        clip: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("classes file: {0}")]
    Classes(String),
    #[error("{0}")]
    Invalid(String),
}

/// Preprocessing and representation settings for the built-in features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameParams {
    pub dt: u64,
    pub t_m: u64,
    /// Value for cells with no event in the memory window.
    pub fill: f32,
    pub pool: usize,
    pub pooling: Pooling,
    pub refractory_us: Option<u64>,
    pub denoise: Option<DenoiseParams>,
    pub roi: Option<RoiRect>,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT_US,
            t_m: DEFAULT_T_M_US,
            fill: 0.0,
            pool: 8,
            pooling: Pooling::Max,
            refractory_us: None,
            denoise: None,
            roi: None,
        }
    }
}

impl FrameParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.dt == 0 || self.t_m == 0 || self.pool == 0 {
            return Err(PipelineError::Invalid("dt, t_m and pool must be positive".into()));
        }
        if !self.fill.is_finite() {
            return Err(PipelineError::Invalid("fill must be finite".into()));
        }
        Ok(())
    }

    /// Feature dimension for a stream of the given (pre-crop) size.
    pub fn feature_dim(&self, height: usize, width: usize) -> usize {
        let (h, w) = match self.roi {
            Some(r) => ((r.y1 - r.y0) as usize, (r.x1 - r.x0) as usize),
            None => (height, width),
        };
        h.div_ceil(self.pool) * w.div_ceil(self.pool) * 2
    }
}

/// ROI crop, refractory filter and denoiser, in that order, as configured.
pub fn preprocess(stream: &EventStream, p: &FrameParams) -> Result<EventStream, PipelineError> {
    let mut s = match p.roi {
        Some(r) => crop_roi(stream, r)?,
        None => stream.clone(),
    };
    if let Some(dt) = p.refractory_us {
        s = refractory_filter(&s, dt);
    }
    if let Some(d) = p.denoise {
        s = time_surface_denoise(&s, d)?;
    }
    Ok(s)
}

/// Event frames, filled and pooled, one feature vector per frame. Streams
/// too short for a single frame give an empty sequence.
pub fn clip_features(stream: &EventStream, p: &FrameParams) -> Result<FeatureSequence, PipelineError> {
    p.validate()?;
    let s = preprocess(stream, p)?;
    let g = s.geometry();
    let dim = p.feature_dim(g.height as usize, g.width as usize);
    let mut vectors = Vec::new();
    if s.len() >= 2 {
        match FrameBuilder::new(&s, p.dt, p.t_m) {
            Ok(builder) => {
                for frame in builder {
                    let dense = fill_undefined(&frame, p.fill)?;
                    vectors.extend_from_slice(&downsample(&dense, p.pool, p.pooling)?.data);
                }
            }
            Err(ReprError::DegenerateDuration(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(FeatureSequence::new(dim, vectors, "", None)?)
}

fn clip_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Frames from a frame file, undefined cells filled and pooled, flattened.
pub fn frame_file_features(file: &FrameFile, p: &FrameParams) -> Result<FeatureSequence, PipelineError> {
    p.validate()?;
    let Some((h, w, c)) = file.shape() else {
        return Err(PipelineError::Invalid("frame file holds no frames".into()));
    };
    let dim = h.div_ceil(p.pool) * w.div_ceil(p.pool) * c;
    let mut vectors = Vec::with_capacity(file.frames.len() * dim);
    for f in &file.frames {
        let data = f.data.iter().map(|&v| if v.is_nan() { p.fill } else { v }).collect();
        let dense = DenseFrame::from_vec(h, w, c, data)?;
        vectors.extend_from_slice(&downsample(&dense, p.pool, p.pooling)?.data);
    }
    Ok(FeatureSequence::new(dim, vectors, "", None)?)
}

/// Features for one manifest entry. The file may hold features (`FTR1`,
/// used as is), frames (`FRM1`, pooled) or events (featurized).
pub fn load_clip_features(path: &Path, p: &FrameParams) -> Result<FeatureSequence, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Event(e.into()))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        Ok(FeatureSequence::from_bytes(&bytes)?)
    } else if bytes.starts_with(FRAME_MAGIC) {
        frame_file_features(&FrameFile::from_bytes(&bytes)?, p)
    } else {
        clip_features(&parse_events(&bytes, EventFormat::detect(&bytes))?, p)
    }
}

/// Loads every clip of a manifest as a labeled feature sequence, in
/// manifest order. Entries may be event streams, frame files or feature
/// files.
pub fn featurize_manifest(manifest: &Path, p: &FrameParams) -> Result<Vec<FeatureSequence>, PipelineError> {
    p.validate()?;
    let entries = read_manifest(manifest)?;
    let seqs: Vec<FeatureSequence> = entries
        .par_iter()
        .map(|e| {
            let name = clip_name(&e.path);
            let mut seq = load_clip_features(&e.path, p).map_err(|source| PipelineError::Clip {
                clip: name.clone(),
                source: Box::new(source),
            })?;
            seq.clip_id = name;
            seq.label = Some(e.label);
            Ok(seq)
        })
        .collect::<Result<_, PipelineError>>()?;
    if let Some(first) = seqs.first() {
        if let Some(bad) = seqs.iter().find(|s| s.dim != first.dim) {
            return Err(PipelineError::Invalid(format!(
                "clip '{}' has feature dimension {} but '{}' has {}",
                bad.clip_id, bad.dim, first.clip_id, first.dim
            )));
        }
    }
    Ok(seqs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Motion,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: usize,
    pub name: String,
    pub kind: Option<ClassKind>,
}

/// Reads `id,name,kind` rows; `kind` is `motion`, `static` or empty.
pub fn read_classes(path: &Path) -> Result<Vec<ClassInfo>, PipelineError> {
    #[derive(Deserialize)]
    struct Row {
        id: usize,
        name: String,
        kind: Option<String>,
    }
    let err = |e: String| PipelineError::Classes(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let r = row.map_err(|e| err(e.to_string()))?;
        let kind = match r.kind.as_deref().map(str::trim) {
            Some("motion") => Some(ClassKind::Motion),
            Some("static") => Some(ClassKind::Static),
            None | Some("") => None,
            Some(other) => return Err(err(format!("unknown kind '{other}'"))),
        };
        out.push(ClassInfo { id: r.id, name: r.name, kind });
    }
    out.sort_by_key(|c| c.id);
    if out.iter().enumerate().any(|(i, c)| c.id != i) {
        return Err(err("class ids must be 0..K-1".into()));
    }
    Ok(out)
}

pub fn default_classes(k: usize) -> Vec<ClassInfo> {
    (0..k)
        .map(|id| ClassInfo {
            id,
            name: format!("class_{id}"),
            kind: None,
        })
        .collect()
}

/// A way of turning one feature vector into class probabilities.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// Point estimate.
    Map(SoftmaxHead),
    /// Single Laplace posterior through the bridge or probit link.
    Laplace(GaussianPosterior, LinkApproximation),
    /// Deep ensemble (point) or Laplace ensemble (bridge).
    Ensemble(Ensemble, EnsembleMode),
}

impl Predictor {
    pub fn classes(&self) -> usize {
        match self {
            Predictor::Map(h) => h.classes(),
            Predictor::Laplace(p, _) => p.head.classes(),
            Predictor::Ensemble(e, _) => e.members.first().map_or(0, SoftmaxHead::classes),
        }
    }

    pub fn predict(&self, f: &[f32]) -> Result<Vec<f64>, PipelineError> {
        Ok(match self {
            Predictor::Map(h) => h.predict(f)?,
            Predictor::Laplace(p, link) => posterior_predict(p, f, *link)?,
            Predictor::Ensemble(e, mode) => ensemble_predict(e, f, *mode)?,
        })
    }

    pub fn predict_sequence(&self, seq: &FeatureSequence) -> Result<Vec<Vec<f64>>, PipelineError> {
        seq.rows().map(|r| self.predict(r)).collect()
    }
}

/// Per-frame probabilities for every clip, in input order.
pub fn predict_all(pred: &Predictor, data: &[FeatureSequence]) -> Result<Vec<Vec<Vec<f64>>>, PipelineError> {
    data.par_iter().map(|s| pred.predict_sequence(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub id: usize,
    pub name: String,
    pub kind: Option<ClassKind>,
    pub clips: usize,
    pub acc_mode: f64,
    pub acc_accum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub clips: usize,
    pub acc_mode: f64,
    pub acc_accum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassRow>,
    pub motion: Option<Aggregate>,
    #[serde(rename = "static")]
    pub static_: Option<Aggregate>,
    /// Acc@1: mean of the per-class accuracies over classes with clips.
    pub overall: Aggregate,
    /// Clips without a single frame; they count as misclassified.
    pub empty_clips: Vec<String>,
}

fn aggregate<'a>(rows: impl Iterator<Item = &'a ClassRow>) -> Option<Aggregate> {
    let rows: Vec<&ClassRow> = rows.filter(|r| r.clips > 0).collect();
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(Aggregate {
        clips: rows.iter().map(|r| r.clips).sum(),
        acc_mode: rows.iter().map(|r| r.acc_mode).sum::<f64>() / n,
        acc_accum: rows.iter().map(|r| r.acc_accum).sum::<f64>() / n,
    })
}

/// Clip-level accuracy under both decision rules.
pub fn evaluate(probs: &[Vec<Vec<f64>>], data: &[FeatureSequence], classes: &[ClassInfo]) -> Result<EvalReport, PipelineError> {
    let k = classes.len();
    let mut hits_mode = vec![0usize; k];
    let mut hits_accum = vec![0usize; k];
    let mut totals = vec![0usize; k];
    let mut empty_clips = Vec::new();
    for (p, seq) in probs.iter().zip(data) {
        let label = seq
            .label
            .ok_or_else(|| PipelineError::Invalid(format!("clip '{}' has no label", seq.clip_id)))?;
        if label >= k {
            return Err(PipelineError::Invalid(format!("clip '{}' has label {label} but only {k} classes", seq.clip_id)));
        }
        totals[label] += 1;
        if p.is_empty() {
            empty_clips.push(seq.clip_id.clone());
            continue;
        }
        hits_mode[label] += (ClipRule::Mode.decide(p)? == label) as usize;
        hits_accum[label] += (ClipRule::Accumulated.decide(p)? == label) as usize;
    }
    let ratio = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    let rows: Vec<ClassRow> = classes
        .iter()
        .map(|c| ClassRow {
            id: c.id,
            name: c.name.clone(),
            kind: c.kind,
            clips: totals[c.id],
            acc_mode: ratio(hits_mode[c.id], totals[c.id]),
            acc_accum: ratio(hits_accum[c.id], totals[c.id]),
        })
        .collect();
    let overall = aggregate(rows.iter()).ok_or_else(|| PipelineError::Invalid("no evaluation clips".into()))?;
    Ok(EvalReport {
        motion: aggregate(rows.iter().filter(|r| r.kind == Some(ClassKind::Motion))),
        static_: aggregate(rows.iter().filter(|r| r.kind == Some(ClassKind::Static))),
        overall,
        classes: rows,
        empty_clips,
    })
}

impl EvalReport {
    /// Per-class accuracy, then the Motion / Static aggregates and the
    /// overall Acc@1, with both clip rules side by side.
    pub fn table(&self) -> String {
        self.table_for(true, true)
    }

    /// [`EvalReport::table`] restricted to the selected clip rules.
    pub fn table_for(&self, mode: bool, accum: bool) -> String {
        let width = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(0).max(16);
        let mut s = format!("{:<width$}  {:>5}", "label", "clips");
        if mode {
            s.push_str(&format!("  {:>6}", "mode"));
        }
        if accum {
            s.push_str(&format!("  {:>6}", "prob"));
        }
        s.push('\n');
        let line = |s: &mut String, name: &str, clips: usize, m: f64, a: f64| {
            s.push_str(&format!("{name:<width$}  {clips:>5}"));
            if mode {
                s.push_str(&format!("  {m:>6.3}"));
            }
            if accum {
                s.push_str(&format!("  {a:>6.3}"));
            }
            s.push('\n');
        };
        for c in &self.classes {
            line(&mut s, &c.name, c.clips, c.acc_mode, c.acc_accum);
        }
        s.push_str(&"-".repeat(width + 7 + 8 * (mode as usize + accum as usize)));
        s.push('\n');
        if let Some(m) = self.motion {
            line(&mut s, "Acc@1 motion", m.clips, m.acc_mode, m.acc_accum);
        }
        if let Some(m) = self.static_ {
            line(&mut s, "Acc@1 static", m.clips, m.acc_mode, m.acc_accum);
        }
        line(&mut s, "Acc@1", self.overall.clips, self.overall.acc_mode, self.overall.acc_accum);
        if !self.empty_clips.is_empty() {
            s.push_str(&format!("clips without frames (counted wrong): {}\n", self.empty_clips.join(", ")));
        }
        s
    }

    /// Flat CSV: `label,kind,clips,acc_mode,acc_accum`.
    pub fn csv(&self) -> String {
        let mut s = String::from("label,kind,clips,acc_mode,acc_accum\n");
        let kind = |k: Option<ClassKind>| match k {
            Some(ClassKind::Motion) => "motion",
            Some(ClassKind::Static) => "static",
            None => "",
        };
        for c in &self.classes {
            s.push_str(&format!("{},{},{},{:.6},{:.6}\n", c.name, kind(c.kind), c.clips, c.acc_mode, c.acc_accum));
        }
        for (name, a) in [("motion", self.motion), ("static", self.static_), ("overall", Some(self.overall))] {
            if let Some(a) = a {
                s.push_str(&format!("{name},,{},{:.6},{:.6}\n", a.clips, a.acc_mode, a.acc_accum));
            }
        }
        s
    }
}

/// Reliability diagram over every frame's prediction.
pub fn calibration_report(probs: &[Vec<Vec<f64>>], data: &[FeatureSequence], bins: usize) -> Result<CalibrationReport, PipelineError> {
    let mut preds = Vec::new();
    for (p, seq) in probs.iter().zip(data) {
        let label = seq
            .label
            .ok_or_else(|| PipelineError::Invalid(format!("clip '{}' has no label", seq.clip_id)))?;
        preds.extend(p.iter().map(|v| (v.clone(), label)));
    }
    Ok(CalibrationReport::new(build_diagram(&preds, bins)?)?)
}

/// All frames of all sequences as one training matrix.
pub fn to_samples(data: &[FeatureSequence]) -> Result<Samples, PipelineError> {
    Ok(Samples::from_sequences(data)?)
}
