use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use evact::bayes::{
    fit_ensemble_posteriors, fit_laplace, load_ensemble, save_ensemble, train_ensemble, CovarianceMode, EnsembleMode,
    GaussianPosterior, LaplaceConfig, LinkApproximation,
};
use evact::blob::{extract_features, track, BlobTrackerConfig};
use evact::calibration::render_diagram;
use evact::classifier::{train_samples, training_log_csv, ClassWeights, SoftmaxHead, TrainConfig};
use evact::event::{
    read_manifest, read_stream, write_manifest, write_stream, DenoiseParams, Event, EventFormat, EventStream, Geometry,
    ManifestEntry, Polarity, RoiRect,
};
use evact::features::{write_features, FeatureSequence};
use evact::fsutil::write_atomic;
use evact::pipeline::{
    calibration_report, default_classes, evaluate, featurize_manifest, load_clip_features, predict_all,
    preprocess, read_classes, ClassInfo, EvalReport, FrameParams, Predictor,
};
use evact::repr::{
    build_frames, build_voxel_grid, write_frame_file, FrameBuilder, FrameFile, Pooling, DEFAULT_BINS, DEFAULT_DT_US,
    DEFAULT_T_M_US,
};
use evact::synth::{generate_dataset, DatasetConfig};

use crate::args::*;
use crate::error::{invalid, need, CliError};

type Result<T> = std::result::Result<T, CliError>;

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required (flag or config key '{flag}')")))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn parse_roi(s: &str) -> Result<RoiRect> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Config(format!("roi '{s}' must be four integers x0,y0,x1,y1")))?;
    match parts[..] {
        [x0, y0, x1, y1] if x0 < x1 && y0 < y1 => Ok(RoiRect::new(x0, y0, x1, y1)),
        _ => Err(CliError::Config(format!("roi '{s}' must be x0,y0,x1,y1 with x0 < x1 and y0 < y1"))),
    }
}

fn frame_params(pre: &PreArgs, frame: &FrameArgs, feature: Option<&FeatureArgs>) -> Result<FrameParams> {
    let denoise = DenoiseParams::default();
    let mut p = FrameParams {
        dt: frame.dt_us.unwrap_or(DEFAULT_DT_US),
        t_m: frame.t_m_us.unwrap_or(DEFAULT_T_M_US),
        refractory_us: pre.refractory_us,
        denoise: pre.denoise.then(|| DenoiseParams {
            tau_d: pre.tau_d_us.unwrap_or(denoise.tau_d),
            k_min: pre.k_min.unwrap_or(denoise.k_min),
        }),
        roi: pre.roi.as_deref().map(parse_roi).transpose()?,
        ..Default::default()
    };
    if let Some(f) = feature {
        p.fill = f.fill.unwrap_or(p.fill);
        p.pool = f.pool.unwrap_or(p.pool);
        p.pooling = match f.pooling {
            Some(PoolingArg::Mean) => Pooling::Mean,
            Some(PoolingArg::Max) | None => Pooling::Max,
        };
        if !(0.0..=1.0).contains(&p.fill) {
            return Err(CliError::Config(format!("fill {} must lie in [0, 1]", p.fill)));
        }
    }
    if p.refractory_us == Some(0) {
        return Err(CliError::Config("refractory-us must be positive".into()));
    }
    if let Some(d) = p.denoise {
        if d.tau_d == 0 || d.k_min == 0 {
            return Err(CliError::Config("denoiser needs tau-d-us > 0 and k-min >= 1".into()));
        }
    }
    p.validate().map_err(invalid)?;
    Ok(p)
}

fn read_input(path: &Path, p: &FrameParams) -> Result<EventStream> {
    need(path)?;
    let s = read_stream(path)?;
    if let Some(r) = p.roi {
        r.validate(s.geometry()).map_err(invalid)?;
    }
    Ok(preprocess(&s, p)?)
}

/// Single-file or manifest mode; in manifest mode `produce` runs per clip in
/// parallel and a manifest of the outputs is written in input order.
fn for_each_input<F>(io: &IoArgs, ext: &str, produce: F) -> Result<serde_json::Value>
where
    F: Fn(&Path, &Path) -> Result<serde_json::Value> + Sync,
{
    match (&io.input, &io.manifest) {
        (Some(input), None) => {
            let output = required(&io.output, "output")?;
            produce(input, output)
        }
        (None, Some(manifest)) => {
            need(manifest)?;
            let out_dir = required(&io.out_dir, "out-dir")?;
            std::fs::create_dir_all(out_dir)?;
            let entries = read_manifest(manifest)?;
            for e in &entries {
                need(&e.path)?;
            }
            let outputs: Vec<ManifestEntry> = entries
                .par_iter()
                .map(|e| {
                    let stem = e.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    let name = PathBuf::from(format!("{stem}.{ext}"));
                    produce(&e.path, &out_dir.join(&name))
                        .map_err(|err| CliError::Failed(format!("clip '{stem}': {err}")))?;
                    Ok(ManifestEntry { path: name, ..e.clone() })
                })
                .collect::<Result<_>>()?;
            let m = out_dir.join("manifest.csv");
            write_manifest(&m, &outputs)?;
            Ok(json!({ "clips": outputs.len(), "manifest": m.display().to_string() }))
        }
        (Some(_), Some(_)) => Err(CliError::Usage("use either --input or --manifest, not both".into())),
        (None, None) => Err(CliError::Usage("--input or --manifest is required".into())),
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let mut cfg = DatasetConfig::default();
    let c = &mut cfg.clip;
    c.noise_rate = a.noise_rate.unwrap_or(c.noise_rate);
    c.duration_us = a.duration_us.unwrap_or(c.duration_us);
    c.height = a.height.unwrap_or(c.height);
    c.width = a.width.unwrap_or(c.width);
    c.speed = a.speed.unwrap_or(c.speed);
    c.body_radius = a.body_radius.unwrap_or(c.body_radius);
    c.threshold = a.threshold.unwrap_or(c.threshold);
    cfg.train_per_class = a.train_per_class.unwrap_or(cfg.train_per_class);
    cfg.test_per_class = a.test_per_class.unwrap_or(cfg.test_per_class);
    cfg.train_seed = a.train_seed.unwrap_or(cfg.train_seed);
    cfg.test_seed = a.test_seed.unwrap_or(cfg.test_seed);
    cfg.test_noise_scale = a.test_noise_scale.unwrap_or(cfg.test_noise_scale);
    cfg.validate().map_err(invalid)?;
    let files = generate_dataset(&cfg, out)?;
    print_json(&json!({
        "train_manifest": files.train_manifest.display().to_string(),
        "test_manifest": files.test_manifest.display().to_string(),
        "classes": files.classes.display().to_string(),
        "train_clips": cfg.train_per_class * cfg.classes.len(),
        "test_clips": cfg.test_per_class * cfg.classes.len(),
    }));
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let input = required(&a.input, "input")?;
    let output = required(&a.output, "output")?;
    let p = frame_params(&a.pre, &FrameArgs::default(), None)?;
    need(input)?;
    let raw = read_stream(input)?;
    let s = read_input(input, &p)?;
    let format = match a.format {
        Some(FormatArg::Csv) => EventFormat::Csv,
        Some(FormatArg::Binary) => EventFormat::Binary,
        None if output.extension().is_some_and(|e| e == "csv") => EventFormat::Csv,
        None => EventFormat::Binary,
    };
    write_stream(output, &s, format)?;
    let g = s.geometry();
    print_json(&json!({
        "events_in": raw.len(),
        "events_out": s.len(),
        "height": g.height,
        "width": g.width,
    }));
    Ok(())
}

pub fn frames(a: &FramesArgs) -> Result<()> {
    let p = frame_params(&a.pre, &a.frame, None)?;
    if let Some(f) = a.fill {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Config(format!("fill {f} must lie in [0, 1]")));
        }
    }
    let summary = for_each_input(&a.io, "frm", |input, output| {
        let s = read_input(input, &p)?;
        let frames = build_frames(&s, p.dt, p.t_m)?;
        let t0 = s.first_t().unwrap_or(0);
        let file = FrameFile::from_event_frames(&frames, t0, p.dt, a.fill)?;
        write_frame_file(output, &file)?;
        Ok(json!({ "frames": frames.len(), "output": output.display().to_string() }))
    })?;
    print_json(&summary);
    Ok(())
}

pub fn voxel(a: &VoxelArgs) -> Result<()> {
    let p = frame_params(&a.pre, &FrameArgs::default(), None)?;
    let bins = a.bins.unwrap_or(DEFAULT_BINS);
    if bins < 2 {
        return Err(CliError::Config("bins must be >= 2".into()));
    }
    let summary = for_each_input(&a.io, "frm", |input, output| {
        let s = read_input(input, &p)?;
        let grid = build_voxel_grid(&s, bins)?;
        write_frame_file(output, &FrameFile::from_voxel_grid(&grid))?;
        Ok(json!({ "bins": bins, "total": grid.total(), "output": output.display().to_string() }))
    })?;
    print_json(&summary);
    Ok(())
}

pub fn blobs(a: &BlobsArgs) -> Result<()> {
    let p = frame_params(&a.pre, &FrameArgs::default(), None)?;
    let d = BlobTrackerConfig::default();
    let cfg = BlobTrackerConfig {
        alpha: a.alpha.unwrap_or(d.alpha),
        r_min: a.r_min.unwrap_or(d.r_min),
        n_samples: a.n_samples.unwrap_or(d.n_samples),
        w_min: a.w_min.unwrap_or(d.w_min),
        tau_w: a.tau_w_us.unwrap_or(d.tau_w),
    };
    cfg.validate().map_err(invalid)?;
    let summary = for_each_input(&a.io, "ftr", |input, output| {
        let s = read_input(input, &p)?;
        let blobs = track(&s, &cfg)?;
        let mut vectors = Vec::with_capacity(blobs.len() * 5 * cfg.n_samples);
        for b in &blobs {
            vectors.extend(extract_features(b, &cfg)?.values.iter().map(|&v| v as f32));
        }
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_features(output, &FeatureSequence::new(5 * cfg.n_samples, vectors, stem, None)?)?;
        Ok(json!({
            "blobs": blobs.len(),
            "events_assigned": blobs.iter().map(|b| b.assigned).sum::<usize>(),
            "output": output.display().to_string(),
        }))
    })?;
    print_json(&summary);
    Ok(())
}

pub fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let p = frame_params(&a.pre, &a.frame, Some(&a.feature))?;
    let summary = for_each_input(&a.io, "ftr", |input, output| {
        need(input)?;
        let mut seq = load_clip_features(input, &p)?;
        seq.clip_id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_features(output, &seq)?;
        Ok(json!({ "frames": seq.count(), "dim": seq.dim, "output": output.display().to_string() }))
    })?;
    print_json(&summary);
    Ok(())
}

/// Settings stored next to a trained model so later stages featurize test
/// clips exactly like the training clips.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainRecord {
    frame_params: FrameParams,
    train: TrainConfig,
    laplace: Option<LaplaceConfig>,
    ensemble: Option<usize>,
    classes: Vec<ClassInfo>,
    frames: usize,
    clips: usize,
}

fn classes_for(explicit: Option<&PathBuf>, manifest: &Path, labels: &[FeatureSequence]) -> Result<Vec<ClassInfo>> {
    let beside = manifest.parent().map(|d| d.join("classes.csv"));
    match explicit {
        Some(p) => {
            need(p)?;
            Ok(read_classes(p)?)
        }
        None => match beside.filter(|p| p.exists()) {
            Some(p) => Ok(read_classes(&p)?),
            None => {
                let k = labels.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1);
                Ok(default_classes(k))
            }
        },
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let p = frame_params(&a.pre, &a.frame, Some(&a.feature))?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        weight_decay: a.weight_decay.unwrap_or(d.weight_decay),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: a.seed.unwrap_or(d.seed),
        class_weights: match a.class_weights {
            Some(WeightsArg::Balanced) => ClassWeights::Balanced,
            _ => ClassWeights::Uniform,
        },
        ..d
    };
    cfg.validate().map_err(invalid)?;
    let laplace = a.laplace.then(|| LaplaceConfig {
        prior_precision: a.prior_precision.unwrap_or(1.0),
        mode: match a.covariance {
            Some(CovarianceArg::Full) => CovarianceMode::Full,
            Some(CovarianceArg::Diagonal) => CovarianceMode::Diagonal,
            _ => CovarianceMode::Auto,
        },
        ..Default::default()
    });
    if let Some(l) = laplace {
        if !(l.prior_precision > 0.0) || !l.prior_precision.is_finite() {
            return Err(CliError::Config("prior-precision must be positive".into()));
        }
    }
    if a.ensemble == Some(0) {
        return Err(CliError::Config("ensemble size must be >= 1".into()));
    }
    need(manifest)?;

    let data = featurize_manifest(manifest, &p)?;
    let classes = classes_for(a.classes.as_ref(), manifest, &data)?;
    let k = classes.len();
    if let Some(bad) = data.iter().find(|s| s.label.is_some_and(|l| l >= k)) {
        return Err(CliError::Failed(format!("clip '{}' has a label outside the {k} classes", bad.clip_id)));
    }
    let samples = evact::pipeline::to_samples(&data)?;
    let outcome = train_samples(&samples, k, &cfg, None)?;
    std::fs::create_dir_all(out)?;
    outcome.head.save(&out.join("model.bin"))?;
    write_atomic(&out.join("train_log.csv"), training_log_csv(&outcome.log).as_bytes())?;
    if let Some(l) = &laplace {
        fit_laplace(&outcome.head, &samples, l)?.save(&out.join("posterior.bin"))?;
    }
    if let Some(s) = a.ensemble {
        let mut ens = train_ensemble(&samples, k, &cfg, s, cfg.seed.wrapping_add(1), true)?;
        if let Some(l) = &laplace {
            fit_ensemble_posteriors(&mut ens, &samples, l, true)?;
        }
        save_ensemble(&ens, &out.join("ensemble"))?;
    }
    let record = TrainRecord {
        frame_params: p,
        train: cfg,
        laplace,
        ensemble: a.ensemble,
        classes,
        frames: samples.len(),
        clips: data.len(),
    };
    write_atomic(&out.join("train.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    let last = outcome.log.last();
    print_json(&json!({
        "clips": data.len(),
        "frames": samples.len(),
        "dim": samples.dim,
        "classes": k,
        "final_loss": last.map(|l| l.loss),
        "train_accuracy": samples.accuracy(&outcome.head),
        "out": out.display().to_string(),
    }));
    Ok(())
}

struct Loaded {
    record: TrainRecord,
    dir: PathBuf,
}

fn load_model_dir(dir: &Path) -> Result<Loaded> {
    let path = dir.join("train.json");
    need(&path)?;
    let record: TrainRecord = serde_json::from_slice(&std::fs::read(&path)?)
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    Ok(Loaded { record, dir: dir.to_path_buf() })
}

impl Loaded {
    fn available(&self) -> Vec<MethodArg> {
        let mut m = vec![MethodArg::Map];
        if self.dir.join("posterior.bin").exists() {
            m.push(MethodArg::Laplace);
        }
        if self.dir.join("ensemble").join("ensemble.json").exists() {
            m.push(MethodArg::Ensemble);
            if self.record.laplace.is_some() {
                m.push(MethodArg::LaplaceEnsemble);
            }
        }
        m
    }

    fn predictor(&self, method: MethodArg, link: LinkApproximation) -> Result<Predictor> {
        let missing = |what: &str| {
            CliError::MissingFile(format!(
                "{} has no {what}; retrain with the matching flags",
                self.dir.display()
            ))
        };
        let ensemble = || {
            let d = self.dir.join("ensemble");
            if !d.join("ensemble.json").exists() {
                return Err(missing("ensemble (--ensemble S)"));
            }
            Ok(load_ensemble(&d)?)
        };
        Ok(match method {
            MethodArg::Map => {
                let p = self.dir.join("model.bin");
                need(&p)?;
                Predictor::Map(SoftmaxHead::load(&p)?)
            }
            MethodArg::Laplace => {
                let p = self.dir.join("posterior.bin");
                if !p.exists() {
                    return Err(missing("posterior (--laplace)"));
                }
                Predictor::Laplace(GaussianPosterior::load(&p)?, link)
            }
            MethodArg::Ensemble => Predictor::Ensemble(ensemble()?, EnsembleMode::Point),
            MethodArg::LaplaceEnsemble => {
                let e = ensemble()?;
                if e.posteriors.is_none() {
                    return Err(missing("ensemble posteriors (--ensemble S --laplace)"));
                }
                Predictor::Ensemble(e, EnsembleMode::Bridge)
            }
        })
    }
}

fn link_of(l: Option<LinkArg>) -> LinkApproximation {
    match l {
        Some(LinkArg::Probit) => LinkApproximation::Probit,
        _ => LinkApproximation::Bridge,
    }
}

fn test_data(manifest: &Path, model: &Loaded) -> Result<Vec<FeatureSequence>> {
    need(manifest)?;
    let data = featurize_manifest(manifest, &model.record.frame_params)?;
    let k = model.record.classes.len();
    if let Some(bad) = data.iter().find(|s| s.label.is_some_and(|l| l >= k)) {
        return Err(CliError::Failed(format!("clip '{}' has a label outside the {k} classes", bad.clip_id)));
    }
    Ok(data)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let model = load_model_dir(required(&a.model_dir, "model-dir")?)?;
    let method = a.method.unwrap_or(MethodArg::Map);
    let classes = match &a.classes {
        Some(p) => {
            need(p)?;
            read_classes(p)?
        }
        None => model.record.classes.clone(),
    };
    let pred = model.predictor(method, link_of(a.link))?;
    let data = test_data(manifest, &model)?;
    let probs = predict_all(&pred, &data)?;
    let report = evaluate(&probs, &data, &classes)?;
    let rule = a.clip_rule.unwrap_or(ClipRuleArg::Both);
    println!("method: {}", method.name());
    print!("{}", report.table_for(rule != ClipRuleArg::Accum, rule != ClipRuleArg::Mode));
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        let stem = format!("eval_{}", method.name());
        let body = json!({ "method": method.name(), "report": report });
        write_atomic(&out.join(format!("{stem}.json")), serde_json::to_string_pretty(&body)?.as_bytes())?;
        write_atomic(&out.join(format!("{stem}.csv")), report.csv().as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationRow {
    method: String,
    ace: f64,
    mce: f64,
    bins: usize,
    non_empty_bins: usize,
    frames: usize,
    acc_mode: f64,
    acc_accum: f64,
    diagram: String,
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let model = load_model_dir(required(&a.model_dir, "model-dir")?)?;
    let bins = a.bins.unwrap_or(10);
    if bins == 0 {
        return Err(CliError::Config("bins must be >= 1".into()));
    }
    let methods = a.method.clone().unwrap_or_else(|| model.available());
    let link = link_of(a.link);
    let preds = methods
        .iter()
        .map(|&m| model.predictor(m, link))
        .collect::<Result<Vec<_>>>()?;
    let data = test_data(manifest, &model)?;
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for (&m, pred) in methods.iter().zip(&preds) {
        let probs = predict_all(pred, &data)?;
        let acc: EvalReport = evaluate(&probs, &data, &model.record.classes)?;
        let report = calibration_report(&probs, &data, bins)?;
        let stem = out.join(format!("calibration_{}", m.name()));
        let rendered = render_diagram(&report.diagram, &stem, m.name())?;
        println!(
            "{:<18} ACE {:.4}  MCE {:.4}  Acc@1 mode {:.3}  prob {:.3}",
            m.name(),
            rendered.ace,
            rendered.mce,
            acc.overall.acc_mode,
            acc.overall.acc_accum
        );
        rows.push(CalibrationRow {
            method: m.name().to_string(),
            ace: rendered.ace,
            mce: rendered.mce,
            bins,
            non_empty_bins: rendered.m_plus,
            frames: rendered.diagram.total(),
            acc_mode: acc.overall.acc_mode,
            acc_accum: acc.overall.acc_accum,
            diagram: rendered.diagram_path.unwrap_or_default(),
        });
    }
    write_atomic(&out.join("calibration.json"), serde_json::to_string_pretty(&rows)?.as_bytes())?;
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let dir = required(&a.dir, "dir")?;
    need(dir)?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("eval_") && n.ends_with(".json"))
        })
        .collect();
    names.sort();
    let mut md = String::from("# Evaluation summary\n");
    for p in &names {
        #[derive(Deserialize)]
        struct Body {
            method: String,
            report: EvalReport,
        }
        let b: Body = serde_json::from_slice(&std::fs::read(p)?)
            .map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?;
        md.push_str(&format!("\n## Accuracy ({})\n\n```\n{}```\n", b.method, b.report.table()));
    }
    let cal = dir.join("calibration.json");
    let mut found = !names.is_empty();
    if cal.exists() {
        found = true;
        let rows: Vec<CalibrationRow> = serde_json::from_slice(&std::fs::read(&cal)?)
            .map_err(|e| CliError::Failed(format!("{}: {e}", cal.display())))?;
        md.push_str("\n## Calibration\n\n| method | Acc@1 mode | Acc@1 prob | ACE | MCE | diagram |\n|---|---|---|---|---|---|\n");
        for r in &rows {
            md.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.4} | {:.4} | {} |\n",
                r.method, r.acc_mode, r.acc_accum, r.ace, r.mce, r.diagram
            ));
        }
    }
    if !found {
        return Err(CliError::MissingFile(format!(
            "{} holds no eval_*.json or calibration.json",
            dir.display()
        )));
    }
    let output = a.output.clone().unwrap_or_else(|| dir.join("report.md"));
    write_atomic(&output, md.as_bytes())?;
    print!("{md}");
    Ok(())
}

/// Uniformly random events, sorted by time.
pub fn bench_stream(events: usize, duration: u64, height: u32, width: u32, seed: u64) -> Result<EventStream> {
    let g = Geometry::new(height, width).map_err(invalid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts: Vec<u64> = (0..events).map(|_| rng.random_range(0..=duration)).collect();
    ts.sort_unstable();
    let evs = ts
        .into_iter()
        .map(|t| {
            let x = rng.random_range(0..width) as u16;
            let y = rng.random_range(0..height) as u16;
            let p = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
            Event::new(t, x, y, p)
        })
        .collect();
    Ok(EventStream::new(g, evs)?)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let events = a.events.unwrap_or(2_000_000);
    let duration = a.duration_us.unwrap_or(10_000_000);
    let repeats = a.repeats.unwrap_or(3);
    let dt = a.frame.dt_us.unwrap_or(DEFAULT_DT_US);
    let t_m = a.frame.t_m_us.unwrap_or(DEFAULT_T_M_US);
    if events < 2 || duration == 0 || repeats == 0 || dt == 0 || t_m == 0 {
        return Err(CliError::Config("events >= 2 and positive duration, repeats, dt and t_m are required".into()));
    }
    let s = bench_stream(events, duration, a.height.unwrap_or(180), a.width.unwrap_or(250), a.seed.unwrap_or(0))?;
    let mut best = f64::INFINITY;
    let mut frames = 0;
    for _ in 0..repeats {
        let start = Instant::now();
        frames = FrameBuilder::new(&s, dt, t_m)?.count();
        best = best.min(start.elapsed().as_secs_f64());
    }
    let g = s.geometry();
    print_json(&json!({
        "events": s.len(),
        "frames": frames,
        "height": g.height,
        "width": g.width,
        "seconds": best,
        "events_per_second": s.len() as f64 / best,
    }));
    Ok(())
}
