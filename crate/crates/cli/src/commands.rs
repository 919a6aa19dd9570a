use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use patchtst_har::augment::{apply, draw_tagged, AugPolicy, AugTag};
use patchtst_har::calibrate::fit_temperature;
use patchtst_har::checkpoint::Checkpoint;
use patchtst_har::dataset::{
    make_folds, make_holdout_folds, read_streams, read_windows, segment as segment_stream, subjects_of,
    synth_dataset, synth_sensors, write_windows, Sensor, SynthConfig, Window,
};
use patchtst_har::ensemble::{
    confusion_with, dropout_csv, predict_labels, predictions_csv, sensor_dropout_sweep, truth_by_id, ModelBank,
};
use patchtst_har::normalize::Signal;
use patchtst_har::rng::substream;
use patchtst_har::train::{train_fold, write_metrics_csv};
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::meta::write_sidecar;
use crate::{AugDemoArgs, CalibrateArgs, CliError, DropoutArgs, EvaluateArgs, PredictArgs, SegmentArgs, SynthArgs, TrainArgs};

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display()))),
        None => Ok(()),
    }
}

/// Reads window files; a directory stands for its `*.jsonl` files in name order.
fn load_windows(paths: &[PathBuf]) -> Result<Vec<Window>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| CliError::Runtime(format!("cannot list {}: {e}", p.display())))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            for f in files {
                all.extend(read_windows(f)?);
            }
        } else {
            all.extend(read_windows(p)?);
        }
    }
    Ok(all)
}

fn load_bank(paths: &[PathBuf]) -> Result<ModelBank<f32>, CliError> {
    let mut bank = ModelBank::new();
    for p in paths {
        let model = Checkpoint::load(p)?.trained_model::<f32>()?;
        if bank.get(model.sensor, model.stream).is_some() {
            return Err(CliError::Usage(format!(
                "{}: a {} {} model was already given",
                p.display(),
                model.sensor,
                model.stream
            )));
        }
        info!("loaded {} {} model from {}", model.sensor, model.stream, p.display());
        bank.insert(model);
    }
    Ok(bank)
}

/// `models/la.json` -> `models/la.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_subjects: a.subjects,
        ..SynthConfig::new(a.classes, a.per_class, a.noise, a.seed)
    };
    let sensors: Vec<(Sensor, f64)> = Sensor::ALL.iter().map(|&s| (s, a.noise)).collect();
    let windows = synth_sensors(&cfg, &sensors).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", a.out.display())))?;
    for s in Sensor::ALL {
        let path = a.out.join(format!("{s}.jsonl"));
        let mine: Vec<Window> = windows.iter().filter(|w| w.sensor == s).cloned().collect();
        write_windows(&mine, &path)?;
        write_sidecar(&path, "synth", Some(a.seed), &cfg, &[])?;
        println!("wrote {} windows to {}", mine.len(), path.display());
    }
    Ok(())
}

pub fn segment(a: SegmentArgs) -> Result<(), CliError> {
    if a.window == 0 || a.stride == 0 {
        return Err(CliError::Usage("--window and --stride must be at least 1".into()));
    }
    let streams = read_streams(&a.streams)?;
    let mut windows = Vec::new();
    for s in &streams {
        let cut = segment_stream(s, a.window, a.stride)?;
        if cut.is_empty() {
            warn!("stream {} {} has {} samples, shorter than one window", s.subject, s.sensor, s.samples.len());
        }
        windows.extend(cut);
    }
    ensure_parent(&a.out)?;
    write_windows(&windows, &a.out)?;
    let cfg = json!({"window": a.window, "stride": a.stride});
    write_sidecar(&a.out, "segment", None, &cfg, std::slice::from_ref(&a.streams))?;
    println!("wrote {} windows from {} streams to {}", windows.len(), streams.len(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(k) = a.folds {
        cfg.folds.k = k;
    }
    if let Some(f) = a.fold {
        cfg.folds.fold = Some(f);
    }
    if a.no_validation {
        cfg.folds.fold = None;
    }
    if let Some(n) = a.norm {
        cfg.norm = n;
    }
    if let Some(p) = &a.aug {
        cfg.aug_preset = p.clone();
    }
    if let Some(c) = a.classes {
        cfg.model.n_classes = c;
    }
    cfg.validate()?;

    let windows: Vec<Window> = load_windows(&a.data)?.into_iter().filter(|w| w.sensor == a.sensor).collect();
    if windows.is_empty() {
        return Err(CliError::Runtime(format!("no {} windows in the given data", a.sensor)));
    }
    let (train, val, held_out) = match cfg.folds.fold {
        None => (windows, Vec::new(), Vec::new()),
        Some(f) => {
            let subjects = subjects_of(&windows);
            let folds = match cfg.folds.per_fold {
                Some(n) => make_holdout_folds(&subjects, cfg.folds.k, n, cfg.seed)?,
                None => make_folds(&subjects, cfg.folds.k, cfg.seed)?,
            };
            let split = &folds[f];
            let (t, v) = split.split(&windows);
            let t: Vec<Window> = t.into_iter().cloned().collect();
            let v: Vec<Window> = v.into_iter().cloned().collect();
            (t, v, split.held_out.clone())
        }
    };
    info!(
        "training {} {} on {} windows, validating on {} ({} held-out subjects)",
        a.sensor,
        a.stream,
        train.len(),
        val.len(),
        held_out.len()
    );
    let train_cfg = cfg.train_config();
    let report = train_fold::<f32>(&train, &val, &cfg.model, &train_cfg, &cfg.policy()?, a.stream, cfg.norm)?;

    let finish = |params, epoch| {
        let mut ck = Checkpoint::new(a.sensor, a.stream, &cfg.model, params, report.normalization.clone());
        ck.aug_preset = Some(cfg.aug_preset.clone());
        ck.train = Some(train_cfg.clone());
        ck.held_out_subjects = held_out.clone();
        ck.epoch = Some(epoch);
        ck
    };
    let run_meta = json!({"run": &cfg, "sensor": a.sensor, "stream": a.stream});
    ensure_parent(&a.out)?;
    finish(&report.params, train_cfg.epochs - 1).save(&a.out)?;
    write_sidecar(&a.out, "train", Some(cfg.seed), &run_meta, &a.data)?;

    let metrics = sibling(&a.out, "metrics.csv");
    write_metrics_csv(&report.history, &metrics)?;
    write_sidecar(&metrics, "train", Some(cfg.seed), &run_meta, &a.data)?;

    let last = report.history.last().expect("at least one epoch");
    println!("{} {}: final train loss {:.4}", a.sensor, a.stream, last.train_loss);
    if let Some(best) = &report.best {
        let path = sibling(&a.out, "best.json");
        finish(&best.params, best.epoch).save(&path)?;
        write_sidecar(&path, "train", Some(cfg.seed), &run_meta, &a.data)?;
        println!(
            "best validation macro-F1 {:.4} at epoch {} -> {}",
            best.val_macro_f1,
            best.epoch,
            path.display()
        );
    }
    println!("checkpoint -> {}", a.out.display());
    Ok(())
}

pub fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let mut ck = Checkpoint::load(&a.model)?;
    let model = ck.trained_model::<f32>()?;
    let held: BTreeSet<&str> = ck.held_out_subjects.iter().map(String::as_str).collect();
    let all = load_windows(&a.data)?;
    let windows: Vec<&Window> = all
        .iter()
        .filter(|w| w.sensor == ck.sensor && w.label.is_some())
        .filter(|w| held.is_empty() || held.contains(w.subject.as_str()))
        .collect();
    if held.is_empty() {
        warn!("checkpoint records no held-out subjects; calibrating on every labelled window");
    }
    if windows.is_empty() {
        return Err(CliError::Runtime(format!("no labelled {} calibration windows in the given data", ck.sensor)));
    }
    let logits = windows
        .par_iter()
        .map(|w| model.logits(w))
        .collect::<patchtst_har::Result<Vec<_>>>()?;
    let labels: Vec<usize> = windows.iter().map(|w| w.label.unwrap_or_default()).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= ck.model.n_classes) {
        return Err(CliError::Runtime(format!("label {bad} outside the model's {} classes", ck.model.n_classes)));
    }
    let res = fit_temperature(&logits, &labels)?;
    let subjects: BTreeSet<&str> = windows.iter().map(|w| w.subject.as_str()).collect();
    println!("{} windows from {} subjects", windows.len(), subjects.len());
    println!("{:<8}{:>10}{:>10}{:>10}", "", "T", "NLL", "ECE");
    println!("{:<8}{:>10.4}{:>10.4}{:>10.4}", "before", 1.0, res.nll_before, res.ece_before);
    println!("{:<8}{:>10.4}{:>10.4}{:>10.4}", "after", res.temperature, res.nll_after, res.ece_after);
    let out = a.out.unwrap_or(a.model.clone());
    let seed = ck.train.as_ref().map(|t| t.seed);
    ck.calibration = Some(res);
    ensure_parent(&out)?;
    ck.save(&out)?;
    let mut inputs = vec![a.model];
    inputs.extend(a.data);
    write_sidecar(&out, "calibrate", seed, &json!({"calibration": &ck.calibration}), &inputs)?;
    Ok(())
}

fn active_sensors(requested: &[Sensor], windows: &[Window]) -> BTreeSet<Sensor> {
    if requested.is_empty() {
        windows.iter().map(|w| w.sensor).collect()
    } else {
        requested.iter().copied().collect()
    }
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    let bank = load_bank(&a.models)?;
    let windows = load_windows(&a.data)?;
    let active = active_sensors(&a.sensors, &windows);
    let preds = predict_labels(&windows, &bank, &active).map_err(|e| match &e {
        patchtst_har::Error::Routing { ids } => {
            let sensors: BTreeSet<&str> = ids
                .iter()
                .filter_map(|s| s.rsplit_once(" (").map(|(_, r)| r.trim_end_matches(')')))
                .collect();
            let sensors: Vec<&str> = sensors.into_iter().collect();
            CliError::Runtime(format!(
                "{e}\nno checkpoint for active sensor(s) {}; pass their models or restrict --sensors",
                sensors.join(", ")
            ))
        }
        _ => e.into(),
    })?;
    write_text(&a.out, &predictions_csv(&preds))?;
    let sensors: Vec<String> = active.iter().map(|s| s.to_string()).collect();
    let mut inputs = a.models.clone();
    inputs.extend(a.data);
    write_sidecar(&a.out, "predict", None, &json!({"sensors": sensors}), &inputs)?;
    println!("{} predictions from {} -> {}", preds.len(), sensors.join(","), a.out.display());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<(String, usize)>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if headers != vec!["id", "label"] {
        return Err(CliError::Runtime(format!("{}: expected header id,label", path.display())));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<(String, usize)>().enumerate() {
        out.push(rec.map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 2)))?);
    }
    Ok(out)
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let preds = read_predictions(&a.pred)?;
    let truth: HashMap<String, usize> = truth_by_id(&load_windows(&a.truth)?);
    let mut p = Vec::with_capacity(preds.len());
    let mut t = Vec::with_capacity(preds.len());
    for (id, label) in &preds {
        let y = truth
            .get(id)
            .ok_or_else(|| CliError::Runtime(format!("no ground truth for window '{id}'")))?;
        p.push(*label);
        t.push(*y);
    }
    if truth.len() > preds.len() {
        warn!("{} labelled ids have no prediction", truth.len() - preds.len());
    }
    let report = confusion_with(&p, &t, a.classes, true, a.averaging)?;
    println!("windows: {}", report.n);
    println!("accuracy: {:.4}", patchtst_har::ensemble::accuracy(&p, &t));
    println!("macro-F1: {:.4}", report.macro_f1);
    let mut inputs = vec![a.pred.clone()];
    inputs.extend(a.truth.iter().cloned());
    let cfg = json!({"classes": a.classes, "averaging": a.averaging});
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_text(out, &(text + "\n"))?;
        write_sidecar(out, "evaluate", None, &cfg, &inputs)?;
    }
    if let Some(out) = &a.heatmap {
        write_text(out, &report.heatmap_csv())?;
        write_sidecar(out, "evaluate", None, &cfg, &inputs)?;
    }
    Ok(())
}

pub fn dropout(a: DropoutArgs) -> Result<(), CliError> {
    let bank = load_bank(&a.models)?;
    let windows = load_windows(&a.data)?;
    let rows = sensor_dropout_sweep(&windows, &bank, a.classes)?;
    let csv = dropout_csv(&rows);
    write_text(&a.out, &csv)?;
    let mut inputs = a.models.clone();
    inputs.extend(a.data);
    write_sidecar(&a.out, "dropout", None, &json!({"classes": a.classes}), &inputs)?;
    print!("{csv}");
    Ok(())
}

pub fn augment_demo(a: AugDemoArgs) -> Result<(), CliError> {
    let policy = AugPolicy::preset(&a.policy)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_seed(a.seed);
    let window = match &a.data {
        Some(path) => {
            let all = read_windows(path)?;
            let n = all.len();
            all.into_iter()
                .nth(a.index)
                .ok_or_else(|| CliError::Usage(format!("--index {} but {} holds {n} windows", a.index, path.display())))?
        }
        None => synth_dataset(2, 1, 0.05, a.seed)?.remove(0),
    };
    let raw = Signal::from_window(&window);
    let mut columns = Vec::with_capacity(4);
    for tag in AugTag::ALL {
        let mut rng = substream(a.seed, &[tag.index() as u64]);
        let draw = draw_tagged(&policy, tag, &mut rng);
        info!("{tag}: {draw:?}");
        columns.push(apply(&raw, &draw, &mut rng));
    }
    let mut csv = String::from("t,raw_x,jitter_x,scale_x,rotate_x,dropout_x\n");
    for (t, r) in raw.rows().iter().enumerate() {
        write!(csv, "{t},{}", r[0]).expect("string write");
        for c in &columns {
            write!(csv, ",{}", c.rows()[t][0]).expect("string write");
        }
        csv.push('\n');
    }
    write_text(&a.out, &csv)?;
    let inputs: Vec<PathBuf> = a.data.iter().cloned().collect();
    write_sidecar(&a.out, "augment-demo", Some(a.seed), &json!({"policy": &policy, "index": a.index}), &inputs)?;
    println!("window '{}' -> {}", window.id, a.out.display());
    Ok(())
}
