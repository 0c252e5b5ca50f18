//! The five subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use walkdir::WalkDir;

use fewshot_core::corpus::{read_annotations, read_patch_cache, write_patch_cache, AnnotationRow};
use fewshot_core::detector::{detect as detect_events, save_predictions};
use fewshot_core::evaluator::{ground_truth_from_rows, parse_predictions, score as score_events};
use fewshot_core::frontend::{read_features, write_features, MelPcenGram};
use fewshot_core::pipeline::{extract_file, labeled_pool, AnnotatedRecording};
use fewshot_core::trainer::{
    prepare_pools, read_checkpoint, train as train_model, train_ensemble, write_checkpoint, Checkpoint, TrainReport,
};
use fewshot_core::verify::run_all;

use crate::args::{required, DetectArgs, ExtractArgs, RunConfig, ScoreArgs, TrainArgs};
use crate::CliError;

const FEATURE_EXT: &str = "features";

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

fn feature_path(cache_dir: &Path, recording: &str) -> PathBuf {
    cache_dir.join(format!("{}.{FEATURE_EXT}", stem(recording)))
}

/// Files under `root` with extension `ext` (case-insensitive), sorted; a
/// plain file is returned as is.
fn collect_files(root: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        return Err(CliError::Usage(format!("{} does not exist", root.display())));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| data_err(root, e))?;
        let matches = entry
            .path()
            .extension()
            .is_some_and(|x| x.to_string_lossy().eq_ignore_ascii_case(ext));
        if entry.file_type().is_file() && matches {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// Annotation rows grouped by recording name.
fn load_annotations(root: &Path) -> Result<BTreeMap<String, Vec<AnnotationRow>>, CliError> {
    let files = collect_files(root, "csv")?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no annotation CSVs in {}", root.display())));
    }
    let mut by_recording: BTreeMap<String, Vec<AnnotationRow>> = BTreeMap::new();
    for f in files {
        for row in read_annotations(&f).map_err(|e| data_err(&f, e))? {
            by_recording.entry(row.audiofile.clone()).or_default().push(row);
        }
    }
    Ok(by_recording)
}

fn load_gram(cache_dir: &Path, recording: &str) -> Result<MelPcenGram, CliError> {
    let path = feature_path(cache_dir, recording);
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "no features for {recording}: {} is missing (run extract first)",
            path.display()
        )));
    }
    read_features(&path).map_err(|e| data_err(&path, e))
}

pub fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let file = RunConfig::load(a.config.as_deref())?;
    let audio_dir = required(a.audio_dir, &file.paths.audio_dir, "audio-dir")?;
    let cache_dir = required(a.cache_dir, &file.paths.cache_dir, "cache-dir")?;
    let cfg = a.spectrogram.merged(file.spectrogram).resolve()?;
    let wavs = collect_files(&audio_dir, "wav")?;
    if wavs.is_empty() {
        return Err(CliError::Usage(format!("no .wav files in {}", audio_dir.display())));
    }
    std::fs::create_dir_all(&cache_dir).map_err(|e| data_err(&cache_dir, e))?;

    let mut seen = BTreeMap::new();
    let mut failures = 0;
    for wav in &wavs {
        let name = wav.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(other) = seen.insert(stem(&name), wav.clone()) {
            return Err(CliError::Data(format!(
                "{} and {} map to the same feature file",
                other.display(),
                wav.display()
            )));
        }
        let out = feature_path(&cache_dir, &name);
        match extract_file(wav, &cfg).and_then(|mut g| {
            g.source_path = name.clone();
            write_features(&out, &g).map(|()| g.n_frames())
        }) {
            Ok(n) => log::info!("{} -> {} ({n} frames)", wav.display(), out.display()),
            Err(e) => {
                failures += 1;
                eprintln!("warning: {}: {e}", wav.display());
            }
        }
    }
    if failures == wavs.len() {
        return Err(CliError::Data(format!("all {failures} recordings failed")));
    }
    println!("extracted {} of {} recordings", wavs.len() - failures, wavs.len());
    Ok(())
}

fn loss_trend(report: &TrainReport) -> &'static str {
    match (report.epochs.first(), report.epochs.last()) {
        (Some(a), Some(b)) if b.mean_loss < a.mean_loss - 1e-9 => "decreasing",
        (Some(a), Some(b)) if b.mean_loss > a.mean_loss + 1e-9 => "increasing",
        _ => "flat",
    }
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let file = RunConfig::load(a.config.as_deref())?;
    let settings = a.training.merged(file.training).resolve()?;
    let checkpoint = required(a.checkpoint, &file.paths.checkpoint, "checkpoint")?;
    let report_path = a
        .report
        .or(file.paths.report)
        .unwrap_or_else(|| checkpoint.with_extension("report.jsonl"));
    let patch_cache = a.patch_cache.or(file.paths.patch_cache);

    let (pool, classes) = match &patch_cache {
        Some(p) if p.is_file() => read_patch_cache(p).map_err(|e| data_err(p, e))?,
        _ => {
            let cache_dir = required(a.cache_dir, &file.paths.cache_dir, "cache-dir")?;
            let annotations = required(a.annotations, &file.paths.annotations, "annotations")?;
            let mut recordings = Vec::new();
            for (name, rows) in load_annotations(&annotations)? {
                recordings.push(AnnotatedRecording {
                    gram: load_gram(&cache_dir, &name)?,
                    name,
                    rows,
                });
            }
            let built = labeled_pool(&recordings, settings.patch_hop, settings.overlap_frac)?;
            if let Some(p) = &patch_cache {
                write_patch_cache(p, &built.0, &built.1).map_err(|e| data_err(p, e))?;
            }
            built
        }
    };
    log::info!("{} labeled patches over {} event classes", pool.len(), classes.n_classes());

    let cfg = &settings.config;
    let (train_pool, val_pool) = prepare_pools(&pool, settings.val_frac, cfg.seed)?;
    let started = Instant::now();
    let (ckpt, reports) = match &settings.ensemble_dims {
        Some(dims) => {
            let (ensemble, reports) = train_ensemble(&train_pool, &val_pool, cfg, dims)?;
            (Checkpoint::Ensemble(ensemble), reports)
        }
        None => {
            let (model, kernel, report) = train_model(&train_pool, &val_pool, cfg)?;
            (Checkpoint::Single { model, kernel }, vec![report])
        }
    };
    write_checkpoint(&ckpt, &checkpoint).map_err(|e| data_err(&checkpoint, e))?;

    let mut lines = String::new();
    for (i, r) in reports.iter().enumerate() {
        if reports.len() == 1 {
            lines.push_str(&r.to_json_lines());
            continue;
        }
        for e in &r.epochs {
            let mut v = serde_json::to_value(e).expect("plain struct");
            v["member"] = i.into();
            lines.push_str(&v.to_string());
            lines.push('\n');
        }
    }
    std::fs::write(&report_path, lines).map_err(|e| data_err(&report_path, e))?;

    for (i, r) in reports.iter().enumerate() {
        println!(
            "member {i}: {} epochs, loss {:.4} -> {:.4} ({}), final validation accuracy {:.4}",
            r.epochs.len(),
            r.epochs.first().map_or(f64::NAN, |e| e.mean_loss),
            r.epochs.last().map_or(f64::NAN, |e| e.mean_loss),
            loss_trend(r),
            r.final_val_accuracy
        );
    }
    println!(
        "wrote {} and {} in {:.1} s",
        checkpoint.display(),
        report_path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn detect(a: DetectArgs) -> Result<(), CliError> {
    let file = RunConfig::load(a.config.as_deref())?;
    let cfg = a.detection.merged(file.detection).resolve()?;
    let checkpoint = required(a.checkpoint, &file.paths.checkpoint, "checkpoint")?;
    let cache_dir = required(a.cache_dir, &file.paths.cache_dir, "cache-dir")?;
    let annotations = required(a.annotations, &file.paths.annotations, "annotations")?;
    let output = required(a.output, &file.paths.output, "output")?;

    if !checkpoint.is_file() {
        return Err(CliError::Data(format!("checkpoint {} not found", checkpoint.display())));
    }
    let members = read_checkpoint(&checkpoint).map_err(|e| data_err(&checkpoint, e))?.members();
    let mut rows_out = Vec::new();
    for (name, rows) in load_annotations(&annotations)? {
        let gram = load_gram(&cache_dir, &name)?;
        let events = detect_events(&members, &gram, &rows, &cfg).map_err(|e| match e {
            fewshot_core::Error::Numerical(m) => CliError::Numerical(format!("{name}: {m}")),
            other => CliError::Data(format!("{name}: {other}")),
        })?;
        log::info!("{name}: {} events", events.len());
        rows_out.extend(events.into_iter().map(|e| (name.clone(), e)));
    }
    save_predictions(&output, &rows_out).map_err(|e| data_err(&output, e))?;
    println!("wrote {} events to {}", rows_out.len(), output.display());
    Ok(())
}

pub fn score(a: ScoreArgs) -> Result<(), CliError> {
    let file = RunConfig::load(a.config.as_deref())?;
    let (min_iou, skip_shots) = a.scoring.merged(file.scoring).resolve()?;
    let pred_path = required(a.predictions, &file.paths.predictions, "predictions")?;
    let gt_path = required(a.ground_truth, &file.paths.ground_truth, "ground-truth")?;

    let text = std::fs::read_to_string(&pred_path).map_err(|e| data_err(&pred_path, e))?;
    let preds = parse_predictions(&text).map_err(|e| data_err(&pred_path, e))?;
    let rows: Vec<AnnotationRow> = load_annotations(&gt_path)?.into_values().flatten().collect();
    let truth = ground_truth_from_rows(&rows)?;
    let report = score_events(&preds, &truth, min_iou, skip_shots)?;
    println!("{}", report.to_json());
    Ok(())
}

pub fn verify() -> Result<(), CliError> {
    let results = run_all();
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!(
            "{:<width$}  {}  {:>7.2} s  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("all {} suites passed", results.len());
        Ok(())
    } else {
        Err(CliError::Numerical(format!("failed suites: {}", failed.join(", "))))
    }
}
