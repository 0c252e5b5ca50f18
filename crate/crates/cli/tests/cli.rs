//! Runs the `fewshot` binary end to end on small synthetic corpora.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use fewshot_core::rng;
use fewshot_core::synthetic::{evaluation_csv, generate_recording, write_corpus, write_wav, CorpusLayout, SyntheticSpec};

fn fewshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstdout {}\nstderr {}", o.status, stdout(o), stderr(o));
}

const HOP_SECONDS: f64 = 8.0 * 256.0 / 22050.0;

/// A trained model over a short synthetic corpus, shared by several tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    layout: CorpusLayout,
    spec: SyntheticSpec,
}

impl Fixture {
    fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }
    fn checkpoint(&self) -> PathBuf {
        self.root.join("model.json")
    }
    fn eval_dir(&self) -> PathBuf {
        self.root.join("corpus/eval")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = SyntheticSpec {
            duration: 60.0,
            ..Default::default()
        };
        let layout = write_corpus(root.join("corpus"), &spec, 2, 11).unwrap();
        let cache = root.join("cache");
        assert_ok(&fewshot(&["extract", "--audio-dir", s(&root.join("corpus")), "--cache-dir", s(&cache)]));
        assert_ok(&fewshot(&[
            "train",
            "--cache-dir",
            s(&cache),
            "--annotations",
            s(&root.join("corpus/train")),
            "--checkpoint",
            s(&root.join("model.json")),
            "--seed",
            "3",
        ]));
        Fixture {
            _dir: dir,
            root,
            layout,
            spec,
        }
    })
}

#[test]
fn verify_passes() {
    let o = fewshot(&["verify"]);
    assert_ok(&o);
    let out = stdout(&o);
    for suite in ["gradients", "matching", "kernels", "metrics", "loss"] {
        assert!(out.lines().any(|l| l.starts_with(suite) && l.contains("PASS")), "{out}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fewshot(&["score", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(fewshot(&["bogus"]).status.code(), Some(1));
    let o = fewshot(&["train", "--kernel", "rbf", "--gamma", "0", "--checkpoint", "x.json"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("gamma"));
    assert_eq!(fewshot(&["train", "--kernel", "rbf", "--checkpoint", "x.json"]).status.code(), Some(1));
    assert_eq!(fewshot(&["detect", "--median-filter-width", "2"]).status.code(), Some(1));
    assert_eq!(fewshot(&["--help"]).status.code(), Some(0));
}

#[test]
fn extract_empty_dir_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fewshot(&["extract", "--audio-dir", s(dir.path()), "--cache-dir", s(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn extract_writes_one_file_per_wav_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        duration: 5.0,
        ..Default::default()
    };
    let mut r = rng::seeded(1);
    for name in ["a.wav", "b.wav"] {
        let rec = generate_recording(&spec, &[0], &mut r).unwrap();
        write_wav(dir.path().join(name), &rec.samples, rec.sample_rate).unwrap();
    }
    let cache = dir.path().join("cache");
    assert_ok(&fewshot(&["extract", "--audio-dir", s(dir.path()), "--cache-dir", s(&cache)]));
    let mut names: Vec<_> = fs::read_dir(&cache).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, vec!["a.features", "b.features"]);
    let first = fs::read(cache.join("a.features")).unwrap();
    assert_ok(&fewshot(&["extract", "--audio-dir", s(dir.path()), "--cache-dir", s(&cache)]));
    assert_eq!(fs::read(cache.join("a.features")).unwrap(), first);
}

#[test]
fn extract_survives_one_bad_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        duration: 3.0,
        ..Default::default()
    };
    let rec = generate_recording(&spec, &[1], &mut rng::seeded(2)).unwrap();
    write_wav(dir.path().join("good.wav"), &rec.samples, rec.sample_rate).unwrap();
    fs::write(dir.path().join("bad.wav"), b"not audio").unwrap();
    let cache = dir.path().join("cache");
    let o = fewshot(&["extract", "--audio-dir", s(dir.path()), "--cache-dir", s(&cache)]);
    assert_ok(&o);
    assert!(stderr(&o).contains("bad.wav"));
    fs::remove_file(dir.path().join("good.wav")).unwrap();
    let o = fewshot(&["extract", "--audio-dir", s(dir.path()), "--cache-dir", s(&cache)]);
    assert_eq!(o.status.code(), Some(2));
}

fn detect_into(f: &Fixture, out: &Path) {
    assert_ok(&fewshot(&[
        "detect",
        "--checkpoint",
        s(&f.checkpoint()),
        "--cache-dir",
        s(&f.cache()),
        "--annotations",
        s(&f.eval_dir()),
        "--output",
        s(out),
    ]));
}

#[test]
fn detections_cover_planted_events() {
    let f = fixture();
    let out = f.root.join("pred.csv");
    detect_into(f, &out);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("Audiofilename,Starttime,Endtime\n"));
    let rows: Vec<(String, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            assert_eq!(c[1].split('.').nth(1).unwrap().len(), 6, "{l}");
            (c[0].to_string(), c[1].parse().unwrap(), c[2].parse().unwrap())
        })
        .collect();
    for (wav, csv) in f.layout.eval_wavs.iter().zip(&f.layout.eval_csvs) {
        let name = wav.file_name().unwrap().to_str().unwrap();
        let events: Vec<(f64, f64)> = fs::read_to_string(csv)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let c: Vec<&str> = l.split(',').collect();
                (c[1].parse().unwrap(), c[2].parse().unwrap())
            })
            .collect();
        assert!(events.len() > 5, "{name} has {} events", events.len());
        for &(a, b) in &events[5..] {
            let covered = rows.iter().any(|(n, ps, pe)| {
                n == name && *ps <= a + 2.0 * HOP_SECONDS && *pe >= b - 2.0 * HOP_SECONDS && *ps < b && *pe > a
            });
            assert!(covered, "{name}: event [{a}, {b}] not covered");
        }
    }

    let o = fewshot(&["score", "--predictions", s(&out), "--ground-truth", s(&f.eval_dir()), "--skip-shots", "5"]);
    assert_ok(&o);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["pooled"]["fscore"].as_f64().unwrap() >= 0.8, "{report}");
}

#[test]
fn detection_is_deterministic() {
    let f = fixture();
    let (a, b) = (f.root.join("d1.csv"), f.root.join("d2.csv"));
    detect_into(f, &a);
    detect_into(f, &b);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn extreme_threshold_on_noise_gives_header_only() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        amplitude: (0.0, 0.0),
        ..f.spec.clone()
    };
    let rec = generate_recording(&spec, &[0], &mut rng::seeded(5)).unwrap();
    write_wav(dir.path().join("noise.wav"), &rec.samples, rec.sample_rate).unwrap();
    fs::write(dir.path().join("noise.csv"), evaluation_csv("noise.wav", &rec, 0)).unwrap();
    let cache = dir.path().join("cache");
    assert_ok(&fewshot(&["extract", "--audio-dir", s(dir.path()), "--cache-dir", s(&cache)]));
    let out = dir.path().join("p.csv");
    assert_ok(&fewshot(&[
        "detect",
        "--checkpoint",
        s(&f.checkpoint()),
        "--cache-dir",
        s(&cache),
        "--annotations",
        s(&dir.path().join("noise.csv")),
        "--output",
        s(&out),
        "--prob-threshold",
        "0.999",
    ]));
    assert_eq!(fs::read_to_string(&out).unwrap(), "Audiofilename,Starttime,Endtime\n");
}

#[test]
fn detect_errors_name_the_problem() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let o = fewshot(&[
        "detect",
        "--checkpoint",
        s(&missing),
        "--cache-dir",
        s(&f.cache()),
        "--annotations",
        s(&f.eval_dir()),
        "--output",
        s(&dir.path().join("p.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.json"), "{}", stderr(&o));

    let name = f.layout.eval_wavs[0].file_name().unwrap().to_str().unwrap();
    let csv = dir.path().join("few.csv");
    fs::write(&csv, format!("Audiofilename,Starttime,Endtime,Q\n{name},1.0,1.5,POS\n{name},3.0,3.5,POS\n")).unwrap();
    let o = fewshot(&[
        "detect",
        "--checkpoint",
        s(&f.checkpoint()),
        "--cache-dir",
        s(&f.cache()),
        "--annotations",
        s(&csv),
        "--output",
        s(&dir.path().join("p.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("POS"), "{}", stderr(&o));
}

fn train_into(f: &Fixture, dir: &Path, extra: &[&str]) -> Output {
    let ckpt = dir.join("m.json");
    let report = dir.join("m.jsonl");
    let cache = f.cache();
    let mut args = vec![
        "train",
        "--cache-dir",
        s(&cache),
        "--annotations",
        f.layout.train_csvs[0].parent().unwrap().to_str().unwrap(),
        "--checkpoint",
        s(&ckpt),
        "--report",
        s(&report),
    ];
    args.extend(extra);
    fewshot(&args)
}

#[test]
fn training_is_deterministic_and_reports_per_epoch() {
    let f = fixture();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let extra = ["--epochs", "2", "--seed", "9"];
    let o = train_into(f, a.path(), &extra);
    assert_ok(&o);
    assert!(stdout(&o).contains("final validation accuracy"));
    assert_ok(&train_into(f, b.path(), &extra));
    for file in ["m.json", "m.jsonl"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let report = fs::read_to_string(a.path().join("m.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|v| v["mean_loss"].is_f64() && v["val_accuracy"].is_f64()));
}

#[test]
fn ensemble_checkpoint_has_two_members() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&train_into(f, dir.path(), &["--kind", "ensemble", "--ensemble-dims", "8,16", "--epochs", "1"]));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(doc["kind"], "ensemble");
    assert_eq!(doc["members"].as_array().unwrap().len(), 2);
    let report = fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"training": {"epochs": 1, "seed": 4}}"#).unwrap();
    assert_ok(&train_into(f, dir.path(), &["--config", s(&cfg)]));
    assert_eq!(fs::read_to_string(dir.path().join("m.jsonl")).unwrap().lines().count(), 1);
    assert_ok(&train_into(f, dir.path(), &["--config", s(&cfg), "--epochs", "2"]));
    assert_eq!(fs::read_to_string(dir.path().join("m.jsonl")).unwrap().lines().count(), 2);

    fs::write(&cfg, r#"{"training": {"epoch": 1}}"#).unwrap();
    assert_eq!(train_into(f, dir.path(), &["--config", s(&cfg)]).status.code(), Some(1));
}

fn write_pair(dir: &Path, preds: &[(f64, f64)], gts: &[(f64, f64)]) -> (PathBuf, PathBuf) {
    let mut p = String::from("Audiofilename,Starttime,Endtime\n");
    for (a, b) in preds {
        p += &format!("r.wav,{a:.6},{b:.6}\n");
    }
    let mut g = String::from("Audiofilename,Starttime,Endtime,Q\n");
    for (a, b) in gts {
        g += &format!("r.wav,{a:.6},{b:.6},POS\n");
    }
    let (pp, gp) = (dir.join("pred.csv"), dir.join("gt.csv"));
    fs::write(&pp, p).unwrap();
    fs::write(&gp, g).unwrap();
    (pp, gp)
}

fn score(pp: &Path, gp: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["score", "--predictions", s(pp), "--ground-truth", s(gp)];
    args.extend(extra);
    let o = fewshot(&args);
    assert_ok(&o);
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn score_reproduces_known_counts() {
    let dir = tempfile::tempdir().unwrap();
    // 33 exact hits, 62 predictions in empty space, 197 missed truths
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for i in 0..230 {
        let t = 10.0 * i as f64;
        gts.push((t, t + 1.0));
        if i < 33 {
            preds.push((t, t + 1.0));
        }
    }
    for i in 0..62 {
        let t = 10.0 * i as f64 + 5.0;
        preds.push((t, t + 1.0));
    }
    let (pp, gp) = write_pair(dir.path(), &preds, &gts);
    let r = score(&pp, &gp, &[]);
    let pooled = &r["pooled"];
    assert_eq!(
        (pooled["tp"].as_u64(), pooled["fp"].as_u64(), pooled["fn"].as_u64()),
        (Some(33), Some(62), Some(197))
    );
    assert!((100.0 * pooled["fscore"].as_f64().unwrap() - 20.31).abs() <= 0.01);
    assert!(r["per_file"]["r.wav"].is_object());
}

#[test]
fn score_identical_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let events = [(1.0, 2.0), (4.0, 5.5), (8.0, 8.4)];
    let (pp, gp) = write_pair(dir.path(), &events, &events);
    assert_eq!(score(&pp, &gp, &[])["pooled"]["fscore"].as_f64(), Some(1.0));
    let (pp, gp) = write_pair(dir.path(), &[], &events);
    assert_eq!(score(&pp, &gp, &[])["pooled"]["recall"].as_f64(), Some(0.0));
}

#[test]
fn score_flag_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    // IoU 0.5
    let (pp, gp) = write_pair(dir.path(), &[(0.0, 1.5)], &[(0.5, 2.0)]);
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"scoring": {"min_iou": 0.9}}"#).unwrap();
    assert_eq!(score(&pp, &gp, &["--config", s(&cfg)])["pooled"]["tp"].as_u64(), Some(0));
    assert_eq!(score(&pp, &gp, &["--config", s(&cfg), "--min-iou", "0.3"])["pooled"]["tp"].as_u64(), Some(1));
    assert_eq!(score(&pp, &gp, &[])["pooled"]["tp"].as_u64(), Some(1));
}

#[test]
fn score_parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let (pp, gp) = write_pair(dir.path(), &[(0.0, 1.0)], &[(0.0, 1.0)]);
    fs::write(&pp, "Audiofilename,Starttime,Endtime\nr.wav,0,1\nr.wav,abc,2\n").unwrap();
    let o = fewshot(&["score", "--predictions", s(&pp), "--ground-truth", s(&gp)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}
