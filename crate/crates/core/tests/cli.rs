use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use priorgrad::data::{write_manifest, write_wav, AudioClip, ManifestEntry};
use priorgrad::prior::DiagonalGaussian;

const CONFIG: &str = "\
# small enough to run in seconds
n_clips = 6
segments = 3
min_segment_len = 800
max_segment_len = 1600
steps_t = 20
train_steps = 30
batch_size = 4
emb_dim = 16
hidden = 32
fft_size = 256
hop = 64
win_length = 256
n_mels = 20
sinkhorn_windows = 10
analysis_draws = 5
split_train = 0.5
split_val = 0.25
split_test = 0.25
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_priorgrad"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("config.txt");
        fs::write(&config, CONFIG).unwrap();
        Self {
            _dir: dir,
            root,
            config,
        }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn synth(&self) -> PathBuf {
        let out = self.p("corpus");
        ok(&["synth", "--config", s(&self.config), "--out", s(&out)]);
        out.join("manifest.tsv")
    }

    fn train(&self, manifest: &Path, prior: &str, out: &str) -> PathBuf {
        let out = self.p(out);
        ok(&[
            "train",
            "--config",
            s(&self.config),
            "--manifest",
            s(manifest),
            "--prior",
            prior,
            "--out",
            s(&out),
        ]);
        out
    }
}

#[test]
fn pipeline_is_deterministic_and_self_evaluation_is_zero() {
    let w = Workspace::new();
    let manifest = w.synth();
    let a = w.train(&manifest, "adaptive", "run_a");
    let b = w.train(&manifest, "adaptive", "run_b");
    for f in ["checkpoint.pgc", "loss.csv", "train.tsv", "val.tsv", "test.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let loss = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 31);
    assert_eq!(loss.lines().next(), Some("step,loss,moving_average"));

    let test = a.join("test.tsv");
    let ck = a.join("checkpoint.pgc");
    for out in ["gen_a", "gen_b"] {
        ok(&[
            "sample",
            "--config",
            s(&w.config),
            "--checkpoint",
            s(&ck),
            "--manifest",
            s(&test),
            "--out",
            s(&w.p(out)),
        ]);
    }
    let names: Vec<_> = fs::read_dir(w.p("gen_a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(!names.is_empty());
    for n in &names {
        assert_eq!(
            fs::read(w.p("gen_a").join(n)).unwrap(),
            fs::read(w.p("gen_b").join(n)).unwrap()
        );
    }

    let m1 = w.p("m1.csv");
    let m2 = w.p("m2.csv");
    for m in [&m1, &m2] {
        ok(&[
            "evaluate",
            "--config",
            s(&w.config),
            "--generated",
            s(&w.p("gen_a")),
            "--manifest",
            s(&test),
            "--out",
            s(m),
        ]);
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let text = fs::read_to_string(&m1).unwrap();
    assert_eq!(text.lines().count(), names.len() + 1);

    // references against themselves
    let refs = w.p("refs");
    fs::create_dir_all(&refs).unwrap();
    for line in fs::read_to_string(&test).unwrap().lines() {
        let mut cols = line.split('\t');
        let (id, path) = (cols.next().unwrap(), cols.next().unwrap());
        fs::copy(path, refs.join(format!("{id}.wav"))).unwrap();
    }
    let selfm = w.p("self.csv");
    ok(&[
        "evaluate",
        "--config",
        s(&w.config),
        "--generated",
        s(&refs),
        "--manifest",
        s(&test),
        "--out",
        s(&selfm),
    ]);
    let text = fs::read_to_string(&selfm).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    for row in text.lines().skip(1) {
        for (h, v) in header.iter().zip(row.split(',')).skip(1) {
            // the prior column compares prior draws with data, not data with itself
            if *h != "sinkhorn_prior" {
                assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{h} in {row}");
            }
        }
    }
}

#[test]
fn standard_arm_runs_and_fast_schedules_are_validated() {
    let w = Workspace::new();
    let manifest = w.synth();
    let arm = w.train(&manifest, "standard", "std");
    let ck = arm.join("checkpoint.pgc");
    let test = arm.join("test.tsv");

    let good = w.p("fast.txt");
    fs::write(&good, "# two-step schedule\n0.1\n0.5\n").unwrap();
    ok(&[
        "sample",
        "--config",
        s(&w.config),
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&test),
        "--fast-schedule",
        s(&good),
        "--out",
        s(&w.p("fast_out")),
    ]);

    let bad = w.p("bad.txt");
    fs::write(&bad, "0.5\n0.1\n").unwrap();
    let out = run(&[
        "sample",
        "--config",
        s(&w.config),
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&test),
        "--fast-schedule",
        s(&bad),
        "--out",
        s(&w.p("bad_out")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let found = w.p("found.txt");
    ok(&[
        "schedule-search",
        "--config",
        s(&w.config),
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&arm.join("val.tsv")),
        "--out",
        s(&found),
    ]);
    let betas: Vec<f64> = fs::read_to_string(&found)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(betas.len(), 2);
    assert!(betas[0] < betas[1]);
}

#[test]
fn exit_codes() {
    let w = Workspace::new();
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let help = String::from_utf8(run(&["--help"]).stdout).unwrap();
    assert!(help.contains("Exit codes"));

    let bad = w.p("bad.txt");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(
        run(&["analyze", "--config", s(&bad), "--out", s(&w.p("a.csv"))])
            .status
            .code(),
        Some(13)
    );

    let missing = w.p("missing.tsv");
    let out = run(&[
        "train",
        "--config",
        s(&w.config),
        "--manifest",
        s(&missing),
        "--out",
        s(&w.p("x")),
    ]);
    assert_eq!(out.status.code(), Some(14));

    let manifest = w.synth();
    let out = run(&[
        "train",
        "--config",
        s(&w.config),
        "--manifest",
        s(&manifest),
        "--prior",
        "gaussian",
        "--out",
        s(&w.p("y")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = w.p("garbage.pgc");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = run(&[
        "sample",
        "--checkpoint",
        s(&garbage),
        "--manifest",
        s(&manifest),
        "--out",
        s(&w.p("z")),
    ]);
    assert_eq!(out.status.code(), Some(11));
}

#[test]
fn analyze_rows() {
    let w = Workspace::new();
    let a = w.p("a.csv");
    let b = w.p("b.csv");
    ok(&["analyze", "--config", s(&w.config), "--out", s(&a)]);
    ok(&["analyze", "--config", s(&w.config), "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let s = priorgrad::schedule::NoiseSchedule::linear(1e-4, 5e-2, 20).unwrap();
    let gamma_sum: f64 = s.gammas().iter().sum();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3 * 6);
    for r in &rows {
        assert!((r[col("c1")] + r[col("c2")] - gamma_sum).abs() < 1e-9 * gamma_sum);
        assert!((r[col("cond_data")] - 1.0).abs() < 1e-9);
        if r[col("draw")] == 0.0 {
            let (d, i) = (r[col("min_loss_data_prior")], r[col("min_loss_identity_prior")]);
            assert!((d - i).abs() < 1e-9 * d);
            assert!((r[col("cond_identity")] - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn extract_prior_on_silence_and_tone() {
    let w = Workspace::new();
    let wavs = w.p("wavs");
    fs::create_dir_all(&wavs).unwrap();
    let silence = AudioClip::new("silence", 22050, vec![0.0; 4000]).unwrap();
    let tone: Vec<f64> = (0..4000)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 441.0 * i as f64 / 22050.0).sin())
        .collect();
    let tone = AudioClip::new("tone", 22050, tone).unwrap();
    let mut entries = Vec::new();
    for c in [&silence, &tone] {
        let path = wavs.join(format!("{}.wav", c.id));
        write_wav(c, &path).unwrap();
        entries.push(ManifestEntry { id: c.id.clone(), path });
    }
    let manifest = w.p("m.tsv");
    write_manifest(&entries, &manifest).unwrap();
    let out = w.p("priors");
    ok(&[
        "extract-prior",
        "--config",
        s(&w.config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    // every frame sits on the log floor, so each is its own maximum
    let p = DiagonalGaussian::read(out.join("silence.pgp")).unwrap();
    assert!(p.std().iter().all(|v| *v == 1.0));
    let p = DiagonalGaussian::read(out.join("tone.pgp")).unwrap();
    assert!(
        p.std().iter().all(|v| *v > 0.9),
        "{:?}",
        p.std().iter().copied().fold(1.0, f64::min)
    );
}
