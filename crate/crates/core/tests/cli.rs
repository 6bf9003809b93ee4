use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fieldcast::phantom::make_phantom;
use fieldcast::pipeline::RunConfig;
use fieldcast::vvol::{load_scalar, save_volume};
use fieldcast::{GridMeta, PhantomSpec};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldcast")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, cohort: usize) -> std::path::PathBuf {
    let mut cfg = RunConfig {
        out_dir: dir.join("run"),
        cohort_size: cohort,
        ..RunConfig::default()
    };
    cfg.phantom.meta = GridMeta::new([28, 28, 28], [3.5; 3]).unwrap();
    cfg.forest.n_trees = 4;
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let o = bin(&["--help"]);
    assert_eq!(code(&o), 0);
    for word in ["phantom", "solve", "eval", "importance", "predict", "--seed", "--config"] {
        assert!(stdout(&o).contains(word), "help lacks {word}");
    }
    assert_eq!(code(&bin(&["frobnicate"])), 1);
    assert_eq!(code(&bin(&["eval", "--trees", "many"])), 1);
    assert_eq!(code(&bin(&[])), 1);
}

#[test]
fn single_still_phantom_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = bin(&[
        "phantom",
        "--cohort-size",
        "1",
        "--no-jitter",
        "--dims",
        "24,24,24",
        "--spacing",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let spec = PhantomSpec {
        meta: GridMeta::new([24, 24, 24], [4.0; 3]).unwrap(),
        jitter: Default::default(),
        ..PhantomSpec::default()
    };
    let direct = tmp.path().join("direct.vvol");
    save_volume(&direct, &make_phantom(&spec).unwrap()).unwrap();
    let written = fs::read(out.join("phantoms/phantom_000.vvol")).unwrap();
    assert_eq!(written, fs::read(&direct).unwrap());
}

#[test]
fn phantom_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 2);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = bin(&["--config", s(&cfg), "--seed", "11", "--out", s(d), "phantom"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["phantom_000.vvol", "phantom_001.vvol"] {
        let pa = fs::read(a.join("phantoms").join(f)).unwrap();
        assert_eq!(pa, fs::read(b.join("phantoms").join(f)).unwrap());
    }
    let p0 = fs::read(a.join("phantoms/phantom_000.vvol")).unwrap();
    assert_ne!(p0, fs::read(a.join("phantoms/phantom_001.vvol")).unwrap());
}

#[test]
fn missing_inputs_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 2);
    let o = bin(&["--config", s(&cfg), "solve"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("phantom_000.vvol"), "{}", stderr(&o));
    let o = bin(&["--config", s(&cfg), "eval"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("efield.vvol") && err.contains("layout.json"), "{err}");
    let o = bin(&["importance", "--model", s(&tmp.path().join("nope.vforest"))]);
    assert_eq!(code(&o), 2);
    let bad = tmp.path().join("bad.vforest");
    fs::write(&bad, b"VFOREST1\nnot a header\n").unwrap();
    assert_eq!(code(&bin(&["importance", "--model", s(&bad)])), 2);
}

#[test]
fn solver_failure_is_numerical() {
    let tmp = tempfile::tempdir().unwrap();
    let path = small_config(tmp.path(), 1);
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.solve.max_iterations = Some(2);
    cfg.save(&path).unwrap();
    assert_eq!(code(&bin(&["--config", s(&path), "phantom"])), 0);
    let o = bin(&["--config", s(&path), "solve"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("p000"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 2);
    let run = tmp.path().join("run");
    for stage in ["phantom", "solve", "eval"] {
        let o = bin(&["--config", s(&cfg), stage]);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    let csv = fs::read_to_string(run.join("eval/report.csv")).unwrap();
    for model in ["forest", "linear"] {
        let rows = csv
            .lines()
            .filter(|l| l.starts_with("case,") && l.split(',').nth(2) == Some(model))
            .count();
        assert_eq!(rows, 4, "{model}");
    }
    let text = fs::read_to_string(run.join("eval/report.txt")).unwrap();
    assert!(text.contains("d_e"));

    // eval alone reruns to the same bytes
    let o = bin(&["--config", s(&cfg), "eval"]);
    assert_eq!(code(&o), 0);
    assert_eq!(csv, fs::read_to_string(run.join("eval/report.csv")).unwrap());

    let model = run.join("eval/models/fold_p000.vforest");
    let o = bin(&["importance", "--model", s(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("literature"));
    let sum_line = out.lines().find(|l| l.starts_with("sum")).unwrap();
    assert!(sum_line.contains("1.000"), "{sum_line}");
    let values: Vec<f64> = out
        .lines()
        .skip(1)
        .take(5)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]), "{out}");

    let pred = tmp.path().join("pred.vvol");
    let o = bin(&[
        "predict",
        "--model",
        s(&model),
        "--volume",
        s(&run.join("phantoms/phantom_000.vvol")),
        "--layout",
        s(&run.join("cases/p000_AP/layout.json")),
        "--out",
        s(&pred),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let field = load_scalar(&pred).unwrap();
    assert_eq!(field.meta().dims, [28, 28, 28]);
    assert!(field.values().iter().all(|v| v.is_finite() && *v >= 0.0));

    let lin = run.join("eval/models/fold_p000_linear.json");
    let o = bin(&[
        "predict",
        "--model",
        s(&lin),
        "--volume",
        s(&run.join("phantoms/phantom_000.vvol")),
        "--axis",
        "LR",
        "--out",
        s(&pred),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
