use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fourierpet::io::RunConfig;

const TINY: &[&str] = &[
    "--set", "stages=1",
    "--set", "depth=1",
    "--set", "channels=4",
    "--set", "epochs=1",
    "--set", "batch_size=2",
    "--set", "n_train=2",
    "--set", "n_test=1",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fourierpet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", p(dir), "--count", "2"];
    args.extend_from_slice(extra);
    ok(&args);
}

fn metric(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn simulate_then_osem_reports_finite_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, &[]);
    assert!(data.join("run.config").exists());
    let out = dir.path().join("osem.grid");
    let pgm = dir.path().join("osem.pgm");
    let stdout = ok(&[
        "reconstruct",
        "--manifest", p(&data.join("train_0000.manifest")),
        "--method", "osem",
        "--out", p(&out),
        "--pgm", p(&pgm),
    ]);
    let psnr = metric(&stdout, "psnr_db");
    assert!(psnr.is_finite() && psnr > 5.0, "{stdout}");
    assert!(out.exists() && pgm.exists());
    assert!(dir.path().join("osem.grid.config").exists());

    let stdout = ok(&[
        "reconstruct",
        "--manifest", p(&data.join("train_0000.manifest")),
        "--method", "mlem",
        "--sinogram", "full",
        "--set", "mlem_iters=20",
    ]);
    assert!(metric(&stdout, "psnr_db") > psnr, "full-count MLEM should beat low-count OSEM");
}

#[test]
fn geometry_mismatch_names_both_shapes() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    let out = run(&[
        "reconstruct",
        "--manifest", p(&dir.path().join("train_0000.manifest")),
        "--method", "osem",
        "--set", "n_angles=48",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("sinogram 48x32") && err.contains("sinogram 32x32"), "{err}");
}

#[test]
fn bad_config_is_a_one_line_error() {
    let out = run(&["simulate", "--out", "/nonexistent/x", "--set", "no_such_key=1"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("no_such_key"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let out = run(&["ablate", "--sweep", "width", "--out", "/tmp/unused"]);
    assert!(!out.status.success());
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 5\nphantom_kind = hot_spheres\n").unwrap();
    let data = dir.path().join("d");
    simulate(&data, &["--config", p(&cfg), "--seed", "9"]);
    let logged = RunConfig::load(&data.join("run.config")).unwrap();
    assert_eq!(logged.seed, 9);
    assert_eq!(logged.phantom_kind, "hot_spheres");
}

#[test]
fn simulate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate(&a, &[]);
    simulate(&b, &[]);
    for name in ["train_0001_ylow.grid", "train_0001_truth.grid", "train_0001.manifest"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn analyze_modes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, &[]);
    let manifest = d.join("train_0000.manifest");
    for (dose, file) in [("low", "low.grid"), ("full", "full.grid")] {
        ok(&[
            "reconstruct", "--manifest", p(&manifest), "--method", "osem",
            "--sinogram", dose, "--out", p(&d.join(file)),
        ]);
    }
    let truth = d.join("train_0000_truth.grid");
    let jsonl = d.join("swap.jsonl");
    let table = ok(&[
        "analyze", "--mode", "swap",
        "--truth", p(&truth),
        "--low", p(&d.join("low.grid")),
        "--full", p(&d.join("full.grid")),
        "--roi", p(&d.join("train_0000_roi.grid")),
        "--roi-min", "1.5",
        "--jsonl", p(&jsonl),
    ]);
    for row in ["low", "amp_low+phase_full", "amp_full+phase_low", "full"] {
        assert!(table.lines().any(|l| l.starts_with(row)), "{table}");
    }
    assert_eq!(fs::read_to_string(&jsonl).unwrap().lines().count(), 4);

    let profile = ok(&[
        "analyze", "--mode", "profile",
        "--low", p(&d.join("low.grid")),
        "--full", p(&d.join("full.grid")),
        "--bands", "4",
    ]);
    assert!(profile.contains("# rings") && profile.contains("HH"), "{profile}");

    let map = d.join("err.grid");
    ok(&[
        "analyze", "--mode", "freq-error",
        "--image", p(&d.join("low.grid")),
        "--reference", p(&d.join("full.grid")),
        "--out", p(&map),
        "--pgm", p(&d.join("err.pgm")),
    ]);
    assert!(map.exists());

    let metrics = ok(&[
        "analyze", "--mode", "metrics",
        "--image", p(&truth),
        "--reference", p(&truth),
    ]);
    assert!(metrics.contains("inf"), "{metrics}");

    let out = run(&["analyze", "--mode", "swap", "--truth", p(&truth)]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("--low"));
}

#[test]
fn train_then_reconstruct_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train_dir, test_dir) = (d.join("train"), d.join("test"));
    simulate(&train_dir, TINY);
    let mut test_args = vec!["simulate", "--out", p(&test_dir), "--split", "test", "--count", "1"];
    test_args.extend_from_slice(TINY);
    ok(&test_args);
    let ckpt = d.join("net.fptc");
    let mut args = vec![
        "train",
        "--data", p(&train_dir),
        "--test-data", p(&test_dir),
        "--out", p(&ckpt),
    ];
    args.extend_from_slice(TINY);
    let stdout = ok(&args);
    assert!(stdout.contains("epoch 1 loss") && stdout.contains("test: n=1"), "{stdout}");
    let log = fs::read_to_string(d.join("net.fptc.log.jsonl")).unwrap();
    let first = log.lines().next().unwrap();
    for key in ["\"step\"", "\"loss\"", "\"lr\"", "\"mu\"", "\"residuals\""] {
        assert!(first.contains(key), "{first}");
    }
    let stdout = ok(&[
        "reconstruct",
        "--manifest", p(&d.join("test/test_0000.manifest")),
        "--method", "fourierpet",
        "--checkpoint", p(&ckpt),
    ]);
    assert!(metric(&stdout, "psnr_db").is_finite());

    let out = run(&[
        "reconstruct",
        "--manifest", p(&d.join("test/test_0000.manifest")),
        "--method", "fourierpet",
    ]);
    assert!(!out.status.success());
}

#[test]
fn ablate_loss_writes_four_rows_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--sweep", "loss", "--out", p(dir.path())];
    args.extend_from_slice(TINY);
    let stdout = ok(&args);
    let text = fs::read_to_string(dir.path().join("ablate_loss.txt")).unwrap();
    assert_eq!(stdout, text);
    let records = fs::read_to_string(dir.path().join("ablate_loss.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 5);
    assert!(!text.contains("NaN") && !text.contains("inf"), "{text}");
}
