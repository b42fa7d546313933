use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "n_images=160",
    "n_test_images=60",
    "n_test_pairs=60",
    "n_pairs=128",
    "epochs=2",
    "batch=32",
    "hidden=32",
    "latent_dim=8",
];

fn lgad(args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lgad"));
    cmd.args(args);
    for kv in extra {
        cmd.args(["--set", kv]);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(s.trim_end().lines().count(), 1, "expected one line, got {s:?}");
    s
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn train_small(tmp: &TempDir, name: &str) -> PathBuf {
    let dir = tmp.path().join(name);
    ok(&lgad(&["train", "--output-dir", dir.to_str().unwrap()], SMALL));
    dir
}

fn manifest_hashes(dir: &Path) -> Vec<(String, String)> {
    json(dir.join("manifest.json"))["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["file"].as_str().unwrap().to_string(), o["hash"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn train_then_eval_reports_finite_metrics() {
    let tmp = TempDir::new().unwrap();
    let run = train_small(&tmp, "run");
    for f in ["checkpoint.lgad", "report.csv", "metrics.json", "config.resolved", "manifest.json", "timing.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert_eq!(std::fs::read_to_string(run.join("report.csv")).unwrap().lines().count(), 3);

    let ev = tmp.path().join("eval");
    let ckpt = run.join("checkpoint.lgad");
    ok(&lgad(
        &["eval", "--output-dir", ev.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()],
        SMALL,
    ));
    let m = json(ev.join("metrics.json"));
    for k in ["psnr", "ssim", "rmse", "baseline_psnr"] {
        assert!(m[k].as_f64().unwrap().is_finite(), "{k} = {}", m[k]);
    }
    assert_eq!(m["count"], 60);
    assert!(ev.join("predictions.pgm").is_file());
}

#[test]
fn evaluation_commands_leave_the_checkpoint_untouched() {
    let tmp = TempDir::new().unwrap();
    let run = train_small(&tmp, "run");
    let ckpt = run.join("checkpoint.lgad");
    let before = std::fs::read(&ckpt).unwrap();
    for cmd in ["eval", "probe", "sweep-tau", "swap", "export-latents"] {
        let dir = tmp.path().join(cmd);
        ok(&lgad(
            &[cmd, "--output-dir", dir.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()],
            SMALL,
        ));
        assert!(dir.join("manifest.json").is_file(), "{cmd}");
    }
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);

    let probe = std::fs::read_to_string(tmp.path().join("probe/report.csv")).unwrap();
    let names: Vec<&str> = probe.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["z", "z_v", "z_i"]);
    assert!(tmp.path().join("swap/swap.pgm").is_file());
    let lat = std::fs::read_to_string(tmp.path().join("export-latents/report.csv")).unwrap();
    assert_eq!(lat.lines().count(), 1 + 8);
}

#[test]
fn sweep_tau_writes_nine_rows() {
    let tmp = TempDir::new().unwrap();
    let run = train_small(&tmp, "run");
    let dir = tmp.path().join("sweep");
    ok(&lgad(
        &[
            "sweep-tau",
            "--output-dir",
            dir.to_str().unwrap(),
            "--checkpoint",
            run.join("checkpoint.lgad").to_str().unwrap(),
        ],
        SMALL,
    ));
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "tau,variant_fraction,accuracy_zv,accuracy_z");
    assert_eq!(lines.len(), 10);
    assert!(lines[1].starts_with("0.1,"));
    assert!(lines[9].starts_with("0.9,"));
}

#[test]
fn ablate_emits_three_rows() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("ablate");
    ok(&lgad(&["ablate", "--output-dir", dir.to_str().unwrap()], SMALL));
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["inv_only", "const_only", "both"]);
    assert!(json(dir.join("metrics.json"))["baseline_psnr"].as_f64().unwrap().is_finite());
}

#[test]
fn gen_data_exports_pgm_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("data");
    ok(&lgad(&["gen-data", "--output-dir", dir.to_str().unwrap()], SMALL));
    let csv = std::fs::read_to_string(dir.join("train/manifest.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 160);
    let pgm = std::fs::read(dir.join("test/000000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n28 28\n255\n"));
    assert_eq!(pgm.len(), b"P5\n28 28\n255\n".len() + 28 * 28);
}

#[test]
fn identical_runs_produce_identical_artifacts() {
    let tmp = TempDir::new().unwrap();
    let a = train_small(&tmp, "a");
    let b = train_small(&tmp, "b");
    let (ma, mb) = (json(a.join("manifest.json")), json(b.join("manifest.json")));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    // config.resolved differs only in output_dir.
    let strip = |v: Vec<(String, String)>| v.into_iter().filter(|(f, _)| f != "config.resolved").collect::<Vec<_>>();
    assert_eq!(strip(manifest_hashes(&a)), strip(manifest_hashes(&b)));
    assert_eq!(
        std::fs::read(a.join("checkpoint.lgad")).unwrap(),
        std::fs::read(b.join("checkpoint.lgad")).unwrap()
    );
}

#[test]
fn manifest_hashes_are_git_style_sha256_of_the_files() {
    use sha2::{Digest, Sha256};
    let tmp = TempDir::new().unwrap();
    let run = train_small(&tmp, "run");
    let m = json(run.join("manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 0);
    for (file, hash) in manifest_hashes(&run) {
        let bytes = std::fs::read(run.join(&file)).unwrap();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", bytes.len()));
        h.update(&bytes);
        let want: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hash, want, "{file}");
    }
}

#[test]
fn empty_config_file_resolves_to_defaults() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("empty.cfg");
    std::fs::write(&cfg, "").unwrap();
    let dir = tmp.path().join("out");
    let out = lgad(
        &["gen-data", "--config", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap()],
        &["n_images=20", "n_test_images=10", "n_test_pairs=10"],
    );
    ok(&out);
    let resolved = std::fs::read_to_string(dir.join("config.resolved")).unwrap();
    for line in ["tau=0.5", "lambda_r=1", "lambda_i=1", "lambda_v=1", "latent_dim=32", "epochs=30"] {
        assert!(resolved.lines().any(|l| l == line), "{line} missing from\n{resolved}");
    }
}

#[test]
fn flags_override_the_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# small\nepochs=7\nlatent_dim=12\nn_images=20\nn_test_images=10\nn_test_pairs=10\n").unwrap();
    let dir = tmp.path().join("out");
    ok(&lgad(
        &["gen-data", "--config", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap()],
        &["epochs=3"],
    ));
    let resolved = std::fs::read_to_string(dir.join("config.resolved")).unwrap();
    assert!(resolved.lines().any(|l| l == "epochs=3"));
    assert!(resolved.lines().any(|l| l == "latent_dim=12"));
}

#[test]
fn out_of_range_value_names_the_key() {
    let out = lgad(&["train"], &["tau=1.5"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).contains("tau"));
}

#[test]
fn unknown_key_is_rejected() {
    let out = lgad(&["train"], &["learning_rate=0.1"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).contains("learning_rate"));
}

#[test]
fn missing_checkpoint_fails_with_one_line() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("out");
    for args in [
        vec!["eval", "--output-dir", dir.to_str().unwrap()],
        vec!["probe", "--output-dir", dir.to_str().unwrap(), "--checkpoint", "/nonexistent/model.lgad"],
    ] {
        let out = lgad(&args, SMALL);
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr_line(&out).contains("checkpoint"));
    }
}

#[test]
fn unwritable_output_dir_fails() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("occupied");
    std::fs::write(&file, "x").unwrap();
    let out = lgad(&["gen-data", "--output-dir", file.join("sub").to_str().unwrap()], SMALL);
    assert!(!out.status.success());
    assert!(stderr_line(&out).contains("output dir"));
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("bad.lgad");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = lgad(
        &[
            "eval",
            "--output-dir",
            tmp.path().join("o").to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
        SMALL,
    );
    assert!(!out.status.success());
    stderr_line(&out);
}
