use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "
[dataset]
per_class_count = 10
classes = 4
[dtjscc]
epochs = 3
warmup_epochs = 1
[sweep]
channels = rician, rayleigh
ks = 32
psnr_grid = 0, 12
trials = 2
seeds = 0, 1
[csa]
rounds = 3
seeds = 0
";

fn ka_band() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/ka_band.cfg")
}

fn semcom(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semcom")).args(args).current_dir(dir).env_remove("SEMCOM_SEED").output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = semcom(&[], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_and_zero_workers_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(semcom(&["sweep", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(semcom(&["linkbudget", "--workers", "0"], dir.path()).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = semcom(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("linkbudget"));
}

#[test]
fn missing_or_bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = semcom(&["linkbudget", "--config", "nope.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.cfg"));
    fs::write(dir.path().join("bad.cfg"), "[geometry]\naltitude = 3\n").unwrap();
    assert_eq!(semcom(&["linkbudget", "--config", "bad.cfg"], dir.path()).status.code(), Some(2));
}

#[test]
fn linkbudget_prints_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ka_band().display().to_string();
    let o = semcom(&["linkbudget", "--config", &cfg, "--out", "lb"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("176.956186"), "{text}");
    assert!(text.contains("177.756186"), "{text}");
    let lb = dir.path().join("lb");
    let csv = fs::read_to_string(lb.join("linkbudget.csv")).unwrap();
    assert!(csv.starts_with("d_km,fspl_db,sf_db,gas_db,scint_db,total_db,zeta_db,doppler_hz\n600,"));
    let psk = fs::read_to_string(lb.join("constellation_16psk.csv")).unwrap();
    assert_eq!(psk.lines().count(), 17);
    assert_eq!(fs::read_to_string(lb.join("realizations.csv")).unwrap().lines().count(), 129);
}

#[test]
fn sweep_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for out in ["a", "b"] {
        assert_eq!(semcom(&["sweep", "--config", &cfg, "--out", out, "--seed", "5"], dir.path()).status.code(), Some(0));
    }
    let env = Command::new(env!("CARGO_BIN_EXE_semcom"))
        .args(["sweep", "--config", &cfg, "--out", "c"])
        .env("SEMCOM_SEED", "5")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(0));
    assert_eq!(semcom(&["sweep", "--config", &cfg, "--out", "d", "--seed", "6"], dir.path()).status.code(), Some(0));
    let read = |d: &str| fs::read(dir.path().join(d).join("sweep.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
    assert_ne!(read("a"), read("d"));
    assert_eq!(String::from_utf8(read("a")).unwrap().lines().count(), 1 + 2 * 2 * 2);
    let svg = fs::read_to_string(dir.path().join("a/sweep.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn data_train_confusion_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(semcom(&["gen-data", "--config", &cfg, "--out", "data"], dir.path()).status.code(), Some(0));
    for f in ["train_t0.msit", "val_t1.msit", "test_t0.msit", "dataset_summary.csv"] {
        assert!(dir.path().join("data").join(f).is_file(), "{f}");
    }
    let o = semcom(&["train", "--config", &cfg, "--data", "data", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = semcom(&["confusion", "--config", &cfg, "--data", "data", "--system", "run/system", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run/confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);
    assert!(stdout(&o).contains("balanced top1"));
}

#[test]
fn corrupt_system_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    fs::create_dir(dir.path().join("sys")).unwrap();
    fs::write(dir.path().join("sys/encoder.mnn"), b"MNN").unwrap();
    let o = semcom(&["confusion", "--config", &cfg, "--system", "sys"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn csa_and_fedavg_write_round_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = semcom(&["csa", "--config", &cfg, "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = semcom(&["fedavg", "--config", &cfg, "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = dir.path().join("r");
    for f in ["csa_seed0.csv", "noncsa_seed0.csv", "fedavg_seed0.csv", "csa_seed0/covariance.mnn"] {
        assert!(r.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(r.join("csa_seed0.csv")).unwrap();
    assert!(log.starts_with("round,side,top1,ce_loss,sa_loss,bits_tx\n"));
}

#[test]
fn unwritable_output_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let cfg = small_config(dir.path());
    let o = semcom(&["sweep", "--config", &cfg, "--out", "blocker/sub"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blocker"));
}
