use std::fs;
use std::path::Path;
use std::process::Command;

fn supermodel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_supermodel"))
        .args(args)
        .output()
        .expect("binary runs")
}

const TINY: [&str; 8] = [
    "--config",
    "grid.n=6",
    "--config",
    "run.steps=8",
    "--config",
    "run.epochs=2",
    "--config",
    "supermodel.n=2",
];

fn with_out<'a>(base: &[&'a str], out: &'a str) -> Vec<&'a str> {
    let mut v = base.to_vec();
    v.extend(TINY);
    v.extend(["--out", out]);
    v
}

#[test]
fn train_then_simulate_with_trained_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = supermodel(&with_out(&["train"], out));
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let coupling = dir.path().join("coupling_final.txt");
    assert!(coupling.exists());

    let sim_dir = dir.path().join("sim");
    let sim_out = sim_dir.to_str().unwrap();
    let mut args = with_out(&["simulate"], sim_out);
    let c = coupling.to_str().unwrap();
    args.extend(["--coupling", c]);
    let r = supermodel(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("mean |volume error|"));
    assert!(sim_dir.join("volume_difference.csv").exists());
}

#[test]
fn config_file_and_overrides_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.txt");
    fs::write(&cfg_path, "[supermodel]\nk = 2.0\n\n[run]\nseed = 5\n").unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["experiment", cfg_path.to_str().unwrap()];
    args.extend(TINY);
    args.extend(["--seed", "9", "--out", out.to_str().unwrap()]);
    let r = supermodel(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("k = 2.0"), "{manifest}");
    assert!(manifest.contains("seed = 9"), "{manifest}");
    assert!(manifest.contains("nx = 6"), "{manifest}");
}

#[test]
fn blow_up_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = with_out(&["experiment"], out);
    args.extend(["--config", "supermodel.k=1e100"]);
    let r = supermodel(&args);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("blow-up"));
    assert!(Path::new(out).join("training.csv").exists());
}

#[test]
fn bad_override_is_an_error() {
    let r = supermodel(&["train", "--config", "supermodel.nonsense=1"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error:"));
}

#[test]
fn generate_gt_and_cfl_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let gt_out = dir.path().join("gt");
    let r = supermodel(&with_out(&["generate-gt"], gt_out.to_str().unwrap()));
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(fs::read_dir(&gt_out).unwrap().count() >= 2);

    let cfl_out = dir.path().join("cfl");
    let mut args = with_out(&["cfl-sweep"], cfl_out.to_str().unwrap());
    args.extend(["--dt", "0.1,100", "--steps", "20"]);
    let r = supermodel(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("threshold dt* = 0.1"), "{stdout}");
    assert!(cfl_out.join("cfl_summary.csv").exists());
}
