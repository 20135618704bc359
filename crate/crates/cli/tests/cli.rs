use std::path::Path;
use std::process::Command;

const SMALL: &str = "M = 2\nN = 2\nK = 2\ngroup_sizes = [1, 1]\nN_tg = 2\nN_tl = 2\nseed = 3\n";

fn drsma() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drsma"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path
}

#[test]
fn default_config_is_valid_toml() {
    let out = drsma().arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = drsma_core::ScenarioConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, drsma_core::ScenarioConfig::default());
}

#[test]
fn sweep_writes_results_traces_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("out");
    let out = drsma()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--scheme", "M_RSMA", "--scheme", "M_SDMA", "--sweep", "P_l_dB=0:10:10", "--realizations", "1"])
        .args(["--max-failures", "100", "--plot", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rows = drsma_core::experiment::read_csv(std::fs::File::open(out_dir.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.sweep_var == "P_l_dB" && r.n_ok == 1));
    let traces = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("trace_"))
        .count();
    assert_eq!(traces, 4);
    assert!(out_dir.join("trace_M_SDMA_1_r0.csv").exists());
    assert!(out_dir.join("plot.png").exists());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 4);
}

#[test]
fn unconverged_runs_set_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "max_iters = 1\n");
    let out = drsma()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--scheme", "M_SDMA", "--realizations", "1", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad_scheme = drsma().args(["run", "--scheme", "NOMA", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!bad_scheme.status.success());
    let bad_sweep = drsma().args(["run", "--sweep", "Q=1:1:2", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!bad_sweep.status.success());
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "K = 3\n").unwrap();
    let bad_cfg = drsma().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(bad_cfg.status.code(), Some(1));
}
