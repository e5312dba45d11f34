use std::path::Path;
use std::process::Command;

fn wgf(sub: &str, config: &Path, out: &Path, seed: u64) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wgf"))
        .args([sub, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", &seed.to_string(), "--threads", "2"])
        .output()
        .unwrap()
}

const SMALL: &str = "[time]\nhorizon = 0.05\nsteps = 5\n[grid]\nintervals = 100\n";

#[test]
fn experiment_writes_manifest_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig1.toml");
    std::fs::write(&cfg, format!("{SMALL}[experiment]\nid = \"fig1_density\"\n")).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(wgf("experiment", &cfg, &a, 5).status.code(), Some(0));
    assert_eq!(wgf("experiment", &cfg, &b, 5).status.code(), Some(0));
    for name in ["density_jko.csv", "density_reference.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    assert!(a.join("manifest.json").exists());
}

#[test]
fn json_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"time": {"horizon": 0.05, "steps": 5}, "grid": {"intervals": 100}}"#).unwrap();
    assert_eq!(wgf("fp-run", &cfg, &dir.path().join("o"), 1).status.code(), Some(0));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grid]\nbogus = 1\n").unwrap();
    assert_eq!(wgf("jko-run", &cfg, &dir.path().join("o"), 1).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(wgf("jko-run", &missing, &dir.path().join("o"), 1).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    // a step far too large for the Gaussian restriction loses definiteness
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bw.toml");
    std::fs::write(
        &cfg,
        "[model]\npotential = { id = \"quartic\" }\n[time]\nhorizon = 2.0\nsteps = 2\n[bw]\ndt = 1.0\nmu0 = [3.0]\nsigma0 = [[4.0]]\n",
    )
    .unwrap();
    let out = wgf("bw-run", &cfg, &dir.path().join("o"), 1);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        wgf_core::experiments::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 8);
}
