use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use homlab::fields::io::{read_field, sidecar_path, FieldSidecar};
use serde_json::Value;

const CONSTANT: &str = r#"
seed = 5
[field]
kind = "constant"
level = 2
matrix = [[2.0, 0.0], [0.0, 2.0]]
[ergodic]
scales = [1, 2]
samples = 2
[homexp]
n_min = 1
n_max = 2
seeds = 2
a_bar = [[2.0, 0.0], [0.0, 2.0]]
target = { family = "affine", p = [1.0, -0.5] }
"#;

fn homlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("HOMLAB_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), config).unwrap();
    dir
}

fn report(dir: &Path, name: &str) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap();
    assert_eq!(v["config_fingerprint"].as_str().unwrap().len(), 64);
    assert!(v["config"].is_object());
    v["report"].clone()
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = homlab(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen-field", "coarsegrain", "ellipticity", "ergodic", "homogenize", "cascade-verify", "selftest"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert_eq!(homlab(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = setup(CONSTANT);
    let p = dir.path();
    let out = homlab(p, &["coarsegrain", "-c", "c.toml", "--set", "norms.s=0.6", "--set", "norms.t=0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s + t < 1"));
    assert_eq!(homlab(p, &["gen-field", "-c", "missing.toml"]).status.code(), Some(2));
    let out = homlab(p, &["homogenize", "-c", "c.toml", "--set", "homexp.alpha=0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn constant_field_level_two_has_81_cells_and_is_deterministic() {
    let dir = setup(CONSTANT);
    let p = dir.path();
    assert_eq!(homlab(p, &["gen-field", "-c", "c.toml", "-o", "out"]).status.code(), Some(0));
    let (field, res) = read_field(&p.join("out/field.bin")).unwrap();
    assert_eq!((field.cell_count(), res), (81, 1));
    let first = fs::read(p.join("out/field.bin")).unwrap();
    let first_sidecar = fs::read(sidecar_path(&p.join("out/field.bin"))).unwrap();
    assert_eq!(homlab(p, &["gen-field", "-c", "c.toml", "-o", "out"]).status.code(), Some(0));
    assert_eq!(first, fs::read(p.join("out/field.bin")).unwrap());
    assert_eq!(first_sidecar, fs::read(sidecar_path(&p.join("out/field.bin"))).unwrap());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let config = CONSTANT.replace("kind = \"constant\"\nlevel = 2\nmatrix = [[2.0, 0.0], [0.0, 2.0]]", "kind = \"lognormal_iso\"\nlevel = 2\nsigma = 0.5");
    let dir = setup(&config);
    let p = dir.path();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for cmd in ["coarsegrain", "ellipticity", "ergodic"] {
            let out = homlab(p, &[cmd, "-c", "c.toml", "-o", "out", "--set", "coarsegrain.cache=\"off\""]);
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        }
        let files: Vec<Vec<u8>> = ["coarsegrain.csv", "coarsegrain.json", "ellipticity.csv", "ellipticity.json", "ergodic.csv", "ergodic.json"]
            .iter()
            .map(|f| fs::read(p.join("out").join(f)).unwrap())
            .collect();
        snapshots.push(files);
    }
    assert_eq!(snapshots[0], snapshots[1]);
    let meta: Value = serde_json::from_str(&fs::read_to_string(p.join("out/ergodic.meta.json")).unwrap()).unwrap();
    assert!(meta["created_unix"].as_u64().unwrap() > 0);
}

#[test]
fn every_csv_carries_the_fingerprint() {
    let dir = setup(CONSTANT);
    let p = dir.path();
    assert_eq!(homlab(p, &["ellipticity", "-c", "c.toml", "-o", "out"]).status.code(), Some(0));
    report(p, "ellipticity.json");
    let env: Value = serde_json::from_str(&fs::read_to_string(p.join("out/ellipticity.json")).unwrap()).unwrap();
    let fingerprint = env["config_fingerprint"].as_str().unwrap();
    let mut rdr = csv::Reader::from_path(p.join("out/ellipticity.csv")).unwrap();
    assert_eq!(&rdr.headers().unwrap()[0], "config_fingerprint");
    for rec in rdr.records() {
        assert_eq!(&rec.unwrap()[0], fingerprint);
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(p.join("out/cache.bin.json")).unwrap()).unwrap();
    assert_eq!(manifest["run_fingerprint"].as_str(), Some(fingerprint));
}

#[test]
fn constant_field_end_to_end() {
    let dir = setup(CONSTANT);
    let p = dir.path();
    let c = 2.0;
    for cmd in ["coarsegrain", "ellipticity", "ergodic", "homogenize"] {
        let out = homlab(p, &[cmd, "-c", "c.toml", "-o", "out"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cg = report(p, "coarsegrain.json");
    let a = &cg["top"]["a"];
    for i in 0..4 {
        for j in 0..4 {
            let want = match (i == j, i < 2) {
                (true, true) => c,
                (true, false) => 1.0 / c,
                _ => 0.0,
            };
            assert!((a[i][j].as_f64().unwrap() - want).abs() < 1e-10);
        }
    }
    let ell = report(p, "ellipticity.json");
    assert!((ell["constants"]["lambda_s"].as_f64().unwrap() - c).abs() < 1e-10);
    assert!((ell["constants"]["Lambda_t"].as_f64().unwrap() - c).abs() < 1e-10);
    let erg = report(p, "ergodic.json");
    let a_bar = &erg["homogenized"]["a_bar"];
    assert!((a_bar[0][0].as_f64().unwrap() - c).abs() < 1e-10);
    assert!(a_bar[0][1].as_f64().unwrap().abs() < 1e-10);
    let mut rdr = csv::Reader::from_path(p.join("out/homogenize.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let grad: f64 = rec[3].parse().unwrap();
        let flux: f64 = rec[4].parse().unwrap();
        assert!(grad <= 1e-10 && flux <= 1e-10, "{rec:?}");
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn output_dir_precedence() {
    let dir = setup(&format!("output_dir = \"from_config\"\n{CONSTANT}"));
    let p = dir.path();
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_homlab"));
        cmd.args(["gen-field", "-c", "c.toml"]).current_dir(p).env_remove("HOMLAB_OUTPUT_DIR");
        if let Some(e) = env {
            cmd.env("HOMLAB_OUTPUT_DIR", e);
        }
        if let Some(f) = flag {
            cmd.args(["-o", f]);
        }
        assert!(cmd.status().unwrap().success());
    };
    run(None, None);
    assert!(p.join("from_config/field.bin").exists());
    run(Some("from_env"), None);
    assert!(p.join("from_env/field.bin").exists());
    run(Some("from_env2"), Some("from_flag"));
    assert!(p.join("from_flag/field.bin").exists());
    assert!(!p.join("from_env2").exists());
}

#[test]
fn cascade_field_is_positive_and_sidecar_echoes_spec() {
    let dir = setup("[field]\nkind = \"cascade_iso\"\nlevel = 2\nsigma = 0.3\n");
    let p = dir.path();
    assert_eq!(homlab(p, &["gen-field", "-c", "c.toml", "-o", "out"]).status.code(), Some(0));
    let (field, _) = read_field(&p.join("out/field.bin")).unwrap();
    assert!(field.raw_s().chunks(4).all(|c| c[0] > 0.0 && c[3] > 0.0));
    let sidecar: FieldSidecar =
        serde_json::from_str(&fs::read_to_string(sidecar_path(&p.join("out/field.bin"))).unwrap()).unwrap();
    let spec = sidecar.spec.unwrap();
    assert_eq!(spec.level, 2);
    assert!(matches!(spec.kind, homlab::fields::FieldKind::CascadeIso { sigma, .. } if sigma == 0.3));
    assert!(sidecar.config_fingerprint.is_some());
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = homlab(dir.path(), &["selftest", "-o", "st"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("st/selftest.json").exists());
}
