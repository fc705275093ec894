use std::path::Path;
use std::process::Command;

use spinflip::effective::{Atom, MarkedMeasure};
use spinflip::harness::io::read_trajectory_jsonl;
use spinflip::harness::sweep::read_rows;
use spinflip::{Spin, UnitVector};

const SMALL: &str = r#"
[particles]
n = 8
phi = 1e-3

[spin]
epsilon = 0.1

[simulation]
horizon = 0.2
checkpoints = 5

[ensemble]
runs = 4

[sweep]
values = [0.1, 0.05]
observables = ["w2f", "cov"]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spinflip"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_writes_one_record_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("t.jsonl");
    let vel = dir.path().join("u.csv");
    let st = bin()
        .args(["simulate", cfg.to_str().unwrap(), "-o", out.to_str().unwrap(), "--velocity", vel.to_str().unwrap(), "--probes", "3"])
        .status()
        .unwrap();
    assert!(st.success());
    let cps = read_trajectory_jsonl(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(cps.len(), 5);
    assert!(cps.iter().all(|c| c.orientations.len() == 8));
    let text = std::fs::read_to_string(&vel).unwrap();
    assert!(text.starts_with("x,y,z,ux,uy,uz\n"));
    assert_eq!(text.lines().count(), 1 + 27);
}

#[test]
fn ensemble_and_sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = bin().args(["ensemble", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("t,statistic,index,value,stderr,config_hash\n"));
    assert!(text.contains(",covariance,0-1,"));

    let table = dir.path().join("s.csv");
    let run = |values: &str| {
        bin()
            .args(["sweep", cfg.to_str().unwrap(), "--axis", "epsilon", "--values", values, "-o", table.to_str().unwrap()])
            .status()
            .unwrap()
    };
    assert!(run("0.1").success());
    assert!(run("0.1,0.05").success());
    let rows = read_rows(std::fs::File::open(&table).unwrap()).unwrap();
    // 0.1 was not recomputed on restart
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.is_ok() && (r.phi - 1e-3).abs() < 1e-15));

    let fresh = dir.path().join("f.csv");
    assert!(bin()
        .args(["sweep", cfg.to_str().unwrap(), "-o", fresh.to_str().unwrap()])
        .status()
        .unwrap()
        .success());
    assert_eq!(read_rows(std::fs::File::open(&fresh).unwrap()).unwrap(), rows);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[particles]\nnumber = 3\n");
    assert_eq!(bin().args(["simulate", bad.to_str().unwrap()]).output().unwrap().status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(bin().args(["ensemble", missing.to_str().unwrap()]).output().unwrap().status.code(), Some(2));
    // far too large for the spacing hypotheses
    let crowded = write(dir.path(), "crowded.toml", "[particles]\nn = 64\nphi = 0.3\n");
    assert_eq!(bin().args(["validate", crowded.to_str().unwrap()]).output().unwrap().status.code(), Some(3));
    let good = write(dir.path(), "good.toml", SMALL);
    let out = bin().args(["validate", good.to_str().unwrap(), "--probes", "50"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["admissibility"]["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn w2_and_nondim_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let a = Atom { position: nalgebra::Vector3::zeros(), orientation: UnitVector::E3, mark: Some(Spin::Up) };
    let b = Atom { position: nalgebra::Vector3::new(0.3, 0.4, 0.0), ..a };
    for (name, atom) in [("a.csv", a), ("b.csv", b)] {
        let m = MarkedMeasure::uniform(vec![atom]).unwrap();
        m.write_csv(std::fs::File::create(dir.path().join(name)).unwrap()).unwrap();
    }
    let pa = dir.path().join("a.csv");
    let pb = dir.path().join("b.csv");
    let out = bin().args(["w2", pa.to_str().unwrap(), pb.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v["method"], "exact");
    let out = bin().args(["w2", pa.to_str().unwrap(), pb.to_str().unwrap(), "--method", "binned"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["squared"].as_f64().unwrap() >= 0.25);

    let phys = write(dir.path(), "p.toml", "field_scale = 1000.0\n");
    let out = bin().args(["nondim", phys.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = v["b"].as_f64().unwrap();
    assert!(b > 0.5 && b < 2.0, "{b}");
    let neg = write(dir.path(), "n.toml", "viscosity = -1.0\n");
    assert_eq!(bin().args(["nondim", neg.to_str().unwrap()]).output().unwrap().status.code(), Some(2));
}
