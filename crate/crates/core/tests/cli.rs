use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmls-vec")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_from_sample_to_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let (cloud, frames, op, eig) = (
        dir.path().join("c.csv"),
        dir.path().join("f.csv"),
        dir.path().join("op.txt"),
        dir.path().join("eig.csv"),
    );
    let o = run(&["sample", "--manifold", "sphere", "--n", "300", "--seed", "2", "--out", s(&cloud)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["frames", "--cloud", s(&cloud), "--manifold", "sphere", "--k", "40", "--out", s(&frames)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("projection_error"));
    let o = run(&[
        "assemble", "--cloud", s(&cloud), "--manifold", "sphere", "--frames", s(&frames), "--k", "40", "--l", "3",
        "--method", "intrinsic", "--out", s(&op),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["eig", "--operator", s(&op), "--count", "6", "--out", s(&eig)]);
    assert!(o.status.success());
    let vals = gmls_vec::io::read_spectrum(&eig).unwrap();
    assert_eq!(vals.len(), 6);
    // leading Bochner eigenvalue on the unit sphere is −1
    assert!((vals[0].re + 1.0).abs() < 0.5, "{vals:?}");
}

#[test]
fn poisson_and_evolve_write_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("c.csv");
    assert!(run(&["sample", "--manifold", "torus3", "--n", "400", "--out", s(&cloud)]).status.success());
    let out = dir.path().join("poisson");
    let o = run(&[
        "poisson", "--cloud", s(&cloud), "--manifold", "torus3", "--k", "25", "--l", "2", "--kind", "hodge",
        "--field", "torus_sinsin", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(text.contains("fe ") && text.contains("ie "), "{text}");
    assert!(out.join("manifest.json").exists());

    let out = dir.path().join("burgers");
    let o = run(&[
        "evolve", "--cloud", s(&cloud), "--manifold", "torus3", "--k", "25", "--l", "2", "--field", "torus_burgers",
        "--forcing", "burgers", "--dt", "0.001", "--t-end", "0.004", "--every", "0.002", "--stepper", "cnab",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("se "));
    for f in ["snapshot_00000.csv", "snapshot_00001.csv", "snapshot_00002.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn study_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    std::fs::write(
        &cfg,
        "# small projection study\nstudy = projection\nmanifold = torus3\nn = 200, 400, 800\nk = 20\nl = 2\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["study", "--config", s(&cfg), "--set", "seeds=0,1", "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("projection_error slope"));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("manifold,method,kind,l,K,N,seed,metric,value,seconds"));
    assert_eq!(report.lines().count(), 1 + 6);
    assert!(out.join("slopes.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // validation: missing input file
    let o = run(&["assemble", "--cloud", s(&dir.path().join("missing.csv")), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    // validation: unknown configuration key
    let o = run(&["study", "--set", "colour=blue"]);
    assert_eq!(o.status.code(), Some(2));
    // validation: N list not increasing
    let o = run(&["study", "--set", "n=800,400,1600"]);
    assert_eq!(o.status.code(), Some(2));
    // numerical: stencils too small for the fit
    let cloud = dir.path().join("c.csv");
    assert!(run(&["sample", "--manifold", "sphere", "--n", "100", "--out", s(&cloud)]).status.success());
    let o = run(&[
        "assemble", "--cloud", s(&cloud), "--manifold", "sphere", "--k", "8", "--l", "3", "--out",
        s(&dir.path().join("op.txt")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
