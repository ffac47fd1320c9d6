use std::path::PathBuf;
use std::process::{Command, Output};

use metrise3d_cli::commands::{self, parse_box, VerifyStatus};
use metrise3d_cli::{InputDocument, Report, SigmaDocument};
use metrise3d_core::fixtures;
use metrise3d_core::solver::Options;

fn docs(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metrise3d"))
        .args(args)
        .env_remove(commands::TOL_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn shipped_example_matches_library_fixture() {
    let doc = InputDocument::load(&docs("example.json")).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                assert_eq!(doc.gamma[a][b][c], fixtures::EXAMPLE_GAMMA[a][b][c]);
            }
        }
    }
    assert_eq!(doc.epsilon.as_deref(), Some(fixtures::EXAMPLE_EPSILON));
}

#[test]
fn analyze_example_is_metrisable() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let o = run(&[
        "analyze",
        docs("example.json").to_str().unwrap(),
        "--point",
        "1,1,1",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("verdict: Metrisable"));
    let report: Report = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let g = report.metric.unwrap().samples[0].g;
    let k = g[3];
    for (x, e) in g.iter().zip([4.0, 0.0, 0.0, 1.0, 0.0, 1.0]) {
        assert!((x / k - e).abs() < 1e-9, "{g:?}");
    }
}

#[test]
fn analyze_flat_is_projectively_flat() {
    let o = run(&["analyze", docs("flat.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verdict: ProjectivelyFlat"));
    assert!(stdout(&o).contains("degree of mobility: 10"));
}

#[test]
fn exit_codes() {
    let example = docs("example.json");
    let o = run(&["analyze", example.to_str().unwrap(), "--point", "0,0,0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["analyze", "/nonexistent/connection.json"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"gamma": [[["x^"]]]}"#).unwrap();
    assert_eq!(run(&["analyze", bad.to_str().unwrap()]).status.code(), Some(1));

    let asym = dir.path().join("asym.json");
    let mut doc = InputDocument::load(&example).unwrap();
    doc.gamma[0][1][0] = "x".into();
    std::fs::write(&asym, serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(run(&["analyze", asym.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn perturbed_example_fails_at_q() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("perturbed.json");
    let mut doc = InputDocument::load(&docs("example.json")).unwrap();
    doc.gamma[0][0][1] = format!("{} + 0.1*x", doc.gamma[0][0][1]);
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = run(&["analyze", path.to_str().unwrap(), "--point", "1,1,1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verdict: NotMetrisable (QNonzero)"), "{}", stdout(&o));
}

#[test]
fn verify_outcomes() {
    let example = docs("example.json");
    let o = run(&[
        "verify",
        example.to_str().unwrap(),
        "--sigma",
        docs("example_sigma.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Pass"), "{}", stdout(&o));

    let dir = tempfile::tempdir().unwrap();
    let identity = dir.path().join("identity.json");
    std::fs::write(&identity, r#"{"sigma": ["1", "0", "0", "1", "0", "1"]}"#).unwrap();
    let o = run(&["verify", example.to_str().unwrap(), "--sigma", identity.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Fail"), "{}", stdout(&o));

    let zero = dir.path().join("zero.json");
    std::fs::write(&zero, r#"{"sigma": [["0","0","0"],["0","0","0"],["0","0","0"]]}"#).unwrap();
    let o = run(&["verify", example.to_str().unwrap(), "--sigma", zero.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("REJECTED"));
}

#[test]
fn verify_library_statuses() {
    let doc = InputDocument::load(&docs("example.json")).unwrap();
    let spec = doc.connection().unwrap();
    let sigma = SigmaDocument::load(&docs("example_sigma.json")).unwrap().components().unwrap();
    let r = commands::verify(&spec, &sigma, [1.0, 1.0, 1.0], 10, 1e-9).unwrap();
    assert_eq!(r.status, VerifyStatus::Pass);
    assert_eq!(r.points.len(), 10);
    // deterministic sampling
    assert_eq!(r, commands::verify(&spec, &sigma, [1.0, 1.0, 1.0], 10, 1e-9).unwrap());
}

#[test]
fn report_round_trips_through_json() {
    let doc = InputDocument::load(&docs("example.json")).unwrap();
    let spec = doc.connection().unwrap();
    for p in [[1.0, 1.0, 1.0], [0.7, 1.3, 0.9]] {
        let r = commands::analyze(&spec, doc.name.clone(), p, &Options::default()).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(r, back);
    }
    let flat = InputDocument::load(&docs("flat.json")).unwrap();
    let r = commands::analyze(&flat.connection().unwrap(), None, [0.0; 3], &Options::default()).unwrap();
    assert_eq!(r, serde_json::from_str::<Report>(&serde_json::to_string(&r).unwrap()).unwrap());
}

#[test]
fn single_point_scan_equals_analyze() {
    let doc = InputDocument::load(&docs("example.json")).unwrap();
    let spec = doc.connection().unwrap();
    let axes = parse_box("0.8:2:1,1.1:2:1,0.9:2:1").unwrap();
    let scanned = commands::scan_reports(&spec, doc.name.clone(), &axes, &Options::default());
    assert_eq!(scanned.len(), 1);
    let (p, r) = &scanned[0];
    assert_eq!(*p, [0.8, 1.1, 0.9]);
    let direct = commands::analyze(&spec, doc.name.clone(), *p, &Options::default()).unwrap();
    assert_eq!(r.as_ref().unwrap().without_timings(), direct.without_timings());
}

#[test]
fn scan_csv_layout_and_domain_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan.csv");
    let o = run(&[
        "scan",
        docs("example.json").to_str().unwrap(),
        "--box",
        "1:1:1,1:1:1,0:1:2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y,z,verdict,|Q|,discriminant,φ,ψ,residual");
    assert!(lines[1].starts_with("1.0,1.0,0.0,DomainError"));
    assert!(lines[2].starts_with("1.0,1.0,1.0,Metrisable"));
    assert_eq!(lines.len(), 3);

    let o = run(&["scan", docs("flat.json").to_str().unwrap(), "--box", "-1:1:2,0:1:2,-1:0:2"]);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().skip(1).all(|l| l.contains("ProjectivelyFlat")));
}

#[test]
fn tolerance_environment_variable() {
    let o = Command::new(env!("CARGO_BIN_EXE_metrise3d"))
        .args(["analyze", docs("flat.json").to_str().unwrap()])
        .env(commands::TOL_ENV, "1e-7")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("tol: 1e-7"), "{}", stdout(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_metrise3d"))
        .args(["analyze", docs("flat.json").to_str().unwrap(), "--tol", "1e-5"])
        .env(commands::TOL_ENV, "1e-7")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("tol: 1e-5"));
    let o = Command::new(env!("CARGO_BIN_EXE_metrise3d"))
        .args(["analyze", docs("flat.json").to_str().unwrap()])
        .env(commands::TOL_ENV, "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
