use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kawastefan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kawastefan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn flow_reports_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("flow.csv");
    let o = kawastefan(&[
        "flow", "--d", "1", "--ell", "4", "--report", "energy", "--target", "single", "--offset", "1",
        "--dump", dump.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    // (ℓ − x)/ℓ for x = 0..ℓ: 1 + 9/16 + 4/16 + 1/16
    let energy: f64 = stdout(&o).lines().next().unwrap()["energy ".len()..].parse().unwrap();
    assert!((energy - 1.875).abs() < 1e-12);
    let text = fs::read_to_string(&dump).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.starts_with("0,0,1\n"));

    let o = kawastefan(&["flow", "--d", "2", "--ell", "4", "--report", "divergence"]);
    assert!(o.status.success());
    let defect: f64 = stdout(&o).trim()["divergence defect ".len()..].parse().unwrap();
    assert!(defect <= 1e-12);
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("v.csv");
    let o = kawastefan(&[
        "verify", "--suite", "vdecomp", "--N", "4", "--K", "2", "--seed", "5", "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("suite,instance_id,defect_or_margin,bound,pass\n"));
    assert!(text.lines().skip(1).all(|l| l.starts_with("vdecomp,") && l.ends_with(",true")));

    let o = kawastefan(&["verify", "--suite", "nope", "--report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_pairings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let o = kawastefan(&[
        "simulate", "--N", "32", "--K", "1", "--T", "0.02", "--replicas", "3", "--observe-times",
        "0,0.01,0.02", "--phi", "one", "--seed", "9", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,species,pairing_value,replica"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3 * 3 * 2);
    for r in &rows {
        let v: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    // same seed, same bytes
    let again = dir.path().join("sim2.csv");
    let o = kawastefan(&[
        "simulate", "--N", "32", "--K", "1", "--T", "0.02", "--replicas", "3", "--observe-times",
        "0,0.01,0.02", "--phi", "one", "--seed", "9", "--out", again.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn hydro_snapshots_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = kawastefan(&[
        "hydro", "--N", "32", "--K", "3", "--T", "0.05", "--outputs", "2", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    let files: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 3 * 2);
    let f = fs::File::open(dir.path().join("hydro_0002_u1.txt")).unwrap();
    let snap = kawastefan::lattice::read_snapshot(std::io::BufReader::new(f)).unwrap();
    assert_eq!(snap.torus.side(), 32);
    assert_eq!(snap.species, "u1");
    assert!(snap.values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn stefan_residual_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = kawastefan(&[
        "stefan", "--M", "32,64", "--d1", "1", "--d2", "2", "--T", "0.02", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("residual.csv")).unwrap();
    assert!(text.starts_with("psi_id,M,dt,residual\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    assert!(dir.path().join("stefan_m64.txt").exists());
}

const CONFIG: &str = r#"
level = "converge"
seed = 3

[model]
d1 = 1.0
d2 = 0.5
profile = "signed-sine"

[schedule]
kind = "delta_sqrt_log"
delta = [1.0]

[micro]
sides = [16, 32]
replicas = 10
times = [0.0, 0.01]
test_function = "cos1"
epsilon = 0.3

[macro]
sides = [16, 32]
horizon = 0.01
reference_grid = 256
quadrature_points = 1024
time_samples = 4
"#;

fn converge(config: &Path, out: &Path) -> Output {
    kawastefan(&["converge", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn converge_is_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = converge(&cfg, &a);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(converge(&cfg, &b).status.success());
    let report = fs::read(a.join("report.csv")).unwrap();
    assert_eq!(report, fs::read(b.join("report.csv")).unwrap());
    let text = String::from_utf8(report).unwrap();
    assert!(text.starts_with("kind,rule,n,k,replica,time,species,value,lower,upper,pass\n"));
    assert!(text.lines().any(|l| l.starts_with("l2,delta=1,32,")));
    assert!(text.lines().any(|l| l.starts_with("exceedance,delta=1,16,")));

    // the resolved config replays to the same report
    let resolved = a.join("config.resolved");
    let c = dir.path().join("c");
    assert!(converge(&resolved, &c).status.success());
    assert_eq!(
        fs::read(a.join("report.csv")).unwrap(),
        fs::read(c.join("report.csv")).unwrap()
    );
    assert!(a.join("snapshots").read_dir().unwrap().count() > 0);
}

#[test]
fn converge_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, CONFIG.replace("horizon = 0.01", "horizon = 0.01\nhorizn = 1")).unwrap();
    let o = converge(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizn"));
}
