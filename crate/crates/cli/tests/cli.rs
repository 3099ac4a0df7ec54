use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use partialpool::io::write_dataset;
use partialpool::simulation::{simulate_dataset, DgpConfig};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_partialpool"));
    c.env_remove("PARTIALPOOL_THREADS").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated dataset with columns `cluster_id,z,y,x,v`.
fn simulated_csv(dir: &TempDir, clusters: usize, seed: u64) -> PathBuf {
    let (ds, _) = simulate_dataset(&DgpConfig { clusters, seed, ..DgpConfig::default() });
    let p = dir.path().join(format!("sim{seed}.csv"));
    write_dataset(&ds, fs::File::create(&p).unwrap()).unwrap();
    p
}

fn fixture_csv(dir: &TempDir) -> PathBuf {
    let p = dir.path().join("fixture.csv");
    let o = run(&["fixture", "--seed", "1", "--out", s(&p)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    p
}

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

#[test]
fn malformed_treatment_is_an_input_error_naming_the_line() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "bad.csv", "cluster_id,z,y,x\na,1,1.0,0.1\na,0,0.5,0.2\nb,maybe,1.0,0.3\nb,0,1.0,0.3\n");
    let o = run(&["estimate", "--input", s(&p), "--ps", "full-none", "--ipw", "full"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("line 4") && err.contains("`z`"), "{err}");

    let p = write(&dir, "nonbinary.csv", "cluster_id,z,y\na,1,1.0\na,2,0.5\n");
    let o = run(&["group", "--input", s(&p)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn balance_input_errors() {
    let dir = TempDir::new().unwrap();
    let data = fixture_csv(&dir);
    let w = write(&dir, "w.csv", "weight\n1\n2\n");
    let o = run(&["balance", "--input", s(&data), "--cluster-cols", "region,locale", "--weights", s(&w), "--covariates", "ses"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("weights"), "{}", stderr(&o));

    let o = run(&["balance", "--input", s(&data), "--cluster-cols", "region,locale", "--covariates", "region:cat:0|1|2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("region"), "{}", stderr(&o));
}

#[test]
fn estimation_failure_exit_code() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "treated.csv", "cluster_id,z,y,x\na,1,1.0,0.1\na,1,0.5,0.2\nb,1,1.0,0.3\nb,1,2.0,0.4\n");
    let o = run(&["estimate", "--input", s(&p), "--ps", "full-none", "--ipw", "full"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn single_group_and_fixture_grouping() {
    let dir = TempDir::new().unwrap();
    let data = simulated_csv(&dir, 25, 1);
    let o = run(&["--format", "csv", "group", "--input", s(&data), "--cluster-cols", "v", "--groups", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("0")));

    let fixture = fixture_csv(&dir);
    let out = dir.path().join("groups.csv");
    let o = run(&["--format", "csv", "group", "--input", s(&fixture), "--cluster-cols", "region,locale", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("cluster_id,p_h,n_h,group,p_g,delta_h"));
    assert_eq!(text.lines().count(), 779);
    assert!(dir.path().join("groups.csv.config.json").exists());
}

#[test]
fn no_covariates_gives_marginal_rate() {
    let dir = TempDir::new().unwrap();
    let data = simulated_csv(&dir, 30, 2);
    let weights = dir.path().join("w.csv");
    let o = run(&[
        "estimate", "--input", s(&data), "--cluster-cols", "v", "--ps", "full,none", "--ipw", "full", "--omit", "x,v",
        "--weights-out", s(&weights),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&weights).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cluster_id,z,score,weight"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let rate = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    for (_, e) in rows {
        assert!((e - rate).abs() < 1e-6, "score {e} vs rate {rate}");
    }
}

#[test]
fn smoke_simulation_is_quick() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    let o = run(&["--format", "csv", "simulate", "--config", SMOKE, "--out", s(dir.path())]);
    let took = start.elapsed();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(took.as_secs_f64() < 10.0, "took {took:?}");
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("alpha4,beta4,kappa4,"));
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn config_unknown_keys_rejected() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(SMOKE).unwrap() + "\nreplicatez = 3\n";
    let cfg = write(&dir, "bad.toml", &text);
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("replicatez"), "{}", stderr(&o));
}

/// Every machine output is byte-identical across repeated runs at 1 and 8
/// threads. The output path is echoed in the config, so it is reused.
#[test]
fn outputs_do_not_depend_on_threads() {
    let dir = TempDir::new().unwrap();
    let data = simulated_csv(&dir, 40, 3);
    let cases: Vec<Vec<String>> = vec![
        vec!["group", "--method", "random", "--groups", "4", "--seed", "9"],
        vec!["estimate", "--ps", "full-RE", "--ipw", "cluster", "--bootstrap", "100", "--seed", "5"],
        vec!["estimate", "--ps", "group-none", "--groups", "4", "--small-arm", "pooled"],
    ]
    .into_iter()
    .map(|v| {
        let mut v: Vec<String> = v.into_iter().map(String::from).collect();
        v.extend(["--input", s(&data), "--cluster-cols", "v"].map(String::from));
        v
    })
    .collect();
    for (k, args) in cases.iter().enumerate() {
        let mut outputs = Vec::new();
        let out = dir.path().join(format!("case{k}.json"));
        for threads in ["1", "1", "8", "8"] {
            let mut full = vec!["--threads".to_string(), threads.to_string()];
            full.extend(args.iter().cloned());
            full.extend(["--out".to_string(), s(&out).to_string()]);
            let o = bin().args(&full).output().unwrap();
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
            outputs.push(fs::read(&out).unwrap());
        }
        assert!(outputs.iter().all(|o| o == &outputs[0]), "case {args:?} differs");
    }

    let mut sims = Vec::new();
    let out = dir.path().join("sim");
    for threads in ["1", "1", "8", "8"] {
        let o = run(&["--threads", threads, "--format", "csv", "simulate", "--config", SMOKE, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        sims.push(fs::read(out.join("results.csv")).unwrap());
    }
    assert!(sims.iter().all(|o| o == &sims[0]));
}
