//! End-to-end behaviour of the `whdpd` binary on small problems.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const GOLDEN_SUMMARY_HEADER: &str = "fingerprint,method,status,iterations,wall_s,f_final,\
train_nmse_db_initial,train_nmse_db_final,val_nmse_db_final,t_-30db,t_-35db,t_-37db,t_-39db";

fn whdpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whdpd")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, optimizer: &str, budget: &str) -> String {
    let p = dir.join("exp.toml");
    let text = format!(
        r#"schema_version = 1
seed = 3

[dataset]
kind = "synthetic"
m = 512
seed = 7

[model]
residual = true

[[model.layers]]
blocks = 2
cs_width = 3
lut_width = 3
branch_width = 3
branches = 2
gain_order = 2

[optimizer]
{optimizer}

[budget]
{budget}
"#
    );
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn trace_columns(path: &Path) -> Vec<String> {
    // every column but wall_s
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split_once(',').map_or(l.to_owned(), |(_, rest)| rest.to_owned()))
        .collect()
}

#[test]
fn run_writes_fingerprinted_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "method = \"lbfgs\"\nhistory = 10", "max_iterations = 5");
    let out = tmp.path().join("run");
    let o = whdpd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), GOLDEN_SUMMARY_HEADER);
    let fp = lines.next().unwrap().split(',').next().unwrap().to_owned();
    assert_eq!(fp.len(), 16);
    for f in ["trace.csv", "summary.json", "params.json", "config.toml"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.contains(&fp), "{f} lacks the fingerprint");
    }
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with(&format!("# status=budget fingerprint={fp}\n")));
    // the resolved config reproduces the fingerprint
    let again = whdpd_bench::ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(again.fingerprint(), fp);
}

#[test]
fn reruns_match_outside_wall_clock() {
    let tmp = TempDir::new().unwrap();
    for (i, opt) in ["method = \"ssm\"\nbatch = 20", "method = \"stochastic\"\nalgorithm = \"adam\"\nbatch_size = 64"]
        .iter()
        .enumerate()
    {
        let cfg = small_config(tmp.path(), opt, "max_iterations = 16");
        let mut traces = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("r{i}_{rep}"));
            let o = whdpd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            traces.push(trace_columns(&out.join("trace.csv")));
        }
        assert_eq!(traces[0], traces[1], "{opt}");
    }
}

#[test]
fn config_errors_exit_2_with_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "method = \"sdm\"", "max_iterations = 1\nbogus_key = 1");
    let o = whdpd(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus_key") && err.contains("line"), "{err}");
    let o = whdpd(&["run", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_keeps_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(
        tmp.path(),
        "method = \"stochastic\"\nalgorithm = \"sgd\"\nstep_size = 1e6\nrecord_every = 1",
        "max_iterations = 50",
    );
    let out = tmp.path().join("run");
    let o = whdpd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("trace.csv")).unwrap().starts_with("# status=diverged"));
}

#[test]
fn generate_then_run_from_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "method = \"sdm\"", "max_iterations = 2");
    let data = tmp.path().join("data.csv");
    let o = whdpd(&["generate", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(&cfg).unwrap().replace(
        "kind = \"synthetic\"\nm = 512\nseed = 7",
        &format!("kind = \"file\"\npath = {:?}", data.to_str().unwrap()),
    );
    let file_cfg = tmp.path().join("file.toml");
    fs::write(&file_cfg, text).unwrap();
    let a = whdpd(&["run", "--config", &cfg]);
    let b = whdpd(&["run", "--config", file_cfg.to_str().unwrap()]);
    assert!(a.status.success() && b.status.success());
    // same samples, so same objective values
    let f_final = |o: &Output| {
        let s = String::from_utf8_lossy(&o.stdout).into_owned();
        s.lines().nth(1).unwrap().split(',').nth(5).unwrap().to_owned()
    };
    assert_eq!(f_final(&a), f_final(&b));
}

#[test]
fn overfit_reports_finite_gaps() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "method = \"lbfgs\"\nhistory = 5", "max_iterations = 5");
    let out = tmp.path().join("of");
    let o = whdpd(&["overfit", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("overfit.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (r, frac) in rows.iter().zip(["0.05", "0.2", "0.75"]) {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!(cells[0], frac);
        assert!(cells[6].parse::<f64>().unwrap().is_finite());
    }
}

const SWEEP_BASE: &str = r#"schema_version = 1
checkpoints_s = [0.0, 100.0]

[base]
schema_version = 1

[base.dataset]
kind = "synthetic"
m = 256

[base.optimizer]
method = "sdm"

[base.budget]
max_iterations = 2
"#;

fn sweep_entry(group: &str, layers: usize, blocks: usize) -> String {
    let mut s = format!("\n[[entry]]\ngroup = \"{group}\"\n[entry.model]\nresidual = true\n");
    for _ in 0..layers {
        s.push_str(&format!(
            "[[entry.model.layers]]\nblocks = {blocks}\ncs_width = 3\nlut_width = 3\nbranch_width = 3\nbranches = 1\ngain_order = 1\n"
        ));
    }
    s
}

#[test]
fn sweep_tables_and_group_check() {
    let tmp = TempDir::new().unwrap();
    let write = |name: &str, entries: &str| {
        let p = tmp.path().join(name);
        fs::write(&p, format!("{SWEEP_BASE}{entries}")).unwrap();
        p.to_str().unwrap().to_owned()
    };

    let o = whdpd(&["sweep", "--config", &write("empty.toml", "")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);

    // (2 layers, 3 blocks) and (3 layers, 2 blocks): 10 weights per block
    let swapped = write("swapped.toml", &(sweep_entry("g", 2, 3) + &sweep_entry("g", 3, 2)));
    let out = tmp.path().join("sw");
    let o = whdpd(&["sweep", "--config", &swapped, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let counts: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(counts, ["60", "60"]);
    assert!(out.join("000_2x3").join("trace.csv").exists());

    let one = write("one.toml", &sweep_entry("solo", 1, 1));
    assert_eq!(String::from_utf8_lossy(&whdpd(&["sweep", "--config", &one]).stdout).lines().count(), 2);

    let bad = write("bad.toml", &(sweep_entry("g", 2, 3) + &sweep_entry("g", 2, 2)));
    let o = whdpd(&["sweep", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("group 'g'"));
}

#[test]
fn multistart_writes_sorted_table() {
    let tmp = TempDir::new().unwrap();
    let path = small_config(tmp.path(), "method = \"sdm\"", "max_iterations = 1");
    let text = fs::read_to_string(&path).unwrap() + "\n[multistart]\nstarts = 3\niterations = 5\nhistory = 5\n";
    fs::write(&path, text).unwrap();
    let out = tmp.path().join("ms");
    let o = whdpd(&["multistart", "--config", &path, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("multistart.csv")).unwrap();
    let f: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(f.len(), 3);
    assert!(f.windows(2).all(|w| w[0] <= w[1]));
    assert!(out.join("best_params.json").exists());
}
