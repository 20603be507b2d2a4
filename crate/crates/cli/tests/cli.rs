use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lorenz-tz"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lorenz-tz-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// Data rows of a CSV output as (header, rows).
fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn cell(text: &str, row: usize, col: &str) -> String {
    let (h, rows) = table(text);
    let k = h.iter().position(|c| c == col).unwrap();
    rows[row][k].clone()
}

#[test]
fn equilibria_flags_tb_of_e2() {
    let o = run(&["equilibria", "--eps1", "-10", "--eps2", "-1", "--eps3", "0.1", "--B", "-0.1", "--D", "0.01"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(cell(&s, 1, "kind"), "E2");
    assert!(cell(&s, 1, "bifurcations").contains("TakensBogdanov"));
}

#[test]
fn equilibria_at_the_origin_of_parameters_is_triple_zero() {
    let s = stdout(&run(&["equilibria", "--eps1", "0", "--eps2", "0", "--eps3", "0"]));
    assert!(cell(&s, 0, "bifurcations").contains("TripleZero"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["equilibria", "--eps1", "x"]).status.code(), Some(2));
    assert_eq!(run(&["equilibria", "--nonsense"]).status.code(), Some(2));
    let o = run(&["equilibria", "--eps1", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eps3"));
}

#[test]
fn numerical_failures_exit_with_one() {
    let o = run(&["simulate", "--eps1", "-0.5", "--eps3", "0.02", "--x0", "0.1", "--z0", "0", "--t-end", "500"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn connect_finds_he_at_positive_eps1() {
    let s = stdout(&run(&["connect", "--fix", "eps1=0.2", "--free", "eps3", "--bracket", "-0.01", "0"]));
    let v: f64 = cell(&s, 0, "value").parse().unwrap();
    assert!((v + 0.0043175).abs() < 1e-4, "{v}");
}

#[test]
fn lyapunov_is_the_leading_eigenvalue_at_a_sink() {
    // E1 is a sink with spectrum {eps3, (-1 ± i sqrt 3)/2}
    let s = stdout(&run(&["lyapunov", "--eps1", "-1", "--eps3", "-0.05", "--x0", "0.5", "--y0", "0", "--z0", "0.5"]));
    let l: f64 = cell(&s, 0, "lambda_max").parse().unwrap();
    assert!(l < 0.0 && (l + 0.05).abs() < 1e-3, "{l}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = scratch("config");
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "format = \"json\"\n[model]\neps1 = -8.0\neps3 = 0.085\n[simulate]\nt-end = 2.0\nsample-dt = 1.0\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--eps1", "-6.3"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["config"]["model"]["eps1"], -6.3);
    assert_eq!(v["config"]["model"]["eps3"], 0.085);
    assert_eq!(v["config"]["simulate"]["t-end"], 2.0);
    assert_eq!(v["result"]["times"].as_array().unwrap().len(), 3);
}

#[test]
fn embedded_config_reproduces_the_output() {
    let d = scratch("rerun");
    let first = d.join("a.csv");
    let o = run(&["simulate", "--eps1", "-8", "--eps3", "0.085", "--t-end", "20", "--sample-dt", "0.5", "-o", first.to_str().unwrap()]);
    assert!(o.status.success());
    let a = std::fs::read_to_string(&first).unwrap();
    let echo = a.lines().find_map(|l| l.strip_prefix("# config ")).unwrap();
    let cfg = d.join("echo.json");
    std::fs::write(&cfg, echo).unwrap();
    let second = d.join("b.csv");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "-o", second.to_str().unwrap()]).status.success());
    assert_eq!(a, std::fs::read_to_string(&second).unwrap());
}

#[test]
fn bifurcation_set_emits_analytic_lines() {
    let d = scratch("lines");
    let o = run(&["bifurcation-set", "--curves", "P1,P2,T", "--out-dir", d.to_str().unwrap(), "--jobs", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p2 = std::fs::read_to_string(d.join("P2.csv")).unwrap();
    let (_, rows) = table(&p2);
    for r in rows {
        let (e1, e3): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!((e3 + 0.01 * e1).abs() < 1e-15);
    }
    let (_, t) = table(&std::fs::read_to_string(d.join("T.csv")).unwrap());
    assert_eq!(t, vec![vec!["-1.2000000000000000e1", "0.0000000000000000e0"], vec!["0.0000000000000000e0", "0.0000000000000000e0"]]);
    assert!(d.join("P1.csv").exists());
}

#[test]
fn empty_curve_list_emits_markers_only() {
    let d = scratch("markers");
    let o = run(&["bifurcation-set", "--curves", "", "--out-dir", d.to_str().unwrap()]);
    assert!(o.status.success());
    let names: Vec<_> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names, vec!["markers.csv"]);
    let (_, rows) = table(&std::fs::read_to_string(d.join("markers.csv")).unwrap());
    let tags: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(tags, vec!["DZ", "TB", "TP"]);
}

#[test]
fn unknown_curve_is_a_usage_error() {
    let d = scratch("unknown");
    assert_eq!(run(&["bifurcation-set", "--curves", "Q", "--out-dir", d.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bifurcation_set_does_not_depend_on_jobs() {
    let a = scratch("jobs1");
    let b = scratch("jobs3");
    for (d, j) in [(&a, "1"), (&b, "3")] {
        assert!(run(&["bifurcation-set", "--curves", "h,h2,DZ-prediction", "--out-dir", d.to_str().unwrap(), "--jobs", j]).status.success());
    }
    // the echoed out-dir differs, nothing else may
    let body = |p: PathBuf| std::fs::read_to_string(p).unwrap().lines().filter(|l| !l.starts_with("# config")).collect::<Vec<_>>().join("\n");
    for f in ["h.csv", "h2.csv", "DZ-prediction.csv", "markers.csv"] {
        assert_eq!(body(a.join(f)), body(b.join(f)), "{f}");
    }
}
