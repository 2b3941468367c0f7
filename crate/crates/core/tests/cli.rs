use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfg-pi"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
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

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<Option<f64>> {
    let j = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows.iter()
        .map(|r| {
            if r[j].is_empty() {
                None
            } else {
                Some(r[j].parse().unwrap())
            }
        })
        .collect()
}

fn summary(path: &Path) -> Vec<(String, String)> {
    csv(path)
        .1
        .into_iter()
        .map(|r| (r[0].clone(), r[1..].join(",")))
        .collect()
}

fn value(pairs: &[(String, String)], key: &str) -> String {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no key {key}"))
        .1
        .clone()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn cfg_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_data_converges_in_one_row() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        cfg_str(&configs().join("zero.toml")),
        "--out",
        cfg_str(out.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv(&out.path().join("report.csv"));
    assert_eq!(
        header,
        ["n", "du_norm", "dm_norm", "dq_norm", "combined", "ratio"]
    );
    assert_eq!(rows.len(), 1);
    let (sh, srows) = csv(&out.path().join("solution.csv"));
    assert_eq!(sh, ["node", "level", "t", "x", "u", "m"]);
    assert_eq!(srows.len(), 16 * 8);
    // node-major: the first nt rows belong to node 0
    assert!(srows[..8].iter().all(|r| r[0] == "0"));
}

#[test]
fn reference_run_contracts() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        cfg_str(&configs().join("reference.toml")),
        "--out",
        cfg_str(out.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv(&out.path().join("report.csv"));
    assert!(rows.len() >= 3);
    let ratio = column(&h, &rows, "ratio");
    assert!(ratio.last().unwrap().unwrap() < 1.0);
    let s = summary(&out.path().join("summary.csv"));
    assert_eq!(value(&s, "converged"), "true");
    assert!(value(&s, "c_star").parse::<f64>().unwrap() < 1.0);
}

#[test]
fn ergodic_report_has_lambda_column() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        cfg_str(&configs().join("ergodic.toml")),
        "--out",
        cfg_str(out.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv(&out.path().join("report.csv"));
    assert!(h.contains(&"lambda".to_string()));
    assert!(column(&h, &rows, "lambda").iter().all(Option::is_some));
    let s = summary(&out.path().join("summary.csv"));
    assert!(value(&s, "lambda").parse::<f64>().unwrap().is_finite());
}

#[test]
fn identical_runs_write_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = run(&[
            "run",
            "--config",
            cfg_str(&configs().join("local.toml")),
            "--out",
            cfg_str(dir.path()),
        ]);
        assert_eq!(code(&o), 0);
        let o = run(&["plot", "--report", cfg_str(&dir.path().join("report.csv"))]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["report.csv", "solution.csv", "summary.csv", "report.svg"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn iteration_cap_exits_with_one() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        cfg_str(&configs().join("reference.toml")),
        "--out",
        cfg_str(out.path()),
        "--max-iter",
        "2",
    ]);
    assert_eq!(code(&o), 1);
    assert_eq!(csv(&out.path().join("report.csv")).1.len(), 2);
}

#[test]
fn unnormalized_density_exits_with_mass_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("zero.toml"))
        .unwrap()
        .replace(
            "m0 = { kind = \"uniform\" }",
            "m0 = { kind = \"uniform\", value = 3.0 }",
        );
    let p = write_config(dir.path(), "bad.toml", &text);
    let o = run(&["run", "--config", cfg_str(&p), "--out", cfg_str(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mass"), "{}", stderr(&o));
    assert!(stderr(&o).contains("data.m0"), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("zero.toml"))
        .unwrap()
        .replace("n = 16", "n = sixteen");
    let p = write_config(dir.path(), "bad.toml", &text);
    let o = run(&["run", "--config", cfg_str(&p), "--out", cfg_str(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    let missing = run(&[
        "run",
        "--config",
        "/nonexistent/x.toml",
        "--out",
        cfg_str(dir.path()),
    ]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn sweep_rejects_empty_list() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        "--config",
        cfg_str(&configs().join("local.toml")),
        "--out",
        cfg_str(out.path()),
        "--sigma",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn sweep_is_sorted_and_repeatable() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        "--config",
        cfg_str(&configs().join("local.toml")),
        "--out",
        cfg_str(out.path()),
        "--sigma",
        "0.1,0,0.05,0.1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv(&out.path().join("sweep.csv"));
    let sig = column(&h, &rows, "sigma");
    assert_eq!(sig, [Some(0.0), Some(0.05), Some(0.1), Some(0.1)]);
    assert_eq!(rows[2], rows[3]);
    let order = column(&h, &rows, "order");
    let p = order[0].expect("sigma = 0 row carries an order fit");
    assert!((1.7..=2.3).contains(&p), "order {p}");
    assert!(column(&h, &rows, "c_star")[1].unwrap() < 1.0);
    assert!(fs::read_to_string(out.path().join("sweep.svg"))
        .unwrap()
        .contains("<polyline"));
}

fn independent_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(configs().join("local.toml"))
        .unwrap()
        .replace(
            "kind = \"local\"\nslope = 1.0\nsigma = 0.05",
            "kind = \"none\"\nsigma = 1.0",
        );
    assert!(text.contains("kind = \"none\""));
    write_config(dir, "independent.toml", &text)
}

#[test]
fn compare_with_density_free_cost_tracks_iterates() {
    let dir = tempfile::tempdir().unwrap();
    let p = independent_config(dir.path());
    let o = run(&[
        "compare",
        "--config",
        cfg_str(&p),
        "--out",
        cfg_str(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv(&dir.path().join("compare.csv"));
    let gaps: Vec<f64> = column(&h, &rows, "u_gap").into_iter().flatten().collect();
    assert!(!gaps.is_empty());
    for g in gaps {
        assert!(g <= 10.0 * 1e-12 * 10.0, "gap {g}");
    }
}

#[test]
fn compare_local_coupling_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare",
        "--config",
        cfg_str(&configs().join("local.toml")),
        "--out",
        cfg_str(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = summary(&dir.path().join("compare_summary.csv"));
    assert!(value(&s, "final_u_discrepancy").parse::<f64>().unwrap() <= 1e-6);
    assert!(value(&s, "final_m_discrepancy").parse::<f64>().unwrap() <= 1e-6);
    assert!(fs::read_to_string(dir.path().join("compare.svg"))
        .unwrap()
        .contains("<polyline"));
}

#[test]
fn compare_zero_data_takes_one_step_each() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare",
        "--config",
        cfg_str(&configs().join("zero.toml")),
        "--out",
        cfg_str(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = summary(&dir.path().join("compare_summary.csv"));
    assert_eq!(value(&s, "pi_iterations"), "1");
    assert_eq!(value(&s, "newton_iterations"), "1");
}

#[test]
fn compare_refuses_nonlocal_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare",
        "--config",
        cfg_str(&configs().join("reference.toml")),
        "--out",
        cfg_str(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("local coupling"), "{}", stderr(&o));
}

#[test]
fn plot_handles_edge_reports() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(
        dir.path(),
        "empty.csv",
        "n,du_norm,dm_norm,dq_norm,combined,ratio\n",
    );
    assert_eq!(code(&run(&["plot", "--report", cfg_str(&empty)])), 2);
    let one = write_config(
        dir.path(),
        "one.csv",
        "n,du_norm,dm_norm,dq_norm,combined,ratio\n1,5.0e-1,0.0e0,1.0e0,5.0e-1,\n",
    );
    let o = run(&[
        "plot",
        "--report",
        cfg_str(&one),
        "--out",
        cfg_str(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("one.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(!svg.contains("<polyline"));
}

#[test]
fn real_run_has_decreasing_tail() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        cfg_str(&configs().join("local.toml")),
        "--out",
        cfg_str(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let (h, rows) = csv(&dir.path().join("report.csv"));
    let comb: Vec<f64> = column(&h, &rows, "combined")
        .into_iter()
        .flatten()
        .collect();
    let tail = &comb[comb.len() / 2..];
    assert!(tail.windows(2).all(|w| w[1] < w[0]), "{comb:?}");
}
