//! Command implementations behind the `mfg-pi` binary.
//!
//! Every command writes its artifacts atomically into an output directory
//! and returns an [`Outcome`] with the exit code and a printable summary.
//! Exit codes: 0 success, 1 finished without meeting the tolerance,
//! 2 bad input (config, flags, report file), 3 solver or I/O failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::{self, ConfigError};
use crate::coupling::CouplingKind;
use crate::error::MfgError;
use crate::grid::{SpaceTimeField, TorusGrid};
use crate::newton::run_newton;
use crate::plot::{render_svg, Chart, Series};
use crate::policy_iteration::{IterationReport, PolicyIteration, RunConfig};
use crate::rates::{contraction_factor, report_order, sigma_sweep};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },

    #[error("{0}")]
    Usage(String),

    #[error("solver failed: {0}")]
    Solver(#[from] MfgError),

    #[error("cannot write {path}: {reason}")]
    Io { path: String, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Solver(_) | CliError::Io { .. } => 3,
        }
    }
}

/// Flags shared by the solver commands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Options {
    pub sigma: Option<Vec<f64>>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    /// Seed for the randomized coupling checks reported in the summary.
    pub seed: u64,
    /// Add wall-clock columns (these make outputs run-dependent).
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// Round-trip exact decimal form (17 significant digits).
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_text(note: &str) -> String {
    if note.contains([',', '"', '\n']) {
        format!("\"{}\"", note.replace('"', "\"\""))
    } else {
        note.to_string()
    }
}

/// Write `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn load_config(path: &Path, opts: &Options) -> Result<RunConfig, CliError> {
    let mut cfg = config::load(path).map_err(|source| CliError::Config {
        path: path.display().to_string(),
        source,
    })?;
    if let Some(t) = opts.tol {
        if !(t > 0.0) {
            return Err(CliError::Usage(format!("--tol must be > 0, got {t}")));
        }
        cfg = cfg.with_tol(t);
    }
    if let Some(n) = opts.max_iter {
        if n == 0 {
            return Err(CliError::Usage("--max-iter must be >= 1".into()));
        }
        cfg = cfg.with_max_iter(n);
    }
    Ok(cfg)
}

fn single_sigma(cfg: RunConfig, opts: &Options) -> Result<RunConfig, CliError> {
    match opts.sigma.as_deref() {
        None => Ok(cfg),
        Some([s]) => cfg
            .with_sigma(*s)
            .map_err(|e| CliError::Usage(format!("--sigma: {e}"))),
        Some(list) => Err(CliError::Usage(format!(
            "--sigma takes one value here, got {}",
            list.len()
        ))),
    }
}

fn coupling_check(cfg: &RunConfig, seed: u64) -> String {
    match cfg.coupling.check_monotone(&cfg.grid, 16, seed) {
        Ok(c) => format!(
            "coupling monotonicity check (seed {seed}): worst pairing {:.3e}",
            c.worst_margin
        ),
        Err(e) => format!("coupling monotonicity check skipped: {e}"),
    }
}

fn report_csv(report: &IterationReport, ergodic: bool, timing: bool) -> String {
    let mut s = String::from("n,du_norm,dm_norm,dq_norm");
    if ergodic {
        s.push_str(",lambda");
    }
    s.push_str(",combined,ratio");
    if timing {
        s.push_str(",fp_time,hjb_time,update_time");
    }
    s.push('\n');
    for (i, r) in report.rows.iter().enumerate() {
        let _ = write!(
            s,
            "{},{},{},{}",
            r.n,
            num(r.du_norm),
            num(r.dm_norm),
            num(r.dq_norm)
        );
        if ergodic {
            let _ = write!(s, ",{}", opt_num(r.lambda));
        }
        let _ = write!(s, ",{},{}", num(r.combined), opt_num(r.ratio));
        if timing {
            let t = report.times.get(i).copied().unwrap_or_default();
            let _ = write!(s, ",{},{},{}", num(t.fp), num(t.hjb), num(t.update));
        }
        s.push('\n');
    }
    s
}

fn coords_header(g: &TorusGrid) -> &'static str {
    if g.dim() == 2 {
        "x,y"
    } else {
        "x"
    }
}

fn coords(g: &TorusGrid, node: usize) -> String {
    let x = g.coords(node);
    if g.dim() == 2 {
        format!("{},{}", num(x[0]), num(x[1]))
    } else {
        num(x[0])
    }
}

fn summary_csv(pairs: &[(&str, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in pairs {
        let _ = writeln!(s, "{k},{}", csv_text(v));
    }
    s
}

fn rate_pairs(report: &IterationReport, sigma: f64, pairs: &mut Vec<(&'static str, String)>) {
    match contraction_factor(&report.rows, report.scale) {
        Ok(c) => {
            pairs.push(("c_star", num(c.c_star)));
            pairs.push(("c_window_first", c.window.0.to_string()));
            pairs.push(("c_window_last", c.window.1.to_string()));
        }
        Err(e) => pairs.push(("c_star_note", e.to_string())),
    }
    if sigma == 0.0 {
        match report_order(report) {
            Ok(o) => {
                pairs.push(("order", num(o.order)));
                pairs.push(("order_truncated", o.truncated.to_string()));
            }
            Err(e) => pairs.push(("order_note", e.to_string())),
        }
    }
}

fn finish(pairs: &[(&str, String)], head: &str) -> String {
    let mut s = String::from(head);
    for (k, v) in pairs {
        let _ = writeln!(s, "  {k}: {v}");
    }
    s
}

/// Run the solver named by the config mode and write `report.csv`,
/// `solution.csv` and `summary.csv`.
pub fn cmd_run(config_path: &Path, out: &Path, opts: &Options) -> Result<Outcome, CliError> {
    let cfg = single_sigma(load_config(config_path, opts)?, opts)?;
    let g = cfg.grid;
    let ergodic = !g.is_finite_horizon();
    let check = coupling_check(&cfg, opts.seed);
    let mut pairs: Vec<(&str, String)> = vec![(
        "mode",
        if ergodic { "ergodic" } else { "finite_horizon" }.into(),
    )];
    let (report, solution) = if ergodic {
        let run = crate::policy_iteration::run_ergodic(&cfg)?;
        let mut s = format!("node,{},u,m\n", coords_header(&g));
        for i in 0..g.nodes() {
            let _ = writeln!(
                s,
                "{i},{},{},{}",
                coords(&g, i),
                num(run.u.values()[i]),
                num(run.m.values()[i])
            );
        }
        pairs.push(("lambda", num(run.lambda)));
        (run.report, s)
    } else {
        let run = crate::policy_iteration::run_finite_horizon(&cfg)?;
        let mut s = format!("node,level,t,{},u,m\n", coords_header(&g));
        for i in 0..g.nodes() {
            for k in 0..g.nt() {
                let _ = writeln!(
                    s,
                    "{i},{k},{},{},{},{}",
                    num(g.time(k)),
                    coords(&g, i),
                    num(run.u.level(k)[i]),
                    num(run.m.level(k)[i])
                );
            }
        }
        (run.report, s)
    };
    pairs.push(("converged", report.converged.to_string()));
    pairs.push(("iterations", report.rows.len().to_string()));
    pairs.push((
        "final_combined",
        report.last().map(|r| num(r.combined)).unwrap_or_default(),
    ));
    pairs.push(("residual_hjb", num(report.residual.hjb)));
    pairs.push(("residual_fp", num(report.residual.fp)));
    pairs.push(("residual_boundary", num(report.residual.boundary)));
    pairs.push(("linear_residual", num(report.linear_residual)));
    pairs.push(("projection_active", report.projection_active.to_string()));
    pairs.push(("rbar", opt_num(report.rbar)));
    rate_pairs(&report, cfg.sigma(), &mut pairs);
    pairs.push(("fingerprint", cfg.fingerprint()));

    let files = vec![
        out.join("report.csv"),
        out.join("solution.csv"),
        out.join("summary.csv"),
    ];
    write_atomic(&files[0], &report_csv(&report, ergodic, opts.timing))?;
    write_atomic(&files[1], &solution)?;
    write_atomic(&files[2], &summary_csv(&pairs))?;
    let code = if report.converged { 0 } else { 1 };
    let mut summary = finish(&pairs, "policy iteration\n");
    summary.push_str(&check);
    summary.push('\n');
    if report.projection_active {
        summary.push_str("warning: the policy constraint is active at the last update\n");
    }
    Ok(Outcome {
        code,
        summary,
        files,
    })
}

/// Sweep `sigma` over the `--sigma` list; writes `sweep.csv` and `sweep.svg`.
pub fn cmd_sweep(config_path: &Path, out: &Path, opts: &Options) -> Result<Outcome, CliError> {
    let cfg = load_config(config_path, opts)?;
    let sigmas = match opts.sigma.as_deref() {
        None => return Err(CliError::Usage("sweep needs --sigma LIST".into())),
        Some([]) => return Err(CliError::Usage("--sigma list is empty".into())),
        Some(list) => list.to_vec(),
    };
    let table = sigma_sweep(&cfg, &sigmas).map_err(|e| match e {
        MfgError::InvalidParameter { .. } => CliError::Usage(e.to_string()),
        other => CliError::Solver(other),
    })?;
    let mut s = String::from(
        "sigma,converged,iterations,final_combined,c_star,window_first,window_last,order,order_truncated,note\n",
    );
    for r in &table.rows {
        let c = r.contraction.as_ref();
        let o = r.order.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            num(r.sigma),
            r.converged,
            r.iterations,
            num(r.final_combined),
            opt_num(c.map(|c| c.c_star)),
            c.map(|c| c.window.0.to_string()).unwrap_or_default(),
            c.map(|c| c.window.1.to_string()).unwrap_or_default(),
            opt_num(o.map(|o| o.order)),
            o.map(|o| o.truncated.to_string()).unwrap_or_default(),
            csv_text(r.note.as_deref().unwrap_or(""))
        );
    }
    let chart = Chart {
        title: "Contraction factor".into(),
        x_label: "sigma".into(),
        y_label: "C*".into(),
        series: vec![Series {
            label: "C*".into(),
            points: table
                .rows
                .iter()
                .filter_map(|r| r.contraction.as_ref().map(|c| (r.sigma, c.c_star)))
                .collect(),
        }],
    };
    let files = vec![out.join("sweep.csv"), out.join("sweep.svg")];
    write_atomic(&files[0], &s)?;
    let placeholder;
    let svg = match render_svg(&chart) {
        Ok(svg) => svg,
        Err(_) => {
            placeholder = empty_svg("no contraction estimates");
            placeholder
        }
    };
    write_atomic(&files[1], &svg)?;
    let mut summary = String::from("sigma sweep\n");
    for r in &table.rows {
        let _ = writeln!(
            summary,
            "  sigma {}: converged {}, iterations {}, C* {}{}",
            r.sigma,
            r.converged,
            r.iterations,
            r.contraction
                .as_ref()
                .map_or("n/a".to_string(), |c| format!("{:.4e}", c.c_star)),
            r.order
                .as_ref()
                .map_or(String::new(), |o| format!(", order {:.3}", o.order)),
        );
    }
    let _ = writeln!(
        summary,
        "  empirical threshold: {}",
        table
            .empirical_threshold
            .map_or("none".to_string(), |s| s.to_string())
    );
    if !table.trend_nondecreasing {
        summary.push_str("  note: C* is not monotone in sigma\n");
    }
    let code = if table.rows.iter().all(|r| r.converged) {
        0
    } else {
        1
    };
    Ok(Outcome {
        code,
        summary,
        files,
    })
}

fn empty_svg(message: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" font-size=\"12\">\n<text x=\"320\" y=\"200\" text-anchor=\"middle\">{message}</text>\n</svg>\n"
    )
}

/// Policy iteration and Newton from the same start `(u, m) = (0, m0)`;
/// writes `compare.csv`, `compare.svg` and `compare_summary.csv`.
pub fn cmd_compare(config_path: &Path, out: &Path, opts: &Options) -> Result<Outcome, CliError> {
    let cfg = single_sigma(load_config(config_path, opts)?, opts)?;
    if !cfg.grid.is_finite_horizon() {
        return Err(CliError::Usage(
            "compare needs mode = \"finite_horizon\": the Newton solver works on the time-dependent system".into(),
        ));
    }
    if let CouplingKind::Nonlocal(_) = cfg.coupling.kind() {
        return Err(CliError::Usage(
            "compare needs a local coupling: the Newton Jacobian differentiates F[m](x) = f(x, m(x)) pointwise, \
             which a nonlocal kernel does not provide"
                .into(),
        ));
    }
    let g = cfg.grid;
    let mut pi = PolicyIteration::new(&cfg)?;
    let mut pi_u: Vec<SpaceTimeField> = Vec::new();
    let mut pi_times: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_iter {
        let t = Instant::now();
        let row = pi.step()?;
        pi_times.push(t.elapsed().as_secs_f64());
        pi_u.push(pi.finite_u().expect("finite run").clone());
        if row.combined <= cfg.tol {
            break;
        }
    }
    let pi_run = pi.into_finite()?;
    let mut newton_cfg = cfg.clone();
    newton_cfg.hamiltonian = pi_run.state.hamiltonian().clone();
    let u0 = SpaceTimeField::constant(g, 0.0);
    let m0 = SpaceTimeField::broadcast(g, cfg.m0.as_ref().expect("validated"));
    let newton = run_newton(&newton_cfg, u0, m0).map_err(|e| match e {
        MfgError::LocalCouplingRequired | MfgError::InvalidParameter { .. } => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Solver(other),
    })?;

    let rows = pi_run.report.rows.len().max(newton.report.rows.len());
    let mut s = String::from(
        "n,pi_du,pi_dm,pi_combined,newton_du,newton_dm,newton_combined,newton_residual,u_gap",
    );
    if opts.timing {
        s.push_str(",pi_time,newton_time");
    }
    s.push('\n');
    for i in 0..rows {
        let p = pi_run.report.rows.get(i);
        let nw = newton.report.rows.get(i);
        let gap = match (pi_u.get(i), newton.u_iterates.get(i)) {
            (Some(a), Some(b)) => num(a.sub(b).max_abs()),
            _ => String::new(),
        };
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            i + 1,
            opt_num(p.map(|r| r.du_norm)),
            opt_num(p.map(|r| r.dm_norm)),
            opt_num(p.map(|r| r.combined)),
            opt_num(nw.map(|r| r.du_norm)),
            opt_num(nw.map(|r| r.dm_norm)),
            opt_num(nw.map(|r| r.combined)),
            opt_num(nw.map(|r| r.residual)),
            gap
        );
        if opts.timing {
            let _ = write!(
                s,
                ",{},{}",
                opt_num(pi_times.get(i).copied()),
                opt_num(newton.report.times.get(i).copied())
            );
        }
        s.push('\n');
    }
    let du = pi_run.u.sub(&newton.u).max_abs();
    let dm = pi_run.m.sub(&newton.m).max_abs();
    let pairs: Vec<(&str, String)> = vec![
        ("pi_converged", pi_run.report.converged.to_string()),
        ("pi_iterations", pi_run.report.rows.len().to_string()),
        ("newton_converged", newton.report.converged.to_string()),
        ("newton_iterations", newton.report.rows.len().to_string()),
        ("newton_kink_hits", newton.report.kink_hits.to_string()),
        ("final_u_discrepancy", num(du)),
        ("final_m_discrepancy", num(dm)),
    ];
    let chart = Chart {
        title: "Policy iteration vs Newton".into(),
        x_label: "iteration".into(),
        y_label: "du + sigma dm".into(),
        series: vec![
            Series {
                label: "policy iteration".into(),
                points: pi_run
                    .report
                    .rows
                    .iter()
                    .map(|r| (r.n as f64, r.combined))
                    .collect(),
            },
            Series {
                label: "Newton".into(),
                points: newton
                    .report
                    .rows
                    .iter()
                    .map(|r| (r.n as f64, r.combined))
                    .collect(),
            },
        ],
    };
    let files = vec![
        out.join("compare.csv"),
        out.join("compare.svg"),
        out.join("compare_summary.csv"),
    ];
    write_atomic(&files[0], &s)?;
    write_atomic(
        &files[1],
        &render_svg(&chart).unwrap_or_else(|_| empty_svg("all differences are zero")),
    )?;
    write_atomic(&files[2], &summary_csv(&pairs))?;
    let code = if pi_run.report.converged && newton.report.converged {
        0
    } else {
        1
    };
    Ok(Outcome {
        code,
        summary: finish(&pairs, "policy iteration vs Newton\n"),
        files,
    })
}

type ReportTable = (Vec<String>, Vec<Vec<Option<f64>>>);

/// Parse a report CSV into its header and numeric rows.
fn read_report(path: &Path) -> Result<ReportTable, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Usage(format!("{}: empty file", path.display())))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("n") {
        return Err(CliError::Usage(format!(
            "{}: not a report (first column must be `n`)",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(CliError::Usage(format!(
                "{}:{}: expected {} columns, found {}",
                path.display(),
                ln + 2,
                header.len(),
                cells.len()
            )));
        }
        let parsed = cells
            .iter()
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| {
                        CliError::Usage(format!("{}:{}: bad number `{c}`", path.display(), ln + 2))
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: report has no rows",
            path.display()
        )));
    }
    Ok((header, rows))
}

const PLOTTED: [&str; 9] = [
    "du_norm",
    "dm_norm",
    "dq_norm",
    "combined",
    "pi_combined",
    "newton_combined",
    "newton_residual",
    "pi_du",
    "newton_du",
];

/// Log-scale chart of the difference columns of a report CSV.
pub fn cmd_plot(report: &Path, out: &Path) -> Result<Outcome, CliError> {
    let (header, rows) = read_report(report)?;
    let series: Vec<Series> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| PLOTTED.contains(&h.as_str()))
        .map(|(j, h)| Series {
            label: h.clone(),
            points: rows.iter().filter_map(|r| Some((r[0]?, r[j]?))).collect(),
        })
        .collect();
    if series.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no difference columns to plot",
            report.display()
        )));
    }
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let chart = Chart {
        title: stem.clone(),
        x_label: "iteration".into(),
        y_label: "difference".into(),
        series,
    };
    let svg = render_svg(&chart).unwrap_or_else(|_| empty_svg("all values are zero"));
    let path = out.join(format!("{stem}.svg"));
    write_atomic(&path, &svg)?;
    Ok(Outcome {
        code: 0,
        summary: format!("wrote {}\n", path.display()),
        files: vec![path],
    })
}
