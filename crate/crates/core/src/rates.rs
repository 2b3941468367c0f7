//! Empirical convergence rates from iteration histories.

use rayon::prelude::*;

use crate::error::{invalid, MfgError, Result};
use crate::newton::NewtonReport;
use crate::policy_iteration::{
    run_ergodic, run_finite_horizon, IterationReport, IterationRow, RunConfig,
};

/// Values below `FLOOR_FACTOR * eps * scale` are round-off and excluded from fits.
pub const FLOOR_FACTOR: f64 = 100.0;

pub fn floor(scale: f64) -> f64 {
    FLOOR_FACTOR * f64::EPSILON * scale.abs()
}

/// Empirical linear contraction factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    /// Largest tail ratio `combined_{n+1} / du_n`.
    pub c_star: f64,
    /// First and last iteration numbers `n` whose ratio entered the estimate.
    pub window: (usize, usize),
    pub ratios: Vec<f64>,
}

/// `max combined_{n+1} / du_n` over the tail of the history.
///
/// The history is cut at the first `du_n` below the round-off floor; at
/// least 4 rows must remain. The first `ceil(L / 4)` of the `L` usable rows
/// are discarded.
pub fn contraction_factor(rows: &[IterationRow], scale: f64) -> Result<ContractionEstimate> {
    let fl = floor(scale.max(rows.iter().map(|r| r.du_norm).fold(0.0, f64::max)));
    let usable = rows
        .iter()
        .position(|r| !(r.du_norm > fl))
        .unwrap_or(rows.len());
    if usable < 4 {
        return Err(MfgError::InsufficientData(format!(
            "{usable} iterations above the floor {fl:.3e}, need at least 4"
        )));
    }
    let start = usable.div_ceil(4);
    let ratios: Vec<f64> = (start..usable - 1)
        .map(|i| rows[i + 1].combined / rows[i].du_norm)
        .collect();
    let c_star = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ContractionEstimate {
        c_star,
        window: (rows[start].n, rows[usable - 2].n),
        ratios,
    })
}

/// Least-squares fit of `log e_{n+1} = p log e_n + log c`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub order: f64,
    pub constant: f64,
    /// Index range `[first, last]` of the fitted errors in the input.
    pub window: (usize, usize),
    /// The decaying segment did not cover every point above the floor.
    pub truncated: bool,
}

/// Fit the convergence order on the longest strictly decreasing suffix of
/// the errors above the round-off floor `100 eps scale` (scale at least the
/// largest error). Needs 3 such points.
pub fn order_fit(errors: &[f64], scale: f64) -> Result<OrderFit> {
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(invalid("errors", "must be finite and nonnegative"));
    }
    let fl = floor(scale.max(errors.iter().copied().fold(0.0, f64::max)));
    let above = errors
        .iter()
        .position(|e| !(*e > fl))
        .unwrap_or(errors.len());
    if above < 3 {
        return Err(MfgError::InsufficientData(format!(
            "{above} errors above the floor {fl:.3e}, need at least 3"
        )));
    }
    let mut first = above - 1;
    while first > 0 && errors[first - 1] > errors[first] {
        first -= 1;
    }
    if above - first < 3 {
        return Err(MfgError::InsufficientData(format!(
            "decaying segment has {} points, need at least 3",
            above - first
        )));
    }
    let xs: Vec<f64> = errors[first..above - 1].iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors[first + 1..above].iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(MfgError::InsufficientData("errors do not vary".into()));
    }
    let order = sxy / sxx;
    Ok(OrderFit {
        order,
        constant: (my - order * mx).exp(),
        window: (first, above - 1),
        truncated: first > 0,
    })
}

/// Order fit on the successive differences `du_n`, `n >= 2`, of a run.
///
/// The first row measures the distance from the initial guess rather than
/// between two iterates, so it is left out.
pub fn report_order(report: &IterationReport) -> Result<OrderFit> {
    let errors: Vec<f64> = report.rows.iter().skip(1).map(|r| r.du_norm).collect();
    order_fit(&errors, report.scale)
}

/// Order fit on the residual history of a Newton run, initial residual
/// included.
pub fn newton_order(report: &NewtonReport) -> Result<OrderFit> {
    let errors: Vec<f64> = std::iter::once(report.initial_residual)
        .chain(report.rows.iter().map(|r| r.residual))
        .collect();
    order_fit(&errors, report.residual_scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final `combined` difference.
    pub final_combined: f64,
    pub contraction: Option<ContractionEstimate>,
    /// Present on `sigma = 0` rows when enough points exist.
    pub order: Option<OrderFit>,
    /// Run failure or rate-estimation failure, if any.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    /// Sorted by `sigma` (stable for duplicates).
    pub rows: Vec<SweepRow>,
    /// Largest swept `sigma` with `C* < 1`.
    pub empirical_threshold: Option<f64>,
    /// Whether `C*` is nondecreasing in `sigma` over rows that have one.
    pub trend_nondecreasing: bool,
}

/// Worker count from `MFG_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var("MFG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
}

fn sweep_row(base: &RunConfig, sigma: f64) -> SweepRow {
    let mut row = SweepRow {
        sigma,
        converged: false,
        iterations: 0,
        final_combined: f64::NAN,
        contraction: None,
        order: None,
        note: None,
    };
    let cfg = match base.clone().with_sigma(sigma) {
        Ok(c) => c,
        Err(e) => {
            row.note = Some(e.to_string());
            return row;
        }
    };
    let report = if cfg.grid.is_finite_horizon() {
        run_finite_horizon(&cfg).map(|r| r.report)
    } else {
        run_ergodic(&cfg).map(|r| r.report)
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            row.note = Some(e.to_string());
            return row;
        }
    };
    row.converged = report.converged;
    row.iterations = report.rows.len();
    row.final_combined = report.last().map_or(f64::NAN, |r| r.combined);
    match contraction_factor(&report.rows, report.scale) {
        Ok(c) => row.contraction = Some(c),
        Err(e) => row.note = Some(e.to_string()),
    }
    if sigma == 0.0 {
        match report_order(&report) {
            Ok(o) => row.order = Some(o),
            Err(e) => {
                row.note.get_or_insert_with(|| e.to_string());
            }
        }
    }
    row
}

/// Run `base` once per `sigma` (concurrently, capped by `MFG_THREADS`) and
/// tabulate contraction factors.
pub fn sigma_sweep(base: &RunConfig, sigmas: &[f64]) -> Result<SweepTable> {
    if sigmas.is_empty() {
        return Err(invalid("sigma", "list is empty"));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(invalid("sigma", format!("must be >= 0, got {bad}")));
    }
    base.validate()?;
    let mut order: Vec<usize> = (0..sigmas.len()).collect();
    order.sort_by(|a, b| sigmas[*a].total_cmp(&sigmas[*b]).then(a.cmp(b)));
    let sorted: Vec<f64> = order.iter().map(|i| sigmas[*i]).collect();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit() {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| invalid("MFG_THREADS", e.to_string()))?;
    let rows: Vec<SweepRow> =
        pool.install(|| sorted.par_iter().map(|s| sweep_row(base, *s)).collect());
    let empirical_threshold = rows
        .iter()
        .filter(|r| r.contraction.as_ref().is_some_and(|c| c.c_star < 1.0))
        .map(|r| r.sigma)
        .fold(None, |acc: Option<f64>, s| {
            Some(acc.map_or(s, |a| a.max(s)))
        });
    let stars: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.contraction.as_ref().map(|c| c.c_star))
        .collect();
    let trend_nondecreasing = stars.windows(2).all(|w| w[0] <= w[1]);
    Ok(SweepTable {
        rows,
        empirical_threshold,
        trend_nondecreasing,
    })
}
