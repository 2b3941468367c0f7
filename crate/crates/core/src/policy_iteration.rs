//! Policy iteration for the finite-horizon and the ergodic MFG system.
//!
//! One iteration, given the current policy `q`:
//! 1. solve the Fokker-Planck equation driven by `q` for `m`;
//! 2. solve the linear HJB equation with running cost `sigma F[m] + L(q)` for `u`;
//! 3. replace `q` by the constrained greedy policy for `u`.

use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::coupling::{CouplingKind, CouplingSpec, Kernel, LocalFunction};
use crate::error::{invalid, MfgError, Result};
use crate::grid::{
    norm, NormKind, NormSpec, SpaceField, SpaceTimeField, SpaceTimeVectorField, SplitDrift,
    TorusGrid, VectorField,
};
use crate::hamiltonian::{HamiltonianKind, HamiltonianSpec, PolicyConstraint};
use crate::linear_pde::{
    check_density, solve_ergodic_fp_drift, solve_ergodic_hjb_drift, solve_fp_drift,
    solve_hjb_drift, LinearSolver,
};
use crate::system::{greedy, running_cost, ErgodicSystem, FiniteSystem, ResidualNorms};

/// Norms used for successive differences of `u` and `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceNorms {
    pub u: NormSpec,
    pub m: NormSpec,
}

impl DifferenceNorms {
    /// Parabolic `W^{2,1}_r` for `u` and `C(0,T;L^s)` for `m`.
    pub fn finite_horizon(r: f64, s: f64) -> Result<Self> {
        Ok(Self {
            u: NormSpec::new(NormKind::W21r, r)?,
            m: NormSpec::new(NormKind::CLs, s)?,
        })
    }

    /// `W^{2,r}` for `u` and `W^{1,s}` for `m`.
    pub fn ergodic(r: f64, s: f64) -> Result<Self> {
        Ok(Self {
            u: NormSpec::new(NormKind::W2r, r)?,
            m: NormSpec::new(NormKind::W1s, s)?,
        })
    }

    /// Exponents `d + 3` (finite horizon) or `d + 1` (ergodic).
    pub fn default_for(grid: &TorusGrid) -> Self {
        let d = grid.dim() as f64;
        if grid.is_finite_horizon() {
            Self::finite_horizon(d + 3.0, d + 3.0).expect("valid exponents")
        } else {
            Self::ergodic(d + 1.0, d + 1.0).expect("valid exponents")
        }
    }
}

/// How the power Hamiltonian is truncated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Use the Hamiltonian as given.
    Fixed,
    /// After the first HJB solve, replace `|p|^gamma` by its truncation at
    /// `factor * max |Du|` (1 if that maximum is zero).
    Auto { factor: f64 },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: TorusGrid,
    pub hamiltonian: HamiltonianSpec,
    pub truncation: Truncation,
    pub coupling: CouplingSpec,
    pub constraint: PolicyConstraint,
    /// Initial density (finite horizon only).
    pub m0: Option<SpaceField>,
    /// Terminal cost (finite horizon only).
    pub u_t: Option<SpaceField>,
    /// Initial policy, constant in time; zero when absent.
    pub q0: Option<VectorField>,
    pub tol: f64,
    pub max_iter: usize,
    pub norms: DifferenceNorms,
    pub linear: LinearSolver,
}

impl RunConfig {
    pub fn finite_horizon(
        grid: TorusGrid,
        hamiltonian: HamiltonianSpec,
        coupling: CouplingSpec,
        constraint: PolicyConstraint,
        m0: SpaceField,
        u_t: SpaceField,
    ) -> Self {
        Self {
            norms: DifferenceNorms::default_for(&grid),
            grid,
            hamiltonian,
            truncation: Truncation::Fixed,
            coupling,
            constraint,
            m0: Some(m0),
            u_t: Some(u_t),
            q0: None,
            tol: 1e-10,
            max_iter: 100,
            linear: LinearSolver::Direct,
        }
    }

    pub fn ergodic(
        grid: TorusGrid,
        hamiltonian: HamiltonianSpec,
        coupling: CouplingSpec,
        constraint: PolicyConstraint,
    ) -> Self {
        Self {
            norms: DifferenceNorms::default_for(&grid),
            grid,
            hamiltonian,
            truncation: Truncation::Fixed,
            coupling,
            constraint,
            m0: None,
            u_t: None,
            q0: None,
            tol: 1e-10,
            max_iter: 100,
            linear: LinearSolver::Direct,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.coupling = self.coupling.with_sigma(sigma)?;
        Ok(self)
    }

    pub fn with_q0(mut self, q0: VectorField) -> Self {
        self.q0 = Some(q0);
        self
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn with_norms(mut self, norms: DifferenceNorms) -> Self {
        self.norms = norms;
        self
    }

    pub fn with_linear(mut self, linear: LinearSolver) -> Self {
        self.linear = linear;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.coupling.sigma()
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(self.tol > 0.0) {
            return Err(invalid("tol", format!("must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be >= 1"));
        }
        if g.is_finite_horizon() {
            let m0 = self
                .m0
                .as_ref()
                .ok_or(invalid("m0", "required for a finite horizon"))?;
            let u_t = self
                .u_t
                .as_ref()
                .ok_or(invalid("u_t", "required for a finite horizon"))?;
            if !m0.grid().same_space(g) || !u_t.grid().same_space(g) {
                return Err(MfgError::GridMismatch);
            }
            check_density(m0)?;
            if u_t.values().iter().any(|v| !v.is_finite()) {
                return Err(invalid("u_t", "must be finite"));
            }
        } else if self.m0.is_some() || self.u_t.is_some() {
            return Err(invalid("m0", "ergodic runs take neither m0 nor u_t"));
        }
        if let Some(q0) = &self.q0 {
            if !q0.grid().same_space(g) {
                return Err(MfgError::GridMismatch);
            }
            if !(q0.max_norm() <= self.constraint.radius()) {
                return Err(invalid(
                    "q0",
                    format!(
                        "sup norm {} exceeds the policy radius {}",
                        q0.max_norm(),
                        self.constraint.radius()
                    ),
                ));
            }
        }
        if let Some(w) = self.hamiltonian.weight() {
            if !w.grid().same_space(g) {
                return Err(MfgError::GridMismatch);
            }
        }
        if let Some(v) = self.coupling.potential() {
            if !v.grid().same_space(g) {
                return Err(MfgError::GridMismatch);
            }
        }
        if let CouplingKind::Nonlocal(k) = self.coupling.kind() {
            if !k.grid().same_space(g) {
                return Err(MfgError::GridMismatch);
            }
        }
        if let Truncation::Auto { factor } = self.truncation {
            if !matches!(self.hamiltonian.kind(), HamiltonianKind::Power { .. }) {
                return Err(invalid(
                    "rbar",
                    "automatic truncation needs a power Hamiltonian",
                ));
            }
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(invalid("rbar", format!("factor must be > 0, got {factor}")));
            }
        }
        Ok(())
    }

    /// Digest of everything that determines the iterates (not `tol` or `max_iter`).
    pub fn fingerprint(&self) -> String {
        let mut h = Hasher::default();
        let g = &self.grid;
        h.tag("grid");
        h.int(g.dim());
        h.int(g.n());
        h.int(g.nt());
        h.real(g.horizon().unwrap_or(-1.0));
        h.tag("hamiltonian");
        match self.hamiltonian.kind() {
            HamiltonianKind::Power { gamma } => {
                h.tag("power");
                h.real(*gamma);
            }
            HamiltonianKind::TruncatedPower { gamma, rbar } => {
                h.tag("truncated");
                h.real(*gamma);
                h.real(*rbar);
            }
            HamiltonianKind::Custom(c) => {
                h.tag("custom");
                h.tag(c.name());
            }
        }
        h.field(self.hamiltonian.weight().map(|w| w.values()));
        match self.truncation {
            Truncation::Fixed => h.tag("fixed"),
            Truncation::Auto { factor } => {
                h.tag("auto");
                h.real(factor);
            }
        }
        h.tag("coupling");
        h.real(self.coupling.sigma());
        match self.coupling.kind() {
            CouplingKind::Nonlocal(Kernel::Convolution { profile, .. }) => {
                h.tag("convolution");
                h.field(Some(profile));
            }
            CouplingKind::Nonlocal(Kernel::Matrix { values, .. }) => {
                h.tag("matrix");
                h.field(Some(values));
            }
            CouplingKind::Local(LocalFunction::Affine { slope }) => {
                h.tag("affine");
                h.real(*slope);
            }
            CouplingKind::Local(LocalFunction::Custom { name, .. }) => {
                h.tag("custom");
                h.tag(name);
            }
        }
        h.field(self.coupling.potential().map(|v| v.values()));
        h.tag("data");
        h.real(self.constraint.radius());
        h.field(self.m0.as_ref().map(|f| f.values()));
        h.field(self.u_t.as_ref().map(|f| f.values()));
        h.field(self.q0.as_ref().map(|f| f.values()));
        for spec in [self.norms.u, self.norms.m] {
            h.tag(&format!("{:?}", spec.kind));
            h.real(spec.exponent);
        }
        match self.linear {
            LinearSolver::Direct => h.tag("direct"),
            LinearSolver::GaussSeidel { tol, max_sweeps } => {
                h.tag("gauss-seidel");
                h.real(tol);
                h.int(max_sweeps);
            }
        }
        h.finish()
    }
}

#[derive(Default)]
struct Hasher(Sha256);

impl Hasher {
    fn tag(&mut self, s: &str) {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
    }

    fn int(&mut self, v: usize) {
        self.0.update((v as u64).to_le_bytes());
    }

    fn real(&mut self, v: f64) {
        self.0.update(v.to_bits().to_le_bytes());
    }

    fn field(&mut self, v: Option<&[f64]>) {
        match v {
            None => self.tag("none"),
            Some(v) => {
                self.int(v.len());
                v.iter().for_each(|x| self.real(*x));
            }
        }
    }

    fn finish(self) -> String {
        self.0
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Successive-difference norms of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRow {
    /// 1-based iteration number.
    pub n: usize,
    pub du_norm: f64,
    pub dm_norm: f64,
    /// `max |q_new - q|` between the policy produced and the one consumed.
    pub dq_norm: f64,
    pub lambda: Option<f64>,
    /// `du + sigma dm`, plus `|lambda_n - lambda_{n-1}|` in the ergodic case.
    pub combined: f64,
    /// `combined_n / combined_{n-1}`, from the second row on.
    pub ratio: Option<f64>,
}

/// Wall-clock seconds per phase of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    pub fp: f64,
    pub hjb: f64,
    pub update: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub rows: Vec<IterationRow>,
    pub times: Vec<PhaseTimes>,
    pub converged: bool,
    /// The ball constraint clipped the greedy policy in the last update.
    pub projection_active: bool,
    /// Max-norm residual of the full discrete system at the returned iterate.
    pub residual: ResidualNorms,
    /// Largest linear-solver residual seen.
    pub linear_residual: f64,
    /// Truncation radius chosen automatically, if any.
    pub rbar: Option<f64>,
    /// Size of the returned `u` in the `u`-difference norm; sets the
    /// round-off floor for rate estimates.
    pub scale: f64,
}

impl IterationReport {
    pub fn last(&self) -> Option<&IterationRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Iterate {
    Finite {
        u: SpaceTimeField,
        m: SpaceTimeField,
        q: Vec<SplitDrift>,
    },
    Ergodic {
        u: SpaceField,
        lambda: f64,
        m: SpaceField,
        q: SplitDrift,
    },
}

/// Everything needed to continue a run.
#[derive(Debug, Clone)]
pub struct PolicyIterationState {
    fingerprint: String,
    hamiltonian: HamiltonianSpec,
    rbar: Option<f64>,
    iterate: Iterate,
    rows: Vec<IterationRow>,
    times: Vec<PhaseTimes>,
    projection_active: bool,
    linear_residual: f64,
}

impl PolicyIterationState {
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    /// Hamiltonian in use (after any automatic truncation).
    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.hamiltonian
    }
}

#[derive(Debug, Clone)]
pub struct FiniteHorizonRun {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    /// Net drift of the policy for the next iteration (greedy for `u`).
    pub q: SpaceTimeVectorField,
    /// The same policy with its backward and forward parts.
    pub drift: Vec<SplitDrift>,
    pub report: IterationReport,
    pub state: PolicyIterationState,
}

#[derive(Debug, Clone)]
pub struct ErgodicRun {
    pub u: SpaceField,
    pub lambda: f64,
    pub m: SpaceField,
    pub q: VectorField,
    pub drift: SplitDrift,
    pub report: IterationReport,
    pub state: PolicyIterationState,
}

/// Stepwise driver; [`run_finite_horizon`] and [`run_ergodic`] wrap it.
pub struct PolicyIteration<'a> {
    config: &'a RunConfig,
    state: PolicyIterationState,
}

impl<'a> PolicyIteration<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self> {
        config.validate()?;
        let g = config.grid;
        let q0 = config
            .q0
            .clone()
            .unwrap_or_else(|| VectorField::zeros(g.spatial()));
        let iterate = if g.is_finite_horizon() {
            let m0 = config.m0.as_ref().expect("validated");
            Iterate::Finite {
                u: SpaceTimeField::constant(g, 0.0),
                m: SpaceTimeField::broadcast(g, m0),
                q: vec![SplitDrift::from_vector(&q0); g.nt()],
            }
        } else {
            Iterate::Ergodic {
                u: SpaceField::constant(g, 0.0),
                lambda: 0.0,
                m: SpaceField::constant(g, 1.0),
                q: SplitDrift::from_vector(&q0),
            }
        };
        Ok(Self {
            config,
            state: PolicyIterationState {
                fingerprint: config.fingerprint(),
                hamiltonian: config.hamiltonian.clone(),
                rbar: None,
                iterate,
                rows: Vec::new(),
                times: Vec::new(),
                projection_active: false,
                linear_residual: 0.0,
            },
        })
    }

    /// Continue from a saved state; the config must describe the same problem.
    pub fn resume(config: &'a RunConfig, state: PolicyIterationState) -> Result<Self> {
        config.validate()?;
        let fp = config.fingerprint();
        if fp != state.fingerprint {
            return Err(MfgError::StateMismatch(format!(
                "state was produced by config {}, not {}",
                state.fingerprint, fp
            )));
        }
        Ok(Self { config, state })
    }

    pub fn state(&self) -> &PolicyIterationState {
        &self.state
    }

    pub fn rows(&self) -> &[IterationRow] {
        &self.state.rows
    }

    /// Current `u` for a finite-horizon run.
    pub fn finite_u(&self) -> Option<&SpaceTimeField> {
        match &self.state.iterate {
            Iterate::Finite { u, .. } => Some(u),
            Iterate::Ergodic { .. } => None,
        }
    }

    /// Current `m` for a finite-horizon run.
    pub fn finite_m(&self) -> Option<&SpaceTimeField> {
        match &self.state.iterate {
            Iterate::Finite { m, .. } => Some(m),
            Iterate::Ergodic { .. } => None,
        }
    }

    fn converged(&self) -> bool {
        self.state
            .rows
            .last()
            .is_some_and(|r| r.combined <= self.config.tol)
    }

    /// Perform one iteration and return its row.
    pub fn step(&mut self) -> Result<IterationRow> {
        let cfg = self.config;
        let sigma = cfg.sigma();
        let radius = cfg.constraint.radius();
        let n = self.state.rows.len() + 1;
        let mut times = PhaseTimes::default();
        let (row, iterate) = match &self.state.iterate {
            Iterate::Finite {
                u: u_prev,
                m: m_prev,
                q,
            } => {
                let g = cfg.grid;
                let t = Instant::now();
                let (m, fp_rep) =
                    solve_fp_drift(q, &g, cfg.m0.as_ref().expect("validated"), cfg.linear)?;
                times.fp = t.elapsed().as_secs_f64();
                let t = Instant::now();
                let mut f = SpaceTimeField::constant(g, 0.0);
                for k in 0..g.nt() {
                    let forcing = cfg.coupling.forcing(&m.slice(k))?;
                    let cost = running_cost(&self.state.hamiltonian, &q[k])?;
                    for (dst, (a, b)) in f
                        .level_mut(k)
                        .iter_mut()
                        .zip(forcing.values().iter().zip(&cost))
                    {
                        *dst = a + b;
                    }
                }
                let (u, hjb_rep) =
                    solve_hjb_drift(q, &f, cfg.u_t.as_ref().expect("validated"), cfg.linear)?;
                times.hjb = t.elapsed().as_secs_f64();
                let t = Instant::now();
                if n == 1 {
                    resolve_truncation(
                        cfg,
                        &mut self.state.hamiltonian,
                        &mut self.state.rbar,
                        |level| u.level(level).to_vec(),
                        g.nt(),
                    )?;
                }
                let mut q_new = Vec::with_capacity(g.nt());
                let mut projected = false;
                for k in 0..g.nt() {
                    let gr = greedy(&self.state.hamiltonian, &g, u.level(k), radius)?;
                    projected |= gr.projected;
                    q_new.push(gr.drift);
                }
                times.update = t.elapsed().as_secs_f64();
                self.state.projection_active = projected;
                self.state.linear_residual = self
                    .state
                    .linear_residual
                    .max(fp_rep.residual_norm)
                    .max(hjb_rep.residual_norm);
                let du = norm(&u.sub(u_prev), cfg.norms.u)?;
                let dm = norm(&m.sub(m_prev), cfg.norms.m)?;
                let dq = q_new
                    .iter()
                    .zip(q)
                    .map(|(a, b)| a.max_distance(b))
                    .fold(0.0, f64::max);
                let row = IterationRow {
                    n,
                    du_norm: du,
                    dm_norm: dm,
                    dq_norm: dq,
                    lambda: None,
                    combined: du + sigma * dm,
                    ratio: None,
                };
                (row, Iterate::Finite { u, m, q: q_new })
            }
            Iterate::Ergodic {
                u: u_prev,
                lambda: lambda_prev,
                m: m_prev,
                q,
            } => {
                let g = cfg.grid;
                let t = Instant::now();
                let (m, fp_rep) = solve_ergodic_fp_drift(q, cfg.linear)?;
                times.fp = t.elapsed().as_secs_f64();
                let t = Instant::now();
                let forcing = cfg.coupling.forcing(&m)?;
                let cost = running_cost(&self.state.hamiltonian, q)?;
                let f = SpaceField::new(
                    g,
                    forcing
                        .values()
                        .iter()
                        .zip(&cost)
                        .map(|(a, b)| a + b)
                        .collect(),
                )?;
                let (sol, hjb_rep) = solve_ergodic_hjb_drift(q, &f, cfg.linear)?;
                times.hjb = t.elapsed().as_secs_f64();
                let t = Instant::now();
                if n == 1 {
                    resolve_truncation(
                        cfg,
                        &mut self.state.hamiltonian,
                        &mut self.state.rbar,
                        |_| sol.u.values().to_vec(),
                        1,
                    )?;
                }
                let gr = greedy(&self.state.hamiltonian, &g, sol.u.values(), radius)?;
                times.update = t.elapsed().as_secs_f64();
                self.state.projection_active = gr.projected;
                self.state.linear_residual = self
                    .state
                    .linear_residual
                    .max(fp_rep.residual_norm)
                    .max(hjb_rep.residual_norm);
                let du = norm(&sol.u.sub(u_prev), cfg.norms.u)?;
                let dm = norm(&m.sub(m_prev), cfg.norms.m)?;
                let dq = gr.drift.max_distance(q);
                let row = IterationRow {
                    n,
                    du_norm: du,
                    dm_norm: dm,
                    dq_norm: dq,
                    lambda: Some(sol.lambda),
                    combined: du + (sol.lambda - lambda_prev).abs() + sigma * dm,
                    ratio: None,
                };
                (
                    row,
                    Iterate::Ergodic {
                        u: sol.u,
                        lambda: sol.lambda,
                        m,
                        q: gr.drift,
                    },
                )
            }
        };
        let mut row = row;
        if let Some(prev) = self.state.rows.last() {
            if prev.combined > 0.0 {
                row.ratio = Some(row.combined / prev.combined);
            }
        }
        self.state.iterate = iterate;
        self.state.rows.push(row);
        self.state.times.push(times);
        Ok(row)
    }

    /// Iterate until the stopping rule holds or `budget` more iterations ran.
    pub fn run(&mut self, budget: usize) -> Result<()> {
        for _ in 0..budget {
            self.step()?;
            if self.converged() {
                break;
            }
        }
        Ok(())
    }

    fn report(&self) -> Result<IterationReport> {
        let cfg = self.config;
        let radius = cfg.constraint.radius();
        let scale = match &self.state.iterate {
            Iterate::Finite { u, .. } => norm(u, cfg.norms.u)?,
            Iterate::Ergodic { u, lambda, .. } => norm(u, cfg.norms.u)? + lambda.abs(),
        };
        let residual = match &self.state.iterate {
            Iterate::Finite { u, m, .. } => FiniteSystem {
                grid: cfg.grid,
                hamiltonian: &self.state.hamiltonian,
                coupling: &cfg.coupling,
                radius,
                m0: cfg.m0.as_ref().expect("validated"),
                u_t: cfg.u_t.as_ref().expect("validated"),
            }
            .residual(u, m)?
            .norms(),
            Iterate::Ergodic { u, lambda, m, .. } => ErgodicSystem {
                grid: cfg.grid,
                hamiltonian: &self.state.hamiltonian,
                coupling: &cfg.coupling,
                radius,
            }
            .residual(u, *lambda, m)?,
        };
        Ok(IterationReport {
            rows: self.state.rows.clone(),
            times: self.state.times.clone(),
            converged: self.converged(),
            projection_active: self.state.projection_active,
            residual,
            linear_residual: self.state.linear_residual,
            rbar: self.state.rbar,
            scale,
        })
    }

    pub fn into_finite(self) -> Result<FiniteHorizonRun> {
        let report = self.report()?;
        match self.state.iterate.clone() {
            Iterate::Finite { u, m, q } => Ok(FiniteHorizonRun {
                u,
                m,
                q: net_levels(&self.config.grid, &q),
                drift: q,
                report,
                state: self.state,
            }),
            Iterate::Ergodic { .. } => Err(MfgError::WrongMode("a finite-horizon run")),
        }
    }

    pub fn into_ergodic(self) -> Result<ErgodicRun> {
        let report = self.report()?;
        match self.state.iterate.clone() {
            Iterate::Ergodic { u, lambda, m, q } => Ok(ErgodicRun {
                u,
                lambda,
                m,
                q: q.net(),
                drift: q,
                report,
                state: self.state,
            }),
            Iterate::Finite { .. } => Err(MfgError::WrongMode("an ergodic run")),
        }
    }
}

/// Replace a power Hamiltonian by its truncation at `factor * max |p*|` over
/// the given levels of the first HJB solution.
fn resolve_truncation(
    cfg: &RunConfig,
    hamiltonian: &mut HamiltonianSpec,
    rbar_slot: &mut Option<f64>,
    level: impl Fn(usize) -> Vec<f64>,
    levels: usize,
) -> Result<()> {
    let Truncation::Auto { factor } = cfg.truncation else {
        return Ok(());
    };
    if rbar_slot.is_some() {
        return Ok(());
    }
    let HamiltonianKind::Power { gamma } = *hamiltonian.kind() else {
        return Ok(());
    };
    let g = cfg.grid.spatial();
    let d = g.dim();
    let mut largest: f64 = 0.0;
    for k in 0..levels {
        let (p, _) = crate::grid::upwind_selection(&g, &level(k));
        for node in 0..g.nodes() {
            largest = largest.max(crate::grid::euclid(&p[node * d..(node + 1) * d]));
        }
    }
    let rbar = if largest > 0.0 { factor * largest } else { 1.0 };
    let mut truncated = HamiltonianSpec::truncated_power(gamma, rbar)?;
    if let Some(w) = hamiltonian.weight() {
        truncated = truncated.with_weight(w.clone())?;
    }
    *hamiltonian = truncated;
    *rbar_slot = Some(rbar);
    Ok(())
}

fn net_levels(grid: &TorusGrid, q: &[SplitDrift]) -> SpaceTimeVectorField {
    let mut out = SpaceTimeVectorField::zeros(*grid);
    for (k, level) in q.iter().enumerate() {
        out.set_level(k, &level.net());
    }
    out
}

/// Run the finite-horizon algorithm to `tol` or `max_iter`.
///
/// Hitting `max_iter` is not an error: the last iterate is returned with
/// `report.converged == false`.
pub fn run_finite_horizon(config: &RunConfig) -> Result<FiniteHorizonRun> {
    if !config.grid.is_finite_horizon() {
        return Err(MfgError::WrongMode("a finite-horizon grid"));
    }
    let mut pi = PolicyIteration::new(config)?;
    pi.run(config.max_iter)?;
    pi.into_finite()
}

/// Run the ergodic algorithm to `tol` or `max_iter`.
pub fn run_ergodic(config: &RunConfig) -> Result<ErgodicRun> {
    if config.grid.is_finite_horizon() {
        return Err(MfgError::WrongMode("an ergodic grid"));
    }
    let mut pi = PolicyIteration::new(config)?;
    pi.run(config.max_iter)?;
    pi.into_ergodic()
}

/// Continue a finite-horizon run for up to `extra_iters` iterations.
pub fn resume_finite_horizon(
    config: &RunConfig,
    state: PolicyIterationState,
    extra_iters: usize,
) -> Result<FiniteHorizonRun> {
    let mut pi = PolicyIteration::resume(config, state)?;
    pi.run(extra_iters)?;
    pi.into_finite()
}

/// Continue an ergodic run for up to `extra_iters` iterations.
pub fn resume_ergodic(
    config: &RunConfig,
    state: PolicyIterationState,
    extra_iters: usize,
) -> Result<ErgodicRun> {
    let mut pi = PolicyIteration::resume(config, state)?;
    pi.run(extra_iters)?;
    pi.into_ergodic()
}
