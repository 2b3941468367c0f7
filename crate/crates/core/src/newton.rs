//! Newton's method on the full finite-horizon discrete MFG system.
//!
//! Unknowns are `u^k` and `m^k` at every level. The Jacobian has four
//! space-time blocks:
//! - `uu`: `I/dt + A_{q(u^k)}` on the diagonal, `-I/dt` coupling to `u^{k+1}`;
//! - `um`: `-sigma F'(m^k)` (local couplings only);
//! - `mu`: derivative of the transport `A_{q(u^{k-1})}^T m^k` through the policy;
//! - `mm`: `I/dt + A_{q(u^{k-1})}^T` on the diagonal, `-I/dt` coupling to `m^{k-1}`.
//!
//! Dropping `um` and `mu` leaves exactly the matrices of one policy-iteration
//! step, which is the quasi-Newton reading of policy iteration.

use std::time::Instant;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{norm, SpaceTimeField, TorusGrid};
use crate::linalg::{BandedLu, CsrMatrix, TripletBuilder};
use crate::linear_pde::{fp_step_matrix, hjb_step_matrix};
use crate::policy_iteration::RunConfig;
use crate::system::{greedy, FiniteResidual, FiniteSystem, Greedy, ResidualNorms};

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonState {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    pub residual: ResidualNorms,
}

fn system(config: &RunConfig) -> Result<FiniteSystem<'_>> {
    Ok(FiniteSystem {
        grid: config.grid,
        hamiltonian: &config.hamiltonian,
        coupling: &config.coupling,
        radius: config.constraint.radius(),
        m0: config
            .m0
            .as_ref()
            .ok_or(invalid("m0", "required for a finite horizon"))?,
        u_t: config
            .u_t
            .as_ref()
            .ok_or(invalid("u_t", "required for a finite horizon"))?,
    })
}

fn check_config(config: &RunConfig) -> Result<()> {
    if !config.grid.is_finite_horizon() {
        return Err(MfgError::WrongMode("a finite-horizon grid"));
    }
    config.validate()?;
    if !config.coupling.is_local() {
        return Err(MfgError::LocalCouplingRequired);
    }
    if !config.hamiltonian.is_radial() {
        return Err(invalid("hamiltonian", "Newton needs a radial Hamiltonian"));
    }
    Ok(())
}

/// Residual of the discrete system at `(u, m)`: HJB rows, FP rows,
/// terminal and initial mismatch.
pub fn residual_map(
    u: &SpaceTimeField,
    m: &SpaceTimeField,
    config: &RunConfig,
) -> Result<FiniteResidual> {
    system(config)?.residual(u, m)
}

/// Jacobian blocks, each indexed by `k * nodes + node`.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub uu: CsrMatrix,
    pub um: CsrMatrix,
    pub mu: CsrMatrix,
    pub mm: CsrMatrix,
    /// Nodes whose one-sided gradient sits exactly on a truncation sphere.
    pub kink_hits: usize,
}

impl Jacobian {
    /// The coupled matrix `[[uu, um], [mu, mm]]`.
    pub fn full(&self) -> CsrMatrix {
        let n = self.uu.dim();
        let mut b = TripletBuilder::new(2 * n);
        b.add_block(0, 0, &self.uu, 1.0);
        b.add_block(0, n, &self.um, 1.0);
        b.add_block(n, 0, &self.mu, 1.0);
        b.add_block(n, n, &self.mm, 1.0);
        b.build()
    }

    /// The same Jacobian with both off-diagonal blocks removed.
    pub fn without_coupling(&self) -> Jacobian {
        let n = self.uu.dim();
        Jacobian {
            uu: self.uu.clone(),
            um: TripletBuilder::new(n).build(),
            mu: TripletBuilder::new(n).build(),
            mm: self.mm.clone(),
            kink_hits: self.kink_hits,
        }
    }
}

/// Derivative of `A_{Q(u)}^T m` with respect to `u` at one level, added into
/// `b` at block offset (`row0`, `col0`).
fn add_transport_derivative(
    b: &mut TripletBuilder,
    g: &TorusGrid,
    gr: &Greedy,
    m: &[f64],
    row0: usize,
    col0: usize,
) {
    let d = g.dim();
    let inv_h = 1.0 / g.h();
    // stacked component `a` differences node r against r - e_l (a < d) or r + e_l
    let shifted = |node: usize, a: usize| -> usize {
        if a < d {
            g.neighbor(node, a, -1)
        } else {
            g.neighbor(node, a - d, 1)
        }
    };
    for r in 0..g.nodes() {
        let p = &gr.stacked[r * 2 * d..(r + 1) * 2 * d];
        let len = crate::grid::euclid(p);
        if len == 0.0 || m[r] == 0.0 {
            continue;
        }
        let pol = &gr.radial[r];
        for a in 0..2 * d {
            if p[a] <= 0.0 {
                continue;
            }
            let va = shifted(r, a);
            for bb in 0..2 * d {
                let along = pol.along * p[bb] * p[a] / (len * len);
                let across =
                    pol.across * (if a == bb { 1.0 } else { 0.0 } - p[bb] * p[a] / (len * len));
                let dq = along + across;
                if dq == 0.0 {
                    continue;
                }
                let w = m[r] * inv_h * dq * inv_h;
                let cb = shifted(r, bb);
                b.add(row0 + r, col0 + r, w);
                b.add(row0 + r, col0 + va, -w);
                b.add(row0 + cb, col0 + r, -w);
                b.add(row0 + cb, col0 + va, w);
            }
        }
    }
}

/// Assemble the Newton Jacobian at `(u, m)`.
pub fn assemble_jacobian(
    u: &SpaceTimeField,
    m: &SpaceTimeField,
    config: &RunConfig,
) -> Result<Jacobian> {
    check_config(config)?;
    let g = config.grid;
    if !u.grid().same_space(&g)
        || !m.grid().same_space(&g)
        || u.grid().nt() != g.nt()
        || m.grid().nt() != g.nt()
    {
        return Err(MfgError::GridMismatch);
    }
    let n = g.nodes();
    let nt = g.nt();
    let dt = g.dt();
    let total = n * nt;
    let radius = config.constraint.radius();
    let sigma = config.coupling.sigma();
    let mut uu = TripletBuilder::new(total);
    let mut um = TripletBuilder::new(total);
    let mut mu = TripletBuilder::new(total);
    let mut mm = TripletBuilder::new(total);
    let mut kink_hits = 0;
    for k in 0..nt - 1 {
        let gr = greedy(&config.hamiltonian, &g, u.level(k), radius)?;
        if gr
            .radial
            .iter()
            .any(|p| !(p.along.is_finite() && p.across.is_finite()))
        {
            return Err(MfgError::HessianUndefined);
        }
        kink_hits += gr.kinks;
        uu.add_block(k * n, k * n, &hjb_step_matrix(&gr.drift, dt), 1.0);
        for i in 0..n {
            uu.add(k * n + i, (k + 1) * n + i, -1.0 / dt);
        }
        if sigma != 0.0 {
            let dfdm = config
                .coupling
                .local_derivative(&m.slice(k))
                .ok_or(MfgError::LocalCouplingRequired)?;
            for (i, v) in dfdm.iter().enumerate() {
                if *v != 0.0 {
                    um.add(k * n + i, k * n + i, -sigma * v);
                }
            }
        }
        mm.add_block(
            (k + 1) * n,
            (k + 1) * n,
            &fp_step_matrix(&gr.drift, dt),
            1.0,
        );
        for i in 0..n {
            mm.add((k + 1) * n + i, k * n + i, -1.0 / dt);
        }
        add_transport_derivative(&mut mu, &g, &gr, m.level(k + 1), (k + 1) * n, k * n);
    }
    for i in 0..n {
        uu.add((nt - 1) * n + i, (nt - 1) * n + i, 1.0);
        mm.add(i, i, 1.0);
    }
    Ok(Jacobian {
        uu: uu.build(),
        um: um.build(),
        mu: mu.build(),
        mm: mm.build(),
        kink_hits,
    })
}

/// Banded ordering of the coupled system: level-major, folded nodes, with
/// `u` and `m` interleaved.
fn coupled_order(g: &TorusGrid) -> Vec<usize> {
    let fold = g.band_order();
    let n = g.nodes();
    let nt = g.nt();
    let mut pos = vec![0; 2 * n * nt];
    for k in 0..nt {
        for i in 0..n {
            pos[k * n + i] = 2 * (k * n + fold[i]);
            pos[n * nt + k * n + i] = 2 * (k * n + fold[i]) + 1;
        }
    }
    pos
}

/// Result of one Newton update.
#[derive(Debug, Clone)]
pub struct NewtonUpdate {
    pub state: NewtonState,
    pub delta_u: SpaceTimeField,
    pub delta_m: SpaceTimeField,
    pub kink_hits: usize,
    /// Row-sum norm of the Jacobian that produced the step.
    pub jacobian_norm: f64,
}

/// Solve `J delta = -F` at `state` and return the updated pair.
pub fn newton_step(state: &NewtonState, config: &RunConfig) -> Result<NewtonUpdate> {
    let g = config.grid;
    let jac = assemble_jacobian(&state.u, &state.m, config)?;
    let res = residual_map(&state.u, &state.m, config)?;
    let total = g.nodes() * g.nt();
    let rhs: Vec<f64> = res
        .hjb
        .values()
        .iter()
        .chain(res.fp.values())
        .map(|v| -v)
        .collect();
    let full = jac.full();
    let lu = BandedLu::factor(&full, &coupled_order(&g)).map_err(|e| match e {
        MfgError::SingularSystem(msg) => {
            MfgError::SingularSystem(format!("Newton Jacobian: {msg}"))
        }
        other => other,
    })?;
    let delta = lu.solve(&rhs);
    let delta_u = SpaceTimeField::new(g, delta[..total].to_vec())?;
    let delta_m = SpaceTimeField::new(g, delta[total..].to_vec())?;
    let u = SpaceTimeField::new(
        g,
        state
            .u
            .values()
            .iter()
            .zip(delta_u.values())
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    let m = SpaceTimeField::new(
        g,
        state
            .m
            .values()
            .iter()
            .zip(delta_m.values())
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    let residual = residual_map(&u, &m, config)?.norms();
    Ok(NewtonUpdate {
        state: NewtonState { u, m, residual },
        delta_u,
        delta_m,
        kink_hits: jac.kink_hits,
        jacobian_norm: full.norm_inf(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonRow {
    pub n: usize,
    /// Size of the update in the configured `u` and `m` difference norms.
    pub du_norm: f64,
    pub dm_norm: f64,
    /// `du + sigma dm`, the policy-iteration stopping quantity.
    pub combined: f64,
    /// Max-norm residual after the update.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub rows: Vec<NewtonRow>,
    /// Wall-clock seconds per step.
    pub times: Vec<f64>,
    pub converged: bool,
    pub kink_hits: usize,
    pub initial_residual: f64,
    /// Round-off scale of the residuals: `|J|_inf * max(1, |u|, |m|)`.
    pub residual_scale: f64,
}

#[derive(Debug, Clone)]
pub struct NewtonRun {
    pub u: SpaceTimeField,
    pub m: SpaceTimeField,
    /// Iterates after each step (only `u`), for comparisons.
    pub u_iterates: Vec<SpaceTimeField>,
    pub report: NewtonReport,
}

/// Newton iterations from `(u, m)` until `du + sigma dm <= tol` or
/// `max_iter` steps. A residual that grows three steps in a row aborts with
/// [`MfgError::Diverged`].
pub fn run_newton(config: &RunConfig, u: SpaceTimeField, m: SpaceTimeField) -> Result<NewtonRun> {
    check_config(config)?;
    let sigma = config.coupling.sigma();
    let residual = residual_map(&u, &m, config)?.norms();
    let mut report = NewtonReport {
        rows: Vec::new(),
        times: Vec::new(),
        converged: false,
        kink_hits: 0,
        initial_residual: residual.max(),
        residual_scale: 0.0,
    };
    let mut state = NewtonState { u, m, residual };
    let mut u_iterates = Vec::new();
    let mut growth = 0;
    let mut last = residual.max();
    for n in 1..=config.max_iter {
        let t = Instant::now();
        let step = newton_step(&state, config)?;
        report.times.push(t.elapsed().as_secs_f64());
        let du = norm(&step.delta_u, config.norms.u)?;
        let dm = norm(&step.delta_m, config.norms.m)?;
        let res = step.state.residual.max();
        report.kink_hits += step.kink_hits;
        report.residual_scale = report
            .residual_scale
            .max(step.jacobian_norm * 1f64.max(step.state.u.max_abs()).max(step.state.m.max_abs()));
        report.rows.push(NewtonRow {
            n,
            du_norm: du,
            dm_norm: dm,
            combined: du + sigma * dm,
            residual: res,
        });
        state = step.state;
        u_iterates.push(state.u.clone());
        if !res.is_finite() {
            return Err(MfgError::Diverged { step: n });
        }
        growth = if res > last { growth + 1 } else { 0 };
        last = res;
        if growth >= 3 {
            return Err(MfgError::Diverged { step: n });
        }
        if du + sigma * dm <= config.tol {
            report.converged = true;
            break;
        }
    }
    Ok(NewtonRun {
        u: state.u,
        m: state.m,
        u_iterates,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{CouplingSpec, LocalFunction};
    use crate::grid::SpaceField;
    use crate::hamiltonian::{HamiltonianSpec, PolicyConstraint};
    use std::f64::consts::PI;

    fn config(sigma: f64) -> RunConfig {
        let g = TorusGrid::finite_horizon(1, 8, 8, 0.5).unwrap();
        let s = g.spatial();
        let mut m0 = SpaceField::from_fn(s, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin());
        let mass = m0.integral();
        m0.values_mut().iter_mut().for_each(|v| *v /= mass);
        let coupling = CouplingSpec::local(LocalFunction::Affine { slope: 1.0 }, sigma)
            .unwrap()
            .with_potential(SpaceField::from_fn(s, |x| (2.0 * PI * x[0]).cos()))
            .unwrap();
        RunConfig::finite_horizon(
            g,
            HamiltonianSpec::power(2.0).unwrap(),
            coupling,
            PolicyConstraint::new(50.0).unwrap(),
            m0,
            SpaceField::from_fn(s, |x| (2.0 * PI * x[0]).sin()),
        )
    }

    fn sample_pair(g: TorusGrid) -> (SpaceTimeField, SpaceTimeField) {
        let u = SpaceTimeField::new(
            g,
            (0..g.nodes() * g.nt())
                .map(|i| (0.7 * i as f64).sin() + 0.1 * (i % 5) as f64)
                .collect(),
        )
        .unwrap();
        let m = SpaceTimeField::new(
            g,
            (0..g.nodes() * g.nt())
                .map(|i| 1.0 + 0.3 * (1.3 * i as f64).cos())
                .collect(),
        )
        .unwrap();
        (u, m)
    }

    fn residual_vector(u: &SpaceTimeField, m: &SpaceTimeField, cfg: &RunConfig) -> Vec<f64> {
        let r = residual_map(u, m, cfg).unwrap();
        r.hjb
            .values()
            .iter()
            .chain(r.fp.values())
            .copied()
            .collect()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cfg = config(0.7);
        let g = cfg.grid;
        let (u, m) = sample_pair(g);
        let jac = assemble_jacobian(&u, &m, &cfg).unwrap().full();
        let total = g.nodes() * g.nt();
        let eps = 1e-6;
        for col in (0..2 * total).step_by(7) {
            let (mut up, mut mp) = (u.clone(), m.clone());
            let (mut um, mut mm) = (u.clone(), m.clone());
            if col < total {
                up.values_mut()[col] += eps;
                um.values_mut()[col] -= eps;
            } else {
                mp.values_mut()[col - total] += eps;
                mm.values_mut()[col - total] -= eps;
            }
            let fp = residual_vector(&up, &mp, &cfg);
            let fm = residual_vector(&um, &mm, &cfg);
            for row in 0..2 * total {
                let fd = (fp[row] - fm[row]) / (2.0 * eps);
                let exact = jac.get(row, col);
                assert!(
                    (fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()),
                    "row {row} col {col}: fd {fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn zero_data_root_is_fixed() {
        let g = TorusGrid::finite_horizon(1, 8, 4, 1.0).unwrap();
        let s = g.spatial();
        let cfg = RunConfig::finite_horizon(
            g,
            HamiltonianSpec::power(2.0).unwrap(),
            CouplingSpec::local(LocalFunction::Affine { slope: 0.0 }, 1.0).unwrap(),
            PolicyConstraint::new(5.0).unwrap(),
            SpaceField::constant(s, 1.0),
            SpaceField::constant(s, 0.0),
        );
        let u = SpaceTimeField::constant(g, 0.0);
        let m = SpaceTimeField::constant(g, 1.0);
        assert_eq!(residual_map(&u, &m, &cfg).unwrap().norms().max(), 0.0);
        let step = newton_step(
            &NewtonState {
                u: u.clone(),
                m: m.clone(),
                residual: ResidualNorms::default(),
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(step.state.u, u);
        assert_eq!(step.state.m, m);
    }

    #[test]
    fn one_node_perturbation_scales_with_operator_rows() {
        let cfg = config(0.5);
        let g = cfg.grid;
        let (u, m) = sample_pair(g);
        let base = residual_map(&u, &m, &cfg).unwrap();
        let eps = 1e-7;
        let mut up = u.clone();
        let node = 2 * g.nodes() + 3;
        up.values_mut()[node] += eps;
        let moved = residual_map(&up, &m, &cfg).unwrap();
        let change = moved.hjb.sub(&base.hjb).max_abs();
        let scale = eps * (1.0 / g.dt() + 2.0 / (g.h() * g.h()));
        assert!(change >= 0.5 * scale && change <= 2.0 * scale + eps * 100.0);
    }

    #[test]
    fn nonlocal_coupling_is_refused() {
        let mut cfg = config(0.5);
        cfg.coupling =
            CouplingSpec::nonlocal(crate::coupling::Kernel::delta(cfg.grid), 0.5).unwrap();
        let (u, m) = sample_pair(cfg.grid);
        assert!(matches!(
            assemble_jacobian(&u, &m, &cfg),
            Err(MfgError::LocalCouplingRequired)
        ));
    }
}
