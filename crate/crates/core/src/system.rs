//! The nonlinear discrete MFG system that policy iteration and Newton both solve.
//!
//! For radial Hamiltonians the discrete Hamiltonian at a node is
//! `H_h(u) = max_{|Q| <= R} Q.P - L(Q)` with the stacked one-sided gradient
//! `P = ((D^- u)^+, (D^+ u)^-)` in `R^{2d}`; its maximizer is a split drift
//! (backward part `Q_j`, forward part `-Q_{d+j}`). This is monotone and
//! continuously differentiable in `u`. Custom Hamiltonians use the single
//! upwind-selected gradient instead. The discrete Fokker-Planck operator for
//! the step `k -> k+1` is the transpose of the HJB operator for the greedy
//! drift at level `k`.

use crate::coupling::CouplingSpec;
use crate::error::{MfgError, Result};
use crate::grid::{
    euclid, upwind_selection, SpaceField, SpaceTimeField, SplitDrift, TorusGrid, VectorField,
};
use crate::hamiltonian::{HamiltonianSpec, RadialPolicy};
use crate::linear_pde::{diffusion_matrix, drift_operator};

/// Greedy drift for one spatial slice of `u`.
#[derive(Debug, Clone)]
pub(crate) struct Greedy {
    pub drift: SplitDrift,
    /// Attained maxima `H_h(u)` per node.
    pub h_values: Vec<f64>,
    /// Stacked gradient `P`, `2d` entries per node (radial kinds only).
    pub stacked: Vec<f64>,
    /// Per-node maximizer data (radial kinds only).
    pub radial: Vec<RadialPolicy>,
    /// Whether the ball constraint clipped the maximizer somewhere.
    pub projected: bool,
    /// Nodes where `|P|` sits exactly on a truncation sphere.
    pub kinks: usize,
}

/// `P = ((D^- u)^+, (D^+ u)^-)` per node.
pub(crate) fn stacked_gradient(g: &TorusGrid, u: &[f64]) -> Vec<f64> {
    let d = g.dim();
    let inv_h = 1.0 / g.h();
    let mut out = vec![0.0; g.nodes() * 2 * d];
    for node in 0..g.nodes() {
        for axis in 0..d {
            let back = (u[node] - u[g.neighbor(node, axis, -1)]) * inv_h;
            let fwd = (u[g.neighbor(node, axis, 1)] - u[node]) * inv_h;
            out[node * 2 * d + axis] = back.max(0.0);
            out[node * 2 * d + d + axis] = (-fwd).max(0.0);
        }
    }
    out
}

pub(crate) fn greedy(
    hamiltonian: &HamiltonianSpec,
    grid: &TorusGrid,
    u: &[f64],
    radius: f64,
) -> Result<Greedy> {
    let g = grid.spatial();
    let d = g.dim();
    let n = g.nodes();
    let mut h_values = vec![0.0; n];
    let mut projected = false;
    if !hamiltonian.is_radial() {
        let (p, _) = upwind_selection(&g, u);
        let mut q = vec![0.0; n * d];
        for node in 0..n {
            let qn = &mut q[node * d..(node + 1) * d];
            h_values[node] =
                hamiltonian.policy_at(&p[node * d..(node + 1) * d], node, radius, qn)?;
            if euclid(qn) >= radius * (1.0 - 1e-12) {
                projected = true;
            }
        }
        return Ok(Greedy {
            drift: SplitDrift::from_vector(&VectorField::new(g, q)?),
            h_values,
            stacked: Vec::new(),
            radial: Vec::new(),
            projected,
            kinks: 0,
        });
    }
    let stacked = stacked_gradient(&g, u);
    let mut plus = vec![0.0; n * d];
    let mut minus = vec![0.0; n * d];
    let mut radial = Vec::with_capacity(n);
    let mut kinks = 0;
    for node in 0..n {
        let pn = &stacked[node * 2 * d..(node + 1) * 2 * d];
        let r = euclid(pn);
        let pol = hamiltonian
            .radial_policy(r, node, radius)
            .expect("radial kind");
        h_values[node] = pol.value;
        projected |= pol.projected;
        kinks += usize::from(pol.kink);
        if r > 0.0 {
            let s = pol.magnitude / r;
            for axis in 0..d {
                plus[node * d + axis] = s * pn[axis];
                minus[node * d + axis] = -s * pn[d + axis];
            }
        }
        radial.push(pol);
    }
    Ok(Greedy {
        drift: SplitDrift::new(g, plus, minus)?,
        h_values,
        stacked,
        radial,
        projected,
        kinks,
    })
}

/// Running cost `L(x, Q(x))` of a drift at every node.
pub(crate) fn running_cost(hamiltonian: &HamiltonianSpec, q: &SplitDrift) -> Result<Vec<f64>> {
    let g = q.grid();
    if hamiltonian.is_radial() {
        (0..g.nodes())
            .map(|node| hamiltonian.radial_cost(q.magnitude(node), node))
            .collect()
    } else {
        let d = g.dim();
        let net = q.net();
        (0..g.nodes())
            .map(|node| hamiltonian.legendre(&net.values()[node * d..(node + 1) * d], Some(node)))
            .collect()
    }
}

/// Data of a finite-horizon discrete system.
#[derive(Debug, Clone, Copy)]
pub struct FiniteSystem<'a> {
    pub grid: TorusGrid,
    pub hamiltonian: &'a HamiltonianSpec,
    pub coupling: &'a CouplingSpec,
    pub radius: f64,
    pub m0: &'a SpaceField,
    pub u_t: &'a SpaceField,
}

/// Nodewise residual of the finite-horizon discrete system.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteResidual {
    /// Rows `k < nt-1`: `(u^k - u^{k+1})/dt - Lap u^k + H_h(u^k) - sigma F[m^k]`;
    /// row `nt-1`: `u^{nt-1} - u_T`.
    pub hjb: SpaceTimeField,
    /// Row 0: `m^0 - m_0`; rows `k >= 1`:
    /// `(m^k - m^{k-1})/dt + A_{q^{k-1}}^T m^k` with `q^{k-1}` greedy for `u^{k-1}`.
    pub fp: SpaceTimeField,
}

/// Max-norm summary of a residual.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualNorms {
    pub hjb: f64,
    pub fp: f64,
    /// `|u(T) - u_T|` / `|m(0) - m_0|` (finite horizon) or normalization
    /// defects `|mean u|` and `|mass m - 1|` (ergodic).
    pub boundary: f64,
}

impl ResidualNorms {
    pub fn max(&self) -> f64 {
        self.hjb.max(self.fp).max(self.boundary)
    }
}

impl FiniteResidual {
    pub fn norms(&self) -> ResidualNorms {
        let g = *self.hjb.grid();
        let nt = g.nt();
        let max = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut hjb: f64 = 0.0;
        let mut fp: f64 = 0.0;
        for k in 0..nt - 1 {
            hjb = hjb.max(max(self.hjb.level(k)));
            fp = fp.max(max(self.fp.level(k + 1)));
        }
        ResidualNorms {
            hjb,
            fp,
            boundary: max(self.hjb.level(nt - 1)).max(max(self.fp.level(0))),
        }
    }
}

impl FiniteSystem<'_> {
    pub fn residual(&self, u: &SpaceTimeField, m: &SpaceTimeField) -> Result<FiniteResidual> {
        let g = self.grid;
        if !u.grid().same_space(&g)
            || !m.grid().same_space(&g)
            || u.grid().nt() != g.nt()
            || m.grid().nt() != g.nt()
        {
            return Err(MfgError::GridMismatch);
        }
        let nt = g.nt();
        let dt = g.dt();
        let diff = diffusion_matrix(&g);
        let mut hjb = SpaceTimeField::constant(g, 0.0);
        let mut fp = SpaceTimeField::constant(g, 0.0);
        for k in 0..nt - 1 {
            let uk = u.level(k);
            let gr = greedy(self.hamiltonian, &g, uk, self.radius)?;
            let lap = diff.matvec(uk);
            let forcing = self.coupling.forcing(&m.slice(k))?;
            let row = hjb.level_mut(k);
            for i in 0..g.nodes() {
                row[i] = (uk[i] - u.level(k + 1)[i]) / dt + lap[i] + gr.h_values[i]
                    - forcing.values()[i];
            }
            let mk1 = m.level(k + 1);
            let transport = drift_operator(&gr.drift).transpose().matvec(mk1);
            let row = fp.level_mut(k + 1);
            for i in 0..g.nodes() {
                row[i] = (mk1[i] - m.level(k)[i]) / dt + transport[i];
            }
        }
        for (r, (a, b)) in hjb
            .level_mut(nt - 1)
            .iter_mut()
            .zip(u.level(nt - 1).iter().zip(self.u_t.values()))
        {
            *r = a - b;
        }
        for (r, (a, b)) in fp
            .level_mut(0)
            .iter_mut()
            .zip(m.level(0).iter().zip(self.m0.values()))
        {
            *r = a - b;
        }
        Ok(FiniteResidual { hjb, fp })
    }
}

/// Data of a stationary discrete system.
#[derive(Debug, Clone, Copy)]
pub struct ErgodicSystem<'a> {
    pub grid: TorusGrid,
    pub hamiltonian: &'a HamiltonianSpec,
    pub coupling: &'a CouplingSpec,
    pub radius: f64,
}

impl ErgodicSystem<'_> {
    /// `max |-Lap u + H_h(u) + lambda - sigma F[m]|`, `max |A_q^T m|` for the
    /// greedy `q`, and the normalization defects.
    pub fn residual(&self, u: &SpaceField, lambda: f64, m: &SpaceField) -> Result<ResidualNorms> {
        let g = self.grid.spatial();
        if !u.grid().same_space(&g) || !m.grid().same_space(&g) {
            return Err(MfgError::GridMismatch);
        }
        let gr = greedy(self.hamiltonian, &g, u.values(), self.radius)?;
        let lap = diffusion_matrix(&g).matvec(u.values());
        let forcing = self.coupling.forcing(m)?;
        let hjb = (0..g.nodes())
            .map(|i| (lap[i] + gr.h_values[i] + lambda - forcing.values()[i]).abs())
            .fold(0.0, f64::max);
        let transport = drift_operator(&gr.drift).transpose().matvec(m.values());
        let fp = transport.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mean = u.integral();
        let mass = m.integral() - 1.0;
        Ok(ResidualNorms {
            hjb,
            fp,
            boundary: mean.abs().max(mass.abs()),
        })
    }
}
