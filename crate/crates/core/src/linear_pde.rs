//! Linear solvers used inside one policy-iteration step: the backward linear
//! HJB equation and the forward Fokker-Planck equation under a frozen policy,
//! plus their stationary (ergodic) counterparts.
//!
//! The spatial operator for a policy `q` is `A_q = -Lap_h + q.D_h^up`. It is
//! an M-matrix with zero row sums. The Fokker-Planck equations use `A_q^T`, so
//! mass is conserved exactly and positivity follows from the M-matrix property.

use std::time::Instant;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{
    SpaceField, SpaceTimeField, SpaceTimeVectorField, SplitDrift, TorusGrid, VectorField,
};
use crate::linalg::{gauss_seidel, BandedLu, CsrMatrix, TripletBuilder};

/// How linear systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LinearSolver {
    /// Banded LU with partial pivoting after folding the periodic ordering.
    #[default]
    Direct,
    /// Gauss-Seidel sweeps to an absolute residual tolerance.
    GaussSeidel { tol: f64, max_sweeps: usize },
}

impl LinearSolver {
    /// Residual level a caller can expect from this solver.
    pub fn tolerance(&self) -> f64 {
        match self {
            LinearSolver::Direct => 1e-12,
            LinearSolver::GaussSeidel { tol, .. } => *tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearSolveReport {
    /// Largest `max |A x - b|` over all systems solved.
    pub residual_norm: f64,
    /// Total Gauss-Seidel sweeps (0 on the direct path).
    pub iterations: usize,
    pub wall_time: f64,
}

impl LinearSolveReport {
    fn absorb(&mut self, residual: f64, iterations: usize) {
        self.residual_norm = self.residual_norm.max(residual);
        self.iterations += iterations;
    }
}

/// Stationary HJB solution normalized to zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicHjbSolution {
    pub u: SpaceField,
    pub lambda: f64,
}

/// `-Lap_h` as a sparse matrix.
pub fn diffusion_matrix(grid: &TorusGrid) -> CsrMatrix {
    let g = grid.spatial();
    let inv_h2 = 1.0 / (g.h() * g.h());
    let mut b = TripletBuilder::new(g.nodes());
    for node in 0..g.nodes() {
        for axis in 0..g.dim() {
            b.add(node, node, 2.0 * inv_h2);
            b.add(node, g.neighbor(node, axis, 1), -inv_h2);
            b.add(node, g.neighbor(node, axis, -1), -inv_h2);
        }
    }
    b.build()
}

/// Upwind transport `q.D_h^up` as a sparse matrix (matches
/// [`crate::grid::upwind_advection`]).
pub fn advection_matrix(q: &VectorField) -> CsrMatrix {
    drift_advection_matrix(&SplitDrift::from_vector(q))
}

/// Transport matrix of a split drift.
pub fn drift_advection_matrix(q: &SplitDrift) -> CsrMatrix {
    let mut b = TripletBuilder::new(q.grid().nodes());
    add_advection(&mut b, q, 0, 1.0);
    b.build()
}

pub(crate) fn add_advection(b: &mut TripletBuilder, q: &SplitDrift, offset: usize, scale: f64) {
    let g = *q.grid();
    let d = g.dim();
    let inv_h = 1.0 / g.h();
    for node in 0..g.nodes() {
        let row = offset + node;
        for axis in 0..d {
            let plus = q.plus()[node * d + axis];
            if plus != 0.0 {
                b.add(row, row, scale * plus * inv_h);
                b.add(
                    row,
                    offset + g.neighbor(node, axis, -1),
                    -scale * plus * inv_h,
                );
            }
            let minus = q.minus()[node * d + axis];
            if minus != 0.0 {
                b.add(row, row, -scale * minus * inv_h);
                b.add(
                    row,
                    offset + g.neighbor(node, axis, 1),
                    scale * minus * inv_h,
                );
            }
        }
    }
}

/// `A_q = -Lap_h + q.D_h^up`.
pub fn hjb_operator(q: &VectorField) -> CsrMatrix {
    drift_operator(&SplitDrift::from_vector(q))
}

/// `-Lap_h` plus the transport matrix of a split drift.
pub fn drift_operator(q: &SplitDrift) -> CsrMatrix {
    let g = *q.grid();
    let mut b = TripletBuilder::new(g.nodes());
    b.add_block(0, 0, &diffusion_matrix(&g), 1.0);
    add_advection(&mut b, q, 0, 1.0);
    b.build()
}

/// One implicit Euler step matrix `I/dt + A_q`.
pub fn hjb_step_matrix(q: &SplitDrift, dt: f64) -> CsrMatrix {
    let g = *q.grid();
    let mut b = TripletBuilder::new(g.nodes());
    b.add_block(0, 0, &drift_operator(q), 1.0);
    for i in 0..g.nodes() {
        b.add(i, i, 1.0 / dt);
    }
    b.build()
}

/// Fokker-Planck step matrix `I/dt + A_q^T`.
pub fn fp_step_matrix(q: &SplitDrift, dt: f64) -> CsrMatrix {
    hjb_step_matrix(q, dt).transpose()
}

fn solve_system(
    grid: &TorusGrid,
    a: &CsrMatrix,
    rhs: &[f64],
    guess: &[f64],
    solver: LinearSolver,
    report: &mut LinearSolveReport,
) -> Result<Vec<f64>> {
    let x = match solver {
        LinearSolver::Direct => {
            let lu = BandedLu::factor(a, &grid.band_order())?;
            lu.solve(rhs)
        }
        LinearSolver::GaussSeidel { tol, max_sweeps } => {
            let mut x = guess.to_vec();
            let sweeps = gauss_seidel(a, rhs, &mut x, tol, max_sweeps)?;
            report.iterations += sweeps;
            x
        }
    };
    report.absorb(a.residual_inf(&x, rhs), 0);
    Ok(x)
}

fn split_levels(q: &SpaceTimeVectorField, grid: &TorusGrid) -> Result<Vec<SplitDrift>> {
    if !q.grid().same_space(grid) || q.grid().nt() != grid.nt() {
        return Err(MfgError::GridMismatch);
    }
    if q.values().iter().any(|v| !v.is_finite()) {
        return Err(invalid("q", "policy must be finite"));
    }
    Ok((0..grid.nt())
        .map(|k| SplitDrift::from_vector(&q.level(k)))
        .collect())
}

fn check_levels(q: &[SplitDrift], grid: &TorusGrid) -> Result<()> {
    if q.len() != grid.nt() {
        return Err(MfgError::DimensionMismatch {
            expected: grid.nt(),
            got: q.len(),
        });
    }
    if q.iter().any(|l| !l.grid().same_space(grid)) {
        return Err(MfgError::GridMismatch);
    }
    Ok(())
}

/// Backward implicit Euler for `-u_t - Lap u + q.Du = f`, `u(T) = u_T`.
///
/// Level `k` solves `(I/dt + A_{q^k}) u^k = u^{k+1}/dt + f^k`.
pub fn solve_hjb_linear(
    q: &SpaceTimeVectorField,
    f: &SpaceTimeField,
    u_t: &SpaceField,
    solver: LinearSolver,
) -> Result<(SpaceTimeField, LinearSolveReport)> {
    let levels = split_levels(q, f.grid())?;
    solve_hjb_drift(&levels, f, u_t, solver)
}

/// [`solve_hjb_linear`] with one split drift per time level.
pub fn solve_hjb_drift(
    q: &[SplitDrift],
    f: &SpaceTimeField,
    u_t: &SpaceField,
    solver: LinearSolver,
) -> Result<(SpaceTimeField, LinearSolveReport)> {
    let start = Instant::now();
    let g = *f.grid();
    if !g.is_finite_horizon() {
        return Err(MfgError::WrongMode("a finite-horizon grid"));
    }
    check_levels(q, &g)?;
    if !u_t.grid().same_space(&g) {
        return Err(MfgError::GridMismatch);
    }
    let nt = g.nt();
    let dt = g.dt();
    let mut u = SpaceTimeField::constant(g, 0.0);
    u.level_mut(nt - 1).copy_from_slice(u_t.values());
    let mut report = LinearSolveReport::default();
    for k in (0..nt - 1).rev() {
        let a = hjb_step_matrix(&q[k], dt);
        let next = u.level(k + 1);
        let rhs: Vec<f64> = next
            .iter()
            .zip(f.level(k))
            .map(|(un, fk)| un / dt + fk)
            .collect();
        let guess = next.to_vec();
        let x = solve_system(&g, &a, &rhs, &guess, solver, &mut report)?;
        u.level_mut(k).copy_from_slice(&x);
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((u, report))
}

/// Reject densities that are negative somewhere or do not have unit mass.
pub fn check_density(m0: &SpaceField) -> Result<()> {
    if let Some((i, v)) = m0.values().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(MfgError::NonconformingDensity(format!(
            "negative or non-finite value {v} at node {i}"
        )));
    }
    let mass = m0.integral();
    if (mass - 1.0).abs() > 1e-12 {
        return Err(MfgError::NonconformingDensity(format!(
            "total mass {mass} differs from 1"
        )));
    }
    Ok(())
}

/// Forward implicit Euler for `m_t - Lap m - div(m q) = 0`, `m(0) = m0`.
///
/// Step `k -> k+1` solves `(I/dt + A_{q^k}^T) m^{k+1} = m^k/dt`.
pub fn solve_fp(
    q: &SpaceTimeVectorField,
    m0: &SpaceField,
    solver: LinearSolver,
) -> Result<(SpaceTimeField, LinearSolveReport)> {
    let g = *q.grid();
    let levels = split_levels(q, &g)?;
    solve_fp_drift(&levels, &g, m0, solver)
}

/// [`solve_fp`] with one split drift per time level.
pub fn solve_fp_drift(
    q: &[SplitDrift],
    grid: &TorusGrid,
    m0: &SpaceField,
    solver: LinearSolver,
) -> Result<(SpaceTimeField, LinearSolveReport)> {
    let start = Instant::now();
    let g = *grid;
    if !g.is_finite_horizon() {
        return Err(MfgError::WrongMode("a finite-horizon grid"));
    }
    check_levels(q, &g)?;
    if !m0.grid().same_space(&g) {
        return Err(MfgError::GridMismatch);
    }
    check_density(m0)?;
    let nt = g.nt();
    let dt = g.dt();
    let mut m = SpaceTimeField::constant(g, 0.0);
    m.level_mut(0).copy_from_slice(m0.values());
    let mut report = LinearSolveReport::default();
    for k in 0..nt - 1 {
        let a = fp_step_matrix(&q[k], dt);
        let prev = m.level(k);
        let rhs: Vec<f64> = prev.iter().map(|v| v / dt).collect();
        let guess = prev.to_vec();
        let x = solve_system(&g, &a, &rhs, &guess, solver, &mut report)?;
        m.level_mut(k + 1).copy_from_slice(&x);
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((m, report))
}

/// `A_q + alpha e_0 e_0^T` (or its transpose): nonsingular because the
/// invariant measure of `A_q` is positive at node 0.
fn pinned_operator(q: &SplitDrift, transpose: bool) -> CsrMatrix {
    let a = drift_operator(q);
    let a = if transpose { a.transpose() } else { a };
    let alpha = a.get(0, 0).max(1.0);
    let mut b = TripletBuilder::new(a.dim());
    b.add_block(0, 0, &a, 1.0);
    b.add(0, 0, alpha);
    b.build()
}

fn check_finite_drift(q: &VectorField) -> Result<()> {
    if q.values().iter().any(|v| !v.is_finite()) {
        return Err(invalid("q", "policy must be finite"));
    }
    Ok(())
}

/// Invariant density: `A_q^T m = 0`, `h^d sum m = 1`.
pub fn solve_ergodic_fp(
    q: &VectorField,
    solver: LinearSolver,
) -> Result<(SpaceField, LinearSolveReport)> {
    check_finite_drift(q)?;
    solve_ergodic_fp_drift(&SplitDrift::from_vector(q), solver)
}

/// [`solve_ergodic_fp`] for a split drift.
///
/// Solves `(A_q^T + alpha e_0 e_0^T) c = e_0`; every solution of the singular
/// system is a multiple of `c`, which is nonnegative (inverse M-matrix), so
/// normalizing `c` gives the unique density.
pub fn solve_ergodic_fp_drift(
    q: &SplitDrift,
    solver: LinearSolver,
) -> Result<(SpaceField, LinearSolveReport)> {
    let start = Instant::now();
    let g = *q.grid();
    let pinned = pinned_operator(q, true);
    let mut rhs = vec![0.0; g.nodes()];
    rhs[0] = 1.0;
    let guess = vec![1.0; g.nodes()];
    let mut report = LinearSolveReport::default();
    let c = solve_system(&g, &pinned, &rhs, &guess, solver, &mut report)?;
    let mass = g.cell_volume() * c.iter().sum::<f64>();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(MfgError::SingularSystem(format!(
            "invariant measure has mass {mass}"
        )));
    }
    let m = SpaceField::new(g, c.into_iter().map(|v| v / mass).collect())?;
    let at = drift_operator(q).transpose();
    report.residual_norm = at.residual_inf(m.values(), &vec![0.0; g.nodes()]);
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((m, report))
}

/// Stationary HJB with additive eigenvalue: `A_q u + lambda = f`, `h^d sum u = 0`.
pub fn solve_ergodic_hjb(
    q: &VectorField,
    f: &SpaceField,
    solver: LinearSolver,
) -> Result<(ErgodicHjbSolution, LinearSolveReport)> {
    check_finite_drift(q)?;
    solve_ergodic_hjb_drift(&SplitDrift::from_vector(q), f, solver)
}

/// [`solve_ergodic_hjb`] for a split drift.
///
/// Bordered solve through the pinned operator `A' = A_q + alpha e_0 e_0^T`:
/// with `a = A'^{-1} f` and `b = A'^{-1} 1`, `lambda = a_0 / b_0` and
/// `u = a - lambda b` shifted to mean zero.
pub fn solve_ergodic_hjb_drift(
    q: &SplitDrift,
    f: &SpaceField,
    solver: LinearSolver,
) -> Result<(ErgodicHjbSolution, LinearSolveReport)> {
    let start = Instant::now();
    let g = *q.grid();
    if !f.grid().same_space(&g) {
        return Err(MfgError::GridMismatch);
    }
    let pinned = pinned_operator(q, false);
    let n = g.nodes();
    let mut report = LinearSolveReport::default();
    let (a, b) = match solver {
        LinearSolver::Direct => {
            let lu = BandedLu::factor(&pinned, &g.band_order())?;
            (lu.solve(f.values()), lu.solve(&vec![1.0; n]))
        }
        LinearSolver::GaussSeidel { .. } => {
            let a = solve_system(&g, &pinned, f.values(), &vec![0.0; n], solver, &mut report)?;
            let b = solve_system(
                &g,
                &pinned,
                &vec![1.0; n],
                &vec![1.0; n],
                solver,
                &mut report,
            )?;
            (a, b)
        }
    };
    if !(b[0] > 0.0) {
        return Err(MfgError::SingularSystem(
            "bordered system degenerate".into(),
        ));
    }
    let lambda = a[0] / b[0];
    let mut u: Vec<f64> = a.iter().zip(&b).map(|(ai, bi)| ai - lambda * bi).collect();
    let mean = u.iter().sum::<f64>() / n as f64;
    u.iter_mut().for_each(|v| *v -= mean);
    let op = drift_operator(q);
    let shifted: Vec<f64> = f.values().iter().map(|fv| fv - lambda).collect();
    report.residual_norm = report.residual_norm.max(op.residual_inf(&u, &shifted));
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((
        ErgodicHjbSolution {
            u: SpaceField::new(g, u)?,
            lambda,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{divergence_form, upwind_advection};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_policy(g: TorusGrid, bound: f64, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..g.nodes() * g.dim())
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        VectorField::new(g, vals).unwrap()
    }

    #[test]
    fn matrices_match_matrix_free_operators() {
        let g = TorusGrid::ergodic(2, 6).unwrap();
        let q = random_policy(g, 3.0, 1);
        let u = SpaceField::from_fn(g, |x| (x[0] * 7.0).sin() + x[1]);
        let a = advection_matrix(&q);
        let via_matrix = a.matvec(u.values());
        let direct = upwind_advection(&q, &u).unwrap();
        for (x, y) in via_matrix.iter().zip(direct.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let div = divergence_form(&u, &q).unwrap();
        let via_t = a.transpose().matvec(u.values());
        for (x, y) in via_t.iter().zip(div.values()) {
            assert!((x + y).abs() < 1e-12);
        }
    }

    #[test]
    fn hjb_constants_and_linear_growth() {
        let g = TorusGrid::finite_horizon(1, 16, 11, 2.0).unwrap();
        let q = SpaceTimeVectorField::zeros(g);
        let (u, _) = solve_hjb_linear(
            &q,
            &SpaceTimeField::constant(g, 0.0),
            &SpaceField::constant(g, 3.0),
            LinearSolver::Direct,
        )
        .unwrap();
        assert!(u.values().iter().all(|v| (v - 3.0).abs() < 1e-13));
        let (u, rep) = solve_hjb_linear(
            &q,
            &SpaceTimeField::constant(g, 1.0),
            &SpaceField::constant(g, 0.0),
            LinearSolver::Direct,
        )
        .unwrap();
        for k in 0..g.nt() {
            let expect = 2.0 - g.time(k);
            assert!(u.level(k).iter().all(|v| (v - expect).abs() < 1e-12));
        }
        assert!(rep.residual_norm < 1e-10);
    }

    #[test]
    fn heat_mode_decays() {
        let g = TorusGrid::finite_horizon(1, 64, 401, 0.1).unwrap();
        let q = SpaceTimeVectorField::zeros(g);
        let u_t = SpaceField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let (u, _) = solve_hjb_linear(
            &q,
            &SpaceTimeField::constant(g, 0.0),
            &u_t,
            LinearSolver::Direct,
        )
        .unwrap();
        let tol = 4.0 * PI * PI * (g.h() * g.h() + g.dt());
        for k in [0, 100, 300] {
            let t = g.time(k);
            for i in 0..g.nodes() {
                let x = g.coords(i)[0];
                let exact = (-4.0 * PI * PI * (0.1 - t)).exp() * (2.0 * PI * x).sin();
                assert!(
                    (u.level(k)[i] - exact).abs() < tol,
                    "{} {} {}",
                    k,
                    u.level(k)[i],
                    exact
                );
            }
        }
    }

    #[test]
    fn fp_uniform_stays_uniform_and_mass_is_conserved() {
        let g = TorusGrid::finite_horizon(2, 8, 6, 1.0).unwrap();
        let (m, _) = solve_fp(
            &SpaceTimeVectorField::zeros(g),
            &SpaceField::constant(g, 1.0),
            LinearSolver::Direct,
        )
        .unwrap();
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mut q = SpaceTimeVectorField::zeros(g);
        for k in 0..g.nt() {
            q.set_level(k, &random_policy(g, 5.0, k as u64));
        }
        let m0 = SpaceField::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
        let (m, _) = solve_fp(&q, &m0, LinearSolver::Direct).unwrap();
        for k in 0..g.nt() {
            let slice = m.slice(k);
            assert!((slice.integral() - 1.0).abs() < 1e-12);
            assert!(slice.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn fp_rejects_nonconforming_densities() {
        let g = TorusGrid::finite_horizon(1, 8, 3, 1.0).unwrap();
        let q = SpaceTimeVectorField::zeros(g);
        let heavy = SpaceField::constant(g, 1.5);
        assert!(matches!(
            solve_fp(&q, &heavy, LinearSolver::Direct),
            Err(MfgError::NonconformingDensity(_))
        ));
        let mut neg = SpaceField::constant(g, 1.0);
        neg.values_mut()[0] = -0.5;
        neg.values_mut()[1] = 2.5;
        assert!(matches!(
            solve_fp(&q, &neg, LinearSolver::Direct),
            Err(MfgError::NonconformingDensity(_))
        ));
    }

    #[test]
    fn fp_fourier_mode_decays() {
        let g = TorusGrid::finite_horizon(1, 64, 401, 0.1).unwrap();
        let m0 = SpaceField::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin());
        let (m, _) = solve_fp(&SpaceTimeVectorField::zeros(g), &m0, LinearSolver::Direct).unwrap();
        let tol = 4.0 * PI * PI * (g.h() * g.h() + g.dt());
        for k in [50, 400] {
            let t = g.time(k);
            for i in 0..g.nodes() {
                let x = g.coords(i)[0];
                let exact = 1.0 + 0.5 * (-4.0 * PI * PI * t).exp() * (2.0 * PI * x).sin();
                assert!((m.level(k)[i] - exact).abs() < tol);
            }
        }
    }

    #[test]
    fn ergodic_fp_examples() {
        let g = TorusGrid::ergodic(1, 32).unwrap();
        let (m, _) = solve_ergodic_fp(&VectorField::zeros(g), LinearSolver::Direct).unwrap();
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        // gradient-like drift
        let q = VectorField::new(
            g,
            (0..32)
                .map(|i| 0.8 * (2.0 * PI * g.coords(i)[0]).sin())
                .collect(),
        )
        .unwrap();
        let (m, rep) = solve_ergodic_fp(&q, LinearSolver::Direct).unwrap();
        assert!(rep.residual_norm <= 1e-10);
        assert!((m.integral() - 1.0).abs() < 1e-13);
        assert!(m.values().iter().all(|&v| v >= 0.0));
        // translation
        let shifted = VectorField::new(
            g,
            (0..32).map(|i| q.values()[g.neighbor(i, 0, -1)]).collect(),
        )
        .unwrap();
        let (ms, _) = solve_ergodic_fp(&shifted, LinearSolver::Direct).unwrap();
        for i in 0..32 {
            assert!((ms.values()[i] - m.values()[g.neighbor(i, 0, -1)]).abs() < 1e-12);
        }
    }

    #[test]
    fn ergodic_hjb_examples() {
        let g = TorusGrid::ergodic(1, 64).unwrap();
        let (sol, _) = solve_ergodic_hjb(
            &VectorField::zeros(g),
            &SpaceField::constant(g, 2.5),
            LinearSolver::Direct,
        )
        .unwrap();
        assert!((sol.lambda - 2.5).abs() < 1e-12);
        assert!(sol.u.max_abs() < 1e-12);
        let f = SpaceField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let (sol, rep) =
            solve_ergodic_hjb(&VectorField::zeros(g), &f, LinearSolver::Direct).unwrap();
        assert!(sol.lambda.abs() < 1e-12);
        assert!(rep.residual_norm < 1e-9);
        for i in 0..64 {
            let exact = (2.0 * PI * g.coords(i)[0]).sin() / (4.0 * PI * PI);
            assert!((sol.u.values()[i] - exact).abs() < g.h() * g.h());
        }
        assert!(sol.u.integral().abs() < 1e-12);
    }

    #[test]
    fn ergodic_lambda_is_fredholm_pairing() {
        for d in [1, 2] {
            let g = TorusGrid::ergodic(d, if d == 1 { 40 } else { 10 }).unwrap();
            let q = random_policy(g, 4.0, 11);
            let f = SpaceField::from_fn(g, |x| (6.0 * x[0]).cos() + x[1]);
            let (sol, _) = solve_ergodic_hjb(&q, &f, LinearSolver::Direct).unwrap();
            let (m, _) = solve_ergodic_fp(&q, LinearSolver::Direct).unwrap();
            assert!((sol.lambda - f.dot(&m)).abs() < 1e-10);
        }
    }

    #[test]
    fn gauss_seidel_path_agrees_with_direct() {
        let g = TorusGrid::finite_horizon(2, 8, 5, 0.5).unwrap();
        let mut q = SpaceTimeVectorField::zeros(g);
        for k in 0..g.nt() {
            q.set_level(k, &random_policy(g, 2.0, 3 + k as u64));
        }
        let f = SpaceTimeField::constant(g, 0.3);
        let u_t = SpaceField::from_fn(g, |x| (2.0 * PI * x[1]).cos());
        let gs = LinearSolver::GaussSeidel {
            tol: 1e-12,
            max_sweeps: 10_000,
        };
        let (ud, _) = solve_hjb_linear(&q, &f, &u_t, LinearSolver::Direct).unwrap();
        let (ug, rep) = solve_hjb_linear(&q, &f, &u_t, gs).unwrap();
        assert!(rep.iterations > 0);
        assert!(ud.sub(&ug).max_abs() < 1e-10);
    }
}
