#![allow(dead_code)]

use std::f64::consts::PI;

use mfg_pi::coupling::{CouplingSpec, Kernel, LocalFunction};
use mfg_pi::grid::{SpaceField, TorusGrid};
use mfg_pi::hamiltonian::{HamiltonianSpec, PolicyConstraint};
use mfg_pi::policy_iteration::RunConfig;

/// Periodic bump `exp(c cos 2 pi (x - center))`, normalized to unit mass.
pub fn bump(grid: TorusGrid, center: f64, concentration: f64) -> SpaceField {
    let mut m = SpaceField::from_fn(grid.spatial(), |x| {
        let mut e = (concentration * (2.0 * PI * (x[0] - center)).cos()).exp();
        if grid.dim() == 2 {
            e *= (concentration * (2.0 * PI * (x[1] - center)).cos()).exp();
        }
        e
    });
    let mass = m.integral();
    m.values_mut().iter_mut().for_each(|v| *v /= mass);
    m
}

pub fn cosine_terminal(grid: TorusGrid) -> SpaceField {
    SpaceField::from_fn(grid.spatial(), |x| (2.0 * PI * x[0]).cos())
}

/// d = 1, n = 64, nt = 64, T = 1, gamma = 2, kernel 1 + cos(2 pi (x - y)) / 2.
pub fn reference(sigma: f64) -> RunConfig {
    let g = TorusGrid::finite_horizon(1, 64, 64, 1.0).unwrap();
    let s = g.spatial();
    let coupling = CouplingSpec::nonlocal(Kernel::cosine(s, 1.0, 0.5), sigma).unwrap();
    RunConfig::finite_horizon(
        g,
        HamiltonianSpec::power(2.0).unwrap(),
        coupling,
        PolicyConstraint::new(50.0).unwrap(),
        bump(g, 0.5, 4.0),
        cosine_terminal(g),
    )
    .with_tol(1e-10)
    .with_max_iter(50)
}

/// Stationary potential `cos(2 pi x)` (plus `cos(2 pi y)` in 2-d).
pub fn cosine_potential(grid: TorusGrid, amplitude: f64) -> SpaceField {
    SpaceField::from_fn(grid.spatial(), |x| {
        let mut v = (2.0 * PI * x[0]).cos();
        if grid.dim() == 2 {
            v += (2.0 * PI * x[1]).cos();
        }
        amplitude * v
    })
}

/// Ergodic analog of [`reference`]: same kernel plus a cosine potential.
pub fn ergodic_reference(sigma: f64) -> RunConfig {
    let g = TorusGrid::ergodic(1, 64).unwrap();
    let coupling = CouplingSpec::nonlocal(Kernel::cosine(g, 1.0, 0.5), sigma)
        .unwrap()
        .with_potential(cosine_potential(g, 10.0))
        .unwrap();
    RunConfig::ergodic(
        g,
        HamiltonianSpec::power(2.0).unwrap(),
        coupling,
        PolicyConstraint::new(50.0).unwrap(),
    )
    .with_tol(1e-10)
    .with_max_iter(50)
}

/// Local coupling `F[m] = V + m` on a finite horizon.
pub fn local_reference(sigma: f64, n: usize, nt: usize) -> RunConfig {
    let g = TorusGrid::finite_horizon(1, n, nt, 1.0).unwrap();
    let coupling = CouplingSpec::local(LocalFunction::Affine { slope: 1.0 }, sigma)
        .unwrap()
        .with_potential(cosine_potential(g, 1.0))
        .unwrap();
    RunConfig::finite_horizon(
        g,
        HamiltonianSpec::power(2.0).unwrap(),
        coupling,
        PolicyConstraint::new(50.0).unwrap(),
        bump(g, 0.5, 2.0),
        cosine_terminal(g),
    )
    .with_tol(1e-11)
    .with_max_iter(50)
}

/// `F[m] = V` only.
pub fn independent_reference(n: usize, nt: usize) -> RunConfig {
    let g = TorusGrid::finite_horizon(1, n, nt, 1.0).unwrap();
    let coupling = CouplingSpec::independent(cosine_potential(g, 1.0), 1.0).unwrap();
    RunConfig::finite_horizon(
        g,
        HamiltonianSpec::power(2.0).unwrap(),
        coupling,
        PolicyConstraint::new(50.0).unwrap(),
        bump(g, 0.5, 2.0),
        cosine_terminal(g),
    )
    .with_tol(1e-11)
    .with_max_iter(50)
}
