//! Uniform periodic grids on the unit torus, grid functions, finite-difference
//! operators and discrete Lebesgue/Sobolev norms.
//!
//! Nodes are indexed axis-0-fastest: node `i + n*j` sits at `(i*h, j*h)`.
//! Space-time storage is level-major: value `(k, node)` lives at `k*N + node`
//! with `N = n^d`. Vector fields store their `d` components contiguously per node.

use crate::error::{invalid, MfgError, Result};

/// Uniform periodic discretization of the torus `[0,1)^d`, optionally with a
/// time axis `[0, T]` sampled at `nt` levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    d: usize,
    n: usize,
    nt: usize,
    horizon: Option<f64>,
}

impl TorusGrid {
    /// Grid for a finite-horizon problem on `T^d x [0, horizon]`.
    pub fn finite_horizon(d: usize, n: usize, nt: usize, horizon: f64) -> Result<Self> {
        Self::check_space(d, n)?;
        if nt < 2 {
            return Err(invalid(
                "nt",
                format!("need at least 2 time levels, got {nt}"),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        Ok(Self {
            d,
            n,
            nt,
            horizon: Some(horizon),
        })
    }

    /// Spatial grid only (ergodic problems).
    pub fn ergodic(d: usize, n: usize) -> Result<Self> {
        Self::check_space(d, n)?;
        Ok(Self {
            d,
            n,
            nt: 1,
            horizon: None,
        })
    }

    fn check_space(d: usize, n: usize) -> Result<()> {
        if !(d == 1 || d == 2) {
            return Err(invalid("d", format!("only d = 1 or 2 supported, got {d}")));
        }
        if n < 3 {
            return Err(invalid(
                "n",
                format!("need at least 3 nodes per axis, got {n}"),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of time levels (1 for ergodic grids).
    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    pub fn is_finite_horizon(&self) -> bool {
        self.horizon.is_some()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Time step `T/(nt-1)`; zero on ergodic grids.
    pub fn dt(&self) -> f64 {
        match self.horizon {
            Some(t) => t / (self.nt - 1) as f64,
            None => 0.0,
        }
    }

    /// Total number of spatial nodes `n^d`.
    pub fn nodes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Quadrature weight of one node, `h^d`; the weights sum to one.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Coordinates of a node (unused axes are zero).
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let h = self.h();
        let mut x = [0.0; 2];
        let mut rest = node;
        for c in x.iter_mut().take(self.d) {
            *c = (rest % self.n) as f64 * h;
            rest /= self.n;
        }
        x
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt()
    }

    /// Neighbor of `node` one step along `axis` in direction `shift` (+1 or -1), with wrap-around.
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, shift: isize) -> usize {
        let stride = self.n.pow(axis as u32);
        let idx = (node / stride) % self.n;
        let wrapped = (idx as isize + shift).rem_euclid(self.n as isize) as usize;
        node - idx * stride + wrapped * stride
    }

    /// Node ordering that folds each periodic axis onto itself
    /// (0, n-1, 1, n-2, ...) so that every stencil neighbor stays within a
    /// narrow band. Returns `position[node]`.
    pub fn band_order(&self) -> Vec<usize> {
        let fold = |i: usize| -> usize {
            if i < self.n - i {
                2 * i
            } else {
                2 * (self.n - i) - 1
            }
        };
        (0..self.nodes())
            .map(|node| {
                let mut rest = node;
                let mut pos = 0;
                let mut stride = 1;
                for _ in 0..self.d {
                    pos += fold(rest % self.n) * stride;
                    rest /= self.n;
                    stride *= self.n;
                }
                pos
            })
            .collect()
    }

    /// Same spatial discretization, no time axis.
    pub fn spatial(&self) -> TorusGrid {
        TorusGrid {
            d: self.d,
            n: self.n,
            nt: 1,
            horizon: None,
        }
    }

    pub(crate) fn same_space(&self, other: &TorusGrid) -> bool {
        self.d == other.d && self.n == other.n
    }
}

/// One real value per spatial node.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl SpaceField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        let grid = grid.spatial();
        if values.len() != grid.nodes() {
            return Err(MfgError::DimensionMismatch {
                expected: grid.nodes(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        let grid = grid.spatial();
        Self {
            grid,
            values: vec![c; grid.nodes()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let grid = grid.spatial();
        let values = (0..grid.nodes()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `h^d * sum(values)`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Discrete L2 pairing `h^d * sum(f*g)`.
    pub fn dot(&self, other: &SpaceField) -> f64 {
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise linear combination `a*self + b*other`.
    pub fn axpby(&self, a: f64, other: &SpaceField, b: f64) -> SpaceField {
        SpaceField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn sub(&self, other: &SpaceField) -> SpaceField {
        self.axpby(1.0, other, -1.0)
    }
}

/// One real value per (time level, node), level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.nodes() * grid.nt();
        if values.len() != expected {
            return Err(MfgError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.nodes() * grid.nt()],
        }
    }

    /// Every level equal to `slice`.
    pub fn broadcast(grid: TorusGrid, slice: &SpaceField) -> Self {
        let mut values = Vec::with_capacity(grid.nodes() * grid.nt());
        for _ in 0..grid.nt() {
            values.extend_from_slice(slice.values());
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.nodes();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.nodes();
        &mut self.values[k * n..(k + 1) * n]
    }

    /// Copy of one time level as a spatial field.
    pub fn slice(&self, k: usize) -> SpaceField {
        SpaceField {
            grid: self.grid.spatial(),
            values: self.level(k).to_vec(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &SpaceTimeField) -> SpaceTimeField {
        SpaceTimeField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// `d` real components per spatial node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        let grid = grid.spatial();
        let expected = grid.nodes() * grid.dim();
        if values.len() != expected {
            return Err(MfgError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        let grid = grid.spatial();
        Self {
            grid,
            values: vec![0.0; grid.nodes() * grid.dim()],
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[node * d..(node + 1) * d]
    }

    /// Largest Euclidean length over nodes.
    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks(self.grid.dim())
            .map(euclid)
            .fold(0.0, f64::max)
    }
}

/// `d` real components per (time level, node).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeVectorField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl SpaceTimeVectorField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.nodes() * grid.nt() * grid.dim();
        if values.len() != expected {
            return Err(MfgError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.nodes() * grid.nt() * grid.dim()],
        }
    }

    /// Same spatial field at every level.
    pub fn broadcast(grid: TorusGrid, q: &VectorField) -> Self {
        let mut values = Vec::with_capacity(grid.nodes() * grid.nt() * grid.dim());
        for _ in 0..grid.nt() {
            values.extend_from_slice(q.values());
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level(&self, k: usize) -> VectorField {
        let len = self.grid.nodes() * self.grid.dim();
        VectorField {
            grid: self.grid.spatial(),
            values: self.values[k * len..(k + 1) * len].to_vec(),
        }
    }

    pub fn set_level(&mut self, k: usize, q: &VectorField) {
        let len = self.grid.nodes() * self.grid.dim();
        self.values[k * len..(k + 1) * len].copy_from_slice(q.values());
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks(self.grid.dim())
            .map(euclid)
            .fold(0.0, f64::max)
    }

    /// Largest componentwise-Euclidean distance between two policies.
    pub fn max_distance(&self, other: &SpaceTimeVectorField) -> f64 {
        let d = self.grid.dim();
        self.values
            .chunks(d)
            .zip(other.values.chunks(d))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Upwind drift with separate coefficients for the backward difference
/// (`plus >= 0`) and the forward difference (`minus <= 0`) along each axis.
///
/// The transport term at node `i` is
/// `sum_j plus_j (u_i - u_{i-e_j})/h + minus_j (u_{i+e_j} - u_i)/h`.
/// A plain drift `q` corresponds to `plus = q^+`, `minus = -q^-`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDrift {
    grid: TorusGrid,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl SplitDrift {
    pub fn zeros(grid: TorusGrid) -> Self {
        let len = grid.nodes() * grid.dim();
        Self {
            grid: grid.spatial(),
            plus: vec![0.0; len],
            minus: vec![0.0; len],
        }
    }

    pub fn new(grid: TorusGrid, plus: Vec<f64>, minus: Vec<f64>) -> Result<Self> {
        let expected = grid.nodes() * grid.dim();
        for v in [&plus, &minus] {
            if v.len() != expected {
                return Err(MfgError::DimensionMismatch {
                    expected,
                    got: v.len(),
                });
            }
        }
        if plus.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || minus.iter().any(|v| !(*v <= 0.0 && v.is_finite()))
        {
            return Err(invalid("drift", "need finite plus >= 0 and minus <= 0"));
        }
        Ok(Self {
            grid: grid.spatial(),
            plus,
            minus,
        })
    }

    pub fn from_vector(q: &VectorField) -> Self {
        Self {
            grid: q.grid,
            plus: q.values.iter().map(|v| v.max(0.0)).collect(),
            minus: q.values.iter().map(|v| v.min(0.0)).collect(),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn plus(&self) -> &[f64] {
        &self.plus
    }

    pub fn minus(&self) -> &[f64] {
        &self.minus
    }

    /// Net drift `plus + minus`.
    pub fn net(&self) -> VectorField {
        VectorField {
            grid: self.grid,
            values: self
                .plus
                .iter()
                .zip(&self.minus)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Euclidean length of `(plus, -minus)` at one node.
    pub fn magnitude(&self, node: usize) -> f64 {
        let d = self.grid.dim();
        let r = node * d..(node + 1) * d;
        (self.plus[r.clone()].iter().map(|x| x * x).sum::<f64>()
            + self.minus[r].iter().map(|x| x * x).sum::<f64>())
        .sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.grid.nodes())
            .map(|i| self.magnitude(i))
            .fold(0.0, f64::max)
    }

    /// Largest nodewise Euclidean distance between the stacked coefficients.
    pub fn max_distance(&self, other: &SplitDrift) -> f64 {
        let d = self.grid.dim();
        (0..self.grid.nodes())
            .map(|i| {
                let r = i * d..(i + 1) * d;
                let sq = |a: &[f64], b: &[f64]| -> f64 {
                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
                };
                (sq(&self.plus[r.clone()], &other.plus[r.clone()])
                    + sq(&self.minus[r.clone()], &other.minus[r]))
                .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn euclid(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Centered second-order periodic gradient.
pub fn gradient(f: &SpaceField) -> VectorField {
    let g = f.grid;
    let d = g.dim();
    let inv2h = 0.5 / g.h();
    let v = f.values();
    let mut out = vec![0.0; g.nodes() * d];
    for node in 0..g.nodes() {
        for axis in 0..d {
            let fwd = v[g.neighbor(node, axis, 1)];
            let bwd = v[g.neighbor(node, axis, -1)];
            out[node * d + axis] = (fwd - bwd) * inv2h;
        }
    }
    VectorField {
        grid: g,
        values: out,
    }
}

/// Standard `2d+1`-point periodic Laplacian.
pub fn laplacian(f: &SpaceField) -> SpaceField {
    SpaceField {
        grid: f.grid,
        values: laplacian_values(&f.grid, f.values()),
    }
}

pub(crate) fn laplacian_values(g: &TorusGrid, v: &[f64]) -> Vec<f64> {
    let inv_h2 = 1.0 / (g.h() * g.h());
    (0..g.nodes())
        .map(|node| {
            let mut acc = 0.0;
            for axis in 0..g.dim() {
                acc += v[g.neighbor(node, axis, 1)] + v[g.neighbor(node, axis, -1)] - 2.0 * v[node];
            }
            acc * inv_h2
        })
        .collect()
}

/// Upwind transport term `q . D u` (backward difference where a component of
/// `q` is nonnegative, forward difference where it is negative).
pub fn upwind_advection(q: &VectorField, u: &SpaceField) -> Result<SpaceField> {
    if !q.grid.same_space(&u.grid) {
        return Err(MfgError::GridMismatch);
    }
    let g = u.grid;
    let d = g.dim();
    let h = g.h();
    let v = u.values();
    let out = (0..g.nodes())
        .map(|node| {
            let mut acc = 0.0;
            for axis in 0..d {
                let qa = q.values[node * d + axis];
                if qa >= 0.0 {
                    acc += qa * (v[node] - v[g.neighbor(node, axis, -1)]) / h;
                } else {
                    acc += qa * (v[g.neighbor(node, axis, 1)] - v[node]) / h;
                }
            }
            acc
        })
        .collect();
    Ok(SpaceField {
        grid: g,
        values: out,
    })
}

/// Conservative flux-difference discretization of `div(m q)`: the negative
/// transpose of [`upwind_advection`], so `<q.Du, m> = -<u, div(mq)>` holds
/// exactly and the node sum of the result vanishes.
pub fn divergence_form(m: &SpaceField, q: &VectorField) -> Result<SpaceField> {
    if !q.grid.same_space(&m.grid) {
        return Err(MfgError::GridMismatch);
    }
    let g = m.grid;
    let d = g.dim();
    let h = g.h();
    let mv = m.values();
    let mut out = vec![0.0; g.nodes()];
    for node in 0..g.nodes() {
        for axis in 0..d {
            let qa = q.values[node * d + axis];
            let flux = qa * mv[node] / h;
            // row `node` of the advection matrix, transposed
            if qa >= 0.0 {
                out[node] -= flux;
                out[g.neighbor(node, axis, -1)] += flux;
            } else {
                out[node] += flux;
                out[g.neighbor(node, axis, 1)] -= flux;
            }
        }
    }
    Ok(SpaceField {
        grid: g,
        values: out,
    })
}

/// Which one-sided difference the monotone gradient selected along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upwind {
    Backward,
    Forward,
    Zero,
}

/// Monotone one-sided gradient used by the discrete Hamiltonian.
///
/// Per axis, with `a = D^- u` and `b = D^+ u`: take `a` if only `a > 0`,
/// `b` if only `b < 0`, the larger in magnitude if both (ties go to `a`),
/// and zero when `a <= 0 <= b`. For a radially increasing `H` this makes
/// `H(p*)` equal to the control-form Hamiltonian
/// `max_q sum_j (q_j^+ a_j - q_j^- b_j) - L(q)`, whose maximizer `H_p(p*)`
/// has the same sign pattern as `p*`.
pub fn upwind_gradient(f: &SpaceField) -> VectorField {
    let (values, _) = upwind_selection(&f.grid, f.values());
    VectorField {
        grid: f.grid,
        values,
    }
}

pub(crate) fn upwind_selection(g: &TorusGrid, v: &[f64]) -> (Vec<f64>, Vec<Upwind>) {
    let d = g.dim();
    let h = g.h();
    let mut p = vec![0.0; g.nodes() * d];
    let mut sel = vec![Upwind::Zero; g.nodes() * d];
    for node in 0..g.nodes() {
        for axis in 0..d {
            let a = (v[node] - v[g.neighbor(node, axis, -1)]) / h;
            let b = (v[g.neighbor(node, axis, 1)] - v[node]) / h;
            let (val, s) = match (a > 0.0, b < 0.0) {
                (true, true) => {
                    if a >= -b {
                        (a, Upwind::Backward)
                    } else {
                        (b, Upwind::Forward)
                    }
                }
                (true, false) => (a, Upwind::Backward),
                (false, true) => (b, Upwind::Forward),
                (false, false) => (0.0, Upwind::Zero),
            };
            p[node * d + axis] = val;
            sel[node * d + axis] = s;
        }
    }
    (p, sel)
}

/// Which discrete norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `(h^d sum |f|^s)^(1/s)`, with trapezoidal time weights on space-time fields.
    Ls,
    /// `max |f|`.
    Linf,
    /// `L^s` norm of `f` plus `L^s` norms of its first differences.
    W1s,
    /// Spatial `W^{2,r}`: adds all centered second differences. Space fields only.
    W2r,
    /// Parabolic `W^{2,1}_r`: space part of `W2r` plus the backward time difference.
    W21r,
    /// Supremum over time levels of the spatial `L^s` norm.
    CLs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    pub kind: NormKind,
    pub exponent: f64,
}

impl NormSpec {
    pub fn new(kind: NormKind, exponent: f64) -> Result<Self> {
        let spec = Self { kind, exponent };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linf() -> Self {
        Self {
            kind: NormKind::Linf,
            exponent: f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind == NormKind::Linf {
            return Ok(());
        }
        if self.exponent.is_nan() || self.exponent < 1.0 {
            return Err(MfgError::InvalidNorm(format!(
                "exponent must be >= 1, got {}",
                self.exponent
            )));
        }
        Ok(())
    }
}

/// Borrowed grid function accepted by [`norm`].
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Space(&'a SpaceField),
    SpaceTime(&'a SpaceTimeField),
}

impl<'a> From<&'a SpaceField> for FieldRef<'a> {
    fn from(f: &'a SpaceField) -> Self {
        FieldRef::Space(f)
    }
}

impl<'a> From<&'a SpaceTimeField> for FieldRef<'a> {
    fn from(f: &'a SpaceTimeField) -> Self {
        FieldRef::SpaceTime(f)
    }
}

/// Weighted `l^p` accumulator.
struct Lp {
    p: f64,
    acc: f64,
}

impl Lp {
    fn new(p: f64) -> Self {
        Self { p, acc: 0.0 }
    }

    fn add(&mut self, w: f64, v: f64) {
        if self.p.is_infinite() {
            self.acc = self.acc.max(v.abs());
        } else {
            self.acc += w * v.abs().powf(self.p);
        }
    }

    fn finish(self) -> f64 {
        if self.p.is_infinite() {
            self.acc
        } else {
            self.acc.powf(1.0 / self.p)
        }
    }
}

fn first_differences(g: &TorusGrid, v: &[f64]) -> Vec<Vec<f64>> {
    let inv2h = 0.5 / g.h();
    (0..g.dim())
        .map(|axis| {
            (0..g.nodes())
                .map(|i| (v[g.neighbor(i, axis, 1)] - v[g.neighbor(i, axis, -1)]) * inv2h)
                .collect()
        })
        .collect()
}

/// Second differences over multi-indices `|beta| = 2` (xx, and xy, yy in 2-d).
fn second_differences(g: &TorusGrid, v: &[f64]) -> Vec<Vec<f64>> {
    let h = g.h();
    let inv_h2 = 1.0 / (h * h);
    let mut out = Vec::new();
    for axis in 0..g.dim() {
        out.push(
            (0..g.nodes())
                .map(|i| {
                    (v[g.neighbor(i, axis, 1)] + v[g.neighbor(i, axis, -1)] - 2.0 * v[i]) * inv_h2
                })
                .collect(),
        );
    }
    if g.dim() == 2 {
        out.push(
            (0..g.nodes())
                .map(|i| {
                    let pp = v[g.neighbor(g.neighbor(i, 0, 1), 1, 1)];
                    let pm = v[g.neighbor(g.neighbor(i, 0, 1), 1, -1)];
                    let mp = v[g.neighbor(g.neighbor(i, 0, -1), 1, 1)];
                    let mm = v[g.neighbor(g.neighbor(i, 0, -1), 1, -1)];
                    (pp - pm - mp + mm) * 0.25 * inv_h2
                })
                .collect(),
        );
    }
    out
}

fn spatial_lp(g: &TorusGrid, v: &[f64], p: f64) -> f64 {
    let w = g.cell_volume();
    let mut acc = Lp::new(p);
    for &x in v {
        acc.add(w, x);
    }
    acc.finish()
}

fn time_weight(g: &TorusGrid, k: usize) -> f64 {
    if k == 0 || k + 1 == g.nt() {
        0.5 * g.dt()
    } else {
        g.dt()
    }
}

/// Evaluate a discrete norm of a space or space-time grid function.
pub fn norm<'a>(f: impl Into<FieldRef<'a>>, spec: NormSpec) -> Result<f64> {
    spec.validate()?;
    let p = if spec.kind == NormKind::Linf {
        f64::INFINITY
    } else {
        spec.exponent
    };
    match f.into() {
        FieldRef::Space(f) => {
            let g = f.grid;
            let v = f.values();
            match spec.kind {
                NormKind::Ls | NormKind::Linf => Ok(spatial_lp(&g, v, p)),
                NormKind::W1s | NormKind::W2r => {
                    let mut total = spatial_lp(&g, v, p);
                    for d1 in first_differences(&g, v) {
                        total += spatial_lp(&g, &d1, p);
                    }
                    if spec.kind == NormKind::W2r {
                        for d2 in second_differences(&g, v) {
                            total += spatial_lp(&g, &d2, p);
                        }
                    }
                    Ok(total)
                }
                NormKind::W21r | NormKind::CLs => Err(MfgError::InvalidNorm(format!(
                    "{:?} requires a space-time field",
                    spec.kind
                ))),
            }
        }
        FieldRef::SpaceTime(f) => {
            let g = f.grid;
            let cell = g.cell_volume();
            let nt = g.nt();
            let st_lp = |pieces: &dyn Fn(usize) -> Vec<f64>| -> f64 {
                let mut acc = Lp::new(p);
                for k in 0..nt {
                    let w = cell * time_weight(&g, k);
                    for x in pieces(k) {
                        acc.add(w, x);
                    }
                }
                acc.finish()
            };
            match spec.kind {
                NormKind::Ls | NormKind::Linf => Ok(st_lp(&|k| f.level(k).to_vec())),
                NormKind::CLs => Ok((0..nt)
                    .map(|k| spatial_lp(&g, f.level(k), p))
                    .fold(0.0, f64::max)),
                NormKind::W1s | NormKind::W21r => {
                    let mut total = st_lp(&|k| f.level(k).to_vec());
                    for axis in 0..g.dim() {
                        total += st_lp(&|k| first_differences(&g, f.level(k)).swap_remove(axis));
                    }
                    if spec.kind == NormKind::W21r {
                        let n2 = if g.dim() == 2 { 3 } else { 1 };
                        for which in 0..n2 {
                            total +=
                                st_lp(&|k| second_differences(&g, f.level(k)).swap_remove(which));
                        }
                        let mut acc = Lp::new(p);
                        let dt = g.dt();
                        for k in 1..nt {
                            let (prev, cur) = (f.level(k - 1), f.level(k));
                            for (a, b) in cur.iter().zip(prev) {
                                acc.add(cell * dt, (a - b) / dt);
                            }
                        }
                        total += acc.finish();
                    }
                    Ok(total)
                }
                NormKind::W2r => Err(MfgError::InvalidNorm(
                    "W2r is a spatial norm; use W21r for space-time fields".into(),
                )),
            }
        }
    }
}
