//! Cost operators `F[m]` coupling the value function to the density.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{norm, NormKind, NormSpec, SpaceField, TorusGrid};

/// Nonlocal interaction kernel tabulated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `K(x - y)`; `profile[node]` holds the value at displacement `coords(node)`.
    Convolution { grid: TorusGrid, profile: Vec<f64> },
    /// Full table `K(x, y)`, row `x`, column `y`.
    Matrix { grid: TorusGrid, values: Vec<f64> },
}

impl Kernel {
    pub fn convolution(grid: TorusGrid, profile: Vec<f64>) -> Result<Self> {
        let grid = grid.spatial();
        if profile.len() != grid.nodes() {
            return Err(MfgError::DimensionMismatch {
                expected: grid.nodes(),
                got: profile.len(),
            });
        }
        check_finite("kernel", &profile)?;
        Ok(Kernel::Convolution { grid, profile })
    }

    pub fn convolution_from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let grid = grid.spatial();
        Self::convolution(grid, (0..grid.nodes()).map(|i| f(grid.coords(i))).collect())
    }

    pub fn matrix(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        let grid = grid.spatial();
        let n = grid.nodes();
        if values.len() != n * n {
            return Err(MfgError::DimensionMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        check_finite("kernel", &values)?;
        Ok(Kernel::Matrix { grid, values })
    }

    /// Discrete delta: `1/h^d` at zero displacement, so `F[m] = m`.
    pub fn delta(grid: TorusGrid) -> Self {
        let grid = grid.spatial();
        let mut profile = vec![0.0; grid.nodes()];
        profile[0] = 1.0 / grid.cell_volume();
        Kernel::Convolution { grid, profile }
    }

    /// `offset + amplitude * mean_j cos(2 pi (x_j - y_j))`.
    pub fn cosine(grid: TorusGrid, offset: f64, amplitude: f64) -> Self {
        let d = grid.dim() as f64;
        let grid = grid.spatial();
        let profile = (0..grid.nodes())
            .map(|i| {
                let z = grid.coords(i);
                let s: f64 = z
                    .iter()
                    .take(grid.dim())
                    .map(|zj| (2.0 * std::f64::consts::PI * zj).cos())
                    .sum();
                offset + amplitude * s / d
            })
            .collect();
        Kernel::Convolution { grid, profile }
    }

    pub fn grid(&self) -> &TorusGrid {
        match self {
            Kernel::Convolution { grid, .. } | Kernel::Matrix { grid, .. } => grid,
        }
    }

    /// `max |K|`.
    pub fn sup_norm(&self) -> f64 {
        let vals = match self {
            Kernel::Convolution { profile, .. } => profile,
            Kernel::Matrix { values, .. } => values,
        };
        vals.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn apply(&self, m: &[f64]) -> Vec<f64> {
        let g = *self.grid();
        let n = g.nodes();
        let w = g.cell_volume();
        match self {
            Kernel::Matrix { values, .. } => (0..n)
                .map(|x| {
                    w * values[x * n..(x + 1) * n]
                        .iter()
                        .zip(m)
                        .map(|(k, mv)| k * mv)
                        .sum::<f64>()
                })
                .collect(),
            Kernel::Convolution { profile, .. } => {
                let side = g.n();
                let split = |node: usize| -> [usize; 2] {
                    if g.dim() == 1 {
                        [node, 0]
                    } else {
                        [node % side, node / side]
                    }
                };
                // sum over displacements z in a fixed order so that shifting m
                // shifts F[m] bit for bit
                (0..n)
                    .map(|x| {
                        let xi = split(x);
                        let mut acc = 0.0;
                        for (z, k) in profile.iter().enumerate() {
                            let zi = split(z);
                            let y0 = (xi[0] + side - zi[0]) % side;
                            let y1 = (xi[1] + side - zi[1]) % side;
                            acc += k * m[y0 + side * y1];
                        }
                        w * acc
                    })
                    .collect()
            }
        }
    }
}

type LocalFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Pointwise cost `F(x, m(x))` with a declared Lipschitz constant in `m`.
#[derive(Clone)]
pub enum LocalFunction {
    /// `slope * m`.
    Affine { slope: f64 },
    Custom {
        name: String,
        f: LocalFn,
        df: LocalFn,
        lipschitz: f64,
    },
}

impl LocalFunction {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
    ) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(invalid(
                "lipschitz",
                format!("must be >= 0, got {lipschitz}"),
            ));
        }
        Ok(LocalFunction::Custom {
            name: name.into(),
            f: Arc::new(f),
            df: Arc::new(df),
            lipschitz,
        })
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            LocalFunction::Affine { slope } => slope.abs(),
            LocalFunction::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    fn value(&self, node: usize, m: f64) -> f64 {
        match self {
            LocalFunction::Affine { slope } => slope * m,
            LocalFunction::Custom { f, .. } => f(node, m),
        }
    }

    fn derivative(&self, node: usize, m: f64) -> f64 {
        match self {
            LocalFunction::Affine { slope } => *slope,
            LocalFunction::Custom { df, .. } => df(node, m),
        }
    }
}

impl fmt::Debug for LocalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalFunction::Affine { slope } => {
                f.debug_struct("Affine").field("slope", slope).finish()
            }
            LocalFunction::Custom {
                name, lipschitz, ..
            } => f
                .debug_struct("Custom")
                .field("name", name)
                .field("lipschitz", lipschitz)
                .finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CouplingKind {
    Nonlocal(Kernel),
    Local(LocalFunction),
}

/// `F[m](x) = V(x) + G[m](x)` with `G` nonlocal or local, applied with strength `sigma`.
#[derive(Debug, Clone)]
pub struct CouplingSpec {
    kind: CouplingKind,
    sigma: f64,
    potential: Option<SpaceField>,
}

/// Outcome of sampling the monotonicity pairing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityCheck {
    pub monotone: bool,
    /// Smallest observed `<F[m1] - F[m2], m1 - m2>`.
    pub worst_margin: f64,
    pub skipped: usize,
}

impl CouplingSpec {
    pub fn new(kind: CouplingKind, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be >= 0, got {sigma}")));
        }
        Ok(Self {
            kind,
            sigma,
            potential: None,
        })
    }

    pub fn nonlocal(kernel: Kernel, sigma: f64) -> Result<Self> {
        Self::new(CouplingKind::Nonlocal(kernel), sigma)
    }

    pub fn local(f: LocalFunction, sigma: f64) -> Result<Self> {
        Self::new(CouplingKind::Local(f), sigma)
    }

    /// `F` that ignores the density: `F[m](x) = V(x)`.
    pub fn independent(potential: SpaceField, sigma: f64) -> Result<Self> {
        Self::local(LocalFunction::Affine { slope: 0.0 }, sigma)?.with_potential(potential)
    }

    /// Add an `m`-independent spatial term `V(x)` to `F`.
    pub fn with_potential(mut self, potential: SpaceField) -> Result<Self> {
        check_finite("potential", potential.values())?;
        self.potential = Some(potential);
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be >= 0, got {sigma}")));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kind(&self) -> &CouplingKind {
        &self.kind
    }

    pub fn potential(&self) -> Option<&SpaceField> {
        self.potential.as_ref()
    }

    pub fn is_local(&self) -> bool {
        matches!(self.kind, CouplingKind::Local(_))
    }

    /// `F[m]` (without the factor `sigma`).
    pub fn eval_f(&self, m: &SpaceField) -> Result<SpaceField> {
        if let CouplingKind::Nonlocal(k) = &self.kind {
            if !k.grid().same_space(m.grid()) {
                return Err(MfgError::GridMismatch);
            }
        }
        if let Some(v) = &self.potential {
            if !v.grid().same_space(m.grid()) {
                return Err(MfgError::GridMismatch);
            }
        }
        let mut out = match &self.kind {
            CouplingKind::Nonlocal(k) => k.apply(m.values()),
            CouplingKind::Local(f) => m
                .values()
                .iter()
                .enumerate()
                .map(|(i, &mv)| f.value(i, mv))
                .collect(),
        };
        if let Some(v) = &self.potential {
            out.iter_mut().zip(v.values()).for_each(|(o, p)| *o += p);
        }
        SpaceField::new(*m.grid(), out)
    }

    /// `sigma * F[m]`.
    pub fn forcing(&self, m: &SpaceField) -> Result<SpaceField> {
        let mut f = self.eval_f(m)?;
        f.values_mut().iter_mut().for_each(|v| *v *= self.sigma);
        Ok(f)
    }

    /// Pointwise `dF/dm` for local couplings; `None` for nonlocal kernels.
    pub fn local_derivative(&self, m: &SpaceField) -> Option<Vec<f64>> {
        match &self.kind {
            CouplingKind::Local(f) => Some(
                m.values()
                    .iter()
                    .enumerate()
                    .map(|(i, &mv)| f.derivative(i, mv))
                    .collect(),
            ),
            CouplingKind::Nonlocal(_) => None,
        }
    }

    /// Empirical Lipschitz ratio `max ||F[m1]-F[m2]||_{L^r} / ||m1-m2||_{L^s}`
    /// over random density pairs.
    pub fn check_lipschitz(
        &self,
        grid: &TorusGrid,
        trials: usize,
        r: f64,
        s: f64,
        seed: u64,
    ) -> Result<f64> {
        if trials == 0 {
            return Err(invalid("trials", "need at least one trial"));
        }
        let rn = NormSpec::new(NormKind::Ls, r)?;
        let sn = NormSpec::new(NormKind::Ls, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let m1 = random_density(grid, &mut rng);
            let m2 = random_density(grid, &mut rng);
            let den = norm(&m1.sub(&m2), sn)?;
            if den == 0.0 {
                continue;
            }
            let num = norm(&self.eval_f(&m1)?.sub(&self.eval_f(&m2)?), rn)?;
            worst = worst.max(num / den);
        }
        Ok(worst)
    }

    /// Sample the monotonicity pairing `<F[m1] - F[m2], m1 - m2>` on random
    /// distinct densities; identical pairs are skipped.
    pub fn check_monotone(
        &self,
        grid: &TorusGrid,
        trials: usize,
        seed: u64,
    ) -> Result<MonotonicityCheck> {
        if trials == 0 {
            return Err(invalid("trials", "need at least one trial"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        let mut skipped = 0;
        for _ in 0..trials {
            let m1 = random_density(grid, &mut rng);
            let m2 = random_density(grid, &mut rng);
            let diff = m1.sub(&m2);
            if diff.max_abs() == 0.0 {
                skipped += 1;
                continue;
            }
            worst = worst.min(self.monotone_pairing(&m1, &m2)?);
        }
        Ok(MonotonicityCheck {
            monotone: worst > 0.0,
            worst_margin: worst,
            skipped,
        })
    }

    /// `<F[m1] - F[m2], m1 - m2>` with the grid measure.
    pub fn monotone_pairing(&self, m1: &SpaceField, m2: &SpaceField) -> Result<f64> {
        Ok(self.eval_f(m1)?.sub(&self.eval_f(m2)?).dot(&m1.sub(m2)))
    }
}

fn random_density(grid: &TorusGrid, rng: &mut ChaCha8Rng) -> SpaceField {
    let g = grid.spatial();
    let raw: Vec<f64> = (0..g.nodes()).map(|_| rng.gen_range(0.05..2.0)).collect();
    let mass = g.cell_volume() * raw.iter().sum::<f64>();
    SpaceField::new(g, raw.into_iter().map(|v| v / mass).collect()).expect("sized to grid")
}

fn check_finite(name: &'static str, vals: &[f64]) -> Result<()> {
    match vals.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(invalid(name, format!("non-finite value {v}"))),
        None => Ok(()),
    }
}

/// Parse a node-value table: one `index value` pair per line, `#` comments and
/// blank lines ignored. Every index in `0..count` must appear exactly once.
pub fn parse_node_table(text: &str, count: usize) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; count];
    let mut seen = vec![false; count];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let bad = || {
            invalid(
                "table",
                format!("line {}: expected `index value`", lineno + 1),
            )
        };
        let idx: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let val: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        if idx >= count {
            return Err(invalid(
                "table",
                format!("line {}: index {idx} out of range 0..{count}", lineno + 1),
            ));
        }
        if seen[idx] {
            return Err(invalid(
                "table",
                format!("line {}: duplicate index {idx}", lineno + 1),
            ));
        }
        seen[idx] = true;
        out[idx] = val;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(invalid("table", format!("missing index {missing}")));
    }
    Ok(out)
}
