//! Convex Hamiltonians `H(x, p) = h(x) * phi(|p|)`, their derivatives, the
//! Legendre transform and the constrained policy update.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{euclid, SpaceField, VectorField};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64], &mut [[f64; 2]; 2]) + Send + Sync>;

/// User-supplied globally Lipschitz Hamiltonian. `H`, `H_p` and `L` must be
/// mutually consistent; this is checked on random samples at construction.
#[derive(Clone)]
pub struct CustomHamiltonian {
    name: String,
    h: ScalarFn,
    hp: VectorFn,
    legendre: ScalarFn,
    hpp: Option<MatrixFn>,
    /// Bound on `|H_p|`; `L` is finite only on this ball.
    lipschitz: f64,
}

impl CustomHamiltonian {
    /// Build and validate a custom Hamiltonian in dimension `d`.
    ///
    /// The Fenchel identity `H(p) = p.H_p(p) - L(H_p(p))` and midpoint
    /// convexity are sampled `trials` times for `|p| <= sample_radius`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        d: usize,
        h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        hp: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        legendre: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        sample_radius: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(invalid("lipschitz", "must be positive and finite"));
        }
        let custom = Self {
            name: name.into(),
            h: Arc::new(h),
            hp: Arc::new(hp),
            legendre: Arc::new(legendre),
            hpp: None,
            lipschitz,
        };
        custom.validate(d, sample_radius, 64, seed)?;
        Ok(custom)
    }

    /// Attach an exact Hessian; otherwise it is approximated by central
    /// differences of `H_p`.
    pub fn with_hessian(
        mut self,
        hpp: impl Fn(&[f64], &mut [[f64; 2]; 2]) + Send + Sync + 'static,
    ) -> Self {
        self.hpp = Some(Arc::new(hpp));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn validate(&self, d: usize, radius: f64, trials: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grad = [0.0; 2];
        for _ in 0..trials {
            let p1: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..=radius)).collect();
            let p2: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..=radius)).collect();
            (self.hp)(&p1, &mut grad[..d]);
            let q = &grad[..d];
            let h1 = (self.h)(&p1);
            let dual = dot(&p1, q) - (self.legendre)(q);
            if (h1 - dual).abs() > 1e-8 * (1.0 + h1.abs()) {
                return Err(invalid(
                    "custom hamiltonian",
                    format!("Fenchel identity fails at p = {p1:?}: H = {h1}, p.q - L(q) = {dual}"),
                ));
            }
            let mid: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
            let chord = 0.5 * (h1 + (self.h)(&p2));
            if (self.h)(&mid) > chord + 1e-12 * (1.0 + chord.abs()) {
                return Err(invalid("custom hamiltonian", "midpoint convexity violated"));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for CustomHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomHamiltonian")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum HamiltonianKind {
    /// `|p|^gamma`.
    Power {
        gamma: f64,
    },
    /// `|p|^gamma` inside `|p| < rbar`, continued linearly outside.
    TruncatedPower {
        gamma: f64,
        rbar: f64,
    },
    Custom(CustomHamiltonian),
}

/// Hamiltonian together with an optional positive spatial weight `h(x)`.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    kind: HamiltonianKind,
    weight: Option<SpaceField>,
}

/// Radius of the admissible control ball in the policy update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConstraint {
    radius: f64,
}

impl PolicyConstraint {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || radius.is_nan() {
            return Err(invalid(
                "policy_radius",
                format!("must be > 0, got {radius}"),
            ));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(invalid("gamma", format!("must be > 1, got {gamma}")))
    }
}

impl HamiltonianSpec {
    pub fn power(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            kind: HamiltonianKind::Power { gamma },
            weight: None,
        })
    }

    pub fn truncated_power(gamma: f64, rbar: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(rbar > 0.0 && rbar.is_finite()) {
            return Err(invalid("rbar", format!("must be > 0, got {rbar}")));
        }
        Ok(Self {
            kind: HamiltonianKind::TruncatedPower { gamma, rbar },
            weight: None,
        })
    }

    pub fn custom(custom: CustomHamiltonian) -> Self {
        Self {
            kind: HamiltonianKind::Custom(custom),
            weight: None,
        }
    }

    /// Multiply `H` by a strictly positive spatial weight.
    pub fn with_weight(mut self, weight: SpaceField) -> Result<Self> {
        if let Some(bad) = weight
            .values()
            .iter()
            .find(|w| !(**w > 0.0 && w.is_finite()))
        {
            return Err(invalid(
                "weight",
                format!("must be positive at every node, found {bad}"),
            ));
        }
        self.weight = Some(weight);
        Ok(self)
    }

    pub fn kind(&self) -> &HamiltonianKind {
        &self.kind
    }

    pub fn weight(&self) -> Option<&SpaceField> {
        self.weight.as_ref()
    }

    /// Bound on `|H_p|` (the Lipschitz constant of `H`), if finite, without the weight.
    pub fn gradient_bound(&self) -> Option<f64> {
        match &self.kind {
            HamiltonianKind::Power { .. } => None,
            HamiltonianKind::TruncatedPower { gamma, rbar } => Some(gamma * rbar.powf(gamma - 1.0)),
            HamiltonianKind::Custom(c) => Some(c.lipschitz),
        }
    }

    fn node_weight(&self, node: Option<usize>) -> Result<f64> {
        match (&self.weight, node) {
            (None, None) => Ok(1.0),
            (None, Some(_)) => Ok(1.0),
            (Some(w), Some(i)) => w
                .values()
                .get(i)
                .copied()
                .ok_or(MfgError::DimensionMismatch {
                    expected: w.values().len(),
                    got: i,
                }),
            (Some(_), None) => Err(invalid("node", "weighted Hamiltonian needs a grid node")),
        }
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.is_empty() || p.len() > 2 {
            return Err(MfgError::DimensionMismatch {
                expected: self.weight.as_ref().map_or(1, |w| w.grid().dim()),
                got: p.len(),
            });
        }
        if let Some(w) = &self.weight {
            if w.grid().dim() != p.len() {
                return Err(MfgError::DimensionMismatch {
                    expected: w.grid().dim(),
                    got: p.len(),
                });
            }
        }
        Ok(())
    }

    /// Radial profile `phi(r)` and its first two derivatives.
    fn profile(&self, r: f64) -> (f64, f64, f64) {
        match self.kind {
            HamiltonianKind::Power { gamma } => radial_power(gamma, r),
            HamiltonianKind::TruncatedPower { gamma, rbar } => {
                if r < rbar {
                    radial_power(gamma, r)
                } else {
                    let slope = gamma * rbar.powf(gamma - 1.0);
                    ((1.0 - gamma) * rbar.powf(gamma) + slope * r, slope, 0.0)
                }
            }
            HamiltonianKind::Custom(_) => unreachable!("custom kinds are not radial"),
        }
    }

    /// `H(x, p)`.
    pub fn eval_h(&self, p: &[f64], node: Option<usize>) -> Result<f64> {
        self.check_dim(p)?;
        let w = self.node_weight(node)?;
        Ok(w * self.h_unweighted(p))
    }

    fn h_unweighted(&self, p: &[f64]) -> f64 {
        match &self.kind {
            HamiltonianKind::Custom(c) => (c.h)(p),
            _ => self.profile(euclid(p)).0,
        }
    }

    /// `H_p(x, p)`; at `p = 0` the minimal-norm subgradient `0` is selected.
    pub fn eval_hp(&self, p: &[f64], node: Option<usize>) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        let w = self.node_weight(node)?;
        let mut out = vec![0.0; p.len()];
        self.hp_unweighted(p, &mut out);
        out.iter_mut().for_each(|v| *v *= w);
        Ok(out)
    }

    fn hp_unweighted(&self, p: &[f64], out: &mut [f64]) {
        match &self.kind {
            HamiltonianKind::Custom(c) => (c.hp)(p, out),
            _ => {
                let r = euclid(p);
                if r == 0.0 {
                    out.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    let scale = self.profile(r).1 / r;
                    for (o, pi) in out.iter_mut().zip(p) {
                        *o = scale * pi;
                    }
                }
            }
        }
    }

    /// Full Hessian `H_pp(x, p)` in the leading `d x d` block.
    /// On the truncation sphere `|p| = rbar` the inner branch is used.
    pub fn hessian(&self, p: &[f64], node: Option<usize>) -> Result<[[f64; 2]; 2]> {
        self.check_dim(p)?;
        let w = self.node_weight(node)?;
        let d = p.len();
        let mut hm = [[0.0; 2]; 2];
        match &self.kind {
            HamiltonianKind::Custom(c) => match &c.hpp {
                Some(f) => f(p, &mut hm),
                None => {
                    let eps = 1e-6 * (1.0 + euclid(p));
                    let (mut plus, mut minus) = ([0.0; 2], [0.0; 2]);
                    for j in 0..d {
                        let mut pp = [p[0], if d == 2 { p[1] } else { 0.0 }];
                        pp[j] += eps;
                        (c.hp)(&pp[..d], &mut plus[..d]);
                        pp[j] -= 2.0 * eps;
                        (c.hp)(&pp[..d], &mut minus[..d]);
                        for i in 0..d {
                            hm[i][j] = (plus[i] - minus[i]) / (2.0 * eps);
                        }
                    }
                }
            },
            HamiltonianKind::Power { gamma } | HamiltonianKind::TruncatedPower { gamma, .. } => {
                let gamma = *gamma;
                let r = euclid(p);
                if r == 0.0 {
                    if gamma < 2.0 {
                        return Err(MfgError::HessianUndefined);
                    }
                    let diag = if gamma == 2.0 { 2.0 } else { 0.0 };
                    for (i, row) in hm.iter_mut().enumerate().take(d) {
                        row[i] = diag;
                    }
                } else {
                    let (d1, d2) = match self.kind {
                        HamiltonianKind::TruncatedPower { rbar, .. } if r > rbar => {
                            let (_, a, b) = self.profile(r);
                            (a, b)
                        }
                        _ => {
                            let (_, a, b) = radial_power(gamma, r);
                            (a, b)
                        }
                    };
                    for i in 0..d {
                        for j in 0..d {
                            let proj = p[i] * p[j] / (r * r);
                            let id = if i == j { 1.0 } else { 0.0 };
                            hm[i][j] = d2 * proj + d1 / r * (id - proj);
                        }
                    }
                }
            }
        }
        for row in hm.iter_mut() {
            for v in row.iter_mut() {
                *v *= w;
            }
        }
        Ok(hm)
    }

    /// Quadratic form `q . H_pp(p) q`.
    pub fn eval_hpp_action(&self, p: &[f64], q: &[f64], node: Option<usize>) -> Result<f64> {
        if q.len() != p.len() {
            return Err(MfgError::DimensionMismatch {
                expected: p.len(),
                got: q.len(),
            });
        }
        let hm = self.hessian(p, node)?;
        let d = p.len();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += q[i] * hm[i][j] * q[j];
            }
        }
        Ok(acc)
    }

    /// Legendre transform `L(x, q) = sup_p p.q - H(x, p)`.
    pub fn legendre(&self, q: &[f64], node: Option<usize>) -> Result<f64> {
        self.check_dim(q)?;
        let w = self.node_weight(node)?;
        // L_w(q) = w L(q / w)
        let scaled: Vec<f64> = q.iter().map(|v| v / w).collect();
        let r = euclid(&scaled);
        let base = match &self.kind {
            HamiltonianKind::Power { gamma } => power_legendre(*gamma, r),
            HamiltonianKind::TruncatedPower { gamma, rbar } => {
                let limit = gamma * rbar.powf(gamma - 1.0);
                if r > limit * (1.0 + 1e-12) {
                    return Err(MfgError::InfiniteCost { norm: r, limit });
                }
                power_legendre(*gamma, r.min(limit))
            }
            HamiltonianKind::Custom(c) => {
                if r > c.lipschitz * (1.0 + 1e-12) {
                    return Err(MfgError::InfiniteCost {
                        norm: r,
                        limit: c.lipschitz,
                    });
                }
                (c.legendre)(&scaled)
            }
        };
        Ok(w * base)
    }

    /// Constrained maximizer of `q.p - L(x, q)` over `|q| <= R` at one node,
    /// written into `q`. Returns the attained maximum.
    pub(crate) fn policy_at(
        &self,
        p: &[f64],
        node: usize,
        radius: f64,
        q: &mut [f64],
    ) -> Result<f64> {
        let w = self.node_weight(Some(node)).unwrap_or(1.0);
        self.hp_unweighted(p, q);
        q.iter_mut().for_each(|v| *v *= w);
        let len = euclid(q);
        if len > radius {
            let s = radius / len;
            q.iter_mut().for_each(|v| *v *= s);
            Ok(dot(q, p) - self.legendre(q, Some(node))?)
        } else {
            Ok(w * self.h_unweighted(p))
        }
    }

    /// Per-node `argmax_{|q| <= R} q.Du - L(q)`: `H_p(Du)` radially projected
    /// onto the `R`-ball (exact for radially symmetric `H`).
    pub fn policy_argmax(&self, du: &VectorField, constraint: &PolicyConstraint) -> VectorField {
        let g = *du.grid();
        let d = g.dim();
        let mut out = VectorField::zeros(g);
        let vals = out.values_mut();
        for node in 0..g.nodes() {
            let p = du.at(node);
            let w = self.node_weight(Some(node)).unwrap_or(1.0);
            let q = &mut vals[node * d..(node + 1) * d];
            self.hp_unweighted(p, q);
            q.iter_mut().for_each(|v| *v *= w);
            let len = euclid(q);
            if len > constraint.radius {
                let s = constraint.radius / len;
                q.iter_mut().for_each(|v| *v *= s);
            }
        }
        out
    }

    /// Whether `H` depends on `p` only through `|p|`.
    pub fn is_radial(&self) -> bool {
        !matches!(self.kind, HamiltonianKind::Custom(_))
    }

    /// Constrained maximizer of `Q.P - L(x, Q)` over `|Q| <= R` for a radial
    /// kind, as a function of `r = |P|`. `None` for custom kinds.
    pub(crate) fn radial_policy(&self, r: f64, node: usize, radius: f64) -> Option<RadialPolicy> {
        if !self.is_radial() {
            return None;
        }
        let w = self.node_weight(Some(node)).unwrap_or(1.0);
        let (phi, d1, d2) = self.profile(r);
        let kink = matches!(self.kind, HamiltonianKind::TruncatedPower { rbar, .. } if r == rbar);
        let d2 = match self.kind {
            // inner branch on the truncation sphere
            HamiltonianKind::TruncatedPower { gamma, rbar } if r == rbar => {
                radial_power(gamma, r).2
            }
            _ => d2,
        };
        let slope = w * d1;
        if slope > radius {
            let gamma = match self.kind {
                HamiltonianKind::Power { gamma }
                | HamiltonianKind::TruncatedPower { gamma, .. } => gamma,
                HamiltonianKind::Custom(_) => unreachable!(),
            };
            return Some(RadialPolicy {
                value: radius * r - w * power_legendre(gamma, radius / w),
                magnitude: radius,
                along: 0.0,
                across: radius / r,
                projected: true,
                kink,
            });
        }
        let (along, across) = if r == 0.0 {
            (w * d2, w * d2)
        } else {
            (w * d2, slope / r)
        };
        Some(RadialPolicy {
            value: w * phi,
            magnitude: slope,
            along,
            across,
            projected: false,
            kink,
        })
    }

    /// `L(x, Q)` for a radial kind as a function of `|Q|`.
    pub(crate) fn radial_cost(&self, magnitude: f64, node: usize) -> Result<f64> {
        let w = self.node_weight(Some(node))?;
        let s = magnitude / w;
        let base = match self.kind {
            HamiltonianKind::Power { gamma } => power_legendre(gamma, s),
            HamiltonianKind::TruncatedPower { gamma, rbar } => {
                let limit = gamma * rbar.powf(gamma - 1.0);
                if s > limit * (1.0 + 1e-12) {
                    return Err(MfgError::InfiniteCost { norm: s, limit });
                }
                power_legendre(gamma, s.min(limit))
            }
            HamiltonianKind::Custom(_) => return Err(invalid("hamiltonian", "not radial")),
        };
        Ok(w * base)
    }
}

/// Radial policy data, see [`HamiltonianSpec::radial_policy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RadialPolicy {
    /// Attained maximum.
    pub value: f64,
    /// `|Q|`; the maximizer is `Q = magnitude * P / |P|`.
    pub magnitude: f64,
    /// `dQ/dP = along * P^ P^T + across * (I - P^ P^T)`.
    pub along: f64,
    pub across: f64,
    pub projected: bool,
    /// `|P|` lies exactly on the truncation sphere.
    pub kink: bool,
}

fn radial_power(gamma: f64, r: f64) -> (f64, f64, f64) {
    if r == 0.0 {
        let d2 = if gamma == 2.0 {
            2.0
        } else if gamma > 2.0 {
            0.0
        } else {
            f64::INFINITY
        };
        return (0.0, 0.0, d2);
    }
    (
        r.powf(gamma),
        gamma * r.powf(gamma - 1.0),
        gamma * (gamma - 1.0) * r.powf(gamma - 2.0),
    )
}

/// `(gamma - 1) gamma^(-gamma*) r^gamma*` with `gamma* = gamma / (gamma - 1)`.
fn power_legendre(gamma: f64, r: f64) -> f64 {
    let conj = gamma / (gamma - 1.0);
    (gamma - 1.0) * gamma.powf(-conj) * r.powf(conj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use proptest::prelude::*;

    fn central_grad(spec: &HamiltonianSpec, p: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..p.len())
            .map(|j| {
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[j] += eps;
                b[j] -= eps;
                (spec.eval_h(&a, None).unwrap() - spec.eval_h(&b, None).unwrap()) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn power_values() {
        let h2 = HamiltonianSpec::power(2.0).unwrap();
        assert_eq!(h2.eval_h(&[3.0, 4.0], None).unwrap(), 25.0);
        assert_eq!(h2.eval_hp(&[1.0, -2.0], None).unwrap(), vec![2.0, -4.0]);
        assert_eq!(
            h2.eval_hpp_action(&[0.3, 0.1], &[1.0, 0.0], None).unwrap(),
            2.0
        );
        assert_eq!(
            h2.eval_hpp_action(&[0.3, 0.1], &[0.0, 0.0], None).unwrap(),
            0.0
        );
        assert_eq!(h2.legendre(&[2.0, 0.0], None).unwrap(), 1.0);
        for gamma in [1.5, 2.0, 3.0] {
            let spec = HamiltonianSpec::power(gamma).unwrap();
            assert_eq!(spec.legendre(&[0.0, 0.0], None).unwrap(), 0.0);
        }
        assert!(HamiltonianSpec::power(1.0).is_err());
        assert!(h2.eval_h(&[1.0, 2.0, 3.0], None).is_err());
    }

    #[test]
    fn truncated_branches() {
        let t = HamiltonianSpec::truncated_power(2.0, 1.0).unwrap();
        // continuity at |p| = rbar
        let at = t.eval_h(&[1.0, 0.0], None).unwrap();
        let inner = t.eval_h(&[1.0 - 1e-12, 0.0], None).unwrap();
        assert!((at - 1.0).abs() < 1e-15 && (inner - 1.0).abs() < 1e-11);
        // (1 - 2) * 1 + 2 * 1 * 2 = 3
        assert!((t.eval_h(&[2.0, 0.0], None).unwrap() - 3.0).abs() < 1e-15);
        let hp = t.eval_hp(&[2.0, 0.0], None).unwrap();
        assert_eq!(hp, vec![2.0, 0.0]);
        let fd = central_grad(&t, &[2.0, 0.0]);
        assert!((fd[0] - 2.0).abs() < 1e-6 * 2.0 && fd[1].abs() < 1e-6);
        let err = t.legendre(&[2.5, 0.0], None).unwrap_err();
        assert!(matches!(err, MfgError::InfiniteCost { .. }));
        // Legendre coincides with the untruncated one on the admissible ball
        let p = HamiltonianSpec::power(2.0).unwrap();
        assert_eq!(
            t.legendre(&[1.2, -0.4], None).unwrap(),
            p.legendre(&[1.2, -0.4], None).unwrap()
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let specs = [
            HamiltonianSpec::power(1.5).unwrap(),
            HamiltonianSpec::power(2.0).unwrap(),
            HamiltonianSpec::power(3.0).unwrap(),
            HamiltonianSpec::truncated_power(3.0, 2.0).unwrap(),
        ];
        for spec in &specs {
            for p in [[0.7, -0.2], [-1.1, 0.4], [0.05, 0.3]] {
                let exact = spec.eval_hp(&p, None).unwrap();
                let fd = central_grad(spec, &p);
                for (a, b) in exact.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn subgradient_at_origin() {
        let h = HamiltonianSpec::power(1.5).unwrap();
        assert_eq!(h.eval_hp(&[0.0, 0.0], None).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            h.eval_hpp_action(&[0.0, 0.0], &[1.0, 0.0], None)
                .unwrap_err(),
            MfgError::HessianUndefined
        );
    }

    #[test]
    fn hessian_matches_second_difference() {
        let h3 = HamiltonianSpec::power(3.0).unwrap();
        let p = [1.0, 0.0];
        let q = [0.0, 1.0];
        let eps = 1e-4;
        let f = |t: f64| {
            h3.eval_h(&[p[0] + t * q[0], p[1] + t * q[1]], None)
                .unwrap()
        };
        let fd = (f(eps) - 2.0 * f(0.0) + f(-eps)) / (eps * eps);
        let exact = h3.eval_hpp_action(&p, &q, None).unwrap();
        assert!((fd - exact).abs() < 1e-4, "{fd} vs {exact}");
        // radial direction: gamma (gamma - 1) |p|^(gamma - 2) = 6
        assert!((h3.eval_hpp_action(&p, &[1.0, 0.0], None).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn legendre_matches_grid_search() {
        let h3 = HamiltonianSpec::power(3.0).unwrap();
        let q = [1.0, 1.0];
        let steps = 2000;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let p = [
                    -5.0 + 10.0 * i as f64 / steps as f64,
                    -5.0 + 10.0 * j as f64 / steps as f64,
                ];
                best = best.max(p[0] * q[0] + p[1] * q[1] - h3.eval_h(&p, None).unwrap());
            }
        }
        let exact = h3.legendre(&q, None).unwrap();
        assert!((best - exact).abs() < 1e-4, "{best} vs {exact}");
    }

    fn argmax_by_search(spec: &HamiltonianSpec, du: [f64; 2], radius: f64) -> [f64; 2] {
        let steps = (2.0 * radius / 1e-3).round() as i64;
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        // search along the line through the origin in direction du, plus the
        // ball boundary in a coarse angular sweep
        for i in -steps..=steps {
            let s = i as f64 * 1e-3;
            let len = (du[0] * du[0] + du[1] * du[1]).sqrt().max(1e-300);
            let q = [s * du[0] / len, s * du[1] / len];
            if (q[0] * q[0] + q[1] * q[1]).sqrt() > radius {
                continue;
            }
            let v = q[0] * du[0] + q[1] * du[1] - spec.legendre(&q, None).unwrap();
            if v > best.0 {
                best = (v, q);
            }
        }
        for k in 0..3600 {
            let th = k as f64 * std::f64::consts::PI / 1800.0;
            let q = [radius * th.cos(), radius * th.sin()];
            let v = q[0] * du[0] + q[1] * du[1] - spec.legendre(&q, None).unwrap();
            if v > best.0 {
                best = (v, q);
            }
        }
        best.1
    }

    #[test]
    fn policy_argmax_examples() {
        let g = TorusGrid::ergodic(2, 3).unwrap();
        let h2 = HamiltonianSpec::power(2.0).unwrap();
        let mut du = VectorField::zeros(g);
        du.values_mut()[0] = 1.0;
        du.values_mut()[2] = 10.0;
        let big = h2.policy_argmax(&du, &PolicyConstraint::new(10.0).unwrap());
        assert_eq!(big.at(0), &[2.0, 0.0]);
        let oracle = argmax_by_search(&h2, [1.0, 0.0], 10.0);
        assert!((oracle[0] - 2.0).abs() < 2e-3 && oracle[1].abs() < 2e-3);
        let small = h2.policy_argmax(&du, &PolicyConstraint::new(1.0).unwrap());
        assert_eq!(small.at(1), &[1.0, 0.0]);
        let oracle = argmax_by_search(&h2, [10.0, 0.0], 1.0);
        assert!((oracle[0] - 1.0).abs() < 2e-3 && oracle[1].abs() < 2e-3);
        // zero gradient everywhere gives zero policy
        let zero = h2.policy_argmax(&VectorField::zeros(g), &PolicyConstraint::new(1.0).unwrap());
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weighted_transform_is_consistent() {
        let g = TorusGrid::ergodic(1, 4).unwrap();
        let w = SpaceField::new(g, vec![0.5, 1.0, 2.0, 3.0]).unwrap();
        let spec = HamiltonianSpec::power(3.0).unwrap().with_weight(w).unwrap();
        assert!(spec.eval_h(&[1.0], None).is_err());
        for node in 0..4 {
            let p = [0.8];
            let q = spec.eval_hp(&p, Some(node)).unwrap();
            let fenchel = p[0] * q[0] - spec.legendre(&q, Some(node)).unwrap();
            let h = spec.eval_h(&p, Some(node)).unwrap();
            assert!((h - fenchel).abs() < 1e-12 * (1.0 + h));
        }
        let bad = SpaceField::new(g, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(HamiltonianSpec::power(2.0)
            .unwrap()
            .with_weight(bad)
            .is_err());
    }

    #[test]
    fn custom_kind_is_validated() {
        let ok = CustomHamiltonian::new(
            "relativistic",
            1,
            |p| (1.0 + p[0] * p[0]).sqrt() - 1.0,
            |p, out| out[0] = p[0] / (1.0 + p[0] * p[0]).sqrt(),
            |q| 1.0 - (1.0 - q[0] * q[0]).max(0.0).sqrt(),
            1.0,
            5.0,
            7,
        );
        let spec = HamiltonianSpec::custom(ok.unwrap());
        let hpp = spec.eval_hpp_action(&[0.0], &[1.0], None).unwrap();
        assert!((hpp - 1.0).abs() < 1e-6);
        assert!(spec.legendre(&[1.5], None).is_err());
        let bad = CustomHamiltonian::new(
            "inconsistent",
            1,
            |p| p[0] * p[0],
            |p, out| out[0] = p[0],
            |q| q[0] * q[0],
            1.0,
            2.0,
            7,
        );
        assert!(bad.is_err());
    }

    fn specs() -> Vec<HamiltonianSpec> {
        vec![
            HamiltonianSpec::power(1.5).unwrap(),
            HamiltonianSpec::power(2.0).unwrap(),
            HamiltonianSpec::power(3.0).unwrap(),
            HamiltonianSpec::truncated_power(2.0, 1.5).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn fenchel_identity(p0 in -1.4f64..1.4, p1 in -1.0f64..1.0) {
            prop_assume!((p0 * p0 + p1 * p1).sqrt() < 1.45 && (p0 * p0 + p1 * p1) > 1e-8);
            for spec in specs() {
                let p = [p0, p1];
                let q = spec.eval_hp(&p, None).unwrap();
                let lhs = spec.eval_h(&p, None).unwrap();
                let rhs = p[0] * q[0] + p[1] * q[1] - spec.legendre(&q, None).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1e-12));
            }
        }

        #[test]
        fn young_inequality(p0 in -3.0f64..3.0, p1 in -3.0f64..3.0, q0 in -2.0f64..2.0, q1 in -2.0f64..2.0) {
            for spec in specs() {
                let lq = match spec.legendre(&[q0, q1], None) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let h = spec.eval_h(&[p0, p1], None).unwrap();
                prop_assert!(p0 * q0 + p1 * q1 <= h + lq + 1e-12 * (1.0 + h.abs() + lq.abs()));
            }
        }

        #[test]
        fn truncated_is_lipschitz(a0 in -5.0f64..5.0, a1 in -5.0f64..5.0, b0 in -5.0f64..5.0, b1 in -5.0f64..5.0) {
            let spec = HamiltonianSpec::truncated_power(3.0, 1.2).unwrap();
            let lip = spec.gradient_bound().unwrap();
            let diff = (spec.eval_h(&[a0, a1], None).unwrap() - spec.eval_h(&[b0, b1], None).unwrap()).abs();
            let dist = ((a0 - b0).powi(2) + (a1 - b1).powi(2)).sqrt();
            prop_assert!(diff <= lip * dist * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn argmax_dominates(p0 in -4.0f64..4.0, p1 in -4.0f64..4.0, r in 0.2f64..5.0,
                            s in 0.0f64..1.0, th in 0.0f64..std::f64::consts::TAU) {
            let g = TorusGrid::ergodic(2, 3).unwrap();
            let mut du = VectorField::zeros(g);
            du.values_mut()[0] = p0;
            du.values_mut()[1] = p1;
            for spec in specs() {
                let radius = match spec.gradient_bound() { Some(b) => r.min(b), None => r };
                let q = spec.policy_argmax(&du, &PolicyConstraint::new(radius).unwrap());
                let qs = q.at(0);
                prop_assert!((qs[0] * qs[0] + qs[1] * qs[1]).sqrt() <= radius * (1.0 + 1e-14));
                let best = qs[0] * p0 + qs[1] * p1 - spec.legendre(qs, None).unwrap();
                let cand = [s * radius * th.cos(), s * radius * th.sin()];
                let val = cand[0] * p0 + cand[1] * p1 - spec.legendre(&cand, None).unwrap();
                prop_assert!(val <= best + 1e-9);
            }
        }
    }
}
