//! Sparse matrices and the two linear solver paths: banded LU with partial
//! pivoting (after a bandwidth-reducing reordering) and Gauss-Seidel sweeps.

use crate::error::{MfgError, Result};

/// Compressed sparse row matrix with sorted, duplicate-free columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Default, Clone)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, val));
    }

    /// Add every entry of `m` shifted by `(row0, col0)`.
    pub fn add_block(&mut self, row0: usize, col0: usize, m: &CsrMatrix, scale: f64) {
        for r in 0..m.n {
            for (c, v) in m.row(r) {
                self.add(row0 + r, col0 + c, scale * v);
            }
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().expect("entry exists") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                b.add(c, r, v);
            }
        }
        b.build()
    }

    /// `max |A x - b|`.
    pub fn residual_inf(&self, x: &[f64], b: &[f64]) -> f64 {
        self.matvec(x)
            .iter()
            .zip(b)
            .fold(0.0, |m, (ax, bi)| m.max((ax - bi).abs()))
    }

    /// Largest absolute difference between stored entries of two matrices.
    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                worst = worst.max((v - other.get(r, c)).abs());
            }
            for (c, v) in other.row(r) {
                worst = worst.max((v - self.get(r, c)).abs());
            }
        }
        worst
    }

    /// Copy of the sub-block `rows x cols` (both half-open ranges).
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> CsrMatrix {
        let mut b = TripletBuilder::new(rows.len().max(cols.len()));
        for r in rows.clone() {
            for (c, v) in self.row(r) {
                if cols.contains(&c) {
                    b.add(r - rows.start, c - cols.start, v);
                }
            }
        }
        b.build()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.vals.iter().all(|&v| v == 0.0)
    }
}

/// LU factorization with partial pivoting of `P A P^T` stored as a band.
///
/// Rows hold columns `i - kl ..= i + kl + ku` to leave room for fill from
/// row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
    /// `position[i]` is the row of unknown `i` in the reordered system.
    position: Vec<usize>,
}

impl BandedLu {
    /// Factor `a` after the symmetric reordering `position`.
    pub fn factor(a: &CsrMatrix, position: &[usize]) -> Result<Self> {
        let n = a.dim();
        assert_eq!(position.len(), n, "ordering must cover every unknown");
        let (mut kl, mut ku) = (0usize, 0usize);
        let mut scale: f64 = 0.0;
        for r in 0..n {
            for (c, v) in a.row(r) {
                let (pr, pc) = (position[r], position[c]);
                if pc < pr {
                    kl = kl.max(pr - pc);
                } else {
                    ku = ku.max(pc - pr);
                }
                scale = scale.max(v.abs());
            }
        }
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for r in 0..n {
            for (c, v) in a.row(r) {
                let (pr, pc) = (position[r], position[c]);
                band[pr * width + pc + kl - pr] += v;
            }
        }
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            band,
            pivots: vec![0; n],
            position: position.to_vec(),
        };
        lu.eliminate(scale)?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + j + self.kl - i
    }

    fn eliminate(&mut self, scale: f64) -> Result<()> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE) * 1e-3;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.band[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.band[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(MfgError::SingularSystem(format!(
                    "zero pivot at reordered row {k} of {n}"
                )));
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.band.swap(a, b);
                }
            }
            let pivot = self.band[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.band[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.band[ik] = l;
                let base_k = self.idx(k, 0);
                let base_i = self.idx(i, 0);
                for j in k + 1..=last_col {
                    self.band[base_i + j] -= l * self.band[base_k + j];
                }
            }
        }
        Ok(())
    }

    /// Solve `A x = b` in the original unknown ordering.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut y = vec![0.0; n];
        for (i, &bi) in b.iter().enumerate() {
            y[self.position[i]] = bi;
        }
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    y[i] -= self.band[self.idx(i, k)] * yk;
                }
            }
        }
        for i in (0..n).rev() {
            let base = self.idx(i, 0);
            let mut acc = y[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                acc -= self.band[base + j] * y[j];
            }
            y[i] = acc / self.band[base + i];
        }
        self.position.iter().map(|&p| y[p]).collect()
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }
}

/// Gauss-Seidel iteration until `max |A x - b| <= tol`. Returns the sweep count.
pub fn gauss_seidel(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<usize> {
    let n = a.dim();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    if let Some(i) = diag.iter().position(|&d| d == 0.0) {
        return Err(MfgError::SingularSystem(format!(
            "zero diagonal at row {i}"
        )));
    }
    for sweep in 1..=max_sweeps {
        for i in 0..n {
            let mut acc = b[i];
            for (c, v) in a.row(i) {
                if c != i {
                    acc -= v * x[c];
                }
            }
            x[i] = acc / diag[i];
        }
        if a.residual_inf(x, b) <= tol {
            return Ok(sweep);
        }
    }
    Err(MfgError::SingularSystem(format!(
        "Gauss-Seidel did not reach residual {tol} in {max_sweeps} sweeps"
    )))
}
