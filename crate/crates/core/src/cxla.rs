//! Dense complex linear algebra for small Hermitian systems.
//!
//! Inversion and solving go through the real embedding
//! `[[A, B], [-B, A]]` of `A + iB`, eliminated with partial pivoting in
//! double precision. The explicit inverse is only formed by [`cinv`];
//! everything on the filter path uses [`csolve`].

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

/// Complex column vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector(Vec<Complex64>);

/// Row-major real matrix, used for the real embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_finite(data: &[Complex64]) -> Result<()> {
    match data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("{rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(m: usize) -> Self {
        let mut out = Self::zeros(m, m);
        for i in 0..m {
            out[(i, i)] = ONE;
        }
        out
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), n, rows.concat())
    }

    /// Diagonal matrix with the given entries.
    pub fn diag(entries: &[Complex64]) -> Self {
        let mut out = Self::zeros(entries.len(), entries.len());
        for (i, &z) in entries.iter().enumerate() {
            out[(i, i)] = z;
        }
        out
    }

    /// `v vᴴ`.
    pub fn outer(v: &CVector) -> Self {
        Self::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    fn require_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::NonSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "{}x{} + {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &CVector) -> Result<CVector> {
        if self.cols != v.len() {
            return Err(Error::Dimension(format!(
                "{}x{} * vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(CVector(
            self.data
                .chunks_exact(self.cols)
                .map(|row| row.iter().zip(&v.0).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        check_finite(&self.data).is_ok()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (i..self.cols).all(|j| (self[(i, j)] - self[(j, i)].conj()).norm() <= tol)
            })
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl CVector {
    pub fn new(data: Vec<Complex64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dimension("empty vector".into()));
        }
        check_finite(&data)?;
        Ok(Self(data))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![ZERO; m])
    }

    /// Unit vector `e_q` (0-based).
    pub fn one_hot(m: usize, q: usize) -> Self {
        let mut v = Self::zeros(m);
        v.0[q] = ONE;
        v
    }

    /// `(1, 1, …, 1) / √m`.
    pub fn uniform(m: usize) -> Self {
        let a = 1.0 / (m as f64).sqrt();
        Self(vec![Complex64::new(a, 0.0); m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `selfᴴ other`.
    pub fn dot(&self, other: &CVector) -> Complex64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self(self.0.iter().map(|z| z * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        check_finite(&self.0).is_ok()
    }

    pub fn as_column(&self) -> CMatrix {
        CMatrix {
            rows: self.0.len(),
            cols: 1,
            data: self.0.clone(),
        }
    }
}

impl Index<usize> for CVector {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl RMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl Index<(usize, usize)> for RMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Real embedding `[[A, B], [-B, A]]` of `phi = A + iB`.
pub fn real_embed(phi: &CMatrix) -> Result<RMatrix> {
    let m = phi.require_square()?;
    let mut out = RMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let z = phi[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + m)] = z.im;
            out[(i + m, j)] = -z.im;
            out[(i + m, j + m)] = z.re;
        }
    }
    Ok(out)
}

/// Solves `a x = b` for real square `a` by Gaussian elimination with
/// partial pivoting.
///
/// A pivot below `n · ε · max|a|` is reported as [`Error::Singular`].
pub fn solve_real(a: &RMatrix, b: &RMatrix) -> Result<RMatrix> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::NonSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if b.rows != n {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, expected {n}",
            b.rows
        )));
    }
    let k = b.cols;
    let max_abs = a.data.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let threshold = n as f64 * f64::EPSILON * max_abs;

    let mut lu = a.data.clone();
    let mut x = b.data.clone();
    for col in 0..n {
        let (piv_row, piv_abs) = (col..n)
            .map(|r| (r, lu[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(piv_abs > threshold) {
            return Err(Error::Singular {
                column: col,
                pivot: piv_abs,
                threshold,
            });
        }
        if piv_row != col {
            for j in 0..n {
                lu.swap(col * n + j, piv_row * n + j);
            }
            for j in 0..k {
                x.swap(col * k + j, piv_row * k + j);
            }
        }
        let pivot = lu[col * n + col];
        for r in col + 1..n {
            let factor = lu[r * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[r * n + col] = 0.0;
            for j in col + 1..n {
                lu[r * n + j] -= factor * lu[col * n + j];
            }
            for j in 0..k {
                x[r * k + j] -= factor * x[col * k + j];
            }
        }
    }
    for col in (0..n).rev() {
        let pivot = lu[col * n + col];
        for j in 0..k {
            let mut acc = x[col * k + j];
            for c in col + 1..n {
                acc -= lu[col * n + c] * x[c * k + j];
            }
            x[col * k + j] = acc / pivot;
        }
    }
    Ok(RMatrix {
        rows: n,
        cols: k,
        data: x,
    })
}

/// Inverse of a complex square matrix through its real embedding.
///
/// Real and imaginary parts are read from the same embedded solution
/// columns, so `Φ · Φ⁻¹ ≈ I` holds to working precision even when Φ is
/// ill-conditioned.
pub fn cinv(phi: &CMatrix) -> Result<CMatrix> {
    let m = phi.require_square()?;
    csolve(phi, &CMatrix::identity(m))
}

/// Solves `phi · X = rhs` without forming `phi⁻¹`.
///
/// With `X = Xr + iXi` and `rhs = Br + iBi`, the embedded system is
/// `[[A, B], [-B, A]] · [Xr; -Xi] = [Br; -Bi]`.
pub fn csolve(phi: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let m = phi.require_square()?;
    if rhs.rows != m {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, expected {m}",
            rhs.rows
        )));
    }
    let k = rhs.cols;
    let embedded = real_embed(phi)?;
    let mut b = RMatrix::zeros(2 * m, k);
    for i in 0..m {
        for j in 0..k {
            let z = rhs[(i, j)];
            b[(i, j)] = z.re;
            b[(i + m, j)] = -z.im;
        }
    }
    let x = solve_real(&embedded, &b)?;
    Ok(CMatrix::from_fn(m, k, |i, j| {
        Complex64::new(x[(i, j)], -x[(i + m, j)])
    }))
}

/// Vector form of [`csolve`].
pub fn csolve_vec(phi: &CMatrix, rhs: &CVector) -> Result<CVector> {
    let x = csolve(phi, &rhs.as_column())?;
    Ok(CVector(x.data))
}

/// `Φ + ε · Trace(Φ) · I`.
pub fn diag_load(phi: &CMatrix, eps: f64) -> Result<CMatrix> {
    let m = phi.require_square()?;
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("loading factor {eps}")));
    }
    let mut out = phi.clone();
    if eps == 0.0 {
        return Ok(out);
    }
    let load = phi.trace() * eps;
    for i in 0..m {
        out[(i, i)] += load;
    }
    Ok(out)
}

/// `(Φ + Φᴴ) / 2`.
pub fn hermitize(phi: &CMatrix) -> Result<CMatrix> {
    let m = phi.require_square()?;
    let mut out = phi.clone();
    for i in 0..m {
        out[(i, i)] = Complex64::new(phi[(i, i)].re, 0.0);
        for j in i + 1..m {
            let z = (phi[(i, j)] + phi[(j, i)].conj()) * 0.5;
            out[(i, j)] = z;
            out[(j, i)] = z.conj();
        }
    }
    Ok(out)
}

/// Plain power iteration: `v ← Φv / ‖Φv‖`, `iters` times, starting from
/// the normalized seed.
pub fn power_iter_maxeig(phi: &CMatrix, iters: usize, seed: &CVector) -> Result<CVector> {
    let m = phi.require_square()?;
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs iters >= 1".into()));
    }
    if seed.len() != m {
        return Err(Error::Dimension(format!(
            "seed of length {} for a {m}x{m} matrix",
            seed.len()
        )));
    }
    let n0 = seed.norm();
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(Error::InvalidArgument("power iteration seed is zero".into()));
    }
    let mut v = seed.scale(Complex64::new(1.0 / n0, 0.0));
    for step in 1..=iters {
        let w = phi.mul_vec(&v)?;
        let n = w.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroVector { iteration: step });
        }
        v = w.scale(Complex64::new(1.0 / n, 0.0));
    }
    Ok(v)
}
