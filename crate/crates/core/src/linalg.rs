//! Small dense complex linear algebra for `d <= 8`.
//!
//! The eigensolver is a cyclic complex Jacobi iteration. At this size it is
//! accurate to a few ulps of `‖A‖` and needs no external LAPACK.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{BmError, Result};
use crate::policy::POLICY;

pub type C64 = Complex64;

pub const MAX_DIM: usize = 8;

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:>10.4e}{:+.4e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_real_diag(&vec![1.0; d])
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = Self::zeros(d, d);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<C64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(BmError::InvalidInput("ragged or empty matrix rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|row| row.iter().map(|&v| C64::new(v, 0.0)).collect())
                .collect(),
        )
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

    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        self.data.chunks(self.cols).map(<[C64]>::to_vec).collect()
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn mat_vec(&self, v: &[C64]) -> Vec<C64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<CMat> {
        if !self.is_square() {
            return Err(BmError::InvalidInput("inverse of a non-square matrix".into()));
        }
        let d = self.rows;
        let mut a = self.clone();
        let mut inv = CMat::identity(d);
        let scale = self.max_abs();
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&x, &y| a[(x, col)].norm().total_cmp(&a[(y, col)].norm()))
                .unwrap();
            if a[(pivot, col)].norm() <= 1e-300_f64.max(1e-15 * scale) {
                return Err(BmError::Degenerate("singular matrix in inverse".into()));
            }
            if pivot != col {
                for c in 0..d {
                    a.data.swap(pivot * d + c, col * d + c);
                    inv.data.swap(pivot * d + c, col * d + c);
                }
            }
            let p = a[(col, col)].inv();
            for c in 0..d {
                a[(col, c)] *= p;
                inv[(col, c)] *= p;
            }
            for r in 0..d {
                if r != col {
                    let f = a[(r, col)];
                    if f != C64::new(0.0, 0.0) {
                        for c in 0..d {
                            let ac = a[(col, c)];
                            let ic = inv[(col, c)];
                            a[(r, c)] -= f * ac;
                            inv[(r, c)] -= f * ic;
                        }
                    }
                }
            }
        }
        Ok(inv)
    }
}

impl Mul for &CMat {
    type Output = CMat;
    fn mul(self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "dimension mismatch in product");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..rhs.cols {
                    out.data[r * rhs.cols + c] += a * rhs[(k, c)];
                }
            }
        }
        out
    }
}

impl Add for &CMat {
    type Output = CMat;
    fn add(self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMat {
    type Output = CMat;
    fn sub(self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// A square matrix accepted as Hermitian within `hermitian_tol`, stored
/// exactly symmetrized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMat", into = "CMat")]
pub struct HermitianMatrix(CMat);

impl TryFrom<CMat> for HermitianMatrix {
    type Error = BmError;
    fn try_from(m: CMat) -> Result<Self> {
        HermitianMatrix::new(m)
    }
}

impl From<HermitianMatrix> for CMat {
    fn from(h: HermitianMatrix) -> CMat {
        h.0
    }
}

impl HermitianMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(BmError::InvalidInput("Hermitian matrix must be square and non-empty".into()));
        }
        if m.rows() > MAX_DIM {
            return Err(BmError::InvalidInput(format!("dimension {} exceeds {MAX_DIM}", m.rows())));
        }
        if !m.is_finite() {
            return Err(BmError::NonFinite("Hermitian matrix entries"));
        }
        let skew = (&m - &m.adjoint()).frobenius();
        let size = m.frobenius();
        let residual = if size > 0.0 { skew / size } else { 0.0 };
        if residual > POLICY.hermitian_tol {
            return Err(BmError::NonHermitian { residual });
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(m: CMat) -> Self {
        let adj = m.adjoint();
        HermitianMatrix((&m + &adj).scale(C64::new(0.5, 0.0)))
    }

    pub fn identity(d: usize) -> Self {
        HermitianMatrix(CMat::identity(d))
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        HermitianMatrix(CMat::from_real_diag(diag))
    }

    /// `U diag(λ) U*` for a unitary `U`.
    pub fn from_spectral(basis: &CMat, eigenvalues: &[f64]) -> Self {
        let d = eigenvalues.len();
        let mut scaled = basis.clone();
        for r in 0..d {
            for c in 0..d {
                scaled[(r, c)] *= eigenvalues[c];
            }
        }
        Self::symmetrized(&scaled * &basis.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_cmat(&self) -> &CMat {
        &self.0
    }

    pub fn into_cmat(self) -> CMat {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors.
    pub basis: CMat,
}

impl EigenPair {
    pub fn reconstruct(&self) -> HermitianMatrix {
        HermitianMatrix::from_spectral(&self.basis, &self.eigenvalues)
    }
}

fn off_diagonal_norm(a: &CMat) -> f64 {
    let d = a.rows();
    let mut s = 0.0;
    for r in 0..d {
        for c in 0..d {
            if r != c {
                s += a[(r, c)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix.
pub fn hermitian_eig(h: &HermitianMatrix) -> Result<EigenPair> {
    let d = h.dim();
    let mut a = h.as_cmat().clone();
    let mut v = CMat::identity(d);
    let scale = a.frobenius();
    if scale == 0.0 {
        return Ok(EigenPair { eigenvalues: vec![0.0; d], basis: v });
    }
    let target = f64::EPSILON * scale * 1e-2;
    let mut converged = off_diagonal_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps >= POLICY.jacobi_max_sweeps {
            return Err(BmError::NotConverged { what: "Jacobi eigensolver", iterations: sweeps });
        }
        sweeps += 1;
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= f64::MIN_POSITIVE {
                    continue;
                }
                // phase rotation makes the (p, q) block real symmetric
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = [[c, s], [-s e^{-iφ}, c e^{-iφ}]] on coordinates (p, q)
                let g_pp = C64::new(c, 0.0);
                let g_pq = C64::new(s, 0.0);
                let g_qp = -phase.conj() * s;
                let g_qq = phase.conj() * c;
                // A <- A G
                for r in 0..d {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = arp * g_pp + arq * g_qp;
                    a[(r, q)] = arp * g_pq + arq * g_qq;
                }
                // A <- G* A
                for col in 0..d {
                    let apc = a[(p, col)];
                    let aqc = a[(q, col)];
                    a[(p, col)] = g_pp.conj() * apc + g_qp.conj() * aqc;
                    a[(q, col)] = g_pq.conj() * apc + g_qq.conj() * aqc;
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                for r in 0..d {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp * g_pp + vrq * g_qp;
                    v[(r, q)] = vrp * g_pq + vrq * g_qq;
                }
            }
        }
        converged = off_diagonal_norm(&a) <= target;
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let eigenvalues = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut basis = CMat::zeros(d, d);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..d {
            basis[(r, new_col)] = v[(r, old_col)];
        }
    }
    Ok(EigenPair { eigenvalues, basis })
}

/// Checks positive definiteness under the floor policy; no clipping.
pub fn check_positive_definite(eig: &EigenPair) -> Result<()> {
    let min = eig.eigenvalues[0];
    let max = *eig.eigenvalues.last().unwrap();
    if !(max > 0.0) || min <= POLICY.eig_floor * max {
        return Err(BmError::NotPositiveDefinite { min_eig: min, max_eig: max });
    }
    Ok(())
}

/// `A^α = U diag(λ_i^α) U*` for positive definite `A`.
pub fn matrix_power(h: &HermitianMatrix, alpha: f64) -> Result<HermitianMatrix> {
    if alpha == 0.0 {
        // still reject indefinite input
        check_positive_definite(&hermitian_eig(h)?)?;
        return Ok(HermitianMatrix::identity(h.dim()));
    }
    let eig = hermitian_eig(h)?;
    check_positive_definite(&eig)?;
    let powered: Vec<f64> = eig.eigenvalues.iter().map(|l| l.powf(alpha)).collect();
    Ok(HermitianMatrix::from_spectral(&eig.basis, &powered))
}

/// Largest singular value of an arbitrary `d x n` complex matrix.
pub fn spectral_norm(a: &CMat) -> f64 {
    let gram = if a.rows() <= a.cols() { a * &a.adjoint() } else { &a.adjoint() * a };
    if gram.rows() > MAX_DIM {
        return power_iteration_norm(a);
    }
    match HermitianMatrix::new(gram).and_then(|g| hermitian_eig(&g)) {
        Ok(eig) => eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt(),
        Err(_) => power_iteration_norm(a),
    }
}

fn power_iteration_norm(a: &CMat) -> f64 {
    let adj = a.adjoint();
    let mut v: Vec<C64> = (0..a.cols()).map(|i| C64::new(1.0 + i as f64 * 0.1, 0.3)).collect();
    let mut est = 0.0;
    for _ in 0..500 {
        let w = adj.mat_vec(&a.mat_vec(&v));
        let norm = w.iter().map(C64::norm_sqr).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|z| z / norm).collect();
        est = norm.sqrt();
    }
    est
}

/// ℓ^q exponent in `[1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormExponent {
    Finite(f64),
    Infinity,
}

pub fn vector_norm(x: &[C64], q: NormExponent) -> Result<f64> {
    match q {
        NormExponent::Infinity => Ok(x.iter().map(|z| z.norm()).fold(0.0, f64::max)),
        NormExponent::Finite(q) if q >= 1.0 && q.is_finite() => {
            let max = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if max == 0.0 {
                return Ok(0.0);
            }
            // scaled to avoid overflow for large q
            let s: f64 = x.iter().map(|z| (z.norm() / max).powf(q)).sum();
            Ok(max * s.powf(1.0 / q))
        }
        NormExponent::Finite(q) => Err(BmError::ParameterOutOfRange(format!("vector norm exponent {q} < 1"))),
    }
}

/// Euclidean norm `|x|`.
pub fn euclid(x: &[C64]) -> f64 {
    x.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
}
