//! Closed-form matrix weight families.
//!
//! Every family is simultaneously diagonalizable in a fixed basis:
//! `W(x) = U0 diag(λ_1(x), .., λ_d(x)) U0*`. Derived quantities such as
//! `W^α`, `‖W‖`, `|W^{1/p} v|^p` and `‖W^{1/p}(x) W^{-1/p}(y)‖` therefore have
//! exact expressions in the eigenvalue functions, which the integrators use.
//! The generic eigensolver route is kept for ellipticity checks and tests.

use serde::{Deserialize, Serialize};

use crate::error::{BmError, Result};
use crate::linalg::{self, CMat, HermitianMatrix, C64, MAX_DIM};
use crate::policy::POLICY;

/// Sampled scalar weight on a regular grid, multilinearly interpolated and
/// extended by its boundary values outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Grid points per axis, each at least 2.
    pub shape: Vec<usize>,
    /// Row-major samples, last axis fastest.
    pub values: Vec<f64>,
    /// The table represents `interp(x)^exponent`.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub exponent: f64,
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

impl WeightTable {
    fn validate(&self, n: usize) -> Result<()> {
        if self.lo.len() != n || self.hi.len() != n || self.shape.len() != n {
            return Err(BmError::InvalidInput("table axes must match the ambient dimension".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(BmError::InvalidInput("table bounds must satisfy lo < hi".into()));
        }
        if self.shape.iter().any(|&s| s < 2) {
            return Err(BmError::InvalidInput("table needs at least 2 points per axis".into()));
        }
        let count: usize = self.shape.iter().product();
        if count != self.values.len() {
            return Err(BmError::InvalidInput(format!(
                "table has {} values, shape requires {count}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(BmError::InvalidInput("table values must be positive and finite".into()));
        }
        if !self.exponent.is_finite() {
            return Err(BmError::NonFinite("table exponent"));
        }
        Ok(())
    }

    fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.shape.len();
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut frac = [0.0f64; 8];
        let mut strides = [0usize; 8];
        for axis in (0..n).rev() {
            let m = self.shape[axis];
            let h = (self.hi[axis] - self.lo[axis]) / (m - 1) as f64;
            let u = ((x[axis] - self.lo[axis]) / h).clamp(0.0, (m - 1) as f64);
            let i = (u.floor() as usize).min(m - 2);
            frac[axis] = u - i as f64;
            strides[axis] = stride;
            base += i * stride;
            stride *= m;
        }
        let mut acc = 0.0;
        for corner in 0..1usize << n {
            let mut weight = 1.0;
            let mut offset = base;
            for axis in 0..n {
                if (corner >> axis) & 1 == 1 {
                    weight *= frac[axis];
                    offset += strides[axis];
                } else {
                    weight *= 1.0 - frac[axis];
                }
            }
            if weight != 0.0 {
                acc += weight * self.values[offset];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFamily {
    Identity {},
    /// `|x|^γ I_d`.
    ScalarPower { gamma: f64 },
    /// `U0 diag(c_i |x|^{γ_i}) U0*`.
    DiagonalPower {
        gammas: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        basis: Option<Vec<Vec<C64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scales: Option<Vec<f64>>,
    },
    /// `d = 1` sampled weight.
    ScalarTable(WeightTable),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    #[serde(flatten)]
    family: WeightFamily,
    d: usize,
    n: usize,
}

/// A validated matrix weight `W: R^n -> PD(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct MatrixWeightSpec {
    family: WeightFamily,
    d: usize,
    n: usize,
    /// Unitary `U0` when the family carries a non-identity basis.
    basis: Option<CMat>,
}

impl TryFrom<RawSpec> for MatrixWeightSpec {
    type Error = BmError;
    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.family, raw.d, raw.n)
    }
}

impl From<MatrixWeightSpec> for RawSpec {
    fn from(s: MatrixWeightSpec) -> RawSpec {
        RawSpec { family: s.family, d: s.d, n: s.n }
    }
}

/// Pointwise weight data.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPoint {
    pub w: HermitianMatrix,
    pub w_inv: HermitianMatrix,
    /// `‖W^{-1}(x)‖^{-1}`, the smallest eigenvalue.
    pub small_w: f64,
    /// `‖W(x)‖`.
    pub big_w: f64,
}

fn check_power_exponents(gammas: &[f64], n: usize) -> Result<()> {
    for &g in gammas {
        if !g.is_finite() {
            return Err(BmError::NonFinite("power exponent"));
        }
        if g <= -(n as f64) {
            return Err(BmError::ParameterOutOfRange(format!(
                "exponent {g} is not locally integrable in dimension {n} (needs > -{n})"
            )));
        }
    }
    Ok(())
}

impl MatrixWeightSpec {
    pub fn new(family: WeightFamily, d: usize, n: usize) -> Result<Self> {
        let spec = Self::build(family, d, n)?;
        match &spec.family {
            WeightFamily::ScalarPower { gamma } => check_power_exponents(&[*gamma], n)?,
            WeightFamily::DiagonalPower { gammas, .. } => check_power_exponents(gammas, n)?,
            _ => {}
        }
        Ok(spec)
    }

    /// Structural validation without the integrability bound. Powers of a
    /// valid weight (dual weights in particular) may leave `L^1_loc`.
    fn build(family: WeightFamily, d: usize, n: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(BmError::InvalidInput(format!("matrix dimension {d} outside 1..={MAX_DIM}")));
        }
        if n == 0 || n > 8 {
            return Err(BmError::InvalidInput(format!("ambient dimension {n} outside 1..=8")));
        }
        let mut basis = None;
        match &family {
            WeightFamily::Identity {} => {}
            WeightFamily::ScalarPower { gamma } => {
                if !gamma.is_finite() {
                    return Err(BmError::NonFinite("power exponent"));
                }
            }
            WeightFamily::DiagonalPower { gammas, basis: u0, scales } => {
                if gammas.len() != d {
                    return Err(BmError::InvalidInput(format!("{} exponents for d = {d}", gammas.len())));
                }
                if gammas.iter().any(|g| !g.is_finite()) {
                    return Err(BmError::NonFinite("power exponent"));
                }
                if let Some(c) = scales {
                    if c.len() != d || c.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                        return Err(BmError::InvalidInput("scales must be d positive finite values".into()));
                    }
                }
                if let Some(rows) = u0 {
                    let u = CMat::from_rows(rows.clone())?;
                    if u.rows() != d || u.cols() != d {
                        return Err(BmError::InvalidInput("basis must be d x d".into()));
                    }
                    let defect = (&(&u * &u.adjoint()) - &CMat::identity(d)).frobenius();
                    if defect > 1e-10 {
                        return Err(BmError::InvalidInput(format!("basis is not unitary (defect {defect:e})")));
                    }
                    basis = Some(u);
                }
            }
            WeightFamily::ScalarTable(table) => {
                if d != 1 {
                    return Err(BmError::InvalidInput("scalar_table requires d = 1".into()));
                }
                table.validate(n)?;
            }
        }
        Ok(Self { family, d, n, basis })
    }

    pub fn identity(d: usize, n: usize) -> Self {
        Self::new(WeightFamily::Identity {}, d, n).expect("identity weight")
    }

    pub fn scalar_power(gamma: f64, d: usize, n: usize) -> Result<Self> {
        Self::new(WeightFamily::ScalarPower { gamma }, d, n)
    }

    pub fn diagonal_power(gammas: Vec<f64>, n: usize) -> Result<Self> {
        let d = gammas.len();
        Self::new(WeightFamily::DiagonalPower { gammas, basis: None, scales: None }, d, n)
    }

    /// The constant weight `diag(c_i)`.
    pub fn constant_diagonal(scales: Vec<f64>, n: usize) -> Result<Self> {
        let d = scales.len();
        Self::new(WeightFamily::DiagonalPower { gammas: vec![0.0; d], basis: None, scales: Some(scales) }, d, n)
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> Option<&CMat> {
        self.basis.as_ref()
    }

    /// Whether `W(x)` does not depend on `x`.
    pub fn is_constant(&self) -> bool {
        match &self.family {
            WeightFamily::Identity {} => true,
            WeightFamily::ScalarPower { gamma } => *gamma == 0.0,
            WeightFamily::DiagonalPower { gammas, .. } => gammas.iter().all(|g| *g == 0.0),
            WeightFamily::ScalarTable(t) => t.exponent == 0.0 || t.values.iter().all(|v| *v == t.values[0]),
        }
    }

    /// Points where the weight is singular or degenerate.
    pub fn singular_points(&self) -> Vec<Vec<f64>> {
        if self.is_constant() {
            return Vec::new();
        }
        match &self.family {
            WeightFamily::ScalarPower { .. } | WeightFamily::DiagonalPower { .. } => vec![vec![0.0; self.n]],
            _ => Vec::new(),
        }
    }

    /// `W^α` as a weight of the same family.
    pub fn powered(&self, alpha: f64) -> Result<Self> {
        let family = match &self.family {
            WeightFamily::Identity {} => WeightFamily::Identity {},
            WeightFamily::ScalarPower { gamma } => WeightFamily::ScalarPower { gamma: gamma * alpha },
            WeightFamily::DiagonalPower { gammas, basis, scales } => WeightFamily::DiagonalPower {
                gammas: gammas.iter().map(|g| g * alpha).collect(),
                basis: basis.clone(),
                scales: scales.as_ref().map(|c| c.iter().map(|v| v.powf(alpha)).collect()),
            },
            WeightFamily::ScalarTable(t) => {
                WeightFamily::ScalarTable(WeightTable { exponent: t.exponent * alpha, ..t.clone() })
            }
        };
        Self::build(family, self.d, self.n)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(BmError::InvalidInput(format!("point of dimension {} for n = {}", x.len(), self.n)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BmError::NonFinite("evaluation point"));
        }
        Ok(())
    }

    /// Eigenvalues of `W(x)` in the order of the basis columns.
    pub fn eigenvalues_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_point(x)?;
        let singular = || BmError::SingularPoint { point: x.to_vec() };
        match &self.family {
            WeightFamily::Identity {} => out.fill(1.0),
            WeightFamily::ScalarPower { gamma } => {
                if *gamma == 0.0 {
                    out.fill(1.0);
                } else {
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r == 0.0 {
                        return Err(singular());
                    }
                    out.fill(r.powf(*gamma));
                }
            }
            WeightFamily::DiagonalPower { gammas, scales, .. } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (i, g) in gammas.iter().enumerate() {
                    let c = scales.as_ref().map_or(1.0, |s| s[i]);
                    out[i] = if *g == 0.0 {
                        c
                    } else if r == 0.0 {
                        return Err(singular());
                    } else {
                        c * r.powf(*g)
                    };
                }
            }
            WeightFamily::ScalarTable(t) => {
                let v = t.interpolate(x);
                out[0] = if t.exponent == 1.0 { v } else { v.powf(t.exponent) };
            }
        }
        if out.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(singular());
        }
        Ok(())
    }

    pub fn eigenvalues(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.eigenvalues_into(x, &mut out)?;
        Ok(out)
    }

    /// `‖W(x)‖`.
    pub fn norm_at(&self, x: &[f64]) -> Result<f64> {
        let mut buf = [0.0; MAX_DIM];
        let lam = &mut buf[..self.d];
        self.eigenvalues_into(x, lam)?;
        Ok(lam.iter().copied().fold(0.0, f64::max))
    }

    fn assemble(&self, lam: &[f64]) -> HermitianMatrix {
        match &self.basis {
            Some(u) => HermitianMatrix::from_spectral(u, lam),
            None => HermitianMatrix::from_real_diag(lam),
        }
    }

    /// `W(x)^α` from the closed form.
    pub fn power_at(&self, x: &[f64], alpha: f64) -> Result<HermitianMatrix> {
        let lam: Vec<f64> = self.eigenvalues(x)?.iter().map(|l| l.powf(alpha)).collect();
        Ok(self.assemble(&lam))
    }

    pub fn eval(&self, x: &[f64]) -> Result<WeightPoint> {
        let lam = self.eigenvalues(x)?;
        let inv: Vec<f64> = lam.iter().map(|l| l.recip()).collect();
        let small_w = lam.iter().copied().fold(f64::INFINITY, f64::min);
        let big_w = lam.iter().copied().fold(0.0, f64::max);
        Ok(WeightPoint { w: self.assemble(&lam), w_inv: self.assemble(&inv), small_w, big_w })
    }

    /// Coordinates of `v` in the eigenbasis, `U0* v`.
    pub fn to_eigenbasis(&self, v: &[C64]) -> Vec<C64> {
        match &self.basis {
            Some(u) => u.adjoint().mat_vec(v),
            None => v.to_vec(),
        }
    }

    /// `|W^{1/p}(x) v|^p` given `v` already in eigenbasis coordinates.
    pub fn p_mass_in_basis(&self, lam: &[f64], coords: &[C64], p: f64) -> f64 {
        let s: f64 = lam
            .iter()
            .zip(coords)
            .map(|(l, c)| {
                let a = c.norm_sqr();
                if a == 0.0 {
                    0.0
                } else if p == 2.0 {
                    l * a
                } else {
                    l.powf(2.0 / p) * a
                }
            })
            .sum();
        if p == 2.0 {
            s
        } else {
            s.powf(0.5 * p)
        }
    }

    /// `|W^{1/p}(x) v|^p`.
    pub fn p_mass(&self, x: &[f64], v: &[C64], p: f64) -> Result<f64> {
        let lam = self.eigenvalues(x)?;
        Ok(self.p_mass_in_basis(&lam, &self.to_eigenbasis(v), p))
    }

    /// `‖W^{1/p}(x) W^{-1/p}(y)‖`.
    pub fn ratio_norm(&self, x: &[f64], y: &[f64], p: f64) -> Result<f64> {
        let lx = self.eigenvalues(x)?;
        let ly = self.eigenvalues(y)?;
        Ok(ratio_norm_from(&lx, &ly, p))
    }
}

/// `max_i (λ_i(x) / λ_i(y))^{1/p}` for commuting weights.
pub fn ratio_norm_from(lx: &[f64], ly: &[f64], p: f64) -> f64 {
    lx.iter().zip(ly).map(|(a, b)| a / b).fold(0.0, f64::max).powf(1.0 / p)
}

/// `(w(x)|ξ|^p, |W^{1/p}(x)ξ|^p, ‖W(x)‖|ξ|^p)`, computed with the generic
/// eigensolver, and checked to be ordered up to `sandwich_slack`.
pub fn ellipticity_check(spec: &MatrixWeightSpec, p: f64, x: &[f64], xi: &[C64]) -> Result<(f64, f64, f64)> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(BmError::ParameterOutOfRange(format!("ellipticity needs finite p >= 1, got {p}")));
    }
    if xi.len() != spec.d() {
        return Err(BmError::InvalidInput("vector length differs from the weight dimension".into()));
    }
    let point = spec.eval(x)?;
    let root = linalg::matrix_power(&point.w, 1.0 / p)?;
    let inv_norm = linalg::spectral_norm(linalg::matrix_power(&point.w, -1.0)?.as_cmat());
    let xi_p = linalg::euclid(xi).powf(p);
    let lhs = xi_p / inv_norm;
    let mid = linalg::euclid(&root.as_cmat().mat_vec(xi)).powf(p);
    let rhs = linalg::spectral_norm(point.w.as_cmat()) * xi_p;
    let slack = POLICY.sandwich_slack;
    if lhs > mid * (1.0 + slack) || mid > rhs * (1.0 + slack) {
        return Err(BmError::EllipticityViolated { lhs, mid, rhs });
    }
    Ok((lhs, mid, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testing::{random_spd, random_unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn rotation_basis(theta: f64, phase: f64) -> Vec<Vec<C64>> {
        let e = C64::from_polar(1.0, phase);
        vec![vec![c(theta.cos()), -e * theta.sin()], vec![c(theta.sin()), e * theta.cos()]]
    }

    #[test]
    fn identity_eval() {
        let w = MatrixWeightSpec::identity(3, 2);
        let pt = w.eval(&[0.7, -2.0]).unwrap();
        assert_eq!(pt.w.as_cmat(), &CMat::identity(3));
        assert_eq!((pt.small_w, pt.big_w), (1.0, 1.0));
    }

    #[test]
    fn scalar_power_eval() {
        let w = MatrixWeightSpec::scalar_power(2.0, 1, 1).unwrap();
        let pt = w.eval(&[3.0]).unwrap();
        assert!((pt.w.as_cmat()[(0, 0)].re - 9.0).abs() < 1e-14);
        assert!((pt.small_w - 9.0).abs() < 1e-14 && (pt.big_w - 9.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_power_eval() {
        let w = MatrixWeightSpec::diagonal_power(vec![1.0, -0.5], 1).unwrap();
        let pt = w.eval(&[4.0]).unwrap();
        assert!((&pt.w.clone().into_cmat() - &CMat::from_real_diag(&[4.0, 0.5])).frobenius() < 1e-14);
        assert_eq!((pt.small_w, pt.big_w), (0.5, 4.0));
        let prod = pt.w_inv.as_cmat() * pt.w.as_cmat();
        assert!((&prod - &CMat::identity(2)).frobenius() < 1e-10);
    }

    #[test]
    fn singular_and_range_errors() {
        let w = MatrixWeightSpec::scalar_power(-0.5, 1, 1).unwrap();
        assert!(matches!(w.eval(&[0.0]), Err(BmError::SingularPoint { .. })));
        assert!(matches!(
            MatrixWeightSpec::scalar_power(-1.0, 1, 1),
            Err(BmError::ParameterOutOfRange(_))
        ));
        assert!(MatrixWeightSpec::scalar_power(-1.5, 1, 2).is_ok());
        assert_eq!(w.singular_points(), vec![vec![0.0]]);
        assert!(MatrixWeightSpec::identity(2, 2).singular_points().is_empty());
    }

    #[test]
    fn small_w_matches_inverse_norm() {
        let w = MatrixWeightSpec::new(
            WeightFamily::DiagonalPower {
                gammas: vec![0.7, -0.3],
                basis: Some(rotation_basis(0.4, 1.1)),
                scales: Some(vec![2.0, 0.5]),
            },
            2,
            2,
        )
        .unwrap();
        let pt = w.eval(&[0.3, -1.7]).unwrap();
        let inv_norm = linalg::spectral_norm(pt.w_inv.as_cmat());
        assert!((pt.small_w - 1.0 / inv_norm).abs() < 1e-12 * pt.small_w);
        assert!((pt.big_w - linalg::spectral_norm(pt.w.as_cmat())).abs() < 1e-12 * pt.big_w);
        let prod = pt.w_inv.as_cmat() * pt.w.as_cmat();
        assert!((&prod - &CMat::identity(2)).frobenius() < 1e-10);
    }

    #[test]
    fn closed_forms_match_generic_route() {
        let w = MatrixWeightSpec::new(
            WeightFamily::DiagonalPower {
                gammas: vec![1.2, -0.4],
                basis: Some(rotation_basis(0.9, -0.6)),
                scales: None,
            },
            2,
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let x = [rng.gen_range(-3.0..3.0)];
            let y = [rng.gen_range(-3.0..3.0)];
            let p = rng.gen_range(1.0..4.0);
            let wx = w.eval(&x).unwrap().w;
            let wy = w.eval(&y).unwrap().w;
            let generic = linalg::spectral_norm(
                &(linalg::matrix_power(&wx, 1.0 / p).unwrap().as_cmat()
                    * linalg::matrix_power(&wy, -1.0 / p).unwrap().as_cmat()),
            );
            let closed = w.ratio_norm(&x, &y, p).unwrap();
            assert!((generic - closed).abs() < 1e-10 * closed);
            let v = random_unit(&mut rng, 2);
            let root = linalg::matrix_power(&wx, 1.0 / p).unwrap();
            let generic_mass = linalg::euclid(&root.as_cmat().mat_vec(&v)).powf(p);
            assert!((generic_mass - w.p_mass(&x, &v, p).unwrap()).abs() < 1e-10 * generic_mass);
            let half = w.power_at(&x, 0.5).unwrap();
            assert!((half.as_cmat() - linalg::matrix_power(&wx, 0.5).unwrap().as_cmat()).frobenius() < 1e-10);
        }
    }

    #[test]
    fn ellipticity_examples() {
        let id = MatrixWeightSpec::identity(2, 1);
        let xi = [c(0.6), C64::new(0.0, 0.8)];
        let (l, m, r) = ellipticity_check(&id, 3.0, &[0.2], &xi).unwrap();
        assert!((l - 1.0).abs() < 1e-12 && (m - 1.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12);
        let w = MatrixWeightSpec::constant_diagonal(vec![4.0, 1.0], 1).unwrap();
        let (l, m, r) = ellipticity_check(&w, 2.0, &[0.5], &[c(1.0), c(0.0)]).unwrap();
        assert!((l - 1.0).abs() < 1e-12 && (m - 4.0).abs() < 1e-12 && (r - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ellipticity_sandwich_thousand_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..1000 {
            let d = rng.gen_range(1..=3);
            let n = rng.gen_range(1..=2);
            let spec = match i % 3 {
                0 => MatrixWeightSpec::scalar_power(rng.gen_range(-0.9..2.0), d, n).unwrap(),
                1 => MatrixWeightSpec::diagonal_power((0..d).map(|_| rng.gen_range(-0.9..2.0)).collect(), n).unwrap(),
                _ => MatrixWeightSpec::identity(d, n),
            };
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let xi = random_unit(&mut rng, d);
            let p = [1.0, 2.0, 3.0][i % 3];
            ellipticity_check(&spec, p, &x, &xi).unwrap();
        }
    }

    #[test]
    fn ellipticity_on_random_spd_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let a = random_spd(&mut rng, 3);
            let eig = linalg::hermitian_eig(&a).unwrap();
            let spec = MatrixWeightSpec::new(
                WeightFamily::DiagonalPower {
                    gammas: vec![0.0; 3],
                    basis: Some(eig.basis.to_rows()),
                    scales: Some(eig.eigenvalues.clone()),
                },
                3,
                1,
            )
            .unwrap();
            let back = spec.eval(&[0.1]).unwrap().w;
            assert!((back.as_cmat() - a.as_cmat()).frobenius() < 1e-10 * a.as_cmat().frobenius());
            for p in [1.0, 2.0, 3.0] {
                ellipticity_check(&spec, p, &[0.1], &random_unit(&mut rng, 3)).unwrap();
            }
        }
    }

    #[test]
    fn zero_power_is_identity() {
        let zero = MatrixWeightSpec::scalar_power(0.0, 2, 2).unwrap();
        let id = MatrixWeightSpec::identity(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            assert_eq!(zero.eval(&x).unwrap(), id.eval(&x).unwrap());
            let v = random_unit(&mut rng, 2);
            assert_eq!(zero.p_mass(&x, &v, 1.5).unwrap(), id.p_mass(&x, &v, 1.5).unwrap());
        }
        assert_eq!(zero.eval(&[0.0, 0.0]).unwrap(), id.eval(&[0.0, 0.0]).unwrap());
        assert!(zero.singular_points().is_empty());
        assert!(zero.is_constant());
    }

    #[test]
    fn table_interpolates() {
        let t = WeightTable {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 2.0],
            shape: vec![2, 3],
            values: vec![1.0, 2.0, 3.0, 2.0, 3.0, 4.0],
            exponent: 1.0,
        };
        let w = MatrixWeightSpec::new(WeightFamily::ScalarTable(t), 1, 2).unwrap();
        // w(x, y) = 1 + x + y on the grid
        for (x, y) in [(0.0, 0.0), (0.5, 0.5), (0.25, 1.5), (1.0, 2.0)] {
            assert!((w.norm_at(&[x, y]).unwrap() - (1.0 + x + y)).abs() < 1e-14);
        }
        assert!((w.norm_at(&[-1.0, 5.0]).unwrap() - 3.0).abs() < 1e-14);
        let sq = w.powered(2.0).unwrap();
        assert!((sq.norm_at(&[0.5, 0.5]).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn powered_matches_matrix_power() {
        let w = MatrixWeightSpec::new(
            WeightFamily::DiagonalPower {
                gammas: vec![1.5, 0.5],
                basis: Some(rotation_basis(0.3, 0.2)),
                scales: Some(vec![3.0, 0.25]),
            },
            2,
            1,
        )
        .unwrap();
        let dual = w.powered(-1.0).unwrap();
        let x = [0.8];
        let generic = linalg::matrix_power(&w.eval(&x).unwrap().w, -1.0).unwrap();
        assert!((generic.as_cmat() - dual.eval(&x).unwrap().w.as_cmat()).frobenius() < 1e-10);
        // duals may leave L^1_loc and are still constructible
        let s = MatrixWeightSpec::scalar_power(1.5, 1, 1).unwrap().powered(-1.0).unwrap();
        assert!((s.norm_at(&[4.0]).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn json_shape() {
        let w = MatrixWeightSpec::scalar_power(0.5, 1, 2).unwrap();
        let v = serde_json::to_value(&w).unwrap();
        assert_eq!(v, serde_json::json!({"family": "scalar_power", "d": 1, "n": 2, "params": {"gamma": 0.5}}));
        let id: MatrixWeightSpec =
            serde_json::from_str(r#"{"family":"identity","d":2,"n":1,"params":{}}"#).unwrap();
        assert_eq!(id, MatrixWeightSpec::identity(2, 1));
        let bad = serde_json::from_str::<MatrixWeightSpec>(r#"{"family":"scalar_power","d":1,"n":1,"params":{"gamma":-2}}"#);
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(
            g in proptest::collection::vec(-0.99f64..5.0, 1..4),
            c in proptest::collection::vec(1e-3f64..1e3, 3),
            theta in -3.0f64..3.0,
        ) {
            let d = g.len();
            let basis = if d == 2 { Some(rotation_basis(theta, theta * 0.7)) } else { None };
            let w = MatrixWeightSpec::new(
                WeightFamily::DiagonalPower { gammas: g, basis, scales: Some(c[..d].to_vec()) },
                d,
                1,
            ).unwrap();
            let text = serde_json::to_string(&w).unwrap();
            let back: MatrixWeightSpec = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &w);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
        }

        #[test]
        fn eval_is_positive_definite(gamma in -0.99f64..3.0, x in 1e-3f64..10.0, d in 1usize..4) {
            let w = MatrixWeightSpec::scalar_power(gamma, d, 1).unwrap();
            let pt = w.eval(&[x]).unwrap();
            let eig = linalg::hermitian_eig(&pt.w).unwrap();
            prop_assert!(eig.eigenvalues[0] > 0.0);
            prop_assert!(pt.small_w <= pt.big_w);
        }
    }
}
