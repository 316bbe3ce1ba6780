//! Vector fields `f: R^n -> C^d` used as norm and operator inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dyadic::{containing_cube, pow2, BoxBounds, Cube, DyadicIndex};
use crate::error::{BmError, Result};
use crate::linalg::C64;
use crate::operators::{AveragingPlan, CollectionAverage};
use crate::quadrature::{integrate_vector, Feature, Integrand, IntegrandHints, QuadratureSpec, Support};

/// Half-width of the Gaussian support box in units of its scale; the bump is
/// below `e^{-40}` of its peak outside.
pub const GAUSSIAN_REACH: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallSide {
    /// `χ_{B(0,R)} f`, closed ball.
    Inside,
    /// `χ_{B^c(0,R)} f`.
    Outside,
}

/// Values on the cubes of `𝒟_{-a}` (side `2^a`), zero off the stored cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    pub a: i32,
    pub d: usize,
    pub n: usize,
    pub cells: BTreeMap<Vec<i64>, Vec<C64>>,
}

impl PiecewiseConstant {
    pub fn new(a: i32, d: usize, n: usize, cells: BTreeMap<Vec<i64>, Vec<C64>>) -> Result<Self> {
        crate::dyadic::DyadicIndex::new(-a, vec![0; n])?;
        if cells.iter().any(|(k, v)| k.len() != n || v.len() != d) {
            return Err(BmError::InvalidInput("piecewise-constant cell of the wrong shape".into()));
        }
        Ok(Self { a, d, n, cells })
    }

    pub fn cell_side(&self) -> f64 {
        pow2(self.a)
    }

    pub fn value_at(&self, x: &[f64]) -> Option<&Vec<C64>> {
        let idx = containing_cube(x, -self.a).ok()?;
        self.cells.get(&idx.k)
    }

    pub fn bounds(&self) -> Option<BoxBounds> {
        let side = self.cell_side();
        let mut it = self.cells.keys();
        let first = it.next()?;
        let mut lo: Vec<f64> = first.iter().map(|&k| k as f64 * side).collect();
        let mut hi: Vec<f64> = lo.iter().map(|v| v + side).collect();
        for k in it {
            for i in 0..self.n {
                let c = k[i] as f64 * side;
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c + side);
            }
        }
        Some(BoxBounds { lo, hi })
    }

    /// Exact mean over a cube aligned with the lattice, `None` otherwise.
    pub fn exact_mean(&self, cube: &Cube) -> Option<Vec<C64>> {
        let side = self.cell_side();
        let aligned = |v: f64, unit: f64| (v / unit).fract() == 0.0;
        if cube.side >= side {
            let ratio = cube.side / side;
            if !aligned(ratio, 1.0) || !cube.corner.iter().all(|c| aligned(*c, side)) {
                return None;
            }
            let lo: Vec<i64> = cube.corner.iter().map(|c| (c / side) as i64).collect();
            let span = ratio as i64;
            let frac = (side / cube.side).powi(self.n as i32);
            let mut acc = vec![C64::new(0.0, 0.0); self.d];
            for (k, v) in &self.cells {
                if k.iter().zip(&lo).all(|(ki, li)| *ki >= *li && *ki < li + span) {
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += b * frac;
                    }
                }
            }
            Some(acc)
        } else {
            // a cube inside one cell when its corner and far corner share it
            let idx = containing_cube(&cube.corner, -self.a).ok()?;
            let cell = idx.cube().ok()?;
            let far: Vec<f64> = cube.corner.iter().map(|c| c + cube.side).collect();
            if !cell.closure_contains(&far) {
                return None;
            }
            Some(self.cells.get(&idx.k).cloned().unwrap_or_else(|| vec![C64::new(0.0, 0.0); self.d]))
        }
    }
}

#[derive(Debug, Clone)]
pub enum VectorField {
    Constant {
        value: Vec<C64>,
        n: usize,
    },
    /// `v exp(-|x - c|^2 / (2 s^2))`.
    GaussianBump {
        center: Vec<f64>,
        scale: f64,
        direction: Vec<C64>,
    },
    /// Analytic gradient of a scalar Gaussian bump with amplitude `amplitude`.
    GaussianGradient {
        center: Vec<f64>,
        scale: f64,
        amplitude: C64,
    },
    /// `|x|^{exponent} v`.
    PowerTail {
        exponent: f64,
        direction: Vec<C64>,
        n: usize,
    },
    BallTruncation {
        inner: Arc<VectorField>,
        radius: f64,
        side: BallSide,
    },
    PiecewiseConstant(Arc<PiecewiseConstant>),
    /// `(τ_y f)(x) = f(x - y)`.
    Translate {
        inner: Arc<VectorField>,
        shift: Vec<f64>,
    },
    /// Central-difference gradient of a scalar field.
    FdGradient {
        inner: Arc<VectorField>,
        step: f64,
    },
    Combination {
        terms: Vec<(C64, VectorField)>,
    },
    Averaged(Arc<AveragingPlan>),
    CollectionAverage(Arc<CollectionAverage>),
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl VectorField {
    pub fn zero(d: usize, n: usize) -> Self {
        VectorField::Constant { value: vec![zero(); d], n }
    }

    pub fn constant(value: Vec<C64>, n: usize) -> Self {
        VectorField::Constant { value, n }
    }

    pub fn gaussian(center: Vec<f64>, scale: f64, direction: Vec<C64>) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(BmError::InvalidInput("gaussian scale must be positive".into()));
        }
        if center.is_empty() || direction.is_empty() {
            return Err(BmError::InvalidInput("gaussian needs n >= 1 and d >= 1".into()));
        }
        Ok(VectorField::GaussianBump { center, scale, direction })
    }

    pub fn power_tail(exponent: f64, direction: Vec<C64>, n: usize) -> Result<Self> {
        if !exponent.is_finite() || n == 0 || direction.is_empty() {
            return Err(BmError::InvalidInput("invalid power tail".into()));
        }
        Ok(VectorField::PowerTail { exponent, direction, n })
    }

    /// `χ_{[lo, lo + side)}` times `v`, as a piecewise-constant field.
    pub fn indicator(cube: &crate::dyadic::DyadicIndex, direction: Vec<C64>) -> Result<Self> {
        let mut cells = BTreeMap::new();
        let d = direction.len();
        cells.insert(cube.k.clone(), direction);
        Ok(VectorField::PiecewiseConstant(Arc::new(PiecewiseConstant::new(-cube.j, d, cube.dim(), cells)?)))
    }

    pub fn truncate(self, radius: f64, side: BallSide) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(BmError::InvalidInput("truncation radius must be positive".into()));
        }
        Ok(VectorField::BallTruncation { inner: Arc::new(self), radius, side })
    }

    pub fn translate(self, shift: Vec<f64>) -> Result<Self> {
        if shift.len() != self.n() {
            return Err(BmError::InvalidInput("shift dimension differs from the field".into()));
        }
        if shift.iter().all(|v| *v == 0.0) {
            return Ok(self);
        }
        Ok(match self {
            VectorField::Translate { inner, shift: s } => {
                let total: Vec<f64> = s.iter().zip(&shift).map(|(a, b)| a + b).collect();
                VectorField::Translate { inner, shift: total }
            }
            other => VectorField::Translate { inner: Arc::new(other), shift },
        })
    }

    pub fn scaled(self, c: C64) -> Self {
        VectorField::Combination { terms: vec![(c, self)] }
    }

    pub fn minus(self, other: VectorField) -> Result<Self> {
        Self::combination(vec![(C64::new(1.0, 0.0), self), (C64::new(-1.0, 0.0), other)])
    }

    pub fn combination(terms: Vec<(C64, VectorField)>) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return Err(BmError::InvalidInput("empty combination".into()));
        };
        let (d, n) = (first.d(), first.n());
        if terms.iter().any(|(_, f)| f.d() != d || f.n() != n) {
            return Err(BmError::InvalidInput("combination of fields with different shapes".into()));
        }
        Ok(VectorField::Combination { terms })
    }

    /// `∇f` for a scalar field: analytic for Gaussian bumps, central
    /// differences with step `h` otherwise.
    pub fn gradient(&self, h: f64) -> Result<Self> {
        if self.d() != 1 {
            return Err(BmError::InvalidInput("gradient requires a scalar field".into()));
        }
        match self {
            VectorField::GaussianBump { center, scale, direction } => Ok(VectorField::GaussianGradient {
                center: center.clone(),
                scale: *scale,
                amplitude: direction[0],
            }),
            VectorField::Constant { n, .. } => Ok(VectorField::zero(*n, *n)),
            _ => self.fd_gradient(h),
        }
    }

    pub fn fd_gradient(&self, h: f64) -> Result<Self> {
        if self.d() != 1 {
            return Err(BmError::InvalidInput("gradient requires a scalar field".into()));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(BmError::InvalidInput("finite-difference step must be positive".into()));
        }
        Ok(VectorField::FdGradient { inner: Arc::new(self.clone()), step: h })
    }

    pub fn d(&self) -> usize {
        match self {
            VectorField::Constant { value, .. } => value.len(),
            VectorField::GaussianBump { direction, .. } | VectorField::PowerTail { direction, .. } => direction.len(),
            VectorField::GaussianGradient { center, .. } => center.len(),
            VectorField::BallTruncation { inner, .. } | VectorField::Translate { inner, .. } => inner.d(),
            VectorField::PiecewiseConstant(p) => p.d,
            VectorField::FdGradient { inner, .. } => inner.n(),
            VectorField::Combination { terms } => terms[0].1.d(),
            VectorField::Averaged(plan) => plan.d(),
            VectorField::CollectionAverage(c) => c.d,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            VectorField::Constant { n, .. } | VectorField::PowerTail { n, .. } => *n,
            VectorField::GaussianBump { center, .. } | VectorField::GaussianGradient { center, .. } => center.len(),
            VectorField::BallTruncation { inner, .. }
            | VectorField::Translate { inner, .. }
            | VectorField::FdGradient { inner, .. } => inner.n(),
            VectorField::PiecewiseConstant(p) => p.n,
            VectorField::Combination { terms } => terms[0].1.n(),
            VectorField::Averaged(plan) => plan.n(),
            VectorField::CollectionAverage(c) => c.n,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VectorField::Constant { value, .. } => value.iter().all(|z| *z == zero()),
            VectorField::PiecewiseConstant(p) => p.cells.values().all(|v| v.iter().all(|z| *z == zero())),
            VectorField::Combination { terms } => terms.iter().all(|(c, f)| *c == zero() || f.is_zero()),
            VectorField::BallTruncation { inner, .. } | VectorField::Translate { inner, .. } => inner.is_zero(),
            _ => false,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<C64>> {
        let mut out = vec![zero(); self.d()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [C64]) -> Result<()> {
        match self {
            VectorField::Constant { value, .. } => out.copy_from_slice(value),
            VectorField::GaussianBump { center, scale, direction } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                let g = (-r2 / (2.0 * scale * scale)).exp();
                for (o, v) in out.iter_mut().zip(direction) {
                    *o = v * g;
                }
            }
            VectorField::GaussianGradient { center, scale, amplitude } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                let s2 = scale * scale;
                let g = (-r2 / (2.0 * s2)).exp();
                for i in 0..center.len() {
                    out[i] = amplitude * (-(x[i] - center[i]) / s2 * g);
                }
            }
            VectorField::PowerTail { exponent, direction, .. } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 && *exponent < 0.0 {
                    return Err(BmError::SingularPoint { point: x.to_vec() });
                }
                let g = if *exponent == 0.0 { 1.0 } else { r.powf(*exponent) };
                for (o, v) in out.iter_mut().zip(direction) {
                    *o = v * g;
                }
            }
            VectorField::BallTruncation { inner, radius, side } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let inside = r2 <= radius * radius;
                if inside == (*side == BallSide::Inside) {
                    inner.eval_into(x, out)?;
                } else {
                    out.fill(zero());
                }
            }
            VectorField::PiecewiseConstant(p) => match p.value_at(x) {
                Some(v) => out.copy_from_slice(v),
                None => out.fill(zero()),
            },
            VectorField::Translate { inner, shift } => {
                let y: Vec<f64> = x.iter().zip(shift).map(|(a, b)| a - b).collect();
                inner.eval_into(&y, out)?;
            }
            VectorField::FdGradient { inner, step } => {
                let mut y = x.to_vec();
                let mut plus = [zero()];
                let mut minus = [zero()];
                for i in 0..x.len() {
                    y[i] = x[i] + step;
                    inner.eval_into(&y, &mut plus)?;
                    y[i] = x[i] - step;
                    inner.eval_into(&y, &mut minus)?;
                    y[i] = x[i];
                    out[i] = (plus[0] - minus[0]) / (2.0 * step);
                }
            }
            VectorField::Combination { terms } => {
                out.fill(zero());
                let mut tmp = vec![zero(); out.len()];
                for (c, f) in terms {
                    f.eval_into(x, &mut tmp)?;
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o += c * t;
                    }
                }
            }
            VectorField::Averaged(plan) => plan.eval_into(x, out)?,
            VectorField::CollectionAverage(c) => c.eval_into(x, out)?,
        }
        Ok(())
    }

    pub fn support(&self) -> Support {
        match self {
            VectorField::Constant { .. } if self.is_zero() => Support::Empty,
            VectorField::Constant { .. } | VectorField::PowerTail { .. } => Support::Everywhere,
            VectorField::GaussianBump { center, scale, .. } | VectorField::GaussianGradient { center, scale, .. } => {
                Support::Within(BoxBounds::around(center, GAUSSIAN_REACH * scale))
            }
            VectorField::BallTruncation { inner, radius, side } => match side {
                BallSide::Inside => inner.support().intersect(&Support::Within(BoxBounds::around(&vec![0.0; self.n()], *radius))),
                BallSide::Outside => inner.support(),
            },
            VectorField::PiecewiseConstant(p) => p.bounds().map_or(Support::Empty, Support::Within),
            VectorField::Translate { inner, shift } => inner.support().translate(shift),
            VectorField::FdGradient { inner, step } => inner.support().expand(*step),
            VectorField::Combination { terms } => terms
                .iter()
                .filter(|(c, _)| *c != zero())
                .fold(Support::Empty, |acc, (_, f)| acc.union(&f.support())),
            VectorField::Averaged(plan) => plan.support(),
            VectorField::CollectionAverage(c) => c.support(),
        }
    }

    pub fn features(&self) -> Vec<Feature> {
        match self {
            VectorField::Constant { .. } | VectorField::PowerTail { .. } => Vec::new(),
            VectorField::GaussianBump { center, scale, .. } | VectorField::GaussianGradient { center, scale, .. } => {
                vec![Feature { region: BoxBounds::around(center, GAUSSIAN_REACH * scale), scale: *scale }]
            }
            VectorField::BallTruncation { inner, radius, .. } => {
                let mut f = inner.features();
                f.push(Feature { region: BoxBounds::around(&vec![0.0; self.n()], *radius), scale: 0.5 * radius });
                f
            }
            VectorField::PiecewiseConstant(p) => p
                .bounds()
                .map(|b| vec![Feature { region: b, scale: p.cell_side() }])
                .unwrap_or_default(),
            VectorField::Translate { inner, shift } => inner
                .features()
                .into_iter()
                .map(|f| Feature { region: f.region.translate(shift), scale: f.scale })
                .collect(),
            VectorField::FdGradient { inner, step } => inner
                .features()
                .into_iter()
                .map(|f| Feature {
                    region: BoxBounds {
                        lo: f.region.lo.iter().map(|v| v - step).collect(),
                        hi: f.region.hi.iter().map(|v| v + step).collect(),
                    },
                    scale: f.scale,
                })
                .collect(),
            VectorField::Combination { terms } => terms.iter().flat_map(|(_, f)| f.features()).collect(),
            VectorField::Averaged(plan) => plan.features(),
            VectorField::CollectionAverage(c) => c.features(),
        }
    }

    pub fn singular_points(&self) -> Vec<Vec<f64>> {
        let mut pts = match self {
            VectorField::PowerTail { exponent, n, .. } if *exponent < 0.0 => vec![vec![0.0; *n]],
            VectorField::BallTruncation { inner, .. } | VectorField::FdGradient { inner, .. } => inner.singular_points(),
            VectorField::Translate { inner, shift } => inner
                .singular_points()
                .into_iter()
                .map(|p| p.iter().zip(shift).map(|(a, b)| a + b).collect())
                .collect(),
            VectorField::Combination { terms } => terms.iter().flat_map(|(_, f)| f.singular_points()).collect(),
            _ => Vec::new(),
        };
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        pts.dedup();
        pts
    }

    pub fn hints(&self) -> IntegrandHints {
        IntegrandHints { support: self.support(), features: self.features(), singular_points: self.singular_points() }
    }

    /// `|Q|^{-1} ∫_Q f`, exact for piecewise-constant inputs on aligned cubes
    /// and by quadrature otherwise.
    pub fn cube_mean(&self, cube: &Cube, q: &QuadratureSpec) -> Result<Vec<C64>> {
        if let Some(exact) = self.exact_mean(cube)? {
            return Ok(exact);
        }
        if !self.support().meets(cube) {
            return Ok(vec![zero(); self.d()]);
        }
        let integrand = ComponentIntegrand { f: self };
        let r = integrate_vector(&integrand, cube, q)?;
        let vol = cube.volume();
        Ok((0..self.d()).map(|i| C64::new(r.values[2 * i] / vol, r.values[2 * i + 1] / vol)).collect())
    }

    fn exact_mean(&self, cube: &Cube) -> Result<Option<Vec<C64>>> {
        Ok(match self {
            VectorField::Constant { value, .. } => Some(value.clone()),
            VectorField::PiecewiseConstant(p) => p.exact_mean(cube),
            VectorField::Averaged(plan) => plan.exact_mean(cube)?,
            VectorField::Combination { terms } => {
                let mut acc = vec![zero(); self.d()];
                for (c, f) in terms {
                    match f.exact_mean(cube)? {
                        Some(m) => {
                            for (a, v) in acc.iter_mut().zip(m) {
                                *a += c * v;
                            }
                        }
                        None => return Ok(None),
                    }
                }
                Some(acc)
            }
            _ => None,
        })
    }
}

/// Real and imaginary parts of every component, interleaved.
struct ComponentIntegrand<'a> {
    f: &'a VectorField,
}

impl Integrand for ComponentIntegrand<'_> {
    fn components(&self) -> usize {
        2 * self.f.d()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let v = self.f.eval(x)?;
        for (i, z) in v.iter().enumerate() {
            out[2 * i] = z.re;
            out[2 * i + 1] = z.im;
        }
        Ok(())
    }

    fn hints(&self) -> IntegrandHints {
        self.f.hints()
    }
}

/// Serializable description of a field; complex numbers are `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero { d: usize, n: usize },
    Constant { value: Vec<C64>, n: usize },
    Gaussian { center: Vec<f64>, scale: f64, direction: Vec<C64> },
    PowerTail { exponent: f64, direction: Vec<C64>, n: usize },
    Indicator { j: i32, k: Vec<i64>, direction: Vec<C64> },
    Truncated { inner: Box<FieldSpec>, radius: f64, side: BallSide },
    Translated { inner: Box<FieldSpec>, shift: Vec<f64> },
    Sum { terms: Vec<(C64, FieldSpec)> },
}

impl FieldSpec {
    pub fn build(&self) -> Result<VectorField> {
        Ok(match self {
            FieldSpec::Zero { d, n } => VectorField::zero(*d, *n),
            FieldSpec::Constant { value, n } => VectorField::constant(value.clone(), *n),
            FieldSpec::Gaussian { center, scale, direction } => VectorField::gaussian(center.clone(), *scale, direction.clone())?,
            FieldSpec::PowerTail { exponent, direction, n } => VectorField::power_tail(*exponent, direction.clone(), *n)?,
            FieldSpec::Indicator { j, k, direction } => VectorField::indicator(&DyadicIndex::new(*j, k.clone())?, direction.clone())?,
            FieldSpec::Truncated { inner, radius, side } => inner.build()?.truncate(*radius, *side)?,
            FieldSpec::Translated { inner, shift } => inner.build()?.translate(shift.clone())?,
            FieldSpec::Sum { terms } => {
                VectorField::combination(terms.iter().map(|(c, f)| Ok((*c, f.build()?))).collect::<Result<_>>()?)?
            }
        })
    }
}
