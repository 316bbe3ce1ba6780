//! Translation and averaging operators and their boundedness diagnostics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use serde::Serialize;

use crate::dyadic::{containing_cube, cubes_meeting_box, pow2, BoxBounds, Cube, DyadicIndex, LatticeWindow};
use crate::error::{BmError, Result};
use crate::field::{PiecewiseConstant, VectorField};
use crate::linalg::{euclid, C64};
use crate::quadrature::{Feature, QuadratureSpec, Support};
use crate::reducing::{ls_slope, DimensionEstimate};
use crate::spaces::{bm_norm, lp_norm, window_region, RExponent, SpaceParams};
use crate::weights::MatrixWeightSpec;

/// Cached cube means of a field on `𝒟_{-a}` (cubes of side `2^a`) over the
/// part of a window where the field may be nonzero.
#[derive(Debug, Clone)]
pub struct AveragingPlan {
    means: PiecewiseConstant,
    /// Half-open box tiled by the cached cubes.
    coverage: BoxBounds,
    source_support: Support,
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl AveragingPlan {
    /// Builds `E_{d,a} f` on `window.bounding_box() ∩ supp f`.
    pub fn new(f: &VectorField, a: i32, window: &LatticeWindow, q: &QuadratureSpec) -> Result<Self> {
        window.validate()?;
        if f.n() != window.n {
            return Err(BmError::InvalidInput("field and window dimensions differ".into()));
        }
        let region = match f.support() {
            Support::Everywhere => Some(window.bounding_box()),
            Support::Within(b) => window.bounding_box().intersect(&b),
            Support::Empty => None,
        };
        Self::over_region(f, a, region, q)
    }

    /// Means on every scale-`2^a` cube meeting `region`.
    pub fn over_region(f: &VectorField, a: i32, region: Option<BoxBounds>, q: &QuadratureSpec) -> Result<Self> {
        let n = f.n();
        let d = f.d();
        let side = pow2(a);
        let cubes = match &region {
            Some(r) => cubes_meeting_box(r, -a)?,
            None => Vec::new(),
        };
        let means: Vec<(Vec<i64>, Vec<C64>)> = cubes
            .par_iter()
            .map(|idx| Ok((idx.k.clone(), f.cube_mean(&idx.cube()?, q)?)))
            .collect::<Result<_>>()?;
        let coverage = match (cubes.first(), region) {
            (Some(_), Some(_)) => {
                let mut lo = vec![f64::INFINITY; n];
                let mut hi = vec![f64::NEG_INFINITY; n];
                for idx in &cubes {
                    for i in 0..n {
                        let c = idx.k[i] as f64 * side;
                        lo[i] = lo[i].min(c);
                        hi[i] = hi[i].max(c + side);
                    }
                }
                BoxBounds { lo, hi }
            }
            _ => BoxBounds { lo: vec![0.0; n], hi: vec![0.0; n] },
        };
        let cells: BTreeMap<Vec<i64>, Vec<C64>> = means.into_iter().collect();
        Ok(Self { means: PiecewiseConstant::new(a, d, n, cells)?, coverage, source_support: f.support() })
    }

    pub fn a(&self) -> i32 {
        self.means.a
    }

    pub fn d(&self) -> usize {
        self.means.d
    }

    pub fn n(&self) -> usize {
        self.means.n
    }

    pub fn cached_cells(&self) -> &BTreeMap<Vec<i64>, Vec<C64>> {
        &self.means.cells
    }

    pub fn coverage(&self) -> &BoxBounds {
        &self.coverage
    }

    fn covers(&self, x: &[f64]) -> bool {
        self.coverage.lo.iter().zip(&self.coverage.hi).zip(x).all(|((l, h), v)| *l <= *v && *v < *h)
    }

    /// Whether the source field vanishes outside the cached cubes.
    fn support_covered(&self) -> bool {
        match &self.source_support {
            Support::Empty => true,
            Support::Everywhere => false,
            Support::Within(b) => {
                b.lo.iter().zip(&self.coverage.lo).all(|(s, c)| s >= c) && b.hi.iter().zip(&self.coverage.hi).all(|(s, c)| s < c)
            }
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [C64]) -> Result<()> {
        if self.covers(x) {
            match self.means.value_at(x) {
                Some(v) => out.copy_from_slice(v),
                None => out.fill(zero()),
            }
            return Ok(());
        }
        if self.support_covered() || !self.source_support.contains_point(x) {
            out.fill(zero());
            return Ok(());
        }
        Err(BmError::OutsideWindow { point: x.to_vec() })
    }

    pub fn support(&self) -> Support {
        if self.support_covered() {
            if self.means.cells.is_empty() {
                Support::Empty
            } else {
                Support::Within(self.coverage.clone())
            }
        } else {
            Support::Everywhere
        }
    }

    pub fn features(&self) -> Vec<Feature> {
        if self.means.cells.is_empty() {
            return Vec::new();
        }
        vec![Feature { region: self.coverage.clone(), scale: self.means.cell_side() }]
    }

    pub fn exact_mean(&self, cube: &Cube) -> Result<Option<Vec<C64>>> {
        let far: Vec<f64> = cube.corner.iter().map(|c| c + cube.side).collect();
        let inside = self.coverage.lo.iter().zip(&cube.corner).all(|(l, c)| l <= c)
            && self.coverage.hi.iter().zip(&far).all(|(h, f)| f <= h);
        if inside || self.support_covered() {
            return Ok(self.means.exact_mean(cube));
        }
        if !self.source_support.meets(cube) {
            return Ok(Some(vec![zero(); self.d()]));
        }
        Err(BmError::OutsideWindow { point: cube.corner.clone() })
    }
}

/// `E_{d,a} f` over the window, as a field.
pub fn dyadic_average(f: &VectorField, a: i32, window: &LatticeWindow, q: &QuadratureSpec) -> Result<VectorField> {
    Ok(VectorField::Averaged(Arc::new(AveragingPlan::new(f, a, window, q)?)))
}

/// `τ_y f`.
pub fn translate(f: &VectorField, y: &[f64]) -> Result<VectorField> {
    f.clone().translate(y.to_vec())
}

/// Averages over an arbitrary disjoint cube collection, zero off its union.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionAverage {
    pub d: usize,
    pub n: usize,
    pub cells: Vec<(Cube, Vec<C64>)>,
}

impl CollectionAverage {
    pub fn new(f: &VectorField, cubes: &[Cube], q: &QuadratureSpec) -> Result<Self> {
        for (i, a) in cubes.iter().enumerate() {
            if a.dim() != f.n() {
                return Err(BmError::InvalidInput("cube dimension differs from the field".into()));
            }
            for b in &cubes[i + 1..] {
                if a.interiors_overlap(b) {
                    return Err(BmError::InvalidInput(format!(
                        "collection cubes overlap: {:?}+{} and {:?}+{}",
                        a.corner, a.side, b.corner, b.side
                    )));
                }
            }
        }
        let cells = cubes
            .par_iter()
            .map(|c| Ok((c.clone(), f.cube_mean(c, q)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { d: f.d(), n: f.n(), cells })
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [C64]) -> Result<()> {
        match self.cells.iter().find(|(c, _)| c.contains(x)) {
            Some((_, v)) => out.copy_from_slice(v),
            None => out.fill(zero()),
        }
        Ok(())
    }

    pub fn support(&self) -> Support {
        self.cells
            .iter()
            .fold(Support::Empty, |acc, (c, _)| acc.union(&Support::Within(c.bounds())))
    }

    pub fn features(&self) -> Vec<Feature> {
        self.cells.iter().map(|(c, _)| Feature { region: c.bounds(), scale: c.side }).collect()
    }
}

/// `A_𝒬 f` for a disjoint collection `𝒬`.
pub fn collection_average(f: &VectorField, cubes: &[Cube], q: &QuadratureSpec) -> Result<VectorField> {
    Ok(VectorField::CollectionAverage(Arc::new(CollectionAverage::new(f, cubes, q)?)))
}

/// All scale-`2^a` cubes of the window region, as plain cubes.
pub fn partition_cubes(region: &BoxBounds, a: i32) -> Result<Vec<Cube>> {
    cubes_meeting_box(region, -a)?.iter().map(DyadicIndex::cube).collect()
}

/// Relative spread `(max − min) / max` of the last three `C_obs` values below
/// which the averaging bound counts as stable.
pub const STABILITY_SPREAD: f64 = 0.2;

/// Ratio growth across the `a` sweep beyond which `A_p` membership is doubted.
pub const AP_GROWTH_FLAG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub family_id: String,
    pub a: i32,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvgLpReport {
    pub p: f64,
    pub rows: Vec<RatioRow>,
    pub max_ratio: f64,
    /// Per-`a` maxima increase monotonically by more than [`AP_GROWTH_FLAG`].
    pub growth_flag: bool,
    /// Members with zero norm.
    pub skipped: Vec<String>,
}

fn check_suite(suite: &[(String, VectorField)], spec: &MatrixWeightSpec, a_range: &[i32]) -> Result<()> {
    if a_range.is_empty() {
        return Err(BmError::InvalidInput("empty a-range".into()));
    }
    for (i, (id, f)) in suite.iter().enumerate() {
        if suite[..i].iter().any(|(other, _)| other == id) {
            return Err(BmError::InvalidInput(format!("duplicate family id {id:?}")));
        }
        if f.d() != spec.d() || f.n() != spec.n() {
            return Err(BmError::InvalidInput(format!("member {id:?} does not match the weight shape")));
        }
    }
    Ok(())
}

/// Per-`a` maxima in `a_range` order.
fn maxima_by_a(rows: &[RatioRow], a_range: &[i32]) -> Vec<f64> {
    a_range
        .iter()
        .map(|a| rows.iter().filter(|r| r.a == *a).map(|r| r.ratio).fold(0.0, f64::max))
        .collect()
}

/// `‖E_{d,a} f‖_{L^p(W)} / ‖f‖_{L^p(W)}` on the window's coarsest layer.
///
/// Every `a` must satisfy `2^a ≤ 2^{-j_min}` so that averaging cubes nest in
/// the region cubes.
pub fn avg_lp_bound_check(
    spec: &MatrixWeightSpec,
    p: f64,
    suite: &[(String, VectorField)],
    a_range: &[i32],
    window: &LatticeWindow,
    q: &QuadratureSpec,
) -> Result<AvgLpReport> {
    check_suite(suite, spec, a_range)?;
    if !(p >= 1.0) || !p.is_finite() {
        return Err(BmError::ParameterOutOfRange(format!("p = {p} must be in [1, inf)")));
    }
    if let Some(a) = a_range.iter().find(|a| **a > -window.j_min) {
        return Err(BmError::InvalidInput(format!("a = {a} exceeds the window's coarsest side 2^{}", -window.j_min)));
    }
    let region = window_region(window)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (id, f) in suite {
        let base = lp_norm(f, spec, p, &region, q)?;
        if base == 0.0 {
            skipped.push(id.clone());
            continue;
        }
        let ratios = a_range
            .par_iter()
            .map(|&a| Ok(lp_norm(&dyadic_average(f, a, window, q)?, spec, p, &region, q)? / base))
            .collect::<Result<Vec<f64>>>()?;
        rows.extend(a_range.iter().zip(ratios).map(|(&a, ratio)| RatioRow { family_id: id.clone(), a, ratio }));
    }
    let by_a = maxima_by_a(&rows, a_range);
    let monotone = by_a.windows(2).all(|w| w[1] >= w[0]);
    let growth_flag = monotone && by_a.first().is_some_and(|&first| first > 0.0 && by_a[by_a.len() - 1] > AP_GROWTH_FLAG * first);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(AvgLpReport { p, rows, max_ratio, growth_flag, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisStatus {
    Satisfied,
    /// `r = ∞` with the condition exactly at zero: reported, never asserted.
    Equality,
    Violated,
}

/// The exponent bookkeeping behind uniform boundedness of `E_{d,a}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentLedger {
    pub n: usize,
    pub p: f64,
    pub t: f64,
    pub r: RExponent,
    pub d_tilde: f64,
    pub dual_d_tilde: Option<f64>,
    pub beta_tilde: f64,
    pub condition_value: f64,
    /// `d̃ ∈ [0, n)`.
    pub dimension_in_range: bool,
    pub status: HypothesisStatus,
}

impl ExponentLedger {
    /// Builds the ledger from raw fields; a pure function of its inputs.
    pub fn from_fields(n: usize, params: &SpaceParams, d_tilde: f64, dual_d_tilde: Option<f64>) -> Result<Self> {
        params.regime()?;
        let (p, t) = (params.p, params.t);
        let nf = n as f64;
        let beta_tilde = if p == 1.0 {
            nf
        } else {
            let dual = dual_d_tilde.ok_or_else(|| BmError::InvalidInput("p > 1 needs the dual dimension".into()))?;
            let p_prime = p / (p - 1.0);
            nf + dual * p / p_prime
        };
        let e = 1.0 / t - 1.0 / p;
        let condition_value = match params.r {
            RExponent::Finite(r) => -nf * r / p + d_tilde * r / p + nf - beta_tilde * r * e,
            RExponent::Infinity => d_tilde / p - nf / p - beta_tilde * e,
        };
        let dimension_in_range = (0.0..nf).contains(&d_tilde);
        let status = match params.r {
            _ if !dimension_in_range => HypothesisStatus::Violated,
            RExponent::Finite(_) if condition_value < 0.0 => HypothesisStatus::Satisfied,
            RExponent::Infinity if condition_value < 0.0 => HypothesisStatus::Satisfied,
            RExponent::Infinity if condition_value == 0.0 => HypothesisStatus::Equality,
            _ => HypothesisStatus::Violated,
        };
        Ok(Self { n, p, t, r: params.r, d_tilde, dual_d_tilde, beta_tilde, condition_value, dimension_in_range, status })
    }
}

/// `β̃` and the boundedness condition from estimated dimensions. Negative
/// regression noise in `d̃` is clamped to 0.
pub fn exponent_ledger(n: usize, params: &SpaceParams, dims: &DimensionEstimate) -> Result<ExponentLedger> {
    if dims.p != params.p {
        return Err(BmError::InvalidInput(format!("dimensions estimated at p = {}, ledger needs p = {}", dims.p, params.p)));
    }
    let clamp = |v: f64| if v < 0.0 && v > -DIMENSION_NOISE { 0.0 } else { v };
    ExponentLedger::from_fields(n, params, clamp(dims.d_tilde), dims.dual_d_tilde.map(clamp))
}

/// Largest negative `d̃` treated as regression noise around 0.
pub const DIMENSION_NOISE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvgBmReport {
    pub params: SpaceParams,
    pub ledger: ExponentLedger,
    /// `hypothesis-violated` when the ledger condition fails.
    pub label: &'static str,
    pub rows: Vec<RatioRow>,
    /// `(a, max ratio at a)` in sweep order.
    pub c_obs_by_a: Vec<(i32, f64)>,
    pub c_obs: f64,
    /// Relative spread of the last three `C_obs` values.
    pub tail_spread: f64,
    pub stable: bool,
    pub skipped: Vec<String>,
    /// Every norm passed the window truncation test.
    pub converged: bool,
}

/// `‖E_{d,a} f‖_{M_p^{t,r}(W)} / ‖f‖_{M_p^{t,r}(W)}` over the suite, with
/// `a_range` ordered toward `−∞`.
pub fn avg_bm_bound_check(
    spec: &MatrixWeightSpec,
    params: &SpaceParams,
    suite: &[(String, VectorField)],
    a_range: &[i32],
    window: &LatticeWindow,
    ledger: &ExponentLedger,
    q: &QuadratureSpec,
) -> Result<AvgBmReport> {
    check_suite(suite, spec, a_range)?;
    if a_range.len() < 3 {
        return Err(BmError::InvalidInput("stability needs at least three a values".into()));
    }
    if a_range.windows(2).any(|w| w[1] >= w[0]) {
        return Err(BmError::InvalidInput("a-range must decrease strictly".into()));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut converged = true;
    for (id, f) in suite {
        let base = bm_norm(f, spec, params, window, q)?;
        if base.value == 0.0 {
            skipped.push(id.clone());
            continue;
        }
        converged &= base.converged;
        let reps = a_range
            .par_iter()
            .map(|&a| bm_norm(&dyadic_average(f, a, window, q)?, spec, params, window, q))
            .collect::<Result<Vec<_>>>()?;
        for (&a, rep) in a_range.iter().zip(reps) {
            converged &= rep.converged;
            rows.push(RatioRow { family_id: id.clone(), a, ratio: rep.value / base.value });
        }
    }
    let by_a = maxima_by_a(&rows, a_range);
    let last = &by_a[by_a.len() - 3..];
    let hi = last.iter().copied().fold(0.0, f64::max);
    let lo = last.iter().copied().fold(f64::INFINITY, f64::min);
    let tail_spread = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
    Ok(AvgBmReport {
        params: *params,
        ledger: *ledger,
        label: match ledger.status {
            HypothesisStatus::Satisfied => "hypothesis-satisfied",
            HypothesisStatus::Equality => "hypothesis-at-equality",
            HypothesisStatus::Violated => "hypothesis-violated",
        },
        c_obs: by_a.iter().copied().fold(0.0, f64::max),
        c_obs_by_a: a_range.iter().copied().zip(by_a).collect(),
        rows,
        tail_spread,
        stable: tail_spread < STABILITY_SPREAD,
        skipped,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffCurve {
    pub point: Vec<f64>,
    /// `|E_Q f(x) − f(x)|` for the scale-`j` cube containing `x`, `j = 0..=j_max`.
    pub errors: Vec<f64>,
    /// `2^{slope}` of a least-squares fit of `log_2 e_j`; `None` if some `e_j = 0`.
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffReport {
    pub curves: Vec<DiffCurve>,
    /// Sample points dropped for sitting on a singular point.
    pub excluded: Vec<Vec<f64>>,
    pub max_final_error: f64,
}

/// Pointwise convergence of cube means at `points`, scales `0..=j_max`.
pub fn lebesgue_diff_check(
    spec: &MatrixWeightSpec,
    params: &SpaceParams,
    f: &VectorField,
    points: &[Vec<f64>],
    j_max: i32,
    q: &QuadratureSpec,
) -> Result<DiffReport> {
    params.regime()?;
    if f.d() != spec.d() || f.n() != spec.n() {
        return Err(BmError::InvalidInput("field does not match the weight shape".into()));
    }
    if j_max < 1 {
        return Err(BmError::InvalidInput("need j_max >= 1".into()));
    }
    let mut singular = spec.singular_points();
    singular.extend(f.singular_points());
    let (kept, excluded): (Vec<&Vec<f64>>, Vec<&Vec<f64>>) = points.iter().partition(|x| !singular.contains(x));
    let curves = kept
        .par_iter()
        .map(|x| {
            if x.len() != f.n() {
                return Err(BmError::InvalidInput("sample point dimension differs from the field".into()));
            }
            let fx = f.eval(x)?;
            let errors = (0..=j_max)
                .map(|j| {
                    let mean = f.cube_mean(&containing_cube(x, j)?.cube()?, q)?;
                    let diff: Vec<C64> = mean.iter().zip(&fx).map(|(m, v)| m - v).collect();
                    Ok(euclid(&diff))
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_ratio = errors
                .iter()
                .all(|e| *e > 0.0)
                .then(|| 2f64.powf(ls_slope(&errors.iter().map(|e| e.log2()).collect::<Vec<_>>()).0));
            Ok(DiffCurve { point: (*x).clone(), errors, mean_ratio })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_final_error = curves.iter().map(|c| c.errors[c.errors.len() - 1]).fold(0.0, f64::max);
    Ok(DiffReport { curves, excluded: excluded.into_iter().cloned().collect(), max_final_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn c(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn unit_indicator() -> VectorField {
        VectorField::indicator(&DyadicIndex::new(0, vec![0]).unwrap(), vec![c(1.0)]).unwrap()
    }

    /// `f(x) = x` on `[0, ∞)`.
    fn ramp() -> VectorField {
        VectorField::power_tail(1.0, vec![c(1.0)], 1).unwrap()
    }

    fn piecewise(a: i32, cells: &[(i64, f64)]) -> VectorField {
        let cells = cells.iter().map(|(k, v)| (vec![*k], vec![c(*v)])).collect();
        VectorField::PiecewiseConstant(Arc::new(PiecewiseConstant::new(a, 1, 1, cells).unwrap()))
    }

    fn plan(f: &VectorField) -> &AveragingPlan {
        match f {
            VectorField::Averaged(p) => p,
            _ => unreachable!(),
        }
    }

    fn gaussian_suite() -> Vec<(String, VectorField)> {
        vec![
            ("narrow".into(), VectorField::gaussian(vec![0.1], 0.2, vec![c(1.0)]).unwrap()),
            ("wide".into(), VectorField::gaussian(vec![-0.3], 0.5, vec![c(2.0)]).unwrap()),
            ("step".into(), unit_indicator()),
        ]
    }

    #[test]
    fn translate_examples() {
        let f = unit_indicator();
        assert!(matches!(translate(&f, &[0.0]).unwrap(), VectorField::PiecewiseConstant(_)));
        let g = translate(&f, &[1.0]).unwrap();
        for (x, v) in [(0.5, 0.0), (1.0, 1.0), (1.99, 1.0), (2.0, 0.0)] {
            assert_eq!(g.eval(&[x]).unwrap()[0], c(v));
        }
        let h = VectorField::gaussian(vec![0.2], 0.3, vec![c(1.0)]).unwrap();
        let back = translate(&translate(&h, &[0.5]).unwrap(), &[-0.5]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = rng.gen_range(-2.0..2.0);
            assert_eq!(back.eval(&[x]).unwrap(), h.eval(&[x]).unwrap());
        }
    }

    #[test]
    fn dyadic_average_examples() {
        let w = LatticeWindow::new(0, 3, 2.0, 1).unwrap();
        let cst = dyadic_average(&VectorField::constant(vec![c(3.0)], 1), 0, &w, &q()).unwrap();
        for x in [-2.5, 0.1, 2.9] {
            assert_eq!(cst.eval(&[x]).unwrap()[0], c(3.0));
        }
        let r = dyadic_average(&ramp(), 0, &w, &q()).unwrap();
        assert!((r.eval(&[0.7]).unwrap()[0] - c(0.5)).norm() < 1e-14);
        assert!((r.eval(&[1.2]).unwrap()[0] - c(1.5)).norm() < 1e-13);
        let pc = piecewise(-1, &[(0, 2.0), (1, -1.0), (5, 4.0)]);
        let e = dyadic_average(&pc, -1, &w, &q()).unwrap();
        for x in [0.1, 0.6, 2.7, 1.4] {
            assert_eq!(e.eval(&[x]).unwrap(), pc.eval(&[x]).unwrap());
        }
    }

    #[test]
    fn idempotent_and_linear_on_caches() {
        let w = LatticeWindow::new(-1, 4, 1.5, 1).unwrap();
        let f = VectorField::gaussian(vec![0.2], 0.4, vec![c(1.0)]).unwrap();
        let g = piecewise(-2, &[(-3, 1.0), (2, -2.0)]);
        for a in [0, -1, -2] {
            let ef = dyadic_average(&f, a, &w, &q()).unwrap();
            let eef = dyadic_average(&ef, a, &w, &q()).unwrap();
            assert_eq!(plan(&eef).cached_cells(), plan(&ef).cached_cells());

            let (alpha, beta) = (C64::new(2.0, -1.0), c(0.5));
            let eg = dyadic_average(&g, a, &w, &q()).unwrap();
            let pc = piecewise(a, &[(0, 1.0), (1, 3.0)]);
            let ep = dyadic_average(&pc, a, &w, &q()).unwrap();
            let combo = VectorField::combination(vec![(alpha, pc.clone()), (beta, g.clone())]).unwrap();
            let e_combo = dyadic_average(&combo, a, &w, &q()).unwrap();
            for (k, v) in plan(&e_combo).cached_cells() {
                let lhs = v[0];
                let at = |e: &VectorField| plan(e).cached_cells().get(k).map_or(c(0.0), |v| v[0]);
                assert_eq!(lhs, alpha * at(&ep) + beta * at(&eg), "cell {k:?}");
            }

            // smooth members agree to quadrature tolerance
            let sum = VectorField::combination(vec![(alpha, f.clone()), (beta, g.clone())]).unwrap();
            let e_sum = dyadic_average(&sum, a, &w, &q()).unwrap();
            for (k, v) in plan(&e_sum).cached_cells() {
                let want = alpha * plan(&ef).cached_cells()[k][0] + beta * plan(&eg).cached_cells().get(k).map_or(c(0.0), |v| v[0]);
                assert!((v[0] - want).norm() < 1e-9, "cell {k:?}: {} vs {want}", v[0]);
            }
        }
    }

    #[test]
    fn collection_average_examples() {
        let unit = Cube::new(vec![0.0], 1.0);
        let f = ramp();
        let single = collection_average(&f, std::slice::from_ref(&unit), &q()).unwrap();
        assert!((single.eval(&[0.3]).unwrap()[0] - c(0.5)).norm() < 1e-14);
        assert_eq!(single.eval(&[1.3]).unwrap()[0], c(0.0));

        let two = collection_average(&unit_indicator(), &[unit.clone(), Cube::new(vec![2.0], 1.0)], &q()).unwrap();
        assert_eq!(two.eval(&[0.5]).unwrap()[0], c(1.0));
        assert_eq!(two.eval(&[2.5]).unwrap()[0], c(0.0));

        assert!(collection_average(&f, &[unit.clone(), Cube::new(vec![0.5], 1.0)], &q()).is_err());

        let w = LatticeWindow::new(0, 2, 1.0, 1).unwrap();
        let g = VectorField::gaussian(vec![0.1], 0.3, vec![c(1.0)]).unwrap();
        let cubes = partition_cubes(&w.bounding_box(), -1).unwrap();
        let ca = collection_average(&g, &cubes, &q()).unwrap();
        let da = dyadic_average(&g, -1, &w, &q()).unwrap();
        for i in 0..80 {
            let x = -2.0 + 0.05 * f64::from(i);
            assert_eq!(ca.eval(&[x]).unwrap(), da.eval(&[x]).unwrap(), "x = {x}");
        }
    }

    #[test]
    fn jensen_at_identity() {
        let w = LatticeWindow::new(-1, 4, 1.5, 1).unwrap();
        let id = MatrixWeightSpec::identity(1, 1);
        let mut suite = gaussian_suite();
        suite.push(("zero".into(), VectorField::zero(1, 1)));
        for p in [1.0, 2.0, 3.5] {
            let rep = avg_lp_bound_check(&id, p, &suite, &[1, 0, -1, -2, -3], &w, &q()).unwrap();
            assert!(rep.max_ratio <= 1.0 + 1e-9, "p = {p}: {}", rep.max_ratio);
            assert_eq!(rep.skipped, vec!["zero".to_string()]);
            assert!(!rep.growth_flag);
        }
        let too_coarse = avg_lp_bound_check(&id, 2.0, &suite, &[2], &w, &q());
        assert!(too_coarse.is_err());
    }

    #[test]
    fn lp_fixed_points() {
        let w = LatticeWindow::new(0, 3, 2.0, 1).unwrap();
        let spec = MatrixWeightSpec::scalar_power(0.5, 1, 1).unwrap();
        let suite = vec![
            ("const".to_string(), VectorField::constant(vec![c(2.0)], 1)),
            ("cells".to_string(), piecewise(-1, &[(-3, 1.0), (0, 2.0), (2, -1.0)])),
        ];
        let rep = avg_lp_bound_check(&spec, 2.0, &suite, &[-1], &w, &q()).unwrap();
        // the fields agree exactly; the singular weight leaves quadrature slack
        for row in &rep.rows {
            assert!((row.ratio - 1.0).abs() < 1e-7, "{row:?}");
        }
    }

    #[test]
    fn ledger_examples() {
        let p1 = SpaceParams::finite(1.0, 2.0, 4.0).unwrap();
        let l = ExponentLedger::from_fields(2, &p1, 0.0, None).unwrap();
        assert_eq!(l.beta_tilde, 2.0);
        let p2 = SpaceParams::finite(2.0, 3.0, 4.0).unwrap();
        assert_eq!(ExponentLedger::from_fields(1, &p2, 0.0, Some(0.5)).unwrap().beta_tilde, 1.5);
        assert!(ExponentLedger::from_fields(1, &p2, 0.0, None).is_err());
        for (n, p, t, r) in [(1, 1.0, 2.0, 4.0), (2, 2.0, 3.0, 5.0), (1, 1.5, 2.5, 3.0)] {
            let params = SpaceParams::finite(p, t, r).unwrap();
            let l = ExponentLedger::from_fields(n, &params, 0.0, Some(0.0)).unwrap();
            let nf = n as f64;
            assert!((l.condition_value - nf * (1.0 - r / t)).abs() < 1e-12);
            assert_eq!(l.status, HypothesisStatus::Satisfied);
        }
        let inf = ExponentLedger::from_fields(1, &SpaceParams::infinite(1.0, 2.0).unwrap(), 0.0, None).unwrap();
        assert!((inf.condition_value + 0.5).abs() < 1e-15);
        // the condition vanishes at d̃ = n, which is outside [0, n)
        let edge = ExponentLedger::from_fields(1, &SpaceParams::infinite(2.0, 2.0).unwrap(), 1.0, Some(0.0)).unwrap();
        assert_eq!(edge.status, HypothesisStatus::Violated);
        assert!(!edge.dimension_in_range);
        let eq = ExponentLedger::from_fields(2, &SpaceParams::infinite(1.0, 1.0).unwrap(), 0.0, None).unwrap();
        assert_eq!(eq.condition_value, -2.0);
    }

    #[test]
    fn bm_ratios_stable_at_identity() {
        let w = LatticeWindow::new(-3, 9, 2.0, 1).unwrap();
        let id = MatrixWeightSpec::identity(1, 1);
        let params = SpaceParams::finite(1.0, 2.0, 4.0).unwrap();
        let ledger = ExponentLedger::from_fields(1, &params, 0.0, None).unwrap();
        let a_range = [0, -1, -2, -3, -4, -5];
        let rep = avg_bm_bound_check(&id, &params, &gaussian_suite(), &a_range, &w, &ledger, &q()).unwrap();
        assert_eq!(rep.label, "hypothesis-satisfied");
        assert!(rep.stable, "{:?}", rep.c_obs_by_a);
        assert!(rep.rows.iter().all(|r| r.ratio <= rep.c_obs));
        let step = rep.rows.iter().find(|r| r.family_id == "step" && r.a <= 0).unwrap();
        assert!((step.ratio - 1.0).abs() < 1e-12, "{step:?}");

        let lt = SpaceParams::infinite(2.0, 2.0).unwrap();
        let lt_ledger = ExponentLedger::from_fields(1, &lt, 0.0, Some(0.0)).unwrap();
        let rep = avg_bm_bound_check(&id, &lt, &gaussian_suite(), &[0, -1, -2], &w, &lt_ledger, &q()).unwrap();
        assert!(rep.c_obs <= 1.0 + 1e-9, "{}", rep.c_obs);
    }

    #[test]
    fn lebesgue_examples() {
        let id = MatrixWeightSpec::identity(1, 1);
        let params = SpaceParams::finite(1.0, 2.0, 4.0).unwrap();
        let cst = lebesgue_diff_check(&id, &params, &VectorField::constant(vec![c(1.5)], 1), &[vec![0.3]], 10, &q()).unwrap();
        assert!(cst.curves[0].errors.iter().all(|e| *e == 0.0));

        let rep = lebesgue_diff_check(&id, &params, &ramp(), &[vec![0.3]], 16, &q()).unwrap();
        for (j, e) in rep.curves[0].errors.iter().enumerate() {
            let side = pow2(-(j as i32));
            let mid = ((0.3 / side).floor() + 0.5) * side;
            assert!((e - (mid - 0.3).abs()).abs() < 1e-13, "j = {j}");
        }
        let ratio = rep.curves[0].mean_ratio.unwrap();
        assert!((ratio - 0.5).abs() < 0.2, "{ratio}");

        let g = VectorField::gaussian(vec![0.1], 0.5, vec![c(1.0)]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let rep = lebesgue_diff_check(&id, &params, &g, &pts, 12, &q()).unwrap();
        assert!(rep.max_final_error < 1e-3);

        let sing = MatrixWeightSpec::scalar_power(0.5, 1, 1).unwrap();
        let rep = lebesgue_diff_check(&sing, &params, &g, &[vec![0.0], vec![0.4]], 4, &q()).unwrap();
        assert_eq!(rep.excluded, vec![vec![0.0]]);
        assert_eq!(rep.curves.len(), 1);
    }

    proptest! {
        #[test]
        fn ledger_roundtrip_is_bit_exact(p in 1.0f64..4.0, dt in 0.0f64..2.0, dd in 0.0f64..2.0, gap in 0.1f64..3.0, gap2 in 0.1f64..3.0, finite in any::<bool>()) {
            let params = if finite {
                SpaceParams::finite(p, p + gap, p + gap + gap2).unwrap()
            } else {
                SpaceParams::infinite(p, p + gap).unwrap()
            };
            let l = ExponentLedger::from_fields(2, &params, dt, Some(dd)).unwrap();
            let v: serde_json::Value = serde_json::to_value(l).unwrap();
            let params2: SpaceParams = serde_json::from_value(serde_json::json!({"p": v["p"], "t": v["t"], "r": v["r"]})).unwrap();
            let l2 = ExponentLedger::from_fields(2, &params2, v["d_tilde"].as_f64().unwrap(), v["dual_d_tilde"].as_f64()).unwrap();
            prop_assert_eq!(l2.condition_value.to_bits(), l.condition_value.to_bits());
            prop_assert_eq!(l2.beta_tilde.to_bits(), l.beta_tilde.to_bits());
        }
    }
}
