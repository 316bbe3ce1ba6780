//! Windowed Bourgain-Morrey norms with matrix or scalar weights, weighted
//! Lebesgue norms, the Sobolev variant and embedding checks.
//!
//! A norm is an `ℓ^r` aggregate of one term per dyadic cube. Only the cubes
//! of a [`LatticeWindow`] are visited; the report carries per-scale partial
//! sums so that truncation can be judged from the edge layers.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dyadic::{cubes_in_window, window_cubes_meeting, Cube, DyadicIndex, LatticeWindow};
use crate::error::{BmError, Result};
use crate::field::VectorField;
use crate::linalg;
use crate::quadrature::{
    compensated_sum, integrate_vector, local_masses, p_integral, Integrand, IntegrandHints, QuadratureSpec, Support,
};
use crate::reducing::{reducing_operator, ReducingMethod};
use crate::weights::MatrixWeightSpec;

/// `r ∈ (0, ∞]`; serialized as a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RExponent {
    Finite(f64),
    Infinity,
}

impl fmt::Display for RExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RExponent::Finite(r) => write!(f, "{r}"),
            RExponent::Infinity => f.write_str("inf"),
        }
    }
}

impl Serialize for RExponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RExponent::Finite(r) => s.serialize_f64(*r),
            RExponent::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for RExponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(RExponent::Finite(r)),
            Raw::Str(s) if matches!(s.as_str(), "inf" | "infinity" | "∞") => Ok(RExponent::Infinity),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("r must be a number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `1 ≤ p < t < r < ∞`
    FiniteR,
    /// `1 ≤ p ≤ t`, `r = ∞`
    InfiniteR,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SpaceParams {
    pub p: f64,
    pub t: f64,
    pub r: RExponent,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    p: f64,
    t: f64,
    r: RExponent,
}

impl TryFrom<RawParams> for SpaceParams {
    type Error = BmError;
    fn try_from(raw: RawParams) -> Result<Self> {
        SpaceParams::new(raw.p, raw.t, raw.r)
    }
}

impl From<SpaceParams> for RawParams {
    fn from(s: SpaceParams) -> Self {
        RawParams { p: s.p, t: s.t, r: s.r }
    }
}

impl SpaceParams {
    pub fn new(p: f64, t: f64, r: RExponent) -> Result<Self> {
        let s = Self { p, t, r };
        s.regime()?;
        Ok(s)
    }

    pub fn finite(p: f64, t: f64, r: f64) -> Result<Self> {
        Self::new(p, t, RExponent::Finite(r))
    }

    pub fn infinite(p: f64, t: f64) -> Result<Self> {
        Self::new(p, t, RExponent::Infinity)
    }

    pub fn regime(&self) -> Result<Regime> {
        let bad = |why: &str| Err(BmError::ParameterOutOfRange(format!("(p, t, r) = ({}, {}, {}): {why}", self.p, self.t, self.r)));
        if !self.p.is_finite() || !self.t.is_finite() {
            return bad("p and t must be finite");
        }
        if self.p < 1.0 {
            return bad("p >= 1 required");
        }
        match self.r {
            RExponent::Finite(r) if r.is_finite() && self.p < self.t && self.t < r => Ok(Regime::FiniteR),
            RExponent::Finite(_) => bad("finite r needs p < t < r"),
            RExponent::Infinity if self.p <= self.t => Ok(Regime::InfiniteR),
            RExponent::Infinity => bad("r = inf needs p <= t"),
        }
    }

    /// `1/t − 1/p`.
    pub fn mass_exponent(&self) -> f64 {
        1.0 / self.t - 1.0 / self.p
    }
}

/// Which cube mass multiplies the local `L^p` piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormVariant {
    /// `W(Q) = ∫_Q ‖W‖`.
    #[default]
    WeightMass,
    /// `‖A_Q‖^p |Q|` with a fitted reducing operator.
    ReducingOperator { method: ReducingMethod },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormOptions {
    pub variant: NormVariant,
    /// Two-layer truncation test threshold, relative to the total.
    pub layer_tol: f64,
    pub collect_terms: bool,
    pub seed: u64,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self { variant: NormVariant::WeightMass, layer_tol: 1e-4, collect_terms: false, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubeTerm {
    pub j: i32,
    pub k: Vec<i64>,
    pub term: f64,
}

impl CubeTerm {
    /// FNV-1a of the lattice coordinates, for compact CSV rows.
    pub fn k_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.k {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub value: f64,
    /// Sum of `term^r` per scale, or the sup for `r = ∞`.
    pub per_scale: BTreeMap<i32, f64>,
    /// Extrapolated increase of `value` from the scales beyond the window.
    pub tail_estimate: f64,
    pub window: LatticeWindow,
    pub params: SpaceParams,
    pub converged: bool,
    pub quadrature_converged: bool,
    pub cubes_evaluated: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<CubeTerm>,
}

/// One cube's `(term, quadrature converged)`, or `None` when the term is
/// known to vanish.
type TermFn<'a> = dyn Fn(&DyadicIndex, &Cube) -> Result<Option<(f64, bool)>> + Sync + 'a;

fn aggregate(window: &LatticeWindow, params: &SpaceParams, support: &Support, opts: &NormOptions, term: &TermFn<'_>) -> Result<NormReport> {
    window.validate()?;
    let regime = params.regime()?;
    if !(opts.layer_tol > 0.0) {
        return Err(BmError::InvalidInput("layer_tol must be positive".into()));
    }
    let mut per_scale = BTreeMap::new();
    let mut terms = Vec::new();
    let mut quadrature_converged = true;
    let mut cubes_evaluated = 0;
    for j in window.scales() {
        let cubes = match support {
            Support::Empty => Vec::new(),
            Support::Everywhere => cubes_in_window(window, j)?,
            Support::Within(b) => window_cubes_meeting(window, j, b)?,
        };
        let vals = cubes
            .par_iter()
            .map(|idx| term(idx, &idx.cube()?))
            .collect::<Result<Vec<_>>>()?;
        let mut layer = Vec::with_capacity(vals.len());
        for (idx, v) in cubes.iter().zip(vals) {
            let Some((t, conv)) = v else { continue };
            cubes_evaluated += 1;
            quadrature_converged &= conv;
            if !t.is_finite() {
                return Err(BmError::NonFinite("cube term"));
            }
            if opts.collect_terms && t != 0.0 {
                terms.push(CubeTerm { j, k: idx.k.clone(), term: t });
            }
            layer.push(t);
        }
        let s = match params.r {
            RExponent::Finite(r) => compensated_sum(layer.iter().map(|t| t.powf(r))),
            RExponent::Infinity => layer.iter().copied().fold(0.0, f64::max),
        };
        per_scale.insert(j, s);
    }
    let layers: Vec<f64> = per_scale.values().copied().collect();
    let (value, converged, tail_estimate) = match (regime, params.r) {
        (Regime::FiniteR, RExponent::Finite(r)) => {
            let total = compensated_sum(layers.iter().copied());
            let value = total.powf(1.0 / r);
            let converged = layers.len() >= 4
                && [0, 1, layers.len() - 2, layers.len() - 1].iter().all(|&i| layers[i] <= opts.layer_tol * total)
                || total == 0.0;
            let tail = end_tail_sum(&layers);
            let tail_estimate = if tail.is_finite() { (total + tail).powf(1.0 / r) - value } else { f64::INFINITY };
            (value, converged, tail_estimate)
        }
        _ => {
            let value = layers.iter().copied().fold(0.0, f64::max);
            let (ok, tail) = end_tail_sup(&layers, value, opts.layer_tol);
            (value, ok, tail)
        }
    };
    Ok(NormReport {
        value,
        per_scale,
        tail_estimate,
        window: window.clone(),
        params: *params,
        converged,
        quadrature_converged,
        cubes_evaluated,
        terms,
    })
}

/// Outward ratio at each end of the layer list: `(edge, ratio edge/next)`.
fn edges(layers: &[f64]) -> [(f64, f64); 2] {
    let m = layers.len();
    let ratio = |edge: f64, next: f64| if edge == 0.0 { 0.0 } else if next > 0.0 { edge / next } else { f64::INFINITY };
    if m < 2 {
        let e = layers.first().copied().unwrap_or(0.0);
        let r = if e == 0.0 { 0.0 } else { f64::INFINITY };
        return [(e, r), (e, r)];
    }
    [(layers[0], ratio(layers[0], layers[1])), (layers[m - 1], ratio(layers[m - 1], layers[m - 2]))]
}

/// Geometric extrapolation of the omitted layer sums at both ends.
fn end_tail_sum(layers: &[f64]) -> f64 {
    edges(layers)
        .iter()
        .map(|&(e, rho)| if e == 0.0 { 0.0 } else if rho < 1.0 { e * rho / (1.0 - rho) } else { f64::INFINITY })
        .sum()
}

/// `(converged, tail)` for a sup aggregate: the edges must decay outward and
/// sit below the sup.
fn end_tail_sup(layers: &[f64], value: f64, tol: f64) -> (bool, f64) {
    if value == 0.0 {
        return (true, 0.0);
    }
    let mut ok = layers.len() >= 4;
    let mut tail = 0.0f64;
    for (e, rho) in edges(layers) {
        if rho > 1.0 {
            tail = f64::INFINITY;
            ok = false;
        } else {
            tail = tail.max((e * rho - value).max(0.0));
            ok &= rho < 1.0 && e <= (1.0 - tol) * value;
        }
    }
    (ok, tail)
}

fn check_shapes(f: &VectorField, spec: &MatrixWeightSpec, window: &LatticeWindow) -> Result<()> {
    if f.d() != spec.d() || f.n() != spec.n() || window.n != spec.n() {
        return Err(BmError::InvalidInput(format!(
            "shape mismatch: field C^{} on R^{}, weight {}x{} on R^{}, window R^{}",
            f.d(),
            f.n(),
            spec.d(),
            spec.d(),
            spec.n(),
            window.n
        )));
    }
    Ok(())
}

/// `‖f‖_{M_p^{t,r}(W)}` over the window.
pub fn bm_norm(f: &VectorField, spec: &MatrixWeightSpec, params: &SpaceParams, window: &LatticeWindow, q: &QuadratureSpec) -> Result<NormReport> {
    bm_norm_with(f, spec, params, window, q, &NormOptions::default())
}

pub fn bm_norm_with(
    f: &VectorField,
    spec: &MatrixWeightSpec,
    params: &SpaceParams,
    window: &LatticeWindow,
    q: &QuadratureSpec,
    opts: &NormOptions,
) -> Result<NormReport> {
    check_shapes(f, spec, window)?;
    params.regime()?;
    let p = params.p;
    let e = params.mass_exponent();
    let term = |_: &DyadicIndex, cube: &Cube| -> Result<Option<(f64, bool)>> {
        let (wm, fm) = local_masses(spec, f, p, cube, q)?;
        if fm.value == 0.0 {
            return Ok(Some((0.0, fm.converged)));
        }
        let (mass, mass_ok) = match opts.variant {
            NormVariant::WeightMass => (wm.value, wm.converged),
            NormVariant::ReducingOperator { method } => {
                let r = reducing_operator(spec, cube, p, method, q, opts.seed)?;
                (linalg::spectral_norm(r.a.as_cmat()).powf(p) * cube.volume(), r.quadrature_converged)
            }
        };
        Ok(Some((mass.powf(e) * fm.value.powf(1.0 / p), mass_ok && fm.converged)))
    };
    aggregate(window, params, &f.support(), opts, &term)
}

/// A scalar weight `ω`, evaluated without any matrix algebra.
pub trait ScalarWeight: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn singular_points(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

/// `ω(x) = |x|^γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerWeight {
    pub gamma: f64,
    pub n: usize,
}

impl ScalarWeight for PowerWeight {
    fn value(&self, x: &[f64]) -> Result<f64> {
        if self.gamma == 0.0 {
            return Ok(1.0);
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(BmError::SingularPoint { point: x.to_vec() });
        }
        Ok(r.powf(self.gamma))
    }

    fn singular_points(&self) -> Vec<Vec<f64>> {
        if self.gamma == 0.0 {
            Vec::new()
        } else {
            vec![vec![0.0; self.n]]
        }
    }
}

/// `ω = ‖W‖` for a matrix weight.
pub struct OperatorNormWeight<'a>(pub &'a MatrixWeightSpec);

impl ScalarWeight for OperatorNormWeight<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.0.norm_at(x)
    }

    fn singular_points(&self) -> Vec<Vec<f64>> {
        self.0.singular_points()
    }
}

/// `[ω, |f|^p ω]`.
struct ScalarMass<'a> {
    w: &'a dyn ScalarWeight,
    f: &'a VectorField,
    p: f64,
}

impl Integrand for ScalarMass<'_> {
    fn components(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let w = self.w.value(x)?;
        let v = self.f.eval(x)?[0].norm();
        out[0] = w;
        out[1] = if v == 0.0 { 0.0 } else { v.powf(self.p) * w };
        Ok(())
    }

    fn hints(&self) -> IntegrandHints {
        let mut s = self.w.singular_points();
        s.extend(self.f.singular_points());
        s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        s.dedup();
        IntegrandHints { support: Support::Everywhere, features: self.f.features(), singular_points: s }
    }
}

/// `‖f‖_{M_p^{t,r}(ω)}` for scalar `f`.
pub fn scalar_bm_norm(
    f: &VectorField,
    w: &dyn ScalarWeight,
    params: &SpaceParams,
    window: &LatticeWindow,
    q: &QuadratureSpec,
) -> Result<NormReport> {
    scalar_bm_norm_with(f, w, params, window, q, &NormOptions::default())
}

pub fn scalar_bm_norm_with(
    f: &VectorField,
    w: &dyn ScalarWeight,
    params: &SpaceParams,
    window: &LatticeWindow,
    q: &QuadratureSpec,
    opts: &NormOptions,
) -> Result<NormReport> {
    if f.d() != 1 || f.n() != window.n {
        return Err(BmError::InvalidInput("scalar norm needs a scalar field on the window's space".into()));
    }
    if opts.variant != NormVariant::WeightMass {
        return Err(BmError::InvalidInput("scalar norm has no reducing-operator variant".into()));
    }
    params.regime()?;
    let p = params.p;
    let e = params.mass_exponent();
    let g = ScalarMass { w, f, p };
    let term = |_: &DyadicIndex, cube: &Cube| -> Result<Option<(f64, bool)>> {
        let r = integrate_vector(&g, cube, q)?;
        let fm = r.values[1];
        if fm == 0.0 {
            return Ok(Some((0.0, r.converged)));
        }
        Ok(Some((r.values[0].powf(e) * fm.powf(1.0 / p), r.converged)))
    };
    aggregate(window, params, &f.support(), opts, &term)
}

/// `(Σ_Q ∫_Q |W^{1/p} f|^p)^{1/p}` over disjoint cubes.
pub fn lp_norm(f: &VectorField, spec: &MatrixWeightSpec, p: f64, region: &[Cube], q: &QuadratureSpec) -> Result<f64> {
    for (i, a) in region.iter().enumerate() {
        if region[i + 1..].iter().any(|b| a.interiors_overlap(b)) {
            return Err(BmError::InvalidInput("region cubes overlap".into()));
        }
    }
    let parts = region
        .par_iter()
        .map(|c| Ok(if f.support().meets(c) { p_integral(spec, f, p, c, q)?.value } else { 0.0 }))
        .collect::<Result<Vec<f64>>>()?;
    Ok(compensated_sum(parts).powf(1.0 / p))
}

/// The window's coarsest layer, as disjoint cubes covering every window cube.
pub fn window_region(window: &LatticeWindow) -> Result<Vec<Cube>> {
    cubes_in_window(window, window.j_min)?.iter().map(DyadicIndex::cube).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    Analytic,
    FiniteDifference,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolevReport {
    pub value: f64,
    pub function_term: NormReport,
    pub gradient_term: NormReport,
    pub gradient: GradientKind,
    /// Finite-difference step, when one was used.
    pub step: Option<f64>,
}

/// `‖f‖_{M_p^{t,r}(‖W‖)} + ‖∇f‖_{M_p^{t,r}(W)}` for scalar `f` and `n×n` `W`.
pub fn sobolev_norm(
    f: &VectorField,
    spec: &MatrixWeightSpec,
    params: &SpaceParams,
    window: &LatticeWindow,
    q: &QuadratureSpec,
    h: f64,
) -> Result<SobolevReport> {
    if f.d() != 1 || spec.d() != spec.n() {
        return Err(BmError::InvalidInput("Sobolev norm needs scalar f and an n x n weight".into()));
    }
    let grad = f.gradient(h)?;
    let gradient = match (&grad, f) {
        (VectorField::FdGradient { .. }, _) => GradientKind::FiniteDifference,
        (_, VectorField::Constant { .. }) => GradientKind::Zero,
        _ => GradientKind::Analytic,
    };
    sobolev_from_gradient(f, &grad, gradient, spec, params, window, q, (gradient == GradientKind::FiniteDifference).then_some(h))
}

/// The Sobolev norm with central differences forced, for cross-checks.
pub fn sobolev_norm_fd(
    f: &VectorField,
    spec: &MatrixWeightSpec,
    params: &SpaceParams,
    window: &LatticeWindow,
    q: &QuadratureSpec,
    h: f64,
) -> Result<SobolevReport> {
    let grad = f.fd_gradient(h)?;
    sobolev_from_gradient(f, &grad, GradientKind::FiniteDifference, spec, params, window, q, Some(h))
}

#[allow(clippy::too_many_arguments)]
fn sobolev_from_gradient(
    f: &VectorField,
    grad: &VectorField,
    gradient: GradientKind,
    spec: &MatrixWeightSpec,
    params: &SpaceParams,
    window: &LatticeWindow,
    q: &QuadratureSpec,
    step: Option<f64>,
) -> Result<SobolevReport> {
    let function_term = scalar_bm_norm(f, &OperatorNormWeight(spec), params, window, q)?;
    let gradient_term = bm_norm(grad, spec, params, window, q)?;
    Ok(SobolevReport { value: function_term.value + gradient_term.value, function_term, gradient_term, gradient, step })
}

/// One embedding to check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingCase {
    /// `‖f‖_{M_p^{t,r2}} ≤ ‖f‖_{M_p^{t,r1}}` for `r1 < r2`.
    RMonotone { p: f64, t: f64, r1: RExponent, r2: RExponent },
    /// `‖f‖_{M_{p1}^{t,r}} ≤ ‖f‖_{M_{p2}^{t,r}}` for `p1 < p2`.
    PMonotone { p1: f64, p2: f64, t: f64, r: RExponent },
    /// `‖f‖_{M_p^{t,∞}} ≤ ‖f‖_{L^t}` and `‖f χ_K‖_{L^p} ≤ C ‖f‖_{M_p^{t,∞}}`.
    InfinityChain { p: f64, t: f64 },
}

fn r_less(a: RExponent, b: RExponent) -> bool {
    match (a, b) {
        (RExponent::Finite(x), RExponent::Finite(y)) => x < y,
        (RExponent::Finite(_), RExponent::Infinity) => true,
        _ => false,
    }
}

impl EmbeddingCase {
    pub fn validate(&self) -> Result<()> {
        let hyp = |m: String| Err(BmError::Hypothesis(m));
        match *self {
            EmbeddingCase::RMonotone { p, t, r1, r2 } => {
                SpaceParams::new(p, t, r1)?;
                SpaceParams::new(p, t, r2)?;
                if !r_less(r1, r2) {
                    return hyp(format!("r1 = {r1} must be < r2 = {r2}"));
                }
            }
            EmbeddingCase::PMonotone { p1, p2, t, r } => {
                SpaceParams::new(p1, t, r)?;
                SpaceParams::new(p2, t, r)?;
                if !(p1 < p2) {
                    return hyp(format!("p1 = {p1} must be < p2 = {p2}"));
                }
            }
            EmbeddingCase::InfinityChain { p, t } => {
                SpaceParams::infinite(p, t)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingRow {
    pub member: String,
    pub case: EmbeddingCase,
    /// Which inequality of the case.
    pub part: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, or 0 when both vanish.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub rows: Vec<EmbeddingRow>,
    pub max_ratio: f64,
}

impl EmbeddingReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.max_ratio <= 1.0 + slack
    }
}

fn row(member: &str, case: EmbeddingCase, part: &'static str, lhs: f64, rhs: f64) -> EmbeddingRow {
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    EmbeddingRow { member: member.to_string(), case, part, lhs, rhs, ratio }
}

/// Checks every case on every member; hypotheses are validated first.
pub fn embedding_check(
    suite: &[(String, VectorField)],
    spec: &MatrixWeightSpec,
    cases: &[EmbeddingCase],
    window: &LatticeWindow,
    q: &QuadratureSpec,
) -> Result<EmbeddingReport> {
    for c in cases {
        c.validate()?;
    }
    let region = window_region(window)?;
    let mut rows = Vec::new();
    for (name, f) in suite {
        for &case in cases {
            match case {
                EmbeddingCase::RMonotone { p, t, r1, r2 } => {
                    let small = bm_norm(f, spec, &SpaceParams::new(p, t, r2)?, window, q)?.value;
                    let big = bm_norm(f, spec, &SpaceParams::new(p, t, r1)?, window, q)?.value;
                    rows.push(row(name, case, "r_monotone", small, big));
                }
                EmbeddingCase::PMonotone { p1, p2, t, r } => {
                    let small = bm_norm(f, spec, &SpaceParams::new(p1, t, r)?, window, q)?.value;
                    let big = bm_norm(f, spec, &SpaceParams::new(p2, t, r)?, window, q)?.value;
                    rows.push(row(name, case, "p_monotone", small, big));
                }
                EmbeddingCase::InfinityChain { p, t } => {
                    let m = bm_norm(f, spec, &SpaceParams::infinite(p, t)?, window, q)?.value;
                    let lt = lp_norm(f, spec, t, &region, q)?;
                    rows.push(row(name, case, "bm_le_lt", m, lt));
                    // each coarse cube Q obeys ‖fχ_Q‖_{L^p} ≤ W(Q)^{1/p−1/t} ‖f‖_M
                    let masses = region
                        .par_iter()
                        .map(|c| Ok(crate::quadrature::weight_mass(spec, c, q)?.value.powf(1.0 / p - 1.0 / t)))
                        .collect::<Result<Vec<f64>>>()?;
                    let c_cover = compensated_sum(masses);
                    let lp = lp_norm(f, spec, p, &region, q)?;
                    rows.push(row(name, case, "lp_loc_le_bm", lp, c_cover * m));
                }
            }
        }
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(EmbeddingReport { rows, max_ratio })
}
