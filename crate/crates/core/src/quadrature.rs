//! Adaptive tensor Gauss-Legendre cubature on axis-aligned cubes.
//!
//! Cells are dyadic subcubes of the integration cube. Each cell carries a
//! coarse estimate (the Gauss rule on the cell) and a fine estimate (the
//! rule on its `2^n` children); their difference is the cell error. A global
//! max-error heap decides which cell to split next. Cells that touch a
//! declared singular point are split like any other, so the refinement is
//! geometric with ratio 1/2 toward the singularity.
//!
//! Integrands are vector valued so that related quantities (a weight mass
//! and a weighted `p`-mass, or many directions at once) share evaluations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dyadic::{BoxBounds, Cube, DyadicIndex};
use crate::error::{BmError, Result};
use crate::field::VectorField;
use crate::linalg::MAX_DIM;
use crate::weights::MatrixWeightSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub points_per_axis: usize,
    /// Maximum number of halvings below the integration cube.
    pub max_depth: u32,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Only dyadic grading (1/2) is supported.
    pub grading_ratio: f64,
    /// Cap on leaf cells per integral.
    pub max_cells: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { points_per_axis: 4, max_depth: 40, rel_tol: 1e-7, abs_tol: 0.0, grading_ratio: 0.5, max_cells: 50_000 }
    }
}

impl QuadratureSpec {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self { rel_tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.points_per_axis) {
            return Err(BmError::InvalidInput(format!(
                "points_per_axis must be in 1..=16, got {}",
                self.points_per_axis
            )));
        }
        if !(self.rel_tol > 0.0) || !self.rel_tol.is_finite() {
            return Err(BmError::InvalidInput("rel_tol must be positive".into()));
        }
        if !(self.abs_tol >= 0.0) || !self.abs_tol.is_finite() {
            return Err(BmError::InvalidInput("abs_tol must be nonnegative".into()));
        }
        if self.grading_ratio != 0.5 {
            return Err(BmError::InvalidInput(format!(
                "grading_ratio {} unsupported; cells are split dyadically (0.5)",
                self.grading_ratio
            )));
        }
        if self.max_cells < 1 {
            return Err(BmError::InvalidInput("max_cells must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralResult {
    pub value: f64,
    pub error_estimate: f64,
    pub cells_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorIntegral {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub cells_used: usize,
    pub converged: bool,
}

impl VectorIntegral {
    pub fn component(&self, c: usize) -> IntegralResult {
        IntegralResult {
            value: self.values[c],
            error_estimate: self.errors[c],
            cells_used: self.cells_used,
            converged: self.converged,
        }
    }
}

/// Where an integrand is known to be identically zero.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Everywhere,
    Within(BoxBounds),
    Empty,
}

impl Support {
    pub fn meets(&self, cube: &Cube) -> bool {
        match self {
            Support::Everywhere => true,
            Support::Within(b) => b.meets_cube(cube),
            Support::Empty => false,
        }
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        match self {
            Support::Everywhere => true,
            Support::Within(b) => b.lo.iter().zip(&b.hi).zip(x).all(|((l, h), v)| l <= v && v <= h),
            Support::Empty => false,
        }
    }

    pub fn union(&self, other: &Support) -> Support {
        match (self, other) {
            (Support::Empty, s) | (s, Support::Empty) => s.clone(),
            (Support::Within(a), Support::Within(b)) => Support::Within(a.union(b)),
            _ => Support::Everywhere,
        }
    }

    pub fn intersect(&self, other: &Support) -> Support {
        match (self, other) {
            (Support::Everywhere, s) | (s, Support::Everywhere) => s.clone(),
            (Support::Within(a), Support::Within(b)) => a.intersect(b).map_or(Support::Empty, Support::Within),
            _ => Support::Empty,
        }
    }

    pub fn translate(&self, y: &[f64]) -> Support {
        match self {
            Support::Within(b) => Support::Within(b.translate(y)),
            s => s.clone(),
        }
    }

    pub fn expand(&self, h: f64) -> Support {
        match self {
            Support::Within(b) => Support::Within(BoxBounds {
                lo: b.lo.iter().map(|v| v - h).collect(),
                hi: b.hi.iter().map(|v| v + h).collect(),
            }),
            s => s.clone(),
        }
    }
}

/// Cells meeting `region` are split, before any evaluation, until their side
/// is at most `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub region: BoxBounds,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandHints {
    pub support: Support,
    pub features: Vec<Feature>,
    pub singular_points: Vec<Vec<f64>>,
}

impl Default for IntegrandHints {
    fn default() -> Self {
        Self { support: Support::Everywhere, features: Vec::new(), singular_points: Vec::new() }
    }
}

/// A real vector-valued integrand.
pub trait Integrand: Sync {
    fn components(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn hints(&self) -> IntegrandHints {
        IntegrandHints::default()
    }
}

/// Closure-backed integrand.
pub struct FnIntegrand<F> {
    pub components: usize,
    pub f: F,
    pub hints: IntegrandHints,
}

impl<F> FnIntegrand<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    pub fn new(components: usize, f: F) -> Self {
        Self { components, f, hints: IntegrandHints::default() }
    }

    pub fn with_hints(mut self, hints: IntegrandHints) -> Self {
        self.hints = hints;
        self
    }
}

impl<F> Integrand for FnIntegrand<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    fn components(&self) -> usize {
        self.components
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, out)
    }
    fn hints(&self) -> IntegrandHints {
        self.hints.clone()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_m(z), p0 = P_{m-1}(z)
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[m - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[m - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Tensor Gauss rule on the unit cube `[0, 1)^n`.
#[derive(Debug, Clone)]
struct TensorRule {
    n: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TensorRule {
    fn new(n: usize, m: usize) -> Self {
        let (x, w) = gauss_legendre(m);
        let count = m.pow(n as u32);
        let mut nodes = Vec::with_capacity(count * n);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; n];
        for _ in 0..count {
            let mut wt = 1.0;
            for &i in &idx {
                nodes.push(x[i]);
                wt *= w[i];
            }
            weights.push(wt);
            for axis in (0..n).rev() {
                idx[axis] += 1;
                if idx[axis] < m {
                    break;
                }
                idx[axis] = 0;
            }
        }
        // nudge the largest weight so the sequential sum is exactly 1
        let big = (0..count).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap_or(0);
        for _ in 0..8 {
            let s: f64 = weights.iter().sum();
            if s == 1.0 {
                break;
            }
            weights[big] += 1.0 - s;
        }
        Self { n, nodes, weights }
    }

    fn apply<I: Integrand + ?Sized>(&self, g: &I, cube: &Cube, out: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        out.fill(0.0);
        let vol = cube.volume();
        for (q, &wt) in self.weights.iter().enumerate() {
            for i in 0..self.n {
                scratch.x[i] = cube.corner[i] + cube.side * self.nodes[q * self.n + i];
            }
            g.eval(&scratch.x, &mut scratch.val)?;
            for (o, v) in out.iter_mut().zip(&scratch.val) {
                *o += wt * v;
            }
        }
        for o in out.iter_mut() {
            *o *= vol;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(BmError::NonFinite("integrand value"));
        }
        Ok(())
    }
}

struct Scratch {
    x: Vec<f64>,
    val: Vec<f64>,
}

struct Cell {
    cube: Cube,
    depth: u32,
    /// Fine estimate, the sum of `children`.
    value: Vec<f64>,
    /// Coarse rule applied to each child.
    children: Vec<Vec<f64>>,
    error: Vec<f64>,
    key: f64,
    seq: u64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = CompensatedSum::default();
    for v in values {
        s.add(v);
    }
    s.value()
}

fn cube_key(c: &Cube) -> impl Ord + '_ {
    c.corner.iter().map(|v| ordered(*v)).collect::<Vec<_>>()
}

fn ordered(v: f64) -> i64 {
    let bits = v.to_bits() as i64;
    bits ^ (((bits >> 63) as u64) >> 1) as i64
}

struct Integrator<'a, I: Integrand + ?Sized> {
    g: &'a I,
    rule: TensorRule,
    comps: usize,
    scratch: Scratch,
    singular: Vec<Vec<f64>>,
    evaluations: usize,
}

const EXTRAPOLATION_SAFETY: f64 = 8.0;

impl<'a, I: Integrand + ?Sized> Integrator<'a, I> {
    fn children_values(&mut self, cube: &Cube) -> Result<Vec<Vec<f64>>> {
        let kids = cube.children();
        let mut vals = Vec::with_capacity(kids.len());
        for kid in &kids {
            let mut v = vec![0.0; self.comps];
            self.rule.apply(self.g, kid, &mut v, &mut self.scratch)?;
            self.evaluations += self.rule.weights.len();
            vals.push(v);
        }
        Ok(vals)
    }

    fn make_cell(&mut self, cube: Cube, depth: u32, coarse: Option<Vec<f64>>, seq: u64, norms: &[f64]) -> Result<Cell> {
        let coarse = match coarse {
            Some(c) => c,
            None => {
                let mut c = vec![0.0; self.comps];
                self.rule.apply(self.g, &cube, &mut c, &mut self.scratch)?;
                self.evaluations += self.rule.weights.len();
                c
            }
        };
        let children = self.children_values(&cube)?;
        let mut value = vec![0.0; self.comps];
        for child in &children {
            for (v, c) in value.iter_mut().zip(child) {
                *v += c;
            }
        }
        let mut error: Vec<f64> = value.iter().zip(&coarse).map(|(f, c)| (f - c).abs()).collect();
        if let Some(corner) = self.singular_corner(&cube) {
            self.extrapolate(&cube, corner, &coarse, &children, &mut value, &mut error)?;
        }
        let key = error.iter().zip(norms).map(|(e, n)| e / n).fold(0.0, f64::max);
        Ok(Cell { cube, depth, value, children, error, key, seq })
    }

    /// Index (child mask) of the cube corner that is a declared singular point.
    fn singular_corner(&self, cube: &Cube) -> Option<usize> {
        let n = cube.dim();
        self.singular.iter().find_map(|s| {
            let mut mask = 0usize;
            for i in 0..n {
                let bit = if s[i] == cube.corner[i] {
                    0
                } else if s[i] == cube.corner[i] + cube.side {
                    1
                } else {
                    return None;
                };
                mask |= bit << (n - 1 - i);
            }
            Some(mask)
        })
    }

    /// Geometric extrapolation toward a singular corner.
    ///
    /// Near a homogeneous singularity the rule values of the nested corner
    /// cells shrink by a fixed ratio `r`, so the corner cell integral is
    /// `A / (1 - r)` with `A` the rest of the cell. One- and two-level
    /// versions of that estimate are compared for the error, inflated by
    /// `EXTRAPOLATION_SAFETY` since mixed powers break the fixed ratio.
    fn extrapolate(
        &mut self,
        cube: &Cube,
        corner: usize,
        coarse: &[f64],
        children: &[Vec<f64>],
        value: &mut [f64],
        error: &mut [f64],
    ) -> Result<()> {
        let inner = &cube.children()[corner];
        let grand = self.children_values(inner)?;
        for c in 0..self.comps {
            let q_cell = coarse[c];
            let q_inner = children[corner][c];
            let q_grand = grand[corner][c];
            let r1 = q_inner / q_cell;
            let r2 = q_grand / q_inner;
            if !(r1 > 0.0 && r1 < 1.0 && r2 > 0.0 && r2 < 1.0) {
                continue;
            }
            let a1 = value[c] - q_inner;
            let a2: f64 = grand.iter().map(|g| g[c]).sum::<f64>() - q_grand;
            let one_level = a1 / (1.0 - r1);
            let two_level = a1 + a2 / (1.0 - r2);
            if !one_level.is_finite() || !two_level.is_finite() {
                continue;
            }
            value[c] = two_level;
            error[c] = EXTRAPOLATION_SAFETY * (two_level - one_level).abs();
        }
        Ok(())
    }
}

fn presplit(root: &Cube, hints: &IntegrandHints, q: &QuadratureSpec) -> (Vec<(Cube, u32)>, bool) {
    let mut leaves = Vec::new();
    let mut stack = vec![(root.clone(), 0u32)];
    let budget = q.max_cells / 2;
    let mut complete = true;
    while let Some((cube, depth)) = stack.pop() {
        if !hints.support.meets(&cube) {
            continue;
        }
        let wants_split = hints
            .features
            .iter()
            .any(|f| cube.side > f.scale && f.region.meets_cube(&cube));
        if wants_split && depth < q.max_depth && leaves.len() + stack.len() + (1 << cube.dim()) <= budget {
            let mut kids = cube.children();
            kids.reverse();
            stack.extend(kids.into_iter().map(|c| (c, depth + 1)));
        } else {
            if wants_split {
                complete = false;
            }
            leaves.push((cube, depth));
        }
    }
    (leaves, complete)
}

/// Integrates a vector integrand over an arbitrary axis-aligned cube.
pub fn integrate_vector<I: Integrand + ?Sized>(g: &I, cube: &Cube, q: &QuadratureSpec) -> Result<VectorIntegral> {
    q.validate()?;
    let n = cube.dim();
    let comps = g.components();
    if n == 0 || !(cube.side > 0.0) || !cube.side.is_finite() {
        return Err(BmError::InvalidInput("integration cube must have positive finite side".into()));
    }
    let hints = g.hints();
    let (seeds, complete) = presplit(cube, &hints, q);
    let mut it = Integrator {
        g,
        rule: TensorRule::new(n, q.points_per_axis),
        comps,
        scratch: Scratch { x: vec![0.0; n], val: vec![0.0; comps] },
        singular: hints.singular_points.iter().filter(|s| s.len() == n).cloned().collect(),
        evaluations: 0,
    };
    if seeds.is_empty() {
        return Ok(VectorIntegral { values: vec![0.0; comps], errors: vec![0.0; comps], cells_used: 0, converged: true });
    }

    let unit = vec![1.0; comps];
    let mut seq = 0u64;
    let mut cells = Vec::with_capacity(seeds.len());
    for (c, depth) in seeds {
        cells.push(it.make_cell(c, depth, None, seq, &unit)?);
        seq += 1;
    }
    // normalize keys per component by the initial absolute mass
    let mut norms = vec![0.0; comps];
    for cell in &cells {
        for (nm, v) in norms.iter_mut().zip(&cell.value) {
            *nm += v.abs();
        }
    }
    for nm in norms.iter_mut() {
        if !(*nm > 0.0) {
            *nm = f64::MIN_POSITIVE;
        }
    }
    let rekey = |cell: &mut Cell, norms: &[f64]| {
        cell.key = cell.error.iter().zip(norms).map(|(e, n)| e / n).fold(0.0, f64::max);
    };
    for cell in cells.iter_mut() {
        rekey(cell, &norms);
    }

    let (mut errs, mut mass) = totals(cells.iter(), comps);
    let mut heap: BinaryHeap<Cell> = cells.into_iter().collect();
    let mut frozen: Vec<Cell> = Vec::new();
    let mut converged = complete;
    let mut splits = 0usize;
    let within = |errs: &[f64], mass: &[f64]| errs.iter().zip(mass).all(|(e, m)| *e <= (q.rel_tol * m).max(q.abs_tol));
    while !within(&errs, &mass) {
        if heap.len() + frozen.len() + (1 << n) > q.max_cells {
            converged = false;
            break;
        }
        let Some(worst) = heap.pop() else {
            converged = false;
            break;
        };
        if worst.depth >= q.max_depth {
            frozen.push(worst);
            continue;
        }
        for c in 0..comps {
            errs[c] -= worst.error[c];
            mass[c] -= worst.value[c].abs();
        }
        for (kid, coarse) in worst.cube.children().into_iter().zip(worst.children) {
            let mut cell = it.make_cell(kid, worst.depth + 1, Some(coarse), seq, &norms)?;
            seq += 1;
            rekey(&mut cell, &norms);
            for c in 0..comps {
                errs[c] += cell.error[c];
                mass[c] += cell.value[c].abs();
            }
            heap.push(cell);
        }
        splits += 1;
        if splits % 256 == 0 {
            (errs, mass) = totals(heap.iter().chain(frozen.iter()), comps);
        }
    }

    let mut leaves: Vec<Cell> = heap.into_vec();
    leaves.extend(frozen);
    leaves.sort_by(|a, b| cube_key(&a.cube).cmp(&cube_key(&b.cube)).then(a.cube.side.total_cmp(&b.cube.side)));
    let values = (0..comps).map(|c| compensated_sum(leaves.iter().map(|l| l.value[c]))).collect();
    let errors = (0..comps).map(|c| compensated_sum(leaves.iter().map(|l| l.error[c]))).collect();
    Ok(VectorIntegral { values, errors, cells_used: leaves.len(), converged })
}

fn totals<'c>(cells: impl Iterator<Item = &'c Cell>, comps: usize) -> (Vec<f64>, Vec<f64>) {
    let mut errs = vec![0.0; comps];
    let mut mass = vec![0.0; comps];
    for cell in cells {
        for c in 0..comps {
            errs[c] += cell.error[c];
            mass[c] += cell.value[c].abs();
        }
    }
    (errs, mass)
}

/// Scalar integral over a dyadic cube.
pub fn integrate_cube<I: Integrand + ?Sized>(g: &I, cube: &DyadicIndex, q: &QuadratureSpec) -> Result<IntegralResult> {
    if g.components() != 1 {
        return Err(BmError::InvalidInput("integrate_cube expects a scalar integrand".into()));
    }
    Ok(integrate_vector(g, &cube.cube()?, q)?.component(0))
}

/// Scalar integral over an arbitrary cube.
pub fn integrate_box<I: Integrand + ?Sized>(g: &I, cube: &Cube, q: &QuadratureSpec) -> Result<IntegralResult> {
    if g.components() != 1 {
        return Err(BmError::InvalidInput("integrate_box expects a scalar integrand".into()));
    }
    Ok(integrate_vector(g, cube, q)?.component(0))
}

/// `‖W(x)‖` and, when a field is attached, `|W^{1/p}(x) f(x)|^p`.
///
/// Component order is `[‖W‖, |W^{1/p} f|^p]` with either part optional.
pub struct LocalMass<'a> {
    pub spec: &'a MatrixWeightSpec,
    pub with_weight: bool,
    pub field: Option<(&'a VectorField, f64)>,
}

impl<'a> LocalMass<'a> {
    pub fn weight(spec: &'a MatrixWeightSpec) -> Self {
        Self { spec, with_weight: true, field: None }
    }

    pub fn field(spec: &'a MatrixWeightSpec, f: &'a VectorField, p: f64) -> Self {
        Self { spec, with_weight: false, field: Some((f, p)) }
    }

    pub fn both(spec: &'a MatrixWeightSpec, f: &'a VectorField, p: f64) -> Self {
        Self { spec, with_weight: true, field: Some((f, p)) }
    }

    fn check(&self) -> Result<()> {
        if let Some((f, p)) = self.field {
            if f.d() != self.spec.d() || f.n() != self.spec.n() {
                return Err(BmError::InvalidInput(format!(
                    "field is {}-valued on R^{}, weight is {}x{} on R^{}",
                    f.d(),
                    f.n(),
                    self.spec.d(),
                    self.spec.d(),
                    self.spec.n()
                )));
            }
            if !(p >= 1.0) || !p.is_finite() {
                return Err(BmError::ParameterOutOfRange(format!("p = {p} must be finite and >= 1")));
            }
        }
        Ok(())
    }
}

impl Integrand for LocalMass<'_> {
    fn components(&self) -> usize {
        usize::from(self.with_weight) + usize::from(self.field.is_some())
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut buf = [0.0; MAX_DIM];
        let lam = &mut buf[..self.spec.d()];
        self.spec.eigenvalues_into(x, lam)?;
        let mut slot = 0;
        if self.with_weight {
            out[0] = lam.iter().copied().fold(0.0, f64::max);
            slot = 1;
        }
        if let Some((f, p)) = self.field {
            let v = f.eval(x)?;
            out[slot] = if v.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                0.0
            } else {
                self.spec.p_mass_in_basis(lam, &self.spec.to_eigenbasis(&v), p)
            };
        }
        Ok(())
    }

    fn hints(&self) -> IntegrandHints {
        let mut singular = self.spec.singular_points();
        let (support, features) = match self.field {
            Some((f, _)) => {
                singular.extend(f.singular_points());
                let s = if self.with_weight { Support::Everywhere } else { f.support() };
                (s, f.features())
            }
            None => (Support::Everywhere, Vec::new()),
        };
        singular.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        singular.dedup();
        IntegrandHints { support, features, singular_points: singular }
    }
}

/// `W(Q) = ∫_Q ‖W(y)‖ dy`.
pub fn weight_mass(spec: &MatrixWeightSpec, cube: &Cube, q: &QuadratureSpec) -> Result<IntegralResult> {
    if cube.dim() != spec.n() {
        return Err(BmError::InvalidInput("cube dimension differs from the weight".into()));
    }
    if spec.is_constant() {
        let w = spec.norm_at(&cube.center())?;
        return Ok(IntegralResult { value: w * cube.volume(), error_estimate: 0.0, cells_used: 1, converged: true });
    }
    Ok(integrate_vector(&LocalMass::weight(spec), cube, q)?.component(0))
}

/// `∫_Q |W^{1/p}(x) f(x)|^p dx`.
pub fn p_integral(spec: &MatrixWeightSpec, f: &VectorField, p: f64, cube: &Cube, q: &QuadratureSpec) -> Result<IntegralResult> {
    let g = LocalMass::field(spec, f, p);
    g.check()?;
    if cube.dim() != spec.n() {
        return Err(BmError::InvalidInput("cube dimension differs from the weight".into()));
    }
    Ok(integrate_vector(&g, cube, q)?.component(0))
}

/// `(W(Q), ∫_Q |W^{1/p} f|^p)` from one shared refinement; the field part is
/// exactly zero when `f` vanishes on `Q`.
pub fn local_masses(spec: &MatrixWeightSpec, f: &VectorField, p: f64, cube: &Cube, q: &QuadratureSpec) -> Result<(IntegralResult, IntegralResult)> {
    let g = LocalMass::both(spec, f, p);
    g.check()?;
    if !f.support().meets(cube) {
        let zero = IntegralResult { value: 0.0, error_estimate: 0.0, cells_used: 0, converged: true };
        return Ok((weight_mass(spec, cube, q)?, zero));
    }
    let r = integrate_vector(&g, cube, q)?;
    Ok((r.component(0), r.component(1)))
}


#[cfg(test)]
mod weighted_tests {
    use super::*;
    use crate::linalg::C64;
    use proptest::prelude::*;

    fn c(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn weight_mass_examples() {
        let q = QuadratureSpec::default();
        let id = MatrixWeightSpec::identity(3, 2);
        let cube = Cube::new(vec![-0.5, 1.0], 0.25);
        assert_eq!(weight_mass(&id, &cube, &q).unwrap().value, cube.volume());

        let lin = MatrixWeightSpec::scalar_power(1.0, 1, 1).unwrap();
        let r = weight_mass(&lin, &Cube::new(vec![0.0], 1.0), &q).unwrap();
        assert!(r.converged && close(r.value, 0.5, 1e-12), "{r:?}");

        // ‖diag(x, x^{-1/2})‖ = x^{-1/2} on (0,1) and x on (1,2)
        let mixed = MatrixWeightSpec::diagonal_power(vec![1.0, -0.5], 1).unwrap();
        let r = weight_mass(&mixed, &Cube::new(vec![0.0], 1.0), &q).unwrap();
        assert!(close(r.value, 2.0, 1e-6), "{r:?}");
        let r = weight_mass(&mixed, &Cube::new(vec![0.0], 2.0), &q).unwrap();
        let oracle = 2.0 * 1f64.sqrt() + (2.0f64.powi(2) - 1.0) / 2.0;
        assert!(close(r.value, oracle, 1e-6), "{} vs {oracle}", r.value);
    }

    #[test]
    fn p_integral_examples() {
        let q = QuadratureSpec::default();
        let cube = Cube::new(vec![2.0, -1.0], 0.5);
        let id = MatrixWeightSpec::identity(2, 2);
        let e1 = VectorField::constant(vec![c(1.0), c(0.0)], 2);
        for p in [1.0, 1.5, 3.0] {
            let r = p_integral(&id, &e1, p, &cube, &q).unwrap();
            assert!(close(r.value, cube.volume(), 1e-12), "p={p}: {r:?}");
        }

        let lin = MatrixWeightSpec::scalar_power(1.0, 1, 1).unwrap();
        let one = VectorField::constant(vec![c(1.0)], 1);
        let r = p_integral(&lin, &one, 2.5, &Cube::new(vec![0.0], 1.0), &q).unwrap();
        assert!(close(r.value, 0.5, 1e-12), "{r:?}");

        let diag = MatrixWeightSpec::constant_diagonal(vec![4.0, 9.0], 2).unwrap();
        let ones = VectorField::constant(vec![c(1.0), c(1.0)], 2);
        let r = p_integral(&diag, &ones, 2.0, &Cube::new(vec![0.0, 0.0], 1.0), &q).unwrap();
        assert!(close(r.value, 13.0, 1e-12), "{r:?}");
    }

    #[test]
    fn p_integral_matches_scalar_oracle_with_singular_weight() {
        // ∫_0^1 x^{-1/2} x^2 dx = 2/5
        let q = QuadratureSpec::default();
        let w = MatrixWeightSpec::scalar_power(-0.5, 1, 1).unwrap();
        let f = VectorField::power_tail(1.0, vec![c(1.0)], 1).unwrap();
        let r = p_integral(&w, &f, 2.0, &Cube::new(vec![0.0], 1.0), &q).unwrap();
        assert!(close(r.value, 0.4, 1e-6), "{r:?}");
    }

    #[test]
    fn local_masses_share_refinement() {
        let q = QuadratureSpec::default();
        let w = MatrixWeightSpec::diagonal_power(vec![0.5, -0.25], 1).unwrap();
        let f = VectorField::gaussian(vec![0.3], 0.1, vec![c(1.0), C64::new(0.0, 2.0)]).unwrap();
        let cube = Cube::new(vec![0.0], 1.0);
        let (wm, fm) = local_masses(&w, &f, 1.5, &cube, &q).unwrap();
        let wm2 = weight_mass(&w, &cube, &q).unwrap();
        let fm2 = p_integral(&w, &f, 1.5, &cube, &q).unwrap();
        assert!(close(wm.value, wm2.value, 1e-6));
        assert!(close(fm.value, fm2.value, 1e-6));
        let far = Cube::new(vec![4.0], 1.0);
        let (_, zero) = local_masses(&w, &f, 1.5, &far, &q).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let q = QuadratureSpec::default();
        let w = MatrixWeightSpec::identity(2, 1);
        let f = VectorField::constant(vec![c(1.0)], 1);
        assert!(p_integral(&w, &f, 2.0, &Cube::new(vec![0.0], 1.0), &q).is_err());
        let f2 = VectorField::constant(vec![c(1.0), c(1.0)], 1);
        assert!(p_integral(&w, &f2, 0.5, &Cube::new(vec![0.0], 1.0), &q).is_err());
    }

    proptest! {
        #[test]
        fn p_integral_additive(gamma in -0.8f64..1.5, p in 1.0f64..4.0, j in -1i32..3, k in -2i64..2) {
            let q = QuadratureSpec::default();
            let w = MatrixWeightSpec::diagonal_power(vec![gamma, 0.3], 1).unwrap();
            let f = VectorField::gaussian(vec![0.2], 0.7, vec![c(1.0), C64::new(0.5, -1.0)]).unwrap();
            let idx = crate::dyadic::DyadicIndex::new(j, vec![k]).unwrap();
            let whole = p_integral(&w, &f, p, &idx.cube().unwrap(), &q).unwrap().value;
            let parts: f64 = idx.children().iter().map(|ch| p_integral(&w, &f, p, &ch.cube().unwrap(), &q).unwrap().value).sum();
            prop_assert!((whole - parts).abs() <= 2.0 * q.rel_tol * whole.max(f64::MIN_POSITIVE) + 1e-300, "{whole} vs {parts}");
        }

        #[test]
        fn p_integral_monotone_in_scalar_f(a in 0.0f64..3.0, b in 0.0f64..3.0, p in 1.0f64..3.0) {
            let q = QuadratureSpec::default();
            let w = MatrixWeightSpec::scalar_power(0.5, 1, 1).unwrap();
            let g = VectorField::gaussian(vec![0.5], 0.3, vec![c(1.0)]).unwrap();
            let lo = a.min(b);
            let hi = a.max(b);
            let cube = Cube::new(vec![0.0], 1.0);
            let small = p_integral(&w, &g.clone().scaled(c(lo)), p, &cube, &q).unwrap().value;
            let large = p_integral(&w, &g.scaled(c(hi)), p, &cube, &q).unwrap().value;
            prop_assert!(small <= large * (1.0 + 1e-12));
        }

        #[test]
        fn identity_scaling_law(lambda_exp in -2i32..3, p in 1.0f64..3.0) {
            let q = QuadratureSpec::default();
            let lambda = 2f64.powi(lambda_exp);
            let id = MatrixWeightSpec::identity(1, 1);
            let f = VectorField::gaussian(vec![0.4], 0.5, vec![c(1.0)]).unwrap();
            // f(λx) is the bump with center/λ and scale/λ
            let f_l = VectorField::gaussian(vec![0.4 / lambda], 0.5 / lambda, vec![c(1.0)]).unwrap();
            let cube = Cube::new(vec![0.0], 1.0);
            let base = p_integral(&id, &f, p, &cube, &q).unwrap().value;
            let scaled = p_integral(&id, &f_l, p, &Cube::new(vec![0.0], 1.0 / lambda), &q).unwrap().value;
            prop_assert!((scaled - base / lambda).abs() <= 1e-6 * base / lambda);
        }
    }
}
