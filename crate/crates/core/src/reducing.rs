//! Reducing operators, `A_p` characteristics, `A_p`-dimensions and doubling
//! exponents, estimated over finite cube families.
//!
//! Every estimate here is a maximum over a finite family and therefore a lower
//! bound of the corresponding supremum.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr_free::standard_normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::Cube;
use crate::error::{BmError, Result};
use crate::linalg::{self, euclid, CMat, HermitianMatrix, C64, MAX_DIM};
use crate::quadrature::{gauss_legendre, integrate_vector, Integrand, IntegrandHints, QuadratureSpec};
use crate::weights::{ratio_norm_from, MatrixWeightSpec};

pub const DIRECTIONS_PER_D2: usize = 64;
pub const MVEE_TOL: f64 = 1e-7;
pub const MVEE_MAX_ITER: usize = 100_000;
/// Residual accepted, and flagged, when the iteration cap is hit first.
pub const MVEE_ACCEPT: f64 = 1e-4;
/// Gauss nodes on subcells at these levels stand in for an essential supremum.
pub const ESS_SUP_LEVELS: [u32; 2] = [1, 2];

/// Label carried by every finite-family estimate.
pub const LOWER_BOUND_LABEL: &str = "lower bound of the supremum over all cubes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducingMethod {
    ExactP2,
    Mvee,
}

mod rand_distr_free {
    use rand::Rng;

    /// Box-Muller; one draw per call keeps the stream layout obvious.
    pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn unit(v: Vec<C64>) -> Vec<C64> {
    let r = euclid(&v);
    v.into_iter().map(|z| z / r).collect()
}

/// `count` seeded unit vectors with independent Gaussian real and imaginary parts.
pub fn random_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            loop {
                let v: Vec<C64> =
                    (0..d).map(|_| C64::new(standard_normal(&mut rng), standard_normal(&mut rng))).collect();
                if euclid(&v) > 1e-8 {
                    return unit(v);
                }
            }
        })
        .collect()
}

/// `e_i`, `(e_i ± e_j)/√2`, `(e_i ± i e_j)/√2`.
pub fn structured_directions(d: usize) -> Vec<Vec<C64>> {
    let e = |i: usize| -> Vec<C64> { (0..d).map(|k| C64::new(f64::from(u8::from(k == i)), 0.0)).collect() };
    let mut out: Vec<Vec<C64>> = (0..d).map(e).collect();
    for i in 0..d {
        for j in i + 1..d {
            for s in [C64::new(1.0, 0.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0)] {
                let v: Vec<C64> = e(i).iter().zip(e(j)).map(|(a, b)| a + s * b).collect();
                out.push(unit(v));
            }
        }
    }
    out
}

/// The fitting set: `64 d²` seeded random directions plus the structured ones.
pub fn fit_directions(d: usize, seed: u64) -> Vec<Vec<C64>> {
    let mut dirs = structured_directions(d);
    dirs.extend(random_directions(d, DIRECTIONS_PER_D2 * d * d, seed));
    dirs
}

/// `|W^{1/p}(x) z|^p` for a batch of directions.
struct DirectionalMass<'a> {
    spec: &'a MatrixWeightSpec,
    coords: Vec<Vec<C64>>,
    p: f64,
}

impl Integrand for DirectionalMass<'_> {
    fn components(&self) -> usize {
        self.coords.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut buf = [0.0; MAX_DIM];
        let lam = &mut buf[..self.spec.d()];
        self.spec.eigenvalues_into(x, lam)?;
        for (o, c) in out.iter_mut().zip(&self.coords) {
            *o = self.spec.p_mass_in_basis(lam, c, self.p);
        }
        Ok(())
    }

    fn hints(&self) -> IntegrandHints {
        IntegrandHints { singular_points: self.spec.singular_points(), ..Default::default() }
    }
}

/// `|Q|^{-1} ∫_Q |W^{1/p}(x) z|^p dx` for every `z`, and whether all converged.
pub fn directional_averages(
    spec: &MatrixWeightSpec,
    dirs: &[Vec<C64>],
    p: f64,
    cube: &Cube,
    q: &QuadratureSpec,
) -> Result<(Vec<f64>, bool)> {
    check_p(p, 0.0)?;
    if cube.dim() != spec.n() {
        return Err(BmError::InvalidInput("cube dimension differs from the weight".into()));
    }
    if dirs.iter().any(|z| z.len() != spec.d()) {
        return Err(BmError::InvalidInput("direction length differs from the weight".into()));
    }
    let g = DirectionalMass { spec, coords: dirs.iter().map(|z| spec.to_eigenbasis(z)).collect(), p };
    let vol = cube.volume();
    if spec.is_constant() {
        let mut out = vec![0.0; dirs.len()];
        g.eval(&cube.center(), &mut out)?;
        return Ok((out, true));
    }
    let r = integrate_vector(&g, cube, q)?;
    Ok((r.values.iter().map(|v| v / vol).collect(), r.converged))
}

fn check_p(p: f64, lower: f64) -> Result<()> {
    if !(p > lower) || !p.is_finite() {
        return Err(BmError::ParameterOutOfRange(format!("p = {p} must be finite and > {lower}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducingOperator {
    pub cube: Cube,
    pub a: HermitianMatrix,
    pub p: f64,
    pub method: ReducingMethod,
    /// Tight constants over the fitting directions.
    pub certified_c1: f64,
    pub certified_c2: f64,
    pub directions: usize,
    pub mvee_iterations: usize,
    /// Final MVEE residual; 0 for `exact_p2`.
    pub mvee_residual: f64,
    pub mvee_converged: bool,
    pub quadrature_converged: bool,
}

impl ReducingOperator {
    pub fn fit_ratio(&self) -> f64 {
        self.certified_c2 / self.certified_c1
    }
}

/// `(min, max)` of `ρ(z)/|Az|` over the given directions.
fn bracket(a: &HermitianMatrix, dirs: &[Vec<C64>], rho: &[f64]) -> Result<(f64, f64)> {
    let mut c1 = f64::INFINITY;
    let mut c2 = 0.0f64;
    for (z, r) in dirs.iter().zip(rho) {
        let az = euclid(&a.as_cmat().mat_vec(z));
        if !(az > 0.0) || !az.is_finite() {
            return Err(BmError::Degenerate(format!("|A z| = {az}")));
        }
        c1 = c1.min(r / az);
        c2 = c2.max(r / az);
    }
    Ok((c1, c2))
}

fn rho_from(avg: &[f64], p: f64) -> Result<Vec<f64>> {
    avg.iter()
        .map(|m| {
            let r = m.powf(1.0 / p);
            if r > 0.0 && r.is_finite() {
                Ok(r)
            } else {
                Err(BmError::Degenerate(format!("ρ_Q(z) = {r} in some direction")))
            }
        })
        .collect()
}

/// A reducing operator of order `p` for `W` on `cube`.
pub fn reducing_operator(
    spec: &MatrixWeightSpec,
    cube: &Cube,
    p: f64,
    method: ReducingMethod,
    q: &QuadratureSpec,
    seed: u64,
) -> Result<ReducingOperator> {
    check_p(p, 0.0)?;
    let d = spec.d();
    let dirs = fit_directions(d, seed);
    match method {
        ReducingMethod::ExactP2 => {
            if p != 2.0 {
                return Err(BmError::ParameterOutOfRange(format!("exact_p2 needs p = 2, got {p}")));
            }
            let (avg, conv) = mean_eigenvalues(spec, cube, q)?;
            let mean = match spec.basis() {
                Some(u) => HermitianMatrix::from_spectral(u, &avg),
                None => HermitianMatrix::from_real_diag(&avg),
            };
            let a = linalg::matrix_power(&mean, 0.5)?;
            let (rho_p, conv2) = directional_averages(spec, &dirs, p, cube, q)?;
            let (c1, c2) = bracket(&a, &dirs, &rho_from(&rho_p, p)?)?;
            Ok(ReducingOperator {
                cube: cube.clone(),
                a,
                p,
                method,
                certified_c1: c1,
                certified_c2: c2,
                directions: dirs.len(),
                mvee_iterations: 0,
                mvee_residual: 0.0,
                mvee_converged: true,
                quadrature_converged: conv && conv2,
            })
        }
        ReducingMethod::Mvee => {
            let (rho_p, conv) = directional_averages(spec, &dirs, p, cube, q)?;
            let rho = rho_from(&rho_p, p)?;
            let points: Vec<Vec<C64>> = dirs.iter().zip(&rho).map(|(z, r)| z.iter().map(|c| c / r).collect()).collect();
            let fit = mvee(&points, MVEE_TOL, MVEE_MAX_ITER)?;
            let scaled = HermitianMatrix::new(fit.x.scale(C64::new(d as f64, 0.0)))?;
            let a = linalg::matrix_power(&scaled, -0.5)?;
            let (c1, c2) = bracket(&a, &dirs, &rho)?;
            Ok(ReducingOperator {
                cube: cube.clone(),
                a,
                p,
                method,
                certified_c1: c1,
                certified_c2: c2,
                directions: dirs.len(),
                mvee_iterations: fit.iterations,
                mvee_residual: fit.residual,
                mvee_converged: fit.converged,
                quadrature_converged: conv,
            })
        }
    }
}

fn mean_eigenvalues(spec: &MatrixWeightSpec, cube: &Cube, q: &QuadratureSpec) -> Result<(Vec<f64>, bool)> {
    struct Eig<'a>(&'a MatrixWeightSpec);
    impl Integrand for Eig<'_> {
        fn components(&self) -> usize {
            self.0.d()
        }
        fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
            self.0.eigenvalues_into(x, out)
        }
        fn hints(&self) -> IntegrandHints {
            IntegrandHints { singular_points: self.0.singular_points(), ..Default::default() }
        }
    }
    if spec.is_constant() {
        return Ok((spec.eigenvalues(&cube.center())?, true));
    }
    let r = integrate_vector(&Eig(spec), cube, q)?;
    let vol = cube.volume();
    Ok((r.values.iter().map(|v| v / vol).collect(), r.converged))
}

/// Centered minimum-volume ellipsoid `{z : z* X^{-1} z ≤ d}` of a point set.
#[derive(Debug, Clone)]
pub struct MveeFit {
    pub x: CMat,
    pub iterations: usize,
    /// `max(max_i κ_i / d − 1, 1 − min_{u_i > 0} κ_i / d)` at exit.
    pub residual: f64,
    /// Residual reached `tol`; otherwise the cap was hit with residual at most [`MVEE_ACCEPT`].
    pub converged: bool,
}

/// Khachiyan-type ascent on the Hermitian design `X(u) = Σ u_i v_i v_i*`,
/// with pairwise (toward/away) steps so that redundant support points are
/// drained instead of zig-zagged over.
pub fn mvee(points: &[Vec<C64>], tol: f64, max_iter: usize) -> Result<MveeFit> {
    let m = points.len();
    let Some(d) = points.first().map(Vec::len) else {
        return Err(BmError::InvalidInput("mvee of an empty point set".into()));
    };
    let df = d as f64;
    let mut u = vec![1.0 / m as f64; m];
    let mut x = CMat::zeros(d, d);
    for (ui, v) in u.iter().zip(points) {
        add_outer(&mut x, v, v, *ui);
    }
    let dot = |a: &[C64], b: &[C64]| -> C64 { a.iter().zip(b).map(|(p, q)| p.conj() * q).sum() };
    let mut xinv = x.inverse()?;
    let mut kappa: Vec<f64> = points.iter().map(|v| dot(v, &xinv.mat_vec(v)).re).collect();
    let mut iterations = 0;
    loop {
        let (ja, ka) = kappa.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, k)| if *k > acc.1 { (i, *k) } else { acc });
        let (jb, kb) = kappa
            .iter()
            .enumerate()
            .filter(|(i, _)| u[*i] > 0.0)
            .fold((0, f64::INFINITY), |acc, (i, k)| if *k < acc.1 { (i, *k) } else { acc });
        let up = ka / df - 1.0;
        let down = 1.0 - kb / df;
        if up <= tol && down <= tol {
            return Ok(MveeFit { x, iterations, residual: up.max(down), converged: true });
        }
        if iterations >= max_iter {
            if up.max(down) <= MVEE_ACCEPT {
                return Ok(MveeFit { x, iterations, residual: up.max(down), converged: false });
            }
            return Err(BmError::NotConverged { what: "mvee", iterations });
        }
        iterations += 1;
        // pairwise step: move weight γ from point b to point a, with exact
        // line search on log det(X + γ(aa* − bb*))
        let a = &points[ja];
        let b = &points[jb];
        let wa = xinv.mat_vec(a);
        let wb = xinv.mat_vec(b);
        let cross = dot(a, &wb).norm_sqr();
        let curv = 2.0 * (ka * kb - cross);
        let mut gamma = if curv > 0.0 { (ka - kb) / curv } else { u[jb] };
        gamma = gamma.min(u[jb]);
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(BmError::NotConverged { what: "mvee", iterations });
        }
        u[ja] += gamma;
        u[jb] -= gamma;
        if u[jb] <= 1e-15 * u[ja] {
            u[jb] = 0.0;
        }
        add_outer(&mut x, a, a, gamma);
        add_outer(&mut x, b, b, -gamma);
        if iterations % 256 == 0 {
            xinv = x.inverse()?;
            for (k, p) in kappa.iter_mut().zip(points) {
                *k = dot(p, &xinv.mat_vec(p)).re;
            }
            continue;
        }
        // Sherman-Morrison for +γaa*, then for −γbb*
        let s1 = gamma / (1.0 + gamma * ka);
        let wab = dot(&wa, b);
        let wb1: Vec<C64> = wb.iter().zip(&wa).map(|(p, q)| p - q * wab * s1).collect();
        let kb1 = dot(b, &wb1).re;
        let s2 = gamma / (1.0 - gamma * kb1);
        add_outer(&mut xinv, &wa, &wa, -s1);
        add_outer(&mut xinv, &wb1, &wb1, s2);
        for (k, p) in kappa.iter_mut().zip(points) {
            *k += s2 * dot(p, &wb1).norm_sqr() - s1 * dot(p, &wa).norm_sqr();
        }
    }
}

/// `x += s · a b*`.
fn add_outer(x: &mut CMat, a: &[C64], b: &[C64], s: f64) {
    for (r, ar) in a.iter().enumerate() {
        for (c, bc) in b.iter().enumerate() {
            x[(r, c)] += ar * bc.conj() * s;
        }
    }
}

/// Empirical `(c1, c2)` over `n_dirs` fresh seeded directions.
pub fn verify_reducing(r: &ReducingOperator, spec: &MatrixWeightSpec, n_dirs: usize, seed: u64, q: &QuadratureSpec) -> Result<(f64, f64)> {
    let dirs = random_directions(spec.d(), n_dirs, seed ^ 0x9e37_79b9_7f4a_7c15);
    let (avg, _) = directional_averages(spec, &dirs, r.p, &r.cube, q)?;
    bracket(&r.a, &dirs, &rho_from(&avg, r.p)?)
}

/// `‖A_Q‖^p |Q| / W(Q)`.
pub fn norm_mass_equiv(spec: &MatrixWeightSpec, cube: &Cube, p: f64, method: ReducingMethod, q: &QuadratureSpec, seed: u64) -> Result<f64> {
    let r = reducing_operator(spec, cube, p, method, q, seed)?;
    let mass = crate::quadrature::weight_mass(spec, cube, q)?.value;
    Ok(linalg::spectral_norm(r.a.as_cmat()).powf(p) * cube.volume() / mass)
}

/// Tensor Gauss nodes of every subcell of `cube` at the given levels.
pub fn refined_nodes(cube: &Cube, m: usize, levels: &[u32]) -> Vec<Vec<f64>> {
    let (t, _) = gauss_legendre(m);
    let n = cube.dim();
    let mut out = Vec::new();
    for &level in levels {
        let mut cells = vec![cube.clone()];
        for _ in 0..level {
            cells = cells.iter().flat_map(Cube::children).collect();
        }
        for c in &cells {
            let total = m.pow(n as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut x = vec![0.0; n];
                for i in (0..n).rev() {
                    x[i] = c.corner[i] + c.side * t[rem % m];
                    rem /= m;
                }
                out.push(x);
            }
        }
    }
    out
}

/// The defining quantity of the `A_p` condition with the outer average over
/// `q_cube` and the inner over `r_cube`; `r_cube = q_cube` gives the
/// characteristic and `r_cube = 2^i Q` the dimension sequence.
pub fn ap_quantity(spec: &MatrixWeightSpec, p: f64, q_cube: &Cube, r_cube: &Cube, q: &QuadratureSpec) -> Result<(f64, bool)> {
    check_p(p, 0.0)?;
    if spec.is_constant() {
        // ‖W^{1/p} W^{-1/p}‖ = 1 at every pair
        return Ok((1.0, true));
    }
    let flag = AtomicBool::new(true);
    let value = if p > 1.0 {
        let pp = p / (p - 1.0);
        let outer = NestedAp { spec, p, pp, inner: r_cube, q, ok: &flag };
        let r = integrate_vector(&outer, q_cube, q)?;
        if !r.converged {
            flag.store(false, Ordering::Relaxed);
        }
        r.values[0] / q_cube.volume()
    } else {
        let nodes = refined_nodes(r_cube, q.points_per_axis, &ESS_SUP_LEVELS);
        let vals: Vec<f64> = nodes
            .par_iter()
            .map(|y| {
                let ly = spec.eigenvalues(y)?;
                let g = RatioIntegrand { spec, ly: &ly, p, power: p };
                let r = integrate_vector(&g, q_cube, q)?;
                if !r.converged {
                    flag.store(false, Ordering::Relaxed);
                }
                Ok(r.values[0] / q_cube.volume())
            })
            .collect::<Result<_>>()?;
        vals.into_iter().fold(0.0, f64::max)
    };
    Ok((value, flag.load(Ordering::Relaxed)))
}

/// `x ↦ ‖W^{1/p}(x) W^{-1/p}(y)‖^power` at fixed `y`.
struct RatioIntegrand<'a> {
    spec: &'a MatrixWeightSpec,
    ly: &'a [f64],
    p: f64,
    power: f64,
}

impl Integrand for RatioIntegrand<'_> {
    fn components(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut buf = [0.0; MAX_DIM];
        let lx = &mut buf[..self.spec.d()];
        self.spec.eigenvalues_into(x, lx)?;
        out[0] = ratio_norm_from(lx, self.ly, self.p).powf(self.power);
        Ok(())
    }
    fn hints(&self) -> IntegrandHints {
        IntegrandHints { singular_points: self.spec.singular_points(), ..Default::default() }
    }
}

/// `y ↦ ‖W^{1/p}(x) W^{-1/p}(y)‖^{p'}` at fixed `x`.
struct DualRatioIntegrand<'a> {
    spec: &'a MatrixWeightSpec,
    lx: &'a [f64],
    p: f64,
    pp: f64,
}

impl Integrand for DualRatioIntegrand<'_> {
    fn components(&self) -> usize {
        1
    }
    fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let mut buf = [0.0; MAX_DIM];
        let ly = &mut buf[..self.spec.d()];
        self.spec.eigenvalues_into(y, ly)?;
        out[0] = ratio_norm_from(self.lx, ly, self.p).powf(self.pp);
        Ok(())
    }
    fn hints(&self) -> IntegrandHints {
        IntegrandHints { singular_points: self.spec.singular_points(), ..Default::default() }
    }
}

/// Outer integrand `x ↦ (|R|^{-1} ∫_R ‖W^{1/p}(x)W^{-1/p}(y)‖^{p'} dy)^{p/p'}`.
struct NestedAp<'a> {
    spec: &'a MatrixWeightSpec,
    p: f64,
    pp: f64,
    inner: &'a Cube,
    q: &'a QuadratureSpec,
    ok: &'a AtomicBool,
}

impl Integrand for NestedAp<'_> {
    fn components(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let lx = self.spec.eigenvalues(x)?;
        let g = DualRatioIntegrand { spec: self.spec, lx: &lx, p: self.p, pp: self.pp };
        let r = integrate_vector(&g, self.inner, self.q)?;
        if !r.converged {
            self.ok.store(false, Ordering::Relaxed);
        }
        out[0] = (r.values[0] / self.inner.volume()).powf(self.p / self.pp);
        Ok(())
    }
    fn hints(&self) -> IntegrandHints {
        IntegrandHints { singular_points: self.spec.singular_points(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApCubeValue {
    pub cube: Cube,
    pub value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApEstimate {
    pub p: f64,
    pub characteristic: f64,
    pub cube_family: String,
    pub per_cube: Vec<ApCubeValue>,
    pub converged: bool,
    pub bound: &'static str,
    /// How the essential supremum was replaced, when `p ≤ 1`.
    pub ess_sup_rule: Option<String>,
}

/// Max of the `A_p` quantity over `family`.
pub fn ap_characteristic(spec: &MatrixWeightSpec, p: f64, family: &[Cube], q: &QuadratureSpec) -> Result<ApEstimate> {
    check_p(p, 0.0)?;
    if family.is_empty() {
        return Err(BmError::InvalidInput("empty cube family".into()));
    }
    let per_cube = family
        .par_iter()
        .map(|c| {
            let (value, converged) = ap_quantity(spec, p, c, c, q)?;
            Ok(ApCubeValue { cube: c.clone(), value, converged })
        })
        .collect::<Result<Vec<_>>>()?;
    let characteristic = per_cube.iter().map(|c| c.value).fold(0.0, f64::max);
    let converged = per_cube.iter().all(|c| c.converged);
    Ok(ApEstimate {
        p,
        characteristic,
        cube_family: describe_family(family),
        per_cube,
        converged,
        bound: LOWER_BOUND_LABEL,
        ess_sup_rule: (p <= 1.0).then(|| ess_sup_rule(q)),
    })
}

fn ess_sup_rule(q: &QuadratureSpec) -> String {
    format!(
        "max over {}-point Gauss nodes of subcells at levels {:?}",
        q.points_per_axis, ESS_SUP_LEVELS
    )
}

fn describe_family(family: &[Cube]) -> String {
    let sides: Vec<f64> = family.iter().map(|c| c.side).collect();
    let lo = sides.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sides.iter().copied().fold(0.0, f64::max);
    format!("{} cubes, sides in [{lo}, {hi}]", family.len())
}

/// Least-squares slope of `ys` against `0, 1, 2, ...` and the RMS residual.
pub fn ls_slope(ys: &[f64]) -> (f64, f64) {
    let m = ys.len() as f64;
    let xbar = (m - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = (0..ys.len()).map(|i| (i as f64 - xbar).powi(2)).sum();
    let sxy: f64 = ys.iter().enumerate().map(|(i, y)| (i as f64 - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let ss: f64 = ys.iter().enumerate().map(|(i, y)| (y - ybar - slope * (i as f64 - xbar)).powi(2)).sum();
    (slope, (ss / m).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionEstimate {
    pub p: f64,
    pub d_tilde: f64,
    /// Dimension of `W^{-1/(p-1)}` at exponent `p'`; only for `p > 1`.
    pub dual_d_tilde: Option<f64>,
    pub beta: f64,
    pub regression_residual: f64,
    /// `log_2` of the quantity over `2^i Q`, per base cube.
    pub sequences: Vec<Vec<f64>>,
    pub dual_sequences: Vec<Vec<f64>>,
    pub converged: bool,
    pub bound: &'static str,
}

fn dimension_sequences(spec: &MatrixWeightSpec, p: f64, base: &[Cube], i_max: u32, q: &QuadratureSpec) -> Result<(Vec<Vec<f64>>, bool)> {
    let jobs: Vec<(usize, u32)> = (0..base.len()).flat_map(|b| (0..=i_max).map(move |i| (b, i))).collect();
    let vals = jobs
        .par_iter()
        .map(|&(b, i)| ap_quantity(spec, p, &base[b], &base[b].dilate(f64::from(1u32 << i)), q))
        .collect::<Result<Vec<_>>>()?;
    let converged = vals.iter().all(|v| v.1);
    let seqs = vals.chunks(i_max as usize + 1).map(|c| c.iter().map(|v| v.0.log2()).collect()).collect();
    Ok((seqs, converged))
}

/// `d̃`, the dual dimension and `β` over a family of base cubes.
pub fn ap_dimension(
    spec: &MatrixWeightSpec,
    p: f64,
    base_cubes: &[Cube],
    i_max: u32,
    n_dirs: usize,
    seed: u64,
    q: &QuadratureSpec,
) -> Result<DimensionEstimate> {
    check_p(p, 0.0)?;
    if i_max < 3 {
        return Err(BmError::ParameterOutOfRange(format!("i_max = {i_max} must be >= 3")));
    }
    if base_cubes.is_empty() {
        return Err(BmError::InvalidInput("empty base cube family".into()));
    }
    let (sequences, mut converged) = dimension_sequences(spec, p, base_cubes, i_max, q)?;
    let mut d_tilde = f64::NEG_INFINITY;
    let mut residual = 0.0f64;
    for s in &sequences {
        let (slope, res) = ls_slope(s);
        d_tilde = d_tilde.max(slope);
        residual = residual.max(res);
    }
    let (dual_d_tilde, dual_sequences) = if p > 1.0 {
        let dual = spec.powered(-1.0 / (p - 1.0))?;
        let pp = p / (p - 1.0);
        let (seqs, conv) = dimension_sequences(&dual, pp, base_cubes, i_max, q)?;
        converged &= conv;
        let mut dd = f64::NEG_INFINITY;
        for s in &seqs {
            let (slope, res) = ls_slope(s);
            dd = dd.max(slope);
            residual = residual.max(res);
        }
        (Some(dd), seqs)
    } else {
        (None, Vec::new())
    };
    let beta = doubling_exponent(spec, p, base_cubes, n_dirs, seed, q)?;
    Ok(DimensionEstimate {
        p,
        d_tilde,
        dual_d_tilde,
        beta,
        regression_residual: residual,
        sequences,
        dual_sequences,
        converged,
        bound: LOWER_BOUND_LABEL,
    })
}

/// `log_2 max ∫_{2Q} w_y / ∫_Q w_y` over cubes and sampled directions, with
/// `2Q` the concentric dilate.
pub fn doubling_exponent(spec: &MatrixWeightSpec, p: f64, cubes: &[Cube], n_dirs: usize, seed: u64, q: &QuadratureSpec) -> Result<f64> {
    check_p(p, 0.0)?;
    let mut dirs = structured_directions(spec.d());
    dirs.extend(random_directions(spec.d(), n_dirs, seed));
    let ratios = cubes
        .par_iter()
        .map(|c| {
            let big = c.dilate(2.0);
            let (small_avg, _) = directional_averages(spec, &dirs, p, c, q)?;
            let (big_avg, _) = directional_averages(spec, &dirs, p, &big, q)?;
            let vol_ratio = big.volume() / c.volume();
            Ok(small_avg.iter().zip(&big_avg).map(|(s, b)| vol_ratio * b / s).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max).log2())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub q_cube: Cube,
    pub r_cube: Cube,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCheck {
    pub rows: Vec<RatioRow>,
    /// Smallest `C` with `lhs ≤ C·rhs` on every row.
    pub fitted_c: f64,
}

/// The comparison bound for `‖A_Q A_R^{-1}‖`.
pub fn reducing_ratio_bound(p: f64, dims: &DimensionEstimate, q_cube: &Cube, r_cube: &Cube) -> Result<f64> {
    let lq = q_cube.side;
    let lr = r_cube.side;
    let dist = q_cube
        .center()
        .iter()
        .zip(r_cube.center())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let sep = 1.0 + dist / lq.max(lr);
    let d_t = dims.d_tilde.max(0.0);
    if p > 1.0 {
        let pp = p / (p - 1.0);
        let dd = dims
            .dual_d_tilde
            .ok_or_else(|| BmError::InvalidInput("dual dimension required for p > 1".into()))?
            .max(0.0);
        let size = (lr / lq).powf(d_t / p).max((lq / lr).powf(dd / pp));
        Ok(size * sep.powf(d_t / p + dd / pp))
    } else {
        Ok((lr / lq).powf(d_t / p).max(1.0) * sep.powf(d_t / p))
    }
}

pub fn reducing_ratio_check(
    spec: &MatrixWeightSpec,
    p: f64,
    pairs: &[(Cube, Cube)],
    dims: &DimensionEstimate,
    method: ReducingMethod,
    q: &QuadratureSpec,
    seed: u64,
) -> Result<RatioCheck> {
    let rows = pairs
        .par_iter()
        .map(|(qc, rc)| {
            let aq = reducing_operator(spec, qc, p, method, q, seed)?;
            let ar = reducing_operator(spec, rc, p, method, q, seed)?;
            let prod = aq.a.as_cmat() * &ar.a.as_cmat().inverse()?;
            Ok(RatioRow {
                q_cube: qc.clone(),
                r_cube: rc.clone(),
                lhs: linalg::spectral_norm(&prod),
                rhs: reducing_ratio_bound(p, dims, qc, rc)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fitted_c = rows.iter().map(|r| r.lhs / r.rhs).fold(0.0, f64::max);
    Ok(RatioCheck { rows, fitted_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testing::random_spd;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn unit_cube(n: usize) -> Cube {
        Cube::new(vec![0.0; n], 1.0)
    }

    fn constant_weight(w0: &HermitianMatrix) -> MatrixWeightSpec {
        let eig = linalg::hermitian_eig(w0).unwrap();
        let basis: Vec<Vec<C64>> = eig.basis.to_rows();
        let d = w0.dim();
        MatrixWeightSpec::new(
            crate::weights::WeightFamily::DiagonalPower { gammas: vec![0.0; d], basis: Some(basis), scales: Some(eig.eigenvalues.clone()) },
            d,
            1,
        )
        .unwrap()
    }

    fn max_diff(a: &CMat, b: &CMat) -> f64 {
        (a - b).max_abs()
    }

    #[test]
    fn exact_p2_constant_weight_is_square_root() {
        for seed in 0..20 {
            let d = 1 + (seed as usize % 4);
            let w0 = random_spd(&mut ChaCha8Rng::seed_from_u64(seed), d);
            let spec = constant_weight(&w0);
            let r = reducing_operator(&spec, &unit_cube(1), 2.0, ReducingMethod::ExactP2, &q(), 7).unwrap();
            let root = linalg::matrix_power(&w0, 0.5).unwrap();
            assert!(max_diff(r.a.as_cmat(), root.as_cmat()) < 1e-10, "seed {seed}");
            assert!((r.certified_c1 - 1.0).abs() < 1e-10 && (r.certified_c2 - 1.0).abs() < 1e-10);
            let (c1, c2) = verify_reducing(&r, &spec, 50, 3, &q()).unwrap();
            assert!(c1 <= 1.0 + 1e-10 && c2 >= 1.0 - 1e-10 && (c2 - c1) < 1e-10);
        }
    }

    #[test]
    fn identity_gives_identity() {
        for p in [0.5, 1.0, 2.0, 3.0] {
            let spec = MatrixWeightSpec::identity(2, 1);
            let r = reducing_operator(&spec, &unit_cube(1), p, ReducingMethod::Mvee, &q(), 1).unwrap();
            assert!(max_diff(r.a.as_cmat(), &CMat::identity(2)) < 1e-6, "p={p}: {:?}", r.a);
        }
    }

    #[test]
    fn scalar_linear_weight_p1() {
        let spec = MatrixWeightSpec::scalar_power(1.0, 1, 1).unwrap();
        let r = reducing_operator(&spec, &unit_cube(1), 1.0, ReducingMethod::Mvee, &q(), 1).unwrap();
        assert!((r.a.as_cmat()[(0, 0)].re - 0.5).abs() < 1e-7, "{:?}", r.a);
        assert!((r.certified_c1 - 1.0).abs() < 1e-7 && (r.certified_c2 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn mvee_respects_john_bound() {
        let basis = vec![
            vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)],
            vec![C64::new(0.0, 0.8), C64::new(0.6, 0.0)],
        ];
        let spec = MatrixWeightSpec::new(
            crate::weights::WeightFamily::DiagonalPower { gammas: vec![0.7, -0.4], basis: Some(basis), scales: None },
            2,
            1,
        )
        .unwrap();
        for p in [1.0, 2.0, 3.0] {
            let cube = Cube::new(vec![0.0], 0.5);
            let r = reducing_operator(&spec, &cube, p, ReducingMethod::Mvee, &q(), 11).unwrap();
            let (c1, c2) = verify_reducing(&r, &spec, 200, 5, &q()).unwrap();
            assert!(c2 / c1 <= 2f64.sqrt() * 1.05, "p={p}: {c1} {c2}");
        }
    }

    #[test]
    fn mvee_cap_flags_instead_of_failing_when_close() {
        let pts: Vec<Vec<C64>> = fit_directions(2, 9)
            .into_iter()
            .enumerate()
            .map(|(i, z)| z.iter().map(|c| c * (1.0 + 0.1 * ((i * 7) % 5) as f64)).collect())
            .collect();
        let fit = mvee(&pts, 0.0, 20_000).unwrap();
        assert!(!fit.converged && fit.residual <= MVEE_ACCEPT, "{}", fit.residual);
        assert!(mvee(&pts, 0.0, 1).is_err());
        let tight = mvee(&pts, MVEE_TOL, MVEE_MAX_ITER).unwrap();
        assert!(tight.converged && tight.residual <= MVEE_TOL);
    }

    #[test]
    fn mvee_on_ellipse_is_exact() {
        // points on the boundary of {z : z* M z = 1} recover M
        let m = HermitianMatrix::new(CMat::from_rows(vec![
            vec![C64::new(2.0, 0.0), C64::new(0.3, 0.4)],
            vec![C64::new(0.3, -0.4), C64::new(1.0, 0.0)],
        ]).unwrap())
        .unwrap();
        let dirs = fit_directions(2, 4);
        let pts: Vec<Vec<C64>> = dirs
            .iter()
            .map(|z| {
                let mz = m.as_cmat().mat_vec(z);
                let s: f64 = z.iter().zip(&mz).map(|(a, b)| (a.conj() * b).re).sum();
                z.iter().map(|c| c / s.sqrt()).collect()
            })
            .collect();
        let fit = mvee(&pts, 1e-9, MVEE_MAX_ITER).unwrap();
        let recovered = fit.x.scale(C64::new(2.0, 0.0)).inverse().unwrap();
        assert!(max_diff(&recovered, m.as_cmat()) < 1e-6, "{recovered:?}");
    }

    #[test]
    fn norm_mass_equivalence() {
        let id = MatrixWeightSpec::identity(3, 2);
        let r = norm_mass_equiv(&id, &unit_cube(2), 1.5, ReducingMethod::Mvee, &q(), 0).unwrap();
        assert!((r - 1.0).abs() < 1e-6);
        let diag = MatrixWeightSpec::constant_diagonal(vec![4.0, 9.0], 1).unwrap();
        let r = norm_mass_equiv(&diag, &unit_cube(1), 2.0, ReducingMethod::ExactP2, &q(), 0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let pw = MatrixWeightSpec::diagonal_power(vec![0.5, -0.3], 1).unwrap();
        for j in -2..3 {
            let cube = crate::dyadic::DyadicIndex::new(j, vec![0]).unwrap().cube().unwrap();
            let r = norm_mass_equiv(&pw, &cube, 2.0, ReducingMethod::Mvee, &q(), 0).unwrap();
            assert!(r >= 1.0 / 2.2 && r <= 2.2, "j={j}: {r}");
        }
    }

    #[test]
    fn identity_class_estimates() {
        let id = MatrixWeightSpec::identity(2, 2);
        let fam: Vec<Cube> = (0..3).map(|j| crate::dyadic::DyadicIndex::new(j, vec![1, -1]).unwrap().cube().unwrap()).collect();
        for p in [0.5, 1.0, 2.0, 3.0] {
            let est = ap_characteristic(&id, p, &fam, &q()).unwrap();
            assert_eq!(est.characteristic, 1.0);
            let dims = ap_dimension(&id, p, &fam[..1], 3, 16, 1, &q()).unwrap();
            assert!(dims.d_tilde.abs() < 0.05);
            assert!(dims.dual_d_tilde.map_or(true, |d| d.abs() < 0.05));
            assert!((dims.beta - 2.0).abs() < 0.05, "{}", dims.beta);
        }
    }

    #[test]
    fn scalar_a2_characteristic_matches_product_oracle() {
        // A_2 of |x|^{1/2} on [1,2): mean(x^{1/2}) · mean(x^{-1/2})
        let spec = MatrixWeightSpec::scalar_power(0.5, 1, 1).unwrap();
        let cube = Cube::new(vec![1.0], 1.0);
        let est = ap_characteristic(&spec, 2.0, &[cube], &q()).unwrap();
        let oracle = (2.0 / 3.0) * (2f64.powf(1.5) - 1.0) * 2.0 * (2f64.sqrt() - 1.0);
        assert!((est.characteristic - oracle).abs() < 1e-6 * oracle, "{} vs {oracle}", est.characteristic);
        assert!(est.converged);
    }

    #[test]
    fn characteristic_monotone_under_enlargement() {
        let spec = MatrixWeightSpec::scalar_power(0.5, 1, 1).unwrap();
        let fam: Vec<Cube> = (0..4).map(|i| Cube::new(vec![f64::from(i)], 1.0)).collect();
        let small = ap_characteristic(&spec, 2.0, &fam[1..], &q()).unwrap().characteristic;
        let large = ap_characteristic(&spec, 2.0, &fam, &q()).unwrap().characteristic;
        assert!(large >= small);
    }

    #[test]
    fn doubling_of_linear_weight() {
        let spec = MatrixWeightSpec::scalar_power(1.0, 1, 1).unwrap();
        let cube = Cube::new(vec![-0.5], 1.0);
        let beta = doubling_exponent(&spec, 1.0, &[cube], 8, 0, &q()).unwrap();
        assert!((beta - 2.0).abs() < 0.1, "{beta}");
        let c = constant_weight(&random_spd(&mut ChaCha8Rng::seed_from_u64(9), 3));
        let beta = doubling_exponent(&c, 2.0, &[unit_cube(1)], 8, 0, &q()).unwrap();
        assert!((beta - 1.0).abs() < 0.05);
    }

    #[test]
    fn ratio_check_trivial_cases() {
        let id = MatrixWeightSpec::identity(2, 1);
        let fam = [unit_cube(1)];
        let dims = ap_dimension(&id, 2.0, &fam, 3, 8, 0, &q()).unwrap();
        let pairs = vec![(unit_cube(1), unit_cube(1)), (unit_cube(1), Cube::new(vec![3.0], 4.0))];
        let chk = reducing_ratio_check(&id, 2.0, &pairs, &dims, ReducingMethod::ExactP2, &q(), 0).unwrap();
        assert!((chk.rows[0].lhs - 1.0).abs() < 1e-12 && (chk.rows[0].rhs - 1.0).abs() < 1e-12);
        assert!(chk.rows.iter().all(|r| r.rhs >= 1.0));
        assert!(chk.fitted_c <= 1.0 + 1e-9);
    }

    #[test]
    fn least_squares_slope() {
        let (s, r) = ls_slope(&[1.0, 3.0, 5.0, 7.0]);
        assert!((s - 2.0).abs() < 1e-15 && r < 1e-15);
    }
}
