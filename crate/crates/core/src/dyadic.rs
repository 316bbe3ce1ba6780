//! Dyadic cube lattice.
//!
//! A cube `Q_{j,k}` is the half-open product `Π_i [2^{-j} k_i, 2^{-j}(k_i + 1))`.
//! The integer pair `(j, k)` is the identity of the cube; every real-valued
//! quantity (corner, side, volume) is derived from it and is exact in binary
//! floating point as long as `|j| <= MAX_SCALE`.

use serde::{Deserialize, Serialize};

use crate::error::{BmError, Result};
use crate::policy::{MAX_SCALE, MAX_WINDOW_CUBES};

/// `2^e` for `|e|` well inside the `f64` exponent range.
#[inline]
pub fn pow2(e: i32) -> f64 {
    f64::from_bits(((1023 + e as i64) as u64) << 52)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicIndex {
    pub j: i32,
    pub k: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeGeometry {
    pub corner: Vec<f64>,
    pub side: f64,
    pub volume: f64,
}

impl DyadicIndex {
    pub fn new(j: i32, k: Vec<i64>) -> Result<Self> {
        if k.is_empty() {
            return Err(BmError::InvalidInput("dyadic index needs n >= 1".into()));
        }
        check_scale(j)?;
        Ok(Self { j, k })
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn side(&self) -> Result<f64> {
        check_scale(self.j)?;
        Ok(pow2(-self.j))
    }

    pub fn geometry(&self) -> Result<CubeGeometry> {
        let side = self.side()?;
        let corner = self.k.iter().map(|&ki| ki as f64 * side).collect();
        let volume = pow2(-self.j * self.dim() as i32);
        Ok(CubeGeometry { corner, side, volume })
    }

    /// The real cube occupied by this index.
    pub fn cube(&self) -> Result<Cube> {
        let g = self.geometry()?;
        Ok(Cube::new(g.corner, g.side))
    }

    /// The `steps`-th dyadic ancestor; floor division keeps negative positions correct.
    pub fn parent(&self, steps: u32) -> DyadicIndex {
        let k = self
            .k
            .iter()
            .map(|&ki| if steps >= 63 { if ki < 0 { -1 } else { 0 } } else { ki >> steps })
            .collect();
        DyadicIndex { j: self.j - steps as i32, k }
    }

    /// The `2^n` children in lexicographic order.
    pub fn children(&self) -> Vec<DyadicIndex> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                let k = (0..n)
                    .map(|i| 2 * self.k[i] + ((mask >> (n - 1 - i)) & 1) as i64)
                    .collect();
                DyadicIndex { j: self.j + 1, k }
            })
            .collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> Result<bool> {
        Ok(self.cube()?.contains(x))
    }

    /// True when `self` is contained in `other` (possibly equal).
    pub fn is_within(&self, other: &DyadicIndex) -> bool {
        self.j >= other.j && self.parent((self.j - other.j) as u32) == *other
    }
}

fn check_scale(j: i32) -> Result<()> {
    if j.abs() > MAX_SCALE {
        Err(BmError::ScaleOverflow { j: j as i64, max: MAX_SCALE })
    } else {
        Ok(())
    }
}

/// The scale-`j` cube containing `x` under the half-open convention.
pub fn containing_cube(x: &[f64], j: i32) -> Result<DyadicIndex> {
    check_scale(j)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(BmError::NonFinite("containing_cube point"));
    }
    let scale = pow2(j);
    let k = x.iter().map(|&xi| (xi * scale).floor() as i64).collect();
    DyadicIndex::new(j, k)
}

/// An axis-aligned half-open cube `Π_i [corner_i, corner_i + side)`, not
/// necessarily dyadic (dilates `λQ` and quadrature cells use it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub corner: Vec<f64>,
    pub side: f64,
}

impl Cube {
    pub fn new(corner: Vec<f64>, side: f64) -> Self {
        Self { corner, side }
    }

    pub fn dim(&self) -> usize {
        self.corner.len()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn center(&self) -> Vec<f64> {
        self.corner.iter().map(|c| c + 0.5 * self.side).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.corner
            .iter()
            .zip(x)
            .all(|(&c, &xi)| c <= xi && xi < c + self.side)
    }

    /// `λQ`: same center, side `λ ℓ(Q)`.
    pub fn dilate(&self, lambda: f64) -> Cube {
        let half = 0.5 * lambda * self.side;
        let corner = self.center().iter().map(|c| c - half).collect();
        Cube::new(corner, lambda * self.side)
    }

    pub fn children(&self) -> Vec<Cube> {
        let n = self.dim();
        let h = 0.5 * self.side;
        (0..1usize << n)
            .map(|mask| {
                let corner = (0..n)
                    .map(|i| self.corner[i] + if (mask >> (n - 1 - i)) & 1 == 1 { h } else { 0.0 })
                    .collect();
                Cube::new(corner, h)
            })
            .collect()
    }

    pub fn bounds(&self) -> BoxBounds {
        BoxBounds {
            lo: self.corner.clone(),
            hi: self.corner.iter().map(|c| c + self.side).collect(),
        }
    }

    /// Whether the closure of the cube contains `x`.
    pub fn closure_contains(&self, x: &[f64]) -> bool {
        self.corner
            .iter()
            .zip(x)
            .all(|(&c, &xi)| c <= xi && xi <= c + self.side)
    }

    /// Whether the open interiors of the two cubes overlap.
    pub fn interiors_overlap(&self, other: &Cube) -> bool {
        (0..self.dim()).all(|i| {
            self.corner[i] < other.corner[i] + other.side
                && other.corner[i] < self.corner[i] + self.side
        })
    }
}

/// Closed axis-aligned box, used for support and coverage hints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn around(center: &[f64], radius: f64) -> Self {
        Self {
            lo: center.iter().map(|c| c - radius).collect(),
            hi: center.iter().map(|c| c + radius).collect(),
        }
    }

    pub fn intersect(&self, other: &BoxBounds) -> Option<BoxBounds> {
        let lo: Vec<f64> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        if lo.iter().zip(&hi).all(|(l, h)| l <= h) {
            Some(BoxBounds { lo, hi })
        } else {
            None
        }
    }

    pub fn union(&self, other: &BoxBounds) -> BoxBounds {
        BoxBounds {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    pub fn translate(&self, y: &[f64]) -> BoxBounds {
        BoxBounds {
            lo: self.lo.iter().zip(y).map(|(a, b)| a + b).collect(),
            hi: self.hi.iter().zip(y).map(|(a, b)| a + b).collect(),
        }
    }

    /// Whether the half-open cube meets this closed box.
    pub fn meets_cube(&self, cube: &Cube) -> bool {
        (0..cube.dim()).all(|i| cube.corner[i] <= self.hi[i] && self.lo[i] < cube.corner[i] + cube.side)
    }
}

/// A finite truncation of the dyadic lattice: scales `j_min..=j_max` and the
/// cubes meeting the closed ball `B(0, spatial_radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeWindow {
    pub j_min: i32,
    pub j_max: i32,
    pub spatial_radius: f64,
    pub n: usize,
}

impl LatticeWindow {
    pub fn new(j_min: i32, j_max: i32, spatial_radius: f64, n: usize) -> Result<Self> {
        let w = Self { j_min, j_max, spatial_radius, n };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(BmError::InvalidInput("window dimension must be >= 1".into()));
        }
        if self.j_min > self.j_max {
            return Err(BmError::InvalidInput(format!(
                "window scales reversed: j_min={} > j_max={}",
                self.j_min, self.j_max
            )));
        }
        if !(self.spatial_radius > 0.0 && self.spatial_radius.is_finite()) {
            return Err(BmError::InvalidInput("window radius must be positive and finite".into()));
        }
        check_scale(self.j_min)?;
        check_scale(self.j_max)
    }

    pub fn scales(&self) -> impl Iterator<Item = i32> {
        self.j_min..=self.j_max
    }

    /// Closed box containing every cube of the window.
    pub fn bounding_box(&self) -> BoxBounds {
        let reach = self.spatial_radius + pow2(-self.j_min);
        BoxBounds::around(&vec![0.0; self.n], reach)
    }
}

/// Whether the half-open cube at `(j, k)` has a point in the closed ball `B(0, r)`.
fn cube_meets_ball(k: &[i64], side: f64, r: f64) -> bool {
    let mut dist2 = 0.0;
    let mut attained = true;
    for &ki in k {
        let a = ki as f64 * side;
        let b = a + side;
        if a > 0.0 {
            dist2 += a * a;
        } else if b <= 0.0 {
            // sup of the half-open interval is b, which is not attained
            dist2 += b * b;
            attained = false;
        }
    }
    let r2 = r * r;
    dist2 < r2 || (dist2 == r2 && attained)
}

/// Cubes of scale `j` meeting the window ball, in lexicographic order of `k`.
pub fn cubes_in_window(w: &LatticeWindow, j: i32) -> Result<Vec<DyadicIndex>> {
    w.validate()?;
    if j < w.j_min || j > w.j_max {
        return Err(BmError::InvalidInput(format!(
            "scale {j} outside window [{}, {}]",
            w.j_min, w.j_max
        )));
    }
    let side = pow2(-j);
    let reach = (w.spatial_radius / side).floor() as i64;
    let lo = -reach - 1;
    let hi = reach + 1;
    let per_axis = (hi - lo + 1) as u128;
    let count = per_axis.checked_pow(w.n as u32).unwrap_or(u128::MAX);
    if count > MAX_WINDOW_CUBES {
        return Err(BmError::WindowTooLarge { count, cap: MAX_WINDOW_CUBES });
    }
    let mut out = Vec::new();
    let mut k = vec![lo; w.n];
    loop {
        if cube_meets_ball(&k, side, w.spatial_radius) {
            out.push(DyadicIndex { j, k: k.clone() });
        }
        // odometer increment, last axis fastest
        let mut axis = w.n;
        loop {
            if axis == 0 {
                return Ok(out);
            }
            axis -= 1;
            if k[axis] < hi {
                k[axis] += 1;
                for later in &mut k[axis + 1..] {
                    *later = lo;
                }
                break;
            }
        }
    }
}

/// Window cubes of scale `j` that also meet the closed box `region`.
pub fn window_cubes_meeting(w: &LatticeWindow, j: i32, region: &BoxBounds) -> Result<Vec<DyadicIndex>> {
    w.validate()?;
    let Some(clip) = region.intersect(&w.bounding_box()) else {
        return Ok(Vec::new());
    };
    let side = pow2(-j);
    Ok(cubes_meeting_box(&clip, j)?
        .into_iter()
        .filter(|idx| cube_meets_ball(&idx.k, side, w.spatial_radius))
        .collect())
}

/// Every cube of the window, scale by scale, lexicographic in `(j, k)`.
pub fn window_cubes(w: &LatticeWindow) -> Result<Vec<DyadicIndex>> {
    let mut all = Vec::new();
    for j in w.scales() {
        all.extend(cubes_in_window(w, j)?);
    }
    Ok(all)
}

/// Scale-`j` cubes meeting a closed box, lexicographic.
pub fn cubes_meeting_box(bounds: &BoxBounds, j: i32) -> Result<Vec<DyadicIndex>> {
    check_scale(j)?;
    let n = bounds.lo.len();
    let scale = pow2(j);
    let lo: Vec<i64> = bounds.lo.iter().map(|v| (v * scale).floor() as i64).collect();
    // a closed upper face at a lattice point only touches the next cube's boundary
    let hi: Vec<i64> = bounds.hi.iter().map(|v| (v * scale).floor() as i64).collect();
    let count = lo
        .iter()
        .zip(&hi)
        .try_fold(1u128, |acc, (l, h)| acc.checked_mul((h - l + 1).max(0) as u128))
        .unwrap_or(u128::MAX);
    if count > MAX_WINDOW_CUBES {
        return Err(BmError::WindowTooLarge { count, cap: MAX_WINDOW_CUBES });
    }
    if lo.iter().zip(&hi).any(|(l, h)| l > h) {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut k = lo.clone();
    loop {
        out.push(DyadicIndex { j, k: k.clone() });
        let mut axis = n;
        loop {
            if axis == 0 {
                return Ok(out);
            }
            axis -= 1;
            if k[axis] < hi[axis] {
                k[axis] += 1;
                for (i, later) in k.iter_mut().enumerate().skip(axis + 1) {
                    *later = lo[i];
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx(j: i32, k: &[i64]) -> DyadicIndex {
        DyadicIndex::new(j, k.to_vec()).unwrap()
    }

    #[test]
    fn geometry_examples() {
        let g = idx(0, &[0]).geometry().unwrap();
        assert_eq!((g.corner, g.side, g.volume), (vec![0.0], 1.0, 1.0));
        let g = idx(2, &[1]).geometry().unwrap();
        assert_eq!((g.corner, g.side), (vec![0.25], 0.25));
        let g = idx(-1, &[-1, 0]).geometry().unwrap();
        assert_eq!((g.corner, g.side, g.volume), (vec![-2.0, 0.0], 2.0, 4.0));
    }

    #[test]
    fn scale_overflow_rejected() {
        assert!(matches!(DyadicIndex::new(41, vec![0]), Err(BmError::ScaleOverflow { .. })));
        let far = DyadicIndex { j: -41, k: vec![0] };
        assert!(far.geometry().is_err());
        assert!(idx(40, &[3]).geometry().is_ok());
    }

    #[test]
    fn parent_examples() {
        assert_eq!(idx(3, &[5]).parent(1), idx(2, &[2]));
        assert_eq!(idx(3, &[-5]).parent(1), idx(2, &[-3]));
        let q = idx(4, &[7, -9]);
        assert_eq!(q.parent(0), q);
    }

    #[test]
    fn containing_cube_examples() {
        assert_eq!(containing_cube(&[0.3], 2).unwrap(), idx(2, &[1]));
        for j in -5..=5 {
            assert_eq!(containing_cube(&[0.0, 0.0], j).unwrap().k, vec![0, 0]);
        }
        assert_eq!(containing_cube(&[-0.1], 0).unwrap(), idx(0, &[-1]));
    }

    /// Brute-force membership oracle: does some sample point of the cube lie in the ball?
    fn window_oracle(r: f64, j: i32) -> Vec<i64> {
        let side = pow2(-j);
        let range = (r / side).ceil() as i64 + 3;
        (-range..=range)
            .filter(|&k| {
                let a = k as f64 * side;
                (0..1024).any(|i| (a + side * i as f64 / 1024.0).abs() <= r)
            })
            .collect()
    }

    #[test]
    fn window_examples_1d() {
        let w = LatticeWindow::new(-3, 3, 1.0, 1).unwrap();
        let ks = |j| cubes_in_window(&w, j).unwrap().into_iter().map(|c| c.k[0]).collect::<Vec<_>>();
        assert_eq!(ks(0), window_oracle(1.0, 0));
        assert_eq!(ks(0), vec![-1, 0, 1]);
        assert_eq!(ks(1), window_oracle(1.0, 1));
        assert_eq!(ks(1).len(), 5);
        let small = LatticeWindow::new(-3, 0, 0.1, 1).unwrap();
        let got: Vec<i64> = cubes_in_window(&small, -3).unwrap().into_iter().map(|c| c.k[0]).collect();
        assert_eq!(got, window_oracle(0.1, -3));
        assert_eq!(got, vec![-1, 0]);
    }

    #[test]
    fn window_guard() {
        let w = LatticeWindow::new(0, 30, 10.0, 2).unwrap();
        assert!(matches!(cubes_in_window(&w, 30), Err(BmError::WindowTooLarge { .. })));
        assert!(cubes_in_window(&w, 31).is_err());
    }

    #[test]
    fn children_partition_parent() {
        let q = idx(1, &[1, -2]);
        let kids = q.children();
        assert_eq!(kids.len(), 4);
        assert!(kids.windows(2).all(|w| w[0] < w[1]));
        assert!(kids.iter().all(|c| c.parent(1) == q && c.is_within(&q)));
    }

    proptest! {
        #[test]
        fn parent_composes(j in -20i32..20, k in proptest::collection::vec(-1000i64..1000, 1..4), s1 in 0u32..10, s2 in 0u32..10) {
            let q = DyadicIndex { j, k };
            prop_assert_eq!(q.parent(s1).parent(s2), q.parent(s1 + s2));
            let p = q.parent(s1);
            prop_assert!(q.is_within(&p));
        }

        #[test]
        fn corner_roundtrip(j in -40i32..=40, k in proptest::collection::vec(-100_000i64..100_000, 1..4)) {
            let q = DyadicIndex::new(j, k).unwrap();
            let g = q.geometry().unwrap();
            prop_assert_eq!(containing_cube(&g.corner, j).unwrap(), q);
        }

        #[test]
        fn window_partitions_region(j in -2i32..4, r in 0.05f64..3.0, pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 50)) {
            let w = LatticeWindow::new(-2, 4, r, 2).unwrap();
            let cubes = cubes_in_window(&w, j).unwrap();
            for (x, y) in pts {
                let p = [x, y];
                let hits = cubes.iter().filter(|c| c.contains_point(&p).unwrap()).count();
                prop_assert!(hits <= 1);
                if x * x + y * y <= r * r {
                    prop_assert_eq!(hits, 1);
                }
            }
        }
    }

    #[test]
    fn window_region_filter_matches_brute_force() {
        let w = LatticeWindow::new(-2, 3, 1.5, 2).unwrap();
        let region = BoxBounds { lo: vec![0.25, -3.0], hi: vec![1.0, 0.5] };
        for j in w.scales() {
            let fast = window_cubes_meeting(&w, j, &region).unwrap();
            let slow: Vec<DyadicIndex> = cubes_in_window(&w, j)
                .unwrap()
                .into_iter()
                .filter(|idx| region.meets_cube(&idx.cube().unwrap()))
                .collect();
            assert_eq!(fast, slow, "j={j}");
        }
    }
}
