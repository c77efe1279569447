//! Irrational-winding codebooks.
//!
//! A codebook is the first `U` points of the discrete trajectory
//! `λ ↦ τ(λ·a)` folded into an `l × l` box centred on the layer centroid.
//! Points are computed once at construction and indexed by a k-d tree so
//! that encoding a weight pair is a single nearest-neighbour query.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::{self, KdTree};

/// A point in the weight plane.
pub type Point = [f64; 2];

/// How the per-step increment `a` is derived from `U` and `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DirectionMode {
    /// `a = (l/U, l/⌊√U⌋)`: a sheared `⌊√U⌋ × ⌊√U⌋` lattice covering the box.
    #[default]
    #[serde(rename = "grid", alias = "grid_shear")]
    GridShear,
    /// The normalised-direction-times-step-length form, which simplifies to
    /// `a = (l/(U·⌊√U⌋), l/⌊√U⌋)`.
    #[serde(rename = "paper", alias = "paper_eq")]
    PaperEq,
}

impl DirectionMode {
    /// On-disk tag.
    pub fn tag(self) -> u8 {
        match self {
            DirectionMode::GridShear => 0,
            DirectionMode::PaperEq => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DirectionMode::GridShear),
            1 => Some(DirectionMode::PaperEq),
            _ => None,
        }
    }
}

impl fmt::Display for DirectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirectionMode::GridShear => "grid",
            DirectionMode::PaperEq => "paper",
        })
    }
}

impl std::str::FromStr for DirectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" | "grid_shear" => Ok(DirectionMode::GridShear),
            "paper" | "paper_eq" => Ok(DirectionMode::PaperEq),
            other => Err(Error::domain(format!("unknown direction {other:?} (expected grid or paper)"))),
        }
    }
}

/// Per-layer encoding geometry.
///
/// `l`, `u`, `max_class` and `direction` are user parameters; `centroid` and
/// `l_f` are measured from the layer. Everything needed to rebuild the exact
/// codebook is stored here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookConfig {
    /// Box side length.
    pub l: f64,
    /// Number of codebook points.
    pub u: u32,
    /// Number of scaling rings outside the inner disk.
    pub max_class: u16,
    pub direction: DirectionMode,
    pub centroid: Point,
    /// Largest distance from the centroid to any group point.
    pub l_f: f64,
}

impl CodebookConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::domain(format!("box side l must be positive, got {}", self.l)));
        }
        if self.u == 0 {
            return Err(Error::domain("index bound U must be at least 1"));
        }
        if !(self.l_f.is_finite() && self.l_f >= 0.0) {
            return Err(Error::domain(format!("l_f must be non-negative, got {}", self.l_f)));
        }
        if !(self.centroid[0].is_finite() && self.centroid[1].is_finite()) {
            return Err(Error::domain("centroid must be finite"));
        }
        Ok(())
    }

    /// Lower-left and upper-right corners of the box.
    pub fn bounds(&self) -> (Point, Point) {
        let h = self.l / 2.0;
        (
            [self.centroid[0] - h, self.centroid[1] - h],
            [self.centroid[0] + h, self.centroid[1] + h],
        )
    }

    /// `√2·l/⌊√U⌋`, the cell diagonal of the `GridShear` lattice. Bounds the
    /// distance from any point of the box to its nearest codebook point.
    pub fn covering_radius(&self) -> f64 {
        2f64.sqrt() * self.l / isqrt(self.u) as f64
    }

    /// Number of distinct θ values: `(M + 1)·U`.
    pub fn theta_bound(&self) -> u64 {
        (self.max_class as u64 + 1) * self.u as u64
    }
}

/// Per-index increment of the winding line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub a: [f64; 2],
}

/// Fractional part `x − ⌊x⌋`, always in `[0, 1)`.
pub fn frac(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("frac of non-finite value {x}")));
    }
    let r = x - x.floor();
    // tiny negative inputs round up to exactly 1.0
    Ok(if r >= 1.0 { 0.0 } else { r })
}

/// `x mod l` for the trajectory fold.
///
/// Residues within a few ulps of `l` are exact multiples of `l` that picked
/// up representation error (e.g. `45 · (0.1/15)`), and are folded to zero.
fn fold(x: f64, l: f64) -> f64 {
    let r = x.rem_euclid(l);
    if l - r <= 4.0 * f64::EPSILON * x.abs().max(l) {
        0.0
    } else {
        r
    }
}

/// The trajectory fold generalised to a box of side `l` centred on the
/// configuration's centroid: `(v mod l) + (C − l/2)` per coordinate.
pub fn generalized_tau(v: [f64; 2], config: &CodebookConfig) -> Result<Point> {
    if !(v[0].is_finite() && v[1].is_finite()) {
        return Err(Error::domain("generalized_tau of non-finite vector"));
    }
    Ok(tau_unchecked(v, config.l, config.centroid))
}

#[inline]
pub(crate) fn tau_unchecked(v: [f64; 2], l: f64, centroid: Point) -> Point {
    let h = l / 2.0;
    [
        fold(v[0], l) + (centroid[0] - h),
        fold(v[1], l) + (centroid[1] - h),
    ]
}

pub(crate) fn isqrt(u: u32) -> u32 {
    let mut r = (u as f64).sqrt() as u32;
    while (r as u64) * (r as u64) > u as u64 {
        r -= 1;
    }
    while ((r + 1) as u64) * ((r + 1) as u64) <= u as u64 {
        r += 1;
    }
    r
}

/// Per-step increment `a` for a codebook of `u` points in a box of side `l`.
pub fn direction_vector(u: u32, l: f64, mode: DirectionMode) -> Result<Direction> {
    if u == 0 {
        return Err(Error::domain("direction_vector requires U >= 1"));
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::domain(format!("box side l must be positive, got {l}")));
    }
    let rows = isqrt(u) as f64;
    let u = u as f64;
    let a = match mode {
        DirectionMode::GridShear => [l / u, l / rows],
        // d = (l/U, l)/‖(l/U, l)‖, |I| = l/(sin α ⌊√U⌋), sin α = U/√(1+U²);
        // the norms cancel.
        DirectionMode::PaperEq => [l / (u * rows), l / rows],
    };
    Ok(Direction { a })
}

/// The `U` trajectory points of one layer plus their spatial index.
///
/// Immutable after construction and `Sync`.
#[derive(Debug, Clone)]
pub struct Codebook {
    config: CodebookConfig,
    direction: Direction,
    points: Vec<Point>,
    tree: KdTree,
}

/// Builds `p_λ = τ(λ·a)` for `λ = 0 … U−1` and indexes them.
pub fn build_codebook(config: &CodebookConfig) -> Result<Codebook> {
    config.validate()?;
    let direction = direction_vector(config.u, config.l, config.direction)?;
    let points: Vec<Point> = (0..config.u)
        .map(|lambda| trajectory_point(lambda, &direction, config))
        .collect();
    let tree = KdTree::new(&points);
    Ok(Codebook {
        config: *config,
        direction,
        points,
        tree,
    })
}

/// `τ(λ·a)` evaluated from scratch.
#[inline]
pub(crate) fn trajectory_point(lambda: u32, direction: &Direction, config: &CodebookConfig) -> Point {
    let t = lambda as f64;
    tau_unchecked(
        [t * direction.a[0], t * direction.a[1]],
        config.l,
        config.centroid,
    )
}

impl Codebook {
    pub fn config(&self) -> &CodebookConfig {
        &self.config
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, lambda: usize) -> Point {
        self.points[lambda]
    }

    /// Nearest codebook point to `q`: `(λ, distance)`, smallest `λ` on ties.
    pub fn nearest(&self, q: Point) -> (usize, f64) {
        let (idx, d2) = self.tree.nearest(q);
        (idx, d2.sqrt())
    }

    /// Same contract as [`Codebook::nearest`], by exhaustive scan over the
    /// stored points.
    pub fn nearest_scan(&self, q: Point) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, &p) in self.points.iter().enumerate() {
            let d = kdtree::dist2(p, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use proptest::prelude::*;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn cfg(u: u32, l: f64, c: Point, mode: DirectionMode) -> CodebookConfig {
        CodebookConfig {
            l,
            u,
            max_class: 0,
            direction: mode,
            centroid: c,
            l_f: 0.0,
        }
    }

    #[test]
    fn frac_examples() {
        assert_close!(frac(2.3).unwrap(), 0.3, 1e-12);
        assert_eq!(frac(-0.25).unwrap(), 0.75);
        assert_eq!(frac(5.0).unwrap(), 0.0);
        assert_eq!(frac(-1e-20).unwrap(), 0.0);
        assert!(frac(f64::NAN).is_err());
        assert!(frac(f64::INFINITY).is_err());
    }

    #[test]
    fn tau_examples() {
        let c = cfg(4, 0.1, [0.5, 0.5], DirectionMode::GridShear);
        assert_eq!(generalized_tau([0.0, 0.0], &c).unwrap(), [0.45, 0.45]);
        let p = generalized_tau([0.025, 0.05], &c).unwrap();
        assert_close!(p[0], 0.475, 1e-12);
        assert_close!(p[1], 0.50, 1e-12);
        let c0 = cfg(4, 0.1, [0.0, 0.0], DirectionMode::GridShear);
        let p = generalized_tau([0.15, 0.25], &c0).unwrap();
        assert_close!(p[0], 0.0, 1e-12);
        assert_close!(p[1], 0.0, 1e-12);
        assert!(generalized_tau([f64::NAN, 0.0], &c).is_err());
    }

    #[test]
    fn direction_examples() {
        let d = direction_vector(225, 0.1, DirectionMode::PaperEq).unwrap();
        assert_close!(d.a[0], 2.962963e-5, 1e-11);
        assert_close!(d.a[1], 6.666667e-3, 1e-9);
        let d = direction_vector(225, 0.1, DirectionMode::GridShear).unwrap();
        assert_close!(d.a[0], 4.444444e-4, 1e-10);
        assert_close!(d.a[1], 6.666667e-3, 1e-9);
        let d = direction_vector(4, 0.1, DirectionMode::PaperEq).unwrap();
        assert_close!(d.a[0], 0.0125, 1e-15);
        assert_close!(d.a[1], 0.05, 1e-15);
        assert!(direction_vector(0, 0.1, DirectionMode::GridShear).is_err());
    }

    /// Evaluates the direction with the trigonometric terms left in.
    fn paper_direction_trig(u: u32, l: f64) -> [f64; 2] {
        let (dx, dy) = (l / u as f64, l);
        let norm = (dx * dx + dy * dy).sqrt();
        let alpha = (u as f64).atan();
        let step = l / (alpha.sin() * (u as f64).sqrt().floor());
        [dx / norm * step, dy / norm * step]
    }

    #[test]
    fn paper_direction_matches_trig_form() {
        for u in [1u32, 2, 4, 10, 225, 361, 1000, 4096] {
            for l in [0.01, 0.1, 1.0] {
                let got = direction_vector(u, l, DirectionMode::PaperEq).unwrap().a;
                let want = paper_direction_trig(u, l);
                assert_close!(got[0], want[0], 1e-12 * l);
                assert_close!(got[1], want[1], 1e-12 * l);
            }
        }
        let sin_alpha = 4.0f64.atan().sin();
        assert_close!(sin_alpha, 4.0 / 17f64.sqrt(), 1e-15);
    }

    #[test]
    fn direction_components_below_side() {
        for u in 4..500 {
            for mode in [DirectionMode::GridShear, DirectionMode::PaperEq] {
                let a = direction_vector(u, 0.1, mode).unwrap().a;
                assert!(a[0] > 0.0 && a[0] < 0.1);
                assert!(a[1] > 0.0 && a[1] < 0.1);
            }
        }
    }

    #[test]
    fn small_codebook_points() {
        let cb = build_codebook(&cfg(4, 0.1, [0.5, 0.5], DirectionMode::GridShear)).unwrap();
        assert_eq!(cb.len(), 4);
        assert_eq!(cb.point(0), [0.45, 0.45]);
        let p3 = cb.point(3);
        assert_close!(p3[0], 0.525, 1e-12);
        assert_close!(p3[1], 0.50, 1e-12);
    }

    #[test]
    fn grid_shear_forms_sheared_lattice() {
        let l = 0.1;
        let cb = build_codebook(&cfg(225, l, [0.0, 0.0], DirectionMode::GridShear)).unwrap();
        let mut rows: Vec<i64> = cb
            .points()
            .iter()
            .map(|p| ((p[1] + l / 2.0) / (l / 150.0)).round() as i64)
            .collect();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(rows.len(), 15);
        for (k, r) in rows.iter().enumerate() {
            assert_eq!(*r, 10 * k as i64);
        }
    }

    #[test]
    fn nearest_examples() {
        let cb = build_codebook(&cfg(4, 0.1, [0.5, 0.5], DirectionMode::GridShear)).unwrap();
        let (lam, d) = cb.nearest(cb.point(3));
        assert_eq!((lam, d), (3, 0.0));
        // dyadic geometry so the midpoint is exactly equidistant
        let cb = build_codebook(&cfg(4, 1.0, [0.0, 0.0], DirectionMode::GridShear)).unwrap();
        let (p1, p2) = (cb.point(1), cb.point(2));
        let mid = [(p1[0] + p2[0]) / 2.0, (p1[1] + p2[1]) / 2.0];
        assert_eq!(kdtree::dist2(p1, mid), kdtree::dist2(p2, mid));
        assert_eq!(cb.nearest(mid).0, 1);
        assert_eq!(cb.nearest_scan(mid).0, 1);
    }

    #[test]
    fn covering_radius_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for u in [4u32, 9, 225, 361] {
            let l = 0.1;
            let cb = build_codebook(&cfg(u, l, [0.3, -0.2], DirectionMode::GridShear)).unwrap();
            let bound = 2f64.sqrt() * l / isqrt(u) as f64;
            let (lo, hi) = cb.config().bounds();
            for _ in 0..20_000 {
                let q = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
                assert!(cb.nearest(q).1 <= bound);
            }
        }
    }

    #[test]
    fn isqrt_exact() {
        for u in 1..20_000u32 {
            let r = isqrt(u);
            assert!(r * r <= u && (r + 1) * (r + 1) > u);
        }
    }

    proptest! {
        #[test]
        fn frac_idempotent(x in -1e12f64..1e12) {
            let f = frac(x).unwrap();
            prop_assert!((0.0..1.0).contains(&f));
            prop_assert_eq!(frac(f).unwrap(), f);
        }

        #[test]
        fn codebook_inside_box_and_deterministic(
            u in 1u32..2000,
            l in 1e-3f64..2.0,
            cx in -5.0f64..5.0,
            cy in -5.0f64..5.0,
            paper in any::<bool>(),
        ) {
            let mode = if paper { DirectionMode::PaperEq } else { DirectionMode::GridShear };
            let c = cfg(u, l, [cx, cy], mode);
            let a = build_codebook(&c).unwrap();
            let b = build_codebook(&c).unwrap();
            prop_assert_eq!(a.len(), u as usize);
            let (lo, hi) = c.bounds();
            let slack = 1e-12 * (1.0 + cx.abs().max(cy.abs()));
            for (p, q) in a.points().iter().zip(b.points()) {
                prop_assert_eq!(p[0].to_bits(), q[0].to_bits());
                prop_assert_eq!(p[1].to_bits(), q[1].to_bits());
                for k in 0..2 {
                    prop_assert!(p[k] >= lo[k] - slack && p[k] <= hi[k] + slack);
                }
            }
        }

        #[test]
        fn kd_matches_exhaustive(u in 1u32..4096, qx in -0.2f64..0.2, qy in -0.2f64..0.2) {
            let cb = build_codebook(&cfg(u, 0.1, [0.0, 0.0], DirectionMode::GridShear)).unwrap();
            prop_assert_eq!(cb.nearest([qx, qy]), cb.nearest_scan([qx, qy]));
        }
    }
}
