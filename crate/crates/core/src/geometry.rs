//! Parabolic geometry: the metric Δ, parabolic and axis-aligned rectangles,
//! the anisotropic dyadic grids 𝒢ₙ and the constructive chaining path.
//!
//! Time and space scale differently under the heat flow, so a grid of level
//! `n` has spacing `2^{-4n}` in time and `2^{-2n}` in space and every nearest
//! neighbor pair sits at Δ-distance exactly `2^{-n}`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldPath;

/// A space-time point `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicPoint {
    pub t: f64,
    pub x: f64,
}

impl ParabolicPoint {
    pub const fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }
}

/// `Δ(p1 − p2) = max(|t₁ − t₂|^{1/4}, |x₁ − x₂|^{1/2})`.
pub fn delta_metric(p1: ParabolicPoint, p2: ParabolicPoint) -> f64 {
    delta_of(p1.t - p2.t, p1.x - p2.x)
}

/// Δ evaluated on a displacement.
pub fn delta_of(dt: f64, dx: f64) -> f64 {
    dt.abs().sqrt().sqrt().max(dx.abs().sqrt())
}

/// Closed axis-aligned rectangle `[t_lo, t_hi] × [x_lo, x_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRect {
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl AxisRect {
    pub fn new(t_lo: f64, t_hi: f64, x_lo: f64, x_hi: f64) -> Result<Self> {
        if !(t_lo <= t_hi && x_lo <= x_hi) {
            return Err(Error::Domain(format!(
                "rectangle bounds out of order: [{t_lo}, {t_hi}] x [{x_lo}, {x_hi}]"
            )));
        }
        Ok(Self { t_lo, t_hi, x_lo, x_hi })
    }

    /// The reference rectangle `[1, 2] × [0, 1]`.
    pub const fn r0() -> Self {
        Self { t_lo: 1.0, t_hi: 2.0, x_lo: 0.0, x_hi: 1.0 }
    }

    pub fn width_t(&self) -> f64 {
        self.t_hi - self.t_lo
    }

    pub fn width_x(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    /// Lebesgue measure in the `(t, x)` plane.
    pub fn area(&self) -> f64 {
        self.width_t() * self.width_x()
    }

    pub fn contains(&self, p: ParabolicPoint) -> bool {
        p.t >= self.t_lo && p.t <= self.t_hi && p.x >= self.x_lo && p.x <= self.x_hi
    }

    pub fn contains_rect(&self, other: &AxisRect) -> bool {
        other.t_lo >= self.t_lo
            && other.t_hi <= self.t_hi
            && other.x_lo >= self.x_lo
            && other.x_hi <= self.x_hi
    }

    /// True when the interiors intersect.
    pub fn overlaps(&self, other: &AxisRect) -> bool {
        self.t_lo < other.t_hi
            && other.t_lo < self.t_hi
            && self.x_lo < other.x_hi
            && other.x_lo < self.x_hi
    }

    pub fn lower_left(&self) -> ParabolicPoint {
        ParabolicPoint::new(self.t_lo, self.x_lo)
    }
}

/// `R_ρ(t₀, x₀) = [t₀ − ρ⁴, t₀ + ρ⁴] × [x₀ − ρ², x₀ + ρ²]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicRect {
    pub center: ParabolicPoint,
    pub rho: f64,
}

impl ParabolicRect {
    pub fn new(center: ParabolicPoint, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 0.5) {
            return Err(Error::Domain(format!("rho = {rho} outside (0, 1/2]")));
        }
        Ok(Self { center, rho })
    }

    pub fn half_t(&self) -> f64 {
        self.rho.powi(4)
    }

    pub fn half_x(&self) -> f64 {
        self.rho * self.rho
    }

    pub fn to_axis(&self) -> AxisRect {
        let (ht, hx) = (self.half_t(), self.half_x());
        AxisRect {
            t_lo: self.center.t - ht,
            t_hi: self.center.t + ht,
            x_lo: self.center.x - hx,
            x_hi: self.center.x + hx,
        }
    }
}

/// Level `n` of the anisotropic dyadic grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLevel {
    pub n: u32,
}

impl GridLevel {
    pub fn spacing_t(&self) -> f64 {
        pow2(-4 * self.n as i32)
    }

    pub fn spacing_x(&self) -> f64 {
        pow2(-2 * self.n as i32)
    }
}

/// Exact power of two as a float.
pub fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// `⌊log₂(1/Δ(p1 − p2))⌋`, i.e. the largest `n` with `|t₁−t₂| ≤ 2^{-4n}` and
/// `|x₁−x₂| ≤ 2^{-2n}`. Computed with exact power-of-two comparisons.
pub fn n0_level(p1: ParabolicPoint, p2: ParabolicPoint) -> Result<i32> {
    let dt = (p1.t - p2.t).abs();
    let dx = (p1.x - p2.x).abs();
    if dt == 0.0 && dx == 0.0 {
        return Err(Error::ZeroDistance);
    }
    let fits = |n: i32| dt <= pow2(-4 * n) && dx <= pow2(-2 * n);
    let mut n = (-delta_of(dt, dx).log2()).floor() as i32;
    while !fits(n) {
        n -= 1;
    }
    while fits(n + 1) {
        n += 1;
    }
    Ok(n)
}

/// Number of nearest-neighbor pairs of 𝒢ₙ inside `rect`, with the grid anchored
/// at the lower-left corner of `rect`.
pub fn neighbor_pair_count(rect: &AxisRect, level: GridLevel) -> u64 {
    let a = (rect.width_t() / level.spacing_t()).floor() as u64 + 1;
    let b = (rect.width_x() / level.spacing_x()).floor() as u64 + 1;
    (a - 1) * b + a * (b - 1)
}

/// The anisotropic dyadic rectangle of order `order` containing `p`; points on a
/// boundary belong to the rectangle on their right/top.
pub fn dyadic_rect(order: u32, p: ParabolicPoint) -> AxisRect {
    let ht = pow2(-4 * order as i32);
    let hx = pow2(-2 * order as i32);
    let m1 = (p.t / ht).floor();
    let m2 = (p.x / hx).floor();
    AxisRect { t_lo: m1 * ht, t_hi: (m1 + 1.0) * ht, x_lo: m2 * hx, x_hi: (m2 + 1.0) * hx }
}

/// Oscillation of a field over a closed rectangle: the largest Euclidean
/// distance between field values at grid points inside `rect`.
pub fn oscillation(field: &FieldPath, rect: &AxisRect) -> Result<f64> {
    let pts = field.collect_in(rect);
    if pts.is_empty() {
        return Err(Error::RectOutsideGrid);
    }
    Ok(diameter(&pts, field.d))
}

/// Diameter of a point cloud stored as consecutive `d`-vectors.
///
/// Small clouds are scanned pairwise. Larger ones use the convex hull in the
/// plane and a bound-and-prune search in higher dimension; both are exact.
pub fn diameter(points: &[f64], d: usize) -> f64 {
    assert!(d > 0 && points.len() % d == 0);
    let n = points.len() / d;
    if n < 2 {
        return 0.0;
    }
    if d == 1 {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        return hi - lo;
    }
    if n <= 256 {
        return brute_diameter(points, d);
    }
    if d == 2 {
        let hull = convex_hull(points);
        return brute_diameter(&hull, 2);
    }
    pruned_diameter(points, d)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn brute_diameter(points: &[f64], d: usize) -> f64 {
    let n = points.len() / d;
    let mut best = 0.0f64;
    for i in 0..n {
        let a = &points[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            best = best.max(dist2(a, &points[j * d..(j + 1) * d]));
        }
    }
    best.sqrt()
}

/// Andrew's monotone chain; returns hull vertices flattened.
fn convex_hull(points: &[f64]) -> Vec<f64> {
    let mut p: Vec<(f64, f64)> = points.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    p.dedup();
    if p.len() < 3 {
        return p.iter().flat_map(|&(a, b)| [a, b]).collect();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for &q in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    let lower = hull.len() + 1;
    for &q in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    hull.pop();
    hull.iter().flat_map(|&(a, b)| [a, b]).collect()
}

fn pruned_diameter(points: &[f64], d: usize) -> f64 {
    let n = points.len() / d;
    let pt = |i: usize| &points[i * d..(i + 1) * d];
    let farthest = |a: &[f64]| {
        (0..n)
            .map(|j| (j, dist2(a, pt(j))))
            .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc })
    };
    let mut a = 0;
    let mut lb2 = 0.0f64;
    for _ in 0..4 {
        let (b, db) = farthest(pt(a));
        if db <= lb2 {
            break;
        }
        lb2 = db;
        a = b;
    }
    let lb = lb2.sqrt();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (k, &v) in pt(i).iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let radius = (0..n).map(|i| dist2(pt(i), &center)).fold(0.0, f64::max).sqrt();
    let margin = 1.0 + 1e-12;
    let candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let p = pt(i);
            let ball = dist2(p, &center).sqrt() + radius;
            let boxed: f64 = p
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let e = (v - lo[k]).max(hi[k] - v);
                    e * e
                })
                .sum::<f64>()
                .sqrt();
            ball.min(boxed) * margin > lb
        })
        .collect();
    let mut best = lb2;
    for (ia, &i) in candidates.iter().enumerate() {
        for &j in &candidates[ia + 1..] {
            best = best.max(dist2(pt(i), pt(j)));
        }
    }
    best.sqrt()
}

/// Exact comparison of an integer with a float.
fn cmp_int_float(k: i128, b: f64) -> Ordering {
    let fl = b.floor();
    let fi = fl as i128;
    match k.cmp(&fi) {
        Ordering::Less => Ordering::Less,
        Ordering::Greater => Ordering::Greater,
        Ordering::Equal => {
            if b == fl {
                Ordering::Equal
            } else {
                Ordering::Less
            }
        }
    }
}

/// Exact `v · 2^e` as an integer, if it is one.
fn to_units(v: f64, e: i32) -> Option<i128> {
    let s = v * pow2(e);
    if !s.is_finite() || s.abs() >= 2f64.powi(120) || s.fract() != 0.0 {
        return None;
    }
    Some(s as i128)
}

/// Grid point stored as integer mantissas at the finest configured level `L`:
/// `t = origin.t + kt · 2^{-4L}`, `x = origin.x + kx · 2^{-2L}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicPoint {
    pub kt: i128,
    pub kx: i128,
}

/// Dyadic coordinate system anchored at `origin` with finest level `max_level`.
#[derive(Clone, Copy, Debug)]
pub struct DyadicFrame {
    pub origin: ParabolicPoint,
    pub max_level: u32,
}

impl DyadicFrame {
    pub fn new(origin: ParabolicPoint, max_level: u32) -> Result<Self> {
        if max_level > 28 {
            return Err(Error::Config(format!("max grid level {max_level} exceeds 28")));
        }
        Ok(Self { origin, max_level })
    }

    fn et(&self) -> i32 {
        4 * self.max_level as i32
    }

    fn ex(&self) -> i32 {
        2 * self.max_level as i32
    }

    /// Time step of level `n` in mantissa units.
    pub fn unit_t(&self, n: i32) -> i128 {
        1i128 << (4 * (self.max_level as i32 - n))
    }

    pub fn unit_x(&self, n: i32) -> i128 {
        1i128 << (2 * (self.max_level as i32 - n))
    }

    /// Converts a float point; fails unless it lies on the level-`L` grid.
    pub fn to_dyadic(&self, p: ParabolicPoint) -> Result<DyadicPoint> {
        let conv = |v: f64, o: f64, e: i32| -> Option<i128> { Some(to_units(v, e)? - to_units(o, e)?) };
        match (conv(p.t, self.origin.t, self.et()), conv(p.x, self.origin.x, self.ex())) {
            (Some(kt), Some(kx)) if kt >= 0 && kx >= 0 => Ok(DyadicPoint { kt, kx }),
            _ => Err(Error::NotGridPoint(format!(
                "({}, {}) is not on the level-{} grid anchored at ({}, {})",
                p.t, p.x, self.max_level, self.origin.t, self.origin.x
            ))),
        }
    }

    pub fn to_point(&self, q: DyadicPoint) -> ParabolicPoint {
        ParabolicPoint::new(
            self.origin.t + q.kt as f64 * pow2(-self.et()),
            self.origin.x + q.kx as f64 * pow2(-self.ex()),
        )
    }

    /// Smallest level whose grid contains `q`.
    pub fn level_of(&self, q: DyadicPoint) -> i32 {
        let mut n = 0;
        while n < self.max_level as i32 && (q.kt % self.unit_t(n) != 0 || q.kx % self.unit_x(n) != 0) {
            n += 1;
        }
        n
    }

    /// Exact membership of a mantissa point in a float rectangle.
    pub fn in_rect(&self, q: DyadicPoint, rect: &AxisRect) -> bool {
        let bt = |b: f64| (b - self.origin.t) * pow2(self.et());
        let bx = |b: f64| (b - self.origin.x) * pow2(self.ex());
        cmp_int_float(q.kt, bt(rect.t_lo)) != Ordering::Less
            && cmp_int_float(q.kt, bt(rect.t_hi)) != Ordering::Greater
            && cmp_int_float(q.kx, bx(rect.x_lo)) != Ordering::Less
            && cmp_int_float(q.kx, bx(rect.x_hi)) != Ordering::Greater
    }

    /// `Δ⁴` in units of `2^{-4L}`, for exact comparisons.
    fn delta4_units(&self, a: DyadicPoint, b: DyadicPoint) -> i128 {
        let dx = (a.kx - b.kx).abs();
        (a.kt - b.kt).abs().max(dx * dx)
    }

    /// Lower-left corner of the type-`n` rectangle containing `q`.
    fn cell_corner(&self, q: DyadicPoint, n: i32) -> DyadicPoint {
        let (ut, ux) = (self.unit_t(n), self.unit_x(n));
        DyadicPoint { kt: q.kt.div_euclid(ut) * ut, kx: q.kx.div_euclid(ux) * ux }
    }

    fn corners(&self, q: DyadicPoint, n: i32) -> [DyadicPoint; 4] {
        let c = self.cell_corner(q, n);
        let (ut, ux) = (self.unit_t(n), self.unit_x(n));
        [
            c,
            DyadicPoint { kt: c.kt, kx: c.kx + ux },
            DyadicPoint { kt: c.kt + ut, kx: c.kx },
            DyadicPoint { kt: c.kt + ut, kx: c.kx + ux },
        ]
    }
}

/// A chain of nearest-neighbor steps between two grid points.
#[derive(Clone, Debug)]
pub struct ChainPath {
    pub frame_origin: ParabolicPoint,
    pub max_level: u32,
    pub dyadic: Vec<DyadicPoint>,
    pub vertices: Vec<ParabolicPoint>,
    /// Level of step `k`, which joins vertex `k` to vertex `k + 1`.
    pub step_levels: Vec<i32>,
    pub n0: i32,
}

impl ChainPath {
    /// Number of steps of each type.
    pub fn tally(&self) -> BTreeMap<i32, usize> {
        let mut m = BTreeMap::new();
        for &n in &self.step_levels {
            *m.entry(n).or_insert(0) += 1;
        }
        m
    }

    /// Checks that every step joins nearest neighbors of its recorded level,
    /// every vertex lies in `rect`, all levels are ≥ n₀ and no level is used
    /// more than 40 times.
    pub fn validate(&self, rect: &AxisRect) -> std::result::Result<(), String> {
        let frame = DyadicFrame { origin: self.frame_origin, max_level: self.max_level };
        if self.dyadic.len() != self.step_levels.len() + 1 && !self.step_levels.is_empty() {
            return Err("vertex/step count mismatch".into());
        }
        for (k, &q) in self.dyadic.iter().enumerate() {
            if !frame.in_rect(q, rect) {
                return Err(format!("vertex {k} outside rect"));
            }
        }
        for (k, &n) in self.step_levels.iter().enumerate() {
            if n < self.n0 {
                return Err(format!("step {k} has level {n} below n0 = {}", self.n0));
            }
            let (a, b) = (self.dyadic[k], self.dyadic[k + 1]);
            let (ut, ux) = (frame.unit_t(n), frame.unit_x(n));
            if a.kt % ut != 0 || a.kx % ux != 0 || b.kt % ut != 0 || b.kx % ux != 0 {
                return Err(format!("step {k} endpoints not on level {n}"));
            }
            let (dt, dx) = ((a.kt - b.kt).abs(), (a.kx - b.kx).abs());
            if !((dt == ut && dx == 0) || (dt == 0 && dx == ux)) {
                return Err(format!("step {k} is not a nearest-neighbor step of level {n}"));
            }
        }
        for (n, c) in self.tally() {
            if c > 40 {
                return Err(format!("{c} steps of type {n}"));
            }
        }
        Ok(())
    }
}

/// Builds the chaining path of the parabolic chaining lemma from `p1` to `p2`
/// through the dyadic grid anchored at `grid_origin`, staying inside `rect`.
pub fn chain_path(
    p1: ParabolicPoint,
    p2: ParabolicPoint,
    grid_origin: ParabolicPoint,
    rect: &AxisRect,
) -> Result<ChainPath> {
    chain_path_with_level(p1, p2, grid_origin, rect, 20)
}

pub fn chain_path_with_level(
    p1: ParabolicPoint,
    p2: ParabolicPoint,
    grid_origin: ParabolicPoint,
    rect: &AxisRect,
    max_level: u32,
) -> Result<ChainPath> {
    if rect.width_t() > 1.0 || rect.width_x() > 1.0 {
        return Err(Error::Domain("chaining rectangle must have sides at most 1".into()));
    }
    let frame = DyadicFrame::new(grid_origin, max_level)?;
    let a = frame.to_dyadic(p1)?;
    let b = frame.to_dyadic(p2)?;
    if !frame.in_rect(a, rect) || !frame.in_rect(b, rect) {
        return Err(Error::Domain("chain endpoints must lie in the rectangle".into()));
    }
    let mut path = ChainPath {
        frame_origin: grid_origin,
        max_level,
        dyadic: vec![a],
        vertices: vec![],
        step_levels: vec![],
        n0: 0,
    };
    if a == b {
        path.vertices = vec![p1];
        path.n0 = max_level as i32;
        return Ok(path);
    }
    let n0 = n0_level(p1, p2)?;
    path.n0 = n0;

    // Shared corner of the two type-n₀ rectangles.
    let ca = frame.corners(a, n0);
    let cb = frame.corners(b, n0);
    let shared = ca
        .iter()
        .filter(|c| cb.contains(c) && frame.in_rect(**c, rect))
        .min_by(|x, y| {
            frame
                .delta4_units(**x, a)
                .cmp(&frame.delta4_units(**y, a))
                .then(frame.delta4_units(**x, b).cmp(&frame.delta4_units(**y, b)))
                .then((x.kt, x.kx).cmp(&(y.kt, y.kx)))
        })
        .copied()
        .ok_or(Error::NoCorner(n0))?;

    let first = half_path(&frame, shared, a, n0, rect)?;
    let second = half_path(&frame, shared, b, n0, rect)?;
    // Reverse the walk towards p1, then continue towards p2.
    let mut verts: Vec<DyadicPoint> = first.iter().rev().map(|s| s.0).collect();
    verts.push(shared);
    let mut levels: Vec<i32> = first.iter().rev().map(|s| s.1).collect();
    for &(q, n) in &second {
        verts.push(q);
        levels.push(n);
    }
    // `first` stores (vertex reached, level); after reversal the vertex list
    // starts at p1 and the levels line up with the following step.
    path.dyadic = verts;
    path.step_levels = levels;
    path.vertices = path.dyadic.iter().map(|&q| frame.to_point(q)).collect();
    Ok(path)
}

/// Walk from the shared corner `c` to `p`; returns the visited vertices (after
/// `c`) with the level of the step that reached them.
fn half_path(
    frame: &DyadicFrame,
    c: DyadicPoint,
    p: DyadicPoint,
    n0: i32,
    rect: &AxisRect,
) -> Result<Vec<(DyadicPoint, i32)>> {
    let mut out = Vec::new();
    let n1 = frame.level_of(p);
    let mut cur = c;
    if n1 <= n0 {
        walk(frame, &mut cur, p, n0, &mut out);
        return Ok(out);
    }
    for n in (n0 + 1)..=n1 {
        let q = if n == n1 {
            p
        } else {
            frame
                .corners(p, n)
                .into_iter()
                .filter(|q| frame.in_rect(*q, rect))
                .min_by(|x, y| {
                    frame
                        .delta4_units(*x, p)
                        .cmp(&frame.delta4_units(*y, p))
                        .then((x.kt, x.kx).cmp(&(y.kt, y.kx)))
                })
                .ok_or(Error::NoCorner(n))?
        };
        walk(frame, &mut cur, q, n, &mut out);
    }
    Ok(out)
}

/// Axis-parallel walk in steps of level `n`: time first, then space.
fn walk(frame: &DyadicFrame, cur: &mut DyadicPoint, to: DyadicPoint, n: i32, out: &mut Vec<(DyadicPoint, i32)>) {
    let (ut, ux) = (frame.unit_t(n), frame.unit_x(n));
    debug_assert_eq!((to.kt - cur.kt) % ut, 0);
    debug_assert_eq!((to.kx - cur.kx) % ux, 0);
    while cur.kt != to.kt {
        cur.kt += ut * (to.kt - cur.kt).signum();
        out.push((*cur, n));
    }
    while cur.kx != to.kx {
        cur.kx += ux * (to.kx - cur.kx).signum();
        out.push((*cur, n));
    }
}
