//! Gauge functions, the scale ladder, good-window search and good-rectangle
//! covers of the range.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{build_frame, decompose, DecompositionConfig, DecompositionInputs};
use crate::error::{Error, Result};
use crate::field::{norm, FieldPath};
use crate::gaussian::LocalGaussianSampler;
use crate::geometry::{diameter, pow2, AxisRect, ParabolicPoint};
use crate::noise::SpaceTimeGrid;
use crate::stats::line_fit;
use crate::stopping::{StoppingConfig, StoppingResult};

fn loglog(r: f64) -> f64 {
    (1.0 / r).log2().log2()
}

/// `f(r) = r (log₂log₂(1/r))^{−1/6}` for `0 < r < 1/2`.
pub fn gauge_f(r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 0.5) {
        return Err(Error::Domain(format!("gauge f needs 0 < r < 1/2, got {r}")));
    }
    Ok(r * loglog(r).powf(-1.0 / 6.0))
}

/// `ζ(x) = x⁶ log₂log₂(1/x)` for `0 < x < 1/2`.
pub fn gauge_zeta(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 0.5) {
        return Err(Error::Domain(format!("zeta needs 0 < x < 1/2, got {x}")));
    }
    Ok(x.powi(6) * loglog(x))
}

/// Radii `r_{q,ℓ} = 2^{−q} q^{−ℓ}`, `ℓ = 0..=ℓ_q`, `ℓ_q = ⌊q / log₂ q⌋`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub q: u32,
    pub radii: Vec<f64>,
}

impl ScaleLadder {
    pub fn new(q: u32) -> Result<Self> {
        if q < 2 {
            return Err(Error::Domain(format!("ladder needs q >= 2, got {q}")));
        }
        let top = Self::top_level(q);
        let radii = (0..=top).map(|l| pow2(-(q as i32)) * (q as f64).powi(-(l as i32))).collect();
        Ok(Self { q, radii })
    }

    /// `ℓ_q`, computed without floating-point logarithms: the largest `ℓ`
    /// with `q^ℓ ≤ 2^q`.
    pub fn top_level(q: u32) -> u32 {
        let mut l = 0u32;
        // q^(l+1) ≤ 2^q  ⇔  (l+1)·log₂ q ≤ q, checked in exact integers
        while int_pow_le(q, l + 1, q) {
            l += 1;
        }
        l
    }

    pub fn levels(&self) -> u32 {
        self.radii.len() as u32 - 1
    }
}

/// `base^exp ≤ 2^two_exp` in exact arithmetic.
fn int_pow_le(base: u32, exp: u32, two_exp: u32) -> bool {
    let mut acc: u128 = 1;
    let limit: u128 = if two_exp >= 127 { u128::MAX } else { 1u128 << two_exp };
    for _ in 0..exp {
        acc = match acc.checked_mul(base as u128) {
            Some(v) if v <= limit => v,
            _ => return false,
        };
    }
    acc <= limit
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeConfig {
    pub k_tilde: f64,
    pub sigma1: f64,
    pub k2: f64,
    pub q: u32,
    pub q0: u32,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        Self { k_tilde: 1.0, sigma1: 1.0, k2: 4.0, q: 4, q0: 2 }
    }
}

impl GaugeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q >= self.q0 && self.q0 >= 2) {
            return Err(Error::Config(format!("need q >= q0 >= 2 (q = {}, q0 = {})", self.q, self.q0)));
        }
        if !(self.k_tilde > 0.0 && self.sigma1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Config("K_tilde, sigma1 and K2 must be positive".into()));
        }
        Ok(())
    }

    pub fn with_q(&self, q: u32) -> Self {
        Self { q, ..self.clone() }
    }

    pub fn with_k_tilde(&self, k_tilde: f64) -> Self {
        Self { k_tilde, ..self.clone() }
    }

    /// Window threshold `2σ₁K̃ f(r)`.
    pub fn window_threshold(&self, r: f64) -> Result<f64> {
        Ok(2.0 * self.sigma1 * self.k_tilde * gauge_f(r)?)
    }

    /// Good-rectangle gauge `d_ℓ = 8σ₁K̃ f(2^{−ℓ})`.
    pub fn good_radius(&self, order: u32) -> Result<f64> {
        Ok(8.0 * self.sigma1 * self.k_tilde * gauge_f(pow2(-(order as i32)))?)
    }

    /// Radius `K₂ 2^{−2q} q` of a residual rectangle.
    pub fn residual_radius(&self) -> f64 {
        self.k2 * pow2(-2 * self.q as i32) * self.q as f64
    }
}

/// Source of the oscillation of `w` over `R_r(t₀, x₀)`.
pub trait WindowOscillation {
    /// Errors if `R_r(t₀, x₀)` cannot be resolved.
    fn resolve(&self, t0: f64, x0: f64, r: f64) -> Result<()>;
    fn oscillation(&mut self, t0: f64, x0: f64, r: f64) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub t0: f64,
    pub x0: f64,
    pub q: u32,
    pub found: bool,
    pub level: Option<u32>,
    pub r: Option<f64>,
    pub osc: Option<f64>,
    /// Oscillation at every ladder radius.
    pub osc_by_level: Vec<f64>,
    /// `min_ℓ osc_ℓ / (2σ₁ f(r_ℓ))`: the window is found exactly when
    /// `K̃ ≥ kappa`.
    pub kappa: f64,
}

/// Scans the ladder of `cfg.q` and returns the first level whose window
/// oscillation is at most `2σ₁K̃ f(r_{q,ℓ})`.
pub fn window_search(driver: &mut dyn WindowOscillation, t0: f64, x0: f64, cfg: &GaugeConfig) -> Result<WindowResult> {
    cfg.validate()?;
    let ladder = ScaleLadder::new(cfg.q)?;
    for &r in &ladder.radii {
        driver.resolve(t0, x0, r)?;
    }
    let mut osc_by_level = Vec::with_capacity(ladder.radii.len());
    let mut kappa = f64::INFINITY;
    let mut hit = None;
    for (l, &r) in ladder.radii.iter().enumerate() {
        let osc = driver.oscillation(t0, x0, r)?;
        let f = gauge_f(r)?;
        kappa = kappa.min(osc / (2.0 * cfg.sigma1 * f));
        if hit.is_none() && osc <= cfg.window_threshold(r)? {
            hit = Some((l as u32, r, osc));
        }
        osc_by_level.push(osc);
    }
    Ok(WindowResult {
        t0,
        x0,
        q: cfg.q,
        found: hit.is_some(),
        level: hit.map(|h| h.0),
        r: hit.map(|h| h.1),
        osc: hit.map(|h| h.2),
        osc_by_level,
        kappa,
    })
}

/// Smallest `K̃` whose found-frequency on the sample of `kappa` values is at
/// least `1 − e^{−√q}`.
pub fn calibrate_k_tilde(kappas: &[f64], q: u32) -> Result<f64> {
    if kappas.is_empty() {
        return Err(Error::SampleTooSmall("K_tilde calibration needs at least one window".into()));
    }
    let target = 1.0 - (-(q as f64).sqrt()).exp();
    let mut s = kappas.to_vec();
    s.sort_by(f64::total_cmp);
    let need = ((target * s.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(s[need - 1])
}

/// Window oscillations of `w` from the local decomposition of a simulated
/// path. Every window needs at least three grid rows and columns.
pub struct DecompositionWindow<'a, 'b> {
    pub inputs: &'b DecompositionInputs<'a>,
    pub cfg: DecompositionConfig,
    pub stop: StoppingConfig,
}

impl WindowOscillation for DecompositionWindow<'_, '_> {
    fn resolve(&self, t0: f64, x0: f64, r: f64) -> Result<()> {
        let g = self.inputs.noise.grid();
        let frame = build_frame(t0, x0, r, &self.cfg)?;
        let rect = frame.r_rho.to_axis();
        let rows = g.rows_in(rect.t_lo, rect.t_hi).len();
        let cols = g.cols_in(rect.x_lo, rect.x_hi).len();
        if rows < 3 || cols < 3 {
            return Err(Error::Resolution(format!(
                "R_r at r = {r:.3e} spans {rows} rows and {cols} columns (dt = {:.3e}, dx = {:.3e})",
                g.dt, g.dx
            )));
        }
        Ok(())
    }

    fn oscillation(&mut self, t0: f64, x0: f64, r: f64) -> Result<f64> {
        let frame = build_frame(t0, x0, r, &self.cfg)?;
        let res = decompose(self.inputs, &frame, &self.cfg, &self.stop)?;
        let gf = &res.grid_frame;
        Ok(diameter(&res.w.collect_box(gf.rect_rows.clone(), gf.rect_cols.clone()), res.w.d))
    }
}

/// Lattice points per window: `LADDER_T` times by `LADDER_X` positions.
pub const LADDER_T: usize = 9;
pub const LADDER_X: usize = 5;

/// Exact joint sampler of `N⁽⁰⁾` on a `9 × 5` lattice of every window of a
/// ladder around `(t₀, x₀)`. In the linear case `σ ≡ I`, `u₀ ≡ 0` the field
/// `w` equals `N⁽⁰⁾`, so this replaces the simulation at scales no grid can
/// reach.
pub struct LadderSampler {
    pub t0: f64,
    pub x0: f64,
    pub ladder: ScaleLadder,
    pub d: usize,
    sampler: LocalGaussianSampler,
}

impl LadderSampler {
    pub fn new(t0: f64, x0: f64, q: u32, d: usize) -> Result<Self> {
        if !(t0 > 0.0) || d == 0 {
            return Err(Error::Domain(format!("ladder sampler needs t0 > 0 and d >= 1 (t0 = {t0}, d = {d})")));
        }
        let ladder = ScaleLadder::new(q)?;
        let mut pts = Vec::new();
        for &r in &ladder.radii {
            let (ht, hx) = (r.powi(4), r * r);
            for a in 0..LADDER_T {
                for b in 0..LADDER_X {
                    let t = t0 - ht + 2.0 * ht * a as f64 / (LADDER_T - 1) as f64;
                    let x = x0 - hx + 2.0 * hx * b as f64 / (LADDER_X - 1) as f64;
                    pts.push(ParabolicPoint::new(t, x));
                }
            }
        }
        let sampler = LocalGaussianSampler::new(&pts, ParabolicPoint::new(t0, x0))?;
        Ok(Self { t0, x0, ladder, d, sampler })
    }

    /// One joint draw; the oscillation at every ladder radius.
    pub fn draw(&self, rng: &mut impl Rng) -> LadderDraw {
        let per = LADDER_T * LADDER_X;
        let n = self.sampler.points.len();
        let mut vals = vec![0.0; n * self.d];
        let mut buf = vec![0.0; n];
        for k in 0..self.d {
            self.sampler.sample_increments(rng, &mut buf);
            for p in 0..n {
                vals[p * self.d + k] = buf[p];
            }
        }
        let osc = (0..self.ladder.radii.len())
            .map(|l| diameter(&vals[l * per * self.d..(l + 1) * per * self.d], self.d))
            .collect();
        LadderDraw { t0: self.t0, x0: self.x0, radii: self.ladder.radii.clone(), osc }
    }
}

/// Window oscillations of one exact draw.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderDraw {
    pub t0: f64,
    pub x0: f64,
    pub radii: Vec<f64>,
    pub osc: Vec<f64>,
}

impl LadderDraw {
    fn level(&self, t0: f64, x0: f64, r: f64) -> Result<usize> {
        if t0 != self.t0 || x0 != self.x0 {
            return Err(Error::Inconsistent(format!("draw centred at ({}, {}), asked for ({t0}, {x0})", self.t0, self.x0)));
        }
        self.radii
            .iter()
            .position(|&s| (s - r).abs() <= 1e-12 * s)
            .ok_or_else(|| Error::Resolution(format!("radius {r:.3e} is not on the sampled ladder")))
    }
}

impl WindowOscillation for LadderDraw {
    fn resolve(&self, t0: f64, x0: f64, r: f64) -> Result<()> {
        self.level(t0, x0, r).map(|_| ())
    }

    fn oscillation(&mut self, t0: f64, x0: f64, r: f64) -> Result<f64> {
        Ok(self.osc[self.level(t0, x0, r)?])
    }
}

/// One rectangle of a cover with its ball `B_A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverRect {
    pub order: u32,
    pub rect: AxisRect,
    pub radius: f64,
    /// `ũ` at the lower-left corner.
    pub center: Vec<f64>,
    pub osc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub q: u32,
    pub domain: AxisRect,
    pub good_rects: Vec<CoverRect>,
    pub residual_rects: Vec<CoverRect>,
    /// Number of good rectangles per order.
    pub good_counts: BTreeMap<u32, usize>,
    /// `#H_{q,2}`.
    pub n_q: usize,
    /// `Σ ζ(r_A)`; `None` when some radius lies outside `(0, 1/2)`.
    pub zeta_mass: Option<f64>,
    pub r6_mass: f64,
    /// Masses rescaled by `λ₂(R₀)/λ₂(domain)`.
    pub zeta_mass_normalized: Option<f64>,
    pub r6_mass_normalized: f64,
    /// Residual area at most `λ₂(domain)·exp(−√q/4)`.
    pub omega_q1: bool,
    /// Every residual rectangle has oscillation at most `K₂ 2^{−2q} q`.
    pub omega_q2: bool,
    pub good_area_fraction: f64,
    /// Built on a path whose stopping times triggered.
    pub degraded: bool,
}

impl CoverReport {
    pub fn rects(&self) -> impl Iterator<Item = &CoverRect> {
        self.good_rects.iter().chain(&self.residual_rects)
    }

    pub fn max_radius(&self) -> f64 {
        self.rects().map(|r| r.radius).fold(0.0, f64::max)
    }

    /// `Σ r_A⁶ ≤ (1/log₂ q) Σ ζ(r_A)`; `None` when `ζ` is undefined.
    pub fn mass_inequality(&self) -> Option<bool> {
        let z = self.zeta_mass?;
        Some(self.r6_mass <= z / (self.q as f64).log2())
    }
}

fn is_multiple(v: f64, h: f64) -> bool {
    let k = v / h;
    (k - k.round()).abs() < 1e-9
}

fn children(rect: &AxisRect, order: u32) -> Vec<AxisRect> {
    let (ht, hx) = (pow2(-4 * (order as i32 + 1)), pow2(-2 * (order as i32 + 1)));
    let mut out = Vec::with_capacity(64);
    for a in 0..16 {
        for b in 0..4 {
            let (t, x) = (rect.t_lo + a as f64 * ht, rect.x_lo + b as f64 * hx);
            out.push(AxisRect { t_lo: t, t_hi: t + ht, x_lo: x, x_hi: x + hx });
        }
    }
    out
}

/// Greedy good-rectangle cover of `domain`, a union of order-`q` dyadic
/// cells: each cell is kept if its oscillation is at most `d_ℓ`, otherwise
/// split into its 64 children, down to order `2q` where the remaining cells
/// become residual rectangles. A rectangle that has to be measured but holds
/// fewer than two grid lines per axis, or whose lower-left corner is not a
/// grid point, is a resolution error.
pub fn build_cover(path: &FieldPath, domain: &AxisRect, cfg: &GaugeConfig, stopping: Option<&StoppingResult>) -> Result<CoverReport> {
    cfg.validate()?;
    let q = cfg.q;
    let (ht, hx) = (pow2(-4 * q as i32), pow2(-2 * q as i32));
    if !(is_multiple(domain.t_lo, ht) && is_multiple(domain.t_hi, ht) && is_multiple(domain.x_lo, hx) && is_multiple(domain.x_hi, hx)) {
        return Err(Error::NotCellAligned(format!("domain is not a union of order-{q} cells")));
    }
    let g = path.grid;
    let stored = AxisRect { t_lo: g.time(path.rows().start), t_hi: g.time(path.rows().end - 1), x_lo: g.x0, x_hi: g.x1 };
    if !stored.contains_rect(domain) {
        return Err(Error::RectOutsideGrid);
    }
    let nt = (domain.width_t() / ht).round() as usize;
    let nx = (domain.width_x() / hx).round() as usize;
    let mut good = Vec::new();
    let mut residual = Vec::new();
    let mut omega_q2 = true;
    let mut stack: Vec<(AxisRect, u32)> = Vec::new();
    for a in (0..nt).rev() {
        for b in (0..nx).rev() {
            let (t, x) = (domain.t_lo + a as f64 * ht, domain.x_lo + b as f64 * hx);
            stack.push((AxisRect { t_lo: t, t_hi: t + ht, x_lo: x, x_hi: x + hx }, q));
        }
    }
    while let Some((rect, order)) = stack.pop() {
        let (rows, cols) = path.index_box(&rect);
        if rows.len() < 2 || cols.len() < 2 {
            return Err(Error::Resolution(format!(
                "order-{order} rectangle at ({}, {}) holds {} rows and {} columns",
                rect.t_lo,
                rect.x_lo,
                rows.len(),
                cols.len()
            )));
        }
        let (i0, j0) = (g.exact_row(rect.t_lo), g.exact_col(rect.x_lo));
        let (i0, j0) = match (i0, j0) {
            (Ok(i), Ok(j)) => (i, j),
            _ => return Err(Error::Resolution(format!("corner of order-{order} rectangle at ({}, {}) is not a grid point", rect.t_lo, rect.x_lo))),
        };
        let osc = diameter(&path.collect_box(rows, cols), path.d);
        let center = path.value(i0, j0).to_vec();
        let radius = cfg.good_radius(order)?;
        if osc <= radius {
            good.push(CoverRect { order, rect, radius, center, osc });
        } else if order < 2 * q {
            for c in children(&rect, order).into_iter().rev() {
                stack.push((c, order + 1));
            }
        } else {
            let radius = cfg.residual_radius();
            omega_q2 &= osc <= radius;
            residual.push(CoverRect { order, rect, radius, center, osc });
        }
    }
    let area = domain.area();
    let mut good_counts = BTreeMap::new();
    for r in &good {
        *good_counts.entry(r.order).or_insert(0) += 1;
    }
    let all = good.iter().chain(&residual);
    let r6_mass: f64 = all.clone().map(|r| r.radius.powi(6)).sum();
    let zeta_mass = all.map(|r| gauge_zeta(r.radius).ok()).sum::<Option<f64>>();
    let good_area: f64 = good.iter().map(|r| r.rect.area()).sum();
    let residual_area = residual.len() as f64 * pow2(-12 * q as i32);
    Ok(CoverReport {
        q,
        domain: *domain,
        n_q: residual.len(),
        good_rects: good,
        residual_rects: residual,
        good_counts,
        zeta_mass,
        r6_mass,
        zeta_mass_normalized: zeta_mass.map(|z| z / area),
        r6_mass_normalized: r6_mass / area,
        omega_q1: residual_area <= area * (-(q as f64).sqrt() / 4.0).exp(),
        omega_q2,
        good_area_fraction: good_area / area,
        degraded: stopping.is_some_and(|s| !s.all_untriggered()),
    })
}

/// A grid point whose value leaves the ball of its rectangle (or that no
/// rectangle contains, with `rect = None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverViolation {
    pub t: f64,
    pub x: f64,
    pub rect: Option<usize>,
    pub distance: f64,
    pub radius: f64,
}

/// Grid indices of `[lo, hi)` along one axis, closed at the domain edge.
fn half_open(range: std::ops::Range<usize>, coord: impl Fn(usize) -> f64, hi: f64, edge: f64) -> std::ops::Range<usize> {
    let mut r = range;
    if hi < edge && r.end > r.start && (coord(r.end - 1) - hi).abs() < 1e-9 * (1.0 + hi.abs()) {
        r.end -= 1;
    }
    r
}

/// Checks that every grid point of the cover domain lies in the ball `B_A`
/// of the rectangle containing it. Each point is assigned to exactly one
/// rectangle (cells are half-open, closed on the domain's far edges).
pub fn range_cover_check(path: &FieldPath, cover: &CoverReport) -> Vec<CoverViolation> {
    let g = path.grid;
    let dom = cover.domain;
    let (drows, dcols) = path.index_box(&dom);
    let mut seen = vec![false; drows.len() * dcols.len()];
    let mut out = Vec::new();
    for (idx, r) in cover.rects().enumerate() {
        let (rows, cols) = path.index_box(&r.rect);
        let rows = half_open(rows, |i| g.time(i), r.rect.t_hi, dom.t_hi);
        let cols = half_open(cols, |j| g.space(j), r.rect.x_hi, dom.x_hi);
        for i in rows {
            for j in cols.clone() {
                if drows.contains(&i) && dcols.contains(&j) {
                    seen[(i - drows.start) * dcols.len() + (j - dcols.start)] = true;
                }
                let v = path.value(i, j);
                let dist = norm(&v.iter().zip(&r.center).map(|(a, b)| a - b).collect::<Vec<_>>());
                if dist > r.radius {
                    out.push(CoverViolation { t: g.time(i), x: g.space(j), rect: Some(idx), distance: dist, radius: r.radius });
                }
            }
        }
    }
    for (n, s) in seen.iter().enumerate() {
        if !s {
            let (i, j) = (drows.start + n / dcols.len(), dcols.start + n % dcols.len());
            out.push(CoverViolation { t: g.time(i), x: g.space(j), rect: None, distance: f64::NAN, radius: 0.0 });
        }
    }
    out
}

/// Lattice used for the covers of the linear case: the order-`(q−1)` dyadic
/// cell containing `p`, sampled at half the order-`q` spacing (33 × 9 nodes).
pub fn cover_patch(q: u32, p: ParabolicPoint) -> Result<(AxisRect, SpaceTimeGrid)> {
    if q < 2 {
        return Err(Error::Domain(format!("cover patch needs q >= 2, got {q}")));
    }
    let patch = crate::geometry::dyadic_rect(q - 1, p);
    let (dt, dx) = (pow2(-4 * q as i32 - 1), pow2(-2 * q as i32 - 1));
    let grid = SpaceTimeGrid::new(patch.t_lo, patch.x_lo, dt, dx, 32, 8)?;
    Ok((patch, grid))
}

/// Box-counting fit of a point cloud in ℝ^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDimension {
    pub dimension: f64,
    pub stderr: f64,
    pub radii: Vec<f64>,
    pub counts: Vec<usize>,
    /// All points coincide; the dimension is reported as 0.
    pub degenerate: bool,
}

/// Slope of `log N(ε)` against `log(1/ε)`, where `N(ε)` is the number of
/// occupied axis-aligned boxes of side `ε`.
pub fn box_dimension(points: &[f64], d: usize, radii: &[f64]) -> Result<BoxDimension> {
    if d == 0 || points.len() % d != 0 {
        return Err(Error::Inconsistent(format!("{} coordinates do not form {d}-vectors", points.len())));
    }
    let n = points.len() / d;
    if n < 1000 {
        return Err(Error::SampleTooSmall(format!("box dimension needs at least 1000 points ({n})")));
    }
    let (lo, hi) = radii.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    if radii.len() < 4 || !(lo > 0.0) || hi / lo < 4.0 {
        return Err(Error::Config("box dimension needs at least 4 positive radii spanning 2 octaves".into()));
    }
    let first = &points[..d];
    if points.chunks_exact(d).all(|p| p == first) {
        return Ok(BoxDimension { dimension: 0.0, stderr: 0.0, radii: radii.to_vec(), counts: vec![1; radii.len()], degenerate: true });
    }
    let counts: Vec<usize> = radii
        .iter()
        .map(|&eps| {
            let mut boxes = HashSet::new();
            for p in points.chunks_exact(d) {
                boxes.insert(p.iter().map(|v| (v / eps).floor() as i64).collect::<Vec<_>>());
            }
            boxes.len()
        })
        .collect();
    let x: Vec<f64> = radii.iter().map(|r| (1.0 / r).ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let fit = line_fit(&x, &y)?;
    Ok(BoxDimension { dimension: fit.slope, stderr: fit.slope_se, radii: radii.to_vec(), counts, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gauge_examples() {
        assert_relative_eq!(gauge_f(0.25).unwrap(), 0.25, max_relative = 1e-15);
        assert_relative_eq!(gauge_f(pow2(-16)).unwrap(), pow2(-16) * 4f64.powf(-1.0 / 6.0), max_relative = 1e-14);
        assert_relative_eq!(gauge_f(pow2(-16)).unwrap(), 1.2110909e-5, max_relative = 1e-7);
        assert_relative_eq!(gauge_f(pow2(-16)).unwrap(), 1.211164e-5, max_relative = 1e-4);
        assert_relative_eq!(gauge_f(pow2(-4)).unwrap(), 0.0557, max_relative = 1e-3);
        assert_relative_eq!(gauge_zeta(pow2(-16)).unwrap(), pow2(-96) * 4.0, max_relative = 1e-14);
        assert_relative_eq!(gauge_zeta(0.25).unwrap(), pow2(-12), max_relative = 1e-14);
        for bad in [0.0, -0.1, 0.5, 0.7] {
            assert!(matches!(gauge_f(bad), Err(Error::Domain(_))));
            assert!(matches!(gauge_zeta(bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn gauge_f_increasing() {
        let mut prev = 0.0;
        for k in 1..400 {
            let r = 0.49 * k as f64 / 400.0;
            let v = gauge_f(r).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn ladder_bounds() {
        for q in 2..=64u32 {
            let l = ScaleLadder::new(q).unwrap();
            assert_eq!(l.radii[0], pow2(-(q as i32)));
            assert!(l.radii.windows(2).all(|w| w[1] < w[0]));
            // q^ℓ_q ≤ 2^q  ⇔  r_{q,ℓ_q} ≥ 2^{-2q}
            assert!(int_pow_le(q, l.levels(), q));
            assert!(l.radii[l.levels() as usize] >= pow2(-2 * q as i32) * (1.0 - 1e-12));
            assert_eq!(l.levels(), (q as f64 / (q as f64).log2()).floor() as u32, "q = {q}");
        }
        assert!(ScaleLadder::new(1).is_err());
    }

    struct Fixed(Vec<f64>, Vec<f64>);

    impl WindowOscillation for Fixed {
        fn resolve(&self, _: f64, _: f64, _: f64) -> Result<()> {
            Ok(())
        }
        fn oscillation(&mut self, _: f64, _: f64, r: f64) -> Result<f64> {
            Ok(self.1[self.0.iter().position(|&s| s == r).unwrap()])
        }
    }

    #[test]
    fn zero_field_found_at_top() {
        let cfg = GaugeConfig { q: 5, ..Default::default() };
        let radii = ScaleLadder::new(5).unwrap().radii;
        let mut d = Fixed(radii.clone(), vec![0.0; radii.len()]);
        let w = window_search(&mut d, 1.5, 0.5, &cfg).unwrap();
        assert!(w.found);
        assert_eq!(w.level, Some(0));
        assert_eq!(w.kappa, 0.0);
    }

    #[test]
    fn found_iff_k_tilde_reaches_kappa() {
        let radii = ScaleLadder::new(4).unwrap().radii;
        let osc: Vec<f64> = radii.iter().map(|r| 3.0 * r).collect();
        let base = GaugeConfig { q: 4, ..Default::default() };
        let kappa = window_search(&mut Fixed(radii.clone(), osc.clone()), 1.5, 0.5, &base).unwrap().kappa;
        let mut prev = false;
        for k in [0.5, 1.0, 0.999 * kappa, kappa, 1.5 * kappa, 10.0] {
            let w = window_search(&mut Fixed(radii.clone(), osc.clone()), 1.5, 0.5, &base.with_k_tilde(k)).unwrap();
            assert_eq!(w.found, k >= kappa);
            assert!(!prev || w.found);
            prev = w.found;
        }
    }

    #[test]
    fn calibration_is_empirical_quantile() {
        let kappas: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        // 1 − e^{−√5} = 0.8931 → 90 of 100 windows
        let k = calibrate_k_tilde(&kappas, 5).unwrap();
        assert_eq!(k, 90.0);
        let freq = kappas.iter().filter(|&&v| v <= k).count() as f64 / 100.0;
        assert!(freq >= 1.0 - (-(5f64).sqrt()).exp());
        assert!(calibrate_k_tilde(&[], 5).is_err());
    }

    #[test]
    fn ladder_sampler_scales() {
        let s = LadderSampler::new(1.5, 0.5, 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let mut mean = vec![0.0; s.ladder.radii.len()];
        for _ in 0..n {
            let d = s.draw(&mut rng);
            for (m, o) in mean.iter_mut().zip(&d.osc) {
                *m += o / n as f64;
            }
        }
        // oscillation scales like r: the ratio across levels stays within a factor 1.5 of r ratio
        for l in 1..mean.len() {
            let ratio = (mean[l] / mean[l - 1]) / (s.ladder.radii[l] / s.ladder.radii[l - 1]);
            assert!(ratio > 0.67 && ratio < 1.5, "level {l}: {ratio}");
        }
    }

    fn patch_field(q: u32, f: impl Fn(f64, f64) -> f64) -> (AxisRect, FieldPath) {
        let (patch, grid) = cover_patch(q, ParabolicPoint::new(1.5, 0.5)).unwrap();
        let path = FieldPath::from_fn(grid, 1, "test", |t, x, out| out[0] = f(t, x));
        (patch, path)
    }

    #[test]
    fn constant_field_cover() {
        let q = 4;
        let cfg = GaugeConfig { q, ..Default::default() };
        let (patch, path) = patch_field(q, |_, _| 0.3);
        let c = build_cover(&path, &patch, &cfg, None).unwrap();
        assert_eq!(c.good_rects.len(), 64);
        assert!(c.residual_rects.is_empty());
        assert_eq!(c.good_counts.get(&q), Some(&64));
        let dq = cfg.good_radius(q).unwrap();
        assert_relative_eq!(c.r6_mass, 64.0 * dq.powi(6), max_relative = 1e-12);
        match gauge_zeta(dq) {
            Ok(z) => assert_relative_eq!(c.zeta_mass.unwrap(), 64.0 * z, max_relative = 1e-12),
            Err(_) => assert!(c.zeta_mass.is_none()),
        }
        assert!(c.omega_q1 && c.omega_q2);
        assert_relative_eq!(c.good_area_fraction, 1.0, max_relative = 1e-12);
        assert!(range_cover_check(&path, &c).is_empty());
        // the cover partitions the patch
        for (a, ra) in c.good_rects.iter().enumerate() {
            assert!(patch.contains_rect(&ra.rect));
            for rb in &c.good_rects[a + 1..] {
                assert!(!ra.rect.overlaps(&rb.rect));
            }
        }
    }

    #[test]
    fn small_k_tilde_needs_finer_resolution() {
        let q = 4;
        let (patch, path) = patch_field(q, |t, x| 1e3 * (t + x));
        let cfg = GaugeConfig { q, k_tilde: 1e-3, ..Default::default() };
        assert!(matches!(build_cover(&path, &patch, &cfg, None), Err(Error::Resolution(_))));
    }

    #[test]
    fn refinement_and_residuals_on_a_fine_grid() {
        // q = 2 on an order-1 patch resolved down to order 4
        let q = 2;
        let patch = crate::geometry::dyadic_rect(1, ParabolicPoint::new(1.5, 0.5));
        let grid = SpaceTimeGrid::new(patch.t_lo, patch.x_lo, pow2(-17), pow2(-9), 1 << 13, 1 << 7).unwrap();
        // a spike in one corner cell forces splits all the way down
        let spike = ParabolicPoint::new(patch.t_lo + 0.3 * pow2(-16), patch.x_lo + 0.3 * pow2(-8));
        let path = FieldPath::from_fn(grid, 1, "spike", |t, x, out| {
            out[0] = if (t - spike.t).abs() < 2.0 * pow2(-17) && (x - spike.x).abs() < 2.0 * pow2(-9) { 50.0 } else { 0.0 }
        });
        let cfg = GaugeConfig { q, k_tilde: 0.05, k2: 1e3, ..Default::default() };
        let c = build_cover(&path, &patch, &cfg, None).unwrap();
        assert!(c.n_q > 0);
        assert!(c.good_counts.keys().any(|&o| o > q));
        assert!(c.omega_q2);
        let area: f64 = c.rects().map(|r| r.rect.area()).sum();
        assert_relative_eq!(area, patch.area(), max_relative = 1e-12);
        assert!(range_cover_check(&path, &c).is_empty());
        let tight = build_cover(&path, &patch, &cfg.clone().with_k_tilde(0.05), None).unwrap();
        assert_eq!(tight, c);
        let strict = GaugeConfig { k2: 1.0, ..cfg };
        assert!(!build_cover(&path, &patch, &strict, None).unwrap().omega_q2);
    }

    #[test]
    fn inflated_value_is_reported_once() {
        let q = 4;
        let cfg = GaugeConfig { q, ..Default::default() };
        let (patch, path) = patch_field(q, |t, x| 0.01 * (t - 1.5).signum() + 0.001 * x);
        let c = build_cover(&path, &patch, &cfg, None).unwrap();
        assert!(range_cover_check(&path, &c).is_empty());
        let mut bad = path.clone();
        let (i, j) = (7, 3);
        bad.value_mut(i, j)[0] += 10.0;
        let v = range_cover_check(&bad, &c);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].t, v[0].x), (path.grid.time(i), path.grid.space(j)));
    }

    #[test]
    fn misaligned_domain_rejected() {
        let q = 4;
        let (patch, path) = patch_field(q, |_, _| 0.0);
        let shifted = AxisRect { x_lo: patch.x_lo + 1e-3, ..patch };
        assert!(matches!(build_cover(&path, &shifted, &GaugeConfig::default(), None), Err(Error::NotCellAligned(_))));
    }

    #[test]
    fn box_dimension_synthetic() {
        let radii = [0.25, 0.125, 0.0625, 1.0 / 32.0];
        let mut sq = Vec::new();
        for a in 0..200 {
            for b in 0..200 {
                sq.extend_from_slice(&[(a as f64 + 0.5) / 200.0, (b as f64 + 0.5) / 200.0, 0.0]);
            }
        }
        let s = box_dimension(&sq, 3, &radii).unwrap();
        assert!((s.dimension - 2.0).abs() < 0.1, "{s:?}");
        let mut curve = Vec::new();
        for k in 0..20_000 {
            let t = k as f64 / 20_000.0 * 4.0;
            curve.extend_from_slice(&[t.cos() * 0.6, t.sin() * 0.6, 0.3 * t]);
        }
        let c = box_dimension(&curve, 3, &radii).unwrap();
        assert!((c.dimension - 1.0).abs() < 0.1, "{c:?}");
        let flat = vec![0.2; 3000];
        let z = box_dimension(&flat, 3, &radii).unwrap();
        assert!(z.degenerate && z.dimension == 0.0);
        assert!(box_dimension(&flat[..300], 3, &radii).is_err());
        assert!(box_dimension(&sq, 3, &[0.1, 0.09, 0.08, 0.07]).is_err());
    }
}
