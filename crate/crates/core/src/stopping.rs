//! Grid detection of the stopping times `τ_{K,1}`, `τ_{K,2}`, `τ_{K,3}` and
//! empirical Hölder moduli.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{norm, FieldPath};
use crate::geometry::ParabolicPoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub k: f64,
    pub delta: f64,
    /// Horizon `T₀ > 3`.
    pub t0: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_lo: f64,
    /// Only pairs with `Δ ≤ delta_cap` are scanned for `τ_{K,1}`.
    pub delta_cap: f64,
    /// Partner offsets are taken on a `stride`-subsampled lattice (nearest
    /// neighbours always included).
    pub stride: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self { k: 10.0, delta: 0.25, t0: 3.5, x_lo: -2.0, x_hi: 2.0, t_lo: 0.5, delta_cap: 0.5, stride: 2 }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.t0 > 3.0) {
            return Err(Error::Config(format!("T0 must exceed 3, got {}", self.t0)));
        }
        if !(self.k > 0.0 && self.delta_cap > 0.0 && self.stride >= 1 && self.x_lo < self.x_hi) {
            return Err(Error::Config("K, delta_cap, stride and the space window must be positive".into()));
        }
        Ok(())
    }

    pub fn with_k(&self, k: f64) -> Self {
        Self { k, ..self.clone() }
    }
}

/// A detected stopping time. Untriggered scans report `T₀`; `horizon` is
/// the last grid time actually inspected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopTime {
    pub tau: f64,
    pub row: Option<usize>,
    pub triggered: bool,
    pub horizon: f64,
    pub witness: Option<(ParabolicPoint, ParabolicPoint)>,
}

impl StopTime {
    fn untriggered(t0: f64, horizon: f64) -> Self {
        Self { tau: t0, row: None, triggered: false, horizon, witness: None }
    }
}

/// Partner offsets `(a, b)` (row lag `a ≥ 0`, column lag `b`) with their
/// squared Hölder scale `Δ^{2(1−δ)}`.
fn offsets(path: &FieldPath, cfg: &StoppingConfig) -> Vec<(usize, isize, f64)> {
    let g = path.grid;
    let amax = (cfg.delta_cap.powi(4) / g.dt + 1e-9).floor() as usize;
    let bmax = (cfg.delta_cap.powi(2) / g.dx + 1e-9).floor() as isize;
    let s = cfg.stride;
    let mut out = Vec::new();
    for a in 0..=amax {
        for b in -bmax..=bmax {
            if a == 0 && b <= 0 {
                continue;
            }
            let near = a <= 1 && b.unsigned_abs() <= 1;
            if !near && (a % s != 0 || b.unsigned_abs() % s != 0) {
                continue;
            }
            let delta = ((a as f64 * g.dt).powf(0.25)).max((b.unsigned_abs() as f64 * g.dx).sqrt());
            out.push((a, b, delta.powf(2.0 * (1.0 - cfg.delta))));
        }
    }
    out
}

/// Rows and columns of the scan window.
fn window(path: &FieldPath, cfg: &StoppingConfig) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let g = path.grid;
    if g.x0 > cfg.x_lo + 1e-12 || g.x1 < cfg.x_hi - 1e-12 || g.t1 < cfg.t_lo || g.t0 > cfg.t_lo + 1e-12 {
        return Err(Error::Window(format!(
            "grid [{}, {}] x [{}, {}] does not cover the scan window",
            g.t0, g.t1, g.x0, g.x1
        )));
    }
    let rows = g.rows_in(cfg.t_lo, cfg.t0);
    let rows = rows.start.max(path.rows().start)..rows.end.min(path.rows().end);
    Ok((rows, g.cols_in(cfg.x_lo, cfg.x_hi)))
}

/// Largest `|u(p) − u(q)|² / Δ^{2(1−δ)}` over the scanned pairs ending in row `i`.
fn row_ratio(path: &FieldPath, i: usize, row0: usize, cols: &std::ops::Range<usize>, offs: &[(usize, isize, f64)], first: Option<f64>) -> (f64, Option<(usize, usize, usize, usize)>) {
    let d = path.d;
    let mut best = 0.0;
    let mut arg = None;
    for &(a, b, scale) in offs {
        if a > i - row0 {
            continue;
        }
        let s = i - a;
        for j in cols.clone() {
            let y = j as isize + b;
            if y < cols.start as isize || y >= cols.end as isize {
                continue;
            }
            let (p, q) = (path.value(i, j), path.value(s, y as usize));
            let mut d2 = 0.0;
            for k in 0..d {
                let e = p[k] - q[k];
                d2 += e * e;
            }
            let r = d2 / scale;
            if r > best {
                best = r;
                arg = Some((i, j, s, y as usize));
                if let Some(th) = first {
                    if r >= th {
                        return (best, arg);
                    }
                }
            }
        }
    }
    (best, arg)
}

/// `τ_{K,1}`: first grid time in `[t_lo, T₀]` at which a scanned pair violates
/// `|u(t, x) − u(s, y)| < K Δ^{1−δ}`.
pub fn tau1(path: &FieldPath, cfg: &StoppingConfig) -> Result<StopTime> {
    cfg.validate()?;
    let (rows, cols) = window(path, cfg)?;
    let offs = offsets(path, cfg);
    let g = path.grid;
    let th = cfg.k * cfg.k;
    for i in rows.clone() {
        let (r, arg) = row_ratio(path, i, rows.start, &cols, &offs, Some(th));
        if r >= th {
            let (i, j, s, y) = arg.expect("a ratio above zero has a witness");
            let w = (ParabolicPoint::new(g.time(i), g.space(j)), ParabolicPoint::new(g.time(s), g.space(y)));
            return Ok(StopTime { tau: g.time(i), row: Some(i), triggered: true, horizon: g.time(i), witness: Some(w) });
        }
    }
    let horizon = rows.end.checked_sub(1).map_or(cfg.t_lo, |r| g.time(r));
    Ok(StopTime::untriggered(cfg.t0, horizon))
}

/// Smallest `K` for which `τ_{K,1}` stays untriggered on this path: the
/// largest scanned ratio `|u(p) − u(q)| / Δ^{1−δ}`.
pub fn holder_max(path: &FieldPath, cfg: &StoppingConfig) -> Result<f64> {
    let (rows, cols) = window(path, cfg)?;
    let offs = offsets(path, cfg);
    let mut best: f64 = 0.0;
    for i in rows.clone() {
        best = best.max(row_ratio(path, i, rows.start, &cols, &offs, None).0);
    }
    Ok(best.sqrt())
}

/// `τ_{K,2}` (on `ũ`) or `τ_{K,3}` (on `v`): first grid time with
/// `|path(t, x)| ≥ K(1 + |x|)` at some node.
pub fn tau_growth(path: &FieldPath, k: f64, t0: f64) -> StopTime {
    let g = path.grid;
    for i in path.rows() {
        if g.time(i) > t0 + 1e-12 {
            break;
        }
        for j in 0..g.n_nodes() {
            let x = g.space(j);
            if norm(path.value(i, j)) >= k * (1.0 + x.abs()) {
                let p = ParabolicPoint::new(g.time(i), x);
                return StopTime { tau: g.time(i), row: Some(i), triggered: true, horizon: g.time(i), witness: Some((p, p)) };
            }
        }
    }
    let last = path.rows().end - 1;
    StopTime::untriggered(t0, g.time(last).min(t0))
}

/// Smallest `K` for which [`tau_growth`] stays untriggered.
pub fn growth_max(path: &FieldPath, t0: f64) -> f64 {
    let g = path.grid;
    let mut best: f64 = 0.0;
    for i in path.rows() {
        if g.time(i) > t0 + 1e-12 {
            break;
        }
        for j in 0..g.n_nodes() {
            best = best.max(norm(path.value(i, j)) / (1.0 + g.space(j).abs()));
        }
    }
    best
}

/// The three stopping times of one replicate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingResult {
    pub tau1: StopTime,
    pub tau2: StopTime,
    pub tau3: StopTime,
}

impl StoppingResult {
    pub fn all_untriggered(&self) -> bool {
        !(self.tau1.triggered || self.tau2.triggered || self.tau3.triggered)
    }
}

/// Copy of `path` frozen after row `row` (`path(t ∧ t_row, ·)`).
pub fn clip_path(path: &FieldPath, row: usize) -> FieldPath {
    let mut out = path.clone();
    let frozen = path.row(row).to_vec();
    for i in path.rows() {
        if i > row {
            out.row_mut(i).copy_from_slice(&frozen);
        }
    }
    out
}

/// Number of scanned pairs of the clipped path `u(t ∧ τ₁⁻, ·)` violating the
/// modulus, where `τ₁⁻` is the last compliant row.
pub fn clipped_violations(path: &FieldPath, cfg: &StoppingConfig, tau: &StopTime) -> Result<usize> {
    let clipped = match tau.row {
        Some(r) if r > path.rows().start => clip_path(path, r - 1),
        Some(_) => return Ok(0),
        None => path.clone(),
    };
    let (rows, cols) = window(&clipped, cfg)?;
    let offs = offsets(&clipped, cfg);
    let th = cfg.k * cfg.k;
    let mut count = 0;
    let d = clipped.d;
    for i in rows.clone() {
        for &(a, b, scale) in &offs {
            if a > i - rows.start {
                continue;
            }
            for j in cols.clone() {
                let y = j as isize + b;
                if y < cols.start as isize || y >= cols.end as isize {
                    continue;
                }
                let (p, q) = (clipped.value(i, j), clipped.value(i - a, y as usize));
                let d2: f64 = (0..d).map(|k| (p[k] - q[k]).powi(2)).sum();
                if d2 >= th * scale {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Empirical Hölder constant over random pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub z_hat: f64,
    pub n_pairs: usize,
}

/// `max |u(p) − u(q)| / Δ(p − q)^{1−δ}` over `n_pairs` random distinct grid
/// pairs in the window, drawn from `seed` so that samples are nested in
/// `n_pairs`.
pub fn estimate_z(path: &FieldPath, cfg: &StoppingConfig, n_pairs: usize, seed: u64) -> Result<HolderEstimate> {
    if n_pairs == 0 {
        return Err(Error::Config("estimate_z needs at least one pair".into()));
    }
    let (rows, cols) = window(path, cfg)?;
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Window("empty scan window".into()));
    }
    let g = path.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: f64 = 0.0;
    let mut drawn = 0;
    while drawn < n_pairs {
        let (i, j) = (rng.random_range(rows.clone()), rng.random_range(cols.clone()));
        let (s, y) = (rng.random_range(rows.clone()), rng.random_range(cols.clone()));
        drawn += 1;
        if (i, j) == (s, y) {
            continue;
        }
        let delta = ((g.time(i) - g.time(s)).abs().powf(0.25)).max((g.space(j) - g.space(y)).abs().sqrt());
        let diff: f64 = path.value(i, j).iter().zip(path.value(s, y)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        z = z.max(diff / delta.powf(1.0 - cfg.delta));
    }
    Ok(HolderEstimate { z_hat: z, n_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::SpaceTimeGrid;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(0.0, -2.5, 1.0 / 256.0, 1.0 / 8.0, 1024, 40).unwrap()
    }

    #[test]
    fn constant_field_never_stops() {
        let f = FieldPath::from_fn(grid(), 2, "c", |_, _, o| o.fill(1.5));
        let cfg = StoppingConfig { k: 1.0, ..Default::default() };
        let t = tau1(&f, &cfg).unwrap();
        assert!(!t.triggered);
        assert_eq!(t.tau, cfg.t0);
        assert_eq!(holder_max(&f, &cfg).unwrap(), 0.0);
        assert!(!tau_growth(&f, 2.2, 3.5).triggered);
        assert_eq!(estimate_z(&f, &cfg, 100, 1).unwrap().z_hat, 0.0);
    }

    #[test]
    fn inserted_jump_is_found() {
        let g = grid();
        let mut f = FieldPath::zeros(g, 1, 0..g.n_times(), "jump");
        let (i, j) = (g.nearest_row(2.0).unwrap(), g.nearest_col(0.5).unwrap());
        let cfg = StoppingConfig { k: 3.0, ..Default::default() };
        f.value_mut(i, j)[0] = 2.0 * cfg.k;
        let t = tau1(&f, &cfg).unwrap();
        assert!(t.triggered);
        assert_eq!(t.row, Some(i));
        let (p, q) = t.witness.unwrap();
        let lhs = (f.value(g.nearest_row(p.t).unwrap(), g.nearest_col(p.x).unwrap())[0]
            - f.value(g.nearest_row(q.t).unwrap(), g.nearest_col(q.x).unwrap())[0])
            .abs();
        assert!(lhs >= cfg.k * crate::geometry::delta_metric(p, q).powf(1.0 - cfg.delta));
        assert_eq!(clipped_violations(&f, &cfg, &t).unwrap(), 0);
    }

    #[test]
    fn growth_injection() {
        let g = grid();
        let mut f = FieldPath::zeros(g, 1, 0..g.n_times(), "growth");
        let (i, j) = (g.nearest_row(1.25).unwrap(), g.nearest_col(-1.0).unwrap());
        f.value_mut(i, j)[0] = 5.0 * 2.0 + 1.0;
        let t = tau_growth(&f, 5.0, 3.5);
        assert!(t.triggered && t.row == Some(i));
        assert!(!tau_growth(&f, 6.0, 3.5).triggered);
        assert!((growth_max(&f, 3.5) - 5.5).abs() < 1e-12);
    }

    #[test]
    fn ramp_ratio_is_attained_at_full_separation() {
        let f = FieldPath::from_fn(grid(), 1, "ramp", |_, x, o| o[0] = x);
        let cfg = StoppingConfig { delta: 0.5, ..Default::default() };
        // |x − y| / |x − y|^{1/4} is maximal at |x − y| = 4 on [−2, 2]
        let z = estimate_z(&f, &cfg, 200_000, 3).unwrap().z_hat;
        assert!(z <= 4f64.powf(0.75) + 1e-12 && z > 4f64.powf(0.75) * 0.97, "{z}");
    }

    #[test]
    fn window_must_be_covered() {
        let g = SpaceTimeGrid::new(0.0, -1.0, 1.0 / 256.0, 1.0 / 8.0, 256, 16).unwrap();
        let f = FieldPath::zeros(g, 1, 0..g.n_times(), "small");
        assert!(matches!(tau1(&f, &StoppingConfig::default()), Err(Error::Window(_))));
    }
}
