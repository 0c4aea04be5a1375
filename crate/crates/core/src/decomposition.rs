//! Local decomposition of `ũ` around `(t₀, x₀, ρ)` with frozen coefficients.
//!
//! For `t ≥ t₀⁻` every term is a discrete convolution or propagation on the
//! solver grid, started at the row of `t₀⁻`:
//!
//! ```text
//! ũ = σ_f·N0 + N1 + N2 − σ_f·v1 + ũ_det,      N2 = N2a − N2b,
//! w = σ_f·N0 + E,   E = N1 + N2 − σ_f·v̂1 + û
//! ```
//!
//! with `σ_f = σ(u(t₀⁻ ∧ τ₁, x₀))`. Because all windows tile the noise
//! exactly and share the same stencil, the first identity holds to round-off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{norm, FieldPath};
use crate::geometry::{delta_of, diameter, AxisRect, ParabolicPoint, ParabolicRect};
use crate::heat_kernel::smooth_cells;
use crate::noise::{NoiseSource, NoiseView, SpaceTimeGrid};
use crate::solver::{
    clip_row, convolve_field, heat_pin, propagate, solve_fd, solve_modified, MatrixIntegrand,
    Boundary, InitialCondition, PathIntegrand, ScalarIntegrand, SigmaFunction, SolverConfig,
};
use crate::stopping::{self, StoppingConfig, StoppingResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Space coordinate at which `σ` is frozen; `None` means `x₀`.
    #[serde(default)]
    pub freeze_at: Option<f64>,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self { alpha: 0.55, beta: 0.60, kappa: 2.0, freeze_at: None }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5 < self.alpha && self.alpha < self.beta && self.beta < 2.0 / 3.0) {
            return Err(Error::Config(format!("need 1/2 < alpha < beta < 2/3 ({}, {})", self.alpha, self.beta)));
        }
        if !(self.kappa > 1.0) {
            return Err(Error::Config(format!("kappa must exceed 1, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// `t₀⁻ = t₀ − ρ⁴ − ρ^{4(1−α)}`, `L₁ = ρ² + ρ^{2(1−β)}` and the rectangles
/// `R_ρ ⊂ R⁺`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub t0: f64,
    pub x0: f64,
    pub rho: f64,
    pub t0_minus: f64,
    pub l1: f64,
    pub r_rho: ParabolicRect,
    pub r_plus: AxisRect,
}

pub fn build_frame(t0: f64, x0: f64, rho: f64, cfg: &DecompositionConfig) -> Result<LocalFrame> {
    cfg.validate()?;
    if !AxisRect::r0().contains(ParabolicPoint::new(t0, x0)) {
        return Err(Error::Domain(format!("({t0}, {x0}) outside R0 = [1, 2] x [0, 1]")));
    }
    let r_rho = ParabolicRect::new(ParabolicPoint::new(t0, x0), rho)?;
    let t0_minus = t0 - rho.powi(4) - rho.powf(4.0 * (1.0 - cfg.alpha));
    let l1 = rho * rho + rho.powf(2.0 * (1.0 - cfg.beta));
    if !(t0_minus > 0.5) {
        return Err(Error::Domain(format!("t0_minus = {t0_minus} is not above 1/2")));
    }
    let r_plus = AxisRect { t_lo: t0_minus, t_hi: t0 + rho.powi(4), x_lo: x0 - l1, x_hi: x0 + l1 };
    Ok(LocalFrame { t0, x0, rho, t0_minus, l1, r_rho, r_plus })
}

/// A frame snapped to grid lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    /// Row of `t₀⁻`.
    pub m0: usize,
    /// Last row of `R_ρ`.
    pub last: usize,
    pub rect_rows: std::ops::Range<usize>,
    pub rect_cols: std::ops::Range<usize>,
    /// Noise cells with `|y − x₀| ≤ L₁` after snapping.
    pub near_cols: std::ops::Range<usize>,
    pub freeze_col: usize,
    pub snap_t: f64,
    pub snap_x: f64,
}

pub fn snap_frame(frame: &LocalFrame, grid: &SpaceTimeGrid, freeze_at: Option<f64>) -> Result<GridFrame> {
    let row = |t: f64| grid.nearest_row(t).ok_or_else(|| Error::Misaligned(format!("time {t} outside the grid")));
    let col = |x: f64| grid.nearest_col(x).ok_or_else(|| Error::Misaligned(format!("position {x} outside the grid")));
    let m0 = row(frame.t0_minus)?;
    let rect = frame.r_rho.to_axis();
    let last = row(rect.t_hi).map_err(|_| Error::Misaligned(format!("R_rho reaches beyond the grid horizon {}", grid.t1)))?;
    if last >= grid.n_times() {
        return Err(Error::Misaligned(format!("R_rho reaches beyond the grid horizon {}", grid.t1)));
    }
    let (lo, hi) = (col(frame.x0 - frame.l1)?, col(frame.x0 + frame.l1)?);
    let snap_t = (grid.time(m0) - frame.t0_minus).abs();
    let snap_x = (grid.space(lo) - (frame.x0 - frame.l1)).abs().max((grid.space(hi) - (frame.x0 + frame.l1)).abs());
    if snap_t >= grid.dt || snap_x >= grid.dx {
        return Err(Error::Misaligned(format!("snap displacement ({snap_t}, {snap_x}) exceeds a cell")));
    }
    // edges of R_ρ snap to the nearest grid line so the snapped width tracks ρ² evenly across ρ
    let rect_rows = row(rect.t_lo)?..row(rect.t_hi)? + 1;
    let rect_cols = col(rect.x_lo)?..col(rect.x_hi)? + 1;
    if rect_rows.is_empty() || rect_cols.is_empty() || rect_rows.start < m0 {
        return Err(Error::Misaligned("R_rho contains no grid point after t0_minus".into()));
    }
    Ok(GridFrame {
        m0,
        last,
        rect_rows,
        rect_cols,
        near_cols: lo..hi + 1,
        freeze_col: col(freeze_at.unwrap_or(frame.x0))?,
        snap_t,
        snap_x,
    })
}

/// Per-replicate paths shared by every frame.
pub struct DecompositionInputs<'a> {
    pub solver: SolverConfig,
    pub noise: &'a dyn NoiseSource,
    pub u: FieldPath,
    pub u_tilde: FieldPath,
    pub v: FieldPath,
    pub n0: FieldPath,
    pub stopping: StoppingResult,
}

impl<'a> DecompositionInputs<'a> {
    /// Runs `u`, the stopping scans, `ũ`, `v` and `N0` on one realization.
    pub fn prepare(solver: &SolverConfig, noise: &'a dyn NoiseSource, stop: &StoppingConfig) -> Result<Self> {
        let u = solve_fd(solver, noise)?;
        let tau1 = stopping::tau1(&u, stop)?;
        // with no clip row the modified run is the same recursion as `u`
        let u_tilde = match clip_row(noise.grid(), tau1.tau) {
            Some(_) => solve_modified(solver, noise, tau1.tau)?,
            None => {
                let mut c = u.clone();
                c.label = "u_tilde".into();
                c
            }
        };
        let d = solver.sigma.d;
        let v_cfg = SolverConfig { sigma: SigmaFunction::identity(d), ..solver.clone() };
        let v = solve_fd(&v_cfg, noise)?;
        let tau2 = stopping::tau_growth(&u_tilde, stop.k, stop.t0);
        let tau3 = stopping::tau_growth(&v, stop.k, stop.t0);
        let n0 = convolve_field(&ScalarIntegrand(1.0), noise, 0, noise.grid().nt, solver.boundary, "N0")?;
        Ok(Self { solver: solver.clone(), noise, u, u_tilde, v, n0, stopping: StoppingResult { tau1, tau2, tau3 } })
    }

    /// Clip row of `τ₁` as used by the modified solver.
    pub fn clip(&self) -> Option<usize> {
        clip_row(&self.u.grid, self.stopping.tau1.tau)
    }

    fn check(&self) -> Result<()> {
        let g = self.noise.grid();
        for p in [&self.u, &self.u_tilde, &self.n0] {
            if p.grid != *g || p.d != self.noise.dim() {
                return Err(Error::Inconsistent(format!("path '{}' is not on the noise grid", p.label)));
            }
        }
        let upto = self.clip().map_or(g.nt, |c| c);
        for i in 0..=upto {
            if self.u.row(i) != self.u_tilde.row(i) {
                return Err(Error::Inconsistent(format!("u and u_tilde differ at row {i} before tau1")));
            }
        }
        Ok(())
    }
}

/// All terms on the rows `m0..=last` (every node), plus diagnostics.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub frame: LocalFrame,
    pub grid_frame: GridFrame,
    pub sigma_frozen: Vec<f64>,
    pub n0: FieldPath,
    pub n1: FieldPath,
    pub n2: FieldPath,
    pub n2a: FieldPath,
    pub n2b: FieldPath,
    pub v1: FieldPath,
    pub u_tilde_det: FieldPath,
    pub u_hat: FieldPath,
    pub v1_hat: FieldPath,
    pub e: FieldPath,
    pub w: FieldPath,
    pub hat_u_active: bool,
    pub hat_v_active: bool,
    /// `max |σ_f N0 + N1 + N2 − σ_f v1 + ũ_det − ũ|` over `R_ρ`.
    pub reconstruction_residual: f64,
    /// `max |ũ|` over `R_ρ`.
    pub u_tilde_scale: f64,
    /// `max |w − ũ|` over `R_ρ`.
    pub w_gap: f64,
    /// `max |N2 − (N2a − N2b)|` with `N2` computed directly.
    pub n2_split_gap: f64,
    /// `max |v1 − ∫G(t − t₀⁻, x − y) N0(t₀⁻, y) dy|` over `R_ρ` (at most 32
    /// evenly spaced rows).
    pub v1_semigroup_gap: f64,
    /// Integrand samples of N1 breaking `|σ(u) − σ_f| ≤ L K Δ^{1−δ}`.
    pub sigma_modulus_violations: usize,
}

fn mat_apply(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for k in 0..d {
        out[k] = (0..d).map(|l| m[k * d + l] * v[l]).sum();
    }
}

fn crop(path: &FieldPath, rows: std::ops::Range<usize>, label: &str) -> FieldPath {
    let w = path.grid.n_nodes() * path.d;
    let vals = (rows.clone()).flat_map(|i| path.row(i).to_vec()).collect::<Vec<_>>();
    debug_assert_eq!(vals.len(), rows.len() * w);
    FieldPath::from_values(path.grid, path.d, rows, label, vals).expect("crop of a valid path")
}

pub fn decompose(inputs: &DecompositionInputs, frame: &LocalFrame, cfg: &DecompositionConfig, stop: &StoppingConfig) -> Result<DecompositionResult> {
    inputs.check()?;
    let grid = *inputs.noise.grid();
    let gf = snap_frame(frame, &grid, cfg.freeze_at)?;
    let d = inputs.noise.dim();
    let sigma = &inputs.solver.sigma;
    let boundary = inputs.solver.boundary;
    let clip = inputs.clip();
    let (m0, last) = (gf.m0, gf.last);
    let rows = m0..last + 1;

    let src = clip.map_or(m0, |c| c.min(m0));
    let mut sigma_f = vec![0.0; d * d];
    sigma.eval(inputs.u.value(src, gf.freeze_col), &mut sigma_f);

    let noise = inputs.noise;
    let near = NoiseView::cells(noise, m0..grid.nt, gf.near_cols.clone());
    let far = near.complement();
    let phi_near = PathIntegrand { sigma, path: &inputs.u, clip, offset: Some(sigma_f.clone()) };
    let phi_far = PathIntegrand { sigma, path: &inputs.u, clip, offset: None };
    let n1 = convolve_field(&phi_near, &near, m0, last, boundary, "N1")?;
    let n2a = convolve_field(&phi_far, &far, m0, last, boundary, "N2a")?;
    let n2b = convolve_field(&MatrixIntegrand { matrix: sigma_f.clone() }, &far, m0, last, boundary, "N2b")?;
    let n2_direct = convolve_field(&phi_near, &far, m0, last, boundary, "N2")?;

    let mut n2 = n2a.clone();
    n2.label = "N2".into();
    for (a, b) in n2.values_mut().iter_mut().zip(n2b.values()) {
        *a -= b;
    }
    let n2_split_gap = n2.values().iter().zip(n2_direct.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let zero_pin = &mut |_: usize, _: usize, o: &mut [f64]| o.fill(0.0);
    let v1 = propagate(grid, d, inputs.n0.row(m0), m0, last, boundary, zero_pin, "v1")?;
    let ic = inputs.solver.ic.clone();
    let mut pin = heat_pin(&ic, &grid);
    let u_tilde_det = propagate(grid, d, inputs.u_tilde.row(m0), m0, last, boundary, &mut pin, "u_tilde_det")?;

    let t_minus = grid.time(m0);
    let hat_u_active = t_minus <= inputs.stopping.tau2.tau;
    let hat_v_active = t_minus <= inputs.stopping.tau3.tau;
    let mut u_hat = u_tilde_det.clone();
    u_hat.label = "u_hat".into();
    if !hat_u_active {
        u_hat.values_mut().fill(0.0);
    }
    let mut v1_hat = v1.clone();
    v1_hat.label = "v1_hat".into();
    if !hat_v_active {
        v1_hat.values_mut().fill(0.0);
    }

    let n0 = crop(&inputs.n0, rows.clone(), "N0");
    let mut e = FieldPath::zeros(grid, d, rows.clone(), "E");
    let mut w = FieldPath::zeros(grid, d, rows.clone(), "w");
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut w_gap: f64 = 0.0;
    for i in rows.clone() {
        for j in 0..grid.n_nodes() {
            mat_apply(&sigma_f, n0.value(i, j), &mut a);
            mat_apply(&sigma_f, v1_hat.value(i, j), &mut b);
            let ev = e.value_mut(i, j);
            for k in 0..d {
                ev[k] = n1.value(i, j)[k] + n2.value(i, j)[k] - b[k] + u_hat.value(i, j)[k];
            }
            let ev = ev.to_vec();
            let wv = w.value_mut(i, j);
            for k in 0..d {
                wv[k] = a[k] + ev[k];
            }
            if gf.rect_rows.contains(&i) && gf.rect_cols.contains(&j) {
                mat_apply(&sigma_f, v1.value(i, j), &mut b);
                let ut = inputs.u_tilde.value(i, j);
                let mut r2 = 0.0;
                let mut g2 = 0.0;
                for k in 0..d {
                    let rec = a[k] + n1.value(i, j)[k] + n2.value(i, j)[k] - b[k] + u_tilde_det.value(i, j)[k];
                    r2 += (rec - ut[k]).powi(2);
                    g2 += (w.value(i, j)[k] - ut[k]).powi(2);
                }
                residual = residual.max(r2.sqrt());
                w_gap = w_gap.max(g2.sqrt());
                scale = scale.max(crate::field::norm(ut));
            }
        }
    }

    // semigroup cross-check for v1 against the continuous kernel
    let mut v1_semigroup_gap: f64 = 0.0;
    let mut sm = vec![0.0; d];
    let step = gf.rect_rows.len().div_ceil(32);
    for i in gf.rect_rows.clone().step_by(step) {
        let t = grid.time(i) - t_minus;
        for j in gf.rect_cols.clone() {
            if t <= 0.0 {
                continue;
            }
            smooth_cells(t, grid.space(j), grid.x0, grid.dx, inputs.n0.row(m0), d, &mut sm);
            let gap = v1.value(i, j).iter().zip(&sm).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            v1_semigroup_gap = v1_semigroup_gap.max(gap);
        }
    }

    // frozen-coefficient modulus over the N1 integrand samples
    let mut sigma_modulus_violations = 0;
    if !inputs.stopping.tau1.triggered {
        let rplus_t = grid.time(last) - t_minus;
        let bound = sigma.lipschitz() * stop.k * delta_of(rplus_t, frame.l1).powf(1.0 - stop.delta);
        let mut s = vec![0.0; d * d];
        for m in m0..last {
            let r = clip.map_or(m, |c| c.min(m));
            for j in gf.near_cols.clone() {
                sigma.eval(inputs.u.value(r, j), &mut s);
                let dev = s.iter().zip(&sigma_f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if dev > bound * (1.0 + 1e-12) {
                    sigma_modulus_violations += 1;
                }
            }
        }
    }

    Ok(DecompositionResult {
        frame: *frame,
        grid_frame: gf,
        sigma_frozen: sigma_f,
        n0,
        n1,
        n2,
        n2a,
        n2b,
        v1,
        u_tilde_det,
        u_hat,
        v1_hat,
        e,
        w,
        hat_u_active,
        hat_v_active,
        reconstruction_residual: residual,
        u_tilde_scale: scale,
        w_gap,
        n2_split_gap,
        v1_semigroup_gap,
        sigma_modulus_violations,
    })
}

/// Oscillations over `R_ρ` of every term, and their ratios to `osc(N0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub t0: f64,
    pub x0: f64,
    pub rho: f64,
    pub osc_n0: f64,
    pub osc_n1: f64,
    pub osc_n2: f64,
    pub sup_n2: f64,
    pub osc_u_hat: f64,
    pub osc_v1_hat: f64,
    pub osc_e: f64,
    pub osc_w: f64,
    pub ratio_n1: f64,
    pub ratio_n2_sup: f64,
    pub ratio_u_hat: f64,
    pub ratio_v1_hat: f64,
    pub residual: f64,
    /// `max |ũ|` over `R_ρ`, the scale of `residual`.
    pub u_tilde_scale: f64,
}

impl OscillationReport {
    pub const CSV_HEADER: &'static str =
        "t0,x0,rho,osc_n0,osc_n1,osc_n2,sup_n2,osc_u_hat,osc_v1_hat,osc_e,osc_w,ratio_n1,ratio_n2_sup,ratio_u_hat,ratio_v1_hat,residual,u_tilde_scale";

    pub fn csv_row(&self) -> String {
        [
            self.t0, self.x0, self.rho, self.osc_n0, self.osc_n1, self.osc_n2, self.sup_n2, self.osc_u_hat, self.osc_v1_hat,
            self.osc_e, self.osc_w, self.ratio_n1, self.ratio_n2_sup, self.ratio_u_hat, self.ratio_v1_hat, self.residual,
            self.u_tilde_scale,
        ]
        .iter()
        .map(|v| format!("{v:.10e}"))
        .collect::<Vec<_>>()
        .join(",")
    }
}

pub fn oscillation_report(result: &DecompositionResult) -> OscillationReport {
    let gf = &result.grid_frame;
    let osc = |p: &FieldPath| diameter(&p.collect_box(gf.rect_rows.clone(), gf.rect_cols.clone()), p.d);
    let sup = |p: &FieldPath| {
        p.collect_box(gf.rect_rows.clone(), gf.rect_cols.clone()).chunks(p.d).map(crate::field::norm).fold(0.0, f64::max)
    };
    let osc_n0 = osc(&result.n0);
    let ratio = |x: f64| if osc_n0 > 0.0 { x / osc_n0 } else { f64::NAN };
    let (osc_n1, osc_n2, sup_n2) = (osc(&result.n1), osc(&result.n2), sup(&result.n2));
    let (osc_u_hat, osc_v1_hat) = (osc(&result.u_hat), osc(&result.v1_hat));
    OscillationReport {
        t0: result.frame.t0,
        x0: result.frame.x0,
        rho: result.frame.rho,
        osc_n0,
        osc_n1,
        osc_n2,
        sup_n2,
        osc_u_hat,
        osc_v1_hat,
        osc_e: osc(&result.e),
        osc_w: osc(&result.w),
        ratio_n1: ratio(osc_n1),
        ratio_n2_sup: ratio(sup_n2),
        ratio_u_hat: ratio(osc_u_hat),
        ratio_v1_hat: ratio(osc_v1_hat),
        residual: result.reconstruction_residual,
        u_tilde_scale: result.u_tilde_scale,
    }
}

/// Pathwise bound on `osc(û)` over the snapped `R_ρ`, valid on every path with
/// `|ũ(t₀⁻, y)| < K(1 + |y|)` at all nodes (which `τ_{K,2} > t₀⁻` guarantees).
///
/// `û(p)` is linear in the row of `t₀⁻`: interior nodes enter through the
/// stencil power `Aⁿ` (symmetric under zero Dirichlet data, so its rows are
/// obtained by propagating unit vectors), the pinned ends through a fixed
/// deterministic field. The bound is `2 max_p |û(p) − û(c)|` with `c` the
/// lower-left grid point of `R_ρ`, estimated term by term.
pub fn u_hat_envelope(grid: &SpaceTimeGrid, gf: &GridFrame, ic: &InitialCondition, boundary: Boundary, d: usize, k: f64) -> Result<f64> {
    if boundary != Boundary::Dirichlet {
        return Err(Error::Config("the u_hat envelope is only available for Dirichlet boundaries".into()));
    }
    let (m0, last, nx) = (gf.m0, gf.last, grid.nx);
    let weight: Vec<f64> = (0..=nx).map(|l| if l == 0 || l == nx { 0.0 } else { k * (1.0 + grid.space(l).abs()) }).collect();
    let zero_pin = &mut |_: usize, _: usize, o: &mut [f64]| o.fill(0.0);
    let unit = |j: usize| {
        let mut e = vec![0.0; nx + 1];
        e[j] = 1.0;
        e
    };
    let (ci, cj) = (gf.rect_rows.start, gf.rect_cols.start);
    let pc = propagate(*grid, 1, &unit(cj), m0, ci, boundary, zero_pin, "P_c")?.row(ci).to_vec();

    let mut ends = vec![0.0; (nx + 1) * d];
    ic.heat_evolved(grid.time(m0) - grid.t0, grid.space(0), &mut ends[..d]);
    ic.heat_evolved(grid.time(m0) - grid.t0, grid.space(nx), &mut ends[nx * d..]);
    let mut pin = heat_pin(ic, grid);
    let beta = propagate(*grid, d, &ends, m0, last, boundary, &mut pin, "beta")?;
    let beta_c = beta.value(ci, cj).to_vec();

    let mut worst: f64 = 0.0;
    let mut diff = vec![0.0; d];
    for j in gf.rect_cols.clone() {
        let pj = propagate(*grid, 1, &unit(j), m0, last, boundary, zero_pin, "P_j")?;
        for i in gf.rect_rows.clone() {
            let row = pj.row(i);
            let interior: f64 = (1..nx).map(|l| (row[l] - pc[l]).abs() * weight[l]).sum();
            for (o, (a, b)) in diff.iter_mut().zip(beta.value(i, j).iter().zip(&beta_c)) {
                *o = a - b;
            }
            worst = worst.max(interior + norm(&diff));
        }
    }
    Ok(2.0 * worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn frame_examples() {
        let cfg = DecompositionConfig { alpha: 0.6, beta: 0.65, ..Default::default() };
        let f = build_frame(1.5, 0.5, 0.5, &cfg).unwrap();
        assert_relative_eq!(f.t0_minus, 1.5 - 0.0625 - 0.5f64.powf(1.6), max_relative = 1e-15);
        assert_relative_eq!(f.t0_minus, 1.107_623_0, max_relative = 1e-7);
        assert_relative_eq!(f.l1, 0.25 + 0.5f64.powf(0.7), max_relative = 1e-15);
        assert_relative_eq!(f.l1, 0.865_572_1, max_relative = 1e-6);
        let small = build_frame(1.5, 0.5, 0.01, &cfg).unwrap();
        assert!(small.r_plus.contains_rect(&small.r_rho.to_axis()));
        assert!((small.l1 - 1e-4) / 1e-4 > 100.0);
        assert!(build_frame(0.9, 0.5, 0.5, &cfg).is_err());
        assert!(build_frame(1.5, 0.5, 0.6, &cfg).is_err());
        assert!(build_frame(1.5, 0.5, 0.5, &DecompositionConfig { alpha: 0.7, ..cfg }).is_err());
    }

    #[test]
    fn u_hat_envelope_dominates_propagated_rows() {
        use rand::{Rng, SeedableRng};
        let grid = SpaceTimeGrid::symmetric(1.5, 1.0 / 16.0, 0.25, 1.8).unwrap();
        let cfg = DecompositionConfig { alpha: 0.55, beta: 0.62, ..Default::default() };
        let frame = build_frame(1.5, 0.5, 0.5, &cfg).unwrap();
        let gf = snap_frame(&frame, &grid, None).unwrap();
        let ic = InitialCondition::Kernel { t: 0.1, scale: 0.7 };
        let (d, k) = (2, 3.0);
        let bound = u_hat_envelope(&grid, &gf, &ic, Boundary::Dirichlet, d, k).unwrap();
        let lin = u_hat_envelope(&grid, &gf, &InitialCondition::Zero, Boundary::Dirichlet, d, 2.0 * k).unwrap();
        assert_relative_eq!(lin, 2.0 * u_hat_envelope(&grid, &gf, &InitialCondition::Zero, Boundary::Dirichlet, d, k).unwrap(), max_relative = 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let nx = grid.nx;
        let mut worst: f64 = 0.0;
        for trial in 0..40 {
            let mut init = vec![0.0; (nx + 1) * d];
            ic.heat_evolved(grid.time(gf.m0), grid.space(0), &mut init[..d]);
            ic.heat_evolved(grid.time(gf.m0), grid.space(nx), &mut init[nx * d..]);
            for l in 1..nx {
                let cap = k * (1.0 + grid.space(l).abs()) / (d as f64).sqrt();
                for c in 0..d {
                    // alternating extremes stress the oscillation; later trials are uniform
                    init[l * d + c] = if trial < 4 { cap * 0.999 * if (l + trial) % 2 == 0 { 1.0 } else { -1.0 } } else { rng.random_range(-cap..cap) };
                }
            }
            let mut pin = heat_pin(&ic, &grid);
            let f = propagate(grid, d, &init, gf.m0, gf.last, Boundary::Dirichlet, &mut pin, "u_hat").unwrap();
            worst = worst.max(diameter(&f.collect_box(gf.rect_rows.clone(), gf.rect_cols.clone()), d));
        }
        assert!(worst <= bound, "{worst} > {bound}");
        assert!(worst > 0.0 && bound.is_finite());
    }
}
