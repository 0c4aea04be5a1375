//! The heat kernel `G(t, x) = (4πt)^{-1/2} exp(−x²/4t)` of `∂ₜ − ∂ₓ²`, its
//! derivative bounds, the standard square integrals and the exact covariance
//! of the additive-noise solution
//!
//! ```text
//! N⁽⁰⁾(t, x) = ∫₀ᵗ ∫ G(t − s, x − y) W(dy, ds).
//! ```
//!
//! Everything reduces to the antiderivative in time of `G`,
//!
//! ```text
//! F(s, h) = ∫₀ˢ G(r, h) dr = √(s/π)·e^{−h²/4s} − (|h|/2)·erfc(|h| / 2√s),
//! ```
//!
//! which gives `Cov(N⁽⁰⁾(t₁,x₁), N⁽⁰⁾(t₂,x₂)) = ½[F(t₁+t₂, h) − F(|t₁−t₂|, h)]`
//! with `h = x₁ − x₂`. The quadrature route is kept as an independent check.

use std::f64::consts::PI;

use statrs::function::erf::erfc;

use crate::constants::{KERNEL_DERIVATIVE_C, STANDARD_INTEGRAL_C};
use crate::error::{Error, Result};
use crate::geometry::ParabolicPoint;
use crate::quadrature;

/// `G(t, x)` without argument checks.
#[inline]
pub fn g(t: f64, x: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * PI * t).sqrt()
}

pub fn kernel(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs t > 0, got {t}")));
    }
    Ok(g(t, x))
}

/// Mass of `G(t, x − ·)` on `[a, b]`.
pub fn kernel_mass(t: f64, x: f64, a: f64, b: f64) -> f64 {
    let s = (4.0 * t).sqrt();
    0.5 * (erfc((x - b) / s) - erfc((x - a) / s))
}

/// Exact derivatives of `G` and the bounds `(c/√t)·G(2t, x)`, `(c/t)·G(2t, x)`.
#[derive(Clone, Copy, Debug)]
pub struct KernelGrad {
    pub dx: f64,
    pub dt: f64,
    pub bound_x: f64,
    pub bound_t: f64,
}

impl KernelGrad {
    pub fn holds(&self) -> bool {
        self.dx.abs() <= self.bound_x && self.dt.abs() <= self.bound_t
    }
}

pub fn kernel_grad_bounds(t: f64, x: f64) -> Result<KernelGrad> {
    let v = kernel(t, x)?;
    let g2 = g(2.0 * t, x);
    Ok(KernelGrad {
        dx: -x / (2.0 * t) * v,
        dt: v * (x * x / (4.0 * t * t) - 0.5 / t),
        bound_x: KERNEL_DERIVATIVE_C / t.sqrt() * g2,
        bound_t: KERNEL_DERIVATIVE_C / t * g2,
    })
}

/// `F(s, h) = ∫₀ˢ G(r, h) dr`, zero for `s ≤ 0`.
pub fn antiderivative(s: f64, h: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let a = h.abs();
    (s / PI).sqrt() * (-h * h / (4.0 * s)).exp() - 0.5 * a * erfc(a / (2.0 * s.sqrt()))
}

/// `F(s, 0) − F(s, h)` without cancellation.
pub fn antiderivative_gap(s: f64, h: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let a = h.abs();
    -(s / PI).sqrt() * (-h * h / (4.0 * s)).exp_m1() + 0.5 * a * erfc(a / (2.0 * s.sqrt()))
}

/// The three integrals of the standard Gaussian estimates for `0 ≤ s < t`:
///
/// * `I_space = ∫₀ᵗ∫ [G(t−r, x−z) − G(t−r, y−z)]² dz dr`
/// * `I_time  = ∫₀ˢ∫ [G(t−r, x−z) − G(s−r, x−z)]² dz dr`
/// * `I_tail  = ∫ₛᵗ∫ G(t−r, x−z)² dz dr`
#[derive(Clone, Copy, Debug)]
pub struct StandardIntegrals {
    pub i_space: f64,
    pub i_time: f64,
    pub i_tail: f64,
    pub s: f64,
    pub t: f64,
    pub h: f64,
}

impl StandardIntegrals {
    /// The three bounds with the calibrated constant.
    pub fn within_bounds(&self) -> bool {
        let c = STANDARD_INTEGRAL_C * (1.0 + 1e-12);
        let root = (self.t - self.s).sqrt();
        self.i_space <= c * self.h.abs() && self.i_time <= c * root && self.i_tail <= c * root
    }
}

pub fn standard_integrals(s: f64, t: f64, x: f64, y: f64) -> Result<StandardIntegrals> {
    if !(s >= 0.0 && s < t) {
        return Err(Error::Domain(format!("standard integrals need 0 <= s < t, got s = {s}, t = {t}")));
    }
    let h = x - y;
    let f0 = |v: f64| antiderivative(v, 0.0);
    let tau = t - s;
    // I_space = ∫₀^{2t} [G(r,0) − G(r,h)] dr
    let i_space = antiderivative_gap(2.0 * t, h);
    let i_time = 0.5 * (f0(2.0 * t) - f0(2.0 * tau)) + 0.5 * f0(2.0 * s) - (f0(t + s) - f0(tau));
    let i_tail = 0.5 * f0(2.0 * tau);
    Ok(StandardIntegrals { i_space, i_time: i_time.max(0.0), i_tail, s, t, h })
}

/// `Var N⁽⁰⁾(t, x) = √(t / 2π)`.
pub fn n0_variance(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (t / (2.0 * PI)).sqrt()
    }
}

/// Covariance of one scalar component of `N⁽⁰⁾` at two points.
pub fn n0_covariance(p1: ParabolicPoint, p2: ParabolicPoint) -> f64 {
    if p1.t.min(p2.t) <= 0.0 {
        return 0.0;
    }
    let h = p1.x - p2.x;
    0.5 * (antiderivative(p1.t + p2.t, h) - antiderivative((p1.t - p2.t).abs(), h))
}

/// The same covariance as `∫₀^{m} G(t₁ + t₂ − 2r, h) dr`, `m = min(t₁, t₂)`,
/// by adaptive quadrature after `r = m − s²`.
pub fn n0_covariance_quadrature(p1: ParabolicPoint, p2: ParabolicPoint) -> Result<f64> {
    let m = p1.t.min(p2.t);
    if m <= 0.0 {
        return Ok(0.0);
    }
    let (sum, h) = (p1.t + p2.t, p1.x - p2.x);
    let lag = sum - 2.0 * m;
    let f = |s: f64| {
        let a = lag + 2.0 * s * s;
        if a <= 0.0 {
            // only reachable when lag = 0 and h = 0: G(2s², 0)·2s → 2/√(8π)
            return if h == 0.0 { 2.0 / (8.0 * PI).sqrt() } else { 0.0 };
        }
        g(a, h) * 2.0 * s
    };
    let (v, _) = quadrature::integrate(f, 0.0, m.sqrt(), 1e-10, 1e-14)?;
    Ok(v)
}

/// `E[(N⁽⁰⁾(p₁) − N⁽⁰⁾(p₂))²]`, evaluated without the cancellation of
/// `Var₁ + Var₂ − 2 Cov`.
pub fn n0_structure(p1: ParabolicPoint, p2: ParabolicPoint) -> f64 {
    let (a, b) = if p1.t <= p2.t { (p1, p2) } else { (p2, p1) };
    if b.t <= 0.0 {
        return 0.0;
    }
    if a.t <= 0.0 {
        return n0_variance(b.t);
    }
    let h = a.x - b.x;
    let tau = b.t - a.t;
    // ½[F(2t₁,0) + F(2t₂,0)] − F(t₁+t₂,0): concavity gap of √(s/π)
    let (ra, rb) = ((2.0 * a.t).sqrt(), (2.0 * b.t).sqrt());
    let diff = 2.0 * tau / (ra + rb);
    let gap = -(diff * diff / 4.0) / (0.5 * (ra + rb) + (a.t + b.t).sqrt()) / PI.sqrt();
    (gap + antiderivative_gap(a.t + b.t, h) + antiderivative(tau, h)).max(0.0)
}

/// `∫ G(t, x − y) f(y) dy` for `f` piecewise constant on the dual cells of a
/// uniform node set `x₀ + l·dx`, `l = 0..n`; `values` holds `n·d` entries.
pub fn smooth_cells(t: f64, x: f64, x0: f64, dx: f64, values: &[f64], d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (l, v) in values.chunks_exact(d).enumerate() {
        let c = x0 + l as f64 * dx;
        let w = kernel_mass(t, x, c - 0.5 * dx, c + 0.5 * dx);
        for k in 0..d {
            out[k] += w * v[k];
        }
    }
}
