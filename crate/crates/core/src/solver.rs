//! Explicit finite-difference solvers for the SHE, the modified equation,
//! stochastic convolutions, and a Duhamel-sum cross-check.
//!
//! One step of every scheme is
//!
//! ```text
//! u[i+1, j] = u[i, j] + r·(u[i, j+1] − 2u[i, j] + u[i, j−1]) + φ[i, j]·ΔW[i, j] / dx,   r = dt/dx²
//! ```
//!
//! with `φ` evaluated at the left end of the time cell. Only the forcing and
//! the boundary data differ between solvers, and they all share [`diffuse`],
//! so linear combinations of runs reproduce each other up to round-off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{norm, FieldPath};
use crate::geometry::ParabolicPoint;
use crate::heat_kernel::{g, kernel_mass};
use crate::noise::{NoiseSource, SpaceTimeGrid};

/// Largest `nt²·nx²` accepted by [`solve_duhamel`].
pub const DUHAMEL_BUDGET: f64 = 1e10;

/// Built-in diffusion coefficients `σ: ℝ^d → ℝ^{d×d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaChoice {
    Zero,
    Identity,
    /// Fixed matrix, row-major.
    Constant { matrix: Vec<f64> },
    /// `σ₁·M/|M|` with `M = I + ε·diag(sin u_k)` and `0 ≤ ε < 1`.
    BoundedNonlinear { sigma1: f64, eps: f64 },
}

/// `σ` together with its declared Lipschitz constant and bound (Frobenius norm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaFunction {
    pub d: usize,
    pub choice: SigmaChoice,
}

impl SigmaFunction {
    pub fn new(d: usize, choice: SigmaChoice) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        match &choice {
            SigmaChoice::Constant { matrix } if matrix.len() != d * d => {
                return Err(Error::Config(format!("constant sigma needs {} entries, got {}", d * d, matrix.len())));
            }
            SigmaChoice::BoundedNonlinear { sigma1, eps } if !(*sigma1 > 0.0 && (0.0..1.0).contains(eps)) => {
                return Err(Error::Config(format!("bounded sigma needs sigma1 > 0 and eps in [0, 1) ({sigma1}, {eps})")));
            }
            _ => {}
        }
        Ok(Self { d, choice })
    }

    pub fn identity(d: usize) -> Self {
        Self { d, choice: SigmaChoice::Identity }
    }

    pub fn zero(d: usize) -> Self {
        Self { d, choice: SigmaChoice::Zero }
    }

    pub fn bounded_nonlinear(d: usize, sigma1: f64, eps: f64) -> Result<Self> {
        Self::new(d, SigmaChoice::BoundedNonlinear { sigma1, eps })
    }

    /// `scale` times a block rotation by `angle` (a trailing odd coordinate
    /// is left unrotated).
    pub fn scaled_rotation(d: usize, scale: f64, angle: f64) -> Self {
        let mut m = vec![0.0; d * d];
        let (s, c) = angle.sin_cos();
        let mut k = 0;
        while k + 1 < d {
            m[k * d + k] = scale * c;
            m[k * d + k + 1] = -scale * s;
            m[(k + 1) * d + k] = scale * s;
            m[(k + 1) * d + k + 1] = scale * c;
            k += 2;
        }
        if k < d {
            m[k * d + k] = scale;
        }
        Self { d, choice: SigmaChoice::Constant { matrix: m } }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self.choice, SigmaChoice::BoundedNonlinear { .. })
    }

    /// Writes `σ(u)` row-major into `out` (`d²` entries).
    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        let d = self.d;
        match &self.choice {
            SigmaChoice::Zero => out.fill(0.0),
            SigmaChoice::Identity => {
                out.fill(0.0);
                for k in 0..d {
                    out[k * d + k] = 1.0;
                }
            }
            SigmaChoice::Constant { matrix } => out.copy_from_slice(matrix),
            SigmaChoice::BoundedNonlinear { sigma1, eps } => {
                out.fill(0.0);
                let mut n2 = 0.0;
                for k in 0..d {
                    let v = 1.0 + eps * u[k].sin();
                    out[k * d + k] = v;
                    n2 += v * v;
                }
                let s = sigma1 / n2.sqrt();
                for k in 0..d {
                    out[k * d + k] *= s;
                }
            }
        }
    }

    /// Declared Lipschitz constant `L`.
    pub fn lipschitz(&self) -> f64 {
        match &self.choice {
            SigmaChoice::BoundedNonlinear { sigma1, eps } => 2.0 * sigma1 * eps / ((self.d as f64).sqrt() * (1.0 - eps)),
            _ => 0.0,
        }
    }

    /// Declared uniform bound `σ₁`.
    pub fn bound(&self) -> f64 {
        match &self.choice {
            SigmaChoice::Zero => 0.0,
            SigmaChoice::Identity => (self.d as f64).sqrt(),
            SigmaChoice::Constant { matrix } => norm(matrix),
            SigmaChoice::BoundedNonlinear { sigma1, .. } => *sigma1,
        }
    }

    /// Probes the declared `L` and `σ₁` at `n` random points and pairs.
    pub fn spot_check(&self, n: usize, seed: u64) -> Result<()> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = self.d;
        let (mut a, mut b) = (vec![0.0; d * d], vec![0.0; d * d]);
        let (mut u, mut v) = (vec![0.0; d], vec![0.0; d]);
        let (l, s1) = (self.lipschitz(), self.bound());
        for _ in 0..n {
            let scale = 10f64.powf(rng.random_range(-3.0..1.0));
            for k in 0..d {
                u[k] = rng.random_range(-10.0..10.0);
                v[k] = u[k] + scale * rng.random_range(-1.0..1.0);
            }
            self.eval(&u, &mut a);
            self.eval(&v, &mut b);
            if norm(&a) > s1 * (1.0 + 1e-12) {
                return Err(Error::Config(format!("|sigma(u)| = {} exceeds the declared bound {s1}", norm(&a))));
            }
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let du: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x - y).collect();
            if norm(&diff) > l * norm(&du) * (1.0 + 1e-9) + 1e-15 {
                return Err(Error::Config(format!("sigma is not {l}-Lipschitz")));
            }
        }
        Ok(())
    }
}

/// Bounded initial data with a closed-form heat evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Zero,
    Constant { value: Vec<f64> },
    /// Every component equals `scale·G(t, x)`.
    Kernel { t: f64, scale: f64 },
}

impl InitialCondition {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            InitialCondition::Constant { value } if value.len() != d => {
                Err(Error::Config(format!("initial value needs {d} components, got {}", value.len())))
            }
            InitialCondition::Kernel { t, .. } if !(*t > 0.0) => Err(Error::Config(format!("kernel initial data needs t > 0, got {t}"))),
            _ => Ok(()),
        }
    }

    /// `|u₀|` bound `K₀`.
    pub fn bound(&self, d: usize) -> f64 {
        match self {
            InitialCondition::Zero => 0.0,
            InitialCondition::Constant { value } => norm(value),
            InitialCondition::Kernel { t, scale } => scale.abs() * g(*t, 0.0) * (d as f64).sqrt(),
        }
    }

    /// `∫ G(t, x − y) u₀(y) dy` on the whole line; `t = 0` gives `u₀(x)`.
    pub fn heat_evolved(&self, t: f64, x: f64, out: &mut [f64]) {
        match self {
            InitialCondition::Zero => out.fill(0.0),
            InitialCondition::Constant { value } => out.copy_from_slice(value),
            InitialCondition::Kernel { t: t0, scale } => out.fill(scale * g(t0 + t, x)),
        }
    }
}

/// Rule at the truncated space boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// End nodes pinned to prescribed data (the heat evolution of `u₀` for
    /// solutions, zero for convolutions); no noise acts on them.
    #[default]
    Dirichlet,
    /// Node `nx` is identified with node 0.
    Periodic,
}

impl Boundary {
    /// Nodes that evolve by the stencil and receive noise.
    fn active(self, nx: usize) -> std::ops::Range<usize> {
        match self {
            Boundary::Dirichlet => 1..nx,
            Boundary::Periodic => 0..nx,
        }
    }
}

/// Stencil part of one step on the active nodes; other nodes of `next` are
/// left untouched.
fn diffuse(cur: &[f64], next: &mut [f64], d: usize, nx: usize, r: f64, boundary: Boundary) {
    for j in boundary.active(nx) {
        let jl = if j == 0 { nx - 1 } else { j - 1 };
        let jr = if j + 1 == nx && boundary == Boundary::Periodic { 0 } else { j + 1 };
        for k in 0..d {
            let c = cur[j * d + k];
            next[j * d + k] = c + r * (cur[jr * d + k] - 2.0 * c + cur[jl * d + k]);
        }
    }
}

/// Boundary completion after the forcing has been added.
fn close_row(next: &mut [f64], d: usize, nx: usize, boundary: Boundary, pin: &mut dyn FnMut(usize, &mut [f64])) {
    match boundary {
        Boundary::Dirichlet => {
            pin(0, &mut next[..d]);
            pin(nx, &mut next[nx * d..(nx + 1) * d]);
        }
        Boundary::Periodic => {
            let (head, tail) = next.split_at_mut(nx * d);
            tail[..d].copy_from_slice(&head[..d]);
        }
    }
}

fn check_row(row: &[f64], i: usize) -> Result<()> {
    if row.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { row: i })
    }
}

#[inline]
fn mat_vec_add(m: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let d = v.len();
    for k in 0..d {
        let mut s = 0.0;
        for l in 0..d {
            s += m[k * d + l] * v[l];
        }
        out[k] += scale * s;
    }
}

/// Solver settings shared by the FD routines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub sigma: SigmaFunction,
    pub ic: InitialCondition,
    #[serde(default)]
    pub boundary: Boundary,
}

impl SolverConfig {
    pub fn new(sigma: SigmaFunction, ic: InitialCondition) -> Self {
        Self { sigma, ic, boundary: Boundary::Dirichlet }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    fn check(&self, noise: &dyn NoiseSource) -> Result<SpaceTimeGrid> {
        let grid = *noise.grid();
        if !grid.is_stable() {
            return Err(Error::Unstable { dt: grid.dt, cap: 0.5 * grid.dx * grid.dx });
        }
        if noise.dim() != self.sigma.d {
            return Err(Error::Config(format!("noise has {} components, sigma expects {}", noise.dim(), self.sigma.d)));
        }
        self.ic.validate(self.sigma.d)?;
        Ok(grid)
    }
}

/// Time-zero row of a solution.
fn initial_row(ic: &InitialCondition, grid: &SpaceTimeGrid, d: usize, boundary: Boundary, out: &mut [f64]) {
    for j in 0..grid.n_nodes() {
        ic.heat_evolved(0.0, grid.space(j), &mut out[j * d..(j + 1) * d]);
    }
    if boundary == Boundary::Periodic {
        let (head, tail) = out.split_at_mut(grid.nx * d);
        tail[..d].copy_from_slice(&head[..d]);
    }
}

fn pin_heat<'a>(ic: &'a InitialCondition, grid: &'a SpaceTimeGrid, t: f64) -> impl FnMut(usize, &mut [f64]) + 'a {
    move |j, out| ic.heat_evolved(t - grid.t0, grid.space(j), out)
}

/// `u` on the noise grid.
pub fn solve_fd(cfg: &SolverConfig, noise: &dyn NoiseSource) -> Result<FieldPath> {
    run_fd(cfg, noise, None, "u")
}

/// `ũ`: the same scheme with `σ` evaluated on the path clipped at `τ₁`,
/// i.e. at row `min(m, i_τ)` where `i_τ` is the first grid row with
/// `t ≥ τ₁`. When `τ₁` lies beyond the grid the output is bit-identical to
/// [`solve_fd`].
pub fn solve_modified(cfg: &SolverConfig, noise: &dyn NoiseSource, tau1: f64) -> Result<FieldPath> {
    let grid = noise.grid();
    let clip = clip_row(grid, tau1);
    run_fd(cfg, noise, clip, "u_tilde")
}

/// Row at which the coefficient freezes, `None` when beyond the grid.
pub fn clip_row(grid: &SpaceTimeGrid, tau: f64) -> Option<usize> {
    let r = ((tau - grid.t0) / grid.dt - 1e-9).ceil().max(0.0) as usize;
    (r < grid.nt).then_some(r)
}

fn run_fd(cfg: &SolverConfig, noise: &dyn NoiseSource, clip: Option<usize>, label: &str) -> Result<FieldPath> {
    let grid = cfg.check(noise)?;
    let d = cfg.sigma.d;
    let (nx, w) = (grid.nx, grid.n_nodes() * d);
    let r = grid.ratio();
    let inv_dx = 1.0 / grid.dx;
    let mut path = FieldPath::zeros(grid, d, 0..grid.n_times(), label);
    initial_row(&cfg.ic, &grid, d, cfg.boundary, path.row_mut(0));
    let mut dw = vec![0.0; w];
    let mut sig = vec![0.0; d * d];
    let constant = cfg.sigma.is_constant();
    if constant {
        cfg.sigma.eval(&vec![0.0; d], &mut sig);
    }
    let identity = matches!(cfg.sigma.choice, SigmaChoice::Identity);
    let zero = matches!(cfg.sigma.choice, SigmaChoice::Zero);
    for i in 0..grid.nt {
        let src = clip.map_or(i, |c| c.min(i));
        let (done, rest) = path.values_mut().split_at_mut((i + 1) * w);
        let cur = &done[i * w..];
        let next = &mut rest[..w];
        diffuse(cur, next, d, nx, r, cfg.boundary);
        if !zero {
            noise.fill_row(i, &mut dw);
            let base = &done[src * w..(src + 1) * w];
            for j in cfg.boundary.active(nx) {
                let out = &mut next[j * d..(j + 1) * d];
                let inc = &dw[j * d..(j + 1) * d];
                if identity {
                    for k in 0..d {
                        out[k] += inc[k] * inv_dx;
                    }
                } else {
                    if !constant {
                        cfg.sigma.eval(&base[j * d..(j + 1) * d], &mut sig);
                    }
                    mat_vec_add(&sig, inc, inv_dx, out);
                }
            }
        }
        close_row(next, d, nx, cfg.boundary, &mut pin_heat(&cfg.ic, &grid, grid.time(i + 1)));
        check_row(next, i + 1)?;
    }
    Ok(path)
}

/// Adapted matrix-valued integrand `φ` of a stochastic convolution.
pub trait Integrand: Sync {
    /// Writes `φ(t_m, x_j)·dw` into `out` (overwriting).
    fn apply(&self, m: usize, j: usize, dw: &[f64], out: &mut [f64]);
    /// Declared `sup|φ|`.
    fn bound(&self) -> f64;
}

/// `φ ≡ c·I`.
pub struct ScalarIntegrand(pub f64);

impl Integrand for ScalarIntegrand {
    fn apply(&self, _m: usize, _j: usize, dw: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(dw) {
            *o = self.0 * w;
        }
    }

    fn bound(&self) -> f64 {
        self.0.abs()
    }
}

/// `φ ≡ M` for a fixed `d×d` matrix.
pub struct MatrixIntegrand {
    pub matrix: Vec<f64>,
}

impl Integrand for MatrixIntegrand {
    fn apply(&self, _m: usize, _j: usize, dw: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        mat_vec_add(&self.matrix, dw, 1.0, out);
    }

    fn bound(&self) -> f64 {
        norm(&self.matrix)
    }
}

/// `φ(s, y) = σ(path(s ∧ τ, y)) − offset`.
pub struct PathIntegrand<'a> {
    pub sigma: &'a SigmaFunction,
    pub path: &'a FieldPath,
    pub clip: Option<usize>,
    pub offset: Option<Vec<f64>>,
}

impl Integrand for PathIntegrand<'_> {
    fn apply(&self, m: usize, j: usize, dw: &[f64], out: &mut [f64]) {
        let d = self.sigma.d;
        let src = self.clip.map_or(m, |c| c.min(m));
        let mut s = vec![0.0; d * d];
        self.sigma.eval(self.path.value(src, j), &mut s);
        if let Some(off) = &self.offset {
            for (a, b) in s.iter_mut().zip(off) {
                *a -= b;
            }
        }
        out.fill(0.0);
        mat_vec_add(&s, dw, 1.0, out);
    }

    fn bound(&self) -> f64 {
        let off = self.offset.as_deref().map_or(0.0, norm);
        self.sigma.bound() + off
    }
}

/// `∫_{t_{s0}}^{t} ∫ G(t − r, x − z) φ(r, z) W(dz, dr)` on rows `s0..=last`
/// (zero at row `s0`, zero or periodic boundary).
pub fn convolve_field(
    integrand: &dyn Integrand,
    noise: &dyn NoiseSource,
    s0: usize,
    last: usize,
    boundary: Boundary,
    label: &str,
) -> Result<FieldPath> {
    let grid = *noise.grid();
    if s0 > last || last > grid.nt {
        return Err(Error::Window(format!("rows {s0}..={last} not inside 0..={}", grid.nt)));
    }
    if !grid.is_stable() {
        return Err(Error::Unstable { dt: grid.dt, cap: 0.5 * grid.dx * grid.dx });
    }
    let d = noise.dim();
    let (nx, w) = (grid.nx, grid.n_nodes() * d);
    let (r, inv_dx) = (grid.ratio(), 1.0 / grid.dx);
    let mut out = FieldPath::zeros(grid, d, s0..last + 1, label);
    let mut dw = vec![0.0; w];
    let mut inc = vec![0.0; d];
    for i in s0..last {
        let (done, rest) = out.values_mut().split_at_mut((i + 1 - s0) * w);
        let cur = &done[(i - s0) * w..];
        let next = &mut rest[..w];
        diffuse(cur, next, d, nx, r, boundary);
        noise.fill_row(i, &mut dw);
        for j in boundary.active(nx) {
            integrand.apply(i, j, &dw[j * d..(j + 1) * d], &mut inc);
            for k in 0..d {
                next[j * d + k] += inc[k] * inv_dx;
            }
        }
        close_row(next, d, nx, boundary, &mut |_, o: &mut [f64]| o.fill(0.0));
        check_row(next, i + 1)?;
    }
    Ok(out)
}

/// Noise-free propagation of `init` (row `s0`) to rows `s0..=last`, with
/// Dirichlet data `pin(row, node, out)`.
pub fn propagate(
    grid: SpaceTimeGrid,
    d: usize,
    init: &[f64],
    s0: usize,
    last: usize,
    boundary: Boundary,
    pin: &mut dyn FnMut(usize, usize, &mut [f64]),
    label: &str,
) -> Result<FieldPath> {
    if s0 > last || last > grid.nt {
        return Err(Error::Window(format!("rows {s0}..={last} not inside 0..={}", grid.nt)));
    }
    let (nx, w) = (grid.nx, grid.n_nodes() * d);
    let r = grid.ratio();
    let mut out = FieldPath::zeros(grid, d, s0..last + 1, label);
    out.row_mut(s0).copy_from_slice(init);
    for i in s0..last {
        let (done, rest) = out.values_mut().split_at_mut((i + 1 - s0) * w);
        diffuse(&done[(i - s0) * w..], &mut rest[..w], d, nx, r, boundary);
        close_row(&mut rest[..w], d, nx, boundary, &mut |j, o: &mut [f64]| pin(i + 1, j, o));
    }
    Ok(out)
}

/// Dirichlet data of a solution: the heat evolution of `u₀`.
pub fn heat_pin<'a>(ic: &'a InitialCondition, grid: &'a SpaceTimeGrid) -> impl FnMut(usize, usize, &mut [f64]) + 'a {
    move |i, j, out| ic.heat_evolved(grid.time(i) - grid.t0, grid.space(j), out)
}

/// Window of a stochastic convolution `N⁽⁴⁾(·, ·, φ, S₀, S₁)` up to time `T`.
pub struct ConvolutionSpec<'a> {
    pub integrand: &'a dyn Integrand,
    pub s0: f64,
    pub s1: f64,
    pub t_end: f64,
    pub boundary: Boundary,
}

/// Values of `N⁽⁴⁾` at grid points.
pub fn convolve(spec: &ConvolutionSpec, noise: &dyn NoiseSource, points: &[ParabolicPoint]) -> Result<Vec<Vec<f64>>> {
    if !(0.0 <= spec.s0 && spec.s0 <= spec.s1 && spec.s1 <= spec.t_end) {
        return Err(Error::Window(format!("need 0 <= S0 <= S1 <= T ({}, {}, {})", spec.s0, spec.s1, spec.t_end)));
    }
    let grid = noise.grid();
    let mut idx = Vec::with_capacity(points.len());
    for p in points {
        if p.t < spec.s1 - 1e-12 || p.t > spec.t_end + 1e-12 {
            return Err(Error::Window(format!("t = {} outside [S1, T] = [{}, {}]", p.t, spec.s1, spec.t_end)));
        }
        idx.push((grid.exact_row(p.t)?, grid.exact_col(p.x)?));
    }
    let s0 = grid.exact_row(spec.s0)?;
    let last = idx.iter().map(|p| p.0).max().unwrap_or(s0).max(s0);
    let field = convolve_field(spec.integrand, noise, s0, last, spec.boundary, "N4")?;
    Ok(idx.iter().map(|&(i, j)| field.value(i, j).to_vec()).collect())
}

/// Discrete Duhamel sum on the whole line: exact heat evolution of `u₀` plus
/// `Σ_{m<i} Σ_l w(t_i − t_{m+1}, x_j, cell l)·σ(u[m, l])·ΔW[m, l]` with cell
/// weights `(1/dx)∫_cell G`. Cost `O(nt²·nx²)`; meant for coarse grids.
pub fn solve_duhamel(cfg: &SolverConfig, noise: &dyn NoiseSource) -> Result<FieldPath> {
    let grid = cfg.check(noise)?;
    let (nt, nn) = (grid.nt, grid.n_nodes());
    if (nt as f64).powi(2) * (nn as f64).powi(2) > DUHAMEL_BUDGET {
        return Err(Error::Budget(format!("{nt} rows x {nn} nodes exceed the Duhamel budget")));
    }
    let d = cfg.sigma.d;
    let w = nn * d;
    let inv_dx = 1.0 / grid.dx;
    // weights depend on the lag k and the node offset only
    let weights: Vec<Vec<f64>> = (0..nt)
        .map(|k| {
            let t = k as f64 * grid.dt;
            (0..nn)
                .map(|off| {
                    if k == 0 {
                        return if off == 0 { inv_dx } else { 0.0 };
                    }
                    let x = off as f64 * grid.dx;
                    kernel_mass(t, x, -0.5 * grid.dx, 0.5 * grid.dx) * inv_dx
                })
                .collect()
        })
        .collect();
    let mut path = FieldPath::zeros(grid, d, 0..grid.n_times(), "u (Duhamel)");
    // forcing[m] = σ(u[m, ·])·ΔW[m, ·]
    let mut forcing = vec![0.0; nt * w];
    let mut dw = vec![0.0; w];
    let mut sig = vec![0.0; d * d];
    for i in 0..=nt {
        let t = grid.time(i) - grid.t0;
        let row = path.row_mut(i);
        for j in 0..nn {
            cfg.ic.heat_evolved(t, grid.space(j), &mut row[j * d..(j + 1) * d]);
        }
        for m in 0..i {
            let wk = &weights[i - 1 - m];
            let f = &forcing[m * w..(m + 1) * w];
            for j in 0..nn {
                let out = &mut row[j * d..(j + 1) * d];
                for l in 0..nn {
                    let c = wk[j.abs_diff(l)];
                    for k in 0..d {
                        out[k] += c * f[l * d + k];
                    }
                }
            }
        }
        check_row(row, i)?;
        if i < nt {
            noise.fill_row(i, &mut dw);
            let f = &mut forcing[i * w..(i + 1) * w];
            let row = path.row(i).to_vec();
            for j in 0..nn {
                cfg.sigma.eval(&row[j * d..(j + 1) * d], &mut sig);
                mat_vec_add(&sig, &dw[j * d..(j + 1) * d], 1.0, &mut f[j * d..(j + 1) * d]);
            }
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseRealization;

    fn grid(dx: f64, ratio: f64, x: f64, t: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::symmetric(x, dx, ratio, t).unwrap()
    }

    #[test]
    fn constant_data_is_preserved() {
        let g = grid(1.0 / 16.0, 0.5, 2.0, 0.5);
        let cfg = SolverConfig::new(SigmaFunction::zero(2), InitialCondition::Constant { value: vec![0.3, -1.0] });
        let noise = NoiseRealization::generate(g, 2, 1, 0).unwrap();
        let u = solve_fd(&cfg, &noise).unwrap();
        assert!(u.values().chunks(2).all(|v| v == [0.3, -1.0]));
        let p = solve_fd(&cfg.clone().with_boundary(Boundary::Periodic), &noise).unwrap();
        assert!(p.values().chunks(2).all(|v| v == [0.3, -1.0]));
    }

    #[test]
    fn unstable_grid_is_rejected() {
        let g = grid(1.0 / 8.0, 0.6, 1.0, 0.1);
        let noise = NoiseRealization::generate(g, 1, 1, 0).unwrap();
        let cfg = SolverConfig::new(SigmaFunction::identity(1), InitialCondition::Zero);
        assert!(matches!(solve_fd(&cfg, &noise), Err(Error::Unstable { .. })));
    }

    #[test]
    fn modified_solution_clips_coefficient() {
        let g = grid(1.0 / 8.0, 0.25, 2.0, 0.5);
        let noise = NoiseRealization::generate(g, 2, 3, 1).unwrap();
        let sigma = SigmaFunction::bounded_nonlinear(2, 1.0, 0.5).unwrap();
        let cfg = SolverConfig::new(sigma, InitialCondition::Constant { value: vec![0.5, 1.0] });
        let u = solve_fd(&cfg, &noise).unwrap();
        let same = solve_modified(&cfg, &noise, 10.0).unwrap();
        assert_eq!(u.values(), same.values());
        let tau = g.time(20);
        let m = solve_modified(&cfg, &noise, tau).unwrap();
        for i in 0..=20 {
            assert_eq!(u.row(i), m.row(i));
        }
        assert_ne!(u.row(25), m.row(25));
    }

    #[test]
    fn sigma_declarations_hold() {
        for s in [
            SigmaFunction::identity(3),
            SigmaFunction::scaled_rotation(3, 0.7, 0.4),
            SigmaFunction::bounded_nonlinear(4, 2.0, 0.6).unwrap(),
        ] {
            s.spot_check(10_000, 5).unwrap();
        }
        assert!(SigmaFunction::bounded_nonlinear(2, 1.0, 1.0).is_err());
    }

    #[test]
    fn convolution_window_errors() {
        let g = grid(1.0 / 8.0, 0.25, 1.0, 0.5);
        let noise = NoiseRealization::generate(g, 1, 3, 1).unwrap();
        let phi = ScalarIntegrand(0.0);
        let spec = ConvolutionSpec { integrand: &phi, s0: 0.25, s1: 0.1, t_end: 0.5, boundary: Boundary::Dirichlet };
        assert!(matches!(convolve(&spec, &noise, &[]), Err(Error::Window(_))));
        let spec = ConvolutionSpec { s1: 0.25, s0: 0.0, ..spec };
        let v = convolve(&spec, &noise, &[ParabolicPoint::new(g.time(g.nt), 0.0)]).unwrap();
        assert_eq!(v, vec![vec![0.0]]);
        assert!(convolve(&spec, &noise, &[ParabolicPoint::new(0.1, 0.0)]).is_err());
    }

    #[test]
    fn duhamel_without_noise_is_kernel_smoothing() {
        let g = grid(1.0 / 8.0, 0.25, 2.0, 0.25);
        let noise = NoiseRealization::generate(g, 1, 3, 1).unwrap();
        let ic = InitialCondition::Kernel { t: 0.1, scale: 1.0 };
        let cfg = SolverConfig::new(SigmaFunction::zero(1), ic);
        let u = solve_duhamel(&cfg, &noise).unwrap();
        let i = g.nt;
        let j = g.nearest_col(0.5).unwrap();
        assert!((u.value(i, j)[0] - crate::heat_kernel::g(0.1 + g.time(i), 0.5)).abs() < 1e-14);
    }
}
