//! Scenario configuration, Monte Carlo drivers and the on-disk result bundle.
//!
//! Every replicate draws its noise from its own ChaCha stream, replicates run
//! in parallel and are merged in replicate order, so a bundle is a pure
//! function of the configuration and the base seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covering::{
    box_dimension, build_cover, calibrate_k_tilde, cover_patch, range_cover_check, window_search, CoverReport,
    DecompositionWindow, GaugeConfig, LadderSampler,
};
use crate::decomposition::{
    build_frame, decompose, oscillation_report, snap_frame, u_hat_envelope, DecompositionConfig, DecompositionInputs,
    OscillationReport,
};
use crate::error::{Error, Result};
use crate::field::{norm, FieldPath};
use crate::gaussian::{lattice_sampler, sample_lattice_with, ExactGaussianSampler, LocalGaussianSampler};
use crate::geometry::{diameter, AxisRect, ParabolicPoint};
use crate::noise::{NoiseRealization, SpaceTimeGrid};
use crate::solver::{solve_fd, Boundary, InitialCondition, SigmaChoice, SigmaFunction, SolverConfig};
use crate::stats::{ks_two_sample, line_fit, mean, median, quantile, std_error, variance, variance_std_error, wilson};
use crate::stopping::{growth_max, holder_max, StoppingConfig, StoppingResult};

/// Level of the window calibration of `K̃`.
pub const CALIBRATION_Q: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    Decompose,
    Window,
    Cover,
    Hit,
    Tails,
    Calibrate,
}

impl Task {
    pub const ALL: [Task; 7] = [Task::Calibrate, Task::Simulate, Task::Decompose, Task::Window, Task::Cover, Task::Hit, Task::Tails];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub t_end: f64,
    pub x_half: f64,
    pub dx: f64,
    /// `dt / dx²`.
    pub ratio: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { t_end: 2.0, x_half: 4.0, dx: 1.0 / 64.0, ratio: 0.25 }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<SpaceTimeGrid> {
        let g = SpaceTimeGrid::symmetric(self.x_half, self.dx, self.ratio, self.t_end)?;
        if !g.is_stable() {
            return Err(Error::Unstable { dt: g.dt, cap: g.dx * g.dx / 2.0 });
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailSpec {
    /// Thresholds for `osc/ρ`; empty means the 50%–99% quantiles of the first `ρ`.
    pub lambdas: Vec<f64>,
    /// Thresholds below `λ₀` are dropped from the fit.
    pub lambda0: f64,
    pub samples: usize,
}

impl Default for TailSpec {
    fn default() -> Self {
        Self { lambdas: Vec::new(), lambda0: 0.0, samples: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HitSpec {
    pub dims: Vec<usize>,
    pub eps: Vec<f64>,
    /// Targets `z = s·e₁`, one per entry.
    pub targets: Vec<f64>,
    pub box_radii: Vec<f64>,
}

impl Default for HitSpec {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 6, 8],
            eps: vec![0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0, 1.4],
            targets: vec![1.4, 0.0],
            box_radii: vec![0.8, 0.4, 0.2, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub d: usize,
    pub sigma: SigmaChoice,
    pub ic: InitialCondition,
    pub boundary: Boundary,
    pub grid: GridSpec,
    pub stopping: StoppingConfig,
    /// Run the stopping scans for `simulate` (they dominate its cost).
    pub scan_stopping: bool,
    pub decomposition: DecompositionConfig,
    /// Point whose marginal law `simulate` records.
    pub marginal: [f64; 2],
    /// Centre `(t₀, x₀)` of the decomposition and the tail windows.
    pub probe: [f64; 2],
    pub rhos: Vec<f64>,
    /// Centres of the window search.
    pub windows: Vec<[f64; 2]>,
    pub q_range: [u32; 2],
    pub gauge: GaugeConfig,
    pub replicates: usize,
    pub seed: u64,
    pub tails: TailSpec,
    pub hitting: HitSpec,
    pub tasks: Vec<Task>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let windows = [1.25, 1.5, 1.75].iter().flat_map(|&t| [0.25, 0.5, 0.75].map(|x| [t, x])).collect();
        Self {
            scenario: "linear".into(),
            d: 2,
            sigma: SigmaChoice::Identity,
            ic: InitialCondition::Zero,
            boundary: Boundary::Dirichlet,
            grid: GridSpec::default(),
            stopping: StoppingConfig::default(),
            scan_stopping: true,
            decomposition: DecompositionConfig::default(),
            marginal: [1.0, 0.0],
            probe: [1.5, 0.5],
            rhos: vec![0.5, 0.35, 0.25, 0.18],
            windows,
            q_range: [4, 6],
            gauge: GaugeConfig::default(),
            replicates: 100,
            seed: 1,
            tails: TailSpec::default(),
            hitting: HitSpec::default(),
            tasks: vec![Task::Simulate],
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma_function()?;
        self.ic.validate(self.d)?;
        self.grid.build()?;
        self.stopping.validate()?;
        self.decomposition.validate()?;
        let [q_lo, q_hi] = self.q_range;
        if !(2 <= q_lo && q_lo <= q_hi) {
            return Err(Error::Config(format!("q range must satisfy 2 <= q_lo <= q_hi ({q_lo}, {q_hi})")));
        }
        self.gauge.with_q(q_lo).validate()?;
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.rhos.iter().any(|&r| !(r > 0.0 && r <= 0.5)) {
            return Err(Error::Config("every rho must lie in (0, 1/2]".into()));
        }
        if self.hitting.eps.iter().any(|&e| !(e >= 0.0)) || self.hitting.dims.contains(&0) {
            return Err(Error::Config("hitting radii must be nonnegative and dimensions positive".into()));
        }
        if !(self.tails.lambda0 >= 0.0) {
            return Err(Error::Config("lambda0 must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn sigma_function(&self) -> Result<SigmaFunction> {
        SigmaFunction::new(self.d, self.sigma.clone())
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        Ok(SolverConfig::new(self.sigma_function()?, self.ic.clone()).with_boundary(self.boundary))
    }

    /// `σ ≡ I` and `u₀ ≡ 0`: `ũ = N⁽⁰⁾`, which has an exact sampler.
    pub fn is_linear(&self) -> bool {
        self.sigma == SigmaChoice::Identity && self.ic == InitialCondition::Zero
    }

    /// Gauge at level `q` with `σ₁` taken from the diffusion coefficient.
    pub fn gauge_at(&self, q: u32) -> Result<GaugeConfig> {
        Ok(GaugeConfig { sigma1: self.sigma_function()?.bound(), ..self.gauge.with_q(q) })
    }

    fn qs(&self) -> std::ops::RangeInclusive<u32> {
        self.q_range[0]..=self.q_range[1]
    }

    fn noise(&self, grid: SpaceTimeGrid, d: usize, rep: usize) -> Result<NoiseRealization> {
        NoiseRealization::generate(grid, d, self.seed, rep as u64)
    }
}

/// Stream `rep` of a generator keyed by the base seed and a task tag.
pub fn replicate_rng(seed: u64, tag: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(rep as u64);
    rng
}

/// One row of `aggregate.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl AggregateRow {
    pub fn new(name: impl Into<String>, value: f64, stderr: f64, n: usize) -> Self {
        Self { name: name.into(), value, stderr, n }
    }
}

/// Normal-approximation standard error of a sample median.
fn median_se(v: &[f64]) -> f64 {
    1.2533 * std_error(v)
}

fn fraction_row(name: String, hits: usize, n: usize) -> AggregateRow {
    let p = hits as f64 / n.max(1) as f64;
    AggregateRow::new(name, p, (p * (1.0 - p) / n.max(1) as f64).sqrt(), n)
}

fn write_csv(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for l in lines {
        s.push_str(&l);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_csv(path, "name,value,stderr,n", rows.iter().map(|r| format!("{},{},{},{}", r.name, r.value, r.stderr, r.n)))
}

fn header_index(header: &str, names: &[&str], file: &Path) -> Result<Vec<usize>> {
    let cols: Vec<&str> = header.trim().split(',').collect();
    names
        .iter()
        .map(|n| {
            cols.iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Format(format!("{}: missing column '{n}'", file.display())))
        })
        .collect()
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let idx = header_index(lines.next().unwrap_or(""), &["name", "value", "stderr", "n"], path)?;
    let bad = |l: &str| Error::Format(format!("{}: malformed row '{l}'", path.display()));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() <= *idx.iter().max().unwrap() {
                return Err(bad(l));
            }
            Ok(AggregateRow {
                name: f[idx[0]].to_string(),
                value: f[idx[1]].parse().map_err(|_| bad(l))?,
                stderr: f[idx[2]].parse().map_err(|_| bad(l))?,
                n: f[idx[3]].parse().map_err(|_| bad(l))?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- tails

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub lambdas: Vec<f64>,
    pub probs: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub n: usize,
    pub scale: f64,
    /// Slope of `log P̂` against `λ²·scale`.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// 95% interval of the slope.
    pub slope_ci: (f64, f64),
    /// `P ≈ C₀ exp(−C₁ λ² scale)`.
    pub c0: f64,
    pub c1: f64,
}

/// Least-squares fit of the log exceedance probabilities against `λ²·scale`
/// over the thresholds with at least one exceedance.
pub fn tail_fit(samples: &[f64], scale: f64, lambdas: &[f64]) -> Result<TailFit> {
    if samples.len() < 500 {
        return Err(Error::SampleTooSmall(format!("tail fit needs at least 500 samples ({})", samples.len())));
    }
    if !(scale > 0.0) {
        return Err(Error::Config(format!("tail scale must be positive, got {scale}")));
    }
    let mut lam = lambdas.to_vec();
    lam.sort_by(f64::total_cmp);
    let n = samples.len();
    let mut probs = Vec::with_capacity(lam.len());
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for &l in &lam {
        let k = samples.iter().filter(|&&s| s > l).count();
        probs.push(k as f64 / n as f64);
        let (a, b) = wilson(k, n, 1.96);
        lo.push(a);
        hi.push(b);
    }
    let (x, y): (Vec<f64>, Vec<f64>) =
        lam.iter().zip(&probs).filter(|(_, &p)| p > 0.0).map(|(&l, &p)| (l * l * scale, p.ln())).unzip();
    if x.is_empty() {
        return Err(Error::GridTooHigh);
    }
    if x.len() < 4 {
        return Err(Error::SampleTooSmall(format!("only {} thresholds have exceedances; need 4", x.len())));
    }
    let fit = line_fit(&x, &y)?;
    Ok(TailFit {
        lambdas: lam,
        probs,
        ci_lo: lo,
        ci_hi: hi,
        n,
        scale,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        slope_ci: (fit.slope - 1.96 * fit.slope_se, fit.slope + 1.96 * fit.slope_se),
        c0: fit.intercept.exp(),
        c1: -fit.slope,
    })
}

/// `log₊(γ) = max(1, log₂ γ)`.
pub fn log_plus(gamma: f64) -> f64 {
    gamma.log2().max(1.0)
}

/// Relative lattice of `R_ρ(t₀, x₀)`: 17 times by 9 positions.
pub fn window_lattice(t0: f64, x0: f64, rho: f64) -> Vec<ParabolicPoint> {
    let (ht, hx) = (rho.powi(4), rho * rho);
    (0..17).flat_map(|a| (0..9).map(move |b| ParabolicPoint::new(t0 - ht + ht * a as f64 / 8.0, x0 - hx + hx * b as f64 / 4.0))).collect()
}

/// Exact draws of `osc_{R_ρ}(N⁽⁰⁾)/ρ` on [`window_lattice`].
pub fn exact_window_osc(t0: f64, x0: f64, rho: f64, d: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let pts = window_lattice(t0, x0, rho);
    let s = LocalGaussianSampler::new(&pts, ParabolicPoint::new(t0, x0))?;
    let m = pts.len();
    let (mut vals, mut buf) = (vec![0.0; m * d], vec![0.0; m]);
    Ok((0..n)
        .map(|_| {
            for k in 0..d {
                s.sample_increments(rng, &mut buf);
                for p in 0..m {
                    vals[p * d + k] = buf[p];
                }
            }
            diameter(&vals, d) / rho
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailOutcome {
    pub rho: f64,
    pub fit: TailFit,
}

/// `(T − S₁)^{−1/2}` for `N⁽⁰⁾` (`S₁ = 0`) at the top of `R_ρ(t₀, ·)`.
pub fn tail_scale(t0: f64, rho: f64) -> f64 {
    (t0 + rho.powi(4)).powf(-0.5)
}

pub fn run_tails(cfg: &ExperimentConfig) -> Result<Vec<TailOutcome>> {
    let [t0, x0] = cfg.probe;
    let samples: Vec<Vec<f64>> = cfg
        .rhos
        .par_iter()
        .enumerate()
        .map(|(i, &rho)| exact_window_osc(t0, x0, rho, cfg.d, cfg.tails.samples, &mut replicate_rng(cfg.seed, 7, i)))
        .collect::<Result<_>>()?;
    let lambdas: Vec<f64> = if cfg.tails.lambdas.is_empty() {
        let first = samples.first().ok_or_else(|| Error::Config("tails need at least one rho".into()))?;
        [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99].iter().map(|&p| quantile(first, p)).collect()
    } else {
        cfg.tails.lambdas.clone()
    };
    let lambdas: Vec<f64> = lambdas.into_iter().filter(|&l| l >= cfg.tails.lambda0).collect();
    cfg.rhos
        .iter()
        .zip(&samples)
        .map(|(&rho, s)| Ok(TailOutcome { rho, fit: tail_fit(s, tail_scale(t0, rho), &lambdas)? }))
        .collect()
}

// ---------------------------------------------------------------- oracle

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS between simulated values at `points` (one `k·d` vector per
/// replicate, laid out `p·d + c`) and as many exact draws, for every
/// coordinate and for the oscillation across the points.
pub fn ks_against_oracle(sim: &[Vec<f64>], points: &[ParabolicPoint], d: usize, seed: u64) -> Result<Vec<KsEntry>> {
    let k = points.len();
    if k == 0 || k > 30 {
        return Err(Error::Config(format!("the oracle comparison takes 1 to 30 points, got {k}")));
    }
    if sim.iter().any(|v| v.len() != k * d) {
        return Err(Error::Inconsistent(format!("simulated vectors must hold {} values", k * d)));
    }
    let oracle = ExactGaussianSampler::new(points)?.draw(seed, sim.len(), d);
    let column = |set: &[Vec<f64>], i: usize| set.iter().map(|v| v[i]).collect::<Vec<_>>();
    let mut out = Vec::with_capacity(k * d + 1);
    for p in 0..k {
        for c in 0..d {
            let r = ks_two_sample(&column(sim, p * d + c), &column(&oracle, p * d + c))?;
            out.push(KsEntry { name: format!("p{p}_k{c}"), statistic: r.statistic, p_value: r.p_value });
        }
    }
    let osc = |set: &[Vec<f64>]| set.iter().map(|v| diameter(v, d)).collect::<Vec<_>>();
    let r = ks_two_sample(&osc(sim), &osc(&oracle))?;
    out.push(KsEntry { name: "osc".into(), statistic: r.statistic, p_value: r.p_value });
    Ok(out)
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateRecord {
    pub replicate: usize,
    pub stopping: Option<StoppingResult>,
    /// `u` at the grid point nearest to the marginal point.
    pub marginal: Vec<f64>,
    pub sup_r0: f64,
    pub osc_r0: f64,
}

fn nearest(grid: &SpaceTimeGrid, p: [f64; 2]) -> Result<(usize, usize)> {
    match (grid.nearest_row(p[0]), grid.nearest_col(p[1])) {
        (Some(i), Some(j)) => Ok((i, j)),
        _ => Err(Error::Config(format!("point ({}, {}) is outside the grid", p[0], p[1]))),
    }
}

fn r0_values(path: &FieldPath) -> Vec<f64> {
    path.collect_in(&AxisRect::r0())
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Vec<SimulateRecord>> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let solver = cfg.solver()?;
    let (mi, mj) = nearest(&grid, cfg.marginal)?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let noise = cfg.noise(grid, cfg.d, rep)?;
            let (u, stopping) = if cfg.scan_stopping {
                let inputs = DecompositionInputs::prepare(&solver, &noise, &cfg.stopping)?;
                (inputs.u, Some(inputs.stopping))
            } else {
                (solve_fd(&solver, &noise)?, None)
            };
            let r0 = r0_values(&u);
            let sup_r0 = r0.chunks_exact(cfg.d).map(norm).fold(0.0, f64::max);
            Ok(SimulateRecord { replicate: rep, stopping, marginal: u.value(mi, mj).to_vec(), sup_r0, osc_r0: diameter(&r0, cfg.d) })
        })
        .collect()
}

fn stop_flags(s: &Option<StoppingResult>) -> String {
    match s {
        None => "unscanned".into(),
        Some(s) if s.all_untriggered() => "ok".into(),
        Some(s) => [(s.tau1.triggered, "tau1"), (s.tau2.triggered, "tau2"), (s.tau3.triggered, "tau3")]
            .iter()
            .filter(|(t, _)| *t)
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("|"),
    }
}

pub fn simulate_aggregate(cfg: &ExperimentConfig, recs: &[SimulateRecord]) -> Vec<AggregateRow> {
    let n = recs.len();
    let mut rows = Vec::new();
    for k in 0..cfg.d {
        let v: Vec<f64> = recs.iter().map(|r| r.marginal[k]).collect();
        rows.push(AggregateRow::new(format!("mean_u_marginal_k{k}"), mean(&v), std_error(&v), n));
        rows.push(AggregateRow::new(format!("var_u_marginal_k{k}"), variance(&v), variance_std_error(&v), n));
    }
    let sup: Vec<f64> = recs.iter().map(|r| r.sup_r0).collect();
    let osc: Vec<f64> = recs.iter().map(|r| r.osc_r0).collect();
    rows.push(AggregateRow::new("mean_sup_r0", mean(&sup), std_error(&sup), n));
    rows.push(AggregateRow::new("mean_osc_r0", mean(&osc), std_error(&osc), n));
    let scanned: Vec<_> = recs.iter().filter_map(|r| r.stopping).collect();
    if !scanned.is_empty() {
        let hit = scanned.iter().filter(|s| !s.all_untriggered()).count();
        rows.push(fraction_row("trigger_rate".into(), hit, scanned.len()));
    }
    rows
}

fn write_replicates(path: &Path, recs: &[SimulateRecord]) -> Result<()> {
    let tau = |s: &Option<StoppingResult>, f: fn(&StoppingResult) -> f64| s.as_ref().map_or(String::new(), |s| f(s).to_string());
    write_csv(
        path,
        "replicate,tau1,tau2,tau3,flags,sup_r0,osc_r0",
        recs.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.replicate,
                tau(&r.stopping, |s| s.tau1.tau),
                tau(&r.stopping, |s| s.tau2.tau),
                tau(&r.stopping, |s| s.tau3.tau),
                stop_flags(&r.stopping),
                r.sup_r0,
                r.osc_r0
            )
        }),
    )
}

// ---------------------------------------------------------------- decompose

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOscillation {
    pub replicate: usize,
    pub stopping: StoppingResult,
    pub reports: Vec<OscillationReport>,
    /// Per `ρ`: `τ_{K,2} > t₀⁻` on the grid, so the `û` envelope applies.
    pub envelope_applies: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UHatConstant {
    pub alpha: f64,
    pub rhos: Vec<f64>,
    /// Certified bound on `osc(û)` per `ρ`.
    pub bounds: Vec<f64>,
    /// `C = max_ρ bound/ρ^{2α}`.
    pub c: f64,
}

/// Calibrates `C` in `osc(û) ≤ C ρ^{2α}` from the certified envelope of
/// every frame of the scenario.
pub fn calibrate_u_hat_constant(cfg: &ExperimentConfig) -> Result<UHatConstant> {
    let grid = cfg.grid.build()?;
    let [t0, x0] = cfg.probe;
    let alpha = cfg.decomposition.alpha;
    let mut bounds = Vec::with_capacity(cfg.rhos.len());
    let mut c: f64 = 0.0;
    for &rho in &cfg.rhos {
        let frame = build_frame(t0, x0, rho, &cfg.decomposition)?;
        let gf = snap_frame(&frame, &grid, cfg.decomposition.freeze_at)?;
        let b = u_hat_envelope(&grid, &gf, &cfg.ic, cfg.boundary, cfg.d, cfg.stopping.k)?;
        c = c.max(b / rho.powf(2.0 * alpha));
        bounds.push(b);
    }
    Ok(UHatConstant { alpha, rhos: cfg.rhos.clone(), bounds, c })
}

pub fn run_decompose(cfg: &ExperimentConfig) -> Result<Vec<ReplicateOscillation>> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let solver = cfg.solver()?;
    let [t0, x0] = cfg.probe;
    let frames = cfg.rhos.iter().map(|&r| build_frame(t0, x0, r, &cfg.decomposition)).collect::<Result<Vec<_>>>()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let noise = cfg.noise(grid, cfg.d, rep)?;
            let inputs = DecompositionInputs::prepare(&solver, &noise, &cfg.stopping)?;
            let mut reports = Vec::with_capacity(frames.len());
            let mut envelope_applies = Vec::with_capacity(frames.len());
            for f in &frames {
                let res = decompose(&inputs, f, &cfg.decomposition, &cfg.stopping)?;
                envelope_applies.push(grid.time(res.grid_frame.m0) < inputs.stopping.tau2.tau);
                reports.push(oscillation_report(&res));
            }
            Ok(ReplicateOscillation { replicate: rep, stopping: inputs.stopping, reports, envelope_applies })
        })
        .collect()
}

/// Paths and radii at which `osc(û) > C ρ^{2α}` although the envelope applies.
pub fn u_hat_violations(recs: &[ReplicateOscillation], c: &UHatConstant) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for r in recs {
        for (rep, &ok) in r.reports.iter().zip(&r.envelope_applies) {
            if ok && rep.osc_u_hat > c.c * rep.rho.powf(2.0 * c.alpha) {
                out.push((r.replicate, rep.rho));
            }
        }
    }
    out
}

/// Median of each ratio per `ρ`, in the order of `rhos`.
pub fn ratio_medians(recs: &[ReplicateOscillation], rhos: &[f64], pick: fn(&OscillationReport) -> f64) -> Vec<(f64, f64)> {
    (0..rhos.len())
        .map(|i| {
            let v: Vec<f64> = recs.iter().map(|r| pick(&r.reports[i])).collect();
            (median(&v), median_se(&v))
        })
        .collect()
}

pub const RATIOS: [(&str, fn(&OscillationReport) -> f64); 4] = [
    ("n1", |r| r.ratio_n1),
    ("n2_sup", |r| r.ratio_n2_sup),
    ("u_hat", |r| r.ratio_u_hat),
    ("v1_hat", |r| r.ratio_v1_hat),
];

pub fn decompose_aggregate(cfg: &ExperimentConfig, recs: &[ReplicateOscillation], c: &UHatConstant) -> Vec<AggregateRow> {
    let n = recs.len();
    let mut rows = Vec::new();
    for (name, pick) in RATIOS {
        for (&rho, (m, se)) in cfg.rhos.iter().zip(ratio_medians(recs, &cfg.rhos, pick)) {
            rows.push(AggregateRow::new(format!("median_ratio_{name}_rho{rho}"), m, se, n));
        }
    }
    let res: Vec<f64> = recs.iter().flat_map(|r| r.reports.iter().map(|o| o.residual)).collect();
    rows.push(AggregateRow::new("max_reconstruction_residual", res.iter().fold(0.0, |a: f64, b| a.max(*b)), 0.0, res.len()));
    rows.push(AggregateRow::new("u_hat_constant", c.c, 0.0, 1));
    rows.push(AggregateRow::new("u_hat_violations", u_hat_violations(recs, c).len() as f64, 0.0, n));
    let hit = recs.iter().filter(|r| !r.stopping.all_untriggered()).count();
    rows.push(fraction_row("trigger_rate".into(), hit, n));
    rows
}

fn write_oscillations(path: &Path, recs: &[ReplicateOscillation]) -> Result<()> {
    write_csv(
        path,
        &format!("replicate,{},flags", OscillationReport::CSV_HEADER),
        recs.iter().flat_map(|r| {
            let flags = stop_flags(&Some(r.stopping));
            r.reports.iter().map(move |o| format!("{},{},{}", r.replicate, o.csv_row(), flags)).collect::<Vec<_>>()
        }),
    )
}

// ---------------------------------------------------------------- window

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub replicate: usize,
    pub probe: usize,
    pub q: u32,
    pub found: bool,
    pub level: Option<u32>,
    pub kappa: f64,
}

/// Window search at every level of the range and every probe centre, on
/// exact ladder draws in the linear case and on the decomposition otherwise.
pub fn run_window(cfg: &ExperimentConfig) -> Result<Vec<WindowRecord>> {
    cfg.validate()?;
    let qs: Vec<u32> = cfg.qs().collect();
    window_records(cfg, &qs, &cfg.windows)
}

fn window_records(cfg: &ExperimentConfig, qs: &[u32], probes: &[[f64; 2]]) -> Result<Vec<WindowRecord>> {
    let gauges = qs.iter().map(|&q| cfg.gauge_at(q)).collect::<Result<Vec<_>>>()?;
    if cfg.is_linear() {
        let mut samplers = Vec::new();
        for &q in qs {
            for p in probes {
                samplers.push(LadderSampler::new(p[0], p[1], q, cfg.d)?);
            }
        }
        let per: Vec<Vec<WindowRecord>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(cfg.seed, 3, rep);
                let mut out = Vec::new();
                for (qi, g) in gauges.iter().enumerate() {
                    for (pi, p) in probes.iter().enumerate() {
                        let mut draw = samplers[qi * probes.len() + pi].draw(&mut rng);
                        let w = window_search(&mut draw, p[0], p[1], g)?;
                        out.push(WindowRecord { replicate: rep, probe: pi, q: g.q, found: w.found, level: w.level, kappa: w.kappa });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        return Ok(per.into_iter().flatten().collect());
    }
    let grid = cfg.grid.build()?;
    let solver = cfg.solver()?;
    let per: Vec<Vec<WindowRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let noise = cfg.noise(grid, cfg.d, rep)?;
            let inputs = DecompositionInputs::prepare(&solver, &noise, &cfg.stopping)?;
            let mut driver = DecompositionWindow { inputs: &inputs, cfg: cfg.decomposition.clone(), stop: cfg.stopping.clone() };
            let mut out = Vec::new();
            for g in &gauges {
                for (pi, p) in probes.iter().enumerate() {
                    let w = window_search(&mut driver, p[0], p[1], g)?;
                    out.push(WindowRecord { replicate: rep, probe: pi, q: g.q, found: w.found, level: w.level, kappa: w.kappa });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Found-frequency at level `q` for threshold `k_tilde`, pooled over probes.
/// Uses `found ⇔ K̃ ≥ κ`, so it can be re-evaluated for any `K̃`.
pub fn found_frequency(recs: &[WindowRecord], q: u32, k_tilde: f64) -> (usize, usize) {
    let sel: Vec<_> = recs.iter().filter(|r| r.q == q).collect();
    (sel.iter().filter(|r| k_tilde >= r.kappa).count(), sel.len())
}

pub fn window_aggregate(cfg: &ExperimentConfig, recs: &[WindowRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for q in cfg.qs() {
        let sel: Vec<_> = recs.iter().filter(|r| r.q == q).collect();
        rows.push(fraction_row(format!("found_freq_q{q}"), sel.iter().filter(|r| r.found).count(), sel.len()));
        rows.push(AggregateRow::new(format!("target_q{q}"), 1.0 - 2.0 * (-(q as f64).sqrt()).exp(), 0.0, sel.len()));
    }
    rows
}

/// `K̃` at level [`CALIBRATION_Q`] from exact linear-case ladders at the
/// scenario's probe, with the `σ₁` of the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KTildeCalibration {
    pub k_tilde: f64,
    pub n: usize,
    pub target: f64,
}

pub fn calibrate_window(d: usize, probe: [f64; 2], n: usize, seed: u64) -> Result<KTildeCalibration> {
    let cfg = ExperimentConfig { d, replicates: n, seed, sigma: SigmaChoice::Identity, ic: InitialCondition::Zero, ..Default::default() };
    let recs = window_records(&cfg, &[CALIBRATION_Q], &[probe])?;
    let kappas: Vec<f64> = recs.iter().map(|r| r.kappa).collect();
    Ok(KTildeCalibration {
        k_tilde: calibrate_k_tilde(&kappas, CALIBRATION_Q)?,
        n,
        target: 1.0 - (-(CALIBRATION_Q as f64).sqrt()).exp(),
    })
}

// ---------------------------------------------------------------- stopping K

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingCalibration {
    pub k: f64,
    pub n: usize,
    /// Fraction of the calibration batch that triggers at `k`.
    pub trigger_rate: f64,
}

/// Smallest order statistic of the per-path critical `K` (the largest `K`
/// that still triggers some stop) leaving at most 5% of the batch triggered.
pub fn calibrate_stopping_k(cfg: &ExperimentConfig, n: usize) -> Result<StoppingCalibration> {
    let grid = cfg.grid.build()?;
    let solver = cfg.solver()?;
    let v_cfg = SolverConfig { sigma: SigmaFunction::identity(cfg.d), ..solver.clone() };
    let mut crit: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|rep| {
            let noise = cfg.noise(grid, cfg.d, rep)?;
            let u = solve_fd(&solver, &noise)?;
            let v = solve_fd(&v_cfg, &noise)?;
            // below this K some scan triggers; above it τ₁ is silent and ũ = u
            Ok(holder_max(&u, &cfg.stopping)?.max(growth_max(&u, cfg.stopping.t0)).max(growth_max(&v, cfg.stopping.t0)))
        })
        .collect::<Result<_>>()?;
    crit.sort_by(f64::total_cmp);
    let idx = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    let k = crit[idx] * (1.0 + 1e-9);
    let trig = crit.iter().filter(|&&c| c >= k).count();
    Ok(StoppingCalibration { k, n, trigger_rate: trig as f64 / n as f64 })
}

// ---------------------------------------------------------------- cover

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverRecord {
    pub replicate: usize,
    pub q: u32,
    pub r6_mass: f64,
    pub r6_mass_normalized: f64,
    pub zeta_mass: Option<f64>,
    pub zeta_mass_normalized: Option<f64>,
    pub max_radius: f64,
    pub n_q: usize,
    pub good_area_fraction: f64,
    pub omega_q1: bool,
    pub omega_q2: bool,
    pub degraded: bool,
    pub mass_inequality: Option<bool>,
    pub violations: usize,
}

impl CoverRecord {
    fn new(replicate: usize, c: &CoverReport, violations: usize) -> Self {
        Self {
            replicate,
            q: c.q,
            r6_mass: c.r6_mass,
            r6_mass_normalized: c.r6_mass_normalized,
            zeta_mass: c.zeta_mass,
            zeta_mass_normalized: c.zeta_mass_normalized,
            max_radius: c.max_radius(),
            n_q: c.n_q,
            good_area_fraction: c.good_area_fraction,
            omega_q1: c.omega_q1,
            omega_q2: c.omega_q2,
            degraded: c.degraded,
            mass_inequality: c.mass_inequality(),
            violations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverOutcome {
    pub k_tilde: f64,
    pub records: Vec<CoverRecord>,
    /// Full report of replicate 0 at every level.
    pub examples: Vec<CoverReport>,
}

/// Covers at every level of the range. The linear case uses exact lattices
/// of the order-`(q−1)` cell containing the probe; otherwise the simulated
/// `ũ` is covered on `R₀`.
pub fn run_cover(cfg: &ExperimentConfig) -> Result<CoverOutcome> {
    cfg.validate()?;
    let qs: Vec<u32> = cfg.qs().collect();
    let gauges = qs.iter().map(|&q| cfg.gauge_at(q)).collect::<Result<Vec<_>>>()?;
    let per: Vec<Vec<(CoverRecord, CoverReport)>> = if cfg.is_linear() {
        let probe = ParabolicPoint::new(cfg.probe[0], cfg.probe[1]);
        let lattices = qs
            .iter()
            .map(|&q| {
                let (patch, grid) = cover_patch(q, probe)?;
                Ok((patch, grid, lattice_sampler(&grid)?))
            })
            .collect::<Result<Vec<_>>>()?;
        (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(cfg.seed, 5, rep);
                gauges
                    .iter()
                    .zip(&lattices)
                    .map(|(g, (patch, grid, s))| {
                        let path = sample_lattice_with(s, *grid, cfg.d, &mut rng);
                        let c = build_cover(&path, patch, g, None)?;
                        Ok((CoverRecord::new(rep, &c, range_cover_check(&path, &c).len()), c))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?
    } else {
        let grid = cfg.grid.build()?;
        let solver = cfg.solver()?;
        (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let noise = cfg.noise(grid, cfg.d, rep)?;
                let inputs = DecompositionInputs::prepare(&solver, &noise, &cfg.stopping)?;
                gauges
                    .iter()
                    .map(|g| {
                        let c = build_cover(&inputs.u_tilde, &AxisRect::r0(), g, Some(&inputs.stopping))?;
                        Ok((CoverRecord::new(rep, &c, range_cover_check(&inputs.u_tilde, &c).len()), c))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?
    };
    let mut records = Vec::new();
    let mut examples = Vec::new();
    for (rep, row) in per.into_iter().enumerate() {
        for (r, c) in row {
            if rep == 0 {
                examples.push(c);
            }
            records.push(r);
        }
    }
    Ok(CoverOutcome { k_tilde: cfg.gauge.k_tilde, records, examples })
}

pub fn cover_aggregate(cfg: &ExperimentConfig, out: &CoverOutcome) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for q in cfg.qs() {
        let sel: Vec<&CoverRecord> = out.records.iter().filter(|r| r.q == q).collect();
        let n = sel.len();
        let r6: Vec<f64> = sel.iter().map(|r| r.r6_mass_normalized).collect();
        rows.push(AggregateRow::new(format!("median_r6_mass_normalized_q{q}"), median(&r6), median_se(&r6), n));
        let z: Vec<f64> = sel.iter().filter_map(|r| r.zeta_mass_normalized).collect();
        if !z.is_empty() {
            rows.push(AggregateRow::new(format!("median_zeta_mass_normalized_q{q}"), median(&z), median_se(&z), z.len()));
        }
        let nq: Vec<f64> = sel.iter().map(|r| r.n_q as f64).collect();
        rows.push(AggregateRow::new(format!("mean_n_q_q{q}"), mean(&nq), std_error(&nq), n));
        rows.push(fraction_row(format!("omega_q1_rate_q{q}"), sel.iter().filter(|r| r.omega_q1).count(), n));
        rows.push(fraction_row(format!("omega_q2_rate_q{q}"), sel.iter().filter(|r| r.omega_q2).count(), n));
        let eligible: Vec<_> = sel.iter().filter(|r| r.max_radius <= 0.25).filter_map(|r| r.mass_inequality).collect();
        rows.push(AggregateRow::new(format!("mass_inequality_failures_q{q}"), eligible.iter().filter(|b| !**b).count() as f64, 0.0, eligible.len()));
        rows.push(AggregateRow::new(format!("cover_violations_q{q}"), sel.iter().map(|r| r.violations).sum::<usize>() as f64, 0.0, n));
    }
    rows
}

fn write_cover_json(path: &Path, out: &CoverOutcome) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(out)?)?;
    Ok(())
}

// ---------------------------------------------------------------- hitting

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub d: usize,
    pub z_id: usize,
    pub z: Vec<f64>,
    pub eps: f64,
    pub hits: usize,
    pub trials: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl HittingEstimate {
    pub fn p_hat(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }
}

/// Distance from `z` to the closest range point of one path.
pub fn min_distance(range: &[f64], d: usize, z: &[f64]) -> f64 {
    range
        .chunks_exact(d)
        .map(|p| p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Fraction of paths whose range enters the closed ball `B(z, ε)`, for every
/// target and radius. Nested radii give nondecreasing estimates because each
/// path is summarized by its distance to `z`.
pub fn hitting_scan(ranges: &[Vec<f64>], d: usize, targets: &[Vec<f64>], eps: &[f64]) -> Vec<HittingEstimate> {
    let mut out = Vec::new();
    for (zi, z) in targets.iter().enumerate() {
        let dist: Vec<f64> = ranges.iter().map(|r| min_distance(r, d, z)).collect();
        for &e in eps {
            let hits = dist.iter().filter(|&&m| m <= e).count();
            let (lo, hi) = wilson(hits, ranges.len(), 1.96);
            out.push(HittingEstimate { d, z_id: zi, z: z.clone(), eps: e, hits, trials: ranges.len(), ci_lo: lo, ci_hi: hi });
        }
    }
    out
}

/// Log-log slope of `p̂` against `ε` over the estimates strictly inside
/// `(lo, hi)`; `None` with fewer than two such radii.
pub fn hitting_slope(est: &[HittingEstimate], lo: f64, hi: f64) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        est.iter().filter(|e| e.eps > 0.0 && e.p_hat() > lo && e.p_hat() < hi).map(|e| (e.eps.ln(), e.p_hat().ln())).unzip();
    line_fit(&x, &y).ok().map(|f| f.slope)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitOutcome {
    pub estimates: Vec<HittingEstimate>,
    /// Box dimension of replicate 0's range, per dimension.
    pub box_dims: Vec<(usize, f64, f64)>,
}

/// Linear-case range of one path over `R₀`.
pub fn linear_range(grid: SpaceTimeGrid, d: usize, seed: u64, rep: usize, boundary: Boundary) -> Result<Vec<f64>> {
    let noise = NoiseRealization::generate(grid, d, seed, rep as u64)?;
    let solver = SolverConfig::new(SigmaFunction::identity(d), InitialCondition::Zero).with_boundary(boundary);
    Ok(r0_values(&solve_fd(&solver, &noise)?))
}

pub fn run_hits(cfg: &ExperimentConfig) -> Result<HitOutcome> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let mut estimates = Vec::new();
    let mut box_dims = Vec::new();
    for &d in &cfg.hitting.dims {
        let seed = cfg.seed.wrapping_add(d as u64);
        let ranges: Vec<Vec<f64>> =
            (0..cfg.replicates).into_par_iter().map(|rep| linear_range(grid, d, seed, rep, cfg.boundary)).collect::<Result<_>>()?;
        let targets: Vec<Vec<f64>> = cfg
            .hitting
            .targets
            .iter()
            .map(|&s| {
                let mut z = vec![0.0; d];
                z[0] = s;
                z
            })
            .collect();
        estimates.extend(hitting_scan(&ranges, d, &targets, &cfg.hitting.eps));
        if cfg.hitting.box_radii.len() >= 4 {
            let b = box_dimension(&ranges[0], d, &cfg.hitting.box_radii)?;
            box_dims.push((d, b.dimension, b.stderr));
        }
    }
    Ok(HitOutcome { estimates, box_dims })
}

pub fn hit_aggregate(cfg: &ExperimentConfig, out: &HitOutcome) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &d in &cfg.hitting.dims {
        let est: Vec<HittingEstimate> = out.estimates.iter().filter(|e| e.d == d && e.z_id == 0).cloned().collect();
        if let Some(s) = hitting_slope(&est, 0.01, 0.99) {
            rows.push(AggregateRow::new(format!("hit_slope_d{d}"), s, 0.0, cfg.replicates));
        }
    }
    for &(d, v, se) in &out.box_dims {
        rows.push(AggregateRow::new(format!("box_dim_d{d}"), v, se, 1));
    }
    rows
}

fn write_hits(path: &Path, est: &[HittingEstimate]) -> Result<()> {
    write_csv(
        path,
        "d,z_id,eps,p_hat,ci_lo,ci_hi,hits,trials",
        est.iter().map(|e| format!("{},{},{},{},{},{},{},{}", e.d, e.z_id, e.eps, e.p_hat(), e.ci_lo, e.ci_hi, e.hits, e.trials)),
    )
}

fn write_tails(path: &Path, tails: &[TailOutcome]) -> Result<()> {
    let mut lines = Vec::new();
    for t in tails {
        for i in 0..t.fit.lambdas.len() {
            lines.push(format!("{},{},{},{},{},{}", t.rho, t.fit.lambdas[i], t.fit.probs[i], t.fit.ci_lo[i], t.fit.ci_hi[i], t.fit.n));
        }
    }
    write_csv(path, "rho,lambda,p_hat,ci_lo,ci_hi,n", lines)
}

pub fn tails_aggregate(tails: &[TailOutcome]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for t in tails {
        let se = (t.fit.slope_ci.1 - t.fit.slope_ci.0) / (2.0 * 1.96);
        rows.push(AggregateRow::new(format!("tail_slope_rho{}", t.rho), t.fit.slope, se, t.fit.n));
        rows.push(AggregateRow::new(format!("tail_r2_rho{}", t.rho), t.fit.r2, 0.0, t.fit.n));
        rows.push(AggregateRow::new(format!("tail_c1_rho{}", t.rho), t.fit.c1, se, t.fit.n));
    }
    rows
}

// ---------------------------------------------------------------- bundle

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k_tilde: KTildeCalibration,
    pub stopping: Option<StoppingCalibration>,
    pub u_hat: Option<UHatConstant>,
}

pub fn run_calibrate(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    let k_tilde = calibrate_window(cfg.d, cfg.probe, cfg.replicates.max(200), cfg.seed)?;
    let (stopping, u_hat) = if cfg.is_linear() {
        (None, None)
    } else {
        (Some(calibrate_stopping_k(cfg, cfg.replicates)?), Some(calibrate_u_hat_constant(cfg)?))
    };
    Ok(Calibration { k_tilde, stopping, u_hat })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub aggregate: Vec<AggregateRow>,
    pub files: Vec<PathBuf>,
}

/// Runs the configured tasks in order and, when `out_dir` is set, writes
/// `aggregate.csv` plus the task files (`replicates.csv`, `oscillation.csv`,
/// `window.csv`, `cover.json`, `hits.csv`, `tails.csv`, `calibration.json`).
/// A `calibrate` task feeds its `K̃` into later tasks of the same run.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<Bundle> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let dir = cfg.out_dir.clone();
    if let Some(d) = &dir {
        fs::create_dir_all(d)?;
    }
    let file = |name: &str| dir.as_ref().map(|d| d.join(name));
    let mut b = Bundle::default();
    let note = |b: &mut Bundle, p: Option<PathBuf>| {
        if let Some(p) = p {
            b.files.push(p);
        }
    };
    b.aggregate.push(AggregateRow::new("k0", cfg.ic.bound(cfg.d), 0.0, 1));
    for task in cfg.tasks.clone() {
        match task {
            Task::Calibrate => {
                let c = run_calibrate(&cfg)?;
                cfg.gauge.k_tilde = c.k_tilde.k_tilde;
                b.aggregate.push(AggregateRow::new("k_tilde", c.k_tilde.k_tilde, 0.0, c.k_tilde.n));
                if let Some(s) = &c.stopping {
                    b.aggregate.push(AggregateRow::new("stopping_k", s.k, 0.0, s.n));
                }
                if let Some(u) = &c.u_hat {
                    b.aggregate.push(AggregateRow::new("u_hat_constant", u.c, 0.0, 1));
                }
                if let Some(p) = file("calibration.json") {
                    fs::write(&p, serde_json::to_string_pretty(&c)?)?;
                    note(&mut b, Some(p));
                }
            }
            Task::Simulate => {
                let recs = run_simulate(&cfg)?;
                b.aggregate.extend(simulate_aggregate(&cfg, &recs));
                if let Some(p) = file("replicates.csv") {
                    write_replicates(&p, &recs)?;
                    note(&mut b, Some(p));
                }
            }
            Task::Decompose => {
                let c = calibrate_u_hat_constant(&cfg)?;
                let recs = run_decompose(&cfg)?;
                b.aggregate.extend(decompose_aggregate(&cfg, &recs, &c));
                if let Some(p) = file("oscillation.csv") {
                    write_oscillations(&p, &recs)?;
                    note(&mut b, Some(p));
                }
            }
            Task::Window => {
                let recs = run_window(&cfg)?;
                b.aggregate.extend(window_aggregate(&cfg, &recs));
                if let Some(p) = file("window.csv") {
                    write_csv(
                        &p,
                        "replicate,probe,q,found,level,kappa",
                        recs.iter().map(|r| {
                            format!("{},{},{},{},{},{}", r.replicate, r.probe, r.q, r.found as u8, r.level.map_or(String::new(), |l| l.to_string()), r.kappa)
                        }),
                    )?;
                    note(&mut b, Some(p));
                }
            }
            Task::Cover => {
                let out = run_cover(&cfg)?;
                b.aggregate.extend(cover_aggregate(&cfg, &out));
                if let Some(p) = file("cover.json") {
                    write_cover_json(&p, &out)?;
                    note(&mut b, Some(p));
                }
            }
            Task::Hit => {
                let out = run_hits(&cfg)?;
                b.aggregate.extend(hit_aggregate(&cfg, &out));
                if let Some(p) = file("hits.csv") {
                    write_hits(&p, &out.estimates)?;
                    note(&mut b, Some(p));
                }
            }
            Task::Tails => {
                let out = run_tails(&cfg)?;
                b.aggregate.extend(tails_aggregate(&out));
                if let Some(p) = file("tails.csv") {
                    write_tails(&p, &out)?;
                    note(&mut b, Some(p));
                }
            }
        }
    }
    if let Some(p) = file("aggregate.csv") {
        write_aggregate(&p, &b.aggregate)?;
        note(&mut b, Some(p));
    }
    Ok(b)
}

/// Human-readable one-line summary of an aggregate table.
pub fn summarize(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(s, "{:<40} {:>14.6e} ± {:.2e} (n = {})", r.name, r.value, r.stderr, r.n);
    }
    s
}
