//! Discrete space-time white noise on a truncated grid.
//!
//! Space nodes are `x_j = x0 + j·dx` for `j = 0..=nx`; the noise cell `j` is
//! the dual cell of width `dx` centred on node `j`, and time row `i` covers
//! `[t_i, t_{i+1})`. Every increment is `N(0, dt·dx)`.
//!
//! Increments come from a counter-based ChaCha8 stream: `(seed, stream_id)`
//! select the key and stream, and the block counter is positioned at
//! `(i·d + k)·2^32` words for time row `i` and component `k`. Rows can thus be
//! produced in any order, by any number of workers, without ever storing the
//! array.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AxisRect;

const SNAP: f64 = 1e-9;

/// Uniform grid on `[t0, t1] × [x0, x1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub x0: f64,
    pub x1: f64,
    pub dt: f64,
    pub dx: f64,
    pub nt: usize,
    pub nx: usize,
}

impl SpaceTimeGrid {
    pub fn new(t0: f64, x0: f64, dt: f64, dx: f64, nt: usize, nx: usize) -> Result<Self> {
        if !(dt > 0.0 && dx > 0.0 && dt.is_finite() && dx.is_finite()) {
            return Err(Error::Config(format!("grid steps must be positive (dt = {dt}, dx = {dx})")));
        }
        if nx < 2 || nt < 1 {
            return Err(Error::Config(format!("grid needs nx >= 2 and nt >= 1 (nx = {nx}, nt = {nt})")));
        }
        Ok(Self { t0, t1: t0 + nt as f64 * dt, x0, x1: x0 + nx as f64 * dx, dt, dx, nt, nx })
    }

    /// `[0, ≥ t_end] × [−x_half, x_half]` with `dt = ratio·dx²`.
    pub fn symmetric(x_half: f64, dx: f64, ratio: f64, t_end: f64) -> Result<Self> {
        let nx = (2.0 * x_half / dx).round() as usize;
        if ((nx as f64) * dx - 2.0 * x_half).abs() > SNAP * dx {
            return Err(Error::Config(format!("2X = {} is not a multiple of dx = {dx}", 2.0 * x_half)));
        }
        let dt = ratio * dx * dx;
        let nt = ((t_end / dt) - SNAP).ceil().max(1.0) as usize;
        Self::new(0.0, -x_half, dt, dx, nt, nx)
    }

    /// Explicit-scheme stability `dt ≤ dx²/2`.
    pub fn is_stable(&self) -> bool {
        self.dt <= 0.5 * self.dx * self.dx * (1.0 + 1e-12)
    }

    pub fn ratio(&self) -> f64 {
        self.dt / (self.dx * self.dx)
    }

    pub fn n_times(&self) -> usize {
        self.nt + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nx + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn space(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    /// Rows with `t_i ∈ [lo, hi]`.
    pub fn rows_in(&self, lo: f64, hi: f64) -> Range<usize> {
        index_range(lo, hi, self.t0, self.dt, self.nt)
    }

    /// Nodes with `x_j ∈ [lo, hi]`.
    pub fn cols_in(&self, lo: f64, hi: f64) -> Range<usize> {
        index_range(lo, hi, self.x0, self.dx, self.nx)
    }

    /// Nearest row to `t`, if inside the grid.
    pub fn nearest_row(&self, t: f64) -> Option<usize> {
        let r = ((t - self.t0) / self.dt).round();
        (r >= 0.0 && r <= self.nt as f64).then_some(r as usize)
    }

    pub fn nearest_col(&self, x: f64) -> Option<usize> {
        let r = ((x - self.x0) / self.dx).round();
        (r >= 0.0 && r <= self.nx as f64).then_some(r as usize)
    }

    /// Row of a time that must be a grid time.
    pub fn exact_row(&self, t: f64) -> Result<usize> {
        let r = self.nearest_row(t).ok_or_else(|| Error::Misaligned(format!("time {t} outside grid")))?;
        if (self.time(r) - t).abs() > SNAP * self.dt {
            return Err(Error::Misaligned(format!("time {t} is not a grid time")));
        }
        Ok(r)
    }

    pub fn exact_col(&self, x: f64) -> Result<usize> {
        let c = self.nearest_col(x).ok_or_else(|| Error::Misaligned(format!("position {x} outside grid")))?;
        if (self.space(c) - x).abs() > SNAP * self.dx {
            return Err(Error::Misaligned(format!("position {x} is not a grid node")));
        }
        Ok(c)
    }
}

fn index_range(lo: f64, hi: f64, origin: f64, h: f64, n: usize) -> Range<usize> {
    let a = ((lo - origin) / h - SNAP).ceil().max(0.0);
    let b = ((hi - origin) / h + SNAP).floor().min(n as f64);
    if b < a {
        return 0..0;
    }
    a as usize..(b as usize + 1)
}

/// Anything that can produce the increments of one time row.
pub trait NoiseSource: Sync {
    fn grid(&self) -> &SpaceTimeGrid;
    fn dim(&self) -> usize;
    /// Fills `out[j·d + k]` with `ΔW[i, j, k]` for every cell `j = 0..=nx`.
    fn fill_row(&self, i: usize, out: &mut [f64]);

    fn row_len(&self) -> usize {
        self.grid().n_nodes() * self.dim()
    }
}

/// Lazily generated, seeded noise realization.
#[derive(Clone, Debug)]
pub struct NoiseRealization {
    grid: SpaceTimeGrid,
    d: usize,
    pub seed: u64,
    pub stream_id: u64,
    scale: f64,
    base: ChaCha8Rng,
}

impl NoiseRealization {
    pub fn generate(grid: SpaceTimeGrid, d: usize, seed: u64, stream_id: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("noise dimension must be at least 1".into()));
        }
        let blocks = (grid.nt as u128) * (d as u128);
        if blocks >= 1u128 << 36 || grid.n_nodes() as u128 >= 1u128 << 30 {
            return Err(Error::CounterOverflow(format!(
                "{} rows x {d} components x {} cells exceed the counter layout",
                grid.nt,
                grid.n_nodes()
            )));
        }
        let mut base = ChaCha8Rng::seed_from_u64(seed);
        base.set_stream(stream_id);
        Ok(Self { grid, d, seed, stream_id, scale: 1.0, base })
    }

    /// The same realization multiplied by `c`.
    pub fn scaled(mut self, c: f64) -> Self {
        self.scale *= c;
        self
    }

    pub fn materialize(&self) -> MaterializedNoise {
        MaterializedNoise::from_source(self, self.seed, self.stream_id)
    }
}

impl NoiseSource for NoiseRealization {
    fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let d = self.d;
        let sd = (self.grid.dt * self.grid.dx).sqrt() * self.scale;
        let mut rng = self.base.clone();
        for k in 0..d {
            rng.set_word_pos(((i * d + k) as u128) << 32);
            for j in 0..self.grid.n_nodes() {
                let z: f64 = rng.sample(StandardNormal);
                out[j * d + k] = sd * z;
            }
        }
    }
}

/// Fully stored increments, e.g. for dumps and perturbation experiments.
#[derive(Clone, Debug)]
pub struct MaterializedNoise {
    grid: SpaceTimeGrid,
    d: usize,
    pub seed: u64,
    pub stream_id: u64,
    data: Vec<f64>,
}

impl MaterializedNoise {
    pub fn from_source(src: &dyn NoiseSource, seed: u64, stream_id: u64) -> Self {
        let w = src.row_len();
        let mut data = vec![0.0; src.grid().nt * w];
        for (i, row) in data.chunks_exact_mut(w).enumerate() {
            src.fill_row(i, row);
        }
        Self { grid: *src.grid(), d: src.dim(), seed, stream_id, data }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.grid.n_nodes() * self.d;
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Binary dump: header then little-endian f64 in `(i, j, k)` order.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = DumpHeader {
            kind: *b"SHENOISE",
            grid: self.grid,
            d: self.d as u32,
            seed: self.seed,
            stream: self.stream_id,
            row_lo: 0,
            row_hi: self.grid.nt as u64,
        };
        write_header(&mut w, &header)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_dump(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let h = read_header(&mut r)?;
        if &h.kind != b"SHENOISE" {
            return Err(Error::Format("not a noise dump".into()));
        }
        let n = h.grid.nt * h.grid.n_nodes() * h.d as usize;
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { grid: h.grid, d: h.d as usize, seed: h.seed, stream_id: h.stream, data })
    }
}

impl NoiseSource for MaterializedNoise {
    fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let w = self.grid.n_nodes() * self.d;
        out.copy_from_slice(&self.data[i * w..(i + 1) * w]);
    }
}

/// Restriction of a realization to a block of cells (or to its complement).
/// Cells outside the exposed region read as zero.
#[derive(Clone)]
pub struct NoiseView<'a> {
    parent: &'a dyn NoiseSource,
    rows: Range<usize>,
    cols: Range<usize>,
    complement: bool,
}

impl<'a> NoiseView<'a> {
    /// Exposes time rows `rows` and cells `cols`.
    pub fn cells(parent: &'a dyn NoiseSource, rows: Range<usize>, cols: Range<usize>) -> Self {
        let g = parent.grid();
        let rows = rows.start.min(g.nt)..rows.end.min(g.nt);
        let cols = cols.start.min(g.n_nodes())..cols.end.min(g.n_nodes());
        Self { parent, rows, cols, complement: false }
    }

    /// Restriction to a cell-aligned rectangle: time bounds on grid times,
    /// space bounds on dual-cell edges `x_j ± dx/2`.
    pub fn rect(parent: &'a dyn NoiseSource, rect: &AxisRect) -> Result<Self> {
        let g = *parent.grid();
        let snap = |v: f64, o: f64, h: f64, what: &str| -> Result<usize> {
            let r = (v - o) / h;
            if (r - r.round()).abs() > SNAP || r.round() < 0.0 {
                return Err(Error::NotCellAligned(format!("{what} = {v}")));
            }
            Ok(r.round() as usize)
        };
        let i0 = snap(rect.t_lo, g.t0, g.dt, "t_lo")?;
        let i1 = snap(rect.t_hi, g.t0, g.dt, "t_hi")?;
        let j0 = snap(rect.x_lo, g.x0 - 0.5 * g.dx, g.dx, "x_lo")?;
        let j1 = snap(rect.x_hi, g.x0 - 0.5 * g.dx, g.dx, "x_hi")?;
        Ok(Self::cells(parent, i0..i1, j0..j1))
    }

    /// Everything not exposed by `self`.
    pub fn complement(&self) -> Self {
        Self { complement: !self.complement, ..self.clone() }
    }

    /// Restriction of a restriction equals the restriction to the intersection.
    pub fn restrict(&self, rows: Range<usize>, cols: Range<usize>) -> Result<Self> {
        if self.complement {
            return Err(Error::NotCellAligned("cannot restrict a complement view".into()));
        }
        let r = rows.start.max(self.rows.start)..rows.end.min(self.rows.end);
        let c = cols.start.max(self.cols.start)..cols.end.min(self.cols.end);
        let r = r.start..r.end.max(r.start);
        let c = c.start..c.end.max(c.start);
        Ok(Self { parent: self.parent, rows: r, cols: c, complement: false })
    }

    pub fn exposed_rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn exposed_cols(&self) -> Range<usize> {
        self.cols.clone()
    }
}

impl NoiseSource for NoiseView<'_> {
    fn grid(&self) -> &SpaceTimeGrid {
        self.parent.grid()
    }

    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let d = self.parent.dim();
        let row_in = self.rows.contains(&i);
        if !row_in && !self.complement {
            out.fill(0.0);
            return;
        }
        self.parent.fill_row(i, out);
        if !row_in {
            return;
        }
        for j in 0..self.parent.grid().n_nodes() {
            if self.cols.contains(&j) == self.complement {
                out[j * d..(j + 1) * d].fill(0.0);
            }
        }
    }
}

/// Header shared by noise and field dumps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DumpHeader {
    pub kind: [u8; 8],
    pub grid: SpaceTimeGrid,
    pub d: u32,
    pub seed: u64,
    pub stream: u64,
    pub row_lo: u64,
    pub row_hi: u64,
}

const DUMP_VERSION: u32 = 1;

pub(crate) fn write_header(w: &mut impl Write, h: &DumpHeader) -> Result<()> {
    w.write_all(&h.kind)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    for v in [h.grid.t0, h.grid.t1, h.grid.x0, h.grid.x1, h.grid.dt, h.grid.dx] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(h.grid.nt as u64).to_le_bytes())?;
    w.write_all(&(h.grid.nx as u64).to_le_bytes())?;
    w.write_all(&h.d.to_le_bytes())?;
    for v in [h.seed, h.stream, h.row_lo, h.row_hi] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_header(r: &mut impl Read) -> Result<DumpHeader> {
    let mut kind = [0u8; 8];
    r.read_exact(&mut kind)?;
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != DUMP_VERSION {
        return Err(Error::Format("unsupported dump version".into()));
    }
    let mut f = [0f64; 6];
    for v in f.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    let mut u = [0u64; 2];
    for v in u.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = u64::from_le_bytes(b8);
    }
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4);
    let mut tail = [0u64; 4];
    for v in tail.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = u64::from_le_bytes(b8);
    }
    let grid = SpaceTimeGrid { t0: f[0], t1: f[1], x0: f[2], x1: f[3], dt: f[4], dx: f[5], nt: u[0] as usize, nx: u[1] as usize };
    Ok(DumpHeader { kind, grid, d, seed: tail[0], stream: tail[1], row_lo: tail[2], row_hi: tail[3] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SpaceTimeGrid {
        SpaceTimeGrid::symmetric(1.0, 0.125, 0.25, 0.25).unwrap()
    }

    #[test]
    fn grid_indexing() {
        let g = small();
        assert_eq!(g.nx, 16);
        assert_eq!(g.dt, 0.25 / 64.0);
        assert_eq!(g.nt, 64);
        assert_eq!(g.cols_in(0.0, 0.25), 8..11);
        assert_eq!(g.rows_in(0.0, 0.0), 0..1);
        assert!(g.is_stable());
        assert_eq!(g.exact_col(0.375).unwrap(), 11);
        assert!(g.exact_col(0.3).is_err());
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let g = small();
        let a = NoiseRealization::generate(g, 3, 11, 4).unwrap().materialize();
        let b = NoiseRealization::generate(g, 3, 11, 4).unwrap().materialize();
        assert_eq!(a.data(), b.data());
        let c = NoiseRealization::generate(g, 3, 11, 5).unwrap().materialize();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn rows_are_order_independent() {
        let g = small();
        let n = NoiseRealization::generate(g, 2, 1, 0).unwrap();
        let w = n.row_len();
        let mut fwd = vec![0.0; g.nt * w];
        for i in 0..g.nt {
            n.fill_row(i, &mut fwd[i * w..(i + 1) * w]);
        }
        let mut rev = vec![0.0; g.nt * w];
        for i in (0..g.nt).rev() {
            n.fill_row(i, &mut rev[i * w..(i + 1) * w]);
        }
        assert_eq!(fwd, rev);
    }

    #[test]
    fn views_partition_the_parent() {
        let g = small();
        let n = NoiseRealization::generate(g, 2, 3, 0).unwrap();
        let v = NoiseView::cells(&n, 10..40, 3..9);
        let c = v.complement();
        let w = n.row_len();
        let (mut a, mut b, mut p) = (vec![0.0; w], vec![0.0; w], vec![0.0; w]);
        for i in 0..g.nt {
            n.fill_row(i, &mut p);
            v.fill_row(i, &mut a);
            c.fill_row(i, &mut b);
            for k in 0..w {
                assert_eq!(a[k] + b[k], p[k]);
                assert!(a[k] == 0.0 || b[k] == 0.0);
            }
        }
        let full = NoiseView::cells(&n, 0..g.nt, 0..g.n_nodes());
        for i in [0, 17, g.nt - 1] {
            n.fill_row(i, &mut p);
            full.fill_row(i, &mut a);
            assert_eq!(a, p);
        }
    }

    #[test]
    fn nested_restriction_equals_intersection() {
        let g = small();
        let n = NoiseRealization::generate(g, 1, 3, 0).unwrap();
        let twice = NoiseView::cells(&n, 5..50, 2..12).restrict(20..60, 0..7).unwrap();
        let once = NoiseView::cells(&n, 20..50, 2..7);
        let w = n.row_len();
        let (mut a, mut b) = (vec![0.0; w], vec![0.0; w]);
        for i in 0..g.nt {
            twice.fill_row(i, &mut a);
            once.fill_row(i, &mut b);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rect_restriction_checks_alignment() {
        let g = small();
        let n = NoiseRealization::generate(g, 1, 3, 0).unwrap();
        let ok = AxisRect::new(g.time(4), g.time(20), -0.0625, 0.1875).unwrap();
        let v = NoiseView::rect(&n, &ok).unwrap();
        assert_eq!(v.exposed_rows(), 4..20);
        assert_eq!(v.exposed_cols(), 8..10);
        let bad = AxisRect::new(g.time(4), g.time(20), 0.0, 0.1875).unwrap();
        assert!(matches!(NoiseView::rect(&n, &bad), Err(Error::NotCellAligned(_))));
    }

    #[test]
    fn dump_round_trip() {
        let g = small();
        let n = NoiseRealization::generate(g, 2, 9, 1).unwrap().materialize();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("noise.bin");
        n.write_dump(&p).unwrap();
        let back = MaterializedNoise::read_dump(&p).unwrap();
        assert_eq!(back.data(), n.data());
        assert_eq!(back.grid(), n.grid());
        assert_eq!((back.seed, back.stream_id), (9, 1));
    }

    #[test]
    fn scaling_by_two_is_exact() {
        let g = small();
        let a = NoiseRealization::generate(g, 1, 5, 0).unwrap().materialize();
        let b = NoiseRealization::generate(g, 1, 5, 0).unwrap().scaled(2.0).materialize();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }
}
