//! Storage for ℝ^d-valued fields sampled on a [`SpaceTimeGrid`].

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::AxisRect;
use crate::noise::{read_header, write_header, DumpHeader, SpaceTimeGrid};

/// Values `u[i, j] ∈ ℝ^d` on grid rows `rows` (absolute time indices) and all
/// space nodes `0..=nx`, stored row-major as `(i, j, k)`.
#[derive(Clone, Debug)]
pub struct FieldPath {
    pub grid: SpaceTimeGrid,
    pub d: usize,
    pub label: String,
    rows: Range<usize>,
    values: Vec<f64>,
}

impl FieldPath {
    /// Zero field over the given rows.
    pub fn zeros(grid: SpaceTimeGrid, d: usize, rows: Range<usize>, label: &str) -> Self {
        let len = rows.len() * grid.n_nodes() * d;
        Self { grid, d, label: label.to_string(), rows, values: vec![0.0; len] }
    }

    /// Builds a field by evaluating `f(t, x)` at every node.
    pub fn from_fn(grid: SpaceTimeGrid, d: usize, label: &str, mut f: impl FnMut(f64, f64, &mut [f64])) -> Self {
        let mut out = Self::zeros(grid, d, 0..grid.n_times(), label);
        for i in 0..grid.n_times() {
            for j in 0..grid.n_nodes() {
                let (t, x) = (grid.time(i), grid.space(j));
                f(t, x, out.value_mut(i, j));
            }
        }
        out
    }

    pub fn from_values(grid: SpaceTimeGrid, d: usize, rows: Range<usize>, label: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows.len() * grid.n_nodes() * d || rows.end > grid.n_times() {
            return Err(Error::Inconsistent("field value count does not match grid".into()));
        }
        Ok(Self { grid, d, label: label.to_string(), rows, values })
    }

    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.rows.contains(&i), "row {i} outside {:?}", self.rows);
        ((i - self.rows.start) * self.grid.n_nodes() + j) * self.d
    }

    pub fn value(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.values[o..o + self.d]
    }

    pub fn value_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        &mut self.values[o..o + self.d]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let o = self.offset(i, 0);
        &self.values[o..o + self.grid.n_nodes() * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.grid.n_nodes() * self.d;
        let o = self.offset(i, 0);
        &mut self.values[o..o + w]
    }

    /// Grid rows and columns inside a closed rectangle (rows clipped to the
    /// stored range).
    pub fn index_box(&self, rect: &AxisRect) -> (Range<usize>, Range<usize>) {
        let r = self.grid.rows_in(rect.t_lo, rect.t_hi);
        let rows = r.start.max(self.rows.start)..r.end.min(self.rows.end);
        let cols = self.grid.cols_in(rect.x_lo, rect.x_hi);
        (rows, cols)
    }

    /// All values at grid points inside `rect`, flattened.
    pub fn collect_in(&self, rect: &AxisRect) -> Vec<f64> {
        let (rows, cols) = self.index_box(rect);
        self.collect_box(rows, cols)
    }

    pub fn collect_box(&self, rows: Range<usize>, cols: Range<usize>) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * cols.len() * self.d);
        for i in rows {
            for j in cols.clone() {
                out.extend_from_slice(self.value(i, j));
            }
        }
        out
    }

    /// Largest Euclidean norm over the stored values.
    pub fn sup_norm(&self) -> f64 {
        self.values.chunks_exact(self.d).map(norm).fold(0.0, f64::max)
    }

    /// Writes the binary dump: the common header followed by little-endian
    /// f64 values in `(i, j, k)` order.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = DumpHeader {
            kind: *b"SHEFIELD",
            grid: self.grid,
            d: self.d as u32,
            seed: 0,
            stream: 0,
            row_lo: self.rows.start as u64,
            row_hi: self.rows.end as u64,
        };
        write_header(&mut w, &header)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_dump(path: &Path, label: &str) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let h = read_header(&mut r)?;
        if &h.kind != b"SHEFIELD" {
            return Err(Error::Format("not a field dump".into()));
        }
        let rows = h.row_lo as usize..h.row_hi as usize;
        let n = rows.len() * h.grid.n_nodes() * h.d as usize;
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_values(h.grid, h.d as usize, rows, label, values)
    }

    /// CSV export of the given rows (columns `t, x, u_1..u_d`).
    pub fn write_slices_csv(&self, path: &Path, rows: &[usize]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let comps: Vec<String> = (1..=self.d).map(|k| format!("u_{k}")).collect();
        writeln!(w, "t,x,{}", comps.join(","))?;
        for &i in rows {
            if !self.rows.contains(&i) {
                return Err(Error::Window(format!("row {i} not stored")));
            }
            for j in 0..self.grid.n_nodes() {
                let vals: Vec<String> = self.value(i, j).iter().map(|v| format!("{v:.12e}")).collect();
                writeln!(w, "{},{},{}", self.grid.time(i), self.grid.space(j), vals.join(","))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
