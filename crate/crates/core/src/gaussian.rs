//! Exact sampling of `N⁽⁰⁾` at finitely many points from its closed-form
//! covariance, used as the distributional oracle for the solvers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::FieldPath;
use crate::geometry::ParabolicPoint;
use crate::heat_kernel::{n0_covariance, n0_structure, n0_variance};
use crate::noise::SpaceTimeGrid;

/// Dense factorization budget.
pub const MAX_POINTS: usize = 2000;

/// Square root `A` of a covariance matrix, `AAᵀ = Σ`.
#[derive(Clone, Debug)]
pub struct GaussianFactor {
    a: DMatrix<f64>,
    triangular: bool,
}

impl GaussianFactor {
    /// Cholesky factor, or a clipped eigen-factor when Cholesky fails on a
    /// matrix that is positive semidefinite up to `1e-8·trace`.
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if n == 0 {
            return Ok(Self { a: cov, triangular: true });
        }
        if let Some(ch) = cov.clone().cholesky() {
            return Ok(Self { a: ch.l(), triangular: true });
        }
        let tr = cov.trace().abs().max(f64::MIN_POSITIVE);
        let eig = cov.symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < -1e-8 * tr {
            return Err(Error::Indefinite(min));
        }
        let mut a = eig.eigenvectors;
        for (j, &l) in eig.eigenvalues.iter().enumerate() {
            let s = l.max(0.0).sqrt();
            a.column_mut(j).scale_mut(s);
        }
        Ok(Self { a, triangular: false })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `out = A z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let cols = if self.triangular { i + 1 } else { n };
            let mut s = 0.0;
            for j in 0..cols {
                s += self.a[(i, j)] * z[j];
            }
            out[i] = s;
        }
    }

    /// Least-squares solution of `A g = b`.
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        if self.triangular {
            if let Some(g) = self.a.solve_lower_triangular(b) {
                return g;
            }
        }
        let svd = self.a.clone().svd(true, true);
        svd.solve(b, 1e-12).unwrap_or_else(|_| DVector::zeros(b.len()))
    }
}

/// Exact joint sampler of one scalar component of `N⁽⁰⁾` at given points.
#[derive(Clone, Debug)]
pub struct ExactGaussianSampler {
    pub points: Vec<ParabolicPoint>,
    factor: GaussianFactor,
}

impl ExactGaussianSampler {
    pub fn new(points: &[ParabolicPoint]) -> Result<Self> {
        if points.len() > MAX_POINTS {
            return Err(Error::Budget(format!("{} points exceed the dense budget {MAX_POINTS}", points.len())));
        }
        let n = points.len();
        let cov = DMatrix::from_fn(n, n, |i, j| n0_covariance(points[i], points[j]));
        Ok(Self { points: points.to_vec(), factor: GaussianFactor::new(cov)? })
    }

    /// One draw of the scalar field at all points.
    pub fn sample_scalar(&self, rng: &mut impl Rng, out: &mut [f64]) {
        let z: Vec<f64> = (0..self.points.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.apply(&z, out);
    }

    /// One draw of the ℝ^d-valued field; `out[p·d + k]`, components independent.
    pub fn sample_vector(&self, rng: &mut impl Rng, d: usize, out: &mut [f64]) {
        let n = self.points.len();
        let mut buf = vec![0.0; n];
        for k in 0..d {
            self.sample_scalar(rng, &mut buf);
            for p in 0..n {
                out[p * d + k] = buf[p];
            }
        }
    }

    /// `n_draws` independent ℝ^d-valued draws from the stream `(seed, 0)`.
    pub fn draw(&self, seed: u64, n_draws: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_draws)
            .map(|_| {
                let mut v = vec![0.0; self.points.len() * d];
                self.sample_vector(&mut rng, d, &mut v);
                v
            })
            .collect()
    }
}

/// Convenience form of the oracle: draws at `points` from `seed`.
pub fn exact_gaussian_sampler(points: &[ParabolicPoint], seed: u64, n_draws: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    Ok(ExactGaussianSampler::new(points)?.draw(seed, n_draws, d))
}

/// Exact sampler for tightly clustered points.
///
/// The increments `N(p) − N(c)` relative to a reference point `c` are drawn
/// from a covariance built out of the structure function, which stays well
/// conditioned at small scales; `N(c)` is then drawn from its exact
/// conditional law given the increments.
#[derive(Clone, Debug)]
pub struct LocalGaussianSampler {
    pub points: Vec<ParabolicPoint>,
    pub reference: ParabolicPoint,
    factor: GaussianFactor,
    gain: Vec<f64>,
    resid_sd: f64,
}

impl LocalGaussianSampler {
    pub fn new(points: &[ParabolicPoint], reference: ParabolicPoint) -> Result<Self> {
        if points.len() > MAX_POINTS {
            return Err(Error::Budget(format!("{} points exceed the dense budget {MAX_POINTS}", points.len())));
        }
        let n = points.len();
        let sc: Vec<f64> = points.iter().map(|&p| n0_structure(p, reference)).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                sc[i]
            } else {
                0.5 * (sc[i] + sc[j] - n0_structure(points[i], points[j]))
            }
        });
        let factor = GaussianFactor::new(cov)?;
        let vc = n0_variance(reference.t);
        // Cov(N(p) − N(c), N(c)) = ½[V(p) − V(c) − S(p, c)]
        let b = DVector::from_fn(n, |i, _| 0.5 * (n0_variance(points[i].t) - vc - sc[i]));
        let gain = factor.solve(&b);
        let resid = (vc - gain.norm_squared()).max(0.0);
        Ok(Self {
            points: points.to_vec(),
            reference,
            factor,
            gain: gain.iter().copied().collect(),
            resid_sd: resid.sqrt(),
        })
    }

    /// One scalar draw; returns `N(c)` and writes `N(p)` for every point.
    pub fn sample_scalar(&self, rng: &mut impl Rng, out: &mut [f64]) -> f64 {
        let n = self.points.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let z0: f64 = rng.sample(StandardNormal);
        self.factor.apply(&z, out);
        let base = self.gain.iter().zip(&z).map(|(g, z)| g * z).sum::<f64>() + self.resid_sd * z0;
        for v in out.iter_mut() {
            *v += base;
        }
        base
    }

    /// Increments only (`N(p) − N(c)`), which is all an oscillation needs.
    pub fn sample_increments(&self, rng: &mut impl Rng, out: &mut [f64]) {
        let z: Vec<f64> = (0..self.points.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.apply(&z, out);
    }
}

/// Exact draw of `N⁽⁰⁾` (d independent components) at every node of a small
/// lattice, returned as a field on that lattice.
pub fn sample_lattice(lattice: SpaceTimeGrid, d: usize, rng: &mut impl Rng) -> Result<FieldPath> {
    let sampler = lattice_sampler(&lattice)?;
    Ok(sample_lattice_with(&sampler, lattice, d, rng))
}

pub fn lattice_sampler(lattice: &SpaceTimeGrid) -> Result<LocalGaussianSampler> {
    let mut pts = Vec::with_capacity(lattice.n_times() * lattice.n_nodes());
    for i in 0..lattice.n_times() {
        for j in 0..lattice.n_nodes() {
            pts.push(ParabolicPoint::new(lattice.time(i), lattice.space(j)));
        }
    }
    let c = ParabolicPoint::new(0.5 * (lattice.t0 + lattice.t1), 0.5 * (lattice.x0 + lattice.x1));
    LocalGaussianSampler::new(&pts, c)
}

pub fn sample_lattice_with(sampler: &LocalGaussianSampler, lattice: SpaceTimeGrid, d: usize, rng: &mut impl Rng) -> FieldPath {
    let n = sampler.points.len();
    let mut vals = vec![0.0; n * d];
    let mut buf = vec![0.0; n];
    for k in 0..d {
        sampler.sample_scalar(rng, &mut buf);
        for p in 0..n {
            vals[p * d + k] = buf[p];
        }
    }
    FieldPath::from_values(lattice, d, 0..lattice.n_times(), "N0 (exact lattice)", vals)
        .expect("lattice sizes agree by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn pp(t: f64, x: f64) -> ParabolicPoint {
        ParabolicPoint::new(t, x)
    }

    #[test]
    fn single_point_standard_deviation() {
        let draws = exact_gaussian_sampler(&[pp(1.0, 0.0)], 21, 100_000, 1).unwrap();
        let v: Vec<f64> = draws.iter().map(|d| d[0]).collect();
        let sd = stats::variance(&v).sqrt();
        assert!((sd / 0.631_618_7 - 1.0).abs() < 0.01, "sd = {sd}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(exact_gaussian_sampler(&[], 1, 3, 2).unwrap().iter().all(|v| v.is_empty()));
        let draws = exact_gaussian_sampler(&[pp(1.0, 0.5), pp(1.0, 0.5)], 2, 100, 1).unwrap();
        for d in draws {
            assert!((d[0] - d[1]).abs() < 1e-12);
        }
        let too_many: Vec<_> = (0..MAX_POINTS + 1).map(|i| pp(1.0, i as f64)).collect();
        assert!(matches!(ExactGaussianSampler::new(&too_many), Err(Error::Budget(_))));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GaussianFactor::new(m), Err(Error::Indefinite(_))));
    }

    #[test]
    fn local_sampler_reproduces_covariance() {
        let pts = [pp(1.5, 0.5), pp(1.5 + 1e-4, 0.5), pp(1.5, 0.52), pp(1.4999, 0.49)];
        let c = pp(1.5, 0.505);
        let s = LocalGaussianSampler::new(&pts, c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40_000;
        let mut acc = vec![0.0; 16];
        let mut inc = vec![0.0; 4];
        let mut acc_inc = 0.0;
        let mut out = vec![0.0; 4];
        for _ in 0..n {
            s.sample_scalar(&mut rng, &mut out);
            for i in 0..4 {
                for j in 0..4 {
                    acc[i * 4 + j] += out[i] * out[j];
                }
            }
            s.sample_increments(&mut rng, &mut inc);
            acc_inc += (inc[0] - inc[1]).powi(2);
        }
        for i in 0..4 {
            for j in 0..4 {
                let want = n0_covariance(pts[i], pts[j]);
                let got = acc[i * 4 + j] / n as f64;
                // sd of a product of two N(0, 0.4) variables is below 0.6
                assert!((got - want).abs() < 4.0 * 0.6 / (n as f64).sqrt(), "({i},{j}) {got} vs {want}");
            }
        }
        let want = n0_structure(pts[0], pts[1]);
        let got = acc_inc / n as f64;
        assert!((got / want - 1.0).abs() < 4.0 * 2f64.sqrt() / (n as f64).sqrt());
    }
}
