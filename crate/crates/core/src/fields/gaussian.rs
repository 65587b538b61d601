//! Stationary Gaussian fields by circulant embedding, with a dense
//! eigen-factorization for small grids.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::grid::{check_resolution, spacing, FieldGrid, FieldKind, Provenance};
use crate::error::{domain, Error, Result};
use crate::sampling::{measure_moments, RngStream, SpectralMeasure};
use crate::Rectangle;

/// Grids with fewer nodes than this fall back to the dense factorization
/// when circulant embedding fails.
pub const DENSE_LIMIT: usize = 4096;
/// Negative embedding eigenvalues smaller than this fraction of the largest are clamped.
const EIG_TOL: f64 = 1e-10;
const MAX_EMBED: usize = 1 << 22;
const MAX_DOUBLINGS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// σ² exp(−|t|²/2ℓ²)
    SquaredExponential { length_scale: f64 },
    /// σ² E cos⟨t, ω⟩ with ω ~ μ/μ_0.
    FromSpectralMeasure { measure: SpectralMeasure },
}

/// Zero-mean stationary Gaussian field: variance, second spectral moments λ_ij
/// and the covariance family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFieldSpec {
    pub variance: f64,
    pub spectral_moments: Vec<Vec<f64>>,
    pub covariance: CovarianceKind,
}

impl GaussianFieldSpec {
    pub fn squared_exponential(variance: f64, length_scale: f64, dim: usize) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(domain!("variance must be positive, got {variance}"));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(domain!("length scale must be positive, got {length_scale}"));
        }
        if dim == 0 {
            return Err(domain!("dimension must be at least 1"));
        }
        let l2 = variance / (length_scale * length_scale);
        let lam = (0..dim).map(|i| (0..dim).map(|j| if i == j { l2 } else { 0.0 }).collect()).collect();
        Ok(GaussianFieldSpec {
            variance,
            spectral_moments: lam,
            covariance: CovarianceKind::SquaredExponential { length_scale },
        })
    }

    /// Squared-exponential spec with the given isotropic λ_2 = σ²/ℓ².
    pub fn squared_exponential_with_lambda2(variance: f64, lambda2: f64, dim: usize) -> Result<Self> {
        if !(lambda2 > 0.0) {
            return Err(domain!("lambda2 must be positive, got {lambda2}"));
        }
        Self::squared_exponential(variance, (variance / lambda2).sqrt(), dim)
    }

    pub fn from_spectral_measure(variance: f64, measure: SpectralMeasure) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(domain!("variance must be positive, got {variance}"));
        }
        let m = measure_moments(&measure)?;
        let lam = m.second.iter().map(|row| row.iter().map(|v| variance * v).collect()).collect();
        let spec = GaussianFieldSpec {
            variance,
            spectral_moments: lam,
            covariance: CovarianceKind::FromSpectralMeasure { measure },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.spectral_moments.len()
    }

    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Checks symmetry and positive definiteness of λ.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || self.spectral_moments.iter().any(|r| r.len() != n) {
            return Err(Error::Degenerate("spectral moment matrix must be square and non-empty".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| self.spectral_moments[i][j]);
        if (&m - m.transpose()).abs().max() > 1e-12 * m.abs().max() {
            return Err(Error::Degenerate("spectral moment matrix is not symmetric".into()));
        }
        if m.cholesky().is_none() {
            return Err(Error::Degenerate("spectral moment matrix is not positive definite".into()));
        }
        Ok(())
    }

    /// |det Λ_J|^{1/2} for the sub-matrix on `axes`; 1 for the empty set.
    pub fn lambda_det_sqrt(&self, axes: &[usize]) -> f64 {
        lambda_det_sqrt(&self.spectral_moments, axes)
    }

    pub fn covariance(&self, lag: &[f64]) -> Result<f64> {
        match &self.covariance {
            CovarianceKind::SquaredExponential { length_scale } => {
                let r2: f64 = lag.iter().map(|x| x * x).sum();
                Ok(self.variance * (-r2 / (2.0 * length_scale * length_scale)).exp())
            }
            CovarianceKind::FromSpectralMeasure { measure } => {
                Ok(self.variance * measure.characteristic(lag)?)
            }
        }
    }
}

pub(crate) fn lambda_det_sqrt(lambda: &[Vec<f64>], axes: &[usize]) -> f64 {
    if axes.is_empty() {
        return 1.0;
    }
    let k = axes.len();
    let sub = DMatrix::from_fn(k, k, |i, j| lambda[axes[i]][axes[j]]);
    sub.determinant().abs().sqrt()
}

#[derive(Clone)]
struct Circulant {
    ext: Vec<usize>,
    /// sqrt(max(eig, 0) / M)
    scale: Vec<f64>,
    ffts: Vec<Arc<dyn Fft<f64>>>,
    clamped: f64,
}

#[derive(Clone)]
enum Method {
    Circulant(Circulant),
    Dense(DMatrix<f64>),
}

/// Prepared sampler for one (spec, rectangle, resolution) triple.
#[derive(Clone)]
pub struct GaussianSimulator {
    spec: GaussianFieldSpec,
    rectangle: Rectangle,
    resolution: Vec<usize>,
    method: Method,
}

impl std::fmt::Debug for GaussianSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianSimulator")
            .field("resolution", &self.resolution)
            .field("method", &self.method_name())
            .finish()
    }
}

fn nd_fft(buf: &mut [Complex<f64>], ext: &[usize], ffts: &[Arc<dyn Fft<f64>>]) {
    let nd = ext.len();
    ffts[nd - 1].process(buf);
    let mut scratch = Vec::new();
    for axis in (0..nd - 1).rev() {
        let len = ext[axis];
        let stride: usize = ext[axis + 1..].iter().product();
        let outer: usize = ext[..axis].iter().product();
        scratch.resize(len * stride, Complex::new(0.0, 0.0));
        for o in 0..outer {
            let base = o * len * stride;
            // gather the block so each line is contiguous
            for i in 0..len {
                for s in 0..stride {
                    scratch[s * len + i] = buf[base + i * stride + s];
                }
            }
            ffts[axis].process(&mut scratch[..len * stride]);
            for i in 0..len {
                for s in 0..stride {
                    buf[base + i * stride + s] = scratch[s * len + i];
                }
            }
        }
    }
}

fn unravel(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for a in (0..dims.len()).rev() {
        out[a] = idx % dims[a];
        idx /= dims[a];
    }
}

impl GaussianSimulator {
    pub fn new(spec: &GaussianFieldSpec, rectangle: &Rectangle, resolution: &[usize]) -> Result<Self> {
        Self::build(spec, rectangle, resolution, false)
    }

    /// Always uses the dense factorization (small grids only).
    pub fn new_dense(spec: &GaussianFieldSpec, rectangle: &Rectangle, resolution: &[usize]) -> Result<Self> {
        Self::build(spec, rectangle, resolution, true)
    }

    fn build(spec: &GaussianFieldSpec, rectangle: &Rectangle, resolution: &[usize], dense: bool) -> Result<Self> {
        spec.validate()?;
        check_resolution(rectangle, resolution)?;
        if spec.dim() != rectangle.dim() {
            return Err(domain!(
                "spec is {}-dimensional, rectangle is {}-dimensional",
                spec.dim(),
                rectangle.dim()
            ));
        }
        let h = spacing(rectangle, resolution);
        if let CovarianceKind::SquaredExponential { length_scale } = spec.covariance {
            if let Some(hi) = h.iter().find(|&&hi| hi > length_scale / 4.0 * (1.0 + 1e-12)) {
                return Err(Error::Precondition(format!(
                    "grid spacing {hi} exceeds length_scale/4 = {}",
                    length_scale / 4.0
                )));
            }
        }
        let nodes: usize = resolution.iter().product();
        if dense && nodes >= DENSE_LIMIT {
            return Err(Error::Precondition(format!("dense factorization needs fewer than {DENSE_LIMIT} nodes, got {nodes}")));
        }
        let method = if dense {
            Method::Dense(Self::dense_factor(spec, &h, resolution)?)
        } else {
            match Self::embed(spec, &h, resolution) {
                Ok(c) => Method::Circulant(c),
                Err(Error::Simulation(_)) if nodes < DENSE_LIMIT => Method::Dense(Self::dense_factor(spec, &h, resolution)?),
                Err(e) => return Err(e),
            }
        };
        Ok(GaussianSimulator {
            spec: spec.clone(),
            rectangle: rectangle.clone(),
            resolution: resolution.to_vec(),
            method,
        })
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Circulant(_) => "circulant",
            Method::Dense(_) => "dense",
        }
    }

    /// Largest clamped negative eigenvalue relative to the largest eigenvalue.
    pub fn clamped_fraction(&self) -> f64 {
        match &self.method {
            Method::Circulant(c) => c.clamped,
            Method::Dense(_) => 0.0,
        }
    }

    pub fn spec(&self) -> &GaussianFieldSpec {
        &self.spec
    }

    pub fn rectangle(&self) -> &Rectangle {
        &self.rectangle
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    fn lag_table(spec: &GaussianFieldSpec, h: &[f64], lag_dims: &[usize], wrap: Option<&[usize]>) -> Result<Vec<f64>> {
        let nd = lag_dims.len();
        let total: usize = lag_dims.iter().product();
        let mut idx = vec![0usize; nd];
        let mut lag = vec![0.0; nd];
        let mut out = Vec::with_capacity(total);
        for k in 0..total {
            unravel(k, lag_dims, &mut idx);
            for a in 0..nd {
                let d = match wrap {
                    Some(m) => idx[a].min(m[a] - idx[a]),
                    None => idx[a],
                };
                lag[a] = d as f64 * h[a];
            }
            out.push(spec.covariance(&lag)?);
        }
        Ok(out)
    }

    fn embed(spec: &GaussianFieldSpec, h: &[f64], resolution: &[usize]) -> Result<Circulant> {
        let mut ext: Vec<usize> = resolution.iter().map(|&n| (2 * (n - 1)).next_power_of_two()).collect();
        let mut planner = FftPlanner::new();
        let mut doublings = 0;
        loop {
            let m: usize = ext.iter().product();
            let cov = Self::lag_table(spec, h, &ext, Some(&ext))?;
            let ffts: Vec<Arc<dyn Fft<f64>>> = ext.iter().map(|&e| planner.plan_fft_forward(e)).collect();
            let mut buf: Vec<Complex<f64>> = cov.iter().map(|&c| Complex::new(c, 0.0)).collect();
            nd_fft(&mut buf, &ext, &ffts);
            let max = buf.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
            let min = buf.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
            if min >= -EIG_TOL * max {
                let clamped = if min < 0.0 { -min / max } else { 0.0 };
                let scale = buf.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
                return Ok(Circulant { ext, scale, ffts, clamped });
            }
            if m * (1 << ext.len()) > MAX_EMBED || doublings == MAX_DOUBLINGS {
                return Err(Error::Simulation(format!(
                    "covariance is not embeddable: smallest circulant eigenvalue {min:e} vs largest {max:e} \
                     (ratio {:e}) at embedding size {ext:?}",
                    min / max
                )));
            }
            for e in ext.iter_mut() {
                *e *= 2;
            }
            doublings += 1;
        }
    }

    fn dense_factor(spec: &GaussianFieldSpec, h: &[f64], resolution: &[usize]) -> Result<DMatrix<f64>> {
        let nd = resolution.len();
        let lag_dims: Vec<usize> = resolution.to_vec();
        let table = Self::lag_table(spec, h, &lag_dims, None)?;
        let n: usize = resolution.iter().product();
        let mut ia = vec![0usize; nd];
        let mut ib = vec![0usize; nd];
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            unravel(a, resolution, &mut ia);
            for b in 0..=a {
                unravel(b, resolution, &mut ib);
                let mut k = 0;
                for d in 0..nd {
                    k = k * lag_dims[d] + ia[d].abs_diff(ib[d]);
                }
                cov[(a, b)] = table[k];
                cov[(b, a)] = table[k];
            }
        }
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -1e-8 * max {
            return Err(Error::Simulation(format!(
                "covariance matrix is not positive semi-definite: eigenvalue {min:e} vs {max:e}"
            )));
        }
        let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let mut factor = eig.eigenvectors;
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            col *= root[j];
        }
        Ok(factor)
    }

    /// Two independent realizations, row-major over the grid.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        match &self.method {
            Method::Dense(l) => {
                let n = l.nrows();
                let z1 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z2 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                ((l * z1).data.into(), (l * z2).data.into())
            }
            Method::Circulant(c) => {
                let mut buf: Vec<Complex<f64>> = c
                    .scale
                    .iter()
                    .map(|&s| {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        Complex::new(s * a, s * b)
                    })
                    .collect();
                nd_fft(&mut buf, &c.ext, &c.ffts);
                let nodes: usize = self.resolution.iter().product();
                let mut f1 = Vec::with_capacity(nodes);
                let mut f2 = Vec::with_capacity(nodes);
                let nd = self.resolution.len();
                let mut idx = vec![0usize; nd];
                for k in 0..nodes {
                    unravel(k, &self.resolution, &mut idx);
                    let mut off = 0;
                    for a in 0..nd {
                        off = off * c.ext[a] + idx[a];
                    }
                    f1.push(buf[off].re);
                    f2.push(buf[off].im);
                }
                (f1, f2)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_pair(rng).0
    }

    pub fn provenance(&self, stream: RngStream) -> Provenance {
        let mut p = Provenance::new(FieldKind::Gaussian, stream.master_seed, stream.stream_index);
        p.params = serde_json::to_value(&self.spec).unwrap_or(serde_json::Value::Null);
        p
    }
}

/// One Gaussian realization on the grid of `t`.
pub fn simulate_gaussian(
    spec: &GaussianFieldSpec,
    t: &Rectangle,
    resolution: &[usize],
    stream: RngStream,
) -> Result<FieldGrid> {
    let sim = GaussianSimulator::new(spec, t, resolution)?;
    let mut rng = stream.rng();
    let values = sim.sample(&mut rng);
    FieldGrid::new(t.clone(), resolution.to_vec(), values, sim.provenance(stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn se_moments() {
        let s = GaussianFieldSpec::squared_exponential(4.0, 0.5, 2).unwrap();
        assert_eq!(s.spectral_moments, vec![vec![16.0, 0.0], vec![0.0, 16.0]]);
        assert!((s.lambda_det_sqrt(&[0, 1]) - 16.0).abs() < 1e-12);
        assert_eq!(s.lambda_det_sqrt(&[]), 1.0);
        assert!(GaussianFieldSpec::squared_exponential(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn coarse_grid_rejected() {
        let s = GaussianFieldSpec::squared_exponential(1.0, 0.1, 1).unwrap();
        let t = Rectangle::new(vec![1.0]).unwrap();
        assert!(matches!(GaussianSimulator::new(&s, &t, &[5]), Err(Error::Precondition(_))));
    }

    fn covariance_check(res: Vec<usize>, sides: Vec<f64>, reps: usize, dense: bool) {
        let s = GaussianFieldSpec::squared_exponential(2.0, 0.3, res.len()).unwrap();
        let t = Rectangle::new(sides).unwrap();
        let sim = if dense { GaussianSimulator::new_dense(&s, &t, &res) } else { GaussianSimulator::new(&s, &t, &res) }.unwrap();
        assert_eq!(sim.method_name(), if dense { "dense" } else { "circulant" });
        let h = spacing(&t, &res);
        let mut rng = RngStream::new(17, 0).rng();
        let lags = [0usize, 1, 3, 6, 10];
        let mut prods = vec![Vec::with_capacity(reps); lags.len()];
        for _ in 0..reps / 2 {
            let (a, b) = sim.sample_pair(&mut rng);
            for f in [a, b] {
                for (li, &l) in lags.iter().enumerate() {
                    // lag along the last axis from node 0
                    prods[li].push(f[0] * f[l]);
                }
            }
        }
        for (li, &l) in lags.iter().enumerate() {
            let mut lag = vec![0.0; res.len()];
            *lag.last_mut().unwrap() = l as f64 * h[res.len() - 1];
            let target = s.covariance(&lag).unwrap();
            let (m, v) = mean_var(&prods[li]);
            let se = (v / prods[li].len() as f64).sqrt();
            assert!((m - target).abs() < 3.5 * se, "lag {l}: {m} vs {target} (se {se})");
        }
    }

    #[test]
    fn circulant_covariance_at_five_lags() {
        covariance_check(vec![64, 80], vec![1.0, 1.2], 10_000, false);
    }

    #[test]
    fn dense_covariance_at_five_lags() {
        covariance_check(vec![40], vec![1.0], 10_000, true);
    }

    #[test]
    fn pair_members_are_uncorrelated() {
        let s = GaussianFieldSpec::squared_exponential(1.0, 0.2, 2).unwrap();
        let t = Rectangle::new(vec![1.0, 1.0]).unwrap();
        let sim = GaussianSimulator::new(&s, &t, &[70, 70]).unwrap();
        let mut rng = RngStream::new(3, 1).rng();
        let n = 4000;
        let mut p = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b) = sim.sample_pair(&mut rng);
            p.push(a[100] * b[100]);
        }
        let (m, v) = mean_var(&p);
        assert!(m.abs() < 3.5 * (v / n as f64).sqrt());
    }

    #[test]
    fn derivative_variance_matches_lambda2() {
        let ell = 0.25;
        let s = GaussianFieldSpec::squared_exponential(1.0, ell, 1).unwrap();
        let h = ell / 8.0;
        let t = Rectangle::new(vec![h * 63.0]).unwrap();
        let sim = GaussianSimulator::new(&s, &t, &[64]).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let mut d = Vec::new();
        for _ in 0..10_000 {
            let f = sim.sample(&mut rng);
            d.push((f[33] - f[31]) / (2.0 * h));
        }
        let (_, v) = mean_var(&d);
        let lam = s.spectral_moments[0][0];
        assert!((v / lam - 1.0).abs() < 0.05, "{v} vs {lam}");
    }

    #[test]
    fn spectral_measure_spec() {
        let mu = SpectralMeasure::uniform_ball(2, 8.0, 1.0).unwrap();
        let s = GaussianFieldSpec::from_spectral_measure(1.5, mu).unwrap();
        assert!((s.spectral_moments[0][0] - 1.5 * 16.0).abs() < 1e-12);
        let t = Rectangle::new(vec![1.0, 1.0]).unwrap();
        let sim = GaussianSimulator::new(&s, &t, &[30, 30]).unwrap();
        let mut rng = RngStream::new(6, 0).rng();
        let mut v0 = Vec::new();
        for _ in 0..4000 {
            v0.push(sim.sample(&mut rng)[400].powi(2));
        }
        let (m, v) = mean_var(&v0);
        assert!((m - 1.5).abs() < 3.5 * (v / 4000.0).sqrt());
        // slowly decaying covariance: circulant embedding gives up with a diagnostic
        match GaussianSimulator::new(&s, &t, &[80, 80]) {
            Err(Error::Simulation(msg)) => assert!(msg.contains("not embeddable"), "{msg}"),
            Ok(sim) => assert!(sim.clamped_fraction() <= EIG_TOL),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let s = GaussianFieldSpec::squared_exponential(1.0, 0.2, 2).unwrap();
        let t = Rectangle::new(vec![1.0, 1.0]).unwrap();
        let a = simulate_gaussian(&s, &t, &[70, 70], RngStream::new(1, 2)).unwrap();
        let b = simulate_gaussian(&s, &t, &[70, 70], RngStream::new(1, 2)).unwrap();
        assert_eq!(a.values(), b.values());
    }
}
