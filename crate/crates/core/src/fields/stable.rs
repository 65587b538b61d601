//! Sub-Gaussian, harmonisable and concatenated-harmonisable stable fields.

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use super::gaussian::{GaussianFieldSpec, GaussianSimulator};
use super::grid::{check_resolution, spacing, FieldGrid, FieldKind, Provenance};
use crate::error::{domain, Result};
use crate::sampling::{sample_arrivals, FrequencySampler, PositiveStable, RngStream, SpectralMeasure};
use crate::special::stable_constants;
use crate::Rectangle;

/// γ_α = (C_α μ_0 / b_α)^{1/α}.
pub fn gamma_alpha(alpha: f64, mu0: f64) -> Result<f64> {
    let c = stable_constants(alpha)?;
    if !(mu0 > 0.0) {
        return Err(domain!("total mass must be positive, got {mu0}"));
    }
    Ok((c.c_alpha * mu0 / c.b_alpha).powf(1.0 / alpha))
}

/// Sub-Gaussian sampler f = √X·g with X positive α/2-stable.
#[derive(Debug, Clone)]
pub struct SubGaussianSimulator {
    gaussian: GaussianSimulator,
    mixing: PositiveStable,
    alpha: f64,
}

/// A sub-Gaussian draw kept in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGaussianDraw {
    pub mixing: f64,
    pub gaussian: Vec<f64>,
}

impl SubGaussianDraw {
    pub fn values(&self) -> Vec<f64> {
        let s = self.mixing.sqrt();
        self.gaussian.iter().map(|g| s * g).collect()
    }
}

impl SubGaussianSimulator {
    pub fn new(spec: &GaussianFieldSpec, alpha: f64, t: &Rectangle, resolution: &[usize]) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(domain!("stable index must lie in (0,2), got {alpha}"));
        }
        Ok(SubGaussianSimulator {
            gaussian: GaussianSimulator::new(spec, t, resolution)?,
            mixing: PositiveStable::new(alpha / 2.0)?,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gaussian(&self) -> &GaussianSimulator {
        &self.gaussian
    }

    /// Two independent draws: both mixing variables first, then the Gaussian pair.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (SubGaussianDraw, SubGaussianDraw) {
        let x1 = self.mixing.sample(rng);
        let x2 = self.mixing.sample(rng);
        let (g1, g2) = self.gaussian.sample_pair(rng);
        (SubGaussianDraw { mixing: x1, gaussian: g1 }, SubGaussianDraw { mixing: x2, gaussian: g2 })
    }
}

pub fn simulate_subgaussian(
    spec: &GaussianFieldSpec,
    alpha: f64,
    t: &Rectangle,
    resolution: &[usize],
    stream: RngStream,
) -> Result<FieldGrid> {
    let sim = SubGaussianSimulator::new(spec, alpha, t, resolution)?;
    let mut rng = stream.rng();
    let (d, _) = sim.sample_pair(&mut rng);
    let mut p = Provenance::new(FieldKind::SubGaussian, stream.master_seed, stream.stream_index);
    p.alpha = Some(alpha);
    p.mixing = Some(d.mixing);
    p.params = serde_json::to_value(spec).unwrap_or(serde_json::Value::Null);
    FieldGrid::new(t.clone(), resolution.to_vec(), d.values(), p)
}

/// The non-Gaussian randomness of a (concatenated-)harmonisable draw:
/// arrivals Γ_k and frequencies ω_{kℓ}.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSkeleton {
    pub alpha: f64,
    pub n_prime: usize,
    pub gammas: Vec<f64>,
    /// K·N′ rows of length N, k major.
    pub omegas: Vec<Vec<f64>>,
}

impl SeriesSkeleton {
    pub fn truncation(&self) -> usize {
        self.gammas.len()
    }

    /// Builds the skeleton recorded in a provenance.
    pub fn from_provenance(p: &Provenance) -> Result<Self> {
        let missing = |what: &str| crate::Error::Precondition(format!("provenance has no {what}"));
        let alpha = p.alpha.ok_or_else(|| missing("alpha"))?;
        let gammas = p.gammas.clone().ok_or_else(|| missing("arrival times"))?;
        let omegas = p.omegas.clone().ok_or_else(|| missing("frequencies"))?;
        let n_prime = p.n_prime.unwrap_or(1);
        if omegas.len() != gammas.len() * n_prime {
            return Err(crate::Error::Precondition(format!(
                "provenance holds {} frequencies for {} arrivals with N' = {n_prime}",
                omegas.len(),
                gammas.len()
            )));
        }
        Ok(SeriesSkeleton { alpha, n_prime, gammas, omegas })
    }
}

/// Draws arrivals then frequencies (k major, ℓ minor).
pub fn draw_skeleton<R: Rng + ?Sized>(
    mu: &SpectralMeasure,
    alpha: f64,
    n_prime: usize,
    k: usize,
    rng: &mut R,
) -> Result<SeriesSkeleton> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(domain!("stable index must lie in (0,2), got {alpha}"));
    }
    if n_prime < 1 {
        return Err(domain!("N' must be at least 1"));
    }
    let gammas = sample_arrivals(k, rng)?.gammas;
    let mut sampler = FrequencySampler::new(mu)?;
    let n = mu.dim();
    let omegas = (0..k * n_prime)
        .map(|_| {
            let mut w = vec![0.0; n];
            sampler.sample_into(&mut w, rng);
            w
        })
        .collect();
    Ok(SeriesSkeleton { alpha, n_prime, gammas, omegas })
}

/// Exact evaluation of Σ_w A_w cos⟨t,ω_w⟩ + B_w sin⟨t,ω_w⟩ on a grid, as
/// one matrix product over (leading axes) × (last axis).
#[derive(Debug, Clone)]
pub struct WaveSynthesizer {
    coords: Vec<Vec<f64>>,
    resolution: Vec<usize>,
}

impl WaveSynthesizer {
    pub fn new(t: &Rectangle, resolution: &[usize]) -> Result<Self> {
        check_resolution(t, resolution)?;
        let h = spacing(t, resolution);
        let coords = resolution
            .iter()
            .zip(&h)
            .map(|(&n, &hi)| (0..n).map(|i| i as f64 * hi).collect())
            .collect();
        Ok(WaveSynthesizer { coords, resolution: resolution.to_vec() })
    }

    pub fn nodes(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn evaluate(&self, a: &[f64], b: &[f64], omegas: &[Vec<f64>]) -> Vec<f64> {
        let w = omegas.len();
        let nd = self.resolution.len();
        let last = self.resolution[nd - 1];
        let lead: usize = self.resolution[..nd - 1].iter().product();
        let kk = 2 * w;
        // P: lead × 2W, [cos a | sin a], a = Σ_{i<N-1} t_i ω(i)
        let mut p = vec![0.0; lead * kk];
        let mut idx = vec![0usize; nd.saturating_sub(1)];
        for r in 0..lead {
            let mut rem = r;
            for ax in (0..nd - 1).rev() {
                idx[ax] = rem % self.resolution[ax];
                rem /= self.resolution[ax];
            }
            let row = &mut p[r * kk..(r + 1) * kk];
            for (j, om) in omegas.iter().enumerate() {
                let mut ang = 0.0;
                for ax in 0..nd - 1 {
                    ang += self.coords[ax][idx[ax]] * om[ax];
                }
                let (s, c) = ang.sin_cos();
                row[j] = c;
                row[w + j] = s;
            }
        }
        // Q: last × 2W, [A cos b + B sin b | B cos b − A sin b]
        let mut q = vec![0.0; last * kk];
        for (c_i, &x) in self.coords[nd - 1].iter().enumerate() {
            let row = &mut q[c_i * kk..(c_i + 1) * kk];
            for (j, om) in omegas.iter().enumerate() {
                let (s, c) = (x * om[nd - 1]).sin_cos();
                row[j] = a[j] * c + b[j] * s;
                row[w + j] = b[j] * c - a[j] * s;
            }
        }
        let mut out = vec![0.0; lead * last];
        // SAFETY: slice lengths and strides describe lead×kk, kk×last and lead×last matrices.
        unsafe {
            matrixmultiply::dgemm(
                lead,
                kk,
                last,
                1.0,
                p.as_ptr(),
                kk as isize,
                1,
                q.as_ptr(),
                1,
                kk as isize,
                0.0,
                out.as_mut_ptr(),
                last as isize,
                1,
            );
        }
        out
    }
}

/// Draws the Gaussian coefficients (G¹, G² per wave, in wave order) and
/// evaluates the truncated series on the grid.
pub fn synthesize<R: Rng + ?Sized>(
    skel: &SeriesSkeleton,
    gamma_alpha: f64,
    synth: &WaveSynthesizer,
    rng: &mut R,
) -> Vec<f64> {
    let w = skel.omegas.len();
    let mut a = Vec::with_capacity(w);
    let mut b = Vec::with_capacity(w);
    for (j, _) in skel.omegas.iter().enumerate() {
        let k = j / skel.n_prime;
        let amp = gamma_alpha * skel.gammas[k].powf(-1.0 / skel.alpha);
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        a.push(amp * g1);
        b.push(amp * g2);
    }
    synth.evaluate(&a, &b, &skel.omegas)
}

/// Prepared sampler for harmonisable (N′ = 1) and concatenated fields.
#[derive(Debug, Clone)]
pub struct SeriesSimulator {
    pub mu: SpectralMeasure,
    pub alpha: f64,
    pub n_prime: usize,
    pub truncation: usize,
    gamma_alpha: f64,
    synth: WaveSynthesizer,
    rectangle: Rectangle,
}

impl SeriesSimulator {
    pub fn new(
        mu: &SpectralMeasure,
        alpha: f64,
        n_prime: usize,
        truncation: usize,
        t: &Rectangle,
        resolution: &[usize],
    ) -> Result<Self> {
        mu.validate()?;
        if mu.dim() != t.dim() {
            return Err(domain!("measure is {}-dimensional, rectangle is {}-dimensional", mu.dim(), t.dim()));
        }
        if n_prime < 1 || n_prime > t.dim() {
            return Err(domain!("N' must satisfy 1 <= N' <= N = {}, got {n_prime}", t.dim()));
        }
        if truncation < 1 {
            return Err(domain!("truncation K must be at least 1"));
        }
        Ok(SeriesSimulator {
            mu: mu.clone(),
            alpha,
            n_prime,
            truncation,
            gamma_alpha: gamma_alpha(alpha, mu.total_mass)?,
            synth: WaveSynthesizer::new(t, resolution)?,
            rectangle: t.clone(),
        })
    }

    pub fn gamma_alpha(&self) -> f64 {
        self.gamma_alpha
    }

    pub fn rectangle(&self) -> &Rectangle {
        &self.rectangle
    }

    pub fn skeleton<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SeriesSkeleton> {
        draw_skeleton(&self.mu, self.alpha, self.n_prime, self.truncation, rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(SeriesSkeleton, Vec<f64>)> {
        let skel = self.skeleton(rng)?;
        let v = synthesize(&skel, self.gamma_alpha, &self.synth, rng);
        Ok((skel, v))
    }

    pub fn kind(&self) -> FieldKind {
        if self.n_prime == 1 {
            FieldKind::Harmonisable
        } else {
            FieldKind::Concatenated
        }
    }

    pub fn provenance(&self, stream: RngStream, skel: &SeriesSkeleton) -> Provenance {
        let mut p = Provenance::new(self.kind(), stream.master_seed, stream.stream_index);
        p.alpha = Some(self.alpha);
        p.truncation = Some(self.truncation);
        p.n_prime = Some(self.n_prime);
        p.gammas = Some(skel.gammas.clone());
        p.omegas = Some(skel.omegas.clone());
        p.params = serde_json::to_value(&self.mu).unwrap_or(serde_json::Value::Null);
        p
    }

    pub fn simulate(&self, stream: RngStream) -> Result<FieldGrid> {
        let mut rng = stream.rng();
        let (skel, v) = self.sample(&mut rng)?;
        FieldGrid::new(self.rectangle.clone(), self.synth.resolution.clone(), v, self.provenance(stream, &skel))
    }
}

pub fn simulate_harmonisable(
    mu: &SpectralMeasure,
    alpha: f64,
    k: usize,
    t: &Rectangle,
    resolution: &[usize],
    stream: RngStream,
) -> Result<FieldGrid> {
    SeriesSimulator::new(mu, alpha, 1, k, t, resolution)?.simulate(stream)
}

pub fn simulate_concatenated(
    mu: &SpectralMeasure,
    alpha: f64,
    n_prime: usize,
    k: usize,
    t: &Rectangle,
    resolution: &[usize],
    stream: RngStream,
) -> Result<FieldGrid> {
    let sim = SeriesSimulator::new(mu, alpha, n_prime, k, t, resolution)?;
    let mut g = sim.simulate(stream)?;
    g.provenance.kind = FieldKind::Concatenated;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::conditioned_from_skeleton;
    use crate::special::gamma;

    fn ball(dim: usize) -> SpectralMeasure {
        SpectralMeasure::uniform_ball(dim, 2.0, 1.5).unwrap()
    }

    #[test]
    fn n_prime_one_matches_harmonisable() {
        let t = Rectangle::new(vec![3.0, 2.0]).unwrap();
        let s = RngStream::new(17, 4);
        let h = simulate_harmonisable(&ball(2), 1.3, 40, &t, &[12, 9], s).unwrap();
        let c = simulate_concatenated(&ball(2), 1.3, 1, 40, &t, &[12, 9], s).unwrap();
        assert_eq!(h.values(), c.values());
        assert_eq!(c.provenance.kind, FieldKind::Concatenated);
    }

    #[test]
    fn synthesizer_matches_direct_sum() {
        let t = Rectangle::new(vec![2.0, 1.0, 1.5]).unwrap();
        let res = [5, 4, 6];
        let synth = WaveSynthesizer::new(&t, &res).unwrap();
        let om = vec![vec![0.3, -1.2, 2.0], vec![1.1, 0.4, -0.7]];
        let a = [0.8, -0.3];
        let b = [0.25, 1.4];
        let v = synth.evaluate(&a, &b, &om);
        let h = spacing(&t, &res);
        let mut idx = 0;
        for i in 0..res[0] {
            for j in 0..res[1] {
                for k in 0..res[2] {
                    let x = [i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]];
                    let mut want = 0.0;
                    for w in 0..2 {
                        let ang: f64 = (0..3).map(|d| x[d] * om[w][d]).sum();
                        want += a[w] * ang.cos() + b[w] * ang.sin();
                    }
                    assert!((v[idx] - want).abs() < 1e-12);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn single_wave_is_plane_wave() {
        let t = Rectangle::new(vec![4.0]).unwrap();
        let sim = SeriesSimulator::new(&ball(1), 1.5, 1, 1, &t, &[33]).unwrap();
        let (skel, v) = sim.sample(&mut RngStream::new(3, 0).rng()).unwrap();
        let w = skel.omegas[0][0];
        // a cos(ωt) + b sin(ωt) is pinned by the first two nodes
        let h = 4.0 / 32.0;
        let a = v[0];
        let b = (v[1] - a * (w * h).cos()) / (w * h).sin();
        let amp = (a * a + b * b).sqrt();
        for (i, &x) in v.iter().enumerate() {
            let ti = i as f64 * h;
            assert!((x - (a * (w * ti).cos() + b * (w * ti).sin())).abs() < 1e-10 * (1.0 + amp));
        }
    }

    #[test]
    fn conditional_covariance_matches_skeleton() {
        let mu = ball(2);
        let t = Rectangle::new(vec![1.0, 1.0]).unwrap();
        let sim = SeriesSimulator::new(&mu, 1.2, 2, 30, &t, &[3, 3]).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let skel = sim.skeleton(&mut rng).unwrap();
        let cs = conditioned_from_skeleton(&skel, mu.total_mass).unwrap();
        let synth = WaveSynthesizer::new(&t, &[3, 3]).unwrap();
        let n = 40_000;
        let (mut s00, mut s08) = (0.0, 0.0);
        for _ in 0..n {
            let v = synthesize(&skel, sim.gamma_alpha(), &synth, &mut rng);
            s00 += v[0] * v[0];
            s08 += v[0] * v[8];
        }
        let var = s00 / n as f64;
        assert!((var / cs.sigma_tilde_sq - 1.0).abs() < 0.03, "{var} vs {}", cs.sigma_tilde_sq);
        // cov between (0,0) and (1,1)
        let g2 = sim.gamma_alpha().powi(2);
        let want: f64 = skel
            .omegas
            .iter()
            .enumerate()
            .map(|(j, w)| g2 * skel.gammas[j / 2].powf(-1.0 / 1.2 * 2.0) * (w[0] + w[1]).cos())
            .sum();
        assert!((s08 / n as f64 - want).abs() < 0.03 * cs.sigma_tilde_sq);
    }

    #[test]
    fn marginal_is_symmetric_stable() {
        // LePage: Σ Γ_k^{-1/α} γ_α G_k is SαS with σ^α = γ_α^α E|G|^α / C_α
        let alpha = 1.0;
        let mu = ball(1);
        let c = stable_constants(alpha).unwrap();
        let ga = gamma_alpha(alpha, mu.total_mass).unwrap();
        let abs_mom = 2f64.powf(alpha / 2.0) * gamma((alpha + 1.0) / 2.0) / std::f64::consts::PI.sqrt();
        let scale_a = ga.powf(alpha) * abs_mom / c.c_alpha;
        let t = Rectangle::new(vec![1.0]).unwrap();
        let sim = SeriesSimulator::new(&mu, alpha, 1, 1000, &t, &[2]).unwrap();
        let theta = 0.5;
        let n = 20_000;
        let mut acc = 0.0;
        let mut rng = RngStream::new(11, 0).rng();
        for _ in 0..n {
            let (_, v) = sim.sample(&mut rng).unwrap();
            acc += (theta * v[0]).cos();
        }
        let emp = acc / n as f64;
        let want = (-scale_a * theta.powf(alpha)).exp();
        assert!((emp - want).abs() < 0.015, "{emp} vs {want}");
    }

    #[test]
    fn subgaussian_factors_and_determinism() {
        let spec = GaussianFieldSpec::squared_exponential(1.0, 0.5, 2).unwrap();
        let t = Rectangle::new(vec![2.0, 2.0]).unwrap();
        let a = simulate_subgaussian(&spec, 1.5, &t, &[17, 17], RngStream::new(9, 2)).unwrap();
        let b = simulate_subgaussian(&spec, 1.5, &t, &[17, 17], RngStream::new(9, 2)).unwrap();
        assert_eq!(a.values(), b.values());
        let x = a.provenance.mixing.unwrap();
        assert!(x > 0.0);
        let sim = SubGaussianSimulator::new(&spec, 1.5, &t, &[17, 17]).unwrap();
        let (d, _) = sim.sample_pair(&mut RngStream::new(9, 2).rng());
        assert_eq!(d.values(), a.values());
        let g = sim.gaussian().sample_pair(&mut {
            let mut r = RngStream::new(9, 2).rng();
            let _ = sim.mixing.sample(&mut r);
            let _ = sim.mixing.sample(&mut r);
            r
        });
        for (v, gv) in a.values().iter().zip(&g.0) {
            assert!((v - x.sqrt() * gv).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let t = Rectangle::new(vec![1.0, 1.0]).unwrap();
        assert!(SeriesSimulator::new(&ball(2), 1.5, 3, 10, &t, &[4, 4]).is_err());
        assert!(SeriesSimulator::new(&ball(2), 2.0, 1, 10, &t, &[4, 4]).is_err());
        assert!(SeriesSimulator::new(&ball(2), 1.5, 1, 0, &t, &[4, 4]).is_err());
        assert!(SeriesSimulator::new(&ball(1), 1.5, 1, 10, &t, &[4, 4]).is_err());
    }
}
