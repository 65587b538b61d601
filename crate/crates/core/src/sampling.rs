//! Random sampling primitives: reproducible streams, positive stable
//! variables, Poisson arrivals and spectral-measure frequencies.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::special::gamma;

/// Identifies an independent, reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        RngStream { master_seed, stream_index }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.master_seed);
        r.set_stream(self.stream_index);
        r
    }
}

/// Positive strictly stable law with Laplace transform e^{-t^a}, 0 < a < 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveStable {
    index: f64,
}

impl PositiveStable {
    pub fn new(index: f64) -> Result<Self> {
        if !(index > 0.0 && index < 1.0) {
            return Err(domain!("positive stable index must lie in (0,1), got {index}"));
        }
        Ok(PositiveStable { index })
    }

    pub fn index(&self) -> f64 {
        self.index
    }

    pub fn laplace(&self, t: f64) -> f64 {
        (-t.powf(self.index)).exp()
    }

    /// ln B(v) with X = B(V)·W^{-(1-a)/a}, V ~ U(0,π), W ~ Exp(1).
    #[inline]
    fn ln_b(&self, v: f64) -> f64 {
        let a = self.index;
        (a * v).sin().ln() - v.sin().ln() / a + (1.0 - a) / a * ((1.0 - a) * v).sin().ln()
    }

    /// P(X > x).
    pub fn survival(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(1.0);
        }
        if !x.is_finite() {
            return Ok(0.0);
        }
        let a = self.index;
        let c = a / (1.0 - a);
        let lx = x.ln();
        let opts = QuadOptions { abs_tol: 1e-300, rel_tol: 1e-9, max_intervals: 4000 };
        let r = integrate(
            |v| {
                if v <= 0.0 || v >= std::f64::consts::PI {
                    return if v <= 0.0 { 0.0 } else { 1.0 };
                }
                -(-(c * (self.ln_b(v) - lx)).exp()).exp_m1()
            },
            0.0,
            std::f64::consts::PI,
            opts,
        )?;
        Ok((r.value / std::f64::consts::PI).clamp(0.0, 1.0))
    }

    /// E h(X) by two-dimensional quadrature over the Zolotarev representation.
    pub fn expectation<F: Fn(f64) -> f64>(&self, h: F, rel_tol: f64) -> Result<f64> {
        let a = self.index;
        let e = (1.0 - a) / a;
        let inner_opts = QuadOptions { abs_tol: 1e-300, rel_tol: rel_tol * 0.1, max_intervals: 2000 };
        let mut failure = None;
        let outer = integrate(
            |v| {
                if failure.is_some() || v <= 0.0 || v >= std::f64::consts::PI {
                    return 0.0;
                }
                let lb = self.ln_b(v);
                // s = ln w
                match integrate(
                    |s| {
                        let w = s.exp();
                        let x = (lb - e * s).exp();
                        h(x) * (s - w).exp()
                    },
                    -45.0,
                    4.5,
                    inner_opts,
                ) {
                    Ok(r) => r.value,
                    Err(err) => {
                        failure = Some(err);
                        0.0
                    }
                }
            },
            0.0,
            std::f64::consts::PI,
            QuadOptions { abs_tol: 1e-300, rel_tol, max_intervals: 2000 },
        );
        if let Some(err) = failure {
            return Err(err);
        }
        Ok(outer?.value / std::f64::consts::PI)
    }
}

impl Distribution<f64> for PositiveStable {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v: f64 = std::f64::consts::PI * rng.sample::<f64, _>(Open01);
        let w: f64 = rng.sample(Exp1);
        let a = self.index;
        (self.ln_b(v) - (1.0 - a) / a * w.ln()).exp()
    }
}

/// One draw of a positive stable variable with Laplace transform e^{-t^index}.
pub fn sample_positive_stable<R: Rng + ?Sized>(index: f64, rng: &mut R) -> Result<f64> {
    Ok(PositiveStable::new(index)?.sample(rng))
}

/// Tabulated survival function of a [`PositiveStable`] law, interpolated
/// linearly in log-log coordinates with a power-law tail beyond the table.
#[derive(Debug, Clone)]
pub struct StableSurvivalTable {
    index: f64,
    log_x0: f64,
    step: f64,
    log_s: Vec<f64>,
}

impl StableSurvivalTable {
    const LOG10_MIN: f64 = -6.0;
    const LOG10_MAX: f64 = 14.0;
    const PER_DECADE: usize = 100;

    pub fn new(law: PositiveStable) -> Result<Self> {
        let n = ((Self::LOG10_MAX - Self::LOG10_MIN) as usize) * Self::PER_DECADE + 1;
        let log_x0 = Self::LOG10_MIN * std::f64::consts::LN_10;
        let step = std::f64::consts::LN_10 / Self::PER_DECADE as f64;
        let mut log_s = Vec::with_capacity(n);
        for i in 0..n {
            let x = (log_x0 + i as f64 * step).exp();
            let s = law.survival(x)?;
            if s <= 0.0 {
                return Err(Error::Numerical(format!("survival underflow at x = {x:e}")));
            }
            log_s.push(s.ln());
        }
        Ok(StableSurvivalTable { index: law.index, log_x0, step, log_s })
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let t = (x.ln() - self.log_x0) / self.step;
        if t <= 0.0 {
            return self.log_s[0].exp();
        }
        let last = self.log_s.len() - 1;
        if t >= last as f64 {
            let over = (t - last as f64) * self.step;
            return (self.log_s[last] - self.index * over).exp();
        }
        let i = t as usize;
        let f = t - i as f64;
        (self.log_s[i] * (1.0 - f) + self.log_s[i + 1] * f).exp()
    }
}

/// Arrival times Γ_1 < … < Γ_K of a unit-rate Poisson process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSequence {
    pub gammas: Vec<f64>,
}

impl ArrivalSequence {
    pub fn truncation(&self) -> usize {
        self.gammas.len()
    }
}

pub fn sample_arrivals<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<ArrivalSequence> {
    if k < 1 {
        return Err(domain!("need at least one arrival"));
    }
    let mut acc = 0.0;
    let gammas = (0..k)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            // Exp1 can return 0 with negligible probability; keep strict increase
            acc += e.max(f64::MIN_POSITIVE);
            acc
        })
        .collect();
    Ok(ArrivalSequence { gammas })
}

/// Smallest K whose integral tail bound for Σ k^{-2/α} falls below
/// `1e-4` times the head, capped at `cap`.
pub fn default_truncation(alpha: f64, cap: usize) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(domain!("stable index must lie in (0,2), got {alpha}"));
    }
    let p = 2.0 / alpha;
    let mut head = 0.0;
    for k in 1..=cap.max(1) {
        head += (k as f64).powf(-p);
        let tail = (k as f64).powf(1.0 - p) / (p - 1.0);
        if tail < 1e-4 * head {
            return Ok(k);
        }
    }
    Ok(cap.max(1))
}

/// Piecewise-linear density on a sorted grid, normalised to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedDensity {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl TabulatedDensity {
    fn validate(&self) -> Result<f64> {
        let bad = |m: &str| Error::Config(format!("tabulated density: {m}"));
        if self.x.len() < 2 || self.x.len() != self.density.len() {
            return Err(bad("need matching x/density arrays with at least two points"));
        }
        if self.x.windows(2).any(|w| !(w[1] > w[0])) || self.x.iter().any(|v| !v.is_finite()) {
            return Err(bad("x must be finite and strictly increasing"));
        }
        if self.density.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(bad("density values must be finite and non-negative"));
        }
        let mass: f64 = self
            .x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, p)| 0.5 * (x[1] - x[0]) * (p[0] + p[1]))
            .sum();
        if !(mass > 0.0) {
            return Err(bad("density has zero mass"));
        }
        Ok(mass)
    }

    fn cdf(&self) -> Vec<f64> {
        let mut c = vec![0.0];
        for (x, p) in self.x.windows(2).zip(self.density.windows(2)) {
            let last = *c.last().unwrap();
            c.push(last + 0.5 * (x[1] - x[0]) * (p[0] + p[1]));
        }
        c
    }

    /// ∫ g(x) p(x) dx / mass, exact for low-degree polynomial g on each piece.
    fn moment<G: Fn(f64) -> f64>(&self, g: G, mass: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.x.len() - 1 {
            let (x0, x1) = (self.x[i], self.x[i + 1]);
            let (p0, p1) = (self.density[i], self.density[i + 1]);
            let dens = |x: f64| p0 + (p1 - p0) * (x - x0) / (x1 - x0);
            let mut cuts = vec![x0];
            if x0 < 0.0 && x1 > 0.0 {
                cuts.push(0.0);
            }
            cuts.push(x1);
            for w in cuts.windows(2) {
                let r = integrate(|x| g(x) * dens(x), w[0], w[1], QuadOptions::default())
                    .map(|r| r.value)
                    .unwrap_or(0.0);
                acc += r;
            }
        }
        acc / mass
    }

    /// (Re, Im) of ∫ e^{itx} p(x) dx / mass.
    fn char_fn(&self, t: f64, mass: f64) -> (f64, f64) {
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..self.x.len() - 1 {
            let (x0, x1) = (self.x[i], self.x[i + 1]);
            let (p0, p1) = (self.density[i], self.density[i + 1]);
            let h = x1 - x0;
            if (t * h).abs() < 0.5 {
                // short phase: 5-point Gauss–Legendre is ample
                const GX: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
                const GW: [f64; 5] = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
                for (gx, gw) in GX.iter().zip(GW) {
                    let x = x0 + 0.5 * h * (gx + 1.0);
                    let p = p0 + (p1 - p0) * 0.5 * (gx + 1.0);
                    re += 0.5 * h * gw * p * (t * x).cos();
                    im += 0.5 * h * gw * p * (t * x).sin();
                }
            } else {
                // ∫ (a + b x) e^{itx} dx = e^{itx} [ (a+bx)/(it) + b/t² ]
                let b = (p1 - p0) / h;
                let a = p0 - b * x0;
                let anti = |x: f64| {
                    let (s, c) = (t * x).sin_cos();
                    let lin = a + b * x;
                    // (lin/(it)) e^{itx} = lin/t · (sin - i cos)
                    let r = lin / t * s + b / (t * t) * c;
                    let i = -lin / t * c + b / (t * t) * s;
                    (r, i)
                };
                let (r1, i1) = anti(x1);
                let (r0, i0) = anti(x0);
                re += r1 - r0;
                im += i1 - i0;
            }
        }
        (re / mass, im / mass)
    }

    fn sample<R: Rng + ?Sized>(&self, cdf: &[f64], rng: &mut R) -> f64 {
        let total = *cdf.last().unwrap();
        let v = rng.random::<f64>() * total;
        let i = cdf.partition_point(|&c| c <= v).clamp(1, cdf.len() - 1) - 1;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let (p0, p1) = (self.density[i], self.density[i + 1]);
        let h = x1 - x0;
        let r = v - cdf[i];
        // solve p0 s + (p1-p0) s²/(2h) = r for s in [0, h]
        let s = if (p1 - p0).abs() < 1e-14 * (p0 + p1) {
            r / p0.max(f64::MIN_POSITIVE)
        } else {
            let k = (p1 - p0) / h;
            let disc = (p0 * p0 + 2.0 * k * r).max(0.0);
            2.0 * r / (p0 + disc.sqrt()).max(f64::MIN_POSITIVE)
        };
        x0 + s.clamp(0.0, h)
    }
}

/// Shape of a spectral control measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralKind {
    /// Uniform on the centred ball of the given radius in R^dim.
    UniformBall { dim: usize, radius: f64 },
    /// Uniform on ∏[-h_i, h_i].
    UniformBox { half_widths: Vec<f64> },
    /// Product of per-axis tabulated densities.
    ProductDensity { axes: Vec<TabulatedDensity> },
}

/// Finite, compactly supported control measure μ with total mass μ_0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    #[serde(flatten)]
    pub kind: SpectralKind,
    pub total_mass: f64,
}

/// Moments of the normalised measure μ/μ_0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureMoments {
    pub mu0: f64,
    /// μ_j = E|ω_j|
    pub abs_first: Vec<f64>,
    /// E[ω_i ω_j]
    pub second: Vec<Vec<f64>>,
}

impl SpectralMeasure {
    pub fn uniform_ball(dim: usize, radius: f64, total_mass: f64) -> Result<Self> {
        let m = SpectralMeasure { kind: SpectralKind::UniformBall { dim, radius }, total_mass };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform_box(half_widths: Vec<f64>, total_mass: f64) -> Result<Self> {
        let m = SpectralMeasure { kind: SpectralKind::UniformBox { half_widths }, total_mass };
        m.validate()?;
        Ok(m)
    }

    pub fn product_density(axes: Vec<TabulatedDensity>, total_mass: f64) -> Result<Self> {
        let m = SpectralMeasure { kind: SpectralKind::ProductDensity { axes }, total_mass };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_mass > 0.0 && self.total_mass.is_finite()) {
            return Err(Error::Config(format!("total mass must be positive, got {}", self.total_mass)));
        }
        match &self.kind {
            SpectralKind::UniformBall { dim, radius } => {
                if *dim == 0 || !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::Config("uniform_ball needs dim >= 1 and radius > 0".into()));
                }
            }
            SpectralKind::UniformBox { half_widths } => {
                if half_widths.is_empty() || half_widths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                    return Err(Error::Config("uniform_box needs positive half-widths".into()));
                }
            }
            SpectralKind::ProductDensity { axes } => {
                if axes.is_empty() {
                    return Err(Error::Config("product_density needs at least one axis".into()));
                }
                for a in axes {
                    a.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SpectralKind::UniformBall { dim, .. } => *dim,
            SpectralKind::UniformBox { half_widths } => half_widths.len(),
            SpectralKind::ProductDensity { axes } => axes.len(),
        }
    }

    pub fn is_rotation_invariant(&self) -> bool {
        matches!(self.kind, SpectralKind::UniformBall { .. })
    }

    /// Largest |ω| on the support.
    pub fn support_radius(&self) -> f64 {
        match &self.kind {
            SpectralKind::UniformBall { radius, .. } => *radius,
            SpectralKind::UniformBox { half_widths } => {
                half_widths.iter().map(|h| h * h).sum::<f64>().sqrt()
            }
            SpectralKind::ProductDensity { axes } => axes
                .iter()
                .map(|a| a.x[0].abs().max(a.x[a.x.len() - 1].abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// E cos⟨t, ω⟩ under μ/μ_0; the normalised covariance of the associated
    /// stationary field.
    pub fn characteristic(&self, t: &[f64]) -> Result<f64> {
        if t.len() != self.dim() {
            return Err(domain!("lag has {} components, measure lives in R^{}", t.len(), self.dim()));
        }
        match &self.kind {
            SpectralKind::UniformBox { half_widths } => {
                Ok(t.iter().zip(half_widths).map(|(&ti, &h)| sinc(ti * h)).product())
            }
            SpectralKind::UniformBall { dim, radius } => {
                let r = t.iter().map(|x| x * x).sum::<f64>().sqrt() * radius;
                match dim {
                    1 => Ok(sinc(r)),
                    2 => Ok(if r < 1e-8 { 1.0 - r * r / 8.0 } else { 2.0 * bessel_j1(r) / r }),
                    3 => Ok(if r < 1e-3 {
                        1.0 - r * r / 10.0 + r.powi(4) / 280.0
                    } else {
                        3.0 * (r.sin() - r * r.cos()) / (r * r * r)
                    }),
                    d => Err(Error::Config(format!(
                        "uniform_ball covariance is implemented for dimensions 1 to 3, got {d}"
                    ))),
                }
            }
            SpectralKind::ProductDensity { axes } => {
                let (mut re, mut im) = (1.0, 0.0);
                for (a, &ti) in axes.iter().zip(t) {
                    let mass = a.validate()?;
                    let (r, i) = a.char_fn(ti, mass);
                    (re, im) = (re * r - im * i, re * i + im * r);
                }
                Ok(re)
            }
        }
    }

    /// Per-axis factors when the characteristic function is a product
    /// (box and product kinds); `None` for the ball.
    pub fn axis_characteristic(&self, axis: usize, t: f64) -> Option<(f64, f64)> {
        match &self.kind {
            SpectralKind::UniformBox { half_widths } => Some((sinc(t * half_widths[axis]), 0.0)),
            SpectralKind::ProductDensity { axes } => {
                let a = &axes[axis];
                let mass = a.validate().ok()?;
                Some(a.char_fn(t, mass))
            }
            SpectralKind::UniformBall { dim: 1, radius } => Some((sinc(t * radius), 0.0)),
            SpectralKind::UniformBall { .. } => None,
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// J_1 through its integral J_1(x) = (1/π)∫_0^π cos(τ − x sin τ) dτ; the
/// trapezoid rule on a periodic integrand converges geometrically.
pub(crate) fn bessel_j1(x: f64) -> f64 {
    let n = 64 + (x.abs() as usize) * 2;
    let h = std::f64::consts::PI / n as f64;
    // endpoint terms cos(0) and cos(π) cancel
    let mut s = 0.0;
    for k in 1..n {
        let tau = k as f64 * h;
        s += (tau - x * tau.sin()).cos();
    }
    s * h / std::f64::consts::PI
}

/// Draws `count` i.i.d. frequencies from μ/μ_0.
pub fn sample_frequencies<R: Rng + ?Sized>(
    mu: &SpectralMeasure,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if count < 1 {
        return Err(domain!("need at least one frequency"));
    }
    let mut s = FrequencySampler::new(mu)?;
    Ok((0..count)
        .map(|_| {
            let mut w = vec![0.0; mu.dim()];
            s.sample_into(&mut w, rng);
            w
        })
        .collect())
}

/// Prepared sampler for μ/μ_0, reusable across draws.
#[derive(Debug, Clone)]
pub struct FrequencySampler<'a> {
    mu: &'a SpectralMeasure,
    cdfs: Vec<Vec<f64>>,
}

impl<'a> FrequencySampler<'a> {
    pub fn new(mu: &'a SpectralMeasure) -> Result<Self> {
        mu.validate()?;
        let cdfs = match &mu.kind {
            SpectralKind::ProductDensity { axes } => axes.iter().map(|a| a.cdf()).collect(),
            _ => Vec::new(),
        };
        Ok(FrequencySampler { mu, cdfs })
    }

    pub fn sample_into<R: Rng + ?Sized>(&mut self, out: &mut [f64], rng: &mut R) {
        match &self.mu.kind {
            SpectralKind::UniformBall { dim, radius } => {
                let mut norm2 = 0.0;
                for o in out.iter_mut().take(*dim) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = g;
                    norm2 += g * g;
                }
                let u: f64 = rng.random();
                let scale = radius * u.powf(1.0 / *dim as f64) / norm2.sqrt().max(f64::MIN_POSITIVE);
                for o in out.iter_mut() {
                    *o *= scale;
                }
            }
            SpectralKind::UniformBox { half_widths } => {
                for (o, h) in out.iter_mut().zip(half_widths) {
                    *o = rng.random_range(-h..*h);
                }
            }
            SpectralKind::ProductDensity { axes } => {
                for ((o, a), c) in out.iter_mut().zip(axes).zip(&self.cdfs) {
                    *o = a.sample(c, rng);
                }
            }
        }
    }
}

/// Moments of μ: closed forms for the uniform kinds, piecewise quadrature for tabulated ones.
pub fn measure_moments(mu: &SpectralMeasure) -> Result<MeasureMoments> {
    mu.validate()?;
    let n = mu.dim();
    let mut second = vec![vec![0.0; n]; n];
    let abs_first = match &mu.kind {
        SpectralKind::UniformBall { dim, radius } => {
            let d = *dim as f64;
            let m1 = 2.0 * gamma(d / 2.0 + 1.0)
                / ((d + 1.0) * std::f64::consts::PI.sqrt() * gamma((d + 1.0) / 2.0))
                * radius;
            for (i, row) in second.iter_mut().enumerate() {
                row[i] = radius * radius / (d + 2.0);
            }
            vec![m1; n]
        }
        SpectralKind::UniformBox { half_widths } => {
            for (i, row) in second.iter_mut().enumerate() {
                row[i] = half_widths[i] * half_widths[i] / 3.0;
            }
            half_widths.iter().map(|h| h / 2.0).collect()
        }
        SpectralKind::ProductDensity { axes } => {
            let mut means = Vec::with_capacity(n);
            let mut abs = Vec::with_capacity(n);
            for (i, a) in axes.iter().enumerate() {
                let mass = a.validate()?;
                means.push(a.moment(|x| x, mass));
                abs.push(a.moment(f64::abs, mass));
                second[i][i] = a.moment(|x| x * x, mass);
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        second[i][j] = means[i] * means[j];
                    }
                }
            }
            abs
        }
    };
    if abs_first.iter().chain(second.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Config("spectral measure moments are not finite".into()));
    }
    Ok(MeasureMoments { mu0: mu.total_mass, abs_first, second })
}
