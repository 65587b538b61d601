//! Special functions and stable-law constants.
//!
//! Everything here is generic over [`Real`]; accuracy targets are stated for
//! `f64`.

use crate::error::{domain, Result};
use crate::scalar::Real;

// Lanczos coefficients, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum<T: Real>(xm1: T) -> T {
    let mut acc = T::lit(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (xm1 + T::from_usize_lossy(i));
    }
    acc
}

/// Gamma function. Poles at the non-positive integers give `NaN` or infinity.
pub fn gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // reflection
        let pi = T::PI();
        let s = (pi * x).sin();
        if s == T::zero() {
            return T::nan();
        }
        return pi / (s * gamma(T::one() - x));
    }
    let xm1 = x - T::one();
    let w = xm1 + T::lit(LANCZOS_G) + half;
    let lnpre = (xm1 + half) * w.ln() - w;
    (T::lit(2.0) * T::PI()).sqrt() * lnpre.exp() * lanczos_sum(xm1)
}

/// Natural log of |Γ(x)| for x > 0.
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        return gamma(x).abs().ln();
    }
    let xm1 = x - T::one();
    let w = xm1 + T::lit(LANCZOS_G) + half;
    half * (T::lit(2.0) * T::PI()).ln() + (xm1 + half) * w.ln() - w + lanczos_sum(xm1).ln()
}

/// Upper standard normal tail Ψ(x) = P(Z > x).
#[inline]
pub fn gaussian_tail<T: Real>(x: T) -> T {
    T::lit(0.5) * (x / T::SQRT_2()).erfc()
}

/// Mills ratio Ψ(x)·√(2π)·e^{x²/2} by continued fraction, for large positive x.
fn mills_cf<T: Real>(x: T) -> T {
    // R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...))))
    let mut t = T::zero();
    for k in (1..=60).rev() {
        t = T::from_usize_lossy(k) / (x + t);
    }
    T::one() / (x + t)
}

/// Hermite polynomial H_n(x) in the probabilists' normalisation,
/// H_n(x) = n! Σ_j (−1)^j x^{n−2j} / (j! (n−2j)! 2^j).
///
/// `n = -1` gives √(2π)·Ψ(x)·e^{x²/2}.
pub fn hermite<T: Real>(n: i32, x: T) -> Result<T> {
    if n < -1 {
        return Err(domain!("hermite index must be >= -1, got {n}"));
    }
    if n == -1 {
        if x > T::lit(26.0) {
            return Ok(mills_cf(x));
        }
        let s2pi = (T::lit(2.0) * T::PI()).sqrt();
        return Ok(s2pi * gaussian_tail(x) * (x * x * T::lit(0.5)).exp());
    }
    let n = n as usize;
    // coefficient n!/(j!(n-2j)!2^j) with alternating sign, built term by term
    let mut coef = T::one();
    let mut sum = T::zero();
    let mut j = 0usize;
    while 2 * j <= n {
        sum = sum + coef * x.powi((n - 2 * j) as i32);
        let a = (n - 2 * j) * (n - 2 * j).saturating_sub(1);
        coef = -coef * T::from_usize_lossy(a) / T::from_usize_lossy(2 * (j + 1));
        j += 1;
    }
    Ok(sum)
}

/// ρ_n(u) = (2π)^{-(n+1)/2} H_{n-1}(u) e^{-u²/2}, with ρ_0 = Ψ.
pub fn rho<T: Real>(n: u32, u: T) -> T {
    if n == 0 {
        return gaussian_tail(u);
    }
    let two_pi = T::lit(2.0) * T::PI();
    let h = hermite(n as i32 - 1, u).expect("index >= 0");
    two_pi.powf(-T::from_u32(n + 1).unwrap() * T::lit(0.5)) * h * (-u * u * T::lit(0.5)).exp()
}

/// Volume ω_j of the unit ball in R^j.
pub fn ball_volume<T: Real>(j: u32) -> T {
    let h = T::from_u32(j).unwrap() * T::lit(0.5);
    T::PI().powf(h) / gamma(h + T::one())
}

/// Binomial coefficient as a float.
pub fn binomial<T: Real>(n: u32, k: u32) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut acc = T::one();
    for i in 0..k {
        acc = acc * T::from_u32(n - i).unwrap() / T::from_u32(i + 1).unwrap();
    }
    acc
}

/// Flag coefficient [N j] = C(N,j) ω_N / (ω_{N−j} ω_j).
pub fn flag_coeff<T: Real>(n: u32, j: u32) -> Result<T> {
    if j > n {
        return Err(domain!("flag coefficient needs 0 <= j <= N, got N={n}, j={j}"));
    }
    if j == 0 || j == n {
        return Ok(T::one());
    }
    Ok(binomial::<T>(n, j) * ball_volume::<T>(n) / (ball_volume::<T>(n - j) * ball_volume::<T>(j)))
}

/// The C-function of a stable index a in (0,2): 1/(Γ(1−a) cos(πa/2)), 2/π at a = 1.
pub fn stable_c<T: Real>(a: T) -> T {
    if (a - T::one()).abs() < T::lit(1e-9) {
        return T::lit(2.0) / T::PI();
    }
    T::one() / (gamma(T::one() - a) * (T::PI() * a * T::lit(0.5)).cos())
}

/// Constants attached to a stable index α in (0,2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableConstants<T> {
    pub alpha: T,
    /// C_α
    pub c_alpha: T,
    /// 2^{α/2} Γ(1+α/2)
    pub b_alpha: T,
    /// cos(πα/4)^{2/α}
    pub sigma_alpha: T,
    /// C_{α/2} σ_α^{α/2}; the tail constant of the positive α/2-stable mixing variable.
    pub tail_const: T,
}

/// Builds [`StableConstants`] for `alpha` in (0,2).
pub fn stable_constants<T: Real>(alpha: T) -> Result<StableConstants<T>> {
    if !(alpha > T::zero() && alpha < T::lit(2.0)) {
        return Err(domain!("stable index must lie in (0,2), got {alpha}"));
    }
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let c_alpha = stable_c(alpha);
    let b_alpha = two.powf(alpha * half) * gamma(T::one() + alpha * half);
    let sigma_alpha = (T::PI() * alpha / T::lit(4.0)).cos().powf(two / alpha);
    let tail_const = stable_c(alpha * half) * sigma_alpha.powf(alpha * half);
    Ok(StableConstants { alpha, c_alpha, b_alpha, sigma_alpha, tail_const })
}
