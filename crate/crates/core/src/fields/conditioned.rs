//! The Gaussian law of a harmonisable or concatenated field given its
//! arrivals and frequencies.

use serde::{Deserialize, Serialize};

use super::grid::Provenance;
use super::stable::{gamma_alpha, SeriesSkeleton};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedGaussianSpec {
    /// σ̃²
    pub sigma_tilde_sq: f64,
    /// λ̃_ij
    pub lambda_tilde: Vec<Vec<f64>>,
    pub gamma_alpha: f64,
}

impl ConditionedGaussianSpec {
    pub fn dim(&self) -> usize {
        self.lambda_tilde.len()
    }
}

/// σ̃² = γ_α² N′ Σ Γ_k^{-2/α}, λ̃_ij = γ_α² Σ_k Γ_k^{-2/α} Σ_ℓ ω_{kℓ}(i) ω_{kℓ}(j).
pub fn conditioned_from_skeleton(skel: &SeriesSkeleton, mu0: f64) -> Result<ConditionedGaussianSpec> {
    let ga = gamma_alpha(skel.alpha, mu0)?;
    let n = skel.omegas.first().map(|w| w.len()).unwrap_or(0);
    if n == 0 || skel.gammas.is_empty() {
        return Err(Error::Precondition("skeleton holds no arrivals or frequencies".into()));
    }
    let g2 = ga * ga;
    let p = -2.0 / skel.alpha;
    let mut s = 0.0;
    let mut lam = vec![vec![0.0; n]; n];
    for (k, &g) in skel.gammas.iter().enumerate() {
        let wgt = g.powf(p);
        s += wgt;
        for w in &skel.omegas[k * skel.n_prime..(k + 1) * skel.n_prime] {
            for i in 0..n {
                let wi = wgt * w[i];
                for j in 0..n {
                    lam[i][j] += wi * w[j];
                }
            }
        }
    }
    for row in lam.iter_mut() {
        for v in row.iter_mut() {
            *v *= g2;
        }
    }
    let sigma_tilde_sq = g2 * skel.n_prime as f64 * s;
    if !(sigma_tilde_sq > 0.0 && sigma_tilde_sq.is_finite()) {
        return Err(Error::Degenerate(format!("conditional variance {sigma_tilde_sq} is not positive")));
    }
    Ok(ConditionedGaussianSpec { sigma_tilde_sq, lambda_tilde: lam, gamma_alpha: ga })
}

/// Conditioned spec of the draw recorded in `provenance`.
pub fn conditioned_spec(provenance: &Provenance, mu0: f64) -> Result<ConditionedGaussianSpec> {
    conditioned_from_skeleton(&SeriesSkeleton::from_provenance(provenance)?, mu0)
}
