//! Executable minimax lower-bound certificate.
//!
//! The certificate chain mirrors the classical Fano argument:
//!
//! 1. a Gilbert–Varshamov packing of sign vectors `{−1,+1}^M` with at least
//!    `exp(M/8)` elements and pairwise disagreement on at least `M/4`
//!    coordinates (the doubled-L¹ convention `‖ι−ι′‖₁ = 2Σ𝕀 ≥ M/2` reads as
//!    a disagreement count of `M/4`, which is the bound the separation
//!    estimate actually uses);
//! 2. a hypothesis family of slope functions supported on modes `M+1..2M`,
//!    `L_C^{1/2} β_i = Σ_k M^{−1/2} μ_k^θ ι^{(i)}_{k−M} φ_k`, each satisfying
//!    the source condition with `‖γ_i‖ = 1`;
//! 3. the Gaussian KL identity
//!    `D_kl(P_1‖P_2) = ‖L_C^{1/2}(β_1−β_2)‖² / (2σ²)`;
//! 4. the Fano probability bound `1 − (N·R + log 2)/log L` at separation
//!    radius `r`.
//!
//! Everything an instantiated family claims is re-verified numerically, not
//! trusted from the closed forms.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Largest codeword length handled by the explicit packing constructions.
/// The certificate path evaluates larger `M` analytically.
pub const MAX_PACKING_BITS: usize = 64;

/// How to search for a packing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackingStrategy {
    /// Exhaustive lexicographic scan with greedy pruning; the result is a
    /// maximal packing. Limited to `M ≤ 16`.
    BruteForce,
    /// Random insertion with rejection until the target size is reached.
    Greedy,
}

/// A set of sign vectors in `{−1,+1}^M` (bit set = +1) with a guaranteed
/// pairwise disagreement count.
#[derive(Debug, Clone)]
pub struct PackingSet {
    pub m: usize,
    pub min_disagreement: usize,
    pub codewords: Vec<u64>,
}

impl PackingSet {
    /// Number of disagreeing coordinates between two codewords.
    pub fn disagreement(a: u64, b: u64) -> u32 {
        (a ^ b).count_ones()
    }

    /// Required size `exp(M/8)`.
    pub fn required_size(m: usize) -> f64 {
        (m as f64 / 8.0).exp()
    }

    /// Re-check both invariants: pairwise disagreement and cardinality.
    /// Covariant under a global sign flip of all codewords.
    pub fn verify(&self) -> bool {
        if (self.codewords.len() as f64) < Self::required_size(self.m) {
            return false;
        }
        for (i, &a) in self.codewords.iter().enumerate() {
            for &b in &self.codewords[i + 1..] {
                if Self::disagreement(a, b) < self.min_disagreement as u32 {
                    return false;
                }
            }
        }
        true
    }

    /// Sign vector of codeword `i` as ±1 entries.
    pub fn signs(&self, i: usize) -> Vec<f64> {
        (0..self.m)
            .map(|j| if self.codewords[i] >> j & 1 == 1 { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Construct a packing with the binding disagreement threshold `⌈M/4⌉`.
pub fn gv_packing(m: usize, strategy: PackingStrategy, seed: u64) -> Result<PackingSet> {
    packing_with_min_disagreement(m, m.div_ceil(4), strategy, seed)
}

/// Construct a packing at an explicit disagreement threshold.
pub fn packing_with_min_disagreement(
    m: usize,
    min_disagreement: usize,
    strategy: PackingStrategy,
    seed: u64,
) -> Result<PackingSet> {
    if m < 8 {
        return Err(Error::invalid(format!("codeword length must be at least 8, got {m}")));
    }
    if m > MAX_PACKING_BITS {
        return Err(Error::invalid(format!(
            "explicit packings are limited to {MAX_PACKING_BITS} bits, got {m}"
        )));
    }
    let need = PackingSet::required_size(m);
    let codewords = match strategy {
        PackingStrategy::BruteForce => {
            if m > 16 {
                return Err(Error::invalid(
                    "brute-force packing is limited to 16 bits; use the greedy strategy",
                ));
            }
            let mut selected: Vec<u64> = Vec::new();
            for cand in 0u64..(1u64 << m) {
                if selected
                    .iter()
                    .all(|&s| PackingSet::disagreement(s, cand) >= min_disagreement as u32)
                {
                    selected.push(cand);
                }
            }
            selected
        }
        PackingStrategy::Greedy => {
            let mut rng = stream(seed, &[tag::PACKING, m as u64]);
            let mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
            let target = need.ceil() as usize;
            let mut selected: Vec<u64> = Vec::new();
            let budget = 1_000_000u64;
            let mut proposals = 0u64;
            while selected.len() < target {
                if proposals >= budget {
                    return Err(Error::PackingNotFound(budget));
                }
                proposals += 1;
                let cand = rng.gen::<u64>() & mask;
                if selected
                    .iter()
                    .all(|&s| PackingSet::disagreement(s, cand) >= min_disagreement as u32)
                {
                    selected.push(cand);
                }
            }
            selected
        }
    };
    let set = PackingSet {
        m,
        min_disagreement,
        codewords,
    };
    if !set.verify() {
        return Err(Error::PackingNotFound(set.codewords.len() as u64));
    }
    Ok(set)
}

/// Hypothesis family of the lower-bound construction, in the diagonal frame.
#[derive(Debug, Clone)]
pub struct HypothesisFamily {
    /// Block length M; the betas load modes M+1..2M.
    pub m: usize,
    pub theta: f64,
    pub sigma: f64,
    /// Basis coefficients of each slope function.
    pub betas: Vec<DVector<f64>>,
    /// Separation radius: half the minimum pairwise `‖L_C^{1/2}(βᵢ−βⱼ)‖`.
    pub r: f64,
    /// KL radius: maximum pairwise `D_kl`.
    pub kl_radius: f64,
}

impl HypothesisFamily {
    /// Numerically re-verify both defining invariants against the
    /// covariance spectrum.
    pub fn verify(&self, lam: &[f64]) -> Result<bool> {
        for (i, bi) in self.betas.iter().enumerate() {
            for bj in &self.betas[i + 1..] {
                let dist = covariance_distance(bi, bj, lam)?;
                if dist < 2.0 * self.r - 1e-12 {
                    return Ok(false);
                }
                let kl = kl_gaussian(bi, bj, self.sigma, lam)?;
                if kl > self.kl_radius + 1e-12 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// `‖L_C^{1/2}(β₁ − β₂)‖` in the diagonal frame.
pub fn covariance_distance(b1: &DVector<f64>, b2: &DVector<f64>, lam: &[f64]) -> Result<f64> {
    if b1.len() != b2.len() || b1.len() != lam.len() {
        return Err(Error::invalid("coefficient lengths differ"));
    }
    Ok(lam
        .iter()
        .zip(b1.iter().zip(b2.iter()))
        .map(|(&l, (&a, &b))| l * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Gaussian KL divergence between the joint laws induced by two slopes:
/// `D_kl(P₁‖P₂) = ‖L_C^{1/2}(β₁−β₂)‖² / (2σ²)`.
pub fn kl_gaussian(b1: &DVector<f64>, b2: &DVector<f64>, sigma: f64, lam: &[f64]) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    let d = covariance_distance(b1, b2, lam)?;
    Ok(d * d / (2.0 * sigma * sigma))
}

/// Build the hypothesis family from a packing: each `β_i` has basis
/// coefficient `M^{−1/2} μ_k^θ ι^{(i)}_{k−M} / √λ_k` on modes `M < k ≤ 2M`.
/// Requires the spectrum to retain at least `2M` positive eigenvalues.
pub fn build_hypotheses(
    packing: &PackingSet,
    theta: f64,
    sigma: f64,
    mu: &[f64],
    lam: &[f64],
) -> Result<HypothesisFamily> {
    let m = packing.m;
    if mu.len() < 2 * m || lam.len() < 2 * m {
        return Err(Error::invalid(format!(
            "need at least {} retained eigenvalues, have {}",
            2 * m,
            mu.len().min(lam.len())
        )));
    }
    if mu[2 * m - 1] <= 0.0 || lam[2 * m - 1] <= 0.0 {
        return Err(Error::invalid("spectrum vanishes before mode 2M"));
    }
    if !(theta > 0.0 && theta <= 0.5) {
        return Err(Error::invalid("theta must lie in (0, 1/2]"));
    }
    let dim = mu.len();
    let scale = 1.0 / (m as f64).sqrt();
    let mut betas = Vec::with_capacity(packing.codewords.len());
    for i in 0..packing.codewords.len() {
        let signs = packing.signs(i);
        let mut b = DVector::zeros(dim);
        for j in 0..m {
            let k = m + j; // zero-based mode index for mode number M+j+1
            b[k] = scale * mu[k].powf(theta) * signs[j] / lam[k].sqrt();
        }
        betas.push(b);
    }
    // Separation and KL radii from the actual pairwise distances.
    let mut min_dist = f64::INFINITY;
    let mut max_kl = 0.0f64;
    for (i, bi) in betas.iter().enumerate() {
        for bj in &betas[i + 1..] {
            let d = covariance_distance(bi, bj, &lam[..dim])?;
            min_dist = min_dist.min(d);
            max_kl = max_kl.max(kl_gaussian(bi, bj, sigma, &lam[..dim])?);
        }
    }
    Ok(HypothesisFamily {
        m,
        theta,
        sigma,
        betas,
        r: min_dist / 2.0,
        kl_radius: max_kl,
    })
}

/// Fano probability bound `max(0, 1 − (N·R + log 2)/log L)` with the
/// hypothesis count supplied in log space (`L` grows like `exp(M/8)`).
pub fn fano_certificate_log(log_l: f64, kl_radius: f64, n: u64) -> Result<f64> {
    if log_l < (2.0f64).ln() - 1e-12 {
        return Err(Error::invalid("need at least 2 hypotheses"));
    }
    if kl_radius < 0.0 {
        return Err(Error::invalid("KL radius must be nonnegative"));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let value = 1.0 - (n as f64 * kl_radius + (2.0f64).ln()) / log_l;
    Ok(value.clamp(0.0, 1.0))
}

/// Fano probability bound with an explicit hypothesis count `L ≥ 2`.
pub fn fano_certificate(l: f64, kl_radius: f64, n: u64) -> Result<f64> {
    if l < 2.0 {
        return Err(Error::invalid(format!("need at least 2 hypotheses, got {l}")));
    }
    fano_certificate_log(l.ln(), kl_radius, n)
}

/// Concrete decay constant for `μ_k ≍ k^{−1/p}`: the largest valid `c` with
/// `c k^{−1/p} ≤ μ_k` over the inspected range.
pub fn estimate_decay_constant(mu: &[f64], p: f64, k_max: usize) -> f64 {
    mu.iter()
        .take(k_max)
        .enumerate()
        .map(|(i, &v)| v * ((i + 1) as f64).powf(1.0 / p))
        .fold(f64::INFINITY, f64::min)
}

/// Full certificate evaluated in the asymptotic regime
/// `M = ⌈a N^{p/(p+2θ)}⌉`, `L = ⌈e^{M/8}⌉`,
/// `r = ½ c^θ 2^{−θ/p} M^{−θ/p}`, `R = 2 σ^{−2} c^{−2θ} M^{−2θ/p}`.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    #[serde(rename = "M")]
    pub m: u64,
    /// Hypothesis count `⌈e^{M/8}⌉` (may round to infinity for huge `M`;
    /// the bound itself is evaluated in log space).
    #[serde(rename = "L")]
    pub l: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub kl_radius: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub theta: f64,
    pub p: f64,
    pub sigma: f64,
    pub probability_bound: f64,
    pub risk_level: f64,
}

pub fn minimax_certificate(
    a: f64,
    n: u64,
    theta: f64,
    p: f64,
    sigma: f64,
    mu: &[f64],
) -> Result<Certificate> {
    if a <= 8.0 {
        return Err(Error::invalid("scale constant a must exceed 8"));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let m = (a * (n as f64).powf(p / (p + 2.0 * theta))).ceil() as u64;
    let c = estimate_decay_constant(mu, p, (2 * m).min(mu.len() as u64) as usize);
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid("spectrum does not fit a positive decay constant"));
    }
    let l = (m as f64 / 8.0).exp().ceil();
    let log_l = if l.is_finite() { l.ln() } else { m as f64 / 8.0 };
    let m_pow = (m as f64).powf(-2.0 * theta / p);
    let r_sq = 0.25 * c.powf(2.0 * theta) * (2.0f64).powf(-2.0 * theta / p) * m_pow;
    let kl_radius = 2.0 / (sigma * sigma * c.powf(2.0 * theta)) * m_pow;
    let probability_bound = fano_certificate_log(log_l, kl_radius, n)?;
    Ok(Certificate {
        m,
        l,
        r: r_sq.sqrt(),
        kl_radius,
        n,
        theta,
        p,
        sigma,
        probability_bound,
        risk_level: r_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brute_force_packings_meet_gv_bound() {
        for m in [8usize, 12, 16] {
            let set = gv_packing(m, PackingStrategy::BruteForce, 0).unwrap();
            assert!(set.verify());
            assert_eq!(set.min_disagreement, m.div_ceil(4));
            assert!(
                set.codewords.len() as f64 >= PackingSet::required_size(m),
                "M={m}: {} codewords",
                set.codewords.len()
            );
        }
    }

    #[test]
    fn stronger_threshold_still_reaches_required_size_at_m8() {
        // Even at disagreement ≥ M/2 = 4 the exhaustive scan finds at least
        // ⌈e⌉ = 3 codewords (it finds 16).
        let set = packing_with_min_disagreement(8, 4, PackingStrategy::BruteForce, 0).unwrap();
        assert!(set.codewords.len() >= 3);
        assert!(set.verify());
    }

    #[test]
    fn small_m_rejected() {
        assert!(matches!(
            gv_packing(7, PackingStrategy::BruteForce, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn brute_force_limited_to_16_bits() {
        assert!(gv_packing(17, PackingStrategy::BruteForce, 0).is_err());
    }

    #[test]
    fn greedy_reaches_target() {
        let set = gv_packing(24, PackingStrategy::Greedy, 3).unwrap();
        assert!(set.verify());
        assert!(set.codewords.len() as f64 >= PackingSet::required_size(24));
    }

    #[test]
    fn validator_is_sign_flip_covariant() {
        let set = gv_packing(10, PackingStrategy::BruteForce, 0).unwrap();
        let mask = (1u64 << 10) - 1;
        let flipped = PackingSet {
            m: set.m,
            min_disagreement: set.min_disagreement,
            codewords: set.codewords.iter().map(|&c| c ^ mask).collect(),
        };
        assert_eq!(set.verify(), flipped.verify());
    }

    #[test]
    fn duplicate_codewords_fail_verification() {
        let set = PackingSet {
            m: 8,
            min_disagreement: 2,
            codewords: vec![0b10110100, 0b10110100, 0b01001011],
        };
        assert!(!set.verify());
    }

    fn power_spectrum(len: usize, inv_p: f64) -> (Vec<f64>, Vec<f64>) {
        // μ_k = k^{−1/p} with the symmetric split λ_k = k^{−1/(2p)}.
        let mu: Vec<f64> = (1..=len).map(|k| (k as f64).powf(-inv_p)).collect();
        let lam: Vec<f64> = (1..=len).map(|k| (k as f64).powf(-inv_p / 2.0)).collect();
        (mu, lam)
    }

    #[test]
    fn hypothesis_distance_identity() {
        // Two fully disagreeing codewords:
        // ‖L_C^{1/2}(β₁−β₂)‖² = (4/M) Σ_{k=M+1}^{2M} μ_k^{2θ}.
        let m = 8;
        let packing = PackingSet {
            m,
            min_disagreement: m,
            codewords: vec![0u64, 0xffu64],
        };
        let (mu, lam) = power_spectrum(64, 2.0);
        let fam = build_hypotheses(&packing, 0.5, 0.5, &mu, &lam).unwrap();
        let d = covariance_distance(&fam.betas[0], &fam.betas[1], &lam).unwrap();
        let expect: f64 = (m..2 * m).map(|k| 4.0 / m as f64 * mu[k]).sum();
        assert_abs_diff_eq!(d * d, expect, epsilon = 1e-12);
    }

    #[test]
    fn hypothesis_family_invariants_verified_numerically() {
        let packing = gv_packing(8, PackingStrategy::BruteForce, 0).unwrap();
        let (mu, lam) = power_spectrum(64, 2.0);
        let fam = build_hypotheses(&packing, 0.5, 0.5, &mu, &lam).unwrap();
        assert!(fam.verify(&lam).unwrap());
        // ‖γ_i‖ = 1 by construction: γ coefficients are M^{−1/2} μ^θ-free.
        for b in &fam.betas {
            let gamma_norm_sq: f64 = (0..mu.len())
                .map(|k| {
                    let coef = b[k] * lam[k].sqrt() / mu[k].powf(0.5);
                    coef * coef
                })
                .sum();
            assert_abs_diff_eq!(gamma_norm_sq, 1.0, epsilon = 1e-10);
        }
        // Guaranteed radius: r² ≥ ¼ c^{2θ} 2^{−2θ/p} M^{−2θ/p}.
        let c = estimate_decay_constant(&mu, 0.5, 16);
        let floor = 0.25 * c * (2.0f64 * 8.0).powf(-2.0 * 0.5 / 0.5);
        assert!(
            fam.r * fam.r >= floor * (1.0 - 1e-12),
            "r² = {} below floor {floor}",
            fam.r * fam.r
        );
    }

    #[test]
    fn insufficient_spectrum_rejected() {
        let packing = gv_packing(8, PackingStrategy::BruteForce, 0).unwrap();
        let (mu, lam) = power_spectrum(10, 2.0);
        assert!(build_hypotheses(&packing, 0.5, 0.5, &mu, &lam).is_err());
    }

    #[test]
    fn kl_gaussian_cases() {
        let lam = vec![1.0, 0.5];
        let b1 = DVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(kl_gaussian(&b1, &b1, 1.0, &lam).unwrap(), 0.0);
        // Single-mode difference of 1 with λ₁ = 1 and σ = 1: KL = 1/2.
        let b2 = DVector::from_vec(vec![-0.7, -0.2]);
        assert_abs_diff_eq!(kl_gaussian(&b1, &b2, 1.0, &lam).unwrap(), 0.5, epsilon = 1e-14);
        assert!(kl_gaussian(&b1, &b2, 0.0, &lam).is_err());
    }

    #[test]
    fn fano_basic_values() {
        // R = 0, L = 3: 1 − log2/log3.
        let v = fano_certificate(3.0, 0.0, 10).unwrap();
        assert_abs_diff_eq!(v, 1.0 - 2.0f64.ln() / 3.0f64.ln(), epsilon = 1e-12);
        // Huge N·R clamps at zero.
        assert_eq!(fano_certificate(3.0, 10.0, 1_000_000).unwrap(), 0.0);
        assert!(fano_certificate(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn fano_monotone_and_bounded() {
        let mut prev = 1.0;
        for n in [10u64, 100, 1000, 10000] {
            let v = fano_certificate(100.0, 1e-4, n).unwrap();
            assert!((0.0..=1.0).contains(&v));
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        let mut prev = 1.0;
        for r in [0.0, 1e-5, 1e-4, 1e-3] {
            let v = fano_certificate(100.0, r, 100).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn minimax_certificate_converges_to_closed_form() {
        // With μ_k = k⁻² exactly, c = 1 and the certificate approaches
        // 1 − a^{−(2θ+p)/p}·16/(σ² c^{2θ}) − 8·log2/M for growing N.
        let mu: Vec<f64> = (1..=200).map(|k| (k as f64).powi(-2)).collect();
        let (theta, p, sigma, a) = (0.5, 0.5, 0.5, 256.0);
        let mut last_gap = f64::INFINITY;
        for &n in &[1u64 << 10, 1 << 14, 1 << 18] {
            let cert = minimax_certificate(a, n, theta, p, sigma, &mu).unwrap();
            let limit = 1.0 - a.powf(-(2.0 * theta + p) / p) * 16.0 / (sigma * sigma)
                - 8.0 * (2.0f64).ln() / cert.m as f64;
            let gap = (cert.probability_bound - limit).abs();
            assert!(gap <= last_gap + 1e-12, "gap {gap} grew from {last_gap}");
            last_gap = gap;
        }
        assert!(last_gap <= 5e-3, "final gap {last_gap}");
    }

    #[test]
    fn certificate_improves_with_scale_constant() {
        let mu: Vec<f64> = (1..=200).map(|k| (k as f64).powi(-2)).collect();
        let mut prev = 0.0;
        for &a in &[16.0, 64.0, 256.0] {
            let cert = minimax_certificate(a, 4096, 0.5, 0.5, 0.5, &mu).unwrap();
            assert!(
                cert.probability_bound >= prev - 1e-9,
                "certificate decreased at a={a}"
            );
            prev = cert.probability_bound;
        }
    }

    #[test]
    fn certificate_json_schema() {
        let mu: Vec<f64> = (1..=64).map(|k| (k as f64).powi(-2)).collect();
        let cert = minimax_certificate(16.0, 256, 0.5, 0.5, 0.5, &mu).unwrap();
        let json = serde_json::to_value(&cert).unwrap();
        for key in ["M", "L", "r", "R", "N", "theta", "p", "sigma", "probability_bound", "risk_level"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn decay_constant_of_exact_power_law() {
        let mu: Vec<f64> = (1..=50).map(|k| (k as f64).powi(-2)).collect();
        assert_abs_diff_eq!(estimate_decay_constant(&mu, 0.5, 32), 1.0, epsilon = 1e-12);
    }
}
