//! Closed-form statistical SINR and rate of one user.
//!
//! For a real receiver vector `u` and powers `q` the SINR of user `k` is
//!
//! ```text
//!                     q_k (Gamma_k . u)^2
//! -------------------------------------------------------------------
//! sum_{k'!=k} q_k' g_kk' (Delta_kk' . u)^2 + u' (sum_k' q_k' D_kk') u + u' R_k u / rho
//! ```
//!
//! with `g_kk' = |phi_k^H phi_k'|^2`. Every term is an `O(M)` dot product.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chanstats::ChannelStats;
use crate::error::{Error, Result};

/// The four pieces of the SINR ratio, all in units of `u' R_k u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrTerms {
    pub signal: f64,
    /// Coherent interference from users sharing the pilot of `k`.
    pub contamination: f64,
    /// `u' (sum_k' q_k' D_kk') u`, beamforming uncertainty plus non-coherent interference.
    pub uncertainty: f64,
    pub noise: f64,
}

impl SinrTerms {
    pub fn sinr(&self) -> f64 {
        self.signal / (self.contamination + self.uncertainty + self.noise)
    }
}

pub fn sinr_terms(stats: &ChannelStats, q: &[f64], u: &[f64], rho: f64, k: usize) -> SinrTerms {
    let m_aps = stats.num_aps();
    let users = stats.num_users();
    debug_assert_eq!(u.len(), m_aps);
    debug_assert_eq!(q.len(), users);

    let mut coherent = 0.0;
    let mut uncertainty = 0.0;
    let mut noise = 0.0;
    for (m, &um) in u.iter().enumerate() {
        let g = stats.gamma[(m, k)];
        let load: f64 = (0..users).map(|o| q[o] * stats.beta[(m, o)]).sum();
        coherent += um * g;
        uncertainty += um * um * g * load;
        noise += um * um * g;
    }

    let mut contamination = 0.0;
    for o in (0..users).filter(|&o| o != k) {
        let overlap = stats.gram2[(k, o)];
        if overlap == 0.0 || q[o] == 0.0 {
            continue;
        }
        let proj: f64 = (0..m_aps).map(|m| u[m] * stats.delta_entry(m, k, o)).sum();
        contamination += q[o] * overlap * proj * proj;
    }

    SinrTerms {
        signal: q[k] * coherent * coherent,
        contamination,
        uncertainty,
        noise: noise / rho,
    }
}

/// Linear SINR of user `k`. Panics if `k` is out of range.
pub fn sinr_k(stats: &ChannelStats, q: &[f64], u: &[f64], rho: f64, k: usize) -> f64 {
    sinr_terms(stats, q, u, rho, k).sinr()
}

/// Achievable rate in bits/s/Hz.
pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// Receiver filters and powers for all users, with the resulting SINRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// M x K, column `k` is the unit-norm filter of user `k`.
    pub filters: DMatrix<f64>,
    pub powers: Vec<f64>,
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
}

impl Solution {
    pub fn evaluate(
        stats: &ChannelStats,
        filters: DMatrix<f64>,
        powers: Vec<f64>,
        rho: f64,
    ) -> Result<Self> {
        if filters.shape() != stats.beta.shape() || powers.len() != stats.num_users() {
            return Err(Error::Parameter(format!(
                "filters {:?} / powers {} do not match {:?}",
                filters.shape(),
                powers.len(),
                stats.beta.shape()
            )));
        }
        let sinr: Vec<f64> = (0..stats.num_users())
            .map(|k| sinr_k(stats, &powers, filters.column(k).as_slice(), rho, k))
            .collect();
        let rate = sinr.iter().map(|&s| rate(s)).collect();
        Ok(Self {
            filters,
            powers,
            sinr,
            rate,
        })
    }

    pub fn min_sinr(&self) -> f64 {
        self.sinr.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_rate(&self) -> f64 {
        rate(self.min_sinr())
    }
}

/// Minimum SINR over users for filters `u` (M x K) and powers `q`.
pub fn min_sinr(stats: &ChannelStats, filters: &DMatrix<f64>, q: &[f64], rho: f64) -> f64 {
    (0..stats.num_users())
        .map(|k| sinr_k(stats, q, filters.column(k).as_slice(), rho, k))
        .fold(f64::INFINITY, f64::min)
}
