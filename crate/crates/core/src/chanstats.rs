//! Second-order statistics of the MMSE channel estimates.
//!
//! Everything the closed-form SINR needs is a diagonal matrix or a vector
//! indexed by AP, so nothing here is stored as a dense `M x M` matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pilots::PilotBook;

/// `c_mk = sqrt(tau p_p) beta_mk / (tau p_p sum_k' beta_mk' |phi_k^H phi_k'|^2 + 1)`.
pub fn compute_c(
    beta: &DMatrix<f64>,
    gram2: &DMatrix<f64>,
    tau: usize,
    pilot_snr: f64,
) -> DMatrix<f64> {
    let tp = tau as f64 * pilot_snr;
    let (m, k) = beta.shape();
    DMatrix::from_fn(m, k, |i, j| {
        let contamination: f64 = (0..k).map(|l| beta[(i, l)] * gram2[(j, l)]).sum();
        tp.sqrt() * beta[(i, j)] / (tp * contamination + 1.0)
    })
}

/// `gamma_mk = sqrt(tau p_p) beta_mk c_mk`, the variance of the estimate.
pub fn compute_gamma(
    beta: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tau: usize,
    pilot_snr: f64,
) -> DMatrix<f64> {
    let s = (tau as f64 * pilot_snr).sqrt();
    beta.zip_map(c, |b, c| s * b * c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub tau: usize,
    pub pilot_snr: f64,
    /// M x K large-scale gains.
    pub beta: DMatrix<f64>,
    /// K x K pilot overlaps `|phi_k^H phi_k'|^2`.
    pub gram2: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

/// The per-user vectors and diagonals entering the SINR of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMatrices {
    /// `Gamma_k[m] = gamma_mk`.
    pub gamma: Vec<f64>,
    /// `delta[k'][m] = gamma_mk beta_mk' / beta_mk`.
    pub delta: Vec<Vec<f64>>,
    /// Diagonal of `D_kk'`: `d_diag[k'][m] = beta_mk' gamma_mk`.
    pub d_diag: Vec<Vec<f64>>,
    /// Diagonal of `R_k`, equal to `gamma`.
    pub r_diag: Vec<f64>,
}

impl ChannelStats {
    pub fn new(beta: DMatrix<f64>, pilots: &PilotBook, pilot_snr: f64) -> Result<Self> {
        Self::from_parts(beta, pilots.gram2.clone(), pilots.tau, pilot_snr)
    }

    pub fn from_parts(
        beta: DMatrix<f64>,
        gram2: DMatrix<f64>,
        tau: usize,
        pilot_snr: f64,
    ) -> Result<Self> {
        if beta.ncols() != gram2.nrows() || !gram2.is_square() {
            return Err(Error::Parameter(format!(
                "beta is {:?} but pilot gram is {:?}",
                beta.shape(),
                gram2.shape()
            )));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::Parameter(
                "large-scale gains must be positive and finite".into(),
            ));
        }
        if !(pilot_snr > 0.0) || tau == 0 {
            return Err(Error::Parameter(
                "pilot SNR and length must be positive".into(),
            ));
        }
        let c = compute_c(&beta, &gram2, tau, pilot_snr);
        let gamma = compute_gamma(&beta, &c, tau, pilot_snr);
        Ok(Self {
            tau,
            pilot_snr,
            beta,
            gram2,
            c,
            gamma,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.beta.ncols()
    }

    pub fn check_user(&self, k: usize) -> Result<()> {
        if k >= self.num_users() {
            return Err(Error::Index {
                index: k,
                len: self.num_users(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn delta_entry(&self, m: usize, k: usize, other: usize) -> f64 {
        self.gamma[(m, k)] * self.beta[(m, other)] / self.beta[(m, k)]
    }

    /// Diagonal of `sum_k' q_k' D_kk'`, i.e. `gamma_mk sum_k' q_k' beta_mk'`.
    pub fn weighted_d_diag(&self, q: &[f64], k: usize) -> Vec<f64> {
        (0..self.num_aps())
            .map(|m| {
                let load: f64 = self.beta.row(m).iter().zip(q).map(|(b, q)| b * q).sum();
                self.gamma[(m, k)] * load
            })
            .collect()
    }

    pub fn user_matrices(&self, k: usize) -> Result<UserMatrices> {
        self.check_user(k)?;
        let (m, kk) = self.beta.shape();
        let gamma: Vec<f64> = self.gamma.column(k).iter().copied().collect();
        let delta = (0..kk)
            .map(|o| (0..m).map(|i| self.delta_entry(i, k, o)).collect())
            .collect();
        let d_diag = (0..kk)
            .map(|o| {
                (0..m)
                    .map(|i| self.beta[(i, o)] * self.gamma[(i, k)])
                    .collect()
            })
            .collect();
        Ok(UserMatrices {
            r_diag: gamma.clone(),
            gamma,
            delta,
            d_diag,
        })
    }
}
