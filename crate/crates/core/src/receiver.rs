//! Receiver filter design for fixed powers.
//!
//! The numerator of the SINR Rayleigh quotient is rank one, `A_k = q_k Γ_k Γ_kᵀ`,
//! so the top generalized eigenvector of `(A_k, B_k)` is `B_k⁻¹ Γ_k` and the
//! eigenvalue is `q_k Γ_kᵀ B_k⁻¹ Γ_k`. No iterative eigensolver is needed.

use nalgebra::{DMatrix, DVector};

use crate::chanstats::ChannelStats;
use crate::error::{Error, Result};

/// `B_k` as a diagonal plus weighted rank-one terms `w v vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMatrix {
    pub diag: Vec<f64>,
    pub rank_one: Vec<(f64, Vec<f64>)>,
}

impl InterferenceMatrix {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut b = DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag));
        for (w, v) in &self.rank_one {
            let v = DVector::from_column_slice(v);
            b.ger(*w, &v, &v, 1.0);
        }
        b
    }

    /// `uᵀ B u`.
    pub fn quad(&self, u: &[f64]) -> f64 {
        let d: f64 = self.diag.iter().zip(u).map(|(d, x)| d * x * x).sum();
        let r: f64 = self
            .rank_one
            .iter()
            .map(|(w, v)| {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                w * p * p
            })
            .sum();
        d + r
    }

    /// Solves `B x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.rank_one.is_empty() {
            return Ok(rhs.iter().zip(&self.diag).map(|(r, d)| r / d).collect());
        }
        // Factor a rescaled copy; the entries are often far below 1.
        let scale = self.diag.iter().copied().fold(0.0, f64::max);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Numerical(format!(
                "bad interference diagonal scale {scale}"
            )));
        }
        let b = self.to_dense() / scale;
        let chol = b.cholesky().ok_or_else(|| {
            Error::Numerical("interference matrix is not positive definite".into())
        })?;
        let x = chol.solve(&DVector::from_column_slice(rhs)) / scale;
        Ok(x.as_slice().to_vec())
    }
}

pub fn build_b(stats: &ChannelStats, q: &[f64], rho: f64, k: usize) -> InterferenceMatrix {
    let m_aps = stats.num_aps();
    let users = stats.num_users();
    let mut diag = stats.weighted_d_diag(q, k);
    for (m, d) in diag.iter_mut().enumerate() {
        *d += stats.gamma[(m, k)] / rho;
    }
    let rank_one = (0..users)
        .filter(|&o| o != k)
        .filter_map(|o| {
            let w = q[o] * stats.gram2[(k, o)];
            (w > 0.0).then(|| (w, (0..m_aps).map(|m| stats.delta_entry(m, k, o)).collect()))
        })
        .collect();
    InterferenceMatrix { diag, rank_one }
}

/// Unit-norm SINR-maximizing filter of user `k`, signed so that `Γ_kᵀ u ≥ 0`.
///
/// With `q_k = 0` the objective is identically zero; the returned filter is
/// then the limit of the maximizer as `q_k -> 0+`.
pub fn optimal_filter(stats: &ChannelStats, q: &[f64], rho: f64, k: usize) -> Result<Vec<f64>> {
    stats.check_user(k)?;
    let gamma: Vec<f64> = stats.gamma.column(k).iter().copied().collect();
    let mut x = build_b(stats, q, rho, k).solve(&gamma)?;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numerical(format!(
            "filter of user {k} has norm {norm}"
        )));
    }
    let sign = if x.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    x.iter_mut().for_each(|v| *v *= sign / norm);
    Ok(x)
}

/// All users' filters as the columns of an M x K matrix.
pub fn optimal_filters(stats: &ChannelStats, q: &[f64], rho: f64) -> Result<DMatrix<f64>> {
    let mut u = DMatrix::zeros(stats.num_aps(), stats.num_users());
    for k in 0..stats.num_users() {
        let col = optimal_filter(stats, q, rho, k)?;
        u.column_mut(k).copy_from_slice(&col);
    }
    Ok(u)
}

/// `q_k Γ_kᵀ B_k⁻¹ Γ_k`, the SINR attained by [`optimal_filter`].
pub fn max_generalized_eigenvalue(
    stats: &ChannelStats,
    q: &[f64],
    rho: f64,
    k: usize,
) -> Result<f64> {
    stats.check_user(k)?;
    let gamma: Vec<f64> = stats.gamma.column(k).iter().copied().collect();
    let x = build_b(stats, q, rho, k).solve(&gamma)?;
    Ok(q[k] * x.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::{assign_pilots, PilotMode};
    use crate::sinr::sinr_k;
    use crate::topology::{generate_topology, SimParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, m: usize, k: usize, tau: usize, mode: PilotMode) -> (ChannelStats, f64) {
        let params = SimParams {
            num_aps: m,
            num_users: k,
            tau,
            side_km: 0.4,
            ..SimParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = generate_topology(&params, &mut rng).unwrap();
        let book = assign_pilots(k, tau, mode, &mut rng).unwrap();
        (
            ChannelStats::new(topo.beta, &book, params.pilot_snr).unwrap(),
            params.rho,
        )
    }

    #[test]
    fn two_by_two_hand_solve() {
        let b = InterferenceMatrix {
            diag: vec![1.0, 4.0],
            rank_one: vec![],
        };
        let x = b.solve(&[1.0, 1.0]).unwrap();
        let n = (x[0] * x[0] + x[1] * x[1]).sqrt();
        assert!((x[0] / n - 0.970_142_500_145_332).abs() < 1e-12);
        assert!((x[1] / n - 0.242_535_625_036_333).abs() < 1e-12);
    }

    #[test]
    fn structure_of_b() {
        let (stats, rho) = instance(1, 6, 3, 3, PilotMode::Orthogonal);
        assert!(build_b(&stats, &[1.0; 3], rho, 0).rank_one.is_empty());

        let (stats, rho) = instance(2, 6, 3, 1, PilotMode::Random);
        let b = build_b(&stats, &[0.0; 3], rho, 1);
        assert!(b.rank_one.is_empty());
        for m in 0..6 {
            assert_eq!(b.diag[m], stats.gamma[(m, 1)] / rho);
        }
    }

    #[test]
    fn b_matches_dense_summation() {
        let (stats, rho) = instance(3, 7, 4, 2, PilotMode::Random);
        let q = [0.3, 1.0, 0.6, 0.9];
        for k in 0..4 {
            let um = stats.user_matrices(k).unwrap();
            let mut dense = DMatrix::from_diagonal(&DVector::from_column_slice(&um.r_diag)) / rho;
            for o in 0..4 {
                if o != k {
                    let d = DVector::from_column_slice(&um.delta[o]);
                    dense += &d * d.transpose() * (q[o] * stats.gram2[(k, o)]);
                }
                dense += DMatrix::from_diagonal(&DVector::from_column_slice(&um.d_diag[o])) * q[o];
            }
            let built = build_b(&stats, &q, rho, k).to_dense();
            let scale = dense.amax();
            assert!((built - &dense).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn single_ap_filter_is_one() {
        let (stats, rho) = instance(4, 1, 3, 1, PilotMode::Random);
        for k in 0..3 {
            assert_eq!(
                optimal_filter(&stats, &[1.0; 3], rho, k).unwrap(),
                vec![1.0]
            );
        }
    }

    #[test]
    fn filter_properties() {
        for seed in 0..20 {
            let (stats, rho) = instance(seed, 10, 5, 2, PilotMode::Random);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            for k in 0..5 {
                let u = optimal_filter(&stats, &q, rho, k).unwrap();
                let n: f64 = u.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
                let proj: f64 = u
                    .iter()
                    .zip(stats.gamma.column(k).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!(proj > 0.0);
                let s = sinr_k(&stats, &q, &u, rho, k);
                let lam = max_generalized_eigenvalue(&stats, &q, rho, k).unwrap();
                assert!((s / lam - 1.0).abs() < 1e-9);
                for _ in 0..200 {
                    let mut p: Vec<f64> = u
                        .iter()
                        .map(|x| x + 0.05 * (rng.random::<f64>() - 0.5))
                        .collect();
                    let pn = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    p.iter_mut().for_each(|x| *x /= pn);
                    assert!(sinr_k(&stats, &q, &p, rho, k) <= s * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn zero_own_power_still_yields_a_filter() {
        let (stats, rho) = instance(5, 8, 3, 1, PilotMode::Random);
        let u = optimal_filter(&stats, &[0.0, 1.0, 1.0], rho, 0).unwrap();
        assert!((u.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn index_error() {
        let (stats, rho) = instance(6, 3, 2, 2, PilotMode::Orthogonal);
        assert!(matches!(
            optimal_filter(&stats, &[1.0; 2], rho, 2),
            Err(Error::Index { .. })
        ));
    }
}
