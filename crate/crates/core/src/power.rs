//! Max-min power allocation for fixed receiver filters.
//!
//! With filters fixed, every SINR is linear-fractional in the powers:
//!
//! ```text
//! SINR_k(q) = q_k / (sum_{k'!=k} a_kk' q_k' + sum_k' b_kk' q_k' + c_k)
//! ```
//!
//! For a target `t` the constraints `SINR_k >= t` define a standard
//! interference function, so the fixed-point iteration started at zero
//! climbs monotonically to the smallest feasible power vector, or proves
//! infeasibility by crossing the power limit. Bisection on `t` then finds
//! the max-min value.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chanstats::ChannelStats;
use crate::error::{Error, Result};
use crate::sinr::sinr_terms;

/// Relative slack when comparing a power against its limit.
const LIMIT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrCoefficients {
    /// Pilot-contamination coupling, zero diagonal.
    pub a: DMatrix<f64>,
    /// Uncertainty and non-coherent coupling, including the self term `b_kk`.
    pub b: DMatrix<f64>,
    pub c: Vec<f64>,
}

impl SinrCoefficients {
    pub fn num_users(&self) -> usize {
        self.c.len()
    }

    /// Interference-plus-noise seen by user `k` in units of its own signal.
    pub fn interference(&self, q: &[f64], k: usize) -> f64 {
        let mut s = self.c[k];
        for (o, &qo) in q.iter().enumerate() {
            s += (self.a[(k, o)] + self.b[(k, o)]) * qo;
        }
        s
    }

    pub fn sinr(&self, q: &[f64]) -> Vec<f64> {
        (0..self.num_users())
            .map(|k| q[k] / self.interference(q, k))
            .collect()
    }

    pub fn min_sinr(&self, q: &[f64]) -> f64 {
        self.sinr(q).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `min_k p_k / (b_kk p_k + c_k)`: no user can beat its SINR with every
    /// other user silent and itself at full power.
    pub fn upper_bound(&self, p_max: &[f64]) -> f64 {
        (0..self.num_users())
            .map(|k| p_max[k] / (self.b[(k, k)] * p_max[k] + self.c[k]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Normalizes the SINR of every user by its coherent signal power.
pub fn extract_coefficients(
    stats: &ChannelStats,
    filters: &DMatrix<f64>,
    rho: f64,
) -> Result<SinrCoefficients> {
    let users = stats.num_users();
    if filters.shape() != stats.beta.shape() {
        return Err(Error::Parameter(format!(
            "filters are {:?}, expected {:?}",
            filters.shape(),
            stats.beta.shape()
        )));
    }
    let mut a = DMatrix::zeros(users, users);
    let mut b = DMatrix::zeros(users, users);
    let mut c = vec![0.0; users];
    for k in 0..users {
        let u = filters.column(k);
        let u = u.as_slice();
        let signal: f64 = u
            .iter()
            .enumerate()
            .map(|(m, x)| x * stats.gamma[(m, k)])
            .sum::<f64>()
            .powi(2);
        if !(signal > 0.0) {
            return Err(Error::DegenerateFilter(k));
        }
        for o in 0..users {
            // Unit power on user `o` alone isolates its coefficient.
            let mut e = vec![0.0; users];
            e[o] = 1.0;
            let t = sinr_terms(stats, &e, u, rho, k);
            a[(k, o)] = t.contamination / signal;
            b[(k, o)] = t.uncertainty / signal;
        }
        let noise: f64 = u
            .iter()
            .enumerate()
            .map(|(m, x)| x * x * stats.gamma[(m, k)])
            .sum();
        c[k] = noise / (rho * signal);
    }
    Ok(SinrCoefficients { a, b, c })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    /// Bisection stops once the bracket is below `tol` times the feasible end.
    pub tol: f64,
    /// Relative step size at which the fixed-point iteration is converged.
    pub fixed_point_tol: f64,
    pub fixed_point_max_iters: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            fixed_point_tol: 1e-10,
            fixed_point_max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// Smallest power vector meeting the target.
    Feasible(Vec<f64>),
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCheck {
    pub outcome: Feasibility,
    pub iterations: usize,
    /// The iteration cap was hit before convergence; reported as infeasible.
    pub cap_hit: bool,
}

pub fn feasible(coeff: &SinrCoefficients, t: f64, p_max: &[f64]) -> Feasibility {
    feasible_with(coeff, t, p_max, &PowerOptions::default()).outcome
}

/// Minimal-power feasibility test for `SINR_k >= t` on the box `[0, p_max]`.
///
/// Any feasible `q` dominates every iterate started from zero, so an iterate
/// above the limit is a certificate of infeasibility.
pub fn feasible_with(
    coeff: &SinrCoefficients,
    t: f64,
    p_max: &[f64],
    opts: &PowerOptions,
) -> FeasibilityCheck {
    let users = coeff.num_users();
    let infeasible = |iterations, cap_hit| FeasibilityCheck {
        outcome: Feasibility::Infeasible,
        iterations,
        cap_hit,
    };
    if !(t > 0.0) {
        return FeasibilityCheck {
            outcome: Feasibility::Feasible(vec![0.0; users]),
            iterations: 0,
            cap_hit: false,
        };
    }
    // The self term moves to the left: q_k (1 - t b_kk) >= t (rest + c_k).
    let mut gain = Vec::with_capacity(users);
    for k in 0..users {
        let margin = 1.0 - t * coeff.b[(k, k)];
        if margin <= 0.0 {
            return infeasible(0, false);
        }
        gain.push(t / margin);
    }

    let mut q = vec![0.0; users];
    let mut next = vec![0.0; users];
    for it in 1..=opts.fixed_point_max_iters {
        let mut converged = true;
        for k in 0..users {
            let mut s = coeff.c[k];
            for o in (0..users).filter(|&o| o != k) {
                s += (coeff.a[(k, o)] + coeff.b[(k, o)]) * q[o];
            }
            let v = gain[k] * s;
            if v > p_max[k] * (1.0 + LIMIT_SLACK) {
                return infeasible(it, false);
            }
            if (v - q[k]).abs() > opts.fixed_point_tol * v {
                converged = false;
            }
            next[k] = v;
        }
        std::mem::swap(&mut q, &mut next);
        if converged {
            for (qk, pk) in q.iter_mut().zip(p_max) {
                *qk = qk.min(*pk);
            }
            return FeasibilityCheck {
                outcome: Feasibility::Feasible(q),
                iterations: it,
                cap_hit: false,
            };
        }
    }
    infeasible(opts.fixed_point_max_iters, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub powers: Vec<f64>,
    /// Minimum SINR attained by `powers`.
    pub min_sinr: f64,
    /// Largest target proven feasible by bisection.
    pub target: f64,
    pub upper_bound: f64,
    pub bisection_steps: usize,
    /// Feasibility tests that stopped at the iteration cap.
    pub cap_hits: usize,
}

/// Max-min SINR powers on `[0, p_max]`.
pub fn maxmin_power(
    coeff: &SinrCoefficients,
    p_max: &[f64],
    opts: &PowerOptions,
) -> Result<PowerAllocation> {
    maxmin_power_from(coeff, p_max, opts, None)
}

/// As [`maxmin_power`], starting the bisection from a known feasible point.
///
/// The result is never worse than `start`.
pub fn maxmin_power_from(
    coeff: &SinrCoefficients,
    p_max: &[f64],
    opts: &PowerOptions,
    start: Option<&[f64]>,
) -> Result<PowerAllocation> {
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!(
            "bisection tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let users = coeff.num_users();
    if p_max.len() != users || p_max.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Parameter(
            "power limits must be positive, one per user".into(),
        ));
    }

    let hi_bound = coeff.upper_bound(p_max);
    let mut hi = hi_bound;
    let (mut lo, mut witness) = match start {
        Some(q) => (coeff.min_sinr(q).min(hi), q.to_vec()),
        None => (0.0, vec![0.0; users]),
    };
    let mut steps = 0;
    let mut cap_hits = 0;

    let mut probe = |t: f64, steps: &mut usize| {
        *steps += 1;
        let check = feasible_with(coeff, t, p_max, opts);
        if check.cap_hit {
            cap_hits += 1;
        }
        check.outcome
    };

    if let Feasibility::Feasible(q) = probe(hi, &mut steps) {
        lo = hi;
        witness = q;
    } else {
        while hi - lo > opts.tol * lo || lo == 0.0 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || steps > 2000 {
                break;
            }
            match probe(mid, &mut steps) {
                Feasibility::Feasible(q) => {
                    lo = mid;
                    witness = q;
                }
                Feasibility::Infeasible => hi = mid,
            }
        }
    }

    let mut min_sinr = coeff.min_sinr(&witness);
    if let Some(q) = start {
        let s = coeff.min_sinr(q);
        if s > min_sinr {
            witness = q.to_vec();
            min_sinr = s;
        }
    }
    Ok(PowerAllocation {
        powers: witness,
        min_sinr,
        target: lo,
        upper_bound: hi_bound,
        bisection_steps: steps,
        cap_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::{assign_pilots, PilotMode};
    use crate::receiver::optimal_filters;
    use crate::sinr::sinr_k;
    use crate::topology::{generate_topology, SimParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> SinrCoefficients {
        SinrCoefficients {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, 2.0),
            c: vec![2.0],
        }
    }

    fn random_coeff(rng: &mut ChaCha8Rng, k: usize) -> SinrCoefficients {
        let a = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                0.0
            } else {
                0.3 * rng.random::<f64>()
            }
        });
        let b = DMatrix::from_fn(k, k, |_, _| 0.2 * rng.random::<f64>());
        let c = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
        SinrCoefficients { a, b, c }
    }

    #[test]
    fn scalar_closed_form() {
        let co = scalar();
        for t in [0.05, 0.1, 0.2, 0.25] {
            match feasible(&co, t, &[1.0]) {
                Feasibility::Feasible(q) => {
                    let want = 2.0 * t / (1.0 - 2.0 * t);
                    assert!((q[0] - want).abs() < 1e-12, "t={t}: {} vs {want}", q[0]);
                }
                Feasibility::Infeasible => panic!("t={t} should be feasible"),
            }
        }
        assert_eq!(feasible(&co, 0.2500001, &[1.0]), Feasibility::Infeasible);
        assert_eq!(feasible(&co, 0.6, &[1.0]), Feasibility::Infeasible);

        let sol = maxmin_power(&co, &[1.0], &PowerOptions::default()).unwrap();
        assert_eq!(sol.min_sinr, 0.25);
        assert_eq!(sol.powers, vec![1.0]);
    }

    #[test]
    fn tiny_target_needs_tiny_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let co = random_coeff(&mut rng, 4);
        match feasible(&co, 1e-9, &[1.0; 4]) {
            Feasibility::Feasible(q) => assert!(q.iter().all(|&x| x < 1e-8)),
            Feasibility::Infeasible => panic!(),
        }
    }

    #[test]
    fn symmetric_pair_equalizes() {
        let co = SinrCoefficients {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.4, 0.0]),
            b: DMatrix::from_element(2, 2, 0.1),
            c: vec![0.5, 0.5],
        };
        let sol = maxmin_power(&co, &[1.0, 1.0], &PowerOptions::default()).unwrap();
        assert!((sol.powers[0] - sol.powers[1]).abs() < 1e-9);
        let s = co.sinr(&sol.powers);
        assert!((s[0] - s[1]).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_options() {
        let opts = PowerOptions {
            tol: 0.0,
            ..PowerOptions::default()
        };
        assert!(maxmin_power(&scalar(), &[1.0], &opts).is_err());
    }

    #[test]
    fn coefficients_reproduce_closed_form_sinr() {
        let params = SimParams {
            num_aps: 12,
            num_users: 5,
            tau: 2,
            side_km: 0.4,
            ..SimParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let topo = generate_topology(&params, &mut rng).unwrap();
        let book = assign_pilots(5, 2, PilotMode::Random, &mut rng).unwrap();
        let stats = ChannelStats::new(topo.beta, &book, params.pilot_snr).unwrap();
        let u = optimal_filters(&stats, &[1.0; 5], params.rho).unwrap();
        let co = extract_coefficients(&stats, &u, params.rho).unwrap();
        for _ in 0..20 {
            let q: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 1e-3).collect();
            let via = co.sinr(&q);
            for k in 0..5 {
                let direct = sinr_k(&stats, &q, u.column(k).as_slice(), params.rho, k);
                assert!((via[k] / direct - 1.0).abs() < 1e-10);
            }
        }
        assert!(co.a.iter().chain(co.b.iter()).all(|&x| x >= 0.0));
        assert!(co.c.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn degenerate_filter_detected() {
        let stats = ChannelStats::from_parts(
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::identity(1, 1),
            1,
            1.0,
        )
        .unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        assert!(matches!(
            extract_coefficients(&stats, &u, 1.0),
            Err(Error::DegenerateFilter(0))
        ));
    }

    #[test]
    fn witness_is_tight_and_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let co = random_coeff(&mut rng, 4);
            let p = [1.0; 4];
            let sol = maxmin_power(&co, &p, &PowerOptions::default()).unwrap();
            let s = co.sinr(&sol.powers);
            assert!(s.iter().all(|&x| x >= sol.target * (1.0 - 1e-8)));
            assert!(sol.target <= sol.upper_bound);
            // lowering any power by 1% breaks some constraint at the target
            for k in 0..4 {
                let mut q = sol.powers.clone();
                q[k] *= 0.99;
                assert!(co.min_sinr(&q) < sol.target);
            }
        }
    }

    proptest! {
        #[test]
        fn feasibility_is_monotone(seed in 0u64..500, f1 in 0.01f64..1.2, f2 in 0.01f64..1.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let co = random_coeff(&mut rng, 3);
            let p = [1.0, 0.5, 2.0];
            let ub = co.upper_bound(&p);
            let (lo, hi) = if f1 < f2 { (f1 * ub, f2 * ub) } else { (f2 * ub, f1 * ub) };
            if matches!(feasible(&co, hi, &p), Feasibility::Feasible(_)) {
                prop_assert!(matches!(feasible(&co, lo, &p), Feasibility::Feasible(_)));
            }
        }

        #[test]
        fn warm_start_never_worse(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let co = random_coeff(&mut rng, 3);
            let start: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let sol = maxmin_power_from(&co, &[1.0; 3], &PowerOptions::default(), Some(&start)).unwrap();
            prop_assert!(sol.min_sinr >= co.min_sinr(&start));
            prop_assert!(sol.powers.iter().all(|&q| (0.0..=1.0).contains(&q)));
        }
    }
}
