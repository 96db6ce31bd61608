//! Alternating max-min optimization of receiver filters and powers.
//!
//! Each iteration computes the best filters for the current powers, then
//! the max-min powers for those filters. The previous powers stay feasible
//! for the power step and the filter step cannot lower any SINR, so the
//! minimum SINR never decreases along the trace.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chanstats::ChannelStats;
use crate::error::Result;
use crate::power::{extract_coefficients, maxmin_power, maxmin_power_from, PowerOptions};
use crate::receiver::optimal_filters;
use crate::sinr::{min_sinr, rate, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when `|t_i - t_{i-1}| <= eps_converge * t_{i-1}`.
    pub eps_converge: f64,
    /// Power step settings. The bisection tolerance is kept well below
    /// `eps_converge` so bisection noise cannot masquerade as progress.
    pub power: PowerOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            eps_converge: 1e-4,
            power: PowerOptions {
                tol: 1e-6,
                ..PowerOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub min_sinr: f64,
    pub min_rate: f64,
    pub powers: Vec<f64>,
    pub sinr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// Entry 0 is the starting powers with their best filters; entry `i` is
    /// the state after the `i`-th power update.
    pub entries: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    /// Power-step feasibility tests that hit the fixed-point iteration cap.
    pub cap_hits: usize,
}

impl IterationTrace {
    pub fn min_sinr_sequence(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.min_sinr).collect()
    }

    /// `iteration,min_rate` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,min_rate\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{}", e.iteration, e.min_rate);
        }
        out
    }
}

fn entry(
    stats: &ChannelStats,
    filters: &DMatrix<f64>,
    powers: &[f64],
    rho: f64,
    iteration: usize,
) -> TraceEntry {
    let sinr: Vec<f64> = (0..stats.num_users())
        .map(|k| crate::sinr::sinr_k(stats, powers, filters.column(k).as_slice(), rho, k))
        .collect();
    let t = sinr.iter().copied().fold(f64::INFINITY, f64::min);
    TraceEntry {
        iteration,
        min_sinr: t,
        min_rate: rate(t),
        powers: powers.to_vec(),
        sinr,
    }
}

/// Joint max-min design of filters and powers, starting from full power.
pub fn solve_p1(
    stats: &ChannelStats,
    p_max: &[f64],
    rho: f64,
    opts: &SolverOptions,
) -> Result<(Solution, IterationTrace)> {
    solve_p1_from(stats, p_max, rho, opts, p_max.to_vec())
}

/// As [`solve_p1`] from caller-chosen initial powers.
pub fn solve_p1_from(
    stats: &ChannelStats,
    p_max: &[f64],
    rho: f64,
    opts: &SolverOptions,
    initial_powers: Vec<f64>,
) -> Result<(Solution, IterationTrace)> {
    let mut q = initial_powers;
    let mut filters = optimal_filters(stats, &q, rho)?;
    let mut entries = vec![entry(stats, &filters, &q, rho, 0)];
    let mut converged = false;
    let mut cap_hits = 0;
    let mut iterations = 0;

    for i in 1..=opts.max_iters {
        iterations = i;
        if i > 1 {
            filters = optimal_filters(stats, &q, rho)?;
        }
        let coeff = extract_coefficients(stats, &filters, rho)?;
        let alloc = maxmin_power_from(&coeff, p_max, &opts.power, Some(&q))?;
        cap_hits += alloc.cap_hits;
        q = alloc.powers;

        let prev = entries.last().map(|e| e.min_sinr).unwrap_or(0.0);
        let current = entry(stats, &filters, &q, rho, i);
        let change = (current.min_sinr - prev).abs();
        entries.push(current);
        if change <= opts.eps_converge * prev {
            converged = true;
            break;
        }
    }

    let solution = Solution::evaluate(stats, filters, q, rho)?;
    Ok((
        solution,
        IterationTrace {
            entries,
            iterations,
            converged,
            cap_hits,
        },
    ))
}

/// Reference scheme: equal combining weights `1/sqrt(M)` and max-min powers.
pub fn solve_baseline(
    stats: &ChannelStats,
    p_max: &[f64],
    rho: f64,
    power: &PowerOptions,
) -> Result<Solution> {
    let m = stats.num_aps();
    let filters = DMatrix::from_element(m, stats.num_users(), 1.0 / (m as f64).sqrt());
    let coeff = extract_coefficients(stats, &filters, rho)?;
    let alloc = maxmin_power(&coeff, p_max, power)?;
    debug_assert!(alloc.min_sinr <= min_sinr(stats, &filters, &alloc.powers, rho) * (1.0 + 1e-9));
    Solution::evaluate(stats, filters, alloc.powers, rho)
}
