//! Monte Carlo check of the closed-form SINR.
//!
//! Draws small-scale fading, pilot noise, data noise and symbols, forms the
//! MMSE estimates exactly as the APs would, and splits the combined signal
//! `r_k = sum_m u_mk conj(ghat_mk) y_m` into desired signal, beamforming
//! uncertainty, inter-user interference and noise. Sample moments of those
//! pieces are compared one by one with their closed forms, so a wrong
//! factor in any single term shows up in isolation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanstats::ChannelStats;
use crate::error::{Error, Result};
use crate::pilots::PilotBook;
use crate::sinr::sinr_k;

/// Below this many draws a report is flagged as low confidence.
pub const MIN_CONFIDENT_DRAWS: usize = 10_000;

const CHUNK: usize = 4096;

fn cn<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One coherence block worth of random quantities.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    /// M x K small-scale fading, CN(0, 1).
    pub h: DMatrix<Complex64>,
    /// M x K channels `sqrt(beta) h`.
    pub g: DMatrix<Complex64>,
    /// M x tau pilot-phase noise.
    pub pilot_noise: DMatrix<Complex64>,
    /// M x K MMSE estimates.
    pub ghat: DMatrix<Complex64>,
    /// Data-phase noise, one sample per AP.
    pub data_noise: Vec<Complex64>,
    /// Unit-modulus data symbols.
    pub symbols: Vec<Complex64>,
}

pub fn draw_channel<R: Rng + ?Sized>(
    stats: &ChannelStats,
    pilots: &PilotBook,
    rng: &mut R,
) -> Result<ChannelDraw> {
    if pilots.num_users() != stats.num_users() || pilots.tau != stats.tau {
        return Err(Error::Parameter(
            "pilot book does not match channel statistics".into(),
        ));
    }
    let phi = pilots.phi();
    let overlaps = phi.adjoint() * &phi;
    Ok(draw_with(stats, &phi, &overlaps, rng))
}

fn draw_with<R: Rng + ?Sized>(
    stats: &ChannelStats,
    phi: &DMatrix<Complex64>,
    overlaps: &DMatrix<Complex64>,
    rng: &mut R,
) -> ChannelDraw {
    let (m, k) = stats.beta.shape();
    let tau = phi.nrows();
    let amp = (stats.tau as f64 * stats.pilot_snr).sqrt();

    let h = DMatrix::from_fn(m, k, |_, _| cn(rng));
    let g = DMatrix::from_fn(m, k, |i, j| h[(i, j)] * stats.beta[(i, j)].sqrt());
    let pilot_noise = DMatrix::from_fn(m, tau, |_, _| cn(rng));

    let mut ghat = DMatrix::zeros(m, k);
    for i in 0..m {
        for j in 0..k {
            let mut y = Complex64::new(0.0, 0.0);
            for l in 0..k {
                let ov = overlaps[(j, l)];
                if ov != Complex64::new(0.0, 0.0) {
                    y += g[(i, l)] * ov * amp;
                }
            }
            for t in 0..tau {
                y += phi[(t, j)].conj() * pilot_noise[(i, t)];
            }
            ghat[(i, j)] = y * stats.c[(i, j)];
        }
    }

    let data_noise = (0..m).map(|_| cn(rng)).collect();
    let symbols = (0..k)
        .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
        .collect();
    ChannelDraw {
        h,
        g,
        pilot_noise,
        ghat,
        data_noise,
        symbols,
    }
}

/// `r_k` and its four components for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub received: Complex64,
    /// Mean effective gain `DS_k`, deterministic.
    pub desired: Complex64,
    pub uncertainty: Complex64,
    /// `IUI_kk'` per user, zero at `k' = k`.
    pub interference: Vec<Complex64>,
    pub noise: Complex64,
}

impl Decomposition {
    pub fn reconstruct(&self, symbols: &[Complex64], k: usize) -> Complex64 {
        let mut r = (self.desired + self.uncertainty) * symbols[k] + self.noise;
        for (o, iui) in self.interference.iter().enumerate() {
            if o != k {
                r += iui * symbols[o];
            }
        }
        r
    }
}

/// Combined signal at the CPU for user `k` and its split into terms.
pub fn decompose(
    draw: &ChannelDraw,
    stats: &ChannelStats,
    filters: &DMatrix<f64>,
    q: &[f64],
    rho: f64,
    k: usize,
) -> Decomposition {
    let (m, users) = stats.beta.shape();
    let sr = rho.sqrt();
    let u = filters.column(k);

    let mut received = Complex64::new(0.0, 0.0);
    let mut noise = Complex64::new(0.0, 0.0);
    let mut cross = vec![Complex64::new(0.0, 0.0); users];
    for i in 0..m {
        let w = draw.ghat[(i, k)].conj() * u[i];
        let mut y = draw.data_noise[i];
        for o in 0..users {
            y += draw.g[(i, o)] * (q[o].sqrt() * sr) * draw.symbols[o];
            cross[o] += w * draw.g[(i, o)];
        }
        received += w * y;
        noise += w * draw.data_noise[i];
    }
    let mean_gain: f64 = (0..m).map(|i| u[i] * stats.gamma[(i, k)]).sum();
    let desired = Complex64::new(sr * q[k].sqrt() * mean_gain, 0.0);
    let uncertainty = cross[k] * (sr * q[k].sqrt()) - desired;
    let interference = (0..users)
        .map(|o| {
            if o == k {
                Complex64::new(0.0, 0.0)
            } else {
                cross[o] * (sr * q[o].sqrt())
            }
        })
        .collect();
    Decomposition {
        received,
        desired,
        uncertainty,
        interference,
        noise,
    }
}

/// Running sums of the per-draw term values.
#[derive(Debug, Clone, PartialEq)]
pub struct TermAccumulator {
    pub draws: usize,
    /// Per user `k`: sum of `sqrt(rho q_k) sum_m u ghat* g_k`.
    gain_sum: Vec<Complex64>,
    gain_sq_sum: Vec<f64>,
    /// K x K: sums of `IUI_kk'` and `|IUI_kk'|^2`.
    iui_sum: DMatrix<Complex64>,
    iui_sq_sum: DMatrix<f64>,
    noise_sq_sum: Vec<f64>,
}

impl TermAccumulator {
    pub fn new(users: usize) -> Self {
        Self {
            draws: 0,
            gain_sum: vec![Complex64::new(0.0, 0.0); users],
            gain_sq_sum: vec![0.0; users],
            iui_sum: DMatrix::zeros(users, users),
            iui_sq_sum: DMatrix::zeros(users, users),
            noise_sq_sum: vec![0.0; users],
        }
    }

    pub fn add(
        &mut self,
        draw: &ChannelDraw,
        stats: &ChannelStats,
        filters: &DMatrix<f64>,
        q: &[f64],
        rho: f64,
    ) {
        let users = stats.num_users();
        for k in 0..users {
            let d = decompose(draw, stats, filters, q, rho, k);
            let x = d.desired + d.uncertainty;
            self.gain_sum[k] += x;
            self.gain_sq_sum[k] += x.norm_sqr();
            for o in (0..users).filter(|&o| o != k) {
                self.iui_sum[(k, o)] += d.interference[o];
                self.iui_sq_sum[(k, o)] += d.interference[o].norm_sqr();
            }
            self.noise_sq_sum[k] += d.noise.norm_sqr();
        }
        self.draws += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.draws += other.draws;
        for k in 0..self.gain_sum.len() {
            self.gain_sum[k] += other.gain_sum[k];
            self.gain_sq_sum[k] += other.gain_sq_sum[k];
            self.noise_sq_sum[k] += other.noise_sq_sum[k];
        }
        self.iui_sum += &other.iui_sum;
        self.iui_sq_sum += &other.iui_sq_sum;
    }

    pub fn report(
        &self,
        stats: &ChannelStats,
        filters: &DMatrix<f64>,
        q: &[f64],
        rho: f64,
    ) -> Result<OracleReport> {
        if self.draws == 0 {
            return Err(Error::Empty);
        }
        let n = self.draws as f64;
        let closed = closed_form_terms(stats, filters, q, rho);
        let users = (0..stats.num_users())
            .map(|k| {
                let mean_gain = self.gain_sum[k] / n;
                let ds2 = mean_gain.norm_sqr();
                let bu2 = self.gain_sq_sum[k] / n - ds2;
                let mut iui2 = 0.0;
                let mut iui_coherent = 0.0;
                for o in (0..stats.num_users()).filter(|&o| o != k) {
                    iui2 += self.iui_sq_sum[(k, o)] / n;
                    iui_coherent += (self.iui_sum[(k, o)] / n).norm_sqr();
                }
                let tn2 = self.noise_sq_sum[k] / n;
                let c = &closed[k];
                let closed_sinr = sinr_k(stats, q, filters.column(k).as_slice(), rho, k);
                UserTerms {
                    user: k,
                    ds2: TermComparison::new(ds2, c.ds2),
                    bu2: TermComparison::new(bu2, c.bu2),
                    iui2: TermComparison::new(iui2, c.iui2),
                    iui_coherent: TermComparison::new(iui_coherent, c.iui_coherent),
                    tn2: TermComparison::new(tn2, c.tn2),
                    sinr: TermComparison::new(ds2 / (bu2 + iui2 + tn2), closed_sinr),
                    uncertainty_mean: (mean_gain.re - c.ds2.sqrt()).hypot(mean_gain.im),
                }
            })
            .collect();
        Ok(OracleReport {
            draws: self.draws,
            low_confidence: self.draws < MIN_CONFIDENT_DRAWS,
            users,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermComparison {
    pub empirical: f64,
    pub closed_form: f64,
    /// `|empirical - closed| / |closed|`, or the absolute gap when the closed form is 0.
    pub rel_error: f64,
}

impl TermComparison {
    pub fn new(empirical: f64, closed_form: f64) -> Self {
        let gap = (empirical - closed_form).abs();
        let rel_error = if closed_form != 0.0 {
            gap / closed_form.abs()
        } else {
            gap
        };
        Self {
            empirical,
            closed_form,
            rel_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTerms {
    pub user: usize,
    pub ds2: TermComparison,
    pub bu2: TermComparison,
    /// Sum over interferers of `E|IUI_kk'|^2`.
    pub iui2: TermComparison,
    /// The pilot-contamination part of `iui2`: squared means of `IUI_kk'`.
    pub iui_coherent: TermComparison,
    pub tn2: TermComparison,
    pub sinr: TermComparison,
    /// `|sample mean of the effective gain - DS_k|`, should vanish.
    pub uncertainty_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub draws: usize,
    pub low_confidence: bool,
    pub users: Vec<UserTerms>,
}

impl OracleReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Largest relative error over users among the four SINR terms.
    pub fn worst_term_error(&self) -> f64 {
        self.users
            .iter()
            .flat_map(|u| {
                [
                    u.ds2.rel_error,
                    u.bu2.rel_error,
                    u.iui2.rel_error,
                    u.tn2.rel_error,
                ]
            })
            .fold(0.0, f64::max)
    }

    pub fn worst_sinr_error(&self) -> f64 {
        self.users
            .iter()
            .map(|u| u.sinr.rel_error)
            .fold(0.0, f64::max)
    }
}

/// Closed-form term values for user `k`, same units as the empirical ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedTerms {
    pub ds2: f64,
    pub bu2: f64,
    pub iui2: f64,
    pub iui_coherent: f64,
    pub tn2: f64,
}

pub fn closed_form_terms(
    stats: &ChannelStats,
    filters: &DMatrix<f64>,
    q: &[f64],
    rho: f64,
) -> Vec<ClosedTerms> {
    let (m, users) = stats.beta.shape();
    (0..users)
        .map(|k| {
            let u = filters.column(k);
            let coherent: f64 = (0..m).map(|i| u[i] * stats.gamma[(i, k)]).sum();
            let bu: f64 = (0..m)
                .map(|i| u[i] * u[i] * stats.gamma[(i, k)] * stats.beta[(i, k)])
                .sum();
            let tn: f64 = (0..m).map(|i| u[i] * u[i] * stats.gamma[(i, k)]).sum();
            let mut iui2 = 0.0;
            let mut iui_coherent = 0.0;
            for o in (0..users).filter(|&o| o != k) {
                let spread: f64 = (0..m)
                    .map(|i| u[i] * u[i] * stats.beta[(i, o)] * stats.gamma[(i, k)])
                    .sum();
                let proj: f64 = (0..m).map(|i| u[i] * stats.delta_entry(i, k, o)).sum();
                let coh = rho * q[o] * stats.gram2[(k, o)] * proj * proj;
                iui2 += rho * q[o] * spread + coh;
                iui_coherent += coh;
            }
            ClosedTerms {
                ds2: rho * q[k] * coherent * coherent,
                bu2: rho * q[k] * bu,
                iui2,
                iui_coherent,
                tn2: tn,
            }
        })
        .collect()
}

/// Accumulates terms over an explicit sequence of draws.
pub fn empirical_terms<'a, I>(
    draws: I,
    stats: &ChannelStats,
    filters: &DMatrix<f64>,
    q: &[f64],
    rho: f64,
) -> Result<OracleReport>
where
    I: IntoIterator<Item = &'a ChannelDraw>,
{
    let mut acc = TermAccumulator::new(stats.num_users());
    for d in draws {
        acc.add(d, stats, filters, q, rho);
    }
    acc.report(stats, filters, q, rho)
}

/// Runs `draws` independent draws in parallel chunks, each chunk on its own
/// ChaCha stream of `seed`. The result does not depend on thread count.
pub fn run_oracle(
    stats: &ChannelStats,
    pilots: &PilotBook,
    filters: &DMatrix<f64>,
    q: &[f64],
    rho: f64,
    draws: usize,
    seed: u64,
) -> Result<OracleReport> {
    if pilots.num_users() != stats.num_users() || pilots.tau != stats.tau {
        return Err(Error::Parameter(
            "pilot book does not match channel statistics".into(),
        ));
    }
    if filters.shape() != stats.beta.shape() || q.len() != stats.num_users() {
        return Err(Error::Parameter(
            "filters or powers do not match channel statistics".into(),
        ));
    }
    let phi = pilots.phi();
    let overlaps = phi.adjoint() * &phi;
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<TermAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(draws - c * CHUNK);
            let mut acc = TermAccumulator::new(stats.num_users());
            for _ in 0..n {
                let d = draw_with(stats, &phi, &overlaps, &mut rng);
                acc.add(&d, stats, filters, q, rho);
            }
            acc
        })
        .collect();
    let mut total = TermAccumulator::new(stats.num_users());
    for p in &parts {
        total.merge(p);
    }
    total.report(stats, filters, q, rho)
}
