//! Batch experiments over random network realizations.
//!
//! Every realization gets its own seed derived from the master seed, and the
//! same topology is reused across all pilot setups of that realization.
//! Results are gathered in realization order, so output is identical for any
//! thread count.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanstats::ChannelStats;
use crate::error::{Error, Result};
use crate::maxmin::{solve_baseline, solve_p1, IterationTrace, SolverOptions};
use crate::oracle::{run_oracle, OracleReport};
use crate::pilots::{assign_pilots, PilotMode};
use crate::power::PowerOptions;
use crate::topology::{generate_topology, RadioBudget, SimParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Proposed,
    Baseline,
    Both,
}

impl Scheme {
    fn runs_proposed(self) -> bool {
        matches!(self, Scheme::Proposed | Scheme::Both)
    }

    fn runs_baseline(self) -> bool {
        matches!(self, Scheme::Baseline | Scheme::Both)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "baseline" => Ok(Scheme::Baseline),
            "both" => Ok(Scheme::Both),
            _ => Err(Error::Config(format!("unknown scheme {s:?}"))),
        }
    }
}

/// Pilot configuration of one curve: `orthogonal` or `random:<tau>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PilotSetup {
    Orthogonal,
    Random(usize),
}

impl PilotSetup {
    pub fn mode(self) -> PilotMode {
        match self {
            PilotSetup::Orthogonal => PilotMode::Orthogonal,
            PilotSetup::Random(_) => PilotMode::Random,
        }
    }

    pub fn tau(self, num_users: usize) -> usize {
        match self {
            PilotSetup::Orthogonal => num_users,
            PilotSetup::Random(t) => t,
        }
    }

    /// Filename-safe label.
    pub fn label(self) -> String {
        match self {
            PilotSetup::Orthogonal => "orthogonal".into(),
            PilotSetup::Random(t) => format!("random_tau{t}"),
        }
    }
}

impl fmt::Display for PilotSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PilotSetup::Orthogonal => write!(f, "orthogonal"),
            PilotSetup::Random(t) => write!(f, "random:{t}"),
        }
    }
}

impl FromStr for PilotSetup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "orthogonal" {
            return Ok(PilotSetup::Orthogonal);
        }
        let tau = s.strip_prefix("random:").unwrap_or(s);
        match tau.parse::<usize>() {
            Ok(t) if t > 0 => Ok(PilotSetup::Random(t)),
            _ => Err(Error::Config(format!(
                "bad pilot setup {s:?}, expected orthogonal or random:<tau>"
            ))),
        }
    }
}

impl TryFrom<String> for PilotSetup {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PilotSetup> for String {
    fn from(p: PilotSetup) -> Self {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub num_aps: usize,
    pub num_users: usize,
    pub side_km: f64,
    pub shadow_std_db: f64,
    pub p_max: f64,
    pub carrier_mhz: f64,
    pub ap_height_m: f64,
    pub user_height_m: f64,
    pub d0_m: f64,
    pub d1_m: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub temperature_k: f64,
    pub pilot_power_w: f64,
    pub data_power_w: f64,
    pub realizations: usize,
    pub scheme: Scheme,
    pub pilots: Vec<PilotSetup>,
    pub seed: u64,
    pub out_dir: String,
    pub trace: bool,
    pub max_iters: usize,
    pub eps_converge: f64,
    /// Draws per oracle run.
    pub oracle_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = SimParams::default();
        let b = RadioBudget::default();
        let s = SolverOptions::default();
        Self {
            num_aps: p.num_aps,
            num_users: p.num_users,
            side_km: p.side_km,
            shadow_std_db: p.shadow_std_db,
            p_max: p.p_max,
            carrier_mhz: p.carrier_mhz,
            ap_height_m: p.ap_height_m,
            user_height_m: p.user_height_m,
            d0_m: p.d0_m,
            d1_m: p.d1_m,
            bandwidth_hz: b.bandwidth_hz,
            noise_figure_db: b.noise_figure_db,
            temperature_k: b.temperature_k,
            pilot_power_w: b.pilot_power_w,
            data_power_w: b.data_power_w,
            realizations: 300,
            scheme: Scheme::Both,
            pilots: vec![
                PilotSetup::Orthogonal,
                PilotSetup::Random(10),
                PilotSetup::Random(5),
            ],
            seed: 1,
            out_dir: "results".into(),
            trace: false,
            max_iters: s.max_iters,
            eps_converge: s.eps_converge,
            oracle_draws: 100_000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn budget(&self) -> RadioBudget {
        RadioBudget {
            bandwidth_hz: self.bandwidth_hz,
            noise_figure_db: self.noise_figure_db,
            temperature_k: self.temperature_k,
            pilot_power_w: self.pilot_power_w,
            data_power_w: self.data_power_w,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            eps_converge: self.eps_converge,
            ..SolverOptions::default()
        }
    }

    pub fn sim_params(&self, setup: PilotSetup) -> Result<SimParams> {
        let (pilot_snr, rho) = self.budget().normalized()?;
        let p = SimParams {
            num_aps: self.num_aps,
            num_users: self.num_users,
            side_km: self.side_km,
            tau: setup.tau(self.num_users),
            shadow_std_db: self.shadow_std_db,
            rho,
            pilot_snr,
            p_max: self.p_max,
            carrier_mhz: self.carrier_mhz,
            ap_height_m: self.ap_height_m,
            user_height_m: self.user_height_m,
            d0_m: self.d0_m,
            d1_m: self.d1_m,
            seed: self.seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        if self.pilots.is_empty() {
            return Err(Error::Config("at least one pilot setup is required".into()));
        }
        if self.max_iters == 0 || !(self.eps_converge > 0.0) {
            return Err(Error::Config(
                "max_iters and eps_converge must be positive".into(),
            ));
        }
        for &s in &self.pilots {
            self.sim_params(s)?;
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent RNG for `(realization, stream)` under a master seed.
pub fn realization_rng(master: u64, realization: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(realization as u64)));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub rate: f64,
    pub probability: f64,
}

/// Empirical CDF: the `i`-th smallest value has probability `i / N`; equal
/// values collapse to one step.
pub fn cdf(rates: &[f64]) -> Result<Vec<CdfPoint>> {
    if rates.is_empty() {
        return Err(Error::Empty);
    }
    let mut sorted = rates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::with_capacity(sorted.len());
    for (i, &r) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.rate == r => last.probability = p,
            _ => out.push(CdfPoint {
                rate: r,
                probability: p,
            }),
        }
    }
    Ok(out)
}

/// Smallest rate whose CDF value reaches `p`.
pub fn quantile(cdf: &[CdfPoint], p: f64) -> Option<f64> {
    cdf.iter()
        .find(|c| c.probability >= p - 1e-12)
        .map(|c| c.rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub realization: usize,
    pub pilots: PilotSetup,
    pub proposed_rates: Option<Vec<f64>>,
    pub baseline_rates: Option<Vec<f64>>,
    pub iterations: Option<usize>,
    pub converged: bool,
    #[serde(skip)]
    pub trace: Option<IterationTrace>,
}

impl RealizationRecord {
    pub fn min_rate(rates: &Option<Vec<f64>>) -> Option<f64> {
        rates
            .as_ref()
            .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub scheme: Scheme,
    pub pilots: PilotSetup,
    pub cdf: Vec<CdfPoint>,
    pub median: f64,
    pub outage_5: f64,
    pub mean_min_rate: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupSummary {
    pub pilots: PilotSetup,
    pub realizations: usize,
    pub unconverged: usize,
    pub mean_iterations: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Proposed median over baseline median, when both ran.
    pub median_ratio: Option<f64>,
    /// Realizations where the proposed min-rate fell below the baseline's.
    pub dominance_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub curves: Vec<Curve>,
    pub setups: Vec<SetupSummary>,
    pub records: Vec<RealizationRecord>,
}

impl ExperimentResult {
    pub fn curve(&self, scheme: Scheme, pilots: PilotSetup) -> Option<&Curve> {
        self.curves
            .iter()
            .find(|c| c.scheme == scheme && c.pilots == pilots)
    }

    pub fn setup(&self, pilots: PilotSetup) -> Option<&SetupSummary> {
        self.setups.iter().find(|s| s.pilots == pilots)
    }
}

/// Dominance is judged with this relative slack on the min-rate.
const DOMINANCE_SLACK: f64 = 1e-9;

fn run_realization(config: &ExperimentConfig, r: usize) -> Result<Vec<RealizationRecord>> {
    let base_params = config.sim_params(config.pilots[0])?;
    let topo = generate_topology(&base_params, &mut realization_rng(config.seed, r, 0))?;
    let opts = config.solver_options();
    let mut out = Vec::with_capacity(config.pilots.len());
    for (i, &setup) in config.pilots.iter().enumerate() {
        let params = config.sim_params(setup)?;
        let mut rng = realization_rng(config.seed, r, 1 + i as u64);
        let book = assign_pilots(params.num_users, params.tau, setup.mode(), &mut rng)?;
        let stats = ChannelStats::new(topo.beta.clone(), &book, params.pilot_snr)?;
        let p_max = params.p_max_vec();

        let mut rec = RealizationRecord {
            realization: r,
            pilots: setup,
            proposed_rates: None,
            baseline_rates: None,
            iterations: None,
            converged: true,
            trace: None,
        };
        if config.scheme.runs_proposed() {
            let (sol, trace) = solve_p1(&stats, &p_max, params.rho, &opts)?;
            rec.proposed_rates = Some(sol.rate);
            rec.iterations = Some(trace.iterations);
            rec.converged = trace.converged;
            if config.trace {
                rec.trace = Some(trace);
            }
        }
        if config.scheme.runs_baseline() {
            let sol = solve_baseline(&stats, &p_max, params.rho, &PowerOptions::default())?;
            rec.baseline_rates = Some(sol.rate);
        }
        out.push(rec);
    }
    Ok(out)
}

fn build_curve(
    scheme: Scheme,
    pilots: PilotSetup,
    records: &[&RealizationRecord],
) -> Result<Curve> {
    let pick = |r: &RealizationRecord| match scheme {
        Scheme::Baseline => r.baseline_rates.clone(),
        _ => r.proposed_rates.clone(),
    };
    let rates: Vec<f64> = records.iter().filter_map(|r| pick(r)).flatten().collect();
    let mins: Vec<f64> = records
        .iter()
        .filter_map(|r| RealizationRecord::min_rate(&pick(r)))
        .collect();
    let table = cdf(&rates)?;
    Ok(Curve {
        scheme,
        pilots,
        median: quantile(&table, 0.5).unwrap_or(f64::NAN),
        outage_5: quantile(&table, 0.05).unwrap_or(f64::NAN),
        mean_min_rate: mins.iter().sum::<f64>() / mins.len() as f64,
        samples: rates.len(),
        cdf: table,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let per_realization: Vec<Vec<RealizationRecord>> = (0..config.realizations)
        .into_par_iter()
        .map(|r| run_realization(config, r))
        .collect::<Result<_>>()?;
    let records: Vec<RealizationRecord> = per_realization.into_iter().flatten().collect();

    let limit = config.realizations / 100;
    let mut curves = Vec::new();
    let mut setups = Vec::new();
    for &setup in &config.pilots {
        let all: Vec<&RealizationRecord> = records.iter().filter(|r| r.pilots == setup).collect();
        let unconverged = all.iter().filter(|r| !r.converged).count();
        if unconverged > limit {
            return Err(Error::TooManyUnconverged {
                failed: unconverged,
                total: all.len(),
                limit,
            });
        }
        let kept: Vec<&RealizationRecord> = all.iter().copied().filter(|r| r.converged).collect();

        let mut median_ratio = None;
        let mut dominance_violations = None;
        let mut prop_median = None;
        if config.scheme.runs_proposed() {
            let c = build_curve(Scheme::Proposed, setup, &kept)?;
            prop_median = Some(c.median);
            curves.push(c);
        }
        if config.scheme.runs_baseline() {
            let c = build_curve(Scheme::Baseline, setup, &kept)?;
            if let Some(pm) = prop_median {
                median_ratio = Some(pm / c.median);
                dominance_violations = Some(
                    all.iter()
                        .filter(|r| {
                            let p = RealizationRecord::min_rate(&r.proposed_rates).unwrap_or(0.0);
                            let b = RealizationRecord::min_rate(&r.baseline_rates).unwrap_or(0.0);
                            p < b * (1.0 - DOMINANCE_SLACK)
                        })
                        .count(),
                );
            }
            curves.push(c);
        }
        let iters: Vec<usize> = all.iter().filter_map(|r| r.iterations).collect();
        setups.push(SetupSummary {
            pilots: setup,
            realizations: all.len(),
            unconverged,
            mean_iterations: (!iters.is_empty())
                .then(|| iters.iter().sum::<usize>() as f64 / iters.len() as f64),
            max_iterations: iters.iter().copied().max(),
            median_ratio,
            dominance_violations,
        });
    }

    Ok(ExperimentResult {
        config: config.clone(),
        curves,
        setups,
        records,
    })
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Proposed => "proposed",
        Scheme::Baseline => "baseline",
        Scheme::Both => "both",
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config: &'a ExperimentConfig,
    curves: Vec<CurveSummary>,
    setups: &'a [SetupSummary],
}

#[derive(Serialize)]
struct CurveSummary {
    scheme: Scheme,
    pilots: PilotSetup,
    median: f64,
    outage_5: f64,
    mean_min_rate: f64,
    samples: usize,
}

/// Writes per-user rates, CDFs, optional traces and `summary.json` to `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for curve in &result.curves {
        let tag = format!("{}_{}", scheme_name(curve.scheme), curve.pilots.label());

        let mut w = csv::Writer::from_path(dir.join(format!("rates_{tag}.csv")))?;
        w.write_record(["realization", "user", "rate"])?;
        for r in result.records.iter().filter(|r| r.pilots == curve.pilots) {
            let rates = match curve.scheme {
                Scheme::Baseline => &r.baseline_rates,
                _ => &r.proposed_rates,
            };
            for (k, rate) in rates.iter().flatten().enumerate() {
                w.write_record([r.realization.to_string(), k.to_string(), rate.to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(format!("cdf_{tag}.csv")))?;
        w.write_record(["rate_bits_per_s_per_Hz", "cdf"])?;
        for p in &curve.cdf {
            w.write_record([p.rate.to_string(), p.probability.to_string()])?;
        }
        w.flush()?;
    }

    if result.config.trace {
        for &setup in &result.config.pilots {
            let mut w = csv::Writer::from_path(dir.join(format!("trace_{}.csv", setup.label())))?;
            w.write_record(["realization", "iteration", "min_rate"])?;
            for r in result.records.iter().filter(|r| r.pilots == setup) {
                for e in r.trace.iter().flat_map(|t| &t.entries) {
                    w.write_record([
                        r.realization.to_string(),
                        e.iteration.to_string(),
                        e.min_rate.to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
    }

    let summary = SummaryFile {
        config: &result.config,
        curves: result
            .curves
            .iter()
            .map(|c| CurveSummary {
                scheme: c.scheme,
                pilots: c.pilots,
                median: c.median,
                outage_5: c.outage_5,
                mean_min_rate: c.mean_min_rate,
                samples: c.samples,
            })
            .collect(),
        setups: &result.setups,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

/// Oracle run on realization 0 of each pilot setup, filters and powers from
/// the alternating solver.
pub fn run_oracle_suite(config: &ExperimentConfig) -> Result<Vec<(PilotSetup, OracleReport)>> {
    config.validate()?;
    let base = config.sim_params(config.pilots[0])?;
    let topo = generate_topology(&base, &mut realization_rng(config.seed, 0, 0))?;
    config
        .pilots
        .iter()
        .enumerate()
        .map(|(i, &setup)| {
            let params = config.sim_params(setup)?;
            let book = assign_pilots(
                params.num_users,
                params.tau,
                setup.mode(),
                &mut realization_rng(config.seed, 0, 1 + i as u64),
            )?;
            let stats = ChannelStats::new(topo.beta.clone(), &book, params.pilot_snr)?;
            let (sol, _) = solve_p1(
                &stats,
                &params.p_max_vec(),
                params.rho,
                &config.solver_options(),
            )?;
            let report = run_oracle(
                &stats,
                &book,
                &sol.filters,
                &sol.powers,
                params.rho,
                config.oracle_draws,
                splitmix64(config.seed ^ 0x6f72_6163_6c65),
            )?;
            Ok((setup, report))
        })
        .collect()
}
