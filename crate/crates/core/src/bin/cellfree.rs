use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cellfree::harness::{
    run_experiment, run_oracle_suite, write_outputs, ExperimentConfig, PilotSetup, Scheme,
};
use cellfree::Result;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum PilotModeArg {
    Orthogonal,
    Random,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SchemeArg {
    Proposed,
    Baseline,
    Both,
}

/// Max-min SINR experiments for uplink cell-free massive MIMO.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of APs.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Number of users.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Pilot length(s) for random pilots, comma separated.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<usize>>,
    /// Side of the square area in km.
    #[arg(long = "D")]
    d: Option<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    pilot_mode: Option<PilotModeArg>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the Monte Carlo check of the closed-form SINR instead of the CDF experiment.
    #[arg(long)]
    oracle: bool,
    /// Channel draws per oracle run.
    #[arg(long)]
    draws: Option<usize>,
    /// Emit per-iteration min-rate traces.
    #[arg(long)]
    trace: bool,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = cli.m {
        cfg.num_aps = m;
    }
    if let Some(k) = cli.k {
        cfg.num_users = k;
    }
    if let Some(d) = cli.d {
        cfg.side_km = d;
    }
    if let Some(r) = cli.realizations {
        cfg.realizations = r;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.draws {
        cfg.oracle_draws = n;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(s) = cli.scheme {
        cfg.scheme = match s {
            SchemeArg::Proposed => Scheme::Proposed,
            SchemeArg::Baseline => Scheme::Baseline,
            SchemeArg::Both => Scheme::Both,
        };
    }
    cfg.trace |= cli.trace;
    match (cli.pilot_mode, &cli.tau) {
        (Some(PilotModeArg::Orthogonal), _) => cfg.pilots = vec![PilotSetup::Orthogonal],
        (_, Some(taus)) => cfg.pilots = taus.iter().map(|&t| PilotSetup::Random(t)).collect(),
        (Some(PilotModeArg::Random), None) => {
            cfg.pilots.retain(|p| matches!(p, PilotSetup::Random(_)));
        }
        (None, None) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    let out = PathBuf::from(&cfg.out_dir);

    if cli.oracle {
        std::fs::create_dir_all(&out)?;
        for (setup, report) in run_oracle_suite(&cfg)? {
            println!("oracle {setup}: {} draws", report.draws);
            println!("  user  |DS|^2 err  E|BU|^2 err  E|IUI|^2 err  E|TN|^2 err  SINR err");
            for u in &report.users {
                println!(
                    "  {:>4}  {:>10.4}%  {:>10.4}%  {:>11.4}%  {:>10.4}%  {:>7.4}%",
                    u.user,
                    100.0 * u.ds2.rel_error,
                    100.0 * u.bu2.rel_error,
                    100.0 * u.iui2.rel_error,
                    100.0 * u.tn2.rel_error,
                    100.0 * u.sinr.rel_error
                );
            }
            std::fs::write(
                out.join(format!("oracle_{}.json", setup.label())),
                report.to_json()?,
            )?;
        }
        return Ok(());
    }

    let result = run_experiment(&cfg)?;
    write_outputs(&result, &out)?;
    for c in &result.curves {
        println!(
            "{:?} {}: median {:.4} b/s/Hz, 5%-outage {:.4}, mean min-rate {:.4}",
            c.scheme, c.pilots, c.median, c.outage_5, c.mean_min_rate
        );
    }
    for s in &result.setups {
        if let Some(r) = s.median_ratio {
            println!(
                "{}: proposed/baseline median ratio {:.2}, dominance violations {}",
                s.pilots,
                r,
                s.dominance_violations.unwrap_or(0)
            );
        }
    }
    println!("outputs written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
