use std::fs;
use std::process::Command;

use approx::assert_relative_eq;
use proptest::prelude::*;

use cellfree::harness::{
    realization_rng, run_experiment, write_outputs, ExperimentConfig, PilotSetup, Scheme,
};
use cellfree::{
    assign_pilots, generate_topology, solve_baseline, solve_p1, ChannelStats, PilotMode,
    PowerOptions, SimParams, SolverOptions,
};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        num_aps: 16,
        num_users: 6,
        realizations: 12,
        pilots: vec![PilotSetup::Orthogonal, PilotSetup::Random(3)],
        trace: true,
        seed: 9,
        ..ExperimentConfig::default()
    }
}

#[test]
fn experiment_is_deterministic_and_dominant() {
    let cfg = small_config();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    for s in &a.setups {
        assert_eq!(s.realizations, 12);
        assert_eq!(s.dominance_violations, Some(0));
        assert!(s.median_ratio.unwrap() >= 1.0);
    }
    let curve = a.curve(Scheme::Proposed, PilotSetup::Random(3)).unwrap();
    assert_eq!(curve.samples, 12 * 6);
    assert_relative_eq!(curve.cdf.last().unwrap().probability, 1.0);
}

#[test]
fn outputs_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_experiment(&small_config()).unwrap();
    write_outputs(&result, dir.path()).unwrap();

    for tag in [
        "proposed_orthogonal",
        "baseline_orthogonal",
        "proposed_random_tau3",
        "baseline_random_tau3",
    ] {
        let mut rd = csv::Reader::from_path(dir.path().join(format!("rates_{tag}.csv"))).unwrap();
        assert_eq!(rd.headers().unwrap(), vec!["realization", "user", "rate"]);
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 12 * 6);
        assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() > 0.0));

        let mut rd = csv::Reader::from_path(dir.path().join(format!("cdf_{tag}.csv"))).unwrap();
        assert_eq!(rd.headers().unwrap(), vec!["rate_bits_per_s_per_Hz", "cdf"]);
        let pts: Vec<(f64, f64)> = rd
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[0].parse().unwrap(), r[1].parse().unwrap())
            })
            .collect();
        assert!(pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1));
    }

    let trace = fs::read_to_string(dir.path().join("trace_orthogonal.csv")).unwrap();
    assert!(trace.starts_with("realization,iteration,min_rate"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["curves"].as_array().unwrap().len(), 4);
    assert_eq!(summary["config"]["num_aps"], 16);
}

#[test]
fn cli_runs_from_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(
        &cfg_path,
        "num_aps = 12\nnum_users = 4\nrealizations = 5\npilots = [\"orthogonal\", \"random:2\"]\nseed = 3\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args([
            "--config",
            cfg_path.to_str().unwrap(),
            "--K",
            "5",
            "--scheme",
            "proposed",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let rates = fs::read_to_string(out.join("rates_proposed_random_tau2.csv")).unwrap();
    assert_eq!(rates.lines().count(), 1 + 5 * 5);
    assert!(!out.join("rates_baseline_orthogonal.csv").exists());
}

#[test]
fn cli_oracle_mode_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args([
            "--oracle", "--M", "8", "--K", "3", "--tau", "2", "--draws", "20000", "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("oracle_random_tau2.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["draws"], 20000);
    assert_eq!(report["users"].as_array().unwrap().len(), 3);
}

#[test]
fn cli_rejects_bad_input() {
    let out = Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args(["--pilot-mode", "orthogonal", "--realizations", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("realizations"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn joint_design_never_loses_to_uniform_combining(seed in any::<u64>(), m in 2usize..24, k in 1usize..7, tau_frac in 0.0..1.0f64) {
        let tau = 1 + ((k - 1) as f64 * tau_frac) as usize;
        let params = SimParams { num_aps: m, num_users: k, tau, ..SimParams::default() };
        let topo = generate_topology(&params, &mut realization_rng(seed, 0, 0)).unwrap();
        let book = assign_pilots(k, tau, PilotMode::Random, &mut realization_rng(seed, 0, 1)).unwrap();
        let stats = ChannelStats::new(topo.beta, &book, params.pilot_snr).unwrap();
        let pm = params.p_max_vec();
        let (sol, trace) = solve_p1(&stats, &pm, params.rho, &SolverOptions::default()).unwrap();
        let base = solve_baseline(&stats, &pm, params.rho, &PowerOptions::default()).unwrap();
        prop_assert!(sol.min_rate() >= base.min_rate() * (1.0 - 1e-9));
        prop_assert!(sol.powers.iter().all(|&q| (0.0..=params.p_max).contains(&q)));
        let seq = trace.min_sinr_sequence();
        prop_assert!(seq.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    }
}
