//! Command-line front end: generate markets, run learners, enumerate stable
//! matchings, verify equilibrium certificates, round mixed profiles, check
//! the monotone identity, and probe local convergence.
//!
//! Exit codes: 0 success/certified, 1 uncertified/violated, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use matchmarket::equilibrium::{
    enumerate_stable_matchings, example1_market, is_pure_ne_with_tol, round_mixed_to_pure,
    verify_mixed_ne, NeKind,
};
use matchmarket::market::{Market, MarketFile, Matching, MixedProfile, RewardKind};
use matchmarket::monotone::{build_q, monotone_identity_check, RegularizedGame};
use matchmarket::sim::{
    gen_general, gen_hierarchical, local_convergence_probe, run_to_dir, ProbeOptions, RunConfig,
};

#[derive(Parser)]
#[command(name = "matchmarket", version, about = "Stable matching game simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MarketKind {
    Hierarchical,
    General,
    Example1,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RewardArg {
    Bernoulli,
    Beta,
    Deterministic,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a market file and echo its derived constants.
    Generate {
        #[arg(long, value_enum)]
        kind: MarketKind,
        /// Market size (ignored for example1, which is 3x3).
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Minimum preference gap (general markets).
        #[arg(long, default_value_t = 0.05)]
        min_gap: f64,
        /// Small preference value for example1.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, value_enum)]
        reward: Option<RewardArg>,
        /// Beta concentration when --reward beta.
        #[arg(long, default_value_t = 8.0)]
        concentration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured simulation; writes trajectories and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's stem plus `_out`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// List all stable matchings of a market (n <= 8).
    Enumerate {
        #[arg(long)]
        market: PathBuf,
    },
    /// Certify a strategy profile as a pure or mixed equilibrium.
    Verify {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Round a mixed profile to a matching (least preferred in support).
    Round {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        profile: PathBuf,
    },
    /// Check the regularized game's monotone identity and Q-matrix status.
    MonotoneCheck {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1000)]
        samples: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Probe local convergence of EXP around the deferred-acceptance
    /// equilibrium.
    ProbeLocal {
        #[arg(long)]
        market: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        horizon: u64,
        #[arg(long, default_value_t = 100)]
        replications: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// Initial L1 distance (default: the hypothesis bound c/(250 n^2)).
        #[arg(long)]
        radius: Option<f64>,
        /// Start round override (diagnostic; default: the computed t0).
        #[arg(long)]
        start_round: Option<u64>,
        /// Write the report JSON here as well as stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// On-disk strategy profile: one simplex row per man.
#[derive(Serialize, Deserialize)]
struct ProfileFile {
    x: Vec<Vec<f64>>,
}

fn load_market(path: &Path) -> Result<Market<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading market file {}", path.display()))?;
    let file: MarketFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(file.into_market()?)
}

fn load_profile(path: &Path, n: usize) -> Result<MixedProfile<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading profile file {}", path.display()))?;
    let file: ProfileFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.x.len() != n {
        bail!("profile has {} rows but the market has n = {n}", file.x.len());
    }
    Ok(MixedProfile::new(file.x)?)
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    match flag.or(config) {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            eprintln!("seed: {s}");
            s
        }
    }
}

fn matching_pairs(m: &Matching) -> Vec<(usize, usize)> {
    m.matched_pairs().collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    kind: MarketKind,
    n: usize,
    seed: Option<u64>,
    min_gap: f64,
    eps: f64,
    reward: Option<RewardArg>,
    concentration: f64,
    out: &Path,
) -> Result<u8> {
    let market = match kind {
        MarketKind::Hierarchical => gen_hierarchical(n, resolve_seed(seed, None))?,
        MarketKind::General => gen_general(n, resolve_seed(seed, None), min_gap)?,
        MarketKind::Example1 => example1_market(eps)?.0,
    };
    let market = match reward {
        None => market,
        Some(RewardArg::Bernoulli) => market.with_reward(RewardKind::Bernoulli),
        Some(RewardArg::Beta) => market.with_reward(RewardKind::Beta { concentration }),
        Some(RewardArg::Deterministic) => market.with_reward(RewardKind::Deterministic),
    };
    let file = MarketFile::from_market(&market);
    std::fs::write(out, serde_json::to_string_pretty(&file)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    let da = market.deferred_acceptance();
    let echo = serde_json::json!({
        "path": out.display().to_string(),
        "n": market.n(),
        "delta": market.delta(),
        "mu_min": market.mu_min(),
        "mu_max": market.mu_max(),
        "c_local": market.c_local(),
        "c_theorem3": market.c_for_matching(&da)?,
    });
    println!("{}", serde_json::to_string_pretty(&echo)?);
    Ok(0)
}

fn cmd_run(config_path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<u8> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let config = RunConfig::from_json(&text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
    let seed = resolve_seed(seed, config.seed);
    let dir = out_dir.unwrap_or_else(|| {
        let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        config_path.with_file_name(format!("{stem}_out"))
    });
    let summary = run_to_dir(&config, seed, &dir)?;
    let headline = serde_json::json!({
        "out_dir": dir.display().to_string(),
        "regret_final": summary.regret_final,
        "regret_per_logT": summary
            .regret_final
            .map(|r| r / (summary.horizon.max(2) as f64).ln()),
        "stability_rate_last_decade": summary.stability_rate_last_decade,
    });
    println!("{}", serde_json::to_string_pretty(&headline)?);
    Ok(0)
}

fn cmd_enumerate(market_path: &Path) -> Result<u8> {
    let market = load_market(market_path)?;
    let stable = enumerate_stable_matchings(&market)?;
    let listing: Vec<Vec<(usize, usize)>> = stable.iter().map(matching_pairs).collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "count": stable.len(),
            "stable_matchings": listing,
        }))?
    );
    Ok(0)
}

fn cmd_verify(market_path: &Path, profile_path: &Path, tol: f64) -> Result<u8> {
    let market = load_market(market_path)?;
    let profile = load_profile(profile_path, market.n())?;
    let cert = if profile.is_pure() {
        is_pure_ne_with_tol(&market, &profile, tol)?
    } else {
        verify_mixed_ne(&market, &profile, tol)
    };
    let report = serde_json::json!({
        "kind": match cert.kind { NeKind::Pure => "pure", NeKind::Mixed => "mixed" },
        "max_violation": cert.max_violation,
        "tol": cert.tol,
        "certified": cert.certified(),
        "support_graph": cert.support_edges(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if cert.certified() { 0 } else { 1 })
}

fn cmd_round(market_path: &Path, profile_path: &Path) -> Result<u8> {
    let market = load_market(market_path)?;
    let profile = load_profile(profile_path, market.n())?;
    let rounded = round_mixed_to_pure(&market, &profile);
    let stable = if rounded.matching.is_perfect() {
        market.is_stable(&rounded.matching)?
    } else {
        false
    };
    let report = serde_json::json!({
        "matching": matching_pairs(&rounded.matching),
        "partial": rounded.partial,
        "stable": stable,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if stable && !rounded.partial { 0 } else { 1 })
}

fn cmd_monotone_check(
    market_path: &Path,
    beta: f64,
    samples: u32,
    seed: u64,
    tol: f64,
) -> Result<u8> {
    use rand::Rng;
    use rand::SeedableRng;
    let market = load_market(market_path)?;
    let n = market.n();
    let game = RegularizedGame::new(market, beta)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut random_profile = || {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-6).collect();
                let sum: f64 = row.iter().sum();
                row.into_iter().map(|v| v / sum).collect()
            })
            .collect();
        MixedProfile::from_rows_unchecked(rows)
    };
    let mut worst_identity = 0.0f64;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x = random_profile();
        let y = random_profile();
        let (lhs, rhs) = monotone_identity_check(&game, &x, &y);
        worst_identity = worst_identity.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        worst_gap = worst_gap.max(lhs);
    }
    let psd: Vec<bool> = (0..n).map(|w| build_q(&game, w).is_psd(1e-10)).collect();
    let certified = game.monotone_certified();
    let identity_ok = worst_identity <= tol;
    let monotone_ok = !certified || (psd.iter().all(|&p| p) && worst_gap <= tol);
    let report = serde_json::json!({
        "beta": beta,
        "monotone_certified": certified,
        "samples": samples,
        "worst_identity_residual": worst_identity,
        "worst_monotonicity_gap": worst_gap,
        "q_psd": psd,
        "identity_ok": identity_ok,
        "monotone_ok": monotone_ok,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if identity_ok && monotone_ok { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe_local(
    market_path: &Path,
    horizon: u64,
    replications: u32,
    seed: Option<u64>,
    radius: Option<f64>,
    start_round: Option<u64>,
    out: Option<PathBuf>,
) -> Result<u8> {
    let market = load_market(market_path)?;
    let target = market.deferred_acceptance();
    let opts = ProbeOptions {
        horizon,
        replications,
        seed: resolve_seed(seed, None),
        radius,
        start_round_override: start_round,
        ..ProbeOptions::default()
    };
    let report = local_convergence_probe(&market, &target, &opts)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = out {
        std::fs::write(&path, text.clone() + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(if report.violations == 0 { 0 } else { 1 })
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Generate { kind, n, seed, min_gap, eps, reward, concentration, out } => {
            cmd_generate(kind, n, seed, min_gap, eps, reward, concentration, &out)
        }
        Command::Run { config, seed, out_dir } => cmd_run(&config, seed, out_dir),
        Command::Enumerate { market } => cmd_enumerate(&market),
        Command::Verify { market, profile, tol } => cmd_verify(&market, &profile, tol),
        Command::Round { market, profile } => cmd_round(&market, &profile),
        Command::MonotoneCheck { market, beta, samples, seed, tol } => {
            cmd_monotone_check(&market, beta, samples, seed, tol)
        }
        Command::ProbeLocal { market, horizon, replications, seed, radius, start_round, out } => {
            cmd_probe_local(&market, horizon, replications, seed, radius, start_round, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
