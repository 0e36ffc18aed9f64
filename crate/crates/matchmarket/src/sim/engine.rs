//! Run orchestration: configuration, per-replication simulation, metrics,
//! and file output.
//!
//! A run takes one market (from a file or a generator), one learner kind,
//! a horizon, and a replication count. Replication `r` draws every seed
//! deterministically from `(master_seed, r)`; within a replication each man
//! owns separate action and reward streams, so trajectories replay
//! byte-identically under the same configuration.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_seed, resolve_round, sample_index, FeedbackMode, RoundOutcome, SimError};
use crate::baseline::{
    best_response_path, default_tau, theorem6_eps_bound, weak_acyclicity_witness, GapEstimator,
    GoodState, TrialLearner, TrialParams,
};
use crate::equilibrium::enumerate_stable_matchings;
use crate::exp::{ExpLearner, Schedule};
use crate::market::{Market, MarketFile, Matching, MixedProfile, PureProfile, RewardKind};
use crate::monotone::{solve_eps_ne, RegularizedGame, SolveOptions, SolveOutcome};

const SCHEMA_VERSION: u32 = 1;

/// Where the market comes from. Generators derive their seed from the master
/// seed unless one is pinned here. `normalize` divides preferences by
/// `mu_max` (bandit learners need means in (0, 1]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketSource {
    File {
        path: String,
        #[serde(default)]
        normalize: bool,
    },
    Hierarchical {
        n: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        reward: Option<RewardKind>,
    },
    General {
        n: usize,
        min_gap: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        reward: Option<RewardKind>,
    },
    Example1 {
        eps: f64,
        #[serde(default)]
        normalize: bool,
    },
}

/// Schedule parameters as configured; resolved against `(n, horizon)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// `eta = 1/sqrt(t)`, `gamma = M log(t)/t`. Give `m` directly or give a
    /// lower bound `c` on the schedule constant and let `M = (4n/c) log T`.
    Theorem3 { m: Option<f64>, c: Option<f64> },
    /// `gamma = t^(-1/3)`, `eta = t^(-3/4)`.
    Local,
    Custom { eta_scale: f64, eta_exp: f64, gamma_scale: f64, gamma_exp: f64 },
}

impl ScheduleConfig {
    pub fn resolve(&self, n: usize, horizon: u64) -> Result<Schedule, SimError> {
        Ok(match *self {
            ScheduleConfig::Theorem3 { m: Some(m), c: None } => {
                if !(m > 0.0) {
                    return Err(SimError::Config("schedule.m must be positive".into()));
                }
                Schedule::Theorem3 { m_big: m }
            }
            ScheduleConfig::Theorem3 { m: None, c: Some(c) } => {
                if !(c > 0.0) {
                    return Err(SimError::Config("schedule.c must be positive".into()));
                }
                Schedule::theorem3_from_constant(n, c, horizon.max(2))
            }
            ScheduleConfig::Theorem3 { .. } => {
                return Err(SimError::Config(
                    "schedule: give exactly one of m (explicit) or c (to derive M = (4n/c) log T)".into(),
                ))
            }
            ScheduleConfig::Local => Schedule::Local,
            ScheduleConfig::Custom { eta_scale, eta_exp, gamma_scale, gamma_exp } => {
                // eta must be positive and nonincreasing, gamma positive.
                if !(eta_scale > 0.0 && gamma_scale > 0.0) {
                    return Err(SimError::Config("schedule scales must be positive".into()));
                }
                if eta_exp < 0.0 || gamma_exp < 0.0 {
                    return Err(SimError::Config(
                        "schedule exponents must be nonnegative (nonincreasing sequences)".into(),
                    ));
                }
                Schedule::Custom { eta_scale, eta_exp, gamma_scale, gamma_exp }
            }
        })
    }
}

/// Episode length: one value for everyone or one per man.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Scalar(u64),
    PerMan(Vec<u64>),
}

impl TauSpec {
    fn for_man(&self, m: usize) -> u64 {
        match self {
            TauSpec::Scalar(v) => *v,
            TauSpec::PerMan(v) => v[m],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Enforces the convergence-theorem parameter regime.
    Theorem6,
    /// Only basic range checks.
    #[default]
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartSpec {
    /// The empty proposal profile (a good state).
    #[default]
    Empty,
    /// A uniformly random pure profile; the run follows the constructive
    /// weak-acyclicity witness.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdaterSpec {
    /// Every player best-responds each step.
    #[default]
    All,
    /// Only the lowest-index unsatisfied player moves.
    Single,
    /// A random subset forced to contain an unsatisfied player.
    RandomSubset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    Exp {
        schedule: ScheduleConfig,
        /// Tune the mixing parameter from the decentralized UCB gap oracle
        /// instead of the schedule's own constant.
        #[serde(default)]
        gap_oracle: bool,
    },
    Trial {
        eps: f64,
        delta: f64,
        omega: f64,
        #[serde(default)]
        tau: Option<TauSpec>,
        #[serde(default)]
        mode: TrialMode,
        /// Target success probability for the theorem6 parameter checks.
        #[serde(default)]
        p: Option<f64>,
        #[serde(default)]
        diagnostics: bool,
    },
    BestResponse {
        #[serde(default)]
        start: StartSpec,
        #[serde(default)]
        updaters: UpdaterSpec,
    },
    Monotone {
        beta: f64,
        #[serde(default)]
        step: Option<f64>,
        #[serde(default)]
        residual_tol: Option<f64>,
    },
}

/// One run: market, learner, horizon, replications, master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    pub horizon: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub feedback: FeedbackMode,
    pub market: MarketSource,
    pub learner: LearnerSpec,
}

fn default_replications() -> u32 {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| format!("{}: {}", e.path(), e.inner()))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Per-round derived metrics.
#[derive(Debug, Clone, Default)]
pub struct Metrics {
    /// Nondecreasing count of rounds whose proposals miss the target: with a
    /// unique stable matching, rounds differing from it; otherwise rounds
    /// whose proposals do not form any stable matching.
    pub regret: Vec<u64>,
    /// Whether the round's proposals formed a stable matching.
    pub stable: Vec<bool>,
    /// L1 distance of the learner's profile to the nearest enumerated pure
    /// equilibrium (markets with n <= 8 only).
    pub dist_l1: Vec<Option<f64>>,
    /// Schedule values for EXP runs (man 0's effective mixing).
    pub eta: Vec<Option<f64>>,
    pub gamma: Vec<Option<f64>>,
}

/// One per-episode diagnostic row for a trial learner: the episode's
/// empirical average for a woman next to the complete-information utility of
/// playing her against the other men's baselines at episode end.
#[derive(Debug, Clone)]
pub struct DiagRow {
    pub episode: u64,
    pub man: usize,
    pub woman: usize,
    pub plays: u64,
    /// Episode average; `None` when the woman went unplayed.
    pub u_hat: Option<f64>,
    /// `u_m(w, b_{-m})` evaluated by the engine.
    pub u_true: f64,
    pub baseline_before: usize,
    pub baseline_after: usize,
    pub improving: bool,
}

/// One replication's record.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub replication: u32,
    pub rounds: Vec<RoundOutcome>,
    pub metrics: Metrics,
    /// Per-episode evaluation tables (trial learners with diagnostics on).
    pub diagnostics: Vec<DiagRow>,
}

impl Trajectory {
    pub fn horizon(&self) -> u64 {
        self.rounds.len() as u64
    }

    pub fn final_regret(&self) -> u64 {
        self.metrics.regret.last().copied().unwrap_or(0)
    }

    pub fn regret_at(&self, t: u64) -> u64 {
        assert!(t >= 1 && (t as usize) <= self.metrics.regret.len());
        self.metrics.regret[(t - 1) as usize]
    }

    /// Fraction of stable rounds over the last tenth of the horizon.
    pub fn stability_rate_last_decade(&self) -> f64 {
        let len = self.metrics.stable.len();
        if len == 0 {
            return 0.0;
        }
        let start = len - (len / 10).max(1);
        let window = &self.metrics.stable[start..];
        window.iter().filter(|&&s| s).count() as f64 / window.len() as f64
    }

    /// Least-squares slope of cumulative regret against `log t` over
    /// doubling checkpoints `T, T/2, T/4, ...`.
    pub fn regret_per_log_t_slope(&self) -> f64 {
        let horizon = self.horizon();
        if horizon < 4 {
            return 0.0;
        }
        let mut points = Vec::new();
        let mut t = horizon;
        while t >= 2 {
            points.push(((t as f64).ln(), self.regret_at(t) as f64));
            t /= 2;
        }
        let k = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let denom = k * sxx - sx * sx;
        if denom.abs() < 1e-12 {
            0.0
        } else {
            (k * sxy - sx * sy) / denom
        }
    }

    /// Writes the trajectory CSV:
    /// `t, proposal_i.., accepted_i.., reward_i.., regret, stable, dist_l1, eta, gamma`.
    pub fn write_csv<W: Write>(&self, n: usize, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|m| format!("proposal_{m}")));
        header.extend((0..n).map(|m| format!("accepted_{m}")));
        header.extend((0..n).map(|m| format!("reward_{m}")));
        header.extend(["regret", "stable", "dist_l1", "eta", "gamma"].map(String::from));
        w.write_record(&header)?;
        for (i, round) in self.rounds.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            for m in 0..n {
                rec.push(round.proposals[m].map(|v| v.to_string()).unwrap_or_default());
            }
            for m in 0..n {
                let accepted = round
                    .proposals[m]
                    .is_some_and(|w| round.matching.partner_of_man(m) == Some(w));
                rec.push(if accepted { "1" } else { "0" }.to_string());
            }
            for m in 0..n {
                rec.push(round.rewards[m].map(|v| v.to_string()).unwrap_or_default());
            }
            rec.push(self.metrics.regret[i].to_string());
            rec.push(if self.metrics.stable[i] { "1" } else { "0" }.to_string());
            rec.push(self.metrics.dist_l1[i].map(|v| v.to_string()).unwrap_or_default());
            rec.push(self.metrics.eta[i].map(|v| v.to_string()).unwrap_or_default());
            rec.push(self.metrics.gamma[i].map(|v| v.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Headline numbers for a finished run. `envelope_violation_fraction` is
/// populated by the local-convergence probe, not by ordinary runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub replications: u32,
    pub regret_final: Option<f64>,
    #[serde(rename = "regret_per_logT_fit")]
    pub regret_per_log_t_fit: Option<f64>,
    pub stability_rate_last_decade: Option<f64>,
    pub envelope_violation_fraction: Option<f64>,
    /// Largest second moment of the configured reward distributions.
    pub sigma_sq: f64,
    pub detail: SummaryDetail,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SummaryDetail {
    pub regret_final: Vec<u64>,
    pub stability_rate_last_decade: Vec<f64>,
    #[serde(rename = "regret_per_logT_fit")]
    pub regret_per_log_t_fit: Vec<f64>,
    pub solver_residuals: Vec<f64>,
}

#[derive(Debug)]
pub enum RunArtifacts {
    Trajectories(Vec<Trajectory>),
    Solver(Vec<SolveOutcome<f64>>),
}

#[derive(Debug)]
pub struct RunResult {
    pub market: Market<f64>,
    pub artifacts: RunArtifacts,
    pub summary: Summary,
}

/// Everything a replication needs, precomputed once.
struct Resolved {
    market: Market<f64>,
    /// All stable matchings when n <= 8 (for metrics).
    stable_set: Vec<Matching>,
    /// The regret target when the market has a unique stable matching.
    target: Option<Matching>,
    seed: u64,
}

fn resolve_market(config: &RunConfig, master_seed: u64) -> Result<Market<f64>, SimError> {
    let market = match &config.market {
        MarketSource::File { path, normalize } => {
            let text = std::fs::read_to_string(path)?;
            let file: MarketFile = serde_json::from_str(&text)?;
            let market = file.into_market()?;
            if *normalize {
                market.normalized()
            } else {
                market
            }
        }
        MarketSource::Hierarchical { n, seed, reward } => {
            let market = super::gen_hierarchical(
                *n,
                seed.unwrap_or_else(|| derive_seed(master_seed, lane(b'M'), 0)),
            )?;
            match reward {
                Some(kind) => market.with_reward(*kind),
                None => market,
            }
        }
        MarketSource::General { n, min_gap, seed, reward } => {
            let market = super::gen_general(
                *n,
                seed.unwrap_or_else(|| derive_seed(master_seed, lane(b'M'), 0)),
                *min_gap,
            )?;
            match reward {
                Some(kind) => market.with_reward(*kind),
                None => market,
            }
        }
        MarketSource::Example1 { eps, normalize } => {
            let (market, _) = crate::equilibrium::example1_market(*eps)?;
            if *normalize {
                market.normalized()
            } else {
                market
            }
        }
    };
    Ok(market)
}

fn validate(config: &RunConfig, market: &Market<f64>) -> Result<(), SimError> {
    if config.schema_version != SCHEMA_VERSION {
        return Err(SimError::Config(format!(
            "schema_version: expected {SCHEMA_VERSION}, got {}",
            config.schema_version
        )));
    }
    if config.horizon == 0 {
        return Err(SimError::Config("horizon must be at least 1".into()));
    }
    if config.replications == 0 {
        return Err(SimError::Config("replications must be at least 1".into()));
    }
    if matches!(config.learner, LearnerSpec::Exp { .. } | LearnerSpec::Trial { .. }) {
        if market.mu_max() > 1.0 {
            return Err(SimError::Config(
                "bandit learners draw rewards with means mu; this market has mu_max > 1 \
                 (set \"normalize\": true on the market source)"
                    .into(),
            ));
        }
        if matches!(market.reward_kind(), RewardKind::Beta { .. }) && market.mu_max() >= 1.0 {
            return Err(SimError::Config(
                "beta rewards need every mu strictly below 1; this market has mu_max = 1".into(),
            ));
        }
    }
    if let LearnerSpec::Trial { eps, delta, omega, mode, p, tau, .. } = &config.learner {
        let params_probe = TrialParams { eps: *eps, delta: *delta, omega: *omega, tau: 1 };
        params_probe.validate().map_err(SimError::Config)?;
        if let Some(TauSpec::PerMan(v)) = tau {
            if v.len() != market.n() {
                return Err(SimError::Config(format!(
                    "tau: expected {} per-man entries, got {}",
                    market.n(),
                    v.len()
                )));
            }
        }
        if *mode == TrialMode::Theorem6 {
            let gap = market.delta();
            if !(*delta > 0.0 && *delta < gap) {
                return Err(SimError::Config(format!(
                    "theorem6 mode needs delta in (0, Delta) = (0, {gap}), got {delta}"
                )));
            }
            let p = p.unwrap_or(0.9);
            if !(0.0..1.0).contains(&p) {
                return Err(SimError::Config(format!("p = {p} outside (0, 1)")));
            }
            let bound = theorem6_eps_bound(market.n(), p, *delta, gap);
            if *eps > bound {
                return Err(SimError::Config(format!(
                    "theorem6 mode needs eps <= min{{(1-p)/n, delta/4n, (Delta-delta)/4n}} = {bound}, got {eps}"
                )));
            }
        }
    }
    Ok(())
}

const fn lane(tag: u8) -> u64 {
    tag as u64
}

/// One bandit agent per man.
enum Agent {
    Exp { learner: ExpLearner, gap: Option<GapEstimator>, horizon: u64 },
    Trial(TrialLearner),
}

impl Agent {
    fn propose(&mut self, rng: &mut ChaCha8Rng) -> (usize, Option<f64>, Option<f64>) {
        match self {
            Agent::Exp { learner, gap, horizon } => {
                if let Some(est) = gap {
                    let g = est.gamma(learner.t(), *horizon);
                    learner.set_gamma_override(Some(g));
                }
                let eta = learner.eta();
                let gamma = learner.gamma();
                let strategy = learner.adjusted_strategy();
                (sample_index(&strategy, rng), Some(eta), Some(gamma))
            }
            Agent::Trial(learner) => (learner.act(rng), None, None),
        }
    }

    fn observe(&mut self, fb: &crate::feedback::ManFeedback, rng: &mut ChaCha8Rng) {
        match self {
            Agent::Exp { learner, gap, .. } => {
                if let Some(est) = gap {
                    est.observe(fb);
                }
                learner.observe(fb);
            }
            Agent::Trial(learner) => learner.observe(fb, rng),
        }
    }

    fn profile_row(&self, n: usize) -> Vec<f64> {
        match self {
            Agent::Exp { learner, .. } => learner.mixed_strategy(),
            Agent::Trial(learner) => {
                let mut row = vec![0.0; n];
                row[learner.baseline()] = 1.0;
                row
            }
        }
    }

    fn baseline(&self) -> Option<usize> {
        match self {
            Agent::Trial(learner) => Some(learner.baseline()),
            Agent::Exp { .. } => None,
        }
    }

    fn take_episode_report(&mut self) -> Option<crate::baseline::EpisodeReport> {
        match self {
            Agent::Trial(learner) => learner.take_report(),
            Agent::Exp { .. } => None,
        }
    }
}

fn l1_to_nearest_stable(profile: &MixedProfile<f64>, stable_set: &[Matching]) -> Option<f64> {
    if stable_set.is_empty() {
        return None;
    }
    let mut best = f64::INFINITY;
    for m in stable_set {
        let target = m.to_profile::<f64>().expect("stable matchings are perfect");
        best = best.min(profile.l1_distance(&target));
    }
    Some(best)
}

fn round_metrics(
    market: &Market<f64>,
    resolved: &Resolved,
    proposals: &PureProfile,
    profile: Option<&MixedProfile<f64>>,
    regret_so_far: &mut u64,
) -> (bool, Option<f64>) {
    let perfect: Option<Vec<usize>> = proposals.choices().iter().copied().collect();
    let stable = match perfect {
        Some(choice) => match Matching::perfect(choice) {
            Ok(matching) => market.is_stable(&matching).unwrap_or(false),
            Err(_) => false,
        },
        None => false,
    };
    let miss = match &resolved.target {
        Some(target) => {
            !(0..market.n()).all(|m| proposals.choice(m) == target.partner_of_man(m))
        }
        None => !stable,
    };
    if miss {
        *regret_so_far += 1;
    }
    let dist = profile.and_then(|p| l1_to_nearest_stable(p, &resolved.stable_set));
    (stable, dist)
}

/// Simulates one bandit replication (EXP or trial learners).
fn simulate_bandit(
    config: &RunConfig,
    resolved: &Resolved,
    replication: u32,
) -> Result<Trajectory, SimError> {
    let market = &resolved.market;
    let n = market.n();
    let rep_seed = derive_seed(resolved.seed, lane(b'R'), replication as u64);
    let mut action_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|m| ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, lane(b'A'), m as u64)))
        .collect();
    let mut reward_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|m| ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, lane(b'W'), m as u64)))
        .collect();

    let mut agents: Vec<Agent> = match &config.learner {
        LearnerSpec::Exp { schedule, gap_oracle } => {
            let schedule = schedule.resolve(n, config.horizon)?;
            (0..n)
                .map(|_| Agent::Exp {
                    learner: ExpLearner::new(n, schedule),
                    gap: gap_oracle.then(|| GapEstimator::new(n)),
                    horizon: config.horizon,
                })
                .collect()
        }
        LearnerSpec::Trial { eps, delta, omega, tau, .. } => (0..n)
            .map(|m| {
                let tau_m = match tau {
                    Some(spec) => spec.for_man(m),
                    None => default_tau(n, *eps),
                };
                let params = TrialParams { eps: *eps, delta: *delta, omega: *omega, tau: tau_m };
                use rand::Rng;
                let initial = action_rngs[m].random_range(0..n);
                Agent::Trial(TrialLearner::new(n, params, initial))
            })
            .collect(),
        _ => unreachable!("simulate_bandit only handles bandit learners"),
    };

    let diagnostics_on =
        matches!(&config.learner, LearnerSpec::Trial { diagnostics: true, .. });
    let mut rounds = Vec::with_capacity(config.horizon as usize);
    let mut metrics = Metrics::default();
    let mut diagnostics = Vec::new();
    let mut regret = 0u64;
    for t in 1..=config.horizon {
        let mut proposals = PureProfile::all_sink(n);
        let mut eta_record = None;
        let mut gamma_record = None;
        for (m, agent) in agents.iter_mut().enumerate() {
            let (w, eta, gamma) = agent.propose(&mut action_rngs[m]);
            proposals.set_choice(m, Some(w));
            if m == 0 {
                eta_record = eta;
                gamma_record = gamma;
            }
        }
        let profile = MixedProfile::from_rows_unchecked(
            agents.iter().map(|a| a.profile_row(n)).collect(),
        );
        let outcome = resolve_round(market, &proposals, config.feedback, &mut reward_rngs)?;
        // Baselines in effect during the round, before any episode rollover.
        let baselines_before: Option<Vec<usize>> =
            diagnostics_on.then(|| agents.iter().map(|a| a.baseline().unwrap()).collect());
        for (m, agent) in agents.iter_mut().enumerate() {
            let fb = outcome.feedback_for(t, m).expect("bandit agents always propose");
            agent.observe(&fb, &mut action_rngs[m]);
        }
        if let Some(baselines) = baselines_before {
            for m in 0..n {
                if let Some(report) = agents[m].take_episode_report() {
                    for w in 0..n {
                        diagnostics.push(DiagRow {
                            episode: report.episode,
                            man: m,
                            woman: w,
                            plays: report.counts[w],
                            u_hat: report.means[w],
                            u_true: crate::baseline::utility_against_baselines(
                                market, &baselines, m, w,
                            ),
                            baseline_before: report.baseline_before,
                            baseline_after: report.baseline_after,
                            improving: report.improving.contains(&w),
                        });
                    }
                }
            }
        }
        let (stable, dist) = round_metrics(market, resolved, &proposals, Some(&profile), &mut regret);
        metrics.regret.push(regret);
        metrics.stable.push(stable);
        metrics.dist_l1.push(dist);
        metrics.eta.push(eta_record);
        metrics.gamma.push(gamma_record);
        rounds.push(outcome);
    }
    Ok(Trajectory { replication, rounds, metrics, diagnostics })
}

/// Simulates one best-response replication: the trajectory records the path.
fn simulate_best_response(
    config: &RunConfig,
    resolved: &Resolved,
    replication: u32,
) -> Result<Trajectory, SimError> {
    let market = &resolved.market;
    let n = market.n();
    let rep_seed = derive_seed(resolved.seed, lane(b'R'), replication as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, lane(b'B'), 0));
    let (start, updaters) = match &config.learner {
        LearnerSpec::BestResponse { start, updaters } => (*start, *updaters),
        _ => unreachable!(),
    };
    let path = match start {
        StartSpec::Empty => {
            let good = GoodState::empty(n);
            match updaters {
                UpdaterSpec::All => best_response_path(market, &good, crate::baseline::update_all)?,
                UpdaterSpec::Single => {
                    best_response_path(market, &good, crate::baseline::update_single)?
                }
                UpdaterSpec::RandomSubset => best_response_path(market, &good, |_, _, unsat| {
                    use rand::Rng;
                    let mut subset: Vec<usize> =
                        (0..n).filter(|_| rng.random::<f64>() < 0.5).collect();
                    let forced = unsat[rng.random_range(0..unsat.len())];
                    if !subset.contains(&forced) {
                        subset.push(forced);
                    }
                    subset
                })?,
            }
        }
        StartSpec::Random => {
            use rand::Rng;
            let choices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            weak_acyclicity_witness(market, &PureProfile::from_choices(&choices))?
        }
    };
    let mut rounds = Vec::new();
    let mut metrics = Metrics::default();
    let mut regret = 0u64;
    let steps = (config.horizon as usize).min(path.profiles.len());
    for profile in path.profiles.iter().take(steps) {
        let matching = market.resolve_proposals(profile);
        let outcome = RoundOutcome {
            proposals: profile.choices().to_vec(),
            matching,
            rewards: vec![None; n],
            waitlist: None,
        };
        let (stable, _) = round_metrics(market, resolved, profile, None, &mut regret);
        let dist = profile
            .to_mixed::<f64>()
            .and_then(|p| l1_to_nearest_stable(&p, &resolved.stable_set));
        metrics.regret.push(regret);
        metrics.stable.push(stable);
        metrics.dist_l1.push(dist);
        metrics.eta.push(None);
        metrics.gamma.push(None);
        rounds.push(outcome);
    }
    Ok(Trajectory { replication, rounds, metrics, diagnostics: Vec::new() })
}

/// Simulates one replication of the configured learner.
pub fn simulate_replication(
    config: &RunConfig,
    market: &Market<f64>,
    master_seed: u64,
    replication: u32,
) -> Result<Trajectory, SimError> {
    let resolved = prepare(config, market.clone(), master_seed)?;
    match &config.learner {
        LearnerSpec::Exp { .. } | LearnerSpec::Trial { .. } => {
            simulate_bandit(config, &resolved, replication)
        }
        LearnerSpec::BestResponse { .. } => simulate_best_response(config, &resolved, replication),
        LearnerSpec::Monotone { .. } => {
            Err(SimError::Config("monotone runs produce solver logs, not trajectories".into()))
        }
    }
}

fn prepare(config: &RunConfig, market: Market<f64>, seed: u64) -> Result<Resolved, SimError> {
    validate(config, &market)?;
    let stable_set = if market.n() <= 8 {
        enumerate_stable_matchings(&market)?
    } else {
        Vec::new()
    };
    let target = (stable_set.len() == 1).then(|| stable_set[0].clone());
    Ok(Resolved { market, stable_set, target, seed })
}

/// Runs the full configuration in memory.
pub fn run(config: &RunConfig, master_seed: u64) -> Result<RunResult, SimError> {
    let market = resolve_market(config, master_seed)?;
    let resolved = prepare(config, market.clone(), master_seed)?;
    let artifacts = match &config.learner {
        LearnerSpec::Monotone { beta, step, residual_tol } => {
            let game = RegularizedGame::new(market.clone(), *beta)?;
            let opts = SolveOptions {
                step: *step,
                max_iters: config.horizon,
                residual_tol: residual_tol.unwrap_or(1e-9),
                log_every: 1,
            };
            let outcomes: Vec<_> = (0..config.replications)
                .map(|_| solve_eps_ne(&game, MixedProfile::uniform(market.n()), opts))
                .collect::<Result<_, _>>()?;
            RunArtifacts::Solver(outcomes)
        }
        LearnerSpec::BestResponse { .. } => {
            let trajectories: Vec<Trajectory> = (0..config.replications)
                .into_par_iter()
                .map(|r| simulate_best_response(config, &resolved, r))
                .collect::<Result<_, _>>()?;
            RunArtifacts::Trajectories(trajectories)
        }
        _ => {
            let trajectories: Vec<Trajectory> = (0..config.replications)
                .into_par_iter()
                .map(|r| simulate_bandit(config, &resolved, r))
                .collect::<Result<_, _>>()?;
            RunArtifacts::Trajectories(trajectories)
        }
    };
    let summary = summarize(config, &market, master_seed, &artifacts);
    Ok(RunResult { market, artifacts, summary })
}

fn summarize(
    config: &RunConfig,
    market: &Market<f64>,
    seed: u64,
    artifacts: &RunArtifacts,
) -> Summary {
    let mut detail = SummaryDetail::default();
    let (regret_final, fit, stability) = match artifacts {
        RunArtifacts::Trajectories(trajs) => {
            for t in trajs {
                detail.regret_final.push(t.final_regret());
                detail.stability_rate_last_decade.push(t.stability_rate_last_decade());
                detail.regret_per_log_t_fit.push(t.regret_per_log_t_slope());
            }
            let k = trajs.len() as f64;
            (
                Some(detail.regret_final.iter().sum::<u64>() as f64 / k),
                Some(detail.regret_per_log_t_fit.iter().sum::<f64>() / k),
                Some(detail.stability_rate_last_decade.iter().sum::<f64>() / k),
            )
        }
        RunArtifacts::Solver(outs) => {
            for o in outs {
                detail.solver_residuals.push(o.residual_regularized);
            }
            (None, None, None)
        }
    };
    Summary {
        config_hash: config.hash(),
        seed,
        n: market.n(),
        horizon: config.horizon,
        replications: config.replications,
        regret_final,
        regret_per_log_t_fit: fit,
        stability_rate_last_decade: stability,
        envelope_violation_fraction: None,
        sigma_sq: market.sigma_sq(),
        detail,
    }
}

/// Runs the configuration and writes everything under `dir`:
/// `market.json`, one `trajectory_rNNN.csv` (or `solver_rNNN.csv`) per
/// replication, optional `diagnostics_rNNN.csv`, and `summary.json`.
pub fn run_to_dir(config: &RunConfig, master_seed: u64, dir: &Path) -> Result<Summary, SimError> {
    std::fs::create_dir_all(dir)?;
    let result = run(config, master_seed)?;
    let market_file = MarketFile::from_market(&result.market);
    std::fs::write(
        dir.join("market.json"),
        serde_json::to_string_pretty(&market_file)? + "\n",
    )?;
    match &result.artifacts {
        RunArtifacts::Trajectories(trajs) => {
            for t in trajs {
                let path = dir.join(format!("trajectory_r{:03}.csv", t.replication));
                let file = std::fs::File::create(path)?;
                t.write_csv(result.market.n(), file)?;
                if !t.diagnostics.is_empty() {
                    let path = dir.join(format!("diagnostics_r{:03}.csv", t.replication));
                    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
                    w.write_record([
                        "episode",
                        "man",
                        "woman",
                        "plays",
                        "u_hat",
                        "u_true",
                        "baseline_before",
                        "baseline_after",
                        "improving",
                    ])?;
                    for row in &t.diagnostics {
                        w.write_record([
                            row.episode.to_string(),
                            row.man.to_string(),
                            row.woman.to_string(),
                            row.plays.to_string(),
                            row.u_hat.map(|v| v.to_string()).unwrap_or_default(),
                            row.u_true.to_string(),
                            row.baseline_before.to_string(),
                            row.baseline_after.to_string(),
                            if row.improving { "1" } else { "0" }.to_string(),
                        ])?;
                    }
                    w.flush()?;
                }
            }
        }
        RunArtifacts::Solver(outs) => {
            for (r, o) in outs.iter().enumerate() {
                let path = dir.join(format!("solver_r{r:03}.csv"));
                let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
                w.write_record(["iter", "residual_regularized", "residual_simplified", "step_l1"])?;
                for row in &o.log {
                    w.write_record([
                        row.iter.to_string(),
                        row.residual_regularized.to_string(),
                        row.residual_simplified.to_string(),
                        row.step_l1.to_string(),
                    ])?;
                }
                w.flush()?;
            }
        }
    }
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&result.summary)? + "\n",
    )?;
    Ok(result.summary)
}
