//! Round-by-round market process: proposal collection, women's acceptance,
//! stochastic rewards, feedback routing, metrics, and seeded reproducibility.
//!
//! A round takes one proposal per man (or a sink for "no proposal"), matches
//! every proposed-to woman with her highest-ranked proposer, draws rewards
//! for the matched pairs, and hands each man exactly his own slice of the
//! outcome. In waiting-list mode a rejected man additionally learns how many
//! higher-ranked men proposed to the same woman.
//!
//! All randomness descends from one master seed through per-man,
//! per-replication streams, so adding instrumentation never perturbs
//! sampling and identical configurations replay byte-identically.

mod engine;
mod gen;
mod probe;

pub use engine::{
    run, run_to_dir, simulate_replication, DiagRow, LearnerSpec, MarketSource, Metrics,
    RunArtifacts, RunConfig, RunResult, ScheduleConfig, StartSpec, Summary, TauSpec, Trajectory,
    TrialMode, UpdaterSpec,
};
pub use gen::{gen_general, gen_hierarchical};
pub use probe::{local_convergence_probe, ProbeOptions, ProbeReport};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::ManFeedback;
use crate::market::{Market, MarketError, Matching, PureProfile};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("requested gap {min_gap} is infeasible for n = {n} values in (0, 1]")]
    InfeasibleGap { n: usize, min_gap: f64 },
    #[error("profile is not a certified pure equilibrium (violation {violation})")]
    NotAPureNe { violation: f64 },
    #[error("the schedule never satisfies the probe's stepsize condition")]
    NoValidStart,
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Equilibrium(#[from] crate::equilibrium::EquilibriumError),
    #[error(transparent)]
    Monotone(#[from] crate::monotone::MonotoneError),
    #[error(transparent)]
    Dynamics(#[from] crate::baseline::DynamicsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// What a rejected man gets to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Rejection carries no information beyond the rejection itself.
    #[default]
    Standard,
    /// Rejection also reveals the number of higher-ranked proposers.
    WaitingList,
}

/// The resolved outcome of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// Per-man proposal; `None` is the sink (no proposal).
    pub proposals: Vec<Option<usize>>,
    /// Each proposed-to woman matched with her best proposer.
    pub matching: Matching,
    /// Realized rewards, present exactly for matched men.
    pub rewards: Vec<Option<f64>>,
    /// Waiting-list counts (higher-ranked proposers to the man's target),
    /// present only in waiting-list mode.
    pub waitlist: Option<Vec<Option<u32>>>,
}

impl RoundOutcome {
    /// The feedback slice man `m` is allowed to observe; `None` if he sat out.
    pub fn feedback_for(&self, t: u64, m: usize) -> Option<ManFeedback> {
        let w = self.proposals[m]?;
        let mut fb = if self.matching.partner_of_man(m) == Some(w) {
            ManFeedback::matched(t, w, self.rewards[m].expect("matched men have rewards"))
        } else {
            ManFeedback::rejected(t, w)
        };
        if let Some(lists) = &self.waitlist {
            fb = fb.with_waitlist(lists[m].expect("proposing men have counts"));
        }
        Some(fb)
    }
}

/// Resolves one round: acceptance by rank, rewards for matched pairs from
/// the per-man reward streams, waiting-list counts when requested.
pub fn resolve_round<R: Rng>(
    market: &Market<f64>,
    proposals: &PureProfile,
    mode: FeedbackMode,
    reward_rngs: &mut [R],
) -> Result<RoundOutcome, MarketError> {
    let n = market.n();
    assert_eq!(proposals.n(), n);
    assert_eq!(reward_rngs.len(), n);
    let matching = market.resolve_proposals(proposals);
    let mut rewards = vec![None; n];
    for m in 0..n {
        if let Some(w) = matching.partner_of_man(m) {
            rewards[m] = Some(market.sample_reward(m, w, &mut reward_rngs[m])?);
        }
    }
    let waitlist = match mode {
        FeedbackMode::Standard => None,
        FeedbackMode::WaitingList => {
            let mut counts: Vec<Option<u32>> = vec![None; n];
            for m in 0..n {
                if let Some(w) = proposals.choice(m) {
                    let ahead = market
                        .ranked_above(w, m)
                        .iter()
                        .filter(|&&k| proposals.choice(k) == Some(w))
                        .count() as u32;
                    counts[m] = Some(ahead);
                }
            }
            Some(counts)
        }
    };
    Ok(RoundOutcome {
        proposals: proposals.choices().to_vec(),
        matching,
        rewards,
        waitlist,
    })
}

/// SplitMix64 step.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from `(master, lane, index)`.
pub fn derive_seed(master: u64, lane: u64, index: u64) -> u64 {
    let mut state = master;
    let a = splitmix64(&mut state);
    let mut state = a ^ lane.wrapping_mul(0xD1B54A32D192ED03);
    let b = splitmix64(&mut state);
    let mut state = b ^ index.wrapping_mul(0x8CB92BA72F3D8DD7);
    splitmix64(&mut state)
}

/// Draws an index from a probability vector by CDF inversion.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
