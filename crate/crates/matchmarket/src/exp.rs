//! The EXP learner: exponential-weight proposals from bandit feedback.
//!
//! Each man keeps a nonnegative score vector `L` and plays the logit map
//!
//! ```text
//! X_w = exp(eta_t * L_w) / sum_w' exp(eta_t * L_w')
//! ```
//!
//! mixed with uniform exploration, `Xhat = (1 - gamma_t) * X + gamma_t / n`.
//! After proposing to woman `w` he importance-weights his observed reward,
//! `vhat_w = reward * 1{accepted} / Xhat_w`, adds it to `L_w`, and moves on.
//! The estimate is conditionally unbiased for the payoff gradient and bounded
//! by `n / gamma_t` since rewards live in [0, 1] and `Xhat_w >= gamma_t / n`.
//!
//! Scores accumulate unscaled; the logit map applies the current `eta_t` to
//! the whole history at read time, which is what makes decreasing stepsizes
//! behave (the map reads `eta_t * L_{t-1}`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::ManFeedback;
use crate::market::Matching;

/// Mixing parameters are clamped into (0, 1 - GAMMA_MARGIN].
const GAMMA_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("gamma = {0} outside (0, 1]")]
    BadGamma(f64),
    #[error("adjusted proposal probability {0} must be positive")]
    BadProposalProbability(f64),
}

/// Stepsize/mixing schedules `(eta_t, gamma_t)`.
///
/// `Theorem3` is the logarithmic-regret family `eta = 1/sqrt(t)`,
/// `gamma = M log(t)/t`; `Local` is the local-convergence family
/// `gamma = t^(-1/3)`, `eta = t^(-3/4)`; `Custom` exposes general power laws.
/// `gamma` is clamped into (0, 1 - 1e-9] and evaluated with `log(max(t, 2))`
/// so the first round is well defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Theorem3 { m_big: f64 },
    Local,
    Custom { eta_scale: f64, eta_exp: f64, gamma_scale: f64, gamma_exp: f64 },
}

impl Schedule {
    /// The regret-theorem constant `M = (4n/c) log(horizon)`, given a lower
    /// bound `c` on the schedule constant.
    pub fn theorem3_from_constant(n: usize, c: f64, horizon: u64) -> Self {
        assert!(c > 0.0, "the schedule constant must be positive");
        assert!(horizon >= 2, "horizon must be at least 2");
        Schedule::Theorem3 { m_big: 4.0 * n as f64 / c * (horizon as f64).ln() }
    }

    pub fn eta(&self, t: u64) -> f64 {
        let tf = t.max(1) as f64;
        match self {
            Schedule::Theorem3 { .. } => 1.0 / tf.sqrt(),
            Schedule::Local => tf.powf(-0.75),
            Schedule::Custom { eta_scale, eta_exp, .. } => eta_scale * tf.powf(-eta_exp),
        }
    }

    pub fn gamma(&self, t: u64) -> f64 {
        let tf = t.max(1) as f64;
        let raw = match self {
            Schedule::Theorem3 { m_big } => m_big * (tf.max(2.0)).ln() / tf,
            Schedule::Local => tf.powf(-1.0 / 3.0),
            Schedule::Custom { gamma_scale, gamma_exp, .. } => gamma_scale * tf.powf(-gamma_exp),
        };
        raw.clamp(f64::MIN_POSITIVE, 1.0 - GAMMA_MARGIN)
    }

    pub fn inv_eta(&self, t: u64) -> f64 {
        1.0 / self.eta(t)
    }
}

/// The logit map with max-subtraction: a valid simplex vector for arbitrary
/// finite scores, invariant to adding a constant to every score.
pub fn logit_strategy(scores: &[f64], eta: f64) -> Vec<f64> {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|&s| (eta * (s - top)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Uniform mixing: `(1 - gamma) x + gamma / n`, keeping every entry at least
/// `gamma / n`. Accepts `gamma` in (0, 1] (`gamma = 1` is the uniform law).
pub fn adjust(x: &[f64], gamma: f64) -> Result<Vec<f64>, ExpError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ExpError::BadGamma(gamma));
    }
    let floor = gamma / x.len() as f64;
    Ok(x.iter().map(|&p| (1.0 - gamma) * p + floor).collect())
}

/// Importance-weighted gradient estimate for one resolved round: zero
/// everywhere except the proposed coordinate, which carries
/// `reward / x_hat` when the proposal was accepted.
pub fn gradient_estimate(
    n: usize,
    proposal: usize,
    accepted: bool,
    reward: f64,
    x_hat_at_proposal: f64,
) -> Result<Vec<f64>, ExpError> {
    if !(x_hat_at_proposal > 0.0) {
        return Err(ExpError::BadProposalProbability(x_hat_at_proposal));
    }
    debug_assert!((0.0..=1.0).contains(&reward), "rewards live in [0, 1]");
    let mut v = vec![0.0; n];
    if accepted {
        v[proposal] = reward / x_hat_at_proposal;
    }
    Ok(v)
}

/// Per-man EXP state: score vector, round counter, and schedule.
#[derive(Debug, Clone)]
pub struct ExpLearner {
    n: usize,
    l_hat: Vec<f64>,
    t: u64,
    schedule: Schedule,
    /// Per-round mixing override (the gap-oracle wiring sets this).
    gamma_override: Option<f64>,
}

impl ExpLearner {
    pub fn new(n: usize, schedule: Schedule) -> Self {
        ExpLearner { n, l_hat: vec![0.0; n], t: 1, schedule, gamma_override: None }
    }

    /// Starts the learner at round `t0` with the given scores (the
    /// local-convergence probe initializes inside a neighbourhood).
    pub fn with_initial_scores(n: usize, schedule: Schedule, t0: u64, l_hat: Vec<f64>) -> Self {
        assert_eq!(l_hat.len(), n);
        assert!(t0 >= 1);
        ExpLearner { n, l_hat, t: t0, schedule, gamma_override: None }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn scores(&self) -> &[f64] {
        &self.l_hat
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn eta(&self) -> f64 {
        self.schedule.eta(self.t)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_override.unwrap_or_else(|| self.schedule.gamma(self.t))
    }

    /// Installs (or clears) a per-round mixing override; used by the
    /// decentralized gap-oracle wiring.
    pub fn set_gamma_override(&mut self, gamma: Option<f64>) {
        if let Some(g) = gamma {
            assert!(g > 0.0 && g < 1.0, "gamma override must lie in (0, 1)");
        }
        self.gamma_override = gamma;
    }

    /// The logit-map strategy `X_t` for the current round.
    pub fn mixed_strategy(&self) -> Vec<f64> {
        logit_strategy(&self.l_hat, self.eta())
    }

    /// The adjusted strategy `Xhat_t` the proposal is drawn from.
    pub fn adjusted_strategy(&self) -> Vec<f64> {
        adjust(&self.mixed_strategy(), self.gamma()).expect("schedule gamma lies in (0, 1)")
    }

    /// Consumes the round's feedback: accumulates the importance-weighted
    /// estimate into the scores and advances the round counter.
    pub fn observe(&mut self, fb: &ManFeedback) {
        debug_assert!(fb.is_consistent(), "feedback schema violated");
        let x_hat = self.adjusted_strategy()[fb.proposal];
        let estimate = gradient_estimate(
            self.n,
            fb.proposal,
            fb.accepted,
            fb.reward.unwrap_or(0.0),
            x_hat,
        )
        .expect("adjusted probabilities are positive");
        for (l, e) in self.l_hat.iter_mut().zip(estimate) {
            *l += e;
        }
        self.t += 1;
        self.gamma_override = None;
    }
}

/// Stable-regret counter: the running number of rounds whose proposal profile
/// differs from the target matching. Row `t` of the result covers rounds
/// `1..=t+1`.
pub fn stable_regret(proposals: &[Vec<usize>], target: &Matching) -> Vec<u64> {
    let mut out = Vec::with_capacity(proposals.len());
    let mut count = 0u64;
    for round in proposals {
        let hit = round.len() == target.n()
            && round
                .iter()
                .enumerate()
                .all(|(m, &w)| target.partner_of_man(m) == Some(w));
        if !hit {
            count += 1;
        }
        out.push(count);
    }
    out
}
