//! Sample-experimentation learning, the UCB gap oracle, and
//! complete-information best-response dynamics.
//!
//! The trial learner plays a baseline woman most of the time and explores
//! uniformly with probability `eps`; at the end of each episode it averages
//! the rewards observed per woman (counting rejected plays as zero-reward
//! plays), collects the set of women improving on the baseline by at least
//! `delta`, and switches to a uniformly drawn member of that set with
//! probability `1 - omega`. The matching game is weakly acyclic, so with long
//! enough episodes the joint baselines settle on a stable matching with high
//! probability.
//!
//! Best-response dynamics run on pure proposal profiles with an explicit
//! sink. From a good state (every matched man already best-responding) any
//! update sequence that always includes an unsatisfied player reaches a pure
//! equilibrium within `n^2` steps while the ordinal potential strictly
//! increases; from an arbitrary profile, letting deviating matched men move
//! one at a time reaches a good state within another `n^2` steps.

use rand::Rng;

use thiserror::Error;

use crate::equilibrium::{is_pure_ne, NeCertificate};
use crate::feedback::ManFeedback;
use crate::market::{Market, PureProfile, WomanCardinal};

/// Strict-improvement tolerance for "unsatisfied" checks. Pure-profile
/// payoffs are exact products of 0/1 factors with the preference means, so
/// this only guards degenerate user input.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("initial profile is not a good state: matched man {man} is not best-responding")]
    NotAGoodState { man: usize },
    #[error("update subset at step {step} contains no unsatisfied player")]
    BadUpdateSubset { step: usize },
    #[error("best-response path exceeded {bound} steps — ordinal-potential bound violated")]
    ExceededBound { bound: usize },
}

/// Parameters of the sample-experimentation learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialParams {
    /// Exploration probability.
    pub eps: f64,
    /// Improvement tolerance for accepting a new baseline.
    pub delta: f64,
    /// Inertia: probability of keeping the baseline despite an improvement.
    pub omega: f64,
    /// Episode length (rounds per episode) for this man.
    pub tau: u64,
}

impl TrialParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(format!("eps = {} outside [0, 1]", self.eps));
        }
        if !(self.delta > 0.0) {
            return Err(format!("delta = {} must be positive", self.delta));
        }
        if !(0.0..1.0).contains(&self.omega) {
            return Err(format!("omega = {} outside [0, 1)", self.omega));
        }
        if self.tau == 0 {
            return Err("tau must be at least 1".into());
        }
        Ok(())
    }
}

/// The exploration bound `eps <= min{(1-p)/n, delta/(4n), (Delta-delta)/(4n)}`
/// under which the high-probability convergence guarantee applies.
pub fn theorem6_eps_bound(n: usize, p: f64, delta: f64, gap: f64) -> f64 {
    let nf = n as f64;
    ((1.0 - p) / nf).min(delta / (4.0 * nf)).min((gap - delta) / (4.0 * nf))
}

/// Default episode length `200 n^2 ceil(1/eps)` when none is configured.
pub fn default_tau(n: usize, eps: f64) -> u64 {
    let per_eps = if eps > 0.0 { (1.0 / eps).ceil() as u64 } else { 1 };
    200 * (n as u64) * (n as u64) * per_eps
}

/// End-of-episode evaluation snapshot (diagnostics).
#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub episode: u64,
    pub baseline_before: usize,
    pub baseline_after: usize,
    /// Play counts per woman, rejected plays included.
    pub counts: Vec<u64>,
    /// Average utility per woman; `None` for unplayed women.
    pub means: Vec<Option<f64>>,
    /// Women whose average beat the baseline by at least `delta`.
    pub improving: Vec<usize>,
}

/// Per-man sample-experimentation state.
#[derive(Debug, Clone)]
pub struct TrialLearner {
    n: usize,
    params: TrialParams,
    baseline: usize,
    episode: u64,
    rounds_in_episode: u64,
    sums: Vec<f64>,
    counts: Vec<u64>,
    last_report: Option<EpisodeReport>,
}

impl TrialLearner {
    pub fn new(n: usize, params: TrialParams, initial_baseline: usize) -> Self {
        assert!(initial_baseline < n);
        params.validate().expect("valid trial parameters");
        TrialLearner {
            n,
            params,
            baseline: initial_baseline,
            episode: 1,
            rounds_in_episode: 0,
            sums: vec![0.0; n],
            counts: vec![0; n],
            last_report: None,
        }
    }

    pub fn baseline(&self) -> usize {
        self.baseline
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn params(&self) -> &TrialParams {
        &self.params
    }

    /// Takes (and clears) the report of the most recently finished episode.
    pub fn take_report(&mut self) -> Option<EpisodeReport> {
        self.last_report.take()
    }

    /// Draws this round's proposal: the baseline with probability `1 - eps`,
    /// otherwise a uniform woman (the uniform branch may redraw the
    /// baseline, matching the printed `eps / n` rule).
    pub fn act<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.params.eps > 0.0 && rng.random::<f64>() < self.params.eps {
            rng.random_range(0..self.n)
        } else {
            self.baseline
        }
    }

    /// Accumulates one resolved round; closes the episode after `tau` rounds.
    pub fn observe<R: Rng + ?Sized>(&mut self, fb: &ManFeedback, rng: &mut R) {
        debug_assert!(fb.is_consistent(), "feedback schema violated");
        // A rejected play still counts as a play of that woman with reward 0.
        self.counts[fb.proposal] += 1;
        self.sums[fb.proposal] += fb.reward.unwrap_or(0.0);
        self.rounds_in_episode += 1;
        if self.rounds_in_episode == self.params.tau {
            self.end_episode(rng);
        }
    }

    fn end_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        debug_assert_eq!(self.counts.iter().sum::<u64>(), self.params.tau);
        let means: Vec<Option<f64>> = self
            .counts
            .iter()
            .zip(&self.sums)
            .map(|(&c, &s)| if c > 0 { Some(s / c as f64) } else { None })
            .collect();
        // Unplayed women cannot certify an improvement; an unplayed baseline
        // behaves as utility -inf, so any observed woman qualifies.
        let baseline_utility = means[self.baseline].unwrap_or(f64::NEG_INFINITY);
        let improving: Vec<usize> = (0..self.n)
            .filter(|&w| {
                w != self.baseline
                    && means[w].is_some_and(|u| u >= baseline_utility + self.params.delta)
            })
            .collect();
        let baseline_before = self.baseline;
        if !improving.is_empty() {
            // Sample the candidate first, then apply inertia.
            let pick = improving[rng.random_range(0..improving.len())];
            if rng.random::<f64>() >= self.params.omega {
                self.baseline = pick;
            }
        }
        self.last_report = Some(EpisodeReport {
            episode: self.episode,
            baseline_before,
            baseline_after: self.baseline,
            counts: std::mem::replace(&mut self.counts, vec![0; self.n]),
            means,
            improving,
        });
        self.sums = vec![0.0; self.n];
        self.rounds_in_episode = 0;
        self.episode += 1;
    }
}

/// UCB bookkeeping for the decentralized gap oracle: per-woman success
/// counts and accumulated rewards over matched rounds only.
#[derive(Debug, Clone)]
pub struct GapEstimator {
    matches: Vec<u64>,
    rewards: Vec<f64>,
}

impl GapEstimator {
    pub fn new(n: usize) -> Self {
        GapEstimator { matches: vec![0; n], rewards: vec![0.0; n] }
    }

    pub fn n(&self) -> usize {
        self.matches.len()
    }

    /// Counters move only on matched rounds.
    pub fn update(&mut self, w: usize, matched: bool, reward: f64) {
        if matched {
            self.matches[w] += 1;
            self.rewards[w] += reward;
        }
    }

    pub fn observe(&mut self, fb: &ManFeedback) {
        self.update(fb.proposal, fb.accepted, fb.reward.unwrap_or(0.0));
    }

    pub fn mean(&self, w: usize) -> Option<f64> {
        (self.matches[w] > 0).then(|| self.rewards[w] / self.matches[w] as f64)
    }

    fn width(&self, w: usize, t: u64) -> f64 {
        let t = t.max(2) as f64;
        (2.0 * t.ln() / self.matches[w] as f64).sqrt()
    }

    /// `U = min{1, mean + sqrt(2 log t / N)}`; 1 for unplayed women.
    pub fn upper(&self, w: usize, t: u64) -> f64 {
        match self.mean(w) {
            None => 1.0,
            Some(m) => (m + self.width(w, t)).min(1.0),
        }
    }

    /// `L = max{0, mean - sqrt(2 log t / N)}`; 0 for unplayed women.
    pub fn lower(&self, w: usize, t: u64) -> f64 {
        match self.mean(w) {
            None => 0.0,
            Some(m) => (m - self.width(w, t)).max(0.0),
        }
    }

    /// Per-woman gap estimate `max{0, L_w - min_w' U_w'}`.
    pub fn gap_for(&self, w: usize, t: u64) -> f64 {
        let min_upper = (0..self.n())
            .map(|w2| self.upper(w2, t))
            .fold(f64::INFINITY, f64::min);
        (self.lower(w, t) - min_upper).max(0.0)
    }

    /// Overall gap estimate `min_w gap_for(w)`; nonnegative, and zero until
    /// every woman's lower bound clears the smallest upper bound.
    pub fn gap(&self, t: u64) -> f64 {
        (0..self.n())
            .map(|w| self.gap_for(w, t))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    /// Mixing parameter for the EXP wiring: once the estimated gap is
    /// positive, `gamma = M_hat log(t)/t` with `M_hat` built from the
    /// estimated constants; until then a slow fallback `log(t)/sqrt(t)`.
    pub fn gamma(&self, t: u64, horizon: u64) -> f64 {
        let tf = t.max(2) as f64;
        let gap = self.gap(t);
        let observed_min = (0..self.n())
            .filter_map(|w| self.mean(w))
            .fold(f64::INFINITY, f64::min);
        let raw = if gap > 0.0 && observed_min.is_finite() && observed_min > 0.0 {
            let c_hat = 0.125 * gap.min(observed_min);
            let m_hat = 4.0 * self.n() as f64 / c_hat * (horizon.max(2) as f64).ln();
            m_hat * tf.ln() / tf
        } else {
            tf.ln() / tf.sqrt()
        };
        raw.clamp(f64::MIN_POSITIVE, 1.0 - 1e-9)
    }
}

/// Best response of man `m` to a pure profile: the lowest-index maximizer of
/// his gradient row (complete information).
pub fn best_response(market: &Market<f64>, x: &PureProfile, m: usize) -> usize {
    let v = market.gradient_at_pure(x, m);
    let mut best = 0usize;
    for w in 1..v.len() {
        if v[w] > v[best] {
            best = w;
        }
    }
    best
}

/// Whether man `m` can strictly improve on his current payoff.
pub fn is_unsatisfied(market: &Market<f64>, x: &PureProfile, m: usize) -> bool {
    let current = market.payoff_at_pure(x, m);
    let v = market.gradient_at_pure(x, m);
    let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best > current + IMPROVEMENT_TOL
}

pub fn unsatisfied_players(market: &Market<f64>, x: &PureProfile) -> Vec<usize> {
    (0..market.n()).filter(|&m| is_unsatisfied(market, x, m)).collect()
}

/// A pure profile in which every matched man is already best-responding.
/// Unmatched men (sink or out-ranked) are unconstrained.
#[derive(Debug, Clone)]
pub struct GoodState {
    profile: PureProfile,
}

impl GoodState {
    pub fn new(market: &Market<f64>, profile: PureProfile) -> Result<Self, DynamicsError> {
        let matching = market.resolve_proposals(&profile);
        for m in 0..market.n() {
            if matching.partner_of_man(m).is_some() && is_unsatisfied(market, &profile, m) {
                return Err(DynamicsError::NotAGoodState { man: m });
            }
        }
        Ok(GoodState { profile })
    }

    /// The empty proposal profile: trivially good.
    pub fn empty(n: usize) -> Self {
        GoodState { profile: PureProfile::all_sink(n) }
    }

    pub fn profile(&self) -> &PureProfile {
        &self.profile
    }
}

/// A best-response trajectory: the visited profiles, the potential value at
/// each, and the certificate of the terminal profile.
#[derive(Debug, Clone)]
pub struct BrPath {
    pub profiles: Vec<PureProfile>,
    pub potentials: Vec<f64>,
    pub terminal: NeCertificate<f64>,
}

impl BrPath {
    /// Number of update steps (transitions).
    pub fn steps(&self) -> usize {
        self.profiles.len() - 1
    }
}

/// Runs best-response dynamics from a good state. At every step `pick`
/// chooses the subset of players to update (it must contain at least one
/// unsatisfied player); all chosen players simultaneously move to their best
/// responses. Terminates at a certified pure equilibrium within `n^2` steps.
pub fn best_response_path(
    market: &Market<f64>,
    start: &GoodState,
    mut pick: impl FnMut(usize, &PureProfile, &[usize]) -> Vec<usize>,
) -> Result<BrPath, DynamicsError> {
    let n = market.n();
    let bound = n * n;
    let lambda = WomanCardinal::canonical(market);
    let mut current = start.profile().clone();
    let mut profiles = vec![current.clone()];
    let mut potentials = vec![market.potential(&current, &lambda)];
    for step in 0..=bound {
        let unsatisfied = unsatisfied_players(market, &current);
        if unsatisfied.is_empty() {
            let mixed = current
                .to_mixed()
                .expect("terminal best-response profiles have no sink");
            let terminal = is_pure_ne(market, &mixed).expect("profile is pure");
            return Ok(BrPath { profiles, potentials, terminal });
        }
        if step == bound {
            break;
        }
        let subset = pick(step, &current, &unsatisfied);
        if !subset.iter().any(|m| unsatisfied.contains(m)) {
            return Err(DynamicsError::BadUpdateSubset { step });
        }
        let mut next = current.clone();
        for &m in &subset {
            next.set_choice(m, Some(best_response(market, &current, m)));
        }
        current = next;
        profiles.push(current.clone());
        potentials.push(market.potential(&current, &lambda));
    }
    Err(DynamicsError::ExceededBound { bound })
}

/// Update rule that moves every player each step (deferred acceptance is the
/// special case started from the empty profile).
pub fn update_all(_: usize, profile: &PureProfile, _: &[usize]) -> Vec<usize> {
    (0..profile.n()).collect()
}

/// Update rule that moves only the lowest-index unsatisfied player.
pub fn update_single(_: usize, _: &PureProfile, unsatisfied: &[usize]) -> Vec<usize> {
    vec![unsatisfied[0]]
}

/// Constructive weak-acyclicity witness from an arbitrary pure profile:
/// first let deviating *matched* men best-respond one at a time until the
/// profile is a good state (at most `n^2` moves), then follow the
/// good-state dynamics (at most `n^2` more).
pub fn weak_acyclicity_witness(
    market: &Market<f64>,
    start: &PureProfile,
) -> Result<BrPath, DynamicsError> {
    let n = market.n();
    let bound = n * n;
    let lambda = WomanCardinal::canonical(market);
    let mut current = start.clone();
    let mut profiles = vec![current.clone()];
    let mut potentials = vec![market.potential(&current, &lambda)];
    for _ in 0..=bound {
        let matching = market.resolve_proposals(&current);
        let deviator = (0..n).find(|&m| {
            matching.partner_of_man(m).is_some() && is_unsatisfied(market, &current, m)
        });
        match deviator {
            None => {
                let good = GoodState::new(market, current)
                    .expect("no matched man wants to deviate");
                let tail = best_response_path(market, &good, update_single)?;
                // Stitch: tail starts at the good state we already recorded.
                profiles.extend(tail.profiles.into_iter().skip(1));
                potentials.extend(tail.potentials.into_iter().skip(1));
                return Ok(BrPath { profiles, potentials, terminal: tail.terminal });
            }
            Some(m) => {
                current.set_choice(m, Some(best_response(market, &current, m)));
                profiles.push(current.clone());
                potentials.push(market.potential(&current, &lambda));
            }
        }
    }
    Err(DynamicsError::ExceededBound { bound: 2 * bound })
}

/// Expected utility of playing `w` against the others' baselines — the
/// quantity the episode averages estimate (diagnostics).
pub fn utility_against_baselines(
    market: &Market<f64>,
    baselines: &[usize],
    m: usize,
    w: usize,
) -> f64 {
    let mut profile = PureProfile::from_choices(baselines);
    profile.set_choice(m, Some(w));
    let v = market.gradient_at_pure(&profile, m);
    v[w]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::example1_market;
    use crate::market::Matching;
    use crate::sim::{gen_general, gen_hierarchical};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trial_act_eps_zero_is_baseline() {
        let learner = TrialLearner::new(
            3,
            TrialParams { eps: 0.0, delta: 0.05, omega: 0.3, tau: 10 },
            1,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(learner.act(&mut rng), 1);
        }
    }

    #[test]
    fn trial_act_frequency_matches_rule() {
        // P(baseline) = 1 - eps + eps/n.
        let eps = 0.3;
        let n = 4;
        let learner = TrialLearner::new(
            n,
            TrialParams { eps, delta: 0.05, omega: 0.3, tau: 10 },
            2,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000usize;
        let hits = (0..draws).filter(|_| learner.act(&mut rng) == 2).count();
        let p = 1.0 - eps + eps / n as f64;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        assert!(
            ((hits as f64 / draws as f64) - p).abs() <= 3.0 * sigma,
            "freq {} vs p {p}",
            hits as f64 / draws as f64
        );
    }

    #[test]
    fn trial_act_eps_one_is_uniform() {
        let n = 5;
        let learner = TrialLearner::new(
            n,
            TrialParams { eps: 1.0, delta: 0.05, omega: 0.3, tau: 10 },
            0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 50_000usize;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[learner.act(&mut rng)] += 1;
        }
        let expect = draws as f64 / n as f64;
        for c in counts {
            assert!((c as f64 - expect).abs() < 5.0 * expect.sqrt());
        }
    }

    #[test]
    fn episode_end_rules() {
        let params = TrialParams { eps: 0.5, delta: 0.1, omega: 0.0, tau: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);

        // All sampled utilities equal: improvement set empty, baseline kept.
        let mut learner = TrialLearner::new(2, params, 0);
        for t in 0..4 {
            let w = (t % 2) as usize;
            learner.observe(&ManFeedback::matched(t as u64, w, 0.5), &mut rng);
        }
        let report = learner.take_report().unwrap();
        assert!(report.improving.is_empty());
        assert_eq!(learner.baseline(), 0);

        // A woman clearing baseline + 2 delta enters the set; with omega = 0
        // the baseline switches.
        let mut learner = TrialLearner::new(2, params, 0);
        for t in 0..4 {
            let (w, r) = if t % 2 == 0 { (0, 0.2) } else { (1, 0.2 + 2.0 * params.delta) };
            learner.observe(&ManFeedback::matched(t as u64, w, r), &mut rng);
        }
        let report = learner.take_report().unwrap();
        assert_eq!(report.improving, vec![1]);
        assert_eq!(learner.baseline(), 1);

        // An unplayed woman is excluded regardless of the baseline's mean.
        let mut learner = TrialLearner::new(3, params, 0);
        for t in 0..4 {
            learner.observe(&ManFeedback::matched(t as u64, 0, 0.1), &mut rng);
        }
        let report = learner.take_report().unwrap();
        assert!(report.means[1].is_none() && report.means[2].is_none());
        assert!(report.improving.is_empty());
    }

    #[test]
    fn rejected_plays_count_with_zero_reward() {
        let params = TrialParams { eps: 0.5, delta: 0.1, omega: 0.0, tau: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut learner = TrialLearner::new(2, params, 0);
        learner.observe(&ManFeedback::matched(0, 0, 1.0), &mut rng);
        learner.observe(&ManFeedback::rejected(1, 0), &mut rng);
        let report = learner.take_report().unwrap();
        assert_eq!(report.counts[0], 2);
        assert_eq!(report.means[0], Some(0.5));
    }

    #[test]
    fn inertia_blocks_switches_statistically() {
        let params = TrialParams { eps: 0.5, delta: 0.1, omega: 0.4, tau: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 20_000;
        let mut switched = 0;
        for _ in 0..trials {
            let mut learner = TrialLearner::new(2, params, 0);
            learner.observe(&ManFeedback::matched(0, 0, 0.1), &mut rng);
            learner.observe(&ManFeedback::matched(1, 1, 0.9), &mut rng);
            if learner.baseline() == 1 {
                switched += 1;
            }
        }
        let p = 1.0 - params.omega;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(((switched as f64 / trials as f64) - p).abs() <= 4.0 * sigma);
    }

    #[test]
    fn strict_ne_absorbs_trial_learners() {
        // Deterministic rewards, eps = 0, baselines at the unique stable
        // matching: the improvement set stays empty forever.
        let market = gen_hierarchical(3, 17).unwrap();
        let params = TrialParams { eps: 0.0, delta: 0.05, omega: 0.3, tau: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut learners: Vec<TrialLearner> =
            (0..3).map(|m| TrialLearner::new(3, params, m)).collect();
        for t in 0..30u64 {
            let proposals: Vec<usize> = learners.iter().map(|l| l.act(&mut rng)).collect();
            let profile = PureProfile::from_choices(&proposals);
            let matching = market.resolve_proposals(&profile);
            for (m, learner) in learners.iter_mut().enumerate() {
                let w = proposals[m];
                let fb = if matching.partner_of_man(m) == Some(w) {
                    ManFeedback::matched(t, w, market.mu(m, w).min(1.0))
                } else {
                    ManFeedback::rejected(t, w)
                };
                learner.observe(&fb, &mut rng);
            }
        }
        for (m, learner) in learners.iter().enumerate() {
            assert_eq!(learner.baseline(), m);
        }
    }

    #[test]
    fn ucb_gap_examples() {
        // No matches yet: all lower bounds 0, so the gap is 0.
        let est = GapEstimator::new(3);
        assert_eq!(est.gap(10), 0.0);

        // Two arms, many plays: the good arm's per-arm gap approaches
        // 0.8 minus the confidence widths; the overall gap stays 0 because
        // the weak arm's own lower bound cannot clear the smallest upper.
        let mut est = GapEstimator::new(2);
        for _ in 0..10_000 {
            est.update(0, true, 0.9);
            est.update(1, true, 0.1);
        }
        let t = 100_000;
        let width = (2.0 * (t as f64).ln() / 10_000f64).sqrt();
        let expected = 0.8 - 2.0 * width;
        assert!((est.gap_for(0, t) - expected).abs() <= 1e-9);
        assert_eq!(est.gap_for(1, t), 0.0);
        assert_eq!(est.gap(t), 0.0);
        assert!(est.gap(t) >= 0.0);
    }

    #[test]
    fn ucb_means_are_consistent() {
        let mu = 0.35;
        let mut est = GapEstimator::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 10_000u64;
        for _ in 0..draws {
            let r = if rng.random::<f64>() < mu { 1.0 } else { 0.0 };
            est.update(0, true, r);
        }
        let mean = est.mean(0).unwrap();
        let sigma = (mu * (1.0 - mu) / draws as f64).sqrt();
        assert!((mean - mu).abs() <= 3.0 * sigma);
    }

    #[test]
    fn gap_oracle_gamma_falls_back_until_positive() {
        let est = GapEstimator::new(2);
        let t = 1000;
        assert!((est.gamma(t, 100_000) - (1000f64).ln() / (1000f64).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn best_response_examples() {
        // Empty profile: every gradient entry equals mu, so the best response
        // is the max-mu woman.
        let market = gen_hierarchical(3, 23).unwrap();
        let empty = PureProfile::all_sink(3);
        let br = best_response(&market, &empty, 0);
        let row = market.mu_row(0);
        let argmax = (0..3).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        assert_eq!(br, argmax);

        // Example 1 with m2 on w3 and m3 on w2: m1's best response is w1.
        let (ex1, _) = example1_market(0.1).unwrap();
        let others = PureProfile::new(vec![None, Some(2), Some(1)]);
        assert_eq!(best_response(&ex1, &others, 0), 0);

        // A man matched at a pure equilibrium best-responds with his action.
        let stable = PureProfile::from_choices(&[0, 2, 1]);
        for m in 0..3 {
            assert_eq!(best_response(&ex1, &stable, m), stable.choice(m).unwrap());
            assert!(!is_unsatisfied(&ex1, &stable, m));
        }
    }

    #[test]
    fn br_path_from_empty_profile_reaches_stability() {
        for seed in 0..20u64 {
            let n = 2 + (seed as usize % 4);
            let market = gen_general(n, seed, 0.02).unwrap();
            let path =
                best_response_path(&market, &GoodState::empty(n), update_all).unwrap();
            assert!(path.terminal.certified());
            assert!(path.steps() <= n * n);
            for pair in path.potentials.windows(2) {
                assert!(pair[1] > pair[0], "potential must strictly increase");
            }
        }
        // Hierarchical markets land on the identity (the unique stable matching).
        let market = gen_hierarchical(4, 3).unwrap();
        let path = best_response_path(&market, &GoodState::empty(4), update_all).unwrap();
        let choice = path.profiles.last().unwrap();
        for m in 0..4 {
            assert_eq!(choice.choice(m), Some(m));
        }
        assert_eq!(
            market.resolve_proposals(choice),
            Matching::perfect(vec![0, 1, 2, 3]).unwrap()
        );
    }

    #[test]
    fn br_path_from_ne_is_empty() {
        let (ex1, _) = example1_market(0.1).unwrap();
        let start = GoodState::new(&ex1, PureProfile::from_choices(&[0, 2, 1])).unwrap();
        let path = best_response_path(&ex1, &start, update_single).unwrap();
        assert_eq!(path.steps(), 0);
    }

    #[test]
    fn bad_start_is_refused() {
        let market = gen_hierarchical(3, 31).unwrap();
        // Every man on his worst woman is matched but not best-responding.
        let worst: Vec<usize> = (0..3)
            .map(|m| {
                let row = market.mu_row(m);
                (0..3).min_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
            })
            .collect();
        let profile = PureProfile::from_choices(&worst);
        assert!(matches!(
            GoodState::new(&market, profile),
            Err(DynamicsError::NotAGoodState { .. })
        ));
    }

    #[test]
    fn bad_update_subset_is_refused() {
        let market = gen_hierarchical(2, 37).unwrap();
        let result = best_response_path(&market, &GoodState::empty(2), |_, _, _| vec![]);
        assert!(matches!(result, Err(DynamicsError::BadUpdateSubset { step: 0 })));
    }

    #[test]
    fn witness_examples() {
        let (ex1, _) = example1_market(0.1).unwrap();
        // Starting at an equilibrium: nothing to do.
        let path = weak_acyclicity_witness(&ex1, &PureProfile::from_choices(&[0, 2, 1])).unwrap();
        assert_eq!(path.steps(), 0);
        assert!(path.terminal.certified());

        // Everyone on w0: reaches a stable matching within 2 n^2 steps.
        let path = weak_acyclicity_witness(&ex1, &PureProfile::from_choices(&[0, 0, 0])).unwrap();
        assert!(path.terminal.certified());
        assert!(path.steps() <= 2 * 9);
    }

    #[test]
    fn witness_property_small_markets() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..100u64 {
            let n = 2 + (seed as usize % 5);
            let market = gen_general(n, seed, 0.01).unwrap();
            let start = PureProfile::from_choices(
                &(0..n).map(|_| rng.random_range(0..n)).collect::<Vec<_>>(),
            );
            let path = weak_acyclicity_witness(&market, &start).unwrap();
            assert!(path.terminal.certified(), "seed {seed}");
            assert!(path.steps() <= 2 * n * n, "seed {seed}");
        }
    }

    #[test]
    fn random_subset_paths_respect_step_bound() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for seed in 0..100u64 {
            let n = 2 + (seed as usize % 5);
            let market = gen_general(n, seed, 0.01).unwrap();
            let path = best_response_path(&market, &GoodState::empty(n), |_, _, unsat| {
                // A random subset forced to contain one unsatisfied player.
                let mut subset: Vec<usize> =
                    (0..n).filter(|_| rng.random::<f64>() < 0.5).collect();
                let forced = unsat[rng.random_range(0..unsat.len())];
                if !subset.contains(&forced) {
                    subset.push(forced);
                }
                subset
            })
            .unwrap();
            assert!(path.steps() <= n * n, "seed {seed}");
            assert!(path.terminal.certified(), "seed {seed}");
            for pair in path.potentials.windows(2) {
                assert!(pair[1] > pair[0], "seed {seed}");
            }
        }
    }

    #[test]
    fn theorem6_bound_shape() {
        let b = theorem6_eps_bound(3, 0.9, 0.15, 0.3);
        assert!((b - (0.1f64 / 3.0).min(0.15 / 12.0).min(0.15 / 12.0)).abs() <= 1e-15);
    }

    #[test]
    fn utility_against_baselines_matches_gradient() {
        let (ex1, _) = example1_market(0.1).unwrap();
        let baselines = vec![0, 2, 1];
        // m0 playing w1 against (m1 -> w2, m2 -> w1): w1 ranks m0 top, so he
        // would be accepted and earn mu.
        let u = utility_against_baselines(&ex1, &baselines, 0, 1);
        assert_eq!(u, ex1.mu(0, 1));
    }
}
