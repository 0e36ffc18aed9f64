//! Market model: men's cardinal preferences, women's ordinal preferences,
//! reward distributions, and the payoff machinery of the matching game.
//!
//! A market couples an `n x n` matrix of positive means `mu[m][w]` (man `m`'s
//! cardinal preference for woman `w`) with one ordinal ranking per woman.
//! The game payoff of man `m` under a mixed profile `x` is
//!
//! ```text
//! u_m(x) = sum_w mu[m][w] * prod_{k preferred to m by w} (1 - x[k][w]) * x[m][w]
//! ```
//!
//! so its gradient in `x[m][w]` is `v_mw(x) = mu[m][w] * prod(1 - x[k][w])`,
//! independent of man `m`'s own row. Blocking pairs, stability, men-proposing
//! deferred acceptance, and the ordinal potential over pure profiles live
//! here as well.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Errors from market construction and the market-level predicates.
#[derive(Debug, Error)]
pub enum MarketError {
    #[error("market needs at least one man and one woman")]
    Empty,
    #[error("mu must be an n x n matrix, got row {row} of length {len} (n = {n})")]
    BadShape { row: usize, len: usize, n: usize },
    #[error("mu[{man}][{woman}] = {value} is not strictly positive")]
    NonPositivePreference { man: usize, woman: usize, value: f64 },
    #[error("man {man} has tied preferences (two equal mu entries)")]
    TiedPreferences { man: usize },
    #[error("women_rank[{woman}] is not a permutation of 0..n")]
    BadPermutation { woman: usize },
    #[error("matching is not perfect")]
    NotPerfect,
    #[error("matching maps two men to woman {woman}")]
    NotInjective { woman: usize },
    #[error("index {index} out of range for market of size {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("profile row {row} is not a probability vector (sum deviates by {dev} or has a negative entry)")]
    NotASimplexRow { row: usize, dev: f64 },
    #[error("profile is not pure")]
    NotPure,
    #[error("cardinal values for woman {woman} disagree with her ordinal ranking")]
    InconsistentCardinal { woman: usize },
    #[error("reward sampling needs every mu <= 1, but mu_max = {mu_max}; normalize the market first")]
    RewardMeanOutOfRange { mu_max: f64 },
    #[error("beta rewards need every mu < 1, but mu_max = {mu_max}")]
    BetaMeanAtOne { mu_max: f64 },
}

/// Family of reward distributions `D_{mw}`; the mean is always `mu[m][w]`
/// and the support stays within [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// Reward 1 with probability `mu`, else 0.
    Bernoulli,
    /// Beta with mean `mu` and the given concentration (`alpha + beta`).
    Beta { concentration: f64 },
    /// Always exactly `mu`.
    Deterministic,
}

impl RewardKind {
    /// `sigma^2 = E[reward^2]` for a pair with mean `mu` (Bernoulli: `mu`;
    /// Beta: `mu(1-mu)/(kappa+1) + mu^2`; deterministic: `mu^2`).
    pub fn second_moment(&self, mu: f64) -> f64 {
        match self {
            RewardKind::Bernoulli => mu,
            RewardKind::Beta { concentration } => mu * (1.0 - mu) / (concentration + 1.0) + mu * mu,
            RewardKind::Deterministic => mu * mu,
        }
    }
}

/// Complete-information market instance.
///
/// Immutable after construction; all operations are pure functions of their
/// inputs, so a `Market` can be shared read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Market<S> {
    n: usize,
    /// Row-major `n*n`: `mu[m * n + w]`.
    mu: Vec<S>,
    /// `women_rank[w]` lists men from most to least preferred.
    women_rank: Vec<Vec<usize>>,
    /// `rank_of[w][m]` = position of `m` in `women_rank[w]` (0 = most preferred).
    rank_of: Vec<Vec<usize>>,
    reward: RewardKind,
    delta: S,
    mu_min: S,
    mu_max: S,
}

impl<S: Real> Market<S> {
    /// Validates and builds a market from per-man preference rows and
    /// per-woman rankings.
    pub fn new(
        mu_rows: Vec<Vec<S>>,
        women_rank: Vec<Vec<usize>>,
        reward: RewardKind,
    ) -> Result<Self, MarketError> {
        let n = mu_rows.len();
        if n == 0 {
            return Err(MarketError::Empty);
        }
        if women_rank.len() != n {
            return Err(MarketError::BadShape { row: 0, len: women_rank.len(), n });
        }
        let mut mu = Vec::with_capacity(n * n);
        for (m, row) in mu_rows.iter().enumerate() {
            if row.len() != n {
                return Err(MarketError::BadShape { row: m, len: row.len(), n });
            }
            for (w, &v) in row.iter().enumerate() {
                if !(v > S::zero()) || !v.is_finite() {
                    return Err(MarketError::NonPositivePreference {
                        man: m,
                        woman: w,
                        value: v.to_f64().unwrap_or(f64::NAN),
                    });
                }
                mu.push(v);
            }
        }
        // No ties within a row: sort a copy and look for equal neighbours.
        for m in 0..n {
            let mut sorted: Vec<S> = mu[m * n..(m + 1) * n].to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            if sorted.windows(2).any(|p| p[0] == p[1]) {
                return Err(MarketError::TiedPreferences { man: m });
            }
        }
        let mut rank_of = vec![vec![0usize; n]; n];
        for (w, ranking) in women_rank.iter().enumerate() {
            if ranking.len() != n {
                return Err(MarketError::BadPermutation { woman: w });
            }
            let mut seen = vec![false; n];
            for (pos, &m) in ranking.iter().enumerate() {
                if m >= n || seen[m] {
                    return Err(MarketError::BadPermutation { woman: w });
                }
                seen[m] = true;
                rank_of[w][m] = pos;
            }
        }
        let mut delta = S::infinity();
        let mut mu_min = S::infinity();
        let mut mu_max = S::zero();
        for m in 0..n {
            for w in 0..n {
                let v = mu[m * n + w];
                mu_min = mu_min.min(v);
                mu_max = mu_max.max(v);
                for w2 in (w + 1)..n {
                    delta = delta.min((v - mu[m * n + w2]).abs());
                }
            }
        }
        if n == 1 {
            // A single woman per man leaves no pairwise gap; use mu itself.
            delta = mu_min;
        }
        Ok(Market { n, mu, women_rank, rank_of, reward, delta, mu_min, mu_max })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward
    }

    /// Replaces the reward-distribution family, keeping the preferences.
    pub fn with_reward(mut self, reward: RewardKind) -> Self {
        self.reward = reward;
        self
    }

    pub fn mu(&self, m: usize, w: usize) -> S {
        self.check(m);
        self.check(w);
        self.mu[m * self.n + w]
    }

    pub fn mu_row(&self, m: usize) -> &[S] {
        self.check(m);
        &self.mu[m * self.n..(m + 1) * self.n]
    }

    /// Minimum preference separation `min_{m, w != w'} |mu[m][w] - mu[m][w']|`.
    pub fn delta(&self) -> S {
        self.delta
    }

    pub fn mu_min(&self) -> S {
        self.mu_min
    }

    pub fn mu_max(&self) -> S {
        self.mu_max
    }

    /// Schedule constant `c = min{Delta, mu_min} / 8` (the market-intrinsic
    /// variant used by the local-convergence analysis).
    pub fn c_local(&self) -> S {
        let eighth = S::from_f64_lossy(0.125);
        self.delta.min(self.mu_min) * eighth
    }

    /// Schedule constant `c = min{Delta, min_m mu[m][partner(m)]} / 8`
    /// relative to a reference stable matching.
    pub fn c_for_matching(&self, matching: &Matching) -> Result<S, MarketError> {
        if !matching.is_perfect() {
            return Err(MarketError::NotPerfect);
        }
        let mut worst = self.delta;
        for m in 0..self.n {
            let w = matching.partner_of_man(m).expect("perfect");
            worst = worst.min(self.mu(m, w));
        }
        Ok(worst * S::from_f64_lossy(0.125))
    }

    /// True iff woman `w` strictly prefers man `a` over man `b`.
    pub fn prefers(&self, w: usize, a: usize, b: usize) -> bool {
        self.rank_of[w][a] < self.rank_of[w][b]
    }

    /// Men that woman `w` strictly prefers over `m`, best first.
    pub fn ranked_above(&self, w: usize, m: usize) -> &[usize] {
        let pos = self.rank_of[w][m];
        &self.women_rank[w][..pos]
    }

    pub fn women_rank(&self, w: usize) -> &[usize] {
        &self.women_rank[w]
    }

    /// A copy with every `mu` divided by `mu_max`, bringing preferences into
    /// (0, 1] so reward distributions become admissible.
    pub fn normalized(&self) -> Self {
        let scale = self.mu_max;
        let mu_rows = (0..self.n)
            .map(|m| self.mu_row(m).iter().map(|&v| v / scale).collect())
            .collect();
        Market::new(mu_rows, self.women_rank.clone(), self.reward)
            .expect("scaling preserves validity")
    }

    fn check(&self, index: usize) {
        assert!(index < self.n, "index {index} out of range for market of size {}", self.n);
    }

    /// Payoff gradient of man `m`: `v_mw(x) = mu[m][w] * prod_{k >_w m} (1 - x[k][w])`.
    ///
    /// Independent of row `x[m]`.
    pub fn gradient(&self, x: &MixedProfile<S>, m: usize) -> Vec<S> {
        self.check(m);
        assert_eq!(x.n(), self.n, "profile size mismatch");
        (0..self.n)
            .map(|w| {
                let mut prod = S::one();
                for &k in self.ranked_above(w, m) {
                    prod = prod * (S::one() - x.get(k, w));
                }
                self.mu(m, w) * prod
            })
            .collect()
    }

    /// Game payoff `u_m(x) = <x_m, v_m(x)>`.
    pub fn payoff(&self, x: &MixedProfile<S>, m: usize) -> S {
        let v = self.gradient(x, m);
        x.row(m).iter().zip(v).map(|(&p, g)| p * g).sum()
    }

    /// Gradient at a pure (possibly sink-padded) profile; exact 0/1 products.
    pub fn gradient_at_pure(&self, p: &PureProfile, m: usize) -> Vec<S> {
        self.check(m);
        assert_eq!(p.n(), self.n, "profile size mismatch");
        (0..self.n)
            .map(|w| {
                let blocked = self
                    .ranked_above(w, m)
                    .iter()
                    .any(|&k| p.choice(k) == Some(w));
                if blocked {
                    S::zero()
                } else {
                    self.mu(m, w)
                }
            })
            .collect()
    }

    /// Payoff at a pure profile: `mu[m][w]` if `m` proposes to `w` and no
    /// higher-ranked man does, else 0. A sink (no proposal) pays 0.
    pub fn payoff_at_pure(&self, p: &PureProfile, m: usize) -> S {
        match p.choice(m) {
            None => S::zero(),
            Some(w) => {
                let blocked = self
                    .ranked_above(w, m)
                    .iter()
                    .any(|&k| p.choice(k) == Some(w));
                if blocked {
                    S::zero()
                } else {
                    self.mu(m, w)
                }
            }
        }
    }

    /// Resolves a proposal profile the way the women do: each proposed-to
    /// woman accepts her highest-ranked proposer and rejects the rest.
    pub fn resolve_proposals(&self, proposals: &PureProfile) -> Matching {
        assert_eq!(proposals.n(), self.n, "profile size mismatch");
        let mut best: Vec<Option<usize>> = vec![None; self.n];
        for m in 0..self.n {
            if let Some(w) = proposals.choice(m) {
                match best[w] {
                    None => best[w] = Some(m),
                    Some(cur) => {
                        if self.prefers(w, m, cur) {
                            best[w] = Some(m);
                        }
                    }
                }
            }
        }
        let mut pairs = vec![None; self.n];
        for (w, owner) in best.iter().enumerate() {
            if let Some(m) = owner {
                pairs[*m] = Some(w);
            }
        }
        Matching { pairs }
    }

    /// Blocking-pair predicate over a perfect matching: true iff `m` and `w`
    /// both strictly prefer each other to their current partners. A pair
    /// already matched to each other is not blocking.
    pub fn is_blocking_pair(
        &self,
        matching: &Matching,
        m: usize,
        w: usize,
    ) -> Result<bool, MarketError> {
        if m >= self.n || w >= self.n {
            return Err(MarketError::IndexOutOfRange { index: m.max(w), n: self.n });
        }
        if !matching.is_perfect() {
            return Err(MarketError::NotPerfect);
        }
        let w_m = matching.partner_of_man(m).expect("perfect");
        if w_m == w {
            return Ok(false);
        }
        let m_w = matching.partner_of_woman(w).expect("perfect");
        Ok(self.mu(m, w) > self.mu(m, w_m) && self.prefers(w, m, m_w))
    }

    /// True iff the perfect matching has no blocking pair (O(n^2) scan).
    pub fn is_stable(&self, matching: &Matching) -> Result<bool, MarketError> {
        if !matching.is_perfect() {
            return Err(MarketError::NotPerfect);
        }
        for m in 0..self.n {
            for w in 0..self.n {
                if self.is_blocking_pair(matching, m, w)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Men-proposing deferred acceptance (Gale-Shapley). Returns a perfect
    /// stable matching within `n^2` proposal rounds; the outcome is
    /// men-optimal among stable matchings.
    pub fn deferred_acceptance(&self) -> Matching {
        let n = self.n;
        // Each man's women sorted by his preference, best first.
        let pref_order: Vec<Vec<usize>> = (0..n)
            .map(|m| {
                let row = self.mu_row(m);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).expect("finite"));
                order
            })
            .collect();
        let mut next_choice = vec![0usize; n];
        let mut woman_holds: Vec<Option<usize>> = vec![None; n];
        let mut free: Vec<usize> = (0..n).rev().collect();
        while let Some(m) = free.pop() {
            let w = pref_order[m][next_choice[m]];
            next_choice[m] += 1;
            match woman_holds[w] {
                None => woman_holds[w] = Some(m),
                Some(cur) => {
                    if self.prefers(w, m, cur) {
                        woman_holds[w] = Some(m);
                        free.push(cur);
                    } else {
                        free.push(m);
                    }
                }
            }
        }
        let mut pairs = vec![None; n];
        for (w, m) in woman_holds.iter().enumerate() {
            pairs[m.expect("every woman holds a proposal at termination")] = Some(w);
        }
        Matching { pairs }
    }

    /// Ordinal potential of a pure profile: `Phi(x) = sum_w r_w(x)` where
    /// `r_w` is the cardinal value of the highest-ranked proposer to `w`
    /// (0 when nobody proposes). Strictly increases along best-response
    /// updates started from a good state.
    pub fn potential(&self, p: &PureProfile, lambda: &WomanCardinal<S>) -> S {
        assert_eq!(p.n(), self.n, "profile size mismatch");
        assert_eq!(lambda.n(), self.n, "cardinal size mismatch");
        let matching = self.resolve_proposals(p);
        (0..self.n)
            .map(|w| match matching.partner_of_woman(w) {
                Some(m) => lambda.get(w, m),
                None => S::zero(),
            })
            .sum()
    }

    /// Draws a reward for the matched pair `(m, w)` from `D_{mw}`.
    ///
    /// Requires `mu_max <= 1` (strictly below 1 for Beta rewards).
    pub fn sample_reward<R: Rng + ?Sized>(
        &self,
        m: usize,
        w: usize,
        rng: &mut R,
    ) -> Result<f64, MarketError> {
        let mu = self.mu(m, w).to_f64().expect("scalar fits f64");
        let mu_max = self.mu_max.to_f64().expect("scalar fits f64");
        if mu_max > 1.0 {
            return Err(MarketError::RewardMeanOutOfRange { mu_max });
        }
        Ok(match self.reward {
            RewardKind::Deterministic => mu,
            RewardKind::Bernoulli => {
                if rng.random::<f64>() < mu {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::Beta { concentration } => {
                if mu >= 1.0 {
                    return Err(MarketError::BetaMeanAtOne { mu_max });
                }
                let a = mu * concentration;
                let b = (1.0 - mu) * concentration;
                let beta = rand_distr::Beta::new(a, b).expect("positive shape parameters");
                beta.sample(rng)
            }
        })
    }

    /// Maximum second moment of the configured reward distributions.
    pub fn sigma_sq(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.n {
            for w in 0..self.n {
                let mu = self.mu(m, w).to_f64().expect("scalar fits f64");
                worst = worst.max(self.reward.second_moment(mu));
            }
        }
        worst
    }
}

/// Partial matching: an injective map from men to women.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// `pairs[m]` is man `m`'s partner, if matched.
    pairs: Vec<Option<usize>>,
}

impl Matching {
    /// A perfect matching from a per-man assignment.
    pub fn perfect(assignment: Vec<usize>) -> Result<Self, MarketError> {
        let n = assignment.len();
        let mut seen = vec![false; n];
        for &w in &assignment {
            if w >= n {
                return Err(MarketError::IndexOutOfRange { index: w, n });
            }
            if seen[w] {
                return Err(MarketError::NotInjective { woman: w });
            }
            seen[w] = true;
        }
        Ok(Matching { pairs: assignment.into_iter().map(Some).collect() })
    }

    /// A possibly-partial matching from explicit pairs.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self, MarketError> {
        let mut out = vec![None; n];
        let mut taken = vec![false; n];
        for &(m, w) in pairs {
            if m >= n || w >= n {
                return Err(MarketError::IndexOutOfRange { index: m.max(w), n });
            }
            if taken[w] || out[m].is_some() {
                return Err(MarketError::NotInjective { woman: w });
            }
            taken[w] = true;
            out[m] = Some(w);
        }
        Ok(Matching { pairs: out })
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn partner_of_man(&self, m: usize) -> Option<usize> {
        self.pairs[m]
    }

    pub fn partner_of_woman(&self, w: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == Some(w))
    }

    pub fn is_perfect(&self) -> bool {
        self.pairs.iter().all(|p| p.is_some())
    }

    pub fn matched_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().enumerate().filter_map(|(m, w)| w.map(|w| (m, w)))
    }

    /// The 0/1 mixed profile of a perfect matching.
    pub fn to_profile<S: Real>(&self) -> Result<MixedProfile<S>, MarketError> {
        if !self.is_perfect() {
            return Err(MarketError::NotPerfect);
        }
        let choice: Vec<usize> = self.pairs.iter().map(|w| w.expect("perfect")).collect();
        Ok(MixedProfile::pure(self.n(), &choice))
    }
}

/// One probability distribution over women per man; the game's state variable.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProfile<S> {
    x: Vec<Vec<S>>,
}

impl<S: Real> MixedProfile<S> {
    /// Validates rows: entries `>= 0`, each row summing to 1 within
    /// [`Real::simplex_tol`].
    pub fn new(rows: Vec<Vec<S>>) -> Result<Self, MarketError> {
        let n = rows.len();
        for (m, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(MarketError::BadShape { row: m, len: row.len(), n });
            }
            let mut sum = S::zero();
            for &v in row {
                if v < S::zero() || !v.is_finite() {
                    return Err(MarketError::NotASimplexRow { row: m, dev: f64::NAN });
                }
                sum = sum + v;
            }
            let dev = (sum - S::one()).abs();
            if dev > S::simplex_tol() {
                return Err(MarketError::NotASimplexRow {
                    row: m,
                    dev: dev.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(MixedProfile { x: rows })
    }

    /// The characteristic profile of a per-man pure choice.
    pub fn pure(n: usize, choice: &[usize]) -> Self {
        assert_eq!(choice.len(), n);
        let mut x = vec![vec![S::zero(); n]; n];
        for (m, &w) in choice.iter().enumerate() {
            assert!(w < n, "choice out of range");
            x[m][w] = S::one();
        }
        MixedProfile { x }
    }

    pub fn uniform(n: usize) -> Self {
        let p = S::one() / S::from_usize_lossy(n);
        MixedProfile { x: vec![vec![p; n]; n] }
    }

    /// Skips validation; rows must already be simplex vectors (used by the
    /// learners whose updates preserve the simplex by construction).
    pub fn from_rows_unchecked(rows: Vec<Vec<S>>) -> Self {
        MixedProfile { x: rows }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn get(&self, m: usize, w: usize) -> S {
        self.x[m][w]
    }

    pub fn row(&self, m: usize) -> &[S] {
        &self.x[m]
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.x
    }

    /// Replaces one row (validated).
    pub fn set_row(&mut self, m: usize, row: Vec<S>) -> Result<(), MarketError> {
        let n = self.n();
        if row.len() != n {
            return Err(MarketError::BadShape { row: m, len: row.len(), n });
        }
        let sum: S = row.iter().copied().sum();
        if (sum - S::one()).abs() > S::simplex_tol() || row.iter().any(|&v| v < S::zero()) {
            return Err(MarketError::NotASimplexRow {
                row: m,
                dev: (sum - S::one()).abs().to_f64().unwrap_or(f64::NAN),
            });
        }
        self.x[m] = row;
        Ok(())
    }

    /// True when every row is a 0/1 vector (within tolerance).
    pub fn is_pure(&self) -> bool {
        self.as_pure_choice().is_some()
    }

    /// The per-man choice when the profile is pure.
    pub fn as_pure_choice(&self) -> Option<Vec<usize>> {
        let tol = S::simplex_tol();
        let mut choice = Vec::with_capacity(self.n());
        for row in &self.x {
            let mut hit = None;
            for (w, &v) in row.iter().enumerate() {
                if (v - S::one()).abs() <= tol {
                    if hit.is_some() {
                        return None;
                    }
                    hit = Some(w);
                } else if v.abs() > tol {
                    return None;
                }
            }
            choice.push(hit?);
        }
        Some(choice)
    }

    /// L1 distance between stacked profiles.
    pub fn l1_distance(&self, other: &Self) -> S {
        assert_eq!(self.n(), other.n());
        self.x
            .iter()
            .zip(&other.x)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| (p - q).abs()))
            .sum()
    }
}

/// Pure proposal profile with an explicit "no proposal" sink per man.
///
/// The sink encodes unmatched men in best-response dynamics; it pays 0 and is
/// excluded from stability checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PureProfile {
    choice: Vec<Option<usize>>,
}

impl PureProfile {
    pub fn new(choice: Vec<Option<usize>>) -> Self {
        PureProfile { choice }
    }

    /// Every man on the sink: the empty proposal profile.
    pub fn all_sink(n: usize) -> Self {
        PureProfile { choice: vec![None; n] }
    }

    pub fn from_choices(choice: &[usize]) -> Self {
        PureProfile { choice: choice.iter().map(|&w| Some(w)).collect() }
    }

    pub fn from_matching(matching: &Matching) -> Self {
        PureProfile { choice: (0..matching.n()).map(|m| matching.partner_of_man(m)).collect() }
    }

    pub fn n(&self) -> usize {
        self.choice.len()
    }

    pub fn choice(&self, m: usize) -> Option<usize> {
        self.choice[m]
    }

    pub fn choices(&self) -> &[Option<usize>] {
        &self.choice
    }

    pub fn set_choice(&mut self, m: usize, w: Option<usize>) {
        self.choice[m] = w;
    }

    pub fn has_sink(&self) -> bool {
        self.choice.iter().any(|c| c.is_none())
    }

    /// The corresponding 0/1 mixed profile; `None` if any man is on the sink.
    pub fn to_mixed<S: Real>(&self) -> Option<MixedProfile<S>> {
        let choice: Option<Vec<usize>> = self.choice.iter().copied().collect();
        choice.map(|c| MixedProfile::pure(self.n(), &c))
    }
}

/// Cardinal encoding of women's ordinal preferences: `lambda[w][m1] >
/// lambda[w][m2]` iff `w` prefers `m1`. Feeds the ordinal potential.
#[derive(Debug, Clone, PartialEq)]
pub struct WomanCardinal<S> {
    lambda: Vec<Vec<S>>,
}

impl<S: Real> WomanCardinal<S> {
    /// The canonical bounded encoding `lambda[w][m] = (n - rank_w(m)) / n`
    /// with rank 0 for the most preferred man, so values lie in (0, 1].
    pub fn canonical(market: &Market<S>) -> Self {
        let n = market.n();
        let nf = S::from_usize_lossy(n);
        let lambda = (0..n)
            .map(|w| {
                (0..n)
                    .map(|m| (nf - S::from_usize_lossy(market.rank_of[w][m])) / nf)
                    .collect()
            })
            .collect();
        WomanCardinal { lambda }
    }

    /// A custom encoding, validated for strict consistency with the rankings.
    pub fn new(market: &Market<S>, lambda: Vec<Vec<S>>) -> Result<Self, MarketError> {
        let n = market.n();
        if lambda.len() != n {
            return Err(MarketError::BadShape { row: 0, len: lambda.len(), n });
        }
        for (w, row) in lambda.iter().enumerate() {
            if row.len() != n {
                return Err(MarketError::BadShape { row: w, len: row.len(), n });
            }
            if row.iter().any(|&v| !(v > S::zero())) {
                return Err(MarketError::InconsistentCardinal { woman: w });
            }
            let ranking = market.women_rank(w);
            for pair in ranking.windows(2) {
                if !(row[pair[0]] > row[pair[1]]) {
                    return Err(MarketError::InconsistentCardinal { woman: w });
                }
            }
        }
        Ok(WomanCardinal { lambda })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn get(&self, w: usize, m: usize) -> S {
        self.lambda[w][m]
    }
}

/// On-disk market document: `n`, row-major `mu`, per-woman rankings, and the
/// reward family. Round-trips bit-exactly through JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub n: usize,
    /// Row-major `n*n` preference means.
    pub mu: Vec<f64>,
    pub women_rank: Vec<Vec<usize>>,
    pub reward_dist: RewardKind,
}

impl MarketFile {
    pub fn from_market(market: &Market<f64>) -> Self {
        MarketFile {
            n: market.n(),
            mu: market.mu.clone(),
            women_rank: market.women_rank.clone(),
            reward_dist: market.reward,
        }
    }

    pub fn into_market(self) -> Result<Market<f64>, MarketError> {
        let n = self.n;
        if n == 0 {
            return Err(MarketError::Empty);
        }
        if self.mu.len() != n * n {
            return Err(MarketError::BadShape { row: 0, len: self.mu.len(), n });
        }
        let rows: Vec<Vec<f64>> = self.mu.chunks(n).map(|c| c.to_vec()).collect();
        Market::new(rows, self.women_rank, self.reward_dist)
    }
}
