//! Equilibrium certificates and brute-force oracles.
//!
//! Pure profiles certify as Nash equilibria exactly when they are
//! characteristic vectors of stable matchings; mixed profiles certify through
//! the support-equality conditions (gradient equal to the payoff on the
//! support, no larger off it). A certified mixed equilibrium in which every
//! woman receives some fractional proposal rounds decentrally to a stable
//! matching: each man proposes to the least preferred woman in his own
//! support and the women resolve.
//!
//! The enumeration oracle scans all `n!` perfect matchings and is the ground
//! truth the certificates are tested against at small `n`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{Market, MarketError, Matching, MixedProfile, RewardKind};
use crate::scalar::Real;

/// Default certificate tolerance: separates closed-form equilibria
/// (residual near machine precision) from near-equilibrium learner iterates.
pub const DEFAULT_CERT_TOL: f64 = 1e-9;

/// Entries above this threshold count as fractional proposals when reading
/// off supports; learned profiles are never exactly zero.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("exhaustive enumeration is limited to n <= {max}, got n = {n}")]
    TooLarge { n: usize, max: usize },
    #[error("profile is not pure")]
    NotPure,
    #[error(transparent)]
    Market(#[from] MarketError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeKind {
    Pure,
    Mixed,
}

/// Result of checking a profile against the equilibrium conditions.
///
/// `max_violation` is the largest payoff gain available to any unilateral
/// deviation (for pure profiles) or the largest support-equality residual /
/// off-support excess (for mixed ones). The profile certifies when the
/// violation does not exceed `tol`.
#[derive(Debug, Clone)]
pub struct NeCertificate<S> {
    pub profile: MixedProfile<S>,
    pub kind: NeKind,
    pub max_violation: S,
    pub tol: S,
}

impl<S: Real> NeCertificate<S> {
    pub fn certified(&self) -> bool {
        self.max_violation <= self.tol
    }

    /// Support graph of the profile: edges `(m, w)` with `x[m][w]` above the
    /// support threshold.
    pub fn support_edges(&self) -> Vec<(usize, usize)> {
        support_edges(&self.profile)
    }
}

fn support_edges<S: Real>(x: &MixedProfile<S>) -> Vec<(usize, usize)> {
    let thr = S::from_f64_lossy(SUPPORT_THRESHOLD);
    let mut edges = Vec::new();
    for m in 0..x.n() {
        for w in 0..x.n() {
            if x.get(m, w) > thr {
                edges.push((m, w));
            }
        }
    }
    edges
}

fn certificate_core<S: Real>(market: &Market<S>, x: &MixedProfile<S>, tol: S) -> (S, NeKind) {
    let thr = S::from_f64_lossy(SUPPORT_THRESHOLD);
    let mut worst = S::zero();
    for m in 0..market.n() {
        let v = market.gradient(x, m);
        let u = x.row(m).iter().zip(&v).map(|(&p, &g)| p * g).sum::<S>();
        for w in 0..market.n() {
            let residual = if x.get(m, w) > thr {
                (v[w] - u).abs()
            } else {
                (v[w] - u).max(S::zero())
            };
            worst = worst.max(residual);
        }
    }
    let kind = if x.is_pure() { NeKind::Pure } else { NeKind::Mixed };
    let _ = tol;
    (worst, kind)
}

/// Pure-equilibrium certificate: `max_violation = max_m [max_w v_mw(x) - u_m(x)]`,
/// the best pure deviation gain. Requires a pure profile.
pub fn is_pure_ne<S: Real>(
    market: &Market<S>,
    x: &MixedProfile<S>,
) -> Result<NeCertificate<S>, EquilibriumError> {
    is_pure_ne_with_tol(market, x, S::from_f64_lossy(DEFAULT_CERT_TOL))
}

pub fn is_pure_ne_with_tol<S: Real>(
    market: &Market<S>,
    x: &MixedProfile<S>,
    tol: S,
) -> Result<NeCertificate<S>, EquilibriumError> {
    if !x.is_pure() {
        return Err(EquilibriumError::NotPure);
    }
    let (max_violation, _) = certificate_core(market, x, tol);
    Ok(NeCertificate { profile: x.clone(), kind: NeKind::Pure, max_violation, tol })
}

/// Mixed-equilibrium certificate via support equality: on the support the
/// gradient must equal the payoff, off it stay below.
pub fn verify_mixed_ne<S: Real>(market: &Market<S>, x: &MixedProfile<S>, tol: S) -> NeCertificate<S> {
    let (max_violation, kind) = certificate_core(market, x, tol);
    NeCertificate { profile: x.clone(), kind, max_violation, tol }
}

/// Outcome of rounding a mixed equilibrium: `partial` flags that some woman
/// received no fractional proposal, so only the induced submarket is matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rounded {
    pub matching: Matching,
    pub partial: bool,
}

/// Decentralized rounding: each man proposes to the least preferred woman in
/// his own support, and the women keep their best proposer. On a certified
/// mixed equilibrium where every woman has a fractional proposal the result
/// is a perfect stable matching.
pub fn round_mixed_to_pure<S: Real>(market: &Market<S>, x: &MixedProfile<S>) -> Rounded {
    let n = market.n();
    let thr = S::from_f64_lossy(SUPPORT_THRESHOLD);
    let mut proposals = crate::market::PureProfile::all_sink(n);
    for m in 0..n {
        let mut pick: Option<(usize, S)> = None;
        for w in 0..n {
            if x.get(m, w) > thr {
                let mu = market.mu(m, w);
                pick = match pick {
                    None => Some((w, mu)),
                    Some((_, best)) if mu < best => Some((w, mu)),
                    keep => keep,
                };
            }
        }
        // A simplex row always has an entry >= 1/n, so a pick exists.
        proposals.set_choice(m, pick.map(|(w, _)| w));
    }
    let matching = market.resolve_proposals(&proposals);
    let partial = !matching.is_perfect();
    Rounded { matching, partial }
}

/// Exhaustively enumerates the stable matchings of a market with `n <= 8`.
pub fn enumerate_stable_matchings<S: Real>(
    market: &Market<S>,
) -> Result<Vec<Matching>, EquilibriumError> {
    const MAX_N: usize = 8;
    let n = market.n();
    if n > MAX_N {
        return Err(EquilibriumError::TooLarge { n, max: MAX_N });
    }
    let mut out = Vec::new();
    let mut assignment: Vec<usize> = (0..n).collect();
    loop {
        let matching = Matching::perfect(assignment.clone()).expect("permutation");
        if market.is_stable(&matching)? {
            out.push(matching);
        }
        if !next_permutation(&mut assignment) {
            break;
        }
    }
    Ok(out)
}

/// Lexicographic successor; false once the last permutation is reached.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// The 3x3 instance with a seven-edge mixed equilibrium, parameterized by the
/// small preference value `eps in (0, 1)`.
///
/// Preferences: `mu = [[2, 1, eps], [3, 4, 5], [eps, 12, 6]]`; woman 0 ranks
/// the men `m1 > m0 > m2`, woman 1 ranks `m0 > m1 > m2`, and woman 2 ranks
/// `m2 > m1 > m0`. The mixed-equilibrium rows follow from the closed-form
/// ratios of the preference table: `(3/4, 1/4, 0)`, `(1/2, 1/3, 1/6)`,
/// `(0, 3/5, 2/5)`.
pub fn example1_market(eps: f64) -> Result<(Market<f64>, MixedProfile<f64>), MarketError> {
    assert!(eps > 0.0 && eps < 1.0, "eps must lie in (0, 1)");
    let mu = vec![
        vec![2.0, 1.0, eps],
        vec![3.0, 4.0, 5.0],
        vec![eps, 12.0, 6.0],
    ];
    let women_rank = vec![vec![1, 0, 2], vec![0, 1, 2], vec![2, 1, 0]];
    let market = Market::new(mu, women_rank, RewardKind::Deterministic)?;

    // Closed-form equilibrium entries, written as the preference ratios.
    let x_m1w1 = market.mu(1, 0) / market.mu(1, 1);
    let x_m1w2 = 1.0 - x_m1w1;
    let x_m2w1 = 1.0 - market.mu(0, 1) / market.mu(0, 0);
    let x_m2w2 = 1.0 - market.mu(1, 1) * market.mu(2, 2) / (market.mu(1, 0) * market.mu(2, 1));
    let x_m2w3 = market.mu(0, 1) / market.mu(0, 0)
        + market.mu(1, 1) * market.mu(2, 2) / (market.mu(1, 0) * market.mu(2, 1))
        - 1.0;
    let x_m3w2 = market.mu(1, 0) / market.mu(1, 2);
    let x_m3w3 = 1.0 - x_m3w2;
    let profile = MixedProfile::new(vec![
        vec![x_m1w1, x_m1w2, 0.0],
        vec![x_m2w1, x_m2w2, x_m2w3],
        vec![0.0, x_m3w2, x_m3w3],
    ])?;
    Ok((market, profile))
}
