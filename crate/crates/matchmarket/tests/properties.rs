//! Property tests for the game-math layer.

use matchmarket::equilibrium::{enumerate_stable_matchings, is_pure_ne};
use matchmarket::exp::logit_strategy;
use matchmarket::market::{Market, MixedProfile, PureProfile, RewardKind, WomanCardinal};
use matchmarket::monotone::simplex_project;
use matchmarket::sim::{gen_general, gen_hierarchical};
use proptest::prelude::*;

/// Random tie-free market of size 2..=6 plus a random mixed profile.
fn market_and_profile() -> impl Strategy<Value = (Market<f64>, MixedProfile<f64>)> {
    (2usize..=6, any::<u64>()).prop_flat_map(|(n, seed)| {
        let market = gen_general(n, seed, 0.01).unwrap();
        let rows = proptest::collection::vec(
            proptest::collection::vec(1e-6..1.0f64, n),
            n,
        );
        (Just(market), rows).prop_map(move |(market, raw)| {
            let rows: Vec<Vec<f64>> = raw
                .into_iter()
                .map(|row| {
                    let sum: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / sum).collect()
                })
                .collect();
            (market, MixedProfile::new(rows).unwrap())
        })
    })
}

proptest! {
    /// The payoff is exactly the inner product of a man's row with his
    /// gradient.
    #[test]
    fn payoff_is_row_dot_gradient((market, x) in market_and_profile()) {
        for m in 0..market.n() {
            let v = market.gradient(&x, m);
            let dot: f64 = x.row(m).iter().zip(&v).map(|(p, g)| p * g).sum();
            prop_assert!((market.payoff(&x, m) - dot).abs() <= 1e-12);
        }
    }

    /// The gradient does not depend on the man's own row.
    #[test]
    fn gradient_ignores_own_row((market, x) in market_and_profile(), shift in 0usize..6) {
        for m in 0..market.n() {
            let v1 = market.gradient(&x, m);
            let mut rows = x.rows().to_vec();
            let n = market.n();
            rows[m].rotate_left(shift % n);
            let moved = MixedProfile::new(rows).unwrap();
            let v2 = market.gradient(&moved, m);
            for (a, b) in v1.iter().zip(&v2) {
                prop_assert_eq!(a, b);
            }
        }
    }

    /// Deferred acceptance always produces a stable matching, and stability
    /// agrees with the definitional blocking-pair scan.
    #[test]
    fn deferred_acceptance_is_stable(n in 2usize..=8, seed in any::<u64>()) {
        let market = gen_general(n, seed, 0.005).unwrap();
        let da = market.deferred_acceptance();
        prop_assert!(da.is_perfect());
        prop_assert!(market.is_stable(&da).unwrap());
        let mut any_blocking = false;
        for m in 0..n {
            for w in 0..n {
                any_blocking |= market.is_blocking_pair(&da, m, w).unwrap();
            }
        }
        prop_assert!(!any_blocking);
    }

    /// The logit map is a simplex vector for arbitrary finite scores and is
    /// invariant to uniform shifts.
    #[test]
    fn logit_is_simplex_and_shift_invariant(
        scores in proptest::collection::vec(-1e6..1e6f64, 1..8),
        eta in 1e-6..2.0f64,
        shift in -1e5..1e5f64,
    ) {
        let x = logit_strategy(&scores, eta);
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(x.iter().all(|p| *p >= 0.0 && p.is_finite()));
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let y = logit_strategy(&shifted, eta);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    /// Euclidean simplex projection: feasible output, idempotent, and the
    /// identity on points already on the simplex.
    #[test]
    fn simplex_projection_is_projection(
        v in proptest::collection::vec(-10.0..10.0f64, 1..8),
    ) {
        let p = simplex_project(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|e| *e >= 0.0));
        let pp = simplex_project(&p);
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    /// Ordinal-potential sanity on random pure profiles: the potential is
    /// the sum over women of the accepted proposer's cardinal value.
    #[test]
    fn potential_matches_per_woman_sum(n in 2usize..=6, seed in any::<u64>(), raw in proptest::collection::vec(0usize..6, 6)) {
        let market = gen_general(n, seed, 0.01).unwrap();
        let lambda = WomanCardinal::canonical(&market);
        let choices: Vec<usize> = (0..n).map(|m| raw[m] % n).collect();
        let p = PureProfile::from_choices(&choices);
        let phi = market.potential(&p, &lambda);
        let matching = market.resolve_proposals(&p);
        let direct: f64 = (0..n)
            .filter_map(|w| matching.partner_of_woman(w).map(|m| lambda.get(w, m)))
            .sum();
        prop_assert!((phi - direct).abs() <= 1e-12);
    }
}

/// Stability of deferred acceptance over a dense sweep of small markets
/// (1000 random markets, n in 2..=8).
#[test]
fn deferred_acceptance_sweep() {
    for seed in 0..1000u64 {
        let n = 2 + (seed % 7) as usize;
        let market = gen_general(n, seed, 0.002).unwrap();
        let da = market.deferred_acceptance();
        assert!(market.is_stable(&da).unwrap(), "seed {seed}");
    }
}

/// Certified pure equilibria of hierarchical markets are exactly the
/// identity profile (uniqueness at small n).
#[test]
fn hierarchical_identity_is_unique_equilibrium() {
    for seed in 0..20u64 {
        let market = gen_hierarchical(3, seed).unwrap();
        let stable = enumerate_stable_matchings(&market).unwrap();
        assert_eq!(stable.len(), 1);
        let mut certified = Vec::new();
        for c0 in 0..3 {
            for c1 in 0..3 {
                for c2 in 0..3 {
                    let profile = MixedProfile::pure(3, &[c0, c1, c2]);
                    if is_pure_ne(&market, &profile).unwrap().certified() {
                        certified.push([c0, c1, c2]);
                    }
                }
            }
        }
        assert_eq!(certified, vec![[0, 1, 2]], "seed {seed}");
    }
}

/// Custom cardinal encodings must agree strictly with the rankings.
#[test]
fn woman_cardinal_validation() {
    let market = gen_general(3, 4, 0.1).unwrap();
    assert!(WomanCardinal::new(&market, vec![vec![1.0; 3]; 3]).is_err());
    // An order-consistent encoding passes.
    let n = 3;
    let lambda: Vec<Vec<f64>> = (0..n)
        .map(|w| {
            let ranking = market.women_rank(w);
            let mut row = vec![0.0; n];
            for (pos, &m) in ranking.iter().enumerate() {
                row[m] = (n - pos) as f64;
            }
            row
        })
        .collect();
    let enc = WomanCardinal::new(&market, lambda).unwrap();
    // Any strictly order-consistent encoding yields the same potential
    // ordering along a path as the canonical one (spot check one profile).
    let p = PureProfile::from_choices(&[0, 1, 2]);
    assert!(market.potential(&p, &enc) > 0.0);
}

/// A market built by hand keeps working through the serde layer.
#[test]
fn market_file_rejects_inconsistencies() {
    use matchmarket::market::MarketFile;
    let bad = MarketFile {
        n: 2,
        mu: vec![0.5, 0.5, 0.4, 0.2],
        women_rank: vec![vec![0, 1], vec![1, 0]],
        reward_dist: RewardKind::Bernoulli,
    };
    assert!(bad.into_market().is_err());

    let wrong_len = MarketFile {
        n: 2,
        mu: vec![0.5, 0.3, 0.4],
        women_rank: vec![vec![0, 1], vec![1, 0]],
        reward_dist: RewardKind::Bernoulli,
    };
    assert!(wrong_len.into_market().is_err());
}
