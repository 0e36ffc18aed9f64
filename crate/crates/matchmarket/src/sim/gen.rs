//! Seeded market generators.
//!
//! `gen_hierarchical` builds markets satisfying the sequential preference
//! condition: man `k` prefers woman `k` over all lower-ranked women and woman
//! `k` prefers man `k` over all lower-ranked men, so the identity is the
//! unique stable matching. `gen_general` builds unstructured tie-free markets
//! with a guaranteed preference gap.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::market::{Market, RewardKind};

/// `n` ascending values in (0, 1] with pairwise gaps at least `min_gap`.
fn gapped_values(n: usize, min_gap: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let spare = 1.0 - n as f64 * min_gap;
    debug_assert!(spare > 0.0);
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * spare).collect();
    u.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    u.iter().enumerate().map(|(i, &v)| v + (i + 1) as f64 * min_gap).collect()
}

/// Hierarchical (sequential-preference-condition) market with Bernoulli
/// rewards: mean preferences in (0, 1], gaps at least `1/(2n)`, identity as
/// the unique stable matching.
pub fn gen_hierarchical(n: usize, seed: u64) -> Result<Market<f64>, SimError> {
    if n == 0 {
        return Err(SimError::Config("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_gap = 1.0 / (2.0 * n as f64);
    let mut mu_rows = Vec::with_capacity(n);
    for k in 0..n {
        // Shuffle the values, hand women k..n their share with the largest
        // of that share on the diagonal; women before k take the rest.
        let mut pool = gapped_values(n, min_gap, &mut rng);
        pool.shuffle(&mut rng);
        let mut tail = pool.split_off(k);
        let max_idx = tail
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
            .map(|(i, _)| i)
            .expect("tail nonempty");
        let mut row = vec![0.0; n];
        row[k] = tail.swap_remove(max_idx);
        let mut later: Vec<usize> = ((k + 1)..n).collect();
        later.shuffle(&mut rng);
        for (w, v) in later.into_iter().zip(tail) {
            row[w] = v;
        }
        for (w, v) in (0..k).zip(pool) {
            row[w] = v;
        }
        mu_rows.push(row);
    }
    let mut women_rank = Vec::with_capacity(n);
    for k in 0..n {
        // Woman k: man k above all of k+1..n; earlier men anywhere.
        let mut tail: Vec<usize> = ((k + 1)..n).collect();
        tail.shuffle(&mut rng);
        let mut ranking = vec![k];
        ranking.extend(tail);
        for m in 0..k {
            let pos = rng.random_range(0..=ranking.len());
            ranking.insert(pos, m);
        }
        women_rank.push(ranking);
    }
    Ok(Market::new(mu_rows, women_rank, RewardKind::Bernoulli)?)
}

/// Unstructured tie-free market: per-row values in (0, 1] with pairwise gaps
/// at least `min_gap`, uniformly random rankings, Bernoulli rewards.
pub fn gen_general(n: usize, seed: u64, min_gap: f64) -> Result<Market<f64>, SimError> {
    if n == 0 {
        return Err(SimError::Config("n must be at least 1".into()));
    }
    if !(min_gap > 0.0) || n as f64 * min_gap >= 1.0 {
        return Err(SimError::InfeasibleGap { n, min_gap });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mu_rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut values = gapped_values(n, min_gap, &mut rng);
        values.shuffle(&mut rng);
        mu_rows.push(values);
    }
    let mut women_rank = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ranking: Vec<usize> = (0..n).collect();
        ranking.shuffle(&mut rng);
        women_rank.push(ranking);
    }
    Ok(Market::new(mu_rows, women_rank, RewardKind::Bernoulli)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::enumerate_stable_matchings;

    /// Direct statement of the hierarchical condition.
    fn satisfies_spc(market: &Market<f64>) -> bool {
        let n = market.n();
        for k in 0..n {
            for j in (k + 1)..n {
                if market.mu(k, k) <= market.mu(k, j) {
                    return false;
                }
                if !market.prefers(k, k, j) {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn hierarchical_satisfies_assumption_and_unique_stable() {
        for n in 1..=6usize {
            for seed in 0..5u64 {
                let market = gen_hierarchical(n, seed).unwrap();
                assert!(satisfies_spc(&market), "n={n} seed={seed}");
                let stable = enumerate_stable_matchings(&market).unwrap();
                assert_eq!(stable.len(), 1, "n={n} seed={seed}");
                assert!((0..n).all(|m| stable[0].partner_of_man(m) == Some(m)));
            }
        }
    }

    #[test]
    fn hierarchical_seeds_differ_but_both_valid() {
        let a = gen_hierarchical(4, 1).unwrap();
        let b = gen_hierarchical(4, 2).unwrap();
        assert!(satisfies_spc(&a) && satisfies_spc(&b));
        assert_ne!(a.mu_row(0), b.mu_row(0));
    }

    #[test]
    fn general_respects_min_gap_and_determinism() {
        for seed in 0..100u64 {
            let market = gen_general(3, seed, 0.2).unwrap();
            assert!(market.delta() >= 0.2 - 1e-12, "seed {seed}: delta {}", market.delta());
            assert!(market.mu_max() <= 1.0);
            assert!(market.mu_min() > 0.0);
            // Existence: at least one stable matching.
            assert!(!enumerate_stable_matchings(&market).unwrap().is_empty());
        }
        let a = gen_general(5, 9, 0.05).unwrap();
        let b = gen_general(5, 9, 0.05).unwrap();
        for m in 0..5 {
            for w in 0..5 {
                assert_eq!(a.mu(m, w).to_bits(), b.mu(m, w).to_bits());
            }
        }
    }

    #[test]
    fn general_refuses_infeasible_gap() {
        assert!(matches!(
            gen_general(4, 1, 0.25),
            Err(SimError::InfeasibleGap { .. })
        ));
        assert!(gen_general(4, 1, 0.24).is_ok());
    }
}
