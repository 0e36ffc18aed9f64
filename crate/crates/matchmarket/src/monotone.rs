//! The waiting-list-feedback game and its regularized monotone structure.
//!
//! With waiting-list feedback a rejected man also learns how many
//! higher-ranked men proposed to the same woman, so the relevant payoff is
//! the bilinear form
//!
//! ```text
//! u_m(x) = sum_w mu[m][w] (1 - sum_{k >_w m} x[k][w]) x[m][w]
//! ```
//!
//! Regularizing each player's payoff with `-(beta/2)||x_m||^2` makes the
//! stacked gradient field `F` satisfy, for all profile pairs,
//!
//! ```text
//! (x' - x)^T (F(x') - F(x)) = -1/2 sum_w (x'_w - x_w)^T Q^w (x'_w - x_w)
//! ```
//!
//! where `Q^w = (A^w)^T + A^w + 2 beta I` and `A^w[m][k] = mu[m][w] 1{k >_w m}`.
//! For `beta > n mu_max / 2` every `Q^w` is positive semidefinite and the game
//! is monotone, so simple projected-gradient play converges globally to an
//! (eps-)equilibrium; the regularizer trades accuracy for speed.

use thiserror::Error;

use crate::market::{Market, MarketError, MixedProfile};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum MonotoneError {
    #[error("beta = {0} must be nonnegative")]
    NegativeBeta(f64),
    #[error("step = {step} exceeds the safe bound {bound}")]
    StepTooLarge { step: f64, bound: f64 },
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// The regularized waiting-list game: a market plus the regularizer `beta`.
///
/// `beta = 0` is the plain simplified game (useful for the equivalence with
/// stable matchings); monotonicity is certified only for
/// `beta > n mu_max / 2`.
#[derive(Debug, Clone)]
pub struct RegularizedGame<S> {
    market: Market<S>,
    beta: S,
}

impl<S: Real> RegularizedGame<S> {
    pub fn new(market: Market<S>, beta: S) -> Result<Self, MonotoneError> {
        if beta < S::zero() {
            return Err(MonotoneError::NegativeBeta(beta.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(RegularizedGame { market, beta })
    }

    pub fn market(&self) -> &Market<S> {
        &self.market
    }

    pub fn beta(&self) -> S {
        self.beta
    }

    /// True when `beta > n mu_max / 2`, the certified-monotone regime.
    pub fn monotone_certified(&self) -> bool {
        let half = S::from_f64_lossy(0.5);
        self.beta > S::from_usize_lossy(self.market.n()) * self.market.mu_max() * half
    }

    /// Safe projected-gradient step bound `1 / (2 beta + n mu_max)`.
    pub fn default_step(&self) -> S {
        let two = S::from_f64_lossy(2.0);
        S::one()
            / (two * self.beta + S::from_usize_lossy(self.market.n()) * self.market.mu_max())
    }
}

/// Waiting-list payoff of man `m` (may be negative under heavy competition).
pub fn simplified_payoff<S: Real>(market: &Market<S>, x: &MixedProfile<S>, m: usize) -> S {
    let g = simplified_gradient_row(market, x, m);
    x.row(m).iter().zip(g).map(|(&p, v)| p * v).sum()
}

/// Gradient of the unregularized waiting-list payoff:
/// `mu[m][w] (1 - sum_{k >_w m} x[k][w])`.
pub fn simplified_gradient_row<S: Real>(
    market: &Market<S>,
    x: &MixedProfile<S>,
    m: usize,
) -> Vec<S> {
    (0..market.n())
        .map(|w| {
            let mass: S = market.ranked_above(w, m).iter().map(|&k| x.get(k, w)).sum();
            market.mu(m, w) * (S::one() - mass)
        })
        .collect()
}

/// The stacked regularized field `F(x)`: per-man rows of
/// `mu[m][w](1 - sum_{k >_w m} x[k][w]) - beta x[m][w]`.
pub fn regularized_field<S: Real>(game: &RegularizedGame<S>, x: &MixedProfile<S>) -> Vec<Vec<S>> {
    (0..game.market.n())
        .map(|m| {
            simplified_gradient_row(&game.market, x, m)
                .into_iter()
                .enumerate()
                .map(|(w, v)| v - game.beta * x.get(m, w))
                .collect()
        })
        .collect()
}

/// Per-woman quadratic form `Q^w` in the woman's preference-permuted basis.
///
/// Row `m` (permuted) carries `mu` of the row's man left of the diagonal and
/// `mu` of the column's man right of it; the diagonal is `2 beta`.
#[derive(Debug, Clone)]
pub struct QMatrix<S> {
    pub woman: usize,
    /// Men ordered best-first by the woman; `entries[i][j]` refers to the
    /// pair `(order[i], order[j])`.
    pub order: Vec<usize>,
    pub entries: Vec<Vec<S>>,
}

impl<S: Real> QMatrix<S> {
    /// Quadratic form `d^T Q d` for a per-man displacement `d` indexed by
    /// original man indices.
    pub fn quad_form(&self, d: &[S]) -> S {
        let n = self.order.len();
        let mut acc = S::zero();
        for i in 0..n {
            for j in 0..n {
                acc = acc + self.entries[i][j] * d[self.order[i]] * d[self.order[j]];
            }
        }
        acc
    }

    /// Positive-semidefiniteness via an LDL^T factorization attempt: pivots
    /// below `-pivot_tol` or nonzero columns under a vanishing pivot fail.
    pub fn is_psd(&self, pivot_tol: S) -> bool {
        ldlt_is_psd(&self.entries, pivot_tol)
    }
}

/// Symmetric PSD test by LDL^T with pivot tolerance (no pivoting; a zero
/// pivot requires the rest of its column to vanish as well).
fn ldlt_is_psd<S: Real>(a: &[Vec<S>], pivot_tol: S) -> bool {
    let n = a.len();
    let mut m: Vec<Vec<S>> = a.to_vec();
    for k in 0..n {
        let pivot = m[k][k];
        if pivot < -pivot_tol {
            return false;
        }
        if pivot.abs() <= pivot_tol {
            // A PSD matrix with a zero diagonal pivot has a zero row/column.
            for i in (k + 1)..n {
                if m[i][k].abs() > pivot_tol {
                    return false;
                }
            }
            continue;
        }
        for i in (k + 1)..n {
            let l = m[i][k] / pivot;
            for j in (k + 1)..n {
                let delta = l * m[k][j];
                m[i][j] = m[i][j] - delta;
            }
            m[i][k] = S::zero();
        }
    }
    true
}

/// Builds `Q^w = (A^w)^T + A^w + 2 beta I` in the woman's permuted basis.
pub fn build_q<S: Real>(game: &RegularizedGame<S>, w: usize) -> QMatrix<S> {
    let market = &game.market;
    let n = market.n();
    let order: Vec<usize> = market.women_rank(w).to_vec();
    let two = S::from_f64_lossy(2.0);
    let mut entries = vec![vec![S::zero(); n]; n];
    for i in 0..n {
        entries[i][i] = two * game.beta;
        // In the permuted basis the incidence matrix is lower triangular:
        // A[i][j] = mu[order[i]][w] for j < i.
        for j in 0..i {
            let v = market.mu(order[i], w);
            entries[i][j] = entries[i][j] + v;
            entries[j][i] = entries[j][i] + v;
        }
    }
    QMatrix { woman: w, order, entries }
}

/// Both sides of the monotonicity identity:
/// `lhs = (x'-x)^T (F(x')-F(x))`, `rhs = -1/2 sum_w d_w^T Q^w d_w`.
pub fn monotone_identity_check<S: Real>(
    game: &RegularizedGame<S>,
    x: &MixedProfile<S>,
    x2: &MixedProfile<S>,
) -> (S, S) {
    let n = game.market.n();
    let f1 = regularized_field(game, x);
    let f2 = regularized_field(game, x2);
    let mut lhs = S::zero();
    for m in 0..n {
        for w in 0..n {
            lhs = lhs + (x2.get(m, w) - x.get(m, w)) * (f2[m][w] - f1[m][w]);
        }
    }
    let half = S::from_f64_lossy(0.5);
    let mut rhs = S::zero();
    for w in 0..n {
        let q = build_q(game, w);
        let d: Vec<S> = (0..n).map(|m| x2.get(m, w) - x.get(m, w)).collect();
        rhs = rhs - half * q.quad_form(&d);
    }
    (lhs, rhs)
}

/// Euclidean projection onto the probability simplex (sort-and-threshold);
/// idempotent and order-preserving.
pub fn simplex_project<S: Real>(v: &[S]) -> Vec<S> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumulative = S::zero();
    let mut theta = S::zero();
    let mut support = 0usize;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative = cumulative + u;
        let idx = S::from_usize_lossy(i + 1);
        let candidate = (cumulative - S::one()) / idx;
        if u - candidate > S::zero() {
            theta = candidate;
            support = i + 1;
        }
    }
    debug_assert!(support > 0);
    v.iter().map(|&u| (u - theta).max(S::zero())).collect()
}

/// Variational residual of a profile against a stacked field:
/// `max_m [max_w F_mw - <x_m, F_m>]`; zero exactly at equilibrium.
pub fn residual<S: Real>(field: &[Vec<S>], x: &MixedProfile<S>) -> S {
    let mut worst = S::zero();
    for (m, row) in field.iter().enumerate() {
        let best = row.iter().copied().fold(S::neg_infinity(), S::max);
        let value: S = x.row(m).iter().zip(row).map(|(&p, &f)| p * f).sum();
        worst = worst.max(best - value);
    }
    worst
}

#[derive(Debug, Clone, Copy)]
pub struct SolveLogRow<S> {
    pub iter: u64,
    pub residual_regularized: S,
    pub residual_simplified: S,
    /// L1 distance to the previous iterate.
    pub step_l1: S,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome<S> {
    pub profile: MixedProfile<S>,
    pub iterations: u64,
    pub residual_regularized: S,
    pub residual_simplified: S,
    /// Set when the game is not certified monotone (the solver still ran).
    pub uncertified_warning: bool,
    pub log: Vec<SolveLogRow<S>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<S> {
    /// Step size; defaults to the game's safe bound.
    pub step: Option<S>,
    pub max_iters: u64,
    pub residual_tol: S,
    /// Log every k-th iterate (plus the last); 0 disables the log.
    pub log_every: u64,
}

impl<S: Real> Default for SolveOptions<S> {
    fn default() -> Self {
        SolveOptions {
            step: None,
            max_iters: 10_000,
            residual_tol: S::from_f64_lossy(1e-9),
            log_every: 1,
        }
    }
}

/// Jacobi projected-gradient play: every man simultaneously moves his row by
/// `step * F_m(x)` and projects back onto the simplex. Stops at the residual
/// tolerance or the iteration budget, whichever comes first.
pub fn solve_eps_ne<S: Real>(
    game: &RegularizedGame<S>,
    x0: MixedProfile<S>,
    opts: SolveOptions<S>,
) -> Result<SolveOutcome<S>, MonotoneError> {
    let bound = game.default_step();
    let step = opts.step.unwrap_or(bound);
    if step > bound + S::simplex_tol() {
        return Err(MonotoneError::StepTooLarge {
            step: step.to_f64().unwrap_or(f64::NAN),
            bound: bound.to_f64().unwrap_or(f64::NAN),
        });
    }
    let n = game.market.n();
    let mut x = x0;
    let mut log = Vec::new();
    let mut iterations = 0u64;
    let mut res_reg;
    let mut res_simpl;
    loop {
        let field = regularized_field(game, &x);
        res_reg = residual(&field, &x);
        let plain: Vec<Vec<S>> =
            (0..n).map(|m| simplified_gradient_row(&game.market, &x, m)).collect();
        res_simpl = residual(&plain, &x);
        let done = res_reg <= opts.residual_tol || iterations >= opts.max_iters;
        if done {
            if opts.log_every > 0 {
                log.push(SolveLogRow {
                    iter: iterations,
                    residual_regularized: res_reg,
                    residual_simplified: res_simpl,
                    step_l1: S::zero(),
                });
            }
            break;
        }
        let mut next_rows = Vec::with_capacity(n);
        for m in 0..n {
            let moved: Vec<S> = x
                .row(m)
                .iter()
                .zip(&field[m])
                .map(|(&p, &f)| p + step * f)
                .collect();
            next_rows.push(simplex_project(&moved));
        }
        let next = MixedProfile::from_rows_unchecked(next_rows);
        let step_l1 = next.l1_distance(&x);
        if opts.log_every > 0 && iterations % opts.log_every == 0 {
            log.push(SolveLogRow {
                iter: iterations,
                residual_regularized: res_reg,
                residual_simplified: res_simpl,
                step_l1,
            });
        }
        x = next;
        iterations += 1;
    }
    Ok(SolveOutcome {
        profile: x,
        iterations,
        residual_regularized: res_reg,
        residual_simplified: res_simpl,
        uncertified_warning: !game.monotone_certified(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{example1_market, round_mixed_to_pure};
    use crate::market::{Matching, RewardKind};
    use crate::sim::{gen_general, gen_hierarchical};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_profile(n: usize, rng: &mut ChaCha8Rng) -> MixedProfile<f64> {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            })
            .collect();
        MixedProfile::new(rows).unwrap()
    }

    #[test]
    fn simplified_payoff_examples() {
        let market = gen_hierarchical(3, 51).unwrap();
        // Pure stable profile: nobody outranks anyone on his own woman.
        let identity = MixedProfile::pure(3, &[0, 1, 2]);
        for m in 0..3 {
            assert_eq!(simplified_payoff(&market, &identity, m), market.mu(m, m));
        }

        // Two higher-ranked men on the same woman: mu (1 - 2) = -mu.
        let (ex1, _) = example1_market(0.1).unwrap();
        // Woman 0 ranks m1 > m0 > m2; let m0 and m1 both propose to w0 and
        // evaluate m2's payoff if he also proposes purely to w0.
        let all_w0 = MixedProfile::pure(3, &[0, 0, 0]);
        assert_eq!(simplified_payoff(&ex1, &all_w0, 2), ex1.mu(2, 0) * (1.0 - 2.0));
    }

    #[test]
    fn regularized_field_examples() {
        // beta = 0, no competition: the field row is the mu row.
        let market = gen_hierarchical(2, 61).unwrap();
        let game = RegularizedGame::new(market.clone(), 0.0).unwrap();
        let x = MixedProfile::pure(2, &[0, 1]);
        let f = regularized_field(&game, &x);
        let top_w0 = market.women_rank(0)[0];
        // The man at the top of w0's ranking sees no depletion there.
        assert_eq!(f[top_w0][0], market.mu(top_w0, 0));

        // Uniform profile, n = 2, by hand: each woman's mass from the other
        // man is 1/2 if he outranks.
        let game = RegularizedGame::new(market.clone(), 0.8).unwrap();
        let u = MixedProfile::uniform(2);
        let f = regularized_field(&game, &u);
        for m in 0..2 {
            for w in 0..2 {
                let outranked = market.ranked_above(w, m).len();
                let expect = market.mu(m, w) * (1.0 - 0.5 * outranked as f64) - 0.8 * 0.5;
                assert!((f[m][w] - expect).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn field_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let market = gen_general(3, 5, 0.05).unwrap();
        let game = RegularizedGame::new(market.clone(), 1.3).unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let x = random_profile(3, &mut rng);
            let f = regularized_field(&game, &x);
            let m = rng.random_range(0..3);
            let w = rng.random_range(0..3);
            let payoff = |rows: Vec<Vec<f64>>| {
                let p = MixedProfile::from_rows_unchecked(rows);
                let u = simplified_payoff(&market, &p, m);
                let norm: f64 = p.row(m).iter().map(|v| v * v).sum();
                u - 0.5 * game.beta() * norm
            };
            let mut up = x.rows().to_vec();
            let mut dn = up.clone();
            up[m][w] += h;
            dn[m][w] -= h;
            let fd = (payoff(up) - payoff(dn)) / (2.0 * h);
            assert!((fd - f[m][w]).abs() < 1e-6, "m={m} w={w}");
        }
    }

    #[test]
    fn q_matrix_2x2_example() {
        // Woman 0 ranks m0 > m1, mu[m1][w0] = 0.5, beta = 1:
        // A = [[0, 0], [0.5, 0]] so Q = [[2, 0.5], [0.5, 2]].
        let market = Market::new(
            vec![vec![0.9, 0.4], vec![0.5, 0.3]],
            vec![vec![0, 1], vec![1, 0]],
            RewardKind::Deterministic,
        )
        .unwrap();
        let game = RegularizedGame::new(market, 1.0).unwrap();
        let q = build_q(&game, 0);
        assert_eq!(q.order, vec![0, 1]);
        assert_eq!(q.entries[0], vec![2.0, 0.5]);
        assert_eq!(q.entries[1], vec![0.5, 2.0]);
        assert!(q.is_psd(1e-10));
    }

    #[test]
    fn q_matrix_structure_and_psd_threshold() {
        let market = gen_general(4, 9, 0.02).unwrap();
        let n = market.n();
        let certified_beta = n as f64 * market.mu_max() / 2.0 + 0.01;
        let game = RegularizedGame::new(market.clone(), certified_beta).unwrap();
        assert!(game.monotone_certified());
        for w in 0..n {
            let q = build_q(&game, w);
            // Diagonal 2 beta; row m carries mu of the row's man left of the
            // diagonal and mu of the column's man right of it.
            for i in 0..n {
                assert_eq!(q.entries[i][i], 2.0 * certified_beta);
                for j in 0..i {
                    assert_eq!(q.entries[i][j], market.mu(q.order[i], w));
                    assert_eq!(q.entries[j][i], market.mu(q.order[i], w));
                }
            }
            assert!(q.is_psd(1e-10), "woman {w}");
        }

        // beta = 0 with n >= 2: zero trace with nonzero entries, indefinite.
        let game0 = RegularizedGame::new(market, 0.0).unwrap();
        assert!(!game0.monotone_certified());
        assert!((0..n).any(|w| !build_q(&game0, w).is_psd(1e-10)));
    }

    #[test]
    fn identity_and_monotone_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for trial in 0..200 {
            let n = 2 + (trial % 5);
            let market = gen_general(n, trial as u64, 0.01).unwrap();
            let beta = if trial % 2 == 0 {
                n as f64 * market.mu_max() / 2.0 + rng.random::<f64>()
            } else {
                rng.random::<f64>() * 2.0
            };
            let game = RegularizedGame::new(market, beta).unwrap();
            let x = random_profile(n, &mut rng);
            let y = random_profile(n, &mut rng);
            let (lhs, rhs) = monotone_identity_check(&game, &x, &y);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()),
                "trial {trial}: lhs {lhs} rhs {rhs}"
            );
            if game.monotone_certified() {
                assert!(lhs <= 1e-9, "trial {trial}: certified but gap {lhs}");
            }
        }
    }

    #[test]
    fn identity_at_equal_points_is_zero() {
        let market = gen_general(3, 2, 0.05).unwrap();
        let game = RegularizedGame::new(market, 2.0).unwrap();
        let x = MixedProfile::uniform(3);
        let (lhs, rhs) = monotone_identity_check(&game, &x, &x);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn simplex_projection_examples() {
        let on = simplex_project(&[0.25f64, 0.5, 0.25]);
        assert!((on[0] - 0.25).abs() <= 1e-15);
        assert!((on[1] - 0.5).abs() <= 1e-15);

        assert_eq!(simplex_project(&[2.0f64, 0.0]), vec![1.0, 0.0]);

        let p = simplex_project(&[0.6f64, 0.6]);
        assert!((p[0] - 0.5).abs() <= 1e-15 && (p[1] - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn simplex_projection_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..500 {
            let n = 2 + rng.random_range(0..6);
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let p = simplex_project(&v);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            assert!(p.iter().all(|&e| e >= 0.0));
            // Idempotent.
            let pp = simplex_project(&p);
            for (a, b) in p.iter().zip(&pp) {
                assert!((a - b).abs() <= 1e-12);
            }
            // Order-preserving.
            for i in 0..n {
                for j in 0..n {
                    if v[i] > v[j] {
                        assert!(p[i] >= p[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn solver_converges_on_certified_game() {
        let market = gen_hierarchical(2, 101).unwrap();
        let beta = 2.0 * 2.0 * market.mu_max();
        let game = RegularizedGame::new(market, beta).unwrap();
        let out = solve_eps_ne(
            &game,
            MixedProfile::uniform(2),
            SolveOptions { residual_tol: 1e-6, max_iters: 10_000, log_every: 0, step: None },
        )
        .unwrap();
        assert!(out.residual_regularized < 1e-6, "residual {}", out.residual_regularized);
        assert!(out.iterations < 10_000);
        assert!(!out.uncertified_warning);

        // Restarting from the solution leaves the residual at tolerance
        // immediately (fixed point).
        let again = solve_eps_ne(
            &game,
            out.profile.clone(),
            SolveOptions { residual_tol: 1e-6, max_iters: 10, log_every: 0, step: None },
        )
        .unwrap();
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn solver_residual_zero_at_stable_profile_of_plain_game() {
        // beta = 0 (warning path): a stable matching's characteristic profile
        // is a fixed point of the simplified game.
        let (ex1, _) = example1_market(0.1).unwrap();
        let game = RegularizedGame::new(ex1, 0.0).unwrap();
        let profile = MixedProfile::pure(3, &[0, 2, 1]);
        let out = solve_eps_ne(
            &game,
            profile,
            SolveOptions { residual_tol: 1e-12, max_iters: 5, log_every: 0, step: None },
        )
        .unwrap();
        assert!(out.uncertified_warning);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.residual_regularized, 0.0);
    }

    #[test]
    fn solver_step_bound_enforced() {
        let market = gen_hierarchical(2, 103).unwrap();
        let game = RegularizedGame::new(market, 1.0).unwrap();
        let bad = solve_eps_ne(
            &game,
            MixedProfile::uniform(2),
            SolveOptions {
                step: Some(1.0),
                ..SolveOptions::default()
            },
        );
        assert!(matches!(bad, Err(MonotoneError::StepTooLarge { .. })));
    }

    #[test]
    fn solver_output_rounds_to_stable_matching() {
        // A small regularizer keeps the solved profile close to the plain
        // game's equilibrium, so the decentralized rounding lands on a
        // stable matching. (Large beta drags the equilibrium toward uniform
        // and the rounding degrades, which is the accuracy side of the
        // speed/accuracy trade-off.)
        for seed in [5u64, 11, 17, 23] {
            let market = gen_hierarchical(3, seed).unwrap();
            let beta = 0.05 * market.delta();
            let game = RegularizedGame::new(market.clone(), beta).unwrap();
            let out = solve_eps_ne(
                &game,
                MixedProfile::uniform(3),
                SolveOptions { residual_tol: 1e-9, max_iters: 200_000, log_every: 0, step: None },
            )
            .unwrap();
            assert!(out.uncertified_warning);
            assert!(
                out.residual_regularized <= 1e-9,
                "seed {seed}: residual {}",
                out.residual_regularized
            );
            let rounded = round_mixed_to_pure(&market, &out.profile);
            assert!(!rounded.partial, "seed {seed}");
            assert_eq!(rounded.matching, Matching::perfect(vec![0, 1, 2]).unwrap());
            assert!(market.is_stable(&rounded.matching).unwrap());
        }
    }

    /// Pure equilibria of the unregularized waiting-list game coincide with
    /// the stable matchings (exhaustive scan at n <= 3). For the linear
    /// per-man payoff, a pure profile is an equilibrium exactly when every
    /// man's chosen coordinate maximizes his gradient row.
    #[test]
    fn plain_game_pure_equilibria_are_stable_matchings() {
        use crate::equilibrium::enumerate_stable_matchings;
        for seed in 0..20u64 {
            let market = gen_general(3, 900 + seed, 0.02).unwrap();
            let stable = enumerate_stable_matchings(&market).unwrap();
            for c0 in 0..3 {
                for c1 in 0..3 {
                    for c2 in 0..3 {
                        let choice = [c0, c1, c2];
                        let x = MixedProfile::pure(3, &choice);
                        let is_ne = (0..3).all(|m| {
                            let g = simplified_gradient_row(&market, &x, m);
                            let own = g[choice[m]];
                            g.iter().all(|&v| v <= own + 1e-12)
                        });
                        let is_stable_matching = Matching::perfect(choice.to_vec())
                            .map(|mt| stable.contains(&mt))
                            .unwrap_or(false);
                        assert_eq!(is_ne, is_stable_matching, "seed {seed} {choice:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn works_in_f32() {
        let market = Market::<f32>::new(
            vec![vec![0.9, 0.4], vec![0.5, 0.3]],
            vec![vec![0, 1], vec![1, 0]],
            RewardKind::Deterministic,
        )
        .unwrap();
        let game = RegularizedGame::new(market, 2.0f32).unwrap();
        let x = MixedProfile::<f32>::uniform(2);
        let (lhs, rhs) = monotone_identity_check(&game, &x, &x);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
        assert!(build_q(&game, 0).is_psd(1e-5));
    }
}
