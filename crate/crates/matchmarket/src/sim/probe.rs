//! Local-convergence probe around a pure equilibrium.
//!
//! For schedules in the local family the EXP dynamics, once inside an
//! `c/(250 n^2)` L1 ball around a pure equilibrium at a round `t0` where the
//! stepsize has flattened enough (`1/eta^{t+1} - 1/eta^t <= c/b` with
//! `b = ln(n^2/(2c)) + 3`), stay under the envelope
//!
//! ```text
//! ||X^{t+1} - X*||_1 <= 41 n exp(-c t eta^{t+1})
//! ```
//!
//! with high probability. The probe computes `t0` from the schedule's closed
//! form, initializes the score vectors inside the ball with the round counter
//! at `t0`, simulates a window of rounds, and reports the fraction of
//! replications that never violate the envelope (both the `41n` and the
//! slightly tighter `2n e^3` variant are logged).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, resolve_round, sample_index, FeedbackMode, SimError};
use crate::equilibrium::is_pure_ne;
use crate::exp::{ExpLearner, Schedule};
use crate::market::{Market, Matching, MixedProfile, PureProfile};

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub schedule: Schedule,
    /// Rounds simulated past `t0`.
    pub horizon: u64,
    pub replications: u32,
    pub seed: u64,
    /// Initial L1 distance from the equilibrium; defaults to the theorem
    /// bound `c/(250 n^2)`. Larger values run with a warning flag.
    pub radius: Option<f64>,
    /// Starts the window at this round instead of the computed `t0`
    /// (diagnostic use; flags the report as outside the hypothesis).
    pub start_round_override: Option<u64>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            schedule: Schedule::Local,
            horizon: 20_000,
            replications: 100,
            seed: 0,
            radius: None,
            start_round_override: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub c: f64,
    pub b: f64,
    /// First round satisfying the stepsize condition.
    pub t0: u64,
    /// Round the window actually started at.
    pub start_round: u64,
    pub horizon: u64,
    pub radius: f64,
    pub radius_bound: f64,
    /// Set when the start round or radius leaves the theorem's hypothesis.
    pub outside_hypothesis: bool,
    pub replications: u32,
    pub violations: u32,
    pub held_fraction: f64,
    /// Violations against the alternative envelope `2n exp(-c t eta^{t+1} + 3)`.
    pub violations_alt: u32,
    /// Per replication, the first round whose envelope check failed.
    pub first_violation: Vec<Option<u64>>,
    /// Envelope value at the start of the window.
    pub envelope_at_start: f64,
    /// Alternative envelope at the start of the window.
    pub envelope_alt_at_start: f64,
    /// Pooled regression slope of `ln ||X - X*||_1` against `t^(1/4)`.
    pub slope_ln_dist_vs_t_quarter: f64,
    pub final_distance_mean: f64,
}

/// First `t >= 1` with `1/eta(t+1) - 1/eta(t) <= c/b`, by exponential search
/// plus bisection on the closed-form schedule.
fn first_valid_round(schedule: &Schedule, c: f64, b: f64) -> Option<u64> {
    let threshold = c / b;
    let cond = |t: u64| schedule.inv_eta(t + 1) - schedule.inv_eta(t) <= threshold;
    const CAP: u64 = 1 << 52;
    let mut hi = 1u64;
    while !cond(hi) {
        hi = hi.checked_mul(2)?;
        if hi > CAP {
            return None;
        }
    }
    let mut lo = hi / 2;
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if cond(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(if cond(lo.max(1)) { lo.max(1) } else { hi })
}

struct RepOutcome {
    first_violation: Option<u64>,
    violated_alt: bool,
    points: Vec<(f64, f64)>,
    final_distance: f64,
}

/// Probes local convergence of the EXP dynamics around `x_star`.
pub fn local_convergence_probe(
    market: &Market<f64>,
    x_star: &Matching,
    opts: &ProbeOptions,
) -> Result<ProbeReport, SimError> {
    if opts.horizon == 0 || opts.replications == 0 {
        return Err(SimError::Config("probe needs horizon >= 1 and replications >= 1".into()));
    }
    let n = market.n();
    let star_profile = x_star.to_profile::<f64>()?;
    let cert = is_pure_ne(market, &star_profile)?;
    if !cert.certified() {
        return Err(SimError::NotAPureNe { violation: cert.max_violation });
    }
    let c = market.c_local();
    let b = ((n * n) as f64 / (2.0 * c)).ln() + 3.0;
    let t0 = first_valid_round(&opts.schedule, c, b).ok_or(SimError::NoValidStart)?;
    let start_round = opts.start_round_override.unwrap_or(t0);
    let radius_bound = c / (250.0 * (n * n) as f64);
    let radius = opts.radius.unwrap_or(radius_bound);
    if !(radius > 0.0) {
        return Err(SimError::Config("radius must be positive".into()));
    }
    let outside_hypothesis = radius > radius_bound || start_round < t0;

    // Score initialization: every man puts X[w*] = 1 - q at the start round.
    let q = (radius / (2.0 * n as f64)).min(0.25);
    let eta_start = opts.schedule.eta(start_round);
    let score_gap = ((n as f64 - 1.0) * (1.0 - q) / q).ln() / eta_start;
    let targets: Vec<usize> =
        (0..n).map(|m| x_star.partner_of_man(m).expect("perfect")).collect();

    let envelope = |t: u64| 41.0 * n as f64 * (-c * t as f64 * opts.schedule.eta(t + 1)).exp();
    let envelope_alt =
        |t: u64| 2.0 * n as f64 * (-c * t as f64 * opts.schedule.eta(t + 1) + 3.0).exp();

    let reps: Vec<RepOutcome> = (0..opts.replications)
        .into_par_iter()
        .map(|rep| -> Result<RepOutcome, SimError> {
            let rep_seed = derive_seed(opts.seed, 0x50, rep as u64);
            let mut action_rngs: Vec<ChaCha8Rng> = (0..n)
                .map(|m| ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 0x41, m as u64)))
                .collect();
            let mut reward_rngs: Vec<ChaCha8Rng> = (0..n)
                .map(|m| ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 0x57, m as u64)))
                .collect();
            let mut learners: Vec<ExpLearner> = (0..n)
                .map(|m| {
                    let mut scores = vec![0.0; n];
                    scores[targets[m]] = score_gap;
                    ExpLearner::with_initial_scores(n, opts.schedule, start_round, scores)
                })
                .collect();
            let mut first_violation = None;
            let mut violated_alt = false;
            let mut points = Vec::new();
            let sample_every = (opts.horizon / 512).max(1);
            let mut distance = 0.0;
            for t in start_round..start_round + opts.horizon {
                let mut proposals = PureProfile::all_sink(n);
                for (m, learner) in learners.iter_mut().enumerate() {
                    let strategy = learner.adjusted_strategy();
                    proposals.set_choice(m, Some(sample_index(&strategy, &mut action_rngs[m])));
                }
                let outcome =
                    resolve_round(market, &proposals, FeedbackMode::Standard, &mut reward_rngs)?;
                for (m, learner) in learners.iter_mut().enumerate() {
                    let fb = outcome.feedback_for(t, m).expect("everyone proposes");
                    learner.observe(&fb);
                }
                // X^{t+1} against the envelope at t.
                let profile = MixedProfile::from_rows_unchecked(
                    learners.iter().map(|l| l.mixed_strategy()).collect(),
                );
                distance = profile.l1_distance(&star_profile);
                if distance > envelope(t) && first_violation.is_none() {
                    first_violation = Some(t);
                }
                violated_alt |= distance > envelope_alt(t);
                if (t - start_round) % sample_every == 0 && distance > 0.0 {
                    points.push(((t as f64).powf(0.25), distance.ln()));
                }
            }
            Ok(RepOutcome { first_violation, violated_alt, points, final_distance: distance })
        })
        .collect::<Result<_, _>>()?;

    let violations = reps.iter().filter(|r| r.first_violation.is_some()).count() as u32;
    let violations_alt = reps.iter().filter(|r| r.violated_alt).count() as u32;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    for r in &reps {
        pooled.extend_from_slice(&r.points);
    }
    let slope = regression_slope(&pooled);
    let final_distance_mean =
        reps.iter().map(|r| r.final_distance).sum::<f64>() / reps.len() as f64;

    Ok(ProbeReport {
        c,
        b,
        t0,
        start_round,
        horizon: opts.horizon,
        radius,
        radius_bound,
        outside_hypothesis,
        replications: opts.replications,
        violations,
        held_fraction: 1.0 - violations as f64 / opts.replications as f64,
        violations_alt,
        first_violation: reps.iter().map(|r| r.first_violation).collect(),
        envelope_at_start: envelope(start_round),
        envelope_alt_at_start: envelope_alt(start_round),
        slope_ln_dist_vs_t_quarter: slope,
        final_distance_mean,
    })
}

fn regression_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 0.0;
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
