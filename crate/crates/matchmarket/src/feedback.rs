//! Per-man feedback records.
//!
//! A learner for man `m` observes nothing beyond his own record: the round,
//! his own proposal, the accept/reject bit, his reward when matched, and (in
//! waiting-list mode only) how many higher-ranked men proposed to the same
//! woman. The record schema is the decentralization contract.

/// What one man learns from one resolved round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManFeedback {
    pub t: u64,
    /// The woman this man proposed to.
    pub proposal: usize,
    pub accepted: bool,
    /// Realized reward; present exactly when accepted.
    pub reward: Option<f64>,
    /// Number of strictly higher-ranked proposers to the same woman;
    /// present only in waiting-list mode.
    pub waitlist_ahead: Option<u32>,
}

impl ManFeedback {
    pub fn rejected(t: u64, proposal: usize) -> Self {
        ManFeedback { t, proposal, accepted: false, reward: None, waitlist_ahead: None }
    }

    pub fn matched(t: u64, proposal: usize, reward: f64) -> Self {
        ManFeedback { t, proposal, accepted: true, reward: Some(reward), waitlist_ahead: None }
    }

    pub fn with_waitlist(mut self, ahead: u32) -> Self {
        self.waitlist_ahead = Some(ahead);
        self
    }

    /// Schema invariant: a reward is visible exactly on accepted rounds.
    pub fn is_consistent(&self) -> bool {
        self.accepted == self.reward.is_some()
            && (!self.accepted || self.waitlist_ahead.unwrap_or(0) == 0)
    }
}
