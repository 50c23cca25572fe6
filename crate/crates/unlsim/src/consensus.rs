//! Staged quorum voting: candidate-set generation (stage 1), consensus
//! sub-rounds (stage 2), and the overlap/threshold algebra connecting
//! propagation completeness to the vote fraction needed for a fork-free
//! close.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("consensus threshold must be in (0.5, 1], got {0}")]
    ThresholdOutOfRange(f64),
    #[error("trust fractions must be non-empty")]
    EmptyTrustFractions,
    #[error("trust fraction {0} outside [0, 1]")]
    TrustFractionOutOfRange(f64),
    #[error("schedule must have at least one sub-round")]
    EmptySchedule,
    #[error("per-sub-round thresholds must be non-decreasing")]
    NonMonotoneSchedule,
    #[error("sub-round threshold {0} exceeds absolute cap {1}")]
    ThresholdAboveCap(f64, f64),
}

/// Comparison slack for vote fractions: thresholds are meant as "at least
/// this share", so a tally equal to the bound passes.
pub const VOTE_EPS: f64 = 1e-9;

/// Strict-majority margin added on top of 0.5 when full overlap would allow
/// closing at a bare majority.
pub const MAJORITY_EPS: f64 = 0.01;

/// The classic final-round agreement share.
pub const CLASSIC_THRESHOLD: f64 = 0.8;

pub type TxId = u64;

/// One transaction as the simulator sees it: identity, a modelled validity
/// bit (header/signature checks collapse to this), and a processing fee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub valid: bool,
    pub fee: u64,
}

/// A server's declared set of candidate transactions for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub origin: NodeId,
    pub txns: BTreeSet<TxId>,
}

/// A server's votes for one sub-round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub origin: NodeId,
    pub sub_round: u8,
    pub votes: BTreeMap<TxId, bool>,
}

/// Per-sub-round elimination thresholds plus the absolute close threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub per_subround: Vec<f64>,
    pub absolute_cap: f64,
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.per_subround.is_empty() {
            return Err(ConsensusError::EmptySchedule);
        }
        for pair in self.per_subround.windows(2) {
            if pair[1] < pair[0] - VOTE_EPS {
                return Err(ConsensusError::NonMonotoneSchedule);
            }
        }
        for &t in &self.per_subround {
            if t > self.absolute_cap + VOTE_EPS {
                return Err(ConsensusError::ThresholdAboveCap(t, self.absolute_cap));
            }
        }
        Ok(())
    }

    pub fn sub_rounds(&self) -> usize {
        self.per_subround.len()
    }
}

/// Minimum pairwise UNL overlap that rules out forks at vote threshold
/// `rho`: `w ≥ 2(1 − ρ)`.
pub fn min_overlap_for_threshold(rho: f64) -> Result<f64, ConsensusError> {
    if !(rho > 0.5 && rho <= 1.0) {
        return Err(ConsensusError::ThresholdOutOfRange(rho));
    }
    Ok(2.0 * (1.0 - rho))
}

/// Fork-free close threshold implied by the trusted share of each UNL:
/// `1 − min(fᵢ/Nᵢ)/2`. With fully trusted lists and complete propagation
/// this reaches 0.5, i.e. a bare majority plus epsilon suffices.
pub fn threshold_from_trust(good_fractions: &[f64]) -> Result<f64, ConsensusError> {
    if good_fractions.is_empty() {
        return Err(ConsensusError::EmptyTrustFractions);
    }
    let mut min = f64::INFINITY;
    for &f in good_fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(ConsensusError::TrustFractionOutOfRange(f));
        }
        min = min.min(f);
    }
    Ok(1.0 - min / 2.0)
}

/// Inputs for [`graded_schedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleInputs {
    /// Classic behaviour (SimC/SimRM): fixed 0.8 close threshold.
    pub classic: bool,
    pub sub_rounds: usize,
    /// Trust the node assigns to its own UNL, as good-node fractions.
    pub trust_fractions: Vec<f64>,
    /// Locally measured propagation completeness in [0, 1]: distinct
    /// candidate-set origins seen over the size of the trust lists.
    pub propagation_completeness: f64,
}

/// Builds the threshold schedule for one node and round.
///
/// Elimination thresholds ramp linearly from 0.5 to the close threshold.
/// Classic variants close at 0.8. The graded variant lowers the close
/// threshold from 0.8 toward `threshold_from_trust` as measured propagation
/// completeness rises, never below 0.5 + ε.
pub fn graded_schedule(inputs: &ScheduleInputs) -> ThresholdSchedule {
    let k = inputs.sub_rounds.max(1);
    let cap = if inputs.classic {
        CLASSIC_THRESHOLD
    } else {
        // Interpolate from the classic 0.8 toward the trust-implied safe
        // threshold as propagation evidence accumulates. Fully trusted
        // lists relax toward a bare majority; untrusted lists tighten
        // toward 1 (consensus unattainable).
        let trust_threshold = threshold_from_trust(&inputs.trust_fractions)
            .unwrap_or(CLASSIC_THRESHOLD)
            .max(0.5 + MAJORITY_EPS);
        let completeness = inputs.propagation_completeness.clamp(0.0, 1.0);
        (CLASSIC_THRESHOLD + completeness * (trust_threshold - CLASSIC_THRESHOLD)).min(1.0)
    };
    let per_subround = (0..k)
        .map(|j| {
            if k == 1 {
                cap
            } else {
                let ramp = 0.5 + (j as f64 / (k - 1) as f64) * (CLASSIC_THRESHOLD - 0.5);
                ramp.min(cap)
            }
        })
        .collect();
    ThresholdSchedule {
        per_subround,
        absolute_cap: cap,
    }
}

/// Maximal mandatory wait before sub-rounds begin: `y = 6x`, which covers at
/// least three batched forwarding hops of candidate propagation.
pub fn mandatory_wait(batch_period: f64) -> f64 {
    6.0 * batch_period
}

/// Whether `yes` votes out of `denom` meet the share `threshold`.
pub fn meets_threshold(yes: usize, denom: usize, threshold: f64) -> bool {
    denom > 0 && yes as f64 + VOTE_EPS >= threshold * denom as f64
}

/// A node's ledger bookkeeping across rounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeLedgerState {
    pub last_closed: BTreeSet<TxId>,
    pub held_over: BTreeSet<TxId>,
    pub queue: Vec<Transaction>,
}

impl NodeLedgerState {
    /// Closes `txns`; everything else the node saw this round is held over.
    pub fn close_round(&mut self, closed: BTreeSet<TxId>, seen: &BTreeSet<TxId>) {
        self.held_over = seen.difference(&closed).copied().collect();
        self.last_closed = closed;
        debug_assert!(self.last_closed.is_disjoint(&self.held_over));
    }
}

/// Stage-1 state for one node: own candidate set, vetting of foreign sets,
/// and once-only batched forwarding ordered by fee under a bandwidth cap.
#[derive(Debug, Clone)]
pub struct Stage1State {
    pub node: NodeId,
    pub ledger: NodeLedgerState,
    pub own_set: CandidateSet,
    /// Transactions seen and vetted valid this round (own + assimilated).
    pub seen: BTreeSet<TxId>,
    fees: BTreeMap<TxId, u64>,
    forwarded_origins: BTreeSet<NodeId>,
    pending_forward: Vec<CandidateSet>,
    /// Max candidate sets per batch flush; `None` means unlimited.
    pub bandwidth_cap: Option<usize>,
}

impl Stage1State {
    pub fn new(node: NodeId, bandwidth_cap: Option<usize>) -> Self {
        Stage1State {
            node,
            ledger: NodeLedgerState::default(),
            own_set: CandidateSet {
                origin: node,
                txns: BTreeSet::new(),
            },
            seen: BTreeSet::new(),
            fees: BTreeMap::new(),
            forwarded_origins: BTreeSet::new(),
            pending_forward: Vec::new(),
            bandwidth_cap,
        }
    }

    /// Flushes the queue into this round's candidate set, held-over
    /// transactions first, and returns the set to declare once.
    pub fn begin_round(&mut self) -> CandidateSet {
        let mut txns = BTreeSet::new();
        for id in std::mem::take(&mut self.ledger.held_over) {
            txns.insert(id);
        }
        for tx in std::mem::take(&mut self.ledger.queue) {
            if tx.valid {
                txns.insert(tx.id);
                self.fees.insert(tx.id, tx.fee);
            }
        }
        self.seen.extend(txns.iter().copied());
        self.own_set = CandidateSet {
            origin: self.node,
            txns,
        };
        self.own_set.clone()
    }

    /// Vets a foreign candidate set transaction by transaction; invalid
    /// entries die here. Valid content is assimilated and the set is queued
    /// for forwarding unless this origin was already forwarded.
    pub fn on_candidate_set(&mut self, set: &CandidateSet, validity: &dyn Fn(TxId) -> bool) {
        let vetted: BTreeSet<TxId> = set.txns.iter().copied().filter(|&t| validity(t)).collect();
        if vetted.is_empty() && !set.txns.is_empty() {
            return; // nothing survives vetting, nothing to forward
        }
        self.seen.extend(vetted.iter().copied());
        if set.origin != self.node && self.forwarded_origins.insert(set.origin) {
            self.pending_forward.push(CandidateSet {
                origin: set.origin,
                txns: vetted,
            });
        }
    }

    /// One batch flush: pending sets, highest total fee first when capped.
    pub fn flush_batch(&mut self) -> Vec<CandidateSet> {
        if let Some(cap) = self.bandwidth_cap {
            self.pending_forward.sort_by_key(|s| {
                std::cmp::Reverse(s.txns.iter().map(|t| self.fees.get(t).copied().unwrap_or(0)).sum::<u64>())
            });
            let rest = self.pending_forward.split_off(cap.min(self.pending_forward.len()));
            std::mem::replace(&mut self.pending_forward, rest)
        } else {
            std::mem::take(&mut self.pending_forward)
        }
    }

    pub fn register_fee(&mut self, tx: Transaction) {
        self.fees.insert(tx.id, tx.fee);
    }
}

/// One sub-round's tally at one node, over proposals from its UNL.
#[derive(Debug, Clone, Default)]
pub struct SubRoundTally {
    pub yes: usize,
    pub received: usize,
}

impl SubRoundTally {
    /// Elimination decision: survives if the yes share over *received* UNL
    /// proposals meets the sub-round threshold.
    pub fn retains(&self, threshold: f64) -> bool {
        meets_threshold(self.yes, self.received, threshold)
    }

    /// Close decision: mathematical-certainty test against the full UNL
    /// size, so silence counts against the transaction.
    pub fn closes(&self, unl_size: usize, absolute: f64) -> bool {
        meets_threshold(self.yes, unl_size, absolute)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mandatory_wait_is_six_batch_periods() {
        assert!((mandatory_wait(0.25) - 1.5).abs() < 1e-12);
        assert!((mandatory_wait(1.0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn three_hops_fit_inside_the_wait_when_hops_cost_at_most_two_periods() {
        // Worst case on a line a-b-c-d: each hop waits out one full batch
        // period and one delivery at most as long as another period.
        let x = 0.25;
        let per_hop_worst = 2.0 * x;
        assert!(3.0 * per_hop_worst <= mandatory_wait(x) + 1e-12);
    }

    #[test]
    fn overlap_algebra_matches_known_points() {
        assert!((min_overlap_for_threshold(0.8).unwrap() - 0.4).abs() < 1e-12);
        assert!((min_overlap_for_threshold(1.0).unwrap() - 0.0).abs() < 1e-12);
        assert!((min_overlap_for_threshold(0.55).unwrap() - 0.9).abs() < 1e-12);
        assert!(min_overlap_for_threshold(0.5).is_err());
        assert!(min_overlap_for_threshold(0.2).is_err());
    }

    #[test]
    fn trust_threshold_matches_known_points() {
        assert!((threshold_from_trust(&[1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((threshold_from_trust(&[0.9, 0.95]).unwrap() - 0.55).abs() < 1e-12);
        assert!((threshold_from_trust(&[0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(threshold_from_trust(&[]).is_err());
        assert!(threshold_from_trust(&[1.2]).is_err());
    }

    #[test]
    fn algebra_round_trips_on_the_overlap_line() {
        for i in 0..=20 {
            let w = i as f64 / 20.0;
            let rho = threshold_from_trust(&[w]).unwrap();
            if rho > 0.5 {
                let back = min_overlap_for_threshold(rho).unwrap();
                assert!((back - w).abs() < 1e-12, "w={w}: got {back}");
            }
        }
    }

    #[test]
    fn classic_schedule_single_round_is_point_eight() {
        let s = graded_schedule(&ScheduleInputs {
            classic: true,
            sub_rounds: 1,
            trust_fractions: vec![1.0],
            propagation_completeness: 1.0,
        });
        assert_eq!(s.per_subround, vec![0.8]);
        assert!((s.absolute_cap - 0.8).abs() < 1e-12);
        s.validate().unwrap();
    }

    #[test]
    fn classic_schedule_ramps_to_point_eight() {
        let s = graded_schedule(&ScheduleInputs {
            classic: true,
            sub_rounds: 4,
            trust_fractions: vec![1.0],
            propagation_completeness: 0.0,
        });
        assert_eq!(s.per_subround, vec![0.5, 0.6, 0.7, 0.8]);
        s.validate().unwrap();
    }

    #[test]
    fn graded_cap_reaches_majority_floor_at_full_trust_and_propagation() {
        let s = graded_schedule(&ScheduleInputs {
            classic: false,
            sub_rounds: 4,
            trust_fractions: vec![1.0],
            propagation_completeness: 1.0,
        });
        assert!((s.absolute_cap - (0.5 + MAJORITY_EPS)).abs() < 1e-12);
        s.validate().unwrap();
    }

    #[test]
    fn graded_cap_stays_classic_without_propagation_evidence() {
        let s = graded_schedule(&ScheduleInputs {
            classic: false,
            sub_rounds: 4,
            trust_fractions: vec![1.0],
            propagation_completeness: 0.0,
        });
        assert!((s.absolute_cap - 0.8).abs() < 1e-12);
    }

    #[test]
    fn schedule_validation_rejects_bad_shapes() {
        assert_eq!(
            ThresholdSchedule { per_subround: vec![], absolute_cap: 0.8 }.validate(),
            Err(ConsensusError::EmptySchedule)
        );
        assert_eq!(
            ThresholdSchedule { per_subround: vec![0.7, 0.5], absolute_cap: 0.8 }.validate(),
            Err(ConsensusError::NonMonotoneSchedule)
        );
        assert!(ThresholdSchedule { per_subround: vec![0.5, 0.9], absolute_cap: 0.8 }
            .validate()
            .is_err());
    }

    #[test]
    fn close_needs_at_least_eighty_percent_in_classic() {
        let tally = SubRoundTally { yes: 79, received: 100 };
        assert!(!tally.closes(100, CLASSIC_THRESHOLD));
        let tally = SubRoundTally { yes: 80, received: 100 };
        assert!(tally.closes(100, CLASSIC_THRESHOLD));
        // Full agreement closes under any valid schedule.
        assert!(SubRoundTally { yes: 45, received: 45 }.closes(45, 0.8));
    }

    #[test]
    fn begin_round_reincludes_held_over_first() {
        let mut s = Stage1State::new(0, None);
        s.ledger.held_over.insert(7);
        s.ledger.queue.push(Transaction { id: 9, valid: true, fee: 1 });
        s.ledger.queue.push(Transaction { id: 11, valid: false, fee: 5 });
        let set = s.begin_round();
        assert!(set.txns.contains(&7));
        assert!(set.txns.contains(&9));
        assert!(!set.txns.contains(&11)); // invalid never enters
    }

    #[test]
    fn invalid_foreign_transactions_are_dropped_not_forwarded() {
        let mut s = Stage1State::new(3, None);
        let foreign = CandidateSet {
            origin: 5,
            txns: [42].into_iter().collect(),
        };
        s.on_candidate_set(&foreign, &|_| false);
        assert!(s.flush_batch().is_empty());
        assert!(!s.seen.contains(&42));
    }

    #[test]
    fn forward_happens_once_per_origin() {
        let mut s = Stage1State::new(3, None);
        let foreign = CandidateSet {
            origin: 5,
            txns: [42].into_iter().collect(),
        };
        s.on_candidate_set(&foreign, &|_| true);
        s.on_candidate_set(&foreign, &|_| true);
        assert_eq!(s.flush_batch().len(), 1);
        assert!(s.flush_batch().is_empty());
    }

    #[test]
    fn bandwidth_cap_orders_batches_by_descending_fee() {
        let mut s = Stage1State::new(0, Some(1));
        s.register_fee(Transaction { id: 1, valid: true, fee: 5 });
        s.register_fee(Transaction { id: 2, valid: true, fee: 9 });
        s.on_candidate_set(
            &CandidateSet { origin: 10, txns: [1].into_iter().collect() },
            &|_| true,
        );
        s.on_candidate_set(
            &CandidateSet { origin: 11, txns: [2].into_iter().collect() },
            &|_| true,
        );
        let first = s.flush_batch();
        assert_eq!(first.len(), 1);
        assert!(first[0].txns.contains(&2), "fee 9 goes out first");
        let second = s.flush_batch();
        assert_eq!(second.len(), 1);
        assert!(second[0].txns.contains(&1));
    }

    #[test]
    fn close_round_partitions_seen_transactions() {
        let mut ledger = NodeLedgerState::default();
        let seen: BTreeSet<TxId> = [1, 2, 3].into_iter().collect();
        ledger.close_round([2].into_iter().collect(), &seen);
        assert!(ledger.last_closed.contains(&2));
        assert_eq!(ledger.held_over, [1, 3].into_iter().collect());
    }
}
