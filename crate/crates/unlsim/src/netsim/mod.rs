//! Deterministic seeded discrete-event simulation of one scenario case:
//! message scheduling over latency-weighted links, network-issue and
//! malicious-node injection, success predicates, and the BFS distance
//! oracle.

mod engine;
pub mod membership_net;

pub use engine::{run_case, run_case_full, CaseState, EventLogEntry};

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smallvec::SmallVec;
use thiserror::Error;

use crate::consensus::TxId;
use crate::membership::MembershipMsg;
use crate::overlay::{LatencyConfig, OverlayError, OverlayParams, Topology, Variant};
use crate::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("mode {0} does not exist")]
    InvalidMode(u8),
    #[error("percentage field {0} = {1} outside [0, 100]")]
    PercentageOutOfRange(&'static str, f64),
    #[error("latency factor range invalid: min {0} > max {1}")]
    LatencyFactorRange(f64, f64),
    #[error("batch period must be positive")]
    NonPositiveBatchPeriod,
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

/// Simulation mode. Odd modes measure consensus, even modes measure
/// information propagation; mode 8 measures shortest distances. There is no
/// mode 7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    NetworkConsensus = 1,
    NetworkPropagation = 2,
    TargetConsensus = 3,
    TargetPropagation = 4,
    EclipsedTargetConsensus = 5,
    EclipsedTargetPropagation = 6,
    ShortestDistance = 8,
}

impl Mode {
    pub fn from_number(n: u8) -> Result<Mode, ConfigError> {
        Ok(match n {
            1 => Mode::NetworkConsensus,
            2 => Mode::NetworkPropagation,
            3 => Mode::TargetConsensus,
            4 => Mode::TargetPropagation,
            5 => Mode::EclipsedTargetConsensus,
            6 => Mode::EclipsedTargetPropagation,
            8 => Mode::ShortestDistance,
            other => return Err(ConfigError::InvalidMode(other)),
        })
    }

    pub fn number(&self) -> u8 {
        *self as u8
    }

    pub fn is_consensus(&self) -> bool {
        matches!(self, Mode::NetworkConsensus | Mode::TargetConsensus | Mode::EclipsedTargetConsensus)
    }

    pub fn has_target(&self) -> bool {
        !matches!(self, Mode::NetworkConsensus | Mode::NetworkPropagation)
    }

    pub fn eclipses_target(&self) -> bool {
        matches!(
            self,
            Mode::EclipsedTargetConsensus | Mode::EclipsedTargetPropagation | Mode::ShortestDistance
        )
    }

    /// Network_Consensus_Percent is not valid for modes 4, 6 and 8.
    pub fn uses_ncp(&self) -> bool {
        matches!(
            self,
            Mode::NetworkConsensus | Mode::NetworkPropagation | Mode::TargetConsensus | Mode::EclipsedTargetConsensus
        )
    }

    /// Default seeded-case count: 1500 for odd modes, 5000 for even.
    pub fn default_seed_max(&self) -> u64 {
        if self.number() % 2 == 1 {
            1500
        } else {
            5000
        }
    }
}

/// Engine timing and threshold knobs shared by every case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    /// Batch forwarding period x, in milliseconds.
    pub batch_period_ms: f64,
    /// Stage-2 sub-round count.
    pub sub_rounds: usize,
    /// Sub-round length as a multiple of the batch period.
    pub sub_round_periods: f64,
    /// Trust a node assigns its own UNL (grading input).
    pub unl_trust_fraction: f64,
    /// Restrict stage-1 declarations and stage-2 proposals to the UNL only
    /// (ablation of the UNL ∪ TNL default).
    pub restrict_recipients: bool,
    /// Modelled validity of the injected transaction.
    pub tx_valid: bool,
    /// Capture a full event log (debugging; large).
    pub capture_event_log: bool,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            batch_period_ms: 250.0,
            sub_rounds: 4,
            sub_round_periods: 2.0,
            unl_trust_fraction: 1.0,
            restrict_recipients: false,
            tx_valid: true,
            capture_event_log: false,
        }
    }
}

impl EngineParams {
    pub fn batch_period_us(&self) -> u64 {
        (self.batch_period_ms * 1000.0).round() as u64
    }

    /// Mandatory stage-1 wait y = 6x, in microseconds.
    pub fn mandatory_wait_us(&self) -> u64 {
        (crate::consensus::mandatory_wait(self.batch_period_ms) * 1000.0).round() as u64
    }

    pub fn sub_round_us(&self) -> u64 {
        (self.sub_round_periods * self.batch_period_ms * 1000.0).round() as u64
    }
}

/// One simulated case's full parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub variant: Variant,
    pub mode: Mode,
    pub num_nodes: usize,
    pub c: usize,
    pub b: usize,
    pub d: usize,
    pub percentage_malicious: f64,
    pub network_consensus_percent: f64,
    pub outbound_links_to_node_ratio: f64,
    pub min_latency_factor_ni: f64,
    pub max_latency_factor_ni: f64,
    pub percent_nodes_affected_by_ni: f64,
    pub percent_links_affected_by_ni: f64,
    pub percentage_eclipsed: f64,
    /// Seeded cases per batch; `None` means the mode default (1500 odd,
    /// 5000 even).
    pub seed_max: Option<u64>,
    /// Exclusive upper bound on total malicious nodes; `None` means the
    /// (c+1)(√N−1) default when applicable.
    pub upper_limit_malicious: Option<usize>,
    /// Only honoured for mode 8.
    pub is_upper_limit_malicious_applicable: bool,
    pub latency: LatencyConfig,
    pub engine: EngineParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            variant: Variant::SimK,
            mode: Mode::NetworkPropagation,
            num_nodes: 256,
            c: 2,
            b: 2,
            d: 5,
            percentage_malicious: 0.0,
            network_consensus_percent: 100.0,
            outbound_links_to_node_ratio: 10.0 / 256.0,
            min_latency_factor_ni: 0.0,
            max_latency_factor_ni: 0.0,
            percent_nodes_affected_by_ni: 0.0,
            percent_links_affected_by_ni: 0.0,
            percentage_eclipsed: 0.0,
            seed_max: None,
            upper_limit_malicious: None,
            is_upper_limit_malicious_applicable: false,
            latency: LatencyConfig::default(),
            engine: EngineParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn overlay_params(&self) -> OverlayParams {
        OverlayParams {
            num_nodes: self.num_nodes,
            c: self.c,
            b: self.b,
            d: self.d,
            outbound_links_to_node_ratio: self.outbound_links_to_node_ratio,
        }
    }

    /// The (c+1)(√N−1) default cap.
    pub fn auto_upper_limit(&self) -> usize {
        let s = (self.num_nodes as f64).sqrt().round() as usize;
        (self.c + 1) * (s.saturating_sub(1))
    }

    pub fn effective_upper_limit(&self) -> Option<usize> {
        if self.mode == Mode::ShortestDistance && self.is_upper_limit_malicious_applicable {
            Some(self.upper_limit_malicious.unwrap_or_else(|| self.auto_upper_limit()))
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.overlay_params().validate_for(self.variant)?;
        for (name, value) in [
            ("percentage_malicious", self.percentage_malicious),
            ("network_consensus_percent", self.network_consensus_percent),
            ("percent_nodes_affected_by_ni", self.percent_nodes_affected_by_ni),
            ("percent_links_affected_by_ni", self.percent_links_affected_by_ni),
            ("percentage_eclipsed", self.percentage_eclipsed),
        ] {
            if !(0.0..=100.0).contains(&value) {
                return Err(ConfigError::PercentageOutOfRange(name, value));
            }
        }
        if self.min_latency_factor_ni > self.max_latency_factor_ni {
            return Err(ConfigError::LatencyFactorRange(
                self.min_latency_factor_ni,
                self.max_latency_factor_ni,
            ));
        }
        if self.engine.batch_period_ms <= 0.0 {
            return Err(ConfigError::NonPositiveBatchPeriod);
        }
        Ok(())
    }

    /// Stable hash of the full configuration, for case records.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Typed protocol traffic with a scheduled delivery time.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMessage {
    pub src: NodeId,
    pub dst: NodeId,
    /// Microseconds of simulated time.
    pub deliver_at: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    CandidateSet,
    Proposal,
    Heartbeat,
    NmlPull,
    NmlResponse,
    TrustToken,
    Ack,
    NodeLeave,
}

/// Message payloads. Experiment traffic is batched: one candidate-set
/// message may carry several origins' sets, one proposal message several
/// origins' votes.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Candidate-set batch: the declared origins. The case's transaction
    /// rides with the source node's set.
    CandidateSet(SmallVec<[NodeId; 8]>),
    /// Proposal batch of packed (origin, sub-round, vote) entries.
    Proposal(SmallVec<[PackedVote; 8]>),
    Membership(MembershipMsg),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::CandidateSet(_) => MessageKind::CandidateSet,
            Payload::Proposal(_) => MessageKind::Proposal,
            Payload::Membership(m) => match m {
                MembershipMsg::Heartbeat { .. } => MessageKind::Heartbeat,
                MembershipMsg::NmlPull => MessageKind::NmlPull,
                MembershipMsg::NmlResponse(_) => MessageKind::NmlResponse,
                MembershipMsg::TrustToken => MessageKind::TrustToken,
                MembershipMsg::Ack => MessageKind::Ack,
                MembershipMsg::NodeLeave { .. } => MessageKind::NodeLeave,
            },
        }
    }
}

/// (origin, sub-round, vote) packed into one word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedVote(pub u32);

impl PackedVote {
    pub fn new(origin: NodeId, sub_round: u8, yes: bool) -> Self {
        PackedVote((origin as u32) | ((sub_round as u32) << 16) | ((yes as u32) << 24))
    }
    pub fn origin(&self) -> NodeId {
        (self.0 & 0xffff) as NodeId
    }
    pub fn sub_round(&self) -> u8 {
        ((self.0 >> 16) & 0xff) as u8
    }
    pub fn yes(&self) -> bool {
        (self.0 >> 24) & 1 == 1
    }
}

/// A directed link's latency state: base latency plus a network-issue
/// multiplier (1 = unaffected).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub base_latency_us: u64,
    pub ni_factor: f64,
}

impl LinkModel {
    pub fn effective_us(&self) -> u64 {
        (self.base_latency_us as f64 * self.ni_factor).round() as u64
    }
}

/// How malicious nodes are positioned for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlacementScheme {
    RandomUniform,
    EclipseTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaliciousPlacement {
    pub scheme: PlacementScheme,
    pub target: Option<NodeId>,
    pub eclipsed_fraction: f64,
    /// Realized malicious set as flags over node ids.
    pub malicious: Vec<bool>,
    pub count: usize,
}

impl MaliciousPlacement {
    pub fn is_malicious(&self, node: NodeId) -> bool {
        self.malicious[node as usize]
    }
}

/// Converts `⌈pct% × |set|⌉` of the target's neighbour set (links for mode
/// 8, the UNL for modes 5/6) to malicious, clamped to all-but-one so one
/// genuine connection always remains, then places
/// `⌊percentage_malicious% × N⌋` additional random malicious nodes that
/// never include the target or its eclipsers. A mode-8 cap truncates the
/// total strictly below `upperLimitMalicious`.
pub fn place_malicious<R: Rng>(
    config: &ScenarioConfig,
    topology: &Topology,
    target: Option<NodeId>,
    rng: &mut R,
) -> MaliciousPlacement {
    let n = config.num_nodes;
    let mut malicious = vec![false; n];
    let mut count = 0usize;
    let cap = config.effective_upper_limit();
    let room = |count: &usize| cap.map_or(true, |limit| *count + 1 < limit);

    let mut eclipsed_fraction = 0.0;
    if config.mode.eclipses_target() && config.percentage_eclipsed > 0.0 {
        let target = target.expect("eclipse modes carry a target");
        let pool: Vec<NodeId> = if config.mode == Mode::ShortestDistance {
            topology.neighbors[target as usize].clone()
        } else {
            topology.unl[target as usize].clone()
        };
        let want = ((config.percentage_eclipsed / 100.0) * pool.len() as f64).ceil() as usize;
        let want = want.min(pool.len().saturating_sub(1));
        let picks = sample(rng, pool.len(), pool.len());
        let mut converted = 0usize;
        for idx in picks.into_iter() {
            if converted >= want || !room(&count) {
                break;
            }
            let node = pool[idx];
            if node != target && !malicious[node as usize] {
                malicious[node as usize] = true;
                count += 1;
                converted += 1;
            }
        }
        if !pool.is_empty() {
            eclipsed_fraction = converted as f64 / pool.len() as f64;
        }
    }

    if config.percentage_malicious > 0.0 {
        let want = ((config.percentage_malicious / 100.0) * n as f64).floor() as usize;
        let eligible: Vec<NodeId> = (0..n as NodeId)
            .filter(|&i| Some(i) != target && !malicious[i as usize])
            .collect();
        // A case always keeps one genuine non-target node to originate.
        let want = want.min(eligible.len().saturating_sub(1));
        // Deterministic partial shuffle via index sampling.
        let order = sample(rng, eligible.len(), eligible.len());
        let mut placed = 0usize;
        for idx in order.into_iter() {
            if placed >= want || !room(&count) {
                break;
            }
            let node = eligible[idx];
            malicious[node as usize] = true;
            count += 1;
            placed += 1;
        }
    }

    MaliciousPlacement {
        scheme: if config.mode.eclipses_target() && config.percentage_eclipsed > 0.0 {
            PlacementScheme::EclipseTarget
        } else {
            PlacementScheme::RandomUniform
        },
        target,
        eclipsed_fraction,
        malicious,
        count,
    }
}

/// Applies network issues: `percentNodesAffectedByNI%` of nodes are chosen;
/// for each, `percentLinksAffectedByNI%` of its outbound links receive a
/// latency factor drawn uniformly from `[min, max)`.
pub fn apply_network_issues<R: Rng>(
    links: &mut [Vec<LinkModel>],
    config: &ScenarioConfig,
    rng: &mut R,
) {
    if config.percent_nodes_affected_by_ni <= 0.0
        || config.percent_links_affected_by_ni <= 0.0
        || config.max_latency_factor_ni <= 0.0
    {
        return; // factors of zero mean network issues are off
    }
    let n = links.len();
    let node_count = ((config.percent_nodes_affected_by_ni / 100.0) * n as f64).floor() as usize;
    let chosen = sample(rng, n, node_count.min(n));
    for node in chosen.into_iter() {
        let deg = links[node].len();
        if deg == 0 {
            continue;
        }
        let link_count = ((config.percent_links_affected_by_ni / 100.0) * deg as f64).floor() as usize;
        let picked = sample(rng, deg, link_count.min(deg));
        for k in picked.into_iter() {
            let factor = if config.max_latency_factor_ni > config.min_latency_factor_ni {
                rng.gen_range(config.min_latency_factor_ni..config.max_latency_factor_ni)
            } else {
                config.min_latency_factor_ni
            };
            links[node][k].ni_factor = factor.max(1.0);
        }
    }
}

/// Exact BFS hop counts from `source` over the genuine subgraph.
/// `usize::MAX` marks unreachable nodes.
pub fn shortest_distances(
    neighbors: &[Vec<NodeId>],
    malicious: &[bool],
    source: NodeId,
) -> Vec<usize> {
    let n = neighbors.len();
    let mut dist = vec![usize::MAX; n];
    if malicious[source as usize] {
        return dist;
    }
    dist[source as usize] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize];
        for &v in &neighbors[u as usize] {
            if !malicious[v as usize] && dist[v as usize] == usize::MAX {
                dist[v as usize] = du + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Outcome of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub success: bool,
    /// Mode 8 only: success plus max shortest distance ≤ 3.
    pub success2: bool,
    /// Milliseconds. For consensus modes, measured from stage-2 entry; for
    /// propagation modes, from the round start.
    pub elapsed_ms: f64,
    pub sent_msgs: u64,
    pub recvd_msgs: u64,
    pub actual_genuine_nodes: u32,
    pub pct_malicious_realized: f64,
    /// Max over genuine nodes of BFS distance from the source; `None` when
    /// some genuine node is unreachable.
    pub max_shortest_dist: Option<u32>,
    pub avg_shortest_dist: Option<f64>,
    /// Nodes that received the information (any kind), and genuine receivers.
    pub receivers: u32,
    pub genuine_receivers: u32,
    /// Genuine nodes whose final ledger closed the transaction.
    pub closed_nodes: u32,
}

/// The facts the success predicate needs about a finished case.
#[derive(Debug, Clone, Copy)]
pub struct CaseFacts {
    pub genuine_nodes: usize,
    pub receivers: usize,
    pub genuine_receivers: usize,
    pub closed_genuine: usize,
    pub target_received: bool,
    pub target_closed: bool,
    pub all_genuine_received: bool,
    pub max_shortest_dist: Option<u32>,
}

/// Effective NCP after the clamp: never above the realized genuine share.
pub fn effective_ncp(config: &ScenarioConfig, genuine_nodes: usize) -> f64 {
    let genuine_pct = 100.0 * genuine_nodes as f64 / config.num_nodes as f64;
    config.network_consensus_percent.min(genuine_pct)
}

/// Mode-specific success rules.
///
/// Modes 1/2 need `min(genuine, NCP-count)` nodes at the right consensus /
/// in receipt; modes 3/5 add the target's consensus; modes 4/6 need the
/// target's receipt; mode 8 defines Success₁ (all genuine received) and
/// Success₂ (Success₁ and max shortest distance ≤ 3).
pub fn success_predicate(config: &ScenarioConfig, facts: &CaseFacts) -> (bool, bool) {
    let bar = if config.mode.uses_ncp() {
        let ncp = effective_ncp(config, facts.genuine_nodes);
        let ncp_count = ((ncp / 100.0) * config.num_nodes as f64).floor() as usize;
        facts.genuine_nodes.min(ncp_count)
    } else {
        0
    };
    match config.mode {
        Mode::NetworkConsensus => (facts.closed_genuine >= bar, false),
        Mode::NetworkPropagation => (facts.receivers >= bar, false),
        Mode::TargetConsensus | Mode::EclipsedTargetConsensus => {
            (facts.closed_genuine >= bar && facts.target_closed, false)
        }
        Mode::TargetPropagation | Mode::EclipsedTargetPropagation => (facts.target_received, false),
        Mode::ShortestDistance => {
            let s1 = facts.all_genuine_received;
            let s2 = s1 && facts.max_shortest_dist.map_or(false, |d| d <= 3);
            (s1, s2)
        }
    }
}

/// Min-heap event queue ordered by `(time, sequence)` for deterministic
/// delivery.
#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<QueueEntry<T>>>,
    seq: u64,
}

#[derive(Debug)]
struct QueueEntry<T> {
    at: u64,
    seq: u64,
    item: T,
}

impl<T> PartialEq for QueueEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl<T> Eq for QueueEntry<T> {}
impl<T> PartialOrd for QueueEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for QueueEntry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), seq: 0 }
    }

    pub fn push(&mut self, at: u64, item: T) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(QueueEntry { at, seq, item }));
    }

    pub fn pop(&mut self) -> Option<(u64, T)> {
        self.heap.pop().map(|Reverse(e)| (e.at, e.item))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// The single simulated transaction every case propagates.
pub const CASE_TX: TxId = 1;
