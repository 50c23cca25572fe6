//! One scenario case end to end: seeded topology build, malicious placement,
//! network-issue injection, the event-driven message loop, and metric
//! extraction.
//!
//! Case phasing. Propagation modes flood the source's candidate set to
//! quiescence. Consensus modes run a full round: every genuine node declares
//! a candidate set at t=0 (the source's carries the transaction), batched
//! once-only forwarding spreads the sets, and after the mandatory wait
//! `y = 6x` the stage-2 sub-rounds exchange proposals. A node closes the
//! transaction the moment yes-votes from its UNL within one sub-round reach
//! its absolute threshold over the full UNL size.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::{graded_schedule, meets_threshold, ScheduleInputs};
use crate::netsim::{
    apply_network_issues, effective_ncp, place_malicious, shortest_distances, success_predicate,
    CaseFacts, CaseResult, ConfigError, EventQueue, LinkModel, MaliciousPlacement, MessageKind,
    Mode, PackedVote, ScenarioConfig,
};
use crate::overlay::{build_topology, Topology, Variant};
use crate::NodeId;

const MAX_SUBROUNDS: usize = 8;

/// Fixed-size bitmap over node ids (MAX_NODES = 256).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct OriginSet([u64; 4]);

impl OriginSet {
    #[inline]
    fn insert(&mut self, id: NodeId) -> bool {
        let word = (id >> 6) as usize;
        let mask = 1u64 << (id & 63);
        let fresh = self.0[word] & mask == 0;
        self.0[word] |= mask;
        fresh
    }

    #[inline]
    fn contains(&self, id: NodeId) -> bool {
        self.0[(id >> 6) as usize] & (1u64 << (id & 63)) != 0
    }

    fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
}

/// One line of the optional event log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLogEntry {
    pub at_us: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: MessageKind,
    /// Carried entries as (origin, sub-round, vote); candidate sets use
    /// sub-round 0 and vote = true.
    pub origins: Vec<(NodeId, u8, bool)>,
    pub forwarded: bool,
}

enum Ev {
    Cand { src: NodeId, dst: NodeId, origins: Rc<[NodeId]>, forwarded: bool },
    Prop { src: NodeId, dst: NodeId, votes: Rc<[PackedVote]>, forwarded: bool },
    Tick { node: NodeId },
    SubRound { idx: u8 },
}

#[derive(Clone)]
struct EngineNode {
    received_at: Option<u64>,
    seen_origins: OriginSet,
    cand_pending: Vec<NodeId>,
    prop_pending: Vec<PackedVote>,
    prop_seen: [OriginSet; MAX_SUBROUNDS],
    tally_counted: [OriginSet; MAX_SUBROUNDS],
    yes: [u32; MAX_SUBROUNDS],
    rcv: [u32; MAX_SUBROUNDS],
    vote: bool,
    dropped: bool,
    theta_abs: f64,
    per_subround: [f64; MAX_SUBROUNDS],
    tick_scheduled: bool,
    closed_at: Option<u64>,
}

impl EngineNode {
    fn new() -> Self {
        EngineNode {
            received_at: None,
            seen_origins: OriginSet::default(),
            cand_pending: Vec::new(),
            prop_pending: Vec::new(),
            prop_seen: [OriginSet::default(); MAX_SUBROUNDS],
            tally_counted: [OriginSet::default(); MAX_SUBROUNDS],
            yes: [0; MAX_SUBROUNDS],
            rcv: [0; MAX_SUBROUNDS],
            vote: false,
            dropped: false,
            theta_abs: crate::consensus::CLASSIC_THRESHOLD,
            per_subround: [0.0; MAX_SUBROUNDS],
            tick_scheduled: false,
            closed_at: None,
        }
    }
}

/// Everything a finished case knows, for invariant checks and debugging.
pub struct CaseState {
    pub topology: Topology,
    pub placement: MaliciousPlacement,
    pub source: NodeId,
    pub target: Option<NodeId>,
    pub received_at_us: Vec<Option<u64>>,
    pub closed: Vec<bool>,
    pub distances: Vec<usize>,
    pub facts: CaseFacts,
    pub event_log: Vec<EventLogEntry>,
    /// `time node sub_round txn yes_fraction decision` lines, captured with
    /// the event log.
    pub consensus_trace: Vec<String>,
}

pub fn run_case(config: &ScenarioConfig, seed: u64) -> Result<CaseResult, ConfigError> {
    run_case_full(config, seed).map(|(result, _)| result)
}

pub fn run_case_full(config: &ScenarioConfig, seed: u64) -> Result<(CaseResult, CaseState), ConfigError> {
    config.validate()?;
    assert!(config.engine.sub_rounds <= MAX_SUBROUNDS, "sub_rounds above engine limit");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.num_nodes;

    // Build order is fixed so a seed fully determines the case:
    // topology, target, malicious placement, source, network issues.
    let topology = build_topology(config.variant, &config.overlay_params(), &config.latency, &mut rng)?;

    let target: Option<NodeId> = if config.mode.has_target() {
        Some(rng.gen_range(0..n) as NodeId)
    } else {
        None
    };

    let placement = place_malicious(config, &topology, target, &mut rng);
    let genuine_nodes = n - placement.count;

    let source: NodeId = {
        let genuine: Vec<NodeId> = (0..n as NodeId)
            .filter(|&i| !placement.is_malicious(i) && Some(i) != target)
            .collect();
        genuine[rng.gen_range(0..genuine.len())]
    };

    let mut links: Vec<Vec<LinkModel>> = topology
        .latency_us
        .iter()
        .map(|ls| ls.iter().map(|&l| LinkModel { base_latency_us: l, ni_factor: 1.0 }).collect())
        .collect();
    apply_network_issues(&mut links, config, &mut rng);

    // Send lists with effective latencies folded in. The restricted variant
    // declares and proposes to the UNL only.
    let send_links: Vec<Vec<(NodeId, u64)>> = (0..n)
        .map(|i| {
            topology.neighbors[i]
                .iter()
                .zip(&links[i])
                .filter(|(&dst, _)| {
                    !(config.engine.restrict_recipients && config.variant == Variant::SimK)
                        || topology.unl[i].contains(&dst)
                })
                .map(|(&dst, link)| (dst, link.effective_us()))
                .collect()
        })
        .collect();

    let mut unl_sets: Vec<OriginSet> = vec![OriginSet::default(); n];
    for (i, unl) in topology.unl.iter().enumerate() {
        for &peer in unl {
            unl_sets[i].insert(peer);
        }
    }
    let unl_len: Vec<u32> = topology.unl.iter().map(|u| u.len() as u32).collect();

    let distances = shortest_distances(&topology.neighbors, &placement.malicious, source);

    let consensus_mode = config.mode.is_consensus();
    let x_us = config.engine.batch_period_us();
    let wait_us = config.engine.mandatory_wait_us();
    let sub_round_us = config.engine.sub_round_us();
    let k = config.engine.sub_rounds;
    let t_end = wait_us + k as u64 * sub_round_us;

    let mut nodes: Vec<EngineNode> = vec![EngineNode::new(); n];
    let mut queue: EventQueue<Ev> = EventQueue::new();
    let mut log: Vec<EventLogEntry> = Vec::new();
    let mut consensus_trace: Vec<String> = Vec::new();

    let mut sent: u64 = 0;
    let mut recvd: u64 = 0;
    let mut receivers: u32 = 0;
    let mut genuine_receivers: u32 = 0;
    let mut closed_genuine: u32 = 0;

    let mut bar_receipt_at: Option<u64> = None;
    let mut bar_closed_at: Option<u64> = None;
    let mut all_genuine_at: Option<u64> = None;
    let mut last_receipt_at: u64 = 0;

    let receipt_bar: u32 = if config.mode.uses_ncp() {
        let ncp = effective_ncp(config, genuine_nodes);
        let ncp_count = ((ncp / 100.0) * n as f64).floor() as u32;
        (genuine_nodes as u32).min(ncp_count)
    } else {
        0
    };

    // --- receipt bookkeeping ---------------------------------------------
    macro_rules! mark_received {
        ($v:expr, $now:expr) => {{
            let v = $v as usize;
            if nodes[v].received_at.is_none() {
                nodes[v].received_at = Some($now);
                receivers += 1;
                last_receipt_at = $now;
                if !placement.malicious[v] {
                    genuine_receivers += 1;
                    if genuine_receivers == genuine_nodes as u32 && all_genuine_at.is_none() {
                        all_genuine_at = Some($now);
                    }
                }
                if receivers == receipt_bar && bar_receipt_at.is_none() {
                    bar_receipt_at = Some($now);
                }
            }
        }};
    }

    // The source holds the information from the start.
    mark_received!(source, 0);

    let tx_valid = config.engine.tx_valid;

    // --- round start ------------------------------------------------------
    if consensus_mode {
        // Every genuine node declares once; the source's set carries the tx.
        for v in 0..n as NodeId {
            if placement.malicious[v as usize] {
                continue;
            }
            nodes[v as usize].vote = v == source && tx_valid;
            let origins: Rc<[NodeId]> = Rc::from(vec![v].into_boxed_slice());
            for &(dst, lat) in &send_links[v as usize] {
                sent += 1;
                queue.push(lat, Ev::Cand { src: v, dst, origins: Rc::clone(&origins), forwarded: false });
            }
        }
    } else {
        let origins: Rc<[NodeId]> = Rc::from(vec![source].into_boxed_slice());
        for &(dst, lat) in &send_links[source as usize] {
            sent += 1;
            queue.push(lat, Ev::Cand { src: source, dst, origins: Rc::clone(&origins), forwarded: false });
        }
    }

    if consensus_mode {
        for j in 0..k {
            queue.push(wait_us + j as u64 * sub_round_us, Ev::SubRound { idx: j as u8 });
        }
    }

    // --- event loop --------------------------------------------------------
    let next_tick = |now: u64| (now / x_us + 1) * x_us;

    while let Some((now, ev)) = queue.pop() {
        if consensus_mode && now > t_end {
            break;
        }
        match ev {
            Ev::Cand { src, dst, origins, forwarded } => {
                recvd += 1;
                if config.engine.capture_event_log {
                    log.push(EventLogEntry {
                        at_us: now,
                        src,
                        dst,
                        kind: MessageKind::CandidateSet,
                        origins: origins.iter().map(|&o| (o, 0, true)).collect(),
                        forwarded,
                    });
                }
                let malicious = placement.malicious[dst as usize];
                for &origin in origins.iter() {
                    if origin == source {
                        mark_received!(dst, now);
                    }
                    if nodes[dst as usize].seen_origins.insert(origin) {
                        // The source's set dies here when the tx is invalid;
                        // genuine receivers vet it and refuse to forward.
                        let dies = origin == source && !tx_valid;
                        if !malicious && !dies && origin != dst {
                            nodes[dst as usize].cand_pending.push(origin);
                        }
                    }
                }
                if !malicious && !nodes[dst as usize].cand_pending.is_empty() && !nodes[dst as usize].tick_scheduled {
                    nodes[dst as usize].tick_scheduled = true;
                    queue.push(next_tick(now), Ev::Tick { node: dst });
                }
            }
            Ev::Prop { src, dst, votes, forwarded } => {
                recvd += 1;
                if config.engine.capture_event_log {
                    log.push(EventLogEntry {
                        at_us: now,
                        src,
                        dst,
                        kind: MessageKind::Proposal,
                        origins: votes.iter().map(|v| (v.origin(), v.sub_round(), v.yes())).collect(),
                        forwarded,
                    });
                }
                let d = dst as usize;
                let malicious = placement.malicious[d];
                for vote in votes.iter() {
                    let (origin, j, yes) = (vote.origin(), vote.sub_round() as usize, vote.yes());
                    if nodes[d].prop_seen[j].insert(origin) && !malicious && origin != dst {
                        nodes[d].prop_pending.push(*vote);
                    }
                    if !malicious && unl_sets[d].contains(origin) && nodes[d].tally_counted[j].insert(origin) {
                        nodes[d].rcv[j] += 1;
                        if yes {
                            nodes[d].yes[j] += 1;
                            if nodes[d].closed_at.is_none()
                                && meets_threshold(nodes[d].yes[j] as usize, unl_len[d] as usize, nodes[d].theta_abs)
                            {
                                nodes[d].closed_at = Some(now);
                                closed_genuine += 1;
                                if config.engine.capture_event_log {
                                    consensus_trace.push(format!(
                                        "{now} {dst} {} {CASE_TX} {:.4} closed",
                                        j + 1,
                                        nodes[d].yes[j] as f64 / unl_len[d] as f64,
                                    ));
                                }
                                if closed_genuine == receipt_bar.max(1) && bar_closed_at.is_none() {
                                    bar_closed_at = Some(now);
                                }
                            }
                        }
                    }
                }
                if !malicious && !nodes[d].prop_pending.is_empty() && !nodes[d].tick_scheduled {
                    nodes[d].tick_scheduled = true;
                    queue.push(next_tick(now), Ev::Tick { node: dst });
                }
            }
            Ev::Tick { node } => {
                let v = node as usize;
                nodes[v].tick_scheduled = false;
                if !nodes[v].cand_pending.is_empty() {
                    let batch: Rc<[NodeId]> = Rc::from(std::mem::take(&mut nodes[v].cand_pending).into_boxed_slice());
                    for &(dst, lat) in &send_links[v] {
                        sent += 1;
                        queue.push(now + lat, Ev::Cand { src: node, dst, origins: Rc::clone(&batch), forwarded: true });
                    }
                }
                if !nodes[v].prop_pending.is_empty() {
                    let batch: Rc<[PackedVote]> = Rc::from(std::mem::take(&mut nodes[v].prop_pending).into_boxed_slice());
                    for &(dst, lat) in &send_links[v] {
                        sent += 1;
                        queue.push(now + lat, Ev::Prop { src: node, dst, votes: Rc::clone(&batch), forwarded: true });
                    }
                }
            }
            Ev::SubRound { idx } => {
                let j = idx as usize;
                for v in 0..n as NodeId {
                    let i = v as usize;
                    if placement.malicious[i] {
                        continue;
                    }
                    if j == 0 {
                        // Stage-2 entry: fix this node's schedule from its
                        // measured propagation completeness.
                        let foreign_seen =
                            nodes[i].seen_origins.count() - nodes[i].seen_origins.contains(v) as u32;
                        let completeness = foreign_seen as f64 / send_links[i].len().max(1) as f64;
                        let schedule = graded_schedule(&ScheduleInputs {
                            classic: config.variant != Variant::SimK,
                            sub_rounds: k,
                            trust_fractions: vec![config.engine.unl_trust_fraction],
                            propagation_completeness: completeness,
                        });
                        nodes[i].theta_abs = schedule.absolute_cap;
                        for (slot, &t) in nodes[i].per_subround.iter_mut().zip(&schedule.per_subround) {
                            *slot = t;
                        }
                        nodes[i].vote = nodes[i].received_at.is_some() && tx_valid;
                    } else {
                        // Elimination/adoption from the previous sub-round's
                        // tally; no received proposals means no evidence and
                        // no change. A transaction this node dropped stays
                        // out of all its later proposals this round.
                        if nodes[i].rcv[j - 1] > 0 {
                            let retained = meets_threshold(
                                nodes[i].yes[j - 1] as usize,
                                nodes[i].rcv[j - 1] as usize,
                                nodes[i].per_subround[j - 1],
                            );
                            if nodes[i].vote && !retained {
                                nodes[i].dropped = true;
                            }
                            nodes[i].vote = retained && !nodes[i].dropped;
                            if config.engine.capture_event_log {
                                consensus_trace.push(format!(
                                    "{now} {v} {j} {CASE_TX} {:.4} {}",
                                    nodes[i].yes[j - 1] as f64 / nodes[i].rcv[j - 1] as f64,
                                    if nodes[i].vote { "retained" } else { "dropped" },
                                ));
                            }
                        }
                    }
                    let packed = PackedVote::new(v, idx, nodes[i].vote);
                    let batch: Rc<[PackedVote]> = Rc::from(vec![packed].into_boxed_slice());
                    for &(dst, lat) in &send_links[i] {
                        sent += 1;
                        queue.push(now + lat, Ev::Prop { src: v, dst, votes: Rc::clone(&batch), forwarded: false });
                    }
                }
            }
        }
    }

    // --- metrics ------------------------------------------------------------
    let genuine_distances: Vec<usize> = (0..n)
        .filter(|&i| !placement.malicious[i])
        .map(|i| distances[i])
        .collect();
    let reachable_all = genuine_distances.iter().all(|&d| d != usize::MAX);
    let max_shortest_dist = if reachable_all {
        genuine_distances.iter().max().map(|&d| d as u32)
    } else {
        None
    };
    let avg_shortest_dist = if reachable_all {
        Some(genuine_distances.iter().sum::<usize>() as f64 / genuine_distances.len() as f64)
    } else {
        None
    };

    let target_received = target.map_or(false, |t| nodes[t as usize].received_at.is_some());
    let target_closed = target.map_or(false, |t| nodes[t as usize].closed_at.is_some());
    let facts = CaseFacts {
        genuine_nodes,
        receivers: receivers as usize,
        genuine_receivers: genuine_receivers as usize,
        closed_genuine: closed_genuine as usize,
        target_received,
        target_closed,
        all_genuine_received: genuine_receivers == genuine_nodes as u32,
        max_shortest_dist,
    };
    let (success, success2) = success_predicate(config, &facts);

    let elapsed_us = match config.mode {
        Mode::NetworkPropagation => bar_receipt_at.unwrap_or(last_receipt_at),
        Mode::TargetPropagation | Mode::EclipsedTargetPropagation => target
            .and_then(|t| nodes[t as usize].received_at)
            .unwrap_or(last_receipt_at),
        Mode::ShortestDistance => last_receipt_at,
        Mode::NetworkConsensus => bar_closed_at.map(|t| t.saturating_sub(wait_us)).unwrap_or(t_end - wait_us),
        Mode::TargetConsensus | Mode::EclipsedTargetConsensus => {
            let both = match (bar_closed_at, target.and_then(|t| nodes[t as usize].closed_at)) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
            both.map(|t| t.saturating_sub(wait_us)).unwrap_or(t_end - wait_us)
        }
    };

    let result = CaseResult {
        success,
        success2,
        elapsed_ms: elapsed_us as f64 / 1000.0,
        sent_msgs: sent,
        recvd_msgs: recvd,
        actual_genuine_nodes: genuine_nodes as u32,
        pct_malicious_realized: 100.0 * placement.count as f64 / n as f64,
        max_shortest_dist,
        avg_shortest_dist,
        receivers,
        genuine_receivers,
        closed_nodes: closed_genuine,
    };
    let state = CaseState {
        topology,
        placement,
        source,
        target,
        received_at_us: nodes.iter().map(|s| s.received_at).collect(),
        closed: nodes.iter().map(|s| s.closed_at.is_some()).collect(),
        distances,
        facts,
        event_log: log,
    };
    Ok((result, state))
}
