//! Small deterministic harness that wires [`crate::membership`] node states
//! together over latency-weighted full-mesh delivery. Used by the join,
//! leave and replenishment scenarios; experiment cases use the batch engine
//! instead.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::membership::{
    LivenessState, MembershipMsg, NodeState, Outgoing, Phase, Role, TimingParams,
};
use crate::netsim::EventQueue;
use crate::overlay::{build_simk_overlay, OverlayParams};
use crate::NodeId;

#[derive(Debug)]
enum NetEvent {
    Deliver { src: NodeId, dst: NodeId, msg: MembershipMsg },
    JoinTick { node: NodeId },
    LivenessTick { node: NodeId },
    HeartbeatTick { node: NodeId },
    GossipTick { node: NodeId },
}

pub struct MembershipNet {
    pub nodes: Vec<NodeState>,
    pub now: u64,
    /// Nodes that receive but never react (non-responders).
    pub silent: BTreeSet<NodeId>,
    pub heartbeats_enabled: bool,
    pub gossip_enabled: bool,
    pub liveness_ticks_enabled: bool,
    /// `time node peer old_state new_state reason` lines when enabled.
    pub trace: Option<Vec<String>>,
    /// Every send as (time, src, dst, kind name), for scenario assertions.
    pub sent_log: Vec<(u64, NodeId, NodeId, &'static str)>,
    queue: EventQueue<NetEvent>,
    rng: ChaCha8Rng,
    latency_range_ms: (u64, u64),
}

fn kind_name(msg: &MembershipMsg) -> &'static str {
    match msg {
        MembershipMsg::NmlPull => "NmlPull",
        MembershipMsg::NmlResponse(_) => "NmlResponse",
        MembershipMsg::TrustToken => "TrustToken",
        MembershipMsg::Ack => "Ack",
        MembershipMsg::Heartbeat { .. } => "Heartbeat",
        MembershipMsg::NodeLeave { .. } => "NodeLeave",
    }
}

impl MembershipNet {
    pub fn new(seed: u64) -> Self {
        MembershipNet {
            nodes: Vec::new(),
            now: 0,
            silent: BTreeSet::new(),
            heartbeats_enabled: false,
            gossip_enabled: false,
            liveness_ticks_enabled: false,
            trace: None,
            sent_log: Vec::new(),
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            latency_range_ms: (5, 50),
        }
    }

    /// A network of `params.num_nodes` live servers with prebuilt views.
    /// Every node doubles as an introducer so joiners can bootstrap from
    /// any of them.
    pub fn fully_live(params: &OverlayParams, timing: TimingParams, seed: u64) -> Self {
        let mut net = MembershipNet::new(seed);
        let overlay = build_simk_overlay(params, &mut net.rng).expect("valid params");
        let introducers: BTreeSet<NodeId> = (0..params.num_nodes as NodeId).collect();
        for (id, views) in overlay.views.iter().enumerate() {
            net.nodes.push(NodeState::live_from_views(
                id as NodeId,
                views,
                &introducers,
                params.clone(),
                timing,
                0,
            ));
        }
        net
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn schedule_liveness_ticks(&mut self) {
        self.liveness_ticks_enabled = true;
        for id in 0..self.nodes.len() as NodeId {
            let t1 = self.nodes[id as usize].timing.t1;
            self.queue.push(self.now + t1, NetEvent::LivenessTick { node: id });
        }
    }

    pub fn schedule_heartbeats(&mut self) {
        self.heartbeats_enabled = true;
        for id in 0..self.nodes.len() as NodeId {
            let t2 = self.nodes[id as usize].timing.t2;
            self.queue.push(self.now + t2, NetEvent::HeartbeatTick { node: id });
        }
    }

    pub fn schedule_gossip(&mut self) {
        self.gossip_enabled = true;
        for id in 0..self.nodes.len() as NodeId {
            let t3 = self.nodes[id as usize].timing.t3;
            self.queue.push(self.now + t3, NetEvent::GossipTick { node: id });
        }
    }

    /// Multicasts a node's leave announcement and removes it from play.
    pub fn node_leaves(&mut self, id: NodeId) {
        let now = self.now;
        let outgoing = self.nodes[id as usize].announce_leave(now);
        self.send_all(id, outgoing);
    }

    fn latency(&mut self) -> u64 {
        let (min, max) = self.latency_range_ms;
        self.rng.gen_range(min..max)
    }

    fn send_all(&mut self, src: NodeId, outgoing: Vec<Outgoing>) {
        for out in outgoing {
            let lat = self.latency();
            self.sent_log.push((self.now, src, out.to, kind_name(&out.msg)));
            self.queue.push(self.now + lat, NetEvent::Deliver { src, dst: out.to, msg: out.msg });
        }
    }

    /// Rewinds node `id` to a fresh joining state and erases it from every
    /// other node's lists, as if it had never been present. Its first join
    /// iteration is scheduled one t4 out.
    pub fn reset_to_joiner(&mut self, id: NodeId, introducers: &[NodeId]) {
        for (other, node) in self.nodes.iter_mut().enumerate() {
            if other as NodeId == id {
                continue;
            }
            node.records.remove(&id);
            node.unl.unl_a.remove(&id);
            for group in node.unl.unl_b.values_mut() {
                group.remove(&id);
            }
            node.tnl.members.remove(&id);
        }
        let params = self.nodes[id as usize].params.clone();
        let timing = self.nodes[id as usize].timing;
        let mut fresh = NodeState::new(id, Role::Server, params, timing);
        fresh.introducers = introducers.iter().copied().collect();
        self.nodes[id as usize] = fresh;
        self.queue.push(self.now + timing.t4, NetEvent::JoinTick { node: id });
    }

    fn snapshot(&self, node: NodeId) -> Vec<(NodeId, LivenessState)> {
        self.nodes[node as usize]
            .records
            .values()
            .map(|r| (r.node, r.state))
            .collect()
    }

    fn trace_diff(&mut self, node: NodeId, before: &[(NodeId, LivenessState)], reason: &str) {
        let Some(trace) = self.trace.as_mut() else { return };
        let after = self.nodes[node as usize]
            .records
            .values()
            .map(|r| (r.node, r.state))
            .collect::<Vec<_>>();
        for &(peer, new_state) in &after {
            let old = before.iter().find(|(p, _)| *p == peer).map(|(_, s)| *s);
            if old != Some(new_state) {
                trace.push(format!(
                    "{} {} {} {:?} {:?} {}",
                    self.now,
                    node,
                    peer,
                    old.unwrap_or(LivenessState::S4),
                    new_state,
                    reason
                ));
            }
        }
        for (peer, old_state) in before {
            if !after.iter().any(|(p, _)| p == peer) {
                trace.push(format!(
                    "{} {} {} {:?} {:?} {}",
                    self.now, node, peer, old_state, LivenessState::S4, reason
                ));
            }
        }
    }

    /// Runs until the queue drains or simulated time passes `until` ms.
    pub fn run_until(&mut self, until: u64) {
        while let Some(&at) = self.queue.peek_time().as_ref() {
            if at > until {
                break;
            }
            let (at, ev) = self.queue.pop().expect("peeked");
            self.now = at;
            match ev {
                NetEvent::Deliver { src, dst, msg } => {
                    if self.nodes[dst as usize].phase == Phase::Left {
                        continue;
                    }
                    if self.silent.contains(&dst) {
                        continue; // receives, never reacts
                    }
                    let before = self.trace.is_some().then(|| self.snapshot(dst));
                    let out = self.nodes[dst as usize].on_message(src, &msg, at);
                    if let Some(before) = before {
                        self.trace_diff(dst, &before, "message");
                    }
                    self.send_all(dst, out);
                }
                NetEvent::JoinTick { node } => {
                    let state = &mut self.nodes[node as usize];
                    if state.phase != Phase::Joining {
                        continue;
                    }
                    let mut out = state.join_step(at, &mut self.rng);
                    out.extend(self.nodes[node as usize].build_unl_from_nml(at, &mut self.rng));
                    let t4 = self.nodes[node as usize].timing.t4;
                    self.send_all(node, out);
                    if self.nodes[node as usize].phase == Phase::Joining {
                        self.queue.push(at + t4, NetEvent::JoinTick { node });
                    }
                }
                NetEvent::LivenessTick { node } => {
                    if self.nodes[node as usize].phase == Phase::Left || self.silent.contains(&node) {
                        continue;
                    }
                    let before = self.trace.is_some().then(|| self.snapshot(node));
                    let out = self.nodes[node as usize].tick_liveness(at);
                    if let Some(before) = before {
                        self.trace_diff(node, &before, "tick");
                    }
                    self.send_all(node, out);
                    if self.liveness_ticks_enabled {
                        let t1 = self.nodes[node as usize].timing.t1;
                        self.queue.push(at + t1, NetEvent::LivenessTick { node });
                    }
                }
                NetEvent::HeartbeatTick { node } => {
                    if self.nodes[node as usize].phase != Phase::Live || self.silent.contains(&node) {
                        continue;
                    }
                    let state = &mut self.nodes[node as usize];
                    state.heartbeat_seq += 1;
                    let num = state.heartbeat_seq;
                    let peers: Vec<NodeId> = state
                        .unl
                        .iter()
                        .chain(state.tnl.members.iter().copied())
                        .collect();
                    let out: Vec<Outgoing> = peers
                        .into_iter()
                        .map(|to| Outgoing { to, msg: MembershipMsg::Heartbeat { num } })
                        .collect();
                    let t2 = state.timing.t2;
                    self.send_all(node, out);
                    if self.heartbeats_enabled {
                        self.queue.push(at + t2, NetEvent::HeartbeatTick { node });
                    }
                }
                NetEvent::GossipTick { node } => {
                    if self.nodes[node as usize].phase != Phase::Live || self.silent.contains(&node) {
                        continue;
                    }
                    let share = {
                        let state = &self.nodes[node as usize];
                        MembershipMsg::NmlResponse(crate::membership::NmlShare {
                            servers: state
                                .records
                                .values()
                                .filter(|r| r.state <= LivenessState::S2)
                                .map(|r| (r.node, r.last_timestamp))
                                .collect(),
                            introducers: state.introducers.iter().copied().collect(),
                        })
                    };
                    let peers: Vec<NodeId> = self.nodes[node as usize].records.keys().copied().collect();
                    let out: Vec<Outgoing> = peers
                        .into_iter()
                        .map(|to| Outgoing { to, msg: share.clone() })
                        .collect();
                    let t3 = self.nodes[node as usize].timing.t3;
                    self.send_all(node, out);
                    if self.gossip_enabled {
                        self.queue.push(at + t3, NetEvent::GossipTick { node });
                    }
                }
            }
        }
        self.now = self.now.max(until);
    }

    pub fn quiescent(&self) -> bool {
        self.queue.is_empty()
    }
}
