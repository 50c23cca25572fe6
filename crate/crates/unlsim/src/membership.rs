//! Dynamic maintenance of a node's UNL, TNL and NML: the join protocol,
//! liveness states S1–S4 with timed demotion and instant promotion,
//! tombstoning, node-leave handling, and UNL-B replenishment.
//!
//! Everything here is a pure transition `(state, event, now) -> (state,
//! outgoing messages)`; the event loop that wires nodes together lives in
//! [`crate::netsim::membership_net`].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::overlay::{OverlayParams, OverlayViews, Tnl, UnlView};
use crate::NodeId;

/// Liveness of a peer as seen by one node, in descending order of liveness.
/// S1: in a trust list and live. S2: in the NML and live. S3: tombstoned.
/// S4: deleted from the NML.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LivenessState {
    S1,
    S2,
    S3,
    S4,
}

/// One peer entry in a node's membership table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub node: NodeId,
    pub state: LivenessState,
    /// Simulated-clock milliseconds of the most recent communication.
    pub last_timestamp: u64,
    pub heartbeat_num: u64,
}

/// Protocol timing constants, all in simulated milliseconds.
/// `t1 << t2 << t3`; `t5 ≈ 12 × t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    /// Consensus round period.
    pub t1: u64,
    /// Heartbeat period.
    pub t2: u64,
    /// NML gossip period.
    pub t3: u64,
    /// Join iteration period.
    pub t4: u64,
    /// Tombstone threshold.
    pub t5: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        let t1 = 1_000;
        TimingParams {
            t1,
            t2: 6 * t1,
            t3: 30 * t1,
            t4: t1,
            t5: 12 * t1,
        }
    }
}

impl TimingParams {
    /// Age past which an S1 entry demotes to S2.
    pub fn s1_limit(&self) -> u64 {
        6 * self.t1
    }
    /// Age past which an entry tombstones (S3).
    pub fn s2_limit(&self) -> u64 {
        self.t5
    }
    /// Age past which a tombstoned entry is deleted (S4).
    pub fn s3_limit(&self) -> u64 {
        2 * self.t5
    }
}

/// State computed purely from an entry's age. Demotion only; promotion takes
/// received communication.
pub fn state_for_age(age: u64, timing: &TimingParams) -> LivenessState {
    if age <= timing.s1_limit() {
        LivenessState::S1
    } else if age <= timing.s2_limit() {
        LivenessState::S2
    } else if age <= timing.s3_limit() {
        LivenessState::S3
    } else {
        LivenessState::S4
    }
}

/// Applies timed demotion to one record. Never promotes.
pub fn record_tick(record: &mut MemberRecord, now: u64, timing: &TimingParams) {
    let age = now.saturating_sub(record.last_timestamp);
    let due = state_for_age(age, timing);
    if due > record.state {
        record.state = due;
    }
}

/// Applies one received communication to a record: timestamp refresh plus
/// instant promotion to S1 (trusted peer) or S2. A heartbeat whose sequence
/// number is not newer than the stored one is ignored entirely.
/// Returns whether the message was accepted.
pub fn record_on_message(
    record: &mut MemberRecord,
    now: u64,
    trusted: bool,
    heartbeat_num: Option<u64>,
) -> bool {
    if let Some(num) = heartbeat_num {
        if num <= record.heartbeat_num {
            return false;
        }
        record.heartbeat_num = num;
    }
    record.last_timestamp = now;
    record.state = if trusted { LivenessState::S1 } else { LivenessState::S2 };
    true
}

/// What a node sends, addressed by recipient. The harness turns these into
/// scheduled deliveries.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: NodeId,
    pub msg: MembershipMsg,
}

/// NML entry as shared over the wire: peer id plus its liveness timestamp.
pub type NmlEntry = (NodeId, u64);

/// The external NML form served to pull requests: all known servers (sNML)
/// plus the introducer list (NML-C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmlShare {
    pub servers: Vec<NmlEntry>,
    pub introducers: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MembershipMsg {
    NmlPull,
    NmlResponse(NmlShare),
    TrustToken,
    Ack,
    Heartbeat { num: u64 },
    NodeLeave { subject: NodeId, multicast_ts: u64 },
}

/// Join phase bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinProgress {
    pub iteration: u64,
    pub contacted: BTreeSet<NodeId>,
    pub responded: BTreeSet<NodeId>,
    pub pending_retries: BTreeMap<NodeId, usize>,
    /// Abandoned after d unanswered retries.
    pub abandoned: BTreeSet<NodeId>,
    /// Pulls initiated per foreign group, capped at c × b new members.
    pub pulls_per_group: BTreeMap<u16, usize>,
    pub unchanged_iterations: u32,
    pub nml_complete: bool,
}

/// Trust-token phase bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenProgress {
    pub tried: BTreeSet<NodeId>,
    pub pending: BTreeMap<NodeId, usize>,
    pub started: bool,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Joining,
    Live,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Server,
    Introducer,
}

/// Full membership state owned by one simulated node.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub role: Role,
    pub phase: Phase,
    pub params: OverlayParams,
    pub timing: TimingParams,
    /// Liveness table: S4 entries are removed, so presence means S1–S3.
    pub records: BTreeMap<NodeId, MemberRecord>,
    /// NML-C.
    pub introducers: BTreeSet<NodeId>,
    pub unl: UnlView,
    pub tnl: Tnl,
    pub join: JoinProgress,
    pub tokens: TokenProgress,
    /// (subject, multicast timestamp) of node-leave messages already handled.
    pub seen_leaves: BTreeSet<(NodeId, u64)>,
    pub heartbeat_seq: u64,
    /// Fraction of the UNL allowed to change per churn window.
    pub unl_churn_limit: f64,
    /// Churn window length in multiples of t1.
    pub unl_churn_window: u64,
    churn_events: Vec<u64>,
}

impl NodeState {
    pub fn new(id: NodeId, role: Role, params: OverlayParams, timing: TimingParams) -> Self {
        NodeState {
            id,
            role,
            phase: Phase::Joining,
            params,
            timing,
            records: BTreeMap::new(),
            introducers: BTreeSet::new(),
            unl: UnlView::default(),
            tnl: Tnl::default(),
            join: JoinProgress::default(),
            tokens: TokenProgress::default(),
            seen_leaves: BTreeSet::new(),
            heartbeat_seq: 0,
            unl_churn_limit: 0.2,
            unl_churn_window: 10,
            churn_events: Vec::new(),
        }
    }

    /// Seeds a node that is already live with prebuilt overlay views.
    pub fn live_from_views(
        id: NodeId,
        views: &OverlayViews,
        introducers: &BTreeSet<NodeId>,
        params: OverlayParams,
        timing: TimingParams,
        now: u64,
    ) -> Self {
        let mut state = NodeState::new(id, Role::Server, params, timing);
        state.phase = Phase::Live;
        state.unl = views.unl.clone();
        state.tnl = views.tnl.clone();
        state.introducers = introducers.clone();
        for peer in views.nml.server_ids() {
            let trusted = state.unl.contains(peer) || state.tnl.members.contains(&peer);
            state.records.insert(
                peer,
                MemberRecord {
                    node: peer,
                    state: if trusted { LivenessState::S1 } else { LivenessState::S2 },
                    last_timestamp: now,
                    heartbeat_num: 0,
                },
            );
        }
        state
    }

    pub fn group_of(&self, node: NodeId) -> u16 {
        (node as usize / self.params.group_size()) as u16
    }

    pub fn own_group(&self) -> u16 {
        self.group_of(self.id)
    }

    fn trusted(&self, node: NodeId) -> bool {
        self.unl.contains(node) || self.tnl.members.contains(&node)
    }

    /// NML members of one foreign group, live (S1/S2) entries only.
    fn nml_b_group(&self, group: u16) -> Vec<NodeId> {
        self.records
            .values()
            .filter(|r| {
                r.state <= LivenessState::S2
                    && r.node != self.id
                    && self.group_of(r.node) == group
            })
            .map(|r| r.node)
            .collect()
    }

    /// The NML split into its A/B/C parts, for invariant checks and export.
    pub fn nml(&self) -> crate::overlay::Nml {
        let own = self.own_group();
        let mut nml = crate::overlay::Nml {
            nml_c: self.introducers.clone(),
            ..Default::default()
        };
        for r in self.records.values() {
            let g = self.group_of(r.node);
            if g == own {
                nml.nml_a.insert(r.node);
            } else {
                nml.nml_b.entry(g).or_default().insert(r.node);
            }
        }
        nml
    }

    fn share(&self) -> NmlShare {
        NmlShare {
            servers: self
                .records
                .values()
                .filter(|r| r.state <= LivenessState::S2)
                .map(|r| (r.node, r.last_timestamp))
                .collect(),
            introducers: self.introducers.iter().copied().collect(),
        }
    }

    fn touch(&mut self, peer: NodeId, now: u64, heartbeat: Option<u64>) -> bool {
        let trusted = self.trusted(peer);
        match self.records.get_mut(&peer) {
            Some(record) => record_on_message(record, now, trusted, heartbeat),
            None => {
                self.records.insert(
                    peer,
                    MemberRecord {
                        node: peer,
                        state: if trusted { LivenessState::S1 } else { LivenessState::S2 },
                        last_timestamp: now,
                        heartbeat_num: heartbeat.unwrap_or(0),
                    },
                );
                if self.phase == Phase::Joining && !self.join.nml_complete {
                    self.join.unchanged_iterations = 0;
                }
                true
            }
        }
    }

    /// Merges a received NML: an entry wins only if its timestamp is newer
    /// than the stored one. New entries arrive in the live S2 state.
    pub fn merge_nml(&mut self, share: &NmlShare) -> bool {
        let mut changed = false;
        for &(peer, ts) in &share.servers {
            if peer == self.id {
                continue;
            }
            match self.records.get_mut(&peer) {
                Some(record) => {
                    if ts > record.last_timestamp {
                        record.last_timestamp = ts;
                        let trusted = self.unl.contains(peer) || self.tnl.members.contains(&peer);
                        record.state = if trusted { LivenessState::S1 } else { LivenessState::S2 };
                        changed = true;
                    }
                }
                None => {
                    self.records.insert(
                        peer,
                        MemberRecord {
                            node: peer,
                            state: LivenessState::S2,
                            last_timestamp: ts,
                            heartbeat_num: 0,
                        },
                    );
                    changed = true;
                }
            }
        }
        for &intro in &share.introducers {
            if intro != self.id {
                changed |= self.introducers.insert(intro);
            }
        }
        if changed && self.phase == Phase::Joining && !self.join.nml_complete {
            self.join.unchanged_iterations = 0;
        }
        changed
    }

    /// One join iteration: NML pulls to every new NML-A/NML-C member, pulls
    /// to up to c×b new members per foreign group, and retries to anything
    /// unanswered (d tries, then abandonment with substitution while fewer
    /// than c members of that group have responded).
    pub fn join_step<R: Rng>(&mut self, _now: u64, rng: &mut R) -> Vec<Outgoing> {
        if self.phase != Phase::Joining || self.join.nml_complete {
            return Vec::new();
        }
        self.join.iteration += 1;
        let own = self.own_group();
        let cap = self.params.c * self.params.b;
        let mut out = Vec::new();
        let mut pulled_any_new = false;

        let pull = |join: &mut JoinProgress, out: &mut Vec<Outgoing>, peer: NodeId| {
            join.contacted.insert(peer);
            join.pending_retries.insert(peer, 0);
            out.push(Outgoing { to: peer, msg: MembershipMsg::NmlPull });
        };

        // Retries first, over targets contacted in earlier iterations, up to
        // d tries total.
        let pending: Vec<NodeId> = self
            .join
            .pending_retries
            .iter()
            .filter(|(p, _)| !self.join.responded.contains(p))
            .map(|(&p, _)| p)
            .collect();
        for peer in pending {
            let tries = self.join.pending_retries.get_mut(&peer).expect("pending entry");
            if *tries >= self.params.d {
                // Abandon, and substitute only while fewer than c of that
                // group's members have answered.
                self.join.pending_retries.remove(&peer);
                self.join.abandoned.insert(peer);
                let g = self.group_of(peer);
                if g != own {
                    let responded_in_group = self
                        .join
                        .responded
                        .iter()
                        .filter(|&&p| self.group_of(p) == g)
                        .count();
                    if responded_in_group < self.params.c {
                        let mut candidates: Vec<NodeId> = self
                            .nml_b_group(g)
                            .into_iter()
                            .filter(|p| !self.join.contacted.contains(p) && !self.join.abandoned.contains(p))
                            .collect();
                        candidates.sort_unstable();
                        if let Some(&sub) = candidates.choose(rng) {
                            *self.join.pulls_per_group.entry(g).or_insert(0) += 1;
                            pull(&mut self.join, &mut out, sub);
                            pulled_any_new = true;
                        }
                    }
                }
            } else {
                *tries += 1;
                out.push(Outgoing { to: peer, msg: MembershipMsg::NmlPull });
            }
        }

        // New introducers and own-group members are always pulled.
        let fresh_a_c: Vec<NodeId> = self
            .introducers
            .iter()
            .copied()
            .chain(self.records.keys().copied().filter(|&p| self.group_of(p) == own))
            .filter(|p| *p != self.id && !self.join.contacted.contains(p) && !self.join.abandoned.contains(p))
            .collect();
        for peer in fresh_a_c {
            pull(&mut self.join, &mut out, peer);
            pulled_any_new = true;
        }

        // Foreign groups: cumulative pulls capped at c×b new members each.
        let groups: BTreeSet<u16> = self
            .records
            .keys()
            .map(|&p| self.group_of(p))
            .filter(|&g| g != own)
            .collect();
        for g in groups {
            let already = self.join.pulls_per_group.get(&g).copied().unwrap_or(0);
            if already >= cap {
                continue;
            }
            let mut fresh: Vec<NodeId> = self
                .nml_b_group(g)
                .into_iter()
                .filter(|p| !self.join.contacted.contains(p) && !self.join.abandoned.contains(p))
                .collect();
            fresh.truncate(cap - already);
            if !fresh.is_empty() {
                *self.join.pulls_per_group.entry(g).or_insert(0) += fresh.len();
                for peer in fresh {
                    pull(&mut self.join, &mut out, peer);
                    pulled_any_new = true;
                }
            }
        }

        // Quiescence: all contacts resolved and nothing new for 5 iterations.
        let all_resolved = self
            .join
            .pending_retries
            .keys()
            .all(|p| self.join.responded.contains(p));
        if !pulled_any_new && all_resolved {
            self.join.unchanged_iterations += 1;
            if self.join.unchanged_iterations >= 5 {
                self.join.nml_complete = true;
            }
        }
        out
    }

    /// Trust-token phase: tokens to all of NML-A and to c random picks per
    /// foreign group; unanswered targets retry up to d times and are then
    /// substituted by a fresh untried pick from the same group.
    pub fn build_unl_from_nml<R: Rng>(&mut self, _now: u64, rng: &mut R) -> Vec<Outgoing> {
        if self.phase != Phase::Joining || !self.join.nml_complete || self.tokens.done {
            return Vec::new();
        }
        if self.role == Role::Introducer {
            self.tokens.done = true;
            self.phase = Phase::Live;
            return Vec::new();
        }
        let own = self.own_group();
        let mut out = Vec::new();

        if !self.tokens.started {
            self.tokens.started = true;
            let own_members: Vec<NodeId> = self
                .records
                .keys()
                .copied()
                .filter(|&p| self.group_of(p) == own)
                .collect();
            for peer in own_members {
                self.tokens.tried.insert(peer);
                self.tokens.pending.insert(peer, 0);
                out.push(Outgoing { to: peer, msg: MembershipMsg::TrustToken });
            }
            let groups: BTreeSet<u16> = self
                .records
                .keys()
                .map(|&p| self.group_of(p))
                .filter(|&g| g != own)
                .collect();
            for g in groups {
                let mut members = self.nml_b_group(g);
                members.sort_unstable();
                members.shuffle(rng);
                for peer in members.into_iter().take(self.params.c) {
                    self.tokens.tried.insert(peer);
                    self.tokens.pending.insert(peer, 0);
                    out.push(Outgoing { to: peer, msg: MembershipMsg::TrustToken });
                }
            }
            return out;
        }

        // Retry or substitute unanswered targets.
        let pending: Vec<NodeId> = self.tokens.pending.keys().copied().collect();
        for peer in pending {
            let tries = self.tokens.pending.get_mut(&peer).expect("pending token");
            if *tries >= self.params.d {
                self.tokens.pending.remove(&peer);
                let g = self.group_of(peer);
                if g != own && self.unl.unl_b.get(&g).map_or(0, |s| s.len()) < self.params.c {
                    let mut candidates: Vec<NodeId> = self
                        .nml_b_group(g)
                        .into_iter()
                        .filter(|p| !self.tokens.tried.contains(p))
                        .collect();
                    candidates.sort_unstable();
                    if let Some(&sub) = candidates.choose(rng) {
                        self.tokens.tried.insert(sub);
                        self.tokens.pending.insert(sub, 0);
                        out.push(Outgoing { to: sub, msg: MembershipMsg::TrustToken });
                    }
                    // Group exhausted: the undersized UNL-B entry stands.
                }
            } else {
                *tries += 1;
                out.push(Outgoing { to: peer, msg: MembershipMsg::TrustToken });
            }
        }

        if self.tokens.pending.is_empty() {
            self.tokens.done = true;
            self.phase = Phase::Live;
        }
        out
    }

    fn admit_to_unl(&mut self, peer: NodeId, now: u64) {
        let g = self.group_of(peer);
        let added = if g == self.own_group() {
            self.unl.unl_a.insert(peer)
        } else {
            self.unl.unl_b.entry(g).or_default().insert(peer)
        };
        if added {
            self.churn_events.push(now);
        }
        if let Some(record) = self.records.get_mut(&peer) {
            record.state = LivenessState::S1;
        }
    }

    /// Handles one delivered message. All received communication counts as a
    /// heartbeat for the sender's record.
    pub fn on_message(&mut self, src: NodeId, msg: &MembershipMsg, now: u64) -> Vec<Outgoing> {
        if self.phase == Phase::Left {
            return Vec::new();
        }
        let heartbeat = match msg {
            MembershipMsg::Heartbeat { num } => Some(*num),
            _ => None,
        };
        // A node announcing its own departure is not evidence of liveness;
        // touching it here would resurrect the entry a forwarded copy of
        // the same leave already deleted.
        let self_leave = matches!(msg, MembershipMsg::NodeLeave { subject, .. } if *subject == src);
        if !self_leave {
            let accepted = self.touch(src, now, heartbeat);
            if !accepted {
                return Vec::new(); // stale heartbeat
            }
        }
        match msg {
            MembershipMsg::NmlPull => {
                if self.phase == Phase::Joining {
                    self.join.responded.insert(src);
                }
                vec![Outgoing { to: src, msg: MembershipMsg::NmlResponse(self.share()) }]
            }
            MembershipMsg::NmlResponse(share) => {
                self.join.responded.insert(src);
                self.merge_nml(share);
                Vec::new()
            }
            MembershipMsg::TrustToken => {
                self.tnl.members.insert(src);
                if let Some(record) = self.records.get_mut(&src) {
                    record.state = LivenessState::S1;
                }
                vec![Outgoing { to: src, msg: MembershipMsg::Ack }]
            }
            MembershipMsg::Ack => {
                if self.tokens.pending.remove(&src).is_some() {
                    self.admit_to_unl(src, now);
                    if self.tokens.started && self.tokens.pending.is_empty() && self.join.nml_complete {
                        self.tokens.done = true;
                        self.phase = Phase::Live;
                    }
                }
                Vec::new()
            }
            MembershipMsg::Heartbeat { .. } => Vec::new(),
            MembershipMsg::NodeLeave { subject, multicast_ts } => {
                self.on_node_leave(*subject, *multicast_ts, now)
            }
        }
    }

    /// First sighting of a leave for a node present in any list: delete it
    /// everywhere and forward exactly once. Anything else is ignored.
    pub fn on_node_leave(&mut self, subject: NodeId, multicast_ts: u64, _now: u64) -> Vec<Outgoing> {
        if subject == self.id {
            return Vec::new();
        }
        let known = self.records.contains_key(&subject)
            || self.unl.contains(subject)
            || self.tnl.members.contains(&subject);
        if !known || !self.seen_leaves.insert((subject, multicast_ts)) {
            return Vec::new();
        }
        self.remove_everywhere(subject);
        self.records
            .keys()
            .copied()
            .filter(|&p| p != subject)
            .map(|to| Outgoing {
                to,
                msg: MembershipMsg::NodeLeave { subject, multicast_ts },
            })
            .collect()
    }

    fn remove_everywhere(&mut self, subject: NodeId) {
        self.records.remove(&subject);
        self.unl.unl_a.remove(&subject);
        for group in self.unl.unl_b.values_mut() {
            group.remove(&subject);
        }
        self.tnl.members.remove(&subject);
    }

    /// Timed maintenance: demote by age; a contact attempt goes out before a
    /// tombstoned entry is deleted.
    pub fn tick_liveness(&mut self, now: u64) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let mut deletions = Vec::new();
        for record in self.records.values_mut() {
            let age = now.saturating_sub(record.last_timestamp);
            let due = state_for_age(age, &self.timing);
            if due > record.state {
                record.state = due;
            }
            if record.state == LivenessState::S4 {
                deletions.push(record.node);
            }
        }
        for peer in deletions {
            self.heartbeat_seq += 1;
            out.push(Outgoing {
                to: peer,
                msg: MembershipMsg::Heartbeat { num: self.heartbeat_seq },
            });
            self.remove_everywhere(peer);
        }
        out
    }

    /// Tops up any foreign UNL-B group below c live members with trust
    /// tokens to random NML-B candidates. Where the NML-B group itself has
    /// fewer than c live entries, UNL-B mirrors it.
    pub fn replenish_unl_b<R: Rng>(&mut self, rng: &mut R) -> Vec<Outgoing> {
        let own = self.own_group();
        let groups: BTreeSet<u16> = self
            .records
            .keys()
            .map(|&p| self.group_of(p))
            .filter(|&g| g != own)
            .chain(self.unl.unl_b.keys().copied())
            .collect();
        let mut out = Vec::new();
        for g in groups {
            let live_in_unl = self
                .unl
                .unl_b
                .get(&g)
                .map_or(0, |s| {
                    s.iter()
                        .filter(|p| {
                            self.records
                                .get(p)
                                .map_or(false, |r| r.state <= LivenessState::S2)
                        })
                        .count()
                });
            if live_in_unl >= self.params.c {
                continue;
            }
            let pool = self.nml_b_group(g);
            if pool.len() < self.params.c {
                // Undersized NML-B group: mirror it outright.
                let entry = self.unl.unl_b.entry(g).or_default();
                for peer in pool {
                    entry.insert(peer);
                }
                continue;
            }
            let mut candidates: Vec<NodeId> = pool
                .into_iter()
                .filter(|p| !self.unl.unl_b.get(&g).map_or(false, |s| s.contains(p)))
                .collect();
            candidates.sort_unstable();
            candidates.shuffle(rng);
            for peer in candidates.into_iter().take(self.params.c - live_in_unl) {
                self.tokens.pending.insert(peer, 0);
                self.tokens.tried.insert(peer);
                out.push(Outgoing { to: peer, msg: MembershipMsg::TrustToken });
            }
        }
        out
    }

    /// The leave announcement this node multicasts on shutdown.
    pub fn announce_leave(&mut self, now: u64) -> Vec<Outgoing> {
        self.phase = Phase::Left;
        self.records
            .keys()
            .copied()
            .map(|to| Outgoing {
                to,
                msg: MembershipMsg::NodeLeave { subject: self.id, multicast_ts: now },
            })
            .collect()
    }

    /// Whether UNL churn over the last window exceeded the configured share.
    pub fn unl_churn_exceeded(&self, now: u64) -> bool {
        let window = self.unl_churn_window * self.timing.t1;
        let recent = self
            .churn_events
            .iter()
            .filter(|&&t| now.saturating_sub(t) <= window)
            .count();
        let size = self.unl.len().max(1);
        recent as f64 > self.unl_churn_limit * size as f64
    }
}
