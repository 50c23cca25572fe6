//! Overlay construction for the three simulated systems.
//!
//! `SimK` uses a Kelips-style structure: `√N` affinity groups of `√N` nodes
//! each. A node trusts every peer in its own group (UNL-A) plus `c` peers
//! from each foreign group (UNL-B); the reciprocal view (who trusts *me*) is
//! the TNL, and a node is connected to everything in `UNL ∪ TNL`. `SimC` and
//! `SimRM` are randomised baselines whose voting lists and link sets are
//! drawn independently.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

/// Largest network the simulator engines accept (origin sets are fixed-size
/// bitmaps sized for this).
pub const MAX_NODES: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum OverlayError {
    #[error("num_nodes {0} is not a perfect square")]
    NotPerfectSquare(usize),
    #[error("num_nodes must be at least 4, got {0}")]
    TooFewNodes(usize),
    #[error("num_nodes {0} exceeds the supported maximum {MAX_NODES}")]
    TooManyNodes(usize),
    #[error("c must be >= 1, got {0}")]
    InvalidC(usize),
    #[error("b must be > 1, got {0}")]
    InvalidB(usize),
    #[error("d must be >= 5, got {0}")]
    InvalidD(usize),
    #[error("outbound link ratio {0} yields no links for {1} nodes")]
    RatioTooSmall(f64, usize),
    #[error("hops must be 1, 2 or 3, got {0}")]
    InvalidHops(u8),
    #[error("node {0} out of range for {1} nodes")]
    NodeOutOfRange(NodeId, usize),
}

/// Which of the three systems a topology belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Random sparse topology and random UNLs (current-RippleNet stand-in).
    SimC,
    /// Randomised topology scaled to slightly exceed SimK's connectivity.
    SimRM,
    /// Kelips-style affinity-group overlay.
    SimK,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::SimC => "SimC",
            Variant::SimRM => "SimRM",
            Variant::SimK => "SimK",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simc" | "c" => Ok(Variant::SimC),
            "simrm" | "rm" => Ok(Variant::SimRM),
            "simk" | "k" => Ok(Variant::SimK),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// Structural parameters shared by the topology builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayParams {
    /// Network size N. Must be a perfect square for SimK.
    pub num_nodes: usize,
    /// UNL-B slots per foreign affinity group.
    pub c: usize,
    /// NML-B multiplier: NML-B targets c*b entries per foreign group.
    pub b: usize,
    /// Retry limit for unanswered pulls / trust tokens.
    pub d: usize,
    /// Outbound links per node divided by N (SimC only).
    pub outbound_links_to_node_ratio: f64,
}

impl Default for OverlayParams {
    fn default() -> Self {
        OverlayParams {
            num_nodes: 256,
            c: 2,
            b: 2,
            d: 5,
            outbound_links_to_node_ratio: 10.0 / 256.0,
        }
    }
}

impl OverlayParams {
    pub fn group_size(&self) -> usize {
        (self.num_nodes as f64).sqrt().round() as usize
    }

    pub fn group_count(&self) -> usize {
        self.group_size()
    }

    fn check_square(&self) -> Result<usize, OverlayError> {
        if self.num_nodes < 4 {
            return Err(OverlayError::TooFewNodes(self.num_nodes));
        }
        if self.num_nodes > MAX_NODES {
            return Err(OverlayError::TooManyNodes(self.num_nodes));
        }
        let s = self.group_size();
        if s * s != self.num_nodes {
            return Err(OverlayError::NotPerfectSquare(self.num_nodes));
        }
        Ok(s)
    }

    /// Validates the join-protocol constraints (`b > 1`, `c >= 1`, `d >= 5`).
    pub fn validate_membership(&self) -> Result<(), OverlayError> {
        if self.c < 1 {
            return Err(OverlayError::InvalidC(self.c));
        }
        if self.b <= 1 {
            return Err(OverlayError::InvalidB(self.b));
        }
        if self.d < 5 {
            return Err(OverlayError::InvalidD(self.d));
        }
        Ok(())
    }

    pub fn validate_for(&self, variant: Variant) -> Result<(), OverlayError> {
        if self.num_nodes < 4 {
            return Err(OverlayError::TooFewNodes(self.num_nodes));
        }
        if self.num_nodes > MAX_NODES {
            return Err(OverlayError::TooManyNodes(self.num_nodes));
        }
        match variant {
            Variant::SimK => {
                self.check_square()?;
                if self.c < 1 {
                    return Err(OverlayError::InvalidC(self.c));
                }
            }
            Variant::SimC => {
                if self.outbound_links_to_node_ratio * (self.num_nodes as f64) < 1.0 {
                    return Err(OverlayError::RatioTooSmall(
                        self.outbound_links_to_node_ratio,
                        self.num_nodes,
                    ));
                }
            }
            Variant::SimRM => {}
        }
        Ok(())
    }
}

/// Index of one of the `√N` affinity groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AffinityGroupId(pub u16);

/// Balanced deterministic group assignment: `group = ⌊id / √N⌋`.
pub fn affinity_group_of(node: NodeId, params: &OverlayParams) -> Result<AffinityGroupId, OverlayError> {
    let s = params.check_square()?;
    if (node as usize) >= params.num_nodes {
        return Err(OverlayError::NodeOutOfRange(node, params.num_nodes));
    }
    Ok(AffinityGroupId((node as usize / s) as u16))
}

/// A node's voting list, split into own-group and foreign-group parts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnlView {
    /// Every other node of the own affinity group (`√N − 1` when healthy).
    pub unl_a: BTreeSet<NodeId>,
    /// `c` nodes per foreign affinity group, keyed by group index.
    pub unl_b: BTreeMap<u16, BTreeSet<NodeId>>,
}

impl UnlView {
    pub fn len(&self) -> usize {
        self.unl_a.len() + self.unl_b.values().map(|g| g.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.unl_a.contains(&node) || self.unl_b.values().any(|g| g.contains(&node))
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.unl_a
            .iter()
            .copied()
            .chain(self.unl_b.values().flat_map(|g| g.iter().copied()))
    }
}

/// Who trusts me: every server that lists this node in its UNL.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tnl {
    pub members: BTreeSet<NodeId>,
}

/// All servers a node believes live. `NML ⊇ UNL`; NML-C holds introducers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Nml {
    pub nml_a: BTreeSet<NodeId>,
    pub nml_b: BTreeMap<u16, BTreeSet<NodeId>>,
    pub nml_c: BTreeSet<NodeId>,
}

impl Nml {
    pub fn server_ids(&self) -> BTreeSet<NodeId> {
        self.nml_a
            .iter()
            .copied()
            .chain(self.nml_b.values().flat_map(|g| g.iter().copied()))
            .collect()
    }
}

/// The three lists one node maintains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayViews {
    pub unl: UnlView,
    pub tnl: Tnl,
    pub nml: Nml,
}

/// Product of [`build_simk_overlay`]: per-node views plus any groups that
/// could not fill their `c` UNL-B slots.
#[derive(Debug, Clone)]
pub struct SimkOverlay {
    pub views: Vec<OverlayViews>,
    /// (node, group, achieved size) for every undersized UNL-B entry.
    pub shortfalls: Vec<(NodeId, u16, usize)>,
}

/// Builds the full Kelips-style overlay: UNL-A = own group, UNL-B = `c`
/// uniform picks per foreign group, TNL = exact reciprocal of all UNLs,
/// NML = everything (NML-B mirrors group membership at construction time).
pub fn build_simk_overlay<R: Rng>(params: &OverlayParams, rng: &mut R) -> Result<SimkOverlay, OverlayError> {
    params.validate_for(Variant::SimK)?;
    let n = params.num_nodes;
    let s = params.group_size();
    let groups: Vec<Vec<NodeId>> = (0..s)
        .map(|g| ((g * s) as NodeId..((g + 1) * s) as NodeId).collect())
        .collect();

    let mut views: Vec<OverlayViews> = Vec::with_capacity(n);
    let mut shortfalls = Vec::new();

    for node in 0..n as NodeId {
        let own = (node as usize) / s;
        let mut unl = UnlView::default();
        unl.unl_a = groups[own].iter().copied().filter(|&p| p != node).collect();

        for (g, members) in groups.iter().enumerate() {
            if g == own {
                continue;
            }
            let take = params.c.min(members.len());
            let picks: BTreeSet<NodeId> = sample(rng, members.len(), take)
                .into_iter()
                .map(|i| members[i])
                .collect();
            if take < params.c {
                shortfalls.push((node, g as u16, take));
            }
            unl.unl_b.insert(g as u16, picks);
        }

        // NML-B starts as full group membership, a superset of UNL-B.
        let mut nml = Nml {
            nml_a: unl.unl_a.clone(),
            nml_b: BTreeMap::new(),
            nml_c: BTreeSet::new(),
        };
        for (g, members) in groups.iter().enumerate() {
            if g == own {
                continue;
            }
            nml.nml_b.insert(g as u16, members.iter().copied().collect());
        }

        views.push(OverlayViews {
            unl,
            tnl: Tnl::default(),
            nml,
        });
    }

    // TNL is the reciprocal relation over the finished UNLs.
    for node in 0..n as NodeId {
        let trusted: Vec<NodeId> = views[node as usize].unl.iter().collect();
        for peer in trusted {
            views[peer as usize].tnl.members.insert(node);
        }
    }

    Ok(SimkOverlay { views, shortfalls })
}

/// Link latency assignment knobs. Base latencies are drawn per directed link;
/// the two multipliers scale intra-group and cross-group links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub min_ms: f64,
    pub max_ms: f64,
    /// Deterministic multiplier for links between same-group endpoints.
    pub unla_llf_max: f64,
    /// Deterministic multiplier for links between cross-group endpoints.
    pub unlb_llf_max: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            min_ms: 5.0,
            max_ms: 50.0,
            unla_llf_max: 1.0,
            unlb_llf_max: 1.0,
        }
    }
}

/// A built network: undirected connection lists with per-direction latencies,
/// plus each node's voting list.
#[derive(Debug, Clone)]
pub struct Topology {
    pub variant: Variant,
    pub num_nodes: usize,
    /// Sorted, deduplicated connection neighbours per node.
    pub neighbors: Vec<Vec<NodeId>>,
    /// `latency_us[i][k]` is the send latency from `i` to `neighbors[i][k]`.
    pub latency_us: Vec<Vec<u64>>,
    /// Voting list per node (UNL-A ∪ UNL-B for SimK; random for SimC/SimRM).
    pub unl: Vec<Vec<NodeId>>,
    /// Calibration metric: directed link endpoints for SimC/SimRM, trust-list
    /// entries (`Σ |UNL ∪ TNL|`) for SimK.
    pub connection_entries: usize,
    /// Full per-node views (SimK only).
    pub views: Option<Vec<OverlayViews>>,
    group_size: usize,
}

impl Topology {
    pub fn group_of(&self, node: NodeId) -> u16 {
        (node as usize / self.group_size) as u16
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.neighbors[node as usize].len()
    }

    /// Latency in microseconds for a `src → dst` send. `dst` must be a
    /// neighbour of `src`.
    pub fn latency(&self, src: NodeId, dst: NodeId) -> u64 {
        let idx = self.neighbors[src as usize]
            .binary_search(&dst)
            .expect("latency queried for a non-neighbour");
        self.latency_us[src as usize][idx]
    }
}

fn draw_latencies<R: Rng>(
    neighbors: &[Vec<NodeId>],
    group_size: usize,
    cfg: &LatencyConfig,
    rng: &mut R,
) -> Vec<Vec<u64>> {
    neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            nbrs.iter()
                .map(|&j| {
                    let base = rng.gen_range(cfg.min_ms..cfg.max_ms);
                    let same_group = i / group_size == (j as usize) / group_size;
                    let factor = if same_group { cfg.unla_llf_max } else { cfg.unlb_llf_max };
                    (base * factor * 1000.0).round() as u64
                })
                .collect()
        })
        .collect()
}

/// SimK topology: connections are the trust edges `UNL ∪ TNL`.
pub fn build_simk_topology<R: Rng>(
    params: &OverlayParams,
    latency: &LatencyConfig,
    rng: &mut R,
) -> Result<Topology, OverlayError> {
    let overlay = build_simk_overlay(params, rng)?;
    let n = params.num_nodes;
    let mut neighbors: Vec<Vec<NodeId>> = Vec::with_capacity(n);
    let mut entries = 0usize;
    for (id, v) in overlay.views.iter().enumerate() {
        let set: BTreeSet<NodeId> = v
            .unl
            .iter()
            .chain(v.tnl.members.iter().copied())
            .filter(|&p| p as usize != id)
            .collect();
        entries += set.len();
        neighbors.push(set.into_iter().collect());
    }
    let latency_us = draw_latencies(&neighbors, params.group_size(), latency, rng);
    let unl = overlay
        .views
        .iter()
        .map(|v| v.unl.iter().collect())
        .collect();
    Ok(Topology {
        variant: Variant::SimK,
        num_nodes: n,
        neighbors,
        latency_us,
        unl,
        connection_entries: entries,
        views: Some(overlay.views),
        group_size: params.group_size(),
    })
}

/// Random directed link set plus independent random UNLs, as in the original
/// Sim.cpp procedure.
fn build_random_topology<R: Rng>(
    variant: Variant,
    params: &OverlayParams,
    out_links: usize,
    unl_min: usize,
    unl_max: usize,
    latency: &LatencyConfig,
    rng: &mut R,
) -> Topology {
    let n = params.num_nodes;
    let mut adjacency: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n];
    for i in 0..n {
        let picks = sample_excluding(rng, n, out_links, i);
        for j in picks {
            adjacency[i].insert(j as NodeId);
            adjacency[j].insert(i as NodeId);
        }
    }
    let neighbors: Vec<Vec<NodeId>> = adjacency
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();
    let latency_us = draw_latencies(&neighbors, params.group_size().max(1), latency, rng);

    let unl: Vec<Vec<NodeId>> = (0..n)
        .map(|i| {
            let size = if unl_max > unl_min {
                rng.gen_range(unl_min..unl_max)
            } else {
                unl_min
            };
            sample_excluding(rng, n, size.min(n - 1), i)
                .into_iter()
                .map(|j| j as NodeId)
                .collect()
        })
        .collect();

    Topology {
        variant,
        num_nodes: n,
        neighbors,
        latency_us,
        unl,
        // Every directed link contributes one out-entry and one in-entry.
        connection_entries: 2 * n * out_links,
        views: None,
        group_size: params.group_size().max(1),
    }
}

/// Draws `k` distinct indices from `0..n` excluding `skip`.
fn sample_excluding<R: Rng>(rng: &mut R, n: usize, k: usize, skip: usize) -> Vec<usize> {
    sample(rng, n - 1, k.min(n - 1))
        .into_iter()
        .map(|i| if i >= skip { i + 1 } else { i })
        .collect()
}

/// Sim.cpp voting-list size bounds, kept for the randomised baselines.
pub const SIMC_UNL_MIN: usize = 20;
pub const SIMC_UNL_MAX: usize = 30;
/// SimRM voting-list size: one above SimK's 45 at N=256.
pub const SIMRM_UNL_SIZE: usize = 46;
/// SimRM outbound links per node, calibrated to 72 connection entries each.
pub const SIMRM_OUT_LINKS: usize = 36;

/// SimC: `⌈ratio × N⌉` outbound links per node, UNL drawn as in Sim.cpp.
pub fn build_simc_topology<R: Rng>(
    params: &OverlayParams,
    latency: &LatencyConfig,
    rng: &mut R,
) -> Result<Topology, OverlayError> {
    params.validate_for(Variant::SimC)?;
    let out_links = (params.outbound_links_to_node_ratio * params.num_nodes as f64).ceil() as usize;
    Ok(build_random_topology(
        Variant::SimC,
        params,
        out_links,
        SIMC_UNL_MIN.min(params.num_nodes - 1),
        SIMC_UNL_MAX.min(params.num_nodes),
        latency,
        rng,
    ))
}

/// SimRM: randomised selection as SimC, sized to slightly exceed SimK.
pub fn build_simrm_topology<R: Rng>(
    params: &OverlayParams,
    latency: &LatencyConfig,
    rng: &mut R,
) -> Result<Topology, OverlayError> {
    params.validate_for(Variant::SimRM)?;
    let out_links = SIMRM_OUT_LINKS.min(params.num_nodes - 1);
    Ok(build_random_topology(
        Variant::SimRM,
        params,
        out_links,
        SIMRM_UNL_SIZE.min(params.num_nodes - 1),
        0,
        latency,
        rng,
    ))
}

pub fn build_topology<R: Rng>(
    variant: Variant,
    params: &OverlayParams,
    latency: &LatencyConfig,
    rng: &mut R,
) -> Result<Topology, OverlayError> {
    match variant {
        Variant::SimK => build_simk_topology(params, latency, rng),
        Variant::SimC => build_simc_topology(params, latency, rng),
        Variant::SimRM => build_simrm_topology(params, latency, rng),
    }
}

/// Closed-form lower bounds on deterministic propagation routes between a
/// pair of nodes, by hop count. Probable routes (those that exist only for
/// some random draws) are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCensus {
    pub hops: u8,
    pub same_group_count: u64,
    pub cross_group_count: u64,
}

/// Route census for the SimK overlay.
///
/// Same-group 3-hop routes: `c²(√N−1)` via a foreign group both endpoints
/// reach, plus `c(c−1)` via a foreign node of the source and a distinct
/// own-group node of the destination. Cross-group rows sum the guaranteed
/// routes through the destination group, the source group, and third groups.
pub fn path_census(params: &OverlayParams, hops: u8) -> Result<PathCensus, OverlayError> {
    let s = params.check_square()? as u64;
    let c = params.c as u64;
    let (same, cross) = match hops {
        1 => (1, 1),
        2 => (s - 2, 2 * c),
        3 => (
            c * c * (s - 1) + c * (c - 1),
            c * (s - 2) + c * (s - 1) + 2 * c * c * (s - 2),
        ),
        other => return Err(OverlayError::InvalidHops(other)),
    };
    Ok(PathCensus {
        hops,
        same_group_count: same,
        cross_group_count: cross,
    })
}

/// Writes the connection graph as `src dst latency_ms` lines, one per
/// directed link.
pub fn export_edge_list<W: Write>(topology: &Topology, out: &mut W) -> io::Result<()> {
    for (i, nbrs) in topology.neighbors.iter().enumerate() {
        for (k, &j) in nbrs.iter().enumerate() {
            writeln!(
                out,
                "{} {} {}",
                i,
                j,
                topology.latency_us[i][k] as f64 / 1000.0
            )?;
        }
    }
    Ok(())
}

/// Per-node list sizes, for debugging and external oracles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeSummary {
    pub variant: String,
    pub num_nodes: usize,
    pub connection_entries: usize,
    pub degree: Vec<usize>,
    pub unl_size: Vec<usize>,
    pub unl_a_size: Option<Vec<usize>>,
    pub unl_b_size: Option<Vec<usize>>,
    pub tnl_size: Option<Vec<usize>>,
    pub nml_size: Option<Vec<usize>>,
}

pub fn size_summary(topology: &Topology) -> SizeSummary {
    let degree = (0..topology.num_nodes)
        .map(|i| topology.neighbors[i].len())
        .collect();
    let unl_size = topology.unl.iter().map(|u| u.len()).collect();
    let (mut a, mut b, mut t, mut m) = (None, None, None, None);
    if let Some(views) = &topology.views {
        a = Some(views.iter().map(|v| v.unl.unl_a.len()).collect());
        b = Some(
            views
                .iter()
                .map(|v| v.unl.unl_b.values().map(|g| g.len()).sum())
                .collect(),
        );
        t = Some(views.iter().map(|v| v.tnl.members.len()).collect());
        m = Some(views.iter().map(|v| v.nml.server_ids().len()).collect());
    }
    SizeSummary {
        variant: topology.variant.as_str().to_string(),
        num_nodes: topology.num_nodes,
        connection_entries: topology.connection_entries,
        degree,
        unl_size,
        unl_a_size: a,
        unl_b_size: b,
        tnl_size: t,
        nml_size: m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, c: usize) -> OverlayParams {
        OverlayParams {
            num_nodes: n,
            c,
            ..OverlayParams::default()
        }
    }

    #[test]
    fn affinity_group_is_floor_of_id_over_sqrt_n() {
        let p = params(256, 2);
        assert_eq!(affinity_group_of(17, &p).unwrap(), AffinityGroupId(1));
        assert_eq!(affinity_group_of(0, &p).unwrap(), AffinityGroupId(0));
        assert_eq!(affinity_group_of(255, &p).unwrap(), AffinityGroupId(15));
    }

    #[test]
    fn affinity_groups_are_balanced() {
        let p = params(256, 2);
        let mut histogram = vec![0usize; 16];
        for node in 0..256 {
            histogram[affinity_group_of(node as NodeId, &p).unwrap().0 as usize] += 1;
        }
        assert!(histogram.iter().all(|&count| count == 16));
    }

    #[test]
    fn non_square_n_is_a_configuration_error() {
        let p = params(200, 2);
        assert_eq!(
            affinity_group_of(0, &p),
            Err(OverlayError::NotPerfectSquare(200))
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(build_simk_overlay(&p, &mut rng).is_err());
    }

    #[test]
    fn simk_list_sizes_at_n256_c2() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let overlay = build_simk_overlay(&params(256, 2), &mut rng).unwrap();
        assert!(overlay.shortfalls.is_empty());
        for v in &overlay.views {
            assert_eq!(v.unl.unl_a.len(), 15);
            assert_eq!(v.unl.unl_b.values().map(|g| g.len()).sum::<usize>(), 30);
            assert_eq!(v.unl.len(), 45);
        }
    }

    #[test]
    fn simk_node_never_trusts_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let overlay = build_simk_overlay(&params(16, 2), &mut rng).unwrap();
        for (id, v) in overlay.views.iter().enumerate() {
            assert!(!v.unl.contains(id as NodeId));
        }
    }

    #[test]
    fn tnl_reciprocity_exhaustive_small() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let overlay = build_simk_overlay(&params(4, 1), &mut rng).unwrap();
            for x in 0..4u16 {
                for y in 0..4u16 {
                    let x_trusts_y = overlay.views[x as usize].unl.contains(y);
                    let y_lists_x = overlay.views[y as usize].tnl.members.contains(&x);
                    assert_eq!(x_trusts_y, y_lists_x, "seed {seed}: {x} vs {y}");
                }
            }
            // N=4, c=1: one own-group peer and one pick from the other group.
            for v in &overlay.views {
                assert_eq!(v.unl.unl_a.len(), 1);
                assert_eq!(v.unl.unl_b.values().map(|g| g.len()).sum::<usize>(), 1);
            }
        }
    }

    #[test]
    fn nml_contains_unl_at_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let overlay = build_simk_overlay(&params(25, 2), &mut rng).unwrap();
        for v in &overlay.views {
            let unl: BTreeSet<NodeId> = v.unl.iter().collect();
            assert!(unl.is_subset(&v.nml.server_ids()));
        }
    }

    #[test]
    fn undersized_foreign_group_takes_all_and_records_shortfall() {
        // c exceeds the group size, so every foreign pick set mirrors the
        // whole group and a shortfall is recorded.
        let p = params(9, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let overlay = build_simk_overlay(&p, &mut rng).unwrap();
        assert!(!overlay.shortfalls.is_empty());
        for v in &overlay.views {
            for g in v.unl.unl_b.values() {
                assert_eq!(g.len(), 3);
            }
        }
    }

    #[test]
    fn simc_connection_entries_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let topo = build_simc_topology(&params(256, 2), &LatencyConfig::default(), &mut rng).unwrap();
        assert_eq!(topo.connection_entries, 5120);
    }

    #[test]
    fn simc_every_node_has_ten_outbound_links() {
        // 10 distinct outbound picks per node; the undirected degree varies
        // with in-links but the entry count fixes out-links at 10.
        let p = params(256, 2);
        assert_eq!((p.outbound_links_to_node_ratio * 256.0).ceil() as usize, 10);
    }

    #[test]
    fn simc_in_link_mean_is_out_links() {
        let p = params(256, 2);
        let mut total_degree = 0usize;
        let seeds = 20;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let topo = build_simc_topology(&p, &LatencyConfig::default(), &mut rng).unwrap();
            total_degree += (0..256).map(|i| topo.neighbors[i].len()).sum::<usize>();
        }
        // Undirected degree ≈ out + in − mutual ≈ 19.6 on average.
        let mean = total_degree as f64 / (seeds as f64 * 256.0);
        assert!((19.0..20.0).contains(&mean), "mean degree {mean}");
    }

    #[test]
    fn simrm_connection_entries_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let topo = build_simrm_topology(&params(256, 2), &LatencyConfig::default(), &mut rng).unwrap();
        assert_eq!(topo.connection_entries, 18432);
        assert_eq!(topo.connection_entries / 256, 72);
    }

    #[test]
    fn simrm_exceeds_simk_connectivity() {
        let p = params(256, 2);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let simk = build_simk_topology(&p, &LatencyConfig::default(), &mut rng).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let simrm = build_simrm_topology(&p, &LatencyConfig::default(), &mut rng).unwrap();
            let simk_mean = simk.connection_entries as f64 / 256.0;
            let simrm_mean = simrm.connection_entries as f64 / 256.0;
            assert!(simrm_mean > simk_mean, "seed {seed}: {simrm_mean} vs {simk_mean}");
        }
    }

    #[test]
    fn simk_connection_entries_near_expected_mean() {
        let p = params(256, 2);
        let mut total = 0usize;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            total += build_simk_topology(&p, &LatencyConfig::default(), &mut rng)
                .unwrap()
                .connection_entries;
        }
        let mean = total as f64 / 10.0;
        assert!((mean - 18240.0).abs() < 18240.0 * 0.02, "mean {mean}");
    }

    #[test]
    fn census_matches_table_values() {
        let c2 = path_census(&params(256, 2), 3).unwrap();
        assert_eq!(c2.same_group_count, 4 * 15 + 2); // 62
        let small = path_census(&params(16, 2), 3).unwrap();
        assert_eq!(small.same_group_count, 4 * 3 + 2); // 14
        let direct = path_census(&params(256, 2), 1).unwrap();
        assert_eq!(direct.same_group_count, 1);
        assert_eq!(direct.cross_group_count, 1);
        let two = path_census(&params(256, 2), 2).unwrap();
        assert_eq!(two.same_group_count, 14);
        assert_eq!(two.cross_group_count, 4);
        assert!(path_census(&params(256, 2), 4).is_err());
    }

    #[test]
    fn ratio_too_small_is_rejected() {
        let mut p = params(256, 2);
        p.outbound_links_to_node_ratio = 0.001;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(build_simc_topology(&p, &LatencyConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn edge_list_export_round_trips_latency() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let topo = build_simk_topology(&params(16, 1), &LatencyConfig::default(), &mut rng).unwrap();
        let mut buf = Vec::new();
        export_edge_list(&topo, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), topo.connection_entries);
        let first: Vec<&str> = lines[0].split_whitespace().collect();
        assert_eq!(first.len(), 3);
        let src: usize = first[0].parse().unwrap();
        let dst: NodeId = first[1].parse().unwrap();
        let ms: f64 = first[2].parse().unwrap();
        assert_eq!(topo.latency(src as NodeId, dst) as f64 / 1000.0, ms);
    }
}
