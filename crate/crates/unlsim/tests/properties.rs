//! Cross-module invariants: overlay structure laws checked exhaustively on
//! small networks, route-census lower bounds against brute-force path
//! enumeration, merge/threshold algebra properties, and engine-level
//! soundness over randomised configurations.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unlsim::consensus::{graded_schedule, min_overlap_for_threshold, threshold_from_trust, ScheduleInputs};
use unlsim::membership::{NmlShare, NodeState, Role, TimingParams};
use unlsim::netsim::{run_case, run_case_full, MessageKind, Mode, ScenarioConfig};
use unlsim::overlay::{
    build_simk_overlay, build_simk_topology, path_census, LatencyConfig, OverlayParams, Variant,
};
use unlsim::NodeId;

fn overlay_params(n: usize, c: usize) -> OverlayParams {
    OverlayParams { num_nodes: n, c, ..OverlayParams::default() }
}

/// Counts simple paths from `src` to `dst` with exactly `len` edges.
fn count_paths(neighbors: &[Vec<NodeId>], src: NodeId, dst: NodeId, len: usize) -> u64 {
    fn dfs(
        neighbors: &[Vec<NodeId>],
        here: NodeId,
        dst: NodeId,
        remaining: usize,
        visited: &mut Vec<bool>,
    ) -> u64 {
        if remaining == 0 {
            return (here == dst) as u64;
        }
        if here == dst {
            return 0; // simple paths only: do not pass through dst
        }
        let mut total = 0;
        for &next in &neighbors[here as usize] {
            if !visited[next as usize] {
                visited[next as usize] = true;
                total += dfs(neighbors, next, dst, remaining - 1, visited);
                visited[next as usize] = false;
            }
        }
        total
    }
    let mut visited = vec![false; neighbors.len()];
    visited[src as usize] = true;
    dfs(neighbors, src, dst, len, &mut visited)
}

#[test]
fn reciprocity_and_size_laws_hold_exhaustively_on_small_overlays() {
    for (n, c) in [(4usize, 1usize), (16, 1), (16, 2)] {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let overlay = build_simk_overlay(&overlay_params(n, c), &mut rng).unwrap();
            let s = (n as f64).sqrt() as usize;
            for (x, views) in overlay.views.iter().enumerate() {
                assert_eq!(views.unl.unl_a.len(), s - 1);
                assert_eq!(
                    views.unl.unl_b.values().map(|g| g.len()).sum::<usize>(),
                    c.min(s) * (s - 1)
                );
                let unl: BTreeSet<NodeId> = views.unl.iter().collect();
                assert!(unl.is_subset(&views.nml.server_ids()), "UNL ⊆ NML");
                for y in 0..n as NodeId {
                    let x_trusts_y = views.unl.contains(y);
                    let y_lists_x = overlay.views[y as usize].tnl.members.contains(&(x as NodeId));
                    assert_eq!(x_trusts_y, y_lists_x, "n={n} c={c} seed={seed}: {x}→{y}");
                }
            }
        }
    }
}

#[test]
fn simk_size_law_at_full_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let topo = build_simk_topology(&overlay_params(256, 2), &LatencyConfig::default(), &mut rng).unwrap();
    for unl in &topo.unl {
        assert_eq!(unl.len(), 45);
    }
}

#[test]
fn census_is_a_lower_bound_for_enumerated_same_group_paths() {
    for (n, c) in [(16usize, 1usize), (16, 2), (25, 1), (25, 2)] {
        let params = overlay_params(n, c);
        let census3 = path_census(&params, 3).unwrap();
        let census2 = path_census(&params, 2).unwrap();
        let census1 = path_census(&params, 1).unwrap();
        let cumulative = census1.same_group_count + census2.same_group_count + census3.same_group_count;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let topo = build_simk_topology(&params, &LatencyConfig::default(), &mut rng).unwrap();
            let s = (n as f64).sqrt() as usize;
            for src in 0..n as NodeId {
                for dst in 0..n as NodeId {
                    if src == dst || (src as usize) / s != (dst as usize) / s {
                        continue;
                    }
                    let found: u64 = (1..=3)
                        .map(|len| count_paths(&topo.neighbors, src, dst, len))
                        .sum();
                    assert!(
                        found >= cumulative,
                        "n={n} c={c} seed={seed} {src}→{dst}: {found} < {cumulative}"
                    );
                    let three_hop = count_paths(&topo.neighbors, src, dst, 3);
                    assert!(
                        three_hop >= census3.same_group_count,
                        "n={n} c={c} seed={seed} {src}→{dst}: 3-hop {three_hop} < {}",
                        census3.same_group_count
                    );
                }
            }
        }
    }
}

#[test]
fn agreement_holds_at_zero_malice_for_every_variant() {
    for variant in [Variant::SimC, Variant::SimRM, Variant::SimK] {
        for seed in 0..20u64 {
            let config = ScenarioConfig {
                variant,
                mode: Mode::NetworkConsensus,
                ..ScenarioConfig::default()
            };
            let (result, state) = run_case_full(&config, seed).unwrap();
            assert!(result.success, "{variant:?} seed {seed}");
            assert!(
                state.closed.iter().all(|&c| c),
                "{variant:?} seed {seed}: every node closed the same ledger"
            );
        }
    }
}

#[test]
fn dropped_transactions_stay_dropped_within_a_round() {
    // Extract each origin's own per-sub-round votes from the event log and
    // check that a yes never follows a no.
    for variant in [Variant::SimC, Variant::SimK] {
        let config = ScenarioConfig {
            variant,
            mode: Mode::NetworkConsensus,
            num_nodes: 64,
            percentage_malicious: 30.0,
            network_consensus_percent: 70.0,
            engine: unlsim::netsim::EngineParams {
                capture_event_log: true,
                ..Default::default()
            },
            ..ScenarioConfig::default()
        };
        for seed in 0..5u64 {
            let (_, state) = run_case_full(&config, seed).unwrap();
            let mut votes: std::collections::HashMap<NodeId, Vec<(u8, bool)>> = Default::default();
            for entry in &state.event_log {
                if entry.kind == MessageKind::Proposal && !entry.forwarded {
                    for &(origin, sub_round, yes) in &entry.origins {
                        if origin == entry.src {
                            votes.entry(origin).or_default().push((sub_round, yes));
                        }
                    }
                }
            }
            for (origin, mut series) in votes {
                series.sort();
                series.dedup();
                let mut seen_no_after_yes = false;
                for window in series.windows(2) {
                    if window[0].1 && !window[1].1 {
                        seen_no_after_yes = true;
                    }
                    if seen_no_after_yes {
                        assert!(
                            !window[1].1,
                            "{variant:?} seed {seed}: node {origin} revived a dropped transaction"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn throttled_nodes_never_forward_under_network_issues() {
    let config = ScenarioConfig {
        variant: Variant::SimK,
        mode: Mode::NetworkPropagation,
        percentage_malicious: 40.0,
        network_consensus_percent: 60.0,
        min_latency_factor_ni: 2.0,
        max_latency_factor_ni: 3.0,
        percent_links_affected_by_ni: 50.0,
        percent_nodes_affected_by_ni: 100.0,
        engine: unlsim::netsim::EngineParams {
            capture_event_log: true,
            ..Default::default()
        },
        ..ScenarioConfig::default()
    };
    for seed in 0..5u64 {
        let (_, state) = run_case_full(&config, seed).unwrap();
        for entry in &state.event_log {
            assert!(
                !(entry.forwarded && state.placement.malicious[entry.src as usize]),
                "seed {seed}: malicious {} forwarded",
                entry.src
            );
        }
    }
}

#[test]
fn success2_implies_success1_across_random_mode8_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for trial in 0..30u64 {
        use rand::Rng;
        let config = ScenarioConfig {
            variant: [Variant::SimC, Variant::SimRM, Variant::SimK][rng.gen_range(0..3)],
            mode: Mode::ShortestDistance,
            percentage_eclipsed: rng.gen_range(0.0..100.0),
            percentage_malicious: rng.gen_range(0.0..30.0),
            is_upper_limit_malicious_applicable: rng.gen_bool(0.5),
            ..ScenarioConfig::default()
        };
        let result = run_case(&config, trial).unwrap();
        if result.success2 {
            assert!(result.success, "trial {trial}");
        }
    }
}

#[test]
fn join_liveness_from_every_starting_introducer() {
    // Static fully responsive network: every joining node ends Live with a
    // structurally complete UNL, whichever introducer it starts from.
    let p = OverlayParams { num_nodes: 16, c: 2, b: 2, d: 5, ..OverlayParams::default() };
    for (joiner, intro) in [(3u16, 8u16), (7, 0), (12, 15)] {
        let mut net = unlsim::netsim::membership_net::MembershipNet::fully_live(
            &p,
            TimingParams::default(),
            joiner as u64,
        );
        net.reset_to_joiner(joiner, &[intro]);
        net.run_until(400_000);
        let node = &net.nodes[joiner as usize];
        assert_eq!(node.phase, unlsim::membership::Phase::Live);
        assert_eq!(node.unl.len(), 9, "joiner {joiner}");
        for group in node.unl.unl_b.values() {
            assert_eq!(group.len(), 2);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nml_merge_is_commutative_and_idempotent(
        a in proptest::collection::vec((1u16..32, 0u64..1000), 0..12),
        b in proptest::collection::vec((1u16..32, 0u64..1000), 0..12),
    ) {
        let share_a = NmlShare { servers: a, introducers: vec![] };
        let share_b = NmlShare { servers: b, introducers: vec![] };
        let params = OverlayParams { num_nodes: 36, c: 2, ..OverlayParams::default() };
        let fresh = || NodeState::new(0, Role::Server, params.clone(), TimingParams::default());

        let mut ab = fresh();
        ab.merge_nml(&share_a);
        ab.merge_nml(&share_b);
        let mut ba = fresh();
        ba.merge_nml(&share_b);
        ba.merge_nml(&share_a);
        prop_assert_eq!(&ab.records, &ba.records);

        let snapshot = ab.records.clone();
        ab.merge_nml(&share_a);
        ab.merge_nml(&share_b);
        prop_assert_eq!(&ab.records, &snapshot);
    }

    #[test]
    fn threshold_algebra_inverts_on_the_overlap_line(w in 0.0f64..=1.0) {
        let rho = threshold_from_trust(&[w]).unwrap();
        prop_assert!((rho - (1.0 - w / 2.0)).abs() < 1e-12);
        if rho > 0.5 {
            let back = min_overlap_for_threshold(rho).unwrap();
            prop_assert!((back - w).abs() < 1e-12);
        }
    }

    #[test]
    fn graded_schedules_are_always_well_formed(
        classic in any::<bool>(),
        k in 1usize..6,
        trust in 0.0f64..=1.0,
        completeness in -0.5f64..1.5,
    ) {
        let schedule = graded_schedule(&ScheduleInputs {
            classic,
            sub_rounds: k,
            trust_fractions: vec![trust],
            propagation_completeness: completeness,
        });
        prop_assert!(schedule.validate().is_ok());
        prop_assert!(schedule.absolute_cap >= 0.5);
        prop_assert!(schedule.absolute_cap <= 1.0 + 1e-12);
        if classic || trust >= 1.0 - 1e-12 {
            prop_assert!(schedule.absolute_cap <= 0.8 + 1e-12);
        }
    }
}
