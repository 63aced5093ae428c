//! Property tests checked against independent brute-force computations.

use std::collections::BTreeSet;

use districting::geometry::{dissolve, polsby_popper, Polygon};
use districting::graph::{connected_components, cut_edges, is_connected, ContiguityGraph, Level, Plan};
use districting::instance::{generate_grid_file, BalanceProfile, GridSpec};
use districting::objective::{evaluate, ObjectiveConfig, PlanState};
use districting::par::stream_rng;
use districting::search::{apply_flip_if_accepted, propose_flip, AcceptanceRule, FlipOutcome};
use proptest::prelude::*;

const ROWS: usize = 4;
const COLS: usize = 4;

fn cells(mask: u16) -> Vec<usize> {
    (0..ROWS * COLS).filter(|&v| mask >> v & 1 == 1).collect()
}

fn rook_adjacent(a: usize, b: usize) -> bool {
    let (ra, ca, rb, cb) = (a / COLS, a % COLS, b / COLS, b % COLS);
    ra.abs_diff(rb) + ca.abs_diff(cb) == 1
}

/// Reachability by boolean adjacency-matrix powers: (I + A)^(n-1).
fn connected_by_matrix_powers(nodes: &[usize]) -> bool {
    let n = nodes.len();
    if n == 0 {
        return false;
    }
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = i == j || rook_adjacent(nodes[i], nodes[j]);
        }
    }
    let step = reach.clone();
    for _ in 1..n {
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = (0..n).any(|m| reach[i][m] && step[m][j]);
            }
        }
        reach = next;
    }
    reach[0].iter().all(|&r| r)
}

proptest! {
    #[test]
    fn polsby_popper_is_scale_invariant(w in 0.1f64..10.0, h in 0.1f64..10.0, s in 0.01f64..100.0) {
        let p = Polygon::rect(0.0, 0.0, w, h).unwrap();
        let a = polsby_popper(dissolve(&[&p]).unwrap()).unwrap();
        let b = polsby_popper(dissolve(&[&p.scaled(s)]).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn dissolve_matches_grid_perimeter(mask in 1u16..) {
        let graph = ContiguityGraph::rook_grid(ROWS, COLS).unwrap();
        let nodes = cells(mask);
        let polys: Vec<&Polygon> = nodes.iter().map(|&v| graph.feature(v).polygon.as_ref().unwrap()).collect();
        let shape = dissolve(&polys).unwrap();
        let internal = nodes.iter().enumerate()
            .flat_map(|(i, &a)| nodes[i + 1..].iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| rook_adjacent(a, b))
            .count();
        let expected = 4.0 * nodes.len() as f64 - 2.0 * internal as f64;
        prop_assert!((shape.perimeter - expected).abs() <= 1e-9);
        prop_assert!((shape.area - nodes.len() as f64).abs() <= 1e-9);
    }

    #[test]
    fn connectivity_matches_matrix_powers(mask in 0u16..1024) {
        // 10 cells: the first 10 of the 4x4 grid
        let graph = ContiguityGraph::rook_grid(ROWS, COLS).unwrap();
        let nodes = cells(mask);
        prop_assert_eq!(is_connected(&graph, &nodes), connected_by_matrix_powers(&nodes));
        let comps = connected_components(&graph, &nodes).unwrap();
        let union: BTreeSet<usize> = comps.iter().flatten().copied().collect();
        prop_assert_eq!(union.len(), nodes.len());
        prop_assert_eq!(comps.iter().map(Vec::len).sum::<usize>(), nodes.len());
        for c in &comps {
            prop_assert!(is_connected(&graph, c));
        }
    }

    #[test]
    fn cut_edges_relabel_invariant(assign in proptest::collection::vec(0usize..3, 16), perm_seed in 0usize..6) {
        let graph = ContiguityGraph::rook_grid(ROWS, COLS).unwrap();
        let mut assign = assign;
        assign[0] = 0;
        assign[5] = 1;
        assign[10] = 2;
        let plan = Plan::new(assign, vec![0, 5, 10]).unwrap();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let relabeled = plan.relabeled(&perms[perm_seed]).unwrap();
        prop_assert_eq!(cut_edges(&plan, &graph), cut_edges(&relabeled, &graph));
        let direct = graph.edges().iter().filter(|&&(u, v)| plan.territory_of(u) != plan.territory_of(v)).count();
        prop_assert_eq!(cut_edges(&plan, &graph), direct);
    }

    #[test]
    fn flips_are_reversible_and_incremental_matches_full(seed in 0u64..500) {
        let inst = generate_grid_file(&GridSpec::new(5, 5, 3, seed, BalanceProfile::ClusteredGrowth))
            .unwrap()
            .to_instance(Level::Elementary, ObjectiveConfig::default())
            .unwrap();
        let mut rng = stream_rng(seed, 0);
        let start = districting::init::guided_growth(districting::init::seed_plan(&inst), &inst, &mut rng).unwrap();
        let mut state = PlanState::new(start, &inst).unwrap();
        for _ in 0..20 {
            let before = state.plan().clone();
            let p = propose_flip(state.plan(), inst.graph(), &mut rng).unwrap();
            let out = apply_flip_if_accepted(&mut state, p, &inst, AcceptanceRule::Always, &mut rng).unwrap();
            if out == FlipOutcome::Accepted {
                let full = evaluate(state.plan(), &inst).unwrap().j;
                prop_assert!((full - state.j(&inst)).abs() <= 1e-9);
                let mut back = state.clone();
                let inv = apply_flip_if_accepted(&mut back, p.inverse(), &inst, AcceptanceRule::Always, &mut rng).unwrap();
                prop_assert_eq!(inv, FlipOutcome::Accepted);
                prop_assert_eq!(back.plan(), &before);
            } else {
                prop_assert_eq!(state.plan(), &before);
            }
        }
    }
}
