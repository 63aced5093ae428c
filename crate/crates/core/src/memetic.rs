//! Spatially-aware recombination, BFS repair and the memetic main loop.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{connected_components, NodeId, Plan};
use crate::init::init_population;
use crate::instance::Instance;
use crate::objective::{fitness, PlanState};
use crate::par::{self, Parallelism};
use crate::search::{assert_feasible, local_improvement_pass, SearchConfig};

/// Restores contiguity: each territory keeps the component holding its
/// center, and every other node is handed, frontier inward, to a uniformly
/// chosen adjacent territory. Returns the nodes whose territory changed.
pub fn repair<R: Rng + ?Sized>(plan: &mut Plan, instance: &Instance, rng: &mut R) -> Result<Vec<NodeId>> {
    let graph = instance.graph();
    let before = plan.assignment().to_vec();
    let mut orphan = vec![false; plan.node_count()];
    let mut remaining = 0usize;
    for (t, nodes) in plan.territories().into_iter().enumerate() {
        let center = plan.centers()[t];
        if plan.territory_of(center) != t {
            return Err(Error::InvalidPlan(format!("center of territory {t} moved")));
        }
        let components = connected_components(graph, &nodes)?;
        if components.len() <= 1 {
            continue;
        }
        for comp in components.iter().filter(|c| !c.contains(&center)) {
            for &v in comp {
                orphan[v] = true;
                remaining += 1;
            }
        }
    }

    while remaining > 0 {
        let frontier: Vec<NodeId> = (0..orphan.len())
            .filter(|&v| orphan[v] && graph.neighbors(v).iter().any(|&w| !orphan[w]))
            .collect();
        if frontier.is_empty() {
            return Err(Error::Internal(format!("{remaining} orphaned nodes touch no territory")));
        }
        for v in frontier {
            let choices: Vec<usize> = graph
                .neighbors(v)
                .iter()
                .filter(|&&w| !orphan[w])
                .map(|&w| plan.territory_of(w))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let t = *choices.choose(rng).expect("frontier node has an assigned neighbour");
            plan.assign(v, t);
            orphan[v] = false;
            remaining -= 1;
        }
    }

    Ok((0..before.len()).filter(|&v| before[v] != plan.territory_of(v)).collect())
}

/// Roulette-wheel index proportional to `fitnesses`.
pub fn select_mate<R: Rng + ?Sized>(fitnesses: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(fitnesses).map_err(|e| Error::Contract(format!("mate selection: {e}")))?;
    Ok(dist.sample(rng))
}

/// One insert/remove exchange applied to territory `territory` of the child.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapMove {
    pub territory: usize,
    pub incoming: NodeId,
    pub outgoing: NodeId,
    /// Territory that adopted the outgoing node before repair.
    pub outgoing_to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recombination {
    pub child: Plan,
    /// `None` when no territory was eligible; the child is then unchanged.
    pub swap: Option<SwapMove>,
    /// Nodes moved by repair after the swap.
    pub repaired: Vec<NodeId>,
}

fn incoming_outgoing(child: &Plan, guide: &Plan, t: usize, instance: &Instance) -> (Vec<NodeId>, Vec<NodeId>) {
    let graph = instance.graph();
    let in_child = |v: NodeId| child.territory_of(v) == t;
    let in_guide = |v: NodeId| guide.territory_of(v) == t;
    let incoming = (0..child.node_count())
        .filter(|&v| in_guide(v) && !in_child(v) && !child.is_center(v))
        .filter(|&v| graph.neighbors(v).iter().any(|&u| in_child(u)))
        .collect();
    let outgoing = (0..child.node_count())
        .filter(|&u| in_child(u) && !in_guide(u) && !child.is_center(u))
        .filter(|&u| graph.neighbors(u).iter().any(|&v| in_guide(v)))
        .collect();
    (incoming, outgoing)
}

/// Moves the child one node-pair closer to the guide on a random eligible
/// territory, then repairs any contiguity the swap broke.
pub fn recombine<R: Rng + ?Sized>(child: &Plan, guide: &Plan, instance: &Instance, rng: &mut R) -> Result<Recombination> {
    if child.centers() != guide.centers() || child.node_count() != guide.node_count() {
        return Err(Error::Contract("recombination parents must share centers".into()));
    }
    let k = child.k();
    let mut eligible = Vec::new();
    for t in 0..k {
        let vi: BTreeSet<NodeId> = child.territory(t).into_iter().collect();
        let vj: BTreeSet<NodeId> = guide.territory(t).into_iter().collect();
        let common = vi.intersection(&vj).count();
        if common > 0 && common < vi.len().min(vj.len()) {
            let (inc, out) = incoming_outgoing(child, guide, t, instance);
            if !inc.is_empty() && !out.is_empty() {
                eligible.push((t, inc, out));
            }
        }
    }
    let Some((t, incoming, outgoing)) = eligible.choose(rng) else {
        return Ok(Recombination {
            child: child.clone(),
            swap: None,
            repaired: Vec::new(),
        });
    };
    let v = *incoming.choose(rng).expect("non-empty");
    let u = *outgoing.choose(rng).expect("non-empty");
    let mut plan = child.clone();
    plan.assign(v, *t);
    let adjacent: Vec<usize> = instance
        .graph()
        .neighbors(u)
        .iter()
        .map(|&w| plan.territory_of(w))
        .filter(|&s| s != *t)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let to = adjacent.choose(rng).copied().unwrap_or_else(|| guide.territory_of(u));
    plan.assign(u, to);
    let repaired = repair(&mut plan, instance, rng)?;
    Ok(Recombination {
        child: plan,
        swap: Some(SwapMove {
            territory: *t,
            incoming: v,
            outgoing: u,
            outgoing_to: to,
        }),
        repaired,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemeticConfig {
    pub np: usize,
    pub iter_max: usize,
    pub search: SearchConfig,
    /// Run the local-improvement phase each iteration.
    pub local_search: bool,
    /// Run the recombination phase each iteration (needs `np ≥ 2`).
    pub recombination: bool,
    pub parallelism: Parallelism,
}

impl Default for MemeticConfig {
    fn default() -> Self {
        Self {
            np: 10,
            iter_max: 1000,
            search: SearchConfig::default(),
            local_search: true,
            recombination: true,
            parallelism: Parallelism::default(),
        }
    }
}

impl MemeticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.np == 0 {
            return Err(Error::Config("population size must be at least 1".into()));
        }
        self.search.validate()
    }
}

/// Population statistics after one outer iteration (row 0 is the initial
/// population).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationRow {
    pub iteration: usize,
    /// Best J seen so far.
    pub best_j: f64,
    pub mean_j: f64,
    /// Balance term of the best plan so far.
    pub best_balance: f64,
    /// Compactness term of the best plan so far.
    pub best_compactness: f64,
    pub wall_ms: f64,
}

pub fn write_generation_csv<W: std::io::Write>(rows: &[GenerationRow], mut w: W) -> Result<()> {
    writeln!(w, "iteration,best_J,mean_J,best_balance,best_compactness,wall_ms")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.3}",
            r.iteration, r.best_j, r.mean_j, r.best_balance, r.best_compactness, r.wall_ms
        )?;
    }
    Ok(())
}

/// Accepted-move counts of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MoveCounts {
    pub flips: usize,
    /// Recombination candidates that replaced their member.
    pub recombinations: usize,
    /// Recombination candidates whose swap needed repair.
    pub repairs: usize,
    /// Plans checked with full validation (invariant mode only).
    pub validated: usize,
}

#[derive(Debug, Clone)]
pub struct SpatialResult {
    pub best: Plan,
    pub best_j: f64,
    pub trace: Vec<GenerationRow>,
    pub moves: MoveCounts,
}

struct Candidate {
    state: Option<PlanState>,
    repaired: bool,
    result: Result<()>,
}

/// Memetic search: local improvement then synchronous recombination, for
/// `iter_max` iterations. Member `i` draws from RNG stream `i + 1` of
/// `seed`, so parallel and sequential runs agree exactly.
pub fn spatial_run(instance: &Instance, config: &MemeticConfig, seed: u64, warm_start: Option<&Plan>) -> Result<SpatialResult> {
    config.validate()?;
    let started = Instant::now();
    let check = config.search.check_invariants;
    let mode = config.parallelism;
    let mut pop = init_population(instance, config.np, seed, warm_start, mode)?;
    let mut moves = MoveCounts::default();

    let (mut best, mut best_j) = {
        let (i, j) = pop
            .members
            .iter()
            .map(|m| m.j(instance))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, j)| if j < acc.1 { (i, j) } else { acc });
        (pop.members[i].clone(), j)
    };
    let mut trace = Vec::with_capacity(config.iter_max + 1);
    let mut record = |iteration: usize, pop: &[PlanState], best: &PlanState, best_j: f64| {
        let mean_j = pop.iter().map(|m| m.j(instance)).sum::<f64>() / pop.len() as f64;
        trace.push(GenerationRow {
            iteration,
            best_j,
            mean_j,
            best_balance: best.balance_term(),
            best_compactness: best.compactness_term(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    };
    record(0, &pop.members, &best, best_j);

    for iteration in 1..=config.iter_max {
        if config.local_search {
            let flipped = local_improvement_pass(&mut pop, instance, &config.search, mode)?;
            moves.flips += flipped.iter().filter(|&&f| f).count();
            if check {
                for m in &pop.members {
                    assert_feasible(m.plan(), instance)?;
                    moves.validated += 1;
                }
            }
        }

        if config.recombination && pop.len() >= 2 {
            let snapshot: Vec<Plan> = pop.plans().cloned().collect();
            let js: Vec<f64> = pop.members.iter().map(|m| m.j(instance)).collect();
            let weights: Vec<f64> = js.iter().map(|&j| fitness(j)).collect();
            let mut work: Vec<(&mut par::Rng, Candidate)> = pop
                .rngs
                .iter_mut()
                .map(|r| {
                    (
                        r,
                        Candidate {
                            state: None,
                            repaired: false,
                            result: Ok(()),
                        },
                    )
                })
                .collect();
            let propose = |i: usize, rng: &mut par::Rng, out: &mut Candidate| -> Result<()> {
                let mate = select_mate(&weights, rng)?;
                if mate == i {
                    return Ok(());
                }
                let r = recombine(&snapshot[i], &snapshot[mate], instance, rng)?;
                if r.swap.is_none() {
                    return Ok(());
                }
                if check {
                    assert_feasible(&r.child, instance)?;
                }
                out.repaired = !r.repaired.is_empty();
                let state = PlanState::new(r.child, instance)?;
                if state.j(instance) <= js[i] {
                    out.state = Some(state);
                }
                Ok(())
            };
            par::for_each_mut(&mut work, mode, |i, (rng, out)| {
                out.result = propose(i, rng, out);
            });
            let candidates: Vec<Candidate> = work.into_iter().map(|(_, c)| c).collect();
            for (i, c) in candidates.into_iter().enumerate() {
                c.result?;
                if check && c.state.is_some() {
                    moves.validated += 1;
                }
                moves.repairs += c.repaired as usize;
                if let Some(state) = c.state {
                    pop.members[i] = state;
                    moves.recombinations += 1;
                }
            }
        }

        for m in &pop.members {
            let j = m.j(instance);
            if j < best_j {
                best_j = j;
                best = m.clone();
            }
        }
        record(iteration, &pop.members, &best, best_j);
    }

    Ok(SpatialResult {
        best: best.into_plan(),
        best_j,
        trace,
        moves,
    })
}
