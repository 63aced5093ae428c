//! Flip-based search: local improvement, single-solution baselines (SHC,
//! SA, TS) and flip-chain samplers (BAA, BCAA, AIO).
//!
//! All searches share one move: a non-center boundary node changes to an
//! adjacent territory. A move that would disconnect the donor territory is
//! rejected before any acceptance rule sees it, so every plan a search holds
//! is contiguous with fixed centers.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate_plan, ContiguityGraph, NodeId, Plan};
use crate::init::Population;
use crate::instance::Instance;
use crate::objective::PlanState;
use crate::par::{self, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlipProposal {
    pub node: NodeId,
    pub from: usize,
    pub to: usize,
}

impl FlipProposal {
    pub fn inverse(self) -> Self {
        Self {
            node: self.node,
            from: self.to,
            to: self.from,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Probability of accepting a non-improving flip in local improvement.
    pub p_r: f64,
    /// Iteration budget of the single-solution baselines.
    pub max_iters: usize,
    pub sa_t0: f64,
    /// Geometric cooling factor applied after each accepted SA move.
    pub sa_cooling: f64,
    pub tabu_tenure: usize,
    /// Proposals sampled per tabu-search iteration.
    pub tabu_candidates: usize,
    pub chain_steps: usize,
    /// Balance (and compactness) tolerance of the BAA/BCAA samplers.
    pub epsilon_band: f64,
    /// Validate the full plan after every accepted move.
    pub check_invariants: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            p_r: 0.01,
            max_iters: 10_000,
            sa_t0: 1.0,
            sa_cooling: 0.995,
            tabu_tenure: 25,
            tabu_candidates: 8,
            chain_steps: 10_000,
            epsilon_band: 0.15,
            check_invariants: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_r) {
            return Err(Error::Config(format!("p_r must lie in [0, 1], got {}", self.p_r)));
        }
        if !(self.sa_t0 >= 0.0) {
            return Err(Error::Config("SA initial temperature must be non-negative".into()));
        }
        if !(self.sa_cooling > 0.0 && self.sa_cooling < 1.0) {
            return Err(Error::Config(format!(
                "SA cooling rate must lie in (0, 1), got {}",
                self.sa_cooling
            )));
        }
        if !(self.epsilon_band >= 0.0) {
            return Err(Error::Config("epsilon_band must be non-negative".into()));
        }
        if self.tabu_candidates == 0 {
            return Err(Error::Config("tabu_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a contiguity-preserving flip is judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcceptanceRule {
    /// Strict improvement, or any move with probability `p_r`.
    Improving { p_r: f64 },
    /// `J_new ≤ J_old`.
    NonWorsening,
    /// Metropolis rule `exp(−ΔJ / T)` on worsening moves.
    Annealing { temperature: f64 },
    Always,
    /// Reject moves that push an involved territory's balance deviation
    /// outside `band`, or further outside if it already was.
    BalancedBand { band: f64 },
    /// [`Self::BalancedBand`] plus the compactness term may not worsen by
    /// more than `band`.
    BalancedCompactBand { band: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipOutcome {
    Accepted,
    /// Hard reject: the donor territory would lose contiguity.
    BrokeContiguity,
    /// The acceptance rule declined the move.
    Rejected,
}

impl FlipOutcome {
    pub fn accepted(self) -> bool {
        self == FlipOutcome::Accepted
    }
}

/// Ordered adjacent territory pairs with their candidate donor nodes.
fn flip_candidates(plan: &Plan, graph: &ContiguityGraph) -> Vec<((usize, usize), Vec<NodeId>)> {
    let mut pairs: BTreeSet<(usize, usize, NodeId)> = BTreeSet::new();
    for &(u, v) in graph.edges() {
        let (tu, tv) = (plan.territory_of(u), plan.territory_of(v));
        if tu != tv {
            pairs.insert((tu, tv, u));
            pairs.insert((tv, tu, v));
        }
    }
    let mut out: Vec<((usize, usize), Vec<NodeId>)> = Vec::new();
    for (from, to, node) in pairs {
        match out.last_mut() {
            Some((key, nodes)) if *key == (from, to) => nodes.push(node),
            _ => out.push(((from, to), vec![node])),
        }
    }
    for (_, nodes) in &mut out {
        nodes.retain(|&v| !plan.is_center(v));
    }
    out
}

/// Draws an ordered adjacent territory pair uniformly, then a non-center
/// donor node adjacent to the recipient uniformly. Pairs whose candidates
/// are all centers are redrawn.
pub fn propose_flip<R: Rng + ?Sized>(plan: &Plan, graph: &ContiguityGraph, rng: &mut R) -> Result<FlipProposal> {
    if plan.k() < 2 {
        return Err(Error::NoFeasibleFlip);
    }
    let candidates = flip_candidates(plan, graph);
    if candidates.is_empty() {
        return Err(Error::Internal("no adjacent territory pair".into()));
    }
    let usable: Vec<_> = candidates.iter().filter(|(_, n)| !n.is_empty()).collect();
    let ((from, to), nodes) = usable.choose(rng).ok_or(Error::NoFeasibleFlip)?;
    let node = *nodes.choose(rng).expect("non-empty");
    Ok(FlipProposal {
        node,
        from: *from,
        to: *to,
    })
}

/// Whether territory `plan.territory_of(v)` stays connected without `v`.
/// Assumes the territory is connected now.
pub fn removal_keeps_connected(plan: &Plan, graph: &ContiguityGraph, v: NodeId) -> bool {
    let t = plan.territory_of(v);
    let targets: Vec<NodeId> = graph
        .neighbors(v)
        .iter()
        .copied()
        .filter(|&w| plan.territory_of(w) == t)
        .collect();
    if targets.len() <= 1 {
        // a leaf, or v alone in its territory (caller rules out emptying)
        return !targets.is_empty();
    }
    let mut remaining: BTreeSet<NodeId> = targets[1..].iter().copied().collect();
    let mut seen = HashSet::from([v, targets[0]]);
    let mut queue = VecDeque::from([targets[0]]);
    while let Some(u) = queue.pop_front() {
        for &w in graph.neighbors(u) {
            if plan.territory_of(w) == t && seen.insert(w) {
                remaining.remove(&w);
                if remaining.is_empty() {
                    return true;
                }
                queue.push_back(w);
            }
        }
    }
    false
}

fn check_proposal(state: &PlanState, instance: &Instance, p: FlipProposal) -> Result<()> {
    let plan = state.plan();
    if p.node >= plan.node_count() || p.from >= plan.k() || p.to >= plan.k() || p.from == p.to {
        return Err(Error::Contract(format!("malformed proposal {p:?}")));
    }
    if plan.territory_of(p.node) != p.from {
        return Err(Error::Contract(format!(
            "node {} is not in territory {}",
            p.node, p.from
        )));
    }
    if plan.is_center(p.node) {
        return Err(Error::Contract(format!("node {} is a center", p.node)));
    }
    if !instance
        .graph()
        .neighbors(p.node)
        .iter()
        .any(|&w| plan.territory_of(w) == p.to)
    {
        return Err(Error::Contract(format!(
            "node {} is not adjacent to territory {}",
            p.node, p.to
        )));
    }
    Ok(())
}

/// Fails with an internal error naming the first hard violation.
pub(crate) fn assert_feasible(plan: &Plan, instance: &Instance) -> Result<()> {
    let v = validate_plan(plan, instance.graph(), instance.objective().tau, instance.level())?;
    let first = v.hard().next().map(|violation| violation.to_string());
    match first {
        Some(msg) => Err(Error::Internal(msg)),
        None => Ok(()),
    }
}

/// Tentatively applies `p`; keeps it if contiguity holds and `rule` agrees,
/// otherwise restores the previous state exactly.
pub fn apply_flip_if_accepted<R: Rng + ?Sized>(
    state: &mut PlanState,
    p: FlipProposal,
    instance: &Instance,
    rule: AcceptanceRule,
    rng: &mut R,
) -> Result<FlipOutcome> {
    check_proposal(state, instance, p)?;
    if !removal_keeps_connected(state.plan(), instance.graph(), p.node) {
        return Ok(FlipOutcome::BrokeContiguity);
    }
    let j_old = state.j(instance);
    let bal_old = [state.territory_balance(p.from), state.territory_balance(p.to)];
    let comp_old = state.compactness_term();
    let undo = state.move_node(instance, p.node, p.to)?;
    let j_new = state.j(instance);
    let within_band = |state: &PlanState, band: f64| {
        [p.from, p.to].iter().zip(bal_old).all(|(&t, old)| {
            let new = state.territory_balance(t);
            new <= band || new <= old
        })
    };
    let accept = match rule {
        AcceptanceRule::Improving { p_r } => j_new < j_old || rng.gen::<f64>() < p_r,
        AcceptanceRule::NonWorsening => j_new <= j_old,
        AcceptanceRule::Annealing { temperature } => {
            let delta = j_new - j_old;
            delta <= 0.0 || (temperature > 0.0 && rng.gen::<f64>() < (-delta / temperature).exp())
        }
        AcceptanceRule::Always => true,
        AcceptanceRule::BalancedBand { band } => within_band(state, band),
        AcceptanceRule::BalancedCompactBand { band } => {
            within_band(state, band) && state.compactness_term() <= comp_old + band
        }
    };
    if accept {
        Ok(FlipOutcome::Accepted)
    } else {
        state.undo(undo);
        Ok(FlipOutcome::Rejected)
    }
}

/// One member's local improvement: scan donor territories in random order,
/// their adjacent recipients in random order, and candidate nodes in random
/// order until a flip is accepted. Returns `false` when every candidate was
/// exhausted (local optimum for `p_r = 0`).
pub fn improve_member<R: Rng + ?Sized>(
    state: &mut PlanState,
    instance: &Instance,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<bool> {
    let k = state.plan().k();
    if k < 2 {
        return Ok(false);
    }
    let graph = instance.graph();
    let rule = AcceptanceRule::Improving { p_r: config.p_r };
    let territories = state.plan().territories();
    let mut donors: Vec<usize> = (0..k).collect();
    donors.shuffle(rng);
    for z in donors {
        let mut recipients: Vec<usize> = territories[z]
            .iter()
            .flat_map(|&v| graph.neighbors(v).iter().map(|&w| state.plan().territory_of(w)))
            .filter(|&t| t != z)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        recipients.shuffle(rng);
        for w in recipients {
            let mut nodes: Vec<NodeId> = territories[z]
                .iter()
                .copied()
                .filter(|&v| {
                    !state.plan().is_center(v)
                        && graph.neighbors(v).iter().any(|&u| state.plan().territory_of(u) == w)
                })
                .collect();
            nodes.shuffle(rng);
            for v in nodes {
                let p = FlipProposal { node: v, from: z, to: w };
                if apply_flip_if_accepted(state, p, instance, rule, rng)?.accepted() {
                    if config.check_invariants {
                        assert_feasible(state.plan(), instance)?;
                    }
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

/// Runs [`improve_member`] on every member, each with its own RNG stream.
/// Returns which members flipped.
pub fn local_improvement_pass(
    population: &mut Population,
    instance: &Instance,
    config: &SearchConfig,
    mode: Parallelism,
) -> Result<Vec<bool>> {
    let mut work: Vec<(&mut PlanState, &mut par::Rng, Result<bool>)> = population
        .members
        .iter_mut()
        .zip(population.rngs.iter_mut())
        .map(|(m, r)| (m, r, Ok(false)))
        .collect();
    par::for_each_mut(&mut work, mode, |_, (member, rng, out)| {
        *out = improve_member(member, instance, config, *rng);
    });
    work.into_iter().map(|(_, _, r)| r).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub j: f64,
    pub balance_term: f64,
    pub compactness_term: f64,
    pub accepted: bool,
}

impl TraceRow {
    fn of(iteration: usize, state: &PlanState, instance: &Instance, accepted: bool) -> Self {
        Self {
            iteration,
            j: state.j(instance),
            balance_term: state.balance_term(),
            compactness_term: state.compactness_term(),
            accepted,
        }
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "iteration,J,balance_term,compactness_term,accepted")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iteration, r.j, r.balance_term, r.compactness_term, r.accepted as u8
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Plan,
    pub best_j: f64,
    /// Incumbent state after every iteration.
    pub trace: Vec<TraceRow>,
    pub accepted: usize,
}

struct BestTracker {
    plan: Plan,
    j: f64,
}

impl BestTracker {
    fn new(state: &PlanState, instance: &Instance) -> Self {
        Self {
            plan: state.plan().clone(),
            j: state.j(instance),
        }
    }

    fn offer(&mut self, state: &PlanState, instance: &Instance) {
        let j = state.j(instance);
        if j < self.j {
            self.j = j;
            self.plan = state.plan().clone();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Shc,
    Sa,
    Ts,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shc" => Ok(Self::Shc),
            "sa" => Ok(Self::Sa),
            "ts" => Ok(Self::Ts),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

fn start_state(instance: &Instance, start: Plan, config: &SearchConfig) -> Result<PlanState> {
    config.validate()?;
    let state = PlanState::new(start, instance)?;
    assert_feasible(state.plan(), instance)
        .map_err(|e| Error::InvalidPlan(format!("start plan is infeasible: {e}")))?;
    Ok(state)
}

/// Single-solution search over the flip neighbourhood for
/// `config.max_iters` iterations. Returns the best plan seen.
pub fn run_baseline<R: Rng + ?Sized>(
    instance: &Instance,
    algorithm: Baseline,
    config: &SearchConfig,
    rng: &mut R,
    start: Plan,
) -> Result<SearchResult> {
    let mut state = start_state(instance, start, config)?;
    let mut best = BestTracker::new(&state, instance);
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut accepted = 0;
    let mut temperature = config.sa_t0;
    let mut tabu: VecDeque<(NodeId, usize)> = VecDeque::with_capacity(config.tabu_tenure + 1);

    for iteration in 0..config.max_iters {
        let took = match algorithm {
            Baseline::Shc | Baseline::Sa => {
                let p = match propose_flip(state.plan(), instance.graph(), rng) {
                    Ok(p) => p,
                    Err(Error::NoFeasibleFlip) => break,
                    Err(e) => return Err(e),
                };
                let rule = match algorithm {
                    Baseline::Shc => AcceptanceRule::NonWorsening,
                    _ => AcceptanceRule::Annealing { temperature },
                };
                let ok = apply_flip_if_accepted(&mut state, p, instance, rule, rng)?.accepted();
                if ok && algorithm == Baseline::Sa {
                    temperature *= config.sa_cooling;
                }
                ok
            }
            Baseline::Ts => {
                match tabu_step(&mut state, instance, config, &tabu, best.j, rng)? {
                    Some(p) => {
                        if config.tabu_tenure > 0 {
                            tabu.push_back((p.node, p.from));
                            while tabu.len() > config.tabu_tenure {
                                tabu.pop_front();
                            }
                        }
                        true
                    }
                    None => false,
                }
            }
        };
        if took {
            accepted += 1;
            if config.check_invariants {
                assert_feasible(state.plan(), instance)?;
            }
            best.offer(&state, instance);
        }
        trace.push(TraceRow::of(iteration, &state, instance, took));
    }
    Ok(SearchResult {
        best: best.plan,
        best_j: best.j,
        trace,
        accepted,
    })
}

/// Samples up to `tabu_candidates` feasible flips and applies the best one
/// that is not tabu (or beats the best-so-far), even if it worsens J.
fn tabu_step<R: Rng + ?Sized>(
    state: &mut PlanState,
    instance: &Instance,
    config: &SearchConfig,
    tabu: &VecDeque<(NodeId, usize)>,
    best_j: f64,
    rng: &mut R,
) -> Result<Option<FlipProposal>> {
    let mut chosen: Option<(f64, FlipProposal)> = None;
    let mut tried = HashSet::new();
    for _ in 0..config.tabu_candidates {
        let p = match propose_flip(state.plan(), instance.graph(), rng) {
            Ok(p) => p,
            Err(Error::NoFeasibleFlip) => return Ok(None),
            Err(e) => return Err(e),
        };
        if !tried.insert(p) || !removal_keeps_connected(state.plan(), instance.graph(), p.node) {
            continue;
        }
        let undo = state.move_node(instance, p.node, p.to)?;
        let j = state.j(instance);
        state.undo(undo);
        let is_tabu = tabu.contains(&(p.node, p.to));
        if is_tabu && j >= best_j {
            continue;
        }
        if chosen.is_none_or(|(cj, _)| j < cj) {
            chosen = Some((j, p));
        }
    }
    match chosen {
        Some((_, p)) => {
            state.move_node(instance, p.node, p.to)?;
            Ok(Some(p))
        }
        None => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Baa,
    Bcaa,
    Aio,
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baa" => Ok(Self::Baa),
            "bcaa" => Ok(Self::Bcaa),
            "aio" => Ok(Self::Aio),
            other => Err(Error::Config(format!("unknown sampler `{other}`"))),
        }
    }
}

pub const HISTOGRAM_BINS: usize = 20;

/// Ensemble statistics of a flip chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub steps: usize,
    pub accepted: usize,
    /// Distinct plans visited, start included.
    pub visited_states: usize,
    /// Balance score (%) of every visited step, in 5-point bins over [0, 100].
    pub balance_histogram: [u64; HISTOGRAM_BINS],
    /// `100·(1 − compactness_term / K)`, binned like the balance histogram.
    /// Equals the mean Polsby-Popper percentage in Polsby-Popper mode.
    pub compactness_histogram: [u64; HISTOGRAM_BINS],
    pub best_j: f64,
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub summary: ChainSummary,
    pub search: SearchResult,
}

fn bin(pct: f64) -> usize {
    ((pct.clamp(0.0, 100.0) / (100.0 / HISTOGRAM_BINS as f64)) as usize).min(HISTOGRAM_BINS - 1)
}

fn state_hash(plan: &Plan) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    plan.assignment().hash(&mut h);
    h.finish()
}

/// Random walk of `config.chain_steps` flip proposals under the sampler's
/// acceptance rule, recording the best plan and ensemble statistics.
pub fn run_chain<R: Rng + ?Sized>(
    instance: &Instance,
    sampler: Sampler,
    config: &SearchConfig,
    rng: &mut R,
    start: Plan,
) -> Result<ChainResult> {
    let mut state = start_state(instance, start, config)?;
    let rule = match sampler {
        Sampler::Baa => AcceptanceRule::BalancedBand { band: config.epsilon_band },
        Sampler::Bcaa => AcceptanceRule::BalancedCompactBand { band: config.epsilon_band },
        Sampler::Aio => AcceptanceRule::NonWorsening,
    };
    let k = state.plan().k() as f64;
    let mut best = BestTracker::new(&state, instance);
    let mut visited = HashSet::from([state_hash(state.plan())]);
    let mut balance_histogram = [0; HISTOGRAM_BINS];
    let mut compactness_histogram = [0; HISTOGRAM_BINS];
    let mut trace = Vec::with_capacity(config.chain_steps);
    let mut accepted = 0;
    let mut steps = 0;
    for iteration in 0..config.chain_steps {
        let p = match propose_flip(state.plan(), instance.graph(), rng) {
            Ok(p) => p,
            Err(Error::NoFeasibleFlip) => break,
            Err(e) => return Err(e),
        };
        steps += 1;
        let took = apply_flip_if_accepted(&mut state, p, instance, rule, rng)?.accepted();
        if took {
            accepted += 1;
            if config.check_invariants {
                assert_feasible(state.plan(), instance)?;
            }
            visited.insert(state_hash(state.plan()));
            best.offer(&state, instance);
        }
        balance_histogram[bin(100.0 * (1.0 - state.balance_term() / k).abs())] += 1;
        compactness_histogram[bin(100.0 * (1.0 - state.compactness_term() / k))] += 1;
        trace.push(TraceRow::of(iteration, &state, instance, took));
    }
    Ok(ChainResult {
        summary: ChainSummary {
            steps,
            accepted,
            visited_states: visited.len(),
            balance_histogram,
            compactness_histogram,
            best_j: best.j,
        },
        search: SearchResult {
            best: best.plan,
            best_j: best.j,
            trace,
            accepted,
        },
    })
}
