//! Population initialization: seeding followed by randomized guided growth.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeId, Plan};
use crate::instance::Instance;
use crate::memetic::repair;
use crate::objective::PlanState;
use crate::par::{self, stream_rng, Parallelism};

/// Assignment with unassigned nodes, as produced by [`seed_plan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialPlan {
    pub assignment: Vec<Option<usize>>,
    pub centers: Vec<NodeId>,
}

impl PartialPlan {
    pub fn unassigned(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }
}

/// Places every center in its own territory and leaves all else unassigned.
pub fn seed_plan(instance: &Instance) -> PartialPlan {
    let mut assignment = vec![None; instance.node_count()];
    for (t, &c) in instance.centers().iter().enumerate() {
        assignment[c] = Some(t);
    }
    PartialPlan {
        assignment,
        centers: instance.centers().to_vec(),
    }
}

/// Grows seeded territories until every node is assigned.
///
/// Each draw picks a territory uniformly and gives it one unassigned
/// neighbour chosen uniformly from its frontier. Territories with an empty
/// frontier skip the draw.
pub fn guided_growth<R: Rng + ?Sized>(partial: PartialPlan, instance: &Instance, rng: &mut R) -> Result<Plan> {
    let graph = instance.graph();
    let k = partial.centers.len();
    let mut assignment = partial.assignment;
    let mut remaining = assignment.iter().filter(|a| a.is_none()).count();
    let mut frontier: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); k];
    for (v, a) in assignment.iter().enumerate() {
        if let Some(t) = *a {
            frontier[t].extend(graph.neighbors(v).iter().filter(|&&w| assignment[w].is_none()));
        }
    }

    while remaining > 0 {
        if frontier.iter().all(|f| f.is_empty()) {
            return Err(Error::UnreachableNodes(remaining));
        }
        let t = rng.gen_range(0..k);
        if frontier[t].is_empty() {
            continue;
        }
        let pick = rng.gen_range(0..frontier[t].len());
        let v = *frontier[t].iter().nth(pick).expect("index within frontier");
        assignment[v] = Some(t);
        remaining -= 1;
        for f in frontier.iter_mut() {
            f.remove(&v);
        }
        frontier[t].extend(graph.neighbors(v).iter().filter(|&&w| assignment[w].is_none()));
    }

    let assignment = assignment.into_iter().map(|a| a.expect("all assigned")).collect();
    Plan::new(assignment, partial.centers)
}

/// Population of plan states with one RNG stream per member.
#[derive(Debug, Clone)]
pub struct Population {
    pub members: Vec<PlanState>,
    pub rngs: Vec<par::Rng>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn plans(&self) -> impl Iterator<Item = &Plan> {
        self.members.iter().map(|m| m.plan())
    }
}

/// RNG stream of population member `i`. Stream 0 is reserved for
/// run-level draws.
pub fn member_rng(seed: u64, i: usize) -> par::Rng {
    stream_rng(seed, i as u64 + 1)
}

/// Builds `np` members by seeding and growth, or replicates a repaired warm
/// start plan `np` times.
pub fn init_population(
    instance: &Instance,
    np: usize,
    seed: u64,
    warm_start: Option<&Plan>,
    mode: Parallelism,
) -> Result<Population> {
    if np == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    let mut rngs: Vec<par::Rng> = (0..np).map(|i| member_rng(seed, i)).collect();
    let members = match warm_start {
        Some(plan) => {
            if plan.centers() != instance.centers() {
                return Err(Error::InvalidPlan("warm start centers differ from instance".into()));
            }
            let mut plan = plan.clone();
            repair(&mut plan, instance, &mut stream_rng(seed, 0))?;
            let state = PlanState::new(plan, instance)?;
            vec![state; np]
        }
        None => {
            let mut out: Vec<Option<Result<PlanState>>> = (0..np).map(|_| None).collect();
            let mut work: Vec<(&mut Option<Result<PlanState>>, &mut par::Rng)> =
                out.iter_mut().zip(rngs.iter_mut()).collect();
            par::for_each_mut(&mut work, mode, |_, (slot, rng)| {
                let grown = guided_growth(seed_plan(instance), instance, *rng)
                    .and_then(|p| PlanState::new(p, instance));
                **slot = Some(grown);
            });
            out.into_iter().map(|r| r.expect("filled")).collect::<Result<Vec<_>>>()?
        }
    };
    Ok(Population { members, rngs })
}
