//! Exhaustive enumeration of feasible plans for tiny instances.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{is_connected, Plan};
use crate::instance::Instance;
use crate::objective::evaluate;

/// Largest node count the enumerator accepts.
pub const MAX_ORACLE_NODES: usize = 16;

/// Calls `f` on every plan with fixed centers and contiguous territories, in
/// lexicographic order of the non-center assignment.
pub fn for_each_feasible_plan<F: FnMut(&Plan) -> Result<()>>(instance: &Instance, mut f: F) -> Result<()> {
    let n = instance.node_count();
    if n > MAX_ORACLE_NODES {
        return Err(Error::Config(format!(
            "exhaustive enumeration is limited to {MAX_ORACLE_NODES} nodes, instance has {n}"
        )));
    }
    let k = instance.k();
    let centers = instance.centers().to_vec();
    let free: Vec<usize> = (0..n).filter(|&v| instance.center_index(v).is_none()).collect();
    let mut assignment = vec![0; n];
    for (t, &c) in centers.iter().enumerate() {
        assignment[c] = t;
    }
    let mut digits = vec![0usize; free.len()];
    loop {
        for (&v, &d) in free.iter().zip(&digits) {
            assignment[v] = d;
        }
        let plan = Plan::new(assignment.clone(), centers.clone())?;
        if plan.territories().iter().all(|nodes| is_connected(instance.graph(), nodes)) {
            f(&plan)?;
        }
        // odometer, last digit fastest
        let mut i = digits.len();
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < k {
                break;
            }
            digits[i] = 0;
        }
    }
}

pub fn feasible_plans(instance: &Instance) -> Result<Vec<Plan>> {
    let mut out = Vec::new();
    for_each_feasible_plan(instance, |p| {
        out.push(p.clone());
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    #[serde(rename = "J_star")]
    pub j_star: f64,
    /// First optimal plan in enumeration order.
    pub optimal: Plan,
    pub feasible_count: u64,
}

/// Minimum J over every feasible plan.
pub fn solve_exhaustive(instance: &Instance) -> Result<OracleResult> {
    let mut best: Option<(f64, Plan)> = None;
    let mut count = 0u64;
    for_each_feasible_plan(instance, |p| {
        count += 1;
        let j = evaluate(p, instance)?.j;
        if best.as_ref().is_none_or(|(bj, _)| j < *bj) {
            best = Some((j, p.clone()));
        }
        Ok(())
    })?;
    let (j_star, optimal) = best.ok_or_else(|| Error::InvalidInstance("no feasible plan exists".into()))?;
    Ok(OracleResult {
        j_star,
        optimal,
        feasible_count: count,
    })
}
