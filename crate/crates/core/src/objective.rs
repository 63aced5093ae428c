//! Weighted balance/compactness objective and plan metrics.
//!
//! Two evaluation routes exist on purpose. [`evaluate`] scores a plan from
//! scratch, dissolving unit polygons with the geometry module. [`PlanState`]
//! keeps per-territory aggregates that are updated in O(degree) per node
//! move, using the shared boundary lengths precomputed on the graph. Search
//! code runs on `PlanState`; tests hold the two routes against each other.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Polygon};
use crate::graph::{ContiguityGraph, NodeId, Plan};
use crate::instance::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompactnessMode {
    #[default]
    PolsbyPopper,
    EdgeCutProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Balance weight λ ∈ [0, 1].
    pub lambda: f64,
    /// Half-width of the soft balance band used in validation.
    pub tau: f64,
    pub compactness_mode: CompactnessMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            tau: 0.1,
            compactness_mode: CompactnessMode::PolsbyPopper,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        Ok(())
    }

    /// Non-fatal configuration warnings: balance should weigh at least twice
    /// as much as compactness, i.e. λ/(1−λ) ≥ 2.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lambda < 1.0 && self.lambda / (1.0 - self.lambda) < 2.0 {
            out.push(format!(
                "lambda = {} gives balance less than twice the weight of compactness",
                self.lambda
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerritoryReport {
    pub size: usize,
    pub population: u64,
    pub capacity: u64,
    pub ratio: f64,
    /// `None` when the instance has no geometry.
    pub polsby_popper: Option<f64>,
    pub internal_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveReport {
    #[serde(rename = "J")]
    pub j: f64,
    pub balance_term: f64,
    pub compactness_term: f64,
    pub per_territory: Vec<TerritoryReport>,
}

/// Most internal edges a polyomino of `n` cells can have: `2n − ⌈2√n⌉`.
pub fn max_internal_grid_edges(n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // smallest m with m² ≥ 4n
    let mut m = (2.0 * (n as f64).sqrt()).floor() as usize;
    while m * m < 4 * n {
        m += 1;
    }
    while m > 0 && (m - 1) * (m - 1) >= 4 * n {
        m -= 1;
    }
    2 * n - m
}

/// Edge-cut surrogate for `|1 − PP|`: one minus the share of the best
/// attainable internal edge count that the territory retains, in [0, 1].
pub fn edge_cut_term(size: usize, internal_edges: usize) -> f64 {
    let best = max_internal_grid_edges(size);
    if best == 0 {
        return 0.0;
    }
    (1.0 - internal_edges as f64 / best as f64).clamp(0.0, 1.0)
}

fn pp_term(area: f64, perimeter: f64) -> Result<f64> {
    let pp = geometry::polsby_popper(geometry::ShapeStats { area, perimeter })?;
    Ok((1.0 - pp).abs())
}

fn balance_dev(population: u64, capacity: u64, territory: usize) -> Result<f64> {
    if capacity == 0 {
        return Err(Error::Evaluation(format!(
            "territory {territory} has zero capacity"
        )));
    }
    Ok((1.0 - population as f64 / capacity as f64).abs())
}

fn check_plan_shape(plan: &Plan, instance: &Instance) -> Result<()> {
    if plan.node_count() != instance.node_count() {
        return Err(Error::Contract(format!(
            "plan covers {} nodes, instance has {}",
            plan.node_count(),
            instance.node_count()
        )));
    }
    if plan.k() != instance.k() {
        return Err(Error::Contract(format!(
            "plan has {} territories, instance has {}",
            plan.k(),
            instance.k()
        )));
    }
    Ok(())
}

fn territory_polygons<'a>(graph: &'a ContiguityGraph, members: &[NodeId]) -> Result<Vec<&'a Polygon>> {
    members
        .iter()
        .map(|&v| {
            graph.feature(v).polygon.as_ref().ok_or_else(|| {
                Error::Geometry(format!("unit {v} has no polygon"))
            })
        })
        .collect()
}

fn internal_edges(graph: &ContiguityGraph, plan: &Plan, t: usize) -> usize {
    graph
        .edges()
        .iter()
        .filter(|&&(u, v)| plan.territory_of(u) == t && plan.territory_of(v) == t)
        .count()
}

/// Scores `plan` from scratch. Contiguity is not required.
pub fn evaluate(plan: &Plan, instance: &Instance) -> Result<ObjectiveReport> {
    check_plan_shape(plan, instance)?;
    let graph = instance.graph();
    let level = instance.level();
    let cfg = instance.objective();
    let mut balance_term = 0.0;
    let mut compactness_term = 0.0;
    let mut per_territory = Vec::with_capacity(plan.k());
    for (t, members) in plan.territories().iter().enumerate() {
        let population: u64 = members.iter().map(|&v| graph.population(v, level)).sum();
        let capacity: u64 = members.iter().map(|&v| graph.capacity(v, level)).sum();
        balance_term += balance_dev(population, capacity, t)?;
        let internal = internal_edges(graph, plan, t);
        let pp = if graph.has_geometry() && !members.is_empty() {
            let stats = geometry::dissolve(&territory_polygons(graph, members)?)?;
            Some(geometry::polsby_popper(stats)?)
        } else {
            None
        };
        compactness_term += match cfg.compactness_mode {
            CompactnessMode::PolsbyPopper => {
                let pp = pp.ok_or_else(|| {
                    Error::Geometry(format!("territory {t} has no geometry for Polsby-Popper"))
                })?;
                (1.0 - pp).abs()
            }
            CompactnessMode::EdgeCutProxy => edge_cut_term(members.len(), internal),
        };
        per_territory.push(TerritoryReport {
            size: members.len(),
            population,
            capacity,
            ratio: population as f64 / capacity as f64,
            polsby_popper: pp,
            internal_edges: internal,
        });
    }
    Ok(ObjectiveReport {
        j: cfg.lambda * balance_term + (1.0 - cfg.lambda) * compactness_term,
        balance_term,
        compactness_term,
        per_territory,
    })
}

/// Selection weight `1 / (1 + |J|)`.
pub fn fitness(j: f64) -> f64 {
    1.0 / (1.0 + j.abs())
}

/// Mean absolute deviation `(1/K) Σ |1 − pop/cap|`.
pub fn mean_balance_deviation(plan: &Plan, instance: &Instance) -> Result<f64> {
    check_plan_shape(plan, instance)?;
    let graph = instance.graph();
    let level = instance.level();
    let mut total = 0.0;
    for (t, members) in plan.territories().iter().enumerate() {
        let p: u64 = members.iter().map(|&v| graph.population(v, level)).sum();
        let c: u64 = members.iter().map(|&v| graph.capacity(v, level)).sum();
        total += balance_dev(p, c, t)?;
    }
    Ok(total / plan.k() as f64)
}

/// Balance percentage `100·|1 − mean deviation|`, applied verbatim (a mean
/// deviation above 1 folds back to a positive score).
pub fn balance_score(plan: &Plan, instance: &Instance) -> Result<f64> {
    Ok(100.0 * (1.0 - mean_balance_deviation(plan, instance)?).abs())
}

/// Mean Polsby-Popper score × 100.
pub fn compactness_score(plan: &Plan, instance: &Instance) -> Result<f64> {
    check_plan_shape(plan, instance)?;
    let graph = instance.graph();
    let mut total = 0.0;
    for (t, members) in plan.territories().iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Geometry(format!("territory {t} is empty")));
        }
        let stats = geometry::dissolve(&territory_polygons(graph, members)?)?;
        total += geometry::polsby_popper(stats)?;
    }
    Ok(100.0 * total / plan.k() as f64)
}

/// Planner-facing summary of a plan, optionally against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanningReport {
    pub compactness_score: Option<f64>,
    pub mean_distance: f64,
    pub max_distance: f64,
    pub balance_score: f64,
    /// Mean deviation exceeded 1, so the balance score folded back upward.
    pub balance_score_folded: bool,
    pub schools: usize,
    pub balanced: usize,
    pub under_enrolled: usize,
    pub overcrowded: usize,
    pub total_population: u64,
    pub displaced: Option<u64>,
}

impl PlanningReport {
    fn pct(part: usize, whole: usize) -> f64 {
        if whole == 0 {
            0.0
        } else {
            100.0 * part as f64 / whole as f64
        }
    }

    pub fn displaced_pct(&self) -> Option<f64> {
        self.displaced.map(|d| {
            if self.total_population == 0 {
                0.0
            } else {
                100.0 * d as f64 / self.total_population as f64
            }
        })
    }

    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let k = self.schools;
        let opt = |v: Option<f64>| v.map_or_else(|| "—".to_string(), |x| format!("{x:.4}"));
        let rows: Vec<(&str, String)> = vec![
            ("Compactness score", opt(self.compactness_score)),
            ("Mean distance traveled", format!("{:.4}", self.mean_distance)),
            ("Max distance traveled", format!("{:.4}", self.max_distance)),
            (
                "Balance score",
                format!(
                    "{:.4}{}",
                    self.balance_score,
                    if self.balance_score_folded { " (folded)" } else { "" }
                ),
            ),
            (
                "Number of balanced schools",
                format!("{} ({:.2}%)", self.balanced, Self::pct(self.balanced, k)),
            ),
            (
                "Number of under-enrolled schools",
                format!("{} ({:.2}%)", self.under_enrolled, Self::pct(self.under_enrolled, k)),
            ),
            (
                "Number of overcrowded schools",
                format!("{} ({:.2}%)", self.overcrowded, Self::pct(self.overcrowded, k)),
            ),
            (
                "Students displaced",
                match (self.displaced, self.displaced_pct()) {
                    (Some(d), Some(p)) => format!("{d} ({p:.2}%)"),
                    _ => "—".to_string(),
                },
            ),
        ];
        let width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (label, value) in rows {
            let pad = width - label.chars().count();
            let _ = writeln!(out, "{label}{}  {value}", " ".repeat(pad));
        }
        out
    }
}

pub fn planning_report(plan: &Plan, baseline: Option<&Plan>, instance: &Instance) -> Result<PlanningReport> {
    check_plan_shape(plan, instance)?;
    if let Some(b) = baseline {
        check_plan_shape(b, instance)?;
    }
    let graph = instance.graph();
    let level = instance.level();
    let mut weighted = 0.0;
    let mut total_population = 0u64;
    let mut max_distance: f64 = 0.0;
    for v in 0..instance.node_count() {
        let pop = graph.population(v, level);
        let d = instance.distance(v, plan.territory_of(v));
        weighted += pop as f64 * d;
        total_population += pop;
        if pop > 0 {
            max_distance = max_distance.max(d);
        }
    }
    let mean_distance = if total_population > 0 {
        weighted / total_population as f64
    } else {
        0.0
    };

    let (mut balanced, mut under, mut over) = (0, 0, 0);
    for (t, members) in plan.territories().iter().enumerate() {
        let p: u64 = members.iter().map(|&v| graph.population(v, level)).sum();
        let c: u64 = members.iter().map(|&v| graph.capacity(v, level)).sum();
        if c == 0 {
            return Err(Error::Evaluation(format!("territory {t} has zero capacity")));
        }
        let ratio = p as f64 / c as f64;
        if ratio < 0.8 {
            under += 1;
        } else if ratio > 1.2 {
            over += 1;
        } else {
            balanced += 1;
        }
    }
    let dev = mean_balance_deviation(plan, instance)?;
    let displaced = baseline.map(|b| {
        (0..instance.node_count())
            .filter(|&v| b.territory_of(v) != plan.territory_of(v))
            .map(|v| graph.population(v, level))
            .sum()
    });
    Ok(PlanningReport {
        compactness_score: if graph.has_geometry() {
            Some(compactness_score(plan, instance)?)
        } else {
            None
        },
        mean_distance,
        max_distance,
        balance_score: 100.0 * (1.0 - dev).abs(),
        balance_score_folded: dev > 1.0,
        schools: plan.k(),
        balanced,
        under_enrolled: under,
        overcrowded: over,
        total_population,
        displaced,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TerritoryStats {
    pub size: usize,
    pub population: u64,
    pub capacity: u64,
    pub area: f64,
    pub perimeter: f64,
    pub internal_edges: usize,
}

/// Record of one node move, enough to restore the previous state exactly.
#[derive(Debug, Clone, Copy)]
pub struct MoveUndo {
    node: NodeId,
    from: usize,
    to: usize,
    stats: [TerritoryStats; 2],
    balance: [f64; 2],
    compactness: [f64; 2],
}

/// A plan together with incrementally maintained per-territory aggregates.
#[derive(Debug, Clone)]
pub struct PlanState {
    plan: Plan,
    stats: Vec<TerritoryStats>,
    balance: Vec<f64>,
    compactness: Vec<f64>,
}

impl PlanState {
    pub fn new(plan: Plan, instance: &Instance) -> Result<Self> {
        check_plan_shape(&plan, instance)?;
        let graph = instance.graph();
        if instance.objective().compactness_mode == CompactnessMode::PolsbyPopper && !graph.has_geometry() {
            return Err(Error::Geometry(
                "Polsby-Popper compactness needs unit polygons".into(),
            ));
        }
        let level = instance.level();
        let mut stats = vec![TerritoryStats::default(); plan.k()];
        for v in 0..plan.node_count() {
            let s = &mut stats[plan.territory_of(v)];
            s.size += 1;
            s.population += graph.population(v, level);
            s.capacity += graph.capacity(v, level);
            s.area += graph.unit_area(v);
            s.perimeter += graph.unit_perimeter(v);
        }
        for &(u, v) in graph.edges() {
            let t = plan.territory_of(u);
            if t == plan.territory_of(v) {
                let idx = graph.neighbors(u).binary_search(&v).expect("symmetric adjacency");
                stats[t].perimeter -= 2.0 * graph.shared_lengths(u)[idx];
                stats[t].internal_edges += 1;
            }
        }
        let mut state = Self {
            balance: vec![0.0; plan.k()],
            compactness: vec![0.0; plan.k()],
            plan,
            stats,
        };
        for t in 0..state.plan.k() {
            state.refresh_terms(t, instance)?;
        }
        Ok(state)
    }

    fn refresh_terms(&mut self, t: usize, instance: &Instance) -> Result<()> {
        let s = self.stats[t];
        self.balance[t] = balance_dev(s.population, s.capacity, t)?;
        self.compactness[t] = match instance.objective().compactness_mode {
            CompactnessMode::PolsbyPopper => {
                if s.size == 0 {
                    return Err(Error::Evaluation(format!("territory {t} is empty")));
                }
                pp_term(s.area, s.perimeter)?
            }
            CompactnessMode::EdgeCutProxy => edge_cut_term(s.size, s.internal_edges),
        };
        Ok(())
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn into_plan(self) -> Plan {
        self.plan
    }

    pub fn stats(&self) -> &[TerritoryStats] {
        &self.stats
    }

    pub fn territory_balance(&self, t: usize) -> f64 {
        self.balance[t]
    }

    pub fn balance_term(&self) -> f64 {
        self.balance.iter().sum()
    }

    pub fn compactness_term(&self) -> f64 {
        self.compactness.iter().sum()
    }

    pub fn j(&self, instance: &Instance) -> f64 {
        let lambda = instance.objective().lambda;
        lambda * self.balance_term() + (1.0 - lambda) * self.compactness_term()
    }

    /// Moves `v` to territory `to`, updating aggregates. Contiguity is the
    /// caller's concern.
    pub fn move_node(&mut self, instance: &Instance, v: NodeId, to: usize) -> Result<MoveUndo> {
        let from = self.plan.territory_of(v);
        let undo = MoveUndo {
            node: v,
            from,
            to,
            stats: [self.stats[from], self.stats[to]],
            balance: [self.balance[from], self.balance[to]],
            compactness: [self.compactness[from], self.compactness[to]],
        };
        if from == to {
            return Ok(undo);
        }
        let graph = instance.graph();
        let level = instance.level();
        let (mut shared_from, mut shared_to) = (0.0, 0.0);
        let (mut edges_from, mut edges_to) = (0, 0);
        for (&w, &len) in graph.neighbors(v).iter().zip(graph.shared_lengths(v)) {
            let tw = self.plan.territory_of(w);
            if tw == from {
                shared_from += len;
                edges_from += 1;
            } else if tw == to {
                shared_to += len;
                edges_to += 1;
            }
        }
        let pop = graph.population(v, level);
        let cap = graph.capacity(v, level);
        let (area, peri) = (graph.unit_area(v), graph.unit_perimeter(v));
        {
            let s = &mut self.stats[from];
            s.size -= 1;
            s.population -= pop;
            s.capacity -= cap;
            s.area -= area;
            s.perimeter -= peri - 2.0 * shared_from;
            s.internal_edges -= edges_from;
        }
        {
            let s = &mut self.stats[to];
            s.size += 1;
            s.population += pop;
            s.capacity += cap;
            s.area += area;
            s.perimeter += peri - 2.0 * shared_to;
            s.internal_edges += edges_to;
        }
        self.plan.assign(v, to);
        let refreshed = self
            .refresh_terms(from, instance)
            .and_then(|_| self.refresh_terms(to, instance));
        if let Err(e) = refreshed {
            self.undo(undo);
            return Err(e);
        }
        Ok(undo)
    }

    pub fn undo(&mut self, undo: MoveUndo) {
        let MoveUndo { node, from, to, stats, balance, compactness } = undo;
        self.plan.assign(node, from);
        self.stats[from] = stats[0];
        self.stats[to] = stats[1];
        self.balance[from] = balance[0];
        self.balance[to] = balance[1];
        self.compactness[from] = compactness[0];
        self.compactness[to] = compactness[1];
    }

    /// Scores the state in the same shape as [`evaluate`].
    pub fn report(&self, instance: &Instance) -> ObjectiveReport {
        let per_territory = self
            .stats
            .iter()
            .map(|s| TerritoryReport {
                size: s.size,
                population: s.population,
                capacity: s.capacity,
                ratio: s.population as f64 / s.capacity as f64,
                polsby_popper: if instance.graph().has_geometry() && s.perimeter > 0.0 {
                    Some(4.0 * PI * s.area / (s.perimeter * s.perimeter))
                } else {
                    None
                },
                internal_edges: s.internal_edges,
            })
            .collect();
        ObjectiveReport {
            j: self.j(instance),
            balance_term: self.balance_term(),
            compactness_term: self.compactness_term(),
            per_territory,
        }
    }
}
