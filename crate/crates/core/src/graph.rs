//! Contiguity graph, plan representation and connectivity queries.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point, Polygon};

pub type NodeId = usize;

/// School level an instance is solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "ES")]
    Elementary,
    #[serde(rename = "MS")]
    Middle,
    #[serde(rename = "HS")]
    High,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Elementary => "ES",
            Level::Middle => "MS",
            Level::High => "HS",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "es" => Ok(Level::Elementary),
            "ms" => Ok(Level::Middle),
            "hs" => Ok(Level::High),
            other => Err(Error::Config(format!("unknown school level `{other}`"))),
        }
    }
}

/// One non-negative count per school level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    #[serde(rename = "ES", default)]
    pub es: u64,
    #[serde(rename = "MS", default)]
    pub ms: u64,
    #[serde(rename = "HS", default)]
    pub hs: u64,
}

impl LevelCounts {
    pub fn uniform(v: u64) -> Self {
        Self { es: v, ms: v, hs: v }
    }

    pub fn get(&self, level: Level) -> u64 {
        match level {
            Level::Elementary => self.es,
            Level::Middle => self.ms,
            Level::High => self.hs,
        }
    }

    pub fn set(&mut self, level: Level, v: u64) {
        match level {
            Level::Elementary => self.es = v,
            Level::Middle => self.ms = v,
            Level::High => self.hs = v,
        }
    }
}

/// Per-unit attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub population: LevelCounts,
    pub capacity: LevelCounts,
    pub centroid: Point,
    pub polygon: Option<Polygon>,
}

impl FeatureRecord {
    /// A unit backed by `polygon`; the centroid is derived from it.
    pub fn with_polygon(polygon: Polygon, population: LevelCounts, capacity: LevelCounts) -> Self {
        Self {
            population,
            capacity,
            centroid: polygon.centroid(),
            polygon: Some(polygon),
        }
    }

    /// A geometry-free unit at `centroid`.
    pub fn point(centroid: Point, population: LevelCounts, capacity: LevelCounts) -> Self {
        Self {
            population,
            capacity,
            centroid,
            polygon: None,
        }
    }
}

/// Immutable contiguity graph over spatial units.
#[derive(Debug, Clone)]
pub struct ContiguityGraph {
    neighbors: Vec<Vec<NodeId>>,
    /// Boundary length shared with each neighbour, parallel to `neighbors`.
    shared: Vec<Vec<f64>>,
    edges: Vec<(NodeId, NodeId)>,
    edge_weight: Vec<f64>,
    features: Vec<FeatureRecord>,
    unit_area: Vec<f64>,
    unit_perimeter: Vec<f64>,
    has_geometry: bool,
}

impl ContiguityGraph {
    /// Builds a graph from features and an undirected edge list.
    ///
    /// Duplicate edges are merged. Self-loops, out-of-range endpoints and
    /// disconnected graphs are rejected.
    pub fn new(features: Vec<FeatureRecord>, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(Error::InvalidInstance("graph has no nodes".into()));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidInstance(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidInstance(format!("self-loop on node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<(NodeId, NodeId)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for adj in &mut neighbors {
            adj.sort_unstable();
        }

        let has_geometry = features.iter().all(|f| f.polygon.is_some());
        let (unit_area, unit_perimeter, shared) = if has_geometry {
            let polys: Vec<&Polygon> = features.iter().map(|f| f.polygon.as_ref().unwrap()).collect();
            let shared = neighbors
                .iter()
                .enumerate()
                .map(|(u, adj)| {
                    adj.iter()
                        .map(|&v| geometry::shared_boundary_length(polys[u], polys[v]))
                        .collect()
                })
                .collect();
            (
                polys.iter().map(|p| p.area()).collect(),
                polys.iter().map(|p| p.perimeter()).collect(),
                shared,
            )
        } else {
            (
                vec![0.0; n],
                vec![0.0; n],
                neighbors.iter().map(|a| vec![0.0; a.len()]).collect(),
            )
        };

        let edge_weight = vec![1.0; edges.len()];
        let graph = Self {
            neighbors,
            shared,
            edges,
            edge_weight,
            features,
            unit_area,
            unit_perimeter,
            has_geometry,
        };
        let all: Vec<NodeId> = (0..n).collect();
        if !is_connected(&graph, &all) {
            return Err(Error::InvalidInstance("contiguity graph is disconnected".into()));
        }
        Ok(graph)
    }

    /// Replaces the per-edge weights ω (indexed like [`Self::edges`]).
    pub fn with_edge_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.edges.len() {
            return Err(Error::Contract(format!(
                "{} edge weights for {} edges",
                weights.len(),
                self.edges.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Contract("edge weights must be non-negative".into()));
        }
        self.edge_weight = weights;
        Ok(self)
    }

    /// `rows × cols` grid of unit squares with rook adjacency and empty
    /// features. Node `r * cols + c` covers `[c, c+1] × [r, r+1]`.
    pub fn rook_grid(rows: usize, cols: usize) -> Result<Self> {
        let mut features = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let poly = Polygon::rect(c as f64, r as f64, c as f64 + 1.0, r as f64 + 1.0)?;
                features.push(FeatureRecord::with_polygon(
                    poly,
                    LevelCounts::default(),
                    LevelCounts::default(),
                ));
            }
        }
        Self::new(features, &grid_edges(rows, cols))
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.neighbors[u]
    }

    /// Boundary lengths shared with each entry of [`Self::neighbors`].
    pub fn shared_lengths(&self, u: NodeId) -> &[f64] {
        &self.shared[u]
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weight
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &[FeatureRecord] {
        &self.features
    }

    pub fn feature(&self, u: NodeId) -> &FeatureRecord {
        &self.features[u]
    }

    pub fn has_geometry(&self) -> bool {
        self.has_geometry
    }

    pub fn unit_area(&self, u: NodeId) -> f64 {
        self.unit_area[u]
    }

    pub fn unit_perimeter(&self, u: NodeId) -> f64 {
        self.unit_perimeter[u]
    }

    pub fn population(&self, u: NodeId, level: Level) -> u64 {
        self.features[u].population.get(level)
    }

    pub fn capacity(&self, u: NodeId, level: Level) -> u64 {
        self.features[u].capacity.get(level)
    }

    pub fn are_adjacent(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }
}

/// Rook-adjacency edge list of a `rows × cols` grid in row-major numbering.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(NodeId, NodeId)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let u = r * cols + c;
            if c + 1 < cols {
                edges.push((u, u + 1));
            }
            if r + 1 < rows {
                edges.push((u, u + cols));
            }
        }
    }
    edges
}

/// Assignment of every node to one of K territories, each anchored by a
/// fixed center node. Territory `i` is the one containing `centers[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plan {
    assignment: Vec<usize>,
    centers: Vec<NodeId>,
}

impl Plan {
    /// Checks shape only: assignment labels `< K`, centers distinct and in
    /// range. Contiguity and center fixity are reported by [`validate_plan`].
    pub fn new(assignment: Vec<usize>, centers: Vec<NodeId>) -> Result<Self> {
        let n = assignment.len();
        let k = centers.len();
        if k == 0 {
            return Err(Error::InvalidPlan("plan has no centers".into()));
        }
        if let Some((v, &t)) = assignment.iter().enumerate().find(|(_, &t)| t >= k) {
            return Err(Error::InvalidPlan(format!(
                "node {v} assigned to territory {t}, only {k} exist"
            )));
        }
        let mut seen = BTreeSet::new();
        for &c in &centers {
            if c >= n {
                return Err(Error::InvalidPlan(format!("center {c} out of range")));
            }
            if !seen.insert(c) {
                return Err(Error::InvalidPlan(format!("duplicate center {c}")));
            }
        }
        Ok(Self { assignment, centers })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn centers(&self) -> &[NodeId] {
        &self.centers
    }

    pub fn territory_of(&self, v: NodeId) -> usize {
        self.assignment[v]
    }

    pub fn is_center(&self, v: NodeId) -> bool {
        self.centers.contains(&v)
    }

    /// Moves `v` to territory `t`. Does not check contiguity.
    pub fn assign(&mut self, v: NodeId, t: usize) {
        debug_assert!(t < self.k());
        self.assignment[v] = t;
    }

    /// Sorted member list of territory `t`.
    pub fn territory(&self, t: usize) -> Vec<NodeId> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == t)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn territories(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.k()];
        for (v, &t) in self.assignment.iter().enumerate() {
            out[t].push(v);
        }
        out
    }

    /// Applies a label permutation: territory `t` becomes `perm[t]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k() {
            return Err(Error::Contract("permutation length differs from K".into()));
        }
        let mut centers = vec![0; self.k()];
        for (t, &c) in self.centers.iter().enumerate() {
            centers[perm[t]] = c;
        }
        let assignment = self.assignment.iter().map(|&t| perm[t]).collect();
        Self::new(assignment, centers)
    }
}

fn check_range(graph: &ContiguityGraph, nodes: &[NodeId]) -> Result<()> {
    match nodes.iter().find(|&&v| v >= graph.node_count()) {
        Some(v) => Err(Error::Contract(format!("node {v} out of range"))),
        None => Ok(()),
    }
}

/// Nodes outside territory `i` adjacent to at least one node inside it.
pub fn neighbors_of_territory(plan: &Plan, graph: &ContiguityGraph, i: usize) -> Result<BTreeSet<NodeId>> {
    if i >= plan.k() {
        return Err(Error::Contract(format!(
            "territory {i} out of range (K = {})",
            plan.k()
        )));
    }
    let mut out = BTreeSet::new();
    for v in plan.territory(i) {
        for &w in graph.neighbors(v) {
            if plan.territory_of(w) != i {
                out.insert(w);
            }
        }
    }
    Ok(out)
}

/// BFS over the subgraph induced by `members`, which must flag exactly the
/// node set of interest. Returns the reached nodes in visit order.
fn bfs_within(graph: &ContiguityGraph, start: NodeId, members: &[bool], seen: &mut [bool]) -> Vec<NodeId> {
    let mut order = vec![start];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for &w in graph.neighbors(u) {
            if members[w] && !seen[w] {
                seen[w] = true;
                order.push(w);
                queue.push_back(w);
            }
        }
    }
    order
}

/// True iff `nodes` induces a connected subgraph. The empty set is not
/// connected; a singleton is. Out-of-range nodes yield `false`.
pub fn is_connected(graph: &ContiguityGraph, nodes: &[NodeId]) -> bool {
    if nodes.is_empty() || check_range(graph, nodes).is_err() {
        return false;
    }
    let n = graph.node_count();
    let mut members = vec![false; n];
    let mut distinct = 0;
    for &v in nodes {
        if !members[v] {
            members[v] = true;
            distinct += 1;
        }
    }
    let mut seen = vec![false; n];
    bfs_within(graph, nodes[0], &members, &mut seen).len() == distinct
}

/// Maximal connected components of the subgraph induced by `nodes`, each
/// sorted, ordered by smallest member.
pub fn connected_components(graph: &ContiguityGraph, nodes: &[NodeId]) -> Result<Vec<Vec<NodeId>>> {
    check_range(graph, nodes)?;
    let n = graph.node_count();
    let mut members = vec![false; n];
    for &v in nodes {
        members[v] = true;
    }
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for v in 0..n {
        if members[v] && !seen[v] {
            let mut comp = bfs_within(graph, v, &members, &mut seen);
            comp.sort_unstable();
            comps.push(comp);
        }
    }
    Ok(comps)
}

/// Number of edges whose endpoints lie in different territories.
pub fn cut_edges(plan: &Plan, graph: &ContiguityGraph) -> usize {
    graph
        .edges()
        .iter()
        .filter(|&&(u, v)| plan.territory_of(u) != plan.territory_of(v))
        .count()
}

/// Total weight ω of the cut edges.
pub fn cut_weight(plan: &Plan, graph: &ContiguityGraph) -> f64 {
    graph
        .edges()
        .iter()
        .zip(graph.edge_weights())
        .filter(|(&(u, v), _)| plan.territory_of(u) != plan.territory_of(v))
        .map(|(_, w)| w)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NodeCountMismatch { expected: usize, found: usize },
    CenterOutOfRange { territory: usize, center: NodeId },
    CenterMoved { territory: usize, center: NodeId, found_in: usize },
    EmptyTerritory { territory: usize },
    TerritoryDisconnected { territory: usize, components: usize },
    ZeroCapacity { territory: usize },
    BalanceBand { territory: usize, population: u64, capacity: u64 },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::BalanceBand { .. } | Violation::ZeroCapacity { .. } => Severity::Soft,
            _ => Severity::Hard,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeCountMismatch { expected, found } => {
                write!(f, "assignment covers {found} nodes, graph has {expected}")
            }
            Violation::CenterOutOfRange { territory, center } => {
                write!(f, "territory {territory}: center {center} out of range")
            }
            Violation::CenterMoved { territory, center, found_in } => write!(
                f,
                "center moved: center {center} of territory {territory} is assigned to {found_in}"
            ),
            Violation::EmptyTerritory { territory } => write!(f, "territory {territory} is empty"),
            Violation::TerritoryDisconnected { territory, components } => write!(
                f,
                "territory disconnected: territory {territory} has {components} components"
            ),
            Violation::ZeroCapacity { territory } => {
                write!(f, "territory {territory} has zero capacity")
            }
            Violation::BalanceBand { territory, population, capacity } => write!(
                f,
                "territory {territory} outside balance band: population {population}, capacity {capacity}"
            ),
        }
    }
}

/// Per-constraint report produced by [`validate_plan`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    /// No hard violations.
    pub fn is_feasible(&self) -> bool {
        self.hard().next().is_none()
    }

    /// No violations at all.
    pub fn all_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn hard(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity() == Severity::Hard)
    }

    pub fn soft(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity() == Severity::Soft)
    }
}

/// Checks center count and fixity, per-territory contiguity (hard) and the
/// `(1 ± tau)·capacity` balance band (soft).
pub fn validate_plan(plan: &Plan, graph: &ContiguityGraph, tau: f64, level: Level) -> Result<ValidationResult> {
    if plan.k() == 0 {
        return Err(Error::InvalidInstance("K = 0".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::Contract(format!("tau must be non-negative, got {tau}")));
    }
    let mut out = ValidationResult::default();
    let n = graph.node_count();
    if plan.node_count() != n {
        out.violations.push(Violation::NodeCountMismatch {
            expected: n,
            found: plan.node_count(),
        });
        return Ok(out);
    }
    for (t, &c) in plan.centers().iter().enumerate() {
        if c >= n {
            out.violations.push(Violation::CenterOutOfRange { territory: t, center: c });
        } else if plan.territory_of(c) != t {
            out.violations.push(Violation::CenterMoved {
                territory: t,
                center: c,
                found_in: plan.territory_of(c),
            });
        }
    }
    for (t, members) in plan.territories().iter().enumerate() {
        if members.is_empty() {
            out.violations.push(Violation::EmptyTerritory { territory: t });
            continue;
        }
        if !is_connected(graph, members) {
            let components = connected_components(graph, members)?.len();
            out.violations
                .push(Violation::TerritoryDisconnected { territory: t, components });
        }
        let population: u64 = members.iter().map(|&v| graph.population(v, level)).sum();
        let capacity: u64 = members.iter().map(|&v| graph.capacity(v, level)).sum();
        if capacity == 0 {
            out.violations.push(Violation::ZeroCapacity { territory: t });
        } else {
            let (p, c) = (population as f64, capacity as f64);
            if p < (1.0 - tau) * c || p > (1.0 + tau) * c {
                out.violations.push(Violation::BalanceBand {
                    territory: t,
                    population,
                    capacity,
                });
            }
        }
    }
    Ok(out)
}
