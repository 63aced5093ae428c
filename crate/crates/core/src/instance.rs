//! Problem instances: loading, adjacency derivation, center detection,
//! synthetic grid generation and plan files.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point, Polygon, EPS_GEO};
use crate::graph::{is_connected, ContiguityGraph, FeatureRecord, Level, LevelCounts, NodeId, Plan};
use crate::memetic::repair;
use crate::objective::ObjectiveConfig;
use crate::par::stream_rng;

/// Graph, center set, school level and objective: a complete problem.
#[derive(Debug, Clone)]
pub struct Instance {
    graph: ContiguityGraph,
    level: Level,
    centers: Vec<NodeId>,
    center_locations: Vec<Point>,
    objective: ObjectiveConfig,
    /// Row-major N×K centroid-to-center distances.
    distance: Vec<f64>,
}

impl Instance {
    /// Centers are located at their unit centroids.
    pub fn new(graph: ContiguityGraph, level: Level, centers: Vec<NodeId>, objective: ObjectiveConfig) -> Result<Self> {
        let locations = centers
            .iter()
            .map(|&c| {
                if c < graph.node_count() {
                    Ok(graph.feature(c).centroid)
                } else {
                    Err(Error::InvalidInstance(format!("center {c} out of range")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_center_locations(graph, level, centers, locations, objective)
    }

    pub fn with_center_locations(
        graph: ContiguityGraph,
        level: Level,
        centers: Vec<NodeId>,
        center_locations: Vec<Point>,
        objective: ObjectiveConfig,
    ) -> Result<Self> {
        objective.validate()?;
        if centers.is_empty() {
            return Err(Error::InvalidInstance(format!("no centers at level {level}")));
        }
        if center_locations.len() != centers.len() {
            return Err(Error::Contract("one location per center required".into()));
        }
        let n = graph.node_count();
        let mut seen = BTreeSet::new();
        for &c in &centers {
            if c >= n {
                return Err(Error::InvalidInstance(format!("center {c} out of range")));
            }
            if !seen.insert(c) {
                return Err(Error::InvalidInstance(format!("duplicate center {c}")));
            }
            if graph.capacity(c, level) == 0 {
                return Err(Error::InvalidInstance(format!(
                    "center {c} has no capacity at level {level}"
                )));
            }
        }
        let k = centers.len();
        let mut distance = Vec::with_capacity(n * k);
        for u in 0..n {
            let p = graph.feature(u).centroid;
            distance.extend(center_locations.iter().map(|c| p.distance(*c)));
        }
        Ok(Self {
            graph,
            level,
            centers,
            center_locations,
            objective,
            distance,
        })
    }

    pub fn graph(&self) -> &ContiguityGraph {
        &self.graph
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn centers(&self) -> &[NodeId] {
        &self.centers
    }

    pub fn center_locations(&self) -> &[Point] {
        &self.center_locations
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn objective(&self) -> &ObjectiveConfig {
        &self.objective
    }

    pub fn with_objective(mut self, objective: ObjectiveConfig) -> Result<Self> {
        objective.validate()?;
        self.objective = objective;
        Ok(self)
    }

    /// Distance from unit `u`'s centroid to the location of center `t`.
    pub fn distance(&self, u: NodeId, t: usize) -> f64 {
        self.distance[u * self.k() + t]
    }

    /// Index of `v` among the centers, if it is one.
    pub fn center_index(&self, v: NodeId) -> Option<usize> {
        self.centers.iter().position(|&c| c == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: usize,
    pub polygon: Polygon,
    #[serde(default)]
    pub population: LevelCounts,
    #[serde(default)]
    pub capacity: LevelCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchoolRecord {
    pub level: Level,
    pub location: Point,
    pub capacity: u64,
}

/// On-disk instance description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub units: Vec<UnitRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schools: Option<Vec<SchoolRecord>>,
}

/// Rook contiguity: an edge wherever two polygons share boundary of
/// positive length. Corner contact does not count.
pub fn derive_rook_adjacency(polygons: &[&Polygon]) -> Vec<(NodeId, NodeId)> {
    let boxes: Vec<_> = polygons.iter().map(|p| p.bbox()).collect();
    let mut order: Vec<usize> = (0..polygons.len()).collect();
    order.sort_by(|&a, &b| boxes[a].min.x.total_cmp(&boxes[b].min.x).then(a.cmp(&b)));
    let mut edges = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            if boxes[b].min.x > boxes[a].max.x + EPS_GEO {
                break;
            }
            if boxes[a].touches(&boxes[b]) && geometry::shared_boundary_length(polygons[a], polygons[b]) > EPS_GEO {
                edges.push((a.min(b), a.max(b)));
            }
        }
    }
    edges.sort_unstable();
    edges
}

impl InstanceFile {
    pub fn to_instance(&self, level: Level, objective: ObjectiveConfig) -> Result<Instance> {
        let n = self.units.len();
        let mut units: Vec<&UnitRecord> = self.units.iter().collect();
        units.sort_by_key(|u| u.id);
        if let Some((i, u)) = units.iter().enumerate().find(|(i, u)| u.id != *i) {
            return Err(Error::InvalidInstance(format!(
                "unit ids must be dense 0..{n}; position {i} holds id {}",
                u.id
            )));
        }

        let mut capacity: Vec<LevelCounts> = units.iter().map(|u| u.capacity).collect();
        let mut center_locations = None;
        let centers: Vec<NodeId> = match &self.schools {
            Some(schools) => {
                let mut centers = Vec::new();
                let mut locations = Vec::new();
                for c in capacity.iter_mut() {
                    c.set(level, 0);
                }
                for (s, school) in schools.iter().enumerate().filter(|(_, s)| s.level == level) {
                    let unit = units
                        .iter()
                        .position(|u| geometry::point_in_polygon(school.location, &u.polygon))
                        .ok_or_else(|| {
                            Error::InvalidInstance(format!(
                                "school {s} at ({}, {}) lies in no unit",
                                school.location.x, school.location.y
                            ))
                        })?;
                    if centers.contains(&unit) {
                        return Err(Error::InvalidInstance(format!(
                            "school {s} shares unit {unit} with another {level} school"
                        )));
                    }
                    capacity[unit].set(level, school.capacity);
                    centers.push(unit);
                    locations.push(school.location);
                }
                center_locations = Some(locations);
                centers
            }
            None => (0..n).filter(|&v| capacity[v].get(level) > 0).collect(),
        };
        if centers.is_empty() {
            return Err(Error::InvalidInstance(format!("no centers at level {level}")));
        }

        let edges: Vec<(NodeId, NodeId)> = match &self.adjacency {
            Some(adj) => adj.iter().map(|&[u, v]| (u, v)).collect(),
            None => {
                let polys: Vec<&Polygon> = units.iter().map(|u| &u.polygon).collect();
                derive_rook_adjacency(&polys)
            }
        };
        let features = units
            .iter()
            .zip(capacity)
            .map(|(u, cap)| FeatureRecord::with_polygon(u.polygon.clone(), u.population, cap))
            .collect();
        let graph = ContiguityGraph::new(features, &edges)?;
        match center_locations {
            Some(locs) => Instance::with_center_locations(graph, level, centers, locs, objective),
            None => Instance::new(graph, level, centers, objective),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn read_instance_file(path: impl AsRef<Path>) -> Result<InstanceFile> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_instance(path: impl AsRef<Path>, level: Level, objective: ObjectiveConfig) -> Result<Instance> {
    read_instance_file(path)?.to_instance(level, objective)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceProfile {
    #[default]
    Uniform,
    /// Population concentrated around a few random growth hotspots.
    ClusteredGrowth,
}

impl std::str::FromStr for BalanceProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "clustered-growth" | "clustered" => Ok(Self::ClusteredGrowth),
            other => Err(Error::Config(format!("unknown balance profile `{other}`"))),
        }
    }
}

/// Parameters of a synthetic rook-grid instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub seed: u64,
    pub profile: BalanceProfile,
    /// Explicit center nodes; sampled from the seed when `None`.
    pub centers: Option<Vec<NodeId>>,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, k: usize, seed: u64, profile: BalanceProfile) -> Self {
        Self {
            rows,
            cols,
            k,
            seed,
            profile,
            centers: None,
        }
    }

    pub fn with_centers(mut self, centers: Vec<NodeId>) -> Self {
        self.k = centers.len();
        self.centers = Some(centers);
        self
    }
}

/// Splits `total` into `weights.len()` integer shares proportional to the
/// weights, summing exactly to `total`.
fn proportional_split(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let mut shares: Vec<u64> = weights
        .iter()
        .map(|w| (total as f64 * w / sum).floor() as u64)
        .collect();
    let mut rest = total - shares.iter().sum::<u64>();
    let len = shares.len();
    let mut i = 0;
    while rest > 0 {
        shares[i % len] += 1;
        rest -= 1;
        i += 1;
    }
    shares
}

/// Builds the instance file for a synthetic grid. Adjacency is left implicit
/// so loading exercises rook derivation.
pub fn generate_grid_file(spec: &GridSpec) -> Result<InstanceFile> {
    let n = spec.rows * spec.cols;
    if n == 0 {
        return Err(Error::Config("grid must have at least one cell".into()));
    }
    if spec.k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if spec.k > n {
        return Err(Error::Config(format!("K = {} exceeds N = {n}", spec.k)));
    }
    let mut rng = stream_rng(spec.seed, 0);

    let centers: Vec<NodeId> = match &spec.centers {
        Some(c) => {
            let set: BTreeSet<_> = c.iter().copied().collect();
            if set.len() != c.len() || c.iter().any(|&v| v >= n) {
                return Err(Error::Config("explicit centers must be distinct nodes in range".into()));
            }
            c.clone()
        }
        None => {
            let mut c = sample(&mut rng, n, spec.k).into_vec();
            c.sort_unstable();
            c
        }
    };

    let hotspots: Vec<(f64, f64)> = match spec.profile {
        BalanceProfile::Uniform => Vec::new(),
        BalanceProfile::ClusteredGrowth => (0..2 + spec.k.min(2))
            .map(|_| (rng.gen_range(0.0..spec.cols as f64), rng.gen_range(0.0..spec.rows as f64)))
            .collect(),
    };
    let sigma = spec.rows.max(spec.cols) as f64 / 4.0;
    let mut population = Vec::with_capacity(n);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let counts = match spec.profile {
                BalanceProfile::Uniform => LevelCounts {
                    es: rng.gen_range(20..=60),
                    ms: rng.gen_range(10..=30),
                    hs: rng.gen_range(10..=30),
                },
                BalanceProfile::ClusteredGrowth => {
                    let heat: f64 = hotspots
                        .iter()
                        .map(|&(hx, hy)| {
                            let d2 = (x - hx).powi(2) + (y - hy).powi(2);
                            (-d2 / (2.0 * sigma * sigma)).exp()
                        })
                        .sum();
                    let base = |lo: u64, hi: u64, peak: f64, rng: &mut crate::par::Rng| {
                        rng.gen_range(lo..=hi) + (peak * heat).round() as u64
                    };
                    LevelCounts {
                        es: base(5, 15, 90.0, &mut rng),
                        ms: base(3, 8, 45.0, &mut rng),
                        hs: base(3, 8, 45.0, &mut rng),
                    }
                }
            };
            population.push(counts);
        }
    }

    let weights: Vec<f64> = (0..centers.len()).map(|_| 1.0 + rng.gen_range(-0.2..=0.2)).collect();
    let mut capacity = vec![LevelCounts::default(); n];
    for level in [Level::Elementary, Level::Middle, Level::High] {
        let total: u64 = population.iter().map(|p| p.get(level)).sum();
        for (&c, share) in centers.iter().zip(proportional_split(total, &weights)) {
            capacity[c].set(level, share);
        }
    }

    let mut units = Vec::with_capacity(n);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let id = r * spec.cols + c;
            units.push(UnitRecord {
                id,
                polygon: Polygon::rect(c as f64, r as f64, c as f64 + 1.0, r as f64 + 1.0)?,
                population: population[id],
                capacity: capacity[id],
            });
        }
    }
    Ok(InstanceFile {
        units,
        adjacency: None,
        schools: None,
    })
}

pub fn generate_grid_instance(
    rows: usize,
    cols: usize,
    k: usize,
    seed: u64,
    profile: BalanceProfile,
) -> Result<Instance> {
    generate_grid_file(&GridSpec::new(rows, cols, k, seed, profile))?
        .to_instance(Level::Elementary, ObjectiveConfig::default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFile {
    pub assignment: Vec<usize>,
    pub centers: Vec<NodeId>,
}

impl From<&Plan> for PlanFile {
    fn from(p: &Plan) -> Self {
        Self {
            assignment: p.assignment().to_vec(),
            centers: p.centers().to_vec(),
        }
    }
}

pub fn plan_to_json(plan: &Plan) -> Result<String> {
    Ok(serde_json::to_string(&PlanFile::from(plan))? + "\n")
}

pub fn save_plan(plan: &Plan, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, plan_to_json(plan)?)?;
    Ok(())
}

/// A plan read from disk, with the nodes repair had to reassign.
#[derive(Debug, Clone)]
pub struct LoadedPlan {
    pub plan: Plan,
    pub moved: Vec<NodeId>,
}

/// Checks a plan file against `instance` and repairs disconnected
/// territories.
pub fn plan_from_file(file: PlanFile, instance: &Instance) -> Result<LoadedPlan> {
    if file.assignment.len() != instance.node_count() {
        return Err(Error::InvalidPlan(format!(
            "plan covers {} nodes, instance has {}",
            file.assignment.len(),
            instance.node_count()
        )));
    }
    if file.centers.len() != instance.k() {
        return Err(Error::InvalidPlan(format!(
            "plan has {} territories, instance has {}",
            file.centers.len(),
            instance.k()
        )));
    }
    if file.centers != instance.centers() {
        return Err(Error::InvalidPlan("plan centers differ from instance centers".into()));
    }
    let mut plan = Plan::new(file.assignment, file.centers)?;
    for (t, &c) in plan.centers().iter().enumerate() {
        if plan.territory_of(c) != t {
            return Err(Error::InvalidPlan(format!(
                "center {c} is missing from its territory {t}"
            )));
        }
    }
    let broken = plan
        .territories()
        .iter()
        .any(|members| !is_connected(instance.graph(), members));
    let moved = if broken {
        let mut rng = stream_rng(0, 0);
        repair(&mut plan, instance, &mut rng)?
    } else {
        Vec::new()
    };
    Ok(LoadedPlan { plan, moved })
}

pub fn load_plan(path: impl AsRef<Path>, instance: &Instance) -> Result<LoadedPlan> {
    let text = fs::read_to_string(path)?;
    plan_from_file(serde_json::from_str(&text)?, instance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_plan;

    fn grid3_file() -> InstanceFile {
        let spec = GridSpec::new(3, 3, 2, 1, BalanceProfile::Uniform).with_centers(vec![0, 8]);
        generate_grid_file(&spec).unwrap()
    }

    #[test]
    fn derived_grid_adjacency() {
        let inst = grid3_file()
            .to_instance(Level::Elementary, ObjectiveConfig::default())
            .unwrap();
        assert_eq!(inst.graph().edge_count(), 12);
        assert_eq!(inst.centers(), &[0, 8]);
        let ten = generate_grid_instance(10, 10, 4, 3, BalanceProfile::Uniform).unwrap();
        assert_eq!(ten.graph().edge_count(), 180);
        assert_eq!(ten.k(), 4);
    }

    #[test]
    fn generator_cases() {
        let g = generate_grid_instance(3, 3, 2, 1, BalanceProfile::Uniform).unwrap();
        assert_eq!((g.node_count(), g.k(), g.graph().edge_count()), (9, 2, 12));
        let one = generate_grid_instance(1, 1, 1, 1, BalanceProfile::Uniform).unwrap();
        assert_eq!(one.centers(), &[0]);
        assert!(matches!(
            generate_grid_instance(2, 2, 5, 1, BalanceProfile::Uniform),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn generator_balances_totals() {
        let file = generate_grid_file(&GridSpec::new(6, 6, 3, 9, BalanceProfile::ClusteredGrowth)).unwrap();
        for level in [Level::Elementary, Level::Middle, Level::High] {
            let pop: u64 = file.units.iter().map(|u| u.population.get(level)).sum();
            let cap: u64 = file.units.iter().map(|u| u.capacity.get(level)).sum();
            assert_eq!(pop, cap);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = GridSpec::new(5, 4, 3, 42, BalanceProfile::ClusteredGrowth);
        let a = generate_grid_file(&spec).unwrap().to_json().unwrap();
        let b = generate_grid_file(&spec).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = generate_grid_file(&GridSpec { seed: 43, ..spec }).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn capacity_rule_for_centers() {
        let mut file = grid3_file();
        for u in &mut file.units {
            u.capacity = LevelCounts::default();
        }
        file.units[0].capacity.es = 10;
        file.units[8].capacity.es = 12;
        let inst = file.to_instance(Level::Elementary, ObjectiveConfig::default()).unwrap();
        assert_eq!(inst.centers(), &[0, 8]);
        assert!(matches!(
            file.to_instance(Level::High, ObjectiveConfig::default()),
            Err(Error::InvalidInstance(_))
        ));
    }

    #[test]
    fn schools_located_by_point_in_polygon() {
        let mut file = grid3_file();
        file.schools = Some(vec![
            SchoolRecord {
                level: Level::Elementary,
                location: Point::new(0.5, 0.5),
                capacity: 30,
            },
            SchoolRecord {
                level: Level::Elementary,
                location: Point::new(1.5, 2.5),
                capacity: 40,
            },
            SchoolRecord {
                level: Level::High,
                location: Point::new(2.5, 2.5),
                capacity: 40,
            },
        ]);
        let inst = file.to_instance(Level::Elementary, ObjectiveConfig::default()).unwrap();
        assert_eq!(inst.centers(), &[0, 7]);
        assert_eq!(inst.graph().capacity(7, Level::Elementary), 40);
        assert_eq!(inst.graph().capacity(8, Level::Elementary), 0);
        assert_eq!(inst.distance(0, 0), 0.0);

        file.schools.as_mut().unwrap()[1].location = Point::new(9.0, 9.0);
        let err = file.to_instance(Level::Elementary, ObjectiveConfig::default()).unwrap_err();
        assert!(err.to_string().contains("school 1"));
    }

    #[test]
    fn disconnected_file_rejected() {
        let mut file = grid3_file();
        file.adjacency = Some(vec![[0, 1], [1, 2]]);
        assert!(matches!(
            file.to_instance(Level::Elementary, ObjectiveConfig::default()),
            Err(Error::InvalidInstance(_))
        ));
    }

    #[test]
    fn instance_file_round_trip() {
        let file = grid3_file();
        let json = file.to_json().unwrap();
        let back: InstanceFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn plan_round_trip_and_repair() {
        let inst = grid3_file()
            .to_instance(Level::Elementary, ObjectiveConfig::default())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        let plan = Plan::new(vec![0, 0, 0, 0, 0, 1, 1, 1, 1], vec![0, 8]).unwrap();
        save_plan(&plan, &path).unwrap();
        let back = load_plan(&path, &inst).unwrap();
        assert_eq!(back.plan, plan);
        assert!(back.moved.is_empty());

        // node 6 is cut off from territory 0
        let broken = PlanFile {
            assignment: vec![0, 0, 0, 1, 1, 1, 0, 1, 1],
            centers: vec![0, 8],
        };
        let fixed = plan_from_file(broken, &inst).unwrap();
        assert_eq!(fixed.moved, vec![6]);
        let v = validate_plan(&fixed.plan, inst.graph(), 10.0, Level::Elementary).unwrap();
        assert!(v.is_feasible());

        let wrong_k = PlanFile {
            assignment: vec![0; 9],
            centers: vec![0],
        };
        assert!(plan_from_file(wrong_k, &inst).is_err());
        let short = PlanFile {
            assignment: vec![0; 8],
            centers: vec![0, 8],
        };
        assert!(plan_from_file(short, &inst).is_err());
        let center_out = PlanFile {
            assignment: vec![1, 0, 0, 0, 0, 1, 1, 1, 1],
            centers: vec![0, 8],
        };
        assert!(plan_from_file(center_out, &inst).is_err());
    }
}
