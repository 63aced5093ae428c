//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Thresholds and tolerances are pinned as constants below.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use districting::geometry::{dissolve, polsby_popper, Polygon};
use districting::graph::{cut_edges, Level, Plan};
use districting::init::{guided_growth, init_population, seed_plan};
use districting::instance::{generate_grid_file, load_instance, save_plan, BalanceProfile, GridSpec};
use districting::memetic::{spatial_run, MemeticConfig};
use districting::objective::{evaluate, ObjectiveConfig, PlanState};
use districting::oracle::feasible_plans;
use districting::par::{stream_rng, Parallelism};
use districting::search::{
    apply_flip_if_accepted, improve_member, propose_flip, removal_keeps_connected, run_baseline, run_chain,
    AcceptanceRule, Baseline, FlipProposal, Sampler, SearchConfig,
};
use districting::Instance;
use serde_json::Value;

const TRIALS: usize = 25;
const ORACLE_J_TOL: f64 = 1e-12;
const ORACLE_MIN_HITS: usize = 22;
const ORACLE_TRIAL_LIMIT: Duration = Duration::from_secs(5);
const FEASIBILITY_MIN_MOVES: usize = 100_000;
const GEOMETRY_TOL: f64 = 1e-9;
const SCALE_TOL: f64 = 1e-12;
const GREEDY_MIN_FLIPS: usize = 10_000;
const ORDERING_MIN_STDERRS: f64 = 3.0;
const ORDERING_TIME_LIMIT: Duration = Duration::from_secs(600);
const COVERAGE_STEPS: usize = 10_000;

/// Iterations of the memetic runs on the 10x10 instance.
const GRID10_ITERS: usize = 1000;
/// Outer iterations of the warm/cold comparison.
const WARM_START_ITERS: usize = 25;
/// Flip budget of the single-solution baselines on the 10x10 instance.
const BASELINE_BUDGET: usize = 10_000;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_districting")
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(bin()).args(args).output().expect("binary runs");
    let stdout = String::from_utf8(out.stdout).expect("utf-8 stdout");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    (out.status.code().unwrap_or(-1), stdout)
}

fn workdir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir")).path()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes an instance through `districting generate` and returns its path.
fn generate(name: &str, args: &[&str]) -> PathBuf {
    let path = workdir().join(name);
    if !path.exists() {
        let mut full = vec!["generate", "--out", path_str(&path)];
        full.extend_from_slice(args);
        let (code, _) = cli(&full);
        assert_eq!(code, 0, "generate {name}");
    }
    path
}

fn load(path: &Path) -> Instance {
    load_instance(path, Level::Elementary, ObjectiveConfig::default()).expect("instance loads")
}

fn grid3_path() -> PathBuf {
    generate("grid3.json", &["--rows", "3", "--cols", "3", "--k", "2", "--seed", "1", "--centers", "0,8"])
}

fn grid10_path() -> PathBuf {
    generate(
        "grid10.json",
        &["--rows", "10", "--cols", "10", "--k", "4", "--seed", "7", "--profile", "clustered-growth"],
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Runs `districting solve` and returns the per-trial J values.
fn solve_js(tag: &str, instance: &Path, extra: &[&str]) -> Vec<f64> {
    let out = workdir().join(tag);
    let mut args = vec![
        "solve",
        "--instance",
        path_str(instance),
        "--trials",
        "25",
        "--out",
        path_str(&out),
    ];
    args.extend_from_slice(extra);
    let (code, _) = cli(&args);
    assert_eq!(code, 0, "solve {tag}");
    let summary = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with("_summary.json"))
        .expect("summary written");
    let v: Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    v["per_trial"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["J"].as_f64().unwrap())
        .collect()
}

fn spatial_grid10(local_search: bool, recombination: bool) -> Vec<f64> {
    let inst = load(&grid10_path());
    let config = MemeticConfig {
        np: 10,
        iter_max: GRID10_ITERS,
        local_search,
        recombination,
        ..MemeticConfig::default()
    };
    (0..TRIALS as u64)
        .map(|s| spatial_run(&inst, &config, s, None).unwrap().best_j)
        .collect()
}

fn spatial_both() -> &'static [f64] {
    static BOTH: OnceLock<Vec<f64>> = OnceLock::new();
    BOTH.get_or_init(|| {
        let iters = GRID10_ITERS.to_string();
        solve_js("spatial10", &grid10_path(), &["--algo", "spatial", "--np", "10", "--iters", &iters])
    })
}

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn c1_oracle() -> Outcome {
    let path = grid3_path();
    let (code, out) = cli(&["oracle", "--instance", path_str(&path)]);
    assert_eq!(code, 0);
    let oracle: Value = serde_json::from_str(&out).unwrap();
    let j_star = oracle["J_star"].as_f64().unwrap();
    let inst = load(&path);
    let config = MemeticConfig {
        np: 10,
        iter_max: 200,
        ..MemeticConfig::default()
    };
    let mut hits = 0;
    let mut slowest = Duration::ZERO;
    for seed in 0..TRIALS as u64 {
        let t = Instant::now();
        let r = spatial_run(&inst, &config, seed, None).unwrap();
        slowest = slowest.max(t.elapsed());
        if (r.best_j - j_star).abs() <= ORACLE_J_TOL {
            hits += 1;
        }
    }
    (
        hits >= ORACLE_MIN_HITS && slowest < ORACLE_TRIAL_LIMIT,
        format!(
            "J* = {j_star:.6} over {} feasible plans; {hits}/{TRIALS} trials hit J* (need {ORACLE_MIN_HITS}); slowest trial {:.0} ms",
            oracle["feasible_count"],
            slowest.as_secs_f64() * 1e3
        ),
    )
}

fn c2_feasibility() -> Outcome {
    let checked = SearchConfig {
        check_invariants: true,
        max_iters: 5_000,
        chain_steps: 5_000,
        ..SearchConfig::default()
    };
    let mut moves = 0usize;
    let mut seed = 0u64;
    while moves < FEASIBILITY_MIN_MOVES {
        let profile = if seed.is_multiple_of(2) { BalanceProfile::Uniform } else { BalanceProfile::ClusteredGrowth };
        let k = 2 + (seed % 5) as usize;
        let inst = generate_grid_file(&GridSpec::new(8, 8, k, seed, profile))
            .unwrap()
            .to_instance(Level::Elementary, ObjectiveConfig::default())
            .unwrap();
        let config = MemeticConfig {
            np: 10,
            iter_max: 300,
            search: checked,
            ..MemeticConfig::default()
        };
        // any hard violation surfaces as an internal error
        let r = spatial_run(&inst, &config, seed, None).expect("memetic run stays feasible");
        moves += r.moves.flips + r.moves.recombinations + r.moves.repairs;
        let start = guided_growth(seed_plan(&inst), &inst, &mut stream_rng(seed, 1)).unwrap();
        for algo in [Baseline::Shc, Baseline::Sa, Baseline::Ts] {
            moves += run_baseline(&inst, algo, &checked, &mut stream_rng(seed, 0), start.clone())
                .expect("baseline stays feasible")
                .accepted;
        }
        for sampler in [Sampler::Baa, Sampler::Bcaa, Sampler::Aio] {
            moves += run_chain(&inst, sampler, &checked, &mut stream_rng(seed, 0), start.clone())
                .expect("chain stays feasible")
                .summary
                .accepted;
        }
        seed += 1;
    }
    (true, format!("{moves} accepted moves on {seed} random 8x8 instances, 0 hard violations"))
}

fn c3_geometry() -> Outcome {
    let square = Polygon::rect(0.0, 0.0, 1.0, 1.0).unwrap();
    let pp = polsby_popper(dissolve(&[&square]).unwrap()).unwrap();
    let pp_err = (pp - std::f64::consts::FRAC_PI_4).abs();

    let inst = load(&grid10_path());
    let graph = inst.graph();
    let mut worst_perimeter = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut territories = 0;
    for seed in 0..200 {
        let plan = guided_growth(seed_plan(&inst), &inst, &mut stream_rng(seed, 0)).unwrap();
        for nodes in plan.territories() {
            let polys: Vec<&Polygon> = nodes.iter().map(|&v| graph.feature(v).polygon.as_ref().unwrap()).collect();
            let shape = dissolve(&polys).unwrap();
            let set: BTreeSet<usize> = nodes.iter().copied().collect();
            let internal = graph.edges().iter().filter(|(u, v)| set.contains(u) && set.contains(v)).count();
            let analytic = 4.0 * nodes.len() as f64 - 2.0 * internal as f64;
            worst_perimeter = worst_perimeter.max((shape.perimeter - analytic).abs());

            let scaled: Vec<Polygon> = polys.iter().map(|p| p.scaled(3.7)).collect();
            let scaled_refs: Vec<&Polygon> = scaled.iter().collect();
            let a = polsby_popper(shape).unwrap();
            let b = polsby_popper(dissolve(&scaled_refs).unwrap()).unwrap();
            worst_scale = worst_scale.max((a - b).abs());
            territories += 1;
        }
    }
    (
        pp_err <= GEOMETRY_TOL && worst_perimeter <= GEOMETRY_TOL && worst_scale <= SCALE_TOL,
        format!(
            "|PP(square) - π/4| = {pp_err:.1e}; {territories} grid territories: max perimeter error {worst_perimeter:.1e}, max scale drift {worst_scale:.1e}"
        ),
    )
}

fn c4_edges() -> Outcome {
    let path = generate("grid10_uniform.json", &["--rows", "10", "--cols", "10", "--k", "4", "--seed", "2"]);
    let inst = load(&path);
    let edges = inst.graph().edge_count();
    // cut counting only needs the graph, so any node per quadrant can anchor it
    let quadrant = |v: usize| (v / 10 >= 5) as usize * 2 + (v % 10 >= 5) as usize;
    let assignment: Vec<usize> = (0..100).map(quadrant).collect();
    let centers: Vec<usize> = (0..4).map(|q| (0..100).find(|&v| quadrant(v) == q).unwrap()).collect();
    let plan = Plan::new(assignment, centers).unwrap();
    let cut = cut_edges(&plan, inst.graph());
    (edges == 180 && cut == 20, format!("{edges} edges (want 180); quadrant cut {cut} (want 20)"))
}

fn c5_greedy() -> Outcome {
    let inst = generate_grid_file(&GridSpec::new(16, 16, 6, 5, BalanceProfile::ClusteredGrowth))
        .unwrap()
        .to_instance(Level::Elementary, ObjectiveConfig::default())
        .unwrap();
    let greedy = SearchConfig {
        p_r: 0.0,
        ..SearchConfig::default()
    };
    let mut flips = 0usize;
    let mut violations = 0usize;
    let mut starts = 0u64;
    while flips < GREEDY_MIN_FLIPS {
        let mut pop = init_population(&inst, 1, starts, None, Parallelism::Sequential).unwrap();
        let mut rng = stream_rng(starts, 1);
        let member = &mut pop.members[0];
        let mut j = member.j(&inst);
        while improve_member(member, &inst, &greedy, &mut rng).unwrap() {
            let next = member.j(&inst);
            if next > j {
                violations += 1;
            }
            j = next;
            flips += 1;
        }
        starts += 1;
    }

    let mut aio_accepted = 0usize;
    let mut aio_violations = 0usize;
    let mut chains = 0u64;
    let aio = SearchConfig {
        chain_steps: 20_000,
        ..SearchConfig::default()
    };
    while aio_accepted < GREEDY_MIN_FLIPS && chains < 200 {
        let start = guided_growth(seed_plan(&inst), &inst, &mut stream_rng(chains, 7)).unwrap();
        let r = run_chain(&inst, Sampler::Aio, &aio, &mut stream_rng(chains, 0), start).unwrap();
        aio_accepted += r.summary.accepted;
        aio_violations += r.search.trace.windows(2).filter(|w| w[1].j > w[0].j).count();
        chains += 1;
    }
    (
        violations == 0 && aio_violations == 0 && aio_accepted >= GREEDY_MIN_FLIPS,
        format!(
            "greedy: {flips} flips from {starts} starts, {violations} increases; AIO: {aio_accepted} accepted over {chains} chains, {aio_violations} increases"
        ),
    )
}

fn c6_ordering() -> Outcome {
    let t = Instant::now();
    let spatial = spatial_both();
    let budget = BASELINE_BUDGET.to_string();
    let shc = solve_js("shc10", &grid10_path(), &["--algo", "shc", "--iters", &budget]);
    let baa = solve_js("baa10", &grid10_path(), &["--algo", "baa", "--chain-steps", &budget]);
    let elapsed = t.elapsed();
    let (ms, mh, mb) = (mean(spatial), mean(&shc), mean(&baa));
    let se = (sample_var(spatial) / TRIALS as f64 + sample_var(&baa) / TRIALS as f64).sqrt();
    let gap = (mb - ms) / se;
    (
        ms <= mh && ms <= mb && gap >= ORDERING_MIN_STDERRS && elapsed < ORDERING_TIME_LIMIT,
        format!(
            "mean J: SPATIAL {ms:.4}, SHC {mh:.4}, BAA {mb:.4}; BAA - SPATIAL = {gap:.1} pooled SE (need {ORDERING_MIN_STDERRS}); {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c7_warm_start() -> Outcome {
    // centers sit inside the four 4x4 quadrants; the hand-made plan is the
    // quadrant split itself
    let path = generate(
        "grid8_warm.json",
        &["--rows", "8", "--cols", "8", "--k", "4", "--seed", "11", "--centers", "9,14,49,54"],
    );
    let inst = load(&path);
    let quadrants: Vec<usize> = (0..64).map(|v| (v / 8 >= 4) as usize * 2 + (v % 8 >= 4) as usize).collect();
    let hand = Plan::new(quadrants, vec![9, 14, 49, 54]).unwrap();
    let hand_report = evaluate(&hand, &inst).unwrap();
    let plan_path = workdir().join("grid8_quadrants.plan.json");
    save_plan(&hand, &plan_path).unwrap();

    // both arms reach the same plan given enough iterations; a short budget
    // shows which start is ahead
    let iters = WARM_START_ITERS.to_string();
    let common = ["--np", "10", "--iters", iters.as_str()];
    let cold = solve_js("cold8", &path, &common);
    let mut warm_args = common.to_vec();
    warm_args.extend_from_slice(&["--warm-start", path_str(&plan_path)]);
    let warm = solve_js("warm8", &path, &warm_args);
    let (mw, mc) = (mean(&warm), mean(&cold));
    (
        mw <= mc,
        format!(
            "hand plan J {:.4} (mean balance deviation {:.3}); after {WARM_START_ITERS} iterations mean J warm {mw:.4} vs cold {mc:.4}",
            hand_report.j,
            hand_report.balance_term / 4.0
        ),
    )
}

fn c8_ablation() -> Outcome {
    let both = mean(spatial_both());
    let ls = mean(&spatial_grid10(true, false));
    let rc = mean(&spatial_grid10(false, true));
    (
        both <= ls && both <= rc,
        format!("mean J: both {both:.4}, local-search only {ls:.4}, recombination only {rc:.4}"),
    )
}

fn flip_neighbours(plan: &Plan, inst: &Instance) -> Vec<Plan> {
    let mut out = Vec::new();
    for v in 0..plan.node_count() {
        if plan.is_center(v) || !removal_keeps_connected(plan, inst.graph(), v) {
            continue;
        }
        let targets: BTreeSet<usize> = inst
            .graph()
            .neighbors(v)
            .iter()
            .map(|&w| plan.territory_of(w))
            .filter(|&t| t != plan.territory_of(v))
            .collect();
        for to in targets {
            let mut next = plan.clone();
            next.assign(v, to);
            out.push(next);
        }
    }
    out
}

fn c9_reachability() -> Outcome {
    let inst = load(&grid3_path());
    let all = feasible_plans(&inst).unwrap();
    let index: HashMap<&Plan, usize> = all.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut seen = vec![false; all.len()];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        for next in flip_neighbours(&all[i], &inst) {
            if let Some(&j) = index.get(&next) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let reached = seen.iter().filter(|&&s| s).count();

    let open = SearchConfig {
        epsilon_band: f64::INFINITY,
        chain_steps: COVERAGE_STEPS,
        ..SearchConfig::default()
    };
    let start = guided_growth(seed_plan(&inst), &inst, &mut stream_rng(0, 1)).unwrap();
    let chain = run_chain(&inst, Sampler::Baa, &open, &mut stream_rng(0, 0), start.clone()).unwrap();
    // replay the same walk and collect the actual plans
    let mut state = PlanState::new(start, &inst).unwrap();
    let mut rng = stream_rng(0, 0);
    let mut visited: BTreeSet<Vec<usize>> = BTreeSet::from([state.plan().assignment().to_vec()]);
    let rule = AcceptanceRule::BalancedBand { band: f64::INFINITY };
    for _ in 0..COVERAGE_STEPS {
        let p: FlipProposal = propose_flip(state.plan(), inst.graph(), &mut rng).unwrap();
        if apply_flip_if_accepted(&mut state, p, &inst, rule, &mut rng).unwrap().accepted() {
            visited.insert(state.plan().assignment().to_vec());
        }
    }
    let feasible: BTreeSet<Vec<usize>> = all.iter().map(|p| p.assignment().to_vec()).collect();
    (
        reached == all.len() && visited == feasible && chain.summary.visited_states == all.len(),
        format!(
            "flip graph: {reached}/{} states reachable; BAA(band ∞) visited {}/{} within {COVERAGE_STEPS} steps",
            all.len(),
            visited.len(),
            feasible.len()
        ),
    )
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c10_determinism() -> Outcome {
    let mut compared = 0;
    let mut differing = Vec::new();
    let grid3 = grid3_path();
    for round in 0..2 {
        let out = workdir().join(format!("det{round}"));
        let gen = out.join("g.json");
        let (c, _) = cli(&["generate", "--rows", "6", "--cols", "6", "--k", "3", "--seed", "4", "--out", path_str(&gen)]);
        assert_eq!(c, 0);
        for algo in ["spatial", "shc", "sa", "ts", "baa", "bcaa", "aio"] {
            let (c, _) = cli(&[
                "solve", "--instance", path_str(&gen), "--algo", algo, "--trials", "2", "--seed", "3",
                "--iters", "100", "--chain-steps", "500", "--out", path_str(&out.join("runs")),
            ]);
            assert_eq!(c, 0);
        }
        let plan = out.join("runs").join("spatial_seed3_trial0.plan.json");
        let base = out.join("runs").join("shc_seed3_trial0.plan.json");
        let (_, eval) = cli(&[
            "evaluate", "--plan", path_str(&plan), "--instance", path_str(&gen), "--baseline", path_str(&base),
        ]);
        fs::write(out.join("evaluate.txt"), eval).unwrap();
        let (_, oracle) = cli(&["oracle", "--instance", path_str(&grid3)]);
        fs::write(out.join("oracle.txt"), oracle).unwrap();
    }
    let a = workdir().join("det0");
    let b = workdir().join("det1");
    for sub in [".", "runs"] {
        let (fa, fb) = (dir_files(&a.join(sub)), dir_files(&b.join(sub)));
        for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
            // memetic traces carry wall-clock timings; everything else must match
            if na.ends_with(".trace.csv") && na.starts_with("spatial") {
                continue;
            }
            compared += 1;
            if na != nb || ba != bb {
                differing.push(na.clone());
            }
        }
        if fa.len() != fb.len() {
            differing.push(format!("{sub}: file count"));
        }
    }
    (
        differing.is_empty() && compared > 0,
        format!("{compared} artifacts compared byte-for-byte; differing: {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle optimality on grid3", c1_oracle),
        ("hard feasibility across accepted moves", c2_feasibility),
        ("geometry exactness", c3_geometry),
        ("10x10 edge count and quadrant cut", c4_edges),
        ("greedy and AIO monotonicity", c5_greedy),
        ("relative ordering vs SHC and BAA", c6_ordering),
        ("warm start vs cold start", c7_warm_start),
        ("operator ablation", c8_ablation),
        ("flip-graph reachability and coverage", c9_reachability),
        ("determinism of command outputs", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {:>2}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || id.ends_with(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(outcome) => outcome,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += !pass as usize;
        println!(
            "{id} [{}] {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
