//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Thresholds are fixed; a criterion that misses its threshold prints FAIL.
//! The process exits nonzero only when the set of failing criteria differs
//! from `KNOWN_FAILURES`, so a regression and an unexpected fix are both loud.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kamlab::config::{parse_config, LoadedConfig};
use kamlab_core::barrier::{
    analyze_aubry, check_triangle, peierls_barrier, phi_h_slack, AubryAnalysis, AubryConfig,
    BarrierField, DiagonalKind,
};
use kamlab_core::critical::{
    alpha_function, midpoint_convexity_defect, subsolution_test, CriticalKernel, Feasibility,
};
use kamlab_core::minplus::{m_step_costs, min_mean_cycle, MeanCycleMethod, Orientation};
use kamlab_core::model::SpatialMode;
use kamlab_core::oracle::{enumerate_path_costs, kernel_min_mean_cycle};
use kamlab_core::weakkam::{
    barrier_is_solution_check, build_backward_solution, check_dominated, domination_defect,
    extract_calibrated_path, fixed_point_residual, min_combine, Direction, ValueFunction,
};
use kamlab_core::{LagrangianSpec, Lattice, LatticeSpec, NodeId, StepKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that currently miss their threshold; see the README.
const KNOWN_FAILURES: &[&str] = &["free-particle", "time-periodic-drift"];

const FREE: &str =
    "[model]\nfamily = \"free\"\n[lattice]\nn = 64\nt = 16\n[tolerances]\nepsilon_class = 0.05\n";
const PENDULUM: &str = "[model]\nfamily = \"mechanical\"\npotential = [{ wave = [0], cos = 0.5 }, { wave = [1], cos = 0.5 }]\n[lattice]\nn = 128\nt = 16\n";
const DRIFT: &str =
    "[model]\nfamily = \"drift\"\ndrift = [[{ freq = 1, sin = 1.0 }]]\n[lattice]\nn = 64\nt = 32\n";
const TWO_WELL: &str = "[model]\nfamily = \"mechanical\"\npotential = [{ wave = [0], cos = 0.5 }, { wave = [2], cos = 0.5 }]\n[lattice]\nn = 64\nt = 16\n";

struct Setup {
    name: &'static str,
    loaded: LoadedConfig,
    ck: CriticalKernel,
    aubry: AubryAnalysis,
    setup_secs: f64,
}

impl Setup {
    fn new(name: &'static str, toml: &str) -> Setup {
        let start = Instant::now();
        let loaded = parse_config(toml).expect("acceptance config parses");
        let lattice = Lattice::build(loaded.config.lattice_spec().unwrap()).unwrap();
        let kernel0 = StepKernel::build(&loaded.config.model, &lattice, 0.0, None).unwrap();
        let ck =
            CriticalKernel::new(&loaded.config.model, &kernel0, MeanCycleMethod::Karp).unwrap();
        let tol = &loaded.config.tolerances;
        let cfg = AubryConfig {
            running: loaded.config.running_params(),
            tol_c: tol.tol_c,
            epsilon_aubry: tol.epsilon_aubry,
            epsilon_class: tol.epsilon_class,
        };
        let aubry = analyze_aubry(&ck, &cfg).unwrap();
        Setup {
            name,
            loaded,
            ck,
            aubry,
            setup_secs: start.elapsed().as_secs_f64(),
        }
    }

    fn lattice(&self) -> &Lattice {
        self.ck.lattice()
    }

    fn kernel(&self) -> &StepKernel {
        self.ck.kernel()
    }

    fn fields(&self, sources: &[NodeId], orientation: Orientation) -> Vec<BarrierField> {
        let params = self.loaded.config.running_params();
        peierls_barrier(
            &self.ck,
            sources,
            &params,
            orientation,
            self.loaded.config.tolerances.tol_c,
        )
        .unwrap()
    }

    fn random_nodes(&self, count: usize, seed: u64) -> Vec<NodeId> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| NodeId(rng.gen_range(0..self.lattice().node_count()) as u32))
            .collect()
    }

    fn eps_class(&self) -> f64 {
        self.aubry.structure.epsilon_class
    }

    fn backward(&self, boundary: &[(NodeId, f64)]) -> ValueFunction {
        let nodes: Vec<NodeId> = boundary.iter().map(|b| b.0).collect();
        build_backward_solution(
            boundary,
            &self.fields(&nodes, Orientation::From),
            self.eps_class(),
        )
        .unwrap()
    }

    /// Nodes whose cell is within `cells` of an Aubry node on the same layer.
    fn near_aubry(&self, node: NodeId, cells: usize) -> bool {
        let lat = self.lattice();
        self.aubry
            .structure
            .aubry_nodes
            .iter()
            .filter(|a| lat.layer(**a) == lat.layer(node))
            .any(|a| lat.cell_distance(lat.cell(*a), lat.cell(node)) <= cells)
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().map(f64::abs).fold(0.0, f64::max)
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let potential = (0..3)
        .map(|k| SpatialMode {
            wave: vec![k],
            cos: rng.gen_range(-1.0..1.0),
            sin: rng.gen_range(-1.0..1.0),
        })
        .collect();
    let spec = LagrangianSpec::mechanical(1, potential);
    // the simple-cycle enumeration is exponential in the fan-out, so keep it at three slots
    let lat = Lattice::build(LatticeSpec::new(6, 4, 0.6, 1).unwrap()).unwrap();
    let kernel = StepKernel::build(&spec, &lat, 0.0, None).unwrap();
    let mut mismatches = 0;
    for source in lat.nodes() {
        for m in 1..=8 {
            if m_step_costs(&kernel, source, m).unwrap().costs.to_vec()
                != enumerate_path_costs(&kernel, source, m)
            {
                mismatches += 1;
            }
        }
    }
    let (brute, _) = kernel_min_mean_cycle(&kernel).unwrap();
    let karp = min_mean_cycle(&kernel, MeanCycleMethod::Karp, None)
        .unwrap()
        .mean;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && karp == brute && secs < 10.0,
        format!("{mismatches} path-cost mismatches over 24 sources x m<=8, karp {karp} vs brute {brute}, {secs:.2} s"),
    )
}

fn free_particle(free: &Setup) -> Verdict {
    let start = Instant::now();
    let lat = free.lattice();
    let c = free.ck.c_est();
    let diag = &free.aubry.diagonal;
    let lower_bounds = diag
        .kinds
        .iter()
        .filter(|k| **k == DiagonalKind::LowerBound)
        .count();
    let h_diag = max_abs(diag.values.iter().copied());
    let all = free.aubry.structure.aubry_nodes.len() == lat.node_count();
    let classes = free.aubry.structure.classes.len();
    let u = free.backward(&[(lat.node(0, 0), 0.0)]);
    let u_max = max_abs(u.values.iter().copied());
    let secs = free.setup_secs + start.elapsed().as_secs_f64();
    verdict(
        c.abs() <= 1e-9 && h_diag <= 1e-9 && lower_bounds == 0 && all && classes == 1 && u_max <= 1e-9 && secs < 60.0,
        format!(
            "c_est {c:e}, max |h(n,n)| {h_diag:e}, Aubry {}/{} nodes, {classes} class(es), max |u_f| {u_max:e} (need 1e-9), {secs:.1} s",
            free.aubry.structure.aubry_nodes.len(),
            lat.node_count()
        ),
    )
}

fn pendulum_oracle(x: f64) -> f64 {
    let d = x.min(1.0 - x);
    2f64.sqrt() / std::f64::consts::PI * (1.0 - (std::f64::consts::PI * d).cos())
}

fn pendulum(p: &Setup, u: &ValueFunction, u_secs: f64) -> Verdict {
    let lat = p.lattice();
    let c = p.ck.c_est();
    let sup = max_abs(
        lat.nodes()
            .map(|v| u.get(v) - pendulum_oracle(lat.position(lat.cell(v))[0])),
    );
    let nodes = &p.aubry.structure.aubry_nodes;
    let concentrated = nodes
        .iter()
        .all(|v| lat.cell_distance(lat.cell(*v), 0) <= 2);
    let layers = (0..lat.layers()).all(|l| nodes.iter().any(|v| lat.layer(*v) == l));
    let secs = p.setup_secs + u_secs;
    verdict(
        (c - 1.0).abs() <= 0.05 && sup <= 0.05 && concentrated && layers && secs < 300.0,
        format!(
            "c_est {c}, sup |u_f - oracle| {sup:.3e}, {} Aubry nodes within 2 cells of 0: {concentrated}, every layer hit: {layers}, {secs:.1} s",
            nodes.len()
        ),
    )
}

fn drift(d: &Setup) -> Verdict {
    let lat = d.lattice();
    let c = d.ck.c_est();
    let u = vec![0.0; lat.node_count()];
    let residual = fixed_point_residual(&u, d.kernel(), Direction::Backward);
    let phi = d.fields(&d.random_nodes(16, 4), Orientation::From);
    let defect = domination_defect(&u, &phi, 10_000, 4);
    let all = d.aubry.structure.aubry_nodes.len() == lat.node_count();
    verdict(
        c.abs() <= 0.02 && residual <= 0.02 && defect <= 1e-9 && all,
        format!(
            "c_est {c:e}, constant fixed-point residual {residual:e}, domination defect {defect:e} (need 1e-9), Aubry {}/{} nodes",
            d.aubry.structure.aubry_nodes.len(),
            lat.node_count()
        ),
    )
}

fn alpha_lattice(s: &Setup, h_max: f64) -> Lattice {
    let lat = s.lattice();
    let v_max = s
        .loaded
        .config
        .model
        .with_cohomology(&[h_max])
        .unwrap()
        .default_v_max();
    Lattice::build(LatticeSpec::new(lat.n(), lat.layers(), v_max, 1).unwrap()).unwrap()
}

fn alpha(models: &[&Setup]) -> Verdict {
    let free = models[0];
    let hs: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|&h| vec![h])
        .collect();
    let samples = alpha_function(
        &free.loaded.config.model,
        &alpha_lattice(free, 1.0),
        &hs,
        MeanCycleMethod::Karp,
    )
    .unwrap();
    let err = max_abs(samples.iter().map(|s| s.alpha - s.h[0] * s.h[0] / 2.0));
    let grid: Vec<Vec<f64>> = (0..=8).map(|i| vec![-1.0 + 0.25 * i as f64]).collect();
    let mut worst = (0.0f64, "");
    for m in models {
        let samples = alpha_function(
            &m.loaded.config.model,
            &alpha_lattice(m, 1.0),
            &grid,
            MeanCycleMethod::Karp,
        )
        .unwrap();
        let defect = midpoint_convexity_defect(&samples);
        if defect >= worst.0 {
            worst = (defect, m.name);
        }
    }
    verdict(
        err <= 0.05 && worst.0 <= 1e-6,
        format!(
            "max |alpha - h^2/2| {err:.3e}, worst midpoint convexity defect {:e} ({})",
            worst.0, worst.1
        ),
    )
}

fn triangle(models: &[&Setup]) -> Verdict {
    let mut worst_tri = f64::NEG_INFINITY;
    let mut worst_slack = f64::NEG_INFINITY;
    let mut flags = true;
    for m in models {
        let mut sources = m.random_nodes(16, 6);
        sources.extend_from_slice(&m.aubry.structure.representatives);
        let fields = m.fields(&sources, Orientation::From);
        flags &= m.aubry.reference.converged && fields.iter().all(|f| f.converged && f.phi_stable);
        worst_tri = worst_tri.max(check_triangle(&fields, &fields, 10_000, 6).unwrap());
        worst_slack = worst_slack.max(phi_h_slack(&fields).unwrap());
    }
    verdict(
        worst_tri <= 1e-6 && worst_slack <= 1e-12 && flags,
        format!("max triangle violation {worst_tri:e}, max Phi - h {worst_slack:e}, all flags converged: {flags}"),
    )
}

fn bracket(models: &[&Setup]) -> Verdict {
    let mut details = Vec::new();
    let mut pass = true;
    for m in models {
        let k0 = m.kernel().at_level(0.0);
        let n = m.lattice().node_count();
        let above = subsolution_test(&k0, m.ck.c_est() + 0.05, n)
            .unwrap()
            .verdict;
        let below = subsolution_test(&k0, m.ck.c_est() - 0.05, n)
            .unwrap()
            .verdict;
        pass &= above == Feasibility::Feasible && below == Feasibility::Infeasible;
        details.push(format!("{}: {above:?}/{below:?}", m.name));
    }
    verdict(pass, details.join(", "))
}

fn min_exactness(tw: &Setup) -> Verdict {
    let reps = &tw.aubry.structure.representatives;
    let sols: Vec<ValueFunction> = reps.iter().map(|&r| tw.backward(&[(r, 0.0)])).collect();
    let inputs: Vec<f64> = sols
        .iter()
        .map(|u| fixed_point_residual(&u.values, tw.kernel(), Direction::Backward))
        .collect();
    let combined = min_combine(&sols).unwrap();
    let r = fixed_point_residual(&combined.values, tw.kernel(), Direction::Backward);
    let excess = r - inputs.iter().copied().fold(0.0, f64::max);
    verdict(
        sols.len() >= 2 && excess <= 1e-12,
        format!(
            "{} solutions with residuals {inputs:?}, min residual {r:e}, excess {excess:e}",
            sols.len()
        ),
    )
}

fn barrier_solutions(models: &[&Setup]) -> Verdict {
    let mut worst = (0.0f64, 0.0f64);
    for m in models {
        let zs = m.random_nodes(5, 9);
        let from = m.fields(&zs, Orientation::From);
        let to = m.fields(&zs, Orientation::To);
        for ((z, f), t) in zs.iter().zip(&from).zip(&to) {
            let (b, fw) = barrier_is_solution_check(*z, f, t, m.kernel()).unwrap();
            worst = (worst.0.max(b), worst.1.max(fw));
        }
    }
    verdict(
        worst.0 <= 0.02 && worst.1 <= 0.02,
        format!(
            "max backward residual of h(z,.) {:e}, max forward residual of -h(.,z) {:e}",
            worst.0, worst.1
        ),
    )
}

fn calibrated_paths(p: &Setup, u: &ValueFunction) -> Verdict {
    let starts = p.random_nodes(100, 10);
    let mut far = 0;
    for s in &starts {
        let path = extract_calibrated_path(u, p.kernel(), *s, 20).unwrap();
        if !p.near_aubry(path.end(), 2) {
            far += 1;
        }
    }
    verdict(
        far == 0,
        format!(
            "{far} of {} paths end farther than 2 cells from the Aubry set",
            starts.len()
        ),
    )
}

fn lipschitz(tw: &Setup) -> Verdict {
    let reps = tw.aubry.structure.representatives.clone();
    let fields = tw.fields(&reps, Orientation::From);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut built = 0;
    while built < 10 {
        let f: Vec<(NodeId, f64)> = reps
            .iter()
            .map(|&r| (r, rng.gen_range(-0.5..0.5)))
            .collect();
        if check_dominated(&f, &fields, Orientation::From, 0.0).is_err() {
            continue;
        }
        let u = build_backward_solution(&f, &fields, tw.eps_class()).unwrap();
        worst = worst.max(kamlab_core::barrier::spatial_lipschitz(
            tw.lattice(),
            &u.values,
        ));
        built += 1;
    }
    let bound = 2f64.sqrt() + 0.2;
    verdict(
        worst <= bound,
        format!("max Lipschitz constant {worst:.4} over {built} solutions (bound {bound:.4})"),
    )
}

fn run_cli(dir: &Path, out: &str, threads: usize, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kamlab"))
        .current_dir(dir)
        .env("KAMLAB_OUTPUT_DIR", dir.join(out))
        .args(["--config", "run.toml", "--threads", &threads.to_string()])
        .args(args)
        .output()
        .expect("kamlab runs")
}

fn payloads(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.ends_with(".manifest.json"))
        .map(|n| (n.clone(), std::fs::read(dir.join(&n)).unwrap()))
        .collect()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = PENDULUM.replace("n = 128", "n = 64");
    std::fs::write(dir.join("run.toml"), format!("seed = 5\n{config}")).unwrap();
    std::fs::write(dir.join("boundary.csv"), "node,value\n0,0\n").unwrap();
    let commands: [&[&str]; 6] = [
        &["critical", "--bracket", "0.05"],
        &["alpha", "--h-min", "-1", "--h-max", "1", "--h-steps", "5"],
        &["barrier", "--source", "5,3"],
        &["aubry"],
        &["solve", "--boundary", "boundary.csv"],
        &["verify", "--solution", "out-1/solution.csv"],
    ];
    let mut failures = Vec::new();
    for threads in [1, 8] {
        let out = format!("out-{threads}");
        for args in commands {
            let mut args = args.to_vec();
            let solution = format!("{out}/solution.csv");
            if args[0] == "verify" {
                args[2] = &solution;
            }
            let o = run_cli(dir, &out, threads, &args);
            if !o.status.success() {
                failures.push(format!("{} exited {:?}", args[0], o.status.code()));
            }
        }
    }
    let (a, b) = (payloads(&dir.join("out-1")), payloads(&dir.join("out-8")));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    verdict(
        failures.is_empty()
            && a.len() == commands.len()
            && a.keys().eq(b.keys())
            && differing.is_empty(),
        format!(
            "{} payload files compared, differing: {differing:?}, run failures: {failures:?}",
            a.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut report = |name: &'static str, v: Verdict| {
        println!(
            "{} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((name, v));
    };

    report("oracle-equivalence", oracle_equivalence());
    let free = Setup::new("free", FREE);
    report("free-particle", free_particle(&free));
    let pend = Setup::new("pendulum", PENDULUM);
    let u_start = Instant::now();
    let u_pend = pend.backward(&[(pend.lattice().node(0, 0), 0.0)]);
    let u_secs = u_start.elapsed().as_secs_f64();
    report("pendulum", pendulum(&pend, &u_pend, u_secs));
    let drift_setup = Setup::new("drift", DRIFT);
    report("time-periodic-drift", drift(&drift_setup));
    let two_well = Setup::new("two-well", TWO_WELL);
    let all = [&free, &pend, &drift_setup, &two_well];
    report("alpha-function", alpha(&all));
    report("triangle-inequality", triangle(&all));
    report("subsolution-bracket", bracket(&all[..3]));
    report("min-of-solutions", min_exactness(&two_well));
    report("barrier-is-solution", barrier_solutions(&all));
    report("calibrated-paths", calibrated_paths(&pend, &u_pend));
    report("uniform-lipschitz", lipschitz(&two_well));
    report("determinism", determinism());

    let failing: Vec<&str> = results
        .iter()
        .filter(|(_, v)| !v.pass)
        .map(|(n, _)| *n)
        .collect();
    println!(
        "{} of {} criteria pass; failing: {failing:?}",
        results.len() - failing.len(),
        results.len()
    );
    if failing != KNOWN_FAILURES {
        eprintln!("failing criteria differ from the recorded set {KNOWN_FAILURES:?}");
        std::process::exit(1);
    }
}
