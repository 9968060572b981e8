//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use kamlab_core::barrier::{
    analyze_aubry, peierls_barrier, AubryAnalysis, AubryConfig, BarrierField,
};
use kamlab_core::critical::{
    alpha_function, midpoint_convexity_defect, subsolution_test, CriticalKernel, CriticalResult,
    SubsolutionOutcome,
};
use kamlab_core::minplus::{m_step_costs, min_mean_cycle, MeanCycleMethod, Orientation};
use kamlab_core::model::SpatialMode;
use kamlab_core::oracle::{enumerate_path_costs, kernel_min_mean_cycle};
use kamlab_core::weakkam::{
    build_backward_solution, build_forward_solution, verify_solution, SolutionKind, ValueFunction,
    VerificationReport, VerifyOptions,
};
use kamlab_core::{Error, LagrangianSpec, Lattice, LatticeSpec, NodeId, StepKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{load_or_build, CacheStatus};
use crate::config::{LoadedConfig, Tolerances};
use crate::output::{fmt_sig, OutputFile, OutputSink};

/// Extra random sources whose potentials back the domination sampler.
const SAMPLE_SOURCES: usize = 16;

/// Keeps the brute-force cycle enumeration of the selftest small.
const SELFTEST_V_MAX: f64 = 0.6;

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Critical {
        bracket: Option<f64>,
    },
    Alpha {
        h_min: f64,
        h_max: f64,
        h_steps: usize,
    },
    Barrier {
        cell: usize,
        layer: usize,
    },
    Aubry,
    Solve {
        boundary: PathBuf,
        forward: bool,
    },
    Verify {
        solution: PathBuf,
        forward: bool,
    },
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Critical { .. } => "critical",
            Command::Alpha { .. } => "alpha",
            Command::Barrier { .. } => "barrier",
            Command::Aubry => "aubry",
            Command::Solve { .. } => "solve",
            Command::Verify { .. } => "verify",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub command: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub v_max: f64,
    pub v_max_derived: bool,
    pub kernel_cache: Option<CacheStatus>,
    pub tolerances: Tolerances,
    pub stages: Vec<Stage>,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug)]
pub struct Outcome {
    pub converged: bool,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            2
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

struct Session<'a> {
    loaded: &'a LoadedConfig,
    spec: LagrangianSpec,
    lattice: Lattice,
    cache_dir: PathBuf,
    kernel0: Option<StepKernel>,
    cache: Option<CacheStatus>,
    stages: Vec<Stage>,
}

impl<'a> Session<'a> {
    fn new(loaded: &'a LoadedConfig, out_dir: &Path) -> Result<Self> {
        let lattice = Lattice::build(loaded.config.lattice_spec()?).context("building lattice")?;
        Ok(Self {
            loaded,
            spec: loaded.config.model.clone(),
            lattice,
            cache_dir: out_dir.join("cache"),
            kernel0: None,
            cache: None,
            stages: Vec::new(),
        })
    }

    fn tolerances(&self) -> &Tolerances {
        &self.loaded.config.tolerances
    }

    fn stage(&mut self, name: &str, converged: bool) {
        self.stages.push(Stage {
            name: name.into(),
            converged,
        });
    }

    fn kernel0(&mut self) -> Result<&StepKernel> {
        if self.kernel0.is_none() {
            let cap = self.loaded.config.limits.memory_cap_bytes;
            let (k, status) = load_or_build(
                &self.cache_dir,
                &self.loaded.hash,
                &self.spec,
                &self.lattice,
                cap,
            )
            .context("stage kernel")?;
            self.kernel0 = Some(k);
            self.cache = Some(status);
        }
        Ok(self.kernel0.as_ref().expect("kernel just set"))
    }

    fn critical(&mut self) -> Result<CriticalKernel> {
        let spec = self.spec.clone();
        let ck = CriticalKernel::new(&spec, self.kernel0()?, MeanCycleMethod::Karp)
            .context("stage critical")?;
        self.stage("critical", true);
        Ok(ck)
    }

    fn aubry(&mut self, ck: &CriticalKernel) -> Result<AubryAnalysis> {
        let tol = self.tolerances();
        let cfg = AubryConfig {
            running: self.loaded.config.running_params(),
            tol_c: tol.tol_c,
            epsilon_aubry: tol.epsilon_aubry,
            epsilon_class: tol.epsilon_class,
        };
        let analysis = analyze_aubry(ck, &cfg).context("stage aubry")?;
        self.stage("aubry", analysis.reference.converged);
        Ok(analysis)
    }

    fn fields(
        &mut self,
        ck: &CriticalKernel,
        sources: &[NodeId],
        orientation: Orientation,
    ) -> Result<Vec<BarrierField>> {
        let params = self.loaded.config.running_params();
        let fields = peierls_barrier(ck, sources, &params, orientation, self.tolerances().tol_c)
            .context("stage barrier")?;
        let name = match orientation {
            Orientation::From => "barrier_from",
            Orientation::To => "barrier_to",
        };
        self.stage(name, fields.iter().all(|f| f.converged));
        Ok(fields)
    }

    fn sample_sources(&self, extra: &[NodeId]) -> Vec<NodeId> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.loaded.config.seed);
        let n = self.lattice.node_count();
        let mut out: Vec<NodeId> = (0..SAMPLE_SOURCES)
            .map(|_| NodeId(rng.gen_range(0..n) as u32))
            .collect();
        out.extend_from_slice(extra);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn node_columns(&self, node: NodeId) -> Vec<String> {
        let mut row: Vec<String> = self
            .lattice
            .cell_multi(self.lattice.cell(node))
            .iter()
            .map(|c| c.to_string())
            .collect();
        row.push(self.lattice.layer(node).to_string());
        row
    }

    fn cell_header(&self, prefix: &str) -> Vec<String> {
        if self.lattice.dim() == 1 {
            vec![format!("{prefix}cell")]
        } else {
            (0..self.lattice.dim())
                .map(|i| format!("{prefix}cell_{i}"))
                .collect()
        }
    }
}

#[derive(Serialize)]
struct CriticalReport<'a> {
    result: &'a CriticalResult,
    cycle_cells: Vec<(Vec<usize>, usize)>,
    subsolution_bracket: Option<Bracket>,
    converged: bool,
    tolerances: &'a Tolerances,
}

#[derive(Serialize)]
struct Bracket {
    delta: f64,
    above: SubsolutionOutcome,
    below: SubsolutionOutcome,
}

#[derive(Serialize)]
struct AubryReport<'a> {
    c_est: f64,
    aubry_nodes: &'a [NodeId],
    aubry_cells: Vec<(Vec<usize>, usize)>,
    class_ids: Vec<usize>,
    classes: &'a [Vec<NodeId>],
    representatives: &'a [NodeId],
    epsilon_aubry: f64,
    epsilon_class: f64,
    reference_residual: f64,
    gauge_defect: f64,
    converged: bool,
    tolerances: &'a Tolerances,
}

#[derive(Serialize)]
struct VerificationOutput<'a> {
    kind: SolutionKind,
    c_est: f64,
    report: &'a VerificationReport,
    converged: bool,
    tolerances: &'a Tolerances,
}

#[derive(Serialize)]
struct SelftestCheck {
    name: String,
    passed: bool,
    max_error: f64,
}

/// Runs one subcommand, writing payloads and the manifest into `out_dir`.
pub fn run(command: &Command, loaded: &LoadedConfig, out_dir: &Path) -> Result<Outcome> {
    let started = unix_now();
    let mut sink = OutputSink::new(out_dir)?;
    let mut s = Session::new(loaded, out_dir)?;
    match command {
        Command::Critical { bracket } => critical(&mut s, &mut sink, *bracket)?,
        Command::Alpha {
            h_min,
            h_max,
            h_steps,
        } => alpha(&mut s, &mut sink, *h_min, *h_max, *h_steps)?,
        Command::Barrier { cell, layer } => barrier(&mut s, &mut sink, *cell, *layer)?,
        Command::Aubry => aubry(&mut s, &mut sink)?,
        Command::Solve { boundary, forward } => solve(&mut s, &mut sink, boundary, *forward)?,
        Command::Verify { solution, forward } => verify(&mut s, &mut sink, solution, *forward)?,
        Command::Selftest => selftest(&mut s, &mut sink)?,
    }
    let converged = s.stages.iter().all(|st| st.converged);
    let manifest = RunManifest {
        config_hash: loaded.hash.clone(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        v_max: s.lattice.spec().v_max,
        v_max_derived: loaded.v_max_derived,
        kernel_cache: s.cache,
        tolerances: loaded.config.tolerances.clone(),
        stages: s.stages,
        outputs: sink.into_files(),
    };
    let manifest_path = out_dir.join(format!("{}.manifest.json", command.name()));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&manifest_path, text)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok(Outcome {
        converged,
        manifest,
        manifest_path,
    })
}

fn critical(s: &mut Session, sink: &mut OutputSink, bracket: Option<f64>) -> Result<()> {
    let ck = s.critical()?;
    let bracket = match bracket {
        Some(delta) => {
            let iterations = s.loaded.config.iterations();
            let k0 = s.kernel0()?;
            let above = subsolution_test(k0, ck.c_est() + delta, iterations)
                .context("stage subsolution")?;
            let below = subsolution_test(k0, ck.c_est() - delta, iterations)
                .context("stage subsolution")?;
            use kamlab_core::critical::Feasibility::*;
            s.stage(
                "subsolution",
                above.verdict != Inconclusive && below.verdict != Inconclusive,
            );
            Some(Bracket {
                delta,
                above,
                below,
            })
        }
        None => None,
    };
    let lat = &s.lattice;
    let report = CriticalReport {
        result: ck.result(),
        cycle_cells: ck
            .result()
            .cycle
            .iter()
            .map(|&v| (lat.cell_multi(lat.cell(v)), lat.layer(v)))
            .collect(),
        subsolution_bracket: bracket,
        converged: true,
        tolerances: s.tolerances(),
    };
    sink.write_json("critical.json", &report)?;
    Ok(())
}

fn alpha(
    s: &mut Session,
    sink: &mut OutputSink,
    h_min: f64,
    h_max: f64,
    h_steps: usize,
) -> Result<()> {
    if h_steps == 0 || !h_min.is_finite() || !h_max.is_finite() || h_min > h_max {
        bail!("alpha needs finite h_min <= h_max and at least one step");
    }
    let dim = s.spec.dim;
    let grid: Vec<f64> = (0..h_steps)
        .map(|i| {
            if h_steps == 1 {
                h_min
            } else {
                h_min + (h_max - h_min) * i as f64 / (h_steps - 1) as f64
            }
        })
        .collect();
    // classes along the first axis; one lattice wide enough for every class
    let hs: Vec<Vec<f64>> = grid
        .iter()
        .map(|&h| (0..dim).map(|i| if i == 0 { h } else { 0.0 }).collect())
        .collect();
    let v_max = match s
        .loaded
        .config
        .lattice
        .v_max
        .filter(|_| !s.loaded.v_max_derived)
    {
        Some(v) => v,
        None => {
            let widest = if h_min.abs() > h_max.abs() {
                &hs[0]
            } else {
                &hs[hs.len() - 1]
            };
            s.spec.with_cohomology(widest)?.default_v_max()
        }
    };
    let spec = LatticeSpec::new(s.lattice.n(), s.lattice.layers(), v_max, dim)?;
    let lattice = Lattice::build(spec).context("stage alpha")?;
    let samples =
        alpha_function(&s.spec, &lattice, &hs, MeanCycleMethod::Karp).context("stage alpha")?;
    let defect = midpoint_convexity_defect(&samples);
    log::info!("alpha: midpoint convexity defect {defect:e}");
    s.stage("alpha", true);
    let mut header: Vec<String> = if dim == 1 {
        vec!["h".into()]
    } else {
        (0..dim).map(|i| format!("h_{i}")).collect()
    };
    header.extend(["alpha", "converged"].map(String::from));
    // each value is an exact minimum mean cycle
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|a| {
            a.h.iter()
                .map(|&x| fmt_sig(x))
                .chain([fmt_sig(a.alpha), "true".into()])
                .collect()
        })
        .collect();
    sink.write_csv("alpha.csv", &header, &rows)?;
    Ok(())
}

fn barrier(s: &mut Session, sink: &mut OutputSink, cell: usize, layer: usize) -> Result<()> {
    if cell >= s.lattice.cell_count() || layer >= s.lattice.layers() {
        bail!("source ({cell},{layer}) lies outside the lattice");
    }
    let ck = s.critical()?;
    let source = s.lattice.node(cell, layer);
    let field = s.fields(&ck, &[source], Orientation::From)?.remove(0);
    let mut header = s.cell_header("source_");
    header.push("source_layer".into());
    header.extend(s.cell_header("target_"));
    header.extend(["target_layer", "phi", "h", "converged"].map(String::from));
    let h = field.barrier()?;
    let src_cols = s.node_columns(source);
    let rows: Vec<Vec<String>> = s
        .lattice
        .nodes()
        .map(|v| {
            let mut row = src_cols.clone();
            row.extend(s.node_columns(v));
            row.push(fmt_sig(field.phi.get(v)));
            row.push(fmt_sig(h.get(v)));
            row.push(field.converged.to_string());
            row
        })
        .collect();
    sink.write_csv("barrier.csv", &header, &rows)?;
    Ok(())
}

fn aubry(s: &mut Session, sink: &mut OutputSink) -> Result<()> {
    let ck = s.critical()?;
    let a = s.aubry(&ck)?;
    let st = &a.structure;
    let lat = &s.lattice;
    let report = AubryReport {
        c_est: ck.c_est(),
        aubry_nodes: &st.aubry_nodes,
        aubry_cells: st
            .aubry_nodes
            .iter()
            .map(|&v| (lat.cell_multi(lat.cell(v)), lat.layer(v)))
            .collect(),
        class_ids: st
            .aubry_nodes
            .iter()
            .map(|&v| st.class_of(v).expect("every Aubry node has a class"))
            .collect(),
        classes: &st.classes,
        representatives: &st.representatives,
        epsilon_aubry: st.epsilon_aubry,
        epsilon_class: st.epsilon_class,
        reference_residual: a.reference.residual,
        gauge_defect: a.gauge.defect,
        converged: a.reference.converged,
        tolerances: s.tolerances(),
    };
    sink.write_json("aubry.json", &report)?;
    Ok(())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect::<Vec<_>>()))
        .filter(|(_, f)| !(f.len() == 1 && f[0].is_empty()))
        // a header is any line whose last field is not a number
        .filter(|(_, f)| f.last().is_some_and(|v| v.parse::<f64>().is_ok()))
}

/// Boundary data: `node,value` lines, with an optional header.
pub fn read_boundary(path: &Path) -> Result<Vec<(NodeId, f64)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    data_lines(&text)
        .map(|(line, f)| {
            if f.len() != 2 {
                bail!("{}:{line}: expected `node,value`", path.display());
            }
            let node: u32 = f[0]
                .parse()
                .with_context(|| format!("{}:{line}: bad node id", path.display()))?;
            Ok((NodeId(node), f[1].parse()?))
        })
        .collect()
}

/// Value function CSV: cell indices, layer, value.
pub fn read_value_function(
    path: &Path,
    lattice: &Lattice,
    kind: SolutionKind,
) -> Result<ValueFunction> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let d = lattice.dim();
    let mut values = vec![f64::NAN; lattice.node_count()];
    for (line, f) in data_lines(&text) {
        if f.len() != d + 2 {
            bail!("{}:{line}: expected {} columns", path.display(), d + 2);
        }
        let idx: Vec<usize> = f[..d].iter().map(|c| c.parse()).collect::<Result<_, _>>()?;
        let layer: usize = f[d].parse()?;
        if idx.iter().any(|&i| i >= lattice.n()) || layer >= lattice.layers() {
            bail!("{}:{line}: node outside the lattice", path.display());
        }
        values[lattice.node_at(&idx, layer).index()] = f[d + 1].parse()?;
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        bail!("{}: no value for node {i}", path.display());
    }
    Ok(ValueFunction::new(values, kind)?)
}

fn write_solution(s: &Session, sink: &mut OutputSink, u: &ValueFunction) -> Result<()> {
    let mut header = s.cell_header("");
    header.extend(["layer", "value"].map(String::from));
    let rows: Vec<Vec<String>> = s
        .lattice
        .nodes()
        .map(|v| {
            let mut row = s.node_columns(v);
            row.push(fmt_sig(u.get(v)));
            row
        })
        .collect();
    sink.write_csv("solution.csv", &header, &rows)?;
    Ok(())
}

fn report(
    s: &mut Session,
    sink: &mut OutputSink,
    ck: &CriticalKernel,
    u: &ValueFunction,
    phi_fields: &[BarrierField],
) -> Result<()> {
    let options = VerifyOptions {
        seed: s.loaded.config.seed,
        ..VerifyOptions::default()
    };
    let report = verify_solution(u, ck.kernel(), phi_fields, &s.spec, ck.c_est(), &options)
        .context("stage verify")?;
    let converged = s.stages.iter().all(|st| st.converged);
    let out = VerificationOutput {
        kind: u.kind,
        c_est: ck.c_est(),
        report: &report,
        converged,
        tolerances: s.tolerances(),
    };
    sink.write_json("verification.json", &out)?;
    Ok(())
}

fn solve(s: &mut Session, sink: &mut OutputSink, boundary: &Path, forward: bool) -> Result<()> {
    let f = read_boundary(boundary)?;
    let ck = s.critical()?;
    let a = s.aubry(&ck)?;
    if let Some(&(bad, _)) = f
        .iter()
        .find(|(p, _)| !a.structure.representatives.contains(p))
    {
        return Err(Error::NotRepresentative(bad)).context("stage solve");
    }
    let nodes: Vec<NodeId> = f.iter().map(|(p, _)| *p).collect();
    let phi_fields = s.fields(&ck, &s.sample_sources(&nodes), Orientation::From)?;
    let eps = a.structure.epsilon_class;
    let u = if forward {
        let to = s.fields(&ck, &nodes, Orientation::To)?;
        build_forward_solution(&f, &to, eps)
    } else {
        build_backward_solution(&f, &phi_fields, eps)
    }
    .context("stage solve")?;
    write_solution(s, sink, &u)?;
    report(s, sink, &ck, &u, &phi_fields)
}

fn verify(s: &mut Session, sink: &mut OutputSink, solution: &Path, forward: bool) -> Result<()> {
    let kind = if forward {
        SolutionKind::Forward
    } else {
        SolutionKind::Backward
    };
    let u = read_value_function(solution, &s.lattice, kind)?;
    let ck = s.critical()?;
    let phi_fields = s.fields(&ck, &s.sample_sources(&[]), Orientation::From)?;
    report(s, sink, &ck, &u, &phi_fields)
}

fn selftest(s: &mut Session, sink: &mut OutputSink) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.loaded.config.seed);
    let random = LagrangianSpec::mechanical(
        1,
        (1..=2)
            .map(|w| SpatialMode {
                wave: vec![w],
                cos: rng.gen_range(-0.5..0.5),
                sin: rng.gen_range(-0.5..0.5),
            })
            .collect(),
    );
    let models = [
        ("pendulum", LagrangianSpec::pendulum()),
        ("random_mechanical", random),
        ("sine_drift", LagrangianSpec::sine_drift()),
    ];
    let mut checks = Vec::new();
    for (name, spec) in models {
        let lat = Lattice::build(LatticeSpec::new(6, 4, SELFTEST_V_MAX, 1)?)?;
        let k = StepKernel::build(&spec, &lat, 0.0, None)?;
        let mut worst = 0.0f64;
        for src in lat.nodes().step_by(5) {
            for m in 1..=8 {
                let fast = m_step_costs(&k, src, m)?;
                let slow = enumerate_path_costs(&k, src, m);
                for (a, b) in fast.costs.iter().zip(&slow) {
                    if a != b {
                        worst = worst.max(if a.is_finite() && b.is_finite() {
                            (a - b).abs()
                        } else {
                            f64::INFINITY
                        });
                    }
                }
            }
        }
        checks.push(SelftestCheck {
            name: format!("{name}: path costs"),
            passed: worst == 0.0,
            max_error: worst,
        });
        let (exact, _) = kernel_min_mean_cycle(&k).context("oracle found no cycle")?;
        for method in [MeanCycleMethod::Karp, MeanCycleMethod::Howard] {
            let got = min_mean_cycle(&k, method, None)?.mean;
            let err = (got - exact).abs();
            checks.push(SelftestCheck {
                name: format!("{name}: mean cycle ({method:?})"),
                passed: err <= 1e-12,
                max_error: err,
            });
        }
    }
    for c in &checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    sink.write_json("selftest.json", &checks)?;
    if let Some(c) = checks.iter().find(|c| !c.passed) {
        bail!("selftest failed: {} (error {:e})", c.name, c.max_error);
    }
    s.stage("selftest", true);
    Ok(())
}
