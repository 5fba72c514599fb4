//! Configuration, dispatch and artifacts for the `planner` binary.
//!
//! A run reads one JSON configuration, applies command-line overrides, solves
//! and writes `report.json` plus plot data into the output directory. Nothing
//! time- or host-dependent enters the outputs, so a fixed configuration and
//! seed reproduce every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::functionals::{ConcentrationFamily, FunctionFamily};
use crate::measures::{Atom, AtomicMeasure, Domain, Grid, GridDensity, INPUT_PROB_TOL, INTERNAL_PROB_TOL};
use crate::oracle::{brute_force_full, compare_solutions, BruteForceInstance, CompareTolerances, DEFAULT_MASS_RESOLUTION};
use crate::planner::{assemble_rn_solution, solve_atomic_problem_seeded, solve_bounded, solve_on_sites, BoundedOptions, Layout, Objective, PlanSolution};
use crate::semidiscrete::{min_fp_nu_with, WeightOptions};
use crate::subcity::{atom_count_bound, check_atomization_condition, default_radius_sweep, subadditivity_threshold, EnergyCurve, SubcityModel};

/// Largest grid accepted from a configuration.
pub const MAX_GRID_CELLS: usize = 4_000_000;
pub const MAX_K: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PlanRn,
    PlanBounded,
    MuSubproblem,
    EnergyCurve,
    Validate,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::PlanRn => "plan-rn",
            Mode::PlanBounded => "plan-bounded",
            Mode::MuSubproblem => "mu-subproblem",
            Mode::EnergyCurve => "energy-curve",
            Mode::Validate => "validate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "planner", version, about = "Optimal resident and service distributions")]
pub struct Args {
    pub mode: Mode,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub p: Option<f64>,
    /// Cells per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long = "k-max")]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the resident-to-atom transport plan as plan.csv.
    #[arg(long = "dump-plan")]
    pub dump_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltySpec {
    Quadratic,
    Power { a: f64, q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceSpec {
    Power { b: f64, r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub point: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Mass balance of the weight solve, relative to the total mass.
    pub mass: f64,
    pub max_iterations: usize,
    /// Relative improvement below which the bounded heuristic stops.
    pub bounded_rel: f64,
    /// Allowed L¹ gap between structured and brute-force densities.
    pub validate_l1: f64,
    /// Slack on the objective comparison on top of the quantisation effect.
    pub validate_objective: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { mass: 1e-7, max_iterations: 500, bounded_rel: 1e-8, validate_l1: 0.25, validate_objective: 1e-6 }
    }
}

fn default_p() -> f64 {
    2.0
}
fn default_n() -> usize {
    1
}
fn default_grid() -> usize {
    128
}
fn default_k_max() -> usize {
    6
}
fn default_rounds() -> usize {
    20
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_mass_resolution() -> usize {
    DEFAULT_MASS_RESOLUTION
}

/// Contents of the configuration file after overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub f: PenaltySpec,
    pub g: ServiceSpec,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Box bounds, one (lo, hi) per axis.
    #[serde(default)]
    pub domain: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub fixed_sites: bool,
    #[serde(default)]
    pub lattice: bool,
    #[serde(default)]
    pub sites: Vec<Vec<f64>>,
    #[serde(default = "default_mass_resolution")]
    pub mass_resolution: usize,
    #[serde(default)]
    pub dump_plan: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Command-line values win over the file.
    pub fn apply(&mut self, args: &Args) {
        self.mode = Some(args.mode);
        if let Some(p) = args.p {
            self.p = p;
        }
        if let Some(grid) = args.grid {
            self.grid = grid;
        }
        if let Some(k) = args.k_max {
            self.k_max = k;
        }
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(out) = &args.out {
            self.out = out.clone();
        }
        self.dump_plan |= args.dump_plan;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.mode.is_none() {
            return bad("mode missing".into());
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("p must be ≥ 1 (got {})", self.p));
        }
        if !(1..=2).contains(&self.n) {
            return bad(format!("n must be 1 or 2 (got {})", self.n));
        }
        if self.grid == 0 || (self.grid as u128).pow(self.n as u32) > MAX_GRID_CELLS as u128 {
            return bad(format!("grid of {} cells per axis exceeds the limit of {MAX_GRID_CELLS} cells", self.grid));
        }
        if self.k_max == 0 || self.k_max > MAX_K {
            return bad(format!("k_max must be in 1..={MAX_K}"));
        }
        if let Some(d) = &self.domain {
            if d.len() != self.n {
                return bad(format!("domain has {} axes but n = {}", d.len(), self.n));
            }
        }
        self.penalty()?;
        self.service()?;
        Ok(())
    }

    pub fn penalty(&self) -> Result<FunctionFamily> {
        match self.f {
            PenaltySpec::Quadratic => Ok(FunctionFamily::Quadratic),
            PenaltySpec::Power { a, q } => FunctionFamily::power(a, q).map_err(|e| Error::Config(e.to_string())),
        }
    }

    pub fn service(&self) -> Result<ConcentrationFamily> {
        match self.g {
            ServiceSpec::Power { b, r } => ConcentrationFamily::power(b, r).map_err(|e| Error::Config(e.to_string())),
        }
    }

    fn domain(&self) -> Result<Domain> {
        match &self.domain {
            Some(bounds) => Domain::bounded(bounds.clone()).map_err(|e| Error::Config(e.to_string())),
            None => Err(Error::Config(format!("mode {} needs a bounded domain", self.mode_name()))),
        }
    }

    fn atoms(&self) -> Result<AtomicMeasure> {
        if self.atoms.is_empty() {
            return Err(Error::Config(format!("mode {} needs atoms", self.mode_name())));
        }
        let atoms = self.atoms.iter().map(|a| Atom { point: a.point.clone(), mass: a.mass }).collect();
        AtomicMeasure::new(self.n, atoms).map_err(|e| Error::Config(e.to_string()))
    }

    fn weight_options(&self) -> WeightOptions {
        WeightOptions { tol: self.tolerances.mass, max_iterations: self.tolerances.max_iterations }
    }

    fn mode_name(&self) -> &'static str {
        self.mode.map(Mode::name).unwrap_or("?")
    }

    /// SHA-256 of the canonical (sorted-key) JSON of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serialises").to_string();
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Files produced by a run, relative to the output directory.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_density(&mut self, mu: &GridDensity) -> Result<()> {
        self.add("density.csv", mu.to_csv().into_bytes());
        let mut pgm = Vec::new();
        mu.write_pgm(&mut pgm)?;
        self.add("density.pgm", pgm);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Outcome of a run: the JSON report, other artifacts and the exit code.
pub struct RunOutput {
    pub report: Value,
    pub artifacts: Artifacts,
    pub exit_code: i32,
}

/// Exit code for an error: 1 for configuration problems, 2 when a solver
/// failed to converge.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoConvergence { .. } | Error::GridTooCoarse { .. } | Error::DegeneratePlan => 2,
        _ => 1,
    }
}

fn versions() -> Value {
    let v = env!("CARGO_PKG_VERSION");
    json!({
        "urbanot": v,
        "measures": v,
        "transport": v,
        "functionals": v,
        "semidiscrete": v,
        "subcity": v,
        "planner": v,
        "oracle": v,
        "cli": v,
    })
}

fn tolerance_block(config: &RunConfig) -> Value {
    json!({
        "input_probability": INPUT_PROB_TOL,
        "internal_probability": INTERNAL_PROB_TOL,
        "weight_mass": config.tolerances.mass,
        "weight_max_iterations": config.tolerances.max_iterations,
        "bounded_relative_improvement": config.tolerances.bounded_rel,
        "validate_l1": config.tolerances.validate_l1,
        "validate_objective": config.tolerances.validate_objective,
        "oracle_mass_resolution": config.mass_resolution,
    })
}

fn objective_json(o: &Objective) -> Value {
    json!({ "transport": o.transport, "penalty": o.penalty, "service": o.service, "total": o.total })
}

fn solution_json(sol: &PlanSolution) -> Value {
    json!({
        "atoms": sol.nu.atoms().iter().map(|a| json!({ "point": a.point, "mass": a.mass })).collect::<Vec<_>>(),
        "profiles": sol.profiles,
        "objective": objective_json(&sol.objective),
        "grid_objective": objective_json(&sol.grid_objective),
        "density_mass": sol.mu.total_mass(),
        "heuristic": sol.heuristic,
        "history": sol.history,
    })
}

/// Runs a validated configuration without touching the file system.
pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let mode = config.mode.expect("validated");
    let f = config.penalty()?;
    let g = config.service()?;
    let mut artifacts = Artifacts::default();
    let result = match mode {
        Mode::EnergyCurve => {
            let model = SubcityModel::new(f, g, config.p, config.n);
            let curve = EnergyCurve::build(model.clone())?;
            let m0 = subadditivity_threshold(&curve);
            let condition = check_atomization_condition(&model, &default_radius_sweep())?;
            artifacts.add("energy_curve.csv", curve.to_csv().into_bytes());
            json!({
                "samples": curve.samples.len(),
                "m0": m0,
                "atom_bound": (m0 > 0.0).then(|| atom_count_bound(m0)),
                "curvature_sign_changes": curve.curvature_sign_changes(),
                "condition": condition,
            })
        }
        Mode::PlanRn => {
            let atomic = solve_atomic_problem_seeded(&f, &g, config.p, config.n, config.k_max, config.seed)?;
            let layout = if config.lattice { Layout::Lattice } else { Layout::Line };
            let sol = assemble_rn_solution(&atomic.masses, &f, &g, config.p, config.n, layout, config.grid)?;
            let curve = EnergyCurve::build(SubcityModel::new(f, g, config.p, config.n))?;
            artifacts.add("energy_curve.csv", curve.to_csv().into_bytes());
            artifacts.add_density(&sol.mu)?;
            json!({
                "k": atomic.k,
                "masses": atomic.masses,
                "radii": sol.profiles.iter().map(|s| s.radius).collect::<Vec<_>>(),
                "regime": atomic.regime,
                "value": atomic.value,
                "per_k": atomic.per_k,
                "k_searched": atomic.k_searched,
                "m0": atomic.m0,
                "atom_bound": atomic.atom_bound,
                "condition": atomic.condition,
                "warnings": atomic.warnings,
                "layout": layout,
                "solution": solution_json(&sol),
            })
        }
        Mode::PlanBounded => {
            let omega = config.domain()?;
            let init = config.atoms()?;
            let options = BoundedOptions {
                cells_per_axis: config.grid,
                rounds: config.rounds,
                rel_tol: config.tolerances.bounded_rel,
                fixed_sites: config.fixed_sites,
                weights: config.weight_options(),
            };
            let sol = solve_bounded(&omega, &f, &g, config.p, &init, options)?;
            artifacts.add_density(&sol.mu)?;
            json!({ "rounds": sol.history.len() - 1, "solution": solution_json(&sol) })
        }
        Mode::MuSubproblem => {
            let omega = config.domain()?;
            let nu = config.atoms()?;
            let grid = Grid::uniform(omega, config.grid)?;
            let sol = min_fp_nu_with(&nu, &f, config.p, &grid, config.weight_options())?;
            artifacts.add_density(&sol.density)?;
            if config.dump_plan {
                artifacts.add("plan.csv", sol.plan.to_csv().into_bytes());
            }
            json!({
                "weights": sol.weights.weights.c,
                "split_masses": sol.weights.split_masses,
                "residual": sol.weights.residual,
                "iterations": sol.weights.iterations,
                "ascent_failures": sol.weights.ascent_failures,
                "final_tau": sol.weights.final_tau,
                "breakdown": sol.breakdown,
                "service": nu.atoms().iter().map(|a| g.g(a.mass)).sum::<f64>(),
                "density_mass": sol.density.total_mass(),
            })
        }
        Mode::Validate => {
            let grid = Grid::uniform(config.domain()?, config.grid)?;
            if config.sites.is_empty() {
                return Err(Error::Config("validate needs candidate sites".into()));
            }
            let instance = BruteForceInstance {
                grid: grid.clone(),
                sites: config.sites.clone(),
                mass_resolution: config.mass_resolution,
                f: f.clone(),
                g: g.clone(),
                p: config.p,
            };
            let brute = brute_force_full(&instance)?;
            let structured = solve_on_sites(&config.sites, &f, &g, config.p, &grid, config.weight_options())?;
            let active: Vec<usize> = (0..config.sites.len()).filter(|&i| structured.masses[i] > 0.0).collect();
            let nu = AtomicMeasure::from_parts(
                config.n,
                active.iter().map(|&i| config.sites[i].clone()).collect(),
                active.iter().map(|&i| structured.masses[i]).collect(),
            )?;
            let mu = min_fp_nu_with(&nu, &f, config.p, &grid, config.weight_options())?;
            let service: f64 = nu.atoms().iter().map(|a| g.g(a.mass)).sum();
            let objective = Objective::new(mu.breakdown.transport, mu.breakdown.penalty, service);
            let sol = PlanSolution {
                mu: mu.density,
                nu,
                profiles: Vec::new(),
                objective,
                grid_objective: objective,
                heuristic: false,
                history: Vec::new(),
            };
            let quantization = quantization_effect(&brute.inner.multipliers, &brute.units, &g, config.mass_resolution);
            let tolerances = CompareTolerances {
                objective: quantization + config.tolerances.validate_objective,
                l1: config.tolerances.validate_l1,
                atoms: f64::INFINITY,
            };
            let report = compare_solutions(&sol, &brute.to_plan_solution(config.p), tolerances)?;
            let gap = structured.value - brute.value();
            let passed = gap <= config.tolerances.validate_objective && -gap <= tolerances.objective && report.l1_gap <= tolerances.l1;
            artifacts.add_density(&sol.mu)?;
            json!({
                "brute_force": {
                    "value": brute.value(),
                    "lower_bound": brute.lower_bound,
                    "masses": brute.units.iter().map(|&u| u as f64 / config.mass_resolution as f64).collect::<Vec<_>>(),
                    "configurations": brute.configurations as u64,
                    "objective": objective_json(&brute.objective),
                },
                "structured": {
                    "value": structured.value,
                    "masses": structured.masses,
                    "subsets_tried": structured.subsets_tried,
                    "objective": objective_json(&sol.objective),
                },
                "objective_gap": gap,
                "quantization_effect": quantization,
                "comparison": report,
                "passed": passed,
            })
        }
    };
    if let Some(passed) = result.get("passed").and_then(Value::as_bool) {
        if !passed {
            log::warn!("validation did not pass");
        }
    }
    let report = json!({
        "mode": mode.name(),
        "config": config,
        "config_hash": config.hash(),
        "seed": config.seed,
        "versions": versions(),
        "tolerances": tolerance_block(config),
        "result": result,
    });
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    artifacts.files.insert(0, ("report.json".into(), text.into_bytes()));
    Ok(RunOutput { report, artifacts, exit_code: 0 })
}

/// First-order bound on how much the best quantised ν can lose against the
/// continuous optimum: moving one step 1/R between two used sites changes the
/// objective by (∂ᵢ − ∂ⱼ)/R with ∂ᵢ = λᵢ + g′(aᵢ).
pub fn quantization_effect(multipliers: &[f64], units: &[usize], g: &ConcentrationFamily, resolution: usize) -> f64 {
    let grads: Vec<f64> = units
        .iter()
        .zip(multipliers)
        .filter(|(&u, _)| u > 0)
        .map(|(&u, &l)| l + g.dg(u as f64 / resolution as f64))
        .collect();
    let spread = grads.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - grads.iter().cloned().fold(f64::INFINITY, f64::min);
    // A site with zero mass could also be switched on; its marginal cost is
    // unbounded for concave power g, so it is not counted.
    spread.max(0.0) / resolution as f64
}

/// Loads, runs and writes artifacts; returns the process exit code.
pub fn run(args: &Args) -> i32 {
    let mut config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    config.apply(args);
    run_config(&config)
}

pub fn run_config(config: &RunConfig) -> i32 {
    match execute(config) {
        Ok(out) => match out.artifacts.write(&config.out) {
            Ok(()) => out.exit_code,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
