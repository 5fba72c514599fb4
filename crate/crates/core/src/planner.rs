//! Number, sizes and placement of service poles.
//!
//! In ℝⁿ the optimum splits into disjoint subcities, so only the masses
//! matter: minimise Σ E(mᵢ) over Σ mᵢ = 1. In a bounded box the subcities
//! may be clipped and an alternating heuristic is used instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{eval_f, eval_g, ConcentrationFamily, FunctionFamily};
use crate::measures::{Atom, AtomicMeasure, Domain, Grid, GridDensity};
use crate::par;
use crate::semidiscrete::{density_cloud, density_from_weights, min_fp_nu_with, DualWeights, MuSolution, SubcityProfile, WeightOptions};
use crate::subcity::{atom_count_bound, check_atomization_condition, default_radius_sweep, subadditivity_threshold, AtomizationReport, EnergyCurve, SubcityModel};
use crate::transport::solve_discrete_transport;

pub const DEFAULT_SEED: u64 = 0x5eed;
const RANDOM_STARTS: usize = 20;
const SIMPLEX_GRID: usize = 200;
const GRID_SEARCH_MAX_K: usize = 3;
/// Relative spacing added to 2R̄ between neighbouring atoms.
const LAYOUT_GAP: f64 = 1e-6;

/// Objective terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Objective {
    pub transport: f64,
    pub penalty: f64,
    pub service: f64,
    pub total: f64,
}

impl Objective {
    pub fn new(transport: f64, penalty: f64, service: f64) -> Self {
        Objective { transport, penalty, service, total: transport + penalty + service }
    }
}

/// A resident density with its service atoms.
#[derive(Debug, Clone)]
pub struct PlanSolution {
    pub mu: GridDensity,
    pub nu: AtomicMeasure,
    pub profiles: Vec<SubcityProfile>,
    /// Closed-form terms for ℝⁿ layouts; grid terms for bounded runs.
    pub objective: Objective,
    /// Terms measured on the grid: exact discrete transport from the density
    /// cloud, midpoint F and G.
    pub grid_objective: Objective,
    pub heuristic: bool,
    /// Objective after each accepted bounded-domain round.
    pub history: Vec<f64>,
}

/// Which starting regime produced a mass optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MassRegime {
    Equal,
    Unequal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassOptimum {
    /// Sorted in decreasing order; zeros mean fewer atoms are better.
    pub masses: Vec<f64>,
    pub value: f64,
    pub equal_split_value: f64,
    pub regime: MassRegime,
}

impl MassOptimum {
    pub fn atoms(&self) -> usize {
        self.masses.iter().filter(|&&m| m > 0.0).count()
    }
}

/// E and E′ with the conventions E(0) = 0 and E′(0) = g′(0).
struct Energy<'a> {
    model: &'a SubcityModel,
}

impl Energy<'_> {
    fn value(&self, m: f64) -> Result<f64> {
        self.model.energy(m.clamp(0.0, 1.0))
    }

    fn slope(&self, m: f64) -> Result<f64> {
        if m <= 0.0 {
            Ok(self.model.g.dg(0.0))
        } else {
            self.model.energy_dm(m.min(1.0))
        }
    }

    fn total(&self, masses: &[f64]) -> Result<f64> {
        masses.iter().map(|&m| self.value(m)).sum()
    }
}

/// Euclidean projection onto {m ≥ 0, Σ m = 1}; −∞ entries project to 0.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| if x.is_finite() { (x - theta).max(0.0) } else { 0.0 }).collect()
}

/// Projected gradient descent with Armijo backtracking on Σ E(mᵢ).
fn projected_descent(energy: &Energy, start: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let mut m = start;
    let mut value = energy.total(&m)?;
    let mut step = 1e-2;
    for _ in 0..500 {
        let grad: Vec<f64> = m.iter().map(|&x| energy.slope(x)).collect::<Result<_>>()?;
        let mut moved = false;
        for _ in 0..60 {
            let trial = project_simplex(&m.iter().zip(&grad).map(|(x, g)| x - step * g).collect::<Vec<_>>());
            let decrease: f64 = trial
                .iter()
                .zip(&m)
                .zip(&grad)
                .map(|((t, x), g)| if g.is_finite() { g * (t - x) } else { 0.0 })
                .sum();
            let v = energy.total(&trial)?;
            if v <= value + 1e-4 * decrease && v < value {
                let change = trial.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                m = trial;
                value = v;
                moved = change > 1e-13;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((m, value))
}

/// Dirichlet(1, …, 1) sample.
fn random_simplex_point(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Best split of unit mass into at most k atoms.
pub fn optimize_masses(curve: &EnergyCurve, k: usize) -> Result<MassOptimum> {
    optimize_masses_seeded(curve, k, DEFAULT_SEED)
}

pub fn optimize_masses_seeded(curve: &EnergyCurve, k: usize, seed: u64) -> Result<MassOptimum> {
    if k == 0 {
        return Err(Error::InvalidK { k });
    }
    let energy = Energy { model: &curve.model };
    let equal = vec![1.0 / k as f64; k];
    let equal_value = energy.total(&equal)?;
    let mut best = (equal.clone(), equal_value, MassRegime::Equal);
    let mut consider = |masses: Vec<f64>, value: f64, regime: MassRegime| {
        if value < best.1 {
            best = (masses, value, regime);
        }
    };
    if k > 1 {
        let (m, v) = projected_descent(&energy, equal)?;
        let spread = m.iter().fold(0.0f64, |a, &x| a.max((x - 1.0 / k as f64).abs()));
        consider(m, v, if spread < 1e-9 { MassRegime::Equal } else { MassRegime::Unequal });
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k as u64);
        let starts: Vec<Vec<f64>> = (0..RANDOM_STARTS).map(|_| random_simplex_point(&mut rng, k)).collect();
        let runs = par::map_slice(&starts, |s| projected_descent(&energy, s.clone()));
        for run in runs {
            let (m, v) = run?;
            consider(m, v, MassRegime::Unequal);
        }
        if k <= GRID_SEARCH_MAX_K {
            let (m, v) = simplex_grid_search(&energy, k)?;
            consider(m, v, MassRegime::Unequal);
        }
    }
    let (mut masses, value, mut regime) = best;
    masses.sort_by(|a, b| b.total_cmp(a));
    let positive: Vec<f64> = masses.iter().copied().filter(|&m| m > 0.0).collect();
    if positive.len() > 1 && positive.iter().all(|&m| (m - positive[0]).abs() < 1e-9) {
        regime = MassRegime::Equal;
    }
    Ok(MassOptimum { masses, value, equal_split_value: equal_value, regime })
}

/// Exhaustive search over masses j/200 (k ≤ 3).
fn simplex_grid_search(energy: &Energy, k: usize) -> Result<(Vec<f64>, f64)> {
    let table: Vec<f64> = (0..=SIMPLEX_GRID).map(|j| energy.value(j as f64 / SIMPLEX_GRID as f64)).collect::<Result<_>>()?;
    let n = SIMPLEX_GRID;
    let mut best = (vec![0usize; k], f64::INFINITY);
    match k {
        1 => best = (vec![n], table[n]),
        2 => {
            for i in 0..=n {
                let v = table[i] + table[n - i];
                if v < best.1 {
                    best = (vec![i, n - i], v);
                }
            }
        }
        3 => {
            for i in 0..=n {
                for j in 0..=n - i {
                    let v = table[i] + table[j] + table[n - i - j];
                    if v < best.1 {
                        best = (vec![i, j, n - i - j], v);
                    }
                }
            }
        }
        _ => return Err(Error::InvalidK { k }),
    }
    let masses: Vec<f64> = best.0.iter().map(|&j| j as f64 / n as f64).collect();
    let value = energy.total(&masses)?;
    Ok((masses, value))
}

/// Result of the atomic problem with k free.
#[derive(Debug, Clone, Serialize)]
pub struct AtomicSolution {
    pub k: usize,
    pub masses: Vec<f64>,
    pub value: f64,
    pub regime: MassRegime,
    pub m0: f64,
    /// 1 + ⌊2/m₀⌋, or None when m₀ = 0.
    pub atom_bound: Option<usize>,
    pub k_searched: usize,
    /// Best value for each k = 1..=k_searched.
    pub per_k: Vec<MassOptimum>,
    pub condition: AtomizationReport,
    pub warnings: Vec<String>,
}

pub fn solve_atomic_problem(
    f: &FunctionFamily,
    g: &ConcentrationFamily,
    p: f64,
    n: usize,
    k_max: usize,
) -> Result<AtomicSolution> {
    solve_atomic_problem_seeded(f, g, p, n, k_max, DEFAULT_SEED)
}

pub fn solve_atomic_problem_seeded(
    f: &FunctionFamily,
    g: &ConcentrationFamily,
    p: f64,
    n: usize,
    k_max: usize,
    seed: u64,
) -> Result<AtomicSolution> {
    if k_max == 0 {
        return Err(Error::InvalidK { k: 0 });
    }
    let model = SubcityModel::new(f.clone(), g.clone(), p, n);
    let curve = EnergyCurve::build(model.clone())?;
    let condition = check_atomization_condition(&model, &default_radius_sweep())?;
    let m0 = subadditivity_threshold(&curve);
    let mut warnings = Vec::new();
    if !condition.satisfied {
        let warning = format!("{}; searching k ≤ {k_max}", Error::ConditionNotSatisfied);
        log::warn!("{warning}");
        warnings.push(warning);
    }
    let atom_bound = (m0 > 0.0).then(|| atom_count_bound(m0));
    let k_searched = match atom_bound {
        Some(b) if condition.satisfied => k_max.min(b),
        _ => k_max,
    };
    let runs = par::map_range(1..k_searched + 1, |k| optimize_masses_seeded(&curve, k, seed));
    let per_k = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best = &per_k[0];
    for candidate in &per_k[1..] {
        if candidate.value < best.value - 1e-12 * best.value.abs() {
            best = candidate;
        }
    }
    let masses: Vec<f64> = best.masses.iter().copied().filter(|&m| m > 0.0).collect();
    Ok(AtomicSolution {
        k: masses.len(),
        value: best.value,
        regime: best.regime,
        masses,
        m0,
        atom_bound,
        k_searched,
        per_k: per_k.clone(),
        condition,
        warnings,
    })
}

/// Repeatedly merges the two lightest atoms while both weigh less than m₀/2.
pub fn merge_light_atoms(masses: &[f64], m0: f64) -> Vec<f64> {
    let mut out: Vec<f64> = masses.iter().copied().filter(|&m| m > 0.0).collect();
    loop {
        out.sort_by(|a, b| b.total_cmp(a));
        let len = out.len();
        if len < 2 || out[len - 2] >= m0 / 2.0 {
            return out;
        }
        let merged = out[len - 1] + out[len - 2];
        out.truncate(len - 2);
        out.push(merged);
    }
}

/// How atoms are placed in ℝⁿ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Along the first axis.
    Line,
    /// On a square lattice in the first two axes (n ≥ 2).
    Lattice,
}

/// Places disjoint subcities with the given masses and prices them.
pub fn assemble_rn_solution(
    masses: &[f64],
    f: &FunctionFamily,
    g: &ConcentrationFamily,
    p: f64,
    n: usize,
    layout: Layout,
    cells_per_axis: usize,
) -> Result<PlanSolution> {
    assemble_rn_solution_at(masses, f, g, p, n, layout, cells_per_axis, &vec![0.0; n])
}

/// As [`assemble_rn_solution`], with the first atom at `origin`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_rn_solution_at(
    masses: &[f64],
    f: &FunctionFamily,
    g: &ConcentrationFamily,
    p: f64,
    n: usize,
    layout: Layout,
    cells_per_axis: usize,
    origin: &[f64],
) -> Result<PlanSolution> {
    if masses.is_empty() || masses.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidInput("assembly needs positive masses".into()));
    }
    if origin.len() != n || n == 0 {
        return Err(Error::InvalidInput("origin dimension mismatch".into()));
    }
    let model = SubcityModel::new(f.clone(), g.clone(), p, n);
    let r_bar = model.radius(1.0)?;
    let spacing = 2.0 * r_bar * (1.0 + LAYOUT_GAP);
    let columns = match layout {
        Layout::Line => masses.len(),
        Layout::Lattice if n >= 2 => (masses.len() as f64).sqrt().ceil() as usize,
        Layout::Lattice => masses.len(),
    };
    let points: Vec<Vec<f64>> = (0..masses.len())
        .map(|i| {
            let mut x = origin.to_vec();
            x[0] += spacing * (i % columns) as f64;
            if n >= 2 {
                x[1] += spacing * (i / columns) as f64;
            }
            x
        })
        .collect();
    let mut profiles = Vec::with_capacity(masses.len());
    for (x, &m) in points.iter().zip(masses) {
        profiles.push(SubcityProfile::new(x.clone(), m, f, p)?);
    }
    let nu = AtomicMeasure::from_parts(n, points.clone(), masses.to_vec())?;

    let margin = r_bar * 0.02;
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|d| {
            let lo = profiles.iter().map(|s| s.center[d] - s.radius).fold(f64::INFINITY, f64::min);
            let hi = profiles.iter().map(|s| s.center[d] + s.radius).fold(f64::NEG_INFINITY, f64::max);
            (lo - margin, hi + margin)
        })
        .collect();
    let shortest = bounds.iter().map(|(lo, hi)| hi - lo).fold(f64::INFINITY, f64::min);
    let resolution: Vec<usize> = bounds
        .iter()
        .map(|(lo, hi)| ((cells_per_axis as f64) * (hi - lo) / shortest).round().max(1.0) as usize)
        .collect();
    let grid = Grid::new(Domain::bounded(bounds)?, resolution)?;
    let weights = DualWeights { c: profiles.iter().map(|s| s.weight).collect() };
    let mu = density_from_weights(&nu, &weights, f, p, &grid)?;

    let transport: f64 = profiles.iter().map(|s| crate::semidiscrete::transport_integral(f, p, n, s.radius)).sum();
    let penalty: f64 = profiles.iter().map(|s| crate::semidiscrete::penalty_integral(f, p, n, s.radius)).sum();
    let service = eval_g(g, &nu);
    let objective = Objective::new(transport, penalty, service);
    let grid_objective = grid_terms(&mu, &nu, f, g, p)?;
    Ok(PlanSolution { mu, nu, profiles, objective, grid_objective, heuristic: false, history: Vec::new() })
}

/// Terms of the objective measured on the grid.
fn grid_terms(mu: &GridDensity, nu: &AtomicMeasure, f: &FunctionFamily, g: &ConcentrationFamily, p: f64) -> Result<Objective> {
    let (cloud, _) = density_cloud(mu, nu.total_mass())?;
    let points: Vec<Vec<f64>> = nu.atoms().iter().map(|a| a.point.clone()).collect();
    let atoms = crate::measures::WeightedPointCloud::from_points(&points, nu.masses())?;
    let plan = solve_discrete_transport(&cloud, &atoms, p)?;
    Ok(Objective::new(plan.total_cost(), eval_f(f, mu), eval_g(g, nu)))
}

/// Settings for [`solve_bounded`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundedOptions {
    pub cells_per_axis: usize,
    pub rounds: usize,
    /// Stop when a round improves the objective by less than this fraction.
    pub rel_tol: f64,
    /// Keep the atom positions; only masses move.
    pub fixed_sites: bool,
    pub weights: WeightOptions,
}

impl Default for BoundedOptions {
    fn default() -> Self {
        BoundedOptions { cells_per_axis: 64, rounds: 20, rel_tol: 1e-8, fixed_sites: false, weights: WeightOptions::default() }
    }
}

struct Evaluated {
    nu: AtomicMeasure,
    mu: MuSolution,
    total: f64,
}

fn evaluate(nu: AtomicMeasure, f: &FunctionFamily, g: &ConcentrationFamily, p: f64, grid: &Grid, options: WeightOptions) -> Result<Evaluated> {
    let mu = min_fp_nu_with(&nu, f, p, grid, options)?;
    let total = mu.breakdown.total + eval_g(g, &nu);
    Ok(Evaluated { nu, mu, total })
}

/// Point minimising Σ wⱼ |xⱼ − y|^p over a cell's residents.
fn cell_center(points: &[Vec<f64>], w: &[f64], p: f64, start: &[f64]) -> Vec<f64> {
    let dim = start.len();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return start.to_vec();
    }
    let mean: Vec<f64> = (0..dim).map(|d| points.iter().zip(w).map(|(x, w)| w * x[d]).sum::<f64>() / total).collect();
    if (p - 2.0).abs() < 1e-15 {
        return mean;
    }
    if (p - 1.0).abs() < 1e-15 {
        return (0..dim)
            .map(|d| {
                let mut pairs: Vec<(f64, f64)> = points.iter().zip(w).map(|(x, &w)| (x[d], w)).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut acc = 0.0;
                for (x, w) in &pairs {
                    acc += w;
                    if acc >= 0.5 * total {
                        return *x;
                    }
                }
                pairs.last().unwrap().0
            })
            .collect();
    }
    // Weiszfeld-type fixed point for general p.
    let mut y = mean;
    for _ in 0..100 {
        let mut num = vec![0.0; dim];
        let mut den = 0.0;
        for (x, &wj) in points.iter().zip(w) {
            let r = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt().max(1e-12);
            let c = wj * r.powf(p - 2.0);
            num.iter_mut().zip(x).for_each(|(n, xi)| *n += c * xi);
            den += c;
        }
        let next: Vec<f64> = num.iter().map(|v| v / den).collect();
        let shift = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = next;
        if shift < 1e-14 {
            break;
        }
    }
    y
}

/// Alternating heuristic on a bounded box: resident step for fixed atoms,
/// then atom moves to the centres of their catchments and pairwise mass
/// exchanges, keeping only changes that lower the objective.
pub fn solve_bounded(
    omega: &Domain,
    f: &FunctionFamily,
    g: &ConcentrationFamily,
    p: f64,
    init: &AtomicMeasure,
    options: BoundedOptions,
) -> Result<PlanSolution> {
    if !omega.is_bounded() {
        return Err(Error::UnboundedDomain);
    }
    if !init.is_probability(crate::measures::INPUT_PROB_TOL) {
        return Err(Error::NotProbability { total: init.total_mass() });
    }
    let grid = Grid::uniform(omega.clone(), options.cells_per_axis)?;
    let mut current = evaluate(init.clone(), f, g, p, &grid, options.weights)?;
    let mut history = vec![current.total];
    let centers = grid.centers();
    let dim = grid.dim();

    for _ in 0..options.rounds {
        let start = current.total;
        if !options.fixed_sites {
            let k = current.nu.len();
            let moved: Vec<Atom> = (0..k)
                .map(|i| {
                    let mut pts = Vec::new();
                    let mut w = Vec::new();
                    for cell in 0..grid.len() {
                        let m = current.mu.split[cell * k + i];
                        if m > 0.0 {
                            pts.push(centers[cell * dim..(cell + 1) * dim].to_vec());
                            w.push(m);
                        }
                    }
                    let atom = &current.nu.atoms()[i];
                    let mut point = cell_center(&pts, &w, p, &atom.point);
                    clamp_into(omega, &mut point);
                    Atom { point, mass: atom.mass }
                })
                .collect();
            if let Ok(nu) = AtomicMeasure::new(dim, moved) {
                if let Ok(trial) = evaluate(nu, f, g, p, &grid, options.weights) {
                    if trial.total < current.total {
                        current = trial;
                    }
                }
            }
        }
        exchange_masses(&mut current, f, g, p, &grid, options.weights);
        history.push(current.total);
        log::info!("bounded round {}: objective {:.12e}", history.len() - 1, current.total);
        if start - current.total <= options.rel_tol * start.abs() {
            break;
        }
    }

    let k = current.nu.len();
    let profiles = current
        .nu
        .atoms()
        .iter()
        .zip(&current.mu.weights.weights.c)
        .map(|(a, &c)| SubcityProfile {
            center: a.point.clone(),
            mass: a.mass,
            radius: if c > 0.0 { c.powf(1.0 / p) } else { 0.0 },
            weight: c,
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(profiles.len(), k);
    let b = current.mu.breakdown;
    let objective = Objective::new(b.transport, b.penalty, eval_g(g, &current.nu));
    Ok(PlanSolution {
        mu: current.mu.density,
        nu: current.nu,
        profiles,
        grid_objective: objective,
        objective,
        heuristic: true,
        history,
    })
}

fn clamp_into(omega: &Domain, x: &mut [f64]) {
    if let Some(bounds) = omega.bounds() {
        for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Moves mass between pairs of atoms along the envelope gradient cᵢ + g′(aᵢ).
fn exchange_masses(current: &mut Evaluated, f: &FunctionFamily, g: &ConcentrationFamily, p: f64, grid: &Grid, options: WeightOptions) {
    let k = current.nu.len();
    for i in 0..k {
        for j in i + 1..k {
            let atoms = current.nu.atoms();
            let c = &current.mu.weights.weights.c;
            let gi = c[i] + g.dg(atoms[i].mass);
            let gj = c[j] + g.dg(atoms[j].mass);
            let (from, to) = if gi > gj { (i, j) } else { (j, i) };
            let gap = (gi - gj).abs();
            if gap <= 0.0 {
                continue;
            }
            let mut delta = (0.25 * atoms[from].mass).min(0.1 * gap);
            for _ in 0..6 {
                let mut next = atoms.to_vec();
                next[from].mass -= delta;
                next[to].mass += delta;
                if next[from].mass <= 1e-9 {
                    break;
                }
                let trial = AtomicMeasure::new(grid.dim(), next).and_then(|nu| evaluate(nu, f, g, p, grid, options));
                if let Ok(trial) = trial {
                    if trial.total < current.total {
                        *current = trial;
                        break;
                    }
                }
                delta *= 0.5;
            }
        }
    }
}

/// Best masses on a fixed list of candidate sites.
#[derive(Debug, Clone, Serialize)]
pub struct SiteSolution {
    /// One entry per candidate site; zero where the site is unused.
    pub masses: Vec<f64>,
    /// Resident value (dual of the grid problem) plus G.
    pub value: f64,
    pub subsets_tried: usize,
}

/// Minimises the grid objective over masses on fixed sites: projected
/// gradient with the envelope gradient cᵢ + g′(aᵢ), started from the equal
/// split on every non-empty subset of sites.
pub fn solve_on_sites(
    sites: &[Vec<f64>],
    f: &FunctionFamily,
    g: &ConcentrationFamily,
    p: f64,
    grid: &Grid,
    options: WeightOptions,
) -> Result<SiteSolution> {
    let s = sites.len();
    if s == 0 {
        return Err(Error::EmptyCloud);
    }
    if s > 16 {
        return Err(Error::SearchSpaceTooLarge { size: 1u128 << s, limit: 1 << 16 });
    }
    let subsets: Vec<usize> = (1..1usize << s).collect();
    let runs = par::map_slice(&subsets, |&mask| -> Result<(Vec<f64>, f64)> {
        let members: Vec<usize> = (0..s).filter(|i| mask & (1 << i) != 0).collect();
        let start = vec![1.0 / members.len() as f64; members.len()];
        let (local, value) = descend_on_sites(&members.iter().map(|&i| sites[i].clone()).collect::<Vec<_>>(), start, f, g, p, grid, options)?;
        let mut masses = vec![0.0; s];
        for (&i, m) in members.iter().zip(local) {
            masses[i] = m;
        }
        Ok((masses, value))
    });
    let mut best: Option<(Vec<f64>, f64)> = None;
    for run in runs {
        let (masses, value) = run?;
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((masses, value));
        }
    }
    let (masses, value) = best.expect("non-empty subsets");
    Ok(SiteSolution { masses, value, subsets_tried: subsets.len() })
}

/// Value and envelope gradient for positive masses on `sites`.
fn site_value(sites: &[Vec<f64>], masses: &[f64], f: &FunctionFamily, g: &ConcentrationFamily, p: f64, grid: &Grid, options: WeightOptions) -> Result<(f64, Vec<f64>)> {
    let active: Vec<usize> = (0..masses.len()).filter(|&i| masses[i] > 0.0).collect();
    let nu = AtomicMeasure::from_parts(grid.dim(), active.iter().map(|&i| sites[i].clone()).collect(), active.iter().map(|&i| masses[i]).collect())?;
    let sol = crate::semidiscrete::solve_weights(&nu, f, p, grid, options)?;
    let mut grad = vec![f64::INFINITY; masses.len()];
    for (slot, &i) in active.iter().enumerate() {
        grad[i] = sol.weights.c[slot] + g.dg(masses[i]);
    }
    for i in 0..masses.len() {
        if masses[i] <= 0.0 {
            grad[i] = g.dg(0.0);
        }
    }
    Ok((sol.dual_value + masses.iter().map(|&m| g.g(m)).sum::<f64>(), grad))
}

fn descend_on_sites(
    sites: &[Vec<f64>],
    start: Vec<f64>,
    f: &FunctionFamily,
    g: &ConcentrationFamily,
    p: f64,
    grid: &Grid,
    options: WeightOptions,
) -> Result<(Vec<f64>, f64)> {
    let mut m = start;
    let (mut value, mut grad) = site_value(sites, &m, f, g, p, grid, options)?;
    if m.len() == 1 {
        return Ok((m, value));
    }
    let mut step = 1e-1;
    for _ in 0..200 {
        let mut moved = false;
        for _ in 0..40 {
            let trial = project_simplex(&m.iter().zip(&grad).map(|(x, g)| x - step * g).collect::<Vec<_>>());
            let decrease: f64 = trial.iter().zip(&m).zip(&grad).map(|((t, x), g)| if g.is_finite() { g * (t - x) } else { 0.0 }).sum();
            if let Ok((v, gr)) = site_value(sites, &trial, f, g, p, grid, options) {
                if v <= value + 1e-4 * decrease && v < value {
                    let change = trial.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    m = trial;
                    value = v;
                    grad = gr;
                    moved = change > 1e-12;
                    step *= 2.0;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((m, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(a: f64, q: f64, b: f64, r: f64, p: f64, n: usize) -> SubcityModel {
        SubcityModel::new(FunctionFamily::power(a, q).unwrap(), ConcentrationFamily::power(b, r).unwrap(), p, n)
    }

    #[test]
    fn simplex_projection() {
        let v = project_simplex(&[0.5, 0.8, -0.3]);
        assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(v[0], 0.35, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.65, epsilon = 1e-15);
        assert_eq!(v[2], 0.0);
        assert_eq!(project_simplex(&[f64::NEG_INFINITY, 2.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn one_atom_takes_everything() {
        let curve = EnergyCurve::build_with(model(1.0, 2.0, 1.0, 0.5, 2.0, 1), 1e-3, 20).unwrap();
        let opt = optimize_masses(&curve, 1).unwrap();
        assert_eq!(opt.masses, vec![1.0]);
        assert_relative_eq!(opt.value, curve.model.energy(1.0).unwrap(), epsilon = 1e-15);
        assert!(matches!(optimize_masses(&curve, 0), Err(Error::InvalidK { k: 0 })));
    }

    #[test]
    fn two_atoms_beat_grid_and_simple_splits() {
        let curve = EnergyCurve::build_with(model(3.0, 2.0, 0.2, 0.6, 2.0, 1), 1e-3, 20).unwrap();
        let energy = Energy { model: &curve.model };
        let opt = optimize_masses(&curve, 2).unwrap();
        let e1 = energy.value(1.0).unwrap();
        let e_half = energy.value(0.5).unwrap();
        assert!(opt.value <= e1.min(2.0 * e_half) + 1e-15);
        let (_, grid) = simplex_grid_search(&energy, 2).unwrap();
        assert!(opt.value <= grid + 1e-6);
        assert_relative_eq!(opt.masses.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn strong_concentration_reward_gives_one_atom() {
        let sol = solve_atomic_problem(&FunctionFamily::power(0.1, 2.0).unwrap(), &ConcentrationFamily::power(5.0, 0.2).unwrap(), 2.0, 1, 4).unwrap();
        assert_eq!(sol.k, 1);
    }

    #[test]
    fn strong_crowding_penalty_splits() {
        let sol = solve_atomic_problem(&FunctionFamily::power(20.0, 2.0).unwrap(), &ConcentrationFamily::power(0.05, 0.5).unwrap(), 2.0, 1, 6).unwrap();
        assert!(sol.k > 1, "{sol:?}");
        if let Some(bound) = sol.atom_bound {
            assert!(sol.k <= bound);
        }
        for w in sol.per_k.windows(2) {
            assert!(sol.value <= w[0].value + 1e-12 && sol.value <= w[1].value + 1e-12);
        }
        assert!(sol.masses.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn merging_light_atoms() {
        assert_eq!(merge_light_atoms(&[0.5, 0.3, 0.1, 0.1], 0.5), vec![0.5, 0.3, 0.2]);
        assert_eq!(merge_light_atoms(&[0.6, 0.4], 0.5), vec![0.6, 0.4]);
    }

    #[test]
    fn assembled_single_atom_matches_energy() {
        let f = FunctionFamily::Quadratic;
        let g = ConcentrationFamily::power(1.0, 0.5).unwrap();
        let sol = assemble_rn_solution(&[1.0], &f, &g, 2.0, 1, Layout::Line, 400).unwrap();
        let e1 = SubcityModel::new(f, g, 2.0, 1).energy(1.0).unwrap();
        assert_relative_eq!(sol.objective.total, e1, max_relative = 1e-12);
        assert_relative_eq!(sol.grid_objective.total, e1, max_relative = 1e-2);
    }

    #[test]
    fn assembled_atoms_are_separated_and_translation_invariant() {
        let f = FunctionFamily::power(2.0, 2.0).unwrap();
        let g = ConcentrationFamily::power(0.3, 0.5).unwrap();
        let a = assemble_rn_solution(&[0.5, 0.3, 0.2], &f, &g, 2.0, 2, Layout::Lattice, 40).unwrap();
        let b = assemble_rn_solution_at(&[0.5, 0.3, 0.2], &f, &g, 2.0, 2, Layout::Lattice, 40, &[3.0, -1.0]).unwrap();
        assert_eq!(a.objective.total, b.objective.total);
        let r_bar = SubcityModel::new(f, g, 2.0, 2).radius(1.0).unwrap();
        let atoms = a.nu.atoms();
        for i in 0..atoms.len() {
            for j in i + 1..atoms.len() {
                let d = crate::measures::cost(&atoms[i].point, &atoms[j].point, 1.0);
                assert!(d >= 2.0 * r_bar);
            }
        }
    }

    #[test]
    fn p_one_center_is_median() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0]];
        assert_eq!(cell_center(&pts, &[1.0, 1.0, 1.0], 1.0, &[0.0]), vec![1.0]);
        let y = cell_center(&pts, &[1.0, 1.0, 1.0], 1.5, &[0.0]);
        assert!(y[0] > 1.0 && y[0] < 2.0);
    }

    #[test]
    fn bounded_objective_never_increases() {
        let omega = Domain::unit_cube(1);
        let f = FunctionFamily::power(1.0, 2.0).unwrap();
        let g = ConcentrationFamily::power(0.2, 0.5).unwrap();
        let init = AtomicMeasure::from_parts(1, vec![vec![0.2], vec![0.6]], vec![0.3, 0.7]).unwrap();
        let sol = solve_bounded(&omega, &f, &g, 2.0, &init, BoundedOptions { cells_per_axis: 120, rounds: 5, ..Default::default() }).unwrap();
        assert!(sol.heuristic);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
        assert_relative_eq!(sol.objective.total, *sol.history.last().unwrap(), max_relative = 1e-12);
    }
}
