//! Brute-force ground truth on tiny discretisations.
//!
//! Every atomic ν whose masses are multiples of 1/R on a short list of
//! candidate sites is enumerated. For each ν the resident problem on the grid
//!
//! ```text
//! min Σ γ_ci d_ci + Σ_c vol·f(Σ_i γ_ci / vol)   s.t.  Σ_c γ_ci = aᵢ, γ ≥ 0
//! ```
//!
//! is solved directly over transport plans γ by exact block minimisation per
//! atom, and certified by the dual bound Σ λᵢaᵢ − Σ_c vol·f*(maxᵢ(λᵢ − d_ci) ∨ 0).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{ConcentrationFamily, FunctionFamily};
use crate::measures::{cost, Atom, AtomicMeasure, Grid, GridDensity};
use crate::par;
use crate::planner::{Objective, PlanSolution};
use crate::semidiscrete::SubcityProfile;

pub const MAX_CELLS: usize = 64;
pub const MAX_SITES: usize = 8;
pub const MAX_CONFIGURATIONS: u128 = 10_000_000;
pub const DEFAULT_MASS_RESOLUTION: usize = 20;

/// Duality gap, relative to the objective scale, at which an inner solve stops.
const INNER_GAP: f64 = 1e-12;
const INNER_SWEEPS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct BruteForceInstance {
    pub grid: Grid,
    pub sites: Vec<Vec<f64>>,
    /// Masses are multiples of 1/mass_resolution.
    pub mass_resolution: usize,
    pub f: FunctionFamily,
    pub g: ConcentrationFamily,
    pub p: f64,
}

impl BruteForceInstance {
    /// Number of mass vectors to enumerate: C(R + s − 1, s − 1).
    pub fn configurations(&self) -> u128 {
        binomial((self.mass_resolution + self.sites.len() - 1) as u128, (self.sites.len() - 1) as u128)
    }

    fn check(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if self.mass_resolution == 0 {
            return Err(Error::InvalidInput("mass resolution must be positive".into()));
        }
        if self.grid.len() > MAX_CELLS {
            return Err(Error::SearchSpaceTooLarge { size: self.grid.len() as u128, limit: MAX_CELLS as u128 });
        }
        if self.sites.len() > MAX_SITES {
            return Err(Error::SearchSpaceTooLarge { size: self.sites.len() as u128, limit: MAX_SITES as u128 });
        }
        let size = self.configurations();
        if size > MAX_CONFIGURATIONS {
            return Err(Error::SearchSpaceTooLarge { size, limit: MAX_CONFIGURATIONS });
        }
        for (atom, s) in self.sites.iter().enumerate() {
            if s.len() != self.grid.dim() || !self.grid.domain().contains(s) {
                return Err(Error::AtomOutsideDomain { atom });
            }
        }
        Ok(())
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Optimal resident plan for a fixed ν on the grid.
#[derive(Debug, Clone, Serialize)]
pub struct InnerSolution {
    /// γ[cell * k + atom]
    pub plan: Vec<f64>,
    /// Multipliers of the per-atom mass constraints (the dual weights).
    pub multipliers: Vec<f64>,
    pub transport: f64,
    pub penalty: f64,
    /// transport + penalty (primal value).
    pub value: f64,
    pub lower_bound: f64,
    pub sweeps: usize,
}

impl InnerSolution {
    pub fn density(&self, grid: &Grid, k: usize) -> Result<GridDensity> {
        let vol = grid.cell_volume();
        let values = (0..grid.len()).map(|c| self.plan[c * k..(c + 1) * k].iter().sum::<f64>() / vol).collect();
        GridDensity::new(grid.clone(), values)
    }
}

/// Solves the resident problem for atoms `sites` with masses `masses` (zero
/// masses allowed) on `grid`.
pub fn inner_problem(grid: &Grid, sites: &[Vec<f64>], masses: &[f64], f: &FunctionFamily, p: f64) -> Result<InnerSolution> {
    let k = sites.len();
    let cells = grid.len();
    let vol = grid.cell_volume();
    let dim = grid.dim();
    let centers = grid.centers();
    let d: Vec<f64> = (0..cells * k).map(|idx| cost(&centers[(idx / k) * dim..(idx / k + 1) * dim], &sites[idx % k], p)).collect();
    let mut plan = vec![0.0; cells * k];
    let mut totals = vec![0.0; cells];
    let mut lambda = vec![0.0; k];
    let scale = masses.iter().sum::<f64>().max(1e-300);

    let primal = |plan: &[f64], totals: &[f64]| -> (f64, f64) {
        let t: f64 = plan.iter().zip(&d).map(|(g, d)| g * d).sum();
        let pen: f64 = totals.iter().map(|&m| vol * f.f(m / vol)).sum();
        (t, pen)
    };
    let dual = |lambda: &[f64]| -> f64 {
        let linear: f64 = lambda.iter().zip(masses).map(|(l, a)| l * a).sum();
        let conj: f64 = (0..cells)
            .map(|c| {
                let level = (0..k).filter(|&i| masses[i] > 0.0).map(|i| lambda[i] - d[c * k + i]).fold(0.0, f64::max);
                vol * f.conjugate(level)
            })
            .sum();
        linear - conj
    };

    let mut sweeps = 0;
    let (mut transport, mut penalty) = (0.0, 0.0);
    let mut lower = f64::NEG_INFINITY;
    while sweeps < INNER_SWEEPS {
        sweeps += 1;
        for i in 0..k {
            // Remove atom i's shipments, then refill them optimally.
            for c in 0..cells {
                totals[c] -= plan[c * k + i];
                plan[c * k + i] = 0.0;
            }
            if masses[i] <= 0.0 {
                continue;
            }
            let shipped = |l: f64| -> f64 { (0..cells).map(|c| (vol * f.k(l - d[c * k + i]) - totals[c]).max(0.0)).sum() };
            let mut lo = (0..cells).map(|c| d[c * k + i] + f.df(totals[c] / vol)).fold(f64::INFINITY, f64::min);
            let mut step = 1e-3 * (1.0 + lo.abs());
            let mut hi = lo + step;
            while shipped(hi) < masses[i] {
                lo = hi;
                step *= 2.0;
                hi += step;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if shipped(mid) < masses[i] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lambda[i] = hi;
            let raw: Vec<f64> = (0..cells).map(|c| (vol * f.k(hi - d[c * k + i]) - totals[c]).max(0.0)).collect();
            let sum: f64 = raw.iter().sum();
            for c in 0..cells {
                let g = raw[c] * masses[i] / sum;
                plan[c * k + i] = g;
                totals[c] += g;
            }
        }
        (transport, penalty) = primal(&plan, &totals);
        lower = dual(&lambda);
        if transport + penalty - lower <= INNER_GAP * (transport + penalty).abs().max(scale) {
            break;
        }
    }
    Ok(InnerSolution { plan, multipliers: lambda, transport, penalty, value: transport + penalty, lower_bound: lower, sweeps })
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub mu: GridDensity,
    pub nu: AtomicMeasure,
    /// Masses per candidate site, in multiples of 1/resolution.
    pub units: Vec<usize>,
    pub objective: Objective,
    pub lower_bound: f64,
    pub configurations: u128,
    pub mass_resolution: usize,
    pub inner: InnerSolution,
}

impl BruteForceResult {
    pub fn value(&self) -> f64 {
        self.objective.total
    }

    pub fn to_plan_solution(&self, p: f64) -> PlanSolution {
        let profiles = self
            .units
            .iter()
            .enumerate()
            .filter(|(_, &u)| u > 0)
            .zip(self.nu.atoms())
            .map(|((site, _), a)| {
                let c = self.inner.multipliers[site];
                SubcityProfile { center: a.point.clone(), mass: a.mass, radius: c.max(0.0).powf(1.0 / p), weight: c }
            })
            .collect();
        PlanSolution {
            mu: self.mu.clone(),
            nu: self.nu.clone(),
            profiles,
            objective: self.objective,
            grid_objective: self.objective,
            heuristic: false,
            history: Vec::new(),
        }
    }
}

/// All compositions of `total` into `parts` non-negative parts, in
/// lexicographic order.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0; parts];
    fn rec(pos: usize, left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == current.len() {
            current[pos] = left;
            out.push(current.clone());
            return;
        }
        for v in 0..=left {
            current[pos] = v;
            rec(pos + 1, left - v, current, out);
        }
    }
    rec(0, total, &mut current, &mut out);
    out
}

/// Global minimiser of the discretised objective over quantised ν.
pub fn brute_force_full(instance: &BruteForceInstance) -> Result<BruteForceResult> {
    instance.check()?;
    let r = instance.mass_resolution;
    let configs = compositions(r, instance.sites.len());
    let evaluated = par::map_slice(&configs, |units| -> Result<(f64, InnerSolution)> {
        let masses: Vec<f64> = units.iter().map(|&u| u as f64 / r as f64).collect();
        let inner = inner_problem(&instance.grid, &instance.sites, &masses, &instance.f, instance.p)?;
        let service: f64 = masses.iter().map(|&m| instance.g.g(m)).sum();
        Ok((inner.value + service, inner))
    });
    let mut best: Option<(usize, f64, InnerSolution)> = None;
    for (idx, item) in evaluated.into_iter().enumerate() {
        let (value, inner) = item?;
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((idx, value, inner));
        }
    }
    let (idx, value, inner) = best.expect("at least one configuration");
    log::info!("brute force: best of {} configurations {:?} with value {value:.12e}", configs.len(), configs[idx]);
    let units = configs[idx].clone();
    let atoms: Vec<Atom> = units
        .iter()
        .zip(&instance.sites)
        .filter(|(&u, _)| u > 0)
        .map(|(&u, s)| Atom { point: s.clone(), mass: u as f64 / r as f64 })
        .collect();
    let nu = AtomicMeasure::new(instance.grid.dim(), atoms)?;
    let mu = inner.density(&instance.grid, instance.sites.len())?;
    let service = nu.atoms().iter().map(|a| instance.g.g(a.mass)).sum();
    let objective = Objective::new(inner.transport, inner.penalty, service);
    Ok(BruteForceResult {
        mu,
        nu,
        units,
        objective,
        lower_bound: inner.lower_bound + service,
        configurations: configs.len() as u128,
        mass_resolution: r,
        inner,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CompareTolerances {
    pub objective: f64,
    pub l1: f64,
    pub atoms: f64,
}

impl Default for CompareTolerances {
    fn default() -> Self {
        CompareTolerances { objective: 1e-6, l1: 2e-2, atoms: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// a − b.
    pub objective_gap: f64,
    pub l1_gap: f64,
    /// Largest distance between paired atoms.
    pub atom_distance: f64,
    /// Σ |mass difference| over pairs plus the mass of unpaired atoms.
    pub atom_mass_gap: f64,
    pub pairs: Vec<(usize, usize)>,
    pub tolerances: CompareTolerances,
    pub passed: bool,
}

/// Compares two solutions on the same grid. Atoms are paired greedily by
/// distance.
pub fn compare_solutions(a: &PlanSolution, b: &PlanSolution, tolerances: CompareTolerances) -> Result<ComparisonReport> {
    let l1_gap = a.mu.l1_distance(&b.mu)?;
    let objective_gap = a.objective.total - b.objective.total;
    let (xa, xb) = (a.nu.atoms(), b.nu.atoms());
    let mut candidates: Vec<(f64, usize, usize)> =
        (0..xa.len()).flat_map(|i| (0..xb.len()).map(move |j| (i, j))).map(|(i, j)| (cost(&xa[i].point, &xb[j].point, 1.0), i, j)).collect();
    candidates.sort_by(|u, v| u.0.total_cmp(&v.0).then(u.1.cmp(&v.1)).then(u.2.cmp(&v.2)));
    let mut used_a = vec![false; xa.len()];
    let mut used_b = vec![false; xb.len()];
    let mut pairs = Vec::new();
    let mut atom_distance = 0.0f64;
    let mut atom_mass_gap = 0.0;
    for (dist, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
            atom_distance = atom_distance.max(dist);
            atom_mass_gap += (xa[i].mass - xb[j].mass).abs();
        }
    }
    atom_mass_gap += xa.iter().zip(&used_a).filter(|(_, &u)| !u).map(|(x, _)| x.mass).sum::<f64>();
    atom_mass_gap += xb.iter().zip(&used_b).filter(|(_, &u)| !u).map(|(x, _)| x.mass).sum::<f64>();
    let passed = objective_gap.abs() <= tolerances.objective
        && l1_gap <= tolerances.l1
        && atom_distance <= tolerances.atoms
        && atom_mass_gap <= tolerances.atoms;
    Ok(ComparisonReport { objective_gap, l1_gap, atom_distance, atom_mass_gap, pairs, tolerances, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Domain;
    use crate::semidiscrete::min_fp_nu;
    use approx::assert_relative_eq;

    fn line(cells: usize) -> Grid {
        Grid::uniform(Domain::unit_cube(1), cells).unwrap()
    }

    #[test]
    fn composition_count_matches_binomial() {
        assert_eq!(compositions(20, 3).len(), 231);
        assert_eq!(binomial(22, 2), 231);
        assert_eq!(compositions(4, 1), vec![vec![4]]);
        assert_eq!(compositions(2, 2), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
    }

    #[test]
    fn guards() {
        let inst = BruteForceInstance {
            grid: line(65),
            sites: vec![vec![0.5]],
            mass_resolution: 20,
            f: FunctionFamily::Quadratic,
            g: ConcentrationFamily::power(1.0, 0.5).unwrap(),
            p: 2.0,
        };
        assert!(matches!(brute_force_full(&inst), Err(Error::SearchSpaceTooLarge { .. })));
        let inst = BruteForceInstance { grid: line(32), sites: (0..8).map(|i| vec![i as f64 / 8.0]).collect(), mass_resolution: 200, ..inst };
        assert!(matches!(brute_force_full(&inst), Err(Error::SearchSpaceTooLarge { .. })));
    }

    #[test]
    fn inner_problem_is_certified_and_matches_weights() {
        let grid = line(32);
        let f = FunctionFamily::power(1.5, 2.5).unwrap();
        let sites = vec![vec![0.3], vec![0.65]];
        let inner = inner_problem(&grid, &sites, &[0.4, 0.6], &f, 2.0).unwrap();
        assert!(inner.value - inner.lower_bound <= 1e-10);
        let nu = AtomicMeasure::from_parts(1, sites, vec![0.4, 0.6]).unwrap();
        let mu = min_fp_nu(&nu, &f, 2.0, &grid).unwrap();
        assert_relative_eq!(mu.breakdown.dual, inner.value, max_relative = 1e-7);
        let l1 = inner.density(&grid, 2).unwrap().l1_distance(&mu.density).unwrap();
        assert!(l1 <= 2e-2, "l1 {l1}");
    }

    #[test]
    fn single_site_takes_all_mass() {
        let inst = BruteForceInstance {
            grid: line(32),
            sites: vec![vec![0.5]],
            mass_resolution: 20,
            f: FunctionFamily::Quadratic,
            g: ConcentrationFamily::power(1.0, 0.5).unwrap(),
            p: 2.0,
        };
        let res = brute_force_full(&inst).unwrap();
        assert_eq!(res.units, vec![20]);
        assert_eq!(res.configurations, 1);
        assert_relative_eq!(res.mu.total_mass(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn identical_solutions_compare_equal() {
        let inst = BruteForceInstance {
            grid: line(16),
            sites: vec![vec![0.25], vec![0.75]],
            mass_resolution: 10,
            f: FunctionFamily::Quadratic,
            g: ConcentrationFamily::power(0.1, 0.5).unwrap(),
            p: 2.0,
        };
        let sol = brute_force_full(&inst).unwrap().to_plan_solution(2.0);
        let report = compare_solutions(&sol, &sol, CompareTolerances::default()).unwrap();
        assert_eq!(report.objective_gap, 0.0);
        assert_eq!(report.l1_gap, 0.0);
        assert_eq!(report.atom_distance, 0.0);
        assert!(report.passed);
        let mut permuted = sol.clone();
        let mut atoms = sol.nu.atoms().to_vec();
        atoms.reverse();
        permuted.nu = AtomicMeasure::new(1, atoms).unwrap();
        let report = compare_solutions(&sol, &permuted, CompareTolerances::default()).unwrap();
        assert_eq!(report.atom_distance, 0.0);
        assert_eq!(report.atom_mass_gap, 0.0);
    }
}
