//! The μ-subproblem: for atomic ν, minimise T_p(μ, ν) + F(μ) over densities μ.
//!
//! The minimiser has the form u(x) = k(maxᵢ(cᵢ − |x − xᵢ|^p) ∨ 0): a union of
//! radial bumps around the atoms, truncated where two bumps meet.

mod radial;
mod weights;

pub use radial::{mass_of_radius, penalty_integral, radius_of_mass, slope_integral, transport_integral};
pub use weights::{cell_masses, density_from_weights, solve_weights, DualWeights, WeightOptions, WeightSolution};

pub(crate) use weights::Layout;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{eval_f, FunctionFamily};
use crate::measures::{AtomicMeasure, Grid, GridDensity, WeightedPointCloud};
use crate::transport::{solve_discrete_transport, TransportPlan};

/// One atom with the radial bump it would carry in isolation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubcityProfile {
    pub center: Vec<f64>,
    pub mass: f64,
    pub radius: f64,
    pub weight: f64,
}

impl SubcityProfile {
    pub fn new(center: Vec<f64>, mass: f64, f: &FunctionFamily, p: f64) -> Result<Self> {
        let radius = radius_of_mass(f, p, center.len(), mass)?;
        Ok(SubcityProfile { center, mass, radius, weight: radius.powf(p) })
    }
}

/// Objective terms of a μ-subproblem solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuBreakdown {
    /// T_p between the density and ν, from the exact discrete solver.
    pub transport: f64,
    /// T_p of the cell split implied by the weights (each cell ships to its atom).
    pub transport_cells: f64,
    pub penalty: f64,
    /// transport + penalty.
    pub total: f64,
    /// Dual value Σ cᵢaᵢ − ∫ f*(maxᵢ(cᵢ − dᵢ) ∨ 0).
    pub dual: f64,
}

#[derive(Debug, Clone)]
pub struct MuSolution {
    pub density: GridDensity,
    pub weights: WeightSolution,
    pub breakdown: MuBreakdown,
    /// Optimal plan from the density cloud (positive cells, in grid order) to ν.
    pub plan: TransportPlan,
    /// Grid index of each source point of `plan`.
    pub support: Vec<usize>,
    /// Mass each cell sends to each atom under the weight split, `cell * k + atom`.
    pub split: Vec<f64>,
}

/// Positive cells of a density as a point cloud, rescaled to carry `mass`.
pub fn density_cloud(density: &GridDensity, mass: f64) -> Result<(WeightedPointCloud, Vec<usize>)> {
    let grid = density.grid();
    let vol = density.cell_volume();
    let total = density.total_mass();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let scale = mass / total;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let mut support = Vec::new();
    for (idx, &u) in density.values().iter().enumerate() {
        if u > 0.0 {
            coords.extend(grid.cell_center(idx));
            weights.push(u * vol * scale);
            support.push(idx);
        }
    }
    Ok((WeightedPointCloud::new(grid.dim(), coords, weights)?, support))
}

fn atom_cloud(nu: &AtomicMeasure) -> Result<WeightedPointCloud> {
    let points: Vec<Vec<f64>> = nu.atoms().iter().map(|a| a.point.clone()).collect();
    WeightedPointCloud::from_points(&points, nu.masses())
}

/// Solves the μ-subproblem for ν on `grid` and prices the result.
pub fn min_fp_nu(nu: &AtomicMeasure, f: &FunctionFamily, p: f64, grid: &Grid) -> Result<MuSolution> {
    min_fp_nu_with(nu, f, p, grid, WeightOptions::default())
}

pub fn min_fp_nu_with(
    nu: &AtomicMeasure,
    f: &FunctionFamily,
    p: f64,
    grid: &Grid,
    options: WeightOptions,
) -> Result<MuSolution> {
    if nu.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let layout = Layout::new(nu, p, grid)?;
    let weights = weights::solve_on_layout(&layout, nu, f, p, options, None)?;
    let density = GridDensity::new(grid.clone(), layout.density_values(f, &weights.weights.c))?;
    let split = layout.split_plan(f, &weights.weights.c, weights.final_tau);
    let transport_cells: f64 = split.iter().zip(&layout.dist).map(|(m, d)| m * d).sum();
    let (cloud, support) = density_cloud(&density, nu.total_mass())?;
    let plan = solve_discrete_transport(&cloud, &atom_cloud(nu)?, p)?;
    let penalty = eval_f(f, &density);
    let transport = plan.total_cost();
    let breakdown = MuBreakdown {
        transport,
        transport_cells,
        penalty,
        total: transport + penalty,
        dual: weights.dual_value,
    };
    Ok(MuSolution { density, weights, breakdown, plan, support, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Atom, Domain};
    use approx::assert_relative_eq;

    fn line(cells: usize, lo: f64, hi: f64) -> Grid {
        Grid::new(Domain::bounded(vec![(lo, hi)]).unwrap(), vec![cells]).unwrap()
    }

    fn atoms(points: &[f64], masses: &[f64]) -> AtomicMeasure {
        AtomicMeasure::new(
            1,
            points.iter().zip(masses).map(|(&x, &m)| Atom { point: vec![x], mass: m }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn nonpositive_weights_give_zero_density() {
        let nu = atoms(&[0.3, 0.7], &[0.5, 0.5]);
        let d = density_from_weights(&nu, &DualWeights { c: vec![0.0, -1.0] }, &FunctionFamily::Quadratic, 2.0, &line(50, 0.0, 1.0))
            .unwrap();
        assert!(d.values().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn quadratic_single_atom_density_is_parabola() {
        let grid = line(100, 0.0, 1.0);
        let nu = atoms(&[0.5], &[1.0]);
        let d = density_from_weights(&nu, &DualWeights { c: vec![0.04] }, &FunctionFamily::Quadratic, 2.0, &grid).unwrap();
        for (i, &u) in d.values().iter().enumerate() {
            let x = grid.cell_center(i)[0];
            assert_relative_eq!(u, (0.04 - (x - 0.5) * (x - 0.5)).max(0.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn far_atoms_give_disjoint_bumps() {
        let grid = line(200, 0.0, 2.0);
        let f = FunctionFamily::Quadratic;
        let nu = atoms(&[0.4, 1.6], &[0.5, 0.5]);
        let w = DualWeights { c: vec![0.09, 0.04] };
        let both = density_from_weights(&nu, &w, &f, 2.0, &grid).unwrap();
        for (i, &u) in both.values().iter().enumerate() {
            let x = grid.cell_center(i)[0];
            let a = (0.09 - (x - 0.4).powi(2)).max(0.0);
            let b = (0.04 - (x - 1.6).powi(2)).max(0.0);
            assert!(a == 0.0 || b == 0.0);
            assert_relative_eq!(u, a + b, epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_cells_have_equal_mass() {
        let grid = line(101, 0.0, 1.0);
        let nu = atoms(&[0.35, 0.65], &[0.5, 0.5]);
        let m = cell_masses(&nu, &DualWeights { c: vec![0.1, 0.1] }, &FunctionFamily::Quadratic, 2.0, &grid).unwrap();
        // The centre cell is a tie and goes to atom 0; remove it to compare.
        let centre = 0.1 - 0.15f64 * 0.15;
        assert_relative_eq!(m[0] - centre / 101.0, m[1], epsilon = 1e-10);
    }

    #[test]
    fn cell_masses_sum_to_total() {
        let grid = line(300, 0.0, 1.0);
        let f = FunctionFamily::power(0.5, 3.0).unwrap();
        let nu = atoms(&[0.2, 0.45, 0.8], &[0.2, 0.3, 0.5]);
        let w = DualWeights { c: vec![0.05, 0.08, 0.03] };
        let m = cell_masses(&nu, &w, &f, 1.5, &grid).unwrap();
        let d = density_from_weights(&nu, &w, &f, 1.5, &grid).unwrap();
        assert_relative_eq!(m.iter().sum::<f64>(), d.total_mass(), epsilon = 1e-12);
    }

    #[test]
    fn single_atom_weight_matches_radius() {
        let grid = line(2000, -2.0, 2.0);
        let f = FunctionFamily::Quadratic;
        let nu = atoms(&[0.0], &[1.0]);
        let sol = solve_weights(&nu, &f, 2.0, &grid, WeightOptions::default()).unwrap();
        let r = 0.75f64.powf(1.0 / 3.0);
        assert_relative_eq!(sol.weights.c[0], r * r, max_relative = 1e-5);
        assert!(sol.residual <= 1e-7);
    }

    #[test]
    fn symmetric_pair_has_equal_weights() {
        let grid = line(400, 0.0, 1.0);
        let nu = atoms(&[0.4, 0.6], &[0.5, 0.5]);
        let sol = solve_weights(&nu, &FunctionFamily::Quadratic, 2.0, &grid, WeightOptions::default()).unwrap();
        assert_relative_eq!(sol.weights.c[0], sol.weights.c[1], epsilon = 1e-9);
        assert_eq!(sol.ascent_failures, 0);
    }

    #[test]
    fn more_mass_means_larger_weight() {
        let grid = line(400, 0.0, 1.0);
        let f = FunctionFamily::power(1.0, 3.0).unwrap();
        let base = solve_weights(&atoms(&[0.3, 0.7], &[0.5, 0.5]), &f, 2.0, &grid, WeightOptions::default()).unwrap();
        let up = solve_weights(&atoms(&[0.3, 0.7], &[0.55, 0.45]), &f, 2.0, &grid, WeightOptions::default()).unwrap();
        assert!(up.weights.c[0] > base.weights.c[0]);
        assert!(up.weights.c[1] < base.weights.c[1]);
    }

    #[test]
    fn overlapping_atoms_balance_split_masses() {
        let grid = line(64, 0.0, 1.0);
        let f = FunctionFamily::Quadratic;
        let nu = atoms(&[0.45, 0.55], &[0.3, 0.7]);
        let sol = solve_weights(&nu, &f, 2.0, &grid, WeightOptions::default()).unwrap();
        assert!(sol.residual <= 1e-7, "residual {}", sol.residual);
        assert_eq!(sol.ascent_failures, 0);
    }

    #[test]
    fn linear_cost_with_tied_half_line() {
        // For p = 1 every cell right of both atoms sees the same cost gap,
        // so the balance is reached by splitting that whole region.
        let grid = line(48, 0.0, 1.0);
        let f = FunctionFamily::power(1.5, 3.0).unwrap();
        let nu = atoms(&[0.2549, 0.3176], &[0.5457, 0.4543]);
        let sol = solve_weights(&nu, &f, 1.0, &grid, WeightOptions::default()).unwrap();
        assert!(sol.residual <= 1e-7, "residual {}", sol.residual);
        let c = &sol.weights.c;
        assert_relative_eq!(c[0] - c[1], 0.3176 - 0.2549, epsilon = 1e-6);
    }

    #[test]
    fn two_dimensional_triple() {
        let grid = Grid::uniform(Domain::unit_cube(2), 60).unwrap();
        let f = FunctionFamily::power(2.0, 2.5).unwrap();
        let nu = AtomicMeasure::from_parts(2, vec![vec![0.3, 0.3], vec![0.7, 0.4], vec![0.5, 0.75]], vec![0.2, 0.3, 0.5]).unwrap();
        let sol = solve_weights(&nu, &f, 2.0, &grid, WeightOptions::default()).unwrap();
        assert!(sol.residual <= 1e-7);
        assert_eq!(sol.ascent_failures, 0);
    }

    #[test]
    fn subproblem_beats_uniform_density() {
        let grid = line(200, 0.0, 1.0);
        let f = FunctionFamily::Quadratic;
        let nu = atoms(&[0.3, 0.7], &[0.5, 0.5]);
        let sol = min_fp_nu(&nu, &f, 2.0, &grid).unwrap();
        let uniform = GridDensity::new(grid.clone(), vec![1.0; 200]).unwrap();
        let (cloud, _) = density_cloud(&uniform, 1.0).unwrap();
        let t = solve_discrete_transport(&cloud, &atom_cloud(&nu).unwrap(), 2.0).unwrap().total_cost();
        assert!(sol.breakdown.total <= t + eval_f(&f, &uniform));
        assert_relative_eq!(sol.breakdown.total, sol.breakdown.dual, max_relative = 1e-3);
    }

    #[test]
    fn atoms_outside_are_rejected() {
        let nu = atoms(&[1.5], &[1.0]);
        let err = solve_weights(&nu, &FunctionFamily::Quadratic, 2.0, &line(10, 0.0, 1.0), WeightOptions::default());
        assert!(matches!(err, Err(Error::AtomOutsideDomain { .. })));
    }
}
