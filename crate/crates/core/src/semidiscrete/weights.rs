//! Dual weights cᵢ for the resident density u = k(maxᵢ(cᵢ − |x − xᵢ|^p) ∨ 0).
//!
//! For fixed atoms the weights maximise the concave dual
//!
//! ```text
//! Φ(c) = Σ cᵢ aᵢ − Σ_cells vol · f*(maxᵢ(cᵢ − dᵢ) ∨ 0)
//! ```
//!
//! whose gradient is aᵢ minus the mass of atom i's cell. On a grid the hard
//! cell masses jump when a cell changes owner, so Φ is maximised through a
//! sequence of smoothed duals where the max is replaced by τ·log-sum-exp.
//! As τ shrinks the soft assignment approaches the hard one, except that
//! cells whose levels agree to within a few τ are shared between atoms, which
//! is what lets every atom balance exactly on a finite grid. Each stage runs
//! damped Newton with the full k×k Hessian and an Armijo line search on the
//! smoothed dual.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::FunctionFamily;
use crate::measures::{cost, AtomicMeasure, Grid, GridDensity};
use crate::par;

use super::radial::radius_of_mass;

/// Weights cᵢ, one per atom, in units of length^p.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualWeights {
    pub c: Vec<f64>,
}

impl DualWeights {
    /// Ball radii cᵢ^{1/p} (zero for non-positive weights).
    pub fn radii(&self, p: f64) -> Vec<f64> {
        self.c.iter().map(|&c| if c > 0.0 { c.powf(1.0 / p) } else { 0.0 }).collect()
    }
}

/// Options for [`solve_weights`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightOptions {
    /// Max-norm tolerance on atom mass balance, relative to the total mass.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        WeightOptions { tol: 1e-7, max_iterations: 500 }
    }
}

/// Solved weights together with the cell split and solver diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct WeightSolution {
    pub weights: DualWeights,
    /// Mass delivered to each atom, tied cells split by the final soft assignment.
    pub split_masses: Vec<f64>,
    /// max |split_mass − aᵢ|.
    pub residual: f64,
    pub iterations: usize,
    /// Newton directions that failed to be ascent directions; zero for a concave dual.
    pub ascent_failures: usize,
    pub final_tau: f64,
    pub dual_value: f64,
}

/// Costs dᵢ = |x − xᵢ|^p from every cell centre to every atom.
pub(crate) struct Layout {
    pub k: usize,
    pub cells: usize,
    pub vol: f64,
    /// dist[cell * k + i]
    pub dist: Vec<f64>,
}

impl Layout {
    pub fn new(atoms: &AtomicMeasure, p: f64, grid: &Grid) -> Result<Self> {
        if atoms.dim() != grid.dim() {
            return Err(Error::InvalidInput("atoms and grid differ in dimension".into()));
        }
        atoms.check_inside(grid.domain())?;
        let k = atoms.len();
        let cells = grid.len();
        let dim = grid.dim();
        let centers = grid.centers();
        let mut dist = vec![0.0; cells * k];
        par::fill(&mut dist, |idx| {
            let (c, i) = (idx / k, idx % k);
            cost(&centers[c * dim..(c + 1) * dim], &atoms.atoms()[i].point, p)
        });
        Ok(Layout { k, cells, vol: grid.cell_volume(), dist })
    }

    #[inline]
    fn row(&self, cell: usize) -> &[f64] {
        &self.dist[cell * self.k..(cell + 1) * self.k]
    }

    /// (max value, lowest arg-max) of cᵢ − dᵢ at a cell.
    #[inline]
    fn best(&self, c: &[f64], cell: usize) -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, (ci, di)) in c.iter().zip(self.row(cell)).enumerate() {
            let v = ci - di;
            if v > best {
                best = v;
                arg = i;
            }
        }
        (best, arg)
    }

    pub fn density_values(&self, f: &FunctionFamily, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cells];
        par::fill(&mut out, |cell| f.k(self.best(c, cell).0));
        out
    }

    /// Hard cell masses with ties resolved toward the lowest index.
    pub fn hard_masses(&self, f: &FunctionFamily, c: &[f64]) -> Vec<f64> {
        let parts = par::map_chunks(self.cells, |range| {
            let mut m = vec![0.0; self.k];
            for cell in range {
                let (s, arg) = self.best(c, cell);
                if s > 0.0 {
                    m[arg] += f.k(s);
                }
            }
            m
        });
        let mut total = vec![0.0; self.k];
        for part in parts {
            total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
        }
        total.iter_mut().for_each(|t| *t *= self.vol);
        total
    }

    /// Soft assignment weights πᵢ at a cell and the smoothed level τ·LSE.
    #[inline]
    fn soft(&self, c: &[f64], cell: usize, tau: f64, pi: &mut [f64]) -> f64 {
        let (s, arg) = self.best(c, cell);
        if tau <= 0.0 {
            pi.iter_mut().for_each(|x| *x = 0.0);
            pi[arg] = 1.0;
            return s;
        }
        let mut sum = 0.0;
        for (i, (ci, di)) in c.iter().zip(self.row(cell)).enumerate() {
            let e = ((ci - di - s) / tau).exp();
            pi[i] = e;
            sum += e;
        }
        pi.iter_mut().for_each(|x| *x /= sum);
        s + tau * sum.ln()
    }

    /// Smoothed dual value only.
    fn dual_value(&self, f: &FunctionFamily, masses: &[f64], c: &[f64], tau: f64) -> f64 {
        let parts = par::map_chunks(self.cells, |range| {
            let mut pi = vec![0.0; self.k];
            let mut acc = 0.0;
            for cell in range {
                let level = self.soft(c, cell, tau, &mut pi);
                acc += f.conjugate(level);
            }
            acc
        });
        let linear: f64 = c.iter().zip(masses).map(|(c, a)| c * a).sum();
        linear - parts.into_iter().sum::<f64>() * self.vol
    }

    /// Smoothed dual value, delivered masses and the (positive semidefinite)
    /// negated Hessian.
    fn evaluate(&self, f: &FunctionFamily, masses: &[f64], c: &[f64], tau: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let parts = par::map_chunks(self.cells, |range| {
            let mut pi = vec![0.0; k];
            let mut conj = 0.0;
            let mut delivered = vec![0.0; k];
            let mut hess = vec![0.0; k * k];
            for cell in range {
                let level = self.soft(c, cell, tau, &mut pi);
                if level <= 0.0 {
                    continue;
                }
                conj += f.conjugate(level);
                let u = f.k(level);
                let du = f.dk(level);
                for i in 0..k {
                    if pi[i] < 1e-300 {
                        continue;
                    }
                    delivered[i] += u * pi[i];
                    for j in 0..k {
                        if pi[j] < 1e-300 {
                            continue;
                        }
                        let mut h = du * pi[i] * pi[j];
                        if tau > 0.0 {
                            let delta = if i == j { pi[i] } else { 0.0 };
                            h += u * (delta - pi[i] * pi[j]) / tau;
                        }
                        hess[i * k + j] += h;
                    }
                }
            }
            (conj, delivered, hess)
        });
        let mut conj = 0.0;
        let mut delivered = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for (cj, d, h) in parts {
            conj += cj;
            delivered.iter_mut().zip(d).for_each(|(t, v)| *t += v);
            hess.iter_mut().zip(h).for_each(|(t, v)| *t += v);
        }
        delivered.iter_mut().for_each(|t| *t *= self.vol);
        hess.iter_mut().for_each(|t| *t *= self.vol);
        let linear: f64 = c.iter().zip(masses).map(|(c, a)| c * a).sum();
        (linear - conj * self.vol, delivered, hess)
    }

    /// Split masses under the soft assignment at `tau`, with the hard level in k.
    pub fn split_masses(&self, f: &FunctionFamily, c: &[f64], tau: f64) -> Vec<f64> {
        let k = self.k;
        let parts = par::map_chunks(self.cells, |range| {
            let mut pi = vec![0.0; k];
            let mut m = vec![0.0; k];
            for cell in range {
                self.soft(c, cell, tau, &mut pi);
                let (s, _) = self.best(c, cell);
                if s > 0.0 {
                    let u = f.k(s);
                    m.iter_mut().zip(&pi).for_each(|(m, p)| *m += u * p);
                }
            }
            m
        });
        let mut total = vec![0.0; k];
        for part in parts {
            total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
        }
        total.iter_mut().for_each(|t| *t *= self.vol);
        total
    }

    /// Per-cell, per-atom shipped mass under the soft split at `tau` (cells × k).
    pub fn split_plan(&self, f: &FunctionFamily, c: &[f64], tau: f64) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; self.cells * k];
        let mut pi = vec![0.0; k];
        for cell in 0..self.cells {
            self.soft(c, cell, tau, &mut pi);
            let (s, _) = self.best(c, cell);
            if s > 0.0 {
                let u = f.k(s) * self.vol;
                for i in 0..k {
                    out[cell * k + i] = u * pi[i];
                }
            }
        }
        out
    }
}

/// u = k(maxᵢ(cᵢ − |x − xᵢ|^p) ∨ 0) sampled at cell centres.
pub fn density_from_weights(
    atoms: &AtomicMeasure,
    weights: &DualWeights,
    f: &FunctionFamily,
    p: f64,
    grid: &Grid,
) -> Result<GridDensity> {
    check_lengths(atoms, weights)?;
    let layout = Layout::new(atoms, p, grid)?;
    GridDensity::new(grid.clone(), layout.density_values(f, &weights.c))
}

/// Midpoint-rule mass of each atom's cell Ωᵢ (where i attains the positive
/// max, lowest index on ties).
pub fn cell_masses(
    atoms: &AtomicMeasure,
    weights: &DualWeights,
    f: &FunctionFamily,
    p: f64,
    grid: &Grid,
) -> Result<Vec<f64>> {
    check_lengths(atoms, weights)?;
    let layout = Layout::new(atoms, p, grid)?;
    Ok(layout.hard_masses(f, &weights.c))
}

fn check_lengths(atoms: &AtomicMeasure, weights: &DualWeights) -> Result<()> {
    if atoms.len() != weights.c.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} atoms", weights.c.len(), atoms.len())));
    }
    Ok(())
}

/// Solves for weights whose cells carry exactly the atom masses.
pub fn solve_weights(
    atoms: &AtomicMeasure,
    f: &FunctionFamily,
    p: f64,
    grid: &Grid,
    options: WeightOptions,
) -> Result<WeightSolution> {
    let layout = Layout::new(atoms, p, grid)?;
    solve_on_layout(&layout, atoms, f, p, options, None)
}

pub(crate) fn initial_weights(atoms: &AtomicMeasure, f: &FunctionFamily, p: f64) -> Result<Vec<f64>> {
    atoms
        .atoms()
        .iter()
        .map(|a| radius_of_mass(f, p, atoms.dim(), a.mass).map(|r| r.powf(p)))
        .collect()
}

pub(crate) fn solve_on_layout(
    layout: &Layout,
    atoms: &AtomicMeasure,
    f: &FunctionFamily,
    p: f64,
    options: WeightOptions,
    warm_start: Option<&[f64]>,
) -> Result<WeightSolution> {
    let k = layout.k;
    let masses = atoms.masses();
    let total: f64 = masses.iter().sum();
    let tol = options.tol * total;
    let mut c = match warm_start {
        Some(w) if w.len() == k => w.to_vec(),
        _ => initial_weights(atoms, f, p)?,
    };
    let scale = c.iter().cloned().fold(0.0, f64::max).max(layout.vol);
    let final_tau = 1e-9 * scale;
    let mut tau = if k == 1 { final_tau } else { 1e-2 * scale };
    let mut iterations = 0usize;
    let mut ascent_failures = 0usize;

    loop {
        let last_stage = tau <= final_tau;
        loop {
            let (value, delivered, hess) = layout.evaluate(f, &masses, &c, tau);
            let grad: Vec<f64> = masses.iter().zip(&delivered).map(|(a, m)| a - m).collect();
            let gnorm = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
            if gnorm <= tol {
                break;
            }
            if iterations >= options.max_iterations {
                return Err(stalled(layout, f, &c, iterations, gnorm));
            }
            iterations += 1;

            let max_diag = (0..k).map(|i| hess[i * k + i]).fold(0.0f64, f64::max);
            let floor = if max_diag > 0.0 { 1e-10 * max_diag } else { layout.vol.max(1e-12) };
            let mut h = DMatrix::from_row_slice(k, k, &hess);
            for i in 0..k {
                h[(i, i)] += floor;
            }
            let g = DVector::from_vec(grad.clone());
            let mut dir: Vec<f64> = match h.clone().cholesky() {
                Some(ch) => ch.solve(&g).iter().copied().collect(),
                None => match h.lu().solve(&g) {
                    Some(d) => d.iter().copied().collect(),
                    None => grad.iter().map(|x| x / floor).collect(),
                },
            };
            let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
            if !(slope > 0.0) || !slope.is_finite() {
                ascent_failures += 1;
                dir = (0..k).map(|i| grad[i] / (hess[i * k + i] + floor)).collect();
                slope = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = c.iter().zip(&dir).map(|(c, d)| c + step * d).collect();
                let v = layout.dual_value(f, &masses, &trial, tau);
                let noise = 1e-13 * (value.abs() + 1.0);
                // Near the optimum the predicted gain drops below rounding of
                // the dual value; there a smaller mass imbalance decides.
                let resolvable = 1e-4 * step * slope > noise;
                let ascent = resolvable && v >= value + 1e-4 * step * slope;
                let flat = !resolvable
                    && v >= value - noise
                    && imbalance(&masses, &layout.split_masses(f, &trial, tau)) < (1.0 - 1e-4 * step) * gnorm;
                if ascent || flat {
                    c = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // The smoothed dual is flat to rounding along the direction.
                break;
            }
        }
        log::debug!("weights: tau {tau:.3e} done after {iterations} iterations");
        if last_stage {
            break;
        }
        tau = (tau * 0.1).max(final_tau);
    }

    let split = layout.split_masses(f, &c, final_tau);
    let residual = imbalance(&masses, &split);
    if residual > tol {
        return Err(stalled(layout, f, &c, iterations, residual));
    }
    let dual_value = layout.dual_value(f, &masses, &c, 0.0);
    Ok(WeightSolution {
        weights: DualWeights { c },
        split_masses: split,
        residual,
        iterations,
        ascent_failures,
        final_tau,
        dual_value,
    })
}

fn imbalance(masses: &[f64], delivered: &[f64]) -> f64 {
    masses.iter().zip(delivered).map(|(a, m)| (a - m).abs()).fold(0.0, f64::max)
}

fn stalled(layout: &Layout, f: &FunctionFamily, c: &[f64], iterations: usize, residual: f64) -> Error {
    let hard = layout.hard_masses(f, c);
    match hard.iter().position(|&m| m == 0.0) {
        Some(atom) => Error::GridTooCoarse { atom },
        None => Error::NoConvergence { iterations, residual },
    }
}
