//! Exact discrete Monge–Kantorovich transport: optimal plans, Wasserstein
//! distances, Kantorovich potentials and c-transforms for the cost |x − y|^p.

mod simplex;

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{cost, WeightedPointCloud, INPUT_PROB_TOL};

use simplex::{DenseCosts, SimplexSolution};

/// Above this many pairs, costs are evaluated on demand instead of cached.
pub const DENSE_COST_LIMIT: usize = 10_000_000;

/// One shipment of the plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Flow {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Optimal coupling between two weighted point clouds.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    source: WeightedPointCloud,
    target: WeightedPointCloud,
    flows: Vec<Flow>,
    cost_exponent: f64,
    total_cost: f64,
    certificate: Option<(Vec<f64>, Vec<f64>)>,
    pivots: usize,
}

/// Kantorovich potentials: ψ on source points, ψᶜ on target points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialPair {
    pub psi: Vec<f64>,
    pub psi_c: Vec<f64>,
}

impl PotentialPair {
    /// ∫ψ dμ + ∫ψᶜ dν.
    pub fn dual_value(&self, plan: &TransportPlan) -> f64 {
        let a: f64 = self.psi.iter().zip(plan.source.weights()).map(|(p, w)| p * w).sum();
        let b: f64 = self.psi_c.iter().zip(plan.target.weights()).map(|(p, w)| p * w).sum();
        a + b
    }

    /// Largest violation of ψ(x) + ψᶜ(y) ≤ |x − y|^p over all pairs.
    pub fn max_constraint_violation(&self, plan: &TransportPlan) -> f64 {
        let p = plan.cost_exponent;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..plan.source.len() {
            for j in 0..plan.target.len() {
                let c = cost(plan.source.point(i), plan.target.point(j), p);
                worst = worst.max(self.psi[i] + self.psi_c[j] - c);
            }
        }
        worst
    }

    /// Largest |ψ(x) + ψᶜ(y) − |x − y|^p| over flow-carrying pairs.
    pub fn max_slackness_violation(&self, plan: &TransportPlan) -> f64 {
        plan.flows
            .iter()
            .map(|f| {
                let c = cost(plan.source.point(f.source), plan.target.point(f.target), plan.cost_exponent);
                (self.psi[f.source] + self.psi_c[f.target] - c).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl TransportPlan {
    /// Wraps externally computed flows; such plans carry no dual certificate.
    pub fn from_flows(
        source: WeightedPointCloud,
        target: WeightedPointCloud,
        flows: Vec<Flow>,
        cost_exponent: f64,
    ) -> Result<Self> {
        if flows.iter().any(|f| f.source >= source.len() || f.target >= target.len() || !(f.mass >= 0.0)) {
            return Err(Error::InvalidInput("flow indices out of range or negative mass".into()));
        }
        let total_cost = flows
            .iter()
            .map(|f| f.mass * cost(source.point(f.source), target.point(f.target), cost_exponent))
            .sum();
        Ok(TransportPlan { source, target, flows, cost_exponent, total_cost, certificate: None, pivots: 0 })
    }

    pub fn source(&self) -> &WeightedPointCloud {
        &self.source
    }

    pub fn target(&self) -> &WeightedPointCloud {
        &self.target
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn cost_exponent(&self) -> f64 {
        self.cost_exponent
    }

    /// Σ flow·|xᵢ − yⱼ|^p, which equals T_p = W_p^p for solver output.
    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn pivots(&self) -> usize {
        self.pivots
    }

    /// Largest absolute deviation of row sums and column sums from the weights.
    pub fn marginal_residuals(&self) -> (f64, f64) {
        let mut rows = vec![0.0; self.source.len()];
        let mut cols = vec![0.0; self.target.len()];
        for f in &self.flows {
            rows[f.source] += f.mass;
            cols[f.target] += f.mass;
        }
        let dev = |sums: &[f64], w: &[f64]| sums.iter().zip(w).map(|(s, w)| (s - w).abs()).fold(0.0, f64::max);
        (dev(&rows, self.source.weights()), dev(&cols, self.target.weights()))
    }

    /// `i,j,mass` triples with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,mass\n");
        for f in &self.flows {
            writeln!(s, "{},{},{}", f.source, f.target, f.mass).unwrap();
        }
        s
    }
}

fn check_inputs(source: &WeightedPointCloud, target: &WeightedPointCloud, p: f64) -> Result<()> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidInput(format!("cost exponent p = {p} must be ≥ 1")));
    }
    if source.dim() != target.dim() {
        return Err(Error::InvalidInput("clouds live in different dimensions".into()));
    }
    let (a, b) = (source.total_mass(), target.total_mass());
    if (a - b).abs() > INPUT_PROB_TOL * a.max(b).max(1.0) {
        return Err(Error::UnbalancedMasses { source_mass: a, target_mass: b });
    }
    Ok(())
}

/// Exact optimal plan for the cost |x − y|^p between two balanced clouds.
pub fn solve_discrete_transport(
    source: &WeightedPointCloud,
    target: &WeightedPointCloud,
    p: f64,
) -> Result<TransportPlan> {
    check_inputs(source, target, p)?;
    let (n, m) = (source.len(), target.len());
    let sol: SimplexSolution = if n.saturating_mul(m) <= DENSE_COST_LIMIT {
        let mut values = vec![0.0; n * m];
        crate::par::fill(&mut values, |a| cost(source.point(a / m), target.point(a % m), p));
        simplex::solve(source.weights(), target.weights(), &DenseCosts { m, values })?
    } else {
        let lazy = |i: usize, j: usize| cost(source.point(i), target.point(j), p);
        simplex::solve(source.weights(), target.weights(), &lazy)?
    };
    let flows: Vec<Flow> = sol.flows.iter().map(|&(i, j, mass)| Flow { source: i, target: j, mass }).collect();
    let total_cost = flows.iter().map(|f| f.mass * cost(source.point(f.source), target.point(f.target), p)).sum();
    Ok(TransportPlan {
        source: source.clone(),
        target: target.clone(),
        flows,
        cost_exponent: p,
        total_cost,
        certificate: Some((sol.psi, sol.phi)),
        pivots: sol.pivots,
    })
}

/// Solves independent instances, in parallel when enabled.
pub fn solve_many(instances: &[(WeightedPointCloud, WeightedPointCloud, f64)]) -> Vec<Result<TransportPlan>> {
    crate::par::map_slice(instances, |(a, b, p)| solve_discrete_transport(a, b, *p))
}

/// W_p = T_p^{1/p}.
pub fn wasserstein(source: &WeightedPointCloud, target: &WeightedPointCloud, p: f64) -> Result<f64> {
    Ok(solve_discrete_transport(source, target, p)?.total_cost().max(0.0).powf(1.0 / p))
}

/// χᶜ(y) = min_x |x − y|^p − χ(x) over the discrete set of `points`.
pub fn c_transform(points: &WeightedPointCloud, values: &[f64], opposite: &WeightedPointCloud, p: f64) -> Result<Vec<f64>> {
    c_transform_points(points.coords(), values, opposite.coords(), points.dim(), p)
}

/// [`c_transform`] on raw coordinate slices with stride `dim`.
pub fn c_transform_points(points: &[f64], values: &[f64], opposite: &[f64], dim: usize, p: f64) -> Result<Vec<f64>> {
    if values.is_empty() || points.len() != values.len() * dim {
        return Err(Error::EmptyCloud);
    }
    let m = opposite.len() / dim;
    Ok(crate::par::map_range(0..m, |j| {
        let y = &opposite[j * dim..(j + 1) * dim];
        values
            .iter()
            .enumerate()
            .map(|(i, v)| cost(&points[i * dim..(i + 1) * dim], y, p) - v)
            .fold(f64::INFINITY, f64::min)
    }))
}

/// Kantorovich potentials of an optimal plan, shifted so that min ψ = 0.
///
/// When the flow graph is connected the potentials are determined (up to the
/// shift) by ψᵢ + ψᶜⱼ = cᵢⱼ on flow pairs. A disconnected flow graph leaves one
/// free constant per component; the solver's basis potentials fix them jointly
/// while keeping ψ + ψᶜ ≤ c, so plans without that certificate are rejected.
pub fn recover_potentials(plan: &TransportPlan) -> Result<PotentialPair> {
    let n = plan.source.len();
    let m = plan.target.len();
    let p = plan.cost_exponent;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + m];
    for f in &plan.flows {
        let c = cost(plan.source.point(f.source), plan.target.point(f.target), p);
        adj[f.source].push((n + f.target, c));
        adj[n + f.target].push((f.source, c));
    }
    let mut value = vec![f64::NAN; n + m];
    value[0] = 0.0;
    let mut stack = vec![0usize];
    let mut seen = 1usize;
    while let Some(v) = stack.pop() {
        for &(w, c) in &adj[v] {
            if value[w].is_nan() {
                value[w] = c - value[v];
                seen += 1;
                stack.push(w);
            }
        }
    }
    let (mut psi, mut psi_c) = if seen == n + m {
        (value[..n].to_vec(), value[n..].to_vec())
    } else {
        match &plan.certificate {
            Some((psi, phi)) => (psi.clone(), phi.clone()),
            None => return Err(Error::DegeneratePlan),
        }
    };
    let shift = psi.iter().cloned().fold(f64::INFINITY, f64::min);
    psi.iter_mut().for_each(|v| *v -= shift);
    psi_c.iter_mut().for_each(|v| *v += shift);
    Ok(PotentialPair { psi, psi_c })
}
