//! Primal network simplex for the balanced transportation problem.
//!
//! Sources ship to targets over a complete bipartite graph of uncapacitated
//! arcs. The basis is a spanning tree rooted at an artificial node; every node
//! starts attached to the root by an artificial arc. Leaving arcs follow the
//! strongly-feasible-tree rule, which rules out cycling on degenerate pivots.
//! Entering arcs are chosen by block search pricing.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Arc costs, either materialised or evaluated on demand.
pub(crate) trait CostFn: Sync {
    fn cost(&self, i: usize, j: usize) -> f64;
}

pub(crate) struct DenseCosts {
    pub m: usize,
    pub values: Vec<f64>,
}

impl CostFn for DenseCosts {
    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }
}

impl<F: Fn(usize, usize) -> f64 + Sync> CostFn for F {
    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        self(i, j)
    }
}

pub(crate) struct SimplexSolution {
    /// (source, target, mass) for every basic real arc with positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    /// Source potentials ψ with ψᵢ + φⱼ ≤ cᵢⱼ, equality on basic arcs.
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub pivots: usize,
}

struct Tree<'a, C: CostFn> {
    n: usize,
    m: usize,
    costs: &'a C,
    art_cost: f64,
    root: usize,
    parent: Vec<usize>,
    pred: Vec<usize>,
    up: Vec<bool>,
    flow: Vec<f64>,
    pi: Vec<f64>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    child_pos: Vec<usize>,
}

impl<'a, C: CostFn> Tree<'a, C> {
    fn real_arcs(&self) -> usize {
        self.n * self.m
    }

    /// (tail, head) of an arc.
    #[inline]
    fn ends(&self, arc: usize) -> (usize, usize) {
        let real = self.real_arcs();
        if arc < real {
            (arc / self.m, self.n + arc % self.m)
        } else {
            let v = arc - real;
            if v < self.n {
                (v, self.root)
            } else {
                (self.root, v)
            }
        }
    }

    #[inline]
    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.real_arcs() {
            self.costs.cost(arc / self.m, arc % self.m)
        } else {
            self.art_cost
        }
    }

    #[inline]
    fn reduced_cost(&self, arc: usize) -> f64 {
        let (s, t) = self.ends(arc);
        self.arc_cost(arc) + self.pi[s] - self.pi[t]
    }

    #[inline]
    fn in_tree(&self, arc: usize) -> bool {
        let (s, t) = self.ends(arc);
        (s != self.root && self.pred[s] == arc) || (t != self.root && self.pred[t] == arc)
    }

    fn remove_child(&mut self, p: usize, c: usize) {
        let idx = self.child_pos[c];
        self.children[p].swap_remove(idx);
        if idx < self.children[p].len() {
            let moved = self.children[p][idx];
            self.child_pos[moved] = idx;
        }
    }

    fn add_child(&mut self, p: usize, c: usize) {
        self.child_pos[c] = self.children[p].len();
        self.children[p].push(c);
    }

    /// Recomputes every potential from the tree, with π(root) = 0.
    fn refresh_potentials(&mut self) {
        self.pi[self.root] = 0.0;
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            for idx in 0..self.children[v].len() {
                let c = self.children[v][idx];
                let cost = self.arc_cost(self.pred[c]);
                self.pi[c] = if self.up[c] { self.pi[v] - cost } else { self.pi[v] + cost };
                self.depth[c] = self.depth[v] + 1;
                stack.push(c);
            }
        }
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (s, t) = self.ends(entering);
        let (mut a, mut b) = (s, t);
        while a != b {
            if self.depth[a] > self.depth[b] {
                a = self.parent[a];
            } else if self.depth[b] > self.depth[a] {
                b = self.parent[b];
            } else {
                a = self.parent[a];
                b = self.parent[b];
            }
        }
        let join = a;

        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut first_side = true;
        let mut u = s;
        while u != join {
            if self.up[u] && self.flow[u] < delta {
                delta = self.flow[u];
                u_out = u;
            }
            u = self.parent[u];
        }
        let mut u = t;
        while u != join {
            if !self.up[u] && self.flow[u] <= delta {
                delta = self.flow[u];
                u_out = u;
                first_side = false;
            }
            u = self.parent[u];
        }
        if u_out == NONE {
            return Err(Error::InvalidInput("unbounded transportation problem".into()));
        }

        if delta > 0.0 {
            let mut u = s;
            while u != join {
                if self.up[u] {
                    self.flow[u] -= delta;
                } else {
                    self.flow[u] += delta;
                }
                u = self.parent[u];
            }
            let mut u = t;
            while u != join {
                if self.up[u] {
                    self.flow[u] += delta;
                } else {
                    self.flow[u] -= delta;
                }
                u = self.parent[u];
            }
        }
        self.flow[u_out] = 0.0;

        let (u_in, v_in) = if first_side { (s, t) } else { (t, s) };
        let mut path = vec![u_in];
        while *path.last().unwrap() != u_out {
            let last = *path.last().unwrap();
            path.push(self.parent[last]);
        }
        let old_parent_of_out = self.parent[u_out];
        self.remove_child(old_parent_of_out, u_out);
        for i in 0..path.len() - 1 {
            self.remove_child(path[i + 1], path[i]);
        }
        let saved: Vec<(usize, bool, f64)> = path.iter().map(|&w| (self.pred[w], self.up[w], self.flow[w])).collect();
        for i in 0..path.len() - 1 {
            let (w, next) = (path[i], path[i + 1]);
            self.parent[next] = w;
            self.pred[next] = saved[i].0;
            self.up[next] = !saved[i].1;
            self.flow[next] = saved[i].2;
            self.add_child(w, next);
        }
        self.parent[u_in] = v_in;
        self.pred[u_in] = entering;
        self.up[u_in] = u_in == s;
        self.flow[u_in] = delta;
        self.add_child(v_in, u_in);

        let cost = self.arc_cost(entering);
        let sigma = if u_in == s {
            self.pi[t] - cost - self.pi[s]
        } else {
            self.pi[s] + cost - self.pi[t]
        };
        let mut stack = vec![u_in];
        while let Some(x) = stack.pop() {
            self.pi[x] += sigma;
            self.depth[x] = self.depth[self.parent[x]] + 1;
            stack.extend_from_slice(&self.children[x]);
        }
        Ok(())
    }
}

/// Solves min Σ cᵢⱼ xᵢⱼ subject to row sums `supply`, column sums `demand`,
/// x ≥ 0. Supplies and demands must be positive and (nearly) balanced; any
/// imbalance is left on artificial arcs and shows up as marginal residual.
pub(crate) fn solve<C: CostFn>(supply: &[f64], demand: &[f64], costs: &C) -> Result<SimplexSolution> {
    let n = supply.len();
    let m = demand.len();
    if n == 0 || m == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut max_cost = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            max_cost = max_cost.max(costs.cost(i, j));
        }
    }
    // A path source → root → target costs 2·art_cost > any direct arc, so no
    // optimal plan routes flow through the root.
    let art_cost = max_cost + 1.0;
    let eps = 1e-12 * (1.0 + max_cost);
    let nodes = n + m + 1;
    let root = n + m;
    let real = n * m;
    let mut tree = Tree {
        n,
        m,
        costs,
        art_cost,
        root,
        parent: vec![root; nodes],
        pred: (0..nodes).map(|v| real + v).collect(),
        up: (0..nodes).map(|v| v < n).collect(),
        flow: supply.iter().chain(demand).copied().chain([0.0]).collect(),
        pi: (0..nodes).map(|v| if v < n { -art_cost } else { art_cost }).collect(),
        depth: vec![1; nodes],
        children: vec![Vec::new(); nodes],
        child_pos: vec![0; nodes],
    };
    tree.parent[root] = NONE;
    tree.pred[root] = NONE;
    tree.pi[root] = 0.0;
    tree.depth[root] = 0;
    for v in 0..root {
        tree.add_child(root, v);
    }

    let total_arcs = real + n + m;
    let block = ((total_arcs as f64).sqrt().ceil() as usize).max(10);
    let mut next_arc = 0usize;
    let max_pivots = 50 * total_arcs + 100_000;
    let mut pivots = 0usize;

    let price = |tree: &Tree<C>, next_arc: &mut usize| -> Option<usize> {
        let mut best = NONE;
        let mut best_rc = -eps;
        let mut scanned_in_block = 0;
        for step in 0..total_arcs {
            let arc = (*next_arc + step) % total_arcs;
            let rc = tree.reduced_cost(arc);
            if rc < best_rc && !tree.in_tree(arc) {
                best_rc = rc;
                best = arc;
            }
            scanned_in_block += 1;
            if scanned_in_block == block {
                if best != NONE {
                    *next_arc = (arc + 1) % total_arcs;
                    return Some(best);
                }
                scanned_in_block = 0;
            }
        }
        if best != NONE {
            *next_arc = (best + 1) % total_arcs;
            Some(best)
        } else {
            None
        }
    };

    loop {
        match price(&tree, &mut next_arc) {
            Some(arc) => {
                tree.pivot(arc)?;
                pivots += 1;
                if pivots.is_multiple_of(4096) {
                    tree.refresh_potentials();
                }
                if pivots > max_pivots {
                    return Err(Error::NoConvergence { iterations: pivots, residual: f64::NAN });
                }
            }
            None => {
                tree.refresh_potentials();
                if price(&tree, &mut next_arc).is_none() {
                    break;
                }
            }
        }
    }

    let mut flows = Vec::new();
    for v in 0..root {
        let arc = tree.pred[v];
        if arc < real && tree.flow[v] > 0.0 {
            flows.push((arc / m, arc % m, tree.flow[v]));
        }
    }
    flows.sort_by_key(|a| (a.0, a.1));
    let psi = (0..n).map(|i| -tree.pi[i]).collect();
    let phi = (0..m).map(|j| tree.pi[n + j]).collect();
    Ok(SimplexSolution { flows, psi, phi, pivots })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> DenseCosts {
        DenseCosts { m, values: (0..n * m).map(|a| f(a / m, a % m)).collect() }
    }

    #[test]
    fn two_by_two_swap() {
        let c = dense(2, 2, |i, j| if i == j { 5.0 } else { 1.0 });
        let sol = solve(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap();
        let cost: f64 = sol.flows.iter().map(|&(i, j, x)| c.cost(i, j) * x).sum();
        assert!((cost - 1.0).abs() < 1e-15);
        assert_eq!(sol.flows.len(), 2);
    }

    #[test]
    fn assignment_matches_enumeration() {
        // 4×4 permutation problem, compared against all 24 permutations.
        let c = dense(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * (i as f64 - j as f64).abs());
        let w = [0.25; 4];
        let sol = solve(&w, &w, &c).unwrap();
        let cost: f64 = sol.flows.iter().map(|&(i, j, x)| c.cost(i, j) * x).sum();
        let mut best = f64::INFINITY;
        let mut perm = [0, 1, 2, 3];
        permutations(&mut perm, 0, &mut |p| {
            best = best.min(p.iter().enumerate().map(|(i, &j)| 0.25 * c.cost(i, j)).sum());
        });
        assert!((cost - best).abs() < 1e-12, "{cost} vs {best}");
    }

    fn permutations(p: &mut [usize; 4], k: usize, visit: &mut impl FnMut(&[usize; 4])) {
        if k == p.len() {
            visit(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permutations(p, k + 1, visit);
            p.swap(k, i);
        }
    }

    #[test]
    fn certificate_holds() {
        let n = 7;
        let m = 5;
        let c = dense(n, m, |i, j| ((i as f64 * 0.37).sin() - (j as f64 * 0.91).cos()).abs());
        let a = vec![1.0 / n as f64; n];
        let b = vec![1.0 / m as f64; m];
        let sol = solve(&a, &b, &c).unwrap();
        for i in 0..n {
            for j in 0..m {
                assert!(sol.psi[i] + sol.phi[j] <= c.cost(i, j) + 1e-12);
            }
        }
        for &(i, j, _) in &sol.flows {
            assert!((sol.psi[i] + sol.phi[j] - c.cost(i, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_is_rejected() {
        let c = dense(0, 1, |_, _| 0.0);
        assert!(matches!(solve(&[], &[1.0], &c), Err(Error::EmptyCloud)));
    }
}
