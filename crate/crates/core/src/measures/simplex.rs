//! Primal network simplex for uncapacitated min-cost flow with real supplies.
//!
//! The spanning-tree bookkeeping (thread / reverse thread / successor counts)
//! and the block-search pivot follow the classical LEMON formulation. Every
//! node gets an artificial arc to an extra root node so the initial tree is
//! trivially feasible; artificial arcs carry a cost large enough that they
//! are driven out of any optimal basis of a feasible problem.

use crate::error::{Error, Result};

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Default)]
pub struct MinCostFlow {
    supply: Vec<f64>,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub total_cost: f64,
    /// Flow on each real arc, in insertion order.
    pub flows: Vec<f64>,
    pub pivots: usize,
}

impl MinCostFlow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, arcs: usize) -> Self {
        Self {
            supply: Vec::with_capacity(nodes),
            source: Vec::with_capacity(arcs),
            target: Vec::with_capacity(arcs),
            cost: Vec::with_capacity(arcs),
        }
    }

    /// Adds a node with the given net supply (positive = source, negative = sink).
    pub fn add_node(&mut self, supply: f64) -> usize {
        self.supply.push(supply);
        self.supply.len() - 1
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cost: f64) -> usize {
        debug_assert!(from < self.supply.len() && to < self.supply.len());
        self.source.push(from);
        self.target.push(to);
        self.cost.push(cost);
        self.cost.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.supply.len()
    }

    pub fn arc_count(&self) -> usize {
        self.cost.len()
    }

    pub fn solve(&self) -> Result<FlowSolution> {
        if self.cost.iter().any(|c| !c.is_finite()) || self.supply.iter().any(|s| !s.is_finite()) {
            return Err(Error::Transport("non-finite cost or supply".into()));
        }
        let mut supply = self.supply.clone();
        balance(&mut supply);
        Solver::new(self, supply).run()
    }
}

/// Pushes the rounding residual of the supply vector onto its largest entry so
/// that supplies sum to zero exactly (up to the last ulp of that entry).
fn balance(supply: &mut [f64]) {
    if supply.is_empty() {
        return;
    }
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &s in supply.iter() {
        let t = sum + s;
        if sum.abs() >= s.abs() {
            comp += (sum - t) + s;
        } else {
            comp += (s - t) + sum;
        }
        sum = t;
    }
    let residual = sum + comp;
    if residual != 0.0 {
        let (idx, _) = supply
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        supply[idx] -= residual;
    }
}

struct Solver {
    node_num: usize,
    arc_num: usize,
    root: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,
    // pivot state
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    next_arc: usize,
    block_size: usize,
    eps: f64,
    total_supply: f64,
}

impl Solver {
    fn new(problem: &MinCostFlow, supply: Vec<f64>) -> Self {
        let n = supply.len();
        let m = problem.cost.len();
        let all = m + n;
        let root = n;
        let mut source = Vec::with_capacity(all);
        let mut target = Vec::with_capacity(all);
        let mut cost = Vec::with_capacity(all);
        source.extend_from_slice(&problem.source);
        target.extend_from_slice(&problem.target);
        cost.extend_from_slice(&problem.cost);
        source.resize(all, 0);
        target.resize(all, 0);
        cost.resize(all, 0.0);

        let max_cost = problem.cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let art_cost = (max_cost + 1.0) * (n as f64 + 1.0);

        let mut flow = vec![0.0; all];
        let mut state = vec![STATE_LOWER; all];
        let mut pi = vec![0.0; n + 1];
        let mut parent = vec![NONE; n + 1];
        let mut pred = vec![NONE; n + 1];
        let mut thread = vec![0; n + 1];
        let mut rev_thread = vec![0; n + 1];
        let mut succ_num = vec![1; n + 1];
        let mut last_succ = vec![0; n + 1];
        let mut pred_dir = vec![DIR_UP; n + 1];

        thread[root] = 0;
        rev_thread[0] = root;
        succ_num[root] = n + 1;
        last_succ[root] = if n == 0 { root } else { root - 1 };
        pi[root] = 0.0;

        let mut total_supply = 0.0;
        for u in 0..n {
            let e = m + u;
            parent[u] = root;
            pred[u] = e;
            thread[u] = u + 1;
            rev_thread[u + 1] = u;
            succ_num[u] = 1;
            last_succ[u] = u;
            state[e] = STATE_TREE;
            if supply[u] >= 0.0 {
                total_supply += supply[u];
                pred_dir[u] = DIR_UP;
                pi[u] = 0.0;
                source[e] = u;
                target[e] = root;
                flow[e] = supply[u];
                cost[e] = 0.0;
            } else {
                pred_dir[u] = DIR_DOWN;
                pi[u] = art_cost;
                source[e] = root;
                target[e] = u;
                flow[e] = -supply[u];
                cost[e] = art_cost;
            }
        }

        let block_size = ((m as f64).sqrt().ceil() as usize).max(10);
        Solver {
            node_num: n,
            arc_num: m,
            root,
            source,
            target,
            cost,
            flow,
            state,
            pi,
            parent,
            pred,
            thread,
            rev_thread,
            succ_num,
            last_succ,
            pred_dir,
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            next_arc: 0,
            block_size,
            eps: 1e-12 * (1.0 + max_cost),
            total_supply,
        }
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        self.state[e] as f64 * (self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]])
    }

    fn find_entering_arc(&mut self) -> bool {
        let m = self.arc_num;
        if m == 0 {
            return false;
        }
        let mut min = -self.eps;
        let mut found = false;
        let mut cnt = self.block_size;
        let start = self.next_arc;
        let mut e = start;
        loop {
            let c = self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
                found = true;
            }
            e += 1;
            if e == m {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
            if e == start {
                break;
            }
        }
        if found {
            self.next_arc = e;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Returns false when the cycle has no blocking arc (unbounded problem).
    fn find_leaving_arc(&mut self) -> bool {
        let in_arc = self.in_arc;
        let (first, second) = if self.state[in_arc] == STATE_LOWER {
            (self.source[in_arc], self.target[in_arc])
        } else {
            (self.target[in_arc], self.source[in_arc])
        };
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let in_arc = self.in_arc;
        if self.delta > 0.0 {
            let val = self.state[in_arc] as f64 * self.delta;
            self.flow[in_arc] += val;
            let mut u = self.source[in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target[in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        self.state[in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.state[out] = STATE_LOWER;
        // the leaving arc is at its lower bound; clear rounding residue
        self.flow[out] = 0.0;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc: isize = 0;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in] - self.pi[u_in] - self.pred_dir[u_in] as f64 * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(mut self) -> Result<FlowSolution> {
        let _ = self.root;
        let mut pivots = 0usize;
        let max_pivots = 50 * (self.arc_num + self.node_num + 10) * 10;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::Transport("unbounded cycle".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::Transport(format!("no convergence after {pivots} pivots")));
            }
        }
        let tol = 1e-9 * (1.0 + self.total_supply);
        for e in self.arc_num..self.arc_num + self.node_num {
            if self.flow[e] > tol {
                return Err(Error::Transport(format!(
                    "infeasible: {} units left on artificial arcs",
                    self.flow[e]
                )));
            }
        }
        let flows: Vec<f64> = self.flow[..self.arc_num].iter().map(|f| f.max(0.0)).collect();
        let mut total = 0.0;
        let mut comp = 0.0;
        for (f, c) in flows.iter().zip(&self.cost[..self.arc_num]) {
            let y = f * c - comp;
            let t = total + y;
            comp = (t - total) - y;
            total = t;
        }
        Ok(FlowSolution { total_cost: total, flows, pivots })
    }
}

/// Exact transportation cost between two weighted point sets with equal total
/// mass, using a dense bipartite network.
pub fn transport_cost<F>(supply: &[f64], demand: &[f64], cost: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    let mut net = MinCostFlow::with_capacity(supply.len() + demand.len(), supply.len() * demand.len());
    for &s in supply {
        net.add_node(s);
    }
    for &d in demand {
        net.add_node(-d);
    }
    let offset = supply.len();
    for i in 0..supply.len() {
        for j in 0..demand.len() {
            net.add_arc(i, offset + j, cost(i, j));
        }
    }
    Ok(net.solve()?.total_cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn assignment_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 1..=6 {
            for _ in 0..20 {
                let c: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
                let brute = permutations(n)
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, &j)| c[i][j]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                let w = vec![1.0; n];
                let got = transport_cost(&w, &w, |i, j| c[i][j]).unwrap();
                assert!((got - brute).abs() < 1e-12, "n={n}: {got} vs {brute}");
            }
        }
    }

    #[test]
    fn unbalanced_weights_small_lp() {
        // supplies (0.5, 0.5) -> demands (0.25, 0.75), cost |i - j| on points {0,1} vs {0,1}
        let got = transport_cost(&[0.5, 0.5], &[0.25, 0.75], |i, j| (i as f64 - j as f64).abs()).unwrap();
        assert!((got - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sparse_path_graph() {
        // 0 -> 1 -> 2 chain, supply at 0, demand at 2
        let mut net = MinCostFlow::new();
        let a = net.add_node(2.0);
        let b = net.add_node(0.0);
        let c = net.add_node(-2.0);
        net.add_arc(a, b, 1.5);
        net.add_arc(b, c, 0.5);
        net.add_arc(a, c, 3.0);
        let sol = net.solve().unwrap();
        assert!((sol.total_cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut net = MinCostFlow::new();
        let a = net.add_node(1.0);
        let b = net.add_node(-1.0);
        net.add_arc(b, a, 1.0);
        assert!(net.solve().is_err());
    }

    #[test]
    fn empty_problem() {
        assert_eq!(MinCostFlow::new().solve().unwrap().total_cost, 0.0);
    }
}
