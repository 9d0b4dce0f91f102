//! Primal network simplex for the transportation problem.
//!
//! The structure follows LEMON's `NetworkSimplex`: a spanning tree stored
//! with parent/thread/successor-count arrays, an artificial root, block
//! search pivoting, and the strongly feasible leaving-arc rule. Arcs of the
//! complete bipartite graph are implicit: arc `e` joins supply node `e / m`
//! to demand node `n + e % m`. All real arcs are uncapacitated.

use crate::error::{Error, Result};

const TREE: i8 = 0;
const LOWER: i8 = 1;
const UP: i8 = 1;
const DOWN: i8 = -1;

pub(crate) struct Solution {
    /// Flow on every real arc, in input mass units.
    pub flow: Vec<f64>,
    /// Largest negative reduced cost at termination (0 when exactly dual
    /// feasible).
    pub dual_violation: f64,
}

struct Simplex<'a> {
    n: usize,
    m: usize,
    node_num: usize,
    arc_num: usize,
    cost: &'a [f64],
    art_cost: f64,
    art_source: Vec<usize>,
    art_target: Vec<usize>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<isize>,
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
    block: usize,
    eps: f64,
}

impl<'a> Simplex<'a> {
    fn source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.m
        } else {
            self.art_source[e - self.arc_num]
        }
    }

    fn target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.n + e % self.m
        } else {
            self.art_target[e - self.arc_num]
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.arc_num {
            self.cost[e]
        } else if self.art_source[e - self.arc_num] == self.node_num {
            self.art_cost
        } else {
            0.0
        }
    }

    fn new(n: usize, m: usize, cost: &'a [f64], supply: &[f64]) -> Self {
        let node_num = n + m;
        let arc_num = n * m;
        let root = node_num;
        let max_cost = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;
        let all = arc_num + node_num;
        let mut s = Simplex {
            n,
            m,
            node_num,
            arc_num,
            cost,
            art_cost,
            art_source: vec![0; node_num],
            art_target: vec![0; node_num],
            flow: vec![0.0; all],
            state: vec![LOWER; all],
            pi: vec![0.0; node_num + 1],
            parent: vec![0; node_num + 1],
            pred: vec![0; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            next_arc: 0,
            block: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            eps: 1e-14 * art_cost,
        };
        s.parent[root] = -1;
        s.pred[root] = usize::MAX;
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = arc_num + u;
            s.parent[u] = root as isize;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = TREE;
            if supply[u] >= 0.0 {
                s.pred_dir[u] = UP;
                s.pi[u] = 0.0;
                s.art_source[u] = u;
                s.art_target[u] = root;
                s.flow[e] = supply[u];
            } else {
                s.pred_dir[u] = DOWN;
                s.pi[u] = art_cost;
                s.art_source[u] = root;
                s.art_target[u] = u;
                s.flow[e] = -supply[u];
            }
        }
        s
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        // real arcs only; source e/m, target n + e%m
        self.cost[e] + self.pi[e / self.m] - self.pi[self.n + e % self.m]
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.eps;
        let mut found = false;
        let mut cnt = self.block;
        let mut e = self.next_arc;
        let total = self.arc_num;
        for _ in 0..total {
            if self.state[e] == LOWER {
                let c = self.reduced(e);
                if c < min {
                    min = c;
                    self.in_arc = e;
                    found = true;
                }
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block;
            }
            e += 1;
            if e == total {
                e = 0;
            }
        }
        if found {
            self.next_arc = e;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u] as usize;
            } else {
                v = self.parent[v] as usize;
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DOWN { f64::INFINITY } else { self.flow[e] };
            if d < delta {
                delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u] as usize;
        }
        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == UP { f64::INFINITY } else { self.flow[e] };
            if d <= delta {
                delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u] as usize;
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        result != 0 && delta.is_finite()
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u] as usize;
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * val;
                u = self.parent[u] as usize;
            }
        }
        self.state[self.in_arc] = TREE;
        let out = self.pred[self.u_out];
        self.state[out] = LOWER;
        // the leaving arc carries exactly zero flow; pin it against drift
        self.flow[out] = 0.0;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let in_arc = self.in_arc;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out] as usize;

        if u_in == u_out {
            self.parent[u_in] = v_in as isize;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source(in_arc) { UP } else { DOWN };
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
            let thread_continue =
                if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem] as usize;
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem as isize;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem as isize;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc: isize = 0;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u] as usize;
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source(in_arc) { UP } else { DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let join = self.join;
        let up_limit_out: isize = if self.last_succ[join] == v_in { join as isize } else { -1 };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in as isize;
        while u != -1 && self.last_succ[u as usize] == v_in {
            self.last_succ[u as usize] = last_succ_out;
            u = self.parent[u as usize];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out as isize;
            while u != up_limit_out && self.last_succ[u as usize] == old_last_succ {
                self.last_succ[u as usize] = old_rev_thread;
                u = self.parent[u as usize];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out as isize;
            while u != up_limit_out && self.last_succ[u as usize] == old_last_succ {
                self.last_succ[u as usize] = last_succ_out;
                u = self.parent[u as usize];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u] as usize;
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u] as usize;
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in]
            - self.pred_dir[self.u_in] as f64 * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }
}

/// Solve `min Σ c_ij f_ij` subject to row sums `supply[..n]` and column
/// sums `-supply[n..]`. `cost` is row-major `n × m`.
pub(crate) fn solve(n: usize, m: usize, cost: &[f64], supply: &[f64]) -> Result<Solution> {
    debug_assert_eq!(cost.len(), n * m);
    debug_assert_eq!(supply.len(), n + m);
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Solver("non-finite cost entry".into()));
    }
    let mut s = Simplex::new(n, m, cost, supply);
    let max_pivots = 50 * (n + m) * (n + m).max(100) + 1_000_000;
    let mut pivots = 0;
    while s.find_entering_arc() {
        s.find_join_node();
        if !s.find_leaving_arc() {
            return Err(Error::Solver("unbounded pivot".into()));
        }
        s.change_flow();
        s.update_tree_structure();
        s.update_potential();
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!("no convergence after {pivots} pivots")));
        }
    }
    let total: f64 = supply.iter().filter(|v| **v > 0.0).sum();
    let art: f64 = (s.arc_num..s.arc_num + s.node_num).map(|e| s.flow[e]).sum();
    if art > 1e-9 * total.max(1.0) {
        return Err(Error::Solver(format!("infeasible: {art:.3e} mass left on artificial arcs")));
    }
    let mut dual_violation = 0.0f64;
    for e in 0..s.arc_num {
        dual_violation = dual_violation.max(-s.reduced(e));
    }
    s.flow.truncate(s.arc_num);
    log::debug!("network simplex: {pivots} pivots, dual violation {dual_violation:.3e}");
    Ok(Solution { flow: s.flow, dual_violation })
}
