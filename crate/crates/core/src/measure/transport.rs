//! Primal network simplex for the dense transportation problem.
//!
//! Sources carry supplies `a`, sinks demands `b`, every source-sink pair is an
//! uncapacitated arc. The spanning tree is rooted at an artificial node joined
//! to every real node by a high-cost artificial arc. Costs can be replaced
//! between solves; the previous optimal basis stays primal feasible and is
//! used as a warm start.

use crate::error::{Error, Result};

const EPS: f64 = 1e-12;
const NONE: usize = usize::MAX;

pub(crate) struct Transport {
    m: usize,
    n: usize,
    root: usize,
    art_cost: f64,
    cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// pred arc points from the node to its parent
    up: Vec<bool>,
    pi: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
    mark: Vec<u64>,
    mark_id: u64,
    next_arc: usize,
    block: usize,
}

impl Transport {
    /// `cost_bound` must dominate every cost later passed to [`Transport::solve`].
    pub(crate) fn new(a: &[f64], b: &[f64], cost_bound: f64) -> Self {
        let (m, n) = (a.len(), b.len());
        let nodes = m + n + 1;
        let real = m * n;
        let arcs = real + m + n;
        let root = m + n;
        let art_cost = (cost_bound.max(0.0) + 1.0) * nodes as f64;
        let mut flow = vec![0.0; arcs];
        let mut in_tree = vec![false; arcs];
        let mut parent = vec![root; nodes];
        let mut pred = vec![usize::MAX; nodes];
        let mut up = vec![false; nodes];
        for u in 0..m + n {
            let k = real + u;
            in_tree[k] = true;
            pred[u] = k;
            parent[u] = root;
            if u < m {
                up[u] = true;
                flow[k] = a[u];
            } else {
                flow[k] = b[u - m];
            }
        }
        let mut first_child = vec![NONE; nodes];
        let mut next_sib = vec![NONE; nodes];
        let mut prev_sib = vec![NONE; nodes];
        for u in 0..m + n {
            next_sib[u] = if u + 1 < m + n { u + 1 } else { NONE };
            prev_sib[u] = if u > 0 { u - 1 } else { NONE };
        }
        if m + n > 0 {
            first_child[root] = 0;
        }
        let block = ((arcs as f64).sqrt().ceil() as usize).max(10).min(arcs);
        let mut cost = vec![0.0; arcs];
        cost[real..].iter_mut().for_each(|c| *c = art_cost);
        Self {
            m,
            n,
            root,
            art_cost,
            cost,
            flow,
            in_tree,
            parent,
            pred,
            up,
            pi: vec![0.0; nodes],
            first_child,
            next_sib,
            prev_sib,
            mark: vec![0; nodes],
            mark_id: 0,
            next_arc: 0,
            block,
        }
    }

    #[inline]
    fn src(&self, k: usize) -> usize {
        let real = self.m * self.n;
        if k < real {
            k / self.n
        } else {
            let u = k - real;
            if u < self.m {
                u
            } else {
                self.root
            }
        }
    }

    #[inline]
    fn tgt(&self, k: usize) -> usize {
        let real = self.m * self.n;
        if k < real {
            self.m + k % self.n
        } else {
            let u = k - real;
            if u < self.m {
                self.root
            } else {
                u
            }
        }
    }

    fn detach(&mut self, u: usize) {
        let (p, n) = (self.prev_sib[u], self.next_sib[u]);
        if p == NONE {
            self.first_child[self.parent[u]] = n;
        } else {
            self.next_sib[p] = n;
        }
        if n != NONE {
            self.prev_sib[n] = p;
        }
    }

    fn attach(&mut self, u: usize, parent: usize) {
        let f = self.first_child[parent];
        self.parent[u] = parent;
        self.prev_sib[u] = NONE;
        self.next_sib[u] = f;
        if f != NONE {
            self.prev_sib[f] = u;
        }
        self.first_child[parent] = u;
    }

    /// Recomputes potentials on the subtree under `top` from its parent.
    /// Tree arcs have zero reduced cost `c + pi(src) - pi(tgt)`.
    fn update_potentials(&mut self, top: usize, stack: &mut Vec<usize>) {
        stack.clear();
        stack.push(top);
        while let Some(w) = stack.pop() {
            if w != self.root {
                let p = self.pi[self.parent[w]];
                let c = self.cost[self.pred[w]];
                self.pi[w] = if self.up[w] { p - c } else { p + c };
            }
            let mut ch = self.first_child[w];
            while ch != NONE {
                stack.push(ch);
                ch = self.next_sib[ch];
            }
        }
    }

    #[inline]
    fn reduced(&self, k: usize) -> f64 {
        let (s, t) = (self.src(k), self.tgt(k));
        self.cost[k] + self.pi[s] - self.pi[t]
    }

    /// Block search pricing: most negative reduced cost within the first block
    /// that has one.
    fn find_entering(&mut self) -> Option<usize> {
        let arcs = self.cost.len();
        let mut best = None;
        let mut best_rc = -EPS;
        let mut count = 0;
        let mut k = self.next_arc;
        for _ in 0..arcs {
            if !self.in_tree[k] {
                let rc = self.reduced(k);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(k);
                }
            }
            count += 1;
            k += 1;
            if k == arcs {
                k = 0;
            }
            if count == self.block {
                if best.is_some() {
                    break;
                }
                count = 0;
            }
        }
        self.next_arc = k;
        best
    }

    fn pivot(&mut self, in_arc: usize, stack: &mut Vec<usize>) {
        let first = self.src(in_arc);
        let second = self.tgt(in_arc);

        self.mark_id += 1;
        let mut u = first;
        loop {
            self.mark[u] = self.mark_id;
            if u == self.root {
                break;
            }
            u = self.parent[u];
        }
        let mut join = second;
        while self.mark[join] != self.mark_id {
            join = self.parent[join];
        }

        // first path: flow runs parent -> u, so up arcs shrink
        let mut delta = f64::INFINITY;
        let mut u_out = usize::MAX;
        let mut on_first = true;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                }
            }
            u = self.parent[u];
        }
        // second path: flow runs u -> parent, so down arcs shrink
        let mut u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    on_first = false;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(u_out != usize::MAX, "unbounded cycle in uncapacitated transport");
        let delta = delta.max(0.0);

        if delta > 0.0 {
            self.flow[in_arc] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += if self.up[u] { -delta } else { delta };
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += if self.up[u] { delta } else { -delta };
                u = self.parent[u];
            }
        }
        let out_arc = self.pred[u_out];
        self.flow[out_arc] = 0.0;
        self.in_tree[out_arc] = false;
        self.in_tree[in_arc] = true;

        // re-hang the cut subtree from the entering arc, reversing the path
        let (u_in, v_in) = if on_first { (first, second) } else { (second, first) };
        let mut u = u_in;
        let mut new_parent = v_in;
        let mut new_pred = in_arc;
        loop {
            let old_parent = self.parent[u];
            let old_pred = self.pred[u];
            self.detach(u);
            self.attach(u, new_parent);
            self.pred[u] = new_pred;
            self.up[u] = self.src(new_pred) == u;
            if u == u_out {
                break;
            }
            new_parent = u;
            new_pred = old_pred;
            u = old_parent;
        }
        self.update_potentials(u_in, stack);
    }

    /// Solves with new real-arc costs (row-major `m x n`) and returns the
    /// optimal cost.
    pub(crate) fn solve(&mut self, costs: &[f64]) -> Result<f64> {
        let real = self.m * self.n;
        debug_assert_eq!(costs.len(), real);
        self.cost[..real].copy_from_slice(costs);
        debug_assert!(self.cost[real..].iter().all(|c| *c == self.art_cost));
        let mut stack = Vec::with_capacity(self.pi.len());
        self.pi[self.root] = 0.0;
        self.update_potentials(self.root, &mut stack);
        let limit = 50 * self.cost.len() + 10_000;
        let mut iters = 0;
        while let Some(k) = self.find_entering() {
            self.pivot(k, &mut stack);
            iters += 1;
            if iters > limit {
                return Err(Error::Solver(format!(
                    "network simplex exceeded {limit} pivots on a {}x{} problem",
                    self.m, self.n
                )));
            }
        }
        Ok(self.real_cost())
    }

    fn real_cost(&self) -> f64 {
        let real = self.m * self.n;
        self.cost[..real]
            .iter()
            .zip(&self.flow[..real])
            .map(|(c, f)| c * f)
            .sum()
    }

    /// Nonzero entries `(arc, flow)` of the current plan.
    pub(crate) fn plan(&self) -> Vec<(usize, f64)> {
        let real = self.m * self.n;
        (0..real)
            .filter(|&k| self.flow[k] > 0.0)
            .map(|k| (k, self.flow[k]))
            .collect()
    }
}
