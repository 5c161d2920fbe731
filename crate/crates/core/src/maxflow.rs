//! Dinic's maximum flow on small dense-ish networks with real capacities.
//!
//! Used to find maximum-weight closures: the minimum cut separates the
//! vertices that belong to the best closed set from the rest. Capacities may
//! be `f64::INFINITY`; residuals below a capacity-relative epsilon count as
//! saturated so floating point dust cannot stall the search.

pub(crate) struct FlowNetwork {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    eps: f64,
}

impl FlowNetwork {
    pub fn new(n_nodes: usize) -> Self {
        FlowNetwork {
            adj: vec![Vec::new(); n_nodes],
            to: Vec::new(),
            cap: Vec::new(),
            eps: 0.0,
        }
    }

    /// Adds a directed edge; the reverse edge is created with zero capacity
    /// at the partner index `e ^ 1`.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        debug_assert!(cap >= 0.0);
        let e = self.to.len();
        self.to.push(to);
        self.cap.push(cap);
        self.adj[from].push(e);
        self.to.push(from);
        self.cap.push(0.0);
        self.adj[to].push(e + 1);
    }

    fn levels(&self, source: usize, sink: usize) -> Option<Vec<u32>> {
        let mut level = vec![u32::MAX; self.adj.len()];
        level[source] = 0;
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let w = self.to[e];
                if self.cap[e] > self.eps && level[w] == u32::MAX {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        (level[sink] != u32::MAX).then_some(level)
    }

    fn push(
        &mut self,
        v: usize,
        sink: usize,
        limit: f64,
        level: &[u32],
        iter: &mut [usize],
    ) -> f64 {
        if v == sink {
            return limit;
        }
        while iter[v] < self.adj[v].len() {
            let e = self.adj[v][iter[v]];
            let w = self.to[e];
            if self.cap[e] > self.eps && level[w] == level[v] + 1 {
                let pushed = self.push(w, sink, limit.min(self.cap[e]), level, iter);
                if pushed > 0.0 {
                    self.cap[e] -= pushed;
                    self.cap[e ^ 1] += pushed;
                    return pushed;
                }
            }
            iter[v] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let largest_finite = self
            .cap
            .iter()
            .copied()
            .filter(|c| c.is_finite())
            .fold(0.0f64, f64::max);
        self.eps = largest_finite * 1e-14;
        let mut total = 0.0;
        while let Some(level) = self.levels(source, sink) {
            let mut iter = vec![0usize; self.adj.len()];
            loop {
                let pushed = self.push(source, sink, f64::INFINITY, &level, &mut iter);
                if pushed <= 0.0 {
                    break;
                }
                total += pushed;
            }
        }
        total
    }

    /// After `max_flow`, the nodes still reachable from the source in the
    /// residual network: the source side of a minimum cut.
    pub fn source_side(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[source] = true;
        let mut stack = vec![source];
        while let Some(v) = stack.pop() {
            for &e in &self.adj[v] {
                let w = self.to[e];
                if self.cap[e] > self.eps && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }
}
