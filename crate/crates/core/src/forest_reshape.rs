//! Reshaping forest leaf values to enforce monotone shape constraints.
//!
//! Two estimators are provided. The exact method collects, per constrained
//! split, only the leaf pairs whose cells actually meet once the split
//! variable is ignored, and projects the leaf values onto the resulting
//! partial order over a directed acyclic graph. The over-constrained method
//! visits every constrained split in reverse level order and forces all
//! leaves of one subtree below all leaves of the other with a single shared
//! clip value per node; it is cheaper and implies the exact method's
//! constraints, at the price of a larger adjustment.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isotonic::check_finite;
use crate::maxflow::FlowNetwork;
use crate::shape::{Direction, ShapeSpec};
use crate::tree::{leaf_cells, overlapping_pairs, ForestModel, Node, NodeId, Task, Tree};

/// Pairwise order constraints between leaf values.
///
/// An edge `(i, j)` requires `value(i) <= value(j)`.
#[derive(Debug, Clone)]
pub struct ConstraintGraph {
    vertices: Vec<NodeId>,
    values: Vec<f64>,
    /// Index pairs into `vertices`, deduplicated.
    edges: Vec<(usize, usize)>,
}

impl ConstraintGraph {
    /// Builds a graph from `(leaf id, value)` pairs and edges in leaf-id
    /// space. Parallel edges are merged; vertices not touched by any edge are
    /// allowed and pass through projection unchanged.
    ///
    /// # Errors
    /// [`Error::InvalidInput`] for duplicate vertex ids, non-finite values,
    /// self-loops, or edges naming unknown vertices.
    pub fn new(vertex_values: &[(NodeId, f64)], edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for &(id, value) in vertex_values {
            if !value.is_finite() {
                return Err(Error::invalid_input(format!(
                    "value for leaf {id} is not finite: {value}"
                )));
            }
            if by_id.insert(id, value).is_some() {
                return Err(Error::invalid_input(format!("leaf {id} listed twice")));
            }
        }
        let vertices: Vec<NodeId> = by_id.keys().copied().collect();
        let values: Vec<f64> = by_id.values().copied().collect();
        let index_of: BTreeMap<NodeId, usize> =
            vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edge_set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(Error::invalid_input(format!(
                    "self-loop on leaf {a}: a leaf cannot be constrained below itself"
                )));
            }
            let ia = *index_of
                .get(&a)
                .ok_or_else(|| Error::invalid_input(format!("edge references unknown leaf {a}")))?;
            let ib = *index_of
                .get(&b)
                .ok_or_else(|| Error::invalid_input(format!("edge references unknown leaf {b}")))?;
            edge_set.insert((ia, ib));
        }
        Ok(ConstraintGraph {
            vertices,
            values,
            edges: edge_set.into_iter().collect(),
        })
    }

    /// Leaf ids, ascending.
    pub fn vertices(&self) -> &[NodeId] {
        &self.vertices
    }

    /// Current values, aligned with [`Self::vertices`].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Edges in leaf-id space.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges
            .iter()
            .map(|&(a, b)| (self.vertices[a], self.vertices[b]))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn topo_order(&self) -> Result<Vec<usize>> {
        let n = self.vertices.len();
        let mut in_deg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            in_deg[b] += 1;
            succ[a].push(b);
        }
        let mut queue: VecDeque<usize> =
            (0..n).filter(|&v| in_deg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &succ[v] {
                in_deg[w] -= 1;
                if in_deg[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&v| in_deg[v] > 0).unwrap();
            return Err(Error::invalid_input(format!(
                "constraint graph has a cycle through leaf {}",
                self.vertices[stuck]
            )));
        }
        Ok(order)
    }
}

/// The constraint graph of the exact estimator for one tree: for every split
/// on a constrained feature, an edge per pair of leaves (one from each
/// subtree) whose cells meet when that feature is ignored, oriented by the
/// constraint direction. Only leaves touched by at least one edge become
/// vertices.
pub fn build_constraint_graph(
    tree: &Tree,
    n_features: usize,
    spec: &ShapeSpec,
) -> Result<ConstraintGraph> {
    spec.validate_dims(n_features)?;
    let cells = leaf_cells(tree, n_features);
    let mut cell_at = vec![usize::MAX; tree.nodes().len()];
    for (pos, cell) in cells.iter().enumerate() {
        cell_at[cell.leaf] = pos;
    }
    let mut edge_set: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for node in tree.nodes() {
        let Node::Split {
            feature,
            left,
            right,
            ..
        } = *node
        else {
            continue;
        };
        let Some(direction) = spec.direction(feature) else {
            continue;
        };
        let collect = |side: NodeId| -> Vec<_> {
            tree.leaves_under(side)
                .into_iter()
                .map(|leaf| cells[cell_at[leaf]].clone())
                .collect()
        };
        let left_cells = collect(left);
        let right_cells = collect(right);
        for (a, b) in overlapping_pairs(&left_cells, &right_cells, feature)? {
            edge_set.insert(match direction {
                Direction::Increasing => (a, b),
                Direction::Decreasing => (b, a),
            });
        }
    }
    let mut touched: BTreeSet<NodeId> = BTreeSet::new();
    for &(a, b) in &edge_set {
        touched.insert(a);
        touched.insert(b);
    }
    let vertex_values: Vec<(NodeId, f64)> = touched
        .iter()
        .map(|&leaf| (leaf, tree.leaf_value(leaf).expect("edge endpoints are leaves")))
        .collect();
    let edges: Vec<(NodeId, NodeId)> = edge_set.into_iter().collect();
    ConstraintGraph::new(&vertex_values, &edges)
}

/// Euclidean projection of the graph's values onto the order constraints:
/// the closest values satisfying `value(i) <= value(j)` for every edge.
///
/// The projection is found by recursive partitioning: a block violating
/// nothing takes its mean unless some successor-closed subset sits strictly
/// above it, in which case the block splits there and both parts are solved
/// recursively. The best subset is a maximum-weight closure, located with a
/// minimum cut.
///
/// Returns fitted values aligned with [`ConstraintGraph::vertices`].
///
/// # Errors
/// [`Error::InvalidInput`] if the graph has a cycle.
pub fn dag_isotonic_exact(graph: &ConstraintGraph) -> Result<Vec<f64>> {
    let order = graph.topo_order()?;
    let n = graph.vertices.len();
    let mut fitted = vec![0.0; n];
    let block: Vec<usize> = (0..n).collect();
    solve_block(&block, &graph.values, &graph.edges, &mut fitted);
    // Cross-partition edges hold exactly in real arithmetic; a forward pass
    // in topological order removes any last-ulp rounding violations.
    for &v in &order {
        for &(a, b) in &graph.edges {
            if a == v && fitted[b] < fitted[a] {
                debug_assert!(
                    fitted[a] - fitted[b] <= 1e-9 * (1.0 + fitted[a].abs()),
                    "projection violated an edge beyond rounding noise"
                );
                fitted[b] = fitted[a];
            }
        }
    }
    Ok(fitted)
}

fn solve_block(block: &[usize], values: &[f64], edges: &[(usize, usize)], out: &mut [f64]) {
    let first = values[block[0]];
    if block.iter().all(|&v| values[v] == first) {
        for &v in block {
            out[v] = values[v];
        }
        return;
    }
    let mean = block.iter().map(|&v| values[v]).sum::<f64>() / block.len() as f64;
    let mut local = BTreeMap::new();
    for (pos, &v) in block.iter().enumerate() {
        local.insert(v, pos);
    }
    let source = block.len();
    let sink = block.len() + 1;
    let mut net = FlowNetwork::new(block.len() + 2);
    for (pos, &v) in block.iter().enumerate() {
        let w = values[v] - mean;
        if w > 0.0 {
            net.add_edge(source, pos, w);
        } else if w < 0.0 {
            net.add_edge(pos, sink, -w);
        }
    }
    for &(a, b) in edges {
        net.add_edge(local[&a], local[&b], f64::INFINITY);
    }
    net.max_flow(source, sink);
    let side = net.source_side(source);
    let upper: Vec<usize> = block
        .iter()
        .enumerate()
        .filter(|&(pos, _)| side[pos])
        .map(|(_, &v)| v)
        .collect();
    let weight: f64 = upper.iter().map(|&v| values[v] - mean).sum();
    let scale = block
        .iter()
        .map(|&v| (values[v] - mean).abs())
        .fold(0.0, f64::max);
    if upper.is_empty() || upper.len() == block.len() || weight <= 1e-11 * (1.0 + scale) {
        for &v in block {
            out[v] = mean;
        }
        return;
    }
    let in_upper: BTreeSet<usize> = upper.iter().copied().collect();
    let lower: Vec<usize> = block
        .iter()
        .copied()
        .filter(|v| !in_upper.contains(v))
        .collect();
    let part = |side: &BTreeSet<usize>, keep: bool| -> Vec<(usize, usize)> {
        edges
            .iter()
            .copied()
            .filter(|&(a, b)| (side.contains(&a) == keep) && (side.contains(&b) == keep))
            .collect()
    };
    let upper_edges = part(&in_upper, true);
    let lower_edges = part(&in_upper, false);
    solve_block(&lower, values, &lower_edges, out);
    solve_block(&upper, values, &upper_edges, out);
}

/// The over-constrained single-node solve: clips every left value down to a
/// common level `c` and every right value up to it, choosing `c` to minimize
/// the total squared adjustment under the constraint `max(left) <= min(right)`
/// after clipping.
///
/// Returns `(left_fitted, right_fitted, c)` with inputs in their original
/// order. Already-feasible inputs come back unchanged with `c` midway
/// between `max(left)` and `min(right)`.
///
/// # Errors
/// [`Error::InvalidInput`] if either side is empty or any value is
/// non-finite.
pub fn solve_node_overconstrained(
    left: &[f64],
    right: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::invalid_input(
            "both sides of a split need at least one leaf",
        ));
    }
    check_finite(left, "left")?;
    check_finite(right, "right")?;
    let max_l = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_r = right.iter().copied().fold(f64::INFINITY, f64::min);
    if max_l <= min_r {
        return Ok((left.to_vec(), right.to_vec(), 0.5 * (max_l + min_r)));
    }
    let mut ls = left.to_vec();
    ls.sort_by(f64::total_cmp);
    let mut rs = right.to_vec();
    rs.sort_by(f64::total_cmp);
    // Piecewise quadratic in c: active terms are left values above c and
    // right values below c. The derivative root is scanned across the sorted
    // breakpoints; the active count never reaches zero because the sides
    // overlap.
    let mut count = ls.len();
    let mut sum: f64 = ls.iter().sum();
    let mut li = 0;
    let mut ri = 0;
    let c = loop {
        let knot = match (ls.get(li), rs.get(ri)) {
            (None, None) => break sum / count as f64,
            (Some(&l), None) => l,
            (None, Some(&r)) => r,
            (Some(&l), Some(&r)) => l.min(r),
        };
        let root = sum / count as f64;
        if root <= knot {
            break root;
        }
        while li < ls.len() && ls[li] == knot {
            sum -= ls[li];
            count -= 1;
            li += 1;
        }
        while ri < rs.len() && rs[ri] == knot {
            sum += rs[ri];
            count += 1;
            ri += 1;
        }
    };
    let left_fit = left.iter().map(|&v| v.min(c)).collect();
    let right_fit = right.iter().map(|&v| v.max(c)).collect();
    Ok((left_fit, right_fit, c))
}

/// Which reshaping estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReshapeMethod {
    Exact,
    OverConstrained,
}

impl ReshapeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ReshapeMethod::Exact => "exact",
            ReshapeMethod::OverConstrained => "oc",
        }
    }
}

impl FromStr for ReshapeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ReshapeMethod::Exact),
            "oc" => Ok(ReshapeMethod::OverConstrained),
            other => Err(Error::invalid_input(format!(
                "unknown method {other:?} (expected \"exact\" or \"oc\")"
            ))),
        }
    }
}

/// Per-tree reshaping counters.
#[derive(Debug, Clone, Copy, Default)]
pub struct TreeStats {
    /// Exact method: edges in the constraint graph. Over-constrained method:
    /// implied pairwise constraints, summed over solved nodes.
    pub edges: u64,
    /// Shape-constrained split nodes processed.
    pub nodes_solved: u64,
}

/// Summary of one reshaping run, serialized as the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReshapeReport {
    pub method: String,
    pub edges: u64,
    /// Total squared change over all leaf values.
    pub objective: f64,
    pub nodes_solved: u64,
    pub wall_ms: f64,
}

/// Reshapes one tree. See [`reshape_forest`] for the forest-level entry
/// point; this one leaves probability clamping and timing to the caller.
pub fn reshape_tree(
    tree: &Tree,
    n_features: usize,
    spec: &ShapeSpec,
    method: ReshapeMethod,
) -> Result<(Tree, TreeStats)> {
    spec.validate_dims(n_features)?;
    match method {
        ReshapeMethod::Exact => {
            let graph = build_constraint_graph(tree, n_features, spec)?;
            let mut reshaped = tree.clone();
            if graph.edge_count() > 0 {
                let fitted = dag_isotonic_exact(&graph)?;
                for (&leaf, &value) in graph.vertices().iter().zip(&fitted) {
                    reshaped.set_leaf_value(leaf, value);
                }
            }
            let nodes_solved = constrained_nodes_deepest_first(tree, spec).len() as u64;
            Ok((
                reshaped,
                TreeStats {
                    edges: graph.edge_count() as u64,
                    nodes_solved,
                },
            ))
        }
        ReshapeMethod::OverConstrained => {
            let mut reshaped = tree.clone();
            let mut stats = TreeStats::default();
            for id in constrained_nodes_deepest_first(tree, spec) {
                let Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } = *reshaped.node(id)
                else {
                    unreachable!("constrained node list only holds splits")
                };
                let direction = spec.direction(feature).expect("node is constrained");
                let (lo_side, hi_side) = match direction {
                    Direction::Increasing => (left, right),
                    Direction::Decreasing => (right, left),
                };
                let lo_leaves = reshaped.leaves_under(lo_side);
                let hi_leaves = reshaped.leaves_under(hi_side);
                stats.edges += (lo_leaves.len() * hi_leaves.len()) as u64;
                stats.nodes_solved += 1;
                let lo_values: Vec<f64> = lo_leaves
                    .iter()
                    .map(|&l| reshaped.leaf_value(l).unwrap())
                    .collect();
                let hi_values: Vec<f64> = hi_leaves
                    .iter()
                    .map(|&l| reshaped.leaf_value(l).unwrap())
                    .collect();
                let (lo_fit, hi_fit, _) = solve_node_overconstrained(&lo_values, &hi_values)?;
                for (&leaf, &value) in lo_leaves.iter().zip(&lo_fit) {
                    reshaped.set_leaf_value(leaf, value);
                }
                for (&leaf, &value) in hi_leaves.iter().zip(&hi_fit) {
                    reshaped.set_leaf_value(leaf, value);
                }
            }
            Ok((reshaped, stats))
        }
    }
}

/// Shape-constrained split nodes, deepest level first and left to right
/// within a level.
fn constrained_nodes_deepest_first(tree: &Tree, spec: &ShapeSpec) -> Vec<NodeId> {
    let mut levels: Vec<Vec<NodeId>> = Vec::new();
    let mut queue = VecDeque::from([(tree.root(), 0usize)]);
    while let Some((id, depth)) = queue.pop_front() {
        if let Node::Split {
            feature,
            left,
            right,
            ..
        } = *tree.node(id)
        {
            if spec.direction(feature).is_some() {
                if levels.len() <= depth {
                    levels.resize(depth + 1, Vec::new());
                }
                levels[depth].push(id);
            }
            queue.push_back((left, depth + 1));
            queue.push_back((right, depth + 1));
        }
    }
    levels.into_iter().rev().flatten().collect()
}

/// Reshapes every tree of a forest and reports the aggregate counters.
///
/// Trees are independent and solved in parallel; the output does not depend
/// on the scheduling. For probability forests the fitted values are clamped
/// to [0, 1], which only ever removes accumulated rounding of at most a few
/// ulps: means and clips of values inside the interval stay inside it in
/// real arithmetic.
pub fn reshape_forest(
    model: &ForestModel,
    spec: &ShapeSpec,
    method: ReshapeMethod,
) -> Result<(ForestModel, ReshapeReport)> {
    spec.validate_dims(model.n_features())?;
    let start = Instant::now();
    let solved: Result<Vec<(Tree, TreeStats)>> = model
        .trees()
        .par_iter()
        .map(|tree| reshape_tree(tree, model.n_features(), spec, method))
        .collect();
    let solved = solved?;
    let mut trees = Vec::with_capacity(solved.len());
    let mut edges = 0u64;
    let mut nodes_solved = 0u64;
    for (mut tree, stats) in solved {
        if model.task() == Task::Probability {
            for leaf in tree.leaves_under(tree.root()) {
                let v = tree.leaf_value(leaf).unwrap();
                tree.set_leaf_value(leaf, v.clamp(0.0, 1.0));
            }
        }
        edges += stats.edges;
        nodes_solved += stats.nodes_solved;
        trees.push(tree);
    }
    let mut objective = 0.0;
    for (old, new) in model.trees().iter().zip(&trees) {
        for leaf in old.leaves_under(old.root()) {
            let d = new.leaf_value(leaf).unwrap() - old.leaf_value(leaf).unwrap();
            objective += d * d;
        }
    }
    let reshaped = ForestModel::new(model.task(), model.n_features(), trees)?;
    let report = ReshapeReport {
        method: method.as_str().to_owned(),
        edges,
        objective,
        nodes_solved,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((reshaped, report))
}
