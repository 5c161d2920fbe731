//! Binary regression and probability trees, their axis-aligned leaf cells,
//! and overlap queries between cells.
//!
//! Routing follows the `le_left` convention: a point goes left when
//! `x[feature] <= threshold` and right otherwise. Every leaf therefore owns a
//! product of half-open intervals `(a, b]`, one per feature, and two cells
//! meet exactly when every pair of intervals overlaps with strict comparison
//! on the open side.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// One tree node. `left`/`right` are indices into the owning tree's node
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: NodeId,
        right: NodeId,
    },
    Leaf {
        value: f64,
    },
}

/// A single-rooted binary tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    root: NodeId,
}

impl Tree {
    /// Builds a tree and checks that `nodes` under `root` really form one:
    /// child indices in range, every node except the root referenced exactly
    /// once, everything reachable from the root, and all numbers finite.
    pub fn new(nodes: Vec<Node>, root: NodeId) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid_input("tree has no nodes"));
        }
        if root >= nodes.len() {
            return Err(Error::invalid_input(format!(
                "root {root} out of range for {} nodes",
                nodes.len()
            )));
        }
        let mut refs = vec![0usize; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::invalid_input(format!(
                            "node {id} has non-finite threshold {threshold}"
                        )));
                    }
                    for child in [left, right] {
                        if child >= nodes.len() {
                            return Err(Error::invalid_input(format!(
                                "node {id} references unknown node {child}"
                            )));
                        }
                        refs[child] += 1;
                    }
                    if left == right {
                        return Err(Error::invalid_input(format!(
                            "node {id} uses node {left} as both children"
                        )));
                    }
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::invalid_input(format!(
                            "leaf {id} has non-finite value {value}"
                        )));
                    }
                }
            }
        }
        for (id, &count) in refs.iter().enumerate() {
            if id == root && count != 0 {
                return Err(Error::invalid_input(format!(
                    "root {root} is referenced as a child"
                )));
            }
            if id != root && count != 1 {
                return Err(Error::invalid_input(format!(
                    "node {id} is referenced {count} times; a tree node must have exactly one parent"
                )));
            }
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if seen[id] {
                return Err(Error::invalid_input(format!(
                    "node {id} is part of a cycle"
                )));
            }
            seen[id] = true;
            if let Node::Split { left, right, .. } = nodes[id] {
                stack.push(right);
                stack.push(left);
            }
        }
        if let Some(unreached) = seen.iter().position(|s| !s) {
            return Err(Error::invalid_input(format!(
                "node {unreached} is not reachable from the root"
            )));
        }
        Ok(Tree { nodes, root })
    }

    /// Convenience constructor for a one-leaf tree.
    pub fn leaf(value: f64) -> Result<Self> {
        Tree::new(vec![Node::Leaf { value }], 0)
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn leaf_value(&self, id: NodeId) -> Option<f64> {
        match self.nodes.get(id) {
            Some(&Node::Leaf { value }) => Some(value),
            _ => None,
        }
    }

    pub(crate) fn set_leaf_value(&mut self, id: NodeId, value: f64) {
        match &mut self.nodes[id] {
            Node::Leaf { value: v } => *v = value,
            Node::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    /// Leaf ids under `node`, in left-to-right tree order.
    pub fn leaves_under(&self, node: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { .. } => out.push(id),
                Node::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Routes `x` to a leaf and returns its value. The caller is responsible
    /// for passing a finite point of the right width; a NaN coordinate routes
    /// right at every split it reaches.
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut id = self.root;
        loop {
            match self.nodes[id] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// What the leaves of a forest estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    /// Leaves are class-probability estimates and must stay in [0, 1].
    Probability,
}

impl Task {
    fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Probability => "probability",
        }
    }
}

/// An ensemble of trees whose prediction is the arithmetic mean of the
/// per-tree predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    task: Task,
    n_features: usize,
    trees: Vec<Tree>,
}

impl ForestModel {
    /// # Errors
    /// [`Error::InvalidInput`] if there are no trees, a split references a
    /// feature outside `0..n_features`, or a probability leaf is outside
    /// [0, 1].
    pub fn new(task: Task, n_features: usize, trees: Vec<Tree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::invalid_input("forest needs at least one tree"));
        }
        for (ti, tree) in trees.iter().enumerate() {
            for (id, node) in tree.nodes.iter().enumerate() {
                match *node {
                    Node::Split { feature, .. } => {
                        if feature >= n_features {
                            return Err(Error::invalid_input(format!(
                                "tree {ti} node {id} splits on feature {feature} but the forest has {n_features} features"
                            )));
                        }
                    }
                    Node::Leaf { value } => {
                        if task == Task::Probability && !(0.0..=1.0).contains(&value) {
                            return Err(Error::invalid_input(format!(
                                "tree {ti} leaf {id} value {value} outside [0, 1] for a probability forest"
                            )));
                        }
                    }
                }
            }
        }
        Ok(ForestModel {
            task,
            n_features,
            trees,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean prediction over all trees.
    ///
    /// # Errors
    /// [`Error::InvalidInput`] if `x` has the wrong width or a non-finite
    /// entry.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::invalid_input(format!(
                "point has {} coordinates but the model has {} features",
                x.len(),
                self.n_features
            )));
        }
        crate::isotonic::check_finite(x, "x")?;
        Ok(self.predict_unchecked(x))
    }

    /// Mean prediction without argument checks; see
    /// [`Tree::predict_unchecked`].
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_unchecked(x)).sum();
        sum / self.trees.len() as f64
    }

    /// All split thresholds on `feature`, ascending with duplicates removed.
    pub fn thresholds_for(&self, feature: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Split {
                    feature: f,
                    threshold,
                    ..
                } = *node
                {
                    if f == feature {
                        out.push(threshold);
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        #[serde(untagged)]
        enum FileNode {
            Split {
                id: usize,
                feature: usize,
                threshold: f64,
                left: usize,
                right: usize,
            },
            Leaf {
                id: usize,
                value: f64,
            },
        }
        #[derive(Serialize)]
        struct FileTree {
            nodes: Vec<FileNode>,
            root: usize,
        }
        #[derive(Serialize)]
        struct FileForest<'a> {
            format_version: u32,
            task: &'a str,
            n_features: usize,
            routing: &'a str,
            trees: Vec<FileTree>,
        }
        let trees = self
            .trees
            .iter()
            .map(|tree| FileTree {
                nodes: tree
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(id, node)| match *node {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => FileNode::Split {
                            id,
                            feature,
                            threshold,
                            left,
                            right,
                        },
                        Node::Leaf { value } => FileNode::Leaf { id, value },
                    })
                    .collect(),
                root: tree.root,
            })
            .collect();
        let file = FileForest {
            format_version: 1,
            task: self.task.as_str(),
            n_features: self.n_features,
            routing: "le_left",
            trees,
        };
        serde_json::to_string_pretty(&file).expect("forest serialization cannot fail")
    }

    /// Parses the forest model format; see the crate README for the schema.
    ///
    /// # Errors
    /// [`Error::Parse`] for malformed JSON or schema violations, with the
    /// offending location in the message; [`Error::InvalidModel`] when the
    /// file parses but breaks a model rule (bad feature index, probability
    /// leaf outside [0, 1], disconnected nodes).
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("model JSON: {e}")))?;
        let top = value
            .as_object()
            .ok_or_else(|| Error::parse("model JSON: top level must be an object"))?;
        let version = get_u64(top, "format_version", "")?;
        if version != 1 {
            return Err(Error::parse(format!(
                "format_version {version} is not supported (expected 1)"
            )));
        }
        let task = match get_str(top, "task", "")? {
            "regression" => Task::Regression,
            "probability" => Task::Probability,
            other => {
                return Err(Error::parse(format!(
                    "task {other:?} is not supported (expected \"regression\" or \"probability\")"
                )))
            }
        };
        let routing = get_str(top, "routing", "")?;
        if routing != "le_left" {
            return Err(Error::parse(format!(
                "routing {routing:?} is not supported; this loader implements \"le_left\" and will not convert"
            )));
        }
        let n_features = get_u64(top, "n_features", "")? as usize;
        let trees_val = top
            .get("trees")
            .ok_or_else(|| Error::parse("field \"trees\" missing"))?
            .as_array()
            .ok_or_else(|| Error::parse("field \"trees\" must be an array"))?;
        if trees_val.is_empty() {
            return Err(Error::parse("\"trees\" is empty: a forest needs at least one tree"));
        }
        let mut trees = Vec::with_capacity(trees_val.len());
        for (ti, tree_val) in trees_val.iter().enumerate() {
            trees.push(parse_tree(tree_val, ti)?);
        }
        ForestModel::new(task, n_features, trees).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidModel(msg),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::parse(format!("cannot read model file {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }
}

fn get_u64(obj: &serde_json::Map<String, serde_json::Value>, key: &str, at: &str) -> Result<u64> {
    obj.get(key)
        .ok_or_else(|| Error::parse(format!("{at}field {key:?} missing")))?
        .as_u64()
        .ok_or_else(|| Error::parse(format!("{at}field {key:?} must be a non-negative integer")))
}

fn get_f64(obj: &serde_json::Map<String, serde_json::Value>, key: &str, at: &str) -> Result<f64> {
    obj.get(key)
        .ok_or_else(|| Error::parse(format!("{at}field {key:?} missing")))?
        .as_f64()
        .ok_or_else(|| Error::parse(format!("{at}field {key:?} must be a number")))
}

fn get_str<'v>(
    obj: &'v serde_json::Map<String, serde_json::Value>,
    key: &str,
    at: &str,
) -> Result<&'v str> {
    obj.get(key)
        .ok_or_else(|| Error::parse(format!("{at}field {key:?} missing")))?
        .as_str()
        .ok_or_else(|| Error::parse(format!("{at}field {key:?} must be a string")))
}

fn parse_tree(value: &serde_json::Value, ti: usize) -> Result<Tree> {
    let at = format!("trees[{ti}]: ");
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse(format!("{at}must be an object")))?;
    let nodes_val = obj
        .get("nodes")
        .ok_or_else(|| Error::parse(format!("{at}field \"nodes\" missing")))?
        .as_array()
        .ok_or_else(|| Error::parse(format!("{at}field \"nodes\" must be an array")))?;
    let root_id = get_u64(obj, "root", &at)?;

    enum RawNode {
        Split {
            feature: usize,
            threshold: f64,
            left: u64,
            right: u64,
        },
        Leaf {
            value: f64,
        },
    }
    let mut ids = BTreeMap::new();
    let mut raw = Vec::with_capacity(nodes_val.len());
    for (ni, node_val) in nodes_val.iter().enumerate() {
        let at = format!("trees[{ti}].nodes[{ni}]: ");
        let node_obj = node_val
            .as_object()
            .ok_or_else(|| Error::parse(format!("{at}must be an object")))?;
        let id = get_u64(node_obj, "id", &at)?;
        if ids.insert(id, ni).is_some() {
            return Err(Error::parse(format!("{at}duplicate node id {id}")));
        }
        let is_leaf = node_obj.contains_key("value");
        let is_split = node_obj.contains_key("feature");
        let node = match (is_leaf, is_split) {
            (true, false) => RawNode::Leaf {
                value: get_f64(node_obj, "value", &at)?,
            },
            (false, true) => RawNode::Split {
                feature: get_u64(node_obj, "feature", &at)? as usize,
                threshold: get_f64(node_obj, "threshold", &at)?,
                left: get_u64(node_obj, "left", &at)?,
                right: get_u64(node_obj, "right", &at)?,
            },
            (true, true) => {
                return Err(Error::parse(format!(
                    "{at}has both \"value\" and \"feature\"; a node is a leaf or a split, not both"
                )))
            }
            (false, false) => {
                return Err(Error::parse(format!(
                    "{at}needs either \"value\" (leaf) or \"feature\"/\"threshold\"/\"left\"/\"right\" (split)"
                )))
            }
        };
        raw.push((id, node));
    }
    let lookup = |id: u64, at: &str| -> Result<usize> {
        ids.get(&id)
            .copied()
            .ok_or_else(|| Error::parse(format!("{at}references unknown node id {id}")))
    };
    let mut nodes = Vec::with_capacity(raw.len());
    for (ni, (_, node)) in raw.iter().enumerate() {
        let at = format!("trees[{ti}].nodes[{ni}]: ");
        nodes.push(match *node {
            RawNode::Leaf { value } => Node::Leaf { value },
            RawNode::Split {
                feature,
                threshold,
                left,
                right,
            } => Node::Split {
                feature,
                threshold,
                left: lookup(left, &at)?,
                right: lookup(right, &at)?,
            },
        });
    }
    let root = lookup(root_id, &at)?;
    Tree::new(nodes, root).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidModel(format!("trees[{ti}]: {msg}")),
        other => other,
    })
}

/// The half-open interval `(lo, hi]`. Empty when `lo >= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const FULL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    /// Strict on the open side: `(a, t]` and `(t, b]` do not overlap.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo.max(other.lo) < self.hi.min(other.hi)
    }
}

/// The axis-aligned region of feature space routed to one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafCell {
    pub leaf: NodeId,
    pub intervals: Vec<Interval>,
}

impl LeafCell {
    /// Empty cells arise from contradictory splits on one path; no point
    /// routes to them.
    pub fn is_empty(&self) -> bool {
        self.intervals.iter().any(Interval::is_empty)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.intervals.len()
            && self.intervals.iter().zip(x).all(|(iv, &xi)| iv.contains(xi))
    }
}

/// The cell of every leaf, in left-to-right tree order.
pub fn leaf_cells(tree: &Tree, n_features: usize) -> Vec<LeafCell> {
    let mut out = Vec::new();
    let mut stack = vec![(tree.root(), vec![Interval::FULL; n_features])];
    while let Some((id, intervals)) = stack.pop() {
        match *tree.node(id) {
            Node::Leaf { .. } => out.push(LeafCell { leaf: id, intervals }),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let mut left_iv = intervals.clone();
                left_iv[feature].hi = left_iv[feature].hi.min(threshold);
                let mut right_iv = intervals;
                right_iv[feature].lo = right_iv[feature].lo.max(threshold);
                stack.push((right, right_iv));
                stack.push((left, left_iv));
            }
        }
    }
    out
}

struct IxNode {
    center: f64,
    /// Intervals containing `center`, paired with their ids, sorted by lower
    /// bound ascending.
    by_lo: Vec<(f64, usize)>,
    /// The same intervals sorted by upper bound descending.
    by_hi: Vec<(f64, usize)>,
    left: Option<Box<IxNode>>,
    right: Option<Box<IxNode>>,
}

/// A static interval tree over half-open intervals supporting overlap
/// queries in O(log n + matches). Query results do not depend on the order
/// the intervals were supplied in.
pub struct IntervalIndex {
    root: Option<Box<IxNode>>,
}

impl IntervalIndex {
    /// Empty intervals are skipped: they overlap nothing.
    pub fn build(items: &[(Interval, usize)]) -> IntervalIndex {
        let live: Vec<(Interval, usize)> = items
            .iter()
            .filter(|(iv, _)| !iv.is_empty())
            .copied()
            .collect();
        IntervalIndex {
            root: build_node(live),
        }
    }

    /// Ids of stored intervals overlapping `q`, ascending.
    pub fn query(&self, q: Interval) -> Vec<usize> {
        let mut out = Vec::new();
        if !q.is_empty() {
            if let Some(root) = &self.root {
                query_node(root, q, &mut out);
            }
        }
        out.sort_unstable();
        out
    }
}

fn build_node(items: Vec<(Interval, usize)>) -> Option<Box<IxNode>> {
    if items.is_empty() {
        return None;
    }
    // Every nonempty half-open interval contains its own upper bound, so the
    // median of upper bounds is contained in at least one stored interval and
    // both recursive partitions strictly shrink.
    let mut uppers: Vec<f64> = items.iter().map(|(iv, _)| iv.hi).collect();
    uppers.sort_by(f64::total_cmp);
    let center = uppers[uppers.len() / 2];
    let mut here = Vec::new();
    let mut left_items = Vec::new();
    let mut right_items = Vec::new();
    for (iv, id) in items {
        if iv.contains(center) {
            here.push((iv, id));
        } else if iv.hi < center {
            left_items.push((iv, id));
        } else {
            right_items.push((iv, id));
        }
    }
    let mut by_lo: Vec<(f64, usize)> = here.iter().map(|(iv, id)| (iv.lo, *id)).collect();
    by_lo.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut by_hi: Vec<(f64, usize)> = here.iter().map(|(iv, id)| (iv.hi, *id)).collect();
    by_hi.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Some(Box::new(IxNode {
        center,
        by_lo,
        by_hi,
        left: build_node(left_items),
        right: build_node(right_items),
    }))
}

fn query_node(node: &IxNode, q: Interval, out: &mut Vec<usize>) {
    if q.lo < node.center && node.center <= q.hi {
        // The query contains the center point, so every interval stored here
        // shares at least that point with it.
        out.extend(node.by_lo.iter().map(|&(_, id)| id));
        if let Some(left) = &node.left {
            query_node(left, q, out);
        }
        if let Some(right) = &node.right {
            query_node(right, q, out);
        }
    } else if q.hi <= node.center {
        // Stored intervals here all contain the center, which lies at or
        // above q.hi; they overlap q exactly when they start below q.hi.
        for &(lo, id) in &node.by_lo {
            if lo < q.hi {
                out.push(id);
            } else {
                break;
            }
        }
        if let Some(left) = &node.left {
            query_node(left, q, out);
        }
    } else {
        // center <= q.lo: stored intervals overlap q exactly when they end
        // above q.lo.
        for &(hi, id) in &node.by_hi {
            if hi > q.lo {
                out.push(id);
            } else {
                break;
            }
        }
        if let Some(right) = &node.right {
            query_node(right, q, out);
        }
    }
}

/// Pairs `(left leaf, right leaf)` whose cells intersect once the
/// `drop_feature` interval is ignored (widened to the whole line).
///
/// Empty cells never pair. The result is sorted by leaf ids.
///
/// # Errors
/// [`Error::InvalidInput`] if the cells disagree on the feature count or
/// `drop_feature` is out of range.
pub fn overlapping_pairs(
    left_cells: &[LeafCell],
    right_cells: &[LeafCell],
    drop_feature: usize,
) -> Result<Vec<(NodeId, NodeId)>> {
    let d = left_cells
        .iter()
        .chain(right_cells)
        .map(|c| c.intervals.len())
        .next()
        .unwrap_or(drop_feature + 1);
    for cell in left_cells.iter().chain(right_cells) {
        if cell.intervals.len() != d {
            return Err(Error::invalid_input(format!(
                "cell for leaf {} has {} intervals, expected {d}",
                cell.leaf,
                cell.intervals.len()
            )));
        }
    }
    if drop_feature >= d {
        return Err(Error::invalid_input(format!(
            "drop feature {drop_feature} out of range for {d} features"
        )));
    }
    let live_left: Vec<&LeafCell> = left_cells.iter().filter(|c| !c.is_empty()).collect();
    let live_right: Vec<&LeafCell> = right_cells.iter().filter(|c| !c.is_empty()).collect();
    let mut pairs = Vec::new();
    if d == 1 {
        // Dropping the only feature leaves the whole space on both sides.
        for l in &live_left {
            for r in &live_right {
                pairs.push((l.leaf, r.leaf));
            }
        }
    } else {
        let probe = if drop_feature == 0 { 1 } else { 0 };
        let indexed: Vec<(Interval, usize)> = live_right
            .iter()
            .enumerate()
            .map(|(pos, cell)| (cell.intervals[probe], pos))
            .collect();
        let index = IntervalIndex::build(&indexed);
        for l in &live_left {
            'candidates: for pos in index.query(l.intervals[probe]) {
                let r = live_right[pos];
                for j in 0..d {
                    if j == drop_feature || j == probe {
                        continue;
                    }
                    if !l.intervals[j].overlaps(&r.intervals[j]) {
                        continue 'candidates;
                    }
                }
                pairs.push((l.leaf, r.leaf));
            }
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn split(feature: usize, threshold: f64, left: usize, right: usize) -> Node {
        Node::Split {
            feature,
            threshold,
            left,
            right,
        }
    }

    fn leaf(value: f64) -> Node {
        Node::Leaf { value }
    }

    fn stump(feature: usize, threshold: f64, lo: f64, hi: f64) -> Tree {
        Tree::new(
            vec![split(feature, threshold, 1, 2), leaf(lo), leaf(hi)],
            0,
        )
        .unwrap()
    }

    #[test]
    fn point_on_threshold_routes_left() {
        let tree = stump(0, 1.5, 10.0, 20.0);
        assert_eq!(tree.predict_unchecked(&[1.5]), 10.0);
        assert_eq!(tree.predict_unchecked(&[1.5000001]), 20.0);
    }

    #[test]
    fn forest_prediction_is_the_mean_over_trees() {
        let model = ForestModel::new(
            Task::Probability,
            1,
            vec![Tree::leaf(0.0).unwrap(), Tree::leaf(1.0).unwrap()],
        )
        .unwrap();
        assert_eq!(model.predict(&[0.3]).unwrap(), 0.5);
    }

    #[test]
    fn constant_tree_predicts_its_leaf() {
        let model = ForestModel::new(Task::Regression, 2, vec![Tree::leaf(7.0).unwrap()]).unwrap();
        assert_eq!(model.predict(&[100.0, -3.0]).unwrap(), 7.0);
    }

    #[test]
    fn predict_validates_width_and_finiteness() {
        let model = ForestModel::new(Task::Regression, 2, vec![Tree::leaf(1.0).unwrap()]).unwrap();
        assert!(model.predict(&[1.0]).is_err());
        assert!(model.predict(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn tree_structure_is_validated() {
        assert!(Tree::new(vec![], 0).is_err());
        assert!(Tree::new(vec![leaf(1.0)], 3).is_err());
        // Dangling child.
        assert!(Tree::new(vec![split(0, 0.0, 1, 5), leaf(1.0)], 0).is_err());
        // Child referenced twice.
        assert!(Tree::new(
            vec![split(0, 0.0, 1, 2), split(0, 1.0, 3, 2), leaf(1.0), leaf(2.0)],
            0
        )
        .is_err());
        // Unreachable node.
        assert!(Tree::new(vec![leaf(1.0), leaf(2.0)], 0).is_err());
        assert!(Tree::new(vec![leaf(f64::NAN)], 0).is_err());
    }

    #[test]
    fn probability_leaves_must_stay_in_unit_interval() {
        assert!(ForestModel::new(Task::Probability, 1, vec![Tree::leaf(1.5).unwrap()]).is_err());
        assert!(ForestModel::new(Task::Regression, 1, vec![Tree::leaf(1.5).unwrap()]).is_ok());
    }

    #[test]
    fn forest_rejects_out_of_range_feature() {
        let tree = stump(3, 0.0, 1.0, 2.0);
        assert!(ForestModel::new(Task::Regression, 3, vec![tree]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let tree = Tree::new(
            vec![
                split(1, 0.1 + 0.2, 1, 2),
                leaf(1.0 / 3.0),
                split(0, -7.25e-19, 3, 4),
                leaf(f64::MIN_POSITIVE),
                leaf(-0.0),
            ],
            0,
        )
        .unwrap();
        let model = ForestModel::new(Task::Regression, 2, vec![tree]).unwrap();
        let reloaded = ForestModel::from_json(&model.to_json()).unwrap();
        assert_eq!(reloaded, model);
        for (a, b) in model.trees()[0].nodes().iter().zip(reloaded.trees()[0].nodes()) {
            match (a, b) {
                (Node::Leaf { value: va }, Node::Leaf { value: vb }) => {
                    assert_eq!(va.to_bits(), vb.to_bits());
                }
                (Node::Split { threshold: ta, .. }, Node::Split { threshold: tb, .. }) => {
                    assert_eq!(ta.to_bits(), tb.to_bits());
                }
                _ => panic!("node kind changed in round trip"),
            }
        }
    }

    #[test]
    fn loader_rejects_contract_violations() {
        let good = ForestModel::new(Task::Regression, 1, vec![Tree::leaf(1.0).unwrap()])
            .unwrap()
            .to_json();
        assert!(ForestModel::from_json(&good).is_ok());
        for (needle, replacement) in [
            ("\"format_version\": 1", "\"format_version\": 2"),
            ("\"task\": \"regression\"", "\"task\": \"ranking\""),
            ("\"routing\": \"le_left\"", "\"routing\": \"gt_left\""),
            ("\"trees\": [", "\"forest\": ["),
        ] {
            let bad = good.replace(needle, replacement);
            assert!(
                ForestModel::from_json(&bad).is_err(),
                "accepted model with {replacement:?}"
            );
        }
        assert!(ForestModel::from_json("{").is_err());
        let empty = r#"{"format_version":1,"task":"regression","n_features":1,"routing":"le_left","trees":[]}"#;
        assert!(ForestModel::from_json(empty).is_err());
    }

    #[test]
    fn loader_reports_node_level_problems_with_location() {
        let dangling = r#"{"format_version":1,"task":"regression","n_features":1,"routing":"le_left",
            "trees":[{"nodes":[{"id":0,"feature":0,"threshold":0.5,"left":1,"right":9},{"id":1,"value":1.0}],"root":0}]}"#;
        let err = ForestModel::from_json(dangling).unwrap_err().to_string();
        assert!(err.contains("trees[0]"), "no location in: {err}");
        assert!(err.contains('9'), "no offending id in: {err}");

        let negative_feature = r#"{"format_version":1,"task":"regression","n_features":1,"routing":"le_left",
            "trees":[{"nodes":[{"id":0,"feature":-1,"threshold":0.5,"left":1,"right":2},{"id":1,"value":1.0},{"id":2,"value":2.0}],"root":0}]}"#;
        assert!(ForestModel::from_json(negative_feature).is_err());

        let duplicate = r#"{"format_version":1,"task":"regression","n_features":1,"routing":"le_left",
            "trees":[{"nodes":[{"id":0,"value":1.0},{"id":0,"value":2.0}],"root":0}]}"#;
        let err = ForestModel::from_json(duplicate).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "wrong message: {err}");
    }

    #[test]
    fn file_ids_do_not_need_to_be_contiguous() {
        let scattered = r#"{"format_version":1,"task":"regression","n_features":1,"routing":"le_left",
            "trees":[{"nodes":[{"id":42,"feature":0,"threshold":0.0,"left":7,"right":100},
                               {"id":7,"value":-1.0},{"id":100,"value":1.0}],"root":42}]}"#;
        let model = ForestModel::from_json(scattered).unwrap();
        assert_eq!(model.predict(&[-5.0]).unwrap(), -1.0);
        assert_eq!(model.predict(&[5.0]).unwrap(), 1.0);
    }

    #[test]
    fn half_open_interval_semantics() {
        let a = Interval { lo: f64::NEG_INFINITY, hi: 2.0 };
        let b = Interval { lo: 2.0, hi: f64::INFINITY };
        assert!(!a.overlaps(&b));
        assert!(!b.overlaps(&a));
        assert!(a.contains(2.0));
        assert!(!b.contains(2.0));
        let c = Interval { lo: 1.0, hi: 3.0 };
        assert!(a.overlaps(&c));
        assert!(b.overlaps(&c));
        assert!(Interval { lo: 1.0, hi: 1.0 }.is_empty());
        assert!(!Interval::FULL.is_empty());
    }

    #[test]
    fn single_leaf_cell_covers_everything() {
        let tree = Tree::leaf(1.0).unwrap();
        let cells = leaf_cells(&tree, 3);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].intervals, vec![Interval::FULL; 3]);
        assert!(cells[0].contains(&[1e17, -4.0, 0.0]));
    }

    #[test]
    fn one_split_partitions_the_line() {
        let tree = stump(0, 2.0, -1.0, 1.0);
        let cells = leaf_cells(&tree, 1);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].intervals[0], Interval { lo: f64::NEG_INFINITY, hi: 2.0 });
        assert_eq!(cells[1].intervals[0], Interval { lo: 2.0, hi: f64::INFINITY });
    }

    #[test]
    fn contradictory_path_produces_an_empty_cell() {
        // x0 <= 1 then x0 > 3 cannot hold together.
        let tree = Tree::new(
            vec![
                split(0, 1.0, 1, 4),
                split(0, 3.0, 2, 3),
                leaf(1.0),
                leaf(2.0),
                leaf(3.0),
            ],
            0,
        )
        .unwrap();
        let cells = leaf_cells(&tree, 1);
        let empty: Vec<_> = cells.iter().filter(|c| c.is_empty()).collect();
        assert_eq!(empty.len(), 1);
        assert_eq!(empty[0].leaf, 3);
    }

    #[test]
    fn cells_partition_points_like_routing() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let tree = random_tree(&mut rng, 3, 4);
            let cells = leaf_cells(&tree, 3);
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let containing: Vec<_> = cells.iter().filter(|c| c.contains(&x)).collect();
                assert_eq!(containing.len(), 1, "point {x:?} lies in {containing:?}");
                let mut id = tree.root();
                loop {
                    match *tree.node(id) {
                        Node::Leaf { .. } => break,
                        Node::Split { feature, threshold, left, right } => {
                            id = if x[feature] <= threshold { left } else { right };
                        }
                    }
                }
                assert_eq!(containing[0].leaf, id);
            }
        }
    }

    fn random_tree(rng: &mut StdRng, d: usize, depth: usize) -> Tree {
        fn grow(rng: &mut StdRng, d: usize, depth: usize, nodes: &mut Vec<Node>) -> usize {
            let id = nodes.len();
            if depth == 0 || rng.random_bool(0.3) {
                nodes.push(Node::Leaf { value: rng.random_range(-1.0..1.0) });
            } else {
                nodes.push(Node::Leaf { value: 0.0 });
                let feature = rng.random_range(0..d);
                let threshold = rng.random_range(-1.5..1.5);
                let left = grow(rng, d, depth - 1, nodes);
                let right = grow(rng, d, depth - 1, nodes);
                nodes[id] = Node::Split { feature, threshold, left, right };
            }
            id
        }
        let mut nodes = Vec::new();
        let root = grow(rng, d, depth, &mut nodes);
        assert_eq!(root, 0);
        Tree::new(nodes, root).unwrap()
    }

    #[test]
    fn interval_index_matches_brute_force_and_ignores_insertion_order() {
        let mut rng = StdRng::seed_from_u64(11);
        for round in 0..30 {
            let n = rng.random_range(1..40);
            let mut items: Vec<(Interval, usize)> = (0..n)
                .map(|id| {
                    let a: f64 = rng.random_range(-5.0..5.0);
                    let b: f64 = rng.random_range(-5.0..5.0);
                    let lo = if rng.random_bool(0.1) { f64::NEG_INFINITY } else { a.min(b) };
                    let hi = if rng.random_bool(0.1) { f64::INFINITY } else { a.max(b) };
                    (Interval { lo, hi }, id)
                })
                .collect();
            let queries: Vec<Interval> = (0..20)
                .map(|_| {
                    let a: f64 = rng.random_range(-5.0..5.0);
                    let b: f64 = rng.random_range(-5.0..5.0);
                    Interval { lo: a.min(b), hi: a.max(b) }
                })
                .collect();
            let forward = IntervalIndex::build(&items);
            items.reverse();
            let backward = IntervalIndex::build(&items);
            for q in queries {
                let mut expect: Vec<usize> = items
                    .iter()
                    .filter(|(iv, _)| !iv.is_empty() && iv.overlaps(&q))
                    .map(|&(_, id)| id)
                    .collect();
                expect.sort_unstable();
                assert_eq!(forward.query(q), expect, "round {round} query {q:?}");
                assert_eq!(backward.query(q), expect, "insertion order changed results");
            }
        }
    }

    #[test]
    fn overlap_pairs_on_single_feature_pairs_all_live_cells() {
        let left = vec![LeafCell { leaf: 1, intervals: vec![Interval { lo: f64::NEG_INFINITY, hi: 0.0 }] }];
        let right = vec![
            LeafCell { leaf: 2, intervals: vec![Interval { lo: 0.0, hi: 1.0 }] },
            LeafCell { leaf: 3, intervals: vec![Interval { lo: 1.0, hi: 1.0 }] },
        ];
        let pairs = overlapping_pairs(&left, &right, 0).unwrap();
        assert_eq!(pairs, vec![(1, 2)]);
    }

    #[test]
    fn overlap_pairs_respect_shared_endpoints_on_other_features() {
        // Identical x1 intervals meeting only at the shared endpoint must not
        // pair once x0 is dropped.
        let left = vec![LeafCell {
            leaf: 0,
            intervals: vec![
                Interval { lo: f64::NEG_INFINITY, hi: 0.0 },
                Interval { lo: f64::NEG_INFINITY, hi: 5.0 },
            ],
        }];
        let right = vec![LeafCell {
            leaf: 1,
            intervals: vec![
                Interval { lo: 0.0, hi: f64::INFINITY },
                Interval { lo: 5.0, hi: f64::INFINITY },
            ],
        }];
        assert_eq!(overlapping_pairs(&left, &right, 0).unwrap(), vec![]);
        let touching = vec![LeafCell {
            leaf: 1,
            intervals: vec![
                Interval { lo: 0.0, hi: f64::INFINITY },
                Interval { lo: 4.0, hi: f64::INFINITY },
            ],
        }];
        assert_eq!(overlapping_pairs(&left, &touching, 0).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn overlap_pairs_match_brute_force_on_random_cells() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..40 {
            let d = rng.random_range(1..4);
            let drop = rng.random_range(0..d);
            let make = |rng: &mut StdRng, leaf: usize| {
                let intervals = (0..d)
                    .map(|_| {
                        let a: f64 = rng.random_range(-3.0..3.0);
                        let b: f64 = rng.random_range(-3.0..3.0);
                        Interval { lo: a.min(b), hi: a.max(b) }
                    })
                    .collect();
                LeafCell { leaf, intervals }
            };
            let left: Vec<LeafCell> = (0..rng.random_range(1..12)).map(|i| make(&mut rng, i)).collect();
            let right: Vec<LeafCell> = (0..rng.random_range(1..12)).map(|i| make(&mut rng, 100 + i)).collect();
            let mut expect = Vec::new();
            for l in &left {
                for r in &right {
                    if l.is_empty() || r.is_empty() {
                        continue;
                    }
                    let ok = (0..d).all(|j| j == drop || l.intervals[j].overlaps(&r.intervals[j]));
                    if ok {
                        expect.push((l.leaf, r.leaf));
                    }
                }
            }
            expect.sort_unstable();
            assert_eq!(overlapping_pairs(&left, &right, drop).unwrap(), expect);
        }
    }

    #[test]
    fn overlap_pairs_validates_arguments() {
        let cell = LeafCell { leaf: 0, intervals: vec![Interval::FULL] };
        let wide = LeafCell { leaf: 1, intervals: vec![Interval::FULL; 2] };
        assert!(overlapping_pairs(&[cell.clone()], &[wide], 0).is_err());
        assert!(overlapping_pairs(&[cell.clone()], &[cell.clone()], 1).is_err());
    }
}
