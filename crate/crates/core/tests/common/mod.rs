//! Shared oracles and generators for the integration suites.
//!
//! Everything here is deliberately independent of the library's solvers:
//! projections are computed by cyclic Dykstra iteration, minima by grid
//! scans, and trees by a tiny greedy trainer, so the fast implementations
//! have something honest to be checked against.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reshape_core::iiso::{evaluate_g, IisoProblem};
use reshape_core::tree::{ForestModel, Node, Task, Tree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw via Box-Muller.
pub fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One convex set to project onto cyclically.
#[derive(Debug, Clone, Copy)]
pub enum Constraint {
    /// x[a] <= x[b]
    Leq(usize, usize),
    /// x[p] == c
    Fix(usize, f64),
}

/// Dykstra's alternating projection onto the intersection of the given
/// half-spaces and hyperplanes, started from `values`. Converges to the
/// exact L2 projection; iteration stops once a full cycle moves every
/// coordinate by less than `tol`, or after `max_cycles` cycles.
pub fn dykstra(values: &[f64], constraints: &[Constraint], max_cycles: usize, tol: f64) -> Vec<f64> {
    let mut x = values.to_vec();
    let mut corr = vec![0.0f64; constraints.len()];
    for _ in 0..max_cycles {
        let mut delta = 0.0f64;
        for (j, con) in constraints.iter().enumerate() {
            match *con {
                Constraint::Leq(a, b) => {
                    let ya = x[a] + corr[j];
                    let yb = x[b] - corr[j];
                    let v = ya - yb;
                    let (na, nb) = if v > 0.0 {
                        let mid = v / 2.0;
                        (ya - mid, yb + mid)
                    } else {
                        (ya, yb)
                    };
                    corr[j] = ya - na;
                    delta = delta.max((na - x[a]).abs()).max((nb - x[b]).abs());
                    x[a] = na;
                    x[b] = nb;
                }
                Constraint::Fix(p, c) => {
                    let yp = x[p] + corr[j];
                    corr[j] = yp - c;
                    delta = delta.max((c - x[p]).abs());
                    x[p] = c;
                }
            }
        }
        if delta < tol {
            break;
        }
    }
    x
}

/// Exact nondecreasing projection of a short sequence, by Dykstra over the
/// adjacent-pair half-spaces.
pub fn dykstra_monotone(values: &[f64]) -> Vec<f64> {
    let cons: Vec<Constraint> = (1..values.len()).map(|i| Constraint::Leq(i - 1, i)).collect();
    dykstra(values, &cons, 200_000, 1e-13)
}

/// Nondecreasing projection with the pivot coordinate pinned to `c`.
pub fn dykstra_pivoted(values: &[f64], pivot: usize, c: f64) -> Vec<f64> {
    let mut cons: Vec<Constraint> =
        (1..values.len()).map(|i| Constraint::Leq(i - 1, i)).collect();
    cons.push(Constraint::Fix(pivot, c));
    dykstra(values, &cons, 200_000, 1e-13)
}

/// Projection onto `{x : x[a] <= x[b] for each edge}`.
pub fn dykstra_dag(values: &[f64], edges: &[(usize, usize)]) -> Vec<f64> {
    let cons: Vec<Constraint> = edges.iter().map(|&(a, b)| Constraint::Leq(a, b)).collect();
    dykstra(values, &cons, 200_000, 1e-11)
}

/// Minimum of the pinned-value objective over the grid `lo + j * step`
/// covering every vector entry. The objective is convex in `c`, so a coarse
/// scan brackets the minimizer and only the surrounding window needs the
/// fine scan; the result equals the full fine-grid minimum.
pub fn grid_min_g(problem: &IisoProblem, step: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for vec in problem.vectors() {
        for &v in vec {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let n_points = ((hi - lo) / step).ceil() as usize + 1;
    let eval = |j: usize| evaluate_g(problem, lo + j as f64 * step).unwrap();
    let stride = 100usize;
    let mut best_coarse = 0;
    let mut best_val = f64::INFINITY;
    let mut j = 0;
    while j < n_points {
        let g = eval(j);
        if g < best_val {
            best_val = g;
            best_coarse = j;
        }
        j += stride;
    }
    let from = best_coarse.saturating_sub(stride);
    let to = (best_coarse + stride).min(n_points - 1);
    let mut best = best_val;
    for j in from..=to {
        best = best.min(eval(j));
    }
    best
}

/// Random binary tree with thresholds interior to the unit cube and leaf
/// values uniform in [-5, 5]. The root always splits; deeper nodes split
/// with probability 3/4 until `max_depth`.
pub fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, max_depth: usize) -> Tree {
    fn grow(
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<Node>,
        depth: usize,
        max_depth: usize,
        n_features: usize,
    ) -> usize {
        let split_p = if depth >= max_depth {
            0.0
        } else if depth == 0 {
            1.0
        } else {
            0.75
        };
        let id = nodes.len();
        if rng.random::<f64>() < split_p {
            nodes.push(Node::Leaf { value: 0.0 });
            let feature = rng.random_range(0..n_features);
            let threshold = rng.random_range(0.05..0.95);
            let left = grow(rng, nodes, depth + 1, max_depth, n_features);
            let right = grow(rng, nodes, depth + 1, max_depth, n_features);
            nodes[id] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        } else {
            nodes.push(Node::Leaf {
                value: rng.random_range(-5.0..5.0),
            });
        }
        id
    }
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, 0, max_depth, n_features);
    Tree::new(nodes, 0).unwrap()
}

pub fn random_forest(
    rng: &mut ChaCha8Rng,
    n_trees: usize,
    n_features: usize,
    max_depth: usize,
) -> ForestModel {
    let trees: Vec<Tree> = (0..n_trees)
        .map(|_| random_tree(rng, n_features, max_depth))
        .collect();
    ForestModel::new(Task::Regression, n_features, trees).unwrap()
}

/// Random edge set over `0..n` with every edge oriented low index to high
/// index, hence acyclic.
pub fn random_dag_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Uniform design points on the unit cube and responses from a trend that
/// rises in features 0 and 1, wiggles in feature 2, and mixes features 3
/// and 4, plus Gaussian noise.
pub fn synthetic_monotone(n: usize, d: usize, noise_sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    assert!(d >= 5);
    let mut r = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| r.random_range(0.0..1.0)).collect();
        let trend = 2.0 * x[0] + 1.5 * x[1] * x[1]
            + 0.4 * (3.0 * std::f64::consts::PI * x[2]).sin()
            + 0.5 * x[3] * x[4];
        ys.push(trend + noise_sd * std_normal(&mut r));
        xs.push(x);
    }
    (xs, ys)
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    sse: f64,
}

fn sse_of(sum: f64, sq: f64, n: f64) -> f64 {
    sq - sum * sum / n
}

fn best_split(xs: &[Vec<f64>], ys: &[f64], idx: &[usize], min_leaf: usize) -> Option<SplitChoice> {
    let d = xs[0].len();
    let mut best: Option<SplitChoice> = None;
    for feature in 0..d {
        let mut vals: Vec<(f64, f64)> = idx.iter().map(|&i| (xs[i][feature], ys[i])).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total_sum: f64 = vals.iter().map(|v| v.1).sum();
        let total_sq: f64 = vals.iter().map(|v| v.1 * v.1).sum();
        let mut sum_l = 0.0;
        let mut sq_l = 0.0;
        for (pos, &(x, y)) in vals.iter().enumerate() {
            sum_l += y;
            sq_l += y * y;
            let n_l = pos + 1;
            let n_r = vals.len() - n_l;
            if n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            if vals[pos + 1].0 <= x {
                continue;
            }
            let sse = sse_of(sum_l, sq_l, n_l as f64)
                + sse_of(total_sum - sum_l, total_sq - sq_l, n_r as f64);
            if best.as_ref().is_none_or(|b| sse < b.sse) {
                best = Some(SplitChoice {
                    feature,
                    threshold: (x + vals[pos + 1].0) / 2.0,
                    sse,
                });
            }
        }
    }
    best
}

fn grow_cart(
    xs: &[Vec<f64>],
    ys: &[f64],
    idx: &[usize],
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
    let id = nodes.len();
    if depth >= max_depth || idx.len() < 2 * min_leaf {
        nodes.push(Node::Leaf { value: mean });
        return id;
    }
    let Some(choice) = best_split(xs, ys, idx, min_leaf) else {
        nodes.push(Node::Leaf { value: mean });
        return id;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| xs[i][choice.feature] <= choice.threshold);
    nodes.push(Node::Leaf { value: mean });
    let left = grow_cart(xs, ys, &left_idx, depth + 1, max_depth, min_leaf, nodes);
    let right = grow_cart(xs, ys, &right_idx, depth + 1, max_depth, min_leaf, nodes);
    nodes[id] = Node::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left,
        right,
    };
    id
}

/// Greedy least-squares bagged trees, deterministic in the seed. Small and
/// slow, purely a fixture for accuracy comparisons.
pub fn train_forest(
    xs: &[Vec<f64>],
    ys: &[f64],
    n_trees: usize,
    max_depth: usize,
    min_leaf: usize,
    seed: u64,
) -> ForestModel {
    let n = xs.len();
    let d = xs[0].len();
    let mut r = rng(seed);
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let mut nodes = Vec::new();
        grow_cart(xs, ys, &idx, 0, max_depth, min_leaf, &mut nodes);
        trees.push(Tree::new(nodes, 0).unwrap());
    }
    ForestModel::new(Task::Regression, d, trees).unwrap()
}

/// The six-leaf tree used by the worked reshaping example: the constrained
/// feature splits at the root, the left subtree splits twice on the other
/// two features, and the right subtree splits on each of them once.
/// `leaf_values` fills the leaves left to right.
pub fn two_subtree_tree(leaf_values: [f64; 6]) -> Tree {
    let [l1, l2, l3, r1, r2, r3] = leaf_values;
    let nodes = vec![
        Node::Split {
            feature: 2,
            threshold: 0.5,
            left: 1,
            right: 2,
        },
        Node::Split {
            feature: 1,
            threshold: 0.25,
            left: 3,
            right: 6,
        },
        Node::Split {
            feature: 0,
            threshold: 0.25,
            left: 7,
            right: 8,
        },
        Node::Split {
            feature: 0,
            threshold: 0.5,
            left: 4,
            right: 5,
        },
        Node::Leaf { value: l1 },
        Node::Leaf { value: l2 },
        Node::Leaf { value: l3 },
        Node::Leaf { value: r1 },
        Node::Split {
            feature: 1,
            threshold: 0.75,
            left: 9,
            right: 10,
        },
        Node::Leaf { value: r2 },
        Node::Leaf { value: r3 },
    ];
    Tree::new(nodes, 0).unwrap()
}

/// Total squared change between the leaf values of two structurally equal
/// trees.
pub fn leaf_shift_objective(before: &Tree, after: &Tree) -> f64 {
    before
        .nodes()
        .iter()
        .zip(after.nodes())
        .filter_map(|(b, a)| match (b, a) {
            (Node::Leaf { value: vb }, Node::Leaf { value: va }) => Some((va - vb) * (va - vb)),
            _ => None,
        })
        .sum()
}
