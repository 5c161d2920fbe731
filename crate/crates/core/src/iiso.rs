//! Intersecting isotonic regression.
//!
//! Given K sequences and one pinned position per sequence, find K
//! non-decreasing fitted sequences that all share a common value at their
//! pinned positions and jointly minimize the sum of squared changes. Each
//! fitted sequence, conditional on the shared value `c`, is the pivoted fit
//! from [`crate::isotonic::pivoted_isotonic`]; the solver locates the optimal
//! `c` with a single sweep over the pooled tail values.
//!
//! The sweep merges the per-sequence tail knots with a heap, so the total
//! cost is O(n log K) for n total entries after the linear-time tail fits.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::isotonic::{check_finite, pava_unchecked};

/// K sequences with one pinned position each, sharing an unknown common
/// value at those positions.
#[derive(Debug, Clone)]
pub struct IisoProblem {
    vectors: Vec<Vec<f64>>,
    pivots: Vec<usize>,
}

impl IisoProblem {
    /// # Errors
    /// [`Error::InvalidInput`] if there are no vectors, `pivots` does not
    /// pair up with `vectors`, any vector is empty, any pivot is out of
    /// range, or any entry is non-finite.
    pub fn new(vectors: Vec<Vec<f64>>, pivots: Vec<usize>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid_input("need at least one vector"));
        }
        if vectors.len() != pivots.len() {
            return Err(Error::invalid_input(format!(
                "{} vectors but {} pivots",
                vectors.len(),
                pivots.len()
            )));
        }
        for (k, (vec, &pivot)) in vectors.iter().zip(&pivots).enumerate() {
            if vec.is_empty() {
                return Err(Error::invalid_input(format!("vector {k} is empty")));
            }
            check_finite(vec, &format!("vector {k}"))?;
            if pivot >= vec.len() {
                return Err(Error::invalid_input(format!(
                    "pivot {pivot} out of range for vector {k} of length {}",
                    vec.len()
                )));
            }
        }
        Ok(IisoProblem { vectors, pivots })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }
}

/// Result of [`solve_iiso`].
#[derive(Debug, Clone)]
pub struct IisoSolution {
    /// Fitted sequences, aligned with the problem's vectors.
    pub fitted: Vec<Vec<f64>>,
    /// The shared value at the pinned positions.
    pub intersection_value: f64,
    /// Sum of squared changes over all positions, pinned ones included.
    pub objective: f64,
}

struct Tails {
    left_fits: Vec<Vec<f64>>,
    right_fits: Vec<Vec<f64>>,
}

fn fit_tails(problem: &IisoProblem) -> Tails {
    let mut left_fits = Vec::with_capacity(problem.vectors.len());
    let mut right_fits = Vec::with_capacity(problem.vectors.len());
    for (vec, &pivot) in problem.vectors.iter().zip(&problem.pivots) {
        left_fits.push(pava_unchecked(&vec[..pivot]));
        right_fits.push(pava_unchecked(&vec[pivot + 1..]));
    }
    Tails {
        left_fits,
        right_fits,
    }
}

fn objective_with_tails(problem: &IisoProblem, tails: &Tails, c: f64) -> f64 {
    let mut acc = 0.0;
    for (k, (vec, &pivot)) in problem.vectors.iter().zip(&problem.pivots).enumerate() {
        let d = c - vec[pivot];
        acc += d * d;
        for (fit, orig) in tails.left_fits[k].iter().zip(&vec[..pivot]) {
            let d = fit.min(c) - orig;
            acc += d * d;
        }
        for (fit, orig) in tails.right_fits[k].iter().zip(&vec[pivot + 1..]) {
            let d = fit.max(c) - orig;
            acc += d * d;
        }
    }
    acc
}

/// The objective value attained by the best fit sharing the value `c` at the
/// pinned positions, as a function of `c`. Convex and piecewise quadratic.
///
/// # Errors
/// [`Error::InvalidInput`] if `c` is non-finite.
pub fn evaluate_g(problem: &IisoProblem, c: f64) -> Result<f64> {
    if !c.is_finite() {
        return Err(Error::invalid_input(format!("c is not finite: {c}")));
    }
    let tails = fit_tails(problem);
    Ok(objective_with_tails(problem, &tails, c))
}

/// One tail entry in knot order: the fitted value at which the entry stops
/// reacting to `c`, paired with the original value it pulls toward.
#[derive(Debug, Clone, Copy)]
struct Knot {
    at: f64,
    orig: f64,
}

struct HeapEntry {
    knot: Knot,
    stream: usize,
    pos: usize,
}

impl HeapEntry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.knot
            .at
            .total_cmp(&other.knot.at)
            .then_with(|| self.knot.orig.total_cmp(&other.knot.orig))
    }
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the max-heap pops the smallest knot first.
        other.key_cmp(self)
    }
}

/// K-way merge of per-sequence knot streams, each already sorted by knot.
fn merge_knot_streams(fits: &[Vec<f64>], origs: &[&[f64]]) -> Vec<Knot> {
    let total: usize = fits.iter().map(Vec::len).sum();
    let mut merged = Vec::with_capacity(total);
    let mut heap = BinaryHeap::with_capacity(fits.len());
    for (stream, fit) in fits.iter().enumerate() {
        if let Some(&at) = fit.first() {
            heap.push(HeapEntry {
                knot: Knot {
                    at,
                    orig: origs[stream][0],
                },
                stream,
                pos: 0,
            });
        }
    }
    while let Some(entry) = heap.pop() {
        merged.push(entry.knot);
        let next = entry.pos + 1;
        if next < fits[entry.stream].len() {
            heap.push(HeapEntry {
                knot: Knot {
                    at: fits[entry.stream][next],
                    orig: origs[entry.stream][next],
                },
                stream: entry.stream,
                pos: next,
            });
        }
    }
    merged
}

/// Locates the minimizer of the pooled objective by sweeping the merged
/// knots left to right and tracking the derivative of the active quadratic.
fn optimal_intersection(problem: &IisoProblem, tails: &Tails) -> f64 {
    let k_count = problem.vectors.len();
    let left_origs: Vec<&[f64]> = problem
        .vectors
        .iter()
        .zip(&problem.pivots)
        .map(|(v, &p)| &v[..p])
        .collect();
    let right_origs: Vec<&[f64]> = problem
        .vectors
        .iter()
        .zip(&problem.pivots)
        .map(|(v, &p)| &v[p + 1..])
        .collect();
    let left_knots = merge_knot_streams(&tails.left_fits, &left_origs);
    let right_knots = merge_knot_streams(&tails.right_fits, &right_origs);

    // Below every knot the derivative collects one term per pinned position
    // and one per left-tail entry. Per-sequence partial sums are combined in
    // sorted order so the result does not depend on how the vectors are
    // listed.
    let mut partials: Vec<f64> = problem
        .vectors
        .iter()
        .zip(&problem.pivots)
        .map(|(vec, &pivot)| vec[pivot] + vec[..pivot].iter().sum::<f64>())
        .collect();
    partials.sort_by(f64::total_cmp);
    let mut sum: f64 = partials.iter().sum();
    let mut count = k_count + left_knots.len();

    let mut li = 0;
    let mut ri = 0;
    let mut prev_deriv_after = f64::NEG_INFINITY;
    loop {
        let next_left = left_knots.get(li).map(|k| k.at);
        let next_right = right_knots.get(ri).map(|k| k.at);
        let knot = match (next_left, next_right) {
            (None, None) => break,
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (Some(l), Some(r)) => l.min(r),
        };
        // Minimizer of the quadratic active on the segment ending at `knot`.
        let root = sum / count as f64;
        if root <= knot {
            return root;
        }
        let deriv_before = count as f64 * knot - sum;
        let mut deact_sum = 0.0;
        let mut act_sum = 0.0;
        while li < left_knots.len() && left_knots[li].at == knot {
            deact_sum += left_knots[li].orig;
            count -= 1;
            li += 1;
        }
        while ri < right_knots.len() && right_knots[ri].at == knot {
            act_sum += right_knots[ri].orig;
            count += 1;
            ri += 1;
        }
        sum = sum - deact_sum + act_sum;
        let deriv_after = count as f64 * knot - sum;
        // Pooled tail blocks deactivate or activate as whole groups, so the
        // derivative may not drop when the sweep crosses a knot.
        let scale = 1.0 + deriv_before.abs().max(deriv_after.abs()) + sum.abs();
        debug_assert!(
            deriv_after >= deriv_before - 1e-9 * scale,
            "derivative dropped across knot {knot}: {deriv_before} -> {deriv_after}"
        );
        debug_assert!(
            deriv_before >= prev_deriv_after - 1e-9 * scale,
            "derivative sequence not non-decreasing at knot {knot}"
        );
        prev_deriv_after = deriv_after;
        debug_assert!(count >= k_count);
    }
    sum / count as f64
}

/// Solves the intersecting isotonic problem exactly.
pub fn solve_iiso(problem: &IisoProblem) -> IisoSolution {
    // Already-feasible input is its own unique optimum; returning it
    // untouched keeps such problems bit-for-bit stable where the knot sweep
    // would only recover the intersection value up to rounding.
    let c0 = problem.vectors[0][problem.pivots[0]];
    let feasible = problem
        .vectors
        .iter()
        .zip(&problem.pivots)
        .all(|(vec, &pivot)| {
            vec[pivot] == c0 && vec.windows(2).all(|w| w[0] <= w[1])
        });
    if feasible {
        return IisoSolution {
            fitted: problem.vectors.clone(),
            intersection_value: c0,
            objective: 0.0,
        };
    }
    let tails = fit_tails(problem);
    let c = optimal_intersection(problem, &tails);
    let fitted: Vec<Vec<f64>> = problem
        .vectors
        .iter()
        .zip(&problem.pivots)
        .enumerate()
        .map(|(k, (vec, _))| {
            let mut out = Vec::with_capacity(vec.len());
            for fit in &tails.left_fits[k] {
                out.push(fit.min(c));
            }
            out.push(c);
            for fit in &tails.right_fits[k] {
                out.push(fit.max(c));
            }
            out
        })
        .collect();
    let objective = objective_with_tails(problem, &tails, c);
    IisoSolution {
        fitted,
        intersection_value: c,
        objective,
    }
}
