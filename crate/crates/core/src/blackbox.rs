//! Monotone reshaping of an arbitrary prediction rule on a data-driven grid.
//!
//! The rule is sampled at synthetic points built from observed data: point i
//! with its v-th constrained coordinate replaced by every value that
//! coordinate takes in the data. Reshaping then solves, independently for
//! each point i, one intersecting isotonic problem over the R sampled
//! fibers, tied together at the unmodified point, and reads the reshaped
//! predictions off the diagonal. The monotonicity guarantee is grid-local:
//! it covers the constructed synthetic points, not unseen inputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::iiso::{solve_iiso, IisoProblem};
use crate::shape::{Direction, ShapeSpec};

/// One record of a precomputed prediction tensor: the rule evaluated at
/// observed point `point` with constrained variable number `var` replaced by
/// the value it takes at observed point `donor`. All indices 0-based in
/// memory; the file format is 1-based (columns i, k, v, value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorEntry {
    /// i: index of the point being modified.
    pub point: usize,
    /// k: index of the point donating the coordinate value.
    pub donor: usize,
    /// v: rank of the constrained variable, in ascending feature order.
    pub var: usize,
    pub value: f64,
}

/// Per-variable grid geometry: the distinct coordinate values and where each
/// observed row falls among them.
#[derive(Debug, Clone)]
struct GridVar {
    feature: usize,
    direction: Direction,
    /// Distinct observed values of this feature, ascending.
    coords: Vec<f64>,
    /// Position in `coords` of each row's own value.
    row_group: Vec<usize>,
    /// Rows sharing each coordinate, ascending within a group. The first
    /// row of a group is its representative in tensor files.
    group_rows: Vec<Vec<usize>>,
}

fn grid_vars(data: &[Vec<f64>], spec: &ShapeSpec) -> Result<Vec<GridVar>> {
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid_input("data matrix is empty"));
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::invalid_input("data matrix has zero columns"));
    }
    for (r, row) in data.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid_input(format!(
                "row {} has {} columns, expected {}",
                r + 1,
                row.len(),
                d
            )));
        }
        for (c, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::invalid_input(format!(
                    "data entry at row {}, column {} is not finite: {x}",
                    r + 1,
                    c + 1
                )));
            }
        }
    }
    spec.validate_dims(d)?;
    let mut vars = Vec::with_capacity(spec.len());
    for (feature, direction) in spec.vars() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            data[a][feature]
                .total_cmp(&data[b][feature])
                .then(a.cmp(&b))
        });
        let mut coords = Vec::new();
        let mut group_rows: Vec<Vec<usize>> = Vec::new();
        let mut row_group = vec![0usize; n];
        for &row in &order {
            let x = data[row][feature];
            if coords.last() != Some(&x) {
                coords.push(x);
                group_rows.push(Vec::new());
            }
            row_group[row] = coords.len() - 1;
            group_rows.last_mut().unwrap().push(row);
        }
        vars.push(GridVar {
            feature,
            direction,
            coords,
            row_group,
            group_rows,
        });
    }
    Ok(vars)
}

/// The sampled prediction grid. `values[v][i][g]` is the rule evaluated at
/// point i with constrained variable v set to its g-th distinct coordinate;
/// tied coordinates share one grid position. The entry at each point's own
/// coordinate equals the rule's plain prediction there, identically across
/// variables.
#[derive(Debug, Clone)]
pub struct BlackBoxGrid {
    vars: Vec<GridVar>,
    values: Vec<Vec<Vec<f64>>>,
}

impl BlackBoxGrid {
    pub fn n_points(&self) -> usize {
        self.vars[0].row_group.len()
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    /// Total stored entries, the memory footprint driver.
    pub fn n_entries(&self) -> usize {
        self.values
            .iter()
            .map(|per_i| per_i.iter().map(Vec::len).sum::<usize>())
            .sum()
    }

    /// The sampled predictions for point `i` along variable number `var`,
    /// ordered by ascending coordinate.
    pub fn fiber(&self, var: usize, i: usize) -> &[f64] {
        &self.values[var][i]
    }

    /// Grid position of point `i`'s own coordinate in variable `var`'s
    /// fiber.
    pub fn pivot(&self, var: usize, i: usize) -> usize {
        self.vars[var].row_group[i]
    }
}

fn non_finite_prediction(value: f64, point: usize, donor: usize, var: usize) -> Error {
    Error::InvalidModel(format!(
        "prediction is not finite at entry (i={}, k={}, v={}): {value}",
        point + 1,
        donor + 1,
        var + 1
    ))
}

/// Samples `predictor` over the synthetic grid derived from `data` and the
/// constrained variables of `spec`. Each distinct synthetic point is
/// evaluated once; every point's unmodified prediction is computed once and
/// shared across variables.
///
/// # Errors
/// [`Error::InvalidInput`] for an empty or ragged matrix, non-finite data,
/// or a spec that does not fit the column count; [`Error::InvalidModel`] if
/// the predictor returns a non-finite value.
pub fn build_grid<F>(data: &[Vec<f64>], predictor: F, spec: &ShapeSpec) -> Result<BlackBoxGrid>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let vars = grid_vars(data, spec)?;
    let n = data.len();
    let diag: Vec<f64> = data.par_iter().map(|x| predictor(x)).collect();
    for (i, &p) in diag.iter().enumerate() {
        if !p.is_finite() {
            return Err(non_finite_prediction(p, i, i, 0));
        }
    }
    let mut values = Vec::with_capacity(vars.len());
    for (vi, var) in vars.iter().enumerate() {
        let fibers: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut x = data[i].clone();
                let mut fiber = Vec::with_capacity(var.coords.len());
                for (g, &coord) in var.coords.iter().enumerate() {
                    let value = if g == var.row_group[i] {
                        diag[i]
                    } else {
                        x[var.feature] = coord;
                        predictor(&x)
                    };
                    if !value.is_finite() {
                        return Err(non_finite_prediction(value, i, var.group_rows[g][0], vi));
                    }
                    fiber.push(value);
                }
                Ok(fiber)
            })
            .collect::<Result<_>>()?;
        values.push(fibers);
    }
    Ok(BlackBoxGrid { vars, values })
}

/// Assembles a grid from an externally computed tensor instead of a live
/// predictor. Indices must cover every (point, donor, variable) triple
/// exactly once. Entries at tied coordinates must agree within a relative
/// 1e-9 and collapse to the group representative; the diagonal entries of a
/// point must agree across variables within the same tolerance and are
/// unified to the first variable's value.
///
/// # Errors
/// [`Error::Parse`] for out-of-range indices, duplicates, gaps, or
/// inconsistent ties/diagonals; [`Error::InvalidModel`] for non-finite
/// values; [`Error::InvalidInput`] for bad data or spec.
pub fn from_tensor(
    entries: &[TensorEntry],
    data: &[Vec<f64>],
    spec: &ShapeSpec,
) -> Result<BlackBoxGrid> {
    let vars = grid_vars(data, spec)?;
    let n = data.len();
    let r = vars.len();
    let mut raw = vec![0.0f64; r * n * n];
    let mut seen = vec![false; r * n * n];
    for e in entries {
        if e.var >= r || e.point >= n || e.donor >= n {
            return Err(Error::parse(format!(
                "tensor entry (i={}, k={}, v={}) out of range: expected i,k in 1..={n} and v in 1..={r}",
                e.point + 1,
                e.donor + 1,
                e.var + 1
            )));
        }
        if !e.value.is_finite() {
            return Err(non_finite_prediction(e.value, e.point, e.donor, e.var));
        }
        let idx = (e.var * n + e.point) * n + e.donor;
        if seen[idx] {
            return Err(Error::parse(format!(
                "tensor entry (i={}, k={}, v={}) appears twice",
                e.point + 1,
                e.donor + 1,
                e.var + 1
            )));
        }
        seen[idx] = true;
        raw[idx] = e.value;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let v = missing / (n * n);
        let i = (missing / n) % n;
        let k = missing % n;
        return Err(Error::parse(format!(
            "tensor is missing entry (i={}, k={}, v={})",
            i + 1,
            k + 1,
            v + 1
        )));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
    let mut values = Vec::with_capacity(r);
    for (vi, var) in vars.iter().enumerate() {
        let mut fibers = Vec::with_capacity(n);
        for i in 0..n {
            let at = |k: usize| raw[(vi * n + i) * n + k];
            let mut fiber = Vec::with_capacity(var.coords.len());
            for rows in &var.group_rows {
                let rep = at(rows[0]);
                for &k in &rows[1..] {
                    if !close(rep, at(k)) {
                        return Err(Error::parse(format!(
                            "points {} and {} share a value of feature {} but tensor entries \
                             for i={} disagree: {} vs {}",
                            rows[0] + 1,
                            k + 1,
                            var.feature,
                            i + 1,
                            rep,
                            at(k)
                        )));
                    }
                }
                fiber.push(rep);
            }
            fibers.push(fiber);
        }
        values.push(fibers);
    }
    for i in 0..n {
        let unified = raw[i * n + i];
        for (vi, var) in vars.iter().enumerate() {
            let stored = values[vi][i][var.row_group[i]];
            if !close(unified, stored) {
                return Err(Error::parse(format!(
                    "diagonal entries for i={} disagree across variables: {} (v=1) vs {} (v={})",
                    i + 1,
                    unified,
                    stored,
                    vi + 1
                )));
            }
            values[vi][i][var.row_group[i]] = unified;
        }
    }
    Ok(BlackBoxGrid { vars, values })
}

/// The solved grid: fitted fiber values, one consistent prediction per
/// point, and the per-point squared adjustment.
#[derive(Debug, Clone)]
pub struct ReshapedGrid {
    vars: Vec<GridVar>,
    values: Vec<Vec<Vec<f64>>>,
    predictions: Vec<f64>,
    objectives: Vec<f64>,
}

impl ReshapedGrid {
    pub fn fiber(&self, var: usize, i: usize) -> &[f64] {
        &self.values[var][i]
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    /// Squared adjustment of each point's problem.
    pub fn objectives(&self) -> &[f64] {
        &self.objectives
    }
}

/// Solves the per-point problem for raw (un-negated, ascending-coordinate)
/// fibers. Decreasing variables are handled by reversing their fiber; if the
/// first variable is decreasing, all fibers are negated first so the two
/// representations are each other's mirror regardless of direction mix.
fn solve_point(
    vars: &[GridVar],
    fibers: &[&[f64]],
    i: usize,
    negate: bool,
) -> (Vec<Vec<f64>>, f64, f64) {
    let eff_decreasing = |var: &GridVar| (var.direction == Direction::Decreasing) != negate;
    let mut vectors = Vec::with_capacity(vars.len());
    let mut pivots = Vec::with_capacity(vars.len());
    for (vi, var) in vars.iter().enumerate() {
        let mut v: Vec<f64> = if negate {
            fibers[vi].iter().map(|&x| -x).collect()
        } else {
            fibers[vi].to_vec()
        };
        let mut p = var.row_group[i];
        if eff_decreasing(var) {
            v.reverse();
            p = v.len() - 1 - p;
        }
        vectors.push(v);
        pivots.push(p);
    }
    let problem = IisoProblem::new(vectors, pivots).expect("grid fibers form a valid problem");
    let solution = solve_iiso(&problem);
    let mut fitted = Vec::with_capacity(vars.len());
    for (var, mut f) in vars.iter().zip(solution.fitted) {
        if eff_decreasing(var) {
            f.reverse();
        }
        if negate {
            for x in &mut f {
                *x = -*x;
            }
        }
        debug_assert!(f.windows(2).all(|w| match var.direction {
            Direction::Increasing => w[0] <= w[1],
            Direction::Decreasing => w[0] >= w[1],
        }));
        fitted.push(f);
    }
    let c = if negate {
        -solution.intersection_value
    } else {
        solution.intersection_value
    };
    (fitted, c, solution.objective)
}

/// Projects every fiber of the grid onto its declared direction, with all
/// fibers of a point pinned to one shared value at the point's own
/// coordinate. Points are independent; the result does not depend on the
/// order they are solved in.
pub fn reshape_grid(grid: &BlackBoxGrid) -> ReshapedGrid {
    let n = grid.n_points();
    let negate = grid.vars[0].direction == Direction::Decreasing;
    let solved: Vec<(Vec<Vec<f64>>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fibers: Vec<&[f64]> = (0..grid.n_vars()).map(|vi| grid.fiber(vi, i)).collect();
            solve_point(&grid.vars, &fibers, i, negate)
        })
        .collect();
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); grid.n_vars()];
    let mut predictions = Vec::with_capacity(n);
    let mut objectives = Vec::with_capacity(n);
    for (fitted, c, objective) in solved {
        for (vi, fiber) in fitted.into_iter().enumerate() {
            values[vi].push(fiber);
        }
        predictions.push(c);
        objectives.push(objective);
    }
    ReshapedGrid {
        vars: grid.vars.clone(),
        values,
        predictions,
        objectives,
    }
}

/// The consistent per-point predictions of a solved grid.
///
/// # Errors
/// [`Error::Solver`] if any fiber's value at its point's own coordinate has
/// drifted from the shared prediction beyond a relative 1e-9; that indicates
/// a solver defect, not bad input.
pub fn reshaped_predictions(rg: &ReshapedGrid) -> Result<Vec<f64>> {
    for (vi, var) in rg.vars.iter().enumerate() {
        for (i, &c) in rg.predictions.iter().enumerate() {
            let at_pivot = rg.values[vi][i][var.row_group[i]];
            if (at_pivot - c).abs() > 1e-9 * (1.0 + c.abs().max(at_pivot.abs())) {
                return Err(Error::Solver(format!(
                    "fitted grid lost consistency at point {} variable {}: {} vs {}",
                    i + 1,
                    vi + 1,
                    at_pivot,
                    c
                )));
            }
        }
    }
    Ok(rg.predictions.clone())
}

/// Solves the same problems as [`build_grid`] followed by [`reshape_grid`]
/// without materializing the full grid: one point's fibers are sampled,
/// solved, and dropped before the next. Returns `(predictions, objectives)`,
/// bitwise equal to the materialized path.
///
/// # Errors
/// As for [`build_grid`].
pub fn reshape_streaming<F>(
    data: &[Vec<f64>],
    predictor: F,
    spec: &ShapeSpec,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let vars = grid_vars(data, spec)?;
    let negate = vars[0].direction == Direction::Decreasing;
    let solved: Vec<(f64, f64)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let own = predictor(&data[i]);
            if !own.is_finite() {
                return Err(non_finite_prediction(own, i, i, 0));
            }
            let mut fibers = Vec::with_capacity(vars.len());
            for (vi, var) in vars.iter().enumerate() {
                let mut x = data[i].clone();
                let mut fiber = Vec::with_capacity(var.coords.len());
                for (g, &coord) in var.coords.iter().enumerate() {
                    let value = if g == var.row_group[i] {
                        own
                    } else {
                        x[var.feature] = coord;
                        predictor(&x)
                    };
                    if !value.is_finite() {
                        return Err(non_finite_prediction(value, i, var.group_rows[g][0], vi));
                    }
                    fiber.push(value);
                }
                fibers.push(fiber);
            }
            let borrowed: Vec<&[f64]> = fibers.iter().map(Vec::as_slice).collect();
            let (_, c, objective) = solve_point(&vars, &borrowed, i, negate);
            Ok((c, objective))
        })
        .collect::<Result<_>>()?;
    Ok(solved.into_iter().unzip())
}
