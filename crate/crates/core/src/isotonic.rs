//! Isotonic least squares on ordered sequences.
//!
//! [`pava`] computes the Euclidean projection of a sequence onto the cone of
//! non-decreasing sequences with the pool adjacent violators sweep.
//! [`pivoted_isotonic`] fits the best non-decreasing sequence whose entry at
//! one position is pinned to a given value; it is the building block for the
//! intersecting fits in [`crate::iiso`].

use crate::error::{Error, Result};

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid_input(format!(
                "{what}[{i}] is not finite: {v}"
            )));
        }
    }
    Ok(())
}

/// Euclidean projection of `values` onto the cone of non-decreasing sequences.
///
/// Runs in linear time with uniform weights. Adjacent violating blocks are
/// pooled left to right and each pooled block is replaced by its mean. Empty
/// and singleton inputs come back unchanged.
///
/// # Errors
/// [`Error::InvalidInput`] if any entry is non-finite.
pub fn pava(values: &[f64]) -> Result<Vec<f64>> {
    check_finite(values, "values")?;
    Ok(pava_unchecked(values))
}

pub(crate) fn pava_unchecked(values: &[f64]) -> Vec<f64> {
    // Blocks are kept as (sum, count); violations are compared on the same
    // sum/count quotients that the expansion emits, so the output is
    // non-decreasing as stored.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (s_last, n_last) = blocks[blocks.len() - 1];
            let (s_prev, n_prev) = blocks[blocks.len() - 2];
            if s_prev / n_prev as f64 > s_last / n_last as f64 {
                blocks.pop();
                blocks.pop();
                blocks.push((s_prev + s_last, n_prev + n_last));
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, n) in blocks {
        let mean = s / n as f64;
        out.extend(std::iter::repeat(mean).take(n));
    }
    out
}

/// Best non-decreasing fit to `values` whose entry at `pivot` equals
/// `pivot_value`.
///
/// The stretch before the pivot is fit by [`pava`] and capped at
/// `pivot_value`; the stretch after it is fit by [`pava`] and floored at
/// `pivot_value`. Among all non-decreasing sequences passing through the
/// pinned entry this minimizes the sum of squared changes over every position
/// except the pivot.
///
/// # Errors
/// [`Error::InvalidInput`] if `pivot` is out of range or any value is
/// non-finite.
pub fn pivoted_isotonic(values: &[f64], pivot: usize, pivot_value: f64) -> Result<Vec<f64>> {
    check_finite(values, "values")?;
    if !pivot_value.is_finite() {
        return Err(Error::invalid_input(format!(
            "pivot value is not finite: {pivot_value}"
        )));
    }
    if pivot >= values.len() {
        return Err(Error::invalid_input(format!(
            "pivot index {pivot} out of range for length {}",
            values.len()
        )));
    }
    Ok(pivoted_isotonic_unchecked(values, pivot, pivot_value))
}

pub(crate) fn pivoted_isotonic_unchecked(
    values: &[f64],
    pivot: usize,
    pivot_value: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for v in pava_unchecked(&values[..pivot]) {
        out.push(v.min(pivot_value));
    }
    out.push(pivot_value);
    for v in pava_unchecked(&values[pivot + 1..]) {
        out.push(v.max(pivot_value));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_singleton_pass_through() {
        assert_eq!(pava(&[]).unwrap(), Vec::<f64>::new());
        assert_eq!(pava(&[7.5]).unwrap(), vec![7.5]);
    }

    #[test]
    fn sorted_input_is_unchanged() {
        assert_eq!(pava(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn pools_a_single_violation() {
        assert_eq!(pava(&[3.0, 1.0, 2.0]).unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn reversed_input_pools_to_global_mean() {
        assert_eq!(pava(&[4.0, 3.0, 2.0, 1.0]).unwrap(), vec![2.5; 4]);
    }

    #[test]
    fn pools_only_the_violating_stretch() {
        assert_eq!(
            pava(&[1.0, 3.0, 2.0, 4.0]).unwrap(),
            vec![1.0, 2.5, 2.5, 4.0]
        );
    }

    #[test]
    fn merged_block_can_cascade_left() {
        // The trailing 0 drags the pooled block below the leading 1.
        assert_eq!(pava(&[1.0, 2.0, 0.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(pava(&[1.0, f64::NAN]).is_err());
        assert!(pava(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn pivot_caps_left_tail_and_floors_right_tail() {
        assert_eq!(
            pivoted_isotonic(&[3.0, 1.0, 4.0], 1, 2.0).unwrap(),
            vec![2.0, 2.0, 4.0]
        );
    }

    #[test]
    fn pivot_consistent_with_sorted_input_is_identity() {
        assert_eq!(
            pivoted_isotonic(&[1.0, 2.0, 3.0], 1, 2.0).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn single_element_becomes_the_pivot_value() {
        assert_eq!(pivoted_isotonic(&[5.0], 0, 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn pivot_at_either_end_leaves_one_tail_empty() {
        assert_eq!(
            pivoted_isotonic(&[9.0, 1.0, 2.0], 0, 3.0).unwrap(),
            vec![3.0, 3.0, 3.0]
        );
        assert_eq!(
            pivoted_isotonic(&[5.0, 6.0, 1.0], 2, 7.0).unwrap(),
            vec![5.0, 6.0, 7.0]
        );
    }

    #[test]
    fn rejects_out_of_range_pivot() {
        assert!(pivoted_isotonic(&[1.0], 1, 0.0).is_err());
        assert!(pivoted_isotonic(&[], 0, 0.0).is_err());
    }

    #[test]
    fn rejects_non_finite_pivot_value() {
        assert!(pivoted_isotonic(&[1.0], 0, f64::NAN).is_err());
    }
}
