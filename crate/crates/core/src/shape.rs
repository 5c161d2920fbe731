//! Monotone shape constraints on model features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Required direction of monotonicity in one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    pub fn flipped(self) -> Direction {
        match self {
            Direction::Increasing => Direction::Decreasing,
            Direction::Decreasing => Direction::Increasing,
        }
    }
}

/// The set of features a prediction rule must be monotone in, with a
/// direction per feature. Feature indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeSpec {
    constraints: BTreeMap<usize, Direction>,
}

impl ShapeSpec {
    /// Builds a spec from (feature, direction) pairs.
    ///
    /// # Errors
    /// Returns [`Error::InvalidInput`] if the list is empty or a feature
    /// appears twice.
    pub fn new(pairs: impl IntoIterator<Item = (usize, Direction)>) -> Result<Self> {
        let mut constraints = BTreeMap::new();
        for (feature, dir) in pairs {
            if constraints.insert(feature, dir).is_some() {
                return Err(Error::invalid_input(format!(
                    "feature {feature} listed twice in shape constraints"
                )));
            }
        }
        if constraints.is_empty() {
            return Err(Error::invalid_input("shape constraints must not be empty"));
        }
        Ok(ShapeSpec { constraints })
    }

    /// Parses the `index:inc|dec` comma-separated grammar, e.g. `"0:inc,3:dec"`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            let (idx, dir) = part.split_once(':').ok_or_else(|| {
                Error::invalid_input(format!(
                    "shape entry {part:?} must look like INDEX:inc or INDEX:dec"
                ))
            })?;
            let feature: usize = idx.trim().parse().map_err(|_| {
                Error::invalid_input(format!("shape entry {part:?} has a non-integer feature index"))
            })?;
            let dir = match dir.trim() {
                "inc" => Direction::Increasing,
                "dec" => Direction::Decreasing,
                other => {
                    return Err(Error::invalid_input(format!(
                        "shape direction {other:?} must be inc or dec"
                    )))
                }
            };
            pairs.push((feature, dir));
        }
        ShapeSpec::new(pairs)
    }

    /// Constrained features with their directions, ascending by feature index.
    pub fn vars(&self) -> impl Iterator<Item = (usize, Direction)> + '_ {
        self.constraints.iter().map(|(&f, &d)| (f, d))
    }

    pub fn direction(&self, feature: usize) -> Option<Direction> {
        self.constraints.get(&feature).copied()
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Spec with every direction flipped.
    pub fn flipped(&self) -> ShapeSpec {
        ShapeSpec {
            constraints: self
                .constraints
                .iter()
                .map(|(&f, &d)| (f, d.flipped()))
                .collect(),
        }
    }

    /// Checks every constrained feature index against a feature count.
    pub fn validate_dims(&self, n_features: usize) -> Result<()> {
        for (feature, _) in self.vars() {
            if feature >= n_features {
                return Err(Error::invalid_input(format!(
                    "shape constraint on feature {feature} but the model has {n_features} features"
                )));
            }
        }
        Ok(())
    }
}
