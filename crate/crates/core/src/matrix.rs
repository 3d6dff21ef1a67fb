use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Slack allowed on column sums and entry bounds when validating.
pub const PROBABILITY_SLACK: f64 = 1e-12;

/// Annual living-to-living transition matrix for one age.
///
/// Entry `(j, k)` is the probability that a person in living state `k` at the
/// start of the year is alive and in state `j` one year later. Columns are
/// sub-stochastic; the shortfall from one is the death probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(DMatrix<f64>);

impl TransitionMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::validation(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for (k, col) in m.column_iter().enumerate() {
            for (j, &p) in col.iter().enumerate() {
                if !(p.is_finite() && (-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&p)) {
                    return Err(Error::validation(format!(
                        "entry ({j}, {k}) = {p} is not a probability"
                    )));
                }
            }
            let sum = col.sum();
            if sum > 1.0 + PROBABILITY_SLACK {
                return Err(Error::validation(format!(
                    "column {k} sums to {sum} > 1"
                )));
            }
        }
        Ok(Self(m))
    }

    /// Builds from column-major entries (the order used for stacking).
    pub fn from_column_slice(states: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != states * states {
            return Err(Error::DimensionMismatch {
                expected: states * states,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_column_slice(states, states, entries))
    }

    /// Wraps a matrix without checking probability bounds.
    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn identity(states: usize) -> Self {
        Self(DMatrix::identity(states, states))
    }

    pub fn states(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Probability of dying within the year from living state `k`.
    pub fn death_probability(&self, k: usize) -> f64 {
        1.0 - self.0.column(k).sum()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }
}

/// Checks that every matrix in a schedule has the same state count.
pub(crate) fn common_state_count(matrices: &[TransitionMatrix]) -> Result<usize> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::validation("empty matrix schedule"))?;
    let states = first.states();
    for m in matrices {
        if m.states() != states {
            return Err(Error::DimensionMismatch {
                expected: states,
                found: m.states(),
            });
        }
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_column_above_one() {
        let m = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.4, 0.8]);
        assert!(TransitionMatrix::new(m).is_err());
    }

    #[test]
    fn rejects_negative_entry() {
        let m = DMatrix::from_row_slice(2, 2, &[0.7, -0.1, 0.2, 0.8]);
        assert!(TransitionMatrix::new(m).is_err());
    }

    #[test]
    fn death_is_column_complement() {
        let m = TransitionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.2, 0.8]))
            .unwrap();
        assert!((m.death_probability(0) - 0.1).abs() < 1e-15);
        assert!((m.death_probability(1) - 0.1).abs() < 1e-15);
    }
}
