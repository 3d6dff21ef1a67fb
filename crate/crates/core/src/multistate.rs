//! Cohort propagation through annual transition matrices.
//!
//! With `x_{i+1} = M_i·x_i`, the survival proportion at exact age `i` is
//! `s_i = 1'·M_{i−1}···M_0·x_0 / 1'·x_0`. Occupancy `N[i] = M_{i−1}·N[i−1]`
//! (with `N[0] = I`) gives state probabilities by birth state, and the
//! expected-years recursion `Z[a] = (I + Z[a+1])·M_a`, `Z[100] = 0`, counts one
//! year in state `j` for every later birthday reached in `j`. The first
//! transition acts first, so `M_a` multiplies on the right.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{common_state_count, TransitionMatrix};
use crate::probit::HealthMeasure;

/// Persons (or probability mass) per living state.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortVector(DVector<f64>);

impl CohortVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("cohort vector is empty"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::validation(format!("cohort entry {v} is negative or non-finite")));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    /// Everyone in living state `state`.
    pub fn concentrated(states: usize, state: usize) -> Self {
        let mut v = DVector::zeros(states);
        v[state] = 1.0;
        Self(v)
    }

    /// Everyone in the best living state.
    pub fn best_state(states: usize) -> Self {
        Self::concentrated(states, 0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

fn check_cohort(states: usize, x0: &CohortVector) -> Result<f64> {
    if x0.len() != states {
        return Err(Error::DimensionMismatch {
            expected: states,
            found: x0.len(),
        });
    }
    let total = x0.total();
    if total <= 0.0 {
        return Err(Error::validation("initial cohort has no positive entry"));
    }
    Ok(total)
}

/// Survival to exact ages `1..=matrices.len()`.
pub fn survival_curve(matrices: &[TransitionMatrix], x0: &CohortVector) -> Result<Vec<f64>> {
    let states = common_state_count(matrices)?;
    let total = check_cohort(states, x0)?;
    let mut x = x0.as_vector().clone();
    let mut out = Vec::with_capacity(matrices.len());
    for m in matrices {
        x = m.as_matrix() * x;
        out.push(x.sum() / total);
    }
    Ok(out)
}

/// Distribution over living states at `age`, conditional on being alive.
pub fn state_mix_at_age(
    matrices: &[TransitionMatrix],
    x0: &CohortVector,
    age: u32,
) -> Result<Vec<f64>> {
    let states = common_state_count(matrices)?;
    check_cohort(states, x0)?;
    if age as usize > matrices.len() {
        return Err(Error::Domain(format!(
            "age {age} is beyond the {} matrices supplied",
            matrices.len()
        )));
    }
    let mut x = x0.as_vector().clone();
    for m in &matrices[..age as usize] {
        x = m.as_matrix() * x;
    }
    let alive = x.sum();
    if alive <= 0.0 {
        return Err(Error::Domain(format!("no survivors at age {age}")));
    }
    Ok(x.iter().map(|v| v / alive).collect())
}

/// State-occupancy probabilities and expected years by age.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTensor {
    /// `occupancy[i][(j, k)]`: in state `j` at exact age `i`, given state `k`
    /// at birth. Index 0 is the identity.
    pub occupancy: Vec<DMatrix<f64>>,
    /// `expected_years[a][(j, k)]`: years to be spent in `j` from age `a + 1`
    /// on, given state `k` at age `a`.
    pub expected_years: Vec<DMatrix<f64>>,
}

/// `N[0] = I`, `N[i+1] = M_i·N[i]`; one entry per age `0..=len`.
pub fn occupancy(matrices: &[TransitionMatrix]) -> Result<Vec<DMatrix<f64>>> {
    let states = common_state_count(matrices)?;
    let mut out = Vec::with_capacity(matrices.len() + 1);
    out.push(DMatrix::identity(states, states));
    for m in matrices {
        let next = m.as_matrix() * out.last().unwrap();
        out.push(next);
    }
    Ok(out)
}

/// `Z[last] = M_last`, `Z[a] = (I + Z[a+1])·M_a`; one entry per matrix.
pub fn expected_years(matrices: &[TransitionMatrix]) -> Result<Vec<DMatrix<f64>>> {
    let states = common_state_count(matrices)?;
    let eye = DMatrix::<f64>::identity(states, states);
    let mut out = vec![DMatrix::zeros(states, states); matrices.len()];
    let mut next = DMatrix::zeros(states, states);
    for (a, m) in matrices.iter().enumerate().rev() {
        let z = (&eye + &next) * m.as_matrix();
        out[a] = z.clone();
        next = z;
    }
    Ok(out)
}

pub fn occupancy_tensor(matrices: &[TransitionMatrix]) -> Result<OccupancyTensor> {
    let (n, z) = rayon::join(|| occupancy(matrices), || expected_years(matrices));
    Ok(OccupancyTensor {
        occupancy: n?,
        expected_years: z?,
    })
}

impl OccupancyTensor {
    /// Long-format CSV: `tensor,age,destination_state,birth_state,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["tensor", "age", "destination_state", "birth_state", "value"])?;
        for (name, tensor) in [("N", &self.occupancy), ("Z", &self.expected_years)] {
            for (age, m) in tensor.iter().enumerate() {
                for k in 0..m.ncols() {
                    for j in 0..m.nrows() {
                        wtr.write_record([
                            name.to_string(),
                            age.to_string(),
                            j.to_string(),
                            k.to_string(),
                            m[(j, k)].to_string(),
                        ])?;
                    }
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Life expectancy split into healthy and unhealthy years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HealthExpectancy {
    pub le: f64,
    pub hle: f64,
    pub uhle: f64,
    pub pct_healthy: f64,
}

/// Expected years beyond `at_age`, weighted by the living-state `mix` at that
/// age, with the healthy part taken over `healthy` destination states.
pub fn health_expectancy(
    matrices: &[TransitionMatrix],
    healthy: &[usize],
    at_age: u32,
    mix: &[f64],
    half_year: bool,
) -> Result<HealthExpectancy> {
    let states = common_state_count(matrices)?;
    if mix.len() != states {
        return Err(Error::DimensionMismatch {
            expected: states,
            found: mix.len(),
        });
    }
    if mix.iter().any(|m| !(m.is_finite() && *m >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::validation("state mix must be a probability vector"));
    }
    if let Some(&h) = healthy.iter().find(|&&h| h >= states) {
        return Err(Error::validation(format!("healthy state {h} out of range")));
    }
    if at_age as usize >= matrices.len() {
        return Err(Error::Domain(format!("no matrix for age {at_age}")));
    }
    let z = expected_years(&matrices[at_age as usize..])?;
    let z = &z[0];
    let years = z * DVector::from_column_slice(mix);
    let mut le: f64 = years.sum();
    let mut hle: f64 = healthy.iter().map(|&j| years[j]).sum();
    if half_year {
        le += 0.5;
        hle += 0.5 * healthy.iter().map(|&j| mix[j]).sum::<f64>();
    }
    if le <= 0.0 {
        return Err(Error::Domain(format!("zero life expectancy at age {at_age}")));
    }
    Ok(HealthExpectancy {
        le,
        hle,
        uhle: le - hle,
        pct_healthy: 100.0 * hle / le,
    })
}

/// Healthy and unhealthy life expectancy under `measure`'s healthy states.
pub fn healthy_life_expectancy(
    matrices: &[TransitionMatrix],
    measure: HealthMeasure,
    at_age: u32,
    mix: &[f64],
) -> Result<HealthExpectancy> {
    health_expectancy(matrices, measure.healthy_states(), at_age, mix, false)
}

/// Per-birth-state survival curves, computed in parallel; column `k` of the
/// result at age `i` equals the column sum of `N[i]` for birth state `k`.
pub fn survival_by_birth_state(matrices: &[TransitionMatrix]) -> Result<Vec<Vec<f64>>> {
    let states = common_state_count(matrices)?;
    (0..states)
        .into_par_iter()
        .map(|k| survival_curve(matrices, &CohortVector::concentrated(states, k)))
        .collect()
}
