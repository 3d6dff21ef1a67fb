//! Joint least-squares adjustment of all transition matrices to a life table.
//!
//! All matrix entries are stacked into one vector `n` (age-major, then
//! column-major within each matrix). Starting from the model's own `n⁰`, the
//! adjusted `n* = n⁰ + Δn` minimises `½·Δn'·V⁻¹·Δn` with `V = diag(n⁰²)`
//! subject to the survival curve `s(n*)` matching the target `s*`. The
//! constraint is linearised around the current iterate `n^j` with Jacobian
//! `S_j`, giving the recursive update
//!
//! ```text
//! Δn^j = V·S_j'·(S_j·V·S_j')⁻¹·(S_j·D_j + s* − s(n^j)) − D_j,   D_j = n^j − n⁰
//! ```
//!
//! which reduces to the plain projected step on the first iteration. `V` is
//! fixed at `n⁰` throughout.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifetable::LifeTable;
use crate::matrix::{common_state_count, TransitionMatrix, PROBABILITY_SLACK};
use crate::multistate::CohortVector;

/// Relative pivot threshold for the Cholesky factorisation of `S·V·S'`.
pub const PIVOT_THRESHOLD: f64 = 1e-12;
/// Maximum number of clamp-and-rerun rounds before giving up.
pub const MAX_CLAMP_ROUNDS: usize = 10;

/// All transition-matrix entries in one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    states: usize,
    values: Vec<f64>,
}

impl StackedVector {
    pub fn new(states: usize, values: Vec<f64>) -> Result<Self> {
        let block = states * states;
        if states == 0 || values.is_empty() || !values.len().is_multiple_of(block) {
            return Err(Error::DimensionMismatch {
                expected: block * (values.len() / block.max(1)).max(1),
                found: values.len(),
            });
        }
        Ok(Self { states, values })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn ages(&self) -> usize {
        self.values.len() / (self.states * self.states)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Position of entry `(row, col)` of the matrix for `age`.
    pub fn index(&self, age: usize, row: usize, col: usize) -> usize {
        age * self.states * self.states + col * self.states + row
    }

    fn block(&self, age: usize) -> &[f64] {
        let b = self.states * self.states;
        &self.values[age * b..(age + 1) * b]
    }
}

pub fn stack(matrices: &[TransitionMatrix]) -> Result<StackedVector> {
    let states = common_state_count(matrices)?;
    let mut values = Vec::with_capacity(matrices.len() * states * states);
    for m in matrices {
        values.extend_from_slice(m.as_matrix().as_slice());
    }
    StackedVector::new(states, values)
}

/// Inverse of [`stack`]; fails if any block is not a valid transition matrix.
pub fn unstack(n: &StackedVector) -> Result<Vec<TransitionMatrix>> {
    (0..n.ages())
        .map(|a| TransitionMatrix::from_column_slice(n.states, n.block(a)))
        .collect()
}

fn unstack_unchecked(n: &StackedVector) -> Vec<TransitionMatrix> {
    (0..n.ages())
        .map(|a| {
            TransitionMatrix::new_unchecked(DMatrix::from_column_slice(n.states, n.states, n.block(a)))
        })
        .collect()
}

/// Diagonal of `V`: squared entries of the initial stacked vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Vec<f64>);

impl WeightMatrix {
    pub fn from_initial(n0: &StackedVector) -> Self {
        Self(n0.values.iter().map(|v| v * v).collect())
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.0
    }

    /// `½·Δn'·V⁻¹·Δn`, skipping entries with zero weight.
    pub fn objective(&self, delta: &[f64]) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(delta)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, d)| d * d / w)
            .sum::<f64>()
    }
}

/// Prefix cohort vectors `p_a = M_{a−1}···M_0·x0` for `a = 0..=ages`.
fn prefix_states(n: &StackedVector, x0: &DVector<f64>) -> Vec<DVector<f64>> {
    let s = n.states;
    let mut out = Vec::with_capacity(n.ages() + 1);
    out.push(x0.clone());
    for a in 0..n.ages() {
        let m = DMatrix::from_column_slice(s, s, n.block(a));
        let next = m * out.last().unwrap();
        out.push(next);
    }
    out
}

fn cohort_total(n: &StackedVector, x0: &CohortVector) -> Result<f64> {
    if x0.len() != n.states {
        return Err(Error::DimensionMismatch {
            expected: n.states,
            found: x0.len(),
        });
    }
    let total = x0.total();
    if total <= 0.0 {
        return Err(Error::validation("initial cohort has no positive entry"));
    }
    Ok(total)
}

/// `s_i(n)` for `i = 1..=ages`.
pub fn survival_of(n: &StackedVector, x0: &CohortVector) -> Result<Vec<f64>> {
    let total = cohort_total(n, x0)?;
    Ok(prefix_states(n, x0.as_vector())
        .iter()
        .skip(1)
        .map(|p| p.sum() / total)
        .collect())
}

/// `∂s_i/∂n_j` for every age `i = 1..=ages` (rows) and stacked entry `j`.
pub fn survival_jacobian(n: &StackedVector, x0: &CohortVector) -> Result<DMatrix<f64>> {
    let ages: Vec<u32> = (1..=n.ages() as u32).collect();
    jacobian_rows(n, x0, &ages)
}

/// Jacobian rows for the given constrained ages.
///
/// `∂s_i/∂(M_a)_{rq} = [1'·M_{i−1}···M_{a+1}]_r·[M_{a−1}···M_0·x0]_q / 1'x0`
/// for `a < i`, and zero otherwise.
pub fn jacobian_rows(n: &StackedVector, x0: &CohortVector, ages: &[u32]) -> Result<DMatrix<f64>> {
    let total = cohort_total(n, x0)?;
    let s = n.states;
    let block = s * s;
    let prefix = prefix_states(n, x0.as_vector());
    let mats: Vec<DMatrix<f64>> = (0..n.ages())
        .map(|a| DMatrix::from_column_slice(s, s, n.block(a)))
        .collect();
    if let Some(&bad) = ages.iter().find(|&&i| i == 0 || i as usize > n.ages()) {
        return Err(Error::Domain(format!("no survival constraint possible at age {bad}")));
    }

    let rows: Vec<Vec<f64>> = ages
        .par_iter()
        .map(|&i| {
            let mut row = vec![0.0; n.len()];
            let mut suffix = DVector::from_element(s, 1.0).transpose();
            for a in (0..i as usize).rev() {
                let p = &prefix[a];
                let base = a * block;
                for q in 0..s {
                    let pq = p[q] / total;
                    for r in 0..s {
                        row[base + q * s + r] = suffix[r] * pq;
                    }
                }
                suffix = &suffix * &mats[a];
            }
            row
        })
        .collect();

    let mut out = DMatrix::zeros(ages.len(), n.len());
    for (i, row) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Bound on the max-norm survival residual (and scaled step size).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step scale in `(0, 1]`.
    pub damping: f64,
    /// Solve rank-deficient systems by minimum-norm least squares.
    pub allow_rank_deficient: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 100,
            damping: 1.0,
            allow_rank_deficient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub iterations: usize,
    /// `max_i |s*_i − s_i(n*)|` over the constrained ages.
    pub final_residual: f64,
    /// `½·Δn'·V⁻¹·Δn` at the returned iterate.
    pub objective: f64,
    /// Infinity norm of the last update.
    pub final_step: f64,
    pub clamped_entries: usize,
    pub clamp_rounds: usize,
    pub converged: bool,
    pub constrained_ages: usize,
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub matrices: Vec<TransitionMatrix>,
    pub stacked: StackedVector,
    pub report: AlignmentReport,
}

/// Adjusts `matrices0` so that the cohort started at `x0` survives exactly as
/// in `target` at every age of the table within the matrix horizon.
///
/// A run that exhausts `max_iterations` is not an error: the best iterate is
/// returned with `converged == false`.
pub fn align(
    matrices0: &[TransitionMatrix],
    x0: &CohortVector,
    target: &LifeTable,
    options: &AlignOptions,
) -> Result<Alignment> {
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::validation(format!(
            "damping must lie in (0, 1], got {}",
            options.damping
        )));
    }
    if !(options.tolerance > 0.0) {
        return Err(Error::validation("tolerance must be positive"));
    }
    let n0 = stack(matrices0)?;
    cohort_total(&n0, x0)?;
    let targets = target.targets(n0.ages() as u32);
    if targets.is_empty() {
        return Err(Error::validation(format!(
            "life table covers no age in 1..={}",
            n0.ages()
        )));
    }
    if let Some(w) = targets.windows(2).find(|w| w[1].1 > w[0].1) {
        return Err(Error::validation(format!(
            "target survival increases at age {}",
            w[1].0
        )));
    }
    let ages: Vec<u32> = targets.iter().map(|t| t.0).collect();
    let s_star: DVector<f64> = DVector::from_iterator(targets.len(), targets.iter().map(|t| t.1));

    let weights = WeightMatrix::from_initial(&n0);
    let step_scale = options.tolerance * n0.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut frozen = vec![false; n0.len()];
    let mut n = n0.clone();
    let mut iterations = 0;
    let mut clamp_rounds = 0;

    loop {
        let run = iterate(&n0, &weights, &frozen, n, x0, &ages, &s_star, options, step_scale)?;
        iterations += run.iterations;
        n = run.n;

        let report = |n: &StackedVector, clamped: usize| AlignmentReport {
            iterations,
            final_residual: run.residual,
            objective: weights.objective(&delta(n, &n0)),
            final_step: run.step,
            clamped_entries: clamped,
            clamp_rounds,
            converged: run.converged,
            constrained_ages: ages.len(),
        };

        if !run.converged {
            let clamped = frozen.iter().filter(|f| **f).count();
            return Ok(Alignment {
                matrices: unstack_unchecked(&n),
                report: report(&n, clamped),
                stacked: n,
            });
        }

        if !clamp_to_feasible(&mut n, &mut frozen) {
            let clamped = frozen.iter().filter(|f| **f).count();
            return Ok(Alignment {
                matrices: unstack(&n)?,
                report: report(&n, clamped),
                stacked: n,
            });
        }
        clamp_rounds += 1;
        if clamp_rounds > MAX_CLAMP_ROUNDS {
            return Err(Error::ClampingExhausted {
                rounds: clamp_rounds,
            });
        }
    }
}

fn delta(n: &StackedVector, n0: &StackedVector) -> Vec<f64> {
    n.values.iter().zip(&n0.values).map(|(a, b)| a - b).collect()
}

struct Run {
    n: StackedVector,
    iterations: usize,
    residual: f64,
    step: f64,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    n0: &StackedVector,
    weights: &WeightMatrix,
    frozen: &[bool],
    start: StackedVector,
    x0: &CohortVector,
    ages: &[u32],
    s_star: &DVector<f64>,
    options: &AlignOptions,
    step_scale: f64,
) -> Result<Run> {
    let w: Vec<f64> = weights
        .0
        .iter()
        .zip(frozen)
        .map(|(w, f)| if *f { 0.0 } else { *w })
        .collect();
    let mut n = start;
    let mut best: Option<(f64, StackedVector, f64)> = None;

    for it in 1..=options.max_iterations {
        let s = constrained_survival(&n, x0, ages)?;
        let jac = jacobian_rows(&n, x0, ages)?;
        let d = DVector::from_vec(delta(&n, n0));
        let free_d = DVector::from_iterator(d.len(), d.iter().zip(frozen).map(|(v, f)| if *f { 0.0 } else { *v }));
        let rhs = &jac * &free_d + (s_star - &s);

        let svs = weighted_gram(&jac, &w);
        let lambda = solve_gram(&svs, &rhs, ages, options.allow_rank_deficient)?;
        let st_lambda = jac.tr_mul(&lambda);

        let mut step = 0.0f64;
        for j in 0..n.len() {
            if w[j] == 0.0 {
                continue;
            }
            let dj = options.damping * (w[j] * st_lambda[j] - d[j]);
            n.values[j] += dj;
            step = step.max(dj.abs());
        }

        let residual = max_residual(&constrained_survival(&n, x0, ages)?, s_star);
        if residual <= options.tolerance && step <= step_scale {
            return Ok(Run {
                n,
                iterations: it,
                residual,
                step,
                converged: true,
            });
        }
        if !residual.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|b| residual < b.0) {
            best = Some((residual, n.clone(), step));
        }
    }

    let (residual, n, step) = match best {
        Some(b) => b,
        None => {
            let r = max_residual(&constrained_survival(&n, x0, ages)?, s_star);
            (r, n, f64::NAN)
        }
    };
    Ok(Run {
        n,
        iterations: options.max_iterations,
        residual,
        step,
        converged: false,
    })
}

fn constrained_survival(n: &StackedVector, x0: &CohortVector, ages: &[u32]) -> Result<DVector<f64>> {
    let all = survival_of(n, x0)?;
    Ok(DVector::from_iterator(ages.len(), ages.iter().map(|&a| all[a as usize - 1])))
}

fn max_residual(s: &DVector<f64>, s_star: &DVector<f64>) -> f64 {
    (s_star - s).iter().fold(0.0f64, |m, r| m.max(r.abs()))
}

/// `S·diag(w)·S'`.
fn weighted_gram(jac: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = jac.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[j];
    }
    &scaled * jac.transpose()
}

/// Solves the symmetric positive semidefinite system by Cholesky with a
/// relative pivot threshold; a failed pivot names the constrained age.
fn solve_gram(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ages: &[u32],
    allow_rank_deficient: bool,
) -> Result<DVector<f64>> {
    let m = a.nrows();
    let scale = a.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let threshold = PIVOT_THRESHOLD * scale;
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut failed = None;
    if scale > 0.0 {
        'outer: for k in 0..m {
            let mut d = a[(k, k)];
            for j in 0..k {
                d -= l[(k, j)] * l[(k, j)];
            }
            if !(d > threshold) {
                failed = Some(k);
                break 'outer;
            }
            let d = d.sqrt();
            l[(k, k)] = d;
            for i in k + 1..m {
                let mut v = a[(i, k)];
                for j in 0..k {
                    v -= l[(i, j)] * l[(k, j)];
                }
                l[(i, k)] = v / d;
            }
        }
    } else {
        failed = Some(0);
    }

    match failed {
        None => {
            let mut y = b.clone();
            for i in 0..m {
                for j in 0..i {
                    y[i] -= l[(i, j)] * y[j];
                }
                y[i] /= l[(i, i)];
            }
            for i in (0..m).rev() {
                for j in i + 1..m {
                    y[i] -= l[(j, i)] * y[j];
                }
                y[i] /= l[(i, i)];
            }
            Ok(y)
        }
        Some(_) if allow_rank_deficient => {
            let svd = a.clone().svd(true, true);
            svd.solve(b, threshold.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::Domain(format!("minimum-norm solve failed: {e}")))
        }
        Some(k) => Err(Error::SingularSystem { age: ages[k] }),
    }
}

/// Pulls every block back onto valid probabilities, freezing what it touches.
/// Returns whether anything changed.
fn clamp_to_feasible(n: &mut StackedVector, frozen: &mut [bool]) -> bool {
    let s = n.states;
    let mut changed = false;
    for a in 0..n.ages() {
        for k in 0..s {
            let start = n.index(a, 0, k);
            let col = start..start + s;
            for j in col.clone() {
                let v = n.values[j];
                if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&v) {
                    n.values[j] = v.clamp(0.0, 1.0);
                    frozen[j] = true;
                    changed = true;
                }
            }
            let sum: f64 = n.values[col.clone()].iter().sum();
            if sum > 1.0 + PROBABILITY_SLACK {
                for j in col {
                    n.values[j] /= sum;
                    frozen[j] = true;
                }
                changed = true;
            }
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<TransitionMatrix> {
        [
            [0.8, 0.1, 0.1, 0.7],
            [0.6, 0.2, 0.3, 0.5],
            [0.5, 0.3, 0.2, 0.4],
        ]
        .iter()
        .map(|c| TransitionMatrix::from_column_slice(2, c).unwrap())
        .collect()
    }

    #[test]
    fn stack_layout() {
        let ms: Vec<TransitionMatrix> = (0..100)
            .map(|a| {
                let v: Vec<f64> = (0..16).map(|i| (a * 16 + i) as f64 / 1e5).collect();
                TransitionMatrix::from_column_slice(4, &v).unwrap()
            })
            .collect();
        let n = stack(&ms).unwrap();
        assert_eq!(n.len(), 1600);
        // 2·16 + 1·4 + 3
        assert_eq!(n.index(2, 3, 1), 39);
        assert_eq!(n.as_slice()[39], ms[2].get(3, 1));
        assert_eq!(unstack(&n).unwrap(), ms);

        let hh = stack(&vec![TransitionMatrix::identity(2); 100]).unwrap();
        assert_eq!(hh.len(), 400);
    }

    #[test]
    fn stacked_length_must_be_whole_blocks() {
        assert!(StackedVector::new(2, vec![0.1; 7]).is_err());
        assert!(StackedVector::new(2, vec![]).is_err());
    }

    #[test]
    fn weights_are_squared_initial_entries() {
        let n = stack(&toy()).unwrap();
        let w = WeightMatrix::from_initial(&n);
        assert_eq!(w.diagonal()[0], 0.8 * 0.8);
        assert!((w.objective(&[0.08, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn jacobian_is_causal() {
        let n = stack(&toy()).unwrap();
        let j = survival_jacobian(&n, &CohortVector::best_state(2)).unwrap();
        assert_eq!(j.shape(), (3, 12));
        for i in 1..=3usize {
            for col in (i * 4)..12 {
                assert_eq!(j[(i - 1, col)], 0.0);
            }
        }
    }

    #[test]
    fn scalar_jacobian_is_product_rule() {
        let m = [0.9, 0.8, 0.7, 0.95];
        let ms: Vec<TransitionMatrix> = m
            .iter()
            .map(|p| TransitionMatrix::from_column_slice(1, &[*p]).unwrap())
            .collect();
        let j = survival_jacobian(&stack(&ms).unwrap(), &CohortVector::best_state(1)).unwrap();
        for i in 1..=4usize {
            for a in 0..4usize {
                let want = if a < i {
                    (0..i).filter(|&t| t != a).map(|t| m[t]).product::<f64>()
                } else {
                    0.0
                };
                assert!((j[(i - 1, a)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn singular_system_names_age() {
        // Age-1 matrix kills everyone: nothing after it can move survival.
        let mut ms = toy();
        ms[1] = TransitionMatrix::from_column_slice(2, &[0.0; 4]).unwrap();
        let target = LifeTable::new(1, vec![0.9, 0.1, 0.05]).unwrap();
        let err = align(&ms, &CohortVector::best_state(2), &target, &AlignOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { age: 2 }), "{err}");
    }

    #[test]
    fn rejects_bad_options() {
        let target = LifeTable::new(1, vec![0.9, 0.7, 0.5]).unwrap();
        let opts = AlignOptions {
            damping: 0.0,
            ..Default::default()
        };
        assert!(align(&toy(), &CohortVector::best_state(2), &target, &opts).is_err());
    }

    #[test]
    fn clamp_scales_overfull_columns() {
        let mut n = StackedVector::new(2, vec![0.7, 0.5, 0.2, -0.1]).unwrap();
        let mut frozen = vec![false; 4];
        assert!(clamp_to_feasible(&mut n, &mut frozen));
        assert!((n.as_slice()[0] + n.as_slice()[1] - 1.0).abs() < 1e-15);
        assert_eq!(n.as_slice()[3], 0.0);
        assert_eq!(frozen, vec![true, true, false, true]);
        assert!(!clamp_to_feasible(&mut n, &mut frozen));
    }
}
