//! Monte Carlo cross-check of the analytic cohort quantities.
//!
//! Every agent draws a birth state from the birth mix, then at each age `a`
//! draws its state at `a + 1` from column (current state) of `M_a`, with death
//! as the final bucket. Agent `i` uses ChaCha8 with key from the seed and
//! stream `i`, so results do not depend on how agents are scheduled across
//! threads. All accumulators are integer counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{common_state_count, TransitionMatrix};
use crate::multistate::{expected_years, health_expectancy, state_mix_at_age, survival_curve, CohortVector};
use crate::probit::{Gender, HealthMeasure};

pub const RNG_ALGORITHM: &str = "chacha8-stream-per-agent";
const CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub agents: usize,
    pub seed: u64,
    pub measure: Option<HealthMeasure>,
    pub gender: Option<Gender>,
    pub matrices: Vec<TransitionMatrix>,
    pub birth_mix: Vec<f64>,
    /// States counted as healthy when summarising from `report_age`.
    pub healthy_states: Vec<usize>,
    pub report_age: u32,
}

impl SimulationConfig {
    /// Birth cohort all in the best state, healthy states from `measure`.
    pub fn for_measure(
        measure: HealthMeasure,
        gender: Gender,
        matrices: Vec<TransitionMatrix>,
        agents: usize,
        seed: u64,
    ) -> Self {
        let states = measure.living_states();
        let mut birth_mix = vec![0.0; states];
        birth_mix[0] = 1.0;
        Self {
            agents,
            seed,
            measure: Some(measure),
            gender: Some(gender),
            matrices,
            birth_mix,
            healthy_states: measure.healthy_states().to_vec(),
            report_age: 65,
        }
    }

    fn validate(&self) -> Result<usize> {
        let states = common_state_count(&self.matrices)?;
        if self.agents == 0 {
            return Err(Error::validation("simulation needs at least one agent"));
        }
        if self.birth_mix.len() != states {
            return Err(Error::DimensionMismatch {
                expected: states,
                found: self.birth_mix.len(),
            });
        }
        if self.birth_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (self.birth_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::validation("birth mix must be a probability vector"));
        }
        if self.healthy_states.iter().any(|&h| h >= states) {
            return Err(Error::validation("healthy state index out of range"));
        }
        if self.report_age as usize >= self.matrices.len() {
            return Err(Error::validation(format!(
                "report age {} beyond the matrix horizon",
                self.report_age
            )));
        }
        Ok(states)
    }
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_sums(n: u64, sum: u64, sum_sq: u64) -> Option<Self> {
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mean = sum as f64 / nf;
        let var = if n > 1 {
            ((sum_sq as f64 - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Some(Self { mean, se: (var / nf).sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub agents: usize,
    pub seed: u64,
    pub rng: String,
    /// Proportion alive at exact ages `1..=horizon`.
    pub survival: Vec<Estimate>,
    /// `state_years[k][j]`: years from age 1 on spent in `j`, given birth
    /// state `k`; `None` when no agent was born in `k`.
    pub state_years: Vec<Vec<Option<Estimate>>>,
    pub birth_counts: Vec<u64>,
    pub report_age: u32,
    pub alive_at_report_age: u64,
    /// Years beyond `report_age`, among agents alive at that age.
    pub le_at_report_age: Option<Estimate>,
    pub hle_at_report_age: Option<Estimate>,
}

#[derive(Clone)]
struct Tally {
    alive: Vec<u64>,
    births: Vec<u64>,
    years: Vec<u64>,
    years_sq: Vec<u64>,
    report_n: u64,
    le: (u64, u64),
    hle: (u64, u64),
}

impl Tally {
    fn new(horizon: usize, states: usize) -> Self {
        Self {
            alive: vec![0; horizon],
            births: vec![0; states],
            years: vec![0; states * states],
            years_sq: vec![0; states * states],
            report_n: 0,
            le: (0, 0),
            hle: (0, 0),
        }
    }

    fn merge(mut self, other: &Tally) -> Self {
        let add = |a: &mut [u64], b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.alive, &other.alive);
        add(&mut self.births, &other.births);
        add(&mut self.years, &other.years);
        add(&mut self.years_sq, &other.years_sq);
        self.report_n += other.report_n;
        self.le.0 += other.le.0;
        self.le.1 += other.le.1;
        self.hle.0 += other.hle.0;
        self.hle.1 += other.hle.1;
        self
    }
}

/// Draws a category from `probs` by inverse CDF; `None` is the residual
/// (death) bucket. Ties at a boundary go to the lower index; zero-probability
/// categories are never chosen.
fn draw(probs: &[f64], u: f64) -> Option<usize> {
    let mut cum = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        cum += p;
        if p > 0.0 && u <= cum {
            return Some(j);
        }
    }
    None
}

pub fn simulate(config: &SimulationConfig) -> Result<SimulationSummary> {
    let states = config.validate()?;
    let horizon = config.matrices.len();
    let report_age = config.report_age as usize;
    let columns: Vec<Vec<Vec<f64>>> = config
        .matrices
        .iter()
        .map(|m| (0..states).map(|k| m.as_matrix().column(k).iter().copied().collect()).collect())
        .collect();
    let healthy: Vec<bool> = (0..states).map(|j| config.healthy_states.contains(&j)).collect();
    let base = ChaCha8Rng::seed_from_u64(config.seed);
    // rounding can leave the cumulative birth mix a hair below one
    let last_birth_state = config.birth_mix.iter().rposition(|p| *p > 0.0).unwrap_or(0);

    let chunks = config.agents.div_ceil(CHUNK);
    let partials: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut t = Tally::new(horizon, states);
            let mut own = vec![0u64; states];
            for agent in c * CHUNK..((c + 1) * CHUNK).min(config.agents) {
                let mut rng = base.clone();
                rng.set_stream(agent as u64);
                let birth = draw(&config.birth_mix, rng.random::<f64>()).unwrap_or(last_birth_state);
                t.births[birth] += 1;
                own.fill(0);
                let (mut after, mut healthy_after) = (0u64, 0u64);
                let mut alive_at_report = report_age == 0;
                let mut state = Some(birth);
                for (a, cols) in columns.iter().enumerate() {
                    let Some(k) = state else { break };
                    state = draw(&cols[k], rng.random::<f64>());
                    if let Some(j) = state {
                        let age = a + 1;
                        t.alive[a] += 1;
                        own[j] += 1;
                        if age == report_age {
                            alive_at_report = true;
                        } else if age > report_age && alive_at_report {
                            after += 1;
                            if healthy[j] {
                                healthy_after += 1;
                            }
                        }
                    }
                }
                for j in 0..states {
                    t.years[birth * states + j] += own[j];
                    t.years_sq[birth * states + j] += own[j] * own[j];
                }
                if alive_at_report {
                    t.report_n += 1;
                    t.le.0 += after;
                    t.le.1 += after * after;
                    t.hle.0 += healthy_after;
                    t.hle.1 += healthy_after * healthy_after;
                }
            }
            t
        })
        .collect();
    let total = partials
        .iter()
        .fold(Tally::new(horizon, states), |acc, t| acc.merge(t));

    let n = config.agents as u64;
    let survival = total
        .alive
        .iter()
        .map(|&a| {
            let p = a as f64 / n as f64;
            Estimate {
                mean: p,
                se: (p * (1.0 - p) / n as f64).sqrt(),
            }
        })
        .collect();
    let state_years = (0..states)
        .map(|k| {
            (0..states)
                .map(|j| {
                    Estimate::from_sums(
                        total.births[k],
                        total.years[k * states + j],
                        total.years_sq[k * states + j],
                    )
                })
                .collect()
        })
        .collect();

    Ok(SimulationSummary {
        agents: config.agents,
        seed: config.seed,
        rng: RNG_ALGORITHM.to_string(),
        survival,
        state_years,
        birth_counts: total.births,
        report_age: config.report_age,
        alive_at_report_age: total.report_n,
        le_at_report_age: Estimate::from_sums(total.report_n, total.le.0, total.le.1),
        hle_at_report_age: Estimate::from_sums(total.report_n, total.hle.0, total.hle.1),
    })
}

/// One empirical-versus-analytic comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCheck {
    pub quantity: String,
    pub analytic: f64,
    pub empirical: f64,
    pub se: f64,
    pub z: f64,
    pub passed: bool,
}

impl AgreementCheck {
    fn new(quantity: String, analytic: f64, est: Estimate, sigmas: f64) -> Self {
        let diff = (est.mean - analytic).abs();
        let z = if est.se > 0.0 { diff / est.se } else if diff < 1e-12 { 0.0 } else { f64::INFINITY };
        Self {
            quantity,
            analytic,
            empirical: est.mean,
            se: est.se,
            z,
            passed: diff <= sigmas * est.se + 1e-12,
        }
    }
}

/// Compares a simulation with the analytic survival curve (at `ages`), the
/// expected-years tensor from birth, and LE/HLE at the report age.
pub fn agreement_checks(
    config: &SimulationConfig,
    summary: &SimulationSummary,
    ages: &[u32],
    sigmas: f64,
) -> Result<Vec<AgreementCheck>> {
    let states = config.validate()?;
    let x0 = CohortVector::new(config.birth_mix.clone())?;
    let s = survival_curve(&config.matrices, &x0)?;
    let mut checks = Vec::new();
    for &age in ages {
        let i = age as usize;
        if i == 0 || i > s.len() {
            return Err(Error::Domain(format!("no survival value at age {age}")));
        }
        checks.push(AgreementCheck::new(
            format!("survival[{age}]"),
            s[i - 1],
            summary.survival[i - 1],
            sigmas,
        ));
    }

    let z = expected_years(&config.matrices)?;
    // Years from age 1 on given state k at age 0 is column k of Z[0].
    for k in 0..states {
        for j in 0..states {
            if let Some(est) = summary.state_years[k][j] {
                checks.push(AgreementCheck::new(format!("Z0[{j},{k}]"), z[0][(j, k)], est, sigmas));
            }
        }
    }

    let mix = state_mix_at_age(&config.matrices, &x0, config.report_age)?;
    let h = health_expectancy(&config.matrices, &config.healthy_states, config.report_age, &mix, false)?;
    let missing = || Error::Domain(format!("no simulated agent reached age {}", config.report_age));
    let le = summary.le_at_report_age.ok_or_else(missing)?;
    let hle = summary.hle_at_report_age.ok_or_else(missing)?;
    checks.push(AgreementCheck::new(format!("LE[{}]", config.report_age), h.le, le, sigmas));
    checks.push(AgreementCheck::new(format!("HLE[{}]", config.report_age), h.hle, hle, sigmas));
    Ok(checks)
}
