//! Ordered-probit health transition models.
//!
//! Each initial living state `k` has its own equation: a latent index
//! `h* = x'γ_k + e` with `e ~ N(0, 1)`, cut into ordered outcome categories by
//! thresholds `α_1 ≤ … ≤ α_J`. Category 1 is the best living state, the last
//! living category is the worst, and everything above `α_J` is death. The
//! published tables carry no separate intercept, so the linear predictor holds
//! only the covariates (age in years and a female indicator).

use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::TransitionMatrix;
use crate::normal::phi;

/// Oldest age (inclusive) for which matrices are built.
pub const MAX_AGE: u32 = 99;
/// Number of annual matrices, ages `0..=MAX_AGE`.
pub const AGES: usize = MAX_AGE as usize + 1;
/// First age handled by the older-age equations.
pub const AGE_REGIME_BOUNDARY: u32 = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HealthMeasure {
    /// Self-assessed health: very good, good, fair, bad/very bad.
    #[serde(rename = "SAH", alias = "sah")]
    Sah,
    /// Hampering health condition: none/slight, severe.
    #[serde(rename = "HH", alias = "hh")]
    Hh,
}

const SAH_STATES: [&str; 4] = ["very_good", "good", "fair", "bad_very_bad"];
const HH_STATES: [&str; 2] = ["none_slight", "severe"];

impl HealthMeasure {
    /// Living states, ordered best to worst.
    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            HealthMeasure::Sah => &SAH_STATES,
            HealthMeasure::Hh => &HH_STATES,
        }
    }

    pub fn living_states(self) -> usize {
        self.state_names().len()
    }

    /// Indices of the states counted as healthy life.
    pub fn healthy_states(self) -> &'static [usize] {
        match self {
            HealthMeasure::Sah => &[0, 1],
            HealthMeasure::Hh => &[0],
        }
    }

    pub fn state_index(self, name: &str) -> Option<usize> {
        self.state_names().iter().position(|s| *s == name)
    }

    pub fn label(self) -> &'static str {
        match self {
            HealthMeasure::Sah => "SAH",
            HealthMeasure::Hh => "HH",
        }
    }
}

impl std::str::FromStr for HealthMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sah" => Ok(HealthMeasure::Sah),
            "hh" => Ok(HealthMeasure::Hh),
            _ => Err(Error::validation(format!("unknown health measure `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m", alias = "male", alias = "M")]
    Male,
    #[serde(rename = "f", alias = "female", alias = "F")]
    Female,
}

impl Gender {
    /// Value of the gender covariate: the coefficient applies to women.
    pub fn indicator(self) -> f64 {
        match self {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Gender::Male => "m",
            Gender::Female => "f",
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "male" | "men" => Ok(Gender::Male),
            "f" | "female" | "women" => Ok(Gender::Female),
            _ => Err(Error::validation(format!("unknown gender `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Covariates {
    age: u32,
    gender: Gender,
}

impl Covariates {
    pub fn new(age: u32, gender: Gender) -> Result<Self> {
        if age > MAX_AGE {
            return Err(Error::AgeOutOfRange(age));
        }
        Ok(Self { age, gender })
    }

    pub fn age(&self) -> u32 {
        self.age
    }

    pub fn gender(&self) -> Gender {
        self.gender
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Under65,
    Over65,
}

impl Regime {
    /// Regime by age at the start of the transition year.
    pub fn for_age(age: u32) -> Self {
        if age < AGE_REGIME_BOUNDARY {
            Regime::Under65
        } else {
            Regime::Over65
        }
    }
}

/// Standard errors as published; carried along but never used in computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    pub cutpoints: Vec<f64>,
    pub age_coeff: f64,
    pub gender_coeff: f64,
}

/// One ordered-probit equation for a given initial living state.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbitEquation {
    initial_state: usize,
    cutpoints: Vec<f64>,
    age_coeff: f64,
    gender_coeff: f64,
    std_errors: Option<StdErrors>,
}

impl ProbitEquation {
    pub fn new(
        initial_state: usize,
        cutpoints: Vec<f64>,
        age_coeff: f64,
        gender_coeff: f64,
    ) -> Result<Self> {
        if cutpoints.is_empty() {
            return Err(Error::validation("probit equation has no cutpoints"));
        }
        if let Some(bad) = cutpoints.iter().find(|c| !c.is_finite()) {
            return Err(Error::validation(format!("non-finite cutpoint {bad}")));
        }
        if let Some(w) = cutpoints.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::validation(format!(
                "cutpoints of initial state {initial_state} decrease at position {}: {} > {}",
                w + 1,
                cutpoints[w],
                cutpoints[w + 1]
            )));
        }
        if !age_coeff.is_finite() || !gender_coeff.is_finite() {
            return Err(Error::validation("non-finite probit coefficient"));
        }
        Ok(Self {
            initial_state,
            cutpoints,
            age_coeff,
            gender_coeff,
            std_errors: None,
        })
    }

    pub fn with_std_errors(mut self, se: StdErrors) -> Result<Self> {
        if se.cutpoints.len() != self.cutpoints.len() {
            return Err(Error::validation(format!(
                "initial state {}: {} cutpoint standard errors for {} cutpoints",
                self.initial_state,
                se.cutpoints.len(),
                self.cutpoints.len()
            )));
        }
        self.std_errors = Some(se);
        Ok(self)
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    pub fn age_coeff(&self) -> f64 {
        self.age_coeff
    }

    pub fn gender_coeff(&self) -> f64 {
        self.gender_coeff
    }

    pub fn std_errors(&self) -> Option<&StdErrors> {
        self.std_errors.as_ref()
    }

    /// Number of living destination states (death excluded).
    pub fn living_outcomes(&self) -> usize {
        self.cutpoints.len()
    }

    pub fn linear_predictor(&self, cov: &Covariates) -> f64 {
        self.age_coeff * f64::from(cov.age) + self.gender_coeff * cov.gender.indicator()
    }

    /// Distribution over destinations, best living state first and death last.
    ///
    /// `p_j = Φ(α_j − xb) − Φ(α_{j−1} − xb)` with `α_0 = −∞`, and
    /// `p_death = 1 − Φ(α_J − xb)`. Differences between two upper-tail values
    /// are taken on the complementary side to keep relative accuracy.
    pub fn transition_distribution(&self, cov: &Covariates) -> Vec<f64> {
        let xb = self.linear_predictor(cov);
        let mut out = Vec::with_capacity(self.cutpoints.len() + 1);
        let mut lower = f64::NEG_INFINITY;
        for &upper in &self.cutpoints {
            out.push(interval_probability(lower - xb, upper - xb));
            lower = upper;
        }
        out.push(phi(xb - lower));
        out
    }
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, evaluated on the side with less cancellation.
fn interval_probability(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        phi(-a) - phi(-b)
    } else {
        phi(b) - phi(a)
    }
}

/// One file's worth of coefficients: one measure, one age regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub measure: HealthMeasure,
    pub regime: Regime,
    pub equations: Vec<EquationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationRecord {
    pub state: String,
    pub cutpoints: Vec<f64>,
    pub age_coeff: f64,
    pub gender_coeff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<StdErrors>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TableDocument {
    One(CoefficientTable),
    Many(Vec<CoefficientTable>),
}

/// Reads one coefficient table, or a JSON array of them.
pub fn load_coefficient_tables<R: Read>(reader: R) -> Result<Vec<CoefficientTable>> {
    let doc: TableDocument = serde_json::from_reader(reader)?;
    Ok(match doc {
        TableDocument::One(t) => vec![t],
        TableDocument::Many(ts) => ts,
    })
}

/// Both age regimes of probit equations for one health measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbitCoefficientSet {
    measure: HealthMeasure,
    under65: Vec<ProbitEquation>,
    over65: Vec<ProbitEquation>,
}

impl ProbitCoefficientSet {
    pub fn new(
        measure: HealthMeasure,
        under65: Vec<ProbitEquation>,
        over65: Vec<ProbitEquation>,
    ) -> Result<Self> {
        for (regime, eqs) in [("under65", &under65), ("over65", &over65)] {
            check_regime(measure, regime, eqs)?;
        }
        Ok(Self {
            measure,
            under65,
            over65,
        })
    }

    /// Assembles a set from exactly one under-65 and one 65+ table.
    pub fn from_tables(tables: &[CoefficientTable]) -> Result<Self> {
        let measure = tables
            .first()
            .ok_or_else(|| Error::validation("no coefficient tables supplied"))?
            .measure;
        let mut under = None;
        let mut over = None;
        for t in tables {
            if t.measure != measure {
                return Err(Error::validation(format!(
                    "mixed health measures {} and {}",
                    measure.label(),
                    t.measure.label()
                )));
            }
            let slot = match t.regime {
                Regime::Under65 => &mut under,
                Regime::Over65 => &mut over,
            };
            if slot.is_some() {
                return Err(Error::validation(format!(
                    "duplicate {:?} table for {}",
                    t.regime,
                    measure.label()
                )));
            }
            *slot = Some(equations_from_table(t)?);
        }
        let under = under.ok_or_else(|| Error::validation("missing under65 coefficient table"))?;
        let over = over.ok_or_else(|| Error::validation("missing over65 coefficient table"))?;
        Self::new(measure, under, over)
    }

    /// The published UK coefficients for `measure`.
    pub fn bundled(measure: HealthMeasure) -> Self {
        let (under, over) = match measure {
            HealthMeasure::Sah => (
                include_str!("../data/sah_under65.json"),
                include_str!("../data/sah_over65.json"),
            ),
            HealthMeasure::Hh => (
                include_str!("../data/hh_under65.json"),
                include_str!("../data/hh_over65.json"),
            ),
        };
        let tables: Vec<CoefficientTable> = [under, over]
            .iter()
            .map(|s| serde_json::from_str(s).expect("bundled coefficient table parses"))
            .collect();
        Self::from_tables(&tables).expect("bundled coefficient tables are valid")
    }

    pub fn to_tables(&self) -> Vec<CoefficientTable> {
        [(Regime::Under65, &self.under65), (Regime::Over65, &self.over65)]
            .into_iter()
            .map(|(regime, eqs)| CoefficientTable {
                measure: self.measure,
                regime,
                equations: eqs
                    .iter()
                    .map(|e| EquationRecord {
                        state: self.measure.state_names()[e.initial_state].to_string(),
                        cutpoints: e.cutpoints.clone(),
                        age_coeff: e.age_coeff,
                        gender_coeff: e.gender_coeff,
                        std_errors: e.std_errors.clone(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn measure(&self) -> HealthMeasure {
        self.measure
    }

    pub fn age_regime_boundary(&self) -> u32 {
        AGE_REGIME_BOUNDARY
    }

    pub fn equations(&self, regime: Regime) -> &[ProbitEquation] {
        match regime {
            Regime::Under65 => &self.under65,
            Regime::Over65 => &self.over65,
        }
    }

    pub fn build_transition_matrix(&self, age: u32, gender: Gender) -> Result<TransitionMatrix> {
        let cov = Covariates::new(age, gender)?;
        let eqs = self.equations(Regime::for_age(age));
        let s = self.measure.living_states();
        let mut m = DMatrix::zeros(s, s);
        for eq in eqs {
            let dist = eq.transition_distribution(&cov);
            for (j, p) in dist.iter().take(s).enumerate() {
                m[(j, eq.initial_state)] = *p;
            }
        }
        Ok(TransitionMatrix::new_unchecked(m))
    }

    /// Matrices for ages 0 through 99, in age order.
    pub fn build_all_matrices(&self, gender: Gender) -> Vec<TransitionMatrix> {
        (0..=MAX_AGE)
            .map(|age| {
                self.build_transition_matrix(age, gender)
                    .expect("age within range")
            })
            .collect()
    }
}

fn equations_from_table(t: &CoefficientTable) -> Result<Vec<ProbitEquation>> {
    let mut eqs = Vec::with_capacity(t.equations.len());
    for rec in &t.equations {
        let state = t.measure.state_index(&rec.state).ok_or_else(|| {
            Error::validation(format!(
                "unknown {} state `{}` (expected one of {:?})",
                t.measure.label(),
                rec.state,
                t.measure.state_names()
            ))
        })?;
        let mut eq = ProbitEquation::new(state, rec.cutpoints.clone(), rec.age_coeff, rec.gender_coeff)?;
        if let Some(se) = &rec.std_errors {
            eq = eq.with_std_errors(se.clone())?;
        }
        eqs.push(eq);
    }
    eqs.sort_by_key(|e| e.initial_state);
    Ok(eqs)
}

fn check_regime(measure: HealthMeasure, regime: &str, eqs: &[ProbitEquation]) -> Result<()> {
    let s = measure.living_states();
    if eqs.len() != s {
        return Err(Error::validation(format!(
            "{} {regime}: expected {s} equations, found {}",
            measure.label(),
            eqs.len()
        )));
    }
    for (i, eq) in eqs.iter().enumerate() {
        if eq.initial_state != i {
            return Err(Error::validation(format!(
                "{} {regime}: equations must cover each initial state exactly once (state {i} missing or duplicated)",
                measure.label()
            )));
        }
        if eq.cutpoints.len() != s {
            return Err(Error::validation(format!(
                "{} {regime}: state {i} has {} cutpoints, expected {s}",
                measure.label(),
                eq.cutpoints.len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sah_very_good_under65() -> ProbitEquation {
        ProbitEquation::new(0, vec![0.264, 1.490, 2.221, 3.143], -0.001, 0.078).unwrap()
    }

    #[test]
    fn sah_very_good_age30_male_matches_oracle() {
        // mpmath, 40 significant digits
        let expected = [
            0.615_621_048_314_169_1,
            0.320_123_463_866_895_03,
            0.052_062_719_130_102_74,
            0.011_438_406_066_563_694,
            0.000_754_362_622_269_402_6,
        ];
        let cov = Covariates::new(30, Gender::Male).unwrap();
        let p = sah_very_good_under65().transition_distribution(&cov);
        assert_eq!(p.len(), 5);
        for (got, want) in p.iter().zip(expected) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hh_severe_age80_female_matches_oracle() {
        let expected = [
            0.218_284_506_607_123_74,
            0.701_704_854_256_842_6,
            0.080_010_639_136_033_66,
        ];
        let eq = ProbitEquation::new(1, vec![0.612, 2.795], 0.020, -0.210).unwrap();
        let p = eq.transition_distribution(&Covariates::new(80, Gender::Female).unwrap());
        for (got, want) in p.iter().zip(expected) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn female_predictor_exceeds_male_by_gender_coeff() {
        let eq = sah_very_good_under65();
        let f = eq.linear_predictor(&Covariates::new(40, Gender::Female).unwrap());
        let m = eq.linear_predictor(&Covariates::new(40, Gender::Male).unwrap());
        assert!((f - m - 0.078).abs() < 1e-15);
    }

    #[test]
    fn rejects_decreasing_cutpoints() {
        let err = ProbitEquation::new(0, vec![0.5, 0.2, 1.0], 0.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("decrease"));
    }

    #[test]
    fn covariates_age_bounds() {
        assert!(Covariates::new(99, Gender::Male).is_ok());
        assert!(matches!(
            Covariates::new(100, Gender::Male),
            Err(Error::AgeOutOfRange(100))
        ));
    }

    #[test]
    fn matrix_columns_are_distributions_without_death() {
        let set = ProbitCoefficientSet::bundled(HealthMeasure::Sah);
        let m = set.build_transition_matrix(30, Gender::Male).unwrap();
        let cov = Covariates::new(30, Gender::Male).unwrap();
        for eq in set.equations(Regime::Under65) {
            let d = eq.transition_distribution(&cov);
            for j in 0..4 {
                assert_eq!(m.get(j, eq.initial_state()), d[j]);
            }
            assert!((m.death_probability(eq.initial_state()) - d[4]).abs() < 1e-15);
        }
    }

    #[test]
    fn regime_switches_at_65() {
        let set = ProbitCoefficientSet::bundled(HealthMeasure::Hh);
        let cov64 = Covariates::new(64, Gender::Female).unwrap();
        let cov65 = Covariates::new(65, Gender::Female).unwrap();
        let m64 = set.build_transition_matrix(64, Gender::Female).unwrap();
        let m65 = set.build_transition_matrix(65, Gender::Female).unwrap();
        let u = &set.equations(Regime::Under65)[0];
        let o = &set.equations(Regime::Over65)[0];
        assert_eq!(m64.get(0, 0), u.transition_distribution(&cov64)[0]);
        assert_eq!(m65.get(0, 0), o.transition_distribution(&cov65)[0]);
        assert_ne!(m64, m65);
    }

    #[test]
    fn build_all_has_one_matrix_per_age() {
        let set = ProbitCoefficientSet::bundled(HealthMeasure::Sah);
        let all = set.build_all_matrices(Gender::Female);
        assert_eq!(all.len(), 100);
        assert_eq!(all[30], set.build_transition_matrix(30, Gender::Female).unwrap());
        assert!(set.build_transition_matrix(100, Gender::Female).is_err());
    }

    #[test]
    fn table_round_trip_and_shape_checks() {
        let set = ProbitCoefficientSet::bundled(HealthMeasure::Sah);
        let again = ProbitCoefficientSet::from_tables(&set.to_tables()).unwrap();
        assert_eq!(set, again);

        let mut tables = set.to_tables();
        tables[0].equations.pop();
        assert!(ProbitCoefficientSet::from_tables(&tables).is_err());

        let mut tables = set.to_tables();
        tables[1].equations[2].state = "good".into();
        assert!(ProbitCoefficientSet::from_tables(&tables).is_err());

        let mut tables = set.to_tables();
        tables[1].equations[0].cutpoints.swap(0, 3);
        assert!(ProbitCoefficientSet::from_tables(&tables).is_err());

        let tables = set.to_tables();
        assert!(ProbitCoefficientSet::from_tables(&tables[..1]).is_err());
    }

    #[test]
    fn loads_single_table_or_array() {
        let one = include_str!("../data/hh_over65.json");
        assert_eq!(load_coefficient_tables(one.as_bytes()).unwrap().len(), 1);
        let many = format!("[{}, {}]", include_str!("../data/hh_under65.json"), one);
        let tables = load_coefficient_tables(many.as_bytes()).unwrap();
        let set = ProbitCoefficientSet::from_tables(&tables).unwrap();
        assert_eq!(set, ProbitCoefficientSet::bundled(HealthMeasure::Hh));
    }
}
