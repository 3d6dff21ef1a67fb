//! Prevalence-based healthy life expectancy (Sullivan's method).
//!
//! Person-years in `[x, x+n)` come from `L = e_x·l_x − e_{x+n}·l_{x+n}`, the
//! healthy share is `L·(1 − d)` for ill-health prevalence `d`, and healthy
//! life expectancy at `x` is the sum of healthy person-years from `x` upward
//! divided by `l_x`. Past the last row of the schedule `l = e = 0`.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Survivors `l_x` and remaining life expectancy `e_x` by exact age.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableSchedule {
    rows: BTreeMap<u32, (f64, f64)>,
}

impl LifeTableSchedule {
    pub fn new(rows: impl IntoIterator<Item = (u32, f64, f64)>) -> Result<Self> {
        let rows: BTreeMap<u32, (f64, f64)> = rows.into_iter().map(|(x, l, e)| (x, (l, e))).collect();
        if rows.is_empty() {
            return Err(Error::validation("life-table schedule is empty"));
        }
        let mut prev: Option<(u32, f64)> = None;
        for (&x, &(l, e)) in &rows {
            if !(l.is_finite() && l >= 0.0 && e.is_finite() && e >= 0.0) {
                return Err(Error::validation(format!("invalid l/e at age {x}: l={l}, e={e}")));
            }
            if let Some((px, pl)) = prev {
                if l > pl {
                    return Err(Error::validation(format!(
                        "l_x increases between ages {px} and {x}"
                    )));
                }
            }
            prev = Some((x, l));
        }
        Ok(Self { rows })
    }

    pub fn l(&self, x: u32) -> Option<f64> {
        self.rows.get(&x).map(|r| r.0)
    }

    pub fn e(&self, x: u32) -> Option<f64> {
        self.rows.get(&x).map(|r| r.1)
    }

    pub fn last_age(&self) -> u32 {
        *self.rows.keys().next_back().unwrap()
    }

    fn closure(&self, x: u32) -> Option<(f64, f64)> {
        match self.rows.get(&x) {
            Some(r) => Some(*r),
            None if x > self.last_age() => Some((0.0, 0.0)),
            None => None,
        }
    }
}

/// One age group `[age_from, age_to)` with its ill-health prevalence.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct PrevalenceGroup {
    pub age_from: u32,
    pub age_to: u32,
    pub ill_health_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceSchedule {
    groups: Vec<PrevalenceGroup>,
}

impl PrevalenceSchedule {
    pub fn new(mut groups: Vec<PrevalenceGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::validation("prevalence schedule is empty"));
        }
        groups.sort_by_key(|g| g.age_from);
        for g in &groups {
            if g.age_to <= g.age_from {
                return Err(Error::validation(format!(
                    "empty age group [{}, {})",
                    g.age_from, g.age_to
                )));
            }
            if !(0.0..=1.0).contains(&g.ill_health_rate) {
                return Err(Error::validation(format!(
                    "ill-health rate {} for [{}, {}) outside [0, 1]",
                    g.ill_health_rate, g.age_from, g.age_to
                )));
            }
        }
        for w in groups.windows(2) {
            if w[1].age_from != w[0].age_to {
                return Err(Error::validation(format!(
                    "age groups must partition the range: [{}, {}) followed by [{}, {})",
                    w[0].age_from, w[0].age_to, w[1].age_from, w[1].age_to
                )));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[PrevalenceGroup] {
        &self.groups
    }

    /// Reads `age_from,age_to,ill_health_rate` CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let groups = rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(groups)
    }
}

impl LifeTableSchedule {
    /// Reads `age,l,e` CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            age: u32,
            l: f64,
            e: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for r in rdr.deserialize() {
            let r: Row = r?;
            rows.push((r.age, r.l, r.e));
        }
        Self::new(rows)
    }
}

/// Person-years lived in `[x, x+n)`: `e_x·l_x − e_{x+n}·l_{x+n}`.
pub fn person_years(schedule: &LifeTableSchedule, x: u32, n: u32) -> Result<f64> {
    let (lx, ex) = schedule
        .rows
        .get(&x)
        .copied()
        .ok_or_else(|| Error::validation(format!("schedule has no row for age {x}")))?;
    let (ln, en) = schedule
        .closure(x + n)
        .ok_or_else(|| Error::validation(format!("schedule has no row for age {}", x + n)))?;
    let l = ex * lx - en * ln;
    if l < 0.0 {
        return Err(Error::validation(format!(
            "inconsistent schedule: negative person-years {l} in [{x}, {})",
            x + n
        )));
    }
    Ok(l)
}

/// Person-years free of ill-health: `L·(1 − d)`.
pub fn healthy_person_years(person_years: f64, ill_health_rate: f64) -> f64 {
    person_years * (1.0 - ill_health_rate)
}

/// Healthy life expectancy at `from_age`, which must start a prevalence group.
///
/// Evaluated as `e_x − Σ L·d / l_x`: the `L` terms telescope to `e_x·l_x`, so
/// this equals `Σ L·(1 − d) / l_x` and is exact when prevalence is zero.
pub fn sullivan_hle(
    schedule: &LifeTableSchedule,
    prevalence: &PrevalenceSchedule,
    from_age: u32,
) -> Result<f64> {
    let start = prevalence
        .groups
        .iter()
        .position(|g| g.age_from == from_age)
        .ok_or_else(|| Error::validation(format!("no prevalence group starts at age {from_age}")))?;
    let lx = schedule
        .l(from_age)
        .ok_or_else(|| Error::validation(format!("schedule has no row for age {from_age}")))?;
    let ex = schedule.e(from_age).unwrap();
    if lx <= 0.0 {
        return Err(Error::Domain(format!("no survivors at age {from_age}")));
    }
    let groups = &prevalence.groups[start..];
    let last = groups.last().unwrap();
    if last.age_to <= schedule.last_age() {
        return Err(Error::validation(format!(
            "prevalence groups end at age {} but the schedule runs to {}",
            last.age_to,
            schedule.last_age()
        )));
    }
    let mut ill = 0.0;
    for g in groups {
        let l = person_years(schedule, g.age_from, g.age_to - g.age_from)?;
        ill += l * g.ill_health_rate;
    }
    Ok(ex - ill / lx)
}
