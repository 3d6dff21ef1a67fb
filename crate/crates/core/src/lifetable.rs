//! Exogenous period life tables used as the survival target.
//!
//! CSV input has a header of either `age,survival` or `age,qx`. Survival rows
//! give the proportion of the radix alive at exact age `x`; `qx` rows give the
//! probability of dying between `x` and `x + 1`, turned into survival at
//! `x + 1` by cumulative products of `1 − q`. Lines starting with `#` may carry
//! `key: value` metadata (`gender`, `year`).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::probit::Gender;

#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    gender: Option<Gender>,
    base_year: Option<i32>,
    first_age: u32,
    survival: Vec<f64>,
}

impl LifeTable {
    /// `survival[i]` is the proportion alive at exact age `first_age + i`.
    pub fn new(first_age: u32, survival: Vec<f64>) -> Result<Self> {
        if survival.is_empty() {
            return Err(Error::validation("life table has no rows"));
        }
        for (i, &s) in survival.iter().enumerate() {
            let age = first_age + i as u32;
            if !(s.is_finite() && s > 0.0 && s <= 1.0) {
                return Err(Error::validation(format!(
                    "survival at age {age} must lie in (0, 1], got {s}"
                )));
            }
            if i > 0 && s > survival[i - 1] {
                return Err(Error::validation(format!("non-monotone at age {age}")));
            }
        }
        Ok(Self {
            gender: None,
            base_year: None,
            first_age,
            survival,
        })
    }

    pub fn with_gender(mut self, gender: Gender) -> Self {
        self.gender = Some(gender);
        self
    }

    pub fn with_base_year(mut self, year: i32) -> Self {
        self.base_year = Some(year);
        self
    }

    pub fn gender(&self) -> Option<Gender> {
        self.gender
    }

    pub fn base_year(&self) -> Option<i32> {
        self.base_year
    }

    pub fn first_age(&self) -> u32 {
        self.first_age
    }

    pub fn last_age(&self) -> u32 {
        self.first_age + self.survival.len() as u32 - 1
    }

    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    /// Survival to exact `age`; age 0 is the radix and defaults to 1.
    pub fn survival_at(&self, age: u32) -> Option<f64> {
        if age >= self.first_age && age <= self.last_age() {
            Some(self.survival[(age - self.first_age) as usize])
        } else if age == 0 {
            Some(1.0)
        } else {
            None
        }
    }

    /// `(age, s*)` pairs for every age in `1..=max_age` present in the table.
    pub fn targets(&self, max_age: u32) -> Vec<(u32, f64)> {
        (self.first_age.max(1)..=self.last_age().min(max_age))
            .map(|a| (a, self.survival[(a - self.first_age) as usize]))
            .collect()
    }

    /// Survival at ages `1..=100` if the table covers all of them.
    pub fn survival_curve(&self) -> Result<Vec<f64>> {
        (1..=100)
            .map(|a| {
                self.survival_at(a)
                    .ok_or_else(|| Error::validation(format!("life table has no row for age {a}")))
            })
            .collect()
    }

    /// Remaining life expectancy at `from_age` from the table's own rows.
    pub fn life_expectancy(&self, from_age: u32, half_year: bool) -> Result<f64> {
        let curve = self.survival_curve()?;
        life_expectancy(&curve, from_age, half_year)
    }

    /// Writes the table in `age,survival` form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if let Some(g) = self.gender {
            writeln!(w, "# gender: {}", g.label())?;
        }
        if let Some(y) = self.base_year {
            writeln!(w, "# year: {y}")?;
        }
        writeln!(w, "age,survival")?;
        for (i, s) in self.survival.iter().enumerate() {
            writeln!(w, "{},{}", self.first_age + i as u32, s)?;
        }
        Ok(())
    }
}

/// Parses a life table from CSV text.
pub fn load_life_table<R: Read>(mut source: R) -> Result<LifeTable> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let mut gender = None;
    let mut year = None;
    let mut body = String::with_capacity(text.len());
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(meta) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once(':') {
                match key.trim() {
                    "gender" => gender = Some(value.trim().parse::<Gender>()?),
                    "year" => {
                        year = Some(value.trim().parse::<i32>().map_err(|e| {
                            Error::validation(format!("bad year `{}`: {e}", value.trim()))
                        })?)
                    }
                    _ => {}
                }
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        body.push_str(trimmed);
        body.push('\n');
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let has = |name: &str| headers.iter().any(|h| h == name);
    if !has("age") {
        return Err(Error::validation("life table header must contain `age`"));
    }
    let column = match (has("survival"), has("qx")) {
        (true, true) => {
            return Err(Error::validation(
                "life table has both `survival` and `qx` columns; supply exactly one",
            ))
        }
        (false, false) => {
            return Err(Error::validation(
                "life table header must contain `survival` or `qx`",
            ))
        }
        (true, false) => "survival",
        (false, true) => "qx",
    };
    let age_idx = headers.iter().position(|h| h == "age").unwrap();
    let val_idx = headers.iter().position(|h| h == column).unwrap();

    let mut ages = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let age: u32 = field(age_idx).parse().map_err(|e| {
            Error::validation(format!("row {}: bad age `{}`: {e}", line + 1, field(age_idx)))
        })?;
        let v: f64 = field(val_idx).parse().map_err(|e| {
            Error::validation(format!("row {}: bad {column} `{}`: {e}", line + 1, field(val_idx)))
        })?;
        if let Some(&prev) = ages.last() {
            if age != prev + 1 {
                return Err(Error::validation(format!(
                    "ages must be consecutive: missing age {} (found {age} after {prev})",
                    prev + 1
                )));
            }
        }
        ages.push(age);
        values.push(v);
    }
    let first = *ages
        .first()
        .ok_or_else(|| Error::validation("life table has no rows"))?;

    let table = if column == "survival" {
        LifeTable::new(first, values)?
    } else {
        let mut s = 1.0;
        let mut survival = Vec::with_capacity(values.len());
        for (i, q) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::validation(format!(
                    "qx at age {} must lie in [0, 1], got {q}",
                    first + i as u32
                )));
            }
            s *= 1.0 - q;
            survival.push(s);
        }
        LifeTable::new(first + 1, survival)?
    };
    let table = match gender {
        Some(g) => table.with_gender(g),
        None => table,
    };
    Ok(match year {
        Some(y) => table.with_base_year(y),
        None => table,
    })
}

/// Expected whole years lived beyond `from_age`.
///
/// `survival[i]` is survival to exact age `i + 1`; survival at age 0 is 1.
/// Returns `Σ_{i > from_age} s_i / s_{from_age}`, plus one half year when
/// `half_year` is set.
pub fn life_expectancy(survival: &[f64], from_age: u32, half_year: bool) -> Result<f64> {
    let base = if from_age == 0 {
        1.0
    } else {
        *survival.get(from_age as usize - 1).ok_or_else(|| {
            Error::Domain(format!("survival curve does not reach age {from_age}"))
        })?
    };
    if base <= 0.0 {
        return Err(Error::Domain(format!("no survivors at age {from_age}")));
    }
    let tail: f64 = survival[from_age as usize..].iter().sum();
    Ok(tail / base + if half_year { 0.5 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_survival_rows() {
        let t = load_life_table("age,survival\n1,0.992\n2,0.991\n3,0.9905\n".as_bytes()).unwrap();
        assert_eq!(t.first_age(), 1);
        assert_eq!(t.survival(), &[0.992, 0.991, 0.9905]);
        assert_eq!(t.survival_at(0), Some(1.0));
    }

    #[test]
    fn converts_qx_by_cumulative_product() {
        let t = load_life_table("age,qx\n0,0.008\n1,0.001\n2,0.0005\n".as_bytes()).unwrap();
        assert_eq!(t.first_age(), 1);
        // 0.992, 0.992 * 0.999, 0.992 * 0.999 * 0.9995
        let want = [0.992, 0.991_008, 0.990_512_496];
        for (g, w) in t.survival().iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "{g} vs {w}");
        }
    }

    #[test]
    fn rejects_increase() {
        let mut csv = String::from("age,survival\n");
        for a in 1..=45 {
            let s = if a == 40 { 0.99 } else { 0.98 - a as f64 * 1e-4 };
            csv.push_str(&format!("{a},{s}\n"));
        }
        let err = load_life_table(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-monotone at age 40"), "{err}");
    }

    #[test]
    fn rejects_gaps_and_ambiguous_columns() {
        let gap = load_life_table("age,survival\n1,0.99\n3,0.98\n".as_bytes()).unwrap_err();
        assert!(gap.to_string().contains("missing age 2"));
        let both = load_life_table("age,survival,qx\n1,0.99,0.01\n".as_bytes()).unwrap_err();
        assert!(both.to_string().contains("both"));
        assert!(load_life_table("age,lx\n1,0.99\n".as_bytes()).is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let src = "# gender: f\n# year: 1994\nage,survival\n1,0.995\n2,0.9945\n";
        let t = load_life_table(src.as_bytes()).unwrap();
        assert_eq!(t.gender(), Some(Gender::Female));
        assert_eq!(t.base_year(), Some(1994));
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), src);
    }

    #[test]
    fn deterministic_three_year_lifetime() {
        let mut s = vec![0.0; 100];
        s[..3].fill(1.0);
        assert_eq!(life_expectancy(&s, 0, false).unwrap(), 3.0);
        assert_eq!(life_expectancy(&s, 0, true).unwrap(), 3.5);
        assert_eq!(life_expectancy(&s, 3, false).unwrap(), 0.0);
        assert!(life_expectancy(&s, 4, false).is_err());
    }

    #[test]
    fn geometric_survival() {
        let s: Vec<f64> = (1..=100).map(|i| 0.5f64.powi(i)).collect();
        assert!((life_expectancy(&s, 0, false).unwrap() - 1.0).abs() < 1e-15);
        // conditional on reaching 10, the same geometric tail
        assert!((life_expectancy(&s, 10, false).unwrap() - 1.0).abs() < 1e-12);
    }
}
