//! Commands behind the `hle` binary.
//!
//! Each command reads its inputs, runs the corresponding `hle-core` pipeline
//! and returns plain data; writing files and choosing exit codes is left to
//! the caller. [`RunConfig`] is the JSON form of every command-line flag, and
//! [`RunManifest`] records what a run consumed and produced.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hle_core::multistate::{health_expectancy, occupancy_tensor, state_mix_at_age};
use hle_core::probit::{load_coefficient_tables, CoefficientTable};
use hle_core::simcheck::{agreement_checks, simulate, AgreementCheck, SimulationConfig, SimulationSummary};
use hle_core::sullivan::{sullivan_hle, LifeTableSchedule, PrevalenceSchedule};
use hle_core::{
    align, load_life_table, AlignOptions, AlignmentReport, CohortVector, Gender, HealthMeasure,
    LifeTable, ProbitCoefficientSet, TransitionMatrix,
};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_ORACLE_FAILED: i32 = 4;

/// Ages checked by `simcheck` unless configured otherwise.
pub const SIMCHECK_AGES: [u32; 5] = [10, 30, 50, 70, 90];

/// Settings shared by all commands; every field mirrors a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub measure: Option<HealthMeasure>,
    pub gender: Option<Gender>,
    pub coeffs: Vec<PathBuf>,
    pub life_tables: Vec<PathBuf>,
    pub from_age: Option<u32>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub allow_rank_deficient: Option<bool>,
    pub half_year_correction: Option<bool>,
    pub seed: Option<u64>,
    pub agents: Option<usize>,
    pub schedule: Option<PathBuf>,
    pub prevalence: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tensor: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file. A manifest from an earlier run is accepted too;
    /// its recorded inputs are checked against their digests.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if value.get("tool_version").is_some() {
            let manifest: RunManifest = serde_json::from_value(value)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            manifest.verify_inputs()?;
            return Ok(manifest.config);
        }
        serde_json::from_value(value).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            measure, gender, from_age, tolerance, max_iter, damping, allow_rank_deficient,
            half_year_correction, seed, agents, schedule, prevalence, out, tensor
        );
        if !other.coeffs.is_empty() {
            self.coeffs = other.coeffs;
        }
        if !other.life_tables.is_empty() {
            self.life_tables = other.life_tables;
        }
        self
    }

    pub fn measure(&self) -> anyhow::Result<HealthMeasure> {
        self.measure.ok_or_else(|| anyhow!(InputError("--measure is required".into())))
    }

    pub fn gender(&self) -> anyhow::Result<Gender> {
        self.gender.ok_or_else(|| anyhow!(InputError("--gender is required".into())))
    }

    pub fn from_age(&self) -> u32 {
        self.from_age.unwrap_or(65)
    }

    pub fn half_year(&self) -> bool {
        self.half_year_correction.unwrap_or(false)
    }

    pub fn align_options(&self) -> AlignOptions {
        let d = AlignOptions::default();
        AlignOptions {
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            max_iterations: self.max_iter.unwrap_or(d.max_iterations),
            damping: self.damping.unwrap_or(d.damping),
            allow_rank_deficient: self.allow_rank_deficient.unwrap_or(d.allow_rank_deficient),
        }
    }
}

/// Bad user input outside `hle-core` (missing flags, mismatched files).
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<std::io::Error>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<hle_core::Error>() {
            return match e {
                hle_core::Error::SingularSystem { .. } | hle_core::Error::ClampingExhausted { .. } => {
                    EXIT_NOT_CONVERGED
                }
                hle_core::Error::Io(_) => EXIT_VALIDATION,
                e if e.is_validation() => EXIT_VALIDATION,
                _ => 1,
            };
        }
        if cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return EXIT_VALIDATION;
        }
    }
    1
}

/// One line of a results table: years of life, years in good health and the
/// healthy share of the lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub measure: HealthMeasure,
    pub gender: Gender,
    pub from_age: u32,
    pub life_expectancy_years: f64,
    pub healthy_life_expectancy_years: f64,
    pub pct_healthy: f64,
}

/// Coefficients for `measure`: the bundled UK set when `files` is empty,
/// otherwise the tables for `measure` found across `files`.
pub fn load_coefficients(measure: HealthMeasure, files: &[PathBuf]) -> anyhow::Result<ProbitCoefficientSet> {
    if files.is_empty() {
        return Ok(ProbitCoefficientSet::bundled(measure));
    }
    let mut tables: Vec<CoefficientTable> = Vec::new();
    for f in files {
        let file = File::open(f).with_context(|| format!("opening coefficients {}", f.display()))?;
        let loaded = load_coefficient_tables(BufReader::new(file))
            .with_context(|| format!("reading coefficients {}", f.display()))?;
        tables.extend(loaded);
    }
    tables.retain(|t| t.measure == measure);
    if tables.is_empty() {
        bail!(InputError(format!("no {} coefficient table in the supplied files", measure.label())));
    }
    Ok(ProbitCoefficientSet::from_tables(&tables)?)
}

pub fn read_life_table(path: &Path) -> anyhow::Result<LifeTable> {
    let file = File::open(path).with_context(|| format!("opening life table {}", path.display()))?;
    load_life_table(BufReader::new(file)).with_context(|| format!("reading life table {}", path.display()))
}

fn row_for(
    label: String,
    measure: HealthMeasure,
    gender: Gender,
    matrices: &[TransitionMatrix],
    from_age: u32,
    half_year: bool,
) -> anyhow::Result<TableRow> {
    let states = measure.living_states();
    let mix = state_mix_at_age(matrices, &CohortVector::best_state(states), from_age)?;
    let h = health_expectancy(matrices, measure.healthy_states(), from_age, &mix, half_year)?;
    Ok(TableRow {
        label,
        measure,
        gender,
        from_age,
        life_expectancy_years: h.le,
        healthy_life_expectancy_years: h.hle,
        pct_healthy: h.pct_healthy,
    })
}

/// LE and HLE at `from_age` straight from the probit matrices.
pub fn cmd_unadjusted(
    measure: HealthMeasure,
    gender: Gender,
    coeffs: &[PathBuf],
    from_age: u32,
    half_year: bool,
) -> anyhow::Result<TableRow> {
    let set = load_coefficients(measure, coeffs)?;
    let matrices = set.build_all_matrices(gender);
    row_for("unadjusted".into(), measure, gender, &matrices, from_age, half_year)
}

/// One aligned life table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRun {
    pub life_table: PathBuf,
    pub row: TableRow,
    /// The life table's own LE at `from_age`, when it covers ages 1 to 100.
    pub target_life_expectancy_years: Option<f64>,
    pub report: AlignmentReport,
}

/// Aligns the probit matrices to each life table in turn and reports LE and
/// HLE from the aligned matrices, one row per table.
///
/// Runs that fail to converge are still returned; check `report.converged`.
pub fn cmd_align_and_report(
    measure: HealthMeasure,
    gender: Gender,
    coeffs: &[PathBuf],
    life_tables: &[PathBuf],
    options: &AlignOptions,
    from_age: u32,
    half_year: bool,
) -> anyhow::Result<Vec<AlignedRun>> {
    if life_tables.is_empty() {
        bail!(InputError("align needs at least one --life-table".into()));
    }
    let set = load_coefficients(measure, coeffs)?;
    let base = set.build_all_matrices(gender);
    let x0 = CohortVector::best_state(measure.living_states());
    let mut runs = Vec::with_capacity(life_tables.len());
    for path in life_tables {
        let table = read_life_table(path)?;
        if let Some(g) = table.gender() {
            if g != gender {
                bail!(InputError(format!(
                    "life table {} is for gender {}, run is for {}",
                    path.display(),
                    g.label(),
                    gender.label()
                )));
            }
        }
        let aligned = align(&base, &x0, &table, options)
            .with_context(|| format!("aligning to {}", path.display()))?;
        let label = match table.base_year() {
            Some(y) => y.to_string(),
            None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        let row = row_for(label, measure, gender, &aligned.matrices, from_age, half_year)?;
        runs.push(AlignedRun {
            life_table: path.clone(),
            row,
            target_life_expectancy_years: table.life_expectancy(from_age, half_year).ok(),
            report: aligned.report,
        });
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SullivanRow {
    pub from_age: u32,
    pub life_expectancy_years: f64,
    pub healthy_life_expectancy_years: f64,
    pub pct_healthy: f64,
}

/// Prevalence-based HLE from an `age,l,e` schedule and an
/// `age_from,age_to,ill_health_rate` prevalence file.
pub fn cmd_sullivan(schedule: &Path, prevalence: &Path, from_age: u32) -> anyhow::Result<SullivanRow> {
    let s = LifeTableSchedule::from_csv(
        File::open(schedule).with_context(|| format!("opening schedule {}", schedule.display()))?,
    )
    .with_context(|| format!("reading schedule {}", schedule.display()))?;
    let p = PrevalenceSchedule::from_csv(
        File::open(prevalence).with_context(|| format!("opening prevalence {}", prevalence.display()))?,
    )
    .with_context(|| format!("reading prevalence {}", prevalence.display()))?;
    let hle = sullivan_hle(&s, &p, from_age)?;
    let le = s
        .e(from_age)
        .ok_or_else(|| anyhow!(InputError(format!("schedule has no row for age {from_age}"))))?;
    Ok(SullivanRow {
        from_age,
        life_expectancy_years: le,
        healthy_life_expectancy_years: hle,
        pct_healthy: if le > 0.0 { 100.0 * hle / le } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimcheckOutput {
    pub summary: SimulationSummary,
    pub checks: Vec<AgreementCheck>,
    pub passed: bool,
}

/// Simulates individual lifetimes under the (optionally aligned) matrices and
/// compares them with the analytic results at three standard errors.
pub fn cmd_simcheck(config: &RunConfig) -> anyhow::Result<SimcheckOutput> {
    let measure = config.measure()?;
    let gender = config.gender()?;
    let mut matrices = load_coefficients(measure, &config.coeffs)?.build_all_matrices(gender);
    if let Some(path) = config.life_tables.first() {
        let table = read_life_table(path)?;
        let x0 = CohortVector::best_state(measure.living_states());
        let aligned = align(&matrices, &x0, &table, &config.align_options())?;
        if !aligned.report.converged {
            bail!(InputError(format!("alignment to {} did not converge", path.display())));
        }
        matrices = aligned.matrices;
    }
    let mut sim = SimulationConfig::for_measure(
        measure,
        gender,
        matrices,
        config.agents.unwrap_or(1_000_000),
        config.seed.unwrap_or(0),
    );
    sim.report_age = config.from_age();
    let summary = simulate(&sim)?;
    let checks = agreement_checks(&sim, &summary, &SIMCHECK_AGES, 3.0)?;
    let passed = checks.iter().all(|c| c.passed);
    Ok(SimcheckOutput { summary, checks, passed })
}

/// Probit (or aligned) matrices for ages 0..=99, with the occupancy tensors.
pub fn cmd_export_matrices(config: &RunConfig) -> anyhow::Result<(Vec<TransitionMatrix>, Option<AlignmentReport>)> {
    let measure = config.measure()?;
    let gender = config.gender()?;
    let matrices = load_coefficients(measure, &config.coeffs)?.build_all_matrices(gender);
    match config.life_tables.first() {
        None => Ok((matrices, None)),
        Some(path) => {
            let table = read_life_table(path)?;
            let x0 = CohortVector::best_state(measure.living_states());
            let aligned = align(&matrices, &x0, &table, &config.align_options())?;
            Ok((aligned.matrices, Some(aligned.report)))
        }
    }
}

pub fn write_table_rows<W: Write>(w: W, rows: &[TableRow]) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_matrices<W: Write>(w: W, matrices: &[TransitionMatrix]) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["age", "destination", "origin", "probability"])?;
    for (age, m) in matrices.iter().enumerate() {
        for k in 0..m.states() {
            for j in 0..m.states() {
                wtr.write_record([age.to_string(), j.to_string(), k.to_string(), m.get(j, k).to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_tensor(path: &Path, matrices: &[TransitionMatrix]) -> anyhow::Result<()> {
    let t = occupancy_tensor(matrices)?;
    t.write_csv(File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    Ok(())
}

/// What a run read, how it was configured and what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub measure: Option<HealthMeasure>,
    pub gender: Option<Gender>,
    pub year_labels: Vec<String>,
    pub coefficient_files: Vec<PathBuf>,
    pub life_table_files: Vec<PathBuf>,
    pub alignment_options: Option<AlignOptions>,
    pub outputs: Vec<PathBuf>,
    /// SHA-256 of every input file, keyed by path.
    pub input_digests: BTreeMap<String, String>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> anyhow::Result<Self> {
        let mut inputs: Vec<&PathBuf> = config.coeffs.iter().chain(&config.life_tables).collect();
        inputs.extend(config.schedule.iter());
        inputs.extend(config.prevalence.iter());
        let mut input_digests = BTreeMap::new();
        for p in inputs {
            input_digests.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            measure: config.measure,
            gender: config.gender,
            year_labels: Vec::new(),
            coefficient_files: config.coeffs.clone(),
            life_table_files: config.life_tables.clone(),
            alignment_options: None,
            outputs: Vec::new(),
            input_digests,
            config: config.clone(),
        })
    }

    /// Fails if any recorded input has changed since the manifest was written.
    pub fn verify_inputs(&self) -> anyhow::Result<()> {
        for (path, digest) in &self.input_digests {
            let now = sha256_file(Path::new(path))?;
            if &now != digest {
                bail!(InputError(format!("input {path} changed since the manifest was written")));
            }
        }
        Ok(())
    }

    /// Writes `<out>.manifest.json` next to `out`.
    pub fn write_next_to(&self, out: &Path) -> anyhow::Result<PathBuf> {
        let path = manifest_path(out);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(path)
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

/// `out` with `suffix` appended to its file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_prefers_flags() {
        let file = RunConfig {
            measure: Some(HealthMeasure::Sah),
            from_age: Some(60),
            coeffs: vec!["a.json".into()],
            ..RunConfig::default()
        };
        let flags = RunConfig {
            from_age: Some(65),
            ..RunConfig::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.measure, Some(HealthMeasure::Sah));
        assert_eq!(merged.from_age, Some(65));
        assert_eq!(merged.coeffs, vec![PathBuf::from("a.json")]);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(manifest_path(Path::new("/tmp/out.csv")), PathBuf::from("/tmp/out.csv.manifest.json"));
    }

    #[test]
    fn exit_codes() {
        let e = anyhow!(InputError("x".into()));
        assert_eq!(exit_code(&e), EXIT_VALIDATION);
        let e = anyhow::Error::from(hle_core::Error::SingularSystem { age: 3 }).context("aligning");
        assert_eq!(exit_code(&e), EXIT_NOT_CONVERGED);
    }
}
