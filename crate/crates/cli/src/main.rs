use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hle_cli::*;
use hle_core::{Gender, HealthMeasure};

#[derive(Parser)]
#[command(name = "hle", version, about = "Healthy life expectancy from ordered-probit transition matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// LE and HLE from the probit matrices as estimated
    Unadjusted(Flags),
    /// Align the matrices to life tables, one output row per table
    Align(Flags),
    /// Prevalence-based HLE from a life-table schedule
    Sullivan(Flags),
    /// Monte Carlo check of the analytic results
    Simcheck(Flags),
    /// Write the transition matrices (and optionally N/Z tensors) as CSV
    ExportMatrices(Flags),
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// JSON file with any of these settings; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(HealthMeasure))]
    measure: Option<HealthMeasure>,
    #[arg(long, value_parser = clap::value_parser!(Gender))]
    gender: Option<Gender>,
    /// Coefficient file; repeat for several. Defaults to the bundled UK tables
    #[arg(long)]
    coeffs: Vec<PathBuf>,
    /// Life table CSV; repeat for several years
    #[arg(long = "life-table")]
    life_tables: Vec<PathBuf>,
    #[arg(long)]
    from_age: Option<u32>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    allow_rank_deficient: bool,
    /// Add half a year for the year of reaching the starting age
    #[arg(long)]
    half_year_correction: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    agents: Option<usize>,
    /// `age,l,e` schedule for `sullivan`
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// `age_from,age_to,ill_health_rate` file for `sullivan`
    #[arg(long)]
    prevalence: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the occupancy and expected-years tensors (`export-matrices`)
    #[arg(long)]
    tensor: Option<PathBuf>,
}

impl Flags {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let from_flags = RunConfig {
            measure: self.measure,
            gender: self.gender,
            coeffs: self.coeffs.clone(),
            life_tables: self.life_tables.clone(),
            from_age: self.from_age,
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            damping: self.damping,
            allow_rank_deficient: self.allow_rank_deficient.then_some(true),
            half_year_correction: self.half_year_correction.then_some(true),
            seed: self.seed,
            agents: self.agents,
            schedule: self.schedule.clone(),
            prevalence: self.prevalence.clone(),
            out: self.out.clone(),
            tensor: self.tensor.clone(),
        };
        Ok(match &self.config {
            Some(path) => RunConfig::load(path)?.overlay(from_flags),
            None => from_flags,
        })
    }
}

/// Opens `--out` or stdout.
fn sink(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn finish(mut manifest: RunManifest, cfg: &RunConfig, extra: Vec<PathBuf>) -> anyhow::Result<()> {
    if let Some(out) = &cfg.out {
        manifest.outputs.push(out.clone());
        manifest.outputs.extend(extra);
        manifest.write_next_to(out)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let (name, flags) = match &cli.command {
        Command::Unadjusted(f) => ("unadjusted", f),
        Command::Align(f) => ("align", f),
        Command::Sullivan(f) => ("sullivan", f),
        Command::Simcheck(f) => ("simcheck", f),
        Command::ExportMatrices(f) => ("export-matrices", f),
    };
    let cfg = flags.resolve()?;
    let mut manifest = RunManifest::new(name, &cfg)?;

    match cli.command {
        Command::Unadjusted(_) => {
            let row = cmd_unadjusted(cfg.measure()?, cfg.gender()?, &cfg.coeffs, cfg.from_age(), cfg.half_year())?;
            write_table_rows(sink(&cfg.out)?, &[row])?;
            finish(manifest, &cfg, vec![])?;
            Ok(0)
        }
        Command::Align(_) => {
            let options = cfg.align_options();
            let runs = cmd_align_and_report(
                cfg.measure()?,
                cfg.gender()?,
                &cfg.coeffs,
                &cfg.life_tables,
                &options,
                cfg.from_age(),
                cfg.half_year(),
            )?;
            let rows: Vec<TableRow> = runs.iter().map(|r| r.row.clone()).collect();
            write_table_rows(sink(&cfg.out)?, &rows)?;
            let reports: Vec<_> = runs
                .iter()
                .map(|r| serde_json::json!({
                    "life_table": r.life_table,
                    "label": r.row.label,
                    "target_life_expectancy_years": r.target_life_expectancy_years,
                    "report": r.report,
                }))
                .collect();
            let mut extra = vec![];
            match &cfg.out {
                Some(out) => {
                    let path = sibling(out, "report.json");
                    serde_json::to_writer_pretty(File::create(&path)?, &reports)?;
                    extra.push(path);
                }
                None => eprintln!("{}", serde_json::to_string_pretty(&reports)?),
            }
            manifest.year_labels = rows.iter().map(|r| r.label.clone()).collect();
            manifest.alignment_options = Some(options);
            finish(manifest, &cfg, extra)?;
            if runs.iter().any(|r| !r.report.converged) {
                eprintln!("alignment did not converge for at least one life table");
                return Ok(EXIT_NOT_CONVERGED);
            }
            Ok(0)
        }
        Command::Sullivan(_) => {
            let missing = |f: &str| anyhow::Error::new(InputError(format!("sullivan needs --{f}")));
            let schedule = cfg.schedule.clone().ok_or_else(|| missing("schedule"))?;
            let prevalence = cfg.prevalence.clone().ok_or_else(|| missing("prevalence"))?;
            let row = cmd_sullivan(&schedule, &prevalence, cfg.from_age())?;
            let mut wtr = csv::Writer::from_writer(sink(&cfg.out)?);
            wtr.serialize(&row)?;
            wtr.flush()?;
            finish(manifest, &cfg, vec![])?;
            Ok(0)
        }
        Command::Simcheck(_) => {
            let out = cmd_simcheck(&cfg)?;
            let mut w = sink(&cfg.out)?;
            serde_json::to_writer_pretty(&mut w, &out)?;
            writeln!(w)?;
            manifest.alignment_options = (!cfg.life_tables.is_empty()).then(|| cfg.align_options());
            finish(manifest, &cfg, vec![])?;
            if !out.passed {
                for c in out.checks.iter().filter(|c| !c.passed) {
                    eprintln!("{}: analytic {} empirical {} (z = {:.2})", c.quantity, c.analytic, c.empirical, c.z);
                }
                return Ok(EXIT_ORACLE_FAILED);
            }
            Ok(0)
        }
        Command::ExportMatrices(_) => {
            let (matrices, report) = cmd_export_matrices(&cfg)?;
            write_matrices(sink(&cfg.out)?, &matrices)?;
            let mut extra = vec![];
            if let Some(t) = &cfg.tensor {
                write_tensor(t, &matrices)?;
                extra.push(t.clone());
            }
            if report.is_some() {
                manifest.alignment_options = Some(cfg.align_options());
            }
            finish(manifest, &cfg, extra)?;
            match report {
                Some(r) if !r.converged => Ok(EXIT_NOT_CONVERGED),
                _ => Ok(0),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
