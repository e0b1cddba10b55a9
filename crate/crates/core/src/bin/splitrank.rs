use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splitrank::config::{DataSource, ModelEntry, RunConfig};
use splitrank::dataset::{save_dataset, Schema};
use splitrank::outcome::Family;
use splitrank::report::{emit_report, load_report, Manifest};
use splitrank::run::run_pipeline;
use splitrank::simulate::simulate_cohort;
use splitrank::Error;

#[derive(Parser)]
#[command(name = "splitrank", version, about = "Rank units by the estimated effect of a proxy treatment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `output_dir`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Observational CSV instead of a simulated cohort.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON column-role sidecar for `--data`.
    #[arg(long, requires = "data")]
    schema: Option<PathBuf>,
    /// Restrict to these models, by name or family (repeatable).
    #[arg(long = "model")]
    models: Vec<String>,
}

#[derive(Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Write observed.csv, oracle.csv and the resolved config.
    Simulate(Common),
    /// Fit, rank and check balance.
    Analyze(StageArgs),
    /// Covariate balance before and after weighting.
    Balance(StageArgs),
    /// Fit and write the ranking.
    Rank(StageArgs),
    /// Placebo treatment and synthetic confounder runs.
    Sensitivity(StageArgs),
    /// IV validation of each model's ranking on a simulated campaign.
    Validate(StageArgs),
    /// Every stage.
    Run(StageArgs),
    /// Re-render the outputs of a saved report.json.
    Report {
        /// report.json written by an earlier run.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Stage(e.to_string())
        }
    }
}

#[derive(Clone, Copy)]
struct Stages {
    ranking: bool,
    balance: bool,
    placebo: bool,
    confounding: bool,
    validation: bool,
}

const ALL: Stages = Stages {
    ranking: true,
    balance: true,
    placebo: true,
    confounding: true,
    validation: true,
};

const NONE: Stages = Stages {
    ranking: false,
    balance: false,
    placebo: false,
    confounding: false,
    validation: false,
};

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Failure::Config(e.to_string()),
            e => e.into(),
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) -> Result<(), Failure> {
    if let Some(path) = &d.data {
        cfg.data = Some(DataSource {
            path: path.clone(),
            schema: d.schema.clone(),
        });
    }
    if !d.models.is_empty() {
        let mut picked = Vec::new();
        for want in &d.models {
            let hit: Vec<ModelEntry> = cfg
                .models
                .iter()
                .filter(|m| &m.name == want || m.family.name() == want)
                .cloned()
                .collect();
            if hit.is_empty() {
                let family: Family = serde_json::from_value(serde_json::Value::String(want.clone()))
                    .map_err(|_| Failure::Config(format!("unknown model `{want}`")))?;
                picked.push(ModelEntry::new("", family, true));
            } else {
                picked.extend(hit);
            }
        }
        cfg.models = picked;
    }
    Ok(())
}

fn print_manifest(m: &Manifest) {
    // A closed stdout (e.g. piped into `head`) is not a failure.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(m).expect("manifest serializes"));
}

fn simulate(c: &Common) -> Result<(), Failure> {
    let cfg = load_config(c)?.resolved();
    cfg.sim.validate()?;
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Stage(format!("{}: {e}", dir.display())))?;
    let out = simulate_cohort::<f64>(&cfg.sim)?;
    let hash = cfg.hash();
    let comment = format!("config_hash {hash}");
    save_dataset(&out.observed, dir.join("observed.csv"), &Schema::for_dataset(&out.observed), Some(&comment))?;
    let oracle_schema = Schema::for_dataset(&out.oracle);
    save_dataset(&out.oracle, dir.join("oracle.csv"), &oracle_schema, Some(&comment))?;
    write_json(&dir.join("oracle.schema.json"), &oracle_schema)?;
    write_json(&dir.join("config.json"), &cfg)?;
    let _ = writeln!(std::io::stdout().lock(), "{}", dir.display());
    Ok(())
}

fn write_json<S: serde::Serialize>(path: &Path, v: &S) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Failure::Stage(format!("{}: {e}", path.display())))
}

fn pipeline(c: &Common, d: &DataArgs, stages: Stages) -> Result<(), Failure> {
    let mut cfg = load_config(c)?;
    apply_data(&mut cfg, d)?;
    cfg.sensitivity.placebo &= stages.placebo;
    cfg.sensitivity.confounding &= stages.confounding;
    cfg.validation.enabled &= stages.validation;
    if stages.validation && !stages.ranking && cfg.data.is_some() {
        return Err(Failure::Config("validate needs a simulated campaign; drop --data".into()));
    }
    let mut report = run_pipeline(&cfg)?;
    for m in &mut report.models {
        if !stages.ranking {
            m.ranked = None;
        }
        if !stages.balance {
            m.balance = None;
        }
    }
    let manifest = emit_report(&report, out_dir(&cfg))?;
    print_manifest(&manifest);
    let failed: Vec<String> = report
        .failed_models()
        .map(|m| {
            let e = m.error.as_ref().expect("failed");
            format!("{}: {:?} stage: {}", m.name, e.stage, e.message)
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Stage(failed.join("; ")))
    }
}

fn rerender(input: &Path, out: Option<&PathBuf>) -> Result<(), Failure> {
    let r = load_report(input)?;
    let dir = out
        .cloned()
        .unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    print_manifest(&emit_report(&r, dir)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Analyze(a) => pipeline(
            &a.common,
            &a.data,
            Stages {
                ranking: true,
                balance: true,
                ..NONE
            },
        ),
        Command::Balance(a) => pipeline(
            &a.common,
            &a.data, Stages { balance: true, ..NONE }),
        Command::Rank(a) => pipeline(
            &a.common,
            &a.data, Stages { ranking: true, ..NONE }),
        Command::Sensitivity(a) => pipeline(
            &a.common,
            &a.data,
            Stages {
                placebo: true,
                confounding: true,
                ..NONE
            },
        ),
        Command::Validate(a) => pipeline(
            &a.common,
            &a.data,
            Stages {
                validation: true,
                ..NONE
            },
        ),
        Command::Run(a) => pipeline(
            &a.common,
            &a.data, ALL),
        Command::Report { input, out } => rerender(input, out.as_ref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: stage failure: {m}");
            ExitCode::from(2)
        }
    }
}
