//! Command-line interface of the `gnssr` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand};

use super::{
    cmd_convert, cmd_daily, cmd_report, cmd_study, cmd_synth, cmd_train, cmd_validate, load_config, DailyRequest, Layout,
    PipelineError, DATA_ROOT_ENV,
};
use crate::conditioning::Window;
use crate::synthgen::WorldConfig;

#[derive(Debug, Parser)]
#[command(name = "gnssr", version, about = "GNSS-R soil-moisture retrieval pipeline")]
pub struct Cli {
    /// Data root; relative config paths resolve against it.
    #[arg(long, env = DATA_ROOT_ENV, default_value = ".", global = true)]
    pub data_root: PathBuf,
    /// Config file (default: <data-root>/gnssr.toml when present, else built-in defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shortcut for `--set version=...`.
    #[arg(long, global = true)]
    pub product_version: Option<String>,
    /// Shortcut for `--set workers=...`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Shortcut for `--set backfill_days=...`.
    #[arg(long, global = true)]
    pub backfill_days: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world into the lake.
    Synth(SynthArgs),
    /// Produce L2 and L3 products for a day range.
    Daily(DailyArgs),
    /// Train the network and write the weight file.
    Train,
    /// Run an ablation, noise-sensitivity or ensemble study.
    Study(StudyArgs),
    /// Score L2 products against in-situ sites.
    Validate(ValidateArgs),
    /// Render study results.
    Report(ReportArgs),
    /// Print a container file as netCDF CDL.
    Convert(ConvertArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// World config (TOML); defaults otherwise.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Start from the compact test world instead of the default one.
    #[arg(long)]
    pub small: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of days from the world's first day.
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long, default_value_t = 20)]
    pub sites: usize,
    /// In-situ probe noise std, m³/m³.
    #[arg(long, default_value_t = 0.02)]
    pub site_noise: f64,
}

#[derive(Debug, Args)]
pub struct DailyArgs {
    /// First day (YYYY-MM-DD).
    #[arg(long)]
    pub start: NaiveDate,
    /// Last day, inclusive (default: start).
    #[arg(long)]
    pub end: Option<NaiveDate>,
    /// Day anchoring the backfill window (default: end).
    #[arg(long)]
    pub as_of: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Study definition (TOML).
    #[arg(long)]
    pub definition: PathBuf,
    /// Result name (default: definition file stem).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// First day (default: validation split start).
    #[arg(long, requires = "end")]
    pub start: Option<NaiveDate>,
    /// Last day, inclusive.
    #[arg(long, requires = "start")]
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of study results (default: the studies path).
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    /// Output file (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn config_error(msg: String) -> PipelineError {
    PipelineError::Config(msg)
}

/// Executes a parsed command line, writing results to `out`. Returns the
/// process exit code: 0 success, 1 partial or failed run, 2 configuration error.
pub fn run(cli: Cli, out: &mut dyn Write) -> u8 {
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gnssr: {e:#}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<u8, PipelineError> {
    let mut overrides = cli.overrides.clone();
    if let Some(v) = &cli.product_version {
        overrides.push(format!("version=\"{v}\""));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    if let Some(b) = cli.backfill_days {
        overrides.push(format!("backfill_days={b}"));
    }
    let cfg = load_config(&cli.data_root, cli.config.as_deref(), &overrides)?;
    let layout = Layout::new(&cli.data_root, &cfg);
    let io = |e: std::io::Error| PipelineError::Run(e.into());
    match cli.command {
        Command::Synth(a) => {
            let mut world = match &a.world {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?
                }
                None if a.small => WorldConfig::small(1),
                None => WorldConfig::default(),
            };
            if let Some(s) = a.seed {
                world.seed = s;
            }
            if let Some(d) = a.days {
                if d == 0 {
                    return Err(config_error("--days must be at least 1".into()));
                }
                world.last_day = world.first_day + Duration::days(d as i64 - 1);
            }
            let r = cmd_synth(&layout, &world, a.sites, a.site_noise)?;
            writeln!(out, "{}", json(&r)).map_err(io)?;
            Ok(0)
        }
        Command::Daily(a) => {
            let req = DailyRequest { start: a.start, end: a.end.unwrap_or(a.start), as_of: a.as_of };
            let r = cmd_daily(&cfg, &layout, req)?;
            for d in &r.days {
                let err = d.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default();
                writeln!(out, "{} {:?} products={} written={}{err}", d.day, d.state, d.products.len(), d.products.iter().filter(|f| f.outcome != "unchanged").count())
                    .map_err(io)?;
            }
            Ok(r.exit_code())
        }
        Command::Train => {
            let r = cmd_train(&cfg, &layout)?;
            writeln!(out, "{}", json(&r)).map_err(io)?;
            Ok(0)
        }
        Command::Study(a) => {
            let r = cmd_study(&cfg, &layout, &a.definition, a.name.as_deref())?;
            writeln!(out, "{}", r.to_json()).map_err(io)?;
            Ok(0)
        }
        Command::Validate(a) => {
            let window = match (a.start, a.end) {
                (Some(s), Some(e)) => Some(Window::new(s, e.succ_opt().expect("date in range"))),
                _ => None,
            };
            let r = cmd_validate(&cfg, &layout, window)?;
            writeln!(out, "{}", json(&r)).map_err(io)?;
            Ok(0)
        }
        Command::Report(a) => {
            let dir = a.dir.unwrap_or_else(|| layout.studies.clone());
            let r = cmd_report(&dir)?;
            write!(out, "{}", r.text).map_err(io)?;
            Ok(0)
        }
        Command::Convert(a) => {
            let cdl = cmd_convert(&a.input)?;
            match a.output {
                Some(p) => write_file(&p, &cdl)?,
                None => write!(out, "{cdl}").map_err(io)?,
            }
            Ok(0)
        }
        Command::Config => {
            write!(out, "{}", cfg.to_toml()).map_err(io)?;
            Ok(0)
        }
    }
}

fn write_file(p: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(p, text).map_err(|e| PipelineError::Run(anyhow::anyhow!("writing {}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_daily_with_global_flags() {
        let c = Cli::try_parse_from(["gnssr", "daily", "--start", "2020-06-01", "--end", "2020-06-03", "--set", "train.epochs=2", "--workers", "2"])
            .unwrap();
        assert_eq!(c.overrides, vec!["train.epochs=2"]);
        assert_eq!(c.workers, Some(2));
        match c.command {
            Command::Daily(a) => {
                assert_eq!(a.start, NaiveDate::from_ymd_opt(2020, 6, 1).unwrap());
                assert_eq!(a.end, NaiveDate::from_ymd_opt(2020, 6, 3));
                assert_eq!(a.as_of, None);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["gnssr", "daily", "--start", "June"]).is_err());
    }

    #[test]
    fn config_errors_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cli::try_parse_from(["gnssr", "--data-root", dir.path().to_str().unwrap(), "--product-version", "1.0", "config"]).unwrap();
        assert_eq!(run(c, &mut Vec::new()), 2);
        let c = Cli::try_parse_from(["gnssr", "--data-root", dir.path().to_str().unwrap(), "config"]).unwrap();
        let mut out = Vec::new();
        assert_eq!(run(c, &mut out), 0);
        assert!(String::from_utf8(out).unwrap().contains("version = \"v1.0\""));
    }

    #[test]
    fn missing_weights_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_str().unwrap();
        let c = Cli::try_parse_from(["gnssr", "--data-root", root, "daily", "--start", "2020-06-01"]).unwrap();
        assert_eq!(run(c, &mut Vec::new()), 2);
    }
}
