//! The `nowcast` command line: subcommands, layered settings, run
//! directories and their manifests.
//!
//! Every command writes into a fresh directory `<out-dir>/<command>-NNN`
//! and never touches its inputs. Settings are resolved as built-in
//! defaults, then the `--config` file, then flags; the manifest records
//! the resolved value and the origin of every key.

mod render;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::benchmark::BenchmarkConfig;
use crate::config::KeyValues;
use crate::error::{bail, Result};
use crate::evaluate::Baseline;

pub use render::{class_levels, encode_gray_png, outcome_levels};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "nowcast", version, about = "Radar rainfall nowcasting pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// key=value settings file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent of the run directories
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    pub out_dir: PathBuf,
    /// Extra setting, e.g. --set train.epochs=5 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub lead_minutes: Option<u32>,
    /// Target positive proportion, or `natural`
    #[arg(long)]
    pub eta: Option<String>,
    /// Rainfall channels only
    #[arg(long)]
    pub no_wind: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic rainfall and wind stacks
    Synth,
    /// Build a split, normalized sequence dataset from a stack directory
    Dataset {
        stacks: PathBuf,
        #[command(flatten)]
        args: DatasetArgs,
    },
    /// Train a U-Net on a dataset file
    Train {
        dataset: PathBuf,
        /// Re-oversample the natural training set to this proportion
        #[arg(long)]
        eta: Option<String>,
    },
    /// Score checkpoints and baselines on the test windows of a dataset
    Eval {
        dataset: PathBuf,
        /// Model checkpoint, optionally as NAME=PATH (repeatable)
        #[arg(long)]
        checkpoint: Vec<String>,
        /// persistence or optflow (repeatable)
        #[arg(long)]
        baseline: Vec<Baseline>,
        /// Must match the dataset's lead time when given
        #[arg(long)]
        lead_minutes: Option<u32>,
    },
    /// Train and score every model at each lead time of `sweep.leads`
    Leadsweep {
        stacks: PathBuf,
        #[command(flatten)]
        args: DatasetArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Dataset { .. } => "dataset",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Leadsweep { .. } => "leadsweep",
        }
    }

    /// Settings implied by the command's own flags.
    fn flag_settings(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let mut dataset_args = |a: &DatasetArgs| {
            if let Some(m) = a.lead_minutes {
                kv.set("dataset.lead_minutes", m);
            }
            if let Some(e) = &a.eta {
                kv.set("dataset.eta", e);
            }
            if a.no_wind {
                kv.set("dataset.use_wind", false);
            }
        };
        match self {
            Command::Synth => {}
            Command::Dataset { args, .. } | Command::Leadsweep { args, .. } => dataset_args(args),
            Command::Train { eta, .. } => {
                if let Some(e) = eta {
                    kv.set("dataset.eta", e);
                }
            }
            Command::Eval { lead_minutes, .. } => {
                if let Some(m) = lead_minutes {
                    kv.set("dataset.lead_minutes", m);
                }
            }
        }
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Built-in defaults of every setting the commands read.
pub fn default_settings() -> KeyValues {
    let mut kv = BenchmarkConfig::default().to_kv();
    kv.set("dataset.use_wind", true);
    kv.set("train.compare_eta", "natural");
    kv.set("eval.maps", 4);
    kv.set("sweep.leads", "10,20,30,40,50,60");
    kv
}

/// Resolved settings with the origin of each value.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    kv: KeyValues,
    sources: BTreeMap<String, Source>,
}

impl Settings {
    pub fn from_defaults(defaults: KeyValues) -> Self {
        let sources = defaults.iter().map(|(k, _)| (k.to_string(), Source::Default)).collect();
        Settings { kv: defaults, sources }
    }

    pub fn layer(&mut self, kv: &KeyValues, source: Source) {
        for (k, v) in kv.iter() {
            self.kv.set(k, v);
            self.sources.insert(k.to_string(), source);
        }
    }

    /// Defaults, then the config file, then `--set`, `--seed` and the
    /// command's flags.
    pub fn resolve(common: &CommonArgs, command: &Command) -> Result<Self> {
        let mut s = Settings::from_defaults(default_settings());
        if let Some(path) = &common.config {
            s.layer(&KeyValues::load(path)?, Source::File);
        }
        let mut flags = KeyValues::new();
        for item in &common.set {
            let Some((k, v)) = item.split_once('=') else {
                bail!(Config, "--set expects KEY=VALUE, got {item:?}");
            };
            flags.set(k.trim(), v.trim());
        }
        if let Some(seed) = common.seed {
            flags.set("seed", seed);
        }
        flags.merge(&command.flag_settings());
        s.layer(&flags, Source::Flag);
        Ok(s)
    }

    pub fn kv(&self) -> &KeyValues {
        &self.kv
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.sources.get(key).copied()
    }

    pub fn seed(&self) -> Result<u64> {
        self.kv.get_or("seed", 0)
    }
}

/// What a run did, written as `manifest.txt` next to its outputs.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    /// File names inside the run directory.
    pub outputs: Vec<String>,
    pub settings: Settings,
    /// Command-specific facts (split sizes, best epoch, schedule...).
    pub facts: KeyValues,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut kv = KeyValues::new();
        kv.set("command", &self.command);
        kv.set("version", &self.version);
        kv.set("seed", self.seed);
        for (i, p) in self.inputs.iter().enumerate() {
            kv.set(&format!("input.{i}"), p.display());
        }
        for (i, p) in self.outputs.iter().enumerate() {
            kv.set(&format!("output.{i:02}"), p);
        }
        kv.set("started_unix", self.started_unix);
        kv.set("wall_clock_seconds", format!("{:.3}", self.wall_clock_seconds));
        for (k, v) in self.settings.kv.iter() {
            kv.set(&format!("config.{k}"), v);
            let src = self.settings.source(k).unwrap_or(Source::Default);
            kv.set(&format!("source.{k}"), src);
        }
        for (k, v) in self.facts.iter() {
            kv.set(&format!("fact.{k}"), v);
        }
        kv.render()
    }
}

/// Creates `<parent>/<command>-NNN` with the first unused index.
pub fn fresh_run_dir(parent: &Path, command: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(parent)?;
    for i in 0..100_000 {
        let dir = parent.join(format!("{command}-{i:03}"));
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(std::io::Error::other(format!("no free run directory under {}", parent.display())).into())
}

/// An open run directory collecting outputs for its manifest.
pub(crate) struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    start: Instant,
}

impl Run {
    fn open(parent: &Path, command: &str, settings: Settings, inputs: Vec<PathBuf>) -> Result<Self> {
        let seed = settings.seed()?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let dir = fresh_run_dir(parent, command)?;
        log::info!("{command}: writing to {}", dir.display());
        Ok(Run {
            dir,
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                inputs,
                outputs: Vec::new(),
                settings,
                facts: KeyValues::new(),
                started_unix,
                wall_clock_seconds: 0.0,
            },
            start: Instant::now(),
        })
    }

    fn kv(&self) -> &KeyValues {
        self.manifest.settings.kv()
    }

    fn settings(&self) -> &Settings {
        &self.manifest.settings
    }

    fn seed(&self) -> u64 {
        self.manifest.seed
    }

    fn fact(&mut self, key: &str, value: impl fmt::Display) {
        self.manifest.facts.set(key, value);
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.manifest.wall_clock_seconds = self.start.elapsed().as_secs_f64();
        std::fs::write(self.dir.join(MANIFEST_FILE), self.manifest.render())?;
        Ok(self.dir)
    }
}

/// Runs a parsed command line and returns the run directory.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let settings = Settings::resolve(&cli.common, &cli.command)?;
    let out = &cli.common.out_dir;
    match &cli.command {
        Command::Synth => run::synth(Run::open(out, "synth", settings, vec![])?),
        Command::Dataset { stacks, .. } => run::dataset(Run::open(out, "dataset", settings, vec![stacks.clone()])?),
        Command::Train { dataset, .. } => run::train(Run::open(out, "train", settings, vec![dataset.clone()])?),
        Command::Eval { dataset, checkpoint, baseline, .. } => {
            let models = run::parse_checkpoints(checkpoint)?;
            if models.is_empty() && baseline.is_empty() {
                bail!(Config, "eval needs at least one --checkpoint or --baseline");
            }
            let mut inputs = vec![dataset.clone()];
            inputs.extend(models.iter().map(|(_, p)| p.clone()));
            run::eval(Run::open(out, "eval", settings, inputs)?, &models, baseline)
        }
        Command::Leadsweep { stacks, .. } => {
            run::leadsweep(Run::open(out, "leadsweep", settings, vec![stacks.clone()])?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("nowcast").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "dataset.lead_minutes=20\ntrain.epochs=3\nseed=4\n").unwrap();
        let cli = parse(&["dataset", "x", "--config", cfg.to_str().unwrap(), "--lead-minutes", "40", "--no-wind"]);
        let s = Settings::resolve(&cli.common, &cli.command).unwrap();
        assert_eq!(s.kv().get_str("dataset.lead_minutes"), Some("40"));
        assert_eq!(s.source("dataset.lead_minutes"), Some(Source::Flag));
        assert_eq!(s.kv().get_str("train.epochs"), Some("3"));
        assert_eq!(s.source("train.epochs"), Some(Source::File));
        assert_eq!(s.kv().get_str("dataset.use_wind"), Some("false"));
        assert_eq!(s.source("of.alpha"), Some(Source::Default));
        assert_eq!(s.seed().unwrap(), 4);
        let cli = parse(&["synth", "--config", cfg.to_str().unwrap(), "--seed", "9"]);
        assert_eq!(Settings::resolve(&cli.common, &cli.command).unwrap().seed().unwrap(), 9);
    }

    #[test]
    fn malformed_set_is_a_config_error() {
        let cli = parse(&["synth", "--set", "novalue"]);
        let err = Settings::resolve(&cli.common, &cli.command).unwrap_err();
        assert_eq!(err.category().as_str(), "config");
    }

    #[test]
    fn run_dirs_are_fresh() {
        let dir = tempfile::tempdir().unwrap();
        let a = fresh_run_dir(dir.path(), "synth").unwrap();
        let b = fresh_run_dir(dir.path(), "synth").unwrap();
        assert_ne!(a, b);
        assert!(a.ends_with("synth-000") && b.ends_with("synth-001"));
    }

    #[test]
    fn manifest_records_sources() {
        let cli = parse(&["train", "d.pds", "--eta", "natural"]);
        let settings = Settings::resolve(&cli.common, &cli.command).unwrap();
        let m = RunManifest {
            command: "train".into(),
            version: "0".into(),
            seed: 0,
            inputs: vec!["d.pds".into()],
            outputs: vec!["model.pnc".into()],
            settings,
            facts: KeyValues::new(),
            started_unix: 0,
            wall_clock_seconds: 1.0,
        };
        let kv = KeyValues::parse(&m.render()).unwrap();
        assert_eq!(kv.get_str("config.dataset.eta"), Some("natural"));
        assert_eq!(kv.get_str("source.dataset.eta"), Some("flag"));
        assert_eq!(kv.get_str("source.train.epochs"), Some("default"));
        assert_eq!(kv.get_str("output.00"), Some("model.pnc"));
    }
}
