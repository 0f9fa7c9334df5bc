//! Run configuration: defaults, optionally overridden by a TOML file, then by flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use mrbt::gridworld::{DynamicsConfig, LayoutMode, SpaceConfig, SpaceName};
use mrbt::trainer::{AblationMode, TrainConfig};
use mrbt::verifier::VerifyConfig;
use serde::Deserialize;

use crate::CliError;

/// Grid scale of a task space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Full,
    Desk,
    Size(usize),
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            n => n
                .parse()
                .map(Scale::Size)
                .map_err(|_| format!("invalid scale `{s}` (expected full, desk or a grid size)")),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    /// `mock` or `chat`.
    pub kind: Option<String>,
    /// Spec file whose formulas the mock generator replays.
    pub mock_spec: Option<PathBuf>,
    pub max_iters: Option<usize>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub space: Option<String>,
    pub scale: Option<String>,
    pub layout: Option<LayoutMode>,
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub stochastic: Option<bool>,
    pub flip_prob: Option<f64>,
    pub verify: VerifyConfig,
    pub train: TrainConfig,
    pub generator: GeneratorSettings,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))
    }
}

/// Flags shared by most subcommands; `None` defers to the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Task space: doorkey, lockedroom or dronesupplier.
    #[arg(long, global = true)]
    pub space: Option<String>,
    /// MRBT spec file (TOML).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// full, desk, or a grid size.
    #[arg(long, global = true)]
    pub scale: Option<String>,
    /// Layout sampling: random or fixed.
    #[arg(long, global = true)]
    pub layout: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

/// Fully resolved settings.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub file: RunConfig,
    pub space: Option<SpaceName>,
    pub scale: Scale,
    pub layout: Option<LayoutMode>,
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

pub fn parse_layout(s: &str) -> Result<LayoutMode, CliError> {
    match s {
        "random" => Ok(LayoutMode::Random),
        "fixed" => Ok(LayoutMode::Fixed),
        _ => Err(CliError::Invalid(format!("invalid layout `{s}` (expected random or fixed)"))),
    }
}

pub fn parse_mode(s: &str) -> Result<AblationMode, CliError> {
    s.parse().map_err(CliError::Invalid)
}

impl Resolved {
    pub fn new(args: &CommonArgs) -> Result<Self, CliError> {
        let file = RunConfig::load(args.config.as_deref())?;
        let space = args
            .space
            .as_deref()
            .or(file.space.as_deref())
            .map(|s| s.parse::<SpaceName>().map_err(|e| CliError::Invalid(e.to_string())))
            .transpose()?;
        let scale = args
            .scale
            .as_deref()
            .or(file.scale.as_deref())
            .map(|s| s.parse::<Scale>().map_err(CliError::Invalid))
            .transpose()?
            .unwrap_or(Scale::Desk);
        let layout = match args.layout.as_deref() {
            Some(s) => Some(parse_layout(s)?),
            None => file.layout,
        };
        Ok(Self {
            space,
            scale,
            layout,
            spec: args.spec.clone().or_else(|| file.spec.clone()),
            out: args.out.clone().or_else(|| file.out.clone()),
            force: args.force,
            file,
        })
    }

    pub fn space_config(&self, name: SpaceName) -> SpaceConfig {
        let mut cfg = match self.scale {
            Scale::Full => SpaceConfig::full(name),
            Scale::Desk => SpaceConfig::desk(name),
            Scale::Size(n) => SpaceConfig::sized(name, n),
        };
        cfg.layout = self.layout;
        cfg
    }

    /// Applies the stochastic flags on top of `base`.
    pub fn dynamics(&self, base: DynamicsConfig, stochastic_flag: bool, flip_prob: Option<f64>) -> DynamicsConfig {
        let mut d = base;
        if stochastic_flag || self.file.stochastic.unwrap_or(false) {
            d.stochastic = true;
        }
        if let Some(p) = flip_prob.or(self.file.flip_prob) {
            d.flip_prob = p;
        }
        d
    }
}
