//! Layered settings: command-line flags, then `RESMAP_*` environment
//! variables (both resolved by clap), then the TOML config file, then the
//! built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Deserialize;

use resmap_core::mapping::{Alpha, Anchor, DPolicy, MapOptions, Supplies};
use resmap_core::{Design, Fidelity, OpAmpLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignArg {
    Preliminary,
    Proposed,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Preliminary => Design::Preliminary,
            DesignArg::Proposed => Design::Proposed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorArg {
    First,
    LargestRhs,
}

impl From<AnchorArg> for Anchor {
    fn from(a: AnchorArg) -> Self {
        match a {
            AnchorArg::First => Anchor::First,
            AnchorArg::LargestRhs => Anchor::LargestRhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    Text,
    Csv,
    Json,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub design: Option<DesignArg>,
    pub fidelity: Option<String>,
    pub alpha: Option<f64>,
    pub alpha_target: Option<f64>,
    pub beta: Option<f64>,
    pub anchor: Option<AnchorArg>,
    pub supply: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub timeout: Option<f64>,
    pub opamp_library: Option<PathBuf>,
    pub emit: Option<Emit>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cli: cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("cli: invalid config {}", path.display()))
    }
}

/// Settings shared by the subcommands that map a system, after layering.
#[derive(Debug, Clone)]
pub struct Settings {
    pub design: Design,
    pub fidelity: Fidelity,
    pub map: MapOptions,
    pub t_end: Option<f64>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub timeout: Option<f64>,
    pub emit: Emit,
    pub library: OpAmpLibrary,
}

/// Raw values from flags or environment, before the config file is applied.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub design: Option<DesignArg>,
    pub fidelity: Option<String>,
    pub alpha: Option<f64>,
    pub alpha_target: Option<f64>,
    pub beta: Option<f64>,
    pub anchor: Option<AnchorArg>,
    pub supply: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub timeout: Option<f64>,
    pub opamp_library: Option<PathBuf>,
    pub emit: Option<Emit>,
}

pub const DEFAULT_FIDELITY: &str = "ad712";

impl Overrides {
    pub fn resolve(self, file: FileConfig) -> Result<Settings> {
        let design: Design = self.design.or(file.design).unwrap_or(DesignArg::Proposed).into();

        let mut library = OpAmpLibrary::default();
        if let Some(path) = self.opamp_library.or(file.opamp_library) {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("cli: cannot read amplifier library {}", path.display()))?;
            library.extend_from_json(&text)?;
        }
        let fidelity_name = self
            .fidelity
            .or(file.fidelity)
            .unwrap_or_else(|| DEFAULT_FIDELITY.to_string());
        let fidelity = parse_fidelity(&fidelity_name, &library)?;

        let mut map = MapOptions::default();
        match (self.alpha.or(file.alpha), self.alpha_target.or(file.alpha_target)) {
            (Some(a), _) => {
                if !(a > 0.0 && a.is_finite()) {
                    bail!("cli: --alpha must be positive, got {a}");
                }
                map.alpha = Alpha::Fixed(a);
            }
            (None, Some(t)) => {
                if !(t > 0.0 && t.is_finite()) {
                    bail!("cli: --alpha-target must be positive, got {t}");
                }
                map.alpha = Alpha::TargetMax(t);
            }
            (None, None) => {}
        }
        if let Some(beta) = self.beta.or(file.beta) {
            if design == Design::Preliminary {
                bail!("cli: --beta selects a scaled-identity D and needs the proposed design");
            }
            map.d_policy = DPolicy::ScaledIdentity(beta);
        }
        if let Some(a) = self.anchor.or(file.anchor) {
            map.anchor = a.into();
        }
        if let Some(v) = self.supply.or(file.supply) {
            if !(v > 0.0 && v.is_finite()) {
                bail!("cli: --supply must be a positive voltage, got {v}");
            }
            map.supplies = Supplies::symmetric(v);
        }
        let t_end = self.t_end.or(file.t_end);
        if let Some(t) = t_end {
            if !(t > 0.0 && t.is_finite()) {
                bail!("cli: --t-end must be positive, got {t}");
            }
        }
        let timeout = self.timeout.or(file.timeout);
        if let Some(t) = timeout {
            if !(t > 0.0 && t.is_finite()) {
                bail!("cli: --timeout must be positive, got {t}");
            }
        }
        let workers = self.workers.or(file.workers);
        if workers == Some(0) {
            bail!("cli: --workers must be at least 1");
        }
        Ok(Settings {
            design,
            fidelity,
            map,
            t_end,
            seed: self.seed.or(file.seed).unwrap_or(0),
            workers,
            timeout,
            emit: self.emit.or(file.emit).unwrap_or(Emit::Text),
            library,
        })
    }
}

pub fn parse_fidelity(name: &str, library: &OpAmpLibrary) -> Result<Fidelity> {
    if name.eq_ignore_ascii_case("ideal") {
        return Ok(Fidelity::Ideal);
    }
    match library.get(name) {
        Some(m) => Ok(Fidelity::Dynamic(m.clone())),
        None => bail!(
            "cli: unknown fidelity {name:?}; expected ideal or one of {}",
            library.names().join(", ")
        ),
    }
}
