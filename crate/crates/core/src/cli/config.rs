use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::appearance::AppearanceConfig;
use crate::correspond::{DEFAULT_MAX_VIEWS, DEFAULT_TOP_K};
use crate::error::{Error, Result};
use crate::register::{AlignConfig, IcpConfig, IterSchedule, RansacConfig, ShapeSolverConfig};
use crate::synth::{DegradeConfig, SynthConfig};
use crate::viewsel::ViewSelectConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Index pairs between proxy primitives and the partial primitives derived from them.
    Exact,
    /// Index pairs against the planted transform of the proxy means, free of jitter.
    ExactNoiseless,
    /// Rendered-descriptor matching lifted through depth.
    Render,
    /// Fixed pairs from a correspondence file.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub top_k: usize,
    /// Positional-encoding octaves of the rendered descriptors.
    pub octaves: usize,
    pub path: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Exact,
            top_k: DEFAULT_TOP_K,
            octaves: 4,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub max_views: usize,
    pub shape_ransac_filter: bool,
    /// Skip the ICP stage and start iterative alignment from the raw proxy.
    pub skip_coarse: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            max_views: DEFAULT_MAX_VIEWS,
            shape_ransac_filter: false,
            skip_coarse: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Write a color render of the evaluated object per test view.
    pub save_renders: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub synth: SynthConfig,
    pub degrade: DegradeConfig,
    pub icp: IcpConfig,
    pub ransac: RansacConfig,
    pub shape: ShapeSolverConfig,
    pub schedule: IterSchedule,
    pub alignment: AlignmentConfig,
    pub provider: ProviderConfig,
    pub appearance: AppearanceConfig,
    pub view_select: ViewSelectConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            synth: SynthConfig::default(),
            degrade: DegradeConfig::default(),
            icp: IcpConfig::default(),
            ransac: RansacConfig::default(),
            shape: ShapeSolverConfig::default(),
            schedule: IterSchedule::default(),
            alignment: AlignmentConfig::default(),
            provider: ProviderConfig::default(),
            appearance: AppearanceConfig::default(),
            view_select: ViewSelectConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            icp: self.icp,
            ransac: self.ransac,
            shape: self.shape,
            schedule: self.schedule.clone(),
            max_views: self.alignment.max_views,
            shape_ransac_filter: self.alignment.shape_ransac_filter,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Validation(format!(
                "config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.synth.validate()?;
        self.degrade.validate()?;
        self.align_config().validate()?;
        self.appearance.validate()?;
        self.view_select.validate()?;
        if self.provider.top_k == 0 {
            return Err(Error::Validation("provider.top_k must be ≥ 1".into()));
        }
        if self.provider.kind == ProviderKind::File && self.provider.path.is_none() {
            return Err(Error::Validation("provider.kind = file needs provider.path".into()));
        }
        Ok(())
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config document, or the defaults when `path` is `None`, then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let v: Value = crate::io::read_json(p)?;
                serde_json::to_value(Self::parse_unvalidated(v)?)?
            }
            None => serde_json::to_value(Self::default())?,
        };
        let mut v = base;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    fn parse_unvalidated(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Validation(format!("config: {e}")))
    }
}

/// Applies `dotted.key=value`; the value is parsed as JSON and falls back to a plain string.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override {spec:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Validation(format!("override {key}: {} is not a table", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Validation(format!("override {key}: unknown key {part:?}")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(Error::Validation("empty override key".into()))
}
