//! The pipeline configuration file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use aqgwr::eval::SplitSpec;
use aqgwr::grid::{GridSpec, LayerFormat};
use aqgwr::ingest::{Atmosphere, IngestSchema, Layout};
use aqgwr::{BoundingBox, Channel, CovariateSet, KernelKind, KernelSpec, ModelFamily, ModelKind, Projection, RenameMap, SynthSpec, WlsOptions};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Output root; relative paths resolve against the config file.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Panel directory read by fit, validate and grid; `<out_dir>/panel`
    /// when absent.
    #[serde(default)]
    pub panel_dir: Option<PathBuf>,
    #[serde(default)]
    pub covariates: CovariateSet,
    #[serde(default)]
    pub ingest: Option<IngestConfig>,
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Covers the whole panel period when absent.
    #[serde(default)]
    pub split: Option<SplitSpec>,
    /// Sensor id to reference station id; overrides the default typology
    /// pairing of the non-collocated model.
    #[serde(default)]
    pub pairing: BTreeMap<String, String>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub origin_lon: f64,
    pub origin_lat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_kind")]
    pub kind: KernelKind,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub wrap_hours: bool,
}

fn default_kind() -> KernelKind {
    KernelKind::Gaussian
}
fn default_bandwidth() -> f64 {
    1460.0
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            bandwidth: default_bandwidth(),
            wrap_hours: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "all_families")]
    pub models: Vec<ModelFamily>,
    #[serde(default)]
    pub jitter: bool,
    #[serde(default = "default_condition")]
    pub max_condition: f64,
}

fn all_families() -> Vec<ModelFamily> {
    ModelFamily::ALL.to_vec()
}
fn default_condition() -> f64 {
    aqgwr::gwr::MAX_CONDITION
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            models: all_families(),
            jitter: false,
            max_condition: default_condition(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default)]
    pub bandwidth_search: bool,
    /// Candidate bandwidths in meters; 200 to 5000 by 20 when absent.
    #[serde(default)]
    pub candidates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub bbox: BoundingBox,
    pub cell_size: f64,
    #[serde(default)]
    pub coefficients: Option<Vec<String>>,
    #[serde(default)]
    pub hour: Option<u32>,
    #[serde(default = "default_format")]
    pub format: LayerFormat,
    #[serde(default = "default_grid_model")]
    pub model: ModelKind,
}

fn default_format() -> LayerFormat {
    LayerFormat::Delimited
}
fn default_grid_model() -> ModelKind {
    ModelKind::Sgwr
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, CliError> {
        let mut g = GridSpec::new(self.bbox, self.cell_size)?;
        g.coefficients = self.coefficients.clone();
        g.hour = self.hour;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub spec: SynthSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceUnit {
    Ppb,
    Ugm3,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RenameConfig {
    /// `"antwerp"` or `"none"`.
    Preset(String),
    Table(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default = "default_layout")]
    pub layout: Layout,
    pub device_column: String,
    pub timestamp_column: String,
    #[serde(default)]
    pub timestamp_format: Option<String>,
    #[serde(default)]
    pub flag_column: Option<String>,
    pub channels: BTreeMap<String, Channel>,
}

fn default_layout() -> Layout {
    Layout::Wide
}

impl SchemaConfig {
    pub fn schema(&self) -> IngestSchema {
        IngestSchema {
            layout: self.layout.clone(),
            device_column: self.device_column.clone(),
            timestamp_column: self.timestamp_column.clone(),
            timestamp_format: self.timestamp_format.clone(),
            flag_column: self.flag_column.clone(),
            channels: self.channels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    /// Raw minute files; command-line paths replace this list.
    #[serde(default)]
    pub raw: Vec<PathBuf>,
    /// Site registry with `id`, `x,y` or `lon,lat`, `role`, `typology` and
    /// `reference` columns.
    pub sites: PathBuf,
    pub schema: SchemaConfig,
    /// Flag values whose records are removed.
    #[serde(default)]
    pub flags: BTreeSet<u16>,
    #[serde(default)]
    pub rename: Option<RenameConfig>,
    /// Device ids kept as is when renaming (typically reference stations).
    #[serde(default)]
    pub keep: BTreeSet<String>,
    #[serde(default = "default_unit")]
    pub reference_unit: ReferenceUnit,
    #[serde(default)]
    pub atmosphere: Atmosphere,
}

fn default_unit() -> ReferenceUnit {
    ReferenceUnit::Ppb
}

impl IngestConfig {
    pub fn rename_map(&self) -> Result<Option<RenameMap>, CliError> {
        match &self.rename {
            None => Ok(None),
            Some(RenameConfig::Preset(p)) if p == "none" => Ok(None),
            Some(RenameConfig::Preset(p)) if p == "antwerp" => Ok(Some(RenameMap::antwerp())),
            Some(RenameConfig::Preset(p)) => Err(CliError::Config(format!("unknown rename preset `{p}`"))),
            Some(RenameConfig::Table(t)) => Ok(Some(RenameMap::new(t.iter().map(|(a, b)| (a.clone(), b.clone())))?)),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub panel_dir: Option<PathBuf>,
    pub kernel: Option<KernelKind>,
    pub bandwidth: Option<f64>,
    pub models: Option<Vec<ModelFamily>>,
    pub bandwidth_search: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, resolves relative paths against the file's directory, applies
    /// the overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(p) = &mut self.panel_dir {
            fix(p);
        }
        if let Some(ing) = &mut self.ingest {
            fix(&mut ing.sites);
            ing.raw.iter_mut().for_each(fix);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(d) = &o.panel_dir {
            self.panel_dir = Some(d.clone());
        }
        if let Some(k) = o.kernel {
            self.kernel.kind = k;
        }
        if let Some(b) = o.bandwidth {
            self.kernel.bandwidth = b;
        }
        if let Some(m) = &o.models {
            self.fit.models = m.clone();
        }
        if o.bandwidth_search {
            self.validate.bandwidth_search = true;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.kernel_spec()?;
        if self.fit.models.is_empty() {
            return Err(CliError::Config("no model families selected".into()));
        }
        if !(self.fit.max_condition > 1.0) {
            return Err(CliError::Config("max_condition must exceed 1".into()));
        }
        if let Some(s) = &self.split {
            s.validate()?;
        }
        if let Some(c) = &self.validate.candidates {
            if c.is_empty() || c.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                return Err(CliError::Config("candidate bandwidths must be positive".into()));
            }
        }
        if let Some(g) = &self.grid {
            g.spec()?;
        }
        if let Some(s) = &self.synth {
            s.spec.validate()?;
        }
        if let Some(p) = &self.projection {
            Projection::new(p.origin_lon, p.origin_lat)?;
        }
        if let Some(i) = &self.ingest {
            i.rename_map()?;
            if i.schema.channels.is_empty() {
                return Err(CliError::Config("the ingest schema maps no channels".into()));
            }
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, CliError> {
        let mut k = KernelSpec::new(self.kernel.kind, self.kernel.bandwidth)?;
        k.wrap_hours = self.kernel.wrap_hours;
        Ok(k)
    }

    pub fn wls_options(&self) -> WlsOptions {
        WlsOptions {
            max_condition: self.fit.max_condition,
            jitter: self.fit.jitter,
        }
    }

    pub fn panel_dir(&self) -> PathBuf {
        self.panel_dir.clone().unwrap_or_else(|| self.out_dir.join("panel"))
    }

    pub fn projection(&self) -> Option<Projection> {
        self.projection
            .and_then(|p| Projection::new(p.origin_lon, p.origin_lat).ok())
    }
}
