use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use misspattern::{CorrelationKind, CriterionKind, ExtractionMethod};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const DEFAULT_SENTINELS: [&str; 3] = ["", "NA", "."];

/// Retention criterion that picks the number of components carried into
/// the mechanism steps. `Auto` defers to the guidance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionChoice {
    Fixed(CriterionKind),
    Auto,
}

impl CriterionChoice {
    pub fn name(self) -> &'static str {
        match self {
            CriterionChoice::Fixed(k) => k.name(),
            CriterionChoice::Auto => "auto",
        }
    }
}

impl fmt::Display for CriterionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionChoice {
    type Err = misspattern::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            Ok(CriterionChoice::Auto)
        } else {
            CriterionKind::from_name(s).map(CriterionChoice::Fixed)
        }
    }
}

impl Serialize for CriterionChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CriterionChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    Md,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_path: PathBuf,
    pub missing_sentinels: Vec<String>,
    pub delimiter: char,
    /// Columns turned into missingness indicators; `None` means all.
    pub columns: Option<Vec<String>>,
    pub correlation_kind: CorrelationKind,
    pub extraction_method: ExtractionMethod,
    pub criterion: CriterionChoice,
    pub items_per_component: Option<usize>,
    pub expected_components: Option<usize>,
    pub cutoff: f64,
    pub pa_reps: usize,
    pub percentile: f64,
    pub seed: Option<u64>,
    pub strata_column: Option<String>,
    pub covariate_columns: Vec<String>,
    /// Variables compared across component groups; `None` means every
    /// column of the input.
    pub screen_columns: Option<Vec<String>>,
    pub drop_fully_missing_patterns: bool,
    pub output_dir: PathBuf,
    pub output_formats: Vec<OutputFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input_path: PathBuf::new(),
            missing_sentinels: DEFAULT_SENTINELS.iter().map(|s| s.to_string()).collect(),
            delimiter: ',',
            columns: None,
            correlation_kind: CorrelationKind::Pearson,
            extraction_method: ExtractionMethod::Pca,
            criterion: CriterionChoice::Fixed(CriterionKind::Parallel),
            items_per_component: None,
            expected_components: None,
            cutoff: 0.0,
            pa_reps: 100,
            percentile: 0.95,
            seed: None,
            strata_column: None,
            covariate_columns: Vec::new(),
            screen_columns: None,
            drop_fully_missing_patterns: false,
            output_dir: PathBuf::from("."),
            output_formats: vec![OutputFormat::Json, OutputFormat::Csv, OutputFormat::Md],
        }
    }
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too, in which case
    /// its embedded config is used.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        let config = match value.get("config") {
            Some(inner) if value.get("schema_version").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(config).with_context(|| format!("invalid config in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.input_path.as_os_str().is_empty() {
            bail!("no input file given");
        }
        if !self.delimiter.is_ascii() {
            bail!("delimiter must be a single ASCII character");
        }
        if self.criterion == CriterionChoice::Auto
            && (self.items_per_component.is_none() || self.expected_components.is_none())
        {
            bail!("criterion `auto` needs items_per_component and expected_components hints");
        }
        if self.pa_reps == 0 {
            bail!("pa_reps must be at least 1");
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            bail!("percentile must lie in (0, 1), got {}", self.percentile);
        }
        if !self.cutoff.is_finite() {
            bail!("cutoff must be finite");
        }
        if self.output_formats.is_empty() {
            bail!("at least one output format is required");
        }
        Ok(())
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.output_formats.contains(&format)
    }
}
