//! Run configuration: one TOML file configures every stage; global CLI
//! flags override the seed, endpoint, and stopword list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kaft_core::corpus::SCHEMA_VERSION;
use kaft_core::counterfact::CfGenConfig;
use kaft_core::error::{KaftError, Result};
use kaft_core::slices::RelevanceFilterConfig;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_stopwords() -> String {
    "builtin:v1".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub input: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeStageConfig {
    /// Probe spec designator per question format
    /// (extractive / open_domain / cloze / multiple_choice).
    pub specs: BTreeMap<String, String>,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub model_tag: String,
}

impl Default for ProbeStageConfig {
    fn default() -> Self {
        Self {
            specs: BTreeMap::new(),
            max_tokens: 32,
            max_in_flight: 8,
            model_tag: "default".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicesStageConfig {
    #[serde(flatten)]
    pub filter: RelevanceFilterConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleConfig {
    pub mode: String,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self { mode: "kaft".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub spec: String,
    pub n: usize,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            spec: "builtin:table8".into(),
            n: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalStageConfig {
    pub metrics: Vec<String>,
    pub controllability_threshold: f64,
    pub robustness_threshold: f64,
    /// Restrict the counterfactual slice to head questions (ids the probed
    /// model answered correctly closed-book).
    pub head_questions: bool,
    pub max_tokens: u32,
}

impl Default for EvalStageConfig {
    fn default() -> Self {
        Self {
            metrics: vec!["controllability".into(), "robustness".into()],
            controllability_threshold: kaft_core::evalkit::DEFAULT_CONTROLLABILITY_THRESHOLD,
            robustness_threshold: kaft_core::evalkit::DEFAULT_ROBUSTNESS_THRESHOLD,
            head_questions: true,
            max_tokens: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub endpoint: String,
    pub stopwords: String,
    pub ingest: IngestConfig,
    pub probe: ProbeStageConfig,
    pub slices: SlicesStageConfig,
    pub counterfactual: CfGenConfig,
    pub assemble: AssembleConfig,
    pub mix: MixConfig,
    pub eval: EvalStageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 17,
            endpoint: String::new(),
            stopwords: default_stopwords(),
            ingest: IngestConfig::default(),
            probe: ProbeStageConfig::default(),
            slices: SlicesStageConfig::default(),
            counterfactual: CfGenConfig::default(),
            assemble: AssembleConfig::default(),
            mix: MixConfig::default(),
            eval: EvalStageConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| KaftError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| KaftError::Config(format!("bad run config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != default_schema_version() {
            return Err(KaftError::Config(format!(
                "unsupported config schema_version {}",
                self.schema_version
            )));
        }
        self.slices.filter.validate()?;
        self.counterfactual.validate()?;
        kaft_core::assemble::BuildMode::parse(&self.assemble.mode)?;
        for metric in &self.eval.metrics {
            kaft_core::evalkit::Metric::parse(metric)?;
        }
        // Every referenced filesystem path must be distinct.
        let mut paths: Vec<&str> = Vec::new();
        if !self.ingest.input.is_empty() {
            paths.push(&self.ingest.input);
        }
        paths.extend(
            self.probe
                .specs
                .values()
                .map(String::as_str)
                .filter(|p| !p.starts_with("builtin:")),
        );
        if !self.mix.spec.starts_with("builtin:") {
            paths.push(&self.mix.spec);
        }
        if !self.stopwords.starts_with("builtin:") {
            paths.push(&self.stopwords);
        }
        let mut seen = std::collections::BTreeSet::new();
        for path in paths {
            if !seen.insert(path) {
                return Err(KaftError::Config(format!("path `{path}` referenced twice")));
            }
        }
        Ok(())
    }
}

/// Global flag overrides, highest precedence.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub stopwords: Option<String>,
}

/// Everything a stage needs: the config, where it lives (for relative
/// paths), the working directory, and the flag overrides.
#[derive(Debug, Clone)]
pub struct StageContext {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub workdir: PathBuf,
    pub overrides: Overrides,
}

impl StageContext {
    pub fn seed(&self) -> u64 {
        self.overrides.seed.unwrap_or(self.config.seed)
    }

    pub fn endpoint(&self) -> String {
        let raw = self
            .overrides
            .endpoint
            .clone()
            .unwrap_or_else(|| self.config.endpoint.clone());
        // Mock-table paths resolve like any other configured path.
        match raw.strip_prefix("mock:") {
            Some(path) => format!("mock:{}", self.resolve(path)),
            None => raw,
        }
    }

    pub fn stopwords_designator(&self) -> String {
        self.overrides
            .stopwords
            .clone()
            .unwrap_or_else(|| self.config.stopwords.clone())
    }

    /// Resolve a config-relative path (builtin designators pass through).
    pub fn resolve(&self, path: &str) -> String {
        if path.starts_with("builtin:") || Path::new(path).is_absolute() {
            return path.to_string();
        }
        let base = self
            .config_path
            .as_deref()
            .and_then(Path::parent)
            .unwrap_or_else(|| Path::new("."));
        base.join(path).to_string_lossy().into_owned()
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }
}
