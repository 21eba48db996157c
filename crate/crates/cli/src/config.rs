//! Pipeline configuration.
//!
//! One TOML file drives every stage. Defaults apply per field, so a section
//! can set just the keys it cares about and a minimal config only names the
//! input files. Relative paths are resolved
//! against the config file's directory at load time, which keeps configs
//! portable alongside their data.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use quarry_core::kg::{DEFAULT_MAX_DEGREE, DEFAULT_MIN_DEGREE};
use quarry_core::llm::DEFAULT_TEMPERATURE;
use quarry_core::qa::DEFAULT_Z_THRESHOLD;
use quarry_core::rephrase::{TargetFormat, DEFAULT_EXEMPLARS_PER_PROMPT};
use quarry_core::retrieval::DEFAULT_TOP_K;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stochastic step derives from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub prompts: PromptsConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub filtering: FilteringConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub rephrase: RephraseConfig,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    /// Optional id-to-name map applied before simplification.
    #[serde(default)]
    pub hydration: Option<PathBuf>,
    pub corpus: PathBuf,
    #[serde(default)]
    pub yes_no_exemplars: Option<PathBuf>,
    #[serde(default)]
    pub multiple_choice_exemplars: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    pub min_degree: usize,
    pub max_degree: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig { min_degree: DEFAULT_MIN_DEGREE, max_degree: DEFAULT_MAX_DEGREE }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Per-shape reservoir capacity.
    pub target_per_shape: u64,
    /// When true, expansion probabilities are calibrated from an exact
    /// pilot census; otherwise every subgraph is visited.
    pub calibrate: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            target_per_shape: quarry_core::graphlet::DEFAULT_TARGET_PER_SHAPE,
            calibrate: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptsConfig {
    /// Which generation prompt configuration to use.
    pub config_id: String,
    /// Load a customized catalog from this directory instead of the
    /// built-in templates.
    pub catalog_dir: Option<PathBuf>,
}

impl Default for PromptsConfig {
    fn default() -> Self {
        PromptsConfig {
            config_id: quarry_core::prompt::FULL_CONFIG_ID.to_string(),
            catalog_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub mode: LlmMode,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Records per gateway batch; each completed batch is checkpointed.
    pub batch_size: usize,
    pub http: HttpConfig,
    pub mock: MockConfig,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            mode: LlmMode::Mock,
            temperature: DEFAULT_TEMPERATURE,
            max_in_flight: 4,
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 4_000,
            batch_size: 50,
            http: HttpConfig::default(),
            mock: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        let d = quarry_core::llm::HttpBackendConfig::default();
        HttpConfig {
            endpoint: d.endpoint,
            model: d.model,
            api_key_env: d.api_key_env,
            timeout_secs: d.timeout_secs,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockConfig {
    pub gen_parse_failure_rate: f64,
    pub judge_reject_rate: f64,
    pub judge_parse_failure_rate: f64,
    pub evidence_relevant_rate: f64,
    pub evidence_paraphrase_rate: f64,
    pub rephrase_violation_rate: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        let d = quarry_core::llm::MockKnobs::default();
        MockConfig {
            gen_parse_failure_rate: d.gen_parse_failure_rate,
            judge_reject_rate: d.judge_reject_rate,
            judge_parse_failure_rate: d.judge_parse_failure_rate,
            evidence_relevant_rate: d.evidence_relevant_rate,
            evidence_paraphrase_rate: d.evidence_paraphrase_rate,
            rephrase_violation_rate: d.rephrase_violation_rate,
        }
    }
}

impl MockConfig {
    pub fn knobs(&self) -> quarry_core::llm::MockKnobs {
        quarry_core::llm::MockKnobs {
            gen_parse_failure_rate: self.gen_parse_failure_rate,
            judge_reject_rate: self.judge_reject_rate,
            judge_parse_failure_rate: self.judge_parse_failure_rate,
            evidence_relevant_rate: self.evidence_relevant_rate,
            evidence_paraphrase_rate: self.evidence_paraphrase_rate,
            rephrase_violation_rate: self.rephrase_violation_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilteringConfig {
    pub z_threshold: f64,
}

impl Default for FilteringConfig {
    fn default() -> Self {
        FilteringConfig { z_threshold: DEFAULT_Z_THRESHOLD }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub top_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { top_k: DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RephraseConfig {
    pub exemplars_per_prompt: usize,
    /// Seeded subsample of the exemplar bank; absent keeps every exemplar.
    pub exemplar_sample_size: Option<usize>,
    pub targets: Vec<RephraseTarget>,
}

impl Default for RephraseConfig {
    fn default() -> Self {
        RephraseConfig {
            exemplars_per_prompt: DEFAULT_EXEMPLARS_PER_PROMPT,
            exemplar_sample_size: None,
            targets: vec![
                RephraseTarget { format: TargetFormat::YesNo },
                RephraseTarget { format: TargetFormat::MultipleChoice },
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RephraseTarget {
    pub format: TargetFormat,
}

impl PipelineConfig {
    /// Loads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.paths.nodes);
        resolve(&mut self.paths.edges);
        resolve(&mut self.paths.corpus);
        if let Some(p) = &mut self.paths.hydration {
            resolve(p);
        }
        if let Some(p) = &mut self.paths.yes_no_exemplars {
            resolve(p);
        }
        if let Some(p) = &mut self.paths.multiple_choice_exemplars {
            resolve(p);
        }
        if let Some(p) = &mut self.prompts.catalog_dir {
            resolve(p);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reduction.min_degree > self.reduction.max_degree {
            bail!(
                "reduction.min_degree ({}) exceeds max_degree ({})",
                self.reduction.min_degree,
                self.reduction.max_degree
            );
        }
        if self.sampling.target_per_shape == 0 {
            bail!("sampling.target_per_shape must be positive");
        }
        if !(self.filtering.z_threshold.is_finite() && self.filtering.z_threshold >= 0.0) {
            bail!("filtering.z_threshold must be a non-negative number");
        }
        if self.retrieval.top_k == 0 {
            bail!("retrieval.top_k must be positive");
        }
        if self.llm.batch_size == 0 {
            bail!("llm.batch_size must be positive");
        }
        for target in &self.rephrase.targets {
            let path = match target.format {
                TargetFormat::YesNo => &self.paths.yes_no_exemplars,
                TargetFormat::MultipleChoice => &self.paths.multiple_choice_exemplars,
            };
            if path.is_none() {
                bail!(
                    "rephrase target {} requires paths.{}_exemplars",
                    target.format,
                    target.format
                );
            }
        }
        Ok(())
    }

    /// The exemplar file configured for one rephrase format.
    pub fn exemplar_path(&self, format: TargetFormat) -> Option<&PathBuf> {
        match format {
            TargetFormat::YesNo => self.paths.yes_no_exemplars.as_ref(),
            TargetFormat::MultipleChoice => self.paths.multiple_choice_exemplars.as_ref(),
        }
    }
}
