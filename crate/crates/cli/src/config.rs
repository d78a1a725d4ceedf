//! Run configuration: a fixed TOML schema where unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use morpher_core::gradcheck::GradcheckConfig;
use morpher_core::text::MidpointRule;
use morpher_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub gnn: GnnConfig,
    #[serde(default)]
    pub text: TextConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    File(FileData),
    Separable(SeparableData),
    OneHot(OneHotData),
    Zero(ZeroData),
}

fn default_shots() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub path: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub pad_to: Option<usize>,
    /// Labeled graphs per class, split 1:1 into train and val.
    #[serde(default = "default_shots")]
    pub shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparableData {
    pub n_graphs: usize,
    pub nodes_per_graph: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub noise: f64,
    pub shots: usize,
}

impl Default for SeparableData {
    fn default() -> Self {
        Self {
            n_graphs: 40,
            nodes_per_graph: 8,
            feature_dim: 4,
            classes: 2,
            noise: 0.1,
            shots: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneHotData {
    pub n_graphs: usize,
    pub nodes_per_graph: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub extra_edges_per_class: usize,
    pub balanced: bool,
    pub shots: usize,
}

impl Default for OneHotData {
    fn default() -> Self {
        Self {
            n_graphs: 40,
            nodes_per_graph: 16,
            feature_dim: 16,
            classes: 2,
            extra_edges_per_class: 12,
            balanced: true,
            shots: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroData {
    /// Source network; a seeded random network is generated when absent.
    pub edge_list: Option<PathBuf>,
    pub base_nodes: usize,
    pub extra_edges: usize,
    pub hops: usize,
    pub label_texts: [String; 3],
}

impl Default for ZeroData {
    fn default() -> Self {
        Self {
            edge_list: None,
            base_nodes: 500,
            extra_edges: 250,
            hops: 2,
            label_texts: ["biology".into(), "informatics".into(), "bioinformatics".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnConfig {
    File { path: PathBuf },
    Random(RandomGnn),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomGnn {
    pub hidden: usize,
    pub output: usize,
}

impl Default for RandomGnn {
    fn default() -> Self {
        Self { hidden: 64, output: 32 }
    }
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig::Random(RandomGnn::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextConfig {
    /// Token embeddings exported by an external encoder.
    File { path: PathBuf },
    Pseudo(PseudoText),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoText {
    pub dim: usize,
    pub tokens_per_text: usize,
    pub midpoints: Vec<MidpointRule>,
}

impl Default for PseudoText {
    fn default() -> Self {
        Self {
            dim: 64,
            tokens_per_text: 3,
            midpoints: Vec::new(),
        }
    }
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig::Pseudo(PseudoText::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// State to evaluate; defaults to `<out_dir>/state.mpst`.
    pub state: Option<PathBuf>,
    pub split: SplitName,
    pub silhouette: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            state: None,
            split: SplitName::Test,
            silhouette: true,
        }
    }
}

impl RunConfig {
    /// Parse TOML text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).context("invalid TOML")?;
        for section in ["train", "gradcheck"] {
            if raw.get(section).and_then(|s| s.as_table()).is_some_and(|t| t.contains_key("seed")) {
                bail!("[{section}] seed is not configurable; set the top-level seed");
            }
        }
        let mut config: RunConfig = toml::from_str(text).context("invalid run configuration")?;
        config.resolve_paths(base);
        config.apply_seed();
        Ok(config)
    }

    /// Load a TOML config, or the `config` object of a run manifest when the
    /// file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(parent)?;
        let base = base.as_path();
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            Self::from_manifest(&text, base)
        } else {
            Self::parse(&text, base)
        };
        parsed.with_context(|| format!("in {}", path.display()))
    }

    pub fn from_manifest(text: &str, base: &Path) -> Result<Self> {
        let manifest: serde_json::Value = serde_json::from_str(text).context("invalid JSON")?;
        let raw = manifest.get("config").context("manifest has no config object")?;
        for section in ["train", "gradcheck"] {
            if raw.get(section).and_then(|s| s.get("seed")).is_some() {
                bail!("[{section}] seed is not configurable; set the top-level seed");
            }
        }
        let mut config: RunConfig = serde_json::from_value(raw.clone()).context("invalid run configuration")?;
        config.resolve_paths(base);
        config.apply_seed();
        Ok(config)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.apply_seed();
        self
    }

    fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.gradcheck.seed = self.seed;
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        match &mut self.data {
            Some(DataConfig::File(f)) => {
                fix(&mut f.path);
                fix(&mut f.labels);
            }
            Some(DataConfig::Zero(z)) => {
                if let Some(p) = &mut z.edge_list {
                    fix(p);
                }
            }
            _ => {}
        }
        if let GnnConfig::File { path } = &mut self.gnn {
            fix(path);
        }
        if let TextConfig::File { path } = &mut self.text {
            fix(path);
        }
        if let Some(p) = &mut self.eval.state {
            fix(p);
        }
    }

    /// TOML for the fully resolved configuration; loading it reproduces the run.
    pub fn to_toml(&self) -> Result<String> {
        let mut value = toml::Table::try_from(self).context("serializing configuration")?;
        for section in ["train", "gradcheck"] {
            if let Some(t) = value.get_mut(section).and_then(|s| s.as_table_mut()) {
                t.remove("seed");
            }
        }
        Ok(toml::to_string(&value)?)
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(self)?;
        for section in ["train", "gradcheck"] {
            if let Some(t) = value.get_mut(section).and_then(|s| s.as_object_mut()) {
                t.remove("seed");
            }
        }
        Ok(value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            bail!("threads must be at least 1");
        }
        self.train.validate()?;
        Ok(())
    }
}
