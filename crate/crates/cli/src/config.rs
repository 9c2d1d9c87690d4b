//! JSON run configuration. Every field is optional in the file; command-line
//! flags override whatever the file sets.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use samlm_core::lda::LdaConfig;
use samlm_core::model::Variant;
use samlm_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub hidden: usize,
    /// Title/attribute embedding width; `None` means the hidden size.
    pub attr_dim: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: Variant::Rnn,
            hidden: 200,
            attr_dim: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Vocabulary cap, specials included.
    pub vocab_size: usize,
    pub min_count: usize,
    pub ratios: (f64, f64, f64),
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            vocab_size: 10_000,
            min_count: 1,
            ratios: (0.8, 0.1, 0.1),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub lda: LdaConfig,
    pub ngram_order: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("out"),
            seed: 1,
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            lda: LdaConfig::default(),
            ngram_order: samlm_core::ngram::DEFAULT_ORDER,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Pushes the single run seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        self.lda.seed = self.seed;
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().context("no data directory: pass --data or set \"data\" in the config")
    }
}
