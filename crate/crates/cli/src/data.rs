//! Prepared data directory: `train/valid/test.jsonl`, `vocab.txt`,
//! `authors.txt`, `categories.txt`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use samlm_core::corpus::{self, AttributeInventory, AttributeVocab, Document, Format, IndexedDocument, Vocabulary};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub struct Dataset {
    pub vocab: Vocabulary,
    pub attrs: AttributeInventory,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            bail!("data directory {} does not exist", dir.display());
        }
        Ok(Dataset {
            vocab: Vocabulary::load(&dir.join("vocab.txt"))?,
            attrs: AttributeInventory {
                authors: AttributeVocab::load(&dir.join("authors.txt"))?,
                categories: AttributeVocab::load(&dir.join("categories.txt"))?,
            },
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.vocab.save(&dir.join("vocab.txt"))?;
        self.attrs.authors.save(&dir.join("authors.txt"))?;
        self.attrs.categories.save(&dir.join("categories.txt"))?;
        Ok(())
    }

    pub fn index(&self, docs: &[Document]) -> Vec<IndexedDocument> {
        corpus::index_documents(docs, &self.vocab, &self.attrs)
    }
}

pub fn split_path(dir: &Path, split: &str) -> Result<std::path::PathBuf> {
    if !SPLITS.contains(&split) {
        bail!("unknown split {split:?} (expected train, valid or test)");
    }
    Ok(dir.join(format!("{split}.jsonl")))
}

pub fn read_split(dir: &Path, split: &str) -> Result<Vec<Document>> {
    let p = split_path(dir, split)?;
    corpus::ingest(&p, Format::Jsonl).with_context(|| format!("reading {}", p.display()))
}
