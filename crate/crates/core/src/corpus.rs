//! Attribute-annotated documents, vocabularies and index sequences.
//!
//! Documents arrive as JSON lines with `id`, `text`, `title`, `author` and
//! `category` fields; `text` and `title` are whitespace-tokenized strings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
/// The first prediction of every document is conditioned on PAD.
pub const BOS: usize = PAD;
pub const NUM_SPECIALS: usize = 3;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";
pub const PAD_TOKEN: &str = "<pad>";

/// Index of the unknown author / unknown category.
pub const UNK_ATTR: usize = 0;

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIALS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: Vec<String>,
    pub title: Option<Vec<String>>,
    pub author: Option<String>,
    pub category: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Jsonl,
}

#[derive(Deserialize)]
struct Record {
    id: Option<String>,
    text: Option<String>,
    title: Option<String>,
    author: Option<String>,
    category: Option<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    author: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<&'a str>,
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Reads documents in file order. Blank lines are skipped; missing `id`
/// defaults to the 1-based line number.
pub fn ingest(path: &Path, format: Format) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Jsonl => parse_jsonl(BufReader::new(file)),
    }
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let text = rec.text.ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "missing \"text\" field".into(),
        })?;
        let text = tokens(&text);
        if text.is_empty() {
            return Err(Error::EmptyText { line: line_no });
        }
        let title = rec.title.map(|t| tokens(&t)).filter(|t| !t.is_empty());
        docs.push(Document {
            id: rec.id.unwrap_or_else(|| line_no.to_string()),
            text,
            title,
            author: rec.author.filter(|a| !a.is_empty()),
            category: rec.category.filter(|c| !c.is_empty()),
        });
    }
    if docs.is_empty() {
        return Err(Error::Empty("no documents in input".into()));
    }
    Ok(docs)
}

pub fn write_jsonl(path: &Path, docs: &[Document]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let rec = RecordOut {
            id: &d.id,
            text: d.text.join(" "),
            title: d.title.as_ref().map(|t| t.join(" ")),
            author: d.author.as_deref(),
            category: d.category.as_deref(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Token ↔ index map. Indices 0, 1, 2 are `<unk>`, `<eos>`, `<pad>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let specials = [UNK_TOKEN, EOS_TOKEN, PAD_TOKEN];
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != specials {
            return Err(Error::Config(format!(
                "vocabulary must start with {specials:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Frequency-ranked vocabulary capped at `cap` entries including the three
/// specials. Ties are broken lexicographically; tokens seen fewer than
/// `min_count` times are dropped. Title tokens count toward frequencies
/// since titles share the word embedding.
pub fn build_vocab(docs: &[Document], cap: usize, min_count: usize) -> Result<Vocabulary> {
    if cap < NUM_SPECIALS + 1 {
        return Err(Error::Config(format!("vocabulary cap {cap} < 4")));
    }
    if min_count < 1 {
        return Err(Error::Config("min_count must be >= 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        let title = d.title.iter().flatten();
        for t in d.text.iter().chain(title) {
            if matches!(t.as_str(), UNK_TOKEN | EOS_TOKEN | PAD_TOKEN) {
                continue;
            }
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    if ranked.is_empty() {
        return Err(Error::Empty("no tokens survive vocabulary filtering".into()));
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(cap - NUM_SPECIALS);
    let tokens = [UNK_TOKEN, EOS_TOKEN, PAD_TOKEN]
        .into_iter()
        .chain(ranked.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Name ↔ index map for a categorical attribute; index 0 is `<unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl AttributeVocab {
    pub fn build<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for v in values {
            if v != UNK_TOKEN {
                *counts.entry(v).or_default() += 1;
            }
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let names = std::iter::once(UNK_TOKEN)
            .chain(ranked.into_iter().map(|(n, _)| n))
            .map(str::to_string)
            .collect();
        Self::from_names(names).expect("unique names")
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Config("attribute list must start with <unk>".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate attribute {n:?}")));
            }
        }
        Ok(AttributeVocab { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Index of `name`, or [`UNK_ATTR`].
    pub fn id(&self, name: &str) -> usize {
        self.lookup(name).unwrap_or(UNK_ATTR)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.names.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_names(text.lines().map(str::to_string).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeInventory {
    pub authors: AttributeVocab,
    pub categories: AttributeVocab,
}

impl AttributeInventory {
    pub fn build(docs: &[Document]) -> Self {
        AttributeInventory {
            authors: AttributeVocab::build(docs.iter().filter_map(|d| d.author.as_deref())),
            categories: AttributeVocab::build(docs.iter().filter_map(|d| d.category.as_deref())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedDocument {
    pub id: String,
    /// Main text ids, terminated by exactly one EOS.
    pub text_ids: Vec<usize>,
    pub title_ids: Option<Vec<usize>>,
    pub author_id: Option<usize>,
    pub category_id: Option<usize>,
}

impl IndexedDocument {
    /// Number of predicted tokens (EOS included).
    pub fn len(&self) -> usize {
        self.text_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text_ids.is_empty()
    }
}

pub fn index_document(doc: &Document, vocab: &Vocabulary, attrs: &AttributeInventory) -> IndexedDocument {
    let mut text_ids: Vec<usize> = doc.text.iter().map(|t| text_id(vocab, t)).collect();
    text_ids.push(EOS);
    IndexedDocument {
        id: doc.id.clone(),
        text_ids,
        title_ids: doc
            .title
            .as_ref()
            .map(|t| t.iter().map(|w| text_id(vocab, w)).collect()),
        author_id: doc.author.as_deref().map(|a| attrs.authors.id(a)),
        category_id: doc.category.as_deref().map(|c| attrs.categories.id(c)),
    }
}

// A literal "<eos>"/"<pad>" inside text is treated as unknown so EOS stays
// terminal and PAD stays reserved for BOS.
fn text_id(vocab: &Vocabulary, token: &str) -> usize {
    match vocab.id(token) {
        EOS | PAD => UNK,
        id => id,
    }
}

pub fn index_documents(docs: &[Document], vocab: &Vocabulary, attrs: &AttributeInventory) -> Vec<IndexedDocument> {
    docs.iter().map(|d| index_document(d, vocab, attrs)).collect()
}

/// Main-text tokens of `doc` with every special id removed.
pub fn detokenize(doc: &IndexedDocument, vocab: &Vocabulary) -> Vec<String> {
    doc.text_ids
        .iter()
        .filter(|&&id| !is_special(id))
        .map(|&id| vocab.token(id).to_string())
        .collect()
}

/// Deterministic shuffled split. Each part gets `floor(n * ratio)` items;
/// the leftover items go one at a time to the parts with the largest
/// fractional remainders (train wins ties).
pub fn split<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let n = items.len();
    let sizes = partition_sizes(n, r);
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Empty(format!("split of {n} items by {ratios:?} leaves a part empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    let (a, b) = (sizes[0], sizes[0] + sizes[1]);
    Ok((pick(0..a), pick(a..b), pick(b..n)))
}

fn partition_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| n as f64 * r);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    // stable sort keeps train ahead on equal remainders
    order.sort_by(|&i, &j| {
        let (fi, fj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        fj.partial_cmp(&fi).unwrap()
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}
