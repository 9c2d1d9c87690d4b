//! Attribute-controlled generation, author substitution and attention export.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionTrace;
use crate::corpus::{AttributeInventory, AttributeVocab, Vocabulary, BOS, EOS, PAD, UNK, UNK_ATTR};
use crate::error::{Error, Result};
use crate::model::{Conditioning, SamModel};
use crate::tensor::{softmax, Mat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub title: Option<Vec<String>>,
    pub author: Option<String>,
    pub category: Option<String>,
    pub max_len: usize,
    pub temperature: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for GenRequest {
    fn default() -> Self {
        GenRequest {
            title: None,
            author: None,
            category: None,
            max_len: 50,
            temperature: 1.0,
            strategy: Strategy::Greedy,
            seed: 1,
        }
    }
}

impl GenRequest {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.strategy == Strategy::Sample && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("sampling needs a positive temperature".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenResult {
    pub token_ids: Vec<usize>,
    pub tokens: Vec<String>,
    /// Model probability (temperature 1, nothing masked) of each chosen token.
    pub probabilities: Vec<f64>,
    pub warnings: Vec<String>,
    pub trace: AttentionTrace,
    pub title_tokens: Vec<String>,
}

/// JSON shape written by the CLI.
#[derive(Serialize)]
pub struct GenResultJson<'a> {
    pub tokens: &'a [String],
    pub probabilities: &'a [f64],
    pub warnings: &'a [String],
    pub attention_csv_path: Option<String>,
}

impl GenResult {
    pub fn to_json(&self, attention_csv_path: Option<&Path>) -> GenResultJson<'_> {
        GenResultJson {
            tokens: &self.tokens,
            probabilities: &self.probabilities,
            warnings: &self.warnings,
            attention_csv_path: attention_csv_path.map(|p| p.display().to_string()),
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleVariation {
    pub original: GenResult,
    pub varied: GenResult,
    /// Mean per-step Jensen-Shannon divergence (nats) along the original
    /// token path.
    pub divergence: f64,
    /// Fraction of positions where the two free-running outputs agree.
    pub token_overlap: f64,
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            s += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            s += 0.5 * b * (b / m).ln();
        }
    }
    s.max(0.0)
}

/// Draws an index from `probs` (need not be normalized).
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        if u < p {
            return i;
        }
        u -= p;
        last = i;
    }
    last
}

/// Temperature-scaled distribution with UNK and PAD/BOS removed.
pub fn decoding_distribution(logits: &Mat, temperature: f64) -> Vec<f64> {
    let mut scaled = logits.scaled(1.0 / temperature).into_data();
    scaled[UNK] = f64::NEG_INFINITY;
    scaled[PAD] = f64::NEG_INFINITY;
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scaled.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Argmax over logits with UNK and PAD/BOS excluded, ties to the lowest id.
pub fn greedy_choice(logits: &Mat) -> usize {
    let mut best = None;
    for (i, &x) in logits.data().iter().enumerate() {
        if i == UNK || i == PAD {
            continue;
        }
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map_or(EOS, |(i, _)| i)
}

pub struct Generator<'a> {
    pub model: &'a SamModel,
    pub vocab: &'a Vocabulary,
    pub attrs: &'a AttributeInventory,
}

struct Prepared {
    cond: Conditioning,
    title_tokens: Vec<String>,
    warnings: Vec<String>,
}

fn resolve(inv: &AttributeVocab, kind: &str, name: &str, warnings: &mut Vec<String>) -> usize {
    match inv.lookup(name) {
        Some(i) => i,
        None => {
            warnings.push(format!("unknown {kind} {name:?} mapped to UNK"));
            UNK_ATTR
        }
    }
}

impl<'a> Generator<'a> {
    pub fn new(model: &'a SamModel, vocab: &'a Vocabulary, attrs: &'a AttributeInventory) -> Result<Self> {
        if model.config().vocab_size != vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "model has {} tokens, vocabulary {}",
                model.config().vocab_size,
                vocab.len()
            )));
        }
        Ok(Generator { model, vocab, attrs })
    }

    fn prepare(&self, req: &GenRequest) -> Result<Prepared> {
        let variant = self.model.config().variant;
        let mut warnings = Vec::new();
        let mut title_tokens = Vec::new();
        let title_ids = req.title.as_ref().map(|t| {
            t.iter()
                .map(|w| match self.vocab.lookup(w) {
                    Some(i) => i,
                    None => {
                        warnings.push(format!("title word {w:?} not in vocabulary, read as UNK"));
                        UNK
                    }
                })
                .collect::<Vec<_>>()
        });
        if let Some(ids) = &title_ids {
            title_tokens = ids.iter().map(|&i| self.vocab.token(i).to_string()).collect();
        }
        let author = req.author.as_deref().map(|a| resolve(&self.attrs.authors, "author", a, &mut warnings));
        let category = req.category.as_deref().map(|c| resolve(&self.attrs.categories, "category", c, &mut warnings));
        if req.title.is_some() && !variant.needs_title() {
            warnings.push(format!("{variant} ignores the title"));
            title_tokens.clear();
        }
        if author.is_some() && !variant.needs_author() {
            warnings.push(format!("{variant} ignores the author"));
        }
        if category.is_some() && !variant.needs_category() {
            warnings.push(format!("{variant} ignores the category"));
        }
        let cond = self
            .model
            .arch()
            .condition(&self.model.params().values, title_ids.as_deref(), author, category, "request")?;
        Ok(Prepared {
            cond,
            title_tokens,
            warnings,
        })
    }

    pub fn generate(&self, req: &GenRequest) -> Result<GenResult> {
        req.validate()?;
        let prep = self.prepare(req)?;
        let arch = self.model.arch();
        let params = &self.model.params().values;
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let mut trace = AttentionTrace {
            attribute_names: arch.attribute_names(),
            ..Default::default()
        };
        let mut h = prep.cond.h0.clone();
        let mut input = BOS;
        let mut ids = Vec::new();
        let mut probabilities = Vec::new();
        while ids.len() < req.max_len {
            let (out, _) = arch.step(params, &prep.cond, &h, input)?;
            let next = match req.strategy {
                Strategy::Greedy => greedy_choice(&out.logits),
                Strategy::Sample => sample_index(&decoding_distribution(&out.logits, req.temperature), &mut rng),
            };
            probabilities.push(softmax(&out.logits).get(next, 0));
            if let Some(a) = out.alpha {
                trace.alpha.push(a);
            }
            if let Some(b) = out.beta {
                trace.beta.push(b);
            }
            ids.push(next);
            h = out.h;
            input = next;
            if next == EOS {
                break;
            }
        }
        Ok(GenResult {
            tokens: ids.iter().map(|&i| self.vocab.token(i).to_string()).collect(),
            token_ids: ids,
            probabilities,
            warnings: prep.warnings,
            trace,
            title_tokens: prep.title_tokens,
        })
    }

    /// Next-token distributions (temperature 1) along a fixed token path.
    fn path_distributions(&self, cond: &Conditioning, path: &[usize]) -> Result<Vec<Vec<f64>>> {
        let arch = self.model.arch();
        let params = &self.model.params().values;
        let mut h = cond.h0.clone();
        let mut out = Vec::with_capacity(path.len());
        for i in 0..path.len() {
            let input = if i == 0 { BOS } else { path[i - 1] };
            let (o, _) = arch.step(params, cond, &h, input)?;
            out.push(softmax(&o.logits).into_data());
            h = o.h;
        }
        Ok(out)
    }

    /// Generates under `req`, then again with the author replaced by
    /// `fake_author`, and compares.
    pub fn style_variation(&self, req: &GenRequest, fake_author: &str) -> Result<StyleVariation> {
        let variant = self.model.config().variant;
        if !variant.needs_author() {
            return Err(Error::Config(format!("{variant} does not condition on authors")));
        }
        let original = self.generate(req)?;
        let fake = GenRequest {
            author: Some(fake_author.to_string()),
            ..req.clone()
        };
        let varied = self.generate(&fake)?;
        let p = self.path_distributions(&self.prepare(req)?.cond, &original.token_ids)?;
        let q = self.path_distributions(&self.prepare(&fake)?.cond, &original.token_ids)?;
        let divergence = p.iter().zip(&q).map(|(a, b)| js_divergence(a, b)).sum::<f64>() / p.len() as f64;
        let longest = original.token_ids.len().max(varied.token_ids.len());
        let same = original.token_ids.iter().zip(&varied.token_ids).filter(|(a, b)| a == b).count();
        Ok(StyleVariation {
            original,
            varied,
            divergence,
            token_overlap: same as f64 / longest as f64,
        })
    }
}

/// Writes a generation's attention trace as CSV.
pub fn export_attention(result: &GenResult, path: &Path) -> Result<()> {
    result.trace.save_csv(path, &result.title_tokens, &result.tokens)
}
