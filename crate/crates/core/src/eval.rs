//! Corpus perplexity and per-word NLL change reports.
//!
//! Perplexity counts every main-text target, EOS and UNK included; title
//! tokens are conditioning only and never scored.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{is_special, AttributeVocab, IndexedDocument, Vocabulary, EOS, UNK};
use crate::error::{Error, Result};
use crate::model::SamModel;

/// Anything that assigns a negative log-likelihood to each main-text target.
pub trait TokenScorer: Sync {
    fn vocab_size(&self) -> usize;

    /// `-ln p(target_i | history)` for each entry of `doc.text_ids`.
    fn score_document(&self, doc: &IndexedDocument) -> Result<Vec<f64>>;
}

impl TokenScorer for SamModel {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn score_document(&self, doc: &IndexedDocument) -> Result<Vec<f64>> {
        Ok(self.forward_document(doc)?.per_word_nll)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerplexityReport {
    pub model_id: String,
    pub corpus_id: String,
    pub tokens: usize,
    pub total_nll: f64,
    pub perplexity: f64,
    pub unk_tokens: usize,
    pub unk_nll: f64,
    pub eos_tokens: usize,
    pub eos_nll: f64,
}

impl PerplexityReport {
    fn from_scores(docs: &[IndexedDocument], scores: &[Vec<f64>]) -> Result<Self> {
        let mut r = PerplexityReport {
            model_id: String::new(),
            corpus_id: String::new(),
            tokens: 0,
            total_nll: 0.0,
            perplexity: f64::NAN,
            unk_tokens: 0,
            unk_nll: 0.0,
            eos_tokens: 0,
            eos_nll: 0.0,
        };
        for (doc, s) in docs.iter().zip(scores) {
            for (&target, &nll) in doc.text_ids.iter().zip(s) {
                r.tokens += 1;
                r.total_nll += nll;
                match target {
                    UNK => {
                        r.unk_tokens += 1;
                        r.unk_nll += nll;
                    }
                    EOS => {
                        r.eos_tokens += 1;
                        r.eos_nll += nll;
                    }
                    _ => {}
                }
            }
        }
        if r.tokens == 0 {
            return Err(Error::Empty("no tokens to score".into()));
        }
        r.perplexity = (r.total_nll / r.tokens as f64).exp();
        Ok(r)
    }

    pub fn with_ids(mut self, model_id: impl Into<String>, corpus_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self.corpus_id = corpus_id.into();
        self
    }

    pub fn mean_nll(&self) -> f64 {
        self.total_nll / self.tokens as f64
    }

    /// Perplexity over non-EOS targets only.
    pub fn content_perplexity(&self) -> f64 {
        let n = self.tokens - self.eos_tokens;
        if n == 0 {
            return f64::NAN;
        }
        ((self.total_nll - self.eos_nll) / n as f64).exp()
    }

    /// Perplexity over targets other than UNK.
    pub fn known_perplexity(&self) -> f64 {
        let n = self.tokens - self.unk_tokens;
        if n == 0 {
            return f64::NAN;
        }
        ((self.total_nll - self.unk_nll) / n as f64).exp()
    }

    pub const CSV_HEADER: &'static str = "model,corpus,tokens,total_nll,perplexity,unk_tokens,unk_nll,eos_tokens,eos_nll";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.10},{:.6},{},{:.10},{},{:.10}",
            self.model_id, self.corpus_id, self.tokens, self.total_nll, self.perplexity, self.unk_tokens, self.unk_nll, self.eos_tokens, self.eos_nll
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())
    }
}

impl fmt::Display for PerplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model       {}", self.model_id)?;
        writeln!(f, "corpus      {}", self.corpus_id)?;
        writeln!(f, "tokens      {} ({} unk, {} eos)", self.tokens, self.unk_tokens, self.eos_tokens)?;
        writeln!(f, "total nll   {:.4}", self.total_nll)?;
        writeln!(f, "perplexity  {:.4}", self.perplexity)?;
        writeln!(f, "  w/o unk   {:.4}", self.known_perplexity())?;
        writeln!(f, "  w/o eos   {:.4}", self.content_perplexity())
    }
}

/// Scores every document (in parallel) and returns per-document NLLs in
/// input order.
pub fn score_documents<M: TokenScorer + ?Sized>(model: &M, docs: &[IndexedDocument]) -> Result<Vec<Vec<f64>>> {
    docs.par_iter().map(|d| model.score_document(d)).collect()
}

pub fn perplexity<M: TokenScorer + ?Sized>(model: &M, docs: &[IndexedDocument]) -> Result<PerplexityReport> {
    let scores = score_documents(model, docs)?;
    PerplexityReport::from_scores(docs, &scores)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaThresholds {
    /// `|mean ΔNLL|` at or above this (nats) is improved/worse.
    pub delta: f64,
    pub min_count: usize,
}

impl Default for DeltaThresholds {
    fn default() -> Self {
        DeltaThresholds {
            delta: 0.05,
            min_count: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WordDelta {
    pub word: String,
    /// Mean of `nll_b - nll_a`; negative means model b predicts it better.
    pub mean_delta: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryDelta {
    pub category: String,
    pub improved: Vec<WordDelta>,
    pub alike: Vec<WordDelta>,
    pub worse: Vec<WordDelta>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WordDeltaReport {
    pub thresholds_delta: f64,
    pub min_count: usize,
    pub categories: Vec<CategoryDelta>,
}

/// Per category, buckets every non-special word type seen at least
/// `min_count` times by the mean NLL change from `model_a` to `model_b`.
pub fn word_delta<A, B>(
    model_a: &A,
    model_b: &B,
    docs: &[IndexedDocument],
    vocab: &Vocabulary,
    categories: Option<&AttributeVocab>,
    thresholds: DeltaThresholds,
) -> Result<WordDeltaReport>
where
    A: TokenScorer + ?Sized,
    B: TokenScorer + ?Sized,
{
    if model_a.vocab_size() != model_b.vocab_size() || model_a.vocab_size() != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "models cover {} and {} tokens, vocabulary has {}",
            model_a.vocab_size(),
            model_b.vocab_size(),
            vocab.len()
        )));
    }
    let sa = score_documents(model_a, docs)?;
    let sb = score_documents(model_b, docs)?;

    // category -> word -> (sum delta, count); None sorts first
    let mut acc: BTreeMap<Option<usize>, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for ((doc, a), b) in docs.iter().zip(&sa).zip(&sb) {
        let words = acc.entry(doc.category_id).or_default();
        for ((&t, &na), &nb) in doc.text_ids.iter().zip(a).zip(b) {
            if is_special(t) {
                continue;
            }
            let e = words.entry(t).or_insert((0.0, 0));
            e.0 += nb - na;
            e.1 += 1;
        }
    }

    let mut out = Vec::with_capacity(acc.len());
    for (cat, words) in acc {
        let category = match (cat, categories) {
            (Some(c), Some(inv)) if c < inv.len() => inv.name(c).to_string(),
            (Some(c), _) => c.to_string(),
            (None, _) => "(none)".to_string(),
        };
        let mut cd = CategoryDelta {
            category,
            improved: Vec::new(),
            alike: Vec::new(),
            worse: Vec::new(),
        };
        for (id, (sum, count)) in words {
            if count < thresholds.min_count {
                continue;
            }
            let wd = WordDelta {
                word: vocab.token(id).to_string(),
                mean_delta: sum / count as f64,
                count,
            };
            if wd.mean_delta <= -thresholds.delta {
                cd.improved.push(wd);
            } else if wd.mean_delta >= thresholds.delta {
                cd.worse.push(wd);
            } else {
                cd.alike.push(wd);
            }
        }
        cd.improved.sort_by(|x, y| x.mean_delta.total_cmp(&y.mean_delta).then_with(|| x.word.cmp(&y.word)));
        cd.worse.sort_by(|x, y| y.mean_delta.total_cmp(&x.mean_delta).then_with(|| x.word.cmp(&y.word)));
        cd.alike.sort_by(|x, y| x.mean_delta.abs().total_cmp(&y.mean_delta.abs()).then_with(|| x.word.cmp(&y.word)));
        out.push(cd);
    }
    Ok(WordDeltaReport {
        thresholds_delta: thresholds.delta,
        min_count: thresholds.min_count,
        categories: out,
    })
}

impl WordDeltaReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["category", "bucket", "rank", "word", "mean_delta", "count"])?;
        for c in &self.categories {
            for (bucket, list) in [("improved", &c.improved), ("alike", &c.alike), ("worse", &c.worse)] {
                for (rank, wd) in list.iter().enumerate() {
                    w.write_record([
                        c.category.clone(),
                        bucket.to_string(),
                        (rank + 1).to_string(),
                        wd.word.clone(),
                        format!("{:.6}", wd.mean_delta),
                        wd.count.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<word delta csv>", e))?;
        Ok(())
    }

    /// Text table listing the first `top` words of each bucket.
    pub fn render(&self, top: usize) -> String {
        let mut s = String::new();
        for c in &self.categories {
            s.push_str(&format!("== {} ==\n", c.category));
            for (bucket, list) in [("improved", &c.improved), ("alike", &c.alike), ("worse", &c.worse)] {
                let words: Vec<String> = list.iter().take(top).map(|w| format!("{} ({:+.3})", w.word, w.mean_delta)).collect();
                s.push_str(&format!("{bucket:<9} {}\n", words.join(", ")));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed per-token NLL depending on the target id.
    struct Table {
        v: usize,
        nll: Vec<f64>,
    }

    impl TokenScorer for Table {
        fn vocab_size(&self) -> usize {
            self.v
        }

        fn score_document(&self, doc: &IndexedDocument) -> Result<Vec<f64>> {
            Ok(doc.text_ids.iter().map(|&t| self.nll[t]).collect())
        }
    }

    fn docs() -> Vec<IndexedDocument> {
        let d = |ids: &[usize], cat| IndexedDocument {
            id: "x".into(),
            text_ids: ids.to_vec(),
            title_ids: None,
            author_id: None,
            category_id: cat,
        };
        vec![d(&[3, 4, 0, EOS], Some(1)), d(&[4, 4, 5, EOS], Some(1)), d(&[3, 3, EOS], Some(2))]
    }

    #[test]
    fn uniform_predictor_hits_vocab_size() {
        let v = 10_000;
        let m = Table {
            v,
            nll: vec![(v as f64).ln(); v],
        };
        let r = perplexity(&m, &docs()).unwrap();
        assert!((r.perplexity - v as f64).abs() < 1e-6);
        assert_eq!(r.tokens, 11);
        assert_eq!((r.unk_tokens, r.eos_tokens), (1, 3));
    }

    #[test]
    fn report_invariant_and_order() {
        let m = Table {
            v: 6,
            nll: vec![2.0, 0.1, 9.0, 1.0, 1.5, 3.0],
        };
        let mut ds = docs();
        let r = perplexity(&m, &ds).unwrap();
        assert!((r.perplexity - (r.total_nll / r.tokens as f64).exp()).abs() < 1e-9);
        ds.reverse();
        let r2 = perplexity(&m, &ds).unwrap();
        assert!((r.perplexity - r2.perplexity).abs() < 1e-12);
        let expected = ((r.total_nll - 0.3) / 8.0).exp();
        assert!((r.content_perplexity() - expected).abs() < 1e-12);
        assert!(perplexity(&m, &[]).is_err());
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["<unk>", "<eos>", "<pad>", "a", "b", "c"].iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn identical_models_are_alike() {
        let m = Table {
            v: 6,
            nll: vec![1.0; 6],
        };
        let r = word_delta(&m, &m, &docs(), &vocab(), None, DeltaThresholds { delta: 0.05, min_count: 1 }).unwrap();
        for c in &r.categories {
            assert!(c.improved.is_empty() && c.worse.is_empty());
            assert!(c.alike.iter().all(|w| w.mean_delta == 0.0));
        }
        let covered: usize = r.categories.iter().map(|c| c.alike.len()).sum();
        assert_eq!(covered, 3 + 1); // {a,b,c} in category 1, {a} in category 2
    }

    #[test]
    fn buckets_and_ordering() {
        let a = Table {
            v: 6,
            nll: vec![1.0; 6],
        };
        let b = Table {
            v: 6,
            nll: vec![1.0, 1.0, 1.0, 0.5, 1.01, 1.3],
        };
        let r = word_delta(&a, &b, &docs(), &vocab(), None, DeltaThresholds { delta: 0.05, min_count: 1 }).unwrap();
        let c1 = &r.categories[0];
        assert_eq!(c1.category, "1");
        assert_eq!(c1.improved.iter().map(|w| w.word.as_str()).collect::<Vec<_>>(), ["a"]);
        assert_eq!(c1.alike[0].word, "b");
        assert_eq!(c1.alike[0].count, 3);
        assert_eq!(c1.worse[0].word, "c");
        let r = word_delta(&a, &b, &docs(), &vocab(), None, DeltaThresholds { delta: 0.05, min_count: 3 }).unwrap();
        assert_eq!(r.categories[0].alike.len() + r.categories[0].improved.len() + r.categories[0].worse.len(), 1);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("category,bucket,rank,word,mean_delta,count\n"));
    }

    #[test]
    fn vocab_mismatch() {
        let a = Table { v: 6, nll: vec![1.0; 6] };
        let b = Table { v: 7, nll: vec![1.0; 7] };
        assert!(matches!(
            word_delta(&a, &b, &docs(), &vocab(), None, DeltaThresholds::default()),
            Err(Error::VocabMismatch(_))
        ));
    }
}
