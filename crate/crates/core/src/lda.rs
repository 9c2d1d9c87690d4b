//! Collapsed Gibbs LDA over document text, used to label documents with a
//! pseudo-category (the topic with the largest weight).
//!
//! Labels are computed once over the documents the topic model was fit on
//! and written back into the corpus; training never refits.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_special, IndexedDocument, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub n_topics: usize,
    /// Document-topic prior; `None` means `50 / n_topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            n_topics: 5,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            seed: 1,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.n_topics as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 2 {
            return Err(Error::Config("n_topics must be at least 2".into()));
        }
        if !(self.alpha() > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        Ok(())
    }
}

pub fn topic_label(k: usize) -> String {
    format!("topic-{k}")
}

#[derive(Clone, Debug)]
pub struct TopicModel {
    n_topics: usize,
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    /// Non-special word ids per document.
    words: Vec<Vec<usize>>,
    /// Topic of each token position.
    assignments: Vec<Vec<usize>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<Vec<u32>>,
    topic_total: Vec<u32>,
}

impl TopicModel {
    /// Builds count tables from explicit assignments.
    pub fn from_assignments(words: Vec<Vec<usize>>, assignments: Vec<Vec<usize>>, vocab_size: usize, cfg: &LdaConfig) -> Result<Self> {
        cfg.validate()?;
        if words.len() != assignments.len() || words.iter().zip(&assignments).any(|(w, z)| w.len() != z.len()) {
            return Err(Error::Config("assignments do not line up with words".into()));
        }
        let k = cfg.n_topics;
        let mut m = TopicModel {
            n_topics: k,
            vocab_size,
            alpha: cfg.alpha(),
            beta: cfg.beta,
            doc_topic: vec![vec![0; k]; words.len()],
            topic_word: vec![vec![0; vocab_size]; k],
            topic_total: vec![0; k],
            words,
            assignments,
        };
        for d in 0..m.words.len() {
            for i in 0..m.words[d].len() {
                let (w, z) = (m.words[d][i], m.assignments[d][i]);
                if w >= vocab_size || z >= k {
                    return Err(Error::Config(format!("word {w} or topic {z} out of range")));
                }
                m.add(d, w, z);
            }
        }
        Ok(m)
    }

    fn add(&mut self, d: usize, w: usize, z: usize) {
        self.doc_topic[d][z] += 1;
        self.topic_word[z][w] += 1;
        self.topic_total[z] += 1;
    }

    fn remove(&mut self, d: usize, w: usize, z: usize) {
        self.doc_topic[d][z] -= 1;
        self.topic_word[z][w] -= 1;
        self.topic_total[z] -= 1;
    }

    /// One Gibbs sweep over every token in document order.
    fn sweep(&mut self, rng: &mut ChaCha8Rng, weights: &mut [f64]) {
        let vb = self.vocab_size as f64 * self.beta;
        for d in 0..self.words.len() {
            for i in 0..self.words[d].len() {
                let w = self.words[d][i];
                self.remove(d, w, self.assignments[d][i]);
                let mut total = 0.0;
                for (k, p) in weights.iter_mut().enumerate() {
                    *p = (self.doc_topic[d][k] as f64 + self.alpha) * (self.topic_word[k][w] as f64 + self.beta) / (self.topic_total[k] as f64 + vb);
                    total += *p;
                }
                let mut u = rng.gen::<f64>() * total;
                let mut z = self.n_topics - 1;
                for (k, &p) in weights.iter().enumerate() {
                    if u < p {
                        z = k;
                        break;
                    }
                    u -= p;
                }
                self.assignments[d][i] = z;
                self.add(d, w, z);
            }
        }
    }

    pub fn fit(docs: &[IndexedDocument], vocab_size: usize, cfg: &LdaConfig) -> Result<Self> {
        Self::fit_with(docs, vocab_size, cfg, |_, _| {})
    }

    /// As [`TopicModel::fit`], calling `on_sweep(sweep, model)` after each
    /// sweep.
    pub fn fit_with(docs: &[IndexedDocument], vocab_size: usize, cfg: &LdaConfig, mut on_sweep: impl FnMut(usize, &TopicModel)) -> Result<Self> {
        cfg.validate()?;
        if docs.is_empty() {
            return Err(Error::Empty("no documents for LDA".into()));
        }
        let words: Vec<Vec<usize>> = docs.iter().map(|d| d.text_ids.iter().copied().filter(|&t| !is_special(t)).collect()).collect();
        if words.iter().all(Vec::is_empty) {
            return Err(Error::Empty("no non-special tokens for LDA".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let assignments = words.iter().map(|w| w.iter().map(|_| rng.gen_range(0..cfg.n_topics)).collect()).collect();
        let mut m = Self::from_assignments(words, assignments, vocab_size, cfg)?;
        let mut weights = vec![0.0; cfg.n_topics];
        for s in 1..=cfg.iterations {
            m.sweep(&mut rng, &mut weights);
            on_sweep(s, &m);
        }
        Ok(m)
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn doc_topic_counts(&self, d: usize) -> &[u32] {
        &self.doc_topic[d]
    }

    pub fn topic_word_count(&self, k: usize, w: usize) -> u32 {
        self.topic_word[k][w]
    }

    /// Recounts every table from the assignments and compares.
    pub fn audit(&self) -> Result<()> {
        let k = self.n_topics;
        let mut dt = vec![vec![0u32; k]; self.words.len()];
        let mut tw = vec![vec![0u32; self.vocab_size]; k];
        let mut tt = vec![0u32; k];
        for (d, (ws, zs)) in self.words.iter().zip(&self.assignments).enumerate() {
            for (&w, &z) in ws.iter().zip(zs) {
                if z >= k {
                    return Err(Error::Config(format!("topic {z} outside [0, {k})")));
                }
                dt[d][z] += 1;
                tw[z][w] += 1;
                tt[z] += 1;
            }
        }
        if dt != self.doc_topic || tw != self.topic_word || tt != self.topic_total {
            return Err(Error::Config("LDA count tables disagree with assignments".into()));
        }
        Ok(())
    }

    /// Smoothed `θ_d` for document `d`.
    pub fn doc_topic_proportions(&self, d: usize) -> Vec<f64> {
        let n = self.words[d].len() as f64;
        let denom = n + self.n_topics as f64 * self.alpha;
        self.doc_topic[d].iter().map(|&c| (c as f64 + self.alpha) / denom).collect()
    }

    /// Largest-weight topic per fitted document, ties to the lowest index.
    pub fn assign_categories(&self) -> Vec<usize> {
        (0..self.words.len())
            .map(|d| {
                let theta = self.doc_topic_proportions(d);
                let mut best = 0;
                for k in 1..theta.len() {
                    if theta[k] > theta[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Per topic, the `k` non-special words with the highest topic-word
    /// count, ties broken lexicographically.
    pub fn top_words(&self, vocab: &Vocabulary, k: usize) -> Vec<Vec<String>> {
        (0..self.n_topics)
            .map(|t| {
                let mut ids: Vec<usize> = (0..self.vocab_size.min(vocab.len())).filter(|&w| !is_special(w)).collect();
                ids.sort_by(|&a, &b| self.topic_word[t][b].cmp(&self.topic_word[t][a]).then_with(|| vocab.token(a).cmp(vocab.token(b))));
                ids.truncate(k);
                ids.into_iter().map(|w| vocab.token(w).to_string()).collect()
            })
            .collect()
    }

    /// Plain-text report, one topic per line.
    pub fn render_top_words(&self, vocab: &Vocabulary, k: usize) -> String {
        self.top_words(vocab, k)
            .iter()
            .enumerate()
            .map(|(t, ws)| format!("{}\t{}\n", topic_label(t), ws.join(" ")))
            .collect()
    }
}
