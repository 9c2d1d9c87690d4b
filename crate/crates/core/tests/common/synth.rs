//! Planted synthetic corpora with known optimal predictors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samlm_core::corpus::{IndexedDocument, EOS, NUM_SPECIALS};

pub fn doc(id: usize, words: Vec<usize>) -> IndexedDocument {
    let mut text_ids = words;
    text_ids.push(EOS);
    IndexedDocument {
        id: format!("d{id}"),
        text_ids,
        title_ids: None,
        author_id: None,
        category_id: None,
    }
}

/// Two equiprobable categories (ids 1, 2); each document is one word drawn
/// uniformly from its category's 10-word half of a 20-word vocabulary.
pub struct CategoryCorpus;

impl CategoryCorpus {
    pub const WORDS: usize = 20;
    pub const VOCAB: usize = NUM_SPECIALS + Self::WORDS;

    pub fn generate(n: usize, doc_len: usize, seed: u64) -> Vec<IndexedDocument> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = rng.gen_range(0..2);
                let words = (0..doc_len).map(|_| NUM_SPECIALS + 10 * c + rng.gen_range(0..10)).collect();
                let mut d = doc(i, words);
                d.category_id = Some(1 + c);
                d
            })
            .collect()
    }

    /// Category of a content word.
    pub fn category_of(word: usize) -> usize {
        1 + (word - NUM_SPECIALS) / 10
    }
}

/// Two authors (ids 1, 2) writing from disjoint halves of the vocabulary.
pub struct AuthorCorpus;

impl AuthorCorpus {
    pub const WORDS: usize = 20;
    pub const VOCAB: usize = NUM_SPECIALS + Self::WORDS;

    pub fn generate(n: usize, seed: u64) -> Vec<IndexedDocument> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let a = rng.gen_range(0..2);
                let len = rng.gen_range(3..7);
                let words = (0..len).map(|_| NUM_SPECIALS + 10 * a + rng.gen_range(0..10)).collect();
                let mut d = doc(i, words);
                d.author_id = Some(1 + a);
                d
            })
            .collect()
    }

    pub fn author_of(word: usize) -> usize {
        1 + (word - NUM_SPECIALS) / 10
    }
}

/// Titles of `m` tokens: one topic word (one of `groups`) at a random
/// position among filler words. The topic selects which subset of the
/// shared text pool the main text is drawn from.
pub struct TitleCorpus {
    pub groups: usize,
    pub fillers: usize,
    pub pool: usize,
    pub subset: usize,
    pub m: usize,
    pub doc_len: usize,
    /// Text subset of each group, as word ids.
    pub group_words: Vec<Vec<usize>>,
}

impl TitleCorpus {
    pub fn new(groups: usize, fillers: usize, pool: usize, subset: usize, m: usize, doc_len: usize, seed: u64) -> Self {
        use rand::seq::index::sample;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = NUM_SPECIALS + groups + fillers;
        let mut group_words: Vec<Vec<usize>> = Vec::new();
        while group_words.len() < groups {
            let mut s: Vec<usize> = sample(&mut rng, pool, subset).into_iter().map(|i| base + i).collect();
            s.sort();
            if !group_words.contains(&s) {
                group_words.push(s);
            }
        }
        TitleCorpus { groups, fillers, pool, subset, m, doc_len, group_words }
    }

    pub fn vocab(&self) -> usize {
        NUM_SPECIALS + self.groups + self.fillers + self.pool
    }

    pub fn topic_word(&self, g: usize) -> usize {
        NUM_SPECIALS + g
    }

    /// Documents with the position of the topic word in each title.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<(IndexedDocument, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let g = rng.gen_range(0..self.groups);
                let pos = rng.gen_range(0..self.m);
                let title = (0..self.m)
                    .map(|j| if j == pos { self.topic_word(g) } else { NUM_SPECIALS + self.groups + rng.gen_range(0..self.fillers) })
                    .collect();
                let ws = &self.group_words[g];
                let words = (0..self.doc_len).map(|_| ws[rng.gen_range(0..ws.len())]).collect();
                let mut d = doc(i, words);
                d.title_ids = Some(title);
                (d, pos)
            })
            .collect()
    }
}

/// About `tokens` tokens of first-order Markov text over `words` content
/// words, cut into documents of 3 to 12 words.
pub fn markov_docs(tokens: usize, words: usize, seed: u64) -> Vec<IndexedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut total = 0;
    while total < tokens {
        let len = rng.gen_range(3..13).min(tokens - total).max(1);
        let mut prev = rng.gen_range(0..words);
        let mut ws = Vec::with_capacity(len);
        for _ in 0..len {
            // favour the successor word, otherwise uniform
            prev = if rng.gen_bool(0.6) { (prev + 1) % words } else { rng.gen_range(0..words) };
            ws.push(NUM_SPECIALS + prev);
        }
        total += len + 1;
        docs.push(doc(docs.len(), ws));
    }
    docs
}

/// `k` planted topics over disjoint blocks of `per_topic` words; each
/// document draws all its words from one topic, the most frequent word of
/// each block is its first id. Returns documents and planted topics.
pub fn planted_topics(k: usize, per_topic: usize, n_docs: usize, doc_len: usize, seed: u64) -> (Vec<IndexedDocument>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut truth = Vec::new();
    for i in 0..n_docs {
        let t = i % k;
        let words = (0..doc_len)
            .map(|_| {
                // the block's first word carries a third of the mass
                let j = if rng.gen_bool(1.0 / 3.0) { 0 } else { rng.gen_range(0..per_topic) };
                NUM_SPECIALS + t * per_topic + j
            })
            .collect();
        docs.push(doc(i, words));
        truth.push(t);
    }
    (docs, truth)
}
