//! Kneser-Ney by direct summation over the raw token sequences: every count
//! is recomputed by scanning the corpus at query time.

use std::collections::BTreeSet;

use samlm_core::corpus::{IndexedDocument, BOS};

pub struct DirectKn {
    seqs: Vec<Vec<usize>>,
    order: usize,
    vocab: usize,
    discounts: Vec<f64>,
}

impl DirectKn {
    pub fn new(docs: &[IndexedDocument], order: usize, vocab: usize) -> Self {
        let seqs: Vec<Vec<usize>> = docs
            .iter()
            .map(|d| std::iter::once(BOS).chain(d.text_ids.iter().copied()).collect())
            .collect();
        let mut me = DirectKn {
            seqs,
            order,
            vocab,
            discounts: Vec::new(),
        };
        for k in 1..=order {
            let grams = me.distinct_grams(k);
            let n1 = grams.iter().filter(|g| me.adjusted(g) == 1).count();
            let n2 = grams.iter().filter(|g| me.adjusted(g) == 2).count();
            let d = if n1 == 0 || n2 == 0 { 0.5 } else { n1 as f64 / (n1 as f64 + 2.0 * n2 as f64) };
            me.discounts.push(d);
        }
        me
    }

    /// Distinct k-grams whose last token is a predicted position.
    fn distinct_grams(&self, k: usize) -> BTreeSet<Vec<usize>> {
        let mut out = BTreeSet::new();
        for s in &self.seqs {
            for end in 1..s.len() {
                if end + 1 >= k {
                    out.insert(s[end + 1 - k..=end].to_vec());
                }
            }
        }
        out
    }

    fn raw(&self, g: &[usize]) -> usize {
        let k = g.len();
        self.seqs
            .iter()
            .map(|s| (1..s.len()).filter(|&end| end + 1 >= k && &s[end + 1 - k..=end] == g).count())
            .sum()
    }

    fn left_extensions(&self, g: &[usize]) -> usize {
        let mut left = BTreeSet::new();
        for s in &self.seqs {
            for start in 1..s.len() {
                if start + g.len() <= s.len() && &s[start..start + g.len()] == g {
                    left.insert(s[start - 1]);
                }
            }
        }
        left.len()
    }

    fn adjusted(&self, g: &[usize]) -> usize {
        if g.len() == self.order || g[0] == BOS {
            self.raw(g)
        } else {
            self.left_extensions(g)
        }
    }

    fn level(&self, ctx: &[usize], w: usize) -> f64 {
        let k = ctx.len() + 1;
        let lower = if ctx.is_empty() { 1.0 / self.vocab as f64 } else { self.level(&ctx[1..], w) };
        let counts: Vec<usize> = (0..self.vocab)
            .map(|x| {
                let mut g = ctx.to_vec();
                g.push(x);
                self.adjusted(&g)
            })
            .collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return lower;
        }
        let types = counts.iter().filter(|&&c| c > 0).count();
        let d = self.discounts[k - 1];
        (counts[w] as f64 - d).max(0.0) / total as f64 + d * types as f64 / total as f64 * lower
    }

    pub fn prob(&self, history: &[usize], w: usize) -> f64 {
        let keep = (self.order - 1).min(history.len());
        self.level(&history[history.len() - keep..], w)
    }

    pub fn perplexity(&self, docs: &[IndexedDocument]) -> f64 {
        let mut nll = 0.0;
        let mut n = 0;
        for d in docs {
            let s: Vec<usize> = std::iter::once(BOS).chain(d.text_ids.iter().copied()).collect();
            for i in 1..s.len() {
                nll -= self.prob(&s[..i], s[i]).ln();
                n += 1;
            }
        }
        (nll / n as f64).exp()
    }
}
