//! Title-word attention and attribute-level attention.
//!
//! Both score a key `k` against the previous main-text state `h` with the
//! bilinear form `kᵀ·M·h`, normalize the scores with a softmax and return
//! the weighted sum of the keys.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gru::{GruCache, GruCell};
use crate::tensor::{softmax, uniform_init, Gradients, Mat, ParamId, ParamStore, Params};

/// Shared bilinear-softmax machinery; `weight` is `key_dim x query_dim`.
#[derive(Clone, Debug)]
pub struct BilinearAttention {
    pub weight: ParamId,
    pub key_dim: usize,
    pub query_dim: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    query: Mat,
    projected: Mat,
    pub weights: Vec<f64>,
}

impl BilinearAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, key_dim: usize, query_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(BilinearAttention {
            weight: store.add(name, uniform_init(key_dim, query_dim, rng))?,
            key_dim,
            query_dim,
        })
    }

    pub fn attend(&self, params: &Params, keys: &[&Mat], query: &Mat) -> Result<(Mat, AttentionCache)> {
        if keys.is_empty() {
            return Err(Error::Empty("attention over zero keys".into()));
        }
        let projected = params[self.weight].matvec(query)?;
        let scores = keys.iter().map(|k| k.dot(&projected)).collect::<Result<Vec<_>>>()?;
        let weights = softmax(&Mat::col(scores)).into_data();
        let mut ctx = Mat::zeros(self.key_dim, 1);
        for (k, &a) in keys.iter().zip(&weights) {
            ctx.add_scaled(k, a)?;
        }
        Ok((
            ctx,
            AttentionCache {
                query: query.clone(),
                projected,
                weights,
            },
        ))
    }

    /// Given `dctx`, accumulates `dM` and returns `(dkeys, dquery)`.
    pub fn backward(&self, params: &Params, grads: &mut Gradients, cache: &AttentionCache, keys: &[&Mat], dctx: &Mat) -> Result<(Vec<Mat>, Mat)> {
        let a = &cache.weights;
        // d loss / d weight_t, then through the softmax Jacobian
        let dweights = keys.iter().map(|k| k.dot(dctx)).collect::<Result<Vec<_>>>()?;
        let mean: f64 = a.iter().zip(&dweights).map(|(x, y)| x * y).sum();
        let dscores: Vec<f64> = a.iter().zip(&dweights).map(|(x, y)| x * (y - mean)).collect();

        let mut dprojected = Mat::zeros(self.key_dim, 1);
        let mut dkeys = Vec::with_capacity(keys.len());
        for ((k, &at), &ds) in keys.iter().zip(a).zip(&dscores) {
            dprojected.add_scaled(k, ds)?;
            let mut dk = dctx.scaled(at);
            dk.add_scaled(&cache.projected, ds)?;
            dkeys.push(dk);
        }
        grads[self.weight].add_outer(&dprojected, &cache.query)?;
        let dquery = params[self.weight].matvec_t(&dprojected)?;
        Ok((dkeys, dquery))
    }
}

/// Title encoder hidden states, one per title word.
#[derive(Clone, Debug)]
pub struct TitleEncoding {
    pub ids: Vec<usize>,
    pub states: Vec<Mat>,
    pub caches: Vec<GruCache>,
}

impl TitleEncoding {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &Mat {
        self.states.last().expect("non-empty title")
    }

    pub fn state_refs(&self) -> Vec<&Mat> {
        self.states.iter().collect()
    }
}

/// Runs the title GRU left to right from a zero state over the embedding
/// rows of `title_ids`.
pub fn encode_title(encoder: &GruCell, params: &Params, embed: ParamId, title_ids: &[usize]) -> Result<TitleEncoding> {
    if title_ids.is_empty() {
        return Err(Error::Empty("title has no tokens".into()));
    }
    let e = &params[embed];
    let mut h = Mat::zeros(encoder.hidden_dim, 1);
    let mut states = Vec::with_capacity(title_ids.len());
    let mut caches = Vec::with_capacity(title_ids.len());
    for &id in title_ids {
        let (next, cache) = encoder.step(params, &e.row_col(id), &h)?;
        states.push(next.clone());
        caches.push(cache);
        h = next;
    }
    Ok(TitleEncoding {
        ids: title_ids.to_vec(),
        states,
        caches,
    })
}

/// BPTT through the title encoder given the loss gradient w.r.t. each state.
pub fn backward_title(encoder: &GruCell, params: &Params, grads: &mut Gradients, embed: ParamId, enc: &TitleEncoding, dstates: &[Mat]) -> Result<()> {
    let mut carry = Mat::zeros(encoder.hidden_dim, 1);
    for t in (0..enc.len()).rev() {
        let dh = dstates[t].add(&carry)?;
        let (dw, dprev) = encoder.backward(params, grads, &enc.caches[t], &dh)?;
        grads[embed].add_to_row(enc.ids[t], dw.data());
        carry = dprev;
    }
    Ok(())
}

/// Title-word attention with score `ϑ_tᵀ·M1·h_prev`.
#[derive(Clone, Debug)]
pub struct TitleAttention(pub BilinearAttention);

/// Attribute-level attention with score `C_kᵀ·M2·h_prev`.
#[derive(Clone, Debug)]
pub struct AttributeAttention(pub BilinearAttention);

impl TitleAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, attr_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        BilinearAttention::new(store, "title_att.M1", attr_dim, hidden, rng).map(TitleAttention)
    }

    pub fn m1(&self) -> ParamId {
        self.0.weight
    }

    /// Title context for one main-text step and its attention column.
    pub fn title_context(&self, params: &Params, enc: &TitleEncoding, h_prev: &Mat) -> Result<(Mat, AttentionCache)> {
        self.0.attend(params, &enc.state_refs(), h_prev)
    }

    /// Returns `(dstates, dh_prev)`.
    pub fn backward(&self, params: &Params, grads: &mut Gradients, cache: &AttentionCache, enc: &TitleEncoding, dctx: &Mat) -> Result<(Vec<Mat>, Mat)> {
        self.0.backward(params, grads, cache, &enc.state_refs(), dctx)
    }
}

impl AttributeAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, attr_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        BilinearAttention::new(store, "attr_att.M2", attr_dim, hidden, rng).map(AttributeAttention)
    }

    pub fn m2(&self) -> ParamId {
        self.0.weight
    }

    /// Fuses the candidate attribute embeddings into one context.
    pub fn attribute_context(&self, params: &Params, cands: &[&Mat], h_prev: &Mat) -> Result<(Mat, AttentionCache)> {
        if cands.is_empty() {
            return Err(Error::Empty("attribute attention needs at least one candidate".into()));
        }
        self.0.attend(params, cands, h_prev)
    }

    /// Returns `(dcands, dh_prev)`.
    pub fn backward(&self, params: &Params, grads: &mut Gradients, cache: &AttentionCache, cands: &[&Mat], dctx: &Mat) -> Result<(Vec<Mat>, Mat)> {
        self.0.backward(params, grads, cache, cands, dctx)
    }
}

/// Attention weights captured step by step: `alpha[i]` is the title column
/// for main-text step `i` (length m) and `beta[i]` the attribute column
/// (length K, one entry per name in `attribute_names`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub attribute_names: Vec<String>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl AttentionTrace {
    pub fn steps(&self) -> usize {
        self.alpha.len().max(self.beta.len())
    }

    pub fn is_empty(&self) -> bool {
        self.steps() == 0
    }

    pub fn title_len(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    /// Rows of the alpha block (title word × step).
    pub fn alpha_rows(&self) -> Vec<Vec<f64>> {
        transpose(&self.alpha)
    }

    pub fn beta_rows(&self) -> Vec<Vec<f64>> {
        transpose(&self.beta)
    }

    /// CSV with a header of main-text tokens, then one row per title word
    /// (alpha) and one row per attribute (beta), cells at 6 decimals.
    pub fn write_csv<W: Write>(&self, out: W, title_tokens: &[String], text_tokens: &[String]) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("attention trace has no steps".into()));
        }
        if text_tokens.len() != self.steps() {
            return Err(Error::Config(format!(
                "{} text tokens for {} attention steps",
                text_tokens.len(),
                self.steps()
            )));
        }
        if !self.alpha.is_empty() && title_tokens.len() != self.title_len() {
            return Err(Error::Config(format!(
                "{} title tokens for alpha block of height {}",
                title_tokens.len(),
                self.title_len()
            )));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(text_tokens.iter().cloned());
        w.write_record(&header)?;
        let alpha_rows = self.alpha_rows();
        let beta_rows = self.beta_rows();
        let labelled = title_tokens
            .iter()
            .zip(&alpha_rows)
            .chain(self.attribute_names.iter().zip(&beta_rows));
        for (label, row) in labelled {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|x| format!("{x:.6}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<attention csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, title_tokens: &[String], text_tokens: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), title_tokens, text_tokens)
    }
}

fn transpose(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = cols.first().map_or(0, Vec::len);
    (0..h).map(|r| cols.iter().map(|c| c[r]).collect()).collect()
}

/// Parsed attention CSV: header tokens and labelled rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn read_attention_csv<R: std::io::Read>(input: R) -> Result<AttentionTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let columns = r.headers()?.iter().skip(1).map(str::to_string).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let label = rec.get(0).unwrap_or_default().to_string();
        let values = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 2,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((label, values));
    }
    Ok(AttentionTable { columns, rows })
}
