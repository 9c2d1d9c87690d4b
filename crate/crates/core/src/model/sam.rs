use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttributeKind, ModelConfig};
use crate::attention::{backward_title, encode_title, AttentionCache, AttentionTrace, AttributeAttention, TitleAttention, TitleEncoding};
use crate::corpus::{IndexedDocument, BOS};
use crate::error::{Error, Result};
use crate::gru::{GruCache, GruCell};
use crate::tensor::{self, concat, log_softmax, softmax, uniform_init, Gradients, Mat, ParamId, ParamStore, Params};

/// Parameter handles and wiring for one variant. Holds no values, so the
/// same architecture can be evaluated against any compatible [`Params`].
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub embed: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub main: GruCell,
    pub title: Option<GruCell>,
    pub title_att: Option<TitleAttention>,
    pub attr_att: Option<AttributeAttention>,
    pub author_table: Option<ParamId>,
    pub category_table: Option<ParamId>,
    /// Affine map title state (d̃) → initial hidden state (d).
    pub state_map: Option<(ParamId, ParamId)>,
    /// Projection of the mean title embedding (d → d̃).
    pub bow_proj: Option<ParamId>,
}

/// Per-document conditioning computed once before the main-text loop.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub title: Option<TitleEncoding>,
    pub author: Option<usize>,
    pub category: Option<usize>,
    bow_ids: Option<Vec<usize>>,
    bow_mean: Option<Mat>,
    pub bow: Option<Mat>,
    pub h0: Mat,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub logits: Mat,
    pub h: Mat,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct StepCache {
    input: usize,
    gru: GruCache,
    title_att: Option<AttentionCache>,
    attr_att: Option<AttentionCache>,
    cands: Vec<Mat>,
    h: Mat,
}

/// Result of a teacher-forced pass over one document.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub total_nll: f64,
    /// `-ln p(target_i)` for every main-text target including EOS.
    pub per_word_nll: Vec<f64>,
    pub trace: AttentionTrace,
    cond: Conditioning,
    targets: Vec<usize>,
    steps: Vec<StepCache>,
    probs: Vec<Mat>,
}

impl ForwardPass {
    pub fn conditioning(&self) -> &Conditioning {
        &self.cond
    }

    pub fn tokens(&self) -> usize {
        self.per_word_nll.len()
    }
}

impl Architecture {
    fn build(config: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let (d, da, v) = (config.hidden, config.attr_dim, config.vocab_size);
        let variant = config.variant;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let rng = &mut rng;

        let embed = store.add("embed", uniform_init(v, d, rng))?;
        let title = if variant.has_title_encoder() {
            Some(GruCell::new(store, "title", d, da, rng)?)
        } else {
            None
        };
        let title_att = if variant.candidates().contains(&AttributeKind::Title) {
            Some(TitleAttention::new(store, da, d, rng)?)
        } else {
            None
        };
        let author_table = if variant.needs_author() {
            Some(store.add("author_table", uniform_init(config.n_authors, da, rng))?)
        } else {
            None
        };
        let category_table = if variant.needs_category() {
            Some(store.add("category_table", uniform_init(config.n_categories, da, rng))?)
        } else {
            None
        };
        let attr_att = if variant.candidates().len() > 1 {
            Some(AttributeAttention::new(store, da, d, rng)?)
        } else {
            None
        };
        let bow_proj = if variant.bag_of_words() {
            Some(store.add("bow.P", uniform_init(da, d, rng))?)
        } else {
            None
        };
        let state_map = if variant.state_init() {
            let w = if da == d { Mat::identity(d) } else { uniform_init(d, da, rng) };
            Some((store.add("state.W", w)?, store.add("state.b", Mat::zeros(d, 1))?))
        } else {
            None
        };
        let main = GruCell::new(store, "main", config.input_dim(), d, rng)?;
        let out_w = store.add("out.W", uniform_init(v, d, rng))?;
        let out_b = store.add("out.b", Mat::zeros(v, 1))?;
        Ok(Architecture {
            config: config.clone(),
            embed,
            out_w,
            out_b,
            main,
            title,
            title_att,
            attr_att,
            author_table,
            category_table,
            state_map,
            bow_proj,
        })
    }

    fn check_id(&self, what: &str, id: usize, n: usize) -> Result<()> {
        if id >= n {
            return Err(Error::Config(format!("{what} id {id} out of range ({n})")));
        }
        Ok(())
    }

    fn missing(&self, attribute: &'static str, doc_id: &str) -> Error {
        Error::MissingAttribute {
            variant: self.config.variant.to_string(),
            attribute,
            doc: doc_id.to_string(),
        }
    }

    /// Encodes the attributes a variant reads and derives the initial state.
    /// Attributes the variant ignores are not inspected.
    pub fn condition(&self, params: &Params, title_ids: Option<&[usize]>, author: Option<usize>, category: Option<usize>, doc_id: &str) -> Result<Conditioning> {
        let variant = self.config.variant;
        let d = self.config.hidden;
        let title_ids = if variant.needs_title() {
            let t = title_ids.filter(|t| !t.is_empty()).ok_or_else(|| self.missing("title", doc_id))?;
            for &id in t {
                self.check_id("title token", id, self.config.vocab_size)?;
            }
            Some(t)
        } else {
            None
        };
        let author = if variant.needs_author() {
            let a = author.ok_or_else(|| self.missing("author", doc_id))?;
            self.check_id("author", a, self.config.n_authors)?;
            Some(a)
        } else {
            None
        };
        let category = if variant.needs_category() {
            let c = category.ok_or_else(|| self.missing("category", doc_id))?;
            self.check_id("category", c, self.config.n_categories)?;
            Some(c)
        } else {
            None
        };

        let title = match (&self.title, title_ids) {
            (Some(cell), Some(ids)) => Some(encode_title(cell, params, self.embed, ids)?),
            _ => None,
        };
        let bow_ids = self.bow_proj.and(title_ids).map(<[usize]>::to_vec);
        let (bow_mean, bow) = match (self.bow_proj, title_ids) {
            (Some(p), Some(ids)) => {
                let e = &params[self.embed];
                let mut mean = Mat::zeros(d, 1);
                for &id in ids {
                    for (m, x) in mean.data_mut().iter_mut().zip(e.row(id)) {
                        *m += x;
                    }
                }
                mean.scale(1.0 / ids.len() as f64);
                let bow = params[p].matvec(&mean)?;
                (Some(mean), Some(bow))
            }
            _ => (None, None),
        };
        let h0 = match (self.state_map, &title) {
            (Some((w, b)), Some(enc)) => params[w].matvec(enc.last())?.add(&params[b])?,
            _ => Mat::zeros(d, 1),
        };
        Ok(Conditioning {
            title,
            author,
            category,
            bow_ids,
            bow_mean,
            bow,
            h0,
        })
    }

    /// One transition: reads `input` under `cond` from state `h_prev`.
    pub fn step(&self, params: &Params, cond: &Conditioning, h_prev: &Mat, input: usize) -> Result<(StepOutput, StepCache)> {
        self.check_id("token", input, self.config.vocab_size)?;
        let x = params[self.embed].row_col(input);
        let mut title_cache = None;
        let mut attr_cache = None;
        let mut cands = Vec::new();
        let mut alpha = None;
        let mut beta = None;
        let kinds = self.config.variant.candidates();
        let ctx = if !kinds.is_empty() {
            for kind in kinds {
                let c = match kind {
                    AttributeKind::Title => {
                        let att = self.title_att.as_ref().expect("title attention");
                        let enc = cond.title.as_ref().expect("title encoding");
                        let (c, cache) = att.title_context(params, enc, h_prev)?;
                        alpha = Some(cache.weights.clone());
                        title_cache = Some(cache);
                        c
                    }
                    AttributeKind::Author => params[self.author_table.expect("author table")].row_col(cond.author.expect("author")),
                    AttributeKind::Category => params[self.category_table.expect("category table")].row_col(cond.category.expect("category")),
                };
                cands.push(c);
            }
            match &self.attr_att {
                Some(att) => {
                    let refs: Vec<&Mat> = cands.iter().collect();
                    let (c, cache) = att.attribute_context(params, &refs, h_prev)?;
                    beta = Some(cache.weights.clone());
                    attr_cache = Some(cache);
                    Some(c)
                }
                None => {
                    beta = Some(vec![1.0]);
                    Some(cands[0].clone())
                }
            }
        } else {
            cond.bow.clone()
        };
        let w = match &ctx {
            Some(c) => concat(&x, c)?,
            None => x,
        };
        let (h, gru) = self.main.step(params, &w, h_prev)?;
        let logits = params[self.out_w].matvec(&h)?.add(&params[self.out_b])?;
        if !logits.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        let cache = StepCache {
            input,
            gru,
            title_att: title_cache,
            attr_att: attr_cache,
            cands,
            h: h.clone(),
        };
        Ok((StepOutput { logits, h, alpha, beta }, cache))
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.config.variant.candidates().iter().map(|k| k.name().to_string()).collect()
    }

    /// Teacher-forced pass: step 0 reads BOS, step `i` reads target `i-1`.
    pub fn forward(&self, params: &Params, doc: &IndexedDocument) -> Result<ForwardPass> {
        if doc.text_ids.is_empty() {
            return Err(Error::Empty(format!("document {} has no tokens", doc.id)));
        }
        let cond = self.condition(params, doc.title_ids.as_deref(), doc.author_id, doc.category_id, &doc.id)?;
        let n = doc.text_ids.len();
        let mut trace = AttentionTrace {
            attribute_names: self.attribute_names(),
            ..Default::default()
        };
        let mut steps = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        let mut per_word_nll = Vec::with_capacity(n);
        let mut h = cond.h0.clone();
        for (i, &target) in doc.text_ids.iter().enumerate() {
            self.check_id("token", target, self.config.vocab_size)?;
            let input = if i == 0 { BOS } else { doc.text_ids[i - 1] };
            let (out, cache) = self.step(params, &cond, &h, input)?;
            per_word_nll.push(-log_softmax(&out.logits).get(target, 0));
            probs.push(softmax(&out.logits));
            if let Some(a) = out.alpha {
                trace.alpha.push(a);
            }
            if let Some(b) = out.beta {
                trace.beta.push(b);
            }
            h = out.h;
            steps.push(cache);
        }
        Ok(ForwardPass {
            total_nll: per_word_nll.iter().sum(),
            per_word_nll,
            trace,
            cond,
            targets: doc.text_ids.clone(),
            steps,
            probs,
        })
    }

    /// BPTT for `Σ_i weights[i] · nll_i`, accumulated into `grads`.
    pub fn backward(&self, params: &Params, grads: &mut Gradients, pass: &ForwardPass, weights: &[f64]) -> Result<()> {
        let n = pass.steps.len();
        if weights.len() != n {
            return Err(Error::Shape {
                op: "backward weights",
                left: (n, 1),
                right: (weights.len(), 1),
            });
        }
        let (d, da) = (self.config.hidden, self.config.attr_dim);
        let cond = &pass.cond;
        let kinds = self.config.variant.candidates();
        let mut d_states: Vec<Mat> = cond
            .title
            .as_ref()
            .map(|enc| vec![Mat::zeros(da, 1); enc.len()])
            .unwrap_or_default();
        let mut d_author = Mat::zeros(da, 1);
        let mut d_category = Mat::zeros(da, 1);
        let mut d_bow = Mat::zeros(da, 1);
        let mut dh_next = Mat::zeros(d, 1);

        for i in (0..n).rev() {
            let step = &pass.steps[i];
            let mut dlogits = pass.probs[i].clone();
            dlogits.data_mut()[pass.targets[i]] -= 1.0;
            dlogits.scale(weights[i]);
            grads[self.out_w].add_outer(&dlogits, &step.h)?;
            grads[self.out_b].add_assign(&dlogits)?;
            let mut dh = params[self.out_w].matvec_t(&dlogits)?;
            dh.add_assign(&dh_next)?;

            let (dw, mut dh_prev) = self.main.backward(params, grads, &step.gru, &dh)?;
            let (dx, dctx) = dw.split_col(d)?;
            grads[self.embed].add_to_row(step.input, dx.data());

            if !kinds.is_empty() {
                let dcands = match (&self.attr_att, &step.attr_att) {
                    (Some(att), Some(cache)) => {
                        let refs: Vec<&Mat> = step.cands.iter().collect();
                        let (dc, dq) = att.backward(params, grads, cache, &refs, &dctx)?;
                        dh_prev.add_assign(&dq)?;
                        dc
                    }
                    _ => vec![dctx],
                };
                for (kind, dc) in kinds.iter().zip(dcands) {
                    match kind {
                        AttributeKind::Title => {
                            let att = self.title_att.as_ref().expect("title attention");
                            let enc = cond.title.as_ref().expect("title encoding");
                            let cache = step.title_att.as_ref().expect("title attention cache");
                            let (ds, dq) = att.backward(params, grads, cache, enc, &dc)?;
                            for (acc, g) in d_states.iter_mut().zip(&ds) {
                                acc.add_assign(g)?;
                            }
                            dh_prev.add_assign(&dq)?;
                        }
                        AttributeKind::Author => d_author.add_assign(&dc)?,
                        AttributeKind::Category => d_category.add_assign(&dc)?,
                    }
                }
            } else if self.bow_proj.is_some() {
                d_bow.add_assign(&dctx)?;
            }
            dh_next = dh_prev;
        }

        if let (Some((w, b)), Some(enc)) = (self.state_map, &cond.title) {
            grads[w].add_outer(&dh_next, enc.last())?;
            grads[b].add_assign(&dh_next)?;
            let ds = params[w].matvec_t(&dh_next)?;
            d_states.last_mut().expect("non-empty title").add_assign(&ds)?;
        }
        if let (Some(t), Some(a)) = (self.author_table, cond.author) {
            grads[t].add_to_row(a, d_author.data());
        }
        if let (Some(t), Some(c)) = (self.category_table, cond.category) {
            grads[t].add_to_row(c, d_category.data());
        }
        if let (Some(p), Some(mean), Some(enc_ids)) = (self.bow_proj, &cond.bow_mean, &cond.bow_ids) {
            grads[p].add_outer(&d_bow, mean)?;
            let mut dmean = params[p].matvec_t(&d_bow)?;
            dmean.scale(1.0 / enc_ids.len() as f64);
            for &id in enc_ids {
                grads[self.embed].add_to_row(id, dmean.data());
            }
        }
        if let (Some(cell), Some(enc)) = (&self.title, &cond.title) {
            backward_title(cell, params, grads, self.embed, enc, &d_states)?;
        }
        Ok(())
    }
}

/// A built model: architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct SamModel {
    arch: Architecture,
    params: ParamStore,
}

impl SamModel {
    /// Initializes every weight uniformly in (-0.1, 0.1) and every bias at
    /// zero from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        let arch = Architecture::build(&config, &mut params)?;
        Ok(SamModel { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward_document(&self, doc: &IndexedDocument) -> Result<ForwardPass> {
        self.arch.forward(&self.params.values, doc)
    }

    /// Accumulates gradients of `Σ weights[i]·nll_i` into `grads`.
    pub fn backward_document(&self, pass: &ForwardPass, weights: &[f64], grads: &mut Gradients) -> Result<()> {
        self.arch.backward(&self.params.values, grads, pass, weights)
    }

    /// Forward + backward with the same weight on every token, into the
    /// store's own gradient buffers. Returns the document NLL.
    pub fn accumulate_document(&mut self, doc: &IndexedDocument, weight: f64) -> Result<f64> {
        let pass = self.forward_document(doc)?;
        let weights = vec![weight; pass.tokens()];
        self.arch.backward(&self.params.values, &mut self.params.grads, &pass, &weights)?;
        Ok(pass.total_nll)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        tensor::encode_checkpoint(&self.params, self.config())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, tensors) = tensor::decode_checkpoint(bytes)?;
        let config: ModelConfig = serde_json::from_value(header.config)?;
        let mut model = SamModel::build(config)?;
        model.params.load_values(tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        tensor::write_checkpoint(path, &self.params, self.config())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
impl ForwardPass {
    pub(crate) fn probs_for_test(&self) -> &[Mat] {
        &self.probs
    }
}
