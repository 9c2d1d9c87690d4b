//! Mini-batch Adam training with early stopping on validation NLL.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::IndexedDocument;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::SamModel;
use crate::tensor::{Gradients, Mat, ParamStore};

/// Documents per gradient-accumulation chunk. Fixed so the summation order
/// does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// Batches are formed by sorting pools of this many batches by length.
const BUCKET_POOL: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 20,
            max_epochs: 100,
            patience: 3,
            clip_norm: Some(5.0),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

/// Adam moments, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.values.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from `store.grads`, which are zeroed
/// afterwards. Parameters are untouched if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Shape {
            op: "adam_step",
            left: (state.m.len(), 1),
            right: (store.len(), 1),
        });
    }
    for (i, g) in store.grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", store.names()[i])));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ParamStore { values, grads, .. } = store;
    for (((p, g), m), v) in values.iter_mut().zip(grads.iter()).zip(&mut state.m).zip(&mut state.v) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    store.zero_grads();
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ppl: f64,
    pub valid_ppl: f64,
    pub valid_nll: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: SamModel,
    pub last: SamModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Mean per-token validation NLL of `best`.
    pub best_valid_nll: f64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn best_valid_ppl(&self) -> f64 {
        self.best_valid_nll.exp()
    }
}

#[derive(Serialize)]
struct TrainMeta<'a> {
    variant: String,
    train_config: &'a TrainConfig,
    model_config: &'a crate::model::ModelConfig,
    train_docs: usize,
    valid_docs: usize,
    parameters: usize,
    best_epoch: usize,
    best_valid_ppl: f64,
    stopped_early: bool,
}

/// Where checkpoints and history go; `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct RunDir(pub Option<PathBuf>);

impl RunDir {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.0.as_ref().map(|d| d.join(name))
    }
}

/// Shuffled batch order: shuffle, sort pools of documents by length, cut
/// into batches, shuffle the batches.
fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * BUCKET_POOL) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Gradients of the token-mean batch NLL. Returns (sum NLL, tokens).
fn batch_gradient(model: &SamModel, docs: &[&IndexedDocument], out: &mut Gradients) -> Result<(f64, usize)> {
    let tokens: usize = docs.iter().map(|d| d.text_ids.len()).sum();
    let w = 1.0 / tokens as f64;
    let parts: Vec<(Gradients, f64)> = docs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros_like(&model.params().values);
            let mut nll = 0.0;
            for d in chunk {
                let pass = model.forward_document(d)?;
                model.backward_document(&pass, &vec![w; pass.tokens()], &mut g)?;
                nll += pass.total_nll;
            }
            Ok((g, nll))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for (g, nll) in &parts {
        out.add_assign(g)?;
        total += nll;
    }
    Ok((total, tokens))
}

/// Trains `model` in place and returns the best (lowest validation NLL) and
/// final snapshots.
pub fn train(
    model: SamModel,
    train_docs: &[IndexedDocument],
    valid_docs: &[IndexedDocument],
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_docs.is_empty() || valid_docs.is_empty() {
        return Err(Error::Empty("training and validation splits must be non-empty".into()));
    }
    if let Some(dir) = &run.0 {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut history_file = match run.path("history.csv") {
        Some(p) => {
            let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "epoch,train_ppl,valid_ppl,seconds").map_err(|e| Error::io(&p, e))?;
            Some((f, p))
        }
        None => None,
    };

    let mut model = model;
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lengths: Vec<usize> = train_docs.iter().map(|d| d.text_ids.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(SamModel, f64, usize)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut train_nll = 0.0;
        let mut train_tokens = 0;
        for batch in make_batches(&lengths, cfg.batch_size, &mut rng) {
            let docs: Vec<&IndexedDocument> = batch.iter().map(|&i| &train_docs[i]).collect();
            let mut grads = std::mem::take(&mut model.params_mut().grads);
            let (nll, tokens) = batch_gradient(&model, &docs, &mut grads)?;
            if let Some(c) = cfg.clip_norm {
                grads.clip_global_norm(c);
            }
            model.params_mut().grads = grads;
            adam_step(model.params_mut(), &mut adam, cfg)?;
            train_nll += nll;
            train_tokens += tokens;
        }
        let valid = eval::perplexity(&model, valid_docs)?;
        let valid_nll = valid.mean_nll();
        if !valid_nll.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation NLL at epoch {epoch} is {valid_nll} (train ppl {:.4})",
                (train_nll / train_tokens as f64).exp()
            )));
        }
        let rec = EpochRecord {
            epoch,
            train_ppl: (train_nll / train_tokens as f64).exp(),
            valid_ppl: valid_nll.exp(),
            valid_nll,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train ppl {:.4}, valid ppl {:.4} ({:.1}s)",
            rec.train_ppl,
            rec.valid_ppl,
            rec.seconds
        );
        if let Some((f, p)) = &mut history_file {
            writeln!(f, "{},{:.6},{:.6},{:.3}", rec.epoch, rec.train_ppl, rec.valid_ppl, rec.seconds).map_err(|e| Error::io(&*p, e))?;
        }
        history.push(rec);

        if best.as_ref().map_or(true, |(_, b, _)| valid_nll < *b) {
            if let Some(p) = run.path("best.ckpt") {
                model.save(&p)?;
            }
            best = Some((model.clone(), valid_nll, epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }

    let (best_model, best_valid_nll, best_epoch) = best.expect("at least one epoch ran");
    if let Some(p) = run.path("last.ckpt") {
        model.save(&p)?;
    }
    if let Some(p) = run.path("train_meta.json") {
        let meta = TrainMeta {
            variant: model.config().variant.name().to_string(),
            train_config: cfg,
            model_config: model.config(),
            train_docs: train_docs.len(),
            valid_docs: valid_docs.len(),
            parameters: model.params().num_scalars(),
            best_epoch,
            best_valid_ppl: best_valid_nll.exp(),
            stopped_early,
        };
        let json = serde_json::to_string_pretty(&meta)?;
        fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    }
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        history,
        best_epoch,
        best_valid_nll,
        stopped_early,
    })
}

/// Reads a history CSV back as (epoch, train_ppl, valid_ppl, seconds).
pub fn read_history(path: &Path) -> Result<Vec<(usize, f64, f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;
    use crate::model::{ModelConfig, Variant};

    fn scalar_store(theta: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Mat::filled(1, 1, theta)).unwrap();
        s
    }

    #[test]
    fn adam_on_quadratic_matches_scalar_recursion() {
        let cfg = TrainConfig {
            lr: 0.01,
            ..TrainConfig::default()
        };
        let mut store = scalar_store(1.0);
        let mut st = AdamState::new(&store);
        // independent scalar recursion
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=500 {
            let g = store.values.iter().next().unwrap().data()[0];
            store.grads.iter_mut().next().unwrap().data_mut()[0] = g;
            adam_step(&mut store, &mut st, &cfg).unwrap();
            m = 0.9 * m + 0.1 * th;
            v = 0.999 * v + 0.001 * th * th;
            th -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        let got = store.values.iter().next().unwrap().data()[0];
        assert!((got - th).abs() < 1e-12);
        assert!(got.abs() < 1e-3, "theta = {got}");
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = scalar_store(0.7);
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(store.values.iter().next().unwrap().data()[0], 0.7);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.02] {
            let mut store = scalar_store(0.0);
            store.grads.iter_mut().next().unwrap().data_mut()[0] = g;
            let mut st = AdamState::new(&store);
            let cfg = TrainConfig::default();
            adam_step(&mut store, &mut st, &cfg).unwrap();
            let p = store.values.iter().next().unwrap().data()[0];
            let expected = -cfg.lr * g.signum() * g.abs() / (g.abs() + cfg.eps);
            assert!((p - expected).abs() < 1e-15);
            assert_eq!(store.grads.iter().next().unwrap().data()[0], 0.0);
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut store = scalar_store(0.0);
        store.grads.iter_mut().next().unwrap().data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&store);
        let err = adam_step(&mut store, &mut st, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
        assert_eq!(store.values.iter().next().unwrap().data()[0], 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { clip_norm: Some(-1.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn batches_cover_every_document_once() {
        let lengths: Vec<usize> = (0..53).map(|i| i % 7 + 1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = make_batches(&lengths, 5, &mut rng);
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
        assert!(b.iter().all(|x| x.len() <= 5));
    }

    fn doc(tokens: &[usize]) -> IndexedDocument {
        let mut text_ids = tokens.to_vec();
        text_ids.push(EOS);
        IndexedDocument {
            id: "d".into(),
            text_ids,
            title_ids: None,
            author_id: None,
            category_id: None,
        }
    }

    fn rnn(hidden: usize, seed: u64) -> SamModel {
        SamModel::build(ModelConfig {
            variant: Variant::Rnn,
            hidden,
            attr_dim: 4,
            vocab_size: 5,
            n_authors: 0,
            n_categories: 0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn early_stop_returns_first_epoch() {
        let train_docs = vec![doc(&[3, 3, 3, 3])];
        let valid_docs = vec![doc(&[4, 4, 4, 4])];
        let cfg = TrainConfig {
            lr: 0.05,
            patience: 1,
            max_epochs: 10,
            ..Default::default()
        };
        let out = train(rnn(8, 1), &train_docs, &valid_docs, &cfg, &RunDir::default()).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.best_epoch, 1);
        assert!(out.stopped_early);
        assert!(out.history[1].valid_nll > out.history[0].valid_nll);
        let again = eval::perplexity(&out.best, &valid_docs).unwrap();
        assert!((again.mean_nll() - out.best_valid_nll).abs() < 1e-12);
    }

    #[test]
    fn memorizes_constant_document() {
        let d = vec![doc(&[3, 3, 3, 3])];
        let cfg = TrainConfig {
            lr: 0.02,
            max_epochs: 200,
            patience: 200,
            ..Default::default()
        };
        let out = train(rnn(16, 2), &d, &d, &cfg, &RunDir::default()).unwrap();
        assert!(out.best_valid_ppl() <= 1.05, "ppl {}", out.best_valid_ppl());
        let min = out.history.iter().map(|r| r.valid_nll).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_valid_ppl(), min.exp());
    }

    #[test]
    fn reproducible_and_writes_run_dir() {
        let docs: Vec<_> = (0..12).map(|i| doc(&[3 + i % 2, 4 - i % 2, 3])).collect();
        let cfg = TrainConfig {
            lr: 0.01,
            batch_size: 3,
            max_epochs: 4,
            patience: 4,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let a = train(rnn(6, 5), &docs, &docs[..4], &cfg, &RunDir(Some(dir.path().to_path_buf()))).unwrap();
        let b = train(rnn(6, 5), &docs, &docs[..4], &cfg, &RunDir::default()).unwrap();
        for (x, y) in a.history.iter().zip(&b.history) {
            assert!((x.train_ppl - y.train_ppl).abs() < 1e-9);
            assert!((x.valid_ppl - y.valid_ppl).abs() < 1e-9);
        }
        let h = read_history(&dir.path().join("history.csv")).unwrap();
        assert_eq!(h.len(), 4);
        let best = SamModel::load(&dir.path().join("best.ckpt")).unwrap();
        assert_eq!(best.to_bytes().unwrap(), a.best.to_bytes().unwrap());
        assert!(dir.path().join("last.ckpt").exists());
        assert!(dir.path().join("train_meta.json").exists());
    }

    #[test]
    fn clipping_bounds_norm() {
        let m = rnn(6, 9);
        let mut g = Gradients::zeros_like(&m.params().values);
        let d = doc(&[3, 4, 3]);
        batch_gradient(&m, &[&d], &mut g).unwrap();
        g.scale(1e4);
        g.clip_global_norm(5.0);
        assert!(g.norm() <= 5.0 + 1e-9);
    }
}
