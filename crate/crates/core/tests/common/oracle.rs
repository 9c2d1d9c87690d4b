//! Plain nested-loop reference implementations, written against the
//! defining equations and sharing no code with the library beyond reading
//! parameter values by name.

use samlm_core::corpus::{IndexedDocument, BOS};
use samlm_core::model::{SamModel, Variant};
use samlm_core::tensor::{Mat, ParamStore};

pub type M = Vec<Vec<f64>>;

pub fn to_rows(m: &Mat) -> M {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn param(store: &ParamStore, name: &str) -> M {
    to_rows(store.get(name).unwrap_or_else(|| panic!("no parameter {name}")))
}

fn mv(a: &M, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..a.len() {
        let mut s = 0.0;
        for j in 0..x.len() {
            s += a[i][j] * x[j];
        }
        out[i] = s;
    }
    out
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Gru {
    wz: M,
    uz: M,
    wr: M,
    ur: M,
    wc: M,
    uc: M,
}

impl Gru {
    pub fn from_store(store: &ParamStore, prefix: &str) -> Self {
        let p = |n: &str| param(store, &format!("{prefix}.{n}"));
        Gru {
            wz: p("Wz"),
            uz: p("Uz"),
            wr: p("Wr"),
            ur: p("Ur"),
            wc: p("Wc"),
            uc: p("Uc"),
        }
    }

    pub fn step(&self, w: &[f64], h: &[f64]) -> Vec<f64> {
        let n = h.len();
        let (a, b) = (mv(&self.wz, w), mv(&self.uz, h));
        let z: Vec<f64> = (0..n).map(|i| sig(a[i] + b[i])).collect();
        let (a, b) = (mv(&self.wr, w), mv(&self.ur, h));
        let r: Vec<f64> = (0..n).map(|i| sig(a[i] + b[i])).collect();
        let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
        let (a, b) = (mv(&self.wc, w), mv(&self.uc, &rh));
        (0..n).map(|i| (1.0 - z[i]) * (a[i] + b[i]).tanh() + z[i] * h[i]).collect()
    }
}

/// Bilinear softmax attention: weights and weighted sum of keys.
pub fn attend(m: &M, keys: &[Vec<f64>], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut scores = Vec::with_capacity(keys.len());
    for k in keys {
        let mut s = 0.0;
        for a in 0..k.len() {
            for b in 0..q.len() {
                s += k[a] * m[a][b] * q[b];
            }
        }
        scores.push(s);
    }
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|x| x / z).collect();
    let mut ctx = vec![0.0; keys[0].len()];
    for (k, a) in keys.iter().zip(&w) {
        for i in 0..ctx.len() {
            ctx[i] += a * k[i];
        }
    }
    (w, ctx)
}

/// Title encoder states, one per title word, from a zero state.
pub fn encode_title(store: &ParamStore, ids: &[usize]) -> Vec<Vec<f64>> {
    let gru = Gru::from_store(store, "title");
    let e = param(store, "embed");
    let da = gru.uz.len();
    let mut h = vec![0.0; da];
    let mut out = Vec::new();
    for &id in ids {
        h = gru.step(&e[id], &h);
        out.push(h.clone());
    }
    out
}

pub struct OracleForward {
    pub nll: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

pub fn forward_document(model: &SamModel, doc: &IndexedDocument) -> OracleForward {
    let store = model.params();
    let cfg = model.config();
    let v = cfg.variant;
    let e = param(store, "embed");
    let main = Gru::from_store(store, "main");
    let wout = param(store, "out.W");
    let bout = param(store, "out.b");
    let d = cfg.hidden;

    let uses_title = matches!(
        v,
        Variant::RnnState | Variant::RnnBow | Variant::SamTitleAtt | Variant::SamTitleAttState | Variant::SamTitleAuAtt | Variant::SamTitleStateAuAtt
    );
    let states = if uses_title && v != Variant::RnnBow {
        encode_title(store, doc.title_ids.as_ref().unwrap())
    } else {
        Vec::new()
    };
    let mut h = vec![0.0; d];
    if matches!(v, Variant::RnnState | Variant::SamTitleAttState | Variant::SamTitleStateAuAtt) {
        let w = param(store, "state.W");
        let b = param(store, "state.b");
        let last = states.last().unwrap();
        h = mv(&w, last).iter().zip(&b).map(|(x, b)| x + b[0]).collect();
    }
    let bow = if v == Variant::RnnBow {
        let ids = doc.title_ids.as_ref().unwrap();
        let mut mean = vec![0.0; d];
        for &id in ids {
            for i in 0..d {
                mean[i] += e[id][i] / ids.len() as f64;
            }
        }
        Some(mv(&param(store, "bow.P"), &mean))
    } else {
        None
    };

    let mut out = OracleForward {
        nll: Vec::new(),
        alpha: Vec::new(),
        beta: Vec::new(),
    };
    for (i, &target) in doc.text_ids.iter().enumerate() {
        let input = if i == 0 { BOS } else { doc.text_ids[i - 1] };
        let mut cands: Vec<Vec<f64>> = Vec::new();
        if matches!(v, Variant::SamTitleAtt | Variant::SamTitleAttState | Variant::SamTitleAuAtt | Variant::SamTitleStateAuAtt) {
            let (a, c) = attend(&param(store, "title_att.M1"), &states, &h);
            out.alpha.push(a);
            cands.push(c);
        }
        if matches!(v, Variant::SamAuAtt | Variant::SamTitleAuAtt | Variant::SamTitleStateAuAtt) {
            cands.push(param(store, "author_table")[doc.author_id.unwrap()].clone());
        }
        if v == Variant::SamCat {
            cands.push(param(store, "category_table")[doc.category_id.unwrap()].clone());
        }
        let ctx = match cands.len() {
            0 => bow.clone(),
            1 => {
                out.beta.push(vec![1.0]);
                Some(cands[0].clone())
            }
            _ => {
                let (b, c) = attend(&param(store, "attr_att.M2"), &cands, &h);
                out.beta.push(b);
                Some(c)
            }
        };
        let mut w = e[input].clone();
        if let Some(c) = ctx {
            w.extend(c);
        }
        h = main.step(&w, &h);
        let logits: Vec<f64> = mv(&wout, &h).iter().zip(&bout).map(|(x, b)| x + b[0]).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        out.nll.push(lse - logits[target]);
    }
    out
}
