//! Gated recurrent unit without gate biases:
//!
//! ```text
//! z  = σ(Wz·w + Uz·h)
//! r  = σ(Wr·w + Ur·h)
//! h̃  = tanh(Wc·w + Uc·(h ⊙ r))
//! h' = (1 - z) ⊙ h̃ + z ⊙ h
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{hadamard, sigmoid, uniform_init, Gradients, Mat, ParamId, ParamStore, Params};

#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wz: ParamId,
    pub uz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub wc: ParamId,
    pub uc: ParamId,
}

/// Intermediates of one step, consumed by [`GruCell::backward`].
#[derive(Clone, Debug)]
pub struct GruCache {
    pub w: Mat,
    pub h_prev: Mat,
    pub z: Mat,
    pub r: Mat,
    pub candidate: Mat,
    pub reset_h: Mat,
}

impl GruCell {
    /// Registers `<prefix>.Wz` … `<prefix>.Uc` in `store`, initialized
    /// uniformly in (-0.1, 0.1).
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        let mut add = |name: &str, cols: usize| store.add(format!("{prefix}.{name}"), uniform_init(hidden_dim, cols, rng));
        Ok(GruCell {
            input_dim,
            hidden_dim,
            wz: add("Wz", input_dim)?,
            uz: add("Uz", hidden_dim)?,
            wr: add("Wr", input_dim)?,
            ur: add("Ur", hidden_dim)?,
            wc: add("Wc", input_dim)?,
            uc: add("Uc", hidden_dim)?,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.wz, self.uz, self.wr, self.ur, self.wc, self.uc]
    }

    pub fn step(&self, params: &Params, w: &Mat, h_prev: &Mat) -> Result<(Mat, GruCache)> {
        if w.shape() != (self.input_dim, 1) || h_prev.shape() != (self.hidden_dim, 1) {
            return Err(Error::Shape {
                op: "GruCell::step",
                left: (self.input_dim, self.hidden_dim),
                right: (w.rows(), h_prev.rows()),
            });
        }
        let gate = |wm: ParamId, um: ParamId, h: &Mat| -> Result<Mat> {
            let mut a = params[wm].matvec(w)?;
            a.add_assign(&params[um].matvec(h)?)?;
            Ok(a)
        };
        let z = gate(self.wz, self.uz, h_prev)?.map(sigmoid);
        let r = gate(self.wr, self.ur, h_prev)?.map(sigmoid);
        let reset_h = hadamard(h_prev, &r)?;
        let candidate = gate(self.wc, self.uc, &reset_h)?.map(f64::tanh);
        let h = Mat::col(
            (0..self.hidden_dim)
                .map(|i| {
                    let zi = z.get(i, 0);
                    (1.0 - zi) * candidate.get(i, 0) + zi * h_prev.get(i, 0)
                })
                .collect(),
        );
        let cache = GruCache {
            w: w.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            candidate,
            reset_h,
        };
        Ok((h, cache))
    }

    /// Backpropagates `dh` (gradient w.r.t. the step output) through one step.
    /// Weight gradients are added into `grads`; returns `(dw, dh_prev)`.
    pub fn backward(&self, params: &Params, grads: &mut Gradients, cache: &GruCache, dh: &Mat) -> Result<(Mat, Mat)> {
        let n = self.hidden_dim;
        let GruCache {
            w,
            h_prev,
            z,
            r,
            candidate,
            reset_h,
        } = cache;
        let mut d_cand_pre = Mat::zeros(n, 1);
        let mut dz_pre = Mat::zeros(n, 1);
        let mut dh_prev = Mat::zeros(n, 1);
        for i in 0..n {
            let (g, zi, ci, hi) = (dh.get(i, 0), z.get(i, 0), candidate.get(i, 0), h_prev.get(i, 0));
            d_cand_pre.set(i, 0, g * (1.0 - zi) * (1.0 - ci * ci));
            dz_pre.set(i, 0, g * (hi - ci) * zi * (1.0 - zi));
            dh_prev.set(i, 0, g * zi);
        }

        grads[self.wc].add_outer(&d_cand_pre, w)?;
        grads[self.uc].add_outer(&d_cand_pre, reset_h)?;
        let mut dw = params[self.wc].matvec_t(&d_cand_pre)?;
        let d_reset_h = params[self.uc].matvec_t(&d_cand_pre)?;

        let mut dr_pre = Mat::zeros(n, 1);
        for i in 0..n {
            let ri = r.get(i, 0);
            let drh = d_reset_h.get(i, 0);
            dh_prev.data_mut()[i] += drh * ri;
            dr_pre.set(i, 0, drh * h_prev.get(i, 0) * ri * (1.0 - ri));
        }

        for (wm, um, da) in [(self.wr, self.ur, &dr_pre), (self.wz, self.uz, &dz_pre)] {
            grads[wm].add_outer(da, w)?;
            grads[um].add_outer(da, h_prev)?;
            dw.add_assign(&params[wm].matvec_t(da)?)?;
            dh_prev.add_assign(&params[um].matvec_t(da)?)?;
        }
        Ok((dw, dh_prev))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(seed: u64, input: usize, hidden: usize) -> (ParamStore, GruCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = GruCell::new(&mut store, "g", input, hidden, &mut rng).unwrap();
        (store, c)
    }

    fn rand_col(n: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::col((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_weights_closed_form() {
        let (mut store, c) = cell(0, 3, 4);
        store.values.iter_mut().for_each(|m| m.fill(0.0));
        let h_prev = Mat::col(vec![0.4, -0.2, 0.9, 0.0]);
        let (h, cache) = c.step(&store.values, &Mat::col(vec![1.0, 2.0, 3.0]), &h_prev).unwrap();
        assert!(cache.z.data().iter().all(|&z| z == 0.5));
        assert!(cache.r.data().iter().all(|&r| r == 0.5));
        assert!(cache.candidate.data().iter().all(|&c| c == 0.0));
        assert_eq!(h, h_prev.scaled(0.5));
        let (h, _) = c.step(&store.values, &Mat::col(vec![1.0, 2.0, 3.0]), &Mat::zeros(4, 1)).unwrap();
        assert_eq!(h, Mat::zeros(4, 1));
    }

    #[test]
    fn shape_mismatch() {
        let (store, c) = cell(0, 3, 4);
        assert!(c.step(&store.values, &Mat::zeros(2, 1), &Mat::zeros(4, 1)).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let (mut store, c) = cell(1, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, cache) = c.step(&store.values, &rand_col(3, &mut rng), &rand_col(4, &mut rng)).unwrap();
        let (dw, dh) = c.backward(&store.values, &mut store.grads, &cache, &Mat::zeros(4, 1)).unwrap();
        assert_eq!(dw, Mat::zeros(3, 1));
        assert_eq!(dh, Mat::zeros(4, 1));
        assert!(store.grads.iter().all(|g| g.norm_sq() == 0.0));
    }

    #[test]
    fn accumulation_is_additive() {
        let (mut store, c) = cell(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, c1) = c.step(&store.values, &rand_col(3, &mut rng), &rand_col(4, &mut rng)).unwrap();
        let (_, c2) = c.step(&store.values, &rand_col(3, &mut rng), &rand_col(4, &mut rng)).unwrap();
        let (d1, d2) = (rand_col(4, &mut rng), rand_col(4, &mut rng));
        let mut g1 = store.gradient_buffer();
        c.backward(&store.values, &mut g1, &c1, &d1).unwrap();
        let mut g2 = store.gradient_buffer();
        c.backward(&store.values, &mut g2, &c2, &d2).unwrap();
        c.backward(&store.values, &mut store.grads, &c1, &d1).unwrap();
        c.backward(&store.values, &mut store.grads, &c2, &d2).unwrap();
        g1.add_assign(&g2).unwrap();
        for (a, b) in store.grads.iter().zip(g1.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_step_gradcheck() {
        for seed in 0..20 {
            let (mut store, c) = cell(seed, 3, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let w = rand_col(3, &mut rng);
            let h0 = rand_col(4, &mut rng);
            let probe = rand_col(4, &mut rng);
            // f = probe · h
            let (_, cache) = c.step(&store.values, &w, &h0).unwrap();
            let (dw, dh0) = c.backward(&store.values, &mut store.grads, &cache, &probe).unwrap();
            let f = |p: &Params| c.step(p, &w, &h0).and_then(|(h, _)| h.dot(&probe));
            let report = grad_check(f, &mut store, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "seed {seed}\n{report}");

            // input and state gradients by central differences
            let eps = 1e-5;
            for (k, analytic) in dw.data().iter().enumerate() {
                let mut wp = w.clone();
                wp.data_mut()[k] += eps;
                let mut wm = w.clone();
                wm.data_mut()[k] -= eps;
                let fp = c.step(&store.values, &wp, &h0).unwrap().0.dot(&probe).unwrap();
                let fm = c.step(&store.values, &wm, &h0).unwrap().0.dot(&probe).unwrap();
                assert!(crate::tensor::relative_error(*analytic, (fp - fm) / (2.0 * eps)) < 1e-4);
            }
            for (k, analytic) in dh0.data().iter().enumerate() {
                let mut hp = h0.clone();
                hp.data_mut()[k] += eps;
                let mut hm = h0.clone();
                hm.data_mut()[k] -= eps;
                let fp = c.step(&store.values, &w, &hp).unwrap().0.dot(&probe).unwrap();
                let fm = c.step(&store.values, &w, &hm).unwrap().0.dot(&probe).unwrap();
                assert!(crate::tensor::relative_error(*analytic, (fp - fm) / (2.0 * eps)) < 1e-4);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn first_step_in_tanh_range(seed in 0u64..1000, xs in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let (store, c) = cell(seed, 3, 4);
            let (h, _) = c.step(&store.values, &Mat::col(xs), &Mat::zeros(4, 1)).unwrap();
            proptest::prop_assert!(h.data().iter().all(|x| x.abs() < 1.0));
        }
    }
}
