use std::fmt;

use super::{ParamStore, Params};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-6;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(move |t| t.max_rel_error > self.tol)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.tensors.iter().map(|t| t.name.len()).max().unwrap_or(6).max(6);
        writeln!(f, "{:<width$}  {:>12}  {:>12}  status", "tensor", "max_rel", "max_abs")?;
        for t in &self.tensors {
            let status = if t.max_rel_error <= self.tol { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<width$}  {:>12.3e}  {:>12.3e}  {status}",
                t.name, t.max_rel_error, t.max_abs_error
            )?;
        }
        Ok(())
    }
}

/// Compares the gradients already accumulated in `store.grads` against
/// central differences `(f(θ+eps) - f(θ-eps)) / (2 eps)` of `f`, coordinate
/// by coordinate. Values are restored afterwards.
pub fn grad_check<F>(mut f: F, store: &mut ParamStore, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&Params) -> Result<f64>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-7, 1e-4]")));
    }
    let ids: Vec<_> = store.ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.values[id].len();
        let mut check = TensorCheck {
            name: store.name(id).to_string(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for k in 0..n {
            let orig = store.values[id].data()[k];
            store.values[id].data_mut()[k] = orig + eps;
            let plus = f(&store.values);
            store.values[id].data_mut()[k] = orig - eps;
            let minus = f(&store.values);
            store.values[id].data_mut()[k] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at {}[{k}]", check.name)));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.grads[id].data()[k];
            let rel = relative_error(analytic, numeric);
            check.max_abs_error = check.max_abs_error.max((analytic - numeric).abs());
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = k;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { eps, tol, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;

    fn quadratic_store() -> ParamStore {
        let mut s = ParamStore::new();
        let a = s.add("a", Mat::col(vec![0.5, -1.5, 2.0])).unwrap();
        let b = s.add("b", Mat::from_rows(&[&[0.1, 0.2], &[-0.3, 0.7]]).unwrap()).unwrap();
        s.grads[a] = s.values[a].clone();
        s.grads[b] = s.values[b].clone();
        s
    }

    fn half_norm_sq(p: &Params) -> Result<f64> {
        Ok(0.5 * p.iter().map(Mat::norm_sq).sum::<f64>())
    }

    #[test]
    fn quadratic_passes() {
        let mut s = quadratic_store();
        let report = grad_check(half_norm_sq, &mut s, 1e-5, 1e-8).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.max_rel_error() < 1e-8);
        assert_eq!(report.tensors.len(), 2);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut s = quadratic_store();
        let b = s.id("b").unwrap();
        s.grads[b].data_mut()[3] += 0.1;
        let report = grad_check(half_norm_sq, &mut s, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
        let bad: Vec<_> = report.failures().map(|t| t.name.as_str()).collect();
        assert_eq!(bad, ["b"]);
        assert_eq!(report.tensors[1].worst_index, 3);
    }

    #[test]
    fn restores_values() {
        let mut s = quadratic_store();
        let before = s.values.clone();
        grad_check(half_norm_sq, &mut s, 1e-5, 1e-4).unwrap();
        assert_eq!(s.values, before);
    }

    #[test]
    fn rejects_bad_eps_and_nan() {
        let mut s = quadratic_store();
        assert!(grad_check(half_norm_sq, &mut s, 1e-2, 1e-4).is_err());
        let r = grad_check(|_| Ok(f64::NAN), &mut s, 1e-5, 1e-4);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
