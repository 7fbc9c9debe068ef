use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Step of the five-point central-difference stencil.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter and flat element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Analytic and finite-difference values at the worst element.
    pub worst_values: (f64, f64),
    pub elements_checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central finite differences for every element of the listed parameters.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss)?;
    let mut analytic = Vec::with_capacity(params.len());
    for &id in params {
        let v = g.param(store, id);
        let grad = g
            .grad(v)
            .ok_or_else(|| Error::MissingGradient(store.get(id).name.clone()))?
            .to_vec();
        analytic.push(grad);
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, store)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        elements_checked: 0,
    };
    for (&id, grad) in params.iter().zip(&analytic) {
        for (k, &analytic_k) in grad.iter().enumerate() {
            let orig = store.get(id).tensor.data()[k];
            let mut at = |delta: f64| -> Result<f64> {
                store.get_mut(id).tensor.data_mut()[k] = orig + delta;
                eval(store)
            };
            let (p1, m1) = (at(FD_STEP)?, at(-FD_STEP)?);
            let (p2, m2) = (at(2.0 * FD_STEP)?, at(-2.0 * FD_STEP)?);
            store.get_mut(id).tensor.data_mut()[k] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP);
            let err = relative_error(analytic_k, numeric);
            report.elements_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((store.get(id).name.clone(), k));
                report.worst_values = (analytic_k, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Axis, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(shapes: &[(&str, usize, usize)], seed: u64) -> (ParamStore, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let ids = shapes
            .iter()
            .map(|&(n, r, c)| s.register(n, Tensor::xavier_uniform(r, c, &mut rng)).unwrap())
            .collect();
        (s, ids)
    }

    #[test]
    fn linear_function_is_exact() {
        let (mut s, ids) = store_with(&[("w", 3, 2)], 1);
        let report = grad_check(&mut s, &ids, |g, s| {
            let w = g.param(s, ids[0]);
            let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0])?);
            let y = g.matmul(x, w)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn every_core_op_passes() {
        let (mut s, ids) = store_with(
            &[
                ("a", 4, 3),
                ("b", 3, 4),
                ("gain", 1, 4),
                ("bias", 1, 4),
                ("table", 5, 4),
                ("k", 1, 1),
            ],
            7,
        );
        let report = grad_check(&mut s, &ids, |g, s| {
            let a = g.param(s, ids[0]);
            let b = g.param(s, ids[1]);
            let gain = g.param(s, ids[2]);
            let bias = g.param(s, ids[3]);
            let table = g.param(s, ids[4]);
            let k = g.param(s, ids[5]);
            let ab = g.matmul(a, b)?; // 4x4
            let bt = g.transpose(b); // 4x3
            let abt = g.matmul_t(a, bt)?; // 4x4
            let sum = g.add(ab, abt)?;
            let rows = g.gather(table, &[0, 3, 3, 1])?;
            let prod = g.mul(sum, rows)?;
            let ln = g.layer_norm(prod, gain, bias, 1e-5)?;
            let r = g.relu(ln);
            let shifted = g.add_row(r, bias)?;
            let scaled = g.mul_scalar(shifted, k)?;
            let halves = [g.slice_cols(scaled, 0, 2)?, g.slice_cols(scaled, 2, 4)?];
            let cat = g.concat_cols(&[halves[1], halves[0]])?;
            let masked = g.masked_fill(cat, &[false, true, false, false].repeat(4), -1e9)?;
            let sm = g.softmax_rows(masked);
            let m = g.mean(sm, Axis::Cols);
            let m2 = g.mean(cat, Axis::Rows);
            let s1 = g.sum(m);
            let s2 = g.sum(m2);
            let p = g.sigmoid(m2);
            let bce = g.bce(p, &[1.0, 0.0, 1.0, 0.0])?;
            let t = g.add(s1, s2)?;
            let t = g.add(t, bce)?;
            Ok(g.scale(t, 0.7))
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}
