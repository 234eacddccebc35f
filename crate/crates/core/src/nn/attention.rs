use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;

use super::layers::Linear;
use super::param::{Module, Param};
use super::Real;

/// Multi-head self-attention with a fused QKV projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T: Real> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T: Real> {
    pub input: Array2<T>,
    pub qkv: Array2<T>,
    /// Attention probabilities, indexed `b * heads + h`.
    pub probs: Vec<Array2<T>>,
    pub context: Array2<T>,
    pub batch: usize,
    pub len: usize,
}

/// Numerically stable softmax over each row.
pub fn softmax_rows<T: Real>(scores: &mut Array2<T>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

impl<T: Real> Attention<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim % heads == 0, "width {dim} not divisible by {heads} heads");
        Self {
            qkv: Linear::new(&format!("{name}.qkv"), dim, 3 * dim, rng),
            proj: Linear::new(&format!("{name}.proj"), dim, dim, rng),
            heads,
        }
    }

    fn dim(&self) -> usize {
        self.proj.fan_out()
    }

    fn head_views<'a>(
        &self,
        qkv: &'a Array2<T>,
        b: usize,
        h: usize,
        len: usize,
    ) -> (ArrayView2<'a, T>, ArrayView2<'a, T>, ArrayView2<'a, T>) {
        let d = self.dim();
        let dh = d / self.heads;
        let rows = b * len..(b + 1) * len;
        let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![rows, 2 * d + h * dh..2 * d + (h + 1) * dh]);
        (q, k, v)
    }

    /// `x` holds `batch` sequences of `len` tokens stacked row-wise.
    pub fn forward(&self, x: &Array2<T>, batch: usize, len: usize) -> (Array2<T>, AttentionCache<T>) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let qkv = self.qkv.forward(x);
        let mut context = Array2::zeros((batch * len, d));
        let mut probs = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            for h in 0..self.heads {
                let (q, k, v) = self.head_views(&qkv, b, h, len);
                let mut p = q.dot(&k.t());
                p.mapv_inplace(|e| e * scale);
                softmax_rows(&mut p);
                context.slice_mut(s![b * len..(b + 1) * len, h * dh..(h + 1) * dh]).assign(&p.dot(&v));
                probs.push(p);
            }
        }
        let out = self.proj.forward(&context);
        (out, AttentionCache { input: x.clone(), qkv, probs, context, batch, len })
    }

    pub fn backward(&mut self, cache: &AttentionCache<T>, dy: &Array2<T>) -> Array2<T> {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let len = cache.len;
        let d_context = self.proj.backward(&cache.context, dy, true).expect("dx requested");
        let mut d_qkv = Array2::zeros(cache.qkv.raw_dim());
        for b in 0..cache.batch {
            for h in 0..self.heads {
                let p = &cache.probs[b * self.heads + h];
                let (q, k, v) = self.head_views(&cache.qkv, b, h, len);
                let rows = b * len..(b + 1) * len;
                let dctx = d_context.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let dp = dctx.dot(&v.t());
                let dv = p.t().dot(&dctx);
                let mut ds = Array2::zeros(p.raw_dim());
                for ((mut ds_row, p_row), dp_row) in ds.rows_mut().into_iter().zip(p.rows()).zip(dp.rows()) {
                    let dot = p_row.iter().zip(dp_row).map(|(&a, &b)| a * b).sum::<T>();
                    Zip::from(&mut ds_row).and(&p_row).and(&dp_row).for_each(|o, &pv, &g| *o = pv * (g - dot) * scale);
                }
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                d_qkv.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]).assign(&dq);
                d_qkv.slice_mut(s![rows.clone(), d + h * dh..d + (h + 1) * dh]).assign(&dk);
                d_qkv.slice_mut(s![rows, 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
            }
        }
        self.qkv.backward(&cache.input, &d_qkv, true).expect("dx requested")
    }
}

impl<T: Real> Module<T> for Attention<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.qkv.params();
        v.extend(self.proj.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.qkv.params_mut();
        v.extend(self.proj.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_rng, truncated_normal};

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = init_rng(5);
        let mut s: Array2<f64> = truncated_normal(7, 11, 10.0, &mut rng);
        softmax_rows(&mut s);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn probabilities_cached_per_head() {
        let mut rng = init_rng(2);
        let att: Attention<f64> = Attention::new("a", 8, 2, &mut rng);
        let x = truncated_normal(2 * 5, 8, 1.0, &mut rng);
        let (y, cache) = att.forward(&x, 2, 5);
        assert_eq!(y.shape(), &[10, 8]);
        assert_eq!(cache.probs.len(), 4);
        for p in &cache.probs {
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
