use ndarray::{Array2, Zip};
use rand::Rng;

use super::attention::{Attention, AttentionCache};
use super::layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use super::param::{Module, Param};
use super::Real;

/// Pre-norm transformer block: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T: Real> {
    pub norm1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T: Real> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    mlp_in: Array2<T>,
    hidden: Array2<T>,
    activated: Array2<T>,
}

impl<T: Real> BlockCache<T> {
    /// Attention probabilities of the block, one matrix per (sample, head).
    pub fn attention_probs(&self) -> &[Array2<T>] {
        &self.attn.probs
    }
}

impl<T: Real> Block<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, mlp_hidden: usize, rng: &mut R) -> Self {
        Self {
            norm1: LayerNorm::new(&format!("{name}.norm1"), dim),
            attn: Attention::new(&format!("{name}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(&format!("{name}.norm2"), dim),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), dim, mlp_hidden, rng),
            fc2: Linear::new(&format!("{name}.mlp.fc2"), mlp_hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &Array2<T>, batch: usize, len: usize) -> (Array2<T>, BlockCache<T>) {
        debug_assert_eq!(x.nrows(), batch * len);
        let (a, ln1) = self.norm1.forward(x);
        let (att, attn) = self.attn.forward(&a, batch, len);
        let x1 = x + &att;
        let (mlp_in, ln2) = self.norm2.forward(&x1);
        let hidden = self.fc1.forward(&mlp_in);
        let activated = hidden.mapv(gelu);
        let out = &x1 + &self.fc2.forward(&activated);
        (out, BlockCache { ln1, attn, ln2, mlp_in, hidden, activated })
    }

    pub fn backward(&mut self, cache: &BlockCache<T>, dy: &Array2<T>) -> Array2<T> {
        let mut dh = self.fc2.backward(&cache.activated, dy, true).expect("dx requested");
        Zip::from(&mut dh).and(&cache.hidden).for_each(|g, &h| *g *= gelu_grad(h));
        let dm = self.fc1.backward(&cache.mlp_in, &dh, true).expect("dx requested");
        let dx1 = dy + &self.norm2.backward(&cache.ln2, &dm);
        let da = self.attn.backward(&cache.attn, &dx1);
        &dx1 + &self.norm1.backward(&cache.ln1, &da)
    }

    pub fn any_trainable(&self) -> bool {
        self.params().iter().any(|p| p.trainable)
    }
}

impl<T: Real> Module<T> for Block<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.norm1.params();
        v.extend(self.attn.params());
        v.extend(self.norm2.params());
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.norm1.params_mut();
        v.extend(self.attn.params_mut());
        v.extend(self.norm2.params_mut());
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }
}
