use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use super::param::{truncated_normal, Module, Param};
use super::Real;

pub const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// Affine map `y = x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let mut weight = Param::new(format!("{name}.weight"), truncated_normal(fan_in, fan_out, INIT_STD, rng));
        weight.decay = true;
        Self { weight, bias: Param::zeros(format!("{name}.bias"), 1, fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.value);
        y += &self.bias.value;
        y
    }

    /// Accumulates parameter gradients (trainable parameters only) and
    /// returns the input gradient when `need_dx` is set.
    pub fn backward(&mut self, x: &Array2<T>, dy: &Array2<T>, need_dx: bool) -> Option<Array2<T>> {
        if self.weight.trainable {
            general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut self.weight.grad);
        }
        if self.bias.trainable {
            self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        need_dx.then(|| dy.dot(&self.weight.value.t()))
    }

    pub fn any_trainable(&self) -> bool {
        self.weight.trainable || self.bias.trainable
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row-wise layer normalisation with learnable scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T: Real> {
    pub xhat: Array2<T>,
    pub rstd: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.weight"), Array2::ones((1, dim))),
            beta: Param::zeros(format!("{name}.bias"), 1, dim),
        }
    }

    /// Normalised rows before the affine step, plus reciprocal std per row.
    pub fn normalize(x: &Array2<T>) -> LayerNormCache<T> {
        let d = T::of(x.ncols() as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = x.clone();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            let s = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * s);
            *r = s;
        }
        LayerNormCache { xhat, rstd }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let cache = Self::normalize(x);
        let mut y = &cache.xhat * &self.gamma.value;
        y += &self.beta.value;
        (y, cache)
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Array2<T>) -> Array2<T> {
        if self.gamma.trainable {
            self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        if self.beta.trainable {
            self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let d = T::of(dy.ncols() as f64);
        let mut dx = dy * &self.gamma.value;
        for ((mut row, xh), &s) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
            let mean_g = row.sum() / d;
            let mean_gx = row.iter().zip(xh).map(|(&g, &x)| g * x).sum::<T>() / d;
            Zip::from(&mut row).and(&xh).for_each(|g, &x| *g = s * (*g - mean_g - x * mean_gx));
        }
        dx
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let v = x.f64();
    T::of(0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)))
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let v = x.f64();
    let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::of(cdf + v * pdf)
}
