//! The trainable hashing pipeline.
//!
//! `features → [Linear + ReLU]* → W (no bias) → BatchNorm → x/‖x‖`
//!
//! The batch-norm and L2 stages can be switched off through
//! [`Architecture`]; the baseline objectives rely on that. Backpropagation
//! is written out by hand and covers every stage, including the batch
//! statistics of train-mode batch norm.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, invalid, Error, Result};
use crate::hamming::{binarize_and_pack, PackedCode};
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

/// Norm floor used when dividing in the L2 gradient.
const NORM_FLOOR: f64 = 1e-12;

/// Layer sizes and optional stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub bits: usize,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    #[serde(default = "yes")]
    pub l2_normalize: bool,
}

fn yes() -> bool {
    true
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, bits: usize) -> Self {
        Self {
            input_dim,
            hidden,
            bits,
            batch_norm: true,
            l2_normalize: true,
        }
    }

    /// Width of the representation fed to the latent layer.
    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.bits == 0 || self.hidden.contains(&0) {
            return Err(invalid("all layer widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out × in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(bits: usize, momentum: T, epsilon: T) -> Self {
        Self {
            gamma: Array1::ones(bits),
            beta: Array1::zeros(bits),
            running_mean: Array1::zeros(bits),
            running_var: Array1::ones(bits),
            momentum,
            epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub arch: Architecture,
    pub mlp: Vec<DenseLayer<T>>,
    /// `K × q`
    pub latent_weight: Array2<T>,
    pub bn: BatchNorm<T>,
}

/// Intermediates kept by [`EncoderParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: BatchMode,
    layer_inputs: Vec<Array2<T>>,
    layer_pre: Vec<Array2<T>>,
    features: Array2<T>,
    /// Pre-affine batch-norm output.
    normalized: Array2<T>,
    inv_std: Array1<T>,
    norms: Array1<T>,
    codes: Array2<T>,
}

impl<T> ForwardCache<T> {
    pub fn mode(&self) -> BatchMode {
        self.mode
    }

    pub fn normalized(&self) -> &Array2<T> {
        &self.normalized
    }
}

/// Gradients with the same layout as [`EncoderParams`], plus the input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<T> {
    pub mlp: Vec<DenseLayer<T>>,
    pub latent_weight: Array2<T>,
    pub bn_gamma: Array1<T>,
    pub bn_beta: Array1<T>,
    pub input: Array2<T>,
}

impl<T: Scalar> EncoderGrads<T> {
    /// Trainable gradients in [`EncoderParams::trainable_mut`] order.
    pub fn trainable(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.mlp.len() + 3);
        for layer in &self.mlp {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out.push(self.latent_weight.as_slice().expect("standard layout"));
        out.push(self.bn_gamma.as_slice().expect("standard layout"));
        out.push(self.bn_beta.as_slice().expect("standard layout"));
        out
    }
}

fn uniform_matrix<T: Scalar>(rng: &mut crate::rng::Rng, rows: usize, cols: usize, bound: f64) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.random_range(-bound..bound)))
}

impl<T: Scalar> EncoderParams<T> {
    /// Seeded initialization: uniform fan-in scaling (He bound `√(6/fan_in)`
    /// for ReLU layers, `√(3/fan_in)` for the latent layer), zero biases,
    /// γ = 1, β = 0, running mean 0 and running variance 1.
    pub fn init(arch: Architecture, momentum: f64, epsilon: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(invalid(format!("batch-norm momentum {momentum} outside (0, 1]")));
        }
        if !(epsilon > 0.0) {
            return Err(invalid("batch-norm epsilon must be positive"));
        }
        let mut rng = seeded(seed, stream::INIT);
        let mut mlp = Vec::with_capacity(arch.hidden.len());
        let mut fan_in = arch.input_dim;
        for &width in &arch.hidden {
            let bound = (6.0 / fan_in as f64).sqrt();
            mlp.push(DenseLayer {
                weight: uniform_matrix(&mut rng, width, fan_in, bound),
                bias: Array1::zeros(width),
            });
            fan_in = width;
        }
        let latent_weight = uniform_matrix(&mut rng, arch.bits, fan_in, (3.0 / fan_in as f64).sqrt());
        let bn = BatchNorm::new(arch.bits, T::lit(momentum), T::lit(epsilon));
        Ok(Self {
            arch,
            mlp,
            latent_weight,
            bn,
        })
    }

    pub fn bits(&self) -> usize {
        self.arch.bits
    }

    /// Checks that all shapes chain from `input_dim` to `bits`.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        ensure_dim("mlp layer count", self.arch.hidden.len(), self.mlp.len())?;
        let mut fan_in = self.arch.input_dim;
        for (layer, &width) in self.mlp.iter().zip(&self.arch.hidden) {
            ensure_dim("mlp weight rows", width, layer.weight.nrows())?;
            ensure_dim("mlp weight cols", fan_in, layer.weight.ncols())?;
            ensure_dim("mlp bias", width, layer.bias.len())?;
            fan_in = width;
        }
        let k = self.arch.bits;
        ensure_dim("latent weight rows", k, self.latent_weight.nrows())?;
        ensure_dim("latent weight cols", fan_in, self.latent_weight.ncols())?;
        for (what, v) in [
            ("bn gamma", &self.bn.gamma),
            ("bn beta", &self.bn.beta),
            ("bn running mean", &self.bn.running_mean),
            ("bn running var", &self.bn.running_var),
        ] {
            ensure_dim(what, k, v.len())?;
        }
        if self.bn.running_var.iter().any(|&v| !(v >= T::zero())) {
            return Err(invalid("running variance must be non-negative"));
        }
        let m = self.bn.momentum;
        if !(m > T::zero() && m <= T::one()) || !(self.bn.epsilon > T::zero()) {
            return Err(invalid("batch-norm momentum must be in (0, 1] and epsilon positive"));
        }
        Ok(())
    }

    /// Trainable tensors: each MLP layer's weight and bias, the latent
    /// weight, then γ and β.
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.mlp.len() + 3);
        for layer in &mut self.mlp {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.latent_weight.as_slice_mut().expect("standard layout"));
        out.push(self.bn.gamma.as_slice_mut().expect("standard layout"));
        out.push(self.bn.beta.as_slice_mut().expect("standard layout"));
        out
    }

    /// True iff every parameter and running statistic is finite.
    pub fn is_finite(&self) -> bool {
        let finite = |x: &T| x.is_finite();
        self.mlp
            .iter()
            .all(|l| l.weight.iter().all(finite) && l.bias.iter().all(finite))
            && self.latent_weight.iter().all(finite)
            && self.bn.gamma.iter().all(finite)
            && self.bn.beta.iter().all(finite)
            && self.bn.running_mean.iter().all(finite)
            && self.bn.running_var.iter().all(finite)
    }

    #[allow(clippy::type_complexity)]
    fn features(&self, batch: ArrayView2<T>) -> Result<(Vec<Array2<T>>, Vec<Array2<T>>, Array2<T>)> {
        ensure_dim("input dimension", self.arch.input_dim, batch.ncols())?;
        let mut inputs = Vec::with_capacity(self.mlp.len());
        let mut pres = Vec::with_capacity(self.mlp.len());
        let mut h = batch.to_owned();
        for layer in &self.mlp {
            let pre = h.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(h);
            h = pre.mapv(|x| if x > T::zero() { x } else { T::zero() });
            pres.push(pre);
        }
        Ok((inputs, pres, h))
    }

    /// Output of the latent layer, before batch norm.
    pub fn latent(&self, batch: ArrayView2<T>) -> Result<Array2<T>> {
        let (_, _, f) = self.features(batch)?;
        Ok(f.dot(&self.latent_weight.t()))
    }

    /// Runs the pipeline. Train mode uses batch statistics and updates the
    /// running statistics; infer mode leaves `self` untouched.
    pub fn forward(&mut self, batch: ArrayView2<T>, mode: BatchMode) -> Result<(Array2<T>, ForwardCache<T>)> {
        match mode {
            BatchMode::Train => self.forward_train(batch),
            BatchMode::Infer => self.forward_infer(batch),
        }
    }

    pub fn forward_train(&mut self, batch: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        let n = batch.nrows();
        if n < 2 {
            return Err(invalid(format!("train mode needs at least 2 rows, got {n}")));
        }
        let (layer_inputs, layer_pre, features) = self.features(batch)?;
        let z = features.dot(&self.latent_weight.t());
        let k = self.arch.bits;
        let (normalized, inv_std) = if self.arch.batch_norm {
            let nf = T::from_count(n);
            let mean = z.sum_axis(Axis(0)) / nf;
            let centered = &z - &mean;
            let var = centered.mapv(|x| x * x).sum_axis(Axis(0)) / nf;
            let eps = self.bn.epsilon;
            let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
            let normalized = &centered * &inv_std;
            let mom = self.bn.momentum;
            let keep = T::one() - mom;
            let unbiased = &var * (nf / (nf - T::one()));
            self.bn.running_mean = &self.bn.running_mean * keep + &mean * mom;
            self.bn.running_var = &self.bn.running_var * keep + &unbiased * mom;
            (normalized, inv_std)
        } else {
            (z, Array1::ones(k))
        };
        self.finish(BatchMode::Train, layer_inputs, layer_pre, features, normalized, inv_std)
    }

    pub fn forward_infer(&self, batch: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        if batch.nrows() == 0 {
            return Err(invalid("empty batch"));
        }
        let (layer_inputs, layer_pre, features) = self.features(batch)?;
        let z = features.dot(&self.latent_weight.t());
        let (normalized, inv_std) = if self.arch.batch_norm {
            let eps = self.bn.epsilon;
            let inv_std = self.bn.running_var.mapv(|v| T::one() / (v + eps).sqrt());
            ((&z - &self.bn.running_mean) * &inv_std, inv_std)
        } else {
            (z, Array1::ones(self.arch.bits))
        };
        self.finish(BatchMode::Infer, layer_inputs, layer_pre, features, normalized, inv_std)
    }

    fn finish(
        &self,
        mode: BatchMode,
        layer_inputs: Vec<Array2<T>>,
        layer_pre: Vec<Array2<T>>,
        features: Array2<T>,
        normalized: Array2<T>,
        inv_std: Array1<T>,
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        let mut y = if self.arch.batch_norm {
            &normalized * &self.bn.gamma + &self.bn.beta
        } else {
            normalized.clone()
        };
        if let Some(pos) = y.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let mut norms = Array1::ones(y.nrows());
        if self.arch.l2_normalize {
            for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
                let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
                if norm == T::zero() {
                    return Err(Error::ZeroNorm(i));
                }
                row.mapv_inplace(|x| x / norm);
                norms[i] = norm;
            }
        }
        let cache = ForwardCache {
            mode,
            layer_inputs,
            layer_pre,
            features,
            normalized,
            inv_std,
            norms,
            codes: y.clone(),
        };
        Ok((y, cache))
    }

    /// Exact gradients of the train-mode forward pass for upstream
    /// gradient `grad_codes` (`N×K`).
    pub fn backward(&self, cache: &ForwardCache<T>, grad_codes: ArrayView2<T>) -> Result<EncoderGrads<T>> {
        if cache.mode != BatchMode::Train {
            return Err(Error::ModeMismatch);
        }
        let n = cache.codes.nrows();
        ensure_dim("gradient rows", n, grad_codes.nrows())?;
        ensure_dim("gradient cols", self.arch.bits, grad_codes.ncols())?;

        // L2: dy = (g - v<v,g>) / ‖y‖
        let mut dy = grad_codes.to_owned();
        if self.arch.l2_normalize {
            let floor = T::lit(NORM_FLOOR);
            for ((mut d, v), &norm) in dy
                .axis_iter_mut(Axis(0))
                .zip(cache.codes.axis_iter(Axis(0)))
                .zip(cache.norms.iter())
            {
                let proj = d.dot(&v);
                let r = norm.max(floor);
                d.zip_mut_with(&v, |g, &vk| *g = (*g - vk * proj) / r);
            }
        }

        let k = self.arch.bits;
        let (dz, bn_gamma, bn_beta) = if self.arch.batch_norm {
            let xhat = &cache.normalized;
            let dgamma = (&dy * xhat).sum_axis(Axis(0));
            let dbeta = dy.sum_axis(Axis(0));
            let dxhat = &dy * &self.bn.gamma;
            let nf = T::from_count(n);
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
            let dz = (&dxhat * nf - &sum_dxhat - &(xhat * &sum_dxhat_xhat)) * &(&cache.inv_std / nf);
            (dz, dgamma, dbeta)
        } else {
            (dy, Array1::zeros(k), Array1::zeros(k))
        };

        let latent_weight = dz.t().dot(&cache.features);
        let mut dh = dz.dot(&self.latent_weight);
        let mut mlp = Vec::with_capacity(self.mlp.len());
        for (i, layer) in self.mlp.iter().enumerate().rev() {
            let pre = &cache.layer_pre[i];
            let mut dpre = dh;
            dpre.zip_mut_with(pre, |g, &p| {
                if p <= T::zero() {
                    *g = T::zero();
                }
            });
            mlp.push(DenseLayer {
                weight: dpre.t().dot(&cache.layer_inputs[i]),
                bias: dpre.sum_axis(Axis(0)),
            });
            dh = dpre.dot(&layer.weight);
        }
        mlp.reverse();
        Ok(EncoderGrads {
            mlp,
            latent_weight,
            bn_gamma,
            bn_beta,
            input: dh,
        })
    }

    /// Copy with running statistics replaced by the mean and population
    /// variance of the latent activations over `database`.
    pub fn recalibrate_bn(&self, database: ArrayView2<T>) -> Result<Self> {
        let m = database.nrows();
        if m < 2 {
            return Err(invalid(format!("recalibration needs at least 2 rows, got {m}")));
        }
        if !self.arch.batch_norm {
            return Err(invalid("model has no batch-norm layer to recalibrate"));
        }
        let z = self.latent(database)?;
        let mf = T::from_count(m);
        let mean = z.sum_axis(Axis(0)) / mf;
        let var = (&z - &mean).mapv(|x| x * x).sum_axis(Axis(0)) / mf;
        let mut out = self.clone();
        out.bn.running_mean = mean;
        out.bn.running_var = var;
        Ok(out)
    }

    /// Infer-mode continuous codes.
    pub fn encode_continuous(&self, batch: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.forward_infer(batch)?.0)
    }

    /// Infer-mode codes binarized (ties to +1) and packed.
    pub fn encode_binary(&self, batch: ArrayView2<T>) -> Result<Vec<PackedCode>> {
        let codes = self.encode_continuous(batch)?;
        codes
            .axis_iter(Axis(0))
            .map(|row| binarize_and_pack(&row.to_vec()))
            .collect()
    }
}
