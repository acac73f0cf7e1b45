//! Network assembly: configuration, parameter initialization, forward and
//! backward passes over whole batches, and feature-map extraction.

pub mod io;

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::loss::ProbBatch;
use crate::nn::{
    flatten, relu_backward, relu_cached, softmax, unflatten, ConvCache, ConvLayer, DenseLayer,
    Dropout, DropoutMask, MaxPool, PoolCache,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Shape, Tensor};

/// Hyperparameters that fully determine a network's architecture.
///
/// `pool_layers` and `dropout_layers` hold 1-based conv-block indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_shape: (usize, usize, usize),
    pub conv_filters: Vec<usize>,
    pub conv_kernel_size: usize,
    pub conv_strides: Vec<usize>,
    pub pool_layers: BTreeSet<usize>,
    pub dropout_layers: BTreeSet<usize>,
    pub dropout_rate: f64,
    pub dense_units: Vec<usize>,
}

/// One entry of the shape-propagation record: a layer label and its output
/// dimensions (without the batch axis).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: String,
    pub dims: Vec<usize>,
}

impl ModelConfig {
    /// The reference architecture: five conv blocks (64..1024 filters, 3x3
    /// kernels, stride 2 then 1s, pools after blocks 1-4, dropout 0.187 on
    /// all five) into dense 256 -> 128 -> 10 on 3x256x256 input.
    pub fn agenet() -> ModelConfig {
        ModelConfig {
            input_shape: (3, 256, 256),
            conv_filters: vec![64, 128, 256, 512, 1024],
            conv_kernel_size: 3,
            conv_strides: vec![2, 1, 1, 1, 1],
            pool_layers: BTreeSet::from([1, 2, 3, 4]),
            dropout_layers: BTreeSet::from([1, 2, 3, 4, 5]),
            dropout_rate: 0.187,
            dense_units: vec![256, 128, 10],
        }
    }

    pub fn conv_layers(&self) -> usize {
        self.conv_filters.len()
    }

    /// Number of output classes (the last dense width).
    pub fn classes(&self) -> usize {
        *self.dense_units.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!(
                "input shape {c}x{h}x{w} has a zero dimension"
            )));
        }
        if self.conv_filters.iter().any(|&f| f == 0) {
            return Err(Error::config("conv filter counts must be positive"));
        }
        if self.conv_strides.len() != self.conv_filters.len() {
            return Err(Error::config(format!(
                "{} conv strides for {} conv layers",
                self.conv_strides.len(),
                self.conv_filters.len()
            )));
        }
        if self.conv_strides.iter().any(|&s| s == 0) {
            return Err(Error::config("conv strides must be >= 1"));
        }
        if !self.conv_filters.is_empty() && self.conv_kernel_size == 0 {
            return Err(Error::config("conv kernel size must be >= 1"));
        }
        let n = self.conv_layers();
        for &idx in self.pool_layers.iter().chain(&self.dropout_layers) {
            if idx == 0 || idx > n {
                return Err(Error::config(format!(
                    "layer index {idx} is outside the {n} conv blocks"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.dense_units.is_empty() {
            return Err(Error::config("at least one dense layer (the classifier) is required"));
        }
        if self.dense_units.iter().any(|&u| u == 0) {
            return Err(Error::config("dense widths must be positive"));
        }
        // Shape propagation catches pools that no longer tile, kernels that
        // outgrow the activation, and similar geometry faults.
        self.shape_chain()?;
        Ok(())
    }

    /// Output shape of every layer in order, ending with the dense stack.
    pub fn shape_chain(&self) -> Result<Vec<LayerShape>> {
        let (mut c, mut h, mut w) = self.input_shape;
        let mut chain = vec![LayerShape {
            layer: "input".into(),
            dims: vec![c, h, w],
        }];
        let k = self.conv_kernel_size;
        for (i, (&filters, &stride)) in
            self.conv_filters.iter().zip(&self.conv_strides).enumerate()
        {
            let block = i + 1;
            let conv = ConvLayer::<f32> {
                kernels: Tensor::zeros(Shape::new(vec![filters, c, k, k])?),
                bias: Tensor::zeros(Shape::new(vec![filters])?),
                stride,
                pad: (k - 1) / 2,
            };
            let (ho, wo) = conv.output_hw(h, w).map_err(|e| {
                Error::config(format!("conv{block} cannot consume a {c}x{h}x{w} input: {e}"))
            })?;
            c = filters;
            h = ho;
            w = wo;
            chain.push(LayerShape { layer: format!("conv{block}"), dims: vec![c, h, w] });
            if self.pool_layers.contains(&block) {
                let pool = MaxPool::two_by_two();
                let err = |axis: usize| {
                    Error::config(format!(
                        "pool{block} cannot tile a {c}x{h}x{w} activation (axis extent {axis})"
                    ))
                };
                if h < 2 || (h - 2) % 2 != 0 {
                    return Err(err(h));
                }
                if w < 2 || (w - 2) % 2 != 0 {
                    return Err(err(w));
                }
                h = (h - pool.size) / pool.stride + 1;
                w = (w - pool.size) / pool.stride + 1;
                chain.push(LayerShape { layer: format!("pool{block}"), dims: vec![c, h, w] });
            }
        }
        let mut width = c * h * w;
        chain.push(LayerShape { layer: "flatten".into(), dims: vec![width] });
        for (j, &units) in self.dense_units.iter().enumerate() {
            width = units;
            chain.push(LayerShape { layer: format!("dense{}", j + 1), dims: vec![width] });
        }
        Ok(chain)
    }

    /// Width of the flattened activation entering the dense stack.
    pub fn flatten_width(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        let flat = chain
            .iter()
            .find(|s| s.layer == "flatten")
            .expect("shape chain always holds a flatten entry");
        Ok(flat.dims[0])
    }

    /// Total trainable parameters, by pure arithmetic.
    pub fn param_count(&self) -> Result<usize> {
        let mut total = 0;
        let (mut c, _, _) = self.input_shape;
        let k = self.conv_kernel_size;
        for &filters in &self.conv_filters {
            total += filters * (c * k * k + 1);
            c = filters;
        }
        let mut width = self.flatten_width()?;
        for &units in &self.dense_units {
            total += width * units + units;
            width = units;
        }
        Ok(total)
    }
}

/// One conv block: convolution, ReLU, then optional pool and dropout.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv: ConvLayer<T>,
    pub pool: Option<MaxPool>,
    pub dropout: Option<Dropout>,
}

/// A built network: conv blocks, then dense layers with ReLU between all but
/// the last, then softmax.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub blocks: Vec<ConvBlock<T>>,
    pub dense: Vec<DenseLayer<T>>,
}

struct BlockCache<T> {
    conv: ConvCache<T>,
    relu_mask: Vec<bool>,
    pool: Option<PoolCache>,
    dropout: Option<DropoutMask>,
}

/// Everything the backward pass needs to replay one training forward pass.
pub struct ForwardCaches<T> {
    blocks: Vec<BlockCache<T>>,
    flat_dims: [usize; 4],
    dense_inputs: Vec<Tensor<T>>,
    dense_relu_masks: Vec<Vec<bool>>,
}

/// Parameter gradients, ordered exactly like [`Network::params`].
pub struct Gradients<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.tensors.iter().collect()
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors
    }
}

impl<T: Scalar> Network<T> {
    /// Initializes all parameters (He-normal kernels/weights, zero biases)
    /// from the given generator.
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Network<T>> {
        config.validate()?;
        let (mut c, _, _) = config.input_shape;
        let k = config.conv_kernel_size;
        let mut blocks = Vec::with_capacity(config.conv_layers());
        for (i, (&filters, &stride)) in
            config.conv_filters.iter().zip(&config.conv_strides).enumerate()
        {
            let conv = ConvLayer::init(c, filters, k, stride, rng)?;
            let block = i + 1;
            let pool = config.pool_layers.contains(&block).then(MaxPool::two_by_two);
            let dropout = if config.dropout_layers.contains(&block) {
                Some(Dropout::new(config.dropout_rate)?)
            } else {
                None
            };
            blocks.push(ConvBlock { conv, pool, dropout });
            c = filters;
        }
        let mut width = config.flatten_width()?;
        let mut dense = Vec::with_capacity(config.dense_units.len());
        for &units in &config.dense_units {
            dense.push(DenseLayer::init(width, units, rng)?);
            width = units;
        }
        Ok(Network { config, blocks, dense })
    }

    pub fn classes(&self) -> usize {
        self.config.classes()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.elem_count()).sum()
    }

    /// All parameter tensors: per block kernels then bias, then per dense
    /// layer weights then bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut ps = Vec::with_capacity(2 * (self.blocks.len() + self.dense.len()));
        for b in &self.blocks {
            ps.push(&b.conv.kernels);
            ps.push(&b.conv.bias);
        }
        for d in &self.dense {
            ps.push(&d.weights);
            ps.push(&d.bias);
        }
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut ps = Vec::with_capacity(2 * (self.blocks.len() + self.dense.len()));
        for b in &mut self.blocks {
            ps.push(&mut b.conv.kernels);
            ps.push(&mut b.conv.bias);
        }
        for d in &mut self.dense {
            ps.push(&mut d.weights);
            ps.push(&mut d.bias);
        }
        ps
    }

    /// Stable names matching [`Network::params`] order, used by serialization.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(2 * (self.blocks.len() + self.dense.len()));
        for i in 1..=self.blocks.len() {
            names.push(format!("conv{i}.kernels"));
            names.push(format!("conv{i}.bias"));
        }
        for j in 1..=self.dense.len() {
            names.push(format!("dense{j}.weights"));
            names.push(format!("dense{j}.bias"));
        }
        names
    }

    /// Deep copy of all parameters, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().cloned().collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(Error::shape(format!(
                "snapshot holds {} tensors, network has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter_mut().zip(snapshot) {
            if p.dims() != s.dims() {
                return Err(Error::shape(format!(
                    "snapshot tensor is {} where the network expects {}",
                    s.shape(),
                    p.shape()
                )));
            }
            **p = s.clone();
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let (c, h, w) = self.config.input_shape;
        if batch.rank() != 4 || batch.dims()[1..] != [c, h, w] {
            return Err(Error::shape(format!(
                "network expects [n, {c}, {h}, {w}] batches, got {}",
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass: dropout is skipped, nothing is cached.
    /// Overflowed or NaN logits would otherwise surface as a confusing
    /// probability-validation failure (or be laundered into a uniform
    /// prediction by the stable softmax); fail fast and name the real issue.
    fn check_logits(logits: &Tensor<T>) -> Result<()> {
        if logits.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "non-finite logits in the forward pass".to_string(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor<T>) -> Result<ProbBatch<T>> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for block in &self.blocks {
            x = crate::nn::relu(&block.conv.forward(&x)?);
            if let Some(pool) = &block.pool {
                x = pool.forward(&x)?.0;
            }
        }
        let (mut flat, _) = flatten(&x)?;
        let last = self.dense.len() - 1;
        for (j, layer) in self.dense.iter().enumerate() {
            flat = layer.forward(&flat)?;
            if j < last {
                flat = crate::nn::relu(&flat);
            }
        }
        Self::check_logits(&flat)?;
        ProbBatch::from_tensor(softmax(&flat)?)
    }

    /// Training pass: dropout masks drawn from `rng`, caches kept for
    /// [`Network::backward`].
    pub fn forward_train(
        &self,
        batch: &Tensor<T>,
        rng: &mut Rng,
    ) -> Result<(ProbBatch<T>, ForwardCaches<T>)> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (conv_out, conv_cache) = block.conv.forward_cached(&x)?;
            let (relu_out, relu_mask) = relu_cached(&conv_out);
            let (pooled, pool_cache) = match &block.pool {
                Some(pool) => {
                    let (out, cache) = pool.forward(&relu_out)?;
                    (out, Some(cache))
                }
                None => (relu_out, None),
            };
            let (dropped, drop_mask) = match &block.dropout {
                Some(dropout) => {
                    let (out, mask) = dropout.forward_train(&pooled, rng);
                    (out, Some(mask))
                }
                None => (pooled, None),
            };
            blocks.push(BlockCache {
                conv: conv_cache,
                relu_mask,
                pool: pool_cache,
                dropout: drop_mask,
            });
            x = dropped;
        }
        let (mut flat, flat_dims) = flatten(&x)?;
        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        let mut dense_relu_masks = Vec::with_capacity(self.dense.len().saturating_sub(1));
        let last = self.dense.len() - 1;
        for (j, layer) in self.dense.iter().enumerate() {
            dense_inputs.push(flat.clone());
            flat = layer.forward(&flat)?;
            if j < last {
                let (out, mask) = relu_cached(&flat);
                dense_relu_masks.push(mask);
                flat = out;
            }
        }
        Self::check_logits(&flat)?;
        let probs = ProbBatch::from_tensor(softmax(&flat)?)?;
        let caches = ForwardCaches { blocks, flat_dims, dense_inputs, dense_relu_masks };
        Ok((probs, caches))
    }

    /// Backpropagates the fused softmax/cross-entropy gradient (with respect
    /// to the final logits) through the whole stack.
    pub fn backward(
        &self,
        caches: &ForwardCaches<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        let mut dense_grads = Vec::with_capacity(self.dense.len());
        let mut g = grad_logits.clone();
        for (j, layer) in self.dense.iter().enumerate().rev() {
            if j < self.dense.len() - 1 {
                g = relu_backward(&caches.dense_relu_masks[j], &g)?;
            }
            let grads = layer.backward(&caches.dense_inputs[j], &g)?;
            g = grads.input;
            dense_grads.push((grads.weights, grads.bias));
        }
        dense_grads.reverse();

        let mut gx = unflatten(&g, caches.flat_dims)?;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, cache) in self.blocks.iter().zip(&caches.blocks).rev() {
            if let Some(mask) = &cache.dropout {
                gx = Dropout::backward(mask, &gx)?;
            }
            if let Some(pool) = &block.pool {
                let pool_cache = cache.pool.as_ref().expect("pool cache exists when pool does");
                gx = pool.backward(pool_cache, &gx)?;
            }
            gx = relu_backward(&cache.relu_mask, &gx)?;
            let grads = block.conv.backward(&cache.conv, &gx)?;
            gx = grads.input;
            block_grads.push((grads.kernels, grads.bias));
        }
        block_grads.reverse();

        let mut tensors = Vec::with_capacity(2 * (block_grads.len() + dense_grads.len()));
        for (k, b) in block_grads {
            tensors.push(k);
            tensors.push(b);
        }
        for (w, b) in dense_grads {
            tensors.push(w);
            tensors.push(b);
        }
        Ok(Gradients { tensors })
    }

    /// Post-ReLU, pre-pool activations of conv block `layer` (1-based) for a
    /// single [C, H, W] image.
    pub fn feature_maps(&self, image: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        if layer == 0 || layer > self.blocks.len() {
            return Err(Error::config(format!(
                "feature maps for layer {layer}, but the network has conv blocks 1..={}",
                self.blocks.len()
            )));
        }
        let (c, h, w) = self.config.input_shape;
        if image.dims() != [c, h, w] {
            return Err(Error::shape(format!(
                "feature-map input must be {c}x{h}x{w}, got {}",
                image.shape()
            )));
        }
        let mut x = image.clone().reshape(Shape::new(vec![1, c, h, w])?)?;
        for (i, block) in self.blocks.iter().take(layer).enumerate() {
            x = crate::nn::relu(&block.conv.forward(&x)?);
            let is_target = i + 1 == layer;
            if is_target {
                break;
            }
            if let Some(pool) = &block.pool {
                x = pool.forward(&x)?.0;
            }
        }
        let dims = x.dims().to_vec();
        x.reshape(Shape::new(dims[1..].to_vec())?)
    }
}
