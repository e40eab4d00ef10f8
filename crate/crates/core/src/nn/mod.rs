//! Small dense-network engine: fully connected layers, ReLU/identity
//! activations, exact reverse-mode gradients and SGD/Adam updates.
//!
//! Everything runs in `f64`. Batches are `[batch, features]` tensors; a 1-D
//! input is treated as a batch of one.

mod io;
mod kernels;
mod optim;
mod tensor;

pub use io::{load_network, read_network, save_network, write_network, NETWORK_MAGIC};
pub use optim::{OptimAlgo, Optimizer, OptimizerConfig};
pub use tensor::Tensor;



use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine map followed by an activation. `weights` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Tensor,
    pub biases: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward_into(&self, input: &Tensor) -> Tensor {
        let (batch, n_in, n_out) = (input.rows(), self.input_dim(), self.output_dim());
        let w = self.weights.values();
        let b = self.biases.values();
        let mut out = vec![0.0; batch * n_out];
        kernels::affine(input.values(), batch, w, b, n_in, &mut out);
        if self.activation != Activation::Identity {
            for v in &mut out {
                *v = self.activation.apply(*v);
            }
        }
        Tensor::from_parts_unchecked(vec![batch, n_out], out)
    }
}

/// Per-layer parameter gradients, laid out exactly like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub biases: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGrads {
                weights: Tensor::zeros(l.weights.shape().to_vec()),
                biases: Tensor::zeros(l.biases.shape().to_vec()),
            })
            .collect();
        Self { layers }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.biases.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// Flat view in parameter order (per layer: weights then biases).
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.values().iter().chain(l.biases.values()).copied())
    }

    fn matches(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.shape() == l.weights.shape() && g.biases.shape() == l.biases.shape()
            })
    }
}

/// Activations recorded during a forward pass; `outputs[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    outputs: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("cache always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Random initialization: weights uniform in `±1/sqrt(fan_in)`, zero biases.
    ///
    /// `layer_dims` lists every width including input and output, so
    /// `[4, 3]` is a single 4→3 layer and needs one activation.
    pub fn init(layer_dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config("network needs at least one layer (two dimensions)"));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("layer dimensions must be positive: {layer_dims:?}")));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(Error::config(format!(
                "{} layers need {} activations, got {}",
                layer_dims.len() - 1,
                layer_dims.len() - 1,
                activations.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .zip(activations)
            .map(|(dims, &activation)| {
                let (n_in, n_out) = (dims[0], dims[1]);
                let scale = 1.0 / (n_in as f64).sqrt();
                let w = (0..n_in * n_out).map(|_| rng.gen_range(-scale..scale)).collect();
                Layer {
                    weights: Tensor::from_parts_unchecked(vec![n_out, n_in], w),
                    biases: Tensor::zeros(vec![n_out]),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Assembles a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.shape().len() != 2 || l.biases.shape() != [l.output_dim()] {
                return Err(Error::shape(
                    format!("layer {i}: weights [out, in] and biases [out]"),
                    format!("weights {:?}, biases {:?}", l.weights.shape(), l.biases.shape()),
                ));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    format!("layer {} input {}", i + 1, pair[0].output_dim()),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.biases.is_finite())
    }

    /// Flattened parameters in the same order as [`Gradients::iter`].
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.values().iter().chain(l.biases.values()).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), params.len()));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for v in l.weights.values_mut().iter_mut().chain(l.biases.values_mut()) {
                *v = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Deep copy of all parameters (used for target-network syncs).
    pub fn clone_parameters(&self) -> Self {
        self.clone()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() > 2 || input.cols() != self.input_dim() {
            return Err(Error::shape(
                format!("[batch, {}]", self.input_dim()),
                format!("{:?}", input.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = self.layers[0].forward_into(input);
        for layer in &self.layers[1..] {
            x = layer.forward_into(&x);
        }
        Ok(x)
    }

    /// Forward pass that keeps every intermediate activation for [`Network::backward_cached`].
    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache> {
        self.check_input(input)?;
        let batch = input.rows();
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(Tensor::from_parts_unchecked(vec![batch, input.cols()], input.values().to_vec()));
        for layer in &self.layers {
            let next = layer.forward_into(outputs.last().unwrap());
            outputs.push(next);
        }
        Ok(ForwardCache { outputs })
    }

    /// Reverse-mode pass: given dL/d(output), returns parameter gradients and dL/d(input).
    pub fn backward_cached(&self, cache: &ForwardCache, loss_grad: &Tensor) -> Result<(Gradients, Tensor)> {
        let (grads, input_grad) = self.backward_impl(cache, loss_grad, true)?;
        let batch = cache.output().rows();
        Ok((grads, Tensor::from_parts_unchecked(vec![batch, self.input_dim()], input_grad)))
    }

    /// Like [`Network::backward_cached`] but skips the input gradient.
    pub fn param_grads(&self, cache: &ForwardCache, loss_grad: &Tensor) -> Result<Gradients> {
        Ok(self.backward_impl(cache, loss_grad, false)?.0)
    }

    fn backward_impl(&self, cache: &ForwardCache, loss_grad: &Tensor, input_grad: bool) -> Result<(Gradients, Vec<f64>)> {
        let out = cache.output();
        if loss_grad.rows() != out.rows() || loss_grad.cols() != out.cols() || loss_grad.shape().len() > 2 {
            return Err(Error::shape(format!("{:?}", out.shape()), format!("{:?}", loss_grad.shape())));
        }
        let batch = out.rows();
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = loss_grad.values().to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (n_in, n_out) = (layer.input_dim(), layer.output_dim());
            let x = cache.outputs[li].values();
            let y = cache.outputs[li + 1].values();
            // dL/dz = dL/dy * act'(z)
            for (g, &yv) in upstream.iter_mut().zip(y) {
                *g *= layer.activation.grad_from_output(yv);
            }
            let LayerGrads { weights: gw, biases: gb } = &mut grads.layers[li];
            for s in 0..batch {
                for (b, g) in gb.values_mut().iter_mut().zip(&upstream[s * n_out..(s + 1) * n_out]) {
                    *b += g;
                }
            }
            kernels::accumulate_product(gw.values_mut(), n_out, n_in, &upstream, 1, n_out, x, batch);
            let need_down = li > 0 || input_grad;
            let mut down = vec![0.0; if need_down { batch * n_in } else { 0 }];
            if need_down {
                kernels::accumulate_product(&mut down, batch, n_in, &upstream, n_out, 1, layer.weights.values(), n_out);
            }
            upstream = down;
        }
        Ok((grads, upstream))
    }

    /// Convenience wrapper that recomputes the forward pass.
    pub fn backward(&self, input: &Tensor, loss_grad: &Tensor) -> Result<Gradients> {
        let cache = self.forward_cached(input)?;
        Ok(self.backward_cached(&cache, loss_grad)?.0)
    }
}

/// Mean squared error over all elements and its gradient w.r.t. `prediction`.
pub fn mse_loss(prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(format!("{:?}", prediction.shape()), format!("{:?}", target.shape())));
    }
    let n = prediction.len().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = prediction
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::from_parts_unchecked(prediction.shape().to_vec(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize) -> Layer {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Layer {
            weights: Tensor::matrix(n, n, w).unwrap(),
            biases: Tensor::zeros(vec![n]),
            activation: Activation::Identity,
        }
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = Network::init(&[4, 3], &[Activation::Relu], 0).unwrap();
        let b = Network::init(&[4, 3], &[Activation::Relu], 0).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.layers()[0].biases.values().iter().all(|&b| b == 0.0));
        let scale = 0.5;
        assert!(a.layers()[0].weights.values().iter().all(|w| w.abs() <= scale));
    }

    #[test]
    fn init_rejects_empty() {
        assert!(matches!(Network::init(&[], &[], 0), Err(Error::Config { .. })));
        assert!(matches!(Network::init(&[4], &[], 0), Err(Error::Config { .. })));
        assert!(matches!(Network::init(&[4, 0], &[Activation::Relu], 0), Err(Error::Config { .. })));
    }

    #[test]
    fn identity_network_is_identity() {
        let net = Network::from_layers(vec![identity_layer(3)]).unwrap();
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(net.forward(&x).unwrap().values(), x.values());
    }

    #[test]
    fn relu_clamps_negative_input() {
        let mut l = identity_layer(4);
        l.activation = Activation::Relu;
        let net = Network::from_layers(vec![l]).unwrap();
        let y = net.forward(&Tensor::vector(vec![-1.0; 4]).unwrap()).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Network::init(&[4, 3], &[Activation::Relu], 0).unwrap();
        let err = net.forward(&Tensor::vector(vec![0.0; 5]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn from_layers_checks_chaining() {
        let a = identity_layer(3);
        let b = identity_layer(4);
        assert!(matches!(Network::from_layers(vec![a, b]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let net = Network::init(&[5, 4, 3], &[Activation::Relu, Activation::Identity], 3).unwrap();
        let x = Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap();
        let g = net.backward(&x, &Tensor::zeros(vec![2, 3])).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_mse_gradient_closed_form() {
        // y = W x, L = mean over batch and outputs of (y - t)^2
        let net = Network::init(&[3, 2], &[Activation::Identity], 11).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, -1.0, 0.5, -0.5, 3.0]).unwrap();
        let t = Tensor::matrix(2, 2, vec![0.3, -0.2, 1.0, 0.0]).unwrap();
        let y = net.forward(&x).unwrap();
        let (_, dy) = mse_loss(&y, &t).unwrap();
        let g = net.backward(&x, &dy).unwrap();
        let n = 4.0;
        for o in 0..2 {
            for i in 0..3 {
                let expected: f64 = (0..2)
                    .map(|s| 2.0 / n * (y.row(s)[o] - t.row(s)[o]) * x.row(s)[i])
                    .sum();
                let got = g.layers[0].weights.values()[o * 3 + i];
                assert!((got - expected).abs() < 1e-14, "w[{o},{i}]: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn clone_is_deep() {
        let mut net = Network::init(&[3, 2], &[Activation::Identity], 1).unwrap();
        let copy = net.clone_parameters();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let before = copy.forward(&x).unwrap();
        net.layers_mut()[0].weights.values_mut()[0] += 1.0;
        assert_eq!(copy.forward(&x).unwrap(), before);
        assert_ne!(net.forward(&x).unwrap(), before);
    }

    #[test]
    fn tensor_rejects_non_finite() {
        assert!(matches!(Tensor::vector(vec![1.0, f64::NAN]), Err(Error::Numeric(_))));
        assert!(matches!(Tensor::new(vec![2, 2], vec![0.0; 3]), Err(Error::Shape { .. })));
    }
}
