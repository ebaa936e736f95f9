use ndarray::{linalg::general_mat_mul, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Activation applied after the last layer. Hidden layers always use ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Fully connected network with ReLU hidden layers.
///
/// Parameters live in one flat buffer, layer by layer: the `out x in` weight
/// matrix in row-major order followed by the `out` biases. Optimizers, target
/// updates and checkpoints all operate on that buffer directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    output: Activation,
    params: Vec<f64>,
}

/// Post-activation outputs of every layer for a batch, input included.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Gradients for a single (input, output gradient) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], output: Activation, seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            params,
        })
    }

    pub fn from_params(sizes: &[usize], output: Activation, params: Vec<f64>) -> Result<Self> {
        validate_sizes(sizes)?;
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(Error::dim(expected, params.len()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// (weight offset, bias offset, fan_in, fan_out) of layer `l`.
    fn layout(&self, l: usize) -> (usize, usize, usize, usize) {
        let off: usize = param_count(&self.sizes[..=l]);
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        (off, off + fan_in * fan_out, fan_in, fan_out)
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, b, fan_in, fan_out) = self.layout(l);
        ArrayView2::from_shape((fan_out, fan_in), &self.params[w..b]).unwrap()
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b, _, fan_out) = self.layout(l);
        ArrayView1::from(&self.params[b..b + fan_out])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), input.len()));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), input.ncols()));
        }
        let mut x = self.layer(0, input);
        for l in 1..self.n_layers() {
            x = self.layer(l, x.view());
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), input.ncols()));
        }
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.to_owned());
        for l in 0..self.n_layers() {
            let next = self.layer(l, activations[l].view());
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    fn layer(&self, l: usize, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(l).t());
        z += &self.bias(l);
        if l + 1 < self.n_layers() {
            z.mapv_inplace(|v| v.max(0.0));
        } else if self.output == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
        z
    }

    /// Reverse pass over a cached batch. Parameter gradients are summed over
    /// the batch into `grads` (which is overwritten); the input gradient is
    /// returned per row.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f64>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        let out = cache.output();
        if output_grad.dim() != out.dim() {
            return Err(Error::dim(out.len(), output_grad.len()));
        }
        if grads.len() != self.params.len() {
            return Err(Error::dim(self.params.len(), grads.len()));
        }
        let mut delta = output_grad.to_owned();
        if self.output == Activation::Tanh {
            delta.zip_mut_with(out, |d, &y| *d *= 1.0 - y * y);
        }
        for l in (0..self.n_layers()).rev() {
            let (w, b, fan_in, fan_out) = self.layout(l);
            let input = &cache.activations[l];
            {
                let (gw_slice, rest) = grads[w..].split_at_mut(b - w);
                let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw_slice).unwrap();
                general_mat_mul(1.0, &delta.t(), input, 0.0, &mut gw);
                for (g, s) in rest[..fan_out].iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g = s;
                }
            }
            let mut upstream = delta.dot(&self.weight(l));
            if l > 0 {
                upstream.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        Ok(delta)
    }

    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        if input.len() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), input.len()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::dim(self.output_dim(), output_grad.len()));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).unwrap();
        let cache = self.forward_cached(x)?;
        let mut params = vec![0.0; self.params.len()];
        let input_grad = self.backward_batch(&cache, g, &mut params)?;
        Ok(Gradients {
            params,
            input: input_grad.into_raw_vec_and_offset().0,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config("a network needs at least two layer sizes"));
    }
    if sizes.contains(&0) {
        return Err(Error::config("layer sizes must be positive"));
    }
    Ok(())
}
