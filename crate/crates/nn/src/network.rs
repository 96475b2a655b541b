use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layer::{
    dense_backward, dense_forward, depthwise_backward, depthwise_forward, matmul, matmul_a_bt,
    matmul_at_b, split_dwsep, split_dwsep_mut, ConvGeom,
};
use crate::{depth_to_space, space_to_depth, LayerSpec, NnError, Result, Tensor};

/// A feed-forward stack of layers over one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample shape entering each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    params: Vec<f32>,
    seed: u64,
}

/// Values retained by [`Network::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    /// `values[i]` enters layer `i`; the last entry is the network output.
    values: Vec<Tensor>,
    /// Depthwise-stage outputs of separable convolutions.
    depthwise: Vec<Option<Tensor>>,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("activations hold at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.values[0]
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f32>,
    pub input: Option<Tensor>,
}

impl Network {
    /// Builds a network with fan-in scaled uniform initialisation
    /// (He bound for layers feeding a ReLU). Biases start at zero.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut net = Self::with_zero_params(input_shape, layers, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..net.layers.len() {
            let layer = net.layers[i];
            let feeds_relu = net.layers[i + 1..]
                .iter()
                .find(|l| !matches!(l, LayerSpec::Flatten | LayerSpec::SpaceToDepth { .. }))
                .is_some_and(|l| *l == LayerSpec::Relu);
            let gain = if feeds_relu { 6.0 } else { 3.0 };
            let block = net.layer_params_mut(i);
            match layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let bound = (gain / inputs as f64).sqrt() as f32;
                    for w in &mut block[..inputs * outputs] {
                        *w = rng.random_range(-bound..bound);
                    }
                }
                LayerSpec::DepthwiseSeparableConv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let (dw, _, pw, _) = split_dwsep_mut(block, in_channels, out_channels, kernel);
                    let dbound = (3.0 / layer.fan_in() as f64).sqrt() as f32;
                    for w in dw.iter_mut() {
                        *w = rng.random_range(-dbound..dbound);
                    }
                    let pbound = (gain / in_channels as f64).sqrt() as f32;
                    for w in pw.iter_mut() {
                        *w = rng.random_range(-pbound..pbound);
                    }
                }
                _ => {}
            }
        }
        Ok(net)
    }

    pub fn with_zero_params(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut shapes = vec![input_shape.clone()];
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for (i, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
            offsets.push(total);
            total += layer.param_count();
        }
        offsets.push(total);
        Ok(Self {
            input_shape,
            layers,
            shapes,
            offsets,
            params: vec![0.0; total],
            seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f32]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.params.len()],
                actual: vec![params.len()],
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn layer_params(&self, i: usize) -> &[f32] {
        &self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn layer_params_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.is_empty() || s[1..] != self.input_shape[..] {
            let mut expected = vec![s.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                expected,
                actual: s.to_vec(),
            });
        }
        Ok(())
    }

    fn apply(&self, i: usize, x: &Tensor, keep: &mut Option<Tensor>) -> Tensor {
        let p = self.layer_params(i);
        match self.layers[i] {
            LayerSpec::Dense { inputs, outputs } => dense_forward(x, p, inputs, outputs),
            LayerSpec::DepthwiseSeparableConv {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let g = ConvGeom::new(x.shape(), kernel, stride);
                let (dw, db, pw, pb) = split_dwsep(p, in_channels, out_channels, kernel);
                let d = depthwise_forward(x, &g, dw, db);
                let rows = g.n * g.ho * g.wo;
                let mut out = Vec::with_capacity(rows * out_channels);
                for _ in 0..rows {
                    out.extend_from_slice(pb);
                }
                matmul(rows, in_channels, out_channels, d.data(), pw, &mut out, true);
                *keep = Some(d);
                Tensor::new(vec![g.n, g.ho, g.wo, out_channels], out).expect("conv output shape")
            }
            LayerSpec::SpaceToDepth { block } => space_to_depth(x, block).expect("validated at build"),
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(x.shape().to_vec(), data).unwrap()
            }
            LayerSpec::Tanh => {
                let data = x.data().iter().map(|&v| v.tanh()).collect();
                Tensor::new(x.shape().to_vec(), data).unwrap()
            }
            LayerSpec::Flatten => {
                let n = x.batch();
                x.clone().reshape(vec![n, x.row_len()]).unwrap()
            }
        }
    }

    /// Runs the network and keeps every intermediate value for [`Network::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Activations)> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut depthwise = Vec::with_capacity(self.layers.len());
        values.push(input.clone());
        for i in 0..self.layers.len() {
            let mut keep = None;
            let next = self.apply(i, values.last().unwrap(), &mut keep);
            values.push(next);
            depthwise.push(keep);
        }
        let out = values.last().unwrap().clone();
        Ok((out, Activations { values, depthwise }))
    }

    /// Forward pass without retaining activations.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut cur = input.clone();
        for i in 0..self.layers.len() {
            let mut keep = None;
            cur = self.apply(i, &cur, &mut keep);
        }
        Ok(cur)
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to
    /// the network output is `grad_output`.
    pub fn backward(&self, acts: &Activations, grad_output: &Tensor) -> Result<Gradients> {
        self.backward_impl(acts, grad_output, true)
    }

    /// Like [`Network::backward`] but skips the gradient with respect to the input.
    pub fn backward_params(&self, acts: &Activations, grad_output: &Tensor) -> Result<Vec<f32>> {
        Ok(self.backward_impl(acts, grad_output, false)?.params)
    }

    fn backward_impl(&self, acts: &Activations, grad_output: &Tensor, want_input: bool) -> Result<Gradients> {
        if acts.values.len() != self.layers.len() + 1 {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.layers.len() + 1],
                actual: vec![acts.values.len()],
            });
        }
        let out = acts.output();
        if grad_output.shape() != out.shape() {
            return Err(NnError::ShapeMismatch {
                expected: out.shape().to_vec(),
                actual: grad_output.shape().to_vec(),
            });
        }
        let mut grads = vec![0.0f32; self.params.len()];
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &acts.values[i];
            let need_dx = want_input || i > 0;
            let p = self.layer_params(i);
            let pg = &mut grads[self.offsets[i]..self.offsets[i + 1]];
            let dx = match self.layers[i] {
                LayerSpec::Dense { inputs, outputs } => dense_backward(x, &g, p, inputs, outputs, pg, need_dx),
                LayerSpec::DepthwiseSeparableConv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let geom = ConvGeom::new(x.shape(), kernel, stride);
                    let d = acts.depthwise[i].as_ref().expect("depthwise stage kept by forward");
                    let rows = geom.n * geom.ho * geom.wo;
                    let (dw, _, pw, _) = split_dwsep(p, in_channels, out_channels, kernel);
                    let (gdw, gdb, gpw, gpb) = split_dwsep_mut(pg, in_channels, out_channels, kernel);
                    matmul_at_b(rows, in_channels, out_channels, d.data(), g.data(), gpw);
                    for row in g.data().chunks_exact(out_channels) {
                        for (b, r) in gpb.iter_mut().zip(row) {
                            *b += r;
                        }
                    }
                    let mut gd = vec![0.0f32; rows * in_channels];
                    matmul_a_bt(rows, out_channels, in_channels, g.data(), pw, &mut gd);
                    depthwise_backward(x, &geom, dw, &gd, gdw, gdb, need_dx)
                }
                LayerSpec::SpaceToDepth { block } => need_dx.then(|| depth_to_space(&g, block).unwrap()),
                LayerSpec::Relu => need_dx.then(|| {
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    Tensor::new(x.shape().to_vec(), data).unwrap()
                }),
                LayerSpec::Tanh => need_dx.then(|| {
                    let y = &acts.values[i + 1];
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                        .collect();
                    Tensor::new(x.shape().to_vec(), data).unwrap()
                }),
                LayerSpec::Flatten => need_dx.then(|| g.clone().reshape(x.shape().to_vec()).unwrap()),
            };
            match dx {
                Some(dx) => g = dx,
                None => break,
            }
        }
        Ok(Gradients {
            params: grads,
            input: want_input.then_some(g),
        })
    }

    /// `self <- tau * other + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, other: &Network, tau: f32) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.params.len()],
                actual: vec![other.params.len()],
            });
        }
        if tau == 1.0 {
            self.params.copy_from_slice(&other.params);
            return Ok(());
        }
        for (t, &o) in self.params.iter_mut().zip(&other.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }
}
