use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    /// Stable numeric id used by the checkpoint format.
    pub fn id(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Affine map `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "bias length {} does not match {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("non-finite layer parameter".into()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`, weights
    /// first in row-major order.
    pub fn uniform(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight: Vec<f64> = (0..input * output)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let bias = (0..output).map(|_| rng.uniform(-bound, bound)).collect();
        Self {
            weight: Matrix::from_vec(output, input, weight).expect("sized"),
            bias,
            activation,
        }
    }
}

/// A stack of [`Layer`]s whose dimensions chain.
///
/// `version` counts optimizer updates; tapes remember the version they were
/// recorded at so a backward pass against modified parameters is refused.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layers: Vec<Layer>,
    version: u64,
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a model needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Uniform-initialized network with layer widths `dims[0] → … → dims[n]`.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::shape(
                "need n+1 widths and n activations for an n-layer model",
            ));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Layer::uniform(w[0], w[1], act, rng))
            .collect();
        Self::new(layers)
    }

    /// Single linear layer computing the identity map on `dim` inputs.
    pub fn identity(dim: usize) -> Self {
        Self::new(vec![Layer {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }])
        .expect("valid")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let out = apply_layer(layer, &current)?;
            inputs.push(current);
            outputs.push(out.clone());
            current = out;
        }
        Ok((
            current,
            Tape {
                version: self.version,
                batch_rows: batch.rows(),
                inputs,
                outputs,
            },
        ))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut current = apply_layer(&self.layers[0], batch)?;
        for layer in &self.layers[1..] {
            current = apply_layer(layer, &current)?;
        }
        Ok(current)
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the batch that produced `tape`.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<(GradientSet, Matrix)> {
        if tape.version != self.version || tape.outputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "tape recorded at model version {} cannot be used with version {}",
                tape.version, self.version
            )));
        }
        if output_grad.shape() != (tape.batch_rows, self.output_dim()) {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match forward output ({}, {})",
                output_grad.shape(),
                tape.batch_rows,
                self.output_dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &tape.outputs[i];
            if layer.activation != Activation::Identity {
                for (g, &y) in upstream.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *g *= layer.activation.derivative_from_output(y);
                }
            }
            let weight = matmul_tn(&upstream, &tape.inputs[i])?;
            let bias = column_sums(&upstream);
            let next = matmul(&upstream, &layer.weight)?;
            grads.push(LayerGrad { weight, bias });
            upstream = next;
        }
        grads.reverse();
        Ok((GradientSet { layers: grads }, upstream))
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }
}

fn apply_layer(layer: &Layer, input: &Matrix) -> Result<Matrix> {
    let mut out = matmul_nt(input, &layer.weight)?;
    for r in 0..out.rows() {
        for (v, b) in out.row_mut(r).iter_mut().zip(&layer.bias) {
            *v = layer.activation.apply(*v + b);
        }
    }
    Ok(out)
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

/// Activations cached by [`MlpModel::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    batch_rows: usize,
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// One gradient tensor per parameter tensor of an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    pub fn matches(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(g, l)| {
                g.weight.shape() == l.weight.shape() && g.bias.len() == l.bias.len()
            })
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradient sets have different depth"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }
}
