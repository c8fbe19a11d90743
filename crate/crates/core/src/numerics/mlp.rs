use serde::{Deserialize, Serialize};

use super::{NumericsError, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
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

/// One named block of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat `f64` storage plus the ordered layout describing it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Vec<Block>,
}

impl ParameterVector {
    pub fn zeros(layout: Vec<Block>) -> Self {
        let n = layout.iter().map(Block::len).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn from_values(layout: Vec<Block>, values: Vec<f64>) -> Result<Self, NumericsError> {
        let n: usize = layout.iter().map(Block::len).sum();
        if n != values.len() {
            return Err(NumericsError::DimensionMismatch {
                what: "parameter values",
                expected: n,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite("parameter values"));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Block] {
        &self.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Offset and length of a named block.
    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut off = 0;
        for b in &self.layout {
            if b.name == name {
                return Some(off..off + b.len());
            }
            off += b.len();
        }
        None
    }
}

/// Per-layer activations recorded by a forward pass; `acts[0]` is the input.
#[derive(Clone, Debug)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

/// Fully connected network; hidden layers use `activation`, the last layer is linear.
///
/// Weights are stored row-major per layer as `l{k}.weight` (`[out, in]`) followed
/// by `l{k}.bias` (`[out]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: ParameterVector,
    offsets: Vec<(usize, usize)>,
}

fn layout_for(widths: &[usize]) -> Vec<Block> {
    let mut layout = Vec::with_capacity(2 * widths.len());
    for (k, w) in widths.windows(2).enumerate() {
        layout.push(Block {
            name: format!("l{k}.weight"),
            shape: vec![w[1], w[0]],
        });
        layout.push(Block {
            name: format!("l{k}.bias"),
            shape: vec![w[1]],
        });
    }
    layout
}

impl Mlp {
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self, NumericsError> {
        Self::validate_widths(widths)?;
        let params = ParameterVector::zeros(layout_for(widths));
        Ok(Self::assemble(widths.to_vec(), activation, params))
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self, NumericsError> {
        let mut net = Self::zeros(widths, activation)?;
        for k in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w_off, _) = net.offsets[k];
            for v in &mut net.params.values[w_off..w_off + fan_in * fan_out] {
                *v = rng.uniform_range(-limit, limit);
            }
        }
        Ok(net)
    }

    pub fn from_parameters(
        widths: &[usize],
        activation: Activation,
        values: Vec<f64>,
    ) -> Result<Self, NumericsError> {
        Self::validate_widths(widths)?;
        let params = ParameterVector::from_values(layout_for(widths), values)?;
        Ok(Self::assemble(widths.to_vec(), activation, params))
    }

    fn validate_widths(widths: &[usize]) -> Result<(), NumericsError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NumericsError::InvalidArchitecture(format!("{widths:?}")));
        }
        Ok(())
    }

    fn assemble(widths: Vec<usize>, activation: Activation, params: ParameterVector) -> Self {
        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for w in widths.windows(2) {
            offsets.push((off, off + w[0] * w[1]));
            off += w[0] * w[1] + w[1];
        }
        Self {
            widths,
            activation,
            params,
            offsets,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight matrix of layer `k`, row-major `[out, in]`.
    pub fn weight_mut(&mut self, k: usize) -> &mut [f64] {
        let (w, b) = self.offsets[k];
        &mut self.params.values[w..b]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        let (_, b) = self.offsets[k];
        let n = self.widths[k + 1];
        &mut self.params.values[b..b + n]
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NumericsError> {
        if input.len() != self.input_dim() {
            return Err(NumericsError::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NumericsError> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let layers = self.widths.len() - 1;
        let mut cur = input.to_vec();
        for k in 0..layers {
            cur = self.layer(k, &cur, k + 1 < layers);
        }
        cur
    }

    fn layer(&self, k: usize, x: &[f64], activate: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
        let (w_off, b_off) = self.offsets[k];
        let w = &self.params.values[w_off..w_off + n_in * n_out];
        let b = &self.params.values[b_off..b_off + n_out];
        let mut out = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(if activate { self.activation.apply(acc) } else { acc });
        }
        out
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace, NumericsError> {
        self.check_input(input)?;
        Ok(self.forward_trace_unchecked(input))
    }

    pub(crate) fn forward_trace_unchecked(&self, input: &[f64]) -> Trace {
        let layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        for k in 0..layers {
            let next = self.layer(k, &acts[k], k + 1 < layers);
            acts.push(next);
        }
        Trace { acts }
    }

    /// Accumulates `d<output, cotangent>/dθ` into `grad` and optionally the
    /// input gradient into `input_grad`.
    pub fn backward_into(
        &self,
        trace: &Trace,
        cotangent: &[f64],
        grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<(), NumericsError> {
        if cotangent.len() != self.output_dim() {
            return Err(NumericsError::DimensionMismatch {
                what: "output cotangent",
                expected: self.output_dim(),
                got: cotangent.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(NumericsError::DimensionMismatch {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let layers = self.widths.len() - 1;
        let mut delta = cotangent.to_vec();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let (w_off, b_off) = self.offsets[k];
            let x = &trace.acts[k];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (g, xi) in g_row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[b_off + o] += d;
            }
            let need_prev = k > 0 || input_grad.is_some();
            if !need_prev {
                break;
            }
            let w = &self.params.values[w_off..w_off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            if k > 0 {
                for (p, y) in prev.iter_mut().zip(x) {
                    *p *= self.activation.derivative_from_output(*y);
                }
                delta = prev;
            } else if let Some(ig) = input_grad.as_deref_mut() {
                for (g, p) in ig.iter_mut().zip(&prev) {
                    *g += p;
                }
            }
        }
        Ok(())
    }

    /// Reverse-mode gradient of `<forward(input), cotangent>` with respect to the parameters.
    pub fn backward(&self, input: &[f64], cotangent: &[f64]) -> Result<ParameterVector, NumericsError> {
        let trace = self.forward_trace(input)?;
        let mut grad = ParameterVector::zeros(self.params.layout.clone());
        self.backward_into(&trace, cotangent, &mut grad.values, None)?;
        Ok(grad)
    }
}
