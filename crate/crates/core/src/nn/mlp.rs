use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};
use crate::rng::RngStream;

/// Architecture of an MLP. `depth` counts linear layers, so `depth - 1`
/// hidden ReLU layers of width `hidden_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
}

impl MlpSpec {
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|k| {
                let fan_in = if k == 0 {
                    self.input_dim
                } else {
                    self.hidden_dim
                };
                let fan_out = if k + 1 == self.depth {
                    self.output_dim
                } else {
                    self.hidden_dim
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

/// `y = W x + b` with `W` stored `fan_out × fan_in` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpNetwork {
    spec: MlpSpec,
    layers: Vec<DenseLayer>,
    // bumped on every parameter mutation so stale tapes are caught
    version: u64,
}

impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

/// Activations cached by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// Input to each layer: the batch itself, then each hidden ReLU output.
    layer_inputs: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients shaped like the parameters of one [`MlpNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBuffer {
    pub layers: Vec<LayerGrad>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn is_congruent(&self, net: &MlpNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weight.len() == l.weight.len() && g.bias.len() == l.bias.len())
    }

    pub fn scale(&mut self, a: f64) {
        for v in self.values_mut() {
            *v *= a;
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &GradientBuffer) {
        for (x, y) in self.values_mut().zip(other.values()) {
            *x += a * y;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// Name of the first block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        for (k, l) in self.layers.iter().enumerate() {
            if l.weight.iter().any(|v| !v.is_finite()) {
                return Some(format!("layer{k}.weight"));
            }
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Some(format!("layer{k}.bias"));
            }
        }
        None
    }
}

impl MlpNetwork {
    /// He-scaled normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn new(spec: MlpSpec, rng: &mut RngStream) -> Result<Self> {
        Self::validate_spec(&spec)?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let std = (2.0 / fan_in as f64).sqrt();
                let weight = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
                DenseLayer {
                    fan_in,
                    fan_out,
                    weight,
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            version: 0,
        })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        Self::validate_spec(&spec)?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| DenseLayer {
                fan_in,
                fan_out,
                weight: vec![0.0; fan_in * fan_out],
                bias: vec![0.0; fan_out],
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("network needs at least one layer".into()))?;
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::shape(
                    "MlpNetwork::from_layers",
                    format!("layer {} fan_in {}", k + 1, pair[0].fan_out),
                    pair[1].fan_in,
                ));
            }
        }
        for l in &layers {
            if l.weight.len() != l.fan_in * l.fan_out || l.bias.len() != l.fan_out {
                return Err(Error::shape(
                    "MlpNetwork::from_layers",
                    l.fan_in * l.fan_out,
                    l.weight.len(),
                ));
            }
        }
        let hidden_dim = if layers.len() > 1 { first.fan_out } else { 0 };
        let spec = MlpSpec {
            input_dim: first.fan_in,
            output_dim: layers.last().map(|l| l.fan_out).unwrap_or(0),
            hidden_dim,
            depth: layers.len(),
        };
        Ok(Self {
            spec,
            layers,
            version: 0,
        })
    }

    fn validate_spec(spec: &MlpSpec) -> Result<()> {
        if spec.depth == 0 || spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(Error::Config(format!("invalid MLP spec {spec:?}")));
        }
        if spec.depth > 1 && spec.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> MlpSpec {
        self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable layer access; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::shape(
                "MlpNetwork::set_params_flat",
                self.parameter_count(),
                flat.len(),
            ));
        }
        let mut it = flat.iter();
        for l in self.layers_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Row-wise forward pass. With a tape, layer inputs are cached for
    /// [`MlpNetwork::backward`].
    pub fn forward(&self, batch: &Matrix, tape: Option<&mut Tape>) -> Result<Matrix> {
        if batch.cols() != self.spec.input_dim {
            return Err(Error::shape(
                "MlpNetwork::forward",
                format!("{} input columns", self.spec.input_dim),
                batch.cols(),
            ));
        }
        let rows = batch.rows();
        let mut inputs = Vec::new();
        let mut act = batch.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Matrix::zeros(rows, layer.fan_out);
            for r in 0..rows {
                out.row_mut(r).copy_from_slice(&layer.bias);
            }
            gemm(
                rows,
                layer.fan_in,
                layer.fan_out,
                1.0,
                act.as_slice(),
                false,
                &layer.weight,
                true,
                1.0,
                out.as_mut_slice(),
            );
            if k != last {
                for v in out.as_mut_slice() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            if tape.is_some() {
                inputs.push(std::mem::replace(&mut act, out));
            } else {
                act = out;
            }
        }
        if let Some(t) = tape {
            t.version = self.version;
            t.layer_inputs = inputs;
        }
        Ok(act)
    }

    pub fn forward_with_tape(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        let mut tape = Tape::empty();
        let out = self.forward(batch, Some(&mut tape))?;
        Ok((out, tape))
    }

    /// Reverse pass: parameter gradients and the gradient with respect to
    /// the network input. ReLU'(0) is taken as 0.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<(GradientBuffer, Matrix)> {
        if tape.layer_inputs.len() != self.layers.len() || tape.version != self.version {
            return Err(Error::Usage(
                "backward called with a tape from a different forward pass or stale parameters"
                    .into(),
            ));
        }
        let rows = tape.layer_inputs[0].rows();
        if upstream.rows() != rows || upstream.cols() != self.spec.output_dim {
            return Err(Error::shape(
                "MlpNetwork::backward",
                format!("{rows}x{}", self.spec.output_dim),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let mut grads = GradientBuffer::zeros_like(self);
        let mut g = upstream.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &tape.layer_inputs[k];
            let lg = &mut grads.layers[k];
            gemm(
                layer.fan_out,
                rows,
                layer.fan_in,
                1.0,
                g.as_slice(),
                true,
                input.as_slice(),
                false,
                0.0,
                &mut lg.weight,
            );
            for row in g.iter_rows() {
                for (b, v) in lg.bias.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut gin = Matrix::zeros(rows, layer.fan_in);
            gemm(
                rows,
                layer.fan_out,
                layer.fan_in,
                1.0,
                g.as_slice(),
                false,
                &layer.weight,
                false,
                0.0,
                gin.as_mut_slice(),
            );
            if k > 0 {
                for (d, a) in gin.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            g = gin;
        }
        Ok((grads, g))
    }
}

impl Tape {
    pub fn empty() -> Self {
        Self {
            version: u64::MAX,
            layer_inputs: Vec::new(),
        }
    }
}
