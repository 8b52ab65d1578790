use super::tape::{Activation, Gradients, Tape, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use rand::Rng;

/// One affine map followed by a pointwise activation.
///
/// `weight` is stored `[in_dim, out_dim]` so a batch `[n, in_dim]` maps as
/// `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameters of a fully connected network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Layer sizes plus activations, enough to allocate an [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Multiplier on the final layer's init range; small values start the
    /// network near the zero function.
    pub output_init_scale: f64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            hidden_activation: Activation::Mish,
            output_activation: Activation::Identity,
            output_init_scale: 1.0,
        }
    }
}

impl MlpParams {
    /// Validates that consecutive layers chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("network with no layers".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Dimension(format!(
                    "layer {k}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.in_dim() != layer.out_dim() {
                    return Err(Error::Dimension(format!(
                        "layer {k} emits {} features, layer {} expects {}",
                        layer.out_dim(),
                        k + 1,
                        next.in_dim()
                    )));
                }
            }
        }
        Ok(Self { layers })
    }

    /// Kaiming-uniform style init: entries in `±1/sqrt(fan_in)`.
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Self {
        let mut dims = vec![spec.input];
        dims.extend(&spec.hidden);
        dims.push(spec.output);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let mut bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let activation = if k == last {
                    bound *= spec.output_init_scale;
                    spec.output_activation
                } else {
                    spec.hidden_activation
                };
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
                };
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).unwrap(),
                    bias: Tensor::matrix(1, fan_out, draw(fan_out)).unwrap(),
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Parameters in declaration order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Registers the parameters on `tape`. With `trainable == false` they are
    /// constants, so gradients still flow through the network's inputs but
    /// never into its weights.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = self
            .tensors()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundMlp {
            vars,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            in_dim: self.in_dim(),
        }
    }

    /// Plain forward pass without recording anything.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        check_input(self.in_dim(), input)?;
        let n = input.rows();
        let mut x = input.clone();
        for layer in &self.layers {
            let (k, m) = (layer.in_dim(), layer.out_dim());
            let mut out = vec![0.0; n * m];
            for row in out.chunks_mut(m) {
                row.copy_from_slice(layer.bias.data());
            }
            gemm(
                x.data(),
                false,
                layer.weight.data(),
                false,
                n,
                k,
                m,
                &mut out,
                true,
            );
            if layer.activation != Activation::Identity {
                out.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            }
            x = Tensor::matrix(n, m, out)?;
        }
        ensure_finite(&x)?;
        Ok(x)
    }
}

fn check_input(in_dim: usize, input: &Tensor) -> Result<()> {
    if input.cols() != in_dim {
        return Err(Error::Dimension(format!(
            "network expects {in_dim} input features, got {}",
            input.cols()
        )));
    }
    Ok(())
}

fn ensure_finite(t: &Tensor) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Numeric("network output is not finite".into()));
    }
    Ok(())
}

/// Parameters registered on a tape; can be applied any number of times and
/// gradients accumulate across applications.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    vars: Vec<Var>,
    activations: Vec<Activation>,
    in_dim: usize,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        check_input(self.in_dim, tape.value(input))?;
        let mut x = input;
        for (k, act) in self.activations.iter().enumerate() {
            let h = tape.matmul(x, self.vars[2 * k])?;
            let h = tape.add_bias(h, self.vars[2 * k + 1])?;
            x = tape.activation(h, *act);
        }
        ensure_finite(tape.value(x))?;
        Ok(x)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for every parameter in declaration order; parameters the
    /// loss never reached get zeros.
    pub fn grads(&self, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
            })
            .collect()
    }
}

/// Binds `params` and runs one forward pass.
pub fn mlp_forward(
    tape: &mut Tape,
    params: &MlpParams,
    input: Var,
    trainable: bool,
) -> Result<(Var, BoundMlp)> {
    let bound = params.bind(tape, trainable);
    let out = bound.forward(tape, input)?;
    Ok((out, bound))
}
