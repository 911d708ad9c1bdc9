//! MLPs, sinusoidal time embeddings and time-conditioned MLPs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    Silu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Softplus => tape.softplus(x),
            Activation::Silu => tape.silu(x),
            Activation::Identity => x,
        }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBundle {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamBundle {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Places every tensor on the tape, as leaves when `trainable`, else as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Order-sensitive bitwise fingerprint, used to assert that a parameter
    /// group was left untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tensors {
            for v in t.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub final_layer_scale: f64,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Invalid("MLP dimensions must be >= 1".into()));
        }
        if !(self.final_layer_scale >= 0.0) {
            return Err(Error::Invalid("final_layer_scale must be >= 0".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// LeCun-uniform weights (variance `1/fan_in`), zero biases, final layer
    /// multiplied by `final_layer_scale`.
    pub fn init(&self, seed: u64) -> Result<ParamBundle> {
        self.validate()?;
        let mut rng = Rng::stream(seed, Stream::Init, 0);
        let layers = self.layer_dims();
        let mut names = vec![];
        let mut tensors = vec![];
        for (i, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let bound = (3.0 / fan_in as f64).sqrt();
            let scale = if i + 1 == layers.len() { self.final_layer_scale } else { 1.0 };
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| scale * rng.uniform_in(-bound, bound)).collect();
            names.push(format!("layer{i}.weight"));
            tensors.push(Tensor::matrix(fan_in, fan_out, w));
            names.push(format!("layer{i}.bias"));
            tensors.push(Tensor::vector(vec![0.0; fan_out]));
        }
        Ok(ParamBundle::new(names, tensors))
    }

    /// Forward pass over a `[rows, input_dim]` batch.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != 2 * self.num_layers() {
            return Err(Error::Shape(format!("MLP expects {} tensors, got {}", 2 * self.num_layers(), params.len())));
        }
        let cols = tape.value(x).cols();
        if cols != self.input_dim || tape.value(x).shape().len() != 2 {
            return Err(Error::Shape(format!(
                "MLP input {:?} does not match input_dim {}",
                tape.value(x).shape(),
                self.input_dim
            )));
        }
        let mut h = x;
        let n = self.num_layers();
        for i in 0..n {
            h = tape.affine(h, params[2 * i], params[2 * i + 1])?;
            if i + 1 < n {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }
}

/// Sinusoidal encoding of an integer step: `[sin(t·f_0), cos(t·f_0), sin(t·f_1), …]`
/// with `f_i = 10000^(-2i/embed_dim)`.
pub fn time_embed(t: usize, embed_dim: usize, horizon: usize) -> Result<Vec<f64>> {
    if embed_dim % 2 != 0 {
        return Err(Error::OddEmbedDim(embed_dim));
    }
    if t > horizon {
        return Err(Error::TimeOutOfRange { t, max: horizon });
    }
    let half = embed_dim / 2;
    let mut out = Vec::with_capacity(embed_dim);
    for i in 0..half {
        let freq = 10000f64.powf(-(2.0 * i as f64) / embed_dim as f64);
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// MLP over `concat(x, time_embed(t))`. With `embed_dim == 0` the network
/// ignores time entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeConditionedNet {
    pub x_dim: usize,
    pub embed_dim: usize,
    pub horizon: usize,
    pub mlp: MlpSpec,
}

impl TimeConditionedNet {
    pub fn new(
        x_dim: usize,
        embed_dim: usize,
        horizon: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        final_layer_scale: f64,
    ) -> Result<Self> {
        if embed_dim % 2 != 0 {
            return Err(Error::OddEmbedDim(embed_dim));
        }
        let mlp = MlpSpec { input_dim: x_dim + embed_dim, hidden_dims, output_dim, activation, final_layer_scale };
        mlp.validate()?;
        Ok(Self { x_dim, embed_dim, horizon, mlp })
    }

    pub fn time_dependent(&self) -> bool {
        self.embed_dim > 0
    }

    pub fn init(&self, seed: u64) -> Result<ParamBundle> {
        self.mlp.init(seed)
    }

    /// Evaluates every row at the same step `t`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var, t: usize) -> Result<Var> {
        let rows = tape.value(x).rows();
        self.forward_rows(tape, params, x, &vec![t; rows])
    }

    /// Evaluates row `i` at step `ts[i]`.
    pub fn forward_rows(&self, tape: &mut Tape, params: &[Var], x: Var, ts: &[usize]) -> Result<Var> {
        let xv = tape.value(x);
        if xv.shape().len() != 2 || xv.cols() != self.x_dim {
            return Err(Error::Shape(format!("expected [_, {}] input, got {:?}", self.x_dim, xv.shape())));
        }
        if ts.len() != xv.rows() {
            return Err(Error::Shape(format!("{} time indices for {} rows", ts.len(), xv.rows())));
        }
        if let Some(&t) = ts.iter().find(|&&t| t > self.horizon) {
            return Err(Error::TimeOutOfRange { t, max: self.horizon });
        }
        if !self.time_dependent() {
            return self.mlp.forward(tape, params, x);
        }
        let mut emb = Vec::with_capacity(ts.len() * self.embed_dim);
        let mut cache: Vec<Option<Vec<f64>>> = vec![None; self.horizon + 1];
        for &t in ts {
            let e = match &cache[t] {
                Some(e) => e,
                None => cache[t].insert(time_embed(t, self.embed_dim, self.horizon)?),
            };
            emb.extend_from_slice(e);
        }
        let e = tape.constant(Tensor::matrix(ts.len(), self.embed_dim, emb));
        let input = tape.concat_cols(x, e)?;
        self.mlp.forward(tape, params, input)
    }

    /// Forward pass without gradient recording; returns the output tensor.
    pub fn eval(&self, params: &ParamBundle, x: &Tensor, t: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv, t)?;
        Ok(tape.value(out).clone())
    }
}
