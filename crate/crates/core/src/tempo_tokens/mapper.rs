use crate::error::{Error, Result};
use crate::media_io::AudioEmbeddings;
use crate::numerics::{gelu_grad_scalar, gelu_scalar, LinearLayer, ParamSet, Rng, Tensor};

use super::TempoTokens;

/// Four linear layers with GELU between them, shared across segments.
/// Maps a flattened `layers * dim` segment to `layers * token_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct MapperParams {
    pub layers: [LinearLayer; 4],
}

impl MapperParams {
    pub fn new(layers: [LinearLayer; 4]) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::shape(format!(
                    "mapper layer widths do not chain: {} -> {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        Ok(MapperParams { layers })
    }

    pub fn init(input: usize, hidden: [usize; 3], output: usize, rng: &mut Rng) -> Self {
        let widths = [input, hidden[0], hidden[1], hidden[2], output];
        let layer = |i: usize, rng: &mut Rng| {
            // GELU passes roughly half the variance, hence gain 2 on hidden layers
            let gain = if i == 0 { 1.0 } else { 2.0 };
            LinearLayer::init(widths[i], widths[i + 1], gain, rng)
        };
        MapperParams {
            layers: [layer(0, rng), layer(1, rng), layer(2, rng), layer(3, rng)],
        }
    }

    pub fn zeros_like(&self) -> Self {
        MapperParams {
            layers: self
                .layers
                .clone()
                .map(|l| LinearLayer::zeros(l.input_dim(), l.output_dim())),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[3].output_dim()
    }

    pub fn hidden(&self) -> [usize; 3] {
        [
            self.layers[0].output_dim(),
            self.layers[1].output_dim(),
            self.layers[2].output_dim(),
        ]
    }

    /// Forward for one segment vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < 3 {
                h.iter_mut().for_each(|v| *v = gelu_scalar(*v));
            }
        }
        h
    }
}

impl ParamSet for MapperParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("mapper.{i}.weight"), &l.weight));
            out.push((format!("mapper.{i}.bias"), &l.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }
}

/// Activations kept for the backward pass, per segment.
#[derive(Clone, Debug)]
pub struct MapperTrace {
    /// Input of each of the four layers.
    inputs: Vec<[Vec<f64>; 4]>,
    /// Pre-activation of the three GELUs.
    pre: Vec<[Vec<f64>; 3]>,
}

fn check_dims(emb: &AudioEmbeddings, params: &MapperParams) -> Result<usize> {
    let seg_dim = emb.layers() * emb.dim();
    if seg_dim != params.input_dim() {
        return Err(Error::shape(format!(
            "segment dimension {seg_dim} does not match mapper input {}",
            params.input_dim()
        )));
    }
    if params.output_dim() % emb.layers() != 0 {
        return Err(Error::shape(format!(
            "mapper output {} is not divisible by {} layers",
            params.output_dim(),
            emb.layers()
        )));
    }
    Ok(params.output_dim() / emb.layers())
}

/// Maps encoder activations to TempoTokens, segment by segment.
pub fn map_audio(emb: &AudioEmbeddings, params: &MapperParams) -> Result<TempoTokens> {
    let token_dim = check_dims(emb, params)?;
    let mut data = Vec::with_capacity(emb.segments() * params.output_dim());
    for s in 0..emb.segments() {
        data.extend(params.apply(emb.segment(s)));
    }
    TempoTokens::new(Tensor::new(vec![emb.segments(), emb.layers(), token_dim], data)?)
}

pub fn map_audio_traced(
    emb: &AudioEmbeddings,
    params: &MapperParams,
) -> Result<(TempoTokens, MapperTrace)> {
    let token_dim = check_dims(emb, params)?;
    let mut data = Vec::with_capacity(emb.segments() * params.output_dim());
    let mut trace = MapperTrace {
        inputs: Vec::with_capacity(emb.segments()),
        pre: Vec::with_capacity(emb.segments()),
    };
    for s in 0..emb.segments() {
        let x0 = emb.segment(s).to_vec();
        let p0 = params.layers[0].apply(&x0);
        let x1: Vec<f64> = p0.iter().map(|&v| gelu_scalar(v)).collect();
        let p1 = params.layers[1].apply(&x1);
        let x2: Vec<f64> = p1.iter().map(|&v| gelu_scalar(v)).collect();
        let p2 = params.layers[2].apply(&x2);
        let x3: Vec<f64> = p2.iter().map(|&v| gelu_scalar(v)).collect();
        data.extend(params.layers[3].apply(&x3));
        trace.inputs.push([x0, x1, x2, x3]);
        trace.pre.push([p0, p1, p2]);
    }
    let tokens = TempoTokens::new(Tensor::new(
        vec![emb.segments(), emb.layers(), token_dim],
        data,
    )?)?;
    Ok((tokens, trace))
}

/// Accumulates parameter gradients given `dL/dtokens` (flattened per segment).
pub fn map_audio_backward(
    params: &MapperParams,
    trace: &MapperTrace,
    d_tokens: &[Vec<f64>],
    grad: &mut MapperParams,
) {
    for (s, dy) in d_tokens.iter().enumerate() {
        let inputs = &trace.inputs[s];
        let pre = &trace.pre[s];
        let mut g = dy.clone();
        for i in (0..4).rev() {
            LinearLayer::accumulate(&mut grad.layers[i], &inputs[i], &g);
            if i == 0 {
                break;
            }
            g = params.layers[i].backward_input(&g);
            for (gv, pv) in g.iter_mut().zip(&pre[i - 1]) {
                *gv *= gelu_grad_scalar(*pv);
            }
        }
    }
}
