use super::schedule::{timestep_embedding, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{dot, gelu_grad_scalar, gelu_scalar, softmax_backward, softmax_slice, LinearLayer, ParamSet, Rng, Tensor};

/// Noise predictor `eps_hat(z_t, t, c)` for a single frame with its own
/// condition tokens `c`.
pub trait Denoiser: Sync {
    fn latent_dim(&self) -> usize;

    fn predict(&self, z_t: &[f64], t: usize, cond: &[Vec<f64>], schedule: &NoiseSchedule) -> Vec<f64>;

    /// `dL/dc` for every condition token given `dL/deps_hat`.
    fn backward_cond(
        &self,
        z_t: &[f64],
        t: usize,
        cond: &[Vec<f64>],
        schedule: &NoiseSchedule,
        d_eps: &[f64],
    ) -> Vec<Vec<f64>>;
}

/// Sizes of the frozen denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserShape {
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub attn_dim: usize,
    pub time_dim: usize,
    pub hidden: usize,
}

/// Per-frame residual MLP with single-head cross-attention onto the frame's
/// condition tokens. Predicts a clean-latent mean `m` and converts it to a
/// noise estimate under a Gaussian prior `z0 ~ N(m, PRIOR_VAR I)`:
///
/// ```text
/// s     = softmax_m(q . k_m / sqrt(d_a)) v_m,   q = Wq z_t, k_m = Wk c_m, v_m = Wv c_m
/// m     = Ws s + W2 gelu(W1 [z_t; temb(t); s] + b1) + b2
/// eps^  = kappa_t (z_t - sqrt(abar_t) m),  kappa_t = sqrt(1-abar_t) / (abar_t PRIOR_VAR + 1 - abar_t)
/// ```
///
/// All weights are drawn once from a seed and never updated.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenDenoiser {
    shape: DenoiserShape,
    query: LinearLayer,
    key: LinearLayer,
    value: LinearLayer,
    skip: LinearLayer,
    hidden: LinearLayer,
    out: LinearLayer,
    hash: String,
}

pub const PRIOR_VAR: f64 = 0.1;
/// Variance gain of the residual MLP's output layer, kept small so the
/// attention summary dominates `m` at initialisation.
const RESIDUAL_GAIN: f64 = 0.01;

/// Bias-free layer with orthonormal rows (or columns, when wider than
/// tall), so the condition path is well conditioned.
fn orthogonal(input: usize, output: usize, rng: &mut Rng) -> Result<LinearLayer> {
    let (n, len) = (input.min(output), input.max(output));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut r = rng.normal_vec(len);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&r, q);
                crate::numerics::axpy(&mut r, -c, q);
            }
        }
        let norm = dot(&r, &r).sqrt();
        if norm > 1e-8 {
            r.iter_mut().for_each(|v| *v /= norm);
            basis.push(r);
        }
    }
    let weight = if output <= input {
        basis.concat()
    } else {
        (0..output)
            .flat_map(|o| basis.iter().map(move |b| b[o]).collect::<Vec<_>>())
            .collect()
    };
    LinearLayer::new(Tensor::new(vec![output, input], weight)?, Tensor::zeros(vec![output]))
}

fn kappa(schedule: &NoiseSchedule, t: usize) -> (f64, f64) {
    let ab = schedule.alpha_bar(t);
    ((1.0 - ab).sqrt() / (ab * PRIOR_VAR + 1.0 - ab), ab.sqrt())
}

struct Forward {
    q: Vec<f64>,
    attn: Vec<f64>,
    values: Vec<Vec<f64>>,
    pre: Vec<f64>,
    m: Vec<f64>,
}

impl FrozenDenoiser {
    pub fn new(shape: DenoiserShape, rng: &mut Rng) -> Result<Self> {
        let DenoiserShape {
            latent_dim,
            cond_dim,
            attn_dim,
            time_dim,
            hidden,
        } = shape;
        if [latent_dim, cond_dim, attn_dim, time_dim, hidden].contains(&0) || time_dim % 2 != 0 {
            return Err(Error::domain(format!("invalid denoiser shape {shape:?}")));
        }
        let unbiased = |i, o, rng: &mut Rng| LinearLayer::init(i, o, 1.0, rng);
        let query = unbiased(latent_dim, attn_dim, rng);
        let key = unbiased(cond_dim, attn_dim, rng);
        let value = orthogonal(cond_dim, attn_dim, rng)?;
        let skip = orthogonal(attn_dim, latent_dim, rng)?;
        let mut hidden_layer = LinearLayer::init(latent_dim + time_dim + attn_dim, hidden, 2.0, rng);
        hidden_layer.bias = Tensor::randn(vec![hidden], 0.1, rng);
        let mut out = LinearLayer::init(hidden, latent_dim, RESIDUAL_GAIN, rng);
        out.bias = Tensor::randn(vec![latent_dim], 0.1, rng);
        let mut d = FrozenDenoiser {
            shape,
            query,
            key,
            value,
            skip,
            hidden: hidden_layer,
            out,
            hash: String::new(),
        };
        d.hash = d.param_hash();
        Ok(d)
    }

    pub fn shape(&self) -> DenoiserShape {
        self.shape
    }

    /// Hash taken at construction.
    pub fn initial_hash(&self) -> &str {
        &self.hash
    }

    fn forward(&self, z_t: &[f64], t: usize, cond: &[Vec<f64>]) -> Forward {
        let scale = 1.0 / (self.shape.attn_dim as f64).sqrt();
        let q = self.query.apply_no_bias(z_t);
        let logits: Vec<f64> = cond
            .iter()
            .map(|c| dot(&q, &self.key.apply_no_bias(c)) * scale)
            .collect();
        let attn = softmax_slice(&logits);
        let values: Vec<Vec<f64>> = cond.iter().map(|c| self.value.apply_no_bias(c)).collect();
        let mut s = vec![0.0; self.shape.attn_dim];
        for (a, v) in attn.iter().zip(&values) {
            crate::numerics::axpy(&mut s, *a, v);
        }
        let mut input = Vec::with_capacity(self.hidden.input_dim());
        input.extend_from_slice(z_t);
        input.extend(timestep_embedding(t, self.shape.time_dim));
        input.extend_from_slice(&s);
        let pre = self.hidden.apply(&input);
        let h: Vec<f64> = pre.iter().map(|&v| gelu_scalar(v)).collect();
        let m: Vec<f64> = self
            .out
            .apply(&h)
            .iter()
            .zip(self.skip.apply_no_bias(&s))
            .map(|(a, b)| a + b)
            .collect();
        Forward {
            q,
            attn,
            values,
            pre,
            m,
        }
    }

    /// The clean-latent mean `m` for a frame.
    pub fn clean_mean(&self, z_t: &[f64], t: usize, cond: &[Vec<f64>]) -> Vec<f64> {
        self.forward(z_t, t, cond).m
    }
}

impl Denoiser for FrozenDenoiser {
    fn latent_dim(&self) -> usize {
        self.shape.latent_dim
    }

    fn predict(&self, z_t: &[f64], t: usize, cond: &[Vec<f64>], schedule: &NoiseSchedule) -> Vec<f64> {
        let (k, sab) = kappa(schedule, t);
        let m = self.forward(z_t, t, cond).m;
        z_t.iter().zip(&m).map(|(z, m)| k * (z - sab * m)).collect()
    }

    fn backward_cond(
        &self,
        z_t: &[f64],
        t: usize,
        cond: &[Vec<f64>],
        schedule: &NoiseSchedule,
        d_eps: &[f64],
    ) -> Vec<Vec<f64>> {
        let (k, sab) = kappa(schedule, t);
        let f = self.forward(z_t, t, cond);
        let dm: Vec<f64> = d_eps.iter().map(|g| -k * sab * g).collect();

        let mut ds = self.skip.backward_input(&dm);
        let mut dpre = self.out.backward_input(&dm);
        for (g, p) in dpre.iter_mut().zip(&f.pre) {
            *g *= gelu_grad_scalar(*p);
        }
        let d_input = self.hidden.backward_input(&dpre);
        let offset = self.shape.latent_dim + self.shape.time_dim;
        for (a, b) in ds.iter_mut().zip(&d_input[offset..]) {
            *a += b;
        }

        let d_attn: Vec<f64> = f.values.iter().map(|v| dot(&ds, v)).collect();
        let d_logits = softmax_backward(&f.attn, &d_attn);
        let scale = 1.0 / (self.shape.attn_dim as f64).sqrt();
        cond.iter()
            .enumerate()
            .map(|(m, _)| {
                let dv: Vec<f64> = ds.iter().map(|g| g * f.attn[m]).collect();
                let dk: Vec<f64> = f.q.iter().map(|q| q * d_logits[m] * scale).collect();
                let mut dc = self.value.backward_input(&dv);
                crate::numerics::axpy(&mut dc, 1.0, &self.key.backward_input(&dk));
                dc
            })
            .collect()
    }
}

impl ParamSet for FrozenDenoiser {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, layer) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("skip", &self.skip),
            ("hidden", &self.hidden),
            ("out", &self.out),
        ] {
            out.push((format!("denoiser.{name}.weight"), &layer.weight));
            out.push((format!("denoiser.{name}.bias"), &layer.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.skip,
            &mut self.hidden,
            &mut self.out,
        ] {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }
}

/// Test stub: for zero clean latents `z_t = sqrt(1 - abar) eps`, so this
/// returns the injected noise.
#[derive(Clone, Copy, Debug)]
pub struct EchoNoise {
    pub latent_dim: usize,
}

impl Denoiser for EchoNoise {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn predict(&self, z_t: &[f64], t: usize, _cond: &[Vec<f64>], schedule: &NoiseSchedule) -> Vec<f64> {
        let s = (1.0 - schedule.alpha_bar(t)).sqrt();
        z_t.iter().map(|z| z / s).collect()
    }

    fn backward_cond(
        &self,
        _z_t: &[f64],
        _t: usize,
        cond: &[Vec<f64>],
        _schedule: &NoiseSchedule,
        _d_eps: &[f64],
    ) -> Vec<Vec<f64>> {
        cond.iter().map(|c| vec![0.0; c.len()]).collect()
    }
}

/// Test stub that always predicts zero noise.
#[derive(Clone, Copy, Debug)]
pub struct ZeroDenoiser {
    pub latent_dim: usize,
}

impl Denoiser for ZeroDenoiser {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn predict(&self, _z_t: &[f64], _t: usize, _cond: &[Vec<f64>], _schedule: &NoiseSchedule) -> Vec<f64> {
        vec![0.0; self.latent_dim]
    }

    fn backward_cond(
        &self,
        _z_t: &[f64],
        _t: usize,
        cond: &[Vec<f64>],
        _schedule: &NoiseSchedule,
        _d_eps: &[f64],
    ) -> Vec<Vec<f64>> {
        cond.iter().map(|c| vec![0.0; c.len()]).collect()
    }
}
