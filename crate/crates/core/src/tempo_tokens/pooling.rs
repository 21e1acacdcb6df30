use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, softmax_backward, softmax_slice, ParamSet, Rng, Tensor};

use super::TempoTokens;

/// Vectors with norm below this contribute nothing to the cross potential.
pub const COSINE_GUARD: f64 = 1e-12;

/// Trainable attentive-pooling parameters.
///
/// `local_proj` (`hidden x D`) and `local_score` (`hidden`) give the local
/// potential `score . relu(proj a_u)`; `cross_query`/`cross_key`
/// (`cross x D`) give the cross potential; `alpha_local` and `alpha_cross`
/// weight the two before the softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingParams {
    pub local_proj: Tensor,
    pub local_score: Tensor,
    pub cross_query: Tensor,
    pub cross_key: Tensor,
    pub alpha_local: Tensor,
    pub alpha_cross: Tensor,
}

fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = m.shape()[1];
    m.data().chunks_exact(cols).map(|row| dot(row, x)).collect()
}

fn matvec_t_acc(m: &Tensor, dy: &[f64], dx: &mut [f64]) {
    let cols = m.shape()[1];
    for (row, g) in m.data().chunks_exact(cols).zip(dy) {
        if *g != 0.0 {
            axpy(dx, *g, row);
        }
    }
}

fn outer_acc(dm: &mut Tensor, dy: &[f64], x: &[f64]) {
    let cols = dm.shape()[1];
    for (row, g) in dm.data_mut().chunks_exact_mut(cols).zip(dy) {
        if *g != 0.0 {
            axpy(row, *g, x);
        }
    }
}

fn unit(x: &[f64]) -> (Vec<f64>, f64) {
    let n = dot(x, x).sqrt();
    if n < COSINE_GUARD {
        (vec![0.0; x.len()], n)
    } else {
        (x.iter().map(|v| v / n).collect(), n)
    }
}

/// Backward of `x / |x|`, zero when guarded.
fn unit_backward(xhat: &[f64], norm: f64, dxhat: &[f64]) -> Vec<f64> {
    if norm < COSINE_GUARD {
        return vec![0.0; xhat.len()];
    }
    let proj = dot(dxhat, xhat);
    dxhat
        .iter()
        .zip(xhat)
        .map(|(g, u)| (g - proj * u) / norm)
        .collect()
}

impl PoolingParams {
    pub fn new(
        local_proj: Tensor,
        local_score: Tensor,
        cross_query: Tensor,
        cross_key: Tensor,
        alpha_local: f64,
        alpha_cross: f64,
    ) -> Result<Self> {
        let p = PoolingParams {
            local_proj,
            local_score,
            cross_query,
            cross_key,
            alpha_local: Tensor::scalar(alpha_local),
            alpha_cross: Tensor::scalar(alpha_cross),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn init(token_dim: usize, local_hidden: usize, cross_hidden: usize, rng: &mut Rng) -> Self {
        let s = (1.0 / token_dim as f64).sqrt();
        PoolingParams {
            local_proj: Tensor::randn(vec![local_hidden, token_dim], s, rng),
            local_score: Tensor::randn(vec![local_hidden], (1.0 / local_hidden as f64).sqrt(), rng),
            cross_query: Tensor::randn(vec![cross_hidden, token_dim], s, rng),
            cross_key: Tensor::randn(vec![cross_hidden, token_dim], s, rng),
            alpha_local: Tensor::scalar(1.0),
            alpha_cross: Tensor::scalar(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.token_dim();
        let ok = self.local_proj.shape().len() == 2
            && self.local_proj.shape()[0] >= 1
            && self.local_score.shape() == [self.local_proj.shape()[0]]
            && self.cross_query.shape().len() == 2
            && self.cross_query.shape()[0] >= 1
            && self.cross_query.shape()[1] == d
            && self.cross_key.shape() == self.cross_query.shape()
            && self.alpha_local.shape() == [1]
            && self.alpha_cross.shape() == [1];
        if !ok {
            return Err(Error::shape("inconsistent pooling parameter shapes"));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.shape().to_vec());
        PoolingParams {
            local_proj: z(&self.local_proj),
            local_score: z(&self.local_score),
            cross_query: z(&self.cross_query),
            cross_key: z(&self.cross_key),
            alpha_local: z(&self.alpha_local),
            alpha_cross: z(&self.alpha_cross),
        }
    }

    /// Flattened token width `D` the parameters expect.
    pub fn token_dim(&self) -> usize {
        self.local_proj.shape().get(1).copied().unwrap_or(0)
    }

    pub fn alphas(&self) -> (f64, f64) {
        (self.alpha_local.data()[0], self.alpha_cross.data()[0])
    }
}

impl ParamSet for PoolingParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("pool.local_proj".into(), &self.local_proj),
            ("pool.local_score".into(), &self.local_score),
            ("pool.cross_query".into(), &self.cross_query),
            ("pool.cross_key".into(), &self.cross_key),
            ("pool.alpha_local".into(), &self.alpha_local),
            ("pool.alpha_cross".into(), &self.alpha_cross),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.local_proj,
            &mut self.local_score,
            &mut self.cross_query,
            &mut self.cross_key,
            &mut self.alpha_local,
            &mut self.alpha_cross,
        ]
    }
}

/// Intermediate values of one attentive-pooling evaluation.
#[derive(Clone, Debug)]
pub struct PoolTrace {
    pub local_pre: Vec<Vec<f64>>,
    pub local_potential: Vec<f64>,
    pub cross_potential: Vec<f64>,
    query_unit: Vec<(Vec<f64>, f64)>,
    key_unit: Vec<(Vec<f64>, f64)>,
    key_sum: Vec<f64>,
    pub distribution: Vec<f64>,
}

pub fn attentive_pool(tokens: &TempoTokens, params: &PoolingParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let (out, trace) = attentive_pool_traced(tokens, params)?;
    Ok((out, trace.distribution))
}

/// Softmax-weighted average of all tokens, with the weights from local and
/// cross potentials. Returns the pooled token and the trace.
pub fn attentive_pool_traced(
    tokens: &TempoTokens,
    params: &PoolingParams,
) -> Result<(Vec<f64>, PoolTrace)> {
    params.validate()?;
    let d = tokens.flat_dim();
    if d != params.token_dim() {
        return Err(Error::shape(format!(
            "token width {d} does not match pooling width {}",
            params.token_dim()
        )));
    }
    let n = tokens.segments();
    let (alpha_l, alpha_c) = params.alphas();

    let local_pre: Vec<Vec<f64>> = (0..n).map(|u| matvec(&params.local_proj, tokens.token(u))).collect();
    let local_potential: Vec<f64> = local_pre
        .iter()
        .map(|h| dot(params.local_score.data(), &h.iter().map(|v| v.max(0.0)).collect::<Vec<_>>()))
        .collect();

    let query_unit: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|u| unit(&matvec(&params.cross_query, tokens.token(u))))
        .collect();
    let key_unit: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|i| unit(&matvec(&params.cross_key, tokens.token(i))))
        .collect();
    let mut key_sum = vec![0.0; params.cross_key.shape()[0]];
    for (k, _) in &key_unit {
        axpy(&mut key_sum, 1.0, k);
    }
    let cross_potential: Vec<f64> = query_unit.iter().map(|(q, _)| dot(q, &key_sum)).collect();

    let logits: Vec<f64> = local_potential
        .iter()
        .zip(&cross_potential)
        .map(|(l, c)| alpha_l * l + alpha_c * c)
        .collect();
    let distribution = softmax_slice(&logits);

    let mut out = vec![0.0; d];
    for (u, p) in distribution.iter().enumerate() {
        axpy(&mut out, *p, tokens.token(u));
    }
    Ok((
        out,
        PoolTrace {
            local_pre,
            local_potential,
            cross_potential,
            query_unit,
            key_unit,
            key_sum,
            distribution,
        },
    ))
}

/// Given `dL/d(pooled token)`, accumulates parameter gradients into `grad`
/// and token gradients into `d_tokens`.
pub fn attentive_pool_backward(
    tokens: &TempoTokens,
    params: &PoolingParams,
    trace: &PoolTrace,
    d_out: &[f64],
    grad: &mut PoolingParams,
    d_tokens: &mut [Vec<f64>],
) {
    let n = tokens.segments();
    let (alpha_l, alpha_c) = params.alphas();
    let p = &trace.distribution;

    let mut dp = vec![0.0; n];
    for u in 0..n {
        axpy(&mut d_tokens[u], p[u], d_out);
        dp[u] = dot(tokens.token(u), d_out);
    }
    let dz = softmax_backward(p, &dp);
    grad.alpha_local.data_mut()[0] += dot(&dz, &trace.local_potential);
    grad.alpha_cross.data_mut()[0] += dot(&dz, &trace.cross_potential);

    // local potential
    let score = params.local_score.data();
    for u in 0..n {
        let g = alpha_l * dz[u];
        if g == 0.0 {
            continue;
        }
        let pre = &trace.local_pre[u];
        let relu: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        axpy(grad.local_score.data_mut(), g, &relu);
        let dh: Vec<f64> = pre
            .iter()
            .zip(score)
            .map(|(h, s)| if *h > 0.0 { g * s } else { 0.0 })
            .collect();
        outer_acc(&mut grad.local_proj, &dh, tokens.token(u));
        matvec_t_acc(&params.local_proj, &dh, &mut d_tokens[u]);
    }

    // cross potential: theta_c(u) = q_u . sum_i k_i
    let mut d_key_sum = vec![0.0; trace.key_sum.len()];
    for u in 0..n {
        let g = alpha_c * dz[u];
        let (q, qn) = &trace.query_unit[u];
        axpy(&mut d_key_sum, g, q);
        let dq: Vec<f64> = trace.key_sum.iter().map(|k| g * k).collect();
        let dx = unit_backward(q, *qn, &dq);
        outer_acc(&mut grad.cross_query, &dx, tokens.token(u));
        matvec_t_acc(&params.cross_query, &dx, &mut d_tokens[u]);
    }
    for i in 0..n {
        let (k, kn) = &trace.key_unit[i];
        let dy = unit_backward(k, *kn, &d_key_sum);
        outer_acc(&mut grad.cross_key, &dy, tokens.token(i));
        matvec_t_acc(&params.cross_key, &dy, &mut d_tokens[i]);
    }
}
