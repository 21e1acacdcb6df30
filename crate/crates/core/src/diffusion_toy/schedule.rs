use crate::error::{Error, Result};

/// Discrete DDPM-style variance schedule with `steps` noise levels, `t = 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 100;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(DEFAULT_STEPS, BETA_START, BETA_END).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("schedule needs at least one step"));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::domain("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::domain(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn index(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "timestep {t} outside 1..={}",
            self.steps()
        );
        t - 1
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::domain(format!("timestep {t} outside 1..={}", self.steps())))
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.index(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.index(t)]
    }

    /// Cumulative product of `alpha` up to and including `t`; 1 at `t = 0`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[self.index(t)]
        }
    }
}

/// `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(z0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if z0.len() != eps.len() {
        return Err(Error::shape(format!(
            "latent has {} entries but noise has {}",
            z0.len(),
            eps.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

/// Sinusoidal embedding of the timestep, `dim` must be even.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let x = t as f64 * freq;
        out.push(x.sin());
        out.push(x.cos());
    }
    out
}
