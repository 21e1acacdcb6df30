use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, ParamSet, Rng, Tensor};

/// Fixed linear frame autoencoder: `encode(x) = E x`, `decode(z) = E^T z`
/// over RGB pixels scaled to `[-1, 1]`. Rows of `E` are orthonormal, so
/// `decode . encode` is the orthogonal projection onto their span.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodec {
    pub width: u32,
    pub height: u32,
    encoder: Tensor,
}

impl LatentCodec {
    /// Gaussian rows orthonormalised with modified Gram-Schmidt.
    pub fn new(width: u32, height: u32, latent_dim: usize, rng: &mut Rng) -> Result<Self> {
        let pixels = (width * height * 3) as usize;
        if latent_dim == 0 || latent_dim > pixels {
            return Err(Error::domain(format!(
                "latent dimension {latent_dim} must be in 1..={pixels}"
            )));
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(latent_dim);
        while rows.len() < latent_dim {
            let mut r = rng.normal_vec(pixels);
            for _ in 0..2 {
                for q in &rows {
                    let c = dot(&r, q);
                    axpy(&mut r, -c, q);
                }
            }
            let n = dot(&r, &r).sqrt();
            if n > 1e-8 {
                r.iter_mut().for_each(|v| *v /= n);
                rows.push(r);
            }
        }
        Ok(LatentCodec {
            width,
            height,
            encoder: Tensor::new(vec![latent_dim, pixels], rows.concat())?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.shape()[0]
    }

    pub fn pixels(&self) -> usize {
        self.encoder.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.encoder.row(i)
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        (0..self.latent_dim()).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.pixels()];
        for (i, zi) in z.iter().enumerate() {
            axpy(&mut x, *zi, self.row(i));
        }
        x
    }

    pub fn encode_frame(&self, frame: &[u8]) -> Result<Vec<f64>> {
        if frame.len() != self.pixels() {
            return Err(Error::shape(format!(
                "frame has {} bytes, codec expects {}",
                frame.len(),
                self.pixels()
            )));
        }
        let x: Vec<f64> = frame.iter().map(|&b| b as f64 / 127.5 - 1.0).collect();
        Ok(self.encode(&x))
    }

    pub fn decode_frame(&self, z: &[f64]) -> Vec<u8> {
        self.decode(z)
            .iter()
            .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

impl ParamSet for LatentCodec {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("codec.encoder".into(), &self.encoder)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.encoder]
    }
}
