use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "weight {:?} and bias {:?} are inconsistent",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(LinearLayer { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        LinearLayer {
            weight: Tensor::zeros(vec![output, input]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    /// Gaussian weights with variance `gain / input` and zero bias.
    pub fn init(input: usize, output: usize, gain: f64, rng: &mut Rng) -> Self {
        LinearLayer {
            weight: Tensor::randn(vec![output, input], (gain / input as f64).sqrt(), rng),
            bias: Tensor::zeros(vec![output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Applies the layer to a single vector. Panics on length mismatch.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim());
        let w = self.weight.data();
        let n = self.input_dim();
        self.bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| b + super::dot(&w[o * n..(o + 1) * n], x))
            .collect()
    }

    /// Weight-only product `W x`.
    pub fn apply_no_bias(&self, x: &[f64]) -> Vec<f64> {
        let w = self.weight.data();
        let n = self.input_dim();
        (0..self.output_dim())
            .map(|o| super::dot(&w[o * n..(o + 1) * n], x))
            .collect()
    }

    /// `W^T dy`
    pub fn backward_input(&self, dy: &[f64]) -> Vec<f64> {
        let n = self.input_dim();
        let w = self.weight.data();
        let mut dx = vec![0.0; n];
        for (o, g) in dy.iter().enumerate() {
            if *g != 0.0 {
                super::axpy(&mut dx, *g, &w[o * n..(o + 1) * n]);
            }
        }
        dx
    }

    /// Accumulates `dW += dy x^T` and `db += dy` into `grad`.
    pub fn accumulate(grad: &mut LinearLayer, x: &[f64], dy: &[f64]) {
        Self::accumulate_weight(grad, x, dy);
        super::axpy(grad.bias.data_mut(), 1.0, dy);
    }

    pub fn accumulate_weight(grad: &mut LinearLayer, x: &[f64], dy: &[f64]) {
        let n = x.len();
        let gw = grad.weight.data_mut();
        for (o, g) in dy.iter().enumerate() {
            if *g != 0.0 {
                super::axpy(&mut gw[o * n..(o + 1) * n], *g, x);
            }
        }
    }
}

/// Applies `layer` along the last axis of `x`.
pub fn linear_forward(x: &Tensor, layer: &LinearLayer) -> Result<Tensor> {
    let last = *x.shape().last().unwrap_or(&0);
    if last != layer.input_dim() {
        return Err(Error::shape(format!(
            "input last dim {last} does not match layer input {}",
            layer.input_dim()
        )));
    }
    let rows = x.len() / last.max(1);
    let mut data = Vec::with_capacity(rows * layer.output_dim());
    for r in 0..rows {
        data.extend(layer.apply(&x.data()[r * last..(r + 1) * last]));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = layer.output_dim();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>) -> LinearLayer {
        LinearLayer::new(
            Tensor::new(vec![rows, cols], w).unwrap(),
            Tensor::from_vec(b),
        )
        .unwrap()
    }

    #[test]
    fn identity_zero_input_and_hand_product() {
        let id = layer(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0]);
        let y = linear_forward(&Tensor::from_vec(vec![3.0, -1.0]), &id).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);

        let any = layer(vec![0.3, -7.0, 2.0, 9.0], 2, 2, vec![1.0, 2.0]);
        let y = linear_forward(&Tensor::from_vec(vec![0.0, 0.0]), &any).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let m = layer(vec![1.0, 2.0, 3.0, 4.0], 2, 2, vec![0.0, 0.0]);
        let y = linear_forward(&Tensor::from_vec(vec![1.0, 1.0]), &m).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn applies_along_last_axis() {
        let m = layer(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2, vec![0.0; 3]);
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = linear_forward(&x, &m).unwrap();
        assert_eq!(y.shape(), &[2, 1, 3]);
        assert_eq!(y.data(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = LinearLayer::zeros(3, 2);
        assert!(matches!(
            linear_forward(&Tensor::from_vec(vec![1.0, 2.0]), &m),
            Err(Error::Shape(_))
        ));
        assert!(LinearLayer::new(Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![3])).is_err());
    }

    proptest! {
        #[test]
        fn bias_free_layer_is_linear(
            w in prop::collection::vec(-2.0f64..2.0, 12),
            x in prop::collection::vec(-5.0f64..5.0, 4),
            y in prop::collection::vec(-5.0f64..5.0, 4),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let l = layer(w, 3, 4, vec![0.0; 3]);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = l.apply(&mix);
            let fx = l.apply(&x);
            let fy = l.apply(&y);
            for i in 0..3 {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-12);
            }
        }
    }
}
