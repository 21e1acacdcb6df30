//! Dense tensors, activations, the seeded RNG and the finite-difference
//! gradient checker used by all learning code.

mod gradcheck;
mod linear;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use linear::{linear_forward, LinearLayer};
pub use rng::Rng;
pub use tensor::{ParamSet, Tensor};

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu_scalar`].
pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

/// Numerically stable softmax over a slice. Panics on empty input; use
/// [`softmax`] for the checked version.
pub fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.shape().len() != 1 {
        return Err(Error::shape(format!(
            "softmax expects a vector, got shape {:?}",
            v.shape()
        )));
    }
    if v.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    Tensor::new(vec![v.len()], softmax_slice(v.data()))
}

/// Backward pass of softmax: given `p = softmax(x)` and `dL/dp`, returns `dL/dx`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, dpi)| pi * (dpi - dot)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `acc += scale * x`
pub fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gelu_values() {
        let t = Tensor::from_vec(vec![0.0, 100.0, 1.0]);
        let g = gelu(&t);
        assert_eq!(g.data()[0], 0.0);
        assert!((g.data()[1] - 100.0).abs() < 1e-9);
        // Phi(1) = 0.841344746068543 (high-precision tables).
        assert!((g.data()[2] - 0.841_344_746_1).abs() < 1e-10);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::from_vec(vec![2.5, 2.5, 2.5])).unwrap();
        for p in s.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::from_vec(vec![-4.0])).unwrap();
        assert_eq!(s.data(), &[1.0]);
        let s = softmax(&Tensor::from_vec(vec![0.0, 3f64.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_empty() {
        let e = Tensor::new(vec![0], vec![]).unwrap();
        assert!(matches!(softmax(&e), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_backward_matches_difference() {
        let x = [0.3, -1.2, 2.0, 0.1];
        let w = [1.0, -2.0, 0.5, 3.0];
        let loss = |x: &[f64]| dot(&softmax_slice(x), &w);
        let p = softmax_slice(&x);
        let g = softmax_backward(&p, &w);
        for i in 0..4 {
            let mut a = x;
            let mut b = x;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            shift in -1e3f64..1e3,
        ) {
            let p = softmax_slice(&v);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax_slice(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
