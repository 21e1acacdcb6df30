use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    /// Coordinate where the max was attained.
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

/// Compares `analytic` against central differences of `f` around `params`.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    grad_check_with(f, params, analytic, eps, Exec::default())
}

pub fn grad_check_with<F>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    exec: Exec,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if !(eps > 0.0) {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let numeric = exec.map_range(params.len(), |i| {
        let mut p = params.to_vec();
        p[i] = params[i] + eps;
        let up = f(&p);
        p[i] = params[i] - eps;
        let down = f(&p);
        (up, down)
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        numeric: Vec::with_capacity(params.len()),
    };
    for (i, (up, down)) in numeric.into_iter().enumerate() {
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value at coordinate {i}"
            )));
        }
        let fd = (up - down) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.numeric.push(fd);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let r = grad_check(|p| p[0] * p[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-8);
    }

    #[test]
    fn constant_has_zero_error() {
        let r = grad_check(|_| 4.2, &[1.0, -2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let r = grad_check(|p| p[0] * p[1], &[2.0, 5.0], &[5.0, 3.0], 1e-5).unwrap();
        assert_eq!(r.worst_index, 1);
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        assert!(matches!(
            grad_check(|p| p[0], &[1.0], &[1.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            grad_check(|p| p[0].ln(), &[0.0], &[1.0], 1e-3),
            Err(Error::Numeric(_))
        ));
    }
}
