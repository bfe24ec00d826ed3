use crate::error::{Error, Result};

/// Magnitudes below this are compared in absolute terms, so gradients that are
/// zero up to rounding do not produce spurious relative errors.
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `(L(θ + h·e_i) − L(θ − h·e_i)) / 2h` for every coordinate.
pub fn central_difference(theta: &[f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..t.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = loss(&t);
            t[i] = orig - h;
            let down = loss(&t);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compares `analytic` against central differences of `loss` around `params`
/// and returns the worst relative error.
pub fn gradient_check(
    params: &[f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim("gradient_check", params.len(), analytic.len()));
    }
    let mut bad = None;
    let numeric = central_difference(params, h, |t| {
        let l = loss(t);
        if !l.is_finite() && bad.is_none() {
            bad = Some(l);
        }
        l
    });
    if let Some(l) = bad {
        return Err(Error::Numeric(format!("loss evaluated to {l} during gradient check")));
    }
    Ok(max_relative_error(analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::linear::LinearLayer;
    use crate::tensors::Tensors;

    #[test]
    fn quadratic_is_exact() {
        let err = gradient_check(&[3.0], &[6.0], 1e-5, |w| w[0] * w[0]).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn linear_model_with_mse() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.7 * x - 0.4 + (x * 3.0).sin() * 0.1).collect();
        let x = Matrix::column(&xs);
        let mut layer = LinearLayer::new(Matrix::column(&[0.5]), vec![0.2]).unwrap();
        let loss = |l: &LinearLayer| -> f64 {
            let p = l.forward(&x).unwrap();
            p.data().iter().zip(&ys).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / 10.0
        };
        let p = layer.forward(&x).unwrap();
        let g = Matrix::column(&p.data().iter().zip(&ys).map(|(p, y)| 2.0 * (p - y) / 10.0).collect::<Vec<_>>());
        let mut acc = layer.zeros_like();
        layer.backward_into(&x, &g, &mut acc, false).unwrap();
        let theta = layer.flatten_trainable();
        let err = gradient_check(&theta, &acc.flatten_trainable(), 1e-5, |t| {
            layer.assign_trainable(t);
            let l = loss(&layer);
            layer.assign_trainable(&theta);
            l
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite_loss() {
        assert!(matches!(
            gradient_check(&[1.0], &[0.0], 0.0, |_| 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gradient_check(&[1.0], &[0.0], 1e-5, |_| f64::NAN),
            Err(Error::Numeric(_))
        ));
    }
}
