use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Mode;

/// `max(0, x)`; the subgradient at exactly zero is zero.
pub fn relu_fwd_bwd(input: &Matrix, grad_out: Option<&Matrix>) -> Result<(Matrix, Option<Matrix>)> {
    let out = input.map(|v| v.max(0.0));
    let grad = match grad_out {
        None => None,
        Some(g) => {
            input.check_same_shape(g, "relu backward")?;
            let data = input
                .data()
                .iter()
                .zip(g.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            Some(Matrix::new(input.rows(), input.cols(), data)?)
        }
    };
    Ok((out, grad))
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. The mask holds the per-entry multiplier (0 or
/// `1/(1-rate)`) so backward is `grad ⊙ mask`.
pub fn dropout_fwd<R: Rng + ?Sized>(
    input: &Matrix,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, Matrix)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), Matrix::filled(input.rows(), input.cols(), 1.0)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Matrix::from_fn(input.rows(), input.cols(), |_, _| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    let data = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(x, m)| x * m)
        .collect();
    Ok((Matrix::new(input.rows(), input.cols(), data)?, mask))
}

/// Draws an inverted-dropout mask of `len` entries in place of a matrix.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::central_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_forward_and_backward() {
        let x = Matrix::from_rows(&[[-1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let (out, gin) = relu_fwd_bwd(&x, Some(&g)).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
        assert_eq!(gin.unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Inputs at least 1e-3 away from zero.
        let x = Matrix::from_fn(4, 5, |_, _| {
            let v: f64 = rng.gen_range(1e-3..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        });
        let probe = Matrix::from_fn(4, 5, |r, c| 0.3 + (r * 5 + c) as f64 * 0.1);
        let (_, g) = relu_fwd_bwd(&x, Some(&probe)).unwrap();
        let numeric = central_difference(x.data(), 1e-5, |t| {
            t.iter()
                .zip(probe.data())
                .map(|(v, p)| v.max(0.0) * p)
                .sum()
        });
        for (a, n) in g.unwrap().data().iter().zip(&numeric) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-6);
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        let (out, _) = dropout_fwd(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(out, x);
        let (out, mask) = dropout_fwd(&x, 0.7, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
        assert!(matches!(
            dropout_fwd(&x, 1.0, Mode::Train, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_rate_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Matrix::from_fn(1000, 1000, |r, c| 1.0 + ((r * 1000 + c) % 7) as f64);
        let (out, _) = dropout_fwd(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((0.497..=0.503).contains(&zeros), "zero fraction {zeros}");
        let mean_in = x.data().iter().sum::<f64>() / 1e6;
        let mean_out = out.data().iter().sum::<f64>() / 1e6;
        assert!(((mean_out - mean_in) / mean_in).abs() < 0.01);
    }
}
