use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};
use crate::network::Mode;

/// Inverted dropout. Returns the output and the per-element scale mask
/// (0 for dropped elements, `1/(1−p)` for survivors; all ones in Eval mode).
pub fn dropout(a: &Matrix, p_drop: f64, mode: Mode, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::config(format!("dropout probability must be in [0, 1), got {p_drop}")));
    }
    let (rows, cols) = a.shape();
    if mode == Mode::Eval || p_drop == 0.0 {
        return Ok((a.clone(), Matrix::filled(rows, cols, 1.0)));
    }
    let keep = 1.0 / (1.0 - p_drop);
    let mut mask = Matrix::zeros(rows, cols);
    for m in mask.data_mut() {
        if rng.uniform() >= p_drop {
            *m = keep;
        }
    }
    let mut out = a.clone();
    out.hadamard_inplace(&mask);
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_is_identity() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, mask) = dropout(&a, 0.0, Mode::Train, &mut Rng::new(1)).unwrap();
        assert_eq!(out, a);
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn eval_is_identity() {
        let a = Matrix::filled(3, 3, 2.0);
        let (out, _) = dropout(&a, 0.9, Mode::Eval, &mut Rng::new(1)).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn survivor_fraction_and_mean() {
        let a = Matrix::filled(100, 1000, 1.0);
        let (out, mask) = dropout(&a, 0.5, Mode::Train, &mut Rng::new(8)).unwrap();
        let n = 100_000.0;
        let kept = mask.data().iter().filter(|&&m| m > 0.0).count() as f64 / n;
        assert!((kept - 0.5).abs() < 0.01, "kept {kept}");
        let mean = out.data().iter().sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn rejects_bad_probability() {
        let a = Matrix::zeros(1, 1);
        for p in [-0.1, 1.0, f64::NAN] {
            assert!(dropout(&a, p, Mode::Train, &mut Rng::new(0)).is_err());
        }
    }
}
