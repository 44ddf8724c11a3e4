//! Element-wise activation functions and their analytical derivatives.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{erf, std_normal_cdf, std_normal_pdf};
use crate::report::sig10;

/// The activation functions under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActivationKind {
    /// `α·x·erf(x/√2)`: even, so every output value has two preimages.
    Sgelu { alpha: f64 },
    /// `x·Φ(x)`, exact erf form.
    Gelu,
    Relu,
    Elu { alpha: f64 },
    /// `x·tanh(x)`.
    Lisht,
}

pub const DEFAULT_SGELU_ALPHA: f64 = 0.1;
pub const DEFAULT_ELU_ALPHA: f64 = 1.0;

impl ActivationKind {
    pub fn sgelu(alpha: f64) -> Result<Self> {
        let k = ActivationKind::Sgelu { alpha };
        k.validate()?;
        Ok(k)
    }

    pub fn elu(alpha: f64) -> Result<Self> {
        let k = ActivationKind::Elu { alpha };
        k.validate()?;
        Ok(k)
    }

    /// Looks up a kind by its lowercase name. `alpha` applies to SGELU and ELU
    /// and falls back to each one's default.
    pub fn from_name(name: &str, alpha: Option<f64>) -> Result<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "sgelu" => ActivationKind::Sgelu {
                alpha: alpha.unwrap_or(DEFAULT_SGELU_ALPHA),
            },
            "gelu" => ActivationKind::Gelu,
            "relu" => ActivationKind::Relu,
            "elu" => ActivationKind::Elu {
                alpha: alpha.unwrap_or(DEFAULT_ELU_ALPHA),
            },
            "lisht" => ActivationKind::Lisht,
            other => {
                return Err(Error::config(format!(
                    "unknown activation '{other}' (expected sgelu, gelu, relu, elu or lisht)"
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Sgelu { .. } => "sgelu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Relu => "relu",
            ActivationKind::Elu { .. } => "elu",
            ActivationKind::Lisht => "lisht",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::Sgelu { alpha } | ActivationKind::Elu { alpha }
                if !(alpha > 0.0 && alpha.is_finite()) =>
            {
                Err(Error::config(format!(
                    "{} alpha must be positive and finite, got {alpha}",
                    self.name()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn forward(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Sgelu { alpha } => alpha * x * erf(x * FRAC_1_SQRT_2),
            ActivationKind::Gelu => x * std_normal_cdf(x),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Elu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
            ActivationKind::Lisht => x * x.tanh(),
        }
    }

    /// Derivative with respect to the input. ReLU uses 0 at the kink.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Sgelu { alpha } => {
                // d/dx erf(x/√2) = √(2/π)·exp(-x²/2)
                alpha * (erf(x * FRAC_1_SQRT_2) + (2.0 / PI).sqrt() * x * (-0.5 * x * x).exp())
            }
            ActivationKind::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
            ActivationKind::Lisht => {
                let t = x.tanh();
                t + x * (1.0 - t * t)
            }
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Sgelu { alpha } => write!(f, "sgelu(alpha={alpha})"),
            ActivationKind::Elu { alpha } => write!(f, "elu(alpha={alpha})"),
            other => f.write_str(other.name()),
        }
    }
}

/// What a dense layer applies to its (possibly normalized) pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Sigmoid,
    Hidden(ActivationKind),
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Hidden(k) => k.forward(x),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Hidden(k) => k.derivative(x),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Activation::Hidden(k) => k.validate(),
            _ => Ok(()),
        }
    }
}

impl From<ActivationKind> for Activation {
    fn from(k: ActivationKind) -> Self {
        Activation::Hidden(k)
    }
}

/// One sample of an activation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub x: f64,
    pub f: f64,
    pub df: f64,
}

/// `n` evenly spaced samples of `f` and `f′` over `[xmin, xmax]`, endpoints included.
pub fn tabulate(kind: ActivationKind, xmin: f64, xmax: f64, n: usize) -> Result<Vec<TableRow>> {
    kind.validate()?;
    if !(xmin.is_finite() && xmax.is_finite() && xmin < xmax) {
        return Err(Error::config(format!(
            "tabulation range must satisfy xmin < xmax, got [{xmin}, {xmax}]"
        )));
    }
    if n < 2 {
        return Err(Error::config(format!("tabulation needs n >= 2, got {n}")));
    }
    let span = xmax - xmin;
    let last = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let x = if i == n - 1 {
                xmax
            } else {
                xmin + span * i as f64 / last
            };
            TableRow {
                x,
                f: kind.forward(x),
                df: kind.derivative(x),
            }
        })
        .collect())
}

/// CSV with header `x,f,df`, 10 significant digits.
pub fn write_table_csv<W: Write>(rows: &[TableRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "x,f,df")?;
    for r in rows {
        writeln!(w, "{},{},{}", sig10(r.x), sig10(r.f), sig10(r.df))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SGELU: ActivationKind = ActivationKind::Sgelu { alpha: 0.1 };
    const ALL: [ActivationKind; 5] = [
        SGELU,
        ActivationKind::Gelu,
        ActivationKind::Relu,
        ActivationKind::Elu { alpha: 1.0 },
        ActivationKind::Lisht,
    ];

    fn central_difference(k: ActivationKind, x: f64, h: f64) -> f64 {
        (k.forward(x + h) - k.forward(x - h)) / (2.0 * h)
    }

    #[test]
    fn forward_reference_values() {
        assert_eq!(SGELU.forward(0.0), 0.0);
        assert_abs_diff_eq!(SGELU.forward(1.0), 0.0682689492, epsilon = 1e-10);
        assert_eq!(SGELU.forward(-1.0), SGELU.forward(1.0));
        assert_abs_diff_eq!(ActivationKind::Gelu.forward(1.0), 0.8413447461, epsilon = 1e-10);
        assert_abs_diff_eq!(ActivationKind::Gelu.forward(-1.0), -0.1586552539, epsilon = 1e-10);
        assert_abs_diff_eq!(ActivationKind::Lisht.forward(1.0), 0.7615941560, epsilon = 1e-10);
    }

    #[test]
    fn derivative_reference_values() {
        assert_eq!(SGELU.derivative(0.0), 0.0);
        // frozen from a central difference with h = 1e-6
        let fd = central_difference(SGELU, 1.0, 1e-6);
        assert_abs_diff_eq!(fd, 0.1166630941, epsilon = 1e-9);
        assert_abs_diff_eq!(SGELU.derivative(1.0), 0.1166630941, epsilon = 1e-10);
        assert_eq!(ActivationKind::Gelu.derivative(0.0), 0.5);
        assert_eq!(ActivationKind::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for k in ALL {
            for i in 0..=1000 {
                let x = -5.0 + 10.0 * i as f64 / 1000.0;
                let kinked = matches!(k, ActivationKind::Relu | ActivationKind::Elu { .. });
                if kinked && x.abs() < 1e-3 {
                    continue;
                }
                let fd = central_difference(k, x, 1e-6);
                let an = k.derivative(x);
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                // both zero (ReLU on the negative side, SGELU at the origin)
                let rel = if an == 0.0 && fd.abs() < 1e-12 { 0.0 } else { rel };
                assert!(rel <= 1e-5, "{k} at {x}: analytic {an} fd {fd}");
            }
        }
    }

    #[test]
    fn sgelu_is_even_and_nonnegative() {
        for i in 0..=2000 {
            let x = -10.0 + 20.0 * i as f64 / 2000.0;
            assert_eq!(SGELU.forward(x), SGELU.forward(-x));
            if x != 0.0 {
                assert!(SGELU.forward(x) > 0.0, "x = {x}");
            }
        }
        let g = ActivationKind::Gelu;
        assert_ne!(g.forward(1.0), g.forward(-1.0));
        assert_ne!(g.forward(1.0), -g.forward(-1.0));
    }

    #[test]
    fn sgelu_is_asymptotically_linear() {
        for x in [8.0, -8.0] {
            let ratio = SGELU.forward(x) / (0.1 * f64::abs(x));
            assert!((ratio - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_signs_on_the_negative_axis() {
        assert!(ActivationKind::Gelu.derivative(-1.5) < 0.0);
        for i in 1..=1000 {
            let x = 6.0 * i as f64 / 1000.0;
            assert!(SGELU.derivative(-x) < 0.0, "x = -{x}");
            assert!(SGELU.derivative(x) > 0.0, "x = {x}");
        }
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(ActivationKind::sgelu(0.0).is_err());
        assert!(ActivationKind::sgelu(-0.1).is_err());
        assert!(ActivationKind::elu(f64::NAN).is_err());
        assert!(ActivationKind::from_name("swish", None).is_err());
        assert_eq!(
            ActivationKind::from_name("SGELU", Some(0.2)).unwrap(),
            ActivationKind::Sgelu { alpha: 0.2 }
        );
    }

    #[test]
    fn tabulate_relu() {
        let rows = tabulate(ActivationKind::Relu, -1.0, 1.0, 3).unwrap();
        let flat: Vec<_> = rows.iter().map(|r| (r.x, r.f, r.df)).collect();
        assert_eq!(flat, vec![(-1.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]);
    }

    #[test]
    fn tabulate_grid_contract() {
        let rows = tabulate(SGELU, -4.0, 4.0, 9).unwrap();
        for i in 0..9 {
            assert_eq!(rows[i].f, rows[8 - i].f);
        }
        for k in ALL {
            let ends = tabulate(k, -2.5, 3.0, 2).unwrap();
            assert_eq!((ends[0].x, ends[1].x), (-2.5, 3.0));
            assert_eq!(ends[1].f, k.forward(3.0));
            assert_eq!(ends[1].df, k.derivative(3.0));
        }
        assert!(tabulate(SGELU, 1.0, 1.0, 5).is_err());
        assert!(tabulate(SGELU, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn table_csv_format() {
        let rows = tabulate(ActivationKind::Relu, -1.0, 1.0, 3).unwrap();
        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,f,df\n-1,0,0\n0,0,0\n1,1,1\n");
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(Activation::Sigmoid.forward(-800.0), 0.0);
        assert_eq!(Activation::Sigmoid.forward(800.0), 1.0);
        assert_abs_diff_eq!(Activation::Sigmoid.derivative(0.0), 0.25);
    }
}
