//! Post-training diagnostics: weight normality, weight histograms, gradient
//! checking, and the single-neuron weight-update demonstration.

use std::io::Write;

use crate::activations::{Activation, ActivationKind};
use crate::error::{Error, Result};
use crate::math::{std_normal_cdf, Matrix, Rng};
use crate::network::{mse_loss, Gradients, Mode, Network, NetworkSpec, ParamId};
use crate::normalization::NormalizerKind;
use crate::report::sig10;

/// Critical value coefficient of the asymptotic one-sample KS test at α = 0.05.
pub const KS_COEFF_05: f64 = 1.36;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub n: usize,
    /// Sup-distance between the empirical CDF and Φ.
    pub statistic: f64,
    pub critical_value: f64,
    pub passes: bool,
    pub sample_mean: f64,
    pub sample_std: f64,
}

/// One-sample Kolmogorov–Smirnov test against a normal distribution whose
/// mean and standard deviation are estimated from the sample.
///
/// The critical value is the plain asymptotic `1.36/√n`. Because the
/// parameters are estimated, this is more lenient than a Lilliefors test
/// would be at the same nominal level.
pub fn ks_normal_test(samples: &[f64]) -> Result<KsResult> {
    let n = samples.len();
    if n < 8 {
        return Err(Error::config(format!("KS test needs at least 8 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let std = var.sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::Degenerate(format!(
            "sample standard deviation is {std}; cannot standardize"
        )));
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / std).collect();
    z.sort_by(f64::total_cmp);
    let mut d: f64 = 0.0;
    for (i, &x) in z.iter().enumerate() {
        let f = std_normal_cdf(x);
        let above = (i + 1) as f64 / nf - f;
        let below = f - i as f64 / nf;
        d = d.max(above).max(below);
    }
    let critical_value = KS_COEFF_05 / nf.sqrt();
    Ok(KsResult {
        n,
        statistic: d,
        critical_value,
        passes: d < critical_value,
        sample_mean: mean,
        sample_std: std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerKs {
    /// Index into `Network::layers`; the weights are that layer's incoming matrix.
    pub layer: usize,
    pub result: KsResult,
}

/// KS normality of every hidden layer's weight matrix. The output layer is
/// left out.
pub fn test_all_layers(net: &Network) -> Result<Vec<LayerKs>> {
    if net.layers.len() < 2 {
        return Err(Error::config("network has no hidden layer"));
    }
    net.layers[..net.layers.len() - 1]
        .iter()
        .enumerate()
        .map(|(layer, l)| {
            Ok(LayerKs {
                layer,
                result: ks_normal_test(l.weights.data())?,
            })
        })
        .collect()
}

pub fn passing_layers(results: &[LayerKs]) -> usize {
    results.iter().filter(|r| r.result.passes).count()
}

/// CSV with header `layer,n,statistic,critical,passes`.
pub fn write_ks_csv<W: Write>(results: &[LayerKs], mut w: W) -> std::io::Result<()> {
    writeln!(w, "layer,n,statistic,critical,passes")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.layer,
            r.result.n,
            sig10(r.result.statistic),
            sig10(r.result.critical_value),
            r.result.passes
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram of one layer's weights over their observed range.
pub fn weight_histogram(net: &Network, layer: usize, bins: usize) -> Result<Vec<HistBin>> {
    let l = net.layers.get(layer).ok_or(Error::OutOfBounds {
        index: layer,
        len: net.layers.len(),
    })?;
    histogram(l.weights.data(), bins)
}

pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistBin>> {
    if bins < 2 {
        return Err(Error::config(format!("histogram needs at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::config("histogram of no values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistBin {
            left: lo + width * k as f64,
            right: if k == bins - 1 { hi } else { lo + width * (k + 1) as f64 },
            count,
        })
        .collect())
}

/// CSV with header `bin_left,bin_right,count`.
pub fn write_histogram_csv<W: Write>(bins: &[HistBin], mut w: W) -> std::io::Result<()> {
    writeln!(w, "bin_left,bin_right,count")?;
    for b in bins {
        writeln!(w, "{},{},{}", sig10(b.left), sig10(b.right), b.count)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: ParamId,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Gradients smaller than this are compared in absolute terms; central
/// differences at h = 1e-5 carry about 1e-12 of rounding noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Largest parameter count [`gradient_check`] will accept.
pub const GRAD_CHECK_MAX_PARAMS: usize = 10_000;

/// Checks [`Network::backward`] against central differences of the MSE loss
/// on `(x, target)`, one parameter at a time.
///
/// Perturbed passes reuse the reference pass's min-max extremes and dropout
/// masks, which is exactly the function the backward pass differentiates.
/// Batch-norm statistics are recomputed on every pass.
pub fn gradient_check(net: &Network, x: &Matrix, target: &Matrix, h: f64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(0);
    let (pred, trace) = net.forward_with(x, Mode::Train, &mut rng, None)?;
    let (_, d_loss) = mse_loss(&pred, target)?;
    let grads = net.backward(&trace, &d_loss)?;
    compare_gradients_with(net, x, target, &grads, h, &trace)
}

/// A sigmoid-output MLP with layer widths `shape`, a standard-normal input
/// batch and uniform targets in `[0, 1)`, all drawn from `seed`.
pub fn gradcheck_fixture(
    kind: ActivationKind,
    normalizer: NormalizerKind,
    shape: &[usize],
    batch: usize,
    seed: u64,
) -> Result<(Network, Matrix, Matrix)> {
    if shape.len() < 2 {
        return Err(Error::config("network shape needs an input and an output width"));
    }
    let (input, rest) = (shape[0], &shape[1..]);
    let (output, hidden) = rest.split_last().expect("non-empty");
    let spec = NetworkSpec::mlp(input, hidden, kind, normalizer, *output, Activation::Sigmoid);
    let mut rng = Rng::new(seed);
    let net = Network::init(&spec, &mut rng)?;
    let x = Matrix::new(batch, input, rng.normal(batch * input, 0.0, 1.0))?;
    let target = Matrix::new(batch, *output, (0..batch * output).map(|_| rng.uniform()).collect())?;
    Ok((net, x, target))
}

/// Like [`gradient_check`] but against caller-supplied gradients.
pub fn compare_gradients(
    net: &Network,
    x: &Matrix,
    target: &Matrix,
    grads: &Gradients,
    h: f64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(0);
    let (_, trace) = net.forward_with(x, Mode::Train, &mut rng, None)?;
    compare_gradients_with(net, x, target, grads, h, &trace)
}

fn compare_gradients_with(
    net: &Network,
    x: &Matrix,
    target: &Matrix,
    grads: &Gradients,
    h: f64,
    reference: &crate::network::ForwardTrace,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    if net.param_count() > GRAD_CHECK_MAX_PARAMS {
        return Err(Error::config(format!(
            "gradient check is limited to {GRAD_CHECK_MAX_PARAMS} parameters, network has {}",
            net.param_count()
        )));
    }
    let layout = net.param_layout();
    let slices = grads.slices();
    if slices.len() != layout.len() || slices.iter().zip(&layout).any(|(s, l)| s.len() != l.2) {
        return Err(Error::Inconsistent("gradients do not match the network's parameters".into()));
    }
    let mut probe = net.clone();
    let mut rng = Rng::new(0);
    let mut loss_at = |probe: &Network| -> Result<f64> {
        let (pred, _) = probe.forward_with(x, Mode::Train, &mut rng, Some(reference))?;
        Ok(mse_loss(&pred, target)?.0)
    };
    let mut report: Option<GradCheckReport> = None;
    let mut checked = 0;
    for ((layer, tensor, len), g) in layout.into_iter().zip(slices) {
        for index in 0..len {
            let id = ParamId { layer, tensor, index };
            let v = net.param(id);
            probe.set_param(id, v + h);
            let plus = loss_at(&probe)?;
            probe.set_param(id, v - h);
            let minus = loss_at(&probe)?;
            probe.set_param(id, v);
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(g[index], numeric);
            checked += 1;
            if report.is_none_or(|r| err > r.max_rel_error) {
                report = Some(GradCheckReport {
                    max_rel_error: err,
                    worst: id,
                    analytic: g[index],
                    numeric,
                    checked: 0,
                });
            }
        }
    }
    let mut report = report.ok_or_else(|| Error::config("network has no parameters"))?;
    report.checked = checked;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoStep {
    pub step: usize,
    pub w: f64,
    pub z: f64,
    pub y: f64,
    pub abs_error: f64,
}

/// Plain gradient descent on one neuron `y = f(w·x)` with loss `½(target − y)²`.
///
/// Row 0 is the starting point, followed by one row per update.
pub fn weight_update_demo(
    kind: ActivationKind,
    w0: f64,
    x: f64,
    target: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<DemoStep>> {
    kind.validate()?;
    if ![w0, x, target, lr].iter().all(|v| v.is_finite()) {
        return Err(Error::config("demo inputs must be finite"));
    }
    let mut w = w0;
    let mut out = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let z = w * x;
        let y = kind.forward(z);
        out.push(DemoStep {
            step,
            w,
            z,
            y,
            abs_error: (target - y).abs(),
        });
        if step == steps {
            break;
        }
        // ∂E/∂w = −(target − y)·f′(z)·x
        let grad = -(target - y) * kind.derivative(z) * x;
        w -= lr * grad;
        if !w.is_finite() {
            return Err(Error::Divergence {
                layer: 0,
                what: format!("weight diverged at step {}", step + 1),
            });
        }
    }
    Ok(out)
}

/// CSV with header `step,w,z,y,abs_error`.
pub fn write_demo_csv<W: Write>(trace: &[DemoStep], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,w,z,y,abs_error")?;
    for s in trace {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.step,
            sig10(s.w),
            sig10(s.z),
            sig10(s.y),
            sig10(s.abs_error)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Activation;
    use crate::network::{NetworkSpec, ParamTensor};
    use crate::normalization::NormalizerKind;

    const SGELU: ActivationKind = ActivationKind::Sgelu { alpha: 0.1 };

    /// sup |F_n − Φ| by counting, checked at both one-sided limits of every sample.
    fn brute_force_ks(samples: &[f64]) -> f64 {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z: Vec<f64> = samples.iter().map(|x| (x - mean) / std).collect();
        let mut d: f64 = 0.0;
        for &t in &z {
            let at_or_below = z.iter().filter(|&&v| v <= t).count() as f64 / n;
            let below = z.iter().filter(|&&v| v < t).count() as f64 / n;
            let f = std_normal_cdf(t);
            d = d.max((at_or_below - f).abs()).max((below - f).abs());
        }
        d
    }

    #[test]
    fn ks_matches_brute_force() {
        let mut rng = Rng::new(31);
        for n in [8, 50, 200] {
            let s: Vec<f64> = (0..n).map(|_| rng.uniform().powi(3)).collect();
            let fast = ks_normal_test(&s).unwrap().statistic;
            assert!((fast - brute_force_ks(&s)).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn ks_normal_passes_uniform_fails() {
        let n = 10_000;
        let normal = Rng::new(12).normal(n, 0.0, 1.0);
        let r = ks_normal_test(&normal).unwrap();
        assert!(r.statistic < 2.0 / (n as f64).sqrt());
        assert!((r.critical_value - 1.36 / 100.0).abs() < 1e-15);

        let mut rng = Rng::new(13);
        let uniform: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        assert!(!ks_normal_test(&uniform).unwrap().passes);
    }

    #[test]
    fn ks_two_point_fails_and_constant_is_degenerate() {
        let two: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { -0.3 } else { 0.3 }).collect();
        let r = ks_normal_test(&two).unwrap();
        assert!(!r.passes);
        assert!(matches!(ks_normal_test(&[2.0; 20]), Err(Error::Degenerate(_))));
        assert!(ks_normal_test(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn ks_is_affine_invariant() {
        let s = Rng::new(4).normal(300, 0.0, 1.0);
        let base = ks_normal_test(&s).unwrap().statistic;
        for (a, c) in [(3.0, -2.0), (-0.5, 7.0), (1e-3, 1e3)] {
            let t: Vec<f64> = s.iter().map(|v| a * v + c).collect();
            let d = ks_normal_test(&t).unwrap().statistic;
            // the last case keeps only ~10 significant digits of each sample
            assert!((d - base).abs() < 1e-8, "a = {a}: {d} vs {base}");
        }
    }

    fn classifier(seed: u64) -> Network {
        let spec = NetworkSpec::mlp(784, &[128; 8], SGELU, NormalizerKind::MinMax, 10, Activation::Sigmoid);
        Network::init(&spec, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn untrained_layers_pass() {
        let res = test_all_layers(&classifier(1)).unwrap();
        assert_eq!(res.len(), 8);
        assert_eq!(passing_layers(&res), 8);
        let mut buf = Vec::new();
        write_ks_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("layer,n,statistic,critical,passes\n0,100352,"));
    }

    #[test]
    fn histogram_contracts() {
        let net = classifier(2);
        let bins = weight_histogram(&net, 3, 50).unwrap();
        assert_eq!(bins.len(), 50);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 128 * 128);
        assert!(matches!(weight_histogram(&net, 9, 10), Err(Error::OutOfBounds { .. })));
        assert!(weight_histogram(&net, 0, 1).is_err());

        let flat = histogram(&[0.25; 40], 5).unwrap();
        assert_eq!(flat.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(flat[0].count, 40);
    }

    #[test]
    fn histogram_of_normal_is_symmetric() {
        let v = Rng::new(3).normal(16_384, 0.0, 1.0);
        let bins = histogram(&v, 50).unwrap();
        // skewness from bin centres
        let total = v.len() as f64;
        let centres: Vec<(f64, f64)> =
            bins.iter().map(|b| (0.5 * (b.left + b.right), b.count as f64)).collect();
        let mean = centres.iter().map(|(c, k)| c * k).sum::<f64>() / total;
        let m2 = centres.iter().map(|(c, k)| k * (c - mean).powi(2)).sum::<f64>() / total;
        let m3 = centres.iter().map(|(c, k)| k * (c - mean).powi(3)).sum::<f64>() / total;
        let skew = m3 / m2.powf(1.5);
        assert!(skew.abs() < 0.1, "skewness {skew}");
    }

    fn small_net(kind: ActivationKind, norm: NormalizerKind, seed: u64) -> (Network, Matrix, Matrix) {
        let mut rng = Rng::new(seed);
        let spec = NetworkSpec::mlp(4, &[8], kind, norm, 3, Activation::Sigmoid);
        let net = Network::init(&spec, &mut rng).unwrap();
        let x = Matrix::new(16, 4, (0..64).map(|_| rng.uniform()).collect()).unwrap();
        let y = Matrix::new(16, 3, (0..48).map(|_| rng.uniform()).collect()).unwrap();
        (net, x, y)
    }

    #[test]
    fn linear_net_is_exact() {
        let mut rng = Rng::new(6);
        let spec = NetworkSpec {
            input_dim: 3,
            layers: vec![crate::network::LayerSpec::new(2, Activation::Linear)],
        };
        let net = Network::init(&spec, &mut rng).unwrap();
        let x = Matrix::new(5, 3, rng.normal(15, 0.0, 1.0)).unwrap();
        let y = Matrix::new(5, 2, rng.normal(10, 0.0, 1.0)).unwrap();
        let r = gradient_check(&net, &x, &y, 1e-4).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn sgelu_net_checks_out() {
        let (net, x, y) = small_net(SGELU, NormalizerKind::None, 8);
        let r = gradient_check(&net, &x, &y, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_located() {
        let (net, x, y) = small_net(ActivationKind::Gelu, NormalizerKind::BatchNorm, 9);
        let mut rng = Rng::new(0);
        let (pred, trace) = net.forward_with(&x, Mode::Train, &mut rng, None).unwrap();
        let (_, d) = mse_loss(&pred, &y).unwrap();
        let mut grads = net.backward(&trace, &d).unwrap();
        grads.layers[1].weights.data_mut()[5] *= 2.0;
        let r = compare_gradients(&net, &x, &y, &grads, 1e-5).unwrap();
        assert_eq!(
            r.worst,
            ParamId { layer: 1, tensor: ParamTensor::Weights, index: 5 }
        );
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn demo_relu_stalls_when_dead() {
        let trace = weight_update_demo(ActivationKind::Relu, -2.0, 1.0, 1.0, 0.5, 20).unwrap();
        assert_eq!(trace.len(), 21);
        assert!(trace.iter().all(|s| s.w == -2.0));
    }

    #[test]
    fn demo_sgelu_mirror_symmetry() {
        let neg = weight_update_demo(SGELU, -4.0, 1.0, 1.0, 1.0, 100).unwrap();
        let pos = weight_update_demo(SGELU, 4.0, 1.0, 1.0, 1.0, 100).unwrap();
        for (a, b) in neg.iter().zip(&pos) {
            assert_eq!(a.abs_error, b.abs_error);
            assert_eq!(a.w, -b.w);
        }
        assert!(neg.windows(2).all(|p| p[1].abs_error < p[0].abs_error));
    }

    #[test]
    fn demo_csv_header() {
        let trace = weight_update_demo(ActivationKind::Gelu, -4.0, 1.0, 1.0, 1.0, 2).unwrap();
        let mut buf = Vec::new();
        write_demo_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,w,z,y,abs_error\n0,-4,-4,"));
        assert_eq!(text.lines().count(), 4);
    }
}
