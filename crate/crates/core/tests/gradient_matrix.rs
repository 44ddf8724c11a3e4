use sgelu_core::activations::ActivationKind;
use sgelu_core::analysis::{gradcheck_fixture, gradient_check};
use sgelu_core::normalization::NormalizerKind;

const KINDS: [ActivationKind; 5] = [
    ActivationKind::Sgelu { alpha: 0.1 },
    ActivationKind::Gelu,
    ActivationKind::Relu,
    ActivationKind::Elu { alpha: 1.0 },
    ActivationKind::Lisht,
];

#[test]
fn every_activation_and_normalizer_backpropagates_correctly() {
    for kind in KINDS {
        for normalizer in [NormalizerKind::None, NormalizerKind::BatchNorm, NormalizerKind::MinMax] {
            let (net, x, target) = gradcheck_fixture(kind, normalizer, &[4, 8, 3], 16, 11).unwrap();
            let report = gradient_check(&net, &x, &target, 1e-5).unwrap();
            let tol = if normalizer == NormalizerKind::MinMax { 1e-3 } else { 1e-4 };
            assert!(
                report.max_rel_error <= tol,
                "{kind} with {}: {} at {} (analytic {}, numeric {})",
                normalizer.name(),
                report.max_rel_error,
                report.worst,
                report.analytic,
                report.numeric
            );
            assert_eq!(report.checked, net.param_count());
        }
    }
}

#[test]
fn deeper_networks_check_out() {
    for (kind, normalizer) in [
        (ActivationKind::Sgelu { alpha: 0.1 }, NormalizerKind::MinMax),
        (ActivationKind::Gelu, NormalizerKind::BatchNorm),
        (ActivationKind::Lisht, NormalizerKind::BatchNorm),
    ] {
        let (net, x, target) = gradcheck_fixture(kind, normalizer, &[6, 10, 10, 10, 4], 16, 3).unwrap();
        let report = gradient_check(&net, &x, &target, 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{kind}: {report:?}");
    }
}
