mod common;

use common::{check_layers, check_loss, layer_fixtures};
use splitsim::nn::{LayerSpec, LossKind};

#[test]
fn every_layer_type_matches_finite_differences() {
    for (name, layers, shape) in layer_fixtures() {
        for seed in 0..20 {
            let out = check_layers(&layers, &shape, seed);
            assert!(out.passed(), "{name} seed {seed}: {out:?}");
        }
    }
}

#[test]
fn both_losses_match_finite_differences() {
    for seed in 0..20 {
        let ce = check_loss(LossKind::SoftmaxCrossEntropy, 5, 4, seed);
        assert!(ce.passed(), "softmax seed {seed}: {ce:?}");
        let bce = check_loss(LossKind::SigmoidBinaryCrossEntropy, 5, 2, seed);
        assert!(bce.passed(), "sigmoid seed {seed}: {bce:?}");
    }
}

#[test]
fn stacked_conv_block_matches_finite_differences() {
    let layers = vec![
        LayerSpec::conv3x3(1, 2),
        LayerSpec::batch_norm(2),
        LayerSpec::Relu,
        LayerSpec::max_pool(),
        LayerSpec::Flatten,
        LayerSpec::dense(8, 3),
    ];
    for seed in 0..5 {
        let out = check_layers(&layers, &[2, 1, 6, 6], seed);
        assert!(out.passed(), "seed {seed}: {out:?}");
    }
}
