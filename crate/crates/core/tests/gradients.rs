mod common;

use common::*;
use infilter_core::feature_nets::{ConvResBlock, FeatureNet, FeatureNetSpec};
use infilter_core::numerics::{Layer, LayerKind, Mode, Rng, Tensor};

const SEEDS: u64 = 20;

fn assert_report(name: &str, r: &FdReport) {
    println!("{name}: {} checked, {} refined, {} kinks, max rel err {:.2e}", r.checked, r.refined, r.kinks, r.max_rel_err);
    assert!(
        r.passed(),
        "{name}: max rel err {:.3e} (worst {:?}), {} checked, {} refined, {} kinks",
        r.max_rel_err,
        r.worst,
        r.checked,
        r.refined,
        r.kinks
    );
}

fn layer_suite(kind: LayerKind, input: impl Fn(&mut Rng) -> Tensor<f64>, mode: Mode) {
    let check_input = !matches!(kind, LayerKind::TokenEmbedding { .. });
    let mut total = FdReport::default();
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let layer = Layer::new(kind.clone(), &mut rng).unwrap();
        let x = input(&mut rng);
        total.merge(&check_layer_with(&layer, &x, mode, seed, check_input));
    }
    assert_report(kind.name(), &total);
}

#[test]
fn dense() {
    layer_suite(
        LayerKind::Dense { input: 3, output: 2 },
        |r| random_tensor(r, &[3], -1.0, 1.0),
        Mode::Train,
    );
}

#[test]
fn token_embedding() {
    layer_suite(
        LayerKind::TokenEmbedding { vocab: 7, dim: 4 },
        |r| Tensor::new(vec![5], (0..5).map(|_| r.below(7) as f64).collect()).unwrap(),
        Mode::Train,
    );
}

#[test]
fn sep_conv_stride_one() {
    layer_suite(
        LayerKind::SepConv2D { in_ch: 2, out_ch: 3, kernel: 3, stride: [1, 1] },
        |r| random_tensor(r, &[4, 4, 2], -1.0, 1.0),
        Mode::Train,
    );
}

#[test]
fn sep_conv_stride_two() {
    layer_suite(
        LayerKind::SepConv2D { in_ch: 2, out_ch: 2, kernel: 3, stride: [2, 2] },
        |r| random_tensor(r, &[5, 4, 2], -1.0, 1.0),
        Mode::Train,
    );
}

#[test]
fn layer_norm() {
    layer_suite(
        LayerKind::LayerNorm { dim: 5 },
        |r| random_tensor(r, &[3, 5], -2.0, 2.0),
        Mode::Train,
    );
}

#[test]
fn max_pool() {
    layer_suite(
        LayerKind::MaxPool2D { window: [2, 2] },
        |r| random_tensor(r, &[5, 4, 2], -1.0, 1.0),
        Mode::Train,
    );
}

#[test]
fn global_max_pool() {
    layer_suite(LayerKind::GlobalMaxPool, |r| random_tensor(r, &[3, 3, 4], -1.0, 1.0), Mode::Train);
}

#[test]
fn relu() {
    layer_suite(LayerKind::ReLU, |r| away_from_zero(r, &[10], 0.05, 2.0), Mode::Train);
}

#[test]
fn sigmoid() {
    layer_suite(LayerKind::Sigmoid, |r| random_tensor(r, &[10], -4.0, 4.0), Mode::Train);
}

#[test]
fn dropout_train_mode() {
    layer_suite(LayerKind::Dropout { p: 0.5 }, |r| random_tensor(r, &[12], -1.0, 1.0), Mode::Train);
}

#[test]
fn conv_res_block_full_gradient() {
    let mut total = FdReport::default();
    for seed in 0..SEEDS {
        let mut rng = Rng::new(100 + seed);
        let mut spec = FeatureNetSpec::image(4, 4, 2);
        spec.conv_channels = [3, 3];
        spec.emb_len = 4;
        spec.dropout_p = 0.0;
        let net: FeatureNet<f64> = FeatureNet::new(spec, &mut rng).unwrap();
        let x = random_tensor(&mut rng, &[4, 4, 2], -1.0, 1.0);
        total.merge(&check_net(&net, &x, Mode::Train, seed, true));
    }
    assert_report("conv_res image net", &total);
    // The block alone is exercised through the image stack above; make sure
    // it is also usable standalone.
    let block = ConvResBlock::<f64>::new(2, 3, 3, false, &mut Rng::new(1)).unwrap();
    let y = infilter_core::feature_nets::conv_res_block(&Tensor::full(&[4, 4, 2], 0.5), &block).unwrap();
    assert_eq!(y.shape(), &[2, 2, 3]);
}

#[test]
fn sep_conv_full_gradient_on_1x4x4x2() {
    let mut total = FdReport::default();
    for seed in 0..SEEDS {
        let mut rng = Rng::new(300 + seed);
        let layer = Layer::new(
            LayerKind::SepConv2D { in_ch: 2, out_ch: 2, kernel: 3, stride: [1, 1] },
            &mut rng,
        )
        .unwrap();
        let x = random_tensor(&mut rng, &[4, 4, 2], -1.0, 1.0);
        total.merge(&check_layer(&layer, &x, Mode::Train, seed));
    }
    assert_report("sep_conv 1x4x4x2", &total);
}

fn net_suite(name: &str, make: impl Fn() -> FeatureNetSpec, input: impl Fn(&mut Rng, &FeatureNetSpec) -> Tensor<f64>, check_input: bool) {
    let mut total = FdReport::default();
    for seed in 0..SEEDS {
        let mut rng = Rng::new(500 + seed);
        let spec = make();
        let net: FeatureNet<f64> = FeatureNet::new(spec.clone(), &mut rng).unwrap();
        let x = input(&mut rng, &spec);
        total.merge(&check_net(&net, &x, Mode::Train, seed, check_input));
    }
    assert_report(name, &total);
}

#[test]
fn vec_net_end_to_end() {
    net_suite(
        "vec net",
        || FeatureNetSpec { dense_units: 6, emb_len: 5, ..FeatureNetSpec::vec(vec![2, 3]) },
        |r, s| random_tensor(r, &s.input_dims, -1.0, 1.0),
        true,
    );
}

#[test]
fn text_net_end_to_end() {
    net_suite(
        "text net",
        || FeatureNetSpec { token_embed_dim: 4, emb_len: 3, ..FeatureNetSpec::text(6, 9) },
        |r, s| Tensor::new(s.input_dims.clone(), (0..6).map(|_| r.below(9) as f64).collect()).unwrap(),
        false,
    );
}

#[test]
fn video_net_end_to_end() {
    net_suite(
        "video net",
        || FeatureNetSpec { conv_channels: [4, 4], emb_len: 3, ..FeatureNetSpec::video(2, 4, 4, 1) },
        |r, s| random_tensor(r, &s.input_dims, -1.0, 1.0),
        true,
    );
}

#[test]
fn audio_spectrogram_net_end_to_end() {
    net_suite(
        "audio spectrogram net",
        || FeatureNetSpec { conv_channels: [4, 4], emb_len: 3, ..FeatureNetSpec::audio(vec![6, 4]) },
        |r, s| random_tensor(r, &s.input_dims, 0.2, 1.0),
        true,
    );
}

#[test]
fn audio_waveform_net_end_to_end() {
    net_suite(
        "audio waveform net",
        || FeatureNetSpec { conv_channels: [4, 4], emb_len: 3, ..FeatureNetSpec::audio(vec![12]) },
        |r, s| random_tensor(r, &s.input_dims, 0.2, 1.0),
        true,
    );
}
