use mvfi_core::mv::BlockVector;
use mvfi_core::nnet::kernels::{conv2d, conv_transpose2x2};
use mvfi_core::nnet::{conv2d_int8, QTensor, QWeights};
use mvfi_core::prealign::{
    build_flow, gaussian_blur_flow, median_filter_flow, warp_bilinear, zoh_densify, SmoothingProfile,
};
use mvfi_core::quant::{fake_quant_value, percentile};
use mvfi_core::synth::oracle;
use mvfi_core::{FloatImage, FlowField, Tensor};
use proptest::prelude::*;

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn flow_strategy(max: usize, amp: f32) -> impl Strategy<Value = FlowField> {
    (1..=max, 1..=max).prop_flat_map(move |(w, h)| {
        (
            prop::collection::vec(-amp..amp, w * h),
            prop::collection::vec(-amp..amp, w * h),
        )
            .prop_map(move |(u, v)| FlowField::new(w, h, u, v).unwrap())
    })
}

fn image_strategy(max: usize) -> impl Strategy<Value = FloatImage> {
    (1..=max, 1..=max, prop::sample::select(vec![1usize, 3])).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(0.0f32..=1.0, w * h * c).prop_map(move |d| FloatImage::new(w, h, c, d).unwrap())
    })
}

fn tensor_strategy(ch: usize, max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(move |(h, w)| {
        prop::collection::vec(-1.0f32..1.0, ch * h * w).prop_map(move |d| Tensor::new([1, ch, h, w], d).unwrap())
    })
}

/// Codec-style block layout: a grid of `block`-aligned squares, each with its own vector.
fn block_field(cols: usize, rows: usize, block: u32, vecs: &[(f32, f32)]) -> Vec<BlockVector> {
    (0..rows * cols)
        .map(|i| BlockVector {
            x0: ((i % cols) as u32 * block) as i32,
            y0: ((i / cols) as u32 * block) as i32,
            w: block,
            h: block,
            dx: vecs[i].0,
            dy: vecs[i].1,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fake_quant_is_idempotent_and_bounded(v in -200.0f32..200.0, e in -10i32..2) {
        let s = 2f32.powi(e) * 1.37;
        let q = fake_quant_value(v, s);
        prop_assert_eq!(fake_quant_value(q, s), q);
        if v >= -128.0 * s && v <= 127.0 * s {
            prop_assert!((v - q).abs() <= s / 2.0 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn median_matches_oracle(f in flow_strategy(24, 8.0), k in prop::sample::select(vec![3usize, 5, 7])) {
        let a = median_filter_flow(&f, k).unwrap();
        let b = oracle::oracle_median(&f, k);
        prop_assert!(max_diff(a.u(), b.u()) <= 1e-5 && max_diff(a.v(), b.v()) <= 1e-5);
    }

    #[test]
    fn gaussian_matches_oracle(f in flow_strategy(32, 8.0), sigma in 0.5f32..3.0) {
        let a = gaussian_blur_flow(&f, sigma).unwrap();
        let b = oracle::oracle_gaussian(&f, sigma);
        prop_assert!(max_diff(a.u(), b.u()) <= 1e-5 && max_diff(a.v(), b.v()) <= 1e-5);
    }

    #[test]
    fn warp_matches_oracle(img in image_strategy(24), seed in any::<u64>(), scale in -1.0f32..1.0) {
        let (w, h) = (img.width(), img.height());
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32 - 0.5) * 12.0
        };
        let u: Vec<f32> = (0..w * h).map(|_| next()).collect();
        let v: Vec<f32> = (0..w * h).map(|_| next()).collect();
        let flow = FlowField::new(w, h, u, v).unwrap();
        let a = warp_bilinear(&img, &flow, scale).unwrap();
        let b = oracle::oracle_warp(&img, &flow, scale);
        prop_assert!(max_diff(a.data(), b.data()) <= 1e-5);
    }

    #[test]
    fn zero_flow_warp_is_identity(img in image_strategy(16)) {
        let flow = FlowField::zeros(img.width(), img.height());
        prop_assert_eq!(warp_bilinear(&img, &flow, 0.5).unwrap(), img);
    }

    #[test]
    fn conv_matches_oracle(
        x in tensor_strategy(3, 12),
        k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..=2,
        wseed in prop::collection::vec(-1.0f32..1.0, 4 * 3 * 9 + 4),
    ) {
        let [_, _, h, w] = x.shape();
        prop_assume!(h + 2 * (k / 2) >= k && w + 2 * (k / 2) >= k);
        let weight = &wseed[..4 * 3 * k * k];
        let bias = &wseed[wseed.len() - 4..];
        let a = conv2d(&x, weight, bias, 4, k, stride, k / 2).unwrap();
        let b = oracle::oracle_conv2d(&x, weight, bias, 4, k, stride, k / 2);
        prop_assert_eq!(a.shape(), b.shape());
        prop_assert!(a.max_abs_diff(&b) <= 1e-5);
    }

    #[test]
    fn conv_transpose_matches_oracle(x in tensor_strategy(3, 10), p in prop::collection::vec(-1.0f32..1.0, 3 * 2 * 4 + 2)) {
        let (w, b) = p.split_at(3 * 2 * 4);
        let a = conv_transpose2x2(&x, w, b, 2).unwrap();
        prop_assert!(a.max_abs_diff(&oracle::oracle_conv_transpose2x2(&x, w, b, 2)) <= 1e-5);
    }

    /// With power-of-two scales every partial sum is exactly representable, so
    /// the integer path and the fake-quantized float path agree bit for bit.
    #[test]
    fn int8_conv_equals_fake_quant_float(
        x in tensor_strategy(4, 10),
        w in prop::collection::vec(-0.5f32..0.5, 3 * 4 * 9),
        bias in prop::collection::vec(-2000i32..2000, 3),
        e_out in 2i32..7,
        stride in 1usize..=2,
    ) {
        let (s_x, s_w, s_out) = (2f32.powi(-7), 2f32.powi(-8), 2f32.powi(-e_out));
        let qx = QTensor::quantize(&x, s_x).unwrap();
        let qw = QWeights::quantize(&w, 3, 4, 3, vec![s_w]).unwrap();
        let y = conv2d_int8(&qx, &qw, &bias, stride, 1, s_out).unwrap();

        let wf: Vec<f32> = qw.data.iter().map(|&q| q as f32 * s_w).collect();
        let bf: Vec<f32> = bias.iter().map(|&b| b as f32 * s_x * s_w).collect();
        let float = conv2d(&qx.dequantize(), &wf, &bf, 3, 3, stride, 1).unwrap();
        let fq: Vec<f32> = float.data().iter().map(|&v| fake_quant_value(v, s_out)).collect();
        let deq = y.dequantize();
        prop_assert_eq!(deq.data(), &fq[..]);

        let o = oracle::oracle_conv2d_int8(&qx.data, qx.shape, s_x, &qw.data, &[s_w], &bias, 3, 3, stride, 1, s_out);
        prop_assert_eq!(&y.data, &o);
    }

    #[test]
    fn production_flow_has_less_variation_than_zoh(
        cols in 1usize..6,
        rows in 1usize..6,
        block in prop::sample::select(vec![4u32, 8, 16]),
        vecs in prop::collection::vec((-12.0f32..12.0, -12.0f32..12.0), 36),
    ) {
        let blocks = block_field(cols, rows, block, &vecs);
        let (w, h) = (cols * block as usize, rows * block as usize);
        let zoh = zoh_densify(&blocks, w, h);
        let smooth = build_flow(&blocks, w, h, &SmoothingProfile::production()).unwrap();
        let constant = zoh.u().iter().all(|&u| u == zoh.u()[0]) && zoh.v().iter().all(|&v| v == zoh.v()[0]);
        if constant {
            prop_assert!(smooth.total_variation() <= 1e-3);
        } else {
            prop_assert!(smooth.total_variation() < zoh.total_variation(),
                "{} !< {}", smooth.total_variation(), zoh.total_variation());
        }
    }

    #[test]
    fn percentile_matches_oracle(mut v in prop::collection::vec(-100.0f32..100.0, 1..400), p in 0.01f64..=100.0) {
        let expect = oracle::oracle_percentile(&v, p);
        let got = percentile(&mut v, p) as f64;
        prop_assert!((got - expect).abs() <= 1e-4 * expect.abs().max(1.0));
    }
}
