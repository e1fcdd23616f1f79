//! Property tests for the invariants every module promises.

use proptest::prelude::*;

use stylepass::backbones::{DepthPredictor, Encoder, LinearEncoder, STYLE_LAYERS};
use stylepass::datasets::Dataset;
use stylepass::imaging::{
    dog_response, gram_matrix, parse_flo, warp_with_flow, ColourSpace, FlowField, ImageTensor,
};
use stylepass::metrics::{
    perceptual_distance, sifid, ssim, warping_error, SequenceMetrics, SequenceMetricsReport,
    SequenceResult,
};
use stylepass::network::StyleModel;
use stylepass::objective::{
    content_loss, depth_loss, dog_loss, style_loss, total_loss, LossComponents, LossWeights,
};
use stylepass::render_sim::{
    render_sequence, InjectionMode, PostEffect, PostEffectStack, SceneSpec,
};
use stylepass::tensor::{Graph, Tensor};

fn image(c: usize, h: usize, w: usize, cs: ColourSpace) -> impl Strategy<Value = ImageTensor> {
    proptest::collection::vec(0.0f64..=1.0, c * h * w)
        .prop_map(move |d| ImageTensor::new(c, h, w, d, cs).unwrap())
}

fn rgb(h: usize, w: usize) -> impl Strategy<Value = ImageTensor> {
    image(3, h, w, ColourSpace::Rgb)
}

fn rgb_any(max: usize) -> impl Strategy<Value = ImageTensor> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| rgb(h, w))
}

fn pair(h: usize, w: usize) -> impl Strategy<Value = (ImageTensor, ImageTensor)> {
    (rgb(h, w), rgb(h, w))
}

fn features() -> impl Strategy<Value = ImageTensor> {
    (1usize..6, 1usize..7, 1usize..7).prop_flat_map(|(c, h, w)| {
        proptest::collection::vec(-2.0f64..2.0, c * h * w)
            .prop_map(move |d| ImageTensor::new(c, h, w, d, ColourSpace::Feature).unwrap())
    })
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

fn permute(img: &ImageTensor, perm: &[usize]) -> ImageTensor {
    let (c, h, w) = img.dims();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let p = img.plane(ch);
        data.extend(perm.iter().map(|&i| p[i]));
    }
    ImageTensor::new(c, h, w, data, img.colour_space()).unwrap()
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_symmetric_psd(f in features()) {
        let g = gram_matrix(&f);
        let c = g.channels();
        for i in 0..c {
            for j in 0..c {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let eig = nalgebra::SymmetricEigen::new(g.to_matrix()).eigenvalues;
        let scale = g.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        prop_assert!(eig.iter().all(|&e| e >= -1e-12 * scale), "{:?}", eig);
    }

    #[test]
    fn dog_of_a_constant_is_zero(v in 0.0f64..=1.0, h in 1usize..20, w in 1usize..20) {
        let img = ImageTensor::filled(3, h, w, v, ColourSpace::Rgb).unwrap();
        let d = dog_response(&img).unwrap();
        prop_assert!(d.data().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn zero_flow_warp_is_identity(img in rgb_any(12)) {
        let flow = FlowField::zeros(img.height(), img.width());
        prop_assert_eq!(warp_with_flow(&img, &flow).unwrap(), img);
    }

    #[test]
    fn integer_warp_shifts_interior(img in rgb(10, 12), dx in -2i32..=2, dy in -2i32..=2) {
        let flow = FlowField::uniform(10, 12, dx as f64, dy as f64);
        let out = warp_with_flow(&img, &flow).unwrap();
        for c in 0..3 {
            for y in 2..8 {
                for x in 2..10 {
                    let sy = (y as i32 + dy) as usize;
                    let sx = (x as i32 + dx) as usize;
                    prop_assert!((out.get(c, y, x) - img.get(c, sy, sx)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn warping_error_is_zero_exactly_when_successor_matches(
        img in rgb(8, 8),
        dx in -1i32..=1,
        p in 0usize..64,
        bump in 0.05f64..0.5,
    ) {
        let flow = FlowField::uniform(8, 8, dx as f64, 0.0);
        let next = warp_with_flow(&img, &flow).unwrap();
        let e = warping_error(&[img.clone(), next.clone()], std::slice::from_ref(&flow)).unwrap();
        prop_assert_eq!(e.masked, 0.0);
        let mut data = next.data().to_vec();
        data[p] = if data[p] > 0.5 { data[p] - bump } else { data[p] + bump };
        let moved = ImageTensor::new(3, 8, 8, data, ColourSpace::Rgb).unwrap();
        let e = warping_error(&[img, moved], &[flow]).unwrap();
        prop_assert!(e.masked > 0.0);
    }

    #[test]
    fn flo_round_trip(
        h in 1usize..6,
        w in 1usize..6,
        seed in proptest::collection::vec(-50.0f32..50.0, 72),
    ) {
        let n = h * w;
        let dx: Vec<f64> = seed[..n].iter().map(|&v| v as f64).collect();
        let dy: Vec<f64> = seed[36..36 + n].iter().map(|&v| v as f64).collect();
        let flow = FlowField::new(h, w, dx, dy, None).unwrap();
        prop_assert_eq!(parse_flo(&flow.to_flo_bytes()).unwrap(), flow);
    }

    #[test]
    fn dog_is_deterministic(img in rgb_any(16)) {
        prop_assert_eq!(dog_response(&img).unwrap(), dog_response(&img).unwrap());
    }

    #[test]
    fn channel_mean_depth_spans_unit_range(img in rgb(6, 7)) {
        let d = DepthPredictor::ChannelMean { normalise: true }.predict_depth(&img).unwrap();
        let lo = d.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let means: Vec<f64> = (0..42)
            .map(|p| (0..3).map(|c| img.plane(c)[p]).sum::<f64>())
            .collect();
        let flat = means.iter().all(|m| (m - means[0]).abs() < 1e-12);
        if flat {
            prop_assert!(d.data().iter().all(|v| *v == 0.5));
        } else {
            prop_assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12, "{lo} {hi}");
        }
    }

    #[test]
    fn total_loss_is_linear_in_each_weight(
        terms in proptest::array::uniform4(0.0f64..10.0),
        weights in proptest::array::uniform4(0.0f64..1e10),
        which in 0usize..4,
    ) {
        let c = LossComponents {
            content: terms[0],
            style: terms[1],
            depth: terms[2],
            dog: terms[3],
            style_layers: Vec::new(),
        };
        let w = LossWeights { content: weights[0], style: weights[1], depth: weights[2], dog: weights[3] };
        let mut doubled = w;
        match which {
            0 => doubled.content *= 2.0,
            1 => doubled.style *= 2.0,
            2 => doubled.depth *= 2.0,
            _ => doubled.dog *= 2.0,
        }
        let a = total_loss(&w, &c).unwrap();
        let b = total_loss(&doubled, &c).unwrap();
        let pick = |r: &stylepass::objective::LossReport| [r.content, r.style, r.depth, r.dog];
        for i in 0..4 {
            let want = if i == which { 2.0 * pick(&a)[i] } else { pick(&a)[i] };
            prop_assert_eq!(pick(&b)[i], want);
        }
        let sum: f64 = pick(&a).iter().sum();
        prop_assert!(rel_close(a.total, sum, 1e-6) || sum == 0.0);
    }

    #[test]
    fn epoch_visits_every_item_once(
        photos in 1usize..6,
        synthetic in 0usize..6,
        seed in any::<u64>(),
        epoch in 0u64..5,
    ) {
        let img = |i: usize| ImageTensor::filled(3, 4, 4, i as f64 / 16.0, ColourSpace::Rgb).unwrap();
        let ds = Dataset::from_images(
            (0..photos).map(img).collect(),
            (0..synthetic).map(|i| img(8 + i)).collect(),
            (4, 4),
            seed,
        ).unwrap();
        let mut order = ds.epoch_order(epoch);
        order.sort_unstable();
        prop_assert_eq!(order, (0..photos + synthetic).collect::<Vec<_>>());
    }

    #[test]
    fn report_json_round_trips(
        values in proptest::collection::vec(proptest::array::uniform7(0.0f64..100.0), 1..4),
    ) {
        let results: Vec<SequenceResult> = values
            .iter()
            .enumerate()
            .map(|(i, v)| SequenceResult {
                sequence: format!("seq{i}"),
                style: format!("style{}", i % 2),
                frames: 3,
                flow_source: "analytic".into(),
                metrics: SequenceMetrics {
                    warping_error: v[0],
                    warping_error_unmasked: v[1],
                    lpips_error: v[2],
                    ssim: v[3] / 100.0,
                    sifid: v[4],
                    content_err: v[5],
                    style_err: v[6],
                },
                traces: Default::default(),
            })
            .collect();
        let r = SequenceMetricsReport::aggregate("x", &Encoder::tiny(0), results).unwrap();
        prop_assert_eq!(SequenceMetricsReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_non_negative_and_zero_at_identity((x, yhat) in pair(16, 16)) {
        let enc = Encoder::tiny(0);
        let depth = DepthPredictor::tiny(0);
        for v in [
            content_loss(&enc, &x, &yhat).unwrap(),
            style_loss(&enc, &yhat, &x).unwrap(),
            depth_loss(&depth, &x, &yhat).unwrap(),
            dog_loss(&x, &yhat).unwrap(),
        ] {
            prop_assert!(v >= 0.0);
        }
        prop_assert_eq!(content_loss(&enc, &x, &x).unwrap(), 0.0);
        prop_assert_eq!(style_loss(&enc, &x, &x).unwrap(), 0.0);
        prop_assert_eq!(depth_loss(&depth, &x, &x).unwrap(), 0.0);
        prop_assert_eq!(dog_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn gram_ignores_spatial_arrangement(img in rgb(8, 8), perm in permutation(64)) {
        // Features of the tiny encoder with their positions shuffled.
        let feats = Encoder::tiny(0).encode_features(&img).unwrap();
        let f = &feats["relu1_2"];
        let (_, h, w) = f.dims();
        let perm: Vec<usize> = perm.into_iter().filter(|&i| i < h * w).collect();
        let a = gram_matrix(f);
        let b = gram_matrix(&permute(f, &perm));
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn style_loss_is_permutation_invariant(
        (yhat, y) in pair(6, 6),
        perm in permutation(36),
    ) {
        // A pointwise encoder turns a pixel shuffle into a feature shuffle.
        let enc = Encoder::Linear(LinearEncoder::new(
            2,
            vec![0.5, -0.25, 1.0, 0.3, 0.7, -0.4],
        ));
        let a = style_loss(&enc, &yhat, &y).unwrap();
        let b = style_loss(&enc, &permute(&yhat, &perm), &y).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12), "{a} {b}");
    }

    #[test]
    fn losses_are_resolution_stable_on_constant_inputs(
        a in proptest::array::uniform3(0.0f64..=1.0),
        b in proptest::array::uniform3(0.0f64..=1.0),
    ) {
        let at = |v: [f64; 3], s: usize| {
            ImageTensor::from_fn(3, s, s, ColourSpace::Rgb, |c, _, _| v[c]).unwrap()
        };
        let enc = Encoder::tiny(0);
        let depth = DepthPredictor::tiny(0);
        let eval = |s: usize| {
            let (x, yhat) = (at(a, s), at(b, s));
            [
                content_loss(&enc, &x, &yhat).unwrap(),
                style_loss(&enc, &yhat, &x).unwrap(),
                depth_loss(&depth, &x, &yhat).unwrap(),
                dog_loss(&x, &yhat).unwrap(),
            ]
        };
        let (small, large) = (eval(16), eval(32));
        for (s, l) in small.iter().zip(&large) {
            prop_assert!((s - l).abs() < 1e-6 * s.abs().max(1.0), "{s} {l}");
        }
    }

    #[test]
    fn symmetric_metrics_are_order_invariant((a, b) in pair(16, 16)) {
        let enc = Encoder::tiny(0);
        let (x, y) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&x));
        prop_assert_eq!(sifid(&enc, &a, &b).unwrap(), sifid(&enc, &b, &a).unwrap());
        let (p, q) = (
            perceptual_distance(&enc, &a, &b).unwrap(),
            perceptual_distance(&enc, &b, &a).unwrap(),
        );
        prop_assert!((p - q).abs() < 1e-12 && p >= 0.0);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn instance_norm_standardises_each_channel(
        data in proptest::collection::vec(-3.0f64..3.0, 2 * 3 * 36),
    ) {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![2, 3, 6, 6], data.clone()));
        let gamma = g.constant(Tensor::full(vec![3], 1.0));
        let beta = g.constant(Tensor::zeros(vec![3]));
        let y = x.instance_norm(gamma, beta, 1e-5).to_tensor();
        for plane in 0..6 {
            let xs = &data[plane * 36..(plane + 1) * 36];
            let xm = xs.iter().sum::<f64>() / 36.0;
            let xv = xs.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / 36.0;
            prop_assume!(xv > 0.5);
            let ys = &y.data()[plane * 36..(plane + 1) * 36];
            let m = ys.iter().sum::<f64>() / 36.0;
            let v = ys.iter().map(|u| (u - m).powi(2)).sum::<f64>() / 36.0;
            prop_assert!(m.abs() < 1e-5, "mean {m}");
            prop_assert!((v - 1.0).abs() < 1e-4, "variance {v}");
        }
    }

    #[test]
    fn encoder_tap_shapes_follow_the_table(hm in 1usize..5, wm in 1usize..5) {
        let (h, w) = (8 * hm, 8 * wm);
        let enc = Encoder::tiny(3);
        let img = ImageTensor::filled(3, h, w, 0.5, ColourSpace::Rgb).unwrap();
        let feats = enc.encode_features(&img).unwrap();
        for layer in STYLE_LAYERS {
            prop_assert_eq!(feats[layer].dims(), enc.tap_shape(layer, h, w).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn stylise_is_deterministic(img in rgb(8, 8), seed in 0u64..1000) {
        let m = StyleModel::<f32>::build(seed);
        let a = m.stylise(&img).unwrap();
        let b = m.stylise(&img).unwrap();
        prop_assert_eq!(a.raw, b.raw);
        prop_assert_eq!(a.display, b.display);
    }

    #[test]
    fn zero_model_outputs_zero(img in rgb(8, 12)) {
        let m = StyleModel::<f32>::build(0).zeroed();
        prop_assert!(m.stylise(&img).unwrap().raw.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_translation_consistent_at_stride_granularity(
        band in proptest::collection::vec(0.0f64..=1.0, 3 * 32 * 16),
        background in 0.0f64..=1.0,
        seed in 0u64..1000,
    ) {
        // A textured band on a flat background, far enough from the left and
        // right edges that the band's receptive field never reaches them.
        // Both crops then hold the same feature values at every layer, so
        // instance normalisation sees identical statistics.
        let wide = ImageTensor::from_fn(3, 32, 136, ColourSpace::Rgb, |c, y, x| {
            if (64..80).contains(&x) {
                band[(c * 32 + y) * 16 + x - 64]
            } else {
                background
            }
        }).unwrap();
        let crop = |x0: usize| {
            ImageTensor::from_fn(3, 32, 128, ColourSpace::Rgb, |c, y, x| wide.get(c, y, x + x0))
                .unwrap()
        };
        let m = StyleModel::<f32>::build(seed);
        let a = m.stylise(&crop(0)).unwrap().raw;
        let b = m.stylise(&crop(4)).unwrap().raw;
        let mut worst = 0.0f32;
        for c in 0..3 {
            for y in 0..32 {
                for x in 8..116 {
                    let va = a.data()[(c * 32 + y) * 128 + x + 4];
                    let vb = b.data()[(c * 32 + y) * 128 + x];
                    worst = worst.max((va - vb).abs());
                }
            }
        }
        prop_assert!(worst < 1e-3, "max interior deviation {worst}");
    }

    #[test]
    fn mode_none_ignores_the_model(seed in 0u64..1000, model_seed in 0u64..1000) {
        let scene = SceneSpec::random(seed, 16, 12, 3);
        let stack = PostEffectStack::new(vec![PostEffect::DepthOfField {
            focal_depth: 0.5,
            blur_scale: 4.0,
            max_sigma: 3.0,
        }]);
        let m = StyleModel::<f32>::build(model_seed);
        let with = render_sequence(&scene, &stack, InjectionMode::None, Some(&m)).unwrap();
        let without = render_sequence(&scene, &stack, InjectionMode::None, None).unwrap();
        prop_assert_eq!(with.frames, without.frames);
    }

    #[test]
    fn scene_json_round_trips(seed in any::<u64>()) {
        let s = SceneSpec::random(seed, 32, 24, 4);
        prop_assert_eq!(SceneSpec::from_json(&s.to_json().unwrap()).unwrap(), s);
    }
}
