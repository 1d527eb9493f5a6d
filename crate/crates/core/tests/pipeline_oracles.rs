mod common;

use evalscope::image::{convert_color_layout, decode_image, encode_jpeg, DecodeOptions, DecoderRegistry, ImageBuffer, PixelData};
use evalscope::manifest::{ColorLayout, DataLayout, DctMethod, ElementType, OrderPolicy};
use evalscope::pipeline::{center_crop, normalize_and_cast, resize_bilinear, NormalizationParams};
use evalscope::tensor::{to_layout, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_f32_image(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> ImageBuffer {
    let data: Vec<f32> = (0..h * w * c).map(|_| rng.random_range(-300.0f32..300.0)).collect();
    ImageBuffer::new(w, h, c, ColorLayout::Rgb, PixelData::F32(data)).unwrap()
}

#[test]
fn resize_matches_oracle_on_random_small_images() {
    let mut rng = common::rng(7);
    for _ in 0..1000 {
        let (h, w, c) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=3));
        let (oh, ow) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let img = random_f32_image(&mut rng, h, w, c);
        let got = resize_bilinear(&img, oh, ow, false);
        let expected = common::resize_oracle(img.as_f32().unwrap(), h, w, c, oh, ow);
        let got = got.as_f32().unwrap();
        assert!(
            got.iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits()),
            "{h}x{w}x{c} -> {oh}x{ow}"
        );
    }
}

#[test]
fn resize_to_same_size_is_identity() {
    let mut rng = common::rng(8);
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let img = random_f32_image(&mut rng, h, w, 3);
        assert_eq!(resize_bilinear(&img, h, w, false), img);
    }
}

#[test]
fn center_crop_matches_reference_windows() {
    for (pct, tenths) in [(50.0, 500), (87.5, 875), (100.0, 1000)] {
        for h in 1..=32 {
            for w in 1..=32 {
                let data: Vec<u8> = (0..h * w).map(|i| (i % 251) as u8).collect();
                let img = ImageBuffer::new(w, h, 1, ColorLayout::Rgb, PixelData::U8(data.clone())).unwrap();
                match (center_crop(&img, pct), common::crop_oracle(h, w, tenths)) {
                    (Ok(got), Some((top, left, ch, cw))) => {
                        assert_eq!((got.height, got.width), (ch, cw), "{h}x{w} at {pct}");
                        let expected: Vec<u8> = (top..top + ch)
                            .flat_map(|y| (left..left + cw).map(move |x| (y, x)))
                            .map(|(y, x)| data[y * w + x])
                            .collect();
                        assert_eq!(got.as_u8().unwrap(), &expected[..], "{h}x{w} at {pct}");
                    }
                    (Err(_), None) => {}
                    (got, want) => panic!("{h}x{w} at {pct}: got {got:?}, oracle {want:?}"),
                }
            }
        }
    }
}

#[test]
fn layout_and_color_conversions_are_involutions() {
    let mut rng = common::rng(9);
    for _ in 0..1000 {
        let (h, w, c) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=4));
        let data: Vec<f32> = (0..h * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let t = Tensor::new(vec![1, h, w, c], DataLayout::Nhwc, ElementType::Float32, data).unwrap();
        let there = to_layout(&t, DataLayout::Nchw).unwrap();
        assert_eq!(there.dims, vec![1, c, h, w]);
        assert_eq!(to_layout(&there, DataLayout::Nhwc).unwrap(), t);

        let bytes: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();
        let img = ImageBuffer::from_u8(w, h, ColorLayout::Rgb, bytes).unwrap();
        let bgr = convert_color_layout(&img, ColorLayout::Bgr);
        assert_eq!(bgr.color_layout, ColorLayout::Bgr);
        assert_eq!(convert_color_layout(&bgr, ColorLayout::Rgb), img);
    }
}

#[test]
fn normalization_orders_match_oracle_exhaustively() {
    let bytes: Vec<u8> = (0..=255).collect();
    let img = ImageBuffer::new(256, 1, 1, ColorLayout::Rgb, PixelData::U8(bytes)).unwrap();
    let run = |order_policy| {
        normalize_and_cast(
            &img,
            &NormalizationParams {
                mean: vec![127.5],
                rescale: 127.5,
                order_policy,
            },
        )
        .unwrap()
        .data
        .to_f32()
    };
    let a = run(OrderPolicy::ConvertThenNormalize);
    let b = run(OrderPolicy::NormalizeInBytesThenConvert);
    let mut max = (0.0f32, 0u8);
    for x in 0..=255u8 {
        let (oa, ob) = common::order_policies(x);
        assert_eq!(a[x as usize].to_bits(), oa.to_bits(), "convert-first at {x}");
        assert_eq!(b[x as usize], ob, "bytes-first at {x}");
        let d = (oa - ob).abs();
        if d > max.0 {
            max = (d, x);
        }
    }
    assert_eq!(max, (common::ORDER_MAX_DIFF, common::ORDER_MAX_AT));
}

/// Two JPEG decoders agree closely in smooth regions but not exactly, and
/// the integer-fast conversion differs from the accurate one.
#[test]
fn jpeg_decoders_differ_slightly_at_edges() {
    let mut data = Vec::new();
    for y in 0..16 {
        for x in 0..16 {
            // a hard red/blue edge through the middle
            data.extend_from_slice(if x + y < 16 { &[230, 20, 30] } else { &[20, 40, 220] });
        }
    }
    let img = ImageBuffer::from_u8(16, 16, ColorLayout::Rgb, data).unwrap();
    let jpeg = encode_jpeg(&img, 80);
    let reg = DecoderRegistry::default();
    let decode = |name: &str, dct| {
        let opts = DecodeOptions {
            jpeg_decoder: Some(name),
            dct_method: dct,
            ..DecodeOptions::default()
        };
        decode_image(&jpeg, &opts, &reg).unwrap().0
    };
    let a = decode("zune-jpeg", DctMethod::IntegerAccurate);
    let fast = decode("jpeg-decoder-fixed", DctMethod::IntegerFast);
    let accurate = decode("jpeg-decoder-fixed", DctMethod::IntegerAccurate);
    let max_diff = |x: &ImageBuffer, y: &ImageBuffer| {
        x.as_u8()
            .unwrap()
            .iter()
            .zip(y.as_u8().unwrap())
            .map(|(p, q)| p.abs_diff(*q))
            .max()
            .unwrap()
    };
    assert!(max_diff(&a, &accurate) <= 8, "decoders agree to a few levels");
    assert!(max_diff(&a, &fast) <= 8);
    assert!(a != fast, "integer-fast output is not identical");
}

proptest! {
    #[test]
    fn crop_never_exceeds_source(h in 1usize..64, w in 1usize..64, pct in 0.1f64..=100.0) {
        let img = ImageBuffer::filled(w, h, [1, 2, 3]);
        if let Ok(c) = center_crop(&img, pct) {
            prop_assert!(c.height <= h && c.width <= w && c.height > 0 && c.width > 0);
            prop_assert_eq!(c.as_u8().unwrap()[..3].to_vec(), vec![1, 2, 3]);
        }
    }

    #[test]
    fn resize_of_constant_image_is_constant(h in 1usize..12, w in 1usize..12, oh in 1usize..12, ow in 1usize..12, v in 0u8..=255) {
        let img = ImageBuffer::filled(w, h, [v, v, v]);
        let out = resize_bilinear(&img, oh, ow, false);
        prop_assert!(out.as_u8().unwrap().iter().all(|&x| x == v));
    }

    #[test]
    fn keep_aspect_ratio_hits_requested_size(h in 1usize..40, w in 1usize..40, oh in 1usize..20, ow in 1usize..20) {
        let img = ImageBuffer::filled(w, h, [9, 9, 9]);
        let out = resize_bilinear(&img, oh, ow, true);
        prop_assert_eq!((out.height, out.width), (oh, ow));
    }
}
