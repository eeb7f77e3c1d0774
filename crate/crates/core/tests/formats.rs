use proptest::prelude::*;

use spa_denoise::io::{
    checkpoint_from_bytes, checkpoint_to_bytes, decode_netpbm, encode_netpbm, parse_run_config,
    tensor_from_bytes, tensor_to_bytes, AnyTensor,
};
use spa_denoise::network::{ModelConfig, ModelWeights};
use spa_denoise::{Error, Tensor};

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..4)
}

fn bits64(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f64_tensor_roundtrip_is_bitwise(shape in shape_strategy(), seed in any::<u64>()) {
        // Raw bit patterns, so NaN payloads, infinities and subnormals are covered.
        let mut s = seed;
        let t = Tensor::<f64>::from_fn(&shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f64::from_bits(s)
        });
        let bytes = tensor_to_bytes(&t).unwrap();
        let AnyTensor::F64(back) = tensor_from_bytes(&bytes).unwrap() else { panic!("dtype") };
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(bits64(&back), bits64(&t));
        prop_assert_eq!(tensor_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn f32_tensor_roundtrip_is_bitwise(shape in shape_strategy(), seed in any::<u32>()) {
        let mut s = seed;
        let t = Tensor::<f32>::from_fn(&shape, |_| {
            s = s.wrapping_mul(1664525).wrapping_add(1013904223);
            f32::from_bits(s)
        });
        let bytes = tensor_to_bytes(&t).unwrap();
        let AnyTensor::F32(back) = tensor_from_bytes(&bytes).unwrap() else { panic!("dtype") };
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn image_roundtrip_within_quantization(c in prop::sample::select(vec![1usize, 3]), h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let mut s = seed;
        let img = Tensor::<f64>::from_fn(&[c, h, w], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        let back = decode_netpbm(&encode_netpbm(&img).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-12);
        // Already-quantized images survive exactly.
        prop_assert_eq!(decode_netpbm(&encode_netpbm(&back).unwrap()).unwrap(), back);
    }

    #[test]
    fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = tensor_from_bytes(&bytes);
        let _ = decode_netpbm(&bytes);
        let _ = checkpoint_from_bytes::<f64>(&bytes);
        let _ = parse_run_config(&String::from_utf8_lossy(&bytes));
    }

    #[test]
    fn corrupted_tensor_files_report_positions(cut in 0usize..40, flip in 0usize..40) {
        let t = Tensor::<f64>::from_fn(&[2, 2], |i| i as f64);
        let good = tensor_to_bytes(&t).unwrap();
        let truncated = &good[..cut.min(good.len() - 1)];
        let is_parse = matches!(tensor_from_bytes(truncated), Err(Error::Parse { .. }));
        prop_assert!(is_parse);
        let mut damaged = good.clone();
        let at = flip % 7;
        damaged[at] ^= 0xFF;
        match tensor_from_bytes(&damaged) {
            Err(Error::Parse { offset, .. }) => prop_assert!(offset <= damaged.len()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
            Ok(_) => prop_assert!(false, "header damage at {at} was accepted"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_roundtrip_is_bitwise(seed in any::<u64>(), level in 0usize..3, depth in 1usize..3) {
        let config = ModelConfig {
            input_channels: 1,
            base_channels: 4,
            spa_level: level,
            eam_counts: vec![1; depth],
            reduction: 2,
        };
        let w = ModelWeights::<f64>::init(&config, seed).unwrap();
        let bytes = checkpoint_to_bytes(&w).unwrap();
        let back: ModelWeights<f64> = checkpoint_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &w);
        prop_assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
    }
}
