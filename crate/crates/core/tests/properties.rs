mod common;

use common::{oracle_frac_bits, oracle_quantize, random_dag, random_model, random_inputs, simulate_live_ranges, ModelOpts};
use nnc_core::allocator::plan_buffers;
use nnc_core::fxp::{dequantize, quantize_bits, requantize, shift_right_floor, wrap};
use nnc_core::interpreter::run_float;
use nnc_core::ir::{infer_shapes, topo_order};
use nnc_core::quantizer::frac_bits_for;
use nnc_core::transforms::{fold_zero_padding, fuse_relu};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        -1.0f64..1.0,
        (-40i32..20, any::<bool>()).prop_map(|(e, neg)| if neg { -(2f64.powi(e)) } else { 2f64.powi(e) }),
    ]
}

fn width() -> impl Strategy<Value = u32> {
    prop_oneof![Just(8u32), Just(9), Just(16)]
}

proptest! {
    #[test]
    fn quantize_matches_exact_oracle(x in finite(), w in width(), n in -8i32..24) {
        prop_assert_eq!(quantize_bits(x, n, w), oracle_quantize(x, w, n));
    }

    #[test]
    fn quantize_is_monotone(a in finite(), b in finite(), w in width(), n in -8i32..24) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize_bits(lo, n, w) <= quantize_bits(hi, n, w));
    }

    #[test]
    fn quantize_error_is_below_one_step(x in -0.99f64..0.99, w in width()) {
        let n = w as i32 - 1;
        let q = dequantize(quantize_bits(x, n, w), n);
        prop_assert!(q <= x && x - q < dequantize(1, n));
    }

    #[test]
    fn frac_bits_match_oracle(values in prop::collection::vec(finite(), 1..16), w in width()) {
        let expected = oracle_frac_bits(&values, w);
        prop_assert_eq!(frac_bits_for(&values, w).ok(), expected);
        if let Some(n) = expected {
            for &v in &values {
                let q = quantize_bits(v, n, w);
                prop_assert!(q > -(1 << (w - 1)) - 1 && q < 1 << (w - 1));
            }
        }
    }

    #[test]
    fn right_shifts_compose(v in any::<i32>(), a in 0i32..12, b in 0i32..12) {
        let v = v as i64;
        let once = requantize(v, a + b, 0, 32);
        let twice = requantize(requantize(v, a + b, b, 32), b, 0, 32);
        prop_assert_eq!(once, twice);
        prop_assert_eq!(shift_right_floor(v, (a + b) as u32), v.div_euclid(1 << (a + b)));
    }

    #[test]
    fn requantize_saturates(v in any::<i32>(), from in 0i32..20, to in 0i32..20, w in width()) {
        let r = requantize(v as i64, from, to, w);
        prop_assert!(r >= -(1 << (w - 1)) && r < 1 << (w - 1));
    }

    #[test]
    fn wrap_is_modular(v in any::<i64>(), bits in prop_oneof![Just(16u32), Just(32)]) {
        let r = wrap(v, bits);
        prop_assert!(r >= -(1i64 << (bits - 1)) && r < 1i64 << (bits - 1));
        prop_assert_eq!((v as i128 - r as i128).rem_euclid(1i128 << bits), 0);
    }

    #[test]
    fn buffer_plans_never_clobber_live_values(seed in any::<u64>()) {
        let g = random_dag(seed);
        let shapes = infer_shapes(&g).unwrap();
        let plan = plan_buffers(&g, &shapes).unwrap();
        let order = topo_order(&g).unwrap();
        prop_assert_eq!(simulate_live_ranges(&g, &order, &plan), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn structural_passes_preserve_float_outputs(seed in any::<u64>()) {
        let opts = ModelOpts { residual: seed % 2 == 0, padded: true, strided: true, extras: false };
        let g = random_model(seed, opts);
        let t = fuse_relu(&fold_zero_padding(&g).unwrap());
        for x in random_inputs(seed, g.input_shape, 3) {
            let a = run_float(&g, &x).unwrap();
            let b = run_float(&t, &x).unwrap();
            prop_assert_eq!(a.data, b.data);
        }
    }
}
