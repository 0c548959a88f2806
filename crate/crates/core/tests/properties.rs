use mapft_core::adapters::{init_adapter, AdapterKind, AdapterState, FrozenBase, InitOptions, KindGrads, ParamRole};
use mapft_core::linalg::{frob_norm, gaussian_init, lowrank_frob_norm, Matrix, Rng};
use mapft_core::optim::{Hyper, OptimizerKind, OptimizerState, ParamSlot, Schedule};
use proptest::prelude::*;

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs() / b.max_abs().max(1e-300)
}

fn map_state(seed: u64, n: usize, m: usize, r: usize) -> AdapterState {
    let mut rng = Rng::new(seed);
    let base = FrozenBase::new(gaussian_init(&mut rng, n, m, 1.0)).unwrap();
    let opts = InitOptions {
        rank: r,
        ..InitOptions::default()
    };
    let mut st = init_adapter(AdapterKind::Map, &mut rng, base, &opts).unwrap();
    st.factors.b = gaussian_init(&mut rng, r, m, 1.0);
    st
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frob_norm_is_absolutely_homogeneous(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12, c in -1e3f64..1e3) {
        let m = gaussian_init(&mut Rng::new(seed), rows, cols, 1.0);
        let lhs = frob_norm(&m.scale(c));
        let rhs = c.abs() * frob_norm(&m);
        prop_assert!((lhs - rhs).abs() <= 8.0 * f64::EPSILON * rhs.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn lowrank_norm_matches_dense(seed in any::<u64>(), n in 1usize..30, m in 1usize..30, r in 1usize..6) {
        let mut rng = Rng::new(seed);
        let a = gaussian_init(&mut rng, n, r, 1.0);
        let b = gaussian_init(&mut rng, r, m, 1.0);
        let dense = frob_norm(&a.matmul(&b).unwrap());
        prop_assert!((lowrank_frob_norm(&a, &b).unwrap() - dense).abs() <= 1e-10 * dense);
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), p in 1usize..10, q in 1usize..10, r in 1usize..10, s in 1usize..10) {
        let mut rng = Rng::new(seed);
        let a = gaussian_init(&mut rng, p, q, 1.0);
        let b = gaussian_init(&mut rng, q, r, 1.0);
        let c = gaussian_init(&mut rng, r, s, 1.0);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.sub(&right).unwrap().max_abs() <= 1e-10 * left.max_abs().max(1.0));
    }

    #[test]
    fn rng_state_restores_the_stream(seed in any::<u64>(), skip in 0usize..50) {
        let mut rng = Rng::new(seed);
        for _ in 0..skip {
            rng.normal();
        }
        let mut restored = Rng::from_state(rng.state());
        for _ in 0..20 {
            prop_assert_eq!(rng.next_u64(), restored.next_u64());
            prop_assert_eq!(rng.normal().to_bits(), restored.normal().to_bits());
        }
    }

    #[test]
    fn map_forward_and_scalar_grads_ignore_factor_scale(seed in any::<u64>(), c in 1e-3f64..1e3, on_a in any::<bool>()) {
        let st = map_state(seed, 7, 5, 2);
        let mut rng = Rng::stream(seed, 1);
        let x = gaussian_init(&mut rng, 3, 7, 1.0);
        let g = gaussian_init(&mut rng, 3, 5, 1.0);
        let mut scaled = st.clone();
        if on_a {
            scaled.factors.a.scale_in_place(c);
        } else {
            scaled.factors.b.scale_in_place(c);
        }
        let (y0, c0) = st.forward(&x, None).unwrap();
        let (y1, c1) = scaled.forward(&x, None).unwrap();
        prop_assert!(rel(&y1, &y0) <= 1e-12);
        let (g0, g1) = (st.backward(&g, &c0).unwrap(), scaled.backward(&g, &c1).unwrap());
        let (KindGrads::Map { d_alpha: a0, d_beta: b0 }, KindGrads::Map { d_alpha: a1, d_beta: b1 }) = (g0.extra, g1.extra) else {
            unreachable!()
        };
        prop_assert!((a0 - a1).abs() <= 1e-12 * a0.abs().max(1.0));
        prop_assert!((b0 - b1).abs() <= 1e-12 * b0.abs().max(1.0));
    }

    #[test]
    fn merge_matches_forward_for_every_kind(seed in any::<u64>(), kind in 0usize..3, n in 2usize..9, m in 2usize..9) {
        let kind = AdapterKind::ALL[kind];
        let mut rng = Rng::new(seed);
        let base = FrozenBase::new(gaussian_init(&mut rng, n, m, 1.0)).unwrap();
        let opts = InitOptions { rank: 1, ..InitOptions::default() };
        let mut st = init_adapter(kind, &mut rng, base, &opts).unwrap();
        st.factors.b = gaussian_init(&mut rng, 1, m, 0.1);
        let x = gaussian_init(&mut rng, 4, n, 1.0);
        let y = st.forward(&x, None).unwrap().0;
        prop_assert!(rel(&x.matmul(&st.merge().unwrap()).unwrap(), &y) <= 1e-12);
    }

    #[test]
    fn schedule_stays_within_peak(warmup in 0usize..50, extra in 0usize..200, peak in 1e-6f64..1.0) {
        let s = Schedule::new(warmup, warmup + extra, peak).unwrap();
        let mut max = 0.0f64;
        for k in 0..=warmup + extra {
            let lr = s.lr(k).unwrap();
            prop_assert!((0.0..=peak).contains(&lr));
            max = max.max(lr);
        }
        prop_assert_eq!(max, peak);
        prop_assert!(s.lr(warmup + extra + 1).is_err());
    }

    #[test]
    fn masked_slots_are_bit_identical(seed in any::<u64>(), steps in 1usize..20, sgd in any::<bool>()) {
        let kind = if sgd { OptimizerKind::Sgd } else { OptimizerKind::AdamW };
        let hyper = Hyper { weight_decay: 0.1, ..Hyper::default() };
        let mut opt = OptimizerState::new(kind, hyper).unwrap();
        let mut rng = Rng::new(seed);
        let mut frozen: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mut live: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let before = frozen.clone();
        for _ in 0..steps {
            let gf: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let gl: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            opt.step(0.05, &mut [
                ParamSlot { role: ParamRole::FactorA, values: &mut frozen, grads: &gf, trainable: false },
                ParamSlot { role: ParamRole::FactorB, values: &mut live, grads: &gl, trainable: true },
            ]).unwrap();
        }
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&frozen), bits(&before));
        prop_assert_eq!(opt.step_count(), steps as u64);
    }
}
