mod support;

use mmfed_core::dataio::{decode_dataset, encode_dataset, generate_synthetic, partition_noniid, SynthConfig};
use mmfed_core::diffusion::{build_schedule, multiscale_stack};
use mmfed_core::fedsim::{svd_encode, RankPolicy, RoundLog, PayloadKind};
use mmfed_core::fusion::threshold_map;
use mmfed_core::metrics::accumulate;
use mmfed_core::numkit::{fft2, ifft2, reflect_index, svd_thin, Tensor};
use proptest::prelude::*;
use support::oracle::{rng, uniform};

fn pairs(classes: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..120).prop_flat_map(move |n| {
        (
            prop::collection::vec(1..=classes, n),
            prop::collection::vec(1..=classes, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_round_trip(h in 2usize..=8, w in 2usize..=8, seed in any::<u64>()) {
        let x = uniform::<f32>(&[h, w], &mut rng(seed));
        let back = ifft2(&fft2(&x).unwrap()).unwrap();
        prop_assert!(back.real.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn svd_reconstructs(p in 1usize..10, q in 1usize..10, seed in any::<u64>()) {
        let x = uniform::<f32>(&[p, q], &mut rng(seed));
        let svd = svd_thin(&x).unwrap();
        let s = svd.s.data();
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&v| v >= 0.0));
        let err = svd.reconstruct(p.min(q)).max_abs_diff(&x).unwrap();
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn codec_never_inflates(p in 1usize..24, q in 1usize..24, t in 1usize..24, seed in any::<u64>()) {
        let x = uniform::<f32>(&[p, q], &mut rng(seed));
        let wire = svd_encode(&x, RankPolicy::Fixed(t.min(p.min(q)))).unwrap();
        prop_assert!(wire.element_count() <= p * q);
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint(
        labels in prop::collection::vec(1usize..=5, 40..200),
        clients in 1usize..5,
        alpha in 0.1f64..100.0,
        seed in any::<u64>(),
    ) {
        if let Ok(parts) = partition_noniid(&labels, clients, alpha, seed) {
            prop_assert_eq!(parts.len(), clients);
            let mut all = parts.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            prop_assert_eq!(partition_noniid(&labels, clients, alpha, seed).unwrap(), parts);
        }
    }

    #[test]
    fn threshold_is_monotone(probs in prop::collection::vec(0.0f64..1.0, 2..6), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(threshold_map(&probs, hi).unwrap() <= threshold_map(&probs, lo).unwrap());
    }

    #[test]
    fn scores_are_bounded((preds, truths) in pairs(4)) {
        let s = accumulate(4, &preds, &truths).unwrap().scores().unwrap();
        for v in [s.oa, s.aa] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(s.ca.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        if s.pe >= 0.0 {
            prop_assert!(s.kappa <= s.oa + 1e-12);
        }
    }

    #[test]
    fn relabelling_keeps_scores((preds, truths) in pairs(4), shift in 1usize..4) {
        let relabel = |v: &[usize]| v.iter().map(|&c| (c - 1 + shift) % 4 + 1).collect::<Vec<_>>();
        let a = accumulate(4, &preds, &truths).unwrap().scores().unwrap();
        let b = accumulate(4, &relabel(&preds), &relabel(&truths)).unwrap().scores().unwrap();
        prop_assert!((a.oa - b.oa).abs() < 1e-12);
        prop_assert!((a.aa - b.aa).abs() < 1e-12);
        prop_assert!((a.kappa - b.kappa).abs() < 1e-12);
    }

    #[test]
    fn confusion_merge_commutes((p1, t1) in pairs(3), (p2, t2) in pairs(3)) {
        let (a, b) = (accumulate(3, &p1, &t1).unwrap(), accumulate(3, &p2, &t2).unwrap());
        let mut ab = a.clone();
        ab += &b;
        let mut ba = b.clone();
        ba += &a;
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn schedules_decrease(steps in 1usize..400, lo in 1e-5f64..0.05, span in 0.0f64..0.3) {
        let s = build_schedule(steps, lo, lo + span).unwrap();
        prop_assert!((1..steps).all(|t| s.alpha_bar(t + 1) < s.alpha_bar(t)));
        prop_assert!((1..=steps).all(|t| s.beta(t) > 0.0 && s.beta(t) < 1.0));
    }

    #[test]
    fn stack_keeps_clean_slice(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
        let x = uniform::<f32>(&[h, w, c], &mut rng(seed));
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let st = multiscale_stack(&x, &[0, 10, 500], &s, &mut rng(seed ^ 1)).unwrap();
        prop_assert_eq!(st.stack.shape(), &[h, w, 3 * c]);
        prop_assert_eq!(st.slice(0), x);
    }

    #[test]
    fn ledger_bytes_are_four_per_element(elems in prop::collection::vec(0u64..1_000_000, 1..20)) {
        let mut log = RoundLog::new(0);
        for (i, &e) in elems.iter().enumerate() {
            let kind = if i % 2 == 0 { PayloadKind::Gradient } else { PayloadKind::Feature };
            log.push(i, i + 1, kind, e as usize, false);
        }
        prop_assert_eq!(log.total_bytes(), 4 * elems.iter().sum::<u64>());
        prop_assert_eq!(log.total_bytes(), log.feature_bytes() + log.gradient_bytes());
    }

    #[test]
    fn reflect_stays_in_range(i in -50isize..50, n in 1usize..12) {
        let r = reflect_index(i, n);
        prop_assert!(r < n);
        if (0..n as isize).contains(&i) {
            prop_assert_eq!(r, i as usize);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generated_scenes_round_trip(seed in any::<u64>(), classes in 2usize..7, noise in 0.0f64..0.5) {
        let cfg = SynthConfig { seed, height: 24, width: 20, classes, noise, ..SynthConfig::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&generate_synthetic(&cfg).unwrap(), &ds);
        prop_assert_eq!(decode_dataset(&encode_dataset(&ds)).unwrap(), ds);
    }

    #[test]
    fn branch_is_deterministic(seed in any::<u64>()) {
        use mmfed_core::net::{branch_forward, BranchConfig, BranchParams};
        let cfg = BranchConfig::new(6);
        let p = BranchParams::<Tensor<f32>>::init(&cfg, &mut rng(seed)).unwrap();
        let x = uniform::<f32>(&[8, 8, 6], &mut rng(seed ^ 7));
        prop_assert_eq!(branch_forward(&x, &p).unwrap(), branch_forward(&x, &p).unwrap());
    }
}
