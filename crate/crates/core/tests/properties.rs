use fastmatch::accounting::{epochs_for, utilization, IterationCounts, PassLedger};
use fastmatch::augment::{strong_augment, strong_view, weak_augment, AugmentPolicy};
use fastmatch::curricula::{
    bexp, convex_map, cosine_lr, curriculum_batch, lambda_coeff, CplState, ScheduleConfig,
};
use fastmatch::dataio::{make_ssl_split, synth_generate, BatchCursor};
use fastmatch::rng;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #[test]
    fn bexp_is_monotone_and_bounded(u in 1usize..2000, total in 2u64..5000, alpha in 0.0f64..0.99) {
        let mut prev = 0;
        for k in 0..=50 {
            let t = total * k / 50;
            let b = curriculum_batch(u, t, total, alpha).unwrap();
            prop_assert!(b <= u);
            prop_assert!(b >= prev);
            prev = b;
        }
        prop_assert_eq!(curriculum_batch(u, 0, total, alpha).unwrap(), 0);
        prop_assert_eq!(curriculum_batch(u, total, total, alpha).unwrap(), u);
    }

    #[test]
    fn larger_alpha_delays_growth(t in 1u64..999, a in 0.05f64..0.9, d in 0.01f64..0.09) {
        let lo = bexp(448.0, t as f64, 1000.0, a).unwrap();
        let hi = bexp(448.0, t as f64, 1000.0, a + d).unwrap();
        prop_assert!(hi <= lo + 1e-9);
    }

    #[test]
    fn lambda_is_linear_in_batch(u_t in 0usize..=448, shift in 0u32..8) {
        let cfg = ScheduleConfig { l: 1 << shift, mu: 448 >> shift.min(6), ..ScheduleConfig::default() };
        let u = cfg.l * cfg.mu;
        let u_t = u_t.min(u);
        prop_assert_eq!(lambda_coeff(&cfg, u_t) / lambda_coeff(&cfg, u), u_t as f64 / u as f64);
    }

    #[test]
    fn cosine_lr_decreases(t in 0u64..10_000) {
        let a = cosine_lr(0.03, t, 10_000);
        let b = cosine_lr(0.03, t + 1, 10_000);
        prop_assert!(b <= a && b > 0.0);
    }

    #[test]
    fn cpl_thresholds_bounded(
        updates in prop::collection::vec((0usize..50, 0usize..5, 0.0f64..1.0), 0..300),
        tau in 0.5f64..1.0,
    ) {
        let mut s = CplState::new(50, 5, tau, true).unwrap();
        for (i, c, conf) in updates {
            s.record(i, c, conf).unwrap();
            for th in s.thresholds() {
                prop_assert!((0.0..=tau).contains(&th));
            }
        }
        let max = *s.sigma().iter().max().unwrap();
        if max >= s.unused() && max > 0 {
            let top = s.sigma().iter().position(|&v| v == max).unwrap();
            prop_assert_eq!(s.thresholds()[top], tau);
        }
    }

    #[test]
    fn ledger_is_additive(parts in prop::collection::vec((1usize..100, 0usize..500, 0.0f64..=1.0), 1..40)) {
        let mut whole = PassLedger::new(1000);
        let mut a = PassLedger::new(1000);
        let mut b = PassLedger::new(1000);
        for (k, &(l, u, f)) in parts.iter().enumerate() {
            let n = (u as f64 * f).floor() as usize;
            whole.record_iteration(l, u, n).unwrap();
            if k % 2 == 0 { a.record_iteration(l, u, n).unwrap() } else { b.record_iteration(l, u, n).unwrap() }
        }
        a.merge(&b);
        prop_assert_eq!(a.forward_total, whole.forward_total);
        prop_assert_eq!(a.backward_total, whole.backward_total);
        prop_assert_eq!(a.iterations, whole.iterations);
    }

    #[test]
    fn epochs_are_linear(p in 0u64..1u64 << 40, q in 0u64..1u64 << 40, n in 1u64..1_000_000) {
        let sum = epochs_for(p + q, n);
        prop_assert!((sum - epochs_for(p, n) - epochs_for(q, n)).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn utilization_in_unit_interval(rows in prop::collection::vec((0usize..64, 0.0f64..=1.0), 1..60)) {
        let stream: Vec<IterationCounts> = rows
            .iter()
            .enumerate()
            .map(|(t, &(u, f))| {
                let n = (u as f64 * f).floor() as usize;
                IterationCounts { t: t as u64, u_t: u, n_confident: n, n_correct_confident: n / 2 }
            })
            .collect();
        let r = utilization(&stream).unwrap();
        for v in r.batch.iter().chain(&r.running).chain(std::iter::once(&r.total)).flatten() {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn cursor_covers_pool_each_pass(n in 1usize..200, k in 1usize..50, seed in any::<u64>()) {
        let mut c = BatchCursor::new((0..n).collect(), seed);
        let mut seen = Vec::new();
        while seen.len() < n {
            seen.extend(c.next_batch(k.min(n - seen.len())));
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn augment_keeps_shape_and_range(seed in any::<u64>(), h in 4usize..12) {
        let dims = [3, h, h];
        let mut r = rng::stream(seed, "img", 0, 0);
        let img: Vec<f32> = (0..3 * h * h).map(|_| r.gen()).collect();
        let w = weak_augment(&img, dims, &mut rng::stream(seed, "weak", 0, 0));
        let s = strong_augment(&img, dims, &mut rng::stream(seed, "strong", 0, 0), &AugmentPolicy::strong());
        prop_assert_eq!(w.len(), img.len());
        prop_assert_eq!(s.len(), img.len());
        prop_assert!(w.iter().chain(&s).all(|v| (0.0..=1.0).contains(v)));
        let s2 = strong_augment(&img, dims, &mut rng::stream(seed, "strong", 0, 0), &AugmentPolicy::strong());
        prop_assert_eq!(s, s2);
    }
}

#[test]
fn cpl_conservation_matches_recount() {
    let mut r = rng::stream(7, "cpl-sequences", 0, 0);
    for seq in 0..10_000 {
        let (n, classes) = (r.gen_range(1..40), r.gen_range(1..8));
        let tau = 0.95;
        let mut s = CplState::new(n, classes, tau, seq % 2 == 0).unwrap();
        let mut shadow = vec![-1i32; n];
        for _ in 0..r.gen_range(0..60) {
            let (i, c, conf) = (r.gen_range(0..n), r.gen_range(0..classes), r.gen::<f64>());
            s.record(i, c, conf).unwrap();
            if conf > tau {
                shadow[i] = c as i32;
            }
        }
        let unused = shadow.iter().filter(|&&p| p == -1).count();
        let sigma: Vec<usize> = (0..classes).map(|c| shadow.iter().filter(|&&p| p == c as i32).count()).collect();
        assert_eq!(s.predictions(), &shadow[..]);
        assert_eq!(s.unused(), unused);
        assert_eq!(s.sigma(), &sigma[..]);
        assert_eq!(sigma.iter().sum::<usize>() + unused, n);
    }
}

#[test]
fn convex_map_spot_values() {
    assert_eq!(convex_map(0.0), 0.0);
    assert!((convex_map(0.5) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(convex_map(1.0), 1.0);
}

#[test]
fn strong_views_move_further_than_weak() {
    let ds = synth_generate(11, 1000, 10, 8, 8).unwrap();
    let dims = ds.shape();
    let (mut dw, mut ds_) = (0.0f64, 0.0f64);
    for i in 0..ds.len() {
        let img = ds.image(i);
        let w = weak_augment(img, dims, &mut rng::stream(1, "weak", 0, i as u64));
        let s = strong_view(img, dims, &mut rng::stream(1, "strong", 0, i as u64), &AugmentPolicy::strong());
        dw += img.iter().zip(&w).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
        ds_ += img.iter().zip(&s).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
    }
    assert!(ds_ > dw, "strong {ds_} vs weak {dw}");
}

#[test]
fn split_is_disjoint_and_deterministic() {
    let ds = synth_generate(2, 500, 10, 8, 8).unwrap();
    let a = make_ssl_split(&ds, 40, 9, false).unwrap();
    let b = make_ssl_split(&ds, 40, 9, false).unwrap();
    assert_eq!(a.labeled, b.labeled);
    assert_eq!(a.labeled.len(), 40);
    assert!(a.labeled.iter().all(|i| !a.unlabeled.contains(i)));
    assert_eq!(a.labeled.len() + a.unlabeled.len(), 500);
    let mut per_class = [0usize; 10];
    a.labeled.iter().for_each(|&i| per_class[ds.label(i).unwrap()] += 1);
    assert!(per_class.iter().all(|&c| c == 4));
}
