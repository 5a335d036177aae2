use approx::assert_abs_diff_eq;
use fuzzyssvep::eval::itr;
use fuzzyssvep::explain::{pinv, recover_centers, rule_spectra};
use fuzzyssvep::fuzzy::{ConsequentMode, FuzzyFilter, SIGMA_FLOOR};
use fuzzyssvep::network::checkpoint;
use fuzzyssvep::network::{FilterOrder, ModelConfig, ModelParams};
use fuzzyssvep::optim::{adamw_step, effective_lr, lr_at_epoch, AdamWConfig, OptimizerState, TrainConfig};
use fuzzyssvep::params::Parameters;
use fuzzyssvep::rng;
use fuzzyssvep::signal::{
    extract_window, fft_features, generate_dataset, EpochedDataset, SynthesisConfig, WindowSpec,
};
use ndarray::{Array, Array2, Array3};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(shape: (usize, usize), seed: u64, scale: f64) -> Array2<f64> {
    let mut r = rng::stream(seed, &[]);
    Array::from_shape_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(&mut r);
        scale * z
    })
}

fn mode(first: bool) -> ConsequentMode {
    if first {
        ConsequentMode::FirstOrder
    } else {
        ConsequentMode::ZeroOrder
    }
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn spectral_norm(a: &Array2<f64>) -> f64 {
    pinv(a.view()).unwrap().singular_values.first().copied().unwrap_or(0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn firing_rows_are_stochastic(
        d in 1usize..12, r in 1usize..10, t in 1usize..20,
        scale in 0.01f64..50.0, seed in any::<u64>(), first in any::<bool>(),
    ) {
        let f = FuzzyFilter::init(d, r, mode(first), seed).unwrap();
        let x = gaussian((t, d), seed ^ 1, scale);
        let firing = f.firing_strengths(x.view()).unwrap().into_inner();
        prop_assert_eq!(firing.dim(), (t, r));
        for row in firing.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
        let (out, _) = f.forward(x.view()).unwrap();
        prop_assert_eq!(out.dim(), (t, d));
    }

    #[test]
    fn center_hit_wins_its_row(d in 1usize..8, r in 2usize..8, hit in 0usize..8, seed in any::<u64>()) {
        let hit = hit % r;
        let mut f = FuzzyFilter::init(d, r, ConsequentMode::ZeroOrder, seed).unwrap();
        f.query.weight = Array2::eye(d);
        f.query.bias.fill(0.0);
        f.widths.fill(0.7);
        let token = f.centers.row(hit).to_owned().insert_axis(ndarray::Axis(0));
        let firing = f.firing_strengths(token.view()).unwrap().into_inner();
        let best = firing.row(0).iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(firing[[0, hit]], best);
    }

    #[test]
    fn widths_stay_above_floor_after_steps(seed in any::<u64>(), steps in 1usize..6, lr in 1e-4f64..1.0) {
        let mut f = FuzzyFilter::init(3, 4, ConsequentMode::ZeroOrder, seed).unwrap();
        let mut state = OptimizerState::new();
        let cfg = AdamWConfig::default();
        for k in 0..steps {
            let mut g = f.zeros_like();
            // Push every width hard toward zero.
            g.widths.fill(10.0 + k as f64);
            adamw_step(&mut f, &g, &mut state, lr, &cfg).unwrap();
            prop_assert!(f.widths.iter().all(|&s| s >= SIGMA_FLOOR));
        }
        prop_assert_eq!(state.step, steps as u64);
    }

    #[test]
    fn pinv_satisfies_penrose_identities(m in 1usize..=64, n in 1usize..=32, seed in any::<u64>(), rank_cut in 0usize..4) {
        let mut w = gaussian((m, n), seed, 1.0);
        // Optionally force rank deficiency by duplicating columns.
        for j in 1..rank_cut.min(n) {
            let c = w.column(0).to_owned();
            w.column_mut(j).assign(&c);
        }
        let p = pinv(w.view()).unwrap().pinv;
        prop_assert_eq!(p.dim(), (n, m));
        let tol = 1e-8 * spectral_norm(&w).max(1.0);
        let wpw = w.dot(&p).dot(&w);
        let pwp = p.dot(&w).dot(&p);
        let wp = w.dot(&p);
        let pw = p.dot(&w);
        prop_assert!(max_abs(&(&wpw - &w)) < tol);
        prop_assert!(max_abs(&(&pwp - &p)) < tol * spectral_norm(&p).max(1.0));
        prop_assert!(max_abs(&(&wp - &wp.t())) < tol);
        prop_assert!(max_abs(&(&pw - &pw.t())) < tol);
    }

    #[test]
    fn recovered_centers_map_back(d in 1usize..16, r in 1usize..6, seed in any::<u64>()) {
        let mut f = FuzzyFilter::init(d, r, ConsequentMode::ZeroOrder, seed).unwrap();
        f.query.weight = Array2::eye(d) + gaussian((d, d), seed ^ 7, 0.1);
        let x = recover_centers(&f).unwrap();
        let q = f.query.apply(x.view());
        prop_assert!(max_abs(&(&q - &f.centers)) < 1e-8);
    }

    #[test]
    fn spectra_ignore_column_offsets(s in 16usize..96, r in 1usize..5, seed in any::<u64>(), shift in -5.0f64..5.0) {
        let firing = gaussian((s, r), seed, 1.0).mapv(f64::abs);
        let a = rule_spectra(firing.view(), 128.0).unwrap();
        let b = rule_spectra((&firing + shift).view(), 128.0).unwrap();
        for (x, y) in a.magnitudes.iter().flatten().zip(b.magnitudes.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn itr_zero_at_chance_and_increasing(n in 2usize..64, t in 0.1f64..10.0, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
        let chance = 1.0 / n as f64;
        prop_assert!(itr(chance, n, t).unwrap().abs() < 1e-9);
        let lo = chance + (1.0 - chance) * p1.min(p2);
        let hi = chance + (1.0 - chance) * p1.max(p2);
        if hi - lo > 1e-9 {
            prop_assert!(itr(hi, n, t).unwrap() > itr(lo, n, t).unwrap());
        }
        prop_assert!(itr(hi, n, t).unwrap() <= itr(1.0, n, t).unwrap() + 1e-9);
    }

    #[test]
    fn schedule_is_bounded_and_continuous(
        base in 1e-5f64..1e-2, batch in 1usize..1024, epochs in 2usize..300, warm in 0usize..60,
    ) {
        let warmup = warm.min(epochs - 1);
        let cfg = TrainConfig { base_lr: base, batch_size: batch, max_epochs: epochs, warmup_epochs: warmup, ..Default::default() };
        let eff = effective_lr(base, batch);
        let lrs: Vec<f64> = (0..epochs).map(|e| lr_at_epoch(&cfg, e).unwrap()).collect();
        prop_assert!(lrs.iter().all(|&l| l >= 0.0 && l <= eff * (1.0 + 1e-12)));
        if warmup > 0 {
            prop_assert!((lrs[warmup] - lrs[warmup - 1]).abs() <= eff / warmup as f64 + 1e-15);
        }
        for w in lrs[warmup..].windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
        prop_assert!(lr_at_epoch(&cfg, epochs).is_err());
    }

    #[test]
    fn window_extraction_stays_in_bounds(c in 1usize..5, total in 1usize..200, w in 0usize..220, start in 0usize..220) {
        let trial = Array2::from_shape_fn((c, total), |(i, j)| (i * 1000 + j) as f64);
        match extract_window(trial.view(), WindowSpec::new(w, start)) {
            Ok(win) => {
                prop_assert!(w > 0 && start + w <= total);
                prop_assert_eq!(win.dim(), (c, w));
                for i in 0..c {
                    for j in 0..w {
                        prop_assert_eq!(win[[i, j]], trial[[i, start + j]]);
                    }
                }
            }
            Err(_) => prop_assert!(w == 0 || start + w > total),
        }
    }

    #[test]
    fn fft_features_scale_linearly(seed in any::<u64>(), a in 0.0f64..20.0) {
        let x = gaussian((3, 128), seed, 1.0);
        let f1 = fft_features(x.view(), 128.0, (8.0, 64.0)).unwrap();
        let f2 = fft_features((&x * a).view(), 128.0, (8.0, 64.0)).unwrap();
        for (u, v) in f1.iter().zip(f2.iter()) {
            prop_assert!((a * u - v).abs() <= 1e-9 * (1.0 + a * u.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dataset_round_trip_is_identity(
        subjects in 1usize..4, trials in 1usize..3, seed in any::<u64>(), snr in -10.0f64..20.0,
    ) {
        let mut cfg = SynthesisConfig::four_target(subjects, trials, snr, seed);
        cfg.duration = 1.0;
        cfg.n_channels = 3;
        let ds = generate_dataset(&cfg).unwrap();
        let bytes = ds.to_bytes().unwrap();
        let back = EpochedDataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        // Synthesis itself is deterministic.
        prop_assert_eq!(generate_dataset(&cfg).unwrap(), ds);
    }

    #[test]
    fn checkpoint_round_trip_is_identity(
        c in 1usize..5, s in 2usize..20, m in 2usize..5, r in 1usize..4, h in 1usize..6,
        order in 0u8..4, first in any::<bool>(), seed in any::<u64>(),
    ) {
        let mut cfg = ModelConfig::new(c, s, m);
        cfg.rules = r;
        cfg.hidden = h;
        cfg.consequent_mode = mode(first);
        cfg.filter_order = FilterOrder::from_code(order).unwrap();
        let p = ModelParams::init(cfg, seed).unwrap();
        let bytes = checkpoint::to_bytes(&p).unwrap();
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn ablation_drops_exactly_the_skipped_filter(c in 1usize..5, s in 2usize..12, r in 1usize..4, first in any::<bool>(), seed in any::<u64>()) {
        let mut cfg = ModelConfig::new(c, s, 3);
        cfg.rules = r;
        cfg.hidden = 4;
        cfg.consequent_mode = mode(first);
        let full = ModelParams::init(cfg, seed).unwrap();
        let (spatial, temporal) = full.filter_param_counts();
        cfg.filter_order = FilterOrder::SpatialOnly;
        prop_assert_eq!(ModelParams::init(cfg, seed).unwrap().param_count(), full.param_count() - temporal);
        cfg.filter_order = FilterOrder::TemporalOnly;
        prop_assert_eq!(ModelParams::init(cfg, seed).unwrap().param_count(), full.param_count() - spatial);
    }

    #[test]
    fn inference_is_repeatable(seed in any::<u64>(), first in any::<bool>()) {
        let mut cfg = ModelConfig::new(3, 10, 4);
        cfg.rules = 3;
        cfg.hidden = 5;
        cfg.consequent_mode = mode(first);
        let p = ModelParams::init(cfg, seed).unwrap();
        let x = Array3::from_shape_fn((2, 3, 10), |(b, i, j)| ((b * 31 + i * 7 + j) as f64).sin());
        let (a, _) = p.forward_eval(x.view()).unwrap();
        let (b, _) = p.forward_eval(x.view()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn softmax_shift_invariance() {
    let logits = gaussian((5, 4), 3, 2.0);
    let a = fuzzyssvep::fuzzy::softmax_rows(logits.clone());
    let b = fuzzyssvep::fuzzy::softmax_rows(logits + 123.0);
    for (x, y) in a.iter().zip(b.iter()) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-12);
    }
}


