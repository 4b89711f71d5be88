mod common;

use common::{random_images, tiny_net};
use drac_core::augment::{apply, apply_batch, sample_params, AugmentationId, AugmentationParams, SAMPLED};
use drac_core::categorical::{entropy, log_softmax, softmax};
use drac_core::drac::{policy_regularizer, value_regularizer};
use drac_core::eval::{cycle_consistency, jsd, summarize};
use drac_core::select::UcbSelector;
use drac_core::trainer::rng_stream;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
    })
}

fn trajectory(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..15)
}

/// Strictly increasing scalar points, so every point is distinct.
fn distinct_trajectory() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(0.01f64..3.0, 1..20).prop_map(|steps| {
        let mut x = 0.0;
        steps
            .into_iter()
            .map(|s| {
                x += s;
                vec![x]
            })
            .collect()
    })
}

fn sampled_id() -> impl Strategy<Value = AugmentationId> {
    (0..SAMPLED.len()).prop_map(|i| SAMPLED[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsd_bounded_symmetric_and_zero_on_self(p in distribution(5), q in distribution(5)) {
        let d = jsd(&p, &q);
        prop_assert!((0.0..=LN2).contains(&d));
        prop_assert!((d - jsd(&q, &p)).abs() < 1e-10);
        prop_assert!(jsd(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn cycle_fraction_is_a_fraction(v in trajectory(3), u in trajectory(3), j in trajectory(3)) {
        let two = cycle_consistency(&v, &u, None).unwrap();
        let three = cycle_consistency(&v, &u, Some(&j)).unwrap();
        prop_assert!((0.0..=1.0).contains(&two));
        prop_assert!((0.0..=1.0).contains(&three));
    }

    #[test]
    fn cycle_of_copy_is_one(v in distinct_trajectory()) {
        prop_assert_eq!(cycle_consistency(&v, &v.clone(), None).unwrap(), 1.0);
    }

    #[test]
    fn three_way_with_self_never_exceeds_two_way(v in trajectory(2), u in trajectory(2)) {
        let two = cycle_consistency(&v, &u, None).unwrap();
        let three = cycle_consistency(&v, &u, Some(&v)).unwrap();
        prop_assert!(three <= two);
    }

    #[test]
    fn ucb_window_bounded_and_q_is_window_mean(
        window in 1usize..6,
        arms in 1usize..5,
        rewards in prop::collection::vec(-2.0f64..2.0, 1..60),
    ) {
        let mut s = UcbSelector::new(arms, 0.1, window).unwrap();
        for r in rewards {
            let a = s.select().unwrap();
            let before: Vec<f64> = s.q_values().to_vec();
            s.feedback(a, r).unwrap();
            for f in 0..arms {
                let w = s.window(f);
                prop_assert!(w.len() <= window);
                if w.is_empty() {
                    prop_assert_eq!(s.q_values()[f], 0.0);
                } else {
                    let mean = w.iter().sum::<f64>() / w.len() as f64;
                    prop_assert!((s.q_values()[f] - mean).abs() < 1e-12);
                }
                if f != a {
                    prop_assert_eq!(s.q_values()[f], before[f]);
                }
            }
            prop_assert_eq!(s.counts().iter().sum::<u64>(), arms as u64 + s.t() - 1);
        }
    }

    #[test]
    fn ucb_picks_first_maximiser(
        q in prop::collection::vec(-1.0f64..1.0, 1..6),
        n_seed in prop::collection::vec(1u64..50, 6),
        t in 1u64..500,
        c in 0.0f64..2.0,
    ) {
        let counts: Vec<u64> = n_seed[..q.len()].to_vec();
        let s = UcbSelector::with_estimates(q.clone(), counts.clone(), t, c, 10).unwrap();
        let scores: Vec<f64> =
            q.iter().zip(&counts).map(|(q, &n)| q + c * ((t as f64).ln() / n as f64).sqrt()).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected = scores.iter().position(|&x| x == best).unwrap();
        prop_assert_eq!(s.peek(), expected);
    }

    #[test]
    fn augmentations_keep_shape_range_and_determinism(id in sampled_id(), seed in 0u64..1000, size in 8usize..20) {
        let image: Vec<f32> = random_images(1, size, seed).into_iter().map(|x| x as f32).collect();
        let p = sample_params(id, size, &mut rng_stream(seed, 3)).unwrap();
        prop_assert_eq!(&p, &sample_params(id, size, &mut rng_stream(seed, 3)).unwrap());
        let out = apply(&p, &image, size).unwrap();
        prop_assert_eq!(out.len(), image.len());
        prop_assert!(out.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        prop_assert_eq!(out, apply(&p, &image, size).unwrap());
    }

    #[test]
    fn batch_application_matches_per_image(id in sampled_id(), seed in 0u64..1000) {
        let images: Vec<f32> = random_images(3, 8, seed).into_iter().map(|x| x as f32).collect();
        let mut rng = rng_stream(seed, 3);
        let params: Vec<AugmentationParams> = (0..3).map(|_| sample_params(id, 8, &mut rng).unwrap()).collect();
        let batch = apply_batch(&params, &images, 8).unwrap();
        for (i, p) in params.iter().enumerate() {
            let one = apply(p, &images[i * 192..(i + 1) * 192], 8).unwrap();
            prop_assert_eq!(&batch[i * 192..(i + 1) * 192], &one[..]);
        }
    }

    #[test]
    fn flip_is_an_involution_and_identity_fixes(seed in 0u64..1000, size in 2usize..20) {
        let image = random_images(1, size, seed);
        let once = apply(&AugmentationParams::Flip, &image, size).unwrap();
        prop_assert_eq!(apply(&AugmentationParams::Flip, &once, size).unwrap(), image.clone());
        prop_assert_eq!(apply(&AugmentationParams::Identity, &image, size).unwrap(), image.clone());
        prop_assert_eq!(apply(&AugmentationParams::Crop { top: 12, left: 12 }, &image, size).unwrap(), image);
    }

    #[test]
    fn four_quarter_turns_return_the_image(seed in 0u64..1000, size in 2usize..20) {
        let image = random_images(1, size, seed);
        let mut x = image.clone();
        for _ in 0..2 {
            x = apply(&AugmentationParams::Rotate { quarter_turns: 2 }, &x, size).unwrap();
        }
        prop_assert_eq!(&x, &image);
        let one = apply(&AugmentationParams::Rotate { quarter_turns: 1 }, &image, size).unwrap();
        let three = apply(&AugmentationParams::Rotate { quarter_turns: 3 }, &one, size).unwrap();
        prop_assert_eq!(three, image);
    }

    #[test]
    fn entropy_between_zero_and_log_actions(logits in prop::collection::vec(-20.0f64..20.0, 2..10)) {
        let lp = log_softmax(&logits);
        let h = entropy(&lp);
        prop_assert!(h >= -1e-12 && h <= (logits.len() as f64).ln() + 1e-12);
        prop_assert!((softmax(&logits).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularizers_are_non_negative(net_seed in 0u64..100, seed in 0u64..1000) {
        let net = tiny_net(net_seed);
        let x = random_images(4, 4, seed);
        let y = random_images(4, 4, seed + 1);
        prop_assert!(policy_regularizer(&net, &x, &y, 4).unwrap() >= 0.0);
        prop_assert!(value_regularizer(&net, &x, &y, 4).unwrap() >= 0.0);
    }

    #[test]
    fn summary_statistics_are_ordered(values in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let s = summarize(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= s.median && s.median <= hi);
        prop_assert!(lo - 1e-9 <= s.mean && s.mean <= hi + 1e-9);
        prop_assert!(s.std >= 0.0);
    }
}
