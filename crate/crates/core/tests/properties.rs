use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semclip::eval::{composite_score, top1_retrieval_accuracy};
use semclip::projection::init_projection_bank;
use semclip::scene::{negate_caption, paraphrase_caption, parse_caption, render_caption, sample_scene, NegationStrategy};
use semclip::trainer::lr_schedule;

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-3).then(|| v.iter().map(|x| x / n).collect())
}

proptest! {
    #[test]
    fn composite_stays_in_percent_range(o in 0.0..=100.0f64, p in 0.0..=100.0f64, n in 0.0..=100.0f64) {
        let c = composite_score(o, p, n).unwrap();
        prop_assert!((0.0..=100.0).contains(&c));
    }

    #[test]
    fn banks_are_orthonormal_for_any_seed(seed in any::<u64>(), n in 1usize..4) {
        let bank = init_projection_bank(16, n, seed, true, false).unwrap();
        prop_assert!(bank.orthonormality_error() < 1e-8);
    }

    #[test]
    fn normalized_projection_is_unit_norm(seed in any::<u64>(), t in prop::collection::vec(-1.0..1.0f64, 16)) {
        let Some(t) = unit(t) else { return Ok(()) };
        let bank = init_projection_bank(16, 2, seed, true, false).unwrap();
        if let Ok(p) = bank.project_vector(&t) {
            prop_assert!((p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn retrieval_ignores_positive_query_scale(
        q in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 1..6),
        g in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 1..6),
        scale in 0.1..10.0f64,
    ) {
        let targets: Vec<usize> = (0..q.len()).map(|i| i % g.len()).collect();
        let scaled: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
        prop_assert_eq!(
            top1_retrieval_accuracy(&q, &g, &targets).unwrap(),
            top1_retrieval_accuracy(&scaled, &g, &targets).unwrap()
        );
    }

    #[test]
    fn schedule_is_bounded(step in 0usize..5000, warmup in 0usize..200, total in 1usize..4000, peak in 1e-6..1.0f64) {
        let lr = lr_schedule(step, warmup, total, peak);
        prop_assert!((0.0..=peak).contains(&lr));
    }

    #[test]
    fn captions_keep_their_truth_values(seed in any::<u64>()) {
        let scene = sample_scene(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(parse_caption(&render_caption(&scene)).unwrap().holds_in(&scene));
        prop_assert!(parse_caption(&paraphrase_caption(&scene)).unwrap().holds_in(&scene));
        for s in NegationStrategy::ALL {
            prop_assert!(!parse_caption(&negate_caption(&scene, s)).unwrap().holds_in(&scene));
        }
    }
}
