use distdiff::diffusion::{build_schedule, GammaMode};
use distdiff::distribution::{log_pdf, Gaussian5, NormStats};
use distdiff::inference::{ade, best_of_n, Path2};
use distdiff::numerics::Tensor;
use proptest::prelude::*;

fn path(len: usize) -> impl Strategy<Value = Path2> {
    proptest::collection::vec([-30.0..30.0f64, -30.0..30.0f64], len)
}

proptest! {
    #[test]
    fn any_raw_vector_maps_to_a_valid_gaussian(raw in proptest::array::uniform5(-60.0f32..60.0)) {
        let g = Gaussian5::from_raw(&raw);
        prop_assert!(g.validate().is_ok(), "{g:?}");
        prop_assert!(g.determinant() > 0.0);
        prop_assert!(log_pdf([g.mu1, g.mu2], &g).unwrap().is_finite());
    }

    #[test]
    fn schedules_are_monotone(k in 1usize..300, lo in 1e-5f64..0.02, span in 0.0f64..0.2, frac in 0.01f64..1.0) {
        let s = ((k as f64 * frac).ceil() as usize).clamp(1, k);
        let sched = build_schedule(k, lo, lo + span, s, GammaMode::Deterministic).unwrap();
        prop_assert_eq!(sched.alpha[0], 1.0);
        prop_assert!(sched.alpha.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
        prop_assert_eq!(sched.tau.len(), s);
        prop_assert_eq!(*sched.tau.last().unwrap(), k);
        prop_assert!(sched.tau.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn best_of_n_is_the_minimum(cands in proptest::collection::vec(path(6), 1..12), gt in path(6)) {
        let (i, best, _) = best_of_n(&cands, &gt).unwrap();
        let each: Vec<f64> = cands.iter().map(|c| ade(c, &gt).unwrap()).collect();
        prop_assert_eq!(best, each[i]);
        prop_assert!(each.iter().all(|&a| a >= best));
    }

    #[test]
    fn normalisation_inverts(
        mean in proptest::array::uniform5(-5.0f32..5.0),
        scale in proptest::array::uniform5(0.01f32..10.0),
        data in proptest::collection::vec(-20.0f32..20.0, 15),
    ) {
        let n = NormStats::new(mean, scale).unwrap();
        let x = Tensor::new(vec![1, 3, 5], data).unwrap();
        let back = n.denormalize(&n.normalize(&x));
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
