use proptest::prelude::*;

use eb_lab::baselines::robbins;
use eb_lab::hb::{hb_estimate, lengen_estimate, PosteriorState};
use eb_lab::mixture::{
    bayes_posterior_mean, bayes_posterior_mean_ratio, divergence, marginal_pmf,
    mixture_divergence_bounds, posterior_moment, DiscretePrior, DivergenceKind,
};

fn prior(max_atoms: usize) -> impl Strategy<Value = DiscretePrior> {
    (1..=max_atoms)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(0.0..8.0f64, k),
                prop::collection::vec(0.01..1.0f64, k),
            )
        })
        .prop_map(|(atoms, weights)| DiscretePrior::from_unnormalized(atoms, weights, 8.0).unwrap())
}

fn same_size_pair() -> impl Strategy<Value = (DiscretePrior, DiscretePrior)> {
    (1..=5usize).prop_flat_map(|k| {
        let side = || {
            (
                prop::collection::vec(0.0..6.0f64, k),
                prop::collection::vec(0.01..1.0f64, k),
            )
        };
        (side(), side()).prop_map(|((a1, w1), (a2, w2))| {
            (
                DiscretePrior::from_unnormalized(a1, w1, 6.0).unwrap(),
                DiscretePrior::from_unnormalized(a2, w2, 6.0).unwrap(),
            )
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bayes_rule_forms_agree_and_stay_in_hull(g in prior(6), x in 0u64..30) {
        let direct = bayes_posterior_mean(&g, x).unwrap();
        let ratio = bayes_posterior_mean_ratio(&g, x).unwrap();
        prop_assert!((direct - ratio).abs() <= 1e-9 * direct.max(1.0));
        prop_assert!(direct >= g.min_atom() - 1e-12 && direct <= g.max_atom() + 1e-12);
    }

    #[test]
    fn second_posterior_moment_dominates_square(g in prior(6), x in 0u64..30) {
        let m1 = posterior_moment(&g, x, 1).unwrap();
        let m2 = posterior_moment(&g, x, 2).unwrap();
        prop_assert!(m2 + 1e-9 * m2.max(1.0) >= m1 * m1);
    }

    #[test]
    fn divergence_ranges(p in prior(4), q in prior(4)) {
        let (fp, fq) = (marginal_pmf(&p, 80), marginal_pmf(&q, 80));
        let tv = divergence(&fp, &fq, DivergenceKind::Tv).unwrap();
        let h2 = divergence(&fp, &fq, DivergenceKind::H2).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert!((0.0..=2.0 + 1e-12).contains(&h2));
        // H² ≤ 2 TV
        prop_assert!(h2 <= 2.0 * tv + 1e-12);
    }

    #[test]
    fn tv_bound_dominates((g1, g2) in same_size_pair()) {
        let b = mixture_divergence_bounds(&g1, &g2).unwrap();
        let tv = divergence(&marginal_pmf(&g1, 120), &marginal_pmf(&g2, 120), DivergenceKind::Tv).unwrap();
        prop_assert!(tv <= b.tv_bound * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn hb_and_robbins_are_permutation_equivariant(
        xs in prop::collection::vec(0u64..12, 1..20),
        seed in any::<u64>(),
        g1 in prior(3),
        g2 in prior(3),
    ) {
        let mut perm: Vec<usize> = (0..xs.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<u64> = perm.iter().map(|&i| xs[i]).collect();
        let state = PosteriorState::uniform(vec![g1, g2], xs.len()).unwrap();
        for f in [
            |st: &PosteriorState<DiscretePrior>, v: &[u64]| hb_estimate(st, v).unwrap(),
            |st: &PosteriorState<DiscretePrior>, v: &[u64]| lengen_estimate(st, v).unwrap(),
            |_: &PosteriorState<DiscretePrior>, v: &[u64]| robbins(v, None),
        ] {
            let a = f(&state, &xs);
            let b = f(&state, &permuted);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(b[k], a[i]);
            }
        }
    }
}
