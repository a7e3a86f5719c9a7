use proptest::prelude::*;

use prmim::cost::{cost_report, Convention};
use prmim::geometry::{
    generate_mask, throw_furthest, throw_random, token_count, DistanceMatrix, GridShape, SelectionVector, TokenLabel,
};
use prmim::harness::checkpoint::{decode_checkpoint, encode_checkpoint};
use prmim::harness::ppm::{decode_ppm, encode_ppm};
use prmim::model::{patchify, unpatchify, ModelConfig, ParameterSet};
use prmim::numerics::Tensor;

fn ratios() -> impl Strategy<Value = (f64, f64)> {
    (0.05f64..0.95).prop_flat_map(|e| (Just(e), 0.0..=e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn throwing_partitions_the_grid(rows in 2usize..10, cols in 2usize..10, (rho_e, rho_d) in ratios(), seed: u64, furthest: bool) {
        let grid = GridShape::new(rows, cols).unwrap();
        let n = grid.n_tokens();
        let mask = generate_mask(grid, rho_e, seed).unwrap();
        let plan = if furthest {
            throw_furthest(&mask, rho_d, seed ^ 1).unwrap()
        } else {
            throw_random(&mask, rho_d, seed ^ 1).unwrap()
        };
        let n_masked = token_count(n, rho_e);
        prop_assert_eq!(plan.masked().len(), n_masked);
        prop_assert_eq!(plan.thrown().len(), token_count(n, rho_d).min(n_masked));
        prop_assert_eq!(plan.unmasked().len() + plan.retained().len() + plan.thrown().len(), n);
        prop_assert_eq!(mask.masked(), plan.masked());
        let mut all: Vec<usize> = plan.kept().into_iter().chain(plan.thrown()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(plan.without_throwing().count(TokenLabel::Thrown) == 0);
    }

    #[test]
    fn furthest_is_deterministic_per_seed(side in 3usize..9, seed: u64) {
        let grid = GridShape::square(side).unwrap();
        let mask = generate_mask(grid, 0.75, seed).unwrap();
        let a = throw_furthest(&mask, 0.5, seed).unwrap();
        let b = throw_furthest(&mask, 0.5, seed).unwrap();
        prop_assert_eq!(a.labels(), b.labels());
        let d = DistanceMatrix::from_plan(&a).unwrap();
        prop_assert_eq!(SelectionVector::from_plan(&a).retained_count(), a.retained().len());
        prop_assert_eq!(d.len(), a.masked().len());
    }

    #[test]
    fn patchify_round_trips(rows in 1usize..5, cols in 1usize..5, p in 1usize..5, ch in 1usize..4, seed: u64) {
        let mut x = seed;
        let img = Tensor::from_fn([ch, rows * p, cols * p], |_| {
            x = prmim::rng::splitmix64(x);
            (x >> 11) as f64 / (1u64 << 53) as f64
        });
        let patches = patchify(&img, p).unwrap();
        prop_assert_eq!(patches.shape(), &[rows * cols, p * p * ch]);
        prop_assert_eq!(unpatchify(&patches, rows, cols, p, ch).unwrap(), img);
    }

    #[test]
    fn ppm_round_trips_byte_levels(h in 1usize..9, w in 1usize..9, levels in prop::collection::vec(0u8..=255, 3 * 64)) {
        let img = Tensor::from_fn([3, h, w], |i| levels[i % levels.len()] as f64 / 255.0);
        let bytes = encode_ppm(&img, &["seed: 1".to_string()]).unwrap();
        let back = decode_ppm(&bytes).unwrap();
        prop_assert!(back.max_abs_diff(&img) < 1e-12);
        prop_assert_eq!(encode_ppm(&back, &["seed: 1".to_string()]).unwrap(), bytes);
    }

    #[test]
    fn checkpoint_round_trips_at_f32(seed: u64) {
        let c = ModelConfig::toy();
        let p = ParameterSet::init(&c, seed).unwrap();
        let bytes = encode_checkpoint(&p);
        let q = decode_checkpoint(&bytes, &c).unwrap();
        for ((na, a), (nb, b)) in p.iter().zip(q.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x as f32 == *y as f32));
        }
        prop_assert_eq!(encode_checkpoint(&q), bytes);
    }

    #[test]
    fn cost_falls_as_more_tokens_are_thrown(a in 0.0f64..0.75, b in 0.0f64..0.75) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c = ModelConfig::mae_vit_base();
        let r_lo = cost_report(&c, 0.75, lo, Convention::MacIsOneFlop).unwrap();
        let r_hi = cost_report(&c, 0.75, hi, Convention::MacIsOneFlop).unwrap();
        prop_assert!(r_hi.flops_ratio <= r_lo.flops_ratio);
        prop_assert!(r_hi.memory_ratio <= r_lo.memory_ratio);
        prop_assert!(r_lo.flops_ratio <= 1.0 + 1e-12);
        let two = cost_report(&c, 0.75, lo, Convention::MacIsTwoFlops).unwrap();
        prop_assert!((two.total_flops_g - 2.0 * r_lo.total_flops_g).abs() < 1e-9);
    }
}
