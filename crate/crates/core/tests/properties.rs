use fewshot_core::episodes::{corrupted_count, inject_symmetric_noise, LabeledExample, NoiseSpec, Split, SplitDataset};
use fewshot_core::eval::ci95;
use fewshot_core::noise_analysis::{clean_selection_probability, permanent, ConfusionMatrixQ};
use proptest::prelude::*;

fn dataset(sizes: &[usize]) -> SplitDataset {
    let mut id = 0;
    let examples: Vec<LabeledExample> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
        .map(|(c, i)| {
            id += 1;
            LabeledExample::new(vec![c as f64, i as f64], c, id)
        })
        .collect();
    SplitDataset::from_examples(Split::Train, examples)
}

proptest! {
    #[test]
    fn noise_corrupts_exact_counts(
        sizes in prop::collection::vec(1usize..40, 2..6),
        eps in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let data = dataset(&sizes);
        let noisy = inject_symmetric_noise(&data, NoiseSpec::new(eps, seed).unwrap()).unwrap();
        for (c, &n) in sizes.iter().enumerate() {
            let hit = noisy.examples().filter(|e| e.ground_truth() == c && e.is_corrupted()).count();
            prop_assert_eq!(hit, corrupted_count(eps, n));
        }
        prop_assert!(noisy.examples().all(|e| e.label < sizes.len()));
        prop_assert_eq!(noisy.len(), data.len());
    }

    #[test]
    fn permanent_ignores_row_and_column_order(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 5),
        shift in 1usize..5,
    ) {
        let mut swapped = rows.clone();
        swapped.rotate_left(shift);
        let transposed: Vec<Vec<f64>> = (0..5).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let p = permanent(&rows);
        prop_assert!((p - permanent(&swapped)).abs() <= 1e-9 * (1.0 + p.abs()));
        prop_assert!((p - permanent(&transposed)).abs() <= 1e-9 * (1.0 + p.abs()));
    }

    #[test]
    fn clean_probability_is_a_probability(ways in 2usize..=8, eps in 0.0f64..=1.0) {
        let p = clean_selection_probability(&ConfusionMatrixQ::from_noise(ways, eps).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        // never below the chance that every way is clean
        prop_assert!(p >= (1.0 - eps).powi(ways as i32) - 1e-12);
    }

    #[test]
    fn ci95_is_shift_invariant_and_scales(values in prop::collection::vec(-5.0f64..5.0, 2..50), shift in -3.0f64..3.0, scale in 0.1f64..4.0) {
        let base = ci95(&values).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        prop_assert!((ci95(&shifted).unwrap() - base).abs() <= 1e-9);
        prop_assert!((ci95(&scaled).unwrap() - scale * base).abs() <= 1e-9 * (1.0 + base));
    }
}
