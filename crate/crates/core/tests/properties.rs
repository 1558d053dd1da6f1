use proptest::prelude::*;

use nvsim::cli::csv::format_number;
use nvsim::fit::{assign_lines, residuals, synthetic_dataset, FitModel};
use nvsim::model::FineStructureParams;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifted_copy_assigns_in_order(
        pred in prop::collection::vec(-30.0f64..30.0, 6),
        shift in -0.01f64..0.01,
    ) {
        let meas: Vec<f64> = pred.iter().map(|x| x + shift).collect();
        let a = assign_lines(&pred, &meas).unwrap();
        prop_assert!(a.cost <= 6.0 * shift.abs() + 1e-12);
        let mut used: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
        used.sort();
        used.dedup();
        prop_assert_eq!(used.len(), 6);
    }

    #[test]
    fn assignment_is_injective_and_order_preserving(
        pred in prop::collection::vec(-30.0f64..30.0, 6),
        meas in prop::collection::vec(-30.0f64..30.0, 1..=6),
    ) {
        let a = assign_lines(&pred, &meas).unwrap();
        prop_assert_eq!(a.pairs.len(), meas.len());
        for w in a.pairs.windows(2) {
            prop_assert!(meas[w[0].0] <= meas[w[1].0]);
            prop_assert!(pred[w[0].1] <= pred[w[1].1]);
            prop_assert!(w[0].1 != w[1].1);
        }
    }

    #[test]
    fn offset_gauge(seed in 0u64..1000, c in -50.0f64..50.0, which in 0usize..4) {
        let p = FineStructureParams::default();
        let mut data = synthetic_dataset(&p, 4, (0.5, 20.0), 0.01, seed).unwrap();
        let mut fm = FitModel::new(&p, 4);
        fm.defects = data.truth.clone();
        let before = residuals(&fm, &data.defects).unwrap();
        data.defects[which].lines.iter_mut().for_each(|x| *x += c);
        fm.defects[which].offset += c;
        let after = residuals(&fm, &data.defects).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_numbers_keep_nine_digits(x in prop::num::f64::NORMAL) {
        let s = format_number(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-9, "{} -> {}", x, s);
        let digits = s
            .split('e')
            .next()
            .unwrap()
            .chars()
            .filter(char::is_ascii_digit)
            .collect::<String>();
        prop_assert!(digits.trim_start_matches('0').len() >= 9, "{}", s);
    }
}
