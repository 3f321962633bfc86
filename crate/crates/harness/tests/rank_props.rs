//! Rank-aggregation properties over randomized fixtures.

use adaptlab_core::metrics::MetricReport;
use adaptlab_harness::report::{rank_protocols, SummaryRow};
use proptest::prelude::*;

fn report_from(values: &[f64]) -> MetricReport {
    MetricReport {
        id_acc: values[0],
        ood_acc: values[1 % values.len()],
        corr_acc: values[2 % values.len()],
        rand_acc: values[3 % values.len()],
        mca: values[4 % values.len()],
        adv_acc: values[5 % values.len()],
        calib_id: values[6 % values.len()],
        calib_corr: values[7 % values.len()],
        calib_ood: values[8 % values.len()],
        anomaly_auroc: values[9 % values.len()],
        cka: values[10 % values.len()],
    }
}

proptest! {
    /// Mean ranks over protocols always sum to k(k+1)/2 per metric, for any
    /// number of settings, including ties.
    #[test]
    fn mean_ranks_sum_to_permutation_total(
        k in 2usize..6,
        n_settings in 1usize..4,
        raw in proptest::collection::vec(0u8..8, 6 * 4 * 11),
    ) {
        let mut rows = Vec::new();
        let mut idx = 0;
        for s in 0..n_settings {
            let rho = 0.9 + s as f64 / 100.0;
            for p in 0..k {
                // Coarse values so ties happen often.
                let values: Vec<f64> = (0..11)
                    .map(|_| {
                        let v = raw[idx % raw.len()] as f64 / 8.0;
                        idx += 1;
                        v
                    })
                    .collect();
                rows.push(SummaryRow {
                    rho,
                    protocol: format!("p{p}"),
                    id_val_acc: 0.5,
                    seeds: 3,
                    report: report_from(&values),
                });
            }
        }
        let table = rank_protocols(&rows).unwrap();
        for metric in MetricReport::FIELDS {
            let total: f64 = table
                .entries
                .iter()
                .filter(|(m, _, _)| m == metric)
                .map(|(_, _, r)| r)
                .sum();
            let expect = (k * (k + 1)) as f64 / 2.0;
            prop_assert!(
                (total - expect).abs() < 1e-9,
                "metric {metric}: rank total {total} != {expect}"
            );
        }
    }
}
