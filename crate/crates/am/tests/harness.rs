use am::ameb::{load_embeddings, save_embeddings, to_single_precision};
use am::harness::{config_snapshot, read_report_csv, run_eval, write_report_csv, EvalReport, TaskRecord};
use am_core::embed::{synth_gaussian, SynthConfig};
use am_core::episodes::TaskConfig;
use am_core::solver::SolverConfig;
use proptest::prelude::*;

#[test]
fn evaluation_from_disk_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ameb");
    let set = to_single_precision(
        &synth_gaussian(&SynthConfig {
            num_classes: 7,
            dim: 10,
            per_class: 30,
            class_sep: 3.0,
            noise_sigma: 1.0,
            seed: 4,
        })
        .unwrap(),
    );
    save_embeddings(&set, &path).unwrap();
    let loaded = load_embeddings(&path).unwrap();
    assert_eq!(loaded.vectors(), set.vectors());

    let tasks = TaskConfig {
        m_query: 20,
        ..TaskConfig::imbalanced(1, 5, 2)
    };
    let solver = SolverConfig {
        r_steps: 4,
        ..SolverConfig::defaults(1, false)
    };
    let a = run_eval(&set, &tasks, &solver, 1).unwrap();
    let b = run_eval(&loaded, &tasks, &solver, 2).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn identical_accuracies_give_zero_interval() {
    let set = synth_gaussian(&SynthConfig {
        num_classes: 5,
        dim: 8,
        per_class: 30,
        class_sep: 50.0,
        noise_sigma: 0.01,
        seed: 1,
    })
    .unwrap();
    let tasks = TaskConfig {
        m_query: 10,
        ..TaskConfig::balanced(1, 4, 0)
    };
    let solver = SolverConfig {
        r_steps: 1,
        ..SolverConfig::defaults(1, true)
    };
    let r = run_eval(&set, &tasks, &solver, 1).unwrap();
    assert!(r.per_task_accuracy().iter().all(|&a| a == 1.0));
    assert_eq!(r.ci95, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_numbers_round_trip_exactly(
        rows in prop::collection::vec((any::<f64>(), any::<f64>(), prop::collection::vec(0usize..80, 5)), 1..20),
        mean in any::<f64>(),
        ci in any::<f64>(),
    ) {
        prop_assume!(rows.iter().all(|(a, l, _)| a.is_finite() && l.is_finite()));
        prop_assume!(mean.is_finite() && ci.is_finite());
        let report = EvalReport {
            records: rows
                .iter()
                .enumerate()
                .map(|(i, (a, l, c))| TaskRecord {
                    task_index: i as u64,
                    accuracy: *a,
                    loss_final: *l,
                    query_counts: c.clone(),
                })
                .collect(),
            mean_accuracy: mean,
            ci95: ci,
            config_snapshot: config_snapshot(&TaskConfig::imbalanced(1, 1, 0), &SolverConfig::defaults(1, false)),
            wall_time_seconds: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report_csv(&report, &path).unwrap();
        let back = read_report_csv(&path).unwrap();
        prop_assert_eq!(back.records, report.records);
        prop_assert_eq!(back.mean_accuracy.to_bits(), mean.to_bits());
        prop_assert_eq!(back.ci95.to_bits(), ci.to_bits());
    }
}
