use disdis::bound::{
    calibrate, error_bound, sample_correction, violation_rates, write_calibration_csv, BoundReport,
    CalibrationScenario,
};
use disdis::critic::{FeatureMap, LinearCritic, TrainConfig};
use disdis::data::{Dataset, GaussianShiftSpec, Origin};
use disdis::SurrogateKind;
use proptest::prelude::*;

proptest! {
    #[test]
    fn correction_shrinks_with_more_data_and_larger_delta(
        ns in 1usize..5000, nt in 1usize..5000, extra in 1usize..1000, delta in 0.001f64..0.99, dd in 0.0f64..0.5
    ) {
        let c = sample_correction(ns, nt, delta).unwrap();
        prop_assert!(sample_correction(ns + extra, nt, delta).unwrap() < c);
        prop_assert!(sample_correction(ns, nt + extra, delta).unwrap() < c);
        prop_assert!(sample_correction(ns, nt, (delta + 0.005).min(0.999)).unwrap() < c);
        let low = BoundReport::from_terms(0.1, dd, delta, ns, nt, None).unwrap();
        let high = BoundReport::from_terms(0.1, dd + 0.01, delta, ns, nt, None).unwrap();
        prop_assert!(high.bound > low.bound);
        prop_assert_eq!(low.bound, low.source_test_error + low.empirical_dd + low.sample_correction);
    }
}

fn line(xs: &[f64], labels: Option<Vec<usize>>, origin: Origin) -> Dataset {
    Dataset::new(xs.to_vec(), 1, labels, origin).unwrap()
}

#[test]
fn matching_critic_and_perfect_reference_leave_only_the_correction() {
    // Predicts class 1 exactly when x > 0.5.
    let reference = LinearCritic::from_parts(2, 1, FeatureMap::RawInput, vec![0.0, 10.0], vec![0.0, -5.0]).unwrap();
    let src = line(&[0.1, 0.2, 0.8, 0.9], Some(vec![0, 0, 1, 1]), Origin::Source);
    let tgt = line(&[0.3, 0.7, 0.95], Some(vec![0, 0, 1]), Origin::Target);
    let r = error_bound(&src, &tgt, &reference, &reference, 0.05).unwrap();
    assert_eq!(r.source_test_error, 0.0);
    assert_eq!(r.empirical_dd, 0.0);
    assert_eq!(r.bound, r.sample_correction);
    assert_eq!(r.true_target_error, Some(1.0 / 3.0));
    assert_eq!(r.premise_holds, Some(false));
}

#[test]
fn critic_split_by_domain_reaches_unit_discrepancy() {
    let reference = LinearCritic::from_parts(2, 1, FeatureMap::RawInput, vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
    let critic = LinearCritic::from_parts(2, 1, FeatureMap::RawInput, vec![0.0, 10.0], vec![0.0, -5.0]).unwrap();
    let src = line(&[0.0, 0.1, 0.2], Some(vec![0, 0, 0]), Origin::Source);
    let tgt = line(&[0.8, 0.9], None, Origin::Target);
    let r = error_bound(&src, &tgt, &reference, &critic, 0.1).unwrap();
    assert_eq!(r.empirical_dd, 1.0);
    assert_eq!(r.true_target_error, None);
    assert_eq!(r.violated(), None);
    let empty = Dataset::new(vec![], 1, None, Origin::Target);
    assert!(empty.is_err() || error_bound(&src, &empty.unwrap(), &reference, &critic, 0.1).is_err());
}

#[test]
fn no_shift_scenario_is_never_violated() {
    let mut data = GaussianShiftSpec::translated(3, 2, 2.0, 0.0, 400, 400);
    data.target_means = data.source_means.clone();
    let scenario = CalibrationScenario {
        data,
        critic: TrainConfig { restarts: 3, batch_size: Some(64), ..TrainConfig::default() },
        ..CalibrationScenario::default()
    };
    let seeds: Vec<u64> = (0..20).collect();
    let deltas = [0.01, 0.05, 0.5];
    let rows = calibrate(&scenario, &[SurrogateKind::Ours], &deltas, &seeds).unwrap();
    assert_eq!(rows.len(), 60);
    for (_, delta, rate) in violation_rates(&rows) {
        assert!(rate <= 0.05, "delta {delta}: violation rate {rate}");
    }
    let mut out = Vec::new();
    write_calibration_csv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("kind,delta,seed,srcErr,dd,correction,bound,trueErr,violated\n"));
    assert_eq!(text.lines().count(), 61);
}
