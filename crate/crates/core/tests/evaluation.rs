use chrono::NaiveDate;
use proptest::prelude::*;

use rcast_core::dataset::{preprocess, PreprocessConfig};
use rcast_core::evaluation::{
    aggregate, classify_delta, confusion_and_metrics, grid_search, make_splits, select_config, Curve,
    DeltaClass, Split, SplitPlan,
};
use rcast_core::models::{ArimaFamily, EsnFamily, Forecaster, GridSpec, ModelFamily, Registry, RunContext};
use rcast_core::synthetic::SineFixture;

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn class() -> impl Strategy<Value = DeltaClass> {
    prop::sample::select(DeltaClass::ALL.to_vec())
}

proptest! {
    #[test]
    fn label_depends_only_on_endpoints(
        curve in prop::collection::vec(0.0f64..1.0, 2..60),
        interior in prop::collection::vec(-5.0f64..5.0, 0..60),
    ) {
        let mut edited = curve.clone();
        let n = edited.len();
        for (i, v) in interior.iter().enumerate().take(n.saturating_sub(2)) {
            edited[i + 1] = *v;
        }
        prop_assert_eq!(classify_delta(&curve), classify_delta(&edited));
    }

    #[test]
    fn confusion_margins_match_label_counts(pairs in prop::collection::vec((class(), class()), 0..200)) {
        let (a, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let c = confusion_and_metrics(&a, &p).unwrap();
        let total: u64 = c.counts.iter().flatten().sum();
        prop_assert_eq!(total, pairs.len() as u64);
        for (i, k) in DeltaClass::ALL.iter().enumerate() {
            let row: u64 = c.counts[i].iter().sum();
            let col: u64 = (0..3).map(|r| c.counts[r][i]).sum();
            prop_assert_eq!(row, a.iter().filter(|x| *x == k).count() as u64);
            prop_assert_eq!(col, p.iter().filter(|x| *x == k).count() as u64);
        }
    }

    #[test]
    fn selection_picks_the_lowest_median(scores in prop::collection::vec(prop::collection::vec(prop::option::of(0.0f64..1.0), 4), 1..8)) {
        let eligible = [0, 1, 2];
        let (best, score) = select_config(&scores, &eligible).unwrap();
        for (i, row) in scores.iter().enumerate() {
            let mut v: Vec<f64> = eligible.iter().map(|&j| row[j].unwrap_or(f64::INFINITY)).collect();
            v.sort_by(f64::total_cmp);
            let m = v[1];
            prop_assert!(score <= m);
            if i < best {
                prop_assert!(m > score);
            }
        }
    }
}

#[test]
fn boundary_convention() {
    assert_eq!(classify_delta(&[0.0, 0.04]).label, DeltaClass::NoChange);
    assert_eq!(classify_delta(&[0.0, 0.0400001]).label, DeltaClass::Deterioration);
    assert_eq!(classify_delta(&[0.0, -0.04]).label, DeltaClass::NoChange);
    assert_eq!(classify_delta(&[0.0, -0.0400001]).label, DeltaClass::Improvement);
}

#[test]
fn eligibility_respects_window_ends() {
    let plan = SplitPlan::new(vec![
        Split { cutoff: d("2021-01-01"), horizon: 60 },
        Split { cutoff: d("2021-01-31"), horizon: 60 },
        Split { cutoff: d("2021-03-02"), horizon: 60 },
        Split { cutoff: d("2021-04-01"), horizon: 60 },
    ])
    .unwrap();
    assert!(plan.eligible_before(0).is_empty());
    assert!(plan.eligible_before(1).is_empty());
    assert_eq!(plan.eligible_before(2), vec![0]);
    assert_eq!(plan.eligible_before(3), vec![0, 1]);
    for k in 0..4 {
        for j in plan.eligible_before(k) {
            assert!(plan.splits[j].window_end() <= plan.splits[k].cutoff);
        }
    }
}

#[test]
fn split_plans_reject_bad_input() {
    assert!(make_splits(d("2021-01-01"), 0, 60).is_err());
    assert!(make_splits(d("2021-01-01"), 3, 0).is_err());
    let twice = Split { cutoff: d("2021-01-01"), horizon: 10 };
    assert!(SplitPlan::new(vec![twice.clone(), twice]).is_err());
}

#[test]
fn aggregate_counts_and_nonnegative_rmse() {
    let curve = |region: &str, pred: Vec<f64>, actual: Vec<f64>| Curve {
        config_id: "m".into(),
        cutoff: d("2021-01-01"),
        region: region.into(),
        origin: actual[0],
        pred,
        actual,
    };
    let curves = vec![
        curve("a", vec![0.1, 0.2, 0.3], vec![0.1, 0.1, 0.1]),
        curve("b", vec![0.5, 0.5, 0.5], vec![0.5, 0.55, 0.6]),
        curve("c", vec![0.3, 0.3, 0.2], vec![0.3, 0.3, 0.2]),
    ];
    let r = aggregate(&curves).unwrap();
    assert_eq!(r.n_curves, 3);
    assert_eq!(r.confusion.counts.iter().flatten().sum::<u64>(), 3);
    assert!(r.median_rmse >= 0.0);
    assert!(r.rmse_by_step.iter().all(|v| *v >= 0.0));
    assert_eq!(r.rmse_by_step.len(), 3);
}

#[test]
fn registry_resolves_families_by_name() {
    let reg = Registry::standard(EsnFamily::default(), ArimaFamily::default());
    assert_eq!(reg.names(), vec!["arima", "esn-ensemble"]);
    assert_eq!(reg.get("arima").unwrap().default_model().config_id(), "arima:(1,1,1)");
    assert!(reg.get("prophet").is_err());
    let grid = GridSpec::default();
    assert_eq!(reg.get("esn-ensemble").unwrap().grid_models(&grid).len(), 2500);
    assert_eq!(reg.get("arima").unwrap().grid_models(&grid).len(), 40);
}

#[test]
fn arima_grid_search_end_to_end() {
    let fx = SineFixture {
        days: 620,
        regions: vec!["a".into(), "b".into()],
        ..SineFixture::default()
    };
    let (frame, _) = preprocess(&fx.frame().unwrap(), &PreprocessConfig::default()).unwrap();
    let plan = make_splits(d("2021-01-10"), 6, 30).unwrap();
    let fam = ArimaFamily {
        min_train_days: 300,
        ..ArimaFamily::default()
    };
    let models: Vec<Box<dyn Forecaster>> = fam.grid_models(&GridSpec::default()).into_iter().step_by(7).collect();
    let fallback = fam.default_model();
    let out = grid_search(&models, fallback.as_ref(), &frame, &plan, &RunContext { workers: 2 }).unwrap();
    let r = &out.report;
    assert_eq!(r.selections.len(), 6);
    assert!(r.selections[0].fallback);
    assert_eq!(r.selections[0].config_id, "arima:(1,1,1)");
    assert!(!r.selections[5].fallback);
    assert_eq!(r.leaderboard.len(), models.len());
    assert!(r.leaderboard.windows(2).all(|w| w[0].median_rmse.unwrap_or(f64::INFINITY)
        <= w[1].median_rmse.unwrap_or(f64::INFINITY)));
    // Two regions per scored cell.
    let metrics = r.metrics.as_ref().unwrap();
    assert_eq!(metrics.confusion.counts.iter().flatten().sum::<u64>() as usize, metrics.n_curves);
    assert!(metrics.n_curves <= 12);
}
