use rand::Rng;

use super::*;
use crate::rng;

const ALL: [Family; 7] = [
    Family::LinearWls,
    Family::LinearSgd,
    Family::Poisson,
    Family::SvrLinear,
    Family::Tree,
    Family::Forest,
    Family::BoostedTrees,
];

/// Two covariates, treatment by coin flip, non-negative outcome with a
/// heterogeneous effect.
fn synthetic(n: usize, seed: u64) -> Dataset<f64> {
    let mut r = rng::stream(seed, "outcome-tests");
    let mut x = Vec::with_capacity(2 * n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x0: f64 = r.random::<f64>() * 2.0 - 1.0;
        let x1: f64 = r.random::<f64>() * 2.0 - 1.0;
        let t = r.random::<bool>() as u8;
        let noise: f64 = r.random::<f64>() - 0.5;
        x.extend([x0, x1]);
        a.push(t);
        y.push(5.0 + x0 + t as f64 * (2.0 + x1) + noise);
    }
    Dataset::new(vec!["x0".into(), "x1".into()], x, a, y).unwrap()
}

fn small_spec(family: Family) -> ModelSpec {
    let mut s = ModelSpec::new(family);
    s.hyper.n_trees = Some(8);
    s.hyper.rounds = Some(10);
    s.hyper.epochs = Some(10);
    s.hyper.min_leaf = Some(5);
    s
}

#[test]
fn unit_weights_equal_omitted_weights() {
    let d = synthetic(300, 1);
    let ones = vec![1.0; d.n()];
    for f in ALL {
        let spec = small_spec(f);
        let a = fit_outcome_model(&d, None, &spec).unwrap();
        let b = fit_outcome_model(&d, Some(&ones), &spec).unwrap();
        assert_eq!(a, b, "{f:?}");
    }
}

#[test]
fn doubling_weights_changes_nothing() {
    let d = synthetic(300, 2);
    let mut r = rng::stream(2, "w");
    let w: Vec<f64> = (0..d.n()).map(|_| 0.2 + 3.0 * r.random::<f64>()).collect();
    let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
    for f in ALL {
        let spec = small_spec(f);
        let a = fit_outcome_model(&d, Some(&w), &spec).unwrap();
        let b = fit_outcome_model(&d, Some(&w2), &spec).unwrap();
        assert_eq!(a.params, b.params, "{f:?}");
    }
}

#[test]
fn noiseless_linear_recovery() {
    let mut r = rng::stream(3, "noiseless");
    let n = 50;
    let x: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
    let a: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let y: Vec<f64> = x.iter().zip(&a).map(|(&x, &a)| 2.0 + 3.0 * x - a as f64).collect();
    let d = Dataset::new(vec!["x1".into()], x, a, y).unwrap();
    let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64).collect();
    let m = fit_outcome_model(&d, Some(&w), &ModelSpec::new(Family::LinearWls)).unwrap();
    let Params::Linear { intercept, coefficients } = &m.params else {
        panic!("expected a linear model")
    };
    assert!((intercept - 2.0).abs() < 1e-6);
    assert!((coefficients[0] - 3.0).abs() < 1e-6);
    assert!((coefficients[1] + 1.0).abs() < 1e-6);
    assert!(coefficients[2].abs() < 1e-6);
    assert!(m.diagnostics.final_loss < 1e-12);
}

#[test]
fn closed_form_and_sgd_agree() {
    let d = synthetic(1000, 4);
    let mut r = rng::stream(4, "w");
    let w: Vec<f64> = (0..d.n()).map(|_| 0.5 + r.random::<f64>()).collect();
    let exact = fit_outcome_model(&d, Some(&w), &ModelSpec::new(Family::LinearWls)).unwrap();
    let sgd = fit_outcome_model(&d, Some(&w), &ModelSpec::new(Family::LinearSgd)).unwrap();
    let mut se = 0.0;
    for i in 0..d.n() {
        let p = exact.predict(d.row(i), d.treatment()[i]).unwrap();
        let q = sgd.predict(d.row(i), d.treatment()[i]).unwrap();
        se += (p - q) * (p - q);
    }
    let rmse = (se / d.n() as f64).sqrt();
    assert!(rmse < 1e-3, "rmse {rmse}");
}

fn linear_model(coefficients: Vec<f64>, interactions: bool, treatment: bool, intercept: f64) -> OutcomeModel<f64> {
    OutcomeModel {
        family: Family::LinearWls,
        loss_kind: LossKind::SquaredError,
        feature_map: FeatureMap {
            covariates: 2,
            treatment,
            interactions,
        },
        params: Params::Linear { intercept, coefficients },
        diagnostics: Diagnostics {
            final_loss: 0.0,
            iterations: 0,
            round_losses: Vec::new(),
            dropped: Vec::new(),
        },
    }
}

#[test]
fn additive_treatment_term_gives_constant_ite() {
    let d = synthetic(100, 5);
    let m = linear_model(vec![1.7, -0.3, 3.0], false, true, 0.25);
    let t = compute_ite(&m, &d).unwrap();
    assert!(t.records.iter().all(|r| r.ite == 3.0));
}

#[test]
fn treatment_blind_model_has_zero_ite() {
    let d = synthetic(200, 6);
    let m = fit_outcome_model(&d, None, &ModelSpec::new(Family::LinearWls).without_treatment()).unwrap();
    assert_eq!(m.feature_map.dim(), 2);
    let t = compute_ite(&m, &d).unwrap();
    assert!(t.records.iter().all(|r| r.ite == 0.0));
    let b = fit_outcome_model(&d, None, &small_spec(Family::BoostedTrees).without_treatment()).unwrap();
    assert!(compute_ite(&b, &d).unwrap().records.iter().all(|r| r.ite == 0.0));
}

#[test]
fn interaction_model_matches_symbolic_effect() {
    // f(x, a) = a * (2 + x1): coefficients [x0, x1, a, a*x0, a*x1]
    let m = linear_model(vec![0.0, 0.0, 2.0, 0.0, 1.0], true, true, 0.0);
    let mut r = rng::stream(7, "sym");
    let x: Vec<f64> = (0..200).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
    let d = Dataset::new(vec!["x0".into(), "x1".into()], x, vec![0; 100], vec![0.0; 100]).unwrap();
    let t = compute_ite(&m, &d).unwrap();
    for (i, rec) in t.records.iter().enumerate() {
        let expected = 2.0 + d.row(i)[1];
        assert!((rec.ite - expected).abs() < 1e-12);
        assert_eq!(rec.index, i);
    }
    assert!(m.heterogeneous());
}

#[test]
fn fitted_additive_linear_model_has_exactly_constant_ite() {
    let d = synthetic(500, 8);
    for f in [Family::LinearWls, Family::LinearSgd, Family::SvrLinear] {
        let m = fit_outcome_model(&d, None, &small_spec(f).without_interactions()).unwrap();
        assert!(!m.heterogeneous());
        let t = compute_ite(&m, &d).unwrap();
        let first = t.records[0].ite;
        assert!(t.records.iter().all(|r| r.ite == first), "{f:?}");
    }
}

#[test]
fn ite_equals_prediction_difference() {
    let d = synthetic(200, 9);
    for f in ALL {
        let m = fit_outcome_model(&d, None, &small_spec(f)).unwrap();
        let t = compute_ite(&m, &d).unwrap();
        for r in &t.records {
            let diff = r.y_hat_1 - r.y_hat_0;
            assert!((r.ite - diff).abs() <= 4.0 * f64::EPSILON * r.y_hat_1.abs().max(1.0), "{f:?}");
            if f.is_tree_based() || f == Family::Poisson {
                assert_eq!(r.ite, diff);
            }
        }
    }
}

#[test]
fn wls_with_interactions_recovers_heterogeneous_effect() {
    let d = synthetic(4000, 10);
    let m = fit_outcome_model(&d, None, &ModelSpec::new(Family::LinearWls)).unwrap();
    let t = compute_ite(&m, &d).unwrap();
    for (i, r) in t.records.iter().enumerate() {
        assert!((r.ite - (2.0 + d.row(i)[1])).abs() < 0.1);
    }
}

#[test]
fn tree_predictions_are_piecewise_constant() {
    let d = synthetic(400, 11);
    let m = fit_outcome_model(&d, None, &ModelSpec::new(Family::Tree)).unwrap();
    let Params::Ensemble { trees, .. } = &m.params else {
        panic!("expected trees")
    };
    let splits = trees[0].thresholds();
    assert!(!splits.is_empty());
    for i in 0..d.n() {
        let x = d.row(i);
        let a = d.treatment()[i];
        let mut z = vec![0.0; 3];
        m.feature_map.encode(x, a, &mut z);
        let margin = splits
            .iter()
            .map(|&(f, t)| (z[f] - t).abs())
            .filter(|&m| m > 0.0)
            .fold(f64::INFINITY, f64::min);
        let delta = 0.49 * margin.min(1.0);
        let base = m.predict(x, a).unwrap();
        for sign in [-1.0, 1.0] {
            let moved: Vec<f64> = x.iter().map(|&v| v + sign * delta).collect();
            assert_eq!(m.predict(&moved, a).unwrap(), base);
        }
    }
}

#[test]
fn poisson_predictions_are_positive_and_negative_outcomes_rejected() {
    let d = synthetic(300, 12);
    let m = fit_outcome_model(&d, None, &small_spec(Family::Poisson)).unwrap();
    let t = compute_ite(&m, &d).unwrap();
    assert!(t.records.iter().all(|r| r.y_hat_0 > 0.0 && r.y_hat_1 > 0.0));
    let neg = d.with_outcome(d.outcome().iter().map(|y| y - 7.0).collect()).unwrap();
    assert!(fit_outcome_model(&neg, None, &small_spec(Family::Poisson)).is_err());
}

#[test]
fn boosting_records_non_increasing_loss() {
    let d = synthetic(500, 13);
    let m = fit_outcome_model(&d, None, &ModelSpec::new(Family::BoostedTrees)).unwrap();
    let l = &m.diagnostics.round_losses;
    assert_eq!(l.len(), 101);
    for pair in l.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12 * l[0]);
    }
}

#[test]
fn weights_must_be_positive_and_match() {
    let d = synthetic(10, 14);
    let spec = ModelSpec::new(Family::LinearWls);
    let mut w = vec![1.0; 10];
    w[3] = 0.0;
    assert!(fit_outcome_model(&d, Some(&w), &spec).is_err());
    assert!(matches!(
        fit_outcome_model(&d, Some(&[1.0; 9]), &spec),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn constant_outcome_gives_constant_model() {
    let d = synthetic(50, 15);
    let c = d.with_outcome(vec![4.0; 50]).unwrap();
    for f in ALL {
        let m = fit_outcome_model(&c, None, &small_spec(f)).unwrap();
        assert_eq!(m.params, Params::Constant { value: 4.0 });
        assert!(compute_ite(&m, &c).unwrap().records.iter().all(|r| r.ite == 0.0));
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let d = synthetic(50, 16);
    let m = fit_outcome_model(&d, None, &ModelSpec::new(Family::LinearWls)).unwrap();
    let wider = d.with_covariate("extra", &[0.0; 50]).unwrap();
    assert!(matches!(
        compute_ite(&m, &wider),
        Err(Error::DimensionMismatch { expected: 2, found: 3 })
    ));
}

#[test]
fn models_roundtrip_through_json() {
    let d = synthetic(200, 17);
    let dir = tempfile::tempdir().unwrap();
    for f in ALL {
        let m = fit_outcome_model(&d, None, &small_spec(f)).unwrap();
        let path = dir.path().join(format!("{}.json", f.name()));
        m.save(&path).unwrap();
        let back = OutcomeModel::<f64>::load(&path).unwrap();
        assert_eq!(compute_ite(&m, &d).unwrap(), compute_ite(&back, &d).unwrap(), "{f:?}");
    }
}

#[test]
fn clamping_for_reports() {
    let t = IteTable {
        records: vec![IteRecord {
            index: 0,
            ite: 35.0,
            y_hat_1: 34.0,
            y_hat_0: -1.0,
        }],
    };
    let c = t.clamped(0.0, 30.0);
    assert_eq!(c.records[0].ite, 30.0);
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let d = synthetic(20, 18);
    let mut s = ModelSpec::new(Family::Forest);
    s.hyper.interactions = Some(true);
    assert!(fit_outcome_model(&d, None, &s).is_err());
    let mut s = ModelSpec::new(Family::SvrLinear);
    s.hyper.c = Some(0.0);
    assert!(fit_outcome_model(&d, None, &s).is_err());
}

#[test]
fn single_precision_fit() {
    let d = synthetic(300, 19);
    let x: Vec<f32> = d.covariates().iter().map(|&v| v as f32).collect();
    let y: Vec<f32> = d.outcome().iter().map(|&v| v as f32).collect();
    let d32 = Dataset::<f32>::new(d.covariate_names().to_vec(), x, d.treatment().to_vec(), y).unwrap();
    let m = fit_outcome_model(&d32, None, &ModelSpec::new(Family::LinearWls)).unwrap();
    let t = compute_ite(&m, &d32).unwrap();
    assert!((t.mean_ite() - 2.0).abs() < 0.2);
}
