use std::path::PathBuf;

use splitrank::dataset::{load_dataset, read_dataset, save_dataset, Schema};
use splitrank::simulate::{simulate_cohort, SimConfig, SimMode};
use splitrank::{Dataset, Error, F32Dataset};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn fixture_loads_with_its_schema() {
    let schema = Schema::load(fixture("cohort.schema.json")).unwrap();
    let d: Dataset = load_dataset(fixture("cohort.csv"), &schema).unwrap();
    assert_eq!((d.n(), d.k()), (8, 2));
    assert_eq!(d.covariate_names(), ["age", "tenure"]);
    assert_eq!(d.treated_count(), 4);
    assert_eq!(d.row(2), [1.1, -0.7]);
    assert_eq!(d.outcome()[7], 2.25);
    assert!(d.ground_truth().is_none());

    let single: F32Dataset = load_dataset(fixture("cohort.csv"), &schema).unwrap();
    assert_eq!(single.outcome()[2], 15.25f32);
}

#[test]
fn missing_file_error_names_the_path() {
    let schema = Schema::load(fixture("cohort.schema.json")).unwrap();
    let e = load_dataset::<f64>(fixture("absent.csv"), &schema).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert!(e.to_string().contains("absent.csv"));
}

#[test]
fn simulated_oracle_round_trips_through_csv() {
    let out = simulate_cohort::<f64>(&SimConfig {
        n: 400,
        k: 6,
        mode: SimMode::Confounded,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oracle.csv");
    let schema = Schema::for_dataset(&out.oracle);
    save_dataset(&out.oracle, &path, &schema, Some("round trip")).unwrap();
    let back: Dataset = load_dataset(&path, &schema).unwrap();
    assert_eq!(back, out.oracle);
    assert!(back.ground_truth().unwrap().iter().all(|g| g.u.is_some()));

    // The observed view drops every ground-truth column.
    let mut buf = Vec::new();
    let observed_schema = Schema::for_dataset(&out.observed);
    splitrank::dataset::write_dataset(&out.observed, &mut buf, &observed_schema, None).unwrap();
    let header = String::from_utf8(buf.clone()).unwrap().lines().next().unwrap().to_string();
    assert!(!header.contains("true_cate") && !header.contains(",u"));
    let back: Dataset = read_dataset(buf.as_slice(), &observed_schema).unwrap();
    assert_eq!(back, out.observed);
}
