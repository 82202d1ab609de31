use std::path::PathBuf;

use scp_core::experiments::{bootstrap_noise, load_concrete_csv};
use scp_core::ScpError;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Counts rows by splitting the file by hand: water / (cement + slag + fly ash) and age windows.
fn count_by_hand(age: [f64; 2], r: [f64; 2]) -> usize {
    let text = std::fs::read_to_string(data("concrete.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (c, s, f, w, a) = (col("cement"), col("blast_furnace_slag"), col("fly_ash"), col("water"), col("age"));
    lines
        .filter(|l| !l.is_empty())
        .filter(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            let ratio = v[w] / (v[c] + v[s] + v[f]);
            v[a] >= age[0] && v[a] <= age[1] && ratio >= r[0] && ratio <= r[1]
        })
        .count()
}

#[test]
fn public_dataset_filters_give_the_published_counts() {
    let young = load_concrete_csv(&data("concrete.csv"), [0.0, 25.0], [0.2, 0.4]).unwrap();
    let old = load_concrete_csv(&data("concrete.csv"), [25.0, 50.0], [0.2, 0.4]).unwrap();
    assert_eq!(young.len(), 110);
    assert_eq!(old.len(), 141);
    assert_eq!(count_by_hand([0.0, 25.0], [0.2, 0.4]), 110);
    assert_eq!(count_by_hand([25.0, 50.0], [0.2, 0.4]), 141);
}

#[test]
fn open_and_closed_age_bounds_agree() {
    let young = load_concrete_csv(&data("concrete.csv"), [0.0, 25.0], [0.2, 0.4]).unwrap();
    assert!(young.iter().all(|r| r.age < 25.0));
    let old = load_concrete_csv(&data("concrete.csv"), [25.0, 50.0], [0.2, 0.4]).unwrap();
    assert!(old.iter().all(|r| r.age > 25.0 && r.age < 50.0));
}

#[test]
fn empty_ratio_window_is_an_error() {
    let err = load_concrete_csv(&data("concrete.csv"), [0.0, 25.0], [2.0, 3.0]).unwrap_err();
    assert!(matches!(err, ScpError::EmptyFilter(_)));
    assert_eq!(err.category().exit_code(), 2);
}

#[test]
fn fixture_has_the_public_schema() {
    let recs = load_concrete_csv(&data("concrete_fixture.csv"), [0.0, 365.0], [0.0, 10.0]).unwrap();
    assert_eq!(recs.len(), 30);
    assert!(recs.iter().all(|r| r.extra.contains_key("superplasticizer")));
}

#[test]
fn bootstrap_moments_on_the_young_subset() {
    let recs = load_concrete_csv(&data("concrete.csv"), [0.0, 25.0], [0.2, 0.4]).unwrap();
    let s: Vec<f64> = recs.iter().map(|r| r.strength).collect();
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var_pop = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;

    let count = 100_000;
    let draws = bootstrap_noise(&recs, count, 5.0, 81).unwrap();
    let m = draws.iter().sum::<f64>() / count as f64;
    let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (count as f64 - 1.0);
    // Resampling with replacement plus N(0, 25): mean unchanged, variance grows by 25.
    let target_var = var_pop + 25.0;
    let se_mean = (target_var / count as f64).sqrt();
    assert!((m - mean).abs() <= 4.0 * se_mean, "{m} vs {mean}");
    assert!((v - target_var).abs() / target_var <= 0.02, "{v} vs {target_var}");
}
