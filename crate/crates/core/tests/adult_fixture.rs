use std::collections::HashMap;
use std::path::PathBuf;

use fairdyn::features::{build_empirical_model, ingest_dataset, LogisticConfig, SchemaConfig};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/adult_synthetic.csv")
}

/// `(sex, positive)` counts straight from the text, skipping rows with a
/// missing value in any column the schema reads.
fn count_by_hand(schema: &SchemaConfig) -> HashMap<(String, bool), usize> {
    let text = std::fs::read_to_string(fixture()).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let used: Vec<usize> = schema
        .numeric_columns
        .iter()
        .chain(&schema.categorical_columns)
        .chain([&schema.group_column, &schema.label_column])
        .map(|c| col(c))
        .collect();
    let (sex, income) = (col("sex"), col("income"));
    let mut counts = HashMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if used.iter().any(|&i| cells[i].is_empty() || cells[i] == "?") {
            continue;
        }
        let positive = cells[income].starts_with(">50K");
        *counts.entry((cells[sex].to_string(), positive)).or_insert(0) += 1;
    }
    counts
}

#[test]
fn ingested_cells_match_a_direct_count() {
    let mut schema = SchemaConfig::adult();
    schema.drop_missing = true;
    let data = ingest_dataset(&fixture(), &schema).unwrap();
    let expected = count_by_hand(&schema);

    let cells = data.cell_counts();
    assert_eq!(data.group_names, ["Female", "Male"]);
    for (g, name) in data.group_names.iter().enumerate() {
        let neg = expected.get(&(name.clone(), false)).copied().unwrap_or(0);
        let pos = expected.get(&(name.clone(), true)).copied().unwrap_or(0);
        assert_eq!(cells[g], [neg, pos], "group {name}");
        assert!(neg >= 1 && pos >= 1);
        let rate = data.base_rates()[g];
        assert!((0.0..=1.0).contains(&rate));
        assert!((rate - pos as f64 / (neg + pos) as f64).abs() < 1e-15);
    }
    assert_eq!(data.len(), expected.values().sum::<usize>());
    assert!(data.features.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn missing_values_fail_without_drop() {
    let err = ingest_dataset(&fixture(), &SchemaConfig::adult()).unwrap_err();
    assert!(err.to_string().contains("row"), "{err}");
}

#[test]
fn acceptance_rises_with_the_queried_rate() {
    let mut schema = SchemaConfig::adult();
    schema.drop_missing = true;
    let data = ingest_dataset(&fixture(), &schema).unwrap();
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let family = build_empirical_model(&data, "adult-fixture", &grid, 32, &LogisticConfig::default()).unwrap();

    let thresholds: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    for g in 0..2 {
        for &t in &thresholds {
            let acceptance: Vec<f64> = grid
                .iter()
                .map(|&q| {
                    let r = family.rates(g, q, t);
                    q * r.tpr + (1.0 - q) * r.fpr
                })
                .collect();
            for (w, q) in acceptance.windows(2).zip(&grid) {
                assert!(w[1] >= w[0] - 1e-12, "group {g}, threshold {t}: {} then {} at q = {q}", w[0], w[1]);
            }
        }
    }
}
