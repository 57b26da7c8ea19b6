//! Score histograms derived from a real dataset, one family member per target
//! qualification rate, linearly interpolated in between.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use super::logistic::{reweighted_logistic_fit, LogisticConfig};
use super::ConditionalRates;
use crate::error::{Error, Result};
use crate::types::{from_canonical_json, to_canonical_json};

pub const MIN_BINS: usize = 16;

/// `Pr(X | Y, G)` as histograms over `[0, 1]` for one target rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalScoreModel {
    pub target_rate: f64,
    /// `histograms[g][0]` is the negative-label histogram, `[g][1]` the positive one.
    pub histograms: Vec<[Vec<f64>; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub content_hash: String,
    pub q_grid: Vec<f64>,
    pub bins: usize,
}

/// Grid of [`EmpiricalScoreModel`]s indexed by target qualification rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalModelFamily {
    pub provenance: Provenance,
    pub members: Vec<EmpiricalScoreModel>,
}

/// Fraction of a histogram's mass at or above `threshold`, assuming uniform
/// density within each bin.
pub fn mass_above(hist: &[f64], threshold: f64) -> f64 {
    let bins = hist.len() as f64;
    let t = threshold.clamp(0.0, 1.0) * bins;
    let first = t.floor() as usize;
    let mut mass = 0.0;
    for (k, h) in hist.iter().enumerate().skip(first) {
        let covered = ((k + 1) as f64 - t).clamp(0.0, 1.0);
        mass += h * covered;
    }
    mass.clamp(0.0, 1.0)
}

fn histogram(scores: impl Iterator<Item = f64>, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let mut n = 0usize;
    for s in scores {
        let k = ((s * bins as f64).floor() as usize).min(bins - 1);
        h[k] += 1.0;
        n += 1;
    }
    h.iter_mut().for_each(|v| *v /= n as f64);
    h
}

impl EmpiricalModelFamily {
    pub const ID: &'static str = "empirical";
    /// Central-difference step in threshold units.
    pub const DIFF_STEP: f64 = 1e-3;

    pub fn group_count(&self) -> usize {
        self.members[0].histograms.len()
    }

    pub fn bins(&self) -> usize {
        self.provenance.bins
    }

    /// Neighboring grid members and the interpolation weight of the upper one.
    fn bracket(&self, q: f64) -> (usize, usize, f64) {
        let grid = &self.provenance.q_grid;
        if grid.len() == 1 || q <= grid[0] {
            return (0, 0, 0.0);
        }
        let last = grid.len() - 1;
        if q >= grid[last] {
            return (last, last, 0.0);
        }
        let hi = grid.partition_point(|g| *g <= q);
        let lo = hi - 1;
        let t = (q - grid[lo]) / (grid[hi] - grid[lo]);
        (lo, hi, t)
    }

    /// Interpolated histogram for `group`, `label` (0 = negative, 1 = positive).
    pub fn histogram_at(&self, group: usize, label: usize, q: f64) -> Vec<f64> {
        let (lo, hi, t) = self.bracket(q);
        let a = &self.members[lo].histograms[group][label];
        let b = &self.members[hi].histograms[group][label];
        a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
    }

    pub fn rates(&self, group: usize, q: f64, action: f64) -> ConditionalRates {
        let (lo, hi, t) = self.bracket(q);
        let at = |m: usize| {
            let h = &self.members[m].histograms[group];
            ConditionalRates {
                tpr: mass_above(&h[1], action),
                fpr: mass_above(&h[0], action),
            }
        };
        let (a, b) = (at(lo), at(hi));
        ConditionalRates {
            tpr: (1.0 - t) * a.tpr + t * b.tpr,
            fpr: (1.0 - t) * a.fpr + t * b.fpr,
        }
    }

    /// Number of adjacent bin pairs where `Pr(Y=1 | X)` decreases, summed over
    /// groups, at qualification rate `q`. Zero means the score is well behaved.
    pub fn monotonicity_violations(&self, q: f64) -> usize {
        let mut violations = 0;
        for g in 0..self.group_count() {
            let neg = self.histogram_at(g, 0, q);
            let pos = self.histogram_at(g, 1, q);
            let mut prev: Option<f64> = None;
            for (n, p) in neg.iter().zip(&pos) {
                let mass = q * p + (1.0 - q) * n;
                if mass <= 0.0 {
                    continue;
                }
                let post = q * p / mass;
                if prev.is_some_and(|v| post < v - 1e-12) {
                    violations += 1;
                }
                prev = Some(post);
            }
        }
        violations
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, to_canonical_json(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        from_canonical_json(&text)
    }

    /// Load a cached family if its dataset hash and grid match, otherwise build
    /// and persist a fresh one.
    pub fn load_or_build(
        cache: &Path,
        data: &LabeledDataset,
        dataset_id: &str,
        q_grid: &[f64],
        bins: usize,
        config: &LogisticConfig,
    ) -> Result<Self> {
        if cache.exists() {
            if let Ok(family) = Self::load(cache) {
                let p = &family.provenance;
                if p.content_hash == data.content_hash && p.q_grid == q_grid && p.bins == bins {
                    return Ok(family);
                }
            }
        }
        let family = build_empirical_model(data, dataset_id, q_grid, bins, config)?;
        family.save(cache)?;
        Ok(family)
    }
}

/// Default grid: 17 evenly spaced rates strictly inside (0, 1).
pub fn default_q_grid() -> Vec<f64> {
    (1..=17).map(|k| k as f64 / 18.0).collect()
}

/// Fit one reweighted classifier per grid rate and histogram its scores by
/// group and label.
pub fn build_empirical_model(
    data: &LabeledDataset,
    dataset_id: &str,
    q_grid: &[f64],
    bins: usize,
    config: &LogisticConfig,
) -> Result<EmpiricalModelFamily> {
    if q_grid.is_empty() {
        return Err(Error::validation("q grid is empty"));
    }
    if q_grid.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::validation("q grid points must lie in (0, 1)"));
    }
    if q_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("q grid must be strictly increasing"));
    }
    if bins < MIN_BINS {
        return Err(Error::validation(format!("need at least {MIN_BINS} bins, got {bins}")));
    }
    let groups = data.group_count();
    let mut members = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let scorer = reweighted_logistic_fit(data, &vec![q; groups], config).map_err(|e| {
            Error::GridFit {
                q,
                source: Box::new(e),
            }
        })?;
        let scores = scorer.scores(data);
        let histograms = (0..groups)
            .map(|g| {
                let cell = |label: i8| {
                    let scores = &scores;
                    (0..data.len())
                        .filter(move |&i| data.groups[i] == g && data.labels[i] == label)
                        .map(move |i| scores[i])
                };
                [histogram(cell(-1), bins), histogram(cell(1), bins)]
            })
            .collect();
        members.push(EmpiricalScoreModel {
            target_rate: q,
            histograms,
        });
    }
    Ok(EmpiricalModelFamily {
        provenance: Provenance {
            dataset_id: dataset_id.to_string(),
            content_hash: data.content_hash.clone(),
            q_grid: q_grid.to_vec(),
            bins,
        },
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_member_family() -> EmpiricalModelFamily {
        let bins = 16;
        let mut lo = vec![0.0; bins];
        lo[2] = 1.0;
        let mut hi = vec![0.0; bins];
        hi[10] = 0.5;
        hi[12] = 0.5;
        let member = |q: f64, h: &Vec<f64>| EmpiricalScoreModel {
            target_rate: q,
            histograms: vec![[h.clone(), h.clone()], [h.clone(), h.clone()]],
        };
        EmpiricalModelFamily {
            provenance: Provenance {
                dataset_id: "toy".into(),
                content_hash: String::new(),
                q_grid: vec![0.2, 0.8],
                bins,
            },
            members: vec![member(0.2, &lo), member(0.8, &hi)],
        }
    }

    #[test]
    fn midpoint_query_is_elementwise_average() {
        let f = two_member_family();
        let h = f.histogram_at(0, 1, 0.5);
        assert!((h[2] - 0.5).abs() < 1e-15);
        assert!((h[10] - 0.25).abs() < 1e-15);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_grid_is_exact() {
        let mut f = two_member_family();
        f.members.truncate(1);
        f.provenance.q_grid.truncate(1);
        f.provenance.q_grid[0] = 0.5;
        assert_eq!(f.histogram_at(1, 0, 0.5), f.members[0].histograms[1][0]);
        assert_eq!(f.histogram_at(1, 0, 0.9), f.members[0].histograms[1][0]);
    }

    #[test]
    fn mass_above_handles_partial_bins() {
        let mut h = vec![0.0; 16];
        h[8] = 1.0; // covers [0.5, 0.5625)
        assert!((mass_above(&h, 0.0) - 1.0).abs() < 1e-15);
        assert!((mass_above(&h, 0.5) - 1.0).abs() < 1e-15);
        assert!((mass_above(&h, 0.53125) - 0.5).abs() < 1e-12);
        assert_eq!(mass_above(&h, 0.6), 0.0);
        assert_eq!(mass_above(&h, 1.0), 0.0);
    }

    #[test]
    fn zero_threshold_accepts_everyone() {
        let f = two_member_family();
        let r = f.rates(0, 0.4, 0.0);
        assert!((r.tpr - 1.0).abs() < 1e-12 && (r.fpr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids_and_bins() {
        let data = crate::features::logistic::tests::fixture();
        let cfg = LogisticConfig::default();
        assert!(build_empirical_model(&data, "t", &[], 16, &cfg).is_err());
        assert!(build_empirical_model(&data, "t", &[0.0, 0.5], 16, &cfg).is_err());
        assert!(build_empirical_model(&data, "t", &[0.6, 0.5], 16, &cfg).is_err());
        assert!(build_empirical_model(&data, "t", &[0.5], 8, &cfg).is_err());
    }

    #[test]
    fn fit_errors_name_the_grid_point() {
        let data = crate::features::logistic::tests::fixture();
        let cfg = LogisticConfig {
            max_iterations: 1,
            ..LogisticConfig::default()
        };
        match build_empirical_model(&data, "t", &[0.3, 0.7], 16, &cfg) {
            Err(Error::GridFit { q, .. }) => assert_eq!(q, 0.3),
            other => panic!("expected grid fit error, got {other:?}"),
        }
    }

    #[test]
    fn built_histograms_are_probability_vectors() {
        let data = crate::features::logistic::tests::fixture();
        let f = build_empirical_model(&data, "t", &[0.25, 0.5, 0.75], 16, &LogisticConfig::default())
            .unwrap();
        for q in [0.1, 0.3, 0.5, 0.61, 0.9] {
            for g in 0..2 {
                for label in 0..2 {
                    let h = f.histogram_at(g, label, q);
                    assert!(h.iter().all(|v| *v >= 0.0));
                    assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let data = crate::features::logistic::tests::fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let cfg = LogisticConfig::default();
        let a = EmpiricalModelFamily::load_or_build(&path, &data, "t", &[0.5], 16, &cfg).unwrap();
        let b = EmpiricalModelFamily::load(&path).unwrap();
        assert_eq!(a, b);
        // A different dataset hash forces a rebuild.
        let mut other = data.clone();
        other.content_hash = "different".into();
        let c = EmpiricalModelFamily::load_or_build(&path, &other, "t", &[0.5], 16, &cfg).unwrap();
        assert_eq!(c.provenance.content_hash, "different");
    }
}
