//! Accuracy at distance thresholds and the class-count sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{train_centroid_classifier, Query};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{build_fine_index, predict_batch, FusionMode, PartitionAggregates};
use crate::geo::{geodesic_km, GeoPoint};
use crate::partition::{generate_geoclass_set, GenParams, RegionGraph};

/// Street, city, region, country and continent scales plus intermediates.
pub const DEFAULT_RADII_KM: [f64; 9] = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0, 200.0, 750.0, 2500.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub radii_km: Vec<f64>,
    /// Fraction of queries strictly closer than each radius.
    pub accuracy: Vec<f64>,
    pub query_count: usize,
    pub distances_km: BTreeMap<String, f64>,
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::Invalid("at least one radius is required".into()));
    }
    if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) || radii.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Invalid(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn accuracies(distances: &BTreeMap<String, f64>, radii: &[f64]) -> Vec<f64> {
    let m = distances.len() as f64;
    radii
        .iter()
        .map(|&r| distances.values().filter(|&&d| d < r).count() as f64 / m)
        .collect()
}

/// Compare predictions with ground truth over identical query sets.
pub fn accuracy_at(
    predictions: &BTreeMap<String, GeoPoint>,
    truth: &BTreeMap<String, GeoPoint>,
    radii: &[f64],
) -> Result<EvalReport> {
    check_radii(radii)?;
    if predictions.is_empty() {
        return Err(Error::Invalid("no queries to evaluate".into()));
    }
    if let Some(k) = predictions.keys().find(|k| !truth.contains_key(*k)) {
        return Err(Error::Invalid(format!(
            "prediction {k:?} has no ground truth"
        )));
    }
    if let Some(k) = truth.keys().find(|k| !predictions.contains_key(*k)) {
        return Err(Error::Invalid(format!("query {k:?} has no prediction")));
    }
    let distances: BTreeMap<String, f64> = predictions
        .par_iter()
        .map(|(k, p)| (k.clone(), geodesic_km(truth[k], *p)))
        .collect();
    Ok(EvalReport {
        radii_km: radii.to_vec(),
        accuracy: accuracies(&distances, radii),
        query_count: distances.len(),
        distances_km: distances,
    })
}

impl EvalReport {
    /// Accuracy recomputed from the stored per-query distances.
    pub fn recompute(&self) -> Vec<f64> {
        accuracies(&self.distances_km, &self.radii_km)
    }

    pub fn accuracy_for(&self, radius: f64) -> Option<f64> {
        self.radii_km
            .iter()
            .position(|&r| r == radius)
            .map(|i| self.accuracy[i])
    }
}

fn radius_label(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}km", r as u64)
    } else {
        format!("{r}km")
    }
}

/// CSV table with one row per labeled report and one column per radius.
pub fn reports_to_csv(rows: &[(String, &EvalReport)]) -> Result<String> {
    let Some((_, first)) = rows.first() else {
        return Err(Error::Invalid("no reports".into()));
    };
    let mut out = String::from("model");
    for &r in &first.radii_km {
        write!(out, ",{}", radius_label(r)).expect("string write");
    }
    out.push('\n');
    for (label, report) in rows {
        if report.radii_km != first.radii_km {
            return Err(Error::Invalid("reports use different radii".into()));
        }
        out.push_str(label);
        for a in &report.accuracy {
            write!(out, ",{a:.6}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub classes: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub radii_km: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let labeled: Vec<(String, &EvalReport)> = self
            .rows
            .iter()
            .map(|r| (format!("{} classes", r.classes), &r.report))
            .collect();
        reports_to_csv(&labeled)
    }
}

/// Settings shared by every configuration of a sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig<'a> {
    pub base: &'a GenParams,
    pub counts: &'a [usize],
    pub radii: &'a [f64],
    pub temperature: f64,
    /// Run configurations concurrently instead of one after another.
    pub parallel: bool,
}

/// Evaluate a single-set classifier for each class count: generate the set,
/// train the centroid baseline and score the test queries.
pub fn sweep_class_count(
    train: &Dataset,
    graph: &RegionGraph,
    test: &[Query],
    cfg: &SweepConfig<'_>,
) -> Result<SweepTable> {
    check_radii(cfg.radii)?;
    let truth: BTreeMap<String, GeoPoint> = test
        .iter()
        .map(|q| {
            q.truth
                .map(|t| (q.id.clone(), t))
                .ok_or_else(|| Error::Invalid(format!("query {:?} lacks ground truth", q.id)))
        })
        .collect::<Result<_>>()?;
    let run = |&classes: &usize| -> Result<SweepRow> {
        let params = GenParams {
            target_classes: classes,
            ..cfg.base.clone()
        };
        let set = generate_geoclass_set(graph, &params, format!("sweep{classes}"))?;
        let classifier = train_centroid_classifier(train, &set, cfg.temperature)?;
        let idx = build_fine_index(std::slice::from_ref(&set))?;
        let aggs = PartitionAggregates::new(&idx, train)?;
        let scored =
            test.iter()
                .map(|q| {
                    let feature = q.feature.as_deref().ok_or_else(|| {
                        Error::Invalid(format!("query {:?} lacks a feature", q.id))
                    })?;
                    Ok((q.id.clone(), vec![classifier.predict_scores(feature)?]))
                })
                .collect::<Result<Vec<_>>>()?;
        let predictions = predict_batch(&idx, &aggs, &scored, FusionMode::Normalized)?
            .into_iter()
            .map(|p| Ok((p.query_id.clone(), p.location()?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(SweepRow {
            classes,
            report: accuracy_at(&predictions, &truth, cfg.radii)?,
        })
    };
    let rows = if cfg.parallel {
        cfg.counts.par_iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        cfg.counts.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(SweepTable {
        radii_km: cfg.radii.to_vec(),
        rows,
    })
}
