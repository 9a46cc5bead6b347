//! Per-set score vectors: a nearest-centroid softmax baseline and a loader
//! for externally computed scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::partition::GeoclassSet;

/// Nonnegative, finite class scores for one geoclass set; not all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScoreLineVector")]
pub struct ScoreVector {
    set_id: String,
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct ScoreLineVector {
    set_id: String,
    scores: Vec<f64>,
}

impl TryFrom<ScoreLineVector> for ScoreVector {
    type Error = Error;

    fn try_from(raw: ScoreLineVector) -> Result<Self> {
        ScoreVector::new(raw.set_id, raw.scores)
    }
}

impl ScoreVector {
    pub fn new(set_id: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        let set_id = set_id.into();
        let invalid = |reason: String| Error::InvalidScores {
            set_id: set_id.clone(),
            reason,
        };
        if let Some((k, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || **s < 0.0)
        {
            return Err(invalid(format!(
                "score {s} at class {k} is negative or non-finite"
            )));
        }
        if scores.iter().all(|&s| s == 0.0) {
            return Err(invalid("all scores are zero".into()));
        }
        Ok(Self { set_id, scores })
    }

    pub fn set_id(&self) -> &str {
        &self.set_id
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Index of the highest score; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = k;
            }
        }
        best
    }

    /// Multiply every score by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        ScoreVector::new(
            self.set_id.clone(),
            self.scores.iter().map(|s| s * factor).collect(),
        )
    }
}

/// Softmax over negative Euclidean distance to per-class mean features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidClassifier {
    set_id: String,
    temperature: f64,
    dim: usize,
    /// `None` for classes without training records; they always score 0.
    centroids: Vec<Option<Vec<f64>>>,
}

pub fn train_centroid_classifier(
    d: &Dataset,
    s: &GeoclassSet,
    temperature: f64,
) -> Result<CentroidClassifier> {
    if d.level() != s.level() {
        return Err(Error::LevelMismatch {
            expected: s.level(),
            found: d.level(),
        });
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let dim = d.dim();
    let mut sums = vec![vec![0.0; dim]; s.class_count()];
    let mut counts = vec![0u64; s.class_count()];
    for r in d.records() {
        let k = s.class_of(d.record_cell(r));
        counts[k] += 1;
        for (acc, x) in sums[k].iter_mut().zip(&r.feature) {
            *acc += x;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyDataset(format!(
            "set {}: every class is empty",
            s.set_id()
        )));
    }
    let centroids = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &n)| (n > 0).then(|| sum.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    Ok(CentroidClassifier {
        set_id: s.set_id().to_string(),
        temperature,
        dim,
        centroids,
    })
}

impl CentroidClassifier {
    pub fn set_id(&self) -> &str {
        &self.set_id
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            temperature,
            ..self.clone()
        })
    }

    pub fn centroids(&self) -> &[Option<Vec<f64>>] {
        &self.centroids
    }

    /// Classes that had no training records.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.centroids
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(k, _)| k)
            .collect()
    }

    pub fn predict_scores(&self, feature: &[f64]) -> Result<ScoreVector> {
        if feature.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: feature.len(),
            });
        }
        let logits: Vec<Option<f64>> = self
            .centroids
            .iter()
            .map(|c| {
                c.as_ref().map(|c| {
                    let d2: f64 = c.iter().zip(feature).map(|(a, b)| (a - b) * (a - b)).sum();
                    -d2.sqrt() / self.temperature
                })
            })
            .collect();
        let max = logits
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits
            .iter()
            .map(|l| l.map_or(0.0, |l| (l - max).exp()))
            .collect();
        let total: f64 = exps.iter().sum();
        ScoreVector::new(
            self.set_id.clone(),
            exps.into_iter().map(|e| e / total).collect(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// One line of a score file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreLine {
    pub query_id: String,
    pub set_id: String,
    pub scores: Vec<f64>,
}

/// Write one line per (query, set) pair.
pub fn write_scores<W: Write>(mut w: W, query_id: &str, vectors: &[ScoreVector]) -> Result<()> {
    for v in vectors {
        let line = ScoreLine {
            query_id: query_id.to_string(),
            set_id: v.set_id.clone(),
            scores: v.scores.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Load a JSON Lines score file and check that every query has exactly one
/// vector per expected `(set_id, class_count)`. Vectors come back in the order
/// of `expected`.
pub fn load_scores<R: BufRead>(
    reader: R,
    expected: &[(String, usize)],
) -> Result<BTreeMap<String, Vec<ScoreVector>>> {
    let position: BTreeMap<&str, usize> = expected
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let mut slots: BTreeMap<String, Vec<Option<ScoreVector>>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ScoreLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let Some(&pos) = position.get(raw.set_id.as_str()) else {
            return Err(Error::InvalidScores {
                set_id: raw.set_id,
                reason: format!("line {}: unknown set", i + 1),
            });
        };
        let want = expected[pos].1;
        if raw.scores.len() != want {
            return Err(Error::InvalidScores {
                set_id: raw.set_id,
                reason: format!(
                    "line {}: {} scores, set has {want} classes",
                    i + 1,
                    raw.scores.len()
                ),
            });
        }
        let vector = ScoreVector::new(raw.set_id, raw.scores)?;
        let slot = &mut slots
            .entry(raw.query_id.clone())
            .or_insert_with(|| vec![None; expected.len()])[pos];
        if slot.is_some() {
            return Err(Error::InvalidScores {
                set_id: vector.set_id,
                reason: format!("duplicate scores for query {}", raw.query_id),
            });
        }
        *slot = Some(vector);
    }
    slots
        .into_iter()
        .map(|(query, vectors)| {
            let vectors = vectors
                .into_iter()
                .zip(expected)
                .map(|(v, (set_id, _))| {
                    v.ok_or_else(|| Error::InvalidScores {
                        set_id: set_id.clone(),
                        reason: format!("missing for query {query}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((query, vectors))
        })
        .collect()
}

/// A query: a feature vector to localize, optionally with its true location.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub feature: Option<Vec<f64>>,
    pub truth: Option<GeoPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryLine {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lng: Option<f64>,
}

/// Read queries in the record format; `feat`, `lat` and `lng` are optional.
pub fn read_queries<R: BufRead>(reader: R) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            line: i + 1,
            reason,
        };
        let raw: QueryLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let truth = match (raw.lat, raw.lng) {
            (Some(lat), Some(lng)) => {
                Some(GeoPoint::new(lat, lng).map_err(|e| malformed(e.to_string()))?)
            }
            (None, None) => None,
            _ => return Err(malformed("lat and lng must appear together".into())),
        };
        if !ids.insert(raw.id.clone()) {
            return Err(malformed(format!("duplicate query id {:?}", raw.id)));
        }
        out.push(Query {
            id: raw.id,
            feature: raw.feat,
            truth,
        });
    }
    Ok(out)
}

pub fn write_queries<W: Write>(mut w: W, queries: &[Query]) -> Result<()> {
    for q in queries {
        let line = QueryLine {
            id: q.id.clone(),
            feat: q.feature.clone(),
            lat: q.truth.map(|p| p.lat()),
            lng: q.truth.map(|p| p.lng()),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
