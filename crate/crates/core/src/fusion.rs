//! Combinatorial partitioning and score fusion.
//!
//! Intersecting several geoclass sets yields fine partitions, one per class
//! tuple that actually shares cells. Each classifier's class scores are spread
//! over the cells of their class and divided by the classifier's total
//! cell-weighted mass, so every classifier contributes exactly 1 to the field
//! regardless of how coarse its classes are. The field is constant within a
//! fine partition, so it is computed once per partition and broadcast.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{self, CellId};
use crate::classify::ScoreVector;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint, Vec3};
use crate::partition::GeoclassSet;

/// Scores within this absolute distance of the maximum count as tied.
pub const ARGMAX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Divide each classifier's scores by its cell-weighted score mass.
    #[default]
    Normalized,
    /// Add raw class scores per cell.
    Simple,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(FusionMode::Normalized),
            "simple" => Ok(FusionMode::Simple),
            other => Err(Error::Invalid(format!("unknown fusion mode {other:?}"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Normalized => "normalized",
            FusionMode::Simple => "simple",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinePartition {
    /// Class index in each set, in set order.
    pub tuple: Vec<u32>,
    pub cells: Vec<CellId>,
}

/// Precomputed intersection of geoclass sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIndex")]
pub struct FinePartitionIndex {
    level: u8,
    set_ids: Vec<String>,
    /// Content hashes of the sets the index was built from.
    set_hashes: Vec<String>,
    class_counts: Vec<usize>,
    partitions: Vec<FinePartition>,
    #[serde(skip)]
    cell_to_partition: Vec<u32>,
    /// `class_cell_counts[set][class]`: total cells (empty ones included).
    #[serde(skip)]
    class_cell_counts: Vec<Vec<u64>>,
    /// `class_to_partitions[set][class]`: partitions inside that class.
    #[serde(skip)]
    class_to_partitions: Vec<Vec<Vec<u32>>>,
}

#[derive(Deserialize)]
struct RawIndex {
    level: u8,
    set_ids: Vec<String>,
    set_hashes: Vec<String>,
    class_counts: Vec<usize>,
    partitions: Vec<FinePartition>,
}

impl TryFrom<RawIndex> for FinePartitionIndex {
    type Error = Error;

    fn try_from(raw: RawIndex) -> Result<Self> {
        FinePartitionIndex::from_parts(
            raw.level,
            raw.set_ids,
            raw.set_hashes,
            raw.class_counts,
            raw.partitions,
        )
    }
}

/// Intersect the sets: the fine partition of a cell is the tuple of its class
/// in every set. Partitions are numbered by their first cell.
pub fn build_fine_index(sets: &[GeoclassSet]) -> Result<FinePartitionIndex> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Invalid("no geoclass sets given".into()))?;
    let level = first.level();
    for s in sets {
        if s.level() != level {
            return Err(Error::LevelMismatch {
                expected: level,
                found: s.level(),
            });
        }
    }
    let mut by_tuple: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    let mut partitions: Vec<FinePartition> = Vec::new();
    for cell in cells::all_cells(level) {
        let tuple: Vec<u32> = sets
            .iter()
            .map(|s| s.cell_to_class()[cell.index()])
            .collect();
        let id = *by_tuple.entry(tuple.clone()).or_insert_with(|| {
            partitions.push(FinePartition {
                tuple,
                cells: Vec::new(),
            });
            partitions.len() - 1
        });
        partitions[id].cells.push(cell);
    }
    FinePartitionIndex::from_parts(
        level,
        sets.iter().map(|s| s.set_id().to_string()).collect(),
        sets.iter()
            .map(GeoclassSet::content_hash)
            .collect::<Result<_>>()?,
        sets.iter().map(GeoclassSet::class_count).collect(),
        partitions,
    )
}

impl FinePartitionIndex {
    fn from_parts(
        level: u8,
        set_ids: Vec<String>,
        set_hashes: Vec<String>,
        class_counts: Vec<usize>,
        partitions: Vec<FinePartition>,
    ) -> Result<Self> {
        cells::check_level(level as u32)?;
        let n_sets = set_ids.len();
        if n_sets == 0 || set_hashes.len() != n_sets || class_counts.len() != n_sets {
            return Err(Error::Invalid("index set metadata is inconsistent".into()));
        }
        let n_cells = cells::cell_count(level) as usize;
        let mut cell_to_partition = vec![u32::MAX; n_cells];
        let mut class_cell_counts: Vec<Vec<u64>> =
            class_counts.iter().map(|&n| vec![0; n]).collect();
        let mut class_to_partitions: Vec<Vec<Vec<u32>>> =
            class_counts.iter().map(|&n| vec![Vec::new(); n]).collect();
        for (p, part) in partitions.iter().enumerate() {
            if part.tuple.len() != n_sets || part.cells.is_empty() {
                return Err(Error::Invalid(format!("partition {p} is malformed")));
            }
            for (i, &k) in part.tuple.iter().enumerate() {
                let k = k as usize;
                if k >= class_counts[i] {
                    return Err(Error::Invalid(format!(
                        "partition {p}: class {k} out of range"
                    )));
                }
                class_cell_counts[i][k] += part.cells.len() as u64;
                class_to_partitions[i][k].push(p as u32);
            }
            for c in &part.cells {
                if c.level() != level || cell_to_partition[c.index()] != u32::MAX {
                    return Err(Error::Invalid(format!(
                        "cell {c} misplaced in partition {p}"
                    )));
                }
                cell_to_partition[c.index()] = p as u32;
            }
        }
        if cell_to_partition.contains(&u32::MAX) {
            return Err(Error::Invalid("partitions do not cover every cell".into()));
        }
        Ok(Self {
            level,
            set_ids,
            set_hashes,
            class_counts,
            partitions,
            cell_to_partition,
            class_cell_counts,
            class_to_partitions,
        })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn set_count(&self) -> usize {
        self.set_ids.len()
    }

    pub fn set_ids(&self) -> &[String] {
        &self.set_ids
    }

    pub fn set_hashes(&self) -> &[String] {
        &self.set_hashes
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn partitions(&self) -> &[FinePartition] {
        &self.partitions
    }

    pub fn partition_of(&self, cell: CellId) -> usize {
        self.cell_to_partition[cell.index()] as usize
    }

    pub fn class_cell_counts(&self, set: usize) -> &[u64] {
        &self.class_cell_counts[set]
    }

    pub fn partitions_of_class(&self, set: usize, class: usize) -> &[u32] {
        &self.class_to_partitions[set][class]
    }

    /// True when this index was built from sets with exactly these hashes.
    pub fn matches(&self, set_hashes: &[String]) -> bool {
        self.set_hashes == set_hashes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Per-classifier divisor: the cell-weighted score mass in normalized
    /// mode, 1 in simple mode.
    fn denominators(&self, vectors: &[ScoreVector], mode: FusionMode) -> Result<Vec<f64>> {
        if vectors.len() != self.set_count() {
            return Err(Error::Invalid(format!(
                "{} score vectors for {} sets",
                vectors.len(),
                self.set_count()
            )));
        }
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if v.set_id() != self.set_ids[i] {
                    return Err(Error::InvalidScores {
                        set_id: v.set_id().to_string(),
                        reason: format!("expected set {} at position {i}", self.set_ids[i]),
                    });
                }
                if v.len() != self.class_counts[i] {
                    return Err(Error::InvalidScores {
                        set_id: v.set_id().to_string(),
                        reason: format!("{} scores for {} classes", v.len(), self.class_counts[i]),
                    });
                }
                match mode {
                    FusionMode::Simple => Ok(1.0),
                    FusionMode::Normalized => {
                        let mass: f64 = v
                            .scores()
                            .iter()
                            .zip(&self.class_cell_counts[i])
                            .map(|(s, &n)| s * n as f64)
                            .sum();
                        if mass > 0.0 && mass.is_finite() {
                            Ok(mass)
                        } else {
                            Err(Error::InvalidScores {
                                set_id: v.set_id().to_string(),
                                reason: "score mass is zero".into(),
                            })
                        }
                    }
                }
            })
            .collect()
    }
}

/// Fused per-cell scores, constant within each fine partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CellScoreField {
    level: u8,
    partition_scores: Vec<f64>,
    cell_scores: Vec<f64>,
}

impl CellScoreField {
    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn partition_scores(&self) -> &[f64] {
        &self.partition_scores
    }

    /// Scores indexed by [`CellId::index`].
    pub fn cell_scores(&self) -> &[f64] {
        &self.cell_scores
    }

    pub fn score(&self, cell: CellId) -> f64 {
        self.cell_scores[cell.index()]
    }

    pub fn max_score(&self) -> f64 {
        self.partition_scores
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fuse one score vector per set (in index set order) onto the cells.
pub fn fuse_scores(
    vectors: &[ScoreVector],
    idx: &FinePartitionIndex,
    mode: FusionMode,
) -> Result<CellScoreField> {
    let denominators = idx.denominators(vectors, mode)?;
    let partition_scores: Vec<f64> = idx
        .partitions
        .iter()
        .map(|p| {
            p.tuple
                .iter()
                .zip(vectors)
                .zip(&denominators)
                .map(|((&k, v), d)| v.scores()[k as usize] / d)
                .sum()
        })
        .collect();
    let cell_scores = idx
        .cell_to_partition
        .iter()
        .map(|&p| partition_scores[p as usize])
        .collect();
    Ok(CellScoreField {
        level: idx.level,
        partition_scores,
        cell_scores,
    })
}

/// Training-image totals per fine partition, precomputed once per index.
#[derive(Debug, Clone)]
pub struct PartitionAggregates {
    image_counts: Vec<u64>,
    location_sums: Vec<Vec3>,
}

impl PartitionAggregates {
    pub fn new(idx: &FinePartitionIndex, d: &Dataset) -> Result<Self> {
        if d.level() != idx.level {
            return Err(Error::LevelMismatch {
                expected: idx.level,
                found: d.level(),
            });
        }
        let n = idx.partitions.len();
        let mut image_counts = vec![0u64; n];
        let mut location_sums = vec![Vec3::ZERO; n];
        for agg in d.aggregates() {
            if agg.image_count > 0 {
                let p = idx.partition_of(agg.cell);
                image_counts[p] += agg.image_count;
                location_sums[p] += agg.location_sum;
            }
        }
        Ok(Self {
            image_counts,
            location_sums,
        })
    }

    pub fn image_count(&self, partition: usize) -> u64 {
        self.image_counts[partition]
    }

    /// Mean training-image location of a partition.
    pub fn center(&self, partition: usize) -> Option<GeoPoint> {
        let n = self.image_counts[partition];
        (n > 0)
            .then(|| geo::mean_direction(self.location_sums[partition], n as f64).ok())
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub location: GeoPoint,
    /// The cells with the highest fused score.
    pub argmax_cells: Vec<CellId>,
    pub score_max: f64,
    /// Training images inside the argmax cells.
    pub images_in_argmax: u64,
    /// Set when the argmax cells held no training images and lower-scoring
    /// cells were added to locate the prediction.
    pub expanded: bool,
    /// Cells whose images formed the prediction.
    pub cells_used: usize,
}

/// Locate the argmax cells of `field` and return the mean location of the
/// training images they contain.
///
/// If those cells hold no images, score levels (groups of partitions tied
/// within [`ARGMAX_TOLERANCE`]) are added in descending order until some do.
pub fn predict_location(
    field: &CellScoreField,
    idx: &FinePartitionIndex,
    aggs: &PartitionAggregates,
) -> Result<Prediction> {
    if field.level != idx.level || field.partition_scores.len() != idx.partitions.len() {
        return Err(Error::Invalid(
            "score field does not belong to this index".into(),
        ));
    }
    let mut order: Vec<usize> = (0..field.partition_scores.len()).collect();
    order.sort_by(|&a, &b| {
        field.partition_scores[b]
            .total_cmp(&field.partition_scores[a])
            .then(a.cmp(&b))
    });
    let score_max = field.partition_scores[order[0]];

    let mut used = Vec::new();
    let mut count = 0u64;
    let mut sum = Vec3::ZERO;
    let mut argmax_len = None;
    let mut rest = order.as_slice();
    while !rest.is_empty() {
        let level_top = field.partition_scores[rest[0]];
        let width = rest
            .iter()
            .position(|&p| field.partition_scores[p] < level_top - ARGMAX_TOLERANCE)
            .unwrap_or(rest.len());
        for &p in &rest[..width] {
            used.push(p);
            count += aggs.image_counts[p];
            sum += aggs.location_sums[p];
        }
        rest = &rest[width..];
        argmax_len.get_or_insert(used.len());
        if count > 0 {
            break;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset(
            "no training images anywhere in the index".into(),
        ));
    }
    let argmax_len = argmax_len.expect("at least one level");
    let mut argmax_cells: Vec<CellId> = used[..argmax_len]
        .iter()
        .flat_map(|&p| idx.partitions[p].cells.iter().copied())
        .collect();
    argmax_cells.sort();
    let images_in_argmax = used[..argmax_len]
        .iter()
        .map(|&p| aggs.image_counts[p])
        .sum();
    Ok(Prediction {
        location: geo::mean_direction(sum, count as f64)?,
        argmax_cells,
        score_max,
        images_in_argmax,
        expanded: used.len() > argmax_len,
        cells_used: used.iter().map(|&p| idx.partitions[p].cells.len()).sum(),
    })
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub query_id: String,
    pub lat: f64,
    pub lng: f64,
    pub argmax_cells: Vec<CellId>,
    pub score_max: f64,
    pub images_in_argmax: u64,
    pub expanded: bool,
}

impl PredictionLine {
    pub fn new(query_id: impl Into<String>, p: &Prediction) -> Self {
        Self {
            query_id: query_id.into(),
            lat: p.location.lat(),
            lng: p.location.lng(),
            argmax_cells: p.argmax_cells.clone(),
            score_max: p.score_max,
            images_in_argmax: p.images_in_argmax,
            expanded: p.expanded,
        }
    }

    pub fn location(&self) -> Result<GeoPoint> {
        GeoPoint::new(self.lat, self.lng)
    }
}

/// Fuse and predict a batch of queries in parallel; output keeps input order.
pub fn predict_batch(
    idx: &FinePartitionIndex,
    aggs: &PartitionAggregates,
    queries: &[(String, Vec<ScoreVector>)],
    mode: FusionMode,
) -> Result<Vec<PredictionLine>> {
    queries
        .par_iter()
        .map(|(id, vectors)| {
            let field = fuse_scores(vectors, idx, mode)?;
            let p = predict_location(&field, idx, aggs)?;
            Ok(PredictionLine::new(id.clone(), &p))
        })
        .collect()
}
