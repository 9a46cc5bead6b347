//! Geotagged feature records, per-cell aggregates and the base region graph.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{self, cell_at, CellId};
use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Vec3};
use crate::hash::sha256_hex;
use crate::partition::{RegionGraph, RegionNode};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const AGGREGATES_FILE: &str = "aggregates.json";

#[derive(Debug, Clone, PartialEq)]
pub struct GeoRecord {
    pub id: String,
    pub location: GeoPoint,
    pub feature: Vec<f64>,
}

/// On-disk shape of a record line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordLine {
    pub id: String,
    pub lat: f64,
    pub lng: f64,
    pub feat: Vec<f64>,
}

impl From<&GeoRecord> for RecordLine {
    fn from(r: &GeoRecord) -> Self {
        RecordLine {
            id: r.id.clone(),
            lat: r.location.lat(),
            lng: r.location.lng(),
            feat: r.feature.clone(),
        }
    }
}

impl TryFrom<RecordLine> for GeoRecord {
    type Error = Error;

    fn try_from(line: RecordLine) -> Result<Self> {
        let location = GeoPoint::new(line.lat, line.lng)?;
        if line.feat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "record {}: non-finite feature",
                line.id
            )));
        }
        Ok(GeoRecord {
            id: line.id,
            location,
            feature: line.feat,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub cell: CellId,
    pub image_count: u64,
    /// Present iff `image_count > 0`.
    pub mean_feature: Option<Vec<f64>>,
    /// Sum of the unit vectors of member records.
    pub location_sum: Vec3,
}

impl CellAggregate {
    pub fn empty(cell: CellId) -> Self {
        Self {
            cell,
            image_count: 0,
            mean_feature: None,
            location_sum: Vec3::ZERO,
        }
    }

    fn add(&mut self, location: GeoPoint, feature: &[f64]) {
        self.image_count += 1;
        self.location_sum += location.to_cartesian().as_vec();
        let n = self.image_count as f64;
        match &mut self.mean_feature {
            Some(mean) => {
                for (m, x) in mean.iter_mut().zip(feature) {
                    *m += (x - *m) / n;
                }
            }
            None => self.mean_feature = Some(feature.to_vec()),
        }
    }

    fn merge(&mut self, other: &CellAggregate) {
        if other.image_count == 0 {
            return;
        }
        let total = self.image_count + other.image_count;
        match (&mut self.mean_feature, &other.mean_feature) {
            (Some(mean), Some(theirs)) => {
                let share = other.image_count as f64 / total as f64;
                for (m, x) in mean.iter_mut().zip(theirs) {
                    *m += (x - *m) * share;
                }
            }
            (None, theirs) => self.mean_feature = theirs.clone(),
            _ => {}
        }
        self.image_count = total;
        self.location_sum += other.location_sum;
    }
}

/// Sparse per-cell accumulator. Shards of an input stream can be aggregated
/// independently and combined with [`AggregateBuilder::merge`].
#[derive(Debug, Clone)]
pub struct AggregateBuilder {
    level: u8,
    dim: Option<usize>,
    cells: BTreeMap<usize, CellAggregate>,
}

impl AggregateBuilder {
    pub fn new(level: u8) -> Self {
        Self {
            level,
            dim: None,
            cells: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, record: &GeoRecord) -> Result<()> {
        self.check_dim(record.feature.len())?;
        let cell = cell_at(record.location, self.level as u32)?;
        self.cells
            .entry(cell.index())
            .or_insert_with(|| CellAggregate::empty(cell))
            .add(record.location, &record.feature);
        Ok(())
    }

    pub fn merge(&mut self, other: &AggregateBuilder) -> Result<()> {
        if other.level != self.level {
            return Err(Error::LevelMismatch {
                expected: self.level,
                found: other.level,
            });
        }
        if let Some(d) = other.dim {
            self.check_dim(d)?;
        }
        for (idx, agg) in &other.cells {
            self.cells
                .entry(*idx)
                .or_insert_with(|| CellAggregate::empty(agg.cell))
                .merge(agg);
        }
        Ok(())
    }

    fn check_dim(&mut self, found: usize) -> Result<()> {
        match self.dim {
            Some(expected) if expected != found => {
                Err(Error::DimensionMismatch { expected, found })
            }
            Some(_) => Ok(()),
            None => {
                self.dim = Some(found);
                Ok(())
            }
        }
    }

    /// Dense aggregates covering every cell at the level.
    pub fn finish(self) -> Vec<CellAggregate> {
        let mut sparse = self.cells;
        cells::all_cells(self.level)
            .map(|cell| {
                sparse
                    .remove(&cell.index())
                    .unwrap_or_else(|| CellAggregate::empty(cell))
            })
            .collect()
    }
}

/// Records binned into cells at a fixed level, with aggregates for every cell.
#[derive(Debug, Clone)]
pub struct Dataset {
    level: u8,
    dim: usize,
    records: Vec<GeoRecord>,
    aggregates: Vec<CellAggregate>,
}

impl Dataset {
    /// Build from validated records. Duplicate ids and dimension mismatches are errors.
    pub fn from_records(level: u32, records: Vec<GeoRecord>) -> Result<Self> {
        let level = cells::check_level(level)?;
        let mut builder = AggregateBuilder::new(level);
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate record id {:?}", r.id)));
            }
            builder.add(r)?;
        }
        let dim = builder.dim.unwrap_or(0);
        Ok(Self {
            level,
            dim,
            records,
            aggregates: builder.finish(),
        })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Feature dimension; 0 for a dataset without records.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[GeoRecord] {
        &self.records
    }

    /// One aggregate per cell, indexed by [`CellId::index`].
    pub fn aggregates(&self) -> &[CellAggregate] {
        &self.aggregates
    }

    pub fn aggregate(&self, cell: CellId) -> &CellAggregate {
        &self.aggregates[cell.index()]
    }

    pub fn record_cell(&self, record: &GeoRecord) -> CellId {
        cell_at(record.location, self.level as u32).expect("level validated at construction")
    }

    pub fn nonempty_cells(&self) -> usize {
        self.aggregates.iter().filter(|a| a.image_count > 0).count()
    }

    fn records_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut buf, &RecordLine::from(r))?;
            buf.push(b'\n');
        }
        Ok(buf)
    }

    fn aggregates_bytes(&self) -> Result<Vec<u8>> {
        let nonempty: Vec<_> = self
            .aggregates
            .iter()
            .filter(|a| a.image_count > 0)
            .collect();
        Ok(serde_json::to_vec(&nonempty)?)
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&[
            &self.records_bytes()?,
            &self.aggregates_bytes()?,
        ]))
    }

    pub fn manifest(&self, seed: Option<u64>, rejected: usize) -> Result<DatasetManifest> {
        Ok(DatasetManifest {
            level: self.level,
            dim: self.dim,
            record_count: self.records.len(),
            nonempty_cells: self.nonempty_cells(),
            rejected,
            seed,
            content_hash: self.content_hash()?,
        })
    }

    /// Persist as a directory holding the manifest, records and aggregates.
    pub fn save(&self, dir: &Path, seed: Option<u64>, rejected: usize) -> Result<DatasetManifest> {
        fs::create_dir_all(dir)?;
        let records = self.records_bytes()?;
        let aggregates = self.aggregates_bytes()?;
        fs::write(dir.join(RECORDS_FILE), &records)?;
        fs::write(dir.join(AGGREGATES_FILE), &aggregates)?;
        let manifest = DatasetManifest {
            level: self.level,
            dim: self.dim,
            record_count: self.records.len(),
            nonempty_cells: self.nonempty_cells(),
            rejected,
            seed,
            content_hash: sha256_hex(&[&records, &aggregates]),
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }

    /// Reload a persisted dataset, verifying its content hash.
    pub fn load(dir: &Path) -> Result<(Self, DatasetManifest)> {
        let manifest: DatasetManifest =
            serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let records_raw = fs::read(dir.join(RECORDS_FILE))?;
        let aggregates_raw = fs::read(dir.join(AGGREGATES_FILE))?;
        let found = sha256_hex(&[&records_raw, &aggregates_raw]);
        if found != manifest.content_hash {
            return Err(Error::HashMismatch {
                artifact: dir.display().to_string(),
                expected: manifest.content_hash,
                found,
            });
        }
        let mut records = Vec::with_capacity(manifest.record_count);
        for line in records_raw.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
            let raw: RecordLine = serde_json::from_slice(line)?;
            records.push(GeoRecord::try_from(raw)?);
        }
        let dataset = Dataset::from_records(manifest.level as u32, records)?;
        if dataset.dim != manifest.dim && !dataset.records.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: manifest.dim,
                found: dataset.dim,
            });
        }
        Ok((dataset, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub level: u8,
    pub dim: usize,
    pub record_count: usize,
    pub nonempty_cells: usize,
    pub rejected: usize,
    pub seed: Option<u64>,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

pub struct Ingested {
    pub dataset: Dataset,
    pub report: IngestReport,
}

/// Accumulates records while enforcing the ingestion rules shared by the
/// JSON Lines and CSV readers.
struct Ingester {
    level: u8,
    strict: bool,
    dim: Option<usize>,
    ids: HashSet<String>,
    records: Vec<GeoRecord>,
    report: IngestReport,
}

impl Ingester {
    fn new(level: u32, strict: bool) -> Result<Self> {
        Ok(Self {
            level: cells::check_level(level)?,
            strict,
            dim: None,
            ids: HashSet::new(),
            records: Vec::new(),
            report: IngestReport::default(),
        })
    }

    fn reject(&mut self, line: usize, reason: String) -> Result<()> {
        if self.strict {
            return Err(Error::Malformed { line, reason });
        }
        self.report.rejected.push(Rejection { line, reason });
        Ok(())
    }

    fn push(&mut self, line: usize, raw: RecordLine) -> Result<()> {
        let found = raw.feat.len();
        match self.dim {
            Some(expected) if expected != found => {
                return Err(Error::DimensionMismatch { expected, found });
            }
            _ => {}
        }
        if self.ids.contains(&raw.id) {
            return self.reject(line, format!("duplicate id {:?}", raw.id));
        }
        match GeoRecord::try_from(raw) {
            Ok(record) => {
                self.dim = Some(found);
                self.ids.insert(record.id.clone());
                self.records.push(record);
                self.report.accepted += 1;
                Ok(())
            }
            Err(e) => self.reject(line, e.to_string()),
        }
    }

    fn finish(self) -> Result<Ingested> {
        let dataset = Dataset::from_records(self.level as u32, self.records)?;
        Ok(Ingested {
            dataset,
            report: self.report,
        })
    }
}

/// Ingest JSON Lines records `{"id", "lat", "lng", "feat"}`.
///
/// Malformed lines and invalid coordinates are rejected per record (fatal when
/// `strict`); a feature dimension differing from earlier records is always fatal.
pub fn ingest_jsonl<R: BufRead>(reader: R, level: u32, strict: bool) -> Result<Ingested> {
    let mut ingester = Ingester::new(level, strict)?;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RecordLine>(&line) {
            Ok(raw) => ingester.push(lineno, raw)?,
            Err(e) => ingester.reject(lineno, e.to_string())?,
        }
    }
    ingester.finish()
}

/// Ingest CSV with header `id,lat,lng,f0,...,f{D-1}`.
pub fn ingest_csv<R: Read>(reader: R, level: u32, strict: bool) -> Result<Ingested> {
    let mut ingester = Ingester::new(level, strict)?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "lat" || &headers[2] != "lng" {
        return Err(Error::Invalid(
            "CSV header must start with id,lat,lng".into(),
        ));
    }
    for (i, row) in csv.records().enumerate() {
        // header is line 1
        let lineno = i + 2;
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                ingester.reject(lineno, e.to_string())?;
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<RecordLine, String> {
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
            Ok(RecordLine {
                id: row[0].to_string(),
                lat: num(&row[1])?,
                lng: num(&row[2])?,
                feat: row
                    .iter()
                    .skip(3)
                    .map(num)
                    .collect::<std::result::Result<_, _>>()?,
            })
        })();
        match parsed {
            Ok(raw) => ingester.push(lineno, raw)?,
            Err(reason) => ingester.reject(lineno, reason)?,
        }
    }
    ingester.finish()
}

/// Build the initial region graph: one node per non-empty cell, with every
/// empty cell absorbed into a neighboring node.
///
/// Empty cells are assigned in rounds. In each round, every unassigned cell
/// with at least one neighbor assigned before the round joins the owner of one
/// such neighbor, picked uniformly with the seeded generator. The first round
/// therefore only merges into non-empty cells; later rounds reach cells whose
/// whole neighborhood was empty.
pub fn build_base_graph(d: &Dataset, seed: u64) -> Result<RegionGraph> {
    if d.records.is_empty() {
        return Err(Error::EmptyDataset(
            "cannot build a region graph without records".into(),
        ));
    }
    let level = d.level;
    let n_cells = d.aggregates.len();
    let mut owner: Vec<Option<usize>> = vec![None; n_cells];
    let mut node_of_cell = 0usize;
    for (idx, agg) in d.aggregates.iter().enumerate() {
        if agg.image_count > 0 {
            owner[idx] = Some(node_of_cell);
            node_of_cell += 1;
        }
    }
    let n_nodes = node_of_cell;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unassigned: Vec<usize> = (0..n_cells).filter(|&i| owner[i].is_none()).collect();
    while !unassigned.is_empty() {
        let snapshot = owner.clone();
        let mut still = Vec::new();
        for &idx in &unassigned {
            let cell = d.aggregates[idx].cell;
            let candidates: Vec<usize> = cell
                .neighbors()
                .iter()
                .filter_map(|n| snapshot[n.index()])
                .collect();
            match candidates.choose(&mut rng) {
                Some(&node) => owner[idx] = Some(node),
                None => still.push(idx),
            }
        }
        if still.len() == unassigned.len() {
            // unreachable on a connected grid with at least one non-empty cell
            return Err(Error::Degenerate(
                "empty cells unreachable from any node".into(),
            ));
        }
        unassigned = still;
    }

    let mut nodes: Vec<RegionNode> = (0..n_nodes).map(|_| RegionNode::default()).collect();
    for (idx, agg) in d.aggregates.iter().enumerate() {
        let node_id = owner[idx].expect("all cells assigned");
        let node = &mut nodes[node_id];
        node.cells.push(agg.cell);
        node.cell_count += 1;
        if agg.image_count > 0 {
            node.nonempty_cell_count += 1;
            node.image_count += agg.image_count;
            node.location_sum += agg.location_sum;
            node.feature = agg.mean_feature.clone();
        }
    }
    RegionGraph::new(level, d.dim, nodes)
}

/// Convenience for tests and tools: write records as JSON Lines.
pub fn write_jsonl<W: Write>(writer: W, records: &[GeoRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, &RecordLine::from(r))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
