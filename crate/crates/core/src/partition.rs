//! Geoclass set generation by greedy hierarchical merging of a region graph.
//!
//! Each node carries a score `w = a1*n_img + a2*n_nonempty + a3*n_cells` and
//! each edge a dissimilarity `v = b1*dist_vis + b2*dist_geo`, both distances
//! normalized into `[0, 1]`. The lowest-scoring node is repeatedly merged into
//! its nearest neighbor by edge weight until the requested number of classes
//! remains. The merged node's score is the sum of the two scores.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{self, CellId};
use crate::error::{Error, Result};
use crate::geo::{self, GeoPoint, Vec3, MAX_GEODESIC_KM};
use crate::hash::json_hash;

/// A connected region of cells with the aggregates needed for scoring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionNode {
    pub cells: Vec<CellId>,
    pub image_count: u64,
    pub nonempty_cell_count: u64,
    pub cell_count: u64,
    /// Image-count-weighted mean feature; absent when the node has no images.
    pub feature: Option<Vec<f64>>,
    pub location_sum: Vec3,
}

impl RegionNode {
    /// Mean image location, or the mean of cell centers for image-free nodes.
    pub fn center(&self) -> GeoPoint {
        region_center(self.image_count, self.location_sum, &self.cells)
    }
}

fn region_center(image_count: u64, location_sum: Vec3, cells: &[CellId]) -> GeoPoint {
    if image_count > 0 {
        if let Ok(p) = geo::mean_direction(location_sum, image_count as f64) {
            return p;
        }
    }
    let sum = cells.iter().fold(Vec3::ZERO, |acc, c| {
        acc + c.center().to_cartesian().as_vec()
    });
    match geo::mean_direction(sum, cells.len().max(1) as f64) {
        Ok(p) => p,
        // symmetric coverage (e.g. the whole sphere) has no mean direction
        Err(_) => cells
            .first()
            .map_or_else(|| GeoPoint::new(0.0, 0.0).expect("valid"), |c| c.center()),
    }
}

/// Regions covering every cell at one level, with edges between regions that
/// own adjacent cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct RegionGraph {
    level: u8,
    dim: usize,
    nodes: Vec<RegionNode>,
    edges: BTreeSet<(usize, usize)>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct RawGraph {
    level: u8,
    dim: usize,
    nodes: Vec<RegionNode>,
}

impl TryFrom<RawGraph> for RegionGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        RegionGraph::new(raw.level, raw.dim, raw.nodes)
    }
}

impl RegionGraph {
    /// Validate that `nodes` partition the level's cells and derive the edges.
    pub fn new(level: u8, dim: usize, mut nodes: Vec<RegionNode>) -> Result<Self> {
        cells::check_level(level as u32)?;
        let n_cells = cells::cell_count(level) as usize;
        let mut owner = vec![usize::MAX; n_cells];
        for (id, node) in nodes.iter_mut().enumerate() {
            node.cells.sort();
            if node.cell_count != node.cells.len() as u64 {
                return Err(Error::Invalid(format!(
                    "node {id}: cell_count disagrees with cells"
                )));
            }
            if node.feature.as_ref().is_some_and(|f| f.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: node.feature.as_ref().map_or(0, Vec::len),
                });
            }
            if node.feature.is_some() != (node.image_count > 0) {
                return Err(Error::Invalid(format!(
                    "node {id}: feature present iff images"
                )));
            }
            for c in &node.cells {
                if c.level() != level {
                    return Err(Error::LevelMismatch {
                        expected: level,
                        found: c.level(),
                    });
                }
                if owner[c.index()] != usize::MAX {
                    return Err(Error::Invalid(format!("cell {c} owned by two nodes")));
                }
                owner[c.index()] = id;
            }
        }
        if let Some(idx) = owner.iter().position(|&o| o == usize::MAX) {
            let cell = CellId::from_index(level, idx)?;
            return Err(Error::Invalid(format!("cell {cell} not owned by any node")));
        }
        let mut edges = BTreeSet::new();
        for (idx, &a) in owner.iter().enumerate() {
            for n in CellId::from_index(level, idx)?.neighbors() {
                let b = owner[n.index()];
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        Ok(Self {
            level,
            dim,
            nodes,
            edges,
            adjacency,
        })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[RegionNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn connected_components(&self) -> usize {
        let mut seen = vec![false; self.nodes.len()];
        let mut components = 0;
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    pub fn content_hash(&self) -> Result<String> {
        json_hash(self)
    }
}

/// How many (or which) feature dimensions a set's visual distance uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimSpec {
    Count(usize),
    /// Only `"all"` is accepted.
    Named(String),
}

impl Default for DimSpec {
    fn default() -> Self {
        DimSpec::Named("all".into())
    }
}

/// One section of a parameters file: the unresolved recipe for a geoclass set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    pub set_id: String,
    pub target_classes: usize,
    pub alpha: [f64; 3],
    pub beta: [f64; 2],
    #[serde(default)]
    pub feature_dims: DimSpec,
    #[serde(default)]
    pub seed: u64,
}

impl SetSpec {
    /// Draw the feature subspace from the seed and validate the weights.
    pub fn resolve(&self, dim: usize) -> Result<GenParams> {
        let count = match &self.feature_dims {
            DimSpec::Count(n) => *n,
            DimSpec::Named(s) if s == "all" => dim,
            DimSpec::Named(s) => {
                return Err(Error::InvalidParams(format!(
                    "feature_dims {s:?}: expected a count or \"all\""
                )))
            }
        };
        if count > dim {
            return Err(Error::InvalidParams(format!(
                "set {}: {count} feature dimensions requested, data has {dim}",
                self.set_id
            )));
        }
        let feature_dims = if count == dim {
            (0..dim).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let mut picked = index::sample(&mut rng, dim, count).into_vec();
            picked.sort_unstable();
            picked
        };
        let params = GenParams {
            target_classes: self.target_classes,
            alpha: self.alpha,
            beta: self.beta,
            feature_dims,
            seed: self.seed,
        };
        params.validate_weights()?;
        Ok(params)
    }
}

/// The sections of a parameters file, one per geoclass set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub sets: Vec<SetSpec>,
}

impl ParamsFile {
    /// Read JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parsed: ParamsFile = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)?
        } else {
            serde_json::from_str(&text)?
        };
        if parsed.sets.is_empty() {
            return Err(Error::InvalidParams("parameters file lists no sets".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &parsed.sets {
            if !ids.insert(s.set_id.as_str()) {
                return Err(Error::InvalidParams(format!(
                    "duplicate set_id {:?}",
                    s.set_id
                )));
            }
        }
        Ok(parsed)
    }
}

/// Five reference recipes with fixed weight settings.
///
/// Class counts keep the published ratios (9969 : 9969 : 12977 : 12333 :
/// 11262) rescaled so their mean is `mean_classes`; feature subspace sizes keep
/// the published fractions of a 2048-d feature (2048, 0, 1187, 1113, 1498).
pub fn reference_set_specs(mean_classes: usize, dim: usize, seed: u64) -> Vec<SetSpec> {
    const CLASSES: [f64; 5] = [9969.0, 9969.0, 12977.0, 12333.0, 11262.0];
    const DIMS: [f64; 5] = [2048.0, 0.0, 1187.0, 1113.0, 1498.0];
    const ALPHA: [[f64; 3]; 5] = [
        [1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.501, 0.490, 0.009],
        [0.953, 0.044, 0.003],
        [0.713, 0.287, 0.0],
    ];
    const BETA: [[f64; 2]; 5] = [
        [1.0, 0.0],
        [0.0, 1.0],
        [0.421, 0.579],
        [0.628, 0.372],
        [0.057, 0.943],
    ];
    let mean = CLASSES.iter().sum::<f64>() / 5.0;
    (0..5)
        .map(|i| SetSpec {
            set_id: format!("set{}", i + 1),
            target_classes: ((CLASSES[i] / mean) * mean_classes as f64).round().max(1.0) as usize,
            alpha: ALPHA[i],
            beta: BETA[i],
            feature_dims: DimSpec::Count((DIMS[i] / 2048.0 * dim as f64).round() as usize),
            seed: seed.wrapping_add(i as u64),
        })
        .collect()
}

/// Resolved generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub target_classes: usize,
    pub alpha: [f64; 3],
    pub beta: [f64; 2],
    /// Sorted feature indices used by the visual distance.
    pub feature_dims: Vec<usize>,
    pub seed: u64,
}

impl GenParams {
    fn validate_weights(&self) -> Result<()> {
        let in_unit = |w: &f64| (0.0..=1.0).contains(w);
        if !self.alpha.iter().all(in_unit) || !self.beta.iter().all(in_unit) {
            return Err(Error::InvalidParams(
                "alpha and beta weights must lie in [0, 1]".into(),
            ));
        }
        if self.alpha.iter().all(|&a| a == 0.0) {
            return Err(Error::InvalidParams(
                "at least one alpha weight must be positive".into(),
            ));
        }
        if self.beta.iter().all(|&b| b == 0.0) {
            return Err(Error::InvalidParams(
                "at least one beta weight must be positive".into(),
            ));
        }
        if self.target_classes == 0 {
            return Err(Error::InvalidParams(
                "target_classes must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn validate(&self, graph: &RegionGraph) -> Result<()> {
        self.validate_weights()?;
        if self.feature_dims.iter().any(|&d| d >= graph.dim()) {
            return Err(Error::InvalidParams(format!(
                "feature_dims index beyond dimension {}",
                graph.dim()
            )));
        }
        if self.target_classes > graph.nodes().len() {
            return Err(Error::InvalidParams(format!(
                "target_classes {} exceeds node count {}",
                self.target_classes,
                graph.nodes().len()
            )));
        }
        Ok(())
    }
}

pub fn node_score(node: &RegionNode, alpha: [f64; 3]) -> f64 {
    alpha[0] * node.image_count as f64
        + alpha[1] * node.nonempty_cell_count as f64
        + alpha[2] * node.cell_count as f64
}

/// `(1 - cos)/2` over the selected dimensions; 1 when either side has no
/// feature, 0.5 when either restricted vector is zero.
pub fn visual_distance(a: Option<&[f64]>, b: Option<&[f64]>, dims: &[usize]) -> f64 {
    let (Some(a), Some(b)) = (a, b) else {
        return 1.0;
    };
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for &d in dims {
        dot += a[d] * b[d];
        na += a[d] * a[d];
        nb += b[d] * b[d];
    }
    cosine_distance(dot, na, nb)
}

fn cosine_distance(dot: f64, norm_sq_a: f64, norm_sq_b: f64) -> f64 {
    let denom = (norm_sq_a * norm_sq_b).sqrt();
    if denom == 0.0 {
        return 0.5;
    }
    ((1.0 - (dot / denom).clamp(-1.0, 1.0)) / 2.0).clamp(0.0, 1.0)
}

/// Great-circle distance between centers as a fraction of half the circumference.
pub fn geo_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    (geo::geodesic_km(a, b) / MAX_GEODESIC_KM).clamp(0.0, 1.0)
}

pub fn edge_weight(u: &RegionNode, v: &RegionNode, beta: [f64; 2], dims: &[usize]) -> f64 {
    let vis = if beta[0] > 0.0 {
        visual_distance(u.feature.as_deref(), v.feature.as_deref(), dims)
    } else {
        0.0
    };
    let geo = if beta[1] > 0.0 {
        geo_distance(u.center(), v.center())
    } else {
        0.0
    };
    beta[0] * vis + beta[1] * geo
}

/// A complete partitioning of the level's cells into edge-connected classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet")]
pub struct GeoclassSet {
    set_id: String,
    level: u8,
    params: GenParams,
    classes: Vec<Vec<CellId>>,
    #[serde(skip)]
    cell_to_class: Vec<u32>,
}

#[derive(Deserialize)]
struct RawSet {
    set_id: String,
    level: u8,
    params: GenParams,
    classes: Vec<Vec<CellId>>,
}

impl TryFrom<RawSet> for GeoclassSet {
    type Error = Error;

    fn try_from(raw: RawSet) -> Result<Self> {
        GeoclassSet::from_classes(raw.set_id, raw.level, raw.params, raw.classes)
    }
}

impl GeoclassSet {
    /// Canonicalize and validate: classes must be nonempty and partition every
    /// cell at `level`. Cells are sorted within a class and classes ordered by
    /// their first cell.
    pub fn from_classes(
        set_id: String,
        level: u8,
        params: GenParams,
        mut classes: Vec<Vec<CellId>>,
    ) -> Result<Self> {
        cells::check_level(level as u32)?;
        for class in &mut classes {
            class.sort();
            if class.is_empty() {
                return Err(Error::Invalid(format!("set {set_id}: empty class")));
            }
        }
        classes.sort_by_key(|c| c[0]);
        let n_cells = cells::cell_count(level) as usize;
        let mut cell_to_class = vec![u32::MAX; n_cells];
        for (k, class) in classes.iter().enumerate() {
            for c in class {
                if c.level() != level {
                    return Err(Error::LevelMismatch {
                        expected: level,
                        found: c.level(),
                    });
                }
                if cell_to_class[c.index()] != u32::MAX {
                    return Err(Error::Invalid(format!(
                        "set {set_id}: cell {c} in two classes"
                    )));
                }
                cell_to_class[c.index()] = k as u32;
            }
        }
        if cell_to_class.contains(&u32::MAX) {
            return Err(Error::Invalid(format!(
                "set {set_id}: classes do not cover every cell"
            )));
        }
        Ok(Self {
            set_id,
            level,
            params,
            classes,
            cell_to_class,
        })
    }

    pub fn set_id(&self) -> &str {
        &self.set_id
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn params(&self) -> &GenParams {
        &self.params
    }

    pub fn classes(&self) -> &[Vec<CellId>] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, cell: CellId) -> usize {
        self.cell_to_class[cell.index()] as usize
    }

    /// Class index per cell, indexed by [`CellId::index`].
    pub fn cell_to_class(&self) -> &[u32] {
        &self.cell_to_class
    }

    pub fn content_hash(&self) -> Result<String> {
        json_hash(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// True when the cells form one component under edge adjacency.
pub fn is_edge_connected(cells: &[CellId]) -> bool {
    let Some(&first) = cells.first() else {
        return true;
    };
    let members: BTreeSet<CellId> = cells.iter().copied().collect();
    let mut seen = BTreeSet::from([first]);
    let mut queue = VecDeque::from([first]);
    while let Some(c) = queue.pop_front() {
        for n in c.neighbors() {
            if members.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == members.len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
struct WorkNode {
    score: f64,
    image_count: u64,
    nonempty_cell_count: u64,
    cell_count: u64,
    /// Restricted to the selected feature dimensions.
    feature: Option<Vec<f64>>,
    location_sum: Vec3,
    cells: Vec<CellId>,
    center: GeoPoint,
    neighbors: BTreeSet<usize>,
    alive: bool,
    version: u32,
}

/// One merge performed by [`GreedyMerger::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeStep {
    /// Lowest-scoring node; it disappears.
    pub absorbed: usize,
    /// Its nearest neighbor, which keeps its id and takes the union.
    pub into: usize,
    pub edge_weight: f64,
    pub merged_score: f64,
}

/// Stepwise greedy merger.
///
/// Base scores are rounded to a power-of-two quantum small enough that the
/// total stays below 2^53 quanta, which makes every merge sum exact and the
/// total score invariant bit for bit.
pub struct GreedyMerger {
    params: GenParams,
    level: u8,
    nodes: Vec<WorkNode>,
    heap: BinaryHeap<Reverse<(Key, usize, u32)>>,
    live: usize,
}

impl GreedyMerger {
    pub fn new(graph: &RegionGraph, params: &GenParams) -> Result<Self> {
        params.validate(graph)?;
        let components = graph.connected_components();
        if components > params.target_classes {
            return Err(Error::Infeasible {
                target: params.target_classes,
                components,
            });
        }
        let raw: Vec<f64> = graph
            .nodes()
            .iter()
            .map(|n| node_score(n, params.alpha))
            .collect();
        let quantum = score_quantum(raw.iter().sum());
        let nodes: Vec<WorkNode> = graph
            .nodes()
            .iter()
            .enumerate()
            .map(|(id, n)| WorkNode {
                score: (raw[id] / quantum).round() * quantum,
                image_count: n.image_count,
                nonempty_cell_count: n.nonempty_cell_count,
                cell_count: n.cell_count,
                feature: n
                    .feature
                    .as_ref()
                    .map(|f| params.feature_dims.iter().map(|&d| f[d]).collect()),
                location_sum: n.location_sum,
                cells: n.cells.clone(),
                center: n.center(),
                neighbors: graph.neighbors(id).iter().copied().collect(),
                alive: true,
                version: 0,
            })
            .collect();
        let heap = nodes
            .iter()
            .enumerate()
            .map(|(id, n)| Reverse((Key(n.score), id, 0)))
            .collect();
        Ok(Self {
            params: params.clone(),
            level: graph.level(),
            live: nodes.len(),
            nodes,
            heap,
        })
    }

    pub fn live_count(&self) -> usize {
        self.live
    }

    /// Ids and scores of the live nodes, in id order.
    pub fn live_scores(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive)
            .map(|(id, n)| (id, n.score))
    }

    pub fn total_score(&self) -> f64 {
        self.live_scores().map(|(_, s)| s).sum()
    }

    /// Cells currently owned by each live node.
    pub fn live_regions(&self) -> impl Iterator<Item = (usize, &[CellId])> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive)
            .map(|(id, n)| (id, n.cells.as_slice()))
    }

    fn weight(&self, a: &WorkNode, b: &WorkNode) -> f64 {
        let beta = self.params.beta;
        let vis = if beta[0] > 0.0 {
            match (&a.feature, &b.feature) {
                (Some(fa), Some(fb)) => {
                    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                    for (x, y) in fa.iter().zip(fb) {
                        dot += x * y;
                        na += x * x;
                        nb += y * y;
                    }
                    cosine_distance(dot, na, nb)
                }
                _ => 1.0,
            }
        } else {
            0.0
        };
        let geo = if beta[1] > 0.0 {
            geo_distance(a.center, b.center)
        } else {
            0.0
        };
        beta[0] * vis + beta[1] * geo
    }

    /// Merge the lowest-scoring mergeable node into its nearest neighbor.
    ///
    /// Returns `None` once the target is reached or nothing can merge.
    pub fn step(&mut self) -> Option<MergeStep> {
        if self.live <= self.params.target_classes {
            return None;
        }
        let low = loop {
            let Reverse((_, id, version)) = self.heap.pop()?;
            let node = &self.nodes[id];
            // stale entry, or a finished component with nothing left to merge
            if !node.alive || node.version != version || node.neighbors.is_empty() {
                continue;
            }
            break id;
        };
        let (into, edge_weight) = self.nodes[low]
            .neighbors
            .iter()
            .map(|&nb| (nb, self.weight(&self.nodes[low], &self.nodes[nb])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("neighbors nonempty");

        let absorbed = {
            let node = &mut self.nodes[low];
            node.alive = false;
            WorkNode {
                cells: std::mem::take(&mut node.cells),
                feature: node.feature.take(),
                neighbors: std::mem::take(&mut node.neighbors),
                ..*node
            }
        };
        for &x in &absorbed.neighbors {
            if x != into {
                self.nodes[x].neighbors.remove(&low);
                self.nodes[x].neighbors.insert(into);
            }
        }
        let target = &mut self.nodes[into];
        target.neighbors.remove(&low);
        target
            .neighbors
            .extend(absorbed.neighbors.iter().copied().filter(|&x| x != into));
        target.feature = match (target.feature.take(), absorbed.feature) {
            (Some(a), Some(b)) => {
                let (na, nb) = (target.image_count as f64, absorbed.image_count as f64);
                let total = na + nb;
                Some(
                    a.iter()
                        .zip(&b)
                        .map(|(x, y)| (x * na + y * nb) / total)
                        .collect(),
                )
            }
            (a, b) => a.or(b),
        };
        target.score += absorbed.score;
        target.image_count += absorbed.image_count;
        target.nonempty_cell_count += absorbed.nonempty_cell_count;
        target.cell_count += absorbed.cell_count;
        target.location_sum += absorbed.location_sum;
        target.cells.extend(absorbed.cells);
        target.center = region_center(target.image_count, target.location_sum, &target.cells);
        target.version += 1;
        let merged_score = target.score;
        self.heap
            .push(Reverse((Key(merged_score), into, target.version)));
        self.live -= 1;
        Some(MergeStep {
            absorbed: low,
            into,
            edge_weight,
            merged_score,
        })
    }

    /// Run to completion and emit the set.
    pub fn finish(mut self, set_id: impl Into<String>) -> Result<GeoclassSet> {
        while self.step().is_some() {}
        if self.live != self.params.target_classes {
            return Err(Error::Infeasible {
                target: self.params.target_classes,
                components: self.live,
            });
        }
        let classes = self
            .nodes
            .into_iter()
            .filter(|n| n.alive)
            .map(|n| n.cells)
            .collect();
        GeoclassSet::from_classes(set_id.into(), self.level, self.params, classes)
    }
}

fn score_quantum(total: f64) -> f64 {
    let floor = 2f64.powi(-20);
    if total.is_nan() || total <= 0.0 {
        return floor;
    }
    let exp = total.log2().ceil() as i32 - 52;
    floor.max(2f64.powi(exp))
}

/// Greedily merge `graph` down to `params.target_classes` classes.
pub fn generate_geoclass_set(
    graph: &RegionGraph,
    params: &GenParams,
    set_id: impl Into<String>,
) -> Result<GeoclassSet> {
    GreedyMerger::new(graph, params)?.finish(set_id)
}
