//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here goes through the index or aggregate shortcuts of the library:
//! every oracle walks cells or records directly.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use combipart::cells::{all_cells, cell_count};
use combipart::partition::GenParams;
use combipart::{build_base_graph, CellId, Dataset, GeoPoint, GeoRecord, GeoclassSet, RegionGraph};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const R_KM: f64 = 6371.0088;

/// Great-circle distance by the atan2 (Vincenty special case) formula.
pub fn vincenty_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dl = (b.1 - a.1).to_radians();
    let y = ((p2.cos() * dl.sin()).powi(2)
        + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2))
    .sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    y.atan2(x) * R_KM
}

/// Fused per-cell scores evaluated cell by cell over abstract cells.
///
/// `labels[i][c]` is the class of cell `c` in set `i`, `scores[i]` that set's
/// class scores.
pub fn brute_fuse(labels: &[Vec<usize>], scores: &[Vec<f64>], normalized: bool) -> Vec<f64> {
    let n_cells = labels[0].len();
    let mut out = vec![0.0; n_cells];
    for (lab, sc) in labels.iter().zip(scores) {
        let geoscore: Vec<f64> = lab.iter().map(|&k| sc[k]).collect();
        let denom: f64 = if normalized {
            geoscore.iter().sum()
        } else {
            1.0
        };
        for (o, g) in out.iter_mut().zip(&geoscore) {
            *o += g / denom;
        }
    }
    out
}

/// Nonempty class-tuple intersections, found by testing every tuple of the
/// Cartesian product against every cell.
pub fn brute_partitions(sets: &[GeoclassSet]) -> BTreeMap<Vec<u32>, Vec<CellId>> {
    let level = sets[0].level();
    let mut tuples: Vec<Vec<u32>> = vec![vec![]];
    for s in sets {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                (0..s.class_count() as u32).map(move |k| {
                    let mut t = t.clone();
                    t.push(k);
                    t
                })
            })
            .collect();
    }
    let mut out = BTreeMap::new();
    for t in tuples {
        let members: Vec<CellId> = all_cells(level)
            .filter(|&c| {
                sets.iter()
                    .zip(&t)
                    .all(|(s, &k)| s.class_of(c) == k as usize)
            })
            .collect();
        if !members.is_empty() {
            out.insert(t, members);
        }
    }
    out
}

/// Prediction straight from the records: the argmax cells are those within 1e-12
/// of the best per-cell score; the prediction is the normalized sum of their
/// records' unit vectors. Returns `None` when the argmax cells hold no records.
pub fn brute_predict(
    cell_scores: &[(CellId, f64)],
    records: &[GeoRecord],
) -> Option<(GeoPoint, usize)> {
    let max = cell_scores
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<CellId> = cell_scores
        .iter()
        .filter(|&&(_, s)| s >= max - 1e-12)
        .map(|&(c, _)| c)
        .collect();
    let level = top[0].level() as u32;
    let (mut x, mut y, mut z, mut n) = (0.0, 0.0, 0.0, 0usize);
    for r in records {
        let c = combipart::cell_at(r.location, level).unwrap();
        if top.contains(&c) {
            let (lat, lng) = (r.location.lat().to_radians(), r.location.lng().to_radians());
            x += lat.cos() * lng.cos();
            y += lat.cos() * lng.sin();
            z += lat.sin();
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let norm = (x * x + y * y + z * z).sqrt();
    let p = GeoPoint::new((z / norm).asin().to_degrees(), y.atan2(x).to_degrees()).unwrap();
    Some((p, top.len()))
}

pub fn dummy_params() -> GenParams {
    GenParams {
        target_classes: 1,
        alpha: [1.0, 0.0, 0.0],
        beta: [1.0, 0.0],
        feature_dims: vec![],
        seed: 0,
    }
}

/// Set with the given class label per cell (labels need not be contiguous).
pub fn set_from_labels(id: &str, level: u8, labels: &[usize]) -> GeoclassSet {
    let mut classes: BTreeMap<usize, Vec<CellId>> = BTreeMap::new();
    for (c, &k) in all_cells(level).zip(labels) {
        classes.entry(k).or_default().push(c);
    }
    GeoclassSet::from_classes(
        id.into(),
        level,
        dummy_params(),
        classes.into_values().collect(),
    )
    .unwrap()
}

/// Random labeling of every cell into at most `max_classes` classes.
pub fn random_set(rng: &mut ChaCha8Rng, id: &str, level: u8, max_classes: usize) -> GeoclassSet {
    let n = cell_count(level) as usize;
    let k = rng.random_range(1..=max_classes.min(n));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    set_from_labels(id, level, &labels)
}

/// Class label per cell for a set, in cell index order.
pub fn labels_of(s: &GeoclassSet) -> Vec<usize> {
    s.cell_to_class().iter().map(|&k| k as usize).collect()
}

pub fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        if v.iter().any(|&s| s > 0.0) {
            return v;
        }
    }
}

pub fn random_point(rng: &mut ChaCha8Rng) -> GeoPoint {
    let z: f64 = rng.random_range(-1.0..=1.0);
    GeoPoint::new(z.asin().to_degrees(), rng.random_range(-180.0..180.0)).unwrap()
}

/// Random records with `dim`-dimensional features, some cells left empty.
pub fn random_dataset(rng: &mut ChaCha8Rng, level: u8, n: usize, dim: usize) -> Dataset {
    let records = (0..n)
        .map(|i| GeoRecord {
            id: format!("r{i}"),
            location: random_point(rng),
            feature: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    Dataset::from_records(level as u32, records).unwrap()
}

/// Edge connectivity, with adjacency recomputed from cell bounds.
pub fn bfs_connected(cells: &[CellId]) -> bool {
    let members: BTreeSet<CellId> = cells.iter().copied().collect();
    let mut seen = BTreeSet::from([cells[0]]);
    let mut queue = VecDeque::from([cells[0]]);
    while let Some(c) = queue.pop_front() {
        let b = c.bounds();
        // adjacency recomputed from bounds: shared latitude edge, or shared
        // longitude edge with wrap-around
        for &m in &members {
            let mb = m.bounds();
            let same_cols = mb.lng_min == b.lng_min;
            let same_rows = mb.lat_min == b.lat_min;
            let vertical = same_cols && (mb.lat_min == b.lat_max || mb.lat_max == b.lat_min);
            let horizontal = same_rows
                && (mb.lng_min == b.lng_max
                    || mb.lng_max == b.lng_min
                    || (mb.lng_min == -180.0 && b.lng_max == 180.0)
                    || (mb.lng_max == 180.0 && b.lng_min == -180.0));
            if (vertical || horizontal) && seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen.len() == members.len()
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> RegionGraph {
    let level = rng.random_range(1..=3u8);
    let n = rng.random_range(3..=150);
    let d = random_dataset(rng, level, n, 4);
    build_base_graph(&d, rng.random()).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, graph: &RegionGraph) -> GenParams {
    let alpha = loop {
        let a = [
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
        ];
        if a.iter().any(|&x| x > 0.0) {
            break a;
        }
    };
    let beta = [rng.random_range(0.0..=1.0), rng.random_range(0.01..=1.0)];
    let dims: Vec<usize> = (0..4).filter(|_| rng.random_bool(0.6)).collect();
    GenParams {
        target_classes: rng.random_range(1..=graph.nodes().len()),
        alpha,
        beta,
        feature_dims: dims,
        seed: 0,
    }
}
