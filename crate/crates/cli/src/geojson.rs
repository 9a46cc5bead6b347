//! GeoJSON (RFC 7946) rendering of geoclass sets and predictions.
//!
//! A class is dissolved into rectilinear polygons by tracing the boundary
//! edges of its cells on the grid lattice. Rings keep the class on their left,
//! so exteriors come out counterclockwise and holes clockwise, as RFC 7946
//! asks. The lattice is not wrapped, which splits polygons at the antimeridian.

use std::collections::BTreeMap;

use combipart::cells::{cols_at, rows_at};
use combipart::fusion::PredictionLine;
use combipart::{geodesic_km, CellId, GeoPoint, GeoclassSet};
use serde_json::{json, Value};

/// Lattice vertex `(x, y)`: column and row boundary indices.
type Vertex = (i64, i64);

/// Closed ring of lattice vertices; the first vertex is not repeated.
pub type Ring = Vec<Vertex>;

/// One exterior ring with its holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

/// Twice the signed area; positive for counterclockwise rings.
fn doubled_area(ring: &Ring) -> i64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

/// Even-odd test for a point that never lies on a lattice line.
fn contains(ring: &Ring, (px, py): (f64, f64)) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        let (ax, ay, bx, by) = (a.0 as f64, a.1 as f64, b.0 as f64, b.1 as f64);
        if (ay > py) != (by > py) && px < ax + (py - ay) / (by - ay) * (bx - ax) {
            inside = !inside;
        }
    }
    inside
}

fn turn_rank(incoming: Vertex, outgoing: Vertex) -> u8 {
    let cross = incoming.0 * outgoing.1 - incoming.1 * outgoing.0;
    match cross.signum() {
        1 => 0,
        0 => 1,
        _ => 2,
    }
}

/// Drop vertices lying on a straight run.
fn simplify(ring: Ring) -> Ring {
    let n = ring.len();
    (0..n)
        .filter(|&i| {
            let (p, c, q) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
            (c.0 - p.0) * (q.1 - c.1) - (c.1 - p.1) * (q.0 - c.0) != 0
        })
        .map(|i| ring[i])
        .collect()
}

/// Dissolve same-level cells into polygons on the lattice.
pub fn dissolve(cells: &[CellId]) -> Vec<Polygon> {
    let Some(first) = cells.first() else {
        return Vec::new();
    };
    let level = first.level();
    let (rows, cols) = (rows_at(level) as i64, cols_at(level) as i64);
    let member: std::collections::BTreeSet<(i64, i64)> = cells
        .iter()
        .map(|c| (c.col() as i64, c.row() as i64))
        .collect();
    let inside =
        |x: i64, y: i64| x >= 0 && x < cols && y >= 0 && y < rows && member.contains(&(x, y));

    // counterclockwise boundary edges, keyed by start vertex
    let mut out: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
    for &(x, y) in &member {
        let sides = [
            ((x, y), (x + 1, y), (x, y - 1)),
            ((x + 1, y), (x + 1, y + 1), (x + 1, y)),
            ((x + 1, y + 1), (x, y + 1), (x, y + 1)),
            ((x, y + 1), (x, y), (x - 1, y)),
        ];
        for (a, b, across) in sides {
            if !inside(across.0, across.1) {
                out.entry(a).or_default().push(b);
            }
        }
    }

    let mut rings = Vec::new();
    while let Some((&start, _)) = out.iter().next() {
        let mut ring = vec![start];
        let mut prev = start;
        let mut cur = take_edge(&mut out, start, None);
        while cur != start {
            ring.push(cur);
            let dir = (cur.0 - prev.0, cur.1 - prev.1);
            prev = cur;
            cur = take_edge(&mut out, cur, Some(dir));
        }
        rings.push(simplify(ring));
    }

    let (exteriors, holes): (Vec<Ring>, Vec<Ring>) =
        rings.into_iter().partition(|r| doubled_area(r) > 0);
    let mut polygons: Vec<Polygon> = exteriors
        .into_iter()
        .map(|exterior| Polygon {
            exterior,
            holes: Vec::new(),
        })
        .collect();
    for hole in holes {
        // the cell left of the hole's first edge belongs to the owning component
        let (a, b) = (hole[0], hole[1 % hole.len()]);
        let d = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
        let probe = (
            a.0 as f64 + 0.5 * (d.0 - d.1) as f64,
            a.1 as f64 + 0.5 * (d.1 + d.0) as f64,
        );
        let owner = polygons
            .iter()
            .enumerate()
            .filter(|(_, p)| contains(&p.exterior, probe))
            .min_by_key(|(_, p)| doubled_area(&p.exterior))
            .map(|(i, _)| i)
            .expect("every hole lies inside an exterior");
        polygons[owner].holes.push(hole);
    }
    polygons
}

fn take_edge(
    out: &mut BTreeMap<Vertex, Vec<Vertex>>,
    at: Vertex,
    incoming: Option<Vertex>,
) -> Vertex {
    let edges = out.get_mut(&at).expect("boundary rings are closed");
    let pick = match incoming {
        Some(dir) if edges.len() > 1 => (0..edges.len())
            .min_by_key(|&i| turn_rank(dir, (edges[i].0 - at.0, edges[i].1 - at.1)))
            .expect("nonempty"),
        _ => 0,
    };
    let next = edges.swap_remove(pick);
    if edges.is_empty() {
        out.remove(&at);
    }
    next
}

fn lattice_to_lnglat(level: u8, (x, y): Vertex) -> [f64; 2] {
    let lng = -180.0 + x as f64 * 360.0 / cols_at(level) as f64;
    let lat = -90.0 + y as f64 * 180.0 / rows_at(level) as f64;
    [lng, lat]
}

fn ring_coords(level: u8, ring: &Ring) -> Vec<[f64; 2]> {
    let mut coords: Vec<[f64; 2]> = ring.iter().map(|&v| lattice_to_lnglat(level, v)).collect();
    coords.push(coords[0]);
    coords
}

pub fn multipolygon(level: u8, polygons: &[Polygon]) -> Value {
    let coords: Vec<Vec<Vec<[f64; 2]>>> = polygons
        .iter()
        .map(|p| {
            std::iter::once(&p.exterior)
                .chain(&p.holes)
                .map(|r| ring_coords(level, r))
                .collect()
        })
        .collect();
    json!({ "type": "MultiPolygon", "coordinates": coords })
}

/// One MultiPolygon feature per class.
pub fn set_features(set: &GeoclassSet, images: Option<&[u64]>) -> Vec<Value> {
    set.classes()
        .iter()
        .enumerate()
        .map(|(k, cells)| {
            let polygons = dissolve(cells);
            let mut props = json!({
                "set_id": set.set_id(),
                "class": k,
                "cells": cells.len(),
                "polygons": polygons.len(),
            });
            if let Some(images) = images {
                props["images"] = json!(images[k]);
            }
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": multipolygon(set.level(), &polygons),
            })
        })
        .collect()
}

fn position(p: GeoPoint) -> [f64; 2] {
    [p.lng(), p.lat()]
}

/// Line from `a` to `b`, split where it crosses the antimeridian.
fn link_geometry(a: GeoPoint, b: GeoPoint) -> Value {
    let (mut lng_b, lat_b) = (b.lng(), b.lat());
    if (lng_b - a.lng()).abs() <= 180.0 {
        return json!({ "type": "LineString", "coordinates": [position(a), position(b)] });
    }
    // unwrap b next to a, then cut at +-180
    lng_b += if lng_b < a.lng() { 360.0 } else { -360.0 };
    let edge = if lng_b > a.lng() { 180.0 } else { -180.0 };
    let t = (edge - a.lng()) / (lng_b - a.lng());
    let lat_cut = a.lat() + t * (lat_b - a.lat());
    json!({
        "type": "MultiLineString",
        "coordinates": [
            [position(a), [edge, lat_cut]],
            [[-edge, lat_cut], position(b)],
        ],
    })
}

/// A point per prediction, plus a line to the true location when known.
pub fn prediction_features(
    preds: &[PredictionLine],
    truth: &BTreeMap<String, GeoPoint>,
) -> combipart::Result<Vec<Value>> {
    let mut features = Vec::new();
    for p in preds {
        let loc = p.location()?;
        let mut props = json!({
            "query_id": p.query_id,
            "kind": "prediction",
            "score_max": p.score_max,
            "argmax_cells": p.argmax_cells.len(),
            "images_in_argmax": p.images_in_argmax,
            "expanded": p.expanded,
        });
        let t = truth.get(&p.query_id);
        if let Some(&t) = t {
            props["error_km"] = json!(geodesic_km(loc, t));
        }
        features.push(json!({
            "type": "Feature",
            "properties": props,
            "geometry": { "type": "Point", "coordinates": position(loc) },
        }));
        if let Some(&t) = t {
            features.push(json!({
                "type": "Feature",
                "properties": { "query_id": p.query_id, "kind": "truth_link" },
                "geometry": link_geometry(loc, t),
            }));
        }
    }
    Ok(features)
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({ "type": "FeatureCollection", "features": features })
}
