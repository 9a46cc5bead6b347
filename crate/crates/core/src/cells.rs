//! Equirectangular quadtree over the sphere.
//!
//! Level `l` splits latitude into `2^l` bands and longitude into `2^(l+1)`
//! columns, so every cell spans the same number of degrees in both axes and
//! each cell has exactly four children. Cells are addressed by `(level, row,
//! col)`; row 0 touches the south pole and column 0 starts at -180.
//!
//! Cells are half-open `[lat_min, lat_max) x [lng_min, lng_max)`, except the
//! top row, which also owns `lat = +90`. Adjacency is edge sharing only: east
//! and west wrap around the antimeridian, poles have no neighbor beyond them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// Deepest supported level; column indices still fit in `u32`.
pub const MAX_LEVEL: u8 = 24;

/// Working level used when none is configured (8,192 cells).
pub const DEFAULT_LEVEL: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    level: u8,
    row: u32,
    col: u32,
}

/// Latitude/longitude extent of a cell, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lng_min: f64,
    pub lng_max: f64,
}

impl CellBounds {
    pub fn contains(&self, p: GeoPoint) -> bool {
        let lat_ok = if self.lat_max >= 90.0 {
            p.lat() >= self.lat_min && p.lat() <= self.lat_max
        } else {
            p.lat() >= self.lat_min && p.lat() < self.lat_max
        };
        lat_ok && p.lng() >= self.lng_min && p.lng() < self.lng_max
    }
}

pub fn check_level(level: u32) -> Result<u8> {
    if level > MAX_LEVEL as u32 {
        return Err(Error::LevelOutOfRange(level));
    }
    Ok(level as u8)
}

pub fn rows_at(level: u8) -> u32 {
    1 << level
}

pub fn cols_at(level: u8) -> u32 {
    1 << (level + 1)
}

/// Number of cells at `level`: `2^(2*level + 1)`.
pub fn cell_count(level: u8) -> u64 {
    1u64 << (2 * level as u32 + 1)
}

/// Iterate every cell at `level` in row-major order (the order of [`CellId::index`]).
pub fn all_cells(level: u8) -> impl Iterator<Item = CellId> {
    let cols = cols_at(level);
    (0..rows_at(level)).flat_map(move |row| (0..cols).map(move |col| CellId { level, row, col }))
}

/// Locate the cell containing `p` at `level`.
pub fn cell_at(p: GeoPoint, level: u32) -> Result<CellId> {
    let level = check_level(level)?;
    let rows = rows_at(level);
    let cols = cols_at(level);
    let row = (((p.lat() + 90.0) / 180.0) * rows as f64).floor() as i64;
    let col = (((p.lng() + 180.0) / 360.0) * cols as f64).floor() as i64;
    Ok(CellId {
        level,
        row: row.clamp(0, rows as i64 - 1) as u32,
        col: col.clamp(0, cols as i64 - 1) as u32,
    })
}

impl CellId {
    pub fn new(level: u32, row: u32, col: u32) -> Result<Self> {
        let level = check_level(level)?;
        if row >= rows_at(level) || col >= cols_at(level) {
            return Err(Error::InvalidCell(format!(
                "row {row} / col {col} out of range at level {level}"
            )));
        }
        Ok(Self { level, row, col })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn row(&self) -> u32 {
        self.row
    }

    pub fn col(&self) -> u32 {
        self.col
    }

    /// Row-major position among all cells of the same level.
    pub fn index(&self) -> usize {
        self.row as usize * cols_at(self.level) as usize + self.col as usize
    }

    pub fn from_index(level: u8, index: usize) -> Result<Self> {
        let cols = cols_at(level) as usize;
        Self::new(level as u32, (index / cols) as u32, (index % cols) as u32)
    }

    pub fn bounds(&self) -> CellBounds {
        let lat_step = 180.0 / rows_at(self.level) as f64;
        let lng_step = 360.0 / cols_at(self.level) as f64;
        CellBounds {
            lat_min: -90.0 + self.row as f64 * lat_step,
            lat_max: -90.0 + (self.row + 1) as f64 * lat_step,
            lng_min: -180.0 + self.col as f64 * lng_step,
            lng_max: -180.0 + (self.col + 1) as f64 * lng_step,
        }
    }

    /// Midpoint of the cell's latitude/longitude extent.
    pub fn center(&self) -> GeoPoint {
        let b = self.bounds();
        GeoPoint::new((b.lat_min + b.lat_max) / 2.0, (b.lng_min + b.lng_max) / 2.0)
            .expect("cell midpoints are valid coordinates")
    }

    /// Edge-sharing neighbors in the order east, west, north, south, without
    /// duplicates.
    pub fn neighbors(&self) -> Vec<CellId> {
        let cols = cols_at(self.level);
        let rows = rows_at(self.level);
        let mut out = Vec::with_capacity(4);
        let mut push = |c: CellId| {
            if c != *self && !out.contains(&c) {
                out.push(c);
            }
        };
        push(CellId {
            col: (self.col + 1) % cols,
            ..*self
        });
        push(CellId {
            col: (self.col + cols - 1) % cols,
            ..*self
        });
        if self.row + 1 < rows {
            push(CellId {
                row: self.row + 1,
                ..*self
            });
        }
        if self.row > 0 {
            push(CellId {
                row: self.row - 1,
                ..*self
            });
        }
        out
    }

    pub fn is_adjacent(&self, other: &CellId) -> bool {
        self.neighbors().contains(other)
    }

    /// The four cells one level down, in row-major order.
    pub fn children(&self) -> Result<[CellId; 4]> {
        if self.level >= MAX_LEVEL {
            return Err(Error::LevelOutOfRange(self.level as u32 + 1));
        }
        let level = self.level + 1;
        let (r, c) = (self.row * 2, self.col * 2);
        Ok([
            CellId {
                level,
                row: r,
                col: c,
            },
            CellId {
                level,
                row: r,
                col: c + 1,
            },
            CellId {
                level,
                row: r + 1,
                col: c,
            },
            CellId {
                level,
                row: r + 1,
                col: c + 1,
            },
        ])
    }

    pub fn parent(&self) -> Result<CellId> {
        if self.level == 0 {
            return Err(Error::InvalidCell("level-0 cells have no parent".into()));
        }
        Ok(CellId {
            level: self.level - 1,
            row: self.row / 2,
            col: self.col / 2,
        })
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}/{}/{}", self.level, self.row, self.col)
    }
}

impl FromStr for CellId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidCell(format!("cannot parse cell id {s:?}"));
        let rest = s.strip_prefix('L').ok_or_else(bad)?;
        let mut parts = rest.split('/');
        let mut next =
            || -> Result<u32> { parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad) };
        let (level, row, col) = (next()?, next()?, next()?);
        if parts.next().is_some() {
            return Err(bad());
        }
        CellId::new(level, row, col)
    }
}

impl Serialize for CellId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(level: u32, row: u32, col: u32) -> CellId {
        CellId::new(level, row, col).unwrap()
    }

    fn p(lat: f64, lng: f64) -> GeoPoint {
        GeoPoint::new(lat, lng).unwrap()
    }

    #[test]
    fn point_location_examples() {
        assert_eq!(cell_at(p(0.0, 0.0), 1).unwrap(), c(1, 1, 2));
        assert_eq!(cell_at(p(90.0, 0.0), 3).unwrap().row(), 7);
        assert_eq!(cell_at(p(-90.0, -180.0), 0).unwrap(), c(0, 0, 0));
        assert!(cell_at(p(0.0, 0.0), 25).is_err());
    }

    #[test]
    fn neighbor_examples() {
        let mut n = c(1, 0, 0).neighbors();
        n.sort();
        assert_eq!(n, vec![c(1, 0, 1), c(1, 0, 3), c(1, 1, 0)]);
        assert_eq!(c(3, 4, 5).neighbors().len(), 4);
        // level 0: two cells, each the other's east and west neighbor
        assert_eq!(c(0, 0, 0).neighbors(), vec![c(0, 0, 1)]);
    }

    #[test]
    fn hierarchy_examples() {
        assert_eq!(
            c(0, 0, 0).children().unwrap(),
            [c(1, 0, 0), c(1, 0, 1), c(1, 1, 0), c(1, 1, 1)]
        );
        assert_eq!(c(1, 1, 1).parent().unwrap(), c(0, 0, 0));
        assert!(c(0, 0, 1).parent().is_err());
        assert!(c(24, 0, 0).children().is_err());
    }

    #[test]
    fn center_examples() {
        assert_eq!(c(0, 0, 0).center(), p(0.0, -90.0));
        // level 1 columns are 90 degrees wide
        assert_eq!(c(1, 1, 2).center(), p(45.0, 45.0));
    }

    #[test]
    fn text_form() {
        let id = c(6, 12, 100);
        assert_eq!(id.to_string(), "L6/12/100");
        assert_eq!("L6/12/100".parse::<CellId>().unwrap(), id);
        assert!("L6/12".parse::<CellId>().is_err());
        assert!("L1/2/0".parse::<CellId>().is_err());
        assert!("6/1/1".parse::<CellId>().is_err());
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(json, "\"L6/12/100\"");
    }

    #[test]
    fn counts_and_indexing() {
        for level in 0..=6u8 {
            let cells: Vec<_> = all_cells(level).collect();
            assert_eq!(cells.len() as u64, cell_count(level));
            for (i, cell) in cells.iter().enumerate() {
                assert_eq!(cell.index(), i);
                assert_eq!(CellId::from_index(level, i).unwrap(), *cell);
            }
        }
    }

    #[test]
    fn centers_locate_exhaustively_to_level_5() {
        for level in 0..=5u8 {
            for cell in all_cells(level) {
                let center = cell.center();
                assert!(cell.bounds().contains(center));
                assert_eq!(cell_at(center, level as u32).unwrap(), cell);
            }
        }
    }

    #[test]
    fn top_row_owns_the_pole() {
        let top = c(4, 15, 3);
        assert!(top.bounds().contains(p(90.0, top.center().lng())));
        let below = c(4, 14, 3);
        assert!(!below
            .bounds()
            .contains(p(below.bounds().lat_max, below.center().lng())));
    }
}
