//! Colour-zone segmentation of the composite raster and the game analytics
//! derived from it (zone transitions, proximity events).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{in_play_area, Colour, ColourRaster};
use crate::frames::Point2;
use crate::time::Timestamp;

pub const DEFAULT_PROXIMITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ZoneError {
    #[error("cell ({col}, {row}) holds invalid palette index {index}")]
    InvalidPalette { col: usize, row: usize, index: u8 },
    #[error("raster is empty")]
    EmptyRaster,
    #[error("point ({0}, {1}) is outside the play area")]
    OutOfBounds(f64, f64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub id: u32,
    pub colour: Colour,
    pub cells: u32,
    /// Inclusive cell bounds: (min col, min row, max col, max row).
    pub bbox: (u32, u32, u32, u32),
}

/// 4-connected colour components of a raster. Zone ids follow the row-major
/// order of each zone's first cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneMap {
    pub width: usize,
    pub height: usize,
    pub cell_tenth_mm: u32,
    pub labels: Vec<u32>,
    pub zones: Vec<Zone>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneTransition {
    pub item_id: String,
    pub from_zone: u32,
    pub to_zone: u32,
    pub stamp: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximityEvent {
    pub item_a: String,
    pub item_b: String,
    pub distance_before: f64,
    pub distance_after: f64,
    pub stamp: Timestamp,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let up = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller provisional label as root.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass connected-component labelling with a union-find over
/// provisional labels.
pub fn segment(raster: &ColourRaster) -> Result<ZoneMap, ZoneError> {
    if raster.is_empty() {
        return Err(ZoneError::EmptyRaster);
    }
    let (w, h) = (raster.width, raster.height);
    if let Some(i) = raster.cells.iter().position(|c| *c >= Colour::COUNT) {
        return Err(ZoneError::InvalidPalette {
            col: i % w,
            row: i / w,
            index: raster.cells[i],
        });
    }

    let mut sets = DisjointSet::new();
    let mut provisional = vec![0u32; w * h];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let c = raster.cells[i];
            let left = (col > 0 && raster.cells[i - 1] == c).then(|| provisional[i - 1]);
            let below = (row > 0 && raster.cells[i - w] == c).then(|| provisional[i - w]);
            provisional[i] = match (left, below) {
                (None, None) => sets.make(),
                (Some(l), None) => l,
                (None, Some(b)) => b,
                (Some(l), Some(b)) => {
                    sets.union(l, b);
                    l.min(b)
                }
            };
        }
    }

    // Second pass: final ids in row-major order of first appearance.
    let mut final_id = vec![u32::MAX; sets.parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut zones: Vec<Zone> = Vec::new();
    for (i, p) in provisional.iter().enumerate() {
        let root = sets.find(*p) as usize;
        let (col, row) = ((i % w) as u32, (i / w) as u32);
        if final_id[root] == u32::MAX {
            final_id[root] = zones.len() as u32;
            zones.push(Zone {
                id: final_id[root],
                colour: Colour::from_index(raster.cells[i]).expect("validated"),
                cells: 0,
                bbox: (col, row, col, row),
            });
        }
        let id = final_id[root];
        labels[i] = id;
        let z = &mut zones[id as usize];
        z.cells += 1;
        z.bbox = (
            z.bbox.0.min(col),
            z.bbox.1.min(row),
            z.bbox.2.max(col),
            z.bbox.3.max(row),
        );
    }
    Ok(ZoneMap {
        width: w,
        height: h,
        cell_tenth_mm: raster.cell_tenth_mm,
        labels,
        zones,
    })
}

impl ZoneMap {
    pub fn cell_size(&self) -> f64 {
        self.cell_tenth_mm as f64 / 1e4
    }

    pub fn label(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Cell containing `p` by floor(coordinate / cell); a point on the far
    /// edge of the play area belongs to the last cell.
    pub fn cell_of(&self, p: Point2) -> Result<(usize, usize), ZoneError> {
        if !in_play_area(p) {
            return Err(ZoneError::OutOfBounds(p.x, p.y));
        }
        let c = self.cell_size();
        let col = ((p.x / c).floor() as usize).min(self.width - 1);
        let row = ((p.y / c).floor() as usize).min(self.height - 1);
        Ok((col, row))
    }

    pub fn zone_of(&self, p: Point2) -> Result<u32, ZoneError> {
        let (col, row) = self.cell_of(p)?;
        Ok(self.label(col, row))
    }

    pub fn zone(&self, id: u32) -> Option<&Zone> {
        self.zones.get(id as usize)
    }

    /// Raster whose cells hold each zone's colour.
    pub fn to_raster(&self) -> ColourRaster {
        let cells = self
            .labels
            .iter()
            .map(|l| self.zones[*l as usize].colour.index())
            .collect();
        ColourRaster {
            width: self.width,
            height: self.height,
            cell_tenth_mm: self.cell_tenth_mm,
            cells,
        }
    }
}

/// A zone transition if the drag release moved the item across zones.
pub fn detect_transition(
    map: &ZoneMap,
    item_id: &str,
    before: Point2,
    after: Point2,
    stamp: Timestamp,
) -> Result<Option<ZoneTransition>, ZoneError> {
    let from_zone = map.zone_of(before)?;
    let to_zone = map.zone_of(after)?;
    Ok((from_zone != to_zone).then(|| ZoneTransition {
        item_id: item_id.to_string(),
        from_zone,
        to_zone,
        stamp,
    }))
}

/// One event per unordered pair of items whose centre distance shrank by
/// more than `threshold`. `before` and `after` list the same items (by id);
/// pairs are reported in id order.
pub fn detect_proximity(
    before: &[(String, Point2)],
    after: &[(String, Point2)],
    threshold: f64,
    stamp: Timestamp,
) -> Vec<ProximityEvent> {
    let mut pairs: Vec<(&str, Point2, Point2)> = before
        .iter()
        .filter_map(|(id, b)| {
            after
                .iter()
                .find(|(aid, _)| aid == id)
                .map(|(_, a)| (id.as_str(), *b, *a))
        })
        .collect();
    pairs.sort_by(|x, y| x.0.cmp(y.0));
    let mut out = Vec::new();
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let (a, a0, a1) = pairs[i];
            let (b, b0, b1) = pairs[j];
            let d0 = a0.distance(b0);
            let d1 = a1.distance(b1);
            if d1 < d0 - threshold {
                out.push(ProximityEvent {
                    item_a: a.to_string(),
                    item_b: b.to_string(),
                    distance_before: d0,
                    distance_after: d1,
                    stamp,
                });
            }
        }
    }
    out
}
