use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frames::Point2;

/// Fixed 8-entry drawing palette. The discriminant is the palette index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Colour {
    Water = 0,
    Grass = 1,
    Sand = 2,
    Bush = 3,
    Brown = 4,
    Red = 5,
    White = 6,
    Black = 7,
}

impl Colour {
    pub const ALL: [Colour; 8] = [
        Colour::Water,
        Colour::Grass,
        Colour::Sand,
        Colour::Bush,
        Colour::Brown,
        Colour::Red,
        Colour::White,
        Colour::Black,
    ];

    pub const COUNT: u8 = 8;

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Colour> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Colour::Water => "water",
            Colour::Grass => "grass",
            Colour::Sand => "sand",
            Colour::Bush => "bush",
            Colour::Brown => "brown",
            Colour::Red => "red",
            Colour::White => "white",
            Colour::Black => "black",
        }
    }
}

impl fmt::Display for Colour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Colour {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .or_else(|| s.parse::<u8>().ok().and_then(Colour::from_index))
            .ok_or_else(|| format!("unknown colour `{s}`"))
    }
}

/// Grid of palette indices over the play area. Row 0 is the bottom edge,
/// cells are stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColourRaster {
    pub width: usize,
    pub height: usize,
    /// Cell edge length in 0.1 mm units, so the raster stays `Eq` and hashes
    /// identically on every platform.
    pub cell_tenth_mm: u32,
    pub cells: Vec<u8>,
}

impl ColourRaster {
    pub fn filled(width: usize, height: usize, cell_size: f64, colour: Colour) -> Self {
        ColourRaster {
            width,
            height,
            cell_tenth_mm: (cell_size * 1e4).round() as u32,
            cells: vec![colour.index(); width * height],
        }
    }

    /// Raster from raw indices (which may be out of palette range).
    pub fn from_cells(width: usize, height: usize, cell_size: f64, cells: Vec<u8>) -> Self {
        assert_eq!(cells.len(), width * height, "cell count mismatch");
        ColourRaster {
            width,
            height,
            cell_tenth_mm: (cell_size * 1e4).round() as u32,
            cells,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_tenth_mm as f64 / 1e4
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: u8) {
        self.cells[row * self.width + col] = value;
    }

    pub fn cell_centre(&self, col: usize, row: usize) -> Point2 {
        let c = self.cell_size();
        Point2::new((col as f64 + 0.5) * c, (row as f64 + 0.5) * c)
    }

    /// Fills every cell whose centre lies within `[x0, x1) × [y0, y1)`.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, colour: Colour) {
        for row in 0..self.height {
            for col in 0..self.width {
                let p = self.cell_centre(col, row);
                if p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1 {
                    self.set(col, row, colour.index());
                }
            }
        }
    }

    /// Cells whose centre lies within `width / 2` of the polyline through
    /// `points`; a single point paints a disc.
    pub fn stroke_cells(&self, points: &[Point2], width: f64) -> Vec<(usize, usize)> {
        let mut hit = vec![false; self.cells.len()];
        let radius = width / 2.0;
        let cell = self.cell_size();
        let mut mark = |a: Point2, b: Point2| {
            let lo_x = a.x.min(b.x) - radius;
            let hi_x = a.x.max(b.x) + radius;
            let lo_y = a.y.min(b.y) - radius;
            let hi_y = a.y.max(b.y) + radius;
            let c0 = ((lo_x / cell).floor().max(0.0)) as usize;
            let r0 = ((lo_y / cell).floor().max(0.0)) as usize;
            let c1 = ((hi_x / cell).floor().max(0.0) as usize).min(self.width.saturating_sub(1));
            let r1 = ((hi_y / cell).floor().max(0.0) as usize).min(self.height.saturating_sub(1));
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let p = self.cell_centre(col, row);
                    if segment_distance(p, a, b) <= radius + STROKE_EPS {
                        hit[row * self.width + col] = true;
                    }
                }
            }
        };
        match points {
            [] => {}
            [p] => mark(*p, *p),
            _ => {
                for w in points.windows(2) {
                    mark(w[0], w[1]);
                }
            }
        }
        hit.iter()
            .enumerate()
            .filter(|(_, h)| **h)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn paint(&mut self, cells: &[(usize, usize)], colour: Colour) {
        for &(col, row) in cells {
            self.set(col, row, colour.index());
        }
    }
}

/// Slack on the stroke half-width so centres lying exactly on the boundary
/// are painted regardless of rounding.
pub const STROKE_EPS: f64 = 1e-12;

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Point2::new(a.x + t * dx, a.y + t * dy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_parsing() {
        assert_eq!("water".parse::<Colour>(), Ok(Colour::Water));
        assert_eq!("7".parse::<Colour>(), Ok(Colour::Black));
        assert!("8".parse::<Colour>().is_err());
        assert_eq!(Colour::from_index(3), Some(Colour::Bush));
    }

    #[test]
    fn fill_rect_uses_cell_centres() {
        let mut r = ColourRaster::filled(4, 4, 0.01, Colour::Grass);
        r.fill_rect(0.0, 0.0, 0.02, 0.04, Colour::Water);
        let water = r.cells.iter().filter(|c| **c == 0).count();
        assert_eq!(water, 8);
        assert_eq!(r.get(1, 3), 0);
        assert_eq!(r.get(2, 0), 1);
    }

    #[test]
    fn single_point_paints_a_disc() {
        let r = ColourRaster::filled(10, 10, 0.01, Colour::Grass);
        let cells = r.stroke_cells(&[Point2::new(0.05, 0.05)], 0.02);
        // centres at distance ≤ 0.01 from (0.05,0.05): the four around the point.
        assert_eq!(cells.len(), 4);
    }
}
