//! Plain-text scene description.
//!
//! ```text
//! # comment
//! background grass
//! fill water 0.00 0.00 0.20 0.12
//! # id kind x y w h z
//! zebra animal 0.10 0.25 0.06 0.06 1
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use super::raster::{Colour, ColourRaster};
use super::{Item, ItemKind, PLAY_HEIGHT, PLAY_WIDTH};
use crate::frames::Transform2D;

pub const DEFAULT_CELL_SIZE: f64 = 0.005;
pub const DEFAULT_SCENE: &str = include_str!("../../../../scenes/default.scene");

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub items: Vec<Item>,
    pub background: ColourRaster,
}

impl Scene {
    /// Default background grid: 5 mm cells over the play area (120 × 66).
    pub fn empty() -> Scene {
        Scene {
            items: Vec::new(),
            background: default_raster(Colour::Grass),
        }
    }

    pub fn parse(text: &str) -> Result<Scene, SceneError> {
        let mut scene = Scene::empty();
        let mut ids = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |message: String| SceneError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
            match fields[0] {
                "background" => {
                    if fields.len() != 2 {
                        return Err(err("expected `background COLOUR`".into()));
                    }
                    let c: Colour = fields[1].parse().map_err(err)?;
                    scene.background = default_raster(c);
                }
                "fill" => {
                    if fields.len() != 6 {
                        return Err(err("expected `fill COLOUR x0 y0 x1 y1`".into()));
                    }
                    let c: Colour = fields[1].parse().map_err(err)?;
                    let (x0, y0, x1, y1) =
                        (num(fields[2])?, num(fields[3])?, num(fields[4])?, num(fields[5])?);
                    scene.background.fill_rect(x0, y0, x1, y1, c);
                }
                id => {
                    if fields.len() != 7 {
                        return Err(err("expected `id kind x y w h z`".into()));
                    }
                    let kind: ItemKind = fields[1].parse().map_err(err)?;
                    let (x, y, w, h) =
                        (num(fields[2])?, num(fields[3])?, num(fields[4])?, num(fields[5])?);
                    let z: i32 = fields[6]
                        .parse()
                        .map_err(|e| err(format!("z `{}`: {e}", fields[6])))?;
                    if !(0.0..=PLAY_WIDTH).contains(&x) || !(0.0..=PLAY_HEIGHT).contains(&y) {
                        return Err(err(format!("item `{id}` outside the play area")));
                    }
                    if !(w > 0.0 && h > 0.0) {
                        return Err(err(format!("item `{id}` needs a positive footprint")));
                    }
                    if !ids.insert(id.to_string()) {
                        return Err(err(format!("duplicate item id `{id}`")));
                    }
                    scene.items.push(Item {
                        id: id.to_string(),
                        kind,
                        pose: Transform2D::from_translation(x, y),
                        footprint: (w, h),
                        z_order: z,
                    });
                }
            }
        }
        scene.items.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(scene)
    }

    /// Item lines only; the background is not round-tripped.
    pub fn items_to_text(&self) -> String {
        let mut out = String::new();
        for it in &self.items {
            let _ = writeln!(
                out,
                "{} {} {:.4} {:.4} {:.4} {:.4} {}",
                it.id,
                it.kind,
                it.pose.translation.x,
                it.pose.translation.y,
                it.footprint.0,
                it.footprint.1,
                it.z_order
            );
        }
        out
    }
}

fn default_raster(fill: Colour) -> ColourRaster {
    let w = (PLAY_WIDTH / DEFAULT_CELL_SIZE).round() as usize;
    let h = (PLAY_HEIGHT / DEFAULT_CELL_SIZE).round() as usize;
    ColourRaster::filled(w, h, DEFAULT_CELL_SIZE, fill)
}
