use sha2::{Digest, Sha256};

use super::{GameMode, GameState};

/// Metres → 0.1 mm fixed point.
fn fixed(v: f64) -> i64 {
    (v * 1e4).round() as i64
}

/// Canonical serialization of the hashed part of the state: mode, items
/// sorted by id, finalized strokes in order, background raster. Coordinates
/// are 0.1 mm integers and angles micro-radians.
pub fn canonical_bytes(state: &GameState) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * 1024);
    out.extend_from_slice(b"FPGS\x01");
    out.push(match state.mode() {
        GameMode::Tutorial => 0,
        GameMode::Freeplay => 1,
    });

    let mut items: Vec<_> = state.items().iter().collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for it in items {
        out.extend_from_slice(&(it.id.len() as u32).to_le_bytes());
        out.extend_from_slice(it.id.as_bytes());
        out.push(it.kind as u8);
        out.extend_from_slice(&fixed(it.pose.translation.x).to_le_bytes());
        out.extend_from_slice(&fixed(it.pose.translation.y).to_le_bytes());
        out.extend_from_slice(&((it.pose.rotation * 1e6).round() as i64).to_le_bytes());
        out.extend_from_slice(&fixed(it.footprint.0).to_le_bytes());
        out.extend_from_slice(&fixed(it.footprint.1).to_le_bytes());
        out.extend_from_slice(&it.z_order.to_le_bytes());
    }

    out.extend_from_slice(&(state.strokes().len() as u32).to_le_bytes());
    for s in state.strokes() {
        out.push(s.colour.index());
        out.extend_from_slice(&fixed(s.width).to_le_bytes());
        out.extend_from_slice(&(s.points.len() as u32).to_le_bytes());
        for p in &s.points {
            out.extend_from_slice(&fixed(p.x).to_le_bytes());
            out.extend_from_slice(&fixed(p.y).to_le_bytes());
            out.extend_from_slice(&p.stamp.micros().to_le_bytes());
        }
    }

    let bg = state.background();
    out.extend_from_slice(&(bg.width as u32).to_le_bytes());
    out.extend_from_slice(&(bg.height as u32).to_le_bytes());
    out.extend_from_slice(&bg.cell_tenth_mm.to_le_bytes());
    out.extend_from_slice(&bg.cells);
    out
}

/// 64-bit digest of [`canonical_bytes`]: the first eight bytes of its
/// SHA-256, little-endian.
pub fn snapshot_hash(state: &GameState) -> u64 {
    let digest = Sha256::digest(canonical_bytes(state));
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
