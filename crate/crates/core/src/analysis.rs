//! Game-interaction analytics shared by the live pipeline and the offline
//! `analyze` report, so both produce the same findings from the same deltas.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::annotation::DurationStats;
use crate::bus::{Bag, BagError, GameMirror, Payload};
use crate::engine::{GameDelta, GameState, ItemDelta, StrokeDelta};
use crate::frames::Point2;
use crate::session::{Condition, ProtocolStage, SessionRecord, StageEntry};
use crate::time::Timestamp;
use crate::zones::{
    detect_proximity, detect_transition, segment, ProximityEvent, ZoneError, ZoneMap,
    ZoneTransition, DEFAULT_PROXIMITY_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Bag(#[from] BagError),
    #[error(transparent)]
    Zone(#[from] ZoneError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Finding {
    Zones(ZoneMap),
    Transition(ZoneTransition),
    Proximity(ProximityEvent),
}

/// Watches game deltas against the state they were applied to.
///
/// Zones are recomputed from the composite raster when a stroke is
/// finished or the background or drawing layer is replaced, never per
/// move point. Releases are checked for zone transitions and proximity.
#[derive(Debug, Clone)]
pub struct Analytics {
    zones: Option<ZoneMap>,
    threshold: f64,
}

impl Default for Analytics {
    fn default() -> Self {
        Self::new()
    }
}

impl Analytics {
    pub fn new() -> Self {
        Analytics {
            zones: None,
            threshold: DEFAULT_PROXIMITY_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn zones(&self) -> Option<&ZoneMap> {
        self.zones.as_ref()
    }

    /// Segments `state`; returns the map when it differs from the last one.
    pub fn resegment(&mut self, state: &GameState) -> Result<Option<ZoneMap>, ZoneError> {
        let map = segment(&state.composite_raster())?;
        if self.zones.as_ref() == Some(&map) {
            return Ok(None);
        }
        self.zones = Some(map.clone());
        Ok(Some(map))
    }

    /// `state` must already include `delta`.
    pub fn observe(
        &mut self,
        state: &GameState,
        delta: &GameDelta,
        stamp: Timestamp,
    ) -> Result<Vec<Finding>, ZoneError> {
        let mut out = Vec::new();
        match delta {
            GameDelta::Background(_)
            | GameDelta::Stroke(StrokeDelta::End { .. } | StrokeDelta::Snapshot(_)) => {
                if let Some(map) = self.resegment(state)? {
                    out.push(Finding::Zones(map));
                }
            }
            GameDelta::Item(ItemDelta::Release {
                item_id, from, to, ..
            }) => {
                if self.zones.is_none() {
                    self.resegment(state)?;
                }
                let map = self.zones.as_ref().expect("segmented above");
                if let Some(t) = detect_transition(map, item_id, *from, *to, stamp)? {
                    out.push(Finding::Transition(t));
                }
                let after: Vec<(String, Point2)> = state
                    .items()
                    .iter()
                    .map(|it| (it.id.clone(), it.centre()))
                    .collect();
                let before: Vec<(String, Point2)> = after
                    .iter()
                    .map(|(id, p)| (id.clone(), if id == item_id { *from } else { *p }))
                    .collect();
                out.extend(
                    detect_proximity(&before, &after, self.threshold, stamp)
                        .into_iter()
                        .map(Finding::Proximity),
                );
            }
            _ => {}
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeplaySpan {
    pub session_id: String,
    pub condition: Condition,
    pub start: Timestamp,
    /// Exit stamp, or the bag's last stamp when free play never ended.
    pub end: Timestamp,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub transitions: Vec<ZoneTransition>,
    pub proximity: Vec<ProximityEvent>,
    /// Completed drags that changed an item's position, per item.
    pub moves: BTreeMap<String, u32>,
    pub freeplay: Option<FreeplaySpan>,
}

impl Report {
    /// Tab-separated report with fixed section order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        s.push_str("# transitions\nstamp_us\titem\tfrom_zone\tto_zone\n");
        for t in &self.transitions {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", t.stamp.micros(), t.item_id, t.from_zone, t.to_zone);
        }
        s.push_str("# proximity\nstamp_us\titem_a\titem_b\tdistance_before_m\tdistance_after_m\n");
        for p in &self.proximity {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{:.6}",
                p.stamp.micros(),
                p.item_a,
                p.item_b,
                p.distance_before,
                p.distance_after
            );
        }
        s.push_str("# moves\nitem\tmoves\n");
        for (item, n) in &self.moves {
            let _ = writeln!(s, "{item}\t{n}");
        }
        s.push_str("# freeplay\nsession\tcondition\tstart_us\tend_us\tduration_s\n");
        if let Some(f) = &self.freeplay {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}",
                f.session_id,
                f.condition,
                f.start.micros(),
                f.end.micros(),
                f.end.saturating_sub(f.start).as_secs_f64()
            );
        }
        s
    }
}

/// Recomputes analytics from a bag's game topics. Recorded analysis topics
/// are ignored, so the report depends only on what happened in the game.
pub fn analyze(bag: &Bag) -> Result<Report, AnalysisError> {
    let mut mirror = GameMirror::new();
    let mut analytics = Analytics::new();
    let mut report = Report::default();
    let mut freeplay: Option<FreeplaySpan> = None;
    let end = bag.time_bounds().map(|b| b.1).unwrap_or_default();

    for r in bag.records() {
        let event = bag.decode(r)?;
        if let Payload::Stage(change) = &event.payload {
            if change.to == ProtocolStage::Freeplay {
                freeplay = Some(FreeplaySpan {
                    session_id: change.session_id.clone(),
                    condition: change.condition,
                    start: change.stamp,
                    end,
                });
            } else if change.from == Some(ProtocolStage::Freeplay) {
                if let Some(f) = freeplay.as_mut() {
                    f.end = change.stamp;
                }
            }
            continue;
        }
        if !mirror.apply(&event) {
            continue;
        }
        let Some(delta) = event.payload.as_delta() else {
            continue;
        };
        match &delta {
            GameDelta::Item(ItemDelta::Snapshot(items)) => {
                for it in items {
                    report.moves.entry(it.id.clone()).or_insert(0);
                }
            }
            GameDelta::Item(ItemDelta::Release { item_id, from, to, .. }) if from != to => {
                *report.moves.entry(item_id.clone()).or_insert(0) += 1;
            }
            _ => {}
        }
        for f in analytics.observe(mirror.state(), &delta, event.stamp)? {
            match f {
                Finding::Transition(t) => report.transitions.push(t),
                Finding::Proximity(p) => report.proximity.push(p),
                Finding::Zones(_) => {}
            }
        }
    }
    report.freeplay = freeplay;
    Ok(report)
}

/// Session record reconstructed from the stage events in a bag.
pub fn session_from_bag(bag: &Bag) -> Result<Option<SessionRecord>, BagError> {
    let mut record: Option<SessionRecord> = None;
    for r in bag.records() {
        let event = bag.decode(r)?;
        let Payload::Stage(change) = event.payload else {
            continue;
        };
        let rec = record.get_or_insert_with(|| SessionRecord {
            id: change.session_id.clone(),
            condition: change.condition,
            demographics: Vec::new(),
            stages: Vec::new(),
            bag_path: None,
        });
        if let Some(last) = rec.stages.last_mut() {
            last.exit = Some(change.stamp);
        }
        rec.stages.push(StageEntry {
            stage: change.to,
            enter: change.stamp,
            exit: None,
        });
    }
    Ok(record)
}

/// Tab-separated duration statistics: one summary line and the histogram
/// bins per condition.
pub fn stats_tsv(stats: &[DurationStats]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
    let mut s = String::from("# summary\ncondition\tn\tmean_min\tsd_min\n");
    for st in stats {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", st.condition, st.count, fmt(st.mean_min), fmt(st.sd_min));
    }
    s.push_str("# histogram\ncondition\tbin_start_min\tbin_end_min\tcount\n");
    for st in stats {
        for b in &st.bins {
            let _ = writeln!(s, "{}\t{:.3}\t{:.3}\t{}", st.condition, b.start_min, b.end_min, b.count);
        }
    }
    s
}
