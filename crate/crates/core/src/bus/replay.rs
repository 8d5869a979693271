//! Timed playback of a bag, with seek.

use std::time::Duration;

use thiserror::Error;

use super::bag::{Bag, BagError};
use super::message::Event;
use super::{Bus, BusError};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("seek target {seek} is past the end of the bag ({end})")]
    SeekPastEnd { seek: Timestamp, end: Timestamp },
    #[error("replay speed must be finite and non-negative, got {0}")]
    InvalidSpeed(f64),
    #[error(transparent)]
    Bag(#[from] BagError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Source of inter-event delays. Tests substitute one that only records.
pub trait Sleeper {
    fn sleep(&mut self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&mut self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Accumulates requested delays without waiting.
#[derive(Debug, Default)]
pub struct NoSleep {
    pub total: Duration,
}

impl Sleeper for NoSleep {
    fn sleep(&mut self, d: Duration) {
        self.total += d;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayOptions {
    /// Playback rate; 0 plays as fast as possible.
    pub speed: f64,
    pub seek_to: Option<Timestamp>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            speed: 0.0,
            seek_to: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplayStats {
    /// State-bearing events at or before the seek point, applied at once.
    pub fast_forwarded: usize,
    /// Other events before the seek point, not delivered.
    pub skipped: usize,
    pub played: usize,
}

/// Delivers the bag's events to `sink` in bag order. With a seek, events
/// stamped at or before the target are delivered immediately if they are
/// state-bearing (flagged `true`) and dropped otherwise; the rest follow
/// with delays of Δstamp / speed.
pub fn replay(
    bag: &Bag,
    opts: ReplayOptions,
    sleeper: &mut dyn Sleeper,
    mut sink: impl FnMut(&Event, bool) -> Result<(), ReplayError>,
) -> Result<ReplayStats, ReplayError> {
    if !(opts.speed.is_finite() && opts.speed >= 0.0) {
        return Err(ReplayError::InvalidSpeed(opts.speed));
    }
    let end = bag.time_bounds().map(|b| b.1).unwrap_or(Timestamp::ZERO);
    if let Some(seek) = opts.seek_to {
        if seek > end {
            return Err(ReplayError::SeekPastEnd { seek, end });
        }
    }
    let mut stats = ReplayStats::default();
    let mut clock = opts.seek_to;
    for r in bag.records() {
        let event = bag.decode(r)?;
        if opts.seek_to.is_some_and(|s| event.stamp <= s) {
            let schema = bag.header.topics[r.topic_id as usize].schema;
            if schema.is_state_bearing() {
                sink(&event, true)?;
                stats.fast_forwarded += 1;
            } else {
                stats.skipped += 1;
            }
            continue;
        }
        if opts.speed > 0.0 {
            if let Some(prev) = clock {
                let gap = event.stamp.saturating_sub(prev);
                if !gap.is_zero() {
                    sleeper.sleep(gap.div_f64(opts.speed));
                }
            }
        }
        clock = Some(event.stamp);
        sink(&event, false)?;
        stats.played += 1;
    }
    Ok(stats)
}

/// Replays into a bus, re-publishing each event on its original topic.
/// Topics are declared from the bag's header first.
pub fn replay_into_bus(
    bag: &Bag,
    bus: &Bus,
    opts: ReplayOptions,
    sleeper: &mut dyn Sleeper,
) -> Result<ReplayStats, ReplayError> {
    for t in &bag.header.topics {
        bus.declare(&t.name, t.schema)?;
    }
    replay(bag, opts, sleeper, |e, _| {
        bus.publish(&e.topic, e.payload.clone(), e.stamp)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::bag::{BagHeader, TopicInfo};
    use crate::bus::message::{Payload, Schema, BLOB_AUDIO, GAME_MODE};
    use crate::engine::GameMode;

    fn bag() -> Bag {
        let header = BagHeader {
            session_id: "x".into(),
            epoch_us: 0,
            topics: vec![
                TopicInfo { name: GAME_MODE.into(), schema: Schema::Mode },
                TopicInfo { name: BLOB_AUDIO.into(), schema: Schema::Blob },
            ],
        };
        let events = vec![
            Event { topic: GAME_MODE.into(), stamp: Timestamp::from_secs(1), seq: 0, payload: Payload::Mode(GameMode::Freeplay) },
            Event { topic: BLOB_AUDIO.into(), stamp: Timestamp::from_secs(2), seq: 0, payload: Payload::Blob(vec![1]) },
            Event { topic: GAME_MODE.into(), stamp: Timestamp::from_secs(4), seq: 1, payload: Payload::Mode(GameMode::Tutorial) },
        ];
        Bag::from_events(header, &events).unwrap()
    }

    #[test]
    fn speed_scales_delays() {
        let mut s = NoSleep::default();
        let opts = ReplayOptions { speed: 2.0, seek_to: None };
        let stats = replay(&bag(), opts, &mut s, |_, _| Ok(())).unwrap();
        assert_eq!(stats.played, 3);
        assert_eq!(s.total, Duration::from_millis(1500));
    }

    #[test]
    fn speed_zero_never_sleeps() {
        let mut s = NoSleep::default();
        replay(&bag(), ReplayOptions::default(), &mut s, |_, _| Ok(())).unwrap();
        assert_eq!(s.total, Duration::ZERO);
    }

    #[test]
    fn seek_fast_forwards_state_and_skips_the_rest() {
        let mut s = NoSleep::default();
        let mut seen = Vec::new();
        let opts = ReplayOptions { speed: 1.0, seek_to: Some(Timestamp::from_secs(3)) };
        let stats = replay(&bag(), opts, &mut s, |e, ff| {
            seen.push((e.topic.clone(), ff));
            Ok(())
        })
        .unwrap();
        assert_eq!(stats, ReplayStats { fast_forwarded: 1, skipped: 1, played: 1 });
        assert_eq!(seen, vec![(GAME_MODE.to_string(), true), (GAME_MODE.to_string(), false)]);
        assert_eq!(s.total, Duration::from_secs(1));
    }

    #[test]
    fn seek_past_end_fails() {
        let opts = ReplayOptions { speed: 0.0, seek_to: Some(Timestamp::from_secs(5)) };
        assert!(matches!(replay(&bag(), opts, &mut NoSleep::default(), |_, _| Ok(())), Err(ReplayError::SeekPastEnd { .. })));
        let opts = ReplayOptions { speed: -1.0, seek_to: None };
        assert!(matches!(replay(&bag(), opts, &mut NoSleep::default(), |_, _| Ok(())), Err(ReplayError::InvalidSpeed(_))));
    }

    #[test]
    fn empty_bag_ends_at_once() {
        let empty = Bag::from_events(bag().header.clone(), &[]).unwrap();
        let stats = replay(&empty, ReplayOptions::default(), &mut NoSleep::default(), |_, _| panic!("no events")).unwrap();
        assert_eq!(stats, ReplayStats::default());
    }

    #[test]
    fn republishes_on_a_bus() {
        let bus = Bus::new();
        let sub = bus.subscribe(&[]);
        replay_into_bus(&bag(), &bus, ReplayOptions::default(), &mut NoSleep::default()).unwrap();
        let got: Vec<_> = sub.drain().into_iter().map(|e| e.payload).collect();
        let want: Vec<_> = bag().events().unwrap().into_iter().map(|e| e.payload).collect();
        assert_eq!(got, want);
    }
}
