//! In-process typed pub/sub with a synchronized bag recorder.
//!
//! Publishing is serialized through one lock: sequence numbers, stamp
//! checks, recorder appends and delivery to subscriber channels all happen
//! in one critical section, so every subscriber sees each topic in
//! `(stamp, seq)` order. Subscribers drain their channel on their own
//! thread; delivery never blocks.

pub mod bag;
pub mod message;
mod mirror;
pub mod replay;

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use thiserror::Error;

use crate::time::Timestamp;
pub use bag::{Bag, BagError, BagHeader, BagIndex, BagWriter, TopicInfo};
pub use message::{Event, Payload, Schema, STANDARD_TOPICS};
pub use mirror::GameMirror;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("topic `{0}` is not declared")]
    UndeclaredTopic(String),
    #[error("topic `{topic}` carries `{expected}`, got `{got}`")]
    SchemaMismatch {
        topic: String,
        expected: Schema,
        got: Schema,
    },
    #[error("stamp {stamp} on `{topic}` is older than the last one ({last})")]
    RejectedOutOfOrder {
        topic: String,
        stamp: Timestamp,
        last: Timestamp,
    },
    #[error("topic `{0}` cannot be declared while recording")]
    DeclareWhileRecording(String),
    #[error("already recording")]
    AlreadyRecording,
    #[error("not recording")]
    NotRecording,
    #[error(transparent)]
    Bag(#[from] BagError),
}

struct TopicState {
    info: TopicInfo,
    next_seq: u32,
    last_stamp: Option<Timestamp>,
}

struct Subscriber {
    topics: Option<BTreeSet<String>>,
    tx: Sender<Event>,
}

type Recorder = BagWriter<Box<dyn Write + Send>>;

#[derive(Default)]
struct Inner {
    topics: Vec<TopicState>,
    by_name: HashMap<String, usize>,
    subscribers: Vec<Subscriber>,
    recorder: Option<Recorder>,
}

/// Cheap to clone; clones share topics, subscribers and recorder.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Mutex<Inner>>,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.lock();
        f.debug_struct("Bus")
            .field("topics", &inner.topics.len())
            .field("subscribers", &inner.subscribers.len())
            .field("recording", &inner.recorder.is_some())
            .finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// A bus with every standard topic declared.
    pub fn with_standard_topics() -> Self {
        let bus = Bus::new();
        for (name, schema) in STANDARD_TOPICS {
            bus.declare(name, *schema).expect("fresh bus accepts declarations");
        }
        bus
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Declares `name` with `schema`. Redeclaring with the same schema is a
    /// no-op; with another schema it is a mismatch. The bag's topic table is
    /// fixed when recording starts, so new topics are refused meanwhile.
    pub fn declare(&self, name: &str, schema: Schema) -> Result<(), BusError> {
        let mut inner = self.lock();
        if let Some(&i) = inner.by_name.get(name) {
            let expected = inner.topics[i].info.schema;
            return if expected == schema {
                Ok(())
            } else {
                Err(BusError::SchemaMismatch {
                    topic: name.to_string(),
                    expected,
                    got: schema,
                })
            };
        }
        if inner.recorder.is_some() {
            return Err(BusError::DeclareWhileRecording(name.to_string()));
        }
        let i = inner.topics.len();
        inner.topics.push(TopicState {
            info: TopicInfo {
                name: name.to_string(),
                schema,
            },
            next_seq: 0,
            last_stamp: None,
        });
        inner.by_name.insert(name.to_string(), i);
        Ok(())
    }

    pub fn schema_of(&self, topic: &str) -> Option<Schema> {
        let inner = self.lock();
        inner.by_name.get(topic).map(|&i| inner.topics[i].info.schema)
    }

    pub fn topics(&self) -> Vec<TopicInfo> {
        self.lock().topics.iter().map(|t| t.info.clone()).collect()
    }

    /// Stamps, sequences, records and delivers one event.
    pub fn publish(&self, topic: &str, payload: Payload, stamp: Timestamp) -> Result<Event, BusError> {
        let mut guard = self.lock();
        let inner = &mut *guard;
        let &i = inner
            .by_name
            .get(topic)
            .ok_or_else(|| BusError::UndeclaredTopic(topic.to_string()))?;
        let t = &inner.topics[i];
        if payload.schema() != t.info.schema {
            return Err(BusError::SchemaMismatch {
                topic: topic.to_string(),
                expected: t.info.schema,
                got: payload.schema(),
            });
        }
        if let Some(last) = t.last_stamp {
            if stamp < last {
                return Err(BusError::RejectedOutOfOrder {
                    topic: topic.to_string(),
                    stamp,
                    last,
                });
            }
        }
        let event = Event {
            topic: topic.to_string(),
            stamp,
            seq: t.next_seq,
            payload,
        };
        if let Some(rec) = inner.recorder.as_mut() {
            rec.append(&event)?;
        }
        let t = &mut inner.topics[i];
        t.next_seq += 1;
        t.last_stamp = Some(stamp);
        inner.subscribers.retain(|s| {
            let wanted = s.topics.as_ref().is_none_or(|set| set.contains(topic));
            !wanted || s.tx.send(event.clone()).is_ok()
        });
        Ok(event)
    }

    /// Subscribes to the given topics; an empty list means every topic.
    pub fn subscribe(&self, topics: &[&str]) -> Subscription {
        let (tx, rx) = mpsc::channel();
        let topics = if topics.is_empty() {
            None
        } else {
            Some(topics.iter().map(|t| t.to_string()).collect())
        };
        self.lock().subscribers.push(Subscriber { topics, tx });
        Subscription { rx }
    }

    pub fn is_recording(&self) -> bool {
        self.lock().recorder.is_some()
    }

    /// Starts recording every subsequently published event into `sink`.
    /// The bag's topic table is the set of topics declared now.
    pub fn start_recording(
        &self,
        sink: Box<dyn Write + Send>,
        session_id: &str,
        epoch_us: i64,
    ) -> Result<(), BusError> {
        let mut inner = self.lock();
        if inner.recorder.is_some() {
            return Err(BusError::AlreadyRecording);
        }
        let header = BagHeader {
            session_id: session_id.to_string(),
            epoch_us,
            topics: inner.topics.iter().map(|t| t.info.clone()).collect(),
        };
        inner.recorder = Some(BagWriter::new(sink, header)?);
        Ok(())
    }

    pub fn start_recording_to(
        &self,
        path: impl AsRef<Path>,
        session_id: &str,
        epoch_us: i64,
    ) -> Result<(), BusError> {
        let f = std::fs::File::create(path).map_err(BagError::from)?;
        self.start_recording(Box::new(std::io::BufWriter::new(f)), session_id, epoch_us)
    }

    /// Pushes buffered records to the sink without closing the bag.
    pub fn flush_recording(&self) -> Result<(), BusError> {
        match self.lock().recorder.as_mut() {
            Some(r) => Ok(r.flush()?),
            None => Err(BusError::NotRecording),
        }
    }

    /// Closes the bag, writing its index.
    pub fn stop_recording(&self) -> Result<BagIndex, BusError> {
        let rec = self.lock().recorder.take().ok_or(BusError::NotRecording)?;
        let (_, index) = rec.finish()?;
        Ok(index)
    }
}

/// Receiving end of a subscription. Dropping it unsubscribes.
pub struct Subscription {
    rx: Receiver<Event>,
}

impl Subscription {
    /// Everything delivered so far.
    pub fn drain(&self) -> Vec<Event> {
        self.rx.try_iter().collect()
    }

    pub fn try_recv(&self) -> Option<Event> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, d: Duration) -> Option<Event> {
        self.rx.recv_timeout(d).ok()
    }
}
