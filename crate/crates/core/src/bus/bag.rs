//! The `.fpbag` file format.
//!
//! ```text
//! header   "FPSB" u16:version u16:len session-id i64:epoch-us
//!          u16:topic-count { u16:len name u16:len schema }*
//! records  { u32:len u16:topic-id u64:stamp u32:seq payload }*
//! index    u32:0xFFFFFFFF u16:topic-count
//!          { u16:topic-id u32:count u64:first u64:last u64:offset* }*
//! trailer  u64:index-offset "FPIX"
//! ```
//!
//! All integers little-endian. A record's `len` counts the bytes after the
//! length field. Index offsets point at a record's length field. A bag cut
//! off before its index is still readable; the index is rebuilt by scanning.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use bincode::Options;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::message::{Event, Payload, Schema};
use crate::time::Timestamp;

pub const MAGIC: &[u8; 4] = b"FPSB";
pub const INDEX_MAGIC: &[u8; 4] = b"FPIX";
pub const FORMAT_VERSION: u16 = 1;
pub const BAG_EXTENSION: &str = "fpbag";
/// Records may arrive up to this much behind the newest stamp and still be
/// written in order.
pub const DEFAULT_REORDER_WINDOW: Duration = Duration::from_secs(2);

const INDEX_SENTINEL: u32 = u32::MAX;
const RECORD_HEAD: usize = 2 + 8 + 4;
const TRAILER_LEN: usize = 8 + 4;

#[derive(Debug, Error)]
pub enum BagError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("out of space while writing the bag")]
    OutOfSpace,
    #[error("corrupt bag at byte {offset}: {reason}")]
    CorruptBag { offset: u64, reason: String },
    #[error("record on `{topic}` at {stamp} is older than already written data ({watermark})")]
    RejectedOutOfOrder {
        topic: String,
        stamp: Timestamp,
        watermark: Timestamp,
    },
    #[error("topic `{0}` is not in the bag's topic table")]
    UnknownTopic(String),
}

impl BagError {
    fn corrupt(offset: usize, reason: impl Into<String>) -> Self {
        BagError::CorruptBag {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn from_io(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::StorageFull | io::ErrorKind::WriteZero => BagError::OutOfSpace,
            _ => BagError::IoFailure(e),
        }
    }
}

fn codec() -> impl Options {
    bincode::options()
        .with_fixint_encoding()
        .with_little_endian()
        .reject_trailing_bytes()
}

pub fn encode_payload(p: &Payload) -> Vec<u8> {
    codec().serialize(p).expect("payloads always serialize")
}

pub fn decode_payload(schema: Schema, bytes: &[u8]) -> Result<Payload, String> {
    let p: Payload = codec().deserialize(bytes).map_err(|e| e.to_string())?;
    if p.schema() != schema {
        return Err(format!("payload is `{}`, topic schema is `{schema}`", p.schema()));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicInfo {
    pub name: String,
    pub schema: Schema,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagHeader {
    pub session_id: String,
    /// Wall-clock time of stamp zero, microseconds since the Unix epoch.
    pub epoch_us: i64,
    /// Topic id is the position in this table.
    pub topics: Vec<TopicInfo>,
}

impl BagHeader {
    pub fn topic_id(&self, name: &str) -> Option<u16> {
        self.topics.iter().position(|t| t.name == name).map(|i| i as u16)
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.session_id);
        out.extend_from_slice(&self.epoch_us.to_le_bytes());
        out.extend_from_slice(&(self.topics.len() as u16).to_le_bytes());
        for t in &self.topics {
            put_str(&mut out, &t.name);
            put_str(&mut out, t.schema.name());
        }
        out
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    assert!(s.len() <= u16::MAX as usize, "string too long for the bag header");
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub topic_id: u16,
    pub stamp: Timestamp,
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl RawRecord {
    fn encoded_len(&self) -> usize {
        4 + RECORD_HEAD + self.payload.len()
    }

    fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        out.write_all(&((RECORD_HEAD + self.payload.len()) as u32).to_le_bytes())?;
        out.write_all(&self.topic_id.to_le_bytes())?;
        out.write_all(&self.stamp.micros().to_le_bytes())?;
        out.write_all(&self.seq.to_le_bytes())?;
        out.write_all(&self.payload)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicIndex {
    pub topic_id: u16,
    pub count: u32,
    /// Stamp bounds; both zero when the topic has no records.
    pub first: Timestamp,
    pub last: Timestamp,
    pub offsets: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagIndex {
    /// One entry per header topic, in topic-id order.
    pub topics: Vec<TopicIndex>,
}

impl BagIndex {
    fn empty(topic_count: usize) -> Self {
        BagIndex {
            topics: (0..topic_count)
                .map(|i| TopicIndex {
                    topic_id: i as u16,
                    count: 0,
                    first: Timestamp::ZERO,
                    last: Timestamp::ZERO,
                    offsets: Vec::new(),
                })
                .collect(),
        }
    }

    fn note(&mut self, topic_id: u16, stamp: Timestamp, offset: u64) {
        let t = &mut self.topics[topic_id as usize];
        if t.count == 0 {
            t.first = stamp;
        }
        t.count += 1;
        t.last = stamp;
        t.offsets.push(offset);
    }

    pub fn total(&self) -> u64 {
        self.topics.iter().map(|t| t.count as u64).sum()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&INDEX_SENTINEL.to_le_bytes());
        out.extend_from_slice(&(self.topics.len() as u16).to_le_bytes());
        for t in &self.topics {
            out.extend_from_slice(&t.topic_id.to_le_bytes());
            out.extend_from_slice(&t.count.to_le_bytes());
            out.extend_from_slice(&t.first.micros().to_le_bytes());
            out.extend_from_slice(&t.last.micros().to_le_bytes());
            for o in &t.offsets {
                out.extend_from_slice(&o.to_le_bytes());
            }
        }
        out
    }
}

/// Ordering key of records within a bag.
fn order_key<'a>(header: &'a BagHeader, r: &RawRecord) -> (Timestamp, &'a str, u32) {
    (r.stamp, header.topics[r.topic_id as usize].name.as_str(), r.seq)
}

/// A fully loaded bag. Payloads are kept as stored, so saving a loaded bag
/// reproduces its bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub header: BagHeader,
    records: Vec<RawRecord>,
    index: BagIndex,
    /// True when the file had no index and it was rebuilt by scanning.
    recovered: bool,
}

impl Bag {
    /// Builds a bag from events, sorting them into bag order. Topics are
    /// taken from `header`; events on other topics are an error.
    pub fn from_events(header: BagHeader, events: &[Event]) -> Result<Self, BagError> {
        let mut records = Vec::with_capacity(events.len());
        for e in events {
            let topic_id = header
                .topic_id(&e.topic)
                .ok_or_else(|| BagError::UnknownTopic(e.topic.clone()))?;
            records.push(RawRecord {
                topic_id,
                stamp: e.stamp,
                seq: e.seq,
                payload: encode_payload(&e.payload),
            });
        }
        records.sort_by(|a, b| order_key(&header, a).cmp(&order_key(&header, b)));
        let index = index_of(&header, &records);
        Ok(Bag {
            header,
            records,
            index,
            recovered: false,
        })
    }

    pub fn records(&self) -> &[RawRecord] {
        &self.records
    }

    pub fn index(&self) -> &BagIndex {
        &self.index
    }

    pub fn recovered(&self) -> bool {
        self.recovered
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// (first, last) stamp over all records.
    pub fn time_bounds(&self) -> Option<(Timestamp, Timestamp)> {
        Some((self.records.first()?.stamp, self.records.last()?.stamp))
    }

    pub fn topic_name(&self, id: u16) -> &str {
        &self.header.topics[id as usize].name
    }

    pub fn count(&self, topic: &str) -> u32 {
        self.header
            .topic_id(topic)
            .map(|id| self.index.topics[id as usize].count)
            .unwrap_or(0)
    }

    /// Decodes every record, in bag order.
    pub fn events(&self) -> Result<Vec<Event>, BagError> {
        self.records.iter().map(|r| self.decode(r)).collect()
    }

    pub fn decode(&self, r: &RawRecord) -> Result<Event, BagError> {
        let t = &self.header.topics[r.topic_id as usize];
        let payload = decode_payload(t.schema, &r.payload)
            .map_err(|e| BagError::corrupt(0, format!("record {}#{}: {e}", t.name, r.seq)))?;
        Ok(Event {
            topic: t.name.clone(),
            stamp: r.stamp,
            seq: r.seq,
            payload,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes();
        for r in &self.records {
            r.write_to(&mut out).expect("writing to a Vec cannot fail");
        }
        let index_offset = out.len() as u64;
        out.extend_from_slice(&self.index.to_bytes());
        out.extend_from_slice(&index_offset.to_le_bytes());
        out.extend_from_slice(INDEX_MAGIC);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BagError> {
        let mut f = BufWriter::new(fs::File::create(path).map_err(BagError::from_io)?);
        f.write_all(&self.to_bytes()).map_err(BagError::from_io)?;
        f.flush().map_err(BagError::from_io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BagError> {
        Bag::parse(&fs::read(path)?)
    }

    /// Parses and validates a bag: framing, topic ids, record order, payload
    /// schemas, and (when present) that the stored index matches the records.
    pub fn parse(bytes: &[u8]) -> Result<Self, BagError> {
        let mut rd = Reader { bytes, pos: 0 };
        let header = read_header(&mut rd)?;
        let mut records = Vec::new();
        let mut stored_index = None;
        while rd.pos < bytes.len() {
            let at = rd.pos;
            let len = rd.u32()?;
            if len == INDEX_SENTINEL {
                let index = read_index(&mut rd, &header)?;
                let offset = rd.u64()?;
                let magic = rd.take(4)?;
                if offset != at as u64 || magic != INDEX_MAGIC {
                    return Err(BagError::corrupt(at, "bad index trailer"));
                }
                if rd.pos != bytes.len() {
                    return Err(BagError::corrupt(rd.pos, "trailing bytes after index"));
                }
                stored_index = Some(index);
                break;
            }
            let len = len as usize;
            if len < RECORD_HEAD {
                return Err(BagError::corrupt(at, "record shorter than its head"));
            }
            let body = rd.take(len)?;
            let topic_id = u16::from_le_bytes([body[0], body[1]]);
            if topic_id as usize >= header.topics.len() {
                return Err(BagError::corrupt(at, format!("unknown topic id {topic_id}")));
            }
            let stamp = Timestamp(u64::from_le_bytes(body[2..10].try_into().unwrap()));
            let seq = u32::from_le_bytes(body[10..14].try_into().unwrap());
            let r = RawRecord {
                topic_id,
                stamp,
                seq,
                payload: body[RECORD_HEAD..].to_vec(),
            };
            if let Some(prev) = records.last() {
                if order_key(&header, prev) >= order_key(&header, &r) {
                    return Err(BagError::corrupt(at, "records out of order"));
                }
            }
            decode_payload(header.topics[topic_id as usize].schema, &r.payload)
                .map_err(|e| BagError::corrupt(at, e))?;
            records.push(r);
        }
        let index = index_of(&header, &records);
        let recovered = stored_index.is_none();
        if let Some(stored) = stored_index {
            if stored != index {
                return Err(BagError::corrupt(bytes.len(), "index does not match records"));
            }
        }
        Ok(Bag {
            header,
            records,
            index,
            recovered,
        })
    }
}

/// Index of `records` laid out as [`Bag::to_bytes`] would write them.
fn index_of(header: &BagHeader, records: &[RawRecord]) -> BagIndex {
    let mut index = BagIndex::empty(header.topics.len());
    let mut offset = header.to_bytes().len() as u64;
    for r in records {
        index.note(r.topic_id, r.stamp, offset);
        offset += r.encoded_len() as u64;
    }
    index
}

/// Rebuilds the index of a bag image by scanning its records, ignoring any
/// stored index. Works on bags whose footer is missing.
pub fn scan_index(bytes: &[u8]) -> Result<BagIndex, BagError> {
    let mut rd = Reader { bytes, pos: 0 };
    let header = read_header(&mut rd)?;
    let mut index = BagIndex::empty(header.topics.len());
    while rd.pos < bytes.len() {
        let at = rd.pos;
        let len = rd.u32()?;
        if len == INDEX_SENTINEL {
            break;
        }
        let body = rd.take(len as usize)?;
        if body.len() < RECORD_HEAD {
            return Err(BagError::corrupt(at, "record shorter than its head"));
        }
        let topic_id = u16::from_le_bytes([body[0], body[1]]);
        if topic_id as usize >= header.topics.len() {
            return Err(BagError::corrupt(at, format!("unknown topic id {topic_id}")));
        }
        let stamp = Timestamp(u64::from_le_bytes(body[2..10].try_into().unwrap()));
        index.note(topic_id, stamp, at as u64);
    }
    Ok(index)
}

/// Reads the stored index of a bag image without validating records.
pub fn stored_index(bytes: &[u8]) -> Result<Option<BagIndex>, BagError> {
    let mut rd = Reader { bytes, pos: 0 };
    let header = read_header(&mut rd)?;
    if bytes.len() < rd.pos + TRAILER_LEN || &bytes[bytes.len() - 4..] != INDEX_MAGIC {
        return Ok(None);
    }
    let off_at = bytes.len() - TRAILER_LEN;
    let offset = u64::from_le_bytes(bytes[off_at..off_at + 8].try_into().unwrap()) as usize;
    if offset < rd.pos || offset >= off_at {
        return Ok(None);
    }
    rd.pos = offset;
    if rd.u32()? != INDEX_SENTINEL {
        return Ok(None);
    }
    read_index(&mut rd, &header).map(Some)
}

/// The byte length of a bag image without its index and trailer, i.e. what
/// a crash before close leaves on disk.
pub fn footer_offset(bytes: &[u8]) -> Option<usize> {
    if bytes.len() < TRAILER_LEN || &bytes[bytes.len() - 4..] != INDEX_MAGIC {
        return None;
    }
    let at = bytes.len() - TRAILER_LEN;
    Some(u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BagError> {
        if self.bytes.len() - self.pos < n {
            return Err(BagError::corrupt(self.pos, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, BagError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, BagError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BagError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, BagError> {
        let at = self.pos;
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| BagError::corrupt(at, "invalid utf-8"))
    }
}

fn read_header(rd: &mut Reader<'_>) -> Result<BagHeader, BagError> {
    if rd.take(4).map_err(|_| BagError::corrupt(0, "file too short"))? != MAGIC {
        return Err(BagError::corrupt(0, "bad magic"));
    }
    let version = rd.u16()?;
    if version != FORMAT_VERSION {
        return Err(BagError::corrupt(4, format!("unsupported version {version}")));
    }
    let session_id = rd.string()?;
    let epoch_us = rd.u64()? as i64;
    let n = rd.u16()? as usize;
    let mut topics = Vec::with_capacity(n);
    let mut seen = HashMap::new();
    for _ in 0..n {
        let at = rd.pos;
        let name = rd.string()?;
        let schema = rd.string()?.parse().map_err(|e: String| BagError::corrupt(at, e))?;
        if seen.insert(name.clone(), ()).is_some() {
            return Err(BagError::corrupt(at, format!("duplicate topic `{name}`")));
        }
        topics.push(TopicInfo { name, schema });
    }
    Ok(BagHeader {
        session_id,
        epoch_us,
        topics,
    })
}

fn read_index(rd: &mut Reader<'_>, header: &BagHeader) -> Result<BagIndex, BagError> {
    let at = rd.pos;
    let n = rd.u16()? as usize;
    if n != header.topics.len() {
        return Err(BagError::corrupt(at, "index topic count differs from header"));
    }
    let mut topics = Vec::with_capacity(n);
    for _ in 0..n {
        let topic_id = rd.u16()?;
        let count = rd.u32()?;
        let first = Timestamp(rd.u64()?);
        let last = Timestamp(rd.u64()?);
        let remaining = (rd.bytes.len() - rd.pos) / 8;
        if count as usize > remaining {
            return Err(BagError::corrupt(rd.pos, "index count exceeds file size"));
        }
        let offsets = (0..count).map(|_| rd.u64()).collect::<Result<_, _>>()?;
        topics.push(TopicIndex {
            topic_id,
            count,
            first,
            last,
            offsets,
        });
    }
    Ok(BagIndex { topics })
}

/// Streams records to a sink as they arrive, buffering up to a reorder
/// window so that records published slightly out of stamp order across
/// topics still land in bag order. [`BagWriter::finish`] writes the index;
/// a writer dropped without finishing leaves an index-less but readable bag.
pub struct BagWriter<W: Write> {
    out: W,
    header: BagHeader,
    index: BagIndex,
    offset: u64,
    window: Duration,
    pending: BTreeMap<(Timestamp, String, u32), RawRecord>,
    newest: Timestamp,
    /// Key of the last record written; nothing may sort before it.
    written: Option<(Timestamp, String, u32)>,
}

impl BagWriter<BufWriter<fs::File>> {
    pub fn create(path: impl AsRef<Path>, header: BagHeader) -> Result<Self, BagError> {
        let f = fs::File::create(path).map_err(BagError::from_io)?;
        BagWriter::new(BufWriter::new(f), header)
    }
}

impl<W: Write> BagWriter<W> {
    pub fn new(mut out: W, header: BagHeader) -> Result<Self, BagError> {
        let head = header.to_bytes();
        out.write_all(&head).map_err(BagError::from_io)?;
        Ok(BagWriter {
            out,
            index: BagIndex::empty(header.topics.len()),
            header,
            offset: head.len() as u64,
            window: DEFAULT_REORDER_WINDOW,
            pending: BTreeMap::new(),
            newest: Timestamp::ZERO,
            written: None,
        })
    }

    pub fn with_window(mut self, window: Duration) -> Self {
        self.window = window;
        self
    }

    pub fn header(&self) -> &BagHeader {
        &self.header
    }

    /// Number of records accepted so far.
    pub fn accepted(&self) -> u64 {
        self.index.total() + self.pending.len() as u64
    }

    /// Checks that an event could be appended, without appending it.
    pub fn check(&self, event: &Event) -> Result<(), BagError> {
        if self.header.topic_id(&event.topic).is_none() {
            return Err(BagError::UnknownTopic(event.topic.clone()));
        }
        if let Some(w) = &self.written {
            let key = (event.stamp, event.topic.as_str(), event.seq);
            if key <= (w.0, w.1.as_str(), w.2) {
                return Err(BagError::RejectedOutOfOrder {
                    topic: event.topic.clone(),
                    stamp: event.stamp,
                    watermark: w.0,
                });
            }
        }
        Ok(())
    }

    pub fn append(&mut self, event: &Event) -> Result<(), BagError> {
        self.check(event)?;
        let topic_id = self.header.topic_id(&event.topic).expect("checked");
        self.pending.insert(
            (event.stamp, event.topic.clone(), event.seq),
            RawRecord {
                topic_id,
                stamp: event.stamp,
                seq: event.seq,
                payload: encode_payload(&event.payload),
            },
        );
        self.newest = self.newest.max(event.stamp);
        let cutoff = self.newest.micros().saturating_sub(self.window.as_micros() as u64);
        self.drain(|stamp| stamp.micros() < cutoff)
    }

    fn drain(&mut self, due: impl Fn(Timestamp) -> bool) -> Result<(), BagError> {
        while let Some(entry) = self.pending.first_entry() {
            if !due(entry.key().0) {
                break;
            }
            let (key, r) = entry.remove_entry();
            r.write_to(&mut self.out).map_err(BagError::from_io)?;
            self.index.note(r.topic_id, r.stamp, self.offset);
            self.offset += r.encoded_len() as u64;
            self.written = Some(key);
        }
        Ok(())
    }

    /// Writes every buffered record and pushes it to the sink, without
    /// closing the bag.
    pub fn flush(&mut self) -> Result<(), BagError> {
        self.drain(|_| true)?;
        self.out.flush().map_err(BagError::from_io)
    }

    /// Writes the remaining records, the index and the trailer.
    pub fn finish(mut self) -> Result<(W, BagIndex), BagError> {
        self.drain(|_| true)?;
        let index_offset = self.offset;
        self.out
            .write_all(&self.index.to_bytes())
            .and_then(|_| self.out.write_all(&index_offset.to_le_bytes()))
            .and_then(|_| self.out.write_all(INDEX_MAGIC))
            .and_then(|_| self.out.flush())
            .map_err(BagError::from_io)?;
        Ok((self.out, self.index))
    }
}
