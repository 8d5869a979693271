use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use thiserror::Error;

use super::Transform3D;
use crate::time::Timestamp;

pub const ROOT_FRAME: &str = "sandtray";
pub const ROBOT_FRAME: &str = "robot";
pub const CAMERA_PURPLE_FRAME: &str = "camera_purple";
pub const CAMERA_YELLOW_FRAME: &str = "camera_yellow";
pub const CAMERA_ENV_FRAME: &str = "camera_env";

const DEFAULT_BUFFER: Duration = Duration::from_secs(10);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("frames `{0}` and `{1}` are not connected")]
    DisconnectedFrames(String, String),
    #[error("no sample for edge `{parent}` -> `{child}` at or before {at}")]
    NoSampleBefore {
        parent: String,
        child: String,
        at: Timestamp,
    },
    #[error("attaching `{child}` under `{parent}` would create a cycle")]
    Cycle { parent: String, child: String },
    #[error("edge `{parent}` -> `{child}` is {kind}, cannot update it as the other kind")]
    EdgeKindMismatch {
        parent: String,
        child: String,
        kind: &'static str,
    },
}

#[derive(Debug, Clone)]
enum Edge {
    Static(Transform3D),
    Dynamic(VecDeque<(Timestamp, Transform3D)>),
}

#[derive(Debug, Clone)]
struct Node {
    parent: String,
    edge: Edge,
}

/// Registry of named frames linked by parent→child rigid transforms.
///
/// An edge stores the pose of the child expressed in the parent frame, so it
/// maps child coordinates into parent coordinates. Dynamic edges keep a time
/// ordered buffer of samples and are looked up with zero-order hold.
#[derive(Debug, Clone)]
pub struct FrameTree {
    /// child name → link to its parent; roots have no entry here.
    links: BTreeMap<String, Node>,
    roots: BTreeMap<String, ()>,
    buffer: Duration,
}

pub type SharedFrameTree = Arc<RwLock<FrameTree>>;

impl Default for FrameTree {
    fn default() -> Self {
        Self::new()
    }
}

impl FrameTree {
    pub fn new() -> Self {
        Self::with_buffer(DEFAULT_BUFFER)
    }

    pub fn with_buffer(buffer: Duration) -> Self {
        let mut roots = BTreeMap::new();
        roots.insert(ROOT_FRAME.to_string(), ());
        FrameTree {
            links: BTreeMap::new(),
            roots,
            buffer,
        }
    }

    pub fn contains(&self, frame: &str) -> bool {
        self.roots.contains_key(frame) || self.links.contains_key(frame)
    }

    /// Adds a standalone root frame (a separate tree of the forest).
    pub fn add_root(&mut self, frame: &str) {
        if !self.contains(frame) {
            self.roots.insert(frame.to_string(), ());
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = &str> {
        self.roots
            .keys()
            .chain(self.links.keys())
            .map(String::as_str)
    }

    pub fn parent_of(&self, frame: &str) -> Option<&str> {
        self.links.get(frame).map(|n| n.parent.as_str())
    }

    pub fn set_static(
        &mut self,
        parent: &str,
        child: &str,
        transform: Transform3D,
    ) -> Result<(), FrameError> {
        self.attach(parent, child)?;
        match self.links.get_mut(child) {
            Some(node) if node.parent == parent => {
                if let Edge::Dynamic(_) = node.edge {
                    return Err(FrameError::EdgeKindMismatch {
                        parent: parent.into(),
                        child: child.into(),
                        kind: "dynamic",
                    });
                }
                node.edge = Edge::Static(transform);
            }
            _ => {
                self.links.insert(
                    child.to_string(),
                    Node {
                        parent: parent.to_string(),
                        edge: Edge::Static(transform),
                    },
                );
            }
        }
        Ok(())
    }

    /// Publishes a time-stamped sample on a dynamic edge, creating it if needed.
    pub fn set_dynamic(
        &mut self,
        parent: &str,
        child: &str,
        stamp: Timestamp,
        transform: Transform3D,
    ) -> Result<(), FrameError> {
        self.attach(parent, child)?;
        let buffer = self.buffer;
        let node = self
            .links
            .entry(child.to_string())
            .or_insert_with(|| Node {
                parent: parent.to_string(),
                edge: Edge::Dynamic(VecDeque::new()),
            });
        if node.parent != parent {
            node.parent = parent.to_string();
            node.edge = Edge::Dynamic(VecDeque::new());
        }
        let samples = match &mut node.edge {
            Edge::Dynamic(s) => s,
            Edge::Static(_) => {
                return Err(FrameError::EdgeKindMismatch {
                    parent: parent.into(),
                    child: child.into(),
                    kind: "static",
                })
            }
        };
        let pos = samples.partition_point(|(t, _)| *t <= stamp);
        if pos > 0 && samples[pos - 1].0 == stamp {
            samples[pos - 1].1 = transform;
        } else {
            samples.insert(pos, (stamp, transform));
        }
        let newest = samples.back().map(|(t, _)| *t).unwrap_or(stamp);
        let cutoff = newest.micros().saturating_sub(buffer.as_micros() as u64);
        while samples.len() > 1 && samples[0].0.micros() < cutoff {
            samples.pop_front();
        }
        Ok(())
    }

    /// Validates that `child` can hang under `parent` without forming a cycle,
    /// registering `parent` as a new root if it is unknown.
    fn attach(&mut self, parent: &str, child: &str) -> Result<(), FrameError> {
        let cycle = || FrameError::Cycle {
            parent: parent.into(),
            child: child.into(),
        };
        if parent == child {
            return Err(cycle());
        }
        if !self.contains(parent) {
            self.roots.insert(parent.to_string(), ());
        }
        let mut cur = parent;
        while let Some(node) = self.links.get(cur) {
            if node.parent == child {
                return Err(cycle());
            }
            cur = &node.parent;
        }
        self.roots.remove(child);
        Ok(())
    }

    /// Chain from `frame` up to its root, inclusive.
    fn ancestry<'a>(&'a self, frame: &'a str) -> Result<Vec<&'a str>, FrameError> {
        if !self.contains(frame) {
            return Err(FrameError::UnknownFrame(frame.to_string()));
        }
        let mut chain = vec![frame];
        let mut cur = frame;
        while let Some(node) = self.links.get(cur) {
            cur = &node.parent;
            chain.push(cur);
        }
        Ok(chain)
    }

    fn edge_at(&self, child: &str, at: Timestamp) -> Result<Transform3D, FrameError> {
        let node = &self.links[child];
        match &node.edge {
            Edge::Static(t) => Ok(*t),
            Edge::Dynamic(samples) => {
                let pos = samples.partition_point(|(t, _)| *t <= at);
                if pos == 0 {
                    Err(FrameError::NoSampleBefore {
                        parent: node.parent.clone(),
                        child: child.to_string(),
                        at,
                    })
                } else {
                    Ok(samples[pos - 1].1)
                }
            }
        }
    }

    /// Pose of `frame` in its ancestor `ancestor`, walking the chain.
    fn pose_in_ancestor(
        &self,
        chain: &[&str],
        ancestor_index: usize,
        at: Timestamp,
    ) -> Result<Transform3D, FrameError> {
        let mut pose = Transform3D::IDENTITY;
        for child in chain[..ancestor_index].iter() {
            pose = self.edge_at(child, at)?.compose(&pose);
        }
        Ok(pose)
    }

    /// Transform mapping coordinates expressed in `from` into coordinates
    /// expressed in `to`, at time `at`.
    pub fn resolve(&self, from: &str, to: &str, at: Timestamp) -> Result<Transform3D, FrameError> {
        let from_chain = self.ancestry(from)?;
        let to_chain = self.ancestry(to)?;
        if from_chain.last() != to_chain.last() {
            return Err(FrameError::DisconnectedFrames(from.into(), to.into()));
        }
        // Lowest common ancestor: strip the shared suffix.
        let mut i = from_chain.len();
        let mut j = to_chain.len();
        while i > 0 && j > 0 && from_chain[i - 1] == to_chain[j - 1] {
            i -= 1;
            j -= 1;
        }
        let from_in_anc = self.pose_in_ancestor(&from_chain, i, at)?;
        let to_in_anc = self.pose_in_ancestor(&to_chain, j, at)?;
        Ok(to_in_anc.inverse().compose(&from_in_anc))
    }
}
