//! Three-axis behavioural coding scheme: per-child interval annotations,
//! within-axis exclusivity, Cohen's kappa between coders, and freeplay
//! duration statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{Condition, SessionRecord};
use crate::time::Timestamp;

pub const DEFAULT_SLOT_WIDTH: Duration = Duration::from_millis(100);

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("interval start {start} is not before end {end}")]
    InvertedInterval { start: Timestamp, end: Timestamp },
    #[error("the two tracks share no coded time span")]
    EmptyOverlap,
    #[error("slot width must be positive")]
    BadSlotWidth,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Child {
    Purple,
    Yellow,
}

impl fmt::Display for Child {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Child::Purple => "purple",
            Child::Yellow => "yellow",
        })
    }
}

impl FromStr for Child {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "purple" => Ok(Child::Purple),
            "yellow" => Ok(Child::Yellow),
            other => Err(format!("unknown child `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    TaskEngagement,
    SocialEngagement,
    SocialAttitude,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::TaskEngagement, Axis::SocialEngagement, Axis::SocialAttitude];

    pub fn name(self) -> &'static str {
        match self {
            Axis::TaskEngagement => "task_engagement",
            Axis::SocialEngagement => "social_engagement",
            Axis::SocialAttitude => "social_attitude",
        }
    }

    pub fn values(self) -> &'static [Construct] {
        use Construct::*;
        match self {
            Axis::TaskEngagement => &[GoalOriented, Aimless, AdultSeeking],
            Axis::SocialEngagement => &[Solitary, Onlooker, Parallel, Associative, Cooperative],
            Axis::SocialAttitude => &[Prosocial, Adversarial, Assertive, Passive, Frustrated],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown axis `{s}`"))
    }
}

/// A coded behaviour. Each construct belongs to exactly one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construct {
    GoalOriented,
    Aimless,
    AdultSeeking,
    Solitary,
    Onlooker,
    Parallel,
    Associative,
    Cooperative,
    Prosocial,
    Adversarial,
    Assertive,
    Passive,
    Frustrated,
}

impl Construct {
    pub fn axis(self) -> Axis {
        use Construct::*;
        match self {
            GoalOriented | Aimless | AdultSeeking => Axis::TaskEngagement,
            Solitary | Onlooker | Parallel | Associative | Cooperative => Axis::SocialEngagement,
            Prosocial | Adversarial | Assertive | Passive | Frustrated => Axis::SocialAttitude,
        }
    }

    pub fn name(self) -> &'static str {
        use Construct::*;
        match self {
            GoalOriented => "goal_oriented",
            Aimless => "aimless",
            AdultSeeking => "adult_seeking",
            Solitary => "solitary",
            Onlooker => "onlooker",
            Parallel => "parallel",
            Associative => "associative",
            Cooperative => "cooperative",
            Prosocial => "prosocial",
            Adversarial => "adversarial",
            Assertive => "assertive",
            Passive => "passive",
            Frustrated => "frustrated",
        }
    }
}

impl fmt::Display for Construct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Construct {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .iter()
            .flat_map(|a| a.values().iter().copied())
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown construct `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationInterval {
    pub coder: String,
    pub child: Child,
    pub construct: Construct,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl AnnotationInterval {
    pub fn new(
        coder: &str,
        child: Child,
        construct: Construct,
        start: Timestamp,
        end: Timestamp,
    ) -> Self {
        AnnotationInterval {
            coder: coder.to_string(),
            child,
            construct,
            start,
            end,
        }
    }

    pub fn axis(&self) -> Axis {
        self.construct.axis()
    }

    pub fn covers(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

type Lane = (String, Child, Axis);

/// Annotations of any number of coders, children and axes. Within one
/// (coder, child, axis) lane intervals never overlap.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotationTrack {
    lanes: BTreeMap<Lane, Vec<AnnotationInterval>>,
}

impl AnnotationTrack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `iv`. Intervals of the same lane that overlap it give way:
    /// one that began earlier is cut at the new start, one that began inside
    /// the new interval keeps only what lies after the new end.
    pub fn add_interval(&mut self, iv: AnnotationInterval) -> Result<(), AnnotationError> {
        if iv.start >= iv.end {
            return Err(AnnotationError::InvertedInterval {
                start: iv.start,
                end: iv.end,
            });
        }
        let lane = self
            .lanes
            .entry((iv.coder.clone(), iv.child, iv.axis()))
            .or_default();
        let mut kept = Vec::with_capacity(lane.len() + 1);
        for mut old in lane.drain(..) {
            if old.end <= iv.start || old.start >= iv.end {
                kept.push(old);
            } else if old.start < iv.start {
                old.end = iv.start;
                kept.push(old);
            } else if old.end > iv.end {
                old.start = iv.end;
                kept.push(old);
            }
        }
        kept.push(iv);
        kept.sort_by_key(|i| i.start);
        *lane = kept;
        Ok(())
    }

    pub fn code_at(&self, coder: &str, child: Child, axis: Axis, t: Timestamp) -> Option<Construct> {
        let lane = self.lanes.get(&(coder.to_string(), child, axis))?;
        let pos = lane.partition_point(|i| i.start <= t);
        lane[..pos]
            .last()
            .filter(|i| i.covers(t))
            .map(|i| i.construct)
    }

    pub fn intervals(&self) -> impl Iterator<Item = &AnnotationInterval> {
        self.lanes.values().flatten()
    }

    pub fn lane(&self, coder: &str, child: Child, axis: Axis) -> &[AnnotationInterval] {
        self.lanes
            .get(&(coder.to_string(), child, axis))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn coders(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.lanes.keys().map(|(c, _, _)| c.as_str()).collect();
        c.dedup();
        c
    }

    pub fn len(&self) -> usize {
        self.lanes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coded span [first start, last end) of one coder's lane.
    fn span(&self, coder: &str, child: Child, axis: Axis) -> Option<(Timestamp, Timestamp)> {
        let lane = self.lane(coder, child, axis);
        let first = lane.first()?.start;
        let last = lane.iter().map(|i| i.end).max()?;
        Some((first, last))
    }

    /// One line per interval: coder, child, axis, value, start_us, end_us,
    /// tab-separated.
    pub fn export_tsv(&self) -> String {
        let mut out = String::new();
        for iv in self.intervals() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                iv.coder,
                iv.child,
                iv.axis(),
                iv.construct,
                iv.start.micros(),
                iv.end.micros()
            ));
        }
        out
    }

    pub fn import_tsv(text: &str) -> Result<AnnotationTrack, AnnotationError> {
        let mut track = AnnotationTrack::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| AnnotationError::Parse {
                line: n + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let child: Child = f[1].parse().map_err(err)?;
            let axis: Axis = f[2].parse().map_err(err)?;
            let construct: Construct = f[3].parse().map_err(err)?;
            if construct.axis() != axis {
                return Err(err(format!("`{construct}` is not on axis `{axis}`")));
            }
            let us = |s: &str| {
                s.parse::<u64>()
                    .map(Timestamp)
                    .map_err(|e| err(format!("`{s}`: {e}")))
            };
            track.add_interval(AnnotationInterval::new(f[0], child, construct, us(f[4])?, us(f[5])?))?;
        }
        Ok(track)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub axis: Axis,
    pub kappa: f64,
    pub observed: f64,
    pub expected: f64,
    pub slots: usize,
    pub slot_width: Duration,
}

/// Cohen's kappa over paired labels; `None` is the explicit "uncoded"
/// category. Returns (kappa, p_o, p_e).
pub fn cohen_kappa<L: Ord + Clone>(pairs: &[(L, L)]) -> (f64, f64, f64) {
    let n = pairs.len() as f64;
    let mut a_marg: BTreeMap<L, usize> = BTreeMap::new();
    let mut b_marg: BTreeMap<L, usize> = BTreeMap::new();
    let mut agree = 0usize;
    for (a, b) in pairs {
        *a_marg.entry(a.clone()).or_default() += 1;
        *b_marg.entry(b.clone()).or_default() += 1;
        if a == b {
            agree += 1;
        }
    }
    let observed = agree as f64 / n;
    let mut labels: Vec<&L> = a_marg.keys().chain(b_marg.keys()).collect();
    labels.sort();
    labels.dedup();
    let expected: f64 = labels
        .into_iter()
        .map(|l| {
            let pa = *a_marg.get(l).unwrap_or(&0) as f64 / n;
            let pb = *b_marg.get(l).unwrap_or(&0) as f64 / n;
            pa * pb
        })
        .sum();
    let kappa = if expected == 1.0 {
        if observed == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (observed - expected) / (1.0 - expected)
    };
    (kappa, observed, expected)
}

/// Agreement between two coders on one child and axis. The span both
/// coders covered is cut into whole slots; each slot is labelled with the
/// construct holding at its centre (or uncoded).
pub fn kappa(
    a: (&AnnotationTrack, &str),
    b: (&AnnotationTrack, &str),
    axis: Axis,
    child: Child,
    slot_width: Duration,
) -> Result<AgreementReport, AnnotationError> {
    let w = slot_width.as_micros() as u64;
    if w == 0 {
        return Err(AnnotationError::BadSlotWidth);
    }
    let (sa, ea) = a.0.span(a.1, child, axis).ok_or(AnnotationError::EmptyOverlap)?;
    let (sb, eb) = b.0.span(b.1, child, axis).ok_or(AnnotationError::EmptyOverlap)?;
    let start = sa.max(sb).micros();
    let end = ea.min(eb).micros();
    let slots = end.saturating_sub(start) / w;
    if slots == 0 {
        return Err(AnnotationError::EmptyOverlap);
    }
    let pairs: Vec<(Option<Construct>, Option<Construct>)> = (0..slots)
        .map(|i| {
            let t = Timestamp(start + i * w + w / 2);
            (
                a.0.code_at(a.1, child, axis, t),
                b.0.code_at(b.1, child, axis, t),
            )
        })
        .collect();
    let (kappa, observed, expected) = cohen_kappa(&pairs);
    Ok(AgreementReport {
        axis,
        kappa,
        observed,
        expected,
        slots: slots as usize,
        slot_width,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub start_min: f64,
    pub end_min: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub condition: Condition,
    pub count: usize,
    pub bins: Vec<HistogramBin>,
    /// `None` for an empty set.
    pub mean_min: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two sessions.
    pub sd_min: Option<f64>,
}

/// Histogram of freeplay durations (minutes) with running mean and sample
/// standard deviation.
pub fn duration_histogram(
    condition: Condition,
    minutes: &[f64],
    bin_width_minutes: f64,
) -> DurationStats {
    assert!(bin_width_minutes > 0.0, "bin width must be positive");
    let mut bins = Vec::new();
    if let (Some(lo), Some(hi)) = (
        minutes.iter().copied().reduce(f64::min),
        minutes.iter().copied().reduce(f64::max),
    ) {
        let first = (lo / bin_width_minutes).floor() as i64;
        let last = (hi / bin_width_minutes).floor() as i64;
        for k in first..=last {
            bins.push(HistogramBin {
                start_min: k as f64 * bin_width_minutes,
                end_min: (k + 1) as f64 * bin_width_minutes,
                count: 0,
            });
        }
        for m in minutes {
            let k = (m / bin_width_minutes).floor() as i64 - first;
            bins[k as usize].count += 1;
        }
    }
    // Welford's running update.
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for &x in minutes {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    DurationStats {
        condition,
        count: n,
        bins,
        mean_min: (n > 0).then_some(mean),
        sd_min: (n > 1).then(|| (m2 / (n - 1) as f64).sqrt()),
    }
}

/// Per-condition freeplay duration statistics over finished sessions.
pub fn duration_stats(sessions: &[SessionRecord], bin_width_minutes: f64) -> Vec<DurationStats> {
    [Condition::ChildChild, Condition::ChildRobot]
        .into_iter()
        .map(|cond| {
            let minutes: Vec<f64> = sessions
                .iter()
                .filter(|s| s.condition == cond)
                .filter_map(|s| s.freeplay_duration())
                .map(|d| d.as_secs_f64() / 60.0)
                .collect();
            duration_histogram(cond, &minutes, bin_width_minutes)
        })
        .collect()
}
