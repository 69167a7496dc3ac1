//! Approximate-time synchronization of multi-rate sensor streams.
//!
//! Frames are anchored on a reference stream. For each reference message the
//! synchronizer pairs the nearest-in-time message of every other stream that
//! lies within `slop`, earlier message on ties. A frame is emitted as soon as
//! that choice can no longer change: each stream either holds a candidate no
//! farther than its newest timestamp is from the reference, or has moved more
//! than `slop` past it with no candidate (the reference is then dropped).
//! Because the decision only depends on per-stream order, the emitted frames do
//! not depend on how the streams interleave.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamId {
    Lidar,
    Camera,
    Gnss,
}

impl StreamId {
    pub const ALL: [StreamId; 3] = [StreamId::Lidar, StreamId::Camera, StreamId::Gnss];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StreamId::Lidar => "lidar",
            StreamId::Camera => "camera",
            StreamId::Gnss => "gnss",
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StreamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lidar" => Ok(StreamId::Lidar),
            "camera" => Ok(StreamId::Camera),
            "gnss" => Ok(StreamId::Gnss),
            other => Err(Error::InvalidConfig(format!("unknown stream {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedMessage {
    pub stream: StreamId,
    /// Seconds.
    pub timestamp: f64,
    /// Opaque caller-side identifier.
    pub payload: u64,
}

impl StampedMessage {
    pub fn new(stream: StreamId, timestamp: f64, payload: u64) -> Self {
        Self {
            stream,
            timestamp,
            payload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncConfig {
    pub reference: StreamId,
    pub queue_size: usize,
    /// Maximum allowed timestamp difference to the reference, seconds.
    pub slop: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            reference: StreamId::Lidar,
            queue_size: 20,
            slop: 0.03,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queue_size == 0 {
            return Err(Error::InvalidConfig("queue_size must be at least 1".into()));
        }
        if !(self.slop >= 0.0 && self.slop.is_finite()) {
            return Err(Error::InvalidConfig(format!("slop {} must be >= 0", self.slop)));
        }
        Ok(())
    }
}

/// One message per participating stream, reference first.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedFrame {
    pub frame_time: f64,
    pub members: Vec<StampedMessage>,
}

impl SyncedFrame {
    pub fn member(&self, stream: StreamId) -> Option<&StampedMessage> {
        self.members.iter().find(|m| m.stream == stream)
    }
}

enum Decision {
    Matched(usize),
    Pending,
    Impossible,
}

/// Online synchronizer. Single owner; calls to [`Synchronizer::push`] must be
/// serialized by the caller.
#[derive(Debug, Clone)]
pub struct Synchronizer {
    cfg: SyncConfig,
    /// Non-reference participating streams.
    others: Vec<StreamId>,
    participating: [bool; 3],
    queues: [VecDeque<StampedMessage>; 3],
    last: [Option<f64>; 3],
    max_queue_len: usize,
}

impl Synchronizer {
    /// `streams` lists every participating stream; the reference is added if absent.
    pub fn new(cfg: SyncConfig, streams: &[StreamId]) -> Result<Self> {
        cfg.validate()?;
        let mut participating = [false; 3];
        participating[cfg.reference.slot()] = true;
        for s in streams {
            participating[s.slot()] = true;
        }
        let others = StreamId::ALL
            .into_iter()
            .filter(|s| *s != cfg.reference && participating[s.slot()])
            .collect();
        Ok(Self {
            cfg,
            others,
            participating,
            queues: Default::default(),
            last: [None; 3],
            max_queue_len: 0,
        })
    }

    pub fn config(&self) -> &SyncConfig {
        &self.cfg
    }

    /// Participating streams, reference first.
    pub fn streams(&self) -> Vec<StreamId> {
        std::iter::once(self.cfg.reference)
            .chain(self.others.iter().copied())
            .collect()
    }

    /// Largest queue length observed so far, over all streams.
    pub fn max_queue_len(&self) -> usize {
        self.max_queue_len
    }

    /// Adds a message and returns any frames that became final.
    pub fn push(&mut self, msg: StampedMessage) -> Result<Vec<SyncedFrame>> {
        let slot = msg.stream.slot();
        if !self.participating[slot] {
            return Err(Error::InvalidConfig(format!(
                "stream {} is not part of this synchronizer",
                msg.stream
            )));
        }
        if !msg.timestamp.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "timestamp {} on {} is not finite",
                msg.timestamp, msg.stream
            )));
        }
        if let Some(last) = self.last[slot] {
            if msg.timestamp <= last {
                return Err(Error::OutOfOrder {
                    stream: msg.stream,
                    timestamp: msg.timestamp,
                    last,
                });
            }
        }
        self.last[slot] = Some(msg.timestamp);
        let queue = &mut self.queues[slot];
        queue.push_back(msg);
        if queue.len() > self.cfg.queue_size {
            queue.pop_front();
        }
        self.max_queue_len = self.max_queue_len.max(queue.len());
        Ok(self.drain(false))
    }

    /// Resolves every pending reference message as if no more data will arrive.
    pub fn flush(&mut self) -> Vec<SyncedFrame> {
        self.drain(true)
    }

    fn decide(&self, stream: StreamId, t_ref: f64, finished: bool) -> Decision {
        let slop = self.cfg.slop;
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.queues[stream.slot()].iter().enumerate() {
            let d = (m.timestamp - t_ref).abs();
            if d <= slop && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        // Any later message is strictly farther from t_ref than `horizon`.
        let horizon = if finished {
            f64::INFINITY
        } else {
            match self.last[stream.slot()] {
                Some(last) if last >= t_ref => last - t_ref,
                _ => -1.0,
            }
        };
        match best {
            Some((i, d)) if d <= horizon => Decision::Matched(i),
            None if horizon >= slop => Decision::Impossible,
            _ => Decision::Pending,
        }
    }

    fn drain(&mut self, finished: bool) -> Vec<SyncedFrame> {
        let mut frames = Vec::new();
        let ref_slot = self.cfg.reference.slot();
        while let Some(&reference) = self.queues[ref_slot].front() {
            let mut picks = Vec::with_capacity(self.others.len());
            let mut pending = false;
            let mut impossible = false;
            for &s in &self.others {
                match self.decide(s, reference.timestamp, finished) {
                    Decision::Matched(i) => picks.push((s, i)),
                    Decision::Pending => pending = true,
                    Decision::Impossible => impossible = true,
                }
            }
            if impossible {
                self.queues[ref_slot].pop_front();
                continue;
            }
            if pending {
                break;
            }
            self.queues[ref_slot].pop_front();
            let mut members = Vec::with_capacity(picks.len() + 1);
            members.push(reference);
            for (s, i) in picks {
                // Consume the match and everything older than it.
                let taken = self.queues[s.slot()].drain(..=i).next_back().expect("index in queue");
                members.push(taken);
            }
            frames.push(SyncedFrame {
                frame_time: reference.timestamp,
                members,
            });
        }
        frames
    }
}

/// Summary of a synchronization run.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncStats {
    pub reference_messages: usize,
    pub frames: usize,
    /// `frames / reference_messages` (1 when there are no reference messages).
    pub match_rate: f64,
    /// Mean `|member - frame_time|` per non-reference stream over emitted frames.
    pub mean_abs_dt: Vec<(StreamId, f64)>,
}

/// Feeds `trace` through a fresh synchronizer, flushes, and summarises.
pub fn synchronize_trace(
    trace: &[StampedMessage],
    cfg: SyncConfig,
    streams: &[StreamId],
) -> Result<(Vec<SyncedFrame>, SyncStats)> {
    let mut sync = Synchronizer::new(cfg, streams)?;
    let mut frames = Vec::new();
    for msg in trace {
        frames.extend(sync.push(*msg)?);
    }
    frames.extend(sync.flush());
    let reference_messages = trace.iter().filter(|m| m.stream == cfg.reference).count();
    let stats = summarize(&frames, reference_messages, &sync.streams()[1..]);
    Ok((frames, stats))
}

fn summarize(frames: &[SyncedFrame], reference_messages: usize, others: &[StreamId]) -> SyncStats {
    let match_rate = if reference_messages == 0 {
        1.0
    } else {
        frames.len() as f64 / reference_messages as f64
    };
    let mean_abs_dt = others
        .iter()
        .map(|&s| {
            let sum: f64 = frames
                .iter()
                .filter_map(|f| f.member(s).map(|m| (m.timestamp - f.frame_time).abs()))
                .sum();
            let mean = if frames.is_empty() { 0.0 } else { sum / frames.len() as f64 };
            (s, mean)
        })
        .collect();
    SyncStats {
        reference_messages,
        frames: frames.len(),
        match_rate,
        mean_abs_dt,
    }
}

/// Simulated capture: per-stream rates in Hz, Gaussian timestamp jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub rates: Vec<(StreamId, f64)>,
    /// Standard deviation of timestamp noise, seconds.
    pub jitter: f64,
    pub duration: f64,
    pub seed: u64,
}

impl SimulationSpec {
    /// Camera 15 Hz, LiDAR 10 Hz, GNSS 100 Hz, no jitter, 10 s.
    pub fn sensor_rig() -> Self {
        Self {
            rates: vec![
                (StreamId::Camera, 15.0),
                (StreamId::Lidar, 10.0),
                (StreamId::Gnss, 100.0),
            ],
            jitter: 0.0,
            duration: 10.0,
            seed: 0,
        }
    }
}

/// Messages at `k / rate (+ noise)` for `k / rate < duration`, merged in global
/// time order (ties by stream order). Phases are aligned at `t = 0`.
pub fn simulate_trace(spec: &SimulationSpec) -> Result<Vec<StampedMessage>> {
    if !(spec.jitter >= 0.0 && spec.jitter.is_finite()) {
        return Err(Error::InvalidConfig(format!("jitter {} must be >= 0", spec.jitter)));
    }
    if !(spec.duration >= 0.0 && spec.duration.is_finite()) {
        return Err(Error::InvalidConfig(format!("duration {} must be >= 0", spec.duration)));
    }
    let noise = Normal::new(0.0, spec.jitter).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trace = Vec::new();
    for &(stream, rate) in &spec.rates {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("rate {rate} Hz for {stream} must be positive")));
        }
        let mut times: Vec<f64> = (0u64..)
            .map(|k| k as f64 / rate)
            .take_while(|t| *t < spec.duration)
            .map(|t| if spec.jitter > 0.0 { t + noise.sample(&mut rng) } else { t })
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        trace.extend(
            times
                .into_iter()
                .enumerate()
                .map(|(i, t)| StampedMessage::new(stream, t, i as u64)),
        );
    }
    trace.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.stream.cmp(&b.stream)));
    Ok(trace)
}

/// Simulates a capture and synchronizes it.
pub fn run_simulation(spec: &SimulationSpec, cfg: SyncConfig) -> Result<SyncStats> {
    let trace = simulate_trace(spec)?;
    let streams: Vec<StreamId> = spec.rates.iter().map(|(s, _)| *s).collect();
    Ok(synchronize_trace(&trace, cfg, &streams)?.1)
}
