use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{ms_to_us, FrameRecord, DEFAULT_CAPTURE_MS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamConfig {
    pub fps: f64,
    pub prep_ms: f64,
    pub inference_ms: f64,
    pub composite_ms: f64,
    pub duration_s: f64,
    pub capture_ms: f64,
}

impl StreamConfig {
    pub fn new(fps: f64, inference_ms: f64, duration_s: f64) -> Self {
        Self {
            fps,
            prep_ms: 0.0,
            inference_ms,
            composite_ms: 0.0,
            duration_s,
            capture_ms: DEFAULT_CAPTURE_MS,
        }
    }

    pub fn service_ms(&self) -> f64 {
        self.prep_ms + self.inference_ms + self.composite_ms
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps + 1e-9).floor().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamSchedule {
    pub frames: Vec<FrameRecord>,
    pub processed: usize,
    pub dropped: usize,
}

impl StreamSchedule {
    pub fn ratio(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.processed as f64 / self.frames.len() as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Completion,
    Arrival(usize),
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    kind: Kind,
}

impl Event {
    fn rank(&self) -> (f64, u8, usize) {
        match self.kind {
            Kind::Completion => (self.time, 0, 0),
            Kind::Arrival(i) => (self.time, 1, i),
        }
    }
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Event {
    /// Reversed so the max-heap pops the earliest event; completions sort
    /// before arrivals at the same instant.
    fn cmp(&self, o: &Self) -> Ordering {
        let (a, b) = (self.rank(), o.rank());
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2))
    }
}

/// Discrete-event simulation of one inference worker fed at `fps`. A frame
/// is taken only if the worker is idle when it arrives; frames arriving
/// while it is busy are dropped, so the worker always starts on the newest
/// frame with zero queueing delay.
pub fn simulate_stream(cfg: &StreamConfig) -> Result<StreamSchedule> {
    if !(cfg.fps > 0.0 && cfg.fps.is_finite()) {
        return Err(Error::Invalid(format!("fps must be positive, got {}", cfg.fps)));
    }
    for (name, v) in [
        ("prep", cfg.prep_ms),
        ("inference", cfg.inference_ms),
        ("composite", cfg.composite_ms),
        ("capture", cfg.capture_ms),
        ("duration", cfg.duration_s),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Invalid(format!("{name} must be non-negative, got {v}")));
        }
    }
    let n = cfg.frame_count();
    let interval = 1000.0 / cfg.fps;
    let mut queue: BinaryHeap<Event> = (0..n)
        .map(|i| Event {
            time: i as f64 * interval,
            kind: Kind::Arrival(i),
        })
        .collect();
    let mut busy = false;
    let mut processed = vec![false; n];
    while let Some(ev) = queue.pop() {
        match ev.kind {
            Kind::Completion => busy = false,
            Kind::Arrival(i) => {
                if !busy {
                    busy = true;
                    processed[i] = true;
                    queue.push(Event {
                        time: ev.time + cfg.service_ms(),
                        kind: Kind::Completion,
                    });
                }
            }
        }
    }
    let frames: Vec<FrameRecord> = (0..n)
        .map(|i| {
            let p = processed[i];
            let stage = |ms: f64| if p { ms_to_us(ms) } else { 0 };
            FrameRecord {
                index: i,
                arrival_us: ms_to_us(i as f64 * interval),
                processed: p,
                prep_us: stage(cfg.prep_ms),
                inference_us: stage(cfg.inference_ms),
                composite_us: stage(cfg.composite_ms),
                capture_us: stage(cfg.capture_ms),
            }
        })
        .collect();
    let done = processed.iter().filter(|&&p| p).count();
    Ok(StreamSchedule {
        processed: done,
        dropped: n - done,
        frames,
    })
}
