//! File-based stereo streaming: per-frame timing records, the frame-drop
//! simulator and the subcommand implementations.

mod forge;
mod segment;
mod stream;

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub use forge::{forge_dataset, ForgeConfig, ForgeSummary};
pub use segment::{gradient_scene, segment_frames, SegmentConfig, SegmentSummary, VIRTUAL_DEPTH_M};
pub use stream::{simulate_stream, StreamConfig, StreamSchedule};

pub const DEFAULT_CAPTURE_MS: f64 = 37.0;
pub const DEFAULT_FPS: f64 = 60.0;

pub const TIMING_HEADER: &str = "frame,arrival_ms,prep_ms,inference_ms,composite_ms,total_ms,delay_ms,dropped";

/// Stage durations are kept in whole microseconds so totals are exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub index: usize,
    pub arrival_us: u64,
    pub processed: bool,
    pub prep_us: u64,
    pub inference_us: u64,
    pub composite_us: u64,
    pub capture_us: u64,
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round().max(0.0) as u64
}

fn fmt_ms(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

fn parse_ms(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, "0"));
    if frac.len() > 3 || whole.is_empty() {
        return None;
    }
    let w: u64 = whole.parse().ok()?;
    let f: u64 = format!("{frac:0<3}").parse().ok()?;
    Some(w * 1000 + f)
}

impl FrameRecord {
    pub fn total_us(&self) -> u64 {
        self.prep_us + self.inference_us + self.composite_us
    }

    /// Capture latency plus processing, for processed frames.
    pub fn delay_us(&self) -> Option<u64> {
        self.processed.then(|| self.capture_us + self.total_us())
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.index,
            fmt_ms(self.arrival_us),
            fmt_ms(self.prep_us),
            fmt_ms(self.inference_us),
            fmt_ms(self.composite_us),
            fmt_ms(self.total_us()),
            fmt_ms(self.delay_us().unwrap_or(0)),
            u8::from(!self.processed)
        )
    }
}

pub fn timing_csv(records: &[FrameRecord]) -> String {
    let mut out = format!("{TIMING_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

pub fn write_timing_csv(records: &[FrameRecord], path: &Path) -> Result<()> {
    std::fs::write(path, timing_csv(records)).map_err(|e| Error::io(path, e))
}

/// Parses a timing CSV. Capture latency is recovered from `delay − total`.
pub fn parse_timing_csv(text: &str, path: &str) -> Result<Vec<FrameRecord>> {
    let err = |line: usize, detail: String| Error::Parse {
        path: path.to_string(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TIMING_HEADER => {}
        _ => return Err(err(1, format!("expected header {TIMING_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(i + 1, format!("expected 8 fields, got {}", f.len())));
        }
        let ms = |j: usize| parse_ms(f[j].trim()).ok_or_else(|| err(i + 1, format!("bad time {:?}", f[j])));
        let index = f[0]
            .trim()
            .parse()
            .map_err(|_| err(i + 1, format!("bad frame index {:?}", f[0])))?;
        let dropped = match f[7].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(i + 1, format!("dropped must be 0 or 1, got {other:?}"))),
        };
        let (prep_us, inference_us, composite_us) = (ms(2)?, ms(3)?, ms(4)?);
        let total = ms(5)?;
        if total != prep_us + inference_us + composite_us {
            return Err(err(i + 1, "total_ms is not the sum of the stages".into()));
        }
        let delay = ms(6)?;
        out.push(FrameRecord {
            index,
            arrival_us: ms(1)?,
            processed: !dropped,
            prep_us,
            inference_us,
            composite_us,
            capture_us: if dropped { 0 } else { delay.saturating_sub(total) },
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageStats {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl StageStats {
    fn of(values: impl Iterator<Item = u64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let ms = |us: u64| us as f64 / 1000.0;
        Self {
            mean_ms: values.clone().map(ms).sum::<f64>() / n,
            min_ms: values.clone().min().map_or(0.0, ms),
            max_ms: values.max().map_or(0.0, ms),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingSummary {
    pub frames: usize,
    pub prep: StageStats,
    pub inference: StageStats,
    pub composite: StageStats,
    pub total: StageStats,
    /// `1000 / mean total`.
    pub max_rate_hz: f64,
    pub mean_delay_ms: f64,
}

/// Statistics over the processed frames.
pub fn timing_summary(records: &[FrameRecord]) -> Result<TimingSummary> {
    let done: Vec<&FrameRecord> = records.iter().filter(|r| r.processed).collect();
    if done.is_empty() {
        return Err(Error::Empty("no processed frames to summarise".into()));
    }
    let total = StageStats::of(done.iter().map(|r| r.total_us()));
    let capture = done.iter().map(|r| r.capture_us as f64 / 1000.0).sum::<f64>() / done.len() as f64;
    Ok(TimingSummary {
        frames: done.len(),
        prep: StageStats::of(done.iter().map(|r| r.prep_us)),
        inference: StageStats::of(done.iter().map(|r| r.inference_us)),
        composite: StageStats::of(done.iter().map(|r| r.composite_us)),
        max_rate_hz: 1000.0 / total.mean_ms,
        mean_delay_ms: capture + total.mean_ms,
        total,
    })
}

impl TimingSummary {
    pub fn render(&self) -> String {
        let mut out = format!("frames processed: {}\n", self.frames);
        for (name, s) in [
            ("prep", &self.prep),
            ("inference", &self.inference),
            ("composite", &self.composite),
            ("total", &self.total),
        ] {
            let _ = writeln!(
                out,
                "{name:<10} mean {:>8.3} ms  min {:>8.3} ms  max {:>8.3} ms",
                s.mean_ms, s.min_ms, s.max_ms
            );
        }
        let _ = writeln!(out, "max rate   {:.1} Hz", self.max_rate_hz);
        let _ = writeln!(out, "mean delay {:.3} ms", self.mean_delay_ms);
        out
    }
}
