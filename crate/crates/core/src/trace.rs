//! Episode trace logs (JSONL).
//!
//! A trace starts with a header record, then interleaves plan, high-level
//! and low-level step records, and ends with the metrics the live run
//! computed. Replaying the low-level steps against a fresh simulator must
//! reproduce those metrics.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::FailureReason;
use crate::error::{Error, Result};
use crate::eval::EpisodeMetrics;
use crate::sim::{Event, LowLevelAction};
use crate::world::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        task_id: String,
        scene_id: String,
        seed: u64,
        planner: String,
    },
    Plan {
        iteration: usize,
        response: String,
        actions: usize,
        skipped: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<String>,
    },
    HighLevel {
        action: String,
        executed: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<FailureReason>,
        low_level_count: usize,
    },
    Step {
        t: u32,
        action: LowLevelAction,
        event: Option<Event>,
        reward: i32,
        pose: Pose,
    },
    Metrics {
        metrics: EpisodeMetrics,
    },
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("trace records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}
