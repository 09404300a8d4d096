//! Record ingestion, weekly diffusion snapshots, item series and labels.

mod dataset;
mod labels;
mod records;
mod snapshot;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{Dataset, DatasetManifest, ItemExample, ItemSeries, Sample, SplitSummary};
pub use labels::{label_rising_stars, top_cutoff, LabelOutcome, LabelRule, RankMode};
pub use records::{
    ingest, parse_diffusion_line, write_csvs, Category, DiffusionRecord, IngestPaths, IngestReport, ItemId, ItemInfo,
    PurchaseRecord, RecordStore, UserId,
};
pub use snapshot::{build_snapshots, DiffusionSnapshot, DynamicDiffusionGraph, UserFeatureTable, USER_FEATURES};
pub use split::{temporal_split, Window, WindowSplit};

pub const WEEK_SECONDS: i64 = 604_800;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse { file: PathBuf, line: u64, message: String },
    #[error("{file}: expected header `{expected}`, found `{found}`")]
    Header {
        file: PathBuf,
        expected: String,
        found: String,
    },
    #[error("unknown item_id {item_id}{}", location(.file, .line))]
    UnknownItem {
        item_id: ItemId,
        file: Option<PathBuf>,
        line: Option<u64>,
    },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("configuration error: {0}")]
    Config(String),
}

fn location(file: &Option<PathBuf>, line: &Option<u64>) -> String {
    match (file, line) {
        (Some(f), Some(l)) => format!(" at {}:{l}", f.display()),
        (Some(f), None) => format!(" in {}", f.display()),
        _ => String::new(),
    }
}

/// `weeks` fixed 604800-second bins starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: i64,
    pub weeks: usize,
}

impl Span {
    pub fn new(start: i64, weeks: usize) -> Self {
        Span { start, weeks }
    }

    /// Exclusive end timestamp.
    pub fn end(&self) -> i64 {
        self.start + self.weeks as i64 * WEEK_SECONDS
    }

    pub fn week_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.start || timestamp >= self.end() {
            return None;
        }
        Some(((timestamp - self.start) / WEEK_SECONDS) as usize)
    }
}

/// How dataset items are labeled and featurized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Start of the first week, seconds since epoch.
    pub span_start: i64,
    pub weeks: usize,
    /// Weeks of the low-rank observation window.
    pub obs_weeks: usize,
    /// Weeks of the high-rank horizon.
    pub horizon_weeks: usize,
    /// An item must stay outside the top `q_lo` of its category while observed...
    pub q_lo: f64,
    /// ...and then reach the top `q_hi` over the horizon.
    pub q_hi: f64,
    pub rank_mode: RankMode,
    /// Append weekly diffusion summary columns (log scale, log edge count)
    /// to the item features. Off by default so the graph-free ablation
    /// really sees no diffusion information.
    pub diffusion_stats_in_features: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            span_start: 1_588_291_200,
            weeks: 12,
            obs_weeks: 4,
            horizon_weeks: 2,
            q_lo: 0.003,
            q_hi: 0.001,
            rank_mode: RankMode::Aggregate,
            diffusion_stats_in_features: false,
        }
    }
}

impl DataConfig {
    pub fn span(&self) -> Span {
        Span::new(self.span_start, self.weeks)
    }

    pub fn label_rule(&self) -> LabelRule {
        LabelRule {
            obs_weeks: self.obs_weeks,
            horizon_weeks: self.horizon_weeks,
            q_lo: self.q_lo,
            q_hi: self.q_hi,
            rank_mode: self.rank_mode,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.weeks == 0 {
            return Err(DataError::Config("data.weeks must be at least 1".into()));
        }
        if self.obs_weeks == 0 || self.horizon_weeks == 0 {
            return Err(DataError::Config(
                "data.obs_weeks and data.horizon_weeks must be at least 1".into(),
            ));
        }
        if !(0.0 < self.q_hi && self.q_hi <= self.q_lo && self.q_lo < 1.0) {
            return Err(DataError::Config(format!(
                "need 0 < q_hi <= q_lo < 1, got q_hi={} q_lo={}",
                self.q_hi, self.q_lo
            )));
        }
        Ok(())
    }
}
