use serde::{Deserialize, Serialize};

use super::DataError;

/// A sliding window: `obs_weeks` observed weeks from `start`, then `horizon_weeks` label weeks.
/// Week indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub obs_weeks: usize,
    pub horizon_weeks: usize,
}

impl Window {
    /// First label week.
    pub fn horizon_start(&self) -> usize {
        self.start + self.obs_weeks
    }

    /// One past the last label week.
    pub fn end(&self) -> usize {
        self.horizon_start() + self.horizon_weeks
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowSplit {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// Assigns sliding windows over `weeks` to train / val / test.
///
/// Test is the last window, validation ends one horizon earlier, and training
/// windows end no later than two horizons before the span end, so no training
/// label week is seen by validation or test labels.
pub fn temporal_split(weeks: usize, obs_weeks: usize, horizon_weeks: usize) -> Result<WindowSplit, DataError> {
    let len = obs_weeks + horizon_weeks;
    if obs_weeks == 0 || horizon_weeks == 0 {
        return Err(DataError::Config(
            "observation and horizon lengths must be at least 1".into(),
        ));
    }
    if weeks < len {
        return Err(DataError::Config(format!(
            "{weeks} weeks cannot hold a {obs_weeks}+{horizon_weeks} week window"
        )));
    }
    let window = |start| Window {
        start,
        obs_weeks,
        horizon_weeks,
    };
    let last = weeks - len;
    let mut split = WindowSplit::default();
    match last.checked_sub(2 * horizon_weeks) {
        Some(train_last) => {
            split.train = (0..=train_last).map(window).collect();
            split.val = vec![window(last - horizon_weeks)];
            split.test = vec![window(last)];
        }
        None => {
            split.train = (0..=last).map(window).collect();
            split.warnings.push(format!(
                "{weeks} weeks is too short for separate splits; all windows go to training"
            ));
        }
    }
    Ok(split)
}
