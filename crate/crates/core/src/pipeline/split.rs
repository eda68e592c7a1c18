use std::fmt;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::datagen::{FaultEvent, LineClass};
use crate::recurrence::GrayscaleImage;
use crate::seed::{mix, salt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Stratified deterministic split.
///
/// Within each class, events are ranked by a hash of `(seed, event_id)` and
/// the first `round(n_class · test_fraction)` are held out. The result depends
/// only on the set of events, never on their order in `events`.
pub fn assign_split(events: &[FaultEvent], seed: u64, test_fraction: f64) -> Result<Vec<Split>, PipelineError> {
    if events.len() < 10 {
        return Err(PipelineError::Config(format!("need at least 10 events to split, got {}", events.len())));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PipelineError::Config(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    let mut out = vec![Split::Train; events.len()];
    for class in LineClass::ALL {
        let mut members: Vec<(u64, u64, usize)> = events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.line_class == class)
            .map(|(i, e)| (mix(seed ^ salt::SPLIT, e.event_id), e.event_id, i))
            .collect();
        if members.is_empty() {
            return Err(PipelineError::Config(format!("class {class} is absent from the dataset")));
        }
        members.sort_unstable();
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        for &(_, _, i) in members.iter().take(n_test) {
            out[i] = Split::Test;
        }
    }
    Ok(out)
}

/// Parallel arrays describing one generator's embedded events, sorted by event id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<GrayscaleImage>,
    pub labels: Vec<LineClass>,
    pub meta: Vec<FaultEvent>,
    pub split: Vec<Split>,
}

impl LabeledDataset {
    pub fn new(images: Vec<GrayscaleImage>, meta: Vec<FaultEvent>) -> Result<Self, PipelineError> {
        if images.len() != meta.len() {
            return Err(PipelineError::Config(format!("{} images for {} events", images.len(), meta.len())));
        }
        let labels = meta.iter().map(|e| e.line_class).collect();
        let split = vec![Split::Train; meta.len()];
        Ok(LabeledDataset {
            images,
            labels,
            meta,
            split,
        })
    }

    pub fn split_dataset(mut self, seed: u64, test_fraction: f64) -> Result<Self, PipelineError> {
        self.split = assign_split(&self.meta, seed, test_fraction)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }
}
