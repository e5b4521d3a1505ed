use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MIN_SPLIT_IDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Selection,
    Calibration,
    Analysis,
}

/// Disjoint selection / calibration / analysis id sets (50/10/40).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub selection_ids: Vec<u64>,
    pub calibration_ids: Vec<u64>,
    pub analysis_ids: Vec<u64>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> &[u64] {
        match split {
            Split::Selection => &self.selection_ids,
            Split::Calibration => &self.calibration_ids,
            Split::Analysis => &self.analysis_ids,
        }
    }

    pub fn split_of(&self, id: u64) -> Option<Split> {
        [Split::Selection, Split::Calibration, Split::Analysis]
            .into_iter()
            .find(|&s| self.ids(s).contains(&id))
    }
}

/// Shuffles `ids` by `seed`, then takes floor(0.5n), floor(0.1n) and the rest.
pub fn split_dataset(ids: &[u64], seed: u64) -> Result<SplitAssignment> {
    if ids.len() < MIN_SPLIT_IDS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SPLIT_IDS} ids to split, got {}",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng::rng_from(rng::substream(seed, "split")));
    let n = shuffled.len();
    let n_sel = n / 2;
    let n_cal = n / 10;
    let analysis_ids = shuffled.split_off(n_sel + n_cal);
    let calibration_ids = shuffled.split_off(n_sel);
    Ok(SplitAssignment {
        selection_ids: shuffled,
        calibration_ids,
        analysis_ids,
    })
}
