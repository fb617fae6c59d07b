//! Leave-one-prompt-out split plans.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitPlan {
    pub test_prompt: i64,
    pub train_prompt_ids: BTreeSet<i64>,
    /// Prompts that would otherwise have been in the training set.
    pub excluded_train_prompts: BTreeSet<i64>,
}

impl SplitPlan {
    pub fn is_train(&self, prompt: i64) -> bool {
        self.train_prompt_ids.contains(&prompt)
    }
}

/// One plan per distinct prompt: test on that prompt, train on every other
/// prompt not in `excluded`.
///
/// An excluded prompt still gets its own plan as a test prompt.
pub fn make_prompt_wise_splits(
    prompts: impl IntoIterator<Item = i64>,
    excluded: &BTreeSet<i64>,
) -> Result<Vec<SplitPlan>> {
    let all: BTreeSet<i64> = prompts.into_iter().collect();
    if all.len() < 2 {
        return Err(Error::TooFewPrompts(all.len()));
    }
    all.iter()
        .map(|&test_prompt| {
            let others = all.iter().copied().filter(|&p| p != test_prompt);
            let (excl, train): (BTreeSet<i64>, BTreeSet<i64>) =
                others.partition(|p| excluded.contains(p));
            if train.is_empty() {
                return Err(Error::EmptyTrainingSet(test_prompt));
            }
            Ok(SplitPlan {
                test_prompt,
                train_prompt_ids: train,
                excluded_train_prompts: excl,
            })
        })
        .collect()
}
