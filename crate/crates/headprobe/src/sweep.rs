//! Per-head probe sweeps over one prompt-wise split.

use std::collections::{BTreeSet, HashMap};

use headprobe_core::evaluate::{evaluate_head, score_probe};
use headprobe_core::grid::{best_head, BestHead, HeadGrid, Protocol};
use headprobe_core::probe::{FitParams, Probe};
use headprobe_core::{DumpHeader, HeadCoord, Matrix, SplitPlan, TraitRange};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::store::DumpReader;

/// Essays scored on one prompt, located in the dump.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub prompt: i64,
    pub rows: Vec<usize>,
    pub ids: Vec<String>,
    pub labels: Vec<i64>,
    pub range: TraitRange,
}

/// Everything a sweep needs for one `(trait, test prompt)` pair.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub plan: SplitPlan,
    pub trait_name: String,
    /// Dump example indices of the training essays.
    pub train_rows: Vec<usize>,
    pub train_ids: Vec<String>,
    pub train_prompts: Vec<i64>,
    /// Normalized training targets.
    pub train_y: Vec<f64>,
    pub test: EvalSet,
    /// Selection prompt under the held-out protocol.
    pub validation: Option<EvalSet>,
}

impl PreparedSplit {
    pub fn protocol(&self) -> Protocol {
        if self.validation.is_some() {
            Protocol::HeldOut
        } else {
            Protocol::TestSetSelected
        }
    }
}

pub fn create_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Validation prompt for the held-out protocol: the next training prompt
/// after the test prompt, wrapping around.
pub fn validation_prompt(plan: &SplitPlan) -> Option<i64> {
    if plan.train_prompt_ids.len() < 2 {
        return None;
    }
    plan.train_prompt_ids
        .range(plan.test_prompt + 1..)
        .next()
        .or_else(|| plan.train_prompt_ids.iter().next())
        .copied()
}

fn eval_set(
    dataset: &Dataset,
    index: &HashMap<&str, usize>,
    trait_name: &str,
    prompt: i64,
    missing: &mut Vec<String>,
) -> Result<EvalSet> {
    let mut set = EvalSet {
        prompt,
        rows: vec![],
        ids: vec![],
        labels: vec![],
        range: dataset.range(prompt, trait_name)?.clone(),
    };
    for r in dataset.scored(trait_name).filter(|r| r.prompt_id == prompt) {
        match index.get(r.essay_id.as_str()) {
            Some(&row) => {
                set.rows.push(row);
                set.ids.push(r.essay_id.clone());
                set.labels.push(r.scores[trait_name]);
            }
            None => missing.push(r.essay_id.clone()),
        }
    }
    Ok(set)
}

/// Resolves a split plan to dump rows and targets.
///
/// Fails if any essay of the split is absent from the dump, and refuses to
/// return a split whose training rows include the test prompt, the
/// validation prompt or an excluded prompt.
pub fn prepare_split(
    dataset: &Dataset,
    header: &DumpHeader,
    trait_name: &str,
    plan: &SplitPlan,
    protocol: Protocol,
) -> Result<PreparedSplit> {
    let index: HashMap<&str, usize> = header
        .example_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut missing = Vec::new();
    let test = eval_set(dataset, &index, trait_name, plan.test_prompt, &mut missing)?;
    let validation = match protocol {
        Protocol::TestSetSelected => None,
        Protocol::HeldOut => {
            let v = validation_prompt(plan).ok_or_else(|| {
                Error::Config(format!(
                    "held-out selection for test prompt {} needs at least two training prompts",
                    plan.test_prompt
                ))
            })?;
            Some(eval_set(dataset, &index, trait_name, v, &mut missing)?)
        }
    };
    let held: Option<i64> = validation.as_ref().map(|v| v.prompt);

    let mut split = PreparedSplit {
        plan: plan.clone(),
        trait_name: trait_name.to_string(),
        train_rows: vec![],
        train_ids: vec![],
        train_prompts: vec![],
        train_y: vec![],
        test,
        validation,
    };
    for r in dataset.scored(trait_name) {
        if !plan.is_train(r.prompt_id) || Some(r.prompt_id) == held {
            continue;
        }
        let Some(&row) = index.get(r.essay_id.as_str()) else {
            missing.push(r.essay_id.clone());
            continue;
        };
        let range = dataset.range(r.prompt_id, trait_name)?;
        split.train_rows.push(row);
        split.train_ids.push(r.essay_id.clone());
        split.train_prompts.push(r.prompt_id);
        split.train_y.push(range.normalize(r.scores[trait_name])?);
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::Data(format!(
            "{} essay(s) missing from dump: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    if split.train_rows.is_empty() {
        return Err(headprobe_core::Error::EmptyTrainingSet(plan.test_prompt).into());
    }
    if split.test.rows.is_empty() {
        return Err(Error::Data(format!(
            "test prompt {} has no essays scored on {trait_name:?}",
            plan.test_prompt
        )));
    }
    check_hygiene(&split)?;
    Ok(split)
}

/// Asserts that no training row belongs to a held-out prompt.
pub fn check_hygiene(split: &PreparedSplit) -> Result<()> {
    let mut forbidden: BTreeSet<i64> = split.plan.excluded_train_prompts.clone();
    forbidden.insert(split.test.prompt);
    if let Some(v) = &split.validation {
        forbidden.insert(v.prompt);
    }
    if let Some(i) = split.train_prompts.iter().position(|p| forbidden.contains(p)) {
        return Err(Error::Leak(format!(
            "essay {} of prompt {} is in the training set for test prompt {}",
            split.train_ids[i], split.train_prompts[i], split.test.prompt
        )));
    }
    let held: BTreeSet<usize> = split
        .test
        .rows
        .iter()
        .chain(split.validation.iter().flat_map(|v| &v.rows))
        .copied()
        .collect();
    if let Some(i) = split.train_rows.iter().position(|r| held.contains(r)) {
        return Err(Error::Leak(format!(
            "dump row of essay {} is shared between training and evaluation",
            split.train_ids[i]
        )));
    }
    Ok(())
}

fn trait_salt(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Fit parameters for one head of one split; MLP seeds differ per head.
pub fn head_params(params: &FitParams, split: &PreparedSplit, coord: HeadCoord) -> FitParams {
    params.salted(&[
        coord.layer as u64,
        coord.head as u64,
        split.test.prompt as u64,
        trait_salt(&split.trait_name),
    ])
}

/// Training matrix and targets for one head.
pub fn training_data(reader: &DumpReader, split: &PreparedSplit, coord: HeadCoord) -> Result<(Matrix, Vec<f64>)> {
    let all = reader.load_last_tokens(coord, None)?;
    Ok((all.select_rows(&split.train_rows)?, split.train_y.clone()))
}

/// Fits the probe of one head.
pub fn fit_head(reader: &DumpReader, split: &PreparedSplit, coord: HeadCoord, params: &FitParams) -> Result<Probe> {
    let (x, y) = training_data(reader, split, coord)?;
    Ok(Probe::fit(&x, &y, &head_params(params, split, coord))?)
}

/// Called with the dump rows of every training matrix a sweep builds.
pub type TrainObserver<'a> = &'a (dyn Fn(HeadCoord, &[usize]) + Sync);

fn evaluate_coord(
    reader: &DumpReader,
    split: &PreparedSplit,
    coord: HeadCoord,
    params: &FitParams,
    observer: Option<TrainObserver>,
) -> Result<(f64, Option<f64>)> {
    let all = reader.load_last_tokens(coord, None)?;
    if let Some(f) = observer {
        f(coord, &split.train_rows);
    }
    let train_x = all.select_rows(&split.train_rows)?;
    let test_x = all.select_rows(&split.test.rows)?;
    let (probe, test_qwk) = evaluate_head(
        &train_x,
        &split.train_y,
        &test_x,
        &split.test.labels,
        &split.test.range,
        &head_params(params, split, coord),
    )?;
    let val_qwk = match &split.validation {
        Some(v) => {
            let vx = all.select_rows(&v.rows)?;
            Some(score_probe(&probe, &vx, &v.labels, &v.range)?)
        }
        None => None,
    };
    Ok((test_qwk, val_qwk))
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub test: HeadGrid,
    /// Grid on the validation prompt (held-out protocol only).
    pub validation: Option<HeadGrid>,
}

impl SweepResult {
    pub fn protocol(&self) -> Protocol {
        if self.validation.is_some() {
            Protocol::HeldOut
        } else {
            Protocol::TestSetSelected
        }
    }

    /// Reported head: the test-grid argmax, or under the held-out protocol
    /// the validation argmax scored on the test grid.
    pub fn selected(&self) -> Result<BestHead> {
        match &self.validation {
            None => Ok(best_head(&self.test)?),
            Some(v) => {
                let coord = best_head(v)?.coord;
                Ok(BestHead {
                    coord,
                    qwk: self.test.get(coord),
                })
            }
        }
    }
}

/// Evaluates every head. Heads run in parallel on `pool`; the result does
/// not depend on the number of workers.
pub fn sweep_heads(
    reader: &DumpReader,
    split: &PreparedSplit,
    params: &FitParams,
    pool: &ThreadPool,
) -> Result<SweepResult> {
    sweep_heads_observed(reader, split, params, pool, None)
}

/// [`sweep_heads`] with a hook that sees every training selection.
pub fn sweep_heads_observed(
    reader: &DumpReader,
    split: &PreparedSplit,
    params: &FitParams,
    pool: &ThreadPool,
    observer: Option<TrainObserver>,
) -> Result<SweepResult> {
    let h = reader.header();
    let coords: Vec<HeadCoord> = h.coords().collect();
    let scores: Vec<(f64, Option<f64>)> = pool.install(|| {
        coords
            .par_iter()
            .map(|&c| evaluate_coord(reader, split, c, params, observer))
            .collect::<Result<Vec<_>>>()
    })?;
    let grid = |values: Vec<f64>, prompt: i64| {
        HeadGrid::new(
            split.trait_name.clone(),
            prompt,
            params.kind,
            h.n_layers,
            h.n_heads,
            values,
        )
    };
    let test = grid(scores.iter().map(|s| s.0).collect(), split.test.prompt)?;
    let validation = match &split.validation {
        Some(v) => Some(grid(
            scores.iter().map(|s| s.1.unwrap_or(0.0)).collect(),
            v.prompt,
        )?),
        None => None,
    };
    Ok(SweepResult { test, validation })
}
