//! Trait-vs-trait and prompt-vs-prompt direction similarity at the heads
//! with the best average QWK.

use std::collections::{BTreeMap, HashMap};

use headprobe_core::directions::{graded_direction, similarity_matrix, SimilarityMatrix};
use headprobe_core::grid::{best_average_head, BestHead, HeadGrid};
use headprobe_core::{HeadCoord, Matrix};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::store::DumpReader;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionMeta {
    pub label: String,
    pub prompt: i64,
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub n_essays: usize,
    pub used_scores: Vec<i64>,
    pub skipped_scores: Vec<i64>,
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Excluded {
    pub label: String,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    /// Directions of several traits under one prompt.
    TraitSimilarity,
    /// Directions of one trait under several prompts.
    PromptSimilarity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionAnalysis {
    pub kind: AnalysisKind,
    /// The fixed prompt (trait analysis) or trait (prompt analysis).
    pub scope: String,
    /// Head with the highest mean QWK over the input grids; `qwk` is that mean.
    pub selected: BestHead,
    pub matrix: SimilarityMatrix,
    pub directions: Vec<DirectionMeta>,
    pub excluded: Vec<Excluded>,
}

fn score_groups(
    reader: &DumpReader,
    dataset: &Dataset,
    index: &HashMap<&str, usize>,
    coord: HeadCoord,
    prompt: i64,
    trait_name: &str,
) -> Result<(BTreeMap<i64, Matrix>, usize)> {
    let mut by_score: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut missing = Vec::new();
    for r in dataset.scored(trait_name).filter(|r| r.prompt_id == prompt) {
        match index.get(r.essay_id.as_str()) {
            Some(&row) => by_score.entry(r.scores[trait_name]).or_default().push(row),
            None => missing.push(r.essay_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "essay(s) missing from dump: {}",
            missing.join(", ")
        )));
    }
    let n = by_score.values().map(Vec::len).sum();
    let groups = by_score
        .into_iter()
        .map(|(s, rows)| Ok((s, reader.load_last_tokens(coord, Some(&rows))?)))
        .collect::<Result<_>>()?;
    Ok((groups, n))
}

struct Item {
    label: String,
    prompt: i64,
    trait_name: String,
}

fn analyse(
    reader: &DumpReader,
    dataset: &Dataset,
    kind: AnalysisKind,
    scope: String,
    grids: Vec<&HeadGrid>,
    items: Vec<Item>,
) -> Result<DirectionAnalysis> {
    let selected = best_average_head(grids)?;
    reader.header().check_coord(selected.coord)?;
    let index: HashMap<&str, usize> = reader
        .header()
        .example_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut directions = Vec::new();
    let mut excluded = Vec::new();
    for it in items {
        let range = dataset.range(it.prompt, &it.trait_name)?;
        let (groups, n) = score_groups(reader, dataset, &index, selected.coord, it.prompt, &it.trait_name)?;
        match graded_direction(&groups, range) {
            Ok(g) => directions.push(DirectionMeta {
                label: it.label,
                prompt: it.prompt,
                trait_name: it.trait_name,
                n_essays: n,
                used_scores: g.used_scores,
                skipped_scores: g.skipped_scores,
                direction: g.v,
            }),
            Err(e @ (headprobe_core::Error::TooFewGroups(_) | headprobe_core::Error::DegenerateDirection)) => {
                excluded.push(Excluded {
                    label: it.label,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e.into()),
        }
    }
    if directions.is_empty() {
        return Err(Error::Data(format!(
            "no usable directions for {scope}: {}",
            excluded
                .iter()
                .map(|e| format!("{} ({})", e.label, e.reason))
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let labels = directions.iter().map(|d| d.label.clone()).collect();
    let vectors: Vec<Vec<f64>> = directions.iter().map(|d| d.direction.clone()).collect();
    let matrix = similarity_matrix(labels, &vectors)?;
    Ok(DirectionAnalysis {
        kind,
        scope,
        selected,
        matrix,
        directions,
        excluded,
    })
}

/// Directions of every trait of `prompt_id` at the head with the highest
/// mean QWK across the traits' grids for that test prompt, computed from the
/// prompt's own essays.
pub fn trait_direction_analysis(
    reader: &DumpReader,
    dataset: &Dataset,
    prompt_id: i64,
    trait_grids: &BTreeMap<String, HeadGrid>,
) -> Result<DirectionAnalysis> {
    if let Some((t, g)) = trait_grids.iter().find(|(_, g)| g.test_prompt != prompt_id) {
        return Err(Error::Data(format!(
            "grid for trait {t:?} belongs to test prompt {}, not {prompt_id}",
            g.test_prompt
        )));
    }
    let items = trait_grids
        .keys()
        .map(|t| Item {
            label: t.clone(),
            prompt: prompt_id,
            trait_name: t.clone(),
        })
        .collect();
    analyse(
        reader,
        dataset,
        AnalysisKind::TraitSimilarity,
        format!("prompt {prompt_id}"),
        trait_grids.values().collect(),
        items,
    )
}

/// Directions of `trait_name` under every prompt at the head with the
/// highest mean QWK across the prompts' grids.
pub fn prompt_direction_analysis(
    reader: &DumpReader,
    dataset: &Dataset,
    trait_name: &str,
    prompt_grids: &BTreeMap<i64, HeadGrid>,
) -> Result<DirectionAnalysis> {
    if let Some((p, g)) = prompt_grids.iter().find(|(_, g)| g.trait_name != trait_name) {
        return Err(Error::Data(format!(
            "grid for prompt {p} belongs to trait {:?}, not {trait_name:?}",
            g.trait_name
        )));
    }
    let items = prompt_grids
        .keys()
        .map(|&p| Item {
            label: p.to_string(),
            prompt: p,
            trait_name: trait_name.to_string(),
        })
        .collect();
    analyse(
        reader,
        dataset,
        AnalysisKind::PromptSimilarity,
        format!("trait {trait_name}"),
        prompt_grids.values().collect(),
        items,
    )
}
