//! Essay tables, score ranges and prompt-wise splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use headprobe_core::split::make_prompt_wise_splits;
use headprobe_core::{SplitPlan, TraitRange};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of an essay table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub prompt: String,
    pub text: String,
    /// Trait name to score column.
    pub traits: BTreeMap<String, String>,
}

/// A second table carrying extra trait columns, joined on essay id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Supplement {
    /// Relative paths resolve against the metadata file's directory.
    pub path: PathBuf,
    pub id: String,
    pub traits: BTreeMap<String, String>,
}

/// Dataset metadata config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub prompts: Vec<i64>,
    pub traits: Vec<String>,
    #[serde(default)]
    pub excluded_traits: Vec<String>,
    pub ranges: Vec<TraitRange>,
    pub columns: ColumnMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplement: Option<Supplement>,
}

impl DatasetMetadata {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut meta: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = &mut meta.supplement {
            if s.path.is_relative() {
                if let Some(dir) = path.parent() {
                    s.path = dir.join(&s.path);
                }
            }
        }
        meta.validate()?;
        Ok(meta)
    }

    /// Traits left after exclusions.
    pub fn retained_traits(&self) -> Vec<String> {
        self.traits
            .iter()
            .filter(|t| !self.excluded_traits.contains(t))
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.ranges {
            r.validate()?;
            if !seen.insert((r.prompt_id, r.trait_name.clone())) {
                return Err(Error::Config(format!(
                    "duplicate range for prompt {} trait {:?}",
                    r.prompt_id, r.trait_name
                )));
            }
        }
        for t in self.retained_traits() {
            let prompts: BTreeSet<i64> = self
                .ranges
                .iter()
                .filter(|r| r.trait_name == t)
                .map(|r| r.prompt_id)
                .collect();
            if prompts.len() < 2 {
                return Err(Error::Config(format!(
                    "trait {t:?} has ranges for {} prompt(s); cross-prompt evaluation needs at least 2 \
                     (list it under excluded_traits)",
                    prompts.len()
                )));
            }
            let has_column = self.columns.traits.contains_key(&t)
                || self
                    .supplement
                    .as_ref()
                    .is_some_and(|s| s.traits.contains_key(&t));
            if !has_column {
                return Err(Error::Config(format!("trait {t:?} has no score column")));
            }
        }
        Ok(())
    }

    pub fn range_map(&self) -> BTreeMap<(i64, String), TraitRange> {
        self.ranges
            .iter()
            .map(|r| ((r.prompt_id, r.trait_name.clone()), r.clone()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub essay_id: String,
    pub prompt_id: i64,
    pub essay_text: String,
    /// Raw scores; traits without a score are absent.
    pub scores: BTreeMap<String, i64>,
}

/// How trait columns were assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergePath {
    PreMerged,
    Joined,
}

/// Records plus the metadata they were validated against.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub metadata: DatasetMetadata,
    pub records: Vec<EssayRecord>,
    pub merge_path: MergePath,
    ranges: BTreeMap<(i64, String), TraitRange>,
}

impl Dataset {
    pub fn load(table: impl AsRef<Path>, metadata: DatasetMetadata) -> Result<Self> {
        let ranges: Vec<TraitRange> = metadata.ranges.clone();
        let mut columns = metadata.columns.clone();
        columns
            .traits
            .retain(|t, _| !metadata.excluded_traits.contains(t));
        let mut records = parse_essay_table(table, &columns, &ranges)?;
        let merge_path = match &metadata.supplement {
            Some(s) => {
                let mut traits = s.traits.clone();
                traits.retain(|t, _| !metadata.excluded_traits.contains(t));
                join_trait_table(&mut records, &s.path, &s.id, &traits, &ranges)?;
                MergePath::Joined
            }
            None => MergePath::PreMerged,
        };
        Ok(Self {
            ranges: metadata.range_map(),
            metadata,
            records,
            merge_path,
        })
    }

    pub fn range(&self, prompt: i64, trait_name: &str) -> Result<&TraitRange> {
        self.ranges
            .get(&(prompt, trait_name.to_string()))
            .ok_or_else(|| Error::Data(format!("no range for prompt {prompt} trait {trait_name:?}")))
    }

    /// Records scored on `trait_name`.
    pub fn scored<'a>(&'a self, trait_name: &'a str) -> impl Iterator<Item = &'a EssayRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.scores.contains_key(trait_name))
    }

    /// Prompts with at least one essay scored on `trait_name`.
    pub fn prompts_for(&self, trait_name: &str) -> BTreeSet<i64> {
        self.scored(trait_name).map(|r| r.prompt_id).collect()
    }

    /// Leave-one-prompt-out plans over the prompts scored on `trait_name`.
    pub fn splits(&self, trait_name: &str, excluded: &BTreeSet<i64>) -> Result<Vec<SplitPlan>> {
        Ok(make_prompt_wise_splits(self.prompts_for(trait_name), excluded)?)
    }

    pub fn by_id(&self) -> HashMap<&str, &EssayRecord> {
        self.records.iter().map(|r| (r.essay_id.as_str(), r)).collect()
    }
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn header_index(headers: &csv::ByteRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| String::from_utf8_lossy(h).trim() == name)
        .ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", path.display())))
}

fn parse_score(cell: &str) -> Option<std::result::Result<i64, ()>> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return None;
    }
    if let Ok(v) = cell.parse::<i64>() {
        return Some(Ok(v));
    }
    match cell.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.is_finite() => Some(Ok(v as i64)),
        _ => Some(Err(())),
    }
}

fn check_score(
    ranges: &[TraitRange],
    prompt: i64,
    trait_name: &str,
    raw: i64,
    row: usize,
    path: &Path,
) -> Result<()> {
    let range = ranges
        .iter()
        .find(|r| r.prompt_id == prompt && r.trait_name == trait_name)
        .ok_or_else(|| {
            Error::Data(format!(
                "{} row {row}: trait {trait_name:?} scored but prompt {prompt} has no range for it",
                path.display()
            ))
        })?;
    if !range.contains(raw) {
        return Err(Error::Data(format!(
            "{} row {row}: trait {trait_name:?} score {raw} outside [{}, {}]",
            path.display(),
            range.min_score,
            range.max_score
        )));
    }
    Ok(())
}

/// Parses a tab-separated essay table with a header row.
///
/// Empty or `NA` trait cells leave the trait absent from that record.
pub fn parse_essay_table(
    path: impl AsRef<Path>,
    columns: &ColumnMap,
    ranges: &[TraitRange],
) -> Result<Vec<EssayRecord>> {
    let path = path.as_ref();
    let mut rdr = tsv_reader(path)?;
    let headers = rdr
        .byte_headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let id_col = header_index(&headers, &columns.id, path)?;
    let prompt_col = header_index(&headers, &columns.prompt, path)?;
    let text_col = header_index(&headers, &columns.text, path)?;
    let trait_cols = columns
        .traits
        .iter()
        .map(|(t, c)| Ok((t.clone(), header_index(&headers, c, path)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, rec) in rdr.byte_records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("{} row {row}: {e}", path.display())))?;
        let cell = |c: usize| String::from_utf8_lossy(rec.get(c).unwrap_or_default()).into_owned();
        let essay_id = cell(id_col).trim().to_string();
        if !ids.insert(essay_id.clone()) {
            return Err(Error::Data(format!(
                "{} row {row}: duplicate essay id {essay_id:?}",
                path.display()
            )));
        }
        let prompt_id: i64 = cell(prompt_col).trim().parse().map_err(|_| {
            Error::Data(format!(
                "{} row {row}: bad prompt id {:?}",
                path.display(),
                cell(prompt_col)
            ))
        })?;
        let mut scores = BTreeMap::new();
        for (t, c) in &trait_cols {
            match parse_score(&cell(*c)) {
                None => {}
                Some(Err(())) => {
                    return Err(Error::Data(format!(
                        "{} row {row}: trait {t:?} has non-integer score {:?}",
                        path.display(),
                        cell(*c)
                    )))
                }
                Some(Ok(raw)) => {
                    check_score(ranges, prompt_id, t, raw, row, path)?;
                    scores.insert(t.clone(), raw);
                }
            }
        }
        out.push(EssayRecord {
            essay_id,
            prompt_id,
            essay_text: cell(text_col),
            scores,
        });
    }
    Ok(out)
}

/// Adds trait scores from a second table keyed by essay id. Ids absent from
/// `records` are ignored.
pub fn join_trait_table(
    records: &mut [EssayRecord],
    path: impl AsRef<Path>,
    id_column: &str,
    traits: &BTreeMap<String, String>,
    ranges: &[TraitRange],
) -> Result<()> {
    let path = path.as_ref();
    let mut rdr = tsv_reader(path)?;
    let headers = rdr
        .byte_headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let id_col = header_index(&headers, id_column, path)?;
    let cols = traits
        .iter()
        .map(|(t, c)| Ok((t.clone(), header_index(&headers, c, path)?)))
        .collect::<Result<Vec<_>>>()?;
    let index: HashMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.essay_id.clone(), i))
        .collect();
    for (i, rec) in rdr.byte_records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("{} row {row}: {e}", path.display())))?;
        let cell = |c: usize| String::from_utf8_lossy(rec.get(c).unwrap_or_default()).into_owned();
        let Some(&target) = index.get(cell(id_col).trim()) else {
            continue;
        };
        let prompt = records[target].prompt_id;
        for (t, c) in &cols {
            match parse_score(&cell(*c)) {
                None => {}
                Some(Err(())) => {
                    return Err(Error::Data(format!(
                        "{} row {row}: trait {t:?} has non-integer score",
                        path.display()
                    )))
                }
                Some(Ok(raw)) => {
                    check_score(ranges, prompt, t, raw, row, path)?;
                    if let Some(prev) = records[target].scores.insert(t.clone(), raw) {
                        if prev != raw {
                            return Err(Error::Data(format!(
                                "{} row {row}: trait {t:?} conflicts with main table ({prev} vs {raw})",
                                path.display()
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
