//! Report files: head-grid heatmaps, token score colorings, similarity
//! matrices and PCA quick-looks.
//!
//! All numbers are written with 9 significant digits and all files are
//! byte-deterministic for identical inputs.

use std::path::{Path, PathBuf};

use headprobe_core::grid::{BestHead, HeadGrid, ProbeKind, Protocol};
use headprobe_core::pca::pca_2d;
use headprobe_core::probe::Probe;
use headprobe_core::{HeadCoord, Matrix};
use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisKind, DirectionAnalysis, DirectionMeta, Excluded};
use crate::error::{Error, Result};

pub const TOOL: &str = "headprobe";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RULE_BEST_HEAD: &str = "argmax QWK over heads; ties to smallest (layer, head)";
pub const RULE_BEST_AVERAGE: &str =
    "argmax over heads of mean QWK across the compared grids; ties to smallest (layer, head)";
pub const RULE_TOP_K: &str = "top-k heads by QWK on the essay's test prompt; ties to smallest (layer, head)";
pub const RULE_TOP_K_VALIDATION: &str =
    "top-k heads by QWK on the validation prompt held out of training; ties to smallest (layer, head); validation prompt";
pub const QWK_ROUNDING: &str = "predictions rescaled linearly to the raw range and rounded half-up";

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn sig9_vec(v: &[f64]) -> Vec<f64> {
    v.iter().copied().map(sig9).collect()
}

/// Stamp embedded in every JSON artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub model_name: String,
    pub protocol: String,
    pub selection_rule: String,
}

impl Provenance {
    pub fn new(model_name: &str, protocol: Protocol, selection_rule: &str) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            model_name: model_name.into(),
            protocol: protocol.as_str().into(),
            selection_rule: selection_rule.into(),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
    pub qwk: f64,
}

impl From<BestHead> for HeadRef {
    fn from(b: BestHead) -> Self {
        Self {
            layer: b.coord.layer,
            head: b.coord.head,
            qwk: sig9(b.qwk),
        }
    }
}

impl HeadRef {
    pub fn coord(&self) -> HeadCoord {
        HeadCoord::new(self.layer, self.head)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapJson {
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub qwk_rounding: String,
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub test_prompt: i64,
    /// Prompt the grid was scored on, when it differs from the test prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scored_prompt: Option<i64>,
    pub probe_kind: ProbeKind,
    pub n_layers: usize,
    pub n_heads: usize,
    pub best_head: HeadRef,
    /// Rows are layers, columns heads.
    pub qwk: Vec<Vec<f64>>,
}

impl HeatmapJson {
    pub fn to_grid(&self) -> Result<HeadGrid> {
        Ok(HeadGrid::new(
            self.trait_name.clone(),
            self.scored_prompt.unwrap_or(self.test_prompt),
            self.probe_kind,
            self.n_layers,
            self.n_heads,
            self.qwk.concat(),
        )?)
    }
}

/// Writes `<stem>.csv` (rows = layers, columns = heads) and `<stem>.json`.
///
/// `test_prompt` is the split's test prompt; it differs from the grid's own
/// prompt only for validation grids.
pub fn emit_head_heatmap(
    grid: &HeadGrid,
    test_prompt: i64,
    best: BestHead,
    provenance: &Provenance,
    stem: &Path,
) -> Result<(PathBuf, PathBuf)> {
    grid.validate()?;
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");
    let mut csv = String::new();
    let header: Vec<String> = (0..grid.n_heads).map(|h| format!("head_{h}")).collect();
    csv.push_str(&header.join(","));
    csv.push('\n');
    for l in 0..grid.n_layers {
        let row: Vec<String> = grid.row(l).iter().map(|v| sig9(*v).to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&csv_path, csv.as_bytes())?;
    let json = HeatmapJson {
        kind: "head_grid".into(),
        provenance: provenance.clone(),
        qwk_rounding: QWK_ROUNDING.into(),
        trait_name: grid.trait_name.clone(),
        test_prompt,
        scored_prompt: (grid.test_prompt != test_prompt).then_some(grid.test_prompt),
        probe_kind: grid.probe_kind,
        n_layers: grid.n_layers,
        n_heads: grid.n_heads,
        best_head: best.into(),
        qwk: (0..grid.n_layers).map(|l| sig9_vec(grid.row(l))).collect(),
    };
    write_json(&json_path, &json)?;
    Ok((csv_path, json_path))
}

pub fn read_heatmap_json(path: &Path) -> Result<HeatmapJson> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses a heatmap CSV back into rows of values.
pub fn read_heatmap_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|line| {
            line.split(',')
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::Data(format!("{}: bad number {c:?}", path.display())))
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub score: f64,
    pub colored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreReport {
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub essay_id: String,
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub test_prompt: i64,
    pub rank: usize,
    pub head: HeadRef,
    pub probe_kind: ProbeKind,
    pub coloring_rule: String,
    pub tokens: Vec<TokenScore>,
}

/// Scores every token of a series with a probe; a token is colored when its
/// score is strictly greater than 0.5.
pub fn token_scores(probe: &Probe, series: &Matrix, tokens: &[String]) -> Result<Vec<TokenScore>> {
    if tokens.len() != series.rows() {
        return Err(headprobe_core::Error::DimensionMismatch {
            expected: series.rows(),
            got: tokens.len(),
        }
        .into());
    }
    let scores = probe.predict(series)?;
    Ok(tokens
        .iter()
        .zip(scores)
        .map(|(t, s)| {
            let score = sig9(s.clamp(0.0, 1.0));
            TokenScore {
                token: t.clone(),
                score,
                colored: score > 0.5,
            }
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn emit_token_scores(
    probe: &Probe,
    series: &Matrix,
    tokens: &[String],
    essay_id: &str,
    trait_name: &str,
    test_prompt: i64,
    rank: usize,
    head: BestHead,
    provenance: &Provenance,
    path: &Path,
) -> Result<TokenScoreReport> {
    let report = TokenScoreReport {
        kind: "token_scores".into(),
        provenance: provenance.clone(),
        essay_id: essay_id.into(),
        trait_name: trait_name.into(),
        test_prompt,
        rank,
        head: head.into(),
        probe_kind: probe.kind(),
        coloring_rule: "colored = score > 0.5".into(),
        tokens: token_scores(probe, series, tokens)?,
    };
    write_json(path, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityJson {
    pub kind: AnalysisKindName,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub scope: String,
    pub selected_head: HeadRef,
    pub essay_subset: String,
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub mean_offdiag: Option<f64>,
    pub directions: Vec<DirectionJson>,
    pub excluded: Vec<ExcludedJson>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKindName {
    TraitSimilarity,
    PromptSimilarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionJson {
    pub label: String,
    pub prompt: i64,
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub n_essays: usize,
    pub used_scores: Vec<i64>,
    pub skipped_scores: Vec<i64>,
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedJson {
    pub label: String,
    pub reason: String,
}

impl From<&DirectionMeta> for DirectionJson {
    fn from(d: &DirectionMeta) -> Self {
        Self {
            label: d.label.clone(),
            prompt: d.prompt,
            trait_name: d.trait_name.clone(),
            n_essays: d.n_essays,
            used_scores: d.used_scores.clone(),
            skipped_scores: d.skipped_scores.clone(),
            direction: sig9_vec(&d.direction),
        }
    }
}

impl From<&Excluded> for ExcludedJson {
    fn from(e: &Excluded) -> Self {
        Self {
            label: e.label.clone(),
            reason: e.reason.clone(),
        }
    }
}

pub fn emit_similarity_report(
    analysis: &DirectionAnalysis,
    provenance: &Provenance,
    path: &Path,
) -> Result<SimilarityJson> {
    let m = &analysis.matrix;
    let json = SimilarityJson {
        kind: match analysis.kind {
            AnalysisKind::TraitSimilarity => AnalysisKindName::TraitSimilarity,
            AnalysisKind::PromptSimilarity => AnalysisKindName::PromptSimilarity,
        },
        provenance: provenance.clone(),
        scope: analysis.scope.clone(),
        selected_head: analysis.selected.into(),
        essay_subset: "essays of each direction's own prompt (the test prompt of its grid)".into(),
        labels: m.labels.clone(),
        values: m.rows().map(sig9_vec).collect(),
        mean_offdiag: m.mean_offdiag.map(sig9),
        directions: analysis.directions.iter().map(Into::into).collect(),
        excluded: analysis.excluded.iter().map(Into::into).collect(),
    };
    write_json(path, &json)?;
    Ok(json)
}

pub fn read_similarity_json(path: &Path) -> Result<SimilarityJson> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub essay_id: String,
    pub label: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaJson {
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub head: HeadRef,
    pub explained_variance: [f64; 2],
    pub points: Vec<PcaPoint>,
}

/// Two-component PCA projection of one head's activations, one point per
/// essay, labelled with its raw score.
pub fn emit_pca(
    x: &Matrix,
    ids: &[String],
    labels: &[i64],
    head: BestHead,
    provenance: &Provenance,
    path: &Path,
) -> Result<PcaJson> {
    let p = pca_2d(x)?;
    let points = ids
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (id, &label))| PcaPoint {
            essay_id: id.clone(),
            label,
            x: sig9(p.projected.get(i, 0)),
            y: sig9(p.projected.get(i, 1)),
        })
        .collect();
    let json = PcaJson {
        kind: "pca_2d".into(),
        provenance: provenance.clone(),
        head: head.into(),
        explained_variance: [sig9(p.explained_variance[0]), sig9(p.explained_variance[1])],
        points,
    };
    write_json(path, &json)?;
    Ok(json)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON half of a saved probe; parameters live in a sibling `.bin` file as
/// little-endian f64 values, blocks concatenated in the listed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub test_prompt: i64,
    pub head: HeadRef,
    pub probe_kind: ProbeKind,
    pub input_dim: usize,
    pub ridge_lambda: Option<f64>,
    pub ridge_bias: Option<bool>,
    pub mlp: Option<headprobe_core::MlpFitConfig>,
    pub blocks: Vec<ParamBlock>,
    pub params_file: String,
}

fn probe_blocks(probe: &Probe) -> (Vec<ParamBlock>, Vec<f64>) {
    let b = |name: &str, shape: Vec<usize>| ParamBlock {
        name: name.into(),
        shape,
    };
    match probe {
        Probe::Ridge(r) => (vec![b("weights", vec![r.weights.len()])], r.weights.clone()),
        Probe::Mlp(m) => (
            vec![
                b("w1", vec![m.hidden(), m.input_dim()]),
                b("b1", vec![m.hidden()]),
                b("w2", vec![m.hidden()]),
                b("b2", vec![1]),
            ],
            m.flatten(),
        ),
    }
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn emit_probe(
    probe: &Probe,
    params: &headprobe_core::FitParams,
    trait_name: &str,
    test_prompt: i64,
    head: BestHead,
    provenance: &Provenance,
    stem: &Path,
) -> Result<ProbeMeta> {
    let (blocks, flat) = probe_blocks(probe);
    let bin = stem.with_extension("bin");
    let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(&bin, &bytes)?;
    let (ridge_lambda, ridge_bias, mlp) = match probe {
        Probe::Ridge(r) => (Some(r.lambda), Some(r.used_bias), None),
        Probe::Mlp(_) => (None, None, Some(params.mlp.clone())),
    };
    let meta = ProbeMeta {
        kind: "probe".into(),
        provenance: provenance.clone(),
        trait_name: trait_name.into(),
        test_prompt,
        head: head.into(),
        probe_kind: probe.kind(),
        input_dim: probe.input_dim(),
        ridge_lambda,
        ridge_bias,
        mlp,
        blocks,
        params_file: bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write_json(&stem.with_extension("json"), &meta)?;
    Ok(meta)
}

/// Loads a probe written by [`emit_probe`].
pub fn read_probe(json_path: &Path) -> Result<(ProbeMeta, Probe)> {
    let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let meta: ProbeMeta = serde_json::from_str(&text)?;
    let bin = json_path.with_file_name(&meta.params_file);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!("{}: length is not a multiple of 8", bin.display())));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let expected: usize = meta.blocks.iter().map(|b| b.shape.iter().product::<usize>()).sum();
    if flat.len() != expected {
        return Err(headprobe_core::Error::DimensionMismatch {
            expected,
            got: flat.len(),
        }
        .into());
    }
    let probe = match meta.probe_kind {
        ProbeKind::Ridge => Probe::Ridge(headprobe_core::RidgeProbe {
            weights: flat,
            lambda: meta.ridge_lambda.unwrap_or(headprobe_core::DEFAULT_LAMBDA),
            used_bias: meta.ridge_bias.unwrap_or(false),
        }),
        ProbeKind::Mlp => {
            let hidden = meta
                .blocks
                .first()
                .and_then(|b| b.shape.first().copied())
                .ok_or_else(|| Error::Data("mlp probe without blocks".into()))?;
            let mut m = headprobe_core::MlpProbe::zeros(meta.input_dim, hidden);
            m.set_flat(&flat)?;
            Probe::Mlp(m)
        }
    };
    Ok((meta, probe))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_rounds() {
        assert_eq!(sig9(0.123456789123), 0.123456789);
        assert_eq!(sig9(-1234567891234.0), -1234567890000.0);
        assert_eq!(sig9(0.0), 0.0);
        assert_eq!(sig9(1.0), 1.0);
    }

    #[test]
    fn half_is_not_colored() {
        let probe = Probe::Ridge(headprobe_core::RidgeProbe {
            weights: vec![1.0],
            lambda: 0.01,
            used_bias: false,
        });
        let x = Matrix::from_rows(&[[0.5], [0.5000001], [2.0]]).unwrap();
        let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let s = token_scores(&probe, &x, &toks).unwrap();
        assert_eq!(s.iter().map(|t| t.colored).collect::<Vec<_>>(), vec![false, true, true]);
        assert_eq!(s[2].score, 1.0);
        assert!(token_scores(&probe, &x, &toks[..2]).is_err());
    }
}
