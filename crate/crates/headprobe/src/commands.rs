//! End-to-end commands: sweep, directions, token reports, synth and inspect.
//!
//! Output layout under the run's output directory:
//!
//! ```text
//! manifest.json
//! best_heads.csv, best_heads.json
//! grids/<trait>/prompt_<p>.{csv,json}            (plus prompt_<p>_validation.* under held-out)
//! probes/<trait>/prompt_<p>.{json,bin}
//! pca/<trait>/prompt_<p>.json
//! directions/manifest.json
//! directions/prompt_<p>_traits.json, directions/trait_<t>_prompts.json
//! token_reports/<essay>/<trait>/rank_<r>.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use headprobe_core::grid::{top_k, BestHead, HeadGrid, Protocol};
use headprobe_core::probe::FitParams;
use headprobe_core::TokenMode;
use serde::{Deserialize, Serialize};

use crate::analysis::{prompt_direction_analysis, trait_direction_analysis};
use crate::config::{check_path_component, Manifest, RunConfig, SplitAudit};
use crate::dataset::{Dataset, DatasetMetadata};
use crate::error::{Error, Result};
use crate::report::{
    emit_head_heatmap, emit_pca, emit_probe, emit_similarity_report, emit_token_scores, read_heatmap_json,
    write_json, HeadRef, Provenance, SimilarityJson, TokenScoreReport, RULE_BEST_AVERAGE, RULE_BEST_HEAD,
    RULE_TOP_K, RULE_TOP_K_VALIDATION,
};
use crate::store::{read_header, DumpReader};
use crate::sweep::{create_pool, fit_head, prepare_split, sweep_heads, PreparedSplit, SweepResult};
use crate::synth::{generate, SynthOutput, SynthSpec};

/// Inputs of a run, loaded and validated.
pub struct Run {
    pub config: RunConfig,
    pub reader: DumpReader,
    pub dataset: Dataset,
    pub params: FitParams,
}

impl Run {
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let metadata = DatasetMetadata::load(&config.metadata_path)?;
        let dataset = Dataset::load(&config.dataset_path, metadata)?;
        let reader = DumpReader::open(&config.dump_path)?;
        let params = config.fit_params();
        let run = Self {
            config,
            reader,
            dataset,
            params,
        };
        run.traits()?;
        Ok(run)
    }

    /// Traits to process: the configured list, or every retained trait.
    pub fn traits(&self) -> Result<Vec<String>> {
        let retained = self.dataset.metadata.retained_traits();
        if self.config.traits.is_empty() {
            for t in &retained {
                check_path_component(t)?;
            }
            return Ok(retained);
        }
        for t in &self.config.traits {
            if !retained.contains(t) {
                return Err(Error::Config(format!(
                    "trait {t:?} is not a retained trait of the dataset (retained: {})",
                    retained.join(", ")
                )));
            }
        }
        Ok(self.config.traits.clone())
    }

    pub fn provenance(&self, rule: &str) -> Provenance {
        Provenance::new(&self.reader.header().model_name, self.config.selection_protocol, rule)
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    /// Prepared splits of one trait, one per test prompt.
    pub fn splits(&self, trait_name: &str) -> Result<Vec<PreparedSplit>> {
        self.dataset
            .splits(trait_name, &self.config.excluded_train_prompts)?
            .iter()
            .map(|plan| {
                prepare_split(
                    &self.dataset,
                    self.reader.header(),
                    trait_name,
                    plan,
                    self.config.selection_protocol,
                )
            })
            .collect()
    }
}

fn audit(split: &PreparedSplit, selected: BestHead) -> SplitAudit {
    let mut train_prompts = BTreeMap::new();
    for p in &split.train_prompts {
        *train_prompts.entry(*p).or_insert(0) += 1;
    }
    SplitAudit {
        trait_name: split.trait_name.clone(),
        test_prompt: split.test.prompt,
        validation_prompt: split.validation.as_ref().map(|v| v.prompt),
        excluded_train_prompts: split.plan.excluded_train_prompts.iter().copied().collect(),
        train_prompts,
        n_train: split.train_rows.len(),
        n_test: split.test.rows.len(),
        n_validation: split.validation.as_ref().map_or(0, |v| v.rows.len()),
        selected_head: selected.into(),
    }
}

fn prompt_stem(dir: &Path, trait_name: &str, prompt: i64, suffix: &str) -> PathBuf {
    dir.join(trait_name).join(format!("prompt_{prompt}{suffix}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestHeadRow {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub test_prompt: i64,
    pub layer: usize,
    pub head: usize,
    pub qwk: f64,
    pub validation_prompt: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BestHeadsJson {
    kind: String,
    #[serde(flatten)]
    provenance: Provenance,
    rows: Vec<BestHeadRow>,
}

/// Results of [`cmd_sweep`], keyed by `(trait, test prompt)`.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub results: BTreeMap<(String, i64), SweepResult>,
    pub manifest: Manifest,
}

/// Sweeps every head for every `(trait, test prompt)` split and writes
/// grids, best heads, probes, PCA quick-looks and the run manifest.
pub fn cmd_sweep(config: RunConfig, workers: usize) -> Result<SweepOutcome> {
    let run = Run::open(config)?;
    let pool = create_pool(workers)?;
    let out = run.out().to_path_buf();
    let rule = match run.config.selection_protocol {
        Protocol::TestSetSelected => RULE_BEST_HEAD.to_string(),
        Protocol::HeldOut => format!("{RULE_BEST_HEAD}, on the validation prompt"),
    };
    let prov = run.provenance(&rule);
    let mut results = BTreeMap::new();
    let mut audits = Vec::new();
    let mut rows = Vec::new();
    for t in run.traits()? {
        for split in run.splits(&t)? {
            let result = sweep_heads(&run.reader, &split, &run.params, &pool)?;
            let selected = result.selected()?;
            let p = split.test.prompt;
            emit_head_heatmap(&result.test, p, selected, &prov, &prompt_stem(&out.join("grids"), &t, p, ""))?;
            if let Some(v) = &result.validation {
                let vbest = headprobe_core::grid::best_head(v)?;
                emit_head_heatmap(
                    v,
                    p,
                    vbest,
                    &prov,
                    &prompt_stem(&out.join("grids"), &t, p, "_validation"),
                )?;
            }
            let probe = fit_head(&run.reader, &split, selected.coord, &run.params)?;
            emit_probe(
                &probe,
                &run.params,
                &t,
                p,
                selected,
                &prov,
                &prompt_stem(&out.join("probes"), &t, p, ""),
            )?;
            let x = run.reader.load_last_tokens(selected.coord, Some(&split.test.rows))?;
            if x.rows() >= 2 {
                emit_pca(
                    &x,
                    &split.test.ids,
                    &split.test.labels,
                    selected,
                    &prov,
                    &prompt_stem(&out.join("pca"), &t, p, "").with_extension("json"),
                )?;
            }
            rows.push(BestHeadRow {
                trait_name: t.clone(),
                test_prompt: p,
                layer: selected.coord.layer,
                head: selected.coord.head,
                qwk: HeadRef::from(selected).qwk,
                validation_prompt: split.validation.as_ref().map(|v| v.prompt),
            });
            audits.push(audit(&split, selected));
            results.insert((t.clone(), p), result);
        }
    }
    write_best_heads(&out, &rows, &prov)?;
    let manifest = Manifest::new(
        "sweep",
        &run.config,
        run.dataset.merge_path,
        &rule,
        run.reader.header(),
        audits,
    );
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(SweepOutcome { results, manifest })
}

fn write_best_heads(out: &Path, rows: &[BestHeadRow], prov: &Provenance) -> Result<()> {
    let mut csv = String::from("trait,test_prompt,layer,head,qwk,validation_prompt\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.trait_name,
            r.test_prompt,
            r.layer,
            r.head,
            r.qwk,
            r.validation_prompt.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("best_heads.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    write_json(
        &out.join("best_heads.json"),
        &BestHeadsJson {
            kind: "best_heads".into(),
            provenance: prov.clone(),
            rows: rows.to_vec(),
        },
    )
}

/// Test grids (and validation grids under held-out) per trait and prompt,
/// read from a previous sweep or recomputed.
struct Grids {
    test: BTreeMap<String, BTreeMap<i64, HeadGrid>>,
    validation: BTreeMap<String, BTreeMap<i64, HeadGrid>>,
}

fn load_grid(dir: &Path, run: &Run, trait_name: &str, prompt: i64, suffix: &str) -> Result<HeadGrid> {
    let path = prompt_stem(&dir.join("grids"), trait_name, prompt, suffix).with_extension("json");
    if !path.is_file() {
        return Err(Error::Data(format!(
            "grid {} not found; run `headprobe sweep` with the same config first, or drop grids_dir to \
             recompute grids on demand",
            path.display()
        )));
    }
    let grid = read_heatmap_json(&path)?.to_grid()?;
    let h = run.reader.header();
    if (grid.n_layers, grid.n_heads) != (h.n_layers, h.n_heads) {
        return Err(Error::Data(format!(
            "grid {} is {}x{} but the dump has {}x{} heads",
            path.display(),
            grid.n_layers,
            grid.n_heads,
            h.n_layers,
            h.n_heads
        )));
    }
    if grid.probe_kind != run.config.probe_kind {
        return Err(Error::Config(format!(
            "grid {} was produced by the {} probe, config asks for {}",
            path.display(),
            grid.probe_kind.as_str(),
            run.config.probe_kind.as_str()
        )));
    }
    Ok(grid)
}

fn collect_grids(run: &Run, traits: &[String], workers: usize) -> Result<Grids> {
    let mut grids = Grids {
        test: BTreeMap::new(),
        validation: BTreeMap::new(),
    };
    let held_out = run.config.selection_protocol == Protocol::HeldOut;
    match &run.config.grids_dir {
        Some(dir) => {
            for t in traits {
                for p in run.dataset.prompts_for(t) {
                    grids.test.entry(t.clone()).or_default().insert(p, load_grid(dir, run, t, p, "")?);
                    if held_out {
                        grids
                            .validation
                            .entry(t.clone())
                            .or_default()
                            .insert(p, load_grid(dir, run, t, p, "_validation")?);
                    }
                }
            }
        }
        None => {
            let pool = create_pool(workers)?;
            for t in traits {
                for split in run.splits(t)? {
                    let r = sweep_heads(&run.reader, &split, &run.params, &pool)?;
                    let p = split.test.prompt;
                    grids.test.entry(t.clone()).or_default().insert(p, r.test);
                    if let Some(v) = r.validation {
                        grids.validation.entry(t.clone()).or_default().insert(p, v);
                    }
                }
            }
        }
    }
    Ok(grids)
}

#[derive(Clone, Debug)]
pub struct DirectionsOutcome {
    /// Trait-vs-trait matrices keyed by prompt.
    pub by_prompt: BTreeMap<i64, SimilarityJson>,
    /// Prompt-vs-prompt matrices keyed by trait.
    pub by_trait: BTreeMap<String, SimilarityJson>,
}

/// Per-prompt trait similarity and per-trait prompt similarity reports.
pub fn cmd_directions(config: RunConfig, workers: usize) -> Result<DirectionsOutcome> {
    let run = Run::open(config)?;
    let traits = run.traits()?;
    let grids = collect_grids(&run, &traits, workers)?;
    let dir = run.out().join("directions");
    let prov = run.provenance(RULE_BEST_AVERAGE);
    let mut outcome = DirectionsOutcome {
        by_prompt: BTreeMap::new(),
        by_trait: BTreeMap::new(),
    };
    let prompts: BTreeSet<i64> = grids.test.values().flat_map(|m| m.keys().copied()).collect();
    for p in prompts {
        let per_trait: BTreeMap<String, HeadGrid> = grids
            .test
            .iter()
            .filter_map(|(t, m)| m.get(&p).map(|g| (t.clone(), g.clone())))
            .collect();
        let a = trait_direction_analysis(&run.reader, &run.dataset, p, &per_trait)?;
        let json = emit_similarity_report(&a, &prov, &dir.join(format!("prompt_{p}_traits.json")))?;
        outcome.by_prompt.insert(p, json);
    }
    for (t, per_prompt) in &grids.test {
        let a = prompt_direction_analysis(&run.reader, &run.dataset, t, per_prompt)?;
        let json = emit_similarity_report(&a, &prov, &dir.join(format!("trait_{t}_prompts.json")))?;
        outcome.by_trait.insert(t.clone(), json);
    }
    let manifest = Manifest::new(
        "directions",
        &run.config,
        run.dataset.merge_path,
        RULE_BEST_AVERAGE,
        run.reader.header(),
        Vec::new(),
    );
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(outcome)
}

fn load_tokens(path: &Path, essay_id: &str, expected: usize) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
    let tokens = map
        .get(essay_id)
        .ok_or_else(|| Error::Data(format!("{}: no tokens for essay {essay_id:?}", path.display())))?;
    if tokens.len() != expected {
        return Err(Error::Data(format!(
            "{}: essay {essay_id:?} has {} tokens, the dump has {expected}",
            path.display(),
            tokens.len()
        )));
    }
    Ok(tokens.clone())
}

/// Token-level score colorings of one essay at the `top_k` best heads of its
/// prompt's grid, one report per head.
pub fn cmd_token_report(config: RunConfig, essay_id: &str, trait_name: &str, workers: usize) -> Result<Vec<TokenScoreReport>> {
    let header = read_header(&config.dump_path)?;
    if header.token_mode != TokenMode::All {
        return Err(Error::Data(format!(
            "token-report needs per-token activations, but {} was captured in LAST mode; \
             re-extract with the ALL token mode",
            config.dump_path.display()
        )));
    }
    check_path_component(essay_id)?;
    let run = Run::open(config)?;
    if !run.traits()?.iter().any(|t| t == trait_name) {
        return Err(Error::Config(format!("trait {trait_name:?} is not evaluated by this config")));
    }
    let record = run
        .dataset
        .by_id()
        .get(essay_id)
        .map(|r| (*r).clone())
        .ok_or_else(|| Error::NotFound(essay_id.to_string()))?;
    let prompt = record.prompt_id;
    let split = run
        .splits(trait_name)?
        .into_iter()
        .find(|s| s.test.prompt == prompt)
        .ok_or_else(|| {
            Error::Data(format!("essay {essay_id:?} belongs to prompt {prompt}, which has no {trait_name:?} split"))
        })?;
    let ranking_grid = match &run.config.grids_dir {
        Some(dir) => {
            let suffix = if run.config.selection_protocol == Protocol::HeldOut {
                "_validation"
            } else {
                ""
            };
            load_grid(dir, &run, trait_name, prompt, suffix)?
        }
        None => {
            let pool = create_pool(workers)?;
            let r = sweep_heads(&run.reader, &split, &run.params, &pool)?;
            r.validation.unwrap_or(r.test)
        }
    };
    let prov = match run.config.selection_protocol {
        Protocol::TestSetSelected => run.provenance(RULE_TOP_K),
        Protocol::HeldOut => run.provenance(&format!(
            "{RULE_TOP_K_VALIDATION} {}",
            split.validation.as_ref().map_or(prompt, |v| v.prompt)
        )),
    };
    let dir = run.out().join("token_reports").join(essay_id).join(trait_name);
    let n_tokens = run.reader.header().rows_of(
        run.reader
            .header()
            .example_index(essay_id)
            .ok_or_else(|| Error::NotFound(essay_id.to_string()))?,
    );
    let tokens = match &run.config.tokens_path {
        Some(p) => load_tokens(p, essay_id, n_tokens)?,
        None => (0..n_tokens).map(|i| format!("tok_{i}")).collect(),
    };
    let mut reports = Vec::new();
    for (rank, head) in top_k(&ranking_grid, run.config.top_k).into_iter().enumerate() {
        let probe = fit_head(&run.reader, &split, head.coord, &run.params)?;
        let series = run.reader.load_token_series(essay_id, head.coord)?;
        reports.push(emit_token_scores(
            &probe,
            &series,
            &tokens,
            essay_id,
            trait_name,
            prompt,
            rank + 1,
            head,
            &prov,
            &dir.join(format!("rank_{}.json", rank + 1)),
        )?);
    }
    Ok(reports)
}

pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    generate(spec, out_dir)
}

/// Human-readable summary of a dump header, followed by the sidecar JSON.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let header = read_header(path)?;
    let size_check = match DumpReader::open(path) {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("MISMATCH ({e})"),
    };
    let mut s = String::new();
    let _ = writeln!(s, "file:          {}", path.display());
    let _ = writeln!(s, "model:         {}", header.model_name);
    let _ = writeln!(s, "capture point: {}", header.capture_point);
    let _ = writeln!(
        s,
        "geometry:      {} layers x {} heads x {} dims",
        header.n_layers, header.n_heads, header.head_dim
    );
    let _ = writeln!(s, "token mode:    {:?}", header.token_mode);
    let _ = writeln!(s, "examples:      {}", header.n_examples());
    let _ = writeln!(s, "rows:          {}", header.total_rows());
    let _ = writeln!(s, "data bytes:    {}", header.data_bytes());
    let _ = writeln!(s, "size check:    {size_check}");
    for (k, v) in &header.attributes {
        let _ = writeln!(s, "attr {k}: {v}");
    }
    s.push_str(&serde_json::to_string_pretty(&header)?);
    s.push('\n');
    Ok(s)
}
