//! Seeded synthetic dumps with planted linear signal.
//!
//! A planted head carries `Σ normalized_score · w*` plus Gaussian noise for
//! every planted entry that applies to the essay; all other heads are pure
//! Gaussian noise.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use headprobe_core::probe::mix_seed;
use headprobe_core::{DType, DumpHeader, HeadCoord, TokenMode, TraitRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{ColumnMap, DatasetMetadata};
use crate::error::{Error, Result};
use crate::report::write_json;
use crate::store::DumpWriter;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPrompt {
    pub id: i64,
    pub n_essays: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub layer: usize,
    pub head: usize,
    #[serde(rename = "trait")]
    pub trait_name: String,
    /// Restricts the signal to one prompt; `None` plants it in every prompt.
    #[serde(default)]
    pub prompt: Option<i64>,
    /// Planted direction; drawn at random (unit norm) when absent.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    pub sigma: f64,
}

impl Planted {
    pub fn coord(&self) -> HeadCoord {
        HeadCoord::new(self.layer, self.head)
    }

    fn applies(&self, prompt: i64) -> bool {
        self.prompt.is_none_or(|p| p == prompt)
    }
}

fn default_model() -> String {
    "synthetic".into()
}

fn default_sigma() -> f64 {
    1.0
}

fn default_tokens() -> [usize; 2] {
    [4, 12]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_model")]
    pub model_name: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub prompts: Vec<SynthPrompt>,
    /// Per-(prompt, trait) score ranges; traits are taken from here.
    pub ranges: Vec<TraitRange>,
    #[serde(default)]
    pub planted: Vec<Planted>,
    /// Standard deviation of the non-planted heads.
    #[serde(default = "default_sigma")]
    pub background_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_token_mode")]
    pub token_mode: TokenMode,
    /// Inclusive range of token counts per essay in ALL mode.
    #[serde(default = "default_tokens")]
    pub tokens_per_essay: [usize; 2],
}

fn default_token_mode() -> TokenMode {
    TokenMode::Last
}

impl SynthSpec {
    /// A one-trait spec with a single planted head.
    #[allow(clippy::too_many_arguments)]
    pub fn planted_single(
        n_layers: usize,
        n_heads: usize,
        head_dim: usize,
        prompts: &[(i64, usize)],
        range: (i64, i64),
        planted: HeadCoord,
        sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            model_name: default_model(),
            n_layers,
            n_heads,
            head_dim,
            prompts: prompts
                .iter()
                .map(|&(id, n_essays)| SynthPrompt { id, n_essays })
                .collect(),
            ranges: prompts
                .iter()
                .map(|&(id, _)| TraitRange {
                    prompt_id: id,
                    trait_name: "holistic".into(),
                    min_score: range.0,
                    max_score: range.1,
                })
                .collect(),
            planted: vec![Planted {
                layer: planted.layer,
                head: planted.head,
                trait_name: "holistic".into(),
                prompt: None,
                direction: None,
                sigma,
            }],
            background_sigma: 1.0,
            seed,
            token_mode: TokenMode::Last,
            tokens_per_essay: default_tokens(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth spec: {m}")));
        if self.n_layers == 0 || self.n_heads == 0 || self.head_dim == 0 {
            return bad("geometry must be non-zero".into());
        }
        let mut ids = BTreeSet::new();
        for p in &self.prompts {
            if !ids.insert(p.id) {
                return bad(format!("prompt {} listed twice", p.id));
            }
            if p.n_essays == 0 {
                return bad(format!("prompt {} has no essays", p.id));
            }
        }
        if ids.is_empty() {
            return bad("no prompts".into());
        }
        let mut seen = BTreeSet::new();
        for r in &self.ranges {
            r.validate()?;
            if !ids.contains(&r.prompt_id) {
                return bad(format!("range for unknown prompt {}", r.prompt_id));
            }
            if !seen.insert((r.prompt_id, r.trait_name.clone())) {
                return bad(format!("duplicate range for prompt {} trait {:?}", r.prompt_id, r.trait_name));
            }
        }
        if !(self.background_sigma >= 0.0 && self.background_sigma.is_finite()) {
            return bad("background_sigma must be finite and non-negative".into());
        }
        for p in &self.planted {
            if p.layer >= self.n_layers || p.head >= self.n_heads {
                return bad(format!("planted head {} is out of bounds", p.coord()));
            }
            if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
                return bad(format!("planted head {} has invalid sigma {}", p.coord(), p.sigma));
            }
            if !self.ranges.iter().any(|r| r.trait_name == p.trait_name) {
                return bad(format!("planted trait {:?} has no ranges", p.trait_name));
            }
            if let Some(q) = p.prompt {
                if !ids.contains(&q) {
                    return bad(format!("planted prompt {q} is not a prompt"));
                }
            }
            if let Some(d) = &p.direction {
                if d.len() != self.head_dim {
                    return bad(format!(
                        "planted direction has length {}, head_dim is {}",
                        d.len(),
                        self.head_dim
                    ));
                }
                if !d.iter().all(|v| v.is_finite()) || d.iter().all(|&v| v == 0.0) {
                    return bad("planted direction must be finite and non-zero".into());
                }
            }
        }
        let [lo, hi] = self.tokens_per_essay;
        if lo == 0 || lo > hi {
            return bad("tokens_per_essay must be [min, max] with 1 <= min <= max".into());
        }
        Ok(())
    }

    fn traits(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.ranges.iter().map(|r| r.trait_name.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }
}

/// One generated essay.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthEssay {
    pub id: String,
    pub prompt: i64,
    pub scores: BTreeMap<String, i64>,
    pub tokens: Vec<String>,
}

/// Paths written by [`generate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthOutput {
    pub dump: PathBuf,
    pub essays: PathBuf,
    pub metadata: PathBuf,
    pub tokens: Option<PathBuf>,
    pub run_config: PathBuf,
    /// Directions actually planted, in spec order.
    #[serde(skip)]
    pub directions: Vec<Vec<f64>>,
}

const VOCAB: &[&str] = &[
    "the", "essay", "argues", "that", "students", "should", "because", "however", "evidence", "shows",
    "computers", "help", "people", "learn", "and", "write", "clearly", ".", ",", "in",
];

fn rng_for(seed: u64, salt: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, salt))
}

fn essays(spec: &SynthSpec) -> Vec<SynthEssay> {
    let mut rng = rng_for(spec.seed, &[0]);
    let [lo, hi] = spec.tokens_per_essay;
    let mut out = Vec::new();
    for p in &spec.prompts {
        let ranges: Vec<&TraitRange> = spec.ranges.iter().filter(|r| r.prompt_id == p.id).collect();
        for i in 0..p.n_essays {
            let scores = ranges
                .iter()
                .map(|r| (r.trait_name.clone(), rng.random_range(r.min_score..=r.max_score)))
                .collect();
            let n_tok = match spec.token_mode {
                TokenMode::Last => 0,
                TokenMode::All => rng.random_range(lo..=hi),
            };
            let tokens = (0..n_tok)
                .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string())
                .collect();
            out.push(SynthEssay {
                id: format!("p{}_e{i:04}", p.id),
                prompt: p.id,
                scores,
                tokens,
            });
        }
    }
    out
}

fn planted_directions(spec: &SynthSpec) -> Vec<Vec<f64>> {
    spec.planted
        .iter()
        .enumerate()
        .map(|(i, p)| match &p.direction {
            Some(d) => d.clone(),
            None => {
                let mut rng = rng_for(spec.seed, &[2, i as u64]);
                let v: Vec<f64> = (0..spec.head_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            }
        })
        .collect()
}

fn write_table(path: &Path, spec: &SynthSpec, essays: &[SynthEssay]) -> Result<()> {
    let traits = spec.traits();
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut header = vec!["essay_id".to_string(), "prompt_id".into(), "essay".into()];
    header.extend(traits.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for e in essays {
        let text = if e.tokens.is_empty() {
            format!("synthetic essay {}", e.id)
        } else {
            e.tokens.join(" ")
        };
        let mut row = vec![e.id.clone(), e.prompt.to_string(), text];
        row.extend(traits.iter().map(|t| e.scores.get(t).map(|s| s.to_string()).unwrap_or_default()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn metadata(spec: &SynthSpec) -> DatasetMetadata {
    let traits = spec.traits();
    let excluded_traits = traits
        .iter()
        .filter(|t| spec.ranges.iter().filter(|r| &r.trait_name == *t).count() < 2)
        .cloned()
        .collect();
    DatasetMetadata {
        prompts: spec.prompts.iter().map(|p| p.id).collect(),
        traits: traits.clone(),
        excluded_traits,
        ranges: spec.ranges.clone(),
        columns: ColumnMap {
            id: "essay_id".into(),
            prompt: "prompt_id".into(),
            text: "essay".into(),
            traits: traits.iter().map(|t| (t.clone(), t.clone())).collect(),
        },
        supplement: None,
    }
}

/// Writes `activations.dump` (plus sidecar), `essays.tsv`, `metadata.json`,
/// `tokens.json` in ALL mode, and a `run.json` config pointing at them.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let essays = essays(spec);
    let directions = planted_directions(spec);
    let range_of: BTreeMap<(i64, &str), &TraitRange> = spec
        .ranges
        .iter()
        .map(|r| ((r.prompt_id, r.trait_name.as_str()), r))
        .collect();

    let header = DumpHeader {
        model_name: spec.model_name.clone(),
        capture_point: "synthetic".into(),
        n_layers: spec.n_layers,
        n_heads: spec.n_heads,
        head_dim: spec.head_dim,
        token_mode: spec.token_mode,
        dtype: DType::F32LE,
        example_ids: essays.iter().map(|e| e.id.clone()).collect(),
        token_counts: match spec.token_mode {
            TokenMode::Last => None,
            TokenMode::All => Some(essays.iter().map(|e| e.tokens.len()).collect()),
        },
        attributes: vec![
            ("generator".into(), "synth".into()),
            ("seed".into(), spec.seed.to_string()),
        ],
    };
    let dump = out_dir.join("activations.dump");
    let mut writer = DumpWriter::create(&dump, header)?;
    let mut buf = vec![0f32; spec.head_dim];
    for layer in 0..spec.n_layers {
        for head in 0..spec.n_heads {
            let coord = HeadCoord::new(layer, head);
            let here: Vec<(usize, &Planted)> =
                spec.planted.iter().enumerate().filter(|(_, p)| p.coord() == coord).collect();
            let mut rng = rng_for(spec.seed, &[1, layer as u64, head as u64]);
            for (ei, e) in essays.iter().enumerate() {
                let signal: Vec<f64> = {
                    let mut s = vec![0.0; spec.head_dim];
                    for (pi, p) in &here {
                        if !p.applies(e.prompt) {
                            continue;
                        }
                        let Some(&raw) = e.scores.get(&p.trait_name) else { continue };
                        let y = range_of[&(e.prompt, p.trait_name.as_str())].normalize(raw)?;
                        for (si, di) in s.iter_mut().zip(&directions[*pi]) {
                            *si += y * di;
                        }
                    }
                    s
                };
                let applicable: Vec<f64> = here
                    .iter()
                    .filter(|(_, p)| p.applies(e.prompt))
                    .map(|(_, p)| p.sigma * p.sigma)
                    .collect();
                let sigma = if applicable.is_empty() {
                    spec.background_sigma
                } else {
                    applicable.iter().sum::<f64>().sqrt()
                };
                for t in 0..e.tokens.len().max(1) {
                    for (slot, s) in buf.iter_mut().zip(&signal) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *slot = (s + sigma * z) as f32;
                    }
                    writer.write(ei, t, coord, &buf)?;
                }
            }
        }
    }
    writer.finish()?;

    let essays_path = out_dir.join("essays.tsv");
    write_table(&essays_path, spec, &essays)?;
    let metadata_path = out_dir.join("metadata.json");
    write_json(&metadata_path, &metadata(spec))?;
    let tokens = match spec.token_mode {
        TokenMode::Last => None,
        TokenMode::All => {
            let map: BTreeMap<&str, &Vec<String>> = essays.iter().map(|e| (e.id.as_str(), &e.tokens)).collect();
            let p = out_dir.join("tokens.json");
            write_json(&p, &map)?;
            Some(p)
        }
    };
    let run = RunConfig {
        dump_path: "activations.dump".into(),
        dataset_path: "essays.tsv".into(),
        metadata_path: "metadata.json".into(),
        tokens_path: tokens.as_ref().map(|_| "tokens.json".into()),
        seed: spec.seed,
        output_dir: "run".into(),
        ..RunConfig::default()
    };
    let run_config = out_dir.join("run.json");
    write_json(&run_config, &run)?;
    Ok(SynthOutput {
        dump,
        essays: essays_path,
        metadata: metadata_path,
        tokens,
        run_config,
        directions,
    })
}
