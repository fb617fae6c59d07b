//! Run configuration, flag overrides and run manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use headprobe_core::grid::{ProbeKind, Protocol};
use headprobe_core::probe::FitParams;
use headprobe_core::{DumpHeader, MlpFitConfig, TokenMode, DEFAULT_LAMBDA};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::MergePath;
use crate::error::{Error, Result};
use crate::report::{HeadRef, QWK_ROUNDING, TOOL, VERSION};

fn default_probe() -> ProbeKind {
    ProbeKind::Ridge
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_protocol() -> Protocol {
    Protocol::TestSetSelected
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_top_k() -> usize {
    8
}

/// Everything a run depends on. Relative paths in a config file resolve
/// against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dump_path: PathBuf,
    pub dataset_path: PathBuf,
    pub metadata_path: PathBuf,
    /// Traits to evaluate; empty means every retained trait.
    #[serde(default)]
    pub traits: Vec<String>,
    #[serde(default = "default_probe")]
    pub probe_kind: ProbeKind,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
    #[serde(default)]
    pub ridge_bias: bool,
    /// MLP settings; its `seed` is replaced by the run seed.
    #[serde(default)]
    pub mlp: MlpFitConfig,
    #[serde(default)]
    pub excluded_train_prompts: BTreeSet<i64>,
    #[serde(default = "default_protocol")]
    pub selection_protocol: Protocol,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Existing sweep output to read grids from; grids are recomputed when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids_dir: Option<PathBuf>,
    /// JSON map from essay id to token strings, for token reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_path: Option<PathBuf>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dump_path: PathBuf::new(),
            dataset_path: PathBuf::new(),
            metadata_path: PathBuf::new(),
            traits: Vec::new(),
            probe_kind: default_probe(),
            ridge_lambda: default_lambda(),
            ridge_bias: false,
            mlp: MlpFitConfig::default(),
            excluded_train_prompts: BTreeSet::new(),
            selection_protocol: default_protocol(),
            output_dir: default_out(),
            seed: 0,
            grids_dir: None,
            tokens_path: None,
            top_k: default_top_k(),
        }
    }
}

/// Command-line values that replace config entries when present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub exclude_train_prompts: Vec<i64>,
    pub probe: Option<ProbeKind>,
    pub lambda: Option<f64>,
    pub protocol: Option<Protocol>,
    pub out: Option<PathBuf>,
    pub grids_dir: Option<PathBuf>,
    pub top_k: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_against(dir);
        }
        Ok(cfg)
    }

    fn resolve_against(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.dump_path);
        fix(&mut self.dataset_path);
        fix(&mut self.metadata_path);
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.grids_dir {
            fix(p);
        }
        if let Some(p) = &mut self.tokens_path {
            fix(p);
        }
    }

    /// Applies flag overrides; flags win over the file.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if !o.exclude_train_prompts.is_empty() {
            self.excluded_train_prompts = o.exclude_train_prompts.iter().copied().collect();
        }
        if let Some(p) = o.probe {
            self.probe_kind = p;
        }
        if let Some(l) = o.lambda {
            self.ridge_lambda = l;
        }
        if let Some(p) = o.protocol {
            self.selection_protocol = p;
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
        if let Some(p) = &o.grids_dir {
            self.grids_dir = Some(p.clone());
        }
        if let Some(k) = o.top_k {
            self.top_k = k;
        }
        self.mlp.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda > 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::Config(format!("ridge_lambda must be > 0, got {}", self.ridge_lambda)));
        }
        self.mlp
            .validate()
            .map_err(|e| Error::Config(format!("mlp: {e}")))?;
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        for (what, p) in [
            ("dump_path", &self.dump_path),
            ("dataset_path", &self.dataset_path),
            ("metadata_path", &self.metadata_path),
        ] {
            if !p.is_file() {
                return Err(Error::Config(format!("{what} {} does not exist", p.display())));
            }
        }
        for t in &self.traits {
            check_path_component(t)?;
        }
        Ok(())
    }

    pub fn fit_params(&self) -> FitParams {
        let mut mlp = self.mlp.clone();
        mlp.seed = self.seed;
        FitParams {
            kind: self.probe_kind,
            ridge_lambda: self.ridge_lambda,
            ridge_bias: self.ridge_bias,
            mlp,
        }
    }

    /// The config as recorded in manifests. The output location is left out
    /// so that runs written to different directories stay comparable.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.output_dir = PathBuf::from(".");
        c.mlp.seed = c.seed;
        c
    }

    /// SHA-256 of the effective config's JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.effective()).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Rejects names that cannot be used as a single path component.
pub fn check_path_component(name: &str) -> Result<()> {
    if name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\', '\0']) {
        return Err(Error::Config(format!("{name:?} cannot be used in an output path")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpSummary {
    pub model_name: String,
    pub capture_point: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub token_mode: TokenMode,
    pub n_examples: usize,
}

impl From<&DumpHeader> for DumpSummary {
    fn from(h: &DumpHeader) -> Self {
        Self {
            model_name: h.model_name.clone(),
            capture_point: h.capture_point.clone(),
            n_layers: h.n_layers,
            n_heads: h.n_heads,
            head_dim: h.head_dim,
            token_mode: h.token_mode,
            n_examples: h.n_examples(),
        }
    }
}

/// What went into the training set of one `(trait, test prompt)` split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub test_prompt: i64,
    pub validation_prompt: Option<i64>,
    pub excluded_train_prompts: Vec<i64>,
    /// Training essays per prompt.
    pub train_prompts: BTreeMap<i64, usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_validation: usize,
    pub selected_head: HeadRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub seed_rule: String,
    pub merge_path: MergePath,
    pub protocol: Protocol,
    pub selection_rule: String,
    pub qwk_rounding: String,
    pub dump: DumpSummary,
    pub splits: Vec<SplitAudit>,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: &RunConfig,
        merge_path: MergePath,
        selection_rule: &str,
        header: &DumpHeader,
        splits: Vec<SplitAudit>,
    ) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config: config.effective(),
            config_sha256: config.hash(),
            seed: config.seed,
            seed_rule: "MLP seed of each head = mix(seed, layer, head, test_prompt, fnv1a(trait)); ridge is deterministic"
                .into(),
            merge_path,
            protocol: config.selection_protocol,
            selection_rule: selection_rule.into(),
            qwk_rounding: QWK_ROUNDING.into(),
            dump: header.into(),
            splits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(
            &p,
            r#"{"dump_path":"a.dump","dataset_path":"e.tsv","metadata_path":"/abs/m.json",
                "seed":3,"excluded_train_prompts":[1],"selection_protocol":"test-set"}"#,
        )
        .unwrap();
        let mut c = RunConfig::load(&p).unwrap();
        assert_eq!(c.dump_path, dir.path().join("a.dump"));
        assert_eq!(c.metadata_path, PathBuf::from("/abs/m.json"));
        assert_eq!(c.ridge_lambda, 0.01);
        assert_eq!(c.selection_protocol, Protocol::TestSetSelected);
        c.apply(&Overrides {
            seed: Some(9),
            exclude_train_prompts: vec![7],
            protocol: Some(Protocol::HeldOut),
            ..Default::default()
        });
        assert_eq!(c.seed, 9);
        assert_eq!(c.mlp.seed, 9);
        assert_eq!(c.excluded_train_prompts, BTreeSet::from([7]));
        assert_eq!(c.selection_protocol, Protocol::HeldOut);
    }

    #[test]
    fn unknown_keys_and_bad_lambda_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"dump_path":"a","dataset_path":"b","metadata_path":"c","lamda":1}"#).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap_err().exit_code(), 2);
        let c = RunConfig {
            ridge_lambda: 0.0,
            ..RunConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), c.hash());
    }
}
