#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use headprobe::config::RunConfig;
use headprobe::synth::{generate, Planted, SynthOutput, SynthPrompt, SynthSpec};
use headprobe_core::{HeadCoord, TokenMode, TraitRange};

pub fn range(prompt: i64, name: &str, lo: i64, hi: i64) -> TraitRange {
    TraitRange::new(prompt, name, lo, hi).unwrap()
}

pub fn spec(
    geometry: (usize, usize, usize),
    prompts: &[(i64, usize)],
    ranges: Vec<TraitRange>,
    planted: Vec<Planted>,
    seed: u64,
) -> SynthSpec {
    SynthSpec {
        model_name: "synthetic".into(),
        n_layers: geometry.0,
        n_heads: geometry.1,
        head_dim: geometry.2,
        prompts: prompts
            .iter()
            .map(|&(id, n_essays)| SynthPrompt { id, n_essays })
            .collect(),
        ranges,
        planted,
        background_sigma: 1.0,
        seed,
        token_mode: TokenMode::Last,
        tokens_per_essay: [4, 12],
    }
}

pub fn planted(coord: HeadCoord, trait_name: &str, prompt: Option<i64>, direction: Option<Vec<f64>>, sigma: f64) -> Planted {
    Planted {
        layer: coord.layer,
        head: coord.head,
        trait_name: trait_name.into(),
        prompt,
        direction,
        sigma,
    }
}

pub fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// Generates `spec` into `dir/data` and returns the synth output plus its run
/// config with the output directory set to `out`.
pub fn synth_run(dir: &Path, spec: &SynthSpec, out: &Path) -> (SynthOutput, RunConfig) {
    let o = generate(spec, &dir.join("data")).unwrap();
    let mut cfg = RunConfig::load(&o.run_config).unwrap();
    cfg.output_dir = out.to_path_buf();
    (o, cfg)
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
