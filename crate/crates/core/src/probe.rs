//! Dispatch over the two probe families.

use alloc::vec::Vec;

use crate::grid::ProbeKind;
use crate::linalg::Matrix;
use crate::mlp::{fit_mlp, MlpFitConfig, MlpProbe};
use crate::ridge::{fit_ridge, RidgeProbe};
use crate::{Result, DEFAULT_LAMBDA};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitParams {
    pub kind: ProbeKind,
    pub ridge_lambda: f64,
    /// Append an intercept column before the ridge solve.
    pub ridge_bias: bool,
    pub mlp: MlpFitConfig,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Ridge,
            ridge_lambda: DEFAULT_LAMBDA,
            ridge_bias: false,
            mlp: MlpFitConfig::default(),
        }
    }
}

impl FitParams {
    /// Copy whose MLP seed is mixed with `salt`, so that independent fits
    /// (one per head, prompt, trait) get independent generators.
    pub fn salted(&self, salt: &[u64]) -> Self {
        let mut p = self.clone();
        p.mlp.seed = mix_seed(self.mlp.seed, salt);
        p
    }
}

/// SplitMix64-based seed derivation.
pub fn mix_seed(seed: u64, salt: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x6a09_e667_f3bc_c909);
    for &s in salt {
        h = splitmix(h ^ s);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Probe {
    Ridge(RidgeProbe),
    Mlp(MlpProbe),
}

impl Probe {
    pub fn fit(x: &Matrix, y: &[f64], params: &FitParams) -> Result<Self> {
        match params.kind {
            ProbeKind::Ridge => {
                fit_ridge(x, y, params.ridge_lambda, params.ridge_bias).map(Probe::Ridge)
            }
            ProbeKind::Mlp => fit_mlp(x, y, &params.mlp).map(|(p, _)| Probe::Mlp(p)),
        }
    }

    pub fn kind(&self) -> ProbeKind {
        match self {
            Probe::Ridge(_) => ProbeKind::Ridge,
            Probe::Mlp(_) => ProbeKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Probe::Ridge(p) => p.input_dim(),
            Probe::Mlp(p) => p.input_dim(),
        }
    }

    /// Predictions clipped to `[0, 1]`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            Probe::Ridge(p) => p.predict(x),
            Probe::Mlp(p) => p.predict(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn salted_seeds_differ() {
        let p = FitParams::default();
        let a = p.salted(&[0, 1]).mlp.seed;
        let b = p.salted(&[1, 0]).mlp.seed;
        assert_ne!(a, b);
        assert_eq!(a, p.salted(&[0, 1]).mlp.seed);
    }

    #[test]
    fn dispatch() {
        let x = Matrix::identity(2);
        let p = Probe::fit(&x, &[0.5, 0.25], &FitParams::default()).unwrap();
        assert_eq!(p.kind(), ProbeKind::Ridge);
        assert_eq!(p.input_dim(), 2);
        assert_eq!(p.predict(&x).unwrap().len(), 2);
    }
}
