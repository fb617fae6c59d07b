//! Score ranges and the mapping between raw integer scores and `[0, 1]`.

use alloc::string::String;

use crate::{Error, Result};

/// Inclusive raw-score range of one trait under one prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraitRange {
    pub prompt_id: i64,
    #[cfg_attr(feature = "serde", serde(rename = "trait"))]
    pub trait_name: String,
    pub min_score: i64,
    pub max_score: i64,
}

impl TraitRange {
    pub fn new(prompt_id: i64, trait_name: impl Into<String>, min_score: i64, max_score: i64) -> Result<Self> {
        let r = Self {
            prompt_id,
            trait_name: trait_name.into(),
            min_score,
            max_score,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_score >= self.max_score {
            return Err(Error::DegenerateRange {
                min: self.min_score,
                max: self.max_score,
            });
        }
        Ok(())
    }

    /// Number of distinct integer scores.
    pub fn levels(&self) -> usize {
        (self.max_score - self.min_score + 1) as usize
    }

    pub fn contains(&self, raw: i64) -> bool {
        (self.min_score..=self.max_score).contains(&raw)
    }

    pub fn check(&self, raw: i64) -> Result<()> {
        if self.contains(raw) {
            Ok(())
        } else {
            Err(Error::ScoreOutOfRange {
                raw,
                min: self.min_score,
                max: self.max_score,
            })
        }
    }

    /// `(raw − min) / (max − min)`.
    pub fn normalize(&self, raw: i64) -> Result<f64> {
        self.check(raw)?;
        Ok((raw - self.min_score) as f64 / (self.max_score - self.min_score) as f64)
    }

    /// Linear rescale back to the raw scale, rounded half-up.
    pub fn denormalize_and_round(&self, yhat: f64) -> Result<i64> {
        if !(0.0..=1.0).contains(&yhat) {
            return Err(Error::PredictionOutOfUnit(yhat));
        }
        let span = (self.max_score - self.min_score) as f64;
        let v = libm::floor(yhat * span + 0.5) as i64 + self.min_score;
        Ok(v.clamp(self.min_score, self.max_score))
    }
}
