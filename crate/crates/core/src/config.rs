//! One bundle of every tunable the pipeline exposes, with the stock
//! defaults: similarity threshold 0.95, rank-1 merges, weighting
//! coefficients 0.7 / 0.3, one caption every 2 seconds.

use serde::{Deserialize, Serialize};

use crate::captions::{CaptionMode, QueryParser, RelevanceAggregation};
use crate::error::{Error, Result};
use crate::modulation::{ModulationConfig, VbarForm};
use crate::svc::{AnchorUpdate, SvcConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub theta: f64,
    pub rank_k: usize,
    pub anchor_update: AnchorUpdate,
    pub alpha1: f64,
    pub alpha2: f64,
    pub vbar_form: VbarForm,
    pub caption_interval_sec: f64,
    pub mode: CaptionMode,
    pub relevance_aggregation: RelevanceAggregation,
    pub query_parser: QueryParser,
    pub seed: u64,
    pub max_vector_slots: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: 0.95,
            rank_k: 1,
            anchor_update: AnchorUpdate::Compressed,
            alpha1: 0.7,
            alpha2: 0.3,
            vbar_form: VbarForm::Product,
            caption_interval_sec: 2.0,
            mode: CaptionMode::StorageEfficient,
            relevance_aggregation: RelevanceAggregation::Any,
            query_parser: QueryParser::Lexicon,
            seed: 0,
            max_vector_slots: 4096,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.svc()?;
        self.modulation()?;
        if !(self.caption_interval_sec.is_finite() && self.caption_interval_sec > 0.0) {
            return Err(Error::Config(format!(
                "caption_interval_sec must be positive, got {}",
                self.caption_interval_sec
            )));
        }
        if self.max_vector_slots == 0 {
            return Err(Error::Config("max_vector_slots must be at least 1".into()));
        }
        Ok(())
    }

    pub fn svc(&self) -> Result<SvcConfig> {
        Ok(SvcConfig::new(self.theta, self.rank_k)?.with_anchor_update(self.anchor_update))
    }

    pub fn modulation(&self) -> Result<ModulationConfig> {
        Ok(ModulationConfig::new(self.alpha1, self.alpha2)?.with_vbar(self.vbar_form))
    }
}
