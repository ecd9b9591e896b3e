//! Weighted loss composition and its serialisable report.

use crate::error::{Error, Result};
use crate::math::pairwise_sum;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Every loss term the toolkit can weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    L1,
    /// Supplied as `1 - SSIM`.
    Ssim,
    Normal,
    Stitch,
    Offset,
    Tv,
    Edge,
    Label,
    TvLabel,
    StitchLabel,
    Coll,
    Layer,
    Chamfer,
}

impl LossTerm {
    pub const ALL: [LossTerm; 13] = [
        LossTerm::L1,
        LossTerm::Ssim,
        LossTerm::Normal,
        LossTerm::Stitch,
        LossTerm::Offset,
        LossTerm::Tv,
        LossTerm::Edge,
        LossTerm::Label,
        LossTerm::TvLabel,
        LossTerm::StitchLabel,
        LossTerm::Coll,
        LossTerm::Layer,
        LossTerm::Chamfer,
    ];
}

/// Training stage: per-pixel labels are learned in the single-layer stage and
/// frozen in the multi-layer stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SingleLayer,
    MultiLayer,
}

impl Stage {
    pub fn admits(self, term: LossTerm) -> bool {
        use LossTerm::*;
        match term {
            L1 | Ssim | Normal | Stitch | Offset | Tv | Edge | Label => true,
            TvLabel | StitchLabel => self == Stage::SingleLayer,
            Coll | Layer | Chamfer => self == Stage::MultiLayer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub normal: f64,
    pub stitch: f64,
    pub offset: f64,
    pub tv: f64,
    pub edge: f64,
    pub label: f64,
    pub tv_label: f64,
    pub stitch_label: f64,
    pub l1: f64,
    pub ssim: f64,
    pub coll: f64,
    pub layer: f64,
    pub chamfer: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            normal: 0.1,
            stitch: 0.01,
            offset: 0.01,
            tv: 0.01,
            edge: 0.01,
            label: 0.1,
            tv_label: 0.01,
            stitch_label: 0.01,
            l1: 0.8,
            ssim: 0.2,
            coll: 1.0,
            layer: 1.0,
            chamfer: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        let mut w = Self::default();
        for t in LossTerm::ALL {
            *w.get_mut(t) = 0.0;
        }
        w
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        let mut copy = *self;
        *copy.get_mut(term)
    }

    pub fn get_mut(&mut self, term: LossTerm) -> &mut f64 {
        use LossTerm::*;
        match term {
            L1 => &mut self.l1,
            Ssim => &mut self.ssim,
            Normal => &mut self.normal,
            Stitch => &mut self.stitch,
            Offset => &mut self.offset,
            Tv => &mut self.tv,
            Edge => &mut self.edge,
            Label => &mut self.label,
            TvLabel => &mut self.tv_label,
            StitchLabel => &mut self.stitch_label,
            Coll => &mut self.coll,
            Layer => &mut self.layer,
            Chamfer => &mut self.chamfer,
        }
    }

    pub fn with(mut self, term: LossTerm, value: f64) -> Self {
        *self.get_mut(term) = value;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.get(t);
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!("loss weight {t:?} = {w}")));
            }
        }
        Ok(())
    }
}

/// Evaluated term values keyed by term.
pub type LossInputs = BTreeMap<LossTerm, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub term: LossTerm,
    pub value: f64,
    pub weight: f64,
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub stage: Stage,
    pub terms: Vec<ReportEntry>,
    pub total: f64,
}

impl LossReport {
    pub fn value(&self, term: LossTerm) -> Option<f64> {
        self.terms.iter().find(|e| e.term == term).map(|e| e.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Weighted sum of the supplied terms under a stage.
///
/// A term with positive weight that the stage admits must be supplied; a
/// supplied term the stage does not admit is rejected.
pub fn total_loss(inputs: &LossInputs, weights: &LossWeights, stage: Stage) -> Result<LossReport> {
    weights.validate()?;
    for (&term, &value) in inputs {
        if !stage.admits(term) {
            return Err(Error::Stage(format!("{term:?} is not part of the {stage:?} objective")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("{term:?} value {value}")));
        }
    }
    let mut terms = Vec::new();
    for term in LossTerm::ALL {
        let weight = weights.get(term);
        match inputs.get(&term) {
            Some(&value) => terms.push(ReportEntry {
                term,
                value,
                weight,
                weighted: weight * value,
            }),
            None if weight > 0.0 && stage.admits(term) => {
                return Err(Error::Stage(format!("{term:?} has weight {weight} but was not supplied")));
            }
            None => {}
        }
    }
    let weighted: Vec<f64> = terms.iter().map(|e| e.weighted).collect();
    Ok(LossReport {
        stage,
        total: pairwise_sum(&weighted),
        terms,
    })
}
