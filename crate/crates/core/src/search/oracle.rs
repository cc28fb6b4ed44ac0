use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::cost::CostReport;
use crate::ir::NetworkSpec;
use crate::latency::LatencyMatrix;

/// Stand-in for trained accuracy.
pub trait QualityOracle: Sync {
    fn quality(&self, net: &NetworkSpec, cost: &CostReport) -> Result<f64, SearchError>;
}

/// `alpha * ln(params) + gamma * ln(macs) + delta * ln(1 + #blocks with a DW)`.
///
/// All three coefficients are non-negative, so adding a block never lowers
/// the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCapacity {
    #[serde(default = "SyntheticCapacity::default_alpha")]
    pub alpha: f64,
    #[serde(default = "SyntheticCapacity::default_gamma")]
    pub gamma: f64,
    #[serde(default = "SyntheticCapacity::default_delta")]
    pub delta: f64,
}

impl SyntheticCapacity {
    fn default_alpha() -> f64 {
        0.6
    }
    fn default_gamma() -> f64 {
        0.3
    }
    fn default_delta() -> f64 {
        0.1
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if [self.alpha, self.gamma, self.delta]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(SearchError::InvalidConfig(
                "synthetic_capacity coefficients must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn score(&self, net: &NetworkSpec, cost: &CostReport) -> f64 {
        let dw_blocks = net.blocks.iter().filter(|b| b.has_depthwise()).count();
        self.alpha * (cost.total_params.max(1) as f64).ln()
            + self.gamma * (cost.total_macs.max(1) as f64).ln()
            + self.delta * (1.0 + dw_blocks as f64).ln()
    }
}

impl Default for SyntheticCapacity {
    fn default() -> Self {
        Self {
            alpha: Self::default_alpha(),
            gamma: Self::default_gamma(),
            delta: Self::default_delta(),
        }
    }
}

impl QualityOracle for SyntheticCapacity {
    fn quality(&self, net: &NetworkSpec, cost: &CostReport) -> Result<f64, SearchError> {
        Ok(self.score(net, cost))
    }
}

/// Published top-1 accuracies looked up by network name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableLookup {
    top1: HashMap<String, f64>,
}

impl TableLookup {
    pub fn from_matrix(m: &LatencyMatrix) -> Self {
        let top1 = m
            .models
            .iter()
            .zip(&m.accuracy)
            .filter_map(|(name, acc)| acc.map(|a| (name.clone(), a)))
            .collect();
        Self { top1 }
    }

    pub fn bundled() -> Self {
        Self::from_matrix(&LatencyMatrix::bundled())
    }

    pub fn lookup(&self, name: &str) -> Result<f64, SearchError> {
        self.top1
            .get(name)
            .copied()
            .ok_or_else(|| SearchError::UnknownModel(name.to_string()))
    }
}

impl QualityOracle for TableLookup {
    fn quality(&self, net: &NetworkSpec, _cost: &CostReport) -> Result<f64, SearchError> {
        self.lookup(&net.name)
    }
}
