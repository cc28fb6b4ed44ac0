use serde::{Deserialize, Serialize};

use super::{
    one_stage_search, two_stage_search, Evaluator, RewardConfig, SearchError, SearchOutcome, SearchSpace,
    SyntheticCapacity,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    OneStage,
    #[default]
    TwoStage,
}

/// Evaluation budgets per phase. Defaults give both modes the same total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub coarse: usize,
    pub fine: usize,
    /// Budget of an extra variable-expansion phase after the fine phase;
    /// zero disables it.
    pub expansion: usize,
    pub one_stage: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            coarse: 2000,
            fine: 2000,
            expansion: 0,
            one_stage: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    SyntheticCapacity {
        #[serde(flatten)]
        params: SyntheticCapacity,
    },
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig::SyntheticCapacity {
            params: SyntheticCapacity::default(),
        }
    }
}

/// A complete, reproducible search description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SearchMode,
    pub space: SearchSpace,
    pub reward: RewardConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub budget: Budgets,
}

impl SearchConfig {
    pub fn from_toml(text: &str) -> Result<Self, SearchError> {
        let cfg: SearchConfig = toml::from_str(text).map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        let cfg: SearchConfig = serde_json::from_str(text).map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        self.space.validate()?;
        self.reward.validate()?;
        let OracleConfig::SyntheticCapacity { params } = &self.oracle;
        params.validate()
    }

    pub fn run(&self, mode: SearchMode) -> Result<SearchOutcome, SearchError> {
        self.validate()?;
        let OracleConfig::SyntheticCapacity { params } = &self.oracle;
        let eval = Evaluator {
            space: &self.space,
            oracle: params,
            reward: &self.reward,
        };
        match mode {
            SearchMode::OneStage => one_stage_search(&eval, self.budget.one_stage, self.seed),
            SearchMode::TwoStage => two_stage_search(&eval, &self.budget, self.seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::CostFn;

    const TOML: &str = r#"
seed = 7
mode = "one-stage"

[space]
name = "toy"
input_res = 32
stem_out = 8
fused_expanded = 16
fused_out = 8
head = [32, 64]
num_classes = 10

[[space.stages]]
depths = [1, 2]
filters = [16, 24, 32]
start_dw = [0, 3]
mid_dw = [0, 3]

[[space.stages]]
depths = [1, 2]
filters = [16, 24, 32]

[reward]
cost_target = 2e6
beta = -0.5
cost = { kind = "geo_mean", targets = [
  { name = "cpu", ridge_point = 5.0, peak_macs_per_sec = 1e10 },
  { name = "tpu", ridge_point = 400.0, peak_macs_per_sec = 1e12 },
] }

[oracle]
kind = "synthetic_capacity"
alpha = 1.0

[budget]
coarse = 50
fine = 50
one_stage = 100
"#;

    #[test]
    fn parses_toml() {
        let cfg = SearchConfig::from_toml(TOML).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, SearchMode::OneStage);
        assert_eq!(cfg.space.stages[1].start_dw.len(), 3);
        assert_eq!(cfg.space.stages[1].expansions, vec![4]);
        assert!(matches!(&cfg.reward.cost, CostFn::GeoMean { targets } if targets.len() == 2));
        let OracleConfig::SyntheticCapacity { params } = cfg.oracle;
        assert_eq!((params.alpha, params.gamma), (1.0, 0.3));
        assert_eq!(cfg.budget.expansion, 0);
        let out = cfg.run(cfg.mode).unwrap();
        assert_eq!(out.log.len(), 100);
    }

    #[test]
    fn json_round_trip() {
        let cfg = SearchConfig::from_toml(TOML).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(SearchConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_beta() {
        let bad = TOML.replace("seed = 7", "seed = 7\nfoo = 1");
        assert!(matches!(
            SearchConfig::from_toml(&bad),
            Err(SearchError::InvalidConfig(_))
        ));
        let bad = TOML.replace("beta = -0.5", "beta = 0.5");
        assert!(matches!(
            SearchConfig::from_toml(&bad),
            Err(SearchError::InvalidConfig(_))
        ));
    }
}
