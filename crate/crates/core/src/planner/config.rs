use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kinematics::{ControlLimits, CostWeights};
use crate::multitree::{MultiTreeConfig, SubtreeMode};
use crate::sampler::{RegionMode, SamplerConfig};
use crate::world::RiskModel;

/// The five planner variants, each adding one capability to the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Risk,
    Bi,
    Multi,
    Nmr,
    Namr,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Risk, Variant::Bi, Variant::Multi, Variant::Nmr, Variant::Namr];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Risk => "RISK",
            Variant::Bi => "BI",
            Variant::Multi => "MULTI",
            Variant::Nmr => "NMR",
            Variant::Namr => "NAMR",
        }
    }

    pub fn features(self) -> Features {
        let (subtrees, region) = match self {
            Variant::Risk => (SubtreeMode::None, RegionMode::None),
            Variant::Bi => (SubtreeMode::GoalOnly, RegionMode::None),
            Variant::Multi => (SubtreeMode::Multi, RegionMode::None),
            Variant::Nmr => (SubtreeMode::Multi, RegionMode::Fixed),
            Variant::Namr => (SubtreeMode::Multi, RegionMode::Adaptive),
        };
        Features { subtrees, region }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected one of RISK, BI, MULTI, NMR, NAMR)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Features {
    pub subtrees: SubtreeMode,
    pub region: RegionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub variant: Variant,
    /// Overrides the capabilities implied by `variant`.
    pub features: Option<Features>,
    /// Scenario overrides.
    pub dt: Option<f64>,
    pub epsilon: Option<f64>,
    pub horizon_depth: Option<usize>,
    pub p_max: f64,
    pub robot_radius: f64,
    pub limits: ControlLimits,
    pub weights: CostWeights,
    pub risk: RiskModel,
    pub sampler: SamplerConfig,
    pub multitree: MultiTreeConfig,
    /// Root-tree extension attempts per cycle.
    pub cycle_budget: usize,
    /// Simulated seconds before giving up.
    pub timeout: f64,
    pub seed: u64,
    /// Keep a per-sample trace in the outcome.
    pub record_samples: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            variant: Variant::Namr,
            features: None,
            dt: None,
            epsilon: None,
            horizon_depth: None,
            p_max: 0.1,
            robot_radius: 0.2,
            limits: ControlLimits::default(),
            weights: CostWeights::default(),
            risk: RiskModel::default(),
            sampler: SamplerConfig::default(),
            multitree: MultiTreeConfig::default(),
            cycle_budget: 60,
            timeout: 240.0,
            seed: 0,
            record_samples: false,
        }
    }
}

impl PlannerConfig {
    pub fn features(&self) -> Features {
        self.features.unwrap_or_else(|| self.variant.features())
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err("p_max must lie in (0, 1)".into());
        }
        if !(self.robot_radius > 0.0) {
            return Err("robot_radius must be > 0".into());
        }
        if self.dt.is_some_and(|d| !(d > 0.0)) || self.epsilon.is_some_and(|e| !(e > 0.0)) {
            return Err("dt and epsilon overrides must be > 0".into());
        }
        if self.horizon_depth == Some(0) {
            return Err("horizon_depth must be >= 1".into());
        }
        if self.cycle_budget == 0 {
            return Err("cycle_budget must be >= 1".into());
        }
        if !(self.timeout > 0.0) {
            return Err("timeout must be > 0".into());
        }
        if !(self.risk.sigma > 0.0) {
            return Err("risk.sigma must be > 0".into());
        }
        self.limits.validate()?;
        self.sampler.validate()?;
        self.multitree.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.name().to_lowercase().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("fast".parse::<Variant>().is_err());
    }

    #[test]
    fn variants_nest() {
        let f: Vec<_> = Variant::ALL.iter().map(|v| v.features()).collect();
        assert_eq!(f[0].subtrees, SubtreeMode::None);
        assert_eq!(f[1].subtrees, SubtreeMode::GoalOnly);
        assert!(f[2..].iter().all(|x| x.subtrees == SubtreeMode::Multi));
        assert!(f[..3].iter().all(|x| x.region == RegionMode::None));
        assert_eq!(f[3].region, RegionMode::Fixed);
        assert_eq!(f[4].region, RegionMode::Adaptive);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<PlannerConfig>(r#"{"pmax": 0.2}"#).is_err());
        let cfg: PlannerConfig = serde_json::from_str(r#"{"variant": "BI", "seed": 4}"#).unwrap();
        assert_eq!(cfg.variant, Variant::Bi);
        assert_eq!(cfg.cycle_budget, 60);
        cfg.validate().unwrap();
        let bad = PlannerConfig {
            cycle_budget: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
