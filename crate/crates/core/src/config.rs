//! Resolved lab configuration: TOML sections, dotted-key overrides,
//! validation and a stable hash.

use crate::detector::{DetectorConfig, OracleMode};
use crate::error::{LabError, Result};
use crate::grounding::SelectorConfig;
use crate::io::sha256_hex;
use crate::updn::UpDnConfig;
use crate::world::{SplitSizes, WorldConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SplitSizes::default();
        DataConfig {
            seed: 1,
            train: s.train,
            val: s.val,
            test: s.test,
        }
    }
}

impl DataConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }
}

/// Confidence-ranked, question-independent object selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub theta_c: f64,
    pub k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { theta_c: 0.2, k: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// First reasoner seed; studies use `seed..seed + n`.
    pub seed: u64,
    /// Seeds per point for the ablations and the grounded comparison.
    pub seeds: usize,
    pub sweep_seeds: usize,
    pub sweep_ks: Vec<usize>,
    pub quality_modes: Vec<String>,
    /// Smallest baseline budget in the grounded comparison.
    pub small_k: usize,
    pub selector_seed: u64,
    /// Split used for evaluation: "val" or "test".
    pub eval_split: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            seeds: 5,
            sweep_seeds: 10,
            sweep_ks: vec![1, 2, 4, 8, 12, 16, 24],
            quality_modes: ["baseline", "gt-box", "gt-box+onehot", "gt-box-perturbed", "gt-box-perturbed+refeature"]
                .map(String::from)
                .to_vec(),
            small_k: 2,
            selector_seed: 0,
            eval_split: "val".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    pub data: DataConfig,
    pub world: WorldConfig,
    pub detector: DetectorConfig,
    pub baseline: BaselineConfig,
    pub updn: UpDnConfig,
    pub selector: SelectorConfig,
    pub experiment: ExperimentConfig,
}

fn invalid(key: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return Err(invalid("data.train", "every split needs at least one instance"));
        }
        self.world.validate()?;
        self.detector.validate()?;
        if !(0.0..=1.0).contains(&self.baseline.theta_c) {
            return Err(invalid("baseline.theta_c", "must be in [0, 1]"));
        }
        if self.baseline.k == 0 {
            return Err(invalid("baseline.k", "must be positive"));
        }
        self.updn.validate()?;
        self.selector.validate()?;
        let e = &self.experiment;
        if e.seeds == 0 {
            return Err(invalid("experiment.seeds", "must be positive"));
        }
        if e.sweep_seeds == 0 {
            return Err(invalid("experiment.sweep_seeds", "must be positive"));
        }
        if e.sweep_ks.is_empty() || e.sweep_ks.contains(&0) || !e.sweep_ks.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("experiment.sweep_ks", "must be positive and strictly ascending"));
        }
        if e.small_k == 0 {
            return Err(invalid("experiment.small_k", "must be positive"));
        }
        for m in &e.quality_modes {
            if m != "baseline" && OracleMode::parse(m).is_none() {
                return Err(invalid("experiment.quality_modes", format!("unknown mode `{m}`")));
            }
        }
        if e.eval_split != "val" && e.eval_split != "test" {
            return Err(invalid("experiment.eval_split", "must be `val` or `test`"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<LabConfig> {
        let cfg: LabConfig = toml::from_str(text).map_err(|e| invalid(&error_key(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `section.key=value` overrides; values use TOML syntax, with a
    /// bare word taken as a string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<LabConfig> {
        let mut root = toml::Table::try_from(self).map_err(|e| LabError::Format(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| invalid(o, "override must look like section.key=value"))?;
            let key = key.trim();
            let value = parse_value(raw.trim());
            let mut path: Vec<&str> = key.split('.').collect();
            let last = path.pop().filter(|l| !l.is_empty()).ok_or_else(|| invalid(key, "empty key"))?;
            let mut table = &mut root;
            for part in &path {
                table = table
                    .get_mut(*part)
                    .and_then(|v| v.as_table_mut())
                    .ok_or_else(|| invalid(key, "unknown section"))?;
            }
            let slot = table.get_mut(last).ok_or_else(|| invalid(key, "unknown key"))?;
            *slot = value;
        }
        let text = toml::to_string(&root).map_err(|e| LabError::Format(e.to_string()))?;
        let cfg: LabConfig = toml::from_str(&text).map_err(|e| {
            let k = overrides
                .iter()
                .filter_map(|o| o.split_once('=').map(|(k, _)| k.trim().to_string()))
                .next_back()
                .unwrap_or_default();
            invalid(&k, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short hash of the canonical serialized configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        sha256_hex(text.as_bytes())[..16].to_string()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "config".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_and_validates() {
        let c = LabConfig::default();
        c.validate().unwrap();
        let back = LabConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = LabConfig::from_toml("[baseline]\ntheta_c = 0.3\nk = 4\n").unwrap();
        assert_eq!(c.baseline.k, 4);
        assert_eq!(c.selector, SelectorConfig::default());
    }

    #[test]
    fn overrides_apply_and_name_bad_keys() {
        let c = LabConfig::default()
            .with_overrides(&["selector.w_pos=10".into(), "experiment.eval_split=test".into()])
            .unwrap();
        assert_eq!(c.selector.w_pos, 10.0);
        assert_eq!(c.experiment.eval_split, "test");
        assert_ne!(c.hash(), LabConfig::default().hash());
        match LabConfig::default().with_overrides(&["selector.nope=1".into()]) {
            Err(LabError::Config { key, .. }) => assert_eq!(key, "selector.nope"),
            other => panic!("{other:?}"),
        }
        match LabConfig::default().with_overrides(&["selector.nms2=1.5".into()]) {
            Err(LabError::Config { key, .. }) => assert_eq!(key, "selector.nms2"),
            other => panic!("{other:?}"),
        }
        match LabConfig::default().with_overrides(&["updn.epochs=abc".into()]) {
            Err(LabError::Config { key, .. }) => assert_eq!(key, "updn.epochs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_section_in_file_rejected() {
        assert!(matches!(
            LabConfig::from_toml("[bogus]\nx = 1\n"),
            Err(LabError::Config { .. })
        ));
    }
}
