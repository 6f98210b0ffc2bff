//! Experiment configuration: JSON with defaults, itemized validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Activation, ModelArch};
use crate::strategy::TaskProfile;
use crate::sysmodel::{Partition, SyntheticSpec, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Anycost,
    Fedavg,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anycost" => Ok(Mode::Anycost),
            "fedavg" => Ok(Mode::Fedavg),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// Hidden layers only; input and output sizes come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![32, 32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Idx(IdxSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.08,
            batch_size: 64,
            local_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub alpha_min: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            alpha_min: 0.25,
            beta_min: 1e-4,
            beta_max: 1.0 / 15.0,
        }
    }
}

/// Nominal task size used by the cost models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// workload units per training sample
    pub workload_per_sample: f64,
    /// uncompressed update size in bits
    pub update_bits: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            workload_per_sample: 4e7,
            update_bits: 111.7e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// multiply the optimal coefficients by shard sizes
    pub blend_data_sizes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub mode: Mode,
    pub arch: ArchConfig,
    pub dataset: DatasetSpec,
    pub partition: Partition,
    pub devices: usize,
    pub rounds: usize,
    pub training: TrainingConfig,
    pub bounds: BoundsConfig,
    pub task: TaskConfig,
    pub system: SystemConfig,
    pub aggregation: AggregationConfig,
    /// calibrated predictor file; the analytic plan is used when absent
    pub predictor: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            mode: Mode::Anycost,
            arch: ArchConfig::default(),
            dataset: DatasetSpec::default(),
            partition: Partition::Iid,
            devices: 60,
            rounds: 50,
            training: TrainingConfig::default(),
            bounds: BoundsConfig::default(),
            task: TaskConfig::default(),
            system: SystemConfig::default(),
            aggregation: AggregationConfig::default(),
            predictor: None,
        }
    }
}

/// Removes keys in `value` that `template` does not have, recording their paths.
fn strip_unknown_keys(value: &mut Value, template: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(v), Value::Object(t)) = (value, template) else {
        return;
    };
    v.retain(|key, child| {
        let p = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match t.get(key) {
            Some(tc) => {
                strip_unknown_keys(child, tc, &p, out);
                true
            }
            None => {
                out.push(format!("unknown key `{p}`"));
                false
            }
        }
    });
}

impl ExperimentConfig {
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(vec!["`seed` is required".into()]))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        if !value.is_object() {
            return Err(Error::Config(vec!["config must be a JSON object".into()]));
        }
        // template with every key, including the chosen dataset variant's
        let mut template = ExperimentConfig::default();
        if value.pointer("/dataset/kind").and_then(Value::as_str) == Some("idx") {
            template.dataset = DatasetSpec::Idx(IdxSpec {
                train_images: PathBuf::new(),
                train_labels: PathBuf::new(),
                test_images: PathBuf::new(),
                test_labels: PathBuf::new(),
            });
        }
        if value.pointer("/partition/mode").and_then(Value::as_str) == Some("noniid") {
            template.partition = Partition::Noniid { shards_per_device: 2 };
        }
        let mut errors = Vec::new();
        strip_unknown_keys(&mut value, &serde_json::to_value(&template)?, "", &mut errors);
        match serde_json::from_value::<Self>(value) {
            Ok(config) => {
                if let Err(Error::Config(mut more)) = config.validate() {
                    errors.append(&mut more);
                }
                if errors.is_empty() {
                    Ok(config)
                } else {
                    Err(Error::Config(errors))
                }
            }
            Err(e) => {
                if errors.is_empty() {
                    errors.push(e.to_string());
                }
                Err(Error::Config(errors))
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// All range violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        if self.seed.is_none() {
            e.push("`seed` is required".to_string());
        }
        if self.arch.hidden_sizes.contains(&0) {
            e.push("arch.hidden_sizes entries must be >= 1".into());
        }
        match &self.dataset {
            DatasetSpec::Synthetic(s) => {
                if s.classes < 2 {
                    e.push("dataset.classes must be >= 2".into());
                }
                if s.dim == 0 {
                    e.push("dataset.dim must be >= 1".into());
                }
                if s.train_size < self.devices {
                    e.push(format!(
                        "dataset.train_size {} is smaller than devices {}",
                        s.train_size, self.devices
                    ));
                }
                if s.test_size == 0 {
                    e.push("dataset.test_size must be >= 1".into());
                }
                if !(s.separation > 0.0) || !(s.noise > 0.0) {
                    e.push("dataset.separation and dataset.noise must be positive".into());
                }
            }
            DatasetSpec::Idx(_) => {}
        }
        if let Partition::Noniid { shards_per_device } = self.partition {
            if shards_per_device == 0 {
                e.push("partition.shards_per_device must be >= 1".into());
            }
        }
        if self.devices == 0 {
            e.push("devices must be >= 1".into());
        }
        if self.rounds == 0 {
            e.push("rounds must be >= 1".into());
        }
        let t = &self.training;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            e.push(format!("training.learning_rate must be positive, got {}", t.learning_rate));
        }
        if t.batch_size == 0 {
            e.push("training.batch_size must be >= 1".into());
        }
        if t.local_epochs == 0 {
            e.push("training.local_epochs must be >= 1".into());
        }
        let b = &self.bounds;
        if !(b.alpha_min > 0.0 && b.alpha_min <= 1.0) {
            e.push(format!("bounds.alpha_min must be in (0, 1], got {}", b.alpha_min));
        }
        if !(b.beta_min > 0.0 && b.beta_min <= 1.0) {
            e.push(format!("bounds.beta_min must be in (0, 1], got {}", b.beta_min));
        }
        if !(b.beta_max > 0.0 && b.beta_max <= 1.0) {
            e.push(format!("bounds.beta_max must be in (0, 1], got {}", b.beta_max));
        }
        if b.beta_min > b.beta_max {
            e.push("bounds.beta_min exceeds bounds.beta_max".into());
        }
        if !(self.task.workload_per_sample > 0.0 && self.task.workload_per_sample.is_finite()) {
            e.push("task.workload_per_sample must be positive".into());
        }
        if !(self.task.update_bits > 0.0 && self.task.update_bits.is_finite()) {
            e.push("task.update_bits must be positive".into());
        }
        self.system.validate(&mut e);
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }

    pub fn task_profile(&self) -> TaskProfile {
        TaskProfile {
            workload: self.task.workload_per_sample,
            update_bits: self.task.update_bits,
            tau: self.training.local_epochs,
        }
    }

    pub fn model_arch(&self, input_dim: usize, classes: usize) -> ModelArch {
        ModelArch {
            input_dim,
            hidden_sizes: self.arch.hidden_sizes.clone(),
            output_dim: classes,
            activation: self.arch.activation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 7, "arch": {"hidden_sizes": [16]}}"#).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.system.latency_budget_s, 10.0);
        assert_eq!(c.system.energy_budget_j, [3.0, 9.0]);
        assert_eq!(c.bounds.alpha_min, 0.25);
        assert_eq!(c.bounds.beta_max, 1.0 / 15.0);
        assert_eq!(c.devices, 60);
        assert_eq!(c.arch.hidden_sizes, vec![16]);
        assert_eq!(c.arch.activation, Activation::Relu);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let err = ExperimentConfig::from_json(r#"{"devices": 4}"#).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn errors_are_itemized() {
        let err = ExperimentConfig::from_json(
            r#"{"seed": 1, "bounds": {"alpha_min": 1.5, "beta_min": 0.5, "beta_max": 0.1}, "rounds": 0}"#,
        )
        .unwrap_err();
        let Error::Config(items) = err else { panic!() };
        assert_eq!(items.len(), 3, "{items:?}");
        assert!(items.iter().any(|i| i.contains("alpha_min")));

        let err = ExperimentConfig::from_json(r#"{"seed": 1, "bogus": 2, "system": {"radius": 3}}"#).unwrap_err();
        let Error::Config(items) = err else { panic!() };
        assert_eq!(items, vec!["unknown key `bogus`", "unknown key `system.radius`"]);
    }

    #[test]
    fn variants_parse() {
        let c = ExperimentConfig::from_json(
            r#"{"seed": 1, "mode": "fedavg", "partition": {"mode": "noniid", "shards_per_device": 2},
                "dataset": {"kind": "idx", "train_images": "a", "train_labels": "b", "test_images": "c", "test_labels": "d"}}"#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Fedavg);
        assert_eq!(c.partition, Partition::Noniid { shards_per_device: 2 });
        assert!(matches!(c.dataset, DatasetSpec::Idx(_)));
        assert!(ExperimentConfig::from_json(r#"{"seed": 1, "dataset": {"kind": "synthetic", "classes": 4, "extra": 1}}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"seed": 1, "dataset": {"kind": "synthetic", "classes": 4}}"#).unwrap();
        let DatasetSpec::Synthetic(s) = c.dataset else { panic!() };
        assert_eq!(s.classes, 4);
        assert_eq!(s.dim, SyntheticSpec::default().dim);
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig {
            seed: Some(42),
            ..ExperimentConfig::default()
        };
        c.bounds.beta_max = 0.1 + 0.2;
        c.system.energy_coeff = [5.5e-27, 9.1e-27];
        c.partition = Partition::Noniid { shards_per_device: 3 };
        c.predictor = Some("pred.json".into());
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn not_json() {
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json("[1]"), Err(Error::Config(_))));
    }
}
