//! Run configuration: every knob of the pipeline lives here, is serializable
//! to TOML, and is hashed so each run directory is self-describing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::synth::{DomainShift, SynthConfig};
use crate::error::{Error, Result};
use crate::network::EncoderConfig;

/// Which benchmark a run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Pu,
    Jnu,
    Synth,
}

impl DatasetKind {
    pub fn domains(&self) -> &'static [&'static str] {
        match self {
            DatasetKind::Pu => &["A1", "A2", "A3"],
            DatasetKind::Jnu => &["B1", "B2", "B3"],
            DatasetKind::Synth => &["S", "T"],
        }
    }
}

/// Top-level experiment description: dataset, transfer tasks, seeds, output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub dataset: DatasetKind,
    /// Transfer tasks, e.g. `"A1->A2"`. Defaults to the full matrix of the dataset.
    pub tasks: Vec<String>,
    /// Seeds averaged per table cell; one run per (task, seed).
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Fraction of the target held out for evaluation; 0 keeps the
    /// transductive convention (evaluate on the full adaptation pool).
    pub eval_holdout: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            dataset: DatasetKind::Synth,
            tasks: vec![],
            seeds: vec![0],
            output_dir: PathBuf::from("runs/run"),
            eval_holdout: 0.0,
        }
    }
}

/// On-disk data locations and windowing parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub pu_root: Option<PathBuf>,
    pub jnu_root: Option<PathBuf>,
    /// Window length L; every sample waveform has exactly this many points.
    pub window_len: usize,
    /// Maximum windows kept per class.
    pub per_class_cap: usize,
    /// Vibration channel name selected from PU container files.
    pub channel: String,
    /// Zero-mean/unit-variance each window at load time.
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            pu_root: None,
            jnu_root: None,
            window_len: 2048,
            per_class_cap: 2000,
            channel: "vibration_1".to_string(),
            standardize: true,
        }
    }
}

/// Hyperparameters of source pre-training and target adaptation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptSection {
    /// Label smoothing coefficient.
    pub alpha: f64,
    /// Repulsion weight in the cohesion/repulsion loss.
    pub beta: f64,
    /// Cosine-similarity threshold for reliable pseudo-labels.
    pub threshold: f64,
    pub batch: usize,
    pub eval_batch: usize,
    pub source_lr: f64,
    pub source_epochs: usize,
    pub target_lr: f64,
    pub target_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Refresh pseudo-labels every N epochs; 0 = label once before epoch 0 only.
    pub refresh_every: usize,
    pub seed: u64,
    /// Fraction of the window zeroed by the masking augmentation.
    pub zero_fraction: f64,
    /// Flip = amplitude negation instead of time reversal.
    pub flip_negate: bool,
    /// L2-normalize features before inner products in the cohesion/repulsion loss.
    pub car_normalize: bool,
    /// Keep classifier head parameters fixed during adaptation.
    pub freeze_classifier: bool,
    /// Module switches for the ablation ladder.
    pub voting: bool,
    pub car: bool,
    pub uem: bool,
    /// Evaluate on the target set after every adaptation epoch (costs one eval pass).
    pub eval_every_epoch: bool,
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection {
            alpha: 0.1,
            beta: 0.6,
            threshold: 0.6,
            batch: 64,
            eval_batch: 256,
            source_lr: 7e-3,
            source_epochs: 10,
            target_lr: 5e-4,
            target_epochs: 20,
            momentum: 0.9,
            weight_decay: 1e-3,
            refresh_every: 1,
            seed: 0,
            zero_fraction: 0.1,
            flip_negate: false,
            car_normalize: true,
            freeze_classifier: true,
            voting: true,
            car: true,
            uem: true,
            eval_every_epoch: true,
        }
    }
}

/// Hyperparameter sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Beta,
    Threshold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    pub beta_values: Vec<f64>,
    pub threshold_values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: None,
            beta_values: (1..=10).map(|i| i as f64 / 10.0).collect(),
            threshold_values: (0..10).map(|i| 0.50 + 0.05 * i as f64).collect(),
        }
    }
}

/// The full resolved configuration of a run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub synth_shift: DomainShift,
    pub model: EncoderConfig,
    pub adapt: AdaptSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    /// Defaults tuned for the deterministic synthetic benchmark: short windows
    /// and a narrow encoder so a full adaptation finishes in minutes on a CPU.
    pub fn synth_default() -> Self {
        let mut cfg = RunConfig::default();
        cfg.experiment.dataset = DatasetKind::Synth;
        cfg.data.window_len = cfg.synth.window_len;
        cfg.model = EncoderConfig::small(cfg.synth.window_len);
        cfg.adapt.source_epochs = 8;
        cfg.adapt.target_epochs = 6;
        cfg
    }

    /// Defaults for a dataset kind; PU/JNU use the full-size encoder.
    pub fn default_for(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::Synth => RunConfig::synth_default(),
            other => {
                let mut cfg = RunConfig::default();
                cfg.experiment.dataset = other;
                cfg
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the fully resolved config (all defaults embedded).
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Tasks to run: configured list, or the full six-task matrix of the dataset.
    pub fn resolved_tasks(&self) -> Result<Vec<crate::dataset::TransferTask>> {
        let domains = self.experiment.dataset.domains();
        let list: Vec<String> = if self.experiment.tasks.is_empty() {
            let mut v = vec![];
            for s in domains {
                for t in domains {
                    if s != t {
                        v.push(format!("{s}->{t}"));
                    }
                }
            }
            v
        } else {
            self.experiment.tasks.clone()
        };
        list.iter()
            .map(|spec| {
                let task: crate::dataset::TransferTask = spec.parse()?;
                for d in [&task.source, &task.target] {
                    if !domains.contains(&d.as_str()) {
                        return Err(Error::Config(format!(
                            "task {spec}: domain {d} not valid for {:?}",
                            self.experiment.dataset
                        )));
                    }
                }
                Ok(task)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adapt;
        if !(a.alpha >= 0.0 && a.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside [0,1)", a.alpha)));
        }
        if a.beta <= 0.0 {
            return Err(Error::Config(format!("beta {} must be > 0", a.beta)));
        }
        if !(a.threshold > 0.0 && a.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0,1)",
                a.threshold
            )));
        }
        if !(a.zero_fraction > 0.0 && a.zero_fraction < 1.0) {
            return Err(Error::Config(format!(
                "zero_fraction {} outside (0,1)",
                a.zero_fraction
            )));
        }
        for (name, v) in [
            ("source_lr", a.source_lr),
            ("target_lr", a.target_lr),
            ("batch", a.batch as f64),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("seeds list is empty".into()));
        }
        if !(0.0..1.0).contains(&self.experiment.eval_holdout) {
            return Err(Error::Config(format!(
                "eval_holdout {} outside [0,1)",
                self.experiment.eval_holdout
            )));
        }
        self.resolved_tasks()?;
        self.model.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; stored with every artifact.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex_string(&digest)
    }

    /// Hash over only the inputs that determine a trained source model, so
    /// ablation rows and sweeps can share source checkpoints.
    pub fn source_hash(&self) -> String {
        let key = serde_json::json!({
            "dataset": self.experiment.dataset,
            "data": &self.data,
            "synth": &self.synth,
            "synth_shift": &self.synth_shift,
            "model": &self.model,
            "batch": self.adapt.batch,
            "source_lr": self.adapt.source_lr,
            "source_epochs": self.adapt.source_epochs,
            "momentum": self.adapt.momentum,
            "weight_decay": self.adapt.weight_decay,
            "seed": self.adapt.seed,
        });
        hex_string(&Sha256::digest(key.to_string().as_bytes()))
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_hash() {
        let cfg = RunConfig::synth_default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn default_matrix_has_six_tasks() {
        let mut cfg = RunConfig::default();
        cfg.experiment.dataset = DatasetKind::Pu;
        let tasks = cfg.resolved_tasks().unwrap();
        assert_eq!(tasks.len(), 6);
        assert_eq!(tasks[0].to_string(), "A1->A2");
    }

    #[test]
    fn invalid_threshold_rejected() {
        let mut cfg = RunConfig::synth_default();
        cfg.adapt.threshold = 1.2;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_defaults_match_protocol() {
        let s = SweepSection::default();
        assert_eq!(s.beta_values.len(), 10);
        assert!((s.beta_values[0] - 0.1).abs() < 1e-12);
        assert!((s.beta_values[9] - 1.0).abs() < 1e-12);
        assert_eq!(s.threshold_values.len(), 10);
        assert!((s.threshold_values[9] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn task_domain_validation() {
        let mut cfg = RunConfig::synth_default();
        cfg.experiment.tasks = vec!["A1->A2".into()];
        assert!(cfg.validate().is_err());
        cfg.experiment.tasks = vec!["S->T".into()];
        assert!(cfg.validate().is_ok());
    }
}
