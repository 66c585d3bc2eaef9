//! Vibration datasets: fixed-length windowed samples, domain/task types,
//! loaders for the two public bearing benchmarks and a deterministic
//! synthetic benchmark.

pub mod jnu;
pub mod mat5;
pub mod pu;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// One fixed-length waveform window with optional label and provenance.
#[derive(Debug, Clone)]
pub struct SignalSample {
    pub waveform: Array1<f64>,
    pub label: Option<usize>,
    pub domain_id: String,
    pub source_file: String,
}

/// An immutable collection of samples from one operating condition.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub samples: Vec<SignalSample>,
    pub class_count: usize,
    pub domain_id: String,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.samples.first().map(|s| s.waveform.len()).unwrap_or(0)
    }

    /// Per-class sample counts; unlabeled samples are not counted.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for s in &self.samples {
            if let Some(y) = s.label {
                counts[y] += 1;
            }
        }
        counts
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.label.is_some())
    }

    /// All waveforms stacked into `[N, L]`.
    pub fn waveform_matrix(&self) -> Array2<f64> {
        let n = self.len();
        let l = self.window_len();
        let mut m = Array2::zeros((n, l));
        for (i, s) in self.samples.iter().enumerate() {
            m.row_mut(i).assign(&s.waveform);
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.window_len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.waveform.len() != l {
                return Err(Error::Data(format!(
                    "sample {i} has length {} but the dataset window is {l}",
                    s.waveform.len()
                )));
            }
            if s.waveform.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {i} contains non-finite values")));
            }
            if let Some(y) = s.label {
                if y >= self.class_count {
                    return Err(Error::Data(format!(
                        "sample {i} label {y} out of range [0,{})",
                        self.class_count
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A source->target adaptation task between two distinct domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferTask {
    pub source: String,
    pub target: String,
}

impl TransferTask {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Result<Self> {
        let task = TransferTask {
            source: source.into(),
            target: target.into(),
        };
        if task.source == task.target {
            return Err(Error::Config(format!(
                "task source and target are both {}",
                task.source
            )));
        }
        Ok(task)
    }
}

impl fmt::Display for TransferTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.target)
    }
}

impl FromStr for TransferTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (src, tgt) = s
            .split_once("->")
            .ok_or_else(|| Error::Config(format!("task '{s}' is not of the form SRC->TGT")))?;
        TransferTask::new(src.trim(), tgt.trim())
    }
}

/// Cuts a recording into consecutive non-overlapping windows
/// (stride = window length), keeping at most `cap` windows, ordered by offset.
pub fn window_recording(raw: &[f64], window_len: usize, cap: usize) -> Result<Vec<Array1<f64>>> {
    if window_len == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    if raw.len() < window_len {
        return Err(Error::Data(format!(
            "recording too short: {} points for a window of {window_len}",
            raw.len()
        )));
    }
    let count = (raw.len() / window_len).min(cap);
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * window_len;
        windows.push(Array1::from_iter(
            raw[start..start + window_len].iter().copied(),
        ));
    }
    Ok(windows)
}

/// In-place zero-mean/unit-variance; constant windows are left at zero mean.
pub fn standardize(w: &mut Array1<f64>) {
    let n = w.len() as f64;
    let mean = w.sum() / n;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    w.mapv_inplace(|v| (v - mean) / std);
}
