//! Deterministic synthetic two-domain benchmark. Each class is a periodic
//! impulse train at a class-specific fault frequency convolved with an
//! exponentially decaying sinusoid (a class-specific resonance ring-down),
//! plus Gaussian noise. The domain shift multiplies every frequency by a
//! speed factor and rescales the noise.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{standardize, DomainDataset, SignalSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub window_len: usize,
    /// Impulse spacing in samples for class 0; later classes scale by `period_step`.
    pub base_period: f64,
    pub period_step: f64,
    /// Resonance frequency in cycles/sample for class 0; later classes scale
    /// by `resonance_step`.
    pub resonance_base: f64,
    pub resonance_step: f64,
    /// Exponential decay rate of the ring-down, per sample, for class 0;
    /// later classes scale by `damping_step` (decay is a structural property
    /// and does not shift with speed).
    pub damping: f64,
    pub damping_step: f64,
    /// Impulse position jitter as a fraction of the period.
    pub impulse_jitter: f64,
    /// Relative impulse amplitude jitter.
    pub amplitude_jitter: f64,
    /// Source-domain noise standard deviation.
    pub noise_std: f64,
    pub standardize: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            class_count: 4,
            samples_per_class: 200,
            window_len: 512,
            base_period: 12.0,
            period_step: 2.5,
            resonance_base: 0.022,
            resonance_step: 2.5,
            damping: 0.05,
            damping_step: 1.5,
            impulse_jitter: 0.03,
            amplitude_jitter: 0.25,
            noise_std: 0.08,
            standardize: true,
        }
    }
}

/// Source-to-target distribution change.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainShift {
    /// Multiplies every frequency (shrinks periods, raises the resonance).
    pub speed_factor: f64,
    /// Multiplies the noise standard deviation.
    pub noise_scale: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        DomainShift {
            speed_factor: 1.35,
            noise_scale: 3.0,
        }
    }
}

const SOURCE_STREAM: u64 = 1000;
const TARGET_STREAM: u64 = 2000;

/// Generates the labeled source dataset and the target dataset (labels kept
/// for evaluation only). Fully determined by `seed`.
pub fn synth_benchmark(
    cfg: &SynthConfig,
    shift: &DomainShift,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if cfg.class_count < 2 {
        return Err(Error::Config(format!(
            "class_count {} must be >= 2",
            cfg.class_count
        )));
    }
    if cfg.samples_per_class < 50 {
        return Err(Error::Config(format!(
            "samples_per_class {} must be >= 50",
            cfg.samples_per_class
        )));
    }
    if cfg.window_len == 0 || cfg.base_period <= 0.0 || cfg.noise_std < 0.0 {
        return Err(Error::Config("synthetic generator counts must be positive".into()));
    }
    if shift.speed_factor <= 0.0 || shift.noise_scale <= 0.0 {
        return Err(Error::Config("domain shift factors must be positive".into()));
    }
    // the fastest shifted resonance must stay below Nyquist
    let top = cfg.resonance_base
        * cfg.resonance_step.powi(cfg.class_count as i32 - 1)
        * shift.speed_factor.max(1.0);
    if top >= 0.5 {
        return Err(Error::Config(format!(
            "highest resonance {top:.3} cycles/sample reaches Nyquist; lower resonance_base"
        )));
    }

    let source = generate_domain(cfg, 1.0, cfg.noise_std, seed, SOURCE_STREAM, "S")?;
    let target = generate_domain(
        cfg,
        shift.speed_factor,
        cfg.noise_std * shift.noise_scale,
        seed,
        TARGET_STREAM,
        "T",
    )?;
    Ok((source, target))
}

fn generate_domain(
    cfg: &SynthConfig,
    speed: f64,
    noise_std: f64,
    seed: u64,
    stream: u64,
    domain_id: &str,
) -> Result<DomainDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, noise_std.max(1e-12)).expect("valid noise std");
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");

    let mut samples = vec![];
    for class in 0..cfg.class_count {
        let period = cfg.base_period * cfg.period_step.powi(class as i32) / speed;
        let freq = cfg.resonance_base * cfg.resonance_step.powi(class as i32) * speed;
        let damping = cfg.damping * cfg.damping_step.powi(class as i32);
        let kernel = ring_down_kernel(freq, damping, cfg.window_len);
        // sparser trains hit harder and faster decays ring hotter, keeping
        // per-window signal energy roughly class-invariant
        let impulse_scale =
            ((period * speed / cfg.base_period) * (damping / cfg.damping)).sqrt();
        for i in 0..cfg.samples_per_class {
            let mut w = impulse_response_window(
                cfg.window_len,
                period,
                impulse_scale,
                cfg.impulse_jitter,
                cfg.amplitude_jitter,
                &kernel,
                &mut rng,
                &jitter,
            );
            for v in w.iter_mut() {
                *v += noise.sample(&mut rng);
            }
            if cfg.standardize {
                standardize(&mut w);
            }
            samples.push(SignalSample {
                waveform: w,
                label: Some(class),
                domain_id: domain_id.to_string(),
                source_file: format!("synth:{domain_id}:{class}:{i}"),
            });
        }
    }
    let ds = DomainDataset {
        samples,
        class_count: cfg.class_count,
        domain_id: domain_id.to_string(),
    };
    ds.validate()?;
    Ok(ds)
}

/// `exp(-damping t) sin(2 pi f t)`, truncated once the envelope is negligible.
fn ring_down_kernel(freq: f64, damping: f64, max_len: usize) -> Vec<f64> {
    let len = ((8.0 / damping.max(1e-6)).ceil() as usize).min(max_len);
    (0..len)
        .map(|t| {
            let t = t as f64;
            (-damping * t).exp() * (2.0 * std::f64::consts::PI * freq * t).sin()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn impulse_response_window(
    len: usize,
    period: f64,
    amp_scale: f64,
    pos_jitter: f64,
    amp_jitter: f64,
    kernel: &[f64],
    rng: &mut ChaCha8Rng,
    jitter: &Normal<f64>,
) -> Array1<f64> {
    let mut w = Array1::zeros(len);
    // impulses begin before the window so its start is not silent
    let phase: f64 = rng.random_range(0.0..period);
    let first = -((kernel.len() as f64 / period).ceil()) - 1.0;
    let last = (len as f64 / period).ceil() + 1.0;
    let mut k = first;
    while k <= last {
        let jitter_offset = jitter.sample(rng) * pos_jitter * period;
        let amp = amp_scale * (1.0 + amp_jitter * rng.random_range(-1.0..1.0));
        let pos = (phase + k * period + jitter_offset).round() as i64;
        for (j, &h) in kernel.iter().enumerate() {
            let t = pos + j as i64;
            if t >= 0 && (t as usize) < len {
                w[t as usize] += amp * h;
            }
        }
        k += 1.0;
    }
    w
}
