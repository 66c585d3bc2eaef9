//! The 1-D residual feature encoder and weight-normalized classifier head,
//! plus binary checkpoint I/O.
//!
//! Encoder layout: conv stem (kernel 7, stride 2) + BN, four residual stages
//! of two basic blocks each, global average pooling, dropout, and a
//! fully-connected bottleneck with batch norm producing the feature vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::nn::{BatchNorm1d, Conv1d, Dropout, GlobalAvgPool, Linear, ParamSlot, Relu, Visit, WnLinear};

/// Stage strides are fixed; channel widths and window length are knobs so the
/// synthetic benchmark can run a narrow profile of the same architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub window_len: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub feature_dim: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            window_len: 2048,
            stem_channels: 64,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            feature_dim: 256,
            dropout: 0.1,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Narrow profile for desk-scale runs; same topology, fewer channels.
    pub fn small(window_len: usize) -> Self {
        EncoderConfig {
            window_len,
            stem_channels: 8,
            stage_channels: vec![8, 16, 32, 64],
            ..EncoderConfig::default()
        }
    }

    pub fn stage_strides(&self) -> Vec<usize> {
        let mut strides = vec![1];
        strides.resize(self.stage_channels.len(), 2);
        strides
    }

    /// Total temporal downsampling factor (stem stride times stage strides).
    pub fn downsample_factor(&self) -> usize {
        2 * self.stage_strides().iter().product::<usize>()
    }

    /// Temporal length after the stem and after each stage.
    pub fn stage_lengths(&self) -> Vec<usize> {
        let mut lengths = vec![self.window_len / 2];
        let mut l = self.window_len / 2;
        for s in self.stage_strides() {
            l /= s;
            lengths.push(l);
        }
        lengths
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::Config("blocks_per_stage must be >= 1".into()));
        }
        let factor = self.downsample_factor();
        if self.window_len == 0 || self.window_len % factor != 0 {
            return Err(Error::Config(format!(
                "window_len {} must be a positive multiple of {factor}",
                self.window_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Two 3x3 convolutions with batch norm and a residual connection; the
/// shortcut becomes a strided 1x1 conv + BN when shape changes.
#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv1d,
    bn1: BatchNorm1d,
    relu1: Relu,
    conv2: Conv1d,
    bn2: BatchNorm1d,
    relu2: Relu,
    shortcut: Option<(Conv1d, BatchNorm1d)>,
}

impl BasicBlock {
    fn new(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        bn_eps: f64,
        bn_momentum: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = Conv1d::new(in_channels, out_channels, 3, stride, 1, rng);
        let conv2 = Conv1d::new(out_channels, out_channels, 3, 1, 1, rng);
        let shortcut = if stride != 1 || in_channels != out_channels {
            Some((
                Conv1d::new(in_channels, out_channels, 1, stride, 0, rng),
                BatchNorm1d::new(out_channels, bn_eps, bn_momentum),
            ))
        } else {
            None
        };
        BasicBlock {
            conv1,
            bn1: BatchNorm1d::new(out_channels, bn_eps, bn_momentum),
            relu1: Relu::default(),
            conv2,
            bn2: BatchNorm1d::new(out_channels, bn_eps, bn_momentum),
            relu2: Relu::default(),
            shortcut,
        }
    }

    fn forward_t(&mut self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let identity = match &mut self.shortcut {
            Some((conv, bn)) => bn.forward3_t(&conv.forward_t(x)?),
            None => x.clone(),
        };
        let h = self.relu1.forward_t(&self.bn1.forward3_t(&self.conv1.forward_t(x)?));
        let h = self.bn2.forward3_t(&self.conv2.forward_t(&h)?);
        Ok(self.relu2.forward_t(&(h + &identity)))
    }

    fn forward_e(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let identity = match &self.shortcut {
            Some((conv, bn)) => bn.forward3_e(&conv.forward_e(x)?),
            None => x.clone(),
        };
        let h = Relu::forward_e(&self.bn1.forward3_e(&self.conv1.forward_e(x)?));
        let h = self.bn2.forward3_e(&self.conv2.forward_e(&h)?);
        Ok(Relu::forward_e(&(h + &identity)))
    }

    fn backward(&mut self, grad_out: &Array3<f64>) -> Array3<f64> {
        let g_sum = self.relu2.backward(grad_out);
        let g = self.bn2.backward3(&g_sum);
        let g = self.conv2.backward(&g);
        let g = self.relu1.backward(&g);
        let g = self.bn1.backward3(&g);
        let g_main = self.conv1.backward(&g);
        let g_short = match &mut self.shortcut {
            Some((conv, bn)) => conv.backward(&bn.backward3(&g_sum)),
            None => g_sum,
        };
        g_main + g_short
    }
}

impl Visit for BasicBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'_>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.bn1.visit_params(&format!("{prefix}.bn1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.bn2.visit_params(&format!("{prefix}.bn2"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_params(&format!("{prefix}.shortcut.conv"), f);
            bn.visit_params(&format!("{prefix}.shortcut.bn"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    stem_conv: Conv1d,
    stem_bn: BatchNorm1d,
    blocks: Vec<BasicBlock>,
    pool: GlobalAvgPool,
    dropout: Dropout,
    bottleneck: Linear,
    bottleneck_bn: BatchNorm1d,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let stem_conv = Conv1d::new(1, cfg.stem_channels, 7, 2, 3, rng);
        let stem_bn = BatchNorm1d::new(cfg.stem_channels, cfg.bn_eps, cfg.bn_momentum);
        let mut blocks = vec![];
        let mut in_ch = cfg.stem_channels;
        for (&out_ch, &stride) in cfg.stage_channels.iter().zip(cfg.stage_strides().iter()) {
            for block in 0..cfg.blocks_per_stage {
                let s = if block == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(in_ch, out_ch, s, cfg.bn_eps, cfg.bn_momentum, rng));
                in_ch = out_ch;
            }
        }
        let bottleneck = Linear::new(in_ch, cfg.feature_dim, rng);
        let bottleneck_bn = BatchNorm1d::new(cfg.feature_dim, cfg.bn_eps, cfg.bn_momentum);
        let dropout = Dropout::new(cfg.dropout);
        Ok(Encoder {
            cfg,
            stem_conv,
            stem_bn,
            blocks,
            pool: GlobalAvgPool::default(),
            dropout,
            bottleneck,
            bottleneck_bn,
        })
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.shape()[1] != self.cfg.window_len {
            return Err(Error::Shape(format!(
                "expected waveforms of length {}, got {}",
                self.cfg.window_len,
                x.shape()[1]
            )));
        }
        Ok(())
    }

    /// Training forward: `[B, L] -> [B, feature_dim]`, caching for backward.
    pub fn forward_t(&mut self, x: &Array2<f64>, rng: &mut impl Rng) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let x3 = x.clone().insert_axis(Axis(1));
        let mut h = self.stem_bn.forward3_t(&self.stem_conv.forward_t(&x3)?);
        for block in &mut self.blocks {
            h = block.forward_t(&h)?;
        }
        let pooled = self.pool.forward_t(&h);
        let dropped = self.dropout.forward_t(&pooled, rng);
        let feat = self.bottleneck.forward_t(&dropped);
        Ok(self.bottleneck_bn.forward2_t(&feat))
    }

    /// Inference forward: pure function of (parameters, input).
    pub fn forward_e(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let x3 = x.clone().insert_axis(Axis(1));
        let mut h = self.stem_bn.forward3_e(&self.stem_conv.forward_e(&x3)?);
        for block in &self.blocks {
            h = block.forward_e(&h)?;
        }
        let pooled = GlobalAvgPool::forward_e(&h);
        let feat = self.bottleneck.forward_e(&Dropout::forward_e(&pooled));
        Ok(self.bottleneck_bn.forward2_e(&feat))
    }

    pub fn backward(&mut self, grad_features: &Array2<f64>) {
        let g = self.bottleneck_bn.backward2(grad_features);
        let g = self.bottleneck.backward(&g);
        let g = self.dropout.backward(&g);
        let mut g3 = self.pool.backward(&g);
        for block in self.blocks.iter_mut().rev() {
            g3 = block.backward(&g3);
        }
        let g3 = self.stem_bn.backward3(&g3);
        let _ = self.stem_conv.backward(&g3);
    }
}

impl Visit for Encoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'_>)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.stem_conv.visit_params(&p("stem.conv"), f);
        self.stem_bn.visit_params(&p("stem.bn"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&p(&format!("block{i}")), f);
        }
        self.bottleneck.visit_params(&p("bottleneck.fc"), f);
        self.bottleneck_bn.visit_params(&p("bottleneck.bn"), f);
    }
}

/// Checkpoint provenance recorded alongside the parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dataset: String,
    pub domain: String,
    pub config_hash: String,
    pub epoch: usize,
}

/// Feature encoder plus classifier head.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub classifier: WnLinear,
    pub class_count: usize,
    pub meta: CheckpointMeta,
}

impl Model {
    pub fn new(cfg: EncoderConfig, class_count: usize, rng: &mut impl Rng) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Config(format!("class_count {class_count} must be >= 2")));
        }
        let encoder = Encoder::new(cfg.clone(), rng)?;
        let classifier = WnLinear::new(cfg.feature_dim, class_count, rng);
        Ok(Model {
            encoder,
            classifier,
            class_count,
            meta: CheckpointMeta::default(),
        })
    }

    /// Deep copy for target adaptation; updates to the copy never touch the
    /// source parameters.
    pub fn init_target_from_source(&self) -> Model {
        self.clone()
    }

    /// `[B, L] -> [B, feature_dim]`, eval mode.
    pub fn forward_features(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let feats = self.encoder.forward_e(batch)?;
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite features".into()));
        }
        Ok(feats)
    }

    /// `[B, L] -> [B, C]` class probabilities, eval mode.
    pub fn forward_probs(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let feats = self.forward_features(batch)?;
        Ok(softmax(&self.classifier.forward_e(&feats)))
    }

    pub fn visit_all(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        self.encoder.visit_params("encoder", f);
        self.classifier.visit_params("classifier", f);
    }

    /// Visits trainable parameters; the classifier is skipped when frozen.
    pub fn visit_trainable(&mut self, include_classifier: bool, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        let mut adapter = |slot: ParamSlot<'_>| {
            if slot.trainable {
                let grad = slot.grad.expect("trainable param has grad");
                f(slot.value, grad);
            }
        };
        self.encoder.visit_params("encoder", &mut adapter);
        if include_classifier {
            self.classifier.visit_params("classifier", &mut adapter);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_all(&mut |slot| {
            if let Some(g) = slot.grad {
                g.fill(0.0);
            }
        });
    }

    /// Concatenated copy of every parameter and buffer, for state comparisons.
    pub fn state_vector(&mut self) -> Vec<f64> {
        let mut out = vec![];
        self.visit_all(&mut |slot| out.extend_from_slice(slot.value));
        out
    }

    pub fn classifier_state(&mut self) -> Vec<f64> {
        let mut out = vec![];
        self.classifier.visit_params("classifier", &mut |slot: ParamSlot<'_>| {
            out.extend_from_slice(slot.value)
        });
        out
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut manifest = vec![];
        let mut data: Vec<f64> = vec![];
        self.visit_all(&mut |slot| {
            manifest.push(ManifestEntry {
                name: slot.name.clone(),
                shape: slot.shape.clone(),
                trainable: slot.trainable,
            });
            data.extend_from_slice(slot.value);
        });
        let header = CheckpointHeader {
            meta: self.meta.clone(),
            encoder: self.encoder.cfg.clone(),
            class_count: self.class_count,
            manifest,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("serialize header: {e}")))?;

        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&(header_json.len() as u64).to_le_bytes())?;
            w.write_all(&header_json)?;
            for v in &data {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; MAGIC.len()];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if magic != *MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a model checkpoint",
                path.display()
            )));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        r.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader = serde_json::from_slice(&header_json)
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(header.encoder.clone(), header.class_count, &mut rng)?;
        model.meta = header.meta.clone();

        let mut values: Vec<f64> = vec![];
        let mut buf = [0u8; 8];
        loop {
            match r.read_exact(&mut buf) {
                Ok(()) => values.push(f64::from_le_bytes(buf)),
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(Error::io(path, e)),
            }
        }

        let mut offset = 0usize;
        let mut index = 0usize;
        let mut mismatch: Option<String> = None;
        model.visit_all(&mut |slot| {
            if mismatch.is_some() {
                return;
            }
            let entry = match header.manifest.get(index) {
                Some(e) => e,
                None => {
                    mismatch = Some("manifest shorter than architecture".to_string());
                    return;
                }
            };
            if entry.name != slot.name || entry.shape != slot.shape {
                mismatch = Some(format!(
                    "architecture mismatch at {}: checkpoint has {} {:?}",
                    slot.name, entry.name, entry.shape
                ));
                return;
            }
            let n = slot.value.len();
            if offset + n > values.len() {
                mismatch = Some("checkpoint data truncated".to_string());
                return;
            }
            slot.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
            index += 1;
        });
        if let Some(m) = mismatch {
            return Err(Error::Checkpoint(m));
        }
        if index != header.manifest.len() || offset != values.len() {
            return Err(Error::Checkpoint(
                "checkpoint does not match architecture".into(),
            ));
        }
        Ok(model)
    }
}

const MAGIC: &[u8] = b"SDALRCKPT1\n";

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    meta: CheckpointMeta,
    encoder: EncoderConfig,
    class_count: usize,
    manifest: Vec<ManifestEntry>,
}

/// Eval-mode features and probabilities for a whole dataset, in chunks.
pub fn extract_features_probs(
    model: &Model,
    waveforms: &Array2<f64>,
    batch: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = waveforms.shape()[0];
    let mut features = Array2::zeros((n, model.encoder.cfg.feature_dim));
    let mut probs = Array2::zeros((n, model.class_count));
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let chunk = waveforms.slice(ndarray::s![start..end, ..]).to_owned();
        let f = model.forward_features(&chunk)?;
        let p = softmax(&model.classifier.forward_e(&f));
        features.slice_mut(ndarray::s![start..end, ..]).assign(&f);
        probs.slice_mut(ndarray::s![start..end, ..]).assign(&p);
        start = end;
    }
    Ok((features, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            window_len: 64,
            stem_channels: 4,
            stage_channels: vec![4, 8, 8, 8],
            blocks_per_stage: 2,
            feature_dim: 16,
            ..EncoderConfig::default()
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, l: usize) -> Array2<f64> {
        Array2::from_shape_fn((b, l), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn default_config_matches_expected_shapes() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.stage_lengths(), vec![1024, 1024, 512, 256, 128]);
        assert_eq!(cfg.downsample_factor(), 16);
        assert_eq!(cfg.window_len / cfg.downsample_factor(), 128);
        assert_eq!(cfg.feature_dim, 256);
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(tiny_cfg(), 3, &mut rng).unwrap();
        let x = random_batch(&mut rng, 5, 64);
        let f = model.forward_features(&x).unwrap();
        assert_eq!(f.shape(), &[5, 16]);
        let p = model.forward_probs(&x).unwrap();
        assert_eq!(p.shape(), &[5, 3]);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // identical inputs give identical rows in eval mode
        let mut x2 = x.clone();
        x2.row_mut(1).assign(&x.row(0));
        let p2 = model.forward_probs(&x2).unwrap();
        for c in 0..3 {
            assert_eq!(p2[[0, c]], p2[[1, c]]);
        }
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_length_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(tiny_cfg(), 3, &mut rng).unwrap();
        let x = random_batch(&mut rng, 2, 32);
        assert!(matches!(model.forward_probs(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn full_size_encoder_pre_pool_length() {
        // Table-style check on the real architecture at L=2048
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = EncoderConfig::default();
        assert_eq!(*cfg.stage_lengths().last().unwrap(), 2048 / 16);
        let model = Model::new(cfg, 8, &mut rng).unwrap();
        let x = random_batch(&mut rng, 2, 2048);
        let p = model.forward_probs(&x).unwrap();
        assert_eq!(p.shape(), &[2, 8]);
    }

    #[test]
    fn deep_copy_isolates_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let source = Model::new(tiny_cfg(), 3, &mut rng).unwrap();
        let x = random_batch(&mut rng, 2, 64);
        let before = source.forward_probs(&x).unwrap();
        let mut target = source.init_target_from_source();
        // identical outputs right after the copy
        assert_eq!(before, target.forward_probs(&x).unwrap());
        // perturbing the target must not change the source
        target.visit_all(&mut |slot| {
            if slot.trainable {
                for v in slot.value.iter_mut() {
                    *v += 0.05;
                }
            }
        });
        let after = source.forward_probs(&x).unwrap();
        assert_eq!(before, after);
        assert_ne!(target.forward_probs(&x).unwrap(), before);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Model::new(tiny_cfg(), 3, &mut rng).unwrap();
        model.meta.dataset = "synth".into();
        model.meta.epoch = 7;
        // make running stats non-trivial
        let x = random_batch(&mut rng, 6, 64);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(5);
        let _ = model.encoder.forward_t(&x, &mut drop_rng).unwrap();

        let probs_before = model.forward_probs(&x).unwrap();
        model.save(&path).unwrap();
        let restored = Model::load(&path).unwrap();
        let probs_after = restored.forward_probs(&x).unwrap();
        assert_eq!(probs_before, probs_after);
        assert_eq!(restored.meta.epoch, 7);
    }

    #[test]
    fn checkpoint_refuses_mismatched_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Model::new(tiny_cfg(), 3, &mut rng).unwrap();
        model.save(&path).unwrap();

        // tamper with the stored class count
        let mut header = {
            let bytes = std::fs::read(&path).unwrap();
            let len = u64::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 8].try_into().unwrap())
                as usize;
            let json: serde_json::Value =
                serde_json::from_slice(&bytes[MAGIC.len() + 8..MAGIC.len() + 8 + len]).unwrap();
            json
        };
        header["class_count"] = serde_json::json!(5);
        let rest = {
            let bytes = std::fs::read(&path).unwrap();
            let len = u64::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 8].try_into().unwrap())
                as usize;
            bytes[MAGIC.len() + 8 + len..].to_vec()
        };
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&rest);
        std::fs::write(&path, out).unwrap();

        assert!(matches!(Model::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        // end-to-end through stem, blocks, pool, bottleneck, bn
        let cfg = EncoderConfig {
            window_len: 32,
            stem_channels: 2,
            stage_channels: vec![2, 4],
            blocks_per_stage: 1,
            feature_dim: 3,
            dropout: 0.0,
            ..EncoderConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut encoder = Encoder::new(cfg, &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 32), |(b, t)| ((b * 37 + t) as f64 * 0.21).sin());

        let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
        let y = encoder.forward_t(&x, &mut drop_rng).unwrap();
        encoder.backward(&y);

        // collect analytic grads
        let mut grads: Vec<(String, Vec<f64>)> = vec![];
        encoder.visit_params("", &mut |slot| {
            if slot.trainable {
                grads.push((slot.name.clone(), slot.grad.unwrap().to_vec()));
            }
        });

        let eps = 1e-5;
        let mut checked = 0;
        for (name, grad) in &grads {
            // probe the first element of each parameter
            let fd = {
                let perturb = |delta: f64| -> f64 {
                    let mut enc = encoder.clone();
                    enc.visit_params("", &mut |slot| {
                        if slot.trainable && &slot.name == name {
                            slot.value[0] += delta;
                        }
                    });
                    let mut rng0 = ChaCha8Rng::seed_from_u64(0);
                    let y = enc.forward_t(&x, &mut rng0).unwrap();
                    y.iter().map(|v| v * v / 2.0).sum()
                };
                (perturb(eps) - perturb(-eps)) / (2.0 * eps)
            };
            let g = grad[0];
            if g.abs() > 1e-8 || fd.abs() > 1e-8 {
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-3, "{name}: analytic {g} vs fd {fd}");
                checked += 1;
            }
        }
        assert!(checked > 5, "too few parameters checked: {checked}");
    }
}
