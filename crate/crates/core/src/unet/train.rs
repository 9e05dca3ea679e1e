use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{binarize, mask_to_tensor, UNet, UNetConfig};
use super::UnetError;
use crate::mask::BinaryMask;
use crate::nn::{adam_step, AdamConfig, AdamState, LossConfig, Tensor};

/// Training protocol shared by every stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_stages: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_stages: 2,
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), UnetError> {
        if !(1..=3).contains(&self.n_stages) {
            return Err(UnetError::InvalidConfig(format!(
                "stage count must be 1, 2 or 3, got {}",
                self.n_stages
            )));
        }
        if self.batch_size == 0 {
            return Err(UnetError::InvalidConfig("batch size must be at least 1".into()));
        }
        self.adam.validate()?;
        self.loss.validate()?;
        Ok(())
    }
}

/// RNG for stage `stage` (1-based): stream `2k` initialises weights, `2k + 1`
/// shuffles batches. Stages never share draws, so a k-stage run is a prefix of
/// a longer one with the same seed.
pub fn stage_rng(seed: u64, stage: usize, shuffle: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * stage as u64 + shuffle as u64);
    rng
}

/// Trained stages plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub unet: UNetConfig,
    pub pipeline: PipelineConfig,
    pub stages: Vec<UNet<f32>>,
}

pub enum TrainEvent<'a> {
    /// Inputs stage `stage` is about to be trained on.
    StageInputs { stage: usize, inputs: &'a [BinaryMask] },
    /// Fired after every epoch with the network as it stands.
    Epoch {
        stage: usize,
        epoch: usize,
        loss: f64,
        net: &'a UNet<f32>,
    },
}

fn check_pairs(inputs: &[BinaryMask], targets: &[BinaryMask], size: usize) -> Result<(), UnetError> {
    if inputs.len() != targets.len() {
        return Err(UnetError::CountMismatch {
            inputs: inputs.len(),
            targets: targets.len(),
        });
    }
    if inputs.is_empty() {
        return Err(UnetError::EmptyDataset);
    }
    for m in inputs.iter().chain(targets) {
        let (h, w) = m.dims();
        if h != size || w != size {
            return Err(UnetError::SizeMismatch {
                expected: size,
                height: h,
                width: w,
            });
        }
    }
    Ok(())
}

/// Mini-batch Adam over seeded shuffles. Per-sample gradients are computed in
/// parallel and summed in sample order, so results do not depend on the thread
/// count. Returns the mean per-sample loss of every epoch.
pub fn train_stage(
    net: &mut UNet<f32>,
    inputs: &[BinaryMask],
    targets: &[BinaryMask],
    cfg: &PipelineConfig,
    stage: usize,
    on_epoch: &mut dyn FnMut(usize, f64, &UNet<f32>),
) -> Result<Vec<f64>, UnetError> {
    cfg.validate()?;
    check_pairs(inputs, targets, net.config().input_size)?;
    let tensors: Vec<Tensor<f32>> = inputs.iter().map(mask_to_tensor).collect();
    let mut rng = stage_rng(cfg.seed, stage, true);
    let mut adam = AdamState::new(cfg.adam, net.params());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let net_ref = &*net;
            let per_sample: Vec<(f64, Vec<Tensor<f32>>)> = idx
                .par_iter()
                .map(|&i| net_ref.loss_and_grads(&tensors[i], std::slice::from_ref(&targets[i]), &cfg.loss))
                .collect::<Result<_, _>>()?;
            let mut iter = per_sample.into_iter();
            let (mut loss, mut grads) = iter.next().expect("non-empty batch");
            for (l, g) in iter {
                loss += l;
                for (a, b) in grads.iter_mut().zip(&g) {
                    a.add_assign(b);
                }
            }
            let scale = 1.0 / idx.len() as f32;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
                return Err(UnetError::NonFiniteLoss { stage, epoch, batch });
            }
            epoch_loss += loss;
            adam_step(net.params_mut(), &grads, &mut adam)?;
        }
        let mean = epoch_loss / inputs.len() as f64;
        on_epoch(epoch, mean, net);
        history.push(mean);
    }
    Ok(history)
}

/// Runs one stage over every mask and binarizes the result.
pub fn apply_stage(net: &UNet<f32>, masks: &[BinaryMask]) -> Result<Vec<BinaryMask>, UnetError> {
    masks
        .par_iter()
        .map(|m| Ok(binarize(&net.forward(&mask_to_tensor(m))?, 0)))
        .collect()
}

/// Trains the stages one after another: stage 1 maps shapes to skeletons, each
/// later stage maps the binarized output of the frozen earlier stages to the
/// same skeletons. Returns the bundle and the per-stage loss histories.
pub fn train_pipeline_with(
    shapes: &[BinaryMask],
    skeletons: &[BinaryMask],
    unet: UNetConfig,
    cfg: &PipelineConfig,
    on_event: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<(ModelBundle, Vec<Vec<f64>>), UnetError> {
    unet.validate()?;
    cfg.validate()?;
    check_pairs(shapes, skeletons, unet.input_size)?;
    let mut stages = Vec::with_capacity(cfg.n_stages);
    let mut histories = Vec::with_capacity(cfg.n_stages);
    let mut inputs = shapes.to_vec();
    for stage in 1..=cfg.n_stages {
        if stage > 1 {
            inputs = apply_stage(stages.last().expect("previous stage"), &inputs)?;
        }
        on_event(TrainEvent::StageInputs { stage, inputs: &inputs });
        let mut net = UNet::new(unet, &mut stage_rng(cfg.seed, stage, false))?;
        let history = train_stage(&mut net, &inputs, skeletons, cfg, stage, &mut |epoch, loss, net| {
            on_event(TrainEvent::Epoch { stage, epoch, loss, net })
        })?;
        stages.push(net);
        histories.push(history);
    }
    Ok((
        ModelBundle {
            unet,
            pipeline: *cfg,
            stages,
        },
        histories,
    ))
}

pub fn train_pipeline(
    shapes: &[BinaryMask],
    skeletons: &[BinaryMask],
    unet: UNetConfig,
    cfg: &PipelineConfig,
) -> Result<ModelBundle, UnetError> {
    Ok(train_pipeline_with(shapes, skeletons, unet, cfg, &mut |_| {})?.0)
}

/// Runs the first `k` stages in series, binarizing after each.
pub fn infer_prefix(bundle: &ModelBundle, shape: &BinaryMask, k: usize) -> Result<BinaryMask, UnetError> {
    if k == 0 || k > bundle.stages.len() {
        return Err(UnetError::InvalidConfig(format!(
            "cannot run {k} of {} stages",
            bundle.stages.len()
        )));
    }
    let mut m = shape.clone();
    for net in &bundle.stages[..k] {
        m = binarize(&net.forward(&mask_to_tensor(&m))?, 0);
    }
    Ok(m)
}

pub fn infer(bundle: &ModelBundle, shape: &BinaryMask) -> Result<BinaryMask, UnetError> {
    infer_prefix(bundle, shape, bundle.stages.len())
}

pub fn infer_all(bundle: &ModelBundle, shapes: &[BinaryMask]) -> Result<Vec<BinaryMask>, UnetError> {
    shapes.par_iter().map(|s| infer(bundle, s)).collect()
}
