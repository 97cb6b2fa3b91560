//! Mini-batch training with the joint loss, the warm-up cosine schedule and
//! a divergence detector.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use super::{
    adamw_step, backward, lr_at, random_mask, AdamWConfig, BatchItem, Checkpoint, ForwardMode, LossBreakdown, MaeError,
    ModelConfig, ModelParams, OptimState, ScheduleConfig,
};
use crate::dataset::{augment, AugmentPolicy, DatasetSplit};
use crate::rng::stream;
use crate::tensor::DenseTensor;

/// Training configuration file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Optimization steps to run (at most `schedule.n_iter`).
    pub steps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    /// Training-time augmentation; the resize target is always the model's
    /// input size.
    #[serde(default)]
    pub augment: AugmentPolicy,
}

fn default_batch() -> usize {
    16
}

fn default_seed() -> u64 {
    42
}

impl TrainConfig {
    pub fn desk(steps: usize) -> Self {
        Self {
            model: ModelConfig::desk(),
            schedule: ScheduleConfig::reference(steps),
            batch_size: default_batch(),
            steps,
            seed: default_seed(),
            optimizer: AdamWConfig::default(),
            augment: AugmentPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), MaeError> {
        self.model.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(MaeError::BadConfig("batch_size must be positive".into()));
        }
        if self.steps > self.schedule.n_iter {
            return Err(MaeError::BadConfig(format!(
                "steps ({}) exceed schedule N_iter ({})",
                self.steps, self.schedule.n_iter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
}

/// Population mean and standard deviation of the labels (std 1 if constant).
fn label_stats(labels: &[f64]) -> (f64, f64) {
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 * (1.0 + mean.abs()) { std } else { 1.0 })
}

fn is_divergence(e: &MaeError) -> bool {
    matches!(e, MaeError::NonFiniteActivation { .. } | MaeError::NonFiniteParam(_))
}

/// Trains on `split.train`. Batches are drawn from per-epoch permutations,
/// and each sample's augmentation and mask come from the step's stream, so
/// the history is a pure function of the inputs and `seed`.
pub fn train(split: &DatasetSplit, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome, MaeError> {
    cfg.validate()?;
    let records = &split.train;
    if records.is_empty() {
        return Err(MaeError::EmptyTrainSet);
    }
    let labels: Vec<f64> = records.iter().map(|r| r.label_months).collect();
    let (label_mean, label_std) = label_stats(&labels);
    let mcfg = ModelConfig { label_mean, label_std, ..cfg.model.clone() };
    let mut params = ModelParams::init(&mcfg, seed)?;
    let mut optim = OptimState::new(&params, cfg.optimizer);
    let policy = AugmentPolicy { size: Some(mcfg.img_size), ..cfg.augment.clone() };

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..records.len()).collect();
                order.shuffle(&mut stream(seed, &format!("epoch{epoch}"), "shuffle"));
                epoch += 1;
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let mut rng = stream(seed, &format!("step{step}"), "batch");
        let images: Vec<DenseTensor<f64>> =
            idx.iter().map(|&i| augment(&records[i].image, &mut rng, &policy)).collect();
        let batch: Vec<BatchItem<'_>> = idx
            .iter()
            .zip(&images)
            .map(|(&i, img)| BatchItem {
                image: img,
                label_months: records[i].label_months,
                mask: random_mask(mcfg.n_tokens(), mcfg.mask_ratio, &mut rng),
            })
            .collect();

        let last_good = || Checkpoint { config: mcfg.clone(), params: params.clone(), optim: Some(optim.clone()) };
        let (grads, loss) = match backward(&params, &mcfg, &batch, ForwardMode::Joint) {
            Ok(r) => r,
            Err(e) if is_divergence(&e) => {
                log::error!("step {step}: {e}");
                return Err(MaeError::Diverged { step, last_good: Box::new(last_good()) });
            }
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() {
            return Err(MaeError::Diverged { step, last_good: Box::new(last_good()) });
        }
        let lr = lr_at(step, &cfg.schedule)?;
        let snapshot = (params.clone(), optim.clone());
        adamw_step(&mut params, &grads, &mut optim, lr)?;
        if let Some(name) = params.first_non_finite() {
            log::error!("step {step}: parameter {name} became non-finite");
            let (params, optim) = snapshot;
            return Err(MaeError::Diverged {
                step,
                last_good: Box::new(Checkpoint { config: mcfg, params, optim: Some(optim) }),
            });
        }
        log::debug!("step {step}: lr {lr:.3e} L {:.6} l_reg {:.6} l_ssat {:.6}", loss.total, loss.l_reg, loss.l_ssat);
        history.push(StepRecord { step, lr, loss });
    }
    Ok(TrainOutcome { checkpoint: Checkpoint { config: mcfg, params, optim: Some(optim) }, history })
}
