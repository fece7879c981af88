use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::adamw_step;
use super::sampling::{sample_pairs_from_reps, ClipReps, TrainingPair};
use super::{batch_objective, Level, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};
use crate::types::ClipPuzzle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub step: u64,
    pub loss_cls: f64,
    pub loss_cl: f64,
    pub loss_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<LossRow>,
    /// Clip/level combinations that could not form a pair, summed over epochs.
    pub skipped: usize,
}

impl TrainOutcome {
    /// Mean total loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.trace.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let rows: Vec<f64> = self.trace.iter().filter(|r| r.epoch == e).map(|r| r.loss_total).collect();
                rows.iter().sum::<f64>() / rows.len().max(1) as f64
            })
            .collect()
    }
}

/// Jointly trains all levels with AdamW on mini-batches of sampled pairs.
pub fn train(clips: &[ClipPuzzle], config: &ModelConfig) -> Result<TrainOutcome> {
    if clips.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut params = ModelParams::init(config.clone())?;
    let reps = clips
        .iter()
        .map(|c| ClipReps::from_clip(c, config))
        .collect::<Result<Vec<_>>>()?;
    let mut trace = Vec::new();
    let mut skipped = 0;
    let mut grads = params.net.zeros_like();

    for epoch in 0..config.epochs {
        let epoch_seed = derive_seed(config.seed, "epoch", epoch as u64);
        let mut pairs: Vec<TrainingPair> = Vec::new();
        for level in Level::ALL {
            let s = sample_pairs_from_reps(&reps, config, level, epoch_seed);
            skipped += s.skipped;
            pairs.extend(s.pairs);
        }
        pairs.shuffle(&mut rng_for(config.seed, "batch-order", epoch as u64));

        for batch in pairs.chunks(config.batch_size) {
            let refs: Vec<&TrainingPair> = batch.iter().collect();
            let step = params.opt.step + 1;
            let parts = match batch_objective(&params.net, config, &refs, config.lambda, Some(&mut grads)) {
                Ok(parts) => parts,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, step: step as usize }),
                Err(e) => return Err(e),
            };
            if !adamw_step(&mut params.net, &grads, &mut params.opt, config) {
                return Err(Error::Diverged { epoch, step: step as usize });
            }
            trace.push(LossRow {
                epoch,
                step,
                loss_cls: parts.cls,
                loss_cl: parts.cl,
                loss_total: parts.total,
            });
        }
        log::debug!(
            "epoch {epoch}: {} pairs, mean loss {:.4}",
            pairs.len(),
            trace.iter().filter(|r| r.epoch == epoch).map(|r| r.loss_total).sum::<f64>()
                / (pairs.len().div_ceil(config.batch_size)).max(1) as f64
        );
    }
    Ok(TrainOutcome { params, trace, skipped })
}

/// Fraction of pairs whose predicted class (forward iff logit 1 > logit 0)
/// equals the label.
pub fn pairwise_accuracy(params: &ModelParams, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to score"));
    }
    let mut correct = 0usize;
    for level in Level::ALL {
        let group: Vec<&TrainingPair> = pairs.iter().filter(|p| p.level == level).collect();
        let inputs: Vec<(&[f64], &[f64])> = group.iter().map(|p| (p.a.as_slice(), p.b.as_slice())).collect();
        let logits = params.phi_forward_batch(level, &inputs)?;
        correct += group
            .iter()
            .zip(&logits)
            .filter(|(p, l)| u8::from(l[1] > l[0]) == p.order_label)
            .count();
    }
    Ok(correct as f64 / pairs.len() as f64)
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        context: path.display().to_string(),
        source,
    })?;
    for r in rows {
        w.serialize(r).map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sampling::sample_pairs;
    use crate::types::{FeatureVector, FrameRecord};
    use rand::{Rng, SeedableRng};

    /// Frames whose only signal is their 1-D temporal index plus noise.
    fn monotone_clips(n_clips: usize, seed: u64) -> Vec<ClipPuzzle> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n_clips)
            .map(|c| {
                let n = 12;
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let frames = order
                    .iter()
                    .map(|&i| FrameRecord {
                        frame_id: i as u64,
                        vision_feat: FeatureVector::new(vec![i as f64 + rng.gen_range(-0.05..0.05)]).unwrap(),
                        text_feat: FeatureVector::new(vec![0.0]).unwrap(),
                        start_ms: 100 * i as u64,
                        end_ms: 100 * i as u64 + 50,
                        shot_id: (i / 3) as u64,
                        scene_id: (i / 6) as u64,
                        gt_index: i + 1,
                    })
                    .collect();
                ClipPuzzle {
                    clip_id: format!("c{c}"),
                    movie_id: "m".into(),
                    frames,
                }
            })
            .collect()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            d_v: 1,
            d_u: 1,
            hidden_dim: 32,
            proj_dim: 8,
            lr: 1e-3,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_initialisation() {
        let clips = monotone_clips(3, 0);
        let cfg = ModelConfig { epochs: 0, ..small() };
        let out = train(&clips, &cfg).unwrap();
        assert_eq!(out.params, ModelParams::init(cfg).unwrap());
        assert!(out.trace.is_empty());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(train(&[], &small()).is_err());
    }

    #[test]
    fn learns_monotone_order() {
        let cfg = small();
        let out = train(&monotone_clips(40, 1), &cfg).unwrap();
        let held_out = monotone_clips(20, 99);
        let pairs = sample_pairs(&held_out, &cfg, Level::Frame, 7).unwrap().pairs;
        let untrained = ModelParams::init(cfg.clone()).unwrap();
        let chance = pairwise_accuracy(&untrained, &pairs).unwrap();
        assert!((0.4..=0.6).contains(&chance), "untrained accuracy {chance}");
        let acc = pairwise_accuracy(&out.params, &pairs).unwrap();
        assert!(acc > 0.95, "held-out accuracy {acc}");
        let means = out.epoch_means();
        assert!(means.last().unwrap() < means.first().unwrap(), "{means:?}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let clips = monotone_clips(5, 2);
        let cfg = ModelConfig { epochs: 2, ..small() };
        let a = train(&clips, &cfg).unwrap();
        let b = train(&clips, &cfg).unwrap();
        assert_eq!(a.params.to_json().unwrap(), b.params.to_json().unwrap());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn divergence_names_the_step() {
        let clips = monotone_clips(2, 4);
        let cfg = ModelConfig { lr: 1e300, epochs: 3, ..small() };
        match train(&clips, &cfg) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.trace.len())),
        }
    }
}
