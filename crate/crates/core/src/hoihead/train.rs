//! Minibatch SGD over prepared scenes.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{scene_gradients, PreparedScene, SceneGrad};
use crate::config::{Architecture, TrainConfig};
use crate::error::{Error, Result};
use crate::pairfeat::{MaskGradAccumulator, MaskProjector};
use crate::params::ParameterStore;
use crate::tape::Mat;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    /// Wall-clock time of the epoch; not part of any determinism guarantee.
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: ParameterStore,
    pub log: Vec<EpochLog>,
}

/// Trains `store` in place over `scenes` (all must carry labels).
///
/// Scenes are shuffled each epoch by a generator seeded from `seed`; the
/// loss is summed over all candidate pairs of the minibatch (each pair
/// contributing its mean over classes), so the step size does not shrink
/// as batches get more crowded. Per-scene
/// gradients may be computed in parallel but are reduced in batch order, so
/// results are identical for any thread count.
pub fn train(
    scenes: &[PreparedScene],
    cfg: &TrainConfig,
    arch: &Architecture,
    mut store: ParameterStore,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if let Some(s) = scenes.iter().find(|s| s.labels.is_none()) {
        return Err(Error::Contract(format!("scene '{}' has no labels", s.image_id())));
    }
    store.check_layout(arch)?;
    let size = arch.model.mask_size;
    let mut projector = MaskProjector::new(&store, size)?;
    let mut mask_acc = MaskGradAccumulator::new(size, projector.out_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<SceneGrad>> = batch
                .par_iter()
                .map(|&i| scene_gradients(&store, &projector, &scenes[i], arch, cfg.bce_eps))
                .collect();
            let mut loss = 0.0;
            let mut pairs = 0usize;
            let mut grads: BTreeMap<String, Mat> = BTreeMap::new();
            mask_acc.clear();
            for r in results {
                let g = r?;
                loss += g.loss_sum;
                pairs += g.num_pairs;
                for (name, m) in g.params {
                    match grads.get_mut(&name) {
                        Some(acc) => *acc += &m,
                        None => {
                            grads.insert(name, m);
                        }
                    }
                }
                for (layout, dz) in &g.mask {
                    mask_acc.add(layout, dz);
                }
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss in epoch {epoch}, batch {batch_no}"
                )));
            }
            if pairs == 0 {
                continue;
            }
            store.sgd_step(&grads, lr)?;
            mask_acc.apply_sgd(&mut store, lr)?;
            projector.refresh(&store)?;
            epoch_loss += loss;
            epoch_pairs += pairs;
        }
        let entry = EpochLog {
            epoch,
            lr,
            mean_loss: if epoch_pairs > 0 {
                epoch_loss / epoch_pairs as f64
            } else {
                0.0
            },
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { store, log })
}
