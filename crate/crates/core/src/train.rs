//! Mini-batch SGD training with geometric augmentation, wall-time / compute
//! budgets, and best-validation-snapshot selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fcn::{FcnModel, GradientTape};
use crate::label::LabelMap;
use crate::rng::{stream, substream};
use crate::tensor::{softmax_cross_entropy, MacCounter, Tensor};

/// The six augmentation transforms; quarter rotations require square tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

pub const ALL_TRANSFORMS: [Transform; 6] = [
    Transform::Identity,
    Transform::Rot90,
    Transform::Rot180,
    Transform::Rot270,
    Transform::FlipH,
    Transform::FlipV,
];

fn mapped_index(t: Transform, h: usize, w: usize, i: usize, j: usize) -> (usize, usize) {
    // source (row, col) that lands at destination (i, j)
    match t {
        Transform::Identity => (i, j),
        Transform::Rot90 => (h - 1 - j, i),
        Transform::Rot180 => (h - 1 - i, w - 1 - j),
        Transform::Rot270 => (j, w - 1 - i),
        Transform::FlipH => (i, w - 1 - j),
        Transform::FlipV => (h - 1 - i, j),
    }
}

/// Apply one transform to a tile and its labels identically.
pub fn apply_transform(
    tile: &Tensor,
    labels: &LabelMap,
    t: Transform,
) -> Result<(Tensor, LabelMap)> {
    let shape = tile.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "augmentation expects rank-3 tiles, got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if labels.height() != h || labels.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "labels {}x{} do not match tile {h}x{w}",
            labels.width(),
            labels.height()
        )));
    }
    if matches!(t, Transform::Rot90 | Transform::Rot270) && h != w {
        return Err(Error::InvalidArgument(format!(
            "quarter rotation requires square tiles, got {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(shape);
    for ch in 0..c {
        let src = tile.plane(ch);
        let dst = out.plane_mut(ch);
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = mapped_index(t, h, w, i, j);
                dst[i * w + j] = src[si * w + sj];
            }
        }
    }
    let mut ids = vec![0u8; w * h];
    for i in 0..h {
        for j in 0..w {
            let (si, sj) = mapped_index(t, h, w, i, j);
            ids[i * w + j] = labels.ids()[si * w + sj];
        }
    }
    Ok((out, LabelMap::from_ids(w, h, labels.num_classes(), ids)?))
}

/// Pick one of the six transforms uniformly and apply it.
pub fn augment<R: Rng>(
    tile: &Tensor,
    labels: &LabelMap,
    rng: &mut R,
) -> Result<(Tensor, LabelMap)> {
    let t = ALL_TRANSFORMS[rng.gen_range(0..ALL_TRANSFORMS.len())];
    apply_transform(tile, labels, t)
}

/// Wall-time and multiply-accumulate budget; checked at epoch boundaries.
#[derive(Debug)]
pub struct BudgetTracker {
    started: Instant,
    pub max_seconds: Option<f64>,
    pub max_macs: Option<u64>,
    macs: MacCounter,
}

impl BudgetTracker {
    pub fn new(max_seconds: Option<f64>, max_macs: Option<u64>) -> BudgetTracker {
        BudgetTracker {
            started: Instant::now(),
            max_seconds,
            max_macs,
            macs: MacCounter::new(),
        }
    }

    pub fn unlimited() -> BudgetTracker {
        BudgetTracker::new(None, None)
    }

    pub fn elapsed_seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn mac_total(&self) -> u64 {
        self.macs.total()
    }

    pub fn macs_mut(&mut self) -> &mut MacCounter {
        &mut self.macs
    }

    pub fn exhausted(&self) -> bool {
        if let Some(limit) = self.max_seconds {
            if self.elapsed_seconds() >= limit {
                return true;
            }
        }
        if let Some(limit) = self.max_macs {
            if self.macs.total() >= limit {
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Wall-clock seconds since training started; informational, not part
    /// of the deterministic state.
    pub elapsed_seconds: f64,
    pub cumulative_macs: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Set when the budget ran out before a single epoch completed.
    pub incomplete: bool,
}

impl TrainHistory {
    /// The reproducible portion of the history (losses and compute counts,
    /// no wall-clock values).
    pub fn deterministic_view(&self) -> Vec<(usize, f64, f64, u64)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss, e.val_loss, e.cumulative_macs))
            .collect()
    }
}

/// Mean cross-entropy over a tile set, counted against `macs`.
pub fn mean_loss(model: &FcnModel, tiles: &[(Tensor, LabelMap)], macs: &mut MacCounter) -> Result<f64> {
    if tiles.is_empty() {
        return Err(Error::EmptyInput("tile set"));
    }
    let mut sum = 0.0;
    for (tile, labels) in tiles {
        let logits = model.forward(tile, macs)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        sum += loss;
    }
    Ok(sum / tiles.len() as f64)
}

fn check_tiles(model: &FcnModel, tiles: &[(Tensor, LabelMap)], what: &str) -> Result<()> {
    let want_c = model.config.in_channels;
    let first = &tiles[0].0;
    for (tile, labels) in tiles {
        if tile.shape() != first.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what} tiles must share one extent; found {:?} and {:?}",
                first.shape(),
                tile.shape()
            )));
        }
        if tile.shape()[0] != want_c {
            return Err(Error::ShapeMismatch(format!(
                "{what} tile has {} channels, model expects {want_c}",
                tile.shape()[0]
            )));
        }
        if labels.height() != tile.shape()[1] || labels.width() != tile.shape()[2] {
            return Err(Error::ShapeMismatch(format!("{what} labels do not match tile extent")));
        }
    }
    Ok(())
}

/// Train with mini-batch SGD and per-tile augmentation.
///
/// Runs up to `config.epochs` epochs, stopping at the first epoch boundary
/// where the budget is exhausted, and returns the parameter snapshot with
/// the lowest validation loss seen. With an empty validation set the
/// training loss stands in for snapshot selection. Everything is
/// deterministic in `(config, seed, data)`.
pub fn train(
    model: &FcnModel,
    train_set: &[(Tensor, LabelMap)],
    val_set: &[(Tensor, LabelMap)],
    budget: &mut BudgetTracker,
) -> Result<(FcnModel, TrainHistory)> {
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    check_tiles(model, train_set, "train")?;
    if !val_set.is_empty() {
        check_tiles(model, val_set, "validation")?;
    }
    if train_set[0].0.shape()[1] != train_set[0].0.shape()[2] {
        return Err(Error::InvalidArgument(
            "training tiles must be square (rotation augmentation)".into(),
        ));
    }

    let config = model.config.clone();
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((model.clone(), history));
    }

    let mut current = model.clone();
    let mut best: Option<(f64, FcnModel)> = None;
    for epoch in 1..=config.epochs {
        if budget.exhausted() {
            history.incomplete = history.epochs.is_empty();
            break;
        }

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = substream(config.seed, &[stream::SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        let mut augment_rng = substream(config.seed, &[stream::AUGMENT, epoch as u64]);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape_acc = GradientTape::zeros_like(&current);
            for &idx in batch {
                let (tile, labels) = &train_set[idx];
                let (aug_tile, aug_labels) = augment(tile, labels, &mut augment_rng)?;
                let (loss, tape) =
                    current.loss_and_gradients(&aug_tile, &aug_labels, budget.macs_mut())?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("training loss".into()));
                }
                loss_sum += loss;
                tape_acc.axpy(1.0, &tape)?;
            }
            tape_acc.scale(1.0 / batch.len() as f64);
            current.apply_gradients(&tape_acc)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss(&current, val_set, budget.macs_mut())?
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("validation loss".into()));
        }

        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            elapsed_seconds: budget.elapsed_seconds(),
            cumulative_macs: budget.mac_total(),
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, current.clone()));
        }
    }

    let result = best.map(|(_, m)| m).unwrap_or_else(|| model.clone());
    Ok((result, history))
}
