//! Hyperparameter fitness for the swarm: every candidate trains a fresh
//! model under one fixed short protocol (same seed, same epoch count) and
//! is scored by mean validation cross-entropy, optionally plus a weighted
//! compute-cost term.

use crate::error::{Error, Result};
use crate::fcn::{build_fcn, FcnConfig};
use crate::label::LabelMap;
use crate::pso::{DimSpec, SearchSpace};
use crate::tensor::Tensor;
use crate::train::{mean_loss, train, BudgetTracker};

/// Bounds for the tunable hyperparameters. The learning-rate range
/// deliberately extends past the stable region so the swarm has something
/// to reject.
pub fn known_dimension(name: &str) -> Option<DimSpec> {
    match name {
        "learning_rate" => Some(DimSpec::log("learning_rate", 1e-3, 50.0)),
        "l2" => Some(DimSpec::log("l2", 1e-7, 1e-2)),
        "l1" => Some(DimSpec::log("l1", 1e-8, 1e-3)),
        "base_filters" => Some(DimSpec::integer("base_filters", 4.0, 24.0)),
        "batch_size" => Some(DimSpec::integer("batch_size", 1.0, 8.0)),
        _ => None,
    }
}

/// Build a search space from dimension names; unknown names are rejected.
pub fn search_space_from_names(names: &[&str]) -> Result<SearchSpace> {
    if names.is_empty() {
        return Err(Error::EmptyInput("search space dimension list"));
    }
    let dims = names
        .iter()
        .map(|n| {
            known_dimension(n).ok_or_else(|| {
                Error::InvalidConfig(format!("unknown tunable hyperparameter '{n}'"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchSpace::new(dims))
}

/// Overlay decoded position values onto a base config by dimension name.
pub fn apply_position(base: &FcnConfig, space: &SearchSpace, values: &[f64]) -> Result<FcnConfig> {
    if values.len() != space.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} position values for {} dimensions",
            values.len(),
            space.len()
        )));
    }
    let mut config = base.clone();
    for (dim, &v) in space.dims.iter().zip(values) {
        match dim.name.as_str() {
            "learning_rate" => config.learning_rate = v,
            "l2" => config.l2 = v,
            "l1" => config.l1 = v,
            "base_filters" => config.base_filters = v as usize,
            "batch_size" => config.batch_size = v as usize,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown tunable hyperparameter '{other}'"
                )))
            }
        }
    }
    Ok(config)
}

/// The fixed per-candidate training protocol.
#[derive(Debug, Clone)]
pub struct FitnessProtocol {
    /// Base config supplying every non-tuned field and the shared seed.
    pub base: FcnConfig,
    /// Per-candidate epoch cap; identical for every candidate.
    pub epochs: usize,
    /// Weight of the compute term: `cost_penalty * (MACs / 1e9)`.
    pub cost_penalty: f64,
}

/// Fitness of a fully specified config under the protocol's short budget.
/// Divergent training (non-finite loss) scores positive infinity rather
/// than failing the caller.
pub fn protocol_fitness(
    candidate: &FcnConfig,
    protocol: &FitnessProtocol,
    train_tiles: &[(Tensor, LabelMap)],
    val_tiles: &[(Tensor, LabelMap)],
) -> Result<f64> {
    if val_tiles.is_empty() {
        return Err(Error::EmptyInput("validation tiles"));
    }
    let mut config = candidate.clone();
    config.epochs = protocol.epochs;
    config.seed = protocol.base.seed;
    let model = build_fcn(&config)?;
    let mut budget = BudgetTracker::unlimited();
    let best = match train(&model, train_tiles, val_tiles, &mut budget) {
        Ok((best, _)) => best,
        Err(Error::NonFinite(_)) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let val = match mean_loss(&best, val_tiles, budget.macs_mut()) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    Ok(val + protocol.cost_penalty * (budget.mac_total() as f64 / 1e9))
}

/// Decode a swarm position and score it with [`protocol_fitness`].
pub fn evaluate_fcn_fitness(
    values: &[f64],
    space: &SearchSpace,
    protocol: &FitnessProtocol,
    train_tiles: &[(Tensor, LabelMap)],
    val_tiles: &[(Tensor, LabelMap)],
) -> Result<f64> {
    let config = apply_position(&protocol.base, space, values)?;
    protocol_fitness(&config, protocol, train_tiles, val_tiles)
}
