//! Class contribution mass, velocity and momentum, and the momentum-weighted
//! prototype and model aggregation built on them.
//!
//! For one class `c` in one round, the support is the list of selected
//! clients that hold `c`. Mass, velocity and momentum are probability vectors
//! over that support, in the same order.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelParams;
use crate::numerics::{self, normalize_to_simplex, NumericsError, SimplexVector};
use crate::prototypes::{GlobalPrototypes, PrototypeSet};

/// Cosines at or below this value are raised to it before normalization.
pub const COSINE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MomentumError {
    #[error("no client holds the class")]
    EmptySupport,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("model shape mismatch between clients")]
    ShapeMismatch,
    #[error("no client models supplied")]
    NoModels,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn check_support(protos: &[&[f64]]) -> Result<(), MomentumError> {
    let first = protos.first().ok_or(MomentumError::EmptySupport)?;
    if let Some(p) = protos.iter().find(|p| p.len() != first.len()) {
        return Err(MomentumError::LengthMismatch(first.len(), p.len()));
    }
    Ok(())
}

/// Floored cosines of every prototype against `anchor`, normalized; `None`
/// when the anchor has no direction.
fn cosine_shares(protos: &[&[f64]], anchor: &[f64]) -> Option<SimplexVector> {
    let mut cos = Vec::with_capacity(protos.len());
    for p in protos {
        match numerics::cosine_similarity(p, anchor) {
            Ok(c) => cos.push(c.max(COSINE_FLOOR)),
            Err(NumericsError::DegenerateVector) if numerics::norm(anchor) > 0.0 => {
                // A zero prototype carries no direction.
                cos.push(COSINE_FLOOR)
            }
            Err(_) => return None,
        }
    }
    Some(normalize_to_simplex(&cos).expect("floored cosines are positive"))
}

/// Weighted sum `Σ_k w_k p_k`.
fn combine(weights: &SimplexVector, protos: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; protos[0].len()];
    for (w, p) in weights.as_slice().iter().zip(protos) {
        numerics::axpy(&mut out, *w, p);
    }
    out
}

/// Class contribution mass.
///
/// First weights each prototype by its floored cosine to the plain mean,
/// forms the weighted mean `p̂` from those weights, then returns the
/// normalized floored cosines of each prototype against `p̂`. Falls back to
/// uniform when the mean or `p̂` is the zero vector.
pub fn class_contribution_mass(protos: &[&[f64]]) -> Result<SimplexVector, MomentumError> {
    check_support(protos)?;
    if protos.len() == 1 {
        return Ok(SimplexVector::vertex(1, 0));
    }
    let mean = numerics::mean_of(protos);
    let Some(s) = cosine_shares(protos, &mean) else {
        warn!("class contribution mass: zero mean prototype, using uniform mass");
        return Ok(SimplexVector::uniform(protos.len()));
    };
    let weighted = combine(&s, protos);
    match cosine_shares(protos, &weighted) {
        Some(m) => Ok(m),
        None => {
            warn!("class contribution mass: zero weighted prototype, using uniform mass");
            Ok(SimplexVector::uniform(protos.len()))
        }
    }
}

/// Class contribution velocity: normalized squared distances to the previous
/// global prototype. Without a previous prototype the plain mean of `protos`
/// stands in for it. All-zero distances give a uniform result.
pub fn class_contribution_velocity(
    protos: &[&[f64]],
    previous_global: Option<&[f64]>,
) -> Result<SimplexVector, MomentumError> {
    check_support(protos)?;
    let mean;
    let anchor = match previous_global {
        Some(g) => {
            if g.len() != protos[0].len() {
                return Err(MomentumError::LengthMismatch(protos[0].len(), g.len()));
            }
            g
        }
        None => {
            mean = numerics::mean_of(protos);
            &mean
        }
    };
    if protos.len() == 1 {
        return Ok(SimplexVector::vertex(1, 0));
    }
    let dist: Vec<f64> = protos.iter().map(|p| numerics::squared_distance(p, anchor)).collect();
    match normalize_to_simplex(&dist) {
        Ok(v) => {
            debug_assert_eq!(normalize_to_simplex(v.as_slice()).as_ref(), Ok(&v));
            Ok(v)
        }
        Err(NumericsError::DegenerateNormalization) => {
            warn!("class contribution velocity: all prototypes equal the global prototype, using uniform velocity");
            Ok(SimplexVector::uniform(protos.len()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Class contribution momentum: the normalized elementwise product of mass
/// and velocity. A uniform factor leaves the other one unchanged exactly.
pub fn class_contribution_momentum(mass: &SimplexVector, velocity: &SimplexVector) -> Result<SimplexVector, MomentumError> {
    if mass.len() != velocity.len() {
        return Err(MomentumError::LengthMismatch(mass.len(), velocity.len()));
    }
    if velocity.is_uniform() {
        return Ok(mass.clone());
    }
    if mass.is_uniform() {
        return Ok(velocity.clone());
    }
    let product: Vec<f64> = mass.as_slice().iter().zip(velocity.as_slice()).map(|(m, v)| m * v).collect();
    match normalize_to_simplex(&product) {
        Ok(q) => Ok(q),
        Err(NumericsError::DegenerateNormalization) => {
            warn!("class contribution momentum: all products vanish, using uniform momentum");
            Ok(SimplexVector::uniform(mass.len()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Global prototype as the momentum-weighted combination of the uploads.
pub fn aggregate_global_prototype(momentum: &SimplexVector, protos: &[&[f64]]) -> Result<Vec<f64>, MomentumError> {
    check_support(protos)?;
    if momentum.len() != protos.len() {
        return Err(MomentumError::LengthMismatch(momentum.len(), protos.len()));
    }
    Ok(combine(momentum, protos))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMomentum {
    pub class: usize,
    /// Client ids holding the class this round, ascending.
    pub clients: Vec<usize>,
    pub mass: SimplexVector,
    pub velocity: SimplexVector,
    pub momentum: SimplexVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMomentum {
    pub round: usize,
    pub selected: Vec<usize>,
    /// Classes held by at least one selected client, ascending.
    pub classes: Vec<ClassMomentum>,
    /// Classes no selected client held; their global prototype was carried over.
    pub stale_classes: Vec<usize>,
}

impl RoundMomentum {
    /// Momentum of `client` for `class`, if the client held the class.
    pub fn momentum_of(&self, client: usize, class: usize) -> Option<f64> {
        let cm = self.classes.iter().find(|c| c.class == class)?;
        let pos = cm.clients.iter().position(|&k| k == client)?;
        Some(cm.momentum[pos])
    }
}

/// Computes mass, velocity and momentum for every class present in the
/// uploads and moves each class's global prototype to its momentum-weighted
/// combination. `uploads` must be ordered by client id.
pub fn compute_round_momentum(
    round: usize,
    uploads: &[PrototypeSet],
    globals: &mut GlobalPrototypes,
) -> Result<RoundMomentum, MomentumError> {
    let num_classes = globals.classes.len();
    let selected: Vec<usize> = uploads.iter().map(|u| u.client).collect();
    let mut classes = Vec::new();
    let mut stale = Vec::new();
    for c in 0..num_classes {
        let holders: Vec<(usize, &[f64])> = uploads
            .iter()
            .filter_map(|u| u.get(c).map(|p| (u.client, p.proto.as_slice())))
            .collect();
        if holders.is_empty() {
            if globals.get(c).is_some() {
                warn!("round {round}: no selected client holds class {c}; keeping stale global prototype");
            }
            stale.push(c);
            continue;
        }
        let protos: Vec<&[f64]> = holders.iter().map(|(_, p)| *p).collect();
        let mass = class_contribution_mass(&protos)?;
        let velocity = class_contribution_velocity(&protos, globals.get(c))?;
        let momentum = class_contribution_momentum(&mass, &velocity)?;
        let g = aggregate_global_prototype(&momentum, &protos)?;
        globals.set(c, g, round);
        classes.push(ClassMomentum {
            class: c,
            clients: holders.iter().map(|(k, _)| *k).collect(),
            mass,
            velocity,
            momentum,
        });
    }
    Ok(RoundMomentum { round, selected, classes, stale_classes: stale })
}

/// Per-client aggregation weight `α_k ∝ Σ_c Q_{k,c}` over the selected
/// clients, in selection order.
pub fn momentum_client_weights(rm: &RoundMomentum) -> SimplexVector {
    let mut totals = vec![0.0; rm.selected.len()];
    for cm in &rm.classes {
        for (k, q) in cm.clients.iter().zip(cm.momentum.as_slice()) {
            if let Some(pos) = rm.selected.iter().position(|s| s == k) {
                totals[pos] += q;
            }
        }
    }
    normalize_to_simplex(&totals).unwrap_or_else(|_| SimplexVector::uniform(rm.selected.len().max(1)))
}

/// Elementwise `Σ_k w_k θ_k`.
pub fn weighted_average(models: &[ModelParams], weights: &SimplexVector) -> Result<ModelParams, MomentumError> {
    let first = models.first().ok_or(MomentumError::NoModels)?;
    if models.len() != weights.len() {
        return Err(MomentumError::LengthMismatch(models.len(), weights.len()));
    }
    if models.iter().any(|m| m.config() != first.config()) {
        return Err(MomentumError::ShapeMismatch);
    }
    let mut out = ModelParams::zeros(first.config().clone());
    for (m, w) in models.iter().zip(weights.as_slice()) {
        numerics::axpy(out.values_mut(), *w, m.values());
    }
    Ok(out)
}

/// Momentum-weighted model aggregation; `models[i]` belongs to `rm.selected[i]`.
pub fn aggregate_models(rm: &RoundMomentum, models: &[ModelParams]) -> Result<ModelParams, MomentumError> {
    if models.len() != rm.selected.len() {
        return Err(MomentumError::LengthMismatch(rm.selected.len(), models.len()));
    }
    weighted_average(models, &momentum_client_weights(rm))
}
