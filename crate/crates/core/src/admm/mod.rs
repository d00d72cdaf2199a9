//! ADMM training toward low TT-rank weights.
//!
//! Each compressed weight `W` gets an auxiliary copy `Z` constrained to the
//! target TT-ranks and a scaled dual `U`, both stored in `W`'s own layout.
//! One iteration runs an epoch of SGD on `ℓ(W) + ρ/2 ‖W − Z + U‖²`, then
//! `Z = Π(W + U)` and `U += W − Z`.

use std::io::Write;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Grads, Network, Sgd, TtTarget};
use crate::tensor::{sum_sq, DenseTensor};
use crate::train::{evaluate, train_epoch};
use crate::tt::{detensorize_conv, detensorize_fc, project, tensorize_conv, tensorize_fc};

/// Projection of a dense weight (fc matrix or conv kernel) onto the target
/// TT-ranks, returned in the weight's layout.
pub fn project_weight(w: &DenseTensor, target: &TtTarget) -> Result<DenseTensor> {
    if target.map.kernel.is_some() {
        let folded = tensorize_conv(w, &target.map)?;
        detensorize_conv(&project(&folded, &target.ranks)?, &target.map)
    } else {
        let folded = tensorize_fc(w, &target.map)?;
        detensorize_fc(&project(&folded, &target.ranks)?, &target.map)
    }
}

/// Relative distance from `w` to its projection.
pub fn relative_projection_error(w: &DenseTensor, target: &TtTarget) -> Result<f64> {
    let p = project_weight(w, target)?;
    Ok(w.sub(&p)?.frobenius_norm() / w.frobenius_norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub target: TtTarget,
    pub z: DenseTensor,
    pub u: DenseTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub slots: Vec<Slot>,
    pub rho: f64,
    /// Stop once `‖W − Z‖ / ‖W‖` falls to this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub t: usize,
}

impl AdmmState {
    /// `Z = W`, `U = 0` for each weight.
    pub fn new(
        weights: &[&DenseTensor],
        targets: Vec<TtTarget>,
        rho: f64,
        epsilon: f64,
        max_iters: usize,
    ) -> Result<Self> {
        if weights.len() != targets.len() {
            return Err(Error::Config(format!(
                "{} weights but {} tt targets",
                weights.len(),
                targets.len()
            )));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be finite and >= 0, got {rho}")));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        let slots = weights
            .iter()
            .zip(targets)
            .map(|(w, target)| {
                // fails early if the map does not fit the weight
                project_weight(w, &target)?;
                Ok(Slot {
                    target,
                    z: (*w).clone(),
                    u: DenseTensor::zeros(w.shape())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            rho,
            epsilon,
            max_iters,
            t: 0,
        })
    }

    fn check(&self, weights: &[&DenseTensor]) -> Result<()> {
        if weights.len() != self.slots.len() {
            return Err(Error::Config(format!(
                "{} weights for {} admm slots",
                weights.len(),
                self.slots.len()
            )));
        }
        for (w, s) in weights.iter().zip(&self.slots) {
            if w.shape() != s.z.shape() {
                return Err(Error::DimensionMismatch {
                    op: "admm state",
                    left: w.shape().to_vec(),
                    right: s.z.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// `Σ ρ/2 ‖W − Z + U‖²`.
    pub fn penalty(&self, weights: &[&DenseTensor]) -> Result<f64> {
        self.check(weights)?;
        let mut total = 0.0;
        for (w, s) in weights.iter().zip(&self.slots) {
            let mut acc = 0.0;
            for ((&wi, &zi), &ui) in w.data().iter().zip(s.z.data()).zip(s.u.data()) {
                let d = wi - zi + ui;
                acc += d * d;
            }
            total += acc;
        }
        Ok(0.5 * self.rho * total)
    }

    /// Adds `ρ (W − Z + U)` to the gradient of slot `i`.
    pub fn add_penalty_grad(&self, i: usize, w: &DenseTensor, grad: &mut DenseTensor) {
        if self.rho == 0.0 {
            return;
        }
        let s = &self.slots[i];
        for (((g, &wi), &zi), &ui) in grad.data_mut().iter_mut().zip(w.data()).zip(s.z.data()).zip(s.u.data()) {
            *g += self.rho * (wi - zi + ui);
        }
    }

    /// `Z = Π(W + U)`.
    pub fn z_update(&mut self, weights: &[&DenseTensor]) -> Result<()> {
        self.check(weights)?;
        for (w, s) in weights.iter().zip(self.slots.iter_mut()) {
            s.z = project_weight(&w.add(&s.u)?, &s.target)?;
        }
        Ok(())
    }

    /// `U += W − Z`.
    pub fn u_update(&mut self, weights: &[&DenseTensor]) -> Result<()> {
        self.check(weights)?;
        for (w, s) in weights.iter().zip(self.slots.iter_mut()) {
            for ((u, &wi), &zi) in s.u.data_mut().iter_mut().zip(w.data()).zip(s.z.data()) {
                *u += wi - zi;
            }
        }
        Ok(())
    }

    /// `Σ ‖W − Z‖²` over all slots.
    pub fn residual_sq(&self, weights: &[&DenseTensor]) -> Result<f64> {
        self.check(weights)?;
        let mut total = 0.0;
        for (w, s) in weights.iter().zip(&self.slots) {
            total += w
                .data()
                .iter()
                .zip(s.z.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total)
    }

    /// `‖W − Z‖ / ‖W‖` with both norms taken over all slots together.
    pub fn relative_residual(&self, weights: &[&DenseTensor]) -> Result<f64> {
        let res = self.residual_sq(weights)?.sqrt();
        let norm = weights.iter().map(|w| sum_sq(w.data())).sum::<f64>().sqrt();
        Ok(if norm == 0.0 { res } else { res / norm })
    }
}

/// Something whose weights ADMM can drive toward low TT-rank.
pub trait AdmmProblem {
    /// The constrained weights, in slot order.
    fn weights(&self) -> Vec<&DenseTensor>;

    /// One epoch of steps on the penalized objective; returns the mean
    /// training loss (without the penalty).
    fn w_epoch(&mut self, state: &AdmmState, epoch: usize) -> Result<f64>;

    /// Held-out accuracy after an iteration, if there is one.
    fn evaluate(&self) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub residual_sq: f64,
    pub test_accuracy: Option<f64>,
}

/// Writes history rows as CSV with a header.
pub fn write_history(w: impl Write, rows: &[HistoryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Runs W/Z/U iterations until the relative residual reaches `epsilon` or
/// `max_iters` iterations have run. At least one iteration always runs,
/// since the residual is zero right after `Z = W`. `epoch_offset` is added to
/// the iteration number for the `epoch` column.
pub fn run_admm(problem: &mut impl AdmmProblem, state: &mut AdmmState, epoch_offset: usize) -> Result<Vec<HistoryRow>> {
    let mut history = Vec::new();
    if state.max_iters == 0 {
        return Ok(history);
    }
    loop {
        state.t += 1;
        let epoch = epoch_offset + state.t;
        let train_loss = problem.w_epoch(state, epoch)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss is {train_loss} at admm iteration {}",
                state.t
            )));
        }
        let weights = problem.weights();
        state.z_update(&weights)?;
        state.u_update(&weights)?;
        let residual_sq = state.residual_sq(&weights)?;
        let relative = state.relative_residual(&weights)?;
        if !residual_sq.is_finite() {
            return Err(Error::NonFinite(format!(
                "admm residual is {residual_sq} at iteration {}",
                state.t
            )));
        }
        history.push(HistoryRow {
            iteration: state.t,
            epoch,
            train_loss,
            residual_sq,
            test_accuracy: problem.evaluate()?,
        });
        if relative <= state.epsilon || state.t >= state.max_iters {
            return Ok(history);
        }
    }
}

/// SGD settings for one training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

/// A network whose dense layers at `layers` are the constrained weights.
pub struct NetworkProblem<'a> {
    pub net: &'a mut Network,
    pub layers: Vec<usize>,
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub opt: Sgd,
    pub batch_size: usize,
    pub seed: u64,
}

impl<'a> NetworkProblem<'a> {
    pub fn new(
        net: &'a mut Network,
        layers: Vec<usize>,
        train: &'a Dataset,
        test: Option<&'a Dataset>,
        sgd: SgdSettings,
        seed: u64,
    ) -> Result<Self> {
        for &i in &layers {
            if net.layers().get(i).and_then(|l| l.dense_weight()).is_none() {
                return Err(Error::InvalidLayer(format!("layer {i} is not a dense layer")));
            }
        }
        Ok(Self {
            net,
            layers,
            train,
            test,
            opt: Sgd::new(sgd.lr, sgd.momentum),
            batch_size: sgd.batch_size,
            seed,
        })
    }
}

/// `ℓ(W) + Σ ρ/2 ‖W − Z + U‖²` on one batch.
pub fn augmented_loss(
    net: &Network,
    layers: &[usize],
    inputs: &[f64],
    labels: &[usize],
    state: &AdmmState,
) -> Result<f64> {
    let logits = net.predict(inputs, labels.len())?;
    let (loss, _) = crate::nn::cross_entropy(&logits, labels, net.output_dim())?;
    Ok(loss + state.penalty(&dense_weights(net, layers))?)
}

/// Adds the penalty gradient for every slot to the backprop gradients and
/// returns the penalty value.
pub fn add_penalty(net: &Network, layers: &[usize], state: &AdmmState, grads: &mut Grads) -> Result<f64> {
    if state.rho == 0.0 {
        return Ok(0.0);
    }
    for (slot, &li) in layers.iter().enumerate() {
        let w = net.layers()[li].dense_weight().expect("checked dense");
        state.add_penalty_grad(slot, w, &mut grads[li][0]);
    }
    state.penalty(&dense_weights(net, layers))
}

/// One SGD step on the augmented loss.
pub fn w_update(
    net: &mut Network,
    layers: &[usize],
    inputs: &[f64],
    labels: &[usize],
    state: &AdmmState,
    opt: &mut Sgd,
) -> Result<f64> {
    let (loss, mut grads) = net.loss_and_grads(inputs, labels)?;
    let penalty = add_penalty(net, layers, state, &mut grads)?;
    opt.step(net, &grads)?;
    Ok(loss + penalty)
}

fn dense_weights<'n>(net: &'n Network, layers: &[usize]) -> Vec<&'n DenseTensor> {
    layers
        .iter()
        .map(|&i| net.layers()[i].dense_weight().expect("checked dense"))
        .collect()
}

impl AdmmProblem for NetworkProblem<'_> {
    fn weights(&self) -> Vec<&DenseTensor> {
        dense_weights(self.net, &self.layers)
    }

    fn w_epoch(&mut self, state: &AdmmState, epoch: usize) -> Result<f64> {
        let layers = &self.layers;
        train_epoch(
            self.net,
            self.train,
            &mut self.opt,
            self.batch_size,
            self.seed,
            epoch as u32,
            |net, grads| add_penalty(net, layers, state, grads),
        )
    }

    fn evaluate(&self) -> Result<Option<f64>> {
        self.test.map(|t| evaluate(self.net, t)).transpose()
    }
}

/// Swaps each listed dense layer for its TT-SVD at the target ranks.
pub fn decompose(net: &Network, targets: &[(usize, TtTarget)]) -> Result<Network> {
    let mut out = net.clone();
    for (i, target) in targets {
        let layer = net
            .layers()
            .get(*i)
            .ok_or_else(|| Error::InvalidLayer(format!("no layer {i}")))?;
        out.replace_layer(*i, layer.decompose(target)?)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Finetuned {
    pub net: Network,
    /// Accuracy of the decomposed model before any fine-tuning.
    pub decomposed_accuracy: Option<f64>,
    pub trace: Vec<EpochRecord>,
}

/// Decomposes the listed layers, then trains every parameter (TT cores
/// included) on the plain loss for `epochs` epochs.
#[allow(clippy::too_many_arguments)]
pub fn decompose_and_finetune(
    net: &Network,
    targets: &[(usize, TtTarget)],
    train: &Dataset,
    test: Option<&Dataset>,
    sgd: SgdSettings,
    epochs: usize,
    seed: u64,
    epoch_offset: usize,
) -> Result<Finetuned> {
    let mut tt_net = decompose(net, targets)?;
    let decomposed_accuracy = test.map(|t| evaluate(&tt_net, t)).transpose()?;
    let mut opt = Sgd::new(sgd.lr, sgd.momentum);
    let mut trace = Vec::with_capacity(epochs);
    for e in 1..=epochs {
        let epoch = epoch_offset + e;
        let train_loss = crate::train::sgd_epoch(&mut tt_net, train, &mut opt, sgd.batch_size, seed, epoch as u32)?;
        trace.push(EpochRecord {
            epoch,
            train_loss,
            test_accuracy: test.map(|t| evaluate(&tt_net, t)).transpose()?,
        });
    }
    Ok(Finetuned {
        net: tt_net,
        decomposed_accuracy,
        trace,
    })
}

#[cfg(test)]
mod tests;
