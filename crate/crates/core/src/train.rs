//! Minibatch SGD epochs and accuracy evaluation.

use crate::data::{minibatches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, Grads, Network, Sgd};

const EVAL_CHUNK: usize = 1000;

/// Fraction of samples whose largest logit is at the true label
/// (ties go to the lowest class index).
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = net.output_dim();
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = ds.gather(chunk);
        let logits = net.predict(&batch.inputs, batch.len())?;
        correct += logits
            .chunks_exact(classes)
            .zip(&batch.labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// One shuffled pass over `ds`. `extra_grad` may add to the loss gradients
/// before each step and returns any extra loss it contributes; that extra
/// part is checked for finiteness but left out of the returned value, the
/// sample-weighted mean of the per-batch data losses.
pub fn train_epoch(
    net: &mut Network,
    ds: &Dataset,
    opt: &mut Sgd,
    batch_size: usize,
    seed: u64,
    epoch: u32,
    mut extra_grad: impl FnMut(&Network, &mut Grads) -> Result<f64>,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for batch in minibatches(ds, batch_size, seed, epoch)? {
        let (loss, mut grads) = net.loss_and_grads(&batch.inputs, &batch.labels)?;
        let extra = extra_grad(net, &mut grads)?;
        if !(loss + extra).is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss became {} in epoch {epoch}",
                loss + extra
            )));
        }
        opt.step(net, &grads)?;
        total += loss * batch.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Plain loss epoch with no extra terms.
pub fn sgd_epoch(
    net: &mut Network,
    ds: &Dataset,
    opt: &mut Sgd,
    batch_size: usize,
    seed: u64,
    epoch: u32,
) -> Result<f64> {
    train_epoch(net, ds, opt, batch_size, seed, epoch, |_, _| Ok(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_classification, Split};
    use crate::nn::{Activation, LayerSpec};
    use rand::SeedableRng;

    fn net(seed: u64) -> Network {
        let specs = [
            LayerSpec::DenseFc {
                inputs: 4,
                outputs: 8,
                activation: Activation::Relu,
                tt: None,
            },
            LayerSpec::DenseFc {
                inputs: 8,
                outputs: 3,
                activation: Activation::None,
                tt: None,
            },
        ];
        Network::from_specs(&specs, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn evaluate_matches_per_sample_loop() {
        let ds = synth_classification(3, 2500, 4, 3).unwrap();
        let n = net(1);
        let mut correct = 0;
        for i in 0..ds.len() {
            let logits = n.predict(ds.sample(i), 1).unwrap();
            let mut best = 0;
            for c in 1..logits.len() {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            correct += (best == ds.labels()[i]) as usize;
        }
        assert_eq!(evaluate(&n, &ds).unwrap(), correct as f64 / ds.len() as f64);
    }

    #[test]
    fn constant_logits_pick_class_zero() {
        let mut n = net(2);
        for layer in n.layers_mut() {
            for p in layer.params_mut() {
                p.data_mut().fill(0.0);
            }
        }
        let ds = Dataset::new(vec![0.0; 16], vec![0, 1, 0, 1], vec![4], Split::Test).unwrap();
        assert_eq!(evaluate(&n, &ds).unwrap(), 0.5);
        let empty = Dataset::new(vec![], vec![], vec![4], Split::Test).unwrap();
        assert!(matches!(evaluate(&n, &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn training_learns_clusters() {
        let ds = synth_classification(4, 300, 4, 3).unwrap();
        let mut n = net(3);
        let mut opt = Sgd::new(0.05, 0.9);
        for e in 0..5 {
            sgd_epoch(&mut n, &ds, &mut opt, 16, 11, e).unwrap();
        }
        assert!(evaluate(&n, &ds).unwrap() > 0.95);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = synth_classification(4, 100, 4, 3).unwrap();
        let mut n = net(3);
        let mut opt = Sgd::new(1e6, 0.9);
        let mut failed = false;
        for e in 0..20 {
            if let Err(err) = sgd_epoch(&mut n, &ds, &mut opt, 10, 0, e) {
                assert!(matches!(err, Error::NonFinite(_)));
                failed = true;
                break;
            }
        }
        assert!(failed);
    }
}
