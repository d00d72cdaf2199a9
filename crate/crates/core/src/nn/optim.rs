use super::{Grads, Network};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Plain gradient step `param -= lr * grad`.
pub fn sgd_step(param: &mut DenseTensor, grad: &DenseTensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::DimensionMismatch {
            op: "sgd_step",
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v = μ v + g`, `param -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Grads>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Grads) -> Result<()> {
        if self.momentum == 0.0 {
            for (layer, lg) in net.layers_mut().iter_mut().zip(grads) {
                for (p, g) in layer.params_mut().into_iter().zip(lg) {
                    sgd_step(p, g, self.lr)?;
                }
            }
            return Ok(());
        }
        let velocity = self.velocity.get_or_insert_with(|| net.zero_grads());
        for ((layer, lg), lv) in net.layers_mut().iter_mut().zip(grads).zip(velocity.iter_mut()) {
            for ((p, g), v) in layer.params_mut().into_iter().zip(lg).zip(lv.iter_mut()) {
                if v.shape() != g.shape() {
                    return Err(Error::DimensionMismatch {
                        op: "sgd momentum",
                        left: v.shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
                for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                    *vi = self.momentum * *vi + gi;
                }
                sgd_step(p, v, self.lr)?;
            }
        }
        Ok(())
    }
}
