use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;
use crate::nn::{Real, Tape, Tensor};
use crate::raster::Raster;
use crate::targets::{append_loss, match_boxes, GroundTruthObject, LossBreakdown, LossConfig, LossSums};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of training after which the learning rate is multiplied by
    /// `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_at: 0.75,
            decay_factor: 0.1,
        }
    }
}

/// Learning rate at `step` (0-based) of a `total_steps` run.
pub fn lr_at(cfg: &SgdConfig, step: u64, total_steps: u64) -> f64 {
    let boundary = (cfg.decay_at * total_steps as f64).floor() as u64;
    if step >= boundary {
        cfg.lr * cfg.decay_factor
    } else {
        cfg.lr
    }
}

/// SGD with momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new<U>(config: SgdConfig, net: &Network<U>) -> Self
    where
        U: Real,
    {
        Self {
            config,
            velocity: net
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect(),
        }
    }

    /// `v = momentum*v + (g + wd*w); w -= lr*v`
    pub fn apply(&mut self, net: &mut Network<T>, grads: &[Vec<T>], lr: f64) {
        let lr = T::from_f64_lossy(lr);
        let mu = T::from_f64_lossy(self.config.momentum);
        let wd = T::from_f64_lossy(self.config.weight_decay);
        for ((p, v), g) in net.params_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((w, v), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g) {
                *v = mu * *v + g + wd * *w;
                *w = *w - lr * *v;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Raster,
    pub gts: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub loss: LossBreakdown,
    /// False when the batch had no positives and parameters were left alone.
    pub applied: bool,
}

impl<T: Real> Network<T> {
    /// Batch loss and its gradient with respect to every parameter. The loss
    /// is normalized by the positive count of the whole batch. Gradients are
    /// `None` when the batch has no positives.
    pub fn loss_and_gradients(
        &self,
        batch: &[LabeledImage],
        loss_cfg: &LossConfig,
    ) -> Result<(LossBreakdown, Option<Vec<Vec<T>>>)> {
        let assignments: Vec<_> = batch
            .iter()
            .map(|s| match_boxes(self.defaults(), &s.gts, loss_cfg.force_best_match))
            .collect();
        let n_total: usize = assignments.iter().map(|a| a.n_positive).sum();
        let mut sums = LossSums::default();
        if n_total == 0 {
            return Ok((sums.breakdown(loss_cfg.alpha1, loss_cfg.alpha2), None));
        }

        let mut grads: Vec<Vec<T>> = self
            .params()
            .iter()
            .map(|p| vec![T::zero(); p.value.len()])
            .collect();
        for (sample, assignment) in batch.iter().zip(&assignments) {
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &sample.image, true)?;
            let (s, root) = append_loss(
                &mut tape,
                &fwd.outputs,
                self.defaults(),
                &sample.gts,
                assignment,
                loss_cfg,
                n_total as f64,
            )?;
            sums.merge(&s);
            let Some(root) = root else { continue };
            let g = tape.backward(root)?;
            for (acc, &var) in grads.iter_mut().zip(&fwd.params) {
                if let Some(gv) = g.get(var) {
                    for (a, &b) in acc.iter_mut().zip(gv) {
                        *a = *a + b;
                    }
                }
            }
        }
        let breakdown = sums.breakdown(loss_cfg.alpha1, loss_cfg.alpha2);
        if let Some(term) = breakdown.non_finite_term() {
            return Err(Error::NonFinite(format!("loss term {term}")));
        }
        for (p, g) in self.params().iter().zip(&grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        Ok((breakdown, Some(grads)))
    }
}

/// One optimization step on `batch`.
pub fn train_step<T: Real>(
    net: &mut Network<T>,
    batch: &[LabeledImage],
    opt: &mut Sgd<T>,
    loss_cfg: &LossConfig,
    lr: f64,
) -> Result<StepOutcome> {
    let (loss, grads) = net.loss_and_gradients(batch, loss_cfg)?;
    let Some(grads) = grads else {
        return Ok(StepOutcome {
            loss,
            applied: false,
        });
    };
    opt.apply(net, &grads, lr);
    for p in net.params() {
        if !p.value.all_finite() {
            return Err(Error::NonFinite(format!("parameter {} after update", p.name)));
        }
    }
    Ok(StepOutcome {
        loss,
        applied: true,
    })
}
