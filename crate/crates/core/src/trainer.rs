//! Training loop with deterministic, resumable batch sampling.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{Checkpoint, RunConfig};
use crate::net::{lr_at, train_step, LabeledImage, Network, Sgd};
use crate::targets::{sample_patch, LossBreakdown};

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl fmt::Display for StepRecord {
    /// `key=value` log line; `l_cls`, `l_loc`, `l_pose` are unnormalized sums.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "step={} l_cls={} l_loc={} l_pose={} n_matched={} l_total={} lr={} skipped={}",
            self.step, l.l_cls, l.l_loc, l.l_pose, l.n_matched, l.l_total, self.lr, l.skipped
        )
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub net: Network<f32>,
    pub opt: Sgd<f32>,
    /// Steps completed so far.
    pub step: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let m = &config.model;
        let net = Network::build(m.network_spec(), m.head_config(), m.layer_specs(), m.init_seed)?;
        let opt = Sgd::new(config.optim, &net);
        Ok(Self {
            config,
            net,
            opt,
            step: 0,
        })
    }

    /// Continue from a checkpoint. Training settings (`train`, `optim`,
    /// `loss`) come from `config`; the architecture always comes from the
    /// checkpoint.
    pub fn resume(ck: Checkpoint, config: Option<RunConfig>) -> Result<Self> {
        let mut cfg = config.unwrap_or_else(|| ck.config.clone());
        cfg.model = ck.config.model.clone();
        cfg.validate()?;
        let mut opt = Sgd::new(cfg.optim, &ck.net);
        if let Some(v) = ck.velocity {
            opt.velocity = v;
        }
        Ok(Self {
            config: cfg,
            net: ck.net,
            opt,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            net: self.net.clone(),
            velocity: Some(self.opt.velocity.clone()),
        }
    }

    /// Batch for 0-based `step`. Depends only on the data, the training
    /// seed, and `step`, so a resumed run sees the same batches.
    pub fn batch(&self, data: &[LabeledImage], step: u64) -> Vec<LabeledImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.train.seed);
        rng.set_stream(step);
        (0..self.config.train.batch_size)
            .map(|_| {
                let s = &data[rng.gen_range(0..data.len())];
                let p = sample_patch(&s.image, &s.gts, &self.config.train.sampler, &mut rng);
                LabeledImage {
                    image: p.image,
                    gts: p.gts,
                }
            })
            .collect()
    }

    pub fn train_one(&mut self, data: &[LabeledImage]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let step = self.step;
        let batch = self.batch(data, step);
        let lr = lr_at(&self.config.optim, step, self.config.train.steps);
        let loss_cfg = self.config.loss;
        let outcome = train_step(&mut self.net, &batch, &mut self.opt, &loss_cfg, lr)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {}", step + 1)),
                other => other,
            })?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            lr,
            loss: outcome.loss,
        })
    }

    /// Train until `until` steps are complete, calling `on_step` after each.
    pub fn run<F>(&mut self, data: &[LabeledImage], until: u64, mut on_step: F) -> Result<()>
    where
        F: FnMut(&Trainer, &StepRecord) -> Result<()>,
    {
        while self.step < until {
            let rec = self.train_one(data)?;
            on_step(self, &rec)?;
        }
        Ok(())
    }
}
