//! Backbone plus per-layer prediction heads.

mod head;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anchors::{generate_default_boxes, DefaultBoxSet, LayerSpec};
use crate::error::{Error, Result};
use crate::nn::{Real, Tape, Tensor, Var};
use crate::raster::Raster;

pub use head::{HeadConfig, HeadOutputs, LayerOutputs, Part, PoseSharing};
pub use train::{
    lr_at, train_step, LabeledImage, Sgd, SgdConfig, StepOutcome,
};

/// One backbone convolution (stride 1, same padding) followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// Feed this stage's activation to a prediction layer.
    #[serde(default)]
    pub predict: bool,
    /// 2x2 max pooling after the stage (after the prediction tap).
    #[serde(default)]
    pub pool: bool,
}

fn default_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Square input side in pixels.
    pub input_size: usize,
    pub input_channels: usize,
    pub stages: Vec<Stage>,
}

impl NetworkSpec {
    /// Default toy backbone for 64x64 input: prediction taps at 8x8 and 4x4.
    pub fn toy(input_size: usize, input_channels: usize) -> Self {
        let s = |channels, predict, pool| Stage {
            channels,
            kernel: 3,
            predict,
            pool,
        };
        Self {
            input_size,
            input_channels,
            stages: vec![
                s(8, false, true),
                s(16, false, true),
                s(32, false, true),
                s(32, true, true),
                s(64, true, false),
            ],
        }
    }

    /// Spatial size at each prediction tap.
    pub fn prediction_grids(&self) -> Vec<usize> {
        let mut size = self.input_size;
        let mut grids = Vec::new();
        for st in &self.stages {
            if st.predict {
                grids.push(size);
            }
            if st.pool {
                size /= 2;
            }
        }
        grids
    }

    pub fn validate(&self, layers: &[LayerSpec]) -> Result<()> {
        if self.input_size == 0 || self.input_channels == 0 {
            return Err(Error::Config("input size and channels must be positive".into()));
        }
        let mut size = self.input_size;
        for (i, st) in self.stages.iter().enumerate() {
            if st.channels == 0 || !(st.kernel == 1 || st.kernel == 3) {
                return Err(Error::Config(format!(
                    "stage {i}: needs positive channels and a 1x1 or 3x3 kernel"
                )));
            }
            if st.pool {
                if !size.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "stage {i}: cannot pool odd spatial size {size}"
                    )));
                }
                size /= 2;
            }
        }
        let grids = self.prediction_grids();
        if grids.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "prediction layers must strictly decrease in resolution, got {grids:?}"
            )));
        }
        let anchor_grids: Vec<(usize, usize)> =
            layers.iter().map(|l| (l.grid_h, l.grid_w)).collect();
        let net_grids: Vec<(usize, usize)> = grids.iter().map(|&g| (g, g)).collect();
        if anchor_grids != net_grids {
            return Err(Error::Config(format!(
                "prediction grids {net_grids:?} do not match anchor grids {anchor_grids:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Per-box predictions of one image, in default-box order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub class_logits: Vec<Vec<f64>>,
    pub loc: Vec<[f64; 4]>,
    pub pose_logits: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }
}

#[derive(Debug)]
pub struct Forward {
    pub outputs: HeadOutputs,
    /// Tape nodes of the parameters, aligned with [`Network::params`].
    pub params: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub head: HeadConfig,
    pub layers: Vec<LayerSpec>,
    params: Vec<Param<T>>,
    defaults: DefaultBoxSet,
}

/// FNV-1a of a parameter name.
fn name_stream(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl<T: Real> Network<T> {
    /// Validate the configuration and draw He-initialized weights from `seed`.
    ///
    /// Every parameter draws from its own stream keyed by its name, so the
    /// backbone, class and loc weights do not depend on the pose head size.
    pub fn build(
        spec: NetworkSpec,
        head: HeadConfig,
        layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Self> {
        let shapes = Self::param_shapes(&spec, &head, &layers)?;
        let params = shapes
            .into_iter()
            .map(|(name, shape)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(name_stream(&name));
                let value = if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive std");
                    let n = shape.iter().product();
                    let data = (0..n)
                        .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
                        .collect();
                    Tensor::new(shape, data).expect("shape product")
                };
                Param { name, value }
            })
            .collect();
        let defaults = generate_default_boxes(&layers)?;
        Ok(Self {
            spec,
            head,
            layers,
            params,
            defaults,
        })
    }

    /// Network with the given parameters; names and shapes must match the
    /// configuration exactly.
    pub fn from_params(
        spec: NetworkSpec,
        head: HeadConfig,
        layers: Vec<LayerSpec>,
        params: Vec<Param<T>>,
    ) -> Result<Self> {
        let shapes = Self::param_shapes(&spec, &head, &layers)?;
        if shapes.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if name != &p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    name,
                    shape
                )));
            }
        }
        let defaults = generate_default_boxes(&layers)?;
        Ok(Self {
            spec,
            head,
            layers,
            params,
            defaults,
        })
    }

    fn param_shapes(
        spec: &NetworkSpec,
        head: &HeadConfig,
        layers: &[LayerSpec],
    ) -> Result<Vec<(String, Vec<usize>)>> {
        spec.validate(layers)?;
        head.validate()?;
        let bpc: Vec<usize> = layers.iter().map(LayerSpec::boxes_per_cell).collect();
        if head.boxes_per_cell != bpc {
            return Err(Error::Config(format!(
                "head boxes per cell {:?} do not match anchor layers {:?}",
                head.boxes_per_cell, bpc
            )));
        }
        let mut shapes = Vec::new();
        let mut c_in = spec.input_channels;
        let mut taps = Vec::new();
        for (i, st) in spec.stages.iter().enumerate() {
            shapes.push((format!("stage{i}.weight"), vec![st.channels, c_in, st.kernel, st.kernel]));
            shapes.push((format!("stage{i}.bias"), vec![st.channels]));
            c_in = st.channels;
            if st.predict {
                taps.push(st.channels);
            }
        }
        for (l, (&c, &a)) in taps.iter().zip(&bpc).enumerate() {
            for (part, k) in [
                ("class", head.class_channels()),
                ("loc", 4),
                ("pose", head.pose_channels()),
            ] {
                shapes.push((format!("head{l}.{part}.weight"), vec![a * k, c, 3, 3]));
                shapes.push((format!("head{l}.{part}.bias"), vec![a * k]));
            }
        }
        Ok(shapes)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn defaults(&self) -> &DefaultBoxSet {
        &self.defaults
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            head: self.head.clone(),
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            defaults: self.defaults.clone(),
        }
    }

    /// Record a forward pass on `tape`. With `trainable`, parameters become
    /// gradient-carrying leaves.
    pub fn forward(&self, tape: &mut Tape<T>, image: &Raster, trainable: bool) -> Result<Forward> {
        let expected = [self.spec.input_channels, self.spec.input_size, self.spec.input_size];
        let got = [image.channels, image.height, image.width];
        if got != expected {
            return Err(Error::InvalidArgument(format!(
                "image is {got:?} (C, H, W) but the network expects {expected:?}"
            )));
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        let input = Tensor::new(
            expected.to_vec(),
            image.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )?;
        let mut x = tape.constant(input);
        let mut next = 0;
        let mut taps = Vec::new();
        for st in &self.spec.stages {
            let (w, b) = (params[next], params[next + 1]);
            next += 2;
            let pad = st.kernel / 2;
            x = tape.conv2d(x, w, b, 1, pad)?;
            x = tape.relu(x);
            if st.predict {
                taps.push(x);
            }
            if st.pool {
                x = tape.max_pool2(x)?;
            }
        }
        let mut layers = Vec::with_capacity(taps.len());
        for (tap, spec) in taps.into_iter().zip(&self.layers) {
            let mut maps = [None; 3];
            for m in &mut maps {
                let (w, b) = (params[next], params[next + 1]);
                next += 2;
                *m = Some(tape.conv2d(tap, w, b, 1, 1)?);
            }
            let [class, loc, pose] = maps.map(|m| m.expect("filled"));
            layers.push(LayerOutputs {
                class,
                loc,
                pose,
                grid_h: spec.grid_h,
                grid_w: spec.grid_w,
                boxes_per_cell: spec.boxes_per_cell(),
            });
        }
        Ok(Forward {
            outputs: HeadOutputs {
                layers,
                head: self.head.clone(),
            },
            params,
        })
    }

    /// Per-box predictions for one image.
    pub fn predict(&self, image: &Raster) -> Result<Predictions> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, image, false)?;
        let to_f64 = |v: Vec<T>| -> Vec<f64> {
            v.into_iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
        };
        let n = self.defaults.len();
        let mut out = Predictions {
            class_logits: Vec::with_capacity(n),
            loc: Vec::with_capacity(n),
            pose_logits: Vec::with_capacity(n),
        };
        for o in self.defaults.origins() {
            out.class_logits
                .push(to_f64(fwd.outputs.values(&tape, o, Part::Class)));
            let loc = to_f64(fwd.outputs.values(&tape, o, Part::Loc));
            out.loc.push([loc[0], loc[1], loc[2], loc[3]]);
            out.pose_logits
                .push(to_f64(fwd.outputs.values(&tape, o, Part::Pose)));
        }
        Ok(out)
    }

    pub fn predict_batch(&self, images: &[Raster]) -> Result<Vec<Predictions>> {
        images.iter().map(|im| self.predict(im)).collect()
    }
}
