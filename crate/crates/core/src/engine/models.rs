//! The heatmap U-Net and the coordinate-regression CNN baseline.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::optim::ParamStore;
use crate::engine::tape::{Tape, Var};
use crate::engine::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Side length of the heatmap and of the network input.
pub const RESOLUTION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetSpec {
    pub in_channels: usize,
    /// Width of the first encoder level; doubles per level.
    pub base_channels: usize,
    /// Number of encoder levels (and pooling steps) before the bottleneck.
    pub depth: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 16,
            depth: 3,
        }
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(Error::Config("U-Net extents must be positive".into()));
        }
        if self.depth > 6 || RESOLUTION % (1 << self.depth) != 0 {
            return Err(Error::Config(format!(
                "resolution {RESOLUTION} is not divisible by 2^{}",
                self.depth
            )));
        }
        Ok(())
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnBaselineSpec {
    pub in_channels: usize,
    /// Output channels of each conv → ReLU → 2×2 max-pool stage.
    pub stage_channels: Vec<usize>,
    pub hidden: usize,
}

impl Default for CnnBaselineSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stage_channels: vec![8, 16, 32],
            hidden: 64,
        }
    }
}

impl CnnBaselineSpec {
    pub const OUTPUTS: usize = 3;

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_channels.len();
        if self.in_channels == 0
            || self.hidden == 0
            || n == 0
            || n > 6
            || self.stage_channels.contains(&0)
        {
            return Err(Error::Config("invalid CNN baseline layout".into()));
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        let side = RESOLUTION >> self.stage_channels.len();
        self.stage_channels.last().copied().unwrap_or(0) * side * side
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Unet(UNetSpec),
    Cnn(CnnBaselineSpec),
}

impl Architecture {
    pub fn in_channels(&self) -> usize {
        match self {
            Architecture::Unet(s) => s.in_channels,
            Architecture::Cnn(s) => s.in_channels,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Unet(_) => "unet",
            Architecture::Cnn(_) => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

struct Init<T: Scalar> {
    rng: ChaCha8Rng,
    store: ParamStore<T>,
}

impl<T: Scalar> Init<T> {
    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize) {
        let fan_in = (c_in * k * k) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let w = (0..c_out * c_in * k * k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::from_f64_lossy(z * scale)
            })
            .collect();
        self.store
            .push(format!("{name}.weight"), Tensor::from_vec(&[c_out, c_in, k, k], w).unwrap());
        self.store
            .push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
    }

    fn dense(&mut self, name: &str, out: usize, inp: usize) {
        let scale = (2.0 / inp as f64).sqrt();
        let w = (0..out * inp)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::from_f64_lossy(z * scale)
            })
            .collect();
        self.store
            .push(format!("{name}.weight"), Tensor::from_vec(&[out, inp], w).unwrap());
        self.store.push(format!("{name}.bias"), Tensor::zeros(&[out]));
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            store: ParamStore::new(),
        };
        match &arch {
            Architecture::Unet(s) => {
                s.validate()?;
                let mut c_prev = s.in_channels;
                for l in 1..=s.depth {
                    let c = s.level_channels(l);
                    init.conv(&format!("enc{l}.conv1"), c, c_prev, 3);
                    init.conv(&format!("enc{l}.conv2"), c, c, 3);
                    c_prev = c;
                }
                let cb = s.level_channels(s.depth + 1);
                init.conv("bottleneck.conv1", cb, c_prev, 3);
                init.conv("bottleneck.conv2", cb, cb, 3);
                c_prev = cb;
                for l in (1..=s.depth).rev() {
                    let c = s.level_channels(l);
                    init.conv(&format!("dec{l}.up"), c, c_prev, 3);
                    init.conv(&format!("dec{l}.conv1"), c, 2 * c, 3);
                    init.conv(&format!("dec{l}.conv2"), c, c, 3);
                    c_prev = c;
                }
                init.conv("head", 1, c_prev, 1);
            }
            Architecture::Cnn(s) => {
                s.validate()?;
                let mut c_prev = s.in_channels;
                for (i, &c) in s.stage_channels.iter().enumerate() {
                    init.conv(&format!("cnn.stage{}", i + 1), c, c_prev, 3);
                    c_prev = c;
                }
                init.dense("cnn.fc", s.hidden, s.flat_features());
                init.dense("cnn.out", CnnBaselineSpec::OUTPUTS, s.hidden);
            }
        }
        Ok(Self {
            arch,
            params: init.store,
        })
    }

    /// Rebuilds the architecture from parameter names and shapes alone.
    pub fn from_params(params: ParamStore<T>) -> Result<Self> {
        let arch = infer_architecture(&params)?;
        let reference = Network::<T>::new(arch.clone(), 0)?;
        let expected: Vec<_> = reference
            .params
            .iter()
            .map(|p| (p.name.as_str(), p.value.shape()))
            .collect();
        let got: Vec<_> = params
            .iter()
            .map(|p| (p.name.as_str(), p.value.shape()))
            .collect();
        if expected != got {
            return Err(Error::Schema(
                "checkpoint parameters do not match the inferred architecture".into(),
            ));
        }
        Ok(Self { arch, params })
    }

    /// Expected per-sample input shape (C, H, W).
    pub fn input_shape(&self) -> [usize; 3] {
        [self.arch.in_channels(), RESOLUTION, RESOLUTION]
    }

    /// Records all parameters as trainable leaves, in store order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Builds the forward graph for `x` using parameter leaves from [`bind`](Self::bind).
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let [n, c, h, w] = tape.value(x).dims4()?;
        if c != self.arch.in_channels() || h != RESOLUTION || w != RESOLUTION {
            return Err(Error::shape(format!(
                "network expects (N, {}, {RESOLUTION}, {RESOLUTION}) input, got {:?}",
                self.arch.in_channels(),
                [n, c, h, w]
            )));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Schema("parameter binding does not match network".into()));
        }
        let lookup: HashMap<&str, Var> = self
            .params
            .iter()
            .zip(vars)
            .map(|(p, &v)| (p.name.as_str(), v))
            .collect();
        let p = |name: String| -> Result<Var> {
            lookup
                .get(name.as_str())
                .copied()
                .ok_or_else(|| Error::Schema(format!("missing parameter {name}")))
        };
        let conv = |tape: &mut Tape<T>, name: &str, x: Var| -> Result<Var> {
            tape.conv2d(x, p(format!("{name}.weight"))?, p(format!("{name}.bias"))?)
        };
        let conv_relu = |tape: &mut Tape<T>, name: &str, x: Var| -> Result<Var> {
            let y = conv(tape, name, x)?;
            Ok(tape.relu(y))
        };

        match &self.arch {
            Architecture::Unet(s) => {
                let mut skips = Vec::with_capacity(s.depth);
                let mut h = x;
                for l in 1..=s.depth {
                    h = conv_relu(tape, &format!("enc{l}.conv1"), h)?;
                    h = conv_relu(tape, &format!("enc{l}.conv2"), h)?;
                    skips.push(h);
                    h = tape.maxpool2d(h)?;
                }
                h = conv_relu(tape, "bottleneck.conv1", h)?;
                h = conv_relu(tape, "bottleneck.conv2", h)?;
                for l in (1..=s.depth).rev() {
                    h = tape.upsample2x(h)?;
                    h = conv_relu(tape, &format!("dec{l}.up"), h)?;
                    h = tape.concat_channels(skips[l - 1], h)?;
                    h = conv_relu(tape, &format!("dec{l}.conv1"), h)?;
                    h = conv_relu(tape, &format!("dec{l}.conv2"), h)?;
                }
                let logits = conv(tape, "head", h)?;
                Ok(tape.sigmoid(logits))
            }
            Architecture::Cnn(s) => {
                let mut h = x;
                for i in 1..=s.stage_channels.len() {
                    h = conv_relu(tape, &format!("cnn.stage{i}"), h)?;
                    h = tape.maxpool2d(h)?;
                }
                h = tape.flatten(h)?;
                h = tape.linear(h, p("cnn.fc.weight".into())?, p("cnn.fc.bias".into())?)?;
                h = tape.relu(h);
                tape.linear(h, p("cnn.out.weight".into())?, p("cnn.out.bias".into())?)
            }
        }
    }

    /// Inference without gradients. Batch items are processed in parallel
    /// chunks; the output is identical to a single full-batch forward.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, ..] = images.dims4()?;
        const CHUNK: usize = 8;
        let chunks = n.div_ceil(CHUNK);
        let outs = par::map_range(chunks, |ci| -> Result<Tensor<T>> {
            let lo = ci * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let items: Vec<Tensor<T>> = (lo..hi)
                .map(|i| images.batch_item(i))
                .collect::<Result<_>>()?;
            let batch = Tensor::concat_batch(&items)?;
            let mut tape = Tape::new();
            let vars: Vec<Var> = self
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect();
            let x = tape.constant(batch);
            let y = self.forward(&mut tape, &vars, x)?;
            Ok(tape.value(y).clone())
        });
        let outs: Vec<Tensor<T>> = outs.into_iter().collect::<Result<_>>()?;
        Tensor::concat_batch(&outs)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}

fn infer_architecture<T: Scalar>(params: &ParamStore<T>) -> Result<Architecture> {
    let shape = |name: &str| -> Result<Vec<usize>> { Ok(params.value(name)?.shape().to_vec()) };
    if params.get("head.weight").is_some() {
        let first = shape("enc1.conv1.weight")?;
        let depth = (1..)
            .take_while(|l| params.get(&format!("enc{l}.conv1.weight")).is_some())
            .count();
        Ok(Architecture::Unet(UNetSpec {
            in_channels: first[1],
            base_channels: first[0],
            depth,
        }))
    } else if params.get("cnn.out.weight").is_some() {
        let mut stage_channels = Vec::new();
        let mut in_channels = 0;
        for i in 1.. {
            let Some(p) = params.get(&format!("cnn.stage{i}.weight")) else { break };
            if i == 1 {
                in_channels = p.value.shape()[1];
            }
            stage_channels.push(p.value.shape()[0]);
        }
        let hidden = shape("cnn.fc.weight")?[0];
        Ok(Architecture::Cnn(CnnBaselineSpec {
            in_channels,
            stage_channels,
            hidden,
        }))
    } else {
        Err(Error::Schema("unrecognized parameter layout".into()))
    }
}
