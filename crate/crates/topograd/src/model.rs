//! Toy feed-forward models assembled from the spec'd layer kinds. A model
//! owns its weights and offers two forward paths: a tape-recorded one for
//! training (differentiable, including through the topographic loss) and a
//! plain one for evaluation and response collection.

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::sheet::{project, CorticalSheet, LayerKind};
use crate::tape::{Tape, ValueId};
use crate::task::EvalTask;
use crate::tensor::{conv2d_raw, matmul_tb_raw};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

fn default_activation() -> Activation {
    Activation::None
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

/// Architecture description: ordered layers plus which of them receive the
/// topographic penalty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Shape of one input sample: `[d]` for vector inputs, `[c, h, w]`
    /// for image-like inputs feeding a conv stack.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Names of layers to penalize with the topographic loss.
    #[serde(default)]
    pub penalized: Vec<String>,
}

impl ModelSpec {
    /// Check layer-name uniqueness, penalized ⊆ names, and adjacent-extent
    /// compatibility; returns the output dimension.
    pub fn validate(&self) -> Result<usize> {
        if self.layers.is_empty() {
            return Err(Error::Config("model: no layers".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&e| e == 0) {
            return Err(Error::Config(format!("model: bad input shape {:?}", self.input_shape)));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if self.layers[..i].iter().any(|p| p.name == l.name) {
                return Err(Error::Config(format!("model: duplicate layer name {:?}", l.name)));
            }
        }
        for p in &self.penalized {
            if !self.layers.iter().any(|l| &l.name == p) {
                return Err(Error::Config(format!("model: penalized layer {p:?} not defined")));
            }
        }
        let mut cur = self.input_shape.clone();
        for l in &self.layers {
            cur = match l.kind {
                LayerKind::Linear { outputs, inputs } => {
                    let flat: usize = cur.iter().product();
                    if flat != inputs {
                        return Err(Error::Config(format!(
                            "model: layer {:?} expects {inputs} inputs, gets {flat}",
                            l.name
                        )));
                    }
                    vec![outputs]
                }
                LayerKind::Conv { out_channels, in_channels, kernel } => {
                    if cur.len() != 3 || cur[0] != in_channels {
                        return Err(Error::Config(format!(
                            "model: conv layer {:?} expects [{in_channels}, h, w], gets {cur:?}",
                            l.name
                        )));
                    }
                    if kernel > cur[1] || kernel > cur[2] {
                        return Err(Error::Config(format!(
                            "model: conv layer {:?} kernel {kernel} larger than input {}×{}",
                            l.name, cur[1], cur[2]
                        )));
                    }
                    vec![out_channels, cur[1] - kernel + 1, cur[2] - kernel + 1]
                }
            };
        }
        Ok(cur.iter().product())
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("unknown layer {name:?}")))
    }
}

/// One layer's parameters. Linear layers carry a bias; conv layers do not
/// (the bias is never part of the cortical sheet either way).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerParams>,
}

/// Tape handles produced by a recorded forward pass.
pub struct TapeForward {
    pub logits: ValueId,
    /// Per layer: (weight id, bias id).
    pub params: Vec<(ValueId, Option<ValueId>)>,
}

/// Per-unit responses of one layer to a stimulus batch. For linear layers
/// a unit is an output; for conv layers a unit is an output channel and
/// its response is the spatial mean of the feature map.
pub struct LayerResponses {
    pub pre: Tensor,
    pub post: Tensor,
}

enum Stage {
    Flat(Tensor),       // [batch × features]
    Spatial(Vec<Tensor>), // per-sample [c × h × w]
}

enum TapeStage {
    Flat(ValueId),
    Spatial(Vec<ValueId>),
}

impl Model {
    /// He-style init: weights `N(0, 2/fan_in)` before ReLU, `N(0, 1/fan_in)`
    /// otherwise; biases zero.
    pub fn init(spec: ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let fan_in = l.kind.depth() as f64;
            let gain = match l.activation {
                Activation::Relu => (2.0 / fan_in).sqrt(),
                Activation::None => (1.0 / fan_in).sqrt(),
            };
            let shape = l.kind.weight_shape();
            let n: usize = shape.iter().product();
            let weight = Tensor::new(shape, (0..n).map(|_| gain * rng.normal()).collect())?;
            let bias = match l.kind {
                LayerKind::Linear { outputs, .. } => Some(Tensor::zeros(&[outputs])),
                LayerKind::Conv { .. } => None,
            };
            layers.push(LayerParams { weight, bias });
        }
        Ok(Self { spec, layers })
    }

    pub fn from_parts(spec: ModelSpec, layers: Vec<LayerParams>) -> Result<Self> {
        spec.validate()?;
        if spec.layers.len() != layers.len() {
            return Err(Error::Config("model: layer/parameter count mismatch".into()));
        }
        for (ls, lp) in spec.layers.iter().zip(&layers) {
            if lp.weight.shape() != ls.kind.weight_shape().as_slice() {
                return Err(Error::Dim(format!(
                    "model: layer {:?} weights {:?} do not match {:?}",
                    ls.name,
                    lp.weight.shape(),
                    ls.kind
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn penalized_layers(&self) -> Vec<String> {
        self.spec.penalized.clone()
    }

    pub fn layer_weights(&self, name: &str) -> Result<(LayerKind, Tensor)> {
        let i = self.spec.layer_index(name)?;
        Ok((self.spec.layers[i].kind, self.layers[i].weight.clone()))
    }

    pub fn set_layer_weights(&mut self, name: &str, weights: Tensor) -> Result<()> {
        let i = self.spec.layer_index(name)?;
        if weights.shape() != self.layers[i].weight.shape() {
            return Err(Error::Dim(format!(
                "set_layer_weights: {:?} vs {:?}",
                weights.shape(),
                self.layers[i].weight.shape()
            )));
        }
        self.layers[i].weight = weights;
        Ok(())
    }

    /// The layer's weights projected onto its cortical sheet.
    pub fn sheet(&self, name: &str) -> Result<CorticalSheet> {
        let (kind, weights) = self.layer_weights(name)?;
        project(&weights, kind)
    }

    fn prepare_input(&self, x: &Tensor) -> Result<(usize, Stage)> {
        let s = x.shape();
        let flat: usize = self.spec.input_shape.iter().product();
        if s.len() != 2 || s[1] != flat {
            return Err(Error::Dim(format!(
                "forward: input {s:?} does not match input shape {:?}",
                self.spec.input_shape
            )));
        }
        let batch = s[0];
        if self.spec.input_shape.len() == 1 {
            Ok((batch, Stage::Flat(x.clone())))
        } else {
            let per: Vec<Tensor> = (0..batch)
                .map(|i| {
                    Tensor::new(
                        self.spec.input_shape.clone(),
                        x.data()[i * flat..(i + 1) * flat].to_vec(),
                    )
                    .unwrap()
                })
                .collect();
            Ok((batch, Stage::Spatial(per)))
        }
    }

    /// Tape-recorded forward pass over a `[batch × input]` matrix. All
    /// weights (and biases) are registered as trainable leaves.
    pub fn forward_tape(&self, tape: &mut Tape, x: &Tensor) -> Result<TapeForward> {
        let (_, stage) = self.prepare_input(x)?;
        let mut stage = match stage {
            Stage::Flat(t) => TapeStage::Flat(tape.constant(t)),
            Stage::Spatial(ts) => {
                TapeStage::Spatial(ts.into_iter().map(|t| tape.constant(t)).collect())
            }
        };
        let mut params = Vec::with_capacity(self.layers.len());
        for (ls, lp) in self.spec.layers.iter().zip(&self.layers) {
            let w = tape.param(lp.weight.clone());
            let b = lp.bias.as_ref().map(|b| tape.param(b.clone()));
            params.push((w, b));
            stage = match ls.kind {
                LayerKind::Linear { .. } => {
                    let flat = match stage {
                        TapeStage::Flat(id) => id,
                        TapeStage::Spatial(ids) => {
                            let rows = ids
                                .into_iter()
                                .map(|id| tape.flatten(id))
                                .collect::<Result<Vec<_>>>()?;
                            tape.concat_rows(&rows)?
                        }
                    };
                    let mut out = tape.matmul_tb(flat, w)?;
                    if let Some(b) = b {
                        out = tape.add_bias(out, b)?;
                    }
                    if ls.activation == Activation::Relu {
                        out = tape.relu(out)?;
                    }
                    TapeStage::Flat(out)
                }
                LayerKind::Conv { .. } => {
                    let ids = match stage {
                        TapeStage::Spatial(ids) => ids,
                        TapeStage::Flat(_) => {
                            return Err(Error::Config(format!(
                                "forward: conv layer {:?} after flat stage",
                                ls.name
                            )))
                        }
                    };
                    let mut outs = Vec::with_capacity(ids.len());
                    for id in ids {
                        let mut out = tape.conv2d(id, w)?;
                        if ls.activation == Activation::Relu {
                            out = tape.relu(out)?;
                        }
                        outs.push(out);
                    }
                    TapeStage::Spatial(outs)
                }
            };
        }
        let logits = match stage {
            TapeStage::Flat(id) => id,
            TapeStage::Spatial(ids) => {
                let rows =
                    ids.into_iter().map(|id| tape.flatten(id)).collect::<Result<Vec<_>>>()?;
                tape.concat_rows(&rows)?
            }
        };
        Ok(TapeForward { logits, params })
    }

    /// Plain forward pass; returns logits and per-layer unit responses.
    pub fn forward_collect(&self, x: &Tensor) -> Result<(Tensor, Vec<LayerResponses>)> {
        let (batch, mut stage) = self.prepare_input(x)?;
        let mut responses = Vec::with_capacity(self.layers.len());
        for (ls, lp) in self.spec.layers.iter().zip(&self.layers) {
            match ls.kind {
                LayerKind::Linear { outputs, inputs } => {
                    let flat = match &stage {
                        Stage::Flat(t) => t.clone(),
                        Stage::Spatial(ts) => {
                            let mut data = Vec::with_capacity(batch * inputs);
                            for t in ts {
                                data.extend_from_slice(t.data());
                            }
                            Tensor::new(vec![batch, inputs], data)?
                        }
                    };
                    let mut pre =
                        matmul_tb_raw(flat.data(), lp.weight.data(), batch, inputs, outputs);
                    if let Some(b) = &lp.bias {
                        for (i, v) in pre.iter_mut().enumerate() {
                            *v += b.data()[i % outputs];
                        }
                    }
                    let pre = Tensor::new(vec![batch, outputs], pre)?;
                    let post = match ls.activation {
                        Activation::Relu => pre.map(|v| v.max(0.0)),
                        Activation::None => pre.clone(),
                    };
                    responses.push(LayerResponses { pre: pre.clone(), post: post.clone() });
                    stage = Stage::Flat(post);
                }
                LayerKind::Conv { out_channels, in_channels, kernel } => {
                    let ts = match &stage {
                        Stage::Spatial(ts) => ts,
                        Stage::Flat(_) => {
                            return Err(Error::Config(format!(
                                "forward: conv layer {:?} after flat stage",
                                ls.name
                            )))
                        }
                    };
                    let mut outs = Vec::with_capacity(batch);
                    let mut pre_units = Vec::with_capacity(batch * out_channels);
                    let mut post_units = Vec::with_capacity(batch * out_channels);
                    for t in ts {
                        let (h, w) = (t.shape()[1], t.shape()[2]);
                        let raw = conv2d_raw(
                            t.data(),
                            (in_channels, h, w),
                            lp.weight.data(),
                            (out_channels, kernel, kernel),
                        );
                        let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                        let pre = Tensor::new(vec![out_channels, oh, ow], raw)?;
                        let post = match ls.activation {
                            Activation::Relu => pre.map(|v| v.max(0.0)),
                            Activation::None => pre.clone(),
                        };
                        let area = (oh * ow) as f64;
                        for ch in 0..out_channels {
                            let s = ch * oh * ow;
                            let e = s + oh * ow;
                            pre_units.push(pre.data()[s..e].iter().sum::<f64>() / area);
                            post_units.push(post.data()[s..e].iter().sum::<f64>() / area);
                        }
                        outs.push(post);
                    }
                    responses.push(LayerResponses {
                        pre: Tensor::new(vec![batch, out_channels], pre_units)?,
                        post: Tensor::new(vec![batch, out_channels], post_units)?,
                    });
                    stage = Stage::Spatial(outs);
                }
            }
        }
        let logits = match stage {
            Stage::Flat(t) => t,
            Stage::Spatial(ts) => {
                let n = ts[0].len();
                let mut data = Vec::with_capacity(batch * n);
                for t in &ts {
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![batch, n], data)?
            }
        };
        Ok((logits, responses))
    }

    /// Accuracy on the task's fixed evaluation split. Deterministic and
    /// idempotent; argmax ties resolve to the lowest class index.
    pub fn evaluate(&self, task: &EvalTask) -> Result<f64> {
        task.validate()?;
        let out_dim = self.spec.validate()?;
        if out_dim != task.n_classes {
            return Err(Error::Dim(format!(
                "evaluate: model emits {out_dim} logits for {} classes",
                task.n_classes
            )));
        }
        let (x, labels) = task.eval_set();
        let (logits, _) = self.forward_collect(&x)?;
        let k = task.n_classes;
        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}
