//! Config-driven training with the topographic penalty, tau sweeps,
//! evaluation, and selectivity-map reports.
//!
//! Determinism contract: identical config + seed give bitwise-identical
//! weights, logs, and downstream measurements. All randomness flows
//! through substreams of the run seed; with `tau = 0` (or no target
//! layers) the topographic path is never entered, so such a run is
//! bitwise identical to one with the penalty disabled outright.

use serde::{Deserialize, Serialize};

use crate::loss::{topo_loss, total_loss_op, TopoConfig};
use crate::metrics::{
    effective_dimensionality, pairwise_correlation_vs_distance, selectivity_map,
    structural_similarity,
};
use crate::model::{Model, ModelSpec};
use crate::rng::SeededRng;
use crate::tape::Tape;
use crate::task::EvalTask;
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Decoupled weight decay on weight matrices (biases exempt);
    /// `w ← w − lr·decay·w` each step. 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    32
}

/// Full description of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub topo: TopoConfig,
    pub optimizer: OptimizerConfig,
    pub dataset: EvalTask,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let out_dim = self.model.validate().map_err(config_err)?;
        self.topo.validate()?;
        self.dataset.validate()?;
        if out_dim != self.dataset.n_classes {
            return Err(Error::Config(format!(
                "model emits {out_dim} logits but the task has {} classes",
                self.dataset.n_classes
            )));
        }
        let flat: usize = self.model.input_shape.iter().product();
        if flat != self.dataset.input_dim {
            return Err(Error::Config(format!(
                "model input shape {:?} does not cover input_dim {}",
                self.model.input_shape, self.dataset.input_dim
            )));
        }
        if self.optimizer.steps == 0 {
            return Err(Error::Config("optimizer: steps must be ≥ 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("optimizer: learning rate must be positive".into()));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("optimizer: batch size must be ≥ 1".into()));
        }
        if self.optimizer.weight_decay < 0.0 || !self.optimizer.weight_decay.is_finite() {
            return Err(Error::Config("optimizer: weight decay must be finite and ≥ 0".into()));
        }
        for t in &self.topo.target_layers {
            if self.model.layer_index(t).is_err() {
                return Err(Error::Config(format!("topo target layer {t:?} not defined")));
            }
        }
        Ok(())
    }

    /// Layers the penalty applies to: explicit `topo.target_layers`, or
    /// the model's `penalized` list when unset.
    pub fn effective_targets(&self) -> Vec<String> {
        if self.topo.target_layers.is_empty() {
            self.model.penalized.clone()
        } else {
            self.topo.target_layers.clone()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The default desk-scale classifier: 8 Gaussian clusters in 32
    /// dimensions, one penalized 64-unit hidden layer (an 8×8 sheet).
    pub fn default_classifier(seed: u64, tau: f64) -> Self {
        use crate::model::{Activation, LayerSpec};
        use crate::sheet::LayerKind;
        TrainConfig {
            seed,
            model: ModelSpec {
                input_shape: vec![32],
                layers: vec![
                    LayerSpec {
                        name: "fc1".into(),
                        kind: LayerKind::Linear { outputs: 64, inputs: 32 },
                        activation: Activation::Relu,
                    },
                    LayerSpec {
                        name: "fc2".into(),
                        kind: LayerKind::Linear { outputs: 8, inputs: 64 },
                        activation: Activation::None,
                    },
                ],
                penalized: vec!["fc1".into()],
            },
            topo: TopoConfig { phi_h: 3.0, phi_w: 3.0, tau, target_layers: vec![] },
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                learning_rate: 1e-3,
                steps: 1200,
                batch_size: 32,
                weight_decay: 0.0,
            },
            dataset: EvalTask { n_classes: 8, input_dim: 32, spread: 1.0, seed, n_eval: 800 },
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m),
        other => Error::Config(other.to_string()),
    }
}

/// Per-step log entry: training loss plus the topographic loss of each
/// target layer (empty when the penalty is off).
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub training_loss: f64,
    pub topo_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainLog {
    pub target_layers: Vec<String>,
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,training_loss");
        for t in &self.target_layers {
            out.push_str(&format!(",topo_{t}"));
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!("{},{}", s.step, s.training_loss));
            for v in &s.topo_losses {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

// seed substreams
const STREAM_INIT: u64 = 1;
const STREAM_DATA: u64 = 2;

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Minimize task loss (+ τ·topo when enabled) with the configured
/// optimizer. Divergence (non-finite loss or weights) fails with the
/// offending step number.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = SeededRng::derive(cfg.seed, STREAM_INIT);
    let mut data_rng = SeededRng::derive(cfg.seed, STREAM_DATA);
    let mut model = Model::init(cfg.model.clone(), &mut init_rng)?;

    let targets = cfg.effective_targets();
    let topo_on = cfg.topo.tau > 0.0 && !targets.is_empty();
    let target_idx: Vec<usize> = targets
        .iter()
        .map(|t| cfg.model.layer_index(t))
        .collect::<Result<_>>()?;

    let mut adam: Vec<(AdamState, Option<AdamState>)> = model
        .layers()
        .iter()
        .map(|l| {
            (
                AdamState { m: vec![0.0; l.weight.len()], v: vec![0.0; l.weight.len()] },
                l.bias.as_ref().map(|b| AdamState { m: vec![0.0; b.len()], v: vec![0.0; b.len()] }),
            )
        })
        .collect();

    let mut log =
        TrainLog { target_layers: if topo_on { targets.clone() } else { vec![] }, steps: vec![] };

    for step in 0..cfg.optimizer.steps {
        let (x, labels) = cfg.dataset.train_batch(&mut data_rng, cfg.optimizer.batch_size);
        let step_fail = |e: Error| match e {
            Error::Numeric(reason) => Error::Training { step, reason },
            other => other,
        };

        let mut tape = Tape::new();
        let fwd = model.forward_tape(&mut tape, &x).map_err(step_fail)?;
        let ce = tape.softmax_cross_entropy(fwd.logits, &labels).map_err(step_fail)?;

        let mut topo_losses = Vec::new();
        let total = if topo_on {
            let mut sheet_ids = Vec::with_capacity(target_idx.len());
            for &li in &target_idx {
                let kind = cfg.model.layers[li].kind;
                let (h, w) = kind.grid();
                let sheet_id =
                    tape.reshape(fwd.params[li].0, vec![h, w, kind.depth()]).map_err(step_fail)?;
                sheet_ids.push(sheet_id);
            }
            let total =
                total_loss_op(&mut tape, ce, &sheet_ids, &cfg.topo).map_err(step_fail)?;
            for t in &targets {
                topo_losses.push(topo_loss(&model.sheet(t)?, &cfg.topo).map_err(step_fail)?);
            }
            total
        } else {
            ce
        };

        log.steps.push(StepRecord {
            step,
            training_loss: tape.value(ce).item(),
            topo_losses,
        });

        let grads = tape.backward(total).map_err(step_fail)?;
        let lr = cfg.optimizer.learning_rate;
        let decay = cfg.optimizer.weight_decay;
        let t_adam = (step + 1) as f64;
        for (li, (wid, bid)) in fwd.params.iter().enumerate() {
            let gw = grads.for_param(*wid);
            let gb = bid.map(|b| grads.for_param(b));
            let layer = &mut model_layers_mut(&mut model)[li];
            if decay > 0.0 {
                for w in layer.weight.data_mut() {
                    *w -= lr * decay * *w;
                }
            }
            match cfg.optimizer.kind {
                OptimizerKind::Sgd => {
                    sgd_update(layer.weight.data_mut(), gw.data(), lr);
                    if let (Some(bias), Some(gb)) = (&mut layer.bias, &gb) {
                        sgd_update(bias.data_mut(), gb.data(), lr);
                    }
                }
                OptimizerKind::Adam => {
                    adam_update(layer.weight.data_mut(), gw.data(), &mut adam[li].0, lr, t_adam);
                    if let (Some(bias), Some(gb), Some(state)) =
                        (&mut layer.bias, &gb, &mut adam[li].1)
                    {
                        adam_update(bias.data_mut(), gb.data(), state, lr, t_adam);
                    }
                }
            }
            if !layer.weight.is_finite() {
                return Err(Error::Training {
                    step,
                    reason: "weights diverged to NaN/Inf".into(),
                });
            }
        }
    }
    Ok(TrainOutcome { model, log })
}

// Model field access for the optimizer; kept out of Model's public API.
fn model_layers_mut(model: &mut Model) -> &mut [crate::model::LayerParams] {
    model.layers_mut()
}

fn sgd_update(w: &mut [f64], g: &[f64], lr: f64) {
    for (wv, gv) in w.iter_mut().zip(g) {
        *wv -= lr * gv;
    }
}

fn adam_update(w: &mut [f64], g: &[f64], state: &mut AdamState, lr: f64, t: f64) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let bc1 = 1.0 - B1.powf(t);
    let bc2 = 1.0 - B2.powf(t);
    for i in 0..w.len() {
        state.m[i] = B1 * state.m[i] + (1.0 - B1) * g[i];
        state.v[i] = B2 * state.v[i] + (1.0 - B2) * g[i] * g[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        w[i] -= lr * mhat / (vhat.sqrt() + EPS);
    }
}

/// Accuracy of a model on a task (see [`Model::evaluate`]).
pub fn eval(model: &Model, task: &EvalTask) -> Result<f64> {
    model.evaluate(task)
}

/// Smoothness and effective dimensionality of one layer's post-activation
/// responses to the task's evaluation stimuli.
pub fn layer_metrics(model: &Model, task: &EvalTask, layer: &str, bins: usize) -> Result<(f64, f64)> {
    let li = model.spec().layer_index(layer)?;
    let (x, _) = task.eval_set();
    let (_, responses) = model.forward_collect(&x)?;
    let resp = &responses[li].post;
    let sheet = model.sheet(layer)?;
    let curve = pairwise_correlation_vs_distance(&sheet.positions(), resp, bins)?;
    let ed = effective_dimensionality(resp)?;
    Ok((curve.smoothness, ed))
}

/// One row of a tau sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub tau: f64,
    pub accuracy: f64,
    pub smoothness: f64,
    pub effective_dimensionality: f64,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// (tau, error) for runs that failed; the sweep continues past them.
    pub failures: Vec<(f64, String)>,
}

impl SweepOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,accuracy,smoothness,effective_dimensionality\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.tau, r.accuracy, r.smoothness, r.effective_dimensionality
            ));
        }
        out
    }
}

/// Train/evaluate/measure once per tau, sharing the base seed. Metrics are
/// taken on the first target layer.
pub fn sweep(base: &TrainConfig, taus: &[f64], bins: usize) -> Result<SweepOutcome> {
    if taus.len() < 3 || !taus.contains(&0.0) {
        return Err(Error::Config("sweep: need ≥ 3 tau values including 0".into()));
    }
    let targets = base.effective_targets();
    let layer = targets
        .first()
        .ok_or_else(|| Error::Config("sweep: no penalized layer to measure".into()))?
        .clone();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &tau in taus {
        let mut cfg = base.clone();
        cfg.topo.tau = tau;
        let run = || -> Result<SweepRow> {
            let outcome = train(&cfg)?;
            let accuracy = outcome.model.evaluate(&cfg.dataset)?;
            let (smoothness, ed) = layer_metrics(&outcome.model, &cfg.dataset, &layer, bins)?;
            Ok(SweepRow { tau, accuracy, smoothness, effective_dimensionality: ed })
        };
        match run() {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((tau, e.to_string())),
        }
    }
    Ok(SweepOutcome { rows, failures })
}

/// Selectivity t-maps of every layer for a set of stimulus groups, plus
/// per-layer structural-similarity matrices between the group maps.
pub struct LayerMaps {
    pub layer: String,
    pub h: usize,
    pub w: usize,
    pub groups: Vec<String>,
    /// One `h×w` t-map per group.
    pub t_maps: Vec<Tensor>,
    /// Pairwise structural similarity between maps; `None` when the sheet
    /// is smaller than the 7×7 SSIM window or a map has zero range.
    pub similarity: Option<Tensor>,
}

pub struct SelectivityMaps {
    pub layers: Vec<LayerMaps>,
}

/// Contrast each group's responses against the pooled rest, per unit,
/// rendering Welch t-values over each layer's sheet. Unit responses are
/// pre-activation, so dead ReLU units cannot degenerate the group
/// statistics.
pub fn report_maps(model: &Model, groups: &[(String, Tensor)]) -> Result<SelectivityMaps> {
    if groups.len() < 2 {
        return Err(Error::Config("report_maps: need ≥ 2 stimulus groups".into()));
    }
    // responses[g][l] = pre-activation [n_g × units] of layer l on group g
    let mut responses: Vec<Vec<Tensor>> = Vec::with_capacity(groups.len());
    for (_, stimuli) in groups {
        let (_, per_layer) = model.forward_collect(stimuli)?;
        responses.push(per_layer.into_iter().map(|r| r.pre).collect());
    }
    let mut layers = Vec::new();
    for (li, ls) in model.spec().layers.iter().enumerate() {
        let (h, w) = ls.kind.grid();
        let units = ls.kind.units();
        let mut t_maps = Vec::with_capacity(groups.len());
        for g in 0..groups.len() {
            let target = &responses[g][li];
            // pool the other groups
            let mut pooled = Vec::new();
            let mut n_other = 0;
            for (og, resp) in responses.iter().enumerate() {
                if og != g {
                    pooled.extend_from_slice(resp[li].data());
                    n_other += resp[li].shape()[0];
                }
            }
            let other = Tensor::new(vec![n_other, units], pooled)?;
            let ts = selectivity_map(target, &other)?;
            t_maps.push(Tensor::new(vec![h, w], ts)?);
        }
        let similarity = similarity_matrix(&t_maps, h, w);
        layers.push(LayerMaps {
            layer: ls.name.clone(),
            h,
            w,
            groups: groups.iter().map(|(n, _)| n.clone()).collect(),
            t_maps,
            similarity,
        });
    }
    Ok(SelectivityMaps { layers })
}

fn similarity_matrix(maps: &[Tensor], h: usize, w: usize) -> Option<Tensor> {
    if h < 7 || w < 7 {
        return None;
    }
    let g = maps.len();
    let mut out = Tensor::zeros(&[g, g]);
    for i in 0..g {
        out.data_mut()[i * g + i] = 1.0;
        for j in i + 1..g {
            match structural_similarity(&maps[i], &maps[j]) {
                Ok(v) => {
                    out.data_mut()[i * g + j] = v;
                    out.data_mut()[j * g + i] = v;
                }
                Err(_) => return None,
            }
        }
    }
    Some(out)
}

/// Render an `h×w` map as CSV grid lines.
pub fn map_csv(map: &Tensor) -> String {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = String::new();
    for r in 0..h {
        for c in 0..w {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", map.at2(r, c)));
        }
        out.push('\n');
    }
    out
}
