//! Synthetic Gaussian-cluster classification tasks: a deterministic,
//! desk-scale stand-in for real datasets. Class centers and sample noise
//! are fully determined by the task seed, and the evaluation split is
//! fixed and class-balanced.

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::{Error, Result, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalTask {
    pub n_classes: usize,
    pub input_dim: usize,
    /// Standard deviation of per-sample noise around the class center.
    #[serde(default = "default_spread")]
    pub spread: f64,
    pub seed: u64,
    /// Size of the fixed evaluation split.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
}

fn default_spread() -> f64 {
    1.0
}

fn default_n_eval() -> usize {
    800
}

// stream ids carving independent substreams out of the task seed
const STREAM_CENTERS: u64 = 101;
const STREAM_EVAL: u64 = 102;

impl EvalTask {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("task: need ≥ 2 classes".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("task: input_dim must be positive".into()));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::Config(format!("task: bad spread {}", self.spread)));
        }
        if self.n_eval < self.n_classes {
            return Err(Error::Config("task: n_eval must cover every class".into()));
        }
        Ok(())
    }

    /// Class centers, `n_classes × input_dim`.
    fn centers(&self) -> Vec<f64> {
        let mut rng = SeededRng::derive(self.seed, STREAM_CENTERS);
        (0..self.n_classes * self.input_dim).map(|_| rng.normal()).collect()
    }

    fn sample_into(
        &self,
        rng: &mut SeededRng,
        centers: &[f64],
        label: usize,
        out: &mut Vec<f64>,
    ) {
        let base = label * self.input_dim;
        for j in 0..self.input_dim {
            out.push(centers[base + j] + self.spread * rng.normal());
        }
    }

    /// The fixed, class-balanced evaluation split (label `i % n_classes`).
    pub fn eval_set(&self) -> (Tensor, Vec<usize>) {
        let centers = self.centers();
        let mut rng = SeededRng::derive(self.seed, STREAM_EVAL);
        let mut data = Vec::with_capacity(self.n_eval * self.input_dim);
        let mut labels = Vec::with_capacity(self.n_eval);
        for i in 0..self.n_eval {
            let label = i % self.n_classes;
            labels.push(label);
            self.sample_into(&mut rng, &centers, label, &mut data);
        }
        (Tensor::new(vec![self.n_eval, self.input_dim], data).unwrap(), labels)
    }

    /// Draw a fresh training batch from the given stream.
    pub fn train_batch(&self, rng: &mut SeededRng, batch: usize) -> (Tensor, Vec<usize>) {
        let centers = self.centers();
        let mut data = Vec::with_capacity(batch * self.input_dim);
        let mut labels = Vec::with_capacity(batch);
        for _ in 0..batch {
            let label = rng.below(self.n_classes);
            labels.push(label);
            self.sample_into(rng, &centers, label, &mut data);
        }
        (Tensor::new(vec![batch, self.input_dim], data).unwrap(), labels)
    }
}
