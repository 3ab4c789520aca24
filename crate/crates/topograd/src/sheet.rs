//! Cortical sheets: 2D grid arrangements of a layer's output units.
//!
//! A linear layer with `o` outputs and `i` inputs maps onto an `h×w×i`
//! sheet with `h·w == o`; a conv layer with `c_out` output channels maps
//! onto `h×w×(c_in·k·k)`. Units are placed row-major (output unit `u`
//! lands at grid cell `(u / w, u % w)`), which makes both projections a
//! pure reshape: bitwise-exact and trivially invertible.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

/// Layer family a sheet was projected from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    /// `W ∈ R^{outputs×inputs}`.
    Linear { outputs: usize, inputs: usize },
    /// `W ∈ R^{out_channels×in_channels×kernel×kernel}`.
    Conv { out_channels: usize, in_channels: usize, kernel: usize },
}

impl LayerKind {
    /// Number of units arranged on the sheet grid.
    pub fn units(&self) -> usize {
        match *self {
            LayerKind::Linear { outputs, .. } => outputs,
            LayerKind::Conv { out_channels, .. } => out_channels,
        }
    }

    /// Weights per unit (sheet depth).
    pub fn depth(&self) -> usize {
        match *self {
            LayerKind::Linear { inputs, .. } => inputs,
            LayerKind::Conv { in_channels, kernel, .. } => in_channels * kernel * kernel,
        }
    }

    /// Weight-tensor shape for this layer.
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Linear { outputs, inputs } => vec![outputs, inputs],
            LayerKind::Conv { out_channels, in_channels, kernel } => {
                vec![out_channels, in_channels, kernel, kernel]
            }
        }
    }

    /// Grid extents `(h, w)` for this layer's sheet.
    pub fn grid(&self) -> (usize, usize) {
        factorize_near_square(self.units())
    }
}

/// One layer's weights in sheet coordinates: an `h×w×d` tensor with one
/// grid cell per output unit and that unit's weights along depth.
#[derive(Clone, Debug, PartialEq)]
pub struct CorticalSheet {
    h: usize,
    w: usize,
    d: usize,
    data: Tensor,
}

impl CorticalSheet {
    pub fn new(h: usize, w: usize, d: usize, data: Tensor) -> Result<Self> {
        if data.shape() != [h, w, d] {
            return Err(Error::Dim(format!(
                "sheet {h}×{w}×{d} vs tensor {:?}",
                data.shape()
            )));
        }
        Ok(Self { h, w, d, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    /// Depth slice `i` as an `h×w` map.
    pub fn slice(&self, i: usize) -> Tensor {
        assert!(i < self.d);
        let mut out = Vec::with_capacity(self.h * self.w);
        for u in 0..self.h * self.w {
            out.push(self.data.data()[u * self.d + i]);
        }
        Tensor::new(vec![self.h, self.w], out).unwrap()
    }

    /// Grid coordinates of every unit, row-major.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        (0..self.h * self.w).map(|u| (u / self.w, u % self.w)).collect()
    }
}

/// Factor `o` into `h·w` with `|h − w|` minimal (ties broken `h ≤ w`),
/// minimizing the grid perimeter. Primes degenerate to a `1×o` strip.
pub fn factorize_near_square(o: usize) -> (usize, usize) {
    assert!(o >= 1, "factorize_near_square: o must be positive");
    let mut h = (o as f64).sqrt() as usize;
    // float sqrt can land one off for large squares
    while h.saturating_mul(h) > o {
        h -= 1;
    }
    while (h + 1) * (h + 1) <= o {
        h += 1;
    }
    while o % h != 0 {
        h -= 1;
    }
    (h, o / h)
}

/// Reshape a linear layer's `o×i` weight matrix onto its cortical sheet.
pub fn project_linear(weights: &Tensor) -> Result<CorticalSheet> {
    let s = weights.shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("project_linear: expected 2-D weights, got {s:?}")));
    }
    let (o, i) = (s[0], s[1]);
    let (h, w) = factorize_near_square(o);
    // row-major unit placement: unit r·w + c is row r·w + c of W, so the
    // buffer layout is already the sheet layout
    CorticalSheet::new(h, w, i, weights.reshape(vec![h, w, i])?)
}

/// Reshape a conv layer's `c_out×c_in×k×k` weights onto its cortical sheet
/// (`d = c_in·k·k`, each channel's kernel flattened row-major into depth).
pub fn project_conv(weights: &Tensor) -> Result<CorticalSheet> {
    let s = weights.shape();
    if s.len() != 4 {
        return Err(Error::Dim(format!("project_conv: expected 4-D weights, got {s:?}")));
    }
    let (c_out, d) = (s[0], s[1] * s[2] * s[3]);
    let (h, w) = factorize_near_square(c_out);
    CorticalSheet::new(h, w, d, weights.reshape(vec![h, w, d])?)
}

/// Project a weight tensor of either kind.
pub fn project(weights: &Tensor, kind: LayerKind) -> Result<CorticalSheet> {
    if weights.shape() != kind.weight_shape().as_slice() {
        return Err(Error::Dim(format!(
            "project: weights {:?} do not match {kind:?}",
            weights.shape()
        )));
    }
    match kind {
        LayerKind::Linear { .. } => project_linear(weights),
        LayerKind::Conv { .. } => project_conv(weights),
    }
}

/// Exact inverse of the matching projection.
pub fn unproject(sheet: &CorticalSheet, kind: LayerKind) -> Result<Tensor> {
    let (h, w) = kind.grid();
    if (sheet.h, sheet.w, sheet.d) != (h, w, kind.depth()) {
        return Err(Error::Dim(format!(
            "unproject: sheet {}×{}×{} does not match {kind:?} (expect {h}×{w}×{})",
            sheet.h,
            sheet.w,
            sheet.d,
            kind.depth()
        )));
    }
    sheet.data.reshape(kind.weight_shape())
}
