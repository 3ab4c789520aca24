//! The topographic loss: each depth slice of a cortical sheet is compared
//! against a blurred copy of itself via cosine similarity, and the loss is
//! the negated mean over slices. Blurring = bilinear downsample by factors
//! `(φ_h, φ_w)` followed by bilinear upsample back to the original grid, so
//! minimizing the loss drains high-spatial-frequency structure from the
//! sheet.
//!
//! Both a plain evaluator and tape-recorded (differentiable) variants are
//! provided; they share the same interpolation plans and accumulation
//! order, so their forward values agree exactly.

use serde::{Deserialize, Serialize};

use crate::sheet::CorticalSheet;
use crate::tape::{Tape, ValueId};
use crate::{Error, Result, Tensor};

/// Topographic-penalty settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopoConfig {
    /// Blur downsampling factor along sheet height (≥ 1).
    #[serde(default = "default_phi")]
    pub phi_h: f64,
    /// Blur downsampling factor along sheet width (≥ 1).
    #[serde(default = "default_phi")]
    pub phi_w: f64,
    /// Loss scale τ (≥ 0). τ = 0 reproduces baseline training exactly.
    #[serde(default)]
    pub tau: f64,
    /// Names of layers to penalize. Empty means "use the model's
    /// `penalized` list".
    #[serde(default)]
    pub target_layers: Vec<String>,
}

fn default_phi() -> f64 {
    3.0
}

impl Default for TopoConfig {
    fn default() -> Self {
        Self { phi_h: 3.0, phi_w: 3.0, tau: 0.0, target_layers: vec![] }
    }
}

impl TopoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phi_h < 1.0 || self.phi_w < 1.0 {
            return Err(Error::Config(format!(
                "blur factors must be ≥ 1 (got {}, {})",
                self.phi_h, self.phi_w
            )));
        }
        if self.tau < 0.0 || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be finite and ≥ 0 (got {})", self.tau)));
        }
        Ok(())
    }
}

/// Per-axis interpolation plan: for each output index, the two source
/// indices and the blend fraction toward the second.
#[derive(Clone, Debug)]
struct AxisPlan {
    taps: Vec<(usize, usize, f64)>,
}

impl AxisPlan {
    /// Half-pixel-center mapping `s = (t + 0.5)·(src/dst) − 0.5`, clamped
    /// to `[0, src−1]`.
    fn new(src: usize, dst: usize) -> Self {
        let ratio = src as f64 / dst as f64;
        let taps = (0..dst)
            .map(|t| {
                let s = ((t as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect();
        Self { taps }
    }
}

/// Bilinear resize plan between two 2-D grids. A linear map; `apply`
/// evaluates it (nested lerp, so constants survive bitwise) and
/// `apply_transpose` evaluates its adjoint for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ResizePlan {
    src: (usize, usize),
    dst: (usize, usize),
    rows: AxisPlan,
    cols: AxisPlan,
}

impl ResizePlan {
    pub(crate) fn new(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Self {
        Self {
            src: (src_h, src_w),
            dst: (dst_h, dst_w),
            rows: AxisPlan::new(src_h, dst_h),
            cols: AxisPlan::new(src_w, dst_w),
        }
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.shape(), &[self.src.0, self.src.1]);
        let (sw, (dh, dw)) = (self.src.1, self.dst);
        let src = x.data();
        let mut out = Vec::with_capacity(dh * dw);
        for &(r0, r1, fr) in &self.rows.taps {
            for &(c0, c1, fc) in &self.cols.taps {
                let top = lerp(src[r0 * sw + c0], src[r0 * sw + c1], fc);
                let bot = lerp(src[r1 * sw + c0], src[r1 * sw + c1], fc);
                out.push(lerp(top, bot, fr));
            }
        }
        Tensor::new(vec![dh, dw], out).unwrap()
    }

    pub(crate) fn apply_transpose(&self, g: &Tensor) -> Tensor {
        debug_assert_eq!(g.shape(), &[self.dst.0, self.dst.1]);
        let (sh, sw) = self.src;
        let dw = self.dst.1;
        let mut out = Tensor::zeros(&[sh, sw]);
        let data = out.data_mut();
        for (ri, &(r0, r1, fr)) in self.rows.taps.iter().enumerate() {
            for (ci, &(c0, c1, fc)) in self.cols.taps.iter().enumerate() {
                let gv = g.data()[ri * dw + ci];
                let d_top = gv * (1.0 - fr);
                let d_bot = gv * fr;
                data[r0 * sw + c0] += d_top * (1.0 - fc);
                data[r0 * sw + c1] += d_top * fc;
                data[r1 * sw + c0] += d_bot * (1.0 - fc);
                data[r1 * sw + c1] += d_bot * fc;
            }
        }
        out
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize of a 2-D map with half-pixel-center coordinates and
/// edge clamping.
pub fn resize_bilinear(x: &Tensor, h_out: usize, w_out: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("resize_bilinear: expected 2-D map, got {s:?}")));
    }
    if h_out == 0 || w_out == 0 {
        return Err(Error::Dim("resize_bilinear: zero output extent".into()));
    }
    Ok(ResizePlan::new(s[0], s[1], h_out, w_out).apply(x))
}

/// Tape-recorded [`resize_bilinear`].
pub fn resize_bilinear_op(tape: &mut Tape, x: ValueId, h_out: usize, w_out: usize) -> Result<ValueId> {
    let s = tape.value(x).shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("resize_bilinear: expected 2-D map, got {s:?}")));
    }
    if h_out == 0 || w_out == 0 {
        return Err(Error::Dim("resize_bilinear: zero output extent".into()));
    }
    let plan = ResizePlan::new(s[0], s[1], h_out, w_out);
    let value = plan.apply(tape.value(x));
    tape.push_op("resize_bilinear", value, vec![x], Box::new(move |g| vec![plan.apply_transpose(g)]))
}

/// Blur target extents: `round(extent/φ)`, floored at 1.
fn blur_extents(h: usize, w: usize, phi_h: f64, phi_w: f64) -> (usize, usize) {
    let down = |n: usize, phi: f64| ((n as f64 / phi).round() as usize).max(1);
    (down(h, phi_h), down(w, phi_w))
}

/// Downsample by `(φ_h, φ_w)` then upsample back to the original extents.
pub fn blur(x: &Tensor, phi_h: f64, phi_w: f64) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("blur: expected 2-D map, got {s:?}")));
    }
    if phi_h < 1.0 || phi_w < 1.0 {
        return Err(Error::Config("blur factors must be ≥ 1".into()));
    }
    let (h, w) = (s[0], s[1]);
    let (dh, dw) = blur_extents(h, w, phi_h, phi_w);
    resize_bilinear(&resize_bilinear(x, dh, dw)?, h, w)
}

/// Tape-recorded [`blur`].
pub fn blur_op(tape: &mut Tape, x: ValueId, phi_h: f64, phi_w: f64) -> Result<ValueId> {
    let s = tape.value(x).shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("blur: expected 2-D map, got {s:?}")));
    }
    if phi_h < 1.0 || phi_w < 1.0 {
        return Err(Error::Config("blur factors must be ≥ 1".into()));
    }
    let (h, w) = (s[0], s[1]);
    let (dh, dw) = blur_extents(h, w, phi_h, phi_w);
    let down = resize_bilinear_op(tape, x, dh, dw)?;
    resize_bilinear_op(tape, down, h, w)
}

/// Which depth slices take part in the loss: both the slice and its blur
/// must have nonzero norm. Dead slices contribute 0 but still count
/// toward the 1/d normalizer.
fn contributing_slices(sheet: &Tensor, h: usize, w: usize, d: usize, cfg: &TopoConfig) -> Vec<usize> {
    let mut keep = Vec::new();
    for i in 0..d {
        let mut slice = Vec::with_capacity(h * w);
        for u in 0..h * w {
            slice.push(sheet.data()[u * d + i]);
        }
        let sq: f64 = slice.iter().map(|v| v * v).sum();
        if sq == 0.0 {
            continue;
        }
        let t = Tensor::new(vec![h, w], slice).unwrap();
        let b = blur(&t, cfg.phi_h, cfg.phi_w).unwrap();
        if b.data().iter().map(|v| v * v).sum::<f64>() == 0.0 {
            continue;
        }
        keep.push(i);
    }
    keep
}

/// Negated mean cosine similarity between each depth slice and its blur:
/// `−(1/d)·Σ_i cos(C_i, blur(C_i))`. Always in `[−1, 1]`.
pub fn topo_loss(sheet: &CorticalSheet, cfg: &TopoConfig) -> Result<f64> {
    cfg.validate()?;
    let (h, w, d) = (sheet.h(), sheet.w(), sheet.d());
    let keep = contributing_slices(sheet.data(), h, w, d, cfg);
    if keep.is_empty() {
        return Err(Error::Numeric("topo_loss: all depth slices have zero norm".into()));
    }
    let mut acc = 0.0;
    for &i in &keep {
        let slice = sheet.slice(i);
        let blurred = blur(&slice, cfg.phi_h, cfg.phi_w)?;
        let dot: f64 = slice.data().iter().zip(blurred.data()).map(|(&a, &b)| a * b).sum();
        let na = slice.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = blurred.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        acc += dot / (na * nb);
    }
    Ok(acc * (-1.0 / d as f64))
}

/// Tape-recorded [`topo_loss`] over a sheet-shaped `[h×w×d]` tape value.
/// Gradient flows through both the slice and its blurred copy.
pub fn topo_loss_op(tape: &mut Tape, sheet: ValueId, cfg: &TopoConfig) -> Result<ValueId> {
    cfg.validate()?;
    let s = tape.value(sheet).shape();
    if s.len() != 3 {
        return Err(Error::Dim(format!("topo_loss: expected h×w×d sheet, got {s:?}")));
    }
    let (h, w, d) = (s[0], s[1], s[2]);
    let keep = contributing_slices(tape.value(sheet), h, w, d, cfg);
    if keep.is_empty() {
        return Err(Error::Numeric("topo_loss: all depth slices have zero norm".into()));
    }
    let mut acc: Option<ValueId> = None;
    for &i in &keep {
        let idx: Vec<usize> = (0..h * w).map(|u| u * d + i).collect();
        let slice = tape.gather(sheet, idx, vec![h, w])?;
        let blurred = blur_op(tape, slice, cfg.phi_h, cfg.phi_w)?;
        let prod = tape.mul(slice, blurred)?;
        let dot = tape.sum(prod)?;
        let aa = tape.mul(slice, slice)?;
        let na2 = tape.sum(aa)?;
        let na = tape.sqrt(na2)?;
        let bb = tape.mul(blurred, blurred)?;
        let nb2 = tape.sum(bb)?;
        let nb = tape.sqrt(nb2)?;
        let denom = tape.mul(na, nb)?;
        let cos = tape.div(dot, denom)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, cos)?,
            None => cos,
        });
    }
    tape.scale(acc.unwrap(), -1.0 / d as f64)
}

/// `L_total = L_training + τ · mean over sheets of L_topo`. With τ = 0 the
/// training loss is returned untouched (bitwise).
pub fn total_loss(training_loss: f64, sheets: &[CorticalSheet], cfg: &TopoConfig) -> Result<f64> {
    cfg.validate()?;
    if !training_loss.is_finite() {
        return Err(Error::Numeric("total_loss: non-finite training loss".into()));
    }
    if cfg.tau == 0.0 || sheets.is_empty() {
        return Ok(training_loss);
    }
    let mut acc = 0.0;
    for sheet in sheets {
        acc += topo_loss(sheet, cfg)?;
    }
    Ok(training_loss + cfg.tau * (acc * (1.0 / sheets.len() as f64)))
}

/// Tape-recorded [`total_loss`]. Sheet values must be `[h×w×d]` nodes
/// (reshaped weight leaves). With τ = 0 the training-loss node is returned
/// unchanged and nothing is recorded.
pub fn total_loss_op(
    tape: &mut Tape,
    training_loss: ValueId,
    sheets: &[ValueId],
    cfg: &TopoConfig,
) -> Result<ValueId> {
    cfg.validate()?;
    if cfg.tau == 0.0 || sheets.is_empty() {
        return Ok(training_loss);
    }
    let mut acc: Option<ValueId> = None;
    for &sheet in sheets {
        let l = topo_loss_op(tape, sheet, cfg)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, l)?,
            None => l,
        });
    }
    let mean = tape.scale(acc.unwrap(), 1.0 / sheets.len() as f64)?;
    let scaled = tape.scale(mean, cfg.tau)?;
    tape.add(training_loss, scaled)
}
