//! Efficiency procedures: L1 unstructured pruning (zero the
//! smallest-magnitude fraction of a layer's weights) and cortical-sheet
//! downsampling (store each penalized layer's sheet at reduced spatial
//! resolution, upsample back at inference).

use crate::loss::resize_bilinear;
use crate::model::Model;
use crate::sheet::{project, unproject, CorticalSheet};
use crate::task::EvalTask;
use crate::{Error, Result, Tensor};

/// What an [`l1_prune`] call did to one layer.
#[derive(Clone, Debug)]
pub struct PruneReport {
    pub layer_name: String,
    pub fraction_pruned: f64,
    /// Largest absolute magnitude among the pruned entries (0 if none).
    pub threshold: f64,
    pub zeros_before: usize,
    pub zeros_after: usize,
}

/// A cortical sheet stored at reduced spatial resolution.
#[derive(Clone, Debug)]
pub struct CompressedLayer {
    pub reduced_sheet: CorticalSheet,
    /// Original grid extents, needed for reconstruction.
    pub original_h: usize,
    pub original_w: usize,
    pub keep_ratio: f64,
}

impl CompressedLayer {
    /// Parameters actually stored: `h''·w''·d`.
    pub fn stored_params(&self) -> usize {
        self.reduced_sheet.h() * self.reduced_sheet.w() * self.reduced_sheet.d()
    }
}

/// Fraction of weights to prune so the count shrinks by factor `n`:
/// `(100 − 100/n)%`.
pub fn prune_fraction_for_reduction(n: f64) -> Result<f64> {
    if !(n > 1.0) {
        return Err(Error::Config(format!("reduction factor must exceed 1, got {n}")));
    }
    Ok((100.0 - 100.0 / n) / 100.0)
}

/// Zero the `⌊fraction·count⌋` smallest-magnitude entries. Ties at the
/// threshold are broken by flat index (lower index pruned first);
/// surviving entries are untouched.
pub fn l1_prune(weights: &Tensor, fraction: f64, layer_name: &str) -> Result<(Tensor, PruneReport)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("prune fraction must be in [0, 1], got {fraction}")));
    }
    let count = weights.len();
    let n_prune = (fraction * count as f64).floor() as usize;
    let zeros_before = weights.data().iter().filter(|&&v| v == 0.0).count();

    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&i, &j| {
        weights.data()[i]
            .abs()
            .partial_cmp(&weights.data()[j].abs())
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut out = weights.clone();
    let mut threshold = 0.0_f64;
    for &i in order.iter().take(n_prune) {
        threshold = threshold.max(weights.data()[i].abs());
        out.data_mut()[i] = 0.0;
    }
    let zeros_after = out.data().iter().filter(|&&v| v == 0.0).count();
    Ok((
        out,
        PruneReport {
            layer_name: layer_name.to_string(),
            fraction_pruned: fraction,
            threshold,
            zeros_before,
            zeros_after,
        },
    ))
}

/// Shrink a sheet's grid to `round(extent·√keep_ratio)` per axis (floored
/// at 1), bilinearly resampling each depth slice, so the stored parameter
/// count scales by ≈ `keep_ratio`.
pub fn downsample_layer(sheet: &CorticalSheet, keep_ratio: f64) -> Result<CompressedLayer> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::Config(format!("keep_ratio must be in (0, 1], got {keep_ratio}")));
    }
    let axis = keep_ratio.sqrt();
    let small = |n: usize| (((n as f64 * axis).round() as usize).max(1)).min(n);
    let (h2, w2) = (small(sheet.h()), small(sheet.w()));
    let reduced = resize_sheet(sheet, h2, w2)?;
    Ok(CompressedLayer {
        reduced_sheet: reduced,
        original_h: sheet.h(),
        original_w: sheet.w(),
        keep_ratio,
    })
}

/// Upsample a compressed layer back to its original grid. The result
/// unprojects to a full-size weight tensor, so the architecture is
/// unchanged at inference.
pub fn reconstruct_layer(c: &CompressedLayer) -> Result<CorticalSheet> {
    resize_sheet(&c.reduced_sheet, c.original_h, c.original_w)
}

fn resize_sheet(sheet: &CorticalSheet, h2: usize, w2: usize) -> Result<CorticalSheet> {
    let d = sheet.d();
    let mut data = vec![0.0; h2 * w2 * d];
    for i in 0..d {
        let resized = resize_bilinear(&sheet.slice(i), h2, w2)?;
        for u in 0..h2 * w2 {
            data[u * d + i] = resized.data()[u];
        }
    }
    CorticalSheet::new(h2, w2, d, Tensor::new(vec![h2, w2, d], data)?)
}

/// Compression methods measured by [`compression_curve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompressionMethod {
    Prune,
    Downsample,
}

impl CompressionMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompressionMethod::Prune => "prune",
            CompressionMethod::Downsample => "downsample",
        }
    }
}

/// One row of a compression curve.
#[derive(Clone, Debug)]
pub struct CurveRow {
    /// Fraction of the penalized layers' parameters removed.
    pub level: f64,
    /// Surviving parameters of the penalized layers / original, as
    /// realized (nonzeros for pruning, stored grid cells for
    /// downsampling).
    pub param_ratio: f64,
    pub performance: f64,
    pub performance_delta: f64,
}

/// Apply a compression method to every penalized layer of `model` at each
/// level and measure task accuracy. Levels are fractions of parameters
/// removed, so prune and downsample rows at the same level hit the same
/// effective parameter count (a reduction by factor n corresponds to
/// level [`prune_fraction_for_reduction`]`(n)`).
pub fn compression_curve(
    model: &Model,
    task: &EvalTask,
    method: CompressionMethod,
    levels: &[f64],
) -> Result<Vec<CurveRow>> {
    for window in levels.windows(2) {
        if window[1] < window[0] {
            return Err(Error::Config("compression levels must be sorted ascending".into()));
        }
    }
    let base = model.evaluate(task)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        if !(0.0..1.0).contains(&level) {
            return Err(Error::Config(format!("compression level must be in [0, 1), got {level}")));
        }
        let mut modified = model.clone();
        let (mut kept, mut total) = (0usize, 0usize);
        for name in model.penalized_layers() {
            let (kind, weights) = modified.layer_weights(&name)?;
            total += weights.len();
            let new_weights = match method {
                CompressionMethod::Prune => {
                    let (pruned, report) = l1_prune(&weights, level, &name)?;
                    kept += pruned.len() - report.zeros_after;
                    pruned
                }
                CompressionMethod::Downsample => {
                    let sheet = project(&weights, kind)?;
                    let compressed = downsample_layer(&sheet, 1.0 - level)?;
                    kept += compressed.stored_params();
                    unproject(&reconstruct_layer(&compressed)?, kind)?
                }
            };
            modified.set_layer_weights(&name, new_weights)?;
        }
        let performance = modified.evaluate(task)?;
        rows.push(CurveRow {
            level,
            param_ratio: if total == 0 { 1.0 } else { kept as f64 / total as f64 },
            performance,
            performance_delta: performance - base,
        });
    }
    Ok(rows)
}

/// Render curve rows as the CSV table emitted by the CLI.
pub fn curve_csv(method: CompressionMethod, rows: &[CurveRow]) -> String {
    let mut out = String::from("method,level,param_ratio,performance,performance_delta\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            method.name(),
            r.level,
            r.param_ratio,
            r.performance,
            r.performance_delta
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::sheet::project_linear;
    use proptest::prelude::*;

    #[test]
    fn prune_fraction_formula() {
        assert_eq!(prune_fraction_for_reduction(2.0).unwrap(), 0.5);
        assert_eq!(prune_fraction_for_reduction(5.0).unwrap(), 0.8);
        assert_eq!(prune_fraction_for_reduction(4.0).unwrap(), 0.75);
        assert_eq!(prune_fraction_for_reduction(10.0).unwrap(), 0.9);
        assert!(prune_fraction_for_reduction(1.0).is_err());
        assert!(prune_fraction_for_reduction(0.5).is_err());
        // n → 1⁺ drives the fraction to 0
        assert!(prune_fraction_for_reduction(1.0 + 1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn prune_smallest_half() {
        let w = Tensor::new(vec![4], vec![0.1, -0.2, 0.3, -0.4]).unwrap();
        let (out, report) = l1_prune(&w, 0.5, "fc").unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.3, -0.4]);
        assert_eq!(report.zeros_before, 0);
        assert_eq!(report.zeros_after, 2);
        assert_eq!(report.threshold, 0.2);
    }

    #[test]
    fn prune_extremes() {
        let w = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let (unchanged, _) = l1_prune(&w, 0.0, "fc").unwrap();
        assert_eq!(unchanged.data(), w.data());
        let (zeroed, _) = l1_prune(&w, 1.0, "fc").unwrap();
        assert_eq!(zeroed.data(), &[0.0; 3]);
    }

    #[test]
    fn prune_ties_break_by_flat_index() {
        let w = Tensor::new(vec![4], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (out, _) = l1_prune(&w, 0.5, "fc").unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn downsample_extents_match_area_budget() {
        let mut rng = SeededRng::new(31);
        let data = Tensor::new(vec![48, 64, 2], (0..48 * 64 * 2).map(|_| rng.normal()).collect()).unwrap();
        let sheet = CorticalSheet::new(48, 64, 2, data).unwrap();
        let c = downsample_layer(&sheet, 0.2).unwrap();
        assert_eq!((c.reduced_sheet.h(), c.reduced_sheet.w()), (21, 29));
        let ratio = c.stored_params() as f64 / (48.0 * 64.0 * 2.0);
        assert!((ratio - 0.2).abs() < 0.01, "stored ratio {ratio}");
    }

    #[test]
    fn downsample_keep_one_is_identity() {
        let mut rng = SeededRng::new(32);
        let data = Tensor::new(vec![6, 8, 3], (0..144).map(|_| rng.normal()).collect()).unwrap();
        let sheet = CorticalSheet::new(6, 8, 3, data).unwrap();
        let c = downsample_layer(&sheet, 1.0).unwrap();
        assert_eq!(c.reduced_sheet, sheet);
        let back = reconstruct_layer(&c).unwrap();
        assert_eq!(back, sheet);
    }

    #[test]
    fn constant_sheet_reconstructs_exactly() {
        let sheet = CorticalSheet::new(9, 7, 2, Tensor::full(&[9, 7, 2], 4.5)).unwrap();
        for keep in [0.1, 0.25, 0.5, 0.9] {
            let c = downsample_layer(&sheet, keep).unwrap();
            let back = reconstruct_layer(&c).unwrap();
            assert_eq!(back, sheet, "keep {keep}");
        }
    }

    #[test]
    fn smooth_sheets_survive_downsampling_better_than_noise() {
        let mut rng = SeededRng::new(33);
        let (h, w) = (12, 12);
        // smooth: low-frequency ramp+bump; noise: iid normals matched in variance
        let smooth_map: Vec<f64> = (0..h * w)
            .map(|u| {
                let (r, c) = ((u / w) as f64, (u % w) as f64);
                (r / 4.0).sin() + (c / 4.0).cos()
            })
            .collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let target_sd = var(&smooth_map).sqrt();
        let noise_map: Vec<f64> = (0..h * w).map(|_| rng.normal() * target_sd).collect();

        let mse = |map: Vec<f64>| {
            let sheet =
                CorticalSheet::new(h, w, 1, Tensor::new(vec![h, w, 1], map.clone()).unwrap()).unwrap();
            let back = reconstruct_layer(&downsample_layer(&sheet, 0.25).unwrap()).unwrap();
            map.iter()
                .zip(back.data().data())
                .map(|(&a, &b)| (a - b).powi(2))
                .sum::<f64>()
                / map.len() as f64
        };
        assert!(mse(smooth_map) < mse(noise_map));
    }

    #[test]
    fn near_constant_sheet_reconstruction_error_is_tiny() {
        // trained-to-smooth analog: slices constant + 1e-3 jitter; its
        // reconstruction MSE at keep 0.2 is far below the slice variance
        // of a matched random sheet
        let mut rng = SeededRng::new(34);
        let (h, w) = (10, 10);
        let smooth: Vec<f64> = (0..h * w).map(|_| 1.0 + 1e-3 * rng.normal()).collect();
        let rand_sheet: Vec<f64> = (0..h * w).map(|_| rng.normal()).collect();
        let sheet =
            CorticalSheet::new(h, w, 1, Tensor::new(vec![h, w, 1], smooth.clone()).unwrap()).unwrap();
        let back = reconstruct_layer(&downsample_layer(&sheet, 0.2).unwrap()).unwrap();
        let mse = smooth
            .iter()
            .zip(back.data().data())
            .map(|(&a, &b)| (a - b).powi(2))
            .sum::<f64>()
            / smooth.len() as f64;
        let m = rand_sheet.iter().sum::<f64>() / rand_sheet.len() as f64;
        let rand_var =
            rand_sheet.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / rand_sheet.len() as f64;
        assert!(mse < 0.01 * rand_var, "mse {mse} vs variance {rand_var}");
    }

    #[test]
    fn paper_scale_downsampling_arithmetic() {
        // 12 transformer feed-forward layers of 3072×768 inside a 125.6M
        // model: removing 80% of each sheet's area accounts for ≈ 23M of
        // the 125.6M → 102.3M drop
        let per_layer = 3072 * 768;
        let kind = crate::sheet::LayerKind::Linear { outputs: 3072, inputs: 768 };
        let (h, w) = kind.grid();
        assert_eq!((h, w), (48, 64));
        let sheet = CorticalSheet::new(h, w, 768, Tensor::zeros(&[h, w, 768])).unwrap();
        let c = downsample_layer(&sheet, 0.2).unwrap();
        let removed_per_layer = per_layer - c.stored_params();
        let removed_total = 12 * removed_per_layer;
        assert!(
            (22_000_000..=24_000_000).contains(&removed_total),
            "removed {removed_total}"
        );
        let stored_ratio = c.stored_params() as f64 / per_layer as f64;
        assert!((stored_ratio - 0.2).abs() <= 0.01, "stored ratio {stored_ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prune_invariants(seed in 0u64..500, fraction in 0.0f64..=1.0) {
            let mut rng = SeededRng::new(seed);
            let n = 40;
            let w = Tensor::new(vec![n], (0..n).map(|_| rng.normal()).collect()).unwrap();
            let (out, report) = l1_prune(&w, fraction, "fc").unwrap();
            let expected = (fraction * n as f64).floor() as usize;
            // pruned count exact; survivors untouched
            let changed = w.data().iter().zip(out.data()).filter(|(a, b)| a != b).count();
            prop_assert!(changed <= expected);
            prop_assert_eq!(report.zeros_after - report.zeros_before, changed);
            for (&a, &b) in w.data().iter().zip(out.data()) {
                prop_assert!(b == 0.0 || b == a);
            }
            prop_assert!(report.zeros_after >= expected);
            // idempotent at the same fraction
            let (again, _) = l1_prune(&out, fraction, "fc").unwrap();
            prop_assert_eq!(again.data(), out.data());
        }

        #[test]
        fn downsample_roundtrip_shapes(h in 1usize..14, w in 1usize..14, d in 1usize..4,
                                       keep in 0.05f64..=1.0, seed in 0u64..100) {
            let mut rng = SeededRng::new(seed);
            let data = Tensor::new(vec![h, w, d], (0..h * w * d).map(|_| rng.normal()).collect()).unwrap();
            let sheet = CorticalSheet::new(h, w, d, data).unwrap();
            let c = downsample_layer(&sheet, keep).unwrap();
            prop_assert!(c.reduced_sheet.h() * c.reduced_sheet.w() <= h * w);
            prop_assert_eq!(c.stored_params(), c.reduced_sheet.h() * c.reduced_sheet.w() * d);
            let back = reconstruct_layer(&c).unwrap();
            prop_assert_eq!((back.h(), back.w(), back.d()), (h, w, d));
            // result must unproject to a full-size weight tensor
            let kind = crate::sheet::LayerKind::Linear { outputs: h * w, inputs: d };
            if crate::sheet::factorize_near_square(h * w) == (h.min(w), h.max(w)) && h <= w {
                let weights = unproject(&back, kind).unwrap();
                prop_assert_eq!(weights.shape(), &[h * w, d]);
                let _ = project_linear(&weights).unwrap();
            }
        }
    }
}
