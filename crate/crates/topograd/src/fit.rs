//! Temporal-integration-window curve fit: least squares for the mixture
//! `θ[Δ] = c·(Δ+1)^(−a) + (1−c)·e^(−bΔ)` via deterministic multi-start
//! Nelder–Mead. The objective is nonconvex in `(a, b, c)`, so a fixed grid
//! of start points keeps results reproducible.

use std::path::Path;

use crate::{Error, Result};

/// Fitted mixture parameters.
#[derive(Clone, Copy, Debug)]
pub struct IntegrationFit {
    /// Power-law exponent (≥ 0; higher = slower decline).
    pub a: f64,
    /// Exponential rate (≥ 0; higher = faster decline).
    pub b: f64,
    /// Convex-mixture weight in `[0, 1]` (1 = pure power law).
    pub c: f64,
    /// Sum of squared errors at the optimum.
    pub residual: f64,
}

const A_MAX: f64 = 10.0;
const B_MAX: f64 = 10.0;

/// Mixture model value. Written as `e + c·(p − e)` so that `Δ = 0`
/// evaluates to exactly 1 for every parameter choice.
pub fn integration_window_model(delta: f64, a: f64, b: f64, c: f64) -> f64 {
    let p = (delta + 1.0).powf(-a);
    let e = (-b * delta).exp();
    e + c * (p - e)
}

fn clamp_params(p: [f64; 3]) -> [f64; 3] {
    [p[0].clamp(0.0, A_MAX), p[1].clamp(0.0, B_MAX), p[2].clamp(0.0, 1.0)]
}

fn sse(deltas: &[f64], thetas: &[f64], p: [f64; 3]) -> f64 {
    let [a, b, c] = clamp_params(p);
    deltas
        .iter()
        .zip(thetas)
        .map(|(&d, &t)| {
            let r = integration_window_model(d, a, b, c) - t;
            r * r
        })
        .sum()
}

/// Standard Nelder–Mead (α=1, γ=2, ρ=½, σ=½) on a 3-simplex. Returns the
/// best vertex found; deterministic for fixed inputs.
fn nelder_mead(
    f: &dyn Fn([f64; 3]) -> f64,
    start: [f64; 3],
    step: f64,
    max_iter: usize,
) -> ([f64; 3], f64) {
    const DIM: usize = 3;
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(DIM + 1);
    simplex.push((start, f(start)));
    for i in 0..DIM {
        let mut v = start;
        v[i] += step;
        simplex.push((v, f(v)));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
        let best = simplex[0].1;
        let worst = simplex[DIM].1;
        if (worst - best).abs() <= 1e-14 * (1.0 + best.abs()) {
            break;
        }
        // centroid of all but the worst
        let mut centroid = [0.0; 3];
        for v in &simplex[..DIM] {
            for k in 0..DIM {
                centroid[k] += v.0[k] / DIM as f64;
            }
        }
        let worst_v = simplex[DIM].0;
        let at = |t: f64| {
            let mut p = [0.0; 3];
            for k in 0..DIM {
                p[k] = centroid[k] + t * (worst_v[k] - centroid[k]);
            }
            p
        };
        let refl = at(-1.0);
        let f_refl = f(refl);
        if f_refl < simplex[0].1 {
            let exp = at(-2.0);
            let f_exp = f(exp);
            simplex[DIM] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[DIM - 1].1 {
            simplex[DIM] = (refl, f_refl);
        } else {
            let contr = if f_refl < simplex[DIM].1 { at(-0.5) } else { at(0.5) };
            let f_contr = f(contr);
            if f_contr < simplex[DIM].1.min(f_refl) {
                simplex[DIM] = (contr, f_contr);
            } else {
                // shrink toward the best vertex
                let best_v = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    for k in 0..DIM {
                        v.0[k] = best_v[k] + 0.5 * (v.0[k] - best_v[k]);
                    }
                    v.1 = f(v.0);
                }
            }
        }
    }
    simplex.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
    simplex[0]
}

/// Fixed start grid: every listed mixture weight crossed with the corners
/// of the `(a, b)` box `[0, 3]²`.
fn start_grid() -> Vec<[f64; 3]> {
    let mut starts = Vec::new();
    for &c in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        for &a in &[0.5, 2.5] {
            for &b in &[0.5, 2.5] {
                starts.push([a, b, c]);
            }
        }
    }
    starts
}

/// Least-squares fit of `(a, b, c)` to a θ-versus-Δ series.
///
/// Requires ≥ 4 points, a Δ = 0 sample, and θ values in `[0, 1.05]`.
pub fn fit_integration_window(deltas: &[f64], thetas: &[f64]) -> Result<IntegrationFit> {
    if deltas.len() != thetas.len() {
        return Err(Error::Dim("fit: delta/theta length mismatch".into()));
    }
    if deltas.len() < 4 {
        return Err(Error::InsufficientData("fit: need ≥ 4 points".into()));
    }
    if deltas.iter().any(|&d| d < 0.0 || !d.is_finite()) {
        return Err(Error::Numeric("fit: Δ values must be finite and ≥ 0".into()));
    }
    if !deltas.iter().any(|&d| d == 0.0) {
        return Err(Error::InsufficientData("fit: Δ = 0 sample required".into()));
    }
    if thetas.iter().any(|&t| !(0.0..=1.05).contains(&t)) {
        return Err(Error::Numeric("fit: θ values must lie in [0, 1.05]".into()));
    }

    let obj = |p: [f64; 3]| sse(deltas, thetas, p);
    let mut best: Option<([f64; 3], f64)> = None;
    for start in start_grid() {
        let start_sse = obj(start);
        let (p, val) = nelder_mead(&obj, start, 0.25, 400);
        // the optimizer never worsens its initialization
        let (p, val) = if val <= start_sse { (p, val) } else { (start, start_sse) };
        if best.map_or(true, |(_, bv)| val < bv) {
            best = Some((p, val));
        }
    }
    let (p, residual) = best.unwrap();
    if !residual.is_finite() {
        return Err(Error::FitFailure("non-finite residual on every start".into()));
    }
    let [a, b, c] = clamp_params(p);
    Ok(IntegrationFit { a, b, c, residual })
}

/// Read a θ-series CSV with header `delta,theta`.
pub fn read_theta_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "delta,theta" => {}
        other => {
            return Err(Error::Config(format!(
                "expected header 'delta,theta', got {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut deltas = Vec::new();
    let mut thetas = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (d, t) = match (parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(t), None) => (d, t),
            _ => return Err(Error::Config(format!("line {}: expected 'delta,theta'", i + 2))),
        };
        let parse = |s: &str, what: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("line {}: bad {what} {s:?}", i + 2)))
        };
        deltas.push(parse(d, "delta")?);
        thetas.push(parse(t, "theta")?);
    }
    Ok((deltas, thetas))
}
