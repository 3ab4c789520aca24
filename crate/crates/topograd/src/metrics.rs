//! Representation measurements: effective dimensionality, smoothness
//! curves, selectivity t-statistics, structural similarity between maps,
//! and rank correlation.

use nalgebra::DMatrix;

use crate::{Error, Result, Tensor};

/// Eigenvalue-spread measure of a feature matrix: `(Σλ)² / Σλ²` over the
/// eigenvalues of the sample covariance of mean-centered features. Always
/// in `[1, n_units]`.
pub fn effective_dimensionality(features: &Tensor) -> Result<f64> {
    let s = features.shape();
    if s.len() != 2 {
        return Err(Error::Dim(format!("effective_dimensionality: expected 2-D, got {s:?}")));
    }
    let (n, u) = (s[0], s[1]);
    if n < 2 {
        return Err(Error::InsufficientData("effective_dimensionality: need ≥ 2 samples".into()));
    }
    // column means
    let mut means = vec![0.0; u];
    for i in 0..n {
        for j in 0..u {
            means[j] += features.at2(i, j);
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    // sample covariance of centered features
    let mut cov = DMatrix::<f64>::zeros(u, u);
    for i in 0..n {
        for a in 0..u {
            let va = features.at2(i, a) - means[a];
            for b in a..u {
                cov[(a, b)] += va * (features.at2(i, b) - means[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..u {
        for b in a..u {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eigen = cov.symmetric_eigenvalues();
    // clamp eigenvalues that roundoff pushed below zero
    let lambdas: Vec<f64> = eigen.iter().map(|&l| l.max(0.0)).collect();
    let sum: f64 = lambdas.iter().sum();
    let sum_sq: f64 = lambdas.iter().map(|l| l * l).sum();
    if sum_sq == 0.0 {
        return Err(Error::Numeric(
            "effective_dimensionality: zero eigenspectrum (constant features)".into(),
        ));
    }
    Ok(sum * sum / sum_sq)
}

/// Binned pairwise-correlation-versus-distance profile of unit responses
/// laid out on a grid, plus its summary score.
#[derive(Clone, Debug)]
pub struct SmoothnessCurve {
    /// Centers of the nonempty distance bins, strictly increasing.
    pub bin_centers: Vec<f64>,
    /// Mean pairwise Pearson correlation within each nonempty bin.
    pub bin_means: Vec<f64>,
    /// `max(bin_means) − min(bin_means)`.
    pub smoothness: f64,
}

/// Correlate every unit pair over stimuli, bin by Euclidean grid distance
/// (`n_bins` equal-width bins over `(0, max distance]`), and report the
/// spread of the binned means. Pairs touching a zero-variance unit are
/// excluded.
pub fn pairwise_correlation_vs_distance(
    positions: &[(usize, usize)],
    responses: &Tensor,
    n_bins: usize,
) -> Result<SmoothnessCurve> {
    let s = responses.shape();
    if s.len() != 2 || s[1] != positions.len() {
        return Err(Error::Dim(format!(
            "smoothness: responses {s:?} vs {} positions",
            positions.len()
        )));
    }
    let (n_stimuli, n_units) = (s[0], s[1]);
    if n_stimuli < 3 {
        return Err(Error::InsufficientData("smoothness: need ≥ 3 stimuli".into()));
    }
    if n_bins < 2 {
        return Err(Error::InsufficientData("smoothness: need ≥ 2 bins".into()));
    }

    // per-unit mean and centered norms
    let mut means = vec![0.0; n_units];
    for i in 0..n_stimuli {
        for j in 0..n_units {
            means[j] += responses.at2(i, j);
        }
    }
    for m in means.iter_mut() {
        *m /= n_stimuli as f64;
    }
    let mut centered = vec![0.0; n_stimuli * n_units];
    let mut norms = vec![0.0; n_units];
    for i in 0..n_stimuli {
        for j in 0..n_units {
            let v = responses.at2(i, j) - means[j];
            centered[i * n_units + j] = v;
            norms[j] += v * v;
        }
    }
    let live: Vec<usize> = (0..n_units).filter(|&j| norms[j] > 0.0).collect();

    // pair correlations and distances
    let mut pairs: Vec<(f64, f64)> = Vec::new(); // (distance, correlation)
    for (ai, &a) in live.iter().enumerate() {
        for &b in &live[ai + 1..] {
            let mut dot = 0.0;
            for i in 0..n_stimuli {
                dot += centered[i * n_units + a] * centered[i * n_units + b];
            }
            let corr = dot / (norms[a].sqrt() * norms[b].sqrt());
            let dr = positions[a].0 as f64 - positions[b].0 as f64;
            let dc = positions[a].1 as f64 - positions[b].1 as f64;
            pairs.push(((dr * dr + dc * dc).sqrt(), corr));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("smoothness: no unit pairs with variance".into()));
    }
    let max_d = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    if max_d == 0.0 {
        return Err(Error::InsufficientData("smoothness: all pairs at distance zero".into()));
    }

    let width = max_d / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(d, c) in &pairs {
        // bins cover (0, max]; d > 0 for distinct grid cells
        let k = (((d / width).ceil() as usize).max(1) - 1).min(n_bins - 1);
        sums[k] += c;
        counts[k] += 1;
    }
    let mut bin_centers = Vec::new();
    let mut bin_means = Vec::new();
    for k in 0..n_bins {
        if counts[k] > 0 {
            bin_centers.push((k as f64 + 0.5) * width);
            bin_means.push(sums[k] / counts[k] as f64);
        }
    }
    if bin_means.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "smoothness: only {} nonempty distance bin(s)",
            bin_means.len()
        )));
    }
    let hi = bin_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = bin_means.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SmoothnessCurve { bin_centers, bin_means, smoothness: hi - lo })
}

/// Response statistics of one stimulus group.
#[derive(Clone, Copy, Debug)]
pub struct GroupStats {
    /// Mean response.
    pub mu: f64,
    /// Sample standard deviation (n−1 denominator).
    pub sigma: f64,
    /// Sample count.
    pub n: usize,
}

impl GroupStats {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InsufficientData("GroupStats: need ≥ 2 samples".into()));
        }
        let mu = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|&v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self { mu, sigma: var.sqrt(), n })
    }
}

/// Welch t-statistic `t = (μ_c − μ_o) / √(σ_c²/N_c + σ_o²/N_o)`.
pub fn selectivity_t(target: GroupStats, other: GroupStats) -> Result<f64> {
    if target.n < 2 || other.n < 2 {
        return Err(Error::InsufficientData("selectivity_t: need ≥ 2 samples per group".into()));
    }
    if target.sigma == 0.0 && other.sigma == 0.0 {
        return Err(Error::Numeric("selectivity_t: both groups have zero variance".into()));
    }
    let se = (target.sigma * target.sigma / target.n as f64
        + other.sigma * other.sigma / other.n as f64)
        .sqrt();
    Ok((target.mu - other.mu) / se)
}

/// Per-unit Welch t-map contrasting one group's responses `[n_c×units]`
/// against pooled responses of the others `[n_o×units]`.
pub fn selectivity_map(target: &Tensor, other: &Tensor) -> Result<Vec<f64>> {
    let (st, so) = (target.shape(), other.shape());
    if st.len() != 2 || so.len() != 2 || st[1] != so[1] {
        return Err(Error::Dim(format!("selectivity_map: {st:?} vs {so:?}")));
    }
    let units = st[1];
    let column = |t: &Tensor, j: usize| -> Vec<f64> {
        (0..t.shape()[0]).map(|i| t.at2(i, j)).collect()
    };
    let mut out = Vec::with_capacity(units);
    for j in 0..units {
        let gt = GroupStats::from_samples(&column(target, j))?;
        let go = GroupStats::from_samples(&column(other, j))?;
        // identical samples on both sides: t = 0 by symmetry, even though
        // the scale is degenerate
        if gt.sigma == 0.0 && go.sigma == 0.0 && gt.mu == go.mu {
            out.push(0.0);
            continue;
        }
        out.push(selectivity_t(gt, go)?);
    }
    Ok(out)
}

/// Mean local structural similarity between two equally-sized maps:
/// uniform 7×7 sliding windows, stabilizers `k1 = 0.01`, `k2 = 0.03`,
/// dynamic range = max − min over both maps. Symmetric; 1.0 for
/// identical maps.
pub fn structural_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    const WIN: usize = 7;
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "structural_similarity: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let s = a.shape();
    if s.len() != 2 || s[0] < WIN || s[1] < WIN {
        return Err(Error::Dim(format!("structural_similarity: maps must be ≥ {WIN}×{WIN}, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let range = {
        let all = a.data().iter().chain(b.data());
        let hi = all.clone().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = all.cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    if range == 0.0 {
        return Err(Error::Numeric("structural_similarity: both maps constant (zero range)".into()));
    }
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let np = (WIN * WIN) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r in 0..=h - WIN {
        for c in 0..=w - WIN {
            let (mut sa, mut sb) = (0.0, 0.0);
            for i in 0..WIN {
                for j in 0..WIN {
                    sa += a.at2(r + i, c + j);
                    sb += b.at2(r + i, c + j);
                }
            }
            let (ma, mb) = (sa / np, sb / np);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..WIN {
                for j in 0..WIN {
                    let da = a.at2(r + i, c + j) - ma;
                    let db = b.at2(r + i, c + j) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            // sample normalization, matching the usual SSIM convention
            let norm = np - 1.0;
            va /= norm;
            vb /= norm;
            cov /= norm;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dim("spearman: length mismatch".into()));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData("spearman: need ≥ 2 points".into()));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("correlation of constant sequence".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    /// Features with an exactly planted covariance spectrum: scaled
    /// mean-zero orthonormal (Helmert) columns, so the sample covariance
    /// is exactly diag(λ).
    fn planted_features(lambdas: &[f64], n_samples: usize) -> Tensor {
        let u = lambdas.len();
        assert!(u <= n_samples - 1);
        let mut data = vec![0.0; n_samples * u];
        for (j, &l) in lambdas.iter().enumerate() {
            // Helmert vector j+1: (1,...,1,-(j+1),0,...)/√((j+1)(j+2))
            let k = j + 1;
            let norm = ((k * (k + 1)) as f64).sqrt();
            let scale = ((n_samples - 1) as f64 * l).sqrt();
            for i in 0..k {
                data[i * u + j] = scale / norm;
            }
            data[k * u + j] = -(k as f64) * scale / norm;
        }
        Tensor::new(vec![n_samples, u], data).unwrap()
    }

    #[test]
    fn ed_uniform_spectrum_is_unit_count() {
        let f = planted_features(&[1.0, 1.0, 1.0, 1.0], 8);
        let ed = effective_dimensionality(&f).unwrap();
        assert!((ed - 4.0).abs() < 1e-10, "{ed}");
    }

    #[test]
    fn ed_rank_one_is_one() {
        // one informative direction replicated across two units
        let mut data = Vec::new();
        for i in 0..6 {
            let v = i as f64 - 2.5;
            data.extend_from_slice(&[v, 2.0 * v]);
        }
        let f = Tensor::new(vec![6, 2], data).unwrap();
        let ed = effective_dimensionality(&f).unwrap();
        assert!((ed - 1.0).abs() < 1e-10, "{ed}");
    }

    #[test]
    fn ed_spectrum_two_one() {
        let f = planted_features(&[2.0, 1.0], 8);
        let ed = effective_dimensionality(&f).unwrap();
        assert!((ed - 1.8).abs() < 1e-10, "{ed}");
    }

    #[test]
    fn ed_constant_features_error() {
        let f = Tensor::full(&[5, 3], 2.0);
        assert!(matches!(effective_dimensionality(&f), Err(Error::Numeric(_))));
    }

    #[test]
    fn ed_bounds_and_invariances() {
        let mut rng = SeededRng::new(21);
        for _ in 0..10 {
            let n = 20;
            let u = 5;
            let data: Vec<f64> = (0..n * u).map(|_| rng.normal()).collect();
            let f = Tensor::new(vec![n, u], data).unwrap();
            let ed = effective_dimensionality(&f).unwrap();
            assert!((1.0 - 1e-9..=u as f64 + 1e-9).contains(&ed));
            // global positive scaling cancels
            let ed2 = effective_dimensionality(&f.map(|v| v * 37.5)).unwrap();
            assert!((ed - ed2).abs() < 1e-9);
            // rotation by a Givens rotation in units 0,1 preserves the spectrum
            let theta: f64 = 0.7;
            let (c, s) = (theta.cos(), theta.sin());
            let mut rot = f.clone();
            for i in 0..n {
                let a = f.at2(i, 0);
                let b = f.at2(i, 1);
                rot.data_mut()[i * u] = c * a - s * b;
                rot.data_mut()[i * u + 1] = s * a + c * b;
            }
            let ed3 = effective_dimensionality(&rot).unwrap();
            assert!((ed - ed3).abs() < 1e-8);
        }
    }

    /// Gaussian-bump responses: each stimulus activates a random site on
    /// the grid and units respond by proximity, so nearby units correlate.
    fn bump_responses(
        rng: &mut SeededRng,
        h: usize,
        w: usize,
        n_stimuli: usize,
        sigma: f64,
    ) -> (Vec<(usize, usize)>, Tensor) {
        let positions: Vec<(usize, usize)> =
            (0..h * w).map(|u| (u / w, u % w)).collect();
        let mut data = vec![0.0; n_stimuli * h * w];
        for i in 0..n_stimuli {
            let sr = rng.uniform() * (h - 1) as f64;
            let sc = rng.uniform() * (w - 1) as f64;
            for (j, &(r, c)) in positions.iter().enumerate() {
                let d2 = (r as f64 - sr).powi(2) + (c as f64 - sc).powi(2);
                data[i * h * w + j] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        (positions, Tensor::new(vec![n_stimuli, h * w], data).unwrap())
    }

    /// Responses drawn from a Gaussian process over the grid whose true
    /// correlation is exactly `exp(−d²/2ℓ²)` — strictly decreasing in
    /// distance, so binned means must decrease too.
    fn gp_responses(
        rng: &mut SeededRng,
        h: usize,
        w: usize,
        n_stimuli: usize,
        length: f64,
    ) -> (Vec<(usize, usize)>, Tensor) {
        let u = h * w;
        let positions: Vec<(usize, usize)> = (0..u).map(|k| (k / w, k % w)).collect();
        let mut k = DMatrix::<f64>::zeros(u, u);
        for a in 0..u {
            for b in 0..u {
                let dr = positions[a].0 as f64 - positions[b].0 as f64;
                let dc = positions[a].1 as f64 - positions[b].1 as f64;
                k[(a, b)] = (-(dr * dr + dc * dc) / (2.0 * length * length)).exp();
            }
            k[(a, a)] += 1e-9;
        }
        let chol = k.cholesky().expect("kernel is positive definite");
        let l = chol.l();
        let mut data = vec![0.0; n_stimuli * u];
        for i in 0..n_stimuli {
            let z: Vec<f64> = (0..u).map(|_| rng.normal()).collect();
            for a in 0..u {
                let mut acc = 0.0;
                for b in 0..=a {
                    acc += l[(a, b)] * z[b];
                }
                data[i * u + a] = acc;
            }
        }
        (positions, Tensor::new(vec![n_stimuli, u], data).unwrap())
    }

    #[test]
    fn smoothness_of_position_driven_responses() {
        let mut rng = SeededRng::new(22);
        let (pos, resp) = gp_responses(&mut rng, 8, 8, 800, 3.0);
        let curve = pairwise_correlation_vs_distance(&pos, &resp, 5).unwrap();
        assert!(curve.smoothness > 0.5, "smoothness {}", curve.smoothness);
        for k in 1..curve.bin_means.len() {
            assert!(
                curve.bin_means[k] < curve.bin_means[k - 1],
                "bin means not decreasing: {:?}",
                curve.bin_means
            );
        }
        for k in 1..curve.bin_centers.len() {
            assert!(curve.bin_centers[k] > curve.bin_centers[k - 1]);
        }
    }

    #[test]
    fn smoothness_of_independent_responses_is_small() {
        let mut rng = SeededRng::new(23);
        let positions: Vec<(usize, usize)> = (0..64).map(|u| (u / 8, u % 8)).collect();
        let data: Vec<f64> = (0..500 * 64).map(|_| rng.normal()).collect();
        let resp = Tensor::new(vec![500, 64], data).unwrap();
        let curve = pairwise_correlation_vs_distance(&positions, &resp, 10).unwrap();
        assert!(curve.smoothness < 0.15, "smoothness {}", curve.smoothness);
    }

    #[test]
    fn smoothness_single_bin_is_insufficient() {
        let positions = vec![(0, 0), (0, 1)];
        let mut data = Vec::new();
        for i in 0..5 {
            data.extend_from_slice(&[i as f64, i as f64]);
        }
        let resp = Tensor::new(vec![5, 2], data).unwrap();
        let err = pairwise_correlation_vs_distance(&positions, &resp, 10);
        assert!(matches!(err, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn smoothness_shuffle_control() {
        // position-determined responses beat shuffled positions in ≥ 95%
        // of trials
        let mut wins = 0;
        let trials = 20;
        for t in 0..trials {
            let mut rng = SeededRng::new(3000 + t);
            let (pos, resp) = bump_responses(&mut rng, 6, 6, 200, 1.5);
            let true_curve = pairwise_correlation_vs_distance(&pos, &resp, 5).unwrap();
            // Fisher-Yates on positions
            let mut shuffled = pos.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.below(i + 1);
                shuffled.swap(i, j);
            }
            let shuf_curve = pairwise_correlation_vs_distance(&shuffled, &resp, 5).unwrap();
            if true_curve.smoothness > shuf_curve.smoothness {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.95 * trials as f64, "{wins}/{trials}");
    }

    #[test]
    fn welch_t_symmetric_case_is_zero() {
        let g = GroupStats { mu: 1.5, sigma: 0.3, n: 10 };
        assert_eq!(selectivity_t(g, g).unwrap(), 0.0);
    }

    #[test]
    fn welch_t_known_value() {
        let c = GroupStats { mu: 2.0, sigma: 1.0, n: 2 };
        let o = GroupStats { mu: 0.0, sigma: 1.0, n: 2 };
        assert!((selectivity_t(c, o).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn welch_t_antisymmetry() {
        let c = GroupStats { mu: 3.1, sigma: 0.7, n: 9 };
        let o = GroupStats { mu: 1.2, sigma: 2.0, n: 14 };
        let t1 = selectivity_t(c, o).unwrap();
        let t2 = selectivity_t(o, c).unwrap();
        assert_eq!(t1, -t2);
    }

    #[test]
    fn welch_t_zero_variance_errors() {
        let c = GroupStats { mu: 1.0, sigma: 0.0, n: 5 };
        let o = GroupStats { mu: 2.0, sigma: 0.0, n: 5 };
        assert!(matches!(selectivity_t(c, o), Err(Error::Numeric(_))));
    }

    #[test]
    fn welch_t_matches_raw_sample_oracle() {
        let mut rng = SeededRng::new(24);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..7).map(|_| rng.normal() + 0.8).collect();
            let ys: Vec<f64> = (0..11).map(|_| rng.normal()).collect();
            let t = selectivity_t(
                GroupStats::from_samples(&xs).unwrap(),
                GroupStats::from_samples(&ys).unwrap(),
            )
            .unwrap();
            // textbook Welch t from raw samples
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
            };
            let oracle = (mean(&xs) - mean(&ys))
                / (var(&xs) / xs.len() as f64 + var(&ys) / ys.len() as f64).sqrt();
            assert!((t - oracle).abs() < 1e-10, "{t} vs {oracle}");
        }
    }

    #[test]
    fn ssim_identical_maps_is_one() {
        let mut rng = SeededRng::new(25);
        let data: Vec<f64> = (0..81).map(|_| rng.normal()).collect();
        let a = Tensor::new(vec![9, 9], data).unwrap();
        let v = structural_similarity(&a, &a).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ssim_negated_map_is_negative() {
        // zero-mean map vs its negation. Period-7 stripes with a zero-sum
        // profile keep every 7×7 window mean exactly zero, so the
        // luminance term stays 1 and the anti-correlated structure term
        // drives the score negative.
        let profile = [3.0, -1.0, -1.0, 2.0, -2.0, 0.0, -1.0];
        let a = Tensor::new(
            vec![14, 14],
            (0..196).map(|i| profile[(i / 14) % 7]).collect(),
        )
        .unwrap();
        let b = a.map(|v| -v);
        let v = structural_similarity(&a, &b).unwrap();
        assert!(v < -0.9, "{v}");
    }

    #[test]
    fn ssim_constant_pair_errors() {
        let a = Tensor::full(&[8, 8], 1.0);
        assert!(matches!(structural_similarity(&a, &a), Err(Error::Numeric(_))));
    }

    #[test]
    fn ssim_rejects_small_maps() {
        let a = Tensor::zeros(&[6, 6]);
        assert!(matches!(structural_similarity(&a, &a), Err(Error::Dim(_))));
    }

    #[test]
    fn spearman_monotone_and_ties() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [2.0, 4.0, 9.0, 16.0, 25.0];
        assert!((spearman_rho(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let zs = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman_rho(&xs, &zs).unwrap() + 1.0).abs() < 1e-12);
        let tied = [1.0, 1.0, 2.0, 2.0, 3.0];
        let r = spearman_rho(&tied, &xs).unwrap();
        assert!(r > 0.9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ssim_is_symmetric(seed in 0u64..1000) {
            let mut rng = SeededRng::new(seed);
            let a = Tensor::new(vec![8, 8], (0..64).map(|_| rng.normal()).collect()).unwrap();
            let b = Tensor::new(vec![8, 8], (0..64).map(|_| rng.normal()).collect()).unwrap();
            let ab = structural_similarity(&a, &b).unwrap();
            let ba = structural_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ab));
        }
    }
}
