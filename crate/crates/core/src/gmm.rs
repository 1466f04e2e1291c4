//! Diagonal-covariance Gaussian mixture language models.
//!
//! Models are initialised from an LBG codebook and refined by EM. Scoring
//! uses the per-frame average log-likelihood with a max-shifted
//! log-sum-exp over components.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LidError, Result};
use crate::vq_dtw::{self, sq_dist};

pub const DEFAULT_VAR_FLOOR: f64 = 1e-4;
pub const MIN_COMPONENT_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    /// stop once the per-frame log-likelihood gain drops below this
    pub tol: f64,
    pub seed: u64,
    pub var_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-5, seed: 0, var_floor: DEFAULT_VAR_FLOOR }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub label: String,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// per-frame log-likelihood at each E-step
    pub history: Vec<f64>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `ln w_m - 0.5 * sum_d ln(2 pi var_md)` for every component.
    fn log_norms(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.variances)
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>())
            .collect()
    }

    fn component_logs(&self, norms: &[f64], x: &[f64], out: &mut [f64]) {
        for (m, slot) in out.iter_mut().enumerate() {
            let quad: f64 = x
                .iter()
                .zip(&self.means[m])
                .zip(&self.variances[m])
                .map(|((xi, mu), var)| (xi - mu) * (xi - mu) / var)
                .sum();
            *slot = norms[m] - 0.5 * quad;
        }
    }

    fn check_dim(&self, features: &[Vec<f64>]) -> Result<()> {
        let dim = self.dim();
        match features.iter().find(|v| v.len() != dim) {
            Some(bad) => Err(LidError::ShapeMismatch { expected: dim, actual: bad.len() }),
            None => Ok(()),
        }
    }

    /// Posterior component probabilities for one frame.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut logs = vec![0.0; self.n_components()];
        self.component_logs(&self.log_norms(), x, &mut logs);
        let total = log_sum_exp(&logs);
        logs.iter().map(|l| (l - total).exp()).collect()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over frames of `ln sum_m w_m N(x; mu_m, diag var_m)`.
pub fn avg_log_likelihood(model: &GmmModel, features: &[Vec<f64>]) -> Result<f64> {
    if features.is_empty() {
        return Err(LidError::EmptySequence);
    }
    model.check_dim(features)?;
    let norms = model.log_norms();
    let mut logs = vec![0.0; model.n_components()];
    let total: f64 = features
        .iter()
        .map(|x| {
            model.component_logs(&norms, x, &mut logs);
            log_sum_exp(&logs)
        })
        .sum();
    Ok(total / features.len() as f64)
}

struct Stats {
    loglik: f64,
    resp_sum: Vec<f64>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

fn e_step(model: &GmmModel, data: &[Vec<f64>]) -> Stats {
    let k = model.n_components();
    let dim = model.dim();
    let norms = model.log_norms();
    let mut logs = vec![0.0; k];
    let mut st = Stats {
        loglik: 0.0,
        resp_sum: vec![0.0; k],
        first: vec![vec![0.0; dim]; k],
        second: vec![vec![0.0; dim]; k],
    };
    for x in data {
        model.component_logs(&norms, x, &mut logs);
        let total = log_sum_exp(&logs);
        st.loglik += total;
        for (m, l) in logs.iter().enumerate() {
            let g = (l - total).exp();
            st.resp_sum[m] += g;
            for ((f, s), xd) in st.first[m].iter_mut().zip(st.second[m].iter_mut()).zip(x) {
                let gx = g * xd;
                *f += gx;
                *s += gx * xd;
            }
        }
    }
    st.loglik /= data.len() as f64;
    st
}

/// Returns the index of a component whose weight collapsed, if any.
fn m_step(model: &mut GmmModel, st: &Stats, n: f64, var_floor: f64) -> Option<usize> {
    let total: f64 = st.resp_sum.iter().sum();
    let mut collapsed = None;
    for m in 0..model.n_components() {
        let nk = st.resp_sum[m];
        model.weights[m] = nk / total;
        if model.weights[m] < MIN_COMPONENT_WEIGHT || nk <= 0.0 {
            collapsed.get_or_insert(m);
            continue;
        }
        for d in 0..model.dim() {
            let mu = st.first[m][d] / nk;
            let var = (st.second[m][d] / nk - mu * mu).max(var_floor);
            model.means[m][d] = mu;
            model.variances[m][d] = var;
        }
    }
    debug_assert!((total - n).abs() <= 1e-6 * n);
    collapsed
}

/// Means, weights and floored variances from an LBG partition of `data`
/// trimmed to the `m` most populous cells.
fn lbg_init(data: &[Vec<f64>], m: usize, var_floor: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let q = vq_dtw::lbg_quantizer(data, m.next_power_of_two(), vq_dtw::DEFAULT_SPLIT_EPS)?;
    let mut order: Vec<usize> = (0..q.centroids.len()).collect();
    order.sort_by(|&a, &b| q.counts[b].cmp(&q.counts[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    let centroids: Vec<Vec<f64>> = order.iter().map(|&i| q.centroids[i].clone()).collect();

    let dim = data[0].len();
    let mut counts = vec![0usize; m];
    let mut sums = vec![vec![0.0; dim]; m];
    let mut sq = vec![vec![0.0; dim]; m];
    for x in data {
        let (c, _) = vq_dtw::nearest(x, &centroids);
        counts[c] += 1;
        for d in 0..dim {
            sums[c][d] += x[d];
            sq[c][d] += x[d] * x[d];
        }
    }
    let n = data.len() as f64;
    let mut weights = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    for c in 0..m {
        let cnt = counts[c] as f64;
        if counts[c] == 0 {
            // keep the centroid; EM will pull it in or flag it
            weights.push(1.0 / n);
            means.push(centroids[c].clone());
            variances.push(vec![1.0f64.max(var_floor); dim]);
            continue;
        }
        weights.push(cnt / n);
        let mu: Vec<f64> = sums[c].iter().map(|s| s / cnt).collect();
        variances.push(
            (0..dim)
                .map(|d| (sq[c][d] / cnt - mu[d] * mu[d]).max(var_floor))
                .collect(),
        );
        means.push(mu);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((weights, means, variances))
}

/// Re-seeds component `m` on a randomly chosen poorly explained frame.
fn reseed_component(model: &mut GmmModel, m: usize, data: &[Vec<f64>], rng: &mut ChaCha8Rng, var_floor: f64) {
    let dim = model.dim();
    let n = data.len() as f64;
    let mut global_mean = vec![0.0; dim];
    for x in data {
        global_mean.iter_mut().zip(x).for_each(|(g, v)| *g += v / n);
    }
    let global_var: Vec<f64> = (0..dim)
        .map(|d| (data.iter().map(|x| (x[d] - global_mean[d]).powi(2)).sum::<f64>() / n).max(var_floor))
        .collect();
    // pick among the frames farthest from every other mean
    let mut far: Vec<(usize, f64)> = data
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let d = model
                .means
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != m)
                .map(|(_, mu)| sq_dist(x, mu))
                .fold(f64::INFINITY, f64::min);
            (i, d)
        })
        .collect();
    far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let pool = far.len().clamp(1, 10);
    let pick = far[rng.random_range(0..pool)].0;
    model.means[m] = data[pick].clone();
    model.variances[m] = global_var;
    model.weights[m] = 1.0 / model.n_components() as f64;
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

/// Fits an `m`-component diagonal GMM by EM.
pub fn em_fit(features: &[Vec<f64>], m: usize, opts: &EmOptions) -> Result<GmmModel> {
    if m == 0 {
        return Err(LidError::InvalidArgument("mixture needs at least one component".into()));
    }
    if features.len() < 10 * m {
        return Err(LidError::InsufficientData(format!(
            "{} frames for {m} components (need {})",
            features.len(),
            10 * m
        )));
    }
    let (weights, means, variances) = lbg_init(features, m, opts.var_floor)?;
    let mut model = GmmModel { label: String::new(), weights, means, variances, history: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut reseeded = vec![false; m];
    let n = features.len() as f64;
    for _ in 0..opts.max_iters {
        let st = e_step(&model, features);
        let gain = model.history.last().map(|prev| st.loglik - prev);
        model.history.push(st.loglik);
        if gain.is_some_and(|g| g < opts.tol) {
            return Ok(model);
        }
        if let Some(bad) = m_step(&mut model, &st, n, opts.var_floor) {
            if reseeded[bad] {
                return Err(LidError::DegenerateComponent(bad));
            }
            reseeded[bad] = true;
            reseed_component(&mut model, bad, features, &mut rng, opts.var_floor);
            // the re-seeded model starts a fresh ascent
            model.history.clear();
        }
    }
    let st = e_step(&model, features);
    model.history.push(st.loglik);
    Ok(model)
}

/// Languages ranked by descending average log-likelihood (ties by name).
pub fn classify_gmm(
    features: &[Vec<f64>],
    models: &BTreeMap<String, GmmModel>,
) -> Result<Vec<(String, f64)>> {
    if models.is_empty() {
        return Err(LidError::InvalidArgument("no language models".into()));
    }
    let mut scored = models
        .iter()
        .map(|(name, model)| Ok((name.clone(), avg_log_likelihood(model, features)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn unit_model() -> GmmModel {
        GmmModel {
            label: "x".into(),
            weights: vec![1.0],
            means: vec![vec![0.0]],
            variances: vec![vec![1.0]],
            history: vec![],
        }
    }

    #[test]
    fn standard_normal_at_origin() {
        let ll = avg_log_likelihood(&unit_model(), &[vec![0.0]]).unwrap();
        assert!((ll - (-0.5 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn far_points_stay_finite() {
        let mut m = unit_model();
        m.weights = vec![0.5, 0.5];
        m.means = vec![vec![-1.0], vec![1.0]];
        m.variances = vec![vec![1e-4], vec![1e-4]];
        let ll = avg_log_likelihood(&m, &[vec![100.0]]).unwrap();
        assert!(ll.is_finite());
        let r = m.responsibilities(&[100.0]);
        assert!(r.iter().all(|v| v.is_finite()));
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_frames_keep_the_average() {
        let m = unit_model();
        let xs = vec![vec![0.3], vec![-1.7], vec![2.2]];
        let doubled: Vec<Vec<f64>> = xs.iter().flat_map(|x| [x.clone(), x.clone()]).collect();
        let a = avg_log_likelihood(&m, &xs).unwrap();
        let b = avg_log_likelihood(&m, &doubled).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(avg_log_likelihood(&m, &[vec![0.0, 1.0]]), Err(LidError::ShapeMismatch { .. })));
    }

    #[test]
    fn two_separated_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::new();
        for i in 0..2000 {
            let c = if i % 2 == 0 { -5.0 } else { 5.0 };
            data.push((0..13).map(|_| c + noise.sample(&mut rng)).collect::<Vec<f64>>());
        }
        let g = em_fit(&data, 2, &EmOptions::default()).unwrap();
        let mut order: Vec<usize> = vec![0, 1];
        order.sort_by(|&a, &b| g.means[a][0].total_cmp(&g.means[b][0]));
        for (slot, truth) in order.iter().zip([-5.0, 5.0]) {
            assert!(g.means[*slot].iter().all(|m| (m - truth).abs() < 0.1));
            assert!((g.weights[*slot] - 0.5).abs() < 0.05);
        }
        for w in g.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn too_few_frames() {
        let data = vec![vec![0.0]; 15];
        assert!(matches!(em_fit(&data, 2, &EmOptions::default()), Err(LidError::InsufficientData(_))));
    }

    #[test]
    fn ranking_prefers_own_model() {
        let a = unit_model();
        let mut b = unit_model();
        b.means = vec![vec![3.0]];
        let models: BTreeMap<String, GmmModel> =
            [("a".to_string(), a), ("b".to_string(), b)].into_iter().collect();
        let ranked = classify_gmm(&[vec![2.9], vec![3.2]], &models).unwrap();
        assert_eq!(ranked[0].0, "b");
    }
}
