//! LBG codebooks and DTW scoring of codebook signatures.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::audio_io::mean_two_pass;
use crate::error::{LidError, Result};

pub const DEFAULT_SPLIT_EPS: f64 = 0.01;
pub const LLOYD_REL_TOL: f64 = 1e-4;
const MAX_LLOYD_ITERS: usize = 200;

/// Codebook size used for both utterance and language signatures.
pub const DEFAULT_CODEBOOK_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// sorted lexicographically by coefficient value
    pub centroids: Vec<Vec<f64>>,
    /// final mean squared quantization error
    pub distortion: f64,
    /// distortion after every Lloyd assignment, across all splitting stages
    pub history: Vec<f64>,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
pub(crate) fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn count_distinct(data: &[Vec<f64>], enough: usize) -> usize {
    let mut sorted: Vec<&Vec<f64>> = data.iter().collect();
    sorted.sort_by(|a, b| lex_cmp(a, b));
    sorted.dedup_by(|a, b| lex_cmp(a, b).is_eq());
    sorted.len().min(enough)
}

fn check_data(data: &[Vec<f64>], k: usize) -> Result<usize> {
    let dim = data.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(LidError::InsufficientData("no feature vectors".into()));
    }
    if let Some(bad) = data.iter().find(|v| v.len() != dim) {
        return Err(LidError::ShapeMismatch { expected: dim, actual: bad.len() });
    }
    let distinct = count_distinct(data, k);
    if distinct < k {
        return Err(LidError::InsufficientData(format!(
            "{distinct} distinct vectors for a codebook of {k}"
        )));
    }
    Ok(dim)
}

/// Result of the unsorted LBG run.
pub(crate) struct Quantizer {
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub history: Vec<f64>,
}

struct Assignment {
    labels: Vec<usize>,
    dists: Vec<f64>,
    distortion: f64,
}

fn assign(data: &[Vec<f64>], centroids: &[Vec<f64>]) -> Assignment {
    let (labels, dists): (Vec<usize>, Vec<f64>) =
        data.iter().map(|x| nearest(x, centroids)).unzip();
    let distortion = dists.iter().sum::<f64>() / data.len() as f64;
    Assignment { labels, dists, distortion }
}

fn cell_means(data: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in data.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// Moves empty centroids onto the farthest member of the most populous cell
/// that still has spread. Returns whether anything moved.
fn reseed_empty(
    data: &[Vec<f64>],
    asg: &Assignment,
    centroids: &mut [Vec<f64>],
    counts: &mut [usize],
) -> bool {
    let mut moved = false;
    let mut taken = vec![false; data.len()];
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut far: Vec<Option<(usize, f64)>> = vec![None; centroids.len()];
        for (i, (&l, &d)) in asg.labels.iter().zip(&asg.dists).enumerate() {
            if taken[i] || d <= 0.0 {
                continue;
            }
            if far[l].is_none_or(|(_, best)| d > best) {
                far[l] = Some((i, d));
            }
        }
        let donor = (0..centroids.len())
            .filter(|&c| far[c].is_some())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
        let Some(donor) = donor else { break };
        let (idx, _) = far[donor].expect("donor has a member");
        taken[idx] = true;
        centroids[empty] = data[idx].clone();
        counts[empty] = 1;
        counts[donor] -= 1;
        moved = true;
    }
    moved
}

/// Lloyd iterations from `centroids` until the relative distortion drop
/// falls below [`LLOYD_REL_TOL`]. Distortions are appended to `history`.
fn lloyd(data: &[Vec<f64>], centroids: &mut [Vec<f64>], history: &mut Vec<f64>) -> Vec<usize> {
    let dim = centroids[0].len();
    let k = centroids.len();
    let mut prev = f64::INFINITY;
    for _ in 0..MAX_LLOYD_ITERS {
        let asg = assign(data, centroids);
        history.push(asg.distortion);
        let (means, mut counts) = cell_means(data, &asg.labels, k, dim);
        let has_empty = counts.contains(&0);
        let converged = asg.distortion == 0.0
            || (prev - asg.distortion) / asg.distortion < LLOYD_REL_TOL;
        if converged && !has_empty {
            return counts;
        }
        prev = asg.distortion;
        for (c, (m, &n)) in centroids.iter_mut().zip(means.iter().zip(&counts)) {
            if n > 0 {
                *c = m.clone();
            }
        }
        if has_empty {
            reseed_empty(data, &asg, centroids, &mut counts);
        }
    }
    let asg = assign(data, centroids);
    history.push(asg.distortion);
    cell_means(data, &asg.labels, k, dim).1
}

/// Binary-splitting LBG up to `k_pow2` cells. Centroids are left in split order.
pub(crate) fn lbg_quantizer(data: &[Vec<f64>], k_pow2: usize, eps: f64) -> Result<Quantizer> {
    if k_pow2 == 0 || !k_pow2.is_power_of_two() {
        return Err(LidError::InvalidArgument(format!("codebook size {k_pow2} is not a power of two")));
    }
    let dim = check_data(data, k_pow2)?;
    let mean: Vec<f64> = (0..dim)
        .map(|d| mean_two_pass(&data.iter().map(|x| x[d]).collect::<Vec<_>>()))
        .collect();
    let mut centroids = vec![mean];
    let mut history = vec![assign(data, &centroids).distortion];
    let mut counts = vec![data.len()];
    while centroids.len() < k_pow2 {
        let prev_labels = assign(data, &centroids).labels;
        let split: Vec<Vec<f64>> = centroids
            .iter()
            .flat_map(|c| {
                [c.iter().map(|v| v * (1.0 + eps)).collect::<Vec<f64>>(), c.iter().map(|v| v * (1.0 - eps)).collect()]
            })
            .collect();
        // First pass keeps every vector inside its parent cell so the split
        // refines the previous partition.
        let labels: Vec<usize> = data
            .iter()
            .zip(&prev_labels)
            .map(|(x, &p)| {
                let (a, b) = (2 * p, 2 * p + 1);
                if sq_dist(x, &split[b]) < sq_dist(x, &split[a]) { b } else { a }
            })
            .collect();
        let (means, child_counts) = cell_means(data, &labels, split.len(), dim);
        centroids = split
            .into_iter()
            .zip(means.into_iter().zip(&child_counts))
            .map(|(s, (m, &c))| if c > 0 { m } else { s })
            .collect();
        counts = lloyd(data, &mut centroids, &mut history);
    }
    if centroids.len() == 1 {
        // K = 1: the mean is already optimal
        counts = vec![data.len()];
    }
    Ok(Quantizer { centroids, counts, history })
}

/// Trains a codebook of `k` (a power of two) centroids by binary splitting.
pub fn lbg_train(features: &[Vec<f64>], k: usize, eps: f64) -> Result<Codebook> {
    let q = lbg_quantizer(features, k, eps)?;
    let mut centroids = q.centroids;
    centroids.sort_by(|a, b| lex_cmp(a, b));
    let distortion = assign(features, &centroids).distortion;
    Ok(Codebook { centroids, distortion, history: q.history })
}

/// Nearest-centroid indices and the mean squared distance.
pub fn quantize(features: &[Vec<f64>], cb: &Codebook) -> Result<(Vec<usize>, f64)> {
    if features.is_empty() {
        return Err(LidError::EmptySequence);
    }
    let dim = cb.dim();
    if let Some(bad) = features.iter().find(|v| v.len() != dim) {
        return Err(LidError::ShapeMismatch { expected: dim, actual: bad.len() });
    }
    let asg = assign(features, &cb.centroids);
    Ok((asg.labels, asg.distortion))
}

/// Path-length-normalised DTW cost with Euclidean local distance and steps
/// (1,0), (0,1), (1,1). Among equal-cost paths the shortest is taken.
pub fn dtw_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(LidError::EmptySequence);
    }
    let dim = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|v| v.len() != dim) {
        return Err(LidError::ShapeMismatch { expected: dim, actual: bad.len() });
    }
    let m = b.len();
    // (cost, path length) per cell of the previous and current rows
    let mut prev: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    let mut cur = prev.clone();
    let better = |x: (f64, usize), y: (f64, usize)| {
        if x.0 < y.0 || (x.0 == y.0 && x.1 < y.1) { x } else { y }
    };
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let local = sq_dist(ai, bj).sqrt();
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                if i > 0 {
                    best = better(prev[j], best);
                }
                if j > 0 {
                    best = better(cur[j - 1], best);
                }
                if i > 0 && j > 0 {
                    best = better(prev[j - 1], best);
                }
                best
            };
            cur[j] = (best.0 + local, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    Ok(cost / len as f64)
}

/// Languages ranked by DTW cost of their signatures against the test
/// utterance's own codebook (ascending; ties by name).
pub fn classify_vq_dtw(
    test: &[Vec<f64>],
    language_books: &BTreeMap<String, Codebook>,
    utterance_k: usize,
) -> Result<Vec<(String, f64)>> {
    if language_books.is_empty() {
        return Err(LidError::InvalidArgument("no language codebooks".into()));
    }
    let own = lbg_train(test, utterance_k, DEFAULT_SPLIT_EPS)?;
    rank_signature(&own, language_books)
}

pub fn rank_signature(
    own: &Codebook,
    language_books: &BTreeMap<String, Codebook>,
) -> Result<Vec<(String, f64)>> {
    let mut scored = language_books
        .iter()
        .map(|(name, cb)| Ok((name.clone(), dtw_distance(&own.centroids, &cb.centroids)?)))
        .collect::<Result<Vec<_>>>()?;
    // BTreeMap order plus a stable sort keeps ties in name order
    scored.sort_by(|x, y| x.1.total_cmp(&y.1));
    Ok(scored)
}
