//! Two-dimensional UMAP with optional categorical supervision.
//!
//! Follows the reference construction: a fuzzy k-nearest-neighbour graph
//! (smoothed kNN distances, fuzzy union), optionally intersected with a
//! label graph, laid out by negative-sampling SGD from a PCA start.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of a token with no supervision.
pub const UNLABELED: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    /// `None` picks 500 for up to 10,000 points and 200 above.
    pub n_epochs: Option<usize>,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub repulsion_strength: f64,
    /// Balance between feature and label graphs, in `[0, 1)`.
    pub target_weight: f64,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: None,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            repulsion_strength: 1.0,
            target_weight: 0.5,
        }
    }
}

/// Row-major points of equal dimension.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    pub data: &'a [f32],
    pub dim: usize,
}

impl Points<'_> {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `k` nearest neighbours of every point, the point itself first. Ties are
/// broken by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> (&[u32], &[f64]) {
        let r = i * self.k..(i + 1) * self.k;
        (&self.indices[r.clone()], &self.distances[r])
    }
}

/// Exact brute-force kNN under Euclidean distance.
pub fn knn_graph(points: Points<'_>, k: usize) -> Result<KnnGraph> {
    let n = points.len();
    if k == 0 {
        return Err(Error::config("n_neighbors", "must be positive"));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "{n} points but {k} neighbours requested"
        )));
    }
    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = points.row(i);
            // Sorted by (distance, index); kept at most k long.
            let mut best: Vec<(f32, u32)> = Vec::with_capacity(k + 1);
            for j in 0..n {
                let xj = points.row(j);
                let mut d = 0.0f32;
                for (a, b) in xi.iter().zip(xj) {
                    let t = a - b;
                    d += t * t;
                }
                if j == i {
                    d = -1.0;
                }
                if best.len() == k && d >= best[k - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|&(bd, bj)| (bd, bj) < (d, j as u32));
                best.insert(pos, (d, j as u32));
                best.truncate(k);
            }
            let idx = best.iter().map(|b| b.1).collect();
            let dist = best.iter().map(|b| (b.0.max(0.0) as f64).sqrt()).collect();
            (idx, dist)
        })
        .collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (i, d) in rows {
        indices.extend(i);
        distances.extend(d);
    }
    Ok(KnnGraph {
        k,
        indices,
        distances,
    })
}

/// Sparse symmetric graph stored as sorted `(row, col, weight)` triples.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Graph {
    pub n: usize,
    pub edges: Vec<(u32, u32, f64)>,
}

const SMOOTH_K_TOLERANCE: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;

/// Per-point `rho` (distance to nearest non-identical neighbour) and
/// `sigma` so that the memberships sum to `log2(k)`.
fn smooth_knn_dist(knn: &KnnGraph) -> (Vec<f64>, Vec<f64>) {
    let n = knn.len();
    let k = knn.k;
    let target = (k as f64).log2();
    let mean_all = knn.distances.iter().sum::<f64>() / knn.distances.len() as f64;
    let mut rho = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    for i in 0..n {
        let (_, d) = knn.neighbors(i);
        if let Some(&first) = d.iter().find(|&&x| x > 0.0) {
            rho[i] = first;
        }
        let (mut lo, mut hi, mut mid) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..64 {
            let psum: f64 = d[1..]
                .iter()
                .map(|&x| {
                    let t = x - rho[i];
                    if t > 0.0 {
                        (-t / mid).exp()
                    } else {
                        1.0
                    }
                })
                .sum();
            if (psum - target).abs() < SMOOTH_K_TOLERANCE {
                break;
            }
            if psum > target {
                hi = mid;
                mid = (lo + hi) / 2.0;
            } else {
                lo = mid;
                if hi == f64::INFINITY {
                    mid *= 2.0;
                } else {
                    mid = (lo + hi) / 2.0;
                }
            }
        }
        let mean_i = d.iter().sum::<f64>() / k as f64;
        sigma[i] = if rho[i] > 0.0 {
            mid.max(MIN_K_DIST_SCALE * mean_i)
        } else {
            mid.max(MIN_K_DIST_SCALE * mean_all)
        };
    }
    (rho, sigma)
}

/// `A + A^T - A * A^T` over a directed edge list.
fn fuzzy_union(n: usize, directed: Vec<(u32, u32, f64)>) -> Graph {
    let mut both: Vec<(u32, u32, f64, bool)> = Vec::with_capacity(directed.len() * 2);
    for &(i, j, w) in &directed {
        both.push((i, j, w, false));
        both.push((j, i, w, true));
    }
    both.sort_by(|a, b| (a.0, a.1, a.3).cmp(&(b.0, b.1, b.3)));
    let mut edges = Vec::with_capacity(both.len());
    let mut idx = 0;
    while idx < both.len() {
        let (i, j) = (both[idx].0, both[idx].1);
        let (mut a, mut at) = (0.0, 0.0);
        while idx < both.len() && both[idx].0 == i && both[idx].1 == j {
            if both[idx].3 {
                at = both[idx].2;
            } else {
                a = both[idx].2;
            }
            idx += 1;
        }
        let w = a + at - a * at;
        if w > 0.0 {
            edges.push((i, j, w));
        }
    }
    Graph { n, edges }
}

pub(crate) fn fuzzy_simplicial_set(knn: &KnnGraph) -> Graph {
    let n = knn.len();
    let (rho, sigma) = smooth_knn_dist(knn);
    let mut directed = Vec::with_capacity(n * knn.k);
    for i in 0..n {
        let (idx, d) = knn.neighbors(i);
        for (&j, &dist) in idx.iter().zip(d) {
            if j as usize == i {
                continue;
            }
            let w = if dist - rho[i] <= 0.0 || sigma[i] == 0.0 {
                1.0
            } else {
                (-(dist - rho[i]) / sigma[i]).exp()
            };
            directed.push((i as u32, j, w));
        }
    }
    fuzzy_union(n, directed)
}

/// Scales edges by `exp(-1)` when an endpoint is unlabeled and by
/// `exp(-far)` when labels differ, then renormalizes each row to a maximum
/// of one and re-symmetrizes.
pub(crate) fn intersect_labels(graph: &Graph, labels: &[i32], target_weight: f64) -> Graph {
    let far = if target_weight < 1.0 {
        2.5 / (1.0 - target_weight)
    } else {
        1e12
    };
    let mut edges: Vec<(u32, u32, f64)> = graph
        .edges
        .iter()
        .map(|&(i, j, w)| {
            let (a, b) = (labels[i as usize], labels[j as usize]);
            let w = if a == UNLABELED || b == UNLABELED {
                w * (-1.0f64).exp()
            } else if a != b {
                w * (-far).exp()
            } else {
                w
            };
            (i, j, w)
        })
        .collect();
    let mut row_max = vec![0.0f64; graph.n];
    for &(i, _, w) in &edges {
        row_max[i as usize] = row_max[i as usize].max(w);
    }
    for e in edges.iter_mut() {
        let m = row_max[e.0 as usize];
        if m > 0.0 {
            e.2 /= m;
        }
    }
    edges.retain(|e| e.2 > 0.0);
    fuzzy_union(graph.n, edges)
}

/// Fits `1 / (1 + a x^(2b))` to the target membership curve by damped
/// Gauss-Newton.
pub fn find_ab_params(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| (1.0 / (1.0 + a * x.powf(2.0 * b)) - y).powi(2))
            .sum()
    };
    let (mut a, mut b) = (1.0, 1.0);
    let mut lambda = 1e-3;
    let mut cur = sse(a, b);
    for _ in 0..500 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let f = 1.0 / den;
            let r = f - y;
            let da = -p / (den * den);
            let db = -a * p * 2.0 * x.ln() / (den * den);
            let jr = [da, db];
            for u in 0..2 {
                jtr[u] += jr[u] * r;
                for v in 0..2 {
                    jtj[u][v] += jr[u] * jr[v];
                }
            }
        }
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det == 0.0 {
            break;
        }
        let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (na, nb) = (a + da, b + db);
        let next = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
        if next < cur {
            let done = (cur - next) < 1e-15 * cur.max(1e-300);
            a = na;
            b = nb;
            cur = next;
            lambda *= 0.3;
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

/// First two principal components scaled so the largest coordinate
/// magnitude is 10. Random uniform start when the data has no spread.
fn pca_init(points: Points<'_>, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = points.len();
    let d = points.dim;
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(points.row(i)) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (&x, m)) in centered.iter_mut().zip(points.row(i).iter().zip(&mean)) {
            *c = x as f64 - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    if d < 2 || eig.eigenvalues[order[0]] <= 0.0 {
        return (0..n)
            .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)])
            .collect();
    }
    let mut comps = [vec![0.0; d], vec![0.0; d]];
    for (c, &o) in comps.iter_mut().zip(&order) {
        let col = eig.eigenvectors.column(o);
        let big = (0..d)
            .max_by(|&x, &y| col[x].abs().total_cmp(&col[y].abs()).then(y.cmp(&x)))
            .unwrap_or(0);
        let sign = if col[big] < 0.0 { -1.0 } else { 1.0 };
        for (ci, v) in c.iter_mut().zip(col.iter()) {
            *ci = sign * v;
        }
    }
    let mut out: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let mut z = [0.0; 2];
            for (zk, comp) in z.iter_mut().zip(&comps) {
                *zk = points
                    .row(i)
                    .iter()
                    .zip(&mean)
                    .zip(comp)
                    .map(|((&x, m), c)| (x as f64 - m) * c)
                    .sum();
            }
            z
        })
        .collect();
    let max = out.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
    if max > 0.0 {
        for p in out.iter_mut() {
            p[0] *= 10.0 / max;
            p[1] *= 10.0 / max;
        }
    }
    out
}

fn clip(v: f32) -> f32 {
    v.clamp(-4.0, 4.0)
}

/// Edge-sampled SGD, run sequentially so a seed fixes the layout. Works in
/// f32 like the reference implementation.
#[allow(clippy::too_many_arguments)]
fn optimize_layout(
    coords: &mut [[f64; 2]],
    graph: &Graph,
    n_epochs: usize,
    a: f64,
    b: f64,
    params: &UmapParams,
    rng: &mut ChaCha8Rng,
) {
    let n = coords.len();
    let wmax = graph.edges.iter().fold(0.0f64, |m, e| m.max(e.2));
    if wmax <= 0.0 {
        return;
    }
    // Drop edges too weak to be sampled even once.
    let edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .filter(|e| e.2 >= wmax / n_epochs as f64)
        .map(|&(i, j, w)| (i as usize, j as usize, wmax / w))
        .collect();
    let nsr = params.negative_sample_rate as f64;
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let mut next_negative: Vec<f64> = edges.iter().map(|e| e.2 / nsr).collect();
    let mut emb: Vec<[f32; 2]> = coords.iter().map(|c| [c[0] as f32, c[1] as f32]).collect();
    let (a, b) = (a as f32, b as f32);
    let gamma = params.repulsion_strength as f32;
    let attract = -2.0 * a * b;
    let repel = 2.0 * gamma * b;

    for epoch in 0..n_epochs {
        let alpha = (params.learning_rate * (1.0 - epoch as f64 / n_epochs as f64)) as f32;
        let ep = epoch as f64;
        for (e, &(j, k, eps)) in edges.iter().enumerate() {
            if next_sample[e] > ep {
                continue;
            }
            let mut cur = emb[j];
            let other = emb[k];
            let dx = [cur[0] - other[0], cur[1] - other[1]];
            let dist_sq = dx[0] * dx[0] + dx[1] * dx[1];
            if dist_sq > 0.0 {
                let pb = dist_sq.powf(b);
                let coeff = attract * pb / dist_sq / (a * pb + 1.0);
                let g = [clip(coeff * dx[0]) * alpha, clip(coeff * dx[1]) * alpha];
                cur[0] += g[0];
                cur[1] += g[1];
                emb[k][0] -= g[0];
                emb[k][1] -= g[1];
            }
            next_sample[e] += eps;

            let eps_neg = eps / nsr;
            let n_neg = ((ep - next_negative[e]) / eps_neg).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let r = rng.random_range(0..n);
                if r == j {
                    continue;
                }
                let o = emb[r];
                let dx = [cur[0] - o[0], cur[1] - o[1]];
                let dist_sq = dx[0] * dx[0] + dx[1] * dx[1];
                if dist_sq > 0.0 {
                    let coeff = repel / ((0.001 + dist_sq) * (a * dist_sq.powf(b) + 1.0));
                    cur[0] += clip(coeff * dx[0]) * alpha;
                    cur[1] += clip(coeff * dx[1]) * alpha;
                } else {
                    cur[0] += 4.0 * alpha;
                    cur[1] += 4.0 * alpha;
                }
            }
            next_negative[e] += n_neg as f64 * eps_neg;
            emb[j] = cur;
        }
    }
    for (c, e) in coords.iter_mut().zip(&emb) {
        *c = [e[0] as f64, e[1] as f64];
    }
}

/// 2-D coordinates of every point. `labels`, when given, holds one class id
/// per point with [`UNLABELED`] for points without supervision; with no
/// labeled point at all the supervision step is skipped.
pub fn umap_embed(
    points: Points<'_>,
    knn: &KnnGraph,
    labels: Option<&[i32]>,
    params: &UmapParams,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if knn.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: knn.len(),
        });
    }
    if !(0.0..1.0).contains(&params.target_weight) {
        return Err(Error::config("target_weight", "must lie in [0, 1)"));
    }
    if params.min_dist < 0.0 || params.spread <= 0.0 || params.min_dist > params.spread {
        return Err(Error::config("min_dist", "must lie in [0, spread]"));
    }
    let mut graph = fuzzy_simplicial_set(knn);
    if let Some(labels) = labels {
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if labels.iter().any(|&l| l != UNLABELED) {
            graph = intersect_labels(&graph, labels, params.target_weight);
        }
    }
    let n_epochs = params
        .n_epochs
        .unwrap_or(if n <= 10_000 { 500 } else { 200 });
    let (a, b) = find_ab_params(params.spread, params.min_dist);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = pca_init(points, &mut rng);
    optimize_layout(&mut emb, &graph, n_epochs, a, b, params, &mut rng);
    Ok(emb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ab_for_default_params() {
        let (a, b) = find_ab_params(1.0, 0.1);
        assert!((a - 1.577).abs() < 5e-3, "{a}");
        assert!((b - 0.895).abs() < 5e-3, "{b}");
    }

    #[test]
    fn knn_puts_self_first() {
        let data = [0.0f32, 0.0, 1.0, 0.0, 3.0, 0.0, 3.5, 0.0];
        let g = knn_graph(Points { data: &data, dim: 2 }, 2).unwrap();
        assert_eq!(g.neighbors(0).0, &[0, 1]);
        assert_eq!(g.neighbors(2).0, &[2, 3]);
        assert_eq!(g.neighbors(2).1, &[0.0, 0.5]);
        assert!(knn_graph(Points { data: &data, dim: 2 }, 5).is_err());
    }

    #[test]
    fn duplicate_points_tie_by_index() {
        let data = [1.0f32; 8];
        let g = knn_graph(Points { data: &data, dim: 2 }, 3).unwrap();
        assert_eq!(g.neighbors(2).0, &[2, 0, 1]);
    }

    #[test]
    fn memberships_sum_to_log2_k() {
        let data: Vec<f32> = (0..40).map(|i| ((i * 37) % 11) as f32 * 0.3).collect();
        let knn = knn_graph(Points { data: &data, dim: 2 }, 5).unwrap();
        let (rho, sigma) = smooth_knn_dist(&knn);
        for i in 0..knn.len() {
            let (_, d) = knn.neighbors(i);
            let s: f64 = d[1..]
                .iter()
                .map(|&x| if x - rho[i] > 0.0 { (-(x - rho[i]) / sigma[i]).exp() } else { 1.0 })
                .sum();
            if sigma[i] > MIN_K_DIST_SCALE {
                assert!((s - 5f64.log2()).abs() < 1e-3, "{s}");
            }
        }
    }

    #[test]
    fn union_is_symmetric() {
        let g = fuzzy_union(3, vec![(0, 1, 0.5), (1, 0, 0.5), (1, 2, 1.0)]);
        assert_eq!(
            g.edges,
            vec![(0, 1, 0.75), (1, 0, 0.75), (1, 2, 1.0), (2, 1, 1.0)]
        );
    }

    #[test]
    fn label_intersection_penalizes_disagreement() {
        let g = fuzzy_union(4, vec![(0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0)]);
        let out = intersect_labels(&g, &[0, 0, 1, 1], 0.5);
        let w = |i, j| out.edges.iter().find(|e| e.0 == i && e.1 == j).unwrap().2;
        assert!(w(0, 1) > 0.99);
        assert!(w(0, 2) < 0.1);
    }
}
