//! HDBSCAN over 2-D points with GLOSH outlier scores.
//!
//! Mutual-reachability minimum spanning tree (Prim, dense), single-linkage
//! dendrogram, condensed tree, excess-of-mass cluster selection without a
//! single root cluster.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lambda for zero distances, which would otherwise be infinite.
const MIN_DISTANCE: f64 = 1e-150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

/// One row of the condensed tree: `child` leaves `parent` at `lambda`.
/// Children below the number of points are points; the rest are clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Dense cluster label per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub sizes: Vec<usize>,
    pub n_noise: usize,
    /// Number of clusters in the condensed tree, root excluded.
    pub n_candidate_clusters: usize,
    /// Every point was identical and the input was treated as one cluster.
    pub degenerate: bool,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Cluster with the most members, ties to the lower label.
    pub fn largest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (c, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|b| s > self.sizes[b]) {
                best = Some(c);
            }
        }
        best
    }

    /// True when more than one cluster shares the maximum size.
    pub fn largest_is_tied(&self) -> bool {
        match self.largest() {
            Some(b) => self.sizes.iter().filter(|&&s| s == self.sizes[b]).count() > 1,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdbscanResult {
    pub assignment: ClusterAssignment,
    /// GLOSH score per point, in `[0, 1]`.
    pub outlier_scores: Vec<f64>,
    pub condensed: Vec<CondensedEdge>,
}

fn dist_sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Distance to the `min_samples`-th nearest point, the point itself counted.
fn core_distances(points: &[[f64; 2]], min_samples: usize) -> Vec<f64> {
    let k = min_samples.max(1);
    points
        .par_iter()
        .map_init(
            || Vec::with_capacity(points.len()),
            |d: &mut Vec<f64>, p| {
                d.clear();
                d.extend(points.iter().map(|q| dist_sq(p, q)));
                let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
                kth.sqrt()
            },
        )
        .collect()
}

/// Minimum spanning tree of the mutual-reachability graph as
/// `(a, b, weight)` edges sorted by weight.
fn mst(points: &[[f64; 2]], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    // Squared weights order the same way; roots are taken per edge at the end.
    let core_sq: Vec<f64> = core.iter().map(|c| c * c).collect();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        let (pc, cc) = (points[cur], core_sq[cur]);
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let w = dist_sq(&pc, &points[j]).max(cc).max(core_sq[j]);
            if w < best[j] {
                best[j] = w;
                from[j] = cur;
            }
            if best[j] < next_w || next == usize::MAX {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_w.sqrt()));
        cur = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    edges
}

/// Single-linkage merges `(left, right, distance, size)`; merge `i` creates
/// node `n + i`.
fn single_linkage(n: usize, edges: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64, usize)> {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut out = Vec::with_capacity(edges.len());
    for (i, &(a, b, w)) in edges.iter().enumerate() {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let node = n + i;
        parent[ra] = node;
        parent[rb] = node;
        size[node] = size[ra] + size[rb];
        out.push((ra, rb, w, size[node]));
    }
    out
}

fn condense(n: usize, hierarchy: &[(usize, usize, f64, usize)], min_size: usize) -> Vec<CondensedEdge> {
    let root = 2 * n - 2;
    let node_size = |x: usize| if x < n { 1 } else { hierarchy[x - n].3 };
    let leaves = |x: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![x];
        while let Some(y) = stack.pop() {
            if y < n {
                out.push(y);
            } else {
                let (l, r, _, _) = hierarchy[y - n];
                stack.push(r);
                stack.push(l);
            }
        }
        out
    };
    let mut relabel = vec![0usize; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut result = Vec::new();
    // Breadth-first from the root; nodes swallowed into a parent are never
    // queued, so no ignore list is needed.
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let (left, right, d, _) = hierarchy[node - n];
        let lambda = 1.0 / d.max(MIN_DISTANCE);
        let (ls, rs) = (node_size(left), node_size(right));
        let parent = relabel[node];
        let fall_out = |child: usize, result: &mut Vec<CondensedEdge>| {
            for p in leaves(child) {
                result.push(CondensedEdge { parent, child: p, lambda, size: 1 });
            }
        };
        match (ls >= min_size, rs >= min_size) {
            (true, true) => {
                for (c, s) in [(left, ls), (right, rs)] {
                    relabel[c] = next_label;
                    result.push(CondensedEdge { parent, child: next_label, lambda, size: s });
                    next_label += 1;
                    queue.push_back(c);
                }
            }
            (false, false) => {
                fall_out(left, &mut result);
                fall_out(right, &mut result);
            }
            (true, false) => {
                relabel[left] = parent;
                fall_out(right, &mut result);
                queue.push_back(left);
            }
            (false, true) => {
                relabel[right] = parent;
                fall_out(left, &mut result);
                queue.push_back(right);
            }
        }
    }
    result
}

/// Excess-of-mass selection; the root is never selected.
fn select_clusters(n: usize, tree: &[CondensedEdge]) -> (BTreeSet<usize>, usize) {
    let mut birth: BTreeMap<usize, f64> = BTreeMap::new();
    birth.insert(n, 0.0);
    for e in tree.iter().filter(|e| e.child >= n) {
        birth.insert(e.child, e.lambda);
    }
    let mut stability: BTreeMap<usize, f64> = birth.keys().map(|&c| (c, 0.0)).collect();
    for e in tree {
        *stability.get_mut(&e.parent).unwrap() += (e.lambda - birth[&e.parent]) * e.size as f64;
    }
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in tree.iter().filter(|e| e.child >= n) {
        children.entry(e.parent).or_default().push(e.child);
    }
    let candidates: Vec<usize> = stability.keys().copied().filter(|&c| c != n).collect();
    let mut selected: BTreeSet<usize> = candidates.iter().copied().collect();
    for &node in candidates.iter().rev() {
        let kids = children.get(&node).cloned().unwrap_or_default();
        let subtree: f64 = kids.iter().map(|k| stability[k]).sum();
        if !kids.is_empty() && subtree > stability[&node] {
            selected.remove(&node);
            stability.insert(node, subtree);
        } else {
            let mut stack = kids;
            while let Some(c) = stack.pop() {
                selected.remove(&c);
                if let Some(k) = children.get(&c) {
                    stack.extend(k);
                }
            }
        }
    }
    (selected, candidates.len())
}

fn glosh(n: usize, tree: &[CondensedEdge]) -> Vec<f64> {
    let max_node = tree.iter().map(|e| e.parent.max(e.child)).max().unwrap_or(n);
    let mut deaths = vec![0.0f64; max_node + 1];
    for e in tree {
        deaths[e.parent] = deaths[e.parent].max(e.lambda);
    }
    let mut cluster_rows: Vec<&CondensedEdge> = tree.iter().filter(|e| e.child >= n).collect();
    cluster_rows.sort_by(|a, b| b.child.cmp(&a.child));
    for e in cluster_rows {
        if deaths[e.child] > deaths[e.parent] {
            deaths[e.parent] = deaths[e.child];
        }
    }
    let mut scores = vec![0.0; n];
    for e in tree.iter().filter(|e| e.child < n) {
        let lmax = deaths[e.parent];
        scores[e.child] = if lmax > 0.0 {
            ((lmax - e.lambda) / lmax).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    scores
}

pub fn hdbscan(points: &[[f64; 2]], params: &HdbscanParams) -> Result<HdbscanResult> {
    let n = points.len();
    if params.min_cluster_size < 2 {
        return Err(Error::config("min_cluster_size", "must be at least 2"));
    }
    if params.min_samples == 0 {
        return Err(Error::config("min_samples", "must be positive"));
    }
    if n < params.min_cluster_size || n < params.min_samples {
        return Err(Error::InvalidArgument(format!(
            "{n} points is fewer than min_cluster_size/min_samples"
        )));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Numerical("cluster input".into()));
    }
    if points.iter().all(|p| p == &points[0]) {
        tracing::warn!("all points identical; treating as one cluster");
        return Ok(HdbscanResult {
            assignment: ClusterAssignment {
                labels: vec![Some(0); n],
                sizes: vec![n],
                n_noise: 0,
                n_candidate_clusters: 0,
                degenerate: true,
            },
            outlier_scores: vec![0.0; n],
            condensed: Vec::new(),
        });
    }
    let core = core_distances(points, params.min_samples);
    let edges = mst(points, &core);
    let hierarchy = single_linkage(n, &edges);
    let condensed = condense(n, &hierarchy, params.min_cluster_size);
    let (selected, n_candidates) = select_clusters(n, &condensed);

    // A point belongs to the selected cluster it descends from, if any.
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    let mut parent_of: BTreeMap<usize, usize> = BTreeMap::new();
    for e in condensed.iter().filter(|e| e.child >= n) {
        parent_of.insert(e.child, e.parent);
    }
    let label_of: BTreeMap<usize, usize> = selected.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut resolve = |mut c: usize| -> Option<usize> {
        let start = c;
        if let Some(&o) = owner.get(&start) {
            return (o != usize::MAX).then_some(o);
        }
        loop {
            if let Some(&l) = label_of.get(&c) {
                owner.insert(start, l);
                return Some(l);
            }
            match parent_of.get(&c) {
                Some(&p) => c = p,
                None => {
                    owner.insert(start, usize::MAX);
                    return None;
                }
            }
        }
    };
    let mut labels = vec![None; n];
    for e in condensed.iter().filter(|e| e.child < n) {
        labels[e.child] = resolve(e.parent);
    }
    let mut sizes = vec![0usize; selected.len()];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    let n_noise = labels.iter().filter(|l| l.is_none()).count();
    let outlier_scores = glosh(n, &condensed);
    Ok(HdbscanResult {
        assignment: ClusterAssignment {
            labels,
            sizes,
            n_noise,
            n_candidate_clusters: n_candidates,
            degenerate: false,
        },
        outlier_scores,
        condensed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(cx: f64, cy: f64, n: usize, r: f64) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 2.399_963;
                let s = r * ((i as f64 + 0.5) / n as f64).sqrt();
                [cx + s * t.cos(), cy + s * t.sin()]
            })
            .collect()
    }

    #[test]
    fn two_blobs_two_clusters() {
        let mut pts = blob(0.0, 0.0, 60, 1.0);
        pts.extend(blob(20.0, 0.0, 40, 1.0));
        let r = hdbscan(&pts, &HdbscanParams { min_cluster_size: 10, min_samples: 5 }).unwrap();
        assert_eq!(r.assignment.n_clusters(), 2);
        let big = r.assignment.largest().unwrap();
        assert_eq!(r.assignment.sizes[big], 60);
        assert!(r.outlier_scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = vec![[1.0, 2.0]; 30];
        let r = hdbscan(&pts, &HdbscanParams { min_cluster_size: 5, min_samples: 5 }).unwrap();
        assert!(r.assignment.degenerate);
        assert_eq!(r.assignment.sizes, vec![30]);
        assert!(r.outlier_scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn largest_tie_goes_to_lower_label() {
        let a = ClusterAssignment {
            labels: vec![],
            sizes: vec![3, 5, 5],
            n_noise: 0,
            n_candidate_clusters: 3,
            degenerate: false,
        };
        assert_eq!(a.largest(), Some(1));
        assert!(a.largest_is_tied());
    }

    #[test]
    fn mst_total_weight_matches_kruskal() {
        let pts: Vec<[f64; 2]> = (0..30)
            .map(|i| [((i * 17) % 13) as f64, ((i * 7) % 11) as f64 * 0.7])
            .collect();
        let core = core_distances(&pts, 3);
        let prim: f64 = mst(&pts, &core).iter().map(|e| e.2).sum();
        let mut all = Vec::new();
        for i in 0..30 {
            for j in i + 1..30 {
                all.push((i, j, dist_sq(&pts[i], &pts[j]).sqrt().max(core[i]).max(core[j])));
            }
        }
        all.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut comp: Vec<usize> = (0..30).collect();
        let mut kruskal = 0.0;
        for (a, b, w) in all {
            let (ca, cb) = (comp[a], comp[b]);
            if ca != cb {
                kruskal += w;
                for c in comp.iter_mut() {
                    if *c == cb {
                        *c = ca;
                    }
                }
            }
        }
        assert!((prim - kruskal).abs() < 1e-9);
    }
}
