//! Flat and hierarchical k-means, and the water-filling sampler that
//! draws a balanced subset across clusters.
//!
//! Lloyd steps run over fixed-size point chunks. Partial sums are reduced
//! in chunk order, so the result is bitwise identical whatever the rayon
//! pool size.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, FormatError, Result};
use crate::formats::{non_finite, ByteReader, ByteWriter, FORMAT_VERSION};
use crate::tensor::Matrix;

pub const TREE_MAGIC: &[u8; 4] = b"DTXT";

const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    /// Stop once the relative inertia improvement drops below this.
    pub tol: f64,
    /// L2-normalize points before clustering (spherical behaviour).
    pub normalize: bool,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-4, normalize: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Matrix,
    pub assignment: Vec<u32>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment step; non-increasing.
    pub inertia_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the
/// lowest index.
#[inline]
fn nearest(p: &[f64], centroids: &[f64], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j as u32, d);
        }
    }
    best
}

struct Assigned {
    labels: Vec<u32>,
    dists: Vec<f64>,
    inertia: f64,
}

fn assign(points: &[f64], centroids: &[f64], dim: usize) -> Assigned {
    let parts: Vec<(Vec<u32>, Vec<f64>, f64)> = points
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let mut labels = Vec::with_capacity(chunk.len() / dim);
            let mut dists = Vec::with_capacity(chunk.len() / dim);
            let mut sum = 0.0;
            for p in chunk.chunks_exact(dim) {
                let (j, d) = nearest(p, centroids, dim);
                labels.push(j);
                dists.push(d);
                sum += d;
            }
            (labels, dists, sum)
        })
        .collect();
    let mut out = Assigned { labels: Vec::new(), dists: Vec::new(), inertia: 0.0 };
    for (l, d, s) in parts {
        out.labels.extend(l);
        out.dists.extend(d);
        out.inertia += s;
    }
    out
}

/// Per-cluster means with empty clusters reseeded at the farthest points.
fn update(points: &[f64], dim: usize, k: usize, a: &Assigned) -> Vec<f64> {
    let parts: Vec<(Vec<f64>, Vec<usize>)> = points
        .par_chunks(CHUNK * dim)
        .zip(a.labels.par_chunks(CHUNK))
        .map(|(chunk, labels)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (p, &l) in chunk.chunks_exact(dim).zip(labels) {
                let l = l as usize;
                counts[l] += 1;
                for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(p) {
                    *s += x;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (s, c) in parts {
        for (acc, x) in sums.iter_mut().zip(&s) {
            *acc += x;
        }
        for (acc, x) in counts.iter_mut().zip(&c) {
            *acc += x;
        }
    }
    let mut dists = a.dists.clone();
    for j in 0..k {
        let row = &mut sums[j * dim..(j + 1) * dim];
        if counts[j] > 0 {
            for x in row.iter_mut() {
                // centroids are kept f32-representable so the reported
                // matrix reproduces the fit exactly
                *x = (*x / counts[j] as f64) as f32 as f64;
            }
        } else {
            let far = dists
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                .0;
            row.copy_from_slice(&points[far * dim..(far + 1) * dim]);
            dists[far] = -1.0;
        }
    }
    sums
}

fn kmeans_plus_plus(points: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points.chunks_exact(dim).map(|p| sq_dist(p, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            if d2[chosen] == 0.0 {
                // rounding pushed us past the end; take the last positive mass
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        for (p, d) in points.chunks_exact(dim).zip(d2.iter_mut()) {
            let nd = sq_dist(p, &c);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn prepare_points(points: &Matrix, normalize: bool) -> Vec<f64> {
    let mut out: Vec<f64> = points.as_slice().iter().map(|&x| x as f64).collect();
    if normalize {
        for row in out.chunks_exact_mut(points.cols()) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n >= crate::tensor::DEGENERATE_NORM {
                for x in row.iter_mut() {
                    *x = (*x / n) as f32 as f64;
                }
            }
        }
    }
    out
}

/// k-means++ seeded Lloyd iterations.
pub fn kmeans_fit(points: &Matrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<KMeansResult> {
    let n = points.rows();
    let dim = points.cols();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds number of points {n}")));
    }
    let pts = prepare_points(points, opts.normalize);
    let mut rng = seeded_rng(seed, 0);
    let mut centroids: Vec<f64> = kmeans_plus_plus(&pts, n, dim, k, &mut rng)
        .into_iter()
        .map(|x| x as f32 as f64)
        .collect();

    let mut current = assign(&pts, &centroids, dim);
    let mut trace = vec![current.inertia];
    for _ in 1..opts.max_iters.max(1) {
        if current.inertia == 0.0 {
            break;
        }
        let next_centroids = update(&pts, dim, k, &current);
        let next = assign(&pts, &next_centroids, dim);
        if next.inertia > current.inertia {
            // only reachable through f32 rounding of the means; keep the
            // previous state so the trace stays monotone
            break;
        }
        let unchanged = next.labels == current.labels;
        let improvement = (current.inertia - next.inertia) / current.inertia;
        centroids = next_centroids;
        current = next;
        trace.push(current.inertia);
        if unchanged || improvement < opts.tol {
            break;
        }
    }
    let centroids = Matrix::new(k, dim, centroids.iter().map(|&x| x as f32).collect())?;
    Ok(KMeansResult { centroids, assignment: current.labels, inertia: current.inertia, inertia_trace: trace })
}

/// Labels each row with its nearest centroid (ties to the lowest index).
pub fn assign_nearest(points: &Matrix, centroids: &Matrix) -> Result<Vec<u32>> {
    if points.cols() != centroids.cols() {
        return Err(Error::DimMismatch { expected: centroids.cols(), got: points.cols() });
    }
    let pts: Vec<f64> = points.as_slice().iter().map(|&x| x as f64).collect();
    let cs: Vec<f64> = centroids.as_slice().iter().map(|&x| x as f64).collect();
    Ok(assign(&pts, &cs, points.cols()).labels)
}

/// One level of a [`ClusterTree`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLevel {
    pub centroids: Matrix,
    /// Level 0: one entry per raw point. Level l > 0: one entry per level
    /// l-1 centroid.
    pub assignment: Vec<u32>,
    /// Fit statistics; not persisted, so `None` for trees read from disk.
    pub inertia: Option<f64>,
    pub inertia_trace: Vec<f64>,
}

impl ClusterLevel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

impl From<KMeansResult> for ClusterLevel {
    fn from(r: KMeansResult) -> Self {
        Self { centroids: r.centroids, assignment: r.assignment, inertia: Some(r.inertia), inertia_trace: r.inertia_trace }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub levels: Vec<ClusterLevel>,
}

impl ClusterTree {
    pub fn ks(&self) -> Vec<usize> {
        self.levels.iter().map(ClusterLevel::k).collect()
    }

    pub fn num_points(&self) -> usize {
        self.levels.first().map_or(0, |l| l.assignment.len())
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    fn validate(&self) -> Result<(), String> {
        if self.levels.is_empty() {
            return Err("tree has no levels".into());
        }
        for (l, level) in self.levels.iter().enumerate() {
            if l > 0 && level.assignment.len() != self.levels[l - 1].k() {
                return Err(format!("level {l} assignment length mismatch"));
            }
            if level.assignment.iter().any(|&a| a as usize >= level.k()) {
                return Err(format!("level {l} assignment out of range"));
            }
            if l > 0 && level.k() >= self.levels[l - 1].k() {
                return Err("cluster counts must strictly decrease".into());
            }
        }
        Ok(())
    }
}

/// Level 0 on the raw points, level l on the centroids of level l-1.
pub fn hierarchical_fit(points: &Matrix, ks: &[usize], seed: u64, opts: &KMeansOptions) -> Result<ClusterTree> {
    if ks.is_empty() {
        return Err(Error::invalid("ks must be non-empty"));
    }
    if ks.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(format!("ks must be strictly decreasing, got {ks:?}")));
    }
    let mut levels: Vec<ClusterLevel> = Vec::with_capacity(ks.len());
    for (l, &k) in ks.iter().enumerate() {
        let input = levels.last().map_or(points, |prev| &prev.centroids);
        let fit = kmeans_fit(input, k, seed.wrapping_add(l as u64), opts)?;
        levels.push(fit.into());
    }
    Ok(ClusterTree { levels })
}

/// Cluster index of every raw point at `level`.
pub fn compose_assignment(tree: &ClusterTree, level: usize) -> Result<Vec<u32>> {
    if level >= tree.levels.len() {
        return Err(Error::invalid(format!("level {level} out of range ({} levels)", tree.levels.len())));
    }
    let mut labels = tree.levels[0].assignment.clone();
    for l in 1..=level {
        let up = &tree.levels[l].assignment;
        for x in labels.iter_mut() {
            *x = up[*x as usize];
        }
    }
    Ok(labels)
}

/// Splits `budget` as evenly as possible over bins with the given
/// capacities. Bins that cannot absorb their share give it back to the rest;
/// leftover units go to the bins with the most capacity (lowest index first).
pub fn water_fill(caps: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = caps.iter().sum();
    if budget >= total {
        return caps.to_vec();
    }
    let mut alloc = vec![0usize; caps.len()];
    let mut active: Vec<usize> = (0..caps.len()).filter(|&i| caps[i] > 0).collect();
    let mut remaining = budget;
    while !active.is_empty() && remaining > 0 {
        let share = remaining / active.len();
        let (saturated, open): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&i| caps[i] <= share);
        if saturated.is_empty() {
            for &i in &open {
                alloc[i] = share;
            }
            let mut extra = remaining - share * open.len();
            let mut order = open.clone();
            order.sort_by(|&a, &b| caps[b].cmp(&caps[a]).then(a.cmp(&b)));
            for &i in &order {
                if extra == 0 {
                    break;
                }
                alloc[i] += 1;
                extra -= 1;
            }
            break;
        }
        for &i in &saturated {
            alloc[i] = caps[i];
            remaining -= caps[i];
        }
        active = open;
    }
    alloc
}

/// Recursive water-filling from the top level down; uniform sampling
/// without replacement inside level-0 clusters. Returns sorted indices.
pub fn balanced_sample(tree: &ClusterTree, budget: usize, seed: u64) -> Vec<usize> {
    let n = tree.num_points();
    if budget >= n {
        return (0..n).collect();
    }
    if budget == 0 {
        return Vec::new();
    }
    let depth = tree.levels.len();
    // members[l][c]: children of cluster c at level l (raw points for l = 0)
    let mut members: Vec<Vec<Vec<usize>>> = Vec::with_capacity(depth);
    for level in &tree.levels {
        let mut m = vec![Vec::new(); level.k()];
        for (i, &a) in level.assignment.iter().enumerate() {
            m[a as usize].push(i);
        }
        members.push(m);
    }
    let mut sizes: Vec<Vec<usize>> = Vec::with_capacity(depth);
    sizes.push(members[0].iter().map(Vec::len).collect());
    for l in 1..depth {
        let below = &sizes[l - 1];
        let s = members[l].iter().map(|ch| ch.iter().map(|&c| below[c]).sum()).collect();
        sizes.push(s);
    }

    let mut rng = seeded_rng(seed, 1);
    let mut out = Vec::with_capacity(budget);
    let top = depth - 1;
    let quotas = water_fill(&sizes[top], budget);
    for (c, &q) in quotas.iter().enumerate() {
        take(&members, &sizes, top, c, q, &mut rng, &mut out);
    }
    out.sort_unstable();
    out
}

fn take(
    members: &[Vec<Vec<usize>>],
    sizes: &[Vec<usize>],
    level: usize,
    cluster: usize,
    quota: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<usize>,
) {
    if quota == 0 {
        return;
    }
    let children = &members[level][cluster];
    if level == 0 {
        if quota >= children.len() {
            out.extend_from_slice(children);
        } else {
            out.extend(index::sample(rng, children.len(), quota).into_iter().map(|i| children[i]));
        }
        return;
    }
    let caps: Vec<usize> = children.iter().map(|&c| sizes[level - 1][c]).collect();
    let quotas = water_fill(&caps, quota);
    for (&child, &q) in children.iter().zip(&quotas) {
        take(members, sizes, level - 1, child, q, rng, out);
    }
}

// ---------------------------------------------------------------------------
// DTXT

pub fn encode_tree(tree: &ClusterTree) -> Vec<u8> {
    let mut w = ByteWriter::new(TREE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(tree.levels.len() as u32);
    for level in &tree.levels {
        w.u32(level.k() as u32);
        w.u32(level.centroids.cols() as u32);
        w.f32s(level.centroids.as_slice());
        w.u64(level.assignment.len() as u64);
        for &a in &level.assignment {
            w.u32(a);
        }
    }
    w.finish()
}

pub fn decode_tree(buf: &[u8]) -> Result<ClusterTree, FormatError> {
    let mut r = ByteReader::open(buf, TREE_MAGIC)?;
    r.version("DTXT")?;
    let n_levels = r.u32("DTXT header")? as usize;
    let mut levels = Vec::with_capacity(n_levels.min(64));
    for _ in 0..n_levels {
        let k = r.u32("DTXT level")? as usize;
        let dim = r.u32("DTXT level")? as usize;
        let c = r.f32s(k * dim, "DTXT centroids")?;
        let n = r.u64("DTXT level")? as usize;
        let mut assignment = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            assignment.push(r.u32("DTXT assignment")?);
        }
        let centroids = Matrix::new(k, dim, c).map_err(|_| non_finite("DTXT centroids"))?;
        levels.push(ClusterLevel { centroids, assignment, inertia: None, inertia_trace: Vec::new() });
    }
    r.expect_end("DTXT")?;
    let tree = ClusterTree { levels };
    tree.validate().map_err(|detail| FormatError::Malformed { what: "DTXT", detail })?;
    Ok(tree)
}

pub fn write_tree(path: impl AsRef<Path>, tree: &ClusterTree) -> Result<()> {
    fs::write(path, encode_tree(tree))?;
    Ok(())
}

pub fn read_tree(path: impl AsRef<Path>) -> Result<ClusterTree> {
    Ok(decode_tree(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[[f32; 2]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn assert_monotone(trace: &[f64]) {
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "inertia increased: {trace:?}");
    }

    #[test]
    fn perfect_fit_when_k_equals_n() {
        let p = pts(&[[0.0, 0.0], [1.0, 5.0], [-3.0, 2.0], [7.0, 7.0]]);
        let r = kmeans_fit(&p, 4, 3, &KMeansOptions::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut seen = r.assignment.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert_monotone(&r.inertia_trace);
    }

    #[test]
    fn two_columns_example() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        let r = kmeans_fit(&p, 2, 0, &KMeansOptions::default()).unwrap();
        assert!((r.inertia - 1.0).abs() < 1e-12);
        let mut cs: Vec<Vec<f32>> = r.centroids.iter_rows().map(<[f32]>::to_vec).collect();
        cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(cs, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    }

    #[test]
    fn identical_points_single_cluster() {
        let p = pts(&[[2.5, -1.0]; 5]);
        let r = kmeans_fit(&p, 1, 9, &KMeansOptions::default()).unwrap();
        assert_eq!(r.centroids.row(0), &[2.5, -1.0]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn k_errors() {
        let p = pts(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(kmeans_fit(&p, 0, 0, &KMeansOptions::default()).is_err());
        assert!(kmeans_fit(&p, 3, 0, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn single_level_tree_matches_flat() {
        let p = pts(&[[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0], [9.0, 0.0]]);
        let opts = KMeansOptions::default();
        let tree = hierarchical_fit(&p, &[3], 11, &opts).unwrap();
        let flat = kmeans_fit(&p, 3, 11, &opts).unwrap();
        assert_eq!(tree.levels[0], ClusterLevel::from(flat.clone()));
        assert_eq!(compose_assignment(&tree, 0).unwrap(), flat.assignment);
    }

    #[test]
    fn hierarchy_rejects_non_decreasing() {
        let p = pts(&[[0.0, 0.0]; 4]);
        assert!(hierarchical_fit(&p, &[2, 3], 0, &KMeansOptions::default()).is_err());
        assert!(hierarchical_fit(&p, &[], 0, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn composed_assignment_partitions() {
        // four tight groups of ten points
        let centers = [[0.0f32, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]];
        let mut rows = Vec::new();
        for (g, c) in centers.iter().enumerate() {
            for i in 0..10 {
                let t = (g * 10 + i) as f32;
                rows.push([c[0] + (t * 0.7).sin(), c[1] + (t * 1.3).cos()]);
            }
        }
        let p = pts(&rows);
        let tree = hierarchical_fit(&p, &[8, 2], 5, &KMeansOptions::default()).unwrap();
        let l0 = compose_assignment(&tree, 0).unwrap();
        let l1 = compose_assignment(&tree, 1).unwrap();
        // every level-0 cluster maps wholly into one level-1 cluster
        for c0 in 0..8u32 {
            let parents: std::collections::BTreeSet<u32> =
                l0.iter().zip(&l1).filter(|(&a, _)| a == c0).map(|(_, &b)| b).collect();
            assert!(parents.len() <= 1);
        }
        for level in &tree.levels {
            assert_monotone(&level.inertia_trace);
        }
        assert!(compose_assignment(&tree, 2).is_err());
    }

    #[test]
    fn compose_hand_traced() {
        let tree = ClusterTree {
            levels: vec![
                ClusterLevel {
                    centroids: Matrix::zeros(3, 1),
                    assignment: vec![0, 0, 1, 1, 2, 2],
                    inertia: None,
                    inertia_trace: vec![],
                },
                ClusterLevel {
                    centroids: Matrix::zeros(2, 1),
                    assignment: vec![1, 0, 0],
                    inertia: None,
                    inertia_trace: vec![],
                },
            ],
        };
        assert_eq!(compose_assignment(&tree, 1).unwrap(), vec![1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn water_fill_examples() {
        assert_eq!(water_fill(&[10, 2, 1], 6), vec![3, 2, 1]);
        assert_eq!(water_fill(&[10, 2, 1], 100), vec![10, 2, 1]);
        assert_eq!(water_fill(&[10, 2, 1], 0), vec![0, 0, 0]);
        let mut caps = vec![900];
        caps.extend([10; 9]);
        assert_eq!(water_fill(&caps, 100), vec![10; 10]);
    }

    fn one_level_tree(sizes: &[usize]) -> ClusterTree {
        let assignment = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c as u32, s)).collect();
        ClusterTree {
            levels: vec![ClusterLevel {
                centroids: Matrix::zeros(sizes.len(), 1),
                assignment,
                inertia: None,
                inertia_trace: vec![],
            }],
        }
    }

    #[test]
    fn balanced_sample_examples() {
        let tree = one_level_tree(&[10, 2, 1]);
        let sel = balanced_sample(&tree, 6, 7);
        let mut per = [0usize; 3];
        for &i in &sel {
            per[tree.levels[0].assignment[i] as usize] += 1;
        }
        assert_eq!(per, [3, 2, 1]);
        assert_eq!(balanced_sample(&tree, 13, 0), (0..13).collect::<Vec<_>>());
        assert!(balanced_sample(&tree, 0, 0).is_empty());
    }

    #[test]
    fn tree_roundtrip() {
        let p = pts(&[[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0], [9.0, 0.0], [9.0, 0.2]]);
        let tree = hierarchical_fit(&p, &[3, 2], 1, &KMeansOptions::default()).unwrap();
        let bytes = encode_tree(&tree);
        let back = decode_tree(&bytes).unwrap();
        assert_eq!(back.ks(), tree.ks());
        assert_eq!(encode_tree(&back), bytes);
        assert!(decode_tree(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn assignment_is_nearest_and_inertia_consistent(
            raw in prop::collection::vec(prop::array::uniform3(-5f32..5.0), 3..40),
            k in 1usize..4,
            seed in any::<u64>(),
            normalize in any::<bool>(),
        ) {
            prop_assume!(k <= raw.len());
            let m = Matrix::from_rows(&raw.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
            let opts = KMeansOptions { normalize, ..Default::default() };
            let r = kmeans_fit(&m, k, seed, &opts).unwrap();
            prop_assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0]));
            let pts = prepare_points(&m, normalize);
            let mut recomputed = 0.0;
            for (i, p) in pts.chunks_exact(3).enumerate() {
                let dists: Vec<f64> = r.centroids.iter_rows()
                    .map(|c| p.iter().zip(c).map(|(a, &b)| (a - b as f64).powi(2)).sum())
                    .collect();
                let own = dists[r.assignment[i] as usize];
                prop_assert!(dists.iter().all(|&d| own <= d + 1e-5));
                recomputed += own;
            }
            prop_assert!((recomputed - r.inertia).abs() <= 1e-4 * r.inertia.max(1e-12));
            let again = kmeans_fit(&m, k, seed, &opts).unwrap();
            prop_assert_eq!(r, again);
        }

        #[test]
        fn balanced_sample_exact_size_and_distinct(
            sizes in prop::collection::vec(0usize..30, 1..8),
            budget in 0usize..120,
            seed in any::<u64>(),
        ) {
            prop_assume!(sizes.iter().sum::<usize>() > 0);
            let tree = one_level_tree(&sizes);
            let n = tree.num_points();
            let sel = balanced_sample(&tree, budget, seed);
            prop_assert_eq!(sel.len(), budget.min(n));
            prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(sel.clone(), balanced_sample(&tree, budget, seed));
        }
    }
}
