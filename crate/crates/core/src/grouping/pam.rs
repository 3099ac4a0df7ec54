//! Partitioning Around Medoids (BUILD + full SWAP scan).
//!
//! Ties are broken toward the lowest point index everywhere: in BUILD
//! candidate selection, in SWAP candidate selection, and when assigning a
//! point that is equidistant to several medoids.

/// Dense symmetric dissimilarity matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    /// Absolute differences of one-dimensional points.
    pub fn absolute(points: &[f64]) -> Self {
        Self::from_fn(points.len(), |i, j| (points[i] - points[j]).abs())
    }

    /// Euclidean distances of row-major feature vectors.
    pub fn euclidean(features: &[Vec<f64>]) -> Self {
        Self::from_fn(features.len(), |i, j| {
            features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

#[derive(Debug, Clone)]
pub struct PamResult {
    /// Medoid point indices, in the order they were chosen / swapped in.
    pub medoids: Vec<usize>,
    /// For each point, the position in `medoids` of its nearest medoid.
    pub assignment: Vec<usize>,
    pub objective: f64,
    /// Objective after BUILD, then after every accepted swap.
    pub trace: Vec<f64>,
}

const MAX_SWAPS: usize = 10_000;

/// Total distance of every point to its nearest medoid.
pub fn objective(dist: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..dist.len())
        .map(|j| medoids.iter().map(|&m| dist.get(j, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

pub fn pam(dist: &DistanceMatrix, k: usize) -> PamResult {
    let n = dist.len();
    assert!(k >= 1 && k <= n, "k must be in 1..=n");
    let mut medoids = build(dist, k);
    let mut trace = vec![objective(dist, &medoids)];

    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }
    for _ in 0..MAX_SWAPS {
        let (near, second) = nearest_two(dist, &medoids);
        let current: f64 = near.iter().map(|&(_, d)| d).sum();
        let mut best: Option<(usize, usize, f64)> = None;
        for (mi, _) in medoids.iter().enumerate() {
            for o in 0..n {
                if is_medoid[o] {
                    continue;
                }
                let mut delta = 0.0;
                for j in 0..n {
                    let djo = dist.get(j, o);
                    let (nm, nd) = near[j];
                    let new = if nm == mi { djo.min(second[j]) } else { djo.min(nd) };
                    delta += new - nd;
                }
                if best.is_none_or(|(_, _, bd)| delta < bd) {
                    best = Some((mi, o, delta));
                }
            }
        }
        match best {
            Some((mi, o, delta)) if delta < -1e-12 * (1.0 + current) => {
                is_medoid[medoids[mi]] = false;
                is_medoid[o] = true;
                medoids[mi] = o;
                trace.push(objective(dist, &medoids));
            }
            _ => break,
        }
    }

    let assignment = assign(dist, &medoids);
    let objective = (0..n).map(|j| dist.get(j, medoids[assignment[j]])).sum();
    PamResult { medoids, assignment, objective, trace }
}

fn build(dist: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut first = 0;
    let mut best_total = f64::INFINITY;
    for i in 0..n {
        let total: f64 = (0..n).map(|j| dist.get(i, j)).sum();
        if total < best_total {
            best_total = total;
            first = i;
        }
    }
    let mut medoids = vec![first];
    let mut near: Vec<f64> = (0..n).map(|j| dist.get(j, first)).collect();
    let mut is_medoid = vec![false; n];
    is_medoid[first] = true;
    while medoids.len() < k {
        let mut pick = None;
        let mut best_gain = f64::NEG_INFINITY;
        for c in 0..n {
            if is_medoid[c] {
                continue;
            }
            let gain: f64 = (0..n).map(|j| (near[j] - dist.get(j, c)).max(0.0)).sum();
            if gain > best_gain {
                best_gain = gain;
                pick = Some(c);
            }
        }
        let c = pick.expect("k <= n guarantees a candidate");
        is_medoid[c] = true;
        medoids.push(c);
        for j in 0..n {
            near[j] = near[j].min(dist.get(j, c));
        }
    }
    medoids
}

/// Nearest medoid (position, distance) and second-nearest distance per point.
fn nearest_two(dist: &DistanceMatrix, medoids: &[usize]) -> (Vec<(usize, f64)>, Vec<f64>) {
    let n = dist.len();
    let mut near = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for j in 0..n {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut sec = f64::INFINITY;
        for (mi, &m) in medoids.iter().enumerate() {
            let d = dist.get(j, m);
            if d < best.1 {
                sec = best.1;
                best = (mi, d);
            } else if d < sec {
                sec = d;
            }
        }
        near.push(best);
        second.push(sec);
    }
    (near, second)
}

/// Assigns each point to its nearest medoid; equidistant medoids resolve to
/// the one with the lowest point index.
fn assign(dist: &DistanceMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..dist.len())
        .map(|j| {
            let mut best = 0;
            for mi in 1..medoids.len() {
                let (d, bd) = (dist.get(j, medoids[mi]), dist.get(j, medoids[best]));
                if d < bd || (d == bd && medoids[mi] < medoids[best]) {
                    best = mi;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod exhaustive {
    use super::*;

    /// Minimum objective over every k-subset of points.
    pub fn optimum(dist: &DistanceMatrix, k: usize) -> (f64, Vec<usize>) {
        fn rec(
            dist: &DistanceMatrix,
            k: usize,
            start: usize,
            combo: &mut Vec<usize>,
            best: &mut (f64, Vec<usize>),
        ) {
            if combo.len() == k {
                let obj = objective(dist, combo);
                if obj < best.0 {
                    *best = (obj, combo.clone());
                }
                return;
            }
            for c in start..dist.len() {
                combo.push(c);
                rec(dist, k, c + 1, combo, best);
                combo.pop();
            }
        }
        let mut best = (f64::INFINITY, vec![]);
        rec(dist, k, 0, &mut Vec::with_capacity(k), &mut best);
        best
    }
}
