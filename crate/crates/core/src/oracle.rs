//! Brute-force reference computations.
//!
//! Nothing here shares code with the solvers it is used to check: vertices
//! are enumerated by Gaussian elimination, the Lipschitz program is searched
//! on a grid, and the bounded-Lipschitz distance between uniform empirical
//! measures is computed as an optimal assignment over permutations.

use crate::mdp::DistanceMatrix;
use crate::rng::Seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One linear constraint `a . x <= b`.
type Halfspace = (Vec<f64>, f64);

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Maximum of `c . x` over the vertices of `{A x <= b, lo <= x <= hi}`,
/// found by intersecting every `n`-subset of active constraints. Returns
/// `None` when no feasible vertex exists. Only meaningful for bounded
/// polytopes (finite boxes).
pub fn vertex_enumeration_max(
    objective: &[f64],
    rows: &[Vec<f64>],
    rhs: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Option<f64> {
    let n = objective.len();
    let mut hs: Vec<Halfspace> = rows.iter().cloned().zip(rhs.iter().copied()).collect();
    for j in 0..n {
        if upper[j].is_finite() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            hs.push((e, upper[j]));
        }
        if lower[j].is_finite() {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            hs.push((e, -lower[j]));
        }
    }
    let mut best: Option<f64> = None;
    combinations(hs.len(), n, |sel| {
        let a: Vec<Vec<f64>> = sel.iter().map(|&i| hs[i].0.clone()).collect();
        let b: Vec<f64> = sel.iter().map(|&i| hs[i].1).collect();
        let Some(x) = solve_square(a, b) else { return };
        let feasible = hs
            .iter()
            .all(|(a, b)| a.iter().zip(&x).map(|(a, x)| a * x).sum::<f64>() <= b + 1e-9);
        if feasible {
            let v: f64 = objective.iter().zip(&x).map(|(c, x)| c * x).sum();
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    });
    best
}

/// Exact maximum of `sum_i w_i a_i` over the grid `a_i in {-1, -1 + step, ..., 1}`
/// subject to `|a_i - a_j| <= L d_ij`.
///
/// Works on integer grid indices `k_i`, where the pairwise constraint reads
/// `|k_i - k_j| <= floor(L d_ij / step)`. Depth-first search over variables
/// in decreasing `|w|`; a node is pruned with a bound that gives every free
/// variable its own feasible index range and then pairs positive with
/// negative weight greedily (any such pairing is a valid upper bound).
pub fn lipschitz_grid_max(weights: &[f64], distances: &DistanceMatrix, lipschitz: f64, step: f64) -> f64 {
    let n = weights.len();
    let levels = (2.0 / step).round() as i64;
    let unit = 2.0 / levels as f64;
    let gap: Vec<Vec<i64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| ((lipschitz * distances.get(i, j) / unit) + 1e-9).floor().min(levels as f64) as i64)
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    // Objective in index space: sum_i w_i (-1 + unit k_i).
    let offset: f64 = -weights.iter().sum::<f64>();

    struct Search<'a> {
        order: Vec<usize>,
        w: &'a [f64],
        gap: Vec<Vec<i64>>,
        levels: i64,
        assigned: Vec<Option<i64>>,
        best: f64,
    }

    impl Search<'_> {
        fn range(&self, v: usize) -> (i64, i64) {
            let mut lo = 0;
            let mut hi = self.levels;
            for (u, k) in self.assigned.iter().enumerate() {
                if let Some(k) = k {
                    lo = lo.max(k - self.gap[u][v]);
                    hi = hi.min(k + self.gap[u][v]);
                }
            }
            (lo, hi)
        }

        fn bound(&self, depth: usize, acc: f64) -> Option<f64> {
            let mut pos: Vec<(usize, f64, i64)> = Vec::new();
            let mut neg: Vec<(usize, f64, i64)> = Vec::new();
            for &u in &self.order[depth..] {
                let (lo, hi) = self.range(u);
                if lo > hi {
                    return None;
                }
                if self.w[u] > 0.0 {
                    pos.push((u, self.w[u], hi));
                } else if self.w[u] < 0.0 {
                    neg.push((u, -self.w[u], lo));
                }
            }
            let mut pairs: Vec<(i64, usize, usize, i64)> = Vec::new();
            for (pi, &(i, _, hi)) in pos.iter().enumerate() {
                for (ni, &(j, _, lo)) in neg.iter().enumerate() {
                    let spread = hi - lo;
                    let paired = self.gap[i][j].min(spread);
                    if spread > paired {
                        pairs.push((spread - paired, pi, ni, paired));
                    }
                }
            }
            pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut left_pos: Vec<f64> = pos.iter().map(|p| p.1).collect();
            let mut left_neg: Vec<f64> = neg.iter().map(|n| n.1).collect();
            let mut bound = acc;
            for &(_, pi, ni, paired) in &pairs {
                let mass = left_pos[pi].min(left_neg[ni]);
                if mass > 0.0 {
                    bound += mass * paired as f64;
                    left_pos[pi] -= mass;
                    left_neg[ni] -= mass;
                }
            }
            for (k, p) in pos.iter().enumerate() {
                bound += left_pos[k] * p.2 as f64;
            }
            for (k, q) in neg.iter().enumerate() {
                bound -= left_neg[k] * q.2 as f64;
            }
            Some(bound)
        }

        fn dfs(&mut self, depth: usize, acc: f64) {
            if depth == self.order.len() {
                self.best = self.best.max(acc);
                return;
            }
            let Some(bound) = self.bound(depth, acc) else {
                return;
            };
            if bound <= self.best + 1e-9 {
                return;
            }
            let v = self.order[depth];
            let (lo, hi) = self.range(v);
            if depth + 1 == self.order.len() {
                let k = if self.w[v] >= 0.0 { hi } else { lo };
                self.best = self.best.max(acc + self.w[v] * k as f64);
                return;
            }
            let ks: Vec<i64> = if self.w[v] >= 0.0 {
                (lo..=hi).rev().collect()
            } else {
                (lo..=hi).collect()
            };
            for k in ks {
                self.assigned[v] = Some(k);
                self.dfs(depth + 1, acc + self.w[v] * k as f64);
                self.assigned[v] = None;
            }
        }
    }

    let mut s = Search {
        order,
        w: weights,
        gap,
        levels,
        assigned: vec![None; n],
        best: f64::NEG_INFINITY,
    };
    s.dfs(0, 0.0);
    offset + unit * s.best
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    // Heap's algorithm.
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    visit(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            visit(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Bounded-Lipschitz distance between the uniform empirical measures on
/// `pos` and `neg` (indices into `distances`), computed as an optimal
/// transport cost under the ground metric `min(L d, 2)`. Both sides are
/// replicated to a common size so that an optimal plan is a permutation.
/// Intended for at most a handful of points per side.
pub fn bounded_lipschitz_transport(pos: &[usize], neg: &[usize], distances: &DistanceMatrix, lipschitz: f64) -> f64 {
    let (n, m) = (pos.len(), neg.len());
    let size = n / gcd(n, m) * m;
    let left: Vec<usize> = (0..size).map(|i| pos[i % n]).collect();
    let right: Vec<usize> = (0..size).map(|i| neg[i % m]).collect();
    let cost = |a: usize, b: usize| (lipschitz * distances.get(a, b)).min(2.0);
    let mut best = f64::INFINITY;
    for_each_permutation(size, |perm| {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost(left[i], right[j])).sum();
        best = best.min(c);
    });
    best / size as f64
}

/// Maximum of `sum_s sign_s w_s` over all `2^S` sign patterns.
pub fn sign_pattern_max(block_weights: &[f64]) -> f64 {
    let s = block_weights.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0..1u64 << s {
        let v: f64 = block_weights
            .iter()
            .enumerate()
            .map(|(i, w)| if mask >> i & 1 == 1 { *w } else { -*w })
            .sum();
        best = best.max(v);
    }
    best
}

/// `min_i max_j payoff[i][j]` by full scan.
pub fn minmax_value(payoff: &[Vec<f64>]) -> f64 {
    payoff
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min)
}

/// Independent double loop `sum_ij w_i w_j k_ij` for a dense Gram matrix.
pub fn quadratic_form(weights: &[f64], gram: &[Vec<f64>]) -> f64 {
    let mut q = 0.0;
    for i in 0..weights.len() {
        for j in 0..weights.len() {
            q += weights[i] * gram[i][j] * weights[j];
        }
    }
    q
}

/// A two-sample instance of the Lipschitz program: points in the unit
/// square with `+1/N` weight on the first `N` and `-1/N'` on the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzInstance {
    pub coords: Vec<Vec<f64>>,
    pub positive: usize,
    pub negative: usize,
    pub lipschitz: f64,
}

impl LipschitzInstance {
    pub fn random(max_per_side: usize, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let positive = rng.random_range(1..=max_per_side);
        let negative = rng.random_range(1..=max_per_side);
        let coords = (0..positive + negative)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let lipschitz = rng.random_range(0.25..6.0);
        LipschitzInstance {
            coords,
            positive,
            negative,
            lipschitz,
        }
    }

    pub fn distances(&self) -> DistanceMatrix {
        DistanceMatrix::euclidean(&self.coords)
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![1.0 / self.positive as f64; self.positive];
        w.extend(std::iter::repeat_n(-1.0 / self.negative as f64, self.negative));
        w
    }

    pub fn positive_points(&self) -> Vec<usize> {
        (0..self.positive).collect()
    }

    pub fn negative_points(&self) -> Vec<usize> {
        (self.positive..self.positive + self.negative).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_enumeration_small() {
        // maximize x + y s.t. x + 2y <= 2, x, y in [0, 1.5]
        let v = vertex_enumeration_max(&[1.0, 1.0], &[vec![1.0, 2.0]], &[2.0], &[0.0; 2], &[1.5; 2]);
        assert!((v.unwrap() - 1.75).abs() < 1e-12);
        let none = vertex_enumeration_max(&[1.0], &[vec![-1.0]], &[-3.0], &[0.0], &[1.0]);
        assert_eq!(none, None);
    }

    #[test]
    fn grid_two_points() {
        let d = DistanceMatrix(vec![vec![0.0, 0.3], vec![0.3, 0.0]]);
        let v = lipschitz_grid_max(&[1.0, -1.0], &d, 2.0, 0.01);
        assert!((v - 0.6).abs() < 1e-9);
        let v = lipschitz_grid_max(&[1.0, -1.0], &d, 10.0, 0.01);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn transport_two_points() {
        let d = DistanceMatrix(vec![vec![0.0, 0.3], vec![0.3, 0.0]]);
        assert!((bounded_lipschitz_transport(&[0], &[1], &d, 2.0) - 0.6).abs() < 1e-12);
        assert!((bounded_lipschitz_transport(&[0, 0], &[0], &d, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn sign_patterns() {
        assert_eq!(sign_pattern_max(&[0.5, -0.25, 0.0]), 0.75);
        assert_eq!(minmax_value(&[vec![1.0, 3.0], vec![2.0, 2.5]]), 2.5);
    }

    #[test]
    fn permutations_count() {
        let mut k = 0;
        for_each_permutation(5, |_| k += 1);
        assert_eq!(k, 120);
        let mut c = 0;
        combinations(6, 3, |_| c += 1);
        assert_eq!(c, 20);
    }
}
