//! Discriminator classes over the observations of one step.
//!
//! Every class answers the same query: given signed weights on observations,
//! return the member maximizing the weighted sum, together with that maximum.
//! Returned handles are tabulated over the whole observation set so they can
//! be evaluated anywhere in it.

use crate::error::{Error, Result};
use crate::lp::{self, LpStatus};
use crate::mdp::{DistanceMatrix, PolicyTable, IDENTITY_TOL, PROB_TOL};
use serde::{Deserialize, Serialize};

/// Values below this are treated as exactly zero by the closed-form oracles.
pub const ZERO_VALUE_TOL: f64 = 1e-12;
/// Feasibility slack accepted for witness values.
pub const WITNESS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub x: usize,
    pub weight: f64,
}

impl WeightedSample {
    pub fn new(x: usize, weight: f64) -> Self {
        WeightedSample { x, weight }
    }
}

/// One learner tuple `(x_h, a_h, p_h, x_{h+1})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: usize,
    pub a: usize,
    /// Probability with which `a` was drawn when the data was collected.
    pub p: f64,
    pub next: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-d^2 / (2 s^2))`
    Gaussian { bandwidth: f64 },
    /// `exp(-d / s)`
    Laplacian { bandwidth: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        match *self {
            Kernel::Gaussian { bandwidth } => (-d * d / (2.0 * bandwidth * bandwidth)).exp(),
            Kernel::Laplacian { bandwidth } => (-d / bandwidth).exp(),
        }
    }

    pub fn bandwidth(&self) -> f64 {
        match *self {
            Kernel::Gaussian { bandwidth } | Kernel::Laplacian { bandwidth } => bandwidth,
        }
    }
}

/// Median of the nonzero pairwise distances between pooled samples (counted
/// with multiplicity). Falls back to 1 when every pair coincides.
pub fn median_bandwidth(points: &[usize], metric: &DistanceMatrix) -> f64 {
    let mut counts = vec![0u64; metric.len()];
    for &x in points {
        counts[x] += 1;
    }
    let mut pairs: Vec<(f64, u64)> = Vec::new();
    for x in 0..counts.len() {
        for y in x + 1..counts.len() {
            let w = counts[x] * counts[y];
            let d = metric.get(x, y);
            if w > 0 && d > 0.0 {
                pairs.push((d, w));
            }
        }
    }
    if pairs.is_empty() {
        return 1.0;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: u64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0;
    for (d, w) in &pairs {
        acc += w;
        if 2 * acc >= total {
            return *d;
        }
    }
    pairs.last().map(|p| p.0).unwrap_or(1.0)
}

/// Explicit tabulated functions with values in `[-1, 1]`, closed under negation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteClass {
    functions: Vec<Vec<f64>>,
}

impl FiniteClass {
    /// Validates range, common length and closure under negation.
    pub fn new(functions: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = functions.first() else {
            return Err(Error::InvalidArgument("finite class is empty".into()));
        };
        let n = first.len();
        for (k, f) in functions.iter().enumerate() {
            if f.len() != n {
                return Err(Error::InvalidArgument(format!("function {k} has length {}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + IDENTITY_TOL) {
                return Err(Error::InvalidArgument(format!("function {k} leaves [-1, 1]")));
            }
        }
        let mut index = TabIndex::default();
        for (k, f) in functions.iter().enumerate() {
            index.insert(k, f);
        }
        for (k, f) in functions.iter().enumerate() {
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            if index.find(&functions, &neg).is_none() {
                return Err(Error::InvalidArgument(format!("negation of function {k} is missing")));
            }
        }
        Ok(FiniteClass { functions })
    }

    /// Appends the negation of every function that lacks one, then removes
    /// duplicates (first occurrence kept).
    pub fn with_negations(functions: Vec<Vec<f64>>) -> Result<Self> {
        let mut all: Vec<Vec<f64>> = Vec::with_capacity(2 * functions.len());
        for f in functions {
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            all.push(f);
            all.push(neg);
        }
        Self::new(dedup_tabulated(all))
    }

    /// Every `{-1, +1}` labelling of `n` points (`2^n` functions).
    pub fn sign_patterns(n: usize) -> Result<Self> {
        if n > 20 {
            return Err(Error::ClassCap { size: 1 << n.min(63), cap: 1 << 20 });
        }
        let fs = (0..1usize << n)
            .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        Self::new(fs)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn domain_size(&self) -> usize {
        self.functions[0].len()
    }

    pub fn functions(&self) -> &[Vec<f64>] {
        &self.functions
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.functions[k]
    }

    /// Index of the first member equal to `values` within [`IDENTITY_TOL`].
    pub fn position(&self, values: &[f64]) -> Option<usize> {
        self.functions.iter().position(|f| tabulated_eq(f, values))
    }
}

pub fn tabulated_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= IDENTITY_TOL)
}

/// Hash buckets on a rounded sum so that equality lookups stay local.
#[derive(Default)]
struct TabIndex {
    buckets: std::collections::HashMap<i64, Vec<usize>>,
}

impl TabIndex {
    fn key(f: &[f64]) -> i64 {
        (f.iter().sum::<f64>() * 1e6).round() as i64
    }

    fn insert(&mut self, idx: usize, f: &[f64]) {
        self.buckets.entry(Self::key(f)).or_default().push(idx);
    }

    fn find(&self, store: &[Vec<f64>], f: &[f64]) -> Option<usize> {
        let key = Self::key(f);
        [key - 1, key, key + 1]
            .iter()
            .filter_map(|k| self.buckets.get(k))
            .flat_map(|ids| ids.iter().copied().filter(|&i| tabulated_eq(&store[i], f)))
            .min()
    }
}

/// Removes tabulated duplicates, keeping the first occurrence.
pub fn dedup_tabulated(fs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(fs.len());
    let mut index = TabIndex::default();
    for f in fs {
        if index.find(&out, &f).is_none() {
            index.insert(out.len(), &f);
            out.push(f);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionClass {
    Finite(FiniteClass),
    Rkhs {
        kernel: Kernel,
        metric: DistanceMatrix,
        norm_bound: f64,
    },
    Lipschitz {
        metric: DistanceMatrix,
        lipschitz: f64,
    },
    PiecewiseConstant {
        abstraction: Vec<usize>,
    },
}

impl FunctionClass {
    pub fn domain_size(&self) -> usize {
        match self {
            FunctionClass::Finite(c) => c.domain_size(),
            FunctionClass::Rkhs { metric, .. } | FunctionClass::Lipschitz { metric, .. } => metric.len(),
            FunctionClass::PiecewiseConstant { abstraction } => abstraction.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FunctionClass::Finite(_) => "finite",
            FunctionClass::Rkhs { .. } => "rkhs",
            FunctionClass::Lipschitz { .. } => "lipschitz",
            FunctionClass::PiecewiseConstant { .. } => "piecewise_constant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HandleRepr {
    Zero,
    Finite { index: usize },
    Rkhs { support: Vec<usize>, coeffs: Vec<f64> },
    Lipschitz {
        points: Vec<usize>,
        alpha: Vec<f64>,
        lipschitz_star: f64,
    },
    PiecewiseConstant { block_values: Vec<f64> },
}

/// A member of a class, tabulated over the observation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionHandle {
    pub repr: HandleRepr,
    values: Vec<f64>,
}

impl FunctionHandle {
    pub fn zero(domain: usize) -> Self {
        FunctionHandle {
            repr: HandleRepr::Zero,
            values: vec![0.0; domain],
        }
    }

    pub fn from_values(repr: HandleRepr, values: Vec<f64>) -> Self {
        FunctionHandle { repr, values }
    }

    #[inline]
    pub fn eval(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain_size(&self) -> usize {
        self.values.len()
    }

    /// Short identifier for transcripts.
    pub fn id(&self) -> String {
        match &self.repr {
            HandleRepr::Zero => "zero".into(),
            HandleRepr::Finite { index } => format!("finite:{index}"),
            HandleRepr::Rkhs { support, .. } => format!("rkhs:{}pts", support.len()),
            HandleRepr::Lipschitz { points, lipschitz_star, .. } => {
                format!("lipschitz:{}pts:L*={lipschitz_star:.6}", points.len())
            }
            HandleRepr::PiecewiseConstant { block_values } => {
                let signs: String = block_values.iter().map(|v| if *v >= 0.0 { '+' } else { '-' }).collect();
                format!("piecewise:{signs}")
            }
        }
    }

    pub fn weighted_sum(&self, samples: &[WeightedSample]) -> f64 {
        samples.iter().map(|s| s.weight * self.values[s.x]).sum()
    }
}

fn aggregate(samples: &[WeightedSample], domain: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no weighted samples".into()));
    }
    let mut w = vec![0.0; domain];
    for (i, s) in samples.iter().enumerate() {
        if s.x >= domain {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has observation {} outside 0..{domain}",
                s.x
            )));
        }
        if !s.weight.is_finite() {
            return Err(Error::InvalidArgument(format!("sample {i} has a non-finite weight")));
        }
        w[s.x] += s.weight;
    }
    Ok(w)
}

/// Maximizes `sum_i w_i f(x_i)` over the class.
pub fn best_response(class: &FunctionClass, samples: &[WeightedSample]) -> Result<(FunctionHandle, f64)> {
    match class {
        FunctionClass::Finite(c) => finite_best_response(samples, c),
        FunctionClass::Rkhs { kernel, metric, norm_bound } => rkhs_best_response(samples, *kernel, metric, *norm_bound),
        FunctionClass::Lipschitz { metric, lipschitz } => lipschitz_best_response(samples, metric, *lipschitz),
        FunctionClass::PiecewiseConstant { abstraction } => piecewise_best_response(samples, abstraction),
    }
}

pub fn finite_best_response(samples: &[WeightedSample], class: &FiniteClass) -> Result<(FunctionHandle, f64)> {
    let w = aggregate(samples, class.domain_size())?;
    let mut best = (0, f64::NEG_INFINITY);
    for (k, f) in class.functions().iter().enumerate() {
        let v: f64 = f.iter().zip(&w).map(|(f, w)| f * w).sum();
        if v > best.1 {
            best = (k, v);
        }
    }
    let handle = FunctionHandle {
        repr: HandleRepr::Finite { index: best.0 },
        values: class.get(best.0).to_vec(),
    };
    Ok((handle, best.1))
}

/// Closed-form maximizer over the ball of radius `norm_bound` in the kernel's
/// reproducing space: the normalized weighted mean embedding.
pub fn rkhs_best_response(
    samples: &[WeightedSample],
    kernel: Kernel,
    metric: &DistanceMatrix,
    norm_bound: f64,
) -> Result<(FunctionHandle, f64)> {
    let n = metric.len();
    let w = aggregate(samples, n)?;
    let support: Vec<usize> = (0..n).filter(|&x| w[x] != 0.0).collect();
    let coeffs: Vec<f64> = support.iter().map(|&x| w[x]).collect();
    let mut q = 0.0;
    for (i, &xi) in support.iter().enumerate() {
        for (j, &xj) in support.iter().enumerate() {
            q += coeffs[i] * coeffs[j] * kernel.eval(metric.get(xi, xj));
        }
    }
    if q < -1e-9 {
        return Err(Error::KernelNotPsd(q));
    }
    let norm = q.max(0.0).sqrt();
    if norm < ZERO_VALUE_TOL {
        return Ok((FunctionHandle::zero(n), 0.0));
    }
    let values = (0..n)
        .map(|x| {
            let s: f64 = support
                .iter()
                .zip(&coeffs)
                .map(|(&y, c)| c * kernel.eval(metric.get(x, y)))
                .sum();
            norm_bound * s / norm
        })
        .collect();
    Ok((
        FunctionHandle {
            repr: HandleRepr::Rkhs { support, coeffs },
            values,
        },
        norm_bound * norm,
    ))
}

/// Sign rule over abstract blocks: `+1` where the aggregated block weight is
/// nonnegative, `-1` otherwise.
pub fn piecewise_best_response(samples: &[WeightedSample], abstraction: &[usize]) -> Result<(FunctionHandle, f64)> {
    let w = aggregate(samples, abstraction.len())?;
    let blocks = abstraction.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; blocks];
    for (x, &s) in abstraction.iter().enumerate() {
        sums[s] += w[x];
    }
    let block_values: Vec<f64> = sums.iter().map(|&s| if s >= 0.0 { 1.0 } else { -1.0 }).collect();
    let value = sums.iter().map(|s| s.abs()).sum();
    let values = abstraction.iter().map(|&s| block_values[s]).collect();
    Ok((
        FunctionHandle {
            repr: HandleRepr::PiecewiseConstant { block_values },
            values,
        },
        value,
    ))
}

/// Weighted points after merging coincident observations: distinct indices
/// at distance 0 share one aggregated weight. Zero-weight points are dropped.
pub fn aggregate_points(samples: &[WeightedSample], metric: &DistanceMatrix) -> Result<(Vec<usize>, Vec<f64>)> {
    let w = aggregate(samples, metric.len())?;
    let mut points: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for x in 0..metric.len() {
        if w[x] == 0.0 {
            continue;
        }
        match points.iter().position(|&y| metric.get(x, y) <= 0.0) {
            Some(k) => weights[k] += w[x],
            None => {
                points.push(x);
                weights.push(w[x]);
            }
        }
    }
    let keep: Vec<bool> = weights.iter().map(|w| *w != 0.0).collect();
    let points = points.into_iter().zip(&keep).filter(|p| *p.1).map(|p| p.0).collect();
    let weights = weights.into_iter().zip(&keep).filter(|p| *p.1).map(|p| p.0).collect();
    Ok((points, weights))
}

fn submatrix(metric: &DistanceMatrix, points: &[usize]) -> DistanceMatrix {
    DistanceMatrix(
        points
            .iter()
            .map(|&x| points.iter().map(|&y| metric.get(x, y)).collect())
            .collect(),
    )
}

/// Maximizer over `{f : |f| <= 1, |f(x) - f(y)| <= L d(x, y)}` via the
/// program on witness values followed by the explicit extension.
pub fn lipschitz_best_response(
    samples: &[WeightedSample],
    metric: &DistanceMatrix,
    lipschitz: f64,
) -> Result<(FunctionHandle, f64)> {
    let (points, weights) = aggregate_points(samples, metric)?;
    if points.is_empty() {
        return Ok((FunctionHandle::zero(metric.len()), 0.0));
    }
    let program = lp::build_lipschitz_lp(&weights, &submatrix(metric, &points), lipschitz)?;
    let sol = lp::solve(&program)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::LpStatus(format!("{:?}", sol.status)));
    }
    let handle = lipschitz_witness(&sol.x, &points, metric, lipschitz)?;
    Ok((handle, sol.value))
}

/// Largest observed slope `max |a_i - a_j| / d(y_i, y_j)` (0 for one point).
pub fn observed_lipschitz(alpha: &[f64], points: &[usize], metric: &DistanceMatrix) -> Result<f64> {
    let mut l: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = metric.get(points[i], points[j]);
            if d <= 0.0 {
                return Err(Error::CoincidentPoints(points[i], points[j]));
            }
            l = l.max((alpha[i] - alpha[j]).abs() / d);
        }
    }
    Ok(l)
}

/// Extends values `alpha` at `points` to the whole observation set as
/// `max(-1, min(1, min_i L* d(y_i, x) + alpha_i))`, where `L*` is the largest
/// observed slope. `lipschitz` is the class bound the values must respect.
pub fn lipschitz_witness(
    alpha: &[f64],
    points: &[usize],
    metric: &DistanceMatrix,
    lipschitz: f64,
) -> Result<FunctionHandle> {
    if alpha.len() != points.len() || points.is_empty() {
        return Err(Error::InvalidArgument("witness needs one value per point".into()));
    }
    if let Some(&x) = points.iter().find(|&&x| x >= metric.len()) {
        return Err(Error::InvalidArgument(format!("point {x} outside the metric")));
    }
    for (i, a) in alpha.iter().enumerate() {
        if !a.is_finite() || a.abs() > 1.0 + WITNESS_TOL {
            return Err(Error::InfeasibleWitness(format!("alpha[{i}] = {a}")));
        }
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = metric.get(points[i], points[j]);
            if (alpha[i] - alpha[j]).abs() > lipschitz * d + WITNESS_TOL {
                return Err(Error::InfeasibleWitness(format!(
                    "|alpha[{i}] - alpha[{j}]| = {} exceeds {lipschitz} * {d}",
                    (alpha[i] - alpha[j]).abs()
                )));
            }
        }
    }
    let l_star = observed_lipschitz(alpha, points, metric)?;
    let values = (0..metric.len())
        .map(|x| {
            let inner = points
                .iter()
                .zip(alpha)
                .map(|(&y, a)| l_star * metric.get(y, x) + a)
                .fold(f64::INFINITY, f64::min);
            inner.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(FunctionHandle {
        repr: HandleRepr::Lipschitz {
            points: points.to_vec(),
            alpha: alpha.to_vec(),
            lipschitz_star: l_star,
        },
        values,
    })
}

/// Weights `(pi(a|x) / p) / N` on learner next-observations and `-1 / N'` on
/// expert observations.
pub fn two_sample_weights(
    learner: &[Transition],
    policy: &PolicyTable,
    expert_obs: &[usize],
) -> Result<Vec<WeightedSample>> {
    if learner.is_empty() {
        return Err(Error::InvalidArgument("learner dataset is empty".into()));
    }
    if expert_obs.is_empty() {
        return Err(Error::InvalidArgument("expert observations are empty".into()));
    }
    let n = learner.len() as f64;
    let n_prime = expert_obs.len() as f64;
    let mut out = Vec::with_capacity(learner.len() + expert_obs.len());
    for (i, t) in learner.iter().enumerate() {
        if !(t.p > 0.0) {
            return Err(Error::ZeroPropensity(i));
        }
        if t.x >= policy.states() {
            return Err(Error::InvalidArgument(format!("learner tuple {i} has state {} outside the policy", t.x)));
        }
        out.push(WeightedSample::new(t.next, policy.prob(t.x, t.a) / t.p / n));
    }
    out.extend(expert_obs.iter().map(|&x| WeightedSample::new(x, -1.0 / n_prime)));
    Ok(out)
}

/// Importance-weighted two-sample IPM estimate and its maximizer.
pub fn empirical_ipm(
    class: &FunctionClass,
    learner: &[Transition],
    policy: &PolicyTable,
    expert_obs: &[usize],
) -> Result<(f64, FunctionHandle)> {
    let samples = two_sample_weights(learner, policy, expert_obs)?;
    let (f, v) = best_response(class, &samples)?;
    Ok((v, f))
}

/// IPM between two distributions given as probability vectors.
pub fn distribution_ipm(class: &FunctionClass, p: &[f64], q: &[f64]) -> Result<(f64, FunctionHandle)> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument("distributions differ in length".into()));
    }
    for d in [p, q] {
        if (d.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument("argument is not a distribution".into()));
        }
    }
    let samples: Vec<WeightedSample> = p
        .iter()
        .zip(q)
        .enumerate()
        .map(|(x, (a, b))| WeightedSample::new(x, a - b))
        .collect();
    let (f, v) = best_response(class, &samples)?;
    Ok((v, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_two_element_scan() {
        let c = FiniteClass::with_negations(vec![vec![1.0, -0.5, 0.25]]).unwrap();
        assert_eq!(c.len(), 2);
        let s = [WeightedSample::new(0, 0.5), WeightedSample::new(1, -0.5)];
        let (f, v) = finite_best_response(&s, &c).unwrap();
        assert_eq!(f.repr, HandleRepr::Finite { index: 0 });
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn finite_rejects_open_class() {
        assert!(FiniteClass::new(vec![vec![1.0, 0.0]]).is_err());
        assert!(FiniteClass::new(vec![vec![2.0], vec![-2.0]]).is_err());
    }

    #[test]
    fn finite_tie_lowest_index() {
        let c = FiniteClass::new(vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let s = [WeightedSample::new(0, 1.0), WeightedSample::new(1, -1.0)];
        let (f, v) = finite_best_response(&s, &c).unwrap();
        assert_eq!(f.repr, HandleRepr::Finite { index: 0 });
        assert_eq!(v, 0.0);
    }

    #[test]
    fn lipschitz_two_points() {
        let metric = DistanceMatrix::line(11);
        for &l in &[0.5, 1.0, 3.0, 50.0] {
            let s = [WeightedSample::new(2, 1.0), WeightedSample::new(7, -1.0)];
            let (f, v) = lipschitz_best_response(&s, &metric, l).unwrap();
            let expect = f64::min(2.0, l * 0.5);
            assert!((v - expect).abs() < 1e-8, "L={l}: {v} vs {expect}");
            assert!((f.eval(2) - f.eval(7) - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn lipschitz_merges_coincident() {
        // Observations 0 and 1 are the same point.
        let metric = DistanceMatrix(vec![
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let s = [
            WeightedSample::new(0, 0.5),
            WeightedSample::new(1, 0.5),
            WeightedSample::new(2, -1.0),
        ];
        let (points, weights) = aggregate_points(&s, &metric).unwrap();
        assert_eq!(points, vec![0, 2]);
        assert_eq!(weights, vec![1.0, -1.0]);
        let (_, v) = lipschitz_best_response(&s, &metric, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn witness_constant_and_interpolation() {
        let metric = DistanceMatrix::line(5);
        let f = lipschitz_witness(&[0.3, 0.3], &[0, 4], &metric, 1.0).unwrap();
        assert!(f.values().iter().all(|v| (v - 0.3).abs() < 1e-15));
        let f = lipschitz_witness(&[1.0, -0.5], &[0, 3], &metric, 2.0).unwrap();
        assert_eq!(f.eval(0), 1.0);
        assert!((f.eval(3) + 0.5).abs() < 1e-12);
        assert!(matches!(
            lipschitz_witness(&[1.0, -1.0], &[0, 1], &metric, 1.0),
            Err(Error::InfeasibleWitness(_))
        ));
    }

    #[test]
    fn rkhs_identical_sets_give_zero() {
        let metric = DistanceMatrix::line(4);
        let kernel = Kernel::Gaussian { bandwidth: 0.3 };
        let mut s = Vec::new();
        for x in [0, 1, 1, 3] {
            s.push(WeightedSample::new(x, 0.25));
            s.push(WeightedSample::new(x, -0.25));
        }
        let (f, v) = rkhs_best_response(&s, kernel, &metric, 1.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(f.repr, HandleRepr::Zero);
    }

    #[test]
    fn rkhs_two_point_closed_form() {
        let metric = DistanceMatrix::line(3);
        let sigma = 0.7;
        let kernel = Kernel::Gaussian { bandwidth: sigma };
        let s = [WeightedSample::new(0, 1.0), WeightedSample::new(2, -1.0)];
        let (_, v) = rkhs_best_response(&s, kernel, &metric, 1.0).unwrap();
        let d: f64 = 1.0;
        let expect = (2.0 - 2.0 * (-d * d / (2.0 * sigma * sigma)).exp()).sqrt();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn rkhs_rejects_indefinite_gram() {
        // Not a metric: 0 and 1 coincide, 0 and 2 coincide, 1 and 2 are far.
        let metric = DistanceMatrix(vec![
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 10.0],
            vec![0.0, 10.0, 0.0],
        ]);
        let kernel = Kernel::Gaussian { bandwidth: 1.0 };
        let s = [
            WeightedSample::new(0, 1.0),
            WeightedSample::new(1, -1.0),
            WeightedSample::new(2, -1.0),
        ];
        assert!(matches!(
            rkhs_best_response(&s, kernel, &metric, 1.0),
            Err(Error::KernelNotPsd(_))
        ));
    }

    #[test]
    fn piecewise_sign_rule() {
        let phi = vec![0, 0, 1, 1, 2];
        let s = [
            WeightedSample::new(0, 0.5),
            WeightedSample::new(1, 0.25),
            WeightedSample::new(2, -0.5),
            WeightedSample::new(4, 0.0),
        ];
        let (f, v) = piecewise_best_response(&s, &phi).unwrap();
        assert_eq!(v, 1.25);
        assert_eq!(f.values(), &[1.0, 1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn importance_weights_cancel_under_uniform() {
        let pol = PolicyTable::uniform(3, 2);
        let data: Vec<Transition> = (0..4)
            .map(|i| Transition { x: i % 3, a: i % 2, p: 0.5, next: i % 3 })
            .collect();
        let w = two_sample_weights(&data, &pol, &[0, 1]).unwrap();
        for s in &w[..4] {
            assert!((s.weight - 0.25).abs() < 1e-15);
        }
        let bad = [Transition { x: 0, a: 0, p: 0.0, next: 0 }];
        assert!(matches!(two_sample_weights(&bad, &pol, &[0]), Err(Error::ZeroPropensity(0))));
    }

    #[test]
    fn median_bandwidth_counts_multiplicity() {
        let metric = DistanceMatrix::line(3);
        assert_eq!(median_bandwidth(&[0, 0, 0], &metric), 1.0);
        assert_eq!(median_bandwidth(&[0, 1], &metric), 0.5);
        // pairs: (0,1) x4 at 0.5, (0,2) x2 at 1.0, (1,2) x2 at 0.5
        assert_eq!(median_bandwidth(&[0, 0, 1, 1, 2], &metric), 0.5);
    }
}
