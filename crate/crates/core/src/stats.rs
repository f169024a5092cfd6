//! Small statistics toolkit for the Monte Carlo gates: compensated sums,
//! standard errors, rank and trend statistics, two-sample tests.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    xs.iter().for_each(|&x| acc.add(x));
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Sample mean and its standard error (unbiased variance / √n).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let mut acc = CompensatedSum::default();
    xs.iter().for_each(|&x| acc.add((x - m) * (x - m)));
    (m, (acc.value() / (n - 1.0) / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-entry mean and standard error of a stream of equally sized vectors.
#[derive(Debug, Clone)]
pub struct VectorAccumulator {
    count: usize,
    sums: Vec<CompensatedSum>,
    squares: Vec<CompensatedSum>,
}

impl VectorAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            sums: vec![CompensatedSum::default(); len],
            squares: vec![CompensatedSum::default(); len],
        }
    }

    pub fn push(&mut self, xs: &[f64]) {
        self.count += 1;
        for (i, &x) in xs.iter().enumerate() {
            self.sums[i].add(x);
            self.squares[i].add(x * x);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sums.iter().map(|s| s.value() / n).collect()
    }

    pub fn standard_error(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sums
            .iter()
            .zip(&self.squares)
            .map(|(s, q)| {
                let m = s.value() / n;
                let var = ((q.value() - n * m * m) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect()
    }
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = CompensatedSum::default();
    let mut sxx = CompensatedSum::default();
    let mut syy = CompensatedSum::default();
    for (x, y) in xs.iter().zip(ys) {
        sxy.add((x - mx) * (y - my));
        sxx.add((x - mx) * (x - mx));
        syy.add((y - my) * (y - my));
    }
    sxy.value() / (sxx.value() * syy.value()).sqrt()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Mann–Kendall statistic S = Σ_{i<j} sign(y_j − y_i); negative means decreasing.
pub fn mann_kendall(ys: &[f64]) -> i64 {
    let mut s = 0i64;
    for i in 0..ys.len() {
        for j in i + 1..ys.len() {
            s += match ys[j].partial_cmp(&ys[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    s
}

/// Two-sample Kolmogorov–Smirnov statistic sup |F_a − F_b|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic critical value c(α)·√((n+m)/(nm)); c = 1.95 corresponds to α = 0.001.
pub fn ks_critical(n: usize, m: usize, c: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Least-squares line y ≈ slope·x + intercept.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn ols(xs: &[f64], ys: &[f64]) -> LinearFit {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = CompensatedSum::default();
    let mut sxx = CompensatedSum::default();
    for (x, y) in xs.iter().zip(ys) {
        sxy.add((x - mx) * (y - my));
        sxx.add((x - mx) * (x - mx));
    }
    let slope = sxy.value() / sxx.value();
    LinearFit { slope, intercept: my - slope * mx }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(&xs), 2.0);
    }

    #[test]
    fn mean_and_se_of_known_sample() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // variance 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn trend_statistics() {
        let y = [5.0, 4.0, 3.5, 1.0];
        assert_eq!(mann_kendall(&y), -6);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &y) + 1.0).abs() < 1e-15);
        let fit = ols(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((fit.slope - 2.0).abs() < 1e-15 && (fit.intercept - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ks_of_disjoint_samples_is_one() {
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert_eq!(ks_statistic(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]), 0.0);
    }

    #[test]
    fn accumulator_matches_direct() {
        let rows = [[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let mut acc = VectorAccumulator::new(2);
        rows.iter().for_each(|r| acc.push(r));
        let col0: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let (m, se) = mean_se(&col0);
        assert!((acc.mean()[0] - m).abs() < 1e-15);
        assert!((acc.standard_error()[0] - se).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_is_bounded(xs in prop::collection::vec(-10.0f64..10.0, 3..20)) {
            let idx: Vec<f64> = (0..xs.len()).map(|i| i as f64).collect();
            let r = spearman(&idx, &xs);
            prop_assert!(r.is_nan() || r.abs() <= 1.0 + 1e-12);
        }
    }
}
