//! Small statistics toolkit: streaming moments, regressions and the
//! two-sample Kolmogorov–Smirnov test.

/// Streaming mean and variance (Welford, with Chan's merge).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub count: u64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanAcc) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean, `sample std / sqrt(count)`.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for MeanAcc {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAcc::new();
        iter.into_iter().for_each(|x| acc.push(x));
        acc
    }
}

/// Weighted least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `sqrt(1 / sum w (x - xbar)^2)`: the slope standard error when the
    /// weights are inverse variances.
    pub slope_se: f64,
}

pub fn weighted_line_fit(points: &[(f64, f64)], weights: &[f64]) -> LineFit {
    assert_eq!(points.len(), weights.len());
    let sw: f64 = weights.iter().sum();
    let xbar = points.iter().zip(weights).map(|((x, _), w)| w * x).sum::<f64>() / sw;
    let ybar = points.iter().zip(weights).map(|((_, y), w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in points.iter().zip(weights) {
        sxx += w * (x - xbar) * (x - xbar);
        sxy += w * (x - xbar) * (y - ybar);
        syy += w * (y - ybar) * (y - ybar);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    LineFit {
        slope,
        intercept,
        r2,
        slope_se: (1.0 / sxx).sqrt(),
    }
}

pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    weighted_line_fit(points, &vec![1.0; points.len()]).slope
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
///
/// Ties across the samples are handled by advancing both empirical CDFs past
/// every copy of the current value before comparing.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs nonempty samples");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample critical value `c(alpha) sqrt((n + m) / (n m))`
/// with `c(alpha) = sqrt(-ln(alpha / 2) / 2)`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Largest gap between empirical characteristic functions over a fixed set
/// of frequencies scaled by `1 / scale`.
pub fn cf_distance(a: &[f64], b: &[f64], scale: f64) -> f64 {
    const FREQS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let ecf = |xs: &[f64], u: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for &x in xs {
            let (s, c) = (u * x).sin_cos();
            re += c;
            im += s;
        }
        (re / xs.len() as f64, im / xs.len() as f64)
    };
    FREQS
        .iter()
        .map(|&f| {
            let u = f / scale;
            let (ra, ia) = ecf(a, u);
            let (rb, ib) = ecf(b, u);
            (ra - rb).hypot(ia - ib)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mean_acc_matches_two_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1 + 3.0).collect();
        let acc: MeanAcc = xs.iter().copied().collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
        assert_relative_eq!(acc.mean(), m, epsilon = 1e-12);
        assert_relative_eq!(acc.variance(), v, epsilon = 1e-10);
        assert_relative_eq!(acc.std_error(), (v / 1000.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn ks_known_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_relative_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[2.5]), 0.5);
        // point masses
        assert_eq!(ks_statistic(&[5.0; 10], &[5.0; 7]), 0.0);
    }

    #[test]
    fn ks_critical_values() {
        assert_relative_eq!(ks_critical_value(0.05, 1, 1) / 2f64.sqrt(), 1.3581, epsilon = 1e-4);
        assert_relative_eq!(ks_critical_value(0.01, 1, 1) / 2f64.sqrt(), 1.6276, epsilon = 1e-4);
    }

    #[test]
    fn line_fit_exact() {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let f = weighted_line_fit(&pts, &[1.0, 2.0, 1.0, 3.0, 1.0]);
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.r2, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn merge_is_concatenation(xs in prop::collection::vec(-1e3f64..1e3, 0..50), ys in prop::collection::vec(-1e3f64..1e3, 0..50)) {
            let mut a: MeanAcc = xs.iter().copied().collect();
            let b: MeanAcc = ys.iter().copied().collect();
            a.merge(&b);
            let all: MeanAcc = xs.iter().chain(&ys).copied().collect();
            prop_assert_eq!(a.count, all.count);
            prop_assert!((a.mean() - all.mean()).abs() < 1e-9);
            prop_assert!((a.variance() - all.variance()).abs() < 1e-6 * (1.0 + all.variance()));
        }

        #[test]
        fn ks_symmetric_and_bounded(xs in prop::collection::vec(-10f64..10.0, 1..40), ys in prop::collection::vec(-10f64..10.0, 1..40)) {
            let d = ks_statistic(&xs, &ys);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, ks_statistic(&ys, &xs));
        }
    }
}
