//! Market coefficient functions and the quantities derived from them.
//!
//! A [`CoefficientSet`] carries the pre-default drift `b(S)`, relative
//! volatility `sigma(S, t)`, default intensity `lambda(S, t)` and short rate
//! `r(S)`. Every pricer and simulator in the crate evaluates the model only
//! through this type.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type PriceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PriceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Constant `(r, lambda, sigma)`; the inputs of the lognormal closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRates {
    pub r: f64,
    pub lambda: f64,
    pub sigma: f64,
}

/// Coefficients under which every lattice step multiplies the stock by a
/// state-independent factor, so the binary tree recombines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multiplicative {
    /// `b(x) / x`
    pub mu: f64,
    pub rates: ConstantRates,
}

#[derive(Clone)]
pub struct CoefficientSet {
    drift: PriceFn,
    vol: PriceTimeFn,
    intensity: PriceTimeFn,
    rate: PriceFn,
    pub sigma_floor: f64,
    pub lambda_cap: f64,
    /// Declared S-domain `(lower, upper)`.
    pub domain: (f64, f64),
    family: Option<ParametricFamily>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("sigma_floor", &self.sigma_floor)
            .field("lambda_cap", &self.lambda_cap)
            .field("domain", &self.domain)
            .field("family", &self.family)
            .finish()
    }
}

impl CoefficientSet {
    /// Builds a set from arbitrary functions. No structural shortcut (closed
    /// form, recombining lattice) is available for such sets.
    pub fn from_fns(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        vol: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        intensity: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        rate: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma_floor: f64,
        lambda_cap: f64,
    ) -> Self {
        CoefficientSet {
            drift: Arc::new(drift),
            vol: Arc::new(vol),
            intensity: Arc::new(intensity),
            rate: Arc::new(rate),
            sigma_floor,
            lambda_cap,
            domain: (0.0, f64::INFINITY),
            family: None,
        }
    }

    pub fn with_domain(mut self, lower: f64, upper: f64) -> Self {
        self.domain = (lower, upper);
        self
    }

    #[inline]
    pub fn drift(&self, s: f64) -> f64 {
        (self.drift)(s)
    }

    #[inline]
    pub fn vol(&self, s: f64, t: f64) -> f64 {
        (self.vol)(s, t)
    }

    #[inline]
    pub fn intensity(&self, s: f64, t: f64) -> f64 {
        (self.intensity)(s, t)
    }

    #[inline]
    pub fn rate(&self, s: f64) -> f64 {
        (self.rate)(s)
    }

    pub fn family(&self) -> Option<&ParametricFamily> {
        self.family.as_ref()
    }

    /// Market price of risk `theta = (r(S) S - b(S)) / (sigma(S, t) S)`.
    ///
    /// With this normalisation `b + lambda S + sigma S theta = (r + lambda) S`
    /// holds exactly. A zero volatility is accepted only when the numerator
    /// vanishes too (the market is then already risk neutral).
    pub fn theta(&self, s: f64, t: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("theta needs S > 0, got S={s}")));
        }
        let excess = self.rate(s) * s - self.drift(s);
        let scale = self.vol(s, t) * s;
        if scale == 0.0 {
            if excess == 0.0 {
                return Ok(0.0);
            }
            return Err(Error::Domain(format!(
                "market price of risk undefined: zero volatility with drift excess {excess} at S={s}, t={t}"
            )));
        }
        let theta = excess / scale;
        if !theta.is_finite() {
            return Err(Error::NonFinite {
                what: "theta",
                s,
                t,
            });
        }
        Ok(theta)
    }

    /// Hazard-adjusted per-step rate defined by
    /// `1 + r_eff dt = (1 + r dt) exp(lambda dt)`.
    pub fn effective_rate(&self, s: f64, t: f64, dt: f64) -> f64 {
        effective_rate(self.rate(s), self.intensity(s, t), dt)
    }

    /// `Some` when `r`, `lambda` and `sigma` are constants.
    pub fn constant_rates(&self) -> Option<ConstantRates> {
        match self.family.as_ref()? {
            ParametricFamily::Constant {
                sigma, lambda, r, ..
            }
            | ParametricFamily::Geometric {
                sigma, lambda, r, ..
            } => Some(ConstantRates {
                r: *r,
                lambda: *lambda,
                sigma: *sigma,
            }),
            _ => None,
        }
    }

    /// `Some` when the lattice step is a state-independent multiplicative
    /// factor: constant rates and `b(x) = mu x`.
    pub fn multiplicative(&self) -> Option<Multiplicative> {
        let rates = self.constant_rates()?;
        let mu = match self.family.as_ref()? {
            ParametricFamily::Constant { b, .. } if *b == 0.0 => 0.0,
            ParametricFamily::Geometric { mu, .. } => *mu,
            _ => return None,
        };
        Some(Multiplicative { mu, rates })
    }
}

/// `((1 + r dt) exp(lambda dt) - 1) / dt`, evaluated without cancellation.
#[inline]
pub fn effective_rate(r: f64, lambda: f64, dt: f64) -> f64 {
    r + (1.0 + r * dt) * (lambda * dt).exp_m1() / dt
}

/// Piecewise-linear table with flat extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Table {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Domain(format!(
                "table needs matching nonempty columns, got {} and {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Domain("table contains non-finite values".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "table breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Table { xs, ys })
    }

    /// Parses two whitespace- or comma-separated columns; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|c| !c.is_empty())
                .collect();
            let parsed: Vec<f64> = cols.iter().filter_map(|c| c.parse().ok()).collect();
            if cols.len() != 2 || parsed.len() != 2 {
                return Err(Error::config(
                    Some(i + 1),
                    None,
                    format!("expected two numeric columns, got `{line}`"),
                ));
            }
            xs.push(parsed[0]);
            ys.push(parsed[1]);
        }
        Table::new(xs, ys)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Table::parse(&text)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let j = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let w = (x - x0) / (x1 - x0);
        self.ys[j - 1] + w * (self.ys[j] - self.ys[j - 1])
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}

/// Concrete coefficient families selectable from an experiment config.
#[derive(Debug, Clone, PartialEq)]
pub enum ParametricFamily {
    /// Every coefficient constant; `b` is an absolute drift.
    Constant {
        b: f64,
        sigma: f64,
        lambda: f64,
        r: f64,
    },
    /// `b(x) = mu x`, the rest constant.
    Geometric {
        mu: f64,
        sigma: f64,
        lambda: f64,
        r: f64,
    },
    /// `b(x) = mu x`, `lambda(x) = min(c x^-p, lambda_cap)`.
    CevCappedIntensity {
        mu: f64,
        sigma: f64,
        c: f64,
        p: f64,
        r: f64,
    },
    /// `b(x) = mu x`, intensity interpolated from a table.
    Tabulated {
        mu: f64,
        sigma: f64,
        intensity: Table,
        r: f64,
    },
}

impl ParametricFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            ParametricFamily::Constant { .. } => "constant",
            ParametricFamily::Geometric { .. } => "geometric",
            ParametricFamily::CevCappedIntensity { .. } => "cev_capped_intensity",
            ParametricFamily::Tabulated { .. } => "tabulated",
        }
    }

    /// Instantiates the family. Parameters are checked against the
    /// coefficient invariants before any function is built.
    pub fn build(&self, sigma_floor: f64, lambda_cap: f64) -> Result<CoefficientSet> {
        if !(sigma_floor > 0.0) {
            return Err(Error::invalid("sigma_floor", sigma_floor, "must be > 0"));
        }
        if !(lambda_cap >= 0.0) || !lambda_cap.is_finite() {
            return Err(Error::invalid("lambda_cap", lambda_cap, "must be finite and >= 0"));
        }
        let check_r = |r: f64| {
            if r >= 0.0 && r.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid("r", r, "short rate must be finite and >= 0"))
            }
        };
        let check_lambda = |l: f64| {
            if (0.0..=lambda_cap).contains(&l) {
                Ok(())
            } else {
                Err(Error::invalid(
                    "lambda",
                    l,
                    format!("intensity must lie in [0, {lambda_cap}]"),
                ))
            }
        };
        let mut set = match self.clone() {
            ParametricFamily::Constant { b, sigma, lambda, r } => {
                check_r(r)?;
                check_lambda(lambda)?;
                CoefficientSet::from_fns(
                    move |_| b,
                    move |_, _| sigma,
                    move |_, _| lambda,
                    move |_| r,
                    sigma_floor,
                    lambda_cap,
                )
            }
            ParametricFamily::Geometric { mu, sigma, lambda, r } => {
                check_r(r)?;
                check_lambda(lambda)?;
                CoefficientSet::from_fns(
                    move |x| mu * x,
                    move |_, _| sigma,
                    move |_, _| lambda,
                    move |_| r,
                    sigma_floor,
                    lambda_cap,
                )
            }
            ParametricFamily::CevCappedIntensity { mu, sigma, c, p, r } => {
                check_r(r)?;
                if !(c >= 0.0) || !p.is_finite() {
                    return Err(Error::invalid("c", c, "needs c >= 0 and finite p"));
                }
                CoefficientSet::from_fns(
                    move |x| mu * x,
                    move |_, _| sigma,
                    move |x, _| (c * x.powf(-p)).min(lambda_cap),
                    move |_| r,
                    sigma_floor,
                    lambda_cap,
                )
            }
            ParametricFamily::Tabulated { mu, sigma, intensity, r } => {
                check_r(r)?;
                for &l in intensity.ys() {
                    check_lambda(l)?;
                }
                CoefficientSet::from_fns(
                    move |x| mu * x,
                    move |_, _| sigma,
                    move |x, _| intensity.eval(x),
                    move |_| r,
                    sigma_floor,
                    lambda_cap,
                )
            }
        };
        set.family = Some(self.clone());
        Ok(set)
    }
}

/// One assumption checked by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Largest sampled difference quotients of `b`, `lambda S` and `sigma S`
/// along the S-grid. Sampling cannot certify a Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub drift: f64,
    pub intensity_times_s: f64,
    pub vol_times_s: f64,
    pub heuristic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Some grid point evaluated the intensity at its cap.
    pub cap_active: bool,
    pub lipschitz: LipschitzEstimate,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Samples the coefficient assumptions over `s_grid x t_grid`.
pub fn validate(coeffs: &CoefficientSet, s_grid: &[f64], t_grid: &[f64]) -> Result<ValidationReport> {
    if s_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Domain("validation grids must be nonempty".into()));
    }
    let (lo, hi) = coeffs.domain;
    for &s in s_grid {
        if !s.is_finite() || s < lo || s > hi {
            return Err(Error::Domain(format!(
                "grid price {s} outside declared domain [{lo}, {hi}]"
            )));
        }
    }
    if let Some(&t) = t_grid.iter().find(|t| !t.is_finite()) {
        return Err(Error::Domain(format!("non-finite grid time {t}")));
    }

    let mut min_sigma = f64::INFINITY;
    let mut lambda_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut min_r = f64::INFINITY;
    let mut cap_active = false;
    for &s in s_grid {
        let b = coeffs.drift(s);
        let r = coeffs.rate(s);
        if !b.is_finite() {
            return Err(Error::NonFinite { what: "drift", s, t: f64::NAN });
        }
        if !r.is_finite() {
            return Err(Error::NonFinite { what: "rate", s, t: f64::NAN });
        }
        min_r = min_r.min(r);
        for &t in t_grid {
            let sigma = coeffs.vol(s, t);
            let lambda = coeffs.intensity(s, t);
            if !sigma.is_finite() {
                return Err(Error::NonFinite { what: "volatility", s, t });
            }
            if !lambda.is_finite() {
                return Err(Error::NonFinite { what: "intensity", s, t });
            }
            min_sigma = min_sigma.min(sigma);
            lambda_range = (lambda_range.0.min(lambda), lambda_range.1.max(lambda));
            if lambda >= coeffs.lambda_cap {
                cap_active = true;
            }
        }
    }

    let checks = vec![
        Check {
            name: "sigma_floor",
            passed: min_sigma >= coeffs.sigma_floor,
            detail: format!("min sigma {min_sigma} vs floor {}", coeffs.sigma_floor),
        },
        Check {
            name: "lambda_bounds",
            passed: lambda_range.0 >= 0.0 && lambda_range.1 <= coeffs.lambda_cap,
            detail: format!(
                "lambda in [{}, {}] vs [0, {}]",
                lambda_range.0, lambda_range.1, coeffs.lambda_cap
            ),
        },
        Check {
            name: "rate_nonnegative",
            passed: min_r >= 0.0,
            detail: format!("min r {min_r}"),
        },
        Check {
            name: "finite",
            passed: true,
            detail: "all evaluations finite".into(),
        },
    ];

    Ok(ValidationReport {
        checks,
        cap_active,
        lipschitz: lipschitz_estimate(coeffs, s_grid, t_grid),
    })
}

fn lipschitz_estimate(coeffs: &CoefficientSet, s_grid: &[f64], t_grid: &[f64]) -> LipschitzEstimate {
    let mut sorted = s_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut est = LipschitzEstimate {
        drift: 0.0,
        intensity_times_s: 0.0,
        vol_times_s: 0.0,
        heuristic: true,
    };
    for w in sorted.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        est.drift = est.drift.max((coeffs.drift(b) - coeffs.drift(a)).abs() / h);
        for &t in t_grid {
            let li = (coeffs.intensity(b, t) * b - coeffs.intensity(a, t) * a).abs() / h;
            let vi = (coeffs.vol(b, t) * b - coeffs.vol(a, t) * a).abs() / h;
            est.intensity_times_s = est.intensity_times_s.max(li);
            est.vol_times_s = est.vol_times_s.max(vi);
        }
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn constant(b: f64, sigma: f64, lambda: f64, r: f64) -> CoefficientSet {
        ParametricFamily::Constant { b, sigma, lambda, r }
            .build(0.01, 1.0)
            .unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_set_passes_all_checks() {
        let c = constant(0.0, 0.2, 0.02, 0.05);
        let rep = validate(&c, &linspace(50.0, 150.0, 21), &[0.0, 0.5, 1.0]).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        assert!(!rep.cap_active);
        assert!(rep.lipschitz.heuristic);
    }

    #[test]
    fn zero_vol_violates_floor() {
        let c = CoefficientSet::from_fns(|_| 0.0, |_, _| 0.0, |_, _| 0.02, |_| 0.05, 0.01, 1.0);
        let rep = validate(&c, &[100.0], &[0.0]).unwrap();
        assert!(!rep.check("sigma_floor").unwrap().passed);
        assert!(rep.check("lambda_bounds").unwrap().passed);
    }

    #[test]
    fn capped_power_intensity_reports_active_cap() {
        let c = ParametricFamily::CevCappedIntensity { mu: 0.0, sigma: 0.2, c: 2.0, p: 1.0, r: 0.05 }
            .build(0.01, 1.0)
            .unwrap();
        let grid = [0.5, 1.0, 2.0, 4.0, 100.0];
        // 2/0.5 = 4 and 2/1 = 2 are clipped; 2/2 = 1 sits on the cap.
        assert_eq!(c.intensity(0.5, 0.0), 1.0);
        assert_eq!(c.intensity(1.0, 0.0), 1.0);
        assert_eq!(c.intensity(4.0, 0.0), 0.5);
        assert_relative_eq!(c.intensity(100.0, 0.0), 0.02);
        let rep = validate(&c, &grid, &[0.0, 1.0]).unwrap();
        assert!(rep.all_passed());
        assert!(rep.cap_active);
    }

    #[test]
    fn non_finite_evaluation_names_the_point() {
        let c = CoefficientSet::from_fns(|_| 0.0, |_, _| 0.2, |s, _| 1.0 / (s - 80.0), |_| 0.0, 0.01, 1.0);
        let err = validate(&c, &[70.0, 80.0, 90.0], &[0.25]).unwrap_err();
        assert_eq!(err, Error::NonFinite { what: "intensity", s: 80.0, t: 0.25 });
    }

    #[test]
    fn grid_outside_domain_is_rejected() {
        let c = constant(0.0, 0.2, 0.02, 0.05).with_domain(10.0, 200.0);
        assert!(matches!(validate(&c, &[5.0], &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(validate(&c, &[], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn family_parameters_are_checked() {
        let bad = ParametricFamily::Constant { b: 0.0, sigma: 0.2, lambda: 2.0, r: 0.0 };
        assert!(bad.build(0.01, 1.0).is_err());
        let bad = ParametricFamily::Constant { b: 0.0, sigma: 0.2, lambda: 0.0, r: -0.01 };
        assert!(bad.build(0.01, 1.0).is_err());
    }

    #[test]
    fn theta_examples() {
        let c = ParametricFamily::Geometric { mu: 0.1, sigma: 0.2, lambda: 0.0, r: 0.05 }
            .build(0.01, 1.0)
            .unwrap();
        assert_relative_eq!(c.theta(100.0, 0.0).unwrap(), -0.25, epsilon = 1e-15);

        let rn = ParametricFamily::Geometric { mu: 0.05, sigma: 0.2, lambda: 0.0, r: 0.05 }
            .build(0.01, 1.0)
            .unwrap();
        assert_eq!(rn.theta(73.0, 0.3).unwrap(), 0.0);
        assert_eq!(constant(0.0, 0.2, 0.1, 0.0).theta(10.0, 0.0).unwrap(), 0.0);
        assert!(matches!(c.theta(0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(c.theta(-1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn theta_with_zero_vol() {
        let flat = constant(0.0, 0.0, 0.05, 0.0);
        assert_eq!(flat.theta(100.0, 0.0).unwrap(), 0.0);
        let arb = constant(0.0, 0.0, 0.05, 0.05);
        assert!(arb.theta(100.0, 0.0).is_err());
    }

    #[test]
    fn effective_rate_examples() {
        let c = constant(0.0, 0.2, 0.02, 0.05);
        let exact = c.effective_rate(100.0, 0.0, 0.01);
        let expansion = 0.07 + (0.02f64.powi(2) + 2.0 * 0.05 * 0.02) / 200.0;
        assert_relative_eq!(expansion, 0.070012, epsilon = 1e-15);
        assert!((exact - 0.070012).abs() < 5e-7, "{exact}");
        assert!((exact - expansion).abs() < 1e-6);
        assert_eq!(effective_rate(0.0, 0.0, 0.01), 0.0);
        for dt in [1.0, 0.1, 1e-3] {
            assert_relative_eq!(effective_rate(0.05, 0.0, dt), 0.05, epsilon = 1e-15);
        }
    }

    #[test]
    fn effective_rate_expansion_error_is_second_order() {
        let (r, l) = (0.05, 0.02);
        let ns: Vec<f64> = [10.0, 31.0, 100.0, 316.0, 1000.0, 3162.0, 10000.0].to_vec();
        let pts: Vec<(f64, f64)> = ns
            .iter()
            .map(|&n| {
                let dt = 1.0 / n;
                let diff = effective_rate(r, l, dt) - (r + l + (l * l + 2.0 * r * l) / (2.0 * n));
                (n.ln(), diff.abs().ln())
            })
            .collect();
        let slope = crate::stats::ols_slope(&pts);
        assert!(slope <= -1.9, "slope {slope}");
    }

    #[test]
    fn effective_rate_decreases_with_steps() {
        for r in [0.01, 0.05, 0.2, 1.0] {
            for l in [0.001, 0.02, 0.5, 1.0] {
                let mut prev = f64::INFINITY;
                for n in [1usize, 2, 5, 10, 100, 1000, 10_000] {
                    let v = effective_rate(r, l, 1.0 / n as f64);
                    assert!(v >= r);
                    assert!(v <= prev + 1e-15, "r={r} l={l} n={n}");
                    prev = v;
                }
                assert!((prev - (r + l)).abs() < 1e-3 * (1.0 + r + l));
            }
        }
    }

    #[test]
    fn table_interpolates_and_loads() {
        let t = Table::parse("# S lambda\n50, 0.04\n100 0.02\n150\t0.01\n").unwrap();
        assert_eq!(t.eval(10.0), 0.04);
        assert_relative_eq!(t.eval(75.0), 0.03);
        assert_relative_eq!(t.eval(125.0), 0.015);
        assert_eq!(t.eval(1e6), 0.01);
        assert!(Table::parse("1 2\n1 3\n").is_err());
        assert!(Table::parse("1 2 3\n").is_err());
    }

    #[test]
    fn structural_shortcuts() {
        assert!(constant(0.0, 0.2, 0.02, 0.05).multiplicative().is_some());
        assert!(constant(1.0, 0.2, 0.02, 0.05).multiplicative().is_none());
        assert!(constant(1.0, 0.2, 0.02, 0.05).constant_rates().is_some());
        let cev = ParametricFamily::CevCappedIntensity { mu: 0.0, sigma: 0.2, c: 2.0, p: 1.0, r: 0.05 }
            .build(0.01, 1.0)
            .unwrap();
        assert!(cev.constant_rates().is_none());
    }

    proptest! {
        #[test]
        fn geometric_theta_is_scale_free(s in 1e-3f64..1e5, mu in -0.5f64..0.5, sigma in 0.05f64..1.0, r in 0.0f64..0.2) {
            let c = ParametricFamily::Geometric { mu, sigma, lambda: 0.01, r }.build(0.01, 1.0).unwrap();
            let t0 = c.theta(1.0, 0.0).unwrap();
            prop_assert!((c.theta(s, 0.3).unwrap() - t0).abs() <= 1e-12);
        }

        #[test]
        fn risk_neutral_drift_identity(s in 1.0f64..500.0, b in -5.0f64..5.0, sigma in 0.05f64..1.0, lambda in 0.0f64..1.0, r in 0.0f64..0.2) {
            let c = constant(b, sigma, lambda, r);
            let theta = c.theta(s, 0.0).unwrap();
            let lhs = b + lambda * s + sigma * s * theta;
            prop_assert!((lhs - (r + lambda) * s).abs() <= 1e-10 * (1.0 + s));
        }
    }
}
