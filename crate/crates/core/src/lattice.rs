//! The discrete-time defaultable market on a binary lattice.
//!
//! Over a step of length `dt = T / n` the pre-default stock, bond, hazard,
//! density and hazard-adjusted discount move as
//!
//! ```text
//! S'     = S + (b(S) + lambda S) dt + sigma S sqrt(dt) eps
//! B'     = B (1 + r dt)
//! Gamma' = Gamma + lambda dt
//! xi'    = xi (1 + theta sqrt(dt) eps)
//! beta'  = beta (1 + r_eff dt),   1 + r_eff dt = (1 + r dt) exp(lambda dt)
//! ```
//!
//! with every coefficient frozen at the start of the step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::CoefficientSet;
use crate::rng::{stream_rng, Stream};
use crate::table::Table;

/// Absorbed paths are clamped at `ABSORB_FLOOR * S0`.
pub const ABSORB_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Fair coin.
    Physical,
    /// Coin with up-probability `(1 + theta sqrt(dt)) / 2`.
    RiskNeutral,
}

/// What to do when the stock recursion leaves `S > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StockPolicy {
    #[default]
    Reject,
    Absorb,
}

/// Node-level Arrow–Debreu prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePrices {
    pub pi_up: f64,
    pub pi_down: f64,
    /// Risk-neutral up-probability.
    pub q_up: f64,
}

#[derive(Debug, Clone)]
pub struct LatticeSpec {
    pub steps: usize,
    pub s0: f64,
    pub horizon: f64,
    pub coeffs: CoefficientSet,
    pub policy: StockPolicy,
    dt: f64,
    sqrt_dt: f64,
}

impl LatticeSpec {
    /// Checks the step count, spot and horizon, then samples the positivity
    /// window `|theta| sqrt(dt) < 1` over a spread of prices around `s0`.
    pub fn new(steps: usize, s0: f64, horizon: f64, coeffs: CoefficientSet) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", 0.0, "need at least one step"));
        }
        if !(s0 > 0.0) || !s0.is_finite() {
            return Err(Error::invalid("s0", s0, "spot must be positive"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid("horizon", horizon, "horizon must be positive"));
        }
        let dt = horizon / steps as f64;
        let spec = LatticeSpec {
            steps,
            s0,
            horizon,
            coeffs,
            policy: StockPolicy::default(),
            dt,
            sqrt_dt: dt.sqrt(),
        };
        spec.sample_window()?;
        Ok(spec)
    }

    pub fn with_policy(mut self, policy: StockPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Same market with a different step count.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        LatticeSpec::new(steps, self.s0, self.horizon, self.coeffs.clone())
            .map(|s| s.with_policy(self.policy))
    }

    fn sample_window(&self) -> Result<()> {
        let (lo, hi) = self.coeffs.domain;
        let spread = (self.coeffs.vol(self.s0, 0.0).abs() * self.horizon.sqrt()).max(0.05);
        let last = self.time(self.steps - 1);
        for i in 0..=32 {
            let z = -4.0 + 8.0 * i as f64 / 32.0;
            let s = (self.s0 * (spread * z).exp()).clamp(lo.max(f64::MIN_POSITIVE), hi);
            for t in [0.0, 0.5 * last, last] {
                self.tilt(s, t)?;
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Index of the last grid time not after `t`.
    pub fn grid_index(&self, t: f64) -> usize {
        grid_index(t, self.horizon, self.steps)
    }

    /// `theta(S, t) sqrt(dt)`, failing outside the positivity window.
    #[inline]
    pub fn tilt(&self, s: f64, t: f64) -> Result<f64> {
        let theta = self.coeffs.theta(s, t)?;
        let tilt = theta * self.sqrt_dt;
        if tilt.abs() >= 1.0 {
            return Err(Error::PositivityWindow {
                s,
                t,
                ratio: tilt.abs(),
                min_steps: (theta * theta * self.horizon).floor() as usize + 1,
            });
        }
        Ok(tilt)
    }

    /// One stock step. A nonpositive result is an error; the caller applies
    /// the [`StockPolicy`].
    #[inline]
    pub fn step_stock(&self, s: f64, t: f64, eps: f64) -> Result<f64> {
        let c = &self.coeffs;
        let next = s
            + (c.drift(s) + c.intensity(s, t) * s) * self.dt
            + c.vol(s, t) * s * self.sqrt_dt * eps;
        if !(next > 0.0) {
            return Err(Error::NonpositiveStock { step: None, s, t, eps });
        }
        Ok(next)
    }

    /// Stock step with the policy applied; the flag reports absorption.
    #[inline]
    pub fn advance_stock(&self, s: f64, t: f64, eps: f64) -> Result<(f64, bool)> {
        match self.step_stock(s, t, eps) {
            Ok(next) => Ok((next, false)),
            Err(e) => match self.policy {
                StockPolicy::Reject => Err(e),
                StockPolicy::Absorb => Ok((ABSORB_FLOOR * self.s0, true)),
            },
        }
    }

    #[inline]
    pub fn step_bond(&self, bond: f64, s: f64) -> f64 {
        bond * (1.0 + self.coeffs.rate(s) * self.dt)
    }

    #[inline]
    pub fn step_hazard(&self, gamma: f64, s: f64, t: f64) -> f64 {
        gamma + self.coeffs.intensity(s, t) * self.dt
    }

    #[inline]
    pub fn step_density(&self, xi: f64, s: f64, t: f64, eps: f64) -> Result<f64> {
        Ok(xi * (1.0 + self.tilt(s, t)? * eps))
    }

    /// `1 + r_eff dt` at the node.
    #[inline]
    pub fn growth(&self, s: f64, t: f64) -> f64 {
        1.0 + self.coeffs.effective_rate(s, t, self.dt) * self.dt
    }

    pub fn state_prices(&self, s: f64, t: f64) -> Result<StatePrices> {
        let tilt = self.tilt(s, t)?;
        let discount = 1.0 / self.growth(s, t);
        Ok(StatePrices {
            pi_up: 0.5 * (1.0 + tilt) * discount,
            pi_down: 0.5 * (1.0 - tilt) * discount,
            q_up: 0.5 * (1.0 + tilt),
        })
    }
}

pub(crate) fn grid_index(t: f64, horizon: f64, steps: usize) -> usize {
    let x = t / horizon * steps as f64;
    ((x + 1e-9 * (1.0 + x)).floor().max(0.0) as usize).min(steps)
}

/// One realised trajectory of the discrete market.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    /// `eps[k]` drives the move from step `k` to `k + 1`.
    pub eps: Vec<i8>,
    pub times: Vec<f64>,
    pub stock: Vec<f64>,
    pub bond: Vec<f64>,
    pub density: Vec<f64>,
    pub hazard: Vec<f64>,
    pub discount: Vec<f64>,
    /// The stock hit the absorption floor somewhere on the path.
    pub absorbed: bool,
}

impl DiscretePath {
    pub fn steps(&self) -> usize {
        self.eps.len()
    }

    /// Columns `k, t, eps, S, B, xi, Gamma, beta`; `eps` is 0 at `k = 0`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["k", "t", "eps", "S", "B", "xi", "Gamma", "beta"]);
        for k in 0..self.stock.len() {
            let eps = if k == 0 { 0 } else { self.eps[k - 1] as i64 };
            t.push(vec![
                k.into(),
                self.times[k].into(),
                eps.into(),
                self.stock[k].into(),
                self.bond[k].into(),
                self.density[k].into(),
                self.hazard[k].into(),
                self.discount[k].into(),
            ]);
        }
        t
    }
}

/// Simulates one full path under `measure`, consuming one uniform per step.
pub fn simulate_path<R: Rng + ?Sized>(
    spec: &LatticeSpec,
    measure: Measure,
    rng: &mut R,
) -> Result<DiscretePath> {
    let n = spec.steps;
    let mut path = DiscretePath {
        eps: Vec::with_capacity(n),
        times: Vec::with_capacity(n + 1),
        stock: Vec::with_capacity(n + 1),
        bond: Vec::with_capacity(n + 1),
        density: Vec::with_capacity(n + 1),
        hazard: Vec::with_capacity(n + 1),
        discount: Vec::with_capacity(n + 1),
        absorbed: false,
    };
    let (mut s, mut b, mut xi, mut gamma, mut beta) = (spec.s0, 1.0, 1.0, 0.0, 1.0);
    for k in 0..=n {
        let t = spec.time(k);
        path.times.push(t);
        path.stock.push(s);
        path.bond.push(b);
        path.density.push(xi);
        path.hazard.push(gamma);
        path.discount.push(beta);
        if k == n {
            break;
        }
        let at_step = |e: Error| match e {
            Error::NonpositiveStock { s, t, eps, .. } => Error::NonpositiveStock {
                step: Some(k),
                s,
                t,
                eps,
            },
            other => other,
        };
        let tilt = spec.tilt(s, t)?;
        let q_up = match measure {
            Measure::Physical => 0.5,
            Measure::RiskNeutral => 0.5 * (1.0 + tilt),
        };
        let eps = if rng.random::<f64>() < q_up { 1.0 } else { -1.0 };
        let (next, absorbed) = spec.advance_stock(s, t, eps).map_err(at_step)?;
        path.absorbed |= absorbed;
        path.eps.push(eps as i8);
        b = spec.step_bond(b, s);
        gamma = spec.step_hazard(gamma, s, t);
        xi *= 1.0 + tilt * eps;
        beta *= spec.growth(s, t);
        s = next;
    }
    Ok(path)
}

/// [`simulate_path`] on the lattice stream of `seed` at position `index`.
pub fn simulate_path_seeded(
    spec: &LatticeSpec,
    measure: Measure,
    seed: u64,
    index: u64,
) -> Result<DiscretePath> {
    simulate_path(spec, measure, &mut stream_rng(seed, Stream::Lattice, index))
}

/// Walks the deterministic node reached by `prefix` (each entry `+1` or `-1`),
/// returning `(S_k, beta_k)`.
pub fn walk_prefix(spec: &LatticeSpec, prefix: &[i8]) -> Result<(f64, f64)> {
    if prefix.len() > spec.steps {
        return Err(Error::Domain(format!(
            "node prefix of length {} exceeds {} steps",
            prefix.len(),
            spec.steps
        )));
    }
    let (mut s, mut beta) = (spec.s0, 1.0);
    for (k, &e) in prefix.iter().enumerate() {
        if e != 1 && e != -1 {
            return Err(Error::Domain(format!("node prefix entry {e} is not +-1")));
        }
        let t = spec.time(k);
        spec.tilt(s, t)?;
        beta *= spec.growth(s, t);
        s = spec.advance_stock(s, t, e as f64)?.0;
    }
    Ok((s, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParametricFamily;
    use crate::stats::MeanAcc;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn constant(b: f64, sigma: f64, lambda: f64, r: f64) -> CoefficientSet {
        ParametricFamily::Constant { b, sigma, lambda, r }
            .build(0.01, 1.0)
            .unwrap()
    }

    fn geometric(mu: f64, sigma: f64, lambda: f64, r: f64) -> CoefficientSet {
        ParametricFamily::Geometric { mu, sigma, lambda, r }
            .build(0.01, 1.0)
            .unwrap()
    }

    #[test]
    fn construction_checks() {
        let c = constant(0.0, 0.2, 0.0, 0.0);
        assert!(LatticeSpec::new(0, 100.0, 1.0, c.clone()).is_err());
        assert!(LatticeSpec::new(1, 0.0, 1.0, c.clone()).is_err());
        assert!(LatticeSpec::new(1, 100.0, -1.0, c.clone()).is_err());
        // theta = (0.5 - 0.0)/0.05 = 10: needs n > 100
        let steep = geometric(0.0, 0.05, 0.0, 0.5);
        match LatticeSpec::new(50, 100.0, 1.0, steep.clone()) {
            Err(Error::PositivityWindow { min_steps, .. }) => assert_eq!(min_steps, 101),
            other => panic!("{other:?}"),
        }
        assert!(LatticeSpec::new(101, 100.0, 1.0, steep).is_ok());
    }

    #[test]
    fn one_step_stock() {
        let spec = LatticeSpec::new(1, 100.0, 1.0, constant(0.0, 0.2, 0.0, 0.0)).unwrap();
        assert_relative_eq!(spec.step_stock(100.0, 0.0, 1.0).unwrap(), 120.0, epsilon = 1e-12);
        assert_relative_eq!(spec.step_stock(100.0, 0.0, -1.0).unwrap(), 80.0, epsilon = 1e-12);

        let flat = LatticeSpec::new(1, 100.0, 1.0, constant(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(flat.step_stock(100.0, 0.0, 1.0).unwrap(), 100.0);
        assert_eq!(flat.step_stock(100.0, 0.0, -1.0).unwrap(), 100.0);

        let g = LatticeSpec::new(100, 100.0, 1.0, geometric(0.1, 0.2, 0.02, 0.05)).unwrap();
        assert_relative_eq!(g.step_stock(100.0, 0.0, 1.0).unwrap(), 102.12, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_stock_policy() {
        let spec = LatticeSpec::new(1, 100.0, 1.0, constant(0.0, 1.5, 0.0, 0.0)).unwrap();
        match spec.step_stock(100.0, 0.0, -1.0) {
            Err(Error::NonpositiveStock { s, eps, .. }) => {
                assert_eq!(s, 100.0);
                assert_eq!(eps, -1.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(spec.advance_stock(100.0, 0.0, -1.0).is_err());
        let absorbing = spec.clone().with_policy(StockPolicy::Absorb);
        let (s, flag) = absorbing.advance_stock(100.0, 0.0, -1.0).unwrap();
        assert!(flag);
        assert_relative_eq!(s, 1e-6);
    }

    #[test]
    fn bond_steps() {
        let zero = LatticeSpec::new(100, 100.0, 1.0, constant(0.0, 0.2, 0.0, 0.0)).unwrap();
        assert_eq!(zero.step_bond(1.0, 57.0), 1.0);
        let spec = LatticeSpec::new(100, 100.0, 1.0, constant(0.0, 0.2, 0.0, 0.05)).unwrap();
        assert_relative_eq!(spec.step_bond(1.0, 100.0), 1.0005, epsilon = 1e-15);
        let b = (0..100).fold(1.0, |b, _| spec.step_bond(b, 100.0));
        assert!((b - 1.051258).abs() < 5e-7, "{b}");
        assert_relative_eq!(b, 1.0005f64.powi(100), epsilon = 1e-12);
    }

    #[test]
    fn hazard_steps() {
        let zero = LatticeSpec::new(100, 100.0, 1.0, constant(0.0, 0.2, 0.0, 0.0)).unwrap();
        assert_eq!(zero.step_hazard(0.0, 100.0, 0.3), 0.0);
        let spec = LatticeSpec::new(100, 100.0, 1.0, constant(0.0, 0.2, 0.02, 0.0)).unwrap();
        let g = (0..50).fold(0.0, |g, k| spec.step_hazard(g, 100.0, spec.time(k)));
        assert_relative_eq!(g, 0.01, epsilon = 1e-15);
        let cev = ParametricFamily::CevCappedIntensity { mu: 0.0, sigma: 0.2, c: 2.0, p: 1.0, r: 0.0 }
            .build(0.01, 1.0)
            .unwrap();
        let spec = LatticeSpec::new(100, 100.0, 1.0, cev).unwrap();
        assert_relative_eq!(spec.step_hazard(0.0, 100.0, 0.0), 0.0002, epsilon = 1e-15);
    }

    #[test]
    fn density_steps() {
        let flat = LatticeSpec::new(100, 100.0, 1.0, geometric(0.05, 0.2, 0.0, 0.05)).unwrap();
        assert_eq!(flat.step_density(1.0, 100.0, 0.0, 1.0).unwrap(), 1.0);
        let spec = LatticeSpec::new(100, 100.0, 1.0, geometric(0.1, 0.2, 0.0, 0.05)).unwrap();
        let up = spec.step_density(1.0, 100.0, 0.0, 1.0).unwrap();
        let down = spec.step_density(1.0, 100.0, 0.0, -1.0).unwrap();
        assert_relative_eq!(up, 0.975, epsilon = 1e-15);
        assert_relative_eq!(0.5 * up + 0.5 * down, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn state_price_examples() {
        let trivial = LatticeSpec::new(10, 100.0, 1.0, constant(0.0, 0.2, 0.0, 0.0)).unwrap();
        assert_eq!(
            trivial.state_prices(100.0, 0.0).unwrap(),
            StatePrices { pi_up: 0.5, pi_down: 0.5, q_up: 0.5 }
        );

        let spec = LatticeSpec::new(100, 100.0, 1.0, geometric(0.1, 0.2, 0.02, 0.05)).unwrap();
        let sp = spec.state_prices(100.0, 0.0).unwrap();
        let growth = 1.0 + crate::model::effective_rate(0.05, 0.02, 0.01) / 100.0;
        assert!((growth - 1.00070012).abs() < 1e-9);
        assert_relative_eq!(sp.pi_up, 0.5 * 0.975 / growth, epsilon = 1e-15);
        assert_relative_eq!(sp.pi_down, 0.5 * 1.025 / growth, epsilon = 1e-15);
        assert!((sp.pi_up + sp.pi_down - 1.0 / growth).abs() <= 1e-12);
        assert_relative_eq!(sp.q_up, 0.4875, epsilon = 1e-15);
    }

    #[test]
    fn window_violation_names_minimal_steps() {
        let steep = CoefficientSet::from_fns(
            |x| if x > 150.0 { 0.0 } else { 0.05 * x },
            |_, _| 0.05,
            |_, _| 0.0,
            |x| if x > 150.0 { 1.0 } else { 0.05 },
            0.01,
            1.0,
        );
        let spec = LatticeSpec::new(4, 100.0, 1.0, steep).unwrap();
        // theta = 1/0.05 = 20 at S = 160: sqrt(1/4) * 20 = 10
        match spec.state_prices(160.0, 0.0) {
            Err(Error::PositivityWindow { min_steps, ratio, .. }) => {
                assert_eq!(min_steps, 401);
                assert_relative_eq!(ratio, 10.0, epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    /// `|pi_up S+ + pi_down S- - S|` at the root for the geometric example.
    fn stock_defect(n: usize) -> f64 {
        let spec = LatticeSpec::new(n, 100.0, 1.0, geometric(0.1, 0.2, 0.02, 0.05)).unwrap();
        let sp = spec.state_prices(100.0, 0.0).unwrap();
        let up = spec.step_stock(100.0, 0.0, 1.0).unwrap();
        let down = spec.step_stock(100.0, 0.0, -1.0).unwrap();
        (sp.pi_up * up + sp.pi_down * down - 100.0).abs()
    }

    #[test]
    fn stock_pricing_defect_is_second_order() {
        let pts: Vec<(f64, f64)> = [16usize, 32, 64, 128, 256, 512, 1024]
            .iter()
            .map(|&n| ((n as f64).ln(), stock_defect(n).ln()))
            .collect();
        let slope = crate::stats::ols_slope(&pts);
        assert!(slope <= -1.8, "slope {slope}");
        // 100 * C / n^2 with C of order one at n = 100
        let c = stock_defect(100) * 1e4 / 100.0;
        assert!(c > 0.0 && c < 1.0, "C = {c}");
    }

    #[test]
    fn deterministic_path_without_noise() {
        let spec = LatticeSpec::new(20, 100.0, 1.0, constant(0.0, 0.0, 0.05, 0.0)).unwrap();
        let a = simulate_path_seeded(&spec, Measure::Physical, 1, 0).unwrap();
        let b = simulate_path_seeded(&spec, Measure::RiskNeutral, 99, 5).unwrap();
        assert_eq!(a.stock, b.stock);
        let mut s = 100.0;
        for k in 0..=20 {
            assert_relative_eq!(a.stock[k], s, epsilon = 1e-12);
            s *= 1.0 + 0.05 / 20.0;
        }
    }

    #[test]
    fn path_starts_and_exports() {
        let spec = LatticeSpec::new(8, 100.0, 1.0, geometric(0.1, 0.2, 0.02, 0.05)).unwrap();
        let p = simulate_path_seeded(&spec, Measure::RiskNeutral, 3, 1).unwrap();
        assert_eq!((p.bond[0], p.density[0], p.hazard[0], p.discount[0]), (1.0, 1.0, 0.0, 1.0));
        assert_eq!(p.stock.len(), 9);
        let csv = p.to_table().to_csv().unwrap();
        assert!(csv.starts_with("k,t,eps,S,B,xi,Gamma,beta\n0,0,0,100,1,1,0,1\n"));
        assert_eq!(csv.lines().count(), 10);
        assert_eq!(p, simulate_path_seeded(&spec, Measure::RiskNeutral, 3, 1).unwrap());
    }

    #[test]
    fn path_errors_carry_step_index() {
        let spec = LatticeSpec::new(1, 100.0, 1.0, constant(0.0, 1.5, 0.0, 0.0)).unwrap();
        let mut saw_error = false;
        for i in 0..20 {
            match simulate_path_seeded(&spec, Measure::Physical, 0, i) {
                Err(Error::NonpositiveStock { step, .. }) => {
                    assert_eq!(step, Some(0));
                    saw_error = true;
                }
                Ok(p) => assert_eq!(p.eps[0], 1),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(saw_error);
        let absorbing = spec.with_policy(StockPolicy::Absorb);
        let absorbed = (0..20)
            .map(|i| simulate_path_seeded(&absorbing, Measure::Physical, 0, i).unwrap())
            .filter(|p| p.absorbed)
            .count();
        assert!(absorbed > 0);
    }

    #[test]
    fn coin_means_under_both_measures() {
        let spec = LatticeSpec::new(100, 100.0, 1.0, geometric(0.1, 0.2, 0.02, 0.05)).unwrap();
        let mut phys = MeanAcc::new();
        let mut rn = MeanAcc::new();
        for i in 0..10_000 {
            let p = simulate_path_seeded(&spec, Measure::Physical, 11, i).unwrap();
            p.eps.iter().for_each(|&e| phys.push(e as f64));
            let q = simulate_path_seeded(&spec, Measure::RiskNeutral, 11, i).unwrap();
            // theta is constant, so every step has the same coin
            q.eps.iter().for_each(|&e| rn.push(e as f64));
        }
        assert_eq!(phys.count, 1_000_000);
        assert!(phys.mean().abs() <= 3.0 * phys.std_error(), "{}", phys.mean());
        assert!((rn.mean() + 0.025).abs() <= 3.0 * rn.std_error(), "{}", rn.mean());
    }

    #[test]
    fn density_is_a_fair_coin_martingale() {
        let spec = LatticeSpec::new(50, 100.0, 1.0, geometric(0.1, 0.2, 0.02, 0.05)).unwrap();
        let acc: MeanAcc = (0..100_000)
            .map(|i| *simulate_path_seeded(&spec, Measure::Physical, 5, i).unwrap().density.last().unwrap())
            .collect();
        assert!((acc.mean() - 1.0).abs() <= 3.0 * acc.std_error(), "{} ± {}", acc.mean(), acc.std_error());
    }

    #[test]
    fn prefix_walk_matches_path() {
        let spec = LatticeSpec::new(6, 100.0, 1.0, geometric(0.1, 0.2, 0.02, 0.05)).unwrap();
        let p = simulate_path_seeded(&spec, Measure::RiskNeutral, 2, 2).unwrap();
        let (s, beta) = walk_prefix(&spec, &p.eps[..4]).unwrap();
        assert_eq!(s, p.stock[4]);
        assert_relative_eq!(beta, p.discount[4], epsilon = 1e-15);
        assert!(walk_prefix(&spec, &[1, 0]).is_err());
        assert!(walk_prefix(&spec, &[1; 7]).is_err());
    }

    #[test]
    fn grid_index_rounds_down_robustly() {
        assert_eq!(grid_index(0.75, 1.0, 100), 75);
        assert_eq!(grid_index(0.3, 1.0, 10), 3);
        assert_eq!(grid_index(1.0, 1.0, 1024), 1024);
        assert_eq!(grid_index(0.999, 1.0, 10), 9);
        assert_eq!(grid_index(2.0, 1.0, 10), 10);
    }

    fn random_cev() -> impl Strategy<Value = (CoefficientSet, usize, u64)> {
        (0.0f64..0.2, 0.1f64..0.5, 0.5f64..5.0, 0.0f64..0.1, 4usize..64, any::<u64>()).prop_map(
            |(mu, sigma, c, r, n, seed)| {
                let set = ParametricFamily::CevCappedIntensity { mu, sigma, c, p: 1.0, r }
                    .build(0.01, 1.0)
                    .unwrap();
                (set, n, seed)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn path_identities((coeffs, n, seed) in random_cev()) {
            let spec = LatticeSpec::new(n, 100.0, 1.0, coeffs).unwrap().with_policy(StockPolicy::Absorb);
            let p = simulate_path_seeded(&spec, Measure::RiskNeutral, seed, 0).unwrap();
            for k in 0..=n {
                let lhs = p.bond[k] * p.hazard[k].exp();
                prop_assert!((p.discount[k] - lhs).abs() / p.discount[k] <= 1e-10);
                if k > 0 {
                    prop_assert!(p.hazard[k] >= p.hazard[k - 1]);
                    prop_assert!(p.bond[k] >= p.bond[k - 1]);
                }
            }
            // xi_{k+1}/xi_k = 2 pi(eps) beta_{k+1}/beta_k
            for k in 0..n {
                let sp = spec.state_prices(p.stock[k], p.times[k]).unwrap();
                let pi = if p.eps[k] == 1 { sp.pi_up } else { sp.pi_down };
                let lhs = p.density[k + 1] / p.density[k];
                let rhs = 2.0 * pi * p.discount[k + 1] / p.discount[k];
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            }
        }
    }
}
