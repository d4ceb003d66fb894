//! Continuous-time reference prices.
//!
//! Under the risk-neutral measure the pre-default stock follows
//! `dS = S [(r + lambda) dt + sigma dW]` and the pre-default price solves
//!
//! ```text
//! Y_t + sigma^2 S^2 / 2 Y_SS + (r + lambda) S Y_S - (r + lambda) Y = 0,   Y(., T) = g
//! ```
//!
//! This module evaluates it in closed form (constant coefficients), by
//! Crank–Nicolson on a nonuniform grid, and by Euler Monte Carlo.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lattice::{Measure, StockPolicy, ABSORB_FLOOR};
use crate::model::CoefficientSet;
use crate::payoff::Payoff;
use crate::pricer_discrete::{reduce_paths, McConfig, Method, PriceResult};
use crate::rng::{stream_rng, PathRng, Stream};
use crate::table::Table;

/// Euler scheme needs at least this many steps when pricing.
pub const MIN_EULER_STEPS: usize = 50;

/// Lognormal value of the claim at `(s, t)` for constant `r`, `lambda` and
/// `sigma`; the hazard enters only through the discount rate `r + lambda`.
pub fn price_closed_form(
    coeffs: &CoefficientSet,
    payoff: &Payoff,
    s: f64,
    t: f64,
    horizon: f64,
) -> Result<PriceResult> {
    let c = coeffs.constant_rates().ok_or_else(|| {
        Error::Unsupported("closed form needs constant r, lambda and sigma".into())
    })?;
    if !(s > 0.0) {
        return Err(Error::invalid("s0", s, "spot must be positive"));
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
    }
    let rate = c.r + c.lambda;
    let tau = horizon - t;
    let disc = (-rate * tau).exp();
    let forward = s * (rate * tau).exp();
    let sd = c.sigma * tau.sqrt();
    let value = if sd == 0.0 {
        match payoff {
            Payoff::PiecewiseLinear(_) | Payoff::Call(_) | Payoff::Put(_) | Payoff::Digital(_) => {
                payoff.eval(forward) * disc
            }
            Payoff::Identity => s,
            Payoff::Constant(v) => v * disc,
        }
    } else {
        let n = Normal::standard();
        let d = |k: f64| {
            let d1 = ((s / k).ln() + (rate + 0.5 * c.sigma * c.sigma) * tau) / sd;
            (d1, d1 - sd)
        };
        match payoff {
            Payoff::Call(k) => {
                let (d1, d2) = d(*k);
                s * n.cdf(d1) - k * disc * n.cdf(d2)
            }
            Payoff::Put(k) => {
                let (d1, d2) = d(*k);
                k * disc * n.cdf(-d2) - s * n.cdf(-d1)
            }
            Payoff::Digital(k) => disc * n.cdf(d(*k).1),
            Payoff::Identity => s,
            Payoff::Constant(v) => v * disc,
            Payoff::PiecewiseLinear(_) => {
                return Err(Error::Unsupported(
                    "closed form covers call, put, digital, identity and constant payoffs".into(),
                ))
            }
        }
    };
    Ok(PriceResult::exact(value, Method::ClosedForm, None, t, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Uniform,
    Log,
}

impl Spacing {
    pub fn tag(self) -> &'static str {
        match self {
            Spacing::Uniform => "uniform",
            Spacing::Log => "log",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub s_min: f64,
    pub s_max: f64,
    /// Interior nodes; the grid has `m_space + 2` nodes in total.
    pub m_space: usize,
    pub m_time: usize,
    pub spacing: Spacing,
    /// Leading Crank–Nicolson steps each replaced by two implicit half-steps.
    pub rannacher: usize,
}

impl PdeGrid {
    /// Log-spaced grid over `s0 exp(+-6 sigma sqrt(T))`.
    pub fn around(s0: f64, sigma: f64, horizon: f64, m_space: usize, m_time: usize) -> Self {
        let width = 6.0 * sigma.abs().max(0.05) * horizon.sqrt();
        PdeGrid {
            s_min: s0 * (-width).exp(),
            s_max: s0 * width.exp(),
            m_space,
            m_time,
            spacing: Spacing::Log,
            rannacher: 1,
        }
    }

    pub fn validate(&self, s0: f64) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_min < s0 && s0 < self.s_max && self.s_max.is_finite()) {
            return Err(Error::invalid(
                "s_min",
                self.s_min,
                format!("need 0 < s_min < s0={s0} < s_max={}", self.s_max),
            ));
        }
        if self.m_space < 3 {
            return Err(Error::invalid("m_space", self.m_space as f64, "need at least 3 interior nodes"));
        }
        if self.m_time < 1 {
            return Err(Error::invalid("m_time", 0.0, "need at least one time step"));
        }
        Ok(())
    }

    /// All nodes, shifted so that `s0` is one of them.
    pub fn nodes(&self, s0: f64) -> Vec<f64> {
        let intervals = self.m_space + 1;
        type Map = fn(f64) -> f64;
        let (fwd, inv): (Map, Map) = match self.spacing {
            Spacing::Uniform => (|x| x, |x| x),
            Spacing::Log => (f64::ln, f64::exp),
        };
        let (lo, hi, x0) = (fwd(self.s_min), fwd(self.s_max), fwd(s0));
        let h = (hi - lo) / intervals as f64;
        let centre = (((x0 - lo) / h).round() as usize).clamp(1, intervals - 1);
        let start = x0 - centre as f64 * h;
        let mut nodes: Vec<f64> = (0..=intervals).map(|i| inv(start + i as f64 * h)).collect();
        nodes[centre] = s0;
        nodes
    }
}

/// Grid solution `Y(S_i, t_j)`.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// `values[j][i] = Y(s[i], t[j])`.
    pub values: Vec<Vec<f64>>,
    coeffs: CoefficientSet,
}

impl PdeSolution {
    /// Linear interpolation in `S` at time index `j`; flat outside the grid.
    pub fn value_at(&self, s: f64, j: usize) -> f64 {
        let row = &self.values[j];
        let i = self.s.partition_point(|&x| x <= s);
        if i == 0 {
            return row[0];
        }
        if i == self.s.len() {
            return row[row.len() - 1];
        }
        let w = (s - self.s[i - 1]) / (self.s[i] - self.s[i - 1]);
        row[i - 1] + w * (row[i] - row[i - 1])
    }

    pub fn price(&self, s0: f64) -> PriceResult {
        PriceResult::exact(self.value_at(s0, 0), Method::Pde, None, 0.0, s0)
    }

    /// Largest residual of the PDE under centred differences, over interior
    /// nodes in `[s_lo, s_hi]` and interior times not after `t_max`.
    pub fn max_residual(&self, s_lo: f64, s_hi: f64, t_max: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 1..self.t.len() - 1 {
            if self.t[j] > t_max {
                break;
            }
            let dt2 = self.t[j + 1] - self.t[j - 1];
            let op = operator(&self.coeffs, &self.s, self.t[j]);
            let y = &self.values[j];
            for i in 1..self.s.len() - 1 {
                if self.s[i] < s_lo || self.s[i] > s_hi {
                    continue;
                }
                let y_t = (self.values[j + 1][i] - self.values[j - 1][i]) / dt2;
                let ly = op.sub[i] * y[i - 1] + op.diag[i] * y[i] + op.sup[i] * y[i + 1];
                worst = worst.max((y_t + ly).abs());
            }
        }
        worst
    }

    /// Columns `S, t, Y`, time-major.
    pub fn to_table(&self) -> Table {
        let mut out = Table::new(["S", "t", "Y"]);
        for (j, row) in self.values.iter().enumerate() {
            for (i, &y) in row.iter().enumerate() {
                out.push(vec![self.s[i].into(), self.t[j].into(), y.into()]);
            }
        }
        out
    }
}

/// Rows of the spatial operator `L` with `Y_t + L Y = 0`. Row 0 is unused
/// (Dirichlet); the last row is the zero-diffusion one-sided boundary.
struct Operator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

fn operator(coeffs: &CoefficientSet, s: &[f64], t: f64) -> Operator {
    let m = s.len();
    let mut op = Operator {
        sub: vec![0.0; m],
        diag: vec![0.0; m],
        sup: vec![0.0; m],
    };
    for i in 1..m - 1 {
        let (hm, hp) = (s[i] - s[i - 1], s[i + 1] - s[i]);
        let sig = coeffs.vol(s[i], t);
        let rate = coeffs.rate(s[i]) + coeffs.intensity(s[i], t);
        let diff = 0.5 * sig * sig * s[i] * s[i];
        let conv = rate * s[i];
        op.sub[i] = diff * 2.0 / (hm * (hm + hp)) - conv * hp / (hm * (hm + hp));
        op.diag[i] = -diff * 2.0 / (hm * hp) + conv * (hp - hm) / (hm * hp) - rate;
        op.sup[i] = diff * 2.0 / (hp * (hm + hp)) + conv * hm / (hp * (hm + hp));
    }
    let top = m - 1;
    let rate = coeffs.rate(s[top]) + coeffs.intensity(s[top], t);
    let h = s[top] - s[top - 1];
    op.sub[top] = -rate * s[top] / h;
    op.diag[top] = rate * s[top] / h - rate;
    op
}

/// Zero-diffusion value at the lower edge: the payoff at the drifted spot,
/// discounted at the local rate.
fn lower_boundary(coeffs: &CoefficientSet, payoff: &Payoff, s: f64, t: f64, horizon: f64) -> f64 {
    let rate = coeffs.rate(s) + coeffs.intensity(s, t);
    let tau = horizon - t;
    payoff.eval(s * (rate * tau).exp()) * (-rate * tau).exp()
}

/// One backward step from `y` (at `t_from`) to `t_to`, weighting the new
/// time's operator by `implicit` and the old one's by `1 - implicit`.
#[allow(clippy::too_many_arguments)]
fn theta_step(
    coeffs: &CoefficientSet,
    payoff: &Payoff,
    s: &[f64],
    y: &[f64],
    t_from: f64,
    t_to: f64,
    implicit: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    let m = s.len();
    let h = t_from - t_to;
    let mut rhs = y.to_vec();
    if implicit < 1.0 {
        let old = operator(coeffs, s, t_from);
        let w = (1.0 - implicit) * h;
        for i in 1..m {
            let next = if i + 1 < m { old.sup[i] * y[i + 1] } else { 0.0 };
            rhs[i] = y[i] + w * (old.sub[i] * y[i - 1] + old.diag[i] * y[i] + next);
        }
    }
    let new = operator(coeffs, s, t_to);
    let w = implicit * h;
    let mut sub = vec![0.0; m];
    let mut diag = vec![1.0; m];
    let mut sup = vec![0.0; m];
    for i in 1..m {
        sub[i] = -w * new.sub[i];
        diag[i] = 1.0 - w * new.diag[i];
        sup[i] = -w * new.sup[i];
    }
    rhs[0] = lower_boundary(coeffs, payoff, s[0], t_to, horizon);
    solve_tridiagonal(&sub, &diag, &sup, &rhs).map_err(|i| {
        Error::Numerical(format!(
            "tridiagonal solve failed at row {i} (S={}) stepping to t={t_to}",
            s[i]
        ))
    })
}

/// Thomas algorithm; `Err(row)` on a vanishing pivot.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut pivot = diag[0];
    if pivot.abs() < 1e-300 {
        return Err(0);
    }
    c[0] = sup[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..m {
        pivot = diag[i] - sub[i] * c[i - 1];
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return Err(i);
        }
        c[i] = sup[i] / pivot;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..m - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Solves the pricing PDE backwards from `Y(., T) = g` on `grid`.
pub fn solve_pde(
    coeffs: &CoefficientSet,
    payoff: &Payoff,
    s0: f64,
    grid: &PdeGrid,
    horizon: f64,
) -> Result<PdeSolution> {
    grid.validate(s0)?;
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon", horizon, "horizon must be positive"));
    }
    let s = grid.nodes(s0);
    let n = grid.m_time;
    let dt = horizon / n as f64;
    let t: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
    let mut values = vec![Vec::new(); n + 1];
    values[n] = s.iter().map(|&x| payoff.eval(x)).collect();
    for j in (0..n).rev() {
        let y = &values[j + 1];
        let next = if n - 1 - j < grid.rannacher {
            let mid = t[j] + 0.5 * dt;
            let half = theta_step(coeffs, payoff, &s, y, t[j + 1], mid, 1.0, horizon)?;
            theta_step(coeffs, payoff, &s, &half, mid, t[j], 1.0, horizon)?
        } else {
            theta_step(coeffs, payoff, &s, y, t[j + 1], t[j], 0.5, horizon)?
        };
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite PDE value at S={} t={}", s[i], t[j])));
        }
        values[j] = next;
    }
    Ok(PdeSolution {
        s,
        t,
        values,
        coeffs: coeffs.clone(),
    })
}

/// PDE price at `(s0, 0)`.
pub fn price_pde(coeffs: &CoefficientSet, payoff: &Payoff, s0: f64, grid: &PdeGrid, horizon: f64) -> Result<PriceResult> {
    Ok(solve_pde(coeffs, payoff, s0, grid, horizon)?.price(s0))
}

/// Euler discretisation of the continuous market.
#[derive(Debug, Clone)]
pub struct EulerSpec {
    pub coeffs: CoefficientSet,
    pub s0: f64,
    pub horizon: f64,
    pub steps: usize,
    pub policy: StockPolicy,
}

impl EulerSpec {
    pub fn new(coeffs: CoefficientSet, s0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", 0.0, "need at least one step"));
        }
        if !(s0 > 0.0) || !s0.is_finite() {
            return Err(Error::invalid("s0", s0, "spot must be positive"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid("horizon", horizon, "horizon must be positive"));
        }
        Ok(EulerSpec {
            coeffs,
            s0,
            horizon,
            steps,
            policy: StockPolicy::default(),
        })
    }

    pub fn with_policy(mut self, policy: StockPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// One Euler trajectory with its running integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPath {
    pub times: Vec<f64>,
    pub stock: Vec<f64>,
    /// `int_0^t (r + lambda) du`.
    pub rate_integral: Vec<f64>,
    /// `Gamma_t = int_0^t lambda du`.
    pub hazard: Vec<f64>,
    /// `exp(int_0^t r du)`.
    pub bond: Vec<f64>,
    /// Density of the risk-neutral measure against the physical one.
    pub density: Vec<f64>,
    pub absorbed: bool,
}

impl ContinuousPath {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["k", "t", "S", "B", "xi", "Gamma", "rate_integral"]);
        for k in 0..self.times.len() {
            t.push(vec![
                k.into(),
                self.times[k].into(),
                self.stock[k].into(),
                self.bond[k].into(),
                self.density[k].into(),
                self.hazard[k].into(),
                self.rate_integral[k].into(),
            ]);
        }
        t
    }
}

/// Euler path under `measure`; `xi` is advanced exactly in log form over
/// each step with `theta` frozen at its start.
pub fn simulate_continuous_path<R: Rng + ?Sized>(
    spec: &EulerSpec,
    measure: Measure,
    rng: &mut R,
) -> Result<ContinuousPath> {
    let n = spec.steps;
    let dt = spec.dt();
    let sq = dt.sqrt();
    let c = &spec.coeffs;
    let mut path = ContinuousPath {
        times: Vec::with_capacity(n + 1),
        stock: Vec::with_capacity(n + 1),
        rate_integral: Vec::with_capacity(n + 1),
        hazard: Vec::with_capacity(n + 1),
        bond: Vec::with_capacity(n + 1),
        density: Vec::with_capacity(n + 1),
        absorbed: false,
    };
    let (mut s, mut integral, mut gamma, mut log_bond, mut log_xi) = (spec.s0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..=n {
        let t = k as f64 * dt;
        path.times.push(t);
        path.stock.push(s);
        path.rate_integral.push(integral);
        path.hazard.push(gamma);
        path.bond.push(f64::exp(log_bond));
        path.density.push(f64::exp(log_xi));
        if k == n {
            break;
        }
        let z: f64 = rng.sample(StandardNormal);
        let dw = sq * z;
        let (lam, r, sig) = (c.intensity(s, t), c.rate(s), c.vol(s, t));
        let theta = c.theta(s, t)?;
        // physical increment of the driving noise
        let d_omega = match measure {
            Measure::Physical => dw,
            Measure::RiskNeutral => dw + theta * dt,
        };
        let next = if path.absorbed {
            s
        } else {
            let drift = match measure {
                Measure::Physical => c.drift(s) + lam * s,
                Measure::RiskNeutral => (r + lam) * s,
            };
            let v = s + drift * dt + sig * s * dw;
            if v > 0.0 {
                v
            } else {
                match spec.policy {
                    StockPolicy::Reject => {
                        return Err(Error::NonpositiveStock { step: Some(k), s, t, eps: z })
                    }
                    StockPolicy::Absorb => {
                        path.absorbed = true;
                        ABSORB_FLOOR * spec.s0
                    }
                }
            }
        };
        let t1 = t + dt;
        let (lam1, r1) = (c.intensity(next, t1), c.rate(next));
        gamma += 0.5 * (lam + lam1) * dt;
        log_bond += 0.5 * (r + r1) * dt;
        integral += 0.5 * (r + lam + r1 + lam1) * dt;
        log_xi += theta * d_omega - 0.5 * theta * theta * dt;
        s = next;
    }
    Ok(path)
}

/// [`simulate_continuous_path`] on the Brownian stream of `seed`.
pub fn simulate_continuous_path_seeded(
    spec: &EulerSpec,
    measure: Measure,
    seed: u64,
    index: u64,
) -> Result<ContinuousPath> {
    simulate_continuous_path(spec, measure, &mut stream_rng(seed, Stream::Brownian, index))
}

/// Euler Monte Carlo estimate of `E[exp(-int (r + lambda)) g(S_T)]` under
/// the risk-neutral measure. Paths hitting a nonpositive stock are dropped
/// under [`StockPolicy::Reject`].
pub fn price_mc_continuous(spec: &EulerSpec, payoff: &Payoff, cfg: &McConfig) -> Result<PriceResult> {
    cfg.check()?;
    if spec.steps < MIN_EULER_STEPS {
        return Err(Error::invalid(
            "steps",
            spec.steps as f64,
            format!("Euler pricing needs at least {MIN_EULER_STEPS} steps"),
        ));
    }
    let constant = spec.coeffs.constant_rates();
    let (acc, rejected) = reduce_paths(cfg, Stream::Brownian, |rng| {
        Ok(match constant {
            Some(c) => euler_constant(spec, payoff, c.r + c.lambda, c.sigma, rng),
            None => euler_general(spec, payoff, rng),
        })
    })?;
    Ok(PriceResult::from_acc(&acc, rejected, Method::EulerMc, None, 0.0, spec.s0))
}

fn euler_constant(spec: &EulerSpec, payoff: &Payoff, rate: f64, sigma: f64, rng: &mut PathRng) -> Option<f64> {
    let dt = spec.dt();
    let (a, b) = (1.0 + rate * dt, sigma * dt.sqrt());
    let mut s = spec.s0;
    for _ in 0..spec.steps {
        let z: f64 = rng.sample(StandardNormal);
        s *= a + b * z;
        if !(s > 0.0) {
            match spec.policy {
                StockPolicy::Reject => return None,
                StockPolicy::Absorb => {
                    s = ABSORB_FLOOR * spec.s0;
                    break;
                }
            }
        }
    }
    Some(payoff.eval(s) * (-rate * spec.horizon).exp())
}

fn euler_general(spec: &EulerSpec, payoff: &Payoff, rng: &mut PathRng) -> Option<f64> {
    let c = &spec.coeffs;
    let dt = spec.dt();
    let sq = dt.sqrt();
    let mut s = spec.s0;
    let mut k_prev = c.rate(s) + c.intensity(s, 0.0);
    let mut integral = 0.0;
    for k in 0..spec.steps {
        let t = k as f64 * dt;
        let z: f64 = rng.sample(StandardNormal);
        let next = s + k_prev * s * dt + c.vol(s, t) * s * sq * z;
        s = if next > 0.0 {
            next
        } else {
            match spec.policy {
                StockPolicy::Reject => return None,
                StockPolicy::Absorb => ABSORB_FLOOR * spec.s0,
            }
        };
        let k_next = c.rate(s) + c.intensity(s, t + dt);
        integral += 0.5 * (k_prev + k_next) * dt;
        k_prev = k_next;
    }
    Some(payoff.eval(s) * (-integral).exp())
}
