//! Empirical convergence of the lattice to its continuous limit: prices,
//! finite-dimensional distributions, and moment bounds.

use rand::Rng;

use crate::default_sim::draw_threshold;
use crate::error::{Error, Result};
use crate::lattice::{simulate_path, LatticeSpec, Measure};
use crate::model::CoefficientSet;
use crate::payoff::Payoff;
use crate::pricer_continuous::{price_closed_form, price_pde, simulate_continuous_path, EulerSpec, PdeGrid};
use crate::pricer_discrete::{price_mc, price_recombining, price_tree, McConfig, Method, PriceResult};
use crate::rng::{map_chunks, reduce_columns, stream_rng, Stream, DEFAULT_CHUNK};
use crate::stats::{cf_distance, ks_critical_value, ks_statistic, weighted_line_fit, MeanAcc};
use crate::table::{Cell, Table};

pub const MIN_FDD_SAMPLES: usize = 10_000;
pub const MIN_MOMENT_SAMPLES: usize = 100_000;
/// Points with a relative error below this are weighted as if they had it.
const REL_SE_FLOOR: f64 = 1e-3;
/// Errors of exact methods below this fraction of the reference value are
/// rounding, not discretisation.
const ROUNDING_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn tag(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
    /// Points that cleared the noise floor.
    pub used: usize,
}

/// Weighted least-squares fit of `ln error` on `ln n` over the points with
/// `error > 3 se`, weighting by the inverse relative-error variance.
/// `None` (inconclusive) with fewer than three such points.
pub fn rate_fit(points: &[(usize, f64, f64)]) -> Option<RateFit> {
    let usable: Vec<_> = points
        .iter()
        .filter(|&&(_, e, se)| e > 3.0 * se && e > 0.0)
        .collect();
    if usable.len() < 3 {
        return None;
    }
    let xy: Vec<(f64, f64)> = usable.iter().map(|&&(n, e, _)| ((n as f64).ln(), e.ln())).collect();
    let w: Vec<f64> = usable
        .iter()
        .map(|&&(_, e, se)| 1.0 / (se / e).max(REL_SE_FLOOR).powi(2))
        .collect();
    let fit = weighted_line_fit(&xy, &w);
    Some(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        slope_se: fit.slope_se,
        used: usable.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    ClosedForm,
    Pde(PdeGrid),
}

impl Reference {
    pub fn tag(&self) -> &'static str {
        match self {
            Reference::ClosedForm => "closed-form",
            Reference::Pde(_) => "pde",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub s0: f64,
    pub horizon: f64,
    pub n_values: Vec<usize>,
    pub reference: Reference,
    /// Monte Carlo settings for steps that no exact method covers. The seed
    /// is shared across `n`, so errors are compared on common paths.
    pub mc: McConfig,
    pub tree_cap: usize,
    pub slope_threshold: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRow {
    pub n: usize,
    pub price: f64,
    pub error: f64,
    pub se: f64,
    pub method: Method,
}

/// `C / sqrt(n)` bound with `C` set by the coarsest step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub constant: f64,
    /// Step counts whose error exceeds the envelope by more than 3 SE.
    pub breaches: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub reference: PriceResult,
    pub rows: Vec<PriceRow>,
    pub fit: Option<RateFit>,
    pub envelope: Envelope,
    pub terminal_error: f64,
    pub verdict: Verdict,
}

impl ConvergenceReport {
    pub fn report_table(&self) -> Table {
        let mut t = Table::new(["n", "price", "error", "se"]);
        for r in &self.rows {
            t.push(vec![r.n.into(), r.price.into(), r.error.into(), r.se.into()]);
        }
        t
    }

    /// One row; the fit columns are empty when inconclusive.
    pub fn rates_table(&self) -> Table {
        let mut t = Table::new(["slope", "intercept", "r2", "verdict"]);
        let verdict = self.verdict.tag().into();
        match self.fit {
            Some(f) => t.push(vec![f.slope.into(), f.intercept.into(), f.r2.into(), verdict]),
            None => t.push(vec!["".into(), "".into(), "".into(), verdict]),
        }
        t
    }
}

fn check_increasing(n_values: &[usize]) -> Result<()> {
    if n_values.is_empty() || n_values[0] == 0 || n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "n_values",
            n_values.first().copied().unwrap_or(0) as f64,
            "need a strictly increasing list of positive step counts",
        ));
    }
    Ok(())
}

/// Prices `payoff` at every `n` and measures the error against the
/// continuous reference.
///
/// Each `n` uses the recombining lattice when the coefficients allow it,
/// the full tree up to `tree_cap`, and Monte Carlo beyond. The verdict
/// passes when the fitted slope is at most `slope_threshold`, every error
/// sits under the envelope and the error at the largest `n` is within
/// `tolerance`; it is inconclusive when fewer than three errors clear
/// their noise.
pub fn price_convergence_study(coeffs: &CoefficientSet, payoff: &Payoff, cfg: &StudyConfig) -> Result<ConvergenceReport> {
    check_increasing(&cfg.n_values)?;
    let reference = match &cfg.reference {
        Reference::ClosedForm => price_closed_form(coeffs, payoff, cfg.s0, 0.0, cfg.horizon),
        Reference::Pde(grid) => price_pde(coeffs, payoff, cfg.s0, grid, cfg.horizon),
    }
    .map_err(|e| Error::ReferenceUnavailable(format!("{} reference: {e}", cfg.reference.tag())))?;
    let rows = cfg
        .n_values
        .iter()
        .map(|&n| {
            let spec = LatticeSpec::new(n, cfg.s0, cfg.horizon, coeffs.clone())?;
            let p = match price_recombining(&spec, payoff) {
                Ok(p) => p,
                Err(Error::Unsupported(_)) if n <= cfg.tree_cap => price_tree(&spec, payoff, 0, &[], cfg.tree_cap)?,
                Err(Error::Unsupported(_)) => price_mc(&spec, payoff, &cfg.mc)?,
                Err(e) => return Err(e),
            };
            Ok(PriceRow {
                n,
                price: p.value,
                error: (p.value - reference.value).abs(),
                se: p.std_error,
                method: p.method,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let floor = ROUNDING_FLOOR * reference.value.abs().max(1.0);
    let points: Vec<_> = rows.iter().map(|r| (r.n, r.error, r.se.max(floor / 3.0))).collect();
    let fit = rate_fit(&points);
    let first = &rows[0];
    let constant = (first.error + 3.0 * first.se) * (first.n as f64).sqrt();
    let breaches = rows[1..]
        .iter()
        .filter(|r| r.error - 3.0 * r.se >= constant / (r.n as f64).sqrt())
        .map(|r| r.n)
        .collect();
    let envelope = Envelope { constant, breaches };
    let last = rows.last().expect("nonempty");
    let terminal_error = last.error;
    let verdict = match fit {
        None => Verdict::Inconclusive,
        Some(f) => Verdict::from_bool(
            f.slope <= cfg.slope_threshold && envelope.breaches.is_empty() && terminal_error <= cfg.tolerance,
        ),
    };
    Ok(ConvergenceReport {
        reference,
        rows,
        fit,
        envelope,
        terminal_error,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FddConfig {
    pub s0: f64,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    pub n_values: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    /// Euler steps of the continuous reference.
    pub reference_steps: usize,
    /// Level of the KS critical value.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FddRow {
    /// `S`, `xi`, `Gamma`, `B` or `survival`.
    pub quantity: &'static str,
    pub t: f64,
    pub n: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Characteristic-function distance, for the distributional rows.
    pub cf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FddReport {
    pub rows: Vec<FddRow>,
}

impl FddReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["quantity", "t", "n", "statistic", "threshold", "pass"]);
        for r in &self.rows {
            t.push(vec![r.quantity.into(), r.t.into(), r.n.into(), r.statistic.into(), r.threshold.into(), r.pass.into()]);
        }
        t
    }

    pub fn row(&self, quantity: &str, t: f64, n: usize) -> Option<&FddRow> {
        self.rows
            .iter()
            .find(|r| r.quantity == quantity && r.n == n && (r.t - t).abs() < 1e-12)
    }

    /// Passes when the KS distances of `S` and `xi` at the last checkpoint
    /// are nonincreasing in `n` and below the critical value at the largest
    /// `n`, and every mean-type row at the largest `n` passes.
    ///
    /// KS rows at earlier checkpoints are reported but do not gate: with
    /// only `n t` steps the lattice atoms keep the distance above the
    /// critical value there.
    pub fn verdict(&self) -> Verdict {
        let Some(top) = self.rows.iter().map(|r| r.n).max() else {
            return Verdict::Inconclusive;
        };
        let last = self.rows.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
        let is_ks = |r: &FddRow| r.quantity == "S" || r.quantity == "xi";
        let means_ok = self.rows.iter().filter(|r| r.n == top && !is_ks(r)).all(|r| r.pass);
        let ks_ok = ["S", "xi"].iter().all(|&q| {
            let mut series: Vec<&FddRow> =
                self.rows.iter().filter(|r| r.quantity == q && (r.t - last).abs() < 1e-12).collect();
            series.sort_by_key(|r| r.n);
            series.windows(2).all(|w| w[1].statistic <= w[0].statistic)
                && series.last().is_none_or(|r| r.pass)
        });
        Verdict::from_bool(means_ok && ks_ok)
    }
}

const QUANTITIES: usize = 5;

/// Per-sample values `[S, xi, Gamma, B, alive]` at each checkpoint.
type Snapshot = Vec<[f64; QUANTITIES]>;

fn snapshot_discrete(spec: &LatticeSpec, checkpoints: &[f64], seed: u64, i: u64) -> Result<Snapshot> {
    let path = simulate_path(spec, Measure::Physical, &mut stream_rng(seed, Stream::Lattice, i))?;
    let theta = draw_threshold(seed, i);
    Ok(checkpoints
        .iter()
        .map(|&t| {
            let k = spec.grid_index(t);
            let g = path.hazard[k];
            [path.stock[k], path.density[k], g, path.bond[k], alive(g, theta)]
        })
        .collect())
}

fn snapshot_continuous(spec: &EulerSpec, checkpoints: &[f64], seed: u64, i: u64) -> Result<Snapshot> {
    let path = simulate_continuous_path(spec, Measure::Physical, &mut stream_rng(seed, Stream::Brownian, i))?;
    let theta = draw_threshold(seed, i);
    let dt = spec.dt();
    Ok(checkpoints
        .iter()
        .map(|&t| {
            let k = ((t / dt).round() as usize).min(spec.steps);
            let g = path.hazard[k];
            [path.stock[k], path.density[k], g, path.bond[k], alive(g, theta)]
        })
        .collect())
}

fn alive(gamma: f64, theta: f64) -> f64 {
    if gamma < theta {
        1.0
    } else {
        0.0
    }
}

fn collect_snapshots<F>(samples: usize, f: F) -> Result<Vec<Snapshot>>
where
    F: Fn(u64) -> Result<Snapshot> + Sync + Send,
{
    let parts = map_chunks(samples, DEFAULT_CHUNK, |range| range.map(|i| f(i as u64)).collect::<Result<Vec<_>>>());
    let mut out = Vec::with_capacity(samples);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn column(snaps: &[Snapshot], j: usize, q: usize) -> Vec<f64> {
    snaps.iter().map(|s| s[j][q]).collect()
}

/// KS statistic, or `|a - b|` when both samples are point masses.
fn distribution_distance(a: &[f64], b: &[f64]) -> f64 {
    let point = |x: &[f64]| x.iter().all(|&v| v == x[0]);
    if point(a) && point(b) {
        (a[0] - b[0]).abs()
    } else {
        ks_statistic(a, b)
    }
}

fn std_dev(x: &[f64]) -> f64 {
    x.iter().copied().collect::<MeanAcc>().variance().sqrt()
}

/// Compares the lattice state `(S, xi, Gamma, B)` and the survival indicator
/// at each checkpoint with a fine Euler reference, both under the physical
/// measure and on independent market noise.
///
/// `S` and `xi` are compared in law by the two-sample KS statistic against
/// the `alpha` critical value. `Gamma` and `B` are compared in mean, with a
/// band of 3 combined SE plus a first-order `|mean| / n` discretisation
/// allowance; survival uses 3 combined SE with thresholds shared across
/// resolutions.
pub fn fdd_distance(coeffs: &CoefficientSet, cfg: &FddConfig) -> Result<FddReport> {
    check_increasing(&cfg.n_values)?;
    if cfg.samples < MIN_FDD_SAMPLES {
        return Err(Error::invalid("samples", cfg.samples as f64, format!("need at least {MIN_FDD_SAMPLES} samples")));
    }
    let euler = EulerSpec::new(coeffs.clone(), cfg.s0, cfg.horizon, cfg.reference_steps)?;
    let reference = collect_snapshots(cfg.samples, |i| snapshot_continuous(&euler, &cfg.checkpoints, cfg.seed, i))?;
    let crit = ks_critical_value(cfg.alpha, cfg.samples, cfg.samples);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let spec = LatticeSpec::new(n, cfg.s0, cfg.horizon, coeffs.clone())?;
        let lattice = collect_snapshots(cfg.samples, |i| snapshot_discrete(&spec, &cfg.checkpoints, cfg.seed, i))?;
        for (j, &t) in cfg.checkpoints.iter().enumerate() {
            for (q, name) in [(0, "S"), (1, "xi")] {
                let (a, b) = (column(&lattice, j, q), column(&reference, j, q));
                let statistic = distribution_distance(&a, &b);
                rows.push(FddRow {
                    quantity: name,
                    t,
                    n,
                    statistic,
                    threshold: crit,
                    pass: statistic < crit,
                    cf: Some(cf_distance(&a, &b, std_dev(&b))),
                });
            }
            for (q, name, drift_band) in [(2, "Gamma", true), (3, "B", true), (4, "survival", false)] {
                let a: MeanAcc = column(&lattice, j, q).into_iter().collect();
                let b: MeanAcc = column(&reference, j, q).into_iter().collect();
                let statistic = (a.mean() - b.mean()).abs();
                let mut threshold = 3.0 * a.std_error().hypot(b.std_error());
                if drift_band {
                    threshold += b.mean().abs() / n as f64;
                }
                rows.push(FddRow {
                    quantity: name,
                    t,
                    n,
                    statistic,
                    threshold,
                    pass: statistic <= threshold,
                    cf: None,
                });
            }
        }
    }
    Ok(FddReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub n: usize,
    pub m: u32,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentTrend {
    pub m: u32,
    /// Regression slope of the normalised moment on `ln n`.
    pub slope: f64,
    pub slope_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub trends: Vec<MomentTrend>,
    pub ceiling: f64,
    pub verdict: Verdict,
}

impl MomentReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["n", "m", "value", "se"]);
        for r in &self.rows {
            t.push(vec![r.n.into(), Cell::Int(r.m as i64), r.value.into(), r.se.into()]);
        }
        t
    }

    pub fn value(&self, n: usize, m: u32) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.n == n && r.m == m)
    }
}

/// Terminal stock under the risk-neutral coin; `None` when rejected.
fn terminal_stock(spec: &LatticeSpec, rng: &mut crate::rng::PathRng) -> Result<Option<f64>> {
    if let Some(m) = spec.coeffs.multiplicative() {
        let dt = spec.dt();
        let drift = 1.0 + (m.mu + m.rates.lambda) * dt;
        let shock = m.rates.sigma * spec.sqrt_dt();
        if drift - shock > 0.0 {
            let q = spec.state_prices(spec.s0, 0.0)?.q_up;
            let ups = (0..spec.steps).filter(|_| rng.random::<f64>() < q).count();
            let downs = spec.steps - ups;
            return Ok(Some(spec.s0 * (drift + shock).powi(ups as i32) * (drift - shock).powi(downs as i32)));
        }
    }
    let mut s = spec.s0;
    for k in 0..spec.steps {
        let t = spec.time(k);
        let q = 0.5 * (1.0 + spec.tilt(s, t)?);
        let eps = if rng.random::<f64>() < q { 1.0 } else { -1.0 };
        s = match spec.advance_stock(s, t, eps) {
            Ok((v, _)) => v,
            Err(Error::NonpositiveStock { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
    }
    Ok(Some(s))
}

/// Normalised moments `E_Q[S_T^{2m}] / (1 + S0^{2m})` for each `n` and `m`.
///
/// Each `n` draws from its own stream, so the trend regression sees
/// independent estimates. A trend passes when its slope on `ln n` is at
/// most 2 SE above zero; the verdict also requires every value to stay
/// below `ceiling`.
#[allow(clippy::too_many_arguments)]
pub fn moment_bound_check(
    coeffs: &CoefficientSet,
    s0: f64,
    horizon: f64,
    n_values: &[usize],
    m_values: &[u32],
    samples: usize,
    seed: u64,
    ceiling: f64,
) -> Result<MomentReport> {
    check_increasing(n_values)?;
    if m_values.is_empty() || m_values.iter().any(|m| !(1..=2).contains(m)) {
        return Err(Error::invalid("m_values", 0.0, "moment orders must be 1 or 2"));
    }
    if samples < MIN_MOMENT_SAMPLES {
        return Err(Error::invalid("samples", samples as f64, format!("need at least {MIN_MOMENT_SAMPLES} samples")));
    }
    let mut rows = Vec::new();
    for &n in n_values {
        let spec = LatticeSpec::new(n, s0, horizon, coeffs.clone())?;
        let (accs, rejected) = reduce_columns(samples, DEFAULT_CHUNK, m_values.len(), |i| {
            let mut rng = stream_rng(seed, Stream::Custom(n as u64), i);
            Ok(terminal_stock(&spec, &mut rng)?.map(|s| {
                m_values
                    .iter()
                    .map(|&m| s.powi(2 * m as i32) / (1.0 + s0.powi(2 * m as i32)))
                    .collect()
            }))
        })?;
        if rejected == samples {
            return Err(Error::AllPathsRejected(rejected));
        }
        for (acc, &m) in accs.iter().zip(m_values) {
            rows.push(MomentRow {
                n,
                m,
                value: acc.mean(),
                se: acc.std_error(),
            });
        }
    }
    let trends: Vec<MomentTrend> = m_values
        .iter()
        .map(|&m| {
            let series: Vec<&MomentRow> = rows.iter().filter(|r| r.m == m).collect();
            let (slope, slope_se) = trend(&series);
            let scale = series.iter().map(|r| r.value.abs()).fold(0.0, f64::max);
            MomentTrend {
                m,
                slope,
                slope_se,
                pass: slope <= 2.0 * slope_se + ROUNDING_FLOOR * scale,
            }
        })
        .collect();
    let below = rows.iter().all(|r| r.value <= ceiling);
    let verdict = Verdict::from_bool(below && trends.iter().all(|t| t.pass));
    Ok(MomentReport {
        rows,
        trends,
        ceiling,
        verdict,
    })
}

/// OLS slope of value on `ln n` and its SE propagated from the per-point SEs.
fn trend(series: &[&MomentRow]) -> (f64, f64) {
    if series.len() < 2 {
        return (0.0, 0.0);
    }
    let xs: Vec<f64> = series.iter().map(|r| (r.n as f64).ln()).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let (mut slope, mut var) = (0.0, 0.0);
    for (x, r) in xs.iter().zip(series) {
        let w = (x - mean) / sxx;
        slope += w * r.value;
        var += w * w * r.se * r.se;
    }
    (slope, var.sqrt())
}
