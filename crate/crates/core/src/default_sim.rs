//! Default times from the canonical Cox construction.
//!
//! A unit-exponential threshold `Theta`, drawn independently of the market
//! noise, is compared with the accumulated hazard: default happens the first
//! time `Gamma` reaches `Theta`. On the lattice only grid times are eligible;
//! in continuous time the crossing is located inside the Euler step.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::lattice::{simulate_path, DiscretePath, LatticeSpec, Measure};
use crate::pricer_continuous::{ContinuousPath, EulerSpec};
use crate::rng::{reduce_columns, stream_rng, Stream, DEFAULT_CHUNK};
use crate::stats::MeanAcc;
use crate::table::Table;

pub const MIN_SURVIVAL_SAMPLES: usize = 1000;
pub const MIN_MARTINGALE_SAMPLES: usize = 10_000;

/// Relative slack when comparing the accumulated hazard with the threshold,
/// so that sums like `75 * 0.0002` still reach `0.015`.
const CROSSING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Discrete(usize),
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultSample {
    pub theta_exp: f64,
    /// `None` when the threshold is not reached by the horizon.
    pub tau: Option<f64>,
    pub resolution: Resolution,
}

impl DefaultSample {
    pub fn survived_at(&self, t: f64) -> bool {
        self.tau.is_none_or(|tau| tau > t)
    }
}

/// A simulated trajectory carrying its accumulated hazard.
pub trait HazardPath {
    fn times(&self) -> &[f64];
    fn hazard(&self) -> &[f64];
    fn stock(&self) -> &[f64];
    fn resolution(&self) -> Resolution;
}

impl HazardPath for DiscretePath {
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn hazard(&self) -> &[f64] {
        &self.hazard
    }
    fn stock(&self) -> &[f64] {
        &self.stock
    }
    fn resolution(&self) -> Resolution {
        Resolution::Discrete(self.steps())
    }
}

impl HazardPath for ContinuousPath {
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn hazard(&self) -> &[f64] {
        &self.hazard
    }
    fn stock(&self) -> &[f64] {
        &self.stock
    }
    fn resolution(&self) -> Resolution {
        Resolution::Continuous
    }
}

/// Threshold of sample `index`, from its own stream under `seed`.
pub fn draw_threshold(seed: u64, index: u64) -> f64 {
    stream_rng(seed, Stream::Threshold, index).sample(Exp1)
}

#[inline]
fn reaches(gamma: f64, theta: f64) -> bool {
    gamma >= theta * (1.0 - CROSSING_SLACK)
}

/// First grid index whose hazard reaches `theta`.
fn grid_crossing(hazard: &[f64], theta: f64) -> Option<usize> {
    hazard.iter().position(|&g| reaches(g, theta))
}

/// Crossing time of the piecewise-linear interpolation of `hazard`.
fn interpolated_crossing(times: &[f64], hazard: &[f64], theta: f64) -> Option<f64> {
    let k = grid_crossing(hazard, theta)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (g0, g1) = (hazard[k - 1], hazard[k]);
    let w = ((theta - g0) / (g1 - g0)).clamp(0.0, 1.0);
    Some(times[k - 1] + w * (times[k] - times[k - 1]))
}

/// Piecewise-linear interpolation of `values` at `t`.
fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let i = times.partition_point(|&x| x <= t);
    if i == 0 {
        return values[0];
    }
    if i == times.len() {
        return values[values.len() - 1];
    }
    let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    values[i - 1] + w * (values[i] - values[i - 1])
}

/// Default time of `path` against `theta_exp`: a grid time for lattice
/// paths, the interpolated crossing for continuous ones.
pub fn sample_default_time<P: HazardPath + ?Sized>(path: &P, theta_exp: f64) -> DefaultSample {
    let resolution = path.resolution();
    let tau = match resolution {
        Resolution::Discrete(_) => grid_crossing(path.hazard(), theta_exp).map(|k| path.times()[k]),
        Resolution::Continuous => interpolated_crossing(path.times(), path.hazard(), theta_exp),
    };
    DefaultSample {
        theta_exp,
        tau,
        resolution,
    }
}

/// `S` before default and 0 from the default time on.
pub fn defaultable_stock_path<P: HazardPath + ?Sized>(path: &P, sample: &DefaultSample) -> Vec<f64> {
    path.times()
        .iter()
        .zip(path.stock())
        .map(|(&t, &s)| if sample.survived_at(t) { s } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalPoint {
    pub t: f64,
    /// Fraction of samples still alive at `t`.
    pub empirical: f64,
    pub se: f64,
    /// Sample mean of `exp(-Gamma_t)` over the same paths.
    pub model: f64,
    pub model_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub points: Vec<SurvivalPoint>,
    pub samples: usize,
    pub rejected: usize,
}

impl SurvivalCurve {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["t", "empirical", "model", "se"]);
        for p in &self.points {
            t.push(vec![p.t.into(), p.empirical.into(), p.model.into(), p.se.into()]);
        }
        t
    }

    /// Largest gap between the empirical curves, with the combined SE at the
    /// checkpoint where it occurs.
    pub fn sup_gap(&self, other: &SurvivalCurve) -> (f64, f64) {
        let mut worst = (0.0, 0.0);
        for (a, b) in self.points.iter().zip(&other.points) {
            let gap = (a.empirical - b.empirical).abs();
            if gap >= worst.0 {
                worst = (gap, a.se.hypot(b.se));
            }
        }
        worst
    }
}

fn check_times(t_grid: &[f64], horizon: f64) -> Result<()> {
    if t_grid.iter().any(|&t| !(0.0..=horizon * (1.0 + 1e-12)).contains(&t)) {
        return Err(Error::Domain(format!("checkpoints must lie in [0, {horizon}]")));
    }
    Ok(())
}

fn survival_from(accs: Vec<MeanAcc>, t_grid: &[f64], samples: usize, rejected: usize) -> Result<SurvivalCurve> {
    if rejected == samples {
        return Err(Error::AllPathsRejected(rejected));
    }
    let points = t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (alive, model) = (&accs[2 * j], &accs[2 * j + 1]);
            SurvivalPoint {
                t,
                empirical: alive.mean(),
                se: alive.std_error(),
                model: model.mean(),
                model_se: model.std_error(),
            }
        })
        .collect();
    Ok(SurvivalCurve {
        points,
        samples: samples - rejected,
        rejected,
    })
}

/// Lattice stock and hazard only, recording `Gamma` at the grid indices
/// `marks`. `None` when the path is rejected.
fn lattice_hazards(spec: &LatticeSpec, measure: Measure, seed: u64, index: u64, marks: &[usize]) -> Result<Option<Vec<f64>>> {
    let mut rng = stream_rng(seed, Stream::Lattice, index);
    let mut out = Vec::with_capacity(marks.len());
    let (mut s, mut gamma) = (spec.s0, 0.0);
    let mut next_mark = 0;
    for k in 0..=spec.steps {
        while next_mark < marks.len() && marks[next_mark] == k {
            out.push(gamma);
            next_mark += 1;
        }
        if k == spec.steps || next_mark == marks.len() {
            break;
        }
        let t = spec.time(k);
        let q_up = match measure {
            Measure::Physical => 0.5,
            Measure::RiskNeutral => 0.5 * (1.0 + spec.tilt(s, t)?),
        };
        let eps = if rng.random::<f64>() < q_up { 1.0 } else { -1.0 };
        gamma = spec.step_hazard(gamma, s, t);
        s = match spec.advance_stock(s, t, eps) {
            Ok((v, _)) => v,
            Err(Error::NonpositiveStock { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
    }
    Ok(Some(out))
}

/// Empirical lattice survival `P(tau_n > t)` at each `t`, with the model
/// curve `E[exp(-Gamma_[nt])]` from the same paths.
pub fn survival_curve(spec: &LatticeSpec, t_grid: &[f64], samples: usize, seed: u64, measure: Measure) -> Result<SurvivalCurve> {
    check_samples(samples, MIN_SURVIVAL_SAMPLES)?;
    check_times(t_grid, spec.horizon)?;
    let marks: Vec<usize> = t_grid.iter().map(|&t| spec.grid_index(t)).collect();
    let mut order: Vec<usize> = (0..marks.len()).collect();
    order.sort_by_key(|&j| marks[j]);
    let sorted: Vec<usize> = order.iter().map(|&j| marks[j]).collect();
    let (accs, rejected) = reduce_columns(samples, DEFAULT_CHUNK, 2 * t_grid.len(), |i| {
        let theta = draw_threshold(seed, i);
        let Some(sorted_gammas) = lattice_hazards(spec, measure, seed, i, &sorted)? else {
            return Ok(None);
        };
        let mut row = vec![0.0; 2 * t_grid.len()];
        for (pos, &j) in order.iter().enumerate() {
            let g = sorted_gammas[pos];
            row[2 * j] = if reaches(g, theta) { 0.0 } else { 1.0 };
            row[2 * j + 1] = (-g).exp();
        }
        Ok(Some(row))
    })?;
    survival_from(accs, t_grid, samples, rejected)
}

/// Continuous-time counterpart of [`survival_curve`]: Euler paths on the
/// Brownian stream, the same thresholds, hazard interpolated in time.
pub fn survival_curve_continuous(spec: &EulerSpec, t_grid: &[f64], samples: usize, seed: u64, measure: Measure) -> Result<SurvivalCurve> {
    check_samples(samples, MIN_SURVIVAL_SAMPLES)?;
    check_times(t_grid, spec.horizon)?;
    let (accs, rejected) = reduce_columns(samples, DEFAULT_CHUNK, 2 * t_grid.len(), |i| {
        let theta = draw_threshold(seed, i);
        let Some((times, hazard)) = euler_hazards(spec, measure, seed, i)? else {
            return Ok(None);
        };
        let mut row = Vec::with_capacity(2 * t_grid.len());
        for &t in t_grid {
            let g = interpolate(&times, &hazard, t);
            row.push(if reaches(g, theta) { 0.0 } else { 1.0 });
            row.push((-g).exp());
        }
        Ok(Some(row))
    })?;
    survival_from(accs, t_grid, samples, rejected)
}

/// Euler stock with trapezoidal hazard; `None` on a nonpositive stock.
fn euler_hazards(spec: &EulerSpec, measure: Measure, seed: u64, index: u64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    use crate::lattice::StockPolicy;
    let mut rng = stream_rng(seed, Stream::Brownian, index);
    let c = &spec.coeffs;
    let dt = spec.dt();
    let sq = dt.sqrt();
    let mut times = Vec::with_capacity(spec.steps + 1);
    let mut hazard = Vec::with_capacity(spec.steps + 1);
    let (mut s, mut gamma) = (spec.s0, 0.0);
    let mut lam = c.intensity(s, 0.0);
    times.push(0.0);
    hazard.push(0.0);
    for k in 0..spec.steps {
        let t = k as f64 * dt;
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let drift = match measure {
            Measure::Physical => c.drift(s) + lam * s,
            Measure::RiskNeutral => (c.rate(s) + lam) * s,
        };
        let next = s + drift * dt + c.vol(s, t) * s * sq * z;
        s = if next > 0.0 {
            next
        } else {
            match spec.policy {
                StockPolicy::Reject => return Ok(None),
                StockPolicy::Absorb => crate::lattice::ABSORB_FLOOR * spec.s0,
            }
        };
        let lam1 = c.intensity(s, t + dt);
        gamma += 0.5 * (lam + lam1) * dt;
        lam = lam1;
        times.push(t + dt);
        hazard.push(gamma);
    }
    Ok(Some((times, hazard)))
}

fn check_samples(samples: usize, min: usize) -> Result<()> {
    if samples < min {
        return Err(Error::invalid("samples", samples as f64, format!("need at least {min} samples")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleRow {
    pub t: f64,
    pub mean_m: f64,
    pub se_m: f64,
    pub mean_l: f64,
    pub se_l: f64,
    pub mean_xi: f64,
    pub se_xi: f64,
    /// Some mean sits more than 3 SE from its target.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    pub samples: usize,
    pub rejected: usize,
}

impl MartingaleReport {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["t", "mean_M", "se_M", "mean_L", "se_L", "mean_xi", "se_xi"]);
        for r in &self.rows {
            t.push(vec![
                r.t.into(),
                r.mean_m.into(),
                r.se_m.into(),
                r.mean_l.into(),
                r.se_l.into(),
                r.mean_xi.into(),
                r.se_xi.into(),
            ]);
        }
        t
    }
}

/// Means of the compensated default indicator
/// `M_t = 1{tau <= t} - Gamma_{t ^ tau}`, of `L_k = 1{tau_n > k} exp(Gamma_k)`
/// and of the density `xi_k`, all along physical lattice paths.
///
/// `M` uses the piecewise-linear hazard and its exact crossing time, so its
/// compensator is continuous; `L` uses the grid default time.
pub fn martingale_checks(spec: &LatticeSpec, checkpoints: &[f64], samples: usize, seed: u64) -> Result<MartingaleReport> {
    check_samples(samples, MIN_MARTINGALE_SAMPLES)?;
    check_times(checkpoints, spec.horizon)?;
    let width = 3 * checkpoints.len();
    let (accs, rejected) = reduce_columns(samples, DEFAULT_CHUNK, width, |i| {
        let theta = draw_threshold(seed, i);
        let path = match simulate_path(spec, Measure::Physical, &mut stream_rng(seed, Stream::Lattice, i)) {
            Ok(p) => p,
            Err(Error::NonpositiveStock { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let tau = interpolated_crossing(&path.times, &path.hazard, theta);
        let mut row = Vec::with_capacity(width);
        for &t in checkpoints {
            let m = match tau {
                Some(tau) if tau <= t => 1.0 - theta.min(interpolate(&path.times, &path.hazard, tau)),
                _ => -interpolate(&path.times, &path.hazard, t),
            };
            let k = spec.grid_index(t);
            let g = path.hazard[k];
            row.push(m);
            row.push(if reaches(g, theta) { 0.0 } else { g.exp() });
            row.push(path.density[k]);
        }
        Ok(Some(row))
    })?;
    if rejected == samples {
        return Err(Error::AllPathsRejected(rejected));
    }
    let rows = checkpoints
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (m, l, xi) = (&accs[3 * j], &accs[3 * j + 1], &accs[3 * j + 2]);
            let off = |acc: &MeanAcc, target: f64| (acc.mean() - target).abs() > 3.0 * acc.std_error();
            MartingaleRow {
                t,
                mean_m: m.mean(),
                se_m: m.std_error(),
                mean_l: l.mean(),
                se_l: l.std_error(),
                mean_xi: xi.mean(),
                se_xi: xi.std_error(),
                flagged: off(m, 0.0) || off(l, 1.0) || off(xi, 1.0),
            }
        })
        .collect();
    Ok(MartingaleReport {
        rows,
        samples: samples - rejected,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::simulate_path_seeded;
    use crate::model::{CoefficientSet, ParametricFamily};
    use crate::payoff::Payoff;
    use crate::pricer_continuous::simulate_continuous_path_seeded;
    use crate::pricer_discrete::{price_tree, DEFAULT_TREE_CAP};
    use approx::assert_relative_eq;

    fn constant(lambda: f64) -> CoefficientSet {
        ParametricFamily::Constant { b: 0.0, sigma: 0.2, lambda, r: 0.05 }
            .build(0.01, 1.0)
            .unwrap()
    }

    fn cev() -> CoefficientSet {
        ParametricFamily::CevCappedIntensity { mu: 0.05, sigma: 0.3, c: 4.0, p: 1.0, r: 0.03 }
            .build(0.01, 0.5)
            .unwrap()
    }

    const CHECKS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

    #[test]
    fn grid_default_time_example() {
        let spec = LatticeSpec::new(100, 100.0, 1.0, constant(0.02)).unwrap();
        let path = simulate_path_seeded(&spec, Measure::Physical, 0, 0).unwrap();
        let d = sample_default_time(&path, 0.015);
        assert_eq!(d.resolution, Resolution::Discrete(100));
        assert_relative_eq!(d.tau.unwrap(), 0.75, epsilon = 1e-12);
        let s = defaultable_stock_path(&path, &d);
        for (k, (&v, &stock)) in s.iter().zip(&path.stock).enumerate() {
            if k < 75 {
                assert_eq!(v, stock);
            } else {
                assert_eq!(v, 0.0);
            }
        }
        // threshold above the terminal hazard: no default, stock untouched
        let late = sample_default_time(&path, 0.03);
        assert_eq!(late.tau, None);
        assert_eq!(defaultable_stock_path(&path, &late), path.stock);
    }

    #[test]
    fn no_hazard_never_defaults() {
        let spec = LatticeSpec::new(50, 100.0, 1.0, constant(0.0)).unwrap();
        let path = simulate_path_seeded(&spec, Measure::Physical, 0, 0).unwrap();
        for i in 0..100 {
            assert_eq!(sample_default_time(&path, draw_threshold(1, i)).tau, None);
        }
    }

    #[test]
    fn continuous_crossing_is_interpolated() {
        let spec = EulerSpec::new(constant(0.02), 100.0, 1.0, 10).unwrap();
        let path = simulate_continuous_path_seeded(&spec, Measure::Physical, 0, 0).unwrap();
        let d = sample_default_time(&path, 0.0123);
        assert_eq!(d.resolution, Resolution::Continuous);
        assert_relative_eq!(d.tau.unwrap(), 0.615, epsilon = 1e-12);
    }

    #[test]
    fn thresholds_are_unit_exponential() {
        let acc: MeanAcc = (0..100_000).map(|i| draw_threshold(5, i)).collect();
        assert!((acc.mean() - 1.0).abs() <= 3.0 * acc.std_error());
        assert!((acc.variance() - 1.0).abs() < 0.05);
    }

    #[test]
    fn constant_intensity_survival() {
        let spec = LatticeSpec::new(64, 100.0, 1.0, constant(0.3)).unwrap();
        let curve = survival_curve(&spec, &[0.0, 0.25, 0.5, 1.0], 20_000, 3, Measure::Physical).unwrap();
        assert_eq!(curve.points[0].empirical, 1.0);
        for p in &curve.points {
            assert_relative_eq!(p.model, (-0.3 * p.t).exp(), epsilon = 1e-12);
            assert!((p.empirical - p.model).abs() <= 3.0 * p.se.max(1e-12), "{p:?}");
        }
        assert_eq!(curve.to_table().rows().len(), 4);
    }

    #[test]
    fn capped_intensity_survival() {
        // intensity saturates at the cap for every reachable price
        let c = ParametricFamily::CevCappedIntensity { mu: 0.0, sigma: 0.2, c: 1e6, p: 1.0, r: 0.0 }
            .build(0.01, 0.4)
            .unwrap();
        let spec = LatticeSpec::new(32, 100.0, 1.0, c).unwrap();
        let curve = survival_curve(&spec, &CHECKS, 10_000, 1, Measure::Physical).unwrap();
        for p in &curve.points {
            assert_relative_eq!(p.model, (-0.4 * p.t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn tower_identity_state_dependent() {
        let spec = LatticeSpec::new(128, 100.0, 1.0, cev()).unwrap();
        for measure in [Measure::Physical, Measure::RiskNeutral] {
            let curve = survival_curve(&spec, &CHECKS, 20_000, 9, measure).unwrap();
            for p in &curve.points {
                let se = p.se.hypot(p.model_se);
                assert!((p.empirical - p.model).abs() <= 3.0 * se, "{p:?}");
            }
        }
    }

    #[test]
    fn discrete_and_continuous_curves_agree() {
        let spec = LatticeSpec::new(256, 100.0, 1.0, cev()).unwrap();
        let euler = EulerSpec::new(cev(), 100.0, 1.0, 512).unwrap();
        let a = survival_curve(&spec, &CHECKS, 20_000, 4, Measure::Physical).unwrap();
        let b = survival_curve_continuous(&euler, &CHECKS, 20_000, 4, Measure::Physical).unwrap();
        let (gap, se) = a.sup_gap(&b);
        assert!(gap <= 3.0 * se, "{gap} vs {se}");
    }

    #[test]
    fn threshold_independent_of_terminal_stock() {
        let spec = LatticeSpec::new(32, 100.0, 1.0, cev()).unwrap();
        let n = 20_000;
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let p = simulate_path_seeded(&spec, Measure::Physical, 2, i).unwrap();
                (draw_threshold(2, i), *p.stock.last().unwrap())
            })
            .collect();
        let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        let (ma, mb) = (ma / n as f64, mb / n as f64);
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for &(x, y) in &pairs {
            cov += (x - ma) * (y - mb);
            va += (x - ma).powi(2);
            vb += (y - mb).powi(2);
        }
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() <= 3.0 / (n as f64).sqrt(), "{corr}");
    }

    #[test]
    fn martingales_without_hazard_are_exact() {
        let spec = LatticeSpec::new(32, 100.0, 1.0, constant(0.0)).unwrap();
        let report = martingale_checks(&spec, &CHECKS, 10_000, 0).unwrap();
        for r in &report.rows {
            assert_eq!((r.mean_m, r.se_m, r.mean_l, r.se_l), (0.0, 0.0, 1.0, 0.0));
        }
        assert!(!report.any_flagged());
    }

    #[test]
    fn martingales_with_hazard() {
        let spec = LatticeSpec::new(64, 100.0, 1.0, cev()).unwrap();
        let report = martingale_checks(&spec, &CHECKS, 20_000, 6).unwrap();
        assert!(!report.any_flagged(), "{report:?}");
        assert_eq!(report.to_table().columns().len(), 7);
        assert!(martingale_checks(&spec, &CHECKS, 9_999, 6).is_err());
    }

    #[test]
    fn joint_default_simulation_reproduces_survival_weighting() {
        // E_Q[1{tau_n > T} g(S_n) / B_n] over (path, threshold) pairs equals
        // the pre-default price, where survival enters through exp(-Gamma_n)
        let spec = LatticeSpec::new(12, 100.0, 1.0, cev()).unwrap();
        let payoff = Payoff::Call(100.0);
        let exact = price_tree(&spec, &payoff, 0, &[], DEFAULT_TREE_CAP).unwrap().value;
        let acc: MeanAcc = (0..200_000)
            .map(|i| {
                let p = simulate_path_seeded(&spec, Measure::RiskNeutral, 8, i).unwrap();
                let d = sample_default_time(&p, draw_threshold(8, i));
                if d.survived_at(1.0) {
                    payoff.eval(p.stock[12]) / p.bond[12]
                } else {
                    0.0
                }
            })
            .collect();
        assert!((acc.mean() - exact).abs() <= 3.0 * acc.std_error(), "{} vs {exact}", acc.mean());
    }
}
