//! Pre-default prices in the discrete market.
//!
//! `Y_n(S_k) = E_Q[beta_k / beta_n g(S_n) | F_k]` is computed exactly by
//! backward induction with the node state prices (non-recombining tree, or a
//! recombining lattice when the coefficients allow it) or by Monte Carlo under
//! the risk-neutral coin. The traded price multiplies `Y_n` by the survival
//! indicator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{walk_prefix, LatticeSpec};
use crate::payoff::Payoff;
use crate::rng::{map_chunks, stream_rng, PathRng, Stream, DEFAULT_CHUNK};
use crate::stats::MeanAcc;

/// Largest tree depth priced exactly: 2^26 leaves.
pub const DEFAULT_TREE_CAP: usize = 26;
pub const MIN_MC_PATHS: usize = 1000;

/// Depth below which subtrees are priced in parallel.
const PAR_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Tree,
    Recombining,
    MonteCarlo,
    LikelihoodRatio,
    ClosedForm,
    Pde,
    EulerMc,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Tree => "tree",
            Method::Recombining => "recombining",
            Method::MonteCarlo => "mc",
            Method::LikelihoodRatio => "mc-lr",
            Method::ClosedForm => "closed-form",
            Method::Pde => "pde",
            Method::EulerMc => "euler-mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceResult {
    pub value: f64,
    /// Zero for exact methods.
    pub std_error: f64,
    pub method: Method,
    /// Lattice step of the valuation node, when discrete.
    pub step: Option<usize>,
    pub time: f64,
    pub spot: f64,
    pub survival_adjusted: bool,
    /// Accepted Monte Carlo paths.
    pub paths: usize,
    /// Paths dropped by the nonpositive-stock policy.
    pub rejected: usize,
}

impl PriceResult {
    pub(crate) fn exact(value: f64, method: Method, step: Option<usize>, time: f64, spot: f64) -> Self {
        PriceResult {
            value,
            std_error: 0.0,
            method,
            step,
            time,
            spot,
            survival_adjusted: false,
            paths: 0,
            rejected: 0,
        }
    }

    pub(crate) fn from_acc(acc: &MeanAcc, rejected: usize, method: Method, step: Option<usize>, time: f64, spot: f64) -> Self {
        PriceResult {
            value: acc.mean(),
            std_error: acc.std_error(),
            method,
            step,
            time,
            spot,
            survival_adjusted: false,
            paths: acc.count as usize,
            rejected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    pub chunk: usize,
}

impl McConfig {
    pub fn new(paths: usize, seed: u64) -> Self {
        McConfig {
            paths,
            seed,
            chunk: DEFAULT_CHUNK,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.paths < MIN_MC_PATHS {
            return Err(Error::invalid(
                "paths",
                self.paths as f64,
                format!("Monte Carlo needs at least {MIN_MC_PATHS} paths"),
            ));
        }
        Ok(())
    }
}

/// Exact `Y_n` at the node reached by `prefix` after `k` steps, by
/// depth-first induction over the full binary tree below it.
pub fn price_tree(spec: &LatticeSpec, payoff: &Payoff, k: usize, prefix: &[i8], cap: usize) -> Result<PriceResult> {
    let s = node_spot(spec, k, prefix)?;
    let depth = spec.steps - k;
    if depth > cap {
        return Err(Error::TreeCapExceeded { depth, cap });
    }
    let value = tree_value(spec, payoff, k, s, 0)?;
    Ok(PriceResult::exact(value, Method::Tree, Some(k), spec.time(k), s))
}

fn node_spot(spec: &LatticeSpec, k: usize, prefix: &[i8]) -> Result<f64> {
    if k > spec.steps {
        return Err(Error::Domain(format!("step {k} beyond {} steps", spec.steps)));
    }
    if prefix.len() < k {
        return Err(Error::Domain(format!(
            "node prefix has {} moves, step {k} needs {k}",
            prefix.len()
        )));
    }
    Ok(walk_prefix(spec, &prefix[..k])?.0)
}

fn tree_value(spec: &LatticeSpec, payoff: &Payoff, k: usize, s: f64, level: usize) -> Result<f64> {
    if k == spec.steps {
        return Ok(payoff.eval(s));
    }
    let t = spec.time(k);
    let sp = spec.state_prices(s, t)?;
    let up = spec.advance_stock(s, t, 1.0)?.0;
    let down = spec.advance_stock(s, t, -1.0)?.0;
    let (vu, vd) = if level < PAR_DEPTH && spec.steps - k > 10 {
        rayon::join(
            || tree_value(spec, payoff, k + 1, up, level + 1),
            || tree_value(spec, payoff, k + 1, down, level + 1),
        )
    } else {
        (
            tree_value(spec, payoff, k + 1, up, level + 1),
            tree_value(spec, payoff, k + 1, down, level + 1),
        )
    };
    Ok(sp.pi_up * vu? + sp.pi_down * vd?)
}

/// Constant per-step factors of a recombining lattice.
#[derive(Debug, Clone, Copy)]
struct Recombining {
    up: f64,
    down: f64,
    pi_up: f64,
    pi_down: f64,
    q_up: f64,
    discount: f64,
}

fn recombining_factors(spec: &LatticeSpec) -> Option<Recombining> {
    let m = spec.coeffs.multiplicative()?;
    let dt = spec.dt();
    let drift = 1.0 + (m.mu + m.rates.lambda) * dt;
    let shock = m.rates.sigma * spec.sqrt_dt();
    let sp = spec.state_prices(spec.s0, 0.0).ok()?;
    Some(Recombining {
        up: drift + shock,
        down: drift - shock,
        pi_up: sp.pi_up,
        pi_down: sp.pi_down,
        q_up: sp.q_up,
        discount: sp.pi_up + sp.pi_down,
    })
}

/// Exact `Y_n` by backward induction on the recombining lattice. Available
/// when every step multiplies the stock by a state-independent factor
/// (constant `sigma`, `lambda`, `r` and `b(x) = mu x`).
pub fn price_recombining(spec: &LatticeSpec, payoff: &Payoff) -> Result<PriceResult> {
    price_recombining_from(spec, payoff, 0, 0)
}

/// Recombining induction from the node with `ups` up-moves after `k` steps.
pub fn price_recombining_from(spec: &LatticeSpec, payoff: &Payoff, k: usize, ups: usize) -> Result<PriceResult> {
    let f = recombining_factors(spec).ok_or_else(|| {
        Error::Unsupported("recombining lattice needs constant rates and b(x) = mu x".into())
    })?;
    if !(f.down > 0.0) {
        return Err(Error::Unsupported(format!(
            "recombining lattice has nonpositive down factor {}",
            f.down
        )));
    }
    if k > spec.steps || ups > k {
        return Err(Error::Domain(format!("no node with {ups} up-moves at step {k}")));
    }
    let n = spec.steps;
    let depth = n - k;
    let spot = spec.s0 * f.up.powi(ups as i32) * f.down.powi((k - ups) as i32);
    let mut values: Vec<f64> = (0..=depth)
        .map(|j| payoff.eval(spot * f.up.powi(j as i32) * f.down.powi((depth - j) as i32)))
        .collect();
    for level in (0..depth).rev() {
        for j in 0..=level {
            values[j] = f.pi_up * values[j + 1] + f.pi_down * values[j];
        }
    }
    Ok(PriceResult::exact(values[0], Method::Recombining, Some(k), spec.time(k), spot))
}

/// Risk-neutral Monte Carlo estimate of `Y_n(S_0)`.
pub fn price_mc(spec: &LatticeSpec, payoff: &Payoff, cfg: &McConfig) -> Result<PriceResult> {
    price_mc_from(spec, payoff, 0, spec.s0, cfg)
}

/// Monte Carlo from an arbitrary node `(k, s)`.
pub fn price_mc_from(spec: &LatticeSpec, payoff: &Payoff, k: usize, s: f64, cfg: &McConfig) -> Result<PriceResult> {
    cfg.check()?;
    let fast = recombining_factors(spec).filter(|f| f.down > 0.0);
    let (acc, rejected) = reduce_paths(cfg, Stream::Lattice, |rng| match fast {
        Some(f) => Ok(Some(recombining_sample(spec, payoff, &f, k, s, rng))),
        None => risk_neutral_sample(spec, payoff, k, s, rng),
    })?;
    Ok(PriceResult::from_acc(&acc, rejected, Method::MonteCarlo, Some(k), spec.time(k), s))
}

/// Fair-coin paths weighted by the density `xi_n`; an estimator of the same
/// quantity as [`price_mc`] that shares no sampling code with it.
pub fn price_mc_likelihood_ratio(spec: &LatticeSpec, payoff: &Payoff, cfg: &McConfig) -> Result<PriceResult> {
    cfg.check()?;
    let (acc, rejected) = reduce_paths(cfg, Stream::Lattice, |rng| {
        let (mut s, mut xi, mut beta) = (spec.s0, 1.0, 1.0);
        for k in 0..spec.steps {
            let t = spec.time(k);
            let tilt = spec.tilt(s, t)?;
            let eps = if rng.random::<bool>() { 1.0 } else { -1.0 };
            xi *= 1.0 + tilt * eps;
            beta *= spec.growth(s, t);
            s = match spec.advance_stock(s, t, eps) {
                Ok((v, _)) => v,
                Err(e) if is_stock_error(&e) => return Ok(None),
                Err(e) => return Err(e),
            };
        }
        Ok(Some(xi * payoff.eval(s) / beta))
    })?;
    Ok(PriceResult::from_acc(&acc, rejected, Method::LikelihoodRatio, Some(0), 0.0, spec.s0))
}

fn is_stock_error(e: &Error) -> bool {
    matches!(e, Error::NonpositiveStock { .. })
}

/// Runs `sample` once per path on its own position of `stream` and folds the
/// per-chunk accumulators in chunk order. `Ok(None)` marks a rejected path.
pub(crate) fn reduce_paths<F>(cfg: &McConfig, stream: Stream, sample: F) -> Result<(MeanAcc, usize)>
where
    F: Fn(&mut PathRng) -> Result<Option<f64>> + Sync + Send,
{
    let chunks = map_chunks(cfg.paths, cfg.chunk, |range| -> Result<(MeanAcc, usize)> {
        let mut acc = MeanAcc::new();
        let mut rejected = 0;
        for i in range {
            let mut rng = stream_rng(cfg.seed, stream, i as u64);
            match sample(&mut rng)? {
                Some(v) => acc.push(v),
                None => rejected += 1,
            }
        }
        Ok((acc, rejected))
    });
    let mut total = MeanAcc::new();
    let mut rejected = 0;
    for c in chunks {
        let (acc, rej) = c?;
        total.merge(&acc);
        rejected += rej;
    }
    if total.count == 0 {
        return Err(Error::AllPathsRejected(rejected));
    }
    Ok((total, rejected))
}

fn risk_neutral_sample(spec: &LatticeSpec, payoff: &Payoff, k0: usize, s0: f64, rng: &mut PathRng) -> Result<Option<f64>> {
    let (mut s, mut beta) = (s0, 1.0);
    for k in k0..spec.steps {
        let t = spec.time(k);
        let tilt = spec.tilt(s, t)?;
        let eps = if rng.random::<f64>() < 0.5 * (1.0 + tilt) { 1.0 } else { -1.0 };
        beta *= spec.growth(s, t);
        s = match spec.advance_stock(s, t, eps) {
            Ok((v, _)) => v,
            Err(e) if is_stock_error(&e) => return Ok(None),
            Err(e) => return Err(e),
        };
    }
    Ok(Some(payoff.eval(s) / beta))
}

/// Same coin as [`risk_neutral_sample`]; only the up-move count matters.
fn recombining_sample(spec: &LatticeSpec, payoff: &Payoff, f: &Recombining, k0: usize, s0: f64, rng: &mut PathRng) -> f64 {
    let depth = spec.steps - k0;
    let ups = (0..depth).filter(|_| rng.random::<f64>() < f.q_up).count();
    let s = s0 * f.up.powi(ups as i32) * f.down.powi((depth - ups) as i32);
    payoff.eval(s) * f.discount.powi(depth as i32)
}

/// How [`defaultable_price`] computes the pre-default value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteMethod {
    Tree { cap: usize },
    Recombining,
    MonteCarlo(McConfig),
    LikelihoodRatio(McConfig),
}

/// Traded price `1{tau_n > t} Y_n` at grid time `[nt]/n` of the node reached
/// by `prefix`.
pub fn defaultable_price(
    spec: &LatticeSpec,
    payoff: &Payoff,
    t: f64,
    prefix: &[i8],
    survived: bool,
    method: DiscreteMethod,
) -> Result<PriceResult> {
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, {}]", spec.horizon)));
    }
    let k = spec.grid_index(t);
    let s = node_spot(spec, k, prefix)?;
    let mut result = if !survived {
        let tag = match method {
            DiscreteMethod::Tree { .. } => Method::Tree,
            DiscreteMethod::Recombining => Method::Recombining,
            DiscreteMethod::MonteCarlo(_) => Method::MonteCarlo,
            DiscreteMethod::LikelihoodRatio(_) => Method::LikelihoodRatio,
        };
        PriceResult::exact(0.0, tag, Some(k), spec.time(k), s)
    } else {
        match method {
            DiscreteMethod::Tree { cap } => price_tree(spec, payoff, k, prefix, cap)?,
            DiscreteMethod::Recombining => {
                let ups = prefix[..k].iter().filter(|&&e| e == 1).count();
                price_recombining_from(spec, payoff, k, ups)?
            }
            DiscreteMethod::MonteCarlo(cfg) => price_mc_from(spec, payoff, k, s, &cfg)?,
            DiscreteMethod::LikelihoodRatio(cfg) => {
                if k != 0 {
                    return Err(Error::Unsupported(
                        "likelihood-ratio estimator prices from the root only".into(),
                    ));
                }
                price_mc_likelihood_ratio(spec, payoff, &cfg)?
            }
        }
    };
    result.survival_adjusted = true;
    Ok(result)
}
