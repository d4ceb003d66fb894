//! Experiment runner behind the `hazard-lattice` binary.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, Settings, Study};
use config::{ContinuousChoice, DiscreteChoice, ReferenceChoice};

use crate::convergence::{
    fdd_distance, moment_bound_check, price_convergence_study, FddConfig, Reference, StudyConfig, Verdict,
};
use crate::default_sim::{
    defaultable_stock_path, draw_threshold, martingale_checks, sample_default_time, survival_curve,
    survival_curve_continuous, MIN_MARTINGALE_SAMPLES,
};
use crate::error::{Error, Result};
use crate::lattice::{simulate_path_seeded, LatticeSpec};
use crate::model::CoefficientSet;
use crate::payoff::Payoff;
use crate::pricer_continuous::{
    price_closed_form, price_mc_continuous, simulate_continuous_path_seeded, solve_pde, EulerSpec, PdeGrid,
};
use crate::pricer_discrete::{defaultable_price, DiscreteMethod, McConfig, PriceResult};
use crate::table::{emit_csv, Cell, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERDICT_FAIL: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RunArgs {
    pub study: Study,
    pub config: Option<PathBuf>,
    /// `key=value` overrides, applied in order after the file.
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub verdict: Verdict,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Fail => EXIT_VERDICT_FAIL,
            Verdict::Pass | Verdict::Inconclusive => EXIT_OK,
        }
    }
}

/// Exit status for a finished run: 0 complete or pass, 2 verdict failure,
/// 1 error.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) => o.exit_code(),
        Err(_) => EXIT_ERROR,
    }
}

/// Resolves the effective configuration and runs the study, on a dedicated
/// thread pool when `threads` is set.
pub fn run(args: &RunArgs) -> Result<Outcome> {
    let mut settings = match &args.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    for o in &args.overrides {
        settings.set(o)?;
    }
    if let Some(seed) = args.seed {
        settings.set(&format!("run.seed={seed}"))?;
    }
    if let Some(out) = &args.out {
        settings.set(&format!("run.out={}", out.display()))?;
    }
    let cfg = ExperimentConfig::from_settings(&settings, args.study)?;
    match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Io(format!("thread pool: {e}")))?;
            pool.install(|| execute(&cfg))
        }
        None => execute(&cfg),
    }
}

/// Collects artifacts, result lines and timings for `summary.txt`.
struct Recorder {
    out: PathBuf,
    artifacts: Vec<PathBuf>,
    results: String,
    timings: Vec<(String, u128)>,
}

impl Recorder {
    fn emit(&mut self, name: &str, table: &Table) -> Result<()> {
        let path = self.out.join(name);
        emit_csv(table, &path)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.results.push_str(text.as_ref());
        self.results.push('\n');
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let v = f()?;
        self.timings.push((name.to_string(), start.elapsed().as_millis()));
        Ok(v)
    }
}

fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Io(format!("{}: {e}", cfg.out.display())))?;
    let start = Instant::now();
    let mut rec = Recorder {
        out: cfg.out.clone(),
        artifacts: Vec::new(),
        results: String::new(),
        timings: Vec::new(),
    };
    let coeffs = cfg.build_coeffs()?;
    let verdict = match cfg.study {
        Study::PriceDiscrete => price_discrete(cfg, &coeffs, &mut rec)?,
        Study::PriceContinuous => price_continuous(cfg, &coeffs, &mut rec)?,
        Study::Simulate => simulate(cfg, &coeffs, &mut rec)?,
        Study::Converge => converge(cfg, &coeffs, &mut rec)?,
        Study::FddTest => fdd_test(cfg, &coeffs, &mut rec)?,
    };
    write_summary(cfg, &rec, verdict, start.elapsed().as_millis())?;
    let mut artifacts = rec.artifacts;
    artifacts.push(cfg.out.join("summary.txt"));
    Ok(Outcome {
        verdict,
        out_dir: cfg.out.clone(),
        artifacts,
    })
}

fn write_summary(cfg: &ExperimentConfig, rec: &Recorder, verdict: Verdict, total_ms: u128) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "study: {}", cfg.study.tag());
    let _ = writeln!(s, "threads: {}", rayon::current_num_threads());
    let _ = writeln!(s, "\n[config]");
    s.push_str(&cfg.echo());
    let _ = writeln!(s, "\n[results]");
    s.push_str(&rec.results);
    let _ = writeln!(s, "\n[runtime]");
    for (name, ms) in &rec.timings {
        let _ = writeln!(s, "{name}_ms = {ms}");
    }
    let _ = writeln!(s, "total_ms = {total_ms}");
    let _ = writeln!(s, "\nverdict: {}", verdict.tag());
    let path = cfg.out.join("summary.txt");
    std::fs::write(&path, s).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn mc_config(cfg: &ExperimentConfig) -> McConfig {
    McConfig {
        paths: cfg.paths,
        seed: cfg.seed,
        chunk: cfg.chunk,
    }
}

fn pde_grid(cfg: &ExperimentConfig, coeffs: &CoefficientSet) -> PdeGrid {
    let sigma = coeffs.vol(cfg.s0, 0.0).abs().max(coeffs.sigma_floor);
    let width = cfg.pde_width * sigma * cfg.horizon.sqrt();
    PdeGrid {
        s_min: cfg.s0 * (-width).exp(),
        s_max: cfg.s0 * width.exp(),
        m_space: cfg.pde_space,
        m_time: cfg.pde_time,
        spacing: cfg.pde_spacing,
        rannacher: cfg.rannacher,
    }
}

fn has_closed_form(coeffs: &CoefficientSet, payoff: &Payoff) -> bool {
    coeffs.constant_rates().is_some() && !matches!(payoff, Payoff::PiecewiseLinear(_))
}

fn price_table(result: &PriceResult, n: usize, runtime_ms: u128) -> Table {
    let mut t = Table::new(["method", "n", "value", "std_error", "runtime_ms"]);
    t.push(vec![
        result.method.tag().into(),
        n.into(),
        result.value.into(),
        result.std_error.into(),
        Cell::Int(runtime_ms as i64),
    ]);
    t
}

fn record_price(rec: &mut Recorder, r: &PriceResult) {
    rec.line(format!("method = {}", r.method.tag()));
    rec.line(format!("value = {}", r.value));
    rec.line(format!("std_error = {}", r.std_error));
    if let Some(k) = r.step {
        rec.line(format!("step = {k}"));
    }
    rec.line(format!("time = {}", r.time));
    rec.line(format!("spot = {}", r.spot));
    if r.paths > 0 || r.rejected > 0 {
        rec.line(format!("paths = {}", r.paths));
        rec.line(format!("rejected = {}", r.rejected));
    }
}

fn price_discrete(cfg: &ExperimentConfig, coeffs: &CoefficientSet, rec: &mut Recorder) -> Result<Verdict> {
    let spec = LatticeSpec::new(cfg.steps, cfg.s0, cfg.horizon, coeffs.clone())?.with_policy(cfg.policy);
    let k = spec.grid_index(cfg.valuation_time);
    let method = match cfg.discrete_method {
        DiscreteChoice::Tree => DiscreteMethod::Tree { cap: cfg.tree_cap },
        DiscreteChoice::Recombining => DiscreteMethod::Recombining,
        DiscreteChoice::MonteCarlo => DiscreteMethod::MonteCarlo(mc_config(cfg)),
        DiscreteChoice::LikelihoodRatio => DiscreteMethod::LikelihoodRatio(mc_config(cfg)),
        DiscreteChoice::Auto if coeffs.multiplicative().is_some() => DiscreteMethod::Recombining,
        DiscreteChoice::Auto if cfg.steps - k <= cfg.tree_cap => DiscreteMethod::Tree { cap: cfg.tree_cap },
        DiscreteChoice::Auto => DiscreteMethod::MonteCarlo(mc_config(cfg)),
    };
    let start = Instant::now();
    let result = rec.time("price", || {
        defaultable_price(&spec, &cfg.payoff, cfg.valuation_time, &cfg.node, cfg.survived, method)
    })?;
    let ms = start.elapsed().as_millis();
    record_price(rec, &result);
    rec.emit("price.csv", &price_table(&result, cfg.steps, ms))?;
    Ok(Verdict::Pass)
}

fn price_continuous(cfg: &ExperimentConfig, coeffs: &CoefficientSet, rec: &mut Recorder) -> Result<Verdict> {
    let choice = match cfg.continuous_method {
        ContinuousChoice::Auto if has_closed_form(coeffs, &cfg.payoff) => ContinuousChoice::ClosedForm,
        ContinuousChoice::Auto => ContinuousChoice::Pde,
        other => other,
    };
    let start = Instant::now();
    let (result, n) = match choice {
        ContinuousChoice::ClosedForm => (
            rec.time("price", || price_closed_form(coeffs, &cfg.payoff, cfg.s0, 0.0, cfg.horizon))?,
            0,
        ),
        ContinuousChoice::Pde => {
            let grid = pde_grid(cfg, coeffs);
            let sol = rec.time("price", || solve_pde(coeffs, &cfg.payoff, cfg.s0, &grid, cfg.horizon))?;
            if cfg.export_surface {
                rec.emit("surface.csv", &sol.to_table())?;
            }
            (sol.price(cfg.s0), cfg.pde_time)
        }
        ContinuousChoice::EulerMc | ContinuousChoice::Auto => {
            let spec = EulerSpec::new(coeffs.clone(), cfg.s0, cfg.horizon, cfg.euler_steps)?.with_policy(cfg.policy);
            (
                rec.time("price", || price_mc_continuous(&spec, &cfg.payoff, &mc_config(cfg)))?,
                cfg.euler_steps,
            )
        }
    };
    let ms = start.elapsed().as_millis();
    record_price(rec, &result);
    rec.emit("price.csv", &price_table(&result, n, ms))?;
    Ok(Verdict::Pass)
}

fn simulate(cfg: &ExperimentConfig, coeffs: &CoefficientSet, rec: &mut Recorder) -> Result<Verdict> {
    let theta = draw_threshold(cfg.seed, 0);
    if cfg.continuous {
        let spec = EulerSpec::new(coeffs.clone(), cfg.s0, cfg.horizon, cfg.euler_steps)?.with_policy(cfg.policy);
        let curve = rec.time("survival", || {
            survival_curve_continuous(&spec, &cfg.checkpoints, cfg.samples, cfg.seed, cfg.measure)
        })?;
        rec.emit("survival.csv", &curve.to_table())?;
        rec.line(format!("samples = {}", curve.samples));
        rec.line(format!("rejected = {}", curve.rejected));
        let path = simulate_continuous_path_seeded(&spec, cfg.measure, cfg.seed, 0)?;
        let sample = sample_default_time(&path, theta);
        let mut table = path.to_table();
        table.add_column("S_defaultable", defaultable_stock_path(&path, &sample).into_iter().map(Cell::Num).collect());
        rec.emit("path.csv", &table)?;
        record_default(rec, theta, sample.tau);
        return Ok(Verdict::Pass);
    }
    let spec = LatticeSpec::new(cfg.steps, cfg.s0, cfg.horizon, coeffs.clone())?.with_policy(cfg.policy);
    let curve = rec.time("survival", || survival_curve(&spec, &cfg.checkpoints, cfg.samples, cfg.seed, cfg.measure))?;
    rec.emit("survival.csv", &curve.to_table())?;
    rec.line(format!("samples = {}", curve.samples));
    rec.line(format!("rejected = {}", curve.rejected));
    let mut verdict = Verdict::Pass;
    if cfg.samples >= MIN_MARTINGALE_SAMPLES {
        let report = rec.time("martingale", || martingale_checks(&spec, &cfg.checkpoints, cfg.samples, cfg.seed))?;
        rec.emit("martingale.csv", &report.to_table())?;
        rec.line(format!("martingale_flagged = {}", report.any_flagged()));
        if report.any_flagged() {
            verdict = Verdict::Fail;
        }
    } else {
        rec.line(format!("martingale checks skipped: need {MIN_MARTINGALE_SAMPLES} samples"));
    }
    let path = simulate_path_seeded(&spec, cfg.measure, cfg.seed, 0)?;
    let sample = sample_default_time(&path, theta);
    let mut table = path.to_table();
    table.add_column("S_defaultable", defaultable_stock_path(&path, &sample).into_iter().map(Cell::Num).collect());
    rec.emit("path.csv", &table)?;
    record_default(rec, theta, sample.tau);
    Ok(verdict)
}

fn record_default(rec: &mut Recorder, theta: f64, tau: Option<f64>) {
    rec.line(format!("path0_threshold = {theta}"));
    match tau {
        Some(t) => rec.line(format!("path0_default_time = {t}")),
        None => rec.line("path0_default_time = none"),
    }
}

fn fdd_config(cfg: &ExperimentConfig) -> FddConfig {
    let top = cfg.fdd_n_values.iter().copied().max().unwrap_or(1);
    FddConfig {
        s0: cfg.s0,
        horizon: cfg.horizon,
        checkpoints: cfg.checkpoints.clone(),
        n_values: cfg.fdd_n_values.clone(),
        samples: cfg.samples,
        seed: cfg.seed,
        reference_steps: if cfg.reference_steps == 0 { 8 * top } else { cfg.reference_steps },
        alpha: cfg.alpha,
    }
}

fn run_fdd(cfg: &ExperimentConfig, coeffs: &CoefficientSet, rec: &mut Recorder) -> Result<Verdict> {
    let fdd = fdd_config(cfg);
    rec.line(format!("fdd_reference_steps = {}", fdd.reference_steps));
    let report = rec.time("fdd", || fdd_distance(coeffs, &fdd))?;
    rec.emit("fdd.csv", &report.to_table())?;
    let verdict = report.verdict();
    rec.line(format!("fdd_verdict = {}", verdict.tag()));
    Ok(verdict)
}

fn fdd_test(cfg: &ExperimentConfig, coeffs: &CoefficientSet, rec: &mut Recorder) -> Result<Verdict> {
    run_fdd(cfg, coeffs, rec)
}

fn converge(cfg: &ExperimentConfig, coeffs: &CoefficientSet, rec: &mut Recorder) -> Result<Verdict> {
    let reference = match cfg.reference {
        ReferenceChoice::ClosedForm => Reference::ClosedForm,
        ReferenceChoice::Auto if has_closed_form(coeffs, &cfg.payoff) => Reference::ClosedForm,
        ReferenceChoice::Auto | ReferenceChoice::Pde => Reference::Pde(pde_grid(cfg, coeffs)),
    };
    let study = StudyConfig {
        s0: cfg.s0,
        horizon: cfg.horizon,
        n_values: cfg.n_values.clone(),
        reference,
        mc: mc_config(cfg),
        tree_cap: cfg.tree_cap,
        slope_threshold: cfg.slope_threshold,
        tolerance: cfg.tolerance,
    };
    let report = rec.time("prices", || price_convergence_study(coeffs, &cfg.payoff, &study))?;
    rec.emit("report.csv", &report.report_table())?;
    rec.emit("rates.csv", &report.rates_table())?;
    rec.line(format!("reference = {} ({})", report.reference.value, reference.tag()));
    match report.fit {
        Some(f) => rec.line(format!("slope = {} (se {}, {} points)", f.slope, f.slope_se, f.used)),
        None => rec.line("slope = inconclusive"),
    }
    rec.line(format!("envelope_constant = {}", report.envelope.constant));
    rec.line(format!("envelope_breaches = {:?}", report.envelope.breaches));
    rec.line(format!("terminal_error = {}", report.terminal_error));
    rec.line(format!("price_verdict = {}", report.verdict.tag()));
    let mut verdicts = vec![report.verdict];

    if cfg.fdd {
        verdicts.push(run_fdd(cfg, coeffs, rec)?);
    }
    if cfg.moments {
        let moments = rec.time("moments", || {
            moment_bound_check(
                coeffs,
                cfg.s0,
                cfg.horizon,
                &cfg.moment_n_values,
                &cfg.m_values,
                cfg.moment_samples,
                cfg.seed,
                cfg.moment_ceiling,
            )
        })?;
        rec.emit("moments.csv", &moments.to_table())?;
        for t in &moments.trends {
            rec.line(format!("moment_trend_m{} = {} (se {})", t.m, t.slope, t.slope_se));
        }
        rec.line(format!("moment_verdict = {}", moments.verdict.tag()));
        verdicts.push(moments.verdict);
    }
    Ok(if verdicts.contains(&Verdict::Fail) {
        Verdict::Fail
    } else if verdicts[0] == Verdict::Pass {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    })
}

/// Path of an artifact named `name` in the run's output directory.
pub fn artifact(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}
