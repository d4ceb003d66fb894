//! Flat `key = value` experiment configs with dotted sections.
//!
//! ```text
//! # comment
//! model.family = constant
//! model.sigma = 0.2
//! payoff.type = call
//! payoff.strike = 100
//! run.seed = 7
//! ```
//!
//! Command-line overrides replace file values. Every key the run reads,
//! including defaults, is recorded so the summary can echo the effective
//! configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lattice::{Measure, StockPolicy};
use crate::model::{ParametricFamily, Table as Curve};
use crate::payoff::Payoff;
use crate::pricer_continuous::Spacing;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    PriceDiscrete,
    PriceContinuous,
    Simulate,
    Converge,
    FddTest,
}

impl Study {
    pub fn tag(self) -> &'static str {
        match self {
            Study::PriceDiscrete => "price-discrete",
            Study::PriceContinuous => "price-continuous",
            Study::Simulate => "simulate",
            Study::Converge => "converge",
            Study::FddTest => "fdd-test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Study::PriceDiscrete,
            Study::PriceContinuous,
            Study::Simulate,
            Study::Converge,
            Study::FddTest,
        ]
        .into_iter()
        .find(|st| st.tag() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// Source line in the config file; `None` for overrides.
    line: Option<usize>,
}

/// Raw key/value pairs, before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::config(Some(line), None, "expected `key = value`"));
            };
            let key = key.trim();
            check_key(key, Some(line))?;
            let entry = Entry {
                value: value.trim().to_string(),
                line: Some(line),
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(Error::config(Some(line), Some(key), "duplicate key"));
            }
        }
        Ok(Settings { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::config(None, None, format!("override `{assignment}` is not key=value")));
        };
        let key = key.trim();
        check_key(key, None)?;
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line: None,
            },
        );
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }
}

fn check_key(key: &str, line: Option<usize>) -> Result<()> {
    let ok = !key.is_empty()
        && key.split('.').all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
    if !ok {
        return Err(Error::config(line, Some(key), "keys are dotted words like `model.sigma`"));
    }
    Ok(())
}

/// Typed reads over [`Settings`] that remember what was read.
struct Reader<'a> {
    settings: &'a Settings,
    used: BTreeMap<String, String>,
}

impl<'a> Reader<'a> {
    fn new(settings: &'a Settings) -> Self {
        Reader {
            settings,
            used: BTreeMap::new(),
        }
    }

    fn fail(&self, key: &str, msg: impl Into<String>) -> Error {
        let line = self.settings.entries.get(key).and_then(|e| e.line);
        Error::config(line, Some(key), msg)
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.settings.get(key)?.to_string();
        self.used.insert(key.to_string(), v.clone());
        Some(v)
    }

    fn parsed<T: FromStr>(&mut self, key: &str, text: &str) -> Result<T> {
        text.parse()
            .map_err(|_| self.fail(key, format!("cannot parse `{text}` as {}", std::any::type_name::<T>())))
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let Some(v) = self.raw(key) else {
            return Err(Error::config(None, Some(key), "missing required key"));
        };
        self.parsed(key, &v)
    }

    fn or<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            Some(v) => self.parsed(key, &v),
            None => {
                self.used.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    fn text_or(&mut self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or_else(|| {
            self.used.insert(key.to_string(), default.to_string());
            default.to_string()
        })
    }

    fn list_or<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>> {
        let text = self.text_or(key, default);
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.parsed(key, s))
            .collect()
    }

    /// Errors on any key that was set but never read.
    fn finish(self) -> Result<BTreeMap<String, String>> {
        if let Some((key, entry)) = self.settings.entries.iter().find(|(k, _)| !self.used.contains_key(*k)) {
            return Err(Error::config(entry.line, Some(key), "unknown key for this study"));
        }
        Ok(self.used)
    }
}

/// How the price-discrete study values the claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteChoice {
    /// Recombining lattice when available, full tree within the cap, else MC.
    Auto,
    Tree,
    Recombining,
    MonteCarlo,
    LikelihoodRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinuousChoice {
    /// Closed form when the coefficients are constant, else the PDE.
    Auto,
    ClosedForm,
    Pde,
    EulerMc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceChoice {
    Auto,
    ClosedForm,
    Pde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub study: Study,
    pub seed: u64,
    pub out: PathBuf,
    pub family: ParametricFamily,
    pub sigma_floor: f64,
    pub lambda_cap: f64,
    pub payoff: Payoff,
    pub s0: f64,
    pub horizon: f64,
    pub policy: StockPolicy,
    pub steps: usize,
    pub n_values: Vec<usize>,
    pub valuation_time: f64,
    pub node: Vec<i8>,
    pub survived: bool,
    pub tree_cap: usize,
    pub paths: usize,
    pub chunk: usize,
    pub discrete_method: DiscreteChoice,
    pub continuous_method: ContinuousChoice,
    pub reference: ReferenceChoice,
    pub pde_space: usize,
    pub pde_time: usize,
    pub pde_spacing: Spacing,
    pub pde_width: f64,
    pub rannacher: usize,
    pub export_surface: bool,
    pub euler_steps: usize,
    pub tolerance: f64,
    pub slope_threshold: f64,
    pub measure: Measure,
    pub continuous: bool,
    pub checkpoints: Vec<f64>,
    pub samples: usize,
    pub fdd: bool,
    pub fdd_n_values: Vec<usize>,
    pub reference_steps: usize,
    pub alpha: f64,
    pub moments: bool,
    pub moment_n_values: Vec<usize>,
    pub m_values: Vec<u32>,
    pub moment_samples: usize,
    pub moment_ceiling: f64,
    /// Every key read with its effective value, for the summary echo.
    pub effective: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// Types `settings` for `study`. A `run.study` entry, if present, must
    /// name the same study.
    pub fn from_settings(settings: &Settings, study: Study) -> Result<Self> {
        let mut r = Reader::new(settings);
        if let Some(tag) = r.raw("run.study") {
            if Study::parse(&tag) != Some(study) {
                return Err(r.fail("run.study", format!("config is for `{tag}`, not `{}`", study.tag())));
            }
        }
        r.used.insert("run.study".into(), study.tag().into());
        let seed: u64 = r.required("run.seed")?;
        let out = PathBuf::from(r.text_or("run.out", "out"));

        let family = read_family(&mut r)?;
        let sigma_floor = r.or("model.sigma_floor", 0.01)?;
        let lambda_cap = r.or("model.lambda_cap", 1.0)?;
        let payoff = read_payoff(&mut r)?;
        let s0 = r.or("run.s0", 100.0)?;
        let horizon = r.or("run.horizon", 1.0)?;
        let policy = match r.text_or("run.policy", "reject").as_str() {
            "reject" => StockPolicy::Reject,
            "absorb" => StockPolicy::Absorb,
            other => return Err(r.fail("run.policy", format!("unknown policy `{other}` (reject, absorb)"))),
        };

        let mut cfg = ExperimentConfig {
            study,
            seed,
            out,
            family,
            sigma_floor,
            lambda_cap,
            payoff,
            s0,
            horizon,
            policy,
            steps: 16,
            n_values: Vec::new(),
            valuation_time: 0.0,
            node: Vec::new(),
            survived: true,
            tree_cap: crate::pricer_discrete::DEFAULT_TREE_CAP,
            paths: 100_000,
            chunk: crate::rng::DEFAULT_CHUNK,
            discrete_method: DiscreteChoice::Auto,
            continuous_method: ContinuousChoice::Auto,
            reference: ReferenceChoice::Auto,
            pde_space: 400,
            pde_time: 400,
            pde_spacing: Spacing::Log,
            pde_width: 6.0,
            rannacher: 1,
            export_surface: false,
            euler_steps: 400,
            tolerance: 0.05,
            slope_threshold: -0.45,
            measure: Measure::Physical,
            continuous: false,
            checkpoints: Vec::new(),
            samples: 10_000,
            fdd: false,
            fdd_n_values: Vec::new(),
            reference_steps: 0,
            alpha: 0.01,
            moments: false,
            moment_n_values: Vec::new(),
            m_values: Vec::new(),
            moment_samples: 100_000,
            moment_ceiling: 100.0,
            effective: BTreeMap::new(),
        };

        let needs_pde = |c: &ExperimentConfig| match study {
            Study::PriceContinuous => c.continuous_method != ContinuousChoice::ClosedForm && c.continuous_method != ContinuousChoice::EulerMc,
            Study::Converge => c.reference != ReferenceChoice::ClosedForm,
            _ => false,
        };
        match study {
            Study::PriceDiscrete => {
                cfg.steps = r.or("run.n", 16)?;
                cfg.valuation_time = r.or("run.t", 0.0)?;
                cfg.node = r.list_or("run.node", "")?;
                cfg.survived = r.or("run.survived", true)?;
                cfg.tree_cap = r.or("run.tree_cap", cfg.tree_cap)?;
                cfg.discrete_method = match r.text_or("run.method", "auto").as_str() {
                    "auto" => DiscreteChoice::Auto,
                    "tree" => DiscreteChoice::Tree,
                    "recombining" => DiscreteChoice::Recombining,
                    "mc" => DiscreteChoice::MonteCarlo,
                    "mc-lr" => DiscreteChoice::LikelihoodRatio,
                    other => {
                        return Err(r.fail("run.method", format!("unknown method `{other}` (auto, tree, recombining, mc, mc-lr)")))
                    }
                };
                if matches!(cfg.discrete_method, DiscreteChoice::MonteCarlo | DiscreteChoice::LikelihoodRatio | DiscreteChoice::Auto) {
                    cfg.paths = r.or("run.paths", cfg.paths)?;
                    cfg.chunk = r.or("run.chunk", cfg.chunk)?;
                }
            }
            Study::PriceContinuous => {
                cfg.continuous_method = match r.text_or("run.method", "auto").as_str() {
                    "auto" => ContinuousChoice::Auto,
                    "closed-form" => ContinuousChoice::ClosedForm,
                    "pde" => ContinuousChoice::Pde,
                    "euler-mc" => ContinuousChoice::EulerMc,
                    other => {
                        return Err(r.fail("run.method", format!("unknown method `{other}` (auto, closed-form, pde, euler-mc)")))
                    }
                };
                if cfg.continuous_method == ContinuousChoice::EulerMc {
                    cfg.euler_steps = r.or("run.euler_steps", cfg.euler_steps)?;
                    cfg.paths = r.or("run.paths", cfg.paths)?;
                    cfg.chunk = r.or("run.chunk", cfg.chunk)?;
                }
                if needs_pde(&cfg) {
                    read_pde(&mut r, &mut cfg)?;
                    cfg.export_surface = r.or("run.export_surface", false)?;
                }
            }
            Study::Simulate => {
                cfg.continuous = match r.text_or("run.resolution", "discrete").as_str() {
                    "discrete" => false,
                    "continuous" => true,
                    other => return Err(r.fail("run.resolution", format!("unknown resolution `{other}` (discrete, continuous)"))),
                };
                if cfg.continuous {
                    cfg.euler_steps = r.or("run.euler_steps", 1024)?;
                } else {
                    cfg.steps = r.or("run.n", 256)?;
                }
                cfg.measure = read_measure(&mut r)?;
                cfg.checkpoints = r.list_or("run.checkpoints", "0.25,0.5,0.75,1")?;
                cfg.samples = r.or("run.samples", cfg.samples)?;
            }
            Study::Converge => {
                cfg.n_values = r.list_or("run.n_values", "8,16,32,64,128,256,512,1024,2048,4096")?;
                cfg.reference = match r.text_or("run.reference", "auto").as_str() {
                    "auto" => ReferenceChoice::Auto,
                    "closed-form" => ReferenceChoice::ClosedForm,
                    "pde" => ReferenceChoice::Pde,
                    other => return Err(r.fail("run.reference", format!("unknown reference `{other}` (auto, closed-form, pde)"))),
                };
                if needs_pde(&cfg) {
                    read_pde(&mut r, &mut cfg)?;
                }
                cfg.tree_cap = r.or("run.tree_cap", cfg.tree_cap)?;
                cfg.paths = r.or("run.paths", cfg.paths)?;
                cfg.chunk = r.or("run.chunk", cfg.chunk)?;
                cfg.tolerance = r.or("run.tolerance", cfg.tolerance)?;
                cfg.slope_threshold = r.or("run.slope_threshold", cfg.slope_threshold)?;
                cfg.fdd = r.or("run.fdd", true)?;
                if cfg.fdd {
                    read_fdd(&mut r, &mut cfg)?;
                }
                cfg.moments = r.or("run.moments", true)?;
                if cfg.moments {
                    cfg.moment_n_values = r.list_or("run.moment_n_values", "16,64,256,1024")?;
                    cfg.m_values = r.list_or("run.m_values", "1,2")?;
                    cfg.moment_samples = r.or("run.moment_samples", cfg.moment_samples)?;
                    cfg.moment_ceiling = r.or("run.moment_ceiling", cfg.moment_ceiling)?;
                }
            }
            Study::FddTest => {
                cfg.fdd = true;
                read_fdd(&mut r, &mut cfg)?;
            }
        }
        cfg.effective = r.finish()?;
        Ok(cfg)
    }

    /// Effective configuration as `key = value` lines, sorted by key. Parsing
    /// it back yields the same configuration.
    pub fn echo(&self) -> String {
        self.effective
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn build_coeffs(&self) -> Result<crate::model::CoefficientSet> {
        self.family.build(self.sigma_floor, self.lambda_cap)
    }
}

fn read_measure(r: &mut Reader) -> Result<Measure> {
    match r.text_or("run.measure", "physical").as_str() {
        "physical" => Ok(Measure::Physical),
        "risk-neutral" => Ok(Measure::RiskNeutral),
        other => Err(r.fail("run.measure", format!("unknown measure `{other}` (physical, risk-neutral)"))),
    }
}

fn read_pde(r: &mut Reader, cfg: &mut ExperimentConfig) -> Result<()> {
    cfg.pde_space = r.or("run.pde_space", cfg.pde_space)?;
    cfg.pde_time = r.or("run.pde_time", cfg.pde_time)?;
    cfg.pde_width = r.or("run.pde_width", cfg.pde_width)?;
    cfg.rannacher = r.or("run.rannacher", cfg.rannacher)?;
    cfg.pde_spacing = match r.text_or("run.pde_spacing", "log").as_str() {
        "log" => Spacing::Log,
        "uniform" => Spacing::Uniform,
        other => return Err(r.fail("run.pde_spacing", format!("unknown spacing `{other}` (log, uniform)"))),
    };
    Ok(())
}

fn read_fdd(r: &mut Reader, cfg: &mut ExperimentConfig) -> Result<()> {
    cfg.fdd_n_values = r.list_or("run.fdd_n_values", "16,64,256,1024")?;
    cfg.checkpoints = r.list_or("run.checkpoints", "0.25,0.5,0.75,1")?;
    cfg.samples = r.or("run.samples", cfg.samples)?;
    cfg.reference_steps = r.or("run.reference_steps", 0)?;
    cfg.alpha = r.or("run.alpha", cfg.alpha)?;
    Ok(())
}

fn read_family(r: &mut Reader) -> Result<ParametricFamily> {
    let tag: String = r.required("model.family")?;
    Ok(match tag.as_str() {
        "constant" => ParametricFamily::Constant {
            b: r.or("model.b", 0.0)?,
            sigma: r.required("model.sigma")?,
            lambda: r.required("model.lambda")?,
            r: r.required("model.r")?,
        },
        "geometric" => ParametricFamily::Geometric {
            mu: r.required("model.mu")?,
            sigma: r.required("model.sigma")?,
            lambda: r.required("model.lambda")?,
            r: r.required("model.r")?,
        },
        "cev_capped_intensity" => ParametricFamily::CevCappedIntensity {
            mu: r.required("model.mu")?,
            sigma: r.required("model.sigma")?,
            c: r.required("model.c")?,
            p: r.required("model.p")?,
            r: r.required("model.r")?,
        },
        "tabulated" => {
            let path: String = r.required("model.intensity_table")?;
            ParametricFamily::Tabulated {
                mu: r.required("model.mu")?,
                sigma: r.required("model.sigma")?,
                intensity: Curve::load(Path::new(&path))?,
                r: r.required("model.r")?,
            }
        }
        other => {
            return Err(r.fail(
                "model.family",
                format!("unknown family `{other}` (constant, geometric, cev_capped_intensity, tabulated)"),
            ))
        }
    })
}

fn read_payoff(r: &mut Reader) -> Result<Payoff> {
    let tag: String = r.required("payoff.type")?;
    Ok(match tag.as_str() {
        "call" => Payoff::Call(r.required("payoff.strike")?),
        "put" => Payoff::Put(r.required("payoff.strike")?),
        "digital" => Payoff::Digital(r.required("payoff.strike")?),
        "identity" => Payoff::Identity,
        "constant" => Payoff::Constant(r.required("payoff.value")?),
        "table" => {
            let path: String = r.required("payoff.table")?;
            Payoff::PiecewiseLinear(Curve::load(Path::new(&path))?)
        }
        other => {
            return Err(r.fail(
                "payoff.type",
                format!("unknown payoff `{other}` (call, put, digital, identity, constant, table)"),
            ))
        }
    })
}
