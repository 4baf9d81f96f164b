//! Command-line front end: `spectrum`, `evolve`, `validate` and `gaps`.
//!
//! Settings come from an optional `key = value` file and are overridden by
//! flags. Output is CSV or JSON, written to a file or stdout, and contains
//! nothing that varies between runs with the same configuration.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rug::Float;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dynamics::{
    default_x_max, gap_report, time_grid, Evolution, InitialKind, InitialState, TimeSeries, REQUIRED_WEIGHT, T0, WEIGHT_FLOOR,
};
use crate::eigenbasis::{norm_series_profile, overlap_with_coherent, reflection_matrix_element, EigenstateRep, Representation};
use crate::error::{Error, Result};
use crate::numerics::PrecisionContext;
use crate::oracle::{norm_squared_quadrature, truncated_fock_reference, QuadratureOptions};
use crate::spectrum::{find_spectrum, k_sequence, ModelParams, Parity, Spectrum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;
pub const EXIT_WEIGHT: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "rabi", version, about = "Exact spectrum and spin dynamics of the quantum Rabi model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Eigenvalues of one or both parity sectors below x_max
    Spectrum(Flags),
    /// Time evolution of <sigma_z> and/or <sigma_x>
    Evolve(Flags),
    /// Self-consistency and oracle checks at the given parameters
    Validate(Flags),
    /// Gaps between levels of equal index in the two sectors
    Gaps(Flags),
}

/// Flags shared by every subcommand; unset ones fall back to the config
/// file and then to defaults.
#[derive(Debug, Default, Args)]
struct Flags {
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    /// `+`, `-` or `both`
    #[arg(long, allow_hyphen_values = true)]
    parity: Option<String>,
    #[arg(long = "x-max")]
    x_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// `sz`, `sx` or `both`
    #[arg(long)]
    observable: Option<String>,
    /// `product` or `cat`
    #[arg(long)]
    initial: Option<String>,
    /// End of the time window in units of T0 = 2 pi / omega
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long = "root-tol")]
    root_tol: Option<f64>,
    #[arg(long = "series-tol")]
    series_tol: Option<f64>,
    /// `csv` or `json`
    #[arg(long)]
    format: Option<String>,
    /// Significant digits of printed numbers
    #[arg(long)]
    digits: Option<usize>,
    /// Add a column with time in units of 1/omega
    #[arg(long = "raw-time")]
    raw_time: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservableChoice {
    Sz,
    Sx,
    Both,
}

impl ObservableChoice {
    fn wants_sz(self) -> bool {
        matches!(self, Self::Sz | Self::Both)
    }

    fn wants_sx(self) -> bool {
        matches!(self, Self::Sx | Self::Both)
    }
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub g: f64,
    pub delta: f64,
    pub omega: f64,
    /// `None` selects both sectors.
    pub parity: Option<Parity>,
    pub x_max: Option<f64>,
    pub alpha: f64,
    pub observable: ObservableChoice,
    pub cat: bool,
    pub t_max: f64,
    pub samples: usize,
    pub bits: u32,
    pub root_tol: f64,
    pub series_tol: f64,
    pub format: OutputFormat,
    pub digits: usize,
    pub raw_time: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ctx = PrecisionContext::default();
        Self {
            g: 0.7,
            delta: 0.25,
            omega: 1.0,
            parity: None,
            x_max: None,
            alpha: 0.0,
            observable: ObservableChoice::Both,
            cat: false,
            t_max: 10.0,
            samples: 2000,
            bits: ctx.mantissa_bits,
            root_tol: ctx.root_tol,
            series_tol: ctx.series_tol,
            format: OutputFormat::Csv,
            digits: 17,
            raw_time: false,
            out: None,
        }
    }
}

fn config_err(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| config_err(key, value))
}

fn parse_parity(value: &str) -> Result<Option<Parity>> {
    match value.trim() {
        "both" | "" => Ok(None),
        v => Parity::from_str(v).map(Some).map_err(|_| config_err("parity", v)),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting; keys match flag names, with `_`
    /// accepted for `-`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('_', "-").as_str() {
            "g" => self.g = parse_num(key, v)?,
            "delta" => self.delta = parse_num(key, v)?,
            "omega" => self.omega = parse_num(key, v)?,
            "parity" => self.parity = parse_parity(v)?,
            "x-max" => self.x_max = Some(parse_num(key, v)?),
            "alpha" => self.alpha = parse_num(key, v)?,
            "observable" => {
                self.observable = match v {
                    "sz" => ObservableChoice::Sz,
                    "sx" => ObservableChoice::Sx,
                    "both" => ObservableChoice::Both,
                    _ => return Err(config_err(key, v)),
                }
            }
            "initial" => {
                self.cat = match v {
                    "product" => false,
                    "cat" => true,
                    _ => return Err(config_err(key, v)),
                }
            }
            "t-max" => self.t_max = parse_num(key, v)?,
            "samples" => self.samples = parse_num(key, v)?,
            "bits" => self.bits = parse_num(key, v)?,
            "root-tol" => self.root_tol = parse_num(key, v)?,
            "series-tol" => self.series_tol = parse_num(key, v)?,
            "format" => {
                self.format = match v {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    _ => return Err(config_err(key, v)),
                }
            }
            "digits" => self.digits = parse_num(key, v)?,
            "raw-time" => self.raw_time = parse_num(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    fn from_flags(f: &Flags) -> Result<Self> {
        let mut c = Self::default();
        if let Some(path) = &f.config {
            c.apply_file(path)?;
        }
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| c.set(k, &v));
        set("g", f.g.map(|v| v.to_string()))?;
        set("delta", f.delta.map(|v| v.to_string()))?;
        set("omega", f.omega.map(|v| v.to_string()))?;
        set("parity", f.parity.clone())?;
        set("x-max", f.x_max.map(|v| v.to_string()))?;
        set("alpha", f.alpha.map(|v| v.to_string()))?;
        set("observable", f.observable.clone())?;
        set("initial", f.initial.clone())?;
        set("t-max", f.t_max.map(|v| v.to_string()))?;
        set("samples", f.samples.map(|v| v.to_string()))?;
        set("bits", f.bits.map(|v| v.to_string()))?;
        set("root-tol", f.root_tol.map(|v| v.to_string()))?;
        set("series-tol", f.series_tol.map(|v| v.to_string()))?;
        set("format", f.format.clone())?;
        set("digits", f.digits.map(|v| v.to_string()))?;
        if f.raw_time {
            c.raw_time = true;
        }
        if let Some(p) = &f.out {
            c.out = Some(p.clone());
        }
        Ok(c)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.g, self.delta, self.omega)
    }

    pub fn ctx(&self) -> Result<PrecisionContext> {
        PrecisionContext::new(self.bits, self.root_tol, self.series_tol)
    }

    fn parities(&self) -> Vec<Parity> {
        match self.parity {
            Some(p) => vec![p],
            None => vec![Parity::Plus, Parity::Minus],
        }
    }

    fn fmt(&self, v: f64) -> String {
        fmt_sig(v, self.digits)
    }
}

/// `v` with `digits` significant digits in scientific notation.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{:.*e}", digits.max(1) - 1, v)
    } else {
        v.to_string()
    }
}

fn fmt_real(v: &Float, digits: usize) -> String {
    if v.is_zero() {
        return fmt_sig(0.0, digits);
    }
    format!("{:.*e}", digits.max(1), v)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::InsufficientWeight { .. } => EXIT_WEIGHT,
        Error::InvalidParameter(_) | Error::Config(_) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn metadata(cfg: &RunConfig, extra: Value) -> Value {
    json!({
        "tool": "rabi",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "cutoffs": {
            "weight_floor": WEIGHT_FLOOR,
            "required_weight": REQUIRED_WEIGHT,
        },
        "details": extra,
    })
}

fn to_json(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (flags, cmd): (&Flags, fn(&RunConfig) -> Result<i32>) = match &cli.command {
        Command::Spectrum(f) => (f, cmd_spectrum),
        Command::Evolve(f) => (f, cmd_evolve),
        Command::Validate(f) => (f, cmd_validate),
        Command::Gaps(f) => (f, cmd_gaps),
    };
    let result = RunConfig::from_flags(flags).and_then(|cfg| cmd(&cfg));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::InsufficientWeight { .. } = e {
                eprintln!("hint: pass a larger --x-max");
            }
            exit_code(&e)
        }
    }
}

fn spectra(cfg: &RunConfig, params: &ModelParams, ctx: &PrecisionContext, x_max: f64) -> Result<Vec<Spectrum>> {
    cfg.parities().into_iter().map(|p| find_spectrum(params, p, x_max, ctx)).collect()
}

/// Writes `(parity, m, x_m, E_m, residual, delta_achieved, juddian)` records.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<i32> {
    let params = cfg.params()?;
    let ctx = cfg.ctx()?;
    let x_max = cfg.x_max.unwrap_or(10.0);
    let all = spectra(cfg, &params, &ctx, x_max)?;
    let d = cfg.digits;
    let text = match cfg.format {
        OutputFormat::Csv => {
            let mut s = String::from("parity,m,x,energy,residual,delta_achieved,juddian\n");
            for sp in &all {
                for p in &sp.points {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        p.parity.symbol(),
                        p.index,
                        fmt_real(&p.x, d),
                        fmt_real(&p.energy, d),
                        fmt_real(&p.residual, 3),
                        fmt_real(&p.delta_achieved, 3),
                        p.juddian
                    );
                }
            }
            s
        }
        OutputFormat::Json => {
            let records: Vec<Value> = all
                .iter()
                .flat_map(|sp| sp.points.iter())
                .map(|p| {
                    json!({
                        "parity": p.parity,
                        "m": p.index,
                        "x": fmt_real(&p.x, d),
                        "energy": fmt_real(&p.energy, d),
                        "residual": p.residual.to_f64(),
                        "delta_achieved": p.delta_achieved.to_f64(),
                        "juddian": p.juddian,
                    })
                })
                .collect();
            let warnings: Vec<&String> = all.iter().flat_map(|s| &s.warnings).collect();
            to_json(&json!({
                "metadata": metadata(cfg, json!({ "x_max": x_max, "warnings": warnings })),
                "records": records,
            }))?
        }
    };
    emit(cfg, &text)?;
    Ok(EXIT_OK)
}

/// Samples the requested observables on `samples` points of `[0, t_max T0]`.
pub fn cmd_evolve(cfg: &RunConfig) -> Result<i32> {
    let params = cfg.params()?;
    let ctx = cfg.ctx()?;
    if cfg.samples < 2 {
        return Err(Error::Config("samples must be at least 2".into()));
    }
    if !(cfg.t_max >= 0.0 && cfg.t_max.is_finite()) {
        return Err(Error::Config(format!("t-max must be non-negative, got {}", cfg.t_max)));
    }
    if cfg.cat && cfg.observable.wants_sz() {
        return Err(Error::Config(
            "the cat preparation is a sigma_x eigenstate; use --observable sx".into(),
        ));
    }
    let x_max = cfg.x_max.unwrap_or_else(|| default_x_max(cfg.alpha, &params));
    let t_over = time_grid(cfg.t_max, cfg.samples);
    let times: Vec<f64> = t_over.iter().map(|t| t * T0).collect();
    let mut runs: Vec<(&str, Evolution, TimeSeries)> = Vec::new();
    let mut preps = Vec::new();
    if cfg.observable.wants_sz() {
        preps.push(("sigma_z", InitialState::new(InitialKind::SigmaZProduct, cfg.alpha, &params)?));
    }
    if cfg.observable.wants_sx() {
        let kind = if cfg.cat {
            InitialKind::CatCombination
        } else {
            InitialKind::SigmaXProduct
        };
        preps.push(("sigma_x", InitialState::new(kind, cfg.alpha, &params)?));
    }
    for (name, st) in preps {
        let ev = Evolution::new(st, &params, x_max, &ctx)?;
        let ts = ev.sample(&times);
        runs.push((name, ev, ts));
    }
    let find = |n: &str| runs.iter().find(|r| r.0 == n);
    let (sz, sx) = (find("sigma_z"), find("sigma_x"));
    // weights of the first requested preparation
    let weights = (runs[0].1.plus.captured_weight, runs[0].1.minus.captured_weight);
    let text = match cfg.format {
        OutputFormat::Csv => {
            let mut s = String::from("t_over_T0,");
            if cfg.raw_time {
                s.push_str("t,");
            }
            s.push_str("sigma_z,sigma_x,captured_weight_plus,captured_weight_minus\n");
            for (k, t) in times.iter().enumerate() {
                s.push_str(&cfg.fmt(t_over[k]));
                s.push(',');
                if cfg.raw_time {
                    s.push_str(&cfg.fmt(t / params.omega));
                    s.push(',');
                }
                for r in [sz, sx] {
                    if let Some(r) = r {
                        s.push_str(&cfg.fmt(r.2.values[k]));
                    }
                    s.push(',');
                }
                s.push_str(&cfg.fmt(weights.0));
                s.push(',');
                s.push_str(&cfg.fmt(weights.1));
                s.push('\n');
            }
            s
        }
        OutputFormat::Json => {
            let series: BTreeMap<&str, Value> = runs
                .iter()
                .map(|(n, ev, ts)| {
                    (
                        *n,
                        json!({
                            "initial": ev.state,
                            "values": ts.values,
                            "diagnostics": ts.diagnostics,
                            "captured_weight_plus": ev.plus.captured_weight,
                            "captured_weight_minus": ev.minus.captured_weight,
                            "retained_plus": ev.plus.len(),
                            "retained_minus": ev.minus.len(),
                            "slow_period_over_T0": ev.slow_period().map(|t| t / T0),
                        }),
                    )
                })
                .collect();
            to_json(&json!({
                "metadata": metadata(cfg, json!({ "x_max": x_max, "precision": ctx })),
                "t_over_T0": t_over,
                "series": series,
            }))?
        }
    };
    emit(cfg, &text)?;
    Ok(EXIT_OK)
}

/// Outcome of one validation check; `passed = None` marks a skipped check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: Option<bool>,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: Some(passed),
            detail,
        }
    }

    fn skip(name: &str, why: &str) -> Self {
        Self {
            name: name.into(),
            passed: None,
            detail: why.into(),
        }
    }

    fn failed(name: &str, e: &Error) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }

    pub fn status(&self) -> &'static str {
        match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn rel_real(a: &Float, b: &Float) -> f64 {
    let d = Float::with_val(a.prec().max(b.prec()), a - b).abs();
    (d / b.clone().abs()).to_f64()
}

fn guard(name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::failed(name, &e))
}

/// Runs the invariant checks that apply to the configured parameters.
pub fn validation_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let params = cfg.params()?;
    let ctx = cfg.ctx()?;
    let x_max = cfg.x_max.unwrap_or(12.0);
    let g = params.coupling();
    let mut checks = Vec::new();
    let spectra = [Parity::Plus, Parity::Minus].map(|p| find_spectrum(&params, p, x_max, &ctx));
    let low = 10usize;

    // series truncation per level at the given precision, without escalation
    checks.push(guard("series-eps", || {
        let mut worst: Option<(f64, usize, Parity)> = None;
        for sp in spectra.iter().flatten() {
            for p in &sp.points {
                let eps = norm_series_profile(&params, p, 4 * (p.x_f64().max(0.0) as usize + 4 * (g * g) as usize) + 400)?.min_eps_rel;
                if worst.is_none_or(|w| eps > w.0) {
                    worst = Some((eps, p.index, p.parity));
                }
            }
        }
        let (eps, m, par) = worst.unwrap_or((0.0, 0, Parity::Plus));
        Ok(Check::new(
            "series-eps",
            eps <= ctx.series_tol,
            format!("worst eps_rel {eps:.2e} at {par} m={m}, target {:.0e}", ctx.series_tol),
        ))
    }));

    let states: Vec<Vec<EigenstateRep>> = spectra
        .iter()
        .map(|s| match s {
            Ok(sp) => sp
                .points
                .iter()
                .take(low + 1)
                .map(|p| EigenstateRep::build(&params, p))
                .collect::<Result<Vec<_>>>(),
            Err(e) => Err(Error::Config(e.to_string())),
        })
        .collect::<Result<_>>()?;

    checks.push(guard("dual-representation", || {
        let mut worst = 0.0f64;
        for st in states.iter().flatten() {
            let (a, _) = st.norm_squared(Representation::Minus);
            let (b, _) = st.norm_squared(Representation::Plus);
            worst = worst.max(rel_real(&b, &a));
            for alpha in [0.0, cfg.alpha] {
                let (a, _) = overlap_with_coherent(st, alpha, Representation::Minus)?;
                let (b, _) = overlap_with_coherent(st, alpha, Representation::Plus)?;
                let scale = Float::with_val(a.prec(), st.norm_sq.clone().sqrt());
                let d = Float::with_val(a.prec(), &a - &b).abs() / scale;
                worst = worst.max(d.to_f64());
            }
        }
        Ok(Check::new(
            "dual-representation",
            worst < 1e-12,
            format!("max relative deviation {worst:.2e}"),
        ))
    }));

    checks.push(guard("reflection-symmetry", || {
        let mut worst = 0.0f64;
        for sector in &states {
            for a in sector.iter().take(6) {
                for b in sector.iter().take(6) {
                    let (ab, _) = reflection_matrix_element(a, b)?;
                    let (ba, _) = reflection_matrix_element(b, a)?;
                    let s = Float::with_val(ab.prec(), &a.norm_sq * &b.norm_sq).sqrt();
                    worst = worst.max((Float::with_val(ab.prec(), &ab - &ba).abs() / s).to_f64());
                }
            }
        }
        Ok(Check::new(
            "reflection-symmetry",
            worst < 1e-10,
            format!("max |T_ab - T_ba| / sqrt(N_a N_b) = {worst:.2e}"),
        ))
    }));

    checks.push(if params.is_decoupled() {
        Check::skip("quadrature-oracle", "needs delta > 0")
    } else {
        guard("quadrature-oracle", || {
            let mut worst = 0.0f64;
            for st in states[0].iter().take(6) {
                let q = norm_squared_quadrature(&st.point.x, &params, st.parity(), &QuadratureOptions::default(), &ctx)?;
                worst = worst.max(rel(q.value, st.norm_sq.to_f64()));
            }
            Ok(Check::new(
                "quadrature-oracle",
                worst < 1e-8,
                format!("max relative deviation {worst:.2e} for m <= 5"),
            ))
        })
    });

    checks.push(guard("parseval", || {
        let xm = cfg.x_max.unwrap_or_else(|| default_x_max(cfg.alpha, &params));
        let plus = find_spectrum(&params, Parity::Plus, xm, &ctx)?;
        let minus = find_spectrum(&params, Parity::Minus, xm, &ctx)?;
        let (p, m) = crate::dynamics::decompose_with(&InitialState::sigma_z(cfg.alpha), &params, &plus, &minus)?;
        let w = p.captured_weight.min(m.captured_weight);
        Ok(Check::new(
            "parseval",
            (REQUIRED_WEIGHT..=1.0 + 1e-10).contains(&w),
            format!("captured weight {w:.12} at alpha = {}", cfg.alpha),
        ))
    }));

    checks.push(guard("fock-oracle", || {
        let f = truncated_fock_reference(&params, 160)?;
        let mut worst = 0.0f64;
        for sp in spectra.iter().flatten() {
            let fx = f.sector(sp.parity).x_values(&params);
            for (a, b) in sp.x_values().iter().zip(&fx).take(low) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(Check::new(
            "fock-oracle",
            worst < 1e-8,
            format!("max |x - x_fock| = {worst:.2e} over the lowest {low} levels (n_max = 160)"),
        ))
    }));

    if params.is_decoupled() {
        checks.push(guard("decoupled-closed-forms", || {
            let mut worst_x = 0.0f64;
            for sp in spectra.iter().flatten() {
                for p in &sp.points {
                    let d = Float::with_val(p.x.prec(), &p.x - p.index as u64).abs().to_f64();
                    worst_x = worst_x.max(d);
                }
            }
            let ks = k_sequence(&ctx.real(0.0), 10, &params, &ctx)?;
            let mut worst_k = 0.0f64;
            let mut exact = ctx.real(1.0);
            for (n, k) in ks.coeffs.iter().enumerate() {
                if n > 0 {
                    exact *= ctx.real(2.0 * g);
                    exact /= n as u32;
                }
                worst_k = worst_k.max(rel_real(k, &exact));
            }
            let ground = &states[0][0];
            let target = ctx.real(5.0 * g * g).exp();
            let worst_n = rel_real(&ground.norm_sq, &target);
            Ok(Check::new(
                "decoupled-closed-forms",
                worst_x < 1e-25 && worst_k < 1e-20 && worst_n < 1e-15,
                format!("|x_n - n| {worst_x:.1e}, K_n(0) {worst_k:.1e}, norm {worst_n:.1e}"),
            ))
        }));
    }
    Ok(checks)
}

/// Prints a PASS/FAIL table (or JSON report); exit 0 iff nothing failed.
pub fn cmd_validate(cfg: &RunConfig) -> Result<i32> {
    let checks = validation_checks(cfg)?;
    let ok = checks.iter().all(|c| c.passed != Some(false));
    let text = match cfg.format {
        OutputFormat::Csv => {
            let mut s = String::new();
            for c in &checks {
                let _ = writeln!(s, "{:<4}  {:<24} {}", c.status(), c.name, c.detail);
            }
            let _ = writeln!(s, "{}", if ok { "all checks passed" } else { "some checks failed" });
            s
        }
        OutputFormat::Json => to_json(&json!({
            "metadata": metadata(cfg, json!({})),
            "passed": ok,
            "checks": checks,
        }))?,
    };
    emit(cfg, &text)?;
    Ok(if ok { EXIT_OK } else { EXIT_FAILED })
}

/// Per-level gaps `E_n^+ - E_n^-` and the period of the smallest one.
pub fn cmd_gaps(cfg: &RunConfig) -> Result<i32> {
    let params = cfg.params()?;
    let ctx = cfg.ctx()?;
    let x_max = cfg.x_max.unwrap_or(10.0);
    let plus = find_spectrum(&params, Parity::Plus, x_max, &ctx)?;
    let minus = find_spectrum(&params, Parity::Minus, x_max, &ctx)?;
    let rows = gap_report(&plus, &minus, usize::MAX);
    let min_gap = rows.iter().map(|r| r.gap.abs()).fold(f64::INFINITY, f64::min);
    let period = (min_gap > 0.0 && min_gap.is_finite()).then(|| 2.0 * std::f64::consts::PI / min_gap / T0);
    let text = match cfg.format {
        OutputFormat::Csv => {
            let mut s = String::from("n,gap,x_plus_minus_n,x_minus_minus_n\n");
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    r.n,
                    cfg.fmt(r.gap),
                    cfg.fmt(r.x_plus_minus_n),
                    cfg.fmt(r.x_minus_minus_n)
                );
            }
            s
        }
        OutputFormat::Json => to_json(&json!({
            "metadata": metadata(cfg, json!({ "x_max": x_max })),
            "rows": rows,
            "min_abs_gap": min_gap,
            "period_of_min_gap_over_T0": period,
        }))?,
    };
    emit(cfg, &text)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# deep coupling\ng = 2.0\ndelta=0.25\nx_max = 7 # inline\nparity = -\n").unwrap();
        let flags = Flags {
            g: Some(0.5),
            config: Some(path),
            ..Flags::default()
        };
        let c = RunConfig::from_flags(&flags).unwrap();
        assert_eq!(c.g, 0.5);
        assert_eq!(c.delta, 0.25);
        assert_eq!(c.x_max, Some(7.0));
        assert_eq!(c.parity, Some(Parity::Minus));
    }

    #[test]
    fn bad_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("colour", "red"), Err(Error::Config(_))));
        assert!(matches!(c.set("format", "xml"), Err(Error::Config(_))));
        assert!(matches!(c.set("g", "abc"), Err(Error::Config(_))));
    }

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.1, 17), "1.0000000000000001e-1");
        assert_eq!(fmt_sig(-2.5, 3), "-2.50e0");
        assert_eq!(fmt_sig(0.1, 17).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn real_formatting() {
        let v = Float::with_val(200, 1) / 3u32;
        assert_eq!(fmt_real(&v, 20), "3.3333333333333333333e-1");
        assert_eq!(fmt_real(&Float::new(64), 3), "0.00e0");
    }

    #[test]
    fn usage_errors_exit_64() {
        assert_eq!(run(["rabi", "spectrum", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["rabi"]), EXIT_USAGE);
        assert_eq!(run(["rabi", "spectrum", "--g", "-1"]), EXIT_USAGE);
    }
}
