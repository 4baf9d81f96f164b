//! The `K_n` recurrence, the G-function and the regular spectrum of each
//! parity sector.
//!
//! All quantities are in units of the mode frequency: `x = E + g^2`, poles of
//! the formalism sit at the non-negative integers.

use std::fmt;

use rug::{Assign, Float};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    brackets_from_samples, refine_root, sample_signs, segment_grid, segments, Bracket, PrecisionContext, Real, ScanOptions, Sign,
};

/// `|x - n|` below this is treated as sitting on the pole at `n`.
pub const POLE_GUARD: f64 = 1e-40;

/// Hard cap on the number of terms of a G-function sum.
pub const MAX_G_TERMS: usize = 100_000;

/// Number of consecutive negligible terms that terminate a G-function sum.
const G_QUIET_TERMS: usize = 20;

/// A root this close to an integer is a candidate for the Juddian condition.
pub const JUDDIAN_WINDOW: f64 = 1e-6;

/// `|K_n(n)|` below this confirms the Juddian condition.
pub const JUDDIAN_K_TOL: f64 = 1e-8;

/// Roots this close to a pole are reported but never expanded into eigenstates.
pub const POLE_COLLISION: f64 = 1e-12;

/// Physical couplings of the Rabi Hamiltonian
/// `H = omega a^dag a + g sigma_x (a + a^dag) + delta sigma_z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub g: f64,
    /// Half the qubit splitting.
    pub delta: f64,
    pub omega: f64,
}

impl ModelParams {
    pub fn new(g: f64, delta: f64, omega: f64) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidParameter(format!("g must be positive, got {g}")));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be non-negative, got {delta}")));
        }
        Ok(Self { g, delta, omega })
    }

    /// Parameters already expressed in units of the mode frequency.
    pub fn normalized(g: f64, delta: f64) -> Result<Self> {
        Self::new(g, delta, 1.0)
    }

    /// `g / omega`
    pub fn coupling(&self) -> f64 {
        self.g / self.omega
    }

    /// `delta / omega`
    pub fn splitting(&self) -> f64 {
        self.delta / self.omega
    }

    /// Same model with the sign of `delta` flipped. The negative-parity
    /// sector of `self` is the positive-parity sector of the result.
    pub fn reflected(&self) -> Self {
        Self {
            delta: -self.delta,
            ..*self
        }
    }

    /// Normalized splitting carrying the sector sign.
    pub fn signed_splitting(&self, parity: Parity) -> f64 {
        parity.sign() * self.splitting()
    }

    pub fn is_decoupled(&self) -> bool {
        self.delta == 0.0
    }
}

/// Eigenvalue of the Z2 symmetry selecting `H_+` or `H_-`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Plus => 1.0,
            Parity::Minus => -1.0,
        }
    }

    pub fn other(self) -> Parity {
        match self {
            Parity::Plus => Parity::Minus,
            Parity::Minus => Parity::Plus,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Parity::Plus => '+',
            Parity::Minus => '-',
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "plus" | "+1" | "1" => Ok(Parity::Plus),
            "-" | "minus" | "-1" => Ok(Parity::Minus),
            other => Err(Error::InvalidParameter(format!("unknown parity {other:?}"))),
        }
    }
}

/// Normalized couplings materialized at one working precision.
#[derive(Clone, Debug)]
pub(crate) struct Couplings {
    pub prec: u32,
    pub g: Real,
    pub two_g: Real,
    pub inv_two_g: Real,
    pub g_sq: Real,
    /// Unsigned normalized splitting (may be negative only for reflected params).
    pub delta: Real,
    pub delta_sq: Real,
    pub decoupled: bool,
}

impl Couplings {
    pub fn new(params: &ModelParams, prec: u32) -> Self {
        let g = Float::with_val(prec, params.g) / params.omega;
        let delta = Float::with_val(prec, params.delta) / params.omega;
        let two_g = Float::with_val(prec, &g * 2u32);
        let inv_two_g = Float::with_val(prec, 1u32) / &two_g;
        let g_sq = Float::with_val(prec, g.square_ref());
        let delta_sq = Float::with_val(prec, delta.square_ref());
        Self {
            prec,
            g,
            two_g,
            inv_two_g,
            g_sq,
            delta,
            delta_sq,
            decoupled: params.delta == 0.0,
        }
    }

    pub fn signed_delta(&self, parity: Parity) -> Real {
        match parity {
            Parity::Plus => self.delta.clone(),
            Parity::Minus => Float::with_val(self.prec, -&self.delta),
        }
    }
}

fn pole_check(d: &Real, x: &Real, n: usize) -> Result<()> {
    if d.is_zero() || d.clone().abs() < POLE_GUARD {
        return Err(Error::PoleProximity {
            x: x.to_f64(),
            n: n as i64,
            guard: POLE_GUARD,
        });
    }
    Ok(())
}

/// `f_n(x) = 2g + (n - x + delta^2 / (x - n)) / (2g)`.
///
/// Even in `delta`, hence shared by both parity sectors. With `delta = 0` the
/// pole term is dropped identically, so integer `x` is admissible.
pub fn f_coeff(n: usize, x: &Real, params: &ModelParams) -> Result<Real> {
    let c = Couplings::new(params, x.prec());
    let mut out = Float::new(c.prec);
    let mut d = Float::new(c.prec);
    f_coeff_into(&mut out, &mut d, n, x, &c)?;
    Ok(out)
}

/// Allocation-free core of [`f_coeff`]; `d` is scratch space.
pub(crate) fn f_coeff_into(out: &mut Real, d: &mut Real, n: usize, x: &Real, c: &Couplings) -> Result<()> {
    d.assign(x - n as u64);
    if c.decoupled {
        // 2g - (x - n) / (2g)
        out.assign(&*d * &c.inv_two_g);
        out.neg_assign_ext();
        *out += &c.two_g;
        return Ok(());
    }
    pole_check(d, x, n)?;
    out.assign(&c.delta_sq / &*d);
    *out -= &*d;
    *out *= &c.inv_two_g;
    *out += &c.two_g;
    Ok(())
}

trait NegAssignExt {
    fn neg_assign_ext(&mut self);
}

impl NegAssignExt for Float {
    fn neg_assign_ext(&mut self) {
        use rug::ops::NegAssign;
        self.neg_assign();
    }
}

/// Streaming evaluation of `K_0, K_1, ...` at fixed `x`.
pub(crate) struct KRecurrence<'a> {
    c: &'a Couplings,
    x: Real,
    n: usize,
    prev: Real,
    cur: Real,
    f: Real,
    scratch: Real,
}

impl<'a> KRecurrence<'a> {
    pub fn new(x: &Real, c: &'a Couplings) -> Self {
        Self {
            c,
            x: Float::with_val(c.prec, x),
            n: 0,
            prev: Float::new(c.prec),
            cur: Float::with_val(c.prec, 1u32),
            f: Float::new(c.prec),
            scratch: Float::new(c.prec),
        }
    }

    pub fn current(&self) -> &Real {
        &self.cur
    }

    /// Advances to `K_{n+1}` via `(n+1) K_{n+1} = f_n K_n - K_{n-1}`.
    pub fn advance(&mut self) -> Result<&Real> {
        f_coeff_into(&mut self.f, &mut self.scratch, self.n, &self.x, self.c)?;
        self.scratch.assign(&self.f * &self.cur);
        self.scratch -= &self.prev;
        self.scratch /= (self.n + 1) as u64;
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.scratch);
        self.n += 1;
        Ok(&self.cur)
    }
}

/// Natural log of `sqrt(n!) |k|` computed from the binary exponent, cheap
/// enough for per-term growth diagnostics.
pub(crate) fn ln_scaled_magnitude(k: &Real, ln_sqrt_factorial: f64) -> f64 {
    if k.is_zero() {
        return f64::NEG_INFINITY;
    }
    let (m, e) = k.to_f64_exp();
    m.abs().ln() + f64::from(e) * std::f64::consts::LN_2 + ln_sqrt_factorial
}

/// Detector for the kink of an asymptotic sequence: the index after which the
/// scaled magnitude keeps growing once it has fallen well below its peak.
#[derive(Clone, Debug)]
pub struct KinkDetector {
    peak: f64,
    gate_open: bool,
    history: Vec<f64>,
    /// Consecutive increases that constitute a kink.
    pub run: usize,
    /// How far (natural log) below the running peak the sequence must have
    /// fallen before increases count.
    pub gate_depth: f64,
}

impl Default for KinkDetector {
    fn default() -> Self {
        Self {
            peak: f64::NEG_INFINITY,
            gate_open: false,
            history: Vec::new(),
            run: 3,
            gate_depth: 1e3f64.ln(),
        }
    }
}

impl KinkDetector {
    /// Feeds `ln |s_n|`; returns the start index of the growth run when a
    /// kink is recognized at this step.
    pub fn push(&mut self, ln_mag: f64) -> Option<usize> {
        let n = self.history.len();
        self.history.push(ln_mag);
        let floor = self.peak - self.gate_depth;
        if ln_mag.is_finite() {
            // an isolated dip is a sign change, not decay
            if !self.gate_open && n > 0 && ln_mag < floor && self.history[n - 1] < floor {
                self.gate_open = true;
            }
            self.peak = self.peak.max(ln_mag);
        }
        if !self.gate_open || n < self.run {
            return None;
        }
        let tail = &self.history[n - self.run..=n];
        let growing = tail.windows(2).all(|w| w[1] > w[0]) && ln_mag < floor;
        growing.then_some(n - self.run)
    }
}

/// The coefficients `K_0..K_N` at one value of the spectral parameter.
#[derive(Clone, Debug)]
pub struct KSequence {
    pub x: Real,
    pub coeffs: Vec<Real>,
    /// First index of sustained growth of `sqrt(n!)|K_n|` after its decay.
    pub kink_index: Option<usize>,
    pub growth_flag: bool,
}

impl KSequence {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `n K_n - f_{n-1} K_{n-1} + K_{n-2}` re-evaluated from stored values.
    pub fn recurrence_residual(&self, n: usize, params: &ModelParams) -> Result<Real> {
        assert!(n >= 1 && n < self.coeffs.len());
        let f = f_coeff(n - 1, &self.x, params)?;
        let prec = self.x.prec();
        let mut r = Float::with_val(prec, &self.coeffs[n] * n as u64);
        r -= Float::with_val(prec, &f * &self.coeffs[n - 1]);
        if n >= 2 {
            r += &self.coeffs[n - 2];
        }
        Ok(r)
    }

    /// `sqrt(n!) |K_n|` in natural-log form, one value per stored index.
    pub fn ln_scaled_magnitudes(&self) -> Vec<f64> {
        let mut ln_sf = 0.0;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, k)| {
                if n > 0 {
                    ln_sf += 0.5 * (n as f64).ln();
                }
                ln_scaled_magnitude(k, ln_sf)
            })
            .collect()
    }
}

/// `K_0(x) .. K_N(x)` with kink diagnostics.
pub fn k_sequence(x: &Real, n_max: usize, params: &ModelParams, ctx: &PrecisionContext) -> Result<KSequence> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("K sequence needs N >= 1".into()));
    }
    let c = Couplings::new(params, ctx.mantissa_bits);
    let mut rec = KRecurrence::new(x, &c);
    let mut coeffs = Vec::with_capacity(n_max + 1);
    coeffs.push(rec.current().clone());
    let mut detector = KinkDetector::default();
    detector.push(0.0);
    let mut kink_index = None;
    let mut ln_sf = 0.0;
    for n in 1..=n_max {
        let k = rec.advance()?;
        ln_sf += 0.5 * (n as f64).ln();
        if kink_index.is_none() {
            kink_index = detector.push(ln_scaled_magnitude(k, ln_sf));
        }
        coeffs.push(k.clone());
    }
    Ok(KSequence {
        x: Float::with_val(ctx.mantissa_bits, x),
        coeffs,
        growth_flag: kink_index.is_some(),
        kink_index,
    })
}

/// `G_p(x) = sum_n K_n(x) (1 - p delta / (x - n)) g^n`, whose zeros are the
/// regular eigenvalues of the sector `p`.
///
/// Summation stops after 20 consecutive terms below `series_tol` times the
/// partial sum (floored at the rounding noise of the largest term).
pub fn g_function(x: &Real, params: &ModelParams, parity: Parity, ctx: &PrecisionContext) -> Result<Real> {
    let c = Couplings::new(params, ctx.mantissa_bits);
    g_function_with(x, &c, parity, ctx)
}

pub(crate) fn g_function_with(x: &Real, c: &Couplings, parity: Parity, ctx: &PrecisionContext) -> Result<Real> {
    let prec = c.prec;
    let x = Float::with_val(prec, x);
    let delta_p = c.signed_delta(parity);
    let mut rec = KRecurrence::new(&x, c);
    let mut gpow = Float::with_val(prec, 1u32);
    let mut sum = Float::new(prec);
    let mut term = Float::new(prec);
    let mut weight = Float::new(prec);
    let mut d = Float::new(prec);
    let mut max_term = 0f64;
    let mut quiet = 0usize;
    let noise = ctx.epsilon();
    for n in 0..MAX_G_TERMS {
        if n > 0 {
            rec.advance()?;
            gpow *= &c.g;
        }
        // 1 - p delta / (x - n)
        if c.decoupled {
            weight.assign(1u32);
        } else {
            d.assign(&x - n as u64);
            pole_check(&d, &x, n)?;
            weight.assign(&delta_p / &d);
            weight.neg_assign_ext();
            weight += 1u32;
        }
        term.assign(rec.current() * &gpow);
        term *= &weight;
        sum += &term;
        if !term.is_finite() {
            return Err(Error::NonFinite { x: x.to_f64() });
        }
        let t = term.to_f64().abs();
        max_term = max_term.max(t);
        let scale = sum.to_f64().abs().max(noise * max_term);
        if t <= ctx.series_tol * scale {
            quiet += 1;
            if quiet >= G_QUIET_TERMS {
                return Ok(sum);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::NonConvergence {
        x: x.to_f64(),
        terms: MAX_G_TERMS,
    })
}

/// One regular eigenvalue of a parity sector.
#[derive(Clone, Debug)]
pub struct SpectralPoint {
    pub parity: Parity,
    /// Position within the sector, ordered by increasing `x`.
    pub index: usize,
    pub x: Real,
    /// `E = x - g^2` in units of the mode frequency.
    pub energy: Real,
    /// `|G(x)|` at the reported root.
    pub residual: Real,
    /// Width of the final root bracket.
    pub delta_achieved: Real,
    pub juddian: bool,
    /// Precision the root was refined at.
    pub ctx: PrecisionContext,
}

impl SpectralPoint {
    pub fn x_f64(&self) -> f64 {
        self.x.to_f64()
    }

    pub fn energy_f64(&self) -> f64 {
        self.energy.to_f64()
    }

    /// Distance to the nearest integer pole and that integer.
    pub fn nearest_pole(&self) -> (i64, f64) {
        let n = self.x.to_f64().round();
        let d = Float::with_val(self.x.prec(), &self.x - n).abs().to_f64();
        (n as i64, d)
    }

    /// True when the root collides with a pole closely enough that the
    /// eigenstate expansions become singular.
    pub fn collides_with_pole(&self, params: &ModelParams) -> bool {
        if params.is_decoupled() {
            return false;
        }
        let (n, d) = self.nearest_pole();
        n >= 0 && d < POLE_COLLISION
    }
}

/// Roots of one sector below `x_max`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub params: ModelParams,
    pub parity: Parity,
    pub x_max: f64,
    pub ctx: PrecisionContext,
    pub points: Vec<SpectralPoint>,
    /// Grid points where the G-function could not be evaluated.
    pub warnings: Vec<String>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn x_values(&self) -> Vec<f64> {
        self.points.iter().map(SpectralPoint::x_f64).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.points.iter().map(SpectralPoint::energy_f64).collect()
    }
}

/// Lower end of the spectral scan, below the sector minimum for any coupling.
pub fn scan_start(params: &ModelParams) -> f64 {
    -2.0 * params.splitting().abs() - 1.0
}

/// All regular eigenvalues `x < x_max` of one sector, each refined to
/// `ctx.root_tol`.
pub fn find_spectrum(params: &ModelParams, parity: Parity, x_max: f64, ctx: &PrecisionContext) -> Result<Spectrum> {
    find_spectrum_with(params, parity, x_max, ctx, &ScanOptions::default())
}

pub fn find_spectrum_with(
    params: &ModelParams,
    parity: Parity,
    x_max: f64,
    ctx: &PrecisionContext,
    opts: &ScanOptions,
) -> Result<Spectrum> {
    if !(x_max > 0.0 && x_max.is_finite()) {
        return Err(Error::InvalidParameter(format!("x_max must be positive, got {x_max}")));
    }
    let c = Couplings::new(params, ctx.mantissa_bits);
    if params.is_decoupled() {
        return Ok(decoupled_spectrum(params, parity, x_max, ctx, &c));
    }
    let x_start = scan_start(params);
    let poles: Vec<f64> = if params.is_decoupled() {
        Vec::new()
    } else {
        (0..=x_max.floor() as i64).map(|n| n as f64).collect()
    };

    let mut warnings = Vec::new();
    let mut brackets: Vec<Bracket> = Vec::new();
    let mut g = |x: &Real| g_function_with(x, &c, parity, ctx);
    for (lo, lo_pole, hi, hi_pole) in segments(x_start, x_max, &poles) {
        let found = scan_segment(&mut g, (lo, lo_pole, hi, hi_pole), opts, ctx, &mut warnings);
        brackets.extend(found);
    }

    let mut points = Vec::with_capacity(brackets.len());
    for bracket in &brackets {
        let refined = refine_root(|x| g_function_with(x, &c, parity, ctx), bracket, ctx)?;
        if refined.root.to_f64() >= x_max {
            continue;
        }
        let energy = Float::with_val(ctx.mantissa_bits, &refined.root - &c.g_sq);
        let juddian = !params.is_decoupled() && is_juddian(&refined.root, params, ctx)?;
        points.push(SpectralPoint {
            parity,
            index: 0,
            x: refined.root,
            energy,
            residual: refined.residual,
            delta_achieved: refined.width,
            juddian,
            ctx: *ctx,
        });
    }
    points.sort_by(|a, b| a.x.partial_cmp(&b.x).expect("roots are finite"));
    for (i, p) in points.iter_mut().enumerate() {
        p.index = i;
    }
    Ok(Spectrum {
        params: *params,
        parity,
        x_max,
        ctx: *ctx,
        points,
        warnings,
    })
}

/// With `delta = 0` every root of `G` has merged into a pole and the sector
/// spectrum is the displaced-oscillator ladder `x_n = n`.
fn decoupled_spectrum(params: &ModelParams, parity: Parity, x_max: f64, ctx: &PrecisionContext, c: &Couplings) -> Spectrum {
    let points = (0..)
        .take_while(|&n| (n as f64) < x_max)
        .map(|n: usize| {
            let x = ctx.int(n as i64);
            SpectralPoint {
                parity,
                index: n,
                energy: Float::with_val(ctx.mantissa_bits, &x - &c.g_sq),
                x,
                residual: ctx.zero(),
                delta_achieved: ctx.zero(),
                juddian: false,
                ctx: *ctx,
            }
        })
        .collect();
    Spectrum {
        params: *params,
        parity,
        x_max,
        ctx: *ctx,
        points,
        warnings: Vec::new(),
    }
}

/// Brackets of one pole-free segment. When both ends are poles the flank
/// signs fix the parity of the root count; a mismatch triggers a 4x denser
/// pass and then flank probes progressively closer to the poles.
fn scan_segment<F>(
    g: &mut F,
    (lo, lo_pole, hi, hi_pole): (f64, bool, f64, bool),
    opts: &ScanOptions,
    ctx: &PrecisionContext,
    warnings: &mut Vec<String>,
) -> Vec<Bracket>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let points = segment_grid(lo, lo_pole, hi, hi_pole, opts, ctx);
    let samples = sample_signs(g, &points, warnings);
    let brackets = brackets_from_samples(&samples);
    if !(lo_pole && hi_pole) || samples.len() < 2 {
        return brackets;
    }
    let flank_parity = |s: &[crate::numerics::Sample]| -> Option<bool> {
        let first = s.first()?.sign?;
        let last = s.last()?.sign?;
        Some(first != last)
    };
    let consistent = |expected: Option<bool>, count: usize| expected.is_none_or(|odd| odd == (count % 2 == 1));
    if consistent(flank_parity(&samples), brackets.len()) {
        return brackets;
    }

    let dense = ScanOptions {
        grid_per_unit: opts.grid_per_unit * 4,
        ..*opts
    };
    let mut candidate = brackets;
    for flank in [opts.pole_flank, 1e-15, 1e-22, 1e-30] {
        let probe = ScanOptions {
            pole_flank: flank,
            ..dense
        };
        let points = segment_grid(lo, lo_pole, hi, hi_pole, &probe, ctx);
        let samples = sample_signs(g, &points, warnings);
        candidate = brackets_from_samples(&samples);
        if consistent(flank_parity(&samples), candidate.len()) {
            return candidate;
        }
    }
    warnings.push(format!(
        "root count in ({lo}, {hi}) inconsistent with flank signs after densification"
    ));
    candidate
}

fn is_juddian(root: &Real, params: &ModelParams, ctx: &PrecisionContext) -> Result<bool> {
    let n = root.to_f64().round();
    if n < 0.0 {
        return Ok(false);
    }
    let d = Float::with_val(root.prec(), root - n).abs().to_f64();
    if d >= JUDDIAN_WINDOW {
        return Ok(false);
    }
    let n = n as usize;
    if n == 0 {
        return Ok(true);
    }
    let xn = ctx.int(n as i64);
    let k = k_sequence(&xn, n, params, ctx)?;
    Ok(k.coeffs[n].to_f64().abs() < JUDDIAN_K_TOL)
}

/// Re-refines an existing root at a different precision, starting from a
/// bracket just wide enough to straddle the old estimate.
pub fn refine_point(params: &ModelParams, point: &SpectralPoint, ctx: &PrecisionContext) -> Result<SpectralPoint> {
    let c = Couplings::new(params, ctx.mantissa_bits);
    let x = Float::with_val(ctx.mantissa_bits, &point.x);
    let g = |y: &Real| g_function_with(y, &c, point.parity, ctx);
    let mut half = point
        .delta_achieved
        .to_f64()
        .max(point.ctx.root_tol)
        .max(x.to_f64().abs().max(1.0) * point.ctx.epsilon() * 16.0);
    let pole_room = if params.is_decoupled() {
        f64::INFINITY
    } else {
        point.nearest_pole().1.max(POLE_GUARD * 4.0) / 2.0
    };
    let mut last_err = None;
    for _ in 0..40 {
        let h = half.min(pole_room);
        let lo = Float::with_val(ctx.mantissa_bits, &x - h);
        let hi = Float::with_val(ctx.mantissa_bits, &x + h);
        let eval = g;
        match (eval(&lo), eval(&hi)) {
            (Ok(fl), Ok(fh)) => match (Sign::of(&fl), Sign::of(&fh)) {
                (Some(sl), Some(sh)) if sl != sh => {
                    let bracket = Bracket::new(lo, hi, sl, sh)?;
                    let refined = refine_root(eval, &bracket, ctx)?;
                    let energy = Float::with_val(ctx.mantissa_bits, &refined.root - &c.g_sq);
                    return Ok(SpectralPoint {
                        x: refined.root,
                        energy,
                        residual: refined.residual,
                        delta_achieved: refined.width,
                        ctx: *ctx,
                        ..point.clone()
                    });
                }
                (None, _) => return exact_root(point, lo, &c, ctx),
                (_, None) => return exact_root(point, hi, &c, ctx),
                _ => {}
            },
            (Err(e), _) | (_, Err(e)) => last_err = Some(e),
        }
        if h >= pole_room {
            break;
        }
        half *= 4.0;
    }
    Err(last_err.unwrap_or(Error::InvalidBracket {
        lo: x.to_f64() - half,
        hi: x.to_f64() + half,
    }))
}

fn exact_root(point: &SpectralPoint, x: Real, c: &Couplings, ctx: &PrecisionContext) -> Result<SpectralPoint> {
    let energy = Float::with_val(ctx.mantissa_bits, &x - &c.g_sq);
    Ok(SpectralPoint {
        x,
        energy,
        residual: ctx.zero(),
        delta_achieved: ctx.zero(),
        ctx: *ctx,
        ..point.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PrecisionContext {
        PrecisionContext::default()
    }

    fn reference_params() -> ModelParams {
        ModelParams::normalized(0.7, 0.25).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 0.1, 1.0).is_err());
        assert!(ModelParams::new(0.5, -0.1, 1.0).is_err());
        assert!(ModelParams::new(0.5, 0.1, 0.0).is_err());
        let p = ModelParams::new(1.4, 0.5, 2.0).unwrap();
        assert_eq!((p.coupling(), p.splitting()), (0.7, 0.25));
    }

    #[test]
    fn f_coeff_hand_value() {
        // 1.4 + (-1 + 0.0625) / 1.4
        let c = ctx();
        let f = f_coeff(0, &c.real(1.0), &reference_params()).unwrap();
        let expected = c.parse("1.4").unwrap() + (c.parse("-0.9375").unwrap() / c.parse("1.4").unwrap());
        let p = ModelParams::normalized(0.7, 0.25).unwrap();
        // params are f64, so compare at f64-level accuracy of g
        assert!((f.to_f64() - expected.to_f64()).abs() < 1e-15, "{f} vs {expected}");
        assert!((f.to_f64() - 0.730_357_142_857_142_9).abs() < 1e-15);
        let _ = p;
    }

    #[test]
    fn f_coeff_decoupled_at_pole_is_two_g() {
        let p = ModelParams::normalized(0.9, 0.0).unwrap();
        let f = f_coeff(0, &ctx().real(0.0), &p).unwrap();
        assert!((f.to_f64() - 1.8).abs() < 1e-15);
    }

    #[test]
    fn f_coeff_pole_behaviour() {
        let c = ctx();
        let p = reference_params();
        for eps in [1e-20, -1e-20] {
            let x = c.real(2.0) + eps;
            let f = f_coeff(2, &x, &p).unwrap();
            let leading = 0.0625 / (1.4 * eps);
            assert!(((f.to_f64() - leading) / leading).abs() < 1e-10);
        }
        assert!(matches!(
            f_coeff(2, &(c.real(2.0) + 1e-45), &p),
            Err(Error::PoleProximity { n: 2, .. })
        ));
    }

    #[test]
    fn decoupled_k_sequence_is_exponential_series() {
        let c = ctx();
        let g = 0.8;
        let p = ModelParams::normalized(g, 0.0).unwrap();
        let k = k_sequence(&c.real(0.0), 30, &p, &c).unwrap();
        let mut expected = c.real(1.0);
        let two_g = c.real(2.0 * g);
        for n in 0..=30usize {
            if n > 0 {
                expected = expected * &two_g / n as u32;
            }
            let rel = Float::with_val(200, &k.coeffs[n] - &expected) / &expected;
            assert!(rel.abs().to_f64() < 1e-40, "n={n}");
        }
    }

    #[test]
    fn recurrence_identity_holds() {
        let c = ctx();
        let p = reference_params();
        let x = c.parse("3.3").unwrap();
        let k = k_sequence(&x, 60, &p, &c).unwrap();
        for n in 1..=60 {
            let scale = k.coeffs[n].to_f64().abs().max(k.coeffs[n - 1].to_f64().abs()) * n as f64 + 1e-300;
            let r = k.recurrence_residual(n, &p).unwrap().to_f64().abs();
            assert!(r <= 1e-50 * scale.max(1.0), "n={n} r={r}");
        }
    }

    #[test]
    fn decoupled_g_is_closed_form() {
        // K_n(0) = (2g)^n / n!, so G(0) = exp(2 g^2)
        let c = ctx();
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        let v = g_function(&c.real(0.0), &p, Parity::Plus, &c).unwrap();
        let e = Float::with_val(200, 2u32).exp();
        assert!((Float::with_val(200, &v - &e) / &e).abs().to_f64() < 1e-14);
    }

    #[test]
    fn small_delta_roots_approach_integers() {
        let c = ctx();
        let p = ModelParams::normalized(1.0, 1e-8).unwrap();
        let s = find_spectrum(&p, Parity::Plus, 4.5, &c).unwrap();
        assert_eq!(s.len(), 5, "{:?}", s.x_values());
        for (n, x) in s.x_values().into_iter().enumerate() {
            assert!((x - n as f64).abs() < 1e-6, "n={n} x={x}");
        }
    }

    #[test]
    fn sector_map_is_sign_flip_of_delta() {
        let c = ctx();
        let p = reference_params();
        for x in ["-0.3", "0.4", "2.7", "7.1"] {
            let x = c.parse(x).unwrap();
            let a = g_function(&x, &p, Parity::Minus, &c).unwrap();
            let b = g_function(&x, &p.reflected(), Parity::Plus, &c).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ground_state_bracket_near_reference_value() {
        let c = ctx();
        let p = reference_params();
        let gl = g_function(&c.real(0.05), &p, Parity::Plus, &c).unwrap();
        let gh = g_function(&c.real(0.07), &p, Parity::Plus, &c).unwrap();
        assert_ne!(Sign::of(&gl), Sign::of(&gh));
    }

    #[test]
    fn kink_detector_ignores_initial_hump() {
        let mut d = KinkDetector::default();
        // rises, falls by 10 e-folds, then grows again
        let seq: Vec<f64> = (0..10)
            .map(|n| n as f64)
            .chain((0..20).map(|n| 9.0 - n as f64))
            .chain((0..5).map(|n| -10.0 + n as f64))
            .collect();
        let mut hit = None;
        for v in seq {
            if let Some(k) = d.push(v) {
                hit = Some(k);
                break;
            }
        }
        assert_eq!(hit, Some(30));
    }

    #[test]
    fn decoupled_spectrum_is_integers() {
        let c = ctx();
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        let s = find_spectrum(&p, Parity::Plus, 5.5, &c).unwrap();
        let xs = s.x_values();
        assert_eq!(xs.len(), 6, "{xs:?}");
        for (n, pt) in s.points.iter().enumerate() {
            let err = Float::with_val(200, &pt.x - n as u32).abs().to_f64();
            assert!(err < 1e-25, "n={n} err={err}");
            assert!(!pt.juddian);
        }
    }

    #[test]
    fn reference_ground_state_and_fifth_level() {
        let c = ctx();
        let s = find_spectrum(&reference_params(), Parity::Plus, 6.0, &c).unwrap();
        let xs = s.x_values();
        assert!((xs[0] - 0.06038).abs() < 5e-5, "{xs:?}");
        assert!((xs[5] - 4.9355).abs() < 5e-4, "{xs:?}");
        for w in xs.windows(2) {
            assert!(w[0] < w[1]);
        }
        for p in &s.points {
            assert!(p.delta_achieved.to_f64() <= 1e-30);
            let e = Float::with_val(200, &p.x - &p.energy).to_f64();
            assert!((e - 0.49).abs() < 1e-15);
        }
    }

    #[test]
    fn refine_point_raises_precision() {
        let c = PrecisionContext::double();
        let s = find_spectrum(&reference_params(), Parity::Plus, 1.0, &c).unwrap();
        let hi = refine_point(&reference_params(), &s.points[0], &ctx()).unwrap();
        assert_eq!(hi.x.prec(), 200);
        assert!(hi.delta_achieved.to_f64() <= 1e-30);
        let shift = Float::with_val(200, &hi.x - &s.points[0].x).abs().to_f64();
        assert!(shift <= 1e-10);
    }
}
