//! Configurable-precision scalars, pole-aware root bracketing and refinement,
//! and Gauss–Legendre nodes.
//!
//! Every real quantity is a [`rug::Float`] whose precision is taken from an
//! explicit [`PrecisionContext`]; nothing in the crate consults global
//! precision state.

use std::cmp::Ordering;

use rug::ops::NegAssign;
use rug::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working scalar for all high-precision computations.
pub type Real = Float;

/// `(mantissa_bits, root_tol)` rungs tried in order when an asymptotic series
/// hits its kink before reaching the requested relative error.
pub const ESCALATION_LADDER: [(u32, f64); 3] = [(53, 1e-10), (200, 1e-30), (400, 1e-60)];

/// Offset from a pole at which the flank samples of a scan are taken.
pub const DEFAULT_POLE_FLANK: f64 = 1e-9;

/// Default sampling density for root bracketing (points per unit length).
pub const DEFAULT_GRID_PER_UNIT: u32 = 64;

/// Binary precision plus the two accuracy targets that travel with it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionContext {
    pub mantissa_bits: u32,
    /// Target width of a refined root bracket.
    pub root_tol: f64,
    /// Target relative truncation error of asymptotic series.
    pub series_tol: f64,
}

impl Default for PrecisionContext {
    fn default() -> Self {
        Self {
            mantissa_bits: 200,
            root_tol: 1e-30,
            series_tol: 1e-15,
        }
    }
}

impl PrecisionContext {
    pub fn new(mantissa_bits: u32, root_tol: f64, series_tol: f64) -> Result<Self> {
        if mantissa_bits < 53 {
            return Err(Error::InvalidParameter(format!(
                "mantissa_bits must be at least 53, got {mantissa_bits}"
            )));
        }
        if !(root_tol > 0.0 && root_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("root_tol must be positive, got {root_tol}")));
        }
        if !(series_tol > 0.0 && series_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("series_tol must be positive, got {series_tol}")));
        }
        Ok(Self {
            mantissa_bits,
            root_tol,
            series_tol,
        })
    }

    /// The double-precision setup: 53 bits, roots to `1e-10`.
    pub fn double() -> Self {
        Self {
            mantissa_bits: 53,
            root_tol: 1e-10,
            series_tol: 1e-15,
        }
    }

    pub fn with_bits(self, mantissa_bits: u32) -> Self {
        Self { mantissa_bits, ..self }
    }

    pub fn with_root_tol(self, root_tol: f64) -> Self {
        Self { root_tol, ..self }
    }

    pub fn with_series_tol(self, series_tol: f64) -> Self {
        Self { series_tol, ..self }
    }

    pub fn real(&self, v: f64) -> Real {
        Float::with_val(self.mantissa_bits, v)
    }

    pub fn zero(&self) -> Real {
        Float::new(self.mantissa_bits)
    }

    pub fn int(&self, n: i64) -> Real {
        Float::with_val(self.mantissa_bits, n)
    }

    /// Parses a decimal literal directly at working precision, avoiding the
    /// binary rounding a detour through `f64` would introduce.
    pub fn parse(&self, s: &str) -> Result<Real> {
        let parsed = Float::parse(s.trim()).map_err(|e| Error::InvalidParameter(format!("cannot parse {s:?} as a real: {e}")))?;
        Ok(Float::with_val(self.mantissa_bits, parsed))
    }

    /// Unit roundoff `2^(1 - bits)`.
    pub fn epsilon(&self) -> f64 {
        2f64.powi(1 - self.mantissa_bits as i32)
    }

    /// Next rung of [`ESCALATION_LADDER`] above the current precision, keeping
    /// the series target. `None` once the top rung is reached.
    pub fn escalated(&self) -> Option<Self> {
        ESCALATION_LADDER
            .iter()
            .find(|(bits, _)| *bits > self.mantissa_bits)
            .map(|&(bits, tol)| Self {
                mantissa_bits: bits,
                root_tol: tol.min(self.root_tol),
                series_tol: self.series_tol,
            })
    }
}

/// Strict sign of a nonzero function value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    pub fn of(v: &Real) -> Option<Sign> {
        match v.cmp0() {
            Some(Ordering::Less) => Some(Sign::Negative),
            Some(Ordering::Greater) => Some(Sign::Positive),
            _ => None,
        }
    }
}

/// An interval known to contain an odd number of sign changes of some
/// function and no pole of it.
#[derive(Clone, Debug)]
pub struct Bracket {
    pub lo: Real,
    pub hi: Real,
    pub f_lo_sign: Sign,
    pub f_hi_sign: Sign,
}

impl Bracket {
    pub fn new(lo: Real, hi: Real, f_lo_sign: Sign, f_hi_sign: Sign) -> Result<Self> {
        if lo >= hi || f_lo_sign == f_hi_sign {
            return Err(Error::InvalidBracket {
                lo: lo.to_f64(),
                hi: hi.to_f64(),
            });
        }
        Ok(Self {
            lo,
            hi,
            f_lo_sign,
            f_hi_sign,
        })
    }

    pub fn width(&self) -> Real {
        Float::with_val(self.lo.prec().max(self.hi.prec()), &self.hi - &self.lo)
    }
}

/// Knobs of the sampling scan behind [`bracket_roots`].
#[derive(Clone, Copy, Debug)]
pub struct ScanOptions {
    pub grid_per_unit: u32,
    /// Distance from a pole of the first/last sample of a segment.
    pub pole_flank: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            grid_per_unit: DEFAULT_GRID_PER_UNIT,
            pole_flank: DEFAULT_POLE_FLANK,
        }
    }
}

/// Result of a bracketing scan.
#[derive(Clone, Debug, Default)]
pub struct BracketScan {
    pub brackets: Vec<Bracket>,
    /// One entry per grid point whose evaluation failed.
    pub warnings: Vec<String>,
}

/// Sample of a scan: abscissa and the sign of f there (`None` for an exact zero).
#[derive(Clone, Debug)]
pub struct Sample {
    pub x: Real,
    pub sign: Option<Sign>,
}

/// Locates sign changes of `f` on `interval` with a uniform grid of
/// `grid_per_unit` points per unit length. The interval is split at `poles`
/// so that no bracket straddles one.
pub fn bracket_roots<F>(f: F, interval: (f64, f64), poles: &[f64], grid_per_unit: u32, ctx: &PrecisionContext) -> Result<BracketScan>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let opts = ScanOptions {
        grid_per_unit,
        ..ScanOptions::default()
    };
    bracket_roots_with(f, interval, poles, &opts, ctx)
}

/// [`bracket_roots`] with explicit scan options.
pub fn bracket_roots_with<F>(
    mut f: F,
    interval: (f64, f64),
    poles: &[f64],
    opts: &ScanOptions,
    ctx: &PrecisionContext,
) -> Result<BracketScan>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let (a, b) = interval;
    if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidParameter(format!("empty interval [{a}, {b}]")));
    }
    if opts.grid_per_unit < 2 {
        return Err(Error::InvalidParameter("grid_per_unit must be at least 2".into()));
    }
    if poles.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("poles must be sorted".into()));
    }

    let mut scan = BracketScan::default();
    for (lo, lo_is_pole, hi, hi_is_pole) in segments(a, b, poles) {
        let points = segment_grid(lo, lo_is_pole, hi, hi_is_pole, opts, ctx);
        let samples = sample_signs(&mut f, &points, &mut scan.warnings);
        scan.brackets.extend(brackets_from_samples(&samples));
    }
    Ok(scan)
}

/// Splits `[a, b]` at the poles lying strictly inside it.
pub fn segments(a: f64, b: f64, poles: &[f64]) -> Vec<(f64, bool, f64, bool)> {
    let mut edges: Vec<(f64, bool)> = vec![(a, poles.contains(&a))];
    edges.extend(poles.iter().filter(|&&p| p > a && p < b).map(|&p| (p, true)));
    edges.push((b, poles.contains(&b)));
    edges.windows(2).map(|w| (w[0].0, w[0].1, w[1].0, w[1].1)).collect()
}

/// Grid of a single pole-free segment: globally aligned points `k / grid_per_unit`
/// strictly inside, plus the (flank-offset) segment ends.
pub fn segment_grid(lo: f64, lo_is_pole: bool, hi: f64, hi_is_pole: bool, opts: &ScanOptions, ctx: &PrecisionContext) -> Vec<Real> {
    let h = 1.0 / f64::from(opts.grid_per_unit);
    let start = if lo_is_pole { lo + opts.pole_flank } else { lo };
    let end = if hi_is_pole { hi - opts.pole_flank } else { hi };
    let mut points = vec![ctx.real(start)];
    let k0 = (start / h).floor() as i64 + 1;
    let mut k = k0;
    loop {
        let x = k as f64 * h;
        if x >= end {
            break;
        }
        if x > start {
            points.push(ctx.real(x));
        }
        k += 1;
    }
    if end > start {
        points.push(ctx.real(end));
    }
    points
}

pub fn sample_signs<F>(f: &mut F, points: &[Real], warnings: &mut Vec<String>) -> Vec<Sample>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let mut samples = Vec::with_capacity(points.len());
    for x in points {
        match f(x) {
            Ok(v) if v.is_nan() => warnings.push(format!("NaN at x = {}", x.to_f64())),
            Ok(v) => samples.push(Sample {
                x: x.clone(),
                sign: Sign::of(&v),
            }),
            Err(e) => warnings.push(format!("evaluation failed at x = {}: {e}", x.to_f64())),
        }
    }
    samples
}

/// Brackets from consecutive samples of opposite sign. An exact zero at a grid
/// point yields a bracket spanning its two neighbours when they straddle it.
pub fn brackets_from_samples(samples: &[Sample]) -> Vec<Bracket> {
    let mut out = Vec::new();
    let mut last: Option<&Sample> = None;
    for s in samples {
        let Some(sign) = s.sign else { continue };
        if let Some(prev) = last {
            let prev_sign = prev.sign.expect("only signed samples are retained");
            if prev_sign != sign {
                out.push(Bracket {
                    lo: prev.x.clone(),
                    hi: s.x.clone(),
                    f_lo_sign: prev_sign,
                    f_hi_sign: sign,
                });
            }
        }
        last = Some(s);
    }
    out
}

/// A refined root: midpoint of the final bracket, `|f(root)|`, and the final
/// bracket width.
#[derive(Clone, Debug)]
pub struct RefinedRoot {
    pub root: Real,
    pub residual: Real,
    pub width: Real,
}

/// Shrinks `bracket` until its width is at most `ctx.root_tol`.
///
/// Illinois-modified regula falsi; a bisection step is forced whenever the
/// bracket failed to halve over two iterations or the secant point leaves the
/// interior, so the iteration count is bounded by the bisection count.
pub fn refine_root<F>(mut f: F, bracket: &Bracket, ctx: &PrecisionContext) -> Result<RefinedRoot>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let prec = ctx.mantissa_bits;
    let tol = ctx.real(ctx.root_tol);
    let mut lo = Float::with_val(prec, &bracket.lo);
    let mut hi = Float::with_val(prec, &bracket.hi);
    if lo >= hi {
        return Err(Error::InvalidBracket {
            lo: lo.to_f64(),
            hi: hi.to_f64(),
        });
    }
    let mut f_lo = checked(&mut f, &lo)?;
    let mut f_hi = checked(&mut f, &hi)?;
    if f_lo.is_zero() {
        return finish(f, lo.clone(), lo, ctx);
    }
    if f_hi.is_zero() {
        return finish(f, hi.clone(), hi, ctx);
    }
    if Sign::of(&f_lo) == Sign::of(&f_hi) {
        return Err(Error::InvalidBracket {
            lo: lo.to_f64(),
            hi: hi.to_f64(),
        });
    }

    // Illinois bookkeeping: which end was retained last (-1 lo, +1 hi).
    let mut retained = 0i8;
    let mut widths: Vec<Real> = Vec::new();
    let max_iter = 64 + 4 * prec as usize;
    for iter in 0..max_iter {
        let width = Float::with_val(prec, &hi - &lo);
        if width <= tol {
            break;
        }
        let stalled = widths.len() >= 2 && {
            let two_ago = &widths[widths.len() - 2];
            Float::with_val(prec, &width * 2u32) > *two_ago
        };
        widths.push(width.clone());

        let quarter_tol = Float::with_val(prec, &tol / 4u32);
        let mut c = if stalled || iter % 8 == 7 {
            Float::with_val(prec, &lo + &hi) / 2u32
        } else {
            // c = (lo f_hi - hi f_lo) / (f_hi - f_lo)
            let num = Float::with_val(prec, &lo * &f_hi) - Float::with_val(prec, &hi * &f_lo);
            let den = Float::with_val(prec, &f_hi - &f_lo);
            let c = num / den;
            if c.is_finite() && c > lo && c < hi {
                c
            } else {
                Float::with_val(prec, &lo + &hi) / 2u32
            }
        };
        // Keep the probe at least tol/4 inside so both ends keep moving.
        let min_c = Float::with_val(prec, &lo + &quarter_tol);
        let max_c = Float::with_val(prec, &hi - &quarter_tol);
        if c < min_c {
            c = min_c;
        } else if c > max_c {
            c = max_c;
        }

        let f_c = checked(&mut f, &c)?;
        if f_c.is_zero() {
            return finish(f, c.clone(), c, ctx);
        }
        if Sign::of(&f_c) == Sign::of(&f_lo) {
            lo = c;
            f_lo = f_c;
            if retained == 1 {
                f_hi /= 2u32;
            }
            retained = 1;
        } else {
            hi = c;
            f_hi = f_c;
            if retained == -1 {
                f_lo /= 2u32;
            }
            retained = -1;
        }
    }
    finish(f, lo, hi, ctx)
}

fn finish<F>(mut f: F, lo: Real, hi: Real, ctx: &PrecisionContext) -> Result<RefinedRoot>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let prec = ctx.mantissa_bits;
    let width = Float::with_val(prec, &hi - &lo);
    let root = Float::with_val(prec, &lo + &hi) / 2u32;
    let residual = checked(&mut f, &root)?.abs();
    Ok(RefinedRoot { root, residual, width })
}

fn checked<F>(f: &mut F, x: &Real) -> Result<Real>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let v = f(x)?;
    if !v.is_finite() {
        return Err(Error::NonFinite { x: x.to_f64() });
    }
    Ok(v)
}

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`, computed by Newton
/// iteration on the Legendre recurrence at working precision.
pub fn quad_nodes_radial(n: usize, ctx: &PrecisionContext) -> Result<Vec<(Real, Real)>> {
    if n == 0 {
        return Err(Error::InvalidParameter("quadrature order must be at least 1".into()));
    }
    let prec = ctx.mantissa_bits + 16;
    let mut nodes = Vec::with_capacity(n);
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, refined first in f64.
        let theta = std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5);
        let mut guess = theta.cos();
        for _ in 0..6 {
            let (p, dp) = legendre_f64(n, guess);
            guess -= p / dp;
        }
        let mut x = Float::with_val(prec, guess);
        let stop = Float::with_val(prec, Float::i_exp(1, 8 - prec as i32));
        let mut converged_steps = 0;
        for _ in 0..64 {
            let (p, dp) = legendre(n, &x);
            let step = p / &dp;
            x -= &step;
            if step.abs() <= stop {
                converged_steps += 1;
                if converged_steps == 2 {
                    break;
                }
            }
        }
        let (_, dp) = legendre(n, &x);
        let one_minus_x2 = Float::with_val(prec, 1u32) - Float::with_val(prec, x.square_ref());
        let w = Float::with_val(prec, 2u32) / (one_minus_x2 * dp.square());
        nodes.push((x, w));
    }

    let mut out: Vec<(Real, Real)> = Vec::with_capacity(n);
    let to_unit = |x: &Float, w: &Float, negate: bool| {
        let mut t = Float::with_val(prec, x);
        if negate {
            t.neg_assign();
        }
        let node = Float::with_val(ctx.mantissa_bits, (t + 1u32) / 2u32);
        let weight = Float::with_val(ctx.mantissa_bits, w / 2u32);
        (node, weight)
    };
    // Ascending order on [0, 1]: negated roots first.
    for (x, w) in nodes.iter() {
        out.push(to_unit(x, w, true));
    }
    let mirrored: Vec<(Real, Real)> = nodes.iter().rev().skip(n % 2).map(|(x, w)| to_unit(x, w, false)).collect();
    out.extend(mirrored);
    if n % 2 == 1 {
        // Middle node is exactly 1/2.
        let mid = n / 2;
        out[mid].0 = Float::with_val(ctx.mantissa_bits, 0.5);
    }
    Ok(out)
}

fn legendre(n: usize, x: &Float) -> (Float, Float) {
    let prec = x.prec();
    let mut p0 = Float::with_val(prec, 1u32);
    let mut p1 = Float::with_val(prec, x);
    for k in 2..=n {
        // k P_k = (2k-1) x P_{k-1} - (k-1) P_{k-2}
        let a = Float::with_val(prec, x * &p1) * (2 * k as u32 - 1);
        let b = Float::with_val(prec, &p0 * (k as u32 - 1));
        let p2 = (a - b) / k as u32;
        p0 = std::mem::replace(&mut p1, p2);
    }
    if n == 0 {
        return (Float::with_val(prec, 1u32), Float::new(prec));
    }
    // P'_n = n (x P_n - P_{n-1}) / (x^2 - 1)
    let x2m1 = Float::with_val(prec, x.square_ref()) - 1u32;
    let dp = Float::with_val(prec, x * &p1) - &p0;
    let dp = dp * n as u32 / x2m1;
    (p1, dp)
}

fn legendre_f64(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PrecisionContext {
        PrecisionContext::default()
    }

    #[test]
    fn rejects_low_precision() {
        assert!(PrecisionContext::new(52, 1e-10, 1e-15).is_err());
        assert!(PrecisionContext::new(53, 0.0, 1e-15).is_err());
        assert!(PrecisionContext::new(53, 1e-10, -1.0).is_err());
    }

    #[test]
    fn ladder_climbs() {
        let c = PrecisionContext::double().escalated().unwrap();
        assert_eq!((c.mantissa_bits, c.root_tol), (200, 1e-30));
        let c = c.escalated().unwrap();
        assert_eq!((c.mantissa_bits, c.root_tol), (400, 1e-60));
        assert!(c.escalated().is_none());
    }

    #[test]
    fn tangential_zero_gives_no_bracket() {
        let scan = bracket_roots(|x| Ok(x.clone().square()), (-1.0, 1.0), &[], 64, &ctx()).unwrap();
        assert!(scan.brackets.is_empty());
    }

    #[test]
    fn sine_zeros_are_bracketed() {
        let c = ctx();
        let pi = Float::with_val(c.mantissa_bits, rug::float::Constant::Pi);
        let scan = bracket_roots(|x| Ok(Float::with_val(x.prec(), x * &pi).sin()), (0.5, 2.5), &[], 64, &c).unwrap();
        assert_eq!(scan.brackets.len(), 2);
        for (b, target) in scan.brackets.iter().zip([1.0, 2.0]) {
            assert!(b.lo.to_f64() <= target && b.hi.to_f64() >= target);
        }
    }

    #[test]
    fn brackets_never_straddle_poles() {
        // 1/(x - 1) changes sign only across its pole.
        let scan = bracket_roots(
            |x| Ok(Float::with_val(x.prec(), 1u32) / Float::with_val(x.prec(), x - 1u32)),
            (0.0, 2.0),
            &[1.0],
            64,
            &ctx(),
        )
        .unwrap();
        assert!(scan.brackets.is_empty());
    }

    #[test]
    fn failing_points_become_warnings() {
        let scan = bracket_roots(
            |x| {
                if (x.to_f64() - 0.5).abs() < 1e-12 {
                    Err(Error::NonFinite { x: 0.5 })
                } else {
                    Ok(Float::with_val(x.prec(), x - 0.3))
                }
            },
            (0.0, 1.0),
            &[],
            4,
            &ctx(),
        )
        .unwrap();
        assert_eq!(scan.warnings.len(), 1);
        assert_eq!(scan.brackets.len(), 1);
    }

    #[test]
    fn refines_sqrt_two() {
        let c = ctx();
        let b = Bracket::new(c.real(1.0), c.real(2.0), Sign::Negative, Sign::Positive).unwrap();
        let r = refine_root(|x| Ok(Float::with_val(x.prec(), x.square_ref()) - 2u32), &b, &c).unwrap();
        let sqrt2 = Float::with_val(c.mantissa_bits, 2u32).sqrt();
        let err = Float::with_val(c.mantissa_bits, &r.root - &sqrt2).abs();
        assert!(err.to_f64() < 1e-30, "error {err}");
        assert!(r.width.to_f64() <= 1e-30);
        assert!(format!("{}", r.root).starts_with("1.41421356237309504880"));
    }

    #[test]
    fn refines_identity_to_zero() {
        let c = ctx();
        let b = Bracket::new(c.real(-1.0), c.real(1.0), Sign::Negative, Sign::Positive).unwrap();
        let r = refine_root(|x| Ok(x.clone()), &b, &c).unwrap();
        assert!(r.root.to_f64().abs() <= 1e-30);
    }

    #[test]
    fn non_finite_values_abort() {
        let c = ctx();
        let b = Bracket::new(c.real(-1.0), c.real(1.0), Sign::Negative, Sign::Positive).unwrap();
        let mut calls = 0;
        let r = refine_root(
            |x| {
                calls += 1;
                if calls > 2 {
                    Ok(Float::with_val(x.prec(), f64::NAN))
                } else {
                    Ok(x.clone())
                }
            },
            &b,
            &c,
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn invalid_bracket_rejected() {
        let c = ctx();
        assert!(Bracket::new(c.real(1.0), c.real(0.0), Sign::Negative, Sign::Positive).is_err());
        assert!(Bracket::new(c.real(0.0), c.real(1.0), Sign::Positive, Sign::Positive).is_err());
    }

    #[test]
    fn midpoint_rule() {
        let nodes = quad_nodes_radial(1, &ctx()).unwrap();
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].0.to_f64(), 0.5);
        assert_eq!(nodes[0].1.to_f64(), 1.0);
    }

    #[test]
    fn two_point_rule() {
        let c = ctx();
        let nodes = quad_nodes_radial(2, &c).unwrap();
        let offset = 1.0 / (2.0 * 3f64.sqrt());
        assert!((nodes[0].0.to_f64() - (0.5 - offset)).abs() < 1e-15);
        assert!((nodes[1].0.to_f64() - (0.5 + offset)).abs() < 1e-15);
        for (_, w) in &nodes {
            assert!((w.to_f64() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn four_point_first_moment() {
        let c = ctx();
        let nodes = quad_nodes_radial(4, &c).unwrap();
        let mut m = c.zero();
        for (x, w) in &nodes {
            m += Float::with_val(c.mantissa_bits, x * w);
        }
        assert!((m - 0.5f64).abs().to_f64() < 1e-50);
    }

    #[test]
    fn moments_exact_up_to_degree_2n_minus_1() {
        let c = ctx();
        for n in [3usize, 8, 17] {
            let nodes = quad_nodes_radial(n, &c).unwrap();
            let mut wsum = c.zero();
            for (_, w) in &nodes {
                wsum += w;
            }
            assert!((wsum - 1u32).abs().to_f64() < 10.0 * c.epsilon());
            for k in 0..(2 * n as u32) {
                let mut s = c.zero();
                for (x, w) in &nodes {
                    let xk = Float::with_val(c.mantissa_bits, rug::ops::Pow::pow(x, k));
                    s += xk * w;
                }
                let exact = Float::with_val(c.mantissa_bits, 1u32) / (k + 1);
                assert!((s - exact).abs().to_f64() < 1e-25, "n={n} k={k}");
            }
        }
    }
}
