//! Eigenstates in the two displaced-oscillator bases `|n; -g>` and `|n; +g>`,
//! their norms, overlaps with coherent states and the matrix elements needed
//! for the spin dynamics.
//!
//! For an eigenvalue `x_m` of sector `p` the two expansions are
//!
//! ```text
//! |psi> = e^{g^2/2} sum_n sqrt(n!) K_n (-1)^n            |n; -g>
//!       = e^{g^2/2} sum_n sqrt(n!) K_n delta_p / (x - n) |n; +g>
//! ```
//!
//! Every sum is truncated with the relative-error estimate
//! `eps(N) = |t_N| / sum_{n<N} |t_n|`, stopping after two consecutive values
//! below `series_tol`.

use rug::{Assign, Float};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{PrecisionContext, Real};
use crate::spectrum::{
    ln_scaled_magnitude, refine_point, Couplings, KRecurrence, KSequence, KinkDetector, ModelParams, Parity, SpectralPoint,
};

/// Upper bound on precision raises during one construction.
pub const MAX_ESCALATIONS: u32 = 3;

/// Which displaced-oscillator basis a sum is carried out in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Basis `|n; -g>`, coefficients `e^{g^2/2} sqrt(n!) K_n (-1)^n`.
    Minus,
    /// Basis `|n; +g>`, coefficients `e^{g^2/2} sqrt(n!) K_n delta_p/(x-n)`.
    Plus,
}

impl Representation {
    pub fn basis(self, params: &ModelParams) -> ShiftedBasisLabel {
        match self {
            Representation::Minus => ShiftedBasisLabel::minus(params),
            Representation::Plus => ShiftedBasisLabel::plus(params),
        }
    }
}

/// Shift `s` of a displaced-oscillator basis; `|0; s>` is the coherent state
/// of amplitude `-s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedBasisLabel {
    pub shift: f64,
}

impl ShiftedBasisLabel {
    pub fn new(shift: f64, params: &ModelParams) -> Result<Self> {
        let g = params.coupling();
        if (shift.abs() - g).abs() > 1e-12 * g {
            return Err(Error::InvalidParameter(format!("basis shift {shift} is not +-g = +-{g}")));
        }
        Ok(Self { shift })
    }

    pub fn minus(params: &ModelParams) -> Self {
        Self { shift: -params.coupling() }
    }

    pub fn plus(params: &ModelParams) -> Self {
        Self { shift: params.coupling() }
    }

    pub fn representation(&self) -> Representation {
        if self.shift < 0.0 {
            Representation::Minus
        } else {
            Representation::Plus
        }
    }
}

/// Outcome of a truncated sum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// Index of the last term included.
    pub n_used: usize,
    pub eps_rel_achieved: f64,
    /// The coefficient sequence turned upward before the target was reached.
    pub kink_hit: bool,
    pub escalations: u32,
}

impl TruncationReport {
    pub fn converged(&self, tol: f64) -> bool {
        self.eps_rel_achieved <= tol
    }
}

/// Running sum with the two-strike relative-error stop rule.
#[derive(Clone, Debug)]
pub struct SeriesMonitor {
    tol: f64,
    floor: f64,
    sum: Real,
    abs_sum: Real,
    ratio: Real,
    strikes: usize,
    n: usize,
    last_eps: f64,
    best_eps: f64,
    converged_at: Option<usize>,
}

impl SeriesMonitor {
    pub fn new(prec: u32, tol: f64) -> Self {
        Self {
            tol,
            floor: 0.0,
            sum: Float::new(prec),
            abs_sum: Float::new(prec),
            ratio: Float::new(prec),
            strikes: 0,
            n: 0,
            last_eps: f64::INFINITY,
            best_eps: f64::INFINITY,
            converged_at: None,
        }
    }

    /// Lower bound for the denominator of `eps`, for sums whose every term
    /// is negligible against a known scale.
    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// Adds the next term and returns whether the stop rule is now met.
    pub fn push(&mut self, term: &Real) -> bool {
        if self.n > 0 {
            let mag = term.clone().abs();
            let eps = if self.abs_sum.is_zero() && (mag.is_zero() || self.floor == 0.0) {
                // nothing summed yet, so zeros carry no information
                f64::INFINITY
            } else if mag.is_zero() {
                0.0
            } else if self.abs_sum.is_zero() {
                f64::INFINITY
            } else {
                self.ratio.assign(&mag / &self.abs_sum);
                let r = self.ratio.to_f64();
                if self.floor > 0.0 {
                    r.min(mag.to_f64() / self.floor)
                } else {
                    r
                }
            };
            self.last_eps = eps;
            if eps <= self.tol {
                self.strikes += 1;
            } else {
                self.strikes = 0;
            }
        }
        self.sum += term;
        if term.is_sign_negative() {
            self.abs_sum -= term;
        } else {
            self.abs_sum += term;
        }
        if self.n > 0 {
            // Keep the running best only over the summed prefix.
            self.best_eps = self.best_eps.min(self.last_eps);
        }
        self.n += 1;
        if self.strikes >= 2 && self.converged_at.is_none() {
            self.converged_at = Some(self.n - 1);
        }
        self.converged_at.is_some()
    }

    pub fn sum(&self) -> &Real {
        &self.sum
    }

    pub fn terms(&self) -> usize {
        self.n
    }

    pub fn last_eps(&self) -> f64 {
        self.last_eps
    }

    pub fn best_eps(&self) -> f64 {
        self.best_eps
    }

    pub fn converged_at(&self) -> Option<usize> {
        self.converged_at
    }

    fn report(&self, kink_hit: bool, escalations: u32) -> TruncationReport {
        TruncationReport {
            n_used: self.n.saturating_sub(1),
            eps_rel_achieved: if self.converged_at.is_some() {
                self.last_eps
            } else {
                self.best_eps
            },
            kink_hit,
            escalations,
        }
    }
}

/// Coherent state `|alpha>` expanded in a displaced-oscillator basis:
/// `c_n = e^{-(alpha+s)^2/2} (alpha+s)^n / sqrt(n!)`.
#[derive(Clone, Debug)]
pub struct CoherentExpansion {
    pub alpha: f64,
    pub basis: ShiftedBasisLabel,
    pub coeffs: Vec<Real>,
}

impl CoherentExpansion {
    /// Squared norm of the stored coefficients.
    pub fn norm_sq(&self) -> Real {
        let prec = self.coeffs.first().map_or(53, Float::prec);
        let mut s = Float::new(prec);
        for c in &self.coeffs {
            s += Float::with_val(prec, c.square_ref());
        }
        s
    }
}

/// Streaming generator of the coefficients of [`CoherentExpansion`].
#[derive(Clone, Debug)]
pub(crate) struct CoherentCoeffs {
    shifted: Real,
    cur: Real,
    n: u32,
}

impl CoherentCoeffs {
    pub fn new(alpha: f64, shift: f64, prec: u32) -> Self {
        let shifted = Float::with_val(prec, alpha) + shift;
        let cur = Float::with_val(prec, shifted.square_ref()) / -2i32;
        Self {
            cur: cur.exp(),
            shifted,
            n: 0,
        }
    }

    pub fn current(&self) -> &Real {
        &self.cur
    }

    pub fn advance(&mut self) -> &Real {
        self.n += 1;
        self.cur *= &self.shifted;
        let root = Float::with_val(self.cur.prec(), self.n).sqrt();
        self.cur /= root;
        &self.cur
    }
}

pub fn coherent_in_shifted_basis(alpha: f64, basis: ShiftedBasisLabel, n: usize, ctx: &PrecisionContext) -> Result<CoherentExpansion> {
    if n < 1 {
        return Err(Error::InvalidParameter("coherent expansion needs N >= 1".into()));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    let mut gen = CoherentCoeffs::new(alpha, basis.shift, ctx.mantissa_bits);
    let mut coeffs = Vec::with_capacity(n + 1);
    coeffs.push(gen.current().clone());
    for _ in 0..n {
        coeffs.push(gen.advance().clone());
    }
    Ok(CoherentExpansion { alpha, basis, coeffs })
}

/// Normalization-series diagnostics at a fixed precision, without escalation.
#[derive(Clone, Debug, Serialize)]
pub struct NormProfile {
    /// `ln(n! K_n^2)` for each computed index.
    pub ln_summand: Vec<f64>,
    /// `eps(N)` for `N >= 1`; entry `N - 1` belongs to index `N`.
    pub eps_rel: Vec<f64>,
    pub kink_index: Option<usize>,
    pub min_eps_rel: f64,
    /// First index at which the two-strike rule is met.
    pub converged_at: Option<usize>,
}

/// Computes `n_max` terms of the minus-representation norm series at the
/// point's own precision, continuing past any kink.
pub fn norm_series_profile(params: &ModelParams, point: &SpectralPoint, n_max: usize) -> Result<NormProfile> {
    let ctx = point.ctx;
    let c = Couplings::new(params, ctx.mantissa_bits);
    let mut rec = KRecurrence::new(&point.x, &c);
    let mut detector = KinkDetector::default();
    let mut monitor = SeriesMonitor::new(ctx.mantissa_bits, ctx.series_tol);
    let mut ln_summand = Vec::with_capacity(n_max + 1);
    let mut eps_rel = Vec::with_capacity(n_max);
    let mut kink_index = None;
    let mut fact = Float::with_val(ctx.mantissa_bits, 1u32);
    let mut term = Float::new(ctx.mantissa_bits);
    let mut ln_sf = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            rec.advance()?;
            fact *= n as u64;
            ln_sf += 0.5 * (n as f64).ln();
        }
        let k = rec.current();
        let ln_mag = ln_scaled_magnitude(k, ln_sf);
        if kink_index.is_none() {
            kink_index = detector.push(ln_mag);
        }
        ln_summand.push(2.0 * ln_mag);
        term.assign(k.square_ref());
        term *= &fact;
        monitor.push(&term);
        if n > 0 {
            eps_rel.push(monitor.last_eps());
        }
    }
    let min_eps_rel = eps_rel.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NormProfile {
        ln_summand,
        eps_rel,
        kink_index,
        min_eps_rel,
        converged_at: monitor.converged_at(),
    })
}

/// One eigenstate with both expansions and its squared norm.
#[derive(Clone, Debug)]
pub struct EigenstateRep {
    pub params: ModelParams,
    pub point: SpectralPoint,
    /// `K_n` over the range where the expansion is trustworthy.
    pub kseq: KSequence,
    pub coeff_minus: Vec<Real>,
    pub coeff_plus: Vec<Real>,
    pub norm_sq: Real,
    pub trunc: TruncationReport,
}

struct RungOutcome {
    rep: EigenstateRep,
    converged: bool,
}

impl EigenstateRep {
    /// Builds the state at the precision of `point`, climbing the escalation
    /// ladder while the norm series hits a kink before converging.
    pub fn build(params: &ModelParams, point: &SpectralPoint) -> Result<Self> {
        Self::build_with(params, point, &point.ctx)
    }

    /// As [`Self::build`], starting from `ctx` (the root is re-refined if the
    /// precision differs from the one it was found at).
    pub fn build_with(params: &ModelParams, point: &SpectralPoint, ctx: &PrecisionContext) -> Result<Self> {
        if point.collides_with_pole(params) {
            return Err(Error::Juddian { x: point.x_f64() });
        }
        let mut ctx = *ctx;
        let mut point = reprecise(params, point, &ctx)?;
        let mut escalations = 0;
        loop {
            let outcome = build_at(params, &point, escalations)?;
            if outcome.converged || escalations >= MAX_ESCALATIONS {
                return Ok(outcome.rep);
            }
            let Some(next) = ctx.escalated() else {
                return Ok(outcome.rep);
            };
            ctx = next;
            point = reprecise(params, &point, &ctx)?;
            escalations += 1;
        }
    }

    pub fn parity(&self) -> Parity {
        self.point.parity
    }

    pub fn prec(&self) -> u32 {
        self.point.ctx.mantissa_bits
    }

    pub fn ctx(&self) -> &PrecisionContext {
        &self.point.ctx
    }

    pub fn len(&self) -> usize {
        self.coeff_minus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeff_minus.is_empty()
    }

    pub fn coeffs(&self, rep: Representation) -> &[Real] {
        match rep {
            Representation::Minus => &self.coeff_minus,
            Representation::Plus => &self.coeff_plus,
        }
    }

    /// Squared norm summed in the chosen representation.
    pub fn norm_squared(&self, rep: Representation) -> (Real, TruncationReport) {
        let mut m = SeriesMonitor::new(self.prec(), self.ctx().series_tol);
        let mut t = Float::new(self.prec());
        for c in self.coeffs(rep) {
            t.assign(c.square_ref());
            if m.push(&t) {
                break;
            }
        }
        (m.sum().clone(), m.report(self.trunc.kink_hit, self.trunc.escalations))
    }

    /// Rebuilds the state one rung higher on the precision ladder.
    pub fn escalated(&self) -> Result<Option<Self>> {
        match self.ctx().escalated() {
            Some(next) => {
                let mut rep = Self::build_with(&self.params, &self.point, &next)?;
                rep.trunc.escalations += self.trunc.escalations + 1;
                Ok(Some(rep))
            }
            None => Ok(None),
        }
    }

    /// `psi(0)` in the Bargmann representation, `sum_n K_n g^n`; fixes the
    /// overall sign when comparing with other solvers.
    pub fn value_at_origin(&self) -> Real {
        let g = Float::with_val(self.prec(), self.params.coupling());
        let mut gp = Float::with_val(self.prec(), 1u32);
        let mut s = Float::new(self.prec());
        for k in &self.kseq.coeffs {
            s += Float::with_val(self.prec(), k * &gp);
            gp *= &g;
        }
        s
    }
}

fn reprecise(params: &ModelParams, point: &SpectralPoint, ctx: &PrecisionContext) -> Result<SpectralPoint> {
    if point.ctx.mantissa_bits == ctx.mantissa_bits && point.ctx.root_tol <= ctx.root_tol {
        let mut p = point.clone();
        p.ctx.series_tol = ctx.series_tol;
        return Ok(p);
    }
    if params.is_decoupled() {
        let mut p = point.clone();
        let n = point.x_f64().round() as i64;
        p.x = ctx.int(n);
        let g = Float::with_val(ctx.mantissa_bits, params.coupling());
        p.energy = Float::with_val(ctx.mantissa_bits, &p.x - Float::with_val(ctx.mantissa_bits, g.square_ref()));
        p.residual = ctx.zero();
        p.delta_achieved = ctx.zero();
        p.ctx = *ctx;
        return Ok(p);
    }
    refine_point(params, point, ctx)
}

/// Term cap for the coefficient sequence of an eigenstate.
fn term_cap(x: f64, g: f64) -> usize {
    (4.0 * (x.max(0.0) + 4.0 * g * g) + 400.0) as usize
}

fn build_at(params: &ModelParams, point: &SpectralPoint, escalations: u32) -> Result<RungOutcome> {
    let ctx = point.ctx;
    let prec = ctx.mantissa_bits;
    let c = Couplings::new(params, prec);
    let delta_p = c.signed_delta(point.parity);
    let pref = Float::with_val(prec, &c.g_sq / 2u32).exp();
    let cap = term_cap(point.x_f64(), params.coupling());
    // Coefficients are kept until the norm series is converged to the
    // square of the target, so bilinear sums have room to converge too.
    let extended_tol = (ctx.series_tol * ctx.series_tol).max(ctx.epsilon());

    let mut rec = KRecurrence::new(&point.x, &c);
    let mut detector = KinkDetector::default();
    let mut norm = SeriesMonitor::new(prec, ctx.series_tol);
    let mut extended = SeriesMonitor::new(prec, extended_tol);
    let mut ks = Vec::new();
    let mut minus = Vec::new();
    let mut plus = Vec::new();
    let mut sqrt_fact = Float::with_val(prec, 1u32);
    let mut ln_sf = 0.0;
    let mut kink = None;
    let mut norm_report = None;
    let mut term = Float::new(prec);
    let mut d = Float::new(prec);
    let decoupled_level = params.is_decoupled().then(|| point.x_f64().round() as usize);

    for n in 0..=cap {
        if n > 0 {
            rec.advance()?;
            sqrt_fact *= Float::with_val(prec, n as u64).sqrt();
            ln_sf += 0.5 * (n as f64).ln();
        }
        let k = rec.current();
        if let Some(start) = detector.push(ln_scaled_magnitude(k, ln_sf)) {
            kink = Some(start);
            break;
        }
        let mut m = Float::with_val(prec, k * &sqrt_fact);
        m *= &pref;
        let p = match decoupled_level {
            Some(level) if n == level => {
                // delta -> 0 limit of the plus expansion: e^{5g^2/2} sqrt(m!) / (2g)^m
                let mut v = Float::with_val(prec, &c.g_sq * 5u32) / 2u32;
                v = v.exp() * &sqrt_fact;
                v / Float::with_val(prec, rug::ops::Pow::pow(&c.two_g, level as u32))
            }
            Some(_) => Float::new(prec),
            None => {
                d.assign(&point.x - n as u64);
                let mut v = Float::with_val(prec, &m * &delta_p);
                v /= &d;
                v
            }
        };
        if n % 2 == 1 {
            m = -m;
        }
        term.assign(m.square_ref());
        ks.push(k.clone());
        minus.push(m);
        plus.push(p);
        if norm_report.is_none() && norm.push(&term) {
            norm_report = Some(norm.report(false, escalations));
        }
        if extended.push(&term) && norm_report.is_some() {
            // the decoupled plus coefficient must be inside the kept range
            if decoupled_level.is_none_or(|l| minus.len() > l) {
                break;
            }
        }
    }

    let kink_hit = kink.is_some() && norm_report.is_none();
    let (norm_sq, trunc, converged) = match norm_report {
        Some(r) => (norm.sum().clone(), r, true),
        None => {
            // Best effort: sum up to the smallest error estimate seen.
            let r = norm.report(kink_hit, escalations);
            let mut s = Float::new(prec);
            let mut best = (f64::INFINITY, 0usize);
            let mut mon = SeriesMonitor::new(prec, ctx.series_tol);
            for (i, m) in minus.iter().enumerate() {
                term.assign(m.square_ref());
                mon.push(&term);
                if i > 0 && mon.last_eps() < best.0 {
                    best = (mon.last_eps(), i);
                }
            }
            for m in &minus[..=best.1.min(minus.len().saturating_sub(1))] {
                s += Float::with_val(prec, m.square_ref());
            }
            (
                s,
                TruncationReport {
                    n_used: best.1,
                    eps_rel_achieved: r.eps_rel_achieved,
                    kink_hit,
                    escalations,
                },
                false,
            )
        }
    };
    if !(norm_sq.is_finite() && norm_sq.is_sign_positive() && !norm_sq.is_zero()) {
        return Err(Error::Representation(format!("non-positive norm at x = {}", point.x_f64())));
    }
    let kseq = KSequence {
        x: point.x.clone(),
        growth_flag: kink.is_some(),
        kink_index: kink,
        coeffs: ks,
    };
    Ok(RungOutcome {
        rep: EigenstateRep {
            params: *params,
            point: point.clone(),
            kseq,
            coeff_minus: minus,
            coeff_plus: plus,
            norm_sq,
            trunc,
        },
        converged,
    })
}

/// Squared norm from a stored coefficient sequence, truncated by the
/// relative-error rule.
pub fn norm_squared(
    kseq: &KSequence,
    point: &SpectralPoint,
    params: &ModelParams,
    rep: Representation,
) -> Result<(Real, TruncationReport)> {
    let ctx = point.ctx;
    let prec = ctx.mantissa_bits;
    let c = Couplings::new(params, prec);
    let delta_p = c.signed_delta(point.parity);
    let pref = c.g_sq.clone().exp();
    let mut mon = SeriesMonitor::new(prec, ctx.series_tol);
    let mut fact = Float::with_val(prec, 1u32);
    let mut t = Float::new(prec);
    let mut d = Float::new(prec);
    for (n, k) in kseq.coeffs.iter().enumerate() {
        if n > 0 {
            fact *= n as u64;
        }
        t.assign(k.square_ref());
        t *= &fact;
        if rep == Representation::Plus {
            if params.is_decoupled() {
                return Err(Error::Representation(
                    "plus expansion is singular at delta = 0; use EigenstateRep".into(),
                ));
            }
            d.assign(&point.x - n as u64);
            t *= Float::with_val(prec, &delta_p / &d).square();
        }
        if mon.push(&t) {
            break;
        }
    }
    let growth = kseq.kink_index.is_some() && mon.converged_at().is_none();
    let report = mon.report(growth, 0);
    Ok((Float::with_val(prec, mon.sum() * &pref), report))
}

/// `<psi|alpha>` summed in the representation matching the basis of
/// `expansion`. Sums that do not converge within the stored coefficient range
/// are retried on a rebuilt state one precision rung higher.
pub fn overlap_with_initial(state: &EigenstateRep, expansion: &CoherentExpansion) -> Result<(Real, TruncationReport)> {
    overlap_with_coherent(state, expansion.alpha, expansion.basis.representation())
}

pub fn overlap_with_coherent(state: &EigenstateRep, alpha: f64, rep: Representation) -> Result<(Real, TruncationReport)> {
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    let (v, r) = overlap_once(state, alpha, rep);
    if r.converged(state.ctx().series_tol) {
        return Ok((v, r));
    }
    let mut current = state.clone();
    let mut last = (v, r);
    for _ in 0..MAX_ESCALATIONS {
        match current.escalated()? {
            Some(next) => {
                current = next;
                last = overlap_once(&current, alpha, rep);
                if last.1.converged(current.ctx().series_tol) {
                    break;
                }
            }
            None => break,
        }
    }
    Ok(last)
}

fn overlap_once(state: &EigenstateRep, alpha: f64, rep: Representation) -> (Real, TruncationReport) {
    let prec = state.prec();
    let basis = rep.basis(&state.params);
    let mut gen = CoherentCoeffs::new(alpha, basis.shift, prec);
    let tol = state.ctx().series_tol;
    let floor = tol * tol * state.norm_sq.to_f64().sqrt();
    let mut mon = SeriesMonitor::new(prec, tol).with_floor(floor);
    let mut t = Float::new(prec);
    for (n, coeff) in state.coeffs(rep).iter().enumerate() {
        if n > 0 {
            gen.advance();
        }
        t.assign(coeff * gen.current());
        if mon.push(&t) {
            break;
        }
    }
    let report = mon.report(state.trunc.kink_hit, state.trunc.escalations);
    (mon.sum().clone(), report)
}

fn bilinear<F>(a: &EigenstateRep, b: &EigenstateRep, mut term: F) -> (Real, TruncationReport)
where
    F: FnMut(usize, &mut Real),
{
    let prec = a.prec().max(b.prec());
    let tol = a.ctx().series_tol.max(b.ctx().series_tol);
    let bound = (a.norm_sq.to_f64() * b.norm_sq.to_f64()).sqrt();
    let mut mon = SeriesMonitor::new(prec, tol).with_floor(tol * tol * bound);
    let mut t = Float::new(prec);
    for n in 0..a.len().min(b.len()) {
        term(n, &mut t);
        if mon.push(&t) {
            break;
        }
    }
    let report = mon.report(a.trunc.kink_hit || b.trunc.kink_hit, a.trunc.escalations.max(b.trunc.escalations));
    (mon.sum().clone(), report)
}

/// `<psi_a| T |psi_b>` for two states of the same sector, with `T` the
/// reflection `z -> -z`. Uses `T|n; -g> = (-1)^n |n; +g>`, pairing the plus
/// expansion of `a` with the reflected minus expansion of `b`.
pub fn reflection_matrix_element(a: &EigenstateRep, b: &EigenstateRep) -> Result<(Real, TruncationReport)> {
    if a.parity() != b.parity() {
        return Err(Error::InvalidParameter(
            "reflection element needs two states of the same sector".into(),
        ));
    }
    Ok(bilinear(a, b, |n, t| {
        t.assign(&a.coeff_plus[n] * &b.coeff_minus[n]);
        if n % 2 == 1 {
            use rug::ops::NegAssign;
            t.neg_assign();
        }
    }))
}

/// `<psi_a|psi_b>` between a state of `H_+` and one of `H_-`, summed in
/// the chosen representation.
pub fn cross_parity_overlap_in(a: &EigenstateRep, b: &EigenstateRep, rep: Representation) -> Result<(Real, TruncationReport)> {
    if a.parity() == b.parity() {
        return Err(Error::InvalidParameter(
            "cross-parity overlap needs states from different sectors".into(),
        ));
    }
    let (ca, cb) = (a.coeffs(rep), b.coeffs(rep));
    Ok(bilinear(a, b, |n, t| t.assign(&ca[n] * &cb[n])))
}

/// [`cross_parity_overlap_in`] in the minus representation, where the sign
/// factors cancel: `e^{g^2} sum_k k! K_k^+ K_k^-`.
pub fn cross_parity_overlap(a: &EigenstateRep, b: &EigenstateRep) -> Result<(Real, TruncationReport)> {
    cross_parity_overlap_in(a, b, Representation::Minus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::find_spectrum;

    fn rel(a: &Real, b: &Real) -> f64 {
        let d = Float::with_val(a.prec(), a - b).abs();
        (d / b.clone().abs()).to_f64()
    }

    fn reference_params() -> ModelParams {
        ModelParams::normalized(0.7, 0.25).unwrap()
    }

    fn states(params: &ModelParams, parity: Parity, x_max: f64) -> Vec<EigenstateRep> {
        let s = find_spectrum(params, parity, x_max, &PrecisionContext::default()).unwrap();
        s.points.iter().map(|p| EigenstateRep::build(params, p).unwrap()).collect()
    }

    #[test]
    fn monitor_two_strike_rule() {
        let mut m = SeriesMonitor::new(64, 1e-3);
        let terms = [1.0, 0.5, 1e-4, 0.1, 1e-5, 1e-6, 1e-7];
        let hits: Vec<bool> = terms.iter().map(|t| m.push(&Float::with_val(64, *t))).collect();
        assert_eq!(hits, [false, false, false, false, false, true, true]);
        assert_eq!(m.converged_at(), Some(5));
    }

    #[test]
    fn monitor_signed_denominator() {
        let mut m = SeriesMonitor::new(64, 0.1);
        m.push(&Float::with_val(64, 1.0));
        m.push(&Float::with_val(64, -1.0));
        // partial sum is 0 but the absolute sum is 2
        m.push(&Float::with_val(64, 0.1));
        assert!((m.last_eps() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn coherent_vacuum_in_minus_basis() {
        let ctx = PrecisionContext::default();
        let p = reference_params();
        let e = coherent_in_shifted_basis(0.0, ShiftedBasisLabel::minus(&p), 20, &ctx).unwrap();
        let g = 0.7f64;
        let mut fact = 1.0;
        for (n, c) in e.coeffs.iter().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            let expected = (-g * g / 2.0).exp() * (-g).powi(n as i32) / fact.sqrt();
            assert!((c.to_f64() - expected).abs() < 1e-15 * expected.abs().max(1e-300), "n={n}");
        }
    }

    #[test]
    fn coherent_matching_shift_is_vacuum() {
        let ctx = PrecisionContext::default();
        let p = reference_params();
        let e = coherent_in_shifted_basis(-0.7, ShiftedBasisLabel::plus(&p), 10, &ctx).unwrap();
        assert!((e.coeffs[0].to_f64() - 1.0).abs() < 1e-15);
        assert!(e.coeffs[1..].iter().all(|c| c.to_f64().abs() < 1e-15));
    }

    #[test]
    fn coherent_normalization() {
        let ctx = PrecisionContext::default();
        let p = reference_params();
        for alpha in [-2.0, 0.0, 1.3, 3.0] {
            let e = coherent_in_shifted_basis(alpha, ShiftedBasisLabel::plus(&p), 200, &ctx).unwrap();
            assert!((e.norm_sq().to_f64() - 1.0).abs() < 1e-20, "alpha={alpha}");
        }
    }

    #[test]
    fn basis_label_validation() {
        let p = reference_params();
        assert!(ShiftedBasisLabel::new(0.7, &p).is_ok());
        assert!(ShiftedBasisLabel::new(-0.7, &p).is_ok());
        assert!(ShiftedBasisLabel::new(0.5, &p).is_err());
    }

    #[test]
    fn decoupled_ground_state_norm() {
        let g = 1.0f64;
        let p = ModelParams::normalized(g, 0.0).unwrap();
        let st = &states(&p, Parity::Plus, 0.5)[0];
        let expected = Float::with_val(200, 5u32).exp();
        assert!(rel(&st.norm_sq, &expected) < 1e-15);
        let (plus, _) = st.norm_squared(Representation::Plus);
        assert!(rel(&plus, &expected) < 1e-15);
    }

    #[test]
    fn decoupled_reflection_is_gaussian_overlap() {
        let g = 0.8f64;
        let p = ModelParams::normalized(g, 0.0).unwrap();
        let st = &states(&p, Parity::Plus, 0.5)[0];
        let (t, _) = reflection_matrix_element(st, st).unwrap();
        let ratio = (t / &st.norm_sq).to_f64();
        assert!((ratio - (-2.0 * g * g).exp()).abs() < 1e-14);
    }

    #[test]
    fn dual_norms_agree() {
        for st in states(&reference_params(), Parity::Plus, 6.0) {
            let (plus, _) = st.norm_squared(Representation::Plus);
            assert!(rel(&plus, &st.norm_sq) < 1e-13, "x={}", st.point.x_f64());
            assert!(!st.trunc.kink_hit);
        }
    }

    #[test]
    fn free_function_norm_matches_rep() {
        let p = reference_params();
        let st = &states(&p, Parity::Minus, 2.0)[1];
        let (a, _) = norm_squared(&st.kseq, &st.point, &p, Representation::Minus).unwrap();
        let (b, _) = norm_squared(&st.kseq, &st.point, &p, Representation::Plus).unwrap();
        assert!(rel(&a, &st.norm_sq) < 1e-14);
        assert!(rel(&b, &st.norm_sq) < 1e-13);
    }

    #[test]
    fn dual_overlaps_agree() {
        for st in states(&reference_params(), Parity::Plus, 4.0) {
            for alpha in [0.0, 2.0] {
                let (a, _) = overlap_with_coherent(&st, alpha, Representation::Minus).unwrap();
                let (b, _) = overlap_with_coherent(&st, alpha, Representation::Plus).unwrap();
                let scale = st.norm_sq.to_f64().sqrt();
                let diff = Float::with_val(200, &a - &b).abs().to_f64();
                assert!(
                    diff <= 1e-12 * a.to_f64().abs().max(1e-6 * scale),
                    "x={} alpha={alpha}",
                    st.point.x_f64()
                );
            }
        }
    }

    #[test]
    fn reflection_is_symmetric_and_bounded() {
        let sts = states(&reference_params(), Parity::Minus, 4.0);
        for a in &sts {
            for b in &sts {
                let (ab, _) = reflection_matrix_element(a, b).unwrap();
                let (ba, _) = reflection_matrix_element(b, a).unwrap();
                let bound = (a.norm_sq.to_f64() * b.norm_sq.to_f64()).sqrt();
                assert!(Float::with_val(200, &ab - &ba).abs().to_f64() <= 1e-12 * bound);
                assert!(ab.to_f64().abs() <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn cross_overlap_dual_agreement() {
        let p = reference_params();
        let plus = states(&p, Parity::Plus, 3.0);
        let minus = states(&p, Parity::Minus, 3.0);
        for a in &plus {
            for b in &minus {
                let (m, _) = cross_parity_overlap_in(a, b, Representation::Minus).unwrap();
                let (q, _) = cross_parity_overlap_in(a, b, Representation::Plus).unwrap();
                let bound = (a.norm_sq.to_f64() * b.norm_sq.to_f64()).sqrt();
                assert!(Float::with_val(200, &m - &q).abs().to_f64() <= 1e-12 * bound);
                assert!(m.to_f64().abs() <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn decoupled_sectors_coincide() {
        let p = ModelParams::normalized(0.6, 0.0).unwrap();
        let plus = states(&p, Parity::Plus, 3.0);
        let minus = states(&p, Parity::Minus, 3.0);
        for (a, b) in plus.iter().zip(&minus) {
            let (v, _) = cross_parity_overlap(a, b).unwrap();
            assert!(rel(&v, &a.norm_sq) < 1e-14);
        }
    }

    #[test]
    fn parity_mismatch_is_rejected() {
        let p = reference_params();
        let a = &states(&p, Parity::Plus, 1.0)[0];
        let b = &states(&p, Parity::Minus, 1.0)[0];
        assert!(reflection_matrix_element(a, b).is_err());
        assert!(cross_parity_overlap(a, a).is_err());
    }

    #[test]
    fn high_level_needs_escalation_from_double() {
        let p = reference_params();
        let lo = PrecisionContext::new(53, 1e-10, 1e-15).unwrap();
        let s = find_spectrum(&p, Parity::Plus, 20.5, &lo).unwrap();
        let x20 = &s.points[20];
        let profile = norm_series_profile(&p, x20, 120).unwrap();
        assert!(profile.kink_index.is_some());
        assert!(profile.min_eps_rel > 1e-15, "{}", profile.min_eps_rel);
        let st = EigenstateRep::build(&p, x20).unwrap();
        assert!(st.trunc.escalations >= 1);
        assert!(st.trunc.eps_rel_achieved <= 1e-15);
        assert!(!st.trunc.kink_hit);
    }

    #[test]
    fn decoupled_representations_agree_above_ground() {
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        for st in states(&p, Parity::Plus, 22.0).iter().skip(3).step_by(6) {
            let (a, _) = overlap_with_coherent(st, 0.5, Representation::Minus).unwrap();
            let (b, _) = overlap_with_coherent(st, 0.5, Representation::Plus).unwrap();
            assert!(rel(&b, &a) < 1e-12, "x = {}", st.point.x_f64());
            assert!(rel(&st.norm_squared(Representation::Plus).0, &st.norm_sq) < 1e-12);
        }
    }

    #[test]
    fn sign_changes_are_not_kinks() {
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        for st in states(&p, Parity::Plus, 22.0).iter().skip(18) {
            assert!(!st.trunc.kink_hit && st.trunc.escalations == 0, "x = {}", st.point.x_f64());
        }
    }

    #[test]
    fn leading_zeros_do_not_stop_a_sum() {
        let mut m = SeriesMonitor::new(64, 1e-3).with_floor(1.0);
        let z = Float::new(64);
        for _ in 0..5 {
            assert!(!m.push(&z));
        }
        assert!(!m.push(&Float::with_val(64, 2.0)));
    }
}
