//! Reference computations that do not rely on asymptotic series.
//!
//! The Bargmann functions of a sector are continued into the whole left
//! half-plane through the map `w = (z/g + 1)/(z/g - 3)`, which sends it onto
//! the disk `|w - 1/3| < 2/3` inside the unit disk of convergence of a power
//! series in `w`. Norms and overlaps then become integrals of smooth
//! functions over that disk. A truncated-Fock diagonalizer provides a second,
//! completely independent cross-check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rug::{Assign, Float};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{quad_nodes_radial, PrecisionContext, Real};
use crate::spectrum::{Couplings, ModelParams, Parity, POLE_GUARD};

/// Default hard cap on the number of w-series terms at a single node.
pub const DEFAULT_MAX_TERMS: usize = 20_000;

/// `w(z) = (z/g + 1)/(z/g - 3)` and its inverse `z(w) = g (3w + 1)/(w - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MobiusMap {
    pub g: f64,
}

impl MobiusMap {
    pub fn new(params: &ModelParams) -> Self {
        Self { g: params.coupling() }
    }

    pub fn w_of_z(&self, z: Complex64) -> Complex64 {
        (z / self.g + 1.0) / (z / self.g - 3.0)
    }

    pub fn z_of_w(&self, w: Complex64) -> Complex64 {
        self.g * (3.0 * w + 1.0) / (w - 1.0)
    }

    /// `|dz/dw|^2 = 16 g^2 / |w - 1|^4`.
    pub fn jacobian(&self, w: Complex64) -> f64 {
        16.0 * self.g * self.g / (w - 1.0).norm_sqr().powi(2)
    }
}

/// Power-series coefficients of the continued pair `(phi_1, phi_2)` around `w = 0`.
#[derive(Clone, Debug)]
pub struct WSeriesPair {
    pub x: Real,
    pub parity: Parity,
    pub a1: Vec<Real>,
    pub a2: Vec<Real>,
    /// Highest stored order.
    pub n: usize,
    /// `log2 max(|a1_k|, |a2_k|)` per order, for evaluation planning.
    pub log2_mag: Vec<f64>,
    a1_f64: Vec<f64>,
    a2_f64: Vec<f64>,
}

fn log2_abs(v: &Real) -> f64 {
    if v.is_zero() {
        return f64::NEG_INFINITY;
    }
    let (m, e) = v.to_f64_exp();
    m.abs().log2() + f64::from(e)
}

/// Coefficients `a_k^(1), a_k^(2)` for `k <= n` from the four-term matrix
/// recurrence `v_{k+1} = A_k v_k + B_k v_{k-1} + C_k v_{k-2}` with
/// `v_k = (a_k^(2), a_{k-1}^(1))`.
pub fn w_series(x: &Real, params: &ModelParams, parity: Parity, n: usize, ctx: &PrecisionContext) -> Result<WSeriesPair> {
    let prec = ctx.mantissa_bits;
    let c = Couplings::new(params, prec);
    let x = Float::with_val(prec, x);
    let xf = x.to_f64();
    let delta = c.signed_delta(parity);
    if !params.is_decoupled() && x.clone().abs() < POLE_GUARD {
        return Err(Error::PoleProximity {
            x: xf,
            n: 0,
            guard: POLE_GUARD,
        });
    }
    for k in 1..=n.min(xf.ceil().max(0.0) as usize + 1) {
        if Float::with_val(prec, &x - k as u64).abs() < POLE_GUARD {
            return Err(Error::PoleProximity {
                x: xf,
                n: k as i64,
                guard: POLE_GUARD,
            });
        }
    }
    let four_g2 = Float::with_val(prec, &c.g_sq * 4u32);
    let twelve_g2 = Float::with_val(prec, &c.g_sq * 12u32);
    let xt = Float::with_val(prec, &four_g2 - &x);
    let e = c.g_sq.clone().exp();
    let two_d2 = Float::with_val(prec, &c.delta_sq * 2u32);

    // a_0^(1) = (delta/x) e^{g^2}; a_1^(2) = 2 (x - 2g^2 - delta^2/x) e^{g^2}
    let (a1_0, d2_over_x) = if params.is_decoupled() {
        (Float::new(prec), Float::new(prec))
    } else {
        (Float::with_val(prec, &delta / &x) * &e, Float::with_val(prec, &c.delta_sq / &x))
    };
    let mut a2_1 = Float::with_val(prec, &x - Float::with_val(prec, &c.g_sq * 2u32));
    a2_1 -= &d2_over_x;
    a2_1 *= 2u32;
    a2_1 *= &e;

    let zero = Float::new(prec);
    // v[k] = (a2_k, a1_{k-1})
    let mut v: Vec<(Real, Real)> = Vec::with_capacity(n + 2);
    v.push((e.clone(), zero.clone()));
    v.push((a2_1, a1_0));
    let mut t = Float::new(prec);
    let mut d = Float::new(prec);
    let mut np1 = Float::new(prec);
    let mut q = Float::new(prec);
    for k in 1..=n {
        let kf = k as u64;
        d.assign(kf);
        d -= &x; // k - x
        np1.assign(kf + 1);
        let (v0, v1) = (&v[k].0, &v[k].1);
        let (w0, w1) = (&v[k - 1].0, &v[k - 1].1);
        // (xt + 2k - 2) / (k - x)
        q.assign(&xt + ((2 * kf) as f64 - 2.0));
        q /= &d;

        // first component
        let mut r0 = Float::new(prec);
        // A00 = ((4g^2 - 2 xt + k)(k - x) + 2 delta^2) / ((k+1)(k-x))
        t.assign(&four_g2 - Float::with_val(prec, &xt * 2u32));
        t += kf;
        t *= &d;
        t += &two_d2;
        t /= &d;
        t /= &np1;
        r0 += Float::with_val(prec, &t * v0);
        // A01 = 2 delta/(k+1) (1 - q)
        t.assign(1u32);
        t -= &q;
        t *= &delta;
        t *= 2u32;
        t /= &np1;
        r0 += Float::with_val(prec, &t * v1);
        // B00 = ((2 xt - 12 g^2 + k - 1)(k - x) - 2 delta^2) / ((k+1)(k-x))
        t.assign(&xt * 2u32);
        t -= &twelve_g2;
        t += kf as f64 - 1.0;
        t *= &d;
        t -= &two_d2;
        t /= &d;
        t /= &np1;
        r0 += Float::with_val(prec, &t * w0);
        // B01 = 2 delta (k - 2) / ((k+1)(k-x))
        t.assign(&delta * 2u32);
        t *= kf as f64 - 2.0;
        t /= &d;
        t /= &np1;
        r0 += Float::with_val(prec, &t * w1);
        // C00 = (2 - k)/(k + 1)
        if k >= 2 {
            t.assign(2.0 - kf as f64);
            t /= &np1;
            r0 += Float::with_val(prec, &t * &v[k - 2].0);
        }

        // second component
        let mut r1 = Float::new(prec);
        // A10 = -delta/(k-x), A11 = q, B10 = delta/(k-x), B11 = (2-k)/(k-x)
        t.assign(w0 - v0);
        t *= &delta;
        t /= &d;
        r1 += &t;
        r1 += Float::with_val(prec, &q * v1);
        t.assign(2.0 - kf as f64);
        t /= &d;
        r1 += Float::with_val(prec, &t * w1);

        if !(r0.is_finite() && r1.is_finite()) {
            return Err(Error::NonFinite { x: xf });
        }
        v.push((r0, r1));
    }
    let a2: Vec<Real> = v[..=n].iter().map(|p| p.0.clone()).collect();
    let a1: Vec<Real> = v[1..=n + 1].iter().map(|p| p.1.clone()).collect();
    let log2_mag = a1.iter().zip(&a2).map(|(p, q)| log2_abs(p).max(log2_abs(q))).collect();
    Ok(WSeriesPair {
        a1_f64: a1.iter().map(Float::to_f64).collect(),
        a2_f64: a2.iter().map(Float::to_f64).collect(),
        x,
        parity,
        a1,
        a2,
        n,
        log2_mag,
    })
}

/// How a single evaluation point is handled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPlan {
    /// Highest order included.
    pub terms: usize,
    /// Working precision; 53 selects plain double arithmetic.
    pub bits: u32,
    /// `log2` of the tail estimate `|a_N| |w|^N / (1 - |w|)`.
    pub tail_log2: f64,
}

impl WSeriesPair {
    /// Truncation order and precision needed to reach absolute accuracy
    /// `2^target_log2` at `w`.
    pub fn plan(&self, w: Complex64, target_log2: f64) -> Result<EvalPlan> {
        let r = w.norm();
        if r >= 1.0 {
            return Err(Error::TailBoundExceeded {
                terms: self.n,
                bound: f64::INFINITY,
                abs_w: r,
            });
        }
        if r == 0.0 {
            return Ok(EvalPlan {
                terms: 0,
                bits: 53,
                tail_log2: f64::NEG_INFINITY,
            });
        }
        let lw = r.log2();
        let tail_pad = -(1.0 - r).log2();
        let mut peak = f64::NEG_INFINITY;
        let mut peak_at = 0;
        for (k, l) in self.log2_mag.iter().enumerate() {
            let tk = l + k as f64 * lw;
            if tk > peak {
                peak = tk;
                peak_at = k;
            }
            if k > peak_at + 8 && tk + tail_pad < target_log2 && tk < peak - 8.0 {
                let guard = (k as f64).log2() + 12.0;
                let need = peak - target_log2 + guard;
                let bits = if need <= 50.0 { 53 } else { (need.ceil() as u32).div_ceil(32) * 32 };
                return Ok(EvalPlan {
                    terms: k,
                    bits,
                    tail_log2: tk + tail_pad,
                });
            }
        }
        let last = self.log2_mag.last().copied().unwrap_or(0.0) + self.n as f64 * lw + tail_pad;
        Err(Error::TailBoundExceeded {
            terms: self.n,
            bound: last.exp2(),
            abs_w: r,
        })
    }

    /// `(phi_1, phi_2)` at `w` in double precision over `terms` orders.
    pub fn eval_f64(&self, w: Complex64, terms: usize) -> (Complex64, Complex64) {
        let mut p1 = Complex64::new(0.0, 0.0);
        let mut p2 = Complex64::new(0.0, 0.0);
        for k in (0..=terms).rev() {
            p1 = p1 * w + self.a1_f64[k];
            p2 = p2 * w + self.a2_f64[k];
        }
        (p1, p2)
    }

    /// `(phi_1, phi_2)` at `w` with `bits` of working precision.
    pub fn eval_mp(&self, w: Complex64, terms: usize, bits: u32) -> (Complex64, Complex64) {
        let f = |(re, im): (Real, Real)| Complex64::new(re.to_f64(), im.to_f64());
        (
            f(horner_real_coeffs(&self.a1, w, terms, bits)),
            f(horner_real_coeffs(&self.a2, w, terms, bits)),
        )
    }

    /// Series value at `w` accurate to about `2^target_log2` in absolute terms.
    pub fn eval_to(&self, w: Complex64, target_log2: f64) -> Result<(Complex64, Complex64, EvalPlan)> {
        let plan = self.plan(w, target_log2)?;
        let (p1, p2) = if plan.bits <= 53 {
            self.eval_f64(w, plan.terms)
        } else {
            self.eval_mp(w, plan.terms, plan.bits)
        };
        Ok((p1, p2, plan))
    }
}

/// `sum_{k<=terms} a_k w^k` for real `a_k`: dividing by `w^2 - 2 Re(w) w + |w|^2`
/// costs two real multiplications per order.
fn horner_real_coeffs(a: &[Real], w: Complex64, terms: usize, bits: u32) -> (Real, Real) {
    horner_real_coeffs_mp(a, &Float::with_val(bits, w.re), &Float::with_val(bits, w.im), terms)
}

fn horner_real_coeffs_mp(a: &[Real], u: &Real, v: &Real, terms: usize) -> (Real, Real) {
    let bits = u.prec();
    let two_u = Float::with_val(bits, u * 2u32);
    let r2 = Float::with_val(bits, u * u) + Float::with_val(bits, v * v);
    let mut b1 = Float::new(bits);
    let mut b2 = Float::new(bits);
    let mut t = Float::new(bits);
    for k in (1..=terms).rev() {
        t.assign(&two_u * &b1);
        t -= Float::with_val(bits, &r2 * &b2);
        t += &a[k];
        std::mem::swap(&mut b2, &mut b1);
        std::mem::swap(&mut b1, &mut t);
    }
    // p(w) = b_1 w + a_0 - |w|^2 b_2
    let mut re = Float::with_val(bits, &b1 * u);
    re += &a[0];
    re -= Float::with_val(bits, &r2 * &b2);
    let im = Float::with_val(bits, &b1 * v);
    (re, im)
}

/// `(phi_1, phi_2)` continued to `w`, with the tail of the series bounded by
/// `quad_tol` relative to `|a_0|`.
pub fn eval_continued(series: &WSeriesPair, w: Complex64, quad_tol: f64) -> Result<(Complex64, Complex64)> {
    if (w - 1.0 / 3.0).norm() > 2.0 / 3.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!("w = {w} lies outside the image disk")));
    }
    let scale = series.log2_mag[0];
    let (p1, p2, _) = series.eval_to(w, scale + quad_tol.log2())?;
    Ok((p1, p2))
}

/// Polar grid on the image disk: Gauss-Legendre in the radius (weight `rho`),
/// uniform trapezoid in the angle.
#[derive(Clone, Debug, Serialize)]
pub struct DiskGrid {
    pub n_r: usize,
    pub n_theta: usize,
    pub radial: Vec<(f64, f64)>,
}

impl DiskGrid {
    pub fn new(n_r: usize, n_theta: usize) -> Result<Self> {
        if n_r < 32 || n_theta < 64 || !n_theta.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "disk grid needs n_r >= 32 and even n_theta >= 64, got ({n_r}, {n_theta})"
            )));
        }
        let nodes = quad_nodes_radial(n_r, &PrecisionContext::new(128, 1e-30, 1e-15)?)?;
        Ok(Self {
            n_r,
            n_theta,
            radial: nodes.iter().map(|(x, w)| (x.to_f64(), w.to_f64())).collect(),
        })
    }

    pub fn doubled(&self) -> Result<Self> {
        Self::new(2 * self.n_r, 2 * self.n_theta)
    }

    /// Nodes of the upper half (`0 <= theta <= pi`) with their symmetric
    /// weights folded in, including `dA = (2/3)^2 rho drho dtheta`.
    fn half_nodes(&self) -> Vec<(Complex64, f64)> {
        let dtheta = 2.0 * std::f64::consts::PI / self.n_theta as f64;
        let mut out = Vec::with_capacity(self.n_r * (self.n_theta / 2 + 1));
        for &(rho, wr) in &self.radial {
            let base = wr * rho * (4.0 / 9.0) * dtheta;
            for j in 0..=self.n_theta / 2 {
                let theta = j as f64 * dtheta;
                let fold = if j == 0 || j == self.n_theta / 2 { 1.0 } else { 2.0 };
                let w = Complex64::new(1.0 / 3.0, 0.0) + Complex64::from_polar(2.0 / 3.0 * rho, theta);
                out.push((w, base * fold));
            }
        }
        out
    }
}

impl Default for DiskGrid {
    fn default() -> Self {
        Self::new(128, 256).expect("default grid is valid")
    }
}

/// Settings of the disk quadrature.
#[derive(Clone, Debug)]
pub struct QuadratureOptions {
    pub grid: DiskGrid,
    /// Relative tolerance of the grid-doubling check.
    pub quad_tol: f64,
    /// Repeat on the doubled grid and compare.
    pub check_doubling: bool,
    pub max_terms: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            grid: DiskGrid::default(),
            quad_tol: 1e-10,
            check_doubling: true,
            max_terms: DEFAULT_MAX_TERMS,
        }
    }
}

impl QuadratureOptions {
    pub fn with_grid(grid: DiskGrid) -> Self {
        Self { grid, ..Self::default() }
    }

    pub fn single_pass(mut self) -> Self {
        self.check_doubling = false;
        self
    }
}

/// Value of a disk integral with its cost profile.
#[derive(Clone, Debug, Serialize)]
pub struct QuadratureResult {
    pub value: f64,
    /// Value on the doubled grid when the check ran.
    pub refined: Option<f64>,
    pub nodes_evaluated: usize,
    pub nodes_skipped: usize,
    pub max_terms: usize,
    pub max_bits: u32,
}

/// Radius beyond which `e^{-r^2 + b r} (1 + r)^(2p)` has fallen below
/// `e^{-budget}`.
fn cutoff_radius(linear: f64, power: f64, budget: f64) -> f64 {
    let f = |r: f64| r * r - linear * r - 2.0 * power * (1.0 + r).ln();
    let mut r = 1.0;
    while f(r) < budget {
        r += 0.05;
    }
    r
}

/// Coherent-state combination `sum_i c_i |alpha_i>`, `|a> = e^{-a^2/2 + a z}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoherentCombination {
    pub terms: Vec<(f64, f64)>,
}

impl CoherentCombination {
    pub fn coherent(alpha: f64) -> Self {
        Self { terms: vec![(1.0, alpha)] }
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.terms.iter().map(|&(c, a)| c * (a * z - a * a / 2.0).exp()).sum()
    }

    /// `<phi|phi> = sum_ij c_i c_j e^{-(a_i - a_j)^2 / 2}`.
    pub fn norm_sq(&self) -> f64 {
        let mut s = 0.0;
        for &(ci, ai) in &self.terms {
            for &(cj, aj) in &self.terms {
                s += ci * cj * (-(ai - aj).powi(2) / 2.0).exp();
            }
        }
        s
    }

    pub fn max_abs_alpha(&self) -> f64 {
        self.terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max)
    }
}

enum Integrand<'a> {
    Norm,
    Overlap(&'a CoherentCombination),
}

struct DiskIntegrator<'a> {
    series: WSeriesPair,
    map: MobiusMap,
    r_cut: f64,
    kind: Integrand<'a>,
    scale: f64,
}

impl<'a> DiskIntegrator<'a> {
    fn new(
        x: &Real,
        params: &ModelParams,
        parity: Parity,
        mut kind: Integrand<'a>,
        opts: &QuadratureOptions,
        ctx: &PrecisionContext,
    ) -> Result<Self> {
        let g = params.coupling();
        let xf = x.to_f64();
        let linear = match &kind {
            Integrand::Norm => 2.0 * g,
            Integrand::Overlap(phi0) => g + phi0.max_abs_alpha(),
        };
        // e^{-40} ~ 4e-18 of the bulk, with |x| powers from the asymptotics
        let r_cut = cutoff_radius(linear, xf.abs() + 2.0, 40.0);
        let map = MobiusMap::new(params);
        let peak_bits = (r_cut + 3.0 * g).powi(2) / std::f64::consts::LN_2;
        let bits = ctx.mantissa_bits.max(((peak_bits + 120.0) as u32).div_ceil(32) * 32);
        let sctx = PrecisionContext::new(bits, ctx.root_tol, ctx.series_tol)?;
        // Near w = 1 the pair behaves like exp(4 g^2 / (1 - w)), so the
        // coefficients grow like exp(4 g sqrt(k)); the worst node sits on the
        // imaginary axis at the cut radius.
        let a = -map.w_of_z(Complex64::new(0.0, r_cut)).norm().ln();
        let root_k = (4.0 * g + (16.0 * g * g + 4.0 * a * 60.0).sqrt()) / (2.0 * a);
        let mut n = ((root_k * root_k) as usize + 200).min(opts.max_terms);
        loop {
            let mut me = Self {
                series: w_series(x, params, parity, n, &sctx)?,
                map,
                r_cut,
                kind,
                scale: 1.0,
            };
            me.scale = me.bulk_scale()?;
            match me.probe_rim() {
                Ok(()) => return Ok(me),
                Err(e) if n >= opts.max_terms => return Err(e),
                Err(_) => {
                    n = (2 * n).min(opts.max_terms);
                    kind = me.kind;
                }
            }
        }
    }

    /// Checks the series order at the cut circle, where it is most demanding.
    fn probe_rim(&self) -> Result<()> {
        for k in 0..=8 {
            let phi = std::f64::consts::FRAC_PI_2 * (1.0 + k as f64 / 8.0);
            let z = Complex64::from_polar(self.r_cut * 0.999, phi);
            let w = self.map.w_of_z(z);
            self.series.plan(w, self.node_target(w, z))?;
        }
        Ok(())
    }

    /// `log2` of the absolute accuracy needed at a node so that its error
    /// stays near 1e-14 of the bulk.
    fn node_target(&self, w: Complex64, z: Complex64) -> f64 {
        let wt = self.map.jacobian(w) * (-z.norm_sqr()).exp();
        let base = (1e-14 * (self.scale / wt).sqrt()).log2();
        match &self.kind {
            Integrand::Norm => base,
            Integrand::Overlap(phi0) => {
                // the error enters multiplied by phi_0, measured against its norm
                let f0 = phi0.eval(z).norm().max(phi0.eval(-z).norm()) * wt.sqrt();
                base + 0.5 * phi0.norm_sq().log2() - f0.max(f64::MIN_POSITIVE).log2()
            }
        }
    }

    /// Norm integrand over the inner disk `|w| < 0.6`, a cheap proxy for the
    /// magnitude of the full integral.
    fn bulk_scale(&self) -> Result<f64> {
        let grid = DiskGrid::new(32, 64)?;
        let mut s = 0.0;
        for (w, weight) in grid.half_nodes() {
            if w.norm() > 0.6 {
                continue;
            }
            let z = self.map.z_of_w(w);
            let wt = self.map.jacobian(w) * (-z.norm_sqr()).exp();
            let (p1, p2, _) = self.series.eval_to(w, self.series.log2_mag[0] - 60.0)?;
            s += weight * wt * (p1.norm_sqr() + p2.norm_sqr());
        }
        Ok((s / std::f64::consts::PI).max(f64::MIN_POSITIVE))
    }

    fn integrate(&self, grid: &DiskGrid) -> Result<QuadratureResult> {
        let mut sum = 0.0;
        let mut comp = 0.0;
        let (mut evaluated, mut skipped, mut max_terms, mut max_bits) = (0, 0, 0, 53);
        for (w, weight) in grid.half_nodes() {
            let z = self.map.z_of_w(w);
            if z.norm() > self.r_cut {
                skipped += 1;
                continue;
            }
            let wt = self.map.jacobian(w) * (-z.norm_sqr()).exp();
            let (p1, p2, plan) = self.series.eval_to(w, self.node_target(w, z))?;
            max_terms = max_terms.max(plan.terms);
            max_bits = max_bits.max(plan.bits);
            evaluated += 1;
            let f = match &self.kind {
                Integrand::Norm => p1.norm_sqr() + p2.norm_sqr(),
                Integrand::Overlap(phi0) => (p1.conj() * phi0.eval(z) + p2.conj() * phi0.eval(-z)).re,
            };
            // Kahan summation
            let y = weight * wt * f - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        Ok(QuadratureResult {
            value: sum / std::f64::consts::PI,
            refined: None,
            nodes_evaluated: evaluated,
            nodes_skipped: skipped,
            max_terms,
            max_bits,
        })
    }

    fn run(&self, opts: &QuadratureOptions) -> Result<QuadratureResult> {
        let mut res = self.integrate(&opts.grid)?;
        if opts.check_doubling {
            let fine = self.integrate(&opts.grid.doubled()?)?;
            let scale = res.value.abs().max(fine.value.abs()).max(f64::MIN_POSITIVE);
            if (fine.value - res.value).abs() > opts.quad_tol * scale {
                return Err(Error::QuadratureNotConverged {
                    coarse: res.value,
                    fine: fine.value,
                });
            }
            res.refined = Some(fine.value);
            res.nodes_evaluated += fine.nodes_evaluated;
            res.nodes_skipped += fine.nodes_skipped;
            res.max_terms = res.max_terms.max(fine.max_terms);
            res.max_bits = res.max_bits.max(fine.max_bits);
        }
        Ok(res)
    }
}

fn check_oracle_params(params: &ModelParams) -> Result<()> {
    if params.is_decoupled() {
        return Err(Error::InvalidParameter(
            "the disk oracle needs delta > 0; the decoupled limit has closed forms".into(),
        ));
    }
    Ok(())
}

/// `(1/pi) int_left e^{-|z|^2} (|phi_1|^2 + |phi_2|^2)` evaluated on the image
/// disk. Defined for every admissible `x`; equals the squared norm of the
/// eigenstate when `x` is an eigenvalue.
pub fn norm_squared_quadrature(
    x: &Real,
    params: &ModelParams,
    parity: Parity,
    opts: &QuadratureOptions,
    ctx: &PrecisionContext,
) -> Result<QuadratureResult> {
    check_oracle_params(params)?;
    DiskIntegrator::new(x, params, parity, Integrand::Norm, opts, ctx)?.run(opts)
}

/// `<psi(x)|phi_0>` for a coherent combination `phi_0`: `phi_1` is used on
/// the left half-plane and `phi_2(-z)` on the right one, folded onto the left
/// by `z -> -z`.
pub fn overlap_quadrature(
    x: &Real,
    initial: &CoherentCombination,
    params: &ModelParams,
    parity: Parity,
    opts: &QuadratureOptions,
    ctx: &PrecisionContext,
) -> Result<QuadratureResult> {
    check_oracle_params(params)?;
    DiskIntegrator::new(x, params, parity, Integrand::Overlap(initial), opts, ctx)?.run(opts)
}

/// Mismatch of the two halves of `psi(x, z)` across the imaginary axis:
/// `max_y |phi_1(iy) - phi_2(-iy)|` over the sampled `y`. It vanishes at
/// eigenvalues; at `y = 0` it is `|G(x)|`.
pub fn jump_statistic(x: &Real, params: &ModelParams, parity: Parity, ys: &[f64], ctx: &PrecisionContext) -> Result<f64> {
    check_oracle_params(params)?;
    let map = MobiusMap::new(params);
    let y_max = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let probe = map.w_of_z(Complex64::new(0.0, y_max)).norm();
    let n = ((ctx.mantissa_bits as f64 + 200.0) / -probe.log2()) as usize + 400;
    let series = w_series(x, params, parity, n, ctx)?;
    let target = series.log2_mag[0] - ctx.mantissa_bits as f64 + 16.0;
    let mut worst = 0.0f64;
    for &y in ys {
        let w_left = map.w_of_z(Complex64::new(0.0, y));
        let pl = series.plan(w_left, target)?;
        let bits = pl.bits.max(ctx.mantissa_bits);
        // w(iy) = (s^2 - 3 - 4is)/(9 + s^2), s = y/g, formed exactly at `bits`
        let sy = Float::with_val(bits, y) / Float::with_val(bits, params.coupling());
        let s2 = Float::with_val(bits, sy.square_ref());
        let den = Float::with_val(bits, &s2 + 9u32);
        let u = Float::with_val(bits, &s2 - 3u32) / &den;
        let v = Float::with_val(bits, &sy * -4i32) / &den;
        let (r1, i1) = horner_real_coeffs_mp(&series.a1, &u, &v, pl.terms);
        let (r2, i2) = horner_real_coeffs_mp(&series.a2, &u, &Float::with_val(bits, -&v), pl.terms);
        let dr = Float::with_val(bits, &r1 - &r2);
        let di = Float::with_val(bits, &i1 - &i2);
        worst = worst.max(dr.hypot(&di).to_f64());
    }
    Ok(worst)
}

/// Spin preparation for Fock-space propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SpinState {
    /// `sigma_z = +1`
    Up,
    /// `sigma_x = +1`
    Right,
}

/// Spectrum of one sector from a truncated Fock matrix.
#[derive(Clone, Debug)]
pub struct FockSector {
    pub parity: Parity,
    pub energies: Vec<f64>,
}

impl FockSector {
    pub fn x_values(&self, params: &ModelParams) -> Vec<f64> {
        let g2 = params.coupling().powi(2);
        self.energies.iter().map(|e| e + g2).collect()
    }
}

/// Dense diagonalization of the model in a truncated Fock basis.
#[derive(Clone, Debug)]
pub struct FockReference {
    pub params: ModelParams,
    pub n_max: usize,
    pub plus: FockSector,
    pub minus: FockSector,
    full: SymmetricEigen<f64, nalgebra::Dyn>,
}

/// Sector matrix `n + p delta (-1)^n` on the diagonal, `g sqrt(n+1)` off it.
fn sector_matrix(params: &ModelParams, parity: Parity, n_max: usize) -> DMatrix<f64> {
    let g = params.coupling();
    let d = params.splitting() * parity.sign();
    let mut h = DMatrix::zeros(n_max, n_max);
    for n in 0..n_max {
        h[(n, n)] = n as f64 + if n % 2 == 0 { d } else { -d };
        if n + 1 < n_max {
            let c = g * ((n + 1) as f64).sqrt();
            h[(n, n + 1)] = c;
            h[(n + 1, n)] = c;
        }
    }
    h
}

fn sorted_eigenvalues(h: DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Index of `|n, s>` in the full space; `s = 0` is `sigma_z = +1`.
fn full_index(n: usize, s: usize) -> usize {
    2 * n + s
}

/// Truncated-Fock reference: per-sector spectra and the full spin-boson
/// eigendecomposition of `a^dag a + g sigma_x (a + a^dag) + delta sigma_z`.
pub fn truncated_fock_reference(params: &ModelParams, n_max: usize) -> Result<FockReference> {
    if n_max < 16 {
        return Err(Error::InvalidParameter(format!("n_max must be at least 16, got {n_max}")));
    }
    let g = params.coupling();
    let delta = params.splitting();
    let dim = 2 * n_max;
    let mut h = DMatrix::zeros(dim, dim);
    for n in 0..n_max {
        h[(full_index(n, 0), full_index(n, 0))] = n as f64 + delta;
        h[(full_index(n, 1), full_index(n, 1))] = n as f64 - delta;
        if n + 1 < n_max {
            let c = g * ((n + 1) as f64).sqrt();
            for s in 0..2 {
                let (i, j) = (full_index(n + 1, 1 - s), full_index(n, s));
                h[(i, j)] = c;
                h[(j, i)] = c;
            }
        }
    }
    Ok(FockReference {
        params: *params,
        n_max,
        plus: FockSector {
            parity: Parity::Plus,
            energies: sorted_eigenvalues(sector_matrix(params, Parity::Plus, n_max)),
        },
        minus: FockSector {
            parity: Parity::Minus,
            energies: sorted_eigenvalues(sector_matrix(params, Parity::Minus, n_max)),
        },
        full: SymmetricEigen::new(h),
    })
}

impl FockReference {
    pub fn sector(&self, parity: Parity) -> &FockSector {
        match parity {
            Parity::Plus => &self.plus,
            Parity::Minus => &self.minus,
        }
    }

    /// `<sigma_z(t)>` and `<sigma_x(t)>` for `|alpha> (x) spin`.
    pub fn propagate(&self, alpha: f64, spin: SpinState, times: &[f64]) -> Vec<(f64, f64)> {
        let dim = 2 * self.n_max;
        let mut psi0 = DVector::<f64>::zeros(dim);
        let mut c = (-alpha * alpha / 2.0).exp();
        for n in 0..self.n_max {
            if n > 0 {
                c *= alpha / (n as f64).sqrt();
            }
            match spin {
                SpinState::Up => psi0[full_index(n, 0)] = c,
                SpinState::Right => {
                    psi0[full_index(n, 0)] = c / 2f64.sqrt();
                    psi0[full_index(n, 1)] = c / 2f64.sqrt();
                }
            }
        }
        let v = &self.full.eigenvectors;
        let amps = v.transpose() * &psi0;
        times
            .iter()
            .map(|&t| {
                let phased: Vec<Complex64> = amps
                    .iter()
                    .zip(self.full.eigenvalues.iter())
                    .map(|(&a, &e)| a * Complex64::from_polar(1.0, -e * t))
                    .collect();
                let mut sz = 0.0;
                let mut sx = Complex64::new(0.0, 0.0);
                for n in 0..self.n_max {
                    let (iu, id) = (full_index(n, 0), full_index(n, 1));
                    let mut up = Complex64::new(0.0, 0.0);
                    let mut dn = Complex64::new(0.0, 0.0);
                    for (k, p) in phased.iter().enumerate() {
                        up += v[(iu, k)] * p;
                        dn += v[(id, k)] * p;
                    }
                    sz += up.norm_sqr() - dn.norm_sqr();
                    sx += up.conj() * dn;
                }
                (sz, 2.0 * sx.re)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::find_spectrum;

    fn reference_params() -> ModelParams {
        ModelParams::normalized(0.7, 0.25).unwrap()
    }

    fn x0(ctx: &PrecisionContext) -> Real {
        find_spectrum(&reference_params(), Parity::Plus, 0.5, ctx).unwrap().points[0]
            .x
            .clone()
    }

    #[test]
    fn mobius_fixed_points() {
        let m = MobiusMap { g: 0.7 };
        assert!(m.w_of_z(Complex64::new(-0.7, 0.0)).norm() < 1e-15);
        assert!((m.w_of_z(Complex64::new(0.7, 0.0)) + 1.0).norm() < 1e-15);
        for z in [Complex64::new(-1.3, 0.4), Complex64::new(0.2, -2.0)] {
            assert!((m.z_of_w(m.w_of_z(z)) - z).norm() < 1e-13);
        }
        for y in [-5.0, -0.3, 0.0, 2.0, 40.0] {
            let w = m.w_of_z(Complex64::new(0.0, y));
            assert!(((w - 1.0 / 3.0).norm() - 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn initial_values() {
        let ctx = PrecisionContext::default();
        let s = w_series(&x0(&ctx), &reference_params(), Parity::Plus, 10, &ctx).unwrap();
        let e = (0.49f64).exp();
        assert!((s.a2[0].to_f64() - e).abs() < 1e-15);
        assert!((s.a1[0].to_f64() - 0.25 / 0.06038398312686194 * e).abs() < 1e-12);
        assert!((s.a1[0].to_f64() - 6.758).abs() < 1e-3);
        let m = w_series(&x0(&ctx), &reference_params(), Parity::Minus, 10, &ctx).unwrap();
        assert_eq!(m.a1[0], Float::with_val(200, -&s.a1[0]));
    }

    #[test]
    fn continued_series_matches_direct_inside_circle() {
        let ctx = PrecisionContext::default();
        let p = reference_params();
        let x = x0(&ctx);
        let s = w_series(&x, &p, Parity::Plus, 600, &ctx).unwrap();
        let z = Complex64::new(-0.5, 0.0);
        let w = MobiusMap::new(&p).w_of_z(z);
        let (p1, p2, _) = s.eval_to(w, -80.0).unwrap();
        // direct: phi_1 = e^{-gz} sum K_n delta (z+g)^n/(x-n), phi_2 = e^{-gz} sum K_n (z+g)^n
        let k = crate::spectrum::k_sequence(&x, 120, &p, &ctx).unwrap();
        let zg = Float::with_val(200, 0.2);
        let mut d1 = Float::new(200);
        let mut d2 = Float::new(200);
        let mut pw = Float::with_val(200, 1u32);
        for (n, kn) in k.coeffs.iter().enumerate() {
            let t = Float::with_val(200, kn * &pw);
            d2 += &t;
            d1 += t * 0.25 / Float::with_val(200, &x - n as u32);
            pw *= &zg;
        }
        let e = (0.35f64).exp();
        assert!((p1.re - d1.to_f64() * e).abs() < 1e-15 * p1.norm());
        assert!((p2.re - d2.to_f64() * e).abs() < 1e-15 * p2.norm());
        assert!(p1.im.abs() < 1e-15 && p2.im.abs() < 1e-15);
    }

    #[test]
    fn origin_evaluation() {
        let ctx = PrecisionContext::default();
        let s = w_series(&x0(&ctx), &reference_params(), Parity::Plus, 50, &ctx).unwrap();
        let (p1, p2) = eval_continued(&s, Complex64::new(0.0, 0.0), 1e-12).unwrap();
        assert_eq!(p1.re, s.a1[0].to_f64());
        assert_eq!(p2.re, s.a2[0].to_f64());
    }

    #[test]
    fn coefficient_ratio_tends_to_one() {
        let ctx = PrecisionContext::default();
        let s = w_series(&ctx.real(2.5), &reference_params(), Parity::Plus, 800, &ctx).unwrap();
        for k in 400..800 {
            let r = (s.log2_mag[k + 1] - s.log2_mag[k]).exp2();
            assert!((0.8..=1.2).contains(&r), "k={k} r={r}");
        }
    }

    #[test]
    fn poles_rejected() {
        let ctx = PrecisionContext::default();
        assert!(matches!(
            w_series(&ctx.real(0.0), &reference_params(), Parity::Plus, 5, &ctx),
            Err(Error::PoleProximity { n: 0, .. })
        ));
        assert!(matches!(
            w_series(&ctx.real(3.0), &reference_params(), Parity::Plus, 5, &ctx),
            Err(Error::PoleProximity { n: 3, .. })
        ));
    }

    #[test]
    fn jump_small_only_at_eigenvalue() {
        let ctx = PrecisionContext::new(200, 1e-45, 1e-45).unwrap();
        let p = reference_params();
        let ys = [0.0, 0.5, 1.0, 1.5];
        let at = jump_statistic(&x0(&ctx), &p, Parity::Plus, &ys, &ctx).unwrap();
        let off = jump_statistic(&(x0(&ctx) + 0.01), &p, Parity::Plus, &ys, &ctx).unwrap();
        assert!(at < 1e-35, "{at}");
        assert!(off > 1e-3, "{off}");
    }

    #[test]
    fn fock_decoupled_ladder() {
        let p = ModelParams::normalized(0.8, 0.0).unwrap();
        let f = truncated_fock_reference(&p, 120).unwrap();
        for n in 0..=40 {
            assert!((f.plus.energies[n] - (n as f64 - 0.64)).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn fock_matches_spectrum_at_weak_coupling() {
        let p = ModelParams::normalized(0.3, 0.25).unwrap();
        let f = truncated_fock_reference(&p, 160).unwrap();
        let ctx = PrecisionContext::default();
        for parity in [Parity::Plus, Parity::Minus] {
            let s = find_spectrum(&p, parity, 10.5, &ctx).unwrap();
            let fx = f.sector(parity).x_values(&p);
            for (a, b) in s.x_values().iter().zip(&fx).take(10) {
                assert!((a - b).abs() < 1e-10, "{parity}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn fock_truncation_hazard() {
        let p = ModelParams::normalized(2.0, 0.25).unwrap();
        let coarse = truncated_fock_reference(&p, 20).unwrap();
        let fine = truncated_fock_reference(&p, 200).unwrap();
        let worst = coarse.plus.energies[..10]
            .iter()
            .zip(&fine.plus.energies)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst > 1e-3, "{worst}");
    }

    #[test]
    fn fock_propagation_starts_polarized() {
        let p = ModelParams::normalized(0.5, 0.25).unwrap();
        let f = truncated_fock_reference(&p, 60).unwrap();
        let z = f.propagate(1.0, SpinState::Up, &[0.0, 3.0]);
        let x = f.propagate(1.0, SpinState::Right, &[0.0, 3.0]);
        assert!((z[0].0 - 1.0).abs() < 1e-12 && z[0].1.abs() < 1e-12);
        assert!((x[0].1 - 1.0).abs() < 1e-12 && x[0].0.abs() < 1e-12);
        assert!(z[1].0.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn coherent_combination_norm() {
        let cat = CoherentCombination {
            terms: vec![(0.5, 1.3), (0.5, -1.3)],
        };
        // (1 + e^{-2 a^2}) / 2
        assert!((cat.norm_sq() - (1.0 + (-2.0 * 1.69f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quadrature_norm_matches_series() {
        let ctx = PrecisionContext::default();
        let p = reference_params();
        let s = find_spectrum(&p, Parity::Minus, 1.5, &ctx).unwrap();
        let rep = crate::EigenstateRep::build(&p, &s.points[1]).unwrap();
        let series = rep.norm_squared(crate::Representation::Minus).0.to_f64();
        let q = norm_squared_quadrature(&s.points[1].x, &p, Parity::Minus, &QuadratureOptions::default(), &ctx).unwrap();
        assert!((q.value / series - 1.0).abs() < 1e-12, "{} vs {series}", q.value);
        assert!((q.refined.unwrap() / q.value - 1.0).abs() < 1e-12);
        assert!(q.nodes_skipped > 0);
    }

    #[test]
    fn quadrature_overlap_matches_series() {
        let ctx = PrecisionContext::default();
        let p = reference_params();
        let s = find_spectrum(&p, Parity::Plus, 2.5, &ctx).unwrap();
        let rep = crate::EigenstateRep::build(&p, &s.points[2]).unwrap();
        let series = crate::eigenbasis::overlap_with_coherent(&rep, 2.0, crate::Representation::Plus)
            .unwrap()
            .0
            .to_f64();
        let opts = QuadratureOptions::with_grid(DiskGrid::new(64, 128).unwrap()).single_pass();
        let q = overlap_quadrature(&s.points[2].x, &CoherentCombination::coherent(2.0), &p, Parity::Plus, &opts, &ctx).unwrap();
        assert!((q.value - series).abs() < 1e-12 * series.abs(), "{} vs {series}", q.value);
    }

    #[test]
    fn decoupled_oracle_rejected() {
        let ctx = PrecisionContext::default();
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        let r = norm_squared_quadrature(&ctx.real(0.5), &p, Parity::Plus, &QuadratureOptions::default(), &ctx);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn small_grids_rejected() {
        assert!(DiskGrid::new(16, 64).is_err());
        assert!(DiskGrid::new(32, 65).is_err());
    }
}
