//! Qubit dynamics from the spectral decomposition of the two parity sectors.
//!
//! The prepared state is split into its components in `H_+` and `H_-`, each
//! a combination of coherent states. Expanding those in exact eigenstates
//! turns every expectation value into a finite cosine sum, so samples are
//! computed independently of each other at any time.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rug::Float;
use serde::Serialize;

use crate::eigenbasis::{cross_parity_overlap, overlap_with_coherent, reflection_matrix_element, EigenstateRep, Representation};
use crate::error::{Error, Result};
use crate::numerics::PrecisionContext;
use crate::oracle::CoherentCombination;
use crate::spectrum::{find_spectrum, ModelParams, Parity, Spectrum};

/// Fundamental period `2 pi / omega` in units of `1/omega`.
pub const T0: f64 = 2.0 * PI;

/// Per-state weight below which an eigenstate is dropped.
pub const WEIGHT_FLOOR: f64 = 1e-14;

/// Cumulative weight every non-empty sector must reach.
pub const REQUIRED_WEIGHT: f64 = 1.0 - 1e-8;

/// Preparations with closed-form sector components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum InitialKind {
    /// `|alpha> (x) |sigma_z = +1>`
    SigmaZProduct,
    /// `|alpha> (x) |sigma_x = +1>`
    SigmaXProduct,
    /// Equal superposition of the two cat states that are exact `Delta = 0`
    /// eigenstates; only defined for `alpha = g`.
    CatCombination,
}

/// Which spin component the preparation is an eigenstate of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Observable {
    SigmaZ,
    SigmaX,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InitialState {
    pub kind: InitialKind,
    pub alpha: f64,
}

impl InitialState {
    pub fn new(kind: InitialKind, alpha: f64, params: &ModelParams) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
        }
        if kind == InitialKind::CatCombination {
            let g = params.coupling();
            if (alpha - g).abs() > 1e-12 * g.max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "the cat combination is defined for alpha = g = {g}, got {alpha}"
                )));
            }
        }
        Ok(Self { kind, alpha })
    }

    pub fn sigma_z(alpha: f64) -> Self {
        Self {
            kind: InitialKind::SigmaZProduct,
            alpha,
        }
    }

    pub fn sigma_x(alpha: f64) -> Self {
        Self {
            kind: InitialKind::SigmaXProduct,
            alpha,
        }
    }

    pub fn cat(params: &ModelParams) -> Self {
        Self {
            kind: InitialKind::CatCombination,
            alpha: params.coupling(),
        }
    }

    pub fn observable(&self) -> Observable {
        match self.kind {
            InitialKind::SigmaZProduct => Observable::SigmaZ,
            InitialKind::SigmaXProduct | InitialKind::CatCombination => Observable::SigmaX,
        }
    }

    /// Bargmann function of the component in one sector.
    pub fn sector_component(&self, parity: Parity) -> CoherentCombination {
        let a = self.alpha;
        let terms = match (self.kind, parity) {
            // e^{-a^2/2} cosh(a z) and e^{-a^2/2} sinh(a z)
            (InitialKind::SigmaZProduct, Parity::Plus) => vec![(0.5, a), (0.5, -a)],
            (InitialKind::SigmaZProduct, Parity::Minus) => vec![(0.5, a), (-0.5, -a)],
            // the cat pair recombines into |g> (x) |sigma_x = +1>
            (InitialKind::SigmaXProduct | InitialKind::CatCombination, _) => vec![(std::f64::consts::FRAC_1_SQRT_2, a)],
        };
        CoherentCombination { terms }
    }
}

/// One retained eigenstate of a sector decomposition.
#[derive(Clone, Debug, Serialize)]
pub struct DecompositionEntry {
    pub index: usize,
    pub x: f64,
    pub energy: f64,
    /// `<psi_m|phi> / <psi_m|psi_m>`
    pub coeff: f64,
    pub norm_sq: f64,
    /// `|<psi_m|phi>|^2 / (<psi_m|psi_m> <phi|phi>)`
    pub weight: f64,
}

impl DecompositionEntry {
    /// Overlap with the normalized eigenstate, `c_m sqrt(norm_sq_m)`.
    pub fn amplitude(&self) -> f64 {
        self.coeff * self.norm_sq.sqrt()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorDecomposition {
    pub parity: Parity,
    pub entries: Vec<DecompositionEntry>,
    pub captured_weight: f64,
    /// `<phi|phi>` of the sector component.
    pub component_norm_sq: f64,
    /// States that fell under the per-state weight floor.
    pub dropped: usize,
    #[serde(skip)]
    pub states: Vec<EigenstateRep>,
}

impl SectorDecomposition {
    fn empty(parity: Parity) -> Self {
        Self {
            parity,
            entries: Vec::new(),
            captured_weight: 1.0,
            component_norm_sq: 0.0,
            dropped: 0,
            states: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    fn amplitudes(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.entries.iter().map(DecompositionEntry::amplitude))
    }

    fn energies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.energy).collect()
    }
}

/// `x_max` expected to hold the weight of a coherent state of amplitude
/// `alpha`. Seen from either well the state is displaced by at most
/// `|alpha| + g`, so its level populations are close to Poissonian with mean
/// `(|alpha| + g)^2`; the bound covers that tail down to 1e-12 with a margin.
pub fn default_x_max(alpha: f64, params: &ModelParams) -> f64 {
    let g = params.coupling();
    let mean = (alpha.abs() + g).powi(2);
    let mut p = (-mean).exp();
    let mut tail = 1.0 - p;
    let mut n = 0usize;
    while tail > 1e-12 && n < 100_000 {
        n += 1;
        p *= mean / n as f64;
        tail -= p;
    }
    (alpha * alpha + g * g + 20.0).max(n as f64 + 10.0)
}

/// Expands a sector component over eigenstates of `spectrum`.
pub fn decompose_sector(component: &CoherentCombination, params: &ModelParams, spectrum: &Spectrum) -> Result<SectorDecomposition> {
    let parity = spectrum.parity;
    let phi_norm = component.norm_sq();
    if phi_norm < 1e-300 {
        return Ok(SectorDecomposition::empty(parity));
    }
    let mut entries = Vec::new();
    let mut states = Vec::new();
    let mut dropped = 0;
    let mut captured = 0.0;
    for point in &spectrum.points {
        let state = EigenstateRep::build(params, point)?;
        let mut ov = Float::new(state.prec());
        for &(c, a) in &component.terms {
            let (v, _) = overlap_with_coherent(&state, a, Representation::Minus)?;
            ov += v * c;
        }
        let norm = state.norm_sq.clone();
        let weight = Float::with_val(state.prec(), ov.square_ref()) / &norm / phi_norm;
        let weight = weight.to_f64();
        if weight <= WEIGHT_FLOOR {
            dropped += 1;
            continue;
        }
        captured += weight;
        entries.push(DecompositionEntry {
            index: point.index,
            x: point.x_f64(),
            energy: point.energy_f64(),
            coeff: (ov / &norm).to_f64(),
            norm_sq: norm.to_f64(),
            weight,
        });
        states.push(state);
    }
    if captured < REQUIRED_WEIGHT {
        return Err(Error::InsufficientWeight {
            parity,
            weight: captured,
            required: REQUIRED_WEIGHT,
        });
    }
    Ok(SectorDecomposition {
        parity,
        entries,
        captured_weight: captured,
        component_norm_sq: phi_norm,
        dropped,
        states,
    })
}

/// Components of `state` in `H_+` and `H_-`, expanded over all eigenstates
/// with `x < x_max`.
pub fn decompose(
    state: &InitialState,
    params: &ModelParams,
    x_max: f64,
    ctx: &PrecisionContext,
) -> Result<(SectorDecomposition, SectorDecomposition)> {
    let plus = find_spectrum(params, Parity::Plus, x_max, ctx)?;
    let minus = find_spectrum(params, Parity::Minus, x_max, ctx)?;
    decompose_with(state, params, &plus, &minus)
}

pub fn decompose_with(
    state: &InitialState,
    params: &ModelParams,
    plus: &Spectrum,
    minus: &Spectrum,
) -> Result<(SectorDecomposition, SectorDecomposition)> {
    Ok((
        decompose_sector(&state.sector_component(Parity::Plus), params, plus)?,
        decompose_sector(&state.sector_component(Parity::Minus), params, minus)?,
    ))
}

/// `<psi_m|T|psi_n> / sqrt(N_m N_n)` over the retained states of a sector.
pub fn reflection_block(dec: &SectorDecomposition) -> Result<DMatrix<f64>> {
    let n = dec.len();
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (a, b) = (&dec.states[i], &dec.states[j]);
            let (v, _) = reflection_matrix_element(a, b)?;
            let s = (dec.entries[i].norm_sq * dec.entries[j].norm_sq).sqrt();
            t[(i, j)] = v.to_f64() / s;
            t[(j, i)] = t[(i, j)];
        }
    }
    Ok(t)
}

/// `<psi_m^+|psi_n^-> / sqrt(N_m N_n)` over the retained states.
pub fn cross_block(plus: &SectorDecomposition, minus: &SectorDecomposition) -> Result<DMatrix<f64>> {
    let mut o = DMatrix::zeros(plus.len(), minus.len());
    for i in 0..plus.len() {
        for j in 0..minus.len() {
            let (v, _) = cross_parity_overlap(&plus.states[i], &minus.states[j])?;
            let s = (plus.entries[i].norm_sq * minus.entries[j].norm_sq).sqrt();
            o[(i, j)] = v.to_f64() / s;
        }
    }
    Ok(o)
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesDiagnostics {
    pub min_captured_weight: f64,
    pub max_abs: f64,
    pub value_at_zero: f64,
}

/// Samples of an observable on a time grid in units of `1/omega`.
#[derive(Clone, Debug, Serialize)]
pub struct TimeSeries {
    pub observable: Observable,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub diagnostics: SeriesDiagnostics,
}

impl TimeSeries {
    pub fn t_over_t0(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.iter().map(|t| t / T0)
    }

    fn build(observable: Observable, times: &[f64], f: impl Fn(f64) -> f64, min_weight: f64) -> Self {
        let values: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            observable,
            times: times.to_vec(),
            values,
            diagnostics: SeriesDiagnostics {
                min_captured_weight: min_weight,
                max_abs,
                value_at_zero: f(0.0),
            },
        }
    }
}

/// `n` equally spaced samples on `[0, t_max]`.
pub fn time_grid(t_max: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect()
}

fn phased(amps: &DVector<f64>, energies: &[f64], t: f64) -> DVector<Complex64> {
    DVector::from_iterator(
        amps.len(),
        amps.iter().zip(energies).map(|(&a, &e)| a * Complex64::from_polar(1.0, -e * t)),
    )
}

/// `Re u^dag M v` for real `M`.
fn bilinear_re(u: &DVector<Complex64>, m: &DMatrix<f64>, v: &DVector<Complex64>) -> f64 {
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..m.ncols() {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..m.nrows() {
            col += u[i].conj() * m[(i, j)];
        }
        s += col * v[j];
    }
    s.re
}

fn sector_q(dec: &SectorDecomposition, t_block: &DMatrix<f64>, t: f64) -> f64 {
    if dec.is_empty() {
        return 0.0;
    }
    let u = phased(&dec.amplitudes(), &dec.energies(), t);
    bilinear_re(&u, t_block, &u)
}

/// `<sigma_z(t)> = <phi_+(t)|T|phi_+(t)> - <phi_-(t)|T|phi_-(t)>`.
pub fn sigma_z_t(
    plus: &SectorDecomposition,
    minus: &SectorDecomposition,
    t_plus: &DMatrix<f64>,
    t_minus: &DMatrix<f64>,
    times: &[f64],
) -> TimeSeries {
    let f = |t: f64| sector_q(plus, t_plus, t) - sector_q(minus, t_minus, t);
    TimeSeries::build(Observable::SigmaZ, times, f, plus.captured_weight.min(minus.captured_weight))
}

/// `<sigma_x(t)> = 2 Re <phi_+(t)|phi_-(t)>`.
pub fn sigma_x_t(plus: &SectorDecomposition, minus: &SectorDecomposition, cross: &DMatrix<f64>, times: &[f64]) -> TimeSeries {
    let (ap, am) = (plus.amplitudes(), minus.amplitudes());
    let (ep, em) = (plus.energies(), minus.energies());
    let f = |t: f64| 2.0 * bilinear_re(&phased(&ap, &ep, t), cross, &phased(&am, &em, t));
    TimeSeries::build(Observable::SigmaX, times, f, plus.captured_weight.min(minus.captured_weight))
}

/// Decomposition plus the matrix-element blocks its observable needs.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub state: InitialState,
    pub params: ModelParams,
    pub plus: SectorDecomposition,
    pub minus: SectorDecomposition,
    blocks: Blocks,
}

#[derive(Clone, Debug)]
enum Blocks {
    Reflection(DMatrix<f64>, DMatrix<f64>),
    Cross(DMatrix<f64>),
}

impl Evolution {
    pub fn new(state: InitialState, params: &ModelParams, x_max: f64, ctx: &PrecisionContext) -> Result<Self> {
        let (plus, minus) = decompose(&state, params, x_max, ctx)?;
        Self::from_decomposition(state, params, plus, minus)
    }

    pub fn from_decomposition(
        state: InitialState,
        params: &ModelParams,
        plus: SectorDecomposition,
        minus: SectorDecomposition,
    ) -> Result<Self> {
        let blocks = match state.observable() {
            Observable::SigmaZ => Blocks::Reflection(reflection_block(&plus)?, reflection_block(&minus)?),
            Observable::SigmaX => Blocks::Cross(cross_block(&plus, &minus)?),
        };
        Ok(Self {
            state,
            params: *params,
            plus,
            minus,
            blocks,
        })
    }

    pub fn observable(&self) -> Observable {
        self.state.observable()
    }

    /// Samples at `times` in units of `1/omega`.
    pub fn sample(&self, times: &[f64]) -> TimeSeries {
        match &self.blocks {
            Blocks::Reflection(tp, tm) => sigma_z_t(&self.plus, &self.minus, tp, tm, times),
            Blocks::Cross(o) => sigma_x_t(&self.plus, &self.minus, o, times),
        }
    }

    /// Slowest beat among the dominant frequency components of the signal,
    /// `2 pi / min |dE|`; `None` when the dominant ones are all static.
    pub fn slow_period(&self) -> Option<f64> {
        let mut comps: Vec<(f64, f64)> = Vec::new();
        match &self.blocks {
            Blocks::Reflection(tp, tm) => {
                for (dec, t) in [(&self.plus, tp), (&self.minus, tm)] {
                    let a = dec.amplitudes();
                    for i in 0..dec.len() {
                        for j in 0..dec.len() {
                            comps.push((dec.entries[i].energy - dec.entries[j].energy, (a[i] * a[j] * t[(i, j)]).abs()));
                        }
                    }
                }
            }
            Blocks::Cross(o) => {
                let (ap, am) = (self.plus.amplitudes(), self.minus.amplitudes());
                for i in 0..self.plus.len() {
                    for j in 0..self.minus.len() {
                        comps.push((
                            self.plus.entries[i].energy - self.minus.entries[j].energy,
                            (ap[i] * am[j] * o[(i, j)]).abs(),
                        ));
                    }
                }
            }
        }
        let top = comps.iter().fold(0.0f64, |m, c| m.max(c.1));
        comps
            .iter()
            .filter(|c| c.1 >= 1e-3 * top && c.0.abs() > 1e-12)
            .map(|c| c.0.abs())
            .min_by(f64::total_cmp)
            .map(|w| 2.0 * PI / w)
    }
}

/// Per-level parity gap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    /// `E_n^+ - E_n^-`
    pub gap: f64,
    pub x_plus_minus_n: f64,
    pub x_minus_minus_n: f64,
}

/// Gaps between levels of equal index in the two sectors, for `n < n_max`.
pub fn gap_report(plus: &Spectrum, minus: &Spectrum, n_max: usize) -> Vec<GapRow> {
    plus.points
        .iter()
        .zip(&minus.points)
        .take(n_max)
        .enumerate()
        .map(|(n, (p, m))| GapRow {
            n,
            gap: p.energy_f64() - m.energy_f64(),
            x_plus_minus_n: p.x_f64() - n as f64,
            x_minus_minus_n: m.x_f64() - n as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PrecisionContext {
        PrecisionContext::default()
    }

    #[test]
    fn sigma_z_components_norms() {
        let s = InitialState::sigma_z(1.3);
        let (p, m) = (s.sector_component(Parity::Plus), s.sector_component(Parity::Minus));
        assert!((p.norm_sq() + m.norm_sq() - 1.0).abs() < 1e-15);
        assert!((p.norm_sq() - m.norm_sq() - (-2.0 * 1.69f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cat_requires_alpha_equal_g() {
        let p = ModelParams::normalized(2.0, 0.25).unwrap();
        assert!(InitialState::new(InitialKind::CatCombination, 1.9, &p).is_err());
        assert!(InitialState::new(InitialKind::CatCombination, 2.0, &p).is_ok());
        assert!(InitialState::new(InitialKind::SigmaXProduct, f64::NAN, &p).is_err());
    }

    #[test]
    fn vacuum_sigma_z_has_empty_minus_sector() {
        let p = ModelParams::normalized(0.7, 0.25).unwrap();
        let (plus, minus) = decompose(&InitialState::sigma_z(0.0), &p, 20.0, &ctx()).unwrap();
        assert!(minus.is_empty());
        assert!(plus.captured_weight > REQUIRED_WEIGHT);
        assert!(plus.captured_weight < 1.0 + 1e-10);
    }

    #[test]
    fn decoupled_overlaps_are_displaced_vacuum() {
        // at Delta = 0 the eigenstates are displaced Fock states |n, -g>, so
        // |<n,-g|alpha>|^2 is Poissonian with mean (alpha + g)^2
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        let alpha = 0.5;
        let (plus, _) = decompose(&InitialState::sigma_x(alpha), &p, 25.0, &ctx()).unwrap();
        let mean: f64 = (alpha + 1.0f64).powi(2);
        let mut pois = (-mean).exp();
        for (n, e) in plus.entries.iter().enumerate() {
            if n > 0 {
                pois *= mean / n as f64;
            }
            assert_eq!(e.index, n);
            assert!((e.weight - pois).abs() < 1e-13, "n={n}: {} vs {pois}", e.weight);
        }
    }

    #[test]
    fn insufficient_weight_reported() {
        let p = ModelParams::normalized(0.7, 0.25).unwrap();
        let r = decompose(&InitialState::sigma_z(2.0), &p, 3.0, &ctx());
        assert!(matches!(r, Err(Error::InsufficientWeight { weight, .. }) if weight < 0.9));
    }

    #[test]
    fn sigma_z_starts_at_one_and_is_even() {
        let p = ModelParams::normalized(0.7, 0.25).unwrap();
        let ev = Evolution::new(InitialState::sigma_z(1.0), &p, 25.0, &ctx()).unwrap();
        let s = ev.sample(&[0.0, 1.7, -1.7]);
        assert!((s.values[0] - 1.0).abs() < 1e-8);
        assert!((s.values[1] - s.values[2]).abs() < 1e-13);
        assert!(s.diagnostics.max_abs <= 1.0 + 1e-9);
    }

    #[test]
    fn sigma_x_conserved_when_decoupled() {
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        let ev = Evolution::new(InitialState::sigma_x(1.0), &p, 26.0, &ctx()).unwrap();
        let s = ev.sample(&time_grid(5.0 * T0, 101));
        for v in &s.values {
            assert!((v - 1.0).abs() < 1e-10, "{v}");
        }
        assert_eq!(ev.slow_period(), None);
    }

    #[test]
    fn gaps_vanish_when_decoupled() {
        let p = ModelParams::normalized(1.0, 0.0).unwrap();
        let a = find_spectrum(&p, Parity::Plus, 8.0, &ctx()).unwrap();
        let b = find_spectrum(&p, Parity::Minus, 8.0, &ctx()).unwrap();
        let rows = gap_report(&a, &b, 8);
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.gap == 0.0));
    }

    #[test]
    fn default_window_covers_heuristic() {
        let p = ModelParams::normalized(2.0, 0.25).unwrap();
        assert!(default_x_max(2.0, &p) > 40.0);
        let q = ModelParams::normalized(0.3, 0.25).unwrap();
        assert_eq!(default_x_max(0.0, &q), 0.09 + 20.0);
    }

    #[test]
    fn grid_endpoints() {
        let g = time_grid(2.0, 5);
        assert_eq!(g, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }
}
