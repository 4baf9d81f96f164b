//! Independent check of eigenstate norms: the analytically continued
//! wavefunction integrated over the unit disk after a Mobius map.
//!
//! ```text
//! cargo run --release --example quadrature_oracle -- 0.7 0.25 3
//! ```

use std::time::Instant;

use rabi_exact::eigenbasis::overlap_with_coherent;
use rabi_exact::oracle::{norm_squared_quadrature, overlap_quadrature, CoherentCombination, QuadratureOptions};
use rabi_exact::{find_spectrum, EigenstateRep, ModelParams, Parity, PrecisionContext, Representation};

fn main() -> rabi_exact::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let params = ModelParams::normalized(args.first().copied().unwrap_or(0.7), args.get(1).copied().unwrap_or(0.25))?;
    let levels = args.get(2).copied().unwrap_or(3.0) as usize;
    let ctx = PrecisionContext::default();
    let opts = QuadratureOptions::default();
    let alpha = 1.0;

    for parity in [Parity::Plus, Parity::Minus] {
        let s = find_spectrum(&params, parity, levels as f64 - 0.5, &ctx)?;
        for p in &s.points {
            let t = Instant::now();
            let st = EigenstateRep::build(&params, p)?;
            let q = norm_squared_quadrature(&p.x, &params, parity, &opts, &ctx)?;
            let series = st.norm_sq.to_f64();
            let o = overlap_quadrature(&p.x, &CoherentCombination::coherent(alpha), &params, parity, &opts, &ctx)?;
            let (os, _) = overlap_with_coherent(&st, alpha, Representation::Minus)?;
            println!(
                "{parity} m={} norm^2 series {series:.15e} quad {:.15e} | <psi|{alpha}> series {:.15e} quad {:.15e} | {} nodes, {} terms, {:.1?}",
                p.index,
                q.value,
                os.to_f64(),
                o.value,
                q.nodes_evaluated,
                q.max_terms,
                t.elapsed()
            );
        }
    }
    Ok(())
}
