//! Normalization of eigenstates in both shifted bases, and what goes wrong
//! at double precision for highly excited levels.
//!
//! ```text
//! cargo run --example eigenstate_norms -- 0.7 0.25
//! ```

use rabi_exact::eigenbasis::norm_series_profile;
use rabi_exact::{find_spectrum, EigenstateRep, ModelParams, Parity, PrecisionContext, Representation};

fn main() -> rabi_exact::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let params = ModelParams::normalized(args.first().copied().unwrap_or(0.7), args.get(1).copied().unwrap_or(0.25))?;

    let spectrum = find_spectrum(&params, Parity::Plus, 10.5, &PrecisionContext::default())?;
    println!(
        "{:>3} {:>24} {:>24} {:>10} {:>6}",
        "m", "norm^2 (minus basis)", "norm^2 (plus basis)", "eps", "terms"
    );
    for p in &spectrum.points {
        let st = EigenstateRep::build(&params, p)?;
        let (a, ra) = st.norm_squared(Representation::Minus);
        let (b, _) = st.norm_squared(Representation::Plus);
        println!(
            "{:>3} {:>24.16e} {:>24.16e} {:>10.1e} {:>6}",
            p.index,
            a.to_f64(),
            b.to_f64(),
            ra.eps_rel_achieved,
            ra.n_used
        );
    }

    // x_20 found and summed in double precision: the K_n recurrence turns
    // upward before the sum converges.
    let double = PrecisionContext::new(53, 1e-10, 1e-15)?;
    let x20 = find_spectrum(&params, Parity::Plus, 20.5, &double)?.points.remove(20);
    let prof = norm_series_profile(&params, &x20, 200)?;
    println!(
        "\nx_20 at 53 bits: kink at n = {:?}, best eps {:.2e}",
        prof.kink_index, prof.min_eps_rel
    );
    let st = EigenstateRep::build(&params, &x20)?;
    println!(
        "after escalation: {} bits, eps {:.2e}, {} escalation(s)",
        st.prec(),
        st.trunc.eps_rel_achieved,
        st.trunc.escalations
    );
    Ok(())
}
