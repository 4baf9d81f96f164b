//! Population inversion for a coherent field with the qubit in sigma_z = +1.
//!
//! ```text
//! cargo run --release --example sigma_z_dynamics -- 0.7 0.25 2 > sz.csv
//! ```

use rabi_exact::dynamics::{default_x_max, time_grid, Evolution, InitialState, T0};
use rabi_exact::{ModelParams, PrecisionContext};

fn main() -> rabi_exact::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let params = ModelParams::normalized(args.first().copied().unwrap_or(0.7), args.get(1).copied().unwrap_or(0.25))?;
    let alpha = args.get(2).copied().unwrap_or(2.0);

    let ev = Evolution::new(
        InitialState::sigma_z(alpha),
        &params,
        default_x_max(alpha, &params),
        &PrecisionContext::default(),
    )?;
    eprintln!(
        "{} + {} levels, captured weight {:.12} / {:.12}",
        ev.plus.len(),
        ev.minus.len(),
        ev.plus.captured_weight,
        ev.minus.captured_weight
    );
    let s = ev.sample(&time_grid(20.0 * T0, 2001));
    println!("t_over_T0,sigma_z");
    for (t, v) in s.t_over_t0().zip(&s.values) {
        println!("{t:.5},{v:.12}");
    }
    Ok(())
}
