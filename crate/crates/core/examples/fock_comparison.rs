//! Exact series dynamics against dense diagonalization in a truncated Fock
//! basis, as the cutoff grows.
//!
//! ```text
//! cargo run --release --example fock_comparison -- 0.3 0.25 1
//! ```

use rabi_exact::dynamics::{default_x_max, time_grid, Evolution, InitialState, T0};
use rabi_exact::oracle::{truncated_fock_reference, SpinState};
use rabi_exact::{ModelParams, PrecisionContext};

fn main() -> rabi_exact::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let params = ModelParams::normalized(args.first().copied().unwrap_or(0.3), args.get(1).copied().unwrap_or(0.25))?;
    let alpha = args.get(2).copied().unwrap_or(1.0);
    let ctx = PrecisionContext::default();
    let times = time_grid(10.0 * T0, 501);
    let x_max = default_x_max(alpha, &params);

    let sz = Evolution::new(InitialState::sigma_z(alpha), &params, x_max, &ctx)?.sample(&times);
    let sx = Evolution::new(InitialState::sigma_x(alpha), &params, x_max, &ctx)?.sample(&times);
    println!("{:>6} {:>12} {:>12}", "n_max", "dev sigma_z", "dev sigma_x");
    for n_max in [16, 24, 32, 48, 80, 160] {
        let f = truncated_fock_reference(&params, n_max)?;
        let rz = f.propagate(alpha, SpinState::Up, &times);
        let rx = f.propagate(alpha, SpinState::Right, &times);
        let dz = sz.values.iter().zip(&rz).map(|(a, b)| (a - b.0).abs()).fold(0.0, f64::max);
        let dx = sx.values.iter().zip(&rx).map(|(a, b)| (a - b.1).abs()).fold(0.0, f64::max);
        println!("{n_max:>6} {dz:>12.2e} {dx:>12.2e}");
    }
    Ok(())
}
