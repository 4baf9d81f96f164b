//! Long-time coherence of sigma_x in deep strong coupling. A coherent state
//! sitting in the bottom of one displaced well (alpha = -g for the
//! sigma_x = +1 well) barely moves, the vacuum and the opposite well lose
//! coherence in steps of roughly one field period.
//!
//! ```text
//! cargo run --release --example sigma_x_protection -- 2 0.25
//! ```

use rabi_exact::dynamics::{default_x_max, time_grid, Evolution, InitialState, T0};
use rabi_exact::{ModelParams, PrecisionContext};

fn main() -> rabi_exact::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let g = args.first().copied().unwrap_or(2.0);
    let params = ModelParams::normalized(g, args.get(1).copied().unwrap_or(0.25))?;
    let ctx = PrecisionContext::default();
    let times = time_grid(40.0 * T0, 4001);

    for alpha in [0.0, g, -g] {
        let ev = Evolution::new(InitialState::sigma_x(alpha), &params, default_x_max(alpha, &params), &ctx)?;
        let s = ev.sample(&times);
        let min = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let at = |k: usize| s.values[k * 100];
        println!(
            "alpha = {alpha:+.2}: min {min:+.4}, at t/T0 = 0, 10, 20, 30, 40: {:+.4} {:+.4} {:+.4} {:+.4} {:+.4}; slowest beat {}",
            at(0),
            at(10),
            at(20),
            at(30),
            at(40),
            ev.slow_period().map_or("none".into(), |p| format!("{:.1} T0", p / T0))
        );
    }
    Ok(())
}
