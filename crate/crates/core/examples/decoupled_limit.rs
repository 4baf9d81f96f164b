//! Zero qubit splitting: displaced oscillator levels, closed-form
//! coefficients and a conserved sigma_x.
//!
//! ```text
//! cargo run --example decoupled_limit -- 1
//! ```

use rabi_exact::dynamics::{default_x_max, time_grid, Evolution, InitialState, T0};
use rabi_exact::{find_spectrum, k_sequence, EigenstateRep, ModelParams, Parity, PrecisionContext};

fn main() -> rabi_exact::Result<()> {
    let g = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1.0);
    let params = ModelParams::normalized(g, 0.0)?;
    let ctx = PrecisionContext::default();

    let s = find_spectrum(&params, Parity::Plus, 5.5, &ctx)?;
    println!("x_n: {:?}", s.x_values());

    let ks = k_sequence(&ctx.real(0.0), 8, &params, &ctx)?;
    let mut exact = ctx.real(1.0);
    for (n, k) in ks.coeffs.iter().enumerate() {
        if n > 0 {
            exact *= 2.0 * g;
            exact /= n as u32;
        }
        println!("K_{n}(0) = {:.20e}   (2g)^n/n! = {:.20e}", k.to_f64(), exact.to_f64());
    }

    let ground = EigenstateRep::build(&params, &s.points[0])?;
    println!(
        "ground norm^2 = {:.17e}, e^(5g^2) = {:.17e}",
        ground.norm_sq.to_f64(),
        (5.0 * g * g).exp()
    );

    let alpha = 1.0;
    let ev = Evolution::new(InitialState::sigma_x(alpha), &params, default_x_max(alpha, &params), &ctx)?;
    let v = ev.sample(&time_grid(40.0 * T0, 1001)).values;
    let dev = v.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    println!("sigma_x over 40 T0 stays within {dev:.1e} of 1");
    Ok(())
}
