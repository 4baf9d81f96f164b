//! Splitting between same-index levels of the two parity sectors as the
//! coupling grows.
//!
//! ```text
//! cargo run --example level_gaps -- 0.25 4
//! ```

use rabi_exact::dynamics::gap_report;
use rabi_exact::{find_spectrum, ModelParams, Parity, PrecisionContext};

fn main() -> rabi_exact::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let delta = args.first().copied().unwrap_or(0.25);
    let levels = args.get(1).copied().unwrap_or(4.0) as usize;
    let ctx = PrecisionContext::default();

    print!("{:>5}", "g");
    for n in 0..levels {
        print!(" {:>12}", format!("E{n}+ - E{n}-"));
    }
    println!();
    for g in [0.1, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 2.5] {
        let params = ModelParams::normalized(g, delta)?;
        let x_max = levels as f64 + 0.5;
        let plus = find_spectrum(&params, Parity::Plus, x_max, &ctx)?;
        let minus = find_spectrum(&params, Parity::Minus, x_max, &ctx)?;
        print!("{g:>5.2}");
        for row in gap_report(&plus, &minus, levels) {
            print!(" {:>12.4e}", row.gap);
        }
        println!();
    }
    Ok(())
}
