//! Regular spectrum of both parity sectors.
//!
//! ```text
//! cargo run --example spectrum -- 0.7 0.25 30
//! ```

use std::time::Instant;

use rabi_exact::{find_spectrum, ModelParams, Parity, PrecisionContext};

fn main() -> rabi_exact::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let g = args.first().copied().unwrap_or(0.7);
    let delta = args.get(1).copied().unwrap_or(0.25);
    let x_max = args.get(2).copied().unwrap_or(12.0);
    let params = ModelParams::normalized(g, delta)?;
    let ctx = PrecisionContext::default();

    for parity in [Parity::Plus, Parity::Minus] {
        let t = Instant::now();
        let s = find_spectrum(&params, parity, x_max, &ctx)?;
        println!("parity {parity}: {} levels below x = {x_max} ({:.2?})", s.len(), t.elapsed());
        for p in &s.points {
            let flag = if p.juddian { "  juddian" } else { "" };
            println!(
                "  m={:<3} x={:<24.18} E={:<24.18} |G|={:.1e} delta={:.1e}{flag}",
                p.index,
                p.x_f64(),
                p.energy_f64(),
                p.residual.to_f64().abs(),
                p.delta_achieved.to_f64()
            );
        }
        for w in &s.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
