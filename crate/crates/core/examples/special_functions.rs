//! Laplace exponents, their derivatives and generalized Stirling numbers.
//!
//! Run with `cargo run --example special_functions`.

use phibp::special_fn::{build_stirling_table, laplace_exponent, laplace_moment, LevyParams};

fn main() -> anyhow::Result<()> {
    let gg = LevyParams::new(0.3, 1.0, 1.0)?;
    let gamma = LevyParams::gamma(1.0, 1.0)?;
    for t in [0.5, 3.0, 100.0] {
        println!(
            "t = {t:>5}: psi_gg = {:.8}  psi_gamma = {:.8}  moment(2) = {:.8}",
            laplace_exponent(&gg, t)?,
            laplace_exponent(&gamma, t)?,
            laplace_moment(&gg, 2, t)?
        );
    }

    // S_alpha(n, k): row n = 6 at several alphas
    for alpha in [0.0, 0.5, 0.9] {
        let table = build_stirling_table(alpha, 6)?;
        let row: Vec<String> = (1..=6).map(|k| format!("{:.4}", table.ln_s(6, k).exp())).collect();
        println!("alpha {alpha}: S(6, 1..6) = [{}]", row.join(", "));
    }
    Ok(())
}
