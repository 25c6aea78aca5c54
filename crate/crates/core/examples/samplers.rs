//! The discrete and continuous samplers behind simulation and prediction.
//!
//! Run with `cargo run --release --example samplers`.

use phibp::rand_dist::{mtp_mean, sample_dirichlet, sample_tilted_stable, sample_zt_poisson, MtpSampler, RngHandle};
use phibp::special_fn::LevyParams;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> anyhow::Result<()> {
    let mut rng = RngHandle::new(1, 0);
    let n = 50_000;

    let zt: Vec<f64> = (0..n).map(|_| sample_zt_poisson(&mut rng, 0.7).map(|v| v as f64)).collect::<Result<_, _>>()?;
    println!("zero-truncated Poisson(0.7): mean {:.4} (exact {:.4})", mean(&zt), 0.7 / (1.0 - (-0.7f64).exp()));

    // mixed truncated Poisson: count of one block under a GG density
    let p = LevyParams::new(0.5, 2.0, 1.0)?;
    let mut mtp = MtpSampler::new(&p, 10.0)?;
    let draws: Vec<f64> = (0..n).map(|_| mtp.sample(&mut rng) as f64).collect();
    println!("MtP(GG 0.5, gamma 10): mean {:.4} (exact {:.4}), P(1) = {:.4}", mean(&draws), mtp_mean(&p, 10.0), mtp.p1());

    // E exp(-s T) = exp(-y ((tilt + s)^alpha - tilt^alpha))
    let (alpha, y, tilt, s) = (0.6, 3.0, 2.0, 1.0);
    let lt: Vec<f64> = (0..n)
        .map(|_| sample_tilted_stable(&mut rng, alpha, y, tilt).map(|t| (-s * t).exp()))
        .collect::<Result<_, _>>()?;
    let exact = (-y * ((tilt + s as f64).powf(alpha) - tilt.powf(alpha))).exp();
    println!("tilted stable Laplace transform at s = 1: {:.4} (exact {exact:.4})", mean(&lt));

    let d = sample_dirichlet(&mut rng, &[0.5, 1.0, 3.0])?;
    println!("one Dirichlet(0.5, 1, 3) draw: {d:.3?}");
    Ok(())
}
