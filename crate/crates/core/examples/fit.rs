//! MCMC on simulated data: recovery of the base parameters and R-hat.
//!
//! Run with `cargo run --release --example fit`. Takes about a minute.

use phibp::diversity::summarize;
use phibp::inference::{rhat, run_chains, ChainConfig, Param, PriorKind};
use phibp::model::{simulate_dataset, ModelParams};
use phibp::rand_dist::RngHandle;
use phibp::special_fn::LevyParams;

fn main() -> anyhow::Result<()> {
    let base = LevyParams::new(0.7, 5.0, 1.0)?;
    let a = LevyParams::new(0.3, 1.0, 1.0)?;
    let b = LevyParams::new(0.6, 2.0, 1.0)?;
    let params = ModelParams::with_unit_samples(base, vec![a, b, a, b], &[100, 100, 100, 100])?;
    let ds = simulate_dataset(&mut RngHandle::new(3, 0), &params)?;

    let config = ChainConfig { chains: 3, steps: 4_000, burn_in: 2_000, thin: 10, keep_latent: false, ..ChainConfig::default() };
    let set = run_chains(&ds.counts, &config)?;
    println!("{:<10} {:>8} {:>8} {:>8} {:>7}", "param", "mean", "2.5%", "97.5%", "R-hat");
    for p in Param::all(4, PriorKind::Gg) {
        let v: Vec<f64> = set.records().map(|r| p.get(r)).collect();
        let s = summarize(&v).unwrap();
        println!("{:<10} {:>8.3} {:>8.3} {:>8.3} {:>7.3}", p.name(), s.mean, s.lower, s.upper, rhat(&set, p)?);
    }
    println!("single-site acceptance, chain 1: {:.2?}", set.acceptance[0]);
    Ok(())
}
