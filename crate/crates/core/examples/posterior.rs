//! Posterior abundances from a short fit, in the gamma and GG cases.
//!
//! Run with `cargo run --release --example posterior`.

use phibp::inference::{expand_latent, run_chains, ChainConfig, PriorKind};
use phibp::model::{simulate_dataset, ModelParams};
use phibp::posterior::{sample_posterior_abundance, sample_unseen_base};
use phibp::rand_dist::RngHandle;
use phibp::special_fn::LevyParams;

fn main() -> anyhow::Result<()> {
    let base = LevyParams::new(0.5, 4.0, 1.0)?;
    let g = LevyParams::new(0.4, 1.5, 1.0)?;
    let params = ModelParams::with_unit_samples(base, vec![g, g], &[30, 10])?;
    let ds = simulate_dataset(&mut RngHandle::new(5, 0), &params)?;
    let counts = &ds.counts;

    for prior in [PriorKind::Gg, PriorKind::Gamma] {
        let config = ChainConfig { chains: 2, steps: 1_500, burn_in: 500, thin: 50, prior, ..ChainConfig::default() };
        let set = run_chains(counts, &config)?;
        let r = set.chains[0].last().unwrap();
        let x = expand_latent(counts, r.x.as_ref().unwrap());
        let draw = sample_posterior_abundance(&RngHandle::new(9, 0), counts, &r.params, &x, 2)?;
        draw.check(counts)?;
        println!("{prior:?} fit, one posterior draw:");
        for l in 0..counts.n_species().min(5) {
            println!(
                "  {:<4} n = {:?}  H = {:.3}  sigma_tilde = [{:.3}, {:.3}]",
                counts.species[l],
                counts.column(l),
                draw.h[l],
                draw.entries[0][l].sigma_tilde,
                draw.entries[1][l].sigma_tilde
            );
        }
        let unseen = sample_unseen_base(&mut RngHandle::new(10, 0), &r.params, &counts.samples, 20)?;
        let mass: f64 = unseen.iter().map(|a| a.lambda).sum();
        println!("  20 largest unseen base atoms carry mass {mass:.4}");
    }
    Ok(())
}
