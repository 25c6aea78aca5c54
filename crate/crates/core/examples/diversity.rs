//! Alpha and beta diversity over posterior draws.
//!
//! Run with `cargo run --release --example diversity`.

use phibp::diversity::{beta_matrix, shannon_alpha, summarize};
use phibp::inference::{expand_latent, run_chains, ChainConfig};
use phibp::model::{simulate_dataset, ModelParams};
use phibp::posterior::sample_posterior_abundance;
use phibp::rand_dist::RngHandle;
use phibp::special_fn::LevyParams;

fn main() -> anyhow::Result<()> {
    let base = LevyParams::new(0.6, 4.0, 1.0)?;
    let groups = vec![LevyParams::new(0.2, 1.0, 1.0)?, LevyParams::new(0.7, 2.0, 1.0)?, LevyParams::new(0.5, 0.5, 1.0)?];
    let params = ModelParams::with_unit_samples(base, groups, &[40, 40, 40])?;
    let ds = simulate_dataset(&mut RngHandle::new(21, 0), &params)?;
    let counts = &ds.counts;

    let config = ChainConfig { chains: 2, steps: 2_000, burn_in: 1_000, thin: 20, ..ChainConfig::default() };
    let set = run_chains(counts, &config)?;
    let root = RngHandle::new(22, 0);
    let mut alpha = vec![Vec::new(); 3];
    let mut beta = vec![vec![Vec::new(); 3]; 3];
    for (d, r) in set.records().enumerate() {
        let x = expand_latent(counts, r.x.as_ref().unwrap());
        let draw = sample_posterior_abundance(&root.substream(d as u64), counts, &r.params, &x, 1)?;
        let b = beta_matrix(&draw);
        for j in 0..3 {
            alpha[j].push(shannon_alpha(&draw, j));
            for v in 0..3 {
                beta[j][v].push(b[j][v]);
            }
        }
    }
    for (j, a) in alpha.iter().enumerate() {
        let s = summarize(a).unwrap();
        println!("{} Shannon: {:.3} [{:.3}, {:.3}]", counts.groups[j], s.mean, s.lower, s.upper);
    }
    println!("mean Bray-Curtis:");
    for row in &beta {
        let cells: Vec<String> = row.iter().map(|v| format!("{:.3}", summarize(v).unwrap().mean)).collect();
        println!("  {}", cells.join("  "));
    }
    Ok(())
}
